//! Matrix exponential of a generator by uniformization.
//!
//! With `Λ = max_i q_i` and `K = I + Q/Λ`, `e^{Qs} = Σ_n Pois(n; Λs) K^n`.
//! The series is only ever summed for `Λs <= 1` and truncated once the
//! Poisson tail drops below [`TAIL_MASS`]; longer horizons are composed from
//! cached squarings of `e^{Q/Λ}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Poisson tail mass at which the series is truncated.
pub const TAIL_MASS: f64 = 1e-12;
/// Hard cap on series terms.
pub const MAX_TERMS: usize = 1_000;
const MAX_SQUARINGS: usize = 64;

#[derive(Debug, Clone)]
pub struct Uniformizer {
    rate: f64,
    step: f64,
    kernel: DMatrix<f64>,
    /// `powers[k] = e^{Q · step · 2^k}`, truncated once converged.
    powers: Vec<DMatrix<f64>>,
    stationary: Vec<f64>,
}

impl Uniformizer {
    pub fn new(generator: &DMatrix<f64>, stationary: &[f64]) -> Result<Self> {
        let n = generator.nrows();
        let rate = (0..n).map(|i| -generator[(i, i)]).fold(0.0, f64::max);
        if rate == 0.0 {
            return Ok(Uniformizer {
                rate,
                step: f64::INFINITY,
                kernel: DMatrix::identity(n, n),
                powers: Vec::new(),
                stationary: stationary.to_vec(),
            });
        }
        let kernel = DMatrix::identity(n, n) + generator / rate;
        let step = 1.0 / rate;
        let mut u = Uniformizer {
            rate,
            step,
            kernel,
            powers: Vec::new(),
            stationary: stationary.to_vec(),
        };
        let mut p = u.short_matrix(step)?;
        for _ in 0..MAX_SQUARINGS {
            let mut next = &p * &p;
            normalize_rows(&mut next);
            let converged = (&next - &p).abs().max() < 1e-16;
            u.powers.push(p);
            p = next;
            if converged {
                break;
            }
        }
        Ok(u)
    }

    pub fn n_states(&self) -> usize {
        self.kernel.nrows()
    }

    /// The uniformization rate `Λ`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn poisson_weights(&self, s: f64) -> Result<Vec<f64>> {
        let a = self.rate * s;
        let mut w = (-a).exp();
        let mut weights = vec![w];
        let mut mass = w;
        let mut n = 0usize;
        while 1.0 - mass >= TAIL_MASS {
            n += 1;
            if n > MAX_TERMS {
                return Err(Error::NumericalFailure(format!(
                    "uniformization series did not converge for Λt = {a}"
                )));
            }
            w *= a / n as f64;
            weights.push(w);
            mass += w;
        }
        // hand the truncated tail back so rows stay stochastic under squaring
        for w in weights.iter_mut() {
            *w /= mass;
        }
        Ok(weights)
    }

    fn short_matrix(&self, s: f64) -> Result<DMatrix<f64>> {
        let n = self.n_states();
        let weights = self.poisson_weights(s)?;
        let mut term = DMatrix::identity(n, n);
        let mut acc = &term * weights[0];
        for &w in &weights[1..] {
            term = &term * &self.kernel;
            acc += &term * w;
        }
        Ok(acc)
    }

    fn short_row(&self, i: usize, s: f64, out: &mut [f64]) {
        let n = self.n_states();
        // weights for s <= step always converge well inside MAX_TERMS
        let weights = self.poisson_weights(s).expect("short-horizon series converges");
        let mut term = vec![0.0; n];
        term[i] = 1.0;
        let mut next = vec![0.0; n];
        for (o, t) in out.iter_mut().zip(&term) {
            *o = weights[0] * t;
        }
        for &w in &weights[1..] {
            vec_mat(&term, &self.kernel, &mut next);
            std::mem::swap(&mut term, &mut next);
            for (o, t) in out.iter_mut().zip(&term) {
                *o += w * t;
            }
        }
    }

    fn split(&self, t: f64) -> (f64, Option<u64>) {
        let whole = (t / self.step).floor();
        if whole >= u64::MAX as f64 {
            return (0.0, None);
        }
        let n = whole as u64;
        let rem = (t - whole * self.step).max(0.0);
        (rem.min(self.step), Some(n))
    }

    fn power(&self, bit: usize) -> &DMatrix<f64> {
        &self.powers[bit.min(self.powers.len() - 1)]
    }

    /// Row `i` of `e^{Qt}`.
    pub fn row_into(&self, i: usize, t: f64, out: &mut [f64]) {
        if self.rate == 0.0 {
            out.fill(0.0);
            out[i] = 1.0;
            return;
        }
        if t.is_infinite() {
            out.copy_from_slice(&self.stationary);
            return;
        }
        let (rem, whole) = self.split(t);
        let Some(mut n) = whole else {
            out.copy_from_slice(&self.stationary);
            return;
        };
        self.short_row(i, rem, out);
        let mut scratch = vec![0.0; out.len()];
        let mut bit = 0;
        while n > 0 {
            if n & 1 == 1 {
                vec_mat(out, self.power(bit), &mut scratch);
                out.copy_from_slice(&scratch);
            }
            n >>= 1;
            bit += 1;
        }
    }

    pub fn row(&self, i: usize, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        self.row_into(i, t, &mut out);
        out
    }

    /// `e^{Qt}`.
    pub fn matrix(&self, t: f64) -> DMatrix<f64> {
        let n = self.n_states();
        if self.rate == 0.0 {
            return DMatrix::identity(n, n);
        }
        let (rem, whole) = self.split(t);
        let Some(mut k) = whole.filter(|_| t.is_finite()) else {
            return DMatrix::from_fn(n, n, |_, j| self.stationary[j]);
        };
        let mut acc = self.short_matrix(rem).expect("short-horizon series converges");
        let mut bit = 0;
        while k > 0 {
            if k & 1 == 1 {
                acc = &acc * self.power(bit);
            }
            k >>= 1;
            bit += 1;
        }
        acc
    }
}

fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
}

fn vec_mat(v: &[f64], m: &DMatrix<f64>, out: &mut [f64]) {
    let n = v.len();
    for (j, o) in out.iter_mut().enumerate() {
        let col = m.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += v[i] * col[i];
        }
        *o = s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-a, a, b, -b])
    }

    #[test]
    fn matches_two_state_closed_form() {
        let u = Uniformizer::new(&gen2(2.0, 1.0), &[1.0 / 3.0, 2.0 / 3.0]).unwrap();
        for t in [0.0f64, 0.3, 1.0, 7.25, 40.0, 1e4] {
            let want = 1.0 / 3.0 + 2.0 / 3.0 * (-3.0 * t).exp();
            assert!((u.row(0, t)[0] - want).abs() < 1e-13, "t = {t}");
            assert!((u.matrix(t)[(0, 0)] - want).abs() < 1e-13, "t = {t}");
        }
    }

    #[test]
    fn huge_and_infinite_times_reach_stationarity() {
        let u = Uniformizer::new(&gen2(1.0, 1.0), &[0.5, 0.5]).unwrap();
        for t in [1e9, 1e300, f64::INFINITY] {
            let r = u.row(1, t);
            assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_state_is_identity() {
        let u = Uniformizer::new(&DMatrix::zeros(1, 1), &[1.0]).unwrap();
        assert_eq!(u.row(0, 5.0), vec![1.0]);
        assert_eq!(u.matrix(5.0)[(0, 0)], 1.0);
    }
}

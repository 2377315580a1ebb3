//! Spectral form of transition probabilities for time-reversible chains.
//!
//! For a reversible chain `Π^{1/2} Q Π^{-1/2}` is symmetric, so it factors as
//! `U diag(0, -d_2, ..., -d_S) Uᵀ` and
//!
//! ```text
//! P_ij(t) = sqrt(π_j / π_i) Σ_k u_ki u_kj exp(-d_k t)
//! ```
//!
//! where `u_ki` is entry `(k, i)` of `Uᵀ`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance on the zero decay rate.
pub const ZERO_DECAY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    decay_rates: Vec<f64>,
    /// Row `k` holds the `k`-th orthonormal eigenvector.
    vectors: DMatrix<f64>,
    sqrt_pi: Vec<f64>,
}

impl SpectralDecomposition {
    /// Decomposes the symmetrized generator of a reversible chain. The caller
    /// is responsible for checking detailed balance first.
    pub fn new(generator: &DMatrix<f64>, pi: &[f64]) -> Result<Self> {
        let n = generator.nrows();
        let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
        let mut sym = DMatrix::from_fn(n, n, |i, j| sqrt_pi[i] * generator[(i, j)] / sqrt_pi[j]);
        // detailed balance holds only to rounding; enforce exact symmetry
        let t = sym.transpose();
        sym = (sym + t) * 0.5;

        let eig = SymmetricEigen::try_new(sym, 1e-15, 100_000)
            .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        // eigenvalues are -d_k; sort by increasing decay rate
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut decay_rates: Vec<f64> = order.iter().map(|&k| -eig.eigenvalues[k]).collect();
        let scale = decay_rates.iter().fold(1.0f64, |m, d| m.max(d.abs()));
        if decay_rates[0].abs() > ZERO_DECAY_TOL * scale {
            return Err(Error::NumericalFailure(format!(
                "smallest decay rate {:e} is not zero",
                decay_rates[0]
            )));
        }
        if n > 1 && decay_rates[1] <= ZERO_DECAY_TOL * scale {
            return Err(Error::NumericalFailure("zero decay rate is not simple".into()));
        }
        decay_rates[0] = 0.0;

        let mut vectors = DMatrix::zeros(n, n);
        for (row, &k) in order.iter().enumerate() {
            let col = eig.eigenvectors.column(k);
            // fix the sign so that the stationary vector is +sqrt(π)
            let sign = if row == 0 && col.iter().zip(&sqrt_pi).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                -1.0
            } else {
                1.0
            };
            for i in 0..n {
                vectors[(row, i)] = sign * col[i];
            }
        }
        Ok(SpectralDecomposition {
            decay_rates,
            vectors,
            sqrt_pi,
        })
    }

    pub fn n_states(&self) -> usize {
        self.sqrt_pi.len()
    }

    /// `d_1 = 0 < d_2 <= ... <= d_S`.
    pub fn decay_rates(&self) -> &[f64] {
        &self.decay_rates
    }

    /// Entry `u_ki`: component `i` of eigenvector `k`.
    pub fn u(&self, k: usize, i: usize) -> f64 {
        self.vectors[(k, i)]
    }

    /// The matrix `Uᵀ` (eigenvectors as rows).
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn sqrt_pi(&self) -> &[f64] {
        &self.sqrt_pi
    }

    /// Mixing scale `d_2` (zero for a one-state chain).
    pub fn spectral_gap(&self) -> f64 {
        self.decay_rates.get(1).copied().unwrap_or(0.0)
    }

    /// `sqrt(π_j / π_i) · u_ki · u_kj`, the weight of `exp(-d_k t)` in `P_ij(t)`.
    #[inline]
    pub fn weight(&self, k: usize, i: usize, j: usize) -> f64 {
        self.sqrt_pi[j] / self.sqrt_pi[i] * self.vectors[(k, i)] * self.vectors[(k, j)]
    }

    pub fn prob(&self, i: usize, j: usize, t: f64) -> f64 {
        let ratio = self.sqrt_pi[j] / self.sqrt_pi[i];
        let sum: f64 = (0..self.n_states())
            .map(|k| self.vectors[(k, i)] * self.vectors[(k, j)] * decay(self.decay_rates[k], t))
            .sum();
        ratio * sum
    }

    pub fn row_into(&self, i: usize, t: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.prob(i, j, t);
        }
    }

    /// `P_i·(t) - π`, summed without the stationary term.
    pub fn transient_into(&self, i: usize, t: f64, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (1..self.n_states())
                .map(|k| self.weight(k, i, j) * decay(self.decay_rates[k], t))
                .sum();
        }
    }

    /// `∫_lo^hi P_ij(t) e^{-μt} dt` in closed form. `hi` may be infinite when
    /// `μ > 0`.
    pub fn discounted_integral(&self, i: usize, j: usize, mu: f64, lo: f64, hi: f64) -> f64 {
        (0..self.n_states())
            .map(|k| self.weight(k, i, j) * exp_window(self.decay_rates[k] + mu, lo, hi))
            .sum()
    }

    /// Checks `UᵀU = I` and the reconstruction of the symmetrized generator.
    pub fn reconstruction_error(&self, generator: &DMatrix<f64>) -> (f64, f64) {
        let n = self.n_states();
        let u = self.vectors.transpose();
        let ortho = (&self.vectors * &u - DMatrix::<f64>::identity(n, n)).abs().max();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            self.decay_rates.iter().map(|d| -d),
        ));
        let sym = DMatrix::from_fn(n, n, |i, j| self.sqrt_pi[i] * generator[(i, j)] / self.sqrt_pi[j]);
        let recon = (&u * d * &self.vectors - sym).abs().max();
        (ortho, recon)
    }
}

#[inline]
fn decay(rate: f64, t: f64) -> f64 {
    if rate == 0.0 {
        1.0
    } else {
        (-rate * t).exp()
    }
}

/// `∫_lo^hi e^{-c t} dt` for `c >= 0`; infinite when `c = 0` and `hi = ∞`.
#[inline]
pub(crate) fn exp_window(c: f64, lo: f64, hi: f64) -> f64 {
    if c == 0.0 {
        return hi - lo;
    }
    let upper = if hi.is_infinite() { 0.0 } else { (-c * hi).exp() };
    ((-c * lo).exp() - upper) / c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::Ctmc;

    #[test]
    fn two_state_decay_rates() {
        let c = Ctmc::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let s = c.spectral().unwrap();
        assert_eq!(s.decay_rates()[0], 0.0);
        assert!((s.decay_rates()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn three_state_bdc_decay_rates() {
        let c = Ctmc::from_rates(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
        let s = c.spectral().unwrap();
        let want = [0.0, 1.0, 3.0];
        for (d, w) in s.decay_rates().iter().zip(want) {
            assert!((d - w).abs() < 1e-12, "{:?}", s.decay_rates());
        }
        let (ortho, recon) = s.reconstruction_error(c.generator());
        assert!(ortho < 1e-10 && recon < 1e-10);
    }

    #[test]
    fn irreversible_chain_has_no_decomposition() {
        let c = Ctmc::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        assert_eq!(c.spectral().unwrap_err(), Error::NotReversible);
    }

    #[test]
    fn prefactor_uses_target_over_initial() {
        // asymmetric 2-state chain: P_12(t) = 2/3 (1 - e^{-3t})
        let c = Ctmc::from_rates(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let s = c.spectral().unwrap();
        for t in [0.1f64, 0.5, 2.0] {
            let want = 2.0 / 3.0 * (1.0 - (-3.0 * t).exp());
            assert!((s.prob(0, 1, t) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn exp_window_edges() {
        assert_eq!(exp_window(0.0, 1.0, 3.0), 2.0);
        assert!((exp_window(2.0, 0.0, f64::INFINITY) - 0.5).abs() < 1e-15);
    }
}

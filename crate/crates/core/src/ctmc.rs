//! Finite irreducible continuous-time Markov chains.
//!
//! A [`Ctmc`] is validated once at construction: the generator is assembled
//! from off-diagonal rates, irreducibility is checked on the positive-rate
//! digraph, the stationary law is solved for, and the spectrum is classified.
//! Reversible chains additionally carry a [`SpectralDecomposition`] so that
//! transition probabilities have an exact closed form; every chain carries a
//! [`Uniformizer`] for the numeric route.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectral::SpectralDecomposition;
use crate::uniformization::Uniformizer;

/// Relative tolerance on detailed balance.
pub const DETAILED_BALANCE_TOL: f64 = 1e-10;
/// Relative tolerance on generator row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Eigenvalues with `|imag| < IMAG_TOL * max|eig|` are treated as real.
pub const IMAG_TOL: f64 = 1e-9;
/// Largest tolerated excursion of a raw probability outside `[0, 1]`.
pub const CLAMP_TOL: f64 = 1e-9;

/// Spectral class of a chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumClass {
    /// Detailed balance holds; the symmetrized generator has a real spectrum.
    Reversible,
    /// Not reversible, but every generator eigenvalue is real.
    RealSpectrum,
    /// At least one complex eigenvalue pair; `max_imag` is the largest `|Im λ|`.
    ComplexSpectrum { max_imag: f64 },
}

impl SpectrumClass {
    pub fn is_reversible(&self) -> bool {
        matches!(self, SpectrumClass::Reversible)
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, SpectrumClass::ComplexSpectrum { .. })
    }
}

impl fmt::Display for SpectrumClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumClass::Reversible => write!(f, "Reversible"),
            SpectrumClass::RealSpectrum => write!(f, "RealSpectrum"),
            SpectrumClass::ComplexSpectrum { .. } => write!(f, "ComplexSpectrum"),
        }
    }
}

/// A validated finite irreducible CTMC.
#[derive(Debug, Clone)]
pub struct Ctmc {
    generator: DMatrix<f64>,
    stationary: DVector<f64>,
    spectrum: SpectrumClass,
    mixing_rate: f64,
    spectral: Option<SpectralDecomposition>,
    uniformizer: Uniformizer,
}

/// Which transition-probability route an analysis should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Route {
    /// Closed form when the chain is reversible, numeric otherwise.
    #[default]
    Auto,
    /// Uniformization and quadrature, even for reversible chains.
    Numeric,
}

impl Ctmc {
    /// Builds a chain on `n_states` states from `(from, to, rate)` triples
    /// (0-based indices). Zero rates are allowed and ignored.
    pub fn from_rates(n_states: usize, rates: &[(usize, usize, f64)]) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidInput("a chain needs at least one state".into()));
        }
        let mut generator = DMatrix::<f64>::zeros(n_states, n_states);
        let mut seen = vec![false; n_states * n_states];
        for &(from, to, rate) in rates {
            let bad = |reason| Error::InvalidRate {
                from,
                to,
                value: rate,
                reason,
            };
            if from >= n_states || to >= n_states {
                return Err(bad("state index out of range"));
            }
            if from == to {
                return Err(bad("self-transition rates are not allowed"));
            }
            if !rate.is_finite() {
                return Err(bad("rate must be finite"));
            }
            if rate < 0.0 {
                return Err(bad("rate must be nonnegative"));
            }
            if std::mem::replace(&mut seen[from * n_states + to], true) {
                return Err(bad("duplicate rate entry"));
            }
            generator[(from, to)] = rate;
        }
        for i in 0..n_states {
            let out: f64 = (0..n_states).filter(|&j| j != i).map(|j| generator[(i, j)]).sum();
            generator[(i, i)] = -out;
        }
        Self::from_generator(generator)
    }

    /// Builds a chain from a full generator matrix.
    pub fn from_generator(generator: DMatrix<f64>) -> Result<Self> {
        let n = generator.nrows();
        if n == 0 || generator.ncols() != n {
            return Err(Error::InvalidInput("generator must be a nonempty square matrix".into()));
        }
        for i in 0..n {
            let mut scale = 0.0f64;
            let mut sum = 0.0;
            for j in 0..n {
                let q = generator[(i, j)];
                if !q.is_finite() {
                    return Err(Error::InvalidRate {
                        from: i,
                        to: j,
                        value: q,
                        reason: "rate must be finite",
                    });
                }
                if i != j && q < 0.0 {
                    return Err(Error::InvalidRate {
                        from: i,
                        to: j,
                        value: q,
                        reason: "rate must be nonnegative",
                    });
                }
                scale = scale.max(q.abs());
                sum += q;
            }
            if sum.abs() > ROW_SUM_TOL * scale.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "generator row {i} sums to {sum:e}, expected 0"
                )));
            }
        }
        check_irreducible(&generator)?;
        let stationary = solve_stationary(&generator)?;
        let spectrum = classify_spectrum(&generator, stationary.as_slice())?;
        let spectral = if spectrum.is_reversible() {
            Some(SpectralDecomposition::new(&generator, stationary.as_slice())?)
        } else {
            None
        };
        let mixing_rate = match &spectral {
            Some(s) => s.spectral_gap(),
            None => slowest_decay(&generator)?,
        };
        let uniformizer = Uniformizer::new(&generator, stationary.as_slice())?;
        Ok(Ctmc {
            generator,
            stationary,
            spectrum,
            mixing_rate,
            spectral,
            uniformizer,
        })
    }

    pub fn n_states(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Rate `q_ij` (off-diagonal) or `q_ii` (diagonal).
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.generator[(i, j)]
    }

    /// Total outflow rate `q_i = -q_ii`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.generator[(i, i)]
    }

    pub fn stationary(&self) -> &[f64] {
        self.stationary.as_slice()
    }

    pub fn spectrum(&self) -> SpectrumClass {
        self.spectrum
    }

    pub fn is_reversible(&self) -> bool {
        self.spectrum.is_reversible()
    }

    /// Spectral data of a reversible chain.
    pub fn spectral(&self) -> Result<&SpectralDecomposition> {
        self.spectral.as_ref().ok_or(Error::NotReversible)
    }

    pub fn uniformizer(&self) -> &Uniformizer {
        &self.uniformizer
    }

    /// The exact spectral kernel when available, uniformization otherwise.
    pub fn kernel(&self) -> Kernel<'_> {
        match &self.spectral {
            Some(s) => Kernel::Spectral(s),
            None => Kernel::Uniformized(&self.uniformizer),
        }
    }

    /// The numeric kernel, regardless of reversibility.
    pub fn numeric_kernel(&self) -> Kernel<'_> {
        Kernel::Uniformized(&self.uniformizer)
    }

    pub fn kernel_for(&self, route: Route) -> Kernel<'_> {
        match route {
            Route::Auto => self.kernel(),
            Route::Numeric => self.numeric_kernel(),
        }
    }

    /// Smallest `|Re λ|` over the nonzero generator eigenvalues (`d_2` for
    /// reversible chains). Transients decay like `exp(-mixing_rate · t)`.
    pub fn mixing_rate(&self) -> f64 {
        self.mixing_rate
    }

    /// Smallest state attaining `max_i π_i`.
    pub fn stationary_mode(&self) -> usize {
        argmax_smallest(self.stationary(), STATIONARY_TIE_TOL)
    }

    /// Largest exit rate; the uniformization constant.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n_states()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }
}

/// Relative tolerance used to decide ties in `π`.
pub const STATIONARY_TIE_TOL: f64 = 1e-10;

/// Index of the maximum, preferring the smallest index among values within
/// `rel_tol` (relative to the maximum) of it.
pub(crate) fn argmax_smallest(values: &[f64], rel_tol: f64) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = rel_tol * max.abs();
    values
        .iter()
        .position(|&v| v >= max - slack)
        .unwrap_or(0)
}

/// Builds a chain from 0-based rate triples; see [`Ctmc::from_rates`].
pub fn build_ctmc(n_states: usize, rates: &[(usize, usize, f64)]) -> Result<Ctmc> {
    Ctmc::from_rates(n_states, rates)
}

fn reachable(generator: &DMatrix<f64>, start: usize, reverse: bool) -> Vec<bool> {
    let n = generator.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let rate = if reverse { generator[(v, u)] } else { generator[(u, v)] };
            if v != u && rate > 0.0 && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// A digraph is strongly connected iff state 0 reaches every state in both
/// the graph and its transpose.
fn check_irreducible(generator: &DMatrix<f64>) -> Result<()> {
    for reverse in [false, true] {
        if let Some(state) = reachable(generator, 0, reverse).iter().position(|r| !r) {
            return Err(Error::NotIrreducible { state });
        }
    }
    Ok(())
}

/// Solves `πQ = 0`, `Σπ = 1` with the normalization replacing the last
/// balance equation.
pub fn solve_stationary(generator: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = generator.nrows();
    let mut a = generator.transpose();
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("stationary balance equations".into()))?;
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::NumericalFailure(format!(
            "stationary distribution has a nonpositive entry: {:?}",
            pi.as_slice()
        )));
    }
    Ok(pi)
}

/// Classifies a chain given its generator and stationary law.
pub fn classify_spectrum(generator: &DMatrix<f64>, pi: &[f64]) -> Result<SpectrumClass> {
    let n = generator.nrows();
    let balanced = (0..n).all(|i| {
        (i + 1..n).all(|j| {
            let fwd = pi[i] * generator[(i, j)];
            let bwd = pi[j] * generator[(j, i)];
            (fwd - bwd).abs() <= DETAILED_BALANCE_TOL * fwd.max(bwd)
        })
    });
    if balanced {
        return Ok(SpectrumClass::Reversible);
    }
    let schur = nalgebra::Schur::try_new(generator.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::NumericalFailure("Schur decomposition did not converge".into()))?;
    let eig = schur.complex_eigenvalues();
    let max_abs = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let max_imag = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_imag < IMAG_TOL * max_abs {
        Ok(SpectrumClass::RealSpectrum)
    } else {
        Ok(SpectrumClass::ComplexSpectrum { max_imag })
    }
}

fn slowest_decay(generator: &DMatrix<f64>) -> Result<f64> {
    if generator.nrows() == 1 {
        return Ok(0.0);
    }
    let schur = nalgebra::Schur::try_new(generator.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::NumericalFailure("Schur decomposition did not converge".into()))?;
    let mut re: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| -z.re).collect();
    re.sort_by(f64::total_cmp);
    // re[0] is the zero eigenvalue
    Ok(re[1])
}

/// Transition-probability evaluator: exact spectral sums or uniformization.
#[derive(Debug, Clone, Copy)]
pub enum Kernel<'a> {
    Spectral(&'a SpectralDecomposition),
    Uniformized(&'a Uniformizer),
}

impl Kernel<'_> {
    pub fn n_states(&self) -> usize {
        match self {
            Kernel::Spectral(s) => s.n_states(),
            Kernel::Uniformized(u) => u.n_states(),
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Kernel::Spectral(_))
    }

    /// Writes the raw row `P_i·(t)` into `out`.
    pub fn row_into(&self, i: usize, t: f64, out: &mut [f64]) {
        match self {
            Kernel::Spectral(s) => s.row_into(i, t, out),
            Kernel::Uniformized(u) => u.row_into(i, t, out),
        }
    }

    pub fn row(&self, i: usize, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        self.row_into(i, t, &mut out);
        out
    }
}

fn clamp_probability(raw: f64) -> Result<f64> {
    let clamped = raw.clamp(0.0, 1.0);
    if (raw - clamped).abs() >= CLAMP_TOL || raw.is_nan() {
        return Err(Error::NumericalFailure(format!(
            "transition probability {raw:e} outside [0, 1]"
        )));
    }
    Ok(clamped)
}

/// `P_ij(t)` through the given kernel, clamped to `[0, 1]`.
pub fn transition_prob(kernel: Kernel<'_>, i: usize, j: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time must be nonnegative, got {t}")));
    }
    let raw = match kernel {
        Kernel::Spectral(s) => s.prob(i, j, t),
        Kernel::Uniformized(u) => u.row(i, t)[j],
    };
    clamp_probability(raw)
}

/// `P(t)` through the given kernel.
pub fn transition_matrix(kernel: Kernel<'_>, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time must be nonnegative, got {t}")));
    }
    let n = kernel.n_states();
    let mut p = match kernel {
        Kernel::Spectral(s) => DMatrix::from_fn(n, n, |i, j| s.prob(i, j, t)),
        Kernel::Uniformized(u) => u.matrix(t),
    };
    for v in p.iter_mut() {
        *v = clamp_probability(*v)?;
    }
    Ok(p)
}

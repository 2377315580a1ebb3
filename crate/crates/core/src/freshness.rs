//! Exact mean binary freshness (MBF).
//!
//! The pair (source state, last received sample) is itself a CTMC whose
//! stationary law `ψ` gives the martingale MBF `Σ_i ψ_ii` directly. For any
//! stage-plan estimator the MBF follows from renewal-reward at sampling
//! epochs: `E[Δ] = Σ_i μ_i π̃_i E[F_i]`, with `π̃` the sample-state marginal of
//! `ψ` and `E[F_i] = ∫ P_{i,X̂(t)}(t) e^{-μ_i t} dt` the expected fresh time
//! between samples that start in `i`.

use nalgebra::{DMatrix, DVector};

use crate::ctmc::{Ctmc, Kernel, Route};
use crate::error::{Error, Result};
use crate::estimators::{StagePlan, StageSequence};
use crate::quadrature::{integrate_discounted, QuadOptions};
use crate::spectral::exp_window;

/// Most negative `ψ` entry that is clamped to zero instead of rejected.
pub const PSI_CLAMP: f64 = -1e-12;

/// How an MBF value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPath {
    /// Stationary law of the (source, sample) chain.
    JointChain,
    /// Spectral closed forms.
    ClosedForm,
    /// Uniformization plus adaptive quadrature.
    Quadrature,
    /// Stationary law of the embedded sampling-epoch chain.
    EmbeddedChain,
}

impl EvalPath {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalPath::JointChain => "joint-chain",
            EvalPath::ClosedForm => "closed-form",
            EvalPath::Quadrature => "quadrature",
            EvalPath::EmbeddedChain => "embedded-chain",
        }
    }
}

/// Stationary law of the (source, last sample) chain.
#[derive(Debug, Clone)]
pub struct JointStationary {
    n: usize,
    psi: Vec<f64>,
    estimator_marginal: Vec<f64>,
    source_marginal: Vec<f64>,
}

impl JointStationary {
    /// `ψ_{i,j}`: source in `i`, last sample `j`.
    pub fn psi(&self, i: usize, j: usize) -> f64 {
        self.psi[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.psi
    }

    /// `π̃_j = Σ_i ψ_{i,j}`, the long-run fraction of time the last sample is `j`.
    pub fn estimator_marginal(&self) -> &[f64] {
        &self.estimator_marginal
    }

    /// `Σ_j ψ_{i,j}`; equals `π`.
    pub fn source_marginal(&self) -> &[f64] {
        &self.source_marginal
    }
}

/// Coefficients of the closed-form MBF sums.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    /// `ã[i][k][j]`: state `i`, stage `k`, eigen-index `j`.
    PMap(Vec<Vec<Vec<f64>>>),
    /// `b̃[i][j]`: state `i`, eigen-index `j`.
    TauMap(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbfReport {
    pub estimator: String,
    pub path: EvalPath,
    pub mu: Vec<f64>,
    pub mbf: f64,
    /// `E[F_{i,μ_i}]`, expected fresh time per inter-sample interval from `i`.
    pub per_state_freshness: Vec<f64>,
    /// `ω = Σ_i π̃_i μ_i`.
    pub avg_sampling_rate: f64,
    pub pi_tilde: Vec<f64>,
    pub coefficients: Option<Coefficients>,
}

fn check_rates(chain: &Ctmc, mu: &[f64]) -> Result<()> {
    if mu.len() != chain.n_states() {
        return Err(Error::InvalidInput(format!(
            "expected {} sampling rates, got {}",
            chain.n_states(),
            mu.len()
        )));
    }
    for (i, &m) in mu.iter().enumerate() {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidRate {
                from: i,
                to: i,
                value: m,
                reason: "sampling rate must be positive and finite",
            });
        }
    }
    Ok(())
}

/// Generator of the (source, last sample) chain; state `(i, j)` has index
/// `i * S + j`.
pub fn build_joint_generator(chain: &Ctmc, mu: &[f64]) -> Result<DMatrix<f64>> {
    check_rates(chain, mu)?;
    let n = chain.n_states();
    let mut qm = DMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in (0..n).filter(|&k| k != i) {
                qm[(row, k * n + j)] += chain.rate(i, k);
            }
            if i != j {
                qm[(row, i * n + i)] += mu[j];
                qm[(row, row)] = -(chain.exit_rate(i) + mu[j]);
            } else {
                qm[(row, row)] = -chain.exit_rate(i);
            }
        }
    }
    Ok(qm)
}

/// Solves `ψᵀ Q_M = 0`, `Σψ = 1` with the last balance equation replaced by
/// the normalization.
pub fn joint_stationary(chain: &Ctmc, mu: &[f64]) -> Result<JointStationary> {
    let qm = build_joint_generator(chain, mu)?;
    let n = chain.n_states();
    let m = n * n;
    let mut a = qm.transpose();
    a.row_mut(m - 1).fill(1.0);
    let mut v = DVector::zeros(m);
    v[m - 1] = 1.0;
    let psi = a
        .lu()
        .solve(&v)
        .ok_or_else(|| Error::SingularSystem("joint-chain balance equations".into()))?;
    let mut psi: Vec<f64> = psi.iter().copied().collect();
    for p in psi.iter_mut() {
        if *p < PSI_CLAMP || !p.is_finite() {
            return Err(Error::SingularSystem(format!("joint stationary entry {p:e} is negative")));
        }
        *p = p.max(0.0);
    }
    let mut estimator_marginal = vec![0.0; n];
    let mut source_marginal = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            source_marginal[i] += psi[i * n + j];
            estimator_marginal[j] += psi[i * n + j];
        }
    }
    Ok(JointStationary {
        n,
        psi,
        estimator_marginal,
        source_marginal,
    })
}

/// `ω = Σ_i π̃_i μ_i`; the same for every estimator since rates follow the
/// last sample.
pub fn avg_sampling_rate(chain: &Ctmc, mu: &[f64]) -> Result<f64> {
    let js = joint_stationary(chain, mu)?;
    Ok(dot(js.estimator_marginal(), mu))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_unit(x: f64) -> Result<f64> {
    if !(x > -1e-9 && x < 1.0 + 1e-9) {
        return Err(Error::NumericalFailure(format!("MBF {x} outside [0, 1]")));
    }
    Ok(x.clamp(0.0, 1.0))
}

/// Martingale MBF `Σ_i ψ_ii`.
pub fn mbf_martingale(chain: &Ctmc, mu: &[f64]) -> Result<MbfReport> {
    let js = joint_stationary(chain, mu)?;
    let n = chain.n_states();
    let pi_tilde = js.estimator_marginal().to_vec();
    let mbf = clamp_unit((0..n).map(|i| js.psi(i, i)).sum())?;
    // per state, ψ_ii = μ_i π̃_i E[F_i]
    let per_state_freshness = (0..n).map(|i| js.psi(i, i) / (mu[i] * pi_tilde[i])).collect();
    Ok(MbfReport {
        estimator: "martingale".into(),
        path: EvalPath::JointChain,
        mu: mu.to_vec(),
        mbf,
        per_state_freshness,
        avg_sampling_rate: dot(&pi_tilde, mu),
        pi_tilde,
        coefficients: None,
    })
}

/// `E[F_{i,μ_i}] = ∫ P_{i,X̂(t)}(t) e^{-μ_i t} dt` for the plan's row `i`.
pub fn freshness_integral(chain: &Ctmc, plan: &StagePlan, i: usize, mu_i: f64) -> Result<f64> {
    row_freshness(chain, chain.kernel(), plan.row(i), i, mu_i)
}

pub fn freshness_integral_via(chain: &Ctmc, route: Route, plan: &StagePlan, i: usize, mu_i: f64) -> Result<f64> {
    row_freshness(chain, chain.kernel_for(route), plan.row(i), i, mu_i)
}

pub(crate) fn row_freshness(chain: &Ctmc, kernel: Kernel<'_>, row: &StageSequence, i: usize, mu: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidRate {
            from: i,
            to: i,
            value: mu,
            reason: "sampling rate must be positive and finite",
        });
    }
    let n = chain.n_states();
    let mut total = 0.0;
    for (lo, hi, v) in row.stages() {
        total += match kernel {
            Kernel::Spectral(s) => s.discounted_integral(i, v, mu, lo, hi),
            Kernel::Uniformized(_) => {
                let mut buf = vec![0.0; n];
                integrate_discounted(
                    |t, out| {
                        kernel.row_into(i, t, &mut buf);
                        out[0] = buf[v];
                    },
                    mu,
                    lo,
                    hi,
                    1,
                    QuadOptions::default(),
                )?[0]
            }
        };
    }
    if !(total > -1e-12 && total <= 1.0 / mu * (1.0 + 1e-9)) {
        return Err(Error::NumericalFailure(format!(
            "fresh time {total} outside [0, 1/μ] for state {}",
            i + 1
        )));
    }
    Ok(total.max(0.0))
}

/// MBF of any stage-plan estimator via `Σ_i μ_i π̃_i E[F_i]`.
pub fn mbf_general(chain: &Ctmc, plan: &StagePlan, mu: &[f64]) -> Result<MbfReport> {
    mbf_general_via(chain, Route::Auto, plan, mu)
}

pub fn mbf_general_via(chain: &Ctmc, route: Route, plan: &StagePlan, mu: &[f64]) -> Result<MbfReport> {
    check_rates(chain, mu)?;
    if plan.n_states() != chain.n_states() {
        return Err(Error::InvalidInput("plan and chain sizes differ".into()));
    }
    let kernel = chain.kernel_for(route);
    let js = joint_stationary(chain, mu)?;
    let pi_tilde = js.estimator_marginal().to_vec();
    let per_state_freshness = (0..chain.n_states())
        .map(|i| row_freshness(chain, kernel, plan.row(i), i, mu[i]))
        .collect::<Result<Vec<_>>>()?;
    let mbf = clamp_unit(
        (0..chain.n_states())
            .map(|i| mu[i] * pi_tilde[i] * per_state_freshness[i])
            .sum(),
    )?;
    Ok(MbfReport {
        estimator: if plan.is_martingale() { "martingale" } else { "plan" }.into(),
        path: if kernel.is_spectral() {
            EvalPath::ClosedForm
        } else {
            EvalPath::Quadrature
        },
        mu: mu.to_vec(),
        mbf,
        per_state_freshness,
        avg_sampling_rate: dot(&pi_tilde, mu),
        pi_tilde,
        coefficients: None,
    })
}

/// p-MAP MBF as the triple sum over states, eigen-indices and stages of
/// `ã_{i,j,k} (e^{-(d_j+μ_i) τ_{i,k-1}} - e^{-(d_j+μ_i) τ_{i,k}})` with
/// `ã_{i,j,k} = sqrt(π_{i_k}/π_i) π̃_i u_ji u_{j,i_k} μ_i/(μ_i+d_j)`.
pub fn mbf_p_map_closed(chain: &Ctmc, plan: &StagePlan, mu: &[f64]) -> Result<MbfReport> {
    let spectral = chain.spectral()?;
    check_rates(chain, mu)?;
    let n = chain.n_states();
    let js = joint_stationary(chain, mu)?;
    let pi_tilde = js.estimator_marginal().to_vec();
    let d = spectral.decay_rates();
    let sqrt_pi = spectral.sqrt_pi();

    let mut coeffs = Vec::with_capacity(n);
    let mut per_state_freshness = vec![0.0; n];
    let mut mbf = 0.0;
    for i in 0..n {
        let mut row_coeffs = Vec::new();
        for (lo, hi, ik) in plan.row(i).stages() {
            let a: Vec<f64> = (0..n)
                .map(|j| {
                    sqrt_pi[ik] / sqrt_pi[i] * pi_tilde[i] * spectral.u(j, i) * spectral.u(j, ik) * mu[i]
                        / (mu[i] + d[j])
                })
                .collect();
            for j in 0..n {
                let c = d[j] + mu[i];
                // exp window times c gives the bracketed difference
                let term = a[j] * exp_window(c, lo, hi) * c;
                mbf += term;
                per_state_freshness[i] += term;
            }
            row_coeffs.push(a);
        }
        per_state_freshness[i] /= mu[i] * pi_tilde[i];
        coeffs.push(row_coeffs);
    }
    Ok(MbfReport {
        estimator: "p-map".into(),
        path: EvalPath::ClosedForm,
        mu: mu.to_vec(),
        mbf: clamp_unit(mbf)?,
        per_state_freshness,
        avg_sampling_rate: dot(&pi_tilde, mu),
        pi_tilde,
        coefficients: Some(Coefficients::PMap(coeffs)),
    })
}

/// τ-MAP MBF `Σ_i Σ_j μ_i/(d_j+μ_i) (π̃_i u_ji² - b̃_ij e^{-(d_j+μ_i)τ})` with
/// `b̃_ij = π̃_i u_ji² - sqrt(π_{i*}/π_i) π̃_i u_ji u_{j,i*}`.
pub fn mbf_tau_map_closed(chain: &Ctmc, tau: f64, mu: &[f64]) -> Result<MbfReport> {
    let spectral = chain.spectral()?;
    check_rates(chain, mu)?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!("τ must be nonnegative, got {tau}")));
    }
    let n = chain.n_states();
    let js = joint_stationary(chain, mu)?;
    let pi_tilde = js.estimator_marginal().to_vec();
    let d = spectral.decay_rates();
    let sqrt_pi = spectral.sqrt_pi();
    let mode = chain.stationary_mode();

    let mut b = vec![vec![0.0; n]; n];
    let mut per_state_freshness = vec![0.0; n];
    let mut mbf = 0.0;
    for i in 0..n {
        for j in 0..n {
            let uji = spectral.u(j, i);
            b[i][j] = pi_tilde[i] * uji * uji - sqrt_pi[mode] / sqrt_pi[i] * pi_tilde[i] * uji * spectral.u(j, mode);
            let c = d[j] + mu[i];
            let tail = if tau.is_infinite() { 0.0 } else { (-c * tau).exp() };
            let term = mu[i] / c * (pi_tilde[i] * uji * uji - b[i][j] * tail);
            mbf += term;
            per_state_freshness[i] += term;
        }
        per_state_freshness[i] /= mu[i] * pi_tilde[i];
    }
    Ok(MbfReport {
        estimator: "tau-map".into(),
        path: EvalPath::ClosedForm,
        mu: mu.to_vec(),
        mbf: clamp_unit(mbf)?,
        per_state_freshness,
        avg_sampling_rate: dot(&pi_tilde, mu),
        pi_tilde,
        coefficients: Some(Coefficients::TauMap(b)),
    })
}

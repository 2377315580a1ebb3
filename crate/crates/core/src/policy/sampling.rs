use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Simple,
    SemiSimple,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Simple => "simple",
            PolicyKind::SemiSimple => "semi-simple",
        }
    }
}

/// The one randomized state of a semi-simple policy: after a sample in
/// `state` the rate is `rate_a` with probability `p`, else `rate_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Randomized {
    pub state: usize,
    pub rate_a: f64,
    pub rate_b: f64,
    pub p: f64,
}

/// Per-state sampling rates, keyed by the last received sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPolicy {
    rates: Vec<f64>,
    randomized: Option<Randomized>,
}

fn check_rate(state: usize, r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRate {
            from: state,
            to: state,
            value: r,
            reason: "sampling rate must be positive and finite",
        })
    }
}

impl SamplingPolicy {
    pub fn simple(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidInput("policy needs at least one rate".into()));
        }
        for (i, &r) in rates.iter().enumerate() {
            check_rate(i, r)?;
        }
        Ok(SamplingPolicy { rates, randomized: None })
    }

    pub fn uniform(n: usize, rate: f64) -> Result<Self> {
        Self::simple(vec![rate; n])
    }

    /// `rates[state]` is replaced by `rate_b`.
    pub fn semi_simple(mut rates: Vec<f64>, state: usize, rate_a: f64, rate_b: f64, p: f64) -> Result<Self> {
        if state >= rates.len() {
            return Err(Error::InvalidInput(format!("randomized state {} out of range", state + 1)));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidInput(format!("randomization probability {p} not in (0, 1)")));
        }
        check_rate(state, rate_a)?;
        check_rate(state, rate_b)?;
        rates[state] = rate_b;
        let mut policy = Self::simple(rates)?;
        policy.randomized = Some(Randomized { state, rate_a, rate_b, p });
        Ok(policy)
    }

    pub fn n_states(&self) -> usize {
        self.rates.len()
    }

    pub fn kind(&self) -> PolicyKind {
        if self.randomized.is_some() {
            PolicyKind::SemiSimple
        } else {
            PolicyKind::Simple
        }
    }

    /// Deterministic rates; for a semi-simple policy the randomized state
    /// holds `rate_b`.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn randomized(&self) -> Option<&Randomized> {
        self.randomized.as_ref()
    }

    /// The deterministic policy with `rate_a` at the randomized state.
    pub fn rates_a(&self) -> Vec<f64> {
        let mut r = self.rates.clone();
        if let Some(x) = &self.randomized {
            r[x.state] = x.rate_a;
        }
        r
    }

    /// Expected rate per state, `p·rate_a + (1-p)·rate_b` at the randomized state.
    pub fn mean_rates(&self) -> Vec<f64> {
        let mut r = self.rates.clone();
        if let Some(x) = &self.randomized {
            r[x.state] = x.p * x.rate_a + (1.0 - x.p) * x.rate_b;
        }
        r
    }
}

impl fmt::Display for SamplingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [", self.kind().as_str())?;
        for (i, r) in self.rates.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match &self.randomized {
                Some(x) if x.state == i => write!(f, "{}@{} | {}", x.rate_a, x.p, x.rate_b)?,
                _ => write!(f, "{r}")?,
            }
        }
        write!(f, "]")
    }
}

use std::fmt;

use crate::error::{Error, Result};

/// Piecewise-constant estimate for one initial state: stage `k` covers ages
/// `[boundaries[k], boundaries[k + 1])` and estimates `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSequence {
    boundaries: Vec<f64>,
    values: Vec<usize>,
}

impl StageSequence {
    /// Validates and canonicalizes a stage sequence. `boundaries` must start
    /// at `0`, end at `+∞` and be nondecreasing, with one more entry than
    /// `values`.
    pub fn new(boundaries: Vec<f64>, values: Vec<usize>) -> Result<Self> {
        if values.is_empty() || boundaries.len() != values.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} boundaries do not delimit {} stages",
                boundaries.len(),
                values.len()
            )));
        }
        if boundaries[0] != 0.0 {
            return Err(Error::InvalidInput("first stage boundary must be 0".into()));
        }
        if boundaries[boundaries.len() - 1] != f64::INFINITY {
            return Err(Error::InvalidInput("last stage boundary must be infinite".into()));
        }
        let interior = &boundaries[1..boundaries.len() - 1];
        if interior.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("interior stage boundaries must be finite".into()));
        }
        if boundaries.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidInput("stage boundaries must be nondecreasing".into()));
        }
        let mut seq = StageSequence { boundaries, values };
        seq.canonicalize();
        Ok(seq)
    }

    /// A single stage estimating `value` at every age.
    pub fn constant(value: usize) -> Self {
        StageSequence {
            boundaries: vec![0.0, f64::INFINITY],
            values: vec![value],
        }
    }

    /// Drops empty stages and merges equal-valued neighbours.
    fn canonicalize(&mut self) {
        let mut boundaries = vec![0.0];
        let mut values: Vec<usize> = Vec::with_capacity(self.values.len());
        for (k, &v) in self.values.iter().enumerate() {
            let (lo, hi) = (self.boundaries[k], self.boundaries[k + 1]);
            if lo == hi {
                continue;
            }
            if values.last() == Some(&v) {
                *boundaries.last_mut().unwrap() = hi;
            } else {
                values.push(v);
                boundaries.push(hi);
            }
        }
        self.boundaries = boundaries;
        self.values = values;
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn stage_count(&self) -> usize {
        self.values.len()
    }

    /// Estimate at `age` (left-closed, right-open stages).
    pub fn evaluate(&self, age: f64) -> usize {
        let k = self.boundaries[1..].partition_point(|&b| b <= age);
        self.values[k.min(self.values.len() - 1)]
    }

    /// `(lo, hi, value)` for each stage.
    pub fn stages(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(k, &v)| (self.boundaries[k], self.boundaries[k + 1], v))
    }
}

/// Per-initial-state stage sequences: the common representation of the
/// martingale, τ-MAP, p-MAP and MAP estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    rows: Vec<StageSequence>,
}

impl StagePlan {
    pub fn new(rows: Vec<StageSequence>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("a plan needs at least one state".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(&bad) = row.values.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidInput(format!(
                    "stage value {} for state {} is not a state",
                    bad + 1,
                    i + 1
                )));
            }
        }
        Ok(StagePlan { rows })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &StageSequence {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[StageSequence] {
        &self.rows
    }

    /// Estimate when the last sample was `last_sample` and it is `age` old.
    pub fn evaluate(&self, last_sample: usize, age: f64) -> usize {
        self.rows[last_sample].evaluate(age)
    }

    pub fn is_martingale(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.values == [i])
    }
}

impl fmt::Display for StagePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, row) in self.rows.iter().enumerate() {
            write!(f, "{}:", i + 1)?;
            for (lo, _, v) in row.stages() {
                write!(f, " [{lo}) {}", v + 1)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn evaluate_uses_right_open_stages() {
        let s = StageSequence::new(vec![0.0, 0.5, INF], vec![0, 1]).unwrap();
        assert_eq!(s.evaluate(0.0), 0);
        assert_eq!(s.evaluate(0.499_999), 0);
        assert_eq!(s.evaluate(0.5), 1);
        assert_eq!(s.evaluate(1e9), 1);
    }

    #[test]
    fn canonicalization_merges_and_drops() {
        let s = StageSequence::new(vec![0.0, 1.0, 2.0, 2.0, 3.0, INF], vec![0, 0, 2, 1, 1]).unwrap();
        assert_eq!(s.values(), &[0, 1]);
        assert_eq!(s.boundaries(), &[0.0, 2.0, INF]);

        let s = StageSequence::new(vec![0.0, 0.0, INF], vec![0, 1]).unwrap();
        assert_eq!(s.values(), &[1]);
        assert_eq!(s.boundaries(), &[0.0, INF]);

        let s = StageSequence::new(vec![0.0, 1.0, 2.0, INF], vec![0, 1, 0]).unwrap();
        assert_eq!(s.values(), &[0, 1, 0]);
        assert_eq!(s.boundaries(), &[0.0, 1.0, 2.0, INF]);
    }

    #[test]
    fn rejects_malformed_sequences() {
        assert!(StageSequence::new(vec![0.0, INF], vec![]).is_err());
        assert!(StageSequence::new(vec![0.1, INF], vec![0]).is_err());
        assert!(StageSequence::new(vec![0.0, 5.0], vec![0]).is_err());
        assert!(StageSequence::new(vec![0.0, 2.0, 1.0, INF], vec![0, 1, 0]).is_err());
        assert!(StageSequence::new(vec![0.0, f64::NAN, INF], vec![0, 1]).is_err());
        assert!(StagePlan::new(vec![StageSequence::constant(3)]).is_err());
    }
}

//! Chain and policy files.
//!
//! A chain file is TOML with 1-based state indices:
//!
//! ```toml
//! label = "symmetric pair"
//! states = 2
//! rates = [[1, 2, 1.0], [2, 1, 1.0]]
//! ```
//!
//! A policy file lists one sampling rate per state, optionally with one
//! randomized state:
//!
//! ```toml
//! rates = [0.5, 1.25, 0.8]
//!
//! [randomized]
//! state = 2
//! rate_a = 2.0
//! rate_b = 1.25
//! p = 0.375
//! ```

use std::path::Path;

use mbf_core::policy::SamplingPolicy;
use mbf_core::Ctmc;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    label: Option<String>,
    states: i64,
    rates: Vec<Spanned<Vec<toml::Value>>>,
}

#[derive(Debug)]
pub struct LoadedChain {
    pub label: String,
    pub chain: Ctmc,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn number(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Integer(i) => Some(*i as f64),
        toml::Value::Float(f) => Some(*f),
        _ => None,
    }
}

/// Parses a chain file; errors carry the file name and line.
pub fn parse_chain(text: &str, name: &str) -> CliResult<LoadedChain> {
    let raw: ChainFile = toml::from_str(text).map_err(|e| CliError::input(format!("{name}: {e}")))?;
    if raw.states < 1 {
        return Err(CliError::input(format!("{name}: `states` must be at least 1")));
    }
    let n = raw.states as usize;
    let mut triples = Vec::with_capacity(raw.rates.len());
    for entry in &raw.rates {
        let line = line_of(text, entry.span().start);
        let bad = |why: &str| CliError::input(format!("{name}:{line}: rate triple {why}"));
        let v = entry.get_ref();
        if v.len() != 3 {
            return Err(bad(&format!("needs 3 entries [from, to, rate], found {}", v.len())));
        }
        let idx = |x: &toml::Value| match x {
            toml::Value::Integer(i) if *i >= 1 && (*i as usize) <= n => Ok(*i as usize - 1),
            toml::Value::Integer(i) => Err(bad(&format!("state {i} is outside 1..={n}"))),
            _ => Err(bad("state indices must be integers")),
        };
        let from = idx(&v[0])?;
        let to = idx(&v[1])?;
        let rate = number(&v[2]).ok_or_else(|| bad("rate must be a number"))?;
        if from == to {
            return Err(bad(&format!("has a self-transition at state {}", from + 1)));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(bad(&format!("rate {rate} must be finite and nonnegative")));
        }
        if triples.iter().any(|&(f, t, _)| f == from && t == to) {
            return Err(bad(&format!("repeats the pair ({}, {})", from + 1, to + 1)));
        }
        triples.push((from, to, rate));
    }
    let chain = Ctmc::from_rates(n, &triples).map_err(|e| CliError::input(format!("{name}: {e}")))?;
    Ok(LoadedChain {
        label: raw.label.unwrap_or_else(|| name.to_string()),
        chain,
    })
}

pub fn load_chain(path: &Path) -> CliResult<LoadedChain> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_chain(&text, &stem).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(m.replacen(&stem, &path.display().to_string(), 1)),
        other => other,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    rates: Vec<f64>,
    randomized: Option<RandomizedEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomizedEntry {
    state: usize,
    rate_a: f64,
    rate_b: f64,
    p: f64,
}

pub fn parse_policy(text: &str, name: &str) -> CliResult<SamplingPolicy> {
    let raw: PolicyFile = toml::from_str(text).map_err(|e| CliError::input(format!("{name}: {e}")))?;
    let policy = match raw.randomized {
        None => SamplingPolicy::simple(raw.rates),
        Some(r) => {
            if r.state == 0 {
                return Err(CliError::input(format!("{name}: randomized state is 1-based")));
            }
            SamplingPolicy::semi_simple(raw.rates, r.state - 1, r.rate_a, r.rate_b, r.p)
        }
    };
    policy.map_err(|e| CliError::input(format!("{name}: {e}")))
}

pub fn load_policy(path: &Path) -> CliResult<SamplingPolicy> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    parse_policy(&text, &path.display().to_string())
}

/// TOML text of a policy; rates keep full precision so the file round-trips.
pub fn policy_to_toml(policy: &SamplingPolicy) -> String {
    let raw = PolicyFile {
        rates: policy.rates().to_vec(),
        randomized: policy.randomized().map(|r| RandomizedEntry {
            state: r.state + 1,
            rate_a: r.rate_a,
            rate_b: r.rate_b,
            p: r.p,
        }),
    };
    toml::to_string(&raw).expect("policy serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_chain() {
        let c = parse_chain("label = \"pair\"\nstates = 2\nrates = [[1, 2, 2], [2, 1, 1.0]]\n", "t").unwrap();
        assert_eq!(c.label, "pair");
        assert_eq!(c.chain.rate(0, 1), 2.0);
        assert!((c.chain.stationary()[0] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn reports_line_of_bad_triple() {
        let text = "states = 2\nrates = [\n  [1, 2, 1.0],\n  [2, 3, 1.0],\n]\n";
        let e = parse_chain(text, "t").unwrap_err().to_string();
        assert!(e.contains("t:4"), "{e}");
        assert!(e.contains("outside"), "{e}");
        let e = parse_chain("states = 2\nrates = [[1, 2]]\n", "t").unwrap_err().to_string();
        assert!(e.contains("3 entries"), "{e}");
        let e = parse_chain("states = 2\nrates = [[1, 2, -1.0], [2, 1, 1.0]]\n", "t").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(parse_chain("states = 2\nrates = [[1, 2, 1.0]]\n", "t").is_err());
        assert!(parse_chain("states = 2\nrate = []\n", "t").is_err());
    }

    #[test]
    fn policy_round_trip() {
        let p = SamplingPolicy::semi_simple(vec![0.1, 0.7, 1.0 / 3.0], 1, 0.9, 0.7, 0.123456789012345).unwrap();
        let back = parse_policy(&policy_to_toml(&p), "p").unwrap();
        assert_eq!(back, p);
        let s = SamplingPolicy::simple(vec![0.25, 2.0]).unwrap();
        assert_eq!(parse_policy(&policy_to_toml(&s), "p").unwrap(), s);
    }
}

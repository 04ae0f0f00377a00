//! System configuration: the tuple (n, P, Q, d) plus rule, optional
//! intermediate availability and seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for `sum(p) == 1` and `sum(q) == 1`.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// How the provider is picked among the available agents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Fewest tokens wins; ties are broken uniformly over distinct tied agents.
    #[default]
    MinToken,
    /// Uniform draw over the available multiset.
    Uniform,
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_token" | "min-token" | "min" => Ok(Rule::MinToken),
            "uniform" => Ok(Rule::Uniform),
            other => Err(Error::invalid(format!(
                "unknown rule {other:?} (expected min_token or uniform)"
            ))),
        }
    }
}

/// A token system.
///
/// Serialized as a JSON object with keys `n`, `p`, `q`, `d`, `rule`, `beta`
/// and `seed`. `rule` defaults to `min_token`, `beta` is omitted when unset
/// and `seed` defaults to 0.
///
/// When `beta` is set, each period independently uses `d` availability draws
/// with probability `beta` and a single draw otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub d: usize,
    #[serde(default)]
    pub rule: Rule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SystemConfig {
    /// Validated configuration with the min-token rule and seed 0.
    pub fn new(p: Vec<f64>, q: Vec<f64>, d: usize) -> Result<Self> {
        let cfg = SystemConfig {
            n: p.len(),
            p,
            q,
            d,
            rule: Rule::MinToken,
            beta: None,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `n` agents with uniform request and availability rates.
    pub fn symmetric(n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n must be at least 2"));
        }
        let u = vec![1.0 / n as f64; n];
        Self::new(u.clone(), u, d)
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.beta = Some(beta);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if self.d < 1 {
            return Err(Error::invalid("d must be at least 1"));
        }
        check_distribution("p", &self.p, self.n)?;
        check_distribution("q", &self.q, self.n)?;
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::invalid(format!(
                    "beta must lie in (0, 1), got {beta}"
                )));
            }
            if self.d < 2 {
                return Err(Error::invalid("beta requires d >= 2"));
            }
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        let u = 1.0 / self.n as f64;
        self.p
            .iter()
            .chain(&self.q)
            .all(|&x| (x - u).abs() <= SUM_TOLERANCE)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SystemConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_distribution(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::invalid(format!(
            "{name} has {} entries but n = {n}",
            v.len()
        )));
    }
    if let Some((i, x)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !(x.is_finite() && **x > 0.0))
    {
        return Err(Error::invalid(format!(
            "{name}[{i}] = {x} but every entry must be strictly positive"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = SystemConfig::new(vec![0.6, 0.4], vec![0.55, 0.45], 2)
            .unwrap()
            .with_seed(7)
            .with_rule(Rule::Uniform);
        let back = SystemConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn json_defaults() {
        let cfg = SystemConfig::from_json(r#"{"n":2,"p":[0.5,0.5],"q":[0.5,0.5],"d":2}"#).unwrap();
        assert_eq!(cfg.rule, Rule::MinToken);
        assert_eq!(cfg.beta, None);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SystemConfig::new(vec![1.0, 0.0], vec![0.5, 0.5], 2).is_err());
        assert!(SystemConfig::new(vec![0.5, 0.6], vec![0.5, 0.5], 2).is_err());
        assert!(SystemConfig::new(vec![1.0], vec![1.0], 2).is_err());
        assert!(SystemConfig::new(vec![0.5, 0.5], vec![0.5, 0.5], 0).is_err());
        assert!(SystemConfig::new(vec![0.5, 0.5], vec![0.3, 0.3, 0.4], 2).is_err());
        assert!(SystemConfig::symmetric(2, 2)
            .unwrap()
            .with_beta(1.5)
            .is_err());
        assert!(SystemConfig::symmetric(2, 1)
            .unwrap()
            .with_beta(0.5)
            .is_err());
        assert!(
            SystemConfig::from_json(r#"{"n":2,"p":[0.5,0.5],"q":[0.5,0.5],"d":2,"x":1}"#).is_err()
        );
    }

    #[test]
    fn sum_tolerance_is_tight() {
        let eps = 1e-13;
        assert!(SystemConfig::new(vec![0.5 + eps, 0.5], vec![0.5, 0.5], 2).is_ok());
        assert!(SystemConfig::new(vec![0.5 + 1e-9, 0.5], vec![0.5, 0.5], 2).is_err());
    }
}

//! Experiment configuration files.
//!
//! ```toml
//! experiment = "order_study"
//! output = "results/order_study"
//!
//! [numeric]
//! steps = 2000     # or h; both must agree with t_final when all are given
//! t_final = 1.0
//! tol = 1e-8
//! seed = 42
//!
//! [params]         # per-experiment keys, see docs/experiments.md
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Numeric {
    pub steps: Option<usize>,
    pub h: Option<f64>,
    pub t_final: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub output: Option<String>,
    #[serde(default)]
    pub numeric: Numeric,
    #[serde(default)]
    pub params: toml::Table,
}

fn positive(name: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Config(format!("numeric.{name} must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if crate::find(&self.experiment).is_none() {
            return Err(CliError::Config(format!("unknown experiment '{}'", self.experiment)));
        }
        let n = &self.numeric;
        if n.steps == Some(0) {
            return Err(CliError::Config("numeric.steps must be positive".into()));
        }
        positive("h", n.h)?;
        positive("t_final", n.t_final)?;
        positive("tol", n.tol)?;
        if let (Some(steps), Some(h), Some(t)) = (n.steps, n.h, n.t_final) {
            if (steps as f64 * h - t).abs() > GRID_TOLERANCE * t {
                return Err(CliError::Config(format!("numeric: steps·h = {} does not match t_final = {t}", steps as f64 * h)));
            }
        }
        if matches!(&self.output, Some(o) if o.is_empty()) {
            return Err(CliError::Config("output prefix is empty".into()));
        }
        // Fail on malformed params before anything runs.
        crate::find(&self.experiment).expect("checked").check(&self.context())
    }

    pub fn output_prefix(&self) -> String {
        self.output.clone().unwrap_or_else(|| format!("results/{}", self.experiment))
    }

    pub fn context(&self) -> Context {
        Context {
            numeric: self.numeric.clone(),
            params: self.params.clone(),
        }
    }
}

/// What an experiment sees of its configuration.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub numeric: Numeric,
    pub params: toml::Table,
}

impl Context {
    pub fn with_params(params: toml::Table) -> Self {
        Self {
            numeric: Numeric::default(),
            params,
        }
    }

    /// The `[params]` table as an experiment-specific struct.
    pub fn params<P: DeserializeOwned>(&self) -> Result<P, CliError> {
        toml::Value::Table(self.params.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("params: {}", e.message())))
    }

    pub fn seed(&self) -> u64 {
        self.numeric.seed.unwrap_or(0)
    }

    pub fn tol(&self, default: f64) -> f64 {
        self.numeric.tol.unwrap_or(default)
    }

    /// `(T, N)` from whichever of `t_final`, `steps`, `h` are given.
    pub fn grid(&self, t_default: f64, n_default: usize) -> Result<(f64, usize), CliError> {
        let n = &self.numeric;
        match (n.t_final, n.steps, n.h) {
            (t, Some(steps), _) => Ok((t.unwrap_or(t_default), steps)),
            (t, None, Some(h)) => {
                let t = t.unwrap_or(t_default);
                let steps = (t / h).round();
                if steps < 1.0 || (steps * h - t).abs() > GRID_TOLERANCE * t {
                    return Err(CliError::Config(format!("numeric.h = {h} does not divide t_final = {t}")));
                }
                Ok((t, steps as usize))
            }
            (t, None, None) => Ok((t.unwrap_or(t_default), n_default)),
        }
    }

    /// Step size from `h`, or `t_final/steps` when both of those are given.
    pub fn step_size(&self, default: f64) -> f64 {
        let n = &self.numeric;
        match (n.h, n.t_final, n.steps) {
            (Some(h), _, _) => h,
            (None, Some(t), Some(s)) => t / s as f64,
            _ => default,
        }
    }

    pub fn steps(&self, default: usize) -> usize {
        self.numeric.steps.unwrap_or(default)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        assert!(ExperimentConfig::parse("experiment = \"order_study\"\ncolour = 1").is_err());
        assert!(ExperimentConfig::parse("experiment = \"order_study\"\n[numeric]\nstep = 1").is_err());
        assert!(ExperimentConfig::parse("experiment = \"order_study\"\n[params]\nnope = 1").is_err());
        assert!(ExperimentConfig::parse("experiment = \"nope\"").is_err());
    }

    #[test]
    fn numerics_must_be_positive_and_consistent() {
        assert!(ExperimentConfig::parse("experiment = \"type2_bvp\"\n[numeric]\nh = -0.1").is_err());
        assert!(ExperimentConfig::parse("experiment = \"type2_bvp\"\n[numeric]\nsteps = 0").is_err());
        assert!(ExperimentConfig::parse("experiment = \"type2_bvp\"\n[numeric]\nsteps = 10\nh = 0.2\nt_final = 1.0").is_err());
        let cfg = ExperimentConfig::parse("experiment = \"type2_bvp\"\n[numeric]\nsteps = 10\nh = 0.1\nt_final = 1.0").unwrap();
        assert_eq!(cfg.context().grid(3.0, 5).unwrap(), (1.0, 10));
    }

    #[test]
    fn grid_from_step_size() {
        let cfg = ExperimentConfig::parse("experiment = \"type2_bvp\"\n[numeric]\nh = 0.25").unwrap();
        assert_eq!(cfg.context().grid(1.0, 7).unwrap(), (1.0, 4));
        assert!(ExperimentConfig::parse("experiment = \"type2_bvp\"\n[numeric]\nh = 0.3").is_err());
        assert_eq!(Context::default().grid(2.0, 7).unwrap(), (2.0, 7));
    }
}

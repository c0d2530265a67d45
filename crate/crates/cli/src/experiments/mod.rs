//! Registered experiments.
//!
//! Every experiment parses its `[params]` table into its own struct (unknown
//! keys rejected), computes all of its tables in memory and returns them with
//! a set of scalar metrics. Metrics are also written as `{prefix}_summary.csv`.

mod adjoint;
mod bvp;
mod control;
mod hamel;
mod integrators;
mod optimization;

use std::collections::BTreeMap;

use hamflow::integrators::Scheme;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Context;
use crate::output::Table;
use crate::CliError;

type Runner = fn(&Context) -> Result<Outcome, CliError>;
type Checker = fn(&Context) -> Result<(), CliError>;

pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    check: Checker,
    run: Runner,
}

impl Experiment {
    /// Validate the experiment-specific part of a configuration.
    pub fn check(&self, ctx: &Context) -> Result<(), CliError> {
        (self.check)(ctx)
    }

    pub fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        (self.check)(ctx)?;
        let mut out = (self.run)(ctx)?;
        out.finish();
        Ok(out)
    }
}

pub static REGISTRY: &[Experiment] = &[
    Experiment {
        name: "completeness_table",
        description: "boundary-condition completeness of the model degenerate Hamiltonian",
        check: bvp::check_completeness,
        run: bvp::completeness_table,
    },
    Experiment {
        name: "type2_bvp",
        description: "Type II solvers against closed form, sweep vs shooting, virtual work",
        check: bvp::check_type2,
        run: bvp::type2_bvp,
    },
    Experiment {
        name: "hamel_rigid_body",
        description: "Hamel bracket, Euler equations and trivialized Type II round trip on SO(3)",
        check: hamel::check,
        run: hamel::hamel_rigid_body,
    },
    Experiment {
        name: "adjoint_gradient",
        description: "adjoint sensitivities against finite differences and matrix exponentials",
        check: adjoint::check_gradient,
        run: adjoint::adjoint_gradient,
    },
    Experiment {
        name: "diffusion_adjoint",
        description: "adjoint of semi-discrete diffusion across resolutions",
        check: adjoint::check_diffusion,
        run: adjoint::diffusion_adjoint,
    },
    Experiment {
        name: "commutativity",
        description: "discretize-then-adjoint vs adjoint-then-discretize gaps",
        check: adjoint::check_commutativity,
        run: adjoint::commutativity,
    },
    Experiment {
        name: "pontryagin_lqr",
        description: "forward-backward sweep on scalar LQR against the Riccati solution",
        check: control::check,
        run: control::pontryagin_lqr,
    },
    Experiment {
        name: "accelopt_rate",
        description: "time-adaptive Bregman dynamics: objective-gap rate and conservation",
        check: optimization::check,
        run: optimization::accelopt_rate,
    },
    Experiment {
        name: "order_study",
        description: "observed orders of discrete-Hamiltonian maps and local generating-function error",
        check: integrators::check_order,
        run: integrators::order_study,
    },
    Experiment {
        name: "noether_drift",
        description: "angular-momentum and energy drift on the central-force problem",
        check: integrators::check_noether,
        run: integrators::noether_drift,
    },
    Experiment {
        name: "symplecticity_scan",
        description: "symplecticity defects of discrete-Hamiltonian maps at random points",
        check: integrators::check_symplecticity,
        run: integrators::symplecticity_scan,
    },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    REGISTRY.iter().find(|e| e.name == name)
}

/// Tables plus scalar metrics of one run.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub metrics: BTreeMap<String, f64>,
}

impl Outcome {
    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> f64 {
        *self.metrics.get(key).unwrap_or_else(|| panic!("no metric '{key}'"))
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn finish(&mut self) {
        let mut summary = Table::new("summary", &["metric", "value"]);
        for (k, v) in &self.metrics {
            summary.push(vec![k.as_str().into(), (*v).into()]);
        }
        self.tables.push(summary);
    }
}

pub(crate) fn scheme(name: &str) -> Result<Scheme, CliError> {
    Scheme::parse(name).map_err(|e| CliError::Config(e.to_string()))
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-radius..=radius))
}

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

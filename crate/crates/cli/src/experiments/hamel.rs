use hamflow::hamel::{hamel_bracket, hamel_ivp, hamel_vector_field, rigid_body_trivialized, solve_hamel_type_ii, Trivialization, TrivializedState};
use nalgebra::DVector;
use serde::Deserialize;

use super::{config_err, rng, uniform, Outcome};
use crate::config::Context;
use crate::output::Table;
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Params {
    inertia: [f64; 3],
    triples: usize,
    q0: [f64; 3],
    mu0: [f64; 3],
    /// Radius of the random exponential coordinates (below π).
    radius: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            inertia: [1.0, 2.0, 3.0],
            triples: 100,
            q0: [0.1, 0.2, -0.1],
            mu0: [0.5, -1.0, 0.8],
            radius: 1.0,
        }
    }
}

pub(super) fn check(ctx: &Context) -> Result<(), CliError> {
    let p: Params = ctx.params()?;
    if p.inertia.iter().any(|i| !(*i > 0.0)) {
        return Err(config_err("params.inertia must be positive"));
    }
    if !(p.radius > 0.0 && p.radius < 3.0) {
        return Err(config_err("params.radius must lie in (0, 3)"));
    }
    ctx.grid(1.0, 200)?;
    Ok(())
}

fn cross(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_row_slice(&[a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])
}

pub(super) fn hamel_rigid_body(ctx: &Context) -> Result<Outcome, CliError> {
    let p: Params = ctx.params()?;
    let (t_final, steps) = ctx.grid(1.0, 200)?;
    let triv = Trivialization::so3();
    let h = rigid_body_trivialized(p.inertia);
    let inv = DVector::from_iterator(3, p.inertia.iter().map(|i| 1.0 / i));
    let mut rng = rng(ctx.seed());
    let mut out = Outcome::default();

    let mut samples = Table::new("", &["sample", "bracket_error", "euler_rhs_error"]);
    let (mut bracket, mut euler) = (0.0f64, 0.0f64);
    for i in 0..p.triples {
        let q = uniform(&mut rng, 3, p.radius);
        let (u, v) = (uniform(&mut rng, 3, 1.0), uniform(&mut rng, 3, 1.0));
        let b = (hamel_bracket(&triv, &q, &u, &v)? - cross(&u, &v)).amax();
        let pi = uniform(&mut rng, 3, 1.0);
        let omega = pi.component_mul(&inv);
        let (_, dmu) = hamel_vector_field(&h, &triv, 0.0, &TrivializedState::new(q, pi.clone()))?;
        let e = (dmu - cross(&pi, &omega)).amax();
        bracket = bracket.max(b);
        euler = euler.max(e);
        samples.push(vec![i.into(), b.into(), e.into()]);
    }
    out.metric("bracket_max_error", bracket);
    out.metric("euler_rhs_max_error", euler);

    let start = TrivializedState::new(DVector::from_row_slice(&p.q0), DVector::from_row_slice(&p.mu0));
    let fwd = hamel_ivp(&h, &triv, &start, t_final, steps)?;
    let back = solve_hamel_type_ii(&h, &triv, &start.q, &fwd.last().mu, t_final, steps)?;
    out.metric("round_trip_error", (&back.first().mu - &start.mu).amax());

    let energy = |s: &TrivializedState| h.value(0.0, &s.q, &s.mu);
    let casimir = |s: &TrivializedState| 0.5 * s.mu.norm_squared();
    let (e0, c0) = (energy(&start), casimir(&start));
    let mut trajectory = Table::new("trajectory", &["t", "q1", "q2", "q3", "mu1", "mu2", "mu3", "energy", "casimir"]);
    let (mut de, mut dc) = (0.0f64, 0.0f64);
    for (t, s) in fwd.times.iter().zip(&fwd.states) {
        de = de.max((energy(s) - e0).abs());
        dc = dc.max((casimir(s) - c0).abs());
        trajectory.push(vec![
            (*t).into(),
            s.q[0].into(),
            s.q[1].into(),
            s.q[2].into(),
            s.mu[0].into(),
            s.mu[1].into(),
            s.mu[2].into(),
            energy(s).into(),
            casimir(s).into(),
        ]);
    }
    out.metric("energy_drift", de);
    out.metric("casimir_drift", dc);
    out.tables.extend([samples, trajectory]);
    Ok(out)
}

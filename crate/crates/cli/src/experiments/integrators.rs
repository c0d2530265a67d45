use hamflow::bvp::solve_ivp;
use hamflow::fit::loglog_slope;
use hamflow::integrators::{
    estimate_order, exact_discrete_hamiltonian, exact_discrete_hamiltonian_map, map_symplecticity_defect,
    momentum_map_drift, symplecticity_defect, DiscreteHamiltonian, Reference, Scheme, Stepper,
};
use hamflow::problems::{self, angular_momentum};
use hamflow::{HamiltonianProblem, PhasePoint};
use nalgebra::dvector;
use serde::Deserialize;

use super::{config_err, rng, scheme, uniform, Outcome};
use crate::config::Context;
use crate::output::Table;
use crate::CliError;

fn problem(name: &str) -> Result<HamiltonianProblem, CliError> {
    Ok(match name {
        "oscillator" => problems::oscillator(),
        "pendulum" => problems::pendulum(),
        "central_force" => problems::central_force(),
        "free_particle" => problems::free_particle(),
        "driven_oscillator" => problems::driven_oscillator(0.5, 2.0),
        other => return Err(config_err(format!("unknown problem '{other}'"))),
    })
}

/// A scheme that has a discrete Hamiltonian.
fn variational(name: &str) -> Result<Scheme, CliError> {
    let s = scheme(name)?;
    if s == Scheme::ExplicitEuler {
        return Err(config_err(format!("'{name}' has no discrete Hamiltonian")));
    }
    Ok(s)
}

fn family(s: &Scheme, prob: &HamiltonianProblem, h: f64) -> hamflow::Result<DiscreteHamiltonian> {
    s.discrete_hamiltonian(prob, h)
        .ok_or_else(|| hamflow::Error::InvalidArgument(format!("invalid step {h}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrderRun {
    scheme: String,
    steps: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OrderParams {
    runs: Vec<OrderRun>,
    q0: f64,
    p0: f64,
    dh_scheme: String,
    dh_q0: f64,
    dh_p1: f64,
    dh_h: Vec<f64>,
}

impl Default for OrderParams {
    fn default() -> Self {
        Self {
            runs: vec![
                OrderRun { scheme: "midpoint".into(), steps: vec![10, 20, 40, 80] },
                OrderRun { scheme: "gauss2".into(), steps: vec![4, 8, 16, 32] },
            ],
            q0: 1.0,
            p0: 0.0,
            dh_scheme: "midpoint".into(),
            dh_q0: 1.0,
            dh_p1: 0.3,
            dh_h: vec![0.4, 0.2, 0.1, 0.05],
        }
    }
}

pub(super) fn check_order(ctx: &Context) -> Result<(), CliError> {
    let p: OrderParams = ctx.params()?;
    for run in &p.runs {
        variational(&run.scheme)?;
        if run.steps.len() < 3 || run.steps.contains(&0) {
            return Err(config_err(format!("run '{}' needs at least three positive step counts", run.scheme)));
        }
    }
    variational(&p.dh_scheme)?;
    if !p.runs.iter().any(|r| r.scheme == p.dh_scheme) {
        return Err(config_err("params.dh_scheme must also appear in params.runs"));
    }
    if p.dh_h.len() < 3 || p.dh_h.iter().any(|h| !(*h > 0.0)) {
        return Err(config_err("params.dh_h needs at least three positive step sizes"));
    }
    ctx.grid(1.0, 1)?;
    Ok(())
}

pub(super) fn order_study(ctx: &Context) -> Result<Outcome, CliError> {
    let p: OrderParams = ctx.params()?;
    let (t_final, _) = ctx.grid(1.0, 1)?;
    let prob = problems::oscillator();
    let z0 = PhasePoint::from_slices(&[p.q0], &[p.p0]);
    let (c, s) = (t_final.cos(), t_final.sin());
    let exact = Reference::Exact(PhasePoint::from_slices(&[c * p.q0 + s * p.p0], &[-s * p.q0 + c * p.p0]));

    let mut out = Outcome::default();
    let mut errors = Table::new("", &["scheme", "steps", "h", "error"]);
    let mut orders = Table::new("orders", &["scheme", "order"]);
    let mut dh_order = f64::NAN;
    for run in &p.runs {
        let st = variational(&run.scheme)?;
        let est = estimate_order(|h| family(&st, &prob, h), &prob, &z0, t_final, &run.steps, &exact)?;
        for (&n, (h, e)) in run.steps.iter().zip(&est.errors) {
            errors.push(vec![run.scheme.as_str().into(), n.into(), (*h).into(), (*e).into()]);
        }
        orders.push(vec![run.scheme.as_str().into(), est.order.into()]);
        out.metric(&format!("order_{}", run.scheme), est.order);
        if run.scheme == p.dh_scheme {
            dh_order = est.order;
        }
    }

    // Local error of the generating function against the exact one.
    let st = variational(&p.dh_scheme)?;
    let tol = ctx.tol(1e-12);
    let (q0, p1) = (dvector![p.dh_q0], dvector![p.dh_p1]);
    let mut local = Table::new("exact_dh", &["h", "scheme_value", "exact_value", "abs_diff"]);
    let mut points = Vec::new();
    for &h in &p.dh_h {
        let approx = family(&st, &prob, h)?.value(0.0, &q0, &p1)?;
        let exact = exact_discrete_hamiltonian(&prob, &q0, &p1, h, tol)?;
        let diff = (approx - exact).abs();
        points.push((h, diff));
        local.push(vec![h.into(), approx.into(), exact.into(), diff.into()]);
    }
    let slope = loglog_slope(&points)?;
    out.metric("exact_dh_slope", slope);
    out.metric("exact_dh_map_order", dh_order);
    out.tables.extend([errors, orders, local]);
    Ok(out)
}

fn angular_run(prob: &HamiltonianProblem, stepper: &dyn Stepper, z0: &PhasePoint, t_final: f64, steps: usize) -> Result<hamflow::Trajectory, CliError> {
    Ok(solve_ivp(prob, z0, t_final, stepper, steps)?)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct NoetherParams {
    schemes: Vec<String>,
    q0: [f64; 2],
    p0: [f64; 2],
    stride: usize,
}

impl Default for NoetherParams {
    fn default() -> Self {
        Self {
            schemes: ["midpoint", "gauss2", "symplectic_euler", "explicit_euler"].map(String::from).to_vec(),
            q0: [1.0, 0.0],
            p0: [0.0, 0.8],
            stride: 10,
        }
    }
}

pub(super) fn check_noether(ctx: &Context) -> Result<(), CliError> {
    let p: NoetherParams = ctx.params()?;
    for s in &p.schemes {
        scheme(s)?;
    }
    if p.stride == 0 {
        return Err(config_err("params.stride must be positive"));
    }
    ctx.grid(10.0, 1000)?;
    Ok(())
}

pub(super) fn noether_drift(ctx: &Context) -> Result<Outcome, CliError> {
    let p: NoetherParams = ctx.params()?;
    let (t_final, steps) = ctx.grid(10.0, 1000)?;
    let prob = problems::central_force();
    let z0 = PhasePoint::from_slices(&p.q0, &p.p0);
    let (l0, e0) = (angular_momentum(&z0), prob.energy(0.0, &z0));
    let mut out = Outcome::default();
    let mut table = Table::new("", &["scheme", "step", "t", "angular_momentum", "energy", "momentum_drift", "energy_drift"]);
    for name in &p.schemes {
        let st = scheme(name)?;
        let traj = angular_run(&prob, &st, &z0, t_final, steps)?;
        for (k, (t, z)) in traj.times.iter().zip(&traj.states).enumerate() {
            if k % p.stride == 0 || k == steps {
                let (l, e) = (angular_momentum(z), prob.energy(*t, z));
                table.push(vec![name.as_str().into(), k.into(), (*t).into(), l.into(), e.into(), (l - l0).abs().into(), (e - e0).abs().into()]);
            }
        }
        out.metric(&format!("momentum_drift_{name}"), momentum_map_drift(&traj, angular_momentum));
        out.metric(&format!("energy_drift_{name}"), momentum_map_drift(&traj, |z| prob.energy(0.0, z)));
    }
    out.tables.push(table);
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScanParams {
    problems: Vec<String>,
    maps: Vec<String>,
    control: String,
    points: usize,
    radius: f64,
    noether_steps: usize,
    noether_h: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            problems: ["oscillator", "pendulum", "central_force"].map(String::from).to_vec(),
            maps: ["midpoint", "symplectic_euler", "gauss1", "gauss2", "gauss3", "exact"].map(String::from).to_vec(),
            control: "explicit_euler".into(),
            points: 20,
            radius: 1.0,
            noether_steps: 1000,
            noether_h: 0.01,
        }
    }
}

pub(super) fn check_symplecticity(ctx: &Context) -> Result<(), CliError> {
    let p: ScanParams = ctx.params()?;
    for name in &p.problems {
        problem(name)?;
    }
    for m in &p.maps {
        if m != "exact" {
            variational(m)?;
        }
    }
    scheme(&p.control)?;
    if p.points == 0 || p.noether_steps == 0 || !(p.radius > 0.0) || !(p.noether_h > 0.0) {
        return Err(config_err("params.points, noether_steps, radius and noether_h must be positive"));
    }
    Ok(())
}

pub(super) fn symplecticity_scan(ctx: &Context) -> Result<Outcome, CliError> {
    let p: ScanParams = ctx.params()?;
    let h = ctx.step_size(0.1);
    let tol = ctx.tol(1e-12);
    let mut rng = rng(ctx.seed());
    let control = scheme(&p.control)?;
    let mut out = Outcome::default();
    let mut table = Table::new("", &["problem", "map", "point", "defect"]);
    let (mut worst, mut control_worst) = (0.0f64, 0.0f64);
    for name in &p.problems {
        let prob = problem(name)?;
        let points: Vec<PhasePoint> = (0..p.points)
            .map(|_| {
                let n = prob.dim();
                PhasePoint::new(uniform(&mut rng, n, p.radius), uniform(&mut rng, n, p.radius))
            })
            .collect();
        for m in &p.maps {
            let mut map_worst = 0.0f64;
            for (i, z) in points.iter().enumerate() {
                let d = if m == "exact" {
                    let dh = exact_discrete_hamiltonian_map(&prob, h, tol)?;
                    map_symplecticity_defect(|w| dh.step(0.0, w), z)?
                } else {
                    symplecticity_defect(&variational(m)?, &prob, 0.0, z, h)?
                };
                map_worst = map_worst.max(d);
                table.push(vec![name.as_str().into(), m.as_str().into(), i.into(), d.into()]);
            }
            out.metric(&format!("defect_{name}_{m}"), map_worst);
            worst = worst.max(map_worst);
        }
        let mut cw = 0.0f64;
        for (i, z) in points.iter().enumerate() {
            let d = symplecticity_defect(&control, &prob, 0.0, z, h)?;
            cw = cw.max(d);
            table.push(vec![name.as_str().into(), format!("control:{}", control.label()).into(), i.into(), d.into()]);
        }
        control_worst = control_worst.max(cw);
    }
    out.metric("max_defect", worst);
    out.metric("control_max_defect", control_worst);

    let prob = problems::central_force();
    let z0 = PhasePoint::from_slices(&[1.0, 0.0], &[0.0, 0.8]);
    let t_final = p.noether_h * p.noether_steps as f64;
    let mut noether = Table::new("noether", &["scheme", "steps", "h", "momentum_drift"]);
    for st in [Scheme::Midpoint, control.clone()] {
        let traj = angular_run(&prob, &st, &z0, t_final, p.noether_steps)?;
        let drift = momentum_map_drift(&traj, angular_momentum);
        noether.push(vec![st.label().into(), p.noether_steps.into(), p.noether_h.into(), drift.into()]);
        let key = if st == control { "control_momentum_drift" } else { "momentum_drift" };
        out.metric(key, drift);
    }
    out.tables.extend([table, noether]);
    Ok(out)
}

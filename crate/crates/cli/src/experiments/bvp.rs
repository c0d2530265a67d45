use std::sync::Arc;

use hamflow::adjoint::{make_adjoint_problem, nonlinear_battery};
use hamflow::bvp::{
    completeness_diagnostic, solve_shooting, solve_type_ii_sweep, virtual_work_check, BoundaryKind, BoundarySpec,
    TerminalWork, Verdict,
};
use hamflow::problems::{self, ModelParams};
use hamflow::integrators::Stepper;
use hamflow::{HamiltonianProblem, PhasePoint};
use nalgebra::{dvector, DVector};
use serde::Deserialize;

use super::{config_err, rng, scheme, uniform, Outcome};
use crate::config::Context;
use crate::output::Table;
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CompletenessParams {
    a: f64,
    g1: f64,
    g2: f64,
    base_q: [f64; 2],
    base_p: [f64; 2],
    scheme: String,
}

impl Default for CompletenessParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            g1: 0.0,
            g2: 0.0,
            base_q: [0.5, 1.0],
            base_p: [0.2, -0.3],
            scheme: "midpoint".into(),
        }
    }
}

pub(super) fn check_completeness(ctx: &Context) -> Result<(), CliError> {
    let p: CompletenessParams = ctx.params()?;
    scheme(&p.scheme)?;
    ctx.grid(1.0, 100)?;
    Ok(())
}

pub(super) fn completeness_table(ctx: &Context) -> Result<Outcome, CliError> {
    let p: CompletenessParams = ctx.params()?;
    let stepper = scheme(&p.scheme)?;
    let (t_final, steps) = ctx.grid(1.0, 100)?;
    let model = problems::model_degenerate(ModelParams { a: p.a, g1: p.g1, g2: p.g2 });
    let base = PhasePoint::from_slices(&p.base_q, &p.base_p);

    let mut out = Outcome::default();
    let mut table = Table::new("", &["boundary_type", "min_singular_value", "condition_estimate", "threshold", "verdict"]);
    for kind in BoundaryKind::TABLE {
        let r = completeness_diagnostic(&model, kind, t_final, &stepper, steps, &base)?;
        table.push(vec![
            kind.name().into(),
            r.min_singular_value.into(),
            r.condition_estimate.into(),
            r.threshold.into(),
            r.verdict.to_string().into(),
        ]);
        out.metric(&format!("min_singular_value_{}", kind.name()), r.min_singular_value);
        out.metric(&format!("complete_{}", kind.name()), f64::from(u8::from(r.verdict == Verdict::Complete)));
    }
    out.tables.push(table);
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Type2Params {
    q0: f64,
    p1: f64,
    scheme: String,
    sweep_problems: Vec<String>,
    sweep_schemes: Vec<String>,
    sweep_steps: usize,
    variations: usize,
    vw_steps: usize,
}

impl Default for Type2Params {
    fn default() -> Self {
        Self {
            q0: 1.0,
            p1: 0.2,
            scheme: "midpoint".into(),
            sweep_problems: ["linear_degenerate", "degenerate_quadratic", "drift", "zero", "adjoint_sine", "adjoint_van_der_pol"]
                .map(String::from)
                .to_vec(),
            sweep_schemes: ["midpoint", "symplectic_euler", "gauss2", "explicit_euler"].map(String::from).to_vec(),
            sweep_steps: 100,
            variations: 20,
            vw_steps: 50,
        }
    }
}

/// Maximally degenerate problems by name; `adjoint_<label>` is the adjoint
/// Hamiltonian of a battery cost problem.
fn degenerate_problem(name: &str) -> Result<HamiltonianProblem, CliError> {
    let prob = match name {
        "linear_degenerate" => problems::linear_degenerate(),
        "degenerate_quadratic" => problems::degenerate_quadratic(),
        "drift" => problems::drift(),
        "zero" => problems::zero(1),
        other => match other.strip_prefix("adjoint_") {
            Some(label) => nonlinear_battery()
                .into_iter()
                .find(|cp| cp.label() == label)
                .map(|cp| make_adjoint_problem(&cp))
                .ok_or_else(|| config_err(format!("unknown cost problem '{label}'")))?,
            None => return Err(config_err(format!("unknown degenerate problem '{other}'"))),
        },
    };
    if !prob.is_flagged_maximally_degenerate() {
        return Err(config_err(format!("'{name}' is not maximally degenerate")));
    }
    Ok(prob)
}

pub(super) fn check_type2(ctx: &Context) -> Result<(), CliError> {
    let p: Type2Params = ctx.params()?;
    scheme(&p.scheme)?;
    for s in &p.sweep_schemes {
        scheme(s)?;
    }
    for name in &p.sweep_problems {
        degenerate_problem(name)?;
    }
    if p.sweep_steps == 0 || p.vw_steps == 0 {
        return Err(config_err("params.sweep_steps and params.vw_steps must be positive"));
    }
    let (t_final, _) = ctx.grid(1.0, 2000)?;
    if (t_final.cos()).abs() < 1e-6 {
        return Err(config_err("oscillator Type II data is singular when cos T = 0"));
    }
    Ok(())
}

pub(super) fn type2_bvp(ctx: &Context) -> Result<Outcome, CliError> {
    let p: Type2Params = ctx.params()?;
    let stepper = scheme(&p.scheme)?;
    let (t_final, steps) = ctx.grid(1.0, 2000)?;
    let mut out = Outcome::default();
    let mut main = Table::new("", &["case", "problem", "scheme", "steps", "max_abs_error"]);

    // Oscillator: q(t) = q0 cos t + p0 sin t with p0 = (p1 + q0 sin T)/cos T.
    let osc = problems::oscillator();
    let bc = BoundarySpec::TypeII { q0: dvector![p.q0], p1: dvector![p.p1] };
    let traj = solve_shooting(&osc, &bc, t_final, &stepper, steps, &dvector![0.0])?;
    let p0 = (p.p1 + p.q0 * t_final.sin()) / t_final.cos();
    let mut trajectory = Table::new("trajectory", &["t", "q", "p", "q_exact", "p_exact"]);
    let mut closed_form = 0.0f64;
    for (t, z) in traj.times.iter().zip(&traj.states) {
        let (qe, pe) = (p.q0 * t.cos() + p0 * t.sin(), -p.q0 * t.sin() + p0 * t.cos());
        closed_form = closed_form.max((z.q[0] - qe).abs()).max((z.p[0] - pe).abs());
        trajectory.push(vec![(*t).into(), z.q[0].into(), z.p[0].into(), qe.into(), pe.into()]);
    }
    main.push(vec!["closed_form".into(), "oscillator".into(), stepper.label().into(), steps.into(), closed_form.into()]);
    out.metric("closed_form_max_error", closed_form);

    // Sweep against shooting with seeded boundary data.
    let mut rng = rng(ctx.seed());
    let mut sweep_gap = 0.0f64;
    for name in &p.sweep_problems {
        let prob = degenerate_problem(name)?;
        let n = prob.dim();
        let bc = BoundarySpec::TypeII { q0: uniform(&mut rng, n, 1.0), p1: uniform(&mut rng, n, 1.0) };
        for s in &p.sweep_schemes {
            let st = scheme(s)?;
            let a = solve_type_ii_sweep(&prob, &bc, t_final, &st, p.sweep_steps)?;
            let b = solve_shooting(&prob, &bc, t_final, &st, p.sweep_steps, &DVector::zeros(n))?;
            let gap = a.states.iter().zip(&b.states).map(|(x, y)| x.distance_inf(y)).fold(0.0, f64::max);
            sweep_gap = sweep_gap.max(gap);
            main.push(vec!["sweep_vs_shooting".into(), name.as_str().into(), st.label().into(), p.sweep_steps.into(), gap.into()]);
        }
    }
    out.metric("sweep_shooting_max_gap", sweep_gap);

    // d'Alembert: δS = p₁·δq(T) along seeded variations.
    let mut vw = Table::new("virtual_work", &["case", "variation", "defect", "scale", "scaled_defect"]);
    let mut worst = 0.0f64;
    let mut record = |case: &str, report: hamflow::bvp::VirtualWorkReport, vw: &mut Table| {
        for (i, (d, s)) in report.defects.iter().zip(&report.scales).enumerate() {
            worst = worst.max(d / s);
            vw.push(vec![case.into(), i.into(), (*d).into(), (*s).into(), (d / s).into()]);
        }
    };
    let pendulum = problems::pendulum();
    let pend_bc = BoundarySpec::TypeII { q0: dvector![0.3], p1: dvector![0.5] };
    let pend = solve_shooting(&pendulum, &pend_bc, t_final, &stepper, p.vw_steps, &dvector![0.0])?;
    let report = virtual_work_check(&pendulum, &stepper, &pend, &TerminalWork::Fixed(dvector![0.5]), p.variations, ctx.seed())?;
    record("pendulum", report, &mut vw);

    let quad = problems::degenerate_quadratic();
    let free = BoundarySpec::TypeIIFree { q0: dvector![0.4], section: Arc::new(|q: &DVector<f64>| 2.0 * q) };
    let sol = solve_type_ii_sweep(&quad, &free, t_final, &stepper, p.vw_steps)?;
    let cost = TerminalWork::Free(Arc::new(|q: &DVector<f64>| q.dot(q)));
    let report = virtual_work_check(&quad, &stepper, &sol, &cost, p.variations, ctx.seed().wrapping_add(1))?;
    record("free_degenerate_quadratic", report, &mut vw);
    out.metric("virtual_work_max_scaled_defect", worst);
    out.metric("virtual_work_variations", (p.variations * 2) as f64);

    out.tables.extend([main, trajectory, vw]);
    Ok(out)
}

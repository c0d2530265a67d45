use std::sync::Arc;

use hamflow::adjoint::{
    commutativity_gap, diffusion_adjoint_demo, diffusion_initial_profile, discrete_cost, gradient_check, linear_example,
    nonlinear_battery, sensitivity, sensitivity_virtual_work, AdjointScheme, CostProblem, GRADIENT_CHECK_EPS,
};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::{config_err, scheme, Outcome};
use crate::config::Context;
use crate::output::Table;
use crate::CliError;

/// `q̇ = Aq` with a damped rotation and `C = ½|q|²`.
fn damped_example() -> (CostProblem, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]);
    let cp = CostProblem::linear(
        "damped",
        a.clone(),
        DVector::from_row_slice(&[1.0, -0.5]),
        1.0,
        Arc::new(|q| 0.5 * q.norm_squared()),
        Arc::new(|q| q.clone()),
    );
    (cp, a)
}

/// `e^{AᵀT} dC(e^{AT} q₀)`.
fn exponential_oracle(cp: &CostProblem, a: &DMatrix<f64>) -> DVector<f64> {
    let forward = (a * cp.t_final).exp();
    forward.transpose() * cp.terminal_gradient(&(&forward * &cp.q0))
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradientParams {
    scheme: String,
    eps: f64,
    variations: usize,
    diffusion_nx: usize,
    diffusion_steps: usize,
    diffusion_t_final: f64,
}

impl Default for GradientParams {
    fn default() -> Self {
        Self {
            scheme: "gauss2".into(),
            eps: GRADIENT_CHECK_EPS,
            variations: 20,
            diffusion_nx: 31,
            diffusion_steps: 2000,
            diffusion_t_final: 0.1,
        }
    }
}

pub(super) fn check_gradient(ctx: &Context) -> Result<(), CliError> {
    let p: GradientParams = ctx.params()?;
    scheme(&p.scheme)?;
    if !(p.eps > 0.0) || !(p.diffusion_t_final > 0.0) {
        return Err(config_err("params.eps and params.diffusion_t_final must be positive"));
    }
    if p.diffusion_nx < 3 || p.diffusion_steps == 0 {
        return Err(config_err("params.diffusion_nx must be at least 3 and params.diffusion_steps positive"));
    }
    Ok(())
}

pub(super) fn adjoint_gradient(ctx: &Context) -> Result<Outcome, CliError> {
    let p: GradientParams = ctx.params()?;
    let stepper = scheme(&p.scheme)?;
    let steps = ctx.steps(200);
    let mut out = Outcome::default();
    let mut table = Table::new("", &["problem", "reference", "component", "gradient", "reference_value", "abs_error"]);

    let (mut battery, mut vw) = (0.0f64, 0.0f64);
    for (i, cp) in nonlinear_battery().into_iter().enumerate() {
        let cp = match ctx.numeric.t_final {
            Some(t) => cp.with_horizon(t),
            None => cp,
        };
        let (grad, _) = sensitivity(&cp, &stepper, steps)?;
        for c in 0..cp.dim() {
            let (mut qp, mut qm) = (cp.q0.clone(), cp.q0.clone());
            qp[c] += p.eps;
            qm[c] -= p.eps;
            let fd = (discrete_cost(&cp, &stepper, steps, &qp)? - discrete_cost(&cp, &stepper, steps, &qm)?) / (2.0 * p.eps);
            table.push(vec![cp.label().into(), "central_difference".into(), c.into(), grad[c].into(), fd.into(), (grad[c] - fd).abs().into()]);
        }
        let rel = gradient_check(&cp, &stepper, steps, p.eps)?;
        out.metric(&format!("gradient_check_{}", cp.label()), rel);
        battery = battery.max(rel);
        vw = vw.max(sensitivity_virtual_work(&cp, &stepper, steps, p.variations, ctx.seed().wrapping_add(i as u64))?);
    }
    out.metric("battery_max_error", battery);
    out.metric("virtual_work_max_defect", vw);

    let nilpotent = linear_example();
    let nil_a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let (damped, damped_a) = damped_example();
    let mut linear = 0.0f64;
    for (cp, a) in [(nilpotent, nil_a), (damped, damped_a)] {
        let (grad, _) = sensitivity(&cp, &stepper, steps)?;
        let oracle = exponential_oracle(&cp, &a);
        for c in 0..cp.dim() {
            let err = (grad[c] - oracle[c]).abs();
            linear = linear.max(err);
            table.push(vec![cp.label().into(), "matrix_exponential".into(), c.into(), grad[c].into(), oracle[c].into(), err.into()]);
        }
    }
    out.metric("linear_oracle_max_error", linear);

    let d = diffusion_adjoint_demo(p.diffusion_nx, p.diffusion_t_final, p.diffusion_steps)?;
    out.metric("diffusion_error", d.err_vs_oracle);
    out.metric("diffusion_nx", p.diffusion_nx as f64);
    out.tables.push(table);
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DiffusionParams {
    nx: Vec<usize>,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self { nx: vec![3, 7, 15, 31] }
    }
}

pub(super) fn check_diffusion(ctx: &Context) -> Result<(), CliError> {
    let p: DiffusionParams = ctx.params()?;
    if p.nx.is_empty() || p.nx.iter().any(|&n| n < 3) {
        return Err(config_err("params.nx needs at least one entry, each at least 3"));
    }
    ctx.grid(0.1, 2000)?;
    Ok(())
}

pub(super) fn diffusion_adjoint(ctx: &Context) -> Result<Outcome, CliError> {
    let p: DiffusionParams = ctx.params()?;
    let (t_final, steps) = ctx.grid(0.1, 2000)?;
    let mut out = Outcome::default();
    let mut table = Table::new("", &["nx", "steps", "t_final", "err_vs_oracle", "reverse_amplification"]);
    let mut gradient = Table::new("gradient", &["nx", "x", "q0", "gradient"]);
    let mut worst = 0.0f64;
    for &nx in &p.nx {
        let r = diffusion_adjoint_demo(nx, t_final, steps)?;
        worst = worst.max(r.err_vs_oracle);
        table.push(vec![nx.into(), steps.into(), t_final.into(), r.err_vs_oracle.into(), r.reverse_amplification.into()]);
        out.metric(&format!("err_nx{nx}"), r.err_vs_oracle);
        out.metric(&format!("reverse_amplification_nx{nx}"), r.reverse_amplification);
        let q0 = diffusion_initial_profile(nx);
        let dx = 1.0 / (nx + 1) as f64;
        for i in 0..nx {
            gradient.push(vec![nx.into(), ((i + 1) as f64 * dx).into(), q0[i].into(), r.grad[i].into()]);
        }
    }
    out.metric("max_err", worst);
    out.tables.extend([table, gradient]);
    Ok(out)
}

const EULER_GAP_FLOOR: f64 = 1e-12;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CommutativityParams {
    problems: Vec<String>,
    ratio_problem: String,
}

impl Default for CommutativityParams {
    fn default() -> Self {
        Self {
            problems: ["sine", "pendulum", "van_der_pol", "forced_logistic", "nilpotent"].map(String::from).to_vec(),
            ratio_problem: "sine".into(),
        }
    }
}

fn cost_problem(label: &str) -> Result<CostProblem, CliError> {
    if label == "nilpotent" {
        return Ok(linear_example());
    }
    nonlinear_battery()
        .into_iter()
        .find(|cp| cp.label() == label)
        .ok_or_else(|| config_err(format!("unknown cost problem '{label}'")))
}

pub(super) fn check_commutativity(ctx: &Context) -> Result<(), CliError> {
    let p: CommutativityParams = ctx.params()?;
    for name in &p.problems {
        cost_problem(name)?;
    }
    if !p.problems.contains(&p.ratio_problem) {
        return Err(config_err("params.ratio_problem must be one of params.problems"));
    }
    Ok(())
}

pub(super) fn commutativity(ctx: &Context) -> Result<Outcome, CliError> {
    let p: CommutativityParams = ctx.params()?;
    let base = ctx.steps(100);
    let mut out = Outcome::default();
    let mut table = Table::new("", &["problem", "scheme", "steps", "gap"]);
    let mut pair = 0.0f64;
    for name in &p.problems {
        let cp = cost_problem(name)?;
        let cp = match ctx.numeric.t_final {
            Some(t) => cp.with_horizon(t),
            None => cp,
        };
        let mut euler = Vec::new();
        for scheme in [AdjointScheme::SymplecticPair, AdjointScheme::ExplicitEuler] {
            for steps in [base, 2 * base] {
                let gap = commutativity_gap(&cp, scheme, steps)?;
                table.push(vec![name.as_str().into(), scheme.name().into(), steps.into(), gap.into()]);
                match scheme {
                    AdjointScheme::SymplecticPair => pair = pair.max(gap),
                    AdjointScheme::ExplicitEuler => euler.push(gap),
                }
            }
        }
        // Linear problems can leave nothing but round-off to compare.
        if euler[0] > EULER_GAP_FLOOR {
            let ratio = euler[0] / euler[1];
            out.metric(&format!("euler_ratio_{name}"), ratio);
            if *name == p.ratio_problem {
                out.metric("euler_ratio", ratio);
            }
        }
    }
    out.metric("symplectic_max_gap", pair);
    out.tables.push(table);
    Ok(out)
}

use hamflow::optcontrol::{pontryagin_residuals, riccati_gap, scalar_lqr, scalar_lqr_riccati, solve_fbsm, FbsmOptions};
use serde::Deserialize;

use super::{config_err, scheme, Outcome};
use crate::config::Context;
use crate::output::Table;
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Params {
    q0: f64,
    scheme: String,
    relax: f64,
    max_sweeps: usize,
    /// First-order contrast: Riccati gaps at `N` and `2N` with symplectic Euler.
    euler_steps: usize,
}

impl Default for Params {
    fn default() -> Self {
        let d = FbsmOptions::default();
        Self {
            q0: 1.0,
            scheme: "midpoint".into(),
            relax: d.relax,
            max_sweeps: d.max_sweeps,
            euler_steps: 100,
        }
    }
}

pub(super) fn check(ctx: &Context) -> Result<(), CliError> {
    let p: Params = ctx.params()?;
    scheme(&p.scheme)?;
    if !(p.relax > 0.0 && p.relax <= 1.0) {
        return Err(config_err("params.relax must lie in (0, 1]"));
    }
    if p.max_sweeps == 0 || p.euler_steps == 0 {
        return Err(config_err("params.max_sweeps and params.euler_steps must be positive"));
    }
    ctx.grid(1.0, 1000)?;
    Ok(())
}

pub(super) fn pontryagin_lqr(ctx: &Context) -> Result<Outcome, CliError> {
    let p: Params = ctx.params()?;
    let stepper = scheme(&p.scheme)?;
    let (t_final, steps) = ctx.grid(1.0, 1000)?;
    let opts = FbsmOptions {
        tol: ctx.tol(FbsmOptions::default().tol),
        max_sweeps: p.max_sweeps,
        relax: p.relax,
    };
    let cp = scalar_lqr(p.q0, t_final);
    let sol = solve_fbsm(&cp, &stepper, steps, &opts)?;
    let traj = &sol.trajectory;
    let residuals = pontryagin_residuals(&cp, &stepper, traj)?;

    let mut out = Outcome::default();
    out.metric("fbsm_residual", sol.residual);
    out.metric("sweeps", sol.sweeps as f64);
    out.metric("riccati_gap", riccati_gap(traj, p.q0, t_final));
    out.metric("pontryagin_max_residual", residuals.max());
    out.metric("state_residual", residuals.state);
    out.metric("costate_residual", residuals.costate);
    out.metric("terminal_residual", residuals.terminal);

    let euler = hamflow::integrators::Scheme::SymplecticEuler;
    let gap = |n: usize| -> Result<f64, CliError> {
        let s = solve_fbsm(&cp, &euler, n, &opts)?;
        Ok(riccati_gap(&s.trajectory, p.q0, t_final))
    };
    let (g1, g2) = (gap(p.euler_steps)?, gap(2 * p.euler_steps)?);
    out.metric("euler_gap_n", g1);
    out.metric("euler_gap_2n", g2);
    out.metric("euler_ratio", g1 / g2);

    let controls = traj.controls.as_ref().expect("FBSM returns controls");
    let mut table = Table::new("", &["t", "q", "p", "u", "q_riccati", "p_riccati", "u_riccati"]);
    for ((t, z), u) in traj.times.iter().zip(&traj.states).zip(controls) {
        let (q, pp, uu) = scalar_lqr_riccati(p.q0, t_final, *t);
        table.push(vec![(*t).into(), z.q[0].into(), z.p[0].into(), u[0].into(), q.into(), pp.into(), uu.into()]);
    }
    out.tables.push(table);
    Ok(out)
}

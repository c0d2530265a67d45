use hamflow::accelopt::{minimize, quadratic_battery, BregmanConfig, CONSERVATION_H_TAU, RATE_H_TAU};
use hamflow::fit::suffix_max;
use hamflow::integrators::Scheme;
use serde::Deserialize;

use super::{config_err, Outcome};
use crate::config::Context;
use crate::output::Table;
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Params {
    p: f64,
    p_ring: f64,
    c: f64,
    rate_h_tau: f64,
    conservation_h_tau: f64,
    /// Keep every `stride`-th iterate in the main table.
    stride: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            p: 2.0,
            p_ring: 2.0,
            c: 1.0,
            rate_h_tau: RATE_H_TAU,
            conservation_h_tau: CONSERVATION_H_TAU,
            stride: 100,
        }
    }
}

fn battery(p: &Params) -> Vec<(String, BregmanConfig)> {
    quadratic_battery()
        .into_iter()
        .map(|mut cfg| {
            cfg.p = p.p;
            cfg.p_ring = p.p_ring;
            cfg.c = p.c;
            (format!("quadratic_{}d", cfg.dim()), cfg)
        })
        .collect()
}

pub(super) fn check(ctx: &Context) -> Result<(), CliError> {
    let p: Params = ctx.params()?;
    if [p.p, p.p_ring, p.c, p.rate_h_tau, p.conservation_h_tau].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(config_err("params.p, p_ring, c, rate_h_tau and conservation_h_tau must be positive"));
    }
    if p.stride == 0 {
        return Err(config_err("params.stride must be positive"));
    }
    for (_, cfg) in battery(&p) {
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
    }
    Ok(())
}

pub(super) fn accelopt_rate(ctx: &Context) -> Result<Outcome, CliError> {
    let p: Params = ctx.params()?;
    let steps = ctx.steps(10_000);
    let mut out = Outcome::default();
    let mut iterates = Table::new("", &["problem", "step", "tau", "t", "gap", "envelope"]);
    let mut runs = Table::new("runs", &["problem", "purpose", "scheme", "h_tau", "steps", "final_t", "slope", "max_abs_hbar"]);
    let (mut worst_slope, mut worst_hbar, mut contrast) = (f64::NEG_INFINITY, 0.0f64, f64::INFINITY);

    for (name, cfg) in battery(&p) {
        let rate = minimize(&cfg, &Scheme::Midpoint, steps, p.rate_h_tau)?;
        let r = &rate.rate;
        let slope = r.slope.unwrap_or(f64::NAN);
        worst_slope = worst_slope.max(slope);
        let envelope = suffix_max(&r.gaps);
        for k in (0..=steps).filter(|k| k % p.stride == 0 || *k == steps) {
            iterates.push(vec![
                name.as_str().into(),
                k.into(),
                rate.iterates.times[k].into(),
                r.physical_times[k].into(),
                r.gaps[k].into(),
                envelope[k].into(),
            ]);
        }
        let final_t = *r.physical_times.last().expect("nonempty");
        runs.push(vec![name.as_str().into(), "rate".into(), "midpoint".into(), p.rate_h_tau.into(), steps.into(), final_t.into(), slope.into(), r.max_abs_hbar.into()]);
        out.metric(&format!("slope_{name}"), slope);

        let sym = minimize(&cfg, &Scheme::Midpoint, steps, p.conservation_h_tau)?.rate;
        let euler = minimize(&cfg, &Scheme::ExplicitEuler, steps, p.conservation_h_tau)?.rate;
        for (scheme, rr) in [("midpoint", &sym), ("explicit_euler", &euler)] {
            let t_end = *rr.physical_times.last().expect("nonempty");
            runs.push(vec![
                name.as_str().into(),
                "conservation".into(),
                scheme.into(),
                p.conservation_h_tau.into(),
                steps.into(),
                t_end.into(),
                rr.slope.unwrap_or(f64::NAN).into(),
                rr.max_abs_hbar.into(),
            ]);
        }
        worst_hbar = worst_hbar.max(sym.max_abs_hbar);
        contrast = contrast.min(euler.max_abs_hbar / sym.max_abs_hbar);
        out.metric(&format!("hbar_{name}"), sym.max_abs_hbar);
    }
    out.metric("max_slope", worst_slope);
    out.metric("max_abs_hbar", worst_hbar);
    out.metric("euler_hbar_ratio_min", contrast);
    out.tables.extend([iterates, runs]);
    Ok(out)
}

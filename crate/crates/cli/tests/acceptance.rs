//! Acceptance suite: one PASS/FAIL line per criterion, driven by the shipped
//! configs in `configs/`. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use hamflow_cli::config::ExperimentConfig;
use hamflow_cli::experiments::{find, Outcome};
use hamflow_cli::output::write_run;

const INCOMPLETE_SIGMA_MAX: f64 = 1e-10;
const COMPLETE_SIGMA_MIN: f64 = 1e-2;
const SWEEP_SHOOTING_TOL: f64 = 1e-8;
const CLOSED_FORM_TOL: f64 = 1e-6;
const VIRTUAL_WORK_TOL: f64 = 1e-6;
const MIDPOINT_ORDER: (f64, f64) = (1.8, 2.2);
const GAUSS2_MIN_ORDER: f64 = 3.8;
const SYMPLECTIC_TOL: f64 = 1e-7;
const NOETHER_TOL: f64 = 1e-10;
const DH_SLOPE_MARGIN: f64 = 0.2;
const GRADIENT_TOL: f64 = 1e-5;
const LINEAR_ORACLE_TOL: f64 = 1e-6;
const DIFFUSION_TOL: f64 = 1e-4;
const PAIR_GAP_TOL: f64 = 1e-12;
const EULER_RATIO: (f64, f64) = (1.7, 2.3);
const FBSM_TOL: f64 = 1e-8;
const RICCATI_TOL: f64 = 1e-4;
const BRACKET_TOL: f64 = 1e-8;
const EULER_RHS_TOL: f64 = 1e-12;
const ROUND_TRIP_TOL: f64 = 1e-6;
const RATE_SLOPE_MAX: f64 = -1.8;
const HBAR_TOL: f64 = 1e-8;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ExperimentConfig::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(name: &str) -> (Result<Outcome, String>, Duration) {
    let cfg = config(name);
    let start = Instant::now();
    let out = find(name).expect("registered").run(&cfg.context()).map_err(|e| e.to_string());
    (out, start.elapsed())
}

struct Suite {
    outcomes: BTreeMap<&'static str, Outcome>,
    failures: usize,
}

impl Suite {
    fn report(&mut self, id: usize, title: &str, pass: bool, detail: String) {
        println!("{} {id:>2} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }

    /// Run `name`, then judge it; a solver error fails the criterion.
    fn criterion<F>(&mut self, id: usize, title: &str, name: &'static str, limit: Option<f64>, judge: F)
    where
        F: FnOnce(&Outcome) -> (bool, String),
    {
        let (out, elapsed) = match self.outcomes.get(name) {
            Some(o) => (Ok(o.clone()), Duration::ZERO),
            None => run(name),
        };
        match out {
            Ok(o) => {
                let (mut pass, mut detail) = judge(&o);
                let secs = elapsed.as_secs_f64();
                if let Some(limit) = limit {
                    pass &= secs < limit;
                    detail.push_str(&format!("; runtime {secs:.2} s (< {limit} s)"));
                }
                self.outcomes.insert(name, o);
                self.report(id, title, pass, detail);
            }
            Err(e) => self.report(id, title, false, format!("{name} failed: {e}")),
        }
    }
}

fn main() {
    let mut s = Suite {
        outcomes: BTreeMap::new(),
        failures: 0,
    };

    s.criterion(1, "completeness verdicts of the model Hamiltonian", "completeness_table", Some(5.0), |o| {
        let want = [("Type0", true), ("TypeI", false), ("TypeII", true), ("TypeIII", true), ("TypeIV", false)];
        let mut pass = true;
        let mut parts = Vec::new();
        for (kind, complete) in want {
            let sigma = o.get(&format!("min_singular_value_{kind}"));
            let got = o.get(&format!("complete_{kind}")) == 1.0;
            pass &= got == complete && if complete { sigma >= COMPLETE_SIGMA_MIN } else { sigma <= INCOMPLETE_SIGMA_MAX };
            parts.push(format!("{kind} {} (σ_min {sigma:.2e})", if got { "complete" } else { "incomplete" }));
        }
        (pass, parts.join(", "))
    });

    s.criterion(2, "Type II solvers", "type2_bvp", Some(5.0), |o| {
        let (gap, cf) = (o.get("sweep_shooting_max_gap"), o.get("closed_form_max_error"));
        (
            gap <= SWEEP_SHOOTING_TOL && cf <= CLOSED_FORM_TOL,
            format!("sweep vs shooting {gap:.2e} (≤ {SWEEP_SHOOTING_TOL:e}); oscillator closed form {cf:.2e} (≤ {CLOSED_FORM_TOL:e})"),
        )
    });

    s.criterion(3, "d'Alembert virtual work", "type2_bvp", None, |o| {
        let d = o.get("virtual_work_max_scaled_defect");
        let n = o.get("virtual_work_variations");
        (d <= VIRTUAL_WORK_TOL && n >= 20.0, format!("max scaled defect {d:.2e} over {n} variations (≤ {VIRTUAL_WORK_TOL:e})"))
    });

    s.criterion(4, "variational integrator orders", "order_study", Some(30.0), |o| {
        let (m, g) = (o.get("order_midpoint"), o.get("order_gauss2"));
        (
            (MIDPOINT_ORDER.0..=MIDPOINT_ORDER.1).contains(&m) && g >= GAUSS2_MIN_ORDER,
            format!("midpoint {m:.4} (in [{}, {}]), gauss2 {g:.4} (≥ {GAUSS2_MIN_ORDER})", MIDPOINT_ORDER.0, MIDPOINT_ORDER.1),
        )
    });

    s.criterion(5, "symplecticity and Noether", "symplecticity_scan", None, |o| {
        let (d, cd) = (o.get("max_defect"), o.get("control_max_defect"));
        let (j, cj) = (o.get("momentum_drift"), o.get("control_momentum_drift"));
        (
            d <= SYMPLECTIC_TOL && j <= NOETHER_TOL && cd > SYMPLECTIC_TOL && cj > NOETHER_TOL,
            format!("max defect {d:.2e}, midpoint drift {j:.2e}; explicit Euler defect {cd:.2e}, drift {cj:.2e}"),
        )
    });

    s.criterion(6, "exact discrete Hamiltonian error scaling", "order_study", None, |o| {
        let (slope, order) = (o.get("exact_dh_slope"), o.get("exact_dh_map_order"));
        (slope >= order - DH_SLOPE_MARGIN, format!("slope {slope:.4} vs map order {order:.4} − {DH_SLOPE_MARGIN}"))
    });

    s.criterion(7, "adjoint gradients", "adjoint_gradient", Some(10.0), |o| {
        let (b, l, d) = (o.get("battery_max_error"), o.get("linear_oracle_max_error"), o.get("diffusion_error"));
        (
            b <= GRADIENT_TOL && l <= LINEAR_ORACLE_TOL && d <= DIFFUSION_TOL && o.get("diffusion_nx") == 31.0,
            format!("battery {b:.2e} (≤ {GRADIENT_TOL:e}), matrix exponential {l:.2e} (≤ {LINEAR_ORACLE_TOL:e}), diffusion nx=31 {d:.2e} (≤ {DIFFUSION_TOL:e})"),
        )
    });

    s.criterion(8, "discretize/adjoint commutativity", "commutativity", None, |o| {
        let gap = o.get("symplectic_max_gap");
        let ratios: Vec<(String, f64)> = o
            .metrics
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("euler_ratio_").map(|n| (n.to_string(), *v)))
            .collect();
        let ok = !ratios.is_empty() && ratios.iter().all(|(_, r)| (EULER_RATIO.0..=EULER_RATIO.1).contains(r));
        let listed: Vec<String> = ratios.iter().map(|(n, r)| format!("{n} {r:.3}")).collect();
        (gap <= PAIR_GAP_TOL && ok, format!("pair gap {gap:.2e} (≤ {PAIR_GAP_TOL:e}); Euler ratios {}", listed.join(", ")))
    });

    s.criterion(9, "Pontryagin LQR", "pontryagin_lqr", Some(10.0), |o| {
        let (r, g) = (o.get("fbsm_residual"), o.get("riccati_gap"));
        (r <= FBSM_TOL && g <= RICCATI_TOL, format!("max|D_uH| {r:.2e} (≤ {FBSM_TOL:e}), Riccati gap {g:.2e} (≤ {RICCATI_TOL:e})"))
    });

    s.criterion(10, "Hamel rigid body", "hamel_rigid_body", None, |o| {
        let (b, e, r) = (o.get("bracket_max_error"), o.get("euler_rhs_max_error"), o.get("round_trip_error"));
        (
            b <= BRACKET_TOL && e <= EULER_RHS_TOL && r <= ROUND_TRIP_TOL,
            format!("bracket {b:.2e}, Euler RHS {e:.2e}, round trip {r:.2e}"),
        )
    });

    s.criterion(11, "accelerated optimization", "accelopt_rate", None, |o| {
        let (slope, hbar) = (o.get("max_slope"), o.get("max_abs_hbar"));
        (slope <= RATE_SLOPE_MAX && hbar <= HBAR_TOL, format!("worst slope {slope:.3} (≤ {RATE_SLOPE_MAX}), max |H̄| {hbar:.2e} (≤ {HBAR_TOL:e})"))
    });

    // 12: rerun every registered experiment and compare the written CSV files.
    let dir = tempfile::tempdir().expect("temp dir");
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for exp in hamflow_cli::REGISTRY {
        let cfg = config(exp.name);
        let mut bodies = Vec::new();
        for pass in 0..2 {
            let outcome = match (pass, s.outcomes.get(exp.name)) {
                (0, Some(o)) => Ok(o.clone()),
                _ => exp.run(&cfg.context()).map_err(|e| e.to_string()),
            };
            let prefix = dir.path().join(format!("{}_{pass}", exp.name)).display().to_string();
            let files = outcome.and_then(|o| write_run(&prefix, &cfg, None, &o).map_err(|e| e.to_string()));
            bodies.push(files.map(|fs| {
                fs.iter()
                    .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                    .map(|p| std::fs::read(p).expect("written"))
                    .collect::<Vec<_>>()
            }));
        }
        match (&bodies[0], &bodies[1]) {
            (Ok(a), Ok(b)) if a == b => compared += a.len(),
            _ => mismatched.push(exp.name),
        }
    }
    let pass = mismatched.is_empty();
    let detail = if pass {
        format!("{compared} CSV files identical across reruns of {} experiments", hamflow_cli::REGISTRY.len())
    } else {
        format!("differing or failing: {}", mismatched.join(", "))
    };
    s.report(12, "determinism", pass, detail);

    if s.failures > 0 {
        println!("{} criteria failed", s.failures);
        std::process::exit(1);
    }
}

//! Boundary value problems for Hamilton's equations.
//!
//! | type | fixed data      |
//! |------|-----------------|
//! | 0    | `q(0), p(0)`    |
//! | I    | `q(0), q(T)`    |
//! | II   | `q(0), p(T)`    |
//! | III  | `p(0), q(T)`    |
//! | IV   | `p(0), p(T)`    |
//!
//! plus the free-boundary Type II problem with `p(T) = p₁(q(T))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::integrators::{StageRecord, Stepper};
use crate::newton::{newton_solve, NewtonOptions};
use crate::problem::{uniform_grid, HamiltonianProblem, PhasePoint, Trajectory};

/// A terminal momentum prescribed as a function of the terminal position.
pub type Section = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Type0,
    TypeI,
    TypeII,
    TypeIII,
    TypeIV,
    TypeIIFree,
}

impl BoundaryKind {
    pub const TABLE: [BoundaryKind; 5] = [
        BoundaryKind::Type0,
        BoundaryKind::TypeI,
        BoundaryKind::TypeII,
        BoundaryKind::TypeIII,
        BoundaryKind::TypeIV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Type0 => "Type0",
            BoundaryKind::TypeI => "TypeI",
            BoundaryKind::TypeII => "TypeII",
            BoundaryKind::TypeIII => "TypeIII",
            BoundaryKind::TypeIV => "TypeIV",
            BoundaryKind::TypeIIFree => "TypeIIFree",
        }
    }
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone)]
pub enum BoundarySpec {
    Type0 { q0: DVector<f64>, p0: DVector<f64> },
    TypeI { q0: DVector<f64>, q1: DVector<f64> },
    TypeII { q0: DVector<f64>, p1: DVector<f64> },
    TypeIII { p0: DVector<f64>, q1: DVector<f64> },
    TypeIV { p0: DVector<f64>, p1: DVector<f64> },
    TypeIIFree { q0: DVector<f64>, section: Section },
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundarySpec::{}", self.kind())
    }
}

impl BoundarySpec {
    pub fn kind(&self) -> BoundaryKind {
        match self {
            BoundarySpec::Type0 { .. } => BoundaryKind::Type0,
            BoundarySpec::TypeI { .. } => BoundaryKind::TypeI,
            BoundarySpec::TypeII { .. } => BoundaryKind::TypeII,
            BoundarySpec::TypeIII { .. } => BoundaryKind::TypeIII,
            BoundarySpec::TypeIV { .. } => BoundaryKind::TypeIV,
            BoundarySpec::TypeIIFree { .. } => BoundaryKind::TypeIIFree,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        let pair = match self {
            BoundarySpec::Type0 { q0: a, p0: b }
            | BoundarySpec::TypeI { q0: a, q1: b }
            | BoundarySpec::TypeII { q0: a, p1: b }
            | BoundarySpec::TypeIII { p0: a, q1: b }
            | BoundarySpec::TypeIV { p0: a, p1: b } => Some((a, b)),
            BoundarySpec::TypeIIFree { q0, .. } => {
                check_dim(n, q0.len(), "boundary data")?;
                None
            }
        };
        if let Some((a, b)) = pair {
            check_dim(n, a.len(), "boundary data")?;
            check_dim(n, b.len(), "boundary data")?;
        }
        Ok(())
    }

    // Initial state from the unknown initial component.
    fn initial_state(&self, unknown: &DVector<f64>) -> PhasePoint {
        match self {
            BoundarySpec::Type0 { q0, p0 } => PhasePoint::new(q0.clone(), p0.clone()),
            BoundarySpec::TypeI { q0, .. }
            | BoundarySpec::TypeII { q0, .. }
            | BoundarySpec::TypeIIFree { q0, .. } => PhasePoint::new(q0.clone(), unknown.clone()),
            BoundarySpec::TypeIII { p0, .. } | BoundarySpec::TypeIV { p0, .. } => {
                PhasePoint::new(unknown.clone(), p0.clone())
            }
        }
    }

    fn terminal_mismatch(&self, z: &PhasePoint) -> DVector<f64> {
        match self {
            BoundarySpec::Type0 { .. } => DVector::zeros(z.dim()),
            BoundarySpec::TypeI { q1, .. } | BoundarySpec::TypeIII { q1, .. } => &z.q - q1,
            BoundarySpec::TypeII { p1, .. } | BoundarySpec::TypeIV { p1, .. } => &z.p - p1,
            BoundarySpec::TypeIIFree { section, .. } => &z.p - section(&z.q),
        }
    }
}

fn check_steps(t_final: f64, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one step is required".into()));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_final}")));
    }
    Ok(t_final / steps as f64)
}

/// `N` steps of `stepper` from `z0` over `[0, T]`.
pub fn solve_ivp(
    prob: &HamiltonianProblem,
    z0: &PhasePoint,
    t_final: f64,
    stepper: &dyn Stepper,
    steps: usize,
) -> Result<Trajectory> {
    let h = check_steps(t_final, steps)?;
    check_dim(prob.dim(), z0.dim(), "initial state")?;
    let times = uniform_grid(0.0, t_final, steps);
    let mut states = Vec::with_capacity(steps + 1);
    let mut residuals = Vec::with_capacity(steps);
    states.push(z0.clone());
    for k in 0..steps {
        let r = stepper
            .advance(prob, times[k], h, &states[k])
            .map_err(|e| e.at_step(k))?;
        residuals.push(r.residual);
        states.push(r.state);
    }
    Ok(Trajectory::new(times, states, stepper.label())?.with_residuals(residuals))
}

/// Single shooting on the unknown initial component (`p(0)` for Types I, II
/// and the free variant; `q(0)` for Types III and IV).
pub fn solve_shooting(
    prob: &HamiltonianProblem,
    bc: &BoundarySpec,
    t_final: f64,
    stepper: &dyn Stepper,
    steps: usize,
    guess: &DVector<f64>,
) -> Result<Trajectory> {
    solve_shooting_with(prob, bc, t_final, stepper, steps, guess, &NewtonOptions::default().with_polish(2))
}

pub fn solve_shooting_with(
    prob: &HamiltonianProblem,
    bc: &BoundarySpec,
    t_final: f64,
    stepper: &dyn Stepper,
    steps: usize,
    guess: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<Trajectory> {
    check_steps(t_final, steps)?;
    bc.check(prob.dim())?;
    check_dim(prob.dim(), guess.len(), "shooting guess")?;
    if bc.kind() == BoundaryKind::Type0 {
        return Err(Error::InvalidArgument(
            "Type 0 data is an initial value problem; use solve_ivp".into(),
        ));
    }
    let sol = newton_solve(
        |u| {
            let traj = solve_ivp(prob, &bc.initial_state(u), t_final, stepper, steps)?;
            Ok(bc.terminal_mismatch(traj.last()))
        },
        guess,
        opts,
    )?;
    let traj = solve_ivp(prob, &bc.initial_state(&sol.x), t_final, stepper, steps)?;
    let mut meta = traj.meta.residuals.clone();
    meta.push(sol.residual);
    Ok(traj.with_residuals(meta))
}

/// Output of the Type II sweep, with the stage records of every forward
/// step (used to evaluate scheme-consistent running costs).
#[derive(Debug, Clone)]
pub struct SweepSolution {
    pub trajectory: Trajectory,
    pub stages: Vec<Option<StageRecord>>,
}

/// Forward `q`-solve then backward linear `p`-solve for a maximally
/// degenerate problem `H = ⟨p, f(t, q)⟩ + g(t, q)`. No shooting.
pub fn solve_type_ii_sweep(
    prob: &HamiltonianProblem,
    bc: &BoundarySpec,
    t_final: f64,
    stepper: &dyn Stepper,
    steps: usize,
) -> Result<Trajectory> {
    type_ii_sweep(prob, bc, t_final, stepper, steps).map(|s| s.trajectory)
}

pub fn type_ii_sweep(
    prob: &HamiltonianProblem,
    bc: &BoundarySpec,
    t_final: f64,
    stepper: &dyn Stepper,
    steps: usize,
) -> Result<SweepSolution> {
    let h = check_steps(t_final, steps)?;
    bc.check(prob.dim())?;
    if !prob.is_flagged_maximally_degenerate() {
        return Err(Error::InvalidArgument(
            "the Type II sweep needs a problem flagged maximally degenerate".into(),
        ));
    }
    let n = prob.dim();
    let q0 = match bc {
        BoundarySpec::TypeII { q0, .. } | BoundarySpec::TypeIIFree { q0, .. } => q0.clone(),
        _ => {
            return Err(Error::InvalidArgument(
                "the sweep solves Type II and free Type II problems only".into(),
            ))
        }
    };
    let times = uniform_grid(0.0, t_final, steps);
    let dh = stepper.discrete_hamiltonian(prob, h);
    let zero = DVector::zeros(n);

    let mut qs = Vec::with_capacity(steps + 1);
    let mut stages = Vec::with_capacity(steps);
    let mut residuals = Vec::with_capacity(2 * steps);
    qs.push(q0);
    for k in 0..steps {
        let (q_next, record, res) = match &dh {
            Some(dh) => {
                let e = dh.evaluate(times[k], &qs[k], &zero).map_err(|e| e.at_step(k))?;
                (e.d2, e.stages, e.residual)
            }
            None => {
                let r = stepper
                    .advance(prob, times[k], h, &PhasePoint::new(qs[k].clone(), zero.clone()))
                    .map_err(|e| e.at_step(k))?;
                (r.state.q, r.stages, r.residual)
            }
        };
        residuals.push(res);
        stages.push(record);
        qs.push(q_next);
    }

    let p_end = match bc {
        BoundarySpec::TypeII { p1, .. } => p1.clone(),
        BoundarySpec::TypeIIFree { section, .. } => section(&qs[steps]),
        _ => unreachable!(),
    };
    let mut ps = vec![DVector::zeros(n); steps + 1];
    ps[steps] = p_end;
    for k in (0..steps).rev() {
        let (pk, res) = match &dh {
            Some(dh) => {
                let e = dh.evaluate(times[k], &qs[k], &ps[k + 1]).map_err(|e| e.at_step(k))?;
                (e.d1, e.residual)
            }
            None => {
                let target = ps[k + 1].clone();
                let sol = newton_solve(
                    |p| {
                        let z = PhasePoint::new(qs[k].clone(), p.clone());
                        Ok(stepper.step(prob, times[k], h, &z)?.p - &target)
                    },
                    &target,
                    &NewtonOptions::default().with_polish(2),
                )
                .map_err(|e| e.at_step(k))?;
                (sol.x, sol.residual)
            }
        };
        residuals.push(res);
        ps[k] = pk;
    }
    let states = qs
        .into_iter()
        .zip(ps)
        .map(|(q, p)| PhasePoint::new(q, p))
        .collect();
    Ok(SweepSolution {
        trajectory: Trajectory::new(times, states, format!("sweep/{}", stepper.label()))?
            .with_residuals(residuals),
        stages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Complete,
    Incomplete,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Complete => "complete",
            Verdict::Incomplete => "incomplete",
        })
    }
}

/// Numerical surrogate for completeness: the smallest singular value of the
/// linearized shooting map against a threshold. Not a proof.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletenessReport {
    pub kind: BoundaryKind,
    pub min_singular_value: f64,
    pub condition_estimate: f64,
    pub verdict: Verdict,
    pub threshold: f64,
}

/// Relative perturbation of the flow-map finite differences.
pub const COMPLETENESS_FD_STEP: f64 = 1e-4;
/// Relative singular-value threshold: incomplete iff `σ_min ≤ 1e-8·max(1, σ_max)`.
pub const COMPLETENESS_THRESHOLD: f64 = 1e-8;

/// Central-difference Jacobian of the discrete flow map `z(0) ↦ z(T)`.
pub fn flow_jacobian(
    prob: &HamiltonianProblem,
    t_final: f64,
    stepper: &dyn Stepper,
    steps: usize,
    base: &PhasePoint,
) -> Result<DMatrix<f64>> {
    let x = base.to_vector();
    let dim = x.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut xp = x.clone();
    for i in 0..dim {
        let d = COMPLETENESS_FD_STEP * x[i].abs().max(1.0);
        let (hi, lo) = (x[i] + d, x[i] - d);
        xp[i] = hi;
        let fp = solve_ivp(prob, &PhasePoint::from_vector(&xp), t_final, stepper, steps)?.last().to_vector();
        xp[i] = lo;
        let fm = solve_ivp(prob, &PhasePoint::from_vector(&xp), t_final, stepper, steps)?.last().to_vector();
        xp[i] = x[i];
        jac.set_column(i, &((fp - fm) / (hi - lo)));
    }
    Ok(jac)
}

/// Shooting-map sensitivity block of `kind` at the flow from `base`.
pub fn completeness_diagnostic(
    prob: &HamiltonianProblem,
    kind: BoundaryKind,
    t_final: f64,
    stepper: &dyn Stepper,
    steps: usize,
    base: &PhasePoint,
) -> Result<CompletenessReport> {
    check_steps(t_final, steps)?;
    check_dim(prob.dim(), base.dim(), "base point")?;
    let n = prob.dim();
    let block = if kind == BoundaryKind::Type0 {
        DMatrix::identity(n, n)
    } else {
        let m = flow_jacobian(prob, t_final, stepper, steps, base)?;
        // Rows: fixed terminal component; columns: unknown initial component.
        let (row, col) = match kind {
            BoundaryKind::TypeI => (0, n),
            BoundaryKind::TypeII => (n, n),
            BoundaryKind::TypeIII => (0, 0),
            BoundaryKind::TypeIV => (n, 0),
            _ => {
                return Err(Error::InvalidArgument(
                    "completeness of the free problem depends on its section".into(),
                ))
            }
        };
        m.view((row, col), (n, n)).into_owned()
    };
    let sv = block.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = COMPLETENESS_THRESHOLD * smax.max(1.0);
    Ok(CompletenessReport {
        kind,
        min_singular_value: smin,
        condition_estimate: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        verdict: if smin > threshold {
            Verdict::Complete
        } else {
            Verdict::Incomplete
        },
        threshold,
    })
}

/// Discrete classical action `S_d = Σ_k [p_{k+1}·q_{k+1} − H_d^+(t_k, q_k, p_{k+1})]`
/// of a grid curve, using the generating function of `stepper`.
pub fn discrete_action(
    prob: &HamiltonianProblem,
    stepper: &dyn Stepper,
    times: &[f64],
    qs: &[DVector<f64>],
    ps: &[DVector<f64>],
) -> Result<f64> {
    let mut s = 0.0;
    for k in 0..times.len() - 1 {
        let h = times[k + 1] - times[k];
        let dh = stepper.discrete_hamiltonian(prob, h).ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no discrete Hamiltonian", stepper.label()))
        })?;
        let value = dh.value(times[k], &qs[k], &ps[k + 1]).map_err(|e| e.at_step(k))?;
        s += ps[k + 1].dot(&qs[k + 1]) - value;
    }
    Ok(s)
}

/// Right-hand side of the virtual-work test.
#[derive(Clone)]
pub enum TerminalWork {
    /// `δS = ⟨p₁, δq(T)⟩`.
    Fixed(DVector<f64>),
    /// `δ(C(q(T)) − S) = 0` with `p(T) = dC(q(T))`.
    Free(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

#[derive(Debug, Clone)]
pub struct VirtualWorkReport {
    /// `|δS − ⟨p₁, δq(T)⟩|` (or `|δ(C − S)|`) per variation.
    pub defects: Vec<f64>,
    /// `max(1, ‖p‖∞·‖δq‖∞)` per variation.
    pub scales: Vec<f64>,
}

impl VirtualWorkReport {
    pub fn max_scaled_defect(&self) -> f64 {
        self.defects
            .iter()
            .zip(&self.scales)
            .map(|(d, s)| d / s)
            .fold(0.0, f64::max)
    }
}

/// Step of the central differences taken along each variation.
pub const VIRTUAL_WORK_EPS: f64 = 1e-5;

/// Random cubic variations `δq(t) = Σ_{i=1..3} a_i (t/T)^i` (so `δq(0) = 0`)
/// and `δp(t) = Σ_{i=0..3} b_i (t/T)^i`, coefficients uniform in `[−1, 1]`.
pub fn random_variations(
    n: usize,
    times: &[f64],
    count: usize,
    seed: u64,
) -> Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_final = *times.last().expect("nonempty grid");
    (0..count)
        .map(|_| {
            let a: Vec<DVector<f64>> = (0..3)
                .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0)))
                .collect();
            let b: Vec<DVector<f64>> = (0..4)
                .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0)))
                .collect();
            let dq = times
                .iter()
                .map(|t| {
                    let s = t / t_final;
                    &a[0] * s + &a[1] * s.powi(2) + &a[2] * s.powi(3)
                })
                .collect();
            let dp = times
                .iter()
                .map(|t| {
                    let s = t / t_final;
                    &b[0] + &b[1] * s + &b[2] * s.powi(2) + &b[3] * s.powi(3)
                })
                .collect();
            (dq, dp)
        })
        .collect()
}

/// Check the d'Alembert identity on a converged Type II trajectory by
/// central differences of the discrete action along seeded variations.
pub fn virtual_work_check(
    prob: &HamiltonianProblem,
    stepper: &dyn Stepper,
    traj: &Trajectory,
    terminal: &TerminalWork,
    count: usize,
    seed: u64,
) -> Result<VirtualWorkReport> {
    let n = prob.dim();
    let qs: Vec<_> = traj.states.iter().map(|z| z.q.clone()).collect();
    let ps: Vec<_> = traj.states.iter().map(|z| z.p.clone()).collect();
    let pmax = ps.iter().map(|p| p.amax()).fold(0.0, f64::max);
    let mut report = VirtualWorkReport {
        defects: Vec::with_capacity(count),
        scales: Vec::with_capacity(count),
    };
    let eps = VIRTUAL_WORK_EPS;
    for (dq, dp) in random_variations(n, &traj.times, count, seed) {
        let shifted = |sign: f64| -> Result<f64> {
            let q: Vec<_> = qs.iter().zip(&dq).map(|(q, d)| q + sign * eps * d).collect();
            let p: Vec<_> = ps.iter().zip(&dp).map(|(p, d)| p + sign * eps * d).collect();
            let s = discrete_action(prob, stepper, &traj.times, &q, &p)?;
            Ok(match terminal {
                TerminalWork::Fixed(_) => s,
                TerminalWork::Free(c) => c(q.last().expect("nonempty")) - s,
            })
        };
        let derivative = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps);
        let dq_end = dq.last().expect("nonempty");
        let defect = match terminal {
            TerminalWork::Fixed(p1) => (derivative - p1.dot(dq_end)).abs(),
            TerminalWork::Free(_) => derivative.abs(),
        };
        let dq_max = dq.iter().map(|d| d.amax()).fold(0.0, f64::max);
        report.defects.push(defect);
        report.scales.push((pmax * dq_max).max(1.0));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::Scheme;
    use crate::problems::{self, ModelParams};
    use nalgebra::dvector;
    use std::f64::consts::{E, FRAC_PI_2};

    #[test]
    fn ivp_examples() {
        let traj = solve_ivp(&problems::oscillator(), &PhasePoint::from_slices(&[1.0], &[0.0]), FRAC_PI_2, &Scheme::Midpoint, 2000).unwrap();
        assert!(traj.last().distance_inf(&PhasePoint::from_slices(&[0.0], &[-1.0])) < 1e-5);
        let traj = solve_ivp(&problems::linear_degenerate(), &PhasePoint::from_slices(&[1.0], &[1.0]), 1.0, &Scheme::Midpoint, 2000).unwrap();
        assert!(traj.last().distance_inf(&PhasePoint::from_slices(&[E], &[1.0 / E])) < 1e-5);
        let z0 = PhasePoint::from_slices(&[0.3], &[-0.2]);
        let traj = solve_ivp(&problems::zero(1), &z0, 1.0, &Scheme::Midpoint, 1).unwrap();
        assert_eq!(traj.last(), &z0);
        assert!(solve_ivp(&problems::zero(1), &z0, 1.0, &Scheme::Midpoint, 0).is_err());
    }

    #[test]
    fn type_ii_oscillator_shooting() {
        // q(0) = 1, p(1) = 0: p(0) = (p1 + q0 sin T)/cos T = tan 1.
        let bc = BoundarySpec::TypeII { q0: dvector![1.0], p1: dvector![0.0] };
        let traj = solve_shooting(&problems::oscillator(), &bc, 1.0, &Scheme::Midpoint, 2000, &dvector![0.0]).unwrap();
        assert!((traj.first().p[0] - 1f64.tan()).abs() < 1e-6);
        assert!(traj.last().p[0].abs() < 1e-10);
    }

    #[test]
    fn type_i_oscillator_and_model() {
        let bc = BoundarySpec::TypeI { q0: dvector![1.0], q1: dvector![0.0] };
        let traj = solve_shooting(&problems::oscillator(), &bc, FRAC_PI_2, &Scheme::Midpoint, 500, &dvector![0.3]).unwrap();
        assert!(traj.last().q[0].abs() <= 1e-8);
        // q = cos t + c sin t with q(π/2) = 0 gives c = 0, so p(0) = 0.
        assert!(traj.first().p[0].abs() < 1e-5);

        let model = problems::model_degenerate(ModelParams::default());
        let bc = BoundarySpec::TypeI { q0: dvector![1.0, 1.0], q1: dvector![0.5, 2.0] };
        let err = solve_shooting(&model, &bc, 1.0, &Scheme::Midpoint, 50, &dvector![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }), "{err}");
    }

    #[test]
    fn sweep_examples() {
        let bc = BoundarySpec::TypeII { q0: dvector![1.0], p1: dvector![1.0] };
        let traj = solve_type_ii_sweep(&problems::linear_degenerate(), &bc, 1.0, &Scheme::Midpoint, 2000).unwrap();
        assert!((traj.last().q[0] - E).abs() < 1e-6);
        assert!((traj.first().p[0] - E).abs() < 1e-6);

        let traj = solve_type_ii_sweep(&problems::zero(1), &bc, 1.0, &Scheme::Midpoint, 10).unwrap();
        assert!(traj.states.iter().all(|z| z.q[0] == 1.0 && z.p[0] == 1.0));

        let free = BoundarySpec::TypeIIFree { q0: dvector![1.0], section: Arc::new(|q: &DVector<f64>| q.clone()) };
        let traj = solve_type_ii_sweep(&problems::linear_degenerate(), &free, 1.0, &Scheme::Midpoint, 2000).unwrap();
        assert!((traj.last().p[0] - E).abs() < 1e-5);
        assert!((traj.first().p[0] - E * E).abs() < 1e-5);

        let err = solve_type_ii_sweep(&problems::oscillator(), &bc, 1.0, &Scheme::Midpoint, 10).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn sweep_matches_shooting() {
        let bc = BoundarySpec::TypeII { q0: dvector![0.7], p1: dvector![-0.4] };
        for scheme in [Scheme::Midpoint, Scheme::SymplecticEuler, Scheme::ExplicitEuler] {
            let prob = problems::degenerate_quadratic();
            let a = solve_type_ii_sweep(&prob, &bc, 1.0, &scheme, 100).unwrap();
            let b = solve_shooting(&prob, &bc, 1.0, &scheme, 100, &dvector![0.0]).unwrap();
            for (x, y) in a.states.iter().zip(&b.states) {
                assert!(x.distance_inf(y) < 1e-9, "{}", scheme.label());
            }
        }
    }

    #[test]
    fn table_two_verdicts() {
        let model = problems::model_degenerate(ModelParams::default());
        let base = PhasePoint::from_slices(&[0.5, 1.0], &[0.2, -0.3]);
        let verdicts: Vec<_> = BoundaryKind::TABLE
            .iter()
            .map(|&k| completeness_diagnostic(&model, k, 1.0, &Scheme::Midpoint, 100, &base).unwrap())
            .collect();
        let want = [Verdict::Complete, Verdict::Incomplete, Verdict::Complete, Verdict::Complete, Verdict::Incomplete];
        for (r, w) in verdicts.iter().zip(want) {
            assert_eq!(r.verdict, w, "{:?}", r);
            match w {
                Verdict::Incomplete => assert!(r.min_singular_value <= 1e-10),
                Verdict::Complete => assert!(r.min_singular_value >= 1e-2),
            }
        }
    }

    #[test]
    fn type_iv_with_quadratic_running_term() {
        // g = q_d²/2: ∂p_d(T)/∂q_d(0) = −sinh T couples the blocks.
        let model = problems::model_degenerate(ModelParams { a: 1.0, g1: 0.0, g2: 1.0 });
        let base = PhasePoint::from_slices(&[0.5, 1.0], &[0.2, -0.3]);
        let m = flow_jacobian(&model, 1.0, &Scheme::Midpoint, 200, &base).unwrap();
        assert!((m[(3, 1)] + 1f64.sinh()).abs() < 1e-4, "{}", m[(3, 1)]);
        let r = completeness_diagnostic(&model, BoundaryKind::TypeIV, 1.0, &Scheme::Midpoint, 200, &base).unwrap();
        assert_eq!(r.verdict, Verdict::Complete);
    }

    #[test]
    fn type_iii_is_type_ii_reversed() {
        let prob = problems::driven_oscillator(0.5, 2.0);
        let t_final = 1.0;
        let bc3 = BoundarySpec::TypeIII { p0: dvector![0.3], q1: dvector![-0.2] };
        let fwd = solve_shooting(&prob, &bc3, t_final, &Scheme::Midpoint, 200, &dvector![0.0]).unwrap();
        let rev = prob.time_reversed(t_final);
        let bc2 = BoundarySpec::TypeII { q0: dvector![-0.2], p1: dvector![0.3] };
        let bwd = solve_shooting(&rev, &bc2, t_final, &Scheme::Midpoint, 200, &dvector![0.0]).unwrap();
        for (a, b) in fwd.states.iter().zip(bwd.states.iter().rev()) {
            assert!(a.distance_inf(b) < 1e-9);
        }
    }

    #[test]
    fn dalembert_identity() {
        let prob = problems::pendulum();
        let p1 = dvector![0.5];
        let bc = BoundarySpec::TypeII { q0: dvector![0.3], p1: p1.clone() };
        let traj = solve_shooting(&prob, &bc, 1.0, &Scheme::Midpoint, 50, &dvector![0.0]).unwrap();
        let report = virtual_work_check(&prob, &Scheme::Midpoint, &traj, &TerminalWork::Fixed(p1), 20, 7).unwrap();
        assert!(report.max_scaled_defect() <= 1e-6, "{:?}", report.defects);
    }

    #[test]
    fn free_boundary_stationarity() {
        let prob = problems::degenerate_quadratic();
        let free = BoundarySpec::TypeIIFree { q0: dvector![0.4], section: Arc::new(|q: &DVector<f64>| 2.0 * q) };
        let traj = solve_type_ii_sweep(&prob, &free, 1.0, &Scheme::Midpoint, 50).unwrap();
        let cost = TerminalWork::Free(Arc::new(|q: &DVector<f64>| q.dot(q)));
        let report = virtual_work_check(&prob, &Scheme::Midpoint, &traj, &cost, 20, 11).unwrap();
        assert!(report.max_scaled_defect() <= 1e-6, "{:?}", report.defects);
    }
}

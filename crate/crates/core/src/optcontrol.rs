//! Fixed-horizon optimal control through the Pontryagin conditions.
//!
//! With `H(t, q, p, u) = ⟨p, f(t, q, u)⟩ + g(t, q, u)` an optimal pair
//! satisfies `q̇ = D_pH`, `ṗ = −D_qH`, `q(0) = q₀`, `p(T) = dC(q(T))` and
//! stationarity `D_uH = 0`. The forward–backward sweep freezes `u`, solves
//! the state and costate with the adjoint sweep, and moves `u` against
//! `D_uH`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::adjoint::{sensitivity, CostProblem};
use crate::error::{check_dim, Error, Result};
use crate::integrators::Stepper;
use crate::problem::{uniform_grid, Trajectory};

type Dynamics = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type DynamicsJacobian = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type RunningCost = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type Terminal = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type TerminalGradient = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

const FD_STEP: f64 = 6.0554544523933395e-6; // cbrt(f64::EPSILON)

fn perturb(x: &DVector<f64>, j: usize, d: f64) -> DVector<f64> {
    let mut y = x.clone();
    y[j] += d;
    y
}

fn fd_jacobian_u(f: &Dynamics, t: f64, q: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    let mut out = DMatrix::zeros(n, u.len());
    for j in 0..u.len() {
        let d = FD_STEP * u[j].abs().max(1.0);
        out.set_column(j, &((f(t, q, &perturb(u, j, d)) - f(t, q, &perturb(u, j, -d))) / (2.0 * d)));
    }
    out
}

fn fd_jacobian_q(f: &Dynamics, t: f64, q: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(q.len(), q.len());
    for j in 0..q.len() {
        let d = FD_STEP * q[j].abs().max(1.0);
        out.set_column(j, &((f(t, &perturb(q, j, d), u) - f(t, &perturb(q, j, -d), u)) / (2.0 * d)));
    }
    out
}

fn fd_gradient(g: &RunningCost, t: f64, q: &DVector<f64>, u: &DVector<f64>, wrt_u: bool) -> DVector<f64> {
    let x = if wrt_u { u } else { q };
    DVector::from_fn(x.len(), |j, _| {
        let d = FD_STEP * x[j].abs().max(1.0);
        let (a, b) = if wrt_u {
            (g(t, q, &perturb(u, j, d)), g(t, q, &perturb(u, j, -d)))
        } else {
            (g(t, &perturb(q, j, d), u), g(t, &perturb(q, j, -d), u))
        };
        (a - b) / (2.0 * d)
    })
}

/// `min C(q(T)) + ∫ g(t, q, u) dt` subject to `q̇ = f(t, q, u)`, `q(0) = q₀`.
#[derive(Clone)]
pub struct ControlProblem {
    label: String,
    f: Dynamics,
    dfq: DynamicsJacobian,
    dfu: DynamicsJacobian,
    g: RunningCost,
    dgq: Dynamics,
    dgu: Dynamics,
    c: Terminal,
    dc: TerminalGradient,
    pub q0: DVector<f64>,
    pub t_final: f64,
    pub u_dim: usize,
    /// Initial control guess; constant in time.
    pub u_init: DVector<f64>,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("label", &self.label)
            .field("q0", &self.q0)
            .field("t_final", &self.t_final)
            .field("u_dim", &self.u_dim)
            .finish()
    }
}

impl ControlProblem {
    /// Derivatives of `f` and `g` default to central differences; the
    /// initial control guess is zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F, G, C, DC>(label: &str, q0: DVector<f64>, t_final: f64, u_dim: usize, f: F, g: G, c: C, dc: DC) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        C: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        DC: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let f: Dynamics = Arc::new(f);
        let g: RunningCost = Arc::new(g);
        let (f1, f2, g1, g2) = (f.clone(), f.clone(), g.clone(), g.clone());
        Self {
            label: label.into(),
            dfq: Arc::new(move |t, q, u| fd_jacobian_q(&f1, t, q, u)),
            dfu: Arc::new(move |t, q, u| fd_jacobian_u(&f2, t, q, u)),
            dgq: Arc::new(move |t, q, u| fd_gradient(&g1, t, q, u, false)),
            dgu: Arc::new(move |t, q, u| fd_gradient(&g2, t, q, u, true)),
            f,
            g,
            c: Arc::new(c),
            dc: Arc::new(dc),
            q0,
            t_final,
            u_dim,
            u_init: DVector::zeros(u_dim),
        }
    }

    /// Analytic `(D_qf, D_uf)`.
    pub fn with_df<Q, U>(mut self, dfq: Q, dfu: U) -> Self
    where
        Q: Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        U: Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.dfq = Arc::new(dfq);
        self.dfu = Arc::new(dfu);
        self
    }

    /// Analytic `(D_qg, D_ug)`.
    pub fn with_dg<Q, U>(mut self, dgq: Q, dgu: U) -> Self
    where
        Q: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        U: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.dgq = Arc::new(dgq);
        self.dgu = Arc::new(dgu);
        self
    }

    pub fn with_initial_control(mut self, u: DVector<f64>) -> Self {
        self.u_init = u;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    pub fn f(&self, t: f64, q: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(t, q, u)
    }

    pub fn g(&self, t: f64, q: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.g)(t, q, u)
    }

    pub fn terminal_cost(&self, q: &DVector<f64>) -> f64 {
        (self.c)(q)
    }

    pub fn terminal_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.dc)(q)
    }

    /// `D_uH = D_ufᵀp + D_ug`.
    pub fn d_u_hamiltonian(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.dfu)(t, q, u).tr_mul(p) + (self.dgu)(t, q, u)
    }

    /// Check dimensions and `dC` against central differences (relative 1e-6).
    pub fn validate(&self) -> Result<()> {
        check_dim(self.u_dim, self.u_init.len(), "initial control")?;
        let u = &self.u_init;
        check_dim(self.dim(), self.f(0.0, &self.q0, u).len(), "dynamics output")?;
        let dc = self.terminal_gradient(&self.q0);
        check_dim(self.dim(), dc.len(), "terminal gradient")?;
        for j in 0..self.dim() {
            let d = FD_STEP * self.q0[j].abs().max(1.0);
            let fd = (self.terminal_cost(&perturb(&self.q0, j, d)) - self.terminal_cost(&perturb(&self.q0, j, -d))) / (2.0 * d);
            if (fd - dc[j]).abs() > 1e-6 * (1.0 + fd.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "dC of '{}' disagrees with finite differences",
                    self.label
                )));
            }
        }
        if !(self.t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", self.t_final)));
        }
        Ok(())
    }
}

/// `(t, q, p, u) ↦ ⟨p, f(t, q, u)⟩ + g(t, q, u)`.
pub fn control_hamiltonian(
    cp: &ControlProblem,
) -> impl Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static {
    let (f, g) = (cp.f.clone(), cp.g.clone());
    move |t, q, p, u| p.dot(&f(t, q, u)) + g(t, q, u)
}

/// Piecewise-linear interpolation of node values on a uniform grid.
fn interpolate(times: &[f64], values: &[DVector<f64>], t: f64) -> DVector<f64> {
    let n = times.len() - 1;
    let (t0, t1) = (times[0], times[n]);
    let s = ((t - t0) / (t1 - t0) * n as f64).clamp(0.0, n as f64);
    let k = (s.floor() as usize).min(n.saturating_sub(1));
    let w = s - k as f64;
    if n == 0 {
        return values[0].clone();
    }
    (1.0 - w) * &values[k] + w * &values[k + 1]
}

/// The cost problem obtained by freezing `u` to the piecewise-linear
/// interpolant of `controls` on `times`.
pub fn frozen_cost_problem(cp: &ControlProblem, times: &[f64], controls: &[DVector<f64>]) -> CostProblem {
    let u: Arc<(Vec<f64>, Vec<DVector<f64>>)> = Arc::new((times.to_vec(), controls.to_vec()));
    let (u1, u2, u3, u4) = (u.clone(), u.clone(), u.clone(), u.clone());
    let (f, g, dfq, dgq) = (cp.f.clone(), cp.g.clone(), cp.dfq.clone(), cp.dgq.clone());
    let (c, dc) = (cp.c.clone(), cp.dc.clone());
    CostProblem::new(
        &format!("{}_frozen", cp.label),
        cp.q0.clone(),
        cp.t_final,
        move |t, q| f(t, q, &interpolate(&u1.0, &u1.1, t)),
        move |t, q| g(t, q, &interpolate(&u2.0, &u2.1, t)),
        move |q| c(q),
        move |q| dc(q),
    )
    .with_df(move |t, q| dfq(t, q, &interpolate(&u3.0, &u3.1, t)))
    .with_dg(move |t, q| dgq(t, q, &interpolate(&u4.0, &u4.1, t)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbsmOptions {
    /// Stop when `max_k |D_uH(t_k)|∞ ≤ tol`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Damping of the control update, in `(0, 1]`.
    pub relax: f64,
}

impl Default for FbsmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 500,
            relax: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FbsmSolution {
    /// States `(q_k, p_k)` with controls `u_k` at the grid nodes.
    pub trajectory: Trajectory,
    /// `max_k |D_uH(t_k)|∞`.
    pub residual: f64,
    pub sweeps: usize,
}

fn stationarity(cp: &ControlProblem, traj: &Trajectory, controls: &[DVector<f64>]) -> (Vec<DVector<f64>>, f64) {
    let grads: Vec<_> = traj
        .times
        .iter()
        .zip(&traj.states)
        .zip(controls)
        .map(|((&t, z), u)| cp.d_u_hamiltonian(t, &z.q, &z.p, u))
        .collect();
    let worst = grads.iter().map(|g| g.amax()).fold(0.0, f64::max);
    (grads, worst)
}

/// Forward–backward sweep with the update `u ← u − relax·D_uH` at the
/// nodes. On failure returns `NoConvergence` whose `best` holds the
/// controls of the best sweep, stacked node by node.
pub fn solve_fbsm(cp: &ControlProblem, stepper: &dyn Stepper, steps: usize, opts: &FbsmOptions) -> Result<FbsmSolution> {
    cp.validate()?;
    if !(opts.relax > 0.0 && opts.relax <= 1.0) {
        return Err(Error::InvalidArgument(format!("relax must lie in (0, 1], got {}", opts.relax)));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let times = uniform_grid(0.0, cp.t_final, steps);
    let mut controls = vec![cp.u_init.clone(); steps + 1];
    let mut best = (f64::INFINITY, controls.clone());
    for sweep in 1..=opts.max_sweeps {
        let (_, traj) = sensitivity(&frozen_cost_problem(cp, &times, &controls), stepper, steps)?;
        let (grads, residual) = stationarity(cp, &traj, &controls);
        if !residual.is_finite() {
            break;
        }
        if residual < best.0 {
            best = (residual, controls.clone());
        }
        if residual <= opts.tol {
            let trajectory = Trajectory::new(times, traj.states, format!("fbsm/{}", stepper.label()))?
                .with_controls(controls)?
                .with_residuals(traj.meta.residuals);
            return Ok(FbsmSolution {
                trajectory,
                residual,
                sweeps: sweep,
            });
        }
        for (u, g) in controls.iter_mut().zip(&grads) {
            *u -= opts.relax * g;
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_sweeps,
        residual: best.0,
        best: DVector::from_iterator(best.1.len() * cp.u_dim, best.1.iter().flat_map(|u| u.iter().copied())),
    })
}

/// The five Pontryagin residuals on a grid solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PontryaginResiduals {
    /// `max_k |q_{k+1} − Ψ_h(q_k)|∞`, `Ψ_h` the stepper's state map.
    pub state: f64,
    /// `max_k |p_k − (backward costate step)(q_k, p_{k+1})|∞`.
    pub costate: f64,
    pub stationarity: f64,
    pub initial: f64,
    pub terminal: f64,
}

impl PontryaginResiduals {
    pub fn max(&self) -> f64 {
        [self.state, self.costate, self.stationarity, self.initial, self.terminal]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Recompute every Pontryagin condition on an FBSM trajectory.
pub fn pontryagin_residuals(cp: &ControlProblem, stepper: &dyn Stepper, traj: &Trajectory) -> Result<PontryaginResiduals> {
    let controls = traj
        .controls
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory carries no controls".into()))?;
    let steps = traj.len() - 1;
    let h = cp.t_final / steps as f64;
    let frozen = frozen_cost_problem(cp, &traj.times, controls);
    let prob = crate::adjoint::make_adjoint_problem(&frozen);
    let dh = stepper.discrete_hamiltonian(&prob, h);
    let zero = DVector::zeros(cp.dim());
    let (mut state, mut costate) = (0.0f64, 0.0f64);
    for k in 0..steps {
        let (t, z, next) = (traj.times[k], &traj.states[k], &traj.states[k + 1]);
        let (q_next, p_prev) = match &dh {
            Some(dh) => (dh.d2(t, &z.q, &zero)?, dh.d1(t, &z.q, &next.p)?),
            None => {
                let (dq, _) = crate::problem::hamiltonian_vector_field(&prob, t, z)?;
                let stepped = stepper.step(&prob, t, h, z)?;
                (&z.q + h * dq, &z.p + (&next.p - stepped.p))
            }
        };
        state = state.max((q_next - &next.q).amax());
        costate = costate.max((p_prev - &z.p).amax());
    }
    let (_, stationarity) = stationarity(cp, traj, controls);
    let last = traj.last();
    Ok(PontryaginResiduals {
        state,
        costate,
        stationarity,
        initial: (&traj.first().q - &cp.q0).amax(),
        terminal: (&last.p - cp.terminal_gradient(&last.q)).amax(),
    })
}

/// Scalar LQR `q̇ = u`, `g = ½(q² + u²)`, `C = 0`, `q(0) = q₀`.
pub fn scalar_lqr(q0: f64, t_final: f64) -> ControlProblem {
    use nalgebra::dvector;
    ControlProblem::new(
        "scalar_lqr",
        dvector![q0],
        t_final,
        1,
        |_, _, u| u.clone(),
        |_, q, u| 0.5 * (q[0] * q[0] + u[0] * u[0]),
        |_| 0.0,
        |_| dvector![0.0],
    )
    .with_df(|_, _, _| DMatrix::zeros(1, 1), |_, _, _| DMatrix::identity(1, 1))
    .with_dg(|_, q, _| q.clone(), |_, _, u| u.clone())
}

/// Optimal feedback of [`scalar_lqr`] from the Riccati equation
/// `Ṗ = P² − 1`, `P(T) = 0`, so `P(t) = tanh(T − t)`; returns
/// `(q*(t), p*(t), u*(t))` with `p* = Pq*`, `u* = −Pq*`.
pub fn scalar_lqr_riccati(q0: f64, t_final: f64, t: f64) -> (f64, f64, f64) {
    let q = q0 * (t_final - t).cosh() / t_final.cosh();
    let p = (t_final - t).tanh() * q;
    (q, p, -p)
}

/// `max_k max(|q_k − q*(t_k)|, |u_k − u*(t_k)|)` for a scalar LQR solution.
pub fn riccati_gap(traj: &Trajectory, q0: f64, t_final: f64) -> f64 {
    let controls = traj.controls.as_ref().expect("controls");
    traj.times
        .iter()
        .zip(&traj.states)
        .zip(controls)
        .map(|((&t, z), u)| {
            let (q, _, us) = scalar_lqr_riccati(q0, t_final, t);
            (z.q[0] - q).abs().max((u[0] - us).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::Scheme;
    use nalgebra::dvector;

    fn rk4_riccati(t_final: f64, steps: usize) -> Vec<f64> {
        // P on the uniform grid by backward RK4 on Ṗ = P² − 1.
        let h = t_final / steps as f64;
        let rhs = |p: f64| p * p - 1.0;
        let mut out = vec![0.0; steps + 1];
        for k in (0..steps).rev() {
            let p = out[k + 1];
            let k1 = rhs(p);
            let k2 = rhs(p - 0.5 * h * k1);
            let k3 = rhs(p - 0.5 * h * k2);
            let k4 = rhs(p - h * k3);
            out[k] = p - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out
    }

    #[test]
    fn riccati_closed_form_matches_rk4() {
        let p = rk4_riccati(1.0, 1000);
        for (k, pk) in p.iter().enumerate() {
            let t = k as f64 / 1000.0;
            assert!((pk - (1.0 - t).tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let cp = ControlProblem::new(
            "lq",
            dvector![0.0],
            1.0,
            1,
            |_, _, u| u.clone(),
            |_, _, u| 0.5 * u[0] * u[0],
            |_| 0.0,
            |_| dvector![0.0],
        );
        let h = control_hamiltonian(&cp);
        assert_eq!(h(0.0, &dvector![0.3], &dvector![2.0], &dvector![1.0]), 2.5);
        let d = cp.d_u_hamiltonian(0.0, &dvector![0.3], &dvector![2.0], &dvector![1.0]);
        assert!((d[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn lqr_matches_riccati() {
        let cp = scalar_lqr(1.0, 1.0);
        let sol = solve_fbsm(&cp, &Scheme::Midpoint, 1000, &FbsmOptions::default()).unwrap();
        assert!(sol.residual <= 1e-8);
        assert!(riccati_gap(&sol.trajectory, 1.0, 1.0) < 1e-4);
        let r = pontryagin_residuals(&cp, &Scheme::Midpoint, &sol.trajectory).unwrap();
        assert!(r.max() <= 1e-8, "{r:?}");
    }

    #[test]
    fn euler_sweep_is_first_order() {
        let cp = scalar_lqr(1.0, 1.0);
        let gap = |n| {
            let sol = solve_fbsm(&cp, &Scheme::SymplecticEuler, n, &FbsmOptions::default()).unwrap();
            riccati_gap(&sol.trajectory, 1.0, 1.0)
        };
        let ratio = gap(100) / gap(200);
        assert!((1.6..=2.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn uncontrolled_problem_converges_at_once() {
        let cp = ControlProblem::new(
            "idle",
            dvector![0.4],
            1.0,
            1,
            |_, q, _| DVector::zeros(q.len()),
            |_, _, u| 0.5 * u[0] * u[0],
            |_| 0.0,
            |_| dvector![0.0],
        );
        let sol = solve_fbsm(&cp, &Scheme::Midpoint, 50, &FbsmOptions::default()).unwrap();
        assert_eq!(sol.sweeps, 1);
        assert!(sol.residual <= 1e-8);
    }

    #[test]
    fn consistent_with_adjoint_sweep() {
        let cp = scalar_lqr(1.0, 1.0);
        let sol = solve_fbsm(&cp, &Scheme::Midpoint, 200, &FbsmOptions::default()).unwrap();
        let traj = &sol.trajectory;
        let frozen = frozen_cost_problem(&cp, &traj.times, traj.controls.as_ref().unwrap());
        let (_, again) = sensitivity(&frozen, &Scheme::Midpoint, 200).unwrap();
        let gap = traj
            .states
            .iter()
            .zip(&again.states)
            .map(|(a, b)| a.distance_inf(b))
            .fold(0.0, f64::max);
        assert!(gap <= 1e-7);
    }

    #[test]
    fn reports_best_iterate() {
        let cp = scalar_lqr(1.0, 1.0);
        let opts = FbsmOptions {
            max_sweeps: 3,
            ..FbsmOptions::default()
        };
        match solve_fbsm(&cp, &Scheme::Midpoint, 20, &opts) {
            Err(Error::NoConvergence { iterations, best, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best.len(), 21);
            }
            other => panic!("{other:?}"),
        }
        let bad = FbsmOptions {
            relax: 1.5,
            ..FbsmOptions::default()
        };
        assert!(solve_fbsm(&cp, &Scheme::Midpoint, 20, &bad).is_err());
    }

    #[test]
    fn interpolation_is_linear() {
        let times = uniform_grid(0.0, 1.0, 4);
        let vals: Vec<_> = times.iter().map(|t| dvector![3.0 * t - 1.0]).collect();
        for t in [0.0, 0.1, 0.5, 0.77, 1.0] {
            assert!((interpolate(&times, &vals, t)[0] - (3.0 * t - 1.0)).abs() < 1e-14);
        }
    }
}

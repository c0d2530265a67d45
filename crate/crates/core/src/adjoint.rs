//! Adjoint sensitivities through the augmented adjoint Hamiltonian
//! `H_g(t, q, p) = ⟨p, f(t, q)⟩ + g(t, q)`.
//!
//! For `𝒥 = C(q(T)) + ∫₀ᵀ g dt` along `q̇ = f(t, q)`, `q(0) = q₀`, the free
//! Type II problem with `p(T) = dC(q(T))` gives `∇_{q₀}𝒥 = p(0)`. The sweep
//! solves it with one forward `q` pass and one backward linear `p` pass.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bvp::{type_ii_sweep, BoundarySpec, Section};
use crate::error::{check_dim, Error, Result};
use crate::integrators::{Scheme, Stepper};
use crate::problem::{uniform_grid, HamiltonianProblem, Trajectory};

type VectorField = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianField = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type ScalarField = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;
type Terminal = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type TerminalGradient = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

const FD_STEP: f64 = 6.0554544523933395e-6; // cbrt(f64::EPSILON)

fn fd_jacobian(f: &VectorField, t: f64, q: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    let mut out = DMatrix::zeros(f(t, q).len(), n);
    let mut x = q.clone();
    for j in 0..n {
        let d = FD_STEP * q[j].abs().max(1.0);
        x[j] = q[j] + d;
        let fp = f(t, &x);
        x[j] = q[j] - d;
        let fm = f(t, &x);
        x[j] = q[j];
        out.set_column(j, &((fp - fm) / (2.0 * d)));
    }
    out
}

fn fd_gradient(g: &ScalarField, t: f64, q: &DVector<f64>) -> DVector<f64> {
    let mut x = q.clone();
    DVector::from_fn(q.len(), |j, _| {
        let d = FD_STEP * q[j].abs().max(1.0);
        x[j] = q[j] + d;
        let gp = g(t, &x);
        x[j] = q[j] - d;
        let gm = g(t, &x);
        x[j] = q[j];
        (gp - gm) / (2.0 * d)
    })
}

/// Dynamics, running cost, terminal cost, horizon and initial state.
#[derive(Clone)]
pub struct CostProblem {
    label: String,
    f: VectorField,
    df: JacobianField,
    g: ScalarField,
    dg: VectorField,
    c: Terminal,
    dc: TerminalGradient,
    pub t_final: f64,
    pub q0: DVector<f64>,
}

impl fmt::Debug for CostProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostProblem")
            .field("label", &self.label)
            .field("t_final", &self.t_final)
            .field("q0", &self.q0)
            .finish()
    }
}

impl CostProblem {
    /// `D_qf` and `D_qg` default to central differences.
    pub fn new<F, G, C, DC>(label: &str, q0: DVector<f64>, t_final: f64, f: F, g: G, c: C, dc: DC) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
        C: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        DC: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let f: VectorField = Arc::new(f);
        let g: ScalarField = Arc::new(g);
        let (f2, g2) = (f.clone(), g.clone());
        Self {
            label: label.into(),
            df: Arc::new(move |t, q| fd_jacobian(&f2, t, q)),
            dg: Arc::new(move |t, q| fd_gradient(&g2, t, q)),
            f,
            g,
            c: Arc::new(c),
            dc: Arc::new(dc),
            t_final,
            q0,
        }
    }

    /// Linear dynamics `f = Aq`, no running cost.
    pub fn linear(label: &str, a: DMatrix<f64>, q0: DVector<f64>, t_final: f64, c: Terminal, dc: TerminalGradient) -> Self {
        let (a1, a2) = (a.clone(), a);
        let n = q0.len();
        let mut cp = Self::new(label, q0, t_final, move |_, q| &a1 * q, |_, _| 0.0, move |q| c(q), move |q| dc(q));
        cp.df = Arc::new(move |_, _| a2.clone());
        cp.dg = Arc::new(move |_, _| DVector::zeros(n));
        cp
    }

    pub fn with_df<F>(mut self, df: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.df = Arc::new(df);
        self
    }

    pub fn with_dg<F>(mut self, dg: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.dg = Arc::new(dg);
        self
    }

    pub fn with_initial_state(mut self, q0: DVector<f64>) -> Self {
        self.q0 = q0;
        self
    }

    pub fn with_horizon(mut self, t_final: f64) -> Self {
        self.t_final = t_final;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    pub fn f(&self, t: f64, q: &DVector<f64>) -> DVector<f64> {
        (self.f)(t, q)
    }

    pub fn df(&self, t: f64, q: &DVector<f64>) -> DMatrix<f64> {
        (self.df)(t, q)
    }

    pub fn g(&self, t: f64, q: &DVector<f64>) -> f64 {
        (self.g)(t, q)
    }

    pub fn dg(&self, t: f64, q: &DVector<f64>) -> DVector<f64> {
        (self.dg)(t, q)
    }

    pub fn terminal_cost(&self, q: &DVector<f64>) -> f64 {
        (self.c)(q)
    }

    pub fn terminal_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.dc)(q)
    }

    /// `dC`, `D_qf` and `D_qg` against central differences (relative 1e-6)
    /// at the given points.
    pub fn validate_at(&self, points: &[(f64, DVector<f64>)]) -> Result<()> {
        let close = |a: &DVector<f64>, b: &DVector<f64>| (a - b).amax() <= 1e-6 * (1.0 + b.amax());
        for (t, q) in points {
            check_dim(self.dim(), q.len(), "validation point")?;
            let c = self.c.clone();
            let fd_c = fd_gradient(&(Arc::new(move |_, q: &DVector<f64>| c(q)) as ScalarField), 0.0, q);
            let fd_f = fd_jacobian(&self.f, *t, q);
            let checks = [
                ("dC", close(&self.terminal_gradient(q), &fd_c)),
                ("D_qg", close(&self.dg(*t, q), &fd_gradient(&self.g, *t, q))),
                (
                    "D_qf",
                    (self.df(*t, q) - &fd_f).amax() <= 1e-6 * (1.0 + fd_f.amax()),
                ),
            ];
            if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
                return Err(Error::InvalidArgument(format!(
                    "{name} of '{}' disagrees with finite differences at t = {t}",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// `H_g(t, q, p) = ⟨p, f(t, q)⟩ + g(t, q)`, flagged maximally degenerate.
pub fn make_adjoint_problem(cp: &CostProblem) -> HamiltonianProblem {
    let n = cp.dim();
    let (f, g) = (cp.f.clone(), cp.g.clone());
    let (df, dg) = (cp.df.clone(), cp.dg.clone());
    let f2 = cp.f.clone();
    HamiltonianProblem::finite_difference(
        &format!("adjoint_{}", cp.label),
        n,
        move |t, q, p| p.dot(&f(t, q)) + g(t, q),
    )
    .with_d_q(move |t, q, p| df(t, q).tr_mul(p) + dg(t, q))
    .with_d_p(move |t, q, _| f2(t, q))
    .with_d_pp(move |_, _, _| DMatrix::zeros(n, n))
    .flag_maximally_degenerate()
}

fn terminal_section(cp: &CostProblem) -> Section {
    let dc = cp.dc.clone();
    Arc::new(move |q| dc(q))
}

/// `∇_{q₀}𝒥 = p(0)` from the free Type II sweep with `p(T) = dC(q(T))`.
///
/// With a symplectic Galerkin stepper `p(0)` is the exact gradient of
/// [`discrete_cost`] for the same stepper.
pub fn sensitivity(cp: &CostProblem, stepper: &dyn Stepper, steps: usize) -> Result<(DVector<f64>, Trajectory)> {
    let prob = make_adjoint_problem(cp);
    let bc = BoundarySpec::TypeIIFree {
        q0: cp.q0.clone(),
        section: terminal_section(cp),
    };
    let traj = type_ii_sweep(&prob, &bc, cp.t_final, stepper, steps)?.trajectory;
    Ok((traj.first().p.clone(), traj))
}

/// The cost as the stepper discretizes it: `C(q_N) + Σ_k G_k`, where `G_k`
/// is the running-cost quadrature built into the step (`H_d^+(q_k, 0)` for
/// schemes with a discrete Hamiltonian, `h·g(t_k, q_k)` otherwise).
pub fn discrete_cost(cp: &CostProblem, stepper: &dyn Stepper, steps: usize, q0: &DVector<f64>) -> Result<f64> {
    check_dim(cp.dim(), q0.len(), "initial state")?;
    if steps == 0 || !(cp.t_final > 0.0) {
        return Err(Error::InvalidArgument("need steps ≥ 1 and T > 0".into()));
    }
    let h = cp.t_final / steps as f64;
    let prob = make_adjoint_problem(cp);
    let dh = stepper.discrete_hamiltonian(&prob, h);
    let times = uniform_grid(0.0, cp.t_final, steps);
    let zero = DVector::zeros(cp.dim());
    let mut q = q0.clone();
    let mut running = 0.0;
    for k in 0..steps {
        match &dh {
            Some(dh) => {
                let e = dh.evaluate(times[k], &q, &zero).map_err(|e| e.at_step(k))?;
                running += e.value;
                q = e.d2;
            }
            None => {
                running += h * cp.g(times[k], &q);
                q = &q + h * cp.f(times[k], &q);
            }
        }
        if !q.iter().all(|x| x.is_finite()) {
            return Err(Error::Evaluation {
                t: times[k + 1],
                what: "forward state".into(),
            });
        }
    }
    Ok(cp.terminal_cost(&q) + running)
}

/// Step of the central differences in [`gradient_check`] and
/// [`sensitivity_virtual_work`] when none is given.
pub const GRADIENT_CHECK_EPS: f64 = 1e-5;

/// Largest componentwise error of [`sensitivity`] against central
/// differences of [`discrete_cost`], relative to `max(1, |∇𝒥|∞)`.
pub fn gradient_check(cp: &CostProblem, stepper: &dyn Stepper, steps: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (grad, _) = sensitivity(cp, stepper, steps)?;
    let scale = grad.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..cp.dim() {
        let (mut qp, mut qm) = (cp.q0.clone(), cp.q0.clone());
        qp[i] += eps;
        qm[i] -= eps;
        let fd = (discrete_cost(cp, stepper, steps, &qp)? - discrete_cost(cp, stepper, steps, &qm)?) / (2.0 * eps);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    Ok(worst)
}

/// Directional form `δ𝒥 = ⟨p(0), δq(0)⟩` over `count` seeded random
/// directions uniform in `[−1, 1]ⁿ`; returns the largest defect divided by
/// `max(1, |p(0)|∞·|δq|∞)`.
pub fn sensitivity_virtual_work(cp: &CostProblem, stepper: &dyn Stepper, steps: usize, count: usize, seed: u64) -> Result<f64> {
    let (grad, _) = sensitivity(cp, stepper, steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let dq = DVector::from_fn(cp.dim(), |_, _| rng.random_range(-1.0..=1.0));
        let eps = GRADIENT_CHECK_EPS;
        let jp = discrete_cost(cp, stepper, steps, &(&cp.q0 + eps * &dq))?;
        let jm = discrete_cost(cp, stepper, steps, &(&cp.q0 - eps * &dq))?;
        let scale = (grad.amax() * dq.amax()).max(1.0);
        worst = worst.max(((jp - jm) / (2.0 * eps) - grad.dot(&dq)).abs() / scale);
    }
    Ok(worst)
}

/// Scheme families compared by [`commutativity_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointScheme {
    /// Explicit Euler on `q`, paired with symplectic Euler on `(q, p)`.
    SymplecticPair,
    /// Explicit Euler on `q` and on the continuous adjoint system.
    ExplicitEuler,
}

impl AdjointScheme {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "symplectic_pair" => Ok(Self::SymplecticPair),
            "explicit_euler" => Ok(Self::ExplicitEuler),
            other => Err(Error::InvalidArgument(format!("unknown adjoint scheme '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SymplecticPair => "symplectic_pair",
            Self::ExplicitEuler => "explicit_euler",
        }
    }
}

/// Exact gradient of the explicit-Euler discretized cost
/// `C(q_N) + Σ h g(t_k, q_k)` with `q_{k+1} = q_k + h f(t_k, q_k)`, by the
/// transposed recursion `λ_k = λ_{k+1} + h (D_qf(t_k, q_k)ᵀ λ_{k+1} + D_qg(t_k, q_k))`.
pub fn discrete_adjoint_gradient(cp: &CostProblem, steps: usize) -> Result<DVector<f64>> {
    if steps == 0 || !(cp.t_final > 0.0) {
        return Err(Error::InvalidArgument("need steps ≥ 1 and T > 0".into()));
    }
    let h = cp.t_final / steps as f64;
    let times = uniform_grid(0.0, cp.t_final, steps);
    let mut qs = Vec::with_capacity(steps + 1);
    qs.push(cp.q0.clone());
    for k in 0..steps {
        let next = &qs[k] + h * cp.f(times[k], &qs[k]);
        qs.push(next);
    }
    let mut lambda = cp.terminal_gradient(&qs[steps]);
    for k in (0..steps).rev() {
        lambda = &lambda + h * (cp.df(times[k], &qs[k]).tr_mul(&lambda) + cp.dg(times[k], &qs[k]));
    }
    Ok(lambda)
}

/// `‖(discretize, then optimize) − (optimize, then discretize)‖∞`.
///
/// Both sides use the same explicit-Euler forward pass. The first is
/// [`discrete_adjoint_gradient`]; the second integrates the continuous
/// adjoint system with the sweep, by symplectic Euler for the pair and by
/// explicit Euler otherwise.
pub fn commutativity_gap(cp: &CostProblem, scheme: AdjointScheme, steps: usize) -> Result<f64> {
    let discrete = discrete_adjoint_gradient(cp, steps)?;
    let stepper = match scheme {
        AdjointScheme::SymplecticPair => Scheme::SymplecticEuler,
        AdjointScheme::ExplicitEuler => Scheme::ExplicitEuler,
    };
    let (continuous, _) = sensitivity(cp, &stepper, steps)?;
    Ok((discrete - continuous).amax())
}

/// Standard second-difference matrix on `nx` interior points of `[0, 1]`
/// with homogeneous Dirichlet ends.
pub fn laplacian_1d(nx: usize) -> DMatrix<f64> {
    let dx = 1.0 / (nx + 1) as f64;
    let s = 1.0 / (dx * dx);
    DMatrix::from_fn(nx, nx, |i, j| match i.abs_diff(j) {
        0 => -2.0 * s,
        1 => s,
        _ => 0.0,
    })
}

/// Initial profile of the diffusion demo: `sin πx + ½ sin 3πx` on the grid.
pub fn diffusion_initial_profile(nx: usize) -> DVector<f64> {
    let dx = 1.0 / (nx + 1) as f64;
    DVector::from_fn(nx, |i, _| {
        let x = (i + 1) as f64 * dx;
        (std::f64::consts::PI * x).sin() + 0.5 * (3.0 * std::f64::consts::PI * x).sin()
    })
}

#[derive(Debug, Clone)]
pub struct DiffusionReport {
    pub grad: DVector<f64>,
    /// `‖grad − e^{AᵀT}e^{AT}q₀‖ / ‖e^{AᵀT}e^{AT}q₀‖`.
    pub err_vs_oracle: f64,
    /// Largest singular value of the reverse-time map `e^{−AT}`. Grows
    /// without bound in `nx`; reported, not asserted.
    pub reverse_amplification: f64,
}

/// Semi-discrete diffusion `q̇ = Aq` with `C = ½|q|²`: sweep sensitivity by
/// implicit midpoint against the dense matrix-exponential oracle.
pub fn diffusion_adjoint_demo(nx: usize, t_final: f64, steps: usize) -> Result<DiffusionReport> {
    if nx < 3 {
        return Err(Error::InvalidArgument(format!("need nx ≥ 3, got {nx}")));
    }
    if !(t_final >= 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be nonnegative, got {t_final}")));
    }
    let a = laplacian_1d(nx);
    let q0 = diffusion_initial_profile(nx);
    if t_final == 0.0 {
        return Ok(DiffusionReport {
            grad: q0,
            err_vs_oracle: 0.0,
            reverse_amplification: 1.0,
        });
    }
    let cp = CostProblem::linear(
        "diffusion",
        a.clone(),
        q0.clone(),
        t_final,
        Arc::new(|q| 0.5 * q.norm_squared()),
        Arc::new(|q| q.clone()),
    );
    let (grad, _) = sensitivity(&cp, &Scheme::Midpoint, steps)?;
    let forward = (&a * t_final).exp();
    let oracle = forward.transpose() * (&forward * &q0);
    let err = (&grad - &oracle).norm() / oracle.norm();
    let reverse_amplification = (-&a * t_final).exp().singular_values().max();
    Ok(DiffusionReport {
        grad,
        err_vs_oracle: err,
        reverse_amplification,
    })
}

/// `q̇ = Aq` with `A = [[0, 1], [0, 0]]`, `C(q) = q₁`, `T = 1`: the gradient
/// is `e^{AᵀT} dC = (1, T)` for every `q₀`.
pub fn linear_example() -> CostProblem {
    CostProblem::linear(
        "nilpotent",
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DVector::from_row_slice(&[0.3, -0.4]),
        1.0,
        Arc::new(|q| q[0]),
        Arc::new(|_| DVector::from_row_slice(&[1.0, 0.0])),
    )
}

/// Nonlinear cost problems used for gradient checks.
pub fn nonlinear_battery() -> Vec<CostProblem> {
    use nalgebra::dvector;
    vec![
        CostProblem::new(
            "sine",
            dvector![0.7],
            1.0,
            |_, q| q.map(f64::sin),
            |_, q| q[0] * q[0],
            |q| q[0] * q[0],
            |q| 2.0 * q,
        )
        .with_df(|_, q| DMatrix::from_element(1, 1, q[0].cos()))
        .with_dg(|_, q| 2.0 * q),
        CostProblem::new(
            "pendulum",
            dvector![0.5, -0.2],
            1.5,
            |_, q| dvector![q[1], -q[0].sin()],
            |_, q| 0.5 * q[0] * q[0],
            |q| 0.5 * q.norm_squared(),
            |q| q.clone(),
        )
        .with_df(|_, q| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -q[0].cos(), 0.0]))
        .with_dg(|_, q| dvector![q[0], 0.0]),
        CostProblem::new(
            "van_der_pol",
            dvector![1.0, 0.3],
            1.0,
            |_, q| dvector![q[1], (1.0 - q[0] * q[0]) * q[1] - q[0]],
            |_, q| q[1] * q[1],
            |q| q[0],
            |_| dvector![1.0, 0.0],
        )
        .with_df(|_, q| {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0 * q[0] * q[1] - 1.0, 1.0 - q[0] * q[0]])
        })
        .with_dg(|_, q| dvector![0.0, 2.0 * q[1]]),
        CostProblem::new(
            "forced_logistic",
            dvector![0.4],
            2.0,
            |t, q| dvector![q[0] * (1.0 - q[0]) + 0.3 * t.sin()],
            |t, q| (t * q[0]).cos(),
            |q| q[0].powi(3) / 3.0,
            |q| dvector![q[0] * q[0]],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{degeneracy_class, hamiltonian_vector_field, Degeneracy, PhasePoint};
    use nalgebra::dvector;

    fn nilpotent() -> CostProblem {
        linear_example()
    }

    fn idle() -> CostProblem {
        CostProblem::new(
            "idle",
            dvector![0.3, -1.2],
            1.0,
            |_, q| DVector::zeros(q.len()),
            |_, _| 0.0,
            |q| 0.5 * q.norm_squared(),
            |q| q.clone(),
        )
    }

    fn exponential() -> CostProblem {
        CostProblem::linear(
            "exponential",
            DMatrix::from_element(1, 1, 1.0),
            dvector![1.0],
            1.0,
            Arc::new(|q| q[0]),
            Arc::new(|_| dvector![1.0]),
        )
    }

    #[test]
    fn adjoint_problem_is_flat_in_p() {
        let prob = make_adjoint_problem(&nonlinear_battery()[1]);
        let samples: Vec<_> = (0..10)
            .map(|i| {
                let s = i as f64 * 0.37;
                (0.1 * s, PhasePoint::from_slices(&[s.sin(), s.cos()], &[s - 1.0, 2.0 * s]))
            })
            .collect();
        assert_eq!(degeneracy_class(&prob, &samples, 1e-14).unwrap(), Degeneracy::MaximallyDegenerate);
        for (t, z) in &samples {
            assert!(prob.d_pp(*t, &z.q, &z.p).amax() <= 1e-14);
        }
    }

    #[test]
    fn linear_adjoint_field() {
        let cp = nilpotent();
        let prob = make_adjoint_problem(&cp);
        let z = PhasePoint::from_slices(&[0.2, 0.5], &[1.5, -0.7]);
        let (dq, dp) = hamiltonian_vector_field(&prob, 0.0, &z).unwrap();
        assert_eq!(dq, dvector![0.5, 0.0]);
        assert_eq!(dp, dvector![0.0, -1.5]);
        assert_eq!(make_adjoint_problem(&idle()).value(0.0, &z.q, &z.p), 0.0);
    }

    #[test]
    fn sensitivity_examples() {
        let (grad, _) = sensitivity(&nilpotent(), &Scheme::Midpoint, 50).unwrap();
        assert!((grad - dvector![1.0, 1.0]).amax() < 1e-12);
        let cp = idle();
        let (grad, _) = sensitivity(&cp, &Scheme::Midpoint, 10).unwrap();
        assert!((grad - &cp.q0).amax() < 1e-14);
        let (grad, _) = sensitivity(&exponential(), &Scheme::Midpoint, 2000).unwrap();
        assert!((grad[0] - 1f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn linear_sensitivity_matches_matrix_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let cp = CostProblem::linear(
            "damped",
            a.clone(),
            dvector![1.0, 0.5],
            1.0,
            Arc::new(|q| 0.5 * q.norm_squared()),
            Arc::new(|q| q.clone()),
        );
        let (grad, _) = sensitivity(&cp, &Scheme::Midpoint, 2000).unwrap();
        let e = a.exp();
        let oracle = e.transpose() * (&e * &cp.q0);
        assert!((grad - oracle).amax() < 1e-6);
    }

    #[test]
    fn gradient_checks() {
        assert!(gradient_check(&nilpotent(), &Scheme::Midpoint, 2000, 1e-5).unwrap() < 1e-6);
        // Round-off floor of central differences at eps = 1e-5 is about 1e-11.
        assert!(gradient_check(&idle(), &Scheme::Midpoint, 10, 1e-5).unwrap() < 1e-10);
        for cp in nonlinear_battery() {
            let err = gradient_check(&cp, &Scheme::Midpoint, 2000, 1e-5).unwrap();
            assert!(err < 1e-5, "{}: {err}", cp.label());
        }
        assert!(gradient_check(&idle(), &Scheme::Midpoint, 10, 0.0).is_err());
    }

    #[test]
    fn battery_derivatives_validate() {
        for cp in nonlinear_battery() {
            let pts = vec![(0.3, cp.q0.clone()), (0.9, cp.q0.map(|x| 1.5 * x - 0.2))];
            cp.validate_at(&pts).unwrap();
        }
    }

    #[test]
    fn virtual_work_form() {
        for cp in nonlinear_battery() {
            let d = sensitivity_virtual_work(&cp, &Scheme::Midpoint, 400, 20, 7).unwrap();
            assert!(d < 1e-5, "{}: {d}", cp.label());
        }
    }

    #[test]
    fn commutativity() {
        let gap = commutativity_gap(&nilpotent(), AdjointScheme::SymplecticPair, 100).unwrap();
        assert!(gap <= 1e-12, "{gap}");
        for cp in nonlinear_battery() {
            assert!(commutativity_gap(&cp, AdjointScheme::SymplecticPair, 100).unwrap() <= 1e-12);
        }
        let cp = &nonlinear_battery()[0];
        let g1 = commutativity_gap(cp, AdjointScheme::ExplicitEuler, 100).unwrap();
        let g2 = commutativity_gap(cp, AdjointScheme::ExplicitEuler, 200).unwrap();
        let ratio = g1 / g2;
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
        for s in [AdjointScheme::SymplecticPair, AdjointScheme::ExplicitEuler] {
            assert!(commutativity_gap(&idle(), s, 100).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn diffusion_demo() {
        let r = diffusion_adjoint_demo(3, 0.1, 500).unwrap();
        assert!(r.err_vs_oracle <= 1e-5, "{}", r.err_vs_oracle);
        let r0 = diffusion_adjoint_demo(5, 0.0, 10).unwrap();
        assert_eq!(r0.grad, diffusion_initial_profile(5));
        let r7 = diffusion_adjoint_demo(7, 0.1, 200).unwrap();
        assert!(r7.reverse_amplification > r.reverse_amplification);
        assert!(diffusion_adjoint_demo(2, 0.1, 10).is_err());
    }
}

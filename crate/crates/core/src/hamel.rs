//! Trivialized dynamics on parallelizable configuration manifolds.
//!
//! A trivialization is a `q`-dependent invertible matrix `Φ(q)` mapping
//! fiber vectors `ξ ∈ V = ℝⁿ` to tangent vectors `Φ(q)ξ`. Momenta are
//! trivialized as `μ = Φ(q)ᵀ p` and the trivialized Hamiltonian is
//! `h(t, q, μ) = H(t, q, Φ(q)⁻ᵀ μ)`. Hamel's equations read
//!
//! ```text
//! q̇ = Φ(q) D_μh
//! μ̇ = ad*_ξ μ − Φ(q)ᵀ D_qh,      ξ = D_μh
//! ```
//!
//! with `⟨ad*_ξ α, v⟩ = ⟨α, [ξ, v]_q⟩` and the Hamel bracket
//! `[u, v]_q = Φ⁻¹ (D_{Φu}Φ) v − Φ⁻¹ (D_{Φv}Φ) u`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_dual::Dual64;

use crate::error::{check_dim, Error, Result};
use crate::integrators::implicit_midpoint_field;
use crate::newton::{newton_solve, NewtonOptions};
use crate::problem::{uniform_grid, AutoHamiltonian, HamiltonianProblem, Scalar, Trajectory};

/// A frame field written generically so `DΦ` comes from dual numbers.
pub trait FrameField: Send + Sync + 'static {
    fn dim(&self) -> usize;
    /// Row-major entries of `Φ(q)`.
    fn matrix<S: Scalar>(&self, q: &[S]) -> Vec<S>;
}

type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type PartialsFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// `Φ(q)` together with its partial derivatives `∂Φ/∂q_i`.
#[derive(Clone)]
pub struct Trivialization {
    label: String,
    dim: usize,
    phi: MatrixFn,
    partials: PartialsFn,
}

impl fmt::Debug for Trivialization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trivialization({}, dim {})", self.label, self.dim)
    }
}

/// Step of the central differences used when `DΦ` is not supplied.
const DPHI_FD_STEP: f64 = 1e-5;

fn fd_partials(phi: &MatrixFn, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
    (0..q.len())
        .map(|i| {
            let d = DPHI_FD_STEP * q[i].abs().max(1.0);
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[i] += d;
            qm[i] -= d;
            (phi(&qp) - phi(&qm)) / (qp[i] - qm[i])
        })
        .collect()
}

impl Trivialization {
    /// `Φ` given as a matrix-valued function; `DΦ` by central differences.
    pub fn from_matrix<F>(label: &str, dim: usize, phi: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let phi: MatrixFn = Arc::new(phi);
        let p = phi.clone();
        Self {
            label: label.into(),
            dim,
            phi,
            partials: Arc::new(move |q| fd_partials(&p, q)),
        }
    }

    /// Replace the finite-difference `DΦ` by analytic partials `∂Φ/∂q_i`.
    pub fn with_partials<F>(mut self, partials: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.partials = Arc::new(partials);
        self
    }

    /// `Φ` from a generic frame field, `DΦ` by forward-mode dual numbers.
    pub fn from_frame<M: FrameField>(label: &str, frame: M) -> Self {
        let dim = frame.dim();
        let m = Arc::new(frame);
        let mv = m.clone();
        let phi: MatrixFn = Arc::new(move |q| DMatrix::from_row_slice(dim, dim, &mv.matrix(q.as_slice())));
        let partials: PartialsFn = Arc::new(move |q| {
            let mut qq: Vec<Dual64> = q.iter().map(|&x| Dual64::from(x)).collect();
            (0..dim)
                .map(|i| {
                    qq[i].eps = 1.0;
                    let entries: Vec<f64> = m.matrix(&qq).iter().map(|d| d.eps).collect();
                    qq[i].eps = 0.0;
                    DMatrix::from_row_slice(dim, dim, &entries)
                })
                .collect()
        });
        Self {
            label: label.into(),
            dim,
            phi,
            partials,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_matrix("identity", n, move |_| DMatrix::identity(n, n))
            .with_partials(move |_| vec![DMatrix::zeros(n, n); n])
    }

    /// Constant `Φ = c·I`.
    pub fn scaling(n: usize, c: f64) -> Self {
        Self::from_matrix("scaling", n, move |_| DMatrix::identity(n, n) * c)
            .with_partials(move |_| vec![DMatrix::zeros(n, n); n])
    }

    /// Left trivialization of `SO(3)` in exponential coordinates.
    pub fn so3() -> Self {
        Self::from_frame("so3_left", So3Exponential)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.phi)(q)
    }

    pub fn partials(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.partials)(q)
    }

    /// `Φ(q)ξ`.
    pub fn phi(&self, q: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        self.matrix(q) * xi
    }

    /// `Φ(q)⁻¹v`.
    pub fn phi_inv(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.matrix(q)
            .lu()
            .solve(v)
            .ok_or_else(|| singular(q))
    }

    /// `Φ(q)⁻ᵀμ`, the canonical momentum of the trivialized momentum `μ`.
    pub fn phi_inv_transpose(&self, q: &DVector<f64>, mu: &DVector<f64>) -> Result<DVector<f64>> {
        self.matrix(q)
            .transpose()
            .lu()
            .solve(mu)
            .ok_or_else(|| singular(q))
    }

    /// `DΦ(q)·v·ξ = Σ_i v_i (∂Φ/∂q_i) ξ`.
    pub fn dphi(&self, q: &DVector<f64>, v: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        self.partials(q)
            .iter()
            .zip(v.iter())
            .fold(DVector::zeros(self.dim), |acc, (d, vi)| acc + *vi * (d * xi))
    }

    /// Compare `DΦ` with central differences of `Φ` (relative error ≤ 1e-6)
    /// and check `Φ⁻¹Φξ = ξ` (≤ 1e-10) at the given points.
    pub fn validate_at(&self, points: &[DVector<f64>]) -> Result<()> {
        for q in points {
            check_dim(self.dim, q.len(), "trivialization point")?;
            let fd = fd_partials(&self.phi, q);
            for (a, b) in self.partials(q).iter().zip(&fd) {
                if (a - b).amax() > 1e-6 * (1.0 + b.amax()) {
                    return Err(Error::InvalidArgument(format!(
                        "DΦ of '{}' disagrees with finite differences",
                        self.label
                    )));
                }
            }
            let xi = DVector::from_fn(self.dim, |i, _| 1.0 + i as f64);
            if (self.phi_inv(q, &self.phi(q, &xi))? - &xi).amax() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "'{}' is not invertible to 1e-10",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

fn singular(q: &DVector<f64>) -> Error {
    Error::SingularTrivialization {
        q: q.iter().copied().collect(),
    }
}

/// `Φ(q) = J_r(q)⁻¹ = I + ½q̂ + (1/θ² − (1 + cos θ)/(2θ sin θ)) q̂²`, the
/// inverse right Jacobian of `exp: so(3) → SO(3)`; `q̇ = Φ(q)Ω` for the body
/// angular velocity `Ω`.
pub struct So3Exponential;

fn so3_coefficient<S: Scalar>(theta2: S) -> S {
    if theta2.re() < 1e-4 {
        // 1/12 + θ²/720 + θ⁴/30240 + θ⁶/1209600
        S::from(1.0 / 12.0)
            + theta2 * (1.0 / 720.0)
            + theta2 * theta2 * (1.0 / 30240.0)
            + theta2 * theta2 * theta2 * (1.0 / 1209600.0)
    } else {
        let theta = theta2.sqrt();
        theta2.recip() - (theta.cos() + 1.0) / (theta * theta.sin() * 2.0)
    }
}

impl FrameField for So3Exponential {
    fn dim(&self) -> usize {
        3
    }

    fn matrix<S: Scalar>(&self, q: &[S]) -> Vec<S> {
        let theta2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2];
        let c = so3_coefficient(theta2);
        let zero = S::zero();
        let hat = [
            [zero, -q[2], q[1]],
            [q[2], zero, -q[0]],
            [-q[1], q[0], zero],
        ];
        let mut out = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                let mut sq = S::zero();
                for k in 0..3 {
                    sq += hat[i][k] * hat[k][j];
                }
                let id = if i == j { S::one() } else { S::zero() };
                out.push(id + hat[i][j] * 0.5 + sq * c);
            }
        }
        out
    }
}

/// Free rigid body on `T*SO(3)` in exponential coordinates:
/// `H(q, p) = ½ μᵀ 𝕀⁻¹ μ` with `μ = Φ(q)ᵀ p`.
pub struct RigidBody {
    pub inertia: [f64; 3],
}

impl AutoHamiltonian for RigidBody {
    fn dim(&self) -> usize {
        3
    }

    fn eval<S: Scalar>(&self, _t: S, q: &[S], p: &[S]) -> S {
        let phi = So3Exponential.matrix(q);
        let mut h = S::zero();
        for j in 0..3 {
            let mut mu = S::zero();
            for i in 0..3 {
                mu += phi[3 * i + j] * p[i];
            }
            h += mu * mu * (0.5 / self.inertia[j]);
        }
        h
    }
}

pub fn rigid_body(inertia: [f64; 3]) -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("rigid_body", RigidBody { inertia })
}

struct BodyEnergy {
    inertia: [f64; 3],
}

impl AutoHamiltonian for BodyEnergy {
    fn dim(&self) -> usize {
        3
    }

    fn eval<S: Scalar>(&self, _t: S, _q: &[S], mu: &[S]) -> S {
        (0..3).fold(S::zero(), |acc, j| acc + mu[j] * mu[j] * (0.5 / self.inertia[j]))
    }
}

/// The left-invariant trivialized rigid-body Hamiltonian `h(q, Π) = ½Πᵀ𝕀⁻¹Π`.
pub fn rigid_body_trivialized(inertia: [f64; 3]) -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("rigid_body_body_frame", BodyEnergy { inertia })
}

/// `h(t, q, μ) = H(t, q, Φ(q)⁻ᵀμ)` as a problem in the variables `(q, μ)`.
///
/// `D_μh = Φ⁻¹ D_pH` and `D_{q_i}h = ∂_{q_i}H − pᵀ (∂_iΦ) Φ⁻¹ D_pH`.
/// A singular `Φ` shows up as non-finite values.
pub fn trivialized_hamiltonian(prob: &HamiltonianProblem, triv: &Trivialization) -> Result<HamiltonianProblem> {
    check_dim(prob.dim(), triv.dim(), "trivialization")?;
    let n = prob.dim();
    let nan = move || DVector::from_element(n, f64::NAN);

    let (p1, t1) = (prob.clone(), triv.clone());
    let value = move |t: f64, q: &DVector<f64>, mu: &DVector<f64>| match t1.phi_inv_transpose(q, mu) {
        Ok(p) => p1.value(t, q, &p),
        Err(_) => f64::NAN,
    };
    let (p2, t2) = (prob.clone(), triv.clone());
    let d_mu = move |t: f64, q: &DVector<f64>, mu: &DVector<f64>| {
        t2.phi_inv_transpose(q, mu)
            .and_then(|p| t2.phi_inv(q, &p2.d_p(t, q, &p)))
            .unwrap_or_else(|_| nan())
    };
    let (p3, t3) = (prob.clone(), triv.clone());
    let d_q = move |t: f64, q: &DVector<f64>, mu: &DVector<f64>| {
        let run = || -> Result<DVector<f64>> {
            let p = t3.phi_inv_transpose(q, mu)?;
            let xi = t3.phi_inv(q, &p3.d_p(t, q, &p))?;
            let mut out = p3.d_q(t, q, &p);
            for (i, d) in t3.partials(q).iter().enumerate() {
                out[i] -= p.dot(&(d * &xi));
            }
            Ok(out)
        };
        run().unwrap_or_else(|_| nan())
    };
    let (p4, t4) = (prob.clone(), triv.clone());
    let d_mumu = move |t: f64, q: &DVector<f64>, mu: &DVector<f64>| {
        let run = || -> Result<DMatrix<f64>> {
            let p = t4.phi_inv_transpose(q, mu)?;
            let inv = t4.matrix(q).try_inverse().ok_or_else(|| singular(q))?;
            Ok(&inv * p4.d_pp(t, q, &p) * inv.transpose())
        };
        run().unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN))
    };
    let (p5, t5) = (prob.clone(), triv.clone());
    let d_t = move |t: f64, q: &DVector<f64>, mu: &DVector<f64>| match t5.phi_inv_transpose(q, mu) {
        Ok(p) => p5.d_t(t, q, &p),
        Err(_) => f64::NAN,
    };
    Ok(HamiltonianProblem::finite_difference(&format!("{}_trivialized", prob.label()), n, value)
        .with_d_q(d_q)
        .with_d_p(d_mu)
        .with_d_pp(d_mumu)
        .with_d_t(d_t))
}

/// `[u, v]_q`.
pub fn hamel_bracket(triv: &Trivialization, q: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let phi = triv.matrix(q);
    let a = triv.dphi(q, &(&phi * u), v);
    let b = triv.dphi(q, &(&phi * v), u);
    phi.lu().solve(&(a - b)).ok_or_else(|| singular(q))
}

/// `ad*_ξ α`, assembled columnwise from `⟨ad*_ξ α, e_i⟩ = ⟨α, [ξ, e_i]_q⟩`.
pub fn coadjoint(triv: &Trivialization, q: &DVector<f64>, xi: &DVector<f64>, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    let n = triv.dim();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        out[i] = alpha.dot(&hamel_bracket(triv, q, xi, &e)?);
    }
    Ok(out)
}

/// Point `(q, μ)` of `M × V*`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrivializedState {
    pub q: DVector<f64>,
    pub mu: DVector<f64>,
}

impl TrivializedState {
    pub fn new(q: DVector<f64>, mu: DVector<f64>) -> Self {
        assert_eq!(q.len(), mu.len(), "q and μ dimensions differ");
        Self { q, mu }
    }

    fn to_vector(&self) -> DVector<f64> {
        let n = self.q.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.mu[i - n] })
    }

    fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() / 2;
        Self::new(v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
    }
}

/// Right-hand side of Hamel's equations, with `ξ = D_μh`.
pub fn hamel_vector_field(
    h: &HamiltonianProblem,
    triv: &Trivialization,
    t: f64,
    state: &TrivializedState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim(triv.dim(), state.q.len(), "trivialized state")?;
    check_dim(h.dim(), state.q.len(), "trivialized state")?;
    let xi = h.try_d_p(t, &state.q, &state.mu)?;
    let dhq = h.try_d_q(t, &state.q, &state.mu)?;
    let phi = triv.matrix(&state.q);
    let dq = &phi * &xi;
    let dmu = coadjoint(triv, &state.q, &xi, &state.mu)? - phi.transpose() * dhq;
    if dq.iter().chain(dmu.iter()).all(|x| x.is_finite()) {
        Ok((dq, dmu))
    } else {
        Err(Error::Evaluation {
            t,
            what: "Hamel vector field".into(),
        })
    }
}

/// Implicit midpoint on Hamel's equations from `state0` over `[0, T]`.
pub fn hamel_ivp(
    h: &HamiltonianProblem,
    triv: &Trivialization,
    state0: &TrivializedState,
    t_final: f64,
    steps: usize,
) -> Result<Trajectory<TrivializedState>> {
    if steps == 0 || !(t_final > 0.0) {
        return Err(Error::InvalidArgument("need steps ≥ 1 and T > 0".into()));
    }
    let dt = t_final / steps as f64;
    let field = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let (dq, dmu) = hamel_vector_field(h, triv, t, &TrivializedState::from_vector(x))?;
        Ok(TrivializedState::new(dq, dmu).to_vector())
    };
    let times = uniform_grid(0.0, t_final, steps);
    let mut states = vec![state0.clone()];
    let mut residuals = Vec::with_capacity(steps);
    let mut x = state0.to_vector();
    for k in 0..steps {
        let (next, res) = implicit_midpoint_field(field, times[k], dt, &x).map_err(|e| e.at_step(k))?;
        x = next;
        residuals.push(res);
        states.push(TrivializedState::from_vector(&x));
    }
    Ok(Trajectory::new(times, states, "hamel_midpoint")?.with_residuals(residuals))
}

/// Trivialized Type II problem `q(0) = q₀`, `μ(T) = μ₁` by single shooting
/// on `μ(0)`, starting from `μ(0) = μ₁`.
pub fn solve_hamel_type_ii(
    h: &HamiltonianProblem,
    triv: &Trivialization,
    q0: &DVector<f64>,
    mu1: &DVector<f64>,
    t_final: f64,
    steps: usize,
) -> Result<Trajectory<TrivializedState>> {
    check_dim(triv.dim(), q0.len(), "q0")?;
    check_dim(triv.dim(), mu1.len(), "mu1")?;
    let sol = newton_solve(
        |mu0| {
            let traj = hamel_ivp(h, triv, &TrivializedState::new(q0.clone(), mu0.clone()), t_final, steps)?;
            Ok(&traj.last().mu - mu1)
        },
        mu1,
        &NewtonOptions::default().with_polish(2),
    )?;
    let traj = hamel_ivp(h, triv, &TrivializedState::new(q0.clone(), sol.x), t_final, steps)?;
    let mut res = traj.meta.residuals.clone();
    res.push(sol.residual);
    Ok(traj.with_residuals(res))
}

/// Canonical terminal momentum `p(T) = Φ(q(T))⁻ᵀ μ₁` induced by the
/// trivialized condition, read as a section of `T*M`.
pub fn canonical_terminal_momentum(triv: &Trivialization, q_end: &DVector<f64>, mu1: &DVector<f64>) -> Result<DVector<f64>> {
    triv.phi_inv_transpose(q_end, mu1)
}

//! Discrete Hamiltonians and the one-step maps they generate.
//!
//! A discrete Hamiltonian `H_d^+(q_k, p_{k+1}; h)` is a Type II generating
//! function. The discrete Hamilton equations
//!
//! ```text
//! p_k     = D1 H_d^+(q_k, p_{k+1})
//! q_{k+1} = D2 H_d^+(q_k, p_{k+1})
//! ```
//!
//! define a symplectic map `(q_k, p_k) ↦ (q_{k+1}, p_{k+1})`.
//!
//! The Galerkin family extremizes
//! `p₁·q(h) − h Σ_j b_j [P_j·q̇(c_j h) − H(t + c_j h, q(c_j h), P_j)]`
//! over degree-`s` position polynomials with `q(0) = q₀` and over momentum
//! values `P_j` at the quadrature nodes only.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::fit::loglog_slope;
use crate::newton::{fd_jacobian, newton_solve, newton_solve_with_jacobian, NewtonOptions};
use crate::problem::{hamiltonian_vector_field, HamiltonianProblem, PhasePoint, Trajectory};

/// Errors at or below `ORDER_NOISE_FLOOR·(1 + ‖z_ref‖∞)` are ignored by
/// [`estimate_order`].
pub const ORDER_NOISE_FLOOR: f64 = 1e-12;

/// Relative step of the finite-difference Jacobian in [`symplecticity_defect`].
pub const SYMPLECTIC_FD_STEP: f64 = 1e-6;

fn default_inner_options() -> NewtonOptions {
    NewtonOptions::default().with_polish(2)
}

/// Position space of degree `s` on equispaced control points plus a
/// quadrature rule `(c_j, b_j)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinScheme {
    label: String,
    degree: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    // basis[j][ν] = ℓ_ν(c_j), dbasis[j][ν] = ℓ'_ν(c_j) on the unit interval.
    basis: Vec<Vec<f64>>,
    dbasis: Vec<Vec<f64>>,
}

fn lagrange(points: &[f64], nu: usize, x: f64) -> f64 {
    points
        .iter()
        .enumerate()
        .filter(|(mu, _)| *mu != nu)
        .map(|(_, &d)| (x - d) / (points[nu] - d))
        .product()
}

fn lagrange_derivative(points: &[f64], nu: usize, x: f64) -> f64 {
    let mut sum = 0.0;
    for kappa in 0..points.len() {
        if kappa == nu {
            continue;
        }
        let mut term = 1.0 / (points[nu] - points[kappa]);
        for mu in 0..points.len() {
            if mu != nu && mu != kappa {
                term *= (x - points[mu]) / (points[nu] - points[mu]);
            }
        }
        sum += term;
    }
    sum
}

impl GalerkinScheme {
    pub fn new(degree: usize, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::labelled("galerkin".into(), degree, nodes, weights)
    }

    fn labelled(label: String, degree: usize, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("Galerkin degree must be ≥ 1".into()));
        }
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("quadrature rule has no nodes".into()));
        }
        check_dim(nodes.len(), weights.len(), "quadrature weights")?;
        if nodes.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("quadrature nodes must lie in [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "quadrature weights sum to {total}, not 1"
            )));
        }
        let points: Vec<f64> = (0..=degree).map(|nu| nu as f64 / degree as f64).collect();
        let basis = nodes
            .iter()
            .map(|&c| (0..=degree).map(|nu| lagrange(&points, nu, c)).collect())
            .collect();
        let dbasis = nodes
            .iter()
            .map(|&c| (0..=degree).map(|nu| lagrange_derivative(&points, nu, c)).collect())
            .collect();
        Ok(Self {
            label,
            degree,
            nodes,
            weights,
            basis,
            dbasis,
        })
    }

    /// Linear positions, one node at `½`: the implicit midpoint rule.
    pub fn midpoint() -> Self {
        Self::labelled("midpoint".into(), 1, vec![0.5], vec![1.0]).expect("valid rule")
    }

    /// Linear positions, one node at `0`: `H_d^+ = p₁·q₀ + h H(t, q₀, p₁)`.
    pub fn symplectic_euler() -> Self {
        Self::labelled("symplectic_euler".into(), 1, vec![0.0], vec![1.0]).expect("valid rule")
    }

    /// Degree `s` with the `s`-point Gauss–Legendre rule, `s ∈ {1, 2, 3}`.
    pub fn gauss(s: usize) -> Result<Self> {
        let (nodes, weights) = match s {
            1 => (vec![0.5], vec![1.0]),
            2 => {
                let d = 3f64.sqrt() / 6.0;
                (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
            }
            3 => {
                let d = 15f64.sqrt() / 10.0;
                (
                    vec![0.5 - d, 0.5, 0.5 + d],
                    vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
                )
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "Gauss rules are tabulated for s = 1, 2, 3 (got {s})"
                )))
            }
        };
        Self::labelled(format!("gauss{s}"), s, nodes, weights)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn stages(&self) -> usize {
        self.nodes.len()
    }
}

/// Internal stage values of a Galerkin extremization.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    /// `t_k + c_j h`.
    pub times: Vec<f64>,
    /// `Q_1 … Q_s`, the polynomial values at the control points `ν/s`.
    pub control_points: Vec<DVector<f64>>,
    /// `q(c_j h)`.
    pub positions: Vec<DVector<f64>>,
    /// `q̇(c_j h)`.
    pub velocities: Vec<DVector<f64>>,
    /// `P_j`.
    pub momenta: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct DiscreteEvaluation {
    pub value: f64,
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
    pub stages: Option<StageRecord>,
    /// Final residual of the internal solve.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: PhasePoint,
    /// `H_d^+(q_k, p_{k+1})` for the step just taken.
    pub value: f64,
    pub stages: Option<StageRecord>,
    pub residual: f64,
}

struct Galerkin<'a> {
    prob: &'a HamiltonianProblem,
    scheme: &'a GalerkinScheme,
    t: f64,
    h: f64,
    n: usize,
}

struct NodeData {
    q: Vec<DVector<f64>>,
    // h·q̇ at the nodes
    hv: Vec<DVector<f64>>,
    dq: Vec<DVector<f64>>,
    dp: Vec<DVector<f64>>,
}

impl<'a> Galerkin<'a> {
    fn unknowns(&self) -> usize {
        (self.scheme.degree + self.scheme.stages()) * self.n
    }

    fn block<'v>(&self, x: &'v DVector<f64>, i: usize) -> nalgebra::DVectorView<'v, f64> {
        x.rows(i * self.n, self.n)
    }

    fn nodes(&self, q0: &DVector<f64>, x: &DVector<f64>) -> Result<NodeData> {
        let s = self.scheme.degree;
        let m = self.scheme.stages();
        let mut out = NodeData {
            q: Vec::with_capacity(m),
            hv: Vec::with_capacity(m),
            dq: Vec::with_capacity(m),
            dp: Vec::with_capacity(m),
        };
        for j in 0..m {
            let (l, dl) = (&self.scheme.basis[j], &self.scheme.dbasis[j]);
            let mut q = q0 * l[0];
            let mut hv = q0 * dl[0];
            for nu in 1..=s {
                let qn = self.block(x, nu - 1);
                q.axpy(l[nu], &qn, 1.0);
                hv.axpy(dl[nu], &qn, 1.0);
            }
            let pj = self.block(x, s + j).into_owned();
            let tj = self.t + self.scheme.nodes[j] * self.h;
            out.dq.push(self.prob.try_d_q(tj, &q, &pj)?);
            out.dp.push(self.prob.try_d_p(tj, &q, &pj)?);
            out.q.push(q);
            out.hv.push(hv);
        }
        Ok(out)
    }

    fn residual_into(
        &self,
        q0: &DVector<f64>,
        p1: &DVector<f64>,
        x: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<NodeData> {
        let (n, s, m) = (self.n, self.scheme.degree, self.scheme.stages());
        let nd = self.nodes(q0, x)?;
        for j in 0..m {
            let r = &nd.hv[j] - self.h * &nd.dp[j];
            out.rows_mut(j * n, n).copy_from(&r);
        }
        for nu in 1..=s {
            let mut r = if nu == s { p1.clone() } else { DVector::zeros(n) };
            for j in 0..m {
                let b = self.scheme.weights[j];
                let pj = self.block(x, s + j);
                r.axpy(-b * self.scheme.dbasis[j][nu], &pj, 1.0);
                r.axpy(b * self.h * self.scheme.basis[j][nu], &nd.dq[j], 1.0);
            }
            out.rows_mut((m + nu - 1) * n, n).copy_from(&r);
        }
        Ok(nd)
    }

    fn d1(&self, x: &DVector<f64>, nd: &NodeData) -> DVector<f64> {
        let s = self.scheme.degree;
        let mut d1 = DVector::zeros(self.n);
        for j in 0..self.scheme.stages() {
            let b = self.scheme.weights[j];
            d1.axpy(-b * self.scheme.dbasis[j][0], &self.block(x, s + j), 1.0);
            d1.axpy(b * self.h * self.scheme.basis[j][0], &nd.dq[j], 1.0);
        }
        d1
    }

    fn initial_guess(&self, q0: &DVector<f64>, p_start: &DVector<f64>, p_end: &DVector<f64>) -> Result<DVector<f64>> {
        let (s, m) = (self.scheme.degree, self.scheme.stages());
        let v = self.prob.try_d_p(self.t, q0, p_start)?;
        let mut x = DVector::zeros(self.unknowns());
        for nu in 1..=s {
            let qn = q0 + (self.h * nu as f64 / s as f64) * &v;
            x.rows_mut((nu - 1) * self.n, self.n).copy_from(&qn);
        }
        for j in 0..m {
            let c = self.scheme.nodes[j];
            let pj = p_start * (1.0 - c) + p_end * c;
            x.rows_mut((s + j) * self.n, self.n).copy_from(&pj);
        }
        Ok(x)
    }

    fn finish(
        &self,
        q0: &DVector<f64>,
        p1: &DVector<f64>,
        x: &DVector<f64>,
        residual: f64,
    ) -> Result<DiscreteEvaluation> {
        let (n, s, m) = (self.n, self.scheme.degree, self.scheme.stages());
        let mut scratch = DVector::zeros(self.unknowns());
        let nd = self.residual_into(q0, p1, x, &mut scratch)?;
        let d1 = self.d1(x, &nd);
        let d2 = self.block(x, s - 1).into_owned();
        let mut action = 0.0;
        let mut momenta = Vec::with_capacity(m);
        let mut times = Vec::with_capacity(m);
        for j in 0..m {
            let pj = self.block(x, s + j).into_owned();
            let tj = self.t + self.scheme.nodes[j] * self.h;
            let hj = self.prob.try_value(tj, &nd.q[j], &pj)?;
            action += self.scheme.weights[j] * (pj.dot(&nd.hv[j]) - self.h * hj);
            momenta.push(pj);
            times.push(tj);
        }
        let value = p1.dot(&d2) - action;
        let record = StageRecord {
            times,
            control_points: (0..s).map(|nu| x.rows(nu * n, n).into_owned()).collect(),
            positions: nd.q,
            velocities: nd.hv.into_iter().map(|v| v / self.h).collect(),
            momenta,
        };
        Ok(DiscreteEvaluation {
            value,
            d1,
            d2,
            stages: Some(record),
            residual,
        })
    }

    fn evaluate(&self, q0: &DVector<f64>, p1: &DVector<f64>, opts: &NewtonOptions) -> Result<DiscreteEvaluation> {
        let x0 = self.initial_guess(q0, p1, p1)?;
        let k = self.unknowns();
        let sol = newton_solve(
            |x| {
                let mut r = DVector::zeros(k);
                self.residual_into(q0, p1, x, &mut r)?;
                Ok(r)
            },
            &x0,
            opts,
        )
        .map_err(stage_error)?;
        self.finish(q0, p1, &sol.x, sol.residual)
    }

    fn step(&self, z: &PhasePoint, opts: &NewtonOptions) -> Result<(DiscreteEvaluation, DVector<f64>)> {
        let n = self.n;
        let k = self.unknowns();
        let (_, dp) = hamiltonian_vector_field(self.prob, self.t, z)?;
        let p1_guess = &z.p + self.h * dp;
        let stage_guess = self.initial_guess(&z.q, &z.p, &p1_guess)?;
        let mut x0 = DVector::zeros(k + n);
        x0.rows_mut(0, k).copy_from(&stage_guess);
        x0.rows_mut(k, n).copy_from(&p1_guess);
        let sol = newton_solve(
            |y| {
                let x = y.rows(0, k).into_owned();
                let p1 = y.rows(k, n).into_owned();
                let mut r = DVector::zeros(k + n);
                let mut stage_r = DVector::zeros(k);
                let nd = self.residual_into(&z.q, &p1, &x, &mut stage_r)?;
                r.rows_mut(0, k).copy_from(&stage_r);
                r.rows_mut(k, n).copy_from(&(self.d1(&x, &nd) - &z.p));
                Ok(r)
            },
            &x0,
            opts,
        )
        .map_err(stage_error)?;
        let x = sol.x.rows(0, k).into_owned();
        let p1 = sol.x.rows(k, n).into_owned();
        Ok((self.finish(&z.q, &p1, &x, sol.residual)?, p1))
    }
}

fn stage_error(e: Error) -> Error {
    match e {
        Error::SingularJacobian { .. } => Error::RankDeficientStageSystem,
        other => other,
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Galerkin(GalerkinScheme),
    Exact { tol: f64 },
}

/// A Type II generating function `H_d^+(q_k, p_{k+1}; h)` for a given problem.
#[derive(Debug, Clone)]
pub struct DiscreteHamiltonian {
    prob: HamiltonianProblem,
    h: f64,
    kind: Kind,
    opts: NewtonOptions,
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size must be positive, got {h}")))
    }
}

pub fn midpoint_discrete_hamiltonian(prob: &HamiltonianProblem, h: f64) -> Result<DiscreteHamiltonian> {
    galerkin_discrete_hamiltonian(prob, &GalerkinScheme::midpoint(), h)
}

pub fn galerkin_discrete_hamiltonian(
    prob: &HamiltonianProblem,
    scheme: &GalerkinScheme,
    h: f64,
) -> Result<DiscreteHamiltonian> {
    check_step(h)?;
    Ok(DiscreteHamiltonian {
        prob: prob.clone(),
        h,
        kind: Kind::Galerkin(scheme.clone()),
        opts: default_inner_options(),
    })
}

/// The exact discrete Hamiltonian `p(h)·q(h) − ∫₀ʰ [p·q̇ − H] dt` along the
/// solution of the Type II problem `q(0) = q₀`, `p(h) = p₁`.
pub fn exact_discrete_hamiltonian_map(
    prob: &HamiltonianProblem,
    h: f64,
    tol: f64,
) -> Result<DiscreteHamiltonian> {
    check_step(h)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    Ok(DiscreteHamiltonian {
        prob: prob.clone(),
        h,
        kind: Kind::Exact { tol },
        opts: default_inner_options(),
    })
}

/// Value of the exact discrete Hamiltonian on `[0, h]`.
pub fn exact_discrete_hamiltonian(
    prob: &HamiltonianProblem,
    q0: &DVector<f64>,
    p1: &DVector<f64>,
    h: f64,
    tol: f64,
) -> Result<f64> {
    exact_discrete_hamiltonian_map(prob, h, tol)?.value(0.0, q0, p1)
}

const EXACT_MIN_SUBSTEPS: usize = 4;
const EXACT_MAX_SUBSTEPS: usize = 4096;

impl DiscreteHamiltonian {
    pub fn with_options(mut self, opts: NewtonOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn problem(&self) -> &HamiltonianProblem {
        &self.prob
    }

    pub fn label(&self) -> &str {
        match &self.kind {
            Kind::Galerkin(s) => s.label(),
            Kind::Exact { .. } => "exact",
        }
    }

    pub fn scheme(&self) -> Option<&GalerkinScheme> {
        match &self.kind {
            Kind::Galerkin(s) => Some(s),
            Kind::Exact { .. } => None,
        }
    }

    fn galerkin<'a>(&'a self, scheme: &'a GalerkinScheme, t: f64, h: f64) -> Galerkin<'a> {
        Galerkin {
            prob: &self.prob,
            scheme,
            t,
            h,
            n: self.prob.dim(),
        }
    }

    fn check_args(&self, q0: &DVector<f64>, p1: &DVector<f64>) -> Result<()> {
        check_dim(self.prob.dim(), q0.len(), "q0")?;
        check_dim(self.prob.dim(), p1.len(), "p1")
    }

    /// Value, both partial derivatives and stage record at `(q₀, p₁)`,
    /// for the step starting at time `t`.
    pub fn evaluate(&self, t: f64, q0: &DVector<f64>, p1: &DVector<f64>) -> Result<DiscreteEvaluation> {
        self.check_args(q0, p1)?;
        match &self.kind {
            Kind::Galerkin(s) => self.galerkin(s, t, self.h).evaluate(q0, p1, &self.opts),
            Kind::Exact { tol } => self.exact_adaptive(t, q0, p1, *tol).map(|(e, _)| e),
        }
    }

    pub fn value(&self, t: f64, q0: &DVector<f64>, p1: &DVector<f64>) -> Result<f64> {
        self.evaluate(t, q0, p1).map(|e| e.value)
    }

    pub fn d1(&self, t: f64, q0: &DVector<f64>, p1: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluate(t, q0, p1).map(|e| e.d1)
    }

    pub fn d2(&self, t: f64, q0: &DVector<f64>, p1: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluate(t, q0, p1).map(|e| e.d2)
    }

    /// `𝔽⁺ = (D2, p₁)` and `𝔽⁻ = (q₀, D1)`.
    pub fn fiber_derivatives(
        &self,
        t: f64,
        q0: &DVector<f64>,
        p1: &DVector<f64>,
    ) -> Result<(PhasePoint, PhasePoint)> {
        let e = self.evaluate(t, q0, p1)?;
        Ok((
            PhasePoint::new(e.d2, p1.clone()),
            PhasePoint::new(q0.clone(), e.d1),
        ))
    }

    /// One step of the discrete Hamiltonian map from `(t, z)`.
    pub fn step(&self, t: f64, z: &PhasePoint) -> Result<PhasePoint> {
        self.advance(t, z).map(|o| o.state)
    }

    pub fn advance(&self, t: f64, z: &PhasePoint) -> Result<StepOutcome> {
        check_dim(self.prob.dim(), z.dim(), "phase point")?;
        if !z.is_finite() {
            return Err(Error::Evaluation {
                t,
                what: "initial state of step".into(),
            });
        }
        match &self.kind {
            Kind::Galerkin(s) => {
                let (e, p1) = self.galerkin(s, t, self.h).step(z, &self.opts)?;
                Ok(StepOutcome {
                    state: PhasePoint::new(e.d2, p1),
                    value: e.value,
                    stages: e.stages,
                    residual: e.residual,
                })
            }
            Kind::Exact { tol } => self.exact_step(t, z, *tol),
        }
    }

    // Shooting on p(t) for the Type II problem with `m` Gauss sub-steps.
    fn exact_fixed(
        &self,
        t: f64,
        q0: &DVector<f64>,
        p1: &DVector<f64>,
        m: usize,
        p0_guess: &DVector<f64>,
    ) -> Result<DiscreteEvaluation> {
        let scheme = GalerkinScheme::gauss(3).expect("tabulated");
        let hs = self.h / m as f64;
        let sub = self.galerkin(&scheme, t, hs);
        let inner = default_inner_options();
        let run = |p0: &DVector<f64>, keep: bool| -> Result<(PhasePoint, f64)> {
            let mut z = PhasePoint::new(q0.clone(), p0.clone());
            let mut composed = 0.0;
            for k in 0..m {
                let g = Galerkin {
                    t: t + k as f64 * hs,
                    ..sub
                };
                let (e, p_next) = g.step(&z, &inner)?;
                if keep {
                    composed += p_next.dot(&e.d2) - e.value;
                }
                z = PhasePoint::new(e.d2, p_next);
            }
            Ok((z, composed))
        };
        let sol = newton_solve(
            |p0| Ok(run(p0, false)?.0.p - p1),
            p0_guess,
            &NewtonOptions::default().with_tol(1e-12).with_polish(2),
        )?;
        let (z_end, composed) = run(&sol.x, true)?;
        Ok(DiscreteEvaluation {
            value: p1.dot(&z_end.q) - composed,
            d1: sol.x,
            d2: z_end.q,
            stages: None,
            residual: sol.residual,
        })
    }

    fn exact_adaptive(
        &self,
        t: f64,
        q0: &DVector<f64>,
        p1: &DVector<f64>,
        tol: f64,
    ) -> Result<(DiscreteEvaluation, usize)> {
        let mut m = EXACT_MIN_SUBSTEPS;
        let mut prev = self.exact_fixed(t, q0, p1, m, p1)?;
        loop {
            m *= 2;
            let next = self.exact_fixed(t, q0, p1, m, &prev.d1)?;
            let scale = 1.0 + next.value.abs();
            let dv = (next.value - prev.value).abs();
            let dd = (&next.d1 - &prev.d1).amax().max((&next.d2 - &prev.d2).amax());
            if dv <= tol * scale && dd <= tol * (1.0 + next.d1.amax().max(next.d2.amax())) {
                return Ok((next, m));
            }
            if m >= EXACT_MAX_SUBSTEPS {
                return Err(Error::NoConvergence {
                    iterations: m,
                    residual: dv,
                    best: next.d1,
                });
            }
            prev = next;
        }
    }

    fn exact_step(&self, t: f64, z: &PhasePoint, tol: f64) -> Result<StepOutcome> {
        // Predictor: fine Gauss integration of the initial value problem.
        let scheme = GalerkinScheme::gauss(3).expect("tabulated");
        let m = 16;
        let hs = self.h / m as f64;
        let mut zp = z.clone();
        for k in 0..m {
            let g = self.galerkin(&scheme, t + k as f64 * hs, hs);
            let (e, p) = g.step(&zp, &default_inner_options())?;
            zp = PhasePoint::new(e.d2, p);
        }
        let (_, m) = self.exact_adaptive(t, &z.q, &zp.p, tol)?;
        let mut last_p0 = z.p.clone();
        let sol = newton_solve(
            |p1| {
                let e = self.exact_fixed(t, &z.q, p1, m, &last_p0)?;
                last_p0 = e.d1.clone();
                Ok(e.d1 - &z.p)
            },
            &zp.p,
            &self.opts,
        )?;
        let e = self.exact_fixed(t, &z.q, &sol.x, m, &z.p)?;
        Ok(StepOutcome {
            state: PhasePoint::new(e.d2, sol.x),
            value: e.value,
            stages: None,
            residual: sol.residual,
        })
    }
}

/// Result of a single step of a [`Stepper`].
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: PhasePoint,
    pub residual: f64,
    pub stages: Option<StageRecord>,
}

/// A one-step method for Hamiltonian problems.
pub trait Stepper: Send + Sync {
    fn label(&self) -> String;

    fn advance(&self, prob: &HamiltonianProblem, t: f64, h: f64, z: &PhasePoint) -> Result<StepReport>;

    fn step(&self, prob: &HamiltonianProblem, t: f64, h: f64, z: &PhasePoint) -> Result<PhasePoint> {
        self.advance(prob, t, h, z).map(|r| r.state)
    }

    /// The generating function behind the map, if there is one.
    fn discrete_hamiltonian(&self, _prob: &HamiltonianProblem, _h: f64) -> Option<DiscreteHamiltonian> {
        None
    }
}

/// Built-in one-step methods.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Midpoint,
    SymplecticEuler,
    Galerkin(GalerkinScheme),
    /// Non-symplectic control: `z ↦ z + h X_H(t, z)`.
    ExplicitEuler,
}

impl Scheme {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "midpoint" => Ok(Scheme::Midpoint),
            "symplectic_euler" => Ok(Scheme::SymplecticEuler),
            "explicit_euler" => Ok(Scheme::ExplicitEuler),
            "gauss1" => Ok(Scheme::Galerkin(GalerkinScheme::gauss(1)?)),
            "gauss2" => Ok(Scheme::Galerkin(GalerkinScheme::gauss(2)?)),
            "gauss3" => Ok(Scheme::Galerkin(GalerkinScheme::gauss(3)?)),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }

    fn galerkin_scheme(&self) -> Option<GalerkinScheme> {
        match self {
            Scheme::Midpoint => Some(GalerkinScheme::midpoint()),
            Scheme::SymplecticEuler => Some(GalerkinScheme::symplectic_euler()),
            Scheme::Galerkin(s) => Some(s.clone()),
            Scheme::ExplicitEuler => None,
        }
    }
}

impl Stepper for Scheme {
    fn label(&self) -> String {
        match self {
            Scheme::ExplicitEuler => "explicit_euler".into(),
            other => other.galerkin_scheme().expect("symplectic").label().to_string(),
        }
    }

    fn advance(&self, prob: &HamiltonianProblem, t: f64, h: f64, z: &PhasePoint) -> Result<StepReport> {
        match self.discrete_hamiltonian(prob, h) {
            Some(dh) => {
                check_step(h)?;
                let o = dh.advance(t, z)?;
                Ok(StepReport {
                    state: o.state,
                    residual: o.residual,
                    stages: o.stages,
                })
            }
            None => {
                let (dq, dp) = hamiltonian_vector_field(prob, t, z)?;
                Ok(StepReport {
                    state: PhasePoint::new(&z.q + h * dq, &z.p + h * dp),
                    residual: 0.0,
                    stages: None,
                })
            }
        }
    }

    fn discrete_hamiltonian(&self, prob: &HamiltonianProblem, h: f64) -> Option<DiscreteHamiltonian> {
        let scheme = self.galerkin_scheme()?;
        galerkin_discrete_hamiltonian(prob, &scheme, h).ok()
    }
}

/// Implicit midpoint for a general vector field `ẋ = F(t, x)`:
/// `x₁ = x₀ + h F(t + h/2, (x₀ + x₁)/2)`. Returns `(x₁, residual)`.
pub fn implicit_midpoint_field<F>(field: F, t: f64, h: f64, x0: &DVector<f64>) -> Result<(DVector<f64>, f64)>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let tm = t + 0.5 * h;
    let guess = x0 + h * field(t, x0)?;
    let sol = newton_solve(
        |x1| {
            let mid = 0.5 * (x0 + x1);
            Ok(x1 - x0 - h * field(tm, &mid)?)
        },
        &guess,
        &default_inner_options(),
    )?;
    Ok((sol.x, sol.residual))
}

/// Reference solution for [`estimate_order`].
#[derive(Debug, Clone)]
pub enum Reference {
    /// Known state at the final time.
    Exact(PhasePoint),
    /// Stepping with the exact discrete Hamiltonian (tolerance `1e-12`).
    ExactDiscreteHamiltonian { steps: usize },
}

#[derive(Debug, Clone)]
pub struct OrderEstimate {
    pub order: f64,
    /// `(h, ‖z_N − z_ref‖∞)` for every requested step count.
    pub errors: Vec<(f64, f64)>,
}

/// Integrate `z0` over `[0, t_final]` with `steps` steps of a discrete Hamiltonian map.
pub fn integrate_dh(dh: &DiscreteHamiltonian, z0: &PhasePoint, steps: usize) -> Result<PhasePoint> {
    let mut z = z0.clone();
    for k in 0..steps {
        z = dh.step(k as f64 * dh.h(), &z).map_err(|e| e.at_step(k))?;
    }
    Ok(z)
}

/// Observed order: least-squares slope of `ln error` against `ln h`.
///
/// Errors at the noise floor are discarded; fewer than three remaining
/// samples is reported as [`Error::DegenerateRegression`].
pub fn estimate_order<F>(
    family: F,
    prob: &HamiltonianProblem,
    z0: &PhasePoint,
    t_final: f64,
    steps: &[usize],
    reference: &Reference,
) -> Result<OrderEstimate>
where
    F: Fn(f64) -> Result<DiscreteHamiltonian>,
{
    if steps.len() < 3 {
        return Err(Error::DegenerateRegression { usable: steps.len() });
    }
    let z_ref = match reference {
        Reference::Exact(z) => z.clone(),
        Reference::ExactDiscreteHamiltonian { steps } => {
            let dh = exact_discrete_hamiltonian_map(prob, t_final / *steps as f64, 1e-12)?;
            integrate_dh(&dh, z0, *steps)?
        }
    };
    let floor = ORDER_NOISE_FLOOR * (1.0 + z_ref.q.amax().max(z_ref.p.amax()));
    let mut errors = Vec::with_capacity(steps.len());
    for &n in steps {
        if n == 0 {
            return Err(Error::InvalidArgument("step counts must be positive".into()));
        }
        let h = t_final / n as f64;
        let z = integrate_dh(&family(h)?, z0, n)?;
        errors.push((h, z.distance_inf(&z_ref)));
    }
    let usable: Vec<_> = errors.iter().copied().filter(|(_, e)| *e > floor).collect();
    if usable.len() < 3 {
        return Err(Error::DegenerateRegression { usable: usable.len() });
    }
    Ok(OrderEstimate {
        order: loglog_slope(&usable)?,
        errors,
    })
}

/// Canonical symplectic matrix `[[0, I], [−I, 0]]`.
pub fn canonical_symplectic(n: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        omega[(i, n + i)] = 1.0;
        omega[(n + i, i)] = -1.0;
    }
    omega
}

/// `‖JᵀΩJ − Ω‖∞` (largest entry) for the central-difference Jacobian `J`
/// of `map` at `z`.
pub fn map_symplecticity_defect<F>(mut map: F, z: &PhasePoint) -> Result<f64>
where
    F: FnMut(&PhasePoint) -> Result<PhasePoint>,
{
    let x = z.to_vector();
    let delta = SYMPLECTIC_FD_STEP * (1.0 + x.amax());
    let mut f = |v: &DVector<f64>| map(&PhasePoint::from_vector(v)).map(|p| p.to_vector());
    let mut jac = DMatrix::zeros(x.len(), x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let (hi, lo) = (x[i] + delta, x[i] - delta);
        xp[i] = hi;
        let fp = f(&xp)?;
        xp[i] = lo;
        let fm = f(&xp)?;
        xp[i] = x[i];
        jac.set_column(i, &((fp - fm) / (hi - lo)));
    }
    let omega = canonical_symplectic(z.dim());
    Ok((jac.transpose() * &omega * &jac - omega).amax())
}

pub fn symplecticity_defect(
    stepper: &dyn Stepper,
    prob: &HamiltonianProblem,
    t: f64,
    z: &PhasePoint,
    h: f64,
) -> Result<f64> {
    map_symplecticity_defect(|w| stepper.step(prob, t, h, w), z)
}

/// `max_k |J(z_k) − J(z_0)|`.
pub fn momentum_map_drift<F>(traj: &Trajectory, j: F) -> f64
where
    F: Fn(&PhasePoint) -> f64,
{
    let j0 = j(traj.first());
    traj.states
        .iter()
        .map(|z| (j(z) - j0).abs())
        .fold(0.0, f64::max)
}

/// Solve `v = D_pH(t, q, p)` for `p`.
pub fn legendre_inverse(
    prob: &HamiltonianProblem,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    guess: &DVector<f64>,
) -> Result<DVector<f64>> {
    let fail = |_| Error::LegendreInversionFailure { t };
    let hess = prob.d_pp(t, q, guess);
    let sv = hess.singular_values();
    let smax = sv.amax();
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::LegendreInversionFailure { t });
    }
    newton_solve_with_jacobian(
        |p| Ok(prob.try_d_p(t, q, p)? - v),
        |p| Ok(prob.d_pp(t, q, p)),
        guess,
        &default_inner_options(),
    )
    .map(|s| s.x)
    .map_err(fail)
}

/// One step of the Galerkin discrete Lagrangian map built from
/// `L(q, v) = p·v − H` with `p` from the Legendre inverse.
fn lagrangian_step(
    prob: &HamiltonianProblem,
    scheme: &GalerkinScheme,
    t: f64,
    h: f64,
    z: &PhasePoint,
) -> Result<PhasePoint> {
    let n = prob.dim();
    let s = scheme.degree;
    let m = scheme.stages();
    let q0 = &z.q;
    // Returns (∂L_d/∂Q_ν for ν = 0..=s).
    let partials = |x: &DVector<f64>| -> Result<Vec<DVector<f64>>> {
        let mut out = vec![DVector::zeros(n); s + 1];
        for j in 0..m {
            let (l, dl) = (&scheme.basis[j], &scheme.dbasis[j]);
            let mut q = q0 * l[0];
            let mut v = q0 * (dl[0] / h);
            for nu in 1..=s {
                let qn = x.rows((nu - 1) * n, n);
                q.axpy(l[nu], &qn, 1.0);
                v.axpy(dl[nu] / h, &qn, 1.0);
            }
            let tj = t + scheme.nodes[j] * h;
            let p = legendre_inverse(prob, tj, &q, &v, &z.p)?;
            let dql = -prob.try_d_q(tj, &q, &p)?;
            for (nu, o) in out.iter_mut().enumerate() {
                o.axpy(scheme.weights[j] * h * l[nu], &dql, 1.0);
                o.axpy(scheme.weights[j] * dl[nu], &p, 1.0);
            }
        }
        Ok(out)
    };
    let v0 = prob.try_d_p(t, q0, &z.p)?;
    let x0 = DVector::from_fn(s * n, |i, _| {
        let (nu, c) = (i / n + 1, i % n);
        q0[c] + h * (nu as f64 / s as f64) * v0[c]
    });
    let sol = newton_solve(
        |x| {
            let d = partials(x)?;
            let mut r = DVector::zeros(s * n);
            r.rows_mut(0, n).copy_from(&(&z.p + &d[0]));
            for nu in 1..s {
                r.rows_mut(nu * n, n).copy_from(&d[nu]);
            }
            Ok(r)
        },
        &x0,
        &default_inner_options(),
    )?;
    let d = partials(&sol.x)?;
    Ok(PhasePoint::new(
        sol.x.rows((s - 1) * n, n).into_owned(),
        d[s].clone(),
    ))
}

/// Largest phase-space discrepancy over `steps` steps between the Galerkin
/// discrete Hamiltonian map and the corresponding discrete Lagrangian map.
pub fn lagrangian_equivalence_gap(
    prob: &HamiltonianProblem,
    scheme: &GalerkinScheme,
    h: f64,
    z0: &PhasePoint,
    steps: usize,
) -> Result<f64> {
    check_step(h)?;
    check_dim(prob.dim(), z0.dim(), "initial state")?;
    if steps == 0 {
        return Ok(0.0);
    }
    let dh = galerkin_discrete_hamiltonian(prob, scheme, h)?;
    let (mut zh, mut zl) = (z0.clone(), z0.clone());
    let mut gap: f64 = 0.0;
    for k in 0..steps {
        let t = k as f64 * h;
        zl = lagrangian_step(prob, scheme, t, h, &zl).map_err(|e| e.at_step(k))?;
        zh = dh.step(t, &zh).map_err(|e| e.at_step(k))?;
        gap = gap.max(zh.distance_inf(&zl));
    }
    Ok(gap)
}

/// Jacobian of `(q₀, p₁) ↦ (D1, D2)` by central differences; used by tests
/// and diagnostics that need the linearized generating function.
pub fn fd_generating_jacobian(
    dh: &DiscreteHamiltonian,
    t: f64,
    q0: &DVector<f64>,
    p1: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = q0.len();
    let mut f = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let e = dh.evaluate(t, &x.rows(0, n).into_owned(), &x.rows(n, n).into_owned())?;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&e.d1);
        out.rows_mut(n, n).copy_from(&e.d2);
        Ok(out)
    };
    let x = PhasePoint::new(q0.clone(), p1.clone()).to_vector();
    fd_jacobian(&mut f, &x, 2 * n)
}

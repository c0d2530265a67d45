//! Problem definitions and phase-space data types.
//!
//! A [`HamiltonianProblem`] carries a time-dependent scalar `H(t, q, p)` on a
//! flat phase space of dimension `2n` together with the derivatives every
//! solver needs: `D_qH`, `D_pH`, `D_p²H` and `∂_tH`. Derivatives come from one
//! of three sources (see [`DerivativeMode`]); finite differences are always
//! available as a fallback and as the cross-check oracle.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_dual::{Dual64, DualNum, HyperDual64};

use crate::error::{check_dim, Error, Result};

/// Scalar types a Hamiltonian can be evaluated on: `f64` and the dual numbers
/// used for forward-mode differentiation.
pub trait Scalar: DualNum<Primitive = f64> + Copy {}

impl<T: DualNum<Primitive = f64> + Copy> Scalar for T {}

/// A Hamiltonian written once, generically over [`Scalar`], from which exact
/// first and second derivatives are obtained by dual numbers.
pub trait AutoHamiltonian: Send + Sync + 'static {
    fn dim(&self) -> usize;
    fn eval<S: Scalar>(&self, t: S, q: &[S], p: &[S]) -> S;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    Analytic,
    AutoDiff,
    FiniteDifference,
}

/// A point `(q, p)` of the flat phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "position and momentum dimensions differ");
        Self { q, p }
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(p))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }

    /// Stacked `[q; p]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.p[i - n] })
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert!(v.len() % 2 == 0, "phase vector must have even length");
        let n = v.len() / 2;
        Self::new(v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
    }

    pub fn distance_inf(&self, other: &PhasePoint) -> f64 {
        (&self.q - &other.q)
            .amax()
            .max((&self.p - &other.p).amax())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryMeta {
    pub solver: String,
    /// Final residual of every Newton solve performed while building the
    /// trajectory, in order.
    pub residuals: Vec<f64>,
}

/// Time grid with states (and optional controls) on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S = PhasePoint> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub controls: Option<Vec<DVector<f64>>>,
    pub meta: TrajectoryMeta,
}

impl<S> Trajectory<S> {
    pub fn new(times: Vec<f64>, states: Vec<S>, solver: impl Into<String>) -> Result<Self> {
        check_dim(times.len(), states.len(), "trajectory states")?;
        if times.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            states,
            controls: None,
            meta: TrajectoryMeta {
                solver: solver.into(),
                residuals: Vec::new(),
            },
        })
    }

    pub fn with_controls(mut self, controls: Vec<DVector<f64>>) -> Result<Self> {
        check_dim(self.times.len(), controls.len(), "trajectory controls")?;
        self.controls = Some(controls);
        Ok(self)
    }

    pub fn with_residuals(mut self, residuals: Vec<f64>) -> Self {
        self.meta.residuals = residuals;
        self
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &S {
        &self.states[0]
    }

    pub fn last(&self) -> &S {
        self.states.last().expect("trajectories are nonempty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectories are nonempty")
    }
}

/// `N + 1` equally spaced times on `[t0, t1]`.
pub fn uniform_grid(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let h = (t1 - t0) / steps as f64;
    (0..=steps)
        .map(|k| if k == steps { t1 } else { t0 + k as f64 * h })
        .collect()
}

type ScalarFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Time-dependent Hamiltonian with its partial derivatives.
#[derive(Clone)]
pub struct HamiltonianProblem {
    dim: usize,
    label: Arc<str>,
    mode: DerivativeMode,
    value: ScalarFn,
    d_q: VectorFn,
    d_p: VectorFn,
    d_pp: MatrixFn,
    d_t: ScalarFn,
    maximally_degenerate: bool,
}

impl fmt::Debug for HamiltonianProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianProblem")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("mode", &self.mode)
            .field("maximally_degenerate", &self.maximally_degenerate)
            .finish()
    }
}

const FD_STEP: f64 = 6.0554544523933395e-6; // cbrt(f64::EPSILON)
const FD_STEP2: f64 = 1.220703125e-4; // EPSILON^(1/4)

fn fd_gradient(
    value: &ScalarFn,
    t: f64,
    q: &DVector<f64>,
    p: &DVector<f64>,
    wrt_p: bool,
) -> DVector<f64> {
    let (mut q, mut p) = (q.clone(), p.clone());
    let n = q.len();
    DVector::from_fn(n, |i, _| {
        let x = if wrt_p { &mut p } else { &mut q };
        let xi = x[i];
        let d = FD_STEP * xi.abs().max(1.0);
        x[i] = xi + d;
        let fp = value(t, &q, &p);
        let x = if wrt_p { &mut p } else { &mut q };
        x[i] = xi - d;
        let fm = value(t, &q, &p);
        let x = if wrt_p { &mut p } else { &mut q };
        x[i] = xi;
        (fp - fm) / (2.0 * d)
    })
}

fn fd_hessian_pp(value: &ScalarFn, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
    let n = p.len();
    let mut out = DMatrix::zeros(n, n);
    let mut pp = p.clone();
    let f0 = value(t, q, p);
    for i in 0..n {
        let di = FD_STEP2 * p[i].abs().max(1.0);
        for j in i..n {
            let dj = FD_STEP2 * p[j].abs().max(1.0);
            let v = if i == j {
                pp[i] = p[i] + di;
                let fp = value(t, q, &pp);
                pp[i] = p[i] - di;
                let fm = value(t, q, &pp);
                pp[i] = p[i];
                (fp - 2.0 * f0 + fm) / (di * di)
            } else {
                let mut eval = |si: f64, sj: f64| {
                    pp[i] = p[i] + si * di;
                    pp[j] = p[j] + sj * dj;
                    let v = value(t, q, &pp);
                    pp[i] = p[i];
                    pp[j] = p[j];
                    v
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * di * dj)
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn fd_time(value: &ScalarFn, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let d = FD_STEP * t.abs().max(1.0);
    (value(t + d, q, p) - value(t - d, q, p)) / (2.0 * d)
}

fn consts<S: Scalar>(x: &DVector<f64>) -> Vec<S> {
    x.iter().map(|&v| S::from(v)).collect()
}

impl HamiltonianProblem {
    /// Problem whose derivatives are computed by forward-mode dual numbers.
    pub fn from_autodiff<M: AutoHamiltonian>(label: &str, model: M) -> Self {
        let dim = model.dim();
        let m = Arc::new(model);

        let mv = m.clone();
        let value: ScalarFn = Arc::new(move |t, q, p| mv.eval::<f64>(t, q.as_slice(), p.as_slice()));

        let mq = m.clone();
        let d_q: VectorFn = Arc::new(move |t, q, p| {
            let tt = Dual64::from(t);
            let pp: Vec<Dual64> = consts(p);
            let mut qq: Vec<Dual64> = consts(q);
            DVector::from_fn(q.len(), |i, _| {
                qq[i].eps = 1.0;
                let v = mq.eval(tt, &qq, &pp).eps;
                qq[i].eps = 0.0;
                v
            })
        });

        let mp = m.clone();
        let d_p: VectorFn = Arc::new(move |t, q, p| {
            let tt = Dual64::from(t);
            let qq: Vec<Dual64> = consts(q);
            let mut pp: Vec<Dual64> = consts(p);
            DVector::from_fn(p.len(), |i, _| {
                pp[i].eps = 1.0;
                let v = mp.eval(tt, &qq, &pp).eps;
                pp[i].eps = 0.0;
                v
            })
        });

        let mh = m.clone();
        let d_pp: MatrixFn = Arc::new(move |t, q, p| {
            let n = p.len();
            let tt = HyperDual64::from(t);
            let qq: Vec<HyperDual64> = consts(q);
            let mut pp: Vec<HyperDual64> = consts(p);
            let mut out = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    pp[i].eps1 = 1.0;
                    pp[j].eps2 = 1.0;
                    let v = mh.eval(tt, &qq, &pp).eps1eps2;
                    pp[i].eps1 = 0.0;
                    pp[j].eps2 = 0.0;
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
            out
        });

        let mt = m;
        let d_t: ScalarFn = Arc::new(move |t, q, p| {
            let qq: Vec<Dual64> = consts(q);
            let pp: Vec<Dual64> = consts(p);
            mt.eval(Dual64::new(t, 1.0), &qq, &pp).eps
        });

        Self {
            dim,
            label: label.into(),
            mode: DerivativeMode::AutoDiff,
            value,
            d_q,
            d_p,
            d_pp,
            d_t,
            maximally_degenerate: false,
        }
    }

    /// Problem defined by its value only; all derivatives by central
    /// differences. Use the `with_*` methods to supply analytic ones.
    pub fn finite_difference<F>(label: &str, dim: usize, value: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        let value: ScalarFn = Arc::new(value);
        let v = value.clone();
        let d_q: VectorFn = Arc::new(move |t, q, p| fd_gradient(&v, t, q, p, false));
        let v = value.clone();
        let d_p: VectorFn = Arc::new(move |t, q, p| fd_gradient(&v, t, q, p, true));
        let v = value.clone();
        let d_pp: MatrixFn = Arc::new(move |t, q, p| fd_hessian_pp(&v, t, q, p));
        let v = value.clone();
        let d_t: ScalarFn = Arc::new(move |t, q, p| fd_time(&v, t, q, p));
        Self {
            dim,
            label: label.into(),
            mode: DerivativeMode::FiniteDifference,
            value,
            d_q,
            d_p,
            d_pp,
            d_t,
            maximally_degenerate: false,
        }
    }

    pub fn with_d_q<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.d_q = Arc::new(f);
        self.mode = DerivativeMode::Analytic;
        self
    }

    pub fn with_d_p<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.d_p = Arc::new(f);
        self.mode = DerivativeMode::Analytic;
        self
    }

    pub fn with_d_pp<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.d_pp = Arc::new(f);
        self.mode = DerivativeMode::Analytic;
        self
    }

    pub fn with_d_t<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        self.d_t = Arc::new(f);
        self
    }

    /// Mark the problem as maximally degenerate (`D_p²H ≡ 0`), i.e. of the
    /// adjoint form `⟨p, f(t,q)⟩ + g(t,q)`.
    pub fn flag_maximally_degenerate(mut self) -> Self {
        self.maximally_degenerate = true;
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    pub fn is_flagged_maximally_degenerate(&self) -> bool {
        self.maximally_degenerate
    }

    pub fn value(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        (self.value)(t, q, p)
    }

    pub fn d_q(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        (self.d_q)(t, q, p)
    }

    pub fn d_p(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        (self.d_p)(t, q, p)
    }

    pub fn d_pp(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        (self.d_pp)(t, q, p)
    }

    pub fn d_t(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        (self.d_t)(t, q, p)
    }

    pub fn energy(&self, t: f64, z: &PhasePoint) -> f64 {
        self.value(t, &z.q, &z.p)
    }

    /// `D_qH` with a finiteness check.
    pub fn try_d_q(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        finite_or(self.d_q(t, q, p), t, "D_qH")
    }

    /// `D_pH` with a finiteness check.
    pub fn try_d_p(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        finite_or(self.d_p(t, q, p), t, "D_pH")
    }

    pub fn try_value(&self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> Result<f64> {
        let v = self.value(t, q, p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                t,
                what: "Hamiltonian value".into(),
            })
        }
    }

    /// `H̃(t, q, p) = −H(T − t, q, p)`. Its Type II problem is the Type III
    /// problem of `H` read backwards in time.
    pub fn time_reversed(&self, horizon: f64) -> Self {
        let (v, dq, dp, dpp, dt) = (
            self.value.clone(),
            self.d_q.clone(),
            self.d_p.clone(),
            self.d_pp.clone(),
            self.d_t.clone(),
        );
        Self {
            dim: self.dim,
            label: format!("{}_reversed", self.label).into(),
            mode: self.mode,
            value: Arc::new(move |t, q, p| -v(horizon - t, q, p)),
            d_q: Arc::new(move |t, q, p| -dq(horizon - t, q, p)),
            d_p: Arc::new(move |t, q, p| -dp(horizon - t, q, p)),
            d_pp: Arc::new(move |t, q, p| -dpp(horizon - t, q, p)),
            d_t: Arc::new(move |t, q, p| dt(horizon - t, q, p)),
            maximally_degenerate: self.maximally_degenerate,
        }
    }

    /// `H(t + offset, q, p)`, for problems whose natural clock does not start at 0.
    pub fn time_shifted(&self, offset: f64) -> Self {
        let (v, dq, dp, dpp, dt) = (
            self.value.clone(),
            self.d_q.clone(),
            self.d_p.clone(),
            self.d_pp.clone(),
            self.d_t.clone(),
        );
        Self {
            dim: self.dim,
            label: format!("{}_shifted", self.label).into(),
            mode: self.mode,
            value: Arc::new(move |t, q, p| v(t + offset, q, p)),
            d_q: Arc::new(move |t, q, p| dq(t + offset, q, p)),
            d_p: Arc::new(move |t, q, p| dp(t + offset, q, p)),
            d_pp: Arc::new(move |t, q, p| dpp(t + offset, q, p)),
            d_t: Arc::new(move |t, q, p| dt(t + offset, q, p)),
            maximally_degenerate: self.maximally_degenerate,
        }
    }

    /// Check user-supplied derivatives against central differences of the
    /// value (relative error ≤ 1e-6) and `D_p²H` for symmetry (≤ 1e-10).
    pub fn validate_at(&self, samples: &[(f64, PhasePoint)]) -> Result<()> {
        for (t, z) in samples {
            check_dim(self.dim, z.dim(), "sample point")?;
            let checks = [
                ("D_qH", self.d_q(*t, &z.q, &z.p), fd_gradient(&self.value, *t, &z.q, &z.p, false)),
                ("D_pH", self.d_p(*t, &z.q, &z.p), fd_gradient(&self.value, *t, &z.q, &z.p, true)),
            ];
            for (name, got, fd) in checks {
                let scale = 1.0 + fd.amax();
                if (&got - &fd).amax() > 1e-6 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "{name} disagrees with finite differences at t = {t}"
                    )));
                }
            }
            let hpp = self.d_pp(*t, &z.q, &z.p);
            if (&hpp - hpp.transpose()).amax() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "D_ppH is not symmetric at t = {t}"
                )));
            }
        }
        Ok(())
    }

    /// Central-difference reference derivatives `(D_qH, D_pH)` of the value.
    pub fn fd_derivatives(&self, t: f64, z: &PhasePoint) -> (DVector<f64>, DVector<f64>) {
        (
            fd_gradient(&self.value, t, &z.q, &z.p, false),
            fd_gradient(&self.value, t, &z.q, &z.p, true),
        )
    }
}

fn finite_or(v: DVector<f64>, t: f64, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            t,
            what: what.to_string(),
        })
    }
}

/// Right-hand side of Hamilton's equations: `(D_pH, −D_qH)`.
pub fn hamiltonian_vector_field(
    prob: &HamiltonianProblem,
    t: f64,
    z: &PhasePoint,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim(prob.dim(), z.dim(), "phase point")?;
    if !z.is_finite() {
        return Err(Error::Evaluation {
            t,
            what: format!("state {:?}", z.to_vector().as_slice()),
        });
    }
    let dq = prob.d_p(t, &z.q, &z.p);
    let dp = -prob.d_q(t, &z.q, &z.p);
    if dq.iter().chain(dp.iter()).all(|x| x.is_finite()) {
        Ok((dq, dp))
    } else {
        Err(Error::Evaluation {
            t,
            what: format!("vector field at {:?}", z.to_vector().as_slice()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    Regular,
    Degenerate,
    MaximallyDegenerate,
}

/// Classify `H` by the rank of `D_p²H` at the given samples. The answer is
/// relative to the samples, not a global statement.
pub fn degeneracy_class(
    prob: &HamiltonianProblem,
    samples: &[(f64, PhasePoint)],
    tol: f64,
) -> Result<Degeneracy> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("degeneracy_class needs a sample".into()));
    }
    let mut all_regular = true;
    let mut all_zero = true;
    for (t, z) in samples {
        check_dim(prob.dim(), z.dim(), "sample point")?;
        let hpp = prob.d_pp(*t, &z.q, &z.p);
        if !hpp.iter().all(|x| x.is_finite()) {
            return Err(Error::Evaluation {
                t: *t,
                what: "D_ppH".into(),
            });
        }
        let sv = hpp.singular_values();
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        all_regular &= smin > tol;
        all_zero &= smax <= tol;
    }
    Ok(if all_zero {
        Degeneracy::MaximallyDegenerate
    } else if all_regular {
        Degeneracy::Regular
    } else {
        Degeneracy::Degenerate
    })
}

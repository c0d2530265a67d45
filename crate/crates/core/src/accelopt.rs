//! Accelerated optimization by symplectic integration of Bregman dynamics,
//! Euclidean case `h(x) = ½|x|²`.
//!
//! The `p`-Bregman Hamiltonian
//! `H(t, x, r) = p/(2t^{p+1}) |r|² + C p t^{2p−1} f(x)` drives `f(x(t)) − f*`
//! to zero at rate `O(t^{−p})`. It is made autonomous by a Poincaré
//! transformation with time rescaling `dt/dτ = (p/p̊) t^{1−p̊/p}` and
//! integrated in the fictive time `τ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::fit::{loglog_slope, suffix_max};
use crate::integrators::Stepper;
use crate::problem::{HamiltonianProblem, PhasePoint, Trajectory};

/// Physical start time of every run; the Bregman family is singular at 0.
pub const START_TIME: f64 = 1.0;

/// Fictive step of the conservation check; midpoint holds `|H̄|` near
/// `7 h_τ²` on the quadratic battery.
pub const CONSERVATION_H_TAU: f64 = 2.5e-5;

/// Fictive step of the rate check: `10⁴` steps reach `t = 101` when `p = p̊`.
pub const RATE_H_TAU: f64 = 1e-2;

/// Objective or state magnitude treated as divergence.
pub const BLOW_UP_LIMIT: f64 = 1e12;

const FD_STEP: f64 = 6.0554544523933395e-6; // cbrt(f64::EPSILON)

type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Objective `f` with its gradient and, when known, its minimum value.
#[derive(Clone)]
pub struct Objective {
    label: String,
    value: ValueFn,
    gradient: GradientFn,
    minimum: Option<f64>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Objective({})", self.label)
    }
}

impl Objective {
    pub fn new<F, G>(label: &str, value: F, gradient: G) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            minimum: None,
        }
    }

    pub fn with_minimum(mut self, f_star: f64) -> Self {
        self.minimum = Some(f_star);
        self
    }

    /// `f(x) = ½ Σ aᵢ (xᵢ − cᵢ)²`, minimum 0 at `c`.
    pub fn quadratic(weights: DVector<f64>, center: DVector<f64>) -> Self {
        assert_eq!(weights.len(), center.len(), "weights and center differ in length");
        let (w1, c1) = (weights.clone(), center.clone());
        Self::new(
            "quadratic",
            move |x| 0.5 * (x - &c1).component_mul(&(x - &c1)).dot(&w1),
            move |x| (x - &center).component_mul(&weights),
        )
        .with_minimum(0.0)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    pub fn minimum(&self) -> Option<f64> {
        self.minimum
    }

    /// Gradient against central differences (relative 1e-6).
    pub fn validate_at(&self, points: &[DVector<f64>]) -> Result<()> {
        for x in points {
            let g = self.gradient(x);
            check_dim(x.len(), g.len(), "objective gradient")?;
            for j in 0..x.len() {
                let d = FD_STEP * x[j].abs().max(1.0);
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += d;
                xm[j] -= d;
                let fd = (self.value(&xp) - self.value(&xm)) / (2.0 * d);
                if (fd - g[j]).abs() > 1e-6 * (1.0 + fd.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "gradient of '{}' disagrees with finite differences",
                        self.label
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BregmanConfig {
    /// Rate exponent `p`.
    pub p: f64,
    /// Target rescaling exponent `p̊`.
    pub p_ring: f64,
    pub c: f64,
    pub objective: Objective,
    pub x0: DVector<f64>,
    /// Initial physical velocity `ẋ(t₀)`.
    pub v0: DVector<f64>,
}

impl BregmanConfig {
    /// `p = p̊ = 2`, `C = 1`, starting at rest.
    pub fn new(objective: Objective, x0: DVector<f64>) -> Self {
        let v0 = DVector::zeros(x0.len());
        Self {
            p: 2.0,
            p_ring: 2.0,
            c: 1.0,
            objective,
            x0,
            v0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("p_ring", self.p_ring), ("C", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        check_dim(self.dim(), self.v0.len(), "initial velocity")?;
        self.objective.validate_at(std::slice::from_ref(&self.x0))
    }

    /// Initial momentum with `ẋ = D_rH = p t^{−p−1} r`: `r₀ = t₀^{p+1} v₀ / p`.
    pub fn initial_momentum(&self) -> DVector<f64> {
        &self.v0 * (START_TIME.powf(self.p + 1.0) / self.p)
    }
}

/// The time-dependent Bregman Hamiltonian; non-finite for `t ≤ 0`.
pub fn bregman_hamiltonian(cfg: &BregmanConfig) -> HamiltonianProblem {
    let (p, c, n) = (cfg.p, cfg.c, cfg.dim());
    let nan = |t: f64| if t > 0.0 { 1.0 } else { f64::NAN };
    let (o1, o2) = (cfg.objective.clone(), cfg.objective.clone());
    let o3 = cfg.objective.clone();
    HamiltonianProblem::finite_difference("bregman", n, move |t, x, r| {
        nan(t) * (p / (2.0 * t.powf(p + 1.0)) * r.norm_squared() + c * p * t.powf(2.0 * p - 1.0) * o1.value(x))
    })
    .with_d_q(move |t, x, _| nan(t) * c * p * t.powf(2.0 * p - 1.0) * o2.gradient(x))
    .with_d_p(move |t, _, r| nan(t) * p / t.powf(p + 1.0) * r)
    .with_d_pp(move |t, _, _| DMatrix::identity(n, n) * (nan(t) * p / t.powf(p + 1.0)))
    .with_d_t(move |t, x, r| {
        nan(t)
            * (-p * (p + 1.0) / (2.0 * t.powf(p + 2.0)) * r.norm_squared()
                + c * p * (2.0 * p - 1.0) * t.powf(2.0 * p - 2.0) * o3.value(x))
    })
}

/// Point `(q, q_t, r, r_t)` of the extended phase space, `q_t` the physical
/// time and `r_t` its conjugate momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub q: DVector<f64>,
    pub q_t: f64,
    pub r: DVector<f64>,
    pub r_t: f64,
}

impl ExtendedState {
    /// `(q̄, r̄) = ([q; q_t], [r; r_t])`.
    pub fn to_phase_point(&self) -> PhasePoint {
        let n = self.q.len();
        PhasePoint::new(
            DVector::from_fn(n + 1, |i, _| if i < n { self.q[i] } else { self.q_t }),
            DVector::from_fn(n + 1, |i, _| if i < n { self.r[i] } else { self.r_t }),
        )
    }

    pub fn from_phase_point(z: &PhasePoint) -> Self {
        let n = z.dim() - 1;
        Self {
            q: z.q.rows(0, n).into_owned(),
            q_t: z.q[n],
            r: z.p.rows(0, n).into_owned(),
            r_t: z.p[n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_phase_point().is_finite()
    }
}

type MonitorFn = Arc<dyn Fn(f64, &PhasePoint) -> f64 + Send + Sync>;

/// Positive `g(t, q, p) = dt/dτ`.
#[derive(Clone)]
pub struct Monitor {
    value: MonitorFn,
}

impl fmt::Debug for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Monitor")
    }
}

impl Monitor {
    pub fn new<F>(g: F) -> Self
    where
        F: Fn(f64, &PhasePoint) -> f64 + Send + Sync + 'static,
    {
        Self { value: Arc::new(g) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c)
    }

    /// `(p/p̊) t^{1−p̊/p}`, the rescaling of the adaptive Bregman problem.
    pub fn bregman(p: f64, p_ring: f64) -> Self {
        Self::new(move |t, _| p / p_ring * t.powf(1.0 - p_ring / p))
    }

    pub fn value(&self, t: f64, z: &PhasePoint) -> f64 {
        (self.value)(t, z)
    }

    /// Central differences `(∂_q g, ∂_t g, ∂_p g)`.
    fn gradient(&self, t: f64, z: &PhasePoint) -> (DVector<f64>, f64, DVector<f64>) {
        let n = z.dim();
        let mut w = z.clone();
        let mut dq = DVector::zeros(n);
        let mut dp = DVector::zeros(n);
        for i in 0..n {
            let d = FD_STEP * z.q[i].abs().max(1.0);
            w.q[i] = z.q[i] + d;
            let a = self.value(t, &w);
            w.q[i] = z.q[i] - d;
            let b = self.value(t, &w);
            w.q[i] = z.q[i];
            dq[i] = (a - b) / (2.0 * d);
            let d = FD_STEP * z.p[i].abs().max(1.0);
            w.p[i] = z.p[i] + d;
            let a = self.value(t, &w);
            w.p[i] = z.p[i] - d;
            let b = self.value(t, &w);
            w.p[i] = z.p[i];
            dp[i] = (a - b) / (2.0 * d);
        }
        let d = FD_STEP * t.abs().max(1.0);
        let dt = (self.value(t + d, z) - self.value(t - d, z)) / (2.0 * d);
        (dq, dt, dp)
    }
}

fn split(qbar: &DVector<f64>, rbar: &DVector<f64>) -> (f64, PhasePoint, f64) {
    let n = qbar.len() - 1;
    (
        qbar[n],
        PhasePoint::new(qbar.rows(0, n).into_owned(), rbar.rows(0, n).into_owned()),
        rbar[n],
    )
}

fn stack(a: DVector<f64>, b: f64) -> DVector<f64> {
    let n = a.len();
    DVector::from_fn(n + 1, |i, _| if i < n { a[i] } else { b })
}

/// `H̄(q̄, r̄) = g(q_t, q, r) (H(q_t, q, r) + r_t)` on the extended phase
/// space, with the initial state `q_t = t₀`, `r_t = −H(t₀, z₀)` on `H̄ = 0`.
pub fn poincare_transform(
    prob: &HamiltonianProblem,
    monitor: &Monitor,
    z0: &PhasePoint,
    t0: f64,
) -> Result<(HamiltonianProblem, ExtendedState)> {
    check_dim(prob.dim(), z0.dim(), "initial state")?;
    let g0 = monitor.value(t0, z0);
    if !(g0 > 0.0) {
        return Err(Error::InvalidArgument(format!("monitor must be positive at the start, got {g0}")));
    }
    let h0 = prob.try_value(t0, &z0.q, &z0.p)?;
    let state = ExtendedState {
        q: z0.q.clone(),
        q_t: t0,
        r: z0.p.clone(),
        r_t: -h0,
    };

    let (p1, m1) = (prob.clone(), monitor.clone());
    let value = move |_: f64, qb: &DVector<f64>, rb: &DVector<f64>| {
        let (t, z, rt) = split(qb, rb);
        m1.value(t, &z) * (p1.value(t, &z.q, &z.p) + rt)
    };
    let (p2, m2) = (prob.clone(), monitor.clone());
    let d_q = move |_: f64, qb: &DVector<f64>, rb: &DVector<f64>| {
        let (t, z, rt) = split(qb, rb);
        let (g, e) = (m2.value(t, &z), p2.value(t, &z.q, &z.p) + rt);
        let (gq, gt, _) = m2.gradient(t, &z);
        stack(e * gq + g * p2.d_q(t, &z.q, &z.p), e * gt + g * p2.d_t(t, &z.q, &z.p))
    };
    let (p3, m3) = (prob.clone(), monitor.clone());
    let d_p = move |_: f64, qb: &DVector<f64>, rb: &DVector<f64>| {
        let (t, z, rt) = split(qb, rb);
        let (g, e) = (m3.value(t, &z), p3.value(t, &z.q, &z.p) + rt);
        let (_, _, gp) = m3.gradient(t, &z);
        stack(e * gp + g * p3.d_p(t, &z.q, &z.p), g)
    };
    let extended = HamiltonianProblem::finite_difference(&format!("{}_poincare", prob.label()), prob.dim() + 1, value)
        .with_d_q(d_q)
        .with_d_p(d_p)
        .with_d_t(|_, _, _| 0.0);
    Ok((extended, state))
}

/// The time-adaptive Bregman Hamiltonian on `(q, q_t, r, r_t)`:
///
/// `H̄ = (1/p̊)[p²/(2 q_t^{p+p̊/p}) |r|² + C p² q_t^{2p−p̊/p} f(q) + p r_t q_t^{1−p̊/p}]`.
///
/// Non-finite where `q_t ≤ 0`.
pub fn adaptive_bregman_problem(cfg: &BregmanConfig) -> HamiltonianProblem {
    let (p, pr, c, n) = (cfg.p, cfg.p_ring, cfg.c, cfg.dim());
    let a = p * p / (2.0 * pr);
    let b = c * p * p / pr;
    let k = p / pr;
    let (e1, e2, e3) = (-(p + pr / p), 2.0 * p - pr / p, 1.0 - pr / p);
    let pw = |s: f64, e: f64| if s > 0.0 { s.powf(e) } else { f64::NAN };
    let (o1, o2, o3) = (cfg.objective.clone(), cfg.objective.clone(), cfg.objective.clone());
    HamiltonianProblem::finite_difference("adaptive_bregman", n + 1, move |_, qb, rb| {
        let (s, z, rt) = split(qb, rb);
        a * pw(s, e1) * z.p.norm_squared() + b * pw(s, e2) * o1.value(&z.q) + k * rt * pw(s, e3)
    })
    .with_d_q(move |_, qb, rb| {
        let (s, z, rt) = split(qb, rb);
        let ds = a * e1 * pw(s, e1 - 1.0) * z.p.norm_squared()
            + b * e2 * pw(s, e2 - 1.0) * o2.value(&z.q)
            + k * e3 * rt * pw(s, e3 - 1.0);
        stack(b * pw(s, e2) * o2.gradient(&z.q), ds)
    })
    .with_d_p(move |_, qb, rb| {
        let (s, z, _) = split(qb, rb);
        stack(2.0 * a * pw(s, e1) * &z.p, k * pw(s, e3))
    })
    .with_d_pp(move |_, qb, _| {
        let s = qb[n];
        let mut m = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            m[(i, i)] = 2.0 * a * pw(s, e1);
        }
        m
    })
    .with_d_t(|_, _, _| 0.0)
    .with_label(&format!("adaptive_bregman_{}", o3.label()))
}

/// Start of the adaptive run: `q_t = t₀`, `r₀` from `v₀`, `r_t = −H(t₀, x₀, r₀)`.
pub fn adaptive_initial_state(cfg: &BregmanConfig) -> ExtendedState {
    let r = cfg.initial_momentum();
    let h = bregman_hamiltonian(cfg).value(START_TIME, &cfg.x0, &r);
    ExtendedState {
        q: cfg.x0.clone(),
        q_t: START_TIME,
        r,
        r_t: -h,
    }
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub physical_times: Vec<f64>,
    /// `f(x_k) − f*`.
    pub gaps: Vec<f64>,
    /// Log-log slope of the upper envelope of the gaps over the final
    /// decade of physical time; `None` when no decay is measurable.
    pub slope: Option<f64>,
    /// `max_k |H̄(z_k)|`.
    pub max_abs_hbar: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizeOutput {
    /// Extended states against fictive time.
    pub iterates: Trajectory,
    pub rate: RateReport,
}

/// Fitted slope of `suffix_max(gaps)` against `t` over `t ≥ t_end/10`
/// (all samples when the run spans less than a decade).
pub fn final_decade_slope(times: &[f64], gaps: &[f64]) -> Option<f64> {
    let t_end = *times.last()?;
    let envelope = suffix_max(gaps);
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(&envelope)
        .filter(|(t, _)| **t >= t_end / 10.0)
        .map(|(t, g)| (*t, *g))
        .collect();
    loglog_slope(&points).ok()
}

/// Integrate the adaptive Bregman system for `fictive_steps` steps of size
/// `h_tau`.
pub fn minimize(cfg: &BregmanConfig, stepper: &dyn Stepper, fictive_steps: usize, h_tau: f64) -> Result<MinimizeOutput> {
    cfg.validate()?;
    if fictive_steps == 0 || !(h_tau > 0.0) {
        return Err(Error::InvalidArgument("need fictive_steps ≥ 1 and h_tau > 0".into()));
    }
    let f_star = cfg.objective.minimum().ok_or_else(|| {
        Error::InvalidArgument(format!("objective '{}' has no known minimum", cfg.objective.label()))
    })?;
    let prob = adaptive_bregman_problem(cfg);
    let mut z = adaptive_initial_state(cfg).to_phase_point();
    let n = cfg.dim();
    let mut taus = vec![0.0];
    let mut states = vec![z.clone()];
    let mut physical = vec![z.q[n]];
    let mut gaps = vec![cfg.objective.value(&cfg.x0) - f_star];
    let mut hbar: f64 = prob.value(0.0, &z.q, &z.p).abs();
    for k in 0..fictive_steps {
        let tau = k as f64 * h_tau;
        z = stepper.step(&prob, tau, h_tau, &z).map_err(|e| e.at_step(k))?;
        let x = z.q.rows(0, n).into_owned();
        let gap = cfg.objective.value(&x) - f_star;
        let magnitude = gap.abs().max(z.q.amax()).max(z.p.amax());
        if !(magnitude <= BLOW_UP_LIMIT) {
            let history = Trajectory::new(taus, states, stepper.label())?;
            return Err(Error::BlowUp {
                step: k,
                magnitude,
                history: Box::new(history),
            });
        }
        hbar = hbar.max(prob.value(0.0, &z.q, &z.p).abs());
        taus.push((k + 1) as f64 * h_tau);
        physical.push(z.q[n]);
        gaps.push(gap);
        states.push(z.clone());
    }
    let slope = final_decade_slope(&physical, &gaps);
    Ok(MinimizeOutput {
        iterates: Trajectory::new(taus, states, format!("adaptive/{}", stepper.label()))?,
        rate: RateReport {
            physical_times: physical,
            gaps,
            slope,
            max_abs_hbar: hbar,
        },
    })
}

/// Convex quadratics used by rate and conservation checks.
pub fn quadratic_battery() -> Vec<BregmanConfig> {
    use nalgebra::dvector;
    vec![
        BregmanConfig::new(Objective::quadratic(dvector![1.0], dvector![0.5]), dvector![2.0]),
        BregmanConfig::new(Objective::quadratic(dvector![1.0, 4.0], dvector![1.0, -1.0]), dvector![0.0, 0.0]),
        BregmanConfig::new(
            Objective::quadratic(dvector![0.5, 1.0, 2.0], dvector![0.0, 0.3, -0.2]),
            dvector![1.0, -1.0, 0.5],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp::solve_ivp;
    use crate::integrators::Scheme;
    use nalgebra::dvector;

    fn quad() -> BregmanConfig {
        quadratic_battery().remove(1)
    }

    #[test]
    fn bregman_examples() {
        let zero = Objective::new("zero", |_| 0.0, |x| DVector::zeros(x.len()));
        let h = bregman_hamiltonian(&BregmanConfig::new(zero, dvector![0.3]));
        assert_eq!(h.value(2.0, &dvector![0.3], &dvector![0.0]), 0.0);
        let one = Objective::new("one", |_| 1.0, |x| DVector::zeros(x.len()));
        let h = bregman_hamiltonian(&BregmanConfig::new(one, dvector![0.3]));
        assert_eq!(h.value(1.0, &dvector![0.3], &dvector![0.0]), 2.0);
        assert!(h.try_value(0.0, &dvector![0.3], &dvector![0.0]).is_err());
        assert!(h.try_value(-1.0, &dvector![0.3], &dvector![0.0]).is_err());
    }

    #[test]
    fn analytic_derivatives_validate() {
        let cfg = quad();
        let samples: Vec<_> = [0.5, 1.3, 2.0]
            .iter()
            .map(|&s| (s, PhasePoint::from_slices(&[s, -s], &[0.3 * s, 1.0 - s])))
            .collect();
        bregman_hamiltonian(&cfg).validate_at(&samples).unwrap();
        let ext: Vec<_> = [0.5, 1.3, 2.0]
            .iter()
            .map(|&s| (0.0, PhasePoint::from_slices(&[s, -s, 1.0 + s], &[0.3 * s, 1.0 - s, -0.7])))
            .collect();
        adaptive_bregman_problem(&cfg).validate_at(&ext).unwrap();
    }

    #[test]
    fn adaptive_problem_is_the_poincare_transform() {
        let cfg = quad();
        let adaptive = adaptive_bregman_problem(&cfg);
        let z0 = PhasePoint::new(cfg.x0.clone(), cfg.initial_momentum());
        let (ext, _) = poincare_transform(&bregman_hamiltonian(&cfg), &Monitor::bregman(cfg.p, cfg.p_ring), &z0, 1.0).unwrap();
        for s in [0.7, 1.0, 3.5, 20.0] {
            let qb = dvector![0.2 * s, 1.0 - s, s];
            let rb = dvector![0.4, -0.1 * s, -1.3];
            let (a, b) = (adaptive.value(0.0, &qb, &rb), ext.value(0.0, &qb, &rb));
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            assert!((adaptive.d_q(0.0, &qb, &rb) - ext.d_q(0.0, &qb, &rb)).amax() < 1e-6 * (1.0 + a.abs()));
            assert!((adaptive.d_p(0.0, &qb, &rb) - ext.d_p(0.0, &qb, &rb)).amax() < 1e-6 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn exponent_arithmetic_when_rates_agree() {
        // p = p̊ makes the r_t term independent of q_t.
        let cfg = quad();
        let h = adaptive_bregman_problem(&cfg);
        let dp = |s: f64| h.d_p(0.0, &dvector![0.0, 0.0, s], &dvector![0.0, 0.0, 0.0])[2];
        assert_eq!(dp(1.0), 1.0);
        assert_eq!(dp(7.0), 1.0);
    }

    #[test]
    fn poincare_initial_state_is_on_the_zero_level() {
        let cfg = quad();
        let z0 = PhasePoint::new(cfg.x0.clone(), dvector![0.3, -0.2]);
        let (ext, s) = poincare_transform(&bregman_hamiltonian(&cfg), &Monitor::constant(2.0), &z0, 1.0).unwrap();
        let zb = s.to_phase_point();
        assert!(ext.value(0.0, &zb.q, &zb.p).abs() <= 1e-14);
        let s2 = adaptive_initial_state(&cfg).to_phase_point();
        assert!(adaptive_bregman_problem(&cfg).value(0.0, &s2.q, &s2.p).abs() <= 1e-14);
        assert!(poincare_transform(&bregman_hamiltonian(&cfg), &Monitor::constant(0.0), &z0, 1.0).is_err());
    }

    #[test]
    fn unit_monitor_reproduces_the_flow() {
        let prob = crate::problems::driven_oscillator(0.5, 2.0);
        let z0 = PhasePoint::from_slices(&[1.0], &[0.0]);
        let direct = solve_ivp(&prob, &z0, 2.0, &Scheme::Midpoint, 100).unwrap();
        let (ext, s) = poincare_transform(&prob, &Monitor::constant(1.0), &z0, 0.0).unwrap();
        let lifted = solve_ivp(&ext, &s.to_phase_point(), 2.0, &Scheme::Midpoint, 100).unwrap();
        for (k, (a, b)) in direct.states.iter().zip(&lifted.states).enumerate() {
            let e = ExtendedState::from_phase_point(b);
            assert!((&a.q - &e.q).amax() <= 1e-8 && (&a.p - &e.r).amax() <= 1e-8);
            assert!((e.q_t - direct.times[k]).abs() <= 1e-8);
        }
    }

    #[test]
    fn constant_monitor_sets_the_clock_rate() {
        let prob = crate::problems::oscillator();
        let z0 = PhasePoint::from_slices(&[1.0], &[0.0]);
        let (ext, s) = poincare_transform(&prob, &Monitor::constant(2.0), &z0, 0.0).unwrap();
        let run = solve_ivp(&ext, &s.to_phase_point(), 1.0, &Scheme::Midpoint, 50).unwrap();
        for (tau, z) in run.times.iter().zip(&run.states) {
            assert!((z.q[1] - 2.0 * tau).abs() <= 1e-6);
        }
    }

    #[test]
    fn reference_flow_rate() {
        // Time-dependent Bregman flow integrated directly from t = 1 to 100.
        let cfg = BregmanConfig::new(Objective::quadratic(dvector![1.0], dvector![0.0]), dvector![1.0]);
        let prob = bregman_hamiltonian(&cfg).time_shifted(START_TIME);
        let z0 = PhasePoint::new(cfg.x0.clone(), cfg.initial_momentum());
        let run = solve_ivp(&prob, &z0, 99.0, &Scheme::parse("gauss2").unwrap(), 4000).unwrap();
        let times: Vec<f64> = run.times.iter().map(|t| t + START_TIME).collect();
        let gaps: Vec<f64> = run.states.iter().map(|z| cfg.objective.value(&z.q)).collect();
        let slope = final_decade_slope(&times, &gaps).unwrap();
        assert!(slope <= -1.8, "{slope}");
    }

    #[test]
    fn adaptive_rate_and_stationary_start() {
        for cfg in quadratic_battery() {
            let out = minimize(&cfg, &Scheme::Midpoint, 10_000, RATE_H_TAU).unwrap();
            let slope = out.rate.slope.unwrap();
            assert!(slope <= -1.8, "{}: {slope}", cfg.objective.label());
        }
        let at_rest = BregmanConfig::new(Objective::quadratic(dvector![1.0, 2.0], dvector![0.3, 0.4]), dvector![0.3, 0.4]);
        let out = minimize(&at_rest, &Scheme::Midpoint, 200, 0.05).unwrap();
        assert!(out.rate.gaps.iter().all(|g| g.abs() <= 1e-12));
    }

    #[test]
    fn conservation_and_euler_contrast() {
        // Midpoint keeps |H̄| near 7h² on this battery.
        for cfg in quadratic_battery() {
            let sym = minimize(&cfg, &Scheme::Midpoint, 10_000, CONSERVATION_H_TAU).unwrap();
            assert!(sym.rate.max_abs_hbar <= 1e-8, "{:e}", sym.rate.max_abs_hbar);
            let euler = minimize(&cfg, &Scheme::ExplicitEuler, 10_000, CONSERVATION_H_TAU).unwrap();
            assert!(euler.rate.max_abs_hbar >= 10.0 * sym.rate.max_abs_hbar);
        }
    }
}

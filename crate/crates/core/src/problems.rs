//! Built-in Hamiltonians used by tests, experiments and examples.

use crate::problem::{AutoHamiltonian, HamiltonianProblem, Scalar};

macro_rules! scalar_model {
    ($name:ident, |$t:ident, $q:ident, $p:ident| $body:expr) => {
        struct $name;
        impl AutoHamiltonian for $name {
            fn dim(&self) -> usize {
                1
            }
            #[allow(unused_variables)]
            fn eval<S: Scalar>(&self, $t: S, $q: &[S], $p: &[S]) -> S {
                $body
            }
        }
    };
}

scalar_model!(Oscillator, |t, q, p| (p[0] * p[0] + q[0] * q[0]) * 0.5);
scalar_model!(FreeParticle, |t, q, p| p[0] * p[0] * 0.5);
scalar_model!(Drift, |t, q, p| p[0]);
scalar_model!(PureForce, |t, q, p| q[0]);
scalar_model!(LinearDegenerate, |t, q, p| p[0] * q[0]);
scalar_model!(Pendulum, |t, q, p| p[0] * p[0] * 0.5 + q[0].cos());
scalar_model!(DegenerateQuadratic, |t, q, p| p[0] * q[0]
    + q[0] * q[0] * 0.5);

/// `H = (p² + q²)/2`.
pub fn oscillator() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("oscillator", Oscillator)
}

/// `H = p²/2`.
pub fn free_particle() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("free_particle", FreeParticle)
}

/// `H = p`: unit drift in `q`.
pub fn drift() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("drift", Drift).flag_maximally_degenerate()
}

/// `H = q`: constant unit force.
pub fn pure_force() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("pure_force", PureForce)
}

/// `H = p·q`, the adjoint Hamiltonian of `q̇ = q`.
pub fn linear_degenerate() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("linear_degenerate", LinearDegenerate)
        .flag_maximally_degenerate()
}

/// `H = p²/2 + cos q`.
pub fn pendulum() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("pendulum", Pendulum)
}

/// `H = p·q + q²/2`: degenerate, with no Lagrangian counterpart.
pub fn degenerate_quadratic() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("degenerate_quadratic", DegenerateQuadratic)
        .flag_maximally_degenerate()
}

struct Zero(usize);

impl AutoHamiltonian for Zero {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval<S: Scalar>(&self, _t: S, _q: &[S], _p: &[S]) -> S {
        S::zero()
    }
}

/// `H ≡ 0` on `T*ℝⁿ`.
pub fn zero(n: usize) -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("zero", Zero(n)).flag_maximally_degenerate()
}

struct Driven {
    amplitude: f64,
    frequency: f64,
}

impl AutoHamiltonian for Driven {
    fn dim(&self) -> usize {
        1
    }
    fn eval<S: Scalar>(&self, t: S, q: &[S], p: &[S]) -> S {
        (p[0] * p[0] + q[0] * q[0]) * 0.5 - q[0] * (t * self.frequency).sin() * self.amplitude
    }
}

/// `H = (p² + q²)/2 − a·q·sin(ωt)`.
pub fn driven_oscillator(amplitude: f64, frequency: f64) -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff(
        "driven_oscillator",
        Driven {
            amplitude,
            frequency,
        },
    )
}

struct CentralForce;

impl AutoHamiltonian for CentralForce {
    fn dim(&self) -> usize {
        2
    }
    fn eval<S: Scalar>(&self, _t: S, q: &[S], p: &[S]) -> S {
        let r2 = q[0] * q[0] + q[1] * q[1];
        (p[0] * p[0] + p[1] * p[1]) * 0.5 + r2 * 0.5 + r2 * r2 * 0.25
    }
}

/// Planar anharmonic central force `H = |p|²/2 + V(|q|²)` with
/// `V(s) = s/2 + s²/4`. Angular momentum `q₁p₂ − q₂p₁` is conserved.
pub fn central_force() -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("central_force", CentralForce)
}

/// Angular momentum `q₁p₂ − q₂p₁` of a planar state.
pub fn angular_momentum(z: &crate::problem::PhasePoint) -> f64 {
    z.q[0] * z.p[1] - z.q[1] * z.p[0]
}

/// Parameters of the model degenerate Hamiltonian
/// `H = (p_r² + q_r²)/2 + p_d·a·q_d + g₁q_d + g₂q_d²/2` on `T*ℝ²`,
/// coordinates ordered `(q_r, q_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    pub g1: f64,
    pub g2: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            g1: 0.0,
            g2: 0.0,
        }
    }
}

struct Model(ModelParams);

impl AutoHamiltonian for Model {
    fn dim(&self) -> usize {
        2
    }
    fn eval<S: Scalar>(&self, _t: S, q: &[S], p: &[S]) -> S {
        let m = &self.0;
        let regular = (p[0] * p[0] + q[0] * q[0]) * 0.5;
        let degenerate = p[1] * q[1] * m.a + q[1] * m.g1 + q[1] * q[1] * (0.5 * m.g2);
        regular + degenerate
    }
}

/// Regular oscillator block plus a maximally degenerate block.
pub fn model_degenerate(params: ModelParams) -> HamiltonianProblem {
    HamiltonianProblem::from_autodiff("model_degenerate", Model(params))
}

/// Every built-in problem.
pub fn catalogue() -> Vec<HamiltonianProblem> {
    vec![
        oscillator(),
        free_particle(),
        drift(),
        pure_force(),
        linear_degenerate(),
        pendulum(),
        degenerate_quadratic(),
        zero(2),
        driven_oscillator(0.5, 2.0),
        central_force(),
        model_degenerate(ModelParams::default()),
        model_degenerate(ModelParams {
            a: -0.5,
            g1: 0.3,
            g2: 1.0,
        }),
    ]
}

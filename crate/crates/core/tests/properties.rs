use hamflow::adjoint::{make_adjoint_problem, nonlinear_battery};
use hamflow::fit::loglog_slope;
use hamflow::hamel::{coadjoint, hamel_bracket, Trivialization};
use hamflow::integrators::{symplecticity_defect, Scheme};
use hamflow::newton::{newton_solve, NewtonOptions};
use hamflow::problem::{HamiltonianProblem, PhasePoint};
use hamflow::problems;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -2.0..2.0f64
}

fn vec3() -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(coord()).prop_map(|a| DVector::from_row_slice(&a))
}

fn point(n: usize) -> impl Strategy<Value = PhasePoint> {
    (prop::collection::vec(coord(), n), prop::collection::vec(coord(), n))
        .prop_map(|(q, p)| PhasePoint::from_slices(&q, &p))
}

fn fd_reference(prob: &HamiltonianProblem) -> HamiltonianProblem {
    let p = prob.clone();
    HamiltonianProblem::finite_difference("fd", prob.dim(), move |t, q, pp| p.value(t, q, pp))
}

fn cross(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_row_slice(&[
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn autodiff_matches_finite_differences(t in 0.0..3.0f64, z1 in point(1), z2 in point(2)) {
        for prob in problems::catalogue() {
            let z = if prob.dim() == 1 { z1.clone() } else { z2.clone() };
            let fd = fd_reference(&prob);
            let scale = 1.0 + prob.d_q(t, &z.q, &z.p).amax() + prob.d_p(t, &z.q, &z.p).amax();
            prop_assert!((prob.d_q(t, &z.q, &z.p) - fd.d_q(t, &z.q, &z.p)).amax() <= 1e-6 * scale);
            prop_assert!((prob.d_p(t, &z.q, &z.p) - fd.d_p(t, &z.q, &z.p)).amax() <= 1e-6 * scale);
            prop_assert!((prob.d_pp(t, &z.q, &z.p) - fd.d_pp(t, &z.q, &z.p)).amax() <= 1e-5 * scale);
        }
    }

    #[test]
    fn degenerate_velocity_ignores_momentum(t in 0.0..3.0f64, a in point(2), b in point(2)) {
        for prob in problems::catalogue().into_iter().filter(|p| p.is_flagged_maximally_degenerate()) {
            let n = prob.dim();
            let q = a.q.rows(0, n).into_owned();
            let (p1, p2) = (a.p.rows(0, n).into_owned(), b.p.rows(0, n).into_owned());
            prop_assert_eq!(prob.d_p(t, &q, &p1), prob.d_p(t, &q, &p2));
        }
    }

    #[test]
    fn adjoint_hamiltonians_are_flat(t in 0.0..2.0f64, z in point(2)) {
        for cp in nonlinear_battery() {
            let prob = make_adjoint_problem(&cp);
            let n = prob.dim();
            let (q, p) = (z.q.rows(0, n).into_owned(), z.p.rows(0, n).into_owned());
            prop_assert!(prob.d_pp(t, &q, &p).amax() <= 1e-14);
        }
    }

    #[test]
    fn newton_solves_linear_systems_in_one_step(entries in prop::array::uniform9(-1.0..1.0f64), b in vec3()) {
        let a = DMatrix::from_row_slice(3, 3, &entries) + DMatrix::identity(3, 3) * 4.0;
        let sol = newton_solve(|x| Ok(&a * x - &b), &DVector::zeros(3), &NewtonOptions::default()).unwrap();
        prop_assert_eq!(sol.iterations, 1);
        prop_assert!((&a * &sol.x - &b).amax() <= 1e-12);
    }

    #[test]
    fn hamel_bracket_is_antisymmetric(q in vec3(), u in vec3(), v in vec3()) {
        let triv = Trivialization::so3();
        let q = q * 0.5;
        let uv = hamel_bracket(&triv, &q, &u, &v).unwrap();
        let vu = hamel_bracket(&triv, &q, &v, &u).unwrap();
        prop_assert!((&uv + &vu).amax() <= 1e-10 * (1.0 + uv.amax()));
        prop_assert!((uv - cross(&u, &v)).amax() <= 1e-8);
    }

    #[test]
    fn coadjoint_is_dual_to_the_bracket(q in vec3(), xi in vec3(), alpha in vec3(), v in vec3()) {
        let triv = Trivialization::so3();
        let q = q * 0.5;
        let lhs = coadjoint(&triv, &q, &xi, &alpha).unwrap().dot(&v);
        let rhs = alpha.dot(&hamel_bracket(&triv, &q, &xi, &v).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn midpoint_map_is_symplectic(z in point(1)) {
        let d = symplecticity_defect(&Scheme::Midpoint, &problems::pendulum(), 0.0, &z, 0.1).unwrap();
        prop_assert!(d <= 1e-7);
    }

    #[test]
    fn time_reversal_is_an_involution(t in 0.0..2.0f64, z in point(1)) {
        let prob = problems::driven_oscillator(0.5, 2.0);
        let twice = prob.time_reversed(2.0).time_reversed(2.0);
        // Only 2 − (2 − t) ≠ t rounding separates the two.
        prop_assert!((prob.value(t, &z.q, &z.p) - twice.value(t, &z.q, &z.p)).abs() <= 1e-14);
        prop_assert!((prob.d_q(t, &z.q, &z.p) - twice.d_q(t, &z.q, &z.p)).amax() <= 1e-14);
    }

    #[test]
    fn phase_point_round_trip(z in point(3)) {
        prop_assert_eq!(PhasePoint::from_vector(&z.to_vector()), z);
    }

    #[test]
    fn power_laws_have_exact_slopes(k in -4.0..4.0f64, c in 0.1..10.0f64) {
        let pts: Vec<(f64, f64)> = (1..8).map(|i| (i as f64, c * (i as f64).powf(k))).collect();
        prop_assert!((loglog_slope(&pts).unwrap() - k).abs() <= 1e-10);
    }
}

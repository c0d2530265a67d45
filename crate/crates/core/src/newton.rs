//! Damped Newton iteration shared by every implicit solver in the crate.
//!
//! Jacobians are formed by central differences unless the caller supplies
//! one. Steps are globalized by Armijo backtracking on `½‖F‖₂²` with factor
//! 0.5 down to a minimum step of 2⁻³⁰.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Absolute tolerance on `‖F(x)‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra iterations taken after `tol` is met, kept only while the
    /// residual keeps decreasing. Used by inner solves whose output is
    /// differentiated numerically and must sit at round-off level.
    pub polish: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            polish: 0,
        }
    }
}

impl NewtonOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_polish(mut self, polish: usize) -> Self {
        self.polish = polish;
        self
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub x: DVector<f64>,
    /// `‖F(x)‖∞` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Solve `F(x) = 0` from `x0` with a finite-difference Jacobian.
pub fn newton_solve<F>(f: F, x0: &DVector<f64>, opts: &NewtonOptions) -> Result<NewtonSolution>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    solve(f, None::<fn(&DVector<f64>) -> Result<DMatrix<f64>>>, x0, opts)
}

/// Solve `F(x) = 0` from `x0` with a caller-supplied Jacobian.
pub fn newton_solve_with_jacobian<F, J>(
    f: F,
    jac: J,
    x0: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonSolution>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    solve(f, Some(jac), x0, opts)
}

/// Relative step of the central-difference Jacobian. Central differences are
/// exact for quadratics at any step, so a large step keeps round-off small
/// and linear systems converge in one iteration; for general smooth `F` the
/// `O(δ²)` Jacobian error only slows convergence to superlinear.
const FD_JACOBIAN_STEP: f64 = 1.0 / 1024.0;

/// Central-difference Jacobian of `f` at `x` with `rows` outputs.
pub fn fd_jacobian<F>(f: &mut F, x: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k = x.len();
    let mut jac = DMatrix::zeros(rows, k);
    let mut xp = x.clone();
    for i in 0..k {
        let delta = FD_JACOBIAN_STEP * x[i].abs().max(1.0);
        let xi = x[i];
        let (hi, lo) = (xi + delta, xi - delta);
        xp[i] = hi;
        let fp = f(&xp)?;
        xp[i] = lo;
        let fm = f(&xp)?;
        xp[i] = xi;
        check_len(&fp, rows)?;
        check_len(&fm, rows)?;
        jac.set_column(i, &((fp - fm) / (hi - lo)));
    }
    Ok(jac)
}

fn check_len(v: &DVector<f64>, rows: usize) -> Result<()> {
    crate::error::check_dim(rows, v.len(), "residual length")
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Factored {
    fn new(jac: DMatrix<f64>) -> Result<Self> {
        if jac.nrows() != jac.ncols() {
            return Err(Error::Dimension {
                expected: jac.ncols(),
                got: jac.nrows(),
                context: "Newton system must be square",
            });
        }
        if !jac.iter().all(|x| x.is_finite()) {
            return Err(Error::SingularJacobian {
                condition: f64::INFINITY,
            });
        }
        let lu = jac.lu();
        let u = lu.u();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..u.nrows() {
            let d = u[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let condition = if lo == 0.0 { f64::INFINITY } else { hi / lo };
        if !(condition <= 1.0 / f64::EPSILON) {
            return Err(Error::SingularJacobian { condition });
        }
        Ok(Self { lu })
    }

    fn direction(&self, fx: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(&(-fx))
            .ok_or(Error::SingularJacobian {
                condition: f64::INFINITY,
            })
    }
}

fn solve<F, J>(
    mut f: F,
    mut jac: Option<J>,
    x0: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonSolution>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let mut x = x0.clone();
    let mut fx = f(&x)?;
    if !finite(&fx) {
        return Err(Error::Evaluation {
            t: f64::NAN,
            what: "residual at initial guess".into(),
        });
    }
    let rows = fx.len();
    let mut res = inf_norm(&fx);
    let mut factored: Option<Factored> = None;
    let mut iterations = 0;

    let mut jacobian_at = |f: &mut F, x: &DVector<f64>| -> Result<Factored> {
        let j = match jac.as_mut() {
            Some(j) => j(x)?,
            None => fd_jacobian(f, x, rows)?,
        };
        Factored::new(j)
    };

    while res > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
                best: x,
            });
        }
        let fac = jacobian_at(&mut f, &x)?;
        let d = fac.direction(&fx)?;
        factored = Some(fac);

        let merit = fx.norm_squared();
        let mut alpha = 1.0;
        loop {
            let trial = &x + alpha * &d;
            if let Ok(ft) = f(&trial) {
                if finite(&ft) && ft.norm_squared() <= (1.0 - 2.0 * ARMIJO_C * alpha) * merit {
                    x = trial;
                    fx = ft;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: res,
                    best: x,
                });
            }
        }
        res = inf_norm(&fx);
        iterations += 1;
    }

    for _ in 0..opts.polish {
        if res == 0.0 {
            break;
        }
        let fac = match factored.take() {
            Some(fac) => fac,
            None => match jacobian_at(&mut f, &x) {
                Ok(fac) => fac,
                Err(_) => break,
            },
        };
        let Ok(d) = fac.direction(&fx) else { break };
        factored = Some(fac);
        let trial = &x + d;
        match f(&trial) {
            Ok(ft) if finite(&ft) && inf_norm(&ft) < res => {
                res = inf_norm(&ft);
                x = trial;
                fx = ft;
            }
            _ => break,
        }
    }

    Ok(NewtonSolution {
        x,
        residual: res,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn bisect(mut g: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let mut glo = g(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if (gm < 0.0) == (glo < 0.0) {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_quadratic_root() {
        let sol = newton_solve(
            |x| Ok(dvector![x[0] * x[0] - 4.0]),
            &dvector![3.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn linear_converges_in_one_iteration() {
        let sol = newton_solve(|x| Ok(dvector![x[0]]), &dvector![5.0], &NewtonOptions::default())
            .unwrap();
        assert!(sol.x[0].abs() < 1e-14);
        assert_eq!(sol.iterations, 1);

        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, 2.0, 5.0]);
        let b = dvector![1.0, -2.0, 0.5];
        let sol = newton_solve(
            |x| Ok(&a * x - &b),
            &dvector![10.0, -3.0, 7.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((&a * &sol.x - &b).amax() < 1e-10);
    }

    #[test]
    fn circle_line_intersection_matches_bisection() {
        // On the line x1 = x2 the system reduces to 2 s^2 - 1 = 0.
        let s = bisect(|s| 2.0 * s * s - 1.0, 0.0, 1.0);
        let sol = newton_solve(
            |x| Ok(dvector![x[0] * x[0] + x[1] * x[1] - 1.0, x[0] - x[1]]),
            &dvector![1.0, 0.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((sol.x[0] - s).abs() < 1e-10);
        assert!((sol.x[1] - s).abs() < 1e-10);
    }

    #[test]
    fn singular_jacobian_reported() {
        let err = newton_solve(
            |x| Ok(dvector![x[0] + x[1] - 1.0, 2.0 * x[0] + 2.0 * x[1] - 2.0]),
            &dvector![3.0, 3.0],
            &NewtonOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }), "{err}");
    }

    #[test]
    fn no_convergence_returns_best_iterate() {
        // x^2 + 1 has no real root.
        let err = newton_solve(
            |x| Ok(dvector![x[0] * x[0] + 1.0]),
            &dvector![0.5],
            &NewtonOptions::default().with_max_iter(5),
        )
        .unwrap_err();
        match err {
            Error::NoConvergence { residual, best, .. } => {
                assert!(residual >= 1.0);
                assert_eq!(best.len(), 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn polish_reaches_round_off() {
        let opts = NewtonOptions::default().with_tol(1e-3).with_polish(3);
        let sol = newton_solve(|x| Ok(dvector![x[0].exp() - 2.0]), &dvector![0.0], &opts).unwrap();
        assert!((sol.x[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn supplied_jacobian_is_used() {
        let mut calls = 0;
        let sol = newton_solve_with_jacobian(
            |x| Ok(dvector![x[0].powi(3) - 8.0]),
            |x| {
                calls += 1;
                Ok(DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]))
            },
            &dvector![3.0],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
        assert_eq!(calls, sol.iterations);
    }
}

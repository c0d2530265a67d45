use std::time::Instant;

use hamflow::adjoint::{diffusion_adjoint_demo, gradient_check, nonlinear_battery};
use hamflow::integrators::Scheme;

#[test]
fn diffusion_demo_at_full_resolution() {
    let start = Instant::now();
    let r = diffusion_adjoint_demo(31, 0.1, 2000).unwrap();
    eprintln!("nx=31: err {:e} in {:?}", r.err_vs_oracle, start.elapsed());
    assert!(r.err_vs_oracle <= 1e-4);
}

#[test]
fn battery_with_gauss2() {
    let stepper = Scheme::parse("gauss2").unwrap();
    for cp in nonlinear_battery() {
        assert!(gradient_check(&cp, &stepper, 200, 1e-5).unwrap() < 1e-5, "{}", cp.label());
    }
}

use hamflow::adjoint::{linear_example, sensitivity};
use hamflow::bvp::{solve_shooting, BoundarySpec};
use hamflow::integrators::Scheme;
use hamflow::problems;
use nalgebra::dvector;

fn main() -> hamflow::Result<()> {
    // Oscillator with q(0) = 1, p(1) = 0.2.
    let bc = BoundarySpec::TypeII { q0: dvector![1.0], p1: dvector![0.2] };
    let traj = solve_shooting(&problems::oscillator(), &bc, 1.0, &Scheme::Midpoint, 2000, &dvector![0.0])?;
    println!("p(0) = {}", traj.first().p[0]);

    // Gradient of a terminal cost with respect to q(0), from the adjoint sweep.
    let (grad, _) = sensitivity(&linear_example(), &Scheme::Midpoint, 100)?;
    println!("grad = {grad}");
    Ok(())
}

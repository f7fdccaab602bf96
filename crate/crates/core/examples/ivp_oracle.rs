//! Adaptive integration of the reduced ODE against a closed form.
use mrayleigh::closed_form::vdp_explicit;
use mrayleigh::coefficients::ReducedCoeffs;
use mrayleigh::oracle::integrate_reduction;

fn main() -> mrayleigh::Result<()> {
    let exact = vdp_explicit(1.0, 1.0, 3.0, 1.0)?;
    let coeffs = ReducedCoeffs::constant_van_der_pol(1.0, 1.0, 3.0);
    let sol = integrate_reduction(&coeffs, 0.0, exact.phi(0.0)?, exact.phi_prime(0.0)?, (-5.0, 5.0), 1e-10)?;
    println!("{} nodes", sol.nodes.len());
    let mut worst = 0.0_f64;
    for i in 0..=100 {
        let z = -5.0 + 0.1 * i as f64;
        let (phi, _) = sol.eval(z)?;
        worst = worst.max((phi - exact.phi(z)?).abs());
    }
    println!("max |phi - closed form| on [-5, 5]: {worst:.2e}");
    Ok(())
}

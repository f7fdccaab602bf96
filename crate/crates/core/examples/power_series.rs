//! Power-series profiles for affine coefficients.
use mrayleigh::series::{recurrence_residues, series_coefficients, AffineParams};

fn main() -> mrayleigh::Result<()> {
    let linear = series_coefficients(AffineParams::new(0.0, 0.0, 0.0, 1.0, 0.0, 1.0), 0.0, 1.0, 40)?;
    println!("linear: alpha[0..5] = {:?}", &linear.alpha[..5]);
    println!("  radius estimate {}", linear.radius_estimate);
    for z in [-1.0, 0.5, 2.0] {
        println!("  z = {z}: series {:.15}, 1 - exp(-z) {:.15}", linear.evaluate(z), 1.0 - (-z as f64).exp());
    }

    let cubic = series_coefficients(AffineParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0), 0.0, 1.0, 60)?;
    let worst = recurrence_residues(&cubic).into_iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    println!("cubic: radius estimate {:.4} (blow-up at 0.5)", cubic.radius_estimate);
    println!("  max recurrence residue {worst:.2e}");
    cubic.write_csv(std::io::stdout().lock())?;
    Ok(())
}

//! Lift a profile to three times and sweep the PDE residual on a grid.
//! Set MRAYLEIGH_THREADS to cap the worker count.
use mrayleigh::closed_form::vdp_explicit;
use mrayleigh::coefficients::{synthesize_structure, SpeedVector};
use mrayleigh::oracle::{profile_sweep, GridSpec};

fn main() -> mrayleigh::Result<()> {
    let lambda = SpeedVector::new(vec![1.0, 0.5, -0.25])?;
    let profile = vdp_explicit(1.0, 1.0, 3.0, 1.0)?.with_lambda(lambda.clone());
    let structure = synthesize_structure(profile.coeffs(), 3, &lambda)?;
    let grid = GridSpec::cube(3, -2.0, 2.0, 12);
    let report = profile_sweep(&profile, &structure, &grid)?;
    println!("{} points, max_abs {:.2e}, rms {:.2e}", report.len(), report.max_abs, report.rms);
    Ok(())
}

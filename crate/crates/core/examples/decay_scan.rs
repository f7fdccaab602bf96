//! Decay of lifted profiles along rays in the positive orthant.
use mrayleigh::closed_form::{soliton_arcsinh, vdp_explicit, Sign};
use mrayleigh::coefficients::SpeedVector;
use mrayleigh::oracle::{decay_check_profile, DecayOptions};

fn main() -> mrayleigh::Result<()> {
    let lambda = SpeedVector::new(vec![1.0, 1.0])?;
    let decaying = soliton_arcsinh(1.0, -1.0, -1.0, 1.0, 0.0, Sign::Plus)?.with_lambda(lambda.clone());
    let r = decay_check_profile(&decaying, 0.0, &[1.0, 1.0], 1e-3, DecayOptions::default())?;
    println!("arcsinh: ok {} crossing {:?}", r.ok, r.crossing_radius);

    let plateau = vdp_explicit(1.0, 1.0, 3.0, 1.0)?.with_lambda(lambda);
    let r = decay_check_profile(&plateau, 0.0, &[1.0, 1.0], 1e-3, DecayOptions::default())?;
    println!("vdp explicit: ok {} limit {:?}", r.ok, r.limit_metadata);
    Ok(())
}

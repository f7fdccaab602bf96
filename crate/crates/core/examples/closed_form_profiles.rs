//! The closed-form soliton families and their reduced-ODE residuals.
use mrayleigh::closed_form::{
    soliton_arccosh, soliton_arcsin, soliton_arcsinh, soliton_quadrature, vdp_explicit,
    DerivativeMode, Sign,
};
use mrayleigh::coefficients::ReducedCoeffs;
use mrayleigh::oracle::profile_residual_report;

fn main() -> mrayleigh::Result<()> {
    let profiles = vec![
        soliton_quadrature(&ReducedCoeffs::constant_rayleigh(1.0, 0.0, 1.0), 1.0, 0.0, (-5.0, 5.0))?,
        soliton_arccosh(1.0, 1.0, 1.0, 1.0, 0.0, Sign::Plus)?,
        soliton_arcsinh(1.0, 1.0, 1.0, 1.0, 0.0, Sign::Plus)?,
        soliton_arcsin(1.0, -1.0, 1.0, 1.0, 0.0, Sign::Plus)?,
        vdp_explicit(1.0, 1.0, 3.0, 1.0)?,
    ];
    for p in &profiles {
        let dom = p.domain().intersect(-5.0, 5.0).shrink(0.1);
        let rep = profile_residual_report(p, dom.lo, dom.hi, 1000, DerivativeMode::Analytic)?;
        println!(
            "{:<14} domain [{:.3}, {:.3}]  phi(mid) = {:.6}  max residual {:.2e}",
            p.family().to_string(),
            dom.lo,
            dom.hi,
            p.phi(0.5 * (dom.lo + dom.hi))?,
            rep.max_abs
        );
    }
    Ok(())
}

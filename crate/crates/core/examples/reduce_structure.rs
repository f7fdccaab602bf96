//! Synthesize a geometric structure from reduced coefficients and reduce it back.
use mrayleigh::coefficients::{
    reduce, synthesize_structure, verify_reduction_consistency, Probe, ReducedCoeffs, ScalarFn,
    SpeedVector,
};

fn main() -> mrayleigh::Result<()> {
    let target = ReducedCoeffs::rayleigh(
        ScalarFn::affine(0.1, 2.0),
        ScalarFn::Constant(-1.0),
        ScalarFn::Constant(0.5),
    );
    let lambda = SpeedVector::new(vec![1.0, 0.5])?;
    let structure = synthesize_structure(&target, 2, &lambda)?;
    println!("leaf-consistent: {}", verify_reduction_consistency(&structure, &lambda, 200)?);

    let back = reduce(&structure, &lambda, &Probe::origin(2).with_window(-5.0, 5.0))?;
    for z in [-4.0, 0.0, 4.0] {
        let (t, r) = (target.eval(z)?, back.eval(z)?);
        println!("z = {z:5.1}: a {:.12} / {:.12}, c {:.12} / {:.12}", t.a, r.a, t.c, r.c);
    }
    Ok(())
}

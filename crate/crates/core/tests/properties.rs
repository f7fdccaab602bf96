use mrayleigh::closed_form::{soliton_arcsinh, soliton_arccosh, vdp_explicit, DerivativeMode, Sign};
use mrayleigh::coefficients::{
    reduce, synthesize_structure, ConstantCoupling, GeometricStructure, Probe, ReducedCoeffs,
    SpeedVector,
};
use mrayleigh::geometry::{pde_residual, FieldFunction};
use mrayleigh::output::fmt_f64;
use mrayleigh::series::{
    recurrence_residues, series_coefficients, series_coefficients_literal, AffineParams,
};
use proptest::prelude::*;

fn nonzero(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo..hi, any::<bool>()).prop_map(|(v, neg)| if neg { -v } else { v })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sign_reflects_about_shift(
        a in 0.5..3.0_f64, b in 0.2..3.0_f64, c in nonzero(0.2, 2.0),
        k in 0.2..3.0_f64, r in -2.0..2.0_f64, z in -3.0..3.0_f64,
    ) {
        let b = b * c.signum();
        let plus = soliton_arcsinh(a, b, c, k, r, Sign::Plus).unwrap();
        let minus = soliton_arcsinh(a, b, c, k, r, Sign::Minus).unwrap();
        let sum = plus.phi(z).unwrap() + minus.phi(z).unwrap();
        prop_assert!((sum - 2.0 * r).abs() <= 1e-12 * (1.0 + plus.phi(z).unwrap().abs()));
        prop_assert!((plus.phi_prime(z).unwrap() + minus.phi_prime(z).unwrap()).abs() <= 1e-12 * (1.0 + plus.phi_prime(z).unwrap().abs()));
    }

    #[test]
    fn arccosh_domain_is_maximal(
        a in 0.5..3.0_f64, q in 0.2..3.0_f64, c in nonzero(0.2, 2.0), k in 0.2..3.0_f64,
    ) {
        let b = c / q;
        let p = soliton_arccosh(a, b, c, k, 0.0, Sign::Plus).unwrap();
        let d = p.domain();
        let end = if d.lo.is_finite() { d.lo } else { d.hi };
        let inside = if d.lo.is_finite() { end + 1e-3 } else { end - 1e-3 };
        let outside = if d.lo.is_finite() { end - 1e-3 } else { end + 1e-3 };
        prop_assert!(p.phi(inside).is_ok());
        prop_assert!(p.phi(outside).is_err());
    }

    #[test]
    fn vdp_explicit_solves_reduction(
        a in nonzero(0.3, 3.0), c in nonzero(0.3, 2.0), d in 0.3..4.0_f64, k in 0.1..3.0_f64,
        z in -3.0..3.0_f64,
    ) {
        let d = d * c.signum();
        let p = vdp_explicit(a, c, d, k).unwrap();
        let scale = 1.0 + p.phi_second(z).unwrap().abs() * a.abs();
        prop_assert!(p.ode_residual(z, DerivativeMode::Analytic).unwrap().abs() <= 1e-12 * scale);
    }

    #[test]
    fn stationary_fields_have_zero_residual(
        m in 1usize..4, slope in -5.0..5.0_f64, offset in -5.0..5.0_f64,
        x in -10.0..10.0_f64, vdp in any::<bool>(), seed in proptest::collection::vec(-2.0..2.0_f64, 40),
    ) {
        let take = |from: usize, n: usize| seed.iter().cycle().skip(from).take(n).copied().collect::<Vec<_>>();
        let coupling = if vdp {
            ConstantCoupling::VanDerPol(take(3, m))
        } else {
            ConstantCoupling::Rayleigh(take(5, m * m * m))
        };
        let s = GeometricStructure::constant(m, take(0, m * m), take(1, m * m * m), take(2, m), coupling).unwrap();
        let u = FieldFunction::stationary(m, slope, offset);
        let t = take(7, m);
        prop_assert_eq!(pde_residual(&u, &s, x, &t).unwrap(), 0.0);
    }

    #[test]
    fn synthesis_round_trip(
        a in nonzero(0.2, 3.0), b in -2.0..2.0_f64, c in -2.0..2.0_f64,
        lambda in proptest::collection::vec(nonzero(0.3, 2.0), 1..4),
    ) {
        let target = ReducedCoeffs::constant_rayleigh(a, b, c);
        let m = lambda.len();
        let l = SpeedVector::new(lambda).unwrap();
        let s = synthesize_structure(&target, m, &l).unwrap();
        let back = reduce(&s, &l, &Probe::origin(m)).unwrap();
        let (t, r) = (target.eval(0.7).unwrap(), back.eval(0.7).unwrap());
        let tol = 1e-12 * (1.0 + a.abs() + b.abs() + c.abs());
        prop_assert!((t.a - r.a).abs() <= tol);
        prop_assert!((t.c - r.c).abs() <= tol);
        prop_assert!((t.coupling - r.coupling).abs() <= tol);
    }

    #[test]
    fn recurrence_is_satisfied(
        m in -1.0..1.0_f64, p in -1.0..1.0_f64, q in -1.0..1.0_f64,
        a in nonzero(0.5, 2.0), b in -1.0..1.0_f64, c in -1.0..1.0_f64,
        alpha0 in -1.0..1.0_f64, alpha1 in -1.0..1.0_f64, n in 2usize..30,
    ) {
        let s = series_coefficients(AffineParams::new(m, p, q, a, b, c), alpha0, alpha1, n).unwrap();
        let scale = 1.0 + s.alpha.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        for r in recurrence_residues(&s) {
            prop_assert!(r.abs() <= 1e-10 * scale * (n * n) as f64);
        }
    }

    #[test]
    fn convolution_matches_literal(
        m in -1.0..1.0_f64, p in -1.0..1.0_f64, q in -1.0..1.0_f64,
        a in nonzero(0.5, 2.0), b in -1.0..1.0_f64, c in -1.0..1.0_f64,
        alpha1 in -1.0..1.0_f64, n in 2usize..=20,
    ) {
        let params = AffineParams::new(m, p, q, a, b, c);
        let fast = series_coefficients(params, 0.0, alpha1, n).unwrap();
        let slow = series_coefficients_literal(params, 0.0, alpha1, n).unwrap();
        for (x, y) in fast.alpha.iter().zip(&slow) {
            prop_assert!((x - y).abs() <= 1e-13 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_slope_series_is_constant(alpha0 in -5.0..5.0_f64, b in -1.0..1.0_f64, c in -1.0..1.0_f64) {
        let s = series_coefficients(AffineParams::new(0.0, 0.0, 0.0, 1.0, b, c), alpha0, 0.0, 20).unwrap();
        prop_assert_eq!(s.alpha[0], alpha0);
        prop_assert!(s.alpha[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
        let text = fmt_f64(v);
        prop_assert_eq!(text.parse::<f64>().unwrap(), if v == 0.0 { 0.0 } else { v });
        prop_assert!(!text.contains(','));
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::process::ExitCode;

use mrayleigh::cli::{prolongation_structure, travelling_sine};
use mrayleigh::closed_form::{
    as_multitime, soliton_arccosh, soliton_arcsin, soliton_arcsinh, soliton_quadrature,
    vdp_explicit, vdp_implicit, DerivativeMode, ImplicitOptions, ImplicitRelation,
    IntegrationConstant, Sign, SolitonProfile,
};
use mrayleigh::coefficients::{
    reduce, synthesize_structure, ConstantCoupling, Coupling, GeometricStructure, Probe,
    ReducedCoeffs, SamplePoint, ScalarFn, SpeedVector, TensorField,
};
use mrayleigh::geometry::{check_prolongation, check_reversibility, pde_residual, FieldFunction};
use mrayleigh::oracle::{
    decay_check_profile, integrate_reduction, integrate_single_time_rayleigh,
    profile_residual_report, residual_sweep, Axis, DecayOptions, GridSpec, SingleTimeOptions,
};
use mrayleigh::series::{series_coefficients, series_coefficients_literal, AffineParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn worked_vdp() -> ReducedCoeffs {
    ReducedCoeffs::van_der_pol(
        ScalarFn::general_with_derivative("exp", f64::exp, f64::exp),
        ScalarFn::general_with_derivative("exp", f64::exp, f64::exp),
        ScalarFn::Constant(3.0),
    )
}

fn implicit(relation: ImplicitRelation) -> mrayleigh::Result<SolitonProfile> {
    vdp_implicit(
        &worked_vdp(),
        ImplicitOptions {
            k1: 0.0,
            z0: 0.0,
            constant: IntegrationConstant::Integral(-2.0),
            relation,
            interval: (-3.0, 0.5),
        },
    )
}

fn six_families() -> mrayleigh::Result<Vec<SolitonProfile>> {
    let variable = ReducedCoeffs::rayleigh(
        ScalarFn::affine(0.1, 2.0),
        ScalarFn::Constant(-1.0),
        ScalarFn::Constant(0.5),
    );
    Ok(vec![
        soliton_quadrature(&variable, 1.0, 0.0, (-5.0, 5.0))?,
        soliton_arccosh(1.0, 1.0, 1.0, 1.0, 0.0, Sign::Plus)?,
        soliton_arcsinh(1.0, 1.0, 1.0, 1.0, 0.0, Sign::Plus)?,
        soliton_arcsin(1.0, -1.0, 1.0, 1.0, 0.0, Sign::Plus)?,
        implicit(ImplicitRelation::Corrected)?,
        vdp_explicit(1.0, 1.0, 3.0, 1.0)?,
    ])
}

/// Interior window: the domain within `[-5, 5]`, kept 0.1 away from its ends.
fn window(p: &SolitonProfile) -> (f64, f64) {
    let d = p.domain().intersect(-5.0, 5.0).shrink(0.1);
    (d.lo, d.hi)
}

fn criterion_1() -> mrayleigh::Result<Outcome> {
    let mut worst = (0.0_f64, 0.0_f64);
    let mut lines = Vec::new();
    for p in six_families()? {
        let (lo, hi) = window(&p);
        let an = profile_residual_report(&p, lo, hi, 1000, DerivativeMode::Analytic)?;
        let fd = profile_residual_report(&p, lo, hi, 1000, DerivativeMode::FiniteDifference)?;
        worst = (worst.0.max(an.max_abs), worst.1.max(fd.max_abs));
        lines.push(format!("{} {:.1e}/{:.1e}", p.family(), an.max_abs, fd.max_abs));
    }
    Ok(check(
        worst.0 <= 1e-8 && worst.1 <= 1e-6,
        format!("analytic/fd max residual: {}", lines.join(", ")),
    ))
}

fn criterion_2() -> mrayleigh::Result<Outcome> {
    let speeds = [1.0, 0.5, 0.25];
    let mut worst = 0.0_f64;
    let mut fewest = usize::MAX;
    for p in six_families()? {
        let (lo, hi) = window(&p);
        for m in 1..=3 {
            let lambda = SpeedVector::new(speeds[..m].to_vec())?;
            let profile = p.clone().with_lambda(lambda.clone());
            let structure = synthesize_structure(profile.coeffs(), m, &lambda)?;
            let u = as_multitime(&profile)?;
            // keeps every z = x - lambda . t inside the window
            let spread = 0.5 * speeds[..m].iter().sum::<f64>();
            let (nx, nt) = match m {
                1 => (200, 60),
                2 => (40, 16),
                _ => (22, 8),
            };
            let mut axes = vec![Axis::new(lo + spread, hi - spread, nx)];
            axes.extend((0..m).map(|_| Axis::new(-0.5, 0.5, nt)));
            let report = residual_sweep(&u, &structure, &GridSpec::new(axes), false)?;
            worst = worst.max(report.max_abs);
            fewest = fewest.min(report.len());
        }
    }
    Ok(check(
        worst <= 1e-6 && fewest >= 10_000,
        format!("max_abs {worst:.2e} over 18 lifts, smallest grid {fewest} points"),
    ))
}

fn prolongation_points(t_end: f64) -> Vec<(f64, f64)> {
    let xs = Axis::new(0.0, 2.0 * std::f64::consts::PI, 40).values();
    let ts = Axis::new(0.0, t_end, 26).values();
    xs.iter().flat_map(|&x| ts.iter().map(move |&t| (x, t))).collect()
}

fn criterion_3() -> mrayleigh::Result<Outcome> {
    let points = prolongation_points(1.0);
    let exact = check_prolongation(&travelling_sine(1.0), &prolongation_structure(0.0, 3)?, &points)?;
    let eps = 0.1;
    let run = integrate_single_time_rayleigh(
        eps,
        |x| 0.5 * x.sin(),
        |x| -0.5 * x.cos(),
        SingleTimeOptions::default(),
    )?;
    let numeric = check_prolongation(&run.field(), &prolongation_structure(eps, 3)?, &points)?;
    Ok(check(
        exact.max_abs <= 1e-6 && run.tau_r <= 1e-4 && numeric.max_abs <= 10.0 * run.tau_r,
        format!(
            "eps=0 max_abs {:.2e}; eps=0.1 max_abs {:.2e}, tau_R {:.2e}",
            exact.max_abs, numeric.max_abs, run.tau_r
        ),
    ))
}

fn criterion_4() -> mrayleigh::Result<Outcome> {
    let linear = series_coefficients(AffineParams::new(0.0, 0.0, 0.0, 1.0, 0.0, 1.0), 0.0, 1.0, 20)?;
    let expected = [0.0, 1.0, -0.5, 1.0 / 6.0, -1.0 / 24.0];
    let lin_err = expected
        .iter()
        .zip(&linear.alpha)
        .map(|(e, a)| (e - a).abs())
        .fold(0.0_f64, f64::max);
    let cubic = series_coefficients(AffineParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0), 0.0, 1.0, 20)?;
    let cub_err = (cubic.alpha[2] - 0.5).abs().max((cubic.alpha[3] - 0.5).abs());

    let params = [
        AffineParams::new(0.0, 0.0, 0.0, 1.0, 0.0, 1.0),
        AffineParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0),
        AffineParams::new(0.3, -0.2, 0.5, 1.5, 0.7, -0.4),
        AffineParams::new(-0.5, 0.25, -0.1, 2.0, -0.3, 0.8),
    ];
    let mut path_err = 0.0_f64;
    for p in params {
        for n in 2..=20 {
            let fast = series_coefficients(p, 0.2, 0.6, n)?;
            let slow = series_coefficients_literal(p, 0.2, 0.6, n)?;
            for (x, y) in fast.alpha.iter().zip(&slow) {
                path_err = path_err.max((x - y).abs());
            }
        }
    }
    Ok(check(
        lin_err <= 1e-14 && cub_err <= 1e-14 && path_err <= 1e-13,
        format!("linear {lin_err:.1e}, cubic {cub_err:.1e}, convolution vs literal {path_err:.1e}"),
    ))
}

fn criterion_5() -> mrayleigh::Result<Outcome> {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, params) in [
        ("linear", AffineParams::new(0.0, 0.0, 0.0, 1.0, 0.0, 1.0)),
        ("cubic", AffineParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0)),
    ] {
        let s = series_coefficients(params, 0.0, 1.0, 60)?;
        let half = 0.5 * s.radius_estimate;
        let ivp = integrate_reduction(&params.coeffs(), 0.0, 0.0, 1.0, (-half, half), 1e-12)?;
        let mut err = 0.0_f64;
        for i in 0..=200 {
            let z = -half + 2.0 * half * i as f64 / 200.0;
            err = err.max((s.evaluate(z) - ivp.eval(z)?.0).abs());
        }
        ok &= err <= 1e-7;
        details.push(format!("{name} rho {:.4} max diff {err:.1e}", s.radius_estimate));
    }
    Ok(check(ok, details.join(", ")))
}

fn criterion_6() -> mrayleigh::Result<Outcome> {
    let corrected = implicit(ImplicitRelation::Corrected)?;
    let printed = implicit(ImplicitRelation::Printed)?;
    let (lo, hi) = window(&corrected);
    let good = profile_residual_report(&corrected, lo, hi, 1000, DerivativeMode::Analytic)?;
    let bad = (0..1000)
        .filter_map(|i| {
            let z = lo + (hi - lo) * i as f64 / 999.0;
            printed.ode_residual(z, DerivativeMode::Analytic).ok()
        })
        .fold(0.0_f64, |m, r| m.max(r.abs()));
    Ok(check(
        good.max_abs <= 1e-8 && bad >= 1e-2,
        format!("corrected {:.1e}, printed {bad:.1e}", good.max_abs),
    ))
}

fn random_structure(rng: &mut ChaCha8Rng, m: usize) -> mrayleigh::Result<GeometricStructure> {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let h = draw(m * m);
    let gamma = draw(m * m * m);
    let c = draw(m);
    if m % 2 == 0 {
        GeometricStructure::constant(m, h, gamma, c, ConstantCoupling::Rayleigh(draw(m * m * m)))
    } else {
        GeometricStructure::constant(m, h, gamma, c, ConstantCoupling::VanDerPol(draw(m)))
    }
}

fn criterion_7() -> mrayleigh::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut stationary_max = 0.0_f64;
    for k in 0..20 {
        let m = 1 + k % 3;
        let s = random_structure(&mut rng, m)?;
        let u = FieldFunction::stationary(m, rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        for _ in 0..10 {
            let x = rng.gen_range(-5.0..5.0);
            let t: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
            stationary_max = stationary_max.max(pde_residual(&u, &s, x, &t)?.abs());
        }
    }

    let m = 2;
    let odd = GeometricStructure::new(
        m,
        TensorField::constant(2, vec![1.0, 0.0, 0.0, 1.0]),
        TensorField::zero(3, m),
        TensorField::from_fn(1, |p| vec![p.t[0], p.t[0] * p.t[1] * p.t[1]]),
        Coupling::Rayleigh(TensorField::from_fn(3, |p| {
            let mut b = vec![0.0; 8];
            b[0] = p.t[1].sin();
            b
        })),
    )?;
    let constant_c = GeometricStructure::constant(
        m,
        vec![1.0, 0.0, 0.0, 1.0],
        vec![0.0; 8],
        vec![0.5, 0.0],
        ConstantCoupling::Rayleigh(vec![0.0; 8]),
    )?;
    let samples: Vec<SamplePoint> = (0..50)
        .map(|_| {
            SamplePoint::new(
                rng.gen_range(-3.0..3.0),
                vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
                rng.gen_range(-1.0..1.0),
                vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            )
        })
        .collect();
    let parity = check_reversibility(&odd, &samples)? && !check_reversibility(&constant_c, &samples)?;

    let targets = [
        ReducedCoeffs::rayleigh(ScalarFn::affine(0.1, 2.0), ScalarFn::Constant(-1.0), ScalarFn::Constant(0.5)),
        ReducedCoeffs::constant_rayleigh(1.0, 1.0, 1.0),
        ReducedCoeffs::constant_van_der_pol(1.0, 1.0, 3.0),
        worked_vdp(),
    ];
    let mut round_trip = 0.0_f64;
    for target in &targets {
        for lambda in [vec![1.0], vec![1.0, 0.5], vec![2.0, -1.0, 0.5]] {
            let m = lambda.len();
            let lambda = SpeedVector::new(lambda)?;
            let s = synthesize_structure(target, m, &lambda)?;
            let back = reduce(&s, &lambda, &Probe::origin(m).with_window(-3.0, 0.5))?;
            for i in 0..1000 {
                let z = -3.0 + 3.5 * i as f64 / 999.0;
                let (t, r) = (target.eval(z)?, back.eval(z)?);
                let scale = 1.0_f64.max(t.a.abs()).max(t.c.abs()).max(t.coupling.abs());
                let diff = (t.a - r.a).abs().max((t.c - r.c).abs()).max((t.coupling - r.coupling).abs());
                round_trip = round_trip.max(diff / scale);
            }
        }
    }
    Ok(check(
        stationary_max == 0.0 && parity && round_trip <= 1e-12,
        format!(
            "stationary max {stationary_max:e}, parity {parity}, round trip {round_trip:.1e} (1000 samples x 12)"
        ),
    ))
}

fn criterion_8() -> mrayleigh::Result<Outcome> {
    let lambda = SpeedVector::new(vec![1.0, 1.0])?;
    let decaying = soliton_arcsinh(1.0, -1.0, -1.0, 1.0, 0.0, Sign::Plus)?.with_lambda(lambda.clone());
    let d = decay_check_profile(&decaying, 0.0, &[1.0, 1.0], 1e-3, DecayOptions::default())?;
    let plateau = vdp_explicit(1.0, 1.0, 3.0, 1.0)?.with_lambda(lambda);
    let p = decay_check_profile(&plateau, 0.0, &[1.0, 1.0], 1e-3, DecayOptions::default())?;
    let limit_ok = p.limit_metadata.is_some_and(|l| (l - 1.0).abs() <= 1e-6);
    Ok(check(
        d.ok && d.crossing_radius.is_some_and(f64::is_finite) && !p.ok && limit_ok,
        format!(
            "arcsinh ok {} crossing {:?}; vdp explicit ok {} limit {:?}",
            d.ok, d.crossing_radius, p.ok, p.limit_metadata
        ),
    ))
}

fn criterion_9() -> mrayleigh::Result<Outcome> {
    let first = tempfile::tempdir()?;
    let second = tempfile::tempdir()?;
    let codes = common::run_corpus(first.path());
    common::run_corpus(second.path());
    let wrong: Vec<String> = codes
        .iter()
        .filter(|(_, want, got)| want != got)
        .map(|(n, want, got)| format!("{n}: exit {got}, expected {want}"))
        .collect();
    let a = common::tree_bytes(first.path());
    let b = common::tree_bytes(second.path());
    let identical = !a.is_empty() && a == b;
    Ok(check(
        wrong.is_empty() && identical,
        format!(
            "{} cases, {} files byte-identical: {identical}; exit mismatches: {:?}",
            codes.len(),
            a.len(),
            wrong
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> mrayleigh::Result<Outcome>); 9] = [
        ("closed-form family residuals", criterion_1),
        ("multitime lift sweeps", criterion_2),
        ("prolongation", criterion_3),
        ("series recurrence", criterion_4),
        ("series vs adaptive oracle", criterion_5),
        ("corrected vs printed implicit relation", criterion_6),
        ("structural invariants", criterion_7),
        ("decay", criterion_8),
        ("CLI determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} criterion {}: {name}: {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

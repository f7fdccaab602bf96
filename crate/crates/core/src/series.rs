//! Power-series solitons `phi(z) = sum alpha_n z^n` of
//! `a(z) phi'' - b(z) phi'^3 + c(z) phi' = 0` with affine coefficients
//! `a(z) = m z + a`, `b(z) = p z + b`, `c(z) = q z + c`.
//!
//! Matching powers of `z` gives, for `n >= 0`,
//!
//! ```text
//! a (n+2)(n+1) alpha_{n+2} = b delta_n + p delta_{n-1}
//!                            - m n(n+1) alpha_{n+1} - c beta_n - q beta_{n-1}
//! ```
//!
//! with `beta_n = (n+1) alpha_{n+1}` (the series of `phi'`),
//! `gamma = beta * beta` and `delta = gamma * beta` (Cauchy products).

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::closed_form::{Family, FamilyParams, Interval, Limits, ProfileKernel, SolitonProfile};
use crate::coefficients::{ReducedCoeffs, ScalarFn, SpeedVector};
use crate::error::{Error, Result};
use crate::output::fmt_f64;

/// Fraction of the radius estimate exposed as the profile domain.
pub const SAFETY_FRACTION: f64 = 0.5;

/// Radius reported for series with no nonzero coefficient beyond the linear term.
pub const ENTIRE_RADIUS: f64 = 1e6;

/// Affine coefficients; `m`, `p`, `q` are the slopes of `a`, `b`, `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub m: f64,
    pub p: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AffineParams {
    pub fn new(m: f64, p: f64, q: f64, a: f64, b: f64, c: f64) -> Self {
        Self { m, p, q, a, b, c }
    }

    /// From `[m, p, q, a, b, c]`.
    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.m, self.p, self.q, self.a, self.b, self.c]
    }

    pub fn coeffs(&self) -> ReducedCoeffs {
        ReducedCoeffs::rayleigh(
            ScalarFn::affine(self.m, self.a),
            ScalarFn::affine(self.p, self.b),
            ScalarFn::affine(self.q, self.c),
        )
    }
}

/// A truncated series solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSolution {
    pub params: AffineParams,
    pub alpha0: f64,
    pub alpha1: f64,
    #[serde(rename = "N")]
    pub order: usize,
    pub alpha: Vec<f64>,
    pub radius_estimate: f64,
}

fn cauchy(x: &[f64], y: &[f64], n: usize) -> f64 {
    (0..=n).map(|k| x[k] * y[n - k]).sum()
}

/// Coefficients `alpha_0..alpha_N` via cached convolutions, `O(N^2)`.
pub fn series_coefficients(
    params: AffineParams,
    alpha0: f64,
    alpha1: f64,
    order: usize,
) -> Result<SeriesSolution> {
    let AffineParams { m, p, q, a, b, c } = params;
    if a == 0.0 {
        return Err(Error::DegenerateA { z: 0.0, value: a });
    }
    if order < 2 {
        return Err(Error::BadParameters(format!("order N = {order} must be at least 2")));
    }
    let all = params.to_array();
    if !all.iter().chain([alpha0, alpha1].iter()).all(|v| v.is_finite()) {
        return Err(Error::BadParameters("series parameters must be finite".into()));
    }
    let mut alpha = vec![0.0; order + 1];
    alpha[0] = alpha0;
    alpha[1] = alpha1;
    let mut beta = Vec::with_capacity(order);
    let mut gamma = Vec::with_capacity(order);
    let mut delta = Vec::with_capacity(order);
    for n in 0..=order - 2 {
        beta.push((n + 1) as f64 * alpha[n + 1]);
        gamma.push(cauchy(&beta, &beta, n));
        delta.push(cauchy(&gamma, &beta, n));
        let nf = n as f64;
        let mut rhs = b * delta[n] - m * nf * (nf + 1.0) * alpha[n + 1] - c * beta[n];
        if n >= 1 {
            rhs += p * delta[n - 1] - q * beta[n - 1];
        }
        alpha[n + 2] = rhs / (a * (nf + 2.0) * (nf + 1.0));
    }
    let mut out = SeriesSolution {
        params,
        alpha0,
        alpha1,
        order,
        alpha,
        radius_estimate: 0.0,
    };
    out.radius_estimate = estimate_radius(&out);
    Ok(out)
}

/// `sum_{i=0}^{n} sum_{k=0}^{i} w(i, k) alpha_{k+1} alpha_{i-k+1} alpha_{n-i+1}`
/// written out term by term; `shift` selects the `p` (1) or `b` (0) sum.
fn literal_triple(alpha: &[f64], n: usize, shift: usize) -> f64 {
    if n < shift {
        return 0.0;
    }
    let top = n - shift;
    let mut acc = 0.0;
    for i in 0..=top {
        for k in 0..=i {
            let w = (k + 1) as f64 * (i - k + 1) as f64 * (n - i + 1 - shift) as f64;
            acc += w * alpha[k + 1] * alpha[i - k + 1] * alpha[n - i + 1 - shift];
        }
    }
    acc
}

/// Same coefficients from the literal triple sums, `O(N^3)`; cross-check only.
pub fn series_coefficients_literal(
    params: AffineParams,
    alpha0: f64,
    alpha1: f64,
    order: usize,
) -> Result<Vec<f64>> {
    let AffineParams { m, p, q, a, b, c } = params;
    if a == 0.0 {
        return Err(Error::DegenerateA { z: 0.0, value: a });
    }
    if order < 2 {
        return Err(Error::BadParameters(format!("order N = {order} must be at least 2")));
    }
    let mut alpha = vec![0.0; order + 1];
    alpha[0] = alpha0;
    alpha[1] = alpha1;
    for n in 0..=order - 2 {
        let nf = n as f64;
        let rest = m * nf * (nf + 1.0) * alpha[n + 1]
            - p * literal_triple(&alpha, n, 1)
            - b * literal_triple(&alpha, n, 0)
            + q * nf * alpha[n]
            + c * (nf + 1.0) * alpha[n + 1];
        alpha[n + 2] = -rest / (a * (nf + 2.0) * (nf + 1.0));
    }
    Ok(alpha)
}

/// Relative residues of the power-matching identity for `0 <= n <= N-2`,
/// each divided by `max(1, |a (n+2)(n+1) alpha_{n+2}|)`.
pub fn recurrence_residues(series: &SeriesSolution) -> Vec<f64> {
    let AffineParams { m, p, q, a, b, c } = series.params;
    let al = &series.alpha;
    (0..=series.order - 2)
        .map(|n| {
            let nf = n as f64;
            let lead = a * (nf + 2.0) * (nf + 1.0) * al[n + 2];
            let r = m * nf * (nf + 1.0) * al[n + 1] + lead
                - p * literal_triple(al, n, 1)
                - b * literal_triple(al, n, 0)
                + q * nf * al[n]
                + c * (nf + 1.0) * al[n + 1];
            r / lead.abs().max(1.0)
        })
        .collect()
}

/// Root-test radius estimate over the last third of the nonzero
/// coefficients, `1 / max |alpha_n|^{1/n}`.
///
/// Linear equations (`b = p = 0`) with `m != 0` are capped at the
/// singular point `|a/m|`. Returns [`ENTIRE_RADIUS`] when no coefficient
/// beyond the linear term is nonzero and `0` (inconclusive) for `N < 10`.
pub fn estimate_radius(series: &SeriesSolution) -> f64 {
    if series.order < 10 {
        return 0.0;
    }
    let nonzero: Vec<(usize, f64)> = series
        .alpha
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, v)| **v != 0.0)
        .map(|(n, v)| (n, v.abs()))
        .collect();
    let params = series.params;
    let singular = (params.b == 0.0 && params.p == 0.0 && params.m != 0.0)
        .then(|| (params.a / params.m).abs());
    if nonzero.is_empty() {
        return singular.map_or(ENTIRE_RADIUS, |s| s.min(ENTIRE_RADIUS));
    }
    let start = nonzero.len() - (nonzero.len() / 3).max(1);
    let root = nonzero[start..]
        .iter()
        .map(|&(n, v)| v.powf(1.0 / n as f64))
        .fold(0.0_f64, f64::max);
    let est = if root > 0.0 { (1.0 / root).min(ENTIRE_RADIUS) } else { ENTIRE_RADIUS };
    match singular {
        Some(s) => est.min(s),
        None => est,
    }
}

impl SeriesSolution {
    fn check_radius(&self, z: f64) {
        if z.abs() >= self.radius_estimate {
            warn!(
                "series evaluated at |z| = {} beyond the radius estimate {}",
                z.abs(),
                self.radius_estimate
            );
        }
    }

    /// `phi(z)` of the truncated series (Horner).
    pub fn evaluate(&self, z: f64) -> f64 {
        self.check_radius(z);
        self.alpha.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn evaluate_prime(&self, z: f64) -> f64 {
        self.check_radius(z);
        self.alpha
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (n, c)| acc * z + n as f64 * c)
    }

    pub fn evaluate_second(&self, z: f64) -> f64 {
        self.check_radius(z);
        self.alpha
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (n, c)| acc * z + (n * (n - 1)) as f64 * c)
    }

    /// Residual of the affine ODE from the truncated series at `z`.
    pub fn ode_residual(&self, z: f64) -> f64 {
        let AffineParams { m, p, q, a, b, c } = self.params;
        let d1 = self.evaluate_prime(z);
        (m * z + a) * self.evaluate_second(z) - (p * z + b) * d1.powi(3) + (q * z + c) * d1
    }

    /// Rows `n,alpha_n` with `n` as an integer.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,alpha_n")?;
        for (n, v) in self.alpha.iter().enumerate() {
            writeln!(w, "{n},{}", fmt_f64(*v))?;
        }
        Ok(())
    }
}

struct SeriesKernel(SeriesSolution);

impl ProfileKernel for SeriesKernel {
    fn eval(&self, z: f64) -> Result<(f64, f64, f64)> {
        let s = &self.0;
        Ok((s.evaluate(z), s.evaluate_prime(z), s.evaluate_second(z)))
    }
}

/// Wraps the truncated series as a profile on `(-rho, rho)`,
/// `rho = SAFETY_FRACTION * radius_estimate`.
pub fn series_soliton(series: &SeriesSolution, lambda: SpeedVector) -> SolitonProfile {
    let rho = SAFETY_FRACTION * series.radius_estimate;
    SolitonProfile::from_parts(
        Family::Series,
        FamilyParams::Series {
            affine: series.params.to_array(),
            alpha0: series.alpha0,
            alpha1: series.alpha1,
            order: series.order,
            radius_estimate: series.radius_estimate,
        },
        Interval::open(-rho, rho),
        Limits::default(),
        series.params.coeffs(),
        Arc::new(SeriesKernel(series.clone())),
    )
    .with_lambda(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> AffineParams {
        AffineParams::new(0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
    }

    fn cubic() -> AffineParams {
        AffineParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0)
    }

    #[test]
    fn linear_case_is_exponential() {
        let s = series_coefficients(linear(), 0.0, 1.0, 30).unwrap();
        let expect = [0.0, 1.0, -0.5, 1.0 / 6.0, -1.0 / 24.0];
        for (got, want) in s.alpha.iter().zip(expect) {
            assert!((got - want).abs() < 1e-14);
        }
        assert!((s.evaluate(1.0) - (1.0 - (-1.0_f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn cubic_case_binomial() {
        let s = series_coefficients(cubic(), 0.0, 1.0, 60).unwrap();
        assert!((s.alpha[2] - 0.5).abs() < 1e-14);
        assert!((s.alpha[3] - 0.5).abs() < 1e-14);
        // phi' = (1 - 2z)^{-1/2}
        let z = 0.1_f64;
        assert!((s.evaluate_prime(z) - (1.0 - 2.0 * z).powf(-0.5)).abs() < 1e-12);
        assert!((s.radius_estimate - 0.5).abs() < 0.1);
    }

    #[test]
    fn flat_initial_slope_gives_constant() {
        let s = series_coefficients(cubic(), 2.5, 0.0, 20).unwrap();
        assert!(s.alpha[1..].iter().all(|v| *v == 0.0));
        assert_eq!(s.evaluate(0.3), 2.5);
        assert_eq!(s.radius_estimate, ENTIRE_RADIUS);
    }

    #[test]
    fn degenerate_leading_coefficient() {
        let bad = AffineParams::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            series_coefficients(bad, 0.0, 1.0, 10),
            Err(Error::DegenerateA { .. })
        ));
    }

    #[test]
    fn convolution_matches_literal_sums() {
        let params = AffineParams::new(0.3, -0.7, 0.4, 1.2, 0.9, -0.5);
        for n in 2..=20 {
            let fast = series_coefficients(params, 0.1, 0.8, n).unwrap();
            let slow = series_coefficients_literal(params, 0.1, 0.8, n).unwrap();
            for (x, y) in fast.alpha.iter().zip(&slow) {
                assert!((x - y).abs() <= 1e-13 * y.abs().max(1.0), "N = {n}");
            }
        }
    }

    #[test]
    fn residues_vanish() {
        let params = AffineParams::new(0.2, 0.1, -0.3, 1.0, 0.5, 1.0);
        let s = series_coefficients(params, 0.0, 0.7, 40).unwrap();
        let seed = 2.0 * params.a * s.alpha[2] + params.c * s.alpha[1] - params.b * s.alpha[1].powi(3);
        assert!(seed.abs() < 1e-14);
        assert!(recurrence_residues(&s).iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn radius_estimates() {
        let s = series_coefficients(linear(), 0.0, 1.0, 60).unwrap();
        assert!(s.radius_estimate >= 10.0);
        let capped = series_coefficients(AffineParams::new(1.0, 0.0, 0.0, 2.0, 0.0, 1.0), 0.0, 1.0, 60).unwrap();
        assert!(capped.radius_estimate <= 2.0);
        let short = series_coefficients(linear(), 0.0, 1.0, 8).unwrap();
        assert_eq!(short.radius_estimate, 0.0);
    }

    #[test]
    fn json_layout() {
        let s = series_coefficients(linear(), 0.0, 1.0, 3).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["params", "alpha0", "alpha1", "N", "alpha", "radius_estimate"] {
            assert!(keys.contains(&k));
        }
    }

    #[test]
    fn soliton_domain_and_residual() {
        let s = series_coefficients(cubic(), 0.0, 1.0, 60).unwrap();
        let p = series_soliton(&s, SpeedVector::new(vec![1.0]).unwrap());
        let rho = p.domain().hi;
        assert!((rho - 0.5 * s.radius_estimate).abs() < 1e-15);
        assert!(p.phi(rho).is_err());
        let r30 = series_coefficients(cubic(), 0.0, 1.0, 30).unwrap();
        let z = rho / 2.0;
        assert!(s.ode_residual(z).abs() < r30.ode_residual(z).abs());
    }
}

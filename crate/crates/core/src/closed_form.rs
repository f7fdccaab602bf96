//! Closed-form soliton families of the reduced ODEs, each returned as a
//! [`SolitonProfile`] with analytic first and second derivatives and its
//! natural domain.
//!
//! | family | ODE | profile |
//! |--------|-----|---------|
//! | quadrature | `a phi'' - b phi'^3 + c phi' = 0`, variable coefficients | nested integrals |
//! | arccosh / arcsinh | constant coefficients, `c/b > 0` | `+-(a/c) sqrt(c/b) F(K e^{-(c/a) z}) + r` |
//! | arcsin | constant coefficients, `c/b < 0` | same with `sqrt(-c/b)` |
//! | vdp-implicit | `a phi'' - d phi^2 phi' + c phi' = 0`, `(a/d)' = c/d` | implicit relation |
//! | vdp-explicit | constant coefficients | `(K e^{(2c/a) z} + d/(3c))^{-1/2}` |

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chebyshev::Piecewise;
use crate::coefficients::{CoeffsSpec, ReducedCoeffs, SpeedVector, Variant};
use crate::error::{Error, Result};
use crate::geometry::{FieldFunction, Jet};
use crate::output::write_csv;

/// Relative tail tolerance for the Chebyshev quadrature fits.
const QUAD_TOL: f64 = 1e-15;
/// Step scale of the finite-difference residual.
pub const FD_STEP: f64 = 1e-3;

/// Interval of `z`; infinite bounds allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn real_line() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: lo.is_finite(),
            hi_closed: hi.is_finite(),
        }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn contains(&self, z: f64) -> bool {
        let above = if self.lo_closed { z >= self.lo } else { z > self.lo };
        let below = if self.hi_closed { z <= self.hi } else { z < self.hi };
        above && below && !z.is_nan()
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi) && !(self.lo == self.hi && self.lo_closed && self.hi_closed)
    }

    /// Sub-interval staying `guard` away from every finite endpoint.
    pub fn shrink(&self, guard: f64) -> Interval {
        Interval::closed(self.lo + guard, self.hi - guard)
    }

    pub fn intersect(&self, lo: f64, hi: f64) -> Interval {
        let (lo, lo_closed) = if lo > self.lo || (lo == self.lo && !self.lo_closed) {
            if lo > self.lo {
                (lo, true)
            } else {
                (self.lo, false)
            }
        } else {
            (self.lo, self.lo_closed)
        };
        let (hi, hi_closed) = if hi < self.hi || (hi == self.hi && !self.hi_closed) {
            if hi < self.hi {
                (hi, true)
            } else {
                (self.hi, false)
            }
        } else {
            (self.hi, self.hi_closed)
        };
        Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct IntervalRepr {
    lo: Option<f64>,
    hi: Option<f64>,
    lo_closed: bool,
    hi_closed: bool,
}

impl Serialize for Interval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        IntervalRepr {
            lo: self.lo.is_finite().then_some(self.lo),
            hi: self.hi.is_finite().then_some(self.hi),
            lo_closed: self.lo_closed,
            hi_closed: self.hi_closed,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = IntervalRepr::deserialize(d)?;
        Ok(Interval {
            lo: r.lo.unwrap_or(f64::NEG_INFINITY),
            hi: r.hi.unwrap_or(f64::INFINITY),
            lo_closed: r.lo_closed,
            hi_closed: r.hi_closed,
        })
    }
}

/// The `+-` choice of the inverse-function families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Quadrature,
    #[serde(rename = "arccosh")]
    ArcCosh,
    #[serde(rename = "arcsinh")]
    ArcSinh,
    #[serde(rename = "arcsin")]
    ArcSin,
    VdpImplicit,
    VdpExplicit,
    Series,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Quadrature => "quadrature",
            Family::ArcCosh => "arccosh",
            Family::ArcSinh => "arcsinh",
            Family::ArcSin => "arcsin",
            Family::VdpImplicit => "vdp-implicit",
            Family::VdpExplicit => "vdp-explicit",
            Family::Series => "series",
        };
        f.write_str(s)
    }
}

/// Integration constant for the implicit Van der Pol families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationConstant {
    /// Fix the constant through `phi(z0)`; also selects the branch.
    InitialValue(f64),
    /// The value of the integral side at `z0`.
    Integral(f64),
}

/// Which `k1 = 0` relation to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImplicitRelation {
    /// `phi^{-2} = -(2/3) (int d/a dz + C)`, obtained by separating
    /// `phi^3 / 3 = (a/d) phi'`.
    #[default]
    Corrected,
    /// `phi^2 = -(2/3) int d/a dz`, kept only to demonstrate that it does
    /// not solve the ODE.
    Printed,
}

/// Family-specific parameters, as serialized in profile metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyParams {
    Quadrature {
        k: f64,
        z0: f64,
        interval: (f64, f64),
        coefficients: Option<CoeffsSpec>,
    },
    InverseFunction {
        a: f64,
        b: f64,
        c: f64,
        k: f64,
        r: f64,
        sigma: Sign,
    },
    VdpImplicit {
        k1: f64,
        z0: f64,
        constant: IntegrationConstant,
        relation: ImplicitRelation,
        interval: (f64, f64),
        coefficients: Option<CoeffsSpec>,
    },
    VdpExplicit {
        a: f64,
        c: f64,
        d: f64,
        k: f64,
    },
    Series {
        /// `[m, p, q, a, b, c]` of `a(z) = m z + a`, `b(z) = p z + b`, `c(z) = q z + c`.
        affine: [f64; 6],
        alpha0: f64,
        alpha1: f64,
        order: usize,
        radius_estimate: f64,
    },
}

/// Limits of `phi` at the infinite ends of its domain (`None`: unbounded,
/// not applicable, or unknown).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub minus_infinity: Option<f64>,
    pub plus_infinity: Option<f64>,
}

/// `(phi, phi', phi'')` without domain checks.
pub(crate) trait ProfileKernel: Send + Sync {
    fn eval(&self, z: f64) -> Result<(f64, f64, f64)>;
}

/// A constructed soliton profile `phi(z)`.
#[derive(Clone)]
pub struct SolitonProfile {
    family: Family,
    params: FamilyParams,
    lambda: Option<SpeedVector>,
    domain: Interval,
    limits: Limits,
    coeffs: ReducedCoeffs,
    kernel: Arc<dyn ProfileKernel>,
}

impl fmt::Debug for SolitonProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolitonProfile")
            .field("family", &self.family)
            .field("params", &self.params)
            .field("lambda", &self.lambda)
            .field("domain", &self.domain)
            .finish()
    }
}

/// How derivatives are obtained when checking the reduced ODE.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// JSON metadata of a profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub family: Family,
    pub params: FamilyParams,
    pub lambda: Option<SpeedVector>,
    pub domain: Interval,
    pub limits: Limits,
}

impl SolitonProfile {
    pub(crate) fn from_parts(
        family: Family,
        params: FamilyParams,
        domain: Interval,
        limits: Limits,
        coeffs: ReducedCoeffs,
        kernel: Arc<dyn ProfileKernel>,
    ) -> Self {
        Self {
            family,
            params,
            lambda: None,
            domain,
            limits,
            coeffs,
            kernel,
        }
    }

    pub fn with_lambda(mut self, lambda: SpeedVector) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &FamilyParams {
        &self.params
    }

    pub fn lambda(&self) -> Option<&SpeedVector> {
        self.lambda.as_ref()
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    /// Coefficients of the reduced ODE this profile solves.
    pub fn coeffs(&self) -> &ReducedCoeffs {
        &self.coeffs
    }

    pub fn record(&self) -> ProfileRecord {
        ProfileRecord {
            family: self.family,
            params: self.params.clone(),
            lambda: self.lambda.clone(),
            domain: self.domain,
            limits: self.limits,
        }
    }

    fn guard(&self, z: f64) -> Result<()> {
        if self.domain.contains(z) {
            Ok(())
        } else {
            Err(Error::DomainExceeded {
                z,
                lo: self.domain.lo,
                hi: self.domain.hi,
            })
        }
    }

    /// `(phi, phi', phi'')` at `z`.
    pub fn derivatives(&self, z: f64) -> Result<(f64, f64, f64)> {
        self.guard(z)?;
        self.kernel.eval(z)
    }

    pub fn phi(&self, z: f64) -> Result<f64> {
        Ok(self.derivatives(z)?.0)
    }

    pub fn phi_prime(&self, z: f64) -> Result<f64> {
        Ok(self.derivatives(z)?.1)
    }

    pub fn phi_second(&self, z: f64) -> Result<f64> {
        Ok(self.derivatives(z)?.2)
    }

    /// Residual of the reduced ODE at `z`.
    pub fn ode_residual(&self, z: f64, mode: DerivativeMode) -> Result<f64> {
        let (phi, d1, d2) = match mode {
            DerivativeMode::Analytic => self.derivatives(z)?,
            DerivativeMode::FiniteDifference => {
                // five-point central stencils
                let h = FD_STEP * z.abs().max(1.0);
                let p0 = self.phi(z)?;
                let (m2, m1) = (self.phi(z - 2.0 * h)?, self.phi(z - h)?);
                let (p1, p2) = (self.phi(z + h)?, self.phi(z + 2.0 * h)?);
                let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
                let d2 = (-m2 + 16.0 * m1 - 30.0 * p0 + 16.0 * p1 - p2) / (12.0 * h * h);
                (p0, d1, d2)
            }
        };
        self.coeffs.ode_residual(z, phi, d1, d2)
    }

    /// `n` samples `[z, phi, phi']` over the domain intersected with
    /// `[zmin, zmax]`; ends falling on a finite domain boundary are moved
    /// inside by `1e-9` of the sampled width.
    pub fn sample(&self, zmin: f64, zmax: f64, n: usize) -> Result<Vec<Vec<f64>>> {
        let iv = self.domain.intersect(zmin, zmax);
        if iv.is_empty() || !iv.lo.is_finite() || !iv.hi.is_finite() {
            return Err(Error::EmptyDomain(format!(
                "requested range [{zmin}, {zmax}] misses the profile domain"
            )));
        }
        let width = iv.hi - iv.lo;
        let nudge = 1e-9 * width.max(1e-300);
        let lo = if iv.lo == self.domain.lo { iv.lo + nudge } else { iv.lo };
        let hi = if iv.hi == self.domain.hi { iv.hi - nudge } else { iv.hi };
        let n = n.max(1);
        (0..n)
            .map(|i| {
                let z = if n == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                };
                let (p, d, _) = self.derivatives(z)?;
                Ok(vec![z, p, d])
            })
            .collect()
    }

    pub fn write_samples_csv<W: std::io::Write>(
        &self,
        w: W,
        zmin: f64,
        zmax: f64,
        n: usize,
    ) -> Result<()> {
        let rows = self.sample(zmin, zmax, n)?;
        write_csv(w, &["z", "phi", "phi_prime"], &rows)?;
        Ok(())
    }
}

/// Lifts a profile to `u(x, t) = phi(x - lambda . t)` with chain-rule
/// derivatives `u_t = -lambda phi'`, `u_tt = lambda lambda phi''`, `u_xx = phi''`.
pub fn as_multitime(profile: &SolitonProfile) -> Result<FieldFunction> {
    let lambda = profile.lambda.clone().ok_or(Error::MissingSpeed)?;
    let m = lambda.dim();
    let pv = profile.clone();
    let lv = lambda.clone();
    let pj = profile.clone();
    Ok(FieldFunction::from_fallible(m, move |x, t| pv.phi(lv.phase(x, t)))
        .with_jet(move |x, t| {
            let (phi, d1, d2) = pj.derivatives(lambda.phase(x, t))?;
            let l = lambda.components();
            let grad = l.iter().map(|la| -la * d1).collect();
            let mut hess = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    hess[a * m + b] = l[a] * l[b] * d2;
                }
            }
            Ok(Jet {
                value: phi,
                u_x: d1,
                u_xx: d2,
                grad,
                hess,
            })
        }))
}

/// Scans outward from `z0` for the largest sub-interval of `[lo, hi]` on
/// which `ok` holds; endpoints where `ok` fails are located by bisection
/// and reported as open (`false` in the returned closedness flags).
fn maximal_interval<F: Fn(f64) -> bool>(ok: F, z0: f64, lo: f64, hi: f64, n: usize) -> Interval {
    let edge = |target: f64| -> (f64, bool) {
        let mut prev = z0;
        for i in 1..=n {
            let z = z0 + (target - z0) * i as f64 / n as f64;
            if !ok(z) {
                let (mut good, mut bad) = (prev, z);
                for _ in 0..200 {
                    let mid = 0.5 * (good + bad);
                    if mid == good || mid == bad {
                        break;
                    }
                    if ok(mid) {
                        good = mid;
                    } else {
                        bad = mid;
                    }
                }
                return (good, false);
            }
            prev = z;
        }
        (target, true)
    };
    let (l, lc) = edge(lo);
    let (h, hc) = edge(hi);
    Interval {
        lo: l,
        hi: h,
        lo_closed: lc,
        hi_closed: hc,
    }
}

fn check_interval(z0: f64, interval: (f64, f64)) -> Result<()> {
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && lo <= z0 && z0 <= hi) {
        return Err(Error::BadParameters(format!(
            "working interval [{lo}, {hi}] must be finite and contain z0 = {z0}"
        )));
    }
    Ok(())
}

struct QuadratureKernel {
    coeffs: ReducedCoeffs,
    /// int_{z0}^z c/a
    drift: Piecewise,
    /// int_{z0}^z (b/a) exp(-2 drift)
    forcing: Piecewise,
    /// `phi` as a function of the stretched variable
    phi: Piecewise,
    stretch: Stretch,
    k: f64,
}

/// Change of variable `z = z(s)` whose derivative vanishes like `s` at
/// radicand roots, so `phi'(z(s)) z'(s)` stays smooth there.
#[derive(Clone, Copy, Debug)]
enum Stretch {
    Identity,
    /// root at the lower end: `z = r + s^2`
    Lower(f64),
    /// root at the upper end: `z = r - s^2`
    Upper(f64),
    /// roots at both ends: `z = mid - half cos(pi s)`
    Both { mid: f64, half: f64 },
}

impl Stretch {
    fn to_z(self, s: f64) -> f64 {
        match self {
            Stretch::Identity => s,
            Stretch::Lower(r) => r + s * s,
            Stretch::Upper(r) => r - s * s,
            Stretch::Both { mid, half } => mid - half * (PI * s).cos(),
        }
    }

    fn to_s(self, z: f64) -> f64 {
        match self {
            Stretch::Identity => z,
            Stretch::Lower(r) => (z - r).max(0.0).sqrt(),
            Stretch::Upper(r) => (r - z).max(0.0).sqrt(),
            Stretch::Both { mid, half } => ((mid - z) / half).clamp(-1.0, 1.0).acos() / PI,
        }
    }

    fn dz_ds(self, s: f64) -> f64 {
        match self {
            Stretch::Identity => 1.0,
            Stretch::Lower(_) => 2.0 * s,
            Stretch::Upper(_) => -2.0 * s,
            Stretch::Both { half, .. } => half * PI * (PI * s).sin(),
        }
    }
}

impl QuadratureKernel {
    /// `phi'` and its relative rounding noise from the cancellation in
    /// the radicand.
    fn slope_with_noise(&self, z: f64) -> (f64, f64) {
        let f = self.forcing.eval(z);
        let radicand = self.k - 2.0 * f;
        let rel = 8.0 * f64::EPSILON * (self.k.abs() + 2.0 * f.abs()) / radicand;
        ((-self.drift.eval(z)).exp() / radicand.sqrt(), rel)
    }
}

impl ProfileKernel for QuadratureKernel {
    fn eval(&self, z: f64) -> Result<(f64, f64, f64)> {
        let v = self.coeffs.eval(z)?;
        let e = (-self.drift.eval(z)).exp();
        let radicand = self.k - 2.0 * self.forcing.eval(z);
        let d1 = e / radicand.sqrt();
        // product rule on e * radicand^{-1/2} with e' = -(c/a) e,
        // radicand' = -2 (b/a) e^2
        let d2 = -(v.c / v.a) * d1 + (v.coupling / v.a) * e.powi(3) * radicand.powf(-1.5);
        Ok((self.phi.eval(self.stretch.to_s(z)), d1, d2))
    }
}

/// Variable-coefficient family:
/// `phi(z) = int_{z0}^z exp(-int c/a) / sqrt(K - 2 int (b/a) exp(-2 int c/a))`,
/// all inner integrals anchored at `z0`, so `phi(z0) = 0`.
///
/// The domain is the largest sub-interval of `interval` around `z0` on
/// which the radicand stays positive.
pub fn soliton_quadrature(
    coeffs: &ReducedCoeffs,
    k: f64,
    z0: f64,
    interval: (f64, f64),
) -> Result<SolitonProfile> {
    if coeffs.variant() != Variant::Rayleigh {
        return Err(Error::WrongVariant {
            expected: "Rayleigh coefficients (a, b, c)",
        });
    }
    check_interval(z0, interval)?;
    if !k.is_finite() {
        return Err(Error::BadParameters("K must be finite".into()));
    }
    let (lo, hi) = interval;
    coeffs.check_nondegenerate(lo, hi, 2001)?;
    if k <= 0.0 {
        return Err(Error::EmptyDomain(format!(
            "radicand equals K = {k} <= 0 at z0"
        )));
    }

    let cf = coeffs.clone();
    let drift = Piecewise::fit(move |z| cf.c.eval(z) / cf.a.eval(z), lo, hi, QUAD_TOL)?
        .antiderivative(z0);
    let cf = coeffs.clone();
    let dr = drift.clone();
    let forcing = Piecewise::fit(
        move |z| cf.coupling_fn().eval(z) / cf.a.eval(z) * (-2.0 * dr.eval(z)).exp(),
        lo,
        hi,
        QUAD_TOL,
    )?
    .antiderivative(z0);

    let fo = forcing.clone();
    let domain = maximal_interval(|z| k - 2.0 * fo.eval(z) > 0.0, z0, lo, hi, 4000);
    // keep fit nodes off the radicand zeros
    let pad = 1e-12 * (hi - lo);
    let fit_lo = if domain.lo_closed { domain.lo } else { domain.lo + pad };
    let fit_hi = if domain.hi_closed { domain.hi } else { domain.hi - pad };
    if !(fit_lo < fit_hi) {
        return Err(Error::EmptyDomain("radicand vanishes next to z0".into()));
    }

    let stretch = match (domain.lo_closed, domain.hi_closed) {
        (true, true) => Stretch::Identity,
        (false, true) => Stretch::Lower(domain.lo),
        (true, false) => Stretch::Upper(domain.hi),
        (false, false) => Stretch::Both {
            mid: 0.5 * (domain.lo + domain.hi),
            half: 0.5 * (domain.hi - domain.lo),
        },
    };
    let mut kernel = QuadratureKernel {
        coeffs: coeffs.clone(),
        drift,
        forcing,
        phi: Piecewise::fit(|_| 0.0, 0.0, 1.0, QUAD_TOL)?,
        stretch,
        k,
    };
    let (s_a, s_b) = (stretch.to_s(fit_lo), stretch.to_s(fit_hi));
    let integrand = Piecewise::fit_noisy(
        |s| {
            let (g, rel) = kernel.slope_with_noise(stretch.to_z(s));
            let v = g * stretch.dz_ds(s);
            (v, v * rel)
        },
        s_a.min(s_b),
        s_a.max(s_b),
        QUAD_TOL,
    )?;
    kernel.phi = integrand.antiderivative(stretch.to_s(z0));

    let domain = Interval {
        lo: fit_lo,
        hi: fit_hi,
        lo_closed: true,
        hi_closed: true,
    };
    Ok(SolitonProfile::from_parts(
        Family::Quadrature,
        FamilyParams::Quadrature {
            k,
            z0,
            interval,
            coefficients: coeffs.to_spec().ok(),
        },
        domain,
        Limits::default(),
        coeffs.clone(),
        Arc::new(kernel),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum InverseKind {
    Cosh,
    Sinh,
    Sin,
}

struct InverseKernel {
    kind: InverseKind,
    sigma: f64,
    /// (a/c) sqrt(|Q|)
    amp: f64,
    /// sqrt(|Q|)
    root_q: f64,
    /// c / a
    rate: f64,
    ln_k: f64,
    r: f64,
}

impl ProfileKernel for InverseKernel {
    fn eval(&self, z: f64) -> Result<(f64, f64, f64)> {
        let ln_w = self.ln_k - self.rate * z;
        let w = ln_w.exp();
        // F(w), w F'(w), and w (F'(w) + w F''(w))
        let (f, wf1, wg) = match self.kind {
            InverseKind::Cosh => {
                let w = w.max(1.0);
                if ln_w > 20.0 {
                    let inv2 = (-2.0 * ln_w).exp();
                    let ratio = 1.0 / (1.0 - inv2).sqrt();
                    (std::f64::consts::LN_2 + ln_w - 0.25 * inv2, ratio, -ratio.powi(3) * inv2)
                } else {
                    let s = (w * w - 1.0).sqrt();
                    (w.acosh(), w / s, -w / (s * s * s))
                }
            }
            InverseKind::Sinh => {
                if ln_w > 20.0 {
                    let inv2 = (-2.0 * ln_w).exp();
                    let ratio = 1.0 / (1.0 + inv2).sqrt();
                    (std::f64::consts::LN_2 + ln_w + 0.25 * inv2, ratio, ratio.powi(3) * inv2)
                } else {
                    let s = (w * w + 1.0).sqrt();
                    (w.asinh(), w / s, w / (s * s * s))
                }
            }
            InverseKind::Sin => {
                let w = w.min(1.0);
                let s = (1.0 - w * w).sqrt();
                (w.asin(), w / s, w / (s * s * s))
            }
        };
        let phi = self.sigma * self.amp * f + self.r;
        let d1 = -self.sigma * self.root_q * wf1;
        let d2 = self.sigma * self.root_q * self.rate * wg;
        Ok((phi, d1, d2))
    }
}

fn inverse_family(
    kind: InverseKind,
    a: f64,
    b: f64,
    c: f64,
    k: f64,
    r: f64,
    sigma: Sign,
) -> Result<SolitonProfile> {
    for (name, v) in [("a", a), ("b", b), ("c", c), ("K", k), ("r", r)] {
        if !v.is_finite() {
            return Err(Error::BadParameters(format!("{name} must be finite")));
        }
    }
    if a == 0.0 || b == 0.0 || c == 0.0 {
        return Err(Error::BadParameters("a, b and c must be nonzero".into()));
    }
    let q = c / b;
    match kind {
        InverseKind::Cosh | InverseKind::Sinh if q <= 0.0 => {
            return Err(Error::BadParameters(format!("Q = c/b = {q} must be positive")));
        }
        InverseKind::Sin if q >= 0.0 => {
            return Err(Error::BadParameters(format!("Q = c/b = {q} must be negative")));
        }
        _ => {}
    }
    if k <= 0.0 {
        return Err(Error::BadParameters(format!("K = {k} must be positive")));
    }
    let rate = c / a;
    let ln_k = k.ln();
    let edge = ln_k / rate;
    // argument w = K exp(-rate z); arccosh needs w >= 1, arcsin needs w <= 1
    let domain = match (kind, rate > 0.0) {
        (InverseKind::Sinh, _) => Interval::real_line(),
        (InverseKind::Cosh, true) | (InverseKind::Sin, false) => Interval {
            lo: f64::NEG_INFINITY,
            hi: edge,
            lo_closed: false,
            hi_closed: true,
        },
        (InverseKind::Cosh, false) | (InverseKind::Sin, true) => Interval {
            lo: edge,
            hi: f64::INFINITY,
            lo_closed: true,
            hi_closed: false,
        },
    };
    // w -> 0 drives phi -> r; w -> infinity is unbounded
    let limits = match (kind, rate > 0.0) {
        (InverseKind::Cosh, _) => Limits::default(),
        (_, true) => Limits {
            minus_infinity: None,
            plus_infinity: Some(r),
        },
        (_, false) => Limits {
            minus_infinity: Some(r),
            plus_infinity: None,
        },
    };
    let root_q = q.abs().sqrt();
    let family = match kind {
        InverseKind::Cosh => Family::ArcCosh,
        InverseKind::Sinh => Family::ArcSinh,
        InverseKind::Sin => Family::ArcSin,
    };
    let kernel = InverseKernel {
        kind,
        sigma: sigma.value(),
        amp: a / c * root_q,
        root_q,
        rate,
        ln_k,
        r,
    };
    Ok(SolitonProfile::from_parts(
        family,
        FamilyParams::InverseFunction {
            a,
            b,
            c,
            k,
            r,
            sigma,
        },
        domain,
        limits,
        ReducedCoeffs::constant_rayleigh(a, b, c),
        Arc::new(kernel),
    ))
}

/// `phi = sigma (a/c) sqrt(Q) arccosh(K e^{-(c/a) z}) + r`, `Q = c/b > 0`.
pub fn soliton_arccosh(a: f64, b: f64, c: f64, k: f64, r: f64, sigma: Sign) -> Result<SolitonProfile> {
    inverse_family(InverseKind::Cosh, a, b, c, k, r, sigma)
}

/// `phi = sigma (a/c) sqrt(Q) arcsinh(K e^{-(c/a) z}) + r`, `Q = c/b > 0`.
pub fn soliton_arcsinh(a: f64, b: f64, c: f64, k: f64, r: f64, sigma: Sign) -> Result<SolitonProfile> {
    inverse_family(InverseKind::Sinh, a, b, c, k, r, sigma)
}

/// `phi = sigma (a/c) sqrt(-Q) arcsin(K e^{-(c/a) z}) + r`, `Q = c/b < 0`.
pub fn soliton_arcsin(a: f64, b: f64, c: f64, k: f64, r: f64, sigma: Sign) -> Result<SolitonProfile> {
    inverse_family(InverseKind::Sin, a, b, c, k, r, sigma)
}

struct ExplicitKernel {
    k: f64,
    rate: f64,
    offset: f64,
}

impl ProfileKernel for ExplicitKernel {
    fn eval(&self, z: f64) -> Result<(f64, f64, f64)> {
        let e = self.k * (self.rate * z).exp();
        let g = e + self.offset;
        // q = e / g, written to survive e = +-inf
        let q = if e.is_infinite() { 1.0 } else if g == 0.0 { f64::INFINITY } else { e / g };
        let phi = if g.is_infinite() { 0.0 } else { 1.0 / g.sqrt() };
        let d1 = -0.5 * self.rate * q * phi;
        let d2 = self.rate * self.rate * phi * (0.75 * q * q - 0.5 * q);
        Ok((phi, d1, d2))
    }
}

/// Constant-coefficient Van der Pol family
/// `phi = 1 / sqrt(K e^{(2c/a) z} + d/(3c))`.
pub fn vdp_explicit(a: f64, c: f64, d: f64, k: f64) -> Result<SolitonProfile> {
    for (name, v) in [("a", a), ("c", c), ("d", d), ("K", k)] {
        if !v.is_finite() {
            return Err(Error::BadParameters(format!("{name} must be finite")));
        }
    }
    if a == 0.0 || c == 0.0 {
        return Err(Error::BadParameters("a and c must be nonzero".into()));
    }
    let rate = 2.0 * c / a;
    let offset = d / (3.0 * c);
    let empty = || {
        Err(Error::EmptyDomain(format!(
            "K e^(2cz/a) + d/(3c) is nowhere positive (K = {k}, d/(3c) = {offset})"
        )))
    };
    let domain = if k == 0.0 {
        if offset > 0.0 {
            Interval::real_line()
        } else {
            return empty();
        }
    } else if k > 0.0 && offset >= 0.0 {
        Interval::real_line()
    } else if k < 0.0 && offset <= 0.0 {
        return empty();
    } else {
        // positive where rate z > ln(-offset / K) (K > 0) or < ln(offset / -K) (K < 0)
        let edge = (-offset / k).ln() / rate;
        let above = (k > 0.0) == (rate > 0.0);
        if above {
            Interval::open(edge, f64::INFINITY)
        } else {
            Interval::open(f64::NEG_INFINITY, edge)
        }
    };
    let at = |exp_to_infinity: bool| -> Option<f64> {
        if k != 0.0 && exp_to_infinity {
            // only reachable on this side when K > 0
            (k > 0.0).then_some(0.0)
        } else if offset > 0.0 {
            Some(1.0 / offset.sqrt())
        } else {
            None
        }
    };
    let limits = Limits {
        minus_infinity: domain.lo.is_infinite().then(|| at(rate < 0.0)).flatten(),
        plus_infinity: domain.hi.is_infinite().then(|| at(rate > 0.0)).flatten(),
    };
    Ok(SolitonProfile::from_parts(
        Family::VdpExplicit,
        FamilyParams::VdpExplicit { a, c, d, k },
        domain,
        limits,
        ReducedCoeffs::constant_van_der_pol(a, c, d),
        Arc::new(ExplicitKernel { k, rate, offset }),
    ))
}

/// Left side of the `k1 != 0` implicit relation,
/// `(1/k1^2) ln(|phi - k1| / sqrt(phi^2 + phi k1 + k1^2)) - (sqrt3/k1^2) atan((2 phi + k1)/(k1 sqrt3))`,
/// an antiderivative of `3 / (phi^3 - k1^3)`.
pub fn implicit_lhs(phi: f64, k1: f64) -> f64 {
    let k2 = k1 * k1;
    let s3 = 3.0_f64.sqrt();
    let quad = phi * phi + phi * k1 + k2;
    ((phi - k1).abs() / quad.sqrt()).ln() / k2 - s3 / k2 * ((2.0 * phi + k1) / (k1 * s3)).atan()
}

/// Supremum of [`implicit_lhs`] on the branch above (`upper`) or below `k1`.
fn branch_sup(k1: f64, upper: bool) -> f64 {
    let s = 3.0_f64.sqrt() / (k1 * k1) * std::f64::consts::FRAC_PI_2 * k1.signum();
    if upper {
        -s
    } else {
        s
    }
}

/// Solves `implicit_lhs(phi, k1) = target` on one branch.
fn solve_branch(target: f64, k1: f64, upper: bool, z: f64) -> Result<f64> {
    let dir = if upper { 1.0 } else { -1.0 };
    let scale = k1.abs();
    // distance from k1: F -> -inf as the distance -> 0 and F -> sup as it grows
    let f = |dist: f64| implicit_lhs(k1 + dir * dist, k1);
    let mut near = scale;
    let mut far = scale;
    let mut tries = 0;
    while f(near) >= target {
        near *= 0.5;
        tries += 1;
        if tries > 1100 || near == 0.0 {
            return Err(Error::NoBracket { z });
        }
    }
    tries = 0;
    while f(far) <= target {
        far *= 2.0;
        tries += 1;
        if tries > 200 || !far.is_finite() {
            return Err(Error::NoBracket { z });
        }
    }
    let (mut lo, mut hi) = (near, far);
    for _ in 0..200 {
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut phi = k1 + dir * 0.5 * (lo + hi);
    // Newton polish with dF/dphi = 3 / (phi^3 - k1^3), kept inside the bracket
    let (blo, bhi) = if upper {
        (k1 + lo, k1 + hi)
    } else {
        (k1 - hi, k1 - lo)
    };
    for _ in 0..3 {
        let slope = 3.0 / (phi.powi(3) - k1.powi(3));
        let next = phi - (implicit_lhs(phi, k1) - target) / slope;
        if !(next >= blo && next <= bhi) {
            break;
        }
        phi = next;
    }
    Ok(phi)
}

struct ImplicitKernel {
    coeffs: ReducedCoeffs,
    k1: f64,
    /// integral side: I(z) = base + int_{z0}^z d/a
    base: f64,
    z0: f64,
    /// Some when d/a is not constant
    integral: Option<Piecewise>,
    ratio: f64,
    relation: ImplicitRelation,
    sign: f64,
    upper: bool,
}

impl ImplicitKernel {
    fn integral_side(&self, z: f64) -> f64 {
        match &self.integral {
            Some(p) => self.base + p.eval(z),
            None => self.base + self.ratio * (z - self.z0),
        }
    }

    fn solve(&self, z: f64) -> Result<f64> {
        let i = self.integral_side(z);
        if self.k1 == 0.0 {
            let w = -2.0 * i / 3.0;
            return Ok(match self.relation {
                ImplicitRelation::Corrected => self.sign / w.sqrt(),
                ImplicitRelation::Printed => self.sign * w.sqrt(),
            });
        }
        solve_branch(i, self.k1, self.upper, z)
    }
}

impl ProfileKernel for ImplicitKernel {
    fn eval(&self, z: f64) -> Result<(f64, f64, f64)> {
        let phi = self.solve(z)?;
        let a = self.coeffs.a_at(z)?;
        let d_fn = self.coeffs.coupling_fn();
        let d = d_fn.eval(z);
        let q = d / a;
        let dq = (d_fn.derivative(z) * a - d * self.coeffs.a.derivative(z)) / (a * a);
        let (d1, d2) = match (self.k1 == 0.0, self.relation) {
            (true, ImplicitRelation::Printed) => {
                let d1 = -q / (3.0 * phi);
                (d1, -dq / (3.0 * phi) + q * d1 / (3.0 * phi * phi))
            }
            _ => {
                // phi' = (d/a)(phi^3 - k1^3)/3 from the first integral
                let cube = phi.powi(3) - self.k1.powi(3);
                let d1 = q * cube / 3.0;
                (d1, dq * cube / 3.0 + q * phi * phi * d1)
            }
        };
        Ok((phi, d1, d2))
    }
}

/// Configuration of [`vdp_implicit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImplicitOptions {
    pub k1: f64,
    pub z0: f64,
    pub constant: IntegrationConstant,
    pub relation: ImplicitRelation,
    /// Working interval; the domain is the largest sub-interval around `z0`
    /// on which the relation has a real solution on the selected branch.
    pub interval: (f64, f64),
}

/// Largest relative defect of `a' d - a d' = d c` over samples of `[lo, hi]`.
pub fn compatibility_defect(coeffs: &ReducedCoeffs, lo: f64, hi: f64, samples: usize) -> Result<(f64, f64)> {
    let d_fn = coeffs
        .d()
        .ok_or(Error::WrongVariant {
            expected: "Van der Pol coefficients (a, c, d)",
        })?;
    let n = samples.max(2);
    let mut worst = (lo, 0.0_f64);
    for i in 0..n {
        let z = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let a = coeffs.a.eval(z);
        let d = d_fn.eval(z);
        let c = coeffs.c.eval(z);
        let lhs1 = coeffs.a.derivative(z) * d;
        let lhs2 = a * d_fn.derivative(z);
        let rhs = d * c;
        let scale = 1.0_f64.max(lhs1.abs()).max(lhs2.abs()).max(rhs.abs());
        let defect = (lhs1 - lhs2 - rhs) / scale;
        if defect.abs() > worst.1.abs() {
            worst = (z, defect);
        }
    }
    Ok(worst)
}

/// Implicit Van der Pol family for coefficients with `(a/d)' = c/d`.
///
/// `k1 = 0`: `phi^{-2} = -(2/3) I(z)` (or the printed `phi^2 = -(2/3) I(z)`
/// when requested), `I(z) = C + int_{z0}^z d/a`.
/// `k1 != 0`: `implicit_lhs(phi, k1) = I(z)`, solved per `z` on the branch
/// containing the initial value.
pub fn vdp_implicit(coeffs: &ReducedCoeffs, opts: ImplicitOptions) -> Result<SolitonProfile> {
    let ImplicitOptions {
        k1,
        z0,
        constant,
        relation,
        interval,
    } = opts;
    if coeffs.variant() != Variant::VanDerPol {
        return Err(Error::WrongVariant {
            expected: "Van der Pol coefficients (a, c, d)",
        });
    }
    check_interval(z0, interval)?;
    if !k1.is_finite() {
        return Err(Error::BadParameters("k1 must be finite".into()));
    }
    let (lo, hi) = interval;
    coeffs.check_nondegenerate(lo, hi, 2001)?;
    let (z_bad, defect) = compatibility_defect(coeffs, lo, hi, 401)?;
    if defect.abs() > 1e-7 {
        return Err(Error::CompatibilityViolated { z: z_bad, defect });
    }

    let (base, sign, upper) = match constant {
        IntegrationConstant::Integral(c) => {
            if k1 != 0.0 {
                return Err(Error::BadParameters(
                    "k1 != 0 needs an initial value to select the branch".into(),
                ));
            }
            (c, 1.0, true)
        }
        IntegrationConstant::InitialValue(phi0) => {
            if !phi0.is_finite() || phi0 == k1 || (k1 == 0.0 && phi0 == 0.0) {
                return Err(Error::BadParameters(format!(
                    "initial value {phi0} is singular for k1 = {k1}"
                )));
            }
            let base = if k1 != 0.0 {
                implicit_lhs(phi0, k1)
            } else {
                match relation {
                    ImplicitRelation::Corrected => -1.5 / (phi0 * phi0),
                    ImplicitRelation::Printed => -1.5 * phi0 * phi0,
                }
            };
            (base, phi0.signum(), phi0 > k1)
        }
    };

    let constant_ratio = match (coeffs.a.as_constant(), coeffs.d().and_then(|d| d.as_constant())) {
        (Some(a), Some(d)) => Some(d / a),
        _ => None,
    };
    let integral = match constant_ratio {
        Some(_) => None,
        None => {
            let cf = coeffs.clone();
            Some(
                Piecewise::fit(
                    move |z| cf.coupling_fn().eval(z) / cf.a.eval(z),
                    lo,
                    hi,
                    QUAD_TOL,
                )?
                .antiderivative(z0),
            )
        }
    };
    let kernel = ImplicitKernel {
        coeffs: coeffs.clone(),
        k1,
        base,
        z0,
        integral,
        ratio: constant_ratio.unwrap_or(0.0),
        relation,
        sign,
        upper,
    };

    let sup = if k1 == 0.0 { 0.0 } else { branch_sup(k1, upper) };
    let admissible = |z: f64| kernel.integral_side(z) < sup;
    if !admissible(z0) {
        return Err(Error::EmptyDomain(format!(
            "integral side {} at z0 is outside the branch range (< {sup})",
            kernel.integral_side(z0)
        )));
    }
    let mut domain = maximal_interval(admissible, z0, lo, hi, 4000);
    // the root solver needs a strict margin from the branch supremum
    if k1 != 0.0 {
        let margin = |z: f64| sup - kernel.integral_side(z) > 1e-12 * (1.0 + sup.abs());
        domain = maximal_interval(margin, z0, domain.lo, domain.hi, 4000);
    }
    kernel.solve(z0)?;

    Ok(SolitonProfile::from_parts(
        Family::VdpImplicit,
        FamilyParams::VdpImplicit {
            k1,
            z0,
            constant,
            relation,
            interval,
            coefficients: coeffs.to_spec().ok(),
        },
        domain,
        Limits::default(),
        coeffs.clone(),
        Arc::new(kernel),
    ))
}

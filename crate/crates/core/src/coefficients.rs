//! Geometric data over the multitime and its contraction with a speed
//! vector into the scalar coefficients of the traveling-wave ODEs.
//!
//! Tensor fields are evaluated at jet points `(x, t, eta, xi)` where `eta`
//! stands for the unknown `u` and `xi` for its temporal gradient. Component
//! layouts are row-major:
//!
//! | field | rank | index order |
//! |-------|------|-------------|
//! | `h`   | 2    | `[alpha][beta]` |
//! | `gamma` | 3  | `[gamma][alpha][beta]` (upper index first) |
//! | `C`, `D` | 1 | `[gamma]` |
//! | `B`   | 3    | `[alpha][beta][gamma]` |

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance below which `|a(z)|` counts as degenerate.
pub const TAU_A: f64 = 1e-10;
/// Tolerance for constraint and parity residuals.
pub const TAU_C: f64 = 1e-9;

/// Wave-speed covector `lambda_alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SpeedVector(Vec<f64>);

impl SpeedVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "speed vector",
                expected: 1,
                found: 0,
            });
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::BadParameters("speed components must be finite".into()));
        }
        if components.iter().all(|&c| c == 0.0) {
            return Err(Error::ZeroSpeed);
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    /// Traveling-wave variable `z = x - lambda_alpha t^alpha`.
    pub fn phase(&self, x: f64, t: &[f64]) -> f64 {
        x - self.dot(t)
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(l, v)| l * v).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|l| l * l).sum()
    }
}

impl TryFrom<Vec<f64>> for SpeedVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SpeedVector> for Vec<f64> {
    fn from(v: SpeedVector) -> Self {
        v.0
    }
}

/// Point of the first-order jet bundle at which tensor fields are evaluated.
#[derive(Clone, Copy, Debug)]
pub struct JetPoint<'a> {
    pub x: f64,
    pub t: &'a [f64],
    pub eta: f64,
    pub xi: &'a [f64],
}

/// Owned jet point, convenient for sample lists.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub t: Vec<f64>,
    pub eta: f64,
    pub xi: Vec<f64>,
}

impl SamplePoint {
    pub fn new(x: f64, t: Vec<f64>, eta: f64, xi: Vec<f64>) -> Self {
        Self { x, t, eta, xi }
    }

    /// A point with `eta = 0` and `xi = 0`.
    pub fn at(x: f64, t: Vec<f64>) -> Self {
        let m = t.len();
        Self {
            x,
            t,
            eta: 0.0,
            xi: vec![0.0; m],
        }
    }

    pub fn jet(&self) -> JetPoint<'_> {
        JetPoint {
            x: self.x,
            t: &self.t,
            eta: self.eta,
            xi: &self.xi,
        }
    }
}

type FieldFn = dyn Fn(&JetPoint<'_>) -> Vec<f64> + Send + Sync;

/// A tensor field of fixed rank; the callable must return `m^rank`
/// components in the layout documented at module level. Callables must be
/// reentrant.
#[derive(Clone)]
pub struct TensorField {
    rank: u32,
    f: Arc<FieldFn>,
}

impl fmt::Debug for TensorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorField").field("rank", &self.rank).finish()
    }
}

impl TensorField {
    pub fn from_fn<F>(rank: u32, f: F) -> Self
    where
        F: Fn(&JetPoint<'_>) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            rank,
            f: Arc::new(f),
        }
    }

    pub fn constant(rank: u32, values: Vec<f64>) -> Self {
        Self::from_fn(rank, move |_| values.clone())
    }

    pub fn zero(rank: u32, m: usize) -> Self {
        Self::constant(rank, vec![0.0; m.pow(rank)])
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn eval(&self, m: usize, p: &JetPoint<'_>) -> Result<Vec<f64>> {
        let v = (self.f)(p);
        let expected = m.pow(self.rank);
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "tensor field components",
                expected,
                found: v.len(),
            });
        }
        Ok(v)
    }
}

/// Which multitime PDE the structure describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Rayleigh,
    VanDerPol,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Rayleigh => f.write_str("rayleigh"),
            Variant::VanDerPol => f.write_str("van-der-pol"),
        }
    }
}

/// The nonlinear coupling term: `B^{abc}` for Rayleigh, `D^c` for Van der Pol.
#[derive(Clone, Debug)]
pub enum Coupling {
    Rayleigh(TensorField),
    VanDerPol(TensorField),
}

impl Coupling {
    pub fn variant(&self) -> Variant {
        match self {
            Coupling::Rayleigh(_) => Variant::Rayleigh,
            Coupling::VanDerPol(_) => Variant::VanDerPol,
        }
    }
}

/// Metric, connection and vector/tensor fields over `m` temporal dimensions.
#[derive(Clone, Debug)]
pub struct GeometricStructure {
    m: usize,
    pub h: TensorField,
    pub gamma: TensorField,
    pub c_field: TensorField,
    pub coupling: Coupling,
}

impl GeometricStructure {
    pub fn new(
        m: usize,
        h: TensorField,
        gamma: TensorField,
        c_field: TensorField,
        coupling: Coupling,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::BadParameters("temporal dimension must be positive".into()));
        }
        let coupling_rank = match &coupling {
            Coupling::Rayleigh(b) => (b.rank(), 3),
            Coupling::VanDerPol(d) => (d.rank(), 1),
        };
        for (what, got, want) in [
            ("rank of h", h.rank(), 2),
            ("rank of gamma", gamma.rank(), 3),
            ("rank of C", c_field.rank(), 1),
            ("rank of coupling field", coupling_rank.0, coupling_rank.1),
        ] {
            if got != want {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: want as usize,
                    found: got as usize,
                });
            }
        }
        Ok(Self {
            m,
            h,
            gamma,
            c_field,
            coupling,
        })
    }

    /// Structure whose fields are all constant.
    pub fn constant(
        m: usize,
        h: Vec<f64>,
        gamma: Vec<f64>,
        c: Vec<f64>,
        coupling: ConstantCoupling,
    ) -> Result<Self> {
        let coupling = match coupling {
            ConstantCoupling::Rayleigh(b) => Coupling::Rayleigh(TensorField::constant(3, b)),
            ConstantCoupling::VanDerPol(d) => Coupling::VanDerPol(TensorField::constant(1, d)),
        };
        let s = Self::new(
            m,
            TensorField::constant(2, h),
            TensorField::constant(3, gamma),
            TensorField::constant(1, c),
            coupling,
        )?;
        // surfaces component-count mistakes at construction
        let probe = SamplePoint::at(0.0, vec![0.0; m]);
        s.eval_all(&probe.jet())?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn variant(&self) -> Variant {
        self.coupling.variant()
    }

    pub fn eval_h(&self, p: &JetPoint<'_>) -> Result<Vec<f64>> {
        self.h.eval(self.m, p)
    }

    pub fn eval_gamma(&self, p: &JetPoint<'_>) -> Result<Vec<f64>> {
        self.gamma.eval(self.m, p)
    }

    pub fn eval_c(&self, p: &JetPoint<'_>) -> Result<Vec<f64>> {
        self.c_field.eval(self.m, p)
    }

    pub fn eval_coupling(&self, p: &JetPoint<'_>) -> Result<Vec<f64>> {
        match &self.coupling {
            Coupling::Rayleigh(b) => b.eval(self.m, p),
            Coupling::VanDerPol(d) => d.eval(self.m, p),
        }
    }

    fn eval_all(&self, p: &JetPoint<'_>) -> Result<()> {
        self.eval_h(p)?;
        self.eval_gamma(p)?;
        self.eval_c(p)?;
        self.eval_coupling(p)?;
        Ok(())
    }

    fn check_point(&self, p: &JetPoint<'_>) -> Result<()> {
        for (what, len) in [("multitime", p.t.len()), ("xi", p.xi.len())] {
            if len != self.m {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: self.m,
                    found: len,
                });
            }
        }
        Ok(())
    }

    /// Copy with `h` replaced by its symmetric part and `gamma` symmetrized
    /// in its lower indices.
    pub fn symmetrized(&self) -> Self {
        let m = self.m;
        let h = self.h.clone();
        let gamma = self.gamma.clone();
        let sym_h = TensorField::from_fn(2, move |p| {
            let v = (h.f)(p);
            if v.len() != m * m {
                return v;
            }
            let mut out = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    out[a * m + b] = 0.5 * (v[a * m + b] + v[b * m + a]);
                }
            }
            out
        });
        let sym_gamma = TensorField::from_fn(3, move |p| {
            let v = (gamma.f)(p);
            if v.len() != m * m * m {
                return v;
            }
            let mut out = vec![0.0; m * m * m];
            for g in 0..m {
                for a in 0..m {
                    for b in 0..m {
                        let i = g * m * m;
                        out[i + a * m + b] = 0.5 * (v[i + a * m + b] + v[i + b * m + a]);
                    }
                }
            }
            out
        });
        Self {
            m,
            h: sym_h,
            gamma: sym_gamma,
            c_field: self.c_field.clone(),
            coupling: self.coupling.clone(),
        }
    }

    /// Largest asymmetry of `h` and of `gamma` (lower indices) over samples.
    pub fn symmetry_defect(&self, samples: &[SamplePoint]) -> Result<f64> {
        let m = self.m;
        let mut worst = 0.0_f64;
        for s in samples {
            let p = s.jet();
            let h = self.eval_h(&p)?;
            let g = self.eval_gamma(&p)?;
            for a in 0..m {
                for b in 0..m {
                    worst = worst.max((h[a * m + b] - h[b * m + a]).abs());
                    for c in 0..m {
                        let i = c * m * m;
                        worst = worst.max((g[i + a * m + b] - g[i + b * m + a]).abs());
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Constant coupling data for [`GeometricStructure::constant`].
#[derive(Clone, Debug)]
pub enum ConstantCoupling {
    Rayleigh(Vec<f64>),
    VanDerPol(Vec<f64>),
}

type ScalarCallable = dyn Fn(f64) -> f64 + Send + Sync;

/// A general scalar function of `z`, optionally with its analytic derivative.
#[derive(Clone)]
pub struct GeneralFn {
    f: Arc<ScalarCallable>,
    df: Option<Arc<ScalarCallable>>,
    label: String,
}

impl fmt::Debug for GeneralFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GeneralFn({})", self.label)
    }
}

/// Coefficient function of the reduced ODE in one of three representations.
#[derive(Clone, Debug)]
pub enum ScalarFn {
    Constant(f64),
    /// `slope * z + intercept`
    Affine { slope: f64, intercept: f64 },
    General(GeneralFn),
}

impl ScalarFn {
    pub fn general<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ScalarFn::General(GeneralFn {
            f: Arc::new(f),
            df: None,
            label: label.into(),
        })
    }

    pub fn general_with_derivative<F, D>(label: impl Into<String>, f: F, df: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ScalarFn::General(GeneralFn {
            f: Arc::new(f),
            df: Some(Arc::new(df)),
            label: label.into(),
        })
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        ScalarFn::Affine { slope, intercept }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            ScalarFn::Constant(v) => *v,
            ScalarFn::Affine { slope, intercept } => slope * z + intercept,
            ScalarFn::General(g) => (g.f)(z),
        }
    }

    /// Derivative: exact for constant/affine and for general functions that
    /// carry one, central difference otherwise.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            ScalarFn::Constant(_) => 0.0,
            ScalarFn::Affine { slope, .. } => *slope,
            ScalarFn::General(g) => match &g.df {
                Some(df) => df(z),
                None => {
                    let h = 1e-5 * z.abs().max(1.0);
                    ((g.f)(z + h) - (g.f)(z - h)) / (2.0 * h)
                }
            },
        }
    }

    pub fn kind(&self) -> CoeffKind {
        match self {
            ScalarFn::Constant(_) => CoeffKind::Constant,
            ScalarFn::Affine { .. } => CoeffKind::Affine,
            ScalarFn::General(_) => CoeffKind::General,
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarFn::Constant(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Constant(v) if *v == 0.0)
            || matches!(self, ScalarFn::Affine { slope, intercept } if *slope == 0.0 && *intercept == 0.0)
    }

    /// Serializable description; general callables have none.
    pub fn spec(&self) -> Option<CoeffSpec> {
        match self {
            ScalarFn::Constant(v) => Some(CoeffSpec::Constant(*v)),
            ScalarFn::Affine { slope, intercept } => Some(CoeffSpec::Affine {
                slope: *slope,
                intercept: *intercept,
            }),
            ScalarFn::General(_) => None,
        }
    }

    /// Classifies sampled values, returning a constant or affine
    /// representation when the samples fit one exactly.
    fn classify(samples: &[(f64, f64)], fallback: ScalarFn) -> ScalarFn {
        let scale = samples
            .iter()
            .fold(1.0_f64, |m, (_, v)| m.max(v.abs()));
        let fit_tol = 1e-13 * scale;
        let (z0, v0) = samples[0];
        if samples.iter().all(|(_, v)| (v - v0).abs() <= fit_tol) {
            return ScalarFn::Constant(v0);
        }
        let (z1, v1) = samples[samples.len() - 1];
        let slope = (v1 - v0) / (z1 - z0);
        let intercept = v0 - slope * z0;
        if samples
            .iter()
            .all(|(z, v)| (slope * z + intercept - v).abs() <= fit_tol)
        {
            return ScalarFn::Affine { slope, intercept };
        }
        fallback
    }
}

/// Serializable coefficient description used by config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoeffSpec {
    Constant(f64),
    Affine { slope: f64, intercept: f64 },
    /// `scale * exp(rate * z)`
    Exponential { scale: f64, rate: f64 },
}

impl CoeffSpec {
    pub fn build(&self) -> ScalarFn {
        match *self {
            CoeffSpec::Constant(v) => ScalarFn::Constant(v),
            CoeffSpec::Affine { slope, intercept } => ScalarFn::Affine { slope, intercept },
            CoeffSpec::Exponential { scale, rate } => ScalarFn::general_with_derivative(
                format!("{scale}*exp({rate}*z)"),
                move |z| scale * (rate * z).exp(),
                move |z| scale * rate * (rate * z).exp(),
            ),
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            CoeffSpec::Constant(v) => v.is_finite(),
            CoeffSpec::Affine { slope, intercept } => slope.is_finite() && intercept.is_finite(),
            CoeffSpec::Exponential { scale, rate } => scale.is_finite() && rate.is_finite(),
        }
    }
}

/// Representation tier of a coefficient set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffKind {
    Constant,
    Affine,
    General,
}

/// Scalar coefficients of the reduced ODE
/// `a phi'' - b phi'^3 + c phi' = 0` (Rayleigh) or
/// `a phi'' - d phi^2 phi' + c phi' = 0` (Van der Pol).
#[derive(Clone, Debug)]
pub struct ReducedCoeffs {
    pub a: ScalarFn,
    pub c: ScalarFn,
    pub coupling: CouplingCoeff,
}

/// `b(z)` or `d(z)`, whichever the variant uses.
#[derive(Clone, Debug)]
pub enum CouplingCoeff {
    B(ScalarFn),
    D(ScalarFn),
}

/// Coefficient values at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoeffValues {
    pub a: f64,
    pub c: f64,
    /// `b` for Rayleigh, `d` for Van der Pol.
    pub coupling: f64,
}

impl ReducedCoeffs {
    pub fn rayleigh(a: ScalarFn, b: ScalarFn, c: ScalarFn) -> Self {
        Self {
            a,
            c,
            coupling: CouplingCoeff::B(b),
        }
    }

    pub fn van_der_pol(a: ScalarFn, c: ScalarFn, d: ScalarFn) -> Self {
        Self {
            a,
            c,
            coupling: CouplingCoeff::D(d),
        }
    }

    pub fn constant_rayleigh(a: f64, b: f64, c: f64) -> Self {
        Self::rayleigh(ScalarFn::Constant(a), ScalarFn::Constant(b), ScalarFn::Constant(c))
    }

    pub fn constant_van_der_pol(a: f64, c: f64, d: f64) -> Self {
        Self::van_der_pol(ScalarFn::Constant(a), ScalarFn::Constant(c), ScalarFn::Constant(d))
    }

    pub fn variant(&self) -> Variant {
        match self.coupling {
            CouplingCoeff::B(_) => Variant::Rayleigh,
            CouplingCoeff::D(_) => Variant::VanDerPol,
        }
    }

    pub fn b(&self) -> Option<&ScalarFn> {
        match &self.coupling {
            CouplingCoeff::B(b) => Some(b),
            CouplingCoeff::D(_) => None,
        }
    }

    pub fn d(&self) -> Option<&ScalarFn> {
        match &self.coupling {
            CouplingCoeff::D(d) => Some(d),
            CouplingCoeff::B(_) => None,
        }
    }

    pub fn coupling_fn(&self) -> &ScalarFn {
        match &self.coupling {
            CouplingCoeff::B(f) | CouplingCoeff::D(f) => f,
        }
    }

    pub fn kind(&self) -> CoeffKind {
        self.a
            .kind()
            .max(self.c.kind())
            .max(self.coupling_fn().kind())
    }

    /// `a(z)`, rejecting degenerate values.
    pub fn a_at(&self, z: f64) -> Result<f64> {
        let a = self.a.eval(z);
        if !(a.abs() > TAU_A) {
            return Err(Error::DegenerateA { z, value: a });
        }
        Ok(a)
    }

    pub fn eval(&self, z: f64) -> Result<CoeffValues> {
        Ok(CoeffValues {
            a: self.a_at(z)?,
            c: self.c.eval(z),
            coupling: self.coupling_fn().eval(z),
        })
    }

    /// Scans `[lo, hi]` for zeros or sign changes of `a`.
    pub fn check_nondegenerate(&self, lo: f64, hi: f64, samples: usize) -> Result<()> {
        let n = samples.max(2);
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..n {
            let z = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let a = self.a_at(z)?;
            if let Some((pz, pa)) = prev {
                if pa.signum() != a.signum() {
                    return Err(Error::DegenerateA {
                        z: 0.5 * (pz + z),
                        value: 0.0,
                    });
                }
            }
            prev = Some((z, a));
        }
        Ok(())
    }

    /// Residual of the reduced ODE for a candidate `(phi, phi', phi'')`.
    pub fn ode_residual(&self, z: f64, phi: f64, dphi: f64, ddphi: f64) -> Result<f64> {
        let v = self.eval(z)?;
        Ok(match self.variant() {
            Variant::Rayleigh => v.a * ddphi - v.coupling * dphi.powi(3) + v.c * dphi,
            Variant::VanDerPol => v.a * ddphi - v.coupling * phi * phi * dphi + v.c * dphi,
        })
    }

    pub fn to_spec(&self) -> Result<CoeffsSpec> {
        let get = |f: &ScalarFn| f.spec().ok_or(Error::NotSerializable("reduced coefficient"));
        Ok(match &self.coupling {
            CouplingCoeff::B(b) => CoeffsSpec::Rayleigh {
                a: get(&self.a)?,
                b: get(b)?,
                c: get(&self.c)?,
            },
            CouplingCoeff::D(d) => CoeffsSpec::VanDerPol {
                a: get(&self.a)?,
                c: get(&self.c)?,
                d: get(d)?,
            },
        })
    }
}

/// Serializable form of [`ReducedCoeffs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoeffsSpec {
    Rayleigh { a: CoeffSpec, b: CoeffSpec, c: CoeffSpec },
    VanDerPol { a: CoeffSpec, c: CoeffSpec, d: CoeffSpec },
}

impl CoeffsSpec {
    pub fn build(&self) -> Result<ReducedCoeffs> {
        let all = match self {
            CoeffsSpec::Rayleigh { a, b, c } => [a, b, c],
            CoeffsSpec::VanDerPol { a, c, d } => [a, c, d],
        };
        if all.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("coefficient values must be finite".into()));
        }
        Ok(match self {
            CoeffsSpec::Rayleigh { a, b, c } => ReducedCoeffs::rayleigh(a.build(), b.build(), c.build()),
            CoeffsSpec::VanDerPol { a, c, d } => {
                ReducedCoeffs::van_der_pol(a.build(), c.build(), d.build())
            }
        })
    }
}

type ProfileCallable = dyn Fn(f64) -> (f64, f64) + Send + Sync;

/// Where and how `reduce` samples the structure along the foliation.
#[derive(Clone)]
pub struct Probe {
    /// Multitime at which each leaf `z` is visited (`x = z + lambda . t`).
    pub t_base: Vec<f64>,
    /// Window of `z` values used for degeneracy scanning and tier detection.
    pub window: (f64, f64),
    pub samples: usize,
    /// Optional `(phi, phi')` used to fill `eta` and `xi`; zeros otherwise.
    pub profile: Option<Arc<ProfileCallable>>,
}

impl fmt::Debug for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Probe")
            .field("t_base", &self.t_base)
            .field("window", &self.window)
            .field("samples", &self.samples)
            .field("profile", &self.profile.is_some())
            .finish()
    }
}

impl Probe {
    pub fn origin(m: usize) -> Self {
        Self {
            t_base: vec![0.0; m],
            window: (-10.0, 10.0),
            samples: 41,
            profile: None,
        }
    }

    pub fn with_window(mut self, lo: f64, hi: f64) -> Self {
        self.window = (lo, hi);
        self
    }

    pub fn with_profile<F>(mut self, profile: F) -> Self
    where
        F: Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    {
        self.profile = Some(Arc::new(profile));
        self
    }
}

/// Contractions of the structure with `lambda` at a jet point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contraction {
    /// `h^{ab} l_a l_b - 1`
    pub a: f64,
    /// `C^g l_g`
    pub c: f64,
    /// `B^{abg} l_a l_b l_g` or `D^g l_g`
    pub coupling: f64,
}

pub fn contract(
    structure: &GeometricStructure,
    lambda: &SpeedVector,
    p: &JetPoint<'_>,
) -> Result<Contraction> {
    let m = structure.dim();
    if lambda.dim() != m {
        return Err(Error::DimensionMismatch {
            what: "speed vector",
            expected: m,
            found: lambda.dim(),
        });
    }
    structure.check_point(p)?;
    let l = lambda.components();
    let h = structure.eval_h(p)?;
    let mut hll = 0.0;
    for a in 0..m {
        for b in 0..m {
            hll += h[a * m + b] * l[a] * l[b];
        }
    }
    let c = lambda.dot(&structure.eval_c(p)?);
    let coupling = match &structure.coupling {
        Coupling::Rayleigh(_) => {
            let b = structure.eval_coupling(p)?;
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        acc += b[(i * m + j) * m + k] * l[i] * l[j] * l[k];
                    }
                }
            }
            acc
        }
        Coupling::VanDerPol(_) => lambda.dot(&structure.eval_coupling(p)?),
    };
    Ok(Contraction {
        a: hll - 1.0,
        c,
        coupling,
    })
}

fn leaf_point(lambda: &SpeedVector, probe: &Probe, z: f64) -> SamplePoint {
    let t = probe.t_base.clone();
    let x = z + lambda.dot(&t);
    let (eta, dphi) = probe.profile.as_ref().map(|p| p(z)).unwrap_or((0.0, 0.0));
    let xi = lambda.components().iter().map(|l| -l * dphi).collect();
    SamplePoint { x, t, eta, xi }
}

/// Contracts the structure with `lambda` into the reduced coefficients.
///
/// The returned functions evaluate the contraction on the leaf
/// `x - lambda . t = z` at `t = probe.t_base`. Over `probe.window` the
/// contractions are sampled: a sign change or near-zero of `a` is reported
/// as [`Error::DegenerateA`], and functions that are exactly constant or
/// affine on the samples come back in that representation.
pub fn reduce(
    structure: &GeometricStructure,
    lambda: &SpeedVector,
    probe: &Probe,
) -> Result<ReducedCoeffs> {
    let m = structure.dim();
    if lambda.dim() != m || probe.t_base.len() != m {
        return Err(Error::DimensionMismatch {
            what: "speed vector / probe multitime",
            expected: m,
            found: if lambda.dim() != m {
                lambda.dim()
            } else {
                probe.t_base.len()
            },
        });
    }
    let n = probe.samples.max(3);
    let (lo, hi) = probe.window;
    let mut sa = Vec::with_capacity(n);
    let mut sc = Vec::with_capacity(n);
    let mut sk = Vec::with_capacity(n);
    for i in 0..n {
        let z = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let pt = leaf_point(lambda, probe, z);
        let k = contract(structure, lambda, &pt.jet())?;
        sa.push((z, k.a));
        sc.push((z, k.c));
        sk.push((z, k.coupling));
    }
    for w in sa.windows(2) {
        let (z0, a0) = w[0];
        let (z1, a1) = w[1];
        if a0.abs() <= TAU_A {
            return Err(Error::DegenerateA { z: z0, value: a0 });
        }
        if a0.signum() != a1.signum() {
            return Err(Error::DegenerateA {
                z: 0.5 * (z0 + z1),
                value: 0.0,
            });
        }
    }
    if let Some(&(z, a)) = sa.last() {
        if a.abs() <= TAU_A {
            return Err(Error::DegenerateA { z, value: a });
        }
    }

    let make = |pick: fn(&Contraction) -> f64| -> ScalarFn {
        let s = structure.clone();
        let l = lambda.clone();
        let pr = probe.clone();
        ScalarFn::general("contraction", move |z| {
            let pt = leaf_point(&l, &pr, z);
            contract(&s, &l, &pt.jet()).map(|k| pick(&k)).unwrap_or(f64::NAN)
        })
    };
    let a = ScalarFn::classify(&sa, make(|k| k.a));
    let c = ScalarFn::classify(&sc, make(|k| k.c));
    let coupling = ScalarFn::classify(&sk, make(|k| k.coupling));
    Ok(match structure.variant() {
        Variant::Rayleigh => ReducedCoeffs::rayleigh(a, coupling, c),
        Variant::VanDerPol => ReducedCoeffs::van_der_pol(a, c, coupling),
    })
}

/// Builds the canonical structure realizing `target`: diagonal `h` with
/// `h^{11}` tuned so that `h^{ab} l_a l_b = a(z) + 1` (other diagonal
/// entries 1), `C` and the coupling supported on index 1, flat connection.
pub fn synthesize_structure(
    target: &ReducedCoeffs,
    m: usize,
    lambda: &SpeedVector,
) -> Result<GeometricStructure> {
    if lambda.dim() != m {
        return Err(Error::DimensionMismatch {
            what: "speed vector",
            expected: m,
            found: lambda.dim(),
        });
    }
    let l1 = lambda.components()[0];
    if l1 == 0.0 {
        return Err(Error::ZeroLeadingSpeed);
    }
    let rest: f64 = lambda.components()[1..].iter().map(|l| l * l).sum();

    let phase = {
        let lambda = lambda.clone();
        move |p: &JetPoint<'_>| lambda.phase(p.x, p.t)
    };

    let h = {
        let a = target.a.clone();
        let phase = phase.clone();
        TensorField::from_fn(2, move |p| {
            let z = phase(p);
            let mut out = vec![0.0; m * m];
            out[0] = (a.eval(z) + 1.0 - rest) / (l1 * l1);
            for i in 1..m {
                out[i * m + i] = 1.0;
            }
            out
        })
    };
    let c_field = {
        let c = target.c.clone();
        let phase = phase.clone();
        TensorField::from_fn(1, move |p| {
            let mut out = vec![0.0; m];
            out[0] = c.eval(phase(p)) / l1;
            out
        })
    };
    let coupling = match &target.coupling {
        CouplingCoeff::B(b) => {
            let b = b.clone();
            Coupling::Rayleigh(TensorField::from_fn(3, move |p| {
                let mut out = vec![0.0; m * m * m];
                out[0] = b.eval(phase(p)) / (l1 * l1 * l1);
                out
            }))
        }
        CouplingCoeff::D(d) => {
            let d = d.clone();
            Coupling::VanDerPol(TensorField::from_fn(1, move |p| {
                let mut out = vec![0.0; m];
                out[0] = d.eval(phase(p)) / l1;
                out
            }))
        }
    };
    GeometricStructure::new(m, h, TensorField::zero(3, m), c_field, coupling)
}

/// Pointwise defect of the constraint linking the connection to `C` and the
/// coupling field:
/// `h^{ab} G^g_{ab} xi_g - (C^g xi_g - B^{abg} xi_a xi_b xi_g)` (Rayleigh) or
/// `h^{ab} G^g_{ab} xi_g - (C^g xi_g - D^g eta^2 xi_g)` (Van der Pol).
pub fn constraint_defect(structure: &GeometricStructure, p: &JetPoint<'_>) -> Result<f64> {
    structure.check_point(p)?;
    let m = structure.dim();
    let h = structure.eval_h(p)?;
    let g = structure.eval_gamma(p)?;
    let xi = p.xi;
    let mut lhs = 0.0;
    for c in 0..m {
        let mut tr = 0.0;
        for a in 0..m {
            for b in 0..m {
                tr += h[a * m + b] * g[c * m * m + a * m + b];
            }
        }
        lhs += tr * xi[c];
    }
    let cxi: f64 = structure.eval_c(p)?.iter().zip(xi).map(|(c, x)| c * x).sum();
    let k = structure.eval_coupling(p)?;
    let nonlinear = match structure.variant() {
        Variant::Rayleigh => {
            let mut acc = 0.0;
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        acc += k[(a * m + b) * m + c] * xi[a] * xi[b] * xi[c];
                    }
                }
            }
            acc
        }
        Variant::VanDerPol => {
            p.eta * p.eta * k.iter().zip(xi).map(|(d, x)| d * x).sum::<f64>()
        }
    };
    Ok(lhs - (cxi - nonlinear))
}

/// True iff the connection constraint holds within [`TAU_C`] at every sample.
pub fn check_constraint(structure: &GeometricStructure, samples: &[SamplePoint]) -> Result<bool> {
    if samples.is_empty() {
        return Err(Error::BadParameters("constraint check needs sample points".into()));
    }
    for s in samples {
        if constraint_defect(structure, &s.jet())?.abs() > TAU_C {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Samples pairs of points on common leaves `x - lambda . t = z` and checks
/// that every contraction agrees within [`TAU_C`]; deterministic (fixed seed).
pub fn verify_reduction_consistency(
    structure: &GeometricStructure,
    lambda: &SpeedVector,
    n_samples: usize,
) -> Result<bool> {
    if n_samples < 2 {
        return Err(Error::BadParameters("need at least two samples".into()));
    }
    let m = structure.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a3b);
    let xi0 = vec![0.0; m];
    for _ in 0..n_samples {
        let z: f64 = rng.gen_range(-5.0..5.0);
        let t1: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t2: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let p1 = JetPoint {
            x: z + lambda.dot(&t1),
            t: &t1,
            eta: 0.0,
            xi: &xi0,
        };
        let p2 = JetPoint {
            x: z + lambda.dot(&t2),
            t: &t2,
            eta: 0.0,
            xi: &xi0,
        };
        let k1 = contract(structure, lambda, &p1)?;
        let k2 = contract(structure, lambda, &p2)?;
        let scale = 1.0_f64.max(k1.a.abs()).max(k1.c.abs()).max(k1.coupling.abs());
        let diff = (k1.a - k2.a)
            .abs()
            .max((k1.c - k2.c).abs())
            .max((k1.coupling - k2.coupling).abs());
        if diff > TAU_C * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

//! The `mrayleigh` command line: JSON configs with flag overrides, CSV and
//! JSON artifacts, and a stable exit-code contract
//! (0 verified, 1 verification failed, 2 invalid input).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::closed_form::{
    soliton_arccosh, soliton_arcsin, soliton_arcsinh, soliton_quadrature, vdp_explicit,
    vdp_implicit, ImplicitOptions, ImplicitRelation, IntegrationConstant, ProfileRecord, Sign,
    SolitonProfile,
};
use crate::coefficients::{
    synthesize_structure, Coupling, CoeffsSpec, GeometricStructure,
    ReducedCoeffs, SpeedVector, TensorField,
};
use crate::error::{Error, Result};
use crate::geometry::{check_prolongation, FieldFunction, Jet, ResidualReport};
use crate::oracle::{
    decay_check_profile, integrate_single_time_rayleigh, perturbation_report, residual_sweep,
    Axis, DecayOptions, GridSpec, SingleTimeOptions,
};
use crate::output::to_json_string;
use crate::series::{series_coefficients, series_soliton, AffineParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Quadrature,
    Arccosh,
    Arcsinh,
    Arcsin,
    VdpImplicit,
    VdpExplicit,
    Series,
    /// `u = a x + b`; only meaningful for `verify`.
    Stationary,
}

#[derive(Debug, Parser)]
#[command(name = "mrayleigh", version, about = "Multitime Rayleigh soliton toolkit")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Residual tolerance for verification.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a soliton profile to CSV with a JSON sidecar.
    Profile(ProfileCmd),
    /// Lift a profile, synthesize a structure and sweep the PDE residual.
    Verify(VerifyCmd),
    /// Power-series coefficients for affine coefficients.
    Series(SeriesCmd),
    /// Prolong a single-time Rayleigh solution to several times.
    Prolong(ProlongCmd),
    /// Finite-horizon decay scan along a positive ray.
    Decay(DecayCmd),
}

#[derive(Debug, Default, Args)]
pub struct ProfileFlags {
    #[arg(long, value_enum)]
    pub family: Option<FamilyName>,
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub d: Option<f64>,
    #[arg(long = "K", allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    /// `+` or `-`.
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub k1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub z0: Option<f64>,
    /// Initial value `phi(z0)` of the implicit family.
    #[arg(long, allow_hyphen_values = true)]
    pub phi0: Option<f64>,
    /// Integration constant of the implicit family (`k1 = 0`).
    #[arg(long, allow_hyphen_values = true)]
    pub constant: Option<f64>,
    #[arg(long, value_enum)]
    pub relation: Option<RelationName>,
    /// Working interval `lo,hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub interval: Option<Vec<f64>>,
    /// Affine coefficients `m,p,q,a,b,c`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coeffs: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha1: Option<f64>,
    #[arg(long = "N")]
    pub order: Option<usize>,
    /// Speed vector `l1,...,lm`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambda: Option<Vec<f64>>,
    /// Stationary field `a,b` (`u = a x + b`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub stationary: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RelationName {
    Corrected,
    Printed,
}

#[derive(Debug, Args)]
pub struct ProfileCmd {
    #[command(flatten)]
    pub profile: ProfileFlags,
    #[arg(long, allow_hyphen_values = true)]
    pub zmin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub zmax: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyCmd {
    #[command(flatten)]
    pub profile: ProfileFlags,
    /// Number of times (speed vector defaults to all ones).
    #[arg(long)]
    pub m: Option<usize>,
    /// Cube grid `min,max,count` shared by `x` and every time.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SeriesCmd {
    /// Affine coefficients `m,p,q,a,b,c`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coeffs: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha1: Option<f64>,
    #[arg(long = "N")]
    pub order: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProlongCmd {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Amplitude `A` of `u(x, 0) = A sin x`, `u_t(x, 0) = -A cos x`.
    #[arg(long, allow_hyphen_values = true)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecayCmd {
    #[command(flatten)]
    pub profile: ProfileFlags,
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<f64>,
    /// Ray direction in the positive orthant.
    #[arg(long, value_delimiter = ',')]
    pub direction: Option<Vec<f64>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Perturbation amplitude for the exploratory report (with `--stationary`).
    #[arg(long, allow_hyphen_values = true)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub mode: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
}

/// Every configurable field; JSON configs use these keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: Option<FamilyName>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    pub r: Option<f64>,
    pub sigma: Option<Sign>,
    pub k1: Option<f64>,
    pub z0: Option<f64>,
    pub phi0: Option<f64>,
    pub constant: Option<f64>,
    pub relation: Option<ImplicitRelation>,
    pub interval: Option<(f64, f64)>,
    /// Variable coefficients for the quadrature and implicit families.
    pub coefficients: Option<CoeffsSpec>,
    /// `[m, p, q, a, b, c]`.
    pub affine: Option<[f64; 6]>,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    #[serde(rename = "N")]
    pub order: Option<usize>,
    pub lambda: Option<Vec<f64>>,
    pub stationary: Option<(f64, f64)>,
    pub m: Option<usize>,
    pub zmin: Option<f64>,
    pub zmax: Option<f64>,
    pub n: Option<usize>,
    pub grid: Option<GridSpec>,
    pub tol: Option<f64>,
    pub epsilon: Option<f64>,
    pub amplitude: Option<f64>,
    pub mode: Option<usize>,
    pub t_end: Option<f64>,
    pub x: Option<f64>,
    pub direction: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    pub horizon: Option<f64>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn pair(v: Option<Vec<f64>>, what: &str) -> Result<Option<(f64, f64)>> {
    match v {
        None => Ok(None),
        Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
        Some(v) => Err(Error::Config(format!("{what} needs 2 values, got {}", v.len()))),
    }
}

fn parse_sign(s: &str) -> Result<Sign> {
    match s.trim() {
        "+" | "1" | "+1" | "plus" => Ok(Sign::Plus),
        "-" | "-1" | "minus" => Ok(Sign::Minus),
        other => Err(Error::Config(format!("sigma must be + or -, got {other:?}"))),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn apply_profile(&mut self, f: ProfileFlags) -> Result<()> {
        set(&mut self.family, f.family);
        set(&mut self.a, f.a);
        set(&mut self.b, f.b);
        set(&mut self.c, f.c);
        set(&mut self.d, f.d);
        set(&mut self.k, f.k);
        set(&mut self.r, f.r);
        set(&mut self.sigma, f.sigma.as_deref().map(parse_sign).transpose()?);
        set(&mut self.k1, f.k1);
        set(&mut self.z0, f.z0);
        set(&mut self.phi0, f.phi0);
        set(&mut self.constant, f.constant);
        set(
            &mut self.relation,
            f.relation.map(|r| match r {
                RelationName::Corrected => ImplicitRelation::Corrected,
                RelationName::Printed => ImplicitRelation::Printed,
            }),
        );
        set(&mut self.interval, pair(f.interval, "--interval")?);
        set(&mut self.affine, affine_flag(f.coeffs)?);
        set(&mut self.alpha0, f.alpha0);
        set(&mut self.alpha1, f.alpha1);
        set(&mut self.order, f.order);
        set(&mut self.lambda, f.lambda);
        set(&mut self.stationary, pair(f.stationary, "--stationary")?);
        Ok(())
    }

    fn apply_globals(&mut self, cli: &Cli) {
        set(&mut self.out, cli.out.clone());
        set(&mut self.tol, cli.tol);
        set(&mut self.format, cli.format);
    }

    /// Rejects non-finite numbers and inconsistent sizes.
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("d", self.d),
            ("K", self.k),
            ("r", self.r),
            ("k1", self.k1),
            ("z0", self.z0),
            ("phi0", self.phi0),
            ("constant", self.constant),
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("zmin", self.zmin),
            ("zmax", self.zmax),
            ("tol", self.tol),
            ("epsilon", self.epsilon),
            ("amplitude", self.amplitude),
            ("t_end", self.t_end),
            ("x", self.x),
            ("threshold", self.threshold),
            ("horizon", self.horizon),
        ];
        for (name, v) in scalars {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::Config(format!("{name} must be finite")));
                }
            }
        }
        let lists: [(&str, Option<Vec<f64>>); 5] = [
            ("lambda", self.lambda.clone()),
            ("direction", self.direction.clone()),
            ("affine", self.affine.map(|a| a.to_vec())),
            ("interval", self.interval.map(|(a, b)| vec![a, b])),
            ("stationary", self.stationary.map(|(a, b)| vec![a, b])),
        ];
        for (name, v) in lists {
            if let Some(v) = v {
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(Error::Config(format!("{name} must be finite")));
                }
            }
        }
        if let Some(g) = &self.grid {
            if g.axes.iter().any(|a| !a.min.is_finite() || !a.max.is_finite()) {
                return Err(Error::Config("grid bounds must be finite".into()));
            }
        }
        if let Some(t) = self.tol {
            if t <= 0.0 {
                return Err(Error::Config("tol must be positive".into()));
            }
        }
        Ok(())
    }

    fn need<T: Copy>(&self, v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| {
            Error::Config(format!(
                "missing {name} for family {}",
                self.family
                    .map(|f| format!("{f:?}").to_lowercase())
                    .unwrap_or_else(|| "?".into())
            ))
        })
    }

    fn speed(&self, m: usize) -> Result<SpeedVector> {
        SpeedVector::new(self.lambda.clone().unwrap_or_else(|| vec![1.0; m]))
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn affine_flag(v: Option<Vec<f64>>) -> Result<Option<[f64; 6]>> {
    match v {
        None => Ok(None),
        Some(v) => <[f64; 6]>::try_from(v.as_slice())
            .map(Some)
            .map_err(|_| Error::Config(format!("--coeffs needs 6 values m,p,q,a,b,c, got {}", v.len()))),
    }
}

fn rayleigh_coeffs(cfg: &RunConfig) -> Result<ReducedCoeffs> {
    match &cfg.coefficients {
        Some(spec @ CoeffsSpec::Rayleigh { .. }) => spec.build(),
        Some(_) => Err(Error::Config("family needs Rayleigh coefficients (a, b, c)".into())),
        None => Ok(ReducedCoeffs::constant_rayleigh(
            cfg.need(cfg.a, "a")?,
            cfg.need(cfg.b, "b")?,
            cfg.need(cfg.c, "c")?,
        )),
    }
}

fn vdp_coeffs(cfg: &RunConfig) -> Result<ReducedCoeffs> {
    match &cfg.coefficients {
        Some(spec @ CoeffsSpec::VanDerPol { .. }) => spec.build(),
        Some(_) => Err(Error::Config("family needs Van der Pol coefficients (a, c, d)".into())),
        None => Ok(ReducedCoeffs::constant_van_der_pol(
            cfg.need(cfg.a, "a")?,
            cfg.need(cfg.c, "c")?,
            cfg.need(cfg.d, "d")?,
        )),
    }
}

/// Builds the configured profile (the series family gets its speed vector
/// attached; other families only when `lambda` is set).
pub fn build_profile(cfg: &RunConfig) -> Result<SolitonProfile> {
    let family = cfg
        .family
        .ok_or_else(|| Error::Config("missing family".into()))?;
    let sigma = cfg.sigma.unwrap_or(Sign::Plus);
    let r = cfg.r.unwrap_or(0.0);
    let z0 = cfg.z0.unwrap_or(0.0);
    let interval = cfg.interval.unwrap_or((
        cfg.zmin.unwrap_or(-10.0).min(z0),
        cfg.zmax.unwrap_or(10.0).max(z0),
    ));
    let profile = match family {
        FamilyName::Quadrature => {
            soliton_quadrature(&rayleigh_coeffs(cfg)?, cfg.need(cfg.k, "K")?, z0, interval)?
        }
        FamilyName::Arccosh | FamilyName::Arcsinh | FamilyName::Arcsin => {
            let (a, b, c, k) = (
                cfg.need(cfg.a, "a")?,
                cfg.need(cfg.b, "b")?,
                cfg.need(cfg.c, "c")?,
                cfg.need(cfg.k, "K")?,
            );
            match family {
                FamilyName::Arccosh => soliton_arccosh(a, b, c, k, r, sigma)?,
                FamilyName::Arcsinh => soliton_arcsinh(a, b, c, k, r, sigma)?,
                _ => soliton_arcsin(a, b, c, k, r, sigma)?,
            }
        }
        FamilyName::VdpImplicit => {
            let constant = match (cfg.phi0, cfg.constant) {
                (Some(p), None) => IntegrationConstant::InitialValue(p),
                (None, Some(c)) => IntegrationConstant::Integral(c),
                (Some(_), Some(_)) => {
                    return Err(Error::Config("give either phi0 or constant, not both".into()))
                }
                (None, None) => return Err(Error::Config("missing phi0 or constant".into())),
            };
            vdp_implicit(
                &vdp_coeffs(cfg)?,
                ImplicitOptions {
                    k1: cfg.k1.unwrap_or(0.0),
                    z0,
                    constant,
                    relation: cfg.relation.unwrap_or_default(),
                    interval,
                },
            )?
        }
        FamilyName::VdpExplicit => vdp_explicit(
            cfg.need(cfg.a, "a")?,
            cfg.need(cfg.c, "c")?,
            cfg.need(cfg.d, "d")?,
            cfg.need(cfg.k, "K")?,
        )?,
        FamilyName::Series => {
            let params = AffineParams::from_array(cfg.need(cfg.affine, "affine coefficients")?);
            let s = series_coefficients(
                params,
                cfg.alpha0.unwrap_or(0.0),
                cfg.need(cfg.alpha1, "alpha1")?,
                cfg.order.unwrap_or(40),
            )?;
            return Ok(series_soliton(&s, cfg.speed(1)?));
        }
        FamilyName::Stationary => {
            return Err(Error::Config("stationary is not a soliton family".into()))
        }
    };
    Ok(match &cfg.lambda {
        Some(l) => profile.with_lambda(SpeedVector::new(l.clone())?),
        None => profile,
    })
}

/// Structure with `h = I`, `C^1 = B^{111} = eps` and
/// `Gamma^1_{22} = eps - eps xi_1^2`, so the index-1 condition holds for
/// every one-time field (needs `m >= 2` unless `eps = 0`).
pub fn prolongation_structure(epsilon: f64, m: usize) -> Result<GeometricStructure> {
    if m == 0 {
        return Err(Error::BadParameters("m must be at least 1".into()));
    }
    let mut h = vec![0.0; m * m];
    for a in 0..m {
        h[a * m + a] = 1.0;
    }
    let mut c = vec![0.0; m];
    c[0] = epsilon;
    let mut b = vec![0.0; m * m * m];
    b[0] = epsilon;
    let gamma = if m >= 2 && epsilon != 0.0 {
        TensorField::from_fn(3, move |p| {
            let mut g = vec![0.0; m * m * m];
            // Gamma^1_{22}
            g[m + 1] = epsilon - epsilon * p.xi[0] * p.xi[0];
            g
        })
    } else {
        TensorField::constant(3, vec![0.0; m * m * m])
    };
    GeometricStructure::new(
        m,
        TensorField::constant(2, h),
        gamma,
        TensorField::constant(1, c),
        Coupling::Rayleigh(TensorField::constant(3, b)),
    )
}

/// `u = A sin(x - t)`, exact for `eps = 0`.
pub fn travelling_sine(amplitude: f64) -> FieldFunction {
    FieldFunction::from_fn(1, move |x, t| amplitude * (x - t[0]).sin()).with_jet(move |x, t| {
        let (s, c) = (x - t[0]).sin_cos();
        Ok(Jet {
            value: amplitude * s,
            u_x: amplitude * c,
            u_xx: -amplitude * s,
            grad: vec![-amplitude * c],
            hess: vec![-amplitude * s],
        })
    })
}

/// Outcome of a command before it is turned into an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Verified,
    Failed,
}

/// Exit code for a library error: invalid input is 2, numerical failures
/// of a verification are 1.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::DomainExceeded { .. }
        | Error::ConditionViolated { .. }
        | Error::NoBracket { .. }
        | Error::StiffnessFailure { .. }
        | Error::BlowUp { .. } => EXIT_FAILED,
        _ => EXIT_INVALID,
    }
}

struct Writer {
    dir: PathBuf,
    format: Format,
    quiet: bool,
}

impl Writer {
    fn new(cfg: &RunConfig, quiet: bool) -> Result<Self> {
        let dir = cfg.out_dir();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            format: cfg.format.unwrap_or_default(),
            quiet,
        })
    }

    fn csv(&self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        if !self.format.csv() {
            return Ok(());
        }
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.put(name, &buf)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if !self.format.json() {
            return Ok(());
        }
        self.put(name, to_json_string(value)?.as_bytes())
    }

    /// JSON written whatever the format (records without a CSV form).
    fn json_always<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        self.put(name, to_json_string(value)?.as_bytes())
    }

    fn put(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        info!("wrote {}", path.display());
        Ok(())
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn cmd_profile(cfg: &RunConfig, w: &Writer) -> Result<Outcome> {
    let profile = build_profile(cfg)?;
    let (zmin, zmax) = (cfg.zmin.unwrap_or(-5.0), cfg.zmax.unwrap_or(5.0));
    let n = cfg.n.unwrap_or(200);
    let rows = profile.sample(zmin, zmax, n)?;
    w.csv("profile.csv", |buf| {
        crate::output::write_csv(buf, &["z", "phi", "phi_prime"], &rows)
    })?;
    w.json("profile.json", &profile.record())?;
    w.say(&format!("profile {}: {} samples", profile.family(), rows.len()));
    Ok(Outcome::Verified)
}

#[derive(Serialize)]
struct VerifyRecord {
    profile: Option<ProfileRecord>,
    stationary: Option<(f64, f64)>,
    m: usize,
    tol: f64,
    grid: GridSpec,
    points: usize,
    max_abs: f64,
    rms: f64,
    verified: bool,
}

fn default_grid(m: usize) -> GridSpec {
    let count = (1e4_f64.powf(1.0 / (m + 1) as f64)).ceil() as usize;
    GridSpec::cube(m, -1.0, 1.0, count)
}

fn grid_from(cfg: &RunConfig, flag: Option<Vec<f64>>, m: usize) -> Result<GridSpec> {
    if let Some(v) = flag {
        if v.len() != 3 || v[2] < 1.0 || v[2].fract() != 0.0 {
            return Err(Error::Config("--grid needs min,max,count".into()));
        }
        return Ok(GridSpec::cube(m, v[0], v[1], v[2] as usize));
    }
    Ok(cfg.grid.clone().unwrap_or_else(|| default_grid(m)))
}

fn cmd_verify(cfg: &RunConfig, grid_flag: Option<Vec<f64>>, w: &Writer) -> Result<Outcome> {
    let tol = cfg.tol.unwrap_or(1e-6);
    let m = cfg.m.or(cfg.lambda.as_ref().map(Vec::len)).unwrap_or(2);
    let grid = grid_from(cfg, grid_flag, m)?;
    let (report, record_profile, stationary) = if cfg.family == Some(FamilyName::Stationary) {
        let (slope, offset) = cfg.need(cfg.stationary, "stationary a,b")?;
        let coeffs = ReducedCoeffs::constant_rayleigh(
            cfg.a.unwrap_or(1.0),
            cfg.b.unwrap_or(1.0),
            cfg.c.unwrap_or(1.0),
        );
        let structure = synthesize_structure(&coeffs, m, &cfg.speed(m)?)?;
        let u = FieldFunction::stationary(m, slope, offset);
        (residual_sweep(&u, &structure, &grid, false)?, None, Some((slope, offset)))
    } else {
        let mut profile = build_profile(cfg)?;
        let lambda = match profile.lambda() {
            Some(l) if l.dim() == m => l.clone(),
            Some(l) => {
                return Err(Error::Config(format!(
                    "speed vector has {} components but m = {m}",
                    l.dim()
                )))
            }
            None => cfg.speed(m)?,
        };
        profile = profile.with_lambda(lambda.clone());
        let structure = synthesize_structure(profile.coeffs(), m, &lambda)?;
        let u = crate::closed_form::as_multitime(&profile)?;
        (residual_sweep(&u, &structure, &grid, true)?, Some(profile.record()), None)
    };
    let verified = !report.is_empty() && report.max_abs <= tol;
    w.csv("residuals.csv", |buf| report.write_csv(buf))?;
    w.json(
        "report.json",
        &VerifyRecord {
            profile: record_profile,
            stationary,
            m,
            tol,
            grid,
            points: report.len(),
            max_abs: report.max_abs,
            rms: report.rms,
            verified,
        },
    )?;
    w.say(&format!(
        "verify: {} points, max_abs {:e}, tol {:e}: {}",
        report.len(),
        report.max_abs,
        tol,
        if verified { "ok" } else { "FAILED" }
    ));
    Ok(if verified { Outcome::Verified } else { Outcome::Failed })
}

fn cmd_series(cfg: &RunConfig, w: &Writer) -> Result<Outcome> {
    let params = AffineParams::from_array(
        cfg.affine
            .ok_or_else(|| Error::Config("missing affine coefficients m,p,q,a,b,c".into()))?,
    );
    let s = series_coefficients(
        params,
        cfg.alpha0.unwrap_or(0.0),
        cfg.alpha1.ok_or_else(|| Error::Config("missing alpha1".into()))?,
        cfg.order.unwrap_or(40),
    )?;
    w.json("series.json", &s)?;
    w.csv("series.csv", |buf| s.write_csv(buf))?;
    w.say(&format!(
        "series: N = {}, radius estimate {}",
        s.order, s.radius_estimate
    ));
    Ok(Outcome::Verified)
}

#[derive(Serialize)]
struct ProlongRecord {
    epsilon: f64,
    m: usize,
    amplitude: f64,
    source: &'static str,
    tau_r: Option<f64>,
    bound: f64,
    points: usize,
    max_abs: f64,
    rms: f64,
    verified: bool,
}

fn cmd_prolong(cfg: &RunConfig, w: &Writer) -> Result<Outcome> {
    let epsilon = cfg.epsilon.unwrap_or(0.0);
    let m = cfg.m.unwrap_or(3);
    let amplitude = cfg.amplitude.unwrap_or(1.0);
    let t_end = cfg.t_end.unwrap_or(1.0);
    let structure = prolongation_structure(epsilon, m)?;
    let (field, tau_r, source) = if epsilon == 0.0 {
        (travelling_sine(amplitude), None, "exact")
    } else {
        let run = integrate_single_time_rayleigh(
            epsilon,
            |x| amplitude * x.sin(),
            |x| -amplitude * x.cos(),
            SingleTimeOptions {
                t_end,
                ..SingleTimeOptions::default()
            },
        )?;
        let tau = run.tau_r;
        (run.field(), Some(tau), "spectral")
    };
    let (xs, ts) = match &cfg.grid {
        Some(g) if g.axes.len() == 2 => (g.axes[0], g.axes[1]),
        Some(_) => return Err(Error::Config("prolong grid needs axes for x and t1".into())),
        None => (
            Axis::new(0.0, 2.0 * std::f64::consts::PI, 40),
            Axis::new(0.0, t_end, 26),
        ),
    };
    let points: Vec<(f64, f64)> = xs
        .values()
        .into_iter()
        .flat_map(|x| ts.values().into_iter().map(move |t| (x, t)))
        .collect();
    let report: ResidualReport = check_prolongation(&field, &structure, &points)?;
    let tol = cfg.tol.unwrap_or(1e-6);
    let bound = match tau_r {
        Some(t) => 10.0 * t,
        None => tol,
    };
    let verified = !report.is_empty() && report.max_abs <= bound && tau_r.is_none_or(|t| t <= 1e-4);
    w.csv("prolong_residuals.csv", |buf| report.write_csv(buf))?;
    w.json(
        "prolong.json",
        &ProlongRecord {
            epsilon,
            m,
            amplitude,
            source,
            tau_r,
            bound,
            points: report.len(),
            max_abs: report.max_abs,
            rms: report.rms,
            verified,
        },
    )?;
    w.say(&format!(
        "prolong: eps {epsilon}, m {m}, max_abs {:e}, bound {:e}: {}",
        report.max_abs,
        bound,
        if verified { "ok" } else { "FAILED" }
    ));
    Ok(if verified { Outcome::Verified } else { Outcome::Failed })
}

fn cmd_decay(cfg: &RunConfig, w: &Writer) -> Result<Outcome> {
    if let Some(stationary) = cfg.stationary {
        let report = perturbation_report(
            cfg.epsilon.unwrap_or(0.1),
            stationary,
            cfg.amplitude.unwrap_or(0.01),
            cfg.mode.unwrap_or(1),
            cfg.t_end.unwrap_or(5.0),
        )?;
        w.json_always("perturbation.json", &report)?;
        w.say(&format!(
            "perturbation: max H^1/2 ratio {:.6} (exploratory)",
            report.max_ratio
        ));
        return Ok(Outcome::Verified);
    }
    let mut profile = build_profile(cfg)?;
    let m = cfg
        .direction
        .as_ref()
        .map(Vec::len)
        .or(cfg.lambda.as_ref().map(Vec::len))
        .unwrap_or(2);
    if profile.lambda().is_none() {
        profile = profile.with_lambda(cfg.speed(m)?);
    }
    let direction = cfg.direction.clone().unwrap_or_else(|| vec![1.0; m]);
    let opts = DecayOptions {
        horizon: cfg.horizon.unwrap_or(1e3),
        ..DecayOptions::default()
    };
    let report = decay_check_profile(
        &profile,
        cfg.x.unwrap_or(0.0),
        &direction,
        cfg.threshold.unwrap_or(1e-3),
        opts,
    )?;
    w.json_always("decay.json", &report)?;
    w.say(&format!(
        "decay: ok {}, crossing radius {:?}, limit {:?}",
        report.ok, report.crossing_radius, report.limit_metadata
    ));
    Ok(if report.ok { Outcome::Verified } else { Outcome::Failed })
}

fn execute(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_globals(&cli);
    let quiet = cli.quiet;
    match cli.command {
        Command::Profile(c) => {
            cfg.apply_profile(c.profile)?;
            set(&mut cfg.zmin, c.zmin);
            set(&mut cfg.zmax, c.zmax);
            set(&mut cfg.n, c.n);
            run_checked(cfg, quiet, cmd_profile)
        }
        Command::Verify(c) => {
            cfg.apply_profile(c.profile)?;
            set(&mut cfg.m, c.m);
            let grid_flag = c.grid;
            run_checked(cfg, quiet, move |cfg, w| cmd_verify(cfg, grid_flag, w))
        }
        Command::Series(c) => {
            set(&mut cfg.affine, affine_flag(c.coeffs)?);
            set(&mut cfg.alpha0, c.alpha0);
            set(&mut cfg.alpha1, c.alpha1);
            set(&mut cfg.order, c.order);
            run_checked(cfg, quiet, cmd_series)
        }
        Command::Prolong(c) => {
            set(&mut cfg.epsilon, c.epsilon);
            set(&mut cfg.m, c.m);
            set(&mut cfg.amplitude, c.amplitude);
            set(&mut cfg.t_end, c.t_end);
            run_checked(cfg, quiet, cmd_prolong)
        }
        Command::Decay(c) => {
            cfg.apply_profile(c.profile)?;
            set(&mut cfg.x, c.x);
            set(&mut cfg.direction, c.direction);
            set(&mut cfg.threshold, c.threshold);
            set(&mut cfg.horizon, c.horizon);
            set(&mut cfg.amplitude, c.amplitude);
            set(&mut cfg.mode, c.mode);
            set(&mut cfg.epsilon, c.epsilon);
            set(&mut cfg.t_end, c.t_end);
            run_checked(cfg, quiet, cmd_decay)
        }
    }
}

fn run_checked(
    cfg: RunConfig,
    quiet: bool,
    f: impl FnOnce(&RunConfig, &Writer) -> Result<Outcome>,
) -> Result<Outcome> {
    cfg.validate()?;
    let w = Writer::new(&cfg, quiet)?;
    f(&cfg, &w)
}

/// Runs a parsed command line and returns the process exit code; errors
/// are reported as one line on stderr.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(Outcome::Verified) => EXIT_OK,
        Ok(Outcome::Failed) => EXIT_FAILED,
        Err(e) => {
            eprintln!("mrayleigh: {e}");
            exit_code_for(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs them; clap usage
/// errors map to exit code 2.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

//! Independent numerical cross-checks: an embedded Runge-Kutta integrator
//! for the reduced ODEs, the Bernoulli substitution chain, a pseudo-spectral
//! solver for the single-time Rayleigh wave equation, grid residual sweeps
//! and finite-horizon decay scans.

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::closed_form::{as_multitime, DerivativeMode, SolitonProfile};
use crate::coefficients::{GeometricStructure, ReducedCoeffs, Variant};
use crate::error::{Error, Result};
use crate::geometry::{
    first_step, pde_residual, FieldFunction, Jet, ResidualReport,
};
use crate::output::write_csv;

/// Magnitude beyond which an integration is classified as blowing up.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "MRAYLEIGH_THREADS";

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

type State = [f64; 2];

/// Right-hand side of the first-order system `(phi, psi = phi')`.
fn reduced_rhs(coeffs: &ReducedCoeffs, z: f64, y: State) -> Result<State> {
    let v = coeffs.eval(z)?;
    let (phi, psi) = (y[0], y[1]);
    let nonlinear = match coeffs.variant() {
        Variant::Rayleigh => v.coupling * psi * psi * psi,
        Variant::VanDerPol => v.coupling * phi * phi * psi,
    };
    Ok([psi, (nonlinear - v.c * psi) / v.a])
}

struct Step {
    y: State,
    f_end: State,
    err: State,
}

fn dopri_step<F>(rhs: &F, z: f64, y: State, f0: State, h: f64) -> Result<Step>
where
    F: Fn(f64, State) -> Result<State>,
{
    let mut k = [[0.0; 2]; 7];
    k[0] = f0;
    for s in 1..7 {
        let mut ys = y;
        for (j, kj) in k.iter().enumerate().take(s) {
            for i in 0..2 {
                ys[i] += h * A[s][j] * kj[i];
            }
        }
        k[s] = rhs(z + C[s] * h, ys)?;
    }
    let mut y5 = y;
    let mut err = [0.0; 2];
    for i in 0..2 {
        for j in 0..6 {
            y5[i] += h * A[6][j] * k[j][i];
        }
        for (j, kj) in k.iter().enumerate() {
            err[i] += h * E[j] * kj[i];
        }
    }
    Ok(Step {
        y: y5,
        f_end: k[6],
        err,
    })
}

fn hermite(h: f64, theta: f64, y0: f64, f0: f64, y1: f64, f1: f64) -> f64 {
    let t = theta;
    let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    let h10 = t * (1.0 - t) * (1.0 - t);
    let h01 = t * t * (3.0 - 2.0 * t);
    let h11 = t * t * (t - 1.0);
    h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
}

fn scaled_norm(v: State, a: State, b: State, tol: f64) -> f64 {
    (0..2)
        .map(|i| v[i].abs() / (tol + tol * a[i].abs().max(b[i].abs())))
        .fold(0.0, f64::max)
}

/// Adaptive integration from `(z0, y0)` to `z_end`; returns the accepted
/// nodes `(z, y, f(z, y))` in integration order, starting with `z0`.
fn integrate_direction<F>(
    rhs: &F,
    z0: f64,
    y0: State,
    z_end: f64,
    tol: f64,
) -> Result<Vec<(f64, State, State)>>
where
    F: Fn(f64, State) -> Result<State>,
{
    let mut out = vec![(z0, y0, rhs(z0, y0)?)];
    if z_end == z0 {
        return Ok(out);
    }
    let dir = (z_end - z0).signum();
    let span = (z_end - z0).abs();
    let mut h = dir * span.min(1e-2);
    let mut z = z0;
    let mut y = y0;
    let mut f = out[0].2;
    let start_scale = y0[0].abs().max(y0[1].abs());
    for _ in 0..2_000_000 {
        if (z_end - z) * dir <= 0.0 {
            return Ok(out);
        }
        let last = (z + h - z_end) * dir >= 0.0;
        if last {
            h = z_end - z;
        }
        let underflow = h.abs() < 1e-14 * z.abs().max(1.0);
        if underflow {
            let scale = y[0].abs().max(y[1].abs());
            let slope = f[0].abs().max(f[1].abs());
            return Err(if scale > 1e6 * (1.0 + start_scale) || slope > OVERFLOW_GUARD {
                Error::BlowUp { z }
            } else {
                Error::StiffnessFailure { z, step: h.abs() }
            });
        }
        let step = dopri_step(rhs, z, y, f, h);
        let (err_norm, step) = match step {
            Ok(s) if s.y.iter().chain(s.f_end.iter()).all(|v| v.is_finite()) => {
                (scaled_norm(s.err, y, s.y, tol), Some(s))
            }
            Ok(_) => (f64::INFINITY, None),
            Err(e @ Error::DegenerateA { .. }) => return Err(e),
            Err(_) => (f64::INFINITY, None),
        };
        let mut accept = err_norm <= 1.0;
        let mut factor = if err_norm == 0.0 {
            5.0
        } else {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        if let (true, Some(s)) = (accept, &step) {
            // the cubic Hermite interpolant must match a half step
            let half = dopri_step(rhs, z, y, f, 0.5 * h)?;
            let mid = [
                hermite(h, 0.5, y[0], f[0], s.y[0], s.f_end[0]),
                hermite(h, 0.5, y[1], f[1], s.y[1], s.f_end[1]),
            ];
            let dense = scaled_norm([mid[0] - half.y[0], mid[1] - half.y[1]], y, half.y, tol);
            if dense > 1.0 {
                accept = false;
                factor = (0.9 * dense.powf(-0.25)).clamp(0.2, 0.9);
            }
        }
        if accept {
            let s = step.expect("accepted step");
            z = if last { z_end } else { z + h };
            y = s.y;
            f = s.f_end;
            if y[0].abs() > OVERFLOW_GUARD || y[1].abs() > OVERFLOW_GUARD {
                return Err(Error::BlowUp { z });
            }
            out.push((z, y, f));
            h *= factor;
        } else {
            h *= factor.min(0.9);
        }
    }
    Err(Error::StiffnessFailure { z, step: h.abs() })
}

/// Numerical solution of a reduced ODE with cubic Hermite dense output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvpSolution {
    pub nodes: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub phi_prime_values: Vec<f64>,
    /// `phi''` at the nodes, from the ODE.
    pub phi_second_values: Vec<f64>,
    pub tolerance_used: f64,
}

impl IvpSolution {
    pub fn span(&self) -> (f64, f64) {
        (self.nodes[0], self.nodes[self.nodes.len() - 1])
    }

    /// `(phi, phi')` at `z`; stored values are returned exactly at nodes.
    pub fn eval(&self, z: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.span();
        if !(z >= lo && z <= hi) {
            return Err(Error::DomainExceeded { z, lo, hi });
        }
        let i = self.nodes.partition_point(|n| *n < z);
        if i < self.nodes.len() && self.nodes[i] == z {
            return Ok((self.phi_values[i], self.phi_prime_values[i]));
        }
        let (l, r) = (i - 1, i);
        let h = self.nodes[r] - self.nodes[l];
        let theta = (z - self.nodes[l]) / h;
        let phi = hermite(
            h,
            theta,
            self.phi_values[l],
            self.phi_prime_values[l],
            self.phi_values[r],
            self.phi_prime_values[r],
        );
        let psi = hermite(
            h,
            theta,
            self.phi_prime_values[l],
            self.phi_second_values[l],
            self.phi_prime_values[r],
            self.phi_second_values[r],
        );
        Ok((phi, psi))
    }

    /// Rows `[z, phi, phi_prime]` at the nodes.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        let rows: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .zip(&self.phi_values)
            .zip(&self.phi_prime_values)
            .map(|((z, p), d)| vec![*z, *p, *d])
            .collect();
        write_csv(w, &["z", "phi", "phi_prime"], &rows)
    }
}

/// Integrates the reduced ODE of `coeffs` (Rayleigh or Van der Pol, as the
/// coefficients say) from `phi(z0) = phi0`, `phi'(z0) = phi_prime0` across
/// `span`, in both directions from `z0`.
pub fn integrate_reduction(
    coeffs: &ReducedCoeffs,
    z0: f64,
    phi0: f64,
    phi_prime0: f64,
    span: (f64, f64),
    tol: f64,
) -> Result<IvpSolution> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(Error::BadParameters(format!(
            "tolerance {tol} outside [1e-12, 1e-4]"
        )));
    }
    let (lo, hi) = span;
    if !(lo.is_finite() && hi.is_finite() && lo <= z0 && z0 <= hi && lo < hi) {
        return Err(Error::BadParameters(format!(
            "span [{lo}, {hi}] must be finite and contain z0 = {z0}"
        )));
    }
    if !(phi0.is_finite() && phi_prime0.is_finite()) {
        return Err(Error::BadParameters("initial data must be finite".into()));
    }
    let rhs = |z: f64, y: State| reduced_rhs(coeffs, z, y);
    let y0 = [phi0, phi_prime0];
    let left = integrate_direction(&rhs, z0, y0, lo, tol)?;
    let right = integrate_direction(&rhs, z0, y0, hi, tol)?;
    let n = left.len() + right.len() - 1;
    let mut sol = IvpSolution {
        nodes: Vec::with_capacity(n),
        phi_values: Vec::with_capacity(n),
        phi_prime_values: Vec::with_capacity(n),
        phi_second_values: Vec::with_capacity(n),
        tolerance_used: tol,
    };
    for (z, y, f) in left.iter().rev().chain(right.iter().skip(1)) {
        sol.nodes.push(*z);
        sol.phi_values.push(y[0]);
        sol.phi_prime_values.push(y[1]);
        sol.phi_second_values.push(f[1]);
    }
    Ok(sol)
}

/// Fixed-step integration with the fifth-order solution of the same pair;
/// returns `(phi, phi')` at `z_end`.
pub fn integrate_fixed_step(
    coeffs: &ReducedCoeffs,
    z0: f64,
    phi0: f64,
    phi_prime0: f64,
    z_end: f64,
    steps: usize,
) -> Result<(f64, f64)> {
    let rhs = |z: f64, y: State| reduced_rhs(coeffs, z, y);
    let steps = steps.max(1);
    let h = (z_end - z0) / steps as f64;
    let mut y = [phi0, phi_prime0];
    for i in 0..steps {
        let z = z0 + h * i as f64;
        let f = rhs(z, y)?;
        y = dopri_step(&rhs, z, y, f, h)?.y;
    }
    Ok((y[0], y[1]))
}

/// Checks the substitution chain at `samples`: `psi = phi'` solves
/// `psi' = -(c/a) psi + (b/a) psi^3` and `xi = psi^{-2}` solves
/// `xi' - 2 (c/a) xi = -2 b/a`, derivatives by central differences.
///
/// Samples with `phi' = 0` are skipped; if none remain the result is a
/// vacuous `true` with a warning. Van der Pol profiles and samples outside
/// the domain give `false`.
pub fn bernoulli_chain_check(profile: &SolitonProfile, samples: &[f64]) -> bool {
    let coeffs = profile.coeffs();
    if coeffs.variant() != Variant::Rayleigh {
        return false;
    }
    let mut used = 0;
    for &z in samples {
        let check = || -> Result<Option<bool>> {
            let psi = profile.phi_prime(z)?;
            if psi.abs() < 1e-12 {
                return Ok(None);
            }
            let v = coeffs.eval(z)?;
            let h = first_step(z);
            let psi_p = profile.phi_prime(z + h)?;
            let psi_m = profile.phi_prime(z - h)?;
            let dpsi = (psi_p - psi_m) / (2.0 * h);
            let q = v.c / v.a;
            let r = v.coupling / v.a;
            let lhs1 = dpsi;
            let rhs1 = -q * psi + r * psi.powi(3);
            let scale1 = 1.0_f64.max(lhs1.abs()).max(rhs1.abs());
            let xi = psi.powi(-2);
            let dxi = (psi_p.powi(-2) - psi_m.powi(-2)) / (2.0 * h);
            let res2 = dxi - 2.0 * q * xi + 2.0 * r;
            let scale2 = 1.0_f64.max(dxi.abs()).max((2.0 * q * xi).abs());
            Ok(Some(
                (lhs1 - rhs1).abs() <= 1e-6 * scale1 && res2.abs() <= 1e-6 * scale2,
            ))
        };
        match check() {
            Ok(None) => {}
            Ok(Some(true)) => used += 1,
            _ => return false,
        }
    }
    if used == 0 {
        warn!("bernoulli chain check: phi' vanishes at every sample, result is vacuous");
    }
    true
}

/// Reduced-ODE residuals of a profile at `n` evenly spaced points of `[lo, hi]`.
pub fn profile_residual_report(
    profile: &SolitonProfile,
    lo: f64,
    hi: f64,
    n: usize,
    mode: DerivativeMode,
) -> Result<ResidualReport> {
    let n = n.max(2);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
        .collect();
    let residuals = points
        .iter()
        .map(|p| profile.ode_residual(p[0], mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport::new(points, residuals))
}

/// One axis of a lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// Lattice over `(x, t1, ..., tm)`; `x` varies slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    /// Same axis for `x` and every time.
    pub fn cube(m: usize, min: f64, max: f64, count: usize) -> Self {
        Self {
            axes: vec![Axis::new(min, max, count); m + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        let mut out = vec![Vec::new()];
        for vals in &values {
            let mut next = Vec::with_capacity(out.len() * vals.len());
            for p in &out {
                for v in vals {
                    let mut q = p.clone();
                    q.push(*v);
                    next.push(q);
                }
            }
            out = next;
        }
        if values.is_empty() {
            Vec::new()
        } else {
            out
        }
    }
}

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
}

fn in_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match thread_cap().and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// PDE residuals of `u` over the grid, in parallel. With `clip`, points
/// where `u` is undefined (domain errors) are dropped instead of failing.
pub fn residual_sweep(
    u: &FieldFunction,
    structure: &GeometricStructure,
    grid: &GridSpec,
    clip: bool,
) -> Result<ResidualReport> {
    if grid.axes.len() != structure.dim() + 1 {
        return Err(Error::DimensionMismatch {
            what: "grid axes",
            expected: structure.dim() + 1,
            found: grid.axes.len(),
        });
    }
    let points = grid.points();
    let results: Vec<Result<Option<f64>>> = in_pool(|| {
        points
            .par_iter()
            .map(|p| match pde_residual(u, structure, p[0], &p[1..]) {
                Ok(r) => Ok(Some(r)),
                Err(Error::DomainExceeded { .. }) if clip => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    });
    let mut kept = Vec::with_capacity(points.len());
    let mut residuals = Vec::with_capacity(points.len());
    for (p, r) in points.into_iter().zip(results) {
        if let Some(r) = r? {
            kept.push(p);
            residuals.push(r);
        }
    }
    Ok(ResidualReport::new(kept, residuals))
}

/// Lifts a profile and sweeps it; convenience for the common acceptance run.
pub fn profile_sweep(
    profile: &SolitonProfile,
    structure: &GeometricStructure,
    grid: &GridSpec,
) -> Result<ResidualReport> {
    let u = as_multitime(profile)?;
    residual_sweep(&u, structure, grid, true)
}

/// Options of the single-time solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingleTimeOptions {
    /// Grid points on `[0, 2 pi)`.
    pub n: usize,
    pub t_end: f64,
    /// `dt * kmax`; RK4 on the spectral Laplacian is stable below about 2.8.
    pub cfl: f64,
}

impl Default for SingleTimeOptions {
    fn default() -> Self {
        Self {
            n: 512,
            t_end: 1.0,
            cfl: 0.5,
        }
    }
}

/// Largest admitted CFL number.
pub const CFL_LIMIT: f64 = 2.5;

/// Stored run of `u_tt - u_xx = eps (u_t - u_t^3)` on a periodic line.
#[derive(Clone, Debug)]
pub struct SingleTimeSolution {
    pub epsilon: f64,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Half spectra (modes `0..n/2`, Nyquist dropped) of `u` and `u_t`
    /// at every step, already divided by `n`.
    u_hat: Vec<Vec<Complex64>>,
    v_hat: Vec<Vec<Complex64>>,
    /// Estimated PDE residual level of the run.
    pub tau_r: f64,
}

fn spectral_laplacian(u: &[f64], fft: &Fft) -> Vec<f64> {
    let n = u.len();
    let mut buf: Vec<Complex64> = u.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft.forward.process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        *c *= -k * k;
    }
    fft.inverse.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

struct Fft {
    forward: Arc<dyn rustfft::Fft<f64>>,
    inverse: Arc<dyn rustfft::Fft<f64>>,
}

impl Fft {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn half_spectrum(&self, u: &[f64]) -> Vec<Complex64> {
        let n = u.len();
        let mut buf: Vec<Complex64> = u.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf.truncate(n / 2);
        buf.iter().map(|c| c / n as f64).collect()
    }
}

struct RawRun {
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    dt: f64,
}

fn run_rk4(
    epsilon: f64,
    u0: &[f64],
    v0: &[f64],
    t_end: f64,
    steps: usize,
    fft: &Fft,
) -> RawRun {
    let dt = t_end / steps as f64;
    let rhs = |u: &[f64], v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let lap = spectral_laplacian(u, fft);
        let dv = lap
            .iter()
            .zip(v)
            .map(|(l, w)| l + epsilon * (w - w * w * w))
            .collect();
        (v.to_vec(), dv)
    };
    let axpy = |x: &[f64], a: f64, y: &[f64]| -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| p + a * q).collect()
    };
    let mut us = vec![u0.to_vec()];
    let mut vs = vec![v0.to_vec()];
    let (mut u, mut v) = (u0.to_vec(), v0.to_vec());
    for _ in 0..steps {
        let (k1u, k1v) = rhs(&u, &v);
        let (k2u, k2v) = rhs(&axpy(&u, 0.5 * dt, &k1u), &axpy(&v, 0.5 * dt, &k1v));
        let (k3u, k3v) = rhs(&axpy(&u, 0.5 * dt, &k2u), &axpy(&v, 0.5 * dt, &k2v));
        let (k4u, k4v) = rhs(&axpy(&u, dt, &k3u), &axpy(&v, dt, &k3v));
        for i in 0..u.len() {
            u[i] += dt / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
            v[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        us.push(u.clone());
        vs.push(v.clone());
    }
    RawRun { u: us, v: vs, dt }
}

/// Integrates `u_tt - u_xx = eps (u_t - u_t^3)` on `[0, 2 pi)` (periodic)
/// from `u(x, 0) = u0(x)`, `u_t(x, 0) = v0(x)`: Fourier in `x`, classical
/// RK4 in `t`.
///
/// `tau_r` is the larger of the sampled PDE residual of the stored run and
/// the change in `u(., t_end)` when the time step is halved.
pub fn integrate_single_time_rayleigh(
    epsilon: f64,
    u0: impl Fn(f64) -> f64,
    v0: impl Fn(f64) -> f64,
    opts: SingleTimeOptions,
) -> Result<SingleTimeSolution> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::BadParameters(format!("epsilon = {epsilon} must be >= 0")));
    }
    if opts.n < 8 || opts.n % 2 != 0 {
        return Err(Error::BadParameters(format!(
            "grid size {} must be even and at least 8",
            opts.n
        )));
    }
    if !(opts.t_end > 0.0 && opts.t_end.is_finite() && opts.cfl > 0.0) {
        return Err(Error::BadParameters("t_end and cfl must be positive".into()));
    }
    let kmax = (opts.n / 2) as f64;
    let steps = (opts.t_end * kmax / opts.cfl).ceil().max(1.0) as usize;
    let dt = opts.t_end / steps as f64;
    let cfl = dt * kmax;
    if cfl > CFL_LIMIT {
        return Err(Error::CflViolation {
            cfl,
            limit: CFL_LIMIT,
        });
    }
    let n = opts.n;
    let xs: Vec<f64> = (0..n)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / n as f64)
        .collect();
    let u_init: Vec<f64> = xs.iter().map(|x| u0(*x)).collect();
    let v_init: Vec<f64> = xs.iter().map(|x| v0(*x)).collect();
    if !u_init.iter().chain(&v_init).all(|v| v.is_finite()) {
        return Err(Error::BadParameters("initial data must be finite".into()));
    }
    let fft = Fft::new(n);
    let run = run_rk4(epsilon, &u_init, &v_init, opts.t_end, steps, &fft);
    let fine = run_rk4(epsilon, &u_init, &v_init, opts.t_end, 2 * steps, &fft);
    let drift = run.u[steps]
        .iter()
        .zip(&fine.u[2 * steps])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut sol = SingleTimeSolution {
        epsilon,
        n,
        dt: run.dt,
        t_end: opts.t_end,
        u_hat: run.u.iter().map(|u| fft.half_spectrum(u)).collect(),
        v_hat: run.v.iter().map(|v| fft.half_spectrum(v)).collect(),
        tau_r: 0.0,
    };
    let mut sampled = 0.0_f64;
    for i in 0..16 {
        let x = 2.0 * std::f64::consts::PI * (i as f64 + 0.37) / 16.0;
        for j in 0..=8 {
            let t = opts.t_end * j as f64 / 8.0;
            let jet = sol.jet(x, t)?;
            let u_t = jet.grad[0];
            let r = jet.hess[0] - jet.u_xx - epsilon * (u_t - u_t * u_t * u_t);
            sampled = sampled.max(r.abs());
        }
    }
    sol.tau_r = sampled.max(drift);
    Ok(sol)
}

/// `(f, f', f'')` of a real trigonometric polynomial from its half spectrum.
fn fourier_eval(hat: &[Complex64], x: f64) -> (f64, f64, f64) {
    let mut f = hat[0].re;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let step = Complex64::new(x.cos(), x.sin());
    let mut e = step;
    for (k, c) in hat.iter().enumerate().skip(1) {
        if k % 64 == 0 {
            e = Complex64::new((k as f64 * x).cos(), (k as f64 * x).sin());
        }
        let term = c * e;
        let kf = k as f64;
        f += 2.0 * term.re;
        d1 += -2.0 * kf * term.im;
        d2 += -2.0 * kf * kf * term.re;
        e *= step;
    }
    (f, d1, d2)
}

/// Weights of the Lagrange interpolant and its derivative through
/// `nodes` at `t`.
fn lagrange_weights(nodes: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    let mut dw = vec![0.0; n];
    for j in 0..n {
        let mut denom = 1.0;
        for k in 0..n {
            if k != j {
                denom *= nodes[j] - nodes[k];
            }
        }
        let mut prod = 1.0;
        for k in 0..n {
            if k != j {
                prod *= t - nodes[k];
            }
        }
        w[j] = prod / denom;
        let mut sum = 0.0;
        for l in 0..n {
            if l == j {
                continue;
            }
            let mut p = 1.0;
            for k in 0..n {
                if k != j && k != l {
                    p *= t - nodes[k];
                }
            }
            sum += p;
        }
        dw[j] = sum / denom;
    }
    (w, dw)
}

impl SingleTimeSolution {
    fn window(&self, t: f64) -> Result<(usize, Vec<f64>, Vec<f64>)> {
        if !(t >= 0.0 && t <= self.t_end) {
            return Err(Error::DomainExceeded {
                z: t,
                lo: 0.0,
                hi: self.t_end,
            });
        }
        let last = self.u_hat.len() - 1;
        let width = 6.min(last + 1);
        let centre = (t / self.dt).round() as usize;
        let start = centre.saturating_sub(width / 2).min(last + 1 - width);
        let nodes: Vec<f64> = (start..start + width).map(|i| i as f64 * self.dt).collect();
        let (w, dw) = lagrange_weights(&nodes, t);
        Ok((start, w, dw))
    }

    /// `u(x, t)`.
    pub fn value(&self, x: f64, t: f64) -> Result<f64> {
        let (start, w, _) = self.window(t)?;
        Ok(w.iter()
            .enumerate()
            .map(|(i, wi)| wi * fourier_eval(&self.u_hat[start + i], x).0)
            .sum())
    }

    /// Jet with `grad = [u_t]`, `hess = [u_tt]`; `u_tt` is the time
    /// derivative of the interpolated `u_t`.
    pub fn jet(&self, x: f64, t: f64) -> Result<Jet> {
        let (start, w, dw) = self.window(t)?;
        let (mut u, mut ux, mut uxx, mut ut, mut utt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..w.len() {
            let (f, f1, f2) = fourier_eval(&self.u_hat[start + i], x);
            let g = fourier_eval(&self.v_hat[start + i], x).0;
            u += w[i] * f;
            ux += w[i] * f1;
            uxx += w[i] * f2;
            ut += w[i] * g;
            utt += dw[i] * g;
        }
        Ok(Jet {
            value: u,
            u_x: ux,
            u_xx: uxx,
            grad: vec![ut],
            hess: vec![utt],
        })
    }

    /// The run as a one-time field on `[0, t_end]`.
    pub fn field(&self) -> FieldFunction {
        let a = Arc::new(self.clone());
        let b = a.clone();
        FieldFunction::from_fallible(1, move |x, t| a.value(x, t[0]))
            .with_jet(move |x, t| b.jet(x, t[0]))
    }

    /// `sum_k (1 + |k|) |u_k|^2` at step `i` (square of an `H^{1/2}` norm).
    fn h_half_sq(&self, i: usize) -> f64 {
        self.u_hat[i]
            .iter()
            .enumerate()
            .map(|(k, c)| (if k == 0 { 1.0 } else { 2.0 }) * (1.0 + k as f64) * c.norm_sqr())
            .sum()
    }

    pub fn steps(&self) -> usize {
        self.u_hat.len() - 1
    }
}

/// Exploratory record of how a periodic perturbation `w` of a stationary
/// solution evolves; `w` obeys the same equation since `u = a x + b` has
/// `u_t = u_xx = 0`. Not a pass/fail check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub epsilon: f64,
    pub stationary: (f64, f64),
    pub amplitude: f64,
    pub mode: usize,
    /// `(t, ||w(t)|| / ||w(0)||)` in the `H^{1/2}` norm.
    pub ratios: Vec<(f64, f64)>,
    pub max_ratio: f64,
}

pub fn perturbation_report(
    epsilon: f64,
    stationary: (f64, f64),
    amplitude: f64,
    mode: usize,
    t_end: f64,
) -> Result<PerturbationReport> {
    if mode == 0 || amplitude == 0.0 || !amplitude.is_finite() {
        return Err(Error::BadParameters(
            "perturbation needs a nonzero amplitude and mode >= 1".into(),
        ));
    }
    let k = mode as f64;
    let opts = SingleTimeOptions {
        n: 128.max(8 * mode.next_power_of_two()),
        t_end,
        cfl: 0.5,
    };
    let run = integrate_single_time_rayleigh(epsilon, |x| amplitude * (k * x).sin(), |_| 0.0, opts)?;
    let base = run.h_half_sq(0).sqrt();
    let stride = (run.steps() / 50).max(1);
    let ratios: Vec<(f64, f64)> = (0..=run.steps())
        .step_by(stride)
        .map(|i| (i as f64 * run.dt, run.h_half_sq(i).sqrt() / base))
        .collect();
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(PerturbationReport {
        epsilon,
        stationary,
        amplitude,
        mode,
        ratios,
        max_ratio,
    })
}

/// Options of [`decay_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayOptions {
    pub horizon: f64,
    pub samples: usize,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            horizon: 1e3,
            samples: 10_001,
        }
    }
}

/// Outcome of a decay scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub direction: Vec<f64>,
    pub threshold: f64,
    pub ok: bool,
    /// Smallest sampled `s` beyond which `|u| < threshold` up to the horizon.
    pub crossing_radius: Option<f64>,
    pub horizon: f64,
    /// The profile's limit along the ray, when known.
    pub limit_metadata: Option<f64>,
}

/// Scans `u(x_fixed, s * direction)` for `s` in `[0, horizon]`.
pub fn decay_check(
    u: &FieldFunction,
    x_fixed: f64,
    direction: &[f64],
    threshold: f64,
    opts: DecayOptions,
) -> Result<DecayReport> {
    if direction.len() != u.dim() {
        return Err(Error::DimensionMismatch {
            what: "ray direction",
            expected: u.dim(),
            found: direction.len(),
        });
    }
    if !direction.iter().all(|d| *d > 0.0 && d.is_finite()) {
        return Err(Error::BadParameters(
            "ray direction must lie in the open positive orthant".into(),
        ));
    }
    if !(threshold > 0.0 && opts.horizon > 0.0) {
        return Err(Error::BadParameters("threshold and horizon must be positive".into()));
    }
    let n = opts.samples.max(2);
    let mut crossing: Option<f64> = None;
    let mut t = vec![0.0; direction.len()];
    for i in 0..n {
        let s = opts.horizon * i as f64 / (n - 1) as f64;
        for (ti, d) in t.iter_mut().zip(direction) {
            *ti = s * d;
        }
        let v = u.value(x_fixed, &t)?;
        if v.abs() < threshold {
            crossing.get_or_insert(s);
        } else {
            crossing = None;
        }
    }
    Ok(DecayReport {
        direction: direction.to_vec(),
        threshold,
        ok: crossing.is_some(),
        crossing_radius: crossing,
        horizon: opts.horizon,
        limit_metadata: None,
    })
}

/// [`decay_check`] on a lifted profile, attaching the profile's limit in
/// the `z` direction the ray induces.
pub fn decay_check_profile(
    profile: &SolitonProfile,
    x_fixed: f64,
    direction: &[f64],
    threshold: f64,
    opts: DecayOptions,
) -> Result<DecayReport> {
    let lambda = profile.lambda().ok_or(Error::MissingSpeed)?;
    let u = as_multitime(profile)?;
    let mut report = decay_check(&u, x_fixed, direction, threshold, opts)?;
    let rate = lambda.dot(direction);
    let limits = profile.limits();
    report.limit_metadata = if rate > 0.0 {
        limits.minus_infinity
    } else if rate < 0.0 {
        limits.plus_infinity
    } else {
        profile.phi(x_fixed).ok()
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{soliton_arcsinh, soliton_quadrature, vdp_explicit, Sign};
    use crate::coefficients::{synthesize_structure, SpeedVector};

    #[test]
    fn linear_case_matches_exponential() {
        let coeffs = ReducedCoeffs::constant_rayleigh(1.0, 0.0, 1.0);
        let tol = 1e-9;
        let sol = integrate_reduction(&coeffs, 0.0, 0.0, 1.0, (-2.0, 4.0), tol).unwrap();
        for i in 0..=60 {
            let z = -2.0 + 0.1 * i as f64;
            let (p, d) = sol.eval(z).unwrap();
            assert!((p - (1.0 - (-z).exp())).abs() < 10.0 * tol * 10.0, "z = {z}");
            assert!((d - (-z).exp()).abs() < 10.0 * tol * 10.0);
        }
        assert!(sol.nodes.windows(2).all(|w| w[0] < w[1]));
        for (i, z) in sol.nodes.iter().enumerate() {
            assert_eq!(sol.eval(*z).unwrap().0, sol.phi_values[i]);
        }
    }

    #[test]
    fn vdp_tracks_explicit_profile() {
        let profile = vdp_explicit(1.0, 1.0, 3.0, 1.0).unwrap();
        let coeffs = ReducedCoeffs::constant_van_der_pol(1.0, 1.0, 3.0);
        let (p0, d0, _) = profile.derivatives(0.0).unwrap();
        let sol = integrate_reduction(&coeffs, 0.0, p0, d0, (-5.0, 5.0), 1e-10).unwrap();
        for i in 0..=100 {
            let z = -5.0 + 0.1 * i as f64;
            assert!((sol.eval(z).unwrap().0 - profile.phi(z).unwrap()).abs() < 1e-7);
        }
    }

    #[test]
    fn equilibrium_stays_constant() {
        let coeffs = ReducedCoeffs::constant_rayleigh(1.0, 2.0, 3.0);
        let sol = integrate_reduction(&coeffs, 0.0, 1.7, 0.0, (-1.0, 1.0), 1e-8).unwrap();
        assert!(sol.phi_values.iter().all(|p| *p == 1.7));
    }

    #[test]
    fn cubic_case_blows_up() {
        let coeffs = ReducedCoeffs::constant_rayleigh(1.0, 1.0, 0.0);
        let r = integrate_reduction(&coeffs, 0.0, 0.0, 1.0, (0.0, 1.0), 1e-8);
        assert!(matches!(r, Err(Error::BlowUp { .. })), "{r:?}");
    }

    #[test]
    fn fixed_step_order() {
        let coeffs = ReducedCoeffs::constant_rayleigh(1.0, 0.0, 1.0);
        let exact = 1.0 - (-2.0_f64).exp();
        let e1 = (integrate_fixed_step(&coeffs, 0.0, 0.0, 1.0, 2.0, 10).unwrap().0 - exact).abs();
        let e2 = (integrate_fixed_step(&coeffs, 0.0, 0.0, 1.0, 2.0, 20).unwrap().0 - exact).abs();
        assert!(e1 / e2 >= 4.0);
    }

    #[test]
    fn bad_tolerance() {
        let coeffs = ReducedCoeffs::constant_rayleigh(1.0, 0.0, 1.0);
        assert!(integrate_reduction(&coeffs, 0.0, 0.0, 1.0, (0.0, 1.0), 1e-2).is_err());
    }

    #[test]
    fn bernoulli_chain_cases() {
        let quad = soliton_quadrature(&ReducedCoeffs::constant_rayleigh(1.0, 0.0, 1.0), 1.0, 0.0, (-2.0, 2.0)).unwrap();
        let zs: Vec<f64> = (0..20).map(|i| -1.5 + 0.15 * i as f64).collect();
        assert!(bernoulli_chain_check(&quad, &zs));
        let flat = vdp_explicit(1.0, 1.0, 3.0, 0.0).unwrap();
        assert!(!bernoulli_chain_check(&flat, &zs));
    }

    #[test]
    fn single_time_dalembert() {
        let sol = integrate_single_time_rayleigh(0.0, f64::sin, |x| -x.cos(), SingleTimeOptions::default()).unwrap();
        for i in 0..10 {
            let x = 0.6 * i as f64;
            assert!((sol.value(x, 1.0).unwrap() - (x - 1.0).sin()).abs() < 1e-5);
        }
        assert!(sol.tau_r < 1e-6);
    }

    #[test]
    fn single_time_equilibrium_and_cfl() {
        let opts = SingleTimeOptions {
            n: 64,
            t_end: 0.5,
            cfl: 0.5,
        };
        let sol = integrate_single_time_rayleigh(0.3, |_| 2.0, |_| 0.0, opts).unwrap();
        assert!((sol.value(1.0, 0.5).unwrap() - 2.0).abs() < 1e-14);
        let bad = SingleTimeOptions { cfl: 3.0, ..opts };
        assert!(matches!(
            integrate_single_time_rayleigh(0.0, |_| 0.0, |_| 0.0, bad),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn single_time_damped_residual() {
        let sol = integrate_single_time_rayleigh(
            0.1,
            |x| 0.1 * x.sin(),
            |x| -0.1 * x.cos(),
            SingleTimeOptions::default(),
        )
        .unwrap();
        assert!(sol.tau_r <= 1e-4, "tau_r = {}", sol.tau_r);
    }

    #[test]
    fn grid_points_order() {
        let g = GridSpec::new(vec![Axis::new(0.0, 1.0, 2), Axis::new(5.0, 5.0, 1)]);
        assert_eq!(g.points(), vec![vec![0.0, 5.0], vec![1.0, 5.0]]);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn sweep_stationary_is_zero() {
        let lambda = SpeedVector::new(vec![1.0, 1.0]).unwrap();
        let s = synthesize_structure(&ReducedCoeffs::constant_rayleigh(1.0, 1.0, 1.0), 2, &lambda).unwrap();
        let u = FieldFunction::stationary(2, 0.4, -1.0);
        let r = residual_sweep(&u, &s, &GridSpec::cube(2, -1.0, 1.0, 5), false).unwrap();
        assert_eq!(r.max_abs, 0.0);
        assert_eq!(r.len(), 125);
    }

    #[test]
    fn decay_cases() {
        let p = soliton_arcsinh(1.0, -1.0, -1.0, 1.0, 0.0, Sign::Plus)
            .unwrap()
            .with_lambda(SpeedVector::new(vec![1.0, 1.0]).unwrap());
        let r = decay_check_profile(&p, 0.0, &[1.0, 1.0], 1e-3, DecayOptions::default()).unwrap();
        assert!(r.ok);
        assert!(r.crossing_radius.unwrap() < 10.0);
        assert_eq!(r.limit_metadata, Some(0.0));

        let v = vdp_explicit(1.0, 1.0, 3.0, 1.0)
            .unwrap()
            .with_lambda(SpeedVector::new(vec![1.0, 1.0]).unwrap());
        let r = decay_check_profile(&v, 0.0, &[1.0, 1.0], 1e-3, DecayOptions::default()).unwrap();
        assert!(!r.ok);
        assert_eq!(r.limit_metadata, Some(1.0));

        let zero = FieldFunction::stationary(2, 0.0, 0.0);
        let r = decay_check(&zero, 0.0, &[1.0, 2.0], 1e-3, DecayOptions::default()).unwrap();
        assert!(r.ok);
        assert_eq!(r.crossing_radius, Some(0.0));
        assert!(decay_check(&zero, 0.0, &[1.0, -1.0], 1e-3, DecayOptions::default()).is_err());
    }

    #[test]
    fn perturbation_report_runs() {
        let r = perturbation_report(0.1, (1.0, 0.0), 0.01, 2, 1.0).unwrap();
        assert!(r.max_ratio.is_finite() && r.max_ratio >= 1.0 - 1e-12);
        assert_eq!(r.ratios[0].1, 1.0);
    }
}

//! Piecewise Chebyshev approximants with exact antiderivatives.
//!
//! Used as the adaptive quadrature engine for the variable-coefficient
//! families: each nested integral is fitted once on an adaptively split
//! panel grid and then integrated term by term, so every later evaluation
//! is a smooth polynomial (finite differences of it stay clean).

use crate::error::{Error, Result};

const DEGREE: usize = 32;
const MAX_DEPTH: usize = 30;

#[derive(Clone, Debug)]
struct Panel {
    lo: f64,
    hi: f64,
    /// f(x) = sum_j coeffs[j] T_j(s), s mapped from [lo, hi] to [-1, 1].
    coeffs: Vec<f64>,
    /// Largest sampled |f|.
    vmax: f64,
    /// Largest sampled noise estimate.
    noise: f64,
}

impl Panel {
    fn map(&self, z: f64) -> f64 {
        (2.0 * z - self.lo - self.hi) / (self.hi - self.lo)
    }

    fn eval(&self, z: f64) -> f64 {
        clenshaw(&self.coeffs, self.map(z).clamp(-1.0, 1.0))
    }

    /// Antiderivative on this panel, zero at `lo`.
    fn integrate(&self) -> Panel {
        let n = self.coeffs.len();
        let a = |j: usize| if j < n { self.coeffs[j] } else { 0.0 };
        let half = 0.5 * (self.hi - self.lo);
        let mut out = vec![0.0; n + 1];
        for (j, slot) in out.iter_mut().enumerate().skip(1) {
            let prev = if j == 1 { 2.0 * a(0) } else { a(j - 1) };
            *slot = half * (prev - a(j + 1)) / (2.0 * j as f64);
        }
        let mut at_lo = 0.0;
        for (j, c) in out.iter().enumerate().skip(1) {
            at_lo += if j % 2 == 0 { *c } else { -*c };
        }
        out[0] = -at_lo;
        Panel {
            lo: self.lo,
            hi: self.hi,
            coeffs: out,
            vmax: 0.0,
            noise: 0.0,
        }
    }
}

fn clenshaw(coeffs: &[f64], s: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * s * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    s * b1 - b2 + coeffs[0]
}

fn fit_panel<F: Fn(f64) -> (f64, f64)>(f: &F, lo: f64, hi: f64) -> Result<Panel> {
    let n = DEGREE;
    let mut values = Vec::with_capacity(n);
    let mut noise = 0.0_f64;
    for k in 0..n {
        let theta = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
        let z = 0.5 * (lo + hi) + 0.5 * (hi - lo) * theta.cos();
        let (v, dv) = f(z);
        noise = noise.max(dv.abs());
        if !v.is_finite() {
            return Err(Error::BadParameters(format!(
                "integrand is not finite at z = {z}"
            )));
        }
        values.push(v);
    }
    let mut coeffs = vec![0.0; n];
    for (j, c) in coeffs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, v) in values.iter().enumerate() {
            let theta = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
            acc += v * (j as f64 * theta).cos();
        }
        *c = 2.0 * acc / n as f64;
    }
    coeffs[0] *= 0.5;
    let vmax = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(Panel {
        lo,
        hi,
        coeffs,
        vmax,
        noise,
    })
}

fn converged(panel: &Panel, tol: f64) -> bool {
    let scale = panel
        .coeffs
        .iter()
        .fold(0.0_f64, |m, c| m.max(c.abs()))
        .max(1e-300);
    let n = panel.coeffs.len();
    let tail = panel.coeffs[n - 3..]
        .iter()
        .fold(0.0_f64, |m, c| m.max(c.abs()));
    // floor at the rounding level of the discrete transform
    tail <= tol * scale + 64.0 * f64::EPSILON * panel.vmax + panel.noise
}

/// A continuous piecewise-polynomial approximation on `[lo, hi]`.
#[derive(Clone, Debug)]
pub(crate) struct Piecewise {
    panels: Vec<Panel>,
    /// Additive offset of each panel (used by antiderivatives).
    offsets: Vec<f64>,
}

impl Piecewise {
    /// Adaptively fits `f` on `[lo, hi]`, bisecting panels whose Chebyshev
    /// tail exceeds `tol` relative to the panel's leading coefficients.
    pub fn fit<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<Self> {
        Self::fit_noisy(|z| (f(z), 0.0), lo, hi, tol)
    }

    /// As [`Piecewise::fit`], with `f` returning `(value, noise)`; panels
    /// whose tail is below the sampled noise are accepted.
    pub fn fit_noisy<F: Fn(f64) -> (f64, f64)>(f: F, lo: f64, hi: f64, tol: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadParameters(format!(
                "approximation interval [{lo}, {hi}] must be finite and nonempty"
            )));
        }
        let mut panels = Vec::new();
        let mut stack = vec![(lo, hi, 0usize)];
        while let Some((a, b, depth)) = stack.pop() {
            let panel = fit_panel(&f, a, b)?;
            if converged(&panel, tol) || depth >= MAX_DEPTH {
                panels.push(panel);
            } else {
                let mid = 0.5 * (a + b);
                // right pushed first so panels come out left to right
                stack.push((mid, b, depth + 1));
                stack.push((a, mid, depth + 1));
            }
        }
        let offsets = vec![0.0; panels.len()];
        Ok(Self { panels, offsets })
    }

    fn locate(&self, z: f64) -> usize {
        let idx = self.panels.partition_point(|p| p.hi < z);
        idx.min(self.panels.len() - 1)
    }

    pub fn eval(&self, z: f64) -> f64 {
        let i = self.locate(z);
        self.offsets[i] + self.panels[i].eval(z)
    }

    /// Antiderivative that vanishes at `anchor`.
    pub fn antiderivative(&self, anchor: f64) -> Self {
        let panels: Vec<Panel> = self
            .panels
            .iter()
            .zip(&self.offsets)
            .map(|(p, off)| {
                let mut p = p.clone();
                p.coeffs[0] += off;
                p.integrate()
            })
            .collect();
        let mut offsets = Vec::with_capacity(panels.len());
        let mut running = 0.0;
        for p in &panels {
            offsets.push(running);
            running += p.eval(p.hi);
        }
        let mut out = Self { panels, offsets };
        let at_anchor = out.eval(anchor);
        for o in &mut out.offsets {
            *o -= at_anchor;
        }
        out
    }

    #[cfg(test)]
    pub fn panel_count(&self) -> usize {
        self.panels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_smooth_function() {
        let p = Piecewise::fit(|z: f64| z.sin() * (-0.3 * z).exp(), -4.0, 6.0, 1e-15).unwrap();
        for i in 0..=200 {
            let z = -4.0 + 10.0 * i as f64 / 200.0;
            let exact = z.sin() * (-0.3 * z).exp();
            assert!((p.eval(z) - exact).abs() < 1e-13, "z = {z}");
        }
    }

    #[test]
    fn antiderivative_of_exponential() {
        let p = Piecewise::fit(|z: f64| (-z).exp(), -2.0, 5.0, 1e-15).unwrap();
        let int = p.antiderivative(0.0);
        for i in 0..=100 {
            let z = -2.0 + 7.0 * i as f64 / 100.0;
            let exact = 1.0 - (-z).exp();
            assert!((int.eval(z) - exact).abs() < 1e-13, "z = {z}");
        }
    }

    #[test]
    fn nested_antiderivative_is_continuous_across_panels() {
        // forces splitting with a sharp feature
        let p = Piecewise::fit(|z: f64| 1.0 / (1.0 + 100.0 * z * z), -3.0, 3.0, 1e-14).unwrap();
        assert!(p.panel_count() > 1);
        let once = p.antiderivative(-3.0);
        let twice = once.antiderivative(0.0);
        for i in 0..=300 {
            let z = -3.0 + 6.0 * i as f64 / 300.0;
            let exact_once = ((10.0 * z).atan() - (-30.0_f64).atan()) / 10.0;
            assert!((once.eval(z) - exact_once).abs() < 1e-12);
        }
        // second antiderivative derivative equals first, checked by FD
        let h = 1e-5;
        for &z in &[-2.0, -0.5, 0.3, 2.2] {
            let fd = (twice.eval(z + h) - twice.eval(z - h)) / (2.0 * h);
            assert!((fd - once.eval(z)).abs() < 1e-8);
        }
        assert!(twice.eval(0.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonfinite_integrand() {
        assert!(Piecewise::fit(|_z: f64| f64::NAN, 0.0, 1.0, 1e-14).is_err());
    }
}

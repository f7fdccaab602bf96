//! Connection-corrected Hessian, the box operator it traces to, and
//! pointwise residuals of the multitime Rayleigh and Van der Pol PDEs.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    check_constraint, GeometricStructure, JetPoint, SamplePoint, Variant, TAU_C,
};
use crate::error::{Error, Result};
use crate::output::fmt_f64;

/// Value and derivatives of a field at one point. `hess` is row-major `m x m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub u_x: f64,
    pub u_xx: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

type ValueFn = dyn Fn(f64, &[f64]) -> Result<f64> + Send + Sync;
type JetFn = dyn Fn(f64, &[f64]) -> Result<Jet> + Send + Sync;

/// A scalar field `u(x, t)` over one space and `m` time variables.
///
/// When no analytic jet is supplied, derivatives come from central
/// differences. Callables must be reentrant.
#[derive(Clone)]
pub struct FieldFunction {
    m: usize,
    value: Arc<ValueFn>,
    jet: Option<Arc<JetFn>>,
}

impl fmt::Debug for FieldFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldFunction")
            .field("m", &self.m)
            .field("analytic", &self.jet.is_some())
            .finish()
    }
}

/// Step for first derivatives along an axis at coordinate `v`.
pub fn first_step(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

/// Step for second derivatives; larger than [`first_step`] because the
/// rounding error of a second difference grows like `eps / h^2`.
pub fn second_step(v: f64) -> f64 {
    1e-4 * v.abs().max(1.0)
}

impl FieldFunction {
    /// Field known only through its values.
    pub fn from_fn<F>(m: usize, u: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            m,
            value: Arc::new(move |x, t| Ok(u(x, t))),
            jet: None,
        }
    }

    /// Field with a fallible value callable (e.g. restricted domain).
    pub fn from_fallible<F>(m: usize, u: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        Self {
            m,
            value: Arc::new(u),
            jet: None,
        }
    }

    /// Attaches analytic derivatives.
    pub fn with_jet<J>(mut self, jet: J) -> Self
    where
        J: Fn(f64, &[f64]) -> Result<Jet> + Send + Sync + 'static,
    {
        self.jet = Some(Arc::new(jet));
        self
    }

    /// `u = slope * x + offset`, with exact derivatives.
    pub fn stationary(m: usize, slope: f64, offset: f64) -> Self {
        Self::from_fn(m, move |x, _| slope * x + offset).with_jet(move |x, _| {
            Ok(Jet {
                value: slope * x + offset,
                u_x: slope,
                u_xx: 0.0,
                grad: vec![0.0; m],
                hess: vec![0.0; m * m],
            })
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn has_analytic_jet(&self) -> bool {
        self.jet.is_some()
    }

    /// Drops analytic derivatives, forcing finite differences.
    pub fn without_jet(&self) -> Self {
        Self {
            m: self.m,
            value: self.value.clone(),
            jet: None,
        }
    }

    fn check_dim(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "multitime",
                expected: self.m,
                found: t.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: f64, t: &[f64]) -> Result<f64> {
        self.check_dim(t)?;
        (self.value)(x, t)
    }

    pub fn jet(&self, x: f64, t: &[f64]) -> Result<Jet> {
        self.check_dim(t)?;
        match &self.jet {
            Some(j) => j(x, t),
            None => self.fd_jet(x, t),
        }
    }

    fn fd_jet(&self, x: f64, t: &[f64]) -> Result<Jet> {
        let m = self.m;
        let u = |x: f64, t: &[f64]| (self.value)(x, t);
        let u0 = u(x, t)?;

        let hx1 = first_step(x);
        let u_x = (u(x + hx1, t)? - u(x - hx1, t)?) / (2.0 * hx1);
        let hx2 = second_step(x);
        let u_xx = (u(x + hx2, t)? - 2.0 * u0 + u(x - hx2, t)?) / (hx2 * hx2);

        let mut tp = t.to_vec();
        let mut grad = vec![0.0; m];
        for a in 0..m {
            let h = first_step(t[a]);
            tp[a] = t[a] + h;
            let up = u(x, &tp)?;
            tp[a] = t[a] - h;
            let um = u(x, &tp)?;
            tp[a] = t[a];
            grad[a] = (up - um) / (2.0 * h);
        }

        let mut hess = vec![0.0; m * m];
        for a in 0..m {
            let ha = second_step(t[a]);
            tp[a] = t[a] + ha;
            let up = u(x, &tp)?;
            tp[a] = t[a] - ha;
            let um = u(x, &tp)?;
            tp[a] = t[a];
            hess[a * m + a] = (up - 2.0 * u0 + um) / (ha * ha);
            for b in (a + 1)..m {
                let hb = second_step(t[b]);
                let mut corner = |sa: f64, sb: f64| -> Result<f64> {
                    tp[a] = t[a] + sa * ha;
                    tp[b] = t[b] + sb * hb;
                    let v = u(x, &tp);
                    tp[a] = t[a];
                    tp[b] = t[b];
                    v
                };
                let mixed = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                    + corner(-1.0, -1.0)?)
                    / (4.0 * ha * hb);
                hess[a * m + b] = mixed;
                hess[b * m + a] = mixed;
            }
        }
        Ok(Jet {
            value: u0,
            u_x,
            u_xx,
            grad,
            hess,
        })
    }

    /// Extends a one-time field to `m` times by ignoring `t^2..t^m`.
    pub fn prolong(&self, m: usize) -> Result<FieldFunction> {
        if self.m != 1 {
            return Err(Error::DimensionMismatch {
                what: "single-time field",
                expected: 1,
                found: self.m,
            });
        }
        if m == 0 {
            return Err(Error::BadParameters("prolongation needs m >= 1".into()));
        }
        let base = self.clone();
        let value_base = self.clone();
        let out = FieldFunction::from_fallible(m, move |x, t| value_base.value(x, &t[..1]));
        if !self.has_analytic_jet() {
            return Ok(out);
        }
        Ok(out.with_jet(move |x, t| {
            let j = base.jet(x, &t[..1])?;
            let mut grad = vec![0.0; m];
            grad[0] = j.grad[0];
            let mut hess = vec![0.0; m * m];
            hess[0] = j.hess[0];
            Ok(Jet {
                value: j.value,
                u_x: j.u_x,
                u_xx: j.u_xx,
                grad,
                hess,
            })
        }))
    }

    /// `u(x, -t)`.
    pub fn time_reversed(&self) -> FieldFunction {
        let m = self.m;
        let base = self.clone();
        let value_base = self.clone();
        let out = FieldFunction::from_fallible(m, move |x, t| {
            let neg: Vec<f64> = t.iter().map(|v| -v).collect();
            value_base.value(x, &neg)
        });
        if !self.has_analytic_jet() {
            return out;
        }
        out.with_jet(move |x, t| {
            let neg: Vec<f64> = t.iter().map(|v| -v).collect();
            let mut j = base.jet(x, &neg)?;
            for g in &mut j.grad {
                *g = -*g;
            }
            Ok(j)
        })
    }
}

fn check_field(u: &FieldFunction, structure: &GeometricStructure) -> Result<()> {
    if u.dim() != structure.dim() {
        return Err(Error::DimensionMismatch {
            what: "field vs structure temporal dimension",
            expected: structure.dim(),
            found: u.dim(),
        });
    }
    Ok(())
}

fn hessian_from_jet(
    jet: &Jet,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<Vec<f64>> {
    let m = structure.dim();
    let p = JetPoint {
        x,
        t,
        eta: jet.value,
        xi: &jet.grad,
    };
    let gamma = structure.eval_gamma(&p)?;
    let mut out = jet.hess.clone();
    for a in 0..m {
        for b in 0..m {
            let mut corr = 0.0;
            for g in 0..m {
                corr += gamma[g * m * m + a * m + b] * jet.grad[g];
            }
            out[a * m + b] -= corr;
        }
    }
    Ok(out)
}

/// `(Hess u)_{ab} = d^2u/dt^a dt^b - Gamma^g_{ab} du/dt^g`, row-major.
pub fn hessian(
    u: &FieldFunction,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<Vec<f64>> {
    check_field(u, structure)?;
    let jet = u.jet(x, t)?;
    hessian_from_jet(&jet, structure, x, t)
}

fn trace_with_h(
    jet: &Jet,
    hess: &[f64],
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<f64> {
    let p = JetPoint {
        x,
        t,
        eta: jet.value,
        xi: &jet.grad,
    };
    let h = structure.eval_h(&p)?;
    Ok(h.iter().zip(hess).map(|(h, v)| h * v).sum())
}

/// Box operator: the `h`-trace of the connection-corrected Hessian.
pub fn box_operator(
    u: &FieldFunction,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<f64> {
    check_field(u, structure)?;
    let jet = u.jet(x, t)?;
    let hess = hessian_from_jet(&jet, structure, x, t)?;
    trace_with_h(&jet, &hess, structure, x, t)
}

/// Residual of the linear multitime PDE `box u - u_xx = 0`.
pub fn box_residual(
    u: &FieldFunction,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<f64> {
    check_field(u, structure)?;
    let jet = u.jet(x, t)?;
    let hess = hessian_from_jet(&jet, structure, x, t)?;
    Ok(trace_with_h(&jet, &hess, structure, x, t)? - jet.u_xx)
}

fn residual_from_jet(
    jet: &Jet,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<f64> {
    let m = structure.dim();
    let p = JetPoint {
        x,
        t,
        eta: jet.value,
        xi: &jet.grad,
    };
    let h = structure.eval_h(&p)?;
    let c = structure.eval_c(&p)?;
    let k = structure.eval_coupling(&p)?;
    let du = &jet.grad;
    let principal: f64 = h.iter().zip(&jet.hess).map(|(h, v)| h * v).sum();
    let drift: f64 = c.iter().zip(du).map(|(c, d)| c * d).sum();
    let nonlinear = match structure.variant() {
        Variant::Rayleigh => {
            let mut acc = 0.0;
            for a in 0..m {
                for b in 0..m {
                    let ab = du[a] * du[b];
                    for g in 0..m {
                        acc += k[(a * m + b) * m + g] * ab * du[g];
                    }
                }
            }
            acc
        }
        Variant::VanDerPol => {
            jet.value * jet.value * k.iter().zip(du).map(|(d, v)| d * v).sum::<f64>()
        }
    };
    Ok(principal - drift + nonlinear - jet.u_xx)
}

/// Residual `h u_tt - C u_t + B u_t u_t u_t - u_xx` of the multitime
/// Rayleigh PDE, tensor fields evaluated at `eta = u`, `xi = grad_t u`.
pub fn rayleigh_residual(
    u: &FieldFunction,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<f64> {
    if structure.variant() != Variant::Rayleigh {
        return Err(Error::WrongVariant {
            expected: "Rayleigh (B field)",
        });
    }
    check_field(u, structure)?;
    let jet = u.jet(x, t)?;
    residual_from_jet(&jet, structure, x, t)
}

/// Residual `h u_tt - C u_t + u^2 D u_t - u_xx` of the Van der Pol variant.
pub fn vdp_residual(
    u: &FieldFunction,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<f64> {
    if structure.variant() != Variant::VanDerPol {
        return Err(Error::WrongVariant {
            expected: "Van der Pol (D field)",
        });
    }
    check_field(u, structure)?;
    let jet = u.jet(x, t)?;
    residual_from_jet(&jet, structure, x, t)
}

/// Residual of whichever PDE the structure describes.
pub fn pde_residual(
    u: &FieldFunction,
    structure: &GeometricStructure,
    x: f64,
    t: &[f64],
) -> Result<f64> {
    match structure.variant() {
        Variant::Rayleigh => rayleigh_residual(u, structure, x, t),
        Variant::VanDerPol => vdp_residual(u, structure, x, t),
    }
}

/// Sampled parity test: `C`, and `B` or `D`, odd in `t`.
pub fn check_reversibility(structure: &GeometricStructure, samples: &[SamplePoint]) -> Result<bool> {
    for s in samples {
        let neg_t: Vec<f64> = s.t.iter().map(|v| -v).collect();
        let p = s.jet();
        let q = JetPoint {
            x: s.x,
            t: &neg_t,
            eta: s.eta,
            xi: &s.xi,
        };
        let odd = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).all(|(u, v)| (u + v).abs() <= TAU_C);
        if !odd(structure.eval_c(&p)?, structure.eval_c(&q)?) {
            return Ok(false);
        }
        if !odd(structure.eval_coupling(&p)?, structure.eval_coupling(&q)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Residuals of a candidate over a set of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Each point is `[x, t1, ..., tm]`.
    pub points: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    pub rms: f64,
}

impl ResidualReport {
    pub fn new(points: Vec<Vec<f64>>, residuals: Vec<f64>) -> Self {
        let max_abs = residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let rms = if residuals.is_empty() {
            0.0
        } else {
            (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
        };
        Self {
            points,
            residuals,
            max_abs,
            rms,
        }
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    /// CSV with header `x,t1,...,tm,residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.points.first().map(|p| p.len().saturating_sub(1)).unwrap_or(0);
        let mut header = vec!["x".to_string()];
        header.extend((1..=m).map(|i| format!("t{i}")));
        header.push("residual".into());
        writeln!(w, "{}", header.join(","))?;
        for (p, r) in self.points.iter().zip(&self.residuals) {
            let mut row: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(*r));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Evaluates the PDE residual over `points` (each `[x, t1..tm]`).
pub fn residual_report(
    u: &FieldFunction,
    structure: &GeometricStructure,
    points: Vec<Vec<f64>>,
) -> Result<ResidualReport> {
    let residuals = points
        .iter()
        .map(|p| pde_residual(u, structure, p[0], &p[1..]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport::new(points, residuals))
}

/// Checks that a single-time field, prolonged to the structure's `m`
/// times, solves the multitime PDE over `points` (each `[x, t1]`).
///
/// The index-1 algebraic condition
/// `h^{ab} Gamma^1_{ab} xi_1 = C^1 xi_1 - B^{111} xi_1^3` (or its Van der Pol
/// analogue) is checked first at every point with `xi` supported on index 1.
pub fn check_prolongation(
    single_time: &FieldFunction,
    structure: &GeometricStructure,
    points: &[(f64, f64)],
) -> Result<ResidualReport> {
    let m = structure.dim();
    let v = single_time.prolong(m)?;
    let mut grid = Vec::with_capacity(points.len());
    let mut samples = Vec::with_capacity(points.len());
    for &(x, t1) in points {
        let mut t = vec![0.0; m];
        t[0] = t1;
        let jet = v.jet(x, &t)?;
        let mut xi = vec![0.0; m];
        xi[0] = jet.grad[0];
        samples.push(SamplePoint::new(x, t.clone(), jet.value, xi));
        let mut p = vec![x];
        p.extend(t);
        grid.push(p);
    }
    if samples.is_empty() {
        return Err(Error::BadParameters("prolongation grid is empty".into()));
    }
    if !check_constraint(structure, &samples)? {
        let max_defect = samples
            .iter()
            .map(|s| crate::coefficients::constraint_defect(structure, &s.jet()).map(f64::abs))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        return Err(Error::ConditionViolated { max_defect });
    }
    residual_report(&v, structure, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{ConstantCoupling, Coupling, TensorField};

    fn flat(m: usize, h: Vec<f64>) -> GeometricStructure {
        GeometricStructure::constant(
            m,
            h,
            vec![0.0; m * m * m],
            vec![0.0; m],
            ConstantCoupling::Rayleigh(vec![0.0; m * m * m]),
        )
        .unwrap()
    }

    #[test]
    fn hessian_of_stationary_is_zero() {
        let s = GeometricStructure::constant(
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.3; 8],
            vec![0.0; 2],
            ConstantCoupling::Rayleigh(vec![0.0; 8]),
        )
        .unwrap();
        let u = FieldFunction::stationary(2, 2.0, -1.0);
        assert_eq!(hessian(&u, &s, 0.7, &[0.1, 0.2]).unwrap(), vec![0.0; 4]);
        let fd = u.without_jet();
        for v in hessian(&fd, &s, 0.7, &[0.1, 0.2]).unwrap() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn hessian_of_product() {
        let s = flat(2, vec![1.0, 0.0, 0.0, 1.0]);
        let u = FieldFunction::from_fn(2, |_, t| t[0] * t[1]);
        let h = hessian(&u, &s, 0.0, &[0.4, -0.3]).unwrap();
        let expect = [0.0, 1.0, 1.0, 0.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hessian_with_connection() {
        // u = (t1)^2, Gamma^1_11 = 1: 2 - 2 t1 (hand differentiation)
        let s = GeometricStructure::constant(
            1,
            vec![1.0],
            vec![1.0],
            vec![0.0],
            ConstantCoupling::Rayleigh(vec![0.0]),
        )
        .unwrap();
        let u = FieldFunction::from_fn(1, |_, t| t[0] * t[0]);
        for t1 in [-1.5, 0.0, 0.8, 3.0] {
            let h = hessian(&u, &s, 0.0, &[t1]).unwrap();
            assert!((h[0] - (2.0 - 2.0 * t1)).abs() < 1e-6, "t1 = {t1}");
        }
    }

    #[test]
    fn box_examples() {
        let u = FieldFunction::from_fn(2, |_, t| t[0] * t[0] + t[1] * t[1]);
        let euclid = flat(2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!((box_operator(&u, &euclid, 0.0, &[0.3, 0.5]).unwrap() - 4.0).abs() < 1e-6);
        let lorentz = flat(2, vec![1.0, 0.0, 0.0, -1.0]);
        assert!(box_operator(&u, &lorentz, 0.0, &[0.3, 0.5]).unwrap().abs() < 1e-6);
        let st = FieldFunction::stationary(2, 1.0, 1.0);
        assert_eq!(box_operator(&st, &euclid, 0.0, &[0.3, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn rayleigh_residual_of_parabola_in_x() {
        let s = flat(2, vec![2.0, 0.5, 0.5, -3.0]);
        let u = FieldFunction::from_fn(2, |x, _| x * x);
        let r = rayleigh_residual(&u, &s, 0.3, &[1.0, 2.0]).unwrap();
        assert!((r + 2.0).abs() < 1e-6);
        assert!(matches!(
            vdp_residual(&u, &s, 0.3, &[1.0, 2.0]),
            Err(Error::WrongVariant { .. })
        ));
    }

    #[test]
    fn stationary_residual_is_exactly_zero() {
        let s = GeometricStructure::constant(
            2,
            vec![1.0, 0.2, 0.2, 3.0],
            vec![0.1; 8],
            vec![1.0, -2.0],
            ConstantCoupling::VanDerPol(vec![0.5, 0.7]),
        )
        .unwrap();
        let u = FieldFunction::stationary(2, 3.0, -2.0);
        assert_eq!(vdp_residual(&u, &s, 1.1, &[0.3, -0.4]).unwrap(), 0.0);
    }

    #[test]
    fn reversibility_examples() {
        let pts: Vec<SamplePoint> = (0..5)
            .map(|i| SamplePoint::at(0.1 * i as f64, vec![0.3 * i as f64 - 0.5]))
            .collect();
        let constant_c = GeometricStructure::constant(
            1,
            vec![1.0],
            vec![0.0],
            vec![1.0],
            ConstantCoupling::Rayleigh(vec![0.0]),
        )
        .unwrap();
        assert!(!check_reversibility(&constant_c, &pts).unwrap());
        let odd = GeometricStructure::new(
            1,
            TensorField::constant(2, vec![1.0]),
            TensorField::zero(3, 1),
            TensorField::from_fn(1, |p| vec![p.t[0]]),
            Coupling::Rayleigh(TensorField::from_fn(3, |p| vec![p.t[0]])),
        )
        .unwrap();
        assert!(check_reversibility(&odd, &pts).unwrap());
        let zero = flat(1, vec![1.0]);
        assert!(check_reversibility(&zero, &pts).unwrap());
    }

    #[test]
    fn prolongation_of_stationary() {
        let s = flat(3, vec![1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -2.0]);
        let u = FieldFunction::stationary(1, 0.5, 2.0);
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.1 * i as f64)).collect();
        let rep = check_prolongation(&u, &s, &pts).unwrap();
        assert_eq!(rep.max_abs, 0.0);
    }

    #[test]
    fn prolongation_rejects_violated_condition() {
        let s = GeometricStructure::constant(
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 8],
            vec![1.0, 0.0],
            ConstantCoupling::Rayleigh(vec![0.0; 8]),
        )
        .unwrap();
        let u = FieldFunction::from_fn(1, |x, t| (x - t[0]).sin());
        let err = check_prolongation(&u, &s, &[(0.3, 0.2)]).unwrap_err();
        assert!(matches!(err, Error::ConditionViolated { .. }));
    }

    #[test]
    fn report_statistics_and_csv() {
        let rep = ResidualReport::new(vec![vec![0.0, 1.0], vec![1.0, 2.0]], vec![3.0, -4.0]);
        assert_eq!(rep.max_abs, 4.0);
        assert!((rep.rms - (12.5_f64).sqrt()).abs() < 1e-15);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,t1,residual\n"));
        assert_eq!(text.lines().count(), 3);
    }
}

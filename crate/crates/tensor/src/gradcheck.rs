//! Central-difference gradient verification.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Entries whose gradient magnitude falls below this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, REL_FLOOR)`
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the backward-pass gradient of scalar `f` at `point` with central
/// differences of half-width `step`.
pub fn gradcheck<Func>(f: Func, point: &Tensor<f64>, step: f64, tol: f64) -> Result<GradcheckReport>
where
    Func: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let x = point.detach().requires_grad(true);
    let y = f(&x)?;
    let y0 = y.item()?;
    if !y0.is_finite() {
        return Err(TensorError::NonFinite { op: "gradcheck(f)".into() });
    }
    y.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);

    let base = point.to_vec();
    let mut numeric = Vec::with_capacity(base.len());
    let eval = |v: Vec<f64>| -> Result<f64> {
        let t = Tensor::new(v, point.shape())?;
        let r = f(&t)?.item()?;
        if !r.is_finite() {
            return Err(TensorError::NonFinite { op: "gradcheck(f)".into() });
        }
        Ok(r)
    };
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        analytic,
        numeric,
        max_rel_error,
        tol,
        passed: max_rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        // Dyadic point and step keep every perturbed sum exact.
        let p = Tensor::from_f64(&[0.25, -2.0, 5.5], &[3]).unwrap();
        let r = gradcheck(|x| x.sum(), &p, 1.0 / 1024.0, 1e-4).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);
        let q = Tensor::from_f64(&[0.3, -2.1, 5.7], &[3]).unwrap();
        let r = gradcheck(|x| x.sum(), &q, 1e-3, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn divergence_is_reported() {
        let p = Tensor::from_f64(&[0.0005], &[1]).unwrap();
        let r = gradcheck(|x| x.log()?.sum(), &p, 1e-3, 1e-4);
        assert!(matches!(r, Err(TensorError::NonFinite { .. })));
    }
}

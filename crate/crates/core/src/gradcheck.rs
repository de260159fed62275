//! Central finite differences, used as the reference for every analytic backward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(f(x + eps·e_k) − f(x − eps·e_k)) / (2·eps)` for every coordinate `k`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, at: &Tensor, eps: f64) -> Result<Tensor> {
    finite_diff_grad_at(&mut f, at, eps, 0..at.len())
}

/// Finite differences restricted to the listed flat coordinates; others stay zero.
pub fn finite_diff_grad_at(
    f: &mut impl FnMut(&Tensor) -> f64,
    at: &Tensor,
    eps: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<Tensor> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("eps must be positive and finite, got {eps}")));
    }
    let mut probe = at.clone();
    let mut grad = Tensor::zeros(at.dims());
    for k in coords {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[k] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value at coordinate {k}")));
        }
        grad.data_mut()[k] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are (numerically) zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error restricted to a subset of coordinates.
pub fn relative_error_at(analytic: &Tensor, numeric: &Tensor, coords: &[usize]) -> f64 {
    let a: Vec<f64> = coords.iter().map(|&k| analytic.data()[k]).collect();
    let n: Vec<f64> = coords.iter().map(|&k| numeric.data()[k]).collect();
    relative_error(&a, &n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.sq_norm(), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_fn(&[3, 2], |i| i as f64);
        let g = finite_diff_grad(|_| 7.0, &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::zeros(&[1]);
        assert!(matches!(
            finite_diff_grad(|_| f64::NAN, &x, 1e-5),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn relative_error_zero_vectors() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}

//! Central finite-difference gradient oracle.
//!
//! This is the independent referee for the recorded-graph differentiator:
//! it knows nothing about tapes, only function evaluations, so agreement
//! between the two is strong evidence both are right.

use super::tensor::Tensor;
use super::{fmath, NumericsError};

/// Central-difference gradient of `f` at `theta`:
/// `g_k = (f(θ + h·e_k) - f(θ - h·e_k)) / (2h)`.
///
/// `f` is re-evaluated `2·len(theta)` times; any non-finite evaluation aborts
/// with the coordinate that produced it.
pub fn finite_diff_gradient<F>(
    f: &mut F,
    theta: &Tensor,
    h: f64,
) -> Result<Tensor, NumericsError>
where
    F: FnMut(&Tensor) -> Result<f64, NumericsError>,
{
    let mut grad = Tensor::zeros(theta.shape());
    let mut probe = theta.clone();
    for k in 0..theta.len() {
        let original = probe.data()[k];
        probe.data_mut()[k] = original + h;
        let f_plus = f(&probe)?;
        probe.data_mut()[k] = original - h;
        let f_minus = f(&probe)?;
        probe.data_mut()[k] = original;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(NumericsError::NonFinite {
                op: "finite_diff_gradient",
                coordinate: k,
            });
        }
        grad.data_mut()[k] = (f_plus - f_minus) / (2.0 * h);
    }
    Ok(grad)
}

/// `‖a - b‖₂ / max(‖b‖₂, floor)` — the scale-free disagreement between a
/// candidate gradient `a` and a reference `b`. The tiny floor keeps the
/// all-zero reference case meaningful.
pub fn l2_relative_error(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        diff_sq += d * d;
        ref_sq += y * y;
    }
    fmath::sqrt(diff_sq) / fmath::sqrt(ref_sq).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = Σ x_i² has gradient 2x; the central difference of a quadratic
    /// is exact up to rounding.
    #[test]
    fn quadratic_gradient_is_recovered() {
        let theta = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut f = |t: &Tensor| Ok(t.data().iter().map(|v| v * v).sum());
        let g = finite_diff_gradient(&mut f, &theta, 1e-5).unwrap();
        for (g_k, x_k) in g.data().iter().zip(theta.data()) {
            assert!((g_k - 2.0 * x_k).abs() < 1e-9, "{g_k} vs {}", 2.0 * x_k);
        }
    }

    #[test]
    fn transcendental_gradient_is_close() {
        let theta = Tensor::new(vec![3], vec![0.3, -0.7, 1.1]).unwrap();
        let mut f = |t: &Tensor| {
            Ok(t.data()
                .iter()
                .map(|v| libm::sin(*v) * libm::exp(0.5 * v))
                .sum())
        };
        let g = finite_diff_gradient(&mut f, &theta, 1e-6).unwrap();
        for (g_k, x_k) in g.data().iter().zip(theta.data()) {
            let exact = libm::cos(*x_k) * libm::exp(0.5 * x_k)
                + 0.5 * libm::sin(*x_k) * libm::exp(0.5 * x_k);
            assert!((g_k - exact).abs() < 1e-7);
        }
    }

    #[test]
    fn non_finite_evaluation_names_the_coordinate() {
        let theta = Tensor::new(vec![2], vec![1.0, 0.5]).unwrap();
        // log(x_1) goes NaN when coordinate 1 is pushed below zero by the
        // minus probe; coordinate 0 never enters f at all.
        let mut f = |t: &Tensor| Ok(libm::log(t.data()[1]));
        let err = finite_diff_gradient(&mut f, &theta, 1.0).unwrap_err();
        assert!(matches!(
            err,
            NumericsError::NonFinite {
                coordinate: 1,
                ..
            }
        ));
    }

    #[test]
    fn relative_error_is_scale_free() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 2.0, 3.0];
        assert_eq!(l2_relative_error(&a, &b), 0.0);
        let c = [1.1, 2.0, 3.0];
        let err = l2_relative_error(&c, &b);
        assert!((err - 0.1 / libm::sqrt(14.0)).abs() < 1e-12);
    }
}

use crate::error::{contract_err, shape_err, Result, UccError};
use crate::scalar::Scalar;

/// Central-difference gradient of `f` at `params`.
pub fn central_difference<T, F>(mut f: F, params: &[T], eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    if !(eps > T::zero()) {
        return contract_err("finite-difference step must be positive");
    }
    let mut x = params.to_vec();
    let two_eps = eps + eps;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x)?;
        x[i] = orig - eps;
        let minus = f(&x)?;
        x[i] = orig;
        let g = (plus - minus) / two_eps;
        if !plus.is_finite() || !minus.is_finite() || !g.is_finite() {
            return Err(UccError::Numeric(format!("objective is non-finite around coordinate {i}")));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Max over coordinates of `|analytic - fd| / max(1, |fd|)` with `fd` the central difference.
pub fn grad_check<T, F>(f: F, params: &[T], analytic: &[T], eps: T) -> Result<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    if params.len() != analytic.len() {
        return shape_err(format!(
            "{} parameters but {} analytic gradient entries",
            params.len(),
            analytic.len()
        ));
    }
    let fd = central_difference(f, params, eps)?;
    Ok(fd
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| (a - n).abs() / n.abs().max(T::one()))
        .fold(T::zero(), T::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(|x: &[f64]| Ok(x[0] * x[0]), &[3.0], &[6.0], 1e-4).unwrap();
        assert!(err < 1e-7);
    }

    #[test]
    fn constant_function() {
        let err = grad_check(|_: &[f64]| Ok(4.2), &[1.0, -2.0], &[0.0, 0.0], 1e-4).unwrap();
        assert!(err.abs() < 1e-10);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = grad_check(|x: &[f64]| Ok(1.0 / x[0]), &[0.0], &[0.0], 1e-300);
        assert!(matches!(r, Err(UccError::Numeric(_))));
        let r = grad_check(|x: &[f64]| Ok((x[0]).ln()), &[0.0], &[0.0], 1e-3);
        assert!(matches!(r, Err(UccError::Numeric(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(grad_check(|_: &[f64]| Ok(0.0), &[1.0], &[0.0, 0.0], 1e-4).is_err());
        assert!(grad_check(|_: &[f64]| Ok(0.0), &[1.0], &[0.0], 0.0).is_err());
    }
}

//! Central finite-difference oracle for reverse-mode gradients.

use alloc::format;
use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares the analytic gradient of `f` at `point` with central differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_diff_check_many(
        |g: &mut Graph, vars: &[Var]| f(g, vars[0]),
        core::slice::from_ref(point),
        eps,
    )
}

/// [`finite_diff_check`] over several input tensors at once.
pub fn finite_diff_check_many<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|p| g.leaf(p.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    check_scalar(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; p.len()])
        })
        .collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        check_scalar(&g, out)
    };

    let mut work: Vec<Tensor> = points.to_vec();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (ci, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = libm::fabs(a - numeric) / libm::fabs(numeric).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn check_scalar(g: &Graph, out: Var) -> Result<f64> {
    let t = g.value(out);
    if t.len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    let v = t.data()[0];
    if !v.is_finite() {
        return Err(Error::Numeric(format!("function returned non-finite value {v}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact_enough() {
        let p = Tensor::vector(alloc::vec![0.3, -1.2, 2.5, 0.0]);
        let err = finite_diff_check(
            |g, x| {
                let s = g.square(x);
                Ok(g.sum(s))
            },
            &p,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = Tensor::vector(alloc::vec![1.0, 2.0]);
        let err = finite_diff_check(
            |g, _x| Ok(g.constant(Tensor::scalar(4.0))),
            &p,
            DEFAULT_EPS,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn exp_gradient_at_point_three() {
        let p = Tensor::vector(alloc::vec![0.3]);
        let err = finite_diff_check(
            |g, x| {
                let e = g.exp(x);
                Ok(g.sum(e))
            },
            &p,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_function_is_numeric_error() {
        let p = Tensor::vector(alloc::vec![-1.0]);
        let r = finite_diff_check(
            |g, x| {
                let l = g.ln(x);
                Ok(g.sum(l))
            },
            &p,
            DEFAULT_EPS,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}

//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{zero_grads, Tensor};

/// Compare analytic gradients of a scalar function against central finite
/// differences at `point`. Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `f` must be a pure function of the point tensors (it is re-evaluated many
/// times with perturbed values).
pub fn grad_check<F>(mut f: F, point: &[Tensor], step: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<Tensor>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "grad-check",
            msg: "step must be positive".into(),
        });
    }

    // Analytic pass.
    zero_grads(point);
    let tape = Tape::new();
    let loss = {
        let _guard = tape.activate();
        f(point)?
    };
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape()));
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = point
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    // Numeric pass, one coordinate at a time (no tape).
    let mut max_rel = 0.0f64;
    for (ti, t) in point.iter().enumerate() {
        let n = t.numel();
        for i in 0..n {
            let orig = t.data()[i];
            let eval_at = |v: f64, f: &mut F| -> Result<f64> {
                let mut d = t.to_vec();
                d[i] = v;
                t.set_data(&d)?;
                let out = f(point)?;
                let y = out.item();
                if !y.is_finite() {
                    return Err(Error::NonFinite("grad-check evaluation"));
                }
                Ok(y)
            };
            let plus = eval_at(orig + step, &mut f);
            let minus = plus.and_then(|p| eval_at(orig - step, &mut f).map(|m| (p, m)));
            // Restore before propagating any error.
            {
                let mut d = t.to_vec();
                d[i] = orig;
                t.set_data(&d)?;
            }
            let (plus, minus) = minus?;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::param("x", vec![0.3, -1.2, 2.5], &[3]).unwrap();
        let err = grad_check(|p| ops::sum(&p[0]), &[x], 1e-5).unwrap();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::param("x", vec![1.0], &[1]).unwrap();
        assert!(grad_check(|p| ops::sum(&p[0]), &[x], 0.0).is_err());
    }

    #[test]
    fn diamond_matches_finite_differences() {
        let x = Tensor::param("x", vec![0.4, -0.8], &[2]).unwrap();
        let err = grad_check(
            |p| {
                let t = ops::tanh(&p[0])?;
                let shared = ops::mul(&t, &p[0])?;
                ops::sum(&ops::add(&shared, &t)?)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}

//! Central finite-difference verification of analytic gradients.

use super::scalar::Scalar;
use super::{backward, Tensor};
use crate::error::Result;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    /// Scalar type the check ran at ("f32" or "f64").
    pub precision: &'static str,
    pub max_rel_err: f64,
    /// (parameter name, flat element index) of the worst element.
    pub worst: Option<(String, usize)>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn line(&self) -> String {
        let worst = match &self.worst {
            Some((p, i)) => format!("{p}[{i}]"),
            None => "-".into(),
        };
        format!(
            "{} {:22} {:4}  max_rel_err {:.3e}  (tol {:.0e}, worst {})",
            if self.pass { "ok  " } else { "FAIL" },
            self.name,
            self.precision,
            self.max_rel_err,
            self.tolerance,
            worst
        )
    }
}

/// Named parameter blob fed to [`gradient_check`].
pub type CheckParam<S> = (String, Vec<usize>, Vec<S>);

/// Compare the analytic gradient of `f` against central differences for
/// every element of every parameter.
///
/// `f` must be a pure scalar-valued function of the given leaves. The base
/// perturbation is `step * max(1, |value|)` per element; when the estimate
/// at that step disagrees with the analytic value, the element is re-probed
/// at step/8 and step*8 and the best estimate wins. Central differences are
/// only valid where `f` is smooth across the probe window and above the
/// precision's rounding floor; the refinements pick whichever regime holds
/// locally, while an actually wrong analytic gradient is off by the same
/// amount at every step size and still fails. Relative error is
/// `|a - n| / max(|a|, |n|, floor)` with the precision's absolute floor
/// guarding the comparison of two below-noise numbers.
pub fn gradient_check<S, F>(
    name: &str,
    f: F,
    params: &[CheckParam<S>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&[Tensor<S>]) -> Result<Tensor<S>>,
{
    let leaves: Vec<Tensor<S>> = params
        .iter()
        .map(|(_, shape, values)| Tensor::param(shape.clone(), values.clone()))
        .collect::<Result<_>>()?;

    let loss = f(&leaves)?;
    let grads = backward(&loss)?;

    let mut max_rel = 0.0f64;
    let mut worst = None;
    for (pi, (pname, shape, values)) in params.iter().enumerate() {
        let analytic = grads.grad(&leaves[pi]);
        for j in 0..values.len() {
            let h0 = step * values[j].as_f64().abs().max(1.0);
            let eval = |v: f64| -> Result<f64> {
                let mut bumped = values.clone();
                bumped[j] = S::from_f64(v);
                let mut probe = leaves.clone();
                probe[pi] = Tensor::param(shape.clone(), bumped)?;
                Ok(f(&probe)?.item()?.as_f64())
            };
            let v0 = values[j].as_f64();
            let a = analytic[j].as_f64();
            let rel_at = |h: f64| -> Result<f64> {
                let numeric = (eval(v0 + h)? - eval(v0 - h)?) / (2.0 * h);
                Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(S::GRAD_DENOM_FLOOR))
            };
            let mut rel = rel_at(h0)?;
            if rel >= tolerance * 0.5 {
                for h in [h0 / 8.0, h0 / 64.0, h0 * 8.0] {
                    rel = rel.min(rel_at(h)?);
                    if rel < tolerance * 0.5 {
                        break;
                    }
                }
            }
            if rel > max_rel {
                max_rel = rel;
                worst = Some((pname.clone(), j));
            }
        }
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        precision: S::NAME,
        max_rel_err: max_rel,
        worst,
        tolerance,
        pass: max_rel < tolerance,
    })
}

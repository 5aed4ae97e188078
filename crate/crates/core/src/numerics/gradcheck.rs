//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default perturbation for [`finite_difference_check`].
pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares tape gradients of `f` against central differences.
///
/// `f` receives a fresh tape with every entry of `params` registered under
/// its name and must return a scalar. The result is the largest
/// `|analytic − numeric| / max(1, |analytic|)` over all parameter entries.
pub fn finite_difference_check<F>(params: &BTreeMap<String, Tensor>, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let eval = |values: &BTreeMap<String, Tensor>| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let mut vars = BTreeMap::new();
        for (name, t) in values {
            vars.insert(name.clone(), tape.param(name, t.clone())?);
        }
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::invalid("checked function must return a scalar"));
        }
        if !v.item().is_finite() {
            return Err(Error::Numeric("checked function returned a non-finite value".into()));
        }
        Ok((tape, out))
    };

    let (tape, out) = eval(params)?;
    let analytic = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, t) in params {
        let grad = analytic.get(name).expect("registered");
        for idx in 0..t.len() {
            let orig = t.data()[idx];
            probe.get_mut(name).unwrap().data_mut()[idx] = orig + eps;
            let (tp, op) = eval(&probe)?;
            let plus = tp.value(op).item();
            probe.get_mut(name).unwrap().data_mut()[idx] = orig - eps;
            let (tm, om) = eval(&probe)?;
            let minus = tm.value(om).item();
            probe.get_mut(name).unwrap().data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[idx];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

use alloc::format;
use alloc::string::ToString;

use super::{Bindings, ExprGraph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Compares an analytic gradient with central differences.
///
/// `f` returns the function value and its analytic gradient at a point.
/// The result is `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(mut f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {h} must be positive")));
    }
    let (v0, analytic) = f(point)?;
    if !v0.is_finite() {
        return Err(Error::NonFinite("function value at the check point".to_string()));
    }
    if analytic.len() != point.len() {
        return Err(Error::LengthMismatch {
            expected: point.len(),
            actual: analytic.len(),
        });
    }
    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x = point.values()[i];
        probe.values_mut()[i] = x + h;
        let (fp, _) = f(&probe)?;
        probe.values_mut()[i] = x - h;
        let (fm, _) = f(&probe)?;
        probe.values_mut()[i] = x;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.values()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// [`grad_check`] for the scalar `output` of a graph with respect to the
/// bound input `wrt`, all other bindings held fixed.
pub fn grad_check_graph(graph: &ExprGraph, bindings: &Bindings, output: NodeId, wrt: &str, h: f64) -> Result<f64> {
    let point = bindings
        .get(wrt)
        .cloned()
        .ok_or_else(|| Error::UnboundInput(wrt.to_string()))?;
    let mut b = bindings.clone();
    grad_check(
        |p| {
            b.insert(wrt.to_string(), p.clone());
            let ev = graph.forward(&b, &[output])?;
            let value = ev.value(output).expect("evaluated").item();
            let grads = graph.backward_from(&ev, &b, output)?;
            Ok((value, grads[wrt].clone()))
        },
        &point,
        h,
    )
}

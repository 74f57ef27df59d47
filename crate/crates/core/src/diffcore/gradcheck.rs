use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares tape gradients against central differences.
///
/// `f` builds a scalar from the parameter leaves it is handed. Returns the
/// maximum over all coordinates of `|analytic - numeric| / max(1, |analytic|)`,
/// or infinity if any evaluation fails or is non-finite.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |ps: &[Tensor]| -> Option<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &ids).ok()?;
        let v = tape.value(out);
        (v.len() == 1 && v.data()[0].is_finite()).then(|| v.data()[0])
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let Ok(out) = f(&mut tape, &ids) else {
        return f64::INFINITY;
    };
    let Ok(grads) = tape.backward(out) else {
        return f64::INFINITY;
    };

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id, &params[pi]);
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = eval(&work);
            work[pi].data_mut()[k] = orig - h;
            let down = eval(&work);
            work[pi].data_mut()[k] = orig;
            let (Some(up), Some(down)) = (up, down) else {
                return f64::INFINITY;
            };
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if !err.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(err);
        }
    }
    worst
}

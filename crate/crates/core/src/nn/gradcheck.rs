use super::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Entries with both gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Compares tape gradients against central differences for every parameter in
/// `store`, checking at most `max_per_param` evenly strided entries of each.
///
/// Relative error is `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn check_gradients<F>(
    store: &ParamStore,
    step: f64,
    max_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = store.clone();
    for (name, value) in store.iter() {
        let analytic = grads
            .param(name)
            .unwrap_or_else(|| super::Tensor::zeros(value.shape()));
        let n = value.len();
        let stride = match max_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = value.data()[i];
            probe.get_mut(name).expect("cloned store").data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("cloned store").data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("cloned store").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (name.clone(), i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

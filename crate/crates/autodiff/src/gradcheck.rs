use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::AutodiffError;

/// Lower bound on the denominator of the relative error, so coordinates
/// whose true gradient is near zero are judged by absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn loss_of<E: From<AutodiffError>>(
    store: &ParamStore,
    f: &mut impl FnMut(&mut Tape<'_>) -> Result<Var, E>,
    with_grad: bool,
) -> Result<(f64, Option<crate::Gradients>), E> {
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    let value = tape.value(loss);
    if value.shape() != (1, 1) {
        return Err(AutodiffError::NotScalar {
            rows: value.rows(),
            cols: value.cols(),
        }
        .into());
    }
    let grads = if with_grad { Some(tape.backward(loss)?) } else { None };
    Ok((value.item(), grads))
}

/// Compares analytic gradients of the loss built by `f` against central
/// differences with step `eps`, over every coordinate of `params`.
///
/// `f` is run twice up front; differing losses are reported as an error
/// because finite differences of a random closure are meaningless.
pub fn gradient_check<E: From<AutodiffError>>(
    store: &mut ParamStore,
    params: &[ParamId],
    mut f: impl FnMut(&mut Tape<'_>) -> Result<Var, E>,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport, E> {
    let (first, grads) = loss_of(store, &mut f, true)?;
    let (second, _) = loss_of(store, &mut f, false)?;
    if first.to_bits() != second.to_bits() {
        return Err(AutodiffError::NonDeterministic { first, second }.into());
    }
    let grads = grads.expect("backward ran");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        tolerance,
    };
    for &id in params {
        let analytic = grads.dense(store, id);
        for k in 0..analytic.len() {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + eps;
            let plus = loss_of(store, &mut f, false)?.0;
            store.value_mut(id).data_mut()[k] = original - eps;
            let minus = loss_of(store, &mut f, false)?.0;
            store.value_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((store.param(id).name().to_string(), k));
            }
        }
    }
    Ok(report)
}

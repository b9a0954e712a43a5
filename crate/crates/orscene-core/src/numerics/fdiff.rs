use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::Result;

/// Central-difference gradient oracle over every trainable parameter entry:
/// (f(theta + h e_i) - f(theta - h e_i)) / 2h.
///
/// `f` must be a deterministic scalar function of the store's values; the
/// store is restored to its original state afterward.
#[allow(clippy::needless_range_loop)]
pub fn finite_diff_grad<F>(
    store: &mut ParamStore,
    h: f64,
    mut f: F,
) -> Result<Vec<(ParamId, Tensor)>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let ids: Vec<ParamId> = store
        .ids()
        .filter(|&id| store.get(id).trainable)
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.value(id).len();
        let shape = store.value(id).shape().to_vec();
        let mut grad = vec![0.0; len];
        for i in 0..len {
            let original = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = original + h;
            let plus = f(store)?;
            store.get_mut(id).value.data_mut()[i] = original - h;
            let minus = f(store)?;
            store.get_mut(id).value.data_mut()[i] = original;
            grad[i] = (plus - minus) / (2.0 * h);
        }
        out.push((id, Tensor::from_vec(&shape, grad)?));
    }
    Ok(out)
}

/// Relative error with a small floor so that finite-difference noise on
/// near-zero gradients does not register as disagreement.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

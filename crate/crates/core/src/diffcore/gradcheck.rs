use super::{Graph, ParamStore, Var};
use crate::{Error, Result};

/// Compares reverse-mode gradients against central differences.
///
/// `f` builds a scalar from the store's parameters. Every unfrozen coordinate
/// is probed with `(f(p + eps) - f(p - eps)) / (2 eps)` and compared with the
/// analytic gradient; the result is the largest
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
/// Frozen parameters are not probed. On return the store's gradients hold the
/// analytic values.
pub fn grad_check<F>(store: &mut ParamStore<f64>, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::param(format!("grad_check eps must lie in [1e-7, 1e-3], got {eps}")));
    }
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        g.value(out).item()
    };

    store.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out, store)?;

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.get(id).frozen {
            continue;
        }
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = store.get(id).grad.data()[i];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

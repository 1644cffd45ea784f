//! Central finite-difference checks of reverse-mode gradients.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::exec::Execution;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over coordinates of `|analytic − central difference| / max(1, |analytic|)`
/// for a scalar map of one input tensor.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0_f64;
    for k in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[k] += h;
        let mut minus = x.clone();
        minus.data_mut()[k] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data()[k], numeric));
    }
    Ok(worst)
}

/// Same check against every value of every tensor in `store`.
///
/// `f` builds a scalar on a graph bound to the store it is given. Coordinates
/// are probed concurrently under [`Execution::Parallel`]; the result does not
/// depend on the mode.
pub fn grad_check_params<F>(store: &ParamStore, f: F, h: f64, exec: Execution) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var> + Sync,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::with_params(store);
    let out = f(&mut g)?;
    let analytic = g.backward(out)?.flat_params(store);
    drop(g);

    let coords: Vec<usize> = (0..store.num_values()).collect();
    let per_chunk = exec.map_chunks(&coords, 64, |chunk| -> Result<f64> {
        let mut local = store.clone();
        let mut worst = 0.0_f64;
        for &k in chunk {
            let at = local.locate(k);
            let orig = *local.value_mut(at);
            *local.value_mut(at) = orig + h;
            let fp = eval(&local)?;
            *local.value_mut(at) = orig - h;
            let fm = eval(&local)?;
            *local.value_mut(at) = orig;
            worst = worst.max(rel_err(analytic[k], (fp - fm) / (2.0 * h)));
        }
        Ok(worst)
    });
    per_chunk
        .into_iter()
        .try_fold(0.0_f64, |acc, r| r.map(|w| acc.max(w)))
}

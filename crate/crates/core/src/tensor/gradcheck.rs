use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamSet, Var};
use crate::{Error, Result};

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval_loss<F>(params: &ParamSet, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = f(&mut g)?;
    Ok(g.value(loss).item())
}

/// Compares [`Graph::backward`] against central finite differences and
/// returns the worst relative error per parameter tensor.
///
/// With `sample = Some((count, seed))` only `count` randomly chosen scalars
/// (across all parameters) are perturbed; otherwise every scalar is.
pub fn finite_diff_by_param<F>(
    params: &mut ParamSet,
    f: F,
    step: f64,
    sample: Option<(usize, u64)>,
) -> Result<Vec<(ParamId, f64)>>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Contract(alloc::format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?.param_grads()
    };
    let grad_of = |id: ParamId, i: usize| -> f64 {
        analytic
            .iter()
            .find(|(p, _)| *p == id)
            .map_or(0.0, |(_, g)| g[i])
    };

    let mut coords: Vec<(ParamId, usize)> = params
        .iter()
        .flat_map(|(id, _, t)| (0..t.len()).map(move |i| (id, i)))
        .collect();
    if let Some((count, seed)) = sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::with_capacity(count);
        for _ in 0..count.min(coords.len()) {
            let j = rng.random_range(0..coords.len());
            picked.push(coords.swap_remove(j));
        }
        coords = picked;
    }

    let mut worst: Vec<(ParamId, f64)> = params.ids().map(|id| (id, 0.0)).collect();
    for (id, i) in coords {
        let orig = params.get(id).data()[i];
        params.get_mut(id).data_mut()[i] = orig + step;
        let up = eval_loss(params, &f);
        params.get_mut(id).data_mut()[i] = orig - step;
        let down = eval_loss(params, &f);
        params.get_mut(id).data_mut()[i] = orig;
        let numeric = (up? - down?) / (2.0 * step);
        let err = rel_error(grad_of(id, i), numeric);
        let w = &mut worst[id.0].1;
        if err > *w || err.is_nan() {
            *w = err;
        }
    }
    Ok(worst)
}

/// Worst relative error over all checked scalars, using the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(params: &mut ParamSet, f: F, step: f64, sample: Option<(usize, u64)>) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let per = finite_diff_by_param(params, f, step, sample)?;
    Ok(per.iter().map(|&(_, e)| e).fold(0.0, f64::max))
}

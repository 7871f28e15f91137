//! Central-difference verification of reverse-mode gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::params::ParamStore;
use crate::scalar::Scalar;

const FD_STEP: f64 = 1e-5;

/// Compare analytic gradients against central differences on `n_coords`
/// seeded random coordinates, cycling through every parameter so the check
/// spans embedding, LSTM and head weights. The closure must be
/// deterministic: it is evaluated twice up front and the two loss values
/// must agree exactly.
///
/// Returns the max relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`. The floor keeps
/// near-zero coordinates from amplifying intrinsic central-difference noise
/// (~eps * |loss| / h, i.e. around 1e-10 here) into spurious failures.
pub fn finite_difference_check<S, F>(
    store: &mut ParamStore<S>,
    n_coords: usize,
    seed: u64,
    mut loss_and_grad: F,
) -> Result<f64>
where
    S: Scalar,
    F: FnMut(&mut ParamStore<S>) -> Result<S>,
{
    store.zero_grads();
    let l1 = loss_and_grad(store)?;
    let analytic: Vec<Vec<S>> = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grads();
    let l2 = loss_and_grad(store)?;
    if l1 != l2 {
        return Err(Error::NonDeterministicClosure(
            l1.to_f64_lossy(),
            l2.to_f64_lossy(),
        ));
    }

    let n_params = store.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = S::from_f64_lossy(FD_STEP);
    let mut max_rel = 0.0f64;
    for k in 0..n_coords {
        let pid = k % n_params;
        let idx = rng.gen_range(0..store.iter().nth(pid).unwrap().value.len());
        let original = store.iter().nth(pid).unwrap().value[idx];

        store.iter_mut().nth(pid).unwrap().value[idx] = original + h;
        store.zero_grads();
        let plus = loss_and_grad(store)?;
        store.iter_mut().nth(pid).unwrap().value[idx] = original - h;
        store.zero_grads();
        let minus = loss_and_grad(store)?;
        store.iter_mut().nth(pid).unwrap().value[idx] = original;

        let numeric = ((plus - minus) / (h + h)).to_f64_lossy();
        let a = analytic[pid][idx].to_f64_lossy();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    store.zero_grads();
    Ok(max_rel)
}

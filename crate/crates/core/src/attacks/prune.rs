use rand::seq::index;

use crate::error::{MixerError, Result};
use crate::rng::StreamId;
use crate::tensornet::Model;

/// Number of weights zeroed at rate `k` on a model with `total` weights.
pub fn pruned_count(total: usize, k: f64) -> usize {
    (k * total as f64).round() as usize
}

/// Zeroes exactly `round(k·W)` of the `W` weights, chosen uniformly without
/// replacement across all layers. Biases are left alone.
pub fn prune(model: &Model, k: f64, stream: &StreamId) -> Result<Model> {
    if !(0.0..=1.0).contains(&k) {
        return Err(MixerError::Config(format!("pruning rate {k} outside [0, 1]")));
    }
    let mut out = model.clone();
    let total = model.weight_count();
    let amount = pruned_count(total, k);
    let mut picked = index::sample(&mut stream.rng(), total, amount).into_vec();
    picked.sort_unstable();

    let mut offset = 0;
    let mut next = picked.into_iter().peekable();
    for (w, _) in out.layers_mut().iter_mut().filter_map(|l| l.params_mut()) {
        let len = w.len();
        let data = w.data_mut();
        while let Some(&i) = next.peek() {
            if i >= offset + len {
                break;
            }
            data[i - offset] = 0.0;
            next.next();
        }
        offset += len;
    }
    Ok(out)
}

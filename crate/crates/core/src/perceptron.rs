//! Local perceptron training on one client's shard.

use rand::seq::SliceRandom;

use crate::dataset::Example;
use crate::error::{Result, SimError};
use crate::rng::{self, Purpose};
use crate::vector::{axpy, dot, norm_sq};

pub const DEFAULT_EPOCHS: usize = 1;

/// Absolute tolerance, scaled by `1 + |lhs| + |rhs|`, for the pathwise checks.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalResult {
    pub w_out: Vec<f64>,
    pub mistakes: u64,
    pub init_used: Vec<f64>,
}

/// The visiting order for a shard of `len` examples under `order_seed`.
pub fn shard_order(len: usize, order_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(order_seed, Purpose::Order, 0, 0, 0));
    order
}

/// Runs `epochs` full passes over `shard` in a seed-determined order, applying
/// `w += y x` whenever `y <w, x> <= 0`.
pub fn local_train(
    init: &[f64],
    shard: &[Example],
    epochs: usize,
    order_seed: u64,
) -> Result<LocalResult> {
    local_train_ordered(init, shard, &shard_order(shard.len(), order_seed), epochs)
}

/// Same as [`local_train`] with an explicit visiting order.
pub fn local_train_ordered(
    init: &[f64],
    shard: &[Example],
    order: &[usize],
    epochs: usize,
) -> Result<LocalResult> {
    if epochs == 0 {
        return Err(SimError::Config("epochs must be at least 1".into()));
    }
    if let Some(ex) = shard.iter().find(|ex| ex.x.len() != init.len()) {
        return Err(SimError::DimensionMismatch {
            expected: init.len(),
            got: ex.x.len(),
        });
    }
    let mut w = init.to_vec();
    let mut mistakes = 0u64;
    for _ in 0..epochs {
        for &j in order {
            let ex = &shard[j];
            if ex.y * dot(&w, &ex.x) <= 0.0 {
                axpy(ex.y, &ex.x, &mut w);
                mistakes += 1;
            }
        }
    }
    Ok(LocalResult {
        w_out: w,
        mistakes,
        init_used: init.to_vec(),
    })
}

#[inline]
pub(crate) fn within(lhs: f64, rhs: f64) -> f64 {
    CHECK_TOL * (1.0 + lhs.abs() + rhs.abs())
}

/// Pathwise progress and norm-growth inequalities for one local run started
/// from `stale_model + downlink_noise`:
///
/// * `<w*, w_out> >= <w*, stale> + <w*, noise> + margin * k`
/// * `|w_out|^2 <= |stale + noise|^2 + radius^2 * k`
pub fn check_lemma1(
    result: &LocalResult,
    stale_model: &[f64],
    downlink_noise: &[f64],
    witness: &[f64],
    margin: f64,
    radius: f64,
) -> bool {
    let k = result.mistakes as f64;
    let progress_lhs = dot(witness, &result.w_out);
    let progress_rhs = dot(witness, stale_model) + dot(witness, downlink_noise) + margin * k;
    let start: Vec<f64> = stale_model
        .iter()
        .zip(downlink_noise)
        .map(|(a, b)| a + b)
        .collect();
    let norm_lhs = norm_sq(&result.w_out);
    let norm_rhs = norm_sq(&start) + radius * radius * k;
    progress_lhs >= progress_rhs - within(progress_lhs, progress_rhs)
        && norm_lhs <= norm_rhs + within(norm_lhs, norm_rhs)
}

//! System size estimation: symmetric push-sum over `(v, w)` pairs.
//!
//! Every node starts with `v = 1`; exactly one seed starts with `w = 1`, the
//! rest with `w = 0`. Totals are therefore `(N, 1)` and every node's ratio
//! `v / w` converges to the network size. Pairs are only ever halved and
//! added, so the totals are conserved exactly, including while halves are
//! in flight.

use crate::error::{Error, Result};
use crate::model::EstimatorPair;

/// Weight below which a node has no size estimate yet.
pub const W_MIN: f64 = 1e-9;

pub fn init(is_seed: bool) -> EstimatorPair {
    EstimatorPair::new(1.0, if is_seed { 1.0 } else { 0.0 })
}

/// Initial pairs for a whole network; `seeds[i]` marks node `i` as seed.
pub fn init_network(seeds: &[bool]) -> Result<Vec<EstimatorPair>> {
    let count = seeds.iter().filter(|s| **s).count();
    if count != 1 {
        return Err(Error::SeedCount(count));
    }
    Ok(seeds.iter().map(|&s| init(s)).collect())
}

/// `(kept, sent)`.
pub fn halve_for_send(pair: EstimatorPair) -> (EstimatorPair, EstimatorPair) {
    pair.halve()
}

pub fn merge_pair(local: EstimatorPair, incoming: EstimatorPair) -> EstimatorPair {
    local.merge(incoming)
}

/// `v / w`, or `None` while the weight is at or below [`W_MIN`].
pub fn system_size(pair: EstimatorPair) -> Option<f64> {
    pair.ratio(W_MIN)
}

//! Node cache protocol: a bounded cache of peer ids used to pick gossip
//! partners.
//!
//! Caches are seeded from the global membership list at start-up (a
//! simulation-only shortcut) and then refreshed by merging the small id
//! samples carried on every push and pull.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::NodeId;

/// Number of cache entries carried on each push or pull.
pub const DEFAULT_SAMPLE_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerCache {
    owner: NodeId,
    capacity: usize,
    ids: Vec<NodeId>,
}

impl PeerCache {
    /// Samples `min(capacity, N - 1)` distinct peers, excluding `owner`,
    /// uniformly without replacement.
    pub fn init<R: Rng + ?Sized>(
        owner: NodeId,
        all_ids: &[NodeId],
        capacity: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("n_cache", "must be at least 1"));
        }
        let others: Vec<NodeId> = all_ids.iter().copied().filter(|id| *id != owner).collect();
        if others.is_empty() {
            return Err(Error::NoPeers(owner));
        }
        let take = capacity.min(others.len());
        let ids = index::sample(rng, others.len(), take)
            .into_iter()
            .map(|i| others[i])
            .collect();
        Ok(Self {
            owner,
            capacity,
            ids,
        })
    }

    /// Builds a cache directly from ids; duplicates and `owner` are dropped
    /// and the list is truncated to `capacity`.
    pub fn from_ids(owner: NodeId, capacity: usize, ids: impl IntoIterator<Item = NodeId>) -> Self {
        let mut out = Vec::new();
        for id in ids {
            if id != owner && !out.contains(&id) && out.len() < capacity {
                out.push(id);
            }
        }
        Self {
            owner,
            capacity,
            ids: out,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.ids.contains(&id)
    }

    /// Uniform draw from the cache.
    pub fn random_node<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NodeId> {
        if self.ids.is_empty() {
            return Err(Error::EmptyCache(self.owner));
        }
        Ok(self.ids[rng.random_range(0..self.ids.len())])
    }

    /// Uniform sample of `min(size, len)` distinct entries to ship in an
    /// exchange.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<NodeId> {
        let take = size.min(self.ids.len());
        index::sample(rng, self.ids.len(), take)
            .into_iter()
            .map(|i| self.ids[i])
            .collect()
    }

    /// Union with `received` (minus the owner), then random eviction down
    /// to capacity.
    pub fn merge<R: Rng + ?Sized>(&mut self, received: &[NodeId], rng: &mut R) {
        for &id in received {
            if id != self.owner && !self.ids.contains(&id) {
                self.ids.push(id);
            }
        }
        while self.ids.len() > self.capacity {
            let victim = rng.random_range(0..self.ids.len());
            self.ids.swap_remove(victim);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn ids(range: std::ops::Range<u64>) -> Vec<NodeId> {
        range.map(NodeId).collect()
    }

    #[test]
    fn two_nodes_know_each_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cache = PeerCache::init(NodeId(0), &ids(0..2), 100, &mut rng).unwrap();
        assert_eq!(cache.ids(), &[NodeId(1)]);
    }

    #[test]
    fn table_sized_cache_has_distinct_non_self_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cache = PeerCache::init(NodeId(17), &ids(0..1000), 100, &mut rng).unwrap();
        let set: BTreeSet<_> = cache.ids().iter().copied().collect();
        assert_eq!(set.len(), 100);
        assert!(!set.contains(&NodeId(17)));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = PeerCache::init(
            NodeId(3),
            &ids(0..500),
            100,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = PeerCache::init(
            NodeId(3),
            &ids(0..500),
            100,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_without_peers_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            PeerCache::init(NodeId(0), &ids(0..1), 10, &mut rng),
            Err(Error::NoPeers(_))
        ));
    }

    #[test]
    fn merge_is_union_below_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cache = PeerCache::from_ids(NodeId(1), 100, [NodeId(2), NodeId(3)]);
        cache.merge(&[NodeId(3), NodeId(4)], &mut rng);
        let got: BTreeSet<_> = cache.ids().iter().copied().collect();
        assert_eq!(got, [NodeId(2), NodeId(3), NodeId(4)].into_iter().collect());
    }

    #[test]
    fn merge_evicts_down_to_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cache = PeerCache::from_ids(NodeId(0), 100, ids(1..101));
        let incoming = ids(101..151);
        cache.merge(&incoming, &mut rng);
        assert_eq!(cache.len(), 100);
        let union: BTreeSet<_> = ids(1..151).into_iter().collect();
        assert!(cache.ids().iter().all(|id| union.contains(id)));
    }

    #[test]
    fn merge_excludes_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cache = PeerCache::from_ids(NodeId(1), 10, [NodeId(2)]);
        cache.merge(&[NodeId(1), NodeId(5)], &mut rng);
        assert!(!cache.contains(NodeId(1)));
        assert!(cache.contains(NodeId(5)));
    }

    #[test]
    fn random_node_from_singleton_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cache = PeerCache::from_ids(NodeId(0), 10, [NodeId(7)]);
        assert_eq!(cache.random_node(&mut rng).unwrap(), NodeId(7));
        let empty = PeerCache::from_ids(NodeId(0), 10, []);
        assert!(matches!(
            empty.random_node(&mut rng),
            Err(Error::EmptyCache(_))
        ));
    }

    #[test]
    fn random_node_sequence_is_reproducible() {
        let cache = PeerCache::from_ids(NodeId(0), 100, ids(1..101));
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<_> = (0..50)
            .map(|_| cache.random_node(&mut a).unwrap())
            .collect();
        let ys: Vec<_> = (0..50)
            .map(|_| cache.random_node(&mut b).unwrap())
            .collect();
        assert_eq!(xs, ys);
    }

    /// 10^5 draws over 100 ids: each count is Binomial(1e5, 0.01) with mean
    /// 1000 and sigma sqrt(1e5 * 0.01 * 0.99) ~= 31.46.
    #[test]
    fn random_node_is_uniform_within_three_sigma() {
        let cache = PeerCache::from_ids(NodeId(0), 100, ids(1..101));
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0u32; 101];
        for _ in 0..100_000 {
            counts[cache.random_node(&mut rng).unwrap().index()] += 1;
        }
        let sigma = (100_000.0f64 * 0.01 * 0.99).sqrt();
        for c in &counts[1..] {
            assert!((f64::from(*c) - 1000.0).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    proptest! {
        #[test]
        fn merge_keeps_invariants(
            owner in 0u64..50,
            local in proptest::collection::vec(0u64..200, 0..40),
            received in proptest::collection::vec(0u64..200, 0..40),
            cap in 1usize..30,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cache = PeerCache::from_ids(NodeId(owner), cap, local.into_iter().map(NodeId));
            let rx: Vec<NodeId> = received.into_iter().map(NodeId).collect();
            cache.merge(&rx, &mut rng);
            prop_assert!(cache.len() <= cap);
            prop_assert!(!cache.contains(NodeId(owner)));
            let set: BTreeSet<_> = cache.ids().iter().collect();
            prop_assert_eq!(set.len(), cache.len());
        }
    }
}

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BecpParams, ParentRule, Proposers};
use crate::model::{
    Block, BlockHash, BlockHeader, BlockLocalCache, BlockShare, EstimatorPair, ExchangeMessage,
    Ledger, MessageKind, NodeId, Phase,
};
use crate::ncp::PeerCache;
use crate::ssep::{self, W_MIN};

/// Per-node, per-block bookkeeping that never leaves the node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockProgress {
    pub prop_streak: u32,
    pub agree_streak: u32,
    pub timeout: f64,
    pub deadline: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counted {
    vp: bool,
    va: bool,
}

/// Fork-resolution call counters for one node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForkCounters {
    /// Top-level invocations: duplicate-id replacement and watchdog purges.
    pub top_level: u64,
    /// Recursive self-invocations on descendants.
    pub recursive: u64,
}

/// How an incoming block share was handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    /// Copy of a cached block; estimator pairs added.
    Merged,
    /// Displaced the cached block at the same id.
    Replaced,
    /// New id extending the preferred block.
    Inserted,
    /// The id is already confirmed locally with a different block, or the
    /// merge target is frozen.
    IgnoredConfirmed,
    /// Lost the `(t, o)` comparison against the cached block.
    IgnoredLoser,
    /// Parent unknown or not the preferred block.
    IgnoredUnlinked,
}

/// One BECP participant: SSEP pair, NCP cache, block local cache, preferred
/// block and confirmed ledger.
#[derive(Clone, Debug)]
pub struct BecpNode {
    id: NodeId,
    params: BecpParams,
    ssep: EstimatorPair,
    peers: PeerCache,
    cache: BlockLocalCache,
    preferred: BlockHash,
    ledger: Ledger,
    progress: BTreeMap<BlockHash, BlockProgress>,
    counted: BTreeMap<(u64, BlockHash), Counted>,
    /// Confirmed blocks still in the cache and when they leave it.
    retained: BTreeMap<BlockHash, f64>,
    next_generation: f64,
    forks: ForkCounters,
    created: Vec<BlockHeader>,
    rng: ChaCha8Rng,
}

impl BecpNode {
    pub fn new(
        id: NodeId,
        is_seed: bool,
        peers: PeerCache,
        params: BecpParams,
        rng: ChaCha8Rng,
    ) -> Self {
        let ledger = Ledger::new();
        let preferred = ledger.tip().header.hash;
        Self {
            id,
            params,
            ssep: ssep::init(is_seed),
            peers,
            cache: BlockLocalCache::new(),
            preferred,
            ledger,
            progress: BTreeMap::new(),
            counted: BTreeMap::new(),
            retained: BTreeMap::new(),
            next_generation: params.t_block,
            forks: ForkCounters::default(),
            created: Vec::new(),
            rng,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn ssep(&self) -> EstimatorPair {
        self.ssep
    }

    pub fn set_ssep(&mut self, pair: EstimatorPair) {
        self.ssep = pair;
    }

    pub fn system_size(&self) -> Option<f64> {
        ssep::system_size(self.ssep)
    }

    pub fn peers(&self) -> &PeerCache {
        &self.peers
    }

    pub fn cache(&self) -> &BlockLocalCache {
        &self.cache
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    pub fn forks(&self) -> ForkCounters {
        self.forks
    }

    pub fn created(&self) -> &[BlockHeader] {
        &self.created
    }

    pub fn progress(&self, hash: &BlockHash) -> Option<&BlockProgress> {
        self.progress.get(hash)
    }

    pub fn preferred(&self) -> BlockHash {
        self.preferred
    }

    /// Header of the preferred block, which lives in the cache or is the
    /// ledger tip.
    pub fn preferred_header(&self) -> BlockHeader {
        self.lookup_header(&self.preferred)
            .expect("preferred block is always known")
    }

    fn lookup_header(&self, hash: &BlockHash) -> Option<BlockHeader> {
        if let Some(b) = self.cache.get(hash) {
            return Some(b.header);
        }
        self.ledger
            .blocks()
            .iter()
            .rev()
            .find(|b| b.header.hash == *hash)
            .map(|b| b.header)
    }

    /// Hash of the block this node holds at `id`, confirmed or not.
    fn local_hash_at(&self, id: u64) -> Option<BlockHash> {
        if let Some(b) = self.ledger.get(id) {
            return Some(b.header.hash);
        }
        self.cache.first_at_id(id).map(Block::hash)
    }

    fn is_confirmed_id(&self, id: u64) -> bool {
        id < self.ledger.len() as u64
    }

    /// Periodic activation: phase checks, watchdogs, block generation, then
    /// the halved state goes out as a Push to a random cached peer.
    pub fn on_cycle_tick(
        &mut self,
        now: f64,
    ) -> (Vec<BlockHeader>, Option<(NodeId, ExchangeMessage)>) {
        let confirmed = self.update_phases(now);
        self.release_confirmed(now);
        self.expire_watchdogs(now);
        self.maybe_generate_block(now);
        let push = match self.peers.random_node(&mut self.rng) {
            Ok(target) => Some((target, self.split_outgoing(MessageKind::Push))),
            Err(_) => None,
        };
        (confirmed, push)
    }

    /// Merges a Push and answers the sender with a Pull built from the
    /// merged state.
    pub fn handle_push(&mut self, msg: &ExchangeMessage, now: f64) -> (NodeId, ExchangeMessage) {
        debug_assert_eq!(msg.kind, MessageKind::Push);
        self.merge_incoming(msg, now);
        (msg.sender, self.split_outgoing(MessageKind::Pull))
    }

    pub fn handle_pull(&mut self, msg: &ExchangeMessage, now: f64) {
        debug_assert_eq!(msg.kind, MessageKind::Pull);
        self.merge_incoming(msg, now);
    }

    fn merge_incoming(&mut self, msg: &ExchangeMessage, now: f64) {
        self.ssep = ssep::merge_pair(self.ssep, msg.ssep_share);
        self.peers.merge(&msg.ncp_sample, &mut self.rng);
        self.resolve_duplicate_block_ids(&msg.block_shares, now);
    }

    /// Halves the SSEP pair and every exchanged block's pairs, keeping one
    /// half and packing the other into a message.
    fn split_outgoing(&mut self, kind: MessageKind) -> ExchangeMessage {
        let (kept, sent) = ssep::halve_for_send(self.ssep);
        self.ssep = kept;
        let mut block_shares = Vec::new();
        for hash in self.cache.hashes_in_id_order() {
            let block = self.cache.get_mut(&hash).expect("hash taken from cache");
            let (prop_kept, prop_sent) = block.prop.halve();
            let (agree_kept, agree_sent) = block.agree.halve();
            block.prop = prop_kept;
            block.agree = agree_kept;
            let h = block.header;
            block_shares.push(BlockShare {
                id: h.id,
                creator: h.creator,
                created_at: h.created_at,
                parent: h.parent,
                prop: prop_sent,
                agree: agree_sent,
                phase: block.phase,
            });
        }
        let ncp_sample = self
            .peers
            .sample(self.params.ncp_sample_size, &mut self.rng);
        ExchangeMessage {
            kind,
            sender: self.id,
            ssep_share: sent,
            ncp_sample,
            block_shares,
        }
    }

    /// Applies the duplicate-id procedure to every incoming share in order.
    pub fn resolve_duplicate_block_ids(
        &mut self,
        shares: &[BlockShare],
        now: f64,
    ) -> Vec<Resolution> {
        shares.iter().map(|s| self.resolve_one(s, now)).collect()
    }

    fn resolve_one(&mut self, share: &BlockShare, now: f64) -> Resolution {
        let existing = self
            .cache
            .first_at_id(share.id)
            .map(|b| (b.header, b.phase));
        match existing {
            Some((local, phase)) => {
                if local.same_identity(share.id, share.created_at, share.creator) {
                    let block = self.cache.get_mut(&local.hash).expect("present");
                    block.prop += share.prop;
                    block.agree += share.agree;
                    self.rearm(&local.hash, now);
                    return Resolution::Merged;
                }
                if phase == Phase::Confirmed {
                    return Resolution::IgnoredConfirmed;
                }
                let wins = (share.created_at == local.created_at && share.creator < local.creator)
                    || share.created_at < local.created_at;
                if !wins {
                    return Resolution::IgnoredLoser;
                }
                // The winner must hang off the block this node holds one
                // height below, otherwise installing it would break the chain.
                if share.id == 0 || self.local_hash_at(share.id - 1) != Some(share.parent) {
                    return Resolution::IgnoredUnlinked;
                }
                self.fork_resolution(local.hash, true);
                self.install(share, now);
                Resolution::Replaced
            }
            None if self.is_confirmed_id(share.id) => Resolution::IgnoredConfirmed,
            None => {
                if !self.accepts_new_parent(share) {
                    return Resolution::IgnoredUnlinked;
                }
                self.install(share, now);
                Resolution::Inserted
            }
        }
    }

    fn accepts_new_parent(&self, share: &BlockShare) -> bool {
        match self.params.parent_rule {
            ParentRule::ParentIsPreferred => share.parent == self.preferred,
            ParentRule::CreatorMatchesPreferred => {
                let Some(parent) = self.lookup_header(&share.parent) else {
                    return false;
                };
                parent.creator == self.preferred_header().creator
            }
        }
    }

    /// Inserts the share as a local block with the node's own +1 on `vp`
    /// and makes it the preferred block.
    fn install(&mut self, share: &BlockShare, now: f64) {
        let header = share.header();
        let mut prop = share.prop;
        let key = (header.id, header.hash);
        let counted = self.counted.entry(key).or_default();
        if !counted.vp {
            prop.v += 1.0;
            counted.vp = true;
        }
        let block = Block::new(header, prop, share.agree);
        if let Some(parent) = self.cache.get_mut(&header.parent) {
            parent.children.insert(header.hash);
        }
        self.cache.insert(block);
        self.track(header.hash, now);
        self.preferred = header.hash;
    }

    fn track(&mut self, hash: BlockHash, now: f64) {
        let (lo, hi) = (self.params.timeout_lo, self.params.timeout_hi);
        let timeout = if hi > lo {
            self.rng.random_range(lo..=hi)
        } else {
            lo
        };
        self.progress.insert(
            hash,
            BlockProgress {
                timeout,
                deadline: now + timeout,
                ..Default::default()
            },
        );
    }

    fn rearm(&mut self, hash: &BlockHash, now: f64) {
        if let Some(p) = self.progress.get_mut(hash) {
            p.deadline = now + p.timeout;
        }
    }

    /// Depth-first removal of `hash` and all its descendants from the
    /// cache.
    pub fn fork_resolution(&mut self, hash: BlockHash, top_level: bool) {
        if top_level {
            self.forks.top_level += 1;
        } else {
            self.forks.recursive += 1;
        }
        let children: Vec<BlockHash> = self
            .cache
            .get(&hash)
            .map(|b| b.children.iter().copied().collect())
            .unwrap_or_default();
        for child in children {
            self.fork_resolution(child, false);
        }
        if let Some(block) = self.cache.remove(&hash) {
            if let Some(parent) = self.cache.get_mut(&block.header.parent) {
                parent.children.remove(&hash);
            }
        }
        self.progress.remove(&hash);
    }

    fn remove_subtree(&mut self, hash: BlockHash) {
        let children: Vec<BlockHash> = self
            .cache
            .get(&hash)
            .map(|b| b.children.iter().copied().collect())
            .unwrap_or_default();
        for child in children {
            self.remove_subtree(child);
        }
        if let Some(block) = self.cache.remove(&hash) {
            if let Some(parent) = self.cache.get_mut(&block.header.parent) {
                parent.children.remove(&hash);
            }
        }
        self.progress.remove(&hash);
    }

    /// Generation attempt on the first tick at or after each multiple of
    /// `t_block`.
    pub fn maybe_generate_block(&mut self, now: f64) -> Option<BlockHeader> {
        if now < self.next_generation {
            return None;
        }
        while self.next_generation <= now {
            self.next_generation += self.params.t_block;
        }
        let attempt = match self.params.proposers {
            Proposers::Random => self.rng.random::<f64>() < self.params.p_block,
            Proposers::Only(who) => who == self.id,
        };
        if !attempt {
            return None;
        }
        self.generate_block(now)
    }

    /// Creates a block on top of the preferred block unless some block
    /// already occupies the next id.
    pub fn generate_block(&mut self, now: f64) -> Option<BlockHeader> {
        let parent = self.preferred_header();
        let id = parent.id + 1;
        if self.cache.has_id(id) || self.is_confirmed_id(id) {
            return None;
        }
        let header = BlockHeader::new(id, self.id, now, parent.hash);
        let block = Block::new(
            header,
            EstimatorPair::new(1.0, 1.0),
            EstimatorPair::new(0.0, 1.0),
        );
        if let Some(p) = self.cache.get_mut(&parent.hash) {
            p.children.insert(header.hash);
        }
        self.cache.insert(block);
        self.counted.insert(
            (id, header.hash),
            Counted {
                vp: true,
                va: false,
            },
        );
        self.track(header.hash, now);
        self.preferred = header.hash;
        self.created.push(header);
        Some(header)
    }

    /// Runs the per-cycle estimator checks against the local size estimate
    /// and returns blocks confirmed by this call, in id order.
    pub fn update_phases(&mut self, now: f64) -> Vec<BlockHeader> {
        let Some(size) = self.system_size() else {
            return Vec::new();
        };
        let bound = self.params.epsilon * size;
        let psi = self.params.psi_cycles;
        let mut confirmed = Vec::new();
        for hash in self.cache.hashes_in_id_order() {
            let Some(block) = self.cache.get(&hash) else {
                continue;
            };
            let (phase, id, prop, agree) = (block.phase, block.id(), block.prop, block.agree);
            let progress = self.progress.entry(hash).or_default();
            match phase {
                Phase::Propagation => {
                    if prop.ratio(W_MIN).is_some_and(|r| (r - size).abs() <= bound) {
                        progress.prop_streak += 1;
                    } else {
                        progress.prop_streak = 0;
                    }
                    if progress.prop_streak >= psi {
                        let counted = self.counted.entry((id, hash)).or_default();
                        let add = !counted.va;
                        counted.va = true;
                        let block = self.cache.get_mut(&hash).expect("present");
                        block.advance(Phase::Agreement);
                        if add {
                            block.agree.v += 1.0;
                        }
                    }
                }
                Phase::Agreement => {
                    if agree
                        .ratio(W_MIN)
                        .is_some_and(|r| (r - size).abs() <= bound)
                    {
                        progress.agree_streak += 1;
                    } else {
                        progress.agree_streak = 0;
                    }
                    if progress.agree_streak >= psi && id == self.ledger.len() as u64 {
                        self.confirm(hash, now);
                        confirmed.push(self.ledger.tip().header);
                    }
                }
                Phase::Confirmed => {}
            }
        }
        confirmed
    }

    fn confirm(&mut self, hash: BlockHash, now: f64) {
        let header = self.cache.get(&hash).expect("present").header;
        let rivals: Vec<BlockHash> = self
            .cache
            .at_id(header.id)
            .copied()
            .filter(|h| *h != hash)
            .collect();
        for rival in rivals {
            self.remove_subtree(rival);
        }
        self.cache.confirm(&hash);
        self.progress.remove(&hash);
        self.ledger
            .append(header, now)
            .expect("confirmed block extends the ledger tip");
        let floor = header.id;
        self.counted.retain(|(id, _), _| *id > floor);
        if self.params.confirmed_retention == 0 {
            self.cache.remove(&hash);
        } else {
            let until = now + f64::from(self.params.confirmed_retention) * self.params.cycle_time;
            self.retained.insert(hash, until);
        }
    }

    /// Drops confirmed blocks whose retention has run out.
    fn release_confirmed(&mut self, now: f64) {
        let due: Vec<BlockHash> = self
            .retained
            .iter()
            .filter(|(_, until)| **until <= now)
            .map(|(h, _)| *h)
            .collect();
        for hash in due {
            self.retained.remove(&hash);
            self.cache.remove(&hash);
        }
    }

    /// Removes unconfirmed blocks whose deadline passed and which are not on
    /// the preferred chain.
    pub fn expire_watchdogs(&mut self, now: f64) {
        let on_chain = self.preferred_chain();
        let expired: Vec<BlockHash> = self
            .cache
            .iter()
            .filter(|b| b.phase != Phase::Confirmed && !on_chain.contains(&b.hash()))
            .filter(|b| {
                self.progress
                    .get(&b.hash())
                    .is_some_and(|p| p.deadline < now)
            })
            .map(Block::hash)
            .collect();
        for hash in expired {
            if self.cache.contains(&hash) {
                self.fork_resolution(hash, true);
            }
        }
    }

    /// The preferred block and its cached ancestors.
    fn preferred_chain(&self) -> Vec<BlockHash> {
        let mut chain = Vec::new();
        let mut cursor = Some(self.preferred);
        while let Some(hash) = cursor {
            match self.cache.get(&hash) {
                Some(b) => {
                    chain.push(hash);
                    cursor = Some(b.header.parent);
                }
                None => break,
            }
        }
        chain
    }

    /// Test and FFI hook: inserts a block exactly as given, bypassing the
    /// gossip path, and optionally prefers it.
    pub fn inject_block(&mut self, block: Block, prefer: bool, now: f64) {
        let header = block.header;
        if let Some(parent) = self.cache.get_mut(&header.parent) {
            parent.children.insert(header.hash);
        }
        self.counted.insert(
            (header.id, header.hash),
            Counted {
                vp: true,
                va: block.phase >= Phase::Agreement,
            },
        );
        self.cache.insert(block);
        self.track(header.hash, now);
        if prefer {
            self.preferred = header.hash;
        }
    }

    /// Test hook: forces the preferred block.
    pub fn set_preferred(&mut self, hash: BlockHash) {
        self.preferred = hash;
    }

    /// Test hook: appends to the ledger directly.
    pub fn force_confirm(&mut self, header: BlockHeader, now: f64) {
        if self.cache.contains(&header.hash) {
            self.confirm(header.hash, now);
        } else {
            self.ledger
                .append(header, now)
                .expect("forced block extends the ledger");
            if self.preferred_header().id < header.id {
                self.preferred = header.hash;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn params() -> BecpParams {
        BecpParams {
            timeout_lo: 1.0,
            timeout_hi: 2.0,
            ..BecpParams::default()
        }
    }

    fn node_with(id: u64, seed: bool, params: BecpParams, peers: &[u64]) -> BecpNode {
        let cache =
            PeerCache::from_ids(NodeId(id), params.n_cache, peers.iter().map(|&p| NodeId(p)));
        BecpNode::new(
            NodeId(id),
            seed,
            cache,
            params,
            ChaCha8Rng::seed_from_u64(id),
        )
    }

    fn node(id: u64, seed: bool) -> BecpNode {
        node_with(id, seed, params(), &[1, 2, 3])
    }

    fn share(h: &BlockHeader, prop: EstimatorPair, agree: EstimatorPair) -> BlockShare {
        BlockShare {
            id: h.id,
            creator: h.creator,
            created_at: h.created_at,
            parent: h.parent,
            prop,
            agree,
            phase: Phase::Propagation,
        }
    }

    fn msg(kind: MessageKind, ssep: EstimatorPair, shares: Vec<BlockShare>) -> ExchangeMessage {
        ExchangeMessage {
            kind,
            sender: NodeId(9),
            ssep_share: ssep,
            ncp_sample: Vec::new(),
            block_shares: shares,
        }
    }

    fn genesis() -> BlockHash {
        Ledger::new().tip().header.hash
    }

    /// Node with block 1 confirmed, returning the node and that block.
    fn with_confirmed_one() -> (BecpNode, BlockHeader) {
        let mut n = node(0, true);
        let b1 = BlockHeader::new(1, NodeId(4), 10.0, genesis());
        n.force_confirm(b1, 11.0);
        (n, b1)
    }

    #[test]
    fn tick_halves_ssep() {
        let mut n = node(0, true);
        let (_, push) = n.on_cycle_tick(0.0);
        let (_, m) = push.unwrap();
        assert_eq!(m.kind, MessageKind::Push);
        assert_eq!(m.ssep_share, EstimatorPair::new(0.5, 0.5));
        assert!(m.block_shares.is_empty());
        let (_, m) = n.on_cycle_tick(0.351).1.unwrap();
        assert_eq!(m.ssep_share, EstimatorPair::new(0.25, 0.25));
    }

    #[test]
    fn tick_halves_block_pairs() {
        let mut n = node(0, true);
        let h = n.generate_block(0.0).unwrap();
        let (_, m) = n.on_cycle_tick(0.1).1.unwrap();
        assert_eq!(m.block_shares.len(), 1);
        assert_eq!(m.block_shares[0].prop, EstimatorPair::new(0.5, 0.5));
        assert_eq!(m.block_shares[0].agree, EstimatorPair::new(0.0, 0.5));
        assert_eq!(
            n.cache().get(&h.hash).unwrap().prop,
            EstimatorPair::new(0.5, 0.5)
        );
    }

    #[test]
    fn push_adds_then_halves() {
        let mut n = node(0, false);
        n.set_ssep(EstimatorPair::new(0.5, 0.0));
        let (to, reply) = n.handle_push(
            &msg(MessageKind::Push, EstimatorPair::new(0.5, 0.5), vec![]),
            1.0,
        );
        assert_eq!(to, NodeId(9));
        assert_eq!(reply.kind, MessageKind::Pull);
        assert_eq!(reply.ssep_share, EstimatorPair::new(0.5, 0.25));
        assert_eq!(n.ssep(), EstimatorPair::new(0.5, 0.25));
    }

    #[test]
    fn pull_merges_without_reply() {
        let mut n = node(0, false);
        n.set_ssep(EstimatorPair::new(0.5, 0.25));
        n.handle_pull(
            &msg(MessageKind::Pull, EstimatorPair::new(0.5, 0.25), vec![]),
            1.0,
        );
        assert_eq!(n.ssep(), EstimatorPair::new(1.0, 0.5));
        assert!(n.cache().is_empty());
    }

    #[test]
    fn unknown_block_on_preferred_is_inserted() {
        let mut n = node(0, false);
        let h = BlockHeader::new(1, NodeId(3), 10.0, genesis());
        let r = n.resolve_duplicate_block_ids(
            &[share(&h, EstimatorPair::new(0.5, 0.5), EstimatorPair::ZERO)],
            10.5,
        );
        assert_eq!(r, vec![Resolution::Inserted]);
        assert_eq!(n.preferred(), h.hash);
        assert_eq!(
            n.cache().get(&h.hash).unwrap().prop,
            EstimatorPair::new(1.5, 0.5)
        );
        // A second copy merges without another +1.
        let r = n.resolve_duplicate_block_ids(
            &[share(
                &h,
                EstimatorPair::new(0.25, 0.25),
                EstimatorPair::new(0.0, 0.5),
            )],
            10.6,
        );
        assert_eq!(r, vec![Resolution::Merged]);
        let b = n.cache().get(&h.hash).unwrap();
        assert_eq!(b.prop, EstimatorPair::new(1.75, 0.75));
        assert_eq!(b.agree, EstimatorPair::new(0.0, 0.5));
    }

    #[test]
    fn unknown_block_off_preferred_is_ignored() {
        let mut n = node(0, false);
        let h = BlockHeader::new(2, NodeId(3), 10.0, BlockHash([5; 32]));
        let r = n.resolve_duplicate_block_ids(
            &[share(&h, EstimatorPair::new(0.5, 0.5), EstimatorPair::ZERO)],
            10.5,
        );
        assert_eq!(r, vec![Resolution::IgnoredUnlinked]);
        assert!(n.cache().is_empty());
    }

    #[test]
    fn confirmed_id_ignores_rival() {
        let (mut n, b1) = with_confirmed_one();
        let rival = BlockHeader::new(1, NodeId(2), 9.0, genesis());
        let r = n.resolve_duplicate_block_ids(
            &[share(
                &rival,
                EstimatorPair::new(1.0, 1.0),
                EstimatorPair::ZERO,
            )],
            12.0,
        );
        assert_eq!(r, vec![Resolution::IgnoredConfirmed]);
        assert_eq!(n.ledger().get(1).unwrap().header, b1);
    }

    #[test]
    fn earlier_rival_triggers_fork_resolution() {
        let (mut n, b1) = with_confirmed_one();
        let cached = BlockHeader::new(2, NodeId(3), 12.0, b1.hash);
        n.resolve_duplicate_block_ids(
            &[share(
                &cached,
                EstimatorPair::new(0.5, 0.5),
                EstimatorPair::ZERO,
            )],
            12.0,
        );
        assert_eq!(n.preferred(), cached.hash);
        let incoming = BlockHeader::new(2, NodeId(1), 11.0, b1.hash);
        let r = n.resolve_duplicate_block_ids(
            &[share(
                &incoming,
                EstimatorPair::new(0.5, 0.5),
                EstimatorPair::ZERO,
            )],
            12.5,
        );
        assert_eq!(r, vec![Resolution::Replaced]);
        assert_eq!(n.preferred(), incoming.hash);
        assert!(!n.cache().contains(&cached.hash));
        assert_eq!(
            n.forks(),
            ForkCounters {
                top_level: 1,
                recursive: 0
            }
        );
        assert_eq!(
            n.cache().get(&incoming.hash).unwrap().prop,
            EstimatorPair::new(1.5, 0.5)
        );
    }

    #[test]
    fn duplicate_id_order_table() {
        // Cached block at (t = 12, o = 3); every incoming (t, o) around it.
        for t in [11.0, 12.0, 13.0] {
            for o in [1, 3, 5] {
                let (mut n, b1) = with_confirmed_one();
                let cached = BlockHeader::new(2, NodeId(3), 12.0, b1.hash);
                n.resolve_duplicate_block_ids(
                    &[share(
                        &cached,
                        EstimatorPair::new(0.5, 0.5),
                        EstimatorPair::ZERO,
                    )],
                    12.0,
                );
                let incoming = BlockHeader::new(2, NodeId(o), t, b1.hash);
                let r = n.resolve_duplicate_block_ids(
                    &[share(
                        &incoming,
                        EstimatorPair::new(0.5, 0.5),
                        EstimatorPair::ZERO,
                    )],
                    13.0,
                );
                let expected = if t == 12.0 && o == 3 {
                    Resolution::Merged
                } else if t < 12.0 || (t == 12.0 && o < 3) {
                    Resolution::Replaced
                } else {
                    Resolution::IgnoredLoser
                };
                assert_eq!(r, vec![expected], "incoming t = {t}, o = {o}");
                let winner = if expected == Resolution::Replaced {
                    incoming.hash
                } else {
                    cached.hash
                };
                assert_eq!(n.preferred(), winner);
            }
        }
    }

    #[test]
    fn winner_on_foreign_parent_is_ignored() {
        let (mut n, b1) = with_confirmed_one();
        let cached = BlockHeader::new(2, NodeId(3), 12.0, b1.hash);
        n.resolve_duplicate_block_ids(
            &[share(
                &cached,
                EstimatorPair::new(0.5, 0.5),
                EstimatorPair::ZERO,
            )],
            12.0,
        );
        let incoming = BlockHeader::new(2, NodeId(1), 11.0, BlockHash([8; 32]));
        let r = n.resolve_duplicate_block_ids(
            &[share(
                &incoming,
                EstimatorPair::new(0.5, 0.5),
                EstimatorPair::ZERO,
            )],
            12.5,
        );
        assert_eq!(r, vec![Resolution::IgnoredUnlinked]);
        assert_eq!(n.preferred(), cached.hash);
    }

    fn chain_node() -> (BecpNode, Vec<BlockHeader>) {
        let mut n = node(0, true);
        let mut headers = Vec::new();
        for _ in 0..3 {
            headers.push(n.generate_block(headers.len() as f64).unwrap());
        }
        (n, headers)
    }

    #[test]
    fn fork_resolution_removes_descendants() {
        let (mut n, hs) = chain_node();
        n.fork_resolution(hs[0].hash, true);
        assert!(n.cache().is_empty());
        assert_eq!(
            n.forks(),
            ForkCounters {
                top_level: 1,
                recursive: 2
            }
        );
    }

    #[test]
    fn fork_resolution_of_leaf() {
        let (mut n, hs) = chain_node();
        n.fork_resolution(hs[2].hash, true);
        assert_eq!(n.cache().len(), 2);
        assert!(n.cache().get(&hs[1].hash).unwrap().children.is_empty());
    }

    #[test]
    fn fork_resolution_leaves_no_orphans() {
        let (mut n, hs) = chain_node();
        n.fork_resolution(hs[1].hash, true);
        for b in n.cache().iter() {
            assert!(b.header.parent == genesis() || n.cache().contains(&b.header.parent));
        }
        assert_eq!(n.cache().len(), 1);
    }

    #[test]
    fn generation_extends_preferred() {
        let (mut n, hs) = chain_node();
        let next = n.generate_block(5.0).unwrap();
        assert_eq!(next.id, 4);
        assert_eq!(next.parent, hs[2].hash);
        assert_eq!(n.preferred(), next.hash);
        let b = n.cache().get(&next.hash).unwrap();
        assert_eq!(
            (b.prop, b.agree, b.phase),
            (
                EstimatorPair::new(1.0, 1.0),
                EstimatorPair::new(0.0, 1.0),
                Phase::Propagation
            )
        );
    }

    #[test]
    fn generation_waits_when_next_id_is_taken() {
        let (mut n, hs) = chain_node();
        let other = BlockHeader::new(4, NodeId(7), 4.0, hs[2].hash);
        n.inject_block(
            Block::new(other, EstimatorPair::new(1.0, 1.0), EstimatorPair::ZERO),
            false,
            4.0,
        );
        n.set_preferred(hs[2].hash);
        assert_eq!(n.generate_block(5.0), None);
    }

    #[test]
    fn zero_probability_never_generates() {
        let mut n = node_with(
            0,
            true,
            BecpParams {
                p_block: 0.0,
                ..params()
            },
            &[1],
        );
        for k in 0..2000 {
            assert_eq!(n.maybe_generate_block(k as f64 * 0.351), None);
        }
    }

    #[test]
    fn generation_only_at_interval_boundaries() {
        let mut n = node_with(
            0,
            true,
            BecpParams {
                p_block: 1.0,
                ..params()
            },
            &[1],
        );
        assert_eq!(n.maybe_generate_block(9.99), None);
        assert!(n.maybe_generate_block(10.2).is_some());
        assert_eq!(n.maybe_generate_block(10.5), None);
        assert!(n.maybe_generate_block(20.1).is_some());
    }

    #[test]
    fn single_node_confirms_after_two_psi_cycles() {
        let p = params();
        let mut n = node_with(0, true, p, &[]);
        let h = n.generate_block(0.0).unwrap();
        let mut ticks = 0;
        while n.ledger().len() < 2 {
            ticks += 1;
            let (confirmed, push) = n.on_cycle_tick(ticks as f64 * p.cycle_time);
            assert!(push.is_none());
            if ticks == 2 * p.psi_cycles {
                assert_eq!(confirmed, vec![h]);
            }
            assert!(
                ticks <= 2 * p.psi_cycles,
                "not confirmed after {ticks} ticks"
            );
        }
        assert_eq!(ticks, 2 * p.psi_cycles);
    }

    #[test]
    fn zero_weight_blocks_never_advance() {
        let mut n = node_with(0, true, params(), &[]);
        let h = BlockHeader::new(1, NodeId(0), 0.0, genesis());
        n.inject_block(
            Block::new(h, EstimatorPair::new(1.0, 0.0), EstimatorPair::ZERO),
            true,
            0.0,
        );
        for k in 1..30 {
            n.update_phases(k as f64);
        }
        assert_eq!(n.progress(&h.hash).unwrap().prop_streak, 0);
        assert_eq!(n.cache().get(&h.hash).unwrap().phase, Phase::Propagation);
    }

    #[test]
    fn unavailable_size_skips_checks() {
        let mut n = node_with(0, false, params(), &[]);
        assert_eq!(n.system_size(), None);
        let h = n.generate_block(0.0).unwrap();
        for k in 1..30 {
            assert!(n.update_phases(k as f64).is_empty());
        }
        assert_eq!(n.progress(&h.hash).unwrap().prop_streak, 0);
    }

    #[test]
    fn merged_block_never_expires() {
        let mut n = node(0, false);
        let h = BlockHeader::new(1, NodeId(3), 0.0, genesis());
        let s = share(&h, EstimatorPair::new(0.1, 0.1), EstimatorPair::ZERO);
        n.resolve_duplicate_block_ids(&[s], 0.0);
        n.set_preferred(genesis());
        for k in 1..100 {
            let now = k as f64 * 0.351;
            n.resolve_duplicate_block_ids(&[s], now);
            n.expire_watchdogs(now);
        }
        assert!(n.cache().contains(&h.hash));
    }

    #[test]
    fn stale_rival_expires() {
        let (mut n, b1) = with_confirmed_one();
        let stale = BlockHeader::new(2, NodeId(3), 12.0, b1.hash);
        n.inject_block(
            Block::new(stale, EstimatorPair::new(1.0, 1.0), EstimatorPair::ZERO),
            false,
            12.0,
        );
        n.expire_watchdogs(12.99);
        assert!(
            n.cache().contains(&stale.hash),
            "deadline is at least one second out"
        );
        n.expire_watchdogs(14.01);
        assert!(!n.cache().contains(&stale.hash));
        assert_eq!(n.forks().top_level, 1);
    }

    #[test]
    fn preferred_chain_never_expires() {
        let (mut n, hs) = chain_node();
        n.expire_watchdogs(1000.0);
        for h in hs {
            assert!(n.cache().contains(&h.hash));
        }
    }

    fn confirm_alone(retention: u32) -> (BecpNode, BlockHeader, f64) {
        let p = BecpParams {
            confirmed_retention: retention,
            ..params()
        };
        let mut n = node_with(0, true, p, &[]);
        let h = n.generate_block(0.0).unwrap();
        let mut now = 0.0;
        while n.ledger().len() < 2 {
            now += p.cycle_time;
            n.on_cycle_tick(now);
        }
        (n, h, now)
    }

    #[test]
    fn confirmed_block_is_retained_then_released() {
        let (mut n, h, at) = confirm_alone(3);
        assert_eq!(n.cache().get(&h.hash).unwrap().phase, Phase::Confirmed);
        n.on_cycle_tick(at + 2.0 * 0.351);
        assert!(n.cache().contains(&h.hash));
        n.on_cycle_tick(at + 3.0 * 0.351 + 1e-9);
        assert!(!n.cache().contains(&h.hash));
        assert_eq!(n.ledger().tip().header, h);
    }

    #[test]
    fn zero_retention_drops_at_confirmation() {
        let (n, h, _) = confirm_alone(0);
        assert!(!n.cache().contains(&h.hash));
        assert_eq!(n.preferred(), h.hash);
        assert_eq!(n.preferred_header(), h);
    }

    #[test]
    fn confirmation_purges_rivals() {
        let p = params();
        let mut n = node_with(0, true, p, &[]);
        let h = n.generate_block(0.0).unwrap();
        let rival = BlockHeader::new(1, NodeId(5), 3.0, genesis());
        n.inject_block(
            Block::new(rival, EstimatorPair::new(1.0, 1.0), EstimatorPair::ZERO),
            false,
            0.0,
        );
        let mut now = 0.0;
        while n.ledger().len() < 2 {
            now += p.cycle_time;
            n.resolve_duplicate_block_ids(
                &[share(&rival, EstimatorPair::ZERO, EstimatorPair::ZERO)],
                now,
            );
            n.on_cycle_tick(now);
        }
        assert_eq!(n.ledger().tip().header, h);
        assert!(!n.cache().contains(&rival.hash));
    }
}

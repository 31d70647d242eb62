//! Shared data model: node ids, estimator pairs, blocks, the block local
//! cache, the confirmed ledger and the exchange messages gossiped between
//! nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};

/// Identifier of a simulated participant. Ordered, because duplicate-id
/// tie-breaks compare creators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A 32-byte SHA-256 digest identifying a block.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockHash(pub [u8; 32]);

impl BlockHash {
    pub const ZERO: BlockHash = BlockHash([0u8; 32]);

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Digest over the canonical little-endian encoding
/// `id:u64 | creator:u64 | created_at:f64 | parent:[u8; 32]`.
pub fn compute_block_hash(
    id: u64,
    creator: NodeId,
    created_at: f64,
    parent: &BlockHash,
) -> BlockHash {
    let mut hasher = Sha256::new();
    hasher.update(id.to_le_bytes());
    hasher.update(creator.0.to_le_bytes());
    hasher.update(created_at.to_le_bytes());
    hasher.update(parent.0);
    BlockHash(hasher.finalize().into())
}

/// A `(value, weight)` pair taking part in conservative push-sum averaging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EstimatorPair {
    pub v: f64,
    pub w: f64,
}

impl EstimatorPair {
    pub const ZERO: EstimatorPair = EstimatorPair { v: 0.0, w: 0.0 };

    pub const fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    /// Splits the pair into the half kept locally and the half sent away.
    /// Division by two is exact in binary floating point, so the halves
    /// always sum back to the original.
    pub fn halve(self) -> (EstimatorPair, EstimatorPair) {
        let half = EstimatorPair::new(self.v / 2.0, self.w / 2.0);
        (half, half)
    }

    pub fn merge(self, other: EstimatorPair) -> EstimatorPair {
        EstimatorPair::new(self.v + other.v, self.w + other.w)
    }

    /// `v / w` once the weight exceeds `w_min`.
    pub fn ratio(self, w_min: f64) -> Option<f64> {
        (self.w > w_min).then(|| self.v / self.w)
    }
}

impl std::ops::Add for EstimatorPair {
    type Output = EstimatorPair;

    fn add(self, rhs: EstimatorPair) -> EstimatorPair {
        self.merge(rhs)
    }
}

impl std::ops::AddAssign for EstimatorPair {
    fn add_assign(&mut self, rhs: EstimatorPair) {
        *self = self.merge(rhs);
    }
}

/// Consensus phase of a block at one node. Transitions only move forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Propagation,
    Agreement,
    Confirmed,
}

/// The immutable identity of a block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockHeader {
    pub id: u64,
    pub creator: NodeId,
    pub created_at: f64,
    pub parent: BlockHash,
    pub hash: BlockHash,
}

impl BlockHeader {
    pub fn new(id: u64, creator: NodeId, created_at: f64, parent: BlockHash) -> Self {
        let hash = compute_block_hash(id, creator, created_at, &parent);
        Self {
            id,
            creator,
            created_at,
            parent,
            hash,
        }
    }

    pub fn genesis() -> Self {
        Self::new(0, NodeId(0), 0.0, BlockHash::ZERO)
    }

    pub fn is_genesis(&self) -> bool {
        self.id == 0
    }

    /// Whether the stored hash matches the header fields.
    pub fn verify_hash(&self) -> bool {
        compute_block_hash(self.id, self.creator, self.created_at, &self.parent) == self.hash
    }

    /// Same `(id, t, o)` triple: the block is a copy of `other`.
    pub fn same_identity(&self, other_id: u64, other_t: f64, other_creator: NodeId) -> bool {
        self.id == other_id && self.created_at == other_t && self.creator == other_creator
    }
}

/// A block as held in one node's local cache, with that node's estimator
/// pairs and phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub header: BlockHeader,
    /// Propagation estimator `(vp, wp)`.
    pub prop: EstimatorPair,
    /// Agreement estimator `(va, wa)`.
    pub agree: EstimatorPair,
    pub phase: Phase,
    pub children: BTreeSet<BlockHash>,
}

impl Block {
    pub fn new(header: BlockHeader, prop: EstimatorPair, agree: EstimatorPair) -> Self {
        Self {
            header,
            prop,
            agree,
            phase: Phase::Propagation,
            children: BTreeSet::new(),
        }
    }

    pub fn genesis() -> Self {
        Self {
            header: BlockHeader::genesis(),
            prop: EstimatorPair::ZERO,
            agree: EstimatorPair::ZERO,
            phase: Phase::Confirmed,
            children: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.header.id
    }

    pub fn hash(&self) -> BlockHash {
        self.header.hash
    }

    /// Forward-only phase change; returns false (and leaves the phase
    /// untouched) for a backwards or no-op transition.
    pub fn advance(&mut self, to: Phase) -> bool {
        if to > self.phase {
            self.phase = to;
            true
        } else {
            false
        }
    }
}

/// Block local cache `C_b`: candidate blocks keyed by hash plus an index
/// from id to the hashes stored at that id.
///
/// Ordered maps keep every iteration deterministic.
#[derive(Clone, Debug, Default)]
pub struct BlockLocalCache {
    entries: BTreeMap<BlockHash, Block>,
    by_id: BTreeMap<u64, BTreeSet<BlockHash>>,
}

impl BlockLocalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, hash: &BlockHash) -> Option<&Block> {
        self.entries.get(hash)
    }

    pub fn get_mut(&mut self, hash: &BlockHash) -> Option<&mut Block> {
        self.entries.get_mut(hash)
    }

    pub fn contains(&self, hash: &BlockHash) -> bool {
        self.entries.contains_key(hash)
    }

    /// Hashes stored at `id`, in hash order.
    pub fn at_id(&self, id: u64) -> impl Iterator<Item = &BlockHash> + '_ {
        self.by_id.get(&id).into_iter().flatten()
    }

    pub fn first_at_id(&self, id: u64) -> Option<&Block> {
        self.at_id(id).next().and_then(|h| self.entries.get(h))
    }

    pub fn has_id(&self, id: u64) -> bool {
        self.by_id.get(&id).is_some_and(|s| !s.is_empty())
    }

    /// Inserts a block. A Confirmed block is refused when another Confirmed
    /// block already occupies its id.
    pub fn insert(&mut self, block: Block) -> bool {
        let id = block.id();
        let hash = block.hash();
        if block.phase == Phase::Confirmed
            && self
                .at_id(id)
                .any(|h| *h != hash && self.entries[h].phase == Phase::Confirmed)
        {
            return false;
        }
        self.by_id.entry(id).or_default().insert(hash);
        self.entries.insert(hash, block);
        true
    }

    pub fn remove(&mut self, hash: &BlockHash) -> Option<Block> {
        let block = self.entries.remove(hash)?;
        if let Some(set) = self.by_id.get_mut(&block.id()) {
            set.remove(hash);
            if set.is_empty() {
                self.by_id.remove(&block.id());
            }
        }
        Some(block)
    }

    /// Marks a block Confirmed. Refused if a different block at the same id
    /// is already Confirmed.
    pub fn confirm(&mut self, hash: &BlockHash) -> bool {
        let Some(id) = self.entries.get(hash).map(Block::id) else {
            return false;
        };
        if self
            .at_id(id)
            .any(|h| h != hash && self.entries[h].phase == Phase::Confirmed)
        {
            return false;
        }
        self.entries.get_mut(hash).is_some_and(|b| {
            b.advance(Phase::Confirmed);
            true
        })
    }

    /// Blocks in `(id, hash)` order.
    pub fn iter(&self) -> impl Iterator<Item = &Block> + '_ {
        self.by_id.values().flatten().map(|h| &self.entries[h])
    }

    pub fn hashes_in_id_order(&self) -> Vec<BlockHash> {
        self.by_id.values().flatten().copied().collect()
    }

    pub fn max_id(&self) -> Option<u64> {
        self.by_id.keys().next_back().copied()
    }
}

/// A block recorded in a node's ledger together with the instant the node
/// confirmed it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfirmedBlock {
    pub header: BlockHeader,
    pub confirmed_at: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LedgerError {
    NotContiguous { expected: u64, got: u64 },
    ParentMismatch { id: u64 },
    BadHash { id: u64 },
    MissingGenesis,
}

impl fmt::Display for LedgerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LedgerError::NotContiguous { expected, got } => {
                write!(f, "ledger id {got} where {expected} was expected")
            }
            LedgerError::ParentMismatch { id } => {
                write!(f, "block {id} does not reference its predecessor")
            }
            LedgerError::BadHash { id } => write!(f, "block {id} hash does not match its fields"),
            LedgerError::MissingGenesis => f.write_str("ledger does not start at genesis"),
        }
    }
}

impl std::error::Error for LedgerError {}

/// Ordered list of confirmed blocks starting at genesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    blocks: Vec<ConfirmedBlock>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    pub fn new() -> Self {
        Self {
            blocks: vec![ConfirmedBlock {
                header: BlockHeader::genesis(),
                confirmed_at: 0.0,
            }],
        }
    }

    /// Wraps an arbitrary block list without validation; `verify` reports
    /// any defect.
    pub fn from_blocks(blocks: Vec<ConfirmedBlock>) -> Self {
        Self { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &ConfirmedBlock {
        self.blocks.last().expect("ledger always holds genesis")
    }

    pub fn get(&self, id: u64) -> Option<&ConfirmedBlock> {
        self.blocks.get(usize::try_from(id).ok()?)
    }

    pub fn blocks(&self) -> &[ConfirmedBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ConfirmedBlock] {
        &mut self.blocks
    }

    /// Appends `header` if it extends the tip.
    pub fn append(&mut self, header: BlockHeader, confirmed_at: f64) -> Result<(), LedgerError> {
        let tip = self.tip().header;
        if header.id != tip.id + 1 {
            return Err(LedgerError::NotContiguous {
                expected: tip.id + 1,
                got: header.id,
            });
        }
        if header.parent != tip.hash {
            return Err(LedgerError::ParentMismatch { id: header.id });
        }
        self.blocks.push(ConfirmedBlock {
            header,
            confirmed_at,
        });
        Ok(())
    }

    /// Checks genesis, contiguous ids, per-block hashes and parent links.
    pub fn verify(&self) -> Result<(), LedgerError> {
        match self.blocks.first() {
            Some(g) if g.header == BlockHeader::genesis() => {}
            _ => return Err(LedgerError::MissingGenesis),
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            let (prev, next) = (&pair[0].header, &pair[1].header);
            let expected = i as u64 + 1;
            if next.id != expected {
                return Err(LedgerError::NotContiguous {
                    expected,
                    got: next.id,
                });
            }
            if !next.verify_hash() {
                return Err(LedgerError::BadHash { id: next.id });
            }
            if next.parent != prev.hash {
                return Err(LedgerError::ParentMismatch { id: next.id });
            }
        }
        Ok(())
    }

    /// One ledger is a prefix of the other, compared by hash.
    pub fn prefix_consistent(&self, other: &Ledger) -> bool {
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .all(|(a, b)| a.header.hash == b.header.hash)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    Push,
    Pull,
}

/// Block metadata plus the sender's halved estimator shares.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockShare {
    pub id: u64,
    pub creator: NodeId,
    pub created_at: f64,
    pub parent: BlockHash,
    pub prop: EstimatorPair,
    pub agree: EstimatorPair,
    pub phase: Phase,
}

impl BlockShare {
    pub fn header(&self) -> BlockHeader {
        BlockHeader::new(self.id, self.creator, self.created_at, self.parent)
    }
}

/// Push or Pull payload. One message carries all three sub-protocols.
#[derive(Clone, Debug, PartialEq)]
pub struct ExchangeMessage {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub ssep_share: EstimatorPair,
    pub ncp_sample: Vec<NodeId>,
    pub block_shares: Vec<BlockShare>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genesis_digest_is_fixed() {
        // SHA-256 over 56 zero bytes.
        assert_eq!(
            BlockHeader::genesis().hash.to_hex(),
            "d4817aa5497628e7c77e6b606107042bbba3130888c5f47a375e6179be789fbb"
        );
    }

    #[test]
    fn hash_is_deterministic() {
        let g = BlockHeader::genesis().hash;
        assert_eq!(
            compute_block_hash(1, NodeId(3), 10.0, &g),
            compute_block_hash(1, NodeId(3), 10.0, &g)
        );
    }

    #[test]
    fn creator_changes_digest() {
        // Reference digests computed with Python's hashlib over the same
        // little-endian encoding.
        let g = BlockHeader::genesis().hash;
        let a = compute_block_hash(1, NodeId(3), 10.0, &g);
        let b = compute_block_hash(1, NodeId(4), 10.0, &g);
        assert_ne!(a, b);
        assert_eq!(a.to_hex(), GENESIS_CHILD_BY_3);
        assert_eq!(b.to_hex(), GENESIS_CHILD_BY_4);
    }

    const GENESIS_CHILD_BY_3: &str =
        "898046537c8144e3bedddeb1241200378faaf2a60f6632d9ffb7fcd6ae57aeaa";
    const GENESIS_CHILD_BY_4: &str =
        "e46dda928633c143768e51a59931a8ff090fbaa1988eee2058e5e91989d57935";

    #[test]
    fn halve_and_merge_are_inverse() {
        let p = EstimatorPair::new(0.7, 0.3);
        let (kept, sent) = p.halve();
        assert_eq!(kept.merge(sent), p);
        assert_eq!(
            EstimatorPair::new(0.5, 0.5) + EstimatorPair::new(0.5, 0.0),
            EstimatorPair::new(1.0, 0.5)
        );
    }

    #[test]
    fn phase_only_moves_forward() {
        let mut b = Block::new(
            BlockHeader::new(1, NodeId(1), 1.0, BlockHeader::genesis().hash),
            EstimatorPair::ZERO,
            EstimatorPair::ZERO,
        );
        assert!(b.advance(Phase::Agreement));
        assert!(!b.advance(Phase::Propagation));
        assert!(b.advance(Phase::Confirmed));
        assert!(!b.advance(Phase::Agreement));
        assert_eq!(b.phase, Phase::Confirmed);
    }

    #[test]
    fn cache_refuses_second_confirmed_block_at_id() {
        let g = BlockHeader::genesis().hash;
        let mut cache = BlockLocalCache::new();
        let mut a = Block::new(
            BlockHeader::new(1, NodeId(1), 1.0, g),
            EstimatorPair::ZERO,
            EstimatorPair::ZERO,
        );
        a.phase = Phase::Confirmed;
        let mut b = Block::new(
            BlockHeader::new(1, NodeId(2), 1.0, g),
            EstimatorPair::ZERO,
            EstimatorPair::ZERO,
        );
        assert!(cache.insert(a));
        assert!(cache.insert(b.clone()));
        assert!(!cache.confirm(&b.hash()));
        b.phase = Phase::Confirmed;
        assert!(!cache.insert(b));
        assert_eq!(
            cache.iter().filter(|x| x.phase == Phase::Confirmed).count(),
            1
        );
    }

    #[test]
    fn ledger_append_and_verify() {
        let mut ledger = Ledger::new();
        let b1 = BlockHeader::new(1, NodeId(2), 10.0, ledger.tip().header.hash);
        ledger.append(b1, 19.0).unwrap();
        let b2 = BlockHeader::new(2, NodeId(5), 20.0, b1.hash);
        ledger.append(b2, 29.0).unwrap();
        assert!(ledger.verify().is_ok());
        let orphan = BlockHeader::new(3, NodeId(1), 30.0, b1.hash);
        assert_eq!(
            ledger.append(orphan, 31.0),
            Err(LedgerError::ParentMismatch { id: 3 })
        );
        let skip = BlockHeader::new(4, NodeId(1), 30.0, b2.hash);
        assert!(matches!(
            ledger.append(skip, 31.0),
            Err(LedgerError::NotContiguous { .. })
        ));
    }

    #[test]
    fn tampered_parent_fails_verification() {
        let mut ledger = Ledger::new();
        let b1 = BlockHeader::new(1, NodeId(2), 10.0, ledger.tip().header.hash);
        ledger.append(b1, 19.0).unwrap();
        ledger.blocks_mut()[1].header.parent = BlockHash([7u8; 32]);
        assert!(ledger.verify().is_err());
    }
}

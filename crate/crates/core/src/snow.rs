//! Chain-structured Snowman and Avalanche baselines.
//!
//! Each cycle a node polls `k` distinct peers drawn from the full membership
//! about its frontier, the lowest height it has not accepted. A query carries
//! the querier's preferred block there and a response the responder's, so
//! blocks spread through polling alone. A poll closes when its `k` responses
//! are in, or at `round_timeout` when that is set.
//!
//! Rival blocks at one height are ranked by a tree of binary Snowball
//! instances over the bits of their hashes. A multi-way split where no block
//! reaches the quorum still resolves, because each bit splits the votes in
//! two.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BlockHash, BlockHeader, Ledger, NodeId};
use crate::sim::{
    network_rng, node_rng, EventQueue, MessageCounts, Protocol, ProtocolParams, RunConfig,
    RunResult,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnowVariant {
    Snowman,
    Avalanche,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnowParams {
    pub variant: SnowVariant,
    /// Sample size.
    pub k: usize,
    /// Quorum for a successful poll.
    pub alpha1: usize,
    /// Snowman: votes the accepting poll must reach.
    pub alpha2: usize,
    /// Snowman: consecutive successes to accept. Avalanche: unanimous
    /// successes to accept a block with no known rival.
    pub beta1: u32,
    /// Avalanche: consecutive successes to accept a contested block.
    pub beta2: u32,
    pub cycle_time: f64,
    pub t_block: f64,
    pub p_block: f64,
    pub processing_delay: f64,
    /// Close a poll after this long even if responses are missing.
    pub round_timeout: Option<f64>,
}

impl SnowParams {
    pub fn snowman() -> Self {
        Self {
            variant: SnowVariant::Snowman,
            k: 20,
            alpha1: 10,
            alpha2: 15,
            beta1: 15,
            beta2: 15,
            cycle_time: 0.351,
            t_block: 10.0,
            p_block: 0.05,
            processing_delay: 0.05,
            round_timeout: None,
        }
    }

    pub fn avalanche() -> Self {
        Self {
            variant: SnowVariant::Avalanche,
            alpha1: 16,
            alpha2: 16,
            beta1: 50,
            beta2: 150,
            ..Self::snowman()
        }
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if n_nodes < 2 {
            return Err(Error::config(
                "nodes",
                "snow baselines need at least 2 nodes",
            ));
        }
        for (key, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if a == 0 || a > self.k {
                return Err(Error::config(
                    key,
                    format!("must lie in [1, k = {}]", self.k),
                ));
            }
        }
        if self.beta1 == 0 {
            return Err(Error::config("beta1", "must be at least 1"));
        }
        if self.beta2 == 0 {
            return Err(Error::config("beta2", "must be at least 1"));
        }
        if !(self.cycle_time > 0.0) {
            return Err(Error::config("cycle_time", "must be positive"));
        }
        if !(self.t_block > 0.0) {
            return Err(Error::config("t_block", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_block) {
            return Err(Error::config("p_block", "must lie in [0, 1]"));
        }
        if !(self.processing_delay >= 0.0) {
            return Err(Error::config("d1", "must be non-negative"));
        }
        if self.round_timeout.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("round_timeout", "must be positive"));
        }
        Ok(())
    }
}

/// Snowball counters for one height.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HeightState {
    /// Block named by the last successful poll.
    pub last: Option<BlockHash>,
    /// Votes it received in that poll.
    pub last_votes: usize,
    pub consecutive: u32,
    /// Consecutive polls in which every response named `last`.
    pub unanimous: u32,
}

/// Votes gathered by one poll: `(height, block, count)`.
pub type Tally = Vec<(u64, BlockHash, usize)>;

#[derive(Clone, Debug)]
struct Poll {
    height: u64,
    expected: usize,
    received: usize,
    votes: Tally,
}

#[derive(Clone, Debug)]
pub struct SnowNode {
    id: NodeId,
    params: SnowParams,
    rng: ChaCha8Rng,
    known: HashMap<BlockHash, BlockHeader>,
    /// Known undecided blocks per height, first seen first.
    by_height: BTreeMap<u64, Vec<BlockHash>>,
    confidence: HashMap<BlockHash, u32>,
    /// Binary Snowball confidences keyed by `(height, bit, prefix)`.
    branches: HashMap<(u64, u16, BlockHash), [u32; 2]>,
    heights: BTreeMap<u64, HeightState>,
    ledger: Ledger,
    chain: Option<Rc<[BlockHeader]>>,
    next_generation: f64,
    polls: HashMap<u64, Poll>,
    next_poll: u64,
    created: Vec<BlockHeader>,
}

impl SnowNode {
    pub fn new(id: NodeId, params: SnowParams, rng: ChaCha8Rng) -> Self {
        Self {
            id,
            params,
            rng,
            known: HashMap::new(),
            by_height: BTreeMap::new(),
            confidence: HashMap::new(),
            branches: HashMap::new(),
            heights: BTreeMap::new(),
            ledger: Ledger::new(),
            chain: None,
            next_generation: params.t_block,
            polls: HashMap::new(),
            next_poll: 0,
            created: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    pub fn created(&self) -> &[BlockHeader] {
        &self.created
    }

    /// Lowest height not yet accepted.
    pub fn frontier(&self) -> u64 {
        self.ledger.len() as u64
    }

    pub fn confidence(&self, hash: &BlockHash) -> u32 {
        self.confidence.get(hash).copied().unwrap_or(0)
    }

    pub fn height_state(&self, height: u64) -> HeightState {
        self.heights.get(&height).copied().unwrap_or_default()
    }

    pub fn knows(&self, hash: &BlockHash) -> bool {
        self.known.contains_key(hash)
    }

    /// Known children of `parent` at `height`, first seen first.
    fn children(&self, height: u64, parent: &BlockHash) -> Vec<BlockHash> {
        let known = &self.known;
        self.by_height
            .get(&height)
            .into_iter()
            .flatten()
            .filter(|h| known[*h].parent == *parent)
            .copied()
            .collect()
    }

    /// Walks the bit tree: at each bit where the candidates split, keep the
    /// side with more confidence, ties to the side of the first seen.
    fn preferred_child(&self, height: u64, parent: &BlockHash) -> Option<BlockHeader> {
        let mut set = self.children(height, parent);
        let mut from = 0;
        while let Some(bit) = first_split(&set, from) {
            let conf = self.branch(height, bit, &set[0]);
            let side = match conf[0].cmp(&conf[1]) {
                std::cmp::Ordering::Greater => 0,
                std::cmp::Ordering::Less => 1,
                std::cmp::Ordering::Equal => hash_bit(&set[0], bit),
            };
            set.retain(|h| hash_bit(h, bit) == side);
            from = bit + 1;
        }
        set.first().map(|h| self.known[h])
    }

    /// Confidences of the branch at `bit` under the prefix of `member`.
    pub fn branch(&self, height: u64, bit: u16, member: &BlockHash) -> [u32; 2] {
        self.branches
            .get(&(height, bit, prefix(member, bit)))
            .copied()
            .unwrap_or_default()
    }

    /// Credits every branch along the path where one side reaches the
    /// quorum, stopping at the first branch that misses it.
    fn record_branches(
        &mut self,
        height: u64,
        mut set: Vec<BlockHash>,
        votes: &[(u64, BlockHash, usize)],
    ) {
        let mut from = 0;
        while let Some(bit) = first_split(&set, from) {
            let mut count = [0usize; 2];
            for v in votes.iter().filter(|v| v.0 == height && set.contains(&v.1)) {
                count[hash_bit(&v.1, bit)] += v.2;
            }
            let side = usize::from(count[1] > count[0]);
            if count[side] < self.params.alpha1 {
                return;
            }
            self.branches
                .entry((height, bit, prefix(&set[0], bit)))
                .or_default()[side] += 1;
            set.retain(|h| hash_bit(h, bit) == side);
            from = bit + 1;
        }
    }

    /// Undecided part of the preferred chain, frontier first.
    pub fn preferred_chain(&mut self) -> Rc<[BlockHeader]> {
        if let Some(c) = &self.chain {
            return Rc::clone(c);
        }
        let mut out = Vec::new();
        let mut parent = self.ledger.tip().header.hash;
        let mut height = self.frontier();
        while let Some(b) = self.preferred_child(height, &parent) {
            out.push(b);
            parent = b.hash;
            height += 1;
        }
        let chain: Rc<[BlockHeader]> = out.into();
        self.chain = Some(Rc::clone(&chain));
        chain
    }

    /// Preference at `height`: the accepted block below the frontier, else
    /// the preferred chain's block there.
    pub fn preference(&mut self, height: u64) -> Option<BlockHeader> {
        if let Some(b) = self.ledger.get(height) {
            return Some(b.header);
        }
        let offset = (height - self.frontier()) as usize;
        self.preferred_chain().get(offset).copied()
    }

    /// Records a block not seen before. Blocks at accepted heights are
    /// dropped.
    pub fn learn(&mut self, header: &BlockHeader) -> bool {
        if header.id < self.frontier() || self.known.contains_key(&header.hash) {
            return false;
        }
        self.known.insert(header.hash, *header);
        self.by_height
            .entry(header.id)
            .or_default()
            .push(header.hash);
        self.chain = None;
        true
    }

    /// Learns the querier's block and answers with this node's preference
    /// at `height`.
    pub fn on_query(&mut self, height: u64, block: Option<&BlockHeader>) -> Option<BlockHeader> {
        if let Some(b) = block {
            self.learn(b);
        }
        self.preference(height)
    }

    fn has_rival(&self, height: u64, block: &BlockHash) -> bool {
        self.by_height
            .get(&height)
            .is_some_and(|hs| hs.iter().any(|h| h != block))
    }

    /// Folds one closed poll into every undecided height's counters, then
    /// accepts as many heights as the rules allow. Returns accepted blocks.
    pub fn update_confidence(
        &mut self,
        votes: &[(u64, BlockHash, usize)],
        sample_size: usize,
        now: f64,
    ) -> Vec<BlockHash> {
        let frontier = self.frontier();
        let chain = self.preferred_chain();
        let mut parent = self.ledger.tip().header.hash;
        for (height, b) in (frontier..).zip(chain.iter().map(Some).chain([None])) {
            let set = self.children(height, &parent);
            self.record_branches(height, set, votes);
            match b {
                Some(b) => parent = b.hash,
                None => break,
            }
        }
        let top = self
            .by_height
            .keys()
            .next_back()
            .copied()
            .into_iter()
            .chain(votes.iter().map(|v| v.0))
            .max();
        if let Some(top) = top {
            for height in frontier..=top {
                let best = votes.iter().filter(|v| v.0 == height).fold(
                    None::<(BlockHash, usize)>,
                    |acc, v| match acc {
                        Some((_, c)) if c >= v.2 => acc,
                        _ => Some((v.1, v.2)),
                    },
                );
                let state = self.heights.entry(height).or_default();
                match best.filter(|b| b.1 >= self.params.alpha1) {
                    Some((block, count)) => {
                        if self.known.contains_key(&block) {
                            *self.confidence.entry(block).or_default() += 1;
                        }
                        if state.last != Some(block) {
                            *state = HeightState {
                                last: Some(block),
                                ..HeightState::default()
                            };
                        }
                        state.consecutive += 1;
                        state.last_votes = count;
                        if count == sample_size {
                            state.unanimous += 1;
                        } else {
                            state.unanimous = 0;
                        }
                    }
                    None => *state = HeightState::default(),
                }
            }
            self.heights
                .retain(|h, s| *h >= frontier && *s != HeightState::default());
        }
        self.chain = None;
        let mut accepted = Vec::new();
        while let Some(block) = self.acceptable() {
            self.accept(block, now);
            accepted.push(block);
        }
        accepted
    }

    /// Block at the frontier that meets the accept rule, if any.
    fn acceptable(&mut self) -> Option<BlockHash> {
        let frontier = self.frontier();
        let state = self.heights.get(&frontier).copied()?;
        let block = state.last?;
        let ok = match self.params.variant {
            SnowVariant::Snowman => {
                state.consecutive >= self.params.beta1 && state.last_votes >= self.params.alpha2
            }
            SnowVariant::Avalanche => {
                (state.unanimous >= self.params.beta1 && !self.has_rival(frontier, &block))
                    || state.consecutive >= self.params.beta2
            }
        };
        (ok && self.preference(frontier).is_some_and(|b| b.hash == block)).then_some(block)
    }

    fn accept(&mut self, block: BlockHash, now: f64) {
        let header = self.known[&block];
        self.ledger
            .append(header, now)
            .expect("accepted block extends the ledger");
        self.heights.remove(&header.id);
        // Everything at this height goes, then everything that no longer
        // descends from the accepted chain.
        for h in self.by_height.remove(&header.id).unwrap_or_default() {
            self.known.remove(&h);
            self.confidence.remove(&h);
        }
        let heights: Vec<u64> = self.by_height.keys().copied().collect();
        for height in heights {
            let hashes = self.by_height.remove(&height).unwrap_or_default();
            let (keep, drop): (Vec<BlockHash>, Vec<BlockHash>) =
                hashes.into_iter().partition(|h| {
                    let parent = self.known[h].parent;
                    parent == block || self.known.contains_key(&parent)
                });
            for h in drop {
                self.known.remove(&h);
                self.confidence.remove(&h);
            }
            if !keep.is_empty() {
                self.by_height.insert(height, keep);
            }
        }
        let known = &self.known;
        self.heights
            .retain(|_, s| s.last.is_some_and(|h| known.contains_key(&h)));
        self.branches.retain(|k, _| k.0 > header.id);
        self.chain = None;
    }

    /// Parent for a new block: Avalanche extends the highest known block,
    /// preferring its own choice among rivals of that id, Snowman the tip of
    /// its preferred chain.
    fn generation_parent(&mut self) -> BlockHeader {
        let tip = self.ledger.tip().header;
        let chain = self.preferred_chain();
        match self.params.variant {
            SnowVariant::Avalanche => {
                let Some((&top, hashes)) = self.by_height.iter().next_back() else {
                    return tip;
                };
                chain
                    .iter()
                    .find(|b| b.id == top)
                    .copied()
                    .unwrap_or(self.known[&hashes[0]])
            }
            SnowVariant::Snowman => chain.last().copied().unwrap_or(tip),
        }
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
        if self.rng.random::<f64>() >= self.params.p_block {
            return None;
        }
        let parent = self.generation_parent();
        let header = BlockHeader::new(parent.id + 1, self.id, now, parent.hash);
        self.learn(&header);
        self.created.push(header);
        Some(header)
    }

    /// Opens a poll on `min(k, N - 1)` distinct peers other than this node.
    /// Returns the poll id, the frontier, this node's preference there and
    /// the peers.
    pub fn query_round(&mut self, n_nodes: usize) -> (u64, u64, Option<BlockHeader>, Vec<NodeId>) {
        let others = n_nodes - 1;
        let take = self.params.k.min(others);
        let me = self.id.index();
        let peers: Vec<NodeId> = index::sample(&mut self.rng, others, take)
            .into_iter()
            .map(|i| NodeId(if i >= me { i + 1 } else { i } as u64))
            .collect();
        let poll = self.next_poll;
        self.next_poll += 1;
        let height = self.frontier();
        self.polls.insert(
            poll,
            Poll {
                height,
                expected: peers.len(),
                received: 0,
                votes: Vec::new(),
            },
        );
        (poll, height, self.preference(height), peers)
    }

    /// Tallies one response. Returns the blocks accepted if this closed the
    /// poll.
    pub fn on_response(
        &mut self,
        poll: u64,
        block: Option<&BlockHeader>,
        now: f64,
    ) -> Option<Vec<BlockHash>> {
        if let Some(b) = block {
            self.learn(b);
        }
        let p = self.polls.get_mut(&poll)?;
        p.received += 1;
        if let Some(b) = block.filter(|b| b.id == p.height) {
            match p.votes.iter_mut().find(|v| v.1 == b.hash) {
                Some(v) => v.2 += 1,
                None => p.votes.push((b.id, b.hash, 1)),
            }
        }
        if p.received < p.expected {
            return None;
        }
        self.close_poll(poll, now)
    }

    /// Closes a poll. One whose height has been accepted meanwhile is
    /// dropped without touching any counter.
    pub fn close_poll(&mut self, poll: u64, now: f64) -> Option<Vec<BlockHash>> {
        let p = self.polls.remove(&poll)?;
        if p.height != self.frontier() {
            return Some(Vec::new());
        }
        Some(self.update_confidence(&p.votes, p.expected, now))
    }
}

fn hash_bit(hash: &BlockHash, bit: u16) -> usize {
    usize::from(hash.0[usize::from(bit / 8)] >> (7 - bit % 8) & 1)
}

/// `hash` with every bit from `bit` on cleared.
fn prefix(hash: &BlockHash, bit: u16) -> BlockHash {
    let mut out = BlockHash::ZERO;
    let whole = usize::from(bit / 8);
    out.0[..whole].copy_from_slice(&hash.0[..whole]);
    if whole < out.0.len() {
        out.0[whole] = hash.0[whole] & !(0xffu8 >> (bit % 8));
    }
    out
}

/// First bit at or after `from` on which the hashes disagree.
fn first_split(set: &[BlockHash], from: u16) -> Option<u16> {
    let first = set.first()?;
    (from..256).find(|&b| {
        set[1..]
            .iter()
            .any(|h| hash_bit(h, b) != hash_bit(first, b))
    })
}

#[derive(Clone, Debug)]
enum SnowEvent {
    Tick(NodeId),
    Query {
        to: NodeId,
        from: NodeId,
        poll: u64,
        height: u64,
        block: Option<BlockHeader>,
    },
    Response {
        to: NodeId,
        poll: u64,
        block: Option<BlockHeader>,
    },
    PollTimeout {
        node: NodeId,
        poll: u64,
    },
}

pub struct SnowSimulation {
    config: RunConfig,
    params: SnowParams,
    protocol: Protocol,
    nodes: Vec<SnowNode>,
    queue: EventQueue<SnowEvent>,
    net_rng: ChaCha8Rng,
    now: f64,
    messages: MessageCounts,
    ticks: u64,
}

impl SnowSimulation {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (protocol, params) = match config.params {
            ProtocolParams::Snowman(p) => (Protocol::Snowman, p),
            ProtocolParams::Avalanche(p) => (Protocol::Avalanche, p),
            ProtocolParams::Becp(_) => {
                return Err(Error::config(
                    "protocol",
                    "SnowSimulation needs snow parameters",
                ))
            }
        };
        let n = config.n_nodes;
        let nodes = (0..n)
            .map(|i| SnowNode::new(NodeId(i as u64), params, node_rng(config.seed, i)))
            .collect();
        let mut net_rng = network_rng(config.seed);
        let mut queue = EventQueue::new();
        for i in 0..n {
            let offset = if config.stagger_ticks {
                net_rng.random::<f64>() * params.cycle_time
            } else {
                0.0
            };
            queue.push(offset, SnowEvent::Tick(NodeId(i as u64)));
        }
        Ok(Self {
            config: *config,
            params,
            protocol,
            nodes,
            queue,
            net_rng,
            now: 0.0,
            messages: MessageCounts::default(),
            ticks: 0,
        })
    }

    pub fn nodes(&self) -> &[SnowNode] {
        &self.nodes
    }

    pub fn messages(&self) -> MessageCounts {
        self.messages
    }

    fn delay(&mut self) -> f64 {
        self.config.latency.sample(&mut self.net_rng) + self.params.processing_delay
    }

    /// Processes one event; false once the horizon is reached.
    pub fn step(&mut self) -> bool {
        if !self
            .queue
            .peek_time()
            .is_some_and(|t| t < self.config.duration)
        {
            return false;
        }
        let ev = self.queue.pop().expect("peeked");
        self.now = ev.time;
        let now = self.now;
        match ev.event {
            SnowEvent::Tick(id) => {
                self.ticks += 1;
                let n = self.config.n_nodes;
                let node = &mut self.nodes[id.index()];
                node.maybe_generate_block(now);
                let (poll, height, block, peers) = node.query_round(n);
                for to in peers {
                    self.messages.query += 1;
                    let at = now + self.delay();
                    self.queue.push(
                        at,
                        SnowEvent::Query {
                            to,
                            from: id,
                            poll,
                            height,
                            block,
                        },
                    );
                }
                if let Some(t) = self.params.round_timeout {
                    self.queue
                        .push(now + t, SnowEvent::PollTimeout { node: id, poll });
                }
                self.queue
                    .push(now + self.params.cycle_time, SnowEvent::Tick(id));
            }
            SnowEvent::Query {
                to,
                from,
                poll,
                height,
                block,
            } => {
                let answer = self.nodes[to.index()].on_query(height, block.as_ref());
                self.messages.response += 1;
                let at = now + self.delay();
                self.queue.push(
                    at,
                    SnowEvent::Response {
                        to: from,
                        poll,
                        block: answer,
                    },
                );
            }
            SnowEvent::Response { to, poll, block } => {
                self.nodes[to.index()].on_response(poll, block.as_ref(), now);
            }
            SnowEvent::PollTimeout { node, poll } => {
                self.nodes[node.index()].close_poll(poll, now);
            }
        }
        true
    }

    pub fn run(mut self) -> RunResult {
        while self.step() {}
        let blocks_created = self.nodes.iter().map(|n| n.created().len() as u64).sum();
        RunResult {
            protocol: self.protocol,
            n_nodes: self.config.n_nodes,
            seed: self.config.seed,
            duration: self.config.duration,
            cycle_time: self.params.cycle_time,
            p_block: self.params.p_block,
            latency: self.config.latency,
            messages: self.messages,
            ticks: self.ticks,
            ledgers: self.nodes.into_iter().map(SnowNode::into_ledger).collect(),
            forks: Vec::new(),
            blocks_created,
        }
    }
}

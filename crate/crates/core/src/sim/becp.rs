use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::queue::EventQueue;
use super::{network_rng, node_rng, MessageCounts, ProtocolParams, RunConfig, RunResult};
use crate::consensus::{BecpNode, BecpParams};
use crate::error::{Error, Result};
use crate::model::{BlockHash, BlockHeader, EstimatorPair, ExchangeMessage, MessageKind, NodeId};
use crate::ncp::PeerCache;

#[derive(Clone, Debug)]
pub enum BecpEvent {
    CycleTick(NodeId),
    Deliver(NodeId, ExchangeMessage),
}

/// One push or pull as sent: who, to whom, and when.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExchangeTrace {
    pub time: f64,
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
}

/// A BECP network under simulation. Can be stepped event by event so tests
/// can observe conservation laws mid-run.
pub struct BecpSimulation {
    config: RunConfig,
    params: BecpParams,
    nodes: Vec<BecpNode>,
    queue: EventQueue<BecpEvent>,
    net_rng: ChaCha8Rng,
    now: f64,
    messages: MessageCounts,
    ticks: u64,
    ticks_per_node: Vec<u64>,
    trace: Option<Vec<ExchangeTrace>>,
}

impl BecpSimulation {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let ProtocolParams::Becp(params) = config.params else {
            return Err(Error::config(
                "protocol",
                "BecpSimulation needs BECP parameters",
            ));
        };
        let n = config.n_nodes;
        let all: Vec<NodeId> = (0..n as u64).map(NodeId).collect();
        let mut nodes = Vec::with_capacity(n);
        for (i, &id) in all.iter().enumerate() {
            let mut rng = node_rng(config.seed, i);
            let peers = if n >= 2 {
                PeerCache::init(id, &all, params.n_cache, &mut rng)?
            } else {
                PeerCache::from_ids(id, params.n_cache, [])
            };
            nodes.push(BecpNode::new(id, i == 0, peers, params, rng));
        }
        let mut net_rng = network_rng(config.seed);
        let mut queue = EventQueue::new();
        for &id in &all {
            let offset = if config.stagger_ticks {
                net_rng.random::<f64>() * params.cycle_time
            } else {
                0.0
            };
            queue.push(offset, BecpEvent::CycleTick(id));
        }
        Ok(Self {
            config: *config,
            params,
            nodes,
            queue,
            net_rng,
            now: 0.0,
            messages: MessageCounts::default(),
            ticks: 0,
            ticks_per_node: vec![0; n],
            trace: None,
        })
    }

    /// Records every push and pull sent from now on.
    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[ExchangeTrace] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn nodes(&self) -> &[BecpNode] {
        &self.nodes
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut BecpNode {
        &mut self.nodes[id.index()]
    }

    pub fn messages(&self) -> MessageCounts {
        self.messages
    }

    pub fn ticks_per_node(&self) -> &[u64] {
        &self.ticks_per_node
    }

    pub fn in_flight(&self) -> impl Iterator<Item = &ExchangeMessage> + '_ {
        self.queue.iter().filter_map(|s| match &s.event {
            BecpEvent::Deliver(_, m) => Some(m),
            BecpEvent::CycleTick(_) => None,
        })
    }

    /// `(sum v, sum w)` over every node's SSEP pair and every in-flight
    /// share.
    pub fn ssep_totals(&self) -> EstimatorPair {
        let held = self
            .nodes
            .iter()
            .fold(EstimatorPair::ZERO, |acc, n| acc + n.ssep());
        self.in_flight().fold(held, |acc, m| acc + m.ssep_share)
    }

    /// `(prop, agree)` totals for one block over node caches and in-flight
    /// shares, plus the number of nodes holding it.
    pub fn block_totals(&self, header: &BlockHeader) -> (EstimatorPair, EstimatorPair, usize) {
        let mut prop = EstimatorPair::ZERO;
        let mut agree = EstimatorPair::ZERO;
        let mut holders = 0;
        for node in &self.nodes {
            if let Some(b) = node.cache().get(&header.hash) {
                prop += b.prop;
                agree += b.agree;
                holders += 1;
            }
        }
        for m in self.in_flight() {
            for s in &m.block_shares {
                if header.same_identity(s.id, s.created_at, s.creator) {
                    prop += s.prop;
                    agree += s.agree;
                }
            }
        }
        (prop, agree, holders)
    }

    /// Whether the next event lies inside the horizon.
    pub fn has_next(&self) -> bool {
        self.queue
            .peek_time()
            .is_some_and(|t| t < self.config.duration)
    }

    /// Processes one event. Returns false once the horizon is reached;
    /// events at or beyond it are dropped.
    pub fn step(&mut self) -> bool {
        if !self.has_next() {
            return false;
        }
        let ev = self.queue.pop().expect("peeked");
        self.now = ev.time;
        match ev.event {
            BecpEvent::CycleTick(id) => {
                let node = &mut self.nodes[id.index()];
                let (_, push) = node.on_cycle_tick(self.now);
                self.ticks += 1;
                self.ticks_per_node[id.index()] += 1;
                if let Some((to, msg)) = push {
                    self.messages.push += 1;
                    self.send(id, to, msg);
                }
                self.queue
                    .push(self.now + self.params.cycle_time, BecpEvent::CycleTick(id));
            }
            BecpEvent::Deliver(to, msg) => match msg.kind {
                MessageKind::Push => {
                    let (back, reply) = self.nodes[to.index()].handle_push(&msg, self.now);
                    self.messages.pull += 1;
                    self.send(to, back, reply);
                }
                MessageKind::Pull => self.nodes[to.index()].handle_pull(&msg, self.now),
            },
        }
        true
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: ExchangeMessage) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(ExchangeTrace {
                time: self.now,
                kind: msg.kind,
                from,
                to,
            });
        }
        let delay = self.config.latency.sample(&mut self.net_rng) + self.params.processing_delay;
        self.queue
            .push(self.now + delay, BecpEvent::Deliver(to, msg));
    }

    /// Steps until the simulated clock would pass `until`.
    pub fn run_until(&mut self, until: f64) {
        while self.queue.peek_time().is_some_and(|t| t <= until) && self.step() {}
    }

    pub fn run(mut self) -> RunResult {
        while self.step() {}
        self.finish()
    }

    pub fn finish(self) -> RunResult {
        let forks = self.nodes.iter().map(BecpNode::forks).collect();
        let blocks_created = self.nodes.iter().map(|n| n.created().len() as u64).sum();
        RunResult {
            protocol: crate::sim::Protocol::Becp,
            n_nodes: self.config.n_nodes,
            seed: self.config.seed,
            duration: self.config.duration,
            cycle_time: self.params.cycle_time,
            p_block: self.params.p_block,
            latency: self.config.latency,
            messages: self.messages,
            ticks: self.ticks,
            ledgers: self.nodes.into_iter().map(BecpNode::into_ledger).collect(),
            forks,
            blocks_created,
        }
    }

    /// Hash of every block created so far, in creation order per node.
    pub fn created_blocks(&self) -> Vec<BlockHeader> {
        self.nodes
            .iter()
            .flat_map(|n| n.created().iter().copied())
            .collect()
    }

    pub fn block_holders(&self, hash: &BlockHash) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.cache().contains(hash))
            .count()
    }
}

//! Run metrics and the hash-chain correctness test.

use std::fmt;

use crate::latency::LatencyModel;
use crate::model::{BlockHash, ConfirmedBlock, Ledger, LedgerError};
use crate::sim::{Protocol, RunResult};

/// Metrics for a single trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialMetrics {
    pub protocol: Protocol,
    pub n_nodes: usize,
    pub seed: u64,
    pub duration: f64,
    pub cycle_time: f64,
    pub p_block: f64,
    pub latency: LatencyModel,
    /// Blocks confirmed in every node's ledger, genesis excluded.
    pub blocks_confirmed: u64,
    pub throughput_bps: f64,
    /// Mean over network-wide blocks of last confirmation minus creation.
    pub avg_latency_s: Option<f64>,
    /// Mean over (node, network-wide block) of confirmation minus creation.
    pub per_node_latency_s: Option<f64>,
    pub messages_sent: u64,
    /// Top-level fork-resolution calls per network-wide block per node.
    pub fork_calls_per_block_per_node: Option<f64>,
    /// Recursive fork-resolution calls on the same scale.
    pub recursive_fork_calls_per_block_per_node: Option<f64>,
    pub blocks_created: u64,
    pub check: TrialCheck,
}

impl TrialMetrics {
    pub fn pass(&self) -> bool {
        self.check.pass()
    }
}

/// Outcome of the correctness test on one trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialCheck {
    /// Nodes whose ledger fails hash-chain verification, with the first
    /// error found.
    pub invalid: Vec<(usize, LedgerError)>,
    /// Nodes whose ledger is not a prefix of the longest ledger (or the
    /// reverse).
    pub inconsistent: Vec<usize>,
}

impl TrialCheck {
    pub fn pass(&self) -> bool {
        self.invalid.is_empty() && self.inconsistent.is_empty()
    }
}

/// Every ledger verifies from genesis and all ledgers are pairwise
/// prefix-consistent. Pairwise consistency holds exactly when every ledger
/// is a prefix of the longest one, which keeps this linear in N.
pub fn check_ledgers(ledgers: &[Ledger]) -> TrialCheck {
    let mut check = TrialCheck::default();
    for (i, ledger) in ledgers.iter().enumerate() {
        if let Err(e) = ledger.verify() {
            check.invalid.push((i, e));
        }
    }
    if let Some(longest) = ledgers.iter().max_by_key(|l| l.len()) {
        for (i, ledger) in ledgers.iter().enumerate() {
            if !ledger.prefix_consistent(longest) {
                check.inconsistent.push(i);
            }
        }
    }
    check
}

/// Blocks present in every ledger, genesis excluded, in id order.
pub fn network_confirmed(ledgers: &[Ledger]) -> Vec<BlockHash> {
    let Some(shortest) = ledgers.iter().min_by_key(|l| l.len()) else {
        return Vec::new();
    };
    shortest.blocks()[1..]
        .iter()
        .map(|b| b.header)
        .filter(|h| {
            ledgers
                .iter()
                .all(|l| l.get(h.id).is_some_and(|c| c.header.hash == h.hash))
        })
        .map(|h| h.hash)
        .collect()
}

fn confirmation(ledger: &Ledger, id: u64) -> &ConfirmedBlock {
    ledger
        .get(id)
        .expect("network-wide block is in every ledger")
}

pub fn compute(result: &RunResult) -> TrialMetrics {
    let ledgers = &result.ledgers;
    let common = network_confirmed(ledgers);
    let blocks = common.len() as u64;
    let (mut worst_sum, mut node_sum) = (0.0, 0.0);
    if blocks > 0 {
        let reference = ledgers.iter().min_by_key(|l| l.len()).expect("non-empty");
        for id in 1..=blocks {
            let created = reference.get(id).expect("common prefix").header.created_at;
            let mut worst = f64::NEG_INFINITY;
            for ledger in ledgers {
                let delay = confirmation(ledger, id).confirmed_at - created;
                worst = worst.max(delay);
                node_sum += delay;
            }
            worst_sum += worst;
        }
    }
    let per_block = |total: f64| (blocks > 0).then(|| total / blocks as f64);
    let fork_scale =
        (blocks > 0 && !result.forks.is_empty()).then(|| (blocks * result.n_nodes as u64) as f64);
    TrialMetrics {
        protocol: result.protocol,
        n_nodes: result.n_nodes,
        seed: result.seed,
        duration: result.duration,
        cycle_time: result.cycle_time,
        p_block: result.p_block,
        latency: result.latency,
        blocks_confirmed: blocks,
        throughput_bps: blocks as f64 / result.duration,
        avg_latency_s: per_block(worst_sum),
        per_node_latency_s: per_block(node_sum / ledgers.len() as f64),
        messages_sent: result.messages.total(),
        fork_calls_per_block_per_node: fork_scale
            .map(|s| result.forks.iter().map(|f| f.top_level).sum::<u64>() as f64 / s),
        recursive_fork_calls_per_block_per_node: fork_scale
            .map(|s| result.forks.iter().map(|f| f.recursive).sum::<u64>() as f64 / s),
        blocks_created: result.blocks_created,
        check: check_ledgers(ledgers),
    }
}

/// Correctness verdict over a set of trials, shown as `Failed(f)/b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub trials: usize,
    pub failed: usize,
    /// Fewest network-wide confirmed blocks over the trials.
    pub blocks: u64,
}

impl Verdict {
    pub fn from_trials(trials: &[TrialMetrics]) -> Self {
        Self {
            trials: trials.len(),
            failed: trials.iter().filter(|t| !t.pass()).count(),
            blocks: trials.iter().map(|t| t.blocks_confirmed).min().unwrap_or(0),
        }
    }

    pub fn pass(&self) -> bool {
        self.failed == 0
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Failed({})/{}", self.failed, self.blocks)
    }
}

/// Seed-averaged metrics over the trials of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub protocol: Protocol,
    pub n_nodes: usize,
    pub duration: f64,
    pub cycle_time: f64,
    pub p_block: f64,
    pub latency: LatencyModel,
    pub blocks_confirmed: f64,
    pub throughput_bps: f64,
    pub avg_latency_s: Option<f64>,
    pub per_node_latency_s: Option<f64>,
    pub messages_sent: f64,
    pub fork_calls_per_block_per_node: Option<f64>,
    pub recursive_fork_calls_per_block_per_node: Option<f64>,
    pub verdict: Verdict,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Mean of the values present; `None` if any trial lacks one.
fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Option<Vec<f64>> = xs.collect();
    xs.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

impl Aggregate {
    /// Panics on an empty slice.
    pub fn from_trials(trials: &[TrialMetrics]) -> Self {
        let first = &trials[0];
        Self {
            protocol: first.protocol,
            n_nodes: first.n_nodes,
            duration: first.duration,
            cycle_time: first.cycle_time,
            p_block: first.p_block,
            latency: first.latency,
            blocks_confirmed: mean(trials.iter().map(|t| t.blocks_confirmed as f64)),
            throughput_bps: mean(trials.iter().map(|t| t.throughput_bps)),
            avg_latency_s: mean_opt(trials.iter().map(|t| t.avg_latency_s)),
            per_node_latency_s: mean_opt(trials.iter().map(|t| t.per_node_latency_s)),
            messages_sent: mean(trials.iter().map(|t| t.messages_sent as f64)),
            fork_calls_per_block_per_node: mean_opt(
                trials.iter().map(|t| t.fork_calls_per_block_per_node),
            ),
            recursive_fork_calls_per_block_per_node: mean_opt(
                trials
                    .iter()
                    .map(|t| t.recursive_fork_calls_per_block_per_node),
            ),
            verdict: Verdict::from_trials(trials),
        }
    }
}

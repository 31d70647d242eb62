//! CSV rows, the text summary and ledger digests.
//!
//! One schema serves every protocol. Trial rows carry their seed; the
//! aggregate row that follows each configuration's trials leaves `seed`
//! empty and holds seed means, with `pass` true only if every trial passed.
//! Columns that do not apply (alpha under uniform latency, fork calls for the
//! baselines, latency with nothing confirmed) are empty.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::experiment::Outcome;
use crate::metrics::{Aggregate, TrialMetrics};
use crate::model::Ledger;
use crate::sim::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub protocol: String,
    pub n_nodes: usize,
    pub seed: Option<u64>,
    pub duration_s: f64,
    pub cycle_s: f64,
    pub p_block: f64,
    pub latency_model: String,
    pub alpha: Option<f64>,
    pub blocks_confirmed: f64,
    pub throughput_bps: f64,
    pub avg_latency_s: Option<f64>,
    pub messages_sent: f64,
    pub fork_calls_per_block_per_node: Option<f64>,
    pub pass: bool,
}

impl CsvRow {
    pub fn from_trial(t: &TrialMetrics) -> Self {
        Self {
            protocol: t.protocol.name().to_owned(),
            n_nodes: t.n_nodes,
            seed: Some(t.seed),
            duration_s: t.duration,
            cycle_s: t.cycle_time,
            p_block: t.p_block,
            latency_model: t.latency.name().to_owned(),
            alpha: t.latency.alpha(),
            blocks_confirmed: t.blocks_confirmed as f64,
            throughput_bps: t.throughput_bps,
            avg_latency_s: t.avg_latency_s,
            messages_sent: t.messages_sent as f64,
            fork_calls_per_block_per_node: t.fork_calls_per_block_per_node,
            pass: t.pass(),
        }
    }

    pub fn from_aggregate(a: &Aggregate) -> Self {
        Self {
            protocol: a.protocol.name().to_owned(),
            n_nodes: a.n_nodes,
            seed: None,
            duration_s: a.duration,
            cycle_s: a.cycle_time,
            p_block: a.p_block,
            latency_model: a.latency.name().to_owned(),
            alpha: a.latency.alpha(),
            blocks_confirmed: a.blocks_confirmed,
            throughput_bps: a.throughput_bps,
            avg_latency_s: a.avg_latency_s,
            messages_sent: a.messages_sent,
            fork_calls_per_block_per_node: a.fork_calls_per_block_per_node,
            pass: a.verdict.pass(),
        }
    }

    pub fn is_aggregate(&self) -> bool {
        self.seed.is_none()
    }
}

pub fn write_csv<W: io::Write>(out: W, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub const COLUMNS: [&str; 14] = [
    "protocol",
    "n_nodes",
    "seed",
    "duration_s",
    "cycle_s",
    "p_block",
    "latency_model",
    "alpha",
    "blocks_confirmed",
    "throughput_bps",
    "avg_latency_s",
    "messages_sent",
    "fork_calls_per_block_per_node",
    "pass",
];

/// `protocol/n=.../p=.../latency` label for one configuration.
pub fn config_label(c: &RunConfig) -> String {
    let latency = match c.latency.alpha() {
        Some(a) => format!("pareto({a})"),
        None => c.latency.name().to_owned(),
    };
    format!(
        "{}/n={}/p={}/{}",
        c.protocol(),
        c.n_nodes,
        c.params.p_block(),
        latency
    )
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.digits$}"))
}

pub fn summary(outcome: &Outcome) -> String {
    let mut s = String::new();
    for c in &outcome.configs {
        let a = &c.aggregate;
        let _ = writeln!(
            s,
            "{} trials={} blocks={:.1} throughput={:.4} latency={}s per_node_latency={}s messages={:.0} fork_calls={} recursive={} {}",
            config_label(&c.config),
            a.verdict.trials,
            a.blocks_confirmed,
            a.throughput_bps,
            opt(a.avg_latency_s, 3),
            opt(a.per_node_latency_s, 3),
            a.messages_sent,
            opt(a.fork_calls_per_block_per_node, 3),
            opt(a.recursive_fork_calls_per_block_per_node, 3),
            a.verdict,
        );
    }
    let _ = writeln!(
        s,
        "overall: {}",
        if outcome.pass() { "pass" } else { "FAIL" }
    );
    s
}

/// SHA-256 over every node's ledger: length, then each block hash and
/// confirmation time.
pub fn ledger_digest(ledgers: &[Ledger]) -> String {
    let mut h = Sha256::new();
    for l in ledgers {
        h.update((l.len() as u64).to_le_bytes());
        for b in l.blocks() {
            h.update(b.header.hash.0);
            h.update(b.confirmed_at.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

//! Deterministic discrete-event simulation of BECP and the Snow baselines.
//!
//! A run is a pure function of its [`RunConfig`]: one seeded ChaCha stream
//! per node plus one for the network, and a single event queue ordered by
//! `(time, sequence)`.

mod becp;
mod queue;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use self::becp::{BecpEvent, BecpSimulation, ExchangeTrace};
pub use self::queue::{EventQueue, Scheduled};
use crate::consensus::{BecpParams, ForkCounters};
use crate::error::{Error, Result};
use crate::latency::LatencyModel;
use crate::model::Ledger;
use crate::snow::{SnowParams, SnowSimulation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    Becp,
    Snowman,
    Avalanche,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Becp => "becp",
            Protocol::Snowman => "snowman",
            Protocol::Avalanche => "avalanche",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "becp" => Ok(Protocol::Becp),
            "snowman" => Ok(Protocol::Snowman),
            "avalanche" => Ok(Protocol::Avalanche),
            other => Err(Error::config(
                "protocol",
                format!("unknown protocol `{other}`"),
            )),
        }
    }
}

/// Protocol selection together with its parameter set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProtocolParams {
    Becp(BecpParams),
    Snowman(SnowParams),
    Avalanche(SnowParams),
}

impl ProtocolParams {
    pub fn defaults_for(protocol: Protocol) -> Self {
        match protocol {
            Protocol::Becp => ProtocolParams::Becp(BecpParams::default()),
            Protocol::Snowman => ProtocolParams::Snowman(SnowParams::snowman()),
            Protocol::Avalanche => ProtocolParams::Avalanche(SnowParams::avalanche()),
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            ProtocolParams::Becp(_) => Protocol::Becp,
            ProtocolParams::Snowman(_) => Protocol::Snowman,
            ProtocolParams::Avalanche(_) => Protocol::Avalanche,
        }
    }

    pub fn cycle_time(&self) -> f64 {
        match self {
            ProtocolParams::Becp(p) => p.cycle_time,
            ProtocolParams::Snowman(p) | ProtocolParams::Avalanche(p) => p.cycle_time,
        }
    }

    pub fn p_block(&self) -> f64 {
        match self {
            ProtocolParams::Becp(p) => p.p_block,
            ProtocolParams::Snowman(p) | ProtocolParams::Avalanche(p) => p.p_block,
        }
    }

    pub fn set_p_block(&mut self, value: f64) {
        match self {
            ProtocolParams::Becp(p) => p.p_block = value,
            ProtocolParams::Snowman(p) | ProtocolParams::Avalanche(p) => p.p_block = value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub n_nodes: usize,
    /// Simulated horizon, seconds.
    pub duration: f64,
    pub seed: u64,
    pub trials: usize,
    pub latency: LatencyModel,
    pub params: ProtocolParams,
    /// Randomize each node's first tick within one cycle. When false every
    /// node ticks at the same instants.
    pub stagger_ticks: bool,
}

impl RunConfig {
    pub fn new(protocol: Protocol, n_nodes: usize) -> Self {
        Self {
            n_nodes,
            duration: 300.0,
            seed: 1,
            trials: 5,
            latency: LatencyModel::default(),
            params: ProtocolParams::defaults_for(protocol),
            stagger_ticks: true,
        }
    }

    pub fn becp(n_nodes: usize) -> Self {
        Self::new(Protocol::Becp, n_nodes)
    }

    pub fn protocol(&self) -> Protocol {
        self.params.protocol()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::config("nodes", "must be at least 1"));
        }
        if self.n_nodes < 2 && self.protocol() != Protocol::Becp {
            return Err(Error::config(
                "nodes",
                "snow baselines need at least 2 nodes",
            ));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration", "must be positive"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        self.latency.validate()?;
        match &self.params {
            ProtocolParams::Becp(p) => p.validate(),
            ProtocolParams::Snowman(p) | ProtocolParams::Avalanche(p) => p.validate(self.n_nodes),
        }
    }
}

/// Messages sent during a run, counted at send time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub push: u64,
    pub pull: u64,
    pub query: u64,
    pub response: u64,
}

impl MessageCounts {
    pub fn total(&self) -> u64 {
        self.push + self.pull + self.query + self.response
    }
}

/// Everything a run produces; input to all metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub protocol: Protocol,
    pub n_nodes: usize,
    pub seed: u64,
    pub duration: f64,
    pub cycle_time: f64,
    pub p_block: f64,
    pub latency: LatencyModel,
    pub messages: MessageCounts,
    pub ticks: u64,
    pub ledgers: Vec<Ledger>,
    /// Per-node fork-resolution counters; empty for the baselines.
    pub forks: Vec<ForkCounters>,
    pub blocks_created: u64,
}

/// Stream 0 drives the network; node `i` uses stream `i + 1`.
pub(crate) fn network_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn node_rng(seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64 + 1);
    rng
}

/// Runs one simulation to its horizon.
pub fn run_simulation(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    match config.params {
        ProtocolParams::Becp(_) => Ok(BecpSimulation::new(config)?.run()),
        ProtocolParams::Snowman(_) | ProtocolParams::Avalanche(_) => {
            Ok(SnowSimulation::new(config)?.run())
        }
    }
}

/// Runs `config.trials` independent simulations with seeds `seed`,
/// `seed + 1`, ... Results come back in seed order regardless of how the
/// runs are spread over threads.
pub fn run_trials(config: &RunConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    let configs: Vec<RunConfig> = (0..config.trials as u64)
        .map(|i| config.with_seed(config.seed.wrapping_add(i)))
        .collect();
    run_many(&configs)
}

/// Runs independent configurations on a small worker pool, preserving
/// input order.
pub fn run_many(configs: &[RunConfig]) -> Result<Vec<RunResult>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(configs.len().max(1));
    if workers <= 1 {
        return configs.iter().map(run_simulation).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<RunResult>>> = (0..configs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let r = run_simulation(&configs[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every config ran"))
        .collect()
}

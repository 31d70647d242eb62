//! Experiment specifications: a flat TOML key set, command-line overrides,
//! sweeps over one axis, and the driver that runs them and writes results.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::consensus::BecpParams;
use crate::error::{Error, Result};
use crate::latency::{LatencyModel, PARETO_ALPHA_RANGE};
use crate::metrics::{self, Aggregate, TrialMetrics};
use crate::report::{self, CsvRow};
use crate::sim::{run_trials, Protocol, ProtocolParams, RunConfig, RunResult};
use crate::snow::SnowParams;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BECP_OUT_DIR";

/// Every settable key. Both the config file and the command line fill one
/// of these; unset keys fall back to the protocol defaults.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub protocol: Option<String>,
    pub nodes: Option<usize>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    /// `uniform` or `pareto`.
    pub latency: Option<String>,
    pub alpha: Option<f64>,
    pub p_block: Option<f64>,
    pub t_block: Option<f64>,
    pub cycle_time: Option<f64>,
    pub d1: Option<f64>,
    pub stagger: Option<bool>,
    // BECP only.
    pub epsilon: Option<f64>,
    pub psi: Option<u32>,
    pub n_cache: Option<usize>,
    pub timeout_lo: Option<f64>,
    pub timeout_hi: Option<f64>,
    pub confirmed_retention: Option<u32>,
    // Snow only.
    pub k: Option<usize>,
    pub alpha1: Option<usize>,
    pub alpha2: Option<usize>,
    pub beta1: Option<u32>,
    pub beta2: Option<u32>,
    pub round_timeout: Option<f64>,
    // Sweep axes.
    pub node_counts: Option<Vec<usize>>,
    pub p_blocks: Option<Vec<f64>>,
    pub alphas: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($top:ident, $base:ident; $($f:ident),* $(,)?) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Keys set in `top` win over keys set in `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay!(top, base;
            protocol, nodes, duration, seed, trials, latency, alpha, p_block, t_block, cycle_time, d1, stagger,
            epsilon, psi, n_cache, timeout_lo, timeout_hi, confirmed_retention,
            k, alpha1, alpha2, beta1, beta2, round_timeout,
            node_counts, p_blocks, alphas, out,
        )
    }

    fn becp_keys(&self) -> [(&'static str, bool); 6] {
        [
            ("epsilon", self.epsilon.is_some()),
            ("psi", self.psi.is_some()),
            ("n_cache", self.n_cache.is_some()),
            ("timeout_lo", self.timeout_lo.is_some()),
            ("timeout_hi", self.timeout_hi.is_some()),
            ("confirmed_retention", self.confirmed_retention.is_some()),
        ]
    }

    fn snow_keys(&self) -> [(&'static str, bool); 6] {
        [
            ("k", self.k.is_some()),
            ("alpha1", self.alpha1.is_some()),
            ("alpha2", self.alpha2.is_some()),
            ("beta1", self.beta1.is_some()),
            ("beta2", self.beta2.is_some()),
            ("round_timeout", self.round_timeout.is_some()),
        ]
    }

    /// Resolves to a validated spec. `allow_unsafe` admits Pareto shapes
    /// outside 4..=8.
    pub fn resolve(&self, allow_unsafe: bool) -> Result<ExperimentSpec> {
        let protocol: Protocol = self.protocol.as_deref().unwrap_or("becp").parse()?;
        let foreign = match protocol {
            Protocol::Becp => self.snow_keys(),
            Protocol::Snowman | Protocol::Avalanche => self.becp_keys(),
        };
        if let Some((key, _)) = foreign.iter().find(|(_, set)| *set) {
            return Err(Error::config(
                *key,
                format!("does not apply to protocol {protocol}"),
            ));
        }

        let mut config = RunConfig::new(protocol, self.nodes.unwrap_or(1000));
        if let Some(d) = self.duration {
            config.duration = d;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(t) = self.trials {
            config.trials = t;
        }
        if let Some(s) = self.stagger {
            config.stagger_ticks = s;
        }
        match &mut config.params {
            ProtocolParams::Becp(p) => self.apply_becp(p),
            ProtocolParams::Snowman(p) | ProtocolParams::Avalanche(p) => self.apply_snow(p),
        }

        let pareto = match self.latency.as_deref() {
            None => self.alpha.is_some() || self.alphas.is_some(),
            Some("uniform") => {
                if self.alpha.is_some() || self.alphas.is_some() {
                    return Err(Error::config("alpha", "only applies to pareto latency"));
                }
                false
            }
            Some("pareto") => true,
            Some(other) => {
                return Err(Error::config(
                    "latency",
                    format!("expected uniform or pareto, got `{other}`"),
                ))
            }
        };
        if pareto {
            let alpha = match (self.alpha, &self.alphas) {
                (Some(a), _) => a,
                (None, Some(list)) => list.first().copied().unwrap_or(5.0),
                (None, None) => return Err(Error::config("alpha", "pareto latency needs --alpha")),
            };
            config.latency = LatencyModel::pareto(alpha);
        }

        let sweep = self.sweep()?;
        let mut alphas: Vec<f64> = config.latency.alpha().into_iter().collect();
        if let Sweep::Alpha(list) = &sweep {
            alphas.extend(list);
        }
        for a in alphas {
            if !allow_unsafe && !PARETO_ALPHA_RANGE.contains(&a) {
                return Err(Error::config(
                    "alpha",
                    format!(
                        "{a} is outside {}..={}; pass --unsafe to allow it",
                        PARETO_ALPHA_RANGE.start(),
                        PARETO_ALPHA_RANGE.end()
                    ),
                ));
            }
        }

        let out_dir = match &self.out {
            Some(p) => p.clone(),
            None => std::env::var_os(OUT_DIR_ENV)
                .map_or_else(|| PathBuf::from("results"), PathBuf::from),
        };
        let spec = ExperimentSpec {
            base: config,
            sweep,
            out_dir,
        };
        for c in spec.configs() {
            c.validate()?;
        }
        Ok(spec)
    }

    fn apply_becp(&self, p: &mut BecpParams) {
        let s = self;
        p.p_block = s.p_block.unwrap_or(p.p_block);
        p.t_block = s.t_block.unwrap_or(p.t_block);
        p.cycle_time = s.cycle_time.unwrap_or(p.cycle_time);
        p.processing_delay = s.d1.unwrap_or(p.processing_delay);
        p.epsilon = s.epsilon.unwrap_or(p.epsilon);
        p.psi_cycles = s.psi.unwrap_or(p.psi_cycles);
        p.n_cache = s.n_cache.unwrap_or(p.n_cache);
        p.timeout_lo = s.timeout_lo.unwrap_or(p.timeout_lo);
        p.timeout_hi = s.timeout_hi.unwrap_or(p.timeout_hi);
        p.confirmed_retention = s.confirmed_retention.unwrap_or(p.confirmed_retention);
    }

    fn apply_snow(&self, p: &mut SnowParams) {
        let s = self;
        p.p_block = s.p_block.unwrap_or(p.p_block);
        p.t_block = s.t_block.unwrap_or(p.t_block);
        p.cycle_time = s.cycle_time.unwrap_or(p.cycle_time);
        p.processing_delay = s.d1.unwrap_or(p.processing_delay);
        p.k = s.k.unwrap_or(p.k);
        p.alpha1 = s.alpha1.unwrap_or(p.alpha1);
        p.alpha2 = s.alpha2.unwrap_or(p.alpha2);
        p.beta1 = s.beta1.unwrap_or(p.beta1);
        p.beta2 = s.beta2.unwrap_or(p.beta2);
        if s.round_timeout.is_some() {
            p.round_timeout = s.round_timeout;
        }
    }

    fn sweep(&self) -> Result<Sweep> {
        let axes = [
            (
                "node_counts",
                self.node_counts.as_ref().map(|v| Sweep::Nodes(v.clone())),
            ),
            (
                "p_blocks",
                self.p_blocks.as_ref().map(|v| Sweep::PBlock(v.clone())),
            ),
            (
                "alphas",
                self.alphas.as_ref().map(|v| Sweep::Alpha(v.clone())),
            ),
        ];
        let mut set = axes.into_iter().filter_map(|(k, v)| v.map(|v| (k, v)));
        let Some((key, sweep)) = set.next() else {
            return Ok(Sweep::None);
        };
        if let Some((other, _)) = set.next() {
            return Err(Error::config(
                other,
                format!("only one sweep axis per run, `{key}` is already set"),
            ));
        }
        if sweep.is_empty() {
            return Err(Error::config(key, "sweep list is empty"));
        }
        Ok(sweep)
    }
}

/// The axis a sweep varies.
#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    None,
    Nodes(Vec<usize>),
    PBlock(Vec<f64>),
    Alpha(Vec<f64>),
}

impl Sweep {
    fn is_empty(&self) -> bool {
        match self {
            Sweep::None => false,
            Sweep::Nodes(v) => v.is_empty(),
            Sweep::PBlock(v) | Sweep::Alpha(v) => v.is_empty(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub base: RunConfig,
    pub sweep: Sweep,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    /// One config per sweep point, in the order given.
    pub fn configs(&self) -> Vec<RunConfig> {
        let base = self.base;
        match &self.sweep {
            Sweep::None => vec![base],
            Sweep::Nodes(v) => v
                .iter()
                .map(|&n| RunConfig { n_nodes: n, ..base })
                .collect(),
            Sweep::PBlock(v) => v
                .iter()
                .map(|&p| {
                    let mut c = base;
                    c.params.set_p_block(p);
                    c
                })
                .collect(),
            Sweep::Alpha(v) => v
                .iter()
                .map(|&a| RunConfig {
                    latency: LatencyModel::pareto(a),
                    ..base
                })
                .collect(),
        }
    }
}

/// Metrics of every trial and the aggregate for one configuration.
#[derive(Clone, Debug)]
pub struct ConfigOutcome {
    pub config: RunConfig,
    pub trials: Vec<TrialMetrics>,
    pub aggregate: Aggregate,
    pub digests: Vec<(u64, String)>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub configs: Vec<ConfigOutcome>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.configs.iter().all(|c| c.aggregate.verdict.pass())
    }

    pub fn rows(&self) -> Vec<CsvRow> {
        self.configs
            .iter()
            .flat_map(|c| {
                c.trials
                    .iter()
                    .map(CsvRow::from_trial)
                    .chain([CsvRow::from_aggregate(&c.aggregate)])
            })
            .collect()
    }
}

/// Runs every configuration of `spec`. With `inject_fault` the first
/// trial's ledger at node 0 is tampered with before checking, to exercise
/// the failure path.
pub fn run(spec: &ExperimentSpec, inject_fault: bool) -> Result<Outcome> {
    let mut configs = Vec::new();
    for (i, config) in spec.configs().into_iter().enumerate() {
        let mut results = run_trials(&config)?;
        if inject_fault && i == 0 {
            tamper(&mut results[0]);
        }
        let trials: Vec<TrialMetrics> = results.iter().map(metrics::compute).collect();
        let digests = results
            .iter()
            .map(|r| (r.seed, report::ledger_digest(&r.ledgers)))
            .collect();
        let aggregate = Aggregate::from_trials(&trials);
        configs.push(ConfigOutcome {
            config,
            trials,
            aggregate,
            digests,
        });
    }
    Ok(Outcome { configs })
}

/// Breaks the hash chain of node 0, appending a block if its ledger holds
/// only genesis.
fn tamper(result: &mut RunResult) {
    let ledger = &mut result.ledgers[0];
    if ledger.len() < 2 {
        let h = crate::model::BlockHeader::new(
            1,
            crate::model::NodeId(0),
            0.0,
            ledger.tip().header.hash,
        );
        ledger.append(h, 0.0).expect("block on the tip");
    }
    let last = ledger.len() - 1;
    ledger.blocks_mut()[last].header.parent = crate::model::BlockHash([0xee; 32]);
}

/// Writes `results.csv`, `summary.txt` and `ledgers.txt` under the output
/// directory, creating it if needed.
pub fn write_outputs(outcome: &Outcome, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    report::write_csv(
        fs::File::create(out_dir.join("results.csv"))?,
        &outcome.rows(),
    )?;
    fs::write(out_dir.join("summary.txt"), report::summary(outcome))?;
    let mut digests = String::new();
    for c in &outcome.configs {
        for (seed, d) in &c.digests {
            digests.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                report::config_label(&c.config),
                seed,
                c.config.n_nodes,
                d
            ));
        }
    }
    fs::write(out_dir.join("ledgers.txt"), digests)?;
    Ok(())
}

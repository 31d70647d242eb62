use std::path::{Path, PathBuf};
use std::process::ExitCode;

use becp::experiment::{self, Settings};
use becp::metrics::Verdict;
use becp::report::{self, CsvRow};
use clap::{Args, Parser, Subcommand};

/// Simulate epidemic blockchain consensus and the Snow baselines.
#[derive(Parser)]
#[command(name = "becp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for the requested trials.
    Run(RunArgs),
    /// Run a sweep over node counts, block probabilities or Pareto shapes.
    Sweep(SweepArgs),
    /// Re-check a results.csv and print one verdict per configuration.
    Verify {
        /// Output directory or CSV file.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with any of the keys below; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// uniform or pareto
    #[arg(long)]
    latency: Option<String>,
    /// Pareto shape.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p_block: Option<f64>,
    #[arg(long)]
    t_block: Option<f64>,
    #[arg(long)]
    cycle_time: Option<f64>,
    /// Fixed handling delay per message, seconds.
    #[arg(long)]
    d1: Option<f64>,
    /// Stagger first ticks within a cycle (default true).
    #[arg(long)]
    stagger: Option<bool>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    psi: Option<u32>,
    #[arg(long)]
    n_cache: Option<usize>,
    #[arg(long)]
    timeout_lo: Option<f64>,
    #[arg(long)]
    timeout_hi: Option<f64>,
    #[arg(long)]
    confirmed_retention: Option<u32>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha1: Option<usize>,
    #[arg(long)]
    alpha2: Option<usize>,
    #[arg(long)]
    beta1: Option<u32>,
    #[arg(long)]
    beta2: Option<u32>,
    #[arg(long)]
    round_timeout: Option<f64>,
    /// Output directory; defaults to $BECP_OUT_DIR, then ./results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow Pareto shapes outside 4..=8.
    #[arg(long = "unsafe")]
    allow_unsafe: bool,
    /// Corrupt one ledger after the first trial to exercise the failure path.
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    node_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    p_blocks: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

impl RunArgs {
    fn settings(&self) -> Settings {
        Settings {
            protocol: self.protocol.clone(),
            nodes: self.nodes,
            duration: self.duration,
            seed: self.seed,
            trials: self.trials,
            latency: self.latency.clone(),
            alpha: self.alpha,
            p_block: self.p_block,
            t_block: self.t_block,
            cycle_time: self.cycle_time,
            d1: self.d1,
            stagger: self.stagger,
            epsilon: self.epsilon,
            psi: self.psi,
            n_cache: self.n_cache,
            timeout_lo: self.timeout_lo,
            timeout_hi: self.timeout_hi,
            confirmed_retention: self.confirmed_retention,
            k: self.k,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            beta1: self.beta1,
            beta2: self.beta2,
            round_timeout: self.round_timeout,
            out: self.out.clone(),
            ..Settings::default()
        }
    }
}

fn execute(args: &RunArgs, sweep: Settings) -> becp::Result<bool> {
    let file = match &args.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    let spec = file
        .overlay(args.settings())
        .overlay(sweep)
        .resolve(args.allow_unsafe)?;
    let outcome = experiment::run(&spec, args.inject_fault)?;
    experiment::write_outputs(&outcome, &spec.out_dir)?;
    print!("{}", report::summary(&outcome));
    println!("wrote {}", spec.out_dir.display());
    Ok(outcome.pass())
}

fn verify(path: &Path) -> becp::Result<bool> {
    let file = if path.is_dir() {
        path.join("results.csv")
    } else {
        path.to_path_buf()
    };
    let rows = report::read_csv(std::fs::File::open(&file)?)?;
    let mut all = true;
    let mut group: Vec<&CsvRow> = Vec::new();
    for row in &rows {
        if !row.is_aggregate() {
            group.push(row);
            continue;
        }
        let failed = group.iter().filter(|r| !r.pass).count();
        let blocks = group
            .iter()
            .map(|r| r.blocks_confirmed as u64)
            .min()
            .unwrap_or(0);
        let verdict = Verdict {
            trials: group.len(),
            failed,
            blocks,
        };
        let alpha = row.alpha.map(|a| format!("({a})")).unwrap_or_default();
        println!(
            "{}/n={}/p={}/{}{} {}",
            row.protocol, row.n_nodes, row.p_block, row.latency_model, alpha, verdict
        );
        all &= verdict.pass() && row.pass;
        group.clear();
    }
    Ok(all && !rows.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => execute(args, Settings::default()),
        Command::Sweep(s) => {
            let axes = Settings {
                node_counts: s.node_counts.clone(),
                p_blocks: s.p_blocks.clone(),
                alphas: s.alphas.clone(),
                ..Settings::default()
            };
            execute(&s.run, axes)
        }
        Command::Verify { path } => verify(path),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

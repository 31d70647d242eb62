//! Epidemic blockchain consensus (BECP) and Snow-family baselines on a
//! deterministic discrete-event simulator.
//!
//! Nodes gossip size estimates ([`ssep`]), peer samples ([`ncp`]) and
//! per-block estimator pairs ([`consensus`]) in push/pull exchanges. A block
//! moves from propagation to agreement to confirmation once its estimators
//! track the estimated network size for enough consecutive cycles.
//!
//! ```
//! use becp::{run_simulation, metrics, RunConfig};
//!
//! let mut config = RunConfig::becp(20);
//! config.duration = 30.0;
//! let result = run_simulation(&config).unwrap();
//! let m = metrics::compute(&result);
//! assert!(m.pass());
//! assert!(m.blocks_confirmed >= 1);
//! ```

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod error;
pub mod experiment;
pub mod latency;
pub mod metrics;
pub mod model;
pub mod ncp;
pub mod report;
pub mod sim;
pub mod snow;
pub mod ssep;

pub use crate::consensus::{BecpNode, BecpParams};
pub use crate::error::{Error, Result};
pub use crate::latency::LatencyModel;
pub use crate::sim::{run_simulation, run_trials, Protocol, ProtocolParams, RunConfig, RunResult};
pub use crate::snow::SnowParams;

//! BECP consensus: per-block propagation and agreement estimators, duplicate
//! id resolution, fork resolution and block generation.

mod node;
mod params;

pub use self::node::{BecpNode, BlockProgress, ForkCounters, Resolution};
pub use self::params::{BecpParams, ParentRule, Proposers};

use crate::error::{Error, Result};
use crate::model::NodeId;

/// How a node decides to accept a block whose id it has not seen yet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParentRule {
    /// The block's parent must be the node's current preferred block.
    #[default]
    ParentIsPreferred,
    /// The creator of the block's parent must equal the creator of the
    /// preferred block. Kept for comparison runs; it can admit blocks that
    /// do not extend the local chain.
    CreatorMatchesPreferred,
}

/// Which nodes attempt block generation at each interval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Proposers {
    /// Every node attempts independently with probability `p_block`.
    #[default]
    Random,
    /// Only this node proposes, with certainty, at every interval.
    Only(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BecpParams {
    /// Relative error bound on the phase estimators.
    pub epsilon: f64,
    /// Consecutive converged cycles required per phase transition.
    pub psi_cycles: u32,
    pub cycle_time: f64,
    pub t_block: f64,
    pub p_block: f64,
    /// Lower bound of the per-block watchdog timeout, seconds.
    pub timeout_lo: f64,
    /// Upper bound of the per-block watchdog timeout, seconds.
    pub timeout_hi: f64,
    /// Fixed handling delay added to every delivery, seconds.
    pub processing_delay: f64,
    pub n_cache: usize,
    pub ncp_sample_size: usize,
    pub parent_rule: ParentRule,
    /// Cycles a confirmed block stays in the block cache, still exchanged
    /// and merged, so nodes that have not confirmed it yet keep converging.
    /// Zero drops it at confirmation.
    pub confirmed_retention: u32,
    pub proposers: Proposers,
}

impl Default for BecpParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            psi_cycles: 5,
            cycle_time: 0.351,
            t_block: 10.0,
            p_block: 0.05,
            timeout_lo: 1.0,
            timeout_hi: 2.0,
            processing_delay: 0.05,
            n_cache: 100,
            ncp_sample_size: crate::ncp::DEFAULT_SAMPLE_SIZE,
            parent_rule: ParentRule::default(),
            confirmed_retention: 20,
            proposers: Proposers::default(),
        }
    }
}

impl BecpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config("epsilon", "must lie in (0, 1)"));
        }
        if self.psi_cycles == 0 {
            return Err(Error::config("psi", "must be at least 1"));
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
        if !(self.timeout_lo >= 0.0 && self.timeout_lo <= self.timeout_hi) {
            return Err(Error::config(
                "timeout_lo",
                "must satisfy 0 <= timeout_lo <= timeout_hi",
            ));
        }
        if !(self.processing_delay >= 0.0) {
            return Err(Error::config("d1", "must be non-negative"));
        }
        if self.n_cache == 0 {
            return Err(Error::config("n_cache", "must be at least 1"));
        }
        Ok(())
    }
}

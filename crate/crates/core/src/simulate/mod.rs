//! Synthetic experiments: population generator, cluster block randomization,
//! the two-wave explore/exploit design and the resampling comparison of
//! policy rules.

mod dgp;
mod randomize;
mod two_phase;
mod validation;

pub use dgp::{
    draw_outcomes, gen_population, oracle_regret, ClusterSize, Dgp, DgpConfig, FeatureSpec,
    Modifier, Oracle, Population, RegionShare, RegretEstimate, ARM_NAMES,
};
pub use randomize::{block_randomize, block_randomize_clusters, Randomization};
pub use two_phase::{run_two_phase, Phase, TwoPhaseConfig, TwoPhaseResult};
pub use validation::{
    arm_label, validation_exercise, ComparisonMatrix, TreeSpec, ValidationConfig, PLUG_IN, RANDOM,
};

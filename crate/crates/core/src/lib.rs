//! Task-oriented quantizer design for cooperative multi-agent rendezvous.

pub mod env;
pub mod error;
pub mod oracle;
pub mod rl;
pub mod tocd;
pub mod voi;

pub use env::{Action, GridSpec, JointMdp, JointState, Observation, Rendezvous, StepOutcome, TerminalKind};
pub use error::{Error, Result};
pub use oracle::{
    check_affine_relation, check_c1, value_iteration, AffineFitReport, ExactSolution, Monotonicity, PartitionReport,
};
pub use rl::{
    centralized_q_learning, distributed_q_learning, epsilon, CentralizedSolution, DistributedSolution, GreedyPolicy,
    QTable, TrainConfig, UpdateRule,
};
pub use tocd::{
    build_link_codebooks, design_quantizer, kmedian_1d, BitBudgetMatrix, Codebook, LinkCodebooks, ValueClustering,
};
pub use voi::{compute_values, PeerDistribution, PeerDistributionKind, ValueOptions, ValueTable};
pub mod harness;
pub use harness::{
    run_centralized, run_esaic, run_saic, run_scenario, Curve, EmitOptions, ExperimentRecord, Format, Pipeline,
    RunSummary, Scenario, ScenarioFile,
};

/// Writes `contents` to `path`, creating missing parent directories.
pub(crate) fn write_file(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

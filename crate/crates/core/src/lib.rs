//! Tabular episodic-MDP simulator and learner library.
//!
//! The crate provides:
//! - [`mdp`]: layered finite-horizon MDPs, exact DP oracles, trajectory
//!   sampling, occupancy supports;
//! - [`env`]: the benchmark mazes (open gridworld, single/double corridor)
//!   and the deterministic chain;
//! - [`shaping`]: sandwiched shaping tables, gaussian corruption, and
//!   sandwich verification;
//! - [`learner`]: UCBVI and UCBVI-Shaped (bonus scaling and value
//!   projection) with exact per-episode regret accounting;
//! - [`pruning`]: the pseudosuboptimal / path-pseudosuboptimal /
//!   boundary-pseudosuboptimal set analysis;
//! - [`modelsel`]: EXP3-style online selection of the shaping quality
//!   parameter over a grid of candidates.

pub mod env;
pub mod learner;
pub mod mdp;
pub mod modelsel;
pub mod pruning;
pub mod rng;
pub mod shaping;

pub use env::{build_chain, build_maze, preset, EnvError, MazeSpec, PRESET_NAMES};
pub use learner::{
    bonus, empirical_model, plan, run, BonusKind, BonusSpec, Counts, EmpiricalModel,
    EpisodeLearner, EpisodeOutcome, LearnerError, PlanResult, Projection, RegretTrace,
    UnvisitedRule, Variant, VisitWindow,
};
pub use mdp::{
    exact_optimal_values, greedy_policy, occupancy_support, policy_value, sample_trajectory,
    GridMeta, MdpError, Policy, SparseRow, Step, TabularMdp, Trajectory, ValueKind, ValueTable,
};
pub use modelsel::{run_online, BetaGrid, MasterState, ModelSelError, OnlineOutcome};
pub use pruning::{
    best_report, boundary_pseudosub, default_delta_grid, delta_sweep, path_pseudosub, prune_report,
    pseudosub, reachable_states, surrogate_q, PruneError, PruneReport,
};
pub use rng::RunRng;
pub use shaping::{
    build_sandwiched, corrupt, verify_sandwich, SandwichReport, ShapingError, ShapingTable,
};

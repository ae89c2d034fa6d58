//! Decentralized LQ game solver for networked control systems with
//! sub-period delays and Bernoulli packet losses.
//!
//! The offline part computes per-controller gain schedules by backward
//! recursion ([`solve_game`]); the online part rolls the closed loop out under
//! sampled network realizations ([`run_episode`], [`run_monte_carlo`]).

pub mod container;
pub mod discretization;
pub mod error;
pub mod layout;
pub mod linalg;
pub mod moments;
pub mod network;
pub mod scenarios;
mod serde_matrix;
pub mod simulator;
pub mod solver;

pub use container::{read_schedule, spec_hash, write_schedule, write_state_blocks_csv};
pub use discretization::{build_beta, discretize, exp_integral, matrix_exponential, BetaSet, DiscreteStep, Discretizer, PlantSpec};
pub use error::{Error, Result};
pub use layout::AugmentedLayout;
pub use linalg::{Mat, Vector};
pub use moments::{estimate_moments, sample_beta_joint, BetaSample, MomentEngine, MomentSet};
pub use network::{empirical_rates, sample_scenario, DelayModel, InfoMode, KeyedRng, NetworkSpec, RateSummary, ScenarioRealization, Stream};
pub use scenarios::{builtin, builtin_generic, builtin_lfc, ScenarioConfig, BUILTIN_NAMES};
pub use simulator::{run_episode, run_monte_carlo, CostSummary, EmissionPolicy, SimulationTrace};
pub use solver::{
    converged_gains, single_controller_gains, solve_coefficients, solve_game, two_player_closed_form, Coefficients, ConvergedGains,
    GainSchedule, GameSolution, SolverSettings,
};

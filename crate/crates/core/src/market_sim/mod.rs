//! Monte Carlo market simulation.
//!
//! Each episode draws a job (principal `M`, true failure probability `p`),
//! has the underwriter quote it, lets the user, merchant and human override
//! decide, and resolves execution and losses. In [`SimMode::Engine`] every
//! episode is also run as a real job through the engine and ledger, and the
//! ledger's view of the economics must match the equations exactly.

mod cell;
mod decisions;
mod draw;
mod episode;
mod sweep;

use thiserror::Error;

use crate::engine::EngineError;

pub use cell::{run_cell, run_cell_on, CellParams, CellTotals, SimSettings, SweepResult};
pub use decisions::{
    merchant_posts, override_succeeds, posting_probability, resolve_execution, resolve_outcome,
    user_adopts, user_estimate, EpisodeOutcome, Execution, Resolution, UserPolicy,
};
pub use draw::{DrawModel, EpisodeDraw, MarketModel, ToyUniverse};
pub use episode::{evaluate, priced, run_episode, sim_driver, SimMode, SIM_ENDOWMENT};
pub use sweep::{run_sweep, to_csv, Defaults, Grid, SweepConfig, SweepKind, CSV_COLUMNS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("episode {episode}: {field} is {equations} by the equations but {ledger} on the ledger")]
    EngineInconsistency {
        episode: u64,
        field: &'static str,
        equations: String,
        ledger: String,
    },
    #[error("the protocol rejected a simulated action: {0}")]
    Protocol(#[from] EngineError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

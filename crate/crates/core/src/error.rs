use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::filippov::SimulationError;
use crate::measures::MeasureError;
use crate::synth::SearchFailure;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Simulation(#[from] Box<SimulationError>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("switching gradient vanishes at {point:?} (|grad H| = {norm:e})")]
    DegenerateGradient { point: Vec<f64>, norm: f64 },
    #[error("region contains no grid points")]
    EmptyRegion,
    #[error("no sign change of the switching function found in the region")]
    EmptySigma,
    #[error("invalid region: {0}")]
    Region(String),
    #[error("trajectories do not share a time grid: {0}")]
    GridMismatch(String),
    #[error("open loop already contracting at the target rate on the whole design region")]
    AlreadyContracting,
    #[error(
        "no gain in the lattice satisfies the conditions ({} candidates, best violation {:e} at {:?})",
        .0.candidates_evaluated, .0.best_violation, .0.best_gains
    )]
    SearchFailed(Box<SearchFailure>),
    #[error("{0}")]
    Invalid(String),
}

impl From<SimulationError> for Error {
    fn from(e: SimulationError) -> Self {
        Error::Simulation(Box::new(e))
    }
}

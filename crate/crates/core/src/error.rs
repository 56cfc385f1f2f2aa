use thiserror::Error;

/// Errors produced by grid construction, kernel precomputation and the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad grid dimensions, empty initial state, ...).
    #[error("configuration: {0}")]
    Config(String),

    /// The pair-creation rate over one step exceeded the safety guard;
    /// the time step is too large for this potential.
    #[error(
        "timestep too large: gamma*dt = {gamma_dt:.6} exceeds guard {guard} \
         at cell ({i}, {j}); reduce dt or raise particles.max_gamma_dt"
    )]
    TimestepTooLarge { gamma_dt: f64, guard: f64, i: usize, j: usize },

    /// The ensemble outgrew the configured particle cap.
    #[error(
        "particle capacity exceeded: {count} > {max}; \
         annihilate more often or use a smaller dt"
    )]
    CapacityExceeded { count: usize, max: usize },

    /// A dense kernel table would not fit under the configured memory cap.
    #[error("dense kernel table needs {required} bytes ({entries} entries), cap is {cap} bytes")]
    MemoryCap { required: u64, entries: u64, cap: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

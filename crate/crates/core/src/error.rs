//! Error type shared by all modules.

/// Everything that can go wrong while configuring or running a simulation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// One or more configuration fields failed validation. Each entry names
    /// the offending field and the constraint it violated.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("invalid atom index {0}; expected 1 or 2")]
    AtomIndex(u8),

    #[error("invalid level index {0}; expected 1, 2, or 3")]
    LevelIndex(u8),

    #[error("pair state needs two distinct levels, got k = l = {0}")]
    DegeneratePair(u8),

    /// The adaptive integrator could not meet the error tolerance even at the
    /// smallest representable step.
    #[error("integration step underflow at t = {t:.6e} (step {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    /// NaN or infinity appeared in the integrated state.
    #[error("non-finite state component at t = {t:.6e}")]
    NonFiniteState { t: f64 },

    /// The generator has no numerical null vector, which signals an assembly
    /// bug rather than an unfortunate parameter choice.
    #[error(
        "no steady state: smallest singular value {sigma_min:.3e} is above the \
         null threshold {threshold:.3e}"
    )]
    NoNullVector { sigma_min: f64, threshold: f64 },

    /// More than one linearly independent steady state.
    #[error("steady state is not unique: null-space dimension {0}")]
    DegenerateSteadyState(usize),

    /// An eigenstate of the drive-free Hamiltonian had no dominant basis
    /// component, so it cannot be named without guessing.
    #[error("ambiguous eigenstate labeling: {0}")]
    AmbiguousLabel(String),

    /// A solver was asked for something that only makes sense for a
    /// time-independent generator.
    #[error("{0} requires a time-independent generator")]
    TimeDependentGenerator(&'static str),

    /// Root bracketing failed when inverting the coupling strength.
    #[error("cannot invert coupling: {0}")]
    Inversion(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for single-field validation failures.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }
}

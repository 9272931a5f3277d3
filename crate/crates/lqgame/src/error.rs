//! Error type shared across the crate.

use thiserror::Error;

use crate::game_model::ValidationReport;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The game specification violates one of the model assumptions.
    #[error("invalid game specification:\n{0}")]
    InvalidSpec(ValidationReport),

    /// Matrix or policy dimensions are inconsistent with the game.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A time index fell outside `0..horizon`.
    #[error("time index {t} out of range for horizon {horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    /// A player index fell outside `0..num_players`.
    #[error("player index {player} out of range for {num_players} players")]
    PlayerOutOfRange { player: usize, num_players: usize },

    /// The stacked gain-coupling system is numerically singular at time `t`,
    /// so unique equilibrium gains cannot be recovered there.
    #[error("gain-coupling system singular at t={t} (condition estimate {cond:.3e})")]
    SingularCoupling { t: usize, cond: f64 },

    /// Policy evaluation produced a non-finite intermediate at time `t`.
    #[error("policy evaluation diverged at t={0}")]
    Diverged(usize),

    /// A state covariance matrix is numerically singular at time `t`.
    #[error("state covariance singular at t={0}")]
    SingularCovariance(usize),

    /// The noise covariance admits no Cholesky factor (not positive definite).
    #[error("noise covariance is not positive definite")]
    CholeskyFailure,

    /// Unknown experiment preset name.
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    /// A scalar argument was outside its allowed range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration or file I/O problem (CLI layer).
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code used by the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::DimensionMismatch(_)
            | Error::TimeOutOfRange { .. }
            | Error::PlayerOutOfRange { .. }
            | Error::UnknownPreset(_)
            | Error::InvalidArgument(_)
            | Error::Config(_) => 1,
            Error::SingularCoupling { .. }
            | Error::SingularCovariance(_)
            | Error::CholeskyFailure => 2,
            Error::Diverged(_) => 3,
        }
    }
}

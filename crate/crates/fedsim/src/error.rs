use thiserror::Error;

/// Error type shared across the simulator.
#[derive(Debug, Error)]
pub enum FedsimError {
    /// Invalid configuration: bad dimensions, weights, hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset text could not be parsed; carries the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A client iterate left the finite range during local updates.
    #[error("divergence on client {client} at local step {step}: {message}")]
    Divergence {
        client: usize,
        step: usize,
        message: String,
    },

    /// Wire-protocol violation (bad frame, unknown message type, truncation).
    #[error("protocol error at byte {offset}: {message}")]
    Protocol { offset: usize, message: String },

    /// A ground-truth computation failed to reach its required residual.
    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FedsimError>;

impl FedsimError {
    pub fn config(msg: impl Into<String>) -> Self {
        FedsimError::Config(msg.into())
    }
}

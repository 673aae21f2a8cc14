use thiserror::Error;

/// Errors produced by the latentgnn crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    BufferLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{what}: N = {n} exceeds the cap of {cap}")]
    TooLarge { what: &'static str, n: usize, cap: usize },
    #[error("operation count overflows u64")]
    Overflow,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

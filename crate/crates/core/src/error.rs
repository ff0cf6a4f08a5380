use alloc::string::String;

/// Errors raised by the core engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("client {client} diverged at round {round}, epoch {epoch}, batch {batch}: {detail}")]
    Training {
        client: usize,
        round: usize,
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

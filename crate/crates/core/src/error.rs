use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("ill-conditioned library; offending columns: {}", labels.join(", "))]
    IllConditioned { labels: Vec<String> },
    #[error("simulation blew up after t = {t_last_good}")]
    BlowUp { t_last_good: f64 },
    #[error("sampling interval {dt} exceeds the Kramers-Moyal cap {cap}")]
    CoarseSampling { dt: f64, cap: f64 },
    #[error("column labels differ between training and test libraries")]
    LabelMismatch,
    #[error("equation for X{}: {source}", index + 1)]
    State {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_state(self, index: usize) -> Error {
        Error::State { index, source: Box::new(self) }
    }

    /// Innermost error with state context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::State { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

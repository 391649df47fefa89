use std::fmt;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const SIMULATION: i32 = 3;
    pub const SAMPLER: i32 = 4;
    pub const PREDICTION: i32 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(exit::CONFIG, message)
    }

    pub fn config_from(e: twinforge::Error) -> Self {
        CliError::config(e.to_string())
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::config(format!("{}: {e}", path.display()))
    }

    /// Maps a library error raised while running `stage`.
    pub fn from_core(stage: Stage, e: twinforge::Error) -> Self {
        use twinforge::Error as E;
        let code = match (e.root(), stage) {
            (E::BlowUp { .. }, Stage::Predict) => exit::PREDICTION,
            (E::BlowUp { .. }, _) => exit::SIMULATION,
            (E::IllConditioned { .. }, _) => exit::SAMPLER,
            (E::NonFinite(_), Stage::Update) => exit::SAMPLER,
            (E::NonFinite(_), Stage::Simulate) => exit::SIMULATION,
            (E::NonFinite(_), Stage::Predict) => exit::PREDICTION,
            _ => exit::CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Update,
    Predict,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

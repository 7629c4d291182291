use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] sapiens_core::Error),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything that failed at runtime.
    pub fn exit_code(&self) -> i32 {
        use sapiens_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Config(_) | E::BadDecay(_) | E::BadRatio(_) | E::UnknownModel(_) | E::BadConfig(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |e| CliError::Io { path, detail: e.to_string() }
}

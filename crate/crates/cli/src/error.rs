use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chain {chain} diverged at iteration {iteration} (norm {norm:e}); partial output in {dir}")]
    Diverged {
        chain: usize,
        iteration: usize,
        norm: f64,
        dir: String,
    },
    #[error("{0}")]
    Output(String),
    #[error(transparent)]
    Core(#[from] funclangevin::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Diverged { .. } => 3,
            _ => 4,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

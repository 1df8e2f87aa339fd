use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad scenario file, flag or name. Nothing has been written.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] nelsonlab_core::Error),
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// Process exit status: 64 for configuration errors, 70 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 64,
            _ => 70,
        }
    }
}

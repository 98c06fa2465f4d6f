use std::process::ExitCode;

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input. Exit code 2.
    Input(anyhow::Error),
    /// Some classes failed while the rest were written. Exit code 3.
    Partial(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Partial(_) => 3,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) => {
                // Library errors often repeat their source in their own message.
                let mut text = String::new();
                for cause in e.chain() {
                    let msg = cause.to_string();
                    if !text.contains(&msg) {
                        if !text.is_empty() {
                            text.push_str(": ");
                        }
                        text.push_str(&msg);
                    }
                }
                f.write_str(&text)
            }
            CliError::Partial(msg) => f.write_str(msg),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

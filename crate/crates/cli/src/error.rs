use std::fmt;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// A failure with the process exit code it maps to: 2 for bad
/// configuration or input, 3 for numeric failures during computation.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<depthclip::Error> for CliError {
    fn from(e: depthclip::Error) -> Self {
        CliError {
            code: if e.is_numeric() { EXIT_NUMERIC } else { EXIT_CONFIG },
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(format!("json: {e}"))
    }
}

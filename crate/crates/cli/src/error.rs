use serde::Serialize;

/// Failure of a CLI run, reported on stderr as one JSON object.
#[derive(Debug, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum CliError {
    /// Bad or missing configuration; exit code 2.
    Config { field: String, message: String },
    /// The solver or a baseline failed on a valid configuration; exit code 1.
    Solver { message: String },
    /// Writing artifacts failed; exit code 1.
    Output { path: String, message: String },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        CliError::Solver { message: message.into() }
    }

    /// Sorts a library error into configuration or solver failure. Errors
    /// about parameters, shapes and input files are configuration errors
    /// attributed to `section`.
    pub fn from_core(section: &str, e: cmm::Error) -> Self {
        use cmm::Error as E;
        match &e {
            E::InvalidParameter { name, .. } => CliError::config(format!("{section}.{name}"), e.to_string()),
            E::Shape { .. } | E::InvalidMarginals(_) | E::Parse { .. } | E::Io(_) | E::Json(_) => {
                CliError::config(section, e.to_string())
            }
            _ => CliError::solver(e.to_string()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Solver { .. } | CliError::Output { .. } => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

use std::fmt;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Configuration violations, one message each.
    Config(Vec<String>),
    /// Missing, unreadable or malformed input file.
    Input(String),
    /// NaN, Inf or divergence during a run.
    Numeric(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(v) => {
                write!(f, "invalid configuration ({} problem{}):", v.len(), if v.len() == 1 { "" } else { "s" })?;
                for m in v {
                    write!(f, "\n  - {m}")?;
                }
                Ok(())
            }
            CliError::Input(m) => write!(f, "bad input: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<featcache::Error> for CliError {
    fn from(e: featcache::Error) -> Self {
        use featcache::Error as E;
        match e {
            E::NonFinite { .. } | E::Numeric(_) => CliError::Numeric(e.to_string()),
            E::Config(m) => CliError::Config(vec![m]),
            E::Dimension { .. } | E::Version { .. } | E::Format(_) | E::Json(_) | E::Io(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

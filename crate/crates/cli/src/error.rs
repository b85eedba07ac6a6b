use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("gate refused: measured lambda = {measured:.6}, threshold = {threshold:.6}")]
    Gate { measured: f64, threshold: f64 },

    #[error("not converged: {0}")]
    NoConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Gate { .. } => EXIT_GATE,
            CliError::NoConvergence(_) => EXIT_NONCONVERGENCE,
        }
    }

    /// One-line `key=value` record for scripts.
    pub fn record(&self) -> String {
        let kind = match self {
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Gate { .. } => "gate",
            CliError::NoConvergence(_) => "nonconvergence",
        };
        let mut rec = format!("error code={} kind={kind}", self.exit_code());
        if let CliError::Gate { measured, threshold } = self {
            rec.push_str(&format!(" measured={measured:?} threshold={threshold:?}"));
        }
        rec.push_str(&format!(" message={:?}", self.to_string()));
        rec
    }
}

impl From<formbound::Error> for CliError {
    fn from(e: formbound::Error) -> Self {
        use formbound::Error as E;
        match e {
            E::Gate { measured, threshold } | E::Coercivity { measured, threshold } => CliError::Gate { measured, threshold },
            E::NoConvergence { .. } | E::Certificate(_) | E::Degenerate | E::Negativity { .. } => {
                CliError::NoConvergence(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

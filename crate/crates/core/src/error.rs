use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no station has a daily value on {0}")]
    UncoverableDay(NaiveDate),

    #[error("site {site_id}: no coverage on {} day(s): {}", .dates.len(), format_dates(.dates))]
    MissingDates { site_id: String, dates: Vec<NaiveDate> },

    #[error("design matrix is rank deficient: {} linearly dependent on preceding columns", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("optimizer did not converge after {iterations} iterations; trace: {trace}")]
    NonConvergence { iterations: usize, trace: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::RankDeficient { .. } | Error::NonConvergence { .. } | Error::Numerical(_))
    }

    /// Process exit code: 2 for input errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}

fn format_dates(dates: &[NaiveDate]) -> String {
    const SHOWN: usize = 10;
    let mut s = dates.iter().take(SHOWN).map(|d| d.to_string()).collect::<Vec<_>>().join(", ");
    if dates.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", dates.len() - SHOWN));
    }
    s
}

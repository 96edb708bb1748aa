use thiserror::Error;

use crate::engine::FitTrace;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("incomplete rows (missing response or covariate): {}", format_rows(.rows))]
    IncompleteRows { rows: Vec<usize> },

    #[error("all {0} rows were rejected")]
    AllRowsRejected(usize),

    #[error("ill-conditioned variance state: {0}")]
    IllConditioned(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit aborted at iteration {iteration}: {source}")]
    Aborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
        partial: Box<FitTrace>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Config,
            Error::InvalidData(_)
            | Error::UnknownColumn(_)
            | Error::NonNumeric { .. }
            | Error::IncompleteRows { .. }
            | Error::AllRowsRejected(_)
            | Error::Csv(_)
            | Error::Io(_) => ErrorKind::Data,
            Error::IllConditioned(_) | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Aborted { source, .. } => source.kind(),
        }
    }

    /// Stable dotted identifier, e.g. `data.incomplete_rows`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "config.invalid",
            Error::InvalidData(_) => "data.invalid",
            Error::UnknownColumn(_) => "data.unknown_column",
            Error::NonNumeric { .. } => "data.non_numeric",
            Error::IncompleteRows { .. } => "data.incomplete_rows",
            Error::AllRowsRejected(_) => "data.all_rows_rejected",
            Error::IllConditioned(_) => "numerical.ill_conditioned",
            Error::Numerical(_) => "numerical.failure",
            Error::Aborted { source, .. } => source.code(),
            Error::Csv(_) => "data.csv",
            Error::Io(_) => "data.io",
        }
    }
}

fn format_rows(rows: &[usize]) -> String {
    const SHOWN: usize = 20;
    let mut s = rows
        .iter()
        .take(SHOWN)
        .map(|r| format!("row {r}"))
        .collect::<Vec<_>>()
        .join(", ");
    if rows.len() > SHOWN {
        s.push_str(&format!(" and {} more", rows.len() - SHOWN));
    }
    s
}

pub type Result<T> = std::result::Result<T, Error>;

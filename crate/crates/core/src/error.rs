use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid qubit encoding: {0}")]
    InvalidEncoding(String),

    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("interval [{start}, {end}] s is outside the trace span [{lo}, {hi}] s")]
    OutOfRange { start: f64, end: f64, lo: f64, hi: f64 },

    #[error("no fidelity transition in scan data: {0}")]
    NoTransition(String),

    #[error("fit never exceeds the {threshold} fidelity threshold (f_max = {f_max})")]
    NeverAboveThreshold { threshold: f64, f_max: f64 },

    #[error("cannot compare scans: {0}")]
    Comparison(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain { what, value, domain }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, OcError>;

#[derive(Debug, Clone, Error)]
pub enum OcError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("quadrature did not converge on segment [{start}, {end}] (error estimate {estimate:e})")]
    Quadrature { start: f64, end: f64, estimate: f64 },

    #[error("linear independence condition violated (numerical rank {rank} < {required}); singular values {singular_values:?}")]
    LiViolated {
        rank: usize,
        required: usize,
        singular_values: Vec<f64>,
    },

    #[error("stationarity at the horizon not satisfiable: residual {residual:e} exceeds {allowed:e}")]
    Stationarity { residual: f64, allowed: f64 },

    #[error("sign condition violated: lambda_{index} = {value:e}")]
    SignCondition { index: usize, value: f64 },

    #[error("shooting did not converge after {iterations} iterations; residual history {history:?}")]
    NoConvergence { iterations: usize, history: Vec<f64> },

    #[error("unsupported problem: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at offset {offset}{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownIdentifier {
        name: String,
        offset: usize,
        suggestion: Option<String>,
    },

    #[error("evaluation error in `{snippet}` (bytes {start}..{end}): {message}")]
    Eval {
        start: usize,
        end: usize,
        snippet: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl OcError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        OcError::Domain(msg.into())
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        OcError::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }
}

impl From<std::io::Error> for OcError {
    fn from(e: std::io::Error) -> Self {
        OcError::Io(e.to_string())
    }
}

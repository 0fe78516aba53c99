use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had the wrong shape.
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    TokenOutOfRange { token: usize, m: usize },
    StateOutOfRange { state: usize, d: usize },
    /// A probability vector or stochastic-matrix row is invalid.
    NotStochastic {
        what: &'static str,
        row: usize,
        reason: String,
    },
    NotFinite { what: &'static str },
    /// The observation prefix `z_1..z_t` has probability zero.
    ImpossibleObservation { t: usize },
    /// Exhaustive enumeration would exceed the configured term budget.
    BudgetExceeded { terms: u128, budget: u128 },
    /// An adapted process or path map does not cover every prefix.
    Incomplete {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::TokenOutOfRange { token, m } => {
                write!(f, "token {token} outside observation space {{0,...,{m}}}")
            }
            Error::StateOutOfRange { state, d } => {
                write!(f, "state index {state} outside state space of size {d}")
            }
            Error::NotStochastic { what, row, reason } => {
                write!(f, "{what} row {row} is not a probability vector: {reason}")
            }
            Error::NotFinite { what } => write!(f, "{what} contains NaN or infinite entries"),
            Error::ImpossibleObservation { t } => write!(
                f,
                "impossible observation: prefix z_1..z_{t} has probability zero"
            ),
            Error::BudgetExceeded { terms, budget } => write!(
                f,
                "enumeration needs {terms} terms but the budget is {budget}; reduce T, d or m"
            ),
            Error::Incomplete {
                what,
                expected,
                found,
            } => write!(f, "{what} is incomplete: expected {expected} entries, found {found}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

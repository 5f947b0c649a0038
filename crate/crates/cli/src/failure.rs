use std::fmt;

use deepsep::baselines::LmsError;
use deepsep::trainer::{EvalError, TrainError};

/// Process exit status of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            kind: Kind::Usage,
            error: anyhow::anyhow!(msg.into()),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self {
            kind: Kind::Numerical,
            error: anyhow::anyhow!(msg.into()),
        }
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn is_numerical(e: &(dyn std::error::Error + 'static)) -> bool {
    if let Some(t) = e.downcast_ref::<TrainError>() {
        return matches!(t, TrainError::NonFinite { .. });
    }
    if let Some(l) = e.downcast_ref::<LmsError>() {
        return matches!(l, LmsError::Diverged { .. });
    }
    if let Some(EvalError::Lms(l)) = e.downcast_ref::<EvalError>() {
        return matches!(l, LmsError::Diverged { .. });
    }
    false
}

/// Anything not recognised as a numerical failure counts as a data error.
impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let kind = if error.chain().any(is_numerical) {
            Kind::Numerical
        } else {
            Kind::Data
        };
        Self { kind, error }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// `?`-friendly conversion for library errors.
pub trait Context<T> {
    fn ctx(self, what: impl fmt::Display) -> CmdResult<T>;
}

impl<T, E> Context<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn ctx(self, what: impl fmt::Display) -> CmdResult<T> {
        self.map_err(|e| Failure::from(anyhow::Error::new(e).context(what.to_string())))
    }
}

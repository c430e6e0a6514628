use std::fmt;

use glassgap::Error;

/// Run outcome other than success, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Io(String),
    Config(String),
    Numerical(String),
    Invariant(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Invariant(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Invariant(m) => write!(f, "invariant violated: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::InvalidModel(_) | Error::InvalidMeasure(_) | Error::Domain(_) | Error::TooLarge(_) | Error::Precondition(_) => {
                Failure::Config(m)
            }
            Error::GridTooSmall(_) | Error::Unstable(_) | Error::NoConvergence(_) | Error::Degenerate(_) => Failure::Numerical(m),
            Error::Invariant(_) => Failure::Invariant(m),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] qdet::Error),
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => Self::USAGE,
            Failure::Core(e) if e.is_numeric() => Self::NUMERIC,
            Failure::Data(_) | Failure::Core(_) => Self::DATA,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(qdet::Error::Io(e))
    }
}

/// Attaches the offending path to I/O and decode failures.
pub fn at_path(path: &std::path::Path) -> impl Fn(qdet::Error) -> Failure + '_ {
    move |e| match e {
        e if e.is_numeric() => Failure::Core(e),
        e => Failure::Data(format!("{}: {e}", path.display())),
    }
}

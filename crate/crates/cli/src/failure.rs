use std::fmt;
use std::process::ExitCode;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Failure::Data(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        })
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Numeric(e) => e,
        }
    }

    /// Prefix the message with `what`, keeping the exit code.
    pub fn context(self, what: impl fmt::Display + Send + Sync + 'static) -> Self {
        match self {
            Failure::Usage(e) => Failure::Usage(e.context(what)),
            Failure::Data(e) => Failure::Data(e.context(what)),
            Failure::Numeric(e) => Failure::Numeric(e.context(what)),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.inner())
    }
}

impl From<raff_core::Error> for Failure {
    fn from(e: raff_core::Error) -> Self {
        use raff_core::Error as E;
        match e {
            E::UnknownModel(_) | E::InvalidParams(_) | E::Generation(_) => Failure::Usage(e.into()),
            E::InvalidProblem(_) | E::Parse { .. } | E::Io(_) => Failure::Data(e.into()),
            E::Eval(_) | E::NotPositiveDefinite | E::DegenerateModel(_) | E::UndefinedTolerance => {
                Failure::Numeric(e.into())
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

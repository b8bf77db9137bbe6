use std::fmt;

use trialcea::cea::CeaError;
use trialcea::comparators::ComparatorError;
use trialcea::contrasts::ContrastError;
use trialcea::data::DataError;
use trialcea::mmrm::MmrmError;
use trialcea::simulate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Input,
    Convergence,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Input => 2,
            Kind::Convergence => 3,
            Kind::Internal => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Input => "input",
            Kind::Convergence => "convergence",
            Kind::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Input,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Internal,
            message: message.into(),
        }
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

/// `error[kind]: message` on one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {flat}", self.kind.name())
    }
}

fn with(kind: Kind, e: impl fmt::Display) -> CliError {
    CliError {
        kind,
        message: e.to_string(),
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        with(Kind::Internal, e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => with(Kind::Internal, e),
            _ => with(Kind::Input, e),
        }
    }
}

impl From<MmrmError> for CliError {
    fn from(e: MmrmError) -> Self {
        let kind = match e {
            MmrmError::NotConverged { .. } | MmrmError::SingularCovariance | MmrmError::SingularInformation => Kind::Convergence,
            MmrmError::ThetaLength { .. } | MmrmError::Shape(_) => Kind::Internal,
            _ => Kind::Input,
        };
        with(kind, e)
    }
}

impl From<ContrastError> for CliError {
    fn from(e: ContrastError) -> Self {
        match e {
            ContrastError::Io(_) => with(Kind::Internal, e),
            _ => with(Kind::Input, e),
        }
    }
}

impl From<CeaError> for CliError {
    fn from(e: CeaError) -> Self {
        match e {
            CeaError::PointFit(inner) => CliError::from(inner).context("full-data fit"),
            CeaError::Contrast(inner) => inner.into(),
            CeaError::TooManyFailures { .. } => with(Kind::Convergence, e),
            CeaError::Io(_) | CeaError::EmptyDraws => with(Kind::Internal, e),
            _ => with(Kind::Input, e),
        }
    }
}

impl From<ComparatorError> for CliError {
    fn from(e: ComparatorError) -> Self {
        match e {
            ComparatorError::Fit(inner) => inner.into(),
            ComparatorError::Contrast(inner) => inner.into(),
            ComparatorError::Regression { .. } | ComparatorError::SingularImputation { .. } => with(Kind::Convergence, e),
            ComparatorError::Io(_) | ComparatorError::ShapeMismatch | ComparatorError::PoolLength => with(Kind::Internal, e),
            _ => with(Kind::Input, e),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Data(inner) => inner.into(),
            SimError::Contrast(inner) => inner.into(),
            _ => with(Kind::Input, e),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        with(Kind::Internal, e)
    }
}

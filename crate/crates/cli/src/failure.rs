//! Errors carrying the process exit code.

use std::fmt;

use divesound::embedding::{FormatError, ProviderError};
use divesound::fusion::FusionError;
use divesound::llm::LlmError;
use divesound::matcher::{ManifestError, MatchError};
use divesound::metrics::MetricsError;
use divesound::taxonomy::TaxonomyError;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NETWORK: u8 = 3;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        Self::new(EXIT_VALIDATION, anyhow::anyhow!("{msg}"))
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.error = self.error.context(what.to_string());
        self
    }
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exit {}: {:#}", self.code, self.error)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl From<TaxonomyError> for Failure {
    fn from(e: TaxonomyError) -> Self {
        let code = match e {
            TaxonomyError::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e)
    }
}

fn format_code(e: &FormatError) -> u8 {
    match e {
        FormatError::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Self::new(format_code(&e), e)
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        let code = match e {
            ManifestError::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e)
    }
}

impl From<MatchError> for Failure {
    fn from(e: MatchError) -> Self {
        Self::new(EXIT_VALIDATION, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Self::new(EXIT_VALIDATION, e)
    }
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        let code = match &e {
            FusionError::Format(f) => format_code(f),
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e)
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        let code = match &e {
            e if e.is_network() => EXIT_NETWORK,
            LlmError::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e)
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        let code = match e {
            ProviderError::Set(_) => EXIT_VALIDATION,
            _ => EXIT_NETWORK,
        };
        Self::new(code, e)
    }
}

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong between reading a corpus and writing topics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyCorpus: no documents to process")]
    EmptyCorpus,
    #[error("EmptyVocabulary: no term survives the document-frequency filters")]
    EmptyVocabulary,
    #[error("DuplicateDocumentId: {0:?} appears more than once")]
    DuplicateDocumentId(String),
    #[error("EmptyToken: document {0:?} contains an empty token")]
    EmptyToken(String),
    #[error("EmptyColumn: document {0:?} has no in-vocabulary tokens")]
    EmptyColumn(String),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("InvalidRank: k = {k} outside [1, {max}]")]
    InvalidRank { k: usize, max: usize },
    #[error("NonNegativityViolation: entry ({row}, {col}) = {value}")]
    NonNegativityViolation { row: usize, col: usize, value: f64 },
    #[error("DegenerateMatrix: {0}")]
    DegenerateMatrix(String),
    #[error("DegenerateBasis: column {0} of the basis is all zero")]
    DegenerateBasis(usize),
    #[error("SingleCluster: silhouette is undefined for a single cluster")]
    SingleCluster,
    #[error("NoStableRank: no rank in [{k_min}, {k_max}] reaches the silhouette threshold")]
    NoStableRank { k_min: usize, k_max: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("Parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Exit-code classes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::InvalidConfig(_) | Error::InvalidRank { .. } => ErrorClass::Usage,
            Error::DegenerateMatrix(_)
            | Error::DegenerateBasis(_)
            | Error::SingleCluster
            | Error::NoStableRank { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("taxonomy: {0}")]
    Taxonomy(String),

    #[error("unknown taxonomy node {0}")]
    UnknownNode(String),

    #[error("class {0} has no leaf in the taxonomy")]
    UnmappedClass(String),

    #[error("k = {k} exceeds index size {size}")]
    TooManyNeighbors { k: usize, size: usize },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate synthetic configuration: {0}")]
    DegenerateConfig(String),

    #[error("score variant {variant} is not available for a {definition} classifier")]
    IncompatibleVariant {
        variant: &'static str,
        definition: &'static str,
    },

    #[error("corrupt {what}: {reason}")]
    Corrupt { what: &'static str, reason: String },

    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    #[error("setting {setting}: {source}")]
    Setting {
        setting: String,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn corrupt(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            what,
            reason: reason.into(),
        }
    }

    /// Annotates an error with the sample it came from.
    pub fn for_sample(self, sample_id: &str) -> Self {
        Error::Sample {
            sample_id: sample_id.into(),
            source: alloc::boxed::Box::new(self),
        }
    }

    /// Annotates an error with the reference setting it came from.
    pub fn for_setting(self, setting: impl Into<String>) -> Self {
        Error::Setting {
            setting: setting.into(),
            source: alloc::boxed::Box::new(self),
        }
    }
}

use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Variants map one-to-one onto the failure kinds of each subsystem so that
/// callers (the CLI, the HTTP service and the C ABI) can report them
/// precisely.
#[derive(Debug, Error)]
pub enum Error {
    // math
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector: cosine similarity is undefined")]
    ZeroVector,
    #[error("negative input: {0}")]
    NegativeInput(f64),
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("empty embedding")]
    EmptyEmbedding,

    // prompting
    #[error("empty field: {0}")]
    EmptyField(&'static str),
    #[error("malformed template: {0}")]
    MalformedTemplate(String),
    #[error("token budget {budget} too small: template and instruction alone need {needed}")]
    BudgetTooSmall { budget: usize, needed: usize },

    // backends
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no synthetic answer configured for input {input:?} under instruction {instruction:?}")]
    MissingConfigEntry { input: String, instruction: String },
    #[error("corrupt replay file: {0}")]
    CorruptFile(String),
    #[error("no replay record for {0}")]
    MissingRecord(String),

    // encoding
    #[error("layer {0} missing from generation record")]
    LayerMissing(i64),
    #[error("method {method} unavailable for {mode} models")]
    MethodUnavailableForMode { method: String, mode: String },
    #[error("degenerate record: {0}")]
    DegenerateRecord(String),
    #[error("no samples to re-encode")]
    EmptySamples,

    // clustering and metrics
    #[error("k = {k} exceeds number of points {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid k: {0}")]
    InvalidK(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("empty list")]
    EmptyList,
    #[error("query {0} has no relevant candidate")]
    NoRelevant(usize),
    #[error("no queries")]
    EmptyQueries,
    #[error("empty cluster {0}")]
    EmptyCluster(usize),

    // benchmarks and data
    #[error("missing criterion: {0}")]
    MissingCriterion(String),
    #[error("duplicate utterance: {0:?}")]
    DuplicateUtterance(String),
    #[error("{path}:{line}: {message}")]
    Dataset {
        path: String,
        line: usize,
        message: String,
    },
    #[error("chat service error: {0}")]
    Service(String),
    #[error("unparseable response after {attempts} attempts: {last}")]
    UnparseableResponse { attempts: usize, last: String },
    #[error("empty answer")]
    EmptyAnswer,

    // service
    #[error("unknown corpus {0}")]
    UnknownCorpus(String),

    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus has {0} sentences, at least 4 are needed to form every split")]
    TooSmall(usize),
    #[error("split fractions must lie in [0,1] and sum to 1 (got sum {0})")]
    BadFractions(f64),
    #[error("topic vocabularies overlap on {0:?}")]
    TopicOverlap(String),
    #[error("invalid generator config: {0}")]
    BadGenerator(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("every position of the batch is masked")]
    EmptyBatch,
    #[error("backward called without a recorded forward graph")]
    NoForward,
    #[error("parameter {0:?} has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("bad parameter file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MessageError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("stream truncated at byte {0}")]
    Truncated(usize),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("invalid field: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sentence of {len} tokens does not fit max length {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {0} outside vocabulary")]
    BadToken(usize),
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("empty data set")]
    NoData,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error)]
pub enum CoopError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("parameter sets differ at tensor {index} ({name:?}): {detail}")]
    Mismatch { index: usize, name: String, detail: String },
    #[error("aggregation weight {0} outside [0,1]")]
    BadWeight(f64),
    #[error("party {party} diverged at epoch {epoch}")]
    Diverged { party: char, epoch: usize },
    #[error("peer hung up during exchange")]
    PeerGone,
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassicError {
    #[error("huffman code needs at least two symbols")]
    TooFewSymbols,
    #[error("invalid reed-solomon parameters n={n} k={k}")]
    BadRsParams { n: usize, k: usize },
    #[error("token {0} has no codeword")]
    NoCodeword(usize),
    #[error("block has {got} bytes, expected {expected}")]
    BlockSize { got: usize, expected: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty corpus")]
    Empty,
    #[error("{candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("bleu order must be 1 or 2, got {0}")]
    BadOrder(usize),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Coop(#[from] CoopError),
    #[error(transparent)]
    Classic(#[from] ClassicError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("categorical encoding failed: {0}")]
    Encode(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("cannot split {d} features across {q} parties")]
    InvalidSplit { d: usize, q: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {0} is not in {{-1, +1}}")]
    InvalidLabel(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sample index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("step vector is zero")]
    DegenerateStep,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("explicit Hessian limited to dimension {max}, got {got}")]
    OracleTooLarge { max: usize, got: usize },
    #[error("party count must be at least 1")]
    NoParties,
    #[error("trees disagree on party count ({0} vs {1})")]
    TopologyMismatch(usize, usize),
    #[error("transcript incomplete: {0}")]
    IncompleteTranscript(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reference solve stopped after {iterations} iterations with gradient norm {grad_norm:e}")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        objective: f64,
    },
    #[error("missing optimal value for sub-optimality")]
    MissingOptimum,
    #[error("runs are not comparable: {0}")]
    Mismatch(String),
    #[error("runs never reached the target: {0:?}")]
    TargetNotReached(alloc::vec::Vec<usize>),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("run diverged at global iteration {}", .0.t)]
    Diverged(alloc::boxed::Box<DivergedRun>),
}

/// Partial run left behind when the objective or an iterate stopped being
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergedRun {
    /// Global iteration at which divergence was detected.
    pub t: usize,
    pub records: alloc::vec::Vec<crate::runtime::RunRecord>,
}

impl DivergedRun {
    pub fn last_finite(&self) -> Option<&crate::runtime::RunRecord> {
        self.records.iter().rev().find(|r| r.objective.is_finite())
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input of length {len} exceeds the position table ({max})")]
    Length { len: usize, max: usize },
    #[error("every edit operation is masked")]
    AllMasked,
    #[error("operation {op} is masked or out of range")]
    MaskedOp { op: usize },
    #[error("row {row} is not an available insertion point")]
    MaskedPosition { row: usize },
    #[error("gold action `{action}` is not available in this state")]
    MaskedAction { action: String },
    #[error("non-finite loss at step {step} (sample `{id}`)")]
    NonFinite { step: usize, id: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace of sample `{id}` is invalid: {message}")]
    Trace { id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

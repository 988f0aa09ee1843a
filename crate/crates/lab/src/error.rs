use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Core(#[from] smallball_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn config_err<T>(field: &str, message: impl Into<String>) -> Result<T, LabError> {
    Err(LabError::Config {
        field: field.into(),
        message: message.into(),
    })
}

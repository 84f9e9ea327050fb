use mvf_core::FusorError;
use mvf_pipeline::PipelineError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Errors that select a specific exit code. Anything else exits with 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Config(_) => EXIT_CONFIG,
                CliError::Failed(_) => EXIT_FAILURE,
            };
        }
        if let Some(FusorError::Config(_) | FusorError::UnknownMode(_) | FusorError::UnknownEncoder(_)) =
            cause.downcast_ref::<FusorError>()
        {
            return EXIT_CONFIG;
        }
        if let Some(PipelineError::Config(_)) = cause.downcast_ref::<PipelineError>() {
            return EXIT_CONFIG;
        }
    }
    EXIT_FAILURE
}

/// The single-line JSON diagnostic printed on stderr for a failed run.
pub fn diagnostic(err: &anyhow::Error, code: i32) -> String {
    let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
    serde_json::json!({
        "level": "ERROR",
        "exit_code": code,
        "error": err.to_string(),
        "causes": causes,
    })
    .to_string()
}

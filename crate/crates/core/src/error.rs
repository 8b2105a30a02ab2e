use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid growth model: {0}")]
    InvalidModel(String),

    #[error("inadmissible initial data: {0}")]
    InadmissibleInitialData(String),

    #[error("linear solver did not converge: {iterations} iterations, relative residual {residual:e}")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("picard iteration did not converge after {iterations} sweeps (last change {last:e})")]
    PicardDiverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("step failed at t = {t}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("persistent negativity: species clipped in {steps} consecutive steps (t = {t})")]
    PersistentNegativity { steps: usize, t: f64 },

    #[error("config error{}", .0.iter().map(|e| format!("\n  {e}")).collect::<String>())]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

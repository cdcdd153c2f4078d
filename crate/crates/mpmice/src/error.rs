use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration error at line {line}: {msg}")]
    ConfigAt { line: usize, msg: String },

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("particle {id} left the grid")]
    ParticleEscape { id: usize },

    #[error("particle {id} inverted: det(F) = {det}")]
    InvertedParticle { id: usize, det: f64 },

    #[error("pressure equilibration failed in cell ({i},{j}): residual {residual}")]
    Equilibration { i: usize, j: usize, residual: f64 },

    #[error("{solver} did not converge: residual {residual} after {iters} iterations")]
    SolverDiverged {
        solver: &'static str,
        residual: f64,
        iters: usize,
    },

    #[error("advection Courant number {courant} exceeds 1")]
    CourantViolation { courant: f64 },

    #[error("negative or lost mass in {context}")]
    NegativeMass { context: String },

    #[error("step failed after {retries} retries: {source}")]
    StepFailed {
        retries: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("time step {dt} fell below the configured minimum {dt_min}")]
    TimeStepUnderflow { dt: f64, dt_min: f64 },

    #[error("unknown scenario '{0}'; available: {1}")]
    UnknownScenario(String, String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SimError>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("{what} did not converge after {iterations} iterations")]
    ConvergenceFailure {
        what: &'static str,
        iterations: usize,
    },

    #[error("{what} exceeded {iterations} iterations (last change {last_change:e})")]
    MaxIterationsExceeded {
        what: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("the pair (A, C) is not observable")]
    NotObservable,

    #[error("the pair (S, B) is not controllable")]
    NotControllable,

    #[error("innovation covariance C P C' + R is singular")]
    SingularInnovation,

    #[error("zeta = {zeta} infeasible: need Mahler(S) = {mahler} < 1/zeta")]
    InfeasibleZeta { zeta: f64, mahler: f64 },

    #[error("Sylvester operands share the eigenvalue {0}")]
    CommonEigenvalue(String),

    #[error("singular linear system in {0}")]
    SingularSolve(&'static str),

    #[error("closed-loop matrix A - KCA is not Schur stable (spectral radius {0})")]
    UnstableClosedLoop(f64),

    #[error("communication graph is disconnected (mu_2 = {mu2:e})")]
    Disconnected { mu2: f64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error(
        "synchronization infeasible: Mahler(S) = {mahler} is not below the Laplacian threshold \
         (1 + mu2/mu_m)/(1 - mu2/mu_m) = {threshold}"
    )]
    Infeasible { mahler: f64, threshold: f64 },

    #[error("zeta = {zeta} out of range: need {mahler} < 1/zeta <= {threshold}")]
    ZetaOutOfRange {
        zeta: f64,
        mahler: f64,
        threshold: f64,
    },

    #[error("held state requested at k = {requested} before last broadcast at k = {broadcast}")]
    ClockSkew { requested: usize, broadcast: usize },

    #[error("invalid noise spec: {0}")]
    InvalidSpec(String),

    #[error("invalid trigger parameters: {0}")]
    InvalidTrigger(String),

    #[error(
        "K perturbation exhausted after {0} retries without meeting the eigenvalue assumptions"
    )]
    PerturbationExhausted(usize),

    #[error("beta system inconsistent (residual {0:e})")]
    InconsistentBetaSystem(f64),

    #[error("realified decomposition keeps an imaginary residue of {0:e}")]
    ImaginaryResidue(f64),

    #[error("A - KCA has complex eigenvalues; enable allow_complex to proceed")]
    ComplexSpectrumDisallowed,

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid functions live on different lattices")]
    LatticeMismatch,

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid stencil: {0}")]
    InvalidStencil(String),

    #[error("non-finite coefficient value in {field} at t = {t}")]
    NonFiniteCoefficient { field: String, t: f64 },

    #[error("upwind weight theta[{gamma}] = {theta} is inadmissible: need |a^(0,{axis})| <= theta and |a^({axis},0)| <= theta, found {found}")]
    InadmissibleTheta {
        gamma: usize,
        axis: usize,
        theta: f64,
        found: f64,
    },

    #[error("coefficient `{0}` is not constant; the Fourier integrator requires constant coefficients")]
    NonConstantCoefficient(String),

    #[error("the Fourier integrator supports one-dimensional schemes only (got d = {0})")]
    NotOneDimensional(usize),

    #[error("time {0} is not a node of the path grid")]
    OffGrid(f64),

    #[error("driver index {index} out of range (path has {count} drivers)")]
    DriverOutOfRange { index: usize, count: usize },

    #[error("solver produced a non-finite value at step {step} (t = {t})")]
    SolverAbort { step: usize, t: f64 },

    #[error("solutions are driven by different realizations (seeds {0} and {1})")]
    SeedMismatch(u64, u64),

    #[error("grids are not dyadically nested: {0}")]
    NonNested(String),

    #[error("record times differ between the combined solutions")]
    RecordTimeMismatch,

    #[error("weights count {weights} does not match solution count {solutions}")]
    WeightCount { weights: usize, solutions: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("symmetric eigensolve failed: {0}")]
    Eigen(String),

    #[error("field expression `{expr}`: {msg}")]
    Expression { expr: String, msg: String },

    #[error("{0}")]
    Config(String),

    #[error("no reference solution available: {0}")]
    MissingReference(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("run at h = {h}, seed = {seed} failed: {source}")]
    Run {
        h: f64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when a solver produced non-finite values, possibly inside a
    /// run context.
    pub fn is_solver_abort(&self) -> bool {
        match self {
            Error::SolverAbort { .. } => true,
            Error::Run { source, .. } => source.is_solver_abort(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

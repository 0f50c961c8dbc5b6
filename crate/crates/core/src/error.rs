use thiserror::Error;

/// Errors produced anywhere in the parameterization stack.
#[derive(Debug, Error)]
pub enum CapError {
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("degenerate geometry at face {face}: {message}")]
    DegenerateGeometry { face: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("point at the projection pole cannot be projected")]
    Pole,

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("singular affine map on face {face}")]
    SingularMap { face: usize },

    #[error("Beltrami coefficient on face {face} has modulus {modulus} >= 1")]
    InvalidCoefficient { face: usize, modulus: f64 },

    #[error("constraint error: {0}")]
    Constraint(String),

    #[error("power cell of site {site} stayed empty: {message}")]
    EmptyCell { site: usize, message: String },

    #[error("{count} flipped faces (first: {first})")]
    Flip { count: usize, first: usize },

    #[error("ill-posed least-squares fit (condition number {condition:.3e}); try a lower order")]
    IllPosed { condition: f64 },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CapError>,
    },

    #[error("radius search failed at every evaluated radius: {0}")]
    Pipeline(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CapError {
    /// Wraps the error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        CapError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage tags stripped.
    pub fn root(&self) -> &CapError {
        match self {
            CapError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CapError>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}

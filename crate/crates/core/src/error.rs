use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("unknown lattice model `{0}` (expected D1Q3 or D2Q9)")]
    UnknownModel(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LbmError {
    #[error("non-positive density {rho} at node {node}")]
    DegenerateDensity { node: usize, rho: f64 },
    #[error("equilibrium population {index} is negative ({value}) for u = {u:?}; Mach number too high")]
    MachTooHigh { index: usize, value: f64, u: Vec<f64> },
    #[error("relaxation time {tau} < 0.5 is unstable")]
    UnstableRelaxation { tau: f64 },
    #[error("negative population {value} at node {node}, direction {index}")]
    NegativePopulation { node: usize, index: usize, value: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid solid mask: {0}")]
    InvalidMask(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiseError {
    #[error("reference Jacobian is rank deficient (smallest R diagonal {min_diag:e})")]
    SingularJacobian { min_diag: f64 },
    #[error("manifold distance optimizer did not converge (best grid distance {best_distance:e})")]
    OptimizerFailed { best_distance: f64 },
    #[error("input amplitude vector is zero")]
    ZeroInput,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QlbmError {
    #[error("projection annihilated node {node} (|Dg| = {projected:e}, sqrt(rho) = {sqrt_rho:e})")]
    ProjectionAnnihilated {
        node: usize,
        projected: f64,
        sqrt_rho: f64,
    },
    #[error("field mismatch: {0}")]
    FieldMismatch(String),
    #[error(transparent)]
    Lbm(#[from] LbmError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("matrix norm {norm} exceeds block-encoding normalization {alpha}")]
    Normalization { norm: f64, alpha: f64 },
    #[error("input is not orthogonal (residual {residual:e})")]
    NonOrthogonal { residual: f64 },
    #[error("orthogonal matrix has determinant -1; a product of Givens rotations cannot represent it")]
    Improper,
    #[error("{needed} qubits exceed the dense-simulation cap of {cap}")]
    QubitCap { needed: usize, cap: usize },
    #[error("grid extent {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("degenerate projection: <psi|D|psi> = {p}")]
    Degenerate { p: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Lbm(#[from] LbmError),
    #[error(transparent)]
    Qlbm(#[from] QlbmError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
}

impl BenchError {
    /// Process exit code for the CLI: 2 for validation problems, 3 for
    /// numerical divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_)
            | BenchError::Lbm(LbmError::MachTooHigh { .. })
            | BenchError::Lbm(LbmError::UnstableRelaxation { .. })
            | BenchError::Lbm(LbmError::InvalidMask(_)) => 2,
            BenchError::Diverged { .. }
            | BenchError::Qlbm(QlbmError::ProjectionAnnihilated { .. })
            | BenchError::Lbm(LbmError::DegenerateDensity { .. }) => 3,
            _ => 1,
        }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GlueError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlueError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("shape does not fit inside the lattice with a 2h margin")]
    ShapeOutsideLattice,
    #[error("domain mask is empty")]
    EmptyMask,
    #[error("domain mask is not 4-connected ({components} components)")]
    Disconnected { components: usize },
    #[error("domains live on different lattices")]
    LatticeMismatch,
    #[error("field domain or component count does not match: {0}")]
    FieldMismatch(String),
    #[error("pair is not a good pair: {0:?}")]
    NotGoodPair(crate::grid::RejectReason),
    #[error("overlap too thin: transition band is {cells:.2} cells wide (need 8)")]
    OverlapTooThin { cells: f64 },
    #[error("invalid norm exponent p = {0} (need p > 2)")]
    InvalidExponent(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("structure check failed at sample {point:?}: {what}")]
    StructureInvalid { point: Vec<f64>, what: String },
    #[error("singular matrix J + J_st (|det| = {det:.3e})")]
    SingularMatrix { det: f64 },
    #[error("point left the validity box at node {node}{}", iterate.map(|k| format!(" (iterate {k})")).unwrap_or_default())]
    PointOutsideValidityBox { node: usize, iterate: Option<usize> },
    #[error("right inverse construction failed: neumann probe {neumann_probe:.3e}, least-squares probe {lsq_probe:.3e}")]
    InverseConstructionFailed { neumann_probe: f64, lsq_probe: f64 },
    #[error("neumann precondition failed: probe {probe:.4} >= 1/2{}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    NeumannPreconditionFailed { probe: f64, context: Option<String> },
    #[error("corrected norm {corrected:.4e} exceeds twice the base norm {base:.4e}")]
    NeumannBoundViolated { corrected: f64, base: f64 },
    #[error("runge fit exhausted degree {max_degree}: sup on K1 {sup_k1:.3e}, sup on K2 {sup_k2:.3e}, gamma {gamma}")]
    DegreeExhausted { max_degree: usize, sup_k1: f64, sup_k2: f64, gamma: f64 },
    #[error("chart check failed: {0}")]
    ChartInvalid(String),
    #[error("pregluing left the chart at node {node}")]
    ChartExit { node: usize },
    #[error("jacobian of the transition map is singular at node {node} (|det| = {det:.3e})")]
    JacobianSingular { node: usize, det: f64 },
    #[error("contraction gate failed: {value:.4} >= 0.9")]
    ContractionGateFailed { value: f64 },
    #[error("input map is not holomorphic to the floor: residual {residual:.3e} > {floor:.3e}")]
    InputNotHolomorphic { residual: f64, floor: f64 },
    #[error("compatibility defect {defect:.3e} exceeds {bound:.3e} at iterate {iterate}")]
    CompatibilityLost { defect: f64, bound: f64, iterate: usize },
    #[error("config invalid at `{key}`: {message}")]
    ConfigInvalid { key: String, message: String },
    #[error("incompatible lattices: {0}")]
    IncompatibleLattices(String),
    #[error("{context}: {inner}")]
    InScenario { context: String, inner: Box<GlueError> },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GlueError {
    fn from(e: std::io::Error) -> Self {
        GlueError::Io(e.to_string())
    }
}

impl From<csv::Error> for GlueError {
    fn from(e: csv::Error) -> Self {
        GlueError::Io(e.to_string())
    }
}

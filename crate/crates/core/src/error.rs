use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("acceptance probability p[{i}][{j}] = {value} is outside (0, 1]")]
    InvalidProbability { i: usize, j: usize, value: f64 },
    #[error("alpha[{i}] + beta[{j}] = 0: pair type ({i}, {j}) can never form")]
    DegenerateRate { i: usize, j: usize },
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("symmetry violation: {0}")]
    SymmetryViolation(String),
    #[error("operation requires k = 2, got k = {0}")]
    NotTwoByTwo(usize),
    #[error("invalid pair-matrix state: {0}")]
    InvalidState(String),
    #[error("cannot round population to totals: {0}")]
    RoundingInfeasible(String),
    #[error("state space has more than {limit} states")]
    StateSpaceTooLarge { limit: usize },
    #[error("jacobian undefined: the state is absorbed (M_tot = 1)")]
    SingularState,
    #[error("integrator could not meet tolerance: {0}")]
    ToleranceNotMet(String),
    #[error("total-mass bound violated at t = {t}: Q_tot = {q_tot}, allowed [{lower}, {upper}]")]
    BoundViolation { t: f64, q_tot: f64, lower: f64, upper: f64 },
    #[error("state is absorbed: no singles left")]
    Absorbed,
    #[error("singles mass Z must be positive, got {0}")]
    SingularZ(f64),
    #[error("not a point of the simplex: {0}")]
    InvalidSimplexPoint(String),
    #[error("parameters do not satisfy fine balance")]
    NotFineBalance,
    #[error("bisection bracket failure: {0}")]
    BracketFailure(String),
    #[error("argument outside the formula's domain: {0}")]
    DomainError(String),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("fine-balance parameters are handled by the fine-balance solution")]
    FineBalanceExcluded,
    #[error("fluid solution does not cover [0, {0}]")]
    MissingFluidSolution(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Validation errors are caused by bad inputs; everything else is a
    /// numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::InvalidProbability { .. }
                | Error::DegenerateRate { .. }
                | Error::InvalidPopulation(_)
                | Error::SymmetryViolation(_)
                | Error::NotTwoByTwo(_)
                | Error::InvalidState(_)
                | Error::RoundingInfeasible(_)
                | Error::NotFineBalance
                | Error::FineBalanceExcluded
                | Error::DomainError(_)
                | Error::InvalidArgument(_)
                | Error::InvalidSimplexPoint(_)
        )
    }
}

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid data plan: {0}")]
    InvalidPlan(String),
    #[error("invalid user state: {0}")]
    InvalidState(String),
    #[error("invalid price quote: sell {sell} buy {buy} (need 0 <= sell <= buy)")]
    InvalidQuote { sell: f64, buy: f64 },
    #[error("slot (m={month}, k={slot}) is outside the contract")]
    SlotOutOfRange { month: u32, slot: u32 },
    #[error("flat slot index {0} is outside the contract")]
    FlatSlotOutOfRange(u32),
    #[error("infeasible trade: sells {shortfall} MB more than the user holds")]
    InfeasibleTrade { shortfall: f64 },
    #[error("negative demand {0}")]
    NegativeDemand(f64),
    #[error("cannot advance past the end of the contract")]
    ContractEnded,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("volume {volume} MB is not a multiple of the {step} MB grid step")]
    OffGrid { volume: f64, step: f64 },
}

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("invalid demand model: {0}")]
    InvalidModel(String),
    #[error("trace has {got} observations, need at least {need}")]
    TooFewObservations { got: usize, need: usize },
    #[error("degenerate trace: all observations equal {0}")]
    DegenerateTrace(f64),
    #[error("empty trace")]
    EmptyTrace,
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("fit did not converge: {0}")]
    FitFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error("objective is not concave at slot t={slot}, q index {q}, price index {price}: {local_maxima} local maxima")]
    NonConcave { slot: u32, q: usize, price: usize, local_maxima: usize },
    #[error("policy table does not cover slot t={0}")]
    SlotNotSolved(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("empty market curves")]
    EmptyCurves,
    #[error("{curve} curve is not monotone at price index {index} (by {by})")]
    NonMonotone { curve: &'static str, index: usize, by: f64 },
    #[error("price grid mismatch: {0}")]
    GridMismatch(String),
    #[error("snapshot users are at different slots")]
    MixedSlots,
    #[error("allocation infeasible for user {user}: {reason}")]
    InfeasibleAllocation { user: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("accounting invariant violated at slot t={slot}: {what}")]
    Invariant { slot: u32, what: String },
    #[error("metrics shapes differ: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

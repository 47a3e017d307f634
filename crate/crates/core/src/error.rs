use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("only two-ion chains are supported (got {0})")]
    UnsupportedIonCount(usize),
    #[error("resonant denominator for mode {mode}: |2nu^2 - Omega^2| below guard")]
    ResonantDenominator { mode: usize },
    #[error("drive {omega} rad/s is at or above the sideband pole {pole} rad/s")]
    AbovePole { omega: f64, pole: f64 },
    #[error("no interior minimum in ({lo}, {hi})")]
    NoInteriorMinimum { lo: f64, hi: f64 },
    #[error("unknown operator kind `{0}`")]
    UnknownOperator(String),
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("step size underflow at t = {t:e} s")]
    StepUnderflow { t: f64 },
    #[error("norm drift {drift:e} exceeds tolerance {tol:e}")]
    NormDrift { drift: f64, tol: f64 },
    #[error("truncation guard: population {population:e} in top Fock level of mode {mode}")]
    Truncation { mode: usize, population: f64 },
    #[error("noise trace covers [{start:e}, {end:e}] s but the run needs t = {needed:e} s")]
    TraceUnderrun { start: f64, end: f64, needed: f64 },
    #[error("pulse schedule does not fit in the gate window")]
    ScheduleOverflow,
    #[error("model has no drive-tagged terms to flip")]
    UntaggedDrive,
    #[error("phase-flip schedule already applied")]
    FlipAlreadyApplied,
    #[error("jump probability per step stays above limit at t = {t:e} s")]
    JumpStepTooLarge { t: f64 },
    #[error("malformed state dump: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than from the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepUnderflow { .. }
                | Error::NormDrift { .. }
                | Error::Truncation { .. }
                | Error::NoInteriorMinimum { .. }
                | Error::JumpStepTooLarge { .. }
        )
    }
}

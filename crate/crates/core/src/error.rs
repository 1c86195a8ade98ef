//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A CAN identifier outside the 11-bit range, or a malformed frame.
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    /// Matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The unswitched closed loop already violates the requested decay rate.
    #[error("closed loop is not stable at decay rate {gamma}")]
    UnstableBaseline { gamma: f64 },

    /// lcm of task periods does not fit the time representation.
    #[error("hyperperiod overflows the time representation")]
    HyperperiodOverflow,

    /// The task set cannot be scheduled; first missed deadline attached.
    #[error("task set infeasible: task `{task}` misses its deadline at {missed_at} us")]
    Infeasible { task: String, missed_at: u64 },

    /// Slot lookup outside the mapping tables.
    #[error("unknown slot index {0}")]
    UnknownSlot(usize),

    /// Task name not present in the task set.
    #[error("unknown task `{0}`")]
    UnknownTask(String),

    /// The analyzed trace carries no transmission with the victim id.
    #[error("victim id {0:#x} absent from trace")]
    NoVictim(u16),

    /// An obfuscation plan does not cover every victim slot.
    #[error("plan does not cover victim instance {instance} of id {id:#x}")]
    NonExhaustivePlan { id: u16, instance: usize },

    /// An obfuscation plan would make a task miss its deadline.
    #[error("plan rejected: task `{task}` instance {instance} would miss its deadline")]
    PlanDeadlineMiss { task: String, instance: usize },

    /// Trace and plan cover different reconnaissance periods.
    #[error("trace/plan period mismatch: {0}")]
    PeriodMismatch(String),

    /// Scenario file violates the schema.
    #[error("scenario error ({field}): {msg}")]
    Scenario { field: String, msg: String },

    /// Periodic load alone already exceeds the busload target.
    #[error("infeasible busload: periodic load {periodic:.3} exceeds target {target:.3}")]
    InfeasibleBusload { periodic: f64, target: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("scenario parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn scenario(field: &str, msg: impl Into<String>) -> Self {
        Error::Scenario {
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

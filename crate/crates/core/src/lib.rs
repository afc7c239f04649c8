//! Fixed-confidence best-arm identification for hybrid generalized linear
//! bandits, where each query is either an absolute reward on one arm or a
//! duel between two arms.

// Guards like `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod design;
pub mod error;
pub mod explore;
pub mod estimation;
pub mod glm;
pub mod harness;
pub mod linalg;
pub mod problem;

pub use error::{Error, Result};
pub use estimation::{ActionStats, MleConfig, ObservationLog};
pub use glm::{FamilyKind, GlmFamily};
pub use problem::{Action, CostModel, GeneratorSpec, HybridInstance, InstanceView, Modality};
pub use confidence::{beta_radius, ConfidenceState};
pub use design::{
    characteristic_time, cost_characteristic_time, CharacteristicTime, DesignProblem, DesignSolution, DesignWeights,
    FwConfig,
};
pub use explore::{run, AlgoConfig, Mode, Observe, RunResult};
pub use harness::{aggregate, execute_sweep, Environment, ResultRow, SummaryRow, SweepOptions, SweepSpec};

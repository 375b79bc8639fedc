//! Stealthy false-data-injection attacks on a first-order battery model.
//!
//! The crate synthesizes an optimal-control input-current attack that
//! drives a cell toward an over-charged or over-discharged state of charge,
//! and an output-voltage attack that hides it from the battery management
//! system. The adversary's model and the plant can differ, which is how the
//! feedback-corrected masking is exercised.
//!
//! Modules, bottom up:
//!
//! - [`profiles`]: uniformly sampled signals, CSV ingestion, synthetic drive cycles
//! - [`ecm`]: the equivalent-circuit model and its exact discretization
//! - [`attack`]: the Riccati sweep and the closed-loop input attack
//! - [`stealth`]: open-loop and feedback output attacks against a plant
//! - [`metrics`]: residual metrics and the `k_a` gain sweep
//! - [`sysid`]: OCV extraction and RC parameter fitting
//! - [`scenario`]: JSON scenario files and the end-to-end pipeline
//!
//! Sign convention throughout: positive current discharges the cell.

pub mod attack;
pub mod ecm;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod profiles;
pub mod scenario;
pub mod stealth;
pub mod sysid;

pub use attack::{
    attack_current, build_reference, solve_riccati, synthesize_input_attack, AttackWeights, InputAttack,
    ReferenceShape, ReferenceTrajectory, RiccatiSolution,
};
pub use ecm::{
    ocv, simulate, state_matrices, step, terminal_voltage, BatteryState, EcmParams, OcvCurve, Simulation,
    StateMatrices,
};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{rms, sweep_ka, KaSweep, ScenarioSummary, SweepScenario};
pub use profiles::{load_csv, synthetic_profile, Grid, ProfileKind, TimeSeries};
pub use stealth::{
    feedback_output_attack, nominal_model_output, open_loop_output_attack, PlantConfig, StealthResult,
};
pub use sysid::{extract_ocv, fit_rc, FitParam, FitReport, OcvExtraction, Record};

//! Simulation and verification toolkit for the genealogy of continuous-state
//! branching (CB) processes.
//!
//! The crate covers the full chain from a branching mechanism to statistical
//! checks of the Ray–Knight picture:
//!
//! * [`mechanism`]: the branching mechanism `ψ`, the backward ODE for `v_t(λ)`,
//!   Grey's condition and exact CB-process laws.
//! * [`levy_path`]: grid simulation of the spectrally positive Lévy process `ξ`
//!   with explicit jump records, plus path functionals.
//! * [`exploration`]: the exploration process as a stack of continuous segments
//!   and jump atoms, producing the height process.
//! * [`local_time`]: occupation-density and Tanaka estimators for the local
//!   times of the height process.
//! * [`cb_flow`]: Euler simulation of CB-processes and of coupled flows driven
//!   by a common time-space noise.
//! * [`verify`]: Monte Carlo harness producing [`verify::MonteCarloReport`]s.

pub mod cb_flow;
pub mod exploration;
pub mod levy_path;
pub mod local_time;
pub mod mechanism;
mod ode;
mod quad;
pub mod rng;
pub mod stats;
pub mod verify;

pub use cb_flow::{simulate_cb, simulate_flow, CbTrajectory, FlowEnsemble};
pub use exploration::{height_trajectory, ExplorationStack, HeightTrajectory, StackRecord};
pub use levy_path::{sample_path, LevyPath, SimConfig, SmallJumpMode};
pub use local_time::{LevelGrid, LevelKernel, LocalTimeField, TanakaVariant};
pub use mechanism::{BranchingMechanism, JumpMeasureSpec, PowerLaw};
pub use verify::{MonteCarloReport, ReportCell};

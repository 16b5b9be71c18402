//! Adaptive fuzzy dynamic surface control of strict-feedback systems under a
//! prescribed-time performance funnel.
//!
//! * [`perf`]: performance envelope and error transformation
//! * [`fuzzy`]: Gaussian fuzzy basis and adaptive weights
//! * [`plant`]: strict-feedback plants and reference signals
//! * [`controller`]: the filtered backstepping chain
//! * [`sim`]: closed-loop integration and verification
//! * [`experiment`]: configuration presets and artifact export

pub mod controller;
pub mod experiment;
pub mod fuzzy;
pub mod perf;
pub mod plant;
pub mod sim;

pub use controller::{
    ControlMode, Controller, ControllerOptions, StageGains, StageSignals, XiGuard,
};
pub use fuzzy::{AdaptiveWeights, GaussianGrid};
pub use perf::{ErrorTransform, FunnelBreach, PerfFunction, TransformKind};
pub use plant::{ReferenceSignal, StageBounds, StrictFeedbackPlant};
pub use sim::{FilterUpdate, SimConfig, Simulation, Trajectory, VerificationReport};

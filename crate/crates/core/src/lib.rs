//! Slotted-time simulation of deadline-constrained packet transmission over
//! two-state (Bad/Good) fading channels.
//!
//! - [`model`]: channel states, power feasibility, packet queues and the
//!   per-slot dynamics.
//! - [`policy`]: the drift-plus-penalty power allocator (DPA), EDF and
//!   fixed-trace replay.
//! - [`sim`]: the seeded slot loop and running metrics.
//! - [`oracle`]: brute-force per-slot and offline references.
//! - [`config_file`], [`experiment`], [`verify`]: experiment configuration,
//!   sweeps with CSV output, and on-demand self-checks.

pub mod config_file;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod sim;
pub mod verify;

pub use config_file::{parse_spec, ExperimentSpec, PolicyKind, SpecError};
pub use model::{ChannelState, PowerAllocation, SystemConfig, UserParams, UserQueue};
pub use policy::{Dpa, Edf, FixedTrace, Policy, PolicyDecision, SlotView, VirtualQueues};
pub use sim::{run, ForcedTraces, LogStride, RunResult, SimError, Simulator};

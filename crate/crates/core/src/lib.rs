//! Queueing-network model of cache eviction policies.
//!
//! - [`qnet`]: closed networks, device demands and the asymptotic throughput bound.
//! - [`policy`]: per-policy networks, closed forms, knees and classification.
//! - [`sim`]: discrete-event simulation of the same networks.
//! - [`trace`]: eviction-policy simulators on key traces and fraction estimators.
//! - [`harness`]: a multi-threaded in-memory cache for measuring real throughput.

pub mod error;
pub mod harness;
pub mod policy;
pub mod qnet;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
pub use harness::{
    calibrate, run_bench, BenchConfig, BenchMode, BenchPolicy, BenchResult, CalibratedProfile,
};
pub use policy::{
    bound_curve, build_network, classify, closed_form_bound, default_grid, hit_ratio_knee,
    ClassLabel, Classification, FractionCurve, Knee, Policy, S3Fractions, ServiceParams,
};
pub use qnet::{
    device_demands, mean_think_time, throughput_upper_bound, BindingTerm, BoundResult,
    ClosedNetwork, DemandProfile, DistKind, ServiceDist, StationId,
};
pub use sim::{replicate, simulate, verify_response_time_law, SimConfig, SimResult, SimSummary};

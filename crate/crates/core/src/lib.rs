//! Tail and dependence-control experiments for wireless channel capacity
//! and multivariate parameter processes.

pub mod channel;
pub mod dependence;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod orders;
pub mod queueing;
pub mod rng;
pub mod stats;
pub mod tail_lab;

pub use channel::{CapacityParams, CapacitySample, ChannelModel, Csit};
pub use dependence::{CopulaSpec, PathMatrix, ProcessSpec};
pub use distributions::{DistributionSpec, TailClassLabel};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, Kind, RunManifest, Verdict};
pub use linalg::{ComplexMatrix, HermitianEigenResult};
pub use queueing::{BacklogStats, PowerTradeReport, QueueConfig};
pub use rng::RandomStream;

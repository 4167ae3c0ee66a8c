//! Simulator and analysis toolkit for Push-Sum based decentralized optimization
//! over directed graphs.
//!
//! * [`topology`]: catalog of directed communication graphs.
//! * [`mixing`]: column-stochastic mixing matrices and their spectra.
//! * [`objectives`]: losses, gradients and smoothness constants.
//! * [`engine`]: stochastic gradient push and a D-SGD baseline.
//! * [`stability`]: coupled runs on neighboring datasets.
//! * [`bounds`]: closed-form stability, optimization and excess-risk bounds.
//! * [`data_io`]: LIBSVM ingestion, synthetic data and sharding.

pub mod bounds;
pub mod data_io;
pub mod engine;
pub mod mixing;
pub mod numeric;
pub mod objectives;
pub mod schedule;
pub mod stability;
pub mod topology;

pub use engine::{Algorithm, Init, SamplingMode, TrainConfig};
pub use mixing::{MixingMatrix, SpectralProfile};
pub use objectives::{LossModel, Sample, SparseVector};
pub use schedule::StepSchedule;
pub use topology::{DirectedGraph, TopologyKind};

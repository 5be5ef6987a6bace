//! Training-dynamics instrumentation for small neural networks.
//!
//! The crate trains MLPs, LeNet-style CNNs, and linear models with
//! deterministic minibatch SGD while measuring how the tangent kernel of the
//! network — the Gram matrix of per-sample readout gradients over a fixed
//! probe set — evolves along the trajectory. On top of the raw kernels it
//! provides the scale-invariant kernel distance, kernel velocity,
//! phase-transition detection, plateau statistics, a planar embedding of the
//! kernel path, exact first-order (lazy) training via Taylor linearization,
//! and the standard-then-linearized switching experiment.
//!
//! Everything is `f64` and bitwise deterministic: per-sample work may run on
//! rayon workers (the default `parallel` feature), but reductions use fixed
//! chunking, so results do not depend on thread count or on the feature.
//!
//! ```
//! use entk::{
//!     analysis, data, nn::{self, Activation, ArchSpec, ReadoutRule}, ntk, train,
//! };
//!
//! # fn main() -> entk::Result<()> {
//! let dataset = data::synth_blobs(7, 50, 8, 3, 0.4)?;
//! let probe = data::probe_sample(&dataset, 12, 1, true)?;
//! let model = nn::init_model(&ArchSpec::mlp(8, vec![32, 3], Activation::Relu), 0)?;
//!
//! let cfg = train::TrainConfig {
//!     total_iters: 200,
//!     batch_size: 30,
//!     schedule: train::CheckpointSchedule::Every(20),
//!     ..train::TrainConfig::default()
//! };
//! let traj = train::train(&model, &dataset, &cfg, |_, m| {
//!     ntk::entk_gram(m, &probe, ReadoutRule::TrueClass, 8).map(Some)
//! })?;
//!
//! let report = analysis::cone_report(&traj, &[100, 200], &[20], 0.2, 3)?;
//! assert_eq!(report.velocity_dt, 20);
//! # Ok(())
//! # }
//! ```

pub mod analysis;
pub mod data;
mod error;
pub mod lintrain;
mod math;
pub mod nn;
pub mod ntk;
mod parallel;
pub mod train;

pub use error::{Error, Result};

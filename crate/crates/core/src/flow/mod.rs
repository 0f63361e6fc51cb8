//! Flow-matching velocity models: timestep sampling, training and Euler
//! integration in any coordinate space.

mod model;
mod path;
mod sample;
mod timestep;
mod train;

pub use model::{FlowConfig, FlowModel};
pub use path::{interpolate, interpolate_batch, velocity_target, velocity_target_batch};
pub use sample::{euler_integrate, euler_sample, EulerConfig, VelocityField};
pub use timestep::{
    shift_factor, shift_factor_with, shift_timestep, sigmoid, toy_shift, unshift_timestep, TimestepSampler,
    BASE_CHANNELS, BASE_PATCH,
};
pub(crate) use train::TraceRecorder;
pub use train::{train_flow, DataSource, GlyphSource, LossPoint, LossTrace, PointSet, TrainConfig};

//! Dense kernels with hand-chained reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv1d, Gru, Linear, ShapeError};
pub use params::{ParamId, ParamSpec, ParamStore};

pub mod amplitude;
pub mod analysis;
pub mod bayesopt;
pub mod datagen;
pub mod entanglement;
pub mod model;
pub mod nn;
pub mod optics;
pub mod repr;

/// Total entropy above which a state counts as entangled.
pub const ENTANGLED_THRESHOLD: f64 = 1e-9;

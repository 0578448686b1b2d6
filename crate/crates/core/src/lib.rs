//! Event-camera memory surfaces and the processing chain built on them:
//! AER file I/O, a synthetic drop generator, time- and index-decaying
//! surfaces, a projection tracker, SKAN feature extraction, spatial pooling
//! and linear/ELM classification, plus the experiment protocols that tie
//! them together.

pub mod aer;
pub mod classify;
pub mod linalg;
pub mod pipeline;
pub mod pool;
pub mod skan;
pub mod surface;
pub mod synth;
pub mod tracker;

pub use aer::{Event, Polarity, Recording, SensorDims};
pub use surface::{DecayBasis, Kernel, MemorySurface, SurfaceConfig, SurfaceKind};

//! Simulated physics environments that produce binary video episodes.
//!
//! Five worlds are available: a ball in a box, a box with gravity, a ball in
//! an irregular convex polygon, a pong-like box with tracking paddles, and a
//! torque-driven pendulum. Simulation is deterministic per `(spec, seed)`.

mod dataset;
mod error;
mod physics;
mod raster;
mod spec;

pub use dataset::{read_dataset, write_dataset, Dataset, Episode};
pub use error::{Result, WorldError};
pub use physics::{simulate, simulate_episode, simulate_trace, Trace, TEST_INDEX_OFFSET};
pub use raster::{rasterize, rasterize_disk};
pub use spec::{PaddleSpec, PendulumSpec, WorldKind, WorldSpec};

//! Monocular SLAM for scenes with moving objects.
//!
//! Camera tracking uses static features only. Detected objects are tracked
//! with SORT and lifted into the world from 3D detections. Points on each
//! object live in that object's frame, so a local bundle adjustment can
//! refine cameras, object poses and both kinds of points together.
//!
//! [`simulator`] produces synthetic sequences with ground truth,
//! [`pipeline`] runs the system over them and [`evaluation`] scores the
//! result.

pub mod cli;
pub mod evaluation;
pub mod geometry;
pub mod mapping;
pub mod mot;
pub mod objects;
pub mod optimizer;
pub mod pipeline;
pub mod simulator;
pub mod textio;

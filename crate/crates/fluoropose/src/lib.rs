//! Pose estimation of rigid surgical instruments in simulated fluoroscopy.
//!
//! The crate covers the full pipeline:
//!
//! 1. [`phantom`] / [`mesh`] / [`voxelize`] — procedural attenuation
//!    volumes and watertight instrument meshes, voxelized together.
//! 2. [`render`] / [`projection`] — perspective X-ray line integrals onto
//!    a virtual detector.
//! 3. [`geometry`] — the bidirectional map between an instrument pose
//!    and six cross-shaped image keypoints.
//! 4. [`sampler`] / [`patch`] — statistical dataset generation and
//!    normalized patch extraction around an estimated pose.
//! 5. [`net`] / [`predictor`] — landmark regression, either by a trainable
//!    convolutional network or by a noise-injectable oracle.
//! 6. [`estimator`] — iterative pose refinement from an initial guess.
//! 7. [`registration`] / [`cmaes`] — an intensity-based 2-D/3-D
//!    registration baseline under a rendering budget.
//! 8. [`metrics`] / [`plots`] — evaluation errors and SVG box plots.
//!
//! Most entry points are demonstrated by the runnable examples in
//! `examples/`.

pub mod cmaes;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod net;
pub mod patch;
pub mod phantom;
pub mod plots;
pub mod predictor;
pub mod projection;
pub mod rectangle;
pub mod registration;
pub mod render;
pub mod sampler;
pub mod voxelize;
pub mod image;
pub mod io;

pub use error::{Error, Result};

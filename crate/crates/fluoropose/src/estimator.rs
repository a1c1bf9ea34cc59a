//! Iterative pose estimation: extract a patch around the current
//! estimate, predict keypoints, reconstruct the pose, repeat.
//!
//! Each round re-centers and re-rotates the patch so the instrument
//! approaches its standard pose within the patch, which is the regime the
//! predictor was trained on; the reconstructed pose fully replaces the
//! estimate between rounds.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::geometry::{pose_from_keypoints, KeypointLayout, KeypointSet, Pose, ProjectionGeometry};
use crate::image::Image2;
use crate::patch::{extract_patch, DEFAULT_ANCHOR};
use crate::predictor::Predictor;

/// Iteration settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Number of predict-reconstruct rounds.
    pub k_max: usize,
    /// Estimates with |tau| beyond this are rejected as out of the model's
    /// validity range (the keypoint geometry degenerates toward 90).
    pub tau_validity_limit_deg: f64,
    /// Patch pixel that the estimate is pinned to.
    pub anchor: [f64; 2],
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k_max: 3,
            tau_validity_limit_deg: 80.0,
            anchor: DEFAULT_ANCHOR,
        }
    }
}

/// Result of an estimation run.
#[derive(Debug, Clone)]
pub struct Estimation {
    /// Final pose (equals `trace.last()`).
    pub pose: Pose,
    /// Initial estimate followed by the pose after each round.
    pub trace: Vec<Pose>,
    /// True if any round clamped cos(tau) outside its valid range by more
    /// than the tolerance (depth/tilt unreliable that round).
    pub clamped: bool,
}

/// A plausible starting pose when only the image position and forward
/// angle are known: in-plane (tau = 0) at mid arrangement depth.
pub fn initial_pose_guess(
    x: f64,
    y: f64,
    alpha_deg: f64,
    geom: &ProjectionGeometry,
) -> Result<Pose> {
    Pose::new(x, y, alpha_deg, 0.0, geom.source_detector_distance_mm / 2.0)
}

/// Run the iterative estimation loop.
pub fn estimate_pose(
    image: &Image2,
    geom: &ProjectionGeometry,
    layout: &KeypointLayout,
    initial: &Pose,
    predictor: &mut dyn Predictor,
    cfg: &EstimatorConfig,
) -> Result<Estimation> {
    if cfg.k_max == 0 {
        return Err(Error::InvalidParameter(
            "estimator needs at least one iteration".into(),
        ));
    }
    let mut trace = vec![*initial];
    let mut clamped = false;
    let (w, h) = (image.width() as f64, image.height() as f64);

    for k in 1..=cfg.k_max {
        let estimate = *trace.last().expect("trace starts nonempty");
        let fail = |trace: &[Pose]| Error::EstimateOutOfBounds {
            iteration: k,
            trace: trace.to_vec(),
        };

        let patch = extract_patch(image, &estimate, cfg.anchor)
            .map_err(|_| fail(&trace))?;
        let normalized = predictor.predict(&patch)?;
        if normalized.len() != 2 * layout.points.len() {
            return Err(Error::ShapeMismatch(format!(
                "predictor returned {} values for {} keypoints",
                normalized.len(),
                layout.points.len()
            )));
        }
        let image_points = patch.keypoints_to_image(&normalized);
        let kps = KeypointSet::new(
            <[[f64; 2]; 6]>::try_from(image_points.as_slice()).map_err(|_| {
                Error::ShapeMismatch(format!("expected 6 keypoints, got {}", image_points.len()))
            })?,
        )?;
        let recovery = pose_from_keypoints(&kps, layout, geom).map_err(|_| fail(&trace))?;
        clamped |= recovery.cos_tau_clamped;
        let pose = recovery.pose;

        let in_bounds = pose.x >= 0.0 && pose.x <= w - 1.0 && pose.y >= 0.0 && pose.y <= h - 1.0;
        let tau_ok = pose.tau_deg.abs() <= cfg.tau_validity_limit_deg;
        trace.push(pose);
        if !(in_bounds && tau_ok) {
            return Err(fail(&trace));
        }
    }
    Ok(Estimation {
        pose: *trace.last().unwrap(),
        trace,
        clamped,
    })
}

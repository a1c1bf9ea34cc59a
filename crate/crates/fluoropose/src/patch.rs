//! Standard-pose patches: rotate the image so the estimated instrument
//! axis becomes the patch x-axis, crop around the estimate, and min-max
//! normalize.
//!
//! Patch coordinates place the estimate at a configurable anchor pixel.
//! The crop transform between patch and image coordinates is kept with
//! the patch, so keypoint predictions can be mapped back to image pixels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle_deg, Pose, ProjectionGeometry};
use crate::image::Image2;

/// Patch width in pixels (the instrument-axis direction).
pub const PATCH_WIDTH: usize = 92;
/// Patch height in pixels.
pub const PATCH_HEIGHT: usize = 48;

/// Anchor pixel where the estimated position lands: off-center so most
/// of the patch lies ahead of the instrument origin.
pub const DEFAULT_ANCHOR: [f64; 2] = [30.0, 24.0];

/// Anchor mirrored along the patch x-axis, for instruments whose body
/// extends behind the tracked origin.
pub fn mirrored_anchor() -> [f64; 2] {
    [PATCH_WIDTH as f64 - 1.0 - DEFAULT_ANCHOR[0], DEFAULT_ANCHOR[1]]
}

/// Rigid map between patch pixels and image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    /// Image position of the estimate (pixels).
    pub center: [f64; 2],
    /// Forward angle of the estimate (degrees).
    pub alpha_deg: f64,
    /// Patch pixel that maps onto `center`.
    pub anchor: [f64; 2],
}

impl CropTransform {
    /// Patch pixel -> image pixel.
    pub fn patch_to_image(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.alpha_deg.to_radians().sin_cos();
        let dx = p[0] - self.anchor[0];
        let dy = p[1] - self.anchor[1];
        [
            self.center[0] + c * dx - s * dy,
            self.center[1] + s * dx + c * dy,
        ]
    }

    /// Image pixel -> patch pixel.
    pub fn image_to_patch(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.alpha_deg.to_radians().sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [
            self.anchor[0] + c * dx + s * dy,
            self.anchor[1] - s * dx + c * dy,
        ]
    }
}

/// Normalized standard-pose patch with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// 92 x 48 intensities in [0, 1].
    pub pixels: Image2,
    pub crop: CropTransform,
    /// Pose estimate the patch was extracted around.
    pub estimate: Pose,
    /// Identifier of the source image (dataset record), if any.
    pub source_id: String,
}

/// Rotate-crop-normalize around a pose estimate.
///
/// Out-of-image samples read as 0 (empty line integral). A constant
/// region normalizes to all zeros.
pub fn extract_patch(image: &Image2, estimate: &Pose, anchor: [f64; 2]) -> Result<Patch> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    if !(estimate.x >= 0.0 && estimate.x <= w - 1.0 && estimate.y >= 0.0 && estimate.y <= h - 1.0)
    {
        return Err(Error::InvalidParameter(format!(
            "estimate ({}, {}) outside the {}x{} image",
            estimate.x,
            estimate.y,
            image.width(),
            image.height()
        )));
    }
    let crop = CropTransform {
        center: [estimate.x, estimate.y],
        alpha_deg: estimate.alpha_deg,
        anchor,
    };
    let mut pixels = Image2::zeros(PATCH_WIDTH, PATCH_HEIGHT);
    for pr in 0..PATCH_HEIGHT {
        for pc in 0..PATCH_WIDTH {
            let img = crop.patch_to_image([pc as f64, pr as f64]);
            pixels.set(pc, pr, image.sample_bilinear(img[0], img[1], 0.0));
        }
    }
    normalize_in_place(&mut pixels);
    Ok(Patch {
        pixels,
        crop,
        estimate: *estimate,
        source_id: String::new(),
    })
}

/// Min-max normalization to [0, 1]. An input that is constant up to
/// floating-point rounding maps to all zeros.
fn normalize_in_place(img: &mut Image2) {
    let (min, max) = img.min_max();
    let range = max - min;
    if range <= 1e-12 * min.abs().max(max.abs()).max(1.0) {
        img.data_mut().fill(0.0);
        return;
    }
    for v in img.data_mut() {
        *v = (*v - min) / range;
    }
}

/// Map patch-pixel keypoints to the normalized [-1, 1] output encoding
/// (x then y per point, flattened).
pub fn normalize_keypoints(points: &[[f64; 2]]) -> Vec<f64> {
    let half_w = (PATCH_WIDTH as f64 - 1.0) / 2.0;
    let half_h = (PATCH_HEIGHT as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(points.len() * 2);
    for p in points {
        out.push((p[0] - half_w) / half_w);
        out.push((p[1] - half_h) / half_h);
    }
    out
}

/// Inverse of [`normalize_keypoints`].
pub fn unnormalize_keypoints(values: &[f64]) -> Vec<[f64; 2]> {
    let half_w = (PATCH_WIDTH as f64 - 1.0) / 2.0;
    let half_h = (PATCH_HEIGHT as f64 - 1.0) / 2.0;
    values
        .chunks_exact(2)
        .map(|c| [c[0] * half_w + half_w, c[1] * half_h + half_h])
        .collect()
}

impl Patch {
    /// Decode normalized predictions all the way to image pixels.
    pub fn keypoints_to_image(&self, normalized: &[f64]) -> Vec<[f64; 2]> {
        unnormalize_keypoints(normalized)
            .into_iter()
            .map(|p| self.crop.patch_to_image(p))
            .collect()
    }

    /// Encode image-pixel keypoints as normalized patch outputs.
    pub fn keypoints_from_image(&self, image_points: &[[f64; 2]]) -> Vec<f64> {
        let patch_points: Vec<[f64; 2]> = image_points
            .iter()
            .map(|&p| self.crop.image_to_patch(p))
            .collect();
        normalize_keypoints(&patch_points)
    }
}

/// Magnitudes of the synthetic initial-estimate errors used to augment
/// training data and to seed evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Maximum radial position offset, mm.
    pub delta_x_initial_mm: f64,
    /// Standard deviation of the forward-angle offset, degrees.
    pub delta_alpha_initial_deg: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            delta_x_initial_mm: 2.5,
            delta_alpha_initial_deg: 10.0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.delta_x_initial_mm <= 0.0 || self.delta_alpha_initial_deg <= 0.0 {
            return Err(Error::InvalidParameter(
                "augmentation magnitudes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One synthetic initial-estimate error: Cartesian mm offset in the image
/// plane plus a forward-angle offset in degrees.
///
/// The radius is uniform in [0, delta_x_initial) and the direction
/// uniform in angle, so the density concentrates near zero offset; the
/// angle offset is zero-mean normal.
pub fn draw_initial_offset(spec: &AugmentationSpec, rng: &mut impl Rng) -> ([f64; 2], f64) {
    let r = rng.random_range(0.0..spec.delta_x_initial_mm);
    let beta = rng.random_range(0.0..360.0f64).to_radians();
    let normal = Normal::new(0.0, spec.delta_alpha_initial_deg).expect("validated sigma");
    let d_alpha = normal.sample(rng);
    ([r * beta.cos(), r * beta.sin()], d_alpha)
}

/// Apply a drawn offset to a pose, converting millimeters to pixels at
/// the given depth (the truth depth during generation, the estimated
/// depth at inference).
pub fn perturb_pose(
    pose: &Pose,
    offset_mm: [f64; 2],
    d_alpha_deg: f64,
    geom: &ProjectionGeometry,
    depth_mm: f64,
) -> Result<Pose> {
    let px_per_mm = geom.px_per_mm_at_depth(depth_mm);
    Pose::new(
        pose.x + offset_mm[0] * px_per_mm,
        pose.y + offset_mm[1] * px_per_mm,
        normalize_angle_deg(pose.alpha_deg + d_alpha_deg),
        pose.tau_deg,
        pose.depth_mm,
    )
}

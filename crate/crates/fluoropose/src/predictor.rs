//! Pluggable landmark predictors: given an extracted patch, produce the
//! six keypoint positions as twelve normalized coordinates.
//!
//! Two implementations: a ground-truth oracle with optional Gaussian
//! pixel noise (isolating the geometry pipeline from learning quality),
//! and the trainable convolutional network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{keypoints_from_pose, KeypointLayout, Pose, ProjectionGeometry};
use crate::net::tensor::Tensor;
use crate::net::ConvNet;
use crate::patch::{Patch, PATCH_HEIGHT, PATCH_WIDTH};

/// Maps a patch to twelve normalized keypoint coordinates
/// (x1, y1, ..., x6, y6).
pub trait Predictor {
    fn predict(&mut self, patch: &Patch) -> Result<Vec<f64>>;
}

/// Ground-truth predictor: computes the keypoints implied by the true
/// pose, maps them into the patch, and optionally perturbs them with
/// i.i.d. Gaussian pixel noise.
pub struct OraclePredictor {
    pub truth: Pose,
    pub layout: KeypointLayout,
    pub geom: ProjectionGeometry,
    pub noise_px: f64,
    rng: ChaCha8Rng,
}

impl OraclePredictor {
    pub fn new(
        truth: Pose,
        layout: KeypointLayout,
        geom: ProjectionGeometry,
        noise_px: f64,
        seed: u64,
    ) -> Self {
        Self {
            truth,
            layout,
            geom,
            noise_px,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Predictor for OraclePredictor {
    fn predict(&mut self, patch: &Patch) -> Result<Vec<f64>> {
        let kps = keypoints_from_pose(&self.truth, &self.layout, &self.geom)?;
        let mut patch_points: Vec<[f64; 2]> = kps
            .points
            .iter()
            .map(|&p| patch.crop.image_to_patch(p))
            .collect();
        if self.noise_px > 0.0 {
            let noise = Normal::new(0.0, self.noise_px).expect("positive sigma");
            for p in &mut patch_points {
                p[0] += noise.sample(&mut self.rng);
                p[1] += noise.sample(&mut self.rng);
            }
        }
        Ok(crate::patch::normalize_keypoints(&patch_points))
    }
}

/// Trained-network predictor: feeds the patch pixels through the
/// convolutional regressor.
pub struct ConvNetPredictor {
    pub net: ConvNet,
}

impl ConvNetPredictor {
    pub fn new(net: ConvNet) -> Result<Self> {
        if net.config.input != [1, PATCH_HEIGHT, PATCH_WIDTH] {
            return Err(Error::ShapeMismatch(format!(
                "patch predictor needs input [1, {PATCH_HEIGHT}, {PATCH_WIDTH}], got {:?}",
                net.config.input
            )));
        }
        if net.config.output_dim() != 12 {
            return Err(Error::ShapeMismatch(format!(
                "patch predictor needs 12 outputs, got {}",
                net.config.output_dim()
            )));
        }
        Ok(Self { net })
    }

    /// Patch pixels as a network input tensor.
    pub fn patch_tensor(patch: &Patch) -> Tensor {
        Tensor::from_vec(
            [1, 1, PATCH_HEIGHT, PATCH_WIDTH],
            patch.pixels.data().to_vec(),
        )
    }
}

impl Predictor for ConvNetPredictor {
    fn predict(&mut self, patch: &Patch) -> Result<Vec<f64>> {
        let x = Self::patch_tensor(patch);
        Ok(self.net.forward(&x)?.data)
    }
}

/// Build a keypoint-regression dataset from rendered records.  Each
/// sample crops a patch at a seeded perturbed estimate of the true pose
/// (so the network sees the same off-center views it will face during
/// iterative estimation) and targets the true keypoints in normalized
/// patch coordinates.
pub fn build_patch_dataset(
    generated: &[crate::sampler::GeneratedRecord],
    augmentation: &crate::patch::AugmentationSpec,
    seed: u64,
) -> Result<crate::net::RegressionDataset> {
    use crate::patch::{draw_initial_offset, extract_patch, perturb_pose, DEFAULT_ANCHOR};

    augmentation.validate()?;
    if generated.is_empty() {
        return Err(Error::InvalidParameter("no records to train on".into()));
    }
    let layout = KeypointLayout::default_cross();
    let sample_len = PATCH_HEIGHT * PATCH_WIDTH;
    let mut inputs = Tensor::zeros([generated.len(), 1, PATCH_HEIGHT, PATCH_WIDTH]);
    let mut targets = Vec::with_capacity(generated.len() * 12);

    for (index, g) in generated.iter().enumerate() {
        let radiograph = g.radiograph.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!("record {} has no rendered image", g.record.id))
        })?;
        let geom = g.record.setup.geom;
        let truth = g.record.pose;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g.record.stream.wrapping_mul(3).wrapping_add(2));
        let (offset_mm, d_alpha) = draw_initial_offset(augmentation, &mut rng);
        let estimate = perturb_pose(&truth, offset_mm, d_alpha, &geom, truth.depth_mm)?;

        let patch = extract_patch(&radiograph.image, &estimate, DEFAULT_ANCHOR)?;
        inputs.data[index * sample_len..(index + 1) * sample_len]
            .copy_from_slice(patch.pixels.data());

        let kps = keypoints_from_pose(&truth, &layout, &geom)?;
        let patch_points: Vec<[f64; 2]> = kps
            .points
            .iter()
            .map(|&p| patch.crop.image_to_patch(p))
            .collect();
        targets.extend_from_slice(&crate::patch::normalize_keypoints(&patch_points));
    }

    Ok(crate::net::RegressionDataset {
        inputs,
        targets,
        target_dim: 12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image2;
    use crate::net::{ConvNetConfig, Head};
    use crate::patch::{extract_patch, unnormalize_keypoints, DEFAULT_ANCHOR};
    use approx::assert_abs_diff_eq;

    fn test_scene() -> (Image2, Pose, KeypointLayout, ProjectionGeometry) {
        let image = Image2::zeros(1024, 1024);
        let pose = Pose::new(500.0, 480.0, 30.0, 10.0, 600.0).unwrap();
        (
            image,
            pose,
            KeypointLayout::default_cross(),
            ProjectionGeometry::default_c_arm(),
        )
    }

    #[test]
    fn exact_oracle_reproduces_true_keypoints() {
        let (image, pose, layout, geom) = test_scene();
        // Extract around a slightly wrong estimate, as the estimator
        // would.
        let estimate = Pose::new(505.0, 474.0, 38.0, 0.0, 532.0).unwrap();
        let patch = extract_patch(&image, &estimate, DEFAULT_ANCHOR).unwrap();
        let mut oracle = OraclePredictor::new(pose, layout.clone(), geom, 0.0, 7);
        let out = oracle.predict(&patch).unwrap();
        assert_eq!(out.len(), 12);
        // Unnormalized and mapped back to the image, the prediction must
        // equal the true keypoints.
        let true_kps = keypoints_from_pose(&pose, &layout, &geom).unwrap();
        let img_points = patch.keypoints_to_image(&out);
        for (got, want) in img_points.iter().zip(&true_kps.points) {
            assert_abs_diff_eq!(got[0], want[0], epsilon = 1e-9);
            assert_abs_diff_eq!(got[1], want[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn noise_sigma_matches_requested_level() {
        let (image, pose, layout, geom) = test_scene();
        let patch = extract_patch(&image, &pose, DEFAULT_ANCHOR).unwrap();
        let mut exact = OraclePredictor::new(pose, layout.clone(), geom, 0.0, 1);
        let clean = unnormalize_keypoints(&exact.predict(&patch).unwrap());
        let mut noisy = OraclePredictor::new(pose, layout, geom, 0.5, 1);
        let mut devs = Vec::new();
        for _ in 0..10_000 {
            let out = unnormalize_keypoints(&noisy.predict(&patch).unwrap());
            for (a, b) in out.iter().zip(&clean) {
                devs.push(a[0] - b[0]);
                devs.push(a[1] - b[1]);
            }
        }
        let m = devs.iter().sum::<f64>() / devs.len() as f64;
        let sigma = (devs.iter().map(|d| (d - m).powi(2)).sum::<f64>()
            / devs.len() as f64)
            .sqrt();
        assert!((sigma - 0.5).abs() < 0.01, "patch-pixel noise sigma {sigma}");
    }

    #[test]
    fn fixed_seed_reproduces_noise() {
        let (image, pose, layout, geom) = test_scene();
        let patch = extract_patch(&image, &pose, DEFAULT_ANCHOR).unwrap();
        let mut a = OraclePredictor::new(pose, layout.clone(), geom, 0.7, 99);
        let mut b = OraclePredictor::new(pose, layout, geom, 0.7, 99);
        assert_eq!(a.predict(&patch).unwrap(), b.predict(&patch).unwrap());
    }

    #[test]
    fn convnet_predictor_checks_shape_and_is_deterministic() {
        let bad = ConvNet::new(
            ConvNetConfig::simplified([1, 30, 30], 2, Head::Indirect { outputs: 12 }),
            0,
        )
        .unwrap();
        assert!(ConvNetPredictor::new(bad).is_err());

        let net = ConvNet::new(
            ConvNetConfig::simplified(
                [1, PATCH_HEIGHT, PATCH_WIDTH],
                2,
                Head::Indirect { outputs: 12 },
            ),
            0,
        )
        .unwrap();
        let mut p = ConvNetPredictor::new(net).unwrap();
        let (image, pose, ..) = test_scene();
        let patch = extract_patch(&image, &pose, DEFAULT_ANCHOR).unwrap();
        let a = p.predict(&patch).unwrap();
        let b = p.predict(&patch).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
    }
}

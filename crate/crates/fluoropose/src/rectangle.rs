//! The 2-D rectangle benchmark: a reduction of the radiograph scenario
//! used to compare direct angle regression against indirect regression of
//! two endpoint coordinates.
//!
//! Images are 30x30, white background, one black 15x9 rectangle with the
//! two corners of its forward end rounded (which removes the 180-degree
//! rotational ambiguity). Center position and forward angle are drawn
//! uniformly. The direct label is the raw angle in degrees — deliberately
//! without any circular encoding, to expose the wrap discontinuity at
//! 0/360 — while the indirect labels are the two endpoint coordinates,
//! which vary continuously with rotation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::angle_error_deg;
use crate::net::tensor::Tensor;
use crate::net::{
    train, ConvNet, ConvNetConfig, Head, Optimizer, RegressionDataset, TrainConfig, TrainReport,
};

/// Image side length in pixels.
pub const RECT_IMAGE_SIZE: usize = 30;
/// Rectangle length along its forward axis, pixels.
pub const RECT_LENGTH: f64 = 15.0;
/// Rectangle width, pixels.
pub const RECT_WIDTH: f64 = 9.0;
/// Rounding radius of the two forward corners, pixels.
pub const RECT_CORNER_RADIUS: f64 = 4.0;
/// The labeled endpoints sit at `center ± RECT_LENGTH/2` along the axis.
pub const RECT_HALF_LENGTH: f64 = RECT_LENGTH / 2.0;
/// Centers are drawn uniformly within this distance of the image center.
pub const RECT_CENTER_RANGE: f64 = 3.0;

/// Generated benchmark images with both label flavors.
#[derive(Debug, Clone)]
pub struct RectangleDataset {
    /// (count, 1, 30, 30), white = 1, black = 0.
    pub images: Tensor,
    /// Forward angle per image, degrees in [0, 360).
    pub angles_deg: Vec<f64>,
    /// Per image: front endpoint (rounded end) then back endpoint,
    /// pixel coordinates (x_f, y_f, x_b, y_b).
    pub endpoints: Vec<[f64; 4]>,
}

/// Signed distance to an axis-aligned box of the given half-extents.
fn sdf_box(u: f64, v: f64, half_w: f64, half_h: f64) -> f64 {
    let qx = u.abs() - half_w;
    let qy = v.abs() - half_h;
    let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
    outside + qx.max(qy).min(0.0)
}

/// Signed distance to the rounded-front rectangle in its local frame
/// (+u toward the rounded end). Union of a square-cornered body, a
/// shortened front slab and the two corner discs.
fn sdf_shape(u: f64, v: f64) -> f64 {
    let a = RECT_LENGTH / 2.0;
    let b = RECT_WIDTH / 2.0;
    let r = RECT_CORNER_RADIUS;
    // Body with square rear corners: u in [-a, a - r].
    let body = sdf_box(u - (-a + (2.0 * a - r) / 2.0), v, (2.0 * a - r) / 2.0, b);
    // Front slab reaching the tip but narrowed: |v| <= b - r.
    let front = sdf_box(u, v, a, b - r);
    // Corner discs.
    let (cu, cv) = (a - r, b - r);
    let d1 = ((u - cu).powi(2) + (v - cv).powi(2)).sqrt() - r;
    let d2 = ((u - cu).powi(2) + (v + cv).powi(2)).sqrt() - r;
    body.min(front).min(d1).min(d2)
}

/// Render one rectangle; intensity ramps over a one-pixel band around
/// the outline (signed-distance antialiasing).
fn draw_rectangle(pixels: &mut [f64], cx: f64, cy: f64, angle_deg: f64) {
    let (sin_a, cos_a) = angle_deg.to_radians().sin_cos();
    let n = RECT_IMAGE_SIZE;
    for py in 0..n {
        for px in 0..n {
            let dx = px as f64 - cx;
            let dy = py as f64 - cy;
            // Rotate the pixel back into the rectangle frame.
            let u = cos_a * dx + sin_a * dy;
            let v = -sin_a * dx + cos_a * dy;
            let d = sdf_shape(u, v);
            pixels[py * n + px] = (d + 0.5).clamp(0.0, 1.0);
        }
    }
}

/// Generate `count` images with uniformly drawn centers and angles.
pub fn make_rectangle_dataset(count: usize, seed: u64) -> RectangleDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = RECT_IMAGE_SIZE;
    let mid = (n - 1) as f64 / 2.0;
    let mut images = Tensor::zeros([count, 1, n, n]);
    let mut angles_deg = Vec::with_capacity(count);
    let mut endpoints = Vec::with_capacity(count);
    for i in 0..count {
        let cx = mid + rng.random_range(-RECT_CENTER_RANGE..RECT_CENTER_RANGE);
        let cy = mid + rng.random_range(-RECT_CENTER_RANGE..RECT_CENTER_RANGE);
        let angle = rng.random_range(0.0..360.0);
        let start = i * n * n;
        draw_rectangle(&mut images.data[start..start + n * n], cx, cy, angle);
        let (sin_a, cos_a) = angle.to_radians().sin_cos();
        endpoints.push([
            cx + RECT_HALF_LENGTH * cos_a,
            cy + RECT_HALF_LENGTH * sin_a,
            cx - RECT_HALF_LENGTH * cos_a,
            cy - RECT_HALF_LENGTH * sin_a,
        ]);
        angles_deg.push(angle);
    }
    RectangleDataset {
        images,
        angles_deg,
        endpoints,
    }
}

/// Map a pixel coordinate to the [-1, 1] training range.
pub fn normalize_rect_coord(p: f64) -> f64 {
    let mid = (RECT_IMAGE_SIZE - 1) as f64 / 2.0;
    (p - mid) / mid
}

/// Network input for a rectangle image: inverted intensities, so the
/// shape carries the signal on a zero background.
pub fn network_inputs(images: &Tensor) -> Tensor {
    let mut t = images.clone();
    for v in &mut t.data {
        *v = 1.0 - *v;
    }
    t
}

/// Direct-head training labels: the raw angle in degrees.
pub fn direct_labels(ds: &RectangleDataset) -> RegressionDataset {
    RegressionDataset {
        inputs: network_inputs(&ds.images),
        targets: ds.angles_deg.clone(),
        target_dim: 1,
    }
}

/// Indirect-head training labels: normalized endpoint coordinates.
pub fn indirect_labels(ds: &RectangleDataset) -> RegressionDataset {
    let targets = ds
        .endpoints
        .iter()
        .flat_map(|e| e.iter().map(|&p| normalize_rect_coord(p)))
        .collect();
    RegressionDataset {
        inputs: network_inputs(&ds.images),
        targets,
        target_dim: 4,
    }
}

/// Angle implied by an indirect prediction (normalized or raw endpoint
/// coordinates — the uniform scaling cancels in the arctangent).
pub fn angle_from_endpoints(out: &[f64]) -> f64 {
    let dy = out[1] - out[3];
    let dx = out[0] - out[2];
    dy.atan2(dx).to_degrees().rem_euclid(360.0)
}

/// Which regression head a trial used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RectangleHead {
    Direct,
    Indirect,
}

/// Per-sample evaluation of one trained head on a test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectangleEvaluation {
    pub head: RectangleHead,
    pub seed: u64,
    /// Circular absolute angle error per test image, degrees in [0, 180].
    pub abs_errors_deg: Vec<f64>,
    /// True angle per test image (for wrap-zone analysis).
    pub true_angles_deg: Vec<f64>,
    pub train_report: TrainReport,
}

impl RectangleEvaluation {
    pub fn median_error(&self) -> f64 {
        median(&self.abs_errors_deg)
    }

    /// Errors above `threshold_deg` among samples whose true angle lies
    /// within `zone_deg` of the 0/360 wrap.
    pub fn wrap_zone_failures(&self, zone_deg: f64, threshold_deg: f64) -> usize {
        self.abs_errors_deg
            .iter()
            .zip(&self.true_angles_deg)
            .filter(|&(&e, &a)| (a < zone_deg || a > 360.0 - zone_deg) && e > threshold_deg)
            .count()
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Training setup of a rectangle trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectangleTrialConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub base_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for RectangleTrialConfig {
    /// Desk-scale defaults; the published-scale variant uses
    /// 20,000/1,000 images.
    fn default() -> Self {
        Self {
            train_count: 2000,
            test_count: 500,
            base_channels: 4,
            epochs: 20,
            batch_size: 32,
            learning_rate: 2e-3,
        }
    }
}

impl RectangleTrialConfig {
    /// The counts used in the published comparison.
    pub fn paper_scale() -> Self {
        Self {
            train_count: 20_000,
            test_count: 1000,
            base_channels: 32,
            epochs: 200,
            ..Self::default()
        }
    }
}

/// Train one head on its own dataset seed and evaluate on a shared test
/// set.
pub fn run_rectangle_trial(
    cfg: &RectangleTrialConfig,
    head: RectangleHead,
    seed: u64,
    test: &RectangleDataset,
) -> Result<RectangleEvaluation> {
    let train_ds = make_rectangle_dataset(cfg.train_count, seed);
    let net_head = match head {
        RectangleHead::Direct => Head::Direct,
        RectangleHead::Indirect => Head::Indirect { outputs: 4 },
    };
    let data = match head {
        RectangleHead::Direct => direct_labels(&train_ds),
        RectangleHead::Indirect => indirect_labels(&train_ds),
    };
    let config = ConvNetConfig::simplified(
        [1, RECT_IMAGE_SIZE, RECT_IMAGE_SIZE],
        cfg.base_channels,
        net_head,
    );
    let mut net = ConvNet::new(config, seed)?;
    let train_report = train(
        &mut net,
        &TrainConfig {
            optimizer: Optimizer::adam(cfg.learning_rate),
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            seed,
        },
        &data,
    )?;

    let mut abs_errors = Vec::with_capacity(test.angles_deg.len());
    let n = RECT_IMAGE_SIZE;
    let test_inputs = network_inputs(&test.images);
    for i in 0..test.angles_deg.len() {
        let mut x = Tensor::zeros([1, 1, n, n]);
        x.data.copy_from_slice(test_inputs.sample(i));
        let out = net.forward(&x)?;
        let predicted = match head {
            RectangleHead::Direct => out.data[0],
            RectangleHead::Indirect => angle_from_endpoints(&out.data),
        };
        abs_errors.push(angle_error_deg(predicted, test.angles_deg[i]).abs());
    }
    Ok(RectangleEvaluation {
        head,
        seed,
        abs_errors_deg: abs_errors,
        true_angles_deg: test.angles_deg.clone(),
        train_report,
    })
}

/// Pooled outcome of the direct-versus-indirect comparison over several
/// seeds and a shared test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectangleComparison {
    pub config: RectangleTrialConfig,
    pub seeds: Vec<u64>,
    pub direct: Vec<RectangleEvaluation>,
    pub indirect: Vec<RectangleEvaluation>,
}

impl RectangleComparison {
    fn pooled(evals: &[RectangleEvaluation]) -> Vec<f64> {
        evals
            .iter()
            .flat_map(|e| e.abs_errors_deg.iter().copied())
            .collect()
    }

    pub fn direct_median(&self) -> f64 {
        median(&Self::pooled(&self.direct))
    }

    pub fn indirect_median(&self) -> f64 {
        median(&Self::pooled(&self.indirect))
    }

    pub fn direct_wrap_failures(&self, zone_deg: f64, threshold_deg: f64) -> usize {
        self.direct
            .iter()
            .map(|e| e.wrap_zone_failures(zone_deg, threshold_deg))
            .sum()
    }

    pub fn indirect_wrap_failures(&self, zone_deg: f64, threshold_deg: f64) -> usize {
        self.indirect
            .iter()
            .map(|e| e.wrap_zone_failures(zone_deg, threshold_deg))
            .sum()
    }
}

/// Run the full comparison: one training per (head, seed), all evaluated
/// on the same test set.
pub fn run_rectangle_comparison(
    cfg: &RectangleTrialConfig,
    seeds: &[u64],
    test_seed: u64,
) -> Result<RectangleComparison> {
    let test = make_rectangle_dataset(cfg.test_count, test_seed);
    let mut direct = Vec::new();
    let mut indirect = Vec::new();
    for &seed in seeds {
        direct.push(run_rectangle_trial(cfg, RectangleHead::Direct, seed, &test)?);
        indirect.push(run_rectangle_trial(cfg, RectangleHead::Indirect, seed, &test)?);
    }
    Ok(RectangleComparison {
        config: *cfg,
        seeds: seeds.to_vec(),
        direct,
        indirect,
    })
}

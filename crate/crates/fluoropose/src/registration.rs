//! Intensity-based pose registration: re-render the instrument at
//! candidate poses and maximize an image-similarity score against the
//! fixed radiograph, using the evolution strategy in [`crate::cmaes`].
//!
//! The search runs over the in-plane parameters (x, y, α).  The scene
//! supplies the out-of-plane tilt, the depth and the full 3-D placement
//! rotation they correspond to, so every candidate maps to a rigid
//! instrument placement: translate to the world point whose projection
//! is (x, y) at the reference depth, and rotate the reference placement
//! about the projection normal by the α difference.  Moving images are
//! produced by voxelizing the placed instrument into the phantom and
//! ray-casting only the difference against a precomputed instrument-free
//! rendering of the comparison window, on the identical sample grid —
//! each candidate still costs exactly one rendered DRR, counted against
//! a hard budget.
//!
//! Similarity is measured on the same rotated 92×48 patch the landmark
//! pipeline uses, cropped at the *initial* estimate for both images, so
//! the two methods see the same evidence.

use nalgebra::{Translation3, Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmaes::{cma_es_minimize, default_lambda, CmaesConfig};
use crate::error::{Error, Result};
use crate::geometry::{angle_error_deg, Pose};
use crate::image::Image2;
use crate::mesh::{make_instrument, transform_mesh, InstrumentMesh};
use crate::patch::{extract_patch, CropTransform, DEFAULT_ANCHOR, PATCH_HEIGHT, PATCH_WIDTH};
use crate::phantom::{make_phantom, Volume};
use crate::projection::{world_from_pose, ProjectionSetup};
use crate::render::{default_step_mm, project_region, project_region_delta};
use crate::sampler::DatasetRecord;
use crate::voxelize::{undo_writes, voxelize_override, VoxelWrite, INSTRUMENT_MU_PER_MM};

/// Image-similarity score used to compare fixed and moving patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMetric {
    GradientCorrelation,
    MutualInformation,
}

impl SimilarityMetric {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GradientCorrelation => "gc",
            Self::MutualInformation => "mi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gc" | "gradient-correlation" => Ok(Self::GradientCorrelation),
            "mi" | "mutual-information" => Ok(Self::MutualInformation),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity metric '{other}' (expected gc or mi)"
            ))),
        }
    }
}

/// Mean normalized cross-correlation of the central-difference gradient
/// images of `a` and `b`, in [-1, 1].
///
/// Gradients are evaluated on interior pixels only.  A gradient image
/// with zero variance contributes a correlation of 0 by definition, so
/// constant images score 0 rather than dividing by zero.
pub fn gradient_correlation(a: &Image2, b: &Image2) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "gradient correlation needs equal sizes, got {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.width() < 3 || a.height() < 3 {
        return Err(Error::InvalidParameter(
            "gradient correlation needs at least 3x3 images".into(),
        ));
    }
    let ncc_h = ncc(&central_diff(a, true), &central_diff(b, true));
    let ncc_v = ncc(&central_diff(a, false), &central_diff(b, false));
    Ok(0.5 * (ncc_h + ncc_v))
}

/// Central differences over interior pixels; `horizontal` selects d/dx.
fn central_diff(img: &Image2, horizontal: bool) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let g = if horizontal {
                (img.get(x + 1, y) - img.get(x - 1, y)) * 0.5
            } else {
                (img.get(x, y + 1) - img.get(x, y - 1)) * 0.5
            };
            out.push(g);
        }
    }
    out
}

/// Normalized cross-correlation; 0 when either input has zero variance.
fn ncc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Histogram mutual information of two equally sized images, in nats.
///
/// Both images are quantized with the same equal-width bins spanning the
/// joint min/max of the two, so an image compared with itself yields the
/// entropy of its own histogram.
pub fn mutual_information(a: &Image2, b: &Image2, bins: usize) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "mutual information needs equal sizes, got {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "mutual information needs at least 2 bins, got {bins}"
        )));
    }
    let lo = a
        .data()
        .iter()
        .chain(b.data())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = a
        .data()
        .iter()
        .chain(b.data())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Ok(0.0); // both images constant and equal: no information
    }
    let bin_of =
        |v: f64| -> usize { (((v - lo) / range) * bins as f64).min(bins as f64 - 1.0) as usize };
    let mut joint = vec![0u64; bins * bins];
    let mut ca = vec![0u64; bins];
    let mut cb = vec![0u64; bins];
    for (va, vb) in a.data().iter().zip(b.data().iter()) {
        let (i, j) = (bin_of(*va), bin_of(*vb));
        joint[i * bins + j] += 1;
        ca[i] += 1;
        cb[j] += 1;
    }
    let n = a.data().len() as f64;
    let entropy = |counts: &[u64]| -> f64 {
        counts
            .iter()
            .filter(|c| **c > 0)
            .map(|c| {
                let p = *c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    // MI = H(a) + H(b) - H(a,b).  The joint entropy is summed over the
    // sorted count multiset, which a transposition leaves unchanged, so
    // MI(a,b) == MI(b,a) bit for bit.
    let mut joint_nonzero: Vec<u64> = joint.into_iter().filter(|c| *c > 0).collect();
    joint_nonzero.sort_unstable();
    Ok(entropy(&ca) + entropy(&cb) - entropy(&joint_nonzero))
}

fn score(metric: SimilarityMetric, a: &Image2, b: &Image2, bins: usize) -> Result<f64> {
    match metric {
        SimilarityMetric::GradientCorrelation => gradient_correlation(a, b),
        SimilarityMetric::MutualInformation => mutual_information(a, b, bins),
    }
}

/// Everything needed to re-render the instrument at candidate poses.
#[derive(Debug, Clone)]
pub struct RegistrationScene {
    pub setup: ProjectionSetup,
    /// Instrument-free phantom volume.
    pub volume: Volume,
    /// Instrument mesh in its local frame (+X = forward axis).
    pub mesh: InstrumentMesh,
    /// Placement rotation realizing the reference pose.
    pub rotation: UnitQuaternion<f64>,
    /// Pose of the recorded placement; supplies τ, depth and the α the
    /// rotation corresponds to.
    pub reference: Pose,
    /// Ray sampling step for every rendering in this scene.
    pub step_mm: f64,
}

impl RegistrationScene {
    /// Rebuild the scene a dataset record was rendered from.
    pub fn from_record(record: &DatasetRecord) -> Result<Self> {
        let volume = make_phantom(record.phantom, record.phantom_seed);
        let mesh = make_instrument(record.instrument, record.bend_deg)?;
        let step_mm = default_step_mm(&volume);
        Ok(Self {
            setup: record.setup,
            volume,
            mesh,
            rotation: record.rotation(),
            reference: record.pose,
            step_mm,
        })
    }

    /// Rigid placement realizing in-plane parameters (x, y, α).
    ///
    /// Position: the world point projecting to pixel (x, y) at the
    /// reference depth.  Rotation: the reference placement rotated about
    /// the projection normal by the α difference, which leaves the tilt
    /// magnitude unchanged.  At the reference parameters this reproduces
    /// the recorded placement exactly.
    pub fn placement(&self, x: f64, y: f64, alpha_deg: f64) -> Result<nalgebra::Isometry3<f64>> {
        let frame = self.setup.frame();
        let probe = Pose::new(
            x,
            y,
            alpha_deg,
            self.reference.tau_deg,
            self.reference.depth_mm,
        )?;
        let (position, _) = world_from_pose(&self.setup, &frame, &probe);
        let dalpha = angle_error_deg(alpha_deg, self.reference.alpha_deg).to_radians();
        let spin = UnitQuaternion::from_axis_angle(&Unit::new_normalize(frame.normal), dalpha);
        Ok(nalgebra::Isometry3::from_parts(
            Translation3::new(position[0], position[1], position[2]),
            spin * self.rotation,
        ))
    }

    /// Render the instrument at (x, y, α) into a detector-sized canvas,
    /// with pixels filled only inside `region`.
    pub fn render_window(&self, region: &PixelRegion, x: f64, y: f64, alpha_deg: f64) -> Result<Image2> {
        let mut renderer = WindowRenderer::new(self, *region)?;
        let mut canvas = Image2::zeros(
            self.setup.geom.detector_size[0],
            self.setup.geom.detector_size[1],
        );
        renderer.render_into(&mut canvas, x, y, alpha_deg)?;
        Ok(canvas)
    }
}

/// Integer detector region used for windowed rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRegion {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Axis-aligned detector region covering the rotated patch around an
/// estimate, padded and clipped to the detector.
pub fn comparison_region(
    estimate: &Pose,
    anchor: [f64; 2],
    pad_px: usize,
    detector: [usize; 2],
) -> PixelRegion {
    let crop = CropTransform {
        center: [estimate.x, estimate.y],
        alpha_deg: estimate.alpha_deg,
        anchor,
    };
    let (w, h) = (PATCH_WIDTH as f64, PATCH_HEIGHT as f64);
    let corners = [
        [-0.5, -0.5],
        [w - 0.5, -0.5],
        [-0.5, h - 0.5],
        [w - 0.5, h - 0.5],
    ];
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in corners {
        let p = crop.patch_to_image(c);
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    // Two extra pixels of bilinear support on top of the requested pad.
    let pad = pad_px as f64 + 2.0;
    let x0 = (lo[0] - pad).floor().max(0.0) as usize;
    let y0 = (lo[1] - pad).floor().max(0.0) as usize;
    let x1 = ((hi[0] + pad).ceil() as usize).min(detector[0] - 1);
    let y1 = ((hi[1] + pad).ceil() as usize).min(detector[1] - 1);
    PixelRegion {
        x0,
        y0,
        width: x1.saturating_sub(x0) + 1,
        height: y1.saturating_sub(y0) + 1,
    }
}

/// Re-renders one window for many candidate placements, paying the
/// instrument-free base rendering once.
struct WindowRenderer<'a> {
    scene: &'a RegistrationScene,
    region: PixelRegion,
    base: Image2,
    scratch: Volume,
}

impl<'a> WindowRenderer<'a> {
    fn new(scene: &'a RegistrationScene, region: PixelRegion) -> Result<Self> {
        let base = project_region(
            &scene.volume,
            &scene.setup,
            scene.step_mm,
            region.x0 as f64,
            region.y0 as f64,
            region.width,
            region.height,
        )?;
        Ok(Self {
            scene,
            region,
            base,
            scratch: scene.volume.clone(),
        })
    }

    /// Render the placement (x, y, α) and write base+delta into `canvas`.
    fn render_into(&mut self, canvas: &mut Image2, x: f64, y: f64, alpha_deg: f64) -> Result<()> {
        let iso = self.scene.placement(x, y, alpha_deg)?;
        let mesh_world = transform_mesh(&self.scene.mesh, &iso);
        let out = voxelize_override(&mut self.scratch, &mesh_world, INSTRUMENT_MU_PER_MM);
        let delta = if out.writes.is_empty() {
            None
        } else {
            let (blo, bhi) = writes_world_box(&self.scratch, &out.writes);
            Some(project_region_delta(
                &self.scratch,
                &self.scene.volume,
                &self.scene.setup,
                self.scene.step_mm,
                self.region.x0 as f64,
                self.region.y0 as f64,
                self.region.width,
                self.region.height,
                blo,
                bhi,
            ))
        };
        undo_writes(&mut self.scratch, &out.writes);
        let delta = delta.transpose()?;
        for j in 0..self.region.height {
            for i in 0..self.region.width {
                let v = self.base.get(i, j) + delta.as_ref().map_or(0.0, |d| d.get(i, j));
                canvas.set(self.region.x0 + i, self.region.y0 + j, v);
            }
        }
        Ok(())
    }
}

/// Bounding box of written voxel centers, expanded by one spacing so it
/// covers the full trilinear support of the writes.
fn writes_world_box(vol: &Volume, writes: &[VoxelWrite]) -> ([f64; 3], [f64; 3]) {
    let [nx, ny, _] = vol.dims;
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for w in writes {
        let ix = w.index % nx;
        let iy = (w.index / nx) % ny;
        let iz = w.index / (nx * ny);
        let c = vol.voxel_center(ix, iy, iz);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a] - vol.spacing_mm[a]);
            hi[a] = hi[a].max(c[a] + vol.spacing_mm[a]);
        }
    }
    (lo, hi)
}

/// Settings for one registration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub metric: SimilarityMetric,
    /// Hard cap on rendered moving images (objective evaluations).
    pub max_renders: usize,
    /// Initial search scale for x and y, pixels.
    pub sigma0_px: f64,
    /// Initial search scale for α, degrees.
    pub sigma0_deg: f64,
    /// Population size; `None` = 4 + ⌊3 ln 3⌋.
    pub lambda: Option<usize>,
    pub seed: u64,
    /// Patch anchor defining the comparison window.
    pub anchor: [f64; 2],
    /// Extra window padding in pixels.
    pub region_pad_px: usize,
    /// Histogram bins for mutual information.
    pub mi_bins: usize,
}

impl RegistrationConfig {
    pub fn new(metric: SimilarityMetric, seed: u64) -> Self {
        Self {
            metric,
            max_renders: 400,
            sigma0_px: 8.0,
            sigma0_deg: 4.0,
            lambda: None,
            seed,
            anchor: DEFAULT_ANCHOR,
            region_pad_px: 4,
            mi_bins: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_px > 0.0) || !(self.sigma0_deg > 0.0) {
            return Err(Error::InvalidParameter(
                "registration search scales must be positive".into(),
            ));
        }
        if self.mi_bins < 2 {
            return Err(Error::InvalidParameter(
                "mutual information needs at least 2 bins".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a registration run.
#[derive(Debug, Clone)]
pub struct RegistrationOutcome {
    pub initial: Pose,
    /// Best pose found (x, y, α refined; τ and depth from the scene).
    pub best: Pose,
    pub initial_score: f64,
    pub best_score: f64,
    /// Moving images rendered, including the initial pose (≤ budget).
    pub renders: usize,
    pub generations: usize,
    /// The run used up its render budget (as opposed to converging on
    /// the step-size tolerance first).
    pub budget_exhausted: bool,
}

/// Refine `initial` against the fixed image by rendering candidate
/// placements of the scene's instrument.
///
/// The fixed image must be detector-sized; similarity is evaluated on
/// the 92×48 patch cropped at `initial` in both images.  The initial
/// pose is scored first, so the result never degrades below it.
pub fn register_pose(
    fixed: &Image2,
    initial: &Pose,
    scene: &RegistrationScene,
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutcome> {
    cfg.validate()?;
    let det = scene.setup.geom.detector_size;
    if fixed.width() != det[0] || fixed.height() != det[1] {
        return Err(Error::ShapeMismatch(format!(
            "fixed image is {}x{}, detector is {}x{}",
            fixed.width(),
            fixed.height(),
            det[0],
            det[1]
        )));
    }
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(3));
    if cfg.max_renders < lambda + 1 {
        return Err(Error::BudgetTooSmall {
            budget: cfg.max_renders,
            lambda: lambda + 1,
        });
    }
    let fixed_patch = extract_patch(fixed, initial, cfg.anchor)?;
    let region = comparison_region(initial, cfg.anchor, cfg.region_pad_px, det);
    let mut renderer = WindowRenderer::new(scene, region)?;
    let mut canvas = Image2::zeros(det[0], det[1]);
    let mut renders = 0usize;
    let mut evaluate = |x: f64, y: f64, alpha: f64| -> Result<f64> {
        renders += 1;
        renderer.render_into(&mut canvas, x, y, alpha)?;
        let moving = extract_patch(&canvas, initial, cfg.anchor)?;
        score(cfg.metric, &fixed_patch.pixels, &moving.pixels, cfg.mi_bins)
    };

    let initial_score = evaluate(initial.x, initial.y, initial.alpha_deg)?;

    // Scaled coordinates around the initial estimate; any evaluation
    // failure (candidate drifting off the detector) scores -infinity
    // rather than aborting the search.
    let (sx, sa) = (cfg.sigma0_px, cfg.sigma0_deg);
    let (ix, iy, ia) = (initial.x, initial.y, initial.alpha_deg);
    let objective = |u: &[f64]| -> f64 {
        match evaluate(ix + u[0] * sx, iy + u[1] * sx, ia + u[2] * sa) {
            Ok(s) => -s,
            Err(_) => f64::INFINITY,
        }
    };
    let cma_cfg = CmaesConfig {
        sigma0: 1.0,
        lambda: cfg.lambda,
        max_evaluations: cfg.max_renders - 1,
        tol_sigma: 1e-10,
        seed: cfg.seed,
    };
    let outcome = cma_es_minimize(objective, &[0.0, 0.0, 0.0], &cma_cfg)?;

    let (best_score, best) = if -outcome.best_value > initial_score {
        let u = &outcome.best;
        (
            -outcome.best_value,
            Pose::new(
                ix + u[0] * sx,
                iy + u[1] * sx,
                ia + u[2] * sa,
                scene.reference.tau_deg,
                scene.reference.depth_mm,
            )?,
        )
    } else {
        (initial_score, *initial)
    };
    debug_assert_eq!(renders, 1 + outcome.evaluations);
    Ok(RegistrationOutcome {
        initial: *initial,
        best,
        initial_score,
        best_score,
        renders,
        generations: outcome.generations,
        budget_exhausted: !outcome.stopped_on_tolerance,
    })
}

/// One row of the registration comparison harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationTrialRow {
    pub record_id: String,
    pub trial: usize,
    pub metric: SimilarityMetric,
    pub initial_position_error_px: f64,
    pub final_position_error_px: f64,
    pub initial_alpha_error_deg: f64,
    pub final_alpha_error_deg: f64,
    pub initial_score: f64,
    pub final_score: f64,
    pub renders: usize,
    /// Final in-plane position error strictly below the initial one.
    pub improved: bool,
}

/// Harness settings: per-trial random initial offsets of fixed magnitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationHarnessConfig {
    /// In-plane offset magnitude of the initial estimate, mm at the
    /// instrument depth.
    pub offset_mm: f64,
    /// Forward-angle offset magnitude of the initial estimate, degrees.
    pub offset_deg: f64,
    pub trials_per_record: usize,
    pub registration: RegistrationConfig,
    pub master_seed: u64,
}

impl RegistrationHarnessConfig {
    pub fn new(metric: SimilarityMetric, master_seed: u64) -> Self {
        Self {
            offset_mm: 1.0,
            offset_deg: 5.0,
            trials_per_record: 2,
            registration: RegistrationConfig::new(metric, master_seed),
            master_seed,
        }
    }
}

/// Draw the initial estimate for (record, trial): the true pose offset
/// by `offset_mm` in a uniformly random image direction and by
/// ±`offset_deg` in the forward angle.
///
/// The draw depends only on (master seed, record id, trial), not on the
/// similarity metric, so different metrics consume identical initial
/// estimates.
pub fn draw_initial_estimate(
    record: &DatasetRecord,
    trial: usize,
    cfg: &RegistrationHarnessConfig,
) -> Result<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    rng.set_stream((record.stream + 1) * 1024 + trial as u64);
    let truth = record.pose;
    let geom = record.setup.geom;
    let offset_px = cfg.offset_mm / (geom.d2p() * truth.depth_mm);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let sign = if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
    Pose::new(
        truth.x + offset_px * phi.cos(),
        truth.y + offset_px * phi.sin(),
        truth.alpha_deg + sign * cfg.offset_deg,
        truth.tau_deg,
        truth.depth_mm,
    )
}

/// Run seeded registration trials over a set of records.
///
/// Per trial: re-render the recorded placement into the comparison
/// window as the fixed image, offset the initial estimate, register,
/// and report initial/final errors against the recorded pose.
pub fn run_registration_trials(
    records: &[DatasetRecord],
    cfg: &RegistrationHarnessConfig,
) -> Result<Vec<RegistrationTrialRow>> {
    let mut rows = Vec::with_capacity(records.len() * cfg.trials_per_record);
    for record in records {
        let scene = RegistrationScene::from_record(record)?;
        let truth = record.pose;
        for trial in 0..cfg.trials_per_record {
            let initial = draw_initial_estimate(record, trial, cfg)?;
            let region = comparison_region(
                &initial,
                cfg.registration.anchor,
                cfg.registration.region_pad_px,
                scene.setup.geom.detector_size,
            );
            let fixed = scene.render_window(&region, truth.x, truth.y, truth.alpha_deg)?;
            let mut reg_cfg = cfg.registration.clone();
            reg_cfg.seed = cfg
                .master_seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(record.stream * 131 + trial as u64);
            let outcome = register_pose(&fixed, &initial, &scene, &reg_cfg)?;
            let dist = |p: &Pose| ((p.x - truth.x).powi(2) + (p.y - truth.y).powi(2)).sqrt();
            let initial_position_error_px = dist(&initial);
            let final_position_error_px = dist(&outcome.best);
            rows.push(RegistrationTrialRow {
                record_id: record.id.clone(),
                trial,
                metric: cfg.registration.metric,
                initial_position_error_px,
                final_position_error_px,
                initial_alpha_error_deg: angle_error_deg(initial.alpha_deg, truth.alpha_deg)
                    .abs(),
                final_alpha_error_deg: angle_error_deg(outcome.best.alpha_deg, truth.alpha_deg)
                    .abs(),
                initial_score: outcome.initial_score,
                final_score: outcome.best_score,
                renders: outcome.renders,
                improved: final_position_error_px < initial_position_error_px,
            });
        }
    }
    Ok(rows)
}

/// Fraction of trials whose final in-plane error beat the initial one.
pub fn improvement_rate(rows: &[RegistrationTrialRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.improved).count() as f64 / rows.len() as f64
}

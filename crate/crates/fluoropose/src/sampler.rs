//! Statistical scene sampling: draw instrument placements and projection
//! arrangements from the generation table, reject invalid projections,
//! render, and emit ground-truth records.
//!
//! Every record is produced from its own deterministic RNG stream derived
//! from the master seed and the record index, so datasets are reproducible
//! independently of parallel scheduling and of how many records fail the
//! validity check along the way.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::mesh::{make_instrument, transform_mesh, InstrumentKind, ROBOT_MAX_BEND_DEG};
use crate::phantom::{make_phantom, PhantomPreset, Volume};
use crate::projection::{
    pose_from_world, validity_check, ProjectionSetup, ValidityPolygons,
};
use crate::render::{default_step_mm, interpolate_volume, project_volume, Radiograph};
use crate::voxelize::{undo_writes, voxelize_override, INSTRUMENT_MU_PER_MM};

/// A one-dimensional sampling rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    Normal { mean: f64, sigma: f64 },
    Uniform { min: f64, max: f64 },
    /// Radial component of a polar draw: uniform radius in [0, r_max).
    Polar { r_max: f64 },
    Fixed { value: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Normal { sigma, .. } if sigma <= 0.0 => Err(
                Error::InvalidParameter(format!("normal sigma must be positive, got {sigma}")),
            ),
            DistributionSpec::Uniform { min, max } if min >= max => Err(Error::InvalidParameter(
                format!("uniform needs min < max, got [{min}, {max}]"),
            )),
            DistributionSpec::Polar { r_max } if r_max < 0.0 => Err(Error::InvalidParameter(
                "polar radius bound must be nonnegative".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            DistributionSpec::Normal { mean, sigma } => {
                NormalDist::new(mean, sigma).expect("validated").sample(rng)
            }
            DistributionSpec::Uniform { min, max } => rng.random_range(min..max),
            DistributionSpec::Polar { r_max } => {
                if r_max == 0.0 {
                    0.0
                } else {
                    rng.random_range(0.0..r_max)
                }
            }
            DistributionSpec::Fixed { value } => value,
        }
    }
}

/// The generation table: all statistical parameters of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpecs {
    /// Per-component instrument position deviation from the anchor, mm.
    pub position_dev: DistributionSpec,
    /// First instrument orientation deviation angle (about the nominal
    /// axis), degrees.
    pub orient_spin: DistributionSpec,
    /// Second and third orientation deviation angles, degrees.
    pub orient_tilt: DistributionSpec,
    /// Source-object distance, mm.
    pub d_sod: DistributionSpec,
    /// Radial part of the lateral arrangement offset, mm.
    pub offset_radius: DistributionSpec,
    /// Azimuth of the lateral offset, degrees.
    pub offset_phi: DistributionSpec,
    /// Z-Y-Z arrangement rotation angles, degrees.
    pub proj_rot: [DistributionSpec; 3],
    /// Bend of the robot's rear segment, degrees (ignored otherwise).
    pub bend: DistributionSpec,
}

impl GenerationSpecs {
    /// Training-scenario table.
    pub fn training() -> Self {
        Self {
            position_dev: DistributionSpec::Normal { mean: 0.0, sigma: 5.0 },
            orient_spin: DistributionSpec::Uniform { min: 0.0, max: 360.0 },
            orient_tilt: DistributionSpec::Normal { mean: 0.0, sigma: 30.0 },
            ..Self::shared()
        }
    }

    /// Evaluation-scenario table (tighter deviations).
    pub fn evaluation() -> Self {
        Self {
            position_dev: DistributionSpec::Normal { mean: 0.0, sigma: 1.0 },
            orient_spin: DistributionSpec::Uniform { min: 0.0, max: 360.0 },
            orient_tilt: DistributionSpec::Normal { mean: 0.0, sigma: 15.0 },
            ..Self::shared()
        }
    }

    fn shared() -> Self {
        Self {
            position_dev: DistributionSpec::Fixed { value: 0.0 },
            orient_spin: DistributionSpec::Fixed { value: 0.0 },
            orient_tilt: DistributionSpec::Fixed { value: 0.0 },
            d_sod: DistributionSpec::Uniform { min: 362.8, max: 725.61 },
            offset_radius: DistributionSpec::Polar { r_max: 100.0 },
            offset_phi: DistributionSpec::Uniform { min: 0.0, max: 360.0 },
            proj_rot: [
                DistributionSpec::Uniform { min: 0.0, max: 360.0 },
                DistributionSpec::Uniform { min: -60.0, max: 60.0 },
                DistributionSpec::Uniform { min: 0.0, max: 360.0 },
            ],
            bend: DistributionSpec::Fixed { value: 0.0 },
        }
    }

    /// Default bend rule for an instrument.
    pub fn with_default_bend(mut self, instrument: InstrumentKind) -> Self {
        self.bend = match instrument {
            InstrumentKind::Robot => DistributionSpec::Uniform {
                min: -ROBOT_MAX_BEND_DEG,
                max: ROBOT_MAX_BEND_DEG,
            },
            _ => DistributionSpec::Fixed { value: 0.0 },
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        for spec in [
            &self.position_dev,
            &self.orient_spin,
            &self.orient_tilt,
            &self.d_sod,
            &self.offset_radius,
            &self.offset_phi,
            &self.proj_rot[0],
            &self.proj_rot[1],
            &self.proj_rot[2],
            &self.bend,
        ] {
            spec.validate()?;
        }
        Ok(())
    }
}

/// A nominal instrument placement within a phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: [f64; 3],
    /// Nominal forward direction of the instrument (unit).
    pub direction: [f64; 3],
    /// True for anchors generated by mirroring a left-side anchor.
    pub mirrored: bool,
}

/// Deterministic nominal placements for a phantom: `count / 2` anchors in
/// the left half (x < 0) pointing inward, mirrored to the right half.
pub fn phantom_anchors(preset: PhantomPreset, count: usize) -> Vec<Anchor> {
    let per_side = (count + 1) / 2;
    let seed = match preset {
        PhantomPreset::ShellSphere => 0,
        PhantomPreset::LayeredSlab => 1,
        PhantomPreset::PerlinBone => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11C_0000 + seed);
    let normal = NormalDist::new(0.0, 1.0).unwrap();
    let mut anchors = Vec::with_capacity(per_side * 2);
    for _ in 0..per_side {
        // Uniform direction on the left hemisphere, radius in a band that
        // stays inside every phantom.
        let mut v = [0.0f64; 3];
        loop {
            for c in &mut v {
                *c = normal.sample(&mut rng);
            }
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-6 {
                for c in &mut v {
                    *c /= n;
                }
                break;
            }
        }
        v[0] = -v[0].abs();
        let r = rng.random_range(22.0..38.0);
        let position = [r * v[0], r * v[1], r * v[2]];
        let direction = [-v[0], -v[1], -v[2]];
        anchors.push(Anchor {
            position,
            direction,
            mirrored: false,
        });
    }
    let mirrored: Vec<Anchor> = anchors[..per_side]
        .iter()
        .map(|a| Anchor {
            position: [-a.position[0], a.position[1], a.position[2]],
            direction: [-a.direction[0], a.direction[1], a.direction[2]],
            mirrored: true,
        })
        .collect();
    anchors.extend(mirrored);
    anchors.truncate(count);
    anchors
}

/// Train/eval membership of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    Train,
    Eval,
}

/// Ground truth and provenance for one generated radiograph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    /// Relative image path once exported; empty while in memory only.
    pub image: String,
    pub pose: Pose,
    pub setup: ProjectionSetup,
    pub instrument: InstrumentKind,
    pub bend_deg: f64,
    pub phantom: PhantomPreset,
    pub phantom_seed: u64,
    /// Index of the nominal placement the record deviates from.
    pub anchor_index: usize,
    pub anchor_position: [f64; 3],
    pub split: SplitTag,
    /// RNG stream index of this record under the dataset master seed.
    pub stream: u64,
    pub position_world: [f64; 3],
    pub axis_world: [f64; 3],
    /// Full world orientation of the instrument (unit quaternion wxyz).
    pub rotation_world: [f64; 4],
}

impl DatasetRecord {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation_world;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }
}

/// Record plus its rendered image (when rendering was enabled).
#[derive(Debug, Clone)]
pub struct GeneratedRecord {
    pub record: DatasetRecord,
    pub radiograph: Option<Radiograph>,
}

/// Whether and how to render images during generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RenderPolicy {
    /// Ground truth only; no images (fast statistical runs).
    Off,
    /// Full detector render.
    Full {
        interpolation_factor: usize,
        step_mm: Option<f64>,
    },
}

/// Everything [`generate_dataset`] needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub count: usize,
    pub seed: u64,
    pub instrument: InstrumentKind,
    pub phantom: PhantomPreset,
    pub phantom_seed: u64,
    pub specs: GenerationSpecs,
    pub polys: ValidityPolygons,
    pub margin_mm: f64,
    pub render: RenderPolicy,
    pub split: SplitTag,
    /// Reject poses whose projection falls closer than this to the
    /// detector border (pixels). Negative disables the bound entirely,
    /// admitting off-detector poses (only sensible with rendering off).
    pub min_border_px: f64,
    /// Retry budgets: projection draws per placement, placements per
    /// record.
    pub inner_retries: usize,
    pub outer_retries: usize,
}

impl GenerateOptions {
    pub fn new(
        count: usize,
        seed: u64,
        instrument: InstrumentKind,
        phantom: PhantomPreset,
        split: SplitTag,
    ) -> Self {
        let specs = match split {
            SplitTag::Train => GenerationSpecs::training(),
            SplitTag::Eval => GenerationSpecs::evaluation(),
        }
        .with_default_bend(instrument);
        Self {
            count,
            seed,
            instrument,
            phantom,
            phantom_seed: 0,
            specs,
            polys: ValidityPolygons::none(),
            margin_mm: 5.0,
            render: RenderPolicy::Full {
                interpolation_factor: 1,
                step_mm: None,
            },
            split,
            min_border_px: 16.0,
            inner_retries: 100,
            outer_retries: 100,
        }
    }
}

/// Rotation taking local +X to `dir`, with a deterministic roll.
fn nominal_rotation(dir: [f64; 3]) -> Rotation3<f64> {
    let x = Vector3::from(dir).normalize();
    let helper = if x.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let y = helper.cross(&x).normalize();
    let z = x.cross(&y);
    Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z]))
}

struct PlacementDraw {
    position: [f64; 3],
    rotation: Rotation3<f64>,
    bend: f64,
    anchor_index: usize,
}

fn draw_placement(
    opts: &GenerateOptions,
    anchors: &[Anchor],
    index: usize,
    rng: &mut impl Rng,
) -> PlacementDraw {
    let anchor_index = index % anchors.len();
    let anchor = &anchors[anchor_index];
    let mut position = anchor.position;
    for c in &mut position {
        *c += opts.specs.position_dev.sample(rng);
    }
    let spin = opts.specs.orient_spin.sample(rng);
    let tilt1 = opts.specs.orient_tilt.sample(rng);
    let tilt2 = opts.specs.orient_tilt.sample(rng);
    let deviation = Rotation3::from_axis_angle(&Vector3::z_axis(), spin.to_radians())
        * Rotation3::from_axis_angle(&Vector3::y_axis(), tilt1.to_radians())
        * Rotation3::from_axis_angle(&Vector3::z_axis(), tilt2.to_radians());
    let rotation = nominal_rotation(anchor.direction) * deviation;
    let bend = opts
        .specs
        .bend
        .sample(rng)
        .clamp(-ROBOT_MAX_BEND_DEG, ROBOT_MAX_BEND_DEG);
    PlacementDraw {
        position,
        rotation,
        bend,
        anchor_index,
    }
}

fn draw_setup(opts: &GenerateOptions, rng: &mut impl Rng) -> Result<ProjectionSetup> {
    let geom = crate::geometry::ProjectionGeometry::default_c_arm();
    ProjectionSetup::new(
        geom,
        opts.specs.d_sod.sample(rng),
        (
            opts.specs.offset_radius.sample(rng),
            opts.specs.offset_phi.sample(rng),
        ),
        [
            opts.specs.proj_rot[0].sample(rng),
            opts.specs.proj_rot[1].sample(rng),
            opts.specs.proj_rot[2].sample(rng),
        ],
    )
}

/// Generate `count` records by the double rejection loop: resample the
/// projection up to `inner_retries` times per placement, and the
/// placement up to `outer_retries` times per record.
pub fn generate_dataset(opts: &GenerateOptions) -> Result<Vec<GeneratedRecord>> {
    if opts.count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    opts.specs.validate()?;
    let anchors = phantom_anchors(opts.phantom, 20);

    // Base volume prepared once; rendering clones it per worker.
    let base_volume: Option<Volume> = match opts.render {
        RenderPolicy::Off => None,
        RenderPolicy::Full {
            interpolation_factor,
            ..
        } => {
            let vol = make_phantom(opts.phantom, opts.phantom_seed);
            Some(interpolate_volume(&vol, interpolation_factor)?)
        }
    };

    let results: Vec<Result<GeneratedRecord>> = (0..opts.count)
        .into_par_iter()
        .map_init(
            || base_volume.clone(),
            |scratch, index| generate_one(opts, &anchors, scratch.as_mut(), index),
        )
        .collect();
    results.into_iter().collect()
}

fn generate_one(
    opts: &GenerateOptions,
    anchors: &[Anchor],
    scratch: Option<&mut Volume>,
    index: usize,
) -> Result<GeneratedRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64 + 1);
    let geom = crate::geometry::ProjectionGeometry::default_c_arm();
    let border = opts.min_border_px;
    let (w, h) = (geom.detector_size[0] as f64, geom.detector_size[1] as f64);

    let mut accepted: Option<(PlacementDraw, ProjectionSetup, Pose)> = None;
    'outer: for _ in 0..opts.outer_retries {
        let placement = draw_placement(opts, anchors, index, &mut rng);
        for _ in 0..opts.inner_retries {
            let setup = draw_setup(opts, &mut rng)?;
            if !validity_check(&setup, placement.position, &opts.polys, opts.margin_mm) {
                continue;
            }
            let frame = setup.frame();
            let axis = placement.rotation * Vector3::x();
            let Ok(pose) = pose_from_world(&setup, &frame, placement.position, &axis) else {
                continue;
            };
            if border >= 0.0
                && !(pose.x >= border
                    && pose.x <= w - 1.0 - border
                    && pose.y >= border
                    && pose.y <= h - 1.0 - border)
            {
                continue;
            }
            accepted = Some((placement, setup, pose));
            break 'outer;
        }
    }
    let Some((placement, setup, pose)) = accepted else {
        return Err(Error::RetryBudgetExhausted {
            record: index,
            detail: "no valid projection within the retry budgets".into(),
        });
    };

    let radiograph = match (opts.render, scratch) {
        (RenderPolicy::Off, _) => None,
        (RenderPolicy::Full { step_mm, .. }, Some(volume)) => {
            let mesh = make_instrument(opts.instrument, placement.bend)?;
            let iso = nalgebra::Isometry3::from_parts(
                nalgebra::Translation3::new(
                    placement.position[0],
                    placement.position[1],
                    placement.position[2],
                ),
                UnitQuaternion::from_rotation_matrix(&placement.rotation),
            );
            let placed = transform_mesh(&mesh, &iso);
            let out = voxelize_override(volume, &placed, INSTRUMENT_MU_PER_MM);
            let step = step_mm.unwrap_or_else(|| default_step_mm(volume));
            let shot = project_volume(volume, &setup, step);
            undo_writes(volume, &out.writes);
            Some(shot?)
        }
        (RenderPolicy::Full { .. }, None) => unreachable!("render policy implies base volume"),
    };

    let q = UnitQuaternion::from_rotation_matrix(&placement.rotation);
    let axis = placement.rotation * Vector3::x();
    Ok(GeneratedRecord {
        record: DatasetRecord {
            id: format!("rec-{index:06}"),
            image: String::new(),
            pose,
            setup,
            instrument: opts.instrument,
            bend_deg: placement.bend,
            phantom: opts.phantom,
            phantom_seed: opts.phantom_seed,
            anchor_index: placement.anchor_index,
            anchor_position: anchors[placement.anchor_index].position,
            split: opts.split,
            stream: index as u64 + 1,
            position_world: placement.position,
            axis_world: [axis.x, axis.y, axis.z],
            rotation_world: [q.w, q.i, q.j, q.k],
        },
        radiograph,
    })
}

/// Split records by phantom preset: the holdout preset becomes the
/// evaluation set, everything else trains. Records of other instruments
/// are excluded from both sides.
pub fn split_scenario(
    records: &[DatasetRecord],
    instrument: InstrumentKind,
    holdout: PhantomPreset,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    let mut presets: Vec<PhantomPreset> = records.iter().map(|r| r.phantom).collect();
    presets.sort_by_key(|p| p.name());
    presets.dedup();
    if presets.len() < 2 {
        return Err(Error::InvalidParameter(
            "scenario split needs records from at least two phantoms".into(),
        ));
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for r in records.iter().filter(|r| r.instrument == instrument) {
        if r.phantom == holdout {
            eval.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::projection::project_point;

    fn fast_options(count: usize, seed: u64) -> GenerateOptions {
        let mut o = GenerateOptions::new(
            count,
            seed,
            InstrumentKind::Screw,
            PhantomPreset::ShellSphere,
            SplitTag::Train,
        );
        o.render = RenderPolicy::Off;
        o
    }

    #[test]
    fn fixed_and_uniform_and_normal_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(DistributionSpec::Fixed { value: 3.2 }.sample(&mut rng), 3.2);

        let u = DistributionSpec::Uniform { min: 362.8, max: 725.61 };
        let n = 100_000;
        let mean = (0..n).map(|_| u.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 544.205).abs() < 1.0, "uniform mean {mean}");

        let g = DistributionSpec::Normal { mean: 0.0, sigma: 5.0 };
        let draws: Vec<f64> = (0..n).map(|_| g.sample(&mut rng)).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let sigma =
            (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sigma - 5.0).abs() / 5.0 < 0.02, "sigma {sigma}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(DistributionSpec::Normal { mean: 0.0, sigma: 0.0 }.validate().is_err());
        assert!(DistributionSpec::Uniform { min: 1.0, max: 1.0 }.validate().is_err());
        assert!(DistributionSpec::Polar { r_max: -1.0 }.validate().is_err());
    }

    #[test]
    fn anchors_are_deterministic_and_mirrored() {
        let a = phantom_anchors(PhantomPreset::ShellSphere, 20);
        let b = phantom_anchors(PhantomPreset::ShellSphere, 20);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        for i in 0..10 {
            assert!(a[i].position[0] < 0.0, "left anchor {i} on wrong side");
            assert!(!a[i].mirrored);
            assert!(a[10 + i].mirrored);
            assert_abs_diff_eq!(a[10 + i].position[0], -a[i].position[0], epsilon = 1e-15);
            assert_abs_diff_eq!(a[10 + i].position[1], a[i].position[1], epsilon = 1e-15);
            let d = Vector3::from(a[i].direction);
            assert_abs_diff_eq!(d.norm(), 1.0, epsilon = 1e-12);
        }
        // Distinct presets get distinct anchors.
        let c = phantom_anchors(PhantomPreset::PerlinBone, 20);
        assert_ne!(a, c);
    }

    #[test]
    fn single_record_with_open_polygons() {
        let out = generate_dataset(&fast_options(1, 7)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].record.id, "rec-000000");
        assert!(out[0].radiograph.is_none());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&fast_options(100, 42)).unwrap();
        let b = generate_dataset(&fast_options(100, 42)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
        }
        let c = generate_dataset(&fast_options(100, 43)).unwrap();
        assert_ne!(a[0].record.pose, c[0].record.pose);
    }

    #[test]
    fn poses_reproject_consistently() {
        let out = generate_dataset(&fast_options(50, 11)).unwrap();
        for r in &out {
            let p = project_point(&r.record.setup, r.record.position_world).unwrap();
            assert!(
                (p.pixel[0] - r.record.pose.x).abs() < 1e-6
                    && (p.pixel[1] - r.record.pose.y).abs() < 1e-6,
                "pose/projection mismatch"
            );
            assert_abs_diff_eq!(p.depth_mm, r.record.pose.depth_mm, epsilon = 1e-6);
            // Stored rotation reproduces the stored axis.
            let axis = r.record.rotation() * Vector3::x();
            assert_abs_diff_eq!(axis.x, r.record.axis_world[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn emitted_records_pass_validity_post_hoc() {
        // A wall through the object center restricts half the detector.
        let mut opts = fast_options(40, 5);
        opts.polys = ValidityPolygons {
            upper: Vec::new(),
            lower: vec![
                [0.0, -300.0, 0.0],
                [0.0, 300.0, 0.0],
                [0.0, 300.0, -1000.0],
                [0.0, -300.0, -1000.0],
            ],
        };
        let out = generate_dataset(&opts).unwrap();
        assert_eq!(out.len(), 40);
        for r in &out {
            assert!(validity_check(
                &r.record.setup,
                r.record.position_world,
                &opts.polys,
                opts.margin_mm
            ));
        }
    }

    #[test]
    fn eval_specs_tighten_position_deviation() {
        let mut opts = fast_options(2000, 9);
        opts.split = SplitTag::Eval;
        opts.specs = GenerationSpecs::evaluation().with_default_bend(InstrumentKind::Screw);
        opts.min_border_px = -1.0;
        let out = generate_dataset(&opts).unwrap();
        let devs: Vec<f64> = out
            .iter()
            .flat_map(|r| {
                (0..3).map(move |c| {
                    r.record.position_world[c] - r.record.anchor_position[c]
                })
            })
            .collect();
        let m = devs.iter().sum::<f64>() / devs.len() as f64;
        let sigma =
            (devs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / devs.len() as f64).sqrt();
        assert!((sigma - 1.0).abs() < 0.1, "eval sigma {sigma}");
    }

    #[test]
    fn split_by_phantom_holdout() {
        let mut all = Vec::new();
        for (preset, split) in [
            (PhantomPreset::ShellSphere, SplitTag::Train),
            (PhantomPreset::LayeredSlab, SplitTag::Train),
            (PhantomPreset::PerlinBone, SplitTag::Eval),
        ] {
            let mut o = fast_options(10, 3);
            o.phantom = preset;
            o.split = split;
            all.extend(generate_dataset(&o).unwrap().into_iter().map(|g| g.record));
        }
        let (train, eval) =
            split_scenario(&all, InstrumentKind::Screw, PhantomPreset::PerlinBone).unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(eval.len(), 10);
        assert!(train.iter().all(|r| r.phantom != PhantomPreset::PerlinBone));
        assert!(eval.iter().all(|r| r.phantom == PhantomPreset::PerlinBone));
        assert_eq!(train.len() + eval.len(), all.len());

        let single: Vec<DatasetRecord> = all
            .iter()
            .filter(|r| r.phantom == PhantomPreset::PerlinBone)
            .cloned()
            .collect();
        assert!(split_scenario(&single, InstrumentKind::Screw, PhantomPreset::PerlinBone).is_err());
    }

    #[test]
    fn rendered_record_contains_instrument_shadow() {
        let mut opts = fast_options(1, 21);
        opts.render = RenderPolicy::Full {
            interpolation_factor: 1,
            step_mm: None,
        };
        opts.min_border_px = 100.0;
        let out = generate_dataset(&opts).unwrap();
        let g = &out[0];
        let shot = g.radiograph.as_ref().unwrap();
        // The pixel at the instrument position must be an unusually strong
        // absorber compared to the median of the image.
        let at = shot
            .image
            .sample_bilinear(g.record.pose.x, g.record.pose.y, 0.0);
        let mut sorted: Vec<f64> = shot.image.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(
            at > median + 0.5,
            "instrument shadow weak: {at} vs median {median}"
        );
    }
}

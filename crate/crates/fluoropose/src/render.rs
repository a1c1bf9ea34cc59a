//! Ray-cast projection of attenuation volumes onto the detector.
//!
//! Each pixel stores the raw line integral of attenuation along the ray
//! from the source through that pixel center (midpoint rule, trilinear
//! volume interpolation, zero outside the volume). Display scaling is
//! deliberately left to consumers so the physics stays linear.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2;
use crate::phantom::Volume;
use crate::projection::{ProjectionFrame, ProjectionSetup};

/// A rendered radiograph: line-integral pixels plus the arrangement that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Radiograph {
    pub image: Image2,
    pub setup: ProjectionSetup,
}

/// Display metadata stored next to exported radiographs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DisplayRange {
    pub min: f64,
    pub max: f64,
}

impl Radiograph {
    /// Raw intensity range used for display normalization.
    pub fn display_range(&self) -> DisplayRange {
        let (min, max) = self.image.min_max();
        DisplayRange { min, max }
    }
}

/// Default ray-sampling step: half the smallest voxel spacing.
pub fn default_step_mm(v: &Volume) -> f64 {
    0.5 * v.spacing_mm.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Trilinear upsampling by an integer factor in {1, 2, 4}.
///
/// The refined grid keeps the voxel-center hull: each axis goes from `n`
/// to `(n - 1) * factor + 1` samples with spacing divided by the factor,
/// so original grid nodes are reproduced exactly.
pub fn interpolate_volume(v: &Volume, factor: usize) -> Result<Volume> {
    if !matches!(factor, 1 | 2 | 4) {
        return Err(Error::InvalidParameter(format!(
            "interpolation factor must be 1, 2 or 4, got {factor}"
        )));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let f = factor as f64;
    let dims = [
        (v.dims[0] - 1) * factor + 1,
        (v.dims[1] - 1) * factor + 1,
        (v.dims[2] - 1) * factor + 1,
    ];
    let spacing = [
        v.spacing_mm[0] / f,
        v.spacing_mm[1] / f,
        v.spacing_mm[2] / f,
    ];
    let mut out = Volume::zeros(dims, spacing, v.origin_mm)?;
    for iz in 0..dims[2] {
        let z = iz as f64 / f;
        for iy in 0..dims[1] {
            let y = iy as f64 / f;
            for ix in 0..dims[0] {
                let x = ix as f64 / f;
                let value = index_trilinear(v, x, y, z);
                out.set(ix, iy, iz, value as f32);
            }
        }
    }
    Ok(out)
}

/// Trilinear interpolation in index space (coordinates in voxel units).
fn index_trilinear(v: &Volume, x: f64, y: f64, z: f64) -> f64 {
    let [nx, ny, nz] = v.dims;
    let ix = (x.floor() as usize).min(nx.saturating_sub(2));
    let iy = (y.floor() as usize).min(ny.saturating_sub(2));
    let iz = (z.floor() as usize).min(nz.saturating_sub(2));
    let fx = x - ix as f64;
    let fy = y - iy as f64;
    let fz = z - iz as f64;
    let (jx, jy, jz) = ((ix + 1).min(nx - 1), (iy + 1).min(ny - 1), (iz + 1).min(nz - 1));
    let c00 = v.get(ix, iy, iz) as f64 * (1.0 - fx) + v.get(jx, iy, iz) as f64 * fx;
    let c10 = v.get(ix, jy, iz) as f64 * (1.0 - fx) + v.get(jx, jy, iz) as f64 * fx;
    let c01 = v.get(ix, iy, jz) as f64 * (1.0 - fx) + v.get(jx, iy, jz) as f64 * fx;
    let c11 = v.get(ix, jy, jz) as f64 * (1.0 - fx) + v.get(jx, jy, jz) as f64 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Render the full detector.
pub fn project_volume(v: &Volume, setup: &ProjectionSetup, step_mm: f64) -> Result<Radiograph> {
    let [w, h] = setup.geom.detector_size;
    let image = project_region(v, setup, step_mm, 0.0, 0.0, w, h)?;
    Ok(Radiograph {
        image,
        setup: *setup,
    })
}

/// Render a rectangular detector region whose top-left pixel sits at the
/// continuous pixel coordinate `(x0, y0)`.
///
/// Rows are rendered in parallel; every pixel is an independent pure
/// computation, so the result does not depend on the schedule.
pub fn project_region(
    v: &Volume,
    setup: &ProjectionSetup,
    step_mm: f64,
    x0: f64,
    y0: f64,
    width: usize,
    height: usize,
) -> Result<Image2> {
    if step_mm <= 0.0 {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let frame = setup.frame();
    let (lo, hi) = v.center_hull();
    let mut image = Image2::zeros(width, height);
    image
        .data_mut()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(j, row)| {
            let py = y0 + j as f64;
            for (i, px_out) in row.iter_mut().enumerate() {
                let px = x0 + i as f64;
                *px_out = integrate_ray(v, setup, &frame, lo, hi, step_mm, px, py);
            }
        });
    Ok(image)
}

/// Difference image `render(modified) − render(pristine)` over a region,
/// accumulated only where it can be nonzero.
///
/// Both volumes must share dims, spacing and origin, and must differ only
/// at voxels whose trilinear support lies inside the world-space box
/// `[box_lo, box_hi]` (e.g. the written-voxel bounding box expanded by
/// one spacing).  The integration reuses the exact ray sample grid of
/// [`project_region`], so `base + delta` reproduces a full rendering of
/// the modified volume sample-for-sample; only rays entering the box pay
/// for volume lookups.
#[allow(clippy::too_many_arguments)]
pub fn project_region_delta(
    modified: &Volume,
    pristine: &Volume,
    setup: &ProjectionSetup,
    step_mm: f64,
    x0: f64,
    y0: f64,
    width: usize,
    height: usize,
    box_lo: [f64; 3],
    box_hi: [f64; 3],
) -> Result<Image2> {
    if step_mm <= 0.0 {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    if modified.dims != pristine.dims
        || modified.spacing_mm != pristine.spacing_mm
        || modified.origin_mm != pristine.origin_mm
    {
        return Err(Error::ShapeMismatch(
            "delta rendering needs volumes on the same grid".into(),
        ));
    }
    let frame = setup.frame();
    let (lo, hi) = pristine.center_hull();
    let mut image = Image2::zeros(width, height);
    if box_lo.iter().zip(box_hi.iter()).any(|(a, b)| a > b) {
        return Ok(image); // empty box: volumes agree everywhere
    }
    image
        .data_mut()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(j, row)| {
            let py = y0 + j as f64;
            for (i, px_out) in row.iter_mut().enumerate() {
                let px = x0 + i as f64;
                *px_out = integrate_ray_delta(
                    modified, pristine, setup, &frame, lo, hi, box_lo, box_hi, step_mm, px, py,
                );
            }
        });
    Ok(image)
}

/// Per-ray sampling state in voxel-index coordinates.
///
/// The ray is clipped against the voxel-center hull, so every sample lands
/// inside the grid (up to rounding, absorbed by a clamp). Marching in index
/// space keeps the inner loop free of per-sample world-to-voxel divisions;
/// the same affine map is used by both the plain and the delta integrator so
/// `base + delta` reproduces a full render sample-for-sample.
struct RaySamples {
    /// `index = qo + t * qd` componentwise, `t` in world mm along the ray.
    qo: [f64; 3],
    qd: [f64; 3],
    t0: f64,
    h: f64,
    n: usize,
}

impl RaySamples {
    fn new(
        v: &Volume,
        setup: &ProjectionSetup,
        frame: &ProjectionFrame,
        lo: [f64; 3],
        hi: [f64; 3],
        step_mm: f64,
        px: f64,
        py: f64,
    ) -> Option<Self> {
        let origin = frame.source;
        let target = frame.pixel_to_world(&setup.geom, px, py);
        let dir = (target - origin).normalize();
        let o = [origin.x, origin.y, origin.z];
        let d = [dir.x, dir.y, dir.z];
        let (t0, t1) = clip_to_aabb(o, d, lo, hi)?;
        let len = t1 - t0;
        if len <= 0.0 {
            return None;
        }
        let n = (len / step_mm).ceil() as usize;
        let h = len / n as f64;
        let mut qo = [0.0; 3];
        let mut qd = [0.0; 3];
        for c in 0..3 {
            qo[c] = (o[c] - v.origin_mm[c]) / v.spacing_mm[c];
            qd[c] = d[c] / v.spacing_mm[c];
        }
        Some(Self { qo, qd, t0, h, n })
    }

    /// Index-space position of sample `i` (midpoint rule), clamped to the
    /// grid to absorb rounding at the clip boundary.
    #[inline]
    fn at(&self, i: usize, dims: [usize; 3]) -> [f64; 3] {
        let t = self.t0 + (i as f64 + 0.5) * self.h;
        [
            (self.qo[0] + t * self.qd[0]).clamp(0.0, (dims[0] - 1) as f64),
            (self.qo[1] + t * self.qd[1]).clamp(0.0, (dims[1] - 1) as f64),
            (self.qo[2] + t * self.qd[2]).clamp(0.0, (dims[2] - 1) as f64),
        ]
    }

    /// Which world-`t` interval maps to which sample indices: the samples
    /// `i_lo ..= i_hi` covering `[a, b]` with one sample of slack.
    fn index_window(&self, a: f64, b: f64) -> Option<(usize, usize)> {
        if a >= b || self.n == 0 {
            return None;
        }
        let i_lo = (((a - self.t0) / self.h - 0.5).floor().max(0.0)) as usize;
        let i_hi = ((((b - self.t0) / self.h - 0.5).ceil()) as usize).min(self.n - 1);
        Some((i_lo, i_hi))
    }
}

/// Trilinear read at an in-grid index-space point (already clamped).
#[inline]
fn trilinear_at(data: &[f32], dims: [usize; 3], q: [f64; 3]) -> f64 {
    let [nx, ny, _] = dims;
    let ix = (q[0] as usize).min(nx - 2);
    let iy = (q[1] as usize).min(ny - 2);
    let iz = (q[2] as usize).min(dims[2] - 2);
    let fx = q[0] - ix as f64;
    let fy = q[1] - iy as f64;
    let fz = q[2] - iz as f64;
    let base = ix + nx * (iy + ny * iz);
    let sz = nx * ny;
    let c000 = data[base] as f64;
    let c100 = data[base + 1] as f64;
    let c010 = data[base + nx] as f64;
    let c110 = data[base + nx + 1] as f64;
    let c001 = data[base + sz] as f64;
    let c101 = data[base + sz + 1] as f64;
    let c011 = data[base + sz + nx] as f64;
    let c111 = data[base + sz + nx + 1] as f64;
    let c00 = c000 * (1.0 - fx) + c100 * fx;
    let c10 = c010 * (1.0 - fx) + c110 * fx;
    let c01 = c001 * (1.0 - fx) + c101 * fx;
    let c11 = c011 * (1.0 - fx) + c111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

#[allow(clippy::too_many_arguments)]
fn integrate_ray_delta(
    modified: &Volume,
    pristine: &Volume,
    setup: &ProjectionSetup,
    frame: &ProjectionFrame,
    lo: [f64; 3],
    hi: [f64; 3],
    box_lo: [f64; 3],
    box_hi: [f64; 3],
    step_mm: f64,
    px: f64,
    py: f64,
) -> f64 {
    // Sample grid identical to the plain region render.
    let Some(ray) = RaySamples::new(pristine, setup, frame, lo, hi, step_mm, px, py) else {
        return 0.0;
    };
    let origin = frame.source;
    let target = frame.pixel_to_world(&setup.geom, px, py);
    let dir = (target - origin).normalize();
    // Restrict to samples whose position can differ (inside the box),
    // with one sample of slack on each side.
    let Some((b0, b1)) = clip_to_aabb(
        [origin.x, origin.y, origin.z],
        [dir.x, dir.y, dir.z],
        box_lo,
        box_hi,
    ) else {
        return 0.0;
    };
    let t1 = ray.t0 + ray.h * ray.n as f64;
    let Some((i_lo, i_hi)) = ray.index_window(b0.max(ray.t0), b1.min(t1)) else {
        return 0.0;
    };
    let dims = pristine.dims;
    let mod_data = &modified.data[..];
    let pri_data = &pristine.data[..];
    let mut sum = 0.0;
    for i in i_lo..=i_hi {
        let q = ray.at(i, dims);
        sum += trilinear_at(mod_data, dims, q) - trilinear_at(pri_data, dims, q);
    }
    sum * ray.h
}

fn integrate_ray(
    v: &Volume,
    setup: &ProjectionSetup,
    frame: &ProjectionFrame,
    lo: [f64; 3],
    hi: [f64; 3],
    step_mm: f64,
    px: f64,
    py: f64,
) -> f64 {
    let Some(ray) = RaySamples::new(v, setup, frame, lo, hi, step_mm, px, py) else {
        return 0.0;
    };
    let dims = v.dims;
    let data = &v.data[..];
    let mut sum = 0.0;
    for i in 0..ray.n {
        sum += trilinear_at(data, dims, ray.at(i, dims));
    }
    sum * ray.h
}

/// Slab-clip a ray `o + t d` against an AABB; returns `t` range with
/// `t >= 0`, or None when the ray misses.
fn clip_to_aabb(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for c in 0..3 {
        if d[c].abs() < 1e-15 {
            if o[c] < lo[c] || o[c] > hi[c] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[c];
        let (mut a, mut b) = ((lo[c] - o[c]) * inv, (hi[c] - o[c]) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 >= t1 {
            return None;
        }
    }
    Some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProjectionGeometry;
    use crate::mesh::{make_instrument, InstrumentKind};
    use crate::projection::project_point;
    use crate::voxelize::voxelize_override;
    use approx::assert_abs_diff_eq;

    fn cube_volume(mu: f32) -> Volume {
        let mut v = Volume::centered_cube(101, 1.0).unwrap();
        v.data.fill(mu);
        v
    }

    fn head_on(d_sod: f64) -> ProjectionSetup {
        ProjectionSetup::head_on(ProjectionGeometry::default_c_arm(), d_sod).unwrap()
    }

    #[test]
    fn interpolate_factor_one_is_identity() {
        let v = crate::phantom::make_phantom(crate::phantom::PhantomPreset::ShellSphere, 0);
        let out = interpolate_volume(&v, 1).unwrap();
        assert_eq!(v, out);
        assert!(interpolate_volume(&v, 3).is_err());
    }

    #[test]
    fn interpolate_constant_stays_constant_and_keeps_hull() {
        let mut v = Volume::centered_cube(9, 2.0).unwrap();
        v.data.fill(0.37);
        let out = interpolate_volume(&v, 2).unwrap();
        assert_eq!(out.dims, [17, 17, 17]);
        assert_eq!(out.spacing_mm, [1.0, 1.0, 1.0]);
        assert_eq!(out.center_hull(), v.center_hull());
        assert!(out.data.iter().all(|&x| x == 0.37));
    }

    #[test]
    fn interpolate_reproduces_linear_ramp() {
        let mut v = Volume::centered_cube(9, 2.0).unwrap();
        for iz in 0..9 {
            for iy in 0..9 {
                for ix in 0..9 {
                    let c = v.voxel_center(ix, iy, iz);
                    v.set(ix, iy, iz, (0.5 + 0.01 * c[0] + 0.02 * c[1] - 0.005 * c[2]) as f32);
                }
            }
        }
        let out = interpolate_volume(&v, 4).unwrap();
        for iz in 0..out.dims[2] {
            for iy in 0..out.dims[1] {
                for ix in 0..out.dims[0] {
                    let c = out.voxel_center(ix, iy, iz);
                    let want = 0.5 + 0.01 * c[0] + 0.02 * c[1] - 0.005 * c[2];
                    assert_abs_diff_eq!(out.get(ix, iy, iz) as f64, want, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn empty_volume_projects_to_zero() {
        let v = Volume::centered_cube(11, 1.0).unwrap();
        let img = project_region(&v, &head_on(500.0), 0.5, 500.0, 500.0, 24, 24).unwrap();
        assert!(img.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn homogeneous_cube_central_ray_integral() {
        // 100 mm hull of mu = 0.02/mm: analytic integral 2.0.
        let v = cube_volume(0.02);
        let img = project_region(&v, &head_on(532.0), 0.5, 512.0, 512.0, 1, 1).unwrap();
        assert!(
            (img.get(0, 0) - 2.0).abs() < 0.02,
            "integral {} not within 1% of 2.0",
            img.get(0, 0)
        );
    }

    #[test]
    fn rotated_cube_diagonal_ray_integral() {
        // Arrangement rotated 45 deg about z: the central ray crosses the
        // square section along its diagonal, path 100*sqrt(2).
        let v = cube_volume(0.02);
        let setup = ProjectionSetup::new(
            ProjectionGeometry::default_c_arm(),
            532.0,
            (0.0, 0.0),
            [45.0, 0.0, 0.0],
        )
        .unwrap();
        let img = project_region(&v, &setup, 0.5, 512.0, 512.0, 1, 1).unwrap();
        let want = 0.02 * 100.0 * std::f64::consts::SQRT_2;
        assert!(
            (img.get(0, 0) - want).abs() / want < 0.01,
            "integral {} not within 1% of {}",
            img.get(0, 0),
            want
        );
    }

    #[test]
    fn superposition_of_disjoint_halves() {
        let full = crate::phantom::make_phantom(crate::phantom::PhantomPreset::LayeredSlab, 0);
        let mut upper = full.clone();
        let mut lower = full.clone();
        for iz in 0..full.dims[2] {
            for iy in 0..full.dims[1] {
                for ix in 0..full.dims[0] {
                    if iz < full.dims[2] / 2 {
                        upper.set(ix, iy, iz, 0.0);
                    } else {
                        lower.set(ix, iy, iz, 0.0);
                    }
                }
            }
        }
        let setup = head_on(500.0);
        let a = project_region(&full, &setup, 0.75, 400.0, 400.0, 32, 32).unwrap();
        let b = project_region(&upper, &setup, 0.75, 400.0, 400.0, 32, 32).unwrap();
        let c = project_region(&lower, &setup, 0.75, 400.0, 400.0, 32, 32).unwrap();
        let scale = a.data().iter().cloned().fold(0.0, f64::max).max(1e-12);
        for i in 0..a.data().len() {
            let sum = b.data()[i] + c.data()[i];
            assert!(
                (a.data()[i] - sum).abs() / scale < 1e-6,
                "superposition violated at {i}: {} vs {}",
                a.data()[i],
                sum
            );
        }
    }

    #[test]
    fn projection_is_linear_in_attenuation() {
        let v = crate::phantom::make_phantom(crate::phantom::PhantomPreset::ShellSphere, 0);
        let mut v2 = v.clone();
        for x in &mut v2.data {
            *x *= 2.0;
        }
        let setup = head_on(450.0);
        let a = project_region(&v, &setup, 0.75, 480.0, 480.0, 16, 16).unwrap();
        let b = project_region(&v2, &setup, 0.75, 480.0, 480.0, 16, 16).unwrap();
        for i in 0..a.data().len() {
            assert_abs_diff_eq!(2.0 * a.data()[i], b.data()[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn halving_step_converges() {
        let v = crate::phantom::make_phantom(crate::phantom::PhantomPreset::ShellSphere, 0);
        let setup = head_on(500.0);
        let render = |step: f64| project_region(&v, &setup, step, 440.0, 440.0, 48, 48).unwrap();
        let coarse = render(2.0);
        let mid = render(1.0);
        let fine = render(0.5);
        let max_diff = |a: &Image2, b: &Image2| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let d1 = max_diff(&coarse, &mid);
        let d2 = max_diff(&mid, &fine);
        assert!(d2 <= d1 * 1.05, "no first-order convergence: {d1} then {d2}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let v = crate::phantom::make_phantom(crate::phantom::PhantomPreset::PerlinBone, 3);
        let setup = head_on(500.0);
        let a = project_region(&v, &setup, 0.75, 450.0, 450.0, 32, 32).unwrap();
        let b = project_region(&v, &setup, 0.75, 450.0, 450.0, 32, 32).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn delta_rendering_matches_full_rerender() {
        // Full(modified) == Full(pristine) + Delta, sample for sample.
        let pristine = crate::phantom::make_phantom(crate::phantom::PhantomPreset::ShellSphere, 1);
        let mut modified = pristine.clone();
        let mesh = make_instrument(InstrumentKind::Screw, 0.0).unwrap();
        let out = voxelize_override(&mut modified, &mesh, 0.5);
        assert!(!out.writes.is_empty());
        let [nx, ny, _] = modified.dims;
        let (mut blo, mut bhi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for w in &out.writes {
            let ix = w.index % nx;
            let iy = (w.index / nx) % ny;
            let iz = w.index / (nx * ny);
            let c = modified.voxel_center(ix, iy, iz);
            for a in 0..3 {
                blo[a] = blo[a].min(c[a] - modified.spacing_mm[a]);
                bhi[a] = bhi[a].max(c[a] + modified.spacing_mm[a]);
            }
        }
        let setup = head_on(544.0);
        let (x0, y0, w, h) = (470.0, 480.0, 80, 60);
        let full_mod = project_region(&modified, &setup, 0.75, x0, y0, w, h).unwrap();
        let base = project_region(&pristine, &setup, 0.75, x0, y0, w, h).unwrap();
        let delta =
            project_region_delta(&modified, &pristine, &setup, 0.75, x0, y0, w, h, blo, bhi)
                .unwrap();
        let scale = full_mod.data().iter().cloned().fold(0.0, f64::max).max(1.0);
        let mut nonzero = 0;
        for i in 0..full_mod.data().len() {
            let recombined = base.data()[i] + delta.data()[i];
            assert!(
                (full_mod.data()[i] - recombined).abs() / scale < 1e-12,
                "pixel {i}: {} vs {}",
                full_mod.data()[i],
                recombined
            );
            if delta.data()[i] != 0.0 {
                nonzero += 1;
            }
        }
        assert!(nonzero > 0, "instrument must cast a footprint");
        // An empty box yields an all-zero delta.
        let empty = project_region_delta(
            &modified,
            &pristine,
            &setup,
            0.75,
            x0,
            y0,
            w,
            h,
            [1.0, 1.0, 1.0],
            [0.0, 0.0, 0.0],
        )
        .unwrap();
        assert!(empty.data().iter().all(|&v| v == 0.0));
        // Grid mismatch is rejected.
        let other = Volume::centered_cube(11, 1.0).unwrap();
        assert!(project_region_delta(
            &other, &pristine, &setup, 0.75, x0, y0, w, h, blo, bhi
        )
        .is_err());
    }

    #[test]
    fn instrument_centroid_matches_projected_origin() {
        // Screw at the world origin, axis in the detector plane: the
        // intensity centroid of its rendered footprint must agree with the
        // projected instrument position to within a pixel.
        let mesh = make_instrument(InstrumentKind::Screw, 0.0).unwrap();
        let mut vol = Volume::centered_cube(49, 0.25).unwrap();
        let out = voxelize_override(&mut vol, &mesh, 1.0);
        assert!(!out.writes.is_empty());
        let setup = head_on(532.0);
        let img = project_region(&vol, &setup, 0.125, 472.0, 472.0, 80, 80).unwrap();
        let (cx, cy) = img.centroid().expect("instrument visible");
        let p = project_point(&setup, [0.0, 0.0, 0.0]).unwrap();
        assert!(
            (cx + 472.0 - p.pixel[0]).abs() < 1.0,
            "centroid x {} vs projection {}",
            cx + 472.0,
            p.pixel[0]
        );
        assert!(
            (cy + 472.0 - p.pixel[1]).abs() < 1.0,
            "centroid y {} vs projection {}",
            cy + 472.0,
            p.pixel[1]
        );
    }
}

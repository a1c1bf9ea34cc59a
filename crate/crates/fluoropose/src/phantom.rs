//! Attenuation volumes and procedural phantoms.
//!
//! A [`Volume`] is a dense grid of linear attenuation coefficients in
//! 1/mm, stored x-fastest as `f32`. The world position of voxel
//! `(0, 0, 0)` is `origin_mm`, referring to the voxel *center*; the grid
//! of voxel centers therefore spans `origin .. origin + (dims - 1) *
//! spacing`.
//!
//! Three procedural presets stand in for patient anatomy: a hollow
//! bone-like shell sphere, a fixed layered slab, and a Perlin-noise
//! trabecular block.

use noise::{NoiseFn, Perlin};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense attenuation grid, values in 1/mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// World coordinates of the center of voxel `(0, 0, 0)`, mm.
    pub origin_mm: [f64; 3],
    /// Attenuation values, x-fastest: `data[ix + nx * (iy + ny * iz)]`.
    pub data: Vec<f32>,
}

/// Volume metadata as serialized next to the raw voxel payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl Volume {
    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("volume with empty axis".into()));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter(
                "voxel spacing must be positive".into(),
            ));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        })
    }

    /// Cube of `n` voxels per axis with isotropic spacing, centered on the
    /// world origin.
    pub fn centered_cube(n: usize, spacing_mm: f64) -> Result<Self> {
        let half = (n as f64 - 1.0) / 2.0 * spacing_mm;
        Self::zeros(
            [n, n, n],
            [spacing_mm; 3],
            [-half, -half, -half],
        )
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.dims[0] && iy < self.dims[1] && iz < self.dims[2]);
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.data[self.index(ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, value: f32) {
        let i = self.index(ix, iy, iz);
        self.data[i] = value;
    }

    /// World coordinates of a voxel center.
    #[inline]
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + ix as f64 * self.spacing_mm[0],
            self.origin_mm[1] + iy as f64 * self.spacing_mm[1],
            self.origin_mm[2] + iz as f64 * self.spacing_mm[2],
        ]
    }

    /// Continuous voxel coordinates of a world point.
    #[inline]
    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin_mm[0]) / self.spacing_mm[0],
            (p[1] - self.origin_mm[1]) / self.spacing_mm[1],
            (p[2] - self.origin_mm[2]) / self.spacing_mm[2],
        ]
    }

    /// Axis-aligned bounding box of the voxel-center grid:
    /// `[origin, origin + (dims - 1) * spacing]`.
    pub fn center_hull(&self) -> ([f64; 3], [f64; 3]) {
        let max = [
            self.origin_mm[0] + (self.dims[0] - 1) as f64 * self.spacing_mm[0],
            self.origin_mm[1] + (self.dims[1] - 1) as f64 * self.spacing_mm[1],
            self.origin_mm[2] + (self.dims[2] - 1) as f64 * self.spacing_mm[2],
        ];
        (self.origin_mm, max)
    }

    /// Trilinear interpolation at a world point; zero outside the
    /// voxel-center hull.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let v = self.world_to_voxel(p);
        let [nx, ny, nz] = self.dims;
        for (c, &n) in v.iter().zip(self.dims.iter()) {
            if !(*c >= 0.0 && *c <= (n - 1) as f64) {
                return 0.0;
            }
        }
        // Clamp the base cell so points exactly on the far face still
        // interpolate inside the last cell.
        let ix = (v[0].floor() as usize).min(nx.saturating_sub(2));
        let iy = (v[1].floor() as usize).min(ny.saturating_sub(2));
        let iz = (v[2].floor() as usize).min(nz.saturating_sub(2));
        let fx = v[0] - ix as f64;
        let fy = v[1] - iy as f64;
        let fz = v[2] - iz as f64;
        let (jx, jy, jz) = (
            (ix + 1).min(nx - 1),
            (iy + 1).min(ny - 1),
            (iz + 1).min(nz - 1),
        );
        let c000 = self.get(ix, iy, iz) as f64;
        let c100 = self.get(jx, iy, iz) as f64;
        let c010 = self.get(ix, jy, iz) as f64;
        let c110 = self.get(jx, jy, iz) as f64;
        let c001 = self.get(ix, iy, jz) as f64;
        let c101 = self.get(jx, iy, jz) as f64;
        let c011 = self.get(ix, jy, jz) as f64;
        let c111 = self.get(jx, jy, jz) as f64;
        let c00 = c000 * (1.0 - fx) + c100 * fx;
        let c10 = c010 * (1.0 - fx) + c110 * fx;
        let c01 = c001 * (1.0 - fx) + c101 * fx;
        let c11 = c011 * (1.0 - fx) + c111 * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
        }
    }
}

/// Built-in procedural phantoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomPreset {
    /// Hollow sphere: cortical-like shell around marrow-like interior.
    ShellSphere,
    /// Horizontal slab with a fixed cycle of attenuation layers along z.
    LayeredSlab,
    /// Perlin-noise block mimicking trabecular structure (seeded).
    PerlinBone,
}

impl PhantomPreset {
    pub const ALL: [PhantomPreset; 3] = [
        PhantomPreset::ShellSphere,
        PhantomPreset::LayeredSlab,
        PhantomPreset::PerlinBone,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PhantomPreset::ShellSphere => "shell-sphere",
            PhantomPreset::LayeredSlab => "layered-slab",
            PhantomPreset::PerlinBone => "perlin-bone",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::UnknownPreset(name.into()))
    }
}

/// Default phantom grid: 64 voxels per axis at 1.5 mm spacing (96 mm cube)
/// centered on the world origin.
pub const PHANTOM_DIM: usize = 64;
pub const PHANTOM_SPACING_MM: f64 = 1.5;

/// Build one of the procedural phantoms. The seed only affects
/// [`PhantomPreset::PerlinBone`]; the other presets are deterministic by
/// construction.
pub fn make_phantom(preset: PhantomPreset, seed: u64) -> Volume {
    let mut vol = Volume::centered_cube(PHANTOM_DIM, PHANTOM_SPACING_MM)
        .expect("preset grid is valid");
    match preset {
        PhantomPreset::ShellSphere => fill_shell_sphere(&mut vol),
        PhantomPreset::LayeredSlab => fill_layered_slab(&mut vol),
        PhantomPreset::PerlinBone => fill_perlin_bone(&mut vol, seed),
    }
    vol
}

/// Shell sphere: outer radius 40 mm, shell thickness 6 mm. Shell
/// attenuation 0.05/mm, interior 0.01/mm, outside air (0).
fn fill_shell_sphere(vol: &mut Volume) {
    const R_OUTER: f64 = 40.0;
    const R_INNER: f64 = 34.0;
    for iz in 0..vol.dims[2] {
        for iy in 0..vol.dims[1] {
            for ix in 0..vol.dims[0] {
                let c = vol.voxel_center(ix, iy, iz);
                let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                let mu = if r <= R_INNER {
                    0.01
                } else if r <= R_OUTER {
                    0.05
                } else {
                    0.0
                };
                vol.set(ix, iy, iz, mu);
            }
        }
    }
}

/// Layered slab: within |x|, |y|, |z| <= 40 mm, 8 mm layers along z cycle
/// through attenuations {0.04, 0.01, 0.06, 0.02}/mm. Seed-independent.
fn fill_layered_slab(vol: &mut Volume) {
    const HALF: f64 = 40.0;
    const LAYER_MM: f64 = 8.0;
    const MUS: [f32; 4] = [0.04, 0.01, 0.06, 0.02];
    for iz in 0..vol.dims[2] {
        for iy in 0..vol.dims[1] {
            for ix in 0..vol.dims[0] {
                let c = vol.voxel_center(ix, iy, iz);
                let inside = c[0].abs() <= HALF && c[1].abs() <= HALF && c[2].abs() <= HALF;
                let mu = if inside {
                    let layer = ((c[2] + HALF) / LAYER_MM).floor() as usize;
                    MUS[layer % MUS.len()]
                } else {
                    0.0
                };
                vol.set(ix, iy, iz, mu);
            }
        }
    }
}

/// Perlin block: inside a 44 mm sphere, threshold band-limited 3-D noise
/// into bone-like (0.06/mm) vs marrow-like (0.01/mm) regions with a smooth
/// transition. The noise field is fully determined by the seed.
fn fill_perlin_bone(vol: &mut Volume, seed: u64) {
    const R: f64 = 44.0;
    const FREQ: f64 = 0.07; // cycles per mm
    let perlin = Perlin::new(seed as u32);
    for iz in 0..vol.dims[2] {
        for iy in 0..vol.dims[1] {
            for ix in 0..vol.dims[0] {
                let c = vol.voxel_center(ix, iy, iz);
                let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                let mu = if r <= R {
                    let n = perlin.get([c[0] * FREQ, c[1] * FREQ, c[2] * FREQ]);
                    0.01 + 0.05 * smoothstep(0.05, 0.35, n)
                } else {
                    0.0
                };
                vol.set(ix, iy, iz, mu as f32);
            }
        }
    }
}

/// Hermite smoothstep of `x` between `lo` and `hi`.
fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

//! Voxelization of instrument meshes into attenuation volumes.
//!
//! A voxel belongs to the instrument when its center lies inside any of
//! the mesh components (centers-inside rule). Containment is decided by
//! ray-crossing parity along a fixed, deliberately non-axis-aligned
//! direction, tested independently per component — which is why
//! components must be closed and must not share vertices. Written voxels
//! are recorded so the edit can be undone exactly.

use rayon::prelude::*;

use crate::mesh::{InstrumentMesh, TriMesh};
use crate::phantom::Volume;

/// Default attenuation for instrument metal, 1/mm.
pub const INSTRUMENT_MU_PER_MM: f32 = 0.5;

/// One overwritten voxel with its previous value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelWrite {
    pub index: usize,
    pub previous: f32,
}

/// Result of voxelizing a mesh into a volume.
#[derive(Debug, Clone)]
pub struct VoxelizeOutcome {
    /// Overwritten voxels in ascending index order.
    pub writes: Vec<VoxelWrite>,
    /// True when the mesh bounding box does not intersect the volume at
    /// all (nothing was written; usually a setup mistake worth flagging).
    pub outside_volume: bool,
}

/// Fixed ray direction for parity tests. Not aligned with any axis or
/// any diagonal, so rays through voxel centers do not graze mesh edges.
const RAY_DIR: [f64; 3] = [0.675_290_906_444_449, 0.509_754_672_430_2, 0.532_817_867_893_97];

/// Overwrite every voxel whose center lies inside the mesh with `mu`.
///
/// Overlapping tissue or bone is replaced, not accumulated: metal
/// dominates. Returns the write list (for undo) plus an outside flag.
pub fn voxelize_override(vol: &mut Volume, mesh: &InstrumentMesh, mu: f32) -> VoxelizeOutcome {
    let (mlo, mhi) = mesh.bounding_box();
    let (vlo, vhi) = vol.center_hull();
    if (0..3).any(|c| mhi[c] < vlo[c] || mlo[c] > vhi[c]) {
        return VoxelizeOutcome {
            writes: Vec::new(),
            outside_volume: true,
        };
    }

    // Voxel index range overlapping the mesh bounding box.
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for c in 0..3 {
        let a = ((mlo[c] - vol.origin_mm[c]) / vol.spacing_mm[c]).floor();
        let b = ((mhi[c] - vol.origin_mm[c]) / vol.spacing_mm[c]).ceil();
        lo[c] = a.max(0.0) as usize;
        hi[c] = (b.max(0.0) as usize).min(vol.dims[c] - 1);
    }

    let comps: Vec<ComponentTester> = mesh.components.iter().map(ComponentTester::new).collect();

    // Parallel over z-slabs; each slab emits its writes in index order, so
    // the concatenation is order-independent of the schedule.
    let slabs: Vec<Vec<usize>> = (lo[2]..=hi[2])
        .into_par_iter()
        .map(|iz| {
            let mut hits = Vec::new();
            for iy in lo[1]..=hi[1] {
                for ix in lo[0]..=hi[0] {
                    let p = vol.voxel_center(ix, iy, iz);
                    if comps.iter().any(|c| c.contains(p)) {
                        hits.push(vol.index(ix, iy, iz));
                    }
                }
            }
            hits
        })
        .collect();

    let mut writes = Vec::new();
    for slab in slabs {
        for index in slab {
            writes.push(VoxelWrite {
                index,
                previous: vol.data[index],
            });
            vol.data[index] = mu;
        }
    }
    VoxelizeOutcome {
        writes,
        outside_volume: false,
    }
}

/// Restore the voxels recorded by [`voxelize_override`].
pub fn undo_writes(vol: &mut Volume, writes: &[VoxelWrite]) {
    for w in writes.iter().rev() {
        vol.data[w.index] = w.previous;
    }
}

/// Containment tester for one closed component.
struct ComponentTester {
    bbox: ([f64; 3], [f64; 3]),
    tris: Vec<[[f64; 3]; 3]>,
}

impl ComponentTester {
    fn new(mesh: &TriMesh) -> Self {
        let tris = mesh
            .faces
            .iter()
            .map(|f| [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]])
            .collect();
        Self {
            bbox: mesh.bounding_box(),
            tris,
        }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        let (lo, hi) = self.bbox;
        if (0..3).any(|c| p[c] < lo[c] || p[c] > hi[c]) {
            return false;
        }
        let mut crossings = 0u32;
        for t in &self.tris {
            if ray_hits_triangle(p, RAY_DIR, t) {
                crossings += 1;
            }
        }
        crossings % 2 == 1
    }
}

/// Watertight-enough ray/triangle test (positive-t crossings only).
fn ray_hits_triangle(origin: [f64; 3], dir: [f64; 3], tri: &[[f64; 3]; 3]) -> bool {
    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let pv = cross(dir, e2);
    let det = dot(e1, pv);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let tv = sub(origin, tri[0]);
    let u = dot(tv, pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = cross(tv, e1);
    let v = dot(dir, qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    dot(e2, qv) * inv > 0.0
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

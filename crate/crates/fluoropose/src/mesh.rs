//! Watertight triangle meshes for the three simulated instruments.
//!
//! Every instrument is a list of closed components; components may
//! overlap in space but never share vertices, so each one can be tested
//! for containment independently. All meshes are built in a local frame
//! with the instrument axis along +X and the tracked origin at (0, 0, 0).

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Closed, consistently oriented triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// True when every undirected edge is shared by exactly two faces
    /// with opposite orientation.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(usize, usize), i64> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a == b {
                    return false;
                }
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += if a < b { 1 } else { -1 };
                // Count occurrences too: store balance in low bits is
                // fragile, so track totals separately below.
            }
        }
        // Balanced orientation (sum 0) guarantees each undirected edge has
        // as many a->b as b->a half-edges; additionally require exactly 2.
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges.values().all(|&bal| bal == 0) && counts.values().all(|&c| c == 2)
    }

    /// Signed enclosed volume by the divergence theorem. Positive for
    /// outward-oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        let mut v6 = 0.0;
        for f in &self.faces {
            let a = Vector3::from(self.vertices[f[0]]);
            let b = Vector3::from(self.vertices[f[1]]);
            let c = Vector3::from(self.vertices[f[2]]);
            v6 += a.dot(&b.cross(&c));
        }
        v6 / 6.0
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for c in 0..3 {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
        (lo, hi)
    }
}

/// An instrument as a set of disjoint closed components.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMesh {
    pub components: Vec<TriMesh>,
}

impl InstrumentMesh {
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in &self.components {
            let (clo, chi) = c.bounding_box();
            for k in 0..3 {
                lo[k] = lo[k].min(clo[k]);
                hi[k] = hi[k].max(chi[k]);
            }
        }
        (lo, hi)
    }

    pub fn bounding_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    }

    pub fn vertex_count(&self) -> usize {
        self.components.iter().map(|c| c.vertices.len()).sum()
    }
}

/// The three simulated instruments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstrumentKind {
    /// Headless bone screw; tracked origin at the screw center.
    Screw,
    /// Drill bit; tracked origin at the tip, body behind it.
    Drill,
    /// Drilling robot: rigid front segment plus a bendable rear segment
    /// joined by a spherical joint at the tracked origin.
    Robot,
}

impl InstrumentKind {
    pub const ALL: [InstrumentKind; 3] = [
        InstrumentKind::Screw,
        InstrumentKind::Drill,
        InstrumentKind::Robot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InstrumentKind::Screw => "screw",
            InstrumentKind::Drill => "drill",
            InstrumentKind::Robot => "robot",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownPreset(name.into()))
    }

    /// True when the instrument body extends behind the tracked origin,
    /// so image patches should extend backwards instead of forwards. The
    /// drill is tracked at its tip; the robot at the joint ahead of its
    /// long rear segment.
    pub fn mirrored(&self) -> bool {
        matches!(self, InstrumentKind::Drill | InstrumentKind::Robot)
    }
}

/// Circumferential tessellation of all round primitives.
const SEGMENTS: usize = 24;
/// Polar tessellation of spheres.
const STACKS: usize = 12;
/// Shaft radius shared by all instruments (3 mm diameter).
const SHAFT_RADIUS: f64 = 1.5;

/// Screw length, chosen so the bounding-box diagonal is exactly 6.5 mm.
pub fn screw_length() -> f64 {
    // diag^2 = L^2 + 3^2 + 3^2 = 6.5^2
    (6.5f64 * 6.5 - 18.0).sqrt()
}

/// Total drill length (tip to shank end).
pub const DRILL_LENGTH: f64 = 12.0;
/// Length of the drill's conical tip.
const DRILL_TIP_LENGTH: f64 = 3.0;

/// Radius of the robot's joint sphere.
pub const ROBOT_JOINT_RADIUS: f64 = 2.0;
/// Length of the bendable rear segment.
pub const ROBOT_REAR_LENGTH: f64 = 10.0;
/// Maximum magnitude of the rear-segment bend, degrees.
pub const ROBOT_MAX_BEND_DEG: f64 = 30.0;

/// Front segment length, chosen so the rigid front part (sphere plus
/// front cylinder) has a bounding-box diagonal of exactly 13.15 mm.
pub fn robot_front_length() -> f64 {
    // diag^2 = (L + r_joint)^2 + 4^2 + 4^2 = 13.15^2
    (13.15f64 * 13.15 - 32.0).sqrt() - ROBOT_JOINT_RADIUS
}

/// Build an instrument mesh in its local frame.
///
/// `bend_deg` rotates the robot's rear segment about the local Z axis and
/// must lie in `[-30, 30]`; the other instruments ignore it.
pub fn make_instrument(kind: InstrumentKind, bend_deg: f64) -> Result<InstrumentMesh> {
    match kind {
        InstrumentKind::Screw => {
            let half = screw_length() / 2.0;
            Ok(InstrumentMesh {
                components: vec![cylinder(SHAFT_RADIUS, -half, half)],
            })
        }
        InstrumentKind::Drill => Ok(InstrumentMesh {
            components: vec![tipped_shaft(SHAFT_RADIUS, DRILL_TIP_LENGTH, DRILL_LENGTH)],
        }),
        InstrumentKind::Robot => {
            if !(-ROBOT_MAX_BEND_DEG..=ROBOT_MAX_BEND_DEG).contains(&bend_deg) {
                return Err(Error::InvalidParameter(format!(
                    "robot bend must lie in [-{ROBOT_MAX_BEND_DEG}, {ROBOT_MAX_BEND_DEG}] deg, got {bend_deg}"
                )));
            }
            let joint = uv_sphere([0.0; 3], ROBOT_JOINT_RADIUS);
            let front = cylinder(SHAFT_RADIUS, 0.0, robot_front_length());
            let mut rear = cylinder(SHAFT_RADIUS, -ROBOT_REAR_LENGTH, 0.0);
            let rot = nalgebra::Rotation3::from_axis_angle(
                &Vector3::z_axis(),
                bend_deg.to_radians(),
            );
            for v in &mut rear.vertices {
                let p = rot * Point3::new(v[0], v[1], v[2]);
                *v = [p.x, p.y, p.z];
            }
            Ok(InstrumentMesh {
                components: vec![joint, front, rear],
            })
        }
    }
}

/// Rigidly transform every vertex of an instrument mesh.
pub fn transform_mesh(mesh: &InstrumentMesh, iso: &Isometry3<f64>) -> InstrumentMesh {
    let components = mesh
        .components
        .iter()
        .map(|c| TriMesh {
            vertices: c
                .vertices
                .iter()
                .map(|v| {
                    let p = iso * Point3::new(v[0], v[1], v[2]);
                    [p.x, p.y, p.z]
                })
                .collect(),
            faces: c.faces.clone(),
        })
        .collect();
    InstrumentMesh { components }
}

fn ring_vertices(x: f64, radius: f64, out: &mut Vec<[f64; 3]>) -> usize {
    let start = out.len();
    for k in 0..SEGMENTS {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / SEGMENTS as f64;
        out.push([x, radius * theta.cos(), radius * theta.sin()]);
    }
    start
}

/// Closed cylinder along +X from `x0` to `x1` (`x0 < x1`).
fn cylinder(radius: f64, x0: f64, x1: f64) -> TriMesh {
    let mut vertices = Vec::new();
    let r0 = ring_vertices(x0, radius, &mut vertices);
    let r1 = ring_vertices(x1, radius, &mut vertices);
    let c0 = vertices.len();
    vertices.push([x0, 0.0, 0.0]);
    let c1 = vertices.len();
    vertices.push([x1, 0.0, 0.0]);

    let mut faces = Vec::new();
    for a in 0..SEGMENTS {
        let b = (a + 1) % SEGMENTS;
        // Side wall, outward CCW.
        faces.push([r0 + a, r0 + b, r1 + b]);
        faces.push([r0 + a, r1 + b, r1 + a]);
        // End caps: -X normal at x0, +X normal at x1.
        faces.push([c0, r0 + b, r0 + a]);
        faces.push([c1, r1 + a, r1 + b]);
    }
    TriMesh { vertices, faces }
}

/// Closed shaft of `total_len` with a conical tip: apex at the origin,
/// cone base at `-tip_len`, shank end at `-total_len`.
fn tipped_shaft(radius: f64, tip_len: f64, total_len: f64) -> TriMesh {
    let mut vertices = Vec::new();
    let apex = vertices.len();
    vertices.push([0.0, 0.0, 0.0]);
    let ra = ring_vertices(-tip_len, radius, &mut vertices);
    let rb = ring_vertices(-total_len, radius, &mut vertices);
    let back = vertices.len();
    vertices.push([-total_len, 0.0, 0.0]);

    let mut faces = Vec::new();
    for a in 0..SEGMENTS {
        let b = (a + 1) % SEGMENTS;
        // Cone flank (apex is the +X end of the cone).
        faces.push([apex, ra + a, ra + b]);
        // Shaft wall from rb (lower x) to ra (higher x).
        faces.push([rb + a, rb + b, ra + b]);
        faces.push([rb + a, ra + b, ra + a]);
        // Back cap, -X normal.
        faces.push([back, rb + b, rb + a]);
    }
    TriMesh { vertices, faces }
}

/// UV sphere with poles on the X axis.
fn uv_sphere(center: [f64; 3], radius: f64) -> TriMesh {
    let mut vertices = Vec::new();
    let top = vertices.len();
    vertices.push([center[0] + radius, center[1], center[2]]);
    let mut rings = Vec::new();
    for i in 1..STACKS {
        let phi = std::f64::consts::PI * i as f64 / STACKS as f64;
        let x = center[0] + radius * phi.cos();
        let rr = radius * phi.sin();
        rings.push(vertices.len());
        for k in 0..SEGMENTS {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / SEGMENTS as f64;
            vertices.push([x, center[1] + rr * theta.cos(), center[2] + rr * theta.sin()]);
        }
    }
    let bottom = vertices.len();
    vertices.push([center[0] - radius, center[1], center[2]]);

    let mut faces = Vec::new();
    for a in 0..SEGMENTS {
        let b = (a + 1) % SEGMENTS;
        // Top fan (apex at the +X pole).
        faces.push([top, rings[0] + a, rings[0] + b]);
        // Bands: ring i is at higher x than ring i+1.
        for w in rings.windows(2) {
            let (hi, lo) = (w[0], w[1]);
            faces.push([lo + a, lo + b, hi + b]);
            faces.push([lo + a, hi + b, hi + a]);
        }
        // Bottom fan, -X normal.
        faces.push([bottom, rings[STACKS - 2] + b, rings[STACKS - 2] + a]);
    }
    TriMesh { vertices, faces }
}

//! Perspective projection setup: where the source, detector and object
//! sit relative to each other, and how world points map to detector
//! pixels.
//!
//! The canonical arrangement looks down +X: the projection normal is
//! `n = R * X`, the detector column axis is `u = R * Y` and the row axis
//! is `v = R * Z`, with `R` the Z-Y-Z Euler rotation of the setup applied
//! about the object center (the world origin). The source sits at
//! `-d_SOD * n - o`, where the polar offset `o = r (cos phi * u + sin phi
//! * v)` shifts the whole source-detector pair sideways; the central ray
//! hits the detector center pixel `(W/2, H/2)`.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ProjectionGeometry;

/// Full projection arrangement for one radiograph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSetup {
    pub geom: ProjectionGeometry,
    /// Source-to-object distance along the projection normal, mm.
    pub source_object_distance_mm: f64,
    /// Polar in-plane displacement of the arrangement: (radius mm,
    /// azimuth degrees) in the (u, v) detector basis.
    pub object_offset: (f64, f64),
    /// Z-Y-Z Euler angles, degrees, rotating the arrangement about the
    /// object center.
    pub rotations_deg: [f64; 3],
}

/// Cached orthonormal frame of a setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionFrame {
    /// Source position, mm.
    pub source: Vector3<f64>,
    /// Unit projection normal (source toward detector).
    pub normal: Vector3<f64>,
    /// Unit detector column (+pixel x) direction.
    pub u: Vector3<f64>,
    /// Unit detector row (+pixel y) direction.
    pub v: Vector3<f64>,
    /// Continuous pixel coordinates of the central ray.
    pub center_px: [f64; 2],
}

impl ProjectionSetup {
    pub fn new(
        geom: ProjectionGeometry,
        source_object_distance_mm: f64,
        object_offset: (f64, f64),
        rotations_deg: [f64; 3],
    ) -> Result<Self> {
        if !(source_object_distance_mm > 0.0
            && source_object_distance_mm < geom.source_detector_distance_mm)
        {
            return Err(Error::InvalidParameter(format!(
                "source-object distance must lie in (0, {}), got {}",
                geom.source_detector_distance_mm, source_object_distance_mm
            )));
        }
        if object_offset.0 < 0.0 {
            return Err(Error::InvalidParameter(
                "offset radius must be nonnegative".into(),
            ));
        }
        Ok(Self {
            geom,
            source_object_distance_mm,
            object_offset,
            rotations_deg,
        })
    }

    /// Head-on arrangement with the object centered at the given depth.
    pub fn head_on(geom: ProjectionGeometry, source_object_distance_mm: f64) -> Result<Self> {
        Self::new(geom, source_object_distance_mm, (0.0, 0.0), [0.0; 3])
    }

    /// The Z-Y-Z rotation of the arrangement.
    pub fn rotation(&self) -> Rotation3<f64> {
        let [a, b, c] = self.rotations_deg;
        Rotation3::from_axis_angle(&Vector3::z_axis(), a.to_radians())
            * Rotation3::from_axis_angle(&Vector3::y_axis(), b.to_radians())
            * Rotation3::from_axis_angle(&Vector3::z_axis(), c.to_radians())
    }

    /// Resolve the source position and detector axes.
    pub fn frame(&self) -> ProjectionFrame {
        let rot = self.rotation();
        let normal = rot * Vector3::x();
        let u = rot * Vector3::y();
        let v = rot * Vector3::z();
        let (r, phi) = self.object_offset;
        let phi = phi.to_radians();
        let offset = u * (r * phi.cos()) + v * (r * phi.sin());
        let source = -normal * self.source_object_distance_mm - offset;
        ProjectionFrame {
            source,
            normal,
            u,
            v,
            center_px: [
                self.geom.detector_size[0] as f64 / 2.0,
                self.geom.detector_size[1] as f64 / 2.0,
            ],
        }
    }
}

impl ProjectionFrame {
    /// World position of a continuous detector pixel coordinate.
    pub fn pixel_to_world(&self, geom: &ProjectionGeometry, px: f64, py: f64) -> Vector3<f64> {
        let center = self.source + self.normal * geom.source_detector_distance_mm;
        center
            + self.u * ((px - self.center_px[0]) * geom.detector_pixel_spacing_mm)
            + self.v * ((py - self.center_px[1]) * geom.detector_pixel_spacing_mm)
    }
}

/// Projected point: continuous pixel position plus depth along the
/// projection normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub pixel: [f64; 2],
    pub depth_mm: f64,
}

/// Perspective-project a world point onto the detector.
pub fn project_point(setup: &ProjectionSetup, p: [f64; 3]) -> Result<ProjectedPoint> {
    let frame = setup.frame();
    project_point_with_frame(setup, &frame, p)
}

/// Same as [`project_point`] with a precomputed frame (hot loops).
pub fn project_point_with_frame(
    setup: &ProjectionSetup,
    frame: &ProjectionFrame,
    p: [f64; 3],
) -> Result<ProjectedPoint> {
    let rel = Vector3::from(p) - frame.source;
    let depth = rel.dot(&frame.normal);
    if depth <= 0.0 {
        return Err(Error::BehindSource(depth));
    }
    let mag = setup.geom.source_detector_distance_mm / depth;
    let spacing = setup.geom.detector_pixel_spacing_mm;
    Ok(ProjectedPoint {
        pixel: [
            frame.center_px[0] + mag * rel.dot(&frame.u) / spacing,
            frame.center_px[1] + mag * rel.dot(&frame.v) / spacing,
        ],
        depth_mm: depth,
    })
}

/// Extract the five-parameter pose of an instrument from its world-space
/// position and unit axis direction.
///
/// The forward angle comes from the axis component in the detector basis,
/// the projection angle from its component along the projection normal
/// (`sin tau = axis . normal`), and position/depth from [`project_point`].
pub fn pose_from_world(
    setup: &ProjectionSetup,
    frame: &ProjectionFrame,
    position: [f64; 3],
    axis: &Vector3<f64>,
) -> Result<crate::geometry::Pose> {
    let projected = project_point_with_frame(setup, frame, position)?;
    let au = axis.dot(&frame.u);
    let av = axis.dot(&frame.v);
    let an = axis.dot(&frame.normal).clamp(-1.0, 1.0);
    let alpha = av.atan2(au).to_degrees();
    let tau = an.asin().to_degrees();
    crate::geometry::Pose::new(
        projected.pixel[0],
        projected.pixel[1],
        alpha,
        tau,
        projected.depth_mm,
    )
}

/// Reconstruct the world position and axis direction encoded by a pose.
///
/// Inverse of [`pose_from_world`]. The axis has unit length; the roll
/// around it is unobservable from a pose and is not defined here.
pub fn world_from_pose(
    setup: &ProjectionSetup,
    frame: &ProjectionFrame,
    pose: &crate::geometry::Pose,
) -> ([f64; 3], Vector3<f64>) {
    let geom = &setup.geom;
    let lateral = geom.detector_pixel_spacing_mm * pose.depth_mm
        / geom.source_detector_distance_mm;
    let position = frame.source
        + frame.normal * pose.depth_mm
        + frame.u * ((pose.x - frame.center_px[0]) * lateral)
        + frame.v * ((pose.y - frame.center_px[1]) * lateral);
    let (sin_a, cos_a) = pose.alpha_deg.to_radians().sin_cos();
    let (sin_t, cos_t) = pose.tau_deg.to_radians().sin_cos();
    let axis = frame.u * (cos_t * cos_a) + frame.v * (cos_t * sin_a) + frame.normal * sin_t;
    ([position.x, position.y, position.z], axis)
}

/// Rigid placement of an instrument mesh realizing a pose.
///
/// The local +X axis maps to the pose's axis direction. Roll around the
/// axis is unobservable; it is fixed by aligning the local +Y with the
/// in-plane perpendicular `normal x axis`.
pub fn isometry_from_pose(
    setup: &ProjectionSetup,
    frame: &ProjectionFrame,
    pose: &crate::geometry::Pose,
) -> nalgebra::Isometry3<f64> {
    let (position, axis) = world_from_pose(setup, frame, pose);
    let y_axis = frame.normal.cross(&axis);
    let y_axis = if y_axis.norm() > 1e-12 {
        y_axis.normalize()
    } else {
        frame.u
    };
    let z_axis = axis.cross(&y_axis);
    let rot = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[
        axis, y_axis, z_axis,
    ]));
    nalgebra::Isometry3::from_parts(
        nalgebra::Translation3::new(position[0], position[1], position[2]),
        nalgebra::UnitQuaternion::from_rotation_matrix(&rot),
    )
}

/// Restricted image regions, given as planar polygons in world space.
///
/// These model parts of the image where the underlying volume data would
/// be missing (e.g. truncated above or below the scanned block); a
/// generated sample is valid only while the instrument stays clear of
/// both projected polygons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidityPolygons {
    /// Region above the usable block (empty = unrestricted).
    pub upper: Vec<[f64; 3]>,
    /// Region below the usable block (empty = unrestricted).
    pub lower: Vec<[f64; 3]>,
}

impl ValidityPolygons {
    /// No restricted regions; every projection is valid.
    pub fn none() -> Self {
        Self::default()
    }

    /// Restricted regions beyond `|world z| > half_extent_mm`, modeled as
    /// frontal walls (quads in the x = 0 plane) spanning `span_mm`
    /// laterally and extending 1000 mm past the usable block.
    pub fn slab(half_extent_mm: f64, span_mm: f64) -> Self {
        let wall = |z0: f64, z1: f64| {
            vec![
                [0.0, -span_mm, z0],
                [0.0, span_mm, z0],
                [0.0, span_mm, z1],
                [0.0, -span_mm, z1],
            ]
        };
        Self {
            upper: wall(half_extent_mm, half_extent_mm + 1000.0),
            lower: wall(-half_extent_mm, -half_extent_mm - 1000.0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty() && self.lower.is_empty()
    }
}

/// True when the projected instrument position keeps `margin_mm` clear of
/// both projected restricted polygons.
///
/// The margin converts to pixels at the instrument's own depth. A polygon
/// that projects to zero area, or with any vertex at or behind the
/// source, makes the whole projection invalid (returns false).
pub fn validity_check(
    setup: &ProjectionSetup,
    instrument_position: [f64; 3],
    polys: &ValidityPolygons,
    margin_mm: f64,
) -> bool {
    let frame = setup.frame();
    let Ok(instr) = project_point_with_frame(setup, &frame, instrument_position) else {
        return false;
    };
    let margin_px = margin_mm / (setup.geom.d2p() * instr.depth_mm);
    for poly in [&polys.upper, &polys.lower] {
        if poly.is_empty() {
            continue;
        }
        let mut projected = Vec::with_capacity(poly.len());
        for &v in poly {
            match project_point_with_frame(setup, &frame, v) {
                Ok(p) => projected.push(p.pixel),
                Err(_) => return false,
            }
        }
        if polygon_area(&projected) == 0.0 {
            return false;
        }
        if point_in_dilated_polygon(instr.pixel, &projected, margin_px) {
            return false;
        }
    }
    true
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    (twice / 2.0).abs()
}

/// Even-odd containment with the boundary counting as inside, extended
/// outward by `radius` pixels.
fn point_in_dilated_polygon(p: [f64; 2], poly: &[[f64; 2]], radius: f64) -> bool {
    if point_in_polygon(p, poly) {
        return true;
    }
    distance_to_polygon(p, poly) <= radius
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    // Even-odd ray crossing toward +x; points on an edge count as inside.
    if distance_to_polygon(p, poly) == 0.0 {
        return true;
    }
    let mut inside = false;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn distance_to_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        best = best.min(distance_to_segment(p, a, b));
    }
    best
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

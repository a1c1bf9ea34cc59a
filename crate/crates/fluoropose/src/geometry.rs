//! Instrument pose and its bidirectional mapping to image keypoints.
//!
//! A pose is the 5-tuple (x, y, α, τ, d): detector pixel position,
//! forward angle in the image plane, projection angle out of the image
//! plane, and depth from the source along the projection normal. Six
//! cross-shaped keypoints attached to the instrument project to the image
//! by a scaled rotation; fitting lines through the axis and perpendicular
//! subsets inverts that map geometrically.
//!
//! Pixel convention: x increases with the column index, y increases with
//! the row index, α is measured from +x toward +y.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalize an angle in degrees to `[0, 360)`.
pub fn normalize_angle_deg(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 when deg is a tiny negative number.
    if a >= 360.0 {
        a - 360.0
    } else {
        a
    }
}

/// Signed minimal difference `a - b` in degrees, in `(-180, 180]`.
pub fn angle_error_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Instrument pose with respect to a projection geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Detector column coordinate in pixels (continuous).
    pub x: f64,
    /// Detector row coordinate in pixels (continuous).
    pub y: f64,
    /// Forward angle in degrees, stored in `[0, 360)`.
    pub alpha_deg: f64,
    /// Projection angle in degrees, in `[-90, 90]`.
    pub tau_deg: f64,
    /// Distance from source to instrument along the projection normal, mm.
    pub depth_mm: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, alpha_deg: f64, tau_deg: f64, depth_mm: f64) -> Result<Self> {
        if !depth_mm.is_finite() || depth_mm <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "pose depth must be positive, got {depth_mm}"
            )));
        }
        if !(-90.0..=90.0).contains(&tau_deg) {
            return Err(Error::InvalidParameter(format!(
                "projection angle must lie in [-90, 90], got {tau_deg}"
            )));
        }
        if !x.is_finite() || !y.is_finite() || !alpha_deg.is_finite() {
            return Err(Error::InvalidParameter(
                "pose coordinates must be finite".into(),
            ));
        }
        Ok(Self {
            x,
            y,
            alpha_deg: normalize_angle_deg(alpha_deg),
            tau_deg,
            depth_mm,
        })
    }

    /// Position part as a 2-vector in pixels.
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Source/detector arrangement of the c-arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionGeometry {
    /// Source-detector distance in mm.
    pub source_detector_distance_mm: f64,
    /// Detector pixel spacing in mm/pixel.
    pub detector_pixel_spacing_mm: f64,
    /// Detector grid size in pixels, `[columns, rows]`.
    pub detector_size: [usize; 2],
}

impl ProjectionGeometry {
    pub fn new(
        source_detector_distance_mm: f64,
        detector_pixel_spacing_mm: f64,
        detector_size: [usize; 2],
    ) -> Result<Self> {
        if source_detector_distance_mm <= 0.0 || detector_pixel_spacing_mm <= 0.0 {
            return Err(Error::InvalidParameter(
                "source-detector distance and pixel spacing must be positive".into(),
            ));
        }
        if detector_size[0] == 0 || detector_size[1] == 0 {
            return Err(Error::InvalidParameter("empty detector".into()));
        }
        Ok(Self {
            source_detector_distance_mm,
            detector_pixel_spacing_mm,
            detector_size,
        })
    }

    /// Default mobile c-arm: 300 mm x 300 mm detector at 1024 x 1024 pixels,
    /// source-detector distance 1064 mm.
    pub fn default_c_arm() -> Self {
        Self {
            source_detector_distance_mm: 1064.0,
            detector_pixel_spacing_mm: 300.0 / 1024.0,
            detector_size: [1024, 1024],
        }
    }

    /// Detector-to-pixel scale `c_d2p = spacing / sdd`, in 1/pixel.
    #[inline]
    pub fn d2p(&self) -> f64 {
        self.detector_pixel_spacing_mm / self.source_detector_distance_mm
    }

    /// Pixels per millimeter for an object at the given depth.
    #[inline]
    pub fn px_per_mm_at_depth(&self, depth_mm: f64) -> f64 {
        1.0 / (self.d2p() * depth_mm)
    }

    /// Millimeters per pixel on the plane orthogonal to the projection
    /// normal at the given depth (inverse of `px_per_mm_at_depth`).
    #[inline]
    pub fn mm_per_px_at_depth(&self, depth_mm: f64) -> f64 {
        self.d2p() * depth_mm
    }
}

/// Fixed local placement of the six keypoints on the instrument, in mm.
///
/// The layout is cross-shaped: every point lies either on the main axis
/// (`y_key = 0`) or on the in-plane perpendicular (`x_key = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointLayout {
    /// Local coordinates `(x_key, y_key)` in mm, in a fixed order.
    pub points: [[f64; 2]; 6],
    /// Indices of points on the main axis (`y_key = 0`).
    pub axis_indices: Vec<usize>,
    /// Indices of points on the perpendicular (`x_key = 0`).
    pub perp_indices: Vec<usize>,
}

impl KeypointLayout {
    pub fn new(points: [[f64; 2]; 6]) -> Result<Self> {
        let mut axis_indices = Vec::new();
        let mut perp_indices = Vec::new();
        for (i, p) in points.iter().enumerate() {
            if p[1] == 0.0 {
                axis_indices.push(i);
            } else if p[0] == 0.0 {
                perp_indices.push(i);
            } else {
                return Err(Error::InvalidParameter(format!(
                    "keypoint {i} ({}, {}) is neither on the axis nor on the perpendicular",
                    p[0], p[1]
                )));
            }
        }
        if axis_indices.len() < 2 || perp_indices.len() < 2 {
            return Err(Error::InvalidParameter(
                "layout needs at least two axis points and two perpendicular points".into(),
            ));
        }
        let distinct = |idx: &[usize], c: usize| {
            idx.iter()
                .any(|&i| (points[i][c] - points[idx[0]][c]).abs() > 0.0)
        };
        if !distinct(&axis_indices, 0) || !distinct(&perp_indices, 1) {
            return Err(Error::InvalidParameter(
                "each subset needs two points with distinct lever arms".into(),
            ));
        }
        Ok(Self {
            points,
            axis_indices,
            perp_indices,
        })
    }

    /// Default cross: four axis points at x_key in {-3, -1, +1, +3} mm and
    /// two perpendicular points at y_key in {-2, +2} mm.
    pub fn default_cross() -> Self {
        Self::new([
            [-3.0, 0.0],
            [-1.0, 0.0],
            [1.0, 0.0],
            [3.0, 0.0],
            [0.0, -2.0],
            [0.0, 2.0],
        ])
        .expect("default layout is valid")
    }

    /// Layout mirrored on the instrument's Y-Z plane (x_key sign flip).
    /// Used for instruments whose body extends behind the tracked origin.
    pub fn mirrored(&self) -> Self {
        let mut points = self.points;
        for p in &mut points {
            p[0] = -p[0];
        }
        Self::new(points).expect("mirroring preserves validity")
    }

    /// Axis indices sorted by ascending `x_key`.
    fn axis_sorted(&self) -> Vec<usize> {
        let mut idx = self.axis_indices.clone();
        idx.sort_by(|&a, &b| self.points[a][0].total_cmp(&self.points[b][0]));
        idx
    }

    /// Perpendicular indices sorted by ascending `y_key`.
    fn perp_sorted(&self) -> Vec<usize> {
        let mut idx = self.perp_indices.clone();
        idx.sort_by(|&a, &b| self.points[a][1].total_cmp(&self.points[b][1]));
        idx
    }
}

/// Six keypoint positions on the image, in pixels, layout order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub points: [[f64; 2]; 6],
}

impl KeypointSet {
    pub fn new(points: [[f64; 2]; 6]) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "keypoint coordinates must be finite".into(),
            ));
        }
        Ok(Self { points })
    }
}

/// Project the layout keypoints of a pose onto the image plane.
///
/// Each point maps to `(x, y) + (1 / (c_d2p * d)) * R(alpha) *
/// (x_key * cos(tau), y_key)`.
pub fn keypoints_from_pose(
    pose: &Pose,
    layout: &KeypointLayout,
    geom: &ProjectionGeometry,
) -> Result<KeypointSet> {
    if pose.tau_deg.abs() >= 90.0 {
        return Err(Error::InvalidParameter(format!(
            "|tau| = {} deg foreshortens the axis to a point",
            pose.tau_deg.abs()
        )));
    }
    let scale = geom.px_per_mm_at_depth(pose.depth_mm);
    let (sin_a, cos_a) = pose.alpha_deg.to_radians().sin_cos();
    let cos_t = pose.tau_deg.to_radians().cos();
    let mut points = [[0.0; 2]; 6];
    for (out, key) in points.iter_mut().zip(layout.points.iter()) {
        let lx = key[0] * cos_t;
        let ly = key[1];
        out[0] = pose.x + scale * (cos_a * lx - sin_a * ly);
        out[1] = pose.y + scale * (sin_a * lx + cos_a * ly);
    }
    KeypointSet::new(points)
}

/// A 2-D line as point + unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    pub point: [f64; 2],
    pub direction: [f64; 2],
}

/// Total-least-squares line through a set of image points.
///
/// Returns the centroid and the principal direction of the scatter matrix.
/// The direction is oriented from the first toward the last input point,
/// which implements the layout ordering rule when callers pass points
/// sorted by their local lever arm.
pub fn fit_line(points: &[[f64; 2]]) -> Result<Line2> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput(
            "line fit needs at least two points".into(),
        ));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p[0] - cx;
        let dy = p[1] - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx + syy == 0.0 {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    // Principal eigenvector of [[sxx, sxy], [sxy, syy]], closed form.
    let lambda = 0.5 * (sxx + syy + ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt());
    let mut dir = if sxy.abs() > 0.0 {
        // (lambda - syy, sxy) solves the eigen equation; pick the variant
        // with the larger norm for conditioning.
        let v1 = [lambda - syy, sxy];
        let v2 = [sxy, lambda - sxx];
        if v1[0] * v1[0] + v1[1] * v1[1] >= v2[0] * v2[0] + v2[1] * v2[1] {
            v1
        } else {
            v2
        }
    } else if sxx >= syy {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    dir = [dir[0] / norm, dir[1] / norm];

    let first = points[0];
    let last = points[points.len() - 1];
    let span = [last[0] - first[0], last[1] - first[1]];
    let dot = dir[0] * span[0] + dir[1] * span[1];
    if dot < 0.0 || (dot == 0.0 && (dir[0] < 0.0 || (dir[0] == 0.0 && dir[1] < 0.0))) {
        dir = [-dir[0], -dir[1]];
    }
    Ok(Line2 {
        point: [cx, cy],
        direction: dir,
    })
}

fn intersect_lines(a: &Line2, b: &Line2) -> Result<[f64; 2]> {
    // Solve a.point + t * a.direction = b.point + s * b.direction.
    let det = a.direction[0] * (-b.direction[1]) - (-b.direction[0]) * a.direction[1];
    if det.abs() < 1e-12 {
        return Err(Error::DegenerateInput(
            "keypoint subsets produce parallel lines".into(),
        ));
    }
    let rx = b.point[0] - a.point[0];
    let ry = b.point[1] - a.point[1];
    let t = (rx * (-b.direction[1]) - (-b.direction[0]) * ry) / det;
    Ok([
        a.point[0] + t * a.direction[0],
        a.point[1] + t * a.direction[1],
    ])
}

/// Pose recovered from keypoints, with reconstruction metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecovery {
    pub pose: Pose,
    /// True when the tilt-reconstruction ratio exceeded 1 by more than the
    /// clamp tolerance and was forced to 1.
    pub cos_tau_clamped: bool,
}

/// Ratios of `cos(tau)` in `(1, 1 + COS_TAU_CLAMP_TOL]` are clamped
/// silently; anything larger is clamped and flagged.
pub const COS_TAU_CLAMP_TOL: f64 = 1e-6;

/// Recover the pose from six image keypoints.
///
/// Position comes from the intersection of the axis and perpendicular
/// lines, the forward angle from the axis direction (oriented from the
/// lowest toward the highest `x_key`), the depth from the two extreme
/// perpendicular points and the tilt from the two extreme axis points.
/// The recovered `tau` is nonnegative; its sign is unobservable from a
/// single projection.
pub fn pose_from_keypoints(
    kps: &KeypointSet,
    layout: &KeypointLayout,
    geom: &ProjectionGeometry,
) -> Result<PoseRecovery> {
    let axis_idx = layout.axis_sorted();
    let perp_idx = layout.perp_sorted();
    let axis_points: Vec<[f64; 2]> = axis_idx.iter().map(|&i| kps.points[i]).collect();
    let perp_points: Vec<[f64; 2]> = perp_idx.iter().map(|&i| kps.points[i]).collect();

    let axis_line = fit_line(&axis_points)?;
    let perp_line = fit_line(&perp_points)?;
    let position = intersect_lines(&axis_line, &perp_line)?;
    let alpha_deg = normalize_angle_deg(
        axis_line.direction[1]
            .atan2(axis_line.direction[0])
            .to_degrees(),
    );

    // Depth from the two extreme perpendicular points (x_key = 0).
    let (pi, pj) = (perp_idx[0], perp_idx[perp_idx.len() - 1]);
    let dy_key = (layout.points[pj][1] - layout.points[pi][1]).abs();
    let img_d = dist(&kps.points[pi], &kps.points[pj]);
    if img_d <= 0.0 {
        return Err(Error::DegenerateInput(
            "perpendicular keypoints coincide; depth is undefined".into(),
        ));
    }
    let depth_mm = dy_key / (geom.d2p() * img_d);

    // Tilt from the two extreme axis points (y_key = 0).
    let (ai, aj) = (axis_idx[0], axis_idx[axis_idx.len() - 1]);
    let dx_key = (layout.points[aj][0] - layout.points[ai][0]).abs();
    let img_a = dist(&kps.points[ai], &kps.points[aj]);
    let ratio = geom.d2p() * depth_mm * img_a / dx_key;
    let (cos_tau, cos_tau_clamped) = if ratio <= 1.0 {
        (ratio, false)
    } else if ratio <= 1.0 + COS_TAU_CLAMP_TOL {
        (1.0, false)
    } else {
        (1.0, true)
    };
    let tau_deg = cos_tau.acos().to_degrees();

    Ok(PoseRecovery {
        pose: Pose::new(position[0], position[1], alpha_deg, tau_deg, depth_mm)?,
        cos_tau_clamped,
    })
}

#[inline]
fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> ProjectionGeometry {
        ProjectionGeometry::default_c_arm()
    }

    fn random_pose(rng: &mut impl Rng, max_tau: f64) -> Pose {
        Pose::new(
            rng.random_range(100.0..900.0),
            rng.random_range(100.0..900.0),
            rng.random_range(0.0..360.0),
            rng.random_range(-max_tau..max_tau),
            rng.random_range(362.8..725.61),
        )
        .unwrap()
    }

    #[test]
    fn axis_point_maps_with_unit_magnification_at_sdd() {
        let pose = Pose::new(512.0, 512.0, 0.0, 0.0, 1064.0).unwrap();
        let layout = KeypointLayout::new([
            [3.0, 0.0],
            [-3.0, 0.0],
            [1.0, 0.0],
            [-1.0, 0.0],
            [0.0, 2.0],
            [0.0, -2.0],
        ])
        .unwrap();
        let kps = keypoints_from_pose(&pose, &layout, &geom()).unwrap();
        // 3 mm / (300/1024 mm/px) = 10.24 px.
        assert_abs_diff_eq!(kps.points[0][0], 512.0 + 10.24, epsilon = 1e-12);
        assert_abs_diff_eq!(kps.points[0][1], 512.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_by_90_degrees_moves_axis_arm_to_plus_y() {
        let pose = Pose::new(100.0, 200.0, 90.0, 0.0, 1064.0).unwrap();
        let layout = KeypointLayout::default_cross();
        let kps = keypoints_from_pose(&pose, &layout, &geom()).unwrap();
        // layout point (3, 0) is index 3 of the default cross.
        assert_abs_diff_eq!(kps.points[3][0], 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(kps.points[3][1], 200.0 + 10.24, epsilon = 1e-9);
    }

    #[test]
    fn perpendicular_offset_at_half_depth() {
        // Independent scalar evaluation of the keypoint transform for the
        // perpendicular arm: offset = y_key * sdd / (spacing * depth).
        let g = geom();
        let pose = Pose::new(512.0, 512.0, 0.0, 0.0, 532.0).unwrap();
        let layout = KeypointLayout::default_cross();
        let kps = keypoints_from_pose(&pose, &layout, &g).unwrap();
        let expected = 2.0 * g.source_detector_distance_mm
            / (g.detector_pixel_spacing_mm * 532.0);
        assert_abs_diff_eq!(expected, 13.653333333333332, epsilon = 1e-12);
        // layout point (0, 2) is index 5.
        assert_abs_diff_eq!(kps.points[5][1] - 512.0, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(kps.points[5][0], 512.0, epsilon = 1e-9);
    }

    #[test]
    fn fit_line_two_points() {
        let line = fit_line(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(line.point[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(line.point[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(line.direction[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(line.direction[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn fit_line_exact_collinear() {
        let line = fit_line(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(line.direction[0], s, epsilon = 1e-12);
        assert_abs_diff_eq!(line.direction[1], s, epsilon = 1e-12);
    }

    #[test]
    fn fit_line_matches_eigenvector_oracle() {
        // Closed-form 2x2 eigen-decomposition of the scatter matrix,
        // computed independently here.
        let pts = [[0.0, 0.1], [1.0, -0.1], [2.0, 0.1], [3.0, -0.1]];
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for p in &pts {
            a += (p[0] - cx) * (p[0] - cx);
            b += (p[0] - cx) * (p[1] - cy);
            c += (p[1] - cy) * (p[1] - cy);
        }
        let tr = a + c;
        let det = a * c - b * b;
        let lam = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        let v = [b, lam - a];
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let oracle = [v[0] / norm, v[1] / norm];

        let line = fit_line(&pts).unwrap();
        let dot = (line.direction[0] * oracle[0] + line.direction[1] * oracle[1]).abs();
        assert!((dot - 1.0).abs() < 1e-12, "direction differs: dot={dot}");
    }

    #[test]
    fn fit_line_rejects_coincident_points() {
        assert!(matches!(
            fit_line(&[[1.0, 1.0], [1.0, 1.0]]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn angle_error_wraps() {
        assert_eq!(angle_error_deg(359.0, 1.0), -2.0);
        assert_eq!(angle_error_deg(0.0, 0.0), 0.0);
        assert_eq!(angle_error_deg(90.0, 270.0), 180.0);
        assert_eq!(angle_error_deg(270.0, 90.0), 180.0);
        assert_eq!(angle_error_deg(10.0, 350.0), 20.0);
    }

    #[test]
    fn round_trip_recovers_pose_with_absolute_tau() {
        let g = geom();
        let layout = KeypointLayout::default_cross();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng, 80.0);
            let kps = keypoints_from_pose(&pose, &layout, &g).unwrap();
            let rec = pose_from_keypoints(&kps, &layout, &g).unwrap();
            assert!(!rec.cos_tau_clamped);
            assert_abs_diff_eq!(rec.pose.x, pose.x, epsilon = 1e-9);
            assert_abs_diff_eq!(rec.pose.y, pose.y, epsilon = 1e-9);
            assert!(angle_error_deg(rec.pose.alpha_deg, pose.alpha_deg).abs() < 1e-9);
            assert_abs_diff_eq!(rec.pose.tau_deg, pose.tau_deg.abs(), epsilon = 1e-9);
            assert_abs_diff_eq!(rec.pose.depth_mm, pose.depth_mm, epsilon = 1e-9);
        }
    }

    #[test]
    fn depth_recovered_from_forward_map() {
        let g = geom();
        let layout = KeypointLayout::default_cross();
        let pose = Pose::new(400.0, 300.0, 25.0, 0.0, 532.0).unwrap();
        let kps = keypoints_from_pose(&pose, &layout, &g).unwrap();
        let rec = pose_from_keypoints(&kps, &layout, &g).unwrap();
        assert_abs_diff_eq!(rec.pose.depth_mm, 532.0, epsilon = 1e-9);
    }

    #[test]
    fn tilt_recovered_through_foreshortening() {
        let g = geom();
        let layout = KeypointLayout::default_cross();
        let pose = Pose::new(500.0, 500.0, 10.0, 60.0, 600.0).unwrap();
        let kps = keypoints_from_pose(&pose, &layout, &g).unwrap();
        let rec = pose_from_keypoints(&kps, &layout, &g).unwrap();
        // Foreshortening factor cos(60 deg) = 0.5 recovers tau = 60.
        assert_abs_diff_eq!(rec.pose.tau_deg, 60.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_tau_at_90() {
        let pose = Pose::new(512.0, 512.0, 0.0, 90.0, 600.0).unwrap();
        let layout = KeypointLayout::default_cross();
        assert!(keypoints_from_pose(&pose, &layout, &geom()).is_err());
    }

    #[test]
    fn cos_tau_overshoot_is_clamped_and_flagged() {
        let g = geom();
        let layout = KeypointLayout::default_cross();
        let pose = Pose::new(512.0, 512.0, 0.0, 0.0, 600.0).unwrap();
        let mut kps = keypoints_from_pose(&pose, &layout, &g).unwrap();
        // Stretch the axis arm so the ratio exceeds 1 + tolerance.
        for &i in &layout.axis_indices {
            kps.points[i][0] = 512.0 + (kps.points[i][0] - 512.0) * 1.01;
        }
        let rec = pose_from_keypoints(&kps, &layout, &g).unwrap();
        assert!(rec.cos_tau_clamped);
        assert_eq!(rec.pose.tau_deg, 0.0);
    }

    #[test]
    fn doubling_depth_halves_offsets() {
        let g = geom();
        let layout = KeypointLayout::default_cross();
        let p1 = Pose::new(512.0, 512.0, 33.0, 20.0, 400.0).unwrap();
        let p2 = Pose::new(512.0, 512.0, 33.0, 20.0, 800.0).unwrap();
        let k1 = keypoints_from_pose(&p1, &layout, &g).unwrap();
        let k2 = keypoints_from_pose(&p2, &layout, &g).unwrap();
        for i in 0..6 {
            for c in 0..2 {
                let o1 = k1.points[i][c] - 512.0;
                let o2 = k2.points[i][c] - 512.0;
                assert_abs_diff_eq!(o1, 2.0 * o2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn perpendicular_arm_is_invariant_under_tau() {
        let g = geom();
        let layout = KeypointLayout::default_cross();
        let base = keypoints_from_pose(
            &Pose::new(512.0, 512.0, 70.0, 0.0, 500.0).unwrap(),
            &layout,
            &g,
        )
        .unwrap();
        for tau in [-80.0, -45.0, 10.0, 89.0] {
            let kps = keypoints_from_pose(
                &Pose::new(512.0, 512.0, 70.0, tau, 500.0).unwrap(),
                &layout,
                &g,
            )
            .unwrap();
            for &i in &layout.perp_indices {
                assert_abs_diff_eq!(kps.points[i][0], base.points[i][0], epsilon = 1e-12);
                assert_abs_diff_eq!(kps.points[i][1], base.points[i][1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn median_position_error_grows_with_noise() {
        let g = geom();
        let layout = KeypointLayout::default_cross();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut medians = Vec::new();
        for sigma in [0.1, 0.5, 1.0] {
            let mut errors = Vec::with_capacity(10_000);
            for _ in 0..10_000 {
                let pose = random_pose(&mut rng, 60.0);
                let mut kps = keypoints_from_pose(&pose, &layout, &g).unwrap();
                for p in &mut kps.points {
                    p[0] += sigma * sample_standard_normal(&mut rng);
                    p[1] += sigma * sample_standard_normal(&mut rng);
                }
                let rec = pose_from_keypoints(&kps, &layout, &g).unwrap();
                errors.push(dist(&rec.pose.position(), &pose.position()));
            }
            errors.sort_by(f64::total_cmp);
            medians.push(errors[errors.len() / 2]);
        }
        assert!(
            medians[0] < medians[1] && medians[1] < medians[2],
            "medians not monotone: {medians:?}"
        );
    }

    fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(rng)
    }

    #[test]
    fn mirrored_layout_flips_axis_sign() {
        let layout = KeypointLayout::default_cross();
        let m = layout.mirrored();
        assert_eq!(m.points[0][0], 3.0);
        assert_eq!(m.points[3][0], -3.0);
        assert_eq!(m.points[4], [0.0, -2.0]);
    }
}

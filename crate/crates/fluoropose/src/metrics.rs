//! Pose-error metrics and summary statistics.
//!
//! Five errors are reported for every (predicted, truth) pose pair:
//!
//! * **position_px** — Euclidean detector-pixel distance between the two
//!   image positions;
//! * **position_mm** — the same distance reprojected onto the plane
//!   through the *true* instrument orthogonal to the projection normal,
//!   i.e. `position_px · Δ_ds · d_truth / d_SDD` (one detector pixel at
//!   depth `d_SDD` equals exactly one pixel spacing in mm);
//! * **forward_angle_deg** — absolute in-plane angle difference, wrapped
//!   to (−180°, 180°] before taking the absolute value;
//! * **projection_angle_deg** — `| |τ_pred| − |τ_true| |`, because only
//!   the magnitude of the out-of-plane tilt is observable in one image;
//! * **depth_mm** — absolute source-distance difference.
//!
//! Signed forward-angle and depth errors are stored alongside the
//! absolute entries so bias can be inspected.  Reports whose true tilt
//! magnitude reaches [`TAU_VALIDITY_LIMIT_DEG`] are flagged and excluded
//! from summaries (keypoint recovery degenerates near ±90°); the
//! excluded count is part of every summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_error_deg, Pose, ProjectionGeometry};

/// Tilt magnitude (degrees) at or beyond which a record is excluded
/// from error summaries.
pub const TAU_VALIDITY_LIMIT_DEG: f64 = 80.0;

/// Errors of a single predicted pose against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Euclidean image-position error in detector pixels.
    pub position_px: f64,
    /// Position error reprojected to millimetres at the true depth.
    pub position_mm: f64,
    /// Absolute in-plane angle error in degrees.
    pub forward_angle_deg: f64,
    /// Signed in-plane angle error (predicted − truth, wrapped).
    pub forward_angle_signed_deg: f64,
    /// Absolute difference of tilt magnitudes in degrees.
    pub projection_angle_deg: f64,
    /// Absolute source-distance error in millimetres.
    pub depth_mm: f64,
    /// Signed source-distance error (predicted − truth).
    pub depth_signed_mm: f64,
    /// The estimator clamped cos τ during keypoint recovery.
    pub clamped: bool,
    /// |τ_truth| ≥ [`TAU_VALIDITY_LIMIT_DEG`]; excluded from summaries.
    pub tau_beyond_validity: bool,
}

/// Compare a predicted pose against ground truth under `geom`.
///
/// Every field is a pure function of the three arguments; the `clamped`
/// flag is initialised to `false` and is meant to be set by the caller
/// from the estimator's output.
pub fn compute_errors(predicted: &Pose, truth: &Pose, geom: &ProjectionGeometry) -> ErrorReport {
    let dx = predicted.x - truth.x;
    let dy = predicted.y - truth.y;
    let position_px = (dx * dx + dy * dy).sqrt();
    let position_mm = position_px * geom.d2p() * truth.depth_mm;
    let forward_signed = angle_error_deg(predicted.alpha_deg, truth.alpha_deg);
    ErrorReport {
        position_px,
        position_mm,
        forward_angle_deg: forward_signed.abs(),
        forward_angle_signed_deg: forward_signed,
        projection_angle_deg: (predicted.tau_deg.abs() - truth.tau_deg.abs()).abs(),
        depth_mm: (predicted.depth_mm - truth.depth_mm).abs(),
        depth_signed_mm: predicted.depth_mm - truth.depth_mm,
        clamped: false,
        tau_beyond_validity: truth.tau_deg.abs() >= TAU_VALIDITY_LIMIT_DEG,
    }
}

/// Order statistics of one error metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Linearly interpolated percentile of already-sorted values.
///
/// Uses the rank convention `r = p/100 · (n − 1)` with linear
/// interpolation between the two bracketing order statistics, so the
/// median of an even-length sample is the mean of its middle pair.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=100.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Median of an unsorted, non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile_sorted(&sorted, 50.0)
}

/// Summarize one metric across a sample.
pub fn summarize(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::DegenerateInput(
            "cannot summarize an empty sample".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput(
            "cannot summarize non-finite values".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    Ok(MetricSummary {
        count: n,
        mean: sorted.iter().sum::<f64>() / n as f64,
        min: sorted[0],
        q1: percentile_sorted(&sorted, 25.0),
        median: percentile_sorted(&sorted, 50.0),
        q3: percentile_sorted(&sorted, 75.0),
        p95: percentile_sorted(&sorted, 95.0),
        p99: percentile_sorted(&sorted, 99.0),
        max: sorted[n - 1],
    })
}

/// Fraction of values strictly below `threshold`.
pub fn fraction_below(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| **v < threshold).count() as f64 / values.len() as f64
}

/// Per-metric summaries over a batch of error reports.
///
/// Reports flagged `tau_beyond_validity` are excluded and counted; the
/// summaries cover the remaining reports only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub included: usize,
    pub excluded_tau: usize,
    pub position_px: MetricSummary,
    pub position_mm: MetricSummary,
    pub forward_angle_deg: MetricSummary,
    pub projection_angle_deg: MetricSummary,
    pub depth_mm: MetricSummary,
    /// How many included reports had cos τ clamped during recovery.
    pub clamped_count: usize,
}

/// Summarize a batch of reports, applying the tilt-validity filter.
pub fn summarize_reports(reports: &[ErrorReport]) -> Result<ReportSummary> {
    let valid: Vec<&ErrorReport> = reports.iter().filter(|r| !r.tau_beyond_validity).collect();
    let excluded_tau = reports.len() - valid.len();
    if valid.is_empty() {
        return Err(Error::DegenerateInput(
            "no reports remain after the tilt-validity filter".into(),
        ));
    }
    let field = |f: fn(&ErrorReport) -> f64| -> Vec<f64> { valid.iter().map(|r| f(r)).collect() };
    Ok(ReportSummary {
        included: valid.len(),
        excluded_tau,
        position_px: summarize(&field(|r| r.position_px))?,
        position_mm: summarize(&field(|r| r.position_mm))?,
        forward_angle_deg: summarize(&field(|r| r.forward_angle_deg))?,
        projection_angle_deg: summarize(&field(|r| r.projection_angle_deg))?,
        depth_mm: summarize(&field(|r| r.depth_mm))?,
        clamped_count: valid.iter().filter(|r| r.clamped).count(),
    })
}

/// A context row shown alongside measured results in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub label: String,
    pub value: f64,
    pub unit: String,
}

/// Reference accuracies of a fully trained network at original data
/// scale, emitted for context next to desk-scale results.  These are
/// fixed constants, not measurements of this run.
pub fn reference_rows() -> Vec<ReferenceRow> {
    vec![
        ReferenceRow {
            label: "reference full-scale position error (mean)".into(),
            value: 0.031,
            unit: "mm".into(),
        },
        ReferenceRow {
            label: "reference full-scale position error (std)".into(),
            value: 0.025,
            unit: "mm".into(),
        },
        ReferenceRow {
            label: "reference full-scale forward-angle error (mean)".into(),
            value: 0.031,
            unit: "deg".into(),
        },
        ReferenceRow {
            label: "reference full-scale forward-angle error (std)".into(),
            value: 1.126,
            unit: "deg".into(),
        },
        ReferenceRow {
            label: "reference full-scale position error (95th percentile)".into(),
            value: 0.071,
            unit: "mm".into(),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> ProjectionGeometry {
        ProjectionGeometry::default_c_arm()
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let p = Pose::new(512.0, 512.0, 30.0, -20.0, 500.0).unwrap();
        let r = compute_errors(&p, &p, &geom());
        assert_eq!(r.position_px, 0.0);
        assert_eq!(r.position_mm, 0.0);
        assert_eq!(r.forward_angle_deg, 0.0);
        assert_eq!(r.projection_angle_deg, 0.0);
        assert_eq!(r.depth_mm, 0.0);
        assert!(!r.tau_beyond_validity);
    }

    #[test]
    fn one_pixel_at_full_depth_is_one_pixel_spacing_in_mm() {
        // Magnification 1: at depth d_SDD, one pixel spans exactly the
        // detector pixel spacing, 300/1024 = 0.29296875 mm.
        let g = geom();
        let truth = Pose::new(512.0, 512.0, 0.0, 0.0, g.source_detector_distance_mm).unwrap();
        let pred = Pose::new(513.0, 512.0, 0.0, 0.0, g.source_detector_distance_mm).unwrap();
        let r = compute_errors(&pred, &truth, &g);
        assert_eq!(r.position_px, 1.0);
        assert!((r.position_mm - 0.29296875).abs() < 1e-12);
    }

    #[test]
    fn reprojection_scales_with_truth_depth() {
        // Two pixels at half depth equal one pixel at full depth.
        let g = geom();
        let half = g.source_detector_distance_mm / 2.0;
        let truth = Pose::new(512.0, 512.0, 0.0, 0.0, half).unwrap();
        let pred = Pose::new(514.0, 512.0, 0.0, 0.0, half).unwrap();
        let r = compute_errors(&pred, &truth, &g);
        assert!((r.position_mm - 0.29296875).abs() < 1e-12);
    }

    #[test]
    fn opposite_tilt_signs_have_zero_projection_error() {
        let truth = Pose::new(512.0, 512.0, 0.0, -30.0, 500.0).unwrap();
        let pred = Pose::new(512.0, 512.0, 0.0, 30.0, 500.0).unwrap();
        let r = compute_errors(&pred, &truth, &geom());
        assert_eq!(r.projection_angle_deg, 0.0);
    }

    #[test]
    fn forward_angle_wraps_across_zero() {
        let truth = Pose::new(512.0, 512.0, 1.0, 0.0, 500.0).unwrap();
        let pred = Pose::new(512.0, 512.0, 359.0, 0.0, 500.0).unwrap();
        let r = compute_errors(&pred, &truth, &geom());
        assert!((r.forward_angle_deg - 2.0).abs() < 1e-12);
        assert!((r.forward_angle_signed_deg + 2.0).abs() < 1e-12);
    }

    #[test]
    fn signed_depth_error_keeps_direction() {
        let truth = Pose::new(512.0, 512.0, 0.0, 0.0, 500.0).unwrap();
        let pred = Pose::new(512.0, 512.0, 0.0, 0.0, 493.0).unwrap();
        let r = compute_errors(&pred, &truth, &geom());
        assert_eq!(r.depth_mm, 7.0);
        assert_eq!(r.depth_signed_mm, -7.0);
    }

    #[test]
    fn tilt_validity_flag_follows_truth_only() {
        let g = geom();
        let steep_truth = Pose::new(512.0, 512.0, 0.0, 85.0, 500.0).unwrap();
        let flat_pred = Pose::new(512.0, 512.0, 0.0, 0.0, 500.0).unwrap();
        assert!(compute_errors(&flat_pred, &steep_truth, &g).tau_beyond_validity);
        // Steep prediction against a flat truth is still counted.
        assert!(!compute_errors(&steep_truth, &flat_pred, &g).tau_beyond_validity);
        let edge = Pose::new(512.0, 512.0, 0.0, 79.9, 500.0).unwrap();
        assert!(!compute_errors(&flat_pred, &edge, &g).tau_beyond_validity);
    }

    #[test]
    fn percentiles_match_hand_computed_order_statistics() {
        // Rank r = p/100·(n−1), linear interpolation.  For [1,2,3,4]:
        //   p50 → r = 1.5           → 2.5
        //   p25 → r = 0.75          → 1.75
        //   p75 → r = 2.25          → 3.25
        //   p95 → r = 2.85          → 3.85
        let v = [4.0, 1.0, 3.0, 2.0];
        let s = summarize(&v).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
        assert!((s.p95 - 3.85).abs() < 1e-12);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 4.0);
        assert_eq!(s.mean, 2.5);
        // Odd length: the median is the middle element exactly.
        let odd = [5.0, 1.0, 9.0];
        assert_eq!(summarize(&odd).unwrap().median, 5.0);
        assert_eq!(median(&odd), 5.0);
    }

    #[test]
    fn percentiles_agree_with_a_sort_based_oracle() {
        // Independent oracle: explicit index arithmetic on a sorted copy.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let values: Vec<f64> = (0..1001).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = |p: f64| -> f64 {
            let r = p / 100.0 * (sorted.len() - 1) as f64;
            let lo = r.floor() as usize;
            let f = r - lo as f64;
            if f == 0.0 {
                sorted[lo]
            } else {
                sorted[lo] * (1.0 - f) + sorted[lo + 1] * f
            }
        };
        let s = summarize(&values).unwrap();
        for (got, p) in [
            (s.q1, 25.0),
            (s.median, 50.0),
            (s.q3, 75.0),
            (s.p95, 95.0),
            (s.p99, 99.0),
        ] {
            assert!((got - oracle(p)).abs() < 1e-12, "p{p}: {got}");
        }
    }

    #[test]
    fn summaries_exclude_and_count_steep_tilts() {
        let g = geom();
        let flat = Pose::new(512.0, 512.0, 0.0, 0.0, 500.0).unwrap();
        let mut reports = Vec::new();
        for i in 0..10 {
            let truth = Pose::new(512.0, 512.0, 0.0, 10.0, 500.0).unwrap();
            let pred = Pose::new(512.0 + i as f64, 512.0, 0.0, 10.0, 500.0).unwrap();
            reports.push(compute_errors(&pred, &truth, &g));
        }
        let steep = Pose::new(512.0, 512.0, 0.0, 88.0, 500.0).unwrap();
        reports.push(compute_errors(&flat, &steep, &g));
        reports.push(compute_errors(&flat, &steep, &g));
        let s = summarize_reports(&reports).unwrap();
        assert_eq!(s.included, 10);
        assert_eq!(s.excluded_tau, 2);
        // Pixel errors are 0..9 → median 4.5, max 9.
        assert_eq!(s.position_px.median, 4.5);
        assert_eq!(s.position_px.max, 9.0);
    }

    #[test]
    fn summarize_rejects_empty_and_non_finite() {
        assert!(summarize(&[]).is_err());
        assert!(summarize(&[1.0, f64::NAN]).is_err());
        let steep = Pose::new(512.0, 512.0, 0.0, 88.0, 500.0).unwrap();
        let flat = Pose::new(512.0, 512.0, 0.0, 0.0, 500.0).unwrap();
        let only_excluded = vec![compute_errors(&flat, &steep, &geom())];
        assert!(summarize_reports(&only_excluded).is_err());
    }

    #[test]
    fn fraction_below_counts_strictly() {
        let v = [0.01, 0.05, 0.071, 0.2];
        assert_eq!(fraction_below(&v, 0.071), 0.5);
        assert_eq!(fraction_below(&[], 1.0), 0.0);
    }

    #[test]
    fn reference_rows_carry_fixed_context_values() {
        let rows = reference_rows();
        assert_eq!(rows.len(), 5);
        let find = |label: &str| rows.iter().find(|r| r.label.contains(label)).unwrap();
        assert_eq!(find("position error (mean)").value, 0.031);
        assert_eq!(find("position error (std)").value, 0.025);
        assert_eq!(find("forward-angle error (std)").value, 1.126);
        assert_eq!(find("95th percentile").value, 0.071);
        assert!(rows.iter().all(|r| r.value > 0.0));
    }
}

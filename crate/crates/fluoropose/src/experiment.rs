//! Batch evaluation suites: run the iterative estimator over a dataset with
//! a configurable landmark predictor and collect per-trial error rows plus
//! aggregate summaries.
//!
//! Each trial perturbs the true pose by a seeded random in-plane offset
//! (uniform direction, uniform radius) and forward-angle offset (Gaussian),
//! starts the estimator from that initial guess with no tilt or depth
//! information, and records the error metrics after each requested number
//! of refinement rounds.  All randomness is derived from a master seed plus
//! the record's stream index and the trial index, so reruns are
//! reproducible row for row.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_pose, initial_pose_guess, EstimatorConfig};
use crate::geometry::KeypointLayout;
use crate::image::Image2;
use crate::metrics::{compute_errors, summarize_reports, ErrorReport, ReportSummary};
use crate::patch::{draw_initial_offset, perturb_pose, AugmentationSpec};
use crate::predictor::OraclePredictor;
use crate::sampler::{DatasetRecord, GeneratedRecord};

/// Pixel source for a suite run.
pub enum SuiteImages<'a> {
    /// One image per record, in record order.
    PerRecord(&'a [Image2]),
    /// A single blank canvas of the given `[width, height]`, shared by all
    /// records.  Valid only for predictors that ignore pixel content (the
    /// ground-truth oracle); it lets large statistical sweeps skip
    /// rendering entirely.
    SharedBlank([usize; 2]),
}

/// Settings for an oracle-driven evaluation suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSuiteConfig {
    /// Round counts to report, ascending (e.g. `[1]` or `[1, 2, 3]`).
    /// The estimator runs once per trial up to the maximum and the trace
    /// supplies the intermediate poses.
    pub k_values: Vec<usize>,
    /// Independent perturbed starts per record.
    pub trials_per_record: usize,
    /// Gaussian pixel noise applied to the oracle's keypoints.
    pub noise_px: f64,
    /// Distribution of the initial pose offsets.
    pub augmentation: AugmentationSpec,
    /// Estimator settings; `k_max` is overridden by `k_values`.
    pub estimator: EstimatorConfig,
    /// Master seed; per-trial generators are derived from it.
    pub master_seed: u64,
}

impl OracleSuiteConfig {
    pub fn new(k_values: Vec<usize>, trials_per_record: usize, noise_px: f64, seed: u64) -> Self {
        Self {
            k_values,
            trials_per_record,
            noise_px,
            augmentation: AugmentationSpec::default(),
            estimator: EstimatorConfig::default(),
            master_seed: seed,
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.k_values.is_empty() {
            return Err(Error::InvalidParameter(
                "suite needs at least one round count".into(),
            ));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) || self.k_values[0] == 0 {
            return Err(Error::InvalidParameter(
                "round counts must be positive and strictly ascending".into(),
            ));
        }
        if self.trials_per_record == 0 {
            return Err(Error::InvalidParameter(
                "suite needs at least one trial per record".into(),
            ));
        }
        if !self.noise_px.is_finite() || self.noise_px < 0.0 {
            return Err(Error::InvalidParameter(
                "keypoint noise must be finite and non-negative".into(),
            ));
        }
        self.augmentation.validate()?;
        Ok(*self.k_values.last().expect("nonempty"))
    }
}

/// One estimator run evaluated after `k` rounds.
#[derive(Debug, Clone)]
pub struct TrialRow {
    pub record_id: String,
    pub trial: usize,
    /// Refinement rounds applied before reading the estimate.
    pub k: usize,
    pub report: ErrorReport,
}

/// Everything a suite run produces.
#[derive(Debug)]
pub struct SuiteResult {
    /// One row per (record, trial, k), in deterministic order.
    pub rows: Vec<TrialRow>,
    /// Estimator runs aborted because an intermediate estimate left the
    /// image or exceeded the tilt validity limit.
    pub aborted: usize,
    /// Aggregate statistics per requested round count, in `k_values` order.
    pub summaries: Vec<(usize, ReportSummary)>,
    /// Mean wall-clock milliseconds per estimator run (all rounds).
    pub mean_estimate_ms: f64,
}

impl SuiteResult {
    /// Median of a per-row metric over rows with the given round count.
    pub fn median_position_px(&self, k: usize) -> Option<f64> {
        let summary = self.summaries.iter().find(|(kk, _)| *kk == k)?;
        Some(summary.1.position_px.median)
    }
}

fn trial_rng(master_seed: u64, record_stream: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    // Streams 0..n are taken by dataset generation under the same master
    // seed; spacing by a prime keeps trial streams disjoint from them and
    // from each other for any realistic trial count.
    rng.set_stream(record_stream.wrapping_mul(8191).wrapping_add(trial as u64 * 2 + 1));
    rng
}

/// Run the estimator over every (record, trial) pair with a ground-truth
/// oracle predictor and collect error rows for each requested round count.
pub fn run_oracle_suite(
    records: &[DatasetRecord],
    images: SuiteImages,
    cfg: &OracleSuiteConfig,
) -> Result<SuiteResult> {
    let k_max = cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidParameter("suite needs records".into()));
    }
    let shared_blank = match images {
        SuiteImages::PerRecord(imgs) => {
            if imgs.len() != records.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} images for {} records",
                    imgs.len(),
                    records.len()
                )));
            }
            None
        }
        SuiteImages::SharedBlank([w, h]) => Some(Image2::zeros(w, h)),
    };

    let layout = KeypointLayout::default_cross();
    let estimator_cfg = EstimatorConfig {
        k_max,
        ..cfg.estimator
    };

    let mut rows = Vec::with_capacity(records.len() * cfg.trials_per_record * cfg.k_values.len());
    let mut aborted = 0usize;
    let mut runs = 0usize;
    let mut total_ms = 0.0f64;

    for (index, record) in records.iter().enumerate() {
        let image: &Image2 = match (&shared_blank, &images) {
            (Some(blank), _) => blank,
            (None, SuiteImages::PerRecord(imgs)) => &imgs[index],
            (None, SuiteImages::SharedBlank(_)) => unreachable!("blank built above"),
        };
        let geom = record.setup.geom;
        let truth = record.pose;

        for trial in 0..cfg.trials_per_record {
            let mut rng = trial_rng(cfg.master_seed, record.stream, trial);
            let (offset_mm, delta_alpha_deg) = draw_initial_offset(&cfg.augmentation, &mut rng);
            let perturbed = perturb_pose(&truth, offset_mm, delta_alpha_deg, &geom, truth.depth_mm)?;
            // The estimator starts with no tilt or depth information.
            let initial = initial_pose_guess(perturbed.x, perturbed.y, perturbed.alpha_deg, &geom)?;
            let oracle_seed: u64 = rng.random();
            let mut predictor =
                OraclePredictor::new(truth, layout.clone(), geom, cfg.noise_px, oracle_seed);

            let started = Instant::now();
            let outcome = estimate_pose(image, &geom, &layout, &initial, &mut predictor, &estimator_cfg);
            total_ms += started.elapsed().as_secs_f64() * 1e3;
            runs += 1;

            match outcome {
                Ok(estimation) => {
                    for &k in &cfg.k_values {
                        let mut report = compute_errors(&estimation.trace[k], &truth, &geom);
                        report.clamped = estimation.clamped;
                        rows.push(TrialRow {
                            record_id: record.id.clone(),
                            trial,
                            k,
                            report,
                        });
                    }
                }
                Err(Error::EstimateOutOfBounds { .. }) => aborted += 1,
                Err(e) => return Err(e),
            }
        }
    }

    if rows.is_empty() {
        return Err(Error::DegenerateInput(
            "every estimator run aborted; nothing to summarize".into(),
        ));
    }

    let mut summaries = Vec::with_capacity(cfg.k_values.len());
    for &k in &cfg.k_values {
        let reports: Vec<ErrorReport> = rows
            .iter()
            .filter(|row| row.k == k)
            .map(|row| row.report.clone())
            .collect();
        summaries.push((k, summarize_reports(&reports)?));
    }

    Ok(SuiteResult {
        rows,
        aborted,
        summaries,
        mean_estimate_ms: total_ms / runs as f64,
    })
}

/// Convenience wrapper for rendered datasets: pairs each record with its
/// radiograph and runs the suite on the real images.
pub fn run_oracle_suite_rendered(
    generated: &[GeneratedRecord],
    cfg: &OracleSuiteConfig,
) -> Result<SuiteResult> {
    let mut records = Vec::with_capacity(generated.len());
    let mut images = Vec::with_capacity(generated.len());
    for g in generated {
        let radiograph = g.radiograph.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!("record {} has no rendered image", g.record.id))
        })?;
        records.push(g.record.clone());
        images.push(radiograph.image.clone());
    }
    run_oracle_suite(&records, SuiteImages::PerRecord(&images), cfg)
}

// ---------------------------------------------------------------------------
// CSV emission.  Columns are fixed and documented here; numbers use Rust's
// shortest-roundtrip float formatting, so identical runs produce identical
// bytes.
// ---------------------------------------------------------------------------

/// Header of [`trial_rows_csv`].
pub const TRIAL_CSV_HEADER: &str = "record_id,trial,k,position_px,position_mm,forward_angle_deg,\
forward_angle_signed_deg,projection_angle_deg,depth_mm,depth_signed_mm,clamped,tau_beyond_validity";

/// Serialize per-trial rows; one line per (record, trial, k).
pub fn trial_rows_csv(rows: &[TrialRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(TRIAL_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.record_id,
            row.trial,
            row.k,
            r.position_px,
            r.position_mm,
            r.forward_angle_deg,
            r.forward_angle_signed_deg,
            r.projection_angle_deg,
            r.depth_mm,
            r.depth_signed_mm,
            r.clamped,
            r.tau_beyond_validity,
        ));
    }
    out
}

/// Header of [`summary_csv`].
pub const SUMMARY_CSV_HEADER: &str = "k,metric,count,mean,min,q1,median,q3,p95,p99,max";

/// Serialize aggregate statistics: one line per (round count, metric).
pub fn summary_csv(summaries: &[(usize, ReportSummary)]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_CSV_HEADER);
    out.push('\n');
    for (k, summary) in summaries {
        for (name, stats) in [
            ("position_px", &summary.position_px),
            ("position_mm", &summary.position_mm),
            ("forward_angle_deg", &summary.forward_angle_deg),
            ("projection_angle_deg", &summary.projection_angle_deg),
            ("depth_mm", &summary.depth_mm),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                k,
                name,
                stats.count,
                stats.mean,
                stats.min,
                stats.q1,
                stats.median,
                stats.q3,
                stats.p95,
                stats.p99,
                stats.max,
            ));
        }
    }
    out
}

/// Header of [`registration_rows_csv`].
pub const REGISTRATION_CSV_HEADER: &str = "record_id,trial,metric,initial_position_error_px,\
final_position_error_px,initial_alpha_error_deg,final_alpha_error_deg,initial_score,final_score,\
renders,improved";

/// Serialize intensity-registration trial rows.
pub fn registration_rows_csv(rows: &[crate::registration::RegistrationTrialRow]) -> String {
    let mut out = String::new();
    out.push_str(REGISTRATION_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.record_id,
            row.trial,
            row.metric.name(),
            row.initial_position_error_px,
            row.final_position_error_px,
            row.initial_alpha_error_deg,
            row.final_alpha_error_deg,
            row.initial_score,
            row.final_score,
            row.renders,
            row.improved,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::InstrumentKind;
    use crate::phantom::PhantomPreset;
    use crate::sampler::{generate_dataset, GenerateOptions, RenderPolicy, SplitTag};

    fn eval_records(count: usize, seed: u64) -> Vec<DatasetRecord> {
        let mut options = GenerateOptions::new(
            count,
            seed,
            InstrumentKind::Screw,
            PhantomPreset::ShellSphere,
            SplitTag::Eval,
        );
        options.render = RenderPolicy::Off;
        generate_dataset(&options)
            .expect("generation succeeds")
            .into_iter()
            .map(|g| g.record)
            .collect()
    }

    #[test]
    fn exact_oracle_recovers_truth_after_one_round() {
        let records = eval_records(6, 41);
        let cfg = OracleSuiteConfig::new(vec![1], 2, 0.0, 7);
        let result = run_oracle_suite(
            &records,
            SuiteImages::SharedBlank([1024, 1024]),
            &cfg,
        )
        .expect("suite runs");

        assert_eq!(result.aborted, 0);
        assert_eq!(result.rows.len(), 6 * 2);
        for row in &result.rows {
            assert!(
                row.report.position_mm < 1e-6,
                "exact oracle should recover position (got {} mm)",
                row.report.position_mm
            );
            assert!(row.report.forward_angle_deg < 1e-6);
            assert!(row.report.depth_mm < 1e-4);
        }
        let (_, summary) = &result.summaries[0];
        assert_eq!(summary.included + summary.excluded_tau, 12);
    }

    #[test]
    fn noisy_oracle_rows_cover_every_round_count() {
        let records = eval_records(4, 42);
        let cfg = OracleSuiteConfig::new(vec![1, 3], 3, 0.5, 11);
        let result = run_oracle_suite(
            &records,
            SuiteImages::SharedBlank([1024, 1024]),
            &cfg,
        )
        .expect("suite runs");

        let completed = 4 * 3 - result.aborted;
        assert_eq!(result.rows.len(), completed * 2);
        assert!(result.rows.iter().any(|r| r.k == 1));
        assert!(result.rows.iter().any(|r| r.k == 3));
        assert!(result.mean_estimate_ms.is_finite());
        for (_, summary) in &result.summaries {
            assert!(summary.position_px.median.is_finite());
        }
    }

    #[test]
    fn suite_reruns_are_byte_identical() {
        let records = eval_records(3, 43);
        let cfg = OracleSuiteConfig::new(vec![1, 2], 2, 0.5, 99);
        let images = SuiteImages::SharedBlank([1024, 1024]);
        let first = run_oracle_suite(&records, images, &cfg).expect("first run");
        let second = run_oracle_suite(&records, SuiteImages::SharedBlank([1024, 1024]), &cfg)
            .expect("second run");

        let csv_a = trial_rows_csv(&first.rows);
        let csv_b = trial_rows_csv(&second.rows);
        assert_eq!(csv_a, csv_b);
        assert_eq!(summary_csv(&first.summaries), summary_csv(&second.summaries));
        assert!(csv_a.starts_with(TRIAL_CSV_HEADER));
        assert_eq!(csv_a.lines().count(), 1 + first.rows.len());
    }

    #[test]
    fn different_trials_draw_different_offsets() {
        let records = eval_records(1, 44);
        let cfg = OracleSuiteConfig::new(vec![1], 4, 0.5, 5);
        let result = run_oracle_suite(
            &records,
            SuiteImages::SharedBlank([1024, 1024]),
            &cfg,
        )
        .expect("suite runs");
        let mut errs: Vec<f64> = result.rows.iter().map(|r| r.report.position_px).collect();
        errs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        assert!(errs.len() > 1, "trials must not repeat the same draw");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let records = eval_records(1, 45);
        for cfg in [
            OracleSuiteConfig::new(vec![], 1, 0.5, 1),
            OracleSuiteConfig::new(vec![0], 1, 0.5, 1),
            OracleSuiteConfig::new(vec![2, 1], 1, 0.5, 1),
            OracleSuiteConfig::new(vec![1], 0, 0.5, 1),
            OracleSuiteConfig::new(vec![1], 1, -0.5, 1),
        ] {
            assert!(run_oracle_suite(
                &records,
                SuiteImages::SharedBlank([1024, 1024]),
                &cfg
            )
            .is_err());
        }
        let good = OracleSuiteConfig::new(vec![1], 1, 0.0, 1);
        assert!(run_oracle_suite(&records, SuiteImages::PerRecord(&[]), &good).is_err());
    }
}

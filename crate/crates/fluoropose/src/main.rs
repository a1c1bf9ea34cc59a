//! Command-line front end.  All logic lives in the library; this binary
//! parses arguments, loads the (versioned) JSON config, runs one
//! subcommand and writes artifacts into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fluoropose::config::AppConfig;
use fluoropose::estimator::{estimate_pose, initial_pose_guess, EstimatorConfig};
use fluoropose::experiment::{
    registration_rows_csv, run_oracle_suite, summary_csv, trial_rows_csv, OracleSuiteConfig,
    SuiteImages,
};
use fluoropose::geometry::KeypointLayout;
use fluoropose::image::Image2;
use fluoropose::io;
use fluoropose::mesh::InstrumentKind;
use fluoropose::metrics::{compute_errors, reference_rows};
use fluoropose::net::{train, ConvNetConfig, Head, Optimizer, TrainConfig};
use fluoropose::net::ConvNet;
use fluoropose::patch::{
    draw_initial_offset, perturb_pose, AugmentationSpec, PATCH_HEIGHT, PATCH_WIDTH,
};
use fluoropose::phantom::PhantomPreset;
use fluoropose::predictor::{build_patch_dataset, ConvNetPredictor, OraclePredictor, Predictor};
use fluoropose::plots::{box_plot_svg, box_stats, BoxStats};
use fluoropose::rectangle::run_rectangle_comparison;
use fluoropose::registration::{improvement_rate, run_registration_trials, SimilarityMetric};
use fluoropose::sampler::{generate_dataset, DatasetRecord, GenerateOptions, RenderPolicy, SplitTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "fluoropose",
    version,
    about = "Synthetic fluoroscopic instrument pose estimation"
)]
struct Cli {
    /// Master seed (overrides the seeds in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for generated artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum PhantomArg {
    ShellSphere,
    LayeredSlab,
    PerlinBone,
}

#[derive(Copy, Clone, ValueEnum)]
enum InstrumentArg {
    Screw,
    Drill,
    Robot,
}

#[derive(Copy, Clone, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

#[derive(Copy, Clone, ValueEnum)]
enum TaskArg {
    Rectangle,
    Patches,
}

#[derive(Copy, Clone, ValueEnum)]
enum MetricArg {
    Gc,
    Mi,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset (manifest plus, by default, rendered images).
    Generate {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        phantom: Option<PhantomArg>,
        #[arg(long, value_enum)]
        instrument: Option<InstrumentArg>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Skip rendering; the manifest then carries ground truth only.
        #[arg(long)]
        no_render: bool,
    },
    /// Train a network and save its weights.
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
    },
    /// Estimate the pose of one record from a dataset manifest.
    Estimate {
        /// Dataset manifest written by `generate`.
        #[arg(long)]
        manifest: PathBuf,
        /// Record id; defaults to the first record.
        #[arg(long)]
        record: Option<String>,
        /// Trained patch-network weights; a ground-truth oracle with
        /// `--noise-px` keypoint noise is used when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        noise_px: f64,
        /// Refinement rounds.
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Batch-evaluate the estimator and write CSV reports.
    Evaluate,
    /// Run the intensity-based registration comparison.
    Register {
        #[arg(long, value_enum, default_value = "both")]
        metric: MetricArg,
    },
    /// Render box plots from evaluation (and optionally registration)
    /// CSV files.
    Plot {
        /// `trials.csv` written by `evaluate`.
        #[arg(long)]
        trials: PathBuf,
        /// Registration rows; adds a comparison box to the position plot.
        #[arg(long)]
        registration: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = AppConfig::load_or_default(cli.config.as_deref())
        .context("loading configuration")?;
    if let Some(seed) = cli.seed {
        config.generate.seed = seed;
        config.evaluate.master_seed = seed;
        config.register.harness.master_seed = seed;
        config.register.harness.registration.seed = seed;
    }
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match cli.command {
        Command::Generate {
            count,
            phantom,
            instrument,
            split,
            no_render,
        } => {
            let mut options = config.generate.clone();
            if let Some(c) = count {
                options.count = c;
            }
            if let Some(p) = phantom {
                options.phantom = match p {
                    PhantomArg::ShellSphere => PhantomPreset::ShellSphere,
                    PhantomArg::LayeredSlab => PhantomPreset::LayeredSlab,
                    PhantomArg::PerlinBone => PhantomPreset::PerlinBone,
                };
            }
            if let Some(i) = instrument {
                options.instrument = match i {
                    InstrumentArg::Screw => InstrumentKind::Screw,
                    InstrumentArg::Drill => InstrumentKind::Drill,
                    InstrumentArg::Robot => InstrumentKind::Robot,
                };
            }
            if let Some(s) = split {
                let split = match s {
                    SplitArg::Train => SplitTag::Train,
                    SplitArg::Eval => SplitTag::Eval,
                };
                // Rebuild so the split's sampling distributions apply.
                options = rebuild_for_split(&options, split);
            }
            if no_render {
                options.render = RenderPolicy::Off;
            }
            cmd_generate(&cli.out, &options)
        }
        Command::Train { task } => match task {
            TaskArg::Rectangle => cmd_train_rectangle(&cli.out, &config, cli.seed),
            TaskArg::Patches => cmd_train_patches(&cli.out, &config, cli.seed),
        },
        Command::Estimate {
            manifest,
            record,
            weights,
            noise_px,
            k,
        } => cmd_estimate(&manifest, record.as_deref(), weights.as_deref(), noise_px, k, cli.seed),
        Command::Evaluate => cmd_evaluate(&cli.out, &config),
        Command::Register { metric } => cmd_register(&cli.out, &config, metric),
        Command::Plot {
            trials,
            registration,
        } => cmd_plot(&cli.out, &trials, registration.as_deref()),
    }
}

/// Re-derive split-dependent defaults while keeping explicit settings.
fn rebuild_for_split(options: &GenerateOptions, split: SplitTag) -> GenerateOptions {
    let mut rebuilt = GenerateOptions::new(
        options.count,
        options.seed,
        options.instrument,
        options.phantom,
        split,
    );
    rebuilt.phantom_seed = options.phantom_seed;
    rebuilt.polys = options.polys.clone();
    rebuilt.margin_mm = options.margin_mm;
    rebuilt.render = options.render;
    rebuilt.min_border_px = options.min_border_px;
    rebuilt.inner_retries = options.inner_retries;
    rebuilt.outer_retries = options.outer_retries;
    rebuilt
}

fn cmd_generate(out: &Path, options: &GenerateOptions) -> Result<()> {
    let generated = generate_dataset(options)?;
    let rendering = !matches!(options.render, RenderPolicy::Off);
    let image_dir = out.join("images");
    if rendering {
        fs::create_dir_all(&image_dir)?;
    }

    let mut records = Vec::with_capacity(generated.len());
    for g in &generated {
        let mut record = g.record.clone();
        if let Some(radiograph) = &g.radiograph {
            let name = format!("images/{}.json", record.id);
            io::save_radiograph(&out.join(&name), radiograph)?;
            record.image = name;
        }
        records.push(record);
    }
    let manifest = out.join("dataset.jsonl");
    io::save_dataset_manifest(&manifest, &records)?;
    println!(
        "generated {} records ({} split, {:?} in {:?} phantom, seed {}) -> {}",
        records.len(),
        match options.split {
            SplitTag::Train => "train",
            SplitTag::Eval => "eval",
        },
        options.instrument,
        options.phantom,
        options.seed,
        manifest.display()
    );
    if rendering {
        println!("images under {}", image_dir.display());
    }
    Ok(())
}

fn cmd_train_rectangle(out: &Path, config: &AppConfig, seed: Option<u64>) -> Result<()> {
    let cfg = config.train.rectangle;
    let base = seed.unwrap_or(17);
    let seeds: Vec<u64> = (0..5).map(|i| base + i).collect();
    let comparison = run_rectangle_comparison(&cfg, &seeds, base ^ 0x5eed)?;

    println!(
        "rectangle angle regression over {} seeds ({} train / {} test):",
        seeds.len(),
        cfg.train_count,
        cfg.test_count
    );
    println!(
        "  direct head:   median abs error {:.3} deg, wrap-zone errors >90 deg: {}",
        comparison.direct_median(),
        comparison.direct_wrap_failures(30.0, 90.0)
    );
    println!(
        "  indirect head: median abs error {:.3} deg, wrap-zone errors >90 deg: {}",
        comparison.indirect_median(),
        comparison.indirect_wrap_failures(30.0, 90.0)
    );

    let mut csv = String::from("head,seed,median_abs_error_deg,wrap_failures\n");
    for (evals, name) in [(&comparison.direct, "direct"), (&comparison.indirect, "indirect")] {
        for e in evals.iter() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                name,
                e.seed,
                fluoropose::metrics::median(&e.abs_errors_deg),
                e.wrap_zone_failures(30.0, 90.0)
            ));
        }
    }
    let path = out.join("rectangle_comparison.csv");
    fs::write(&path, csv)?;
    println!("per-seed results -> {}", path.display());
    Ok(())
}

fn cmd_train_patches(out: &Path, config: &AppConfig, seed: Option<u64>) -> Result<()> {
    let section = &config.train.patches;
    let master = seed.unwrap_or(config.generate.seed);
    let mut options = config.generate.clone();
    options.count = section.count;
    options.seed = master;

    println!("rendering {} training records...", options.count);
    let generated = generate_dataset(&options)?;
    let dataset = build_patch_dataset(&generated, &section.augmentation, master ^ 0xda7a)?;

    let net_config = ConvNetConfig::simplified(
        [1, PATCH_HEIGHT, PATCH_WIDTH],
        section.base_channels,
        Head::Indirect { outputs: 12 },
    );
    let mut net = ConvNet::new(net_config, master)?;
    let train_cfg = TrainConfig {
        optimizer: Optimizer::adam(section.learning_rate),
        batch_size: section.batch_size,
        epochs: section.epochs,
        seed: master,
    };
    println!(
        "training keypoint regressor: {} samples, {} epochs...",
        dataset.len(),
        train_cfg.epochs
    );
    let report = train(&mut net, &train_cfg, &dataset)?;

    let weights_path = out.join("patch_net.json");
    io::save_weights(&weights_path, &mut net, train_cfg.epochs)?;
    let mut curve = String::from("epoch,mean_mse\n");
    for (i, loss) in report.epoch_loss.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i + 1, loss));
    }
    fs::write(out.join("patch_net_loss.csv"), curve)?;
    println!(
        "final training MSE {:.6} -> weights at {}",
        report.epoch_loss.last().copied().unwrap_or(f64::NAN),
        weights_path.display()
    );
    Ok(())
}

fn cmd_estimate(
    manifest: &Path,
    record_id: Option<&str>,
    weights: Option<&Path>,
    noise_px: f64,
    k: usize,
    seed: Option<u64>,
) -> Result<()> {
    let records = io::load_dataset_manifest(manifest)?;
    let record: &DatasetRecord = match record_id {
        Some(id) => records
            .iter()
            .find(|r| r.id == id)
            .with_context(|| format!("record {id} not found in {}", manifest.display()))?,
        None => records.first().context("manifest is empty")?,
    };
    let geom = record.setup.geom;
    let truth = record.pose;

    let image = if record.image.is_empty() {
        Image2::zeros(geom.detector_size[0], geom.detector_size[1])
    } else {
        let dir = manifest.parent().unwrap_or_else(|| Path::new(""));
        io::load_radiograph(&dir.join(&record.image))?.image
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(1));
    rng.set_stream(record.stream.wrapping_mul(8191).wrapping_add(1));
    let spec = AugmentationSpec::default();
    let (offset_mm, d_alpha) = draw_initial_offset(&spec, &mut rng);
    let perturbed = perturb_pose(&truth, offset_mm, d_alpha, &geom, truth.depth_mm)?;
    let initial = initial_pose_guess(perturbed.x, perturbed.y, perturbed.alpha_deg, &geom)?;

    let mut oracle;
    let mut convnet;
    let predictor: &mut dyn Predictor = match weights {
        Some(path) => {
            let (net, _) = io::load_weights(path)?;
            convnet = ConvNetPredictor::new(net)?;
            &mut convnet
        }
        None => {
            let oracle_seed: u64 = rng.random();
            oracle = OraclePredictor::new(
                truth,
                KeypointLayout::default_cross(),
                geom,
                noise_px,
                oracle_seed,
            );
            &mut oracle
        }
    };

    let estimation = estimate_pose(
        &image,
        &geom,
        &KeypointLayout::default_cross(),
        &initial,
        predictor,
        &EstimatorConfig {
            k_max: k,
            ..EstimatorConfig::default()
        },
    )?;

    println!("record {} (true pose {})", record.id, fmt_pose(&truth));
    for (round, pose) in estimation.trace.iter().enumerate() {
        let errors = compute_errors(pose, &truth, &geom);
        println!(
            "  round {round}: {}  |  err {:.4} px / {:.4} mm, alpha {:.4} deg, tau {:.4} deg, depth {:.4} mm",
            fmt_pose(pose),
            errors.position_px,
            errors.position_mm,
            errors.forward_angle_deg,
            errors.projection_angle_deg,
            errors.depth_mm
        );
    }
    if estimation.clamped {
        println!("  note: tilt reconstruction clamped in at least one round");
    }
    Ok(())
}

fn fmt_pose(p: &fluoropose::geometry::Pose) -> String {
    format!(
        "x {:.2} px, y {:.2} px, alpha {:.2} deg, tau {:.2} deg, depth {:.1} mm",
        p.x, p.y, p.alpha_deg, p.tau_deg, p.depth_mm
    )
}

fn cmd_evaluate(out: &Path, config: &AppConfig) -> Result<()> {
    let suite: &OracleSuiteConfig = &config.evaluate;
    let mut options = rebuild_for_split(&config.generate, SplitTag::Eval);
    options.render = RenderPolicy::Off;
    options.seed = suite.master_seed;

    println!(
        "evaluating estimator: {} records x {} trials, oracle noise {} px, rounds {:?}",
        options.count, suite.trials_per_record, suite.noise_px, suite.k_values
    );
    let records: Vec<DatasetRecord> = generate_dataset(&options)?
        .into_iter()
        .map(|g| g.record)
        .collect();
    let [w, h] = records
        .first()
        .map(|r| r.setup.geom.detector_size)
        .unwrap_or([1024, 1024]);
    let result = run_oracle_suite(&records, SuiteImages::SharedBlank([w, h]), suite)?;

    fs::write(out.join("trials.csv"), trial_rows_csv(&result.rows))?;
    fs::write(out.join("summary.csv"), summary_csv(&result.summaries))?;
    let mut reference = String::from("label,value,unit\n");
    for row in reference_rows() {
        reference.push_str(&format!("{},{},{}\n", row.label, row.value, row.unit));
    }
    fs::write(out.join("reference.csv"), reference)?;

    for (k, summary) in &result.summaries {
        println!(
            "  k={k}: median position {:.4} mm, median angle {:.4} deg, median depth {:.4} mm ({} rows, {} excluded for tilt)",
            summary.position_mm.median,
            summary.forward_angle_deg.median,
            summary.depth_mm.median,
            summary.included,
            summary.excluded_tau
        );
    }
    println!(
        "  aborted runs: {}, mean estimate time {:.2} ms",
        result.aborted, result.mean_estimate_ms
    );
    println!("CSV reports -> {}", out.display());
    Ok(())
}

fn cmd_register(out: &Path, config: &AppConfig, metric: MetricArg) -> Result<()> {
    let mut options = rebuild_for_split(&config.generate, SplitTag::Eval);
    options.count = config.register.records;
    options.seed = config.register.harness.master_seed;
    options.render = RenderPolicy::Off;
    let records: Vec<DatasetRecord> = generate_dataset(&options)?
        .into_iter()
        .map(|g| g.record)
        .collect();

    let metrics: &[SimilarityMetric] = match metric {
        MetricArg::Gc => &[SimilarityMetric::GradientCorrelation],
        MetricArg::Mi => &[SimilarityMetric::MutualInformation],
        MetricArg::Both => &[
            SimilarityMetric::GradientCorrelation,
            SimilarityMetric::MutualInformation,
        ],
    };
    for &m in metrics {
        let mut harness = config.register.harness.clone();
        harness.registration.metric = m;
        println!(
            "registering {} records x {} trials with {} (budget {} renders)...",
            records.len(),
            harness.trials_per_record,
            m.name(),
            harness.registration.max_renders
        );
        let rows = run_registration_trials(&records, &harness)?;
        let path = out.join(format!("registration_{}.csv", m.name()));
        fs::write(&path, registration_rows_csv(&rows))?;
        println!(
            "  improvement rate {:.3} -> {}",
            improvement_rate(&rows),
            path.display()
        );
    }
    Ok(())
}

/// Column layout of `trials.csv` (see `TRIAL_CSV_HEADER`).
const TRIAL_METRIC_COLUMNS: [(&str, usize, &str); 4] = [
    ("position_px", 3, "px"),
    ("position_mm", 4, "mm"),
    ("forward_angle_deg", 5, "deg"),
    ("depth_mm", 8, "mm"),
];

fn cmd_plot(out: &Path, trials: &Path, registration: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(trials)
        .with_context(|| format!("reading {}", trials.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty trials file")?;
    if !header.starts_with("record_id,trial,k,") {
        bail!("{} is not a trials.csv file", trials.display());
    }
    let mut k_values: Vec<usize> = Vec::new();
    let mut samples: Vec<(usize, Vec<f64>)> = Vec::new(); // flattened (k, per-column)
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let k: usize = cols[2].parse().context("bad k column")?;
        if !k_values.contains(&k) {
            k_values.push(k);
        }
        let row: Vec<f64> = TRIAL_METRIC_COLUMNS
            .iter()
            .map(|&(_, idx, _)| cols[idx].parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        samples.push((k, row));
    }
    k_values.sort_unstable();

    let registration_final_px: Option<Vec<f64>> = match registration {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            Some(
                text.lines()
                    .skip(1)
                    .filter_map(|l| l.split(',').nth(4)?.parse().ok())
                    .collect(),
            )
        }
        None => None,
    };

    for (ci, &(name, _, unit)) in TRIAL_METRIC_COLUMNS.iter().enumerate() {
        let mut boxes: Vec<BoxStats> = Vec::new();
        for &k in &k_values {
            let vals: Vec<f64> = samples
                .iter()
                .filter(|(kk, _)| *kk == k)
                .map(|(_, row)| row[ci])
                .collect();
            boxes.push(box_stats(&format!("k={k}"), &vals)?);
        }
        if name == "position_px" {
            if let Some(reg) = &registration_final_px {
                if !reg.is_empty() {
                    boxes.push(box_stats("registration", reg)?);
                }
            }
        }
        let svg = box_plot_svg(name, unit, &boxes)?;
        let path = out.join(format!("plot_{name}.svg"));
        fs::write(&path, svg)?;
        println!("plot -> {}", path.display());
    }
    Ok(())
}

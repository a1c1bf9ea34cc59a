//! Train the direct and indirect regression heads on the rectangle
//! benchmark and compare their angle errors.
//!
//! Usage: train_rectangle [train_count] [test_count] [epochs] [base_channels] [lr] [n_seeds]

use std::time::Instant;

use fluoropose::rectangle::{
    run_rectangle_comparison, RectangleTrialConfig,
};

fn main() -> fluoropose::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| -> f64 {
        args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d)
    };
    let defaults = RectangleTrialConfig::default();
    let cfg = RectangleTrialConfig {
        train_count: arg(1, defaults.train_count as f64) as usize,
        test_count: arg(2, defaults.test_count as f64) as usize,
        epochs: arg(3, defaults.epochs as f64) as usize,
        base_channels: arg(4, defaults.base_channels as f64) as usize,
        learning_rate: arg(5, defaults.learning_rate),
        ..defaults
    };
    let n_seeds = arg(6, 5.0) as u64;
    let seeds: Vec<u64> = (1..=n_seeds).collect();

    println!("config: {cfg:?}");
    let t0 = Instant::now();
    let cmp = run_rectangle_comparison(&cfg, &seeds, 424242)?;
    println!("total training+eval time: {:.1} s", t0.elapsed().as_secs_f64());

    for (d, i) in cmp.direct.iter().zip(&cmp.indirect) {
        println!(
            "seed {:>2}: direct median {:>7.3} deg (final loss {:>10.4}) | indirect median {:>6.3} deg (final loss {:.6})",
            d.seed,
            d.median_error(),
            d.train_report.epoch_loss.last().unwrap(),
            i.median_error(),
            i.train_report.epoch_loss.last().unwrap(),
        );
    }
    println!(
        "pooled medians: direct {:.3} deg, indirect {:.3} deg",
        cmp.direct_median(),
        cmp.indirect_median()
    );
    println!(
        "wrap-zone (±30 deg) errors >90 deg: direct {}, indirect {}",
        cmp.direct_wrap_failures(30.0, 90.0),
        cmp.indirect_wrap_failures(30.0, 90.0)
    );
    Ok(())
}

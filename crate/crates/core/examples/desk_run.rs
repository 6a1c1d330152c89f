//! Trains a small model on synthetic squares and prints GT-known Loc for
//! every checkpoint.
//!
//! cargo run --release -p coloc-core --example desk_run -- [variant] [iters] [divisor] [batch] [interval] [seed] [lr]

use std::time::Instant;

use coloc_core::data::synthetic_dataset;
use coloc_core::evaluation::evaluate_checkpoint;
use coloc_core::training::{select_peak_checkpoint, train, TrainOptions};
use coloc_core::{AugmentationPolicy, GanConfig, LocalizeOptions, Trainer, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coloc_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let variant: Variant = arg(0, "sn-dcgan").parse()?;
    let mut cfg = GanConfig::new(variant, 32);
    cfg.max_iterations = arg(1, "2000").parse().unwrap();
    cfg.channel_divisor = arg(2, "4").parse().unwrap();
    cfg.batch_size = arg(3, "32").parse().unwrap();
    let interval: u64 = arg(4, "250").parse().unwrap();
    cfg.seed = arg(5, "0").parse().unwrap();
    cfg.learning_rate = arg(6, "0.0002").parse().unwrap();

    let ds = synthetic_dataset(1000, 100, 32, 12, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut trainer = Trainer::new(&cfg, &AugmentationPolicy::default())?;
    let opts = TrainOptions {
        checkpoint_interval: interval,
        out_dir: None,
        keep_models: true,
    };
    let start = Instant::now();
    let records = train(&mut trainer, &ds.train, &opts, &mut ())?;
    println!(
        "trained {} iterations in {:.1}s",
        cfg.max_iterations,
        start.elapsed().as_secs_f64()
    );
    let loc = LocalizeOptions::default();
    let peak = select_peak_checkpoint(&records, |r| {
        let report = evaluate_checkpoint(
            r.gan.as_ref().unwrap(),
            &ds.test,
            &loc,
            &r.iteration.to_string(),
        )?;
        let mean_iou = report.per_image.iter().map(|s| s.iou).sum::<f64>() / report.n as f64;
        println!("{} mean_iou={mean_iou:.3}", report.summary_line());
        Ok(report.gt_known_loc)
    })?;
    println!("peak checkpoint: iteration {}", records[peak].iteration);
    Ok(())
}

//! `coloc`: train GANs, localize objects from discriminator heatmaps, score
//! and visualize the boxes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coloc_core::checkpoint::Checkpoint;
use coloc_core::data::{
    build_dataset, load_image_dir, load_manifest_dataset, save_dataset, save_rgb_png,
    synthetic_dataset, AnnotatedImage,
};
use coloc_core::evaluation::{
    evaluate_checkpoint, ms_ssim_diversity, predict, score_predictions, DiversityReport,
};
use coloc_core::experiment::run_experiment;
use coloc_core::localization::{read_predictions, write_predictions};
use coloc_core::render::{heatmap_gray, panel, sample_grid};
use coloc_core::saliency::cam_batch;
use coloc_core::training::{CheckpointRecord, TrainObserver};
use coloc_core::{Error, ExperimentConfig, Gan, LocalizeOptions, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "coloc",
    version,
    about = "Unsupervised object co-localization from GAN discriminators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a GAN and score every checkpoint on the test split.
    Train(TrainArgs),
    /// Write one JSON prediction line per image.
    Localize(LocalizeArgs),
    /// Score predictions, or a checkpoint, against ground-truth boxes.
    Evaluate(EvaluateArgs),
    /// Write input/heatmap/overlay panels and a generated-sample grid.
    Visualize(VisualizeArgs),
    /// Write a synthetic bright-square dataset (images plus manifest).
    MakeSynthetic(SyntheticArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    root: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of PNG/JPEG images, all at the model's input size.
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    ratio: f64,
    /// Predictions file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Manifest with ground-truth boxes; its test split is scored.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(
        long,
        conflicts_with = "checkpoint",
        required_unless_present = "checkpoint"
    )]
    predictions: Option<PathBuf>,
    /// Localize and score the test split directly.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    ratio: f64,
    /// MS-SSIM pairs for the diversity score; 0 skips it.
    #[arg(long, default_value_t = 0, requires = "checkpoint")]
    diversity_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON path; stdout gets the summary line either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VisualizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(
        long,
        conflicts_with = "manifest",
        required_unless_present = "manifest"
    )]
    images: Option<PathBuf>,
    /// Use the manifest's test split, drawing ground-truth boxes too.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    ratio: f64,
    /// Seed of the 8×8 sample grid.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 12)]
    square: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Input(_) | Error::Image { .. } => 3,
        Error::NonFinite { .. } | Error::Domain(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Localize(a) => cmd_localize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Visualize(a) => cmd_visualize(a),
        Command::MakeSynthetic(a) => cmd_make_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_text(path: &Path) -> coloc_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> coloc_core::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Config file text followed by flag overrides; later keys win.
fn resolve_config(a: &TrainArgs) -> coloc_core::Result<ExperimentConfig> {
    let mut text = read_text(&a.config).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    let mut push = |k: &str, v: &str| text.push_str(&format!("{k} = {v}\n"));
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        push(k.trim(), v.trim());
    }
    if let Some(s) = a.seed {
        push("seed", &s.to_string());
    }
    if let Some(d) = &a.dataset {
        push("dataset", d);
    }
    if let Some(r) = &a.root {
        push("root", &r.display().to_string());
    }
    if let Some(o) = &a.out {
        push("out", &o.display().to_string());
    }
    ExperimentConfig::parse(&dedupe_keys(&text)?)
}

/// Keeps the last assignment of each key so overrides replace file values.
fn dedupe_keys(text: &str) -> coloc_core::Result<String> {
    let mut order = Vec::new();
    let mut values = BTreeMap::new();
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line `{body}` is not key=value")))?;
        let k = k.trim().to_string();
        if !values.contains_key(&k) {
            order.push(k.clone());
        }
        values.insert(k, v.trim().to_string());
    }
    Ok(order
        .iter()
        .map(|k| format!("{k} = {}\n", values[k]))
        .collect())
}

struct Progress;

impl TrainObserver for Progress {
    fn on_checkpoint(
        &mut self,
        record: &CheckpointRecord,
        _trainer: &Trainer,
    ) -> coloc_core::Result<()> {
        if let Some(p) = &record.path {
            log::info!("iteration {}: wrote {}", record.iteration, p.display());
        }
        Ok(())
    }
}

fn cmd_train(a: TrainArgs) -> coloc_core::Result<()> {
    let cfg = resolve_config(&a)?;
    if cfg.dataset == "manifest" && cfg.root.is_none() {
        return Err(Error::Config(
            "dataset=manifest needs root = <manifest file>".into(),
        ));
    }
    let data = build_dataset(&cfg)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let t = Trainer::from_checkpoint(Checkpoint::load(p)?)?;
            if t.config().to_kv() != cfg.gan.to_kv() {
                return Err(Error::Config(format!(
                    "{} was trained with a different model/training configuration",
                    p.display()
                )));
            }
            t
        }
        None => Trainer::new(&cfg.gan, &cfg.augmentation)?,
    };
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join("resolved.conf"), &cfg.to_text())?;
    log::info!(
        "training {} on {} ({} images{}) into {}",
        cfg.gan.variant,
        data.name,
        data.training_images(cfg.include_test_in_training).len(),
        if cfg.include_test_in_training {
            ", test split included"
        } else {
            ""
        },
        out.display()
    );
    let outcome = run_experiment(&cfg, &data, &mut trainer, Some(&out), &mut Progress)?;
    for s in &outcome.scores {
        println!("iteration={} gt_known_loc={}", s.iteration, s.gt_known_loc);
    }
    if let (Some(report), Some(peak)) = (&outcome.peak_report, outcome.peak_score()) {
        println!(
            "peak iteration={} {}",
            peak.iteration,
            report.summary_line()
        );
    }
    println!("checkpoints={}", outcome.checkpoints.len());
    Ok(())
}

fn load_gan(path: &Path) -> coloc_core::Result<(Gan<f32>, String)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.to_gan()?, Checkpoint::id_from_path(path)))
}

fn localize_options(ratio: f64) -> coloc_core::Result<LocalizeOptions> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "ratio must lie in (0, 1], got {ratio}"
        )));
    }
    Ok(LocalizeOptions {
        ratio,
        ..Default::default()
    })
}

fn load_images_or_fail(dir: &Path) -> coloc_core::Result<Vec<AnnotatedImage>> {
    let (images, failures) = load_image_dir(dir)?;
    for (p, e) in &failures {
        log::warn!("skipping {}: {e}", p.display());
    }
    if images.is_empty() {
        return Err(Error::Data(format!(
            "no readable images in {}",
            dir.display()
        )));
    }
    Ok(images)
}

fn cmd_localize(a: LocalizeArgs) -> coloc_core::Result<()> {
    let opts = localize_options(a.ratio)?;
    let (gan, _) = load_gan(&a.checkpoint)?;
    let images = load_images_or_fail(&a.images)?;
    let text = write_predictions(&predict(&gan, &images, &opts)?);
    match &a.out {
        Some(p) => write_text(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> coloc_core::Result<()> {
    let data = load_manifest_dataset(&a.manifest)?;
    let report = match (&a.predictions, &a.checkpoint) {
        (Some(p), _) => {
            let preds = read_predictions(&read_text(p)?)?;
            let gt: BTreeMap<String, _> = data
                .test
                .iter()
                .filter_map(|i| i.gt_box.map(|b| (i.image_id.clone(), b)))
                .collect();
            let ratio = preds.first().map_or(a.ratio, |p| p.ratio);
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("predictions");
            score_predictions(&preds, &gt, ratio, id)?
        }
        (None, Some(c)) => {
            let (mut gan, id) = load_gan(c)?;
            let mut report =
                evaluate_checkpoint(&gan, &data.test, &localize_options(a.ratio)?, &id)?;
            if a.diversity_pairs > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                let (mean, scales) =
                    ms_ssim_diversity(&mut gan, a.diversity_pairs, &mut rng, None)?;
                report.diversity = Some(DiversityReport {
                    ms_ssim_mean: mean,
                    pairs: a.diversity_pairs,
                    seed: a.seed,
                    scales,
                });
            }
            report
        }
        (None, None) => unreachable!("clap requires one of --predictions/--checkpoint"),
    };
    println!("{}", report.summary_line());
    if let Some(d) = &report.diversity {
        println!(
            "ms_ssim={} pairs={} scales={}",
            d.ms_ssim_mean, d.pairs, d.scales
        );
    }
    if let Some(p) = &a.out {
        write_text(p, &report.to_json())?;
    }
    Ok(())
}

fn cmd_visualize(a: VisualizeArgs) -> coloc_core::Result<()> {
    let opts = localize_options(a.ratio)?;
    let (gan, _) = load_gan(&a.checkpoint)?;
    let images = match (&a.images, &a.manifest) {
        (Some(dir), _) => load_images_or_fail(dir)?,
        (None, Some(m)) => load_manifest_dataset(m)?.test,
        (None, None) => unreachable!("clap requires one of --images/--manifest"),
    };
    let preds = predict(&gan, &images, &opts)?;
    let batch = coloc_core::data::stack(&images)?;
    let maps = cam_batch(&gan, &batch)?;
    for ((img, map), pred) in images.iter().zip(&maps).zip(&preds) {
        save_rgb_png(
            &panel(img, map, &pred.bbox()?)?,
            &a.out.join(format!("{}_panel.png", img.image_id)),
        )?;
        let gray = a.out.join("heatmaps").join(format!("{}.png", img.image_id));
        if let Some(parent) = gray.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        heatmap_gray(map)
            .save(&gray)
            .map_err(|source| Error::Image {
                path: gray.clone(),
                source,
            })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let z = gan.sample_latent(64, &mut rng);
    save_rgb_png(
        &sample_grid(&gan.generate(&z)?, 8)?,
        &a.out.join("samples.png"),
    )?;
    println!("panels={} grid=samples.png", images.len());
    Ok(())
}

fn cmd_make_synthetic(a: SyntheticArgs) -> coloc_core::Result<()> {
    let ds = synthetic_dataset(
        a.train,
        a.test,
        a.size,
        a.square,
        &mut ChaCha8Rng::seed_from_u64(a.seed),
    )?;
    let manifest = save_dataset(&ds, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

//! Train, score each checkpoint as it is written, keep the peak.

use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::data::{AnnotatedImage, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_checkpoint, EvalReport};
use crate::localization::LocalizeOptions;
use crate::losses::LossBundle;
use crate::models::Gan;
use crate::training::{
    select_peak_checkpoint, train, CheckpointRecord, TrainObserver, TrainOptions, Trainer,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointScore {
    pub iteration: u64,
    pub path: Option<PathBuf>,
    pub gt_known_loc: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub checkpoints: Vec<CheckpointRecord>,
    /// Empty when the dataset has no boxes.
    pub scores: Vec<CheckpointScore>,
    /// Index into `scores`.
    pub peak: Option<usize>,
    pub peak_report: Option<EvalReport>,
    pub peak_model: Option<Gan<f32>>,
}

impl ExperimentOutcome {
    pub fn peak_score(&self) -> Option<&CheckpointScore> {
        self.peak.map(|i| &self.scores[i])
    }
}

struct PeakTracker<'a> {
    split: Option<&'a [AnnotatedImage]>,
    opts: LocalizeOptions,
    scores: Vec<CheckpointScore>,
    best: Option<(f64, EvalReport, Gan<f32>)>,
    inner: &'a mut dyn TrainObserver,
}

impl TrainObserver for PeakTracker<'_> {
    fn on_step(&mut self, iteration: u64, losses: &LossBundle) -> Result<()> {
        self.inner.on_step(iteration, losses)
    }

    fn on_checkpoint(&mut self, record: &CheckpointRecord, trainer: &Trainer) -> Result<()> {
        if let Some(split) = self.split {
            let id = record
                .path
                .as_deref()
                .map(crate::checkpoint::Checkpoint::id_from_path)
                .unwrap_or_else(|| format!("iter_{:06}", record.iteration));
            let report = evaluate_checkpoint(&trainer.gan, split, &self.opts, &id)?;
            log::info!("{}", report.summary_line());
            let score = report.gt_known_loc;
            self.scores.push(CheckpointScore {
                iteration: record.iteration,
                path: record.path.clone(),
                gt_known_loc: score,
            });
            if self.best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                self.best = Some((score, report, trainer.gan.clone()));
            }
        }
        self.inner.on_checkpoint(record, trainer)
    }
}

/// Trains on the configured split and, when the dataset has boxes, scores
/// every checkpoint on the test split and keeps the best.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &Dataset,
    trainer: &mut Trainer,
    out_dir: Option<&Path>,
    observer: &mut dyn TrainObserver,
) -> Result<ExperimentOutcome> {
    let images = data.training_images(cfg.include_test_in_training);
    if images.is_empty() {
        return Err(Error::Data(format!(
            "dataset `{}` has no training images",
            data.name
        )));
    }
    let opts = TrainOptions {
        checkpoint_interval: cfg.checkpoint_interval,
        out_dir: out_dir.map(Path::to_path_buf),
        keep_models: false,
    };
    let loc = LocalizeOptions {
        ratio: cfg.ratio,
        selection: cfg.box_selection,
        ..Default::default()
    };
    let mut tracker = PeakTracker {
        split: (data.has_boxes && !data.test.is_empty()).then_some(data.test.as_slice()),
        opts: loc,
        scores: Vec::new(),
        best: None,
        inner: observer,
    };
    let checkpoints = train(trainer, &images, &opts, &mut tracker)?;
    let PeakTracker { scores, best, .. } = tracker;
    let peak = if scores.is_empty() {
        None
    } else {
        Some(select_peak_checkpoint(&scores, |s| Ok(s.gt_known_loc))?)
    };
    let (peak_report, peak_model) = match best {
        Some((_, mut report, gan)) => {
            report.config = cfg
                .to_text()
                .lines()
                .filter_map(|l| l.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            (Some(report), Some(gan))
        }
        None => (None, None),
    };
    if let Some(dir) = out_dir {
        let mut tsv = String::from("iteration\tgt_known_loc\n");
        for s in &scores {
            tsv.push_str(&format!("{}\t{}\n", s.iteration, s.gt_known_loc));
        }
        let p = dir.join("checkpoint_scores.tsv");
        std::fs::write(&p, tsv).map_err(|e| Error::io(&p, e))?;
        if let Some(r) = &peak_report {
            let p = dir.join("peak_report.json");
            std::fs::write(&p, r.to_json()).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(ExperimentOutcome {
        checkpoints,
        scores,
        peak,
        peak_report,
        peak_model,
    })
}

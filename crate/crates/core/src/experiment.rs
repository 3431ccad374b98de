//! Multi-run drivers: evaluation protocols, label-noise sweeps and
//! ablations. Every cell is an isolated deterministic run; results are
//! collected in a fixed order regardless of the worker count.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{inject_label_noise, protocol_splits, Corpus, DataError, Protocol, Split};
use crate::trainer::{Checkpoint, Evaluation, LossMode, PaaConfig, RunReport, TrainError, Trainer, Variant};

/// A finished run: final checkpoint and report.
#[derive(Clone, Debug)]
pub struct Run {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
}

/// Trains `config` to completion and keeps the final checkpoint.
pub fn run_training(source: &Corpus, target: &Corpus, eval: Option<&Corpus>, config: &PaaConfig) -> Result<Run, TrainError> {
    let mut trainer = Trainer::new(source, target, eval, config)?;
    trainer.run_until(config.epochs)?;
    let checkpoint = trainer.checkpoint();
    let (_, report) = trainer.finish()?;
    Ok(Run { checkpoint, report })
}

/// Runs `jobs` on `threads` workers (0 = all cores), preserving order.
pub fn parallel_map<T, R, F>(threads: usize, jobs: Vec<T>, f: F) -> Result<Vec<R>, TrainError>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R, TrainError> + Send + Sync,
{
    if threads == 1 {
        return jobs.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
    pool.install(|| jobs.into_par_iter().map(f).collect())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Labeled partitions never contain a test sample, and under
/// leave-one-subject-out the test subject is absent from adaptation data.
/// Samples are identified by (corpus name, id).
pub fn check_split_hygiene(split: &Split, source: &Corpus, target: &Corpus, protocol: Protocol) -> Result<(), DataError> {
    let key = |c: &Corpus, i: usize| (c.name().to_string(), c.samples()[i].id);
    let test: HashSet<_> = split.test.iter().map(|&i| key(target, i)).collect();
    let leak = |what: &str, positions: &[usize], corpus: &Corpus| -> Result<(), DataError> {
        match positions.iter().find(|&&i| test.contains(&key(corpus, i))) {
            Some(&i) => Err(DataError::InvalidArgument(format!(
                "fold {}: test sample {} appears in {what}",
                split.fold,
                corpus.samples()[i].id
            ))),
            None => Ok(()),
        }
    };
    leak("train_source", &split.train_source, source)?;
    if protocol.is_loso() {
        leak("train_target", &split.train_target, target)?;
        if let Some(subject) = split.test_subject {
            if split.train_target.iter().any(|&i| target.samples()[i].subject == subject) {
                return Err(DataError::InvalidArgument(format!(
                    "fold {}: held-out subject {subject} appears in train_target",
                    split.fold
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subject: Option<u32>,
    pub n_train_source: usize,
    pub n_train_target: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub confusion_matrix: Vec<Vec<usize>>,
}

/// Accuracy aggregated over folds. `std_accuracy` is the population
/// standard deviation; `confusion_matrix` sums the fold matrices and
/// `pooled_accuracy` is its trace over its total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub protocol: u8,
    pub source: String,
    pub target: String,
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub std_kind: String,
    pub pooled_accuracy: f64,
    pub confusion_matrix: Vec<Vec<usize>>,
}

/// Per-fold artifacts kept alongside the summary.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub split: Split,
    pub run: Run,
    /// Target ids of the test samples, in split order.
    pub test_ids: Vec<usize>,
    pub predictions: Vec<usize>,
}

pub fn run_protocol(
    source: &Corpus,
    target: &Corpus,
    protocol: Protocol,
    config: &PaaConfig,
    threads: usize,
) -> Result<(ProtocolResult, Vec<FoldRun>), TrainError> {
    config.validate()?;
    if !target.is_labeled() {
        return Err(DataError::NotLabeled(target.name().to_string()).into());
    }
    let splits = protocol_splits(source, target, protocol)?;
    for split in &splits {
        check_split_hygiene(split, source, target, protocol)?;
    }
    let classes = source.classes();
    let runs = parallel_map(threads, splits, |split| {
        let train_source = source.subset(&split.train_source);
        let train_target = target.subset(&split.train_target);
        let test = target.subset(&split.test);
        let run = run_training(&train_source, &train_target, Some(&test), config)?;
        let predictions = run.checkpoint.model.predict(&test.feature_matrix())?;
        let test_ids = test.samples().iter().map(|s| s.id).collect();
        Ok(FoldRun {
            split,
            run,
            test_ids,
            predictions,
        })
    })?;

    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut folds = vec![];
    for fr in &runs {
        let truth: Vec<usize> = fr.split.test.iter().map(|&i| target.samples()[i].label.expect("labeled")).collect();
        let e = Evaluation::new(&truth, &fr.predictions, classes);
        for (row, fold_row) in confusion.iter_mut().zip(&e.confusion_matrix) {
            for (a, b) in row.iter_mut().zip(fold_row) {
                *a += b;
            }
        }
        folds.push(FoldResult {
            fold: fr.split.fold,
            test_subject: fr.split.test_subject,
            n_train_source: fr.split.train_source.len(),
            n_train_target: fr.split.train_target.len(),
            n_test: fr.split.test.len(),
            accuracy: e.accuracy,
            confusion_matrix: e.confusion_matrix,
        });
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let result = ProtocolResult {
        protocol: protocol.id(),
        source: source.name().to_string(),
        target: target.name().to_string(),
        variant: config.variant,
        seed: config.seed,
        config_hash: config.hash(),
        folds,
        mean_accuracy: mean,
        std_accuracy: std,
        std_kind: "population".into(),
        pooled_accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        confusion_matrix: confusion,
    };
    Ok((result, runs))
}

/// Confusion matrix as CSV: a header of predicted class names, then one
/// row per true class.
pub fn confusion_csv(matrix: &[Vec<usize>], class_names: &[String]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(class_names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in class_names.iter().zip(matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub const NOISE_RATIOS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "RaL")]
    Ral,
    #[serde(rename = "SSL")]
    Ssl,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Ral, Strategy::Ssl];

    fn loss(self) -> LossMode {
        match self {
            Strategy::Ral => LossMode::Ral,
            Strategy::Ssl => LossMode::Ssl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub strategy: Strategy,
    pub ratio: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepResult {
    pub variant: Variant,
    pub seed: u64,
    pub ratios: Vec<f64>,
    pub cells: Vec<NoiseCell>,
    /// acc(0.1) - acc(0.4) per strategy.
    pub gap_ral: f64,
    pub gap_ssl: f64,
}

impl NoiseSweepResult {
    pub fn accuracy(&self, strategy: Strategy, ratio: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.ratio == ratio)
            .map(|c| c.accuracy)
    }
}

/// Corrupts source labels at each ratio (noise seeded by the config seed)
/// and trains once per ratio and strategy. Strategies differ only in the
/// classifier loss.
pub fn noise_sweep(source: &Corpus, target: &Corpus, eval: Option<&Corpus>, config: &PaaConfig, threads: usize) -> Result<NoiseSweepResult, TrainError> {
    config.validate()?;
    let noisy: Vec<Corpus> = NOISE_RATIOS
        .iter()
        .map(|&r| inject_label_noise(source, r, config.seed))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(Strategy, usize)> = Strategy::ALL
        .into_iter()
        .flat_map(|s| (0..NOISE_RATIOS.len()).map(move |k| (s, k)))
        .collect();
    let cells = parallel_map(threads, jobs, |(strategy, k)| {
        let mut cfg = config.clone();
        cfg.loss = strategy.loss();
        let run = run_training(&noisy[k], target, eval, &cfg)?;
        Ok(NoiseCell {
            strategy,
            ratio: NOISE_RATIOS[k],
            accuracy: run.report.accuracy(),
        })
    })?;
    let mut result = NoiseSweepResult {
        variant: config.variant,
        seed: config.seed,
        ratios: NOISE_RATIOS.to_vec(),
        cells,
        gap_ral: 0.0,
        gap_ssl: 0.0,
    };
    let gap = |r: &NoiseSweepResult, s| r.accuracy(s, 0.1).expect("swept") - r.accuracy(s, 0.4).expect("swept");
    result.gap_ral = gap(&result, Strategy::Ral);
    result.gap_ssl = gap(&result, Strategy::Ssl);
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// The base configuration unchanged.
    Full,
    NoRalSource,
    NoRalBoth,
    NoPrototypes,
    NoTheta,
    NoDiscriminator,
    NoStage2,
    NoStage3,
    #[serde(rename = "no-stage2+3")]
    NoStage23,
}

impl Ablation {
    pub const ALL: [Ablation; 9] = [
        Ablation::NoRalSource,
        Ablation::NoRalBoth,
        Ablation::NoPrototypes,
        Ablation::NoTheta,
        Ablation::NoDiscriminator,
        Ablation::NoStage2,
        Ablation::NoStage3,
        Ablation::NoStage23,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRalSource => "no-RaL-source",
            Ablation::NoRalBoth => "no-RaL-both",
            Ablation::NoPrototypes => "no-prototypes",
            Ablation::NoTheta => "no-theta",
            Ablation::NoDiscriminator => "no-discriminator",
            Ablation::NoStage2 => "no-stage2",
            Ablation::NoStage3 => "no-stage3",
            Ablation::NoStage23 => "no-stage2+3",
        }
    }

    /// Accepts the names above case-insensitively; `none` means `full`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Ok(Ablation::Full);
        }
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().to_ascii_lowercase() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                format!("unknown ablation switch {s:?} (expected none or one of {})", names.join(", "))
            })
    }

    pub fn is_stage_switch(self) -> bool {
        matches!(self, Ablation::NoStage2 | Ablation::NoStage3 | Ablation::NoStage23)
    }

    pub fn apply(self, base: &PaaConfig) -> Result<PaaConfig, TrainError> {
        if self.is_stage_switch() && base.variant != Variant::M {
            return Err(TrainError::Config(format!(
                "ablation {} needs variant M, base config is {}",
                self.name(),
                base.variant
            )));
        }
        let mut c = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoRalSource => c.loss = LossMode::SslSource,
            Ablation::NoRalBoth => c.loss = LossMode::Ssl,
            Ablation::NoPrototypes => c.prototypes = false,
            Ablation::NoTheta => c.theta_trainable = false,
            Ablation::NoDiscriminator => c.grl = false,
            Ablation::NoStage2 => c.stage2 = false,
            Ablation::NoStage3 => c.stage3 = false,
            Ablation::NoStage23 => {
                c.stage2 = false;
                c.stage3 = false;
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Every switch applicable to `variant`.
    pub fn defaults_for(variant: Variant) -> Vec<Ablation> {
        Ablation::ALL
            .into_iter()
            .filter(|a| variant == Variant::M || !a.is_stage_switch())
            .collect()
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub switch: String,
    pub accuracy: f64,
    pub config_hash: String,
}

pub fn ablate(
    source: &Corpus,
    target: &Corpus,
    eval: Option<&Corpus>,
    base: &PaaConfig,
    switches: &[Ablation],
    threads: usize,
) -> Result<Vec<AblationRow>, TrainError> {
    let configs: Vec<(Ablation, PaaConfig)> = switches
        .iter()
        .map(|&a| Ok((a, a.apply(base)?)))
        .collect::<Result<_, TrainError>>()?;
    parallel_map(threads, configs, |(a, cfg)| {
        let run = run_training(source, target, eval, &cfg)?;
        Ok(AblationRow {
            switch: a.name().to_string(),
            accuracy: run.report.accuracy(),
            config_hash: cfg.hash(),
        })
    })
}

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use paa_core::data::de::{load_raw_signal, sidecar_path, DEFAULT_WINDOW_S};
use paa_core::data::{
    extract_de, gen_synthetic_pair_with_layout, load_export, write_export, Corpus, Layout, Protocol, ShiftSpec, StandardBenchmark,
    DEFAULT_BANDS,
};
use paa_core::experiment::{self, Ablation};
use paa_core::trainer::{load_checkpoint, save_checkpoint, PaaConfig, Trainer, Variant};

use crate::error::CliError;
use crate::{ConfigArgs, CorpusArgs};

pub struct Global {
    pub seed: Option<u64>,
    pub threads: usize,
    pub out: PathBuf,
}

impl Global {
    fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        Ok(self.out.join(name))
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name)?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
        text.push('\n');
        self.write(name, &text)
    }
}

fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

fn load_config(global: &Global, args: &ConfigArgs) -> Result<PaaConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => PaaConfig::load(path)?,
        None => PaaConfig::new(args.variant.parse::<Variant>().map_err(CliError::Usage)?),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn load_corpora(args: &CorpusArgs) -> Result<(Corpus, Corpus), CliError> {
    Ok((load_export(&args.source)?, load_export(&args.target)?))
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// The pinned standard benchmark; other generator flags are ignored.
    #[arg(long)]
    standard: bool,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 3000)]
    n_source: usize,
    #[arg(long, default_value_t = 3000)]
    n_target: usize,
    /// Mean translation of the target.
    #[arg(long, default_value_t = 1.5)]
    shift: f64,
    /// Rotation of the target covariance in radians.
    #[arg(long, default_value_t = 0.5)]
    rotation: f64,
    /// Target class priors, comma separated (default uniform).
    #[arg(long, value_delimiter = ',')]
    prior: Option<Vec<f64>>,
    /// Isotropic noise added to the target.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 15)]
    subjects: u32,
    #[arg(long, default_value_t = 3)]
    sessions: u32,
}

pub fn gen(global: &Global, args: &GenArgs) -> Result<(), CliError> {
    let (source, target) = if args.standard {
        StandardBenchmark::generate()
    } else {
        if args.classes < 2 {
            return Err(CliError::Usage(format!("--classes must be >= 2, got {}", args.classes)));
        }
        if args.dim < 2 {
            return Err(CliError::Usage(format!("--dim must be >= 2, got {}", args.dim)));
        }
        let shift = ShiftSpec {
            mean_shift: args.shift,
            rotation_angle: args.rotation,
            prior_shift: args.prior.clone().unwrap_or_else(|| vec![1.0 / args.classes as f64; args.classes]),
            noise_scale: args.noise,
            seed: 0,
        };
        shift.validate(args.classes).map_err(|e| CliError::Usage(e.to_string()))?;
        let layout = Layout {
            subjects: args.subjects,
            sessions: args.sessions,
        };
        gen_synthetic_pair_with_layout(global.seed.unwrap_or(0), args.dim, args.classes, args.n_source, args.n_target, &shift, layout)
            .map_err(|e| CliError::Usage(e.to_string()))?
    };
    fs::create_dir_all(&global.out).map_err(|e| CliError::io(&global.out, e))?;
    for (corpus, stem) in [(&source, "source"), (&target, "target")] {
        let path = write_export(corpus, &global.out, stem)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn train(
    global: &Global,
    config: &ConfigArgs,
    corpora: &CorpusArgs,
    eval: Option<&Path>,
    resume: Option<&Path>,
    until: Option<usize>,
) -> Result<(), CliError> {
    let (source, target) = load_corpora(corpora)?;
    let eval = eval.map(load_export).transpose()?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            log::info!("resuming {} at epoch {}", path.display(), ckpt.epoch);
            Trainer::resume(ckpt, &source, &target, eval.as_ref())?
        }
        None => Trainer::new(&source, &target, eval.as_ref(), &load_config(global, config)?)?,
    };
    let epochs = until.map_or(trainer.config().epochs, |u| u.min(trainer.config().epochs));
    while trainer.epoch() < epochs {
        trainer.run_epoch()?;
        let h = trainer.history();
        log::info!(
            "epoch {} acc {:.4} l_ral {:.4} l_adv {:.4}",
            trainer.epoch(),
            h.target_acc.last().copied().unwrap_or(f64::NAN),
            h.l_ral.last().copied().unwrap_or(f64::NAN),
            h.l_adv.last().copied().unwrap_or(f64::NAN),
        );
    }
    let ckpt = trainer.checkpoint();
    let config_text = trainer.config().to_text();
    let (_, report) = trainer.finish()?;
    save_checkpoint(&ckpt, &global.path("model.ckpt")?)?;
    global.write("config.cfg", &config_text)?;
    global.write_json("report.json", &report)?;
    println!("accuracy {:.4}", report.accuracy());
    Ok(())
}

pub fn protocol(global: &Global, config: &ConfigArgs, corpora: &CorpusArgs, protocol: u8) -> Result<(), CliError> {
    let config = load_config(global, config)?;
    let (source, target) = load_corpora(corpora)?;
    let protocol = Protocol::try_from(protocol).map_err(|e| CliError::Usage(e.to_string()))?;
    let (result, runs) = experiment::run_protocol(&source, &target, protocol, &config, global.threads)?;

    let mut rows = vec![];
    for fr in &runs {
        save_checkpoint(&fr.run.checkpoint, &global.path(&format!("fold{}.ckpt", fr.split.fold))?)?;
        for ((&pos, &id), &pred) in fr.split.test.iter().zip(&fr.test_ids).zip(&fr.predictions) {
            rows.push(vec![
                fr.split.fold.to_string(),
                fr.split.test_subject.map(|s| s.to_string()).unwrap_or_default(),
                id.to_string(),
                target.samples()[pos].label.map(|l| l.to_string()).unwrap_or_default(),
                pred.to_string(),
            ]);
        }
    }
    let header: Vec<String> = ["fold", "test_subject", "sample_id", "true_label", "predicted_label"]
        .map(String::from)
        .to_vec();
    global.write("predictions.csv", &csv_text(&header, rows))?;
    let confusion = experiment::confusion_csv(&result.confusion_matrix, target.class_names()).map_err(|e| CliError::Data(e.to_string()))?;
    global.write("confusion.csv", &confusion)?;
    global.write_json("protocol.json", &result)?;
    println!(
        "protocol {} folds {} accuracy {:.4} ± {:.4}",
        result.protocol,
        result.folds.len(),
        result.mean_accuracy,
        result.std_accuracy
    );
    Ok(())
}

pub fn noise(global: &Global, config: &ConfigArgs, corpora: &CorpusArgs) -> Result<(), CliError> {
    let config = load_config(global, config)?;
    let (source, target) = load_corpora(corpora)?;
    let sweep = experiment::noise_sweep(&source, &target, None, &config, global.threads)?;
    let header: Vec<String> = ["strategy", "ratio", "accuracy"].map(String::from).to_vec();
    let rows = sweep.cells.iter().map(|c| {
        vec![
            match c.strategy {
                experiment::Strategy::Ral => "RaL".to_string(),
                experiment::Strategy::Ssl => "SSL".to_string(),
            },
            c.ratio.to_string(),
            c.accuracy.to_string(),
        ]
    });
    global.write("noise.csv", &csv_text(&header, rows))?;
    global.write_json("noise.json", &sweep)?;
    println!("gap RaL {:.4} SSL {:.4}", sweep.gap_ral, sweep.gap_ssl);
    Ok(())
}

#[derive(Serialize)]
struct AblationTable {
    variant: Variant,
    seed: u64,
    rows: Vec<experiment::AblationRow>,
}

pub fn ablate(global: &Global, config: &ConfigArgs, corpora: &CorpusArgs, switches: &[String]) -> Result<(), CliError> {
    let config = load_config(global, config)?;
    let switches: Vec<Ablation> = if switches.is_empty() {
        Ablation::defaults_for(config.variant)
    } else {
        switches.iter().map(|s| Ablation::parse(s)).collect::<Result<_, _>>().map_err(CliError::Usage)?
    };
    for a in &switches {
        a.apply(&config)?;
    }
    let (source, target) = load_corpora(corpora)?;
    let rows = experiment::ablate(&source, &target, None, &config, &switches, global.threads)?;
    let header: Vec<String> = ["switch", "accuracy", "config_hash"].map(String::from).to_vec();
    let csv_rows = rows
        .iter()
        .map(|r| vec![r.switch.clone(), r.accuracy.to_string(), r.config_hash.clone()]);
    global.write("ablation.csv", &csv_text(&header, csv_rows))?;
    for r in &rows {
        println!("{:<18} {:.4}", r.switch, r.accuracy);
    }
    global.write_json(
        "ablation.json",
        &AblationTable {
            variant: config.variant,
            seed: config.seed,
            rows,
        },
    )?;
    Ok(())
}

pub fn embed(global: &Global, checkpoint: &Path, corpora: &CorpusArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let (source, target) = load_corpora(corpora)?;
    let model = &ckpt.model;
    let mut header: Vec<String> = ["sample_id", "domain", "true_label", "predicted_label"].map(String::from).to_vec();
    header.extend((1..=model.spec.embed_dim).map(|k| format!("z_{k}")));
    let mut rows = vec![];
    for (domain, corpus) in [("source", &source), ("target", &target)] {
        if corpus.dim() != model.spec.input_dim {
            return Err(CliError::Data(format!(
                "{domain} corpus has {} features, checkpoint expects {}",
                corpus.dim(),
                model.spec.input_dim
            )));
        }
        let x = corpus.feature_matrix();
        let z = model.embed_values(&x)?;
        let pred = model.predict(&x)?;
        for (i, s) in corpus.samples().iter().enumerate() {
            let mut row = vec![
                s.id.to_string(),
                domain.to_string(),
                s.label.map(|l| l.to_string()).unwrap_or_default(),
                pred[i].to_string(),
            ];
            row.extend(z.row(i).iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    global.write("embeddings.csv", &csv_text(&header, rows))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct DeArgs {
    /// Raw f32 little-endian signal; its sidecar defaults to `<raw>.json`.
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Window length in seconds.
    #[arg(long, default_value_t = DEFAULT_WINDOW_S)]
    window: f64,
}

pub fn de(global: &Global, args: &DeArgs) -> Result<(), CliError> {
    let sidecar = args.sidecar.clone().unwrap_or_else(|| sidecar_path(&args.raw));
    let (signal, meta) = load_raw_signal(&args.raw, &sidecar)?;
    let de = extract_de(&signal, meta.fs, &DEFAULT_BANDS, args.window)?;
    let mut header = vec!["window".to_string()];
    header.extend(["delta", "theta", "alpha", "beta", "gamma"].map(|b| format!("{}_{b}", meta.channel_name)));
    let rows = (0..de.rows()).map(|w| {
        let mut r = vec![w.to_string()];
        r.extend(de.row(w).iter().map(|v| v.to_string()));
        r
    });
    global.write("de.csv", &csv_text(&header, rows))?;
    Ok(())
}

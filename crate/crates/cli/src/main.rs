mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vidcap::data::{load_dataset, make_dataset, sample_clip, save_dataset, Dataset, VideoRecord};
use vidcap::language::generate_from_features;
use vidcap::metrics::{predict, score_predictions, PredictionRecord};
use vidcap::model::ModelBundle;
use vidcap::train::{
    bayes_opt_tune, epoch_means, evaluate_loss, load_checkpoint, save_checkpoint, Checkpoint, StageKind, Trainer,
    TuneSpace,
};

use config::{Preset, RunConfig};

#[derive(Parser)]
#[command(name = "vidcap", version, about = "Train and evaluate a small video captioning model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Default settings to start from.
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// JSON file merged over the preset; explicit flags win over both.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    MakeDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run the warm-up and joint stages.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Model initialization seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Search learning rate and weight decay with Bayesian optimization.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "proxy")]
        objective: ObjectiveArg,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long)]
        force: bool,
    },
    /// Print greedy generations as JSON lines.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Only this video.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value = "")]
        question: String,
        /// Clips averaged per video.
        #[arg(long, default_value_t = 1)]
        clips: usize,
        #[arg(long, default_value_t = 12)]
        max_new_tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score this predictions file instead of generating.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        clips: Option<usize>,
        /// Completeness weight; specificity gets the rest.
        #[arg(long)]
        w_c: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Warmup,
    Joint,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    /// Validation loss after a short training run.
    Proxy,
    /// `(x − 0.3)²` on `[0, 1]`.
    Quadratic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failures, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .any(|c| c.downcast_ref::<vidcap::Error>().is_some_and(vidcap::Error::is_numerical));
    if numerical {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeDataset {
            common,
            n_train,
            n_test,
            seed,
            out,
            force,
        } => {
            let mut cfg = RunConfig::load(common.preset, common.config.as_deref())?;
            if let Some(v) = n_train {
                cfg.dataset.n_train = v;
            }
            if let Some(v) = n_test {
                cfg.dataset.n_test = v;
            }
            if let Some(v) = seed {
                cfg.dataset.seed = v;
            }
            prepare_out(&out, force)?;
            let ds = make_dataset(cfg.dataset.n_train, cfg.dataset.n_test, cfg.dataset.seed)?;
            save_dataset(&ds, &out)?;
            write_json(&out.join("config.json"), &cfg)?;
            println!(
                "{}",
                serde_json::json!({"records": ds.len(), "train": ds.train().len(), "test": ds.test().len()})
            );
            Ok(())
        }
        Command::Train {
            common,
            dataset,
            out,
            stage,
            init,
            seed,
            force,
        } => {
            let mut cfg = RunConfig::load(common.preset, common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cmd_train(&cfg, &dataset, &out, stage, init.as_deref(), force)
        }
        Command::Tune {
            common,
            dataset,
            out,
            budget,
            seed,
            objective,
            stage,
            force,
        } => {
            let mut cfg = RunConfig::load(common.preset, common.config.as_deref())?;
            if let Some(b) = budget {
                cfg.tune.budget = b;
            }
            if let Some(s) = seed {
                cfg.tune.seed = s;
            }
            match stage {
                Some(StageArg::Warmup) => cfg.tune.stage = StageKind::Warmup,
                Some(StageArg::Joint) => cfg.tune.stage = StageKind::Joint,
                Some(StageArg::Both) => bail!("tune searches one stage at a time"),
                None => {}
            }
            cmd_tune(&cfg, dataset.as_deref(), &out, objective, force)
        }
        Command::Generate {
            checkpoint,
            dataset,
            id,
            split,
            question,
            clips,
            max_new_tokens,
            seed,
        } => cmd_generate(&checkpoint, &dataset, id.as_deref(), split, &question, clips, max_new_tokens, seed),
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            out,
            predictions,
            clips,
            w_c,
            seed,
            force,
        } => {
            let mut cfg = RunConfig::load(common.preset, common.config.as_deref())?;
            if let Some(c) = clips {
                cfg.eval.test_clips = c;
            }
            if let Some(w) = w_c {
                cfg.eval.weights.w_c = w;
                cfg.eval.weights.w_s = 1.0 - w;
            }
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            cmd_evaluate(&cfg, checkpoint.as_deref(), &dataset, &out, predictions.as_deref(), force)
        }
    }
}

/// Refuses to reuse a non-empty directory unless forced.
fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = out.is_file() || fs::read_dir(out)?.next().is_some();
        if non_empty && !force {
            bail!("output {} already exists; pass --force to replace it", out.display());
        }
        if non_empty {
            if out.is_file() {
                fs::remove_file(out)?;
            } else {
                fs::remove_dir_all(out)?;
            }
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn cmd_train(
    cfg: &RunConfig,
    dataset: &Path,
    out: &Path,
    stage: StageArg,
    init: Option<&Path>,
    force: bool,
) -> Result<()> {
    let ds = open_dataset(dataset)?;
    let train = ds.train();
    if train.is_empty() {
        bail!("dataset {} has no training videos", dataset.display());
    }
    prepare_out(out, force)?;
    write_json(&out.join("config.json"), cfg)?;
    let mut bundle = match init {
        Some(p) => load_checkpoint::<f32>(p).with_context(|| format!("loading {}", p.display()))?.bundle,
        None => ModelBundle::<f32>::new(cfg.model.clone(), cfg.seed)?,
    };
    save_checkpoint(&Checkpoint::model(bundle.clone()), &out.join("init.rvc"))?;
    let stages: &[StageKind] = match stage {
        StageArg::Warmup => &[StageKind::Warmup],
        StageArg::Joint => &[StageKind::Joint],
        StageArg::Both => &[StageKind::Warmup, StageKind::Joint],
    };
    let mut log = BufWriter::new(File::create(out.join("loss.jsonl"))?);
    for &kind in stages {
        let mut trainer = Trainer::new(bundle, cfg.stage(kind).clone())?;
        while !trainer.is_finished() {
            trainer.step(&train)?;
            let rec = trainer.history.last().expect("step recorded");
            writeln!(log, "{}", serde_json::to_string(rec)?)?;
            if trainer.state.step_in_epoch == 0 {
                let means = epoch_means(&trainer.history);
                eprintln!("{kind} epoch {} mean loss {:.4}", means.len() - 1, means[means.len() - 1]);
            }
        }
        log.flush()?;
        save_checkpoint(&trainer.checkpoint(), &out.join(format!("{kind}.rvc")))?;
        bundle = trainer.bundle;
    }
    save_checkpoint(&Checkpoint::model(bundle), &out.join("model.rvc"))?;
    Ok(())
}

fn cmd_tune(cfg: &RunConfig, dataset: Option<&Path>, out: &Path, objective: ObjectiveArg, force: bool) -> Result<()> {
    if cfg.tune.budget < vidcap::train::INITIAL_POINTS {
        bail!("budget {} is below the minimum of {}", cfg.tune.budget, vidcap::train::INITIAL_POINTS);
    }
    let result = match objective {
        ObjectiveArg::Quadratic => {
            prepare_out(out, force)?;
            let space = TuneSpace::interval("x", 0.0, 1.0)?;
            bayes_opt_tune(|x| (x[0] - 0.3).powi(2), &space, cfg.tune.budget, cfg.tune.seed)?
        }
        ObjectiveArg::Proxy => {
            let path = dataset.context("--dataset is required for the proxy objective")?;
            let ds = open_dataset(path)?;
            let (train, val) = (ds.train(), ds.test());
            if train.is_empty() || val.is_empty() {
                bail!("the proxy objective needs both training and test videos");
            }
            prepare_out(out, force)?;
            let base = ModelBundle::<f32>::new(cfg.model.clone(), cfg.seed)?;
            let mut stage = cfg.stage(cfg.tune.stage).clone();
            stage.epochs = cfg.tune.proxy_epochs;
            let mut failure: Option<vidcap::Error> = None;
            let objective = |x: &[f64]| -> f64 {
                let mut s = stage.clone();
                s.learning_rate = 10f64.powf(x[0]);
                s.weight_decay = 10f64.powf(x[1]);
                let value = Trainer::new(base.clone(), s).and_then(|mut t| {
                    t.run(&train)?;
                    evaluate_loss(&t.bundle, &val, cfg.eval.seed)
                });
                match value {
                    Ok(v) => {
                        eprintln!("lr {:.3e} wd {:.3e} -> {v:.4}", 10f64.powf(x[0]), 10f64.powf(x[1]));
                        v
                    }
                    Err(e) if e.is_numerical() => f64::NAN,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            let r = bayes_opt_tune(objective, &TuneSpace::lr_wd(), cfg.tune.budget, cfg.tune.seed)?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            r
        }
    };
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("trace.json"), &result.state)?;
    let best = serde_json::json!({"point": result.best_point, "value": result.best_value});
    write_json(&out.join("best.json"), &best)?;
    println!("{best}");
    Ok(())
}

fn select_videos<'a>(ds: &'a Dataset, id: Option<&str>, split: SplitArg) -> Result<Vec<&'a VideoRecord>> {
    if let Some(id) = id {
        return Ok(vec![ds.get(id).with_context(|| format!("no video `{id}` in the dataset"))?]);
    }
    Ok(match split {
        SplitArg::Train => ds.train(),
        SplitArg::Test => ds.test(),
        SplitArg::All => ds.entries.iter().map(|e| &e.record).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    checkpoint: &Path,
    dataset: &Path,
    id: Option<&str>,
    split: SplitArg,
    question: &str,
    clips: usize,
    max_new_tokens: usize,
    seed: u64,
) -> Result<()> {
    let bundle = load_checkpoint::<f32>(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?
        .bundle;
    let ds = open_dataset(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for v in select_videos(&ds, id, split)? {
        let sampled = (0..clips.max(1))
            .map(|_| sample_clip(v, &bundle.config.sampler, &mut rng))
            .collect::<vidcap::Result<Vec<_>>>()?;
        let features = bundle.encode_clips(&sampled)?;
        let g = generate_from_features(&bundle, &features, &bundle.config.system_text, question, max_new_tokens)?;
        let line = serde_json::json!({
            "id": v.id,
            "question": question,
            "prediction": g.text,
            "truncated": g.truncated,
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    dataset: &Path,
    out: &Path,
    predictions: Option<&Path>,
    force: bool,
) -> Result<()> {
    let ds = open_dataset(dataset)?;
    let test = ds.test();
    if test.is_empty() {
        bail!("dataset {} has no test videos", dataset.display());
    }
    let (preds, name) = match (predictions, checkpoint) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let preds: Vec<PredictionRecord> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            (preds, "predictions".to_string())
        }
        (None, Some(ck)) => {
            let bundle = load_checkpoint::<f32>(ck)
                .with_context(|| format!("loading {}", ck.display()))?
                .bundle;
            let preds = predict(&bundle, &test, &cfg.eval).context("checkpoint does not fit the dataset")?;
            (preds, "model".to_string())
        }
        (None, None) => bail!("pass --checkpoint or --predictions"),
    };
    let report = score_predictions(&preds, &test, cfg.eval.weights)?;
    prepare_out(out, force)?;
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("predictions.json"), &preds)?;
    write_json(&out.join("report.json"), &report)?;
    fs::write(out.join("report.md"), report.to_markdown(&name))?;
    print!("{}", report.to_markdown(&name));
    Ok(())
}

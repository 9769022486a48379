//! Command-line front end: `synth`, `train`, `predict`, `evaluate` and
//! `pipeline`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::dataset_io::{Dataset, Slot, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, load_predictions, write_predictions, EvalReport, Prediction};
use crate::saliency::LevelTag;
use crate::story::{labelled_videos, LabelledVideo, Level, ResponseMode, SegmentSelection, StoryConfig, StoryModel};
use crate::svm::TrainConfig;
use crate::synthgen::{generate, Scenario, SynthConfig};

pub const TRAIN_LOG: &str = "train.log";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "storyline", version, about = "Subject-verb-object prediction from per-frame video features")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "STORYLINE_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthCmd),
    /// Train the classifier stack.
    Train(TrainCmd),
    /// Predict triplets for one split.
    Predict(PredictCmd),
    /// Score predictions against annotations.
    Evaluate(EvaluateCmd),
    /// synth (unless --data is given), train, predict and evaluate.
    Pipeline(PipelineCmd),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "fg_basic")]
    pub scenario: Scenario,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub t_min: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Subject, verb and object vocabulary sizes.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub vocab_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub features_per_class: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub min_window: Option<usize>,
    #[arg(long)]
    pub clutter: Option<f64>,
    #[arg(long)]
    pub annotators: Option<usize>,
    #[arg(long)]
    pub annotator_noise: Option<f64>,
}

impl SynthArgs {
    pub fn config(&self, seed: u64) -> Result<SynthConfig> {
        let mut cfg = SynthConfig::for_scenario(self.scenario, seed);
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        set!(n_train => n_train, n_test => n_test, t_min => t_min, t_max => t_max, dim => d,
             features_per_class => features_per_class, mu => mu, sigma => sigma,
             min_window => min_window, clutter => clutter, annotators => annotators,
             annotator_noise => annotator_noise);
        if let Some(v) = &self.vocab_sizes {
            cfg.vocab = v
                .as_slice()
                .try_into()
                .map_err(|_| Error::Config("--vocab-sizes takes three values".into()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StoryArgs {
    /// Deepest level to train or predict with.
    #[arg(long, default_value = "l3")]
    pub level: Level,
    #[arg(long, default_value_t = 60)]
    pub k: usize,
    #[arg(long, default_value_t = 50)]
    pub q: usize,
    /// Level-2 responses kept per slot; clamped to the smallest vocabulary.
    #[arg(long, default_value_t = 5)]
    pub c: usize,
    /// Build level-3 inputs from three overlapping temporal parts.
    #[arg(long)]
    pub temporal: bool,
    /// Reuse the whole-clip selection inside temporal parts.
    #[arg(long)]
    pub restrict_segments: bool,
    /// Squash level-2 responses with the logistic function.
    #[arg(long)]
    pub logistic: bool,
    /// Append the clip's own level-2 descriptor to the level-3 input.
    #[arg(long)]
    pub append_l2: bool,
    /// SVM regularization constant.
    #[arg(long = "svm-c", default_value_t = 1.0)]
    pub svm_c: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, value_delimiter = ',')]
    pub grid_k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub grid_q: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub grid_c: Vec<usize>,
    #[arg(long)]
    pub allow_negative: bool,
}

impl StoryArgs {
    fn config(&self, seed: u64) -> StoryConfig {
        StoryConfig {
            k: self.k,
            q: self.q,
            c: self.c,
            temporal: self.temporal,
            segment_selection: if self.restrict_segments {
                SegmentSelection::RestrictGlobal
            } else {
                SegmentSelection::Rerun
            },
            response: if self.logistic {
                ResponseMode::Logistic
            } else {
                ResponseMode::Raw
            },
            append_l2: self.append_l2,
            svm: TrainConfig {
                c: self.svm_c,
                tol: self.tol,
                max_iter: self.max_iter,
                seed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub data: PathBuf,
    /// Model directory to write.
    #[arg(long, alias = "model")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub story: StoryArgs,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Predictions file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Level to predict with; defaults to the deepest trained level.
    #[arg(long)]
    pub level: Option<Level>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub allow_negative: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset directory holding the manifest, annotations and taxonomy.
    #[arg(long)]
    pub data: PathBuf,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the table.
    #[arg(long, default_value = "storyline")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct PipelineCmd {
    /// Existing dataset; a synthetic one is generated under OUT/data otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub story: StoryArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?} (expected train or test)")),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Exit codes: 0 success, 1 usage or data error, 2 internal error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Internal(_) => 2,
                _ => 1,
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(cmd) => {
            let cfg = cmd.synth.config(cmd.seed)?;
            generate(&cfg)?.write(&cmd.out)?;
            eprintln!("wrote {} dataset to {}", cfg.scenario, cmd.out.display());
            Ok(())
        }
        Command::Train(cmd) => train(&cmd.data, &cmd.out, &cmd.story, cmd.seed).map(|_| ()),
        Command::Predict(cmd) => {
            let model = StoryModel::load(&cmd.model)?;
            let level = cmd.level.unwrap_or_else(|| deepest(&model));
            predict(&cmd.data, &model, level, cmd.split, cmd.allow_negative, &cmd.out)
        }
        Command::Evaluate(cmd) => {
            let dataset = Dataset::load(&cmd.data, true)?;
            let predictions = load_predictions(&cmd.predictions)?;
            let mut report = score(&dataset, &predictions)?;
            report.config = json!({ "label": cmd.label });
            emit_report(&report, &cmd.label, cmd.json, cmd.out.as_deref())
        }
        Command::Pipeline(cmd) => pipeline(cmd),
    }
}

fn deepest(model: &StoryModel) -> Level {
    model.trained_levels().into_iter().max().unwrap_or(Level::L1)
}

fn level_label(level: Level, cfg: &StoryConfig) -> &'static str {
    match level {
        Level::L1 => LevelTag::L1Fg.name(),
        Level::L2 => LevelTag::L2FgBg.name(),
        Level::L3 => cfg.l3_tag().name(),
    }
}

fn held_out_score(
    fit: &[LabelledVideo],
    held: &[LabelledVideo],
    dataset: &Dataset,
    cfg: StoryConfig,
    level: Level,
) -> Result<f64> {
    let (model, _) = StoryModel::train(fit, dataset.vocabularies.clone(), cfg, level)?;
    let mut hits = 0usize;
    for v in held {
        let pred = model.predict_indices(&v.seq, level)?;
        hits += pred.iter().zip(&v.labels).filter(|(a, b)| a == b).count();
    }
    Ok(hits as f64 / (3 * held.len()).max(1) as f64)
}

/// Picks (k, q, c) by held-out accuracy on a seeded 80/20 split of the
/// training videos; earlier candidates win ties.
fn grid_search(
    videos: &[LabelledVideo],
    dataset: &Dataset,
    base: StoryConfig,
    args: &StoryArgs,
    seed: u64,
    max_c: usize,
    log: &mut String,
) -> Result<StoryConfig> {
    let or_default = |grid: &[usize], v: usize| if grid.is_empty() { vec![v] } else { grid.to_vec() };
    let ks = or_default(&args.grid_k, base.k);
    let qs = or_default(&args.grid_q, base.q);
    let mut cs: Vec<usize> = or_default(&args.grid_c, base.c).into_iter().map(|c| c.min(max_c)).collect();
    cs.dedup();
    if videos.len() < 5 {
        return Err(Error::Data(format!("grid validation needs at least 5 training videos, got {}", videos.len())));
    }
    let mut order: Vec<usize> = (0..videos.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_fit = videos.len() * 4 / 5;
    let fit: Vec<LabelledVideo> = order[..n_fit].iter().map(|&i| videos[i].clone()).collect();
    let held: Vec<LabelledVideo> = order[n_fit..].iter().map(|&i| videos[i].clone()).collect();
    let _ = writeln!(log, "grid: {} fit / {} held-out videos", fit.len(), held.len());

    let mut best: Option<(f64, StoryConfig)> = None;
    for &k in &ks {
        for &q in &qs {
            for &c in &cs {
                let cfg = StoryConfig { k, q, c, ..base };
                let s = held_out_score(&fit, &held, dataset, cfg, args.level)?;
                let _ = writeln!(log, "grid k={k} q={q} c={c} held-out={s:.4}");
                if best.as_ref().is_none_or(|(b, _)| s > *b) {
                    best = Some((s, cfg));
                }
            }
        }
    }
    let (s, cfg) = best.expect("grid is non-empty");
    let _ = writeln!(log, "selected k={} q={} c={} held-out={s:.4}", cfg.k, cfg.q, cfg.c);
    Ok(cfg)
}

fn train(data: &Path, out: &Path, args: &StoryArgs, seed: u64) -> Result<StoryModel> {
    let dataset = Dataset::load(data, args.allow_negative)?;
    let videos = labelled_videos(&dataset, Split::Train)?;
    if videos.is_empty() {
        return Err(Error::Data(format!("{} has no annotated training videos", data.display())));
    }
    let mut log = String::new();
    let max_c = dataset.vocabularies.iter().map(|v| v.len()).min().unwrap_or(0);
    let mut cfg = args.config(seed);
    let _ = writeln!(log, "training videos: {}  d: {}", videos.len(), dataset.manifest.dim);
    if cfg.c > max_c {
        let _ = writeln!(log, "c={} clamped to {max_c} (smallest vocabulary)", cfg.c);
        cfg.c = max_c;
    }
    if !(args.grid_k.is_empty() && args.grid_q.is_empty() && args.grid_c.is_empty()) {
        cfg = grid_search(&videos, &dataset, cfg, args, seed, max_c, &mut log)?;
    }
    let _ = writeln!(
        log,
        "config: k={} q={} c={} temporal={} level={} C={} tol={} max_iter={} seed={}",
        cfg.k, cfg.q, cfg.c, cfg.temporal, args.level, cfg.svm.c, cfg.svm.tol, cfg.svm.max_iter, seed
    );
    let (model, accuracy) = StoryModel::train(&videos, dataset.vocabularies.clone(), cfg, args.level)?;
    for acc in &accuracy {
        let cells: Vec<String> = Slot::ALL
            .iter()
            .map(|&s| format!("{}={:.4}", s.name(), acc.accuracy[s.index()]))
            .collect();
        let _ = writeln!(log, "{} training accuracy: {}", acc.level, cells.join(" "));
    }
    model.save(out)?;
    let path = out.join(TRAIN_LOG);
    fs::write(&path, &log).map_err(|e| Error::io(&path, e))?;
    eprint!("{log}");
    Ok(model)
}

fn predict(data: &Path, model: &StoryModel, level: Level, split: Split, allow_negative: bool, out: &Path) -> Result<()> {
    use rayon::prelude::*;
    let dataset = Dataset::load(data, allow_negative)?;
    model.banks(level)?;
    let entries: Vec<_> = dataset.manifest.split(split).collect();
    let predictions = entries
        .par_iter()
        .map(|entry| {
            let seq = dataset.features(entry)?;
            Ok(Prediction::new(entry.video_id.clone(), model.predict_svo(&seq, level)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_predictions(&predictions, out)?;
    eprintln!("wrote {} predictions to {}", predictions.len(), out.display());
    Ok(())
}

fn score(dataset: &Dataset, predictions: &[Prediction]) -> Result<EvalReport> {
    evaluate(
        predictions,
        &dataset.annotations,
        dataset.taxonomy.as_ref(),
        &dataset.manifest.ids(),
    )
}

fn emit_report(report: &EvalReport, label: &str, as_json: bool, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    if let Some(path) = out {
        fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    if as_json {
        print!("{text}");
    } else {
        print!("{}", report.render_table(label));
    }
    Ok(())
}

fn pipeline(cmd: PipelineCmd) -> Result<()> {
    fs::create_dir_all(&cmd.out).map_err(|e| Error::io(&cmd.out, e))?;
    let mut echo = serde_json::Map::new();
    let data = match &cmd.data {
        Some(dir) => dir.clone(),
        None => {
            let cfg = cmd.synth.config(cmd.seed)?;
            let dir = cmd.out.join("data");
            generate(&cfg)?.write(&dir)?;
            echo.insert("synth".into(), serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?);
            dir
        }
    };
    let model_dir = cmd.out.join("model");
    let model = train(&data, &model_dir, &cmd.story, cmd.seed)?;
    let level = cmd.story.level;
    let predictions_path = cmd.out.join(PREDICTIONS_FILE);
    predict(&data, &model, level, Split::Test, cmd.story.allow_negative, &predictions_path)?;

    let dataset = Dataset::load(&data, cmd.story.allow_negative)?;
    let predictions = load_predictions(&predictions_path)?;
    let mut report = score(&dataset, &predictions)?;
    let cfg = &model.config;
    echo.insert("level".into(), json!(level.name()));
    echo.insert(
        "story".into(),
        serde_json::to_value(cfg).map_err(|e| Error::Internal(e.to_string()))?,
    );
    report.config = serde_json::Value::Object(echo);
    emit_report(&report, level_label(level, cfg), cmd.json, Some(&cmd.out.join(REPORT_FILE)))
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use laco::aux::Mode;
use laco::data::{load_corpus, read_instances, Corpus, CorpusPaths, Split, SynthSpec};
use laco::eval::{conditional_kl, EvalReport, GroupBoundaries, PredFile, KL_EPSILON};
use laco::train::{evaluate, train, Checkpoint, RunConfig, TrainError};

#[derive(Parser)]
#[command(name = "laco", version, about = "Multi-label text classification with label co-occurrence tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, curve and predictions to --out-dir.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Metrics for a prediction file, or the conditional KL between two files.
    Analyze(AnalyzeArgs),
    /// Write a synthetic corpus and its generative co-occurrence table.
    GenSynth(SynthArgs),
    /// Print dataset statistics for corpus files.
    Stats(StatsArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// File with one label name per line fixing the label space.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Extra overrides, e.g. `--set hidden=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum RefFormat {
    /// Use the predicted column of a prediction file.
    Pred,
    /// Use the label column of a corpus file.
    Corpus,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Prediction file to report on.
    pred: Option<PathBuf>,
    /// Conditional KL of MODEL against REF.
    #[arg(long, num_args = 2, value_names = ["REF", "MODEL"])]
    kl: Option<Vec<PathBuf>>,
    #[arg(long, value_enum, default_value = "pred")]
    ref_format: RefFormat,
    /// Training corpus for the frequency-group breakdown.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Rank cut points for the four groups, e.g. `5,10,15`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    group_ranks: Option<Vec<usize>>,
    #[arg(long, default_value_t = KL_EPSILON)]
    epsilon: f64,
    /// Also write the report as key,value CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    labels: usize,
    #[arg(long, default_value_t = 1.5)]
    exponent: f64,
    /// Number of hub labels other labels attach to.
    #[arg(long, default_value_t = 4)]
    hubs: usize,
    #[arg(long, default_value_t = 0.9)]
    strong: f64,
    #[arg(long, default_value_t = 0.1)]
    weak: f64,
    #[arg(long, default_value_t = 1000)]
    train_docs: usize,
    #[arg(long, default_value_t = 100)]
    valid_docs: usize,
    #[arg(long, default_value_t = 100)]
    test_docs: usize,
    #[arg(long, default_value_t = 0.5)]
    noise_rate: f64,
    #[arg(long, default_value_t = 4)]
    keywords: usize,
}

#[derive(Args)]
struct StatsArgs {
    /// Corpus files; statistics cover all of them together.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

fn read_label_file(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        cfg.set(k, v)?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = Some(v);
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.threshold {
        cfg.threshold = v;
    }
    let d = args.data;
    cfg.train = d.train.or(cfg.train);
    cfg.valid = d.valid.or(cfg.valid);
    cfg.test = d.test.or(cfg.test);
    cfg.labels = d.labels.or(cfg.labels);
    cfg.out_dir = args.out_dir.or(cfg.out_dir);
    let out_dir = cfg.out_dir.clone().context("--out-dir is required")?;
    let train_path = cfg.train.clone().context("--train is required")?;
    let corpus = load_corpus(&CorpusPaths {
        train: train_path,
        valid: cfg.valid.clone(),
        test: cfg.test.clone(),
        labels: cfg.labels.clone(),
    })?;

    let outcome = match train(&cfg, &corpus) {
        Ok(o) => o,
        Err(TrainError::Diverged { step, reason, last_good }) => {
            let path = out_dir.join("last_good.ckpt");
            last_good.save(&path)?;
            bail!("training diverged at step {step} ({reason}); last good checkpoint written to {}", path.display());
        }
        Err(TrainError::Other(e)) => return Err(e.into()),
    };
    outcome.save(&out_dir)?;
    println!(
        "stopped after step {} ({:?}); best validation micro-F1 {:.4} at step {}",
        outcome.last.step, outcome.stop, outcome.best.best_micro_f1, outcome.best.step
    );
    if !corpus.test.is_empty() {
        let (report, pf) = evaluate(&outcome.best, &corpus, Split::Test)?;
        pf.write(&out_dir.join("test_pred.tsv"))?;
        write(&out_dir.join("test_report.csv"), &report.to_csv())?;
        print!("{}", report.to_text());
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let mut ckpt = Checkpoint::load(&args.checkpoint)?;
    if let Some(t) = args.threshold {
        ckpt.config.threshold = t;
    }
    let d = args.data;
    let space = match &d.labels {
        Some(p) => read_label_file(p)?,
        None => ckpt.labels.clone(),
    };
    let read = |p: &Option<PathBuf>| -> Result<Vec<laco::data::Instance>> {
        Ok(match p {
            Some(p) => read_instances(p)?,
            None => Vec::new(),
        })
    };
    let corpus = Corpus::from_splits(read(&d.train)?, read(&d.valid)?, read(&d.test)?, Some(space))?;
    let (report, pf) = evaluate(&ckpt, &corpus, args.split.into())?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        pf.write(&dir.join("pred.tsv"))?;
        write(&dir.join("report.txt"), &report.to_text())?;
        write(&dir.join("report.csv"), &report.to_csv())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn reference_sets(path: &Path, format: RefFormat) -> Result<Vec<Vec<String>>> {
    Ok(match format {
        RefFormat::Corpus => read_instances(path)?.into_iter().map(|i| i.labels).collect(),
        RefFormat::Pred => {
            let pf = PredFile::read(path, None)?;
            pf.pred
                .iter()
                .map(|s| s.iter().map(|&l| pf.labels[l].clone()).collect())
                .collect()
        }
    })
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    if let Some(files) = &args.kl {
        let reference = reference_sets(&files[0], args.ref_format)?;
        let model = reference_sets(&files[1], RefFormat::Pred)?;
        let mut space: Vec<String> = reference.iter().chain(&model).flatten().cloned().collect();
        space.sort();
        space.dedup();
        let ids = |sets: &[Vec<String>]| -> Vec<Vec<usize>> {
            sets.iter()
                .map(|s| s.iter().map(|l| space.binary_search(l).expect("in space")).collect())
                .collect()
        };
        let kl = conditional_kl(&ids(&reference), &ids(&model), space.len(), args.epsilon);
        println!("kl_distance\t{:?}", kl.value);
        if kl.degenerate {
            println!("note\treference has no co-occurring label pairs");
        }
        return Ok(());
    }
    let Some(path) = &args.pred else {
        bail!("give a prediction file or --kl REF MODEL");
    };
    let mut pf = PredFile::read(path, None)?;
    let mut report = EvalReport::new(&pf);
    if let Some(train_path) = &args.train {
        let docs = read_instances(train_path)?;
        let corpus = Corpus::from_splits(docs, vec![], vec![], None)?;
        let mut space = corpus.labels.clone();
        space.extend(pf.labels.iter().cloned());
        space.sort();
        space.dedup();
        pf = pf.reindex(&space)?;
        let mut freq = vec![0usize; space.len()];
        for d in &corpus.train {
            for l in &d.labels {
                freq[space.binary_search(l).expect("in space")] += 1;
            }
        }
        let boundaries = match &args.group_ranks {
            Some(r) => GroupBoundaries::Ranks([r[0], r[1], r[2]]),
            None => GroupBoundaries::Mass,
        };
        report = EvalReport::new(&pf).with_groups(&pf, &freq, &boundaries);
    }
    report = report.with_kl(&pf, &pf.gold, args.epsilon);
    if let Some(csv) = &args.csv {
        write(csv, &report.to_csv())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn run_gen_synth(args: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::long_tail(args.labels, args.exponent, args.hubs, args.strong, args.weak);
    spec.train_docs = args.train_docs;
    spec.valid_docs = args.valid_docs;
    spec.test_docs = args.test_docs;
    spec.noise_rate = args.noise_rate;
    spec.keywords_per_label = args.keywords;
    let synth = spec.generate(args.seed)?;
    synth.save(&args.out_dir)?;
    println!(
        "wrote {} / {} / {} documents over {} labels to {}",
        synth.corpus.train.len(),
        synth.corpus.valid.len(),
        synth.corpus.test.len(),
        synth.corpus.num_labels(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_stats(args: StatsArgs) -> Result<()> {
    let mut docs = Vec::new();
    for f in &args.files {
        docs.extend(read_instances(f)?);
    }
    let space = args.labels.as_deref().map(read_label_file).transpose()?;
    let corpus = Corpus::from_splits(docs, vec![], vec![], space)?;
    print!("{}", corpus.stats()?.to_text());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LACO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Analyze(a) => run_analyze(a),
        Command::GenSynth(a) => run_gen_synth(a),
        Command::Stats(a) => run_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

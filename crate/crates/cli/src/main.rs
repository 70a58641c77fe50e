//! `dgif`: train, evaluate, predict, generate synthetic data and inspect
//! the interaction graph.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dgif_core::data_io::{generate_synthetic, parse_corpus, serialize_corpus, split_corpus, Sample, SyntheticSpec};
use dgif_core::evaluation::{evaluate, write_predictions};
use dgif_core::label_space::Verbalizer;
use dgif_core::training::{load_checkpoint, save_checkpoint, train_with_hooks, EpochLog, TrainConfig, TrainHooks};
use dgif_core::write_atomic;

#[derive(Parser)]
#[command(name = "dgif", version, about = "Joint multi-intent detection and slot filling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Score predictions against a gold corpus.
    Eval(EvalArgs),
    /// Write a prediction dump for a corpus or plain-text utterances.
    Predict(PredictArgs),
    /// Generate a synthetic corpus and its grammar manifest.
    GenData(GenArgs),
    /// Dump relevance and attention matrices for one utterance as CSV.
    Inspect(InspectArgs),
}

/// Hyper-parameter overrides, applied after `--config`.
#[derive(Args, Default)]
struct Overrides {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Relevance threshold in [0, 1) or `auto` (1/n).
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    gat_layers: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    disable_lar: bool,
    #[arg(long)]
    disable_lsi: bool,
    #[arg(long)]
    disable_gil: bool,
    #[arg(long, value_name = "BOOL")]
    teacher_forcing: Option<bool>,
    /// Any other config field, e.g. `--set dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("delta", self.delta.clone());
        put("window", self.window.map(|v| v.to_string()));
        put("gat_layers", self.gat_layers.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("teacher_forcing", self.teacher_forcing.map(|v| v.to_string()));
        for (flag, key) in [
            (self.disable_lar, "disable_lar"),
            (self.disable_lsi, "disable_lsi"),
            (self.disable_gil, "disable_gil"),
        ] {
            if flag {
                put(key, Some("true".into()));
            }
        }
        for kv in &self.extra {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            pairs.push((k.trim().to_string(), v.to_string()));
        }
        for (k, v) in pairs {
            config.set(&k, &v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    train: PathBuf,
    /// Validation corpus used to pick the best epoch.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Tab-separated label verbalization overrides.
    #[arg(long)]
    verbalizer: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold corpus.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to predict with.
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    checkpoint: Option<PathBuf>,
    /// Existing prediction dump to score instead of running a model.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Where to write the prediction dump (checkpoint mode).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus whose utterances are labelled (gold labels are ignored).
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    data: Option<PathBuf>,
    /// Plain text, one whitespace-tokenized utterance per line.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Output dump; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    intents: usize,
    #[arg(long, default_value_t = 1)]
    slot_types: usize,
    #[arg(long, default_value_t = 3)]
    templates: usize,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    #[arg(long, default_value_t = 2)]
    max_intents: usize,
    /// Comma-separated split sizes written as train/valid/test files.
    #[arg(long, value_delimiter = ',')]
    split: Vec<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Whitespace-tokenized utterance.
    #[arg(long)]
    utterance: String,
    /// Directory for the CSV files; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let level = std::env::var("DGIF_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::GenData(a) => cmd_gen(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn load(path: &Path) -> Result<Vec<Sample>> {
    Ok(parse_corpus(path)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = a.overrides.resolve()?;
    let verbalizer = match &a.verbalizer {
        Some(p) => Verbalizer::default().with_override_file(p)?,
        None => Verbalizer::default(),
    };
    let train_set = load(&a.train)?;
    if train_set.is_empty() {
        bail!("training corpus {} is empty", a.train.display());
    }
    let valid = match &a.valid {
        Some(p) => load(p)?,
        None => Vec::new(),
    };
    log::info!(
        "training on {} samples ({} validation) for {} epochs",
        train_set.len(),
        valid.len(),
        config.epochs
    );

    let mut log_text = String::new();
    let mut on_epoch = |e: &EpochLog| {
        println!("{e}");
        let _ = writeln!(log_text, "{e}");
    };
    let hooks = TrainHooks {
        checkpoint_dir: Some(&a.checkpoint),
        on_epoch: Some(&mut on_epoch),
    };
    let out = train_with_hooks(&train_set, &valid, &config, &verbalizer, hooks)?;
    save_checkpoint(&a.checkpoint, &out.model, &out.best)?;
    write_atomic(&a.checkpoint.join("train_log.txt"), log_text.as_bytes())?;
    log::info!(
        "best epoch {} saved to {}",
        out.best_epoch,
        a.checkpoint.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let gold = load(&a.data)?;
    let pred = match (&a.pred, &a.checkpoint) {
        (Some(p), _) => load(p)?,
        (None, Some(dir)) => {
            let (model, store) = load_checkpoint(dir)?;
            let pred = model.predict_samples(&store, &gold)?;
            if let Some(out) = &a.out {
                write_predictions(out, &pred)?;
            }
            pred
        }
        (None, None) => bail!("eval needs --checkpoint or --pred"),
    };
    let tokens_match = gold.len() == pred.len() && gold.iter().zip(&pred).all(|(g, p)| g.tokens == p.tokens);
    if !tokens_match {
        bail!("predictions do not align with the gold corpus (different utterances)");
    }
    let report = evaluate(&gold, &pred)?;
    print!("{}\n{}", report.to_table(), report.to_kv());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let (model, store) = load_checkpoint(&a.checkpoint)?;
    let utterances: Vec<Vec<String>> = match (&a.data, &a.text) {
        (Some(p), _) => load(p)?.into_iter().map(|s| s.tokens).collect(),
        (None, Some(p)) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
            .filter(|t| !t.is_empty())
            .collect(),
        (None, None) => bail!("predict needs --data or --text"),
    };
    let preds = model.predict(&store, &utterances)?;
    let vocabs = model.vocabs();
    let samples = utterances
        .into_iter()
        .zip(preds)
        .map(|(tokens, p)| {
            let slots = p.slots.iter().map(|&i| vocabs.slots.name(i).to_string()).collect();
            let intents = p
                .intents
                .selected
                .iter()
                .map(|&i| vocabs.intents.name(i).to_string())
                .collect();
            Sample::new(tokens, slots, intents)
        })
        .collect::<dgif_core::Result<Vec<_>>>()?;
    match &a.out {
        Some(path) => write_predictions(path, &samples)?,
        None => print!("{}", serialize_corpus(&samples)),
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        intents: a.intents,
        slot_types_per_intent: a.slot_types,
        templates_per_intent: a.templates,
        samples: a.samples,
        max_intents: a.max_intents,
        seed: a.seed,
    };
    let corpus = generate_synthetic(&spec)?;
    write_atomic(&a.out.join("corpus.txt"), serialize_corpus(&corpus.samples).as_bytes())?;
    write_atomic(&a.out.join("manifest.txt"), corpus.manifest.as_bytes())?;
    if !a.split.is_empty() {
        let names = ["train.txt", "valid.txt", "test.txt"];
        if a.split.len() > names.len() {
            bail!("--split takes at most three sizes");
        }
        let parts = split_corpus(&corpus.samples, &a.split)?;
        for (name, part) in names.iter().zip(parts) {
            write_atomic(&a.out.join(name), serialize_corpus(&part).as_bytes())?;
        }
    }
    log::info!("wrote {} samples to {}", corpus.samples.len(), a.out.display());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let (model, store) = load_checkpoint(&a.checkpoint)?;
    let tokens: Vec<&str> = a.utterance.split_whitespace().collect();
    if tokens.is_empty() {
        bail!("empty utterance");
    }
    let ins = model.inspect(&store, &tokens)?;
    let mut files: Vec<(String, String)> = Vec::new();
    match (ins.relevance_csv(), ins.threshold) {
        (Some(csv), Some(t)) => {
            files.push(("relevance.csv".into(), csv));
            log::info!("relevance threshold {t}");
        }
        _ => log::warn!("graph is disabled in this checkpoint; no relevance matrix"),
    }
    for (l, layer) in ins.attention.iter().enumerate() {
        for h in 0..layer.len() {
            if let Some(csv) = ins.attention_csv(l, h) {
                files.push((format!("attention_l{l}_h{h}.csv"), csv));
            }
        }
    }
    println!("intents: {}", ins.intents.join(" "));
    for (name, csv) in files {
        match &a.out {
            Some(dir) => write_atomic(&dir.join(&name), csv.as_bytes())?,
            None => print!("# {name}\n{csv}"),
        }
    }
    Ok(())
}

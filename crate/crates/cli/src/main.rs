//! `waml`: generate data, reduce graphs, train, evaluate, export embeddings,
//! verify gradients and run ablations from one flat config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use waml::ablation;
use waml::config::RunConfig;
use waml::eval::encode_all;
use waml::gradcheck::composite_check;
use waml::graph::{load_snapshot, save_snapshot};
use waml::pipeline::{
    content_table, evaluate_split, index_pairs, load_model, read_pairs, reduce, train_model, RawData,
};
use waml::synth::generate;
use waml::train::Checkpoint;
use waml::{Error, TensorError};

/// Largest relative gradient error `grad-check` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "waml", version, about = "Seller-product retrieval with weighted-averaging graph convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable. Applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Inputs {
    /// Reduced graph snapshot.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Product content vectors (`WAMLEMB1`).
    #[arg(long)]
    content: Option<PathBuf>,
    /// Product text (`product<TAB>text`) for the text-stub content source.
    #[arg(long)]
    texts: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted clusters.
    GenSynth {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project, threshold and filter a raw graph; write a snapshot and a report.
    Reduce {
        #[command(flatten)]
        common: Common,
        /// Raw node list (`id<TAB>type`).
        #[arg(long)]
        nodes: Option<PathBuf>,
        /// Raw typed edge list (`src<TAB>dst<TAB>type`).
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Candidate product ids, one per line.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Snapshot path; the report goes next to it as `<out>.report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write a checkpoint plus `<out>.log`.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Checkpoint path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint by Recall@K and write a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Trained checkpoint (`WAMLCKPT`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ground-truth `seller<TAB>product` pairs; the test split is used otherwise.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Cutoff for Recall@K; overrides `k`.
        #[arg(long)]
        k: Option<usize>,
        /// Report path; printed to stdout as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export final embeddings of every node (`WAMLEMB1`).
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Trained checkpoint (`WAMLCKPT`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Embedding file; the config echo goes to `<out>.echo`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full model on a small graph.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Number of random initializations to check.
        #[arg(long, default_value_t = 3)]
        trials: u64,
    },
    /// Train each ablation row on one dataset and write a comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Ground-truth `seller<TAB>product` pairs; defaults to the held-out test split.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Run single-change variants of the full model instead of the ladder.
        #[arg(long)]
        variants: bool,
        /// Table path; the table is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 1,
            Error::Numerical(_) | Error::Tensor(TensorError::NonFinite { .. }) => 3,
            Error::Data(_) | Error::Graph(_) | Error::Io(_) | Error::Tensor(_) => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn load_config(common: &Common, base: Option<&str>, paths: &[(&str, &Option<PathBuf>)]) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(echo) = base {
        cfg.apply_text(echo, "checkpoint echo")?;
    }
    if let Some(file) = &common.config {
        let text = fs::read_to_string(file).map_err(|e| Error::config(format!("{}: {e}", file.display())))?;
        cfg.apply_text(&text, &file.display().to_string())?;
    }
    for (key, path) in paths {
        if let Some(p) = path {
            cfg.set(key, &p.to_string_lossy())?;
        }
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn input_paths(inputs: &Inputs) -> Vec<(&'static str, &Option<PathBuf>)> {
    vec![("graph", &inputs.graph), ("content", &inputs.content), ("texts", &inputs.texts)]
}

fn required(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, Error> {
    path.clone().ok_or_else(|| Error::config(format!("`{key}` path is required")))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn commented(echo: &str) -> String {
    echo.lines().map(|l| format!("# {l}\n")).collect()
}

/// Reads the checkpoint given by flag or config and the config it was trained with.
fn checkpoint_config(
    common: &Common,
    inputs: &Inputs,
    checkpoint: &Option<PathBuf>,
    extra: &[(&'static str, &Option<PathBuf>)],
) -> Result<(RunConfig, Checkpoint), Error> {
    let mut paths = input_paths(inputs);
    paths.push(("checkpoint", checkpoint));
    paths.extend_from_slice(extra);
    // resolve the checkpoint path first, then layer settings over its echo
    let path = required(&load_config(common, None, &paths)?.paths.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(&path)?;
    Ok((load_config(common, Some(&ckpt.echo), &paths)?, ckpt))
}

fn gen_synth(common: &Common, out: &Option<PathBuf>) -> Outcome {
    let cfg = load_config(common, None, &[("out", out)])?;
    let dir = required(&cfg.paths.out, "out")?;
    let data = generate(&cfg.synth)?;
    data.write(&dir, &cfg.synth, &cfg.echo())?;
    println!(
        "wrote {} nodes, {} edges, {} candidates, {} ground-truth pairs to {}",
        data.nodes.len(),
        data.edges.len(),
        data.candidates.len(),
        data.ground_truth.len(),
        dir.display()
    );
    Ok(())
}

fn reduce_cmd(
    common: &Common,
    nodes: &Option<PathBuf>,
    edges: &Option<PathBuf>,
    candidates: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Outcome {
    let cfg = load_config(
        common,
        None,
        &[("nodes", nodes), ("edges", edges), ("candidates", candidates), ("out", out)],
    )?;
    let out = required(&cfg.paths.out, "out")?;
    let raw = RawData::load(&cfg)?;
    let (graph, report) = reduce(&raw, &cfg)?;
    save_snapshot(&graph, &out)?;
    let echo = cfg.echo();
    fs::write(with_suffix(&out, ".echo"), &echo)?;
    let json = report.to_json_with_echo(&echo);
    fs::write(with_suffix(&out, ".report.json"), format!("{json}\n"))?;
    println!("{}", report.to_json());
    Ok(())
}

fn train_cmd(common: &Common, inputs: &Inputs, out: &Option<PathBuf>) -> Outcome {
    let mut paths = input_paths(inputs);
    paths.push(("out", out));
    let cfg = load_config(common, None, &paths)?;
    let out = required(&cfg.paths.out, "out")?;
    let graph = load_snapshot(&required(&cfg.paths.graph, "graph")?)?;
    let content = content_table(&graph, &cfg)?;
    let trained = train_model(&graph, &content, &cfg)?;
    let echo = cfg.echo();
    trained.checkpoint(&echo).save(&out)?;
    let log = format!("{}# epoch\tloss\tvalidation_recall\tseconds\n{}", commented(&echo), trained.outcome.log_text());
    fs::write(with_suffix(&out, ".log"), log)?;
    let best = &trained.outcome.log[trained.outcome.best_epoch.saturating_sub(1)];
    println!(
        "best epoch {} of {}: validation recall@{} = {:.6}",
        trained.outcome.best_epoch,
        trained.outcome.log.len(),
        cfg.eval.k,
        best.validation_recall
    );
    Ok(())
}

fn evaluate_cmd(
    common: &Common,
    inputs: &Inputs,
    checkpoint: &Option<PathBuf>,
    truth: &Option<PathBuf>,
    k: Option<usize>,
    out: &Option<PathBuf>,
) -> Outcome {
    let (mut cfg, ckpt) = checkpoint_config(common, inputs, checkpoint, &[("truth", truth), ("out", out)])?;
    if let Some(k) = k {
        cfg.set("k", &k.to_string())?;
    }
    let graph = load_snapshot(&required(&cfg.paths.graph, "graph")?)?;
    let content = content_table(&graph, &cfg)?;
    let (split, encoder, params) = load_model(&graph, &content, &cfg, ckpt)?;
    let table = encode_all(&encoder, &params)?;
    let truth_pairs = match &cfg.paths.truth {
        Some(p) => Some(index_pairs(&graph, &read_pairs(p)?)),
        None => None,
    };
    let report = evaluate_split(&table, &graph, &split, truth_pairs.as_deref(), &cfg)?;
    let text = report.to_text(&cfg.echo());
    if let Some(path) = &cfg.paths.out {
        fs::write(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn embed_cmd(common: &Common, inputs: &Inputs, checkpoint: &Option<PathBuf>, out: &Option<PathBuf>) -> Outcome {
    let (cfg, ckpt) = checkpoint_config(common, inputs, checkpoint, &[("out", out)])?;
    let out = required(&cfg.paths.out, "out")?;
    let graph = load_snapshot(&required(&cfg.paths.graph, "graph")?)?;
    let content = content_table(&graph, &cfg)?;
    let (_, encoder, params) = load_model(&graph, &content, &cfg, ckpt)?;
    let table = encode_all(&encoder, &params)?;
    table.export(&graph, &out)?;
    fs::write(with_suffix(&out, ".echo"), cfg.echo())?;
    println!("wrote {} x {} embeddings to {}", graph.node_count(), table.dim(), out.display());
    Ok(())
}

fn grad_check(common: &Common, trials: u64) -> Outcome {
    let cfg = load_config(common, None, &[])?;
    let mut worst: f64 = 0.0;
    for t in 0..trials.max(1) {
        let seed = cfg.train.seed.wrapping_add(t);
        let report = composite_check(seed, 1e-5)?;
        println!(
            "seed {seed}: compared {} entries, skipped {}, max relative error {:.3e}",
            report.compared, report.skipped, report.max_rel_error
        );
        worst = worst.max(report.max_rel_error);
    }
    if worst < GRADCHECK_TOLERANCE {
        println!("grad-check passed (max relative error {worst:.3e} < {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("grad-check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"),
        })
    }
}

fn ablate_cmd(
    common: &Common,
    inputs: &Inputs,
    truth: &Option<PathBuf>,
    variants: bool,
    out: &Option<PathBuf>,
) -> Outcome {
    let mut paths = input_paths(inputs);
    paths.push(("truth", truth));
    paths.push(("out", out));
    let cfg = load_config(common, None, &paths)?;
    let graph = load_snapshot(&required(&cfg.paths.graph, "graph")?)?;
    let content = content_table(&graph, &cfg)?;
    let truth_pairs = match &cfg.paths.truth {
        Some(p) => Some(index_pairs(&graph, &read_pairs(p)?)),
        None => None,
    };
    let rows = if variants {
        ablation::variant_rows(&cfg)
    } else {
        ablation::ladder(&cfg)
    };
    let results = ablation::run(&graph, &content, truth_pairs.as_deref(), &rows)?;
    let table = ablation::to_table(&results, cfg.eval.k);
    if let Some(path) = &cfg.paths.out {
        fs::write(path, format!("{}{table}", commented(&cfg.echo())))?;
    }
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::GenSynth { common, out } => gen_synth(common, out),
        Command::Reduce {
            common,
            nodes,
            edges,
            candidates,
            out,
        } => reduce_cmd(common, nodes, edges, candidates, out),
        Command::Train { common, inputs, out } => train_cmd(common, inputs, out),
        Command::Evaluate {
            common,
            inputs,
            checkpoint,
            truth,
            k,
            out,
        } => evaluate_cmd(common, inputs, checkpoint, truth, *k, out),
        Command::Embed {
            common,
            inputs,
            checkpoint,
            out,
        } => embed_cmd(common, inputs, checkpoint, out),
        Command::GradCheck { common, trials } => grad_check(common, *trials),
        Command::Ablate {
            common,
            inputs,
            truth,
            variants,
            out,
        } => ablate_cmd(common, inputs, truth, *variants, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

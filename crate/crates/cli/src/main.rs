mod config;
mod failure;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use planetoid::checkpoint::Checkpoint;
use planetoid::data::{
    export_embeddings, import_linqs, load_dataset, save_dataset, Dataset, LoadOptions,
};
use planetoid::eval::{recall_at_k, ScoredInstance};
use planetoid::sampler::{ContextSource, LabelIndex};
use planetoid::training::{evaluate, labeled_sets, run, Predictor, Streams, TrainedModel};
use planetoid::ContextSampler;

use config::{RunConfig, Settings};
use failure::Failure;

const CHECKPOINT_FILE: &str = "model.ckpt";
const ROUNDS_FILE: &str = "rounds.tsv";
const METRICS_FILE: &str = "metrics.json";
const CONFIG_FILE: &str = "config.conf";

#[derive(Parser)]
#[command(
    name = "planetoid",
    version,
    about = "Semi-supervised node classification with graph embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by commands that read a dataset. Flags override the config file.
#[derive(Args)]
struct Common {
    /// Dataset directory (graph.tsv, labels.tsv, optional features.tsv and split.tsv).
    #[arg(long, value_name = "DIR")]
    data: Option<String>,
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    seed: Option<String>,
    /// Override any config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, round log and metrics to a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// planetoid-t, planetoid-i, planetoid-g, feat or lp.
        #[arg(long, value_name = "NAME")]
        variant: Option<String>,
        /// Run directory; defaults to runs/<variant>-<timestamp>.
        #[arg(long, value_name = "DIR")]
        out: Option<String>,
    },
    /// Score a checkpoint on one section of the split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file, or a run directory holding model.ckpt.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Expected model kind; a different checkpoint is rejected.
        #[arg(long, value_name = "NAME")]
        variant: Option<String>,
        /// train, validation or test.
        #[arg(long, value_name = "NAME")]
        section: Option<String>,
        /// Also report recall@k over (node, class) scores.
        #[arg(long, value_name = "INT")]
        k: Option<String>,
    },
    /// Print sampled context triples as `i<TAB>c<TAB>gamma` lines.
    SampleDebug {
        #[command(flatten)]
        common: Common,
        /// Number of triples.
        #[arg(long, value_name = "INT", default_value_t = 1000)]
        n: usize,
    },
    /// Write one embedding row per node from a planetoid checkpoint.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Output TSV file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Convert a LINQS citation archive (.content and .cites) into a dataset directory.
    ImportLinqs {
        #[arg(long, value_name = "FILE")]
        content: PathBuf,
        #[arg(long, value_name = "FILE")]
        cites: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            common,
            variant,
            out,
        } => {
            let rc = resolve(&common, &[("variant", variant), ("out", out)])?;
            cmd_train(&rc)
        }
        Command::Eval {
            common,
            checkpoint,
            variant,
            section,
            k,
        } => {
            let rc = resolve(
                &common,
                &[("variant", variant), ("section", section), ("k", k)],
            )?;
            cmd_eval(&rc, &checkpoint)
        }
        Command::SampleDebug { common, n } => cmd_sample_debug(&resolve(&common, &[])?, n),
        Command::ExportEmbeddings {
            common,
            checkpoint,
            out,
        } => cmd_export(&resolve(&common, &[])?, &checkpoint, &out),
        Command::ImportLinqs {
            content,
            cites,
            out,
        } => cmd_import(&content, &cites, &out),
    }
}

/// Config file, then `--set` overrides, then named flags.
fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig, Failure> {
    let mut settings = match &common.config {
        Some(path) => Settings::read_file(path)?,
        None => Settings::default(),
    };
    for assignment in &common.set {
        settings.set_assignment(assignment)?;
    }
    let named = [("data", common.data.clone()), ("seed", common.seed.clone())];
    for (key, value) in named.iter().chain(flags) {
        if let Some(v) = value {
            settings.set(key, v, &format!("--{key}"))?;
        }
    }
    RunConfig::resolve(&settings)
}

fn load(rc: &RunConfig) -> Result<Dataset, Failure> {
    let dir = rc
        .data
        .as_ref()
        .ok_or_else(|| Failure::config("no dataset given (--data or `data =` in the config)"))?;
    Ok(load_dataset(dir, &LoadOptions { split: rc.split })?)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

/// Creates `runs/<name>-<timestamp>`, adding a suffix if that already exists.
fn fresh_run_dir(name: &str) -> Result<PathBuf, Failure> {
    let root = Path::new("runs");
    fs::create_dir_all(root).map_err(|e| Failure::data(format!("{}: {e}", root.display())))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for attempt in 0.. {
        let dir = match attempt {
            0 => root.join(format!("{name}-{stamp}")),
            n => root.join(format!("{name}-{stamp}-{n}")),
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Failure::data(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

fn cmd_train(rc: &RunConfig) -> Result<(), Failure> {
    let method = rc.variant.ok_or_else(|| {
        Failure::config("no variant given (--variant or `variant =` in the config)")
    })?;
    let ds = load(rc)?;
    let output = run(method, &ds, &rc.train)?;

    let dir = match &rc.out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
            dir.clone()
        }
        None => fresh_run_dir(&method.to_string())?,
    };
    output
        .model
        .to_checkpoint()
        .save(&dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(ROUNDS_FILE), output.history.to_tsv())?;
    write_file(&dir.join(METRICS_FILE), output.metrics.to_json())?;
    write_file(&dir.join(CONFIG_FILE), rc.to_conf())?;

    println!("run_dir\t{}", dir.display());
    match output.metrics.test_acc {
        Some(acc) => println!("test_acc\t{acc:.6}"),
        None => println!("test_acc\t-"),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<TrainedModel, Failure> {
    let file = if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(TrainedModel::from_checkpoint(&Checkpoint::load(&file)?)?)
}

fn cmd_eval(rc: &RunConfig, checkpoint: &Path) -> Result<(), Failure> {
    let model = load_model(checkpoint)?;
    if let Some(expected) = rc.variant {
        if expected.to_string() != model.kind() {
            return Err(Failure::config(format!(
                "checkpoint holds a {} model, not {expected}",
                model.kind()
            )));
        }
    }
    let ds = load(rc)?;
    model.check_dataset(&ds)?;

    let acc = evaluate(&model, &ds, rc.section)?;
    println!("section\t{}", rc.section);
    println!("accuracy\t{acc:.6}");
    if let Some(k) = rc.k {
        let mut scores = Vec::new();
        for (node, gold) in ds.labeled_section(rc.section) {
            let probs = model.predict_node(&ds, node)?;
            scores.extend(probs.iter().enumerate().map(|(c, &p)| ScoredInstance {
                score: p,
                positive: c == gold,
            }));
        }
        println!("recall@{k}\t{:.6}", recall_at_k(&scores, k)?);
    }
    Ok(())
}

fn cmd_sample_debug(rc: &RunConfig, n: usize) -> Result<(), Failure> {
    let ds = load(rc)?;
    let mut streams = Streams::new(rc.train.seed);
    // Same label context that training would see.
    let labels = if ds.train_labels().is_empty() {
        Vec::new()
    } else {
        labeled_sets(&ds, rc.train.val_fraction, &mut streams.split)?.train
    };
    let index = LabelIndex::new(&labels, ds.num_classes)?;
    let sampler = ContextSampler::new(&ds.graph, index, rc.train.sampler)?;

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let (mut positive, mut graph) = (0usize, 0usize);
    for _ in 0..n {
        let (t, source) = sampler.sample_tagged(&mut streams.context);
        positive += usize::from(t.is_positive());
        graph += usize::from(source == ContextSource::Graph);
        writeln!(out, "{}\t{}\t{}", t.instance, t.context, t.gamma)
            .map_err(|e| Failure::data(format!("stdout: {e}")))?;
    }
    out.flush()
        .map_err(|e| Failure::data(format!("stdout: {e}")))?;

    if n == 0 {
        eprintln!("triples\t0");
    } else {
        let frac = |c: usize| c as f64 / n as f64;
        eprintln!("triples\t{n}");
        eprintln!("p_positive\t{:.6}\t({positive})", frac(positive));
        eprintln!("p_graph\t{:.6}\t({graph})", frac(graph));
    }
    Ok(())
}

fn cmd_export(rc: &RunConfig, checkpoint: &Path, out: &Path) -> Result<(), Failure> {
    let model = load_model(checkpoint)?;
    let TrainedModel::Planetoid(params) = &model else {
        return Err(Failure::config(format!(
            "a {} checkpoint has no embeddings; export needs a planetoid model",
            model.kind()
        )));
    };
    let ds = load(rc)?;
    model.check_dataset(&ds)?;
    export_embeddings(params, &ds, out)?;
    eprintln!("wrote {} rows to {}", ds.num_nodes, out.display());
    Ok(())
}

fn cmd_import(content: &Path, cites: &Path, out: &Path) -> Result<(), Failure> {
    let import = import_linqs(content, cites)?;
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    save_dataset(&import.dataset, out, false)?;
    let numbered = |names: &[String]| -> String {
        names
            .iter()
            .enumerate()
            .map(|(i, name)| format!("{i}\t{name}\n"))
            .collect()
    };
    write_file(&out.join("nodes.tsv"), numbered(&import.node_names))?;
    write_file(&out.join("classes.tsv"), numbered(&import.class_names))?;
    let ds = &import.dataset;
    eprintln!(
        "{} nodes, {} classes, {} features, {} undirected edges ({} raw citation lines), {} citations skipped",
        ds.num_nodes,
        ds.num_classes,
        ds.num_features(),
        ds.undirected_edge_count(),
        ds.raw_edge_count,
        import.skipped_citations
    );
    Ok(())
}

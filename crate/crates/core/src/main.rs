use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commutegraph::io::{self, read_config_file, resolve_config, RunConfig, SynthKind};
use commutegraph::pipeline;

/// Commute times on directed graphs and commute-weighted node
/// classification.
#[derive(Parser)]
#[command(name = "commutegraph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Dataset paths, hyperparameters, and output location. Flags override
/// values from `--config`.
#[derive(Args, Clone)]
struct RunArgs {
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Edge list: `src<TAB>dst` lines with `#` comments.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Feature matrix: `N d` header then N rows.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Labels: `node<TAB>label` lines.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Splits: `node<TAB>{train|val|test}` lines.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Message-passing depth.
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden dimension.
    #[arg(long)]
    hidden: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Run seed (initialization, sketching, walk streams).
    #[arg(long)]
    seed: Option<u64>,
    /// Truncation rank for the pseudoinverse factors.
    #[arg(long)]
    rank_q: Option<usize>,
    /// Commute backend: `dilap` or `dense_oracle`.
    #[arg(long)]
    backend: Option<String>,
    /// Cap for dense commute paths.
    #[arg(long)]
    dense_cap: Option<usize>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> commutegraph::Result<RunConfig> {
        let file_values = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let mut overrides = BTreeMap::new();
        let mut set = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                overrides.insert(key.to_string(), v);
            }
        };
        set("graph", self.graph.as_ref().map(|p| p.display().to_string()));
        set(
            "features",
            self.features.as_ref().map(|p| p.display().to_string()),
        );
        set(
            "labels",
            self.labels.as_ref().map(|p| p.display().to_string()),
        );
        set(
            "splits",
            self.splits.as_ref().map(|p| p.display().to_string()),
        );
        set("layers", self.layers.map(|v| v.to_string()));
        set("hidden", self.hidden.map(|v| v.to_string()));
        set("lr", self.lr.map(|v| v.to_string()));
        set("weight_decay", self.weight_decay.map(|v| v.to_string()));
        set("epochs", self.epochs.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set("rank_q", self.rank_q.map(|v| v.to_string()));
        set("backend", self.backend.clone());
        set("dense_cap", self.dense_cap.map(|v| v.to_string()));
        set(
            "out_dir",
            self.out_dir.as_ref().map(|p| p.display().to_string()),
        );
        resolve_config(file_values, overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Rewire a graph into a strongly connected, aperiodic one.
    Rewire(RunArgs),
    /// Compute per-edge commute times and proximity weights.
    Commute(RunArgs),
    /// Train the commute-weighted classifier end to end.
    Train(RunArgs),
    /// Evaluate a stored checkpoint on one split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Label-similarity distances, homophily, and rewiring diagnostics.
    Diag(RunArgs),
    /// Generate a synthetic dataset.
    Synth {
        /// Family: directed_cycle, two_block, or random_digraph.
        #[arg(long)]
        kind: String,
        /// Node count.
        #[arg(long)]
        n: usize,
        /// Intra-block edge probability (two_block).
        #[arg(long, default_value_t = 0.3)]
        p_in: f64,
        /// Inter-block edge probability (two_block).
        #[arg(long, default_value_t = 0.02)]
        p_out: f64,
        /// Edge probability (random_digraph).
        #[arg(long, default_value_t = 0.2)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Rewire(args) => {
            let cfg = args.resolve().map_err(|e| e.to_string())?;
            let run = pipeline::rewire_run(&cfg).map_err(|e| e.to_string())?;
            println!(
                "rewired {} nodes: {} -> {} edges (density change {:.4})",
                run.num_nodes, run.m_original, run.m_rewired, run.density_delta
            );
            Ok(())
        }
        Command::Commute(args) => {
            let cfg = args.resolve().map_err(|e| e.to_string())?;
            pipeline::commute_run(&cfg).map_err(|e| e.to_string())?;
            println!("commute weights written to {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Train(args) => {
            let cfg = args.resolve().map_err(|e| e.to_string())?;
            let run = pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
            println!(
                "train accuracy {:.4}, val accuracy {:.4}, test accuracy {:.4}",
                run.train_accuracy, run.val_accuracy, run.test_accuracy
            );
            Ok(())
        }
        Command::Eval {
            run: args,
            checkpoint,
            split,
        } => {
            let cfg = args.resolve().map_err(|e| e.to_string())?;
            let run =
                pipeline::eval_run(&cfg, &checkpoint, &split).map_err(|e| e.to_string())?;
            println!("{} accuracy {:.4}", run.split, run.accuracy);
            Ok(())
        }
        Command::Diag(args) => {
            let cfg = args.resolve().map_err(|e| e.to_string())?;
            let run = pipeline::diag_run(&cfg).map_err(|e| e.to_string())?;
            println!(
                "dist_adjacency {:.4}, dist_proximity {:.4}, homophily {:.4}",
                run.dist_adjacency, run.dist_proximity, run.homophily
            );
            Ok(())
        }
        Command::Synth {
            kind,
            n,
            p_in,
            p_out,
            p,
            seed,
            out_dir,
        } => {
            let kind = match kind.as_str() {
                "directed_cycle" => SynthKind::DirectedCycle,
                "two_block" => SynthKind::TwoBlock { p_in, p_out },
                "random_digraph" => SynthKind::RandomDigraph { p },
                other => return Err(format!("unknown synthetic kind '{other}'")),
            };
            let dataset =
                io::generate_synthetic(&kind, n, seed).map_err(|e| e.to_string())?;
            io::write_dataset(&out_dir, &dataset).map_err(|e| e.to_string())?;
            println!(
                "wrote {} nodes / {} edges to {}",
                dataset.graph.num_nodes(),
                dataset.graph.num_edges(),
                out_dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

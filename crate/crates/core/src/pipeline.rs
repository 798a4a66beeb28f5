//! End-to-end orchestration behind the CLI: rewire, stationary distribution,
//! Laplacian factors (or the dense oracle), per-edge commute times,
//! proximity weights, training, evaluation, and diagnostics. Every artifact
//! is written deterministically, so identical configurations produce
//! byte-identical output trees.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{heterophily_distances, homophily_ratio, label_similarity_matrix};
use crate::commute::{
    commute_change_delta, edge_commute_times, mean_normalized, proximity_weights, ProximityWeights,
};
use crate::error::{Error, Result, StageError, StageExt};
use crate::gnn::{
    evaluate, load_checkpoint, save_checkpoint, train, CommuteBackend, ModelParams, TrainHistory,
};
use crate::graph::{build_digraph, scc_components, strongly_connected, transition_matrix, DiGraph};
use crate::io::RunConfig;
use crate::oracle::{dense_fundamental, hitting_from_z, ORACLE_CAP};
use crate::rewire::{density_delta, rewire, RewiringResult};
use crate::spectral::{
    digraph_laplacian, perron_vector, pseudoinverse_factors, weighted_laplacian, PerronVector,
};

/// Power-iteration tolerance used by every pipeline.
pub const PERRON_TOL: f64 = 1e-10;
/// Power-iteration budget used by every pipeline.
pub const PERRON_MAX_ITER: usize = 100_000;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const REWIRED_EDGES_FILE: &str = "rewired_edges.tsv";
pub const ADDED_EDGES_FILE: &str = "added_edges.tsv";
pub const REWIRE_REPORT_FILE: &str = "rewire_report.txt";
pub const COMMUTE_EDGES_FILE: &str = "commute_edges.tsv";
pub const WEIGHTS_IN_FILE: &str = "weights_in.tsv";
pub const WEIGHTS_OUT_FILE: &str = "weights_out.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.tsv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const EVAL_FILE: &str = "eval_metrics.txt";
pub const DIAG_REPORT_FILE: &str = "diag_report.txt";
pub const DIAG_TABLE_FILE: &str = "diag_table.tsv";
pub const PROVENANCE_FILE: &str = "provenance.txt";

/// Everything the commute stages produce for one dataset.
pub struct CommuteArtifacts {
    pub rewiring: RewiringResult,
    pub perron: PerronVector,
    /// Commute values keyed to the original graph's edges, computed on the
    /// rewired graph.
    pub edge_commutes: Vec<((usize, usize), f64)>,
    pub weights: ProximityWeights,
    /// Nonzero counts of the Laplacian and its stationary-weighted variant
    /// (Laplacian backend only).
    pub laplacian_nnz: Option<(usize, usize)>,
    /// Retained rank after the singular-value cutoff (Laplacian backend
    /// only).
    pub rank: Option<usize>,
}

/// Runs rewiring through proximity weights with the configured backend.
pub fn commute_artifacts(
    g: &DiGraph,
    x: &crate::data::FeatureMatrix,
    backend: CommuteBackend,
    rank_q: usize,
    seed: u64,
    dense_cap: usize,
) -> std::result::Result<CommuteArtifacts, StageError> {
    let rewiring = rewire(g, x).stage("rewire")?;
    let p = transition_matrix(&rewiring.rewired).stage("transition")?;
    let perron = perron_vector(&p, PERRON_TOL, PERRON_MAX_ITER).stage("perron")?;

    let original_edges: Vec<(usize, usize)> = g.edges().to_vec();
    let (values, laplacian_nnz, rank) = match backend {
        CommuteBackend::Dilap => {
            let t = digraph_laplacian(&rewiring.rewired, &p).stage("laplacian")?;
            let weighted = weighted_laplacian(&t, &perron);
            let q = rank_q.min(t.n());
            let factors = pseudoinverse_factors(&t, q, seed).stage("factorize")?;
            let values =
                edge_commute_times(&factors, &perron, &original_edges).stage("commute")?;
            (
                values,
                Some((t.nnz(), weighted.nnz())),
                Some(factors.rank()),
            )
        }
        CommuteBackend::DenseOracle => {
            let n = g.num_nodes();
            let cap = dense_cap.min(ORACLE_CAP);
            if n > cap {
                return Err(StageError::new(
                    "commute",
                    Error::DenseCapExceeded { n, cap },
                ));
            }
            let z = dense_fundamental(&p, &perron).stage("commute")?;
            let cm = hitting_from_z(&z, &perron).stage("commute")?;
            let values = original_edges
                .iter()
                .map(|&(i, j)| cm.commute[(i, j)])
                .collect();
            (values, None, None)
        }
    };
    let edge_commutes: Vec<((usize, usize), f64)> =
        original_edges.into_iter().zip(values).collect();
    let weights = proximity_weights(&edge_commutes, g).stage("weights")?;
    Ok(CommuteArtifacts {
        rewiring,
        perron,
        edge_commutes,
        weights,
        laplacian_nnz,
        rank,
    })
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn render_edges(edges: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for &(src, dst) in edges {
        writeln!(out, "{src}\t{dst}").unwrap();
    }
    out
}

fn render_weighted_edges(entries: &[((usize, usize), f64)]) -> String {
    let mut out = String::new();
    for &((src, dst), v) in entries {
        writeln!(out, "{src}\t{dst}\t{v}").unwrap();
    }
    out
}

fn write_manifest(cfg: &RunConfig, files: &mut Vec<String>) -> Result<()> {
    files.push(PROVENANCE_FILE.to_string());
    let provenance = format!(
        "seed {}\nconfig_hash {}\nbackend {}\nrank_q {}\n",
        cfg.train.seed,
        cfg.config_hash(),
        cfg.train.backend.tag(),
        cfg.train.rank_q
    );
    write_text(&cfg.out_dir, PROVENANCE_FILE, &provenance)?;

    files.push(MANIFEST_FILE.to_string());
    files.sort();
    let mut out = String::new();
    writeln!(out, "config_hash {}", cfg.config_hash()).unwrap();
    for f in files.iter() {
        writeln!(out, "file {f}").unwrap();
    }
    write_text(&cfg.out_dir, MANIFEST_FILE, &out)?;
    Ok(())
}

fn write_commute_files(
    cfg: &RunConfig,
    artifacts: &CommuteArtifacts,
    files: &mut Vec<String>,
) -> Result<()> {
    let dir = &cfg.out_dir;
    write_text(
        dir,
        REWIRED_EDGES_FILE,
        &render_edges(artifacts.rewiring.rewired.edges()),
    )?;
    write_text(
        dir,
        ADDED_EDGES_FILE,
        &render_edges(&artifacts.rewiring.added_edges),
    )?;
    write_text(
        dir,
        COMMUTE_EDGES_FILE,
        &render_weighted_edges(&artifacts.edge_commutes),
    )?;
    write_text(
        dir,
        WEIGHTS_IN_FILE,
        &render_weighted_edges(&artifacts.weights.sorted_in()),
    )?;
    write_text(
        dir,
        WEIGHTS_OUT_FILE,
        &render_weighted_edges(&artifacts.weights.sorted_out()),
    )?;
    files.extend(
        [
            REWIRED_EDGES_FILE,
            ADDED_EDGES_FILE,
            COMMUTE_EDGES_FILE,
            WEIGHTS_IN_FILE,
            WEIGHTS_OUT_FILE,
        ]
        .map(String::from),
    );
    Ok(())
}

/// Summary of a full training run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub density_delta: f64,
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Executes the full pipeline: rewire, stationary distribution, weighted
/// Laplacian and pseudoinverse factors (or the dense oracle), per-edge
/// commute times, proximity weights, training, and evaluation. All artifacts
/// land under `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<PipelineRun, StageError> {
    cfg.validate().stage("load")?;
    let dataset = crate::io::load_dataset(&cfg.paths).stage("load")?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(Error::from)
        .stage("write")?;

    let artifacts = commute_artifacts(
        &dataset.graph,
        &dataset.features,
        cfg.train.backend,
        cfg.train.rank_q,
        cfg.train.seed,
        cfg.dense_cap,
    )?;
    let delta = density_delta(&dataset.graph, &artifacts.rewiring.rewired).stage("rewire")?;

    let (params, history) = train(
        &dataset.graph,
        &dataset.features,
        &dataset.labels,
        &dataset.splits,
        &artifacts.weights,
        &cfg.train,
    )
    .stage("train")?;

    let accuracy_on = |split: &[usize]| -> std::result::Result<f64, StageError> {
        if split.is_empty() {
            return Ok(f64::NAN);
        }
        evaluate(
            &params,
            &dataset.graph,
            &dataset.features,
            &dataset.labels,
            split,
            &artifacts.weights,
        )
        .stage("evaluate")
    };
    let train_accuracy = accuracy_on(&dataset.splits.train)?;
    let val_accuracy = accuracy_on(&dataset.splits.val)?;
    let test_accuracy = accuracy_on(&dataset.splits.test)?;
    let final_train_loss = history.last().map_or(f64::NAN, |s| s.train_loss);

    let mut files = Vec::new();
    write_commute_files(cfg, &artifacts, &mut files).stage("write")?;
    save_checkpoint(&params, cfg.train.seed, &cfg.out_dir.join(CHECKPOINT_FILE))
        .stage("write")?;
    files.push(CHECKPOINT_FILE.to_string());
    write_text(&cfg.out_dir, HISTORY_FILE, &render_history(&history)).stage("write")?;
    files.push(HISTORY_FILE.to_string());

    let mut metrics = String::new();
    writeln!(metrics, "backend {}", cfg.train.backend.tag()).unwrap();
    writeln!(metrics, "seed {}", cfg.train.seed).unwrap();
    writeln!(metrics, "n {}", dataset.graph.num_nodes()).unwrap();
    writeln!(metrics, "m_original {}", dataset.graph.num_edges()).unwrap();
    writeln!(metrics, "m_rewired {}", artifacts.rewiring.rewired.num_edges()).unwrap();
    writeln!(metrics, "density_delta {delta}").unwrap();
    writeln!(metrics, "perron_iterations {}", artifacts.perron.iterations_used).unwrap();
    writeln!(metrics, "perron_residual {}", artifacts.perron.residual).unwrap();
    if let Some((nnz, weighted_nnz)) = artifacts.laplacian_nnz {
        writeln!(metrics, "laplacian_nnz {nnz}").unwrap();
        writeln!(metrics, "weighted_laplacian_nnz {weighted_nnz}").unwrap();
    }
    if let Some(rank) = artifacts.rank {
        writeln!(metrics, "rank {rank}").unwrap();
    }
    writeln!(metrics, "epochs {}", cfg.train.epochs).unwrap();
    writeln!(metrics, "final_train_loss {final_train_loss}").unwrap();
    writeln!(metrics, "train_accuracy {train_accuracy}").unwrap();
    writeln!(metrics, "val_accuracy {val_accuracy}").unwrap();
    writeln!(metrics, "test_accuracy {test_accuracy}").unwrap();
    write_text(&cfg.out_dir, METRICS_FILE, &metrics).stage("write")?;
    files.push(METRICS_FILE.to_string());

    write_manifest(cfg, &mut files).stage("write")?;
    Ok(PipelineRun {
        density_delta: delta,
        final_train_loss,
        train_accuracy,
        val_accuracy,
        test_accuracy,
    })
}

fn render_history(history: &TrainHistory) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_accuracy\n");
    for s in history {
        writeln!(out, "{}\t{}\t{}", s.epoch, s.train_loss, s.val_accuracy).unwrap();
    }
    out
}

/// Summary of a rewiring-only run.
#[derive(Debug, Clone)]
pub struct RewireRun {
    pub num_nodes: usize,
    pub m_original: usize,
    pub m_rewired: usize,
    pub density_delta: f64,
}

/// Rewires the input graph and writes the rewired edge list, the added
/// edges, and a report.
pub fn rewire_run(cfg: &RunConfig) -> std::result::Result<RewireRun, StageError> {
    cfg.validate().stage("load")?;
    let dataset = crate::io::load_dataset(&cfg.paths).stage("load")?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(Error::from)
        .stage("write")?;
    let rewiring = rewire(&dataset.graph, &dataset.features).stage("rewire")?;
    let delta = density_delta(&dataset.graph, &rewiring.rewired).stage("rewire")?;
    let (connected, component_count) = strongly_connected(&rewiring.rewired);

    let mut files = Vec::new();
    write_text(
        &cfg.out_dir,
        REWIRED_EDGES_FILE,
        &render_edges(rewiring.rewired.edges()),
    )
    .stage("write")?;
    write_text(
        &cfg.out_dir,
        ADDED_EDGES_FILE,
        &render_edges(&rewiring.added_edges),
    )
    .stage("write")?;
    let mut report = String::new();
    writeln!(report, "n {}", dataset.graph.num_nodes()).unwrap();
    writeln!(report, "m_original {}", dataset.graph.num_edges()).unwrap();
    writeln!(report, "m_rewired {}", rewiring.rewired.num_edges()).unwrap();
    writeln!(report, "density_delta {delta}").unwrap();
    writeln!(report, "strongly_connected {connected}").unwrap();
    writeln!(report, "component_count {component_count}").unwrap();
    writeln!(report, "all_self_loops {}", rewiring.rewired.all_self_loops()).unwrap();
    write_text(&cfg.out_dir, REWIRE_REPORT_FILE, &report).stage("write")?;
    files.extend([REWIRED_EDGES_FILE, ADDED_EDGES_FILE, REWIRE_REPORT_FILE].map(String::from));
    write_manifest(cfg, &mut files).stage("write")?;
    Ok(RewireRun {
        num_nodes: dataset.graph.num_nodes(),
        m_original: dataset.graph.num_edges(),
        m_rewired: rewiring.rewired.num_edges(),
        density_delta: delta,
    })
}

/// Computes commute times and proximity weights without training.
pub fn commute_run(cfg: &RunConfig) -> std::result::Result<(), StageError> {
    cfg.validate().stage("load")?;
    let dataset = crate::io::load_dataset(&cfg.paths).stage("load")?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(Error::from)
        .stage("write")?;
    let artifacts = commute_artifacts(
        &dataset.graph,
        &dataset.features,
        cfg.train.backend,
        cfg.train.rank_q,
        cfg.train.seed,
        cfg.dense_cap,
    )?;
    let mut files = Vec::new();
    write_commute_files(cfg, &artifacts, &mut files).stage("write")?;
    write_manifest(cfg, &mut files).stage("write")?;
    Ok(())
}

/// Evaluation of a stored checkpoint on one split.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub split: String,
    pub accuracy: f64,
}

/// Recomputes proximity weights under the configured backend, loads the
/// checkpoint, and reports accuracy on the requested split.
pub fn eval_run(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: &str,
) -> std::result::Result<EvalRun, StageError> {
    cfg.validate().stage("load")?;
    let dataset = crate::io::load_dataset(&cfg.paths).stage("load")?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(Error::from)
        .stage("write")?;
    let nodes = match split {
        "train" => &dataset.splits.train,
        "val" => &dataset.splits.val,
        "test" => &dataset.splits.test,
        other => {
            return Err(StageError::new(
                "load",
                Error::InvalidParam(format!("unknown split '{other}'")),
            ))
        }
    };
    let artifacts = commute_artifacts(
        &dataset.graph,
        &dataset.features,
        cfg.train.backend,
        cfg.train.rank_q,
        cfg.train.seed,
        cfg.dense_cap,
    )?;
    let (params, _seed): (ModelParams, u64) = load_checkpoint(checkpoint).stage("load")?;
    let accuracy = evaluate(
        &params,
        &dataset.graph,
        &dataset.features,
        &dataset.labels,
        nodes,
        &artifacts.weights,
    )
    .stage("evaluate")?;

    let mut files = Vec::new();
    let mut out = String::new();
    writeln!(out, "checkpoint {}", checkpoint.display()).unwrap();
    writeln!(out, "split {split}").unwrap();
    writeln!(out, "accuracy {accuracy}").unwrap();
    write_text(&cfg.out_dir, EVAL_FILE, &out).stage("write")?;
    files.push(EVAL_FILE.to_string());
    write_manifest(cfg, &mut files).stage("write")?;
    Ok(EvalRun {
        split: split.to_string(),
        accuracy,
    })
}

/// Diagnostics summary.
#[derive(Debug, Clone)]
pub struct DiagRun {
    pub dist_adjacency: f64,
    pub dist_proximity: f64,
    pub homophily: f64,
    pub density_delta: f64,
    /// Relative change in mean-normalized commute times between the original
    /// graph (restricted to its largest strongly connected component) and
    /// the rewired graph; absent when the component is trivial or exceeds
    /// the dense oracle cap.
    pub commute_delta: Option<f64>,
}

fn induced_subgraph(g: &DiGraph, nodes: &[usize]) -> Result<(DiGraph, Vec<usize>)> {
    let mut position = vec![usize::MAX; g.num_nodes()];
    for (new, &old) in nodes.iter().enumerate() {
        position[old] = new;
    }
    let mut edges = Vec::new();
    for &(src, dst) in g.edges() {
        if position[src] != usize::MAX && position[dst] != usize::MAX {
            edges.push((position[src], position[dst]));
        }
    }
    Ok((build_digraph(nodes.len(), &edges)?, nodes.to_vec()))
}

/// Commute change between original and rewired graphs over the original
/// graph's largest strongly connected component, using the dense oracle on
/// both sides.
fn commute_delta_for(
    g: &DiGraph,
    rewired: &DiGraph,
) -> std::result::Result<Option<f64>, StageError> {
    let mut components = scc_components(g);
    components.sort_by_key(|c| (std::cmp::Reverse(c.len()), c[0]));
    let lscc = &components[0];
    if lscc.len() < 2 || rewired.num_nodes() > ORACLE_CAP {
        return Ok(None);
    }
    let (sub, members) = induced_subgraph(g, lscc).stage("commute_delta")?;

    let commute_for = |graph: &DiGraph| -> Result<crate::commute::CommuteMatrices> {
        let p = transition_matrix(graph)?;
        let pi = perron_vector(&p, PERRON_TOL, PERRON_MAX_ITER)?;
        let z = dense_fundamental(&p, &pi)?;
        hitting_from_z(&z, &pi)
    };
    let orig = commute_for(&sub).stage("commute_delta")?;
    let rew = commute_for(rewired).stage("commute_delta")?;

    let mut c_orig = Vec::new();
    let mut c_rew = Vec::new();
    for a in 0..members.len() {
        for b in (a + 1)..members.len() {
            c_orig.push(orig.commute[(a, b)]);
            c_rew.push(rew.commute[(members[a], members[b])]);
        }
    }
    let delta = commute_change_delta(
        &mean_normalized(&c_orig).stage("commute_delta")?,
        &mean_normalized(&c_rew).stage("commute_delta")?,
    )
    .stage("commute_delta")?;
    Ok(Some(delta))
}

/// Label-similarity distances, homophily, and rewiring diagnostics.
pub fn diag_run(cfg: &RunConfig) -> std::result::Result<DiagRun, StageError> {
    cfg.validate().stage("load")?;
    let dataset = crate::io::load_dataset(&cfg.paths).stage("load")?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(Error::from)
        .stage("write")?;
    let artifacts = commute_artifacts(
        &dataset.graph,
        &dataset.features,
        cfg.train.backend,
        cfg.train.rank_q,
        cfg.train.seed,
        cfg.dense_cap,
    )?;
    let m = label_similarity_matrix(&dataset.graph, &dataset.labels).stage("diagnostics")?;
    let (dist_adjacency, dist_proximity) =
        heterophily_distances(&m, &dataset.graph, &artifacts.weights);
    let homophily = homophily_ratio(&dataset.graph, &dataset.labels).stage("diagnostics")?;
    let delta = density_delta(&dataset.graph, &artifacts.rewiring.rewired).stage("rewire")?;
    let commute_delta = commute_delta_for(&dataset.graph, &artifacts.rewiring.rewired)?;

    let report = crate::analysis::DiagnosticsReport {
        dist_adjacency,
        dist_proximity,
        homophily,
    };
    let mut text = report.render();
    writeln!(text, "density_delta {delta}").unwrap();
    match commute_delta {
        Some(d) => writeln!(text, "commute_delta {d}").unwrap(),
        None => writeln!(text, "commute_delta unavailable").unwrap(),
    }
    let mut files = Vec::new();
    write_text(&cfg.out_dir, DIAG_REPORT_FILE, &text).stage("write")?;
    write_text(&cfg.out_dir, DIAG_TABLE_FILE, &report.render_table()).stage("write")?;
    files.extend([DIAG_REPORT_FILE, DIAG_TABLE_FILE].map(String::from));
    write_manifest(cfg, &mut files).stage("write")?;
    Ok(DiagRun {
        dist_adjacency,
        dist_proximity,
        homophily,
        density_delta: delta,
        commute_delta,
    })
}

//! Temporary exploration harness (deleted before finalization).

use commutegraph::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_block(n: usize, seed: u64) -> Dataset {
    generate_synthetic(
        &SynthKind::TwoBlock {
            p_in: 0.3,
            p_out: 0.02,
        },
        n,
        seed,
    )
    .unwrap()
}

#[test]
fn explore_homophily_golden() {
    let ds = two_block(40, 7);
    let h = homophily_ratio(&ds.graph, &ds.labels).unwrap();
    println!("two_block(40, .3, .02, seed 7): homophily = {h}");
    println!("edges = {}", ds.graph.num_edges());
}

#[test]
fn explore_order_agreement_variants() {
    for (n, p_in, p_out, seed) in [
        (40usize, 0.3, 0.02, 17u64),
        (40, 0.3, 0.02, 23),
        (24, 0.12, 0.01, 5),
        (24, 0.12, 0.01, 9),
        (16, 0.25, 0.02, 3),
    ] {
        let ds = generate_synthetic(&SynthKind::TwoBlock { p_in, p_out }, n, seed).unwrap();
        let r = rewire(&ds.graph, &ds.features).unwrap();
        let p = transition_matrix(&r.rewired).unwrap();
        let pi = perron_vector(&p, 1e-10, 100_000).unwrap();
        let t = digraph_laplacian(&r.rewired, &p).unwrap();
        let edges: Vec<(usize, usize)> = ds.graph.edges().to_vec();

        let full = pseudoinverse_factors(&t, t.n(), seed).unwrap();
        let c_full = edge_commute_times(&full, &pi, &edges).unwrap();
        let low = pseudoinverse_factors(&t, 5, seed).unwrap();
        let c_low = edge_commute_times(&low, &pi, &edges).unwrap();

        let mut per_node: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
        for (k, &(i, j)) in edges.iter().enumerate() {
            per_node[i].push((j, c_full[k], c_low[k]));
        }
        let (mut perm_match, mut top1_match, mut pair_conc, mut pair_total) = (0usize, 0usize, 0usize, 0usize);
        for row in &per_node {
            if row.len() < 2 {
                perm_match += 1;
                top1_match += 1;
                continue;
            }
            let order = |key: fn(&(usize, f64, f64)) -> f64| {
                let mut ids: Vec<usize> = (0..row.len()).collect();
                ids.sort_by(|&a, &b| {
                    key(&row[a])
                        .partial_cmp(&key(&row[b]))
                        .unwrap()
                        .then(row[a].0.cmp(&row[b].0))
                });
                ids
            };
            let of = order(|r| r.1);
            let ol = order(|r| r.2);
            if of == ol {
                perm_match += 1;
            }
            if of[0] == ol[0] {
                top1_match += 1;
            }
            for a in 0..row.len() {
                for b in (a + 1)..row.len() {
                    pair_total += 1;
                    let f = row[a].1 < row[b].1;
                    let l = row[a].2 < row[b].2;
                    if f == l {
                        pair_conc += 1;
                    }
                }
            }
        }
        println!(
            "n={n} p_in={p_in} seed={seed}: perm {}/{} top1 {}/{} pairwise {:.3}",
            perm_match,
            n,
            top1_match,
            n,
            pair_conc as f64 / pair_total.max(1) as f64
        );
    }
}

#[test]
fn explore_low_rank_dense_agreement() {
    let ds = two_block(50, 17);
    let r = rewire(&ds.graph, &ds.features).unwrap();
    let p = transition_matrix(&r.rewired).unwrap();
    let pi = perron_vector(&p, 1e-10, 100_000).unwrap();
    let t = digraph_laplacian(&r.rewired, &p).unwrap();
    let edges: Vec<(usize, usize)> = ds.graph.edges().to_vec();
    let full = pseudoinverse_factors(&t, t.n(), 3).unwrap();
    let c_edge = edge_commute_times(&full, &pi, &edges).unwrap();
    // dense oracle: nalgebra svd pinv + direct formula
    let pinv = fundamental_matrix_from_laplacian(&t, 2000).unwrap();
    let mut worst = 0.0f64;
    for (k, &(i, j)) in edges.iter().enumerate() {
        let s = (pi.pi[i] * pi.pi[j]).sqrt();
        let dense = pinv[(j, j)] / pi.pi[j] + pinv[(i, i)] / pi.pi[i]
            - pinv[(i, j)] / s
            - pinv[(j, i)] / s;
        let rel = (c_edge[k] - dense).abs() / dense.abs().max(1e-12);
        worst = worst.max(rel);
    }
    println!("worst relative low-rank vs dense pinv commute: {worst:e}");
}

#[test]
fn explore_mc_consistency() {
    'master: for master in [101u64, 202, 303, 404] {
        let mut failures = 0;
        let mut total = 0;
        let start = std::time::Instant::now();
        for gi in 0..20u64 {
            let seed = master.wrapping_mul(1000).wrapping_add(gi);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 10 + (rng.random::<u64>() % 41) as usize; // 10..=50
            let mut edges = Vec::new();
            let p_edge = 2.5 / n as f64;
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random::<f64>() < p_edge {
                        edges.push((i, j));
                    }
                }
            }
            let g = build_digraph(n, &edges).unwrap();
            let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
            let r = rewire(&g, &x).unwrap();
            let p = transition_matrix(&r.rewired).unwrap();
            let pi = perron_vector(&p, 1e-10, 100_000).unwrap();
            let z = dense_fundamental(&p, &pi).unwrap();
            let cm = hitting_from_z(&z, &pi).unwrap();
            for _ in 0..3 {
                let src = (rng.random::<u64>() as usize) % n;
                let mut dst = (rng.random::<u64>() as usize) % n;
                if dst == src {
                    dst = (dst + 1) % n;
                }
                let est = monte_carlo_hitting(&p, src, dst, 100_000, 1_000_000, seed).unwrap();
                total += 1;
                let diff = (est.estimate - cm.hitting[(src, dst)]).abs();
                if diff > est.half_width {
                    failures += 1;
                    println!(
                        "master={master} graph={gi} pair=({src},{dst}): est {} oracle {} hw {}",
                        est.estimate,
                        cm.hitting[(src, dst)],
                        est.half_width
                    );
                    if failures > 2 {
                        println!("master={master}: too many failures, skipping");
                        continue 'master;
                    }
                }
            }
        }
        println!(
            "master={master}: {failures}/{total} failures, elapsed {:?}",
            start.elapsed()
        );
    }
}

#[test]
fn explore_smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ds = two_block(200, 42);
    let paths = write_dataset(dir.path(), &ds).unwrap();
    let cfg = RunConfig {
        paths,
        train: TrainConfig {
            layers: 2,
            hidden: 32,
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 300,
            seed: 42,
            rank_q: 5,
            backend: CommuteBackend::Dilap,
        },
        dense_cap: 2000,
        out_dir: dir.path().join("out"),
    };
    let start = std::time::Instant::now();
    let run = commutegraph::pipeline::run_pipeline(&cfg).unwrap();
    println!(
        "smoke: train {} val {} test {} loss {} elapsed {:?}",
        run.train_accuracy,
        run.val_accuracy,
        run.test_accuracy,
        run.final_train_loss,
        start.elapsed()
    );
}

#[test]
fn explore_hetero_fixture() {
    // Two complete bidirected 5-cliques (clusters), two one-way cross
    // edges. 1-D positive features => all cosines tie => chain is 0..9.
    let mut edges = Vec::new();
    for base in [0usize, 5] {
        for a in 0..5 {
            for b in 0..5 {
                if a != b {
                    edges.push((base + a, base + b));
                }
            }
        }
    }
    edges.push((0, 5));
    edges.push((7, 2));
    let g = build_digraph(10, &edges).unwrap();
    let labels: Vec<usize> = (0..10).map(|i| (i >= 5) as usize).collect();
    let x = DMatrix::from_fn(10, 1, |i, _| 1.0 + 0.01 * i as f64);

    let r = rewire(&g, &x).unwrap();
    println!("ordering {:?}", r.ordering);
    println!("added {:?}", r.added_edges);
    let p = transition_matrix(&r.rewired).unwrap();
    let pi = perron_vector(&p, 1e-10, 100_000).unwrap();
    let z = dense_fundamental(&p, &pi).unwrap();
    let cm = hitting_from_z(&z, &pi).unwrap();
    let edge_list: Vec<(usize, usize)> = g.edges().to_vec();
    let commutes: Vec<((usize, usize), f64)> = edge_list
        .iter()
        .map(|&(i, j)| ((i, j), cm.commute[(i, j)]))
        .collect();
    let mut max_same = 0.0f64;
    let mut min_cross = f64::INFINITY;
    for &((i, j), c) in &commutes {
        if labels[i] == labels[j] {
            max_same = max_same.max(c);
        } else {
            min_cross = min_cross.min(c);
        }
        println!("edge ({i},{j}) same={} commute={c:.4}", labels[i] == labels[j]);
    }
    println!("max same-label commute {max_same:.4}, min cross-label {min_cross:.4}");
    let w = proximity_weights(&commutes, &g).unwrap();
    let m = label_similarity_matrix(&g, &labels).unwrap();
    let (da, dp) = heterophily_distances(&m, &g, &w);
    println!("dist_adjacency {da:.4} dist_proximity {dp:.4}");
}

#[test]
fn explore_q5_vs_q7_stability() {
    let ds = two_block(40, 17);
    let r = rewire(&ds.graph, &ds.features).unwrap();
    let p = transition_matrix(&r.rewired).unwrap();
    let pi = perron_vector(&p, 1e-10, 100_000).unwrap();
    let t = digraph_laplacian(&r.rewired, &p).unwrap();
    let edges: Vec<(usize, usize)> = ds.graph.edges().to_vec();
    let c5 = edge_commute_times(&pseudoinverse_factors(&t, 5, 17).unwrap(), &pi, &edges).unwrap();
    let c7 = edge_commute_times(&pseudoinverse_factors(&t, 7, 17).unwrap(), &pi, &edges).unwrap();
    let n = 40;
    let mut per_node: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
    for (k, &(i, j)) in edges.iter().enumerate() {
        per_node[i].push((j, c5[k], c7[k]));
    }
    let mut matches = 0;
    for row in &per_node {
        if row.len() < 2 {
            matches += 1;
            continue;
        }
        let sort_by = |key: fn(&(usize, f64, f64)) -> f64| {
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| {
                key(&row[a]).partial_cmp(&key(&row[b])).unwrap().then(row[a].0.cmp(&row[b].0))
            });
            ids
        };
        if sort_by(|r| r.1) == sort_by(|r| r.2) {
            matches += 1;
        }
    }
    println!("q5 vs q7 ordering agreement: {matches}/{n}");
}

#[test]
fn explore_lr_grid() {
    let ds = two_block(200, 42);
    let r = rewire(&ds.graph, &ds.features).unwrap();
    let p = transition_matrix(&r.rewired).unwrap();
    let pi = perron_vector(&p, 1e-10, 100_000).unwrap();
    let t = digraph_laplacian(&r.rewired, &p).unwrap();
    let edges: Vec<(usize, usize)> = ds.graph.edges().to_vec();
    let f = pseudoinverse_factors(&t, 5, 42).unwrap();
    let c = edge_commute_times(&f, &pi, &edges).unwrap();
    let pairs: Vec<((usize, usize), f64)> = edges.iter().copied().zip(c).collect();
    let w = proximity_weights(&pairs, &ds.graph).unwrap();
    for lr in [0.01, 0.05, 0.2, 0.5, 1.0] {
        let cfg = TrainConfig {
            layers: 2,
            hidden: 32,
            lr,
            weight_decay: 0.0,
            epochs: 300,
            seed: 42,
            rank_q: 5,
            backend: CommuteBackend::Dilap,
        };
        let (params, hist) = train(&ds.graph, &ds.features, &ds.labels, &ds.splits, &w, &cfg).unwrap();
        let acc = evaluate(&params, &ds.graph, &ds.features, &ds.labels, &ds.splits.test, &w).unwrap();
        println!(
            "lr={lr}: test acc {acc:.3}, loss e0 {:.4} e50 {:.4} e150 {:.4} e299 {:.4}",
            hist[0].train_loss, hist[50].train_loss, hist[150].train_loss, hist[299].train_loss
        );
    }
}

#[test]
fn explore_feature_scale() {
    for scale in [2.0f64, 3.0, 4.0, 5.0] {
        let mut ds = two_block(200, 42);
        ds.features *= scale;
        let r = rewire(&ds.graph, &ds.features).unwrap();
        let p = transition_matrix(&r.rewired).unwrap();
        let pi = perron_vector(&p, 1e-10, 100_000).unwrap();
        let t = digraph_laplacian(&r.rewired, &p).unwrap();
        let edges: Vec<(usize, usize)> = ds.graph.edges().to_vec();
        let f = pseudoinverse_factors(&t, 5, 42).unwrap();
        let c = edge_commute_times(&f, &pi, &edges).unwrap();
        let pairs: Vec<((usize, usize), f64)> = edges.iter().copied().zip(c).collect();
        let w = proximity_weights(&pairs, &ds.graph).unwrap();
        let cfg = TrainConfig {
            layers: 2,
            hidden: 32,
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 300,
            seed: 42,
            rank_q: 5,
            backend: CommuteBackend::Dilap,
        };
        let (params, hist) = train(&ds.graph, &ds.features, &ds.labels, &ds.splits, &w, &cfg).unwrap();
        let acc = evaluate(&params, &ds.graph, &ds.features, &ds.labels, &ds.splits.test, &w).unwrap();
        // find first epoch with val acc >= 0.9
        let first90 = hist.iter().find(|s| s.val_accuracy >= 0.9).map(|s| s.epoch);
        println!(
            "scale={scale}: test acc {acc:.3}, first-90-val epoch {:?}, final loss {:.4}",
            first90, hist[299].train_loss
        );
    }
}

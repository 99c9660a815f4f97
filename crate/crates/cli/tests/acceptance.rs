//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use agp_cli::{cmd_bench, cmd_collect, cmd_run, cmd_synth, cmd_train, load_tasks, BenchOptions, Config, EvaluatorKind};
use agp_core::baselines::fit_counts;
use agp_core::collector::{collect, sample_orders, CollectorConfig};
use agp_core::orchestrator::{complete_on, run_topology, BackendSet, MajorityDecision, RunConfig};
use agp_core::prune::{
    design_topology, edge_loss, load_checkpoint, loss_and_grad, node_loss, total_loss, NetShape, NodeLossConfig,
    PruneNetParams, SampleNoise, TrainConfig,
};
use agp_core::synthetic::{generate_tasks, PlantedEvaluator, PlantedTeams};
use agp_core::{
    lift_subgraph, AgentPool, HashEmbedder, NodeFeatures, NodeMask, PlantedBackend, TaskSpec, Topology, WeightMatrix,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

fn matrix(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..rows).map(|i| (0..cols).map(|j| f(i, j)).collect()).collect()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<(usize, &'static str, Outcome)>, id: usize, name: &'static str, o: Outcome) {
    println!("criterion {id} ({name}): {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((id, name, o));
}

/// Random unit-norm rows, like the embedders produce.
fn features(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> NodeFeatures {
    let data = matrix(rows, d, |_, _| StandardNormal.sample(rng));
    let flat: Vec<f64> = data
        .into_iter()
        .flat_map(|row| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.into_iter().map(move |v| v / norm)
        })
        .collect();
    NodeFeatures::new(ndarray::Array2::from_shape_vec((rows, d), flat).unwrap())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let n = 5;
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let p = PruneNetParams::init(NetShape::new(n, 8).with_hidden(6, 4), &mut rng);
        let x = features(n + 1, 8, &mut rng);
        let k = rng.random_range(2..=n);
        let mut members = sample(&mut rng, n, k).into_vec();
        members.sort_unstable();
        let edges: Vec<(usize, usize)> =
            (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).filter(|&(i, j)| i != j).collect();
        let kept: Vec<(usize, usize)> = edges.into_iter().filter(|_| rng.random_bool(0.6)).collect();
        let (a_gt, y) = lift_subgraph(&Topology::from_edges(k, &kept).unwrap(), &members, n).unwrap();
        let noise = SampleNoise::draw(n, &mut rng, true, true);
        let tau = rng.random_range(0.3..1.0);
        let cfg = TrainConfig { beta: rng.random_range(0.5..1.5), ..Default::default() };
        let focal = instance % 2 == 1;
        let loss = |q: &PruneNetParams| loss_and_grad(q, &x, &a_gt, &y, &cfg, tau, &noise, focal).unwrap().0.total;
        let (_, grad) = loss_and_grad(&p, &x, &a_gt, &y, &cfg, tau, &noise, focal).unwrap();
        let analytic = grad.tensors().map(|t| t.to_vec());
        for (t, g) in analytic.iter().enumerate() {
            for (e, &a) in g.iter().enumerate() {
                let mut plus = p.clone();
                plus.tensors_mut()[t][e] += step;
                let mut minus = p.clone();
                minus.tensors_mut()[t][e] -= step;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst < 1e-4 && elapsed < Duration::from_secs(10),
        detail: format!("max relative error {worst:.2e} over 20 instances in {elapsed:.2?}"),
    }
}

fn criterion_2() -> Outcome {
    // edge example: n = 3, y = (1, 1, 0), a_gt has only 0 -> 1, w_pred = 0.5 off the diagonal
    let w = WeightMatrix::from_rows(&matrix(3, 3, |i, j| if i == j { 0.0 } else { 0.5 })).unwrap();
    let a = WeightMatrix::from_rows(&matrix(3, 3, |i, j| if (i, j) == (0, 1) { 1.0 } else { 0.0 })).unwrap();
    let y = NodeMask::from_bits(vec![true, true, false]);
    let edge = edge_loss(&w, &a, &y, 0.5).unwrap();
    let edge_want = 0.5 * (0.25 + 0.25) + 0.5 * (1.0 / 4.0) * (4.0 * 0.25);

    // node example: y = (1, 0), y_hat = (0.5, 0.5), w_pred[1][0] = 0.8
    let w2 = WeightMatrix::from_rows(&[vec![0.0, 0.0], vec![0.8, 0.0]]).unwrap();
    let y2 = NodeMask::from_bits(vec![true, false]);
    let node = node_loss(&[0.5, 0.5], &y2, &w2, &NodeLossConfig::default(), false).unwrap();
    let node_want = std::f64::consts::LN_2 + 0.1 * 0.5 + 0.05 * (0.8 / 4.0);
    let total = total_loss(edge, node, 1.0);

    let ok = (edge - edge_want).abs() < 1e-9
        && (edge - 0.375).abs() < 1e-9
        && (node - node_want).abs() < 1e-9
        && (node - 0.7531).abs() < 5e-5
        && (total - (edge_want + node_want)).abs() < 1e-9;
    Outcome { pass: ok, detail: format!("edge {edge:.12}, node {node:.12}, total {total:.12}") }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for _ in 0..1000 {
        let n_max = rng.random_range(2..=16);
        let k = rng.random_range(1..=n_max);
        let mut members = sample(&mut rng, n_max, k).into_vec();
        members.sort_unstable();
        let adj = matrix(k, k, |i, j| if i != j && rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let edges: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|&(i, j)| adj[i][j] == 1.0)
            .collect();
        let (w, y) = lift_subgraph(&Topology::from_edges(k, &edges).unwrap(), &members, n_max).unwrap();
        let back = w.restrict(&members);
        let same = (0..k).all(|i| (0..k).all(|j| back[[i, j]] == adj[i][j]));
        let outside_zero = (0..n_max).all(|i| {
            (0..n_max).all(|j| (members.contains(&i) && members.contains(&j)) || w.get(i, j) == 0.0)
        });
        if !(same && outside_zero && y.members() == members) {
            failures += 1;
        }
    }
    let tasks = generate_tasks([5, 5, 5], 3, "lift");
    let out = collect(&tasks, 15, &PlantedEvaluator::default(), &CollectorConfig { budget: 200, ..Default::default() })
        .unwrap();
    let invalid = out.pairs.iter().filter(|p| p.validate().is_err()).count();
    Outcome {
        pass: failures == 0 && invalid == 0,
        detail: format!("{failures}/1000 round-trip failures, {invalid}/{} invalid pairs", out.pairs.len()),
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (n_max, mu, sigma) = (16usize, 8.0, 2.0);
    let phi = StatNormal::new(mu, sigma).unwrap();
    let z = phi.cdf(n_max as f64) - phi.cdf(2.0);
    // continuous draws truncated to [2, n_max], then rounded half-up
    let cdf = |k: usize| (phi.cdf((k as f64 + 0.5).min(n_max as f64)) - phi.cdf(2.0)) / z;
    let mut stats = Vec::new();
    for seed in 0..5 {
        let cfg = CollectorConfig { budget: 2000, sigma, mu: Some(mu), seed, ..Default::default() };
        let orders = sample_orders(&cfg, n_max).unwrap();
        let d = (2..=n_max)
            .map(|k| {
                let empirical = orders.iter().filter(|&&o| o <= k).count() as f64 / orders.len() as f64;
                (empirical - cdf(k)).abs()
            })
            .fold(0.0, f64::max);
        stats.push(d);
    }
    let mean = stats.iter().sum::<f64>() / stats.len() as f64;
    let elapsed = start.elapsed();
    Outcome {
        pass: mean < 0.05 && elapsed < Duration::from_secs(5),
        detail: format!("mean KS statistic {mean:.4} over 5 seeds in {elapsed:.2?}"),
    }
}

fn base_config(dir: &Path) -> Config {
    let mut cfg = Config { seed: 1, ..Default::default() };
    cfg.paths.corpus = Some(dir.join("corpus.jsonl"));
    cfg.paths.checkpoint = Some(dir.join("prunenet.json"));
    cfg
}

struct Planted {
    cfg: Config,
    held: Vec<TaskSpec>,
    held_path: std::path::PathBuf,
}

fn criterion_5(dir: &Path) -> (Outcome, Planted) {
    let start = Instant::now();
    let mut cfg = base_config(dir);
    cfg.collector.budget = 300;
    cmd_synth(&cfg, agp_core::synthetic::ratio_counts(460), "train", &dir.join("train.jsonl")).unwrap();
    let stats = cmd_collect(&cfg, &dir.join("train.jsonl"), EvaluatorKind::Planted).unwrap();
    let summary = cmd_train(&cfg, None).unwrap();

    let held_path = dir.join("held.jsonl");
    let held_cfg = Config { seed: 2, ..cfg.clone() };
    cmd_synth(&held_cfg, [10, 10, 10], "held", &held_path).unwrap();
    let held = load_tasks(&held_path).unwrap();
    let train_texts: std::collections::HashSet<String> =
        load_tasks(&dir.join("train.jsonl")).unwrap().into_iter().map(|t| t.task_text).collect();
    let unseen = held.iter().filter(|t| !train_texts.contains(&t.task_text)).count();

    let pool = AgentPool::default_roster();
    let embed = HashEmbedder::default();
    let params = load_checkpoint(&std::fs::read(dir.join("prunenet.json")).unwrap(), None).unwrap();
    let teams = PlantedTeams::default();
    let hits = held
        .iter()
        .filter(|t| {
            let topo = design_topology(&t.task_text, &pool, &embed, &params, cfg.theta).unwrap();
            topo.mask().members() == teams.team(t.category)
        })
        .count();
    let elapsed = start.elapsed();
    let outcome = Outcome {
        pass: hits * 10 >= held.len() * 9 && elapsed < Duration::from_secs(300),
        detail: format!(
            "{hits}/{} held-out queries ({unseen} unseen texts) recover the exact team; {} pairs, {} epochs, loss {:.3} -> {:.3}; {elapsed:.1?}",
            held.len(),
            stats.pairs,
            cfg.train.epochs,
            summary.initial_loss(),
            summary.final_loss()
        ),
    };
    (outcome, Planted { cfg, held, held_path })
}

fn criterion_6(dir: &Path, planted: &Planted) -> Outcome {
    let opts = BenchOptions {
        methods: vec!["designed".into(), "complete".into()],
        repeats: agp_core::baselines::DEFAULT_REPEATS,
        out_dir: dir.join("bench"),
    };
    let report = cmd_bench(&planted.cfg, &planted.held_path, &opts).unwrap();
    let d = report.row("designed").unwrap();
    let c = report.row("complete").unwrap();
    let written = dir.join("bench/held.bench.csv").exists() && dir.join("bench/held.bench.md").exists();
    Outcome {
        pass: d.mean_tokens <= 0.4 * c.mean_tokens && d.accuracy >= c.accuracy && written,
        detail: format!(
            "designed {:.0} tokens ({:.1}% of complete {:.0}), accuracy {:.2} vs {:.2}",
            d.mean_tokens,
            100.0 * d.mean_tokens / c.mean_tokens,
            c.mean_tokens,
            d.accuracy,
            c.accuracy
        ),
    }
}

fn criterion_7(dir: &Path, planted: &Planted) -> Outcome {
    let pool = AgentPool::default_roster();
    let backends = BackendSet::new(std::sync::Arc::new(PlantedBackend::default()), std::sync::Arc::new(MajorityDecision));
    let task = &planted.held[0];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut count_ok = true;
    for m in 2..=15 {
        let mut members = sample(&mut rng, 15, m).into_vec();
        members.sort_unstable();
        let topo = complete_on(&NodeMask::from_members(15, &members).unwrap()).unwrap();
        let run = run_topology(&topo, task, &pool, &backends, &RunConfig { k: 3, theta: 0.5, seed: m as u64 }).unwrap();
        count_ok &= run.transcript.len() == 3 * m + 1;
    }
    let a = dir.join("run_a.json");
    let b = dir.join("run_b.json");
    let ra = cmd_run(&planted.cfg, task, &a).unwrap();
    cmd_run(&planted.cfg, task, &b).unwrap();
    let identical = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let m = ra.topology_used.mask().active_count();
    let designed_ok = ra.transcript.len() == 3 * m + 1;
    Outcome {
        pass: count_ok && identical && designed_ok,
        detail: format!(
            "3m+1 entries for m = 2..15: {count_ok}; designed run m = {m} has {} entries; replay byte-identical: {identical}",
            ra.transcript.len()
        ),
    }
}

fn criterion_8(dir: &Path, planted: &Planted) -> Outcome {
    let mut finals = Vec::new();
    let mut logs = Vec::new();
    let mut ok = true;
    for beta in [0.75, 1.0, 1.333] {
        let mut cfg = planted.cfg.clone();
        cfg.train.beta = beta;
        cfg.paths.checkpoint = Some(dir.join(format!("beta_{beta}.json")));
        match cmd_train(&cfg, None) {
            Ok(s) => {
                ok &= s.log.records.iter().all(|r| r.total.is_finite());
                finals.push(format!("beta {beta}: {:.4}", s.final_loss()));
                logs.push(std::fs::read_to_string(&s.log_path).unwrap());
            }
            Err(e) => {
                ok = false;
                finals.push(format!("beta {beta}: {e}"));
            }
        }
    }
    let distinct = logs.len() == 3 && logs[0] != logs[1] && logs[1] != logs[2] && logs[0] != logs[2];
    Outcome { pass: ok && distinct, detail: format!("{}; distinct logs: {distinct}", finals.join(", ")) }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let normal = Normal::new(8.0, 1.3).unwrap();
    let counts: Vec<usize> = (0..500)
        .map(|_| {
            let v: f64 = normal.sample(&mut rng);
            v.round().max(0.0) as usize
        })
        .collect();
    let fit = fit_counts(&counts).unwrap();
    Outcome {
        pass: (fit.mu - 8.0).abs() <= 0.5 && (1.0..=1.6).contains(&fit.sigma),
        detail: format!("mu {:.3}, sigma {:.3}, A {:.1}", fit.mu, fit.sigma, fit.a),
    }
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    report(&mut results, 1, "gradient oracle", criterion_1());
    report(&mut results, 2, "loss hand cases", criterion_2());
    report(&mut results, 3, "lifting round trip", criterion_3());
    report(&mut results, 4, "collector order distribution", criterion_4());
    let (o5, planted) = criterion_5(dir.path());
    report(&mut results, 5, "planted recovery", o5);
    report(&mut results, 6, "token economy", criterion_6(dir.path(), &planted));
    report(&mut results, 7, "orchestrator counting and replay", criterion_7(dir.path(), &planted));
    report(&mut results, 8, "beta sweep", criterion_8(dir.path(), &planted));
    report(&mut results, 9, "gaussian fit", criterion_9());
    let failed: Vec<String> =
        results.iter().filter(|(_, _, o)| !o.pass).map(|(id, name, _)| format!("{id} ({name})")).collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}

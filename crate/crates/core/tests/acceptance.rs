//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single `criterion N: PASS|FAIL` line straight to stdout so the verdicts
//! survive output capture.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use dcnas::config::ExperimentConfig;
use dcnas::features::{features, features_from_outputs, FeatureSource};
use dcnas::kmeans::{kmeans, squared_distance, KMeansParams};
use dcnas::nn::LayerKind;
use dcnas::pipeline::{
    build_oracle, early_logs, prepare, run_global_early_stopping, run_pipeline, run_pipeline_until,
    PipelineOptions, Stage,
};
use dcnas::search_space::{ArchCode, BlockOp, SearchSpace};
use dcnas::seed::{self, Stream};
use dcnas::supernet::{draw_arch, select_by_probability, ProbabilityScore, SupernetState};
use dcnas::trainer::full_trainings_started;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criterion 9 reads a process-wide counter, so nothing trains concurrently.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, ok: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {n}: {} ({detail}; {:.1}s)\n",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn desk() -> ExperimentConfig {
    ExperimentConfig::default()
}

#[test]
fn criterion_1_gradients() {
    let _g = serial();
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for kind in LayerKind::ALL {
        for seed in 0..20 {
            worst = worst.max(common::gradient_error(kind, seed));
        }
    }
    let ok = worst < 1e-3;
    verdict(
        1,
        ok,
        &format!("worst relative error {worst:.2e} over 7 kinds x 20 seeds"),
        t,
    );
    assert!(ok);
}

#[test]
fn criterion_2_feature_invariants() {
    let _g = serial();
    let t = Instant::now();
    let mut cfg = desk();
    cfg.eta = 5;
    let prepared = prepare(&cfg, 0).unwrap();
    let codes = cfg.space.enumerate(27).unwrap();
    assert_eq!(codes.len(), 27);
    let logs = early_logs(&cfg, &prepared, &codes, 5, 0, 1).unwrap();
    let feats: Vec<_> = logs
        .iter()
        .map(|l| features(l, FeatureSource::OutputBased).unwrap())
        .collect();
    let bounded = feats
        .iter()
        .all(|f| f.flatten().iter().all(|v| (-1.0..=1.0).contains(v)));
    let first_ones = feats
        .iter()
        .all(|f| f.matrix.iter().all(|row| (row[0] - 1.0).abs() < 1e-12));

    let mut frozen = cfg.clone();
    frozen.train.lr = 0.0;
    frozen.feature_source = FeatureSource::ParamBased;
    let still = early_logs(&frozen, &prepared, &codes, 5, 0, 1).unwrap();
    let zero_lr = still.iter().all(|l| {
        [FeatureSource::OutputBased, FeatureSource::ParamBased]
            .iter()
            .all(|&s| {
                let f = features(l, s).unwrap();
                f.flatten().iter().all(|v| (v - 1.0).abs() < 1e-12)
            })
    });

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut scale_ok = true;
    for _ in 0..100 {
        let log = &logs[rng.gen_range(0..logs.len())];
        let base = features_from_outputs(log).unwrap();
        let layer = rng.gen_range(0..base.layers());
        let c: f32 = 10f32.powf(rng.gen_range(-3.0..3.0));
        let mut scaled = log.clone();
        for epoch in &mut scaled.epochs {
            epoch.probe_outputs[layer].iter_mut().for_each(|v| *v *= c);
        }
        let f = features_from_outputs(&scaled).unwrap();
        scale_ok &= base
            .flatten()
            .iter()
            .zip(f.flatten())
            .all(|(a, b)| (a - b).abs() < 1e-5);
    }
    let ok = bounded && first_ones && zero_lr && scale_ok;
    verdict(
        2,
        ok,
        &format!("bounded {bounded}, epoch-1 ones {first_ones}, lr 0 ones {zero_lr}, rescaling {scale_ok}"),
        t,
    );
    assert!(ok);
}

#[test]
fn criterion_3_kmeans() {
    let _g = serial();
    let t = Instant::now();
    let mut monotone = true;
    let mut nearest = true;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(10..80);
        let dim = rng.gen_range(1..6);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let params = KMeansParams {
            k: rng.gen_range(1..6),
            seed,
            ..Default::default()
        };
        let m = kmeans(&points, &params).unwrap();
        monotone &= m.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9);
        for (p, &a) in points.iter().zip(&m.assignments) {
            let d: Vec<f64> = m.centroids.iter().map(|c| squared_distance(c, p)).collect();
            let best = d.iter().copied().fold(f64::INFINITY, f64::min);
            nearest &= d.iter().position(|&v| v == best) == Some(a);
        }
    }
    let points: Vec<Vec<f64>> = [0.0, 1.0, 10.0, 11.0].iter().map(|&v| vec![v]).collect();
    let blobs = (0..20).all(|seed| {
        let m = kmeans(
            &points,
            &KMeansParams {
                k: 2,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let a = &m.assignments;
        a[0] == a[1] && a[2] == a[3] && a[0] != a[2] && (m.inertia - 1.0).abs() < 1e-12
    });
    let ok = monotone && nearest && blobs;
    verdict(
        3,
        ok,
        &format!("monotone {monotone}, nearest {nearest}, two blobs {blobs}"),
        t,
    );
    assert!(ok);
}

#[test]
fn criterion_4_degeneration() {
    let _g = serial();
    let t = Instant::now();
    let cfg = ExperimentConfig { k: 1, ..desk() };
    let seeds = [0u64, 1];
    let mut ok = true;
    for seed in seeds {
        let dc = run_pipeline(&cfg, seed, &PipelineOptions::default()).unwrap();
        let (global, selection) =
            run_global_early_stopping(&cfg, seed, &PipelineOptions::default()).unwrap();
        ok &= serde_json::to_vec_pretty(&dc.summary).unwrap()
            == serde_json::to_vec_pretty(&global).unwrap();
        ok &= dc.selection == selection;
    }
    verdict(
        4,
        ok,
        "K = 1 summary vs global early stopping on seeds 0 and 1",
        t,
    );
    assert!(ok);
}

#[test]
fn criteria_5_and_6_comparison_against_the_oracle() {
    let _g = serial();
    let t = Instant::now();
    let cfg = ExperimentConfig {
        seeds: (0..10).collect(),
        ..desk()
    };
    let mut oracles = BTreeMap::new();
    for &seed in &cfg.seeds {
        let d = prepare(&cfg, seed).unwrap().d;
        oracles.insert(
            seed,
            build_oracle(&cfg.space, &d, cfg.full_epochs, seed, &cfg.train, 1).unwrap(),
        );
    }
    let etas = [1, cfg.eta, cfg.full_epochs / 2];
    let report = dcnas::compare::compare_strategies(&cfg, &oracles, &[1, 3], &etas, 20, 1).unwrap();
    let mut out = std::io::stdout().lock();
    out.write_all(report.render_table().as_bytes()).unwrap();
    drop(out);

    let k1 = report.row(1, cfg.eta).unwrap();
    let k3 = report.row(3, cfg.eta).unwrap();
    let a = k3.mean_rank <= k1.mean_rank;
    let b = k3.top3 >= 7;
    let c = k3.cluster_beats_global >= 7;
    verdict(
        5,
        a && b && c,
        &format!(
            "(a) mean rank K=3 {:.2} vs K=1 {:.2}: {a}; (b) top-3 in {}/10: {b}; (c) per-cluster >= global in {}/10: {c}",
            k3.mean_rank, k1.mean_rank, k3.top3, k3.cluster_beats_global
        ),
        t,
    );

    let rho = |seed: u64, eta: usize| {
        report
            .bias
            .iter()
            .find(|p| p.seed == seed && p.eta == eta)
            .unwrap()
            .spearman_e_params
    };
    let negative = cfg.seeds.iter().filter(|&&s| rho(s, 1) < 0.0).count();
    let shrinks = cfg
        .seeds
        .iter()
        .filter(|&&s| rho(s, cfg.full_epochs / 2).abs() < rho(s, 1).abs())
        .count();
    let per_seed: Vec<String> = cfg
        .seeds
        .iter()
        .map(|&s| format!("{:.2}/{:.2}", rho(s, 1), rho(s, cfg.full_epochs / 2)))
        .collect();
    let six = negative >= 8 && shrinks >= 7;
    verdict(
        6,
        six,
        &format!(
            "negative at eta 1 in {negative}/10, shrinks by eta {} in {shrinks}/10 [{}]",
            cfg.full_epochs / 2,
            per_seed.join(" ")
        ),
        t,
    );
    assert!(a && b && c, "criterion 5");
    assert!(six, "criterion 6");
}

#[test]
fn criterion_7_supernet_representative_and_sampling() {
    let _g = serial();
    let t = Instant::now();
    let ops: Vec<BlockOp> = ["skip", "k3e1", "k3e3", "k5e1"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let space = SearchSpace::layerwise(4, &ops, 4, [3, 8, 8], 4).unwrap();
    assert_eq!(space.size(), Some(256));
    let mut state = SupernetState::new(&space, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut scan = true;
    for _ in 0..1000 {
        let alpha = (0..4)
            .map(|_| (0..4).map(|_| rng.gen_range(-4..5) as f64 / 2.0).collect())
            .collect();
        state.set_alpha(alpha).unwrap();
        let n = rng.gen_range(1..30);
        let members: Vec<ArchCode> = (0..n)
            .map(|_| ArchCode((0..4).map(|_| rng.gen_range(0..4)).collect()))
            .collect();
        let score = |c: &ArchCode| {
            c.0.iter()
                .enumerate()
                .map(|(b, &o)| state.alpha[b][o])
                .sum::<f64>()
        };
        let mut best = &members[0];
        for m in &members[1..] {
            let (s, bs) = (score(m), score(best));
            if s > bs || (s == bs && space.index_of(m).unwrap() < space.index_of(best).unwrap()) {
                best = m;
            }
        }
        scan &=
            select_by_probability(&members, &state, ProbabilityScore::RawLogit).unwrap() == *best;
    }

    let uniform = SupernetState::new(&space, 0).unwrap();
    let mut draws = seed::rng(7, Stream::Sampling, &[]);
    let mut counts = [[0usize; 4]; 4];
    for _ in 0..10_000 {
        for (b, &o) in draw_arch(&uniform, &mut draws).0.iter().enumerate() {
            counts[b][o] += 1;
        }
    }
    let sd = (10_000.0f64 * 0.25 * 0.75).sqrt();
    let freq = counts
        .iter()
        .flatten()
        .all(|&c| (c as f64 - 2500.0).abs() <= 3.0 * sd);
    let ok = scan && freq;
    verdict(
        7,
        ok,
        &format!("1000 brute-force scans {scan}, +-3 sigma frequencies {freq}"),
        t,
    );
    assert!(ok);
}

#[test]
fn criterion_8_determinism_and_resume() {
    let _g = serial();
    let t = Instant::now();
    let cfg = desk();
    let opts = |dir: &std::path::Path| PipelineOptions {
        out_dir: Some(dir.to_path_buf()),
        ..Default::default()
    };
    let read = |dir: &std::path::Path| std::fs::read(dir.join("summary.json")).unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, 3, &opts(first.path())).unwrap();
    run_pipeline(&cfg, 3, &opts(second.path())).unwrap();
    let expect = read(first.path());
    let repeat = read(second.path()) == expect;
    let mut resumed = Vec::new();
    for &stage in Stage::ALL.iter().filter(|&&s| s != Stage::Supernet) {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline_until(&cfg, 3, &opts(dir.path()), stage).unwrap();
        run_pipeline(&cfg, 3, &opts(dir.path())).unwrap();
        if read(dir.path()) != expect {
            resumed.push(stage.name());
        }
    }
    let ok = repeat && resumed.is_empty();
    verdict(
        8,
        ok,
        &format!("byte-identical repeat {repeat}, mismatched resumes {resumed:?}"),
        t,
    );
    assert!(ok);
}

#[test]
fn criterion_9_cost_accounting() {
    let _g = serial();
    let t = Instant::now();
    let mut ok = true;
    let mut seen = Vec::new();
    for k in [1, 3, 5] {
        let cfg = ExperimentConfig { k, ..desk() };
        let before = full_trainings_started();
        let out = run_pipeline(&cfg, 4, &PipelineOptions::default()).unwrap();
        let spent = full_trainings_started() - before;
        seen.push(format!("K={k}: {spent}"));
        ok &= spent == k && out.summary.full_trainings == k;
    }
    verdict(
        9,
        ok,
        &format!("full trainings counted {}", seen.join(", ")),
        t,
    );
    assert!(ok);
}

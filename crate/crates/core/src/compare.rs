//! Grid comparison over cluster count and early-stop length against an
//! exhaustive oracle.
//!
//! Every seed's sample is early-trained once for the longest `eta`; shorter
//! runs are truncations of that log. Champions are scored by oracle lookup,
//! which equals their full training under the same seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{write_atomic, OracleTable};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::features;
use crate::pipeline::{champions_by_score, cluster_features, early_logs, prepare};
use crate::search_space::ArchId;
use crate::selection::{
    random_search_baseline, ranking_score, spearman, EvalRecord, SelectionResult,
};
use crate::trainer::TrajectoryLog;

/// One seed at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub eta: usize,
    pub winner: ArchId,
    pub winner_rank: usize,
    pub winner_y: f64,
    /// Mean normalized ranking score over clusters with an untied pair.
    pub per_cluster_score: Option<f64>,
    pub global_score: f64,
    pub rs_budget: usize,
    pub rs_mean_best_y: f64,
    pub rs_mean_best_rank: f64,
}

/// Aggregate of one grid point across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub eta: usize,
    pub mean_rank: f64,
    pub std_rank: f64,
    pub top3: usize,
    pub mean_winner_y: f64,
    pub mean_per_cluster_score: f64,
    pub mean_global_score: f64,
    /// Seeds where the per-cluster score is at least the global one.
    pub cluster_beats_global: usize,
    pub rs_budget: usize,
    pub rs_mean_best_y: f64,
    pub rs_mean_best_rank: f64,
}

/// Spearman correlation between `E` and parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub seed: u64,
    pub eta: usize,
    pub spearman_e_params: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<GridRow>,
    pub outcomes: Vec<SeedOutcome>,
    pub bias: Vec<BiasPoint>,
}

/// Scores one seed's logs at one `(K, eta)` grid point.
pub fn evaluate_grid_point(
    cfg: &ExperimentConfig,
    oracle: &OracleTable,
    logs: &[TrajectoryLog],
    k: usize,
    eta: usize,
    seed: u64,
    rs_repeats: usize,
) -> Result<SeedOutcome> {
    let space = &cfg.space;
    let logs: Vec<TrajectoryLog> = logs.iter().map(|l| l.truncated(eta)).collect();
    let feats = logs
        .iter()
        .map(|l| features(l, cfg.feature_source))
        .collect::<Result<Vec<_>>>()?;
    let model = cluster_features(cfg, &feats, k, seed)?;
    let records: Vec<EvalRecord> = logs
        .iter()
        .zip(&model.assignments)
        .map(|(l, &c)| {
            Ok(EvalRecord {
                arch_id: l.arch_id,
                e: l.score(),
                y: Some(oracle.y(l.arch_id)?),
                cluster: c,
            })
        })
        .collect::<Result<_>>()?;
    let champions = champions_by_score(&records, k)?;
    let ys = champions
        .iter()
        .map(|&id| oracle.y(id).map(Some))
        .collect::<Result<Vec<_>>>()?;
    let sel = SelectionResult::from_scores(champions, ys)?;

    let per_cluster: Vec<f64> = (0..k)
        .filter_map(|c| {
            let members: Vec<EvalRecord> =
                records.iter().filter(|r| r.cluster == c).cloned().collect();
            ranking_score(&members)
                .ok()
                .filter(|s| s.pairs > 0)
                .map(|s| s.normalized)
        })
        .collect();
    let per_cluster_score = (!per_cluster.is_empty())
        .then(|| per_cluster.iter().sum::<f64>() / per_cluster.len() as f64);
    let global_score = ranking_score(&records).map(|s| s.normalized).unwrap_or(0.0);

    let rs_budget = cfg.random_search_budget(eta, k);
    let rs = random_search_baseline(space, rs_budget, rs_repeats.max(1), seed, |c| {
        oracle.y(space.index_of(c)?)
    })?;
    let rs_mean_best_rank = rs
        .best
        .iter()
        .map(|&(id, _)| oracle.rank(id).map(|r| r as f64))
        .sum::<Result<f64>>()?
        / rs.best.len() as f64;

    Ok(SeedOutcome {
        seed,
        k,
        eta,
        winner: sel.winner,
        winner_rank: oracle.rank(sel.winner)?,
        winner_y: sel.winner_accuracy,
        per_cluster_score,
        global_score,
        rs_budget,
        rs_mean_best_y: rs.mean_best_y,
        rs_mean_best_rank,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Runs the grid `ks x etas` over every configured seed. `oracles` maps
/// each seed to the oracle trained on that seed's dataset.
pub fn compare_strategies(
    cfg: &ExperimentConfig,
    oracles: &BTreeMap<u64, OracleTable>,
    ks: &[usize],
    etas: &[usize],
    rs_repeats: usize,
    workers: usize,
) -> Result<CompareReport> {
    cfg.validate()?;
    if ks.is_empty() || etas.is_empty() {
        return Err(Error::argument("the grid needs at least one K and one eta"));
    }
    let max_eta = *etas.iter().max().expect("non-empty");
    if max_eta > cfg.full_epochs || etas.contains(&0) {
        return Err(Error::argument(format!(
            "every eta must lie in 1..={}",
            cfg.full_epochs
        )));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > cfg.s) {
        return Err(Error::argument(format!(
            "K = {k} must lie in 1..={}",
            cfg.s
        )));
    }
    let mut outcomes = Vec::new();
    let mut bias = Vec::new();
    for &seed in &cfg.seeds {
        let oracle = oracles
            .get(&seed)
            .ok_or_else(|| Error::config(format!("no oracle for seed {seed}; build one first")))?;
        if cfg.space.size() != Some(oracle.len() as u128) {
            return Err(Error::config(format!(
                "oracle for seed {seed} does not cover the space"
            )));
        }
        let prepared = prepare(cfg, seed)?;
        let codes = cfg.space.sample_uniform(cfg.s, seed)?;
        let logs = early_logs(cfg, &prepared, &codes, max_eta, seed, workers)?;
        let params: Vec<f64> = logs.iter().map(|l| l.param_count as f64).collect();
        for &eta in etas {
            let e: Vec<f64> = logs.iter().map(|l| l.truncated(eta).score()).collect();
            bias.push(BiasPoint {
                seed,
                eta,
                spearman_e_params: spearman(&e, &params).unwrap_or(0.0),
            });
            for &k in ks {
                outcomes.push(evaluate_grid_point(
                    cfg, oracle, &logs, k, eta, seed, rs_repeats,
                )?);
            }
        }
    }
    let mut rows = Vec::new();
    for &k in ks {
        for &eta in etas {
            let pts: Vec<&SeedOutcome> = outcomes
                .iter()
                .filter(|o| o.k == k && o.eta == eta)
                .collect();
            let ranks: Vec<f64> = pts.iter().map(|o| o.winner_rank as f64).collect();
            let pcs: Vec<f64> = pts.iter().filter_map(|o| o.per_cluster_score).collect();
            rows.push(GridRow {
                k,
                eta,
                mean_rank: mean(&ranks),
                std_rank: std_dev(&ranks),
                top3: pts.iter().filter(|o| o.winner_rank <= 3).count(),
                mean_winner_y: mean(&pts.iter().map(|o| o.winner_y).collect::<Vec<_>>()),
                mean_per_cluster_score: mean(&pcs),
                mean_global_score: mean(&pts.iter().map(|o| o.global_score).collect::<Vec<_>>()),
                cluster_beats_global: pts
                    .iter()
                    .filter(|o| o.per_cluster_score.is_some_and(|p| p >= o.global_score))
                    .count(),
                rs_budget: pts.first().map_or(0, |o| o.rs_budget),
                rs_mean_best_y: mean(&pts.iter().map(|o| o.rs_mean_best_y).collect::<Vec<_>>()),
                rs_mean_best_rank: mean(
                    &pts.iter().map(|o| o.rs_mean_best_rank).collect::<Vec<_>>(),
                ),
            });
        }
    }
    Ok(CompareReport {
        seeds: cfg.seeds.clone(),
        rows,
        outcomes,
        bias,
    })
}

impl CompareReport {
    pub fn row(&self, k: usize, eta: usize) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.k == k && r.eta == eta)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seeds: {:?}", self.seeds);
        let _ = writeln!(
            out,
            "random-search budget = round(s * eta / full_epochs * sigma) + K"
        );
        let _ = writeln!(
            out,
            "{:>4} {:>4} {:>9} {:>8} {:>5} {:>9} {:>9} {:>9} {:>6} {:>6} {:>9} {:>9}",
            "K",
            "eta",
            "mean_rank",
            "std",
            "top3",
            "winner_y",
            "cluster",
            "global",
            "c>=g",
            "budget",
            "rs_y",
            "rs_rank"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>4} {:>4} {:>9.3} {:>8.3} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>9.4} {:>9.3}",
                r.k,
                r.eta,
                r.mean_rank,
                r.std_rank,
                r.top3,
                r.mean_winner_y,
                r.mean_per_cluster_score,
                r.mean_global_score,
                r.cluster_beats_global,
                r.rs_budget,
                r.rs_mean_best_y,
                r.rs_mean_best_rank
            );
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::config(format!("csv buffer: {e}")))?;
        write_atomic(path, &bytes)
    }
}

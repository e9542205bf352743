//! End-to-end search: sample, train briefly, featurize, cluster, pick one
//! champion per cluster, fully train the champions.
//!
//! With an output directory every stage persists its result; a rerun in
//! the same directory loads finished stages instead of recomputing them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::{
    load_json, load_jsonl, save_json, save_jsonl, save_results, write_atomic, ClustersFile,
    OracleRow, OracleTable, ResultRow, Summary, TrajectoryRecord,
};
use crate::config::{ExperimentConfig, SearchMode};
use crate::data::{make_synthetic_dataset, reduce_dataset, Dataset, ReducedSpec};
use crate::error::{Error, Result};
use crate::features::{features, FeatureSource, TrajectoryFeature};
use crate::kmeans::{kmeans, ClusterModel, KMeansParams};
use crate::search_space::{ArchCode, ArchId, SearchSpace};
use crate::selection::{
    fidelity_mse, merge, random_search_baseline, random_search_trained, ranking_score,
    select_in_cluster, EvalRecord, RandomSearchResult, SelectionResult,
};
use crate::supernet::{
    sample_archs, select_by_probability, train_supernet, SupernetCheckpoint, SupernetState,
};
use crate::trainer::{
    run_parallel, train_early, train_early_from, train_full, Probe, TrainSettings, TrajectoryLog,
};

/// Largest space the oracle will enumerate.
pub const ORACLE_GUARD: u128 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Supernet,
    Sample,
    EarlyTrain,
    Features,
    Cluster,
    Select,
    Merge,
    Baseline,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Supernet,
        Stage::Sample,
        Stage::EarlyTrain,
        Stage::Features,
        Stage::Cluster,
        Stage::Select,
        Stage::Merge,
        Stage::Baseline,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Supernet => "supernet",
            Stage::Sample => "sample",
            Stage::EarlyTrain => "early_train",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::Select => "select",
            Stage::Merge => "merge",
            Stage::Baseline => "baseline",
            Stage::Report => "report",
        }
    }
}

/// Full dataset, reduced dataset and probe set of one seed.
pub struct Prepared {
    pub d: Dataset,
    pub reduced: Dataset,
    pub probe: Probe,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let d = make_synthetic_dataset(&cfg.dataset, seed)?;
    let reduced = reduce_dataset(
        &d,
        &ReducedSpec {
            sigma: cfg.sigma,
            seed,
            stratified: cfg.stratified,
        },
    )?;
    let probe = Probe::sample(&reduced, cfg.probe_size, seed)?;
    Ok(Prepared { d, reduced, probe })
}

/// Early-trains every code (in parallel, order kept).
pub fn early_logs(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    codes: &[ArchCode],
    eta: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<TrajectoryLog>> {
    let capture = cfg.feature_source == FeatureSource::ParamBased;
    run_parallel(codes, workers, |code| {
        train_early(
            &cfg.space,
            code,
            &prepared.reduced,
            eta,
            seed,
            &prepared.probe,
            &cfg.train,
            capture,
        )
        .map(|(_, log)| log)
    })
}

/// k-means over flattened features; cluster labels are canonical (ordered
/// by their lowest member arch id).
pub fn cluster_features(
    cfg: &ExperimentConfig,
    feats: &[TrajectoryFeature],
    k: usize,
    seed: u64,
) -> Result<ClusterModel> {
    let points: Vec<Vec<f64>> = feats.iter().map(|f| f.flatten()).collect();
    let ids: Vec<ArchId> = feats.iter().map(|f| f.arch_id).collect();
    let mut model = kmeans(
        &points,
        &KMeansParams {
            k,
            seed,
            max_iter: cfg.cluster.max_iter,
            tol: cfg.cluster.tol,
        },
    )?;
    model.canonicalize(&ids);
    Ok(model)
}

/// Highest-`E` member of every cluster, in cluster order.
pub fn champions_by_score(records: &[EvalRecord], k: usize) -> Result<Vec<ArchId>> {
    (0..k)
        .filter_map(|c| {
            let members: Vec<EvalRecord> =
                records.iter().filter(|r| r.cluster == c).cloned().collect();
            (!members.is_empty()).then(|| select_in_cluster(&members))
        })
        .collect()
}

/// Fully trains every architecture of a small space.
pub fn build_oracle(
    space: &SearchSpace,
    d: &Dataset,
    epochs: usize,
    seed: u64,
    settings: &TrainSettings,
    workers: usize,
) -> Result<OracleTable> {
    match space.size() {
        Some(p) if p <= ORACLE_GUARD => {}
        _ => {
            return Err(Error::config(format!(
                "space of {} architectures exceeds the oracle guard of {ORACLE_GUARD}",
                space.size_f64()
            )))
        }
    }
    let codes = space.enumerate(ORACLE_GUARD)?;
    let rows = run_parallel(&codes, workers, |code| {
        let (y, net) = train_full(space, code, d, epochs, seed, settings)?;
        Ok(OracleRow {
            arch: space.format_arch(code),
            arch_id: space.index_of(code)?,
            y,
            params: net.param_count(),
            flops: net.flops(),
        })
    })?;
    OracleTable::new(rows)
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Where artifacts are written and resumed from.
    pub out_dir: Option<PathBuf>,
    /// Ground truth for ranking statistics and an untrained baseline.
    pub oracle: Option<OracleTable>,
    /// Overrides the configured worker count.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub summary: Summary,
    pub selection: SelectionResult,
    pub clusters: ClusterModel,
    pub records: Vec<TrajectoryRecord>,
    pub results: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunIdentity {
    seed: u64,
    config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelectionFile {
    criterion: String,
    champions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MergeFile {
    champions: Vec<String>,
    champion_y: Vec<Option<f64>>,
    full_trainings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaselineFile {
    budget: usize,
    repeats: usize,
    mean_best_y: f64,
    full_trainings: usize,
}

struct Store {
    dir: Option<PathBuf>,
}

impl Store {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn existing(&self, name: &str) -> Option<PathBuf> {
        self.path(name).filter(|p| p.exists())
    }
}

fn staged<T>(stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage.name()))
}

fn parse_codes(space: &SearchSpace, lines: &[String]) -> Result<Vec<ArchCode>> {
    lines.iter().map(|l| space.parse_arch(l)).collect()
}

fn train_supernet_for(
    cfg: &ExperimentConfig,
    reduced: &Dataset,
    seed: u64,
) -> Result<SupernetState> {
    let mut state = SupernetState::new(&cfg.space, seed)?;
    train_supernet(
        &mut state,
        reduced,
        cfg.supernet.epochs,
        cfg.supernet.warmup,
        seed,
        &cfg.supernet.settings,
    )?;
    Ok(state)
}

/// Runs the whole search for one root seed.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<PipelineOutcome> {
    run_stages(cfg, seed, opts, None).map(|o| o.expect("no stop stage"))
}

/// Runs the search up to and including `stop`, leaving the artifacts a
/// later [`run_pipeline`] resumes from.
pub fn run_pipeline_until(
    cfg: &ExperimentConfig,
    seed: u64,
    opts: &PipelineOptions,
    stop: Stage,
) -> Result<()> {
    if opts.out_dir.is_none() {
        return Err(Error::argument("stopping early needs an output directory"));
    }
    run_stages(cfg, seed, opts, Some(stop)).map(|_| ())
}

fn run_stages(
    cfg: &ExperimentConfig,
    seed: u64,
    opts: &PipelineOptions,
    stop: Option<Stage>,
) -> Result<Option<PipelineOutcome>> {
    staged(Stage::Sample, || cfg.validate())?;
    let workers = opts.workers.unwrap_or(cfg.worker_count).max(1);
    let store = Store {
        dir: opts.out_dir.clone(),
    };
    if let Some(path) = store.path("run.json") {
        let identity = RunIdentity {
            seed,
            config: ExperimentConfig {
                worker_count: 0,
                ..cfg.clone()
            },
        };
        staged(Stage::Sample, || {
            if path.exists() {
                let previous: RunIdentity = load_json(&path)?;
                if previous != identity {
                    return Err(Error::config(format!(
                        "{} holds a different run; use a fresh output directory",
                        path.parent().unwrap_or(Path::new(".")).display()
                    )));
                }
                Ok(())
            } else {
                save_json(&path, &identity)
            }
        })?;
    }
    let halt = |s: Stage| stop == Some(s);
    let space = &cfg.space;
    let prepared = staged(Stage::Sample, || prepare(cfg, seed))?;
    let supernet_mode = cfg.mode == SearchMode::Supernet;

    // Supernet: trained lazily, and checked against its checkpoint when a
    // resumed run has to retrain it.
    let mut supernet: Option<SupernetState> = None;
    let mut checkpoint: Option<SupernetCheckpoint> = None;
    if supernet_mode {
        staged(Stage::Supernet, || {
            if let Some(p) = store.existing("supernet.json") {
                checkpoint = Some(load_json(&p)?);
            } else {
                let state = train_supernet_for(cfg, &prepared.reduced, seed)?;
                let ck = state.checkpoint();
                if let Some(p) = store.path("supernet.json") {
                    save_json(&p, &ck)?;
                }
                checkpoint = Some(ck);
                supernet = Some(state);
            }
            Ok(())
        })?;
        if halt(Stage::Supernet) {
            return Ok(None);
        }
    }
    let ensure_supernet = |slot: &mut Option<SupernetState>| -> Result<()> {
        if slot.is_none() {
            let state = train_supernet_for(cfg, &prepared.reduced, seed)?;
            if let Some(ck) = &checkpoint {
                if ck.weight_digest != state.weight_digest() {
                    return Err(Error::config(
                        "retrained super-network does not match its checkpoint",
                    ));
                }
            }
            *slot = Some(state);
        }
        Ok(())
    };

    let codes: Vec<ArchCode> = staged(Stage::Sample, || {
        if let Some(p) = store.existing("sampled.txt") {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let lines: Vec<String> = text.lines().map(str::to_owned).collect();
            return parse_codes(space, &lines);
        }
        let mut codes = if supernet_mode {
            ensure_supernet(&mut supernet)?;
            sample_archs(supernet.as_ref().expect("trained"), cfg.s, seed)?
        } else {
            space.sample_uniform(cfg.s, seed)?
        };
        let mut keyed: Vec<(ArchId, ArchCode)> = codes
            .drain(..)
            .map(|c| space.index_of(&c).map(|id| (id, c)))
            .collect::<Result<_>>()?;
        keyed.sort_by_key(|k| k.0);
        let codes: Vec<ArchCode> = keyed.into_iter().map(|k| k.1).collect();
        if let Some(p) = store.path("sampled.txt") {
            let text: String = codes.iter().map(|c| space.format_arch(c) + "\n").collect();
            write_atomic(&p, text.as_bytes())?;
        }
        Ok(codes)
    })?;
    if halt(Stage::Sample) {
        return Ok(None);
    }

    let records: Vec<TrajectoryRecord> = if let Some(p) = store.existing("trajectories.jsonl") {
        staged(Stage::Features, || load_jsonl(&p))?
    } else {
        let logs = staged(Stage::EarlyTrain, || {
            let early_path = |code: &ArchCode| -> Result<Option<PathBuf>> {
                Ok(store.path(&format!("early/{}.json", space.index_of(code)?)))
            };
            let mut done: BTreeMap<usize, TrajectoryLog> = BTreeMap::new();
            for (i, code) in codes.iter().enumerate() {
                if let Some(p) = early_path(code)?.filter(|p| p.exists()) {
                    done.insert(i, load_json(&p)?);
                }
            }
            let pending: Vec<(usize, ArchCode)> = codes
                .iter()
                .cloned()
                .enumerate()
                .filter(|(i, _)| !done.contains_key(i))
                .collect();
            if supernet_mode && !pending.is_empty() {
                ensure_supernet(&mut supernet)?;
            }
            let capture = cfg.feature_source == FeatureSource::ParamBased;
            let state = supernet.as_ref();
            let fresh = run_parallel(&pending, workers, |(i, code)| {
                let (_, log) = match state {
                    Some(state) => train_early_from(
                        state.extract(code)?,
                        space,
                        code,
                        &prepared.reduced,
                        cfg.eta,
                        seed,
                        &prepared.probe,
                        &cfg.train,
                        capture,
                    )?,
                    None => train_early(
                        space,
                        code,
                        &prepared.reduced,
                        cfg.eta,
                        seed,
                        &prepared.probe,
                        &cfg.train,
                        capture,
                    )?,
                };
                if let Some(p) = early_path(code)? {
                    save_json(&p, &log)?;
                }
                Ok((*i, log))
            })?;
            done.extend(fresh);
            Ok(done.into_values().collect::<Vec<_>>())
        })?;
        if halt(Stage::EarlyTrain) {
            return Ok(None);
        }
        staged(Stage::Features, || {
            let records = logs
                .iter()
                .map(|log| {
                    features(log, cfg.feature_source).map(|f| TrajectoryRecord::new(log, &f))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(p) = store.path("trajectories.jsonl") {
                save_jsonl(&p, &records)?;
            }
            Ok(records)
        })?
    };
    if halt(Stage::EarlyTrain) || halt(Stage::Features) {
        return Ok(None);
    }
    let archs: Vec<String> = records.iter().map(|r| r.arch.clone()).collect();

    let clusters: ClusterModel = staged(Stage::Cluster, || {
        if let Some(p) = store.existing("clusters.json") {
            let file: ClustersFile = load_json(&p)?;
            if file.assignments.iter().map(|a| &a.arch).ne(archs.iter()) {
                return Err(Error::config(
                    "clusters.json does not match trajectories.jsonl",
                ));
            }
            return Ok(file.model());
        }
        let feats: Vec<TrajectoryFeature> = records.iter().map(|r| r.feature()).collect();
        let model = cluster_features(cfg, &feats, cfg.k, seed)?;
        if let Some(p) = store.path("clusters.json") {
            save_json(&p, &ClustersFile::new(&model, &archs))?;
        }
        Ok(model)
    })?;
    if halt(Stage::Cluster) {
        return Ok(None);
    }

    let eval: Vec<EvalRecord> = records
        .iter()
        .zip(&clusters.assignments)
        .map(|(r, &c)| EvalRecord {
            arch_id: r.arch_id,
            e: r.e,
            y: None,
            cluster: c,
        })
        .collect();

    let champions: Vec<ArchCode> = staged(Stage::Select, || {
        if let Some(p) = store.existing("selection.json") {
            let file: SelectionFile = load_json(&p)?;
            return parse_codes(space, &file.champions);
        }
        let (criterion, champions) = if supernet_mode {
            ensure_supernet(&mut supernet)?;
            let state = supernet.as_ref().expect("trained");
            let mut champions = Vec::with_capacity(cfg.k);
            for members in clusters.members() {
                if members.is_empty() {
                    continue;
                }
                let codes: Vec<ArchCode> = members.iter().map(|&i| codes[i].clone()).collect();
                champions.push(select_by_probability(&codes, state, cfg.supernet.score)?);
            }
            ("operation_probability", champions)
        } else {
            let ids = champions_by_score(&eval, cfg.k)?;
            let champions = ids
                .into_iter()
                .map(|id| space.code_at(id))
                .collect::<Result<Vec<_>>>()?;
            ("early_stop_score", champions)
        };
        if let Some(p) = store.path("selection.json") {
            save_json(
                &p,
                &SelectionFile {
                    criterion: criterion.to_owned(),
                    champions: champions.iter().map(|c| space.format_arch(c)).collect(),
                },
            )?;
        }
        Ok(champions)
    })?;
    if halt(Stage::Select) {
        return Ok(None);
    }

    let merged: MergeFile = staged(Stage::Merge, || {
        if let Some(p) = store.existing("merge.json") {
            return load_json(&p);
        }
        if champions.len() != cfg.k {
            return Err(Error::config(format!(
                "{} champions for K = {}; every cluster must be non-empty",
                champions.len(),
                cfg.k
            )));
        }
        let result = merge(
            space,
            &champions,
            &prepared.d,
            cfg.full_epochs,
            seed,
            &cfg.train,
            workers,
        )?;
        let file = MergeFile {
            champions: champions.iter().map(|c| space.format_arch(c)).collect(),
            champion_y: result.champion_y,
            full_trainings: champions.len(),
        };
        if let Some(p) = store.path("merge.json") {
            save_json(&p, &file)?;
        }
        Ok(file)
    })?;
    let champion_ids = champions
        .iter()
        .map(|c| space.index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let selection = staged(Stage::Merge, || {
        SelectionResult::from_scores(champion_ids.clone(), merged.champion_y.clone())
    })?;
    if halt(Stage::Merge) {
        return Ok(None);
    }

    let baseline: Option<BaselineFile> = if cfg.random_search.enabled {
        Some(staged(Stage::Baseline, || {
            if let Some(p) = store.existing("baseline.json") {
                return load_json(&p);
            }
            let budget = cfg.random_search_budget(cfg.eta, cfg.k);
            let repeats = cfg.random_search.repeats;
            let (rs, trained): (RandomSearchResult, usize) = match &opts.oracle {
                Some(oracle) => (
                    random_search_baseline(space, budget, repeats, seed, |c| {
                        oracle.y(space.index_of(c)?)
                    })?,
                    0,
                ),
                None => (
                    random_search_trained(
                        space,
                        budget,
                        repeats,
                        &prepared.d,
                        cfg.full_epochs,
                        seed,
                        &cfg.train,
                    )?,
                    budget * repeats,
                ),
            };
            let file = BaselineFile {
                budget,
                repeats,
                mean_best_y: rs.mean_best_y,
                full_trainings: trained,
            };
            if let Some(p) = store.path("baseline.json") {
                save_json(&p, &file)?;
            }
            Ok(file)
        })?)
    } else {
        None
    };
    if halt(Stage::Baseline) {
        return Ok(None);
    }

    staged(Stage::Report, || {
        let mut with_y = Vec::new();
        let mut results = Vec::with_capacity(records.len());
        for (rec, ev) in records.iter().zip(&eval) {
            let pos = champion_ids.iter().position(|&c| c == rec.arch_id);
            let y = match pos {
                Some(i) => selection.champion_y[i],
                None => match &opts.oracle {
                    Some(o) => Some(o.y(rec.arch_id)?),
                    None => None,
                },
            };
            if y.is_some() {
                with_y.push(EvalRecord { y, ..ev.clone() });
            }
            results.push(ResultRow {
                arch: rec.arch.clone(),
                cluster: ev.cluster,
                e: rec.e,
                y,
                params: rec.param_count,
                flops: rec.flops,
                selected: pos.is_some(),
                winner: rec.arch_id == selection.winner,
            });
        }
        let summary = Summary {
            k: cfg.k,
            eta: cfg.eta,
            sigma: cfg.sigma,
            seed,
            s: cfg.s,
            mode: cfg.mode,
            feature_source: cfg.feature_source,
            champions: merged.champions.clone(),
            champion_y: selection.champion_y.clone(),
            winner: space.format_arch(&space.code_at(selection.winner)?),
            winner_y: selection.winner_accuracy,
            rs_budget: baseline.as_ref().map(|b| b.budget),
            rs_baseline_y: baseline.as_ref().map(|b| b.mean_best_y),
            ranking_score: ranking_score(&with_y).ok(),
            fidelity_mse: fidelity_mse(&with_y).ok(),
            full_trainings: merged.full_trainings,
            rs_full_trainings: baseline.as_ref().map_or(0, |b| b.full_trainings),
        };
        if let Some(dir) = &store.dir {
            save_results(&dir.join("results.csv"), &results)?;
            save_json(&dir.join("summary.json"), &summary)?;
            write_atomic(
                &dir.join("report.txt"),
                render_report(cfg, &summary, &results).as_bytes(),
            )?;
        }
        Ok(Some(PipelineOutcome {
            summary,
            selection: selection.clone(),
            clusters: clusters.clone(),
            records: records.clone(),
            results,
        }))
    })
}

fn render_report(cfg: &ExperimentConfig, summary: &Summary, rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "divide-and-conquer search, seed {}", summary.seed);
    let _ = writeln!(
        out,
        "s = {}  K = {}  eta = {}  sigma = {}  full_epochs = {}  mode = {:?}  features = {:?}",
        cfg.s, cfg.k, cfg.eta, cfg.sigma, cfg.full_epochs, cfg.mode, cfg.feature_source
    );
    let _ = writeln!(
        out,
        "random-search budget = round(s * eta / full_epochs * sigma) + K"
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<24} {:>7} {:>8} {:>8} {:>8} {:>10}  mark",
        "arch", "cluster", "E", "y", "params", "flops"
    );
    for r in rows {
        let mark = if r.winner {
            "winner"
        } else if r.selected {
            "champion"
        } else {
            ""
        };
        let y = r.y.map(|y| format!("{y:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>8.4} {:>8} {:>8} {:>10}  {mark}",
            r.arch, r.cluster, r.e, y, r.params, r.flops
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "winner {} with test accuracy {:.4}",
        summary.winner, summary.winner_y
    );
    if let Some(y) = summary.rs_baseline_y {
        let _ = writeln!(
            out,
            "random search at budget {}: mean best accuracy {y:.4}",
            summary.rs_budget.unwrap_or(0)
        );
    }
    if let Some(rs) = &summary.ranking_score {
        let _ = writeln!(
            out,
            "ranking score {:.4} over {} untied pairs",
            rs.normalized, rs.pairs
        );
    }
    let _ = writeln!(out, "full trainings: {}", summary.full_trainings);
    if summary.rs_full_trainings > 0 {
        let _ = writeln!(
            out,
            "baseline full trainings: {}",
            summary.rs_full_trainings
        );
    }
    out
}

/// Plain early stopping over the whole sample: the best `E` is fully
/// trained. Produces the same summary as a one-cluster run without the
/// random-search baseline.
pub fn run_global_early_stopping(
    cfg: &ExperimentConfig,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<(Summary, SelectionResult)> {
    let cfg = ExperimentConfig {
        k: 1,
        ..cfg.clone()
    };
    if cfg.mode != SearchMode::SeparateTraining {
        return Err(Error::config(
            "global early stopping needs separate training",
        ));
    }
    cfg.validate()?;
    let workers = opts.workers.unwrap_or(cfg.worker_count).max(1);
    let space = &cfg.space;
    let prepared = prepare(&cfg, seed)?;
    let codes = space.sample_uniform(cfg.s, seed)?;
    let logs = early_logs(&cfg, &prepared, &codes, cfg.eta, seed, workers)?;
    let eval: Vec<EvalRecord> = logs
        .iter()
        .map(|l| EvalRecord {
            arch_id: l.arch_id,
            e: l.score(),
            y: None,
            cluster: 0,
        })
        .collect();
    let best = select_in_cluster(&eval)?;
    let code = space.code_at(best)?;
    let (y, _) = train_full(space, &code, &prepared.d, cfg.full_epochs, seed, &cfg.train)?;
    let selection = SelectionResult::from_scores(vec![best], vec![Some(y)])?;
    let with_y: Vec<EvalRecord> = eval
        .iter()
        .filter_map(|r| {
            let y = if r.arch_id == best {
                Some(y)
            } else {
                opts.oracle.as_ref().and_then(|o| o.y(r.arch_id).ok())
            };
            y.map(|y| EvalRecord {
                y: Some(y),
                ..r.clone()
            })
        })
        .collect();
    let summary = Summary {
        k: 1,
        eta: cfg.eta,
        sigma: cfg.sigma,
        seed,
        s: cfg.s,
        mode: cfg.mode,
        feature_source: cfg.feature_source,
        champions: vec![space.format_arch(&code)],
        champion_y: vec![Some(y)],
        winner: space.format_arch(&code),
        winner_y: y,
        rs_budget: None,
        rs_baseline_y: None,
        ranking_score: ranking_score(&with_y).ok(),
        fidelity_mse: fidelity_mse(&with_y).ok(),
        full_trainings: 1,
        rs_full_trainings: 0,
    };
    Ok((summary, selection))
}

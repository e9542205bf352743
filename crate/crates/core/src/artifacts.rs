//! On-disk formats of every pipeline output. Floats are written in their
//! shortest round-trip form, so loading a saved artifact gives back the
//! exact values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSource, TrajectoryFeature};
use crate::kmeans::ClusterModel;
use crate::search_space::{ArchCode, ArchId, SearchSpace};
use crate::selection::RankingScore;
use crate::trainer::{EpochRecord, TrajectoryLog};

/// Writes through a temporary file and renames, so a killed run never
/// leaves a half-written artifact behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// One line of `trajectories.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub arch: String,
    pub arch_id: ArchId,
    pub eta: usize,
    #[serde(rename = "E")]
    pub e: f64,
    pub features: Vec<Vec<f64>>,
    pub feature_source: FeatureSource,
    pub param_count: usize,
    pub flops: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrajectoryRecord {
    pub fn new(log: &TrajectoryLog, feature: &TrajectoryFeature) -> Self {
        TrajectoryRecord {
            arch: log.arch.clone(),
            arch_id: log.arch_id,
            eta: log.eta(),
            e: log.score(),
            features: feature.matrix.clone(),
            feature_source: feature.source,
            param_count: log.param_count,
            flops: log.flops,
            epochs: log.epochs.clone(),
        }
    }

    pub fn log(&self) -> TrajectoryLog {
        TrajectoryLog {
            arch_id: self.arch_id,
            arch: self.arch.clone(),
            param_count: self.param_count,
            flops: self.flops,
            epochs: self.epochs.clone(),
        }
    }

    pub fn feature(&self) -> TrajectoryFeature {
        TrajectoryFeature {
            arch_id: self.arch_id,
            matrix: self.features.clone(),
            source: self.feature_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub arch: String,
    pub cluster: usize,
}

/// Contents of `clusters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    #[serde(rename = "K")]
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<ClusterAssignment>,
    pub inertia: f64,
    pub iterations: usize,
    pub inertia_history: Vec<f64>,
}

impl ClustersFile {
    pub fn new(model: &ClusterModel, archs: &[String]) -> Self {
        ClustersFile {
            k: model.k,
            centroids: model.centroids.clone(),
            assignments: archs
                .iter()
                .zip(&model.assignments)
                .map(|(a, &c)| ClusterAssignment {
                    arch: a.clone(),
                    cluster: c,
                })
                .collect(),
            inertia: model.inertia,
            iterations: model.iterations_run,
            inertia_history: model.inertia_history.clone(),
        }
    }

    pub fn model(&self) -> ClusterModel {
        ClusterModel {
            k: self.k,
            centroids: self.centroids.clone(),
            assignments: self.assignments.iter().map(|a| a.cluster).collect(),
            inertia: self.inertia,
            iterations_run: self.iterations,
            inertia_history: self.inertia_history.clone(),
        }
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub arch: String,
    pub cluster: usize,
    pub e: f64,
    pub y: Option<f64>,
    pub params: usize,
    pub flops: usize,
    pub selected: bool,
    pub winner: bool,
}

const RESULT_HEADER: [&str; 8] = [
    "arch", "cluster", "E", "y", "params", "flops", "selected", "winner",
];

pub fn save_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record([
            r.arch.clone(),
            r.cluster.to_string(),
            r.e.to_string(),
            r.y.map(|y| y.to_string()).unwrap_or_default(),
            r.params.to_string(),
            r.flops.to_string(),
            r.selected.to_string(),
            r.winner.to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::config(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        Error::config(format!(
            "bad `{name}` value in row {:?}",
            rec.position().map(|p| p.line())
        ))
    })
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let y = match rec.get(3) {
            Some("") | None => None,
            Some(_) => Some(field(&rec, 3, "y")?),
        };
        rows.push(ResultRow {
            arch: field(&rec, 0, "arch")?,
            cluster: field(&rec, 1, "cluster")?,
            e: field(&rec, 2, "E")?,
            y,
            params: field(&rec, 4, "params")?,
            flops: field(&rec, 5, "flops")?,
            selected: field(&rec, 6, "selected")?,
            winner: field(&rec, 7, "winner")?,
        });
    }
    Ok(rows)
}

/// Ground-truth accuracy of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub arch: String,
    pub arch_id: ArchId,
    pub y: f64,
    pub params: usize,
    pub flops: usize,
}

/// Fully trained accuracy of every architecture in a space, by arch id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    pub rows: Vec<OracleRow>,
}

impl OracleTable {
    pub fn new(mut rows: Vec<OracleRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::argument("an oracle needs at least one architecture"));
        }
        rows.sort_by_key(|r| r.arch_id);
        if rows.windows(2).any(|w| w[0].arch_id == w[1].arch_id) {
            return Err(Error::argument("duplicate architecture in oracle"));
        }
        Ok(OracleTable { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: ArchId) -> Option<&OracleRow> {
        self.rows
            .binary_search_by_key(&id, |r| r.arch_id)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn y(&self, id: ArchId) -> Result<f64> {
        self.get(id)
            .map(|r| r.y)
            .ok_or_else(|| Error::argument(format!("architecture {id} is not in the oracle")))
    }

    /// Most accurate architecture; ties go to the lowest id.
    pub fn best(&self) -> &OracleRow {
        self.rows
            .iter()
            .fold(&self.rows[0], |b, r| if r.y > b.y { r } else { b })
    }

    /// 1-based rank: one plus the number of strictly better architectures.
    pub fn rank(&self, id: ArchId) -> Result<usize> {
        let y = self.y(id)?;
        Ok(1 + self.rows.iter().filter(|r| r.y > y).count())
    }

    /// Arch ids from best to worst, ties by id.
    pub fn ranking(&self) -> Vec<ArchId> {
        let mut ids: Vec<&OracleRow> = self.rows.iter().collect();
        ids.sort_by(|a, b| b.y.total_cmp(&a.y).then(a.arch_id.cmp(&b.arch_id)));
        ids.into_iter().map(|r| r.arch_id).collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["arch", "y", "params", "flops"])?;
        for r in &self.rows {
            w.write_record([
                r.arch.clone(),
                r.y.to_string(),
                r.params.to_string(),
                r.flops.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::config(format!("csv buffer: {e}")))?;
        write_atomic(path, &bytes)
    }

    /// Loads an oracle and checks that it covers all of `space`.
    pub fn load_csv(path: &Path, space: &SearchSpace) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let arch: String = field(&rec, 0, "arch")?;
            let code: ArchCode = space.parse_arch(&arch)?;
            rows.push(OracleRow {
                arch_id: space.index_of(&code)?,
                arch: space.format_arch(&code),
                y: field(&rec, 1, "y")?,
                params: field(&rec, 2, "params")?,
                flops: field(&rec, 3, "flops")?,
            });
        }
        let table = OracleTable::new(rows)?;
        if space.size() != Some(table.len() as u128) {
            return Err(Error::config(format!(
                "oracle {} covers {} architectures, the space has {}",
                path.display(),
                table.len(),
                space.size_f64()
            )));
        }
        Ok(table)
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(rename = "K")]
    pub k: usize,
    pub eta: usize,
    pub sigma: f64,
    pub seed: u64,
    pub s: usize,
    pub mode: crate::config::SearchMode,
    pub feature_source: FeatureSource,
    pub champions: Vec<String>,
    pub champion_y: Vec<Option<f64>>,
    pub winner: String,
    pub winner_y: f64,
    pub rs_budget: Option<usize>,
    pub rs_baseline_y: Option<f64>,
    /// Ranking score over every architecture with a known `y`.
    pub ranking_score: Option<RankingScore>,
    pub fidelity_mse: Option<f64>,
    /// Full trainings spent by the search itself (one per champion).
    pub full_trainings: usize,
    /// Full trainings spent on the random-search baseline.
    #[serde(default)]
    pub rs_full_trainings: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![
            ResultRow {
                arch: "1,0.5,2".into(),
                cluster: 0,
                e: 0.1 + 0.2,
                y: Some(1.0 / 3.0),
                params: 10,
                flops: 20,
                selected: true,
                winner: false,
            },
            ResultRow {
                arch: "2,2,2".into(),
                cluster: 1,
                e: 0.75,
                y: None,
                params: 1,
                flops: 2,
                selected: false,
                winner: false,
            },
        ];
        save_results(&path, &rows).unwrap();
        assert_eq!(load_results(&path).unwrap(), rows);
    }

    #[test]
    fn oracle_rank_and_best() {
        let row = |id: u128, y: f64| OracleRow {
            arch: id.to_string(),
            arch_id: id,
            y,
            params: 0,
            flops: 0,
        };
        let t = OracleTable::new(vec![row(2, 0.5), row(0, 0.9), row(1, 0.9)]).unwrap();
        assert_eq!(t.best().arch_id, 0);
        assert_eq!(t.rank(1).unwrap(), 1);
        assert_eq!(t.rank(2).unwrap(), 3);
        assert_eq!(t.ranking(), vec![0, 1, 2]);
        assert!(t.y(7).is_err());
    }
}

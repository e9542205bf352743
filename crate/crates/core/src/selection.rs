//! Champion selection, merging by full training, the random-search
//! baseline and evaluation-fidelity scores.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::search_space::{ArchCode, ArchId, SearchSpace};
use crate::seed::{self, Stream};
use crate::trainer::{run_parallel, train_full, TrainSettings};

/// Evaluation results of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub arch_id: ArchId,
    /// Early-stop score.
    pub e: f64,
    /// Ground-truth accuracy after full training.
    pub y: Option<f64>,
    pub cluster: usize,
}

impl EvalRecord {
    pub fn fully_trained(&self) -> bool {
        self.y.is_some()
    }
}

/// Picks the record with the highest early-stop score; ties go to the
/// lowest arch id.
pub fn select_in_cluster(records: &[EvalRecord]) -> Result<ArchId> {
    records
        .iter()
        .max_by(|a, b| a.e.total_cmp(&b.e).then(b.arch_id.cmp(&a.arch_id)))
        .map(|r| r.arch_id)
        .ok_or_else(|| Error::argument("cannot select from an empty cluster"))
}

/// Outcome of merging the cluster champions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub champions: Vec<ArchId>,
    /// Full-training accuracy per champion; `None` if training diverged.
    pub champion_y: Vec<Option<f64>>,
    pub winner: ArchId,
    pub winner_accuracy: f64,
}

impl SelectionResult {
    /// Builds the result from already-evaluated champions.
    pub fn from_scores(champions: Vec<ArchId>, champion_y: Vec<Option<f64>>) -> Result<Self> {
        let (winner, winner_accuracy) = champions
            .iter()
            .zip(&champion_y)
            .filter_map(|(&id, y)| y.map(|y| (id, y)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .ok_or_else(|| Error::argument("every champion diverged; nothing to merge"))?;
        Ok(SelectionResult {
            champions,
            champion_y,
            winner,
            winner_accuracy,
        })
    }
}

/// Fully trains every champion and keeps the most accurate. A champion
/// whose training diverges is excluded with a warning.
pub fn merge(
    space: &SearchSpace,
    champions: &[ArchCode],
    d: &Dataset,
    epochs: usize,
    root_seed: u64,
    settings: &TrainSettings,
    workers: usize,
) -> Result<SelectionResult> {
    if champions.is_empty() {
        return Err(Error::argument("merge needs at least one champion"));
    }
    let ids = champions
        .iter()
        .map(|c| space.index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = run_parallel(champions, workers, |code| {
        match train_full(space, code, d, epochs, root_seed, settings) {
            Ok((y, _)) => Ok(Some(y)),
            Err(Error::Divergence { arch_id, detail }) => {
                log::warn!("champion {arch_id} diverged during full training ({detail}); excluded");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    })?;
    SelectionResult::from_scores(ids, outcomes)
}

/// Best architecture of each random-search repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchResult {
    pub budget: usize,
    pub best: Vec<(ArchId, f64)>,
    pub mean_best_y: f64,
}

/// Draws `budget` distinct architectures per repeat, scores each with
/// `evaluate` (full training or an oracle lookup) and keeps the best.
pub fn random_search_baseline(
    space: &SearchSpace,
    budget: usize,
    repeats: usize,
    root_seed: u64,
    mut evaluate: impl FnMut(&ArchCode) -> Result<f64>,
) -> Result<RandomSearchResult> {
    if budget == 0 || repeats == 0 {
        return Err(Error::argument(
            "random search needs a positive budget and repeat count",
        ));
    }
    let mut best = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let sub = seed::derive_key(root_seed, Stream::RandomSearch, &[r as u64]);
        let codes = space.sample_uniform(budget, sub)?;
        let mut top: Option<(ArchId, f64)> = None;
        for code in &codes {
            let y = evaluate(code)?;
            let id = space.index_of(code)?;
            if top.is_none_or(|(_, t)| y > t) {
                top = Some((id, y));
            }
        }
        best.push(top.expect("budget > 0"));
    }
    let mean_best_y = best.iter().map(|b| b.1).sum::<f64>() / repeats as f64;
    Ok(RandomSearchResult {
        budget,
        best,
        mean_best_y,
    })
}

/// Random search that fully trains every drawn architecture.
pub fn random_search_trained(
    space: &SearchSpace,
    budget: usize,
    repeats: usize,
    d: &Dataset,
    epochs: usize,
    root_seed: u64,
    settings: &TrainSettings,
) -> Result<RandomSearchResult> {
    random_search_baseline(space, budget, repeats, root_seed, |code| {
        train_full(space, code, d, epochs, root_seed, settings).map(|(y, _)| y)
    })
}

/// Pairwise sign agreement between early-stop scores and ground truth.
///
/// `raw` is the literal sum over `i < j` of
/// `sgn(y_j - y_i) * sgn(E_i - E_j)`, which is `-1` for every concordant
/// pair. `concordance = -raw`, so `normalized = +1` means perfect
/// agreement and `-1` perfect reversal. Pairs tied in `y` or `E`
/// contribute 0 and are left out of `pairs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingScore {
    pub raw: i64,
    pub concordance: i64,
    pub pairs: usize,
    /// `concordance / pairs`, or 0 when no untied pair exists.
    pub normalized: f64,
    /// `raw / pairs`, or 0 when no untied pair exists.
    pub raw_normalized: f64,
}

fn sgn(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn scored_pairs(records: &[EvalRecord]) -> Result<Vec<(f64, f64)>> {
    if records.len() < 2 {
        return Err(Error::argument("ranking needs at least two records"));
    }
    records
        .iter()
        .map(|r| {
            r.y.map(|y| (r.e, y)).ok_or_else(|| {
                Error::argument(format!("record {} has no ground-truth accuracy", r.arch_id))
            })
        })
        .collect()
}

pub fn ranking_score(records: &[EvalRecord]) -> Result<RankingScore> {
    let ey = scored_pairs(records)?;
    let mut raw = 0i64;
    let mut pairs = 0usize;
    for i in 0..ey.len() {
        for j in i + 1..ey.len() {
            let term = sgn(ey[j].1 - ey[i].1) * sgn(ey[i].0 - ey[j].0);
            raw += term;
            if term != 0 {
                pairs += 1;
            }
        }
    }
    let (normalized, raw_normalized) = if pairs == 0 {
        (0.0, 0.0)
    } else {
        (-raw as f64 / pairs as f64, raw as f64 / pairs as f64)
    };
    Ok(RankingScore {
        raw,
        concordance: -raw,
        pairs,
        normalized,
        raw_normalized,
    })
}

/// Mean squared difference between early-stop scores and ground truth.
pub fn fidelity_mse(records: &[EvalRecord]) -> Result<f64> {
    let ey = scored_pairs(records)?;
    Ok(ey.iter().map(|(e, y)| (e - y) * (e - y)).sum::<f64>() / ey.len() as f64)
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::argument(
            "spearman needs two equal-length series of at least 2",
        ));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u128, e: f64, y: Option<f64>) -> EvalRecord {
        EvalRecord {
            arch_id: id,
            e,
            y,
            cluster: 0,
        }
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_in_cluster(&[rec(4, 0.1, None)]).unwrap(), 4);
        let r = [rec(0, 0.3, None), rec(1, 0.7, None), rec(2, 0.5, None)];
        assert_eq!(select_in_cluster(&r).unwrap(), 1);
        let tie = [rec(9, 0.5, None), rec(3, 0.5, None)];
        assert_eq!(select_in_cluster(&tie).unwrap(), 3);
        assert!(select_in_cluster(&[]).is_err());
    }

    #[test]
    fn merge_winner_is_argmax() {
        let r = SelectionResult::from_scores(vec![5, 8], vec![Some(0.71), Some(0.76)]).unwrap();
        assert_eq!(r.winner, 8);
        assert_eq!(r.winner_accuracy, 0.76);
        let r = SelectionResult::from_scores(vec![5, 8], vec![Some(0.71), None]).unwrap();
        assert_eq!(r.winner, 5);
        assert!(SelectionResult::from_scores(vec![5], vec![None]).is_err());
    }

    #[test]
    fn ranking_examples() {
        let same: Vec<_> = [0.1, 0.5, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(i as u128, v, Some(v)))
            .collect();
        let s = ranking_score(&same).unwrap();
        assert_eq!(s.normalized, 1.0);
        assert_eq!(s.raw, -3);
        assert_eq!(s.pairs, 3);
        let rev: Vec<_> = [0.1, 0.5, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(i as u128, 1.0 - v, Some(v)))
            .collect();
        let s = ranking_score(&rev).unwrap();
        assert_eq!(s.raw_normalized, 1.0);
        assert_eq!(s.normalized, -1.0);
        assert!(ranking_score(&same[..1]).is_err());
    }

    #[test]
    fn ties_leave_the_denominator() {
        let r = [
            rec(0, 0.5, Some(0.2)),
            rec(1, 0.5, Some(0.4)),
            rec(2, 0.9, Some(0.4)),
            rec(3, 0.1, Some(0.1)),
        ];
        let s = ranking_score(&r).unwrap();
        // pairs: (0,1) E tie, (1,2) y tie, (0,2) +, (0,3) +, (1,3) +, (2,3) +
        assert_eq!(s.pairs, 4);
        assert_eq!(s.concordance, 4);
    }

    #[test]
    fn mse_examples() {
        let exact: Vec<_> = (0..10)
            .map(|i| rec(i, i as f64 / 10.0, Some(i as f64 / 10.0)))
            .collect();
        assert_eq!(fidelity_mse(&exact).unwrap(), 0.0);
        let offset: Vec<_> = (0..10)
            .map(|i| rec(i, i as f64 / 20.0 + 0.1, Some(i as f64 / 20.0)))
            .collect();
        assert!((fidelity_mse(&offset).unwrap() - 0.01).abs() < 1e-12);
        // hand sum: (0.2^2 + 0.1^2 + 0.3^2) / 3 = 0.14 / 3
        let t = [
            rec(0, 0.5, Some(0.3)),
            rec(1, 0.6, Some(0.7)),
            rec(2, 0.9, Some(0.6)),
        ];
        assert!((fidelity_mse(&t).unwrap() - 0.14 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}

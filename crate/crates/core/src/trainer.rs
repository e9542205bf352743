//! Full training, early-stopped training and per-epoch trajectory capture.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{accuracy, Network, Sgd, Tensor};
use crate::search_space::{ArchCode, ArchId, SearchSpace};
use crate::seed::{self, Stream};

/// Optimizer settings shared by every training run of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr: 0.1,
            momentum: 0.9,
            batch_size: 8,
        }
    }
}

const EVAL_CHUNK: usize = 256;

/// Fixed probe examples used to read layer outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub inputs: Tensor,
}

impl Probe {
    /// Draws `size` distinct examples from the reduced training split.
    pub fn sample(reduced: &Dataset, size: usize, root_seed: u64) -> Result<Probe> {
        let n = reduced.train.len();
        if size == 0 || size > n {
            return Err(Error::argument(format!(
                "probe of {size} examples cannot be drawn from {n} reduced training examples"
            )));
        }
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut seed::rng(root_seed, Stream::Probe, &[]));
        rows.truncate(size);
        rows.sort_unstable();
        let inputs = reduced
            .train
            .inputs
            .as_ref()
            .expect("non-empty")
            .select_rows(&rows);
        Ok(Probe { inputs })
    }
}

/// One epoch of an early-stopped run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub val_accuracy: f64,
    /// Per block: channel-wise global average of the block output,
    /// averaged over the probe set.
    pub probe_outputs: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_snapshots: Option<Vec<Vec<f32>>>,
}

/// Everything recorded while training one architecture for `eta` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub arch_id: ArchId,
    pub arch: String,
    pub param_count: usize,
    pub flops: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrajectoryLog {
    pub fn eta(&self) -> usize {
        self.epochs.len()
    }

    /// Early-stop score: validation accuracy after the last epoch.
    pub fn score(&self) -> f64 {
        self.epochs.last().map(|e| e.val_accuracy).unwrap_or(0.0)
    }

    /// The log of the first `eta` epochs, identical to a run stopped there.
    pub fn truncated(&self, eta: usize) -> TrajectoryLog {
        TrajectoryLog {
            epochs: self.epochs[..eta.min(self.epochs.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Per-block probe vectors: global-average-pool every probe example's block
/// output, then average over the probe set.
pub fn probe_outputs(net: &Network, probe: &Probe) -> Result<Vec<Vec<f32>>> {
    let taps = net.block_output_nodes();
    let shapes = net.node_shapes();
    let mut sums: Vec<Vec<f64>> = taps
        .iter()
        .map(|&t| vec![0.0; shapes[t].channels()])
        .collect();
    let n = probe.inputs.batch();
    let rows: Vec<usize> = (0..n).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let batch = probe.inputs.select_rows(chunk);
        let nodes = net.forward_nodes(&batch)?;
        for (sum, &t) in sums.iter_mut().zip(&taps) {
            let area = shapes[t].area();
            let channels = shapes[t].channels();
            for example in nodes[t].data().chunks_exact(channels * area) {
                for (c, plane) in example.chunks_exact(area).enumerate() {
                    sum[c] += plane.iter().map(|&v| v as f64).sum::<f64>() / area as f64;
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| s.into_iter().map(|v| (v / n as f64) as f32).collect())
        .collect())
}

/// Trains `net` on `train` for `epochs` epochs, calling `after_epoch` with
/// the 1-based epoch number. Mini-batch order for epoch `e` comes from the
/// `(arch_id, e)` shuffle stream, so full and early runs of one
/// architecture see identical batches.
pub fn run_epochs(
    net: &mut Network,
    train: &Split,
    epochs: usize,
    root_seed: u64,
    settings: &TrainSettings,
    mut after_epoch: impl FnMut(usize, &Network) -> Result<()>,
) -> Result<()> {
    if settings.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let mut opt = Sgd::new(settings.lr, settings.momentum);
    let n = train.len();
    let inputs = train.inputs.as_ref();
    for e in 1..=epochs {
        if let Some(inputs) = inputs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::rng(
                root_seed,
                Stream::Shuffle,
                &[net.arch_id() as u64, e as u64],
            ));
            for rows in order.chunks(settings.batch_size) {
                let batch = inputs.select_rows(rows);
                let labels: Vec<usize> = rows.iter().map(|&r| train.labels[r]).collect();
                opt.step(net, &batch, &labels)?;
            }
        }
        after_epoch(e, net)?;
    }
    Ok(())
}

fn split_accuracy(net: &Network, split: &Split) -> Result<f64> {
    match &split.inputs {
        Some(t) => accuracy(net, t, &split.labels, EVAL_CHUNK),
        None => Ok(0.0),
    }
}

static FULL_TRAININGS: AtomicUsize = AtomicUsize::new(0);

/// Number of [`train_full`] calls made by this process so far.
pub fn full_trainings_started() -> usize {
    FULL_TRAININGS.load(Ordering::SeqCst)
}

/// Full training: returns the test accuracy `y` and the trained network.
pub fn train_full(
    space: &SearchSpace,
    code: &ArchCode,
    d: &Dataset,
    epochs: usize,
    root_seed: u64,
    settings: &TrainSettings,
) -> Result<(f64, Network)> {
    if epochs == 0 {
        return Err(Error::argument("full training needs at least one epoch"));
    }
    FULL_TRAININGS.fetch_add(1, Ordering::SeqCst);
    let mut net = space.instantiate(code, root_seed)?;
    run_epochs(&mut net, &d.train, epochs, root_seed, settings, |_, _| {
        Ok(())
    })?;
    let y = split_accuracy(&net, &d.test)?;
    Ok((y, net))
}

/// Early-stopped training on the reduced dataset: records, after every
/// epoch, the validation accuracy and the probe vectors (plus parameter
/// snapshots when `capture_params`). The score `E` is the final
/// validation accuracy.
#[allow(clippy::too_many_arguments)]
pub fn train_early(
    space: &SearchSpace,
    code: &ArchCode,
    reduced: &Dataset,
    eta: usize,
    root_seed: u64,
    probe: &Probe,
    settings: &TrainSettings,
    capture_params: bool,
) -> Result<(f64, TrajectoryLog)> {
    let net = space.instantiate(code, root_seed)?;
    train_early_from(
        net,
        space,
        code,
        reduced,
        eta,
        root_seed,
        probe,
        settings,
        capture_params,
    )
}

/// Like [`train_early`] but starts from the given weights, e.g. ones
/// inherited from a super-network.
#[allow(clippy::too_many_arguments)]
pub fn train_early_from(
    mut net: Network,
    space: &SearchSpace,
    code: &ArchCode,
    reduced: &Dataset,
    eta: usize,
    root_seed: u64,
    probe: &Probe,
    settings: &TrainSettings,
    capture_params: bool,
) -> Result<(f64, TrajectoryLog)> {
    if eta == 0 {
        return Err(Error::argument("eta must be at least 1"));
    }
    if probe.inputs.batch() > reduced.train.len() {
        return Err(Error::argument(
            "probe is larger than the reduced training set",
        ));
    }
    let mut epochs = Vec::with_capacity(eta);
    run_epochs(
        &mut net,
        &reduced.train,
        eta,
        root_seed,
        settings,
        |_, net| {
            epochs.push(EpochRecord {
                val_accuracy: split_accuracy(net, &reduced.val)?,
                probe_outputs: probe_outputs(net, probe)?,
                param_snapshots: capture_params.then(|| net.snapshot_block_params()),
            });
            Ok(())
        },
    )?;
    let log = TrajectoryLog {
        arch_id: space.index_of(code).unwrap_or(0),
        arch: space.format_arch(code),
        param_count: net.param_count(),
        flops: net.flops(),
        epochs,
    };
    Ok((log.score(), log))
}

/// Runs `job` over `items` on a pool of `workers` threads; results keep the
/// input order.
pub fn run_parallel<T, R, F>(items: &[T], workers: usize, job: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if workers <= 1 {
        return items.iter().map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(job).collect())
}

//! Weight-sharing super-network over a layer-wise space.
//!
//! Every block holds one set of weights per candidate op and a vector of
//! raw operation scores `a`. The forward pass mixes candidate outputs with
//! weights `softmax(a)`. Since the mixture weights sum to one and every
//! non-skip op is residual, a block computes
//! `x + sum_o softmax(a)_o * chain_o(x)` with the skip chain being zero.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    argmax, softmax_cross_entropy, ActShape, Gradients, LayerSpec, Network, Sgd, Tensor,
};
use crate::search_space::{ArchCode, BlockOp, SearchSpace, SpaceKind};
use crate::seed::{self, Stream};
use crate::trainer::TrainSettings;

/// How a member's per-block scores are summed when picking a cluster
/// representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityScore {
    /// Sum of the raw scores `a` of the chosen ops.
    #[default]
    RawLogit,
    /// Sum of `log softmax(a)` of the chosen ops, i.e. the log-probability
    /// of sampling the architecture.
    LogSoftmax,
}

#[derive(Debug, Clone)]
pub struct SupernetState {
    space: SearchSpace,
    ops: Vec<BlockOp>,
    stem: Network,
    /// `chains[block][op]`; `None` for skip.
    chains: Vec<Vec<Option<Network>>>,
    head: Network,
    /// Raw operation scores per block.
    pub alpha: Vec<Vec<f64>>,
    pub epochs_trained: usize,
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lz = a.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    a.iter().map(|v| v - lz).collect()
}

struct BlockCache {
    input: Vec<f32>,
    /// Forward nodes of each non-skip chain.
    chain_nodes: Vec<Option<Vec<Tensor>>>,
}

struct Pass {
    stem_nodes: Vec<Tensor>,
    blocks: Vec<BlockCache>,
    head_nodes: Vec<Tensor>,
}

/// Parameter gradients of every shared weight and of `a`.
struct SupernetGrads {
    stem: Gradients,
    chains: Vec<Vec<Option<Gradients>>>,
    head: Gradients,
    alpha: Vec<Vec<f64>>,
}

impl SupernetState {
    /// Fresh super-network for a layer-wise space with `a = 0` (uniform).
    pub fn new(space: &SearchSpace, root_seed: u64) -> Result<Self> {
        let SpaceKind::LayerwiseOps {
            num_blocks,
            ops,
            stem_channels,
        } = &space.kind
        else {
            return Err(Error::config("a super-network needs a layer-wise space"));
        };
        let [c, h, w] = space.input_shape;
        let mut stem_layers = vec![
            LayerSpec::conv2d(c, *stem_channels, 3, 1),
            LayerSpec::relu(),
        ];
        if h >= 4 && w >= 4 {
            stem_layers.push(LayerSpec::avgpool2x2());
        }
        let mut stem = Network::segment(0, ActShape::Spatial { c, h, w }, stem_layers)?;
        stem.init_params_keyed(root_seed, &[u64::MAX, 0]);
        let block_shape = *stem.node_shapes().last().expect("non-empty");

        let mut chains = Vec::with_capacity(*num_blocks);
        for b in 0..*num_blocks {
            let mut row = Vec::with_capacity(ops.len());
            for (o, op) in ops.iter().enumerate() {
                if op.is_skip() {
                    row.push(None);
                    continue;
                }
                let mut layers = op.layers(*stem_channels, 0);
                layers.pop(); // the residual add is applied by the mixture
                let mut net = Network::segment(0, block_shape, layers)?;
                net.init_params_keyed(root_seed, &[u64::MAX, 1, b as u64, o as u64]);
                row.push(Some(net));
            }
            chains.push(row);
        }
        let mut head = Network::new(
            0,
            block_shape,
            vec![
                LayerSpec::global_avgpool(),
                LayerSpec::dense(*stem_channels, space.num_classes),
            ],
            space.num_classes,
        )?;
        head.init_params_keyed(root_seed, &[u64::MAX, 2]);
        Ok(SupernetState {
            space: space.clone(),
            ops: ops.clone(),
            stem,
            chains,
            head,
            alpha: vec![vec![0.0; ops.len()]; *num_blocks],
            epochs_trained: 0,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn num_blocks(&self) -> usize {
        self.alpha.len()
    }

    pub fn ops(&self) -> &[BlockOp] {
        &self.ops
    }

    pub fn set_alpha(&mut self, alpha: Vec<Vec<f64>>) -> Result<()> {
        if alpha.len() != self.num_blocks() || alpha.iter().any(|r| r.len() != self.ops.len()) {
            return Err(Error::argument(format!(
                "alpha must be {} x {}",
                self.num_blocks(),
                self.ops.len()
            )));
        }
        self.alpha = alpha;
        Ok(())
    }

    /// Per-block operation probabilities `softmax(a)`.
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.alpha.iter().map(|a| softmax(a)).collect()
    }

    /// SHA-256 over every shared weight (little-endian `f32`), in
    /// stem, chain, head order.
    pub fn weight_digest(&self) -> String {
        let mut h = Sha256::new();
        let nets = std::iter::once(&self.stem)
            .chain(self.chains.iter().flatten().flatten())
            .chain(std::iter::once(&self.head));
        for net in nets {
            for p in net.params() {
                for v in p.weight.iter().chain(&p.bias) {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn forward(&self, batch: &Tensor) -> Result<Pass> {
        let stem_nodes = self.stem.forward_nodes(batch)?;
        let mut x = stem_nodes.last().expect("non-empty").clone();
        let probs = self.probabilities();
        let mut blocks = Vec::with_capacity(self.num_blocks());
        for (b, row) in self.chains.iter().enumerate() {
            let input = x.data().to_vec();
            let mut out: Vec<f64> = input.iter().map(|&v| v as f64).collect();
            let mut chain_nodes = Vec::with_capacity(row.len());
            for (o, chain) in row.iter().enumerate() {
                match chain {
                    None => chain_nodes.push(None),
                    Some(net) => {
                        let nodes = net.forward_nodes(&x)?;
                        let p = probs[b][o];
                        for (acc, &v) in out.iter_mut().zip(nodes.last().expect("non-empty").data())
                        {
                            *acc += p * v as f64;
                        }
                        chain_nodes.push(Some(nodes));
                    }
                }
            }
            x = Tensor::new(
                x.shape().to_vec(),
                out.into_iter().map(|v| v as f32).collect(),
            )?;
            blocks.push(BlockCache { input, chain_nodes });
        }
        let head_nodes = self.head.forward_nodes(&x)?;
        Ok(Pass {
            stem_nodes,
            blocks,
            head_nodes,
        })
    }

    fn logits(&self, pass: &Pass, batch: usize) -> Tensor {
        let last = pass.head_nodes.last().expect("non-empty");
        Tensor::new(vec![batch, self.space.num_classes], last.data().to_vec()).expect("shape")
    }

    fn loss_and_grads(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, SupernetGrads)> {
        let pass = self.forward(batch)?;
        let logits = self.logits(&pass, batch.batch());
        let (loss, g) = softmax_cross_entropy(&logits, labels);
        if !loss.is_finite() {
            return Err(self.divergence(loss));
        }
        let (head, mut gx) = self.head.backward(&pass.head_nodes, &g);
        let probs = self.probabilities();
        let mut chains: Vec<Vec<Option<Gradients>>> = Vec::with_capacity(self.num_blocks());
        let mut alpha = vec![vec![0.0; self.ops.len()]; self.num_blocks()];
        for b in (0..self.num_blocks()).rev() {
            let cache = &pass.blocks[b];
            let g_out = gx.clone();
            // dL/dp_o = <g, o(x)>; o(x) = x (+ chain_o(x) for non-skip ops)
            let base: f64 = g_out
                .iter()
                .zip(&cache.input)
                .map(|(&g, &v)| g as f64 * v as f64)
                .sum();
            let mut dp = vec![base; self.ops.len()];
            let mut row = Vec::with_capacity(self.ops.len());
            for (o, chain) in self.chains[b].iter().enumerate() {
                let (Some(net), Some(nodes)) = (chain, &cache.chain_nodes[o]) else {
                    row.push(None);
                    continue;
                };
                let out = nodes.last().expect("non-empty");
                dp[o] += g_out
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &v)| g as f64 * v as f64)
                    .sum::<f64>();
                let p = probs[b][o] as f32;
                let scaled =
                    Tensor::new(out.shape().to_vec(), g_out.iter().map(|&g| g * p).collect())?;
                let (pg, gin) = net.backward(nodes, &scaled);
                for (a, v) in gx.iter_mut().zip(gin) {
                    *a += v;
                }
                row.push(Some(pg));
            }
            let mean: f64 = dp.iter().zip(&probs[b]).map(|(d, p)| d * p).sum();
            for (o, a) in alpha[b].iter_mut().enumerate() {
                *a = probs[b][o] * (dp[o] - mean);
            }
            chains.push(row);
        }
        chains.reverse();
        let (stem, _) = self.stem.backward(
            &pass.stem_nodes,
            &Tensor::new(
                pass.stem_nodes.last().expect("non-empty").shape().to_vec(),
                gx,
            )?,
        );
        Ok((
            loss,
            SupernetGrads {
                stem,
                chains,
                head,
                alpha,
            },
        ))
    }

    fn divergence(&self, loss: f64) -> Error {
        let mut culprit = String::from("stem/head");
        'outer: for (b, row) in self.chains.iter().enumerate() {
            for (o, net) in row.iter().enumerate() {
                if let Some(net) = net {
                    if net
                        .params()
                        .iter()
                        .any(|p| p.weight.iter().chain(&p.bias).any(|v| !v.is_finite()))
                    {
                        culprit = format!("block {b} op {}", self.ops[o]);
                        break 'outer;
                    }
                }
            }
        }
        Error::Divergence {
            arch_id: 0,
            detail: format!("super-network loss {loss} ({culprit})"),
        }
    }

    /// Mean loss and accuracy of the mixed network.
    pub fn evaluate(&self, inputs: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
        let pass = self.forward(inputs)?;
        let logits = self.logits(&pass, inputs.batch());
        let (loss, _) = softmax_cross_entropy(&logits, labels);
        let correct = (0..inputs.batch())
            .filter(|&i| argmax(logits.row(i)) == labels[i])
            .count();
        Ok((loss, correct as f64 / inputs.batch() as f64))
    }

    /// Gradient of the mean loss with respect to `a` (used by tests).
    pub fn alpha_gradient(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, g) = self.loss_and_grads(batch, labels)?;
        Ok((loss, g.alpha))
    }
}

/// Optimizer settings of super-network training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupernetSettings {
    pub weights: TrainSettings,
    /// Learning rate of the operation scores.
    pub alpha_lr: f64,
    /// Fraction of the training split used for weights; the rest updates `a`.
    pub weight_fraction: f64,
}

impl Default for SupernetSettings {
    fn default() -> Self {
        SupernetSettings {
            weights: TrainSettings::default(),
            alpha_lr: 0.5,
            weight_fraction: 0.8,
        }
    }
}

struct SupernetOptim {
    stem: Sgd,
    chains: Vec<Vec<Sgd>>,
    head: Sgd,
}

/// Trains shared weights and operation scores. The first `warmup` epochs
/// keep `a` frozen; afterwards each epoch updates weights on the weight
/// partition of the training split and `a` on the remaining partition.
pub fn train_supernet(
    state: &mut SupernetState,
    reduced: &Dataset,
    epochs: usize,
    warmup: usize,
    root_seed: u64,
    settings: &SupernetSettings,
) -> Result<()> {
    if warmup >= epochs {
        return Err(Error::argument(format!(
            "warmup {warmup} must be below epochs {epochs}"
        )));
    }
    let inputs = reduced
        .train
        .inputs
        .as_ref()
        .ok_or_else(|| Error::argument("empty training split"))?;
    let n = reduced.train.len();
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut seed::rng(root_seed, Stream::Supernet, &[0]));
    let n_w = ((n as f64 * settings.weight_fraction).round() as usize).clamp(1, n);
    let (w_rows, a_rows) = rows.split_at(n_w);
    let (w_rows, a_rows) = (w_rows.to_vec(), a_rows.to_vec());

    let ws = settings.weights;
    let mk = || Sgd::new(ws.lr, ws.momentum);
    let mut opt = SupernetOptim {
        stem: mk(),
        chains: state
            .chains
            .iter()
            .map(|r| r.iter().map(|_| mk()).collect())
            .collect(),
        head: mk(),
    };
    let bs = ws.batch_size.max(1);
    for _ in 0..epochs {
        let epoch = state.epochs_trained + 1;
        let mut order = w_rows.clone();
        order.shuffle(&mut seed::rng(
            root_seed,
            Stream::Supernet,
            &[1, epoch as u64],
        ));
        for chunk in order.chunks(bs) {
            let batch = inputs.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&r| reduced.train.labels[r]).collect();
            let (_, g) = state.loss_and_grads(&batch, &labels)?;
            opt.stem.apply(&mut state.stem, &g.stem);
            opt.head.apply(&mut state.head, &g.head);
            for (b, row) in g.chains.iter().enumerate() {
                for (o, pg) in row.iter().enumerate() {
                    if let (Some(pg), Some(net)) = (pg, state.chains[b][o].as_mut()) {
                        opt.chains[b][o].apply(net, pg);
                    }
                }
            }
        }
        if epoch > warmup && !a_rows.is_empty() && settings.alpha_lr != 0.0 {
            let mut order = a_rows.clone();
            order.shuffle(&mut seed::rng(
                root_seed,
                Stream::Supernet,
                &[2, epoch as u64],
            ));
            for chunk in order.chunks(bs) {
                let batch = inputs.select_rows(chunk);
                let labels: Vec<usize> = chunk.iter().map(|&r| reduced.train.labels[r]).collect();
                let (_, g) = state.loss_and_grads(&batch, &labels)?;
                for (a, ga) in state.alpha.iter_mut().zip(&g.alpha) {
                    for (v, d) in a.iter_mut().zip(ga) {
                        *v -= settings.alpha_lr * d;
                    }
                }
            }
        }
        state.epochs_trained = epoch;
    }
    Ok(())
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// One architecture drawn block by block from `softmax(a)` (duplicates
/// allowed).
pub fn draw_arch(state: &SupernetState, rng: &mut impl Rng) -> ArchCode {
    let probs = state.probabilities();
    ArchCode(probs.iter().map(|p| draw(p, rng)).collect())
}

/// `count` distinct architectures sampled from the operation
/// probabilities, rejecting duplicates; gives up after `100 * count` draws.
pub fn sample_archs(state: &SupernetState, count: usize, root_seed: u64) -> Result<Vec<ArchCode>> {
    if let Some(p) = state.space.size() {
        if count as u128 > p {
            return Err(Error::argument(format!(
                "cannot draw {count} distinct architectures from {p}"
            )));
        }
    }
    let probs = state.probabilities();
    let mut rng = seed::rng(root_seed, Stream::Sampling, &[1]);
    let mut seen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let cap = 100 * count.max(1);
    let mut draws = 0;
    while out.len() < count {
        if draws >= cap {
            return Err(Error::argument(format!(
                "only {} distinct architectures after {cap} draws; request fewer than {count}",
                out.len()
            )));
        }
        draws += 1;
        let code = ArchCode(probs.iter().map(|p| draw(p, &mut rng)).collect());
        if seen.insert(code.clone()) {
            out.push(code);
        }
    }
    Ok(out)
}

/// Sum over blocks of the chosen ops' scores.
pub fn probability_sum(state: &SupernetState, code: &ArchCode, mode: ProbabilityScore) -> f64 {
    code.0
        .iter()
        .zip(&state.alpha)
        .map(|(&c, a)| match mode {
            ProbabilityScore::RawLogit => a[c],
            ProbabilityScore::LogSoftmax => log_softmax(a)[c],
        })
        .sum()
}

/// Cluster representative: the member with the largest probability sum;
/// ties go to the lowest arch id.
pub fn select_by_probability(
    members: &[ArchCode],
    state: &SupernetState,
    mode: ProbabilityScore,
) -> Result<ArchCode> {
    let mut best: Option<(&ArchCode, f64, u128)> = None;
    for code in members {
        state.space.check_code(code)?;
        let s = probability_sum(state, code, mode);
        let id = state.space.index_of(code)?;
        let better = match best {
            None => true,
            Some((_, bs, bid)) => s > bs || (s == bs && id < bid),
        };
        if better {
            best = Some((code, s, id));
        }
    }
    best.map(|b| b.0.clone())
        .ok_or_else(|| Error::argument("cannot select from an empty cluster"))
}

impl SupernetState {
    /// Stand-alone network for `code` carrying the shared weights of the
    /// chosen ops.
    pub fn extract(&self, code: &ArchCode) -> Result<Network> {
        let mut net = self.space.build_network(code)?;
        let stem_len = self.stem.layers().len();
        let head_len = self.head.layers().len();
        let total = net.layers().len();
        let blocks = net.blocks().to_vec();
        let params = net.params_mut();
        params[..stem_len].clone_from_slice(self.stem.params());
        params[total - head_len..].clone_from_slice(self.head.params());
        for ((b, range), &choice) in blocks.iter().enumerate().zip(&code.0) {
            if let Some(chain) = &self.chains[b][choice] {
                let n = chain.layers().len();
                params[range.start..range.start + n].clone_from_slice(chain.params());
            }
        }
        Ok(net)
    }
}

/// Persisted super-network summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetCheckpoint {
    pub blocks: usize,
    pub ops: Vec<BlockOp>,
    pub a: Vec<Vec<f64>>,
    pub weight_digest: String,
    pub epochs_trained: usize,
}

impl SupernetState {
    pub fn checkpoint(&self) -> SupernetCheckpoint {
        SupernetCheckpoint {
            blocks: self.num_blocks(),
            ops: self.ops.clone(),
            a: self.alpha.clone(),
            weight_digest: self.weight_digest(),
            epochs_trained: self.epochs_trained,
        }
    }
}

//! Minimal deterministic CPU engine: dense and convolutional layers,
//! back-propagation and plain SGD.
//!
//! Values are stored as `f32`; every reduction (dot products, gradient
//! sums, pooling) accumulates in `f64` and rounds once.

mod layer;
mod network;
mod tensor;

pub use layer::{LayerKind, LayerParams, LayerSpec};
pub use network::{argmax, softmax_cross_entropy, ActShape, Gradients, Network};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// SGD with optional momentum. Velocity buffers are created lazily on the
/// first step so one optimizer can follow one network.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<LayerParams>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn apply(&mut self, net: &mut Network, grads: &Gradients) {
        if self.momentum == 0.0 {
            for (p, g) in net.params_mut().iter_mut().zip(&grads.layers) {
                descend(&mut p.weight, &g.weight, self.lr);
                descend(&mut p.bias, &g.bias, self.lr);
            }
            return;
        }
        if self.velocity.is_empty() {
            self.velocity = grads
                .layers
                .iter()
                .map(|g| LayerParams {
                    weight: vec![0.0; g.weight.len()],
                    bias: vec![0.0; g.bias.len()],
                })
                .collect();
        }
        let mu = self.momentum;
        for ((p, g), v) in net
            .params_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.velocity.iter_mut())
        {
            for (vv, &gv) in v.weight.iter_mut().zip(&g.weight) {
                *vv = mu * *vv + gv;
            }
            for (vv, &gv) in v.bias.iter_mut().zip(&g.bias) {
                *vv = mu * *vv + gv;
            }
            descend(&mut p.weight, &v.weight, self.lr);
            descend(&mut p.bias, &v.bias, self.lr);
        }
    }

    /// One forward/backward/update on a mini-batch; returns the pre-step
    /// mean loss.
    pub fn step(&mut self, net: &mut Network, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let (loss, grads) = loss_and_gradients(net, batch, labels)?;
        self.apply(net, &grads);
        Ok(loss)
    }
}

fn descend(p: &mut [f32], g: &[f32], lr: f32) {
    for (p, &g) in p.iter_mut().zip(g) {
        *p -= lr * g;
    }
}

/// Mean cross-entropy of `net` on the batch and the parameter gradients.
pub fn loss_and_gradients(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    if labels.len() != batch.batch() {
        return Err(Error::argument(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch.batch()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= net.num_classes()) {
        return Err(Error::argument(format!(
            "label {bad} outside {} classes",
            net.num_classes()
        )));
    }
    let nodes = net.forward_nodes(batch)?;
    let last = nodes.last().expect("non-empty");
    let logits = Tensor::from_raw(vec![batch.batch(), net.num_classes()], last.data().to_vec());
    let (loss, grad) = softmax_cross_entropy(&logits, labels);
    if !loss.is_finite() || !logits.all_finite() {
        return Err(Error::Divergence {
            arch_id: net.arch_id(),
            detail: format!("non-finite loss {loss}"),
        });
    }
    let (grads, _) = net.backward(&nodes, &grad);
    Ok((loss, grads))
}

/// One plain SGD step; parameters are updated in place and the pre-step
/// mean loss is returned.
pub fn backward_sgd_step(
    net: &mut Network,
    batch: &Tensor,
    labels: &[usize],
    lr: f32,
) -> Result<f64> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::argument(format!(
            "learning rate must be >= 0, got {lr}"
        )));
    }
    Sgd::new(lr, 0.0).step(net, batch, labels)
}

/// Fraction of examples whose arg-max logit equals the label.
pub fn accuracy(net: &Network, inputs: &Tensor, labels: &[usize], chunk: usize) -> Result<f64> {
    let n = inputs.batch();
    if n == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for rows in idx.chunks(chunk.max(1)) {
        let batch = inputs.select_rows(rows);
        let (logits, _) = net.forward(&batch, false)?;
        for (k, &r) in rows.iter().enumerate() {
            if argmax(logits.row(k)) == labels[r] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerKind, LayerParams, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Per-example activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Spatial { c, h, w } => c * h * w,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channel count (the flat length for non-spatial shapes).
    pub fn channels(&self) -> usize {
        match *self {
            ActShape::Spatial { c, .. } => c,
            ActShape::Flat(n) => n,
        }
    }

    /// Spatial positions per channel.
    pub fn area(&self) -> usize {
        match *self {
            ActShape::Spatial { h, w, .. } => h * w,
            ActShape::Flat(_) => 1,
        }
    }

    fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Spatial { c, h, w } => vec![c, h, w],
            ActShape::Flat(n) => vec![n],
        }
    }

    fn batched(&self, batch: usize) -> Vec<usize> {
        let mut d = vec![batch];
        d.extend(self.dims());
        d
    }
}

/// A concrete feed-forward network: layer chain plus its parameters.
///
/// `blocks` groups consecutive layers into the structural units that the
/// search space varies; trajectory features are taken per block, at the
/// block's last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    arch_id: usize,
    num_classes: usize,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    shapes: Vec<ActShape>,
    blocks: Vec<Range<usize>>,
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Network {
    /// Validates the layer chain against `input` and builds a network with
    /// zero parameters. Every layer forms its own block.
    pub fn new(
        arch_id: usize,
        input: ActShape,
        layers: Vec<LayerSpec>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut shapes = vec![input];
        for (i, spec) in layers.iter().enumerate() {
            let next = infer_shape(i, spec, &shapes)?;
            shapes.push(next);
        }
        let out = *shapes.last().expect("non-empty");
        if out.len() != num_classes {
            return Err(Error::config(format!(
                "network output has {} values but {num_classes} classes were requested",
                out.len()
            )));
        }
        let params = layers.iter().map(LayerParams::zeros).collect();
        let blocks = (0..layers.len()).map(|i| i..i + 1).collect();
        Ok(Network {
            arch_id,
            num_classes,
            layers,
            params,
            shapes,
            blocks,
        })
    }

    /// A layer chain without a classifier contract: its "classes" are the
    /// length of its output.
    pub fn segment(arch_id: usize, input: ActShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = vec![input];
        for (i, spec) in layers.iter().enumerate() {
            let next = infer_shape(i, spec, &shapes)?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty").len();
        Network::new(arch_id, input, layers, out)
    }

    /// Replaces the block grouping. Blocks must be non-empty, ordered and
    /// disjoint.
    pub fn with_blocks(mut self, blocks: Vec<Range<usize>>) -> Result<Self> {
        let mut prev_end = 0;
        for b in &blocks {
            if b.start >= b.end || b.start < prev_end || b.end > self.layers.len() {
                return Err(Error::config(format!("invalid block range {b:?}")));
            }
            prev_end = b.end;
        }
        self.blocks = blocks;
        Ok(self)
    }

    /// Draws every parameterized layer uniformly from `[-a, a]` with
    /// `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero. Each layer
    /// has its own stream keyed by `(arch_id, layer index)`.
    pub fn init_params(&mut self, root_seed: u64) {
        let arch = self.arch_id as u64;
        self.init_params_keyed(root_seed, &[arch]);
    }

    pub(crate) fn init_params_keyed(&mut self, root_seed: u64, key: &[u64]) {
        for (i, (spec, p)) in self.layers.iter().zip(self.params.iter_mut()).enumerate() {
            if !spec.kind.is_parameterized() {
                continue;
            }
            let (fan_in, fan_out) = spec.fans();
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let mut ids = key.to_vec();
            ids.push(i as u64);
            let mut rng = seed::rng(root_seed, Stream::Init, &ids);
            for w in p.weight.iter_mut() {
                *w = rng.gen_range(-a..=a);
            }
            p.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn arch_id(&self) -> usize {
        self.arch_id
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn input_shape(&self) -> ActShape {
        self.shapes[0]
    }

    /// Activation shape of every node (input first).
    pub fn node_shapes(&self) -> &[ActShape] {
        &self.shapes
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// Node index holding each block's output.
    pub fn block_output_nodes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.end).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Multiply-accumulate count of one forward pass for one example.
    pub fn flops(&self) -> usize {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l.kind {
                LayerKind::Dense => l.in_channels * l.out_channels,
                LayerKind::Conv2d => self.shapes[i + 1].len() * l.in_channels * l.kernel * l.kernel,
                _ => 0,
            })
            .sum()
    }

    /// Flattened parameters of every layer; parameter-free layers yield an
    /// empty vector.
    pub fn snapshot_params(&self) -> Vec<Vec<f32>> {
        self.params.iter().map(LayerParams::flatten).collect()
    }

    /// Flattened parameters of every block.
    pub fn snapshot_block_params(&self) -> Vec<Vec<f32>> {
        self.blocks
            .iter()
            .map(|b| {
                self.params[b.clone()]
                    .iter()
                    .flat_map(LayerParams::flatten)
                    .collect()
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let expect = self.shapes[0].batched(batch.batch());
        if batch.shape() != expect.as_slice() {
            return Err(Error::config(format!(
                "input batch shape {:?} does not match network input {:?} at layer 0 ({})",
                batch.shape(),
                &expect[1..],
                self.layers
                    .first()
                    .map(|l| l.kind.to_string())
                    .unwrap_or_default()
            )));
        }
        Ok(())
    }

    /// Runs the network and returns every node (input first, logits last).
    pub fn forward_nodes(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let b = batch.batch();
        let mut nodes: Vec<Tensor> = Vec::with_capacity(self.layers.len() + 1);
        nodes.push(batch.clone());
        for (i, spec) in self.layers.iter().enumerate() {
            let x = &nodes[i];
            let out_shape = self.shapes[i + 1];
            let data = match spec.kind {
                LayerKind::Dense => dense_forward(spec, &self.params[i], x.data(), b),
                LayerKind::Conv2d => conv_forward(
                    spec,
                    &self.params[i],
                    x.data(),
                    self.shapes[i],
                    out_shape,
                    b,
                ),
                LayerKind::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
                LayerKind::AvgPool2x2 => avgpool_forward(x.data(), self.shapes[i], out_shape, b),
                LayerKind::GlobalAvgPool => gap_forward(x.data(), self.shapes[i], b),
                LayerKind::ShortcutAdd => {
                    let other = &nodes[spec.skip_from.expect("validated")];
                    x.data()
                        .iter()
                        .zip(other.data())
                        .map(|(a, c)| a + c)
                        .collect()
                }
                LayerKind::Identity => x.data().to_vec(),
            };
            nodes.push(Tensor::from_raw(out_shape.batched(b), data));
        }
        Ok(nodes)
    }

    /// Returns `[batch, num_classes]` logits and, when `capture` is set, the
    /// output of every layer in order.
    pub fn forward(&self, batch: &Tensor, capture: bool) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        let mut nodes = self.forward_nodes(batch)?;
        let last = nodes.pop().expect("non-empty");
        let logits = Tensor::from_raw(vec![batch.batch(), self.num_classes], last.data().to_vec());
        let captured = capture.then(|| {
            nodes.remove(0);
            nodes.push(last);
            nodes
        });
        Ok((logits, captured))
    }

    /// Back-propagates `grad_logits` through the cached `nodes` of a
    /// forward pass. Returns parameter gradients and the input gradient.
    pub fn backward(&self, nodes: &[Tensor], grad_logits: &Tensor) -> (Gradients, Vec<f32>) {
        let b = grad_logits.batch();
        let n = self.layers.len();
        let mut node_grads: Vec<Option<Vec<f32>>> = vec![None; n + 1];
        node_grads[n] = Some(grad_logits.data().to_vec());
        let mut grads: Vec<LayerParams> = self.layers.iter().map(LayerParams::zeros).collect();

        for i in (0..n).rev() {
            let Some(g) = node_grads[i + 1].take() else {
                continue;
            };
            let spec = &self.layers[i];
            let x = nodes[i].data();
            let gin = match spec.kind {
                LayerKind::Dense => dense_backward(spec, &self.params[i], x, &g, b, &mut grads[i]),
                LayerKind::Conv2d => conv_backward(
                    spec,
                    &self.params[i],
                    x,
                    &g,
                    self.shapes[i],
                    self.shapes[i + 1],
                    b,
                    &mut grads[i],
                ),
                LayerKind::Relu => {
                    let y = nodes[i + 1].data();
                    g.iter()
                        .zip(y)
                        .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                        .collect()
                }
                LayerKind::AvgPool2x2 => {
                    avgpool_backward(&g, self.shapes[i], self.shapes[i + 1], b)
                }
                LayerKind::GlobalAvgPool => gap_backward(&g, self.shapes[i], b),
                LayerKind::ShortcutAdd => {
                    accumulate(&mut node_grads[spec.skip_from.expect("validated")], &g);
                    g
                }
                LayerKind::Identity => g,
            };
            accumulate(&mut node_grads[i], &gin);
        }
        let gin = node_grads[0]
            .take()
            .unwrap_or_else(|| vec![0.0; nodes[0].len()]);
        (Gradients { layers: grads }, gin)
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: &[f32]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v),
        None => *slot = Some(g.to_vec()),
    }
}

fn infer_shape(i: usize, spec: &LayerSpec, shapes: &[ActShape]) -> Result<ActShape> {
    let input = shapes[i];
    let bad = |msg: String| Error::config(format!("layer {i} ({}): {msg}", spec.kind));
    match spec.kind {
        LayerKind::Dense => {
            if spec.in_channels == 0 || spec.out_channels == 0 {
                return Err(bad("dense layer needs positive in/out features".into()));
            }
            if input.len() != spec.in_channels {
                return Err(bad(format!(
                    "expects {} input features, got {}",
                    spec.in_channels,
                    input.len()
                )));
            }
            Ok(ActShape::Flat(spec.out_channels))
        }
        LayerKind::Conv2d => {
            if spec.in_channels == 0
                || spec.out_channels == 0
                || spec.kernel == 0
                || spec.stride == 0
            {
                return Err(bad(
                    "conv layer needs positive channels, kernel and stride".into()
                ));
            }
            let ActShape::Spatial { c, h, w } = input else {
                return Err(bad("expects a spatial input".into()));
            };
            if c != spec.in_channels {
                return Err(bad(format!(
                    "expects {} input channels, got {c}",
                    spec.in_channels
                )));
            }
            let pad = spec.kernel / 2;
            if h + 2 * pad < spec.kernel || w + 2 * pad < spec.kernel {
                return Err(bad("kernel larger than padded input".into()));
            }
            Ok(ActShape::Spatial {
                c: spec.out_channels,
                h: (h + 2 * pad - spec.kernel) / spec.stride + 1,
                w: (w + 2 * pad - spec.kernel) / spec.stride + 1,
            })
        }
        LayerKind::AvgPool2x2 => match input {
            ActShape::Spatial { c, h, w } if h >= 2 && w >= 2 => Ok(ActShape::Spatial {
                c,
                h: h / 2,
                w: w / 2,
            }),
            _ => Err(bad("expects a spatial input of at least 2x2".into())),
        },
        LayerKind::GlobalAvgPool => match input {
            ActShape::Spatial { c, .. } => Ok(ActShape::Flat(c)),
            ActShape::Flat(_) => Err(bad("expects a spatial input".into())),
        },
        LayerKind::ShortcutAdd => {
            let from = spec
                .skip_from
                .ok_or_else(|| bad("shortcut needs a source node".into()))?;
            if from > i {
                return Err(bad(format!("shortcut source node {from} is not upstream")));
            }
            if shapes[from] != input {
                return Err(bad(format!(
                    "shortcut source shape {:?} differs from input {:?}",
                    shapes[from], input
                )));
            }
            Ok(input)
        }
        LayerKind::Relu | LayerKind::Identity => Ok(input),
    }
}

fn dense_forward(spec: &LayerSpec, p: &LayerParams, x: &[f32], b: usize) -> Vec<f32> {
    let (fin, fout) = (spec.in_channels, spec.out_channels);
    let mut out = Vec::with_capacity(b * fout);
    for s in 0..b {
        let xs = &x[s * fin..(s + 1) * fin];
        for o in 0..fout {
            let row = &p.weight[o * fin..(o + 1) * fin];
            let acc: f64 = row.iter().zip(xs).map(|(&w, &v)| w as f64 * v as f64).sum();
            out.push((acc + p.bias[o] as f64) as f32);
        }
    }
    out
}

fn dense_backward(
    spec: &LayerSpec,
    p: &LayerParams,
    x: &[f32],
    g: &[f32],
    b: usize,
    grad: &mut LayerParams,
) -> Vec<f32> {
    let (fin, fout) = (spec.in_channels, spec.out_channels);
    let mut gw = vec![0.0f64; fin * fout];
    let mut gb = vec![0.0f64; fout];
    let mut gx = vec![0.0f32; b * fin];
    let mut gx_acc = vec![0.0f64; fin];
    for s in 0..b {
        let xs = &x[s * fin..(s + 1) * fin];
        let gs = &g[s * fout..(s + 1) * fout];
        gx_acc.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..fout {
            let go = gs[o] as f64;
            gb[o] += go;
            let row_w = &p.weight[o * fin..(o + 1) * fin];
            let row_gw = &mut gw[o * fin..(o + 1) * fin];
            for ((gw, &xv), (gxa, &w)) in
                row_gw.iter_mut().zip(xs).zip(gx_acc.iter_mut().zip(row_w))
            {
                *gw += go * xv as f64;
                *gxa += go * w as f64;
            }
        }
        for (d, &a) in gx[s * fin..(s + 1) * fin].iter_mut().zip(&gx_acc) {
            *d = a as f32;
        }
    }
    grad.weight = gw.into_iter().map(|v| v as f32).collect();
    grad.bias = gb.into_iter().map(|v| v as f32).collect();
    gx
}

/// Output rows `lo..hi` whose input row `o * stride + k - pad` lies in `0..len`.
fn valid_range(out_len: usize, in_len: usize, k: usize, pad: usize, stride: usize) -> Range<usize> {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    lo..hi.max(lo)
}

fn spatial(s: ActShape) -> (usize, usize, usize) {
    match s {
        ActShape::Spatial { c, h, w } => (c, h, w),
        ActShape::Flat(n) => (n, 1, 1),
    }
}

fn conv_forward(
    spec: &LayerSpec,
    p: &LayerParams,
    x: &[f32],
    in_shape: ActShape,
    out_shape: ActShape,
    b: usize,
) -> Vec<f32> {
    let (ic, h, w) = spatial(in_shape);
    let (oc, oh, ow) = spatial(out_shape);
    let (k, st) = (spec.kernel, spec.stride);
    let pad = k / 2;
    let in_len = ic * h * w;
    let out_len = oc * oh * ow;
    let mut out = vec![0.0f32; b * out_len];
    let mut acc = vec![0.0f64; out_len];
    for s in 0..b {
        let xs = &x[s * in_len..(s + 1) * in_len];
        for o in 0..oc {
            acc[o * oh * ow..(o + 1) * oh * ow].fill(p.bias[o] as f64);
        }
        for o in 0..oc {
            for i in 0..ic {
                for ky in 0..k {
                    let yr = valid_range(oh, h, ky, pad, st);
                    for kx in 0..k {
                        let wv = p.weight[((o * ic + i) * k + ky) * k + kx] as f64;
                        let xr = valid_range(ow, w, kx, pad, st);
                        for oy in yr.clone() {
                            let iy = oy * st + ky - pad;
                            let in_row = &xs[(i * h + iy) * w..(i * h + iy + 1) * w];
                            let acc_row = &mut acc[(o * oh + oy) * ow..(o * oh + oy + 1) * ow];
                            if st == 1 {
                                let off = xr.start + kx - pad;
                                let src = &in_row[off..off + xr.len()];
                                for (a, &v) in acc_row[xr.clone()].iter_mut().zip(src) {
                                    *a += wv * v as f64;
                                }
                            } else {
                                for ox in xr.clone() {
                                    acc_row[ox] += wv * in_row[ox * st + kx - pad] as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
        for (d, &a) in out[s * out_len..(s + 1) * out_len].iter_mut().zip(&acc) {
            *d = a as f32;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    spec: &LayerSpec,
    p: &LayerParams,
    x: &[f32],
    g: &[f32],
    in_shape: ActShape,
    out_shape: ActShape,
    b: usize,
    grad: &mut LayerParams,
) -> Vec<f32> {
    let (ic, h, w) = spatial(in_shape);
    let (oc, oh, ow) = spatial(out_shape);
    let (k, st) = (spec.kernel, spec.stride);
    let pad = k / 2;
    let in_len = ic * h * w;
    let out_len = oc * oh * ow;
    let mut gw = vec![0.0f64; spec.weight_len()];
    let mut gb = vec![0.0f64; oc];
    let mut gx = vec![0.0f32; b * in_len];
    let mut gx_acc = vec![0.0f64; in_len];
    for s in 0..b {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let gs = &g[s * out_len..(s + 1) * out_len];
        gx_acc.fill(0.0);
        for o in 0..oc {
            gb[o] += gs[o * oh * ow..(o + 1) * oh * ow]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
            for i in 0..ic {
                for ky in 0..k {
                    let yr = valid_range(oh, h, ky, pad, st);
                    for kx in 0..k {
                        let widx = ((o * ic + i) * k + ky) * k + kx;
                        let wv = p.weight[widx] as f64;
                        let xr = valid_range(ow, w, kx, pad, st);
                        let mut gacc = 0.0f64;
                        for oy in yr.clone() {
                            let iy = oy * st + ky - pad;
                            let in_base = (i * h + iy) * w;
                            let g_row = &gs[(o * oh + oy) * ow..(o * oh + oy + 1) * ow];
                            if st == 1 {
                                let off = xr.start + kx - pad;
                                let src = &xs[in_base + off..in_base + off + xr.len()];
                                let dst = &mut gx_acc[in_base + off..in_base + off + xr.len()];
                                for ((&gv, &xv), d) in g_row[xr.clone()].iter().zip(src).zip(dst) {
                                    let gv = gv as f64;
                                    gacc += gv * xv as f64;
                                    *d += wv * gv;
                                }
                            } else {
                                for ox in xr.clone() {
                                    let ix = in_base + ox * st + kx - pad;
                                    let gv = g_row[ox] as f64;
                                    gacc += gv * xs[ix] as f64;
                                    gx_acc[ix] += wv * gv;
                                }
                            }
                        }
                        gw[widx] += gacc;
                    }
                }
            }
        }
        for (d, &a) in gx[s * in_len..(s + 1) * in_len].iter_mut().zip(&gx_acc) {
            *d = a as f32;
        }
    }
    grad.weight = gw.into_iter().map(|v| v as f32).collect();
    grad.bias = gb.into_iter().map(|v| v as f32).collect();
    gx
}

fn avgpool_forward(x: &[f32], in_shape: ActShape, out_shape: ActShape, b: usize) -> Vec<f32> {
    let (c, h, w) = spatial(in_shape);
    let (_, oh, ow) = spatial(out_shape);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for s in 0..b {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let r0 = base + 2 * oy * w + 2 * ox;
                    let r1 = r0 + w;
                    let sum = x[r0] as f64 + x[r0 + 1] as f64 + x[r1] as f64 + x[r1 + 1] as f64;
                    out.push((sum * 0.25) as f32);
                }
            }
        }
    }
    out
}

fn avgpool_backward(g: &[f32], in_shape: ActShape, out_shape: ActShape, b: usize) -> Vec<f32> {
    let (c, h, w) = spatial(in_shape);
    let (_, oh, ow) = spatial(out_shape);
    let mut gx = vec![0.0f32; b * c * h * w];
    for s in 0..b {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            let gbase = (s * c + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = g[gbase + oy * ow + ox] * 0.25;
                    let r0 = base + 2 * oy * w + 2 * ox;
                    let r1 = r0 + w;
                    gx[r0] = v;
                    gx[r0 + 1] = v;
                    gx[r1] = v;
                    gx[r1 + 1] = v;
                }
            }
        }
    }
    gx
}

fn gap_forward(x: &[f32], in_shape: ActShape, b: usize) -> Vec<f32> {
    let (c, h, w) = spatial(in_shape);
    let area = h * w;
    x.chunks_exact(area)
        .take(b * c)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / area as f64) as f32)
        .collect()
}

fn gap_backward(g: &[f32], in_shape: ActShape, b: usize) -> Vec<f32> {
    let (c, h, w) = spatial(in_shape);
    let area = h * w;
    let mut gx = Vec::with_capacity(b * c * area);
    for &gv in g {
        let v = (gv as f64 / area as f64) as f32;
        gx.extend(std::iter::repeat_n(v, area));
    }
    gx
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let b = logits.batch();
    let c = logits.row_len();
    let mut grad = vec![0.0f32; b * c];
    let mut total = 0.0f64;
    for s in 0..b {
        let row = logits.row(s);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let y = labels[s];
        total += z.ln() - (row[y] as f64 - max);
        for (j, e) in exps.iter().enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            grad[s * c + j] = ((e / z - target) / b as f64) as f32;
        }
    }
    (total / b as f64, Tensor::from_raw(vec![b, c], grad))
}

/// Index of the largest logit; ties go to the lowest class.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

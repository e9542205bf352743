#![allow(dead_code)]

use dcnas::nn::{softmax_cross_entropy, ActShape, LayerKind, LayerSpec, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f32 = 1e-4;

/// Small network exercising `kind`, on input `[2, 4, 4]` (or a flat
/// 5-vector for dense) with 3 classes.
pub fn net_for(kind: LayerKind) -> Network {
    let spatial = ActShape::Spatial { c: 2, h: 4, w: 4 };
    let (input, layers) = match kind {
        LayerKind::Dense => (ActShape::Flat(5), vec![LayerSpec::dense(5, 3)]),
        LayerKind::Conv2d => (
            spatial,
            vec![
                LayerSpec::conv2d(2, 3, 3, 1),
                LayerSpec::conv2d(3, 2, 3, 2),
                LayerSpec::conv2d(2, 3, 1, 1),
                LayerSpec::global_avgpool(),
                LayerSpec::dense(3, 3),
            ],
        ),
        LayerKind::Relu => (
            spatial,
            vec![
                LayerSpec::conv2d(2, 3, 3, 1),
                LayerSpec::relu(),
                LayerSpec::global_avgpool(),
                LayerSpec::dense(3, 3),
            ],
        ),
        LayerKind::AvgPool2x2 => (
            spatial,
            vec![
                LayerSpec::conv2d(2, 3, 3, 1),
                LayerSpec::avgpool2x2(),
                LayerSpec::conv2d(3, 2, 1, 1),
                LayerSpec::global_avgpool(),
                LayerSpec::dense(2, 3),
            ],
        ),
        LayerKind::GlobalAvgPool => (
            spatial,
            vec![LayerSpec::global_avgpool(), LayerSpec::dense(2, 3)],
        ),
        LayerKind::ShortcutAdd => (
            spatial,
            vec![
                LayerSpec::conv2d(2, 2, 3, 1),
                LayerSpec::shortcut_add(0),
                LayerSpec::conv2d(2, 2, 1, 1),
                LayerSpec::shortcut_add(1),
                LayerSpec::global_avgpool(),
                LayerSpec::dense(2, 3),
            ],
        ),
        LayerKind::Identity => (
            spatial,
            vec![
                LayerSpec::identity(),
                LayerSpec::global_avgpool(),
                LayerSpec::dense(2, 3),
            ],
        ),
    };
    Network::new(0, input, layers, 3).unwrap()
}

/// Reference forward pass in `f64`, written directly from the layer
/// definitions. Weights are `[out][in]` for dense and `[out][in][ky][kx]`
/// for conv; convs pad by `kernel / 2`.
pub fn reference_logits(
    layers: &[LayerSpec],
    params: &[Vec<f64>],
    biases: &[Vec<f64>],
    input: ActShape,
    x: &[f64],
) -> Vec<f64> {
    let mut nodes: Vec<(Vec<f64>, ActShape)> = vec![(x.to_vec(), input)];
    for (l, spec) in layers.iter().enumerate() {
        let (v, shape) = nodes.last().unwrap().clone();
        let next = match spec.kind {
            LayerKind::Dense => {
                let (i_n, o_n) = (spec.in_channels, spec.out_channels);
                let out: Vec<f64> = (0..o_n)
                    .map(|o| {
                        biases[l][o] + (0..i_n).map(|i| params[l][o * i_n + i] * v[i]).sum::<f64>()
                    })
                    .collect();
                (out, ActShape::Flat(o_n))
            }
            LayerKind::Conv2d => {
                let ActShape::Spatial { c, h, w } = shape else {
                    unreachable!()
                };
                let (k, st, oc) = (spec.kernel, spec.stride, spec.out_channels);
                let pad = (k / 2) as i64;
                let oh = (h + 2 * (k / 2) - k) / st + 1;
                let ow = (w + 2 * (k / 2) - k) / st + 1;
                let mut out = vec![0.0; oc * oh * ow];
                for o in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = biases[l][o];
                            for i in 0..c {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = (oy * st + ky) as i64 - pad;
                                        let ix = (ox * st + kx) as i64 - pad;
                                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                            continue;
                                        }
                                        acc += params[l][((o * c + i) * k + ky) * k + kx]
                                            * v[(i * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                            out[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                (
                    out,
                    ActShape::Spatial {
                        c: oc,
                        h: oh,
                        w: ow,
                    },
                )
            }
            LayerKind::Relu => (v.iter().map(|&a| a.max(0.0)).collect(), shape),
            LayerKind::AvgPool2x2 => {
                let ActShape::Spatial { c, h, w } = shape else {
                    unreachable!()
                };
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let at =
                                |dy: usize, dx: usize| v[(ch * h + 2 * y + dy) * w + 2 * x + dx];
                            out[(ch * oh + y) * ow + x] =
                                (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
                        }
                    }
                }
                (out, ActShape::Spatial { c, h: oh, w: ow })
            }
            LayerKind::GlobalAvgPool => {
                let ActShape::Spatial { c, h, w } = shape else {
                    unreachable!()
                };
                let out = (0..c)
                    .map(|ch| v[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
                    .collect();
                (out, ActShape::Flat(c))
            }
            LayerKind::ShortcutAdd => {
                let other = &nodes[spec.skip_from.unwrap()].0;
                (v.iter().zip(other).map(|(a, b)| a + b).collect(), shape)
            }
            LayerKind::Identity => (v, shape),
        };
        nodes.push(next);
    }
    nodes.pop().unwrap().0
}

fn reference_loss(
    net: &Network,
    weights: &[Vec<f64>],
    biases: &[Vec<f64>],
    x: &[f64],
    labels: &[usize],
) -> f64 {
    let per = net.input_shape().len();
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let z = reference_logits(
            net.layers(),
            weights,
            biases,
            net.input_shape(),
            &x[s * per..(s + 1) * per],
        );
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        total += lse - z[y];
    }
    total / labels.len() as f64
}

fn norm_rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Largest norm-wise relative error between the engine's analytic
/// gradients and central finite differences of [`reference_logits`], over
/// every parameter tensor and the input.
pub fn gradient_error(kind: LayerKind, seed: u64) -> f64 {
    let mut net = net_for(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut() {
        p.weight
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-0.8..0.8));
        p.bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let batch_n = 3;
    let per: usize = net.input_shape().len();
    let mut shape = vec![batch_n];
    match net.input_shape() {
        ActShape::Spatial { c, h, w } => shape.extend([c, h, w]),
        ActShape::Flat(n) => shape.push(n),
    }
    let data: Vec<f32> = (0..batch_n * per)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let batch = Tensor::new(shape.clone(), data.clone()).unwrap();
    let labels: Vec<usize> = (0..batch_n).map(|_| rng.gen_range(0..3)).collect();

    let nodes = net.forward_nodes(&batch).unwrap();
    let (_, g) = softmax_cross_entropy(nodes.last().unwrap(), &labels);
    let (grads, grad_in) = net.backward(&nodes, &g);

    let mut weights: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| p.weight.iter().map(|&v| v as f64).collect())
        .collect();
    let mut biases: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| p.bias.iter().map(|&v| v as f64).collect())
        .collect();
    let x: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let h = FD_STEP as f64;

    let mut worst = 0.0f64;
    for l in 0..net.layers().len() {
        for which in 0..2 {
            let analytic: Vec<f64> = if which == 0 {
                grads.layers[l].weight.iter().map(|&v| v as f64).collect()
            } else {
                grads.layers[l].bias.iter().map(|&v| v as f64).collect()
            };
            let mut numeric = Vec::with_capacity(analytic.len());
            for i in 0..analytic.len() {
                let slot = |w: &mut Vec<Vec<f64>>, b: &mut Vec<Vec<f64>>, delta: f64| {
                    if which == 0 {
                        w[l][i] += delta
                    } else {
                        b[l][i] += delta
                    }
                };
                slot(&mut weights, &mut biases, h);
                let lp = reference_loss(&net, &weights, &biases, &x, &labels);
                slot(&mut weights, &mut biases, -2.0 * h);
                let lm = reference_loss(&net, &weights, &biases, &x, &labels);
                slot(&mut weights, &mut biases, h);
                numeric.push((lp - lm) / (2.0 * h));
            }
            worst = worst.max(norm_rel_error(&analytic, &numeric));
        }
    }
    let analytic: Vec<f64> = grad_in.iter().map(|&v| v as f64).collect();
    let mut numeric = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let lp = reference_loss(&net, &weights, &biases, &xp, &labels);
        xp[i] = x[i] - h;
        let lm = reference_loss(&net, &weights, &biases, &xp, &labels);
        xp[i] = x[i];
        numeric.push((lp - lm) / (2.0 * h));
    }
    worst.max(norm_rel_error(&analytic, &numeric))
}

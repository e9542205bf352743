//! Datasets and reduced-dataset construction.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seed::{self, Stream};

/// Examples and labels of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// `[n, c, h, w]`; `None` when the split is empty.
    pub inputs: Option<Tensor>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn empty() -> Self {
        Split {
            inputs: None,
            labels: Vec::new(),
        }
    }

    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::argument(format!(
                "{} examples but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        Ok(Split {
            inputs: Some(inputs),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Split {
        match &self.inputs {
            Some(t) if !rows.is_empty() => Split {
                inputs: Some(t.select_rows(rows)),
                labels: rows.iter().map(|&r| self.labels[r]).collect(),
            },
            _ => Split::empty(),
        }
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// A labelled image dataset with disjoint train/val/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    /// `[c, h, w]` of one example.
    pub shape: [usize; 3],
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn new(
        num_classes: usize,
        shape: [usize; 3],
        train: Split,
        val: Split,
        test: Split,
    ) -> Result<Self> {
        for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
            if let Some(&y) = split.labels.iter().find(|&&y| y >= num_classes) {
                return Err(Error::argument(format!(
                    "{name} label {y} outside {num_classes} classes"
                )));
            }
            if let Some(t) = &split.inputs {
                if t.shape()[1..] != shape {
                    return Err(Error::argument(format!(
                        "{name} examples have shape {:?}, expected {shape:?}",
                        &t.shape()[1..]
                    )));
                }
            }
        }
        Ok(Dataset {
            num_classes,
            shape,
            train,
            val,
            test,
        })
    }

    /// Copy of the dataset whose validation split is the test split.
    pub fn with_val_as_test(&self) -> Dataset {
        Dataset {
            val: self.test.clone(),
            ..self.clone()
        }
    }
}

/// Parameters of the synthetic class-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    /// `[c, h, w]`.
    pub shape: [usize; 3],
    /// RMS amplitude of each class-mean image.
    pub separation: f64,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    /// Largest circular shift, in pixels along each axis, applied to the
    /// class pattern of every example.
    pub max_shift: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            per_class: 300,
            shape: [3, 8, 8],
            separation: 0.5,
            noise: 1.0,
            max_shift: 2,
        }
    }
}

fn smooth_pattern(rng: &mut impl Rng, [c, h, w]: [usize; 3]) -> Vec<f64> {
    let raw: Vec<f64> = (0..c * h * w).map(|_| StandardNormal.sample(rng)).collect();
    let mut out = vec![0.0; raw.len()];
    for ch in 0..c {
        let plane = &raw[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                let mut n = 0.0;
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        s += plane[yy * w + xx];
                        n += 1.0;
                    }
                }
                out[ch * h * w + y * w + x] = s / n;
            }
        }
        // zero mean per channel
        let mean = out[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
        out[ch * h * w..(ch + 1) * h * w]
            .iter_mut()
            .for_each(|v| *v -= mean);
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Gaussian class blobs: every class has a smooth zero-mean mean image of
/// RMS `separation`; examples shift it by up to `max_shift` pixels and
/// add i.i.d. noise. Each class is split
/// 70/15/15 into train/val/test.
pub fn make_synthetic_dataset(spec: &SyntheticSpec, root_seed: u64) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::argument(
            "synthetic dataset needs at least 2 classes",
        ));
    }
    if spec.per_class == 0 || spec.shape.contains(&0) {
        return Err(Error::argument("per_class and shape must be positive"));
    }
    let len: usize = spec.shape.iter().product();
    let mut means_rng = seed::rng(root_seed, Stream::Data, &[0]);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| smooth_pattern(&mut means_rng, spec.shape))
        .collect();

    let mut parts: [(Vec<f32>, Vec<usize>); 3] = Default::default();
    for (k, mean) in means.iter().enumerate() {
        let mut rng = seed::rng(root_seed, Stream::Data, &[1, k as u64]);
        let n_train = (spec.per_class as f64 * 0.70).round() as usize;
        let n_val = (spec.per_class as f64 * 0.15).round() as usize;
        for i in 0..spec.per_class {
            let part = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            let (xs, ys) = &mut parts[part];
            let s = spec.max_shift as i64;
            let (dy, dx) = if s > 0 {
                (rng.gen_range(-s..=s), rng.gen_range(-s..=s))
            } else {
                (0, 0)
            };
            let [c, h, w] = spec.shape;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
                        let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
                        let m = mean[ch * h * w + sy * w + sx];
                        let z: f64 = StandardNormal.sample(&mut rng);
                        xs.push((spec.separation * m + spec.noise * z) as f32);
                    }
                }
            }
            ys.push(k);
        }
    }

    let mut splits = Vec::with_capacity(3);
    for (p, (xs, ys)) in parts.into_iter().enumerate() {
        if ys.is_empty() {
            splits.push(Split::empty());
            continue;
        }
        let mut order: Vec<usize> = (0..ys.len()).collect();
        order.shuffle(&mut seed::rng(root_seed, Stream::Data, &[2, p as u64]));
        let n = ys.len();
        let mut shape = vec![n];
        shape.extend(spec.shape);
        let all = Split::new(Tensor::new(shape, xs)?, ys)?;
        debug_assert_eq!(all.inputs.as_ref().unwrap().len(), n * len);
        splits.push(all.select(&order));
    }
    let test = splits.pop().expect("3 splits");
    let val = splits.pop().expect("3 splits");
    let train = splits.pop().expect("3 splits");
    Dataset::new(spec.classes, spec.shape, train, val, test)
}

/// How the reduced training set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedSpec {
    pub sigma: f64,
    pub seed: u64,
    pub stratified: bool,
}

/// Keeps `ceil(sigma * n_train)` training examples; val and test are
/// untouched. Stratified reduction allocates the per-class quotas by
/// largest remainder, so class proportions are preserved to within one.
pub fn reduce_dataset(d: &Dataset, spec: &ReducedSpec) -> Result<Dataset> {
    if !(spec.sigma > 0.0 && spec.sigma <= 1.0) {
        return Err(Error::argument(format!(
            "sigma must lie in (0, 1], got {}",
            spec.sigma
        )));
    }
    let n = d.train.len();
    let target = ((spec.sigma * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let target = target.min(n);
    if target == n {
        return Ok(d.clone());
    }
    let mut rng = seed::rng(spec.seed, Stream::Reduce, &[]);
    let mut rows: Vec<usize> = if spec.stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes];
        for (i, &y) in d.train.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let quotas: Vec<f64> = by_class
            .iter()
            .map(|m| m.len() as f64 * target as f64 / n as f64)
            .collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut rest = target - take.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..d.num_classes).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for k in order {
            if rest == 0 {
                break;
            }
            if take[k] < by_class[k].len() {
                take[k] += 1;
                rest -= 1;
            }
        }
        let mut rows = Vec::with_capacity(target);
        for (members, &t) in by_class.iter_mut().zip(&take) {
            members.shuffle(&mut rng);
            rows.extend_from_slice(&members[..t]);
        }
        rows
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(target);
        all
    };
    rows.sort_unstable();

    let before = d.train.class_counts(d.num_classes);
    let reduced = d.train.select(&rows);
    let after = reduced.class_counts(d.num_classes);
    if let Some(k) = (0..d.num_classes).find(|&k| before[k] > 0 && after[k] == 0) {
        return Err(Error::argument(format!(
            "reduction to {target} examples leaves class {k} without training examples"
        )));
    }
    Ok(Dataset {
        train: reduced,
        ..d.clone()
    })
}

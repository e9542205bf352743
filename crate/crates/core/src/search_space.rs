//! Search spaces and architecture codes.
//!
//! Two families are supported:
//!
//! * **channel ratio**: `depth` conv-relu blocks whose widths are
//!   `round(base_channels * ratio)` for a per-layer ratio choice, followed
//!   by global average pooling and a dense classifier. The first block ends
//!   with a 2x2 average pool when the input is at least 4x4.
//! * **layer-wise ops**: a fixed stem (3x3 conv, relu, 2x2 pool when the
//!   input is at least 4x4) followed by `num_blocks` searchable blocks and
//!   the same head. Each block is either `skip` (identity) or an inverted
//!   bottleneck `1x1 expand, relu, kxk conv, relu, 1x1 project` with a
//!   residual shortcut around it.
//!
//! Architectures are enumerated in mixed radix with layer 0 as the most
//! significant digit, so enumeration order equals lexicographic code order.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActShape, LayerSpec, Network};
use crate::seed::{self, Stream};

/// Enumeration index of an architecture within its space.
pub type ArchId = u128;

/// Candidate operation of a layer-wise block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockOp {
    Skip,
    Conv { kernel: usize, expansion: usize },
}

impl BlockOp {
    pub fn is_skip(self) -> bool {
        matches!(self, BlockOp::Skip)
    }

    /// Layers of one block whose input is `node` with `channels` channels.
    pub fn layers(self, channels: usize, node: usize) -> Vec<LayerSpec> {
        match self {
            BlockOp::Skip => vec![LayerSpec::identity()],
            BlockOp::Conv { kernel, expansion } => {
                let hidden = channels * expansion;
                vec![
                    LayerSpec::conv2d(channels, hidden, 1, 1),
                    LayerSpec::relu(),
                    LayerSpec::conv2d(hidden, hidden, kernel, 1),
                    LayerSpec::relu(),
                    LayerSpec::conv2d(hidden, channels, 1, 1),
                    LayerSpec::shortcut_add(node),
                ]
            }
        }
    }
}

impl fmt::Display for BlockOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockOp::Skip => f.write_str("skip"),
            BlockOp::Conv { kernel, expansion } => write!(f, "k{kernel}e{expansion}"),
        }
    }
}

impl FromStr for BlockOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "skip" || t == "identity" {
            return Ok(BlockOp::Skip);
        }
        let parsed = t
            .strip_prefix('k')
            .and_then(|r| r.split_once('e'))
            .and_then(|(k, e)| Some((k.parse::<usize>().ok()?, e.parse::<usize>().ok()?)));
        match parsed {
            Some((kernel, expansion)) if kernel % 2 == 1 && expansion >= 1 => {
                Ok(BlockOp::Conv { kernel, expansion })
            }
            _ => Err(Error::config(format!(
                "unknown block op `{t}` (expected `skip` or `k<odd kernel>e<expansion>`)"
            ))),
        }
    }
}

impl Serialize for BlockOp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockOp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceKind {
    ChannelRatio {
        depth: usize,
        ratios: Vec<f64>,
        base_channels: usize,
    },
    LayerwiseOps {
        num_blocks: usize,
        ops: Vec<BlockOp>,
        stem_channels: usize,
    },
}

/// A search space: structural template plus per-layer choice sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    #[serde(flatten)]
    pub kind: SpaceKind,
    /// `[channels, height, width]` of one input example.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

/// One architecture: a choice index per searchable layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchCode(pub Vec<usize>);

impl ArchCode {
    pub fn choices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Round half up; `x` is assumed non-negative.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn format_ratio(r: f64) -> String {
    format!("{r}")
}

fn parse_ratio(t: &str) -> Option<f64> {
    match t.split_once('/') {
        Some((n, d)) => {
            let (n, d) = (n.trim().parse::<f64>().ok()?, d.trim().parse::<f64>().ok()?);
            (d != 0.0).then(|| n / d)
        }
        None => t.parse::<f64>().ok(),
    }
}

impl SearchSpace {
    /// Channel-ratio space of `ratios.len() ^ depth` architectures.
    pub fn toy(
        depth: usize,
        ratios: &[f64],
        base_channels: usize,
        input_shape: [usize; 3],
        num_classes: usize,
    ) -> Result<Self> {
        let space = SearchSpace {
            kind: SpaceKind::ChannelRatio {
                depth,
                ratios: ratios.to_vec(),
                base_channels,
            },
            input_shape,
            num_classes,
        };
        space.validate()?;
        Ok(space)
    }

    /// Layer-wise space of `ops.len() ^ num_blocks` architectures.
    pub fn layerwise(
        num_blocks: usize,
        ops: &[BlockOp],
        stem_channels: usize,
        input_shape: [usize; 3],
        num_classes: usize,
    ) -> Result<Self> {
        let space = SearchSpace {
            kind: SpaceKind::LayerwiseOps {
                num_blocks,
                ops: ops.to_vec(),
                stem_channels,
            },
            input_shape,
            num_classes,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) {
            return Err(Error::config("input shape dimensions must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        match &self.kind {
            SpaceKind::ChannelRatio {
                depth,
                ratios,
                base_channels,
            } => {
                if *depth == 0 {
                    return Err(Error::config("depth must be >= 1"));
                }
                if ratios.is_empty() {
                    return Err(Error::config("ratio list is empty"));
                }
                for &r in ratios {
                    if !(r > 0.0) || !r.is_finite() {
                        return Err(Error::config(format!("ratio {r} must be positive")));
                    }
                    if round_half_up(*base_channels as f64 * r) == 0 {
                        return Err(Error::config(format!(
                            "ratio {r} with {base_channels} base channels rounds to width 0"
                        )));
                    }
                }
                for (i, a) in ratios.iter().enumerate() {
                    if ratios[..i]
                        .iter()
                        .any(|b| format_ratio(*b) == format_ratio(*a))
                    {
                        return Err(Error::config(format!("duplicate ratio {a}")));
                    }
                }
            }
            SpaceKind::LayerwiseOps {
                num_blocks,
                ops,
                stem_channels,
            } => {
                if *num_blocks == 0 {
                    return Err(Error::config("num_blocks must be >= 1"));
                }
                if ops.is_empty() {
                    return Err(Error::config("op list is empty"));
                }
                if *stem_channels == 0 {
                    return Err(Error::config("stem_channels must be positive"));
                }
                for (i, a) in ops.iter().enumerate() {
                    if ops[..i].contains(a) {
                        return Err(Error::config(format!("duplicate op {a}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of searchable layers `L`.
    pub fn num_layers(&self) -> usize {
        match &self.kind {
            SpaceKind::ChannelRatio { depth, .. } => *depth,
            SpaceKind::LayerwiseOps { num_blocks, .. } => *num_blocks,
        }
    }

    pub fn choices_per_layer(&self) -> usize {
        match &self.kind {
            SpaceKind::ChannelRatio { ratios, .. } => ratios.len(),
            SpaceKind::LayerwiseOps { ops, .. } => ops.len(),
        }
    }

    /// Total number of architectures `p`, or `None` if it exceeds `u128`.
    pub fn size(&self) -> Option<u128> {
        (self.choices_per_layer() as u128).checked_pow(self.num_layers() as u32)
    }

    /// `p` as a float, defined for every space.
    pub fn size_f64(&self) -> f64 {
        (self.choices_per_layer() as f64).powi(self.num_layers() as i32)
    }

    fn size_checked(&self) -> Result<u128> {
        self.size()
            .ok_or_else(|| Error::argument("search space too large to index"))
    }

    fn token(&self, choice: usize) -> String {
        match &self.kind {
            SpaceKind::ChannelRatio { ratios, .. } => format_ratio(ratios[choice]),
            SpaceKind::LayerwiseOps { ops, .. } => ops[choice].to_string(),
        }
    }

    pub fn check_code(&self, code: &ArchCode) -> Result<()> {
        if code.len() != self.num_layers() {
            return Err(Error::argument(format!(
                "code has {} layers, space has {}",
                code.len(),
                self.num_layers()
            )));
        }
        let c = self.choices_per_layer();
        if let Some((l, &bad)) = code.0.iter().enumerate().find(|(_, &v)| v >= c) {
            return Err(Error::argument(format!(
                "layer {l} choice {bad} out of range 0..{c}"
            )));
        }
        Ok(())
    }

    /// Canonical comma-separated text form.
    pub fn format_arch(&self, code: &ArchCode) -> String {
        code.0
            .iter()
            .map(|&c| self.token(c))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses a comma-separated code. Ratio tokens may be written as
    /// decimals or fractions (`1/2`).
    pub fn parse_arch(&self, text: &str) -> Result<ArchCode> {
        let tokens: Vec<&str> = text.trim().split(',').map(str::trim).collect();
        if tokens.len() != self.num_layers() {
            return Err(Error::Parse {
                position: tokens.len().min(self.num_layers()),
                message: format!(
                    "expected {} tokens, found {}",
                    self.num_layers(),
                    tokens.len()
                ),
            });
        }
        let mut choices = Vec::with_capacity(tokens.len());
        for (pos, tok) in tokens.iter().enumerate() {
            let choice = match &self.kind {
                SpaceKind::ChannelRatio { ratios, .. } => parse_ratio(tok).and_then(|v| {
                    ratios
                        .iter()
                        .position(|&r| (r - v).abs() <= 1e-9 * r.abs().max(1.0))
                }),
                SpaceKind::LayerwiseOps { ops, .. } => tok
                    .parse::<BlockOp>()
                    .ok()
                    .and_then(|op| ops.iter().position(|&o| o == op)),
            };
            match choice {
                Some(c) => choices.push(c),
                None => {
                    return Err(Error::Parse {
                        position: pos,
                        message: format!("unknown token `{tok}`"),
                    })
                }
            }
        }
        Ok(ArchCode(choices))
    }

    pub fn index_of(&self, code: &ArchCode) -> Result<ArchId> {
        self.check_code(code)?;
        self.size_checked()?;
        let c = self.choices_per_layer() as u128;
        Ok(code.0.iter().fold(0u128, |acc, &d| acc * c + d as u128))
    }

    pub fn code_at(&self, index: ArchId) -> Result<ArchCode> {
        let p = self.size_checked()?;
        if index >= p {
            return Err(Error::argument(format!(
                "index {index} outside space of {p}"
            )));
        }
        let c = self.choices_per_layer() as u128;
        let mut digits = vec![0usize; self.num_layers()];
        let mut rest = index;
        for d in digits.iter_mut().rev() {
            *d = (rest % c) as usize;
            rest /= c;
        }
        Ok(ArchCode(digits))
    }

    /// Every architecture in index order.
    pub fn enumerate(&self, limit: u128) -> Result<Vec<ArchCode>> {
        let p = self.size_checked()?;
        if p > limit {
            return Err(Error::argument(format!(
                "space of {p} architectures exceeds enumeration limit {limit}"
            )));
        }
        (0..p).map(|i| self.code_at(i)).collect()
    }

    /// `count` distinct architectures drawn uniformly without replacement,
    /// returned in ascending index order.
    pub fn sample_uniform(&self, count: usize, root_seed: u64) -> Result<Vec<ArchCode>> {
        let p = self.size();
        if let Some(p) = p {
            if count as u128 > p {
                return Err(Error::argument(format!(
                    "cannot draw {count} distinct architectures from a space of {p}"
                )));
            }
        }
        let mut rng = seed::rng(root_seed, Stream::Sampling, &[]);
        let mut ids: Vec<ArchId> = match p {
            Some(p) if p <= (1u128 << 32) => index::sample(&mut rng, p as usize, count)
                .into_iter()
                .map(|i| i as u128)
                .collect(),
            _ => {
                let c = self.choices_per_layer();
                let mut seen = std::collections::BTreeSet::new();
                while seen.len() < count {
                    let code = ArchCode(
                        (0..self.num_layers())
                            .map(|_| rng.gen_range(0..c))
                            .collect(),
                    );
                    seen.insert(code);
                }
                let mut codes: Vec<ArchCode> = seen.into_iter().collect();
                if self.size().is_some() {
                    codes.sort_by_key(|c| self.index_of(c).expect("valid"));
                }
                return Ok(codes);
            }
        };
        ids.sort_unstable();
        ids.into_iter().map(|i| self.code_at(i)).collect()
    }

    /// Layer widths of a channel-ratio code.
    pub fn widths(&self, code: &ArchCode) -> Result<Vec<usize>> {
        self.check_code(code)?;
        match &self.kind {
            SpaceKind::ChannelRatio {
                ratios,
                base_channels,
                ..
            } => code
                .0
                .iter()
                .enumerate()
                .map(|(l, &c)| {
                    let w = round_half_up(*base_channels as f64 * ratios[c]);
                    if w == 0 {
                        Err(Error::config(format!("layer {l} width rounds to 0")))
                    } else {
                        Ok(w)
                    }
                })
                .collect(),
            SpaceKind::LayerwiseOps { .. } => Err(Error::argument(
                "widths are defined for channel-ratio spaces only",
            )),
        }
    }

    /// Builds the network structure for `code` with all parameters zero.
    /// Shapes depend only on the code.
    pub fn build_network(&self, code: &ArchCode) -> Result<Network> {
        self.check_code(code)?;
        let arch_id = self.index_of(code).unwrap_or(0);
        let [c, h, w] = self.input_shape;
        let input = ActShape::Spatial { c, h, w };
        let pool = h >= 4 && w >= 4;
        let mut layers = Vec::new();
        let mut blocks = Vec::new();
        let last_channels = match &self.kind {
            SpaceKind::ChannelRatio { .. } => {
                let widths = self.widths(code)?;
                let mut prev = c;
                for (l, &width) in widths.iter().enumerate() {
                    let start = layers.len();
                    layers.push(LayerSpec::conv2d(prev, width, 3, 1));
                    layers.push(LayerSpec::relu());
                    if l == 0 && pool {
                        layers.push(LayerSpec::avgpool2x2());
                    }
                    blocks.push(start..layers.len());
                    prev = width;
                }
                prev
            }
            SpaceKind::LayerwiseOps {
                ops, stem_channels, ..
            } => {
                layers.push(LayerSpec::conv2d(c, *stem_channels, 3, 1));
                layers.push(LayerSpec::relu());
                if pool {
                    layers.push(LayerSpec::avgpool2x2());
                }
                for &choice in &code.0 {
                    let start = layers.len();
                    layers.extend(ops[choice].layers(*stem_channels, start));
                    blocks.push(start..layers.len());
                }
                *stem_channels
            }
        };
        layers.push(LayerSpec::global_avgpool());
        layers.push(LayerSpec::dense(last_channels, self.num_classes));
        Network::new(arch_id as usize, input, layers, self.num_classes)?.with_blocks(blocks)
    }

    /// Builds and initializes the network for `code`.
    pub fn instantiate(&self, code: &ArchCode, root_seed: u64) -> Result<Network> {
        let mut net = self.build_network(code)?;
        net.init_params(root_seed);
        Ok(net)
    }
}

//! Frozen VGG-19 feature extractor, layer presets and gram matrices.
//!
//! Weights come from a safetensors file holding `convB_L.weight` (`[out, in, 3, 3]`)
//! and `convB_L.bias` (`[out]`) for all sixteen convolutions of the VGG-19
//! feature stack. Taps are named after the canonical layer names: `convB_L` is the
//! pre-activation output, `reluB_L` the rectified one, `poolB` the max-pooled one.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::linalg::{matmul, View};

/// ImageNet statistics on `[0, 1]` RGB.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// `(name, in_channels, out_channels)` for each convolution, in order.
pub const VGG19_CONVS: [(&str, usize, usize); 16] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("conv4_1", 256, 512),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv4_4", 512, 512),
    ("conv5_1", 512, 512),
    ("conv5_2", 512, 512),
    ("conv5_3", 512, 512),
    ("conv5_4", 512, 512),
];

#[derive(Clone, Copy, Debug)]
enum OpKind {
    Conv(usize),
    Relu,
    Pool,
}

/// The VGG-19 feature stack up to `pool4`, one entry per named activation.
fn topology() -> Vec<(String, OpKind)> {
    let mut ops = Vec::new();
    let mut block = 1;
    for (idx, (name, _, _)) in VGG19_CONVS.iter().enumerate() {
        let b: usize = name[4..5].parse().expect("block digit");
        if b != block {
            ops.push((format!("pool{block}"), OpKind::Pool));
            block = b;
        }
        ops.push((name.to_string(), OpKind::Conv(idx)));
        ops.push((name.replacen("conv", "relu", 1), OpKind::Relu));
    }
    ops
}

/// Named tap sets used by the style loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerPreset {
    #[default]
    ShallowRelu,
    ShallowConv,
    DeepRelu,
    DeepConv,
}

impl LayerPreset {
    pub fn style_taps(self) -> Vec<String> {
        let names: &[&str] = match self {
            LayerPreset::ShallowRelu => &["relu1_1", "relu1_2", "relu2_1", "relu2_2", "relu3_1"],
            LayerPreset::ShallowConv => &["conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1"],
            LayerPreset::DeepRelu => &["relu1_2", "relu2_2", "relu3_3", "relu4_3", "relu5_3"],
            LayerPreset::DeepConv => &["conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Style taps plus the content tap (deepest style tap).
    pub fn taps(self) -> TapSet {
        let style = self.style_taps();
        let content = style.last().cloned().expect("presets are non-empty");
        TapSet { style, content }
    }
}

/// Resolved tap names: an ordered style list and one content tap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSet {
    pub style: Vec<String>,
    pub content: String,
}

impl TapSet {
    pub fn validate(&self) -> Result<()> {
        if self.style.is_empty() {
            return Err(Error::config("style_taps", "tap list is empty"));
        }
        let known: Vec<String> = topology().into_iter().map(|(n, _)| n).collect();
        for tap in self.style.iter().chain(std::iter::once(&self.content)) {
            if !known.contains(tap) {
                return Err(Error::config("style_taps", format!("unknown VGG-19 tap {tap}")));
            }
        }
        Ok(())
    }

    /// Style taps followed by the content tap when it is not already listed.
    fn all(&self) -> Vec<String> {
        let mut all = self.style.clone();
        if !all.contains(&self.content) {
            all.push(self.content.clone());
        }
        all
    }
}

/// Activations of shape `channels × height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape("feature map dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} given {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Features at each requested tap, in tap-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    taps: TapSet,
    maps: Vec<(String, FeatureMap)>,
}

impl FeaturePyramid {
    /// Builds a pyramid from precomputed maps; every tap in `taps` must be present.
    pub fn from_maps(taps: TapSet, maps: Vec<(String, FeatureMap)>) -> Self {
        for t in taps.all() {
            assert!(maps.iter().any(|(n, _)| *n == t), "missing map for tap {t}");
        }
        Self { taps, maps }
    }

    pub fn taps(&self) -> &TapSet {
        &self.taps
    }

    pub fn get(&self, tap: &str) -> Option<&FeatureMap> {
        self.maps.iter().find(|(n, _)| n == tap).map(|(_, m)| m)
    }

    pub fn content(&self) -> &FeatureMap {
        self.get(&self.taps.content).expect("content tap extracted")
    }

    /// `(tap, map)` for every style tap in order.
    pub fn style_maps(&self) -> impl Iterator<Item = (&str, &FeatureMap)> + '_ {
        self.taps
            .style
            .iter()
            .map(|t| (t.as_str(), self.get(t).expect("style tap extracted")))
    }

    pub fn entries(&self) -> &[(String, FeatureMap)] {
        &self.maps
    }
}

/// Symmetric `C × C` channel correlation, normalised by `C·H·W`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub channels: usize,
    pub data: Vec<f32>,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.channels + j]
    }
}

/// `G = F·Fᵀ / (C·H·W)` over the `C × HW` flattening of `feat`.
pub fn gram(feat: &FeatureMap) -> GramMatrix {
    let c = feat.channels;
    let hw = feat.plane();
    let mut data = vec![0.0; c * c];
    let f = View::new(&feat.data, c, hw);
    matmul(f, f.t(), 0.0, &mut data);
    let norm = 1.0 / (c * hw) as f32;
    for i in 0..c {
        for j in i..c {
            let v = data[i * c + j] * norm;
            data[i * c + j] = v;
            data[j * c + i] = v;
        }
    }
    GramMatrix { channels: c, data }
}

struct Conv {
    in_channels: usize,
    out_channels: usize,
    /// `out × (in·9)` row-major.
    weight: Vec<f32>,
    bias: Vec<f32>,
}

/// Frozen VGG-19 with a resolved tap set.
pub struct FeatureExtractor {
    convs: Arc<Vec<Conv>>,
    taps: TapSet,
    ops: Vec<(String, OpKind)>,
    /// Number of ops to run to reach the deepest tap.
    depth: usize,
}

/// Per-op state kept for the input-gradient backward pass.
enum Saved {
    Conv { height: usize, width: usize },
    /// Rectified output; its support is the ReLU mask.
    Relu(Vec<f32>),
    Pool {
        in_height: usize,
        in_width: usize,
        argmax: Vec<u32>,
    },
}

/// Record of one forward pass, consumed by [`FeatureExtractor::backward`].
pub struct Tape {
    saved: Vec<Saved>,
    dims: Vec<(usize, usize, usize)>,
    image_height: usize,
    image_width: usize,
}

fn tensor_f32(st: &SafeTensors<'_>, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
    let view: TensorView<'_> = st
        .tensor(name)
        .map_err(|_| Error::Load(format!("missing tensor {name}")))?;
    if view.dtype() != Dtype::F32 {
        return Err(Error::Load(format!(
            "tensor {name} has dtype {:?}, expected F32",
            view.dtype()
        )));
    }
    if view.shape() != shape {
        return Err(Error::Load(format!(
            "tensor {name} has shape {:?}, expected {:?}",
            view.shape(),
            shape
        )));
    }
    Ok(view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

impl FeatureExtractor {
    /// Parses a safetensors weight file. Every VGG-19 convolution must be present.
    pub fn from_bytes(bytes: &[u8], taps: TapSet) -> Result<Self> {
        taps.validate()?;
        let st = SafeTensors::deserialize(bytes)
            .map_err(|e| Error::Load(format!("weight file is not safetensors: {e}")))?;
        let mut convs = Vec::with_capacity(VGG19_CONVS.len());
        for (name, cin, cout) in VGG19_CONVS {
            // Report the layer name when the whole layer is absent.
            if st.tensor(&format!("{name}.weight")).is_err() && st.tensor(&format!("{name}.bias")).is_err() {
                return Err(Error::Load(format!("missing tensor {name}")));
            }
            let weight = tensor_f32(&st, &format!("{name}.weight"), &[cout, cin, 3, 3])?;
            let bias = tensor_f32(&st, &format!("{name}.bias"), &[cout])?;
            if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
                return Err(Error::Load(format!("tensor {name} holds non-finite values")));
            }
            convs.push(Conv {
                in_channels: cin,
                out_channels: cout,
                weight,
                bias,
            });
        }
        let ops = topology();
        let depth = taps
            .all()
            .iter()
            .map(|t| ops.iter().position(|(n, _)| n == t).expect("validated") + 1)
            .max()
            .expect("non-empty");
        Ok(Self {
            convs: Arc::new(convs),
            taps,
            ops,
            depth,
        })
    }

    pub fn taps(&self) -> &TapSet {
        &self.taps
    }

    /// Same weights, different taps.
    pub fn with_taps(&self, taps: TapSet) -> Result<FeatureExtractor> {
        taps.validate()?;
        let depth = taps
            .all()
            .iter()
            .map(|t| self.ops.iter().position(|(n, _)| n == t).expect("validated") + 1)
            .max()
            .expect("non-empty");
        Ok(FeatureExtractor {
            convs: Arc::clone(&self.convs),
            taps,
            ops: self.ops.clone(),
            depth,
        })
    }

    pub fn extract(&self, img: &Image) -> FeaturePyramid {
        self.run(img, false).0
    }

    /// Forward pass that also records what [`Self::backward`] needs.
    pub fn extract_with_tape(&self, img: &Image) -> (FeaturePyramid, Tape) {
        let (pyr, tape) = self.run(img, true);
        (pyr, tape.expect("tape requested"))
    }

    fn run(&self, img: &Image, record: bool) -> (FeaturePyramid, Option<Tape>) {
        let (h, w) = (img.height(), img.width());
        let mut x = preprocess(img);
        let mut dims = (3, h, w);
        let wanted = self.taps.all();
        let mut maps: Vec<(String, FeatureMap)> = Vec::with_capacity(wanted.len());
        let mut saved = Vec::new();
        let mut all_dims = Vec::new();
        for (name, op) in &self.ops[..self.depth] {
            all_dims.push(dims);
            let (c, hh, ww) = dims;
            match *op {
                OpKind::Conv(idx) => {
                    let conv = &self.convs[idx];
                    x = conv_forward(conv, &x, hh, ww);
                    dims = (conv.out_channels, hh, ww);
                    if record {
                        saved.push(Saved::Conv {
                            height: hh,
                            width: ww,
                        });
                    }
                }
                OpKind::Relu => {
                    x.iter_mut().for_each(|v| *v = v.max(0.0));
                    if record {
                        saved.push(Saved::Relu(x.clone()));
                    }
                }
                OpKind::Pool => {
                    let (out, argmax, oh, ow) = max_pool(&x, c, hh, ww);
                    x = out;
                    dims = (c, oh, ow);
                    if record {
                        saved.push(Saved::Pool {
                            in_height: hh,
                            in_width: ww,
                            argmax,
                        });
                    }
                }
            }
            if wanted.contains(name) {
                let (c, hh, ww) = dims;
                maps.push((
                    name.clone(),
                    FeatureMap {
                        channels: c,
                        height: hh,
                        width: ww,
                        data: x.clone(),
                    },
                ));
            }
        }
        // Reorder to tap-set order.
        let maps = wanted
            .iter()
            .map(|t| {
                let pos = maps.iter().position(|(n, _)| n == t).expect("tap reached");
                (t.clone(), maps[pos].1.clone())
            })
            .collect();
        let pyramid = FeaturePyramid {
            taps: self.taps.clone(),
            maps,
        };
        let tape = record.then(|| Tape {
            saved,
            dims: all_dims,
            image_height: h,
            image_width: w,
        });
        (pyramid, tape)
    }

    /// Gradient with respect to the `[0, 1]` input image (`H × W × 3` row-major)
    /// given gradients at some taps.
    pub fn backward(&self, tape: Tape, tap_grads: &[(String, Vec<f32>)]) -> Vec<f32> {
        let grad_at = |name: &str| tap_grads.iter().find(|(n, _)| n == name).map(|(_, g)| g);
        let mut grad: Option<Vec<f32>> = None;
        let Tape {
            saved,
            dims,
            image_height: h,
            image_width: w,
        } = tape;
        for (step, saved) in saved.into_iter().enumerate().rev() {
            let (name, op) = &self.ops[step];
            if let Some(g) = grad_at(name) {
                match grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => grad = Some(g.clone()),
                }
            }
            let Some(mut g) = grad.take() else {
                continue;
            };
            let (cin, _, _) = dims[step];
            g = match (op, saved) {
                (OpKind::Conv(idx), Saved::Conv { height, width }) => {
                    conv_backward_input(&self.convs[*idx], &g, height, width)
                }
                (OpKind::Relu, Saved::Relu(out)) => {
                    g.iter_mut().zip(&out).for_each(|(gv, o)| {
                        if *o <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    g
                }
                (
                    OpKind::Pool,
                    Saved::Pool {
                        in_height,
                        in_width,
                        argmax,
                    },
                ) => {
                    let plane = in_height * in_width;
                    let mut dx = vec![0.0; cin * plane];
                    let out_plane = argmax.len() / cin;
                    for (k, (&src, gv)) in argmax.iter().zip(&g).enumerate() {
                        let c = k / out_plane;
                        dx[c * plane + src as usize] += gv;
                    }
                    dx
                }
                _ => unreachable!("tape entries follow the op sequence"),
            };
            grad = Some(g);
        }
        let g = grad.unwrap_or_else(|| vec![0.0; 3 * h * w]);
        let plane = h * w;
        let mut out = vec![0.0; plane * 3];
        for c in 0..3 {
            let inv = 1.0 / IMAGENET_STD[c];
            for p in 0..plane {
                out[p * 3 + c] = g[c * plane + p] * inv;
            }
        }
        out
    }
}

/// Reads a weight file and resolves a preset.
pub fn load_extractor(weights: impl AsRef<Path>, preset: LayerPreset) -> Result<FeatureExtractor> {
    let path = weights.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    FeatureExtractor::from_bytes(&bytes, preset.taps())
}

/// Prefix selecting the seeded random network instead of a weight file.
pub const SYNTHETIC_PREFIX: &str = "synthetic:";

/// Opens `source`: a safetensors path, or `synthetic:<seed>`.
pub fn open_extractor(source: &str, preset: LayerPreset) -> Result<FeatureExtractor> {
    match source.strip_prefix(SYNTHETIC_PREFIX) {
        Some(seed) => {
            let seed = seed
                .parse()
                .map_err(|_| Error::Load(format!("bad synthetic seed {seed:?}")))?;
            synthetic_extractor(seed, preset.taps())
        }
        None => load_extractor(source, preset),
    }
}

/// Convenience: [`FeatureExtractor::extract`].
pub fn extract(ex: &FeatureExtractor, img: &Image) -> FeaturePyramid {
    ex.extract(img)
}

fn preprocess(img: &Image) -> Vec<f32> {
    let plane = img.width() * img.height();
    let mut x = vec![0.0; 3 * plane];
    for (p, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            x[c * plane + p] = (px[c] - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    x
}

/// `(in·9) × (H·W)` patch matrix for a 3×3, pad-1 convolution.
fn im2col(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut col = vec![0.0; c * 9 * plane];
    for ch in 0..c {
        let src = &x[ch * plane..(ch + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ch * 9) + ky * 3 + kx) * plane..][..plane];
                let x_lo = 1usize.saturating_sub(kx);
                let x_hi = (w + 1 - kx).min(w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let sy = sy - 1;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let dst = &mut row[y * w + x_lo..y * w + x_hi];
                    let s0 = sy * w + x_lo + kx - 1;
                    dst.copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

fn col2im(col: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut x = vec![0.0; c * plane];
    for ch in 0..c {
        let dst = &mut x[ch * plane..(ch + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ch * 9) + ky * 3 + kx) * plane..][..plane];
                let x_lo = 1usize.saturating_sub(kx);
                let x_hi = (w + 1 - kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let sy = sy - 1;
                    let s0 = sy * w + x_lo + kx - 1;
                    let src = &row[y * w + x_lo..y * w + x_hi];
                    dst[s0..s0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, s)| *d += s);
                }
            }
        }
    }
    x
}

fn conv_forward(conv: &Conv, x: &[f32], h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let col = im2col(x, conv.in_channels, h, w);
    let mut out = vec![0.0; conv.out_channels * plane];
    for (o, row) in out.chunks_exact_mut(plane).enumerate() {
        row.fill(conv.bias[o]);
    }
    matmul(
        View::new(&conv.weight, conv.out_channels, conv.in_channels * 9),
        View::new(&col, conv.in_channels * 9, plane),
        1.0,
        &mut out,
    );
    out
}

fn conv_backward_input(conv: &Conv, grad_out: &[f32], h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let k = conv.in_channels * 9;
    let mut dcol = vec![0.0; k * plane];
    matmul(
        View::new(&conv.weight, conv.out_channels, k).t(),
        View::new(grad_out, conv.out_channels, plane),
        0.0,
        &mut dcol,
    );
    col2im(&dcol, conv.in_channels, h, w)
}

/// 2×2 stride-2 max pool (odd trailing rows/columns dropped). Ties go to the first
/// maximum in raster order.
fn max_pool(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>, usize, usize) {
    let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
    let plane = h * w;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let src = &x[ch * plane..(ch + 1) * plane];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = u32::MAX;
                let mut best_v = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                        if y >= h || xx >= w {
                            continue;
                        }
                        let idx = y * w + xx;
                        if best == u32::MAX || src[idx] > best_v {
                            best = idx as u32;
                            best_v = src[idx];
                        }
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
    }
    (out, argmax, oh, ow)
}

/// Tensors for a randomly initialised VGG-19 (He-normal weights, small biases).
///
/// Useful for tests and offline runs where no pretrained checkpoint is available.
pub fn synthetic_vgg19_tensors(seed: u64) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bias_dist = Uniform::new_inclusive(-0.05f32, 0.05);
    let mut out = Vec::with_capacity(32);
    for (name, cin, cout) in VGG19_CONVS {
        let std = (2.0 / (cin * 9) as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("positive std");
        let weight: Vec<f32> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
        let bias: Vec<f32> = (0..cout).map(|_| bias_dist.sample(&mut rng)).collect();
        out.push((format!("{name}.weight"), vec![cout, cin, 3, 3], weight));
        out.push((format!("{name}.bias"), vec![cout], bias));
    }
    out
}

/// Serialises tensors into a safetensors byte buffer.
pub fn write_safetensors(tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<Vec<u8>> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(n, s, d)| (n.clone(), s.clone(), d.iter().flat_map(|v| v.to_le_bytes()).collect()))
        .collect();
    let views = raw
        .iter()
        .map(|(n, s, b)| {
            TensorView::new(Dtype::F32, s.clone(), b)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Encode(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata: Option<HashMap<String, String>> = None;
    safetensors::tensor::serialize(views, &metadata).map_err(|e| Error::Encode(e.to_string()))
}

/// Synthetic extractor straight from a seed.
pub fn synthetic_extractor(seed: u64, taps: TapSet) -> Result<FeatureExtractor> {
    FeatureExtractor::from_bytes(&write_safetensors(&synthetic_vgg19_tensors(seed))?, taps)
}

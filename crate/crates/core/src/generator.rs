//! Coordinate MLP `D(Z′, E; ω)` with a DeepSDF-style input skip.
//!
//! Layers are numbered from 1. Every layer but the last is followed by ReLU;
//! the last maps to RGB through a sigmoid. The skip layer sees `[h, x]`,
//! the previous hidden activation followed by the network input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coords::{encoding_dim, EncodedCoords, DEFAULT_FREQUENCIES};
use crate::error::{Error, Result};
use crate::latent::{LatentGrid, LATENT_DIM};
use crate::linalg::{matmul, View};
use crate::tensors::{self, NamedTensor};

pub const OUTPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub latent_dim: usize,
    pub n_freqs: usize,
    pub hidden_width: usize,
    pub layers: usize,
    /// 1-based layer whose input is re-concatenated with the network input.
    pub skip_at: Option<usize>,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        Self {
            latent_dim: LATENT_DIM,
            n_freqs: DEFAULT_FREQUENCIES,
            hidden_width: 256,
            layers: 9,
            skip_at: Some(5),
        }
    }
}

impl GeneratorArch {
    pub fn with_width(hidden_width: usize) -> Self {
        Self {
            hidden_width,
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + encoding_dim(self.n_freqs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim != LATENT_DIM {
            return Err(Error::config("arch.latent_dim", format!("must be {LATENT_DIM}")));
        }
        if self.n_freqs == 0 || self.n_freqs > 30 {
            return Err(Error::config("arch.n_freqs", "must be in 1..=30"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("arch.hidden_width", "must be positive"));
        }
        if self.layers < 2 {
            return Err(Error::config("arch.layers", "need at least 2 layers"));
        }
        if let Some(k) = self.skip_at {
            if k < 2 || k > self.layers {
                return Err(Error::config("arch.skip_at", "must name a layer in 2..=layers"));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of 1-based layer `k`.
    pub fn layer_dims(&self, k: usize) -> (usize, usize) {
        let fan_in = if k == 1 {
            self.input_dim()
        } else if Some(k) == self.skip_at {
            self.hidden_width + self.input_dim()
        } else {
            self.hidden_width
        };
        let fan_out = if k == self.layers {
            OUTPUT_CHANNELS
        } else {
            self.hidden_width
        };
        (fan_in, fan_out)
    }

    /// Widest row any layer consumes or produces.
    fn max_width(&self) -> usize {
        (1..=self.layers)
            .map(|k| {
                let (i, o) = self.layer_dims(k);
                i.max(o)
            })
            .max()
            .unwrap_or(0)
    }
}

/// One fully connected layer, `weight` stored `out × in` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    arch: GeneratorArch,
    seed: u64,
    layers: Vec<Dense>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases.
pub fn init_params(arch: &GeneratorArch, seed: u64) -> Result<GeneratorParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (1..=arch.layers)
        .map(|k| {
            let (fan_in, fan_out) = arch.layer_dims(k);
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            Dense {
                weight: (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect(),
                bias: vec![0.0; fan_out],
                fan_in,
                fan_out,
            }
        })
        .collect();
    Ok(GeneratorParams {
        arch: arch.clone(),
        seed,
        layers,
    })
}

/// Activations retained by [`GeneratorParams::forward_cached`] for backpropagation.
pub struct ForwardCache {
    rows: usize,
    /// Input matrix of each layer.
    inputs: Vec<Vec<f32>>,
    /// Sigmoid outputs, `rows × 3`.
    pub output: Vec<f32>,
}

impl GeneratorParams {
    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Packs `[z ‖ e]` rows into the network input matrix.
    pub fn pack_input(&self, z: &LatentGrid, e: &EncodedCoords) -> Result<Vec<f32>> {
        if z.rows() != e.rows() {
            return Err(Error::Shape(format!(
                "latent grid has {} rows, encoding has {}",
                z.rows(),
                e.rows()
            )));
        }
        if e.dim() != encoding_dim(self.arch.n_freqs) {
            return Err(Error::Shape(format!(
                "encoding width {} does not match arch ({} frequencies)",
                e.dim(),
                self.arch.n_freqs
            )));
        }
        let width = self.arch.input_dim();
        let mut input = Vec::with_capacity(z.rows() * width);
        for r in 0..z.rows() {
            input.extend_from_slice(z.row(r));
            input.extend(e.row(r).iter().map(|&v| v as f32));
        }
        Ok(input)
    }

    /// RGB for every row, `rows × 3`, values in `(0, 1)`.
    pub fn forward(&self, z: &LatentGrid, e: &EncodedCoords) -> Result<Vec<f32>> {
        let input = self.pack_input(z, e)?;
        let mut out = vec![0.0; z.rows() * OUTPUT_CHANNELS];
        Evaluator::new(self, z.rows()).run(self, &input, &mut out);
        Ok(out)
    }

    /// Forward pass keeping every layer input.
    pub fn forward_cached(&self, input: &[f32], rows: usize) -> ForwardCache {
        let in_dim = self.arch.input_dim();
        assert_eq!(input.len(), rows * in_dim);
        let mut inputs: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let k = idx + 1;
            if Some(k) == self.arch.skip_at {
                current = concat_columns(&current, layer.fan_in - in_dim, input, in_dim, rows);
            }
            let mut out = vec![0.0; rows * layer.fan_out];
            dense_forward(layer, &current, rows, &mut out);
            if k == self.arch.layers {
                out.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut current, out));
        }
        ForwardCache {
            rows,
            inputs,
            output: current,
        }
    }

    /// Gradients of a scalar loss given `∂L/∂output` (`rows × 3`).
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f32]) -> Vec<Dense> {
        let rows = cache.rows;
        assert_eq!(grad_output.len(), rows * OUTPUT_CHANNELS);
        let mut grad: Vec<f32> = grad_output
            .iter()
            .zip(&cache.output)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        let mut grads = Vec::with_capacity(self.layers.len());
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input = &cache.inputs[idx];
            let mut dw = vec![0.0; layer.weight.len()];
            matmul(
                View::new(&grad, rows, layer.fan_out).t(),
                View::new(input, rows, layer.fan_in),
                0.0,
                &mut dw,
            );
            let mut db = vec![0.0f32; layer.fan_out];
            for row in grad.chunks_exact(layer.fan_out) {
                db.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
            grads.push(Dense {
                weight: dw,
                bias: db,
                fan_in: layer.fan_in,
                fan_out: layer.fan_out,
            });
            if idx == 0 {
                break;
            }
            // Only the hidden-activation columns of the input receive gradient.
            let hidden = self.layers[idx - 1].fan_out;
            let mut dh = vec![0.0; rows * hidden];
            matmul(
                View::new(&grad, rows, layer.fan_out),
                View::strided(&layer.weight, layer.fan_out, hidden, layer.fan_in, 1),
                0.0,
                &mut dh,
            );
            for r in 0..rows {
                let act = &input[r * layer.fan_in..r * layer.fan_in + hidden];
                let d = &mut dh[r * hidden..(r + 1) * hidden];
                d.iter_mut().zip(act).for_each(|(g, a)| {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grad = dh;
        }
        grads.reverse();
        grads
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("layer{}.weight", idx + 1),
                shape: vec![layer.fan_out, layer.fan_in],
                data: layer.weight.clone(),
            });
            out.push(NamedTensor {
                name: format!("layer{}.bias", idx + 1),
                shape: vec![layer.fan_out],
                data: layer.bias.clone(),
            });
        }
        out
    }

    /// Rebuilds parameters from tensor blocks, checking every shape against `arch`.
    pub fn from_tensors(arch: GeneratorArch, seed: u64, tensors: Vec<NamedTensor>) -> Result<Self> {
        arch.validate().map_err(|e| Error::Shape(e.to_string()))?;
        if tensors.len() != 2 * arch.layers {
            return Err(Error::Shape(format!(
                "arch declares {} layers ({} tensors) but {} tensor blocks are present",
                arch.layers,
                2 * arch.layers,
                tensors.len()
            )));
        }
        let mut blocks = tensors.into_iter();
        let mut layers = Vec::with_capacity(arch.layers);
        for k in 1..=arch.layers {
            let (fan_in, fan_out) = arch.layer_dims(k);
            let mut next = |suffix: &str, shape: Vec<usize>| -> Result<Vec<f32>> {
                let t = blocks.next().expect("block count checked above");
                let name = format!("layer{k}.{suffix}");
                if t.name != name {
                    return Err(Error::Shape(format!("expected tensor {name}, found {}", t.name)));
                }
                if t.shape != shape {
                    return Err(Error::Shape(format!(
                        "tensor {name} has shape {:?}, arch requires {:?}",
                        t.shape, shape
                    )));
                }
                if t.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format(format!("tensor {name} holds non-finite values")));
                }
                Ok(t.data)
            };
            let weight = next("weight", vec![fan_out, fan_in])?;
            let bias = next("bias", vec![fan_out])?;
            layers.push(Dense {
                weight,
                bias,
                fan_in,
                fan_out,
            });
        }
        Ok(Self { arch, seed, layers })
    }
}

const PARAMS_MAGIC: &[u8; 4] = b"INRG";
const PARAMS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    arch: GeneratorArch,
    seed: u64,
}

/// `"INRG" · version u32 · header_len u32 · header JSON · tensor blocks`.
pub fn serialize(params: &GeneratorParams) -> Vec<u8> {
    let header = serde_json::to_vec(&ParamsHeader {
        arch: params.arch.clone(),
        seed: params.seed,
    })
    .expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    tensors::write_blocks(&mut out, &params.to_tensors());
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<GeneratorParams> {
    let mut reader = tensors::Reader::new(bytes);
    if reader.take(4, "magic")? != PARAMS_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = reader.u32("version")?;
    if version != PARAMS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = reader.u32("header length")? as usize;
    let header: ParamsHeader = serde_json::from_slice(reader.take(len, "header")?)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let blocks = tensors::read_blocks(&mut reader)?;
    if reader.remaining() != 0 {
        return Err(Error::Format("trailing bytes after tensor blocks".into()));
    }
    GeneratorParams::from_tensors(header.arch, header.seed, blocks)
}

fn dense_forward(layer: &Dense, input: &[f32], rows: usize, out: &mut [f32]) {
    for row in out.chunks_exact_mut(layer.fan_out) {
        row.copy_from_slice(&layer.bias);
    }
    matmul(
        View::new(input, rows, layer.fan_in),
        View::new(&layer.weight, layer.fan_out, layer.fan_in).t(),
        1.0,
        out,
    );
}

fn concat_columns(a: &[f32], a_cols: usize, b: &[f32], b_cols: usize, rows: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * (a_cols + b_cols));
    for r in 0..rows {
        out.extend_from_slice(&a[r * a_cols..(r + 1) * a_cols]);
        out.extend_from_slice(&b[r * b_cols..(r + 1) * b_cols]);
    }
    out
}

/// Inference-only evaluator with buffers sized for at most `max_rows` rows, reusable
/// across chunks so that memory stays bounded by the chunk size.
pub struct Evaluator {
    max_rows: usize,
    a: Vec<f32>,
    b: Vec<f32>,
}

impl Evaluator {
    pub fn new(params: &GeneratorParams, max_rows: usize) -> Self {
        let width = params.arch.max_width();
        Self {
            max_rows,
            a: vec![0.0; max_rows * width],
            b: vec![0.0; max_rows * width],
        }
    }

    /// Evaluates `input` (`rows × input_dim`) into `out` (`rows × 3`).
    pub fn run(&mut self, params: &GeneratorParams, input: &[f32], out: &mut [f32]) {
        let in_dim = params.arch.input_dim();
        let rows = input.len() / in_dim;
        assert!(rows <= self.max_rows, "chunk larger than evaluator capacity");
        assert_eq!(out.len(), rows * OUTPUT_CHANNELS);
        let (mut cur, mut next) = (&mut self.a, &mut self.b);
        cur[..input.len()].copy_from_slice(input);
        let mut cur_cols = in_dim;
        for (idx, layer) in params.layers.iter().enumerate() {
            let k = idx + 1;
            if Some(k) == params.arch.skip_at {
                // [h, x] assembled in `next`, then swapped in.
                for r in 0..rows {
                    let dst = &mut next[r * layer.fan_in..(r + 1) * layer.fan_in];
                    dst[..cur_cols].copy_from_slice(&cur[r * cur_cols..(r + 1) * cur_cols]);
                    dst[cur_cols..].copy_from_slice(&input[r * in_dim..(r + 1) * in_dim]);
                }
                std::mem::swap(&mut cur, &mut next);
            }
            let dst = &mut next[..rows * layer.fan_out];
            dense_forward(layer, &cur[..rows * layer.fan_in], rows, dst);
            if k == params.arch.layers {
                dst.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                dst.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
            cur_cols = layer.fan_out;
        }
        out.copy_from_slice(&cur[..rows * OUTPUT_CHANNELS]);
    }
}

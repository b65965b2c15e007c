//! Fixed content/style latents, their interpolation, and per-pixel alpha fields.

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};

/// Latent dimensionality.
pub const LATENT_DIM: usize = 16;

pub type Latent = [f32; LATENT_DIM];

/// Content and style latents. Drawn once per session and never trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub content: Latent,
    pub style: Latent,
    pub seed: u64,
}

/// Draws both latents i.i.d. from N(0, 1); content first, then style.
pub fn init_latents(seed: u64) -> LatentPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Latent { std::array::from_fn(|_| StandardNormal.sample(&mut rng)) };
    let content = draw();
    let style = draw();
    LatentPair {
        content,
        style,
        seed,
    }
}

fn check_unit(what: &str, alpha: f32) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::range(what, f64::from(alpha)))
    }
}

impl LatentPair {
    /// `α·z_c + (1 − α)·z_s`.
    pub fn interpolate(&self, alpha: f32) -> Result<Latent> {
        check_unit("alpha", alpha)?;
        Ok(self.mix(alpha))
    }

    pub(crate) fn mix(&self, alpha: f32) -> Latent {
        std::array::from_fn(|k| alpha * self.content[k] + (1.0 - alpha) * self.style[k])
    }

    pub fn is_finite(&self) -> bool {
        self.content.iter().chain(&self.style).all(|v| v.is_finite())
    }
}

pub fn interpolate(pair: &LatentPair, alpha: f32) -> Result<Latent> {
    pair.interpolate(alpha)
}

/// Per-pixel interpolation rates, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaField {
    height: usize,
    width: usize,
    alpha: Vec<f32>,
}

impl AlphaField {
    pub fn new(height: usize, width: usize, alpha: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Size("alpha field must be at least 1x1".into()));
        }
        if alpha.len() != height * width {
            return Err(Error::Shape(format!(
                "alpha field {height}x{width} given {} values",
                alpha.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::range("alpha", f64::from(*a)));
        }
        Ok(Self {
            height,
            width,
            alpha,
        })
    }

    pub fn uniform(height: usize, width: usize, alpha: f32) -> Result<Self> {
        Self::new(height, width, vec![alpha; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.alpha
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.alpha[i * self.width + j]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// A mask painted with one alpha value. Mask pixels `≥ 0.5` are inside.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub mask: GrayImage,
    pub alpha: f32,
}

/// User-level description of an alpha field, independent of output resolution.
#[derive(Clone, Debug, PartialEq)]
pub enum AlphaSpec {
    Uniform(f32),
    /// Grayscale map, value = alpha.
    Map(GrayImage),
    /// Painter's order over `default`; later regions overwrite earlier ones.
    Regions { regions: Vec<Region>, default: f32 },
    /// Linear ramp from `from` at the first column (row) to `to` at the last.
    Gradient { axis: Axis, from: f32, to: f32 },
}

const MASK_THRESHOLD: f32 = 0.5;

fn ramp(from: f32, to: f32, index: usize, len: usize) -> f32 {
    let t = if len == 1 {
        0.0
    } else {
        index as f64 / (len - 1) as f64
    };
    (f64::from(from) + (f64::from(to) - f64::from(from)) * t).clamp(0.0, 1.0) as f32
}

impl AlphaSpec {
    /// Range-checks every alpha value the spec carries.
    pub fn validate(&self) -> Result<()> {
        match self {
            AlphaSpec::Uniform(a) => check_unit("alpha", *a),
            AlphaSpec::Map(_) => Ok(()),
            AlphaSpec::Regions { regions, default } => {
                check_unit("default alpha", *default)?;
                regions
                    .iter()
                    .enumerate()
                    .try_for_each(|(k, r)| check_unit(&format!("region {k} alpha"), r.alpha))
            }
            AlphaSpec::Gradient { from, to, .. } => {
                check_unit("gradient from", *from)?;
                check_unit("gradient to", *to)
            }
        }
    }

    /// Alpha at pixel `(i, j)` of an `h × w` output. Maps and masks are bilinearly
    /// resampled on the fly, matching [`imaging::resize_gray`] exactly.
    pub fn alpha_at(&self, h: usize, w: usize, i: usize, j: usize) -> f32 {
        match self {
            AlphaSpec::Uniform(a) => *a,
            AlphaSpec::Map(map) => map.sample_resized(w, h, j, i),
            AlphaSpec::Regions { regions, default } => regions
                .iter()
                .rev()
                .find(|r| r.mask.sample_resized(w, h, j, i) >= MASK_THRESHOLD)
                .map_or(*default, |r| r.alpha),
            AlphaSpec::Gradient { axis, from, to } => match axis {
                Axis::X => ramp(*from, *to, j, w),
                Axis::Y => ramp(*from, *to, i, h),
            },
        }
    }
}

/// Rasterises `spec` at `h × w`.
pub fn compile_alpha(spec: &AlphaSpec, h: usize, w: usize) -> Result<AlphaField> {
    spec.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::Size("alpha field must be at least 1x1".into()));
    }
    let mut alpha = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            alpha.push(spec.alpha_at(h, w, i, j));
        }
    }
    AlphaField::new(h, w, alpha)
}

/// Per-pixel latents `Z′(α)`, `rows × LATENT_DIM`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    rows: usize,
    data: Vec<f32>,
}

impl LatentGrid {
    /// Every row equal to `z`.
    pub fn repeat(z: &Latent, rows: usize) -> Self {
        let mut data = Vec::with_capacity(rows * LATENT_DIM);
        for _ in 0..rows {
            data.extend_from_slice(z);
        }
        Self { rows, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * LATENT_DIM..(r + 1) * LATENT_DIM]
    }
}

pub fn expand(pair: &LatentPair, field: &AlphaField) -> LatentGrid {
    let mut data = Vec::with_capacity(field.values().len() * LATENT_DIM);
    for &a in field.values() {
        data.extend_from_slice(&pair.mix(a));
    }
    LatentGrid {
        rows: field.values().len(),
        data,
    }
}

/// JSON form of [`AlphaSpec`]; images travel as base64-encoded PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum AlphaSpecJson {
    Uniform {
        alpha: f32,
    },
    Map {
        png: String,
    },
    Regions {
        regions: Vec<RegionJson>,
        #[serde(default = "default_region_alpha")]
        default: f32,
    },
    Gradient {
        axis: Axis,
        from: f32,
        to: f32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionJson {
    pub mask: String,
    pub alpha: f32,
}

fn default_region_alpha() -> f32 {
    1.0
}

fn decode_png_b64(field: &str, text: &str) -> Result<GrayImage> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| Error::Format(format!("{field}: invalid base64: {e}")))?;
    imaging::decode_gray(&bytes)
}

fn encode_png_b64(img: &GrayImage) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(imaging::encode_gray(img)?))
}

impl AlphaSpecJson {
    /// Decodes embedded images. Alpha ranges are left for [`AlphaSpec::validate`].
    pub fn into_spec(self) -> Result<AlphaSpec> {
        Ok(match self {
            AlphaSpecJson::Uniform { alpha } => AlphaSpec::Uniform(alpha),
            AlphaSpecJson::Map { png } => AlphaSpec::Map(decode_png_b64("map", &png)?),
            AlphaSpecJson::Regions { regions, default } => AlphaSpec::Regions {
                regions: regions
                    .into_iter()
                    .map(|r| {
                        Ok(Region {
                            mask: decode_png_b64("mask", &r.mask)?,
                            alpha: r.alpha,
                        })
                    })
                    .collect::<Result<_>>()?,
                default,
            },
            AlphaSpecJson::Gradient { axis, from, to } => AlphaSpec::Gradient { axis, from, to },
        })
    }

    pub fn from_spec(spec: &AlphaSpec) -> Result<Self> {
        Ok(match spec {
            AlphaSpec::Uniform(alpha) => AlphaSpecJson::Uniform { alpha: *alpha },
            AlphaSpec::Map(map) => AlphaSpecJson::Map {
                png: encode_png_b64(map)?,
            },
            AlphaSpec::Regions { regions, default } => AlphaSpecJson::Regions {
                regions: regions
                    .iter()
                    .map(|r| {
                        Ok(RegionJson {
                            mask: encode_png_b64(&r.mask)?,
                            alpha: r.alpha,
                        })
                    })
                    .collect::<Result<_>>()?,
                default: *default,
            },
            AlphaSpec::Gradient { axis, from, to } => AlphaSpecJson::Gradient {
                axis: *axis,
                from: *from,
                to: *to,
            },
        })
    }
}

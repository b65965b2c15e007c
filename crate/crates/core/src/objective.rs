//! Content loss, gram style loss, loss reweighting and the total objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perceptual::{gram, FeatureMap, FeaturePyramid, GramMatrix, TapSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightMode {
    Linear,
    Polynomial,
    #[default]
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub content_weight: f64,
    pub style_weight: f64,
    pub kappa: f64,
    pub reweight: ReweightMode,
    pub poly_exponent: f64,
    /// Floor applied to `1 − x^κ` before the logarithm.
    pub log_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            content_weight: 1.0,
            style_weight: 1e5,
            kappa: 2.0,
            reweight: ReweightMode::Exponential,
            poly_exponent: 2.0,
            log_clamp: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be > 0, got {v}")))
            }
        };
        positive("loss.content_weight", self.content_weight)?;
        positive("loss.style_weight", self.style_weight)?;
        positive("loss.poly_exponent", self.poly_exponent)?;
        if !(self.kappa.is_finite() && self.kappa >= 1.0) {
            return Err(Error::config("loss.kappa", format!("must be >= 1, got {}", self.kappa)));
        }
        if !(self.log_clamp > 0.0 && self.log_clamp < 1.0) {
            return Err(Error::config(
                "loss.log_clamp",
                format!("must lie in (0, 1), got {}", self.log_clamp),
            ));
        }
        Ok(())
    }
}

/// Loss weight for interpolation rate `x`.
///
/// Exponential mode is `−x·ln(max(1 − x^κ, ε))`; linear is `x`; polynomial is `x^q`.
pub fn reweight(x: f64, cfg: &LossConfig) -> f64 {
    match cfg.reweight {
        ReweightMode::Linear => x,
        ReweightMode::Polynomial => x.powf(cfg.poly_exponent),
        ReweightMode::Exponential => {
            if x == 0.0 {
                0.0
            } else {
                -x * (1.0 - x.powf(cfg.kappa)).max(cfg.log_clamp).ln()
            }
        }
    }
}

/// One evaluation of the total objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub alpha: f64,
    pub content: f64,
    pub style: f64,
    pub content_factor: f64,
    pub style_factor: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.content, self.style, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `√(mean((a − b)²))` and optionally its gradient with respect to `a`.
fn rms_distance(a: &[f32], b: &[f32], grad: Option<&mut Vec<f32>>, scale: f64) -> f64 {
    let n = a.len() as f64;
    let sum_sq: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum();
    let value = (sum_sq / n).sqrt();
    if let Some(g) = grad {
        g.clear();
        if value > 0.0 {
            let k = scale / (n * value);
            g.extend(a.iter().zip(b).map(|(x, y)| ((f64::from(*x) - f64::from(*y)) * k) as f32));
        } else {
            g.resize(a.len(), 0.0);
        }
    }
    value
}

fn frobenius_distance(a: &GramMatrix, b: &GramMatrix) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `‖G(F) − T‖_F` and, when requested, `scale · ∂/∂F`.
fn gram_term(feat: &FeatureMap, target: &GramMatrix, grad: Option<(&mut Vec<f32>, f64)>) -> f64 {
    let g = gram(feat);
    let value = frobenius_distance(&g, target);
    if let Some((out, scale)) = grad {
        let c = feat.channels;
        let hw = feat.height * feat.width;
        out.clear();
        out.resize(c * hw, 0.0);
        if value > 0.0 {
            // ∂‖G − T‖/∂F = 2·D·F / (C·H·W) with D = (G − T)/‖G − T‖ symmetric.
            let k = (2.0 * scale / (value * (c * hw) as f64)) as f32;
            let d: Vec<f32> = g
                .data
                .iter()
                .zip(&target.data)
                .map(|(x, y)| (x - y) * k)
                .collect();
            crate::linalg::matmul(
                crate::linalg::View::new(&d, c, c),
                crate::linalg::View::new(&feat.data, c, hw),
                0.0,
                out,
            );
        }
    }
    value
}

fn check_taps(a: &TapSet, b: &TapSet) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "pyramids use different taps: {:?} vs {:?}",
            a.style, b.style
        )));
    }
    Ok(())
}

fn check_map(tap: &str, a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "tap {tap}: {}x{}x{} vs {}x{}x{}",
            a.channels, a.height, a.width, b.channels, b.height, b.width
        )));
    }
    Ok(())
}

/// `λ_cont · RMS(Φ_content(gen) − F_c)`.
pub fn content_loss(gen: &FeaturePyramid, content: &FeaturePyramid, cfg: &LossConfig) -> Result<f64> {
    check_taps(gen.taps(), content.taps())?;
    check_map(&gen.taps().content, gen.content(), content.content())?;
    Ok(cfg.content_weight * rms_distance(&gen.content().data, &content.content().data, None, 1.0))
}

/// `λ_style · Σₙ ‖G(Φⁿ(gen)) − G(Φⁿ(style))‖_F` over the style taps.
pub fn style_loss(gen: &FeaturePyramid, style: &FeaturePyramid, cfg: &LossConfig) -> Result<f64> {
    Ok(cfg.style_weight * gram_distance_between(gen, style)?)
}

/// `Σₙ ‖G(Φⁿ(a)) − G(Φⁿ(b))‖_F` with unit weight.
pub fn gram_distance_between(a: &FeaturePyramid, b: &FeaturePyramid) -> Result<f64> {
    check_taps(a.taps(), b.taps())?;
    let mut total = 0.0;
    for ((tap, fa), (_, fb)) in a.style_maps().zip(b.style_maps()) {
        if fa.channels != fb.channels {
            return Err(Error::Shape(format!(
                "tap {tap}: {} vs {} channels",
                fa.channels, fb.channels
            )));
        }
        total += frobenius_distance(&gram(fa), &gram(fb));
    }
    Ok(total)
}

fn combine(alpha: f64, content: f64, style: f64, cfg: &LossConfig) -> LossReport {
    let content_factor = reweight(alpha, cfg);
    let style_factor = reweight(1.0 - alpha, cfg);
    LossReport {
        alpha,
        content,
        style,
        content_factor,
        style_factor,
        total: content_factor * content + style_factor * style,
    }
}

/// `f(α)·L_cont + f(1 − α)·L_style`.
pub fn total_loss(
    alpha: f64,
    gen: &FeaturePyramid,
    content: &FeaturePyramid,
    style: &FeaturePyramid,
    cfg: &LossConfig,
) -> Result<LossReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::range("alpha", alpha));
    }
    let c = content_loss(gen, content, cfg)?;
    let s = style_loss(gen, style, cfg)?;
    Ok(combine(alpha, c, s, cfg))
}

/// Precomputed targets for repeated evaluation during training.
pub struct Objective {
    taps: TapSet,
    content_target: FeatureMap,
    style_grams: Vec<GramMatrix>,
    cfg: LossConfig,
}

impl Objective {
    pub fn new(content: &FeaturePyramid, style: &FeaturePyramid, cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        check_taps(content.taps(), style.taps())?;
        Ok(Self {
            taps: content.taps().clone(),
            content_target: content.content().clone(),
            style_grams: style.style_maps().map(|(_, m)| gram(m)).collect(),
            cfg,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    /// Loss report plus `∂L_total/∂Φ` at every tap that receives gradient.
    pub fn evaluate(&self, alpha: f64, gen: &FeaturePyramid) -> Result<(LossReport, Vec<(String, Vec<f32>)>)> {
        check_taps(&self.taps, gen.taps())?;
        let content_factor = reweight(alpha, &self.cfg);
        let style_factor = reweight(1.0 - alpha, &self.cfg);
        let mut grads: Vec<(String, Vec<f32>)> = Vec::new();

        let mut g = Vec::new();
        let gen_content = gen.content();
        check_map(&self.taps.content, gen_content, &self.content_target)?;
        let content = self.cfg.content_weight
            * rms_distance(
                &gen_content.data,
                &self.content_target.data,
                Some(&mut g),
                content_factor * self.cfg.content_weight,
            );
        grads.push((self.taps.content.clone(), g));

        let mut style_raw = 0.0;
        for ((tap, map), target) in gen.style_maps().zip(&self.style_grams) {
            if map.channels != target.channels {
                return Err(Error::Shape(format!("tap {tap}: channel mismatch")));
            }
            let mut g = Vec::new();
            style_raw += gram_term(map, target, Some((&mut g, style_factor * self.cfg.style_weight)));
            match grads.iter_mut().find(|(n, _)| n == tap) {
                Some((_, acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => grads.push((tap.to_string(), g)),
            }
        }
        let style = self.cfg.style_weight * style_raw;
        Ok((
            LossReport {
                alpha,
                content,
                style,
                content_factor,
                style_factor,
                total: content_factor * content + style_factor * style,
            },
            grads,
        ))
    }
}

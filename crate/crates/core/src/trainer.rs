//! Test-time training of the generator on one content/style pair.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coords::{encode, make_grid, EncodedCoords};
use crate::error::{Error, Result};
use crate::generator::{init_params, Dense, GeneratorArch, GeneratorParams};
use crate::imaging::{resize, Image};
use crate::latent::{init_latents, LatentGrid, LatentPair};
use crate::objective::{LossConfig, LossReport, Objective};
use crate::perceptual::{FeatureExtractor, LayerPreset, TapSet};
use crate::renderer::{render_params, RenderRequest};

/// Session format version written into archives.
pub const SESSION_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaSampling {
    Uniform,
    Fixed { alpha: f64 },
    /// `Exp(rate)` truncated to `[0, 1]` and renormalised.
    Exponential { rate: f64 },
}

impl Default for AlphaSampling {
    fn default() -> Self {
        AlphaSampling::Uniform
    }
}

pub fn sample_alpha(mode: &AlphaSampling, rng: &mut impl Rng) -> f64 {
    match *mode {
        AlphaSampling::Uniform => rng.gen::<f64>(),
        AlphaSampling::Fixed { alpha } => alpha,
        AlphaSampling::Exponential { rate } => {
            // Inverse CDF of the truncated density rate·e^(−rate·x) / (1 − e^(−rate)).
            let u = rng.gen::<f64>();
            let x = -(u * (-rate).exp_m1()).ln_1p() / rate;
            x.clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub latent: u64,
    pub params: u64,
    pub alpha: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            latent: 0,
            params: 1,
            alpha: 2,
        }
    }
}

impl Seeds {
    /// Three consecutive seeds derived from one base value.
    pub fn from_base(base: u64) -> Self {
        Self {
            latent: base,
            params: base.wrapping_add(1),
            alpha: base.wrapping_add(2),
        }
    }
}

/// How inputs are brought to the square training grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fit {
    #[default]
    Stretch,
    /// Centre-crop to a square before resizing.
    Crop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Side of the square training grid.
    pub size: usize,
    pub fit: Fit,
    pub alpha_sampling: AlphaSampling,
    pub loss: LossConfig,
    pub preset: LayerPreset,
    pub hidden_width: usize,
    pub seeds: Seeds,
    /// Preview renders every this many iterations; 0 disables them.
    pub snapshot_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            size: 256,
            fit: Fit::Stretch,
            alpha_sampling: AlphaSampling::Uniform,
            loss: LossConfig::default(),
            preset: LayerPreset::ShallowRelu,
            hidden_width: 256,
            seeds: Seeds::default(),
            snapshot_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            ));
        }
        if self.size < 16 {
            return Err(Error::config("size", format!("must be >= 16, got {}", self.size)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) {
            return Err(Error::config("adam.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("adam.beta2", "must lie in [0, 1)"));
        }
        if !(a.epsilon > 0.0) {
            return Err(Error::config("adam.epsilon", "must be > 0"));
        }
        match self.alpha_sampling {
            AlphaSampling::Uniform => {}
            AlphaSampling::Fixed { alpha } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::config(
                        "alpha_sampling.alpha",
                        format!("{alpha} is outside [0, 1]"),
                    ));
                }
            }
            AlphaSampling::Exponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(Error::config("alpha_sampling.rate", "must be > 0"));
                }
            }
        }
        self.loss.validate()?;
        self.arch().validate()
    }

    pub fn arch(&self) -> GeneratorArch {
        GeneratorArch::with_width(self.hidden_width)
    }
}

/// One loss-history entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub content: f64,
    pub style: f64,
    pub total: f64,
    pub alpha: f64,
}

impl LossRecord {
    fn new(iteration: usize, r: &LossReport) -> Self {
        Self {
            iteration,
            content: r.content,
            style: r.style,
            total: r.total,
            alpha: r.alpha,
        }
    }
}

/// Writes the history as JSON lines.
pub fn write_loss_jsonl(history: &[LossRecord], mut out: impl Write) -> Result<()> {
    for r in history {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Encode(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Trained generator plus everything needed to render from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub params: GeneratorParams,
    pub latents: LatentPair,
    pub preset: LayerPreset,
    pub taps: TapSet,
    pub config: TrainConfig,
    /// `(height, width)` of the training grid.
    pub train_dims: (usize, usize),
    pub loss_history: Vec<LossRecord>,
    pub version: u32,
}

impl Session {
    pub fn arch(&self) -> &GeneratorArch {
        self.params.arch()
    }
}

/// Preview renders emitted during training.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub iteration: usize,
    pub previews: Vec<(f32, Image)>,
}

pub const PREVIEW_ALPHAS: [f32; 3] = [0.0, 0.5, 1.0];

pub trait TrainObserver {
    fn on_iteration(&mut self, _record: &LossRecord) {}
    fn on_snapshot(&mut self, _snapshot: &Snapshot) {}
}

impl TrainObserver for () {}

/// Adam with bias correction over every generator parameter.
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

fn zeros_like(layers: &[Dense]) -> Vec<Dense> {
    layers
        .iter()
        .map(|l| Dense {
            weight: vec![0.0; l.weight.len()],
            bias: vec![0.0; l.bias.len()],
            fan_in: l.fan_in,
            fan_out: l.fan_out,
        })
        .collect()
}

impl Adam {
    pub fn new(params: &GeneratorParams, lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            t: 0,
            m: zeros_like(params.layers()),
            v: zeros_like(params.layers()),
        }
    }

    pub fn step(&mut self, params: &mut GeneratorParams, grads: &[Dense]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let step = (self.lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t))) as f32;
        // ε is scaled to match `lr·m̂/(√v̂ + ε)` after folding the corrections into `step`.
        let eps = (self.cfg.epsilon * (1.0 - b2.powi(self.t)).sqrt()) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        let update = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in params
            .layers_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            update(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
    }
}

fn fit_image(img: &Image, cfg: &TrainConfig) -> Result<Image> {
    let src = match cfg.fit {
        Fit::Stretch => img.clone(),
        Fit::Crop => img.center_crop_square(),
    };
    resize(&src, cfg.size, cfg.size)
}

/// The loss `L_total(ω; α)` for a fixed pair, with targets precomputed once.
pub struct TrainingProblem<'a> {
    extractor: &'a FeatureExtractor,
    objective: Objective,
    latents: LatentPair,
    encoded: EncodedCoords,
    height: usize,
    width: usize,
}

impl<'a> TrainingProblem<'a> {
    /// `content` and `style` are used at their given size; both must match.
    pub fn new(
        content: &Image,
        style: &Image,
        extractor: &'a FeatureExtractor,
        loss: LossConfig,
        latents: LatentPair,
        n_freqs: usize,
    ) -> Result<Self> {
        if (content.width(), content.height()) != (style.width(), style.height()) {
            return Err(Error::Shape("content and style sizes differ".into()));
        }
        let objective = Objective::new(&extractor.extract(content), &extractor.extract(style), loss)?;
        let (height, width) = (content.height(), content.width());
        Ok(Self {
            extractor,
            objective,
            latents,
            encoded: encode(&make_grid(height, width), n_freqs),
            height,
            width,
        })
    }

    fn input(&self, params: &GeneratorParams, alpha: f64) -> Result<Vec<f32>> {
        let z = LatentGrid::repeat(&self.latents.mix(alpha as f32), self.encoded.rows());
        params.pack_input(&z, &self.encoded)
    }

    pub fn loss(&self, params: &GeneratorParams, alpha: f64) -> Result<LossReport> {
        let z = LatentGrid::repeat(&self.latents.mix(alpha as f32), self.encoded.rows());
        let rgb = params.forward(&z, &self.encoded)?;
        let img = Image::from_raw_unchecked(self.width, self.height, rgb);
        Ok(self.objective.evaluate(alpha, &self.extractor.extract(&img))?.0)
    }

    pub fn loss_and_grad(&self, params: &GeneratorParams, alpha: f64) -> Result<(LossReport, Vec<Dense>)> {
        let input = self.input(params, alpha)?;
        let cache = params.forward_cached(&input, self.encoded.rows());
        drop(input);
        let img = Image::from_raw_unchecked(self.width, self.height, cache.output.clone());
        let (pyramid, tape) = self.extractor.extract_with_tape(&img);
        drop(img);
        let (report, tap_grads) = self.objective.evaluate(alpha, &pyramid)?;
        drop(pyramid);
        let image_grad = self.extractor.backward(tape, &tap_grads);
        Ok((report, params.backward(&cache, &image_grad)))
    }
}

pub fn train(content: &Image, style: &Image, cfg: &TrainConfig, extractor: &FeatureExtractor) -> Result<Session> {
    train_with_observer(content, style, cfg, extractor, &mut ())
}

pub fn train_with_observer(
    content: &Image,
    style: &Image,
    cfg: &TrainConfig,
    extractor: &FeatureExtractor,
    observer: &mut dyn TrainObserver,
) -> Result<Session> {
    cfg.validate()?;
    let taps = cfg.preset.taps();
    if extractor.taps() != &taps {
        return Err(Error::config(
            "preset",
            format!("extractor taps {:?} do not match preset {:?}", extractor.taps().style, cfg.preset),
        ));
    }
    let content = fit_image(content, cfg)?;
    let style = fit_image(style, cfg)?;
    let arch = cfg.arch();
    let latents = init_latents(cfg.seeds.latent);
    let mut params = init_params(&arch, cfg.seeds.params)?;
    let problem = TrainingProblem::new(&content, &style, extractor, cfg.loss.clone(), latents.clone(), arch.n_freqs)?;
    drop((content, style));

    let mut alpha_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.alpha);
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.adam);
    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let alpha = sample_alpha(&cfg.alpha_sampling, &mut alpha_rng);
        let (report, grads) = problem.loss_and_grad(&params, alpha)?;
        let grads_finite = grads
            .iter()
            .all(|g| g.weight.iter().chain(&g.bias).all(|v| v.is_finite()));
        if !report.is_finite() || !grads_finite {
            return Err(Error::NonFinite {
                iteration,
                report: serde_json::to_string(&report).unwrap_or_default(),
            });
        }
        adam.step(&mut params, &grads);
        let record = LossRecord::new(iteration, &report);
        observer.on_iteration(&record);
        history.push(record);

        let done = iteration + 1;
        if cfg.snapshot_interval > 0 && (done % cfg.snapshot_interval == 0 || done == cfg.iterations) {
            let previews = PREVIEW_ALPHAS
                .iter()
                .map(|&a| {
                    render_params(&params, &latents, &RenderRequest::uniform(cfg.size, cfg.size, a))
                        .map(|img| (a, img))
                })
                .collect::<Result<Vec<_>>>()?;
            observer.on_snapshot(&Snapshot {
                iteration: done,
                previews,
            });
        }
    }
    Ok(Session {
        params,
        latents,
        preset: cfg.preset,
        taps,
        config: cfg.clone(),
        train_dims: (cfg.size, cfg.size),
        loss_history: history,
        version: SESSION_VERSION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perceptual::synthetic_extractor;

    #[test]
    fn fixed_sampling_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_alpha(&AlphaSampling::Fixed { alpha: 0.7 }, &mut rng), 0.7);
        }
    }

    #[test]
    fn uniform_sampling_mean_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..10_000).map(|_| sample_alpha(&AlphaSampling::Uniform, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
        let mut again = ChaCha8Rng::seed_from_u64(5);
        assert!(draws.iter().all(|&d| d == sample_alpha(&AlphaSampling::Uniform, &mut again)));
    }

    #[test]
    fn truncated_exponential_matches_its_mean() {
        let rate = 3.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 50_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_alpha(&AlphaSampling::Exponential { rate }, &mut rng))
            .collect();
        assert!(draws.iter().all(|d| (0.0..=1.0).contains(d)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        // E[X] for Exp(λ) truncated to [0, 1]: 1/λ − e^(−λ)/(1 − e^(−λ)).
        let expected = 1.0 / rate - (-rate).exp() / (1.0 - (-rate).exp());
        assert!((mean - expected).abs() < 0.005, "{mean} vs {expected}");
    }

    #[test]
    fn validation_names_fields() {
        let field = |cfg: TrainConfig| match cfg.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(
            field(TrainConfig {
                iterations: 0,
                ..TrainConfig::default()
            }),
            "iterations"
        );
        assert_eq!(
            field(TrainConfig {
                size: 8,
                ..TrainConfig::default()
            }),
            "size"
        );
        let mut cfg = TrainConfig::default();
        cfg.loss.kappa = -1.0;
        assert_eq!(field(cfg), "loss.kappa");
    }

    #[test]
    fn config_json_defaults() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!((cfg.size, cfg.iterations), (256, 5000));
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"alpha_sampling":{"mode":"fixed","alpha":0.3}}"#).unwrap();
        assert_eq!(cfg.alpha_sampling, AlphaSampling::Fixed { alpha: 0.3 });
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus":1}"#).is_err());
    }

    fn small_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            size: 32,
            hidden_width: 32,
            learning_rate: 2e-3,
            ..TrainConfig::default()
        }
    }

    fn pair() -> (Image, Image) {
        let content = Image::from_fn(32, 32, |x, y| {
            let v = if (x / 8 + y / 8) % 2 == 0 { 0.9 } else { 0.1 };
            [v, v, v]
        })
        .unwrap();
        let style = Image::from_fn(32, 32, |x, y| {
            let t = ((x as f32 * 0.7).sin() * (y as f32 * 0.5).cos() + 1.0) / 2.0;
            [t, 0.3, 1.0 - t]
        })
        .unwrap();
        (content, style)
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ex = synthetic_extractor(3, LayerPreset::ShallowRelu.taps()).unwrap();
        let (c, s) = pair();
        let cfg = TrainConfig {
            alpha_sampling: AlphaSampling::Fixed { alpha: 0.5 },
            ..small_cfg(60)
        };
        let a = train(&c, &s, &cfg, &ex).unwrap();
        assert_eq!(a.loss_history.len(), 60);
        assert!(a.loss_history.iter().all(|r| r.total.is_finite()));
        let first = a.loss_history[0].total;
        let last = a.loss_history.last().unwrap().total;
        assert!(last < first, "{first} -> {last}");
        let b = train(&c, &s, &cfg, &ex).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn tap_mismatch_is_a_config_error() {
        let ex = synthetic_extractor(3, LayerPreset::DeepRelu.taps()).unwrap();
        let (c, s) = pair();
        match train(&c, &s, &small_cfg(1), &ex) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "preset"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snapshots_and_jsonl() {
        struct Collect(Vec<usize>, usize);
        impl TrainObserver for Collect {
            fn on_iteration(&mut self, _: &LossRecord) {
                self.1 += 1;
            }
            fn on_snapshot(&mut self, s: &Snapshot) {
                assert_eq!(s.previews.len(), 3);
                self.0.push(s.iteration);
            }
        }
        let ex = synthetic_extractor(3, LayerPreset::ShallowRelu.taps()).unwrap();
        let (c, s) = pair();
        let cfg = TrainConfig {
            snapshot_interval: 2,
            ..small_cfg(5)
        };
        let mut obs = Collect(Vec::new(), 0);
        let sess = train_with_observer(&c, &s, &cfg, &ex, &mut obs).unwrap();
        assert_eq!(obs.0, vec![2, 4, 5]);
        assert_eq!(obs.1, 5);
        let mut buf = Vec::new();
        write_loss_jsonl(&sess.loss_history, &mut buf).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().lines().collect();
        assert_eq!(lines.len(), 5);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        for key in ["iteration", "content", "style", "total", "alpha"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_iteration() {
        let ex = synthetic_extractor(3, LayerPreset::ShallowRelu.taps()).unwrap();
        let (c, s) = pair();
        let mut cfg = small_cfg(5);
        cfg.loss.style_weight = 1e308;
        match train(&c, &s, &cfg, &ex) {
            Err(Error::NonFinite { iteration, report }) => {
                assert_eq!(iteration, 0);
                assert!(report.contains("style"));
            }
            other => panic!("{other:?}"),
        }
    }
}

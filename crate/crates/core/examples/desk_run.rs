//! Trains one fixture pair at desk scale and prints an α sweep.
//!
//! `cargo run --release -p inrst-core --example desk_run -- content.png style.png [vgg.safetensors]`
//! Without a weight file a seeded random VGG-19 is used. `ITERS`, `SIZE`, `WIDTH`,
//! `REWEIGHT` (exponential | linear) and `STYLE_WEIGHT` override the defaults.

use std::time::Instant;

use inrst_core::evaluation::disentanglement_sweep;
use inrst_core::imaging::decode;
use inrst_core::objective::ReweightMode;
use inrst_core::perceptual::{load_extractor, synthetic_extractor, LayerPreset};
use inrst_core::trainer::{train_with_observer, AlphaSampling, LossRecord, TrainConfig, TrainObserver};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

struct Log(Instant, usize);

impl TrainObserver for Log {
    fn on_iteration(&mut self, r: &LossRecord) {
        if r.iteration % self.1 == 0 {
            println!(
                "{:6} {:8.1}s alpha {:.3} content {:.4} style {:.4} total {:.4}",
                r.iteration,
                self.0.elapsed().as_secs_f64(),
                r.alpha,
                r.content,
                r.style,
                r.total
            );
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let content = decode(&std::fs::read(&args[0])?)?;
    let style = decode(&std::fs::read(&args[1])?)?;
    let preset = LayerPreset::ShallowRelu;
    let extractor = match args.get(2) {
        Some(path) => load_extractor(path, preset)?,
        None => synthetic_extractor(env("VGG_SEED", 0), preset.taps())?,
    };
    let mut cfg = TrainConfig {
        iterations: env("ITERS", 1500),
        size: env("SIZE", 128),
        hidden_width: env("WIDTH", 64),
        ..TrainConfig::default()
    };
    cfg.loss.style_weight = env("STYLE_WEIGHT", cfg.loss.style_weight);
    cfg.learning_rate = env("LR", cfg.learning_rate);
    if let Some(alpha) = std::env::var("ALPHA").ok().and_then(|v| v.parse().ok()) {
        cfg.alpha_sampling = AlphaSampling::Fixed { alpha };
    }
    if std::env::var("REWEIGHT").as_deref() == Ok("linear") {
        cfg.loss.reweight = ReweightMode::Linear;
    }
    let every = (cfg.iterations / 20).max(1);
    let session = train_with_observer(&content, &style, &cfg, &extractor, &mut Log(Instant::now(), every))?;
    let report = disentanglement_sweep(&session, &content, &style, &[0.0, 0.25, 0.5, 0.75, 1.0], &extractor)?;
    for r in &report.sweep {
        println!(
            "alpha {:.2}  psnr {:6.2}  ssim {:.3}  gram {:.5}",
            r.alpha, r.psnr_content, r.ssim_content, r.gram_distance_style
        );
    }
    Ok(())
}

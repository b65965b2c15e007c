//! Image-quality metrics, the pixel-locality probe and the α sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize, GrayImage, Image};
use crate::latent::AlphaSpec;
use crate::objective::gram_distance_between;
use crate::perceptual::FeatureExtractor;
use crate::renderer::{render, RenderRequest};
use crate::trainer::Session;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Shape(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian filter over valid windows only.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            horiz[y * ow + x0] = (0..SSIM_WINDOW).map(|t| k[t] * x[y * w + x0 + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|t| k[t] * horiz[(y0 + t) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM on luma with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Size(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")));
    }
    let la: Vec<f64> = a.luma().into_iter().map(f64::from).collect();
    let lb: Vec<f64> = b.luma().into_iter().map(f64::from).collect();
    let k = gaussian_kernel();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&la, w, h, &k);
    let mu_b = filter_valid(&lb, w, h, &k);
    let aa = filter_valid(&prod(&la, &la), w, h, &k);
    let bb = filter_valid(&prod(&lb, &lb), w, h, &k);
    let ab = filter_valid(&prod(&la, &lb), w, h, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / n as f64)
}

/// `10·log10(1/MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Sum over the extractor's style taps of the Frobenius distance between grams.
pub fn gram_distance(a: &Image, b: &Image, extractor: &FeatureExtractor) -> Result<f64> {
    gram_distance_between(&extractor.extract(a), &extractor.extract(b))
}

/// Pixels at Chebyshev distance exactly `d` from `(i, j)`.
pub fn chebyshev_ring(i: usize, j: usize, d: usize) -> Vec<(usize, usize)> {
    let (i, j, d) = (i as isize, j as isize, d as isize);
    let mut ring = Vec::new();
    for y in i - d..=i + d {
        for x in j - d..=j + d {
            if (y - i).abs().max((x - j).abs()) == d && y >= 0 && x >= 0 {
                ring.push((y as usize, x as usize));
            }
        }
    }
    ring
}

/// Locality probe against any renderer.
///
/// For each target, renders α = 1 everywhere except α = 0 at the target and
/// returns the mean absolute RGB difference from the pure α = 1 render over the
/// ring at distance `d`, averaged over targets.
pub fn controllability_probe_with(
    mut render_fn: impl FnMut(&AlphaSpec) -> Result<Image>,
    height: usize,
    width: usize,
    targets: &[(usize, usize)],
    d: usize,
) -> Result<f64> {
    if d == 0 {
        return Err(Error::config("d", "ring distance must be >= 1"));
    }
    if targets.is_empty() {
        return Err(Error::config("targets", "at least one target is required"));
    }
    for &(i, j) in targets {
        if i < d || j < d || i + d >= height || j + d >= width {
            return Err(Error::Bounds(format!(
                "target ({i}, {j}) is within {d} pixels of the border of a {width}x{height} image"
            )));
        }
    }
    let reference = render_fn(&AlphaSpec::Uniform(1.0))?;
    let mut total = 0.0;
    for &(i, j) in targets {
        let mut alpha = GrayImage::filled(width, height, 1.0)?;
        alpha.set(j, i, 0.0);
        let flipped = render_fn(&AlphaSpec::Map(alpha))?;
        same_dims(&reference, &flipped)?;
        let ring = chebyshev_ring(i, j, d);
        let sum: f64 = ring
            .iter()
            .map(|&(y, x)| {
                let p = reference.pixel(x, y);
                let q = flipped.pixel(x, y);
                (0..3).map(|c| f64::from((p[c] - q[c]).abs())).sum::<f64>()
            })
            .sum();
        total += sum / (3 * ring.len()) as f64;
    }
    Ok(total / targets.len() as f64)
}

/// [`controllability_probe_with`] on the session's own renderer at training size.
pub fn controllability_probe(session: &Session, targets: &[(usize, usize)], d: usize) -> Result<f64> {
    let (h, w) = session.train_dims;
    controllability_probe_with(|spec| render(session, &RenderRequest::new(w, h, spec.clone())), h, w, targets, d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub alpha: f64,
    pub psnr_content: f64,
    pub ssim_content: f64,
    pub gram_distance_style: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepDelta {
    pub alpha_from: f64,
    pub alpha_to: f64,
    pub delta_psnr_content: f64,
    pub delta_gram_distance_style: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub d: usize,
    pub targets: Vec<(usize, usize)>,
    pub value: f64,
}

/// Metric values together with the parameters that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub width: usize,
    pub height: usize,
    pub taps: Vec<String>,
    pub sweep: Vec<SweepRecord>,
    pub deltas: Vec<SweepDelta>,
    #[serde(default)]
    pub probes: Vec<ProbeRecord>,
}

impl MetricReport {
    pub fn is_finite(&self) -> bool {
        self.sweep
            .iter()
            .all(|r| r.psnr_content.is_finite() && r.ssim_content.is_finite() && r.gram_distance_style.is_finite())
            && self
                .deltas
                .iter()
                .all(|d| d.delta_psnr_content.is_finite() && d.delta_gram_distance_style.is_finite())
            && self.probes.iter().all(|p| p.value.is_finite())
    }
}

/// Uniform-α renders at training size, compared against the resized inputs.
pub fn disentanglement_sweep(
    session: &Session,
    content: &Image,
    style: &Image,
    alphas: &[f64],
    extractor: &FeatureExtractor,
) -> Result<MetricReport> {
    let (h, w) = session.train_dims;
    let content = resize(content, w, h)?;
    let style = resize(style, w, h)?;
    let style_features = extractor.extract(&style);
    let mut sweep = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::range("alpha", alpha));
        }
        let img = render(session, &RenderRequest::uniform(w, h, alpha as f32))?;
        sweep.push(SweepRecord {
            alpha,
            psnr_content: psnr(&img, &content)?,
            ssim_content: ssim(&img, &content)?,
            gram_distance_style: gram_distance_between(&extractor.extract(&img), &style_features)?,
        });
    }
    let deltas = sweep
        .windows(2)
        .map(|p| SweepDelta {
            alpha_from: p[0].alpha,
            alpha_to: p[1].alpha,
            delta_psnr_content: p[1].psnr_content - p[0].psnr_content,
            delta_gram_distance_style: p[1].gram_distance_style - p[0].gram_distance_style,
        })
        .collect();
    Ok(MetricReport {
        width: w,
        height: h,
        taps: extractor.taps().style.clone(),
        sweep,
        deltas,
        probes: Vec::new(),
    })
}

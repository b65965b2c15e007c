//! Chunked inference at any output size and per-pixel α.
//!
//! Pixels are evaluated `chunk_rows` at a time in row-major order, so transient
//! memory depends on the chunk size only. α is resolved per pixel from the spec
//! without materialising a full field.

use crate::coords::{encode_point, encoding_dim, make_grid};
use crate::error::{Error, Result};
use crate::generator::{Evaluator, GeneratorParams, OUTPUT_CHANNELS};
use crate::imaging::Image;
use crate::latent::{AlphaSpec, Axis, LatentPair, LATENT_DIM};
use crate::trainer::Session;

pub const DEFAULT_CHUNK_ROWS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderRequest {
    pub width: usize,
    pub height: usize,
    pub alpha: AlphaSpec,
    /// Pixels per generator batch.
    pub chunk_rows: usize,
}

impl RenderRequest {
    pub fn new(width: usize, height: usize, alpha: AlphaSpec) -> Self {
        Self {
            width,
            height,
            alpha,
            chunk_rows: DEFAULT_CHUNK_ROWS,
        }
    }

    pub fn uniform(width: usize, height: usize, alpha: f32) -> Self {
        Self::new(width, height, AlphaSpec::Uniform(alpha))
    }

    pub fn with_chunk_rows(mut self, chunk_rows: usize) -> Self {
        self.chunk_rows = chunk_rows;
        self
    }

    /// Number of output floats, after checking the request.
    fn validate(&self) -> Result<usize> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Size(format!(
                "output must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if self.chunk_rows == 0 {
            return Err(Error::Size("chunk_rows must be >= 1".into()));
        }
        self.alpha.validate()?;
        self.width
            .checked_mul(self.height)
            .and_then(|n| n.checked_mul(OUTPUT_CHANNELS))
            .filter(|&n| n <= isize::MAX as usize / std::mem::size_of::<f32>())
            .ok_or_else(|| Error::Size(format!("{}x{} output overflows", self.width, self.height)))
    }
}

/// Evaluates every pixel, handing each finished chunk (`start pixel`, RGB) to `sink`.
pub fn render_chunks(
    params: &GeneratorParams,
    latents: &LatentPair,
    req: &RenderRequest,
    mut sink: impl FnMut(usize, &[f32]) -> Result<()>,
) -> Result<()> {
    req.validate()?;
    let arch = params.arch();
    if arch.latent_dim != LATENT_DIM {
        return Err(Error::Shape("session latent width mismatch".into()));
    }
    let (h, w) = (req.height, req.width);
    let total = h * w;
    let chunk = req.chunk_rows.min(total);
    let grid = make_grid(h, w);
    let e_dim = encoding_dim(arch.n_freqs);
    let in_dim = arch.input_dim();
    let mut evaluator = Evaluator::new(params, chunk);
    let mut input = vec![0.0f32; chunk * in_dim];
    let mut enc = vec![0.0f64; e_dim];
    let mut out = vec![0.0f32; chunk * OUTPUT_CHANNELS];
    let mut start = 0;
    while start < total {
        let rows = chunk.min(total - start);
        for r in 0..rows {
            let p = start + r;
            let (i, j) = (p / w, p % w);
            let z = latents.mix(req.alpha.alpha_at(h, w, i, j));
            let row = &mut input[r * in_dim..(r + 1) * in_dim];
            row[..LATENT_DIM].copy_from_slice(&z);
            encode_point(grid.coord(i, j), arch.n_freqs, &mut enc);
            row[LATENT_DIM..].iter_mut().zip(&enc).for_each(|(d, &s)| *d = s as f32);
        }
        let dst = &mut out[..rows * OUTPUT_CHANNELS];
        evaluator.run(params, &input[..rows * in_dim], dst);
        sink(start, dst)?;
        start += rows;
    }
    Ok(())
}

/// Renders from bare parameters and latents.
pub fn render_params(params: &GeneratorParams, latents: &LatentPair, req: &RenderRequest) -> Result<Image> {
    let n = req.validate()?;
    let mut data = vec![0.0f32; n];
    render_chunks(params, latents, req, |start, rgb| {
        data[start * OUTPUT_CHANNELS..start * OUTPUT_CHANNELS + rgb.len()].copy_from_slice(rgb);
        Ok(())
    })?;
    Ok(Image::from_raw_unchecked(req.width, req.height, data))
}

pub fn render(session: &Session, req: &RenderRequest) -> Result<Image> {
    render_params(&session.params, &session.latents, req)
}

/// Renders row by row into `sink`, holding at most one output row at a time.
pub fn render_rows(
    session: &Session,
    req: &RenderRequest,
    mut sink: impl FnMut(&[f32]) -> Result<()>,
) -> Result<()> {
    req.validate()?;
    let row_len = req.width * OUTPUT_CHANNELS;
    let mut row = Vec::with_capacity(row_len);
    render_chunks(&session.params, &session.latents, req, |_, mut rgb| {
        while !rgb.is_empty() {
            let take = (row_len - row.len()).min(rgb.len());
            row.extend_from_slice(&rgb[..take]);
            rgb = &rgb[take..];
            if row.len() == row_len {
                sink(&row)?;
                row.clear();
            }
        }
        Ok(())
    })
}

/// α ramps from 0 to 1 along `axis`.
pub fn render_gradation(session: &Session, axis: Axis, height: usize, width: usize) -> Result<Image> {
    let spec = AlphaSpec::Gradient {
        axis,
        from: 0.0,
        to: 1.0,
    };
    render(session, &RenderRequest::new(width, height, spec))
}

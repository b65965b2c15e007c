//! Raster images: 8-bit file I/O, float `[0, 1]` storage, bilinear resampling.

use std::io::{Cursor, Write};

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Row-major single-channel image with values in `[0, 1]`. Used for alpha maps and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Output container formats. JPEG is accepted on input only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeFormat {
    Png,
}

fn check_values(data: &[f32]) -> Result<()> {
    match data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::range("channel value", f64::from(*v))),
        None => Ok(()),
    }
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        check_values(&data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Constant-colour image.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    /// Builds an image from a per-pixel closure `(x, y) -> rgb`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Wraps buffers produced internally (generator output) whose range is already guaranteed.
    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rec. 601 luma.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Largest centred square crop.
    pub fn center_crop_square(&self) -> Image {
        let side = self.width.min(self.height);
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        let mut data = Vec::with_capacity(side * side * 3);
        for y in y0..y0 + side {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + side * 3]);
        }
        Image::from_raw_unchecked(side, side, data)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} gray image needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        check_values(&data)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        assert!((0.0..=1.0).contains(&value), "gray value {value} outside [0, 1]");
        self.data[y * self.width + x] = value;
    }

    /// Bilinear sample of the value that pixel `(x, y)` would take after resizing to `w × h`.
    pub fn sample_resized(&self, w: usize, h: usize, x: usize, y: usize) -> f32 {
        if w == self.width && h == self.height {
            return self.get(x, y);
        }
        let tap = BilinearTap::new(self.width, self.height, w, h, x, y);
        tap.apply(&self.data, 1, 0)
    }
}

fn detect(bytes: &[u8]) -> Result<ImageFormat> {
    let format = image::guess_format(bytes).map_err(|e| Error::Decode {
        stage: "format detection",
        message: e.to_string(),
    })?;
    match format {
        ImageFormat::Png | ImageFormat::Jpeg => Ok(format),
        other => Err(Error::Decode {
            stage: "format detection",
            message: format!("unsupported format {other:?}; expected PNG or JPEG"),
        }),
    }
}

fn decode_dynamic(bytes: &[u8]) -> Result<DynamicImage> {
    let format = detect(bytes)?;
    let stage = match format {
        ImageFormat::Png => "png decode",
        _ => "jpeg decode",
    };
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| Error::Decode {
        stage,
        message: e.to_string(),
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::EmptyImage);
    }
    Ok(img)
}

/// Decodes a PNG or JPEG into float RGB (`v / 255`). Alpha is discarded, gray is replicated.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    let rgb = decode_dynamic(bytes)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Ok(Image::from_raw_unchecked(w, h, data))
}

/// Decodes a PNG or JPEG as 8-bit luma (`v / 255`).
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    let luma = decode_dynamic(bytes)?.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data = luma.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Ok(GrayImage {
        width: w,
        height: h,
        data,
    })
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn encode_png(width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(Cursor::new(&mut out), width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Encode(e.to_string()))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(out)
}

/// Encodes to 8-bit bytes, `round(v · 255)` per channel.
pub fn encode(img: &Image, format: EncodeFormat) -> Result<Vec<u8>> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::EmptyImage);
    }
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    match format {
        EncodeFormat::Png => encode_png(img.width, img.height, png::ColorType::Rgb, &bytes),
    }
}

pub fn encode_gray(img: &GrayImage) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    encode_png(img.width, img.height, png::ColorType::Grayscale, &bytes)
}

/// Source taps for one destination pixel of a half-pixel-centre bilinear resize.
struct BilinearTap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f32,
    fy: f32,
    src_width: usize,
}

fn axis_tap(src: usize, dst: usize, i: usize) -> (usize, usize, f32) {
    let scale = src as f64 / dst as f64;
    let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, (pos - i0 as f64) as f32)
}

impl BilinearTap {
    fn new(sw: usize, sh: usize, dw: usize, dh: usize, x: usize, y: usize) -> Self {
        let (x0, x1, fx) = axis_tap(sw, dw, x);
        let (y0, y1, fy) = axis_tap(sh, dh, y);
        Self {
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
            src_width: sw,
        }
    }

    fn apply(&self, data: &[f32], channels: usize, c: usize) -> f32 {
        let at = |x: usize, y: usize| data[(y * self.src_width + x) * channels + c];
        let top = at(self.x0, self.y0) * (1.0 - self.fx) + at(self.x1, self.y0) * self.fx;
        let bottom = at(self.x0, self.y1) * (1.0 - self.fx) + at(self.x1, self.y1) * self.fx;
        // Convex weights keep the result inside the source range up to rounding.
        (top * (1.0 - self.fy) + bottom * self.fy).clamp(0.0, 1.0)
    }
}

fn resample(data: &[f32], channels: usize, sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(dw * dh * channels);
    for y in 0..dh {
        for x in 0..dw {
            let tap = BilinearTap::new(sw, sh, dw, dh, x, y);
            for c in 0..channels {
                out.push(tap.apply(data, channels, c));
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centres. Same-size requests return an exact copy.
pub fn resize(img: &Image, w: usize, h: usize) -> Result<Image> {
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    if w == img.width && h == img.height {
        return Ok(img.clone());
    }
    let data = resample(&img.data, 3, img.width, img.height, w, h);
    Ok(Image::from_raw_unchecked(w, h, data))
}

pub fn resize_gray(img: &GrayImage, w: usize, h: usize) -> Result<GrayImage> {
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    if w == img.width && h == img.height {
        return Ok(img.clone());
    }
    let data = resample(&img.data, 1, img.width, img.height, w, h);
    Ok(GrayImage {
        width: w,
        height: h,
        data,
    })
}

/// Writes an 8-bit RGB PNG one image row at a time.
pub struct PngRowWriter<W: Write + 'static> {
    writer: png::StreamWriter<'static, W>,
    width: usize,
    rows_left: usize,
    scratch: Vec<u8>,
}

impl<W: Write + 'static> PngRowWriter<W> {
    pub fn new(sink: W, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let mut encoder = png::Encoder::new(sink, width as u32, height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let writer = encoder
            .write_header()
            .and_then(|w| w.into_stream_writer())
            .map_err(|e| Error::Encode(e.to_string()))?;
        Ok(Self {
            writer,
            width,
            rows_left: height,
            scratch: Vec::with_capacity(width * 3),
        })
    }

    /// Appends a row of `width · 3` float channels.
    pub fn write_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.width * 3 {
            return Err(Error::Shape(format!(
                "row has {} values, expected {}",
                row.len(),
                self.width * 3
            )));
        }
        if self.rows_left == 0 {
            return Err(Error::Shape("more rows than the declared height".into()));
        }
        self.scratch.clear();
        self.scratch.extend(row.iter().map(|&v| quantize(v)));
        self.writer.write_all(&self.scratch)?;
        self.rows_left -= 1;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.rows_left != 0 {
            return Err(Error::Shape(format!("{} rows missing", self.rows_left)));
        }
        self.writer
            .finish()
            .map_err(|e| Error::Encode(e.to_string()))
    }
}

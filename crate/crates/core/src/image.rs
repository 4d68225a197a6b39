//! Planar 8-bit images, floating-point planes and binary PGM/PPM I/O.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// An 8-bit raster with one (gray) or three (RGB) planes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    planes: Vec<Vec<u8>>,
}

impl PlanarImage {
    pub fn new(width: usize, height: usize, planes: Vec<Vec<u8>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::InvalidParameter(format!("images have 1 or 3 channels, got {}", planes.len())));
        }
        if let Some(p) = planes.iter().find(|p| p.len() != width * height) {
            return Err(Error::DimensionMismatch(format!(
                "plane holds {} samples, expected {}",
                p.len(),
                width * height
            )));
        }
        Ok(Self { width, height, planes })
    }

    /// A constant image.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![vec![value; width * height]; channels])
    }

    /// Build from interleaved samples (`RGBRGB...` for three channels).
    pub fn from_interleaved(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} interleaved samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        let planes = (0..channels).map(|c| data.iter().skip(c).step_by(channels).copied().collect()).collect();
        Self::new(width, height, planes)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[Vec<u8>] {
        &self.planes
    }

    pub fn pixel(&self, c: usize, x: usize, y: usize) -> u8 {
        self.planes[c][y * self.width + x]
    }

    pub fn same_geometry(&self, other: &PlanarImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels() == other.channels()
    }

    pub fn interleaved(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let ch = self.channels();
        let mut out = Vec::with_capacity(n * ch);
        for i in 0..n {
            for p in &self.planes {
                out.push(p[i]);
            }
        }
        out
    }

    /// One channel as a floating-point plane.
    pub fn channel_plane(&self, c: usize) -> FloatPlane {
        FloatPlane {
            width: self.width,
            height: self.height,
            values: self.planes[c].iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Round and clamp float planes back to 8 bits.
    pub fn from_float_planes(planes: &[FloatPlane]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::InvalidParameter("no planes".into()))?;
        let (w, h) = (first.width, first.height);
        let mut out = Vec::with_capacity(planes.len());
        for p in planes {
            if p.width != w || p.height != h {
                return Err(Error::DimensionMismatch("planes differ in size".into()));
            }
            out.push(p.values.iter().map(|&v| clamp_u8(v)).collect());
        }
        Self::new(w, h, out)
    }
}

/// Round half away from zero and clamp to `[0, 255]`.
pub fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// A single plane of finite floating-point samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatPlane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FloatPlane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!("plane dimensions must be positive, got {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} values for a {width}x{height} plane", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("plane holds non-finite values".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be positive");
        Self { width, height, values: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be positive");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    pub fn same_size(&self, other: &FloatPlane) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Luma plane: identity for gray images, BT.601 weights for RGB.
pub fn to_luma(img: &PlanarImage) -> FloatPlane {
    if img.channels() == 1 {
        return img.channel_plane(0);
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let values = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)).clamp(0.0, 255.0))
        .collect();
    FloatPlane { width: img.width, height: img.height, values }
}

/// Decode a binary PGM (P5) or PPM (P6) file held in memory.
pub fn decode_pnm(data: &[u8]) -> Result<PlanarImage> {
    let mut pos = 0usize;
    let magic = next_token(data, &mut pos)?;
    let channels = match magic.1.as_slice() {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::Parse { offset: magic.0, msg: "expected P5 or P6 magic".into() }),
    };
    let width = parse_header_number(data, &mut pos, "width")?;
    let height = parse_header_number(data, &mut pos, "height")?;
    let (maxval_off, maxval) = {
        let tok = next_token(data, &mut pos)?;
        (tok.0, parse_decimal(&tok.1, tok.0, "maxval")?)
    };
    if maxval != 255 {
        return Err(Error::Parse { offset: maxval_off, msg: format!("unsupported maxval {maxval}") });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse { offset: maxval_off, msg: "zero image dimension".into() });
    }
    // exactly one whitespace byte separates the header from the payload
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Parse { offset: pos, msg: "missing whitespace after maxval".into() }),
    }
    let need = width * height * channels;
    let payload = &data[pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: data.len(),
            msg: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    PlanarImage::from_interleaved(width, height, channels, &payload[..need])
}

/// Encode as P5 (gray) or P6 (RGB) with a minimal header.
pub fn encode_pnm(img: &PlanarImage) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&img.interleaved());
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pnm(img))?;
    Ok(())
}

fn skip_space_and_comments(data: &[u8], pos: &mut usize) {
    while *pos < data.len() {
        let b = data[*pos];
        if b == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
}

fn next_token(data: &[u8], pos: &mut usize) -> Result<(usize, Vec<u8>)> {
    skip_space_and_comments(data, pos);
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse { offset: start, msg: "truncated header".into() });
    }
    Ok((start, data[start..*pos].to_vec()))
}

fn parse_decimal(tok: &[u8], offset: usize, what: &str) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse { offset, msg: format!("malformed {what}") })
}

fn parse_header_number(data: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let (off, tok) = next_token(data, pos)?;
    parse_decimal(&tok, off, what)
}

/// Mean squared error over every sample of every channel.
pub fn mse(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width,
            a.height,
            a.channels(),
            b.width,
            b.height,
            b.channels()
        )));
    }
    let mut sum = 0u64;
    for (pa, pb) in a.planes.iter().zip(&b.planes) {
        for (&x, &y) in pa.iter().zip(pb) {
            let d = u64::from(x.abs_diff(y));
            sum += d * d;
        }
    }
    Ok(sum as f64 / (a.width * a.height * a.channels()) as f64)
}

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP: f64 = 100.0;

/// `10 log10(255^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

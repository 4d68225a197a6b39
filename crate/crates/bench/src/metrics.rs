//! Image quality metrics.

use stereodc::image::PlanarImage;
pub use stereodc::image::{mse, psnr, psnr_from_mse, PSNR_CAP};

use crate::{BenchError, Result};

/// Per-scale exponents of the five-scale MS-SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Number of scales used for an image: five when the smaller side is at
/// least 176 pixels, otherwise as many as keep the coarsest scale no smaller
/// than the 11x11 window.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let side = width.min(height);
    let mut scales = MS_SSIM_WEIGHTS.len();
    while scales > 1 && side < WINDOW << (scales - 1) {
        scales -= 1;
    }
    scales
}

fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let c = (WINDOW as f64 - 1.0) / 2.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    /// Separable Gaussian filter keeping only fully covered positions.
    fn filter_valid(&self, taps: &[f64; WINDOW]) -> Plane {
        let (ow, oh) = (self.w + 1 - WINDOW, self.h + 1 - WINDOW);
        let mut horiz = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                horiz[y * ow + x] = taps.iter().zip(&row[x..x + WINDOW]).map(|(t, v)| t * v).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * horiz[(y + k) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, v: out }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { w: self.w, h: self.h, v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// 2x2 mean after replicating the last row/column of odd-sized planes.
    fn halve(&self) -> Plane {
        let (ow, oh) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let at = |x: usize, y: usize| self.v[y.min(self.h - 1) * self.w + x.min(self.w - 1)];
        let mut v = Vec::with_capacity(ow * oh);
        for y in 0..oh {
            for x in 0..ow {
                let (x2, y2) = (2 * x, 2 * y);
                v.push((at(x2, y2) + at(x2 + 1, y2) + at(x2, y2 + 1) + at(x2 + 1, y2 + 1)) / 4.0);
            }
        }
        Plane { w: ow, h: oh, v }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(a: &Plane, b: &Plane, taps: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = (K1 * 255.0).powi(2);
    let c2 = (K2 * 255.0).powi(2);
    let mu_a = a.filter_valid(taps);
    let mu_b = b.filter_valid(taps);
    let sq = a.map2(b, |x, y| x * x + y * y).filter_valid(taps);
    let cross = a.map2(b, |x, y| x * y).filter_valid(taps);
    let n = mu_a.v.len() as f64;
    let (mut ssim, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.v.len() {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let num0 = 2.0 * ma * mb;
        let den0 = ma * ma + mb * mb;
        let lum = (num0 + c1) / (den0 + c1);
        let cs = (2.0 * cross.v[i] - num0 + c2) / (sq.v[i] - den0 + c2);
        ssim += lum * cs;
        cs_sum += cs;
    }
    (ssim / n, cs_sum / n)
}

/// Multi-scale SSIM, computed per channel and averaged over channels. Images
/// smaller than 176 pixels on a side use fewer scales with the leading
/// weights renormalized (see [`ms_ssim_scales`]).
pub fn ms_ssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(BenchError::Codec(stereodc::Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        ))));
    }
    if a.width().min(a.height()) < WINDOW {
        return Err(BenchError::InvalidInput(format!(
            "MS-SSIM needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let scales = ms_ssim_scales(a.width(), a.height());
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let taps = gaussian_taps();
    let mut acc = 0.0;
    for c in 0..a.channels() {
        let to_plane = |img: &PlanarImage| Plane {
            w: img.width(),
            h: img.height(),
            v: img.plane(c).iter().map(|&v| f64::from(v)).collect(),
        };
        let (mut pa, mut pb) = (to_plane(a), to_plane(b));
        let mut product = 1.0;
        for s in 0..scales {
            if s > 0 {
                pa = pa.halve();
                pb = pb.halve();
            }
            let (ssim, cs) = ssim_terms(&pa, &pb, &taps);
            let term = if s + 1 == scales { ssim } else { cs };
            product *= term.max(0.0).powf(MS_SSIM_WEIGHTS[s] / total);
        }
        acc += product;
    }
    Ok(acc / a.channels() as f64)
}

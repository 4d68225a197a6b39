//! 8x8 orthonormal DCT-II on edge-replicated planes and uniform scalar
//! quantization.

use std::sync::OnceLock;

use crate::image::FloatPlane;
use crate::{Error, Result};

pub const BLOCK: usize = 8;
pub const BAND_COUNT: usize = BLOCK * BLOCK;

/// Zig-zag scan: `ZIGZAG[band]` is the natural (row-major) index of that band.
pub const ZIGZAG: [usize; BAND_COUNT] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54,
    47, 55, 62, 63,
];

/// `basis()[k][n]` is the k-th orthonormal DCT-II basis vector at sample n.
fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (k, row) in m.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = scale * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / (2 * BLOCK) as f64).cos();
            }
        }
        m
    })
}

/// Transform coefficients stored block by block in raster block order, each
/// block in natural row-major `(v, u)` layout. The plane remembers the size it
/// was padded from.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffPlane {
    width: usize,
    height: usize,
    orig_width: usize,
    orig_height: usize,
    values: Vec<f64>,
}

impl CoeffPlane {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn orig_size(&self) -> (usize, usize) {
        (self.orig_width, self.orig_height)
    }

    pub fn blocks_x(&self) -> usize {
        self.width / BLOCK
    }

    pub fn blocks_y(&self) -> usize {
        self.height / BLOCK
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block(&self, bx: usize, by: usize) -> &[f64] {
        let i = (by * self.blocks_x() + bx) * BAND_COUNT;
        &self.values[i..i + BAND_COUNT]
    }

    /// Coefficient of zig-zag band `band` in block `(bx, by)`.
    #[inline]
    pub fn band(&self, bx: usize, by: usize, band: usize) -> f64 {
        self.block(bx, by)[ZIGZAG[band]]
    }
}

/// Integer quantization indices with the geometry of a [`CoeffPlane`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantPlane {
    width: usize,
    height: usize,
    orig_width: usize,
    orig_height: usize,
    values: Vec<i32>,
}

impl QuantPlane {
    /// Zero indices for a plane of the given original size.
    pub fn zeros(orig_width: usize, orig_height: usize) -> Self {
        let (width, height) = (padded(orig_width), padded(orig_height));
        Self { width, height, orig_width, orig_height, values: vec![0; width * height] }
    }

    pub fn blocks_x(&self) -> usize {
        self.width / BLOCK
    }

    pub fn blocks_y(&self) -> usize {
        self.height / BLOCK
    }

    pub fn orig_size(&self) -> (usize, usize) {
        (self.orig_width, self.orig_height)
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    #[inline]
    fn index(&self, bx: usize, by: usize, band: usize) -> usize {
        (by * self.blocks_x() + bx) * BAND_COUNT + ZIGZAG[band]
    }

    #[inline]
    pub fn band(&self, bx: usize, by: usize, band: usize) -> i32 {
        self.values[self.index(bx, by, band)]
    }

    #[inline]
    pub fn set_band(&mut self, bx: usize, by: usize, band: usize, v: i32) {
        let i = self.index(bx, by, band);
        self.values[i] = v;
    }
}

fn padded(n: usize) -> usize {
    n.div_ceil(BLOCK) * BLOCK
}

pub fn forward_dct8(plane: &FloatPlane) -> CoeffPlane {
    let (ow, oh) = (plane.width(), plane.height());
    let (w, h) = (padded(ow), padded(oh));
    let (bw, bh) = (w / BLOCK, h / BLOCK);
    let c = basis();
    let mut values = vec![0.0; w * h];
    let mut block = [[0.0; BLOCK]; BLOCK];
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for by in 0..bh {
        for bx in 0..bw {
            for (j, row) in block.iter_mut().enumerate() {
                let y = (by * BLOCK + j).min(oh - 1);
                for (i, v) in row.iter_mut().enumerate() {
                    *v = plane.get((bx * BLOCK + i).min(ow - 1), y);
                }
            }
            // rows then columns
            for j in 0..BLOCK {
                for k in 0..BLOCK {
                    tmp[j][k] = (0..BLOCK).map(|n| c[k][n] * block[j][n]).sum();
                }
            }
            let out = &mut values[(by * bw + bx) * BAND_COUNT..][..BAND_COUNT];
            for v in 0..BLOCK {
                for u in 0..BLOCK {
                    out[v * BLOCK + u] = (0..BLOCK).map(|n| c[v][n] * tmp[n][u]).sum();
                }
            }
        }
    }
    CoeffPlane { width: w, height: h, orig_width: ow, orig_height: oh, values }
}

/// Exact inverse of [`forward_dct8`], cropped back to the original size.
pub fn inverse_dct8(coeffs: &CoeffPlane) -> FloatPlane {
    let (bw, bh) = (coeffs.blocks_x(), coeffs.blocks_y());
    let (ow, oh) = coeffs.orig_size();
    let c = basis();
    let mut out = FloatPlane::zeros(ow, oh);
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for by in 0..bh {
        for bx in 0..bw {
            let blk = coeffs.block(bx, by);
            // columns: tmp[n][u] = sum_v c[v][n] X[v][u]
            for n in 0..BLOCK {
                for u in 0..BLOCK {
                    tmp[n][u] = (0..BLOCK).map(|v| c[v][n] * blk[v * BLOCK + u]).sum();
                }
            }
            for j in 0..BLOCK {
                let y = by * BLOCK + j;
                if y >= oh {
                    break;
                }
                for i in 0..BLOCK {
                    let x = bx * BLOCK + i;
                    if x >= ow {
                        break;
                    }
                    let v: f64 = (0..BLOCK).map(|k| c[k][i] * tmp[j][k]).sum();
                    out.set(x, y, v);
                }
            }
        }
    }
    out
}

fn check_step(qp: f64) -> Result<()> {
    if qp.is_finite() && qp > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("quantization step must be > 0, got {qp}")))
    }
}

/// `round(value / qp)` with ties away from zero.
pub fn quantize_value(value: f64, qp: f64) -> i32 {
    (value / qp).round().clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32
}

pub fn quantize(coeffs: &CoeffPlane, qp: f64) -> Result<QuantPlane> {
    check_step(qp)?;
    let mut values = Vec::with_capacity(coeffs.values.len());
    for &v in &coeffs.values {
        let q = (v / qp).round();
        if q < f64::from(i32::MIN) || q > f64::from(i32::MAX) {
            return Err(Error::InvalidParameter(format!("coefficient {v} with step {qp} overflows 32-bit indices")));
        }
        values.push(q as i32);
    }
    Ok(QuantPlane {
        width: coeffs.width,
        height: coeffs.height,
        orig_width: coeffs.orig_width,
        orig_height: coeffs.orig_height,
        values,
    })
}

pub fn dequantize(q: &QuantPlane, qp: f64) -> CoeffPlane {
    CoeffPlane {
        width: q.width,
        height: q.height,
        orig_width: q.orig_width,
        orig_height: q.orig_height,
        values: q.values.iter().map(|&i| f64::from(i) * qp).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, seed: u64) -> FloatPlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FloatPlane::from_fn(w, h, |_, _| rng.gen_range(0.0..255.0))
    }

    #[test]
    fn zigzag_is_a_permutation() {
        let mut seen = [false; BAND_COUNT];
        for &i in &ZIGZAG {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert_eq!(ZIGZAG[..6], [0, 1, 8, 16, 9, 2]);
    }

    #[test]
    fn constant_block() {
        let p = FloatPlane::from_fn(8, 8, |_, _| 17.5);
        let c = forward_dct8(&p);
        assert!((c.values()[0] - 8.0 * 17.5).abs() < 1e-9);
        assert!(c.values()[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn impulse_gives_basis_column() {
        // X[v][u] = C[v][j] C[u][i] for an impulse at (i, j), from the cosine formula
        let (i, j) = (3, 5);
        let p = FloatPlane::from_fn(8, 8, |x, y| if (x, y) == (i, j) { 1.0 } else { 0.0 });
        let c = forward_dct8(&p);
        let alpha = |k: usize| if k == 0 { (0.125f64).sqrt() } else { 0.5 };
        let cosine = |k: usize, n: usize| alpha(k) * (((2 * n + 1) * k) as f64 * std::f64::consts::PI / 16.0).cos();
        for v in 0..8 {
            for u in 0..8 {
                let want = cosine(v, j) * cosine(u, i);
                assert!((c.values()[v * 8 + u] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_with_padding() {
        let p = random_plane(21, 13, 4);
        let c = forward_dct8(&p);
        assert_eq!((c.width(), c.height()), (24, 16));
        let back = inverse_dct8(&c);
        assert_eq!((back.width(), back.height()), (21, 13));
        for (a, b) in back.values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn quantizer_examples() {
        assert_eq!(quantize_value(10.6, 4.0), 3);
        assert_eq!(quantize_value(-2.0, 4.0), -1);
        assert_eq!(quantize_value(2.0, 4.0), 1);
        assert_eq!(quantize_value(0.0, 0.37), 0);
        let q =
            QuantPlane { width: 8, height: 8, orig_width: 8, orig_height: 8, values: [vec![3], vec![0; 63]].concat() };
        assert_eq!(dequantize(&q, 4.0).values()[0], 12.0);
        let c = forward_dct8(&FloatPlane::zeros(8, 8));
        assert!(quantize(&c, 0.0).is_err());
        assert!(quantize(&c, -1.0).is_err());
    }

    #[test]
    fn fine_step_is_near_lossless() {
        let p = random_plane(32, 24, 9);
        let qp = 0.01;
        let rec = inverse_dct8(&dequantize(&quantize(&forward_dct8(&p), qp).unwrap(), qp));
        let mse: f64 =
            rec.values().iter().zip(p.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.values().len() as f64;
        let psnr = 10.0 * (255.0f64 * 255.0 / mse).log10();
        assert!(psnr > 60.0, "psnr {psnr}");
    }

    proptest! {
        #[test]
        fn parseval_per_block(seed in any::<u64>(), w in 1usize..24, h in 1usize..24) {
            let p = random_plane(w, h, seed);
            let c = forward_dct8(&p);
            // compare against the edge-replicated block energy
            for by in 0..c.blocks_y() {
                for bx in 0..c.blocks_x() {
                    let mut e_pix = 0.0;
                    for j in 0..8 {
                        for i in 0..8 {
                            let v = p.get((bx * 8 + i).min(w - 1), (by * 8 + j).min(h - 1));
                            e_pix += v * v;
                        }
                    }
                    let e_coef: f64 = c.block(bx, by).iter().map(|v| v * v).sum();
                    prop_assert!((e_pix - e_coef).abs() <= 1e-9 * e_pix.max(1.0));
                }
            }
        }

        #[test]
        fn quantization_error_bounded(v in -5000.0f64..5000.0, qp in 0.01f64..100.0) {
            let r = f64::from(quantize_value(v, qp)) * qp;
            prop_assert!((r - v).abs() <= qp / 2.0 + 1e-9 * v.abs().max(1.0));
        }
    }
}

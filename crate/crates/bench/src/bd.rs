//! Bjontegaard delta rate and PSNR between two rate-distortion curves.
//!
//! Both directions fit a cubic polynomial by least squares (PSNR as a
//! function of log10 rate, and log10 rate as a function of PSNR), integrate
//! the two fits over the intersection of the curves' ranges and report the
//! mean difference. Nothing is extrapolated.

use stereodc::codec::RDPoint;

use crate::{BenchError, Result};

pub const MIN_POINTS: usize = 4;

/// Rate-distortion points sorted by strictly increasing rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RDCurve {
    points: Vec<RDPoint>,
}

impl RDCurve {
    /// Sorts by rate; rejects fewer than four points, repeated rates and
    /// non-finite or non-positive values.
    pub fn new(mut points: Vec<RDPoint>) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(BenchError::InvalidCurve(format!("{} points, need at least {MIN_POINTS}", points.len())));
        }
        if let Some(p) = points.iter().find(|p| !(p.bpp.is_finite() && p.bpp > 0.0 && p.psnr.is_finite())) {
            return Err(BenchError::InvalidCurve(format!("bad point bpp={} psnr={}", p.bpp, p.psnr)));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp == w[1].bpp) {
            return Err(BenchError::InvalidCurve("rates must be distinct".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }

    fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.bpp.log10()).collect()
    }

    fn psnrs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.psnr).collect()
    }
}

/// Cubic least-squares fit in a centred and scaled variable.
struct Cubic {
    centre: f64,
    scale: f64,
    coeffs: [f64; 4],
}

impl Cubic {
    fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len() as f64;
        let centre = xs.iter().sum::<f64>() / n;
        let spread = xs.iter().map(|x| (x - centre).abs()).fold(0.0, f64::max);
        if spread == 0.0 {
            return Err(BenchError::InvalidCurve("all abscissae are equal".into()));
        }
        // normal equations for 1, t, t^2, t^3
        let mut a = [[0.0f64; 5]; 4];
        for (&x, &y) in xs.iter().zip(ys) {
            let t = (x - centre) / spread;
            let pw = [1.0, t, t * t, t * t * t];
            for r in 0..4 {
                for c in 0..4 {
                    a[r][c] += pw[r] * pw[c];
                }
                a[r][4] += pw[r] * y;
            }
        }
        for col in 0..4 {
            let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("non-empty range");
            if a[pivot][col].abs() < 1e-12 {
                return Err(BenchError::InvalidCurve("degenerate cubic fit".into()));
            }
            a.swap(col, pivot);
            for r in 0..4 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..5 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let coeffs = [0, 1, 2, 3].map(|i| a[i][4] / a[i][i]);
        Ok(Self { centre, scale: spread, coeffs })
    }

    /// Integral over `[lo, hi]` in the original variable.
    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let anti = |x: f64| {
            let t = (x - self.centre) / self.scale;
            self.coeffs.iter().enumerate().map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0)).sum::<f64>()
        };
        (anti(hi) - anti(lo)) * self.scale
    }
}

fn overlap(a: &[f64], b: &[f64], what: &str) -> Result<(f64, f64)> {
    let range = |v: &[f64]| {
        (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    };
    let (a_lo, a_hi) = range(a);
    let (b_lo, b_hi) = range(b);
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    if hi <= lo {
        return Err(BenchError::InsufficientOverlap(format!(
            "{what} ranges [{a_lo:.4}, {a_hi:.4}] and [{b_lo:.4}, {b_hi:.4}] do not overlap"
        )));
    }
    Ok((lo, hi))
}

/// Average PSNR difference (dB) of `test` over `anchor` at equal rate.
pub fn bd_psnr(anchor: &RDCurve, test: &RDCurve) -> Result<f64> {
    let (ra, rt) = (anchor.log_rates(), test.log_rates());
    let (lo, hi) = overlap(&ra, &rt, "log10 rate")?;
    let fa = Cubic::fit(&ra, &anchor.psnrs())?;
    let ft = Cubic::fit(&rt, &test.psnrs())?;
    Ok((ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo))
}

/// Average rate difference (%) of `test` over `anchor` at equal PSNR.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve) -> Result<f64> {
    let (pa, pt) = (anchor.psnrs(), test.psnrs());
    let (lo, hi) = overlap(&pa, &pt, "PSNR")?;
    let fa = Cubic::fit(&pa, &anchor.log_rates())?;
    let ft = Cubic::fit(&pt, &test.log_rates())?;
    let mean_log_diff = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(mean_log_diff) - 1.0) * 100.0)
}

/// `(bd_rate %, bd_psnr dB)`.
pub fn bd_metrics(anchor: &RDCurve, test: &RDCurve) -> Result<(f64, f64)> {
    Ok((bd_rate(anchor, test)?, bd_psnr(anchor, test)?))
}

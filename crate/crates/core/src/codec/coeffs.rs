//! Coefficient substreams for the right image and the left residual.
//!
//! Planes are coded channel by channel, blocks in raster order, bands in
//! zig-zag order. Each coefficient is coded under a zero-mean discretized
//! Gaussian whose scale comes from [`predict_sigma`]: the mean dequantized
//! magnitude of the same band in the left, above and above-left blocks,
//! optionally blended with a cross-view prior magnitude.
//!
//! DC values are coded as the difference from a median (MED) prediction of
//! the neighbouring DC indices; the DC context uses the magnitudes of those
//! differences.
//!
//! The prior enters through the co-located coefficient of the prior plane's
//! transform. Its magnitude is mapped into residual units by a per-band gain
//! `g = (sum |residual| + qp) / (sum |prior| + qp)` accumulated over the
//! blocks already coded, so encoder and decoder track the same value.

use crate::entropy::{
    predict_sigma, BandClass, CodingContext, GaussianCdfModel, ModelBank, RangeDecoder, RangeEncoder, SigmaBounds,
};
use crate::image::FloatPlane;
use crate::transform::{dequantize, inverse_dct8, quantize, CoeffPlane, QuantPlane, BAND_COUNT};
use crate::Result;

fn med(a: f64, b: f64, c: f64) -> f64 {
    if c >= a.max(b) {
        a.min(b)
    } else if c <= a.min(b) {
        a.max(b)
    } else {
        a + b - c
    }
}

/// DC prediction from the left (`a`), above (`b`) and above-left (`c`) blocks.
fn dc_prediction<T: Copy + Into<f64>>(values: &[T], bw: usize, bx: usize, by: usize) -> f64 {
    let at = |x: usize, y: usize| values[y * bw + x].into();
    match (bx, by) {
        (0, 0) => 0.0,
        (_, 0) => at(bx - 1, 0),
        (0, _) => at(0, by - 1),
        _ => med(at(bx - 1, by), at(bx, by - 1), at(bx - 1, by - 1)),
    }
}

/// Prior magnitudes per (block, band) before gain calibration.
fn prior_magnitudes(prior: &CoeffPlane) -> Vec<f64> {
    let (bw, bh) = (prior.blocks_x(), prior.blocks_y());
    let dcs: Vec<f64> =
        (0..bh).flat_map(|by| (0..bw).map(move |bx| (bx, by))).map(|(bx, by)| prior.band(bx, by, 0)).collect();
    let mut out = Vec::with_capacity(bw * bh * BAND_COUNT);
    for by in 0..bh {
        for bx in 0..bw {
            for band in 0..BAND_COUNT {
                let v = if band == 0 {
                    prior.band(bx, by, 0) - dc_prediction(&dcs, bw, bx, by)
                } else {
                    prior.band(bx, by, band)
                };
                out.push(v.abs());
            }
        }
    }
    out
}

/// Encoder/decoder-symmetric context state for one channel.
struct ChannelContext {
    bw: usize,
    qp: f64,
    bounds: SigmaBounds,
    /// Dequantized magnitude of every coded symbol, per (block, band).
    mags: Vec<f64>,
    /// Quantized DC index per block.
    dc: Vec<i32>,
    prior: Option<PriorState>,
    w_prior: f64,
}

const PRIOR_BINS: usize = 16;
const BIN_WEIGHT: f64 = 4.0;

struct PriorState {
    raw: Vec<f64>,
    sum_residual: [f64; BAND_COUNT],
    sum_prior: [f64; BAND_COUNT],
    bin_sum: Vec<f64>,
    bin_count: Vec<f64>,
}

fn prior_bin(raw: f64, qp: f64) -> usize {
    (((1.0 + raw / qp).log2() * 2.0) as usize).min(PRIOR_BINS - 1)
}

impl ChannelContext {
    fn new(bw: usize, bh: usize, qp: f64, prior: Option<&CoeffPlane>, w_prior: f64) -> Self {
        Self {
            bw,
            qp,
            bounds: SigmaBounds::for_step(qp),
            mags: vec![0.0; bw * bh * BAND_COUNT],
            dc: vec![0; bw * bh],
            prior: prior.map(|p| PriorState {
                raw: prior_magnitudes(p),
                sum_residual: [0.0; BAND_COUNT],
                sum_prior: [0.0; BAND_COUNT],
                bin_sum: vec![0.0; BAND_COUNT * PRIOR_BINS],
                bin_count: vec![0.0; BAND_COUNT * PRIOR_BINS],
            }),
            w_prior,
        }
    }

    #[inline]
    fn mag(&self, bx: usize, by: usize, band: usize) -> f64 {
        self.mags[(by * self.bw + bx) * BAND_COUNT + band]
    }

    fn context(&self, bx: usize, by: usize, band: usize) -> CodingContext {
        let left = if bx > 0 { self.mag(bx - 1, by, band) } else { 0.0 };
        let above = if by > 0 { self.mag(bx, by - 1, band) } else { 0.0 };
        let corner = if bx > 0 && by > 0 { self.mag(bx - 1, by - 1, band) } else { 0.0 };
        let prior_mag = self.prior.as_ref().map_or(0.0, |p| {
            let raw = p.raw[(by * self.bw + bx) * BAND_COUNT + band];
            let qp2 = self.qp * self.qp;
            let gain2 = (p.sum_residual[band] + qp2) / (p.sum_prior[band] + qp2);
            let k = band * PRIOR_BINS + prior_bin(raw, self.qp);
            ((p.bin_sum[k] + BIN_WEIGHT * gain2 * raw * raw) / (p.bin_count[k] + BIN_WEIGHT)).sqrt()
        });
        CodingContext { band_class: BandClass::of_band(band), neighbor_mags: [left, above, corner], prior_mag }
    }

    fn model(&self, bx: usize, by: usize, band: usize) -> &'static GaussianCdfModel {
        let ctx = self.context(bx, by, band);
        let sigma = predict_sigma(&ctx, self.prior.is_some(), self.w_prior, self.bounds);
        ModelBank::global().model(sigma, self.qp)
    }

    fn dc_pred(&self, bx: usize, by: usize) -> i32 {
        let p = dc_prediction(&self.dc, self.bw, bx, by);
        p as i32
    }

    fn record(&mut self, bx: usize, by: usize, band: usize, symbol: i32) {
        let i = (by * self.bw + bx) * BAND_COUNT + band;
        let mag = f64::from(symbol).abs() * self.qp;
        self.mags[i] = mag;
        if let Some(p) = self.prior.as_mut() {
            p.sum_residual[band] += mag * mag;
            p.sum_prior[band] += p.raw[i] * p.raw[i];
            let k = band * PRIOR_BINS + prior_bin(p.raw[i], self.qp);
            p.bin_sum[k] += mag * mag;
            p.bin_count[k] += 1.0;
        }
    }
}

/// Result of coding one set of planes.
pub(crate) struct PlaneCodingResult {
    pub estimated_bits: f64,
    /// Reconstructed planes (dequantized and inverse transformed, unrounded).
    pub recon: Vec<FloatPlane>,
}

/// Quantize and code transformed planes into `enc`.
pub(crate) fn encode_planes(
    enc: &mut RangeEncoder,
    coeffs: &[CoeffPlane],
    qp: f64,
    priors: Option<&[CoeffPlane]>,
    w_prior: f64,
) -> Result<PlaneCodingResult> {
    let mut estimated_bits = 0.0;
    let mut recon = Vec::with_capacity(coeffs.len());
    for (c, plane) in coeffs.iter().enumerate() {
        let q = quantize(plane, qp)?;
        let (bw, bh) = (q.blocks_x(), q.blocks_y());
        let mut ctx = ChannelContext::new(bw, bh, qp, priors.map(|p| &p[c]), w_prior);
        for by in 0..bh {
            for bx in 0..bw {
                for band in 0..BAND_COUNT {
                    let model = ctx.model(bx, by, band);
                    let v = q.band(bx, by, band);
                    let symbol = if band == 0 {
                        let s = v - ctx.dc_pred(bx, by);
                        ctx.dc[by * bw + bx] = v;
                        s
                    } else {
                        v
                    };
                    estimated_bits += model.cost_bits(symbol);
                    enc.encode_symbol(symbol, model);
                    ctx.record(bx, by, band, symbol);
                }
            }
        }
        recon.push(inverse_dct8(&dequantize(&q, qp)));
    }
    Ok(PlaneCodingResult { estimated_bits, recon })
}

/// Decode `channels` planes of the given size; mirrors [`encode_planes`].
pub(crate) fn decode_planes(
    dec: &mut RangeDecoder<'_>,
    channels: usize,
    width: usize,
    height: usize,
    qp: f64,
    priors: Option<&[CoeffPlane]>,
    w_prior: f64,
) -> Result<Vec<FloatPlane>> {
    let mut recon = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut q = QuantPlane::zeros(width, height);
        let (bw, bh) = (q.blocks_x(), q.blocks_y());
        let mut ctx = ChannelContext::new(bw, bh, qp, priors.map(|p| &p[c]), w_prior);
        for by in 0..bh {
            for bx in 0..bw {
                for band in 0..BAND_COUNT {
                    let model = ctx.model(bx, by, band);
                    let symbol = dec.decode_symbol(model)?;
                    let v = if band == 0 {
                        let v = symbol.wrapping_add(ctx.dc_pred(bx, by));
                        ctx.dc[by * bw + bx] = v;
                        v
                    } else {
                        symbol
                    };
                    q.set_band(bx, by, band, v);
                    ctx.record(bx, by, band, symbol);
                }
            }
        }
        recon.push(inverse_dct8(&dequantize(&q, qp)));
    }
    Ok(recon)
}

//! Disparity substream: a lower-median subsampled grid of quarter-pel values,
//! coded as left-neighbour deltas under a Gaussian whose scale tracks the
//! recent delta magnitudes.

use crate::disparity::{DisparityMap, SUBPEL};
use crate::entropy::{ModelBank, RangeDecoder, RangeEncoder};
use crate::image::FloatPlane;
use crate::{Error, Result};

/// Subsampled disparity samples, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct DisparityGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u16>,
}

pub(crate) fn grid_size(width: usize, height: usize, factor: usize) -> (usize, usize) {
    (width.div_ceil(factor), height.div_ceil(factor))
}

/// Lower median of each `factor`x`factor` cell (cells are clipped at the
/// right and bottom edges).
pub(crate) fn downsample(d: &DisparityMap, factor: usize) -> DisparityGrid {
    let (gw, gh) = grid_size(d.width(), d.height(), factor);
    let mut values = Vec::with_capacity(gw * gh);
    let mut cell = Vec::with_capacity(factor * factor);
    for gy in 0..gh {
        for gx in 0..gw {
            cell.clear();
            for y in gy * factor..((gy + 1) * factor).min(d.height()) {
                for x in gx * factor..((gx + 1) * factor).min(d.width()) {
                    cell.push(d.get(x, y));
                }
            }
            cell.sort_unstable();
            values.push(cell[(cell.len() - 1) / 2]);
        }
    }
    DisparityGrid { width: gw, height: gh, values }
}

/// Bilinear upsampling; grid sample `i` sits at pixel coordinate
/// `factor * i + (factor - 1) / 2`, positions outside the sample lattice are
/// clamped to the border samples.
pub(crate) fn upsample(
    g: &DisparityGrid,
    width: usize,
    height: usize,
    factor: usize,
    max_disparity: usize,
) -> Result<DisparityMap> {
    let offset = (factor as f64 - 1.0) / 2.0;
    let f = factor as f64;
    let axis = |p: usize, n: usize| {
        let u = ((p as f64 - offset) / f).clamp(0.0, (n - 1) as f64);
        let i0 = u.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, u - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, g.width)).collect();
    let hi = (max_disparity * usize::from(SUBPEL)) as f64;
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, ty) = axis(y, g.height);
        for &(x0, x1, tx) in &cols {
            let at = |xx: usize, yy: usize| f64::from(g.values[yy * g.width + xx]);
            let top = at(x0, y0) + tx * (at(x1, y0) - at(x0, y0));
            let bottom = at(x0, y1) + tx * (at(x1, y1) - at(x0, y1));
            let v = top + ty * (bottom - top);
            values.push(v.round().clamp(0.0, hi) as u16);
        }
    }
    DisparityMap::new(width, height, max_disparity, values)
}

const EMA_SHIFT: f64 = 16.0;
const SIGMA_INIT: f64 = 1.0;

fn predictor(values: &[u16], gw: usize, i: usize) -> i32 {
    let (x, y) = (i % gw, i / gw);
    match (x, y) {
        (0, 0) => 0,
        (0, _) => i32::from(values[i - gw]),
        _ => i32::from(values[i - 1]),
    }
}

/// Sum of absolute luma differences over one grid cell when the whole cell
/// is warped with the quarter-pel disparity `q`.
fn cell_cost(left: &FloatPlane, right: &FloatPlane, gx: usize, gy: usize, factor: usize, q: u16) -> f64 {
    let (w, h) = (left.width(), left.height());
    let last = w as i64 - 1;
    let sub = i64::from(SUBPEL);
    let mut sum = 0.0;
    for y in gy * factor..((gy + 1) * factor).min(h) {
        let row = right.row(y);
        for x in gx * factor..((gx + 1) * factor).min(w) {
            let pos = x as i64 * sub - i64::from(q);
            let x0 = pos.div_euclid(sub);
            let t = pos.rem_euclid(sub) as f64 / f64::from(SUBPEL);
            let a = row[x0.clamp(0, last) as usize];
            let b = row[(x0 + 1).clamp(0, last) as usize];
            sum += (left.get(x, y) - (a + t * (b - a))).abs();
        }
    }
    sum
}

/// Scale of the fixed model that prices deltas during regularization.
const RD_SIGMA: f64 = 0.5;

/// Encoder-side rate-distortion smoothing. Each grid row is re-chosen by
/// dynamic programming over the values occurring in that row (plus the
/// predictor of its first sample), minimizing the summed cell SAD plus
/// `mu` times the delta cost under a fixed-scale model. Rows are processed
/// top to bottom so the first-column predictor is already final.
pub(crate) fn regularize(g: &mut DisparityGrid, left: &FloatPlane, right: &FloatPlane, factor: usize, mu: f64) {
    let model = ModelBank::global().model(RD_SIGMA, 1.0);
    let gw = g.width;
    for gy in 0..g.height {
        let start = gy * gw;
        let first_pred = predictor(&g.values, gw, start);
        let mut cands: Vec<u16> = g.values[start..start + gw].to_vec();
        cands.push(first_pred as u16);
        cands.sort_unstable();
        cands.dedup();
        let n = cands.len();
        let rate = |a: u16, b: u16| mu * model.cost_bits(i32::from(b) - i32::from(a));

        let mut cost: Vec<f64> =
            cands.iter().map(|&v| cell_cost(left, right, 0, gy, factor, v) + rate(first_pred as u16, v)).collect();
        let mut back = vec![0usize; gw * n];
        for gx in 1..gw {
            let mut next = vec![0.0; n];
            for (j, &v) in cands.iter().enumerate() {
                let mut best = (f64::INFINITY, 0);
                for (i, &u) in cands.iter().enumerate() {
                    let c = cost[i] + rate(u, v);
                    if c < best.0 {
                        best = (c, i);
                    }
                }
                next[j] = best.0 + cell_cost(left, right, gx, gy, factor, v);
                back[gx * n + j] = best.1;
            }
            cost = next;
        }
        let mut j = (0..n).fold(0, |b, i| if cost[i] < cost[b] { i } else { b });
        for gx in (0..gw).rev() {
            g.values[start + gx] = cands[j];
            j = back[gx * n + j];
        }
    }
}

/// Codes the grid and returns `(bytes, estimated bits)`.
pub(crate) fn encode_grid(g: &DisparityGrid) -> (Vec<u8>, f64) {
    let bank = ModelBank::global();
    let mut enc = RangeEncoder::new();
    let mut sigma = SIGMA_INIT;
    let mut bits = 0.0;
    for i in 0..g.values.len() {
        let delta = i32::from(g.values[i]) - predictor(&g.values, g.width, i);
        let model = bank.model(sigma, 1.0);
        bits += model.cost_bits(delta);
        enc.encode_symbol(delta, model);
        sigma += (f64::from(delta.unsigned_abs()) - sigma) / EMA_SHIFT;
    }
    (enc.finish(), bits)
}

pub(crate) fn decode_grid(bytes: &[u8], width: usize, height: usize, max_disparity: usize) -> Result<DisparityGrid> {
    let bank = ModelBank::global();
    let mut dec = RangeDecoder::new(bytes)?;
    let mut sigma = SIGMA_INIT;
    let hi = (max_disparity * usize::from(SUBPEL)) as i64;
    let mut values = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let delta = dec.decode_symbol(bank.model(sigma, 1.0))?;
        let v = i64::from(predictor(&values, width, i)) + i64::from(delta);
        if !(0..=hi).contains(&v) {
            return Err(Error::BadBitstream(format!("disparity sample {v} outside [0, {hi}]")));
        }
        values.push(v as u16);
        sigma += (f64::from(delta.unsigned_abs()) - sigma) / EMA_SHIFT;
    }
    Ok(DisparityGrid { width, height, values })
}

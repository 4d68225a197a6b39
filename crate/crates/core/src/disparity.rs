//! Left-aligned horizontal disparity estimation.
//!
//! The pipeline is the classical one: a sum-of-absolute-differences matching
//! cost over a square window, four-path semi-global aggregation, then
//! winner-take-all selection with parabolic sub-pixel refinement. Results are
//! stored in quarter-pel fixed point so that the map can be coded exactly.

use crate::image::{to_luma, FloatPlane, PlanarImage};
use crate::{Error, Result};

/// Quarter-pel units per pixel.
pub const SUBPEL: u16 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchParams {
    /// Largest candidate disparity in whole pixels.
    pub max_disparity: usize,
    /// Half-width of the square SAD window, which spans `(2r+1)^2` pixels.
    pub block_radius: usize,
    /// Penalty for a one-step disparity change between neighbours.
    pub sgm_p1: f64,
    /// Penalty for larger disparity jumps.
    pub sgm_p2: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self::with_max_disparity(64)
    }
}

impl MatchParams {
    /// Default window and penalties for a given search range. Penalties scale
    /// with the window area since costs are window sums.
    pub fn with_max_disparity(max_disparity: usize) -> Self {
        let block_radius = 2;
        let area = ((2 * block_radius + 1) * (2 * block_radius + 1)) as f64;
        Self { max_disparity, block_radius, sgm_p1: 1.0 * area, sgm_p2: 8.0 * area }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_disparity < 1 || self.max_disparity > usize::from(u16::MAX / SUBPEL) {
            return Err(Error::InvalidParameter(format!(
                "max_disparity must be in [1, {}], got {}",
                u16::MAX / SUBPEL,
                self.max_disparity
            )));
        }
        if !(self.sgm_p1.is_finite() && self.sgm_p2.is_finite()) || self.sgm_p1 <= 0.0 || self.sgm_p1 > self.sgm_p2 {
            return Err(Error::InvalidParameter(format!(
                "SGM penalties need 0 < p1 <= p2, got p1={} p2={}",
                self.sgm_p1, self.sgm_p2
            )));
        }
        Ok(())
    }
}

/// Per-pixel, per-candidate matching costs, laid out `[(y * width + x) * D + d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    num_disparities: usize,
    costs: Vec<f32>,
}

impl CostVolume {
    pub fn new(width: usize, height: usize, num_disparities: usize, costs: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || num_disparities < 2 {
            return Err(Error::InvalidParameter(format!(
                "cost volume {width}x{height}x{num_disparities} is degenerate"
            )));
        }
        if costs.len() != width * height * num_disparities {
            return Err(Error::DimensionMismatch(format!(
                "{} costs for a {width}x{height}x{num_disparities} volume",
                costs.len()
            )));
        }
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidParameter("costs must be finite and non-negative".into()));
        }
        Ok(Self { width, height, num_disparities, costs })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_disparities(&self) -> usize {
        self.num_disparities
    }

    pub fn costs(&self) -> &[f32] {
        &self.costs
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize, d: usize) -> f32 {
        self.costs[(y * self.width + x) * self.num_disparities + d]
    }

    /// All candidate costs at one pixel.
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let base = (y * self.width + x) * self.num_disparities;
        &self.costs[base..base + self.num_disparities]
    }
}

/// Quarter-pel disparities aligned to the left view: the left pixel `(x, y)`
/// corresponds to the right-view column `x - value / 4`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    max_disparity: usize,
    values: Vec<u16>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, max_disparity: usize, values: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("empty disparity map".into()));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} disparities for {width}x{height}", values.len())));
        }
        let bound = max_disparity * usize::from(SUBPEL);
        if bound > usize::from(u16::MAX) {
            return Err(Error::InvalidParameter(format!("max_disparity {max_disparity} too large")));
        }
        if let Some(v) = values.iter().find(|&&v| usize::from(v) > bound) {
            return Err(Error::InvalidParameter(format!("disparity {v} exceeds quarter-pel bound {bound}")));
        }
        Ok(Self { width, height, max_disparity, values })
    }

    pub fn zeros(width: usize, height: usize, max_disparity: usize) -> Self {
        Self { width, height, max_disparity, values: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn max_disparity(&self) -> usize {
        self.max_disparity
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    /// Stored value in quarter pixels.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.values[y * self.width + x]
    }

    /// Disparity in pixels.
    pub fn pixels(&self, x: usize, y: usize) -> f64 {
        f64::from(self.get(x, y)) / f64::from(SUBPEL)
    }

    /// Debug dump: `"DMAP"`, width u16, height u16, then big-endian u16 values.
    pub fn to_dmap_bytes(&self) -> Result<Vec<u8>> {
        let w = u16::try_from(self.width).map_err(|_| Error::InvalidParameter("width exceeds u16".into()))?;
        let h = u16::try_from(self.height).map_err(|_| Error::InvalidParameter("height exceeds u16".into()))?;
        let mut out = Vec::with_capacity(8 + 2 * self.values.len());
        out.extend_from_slice(b"DMAP");
        out.extend_from_slice(&w.to_be_bytes());
        out.extend_from_slice(&h.to_be_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_be_bytes());
        }
        Ok(out)
    }

    /// Parse a debug dump. The dump does not record the search range, so the
    /// caller supplies it.
    pub fn from_dmap_bytes(data: &[u8], max_disparity: usize) -> Result<Self> {
        if data.len() < 8 || &data[..4] != b"DMAP" {
            return Err(Error::Parse { offset: 0, msg: "missing DMAP header".into() });
        }
        let w = usize::from(u16::from_be_bytes([data[4], data[5]]));
        let h = usize::from(u16::from_be_bytes([data[6], data[7]]));
        let body = &data[8..];
        if body.len() != 2 * w * h {
            return Err(Error::Parse {
                offset: data.len(),
                msg: format!("expected {} payload bytes, found {}", 2 * w * h, body.len()),
            });
        }
        let values = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        Self::new(w, h, max_disparity, values)
    }
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// SAD matching cost. The right sample for left column `u` is taken at
/// `u - d`; every sample position, left or right, is clamped to the image.
pub fn matching_cost(left: &FloatPlane, right: &FloatPlane, p: &MatchParams) -> Result<CostVolume> {
    p.validate()?;
    if !left.same_size(right) {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let (w, h) = (left.width(), left.height());
    let nd = p.max_disparity + 1;
    let r = p.block_radius as isize;
    let ext = w + 2 * p.block_radius;
    let mut costs = vec![0f32; w * h * nd];

    let mut diff = vec![0f64; ext * h];
    let mut hsum = vec![0f64; w * h];
    for d in 0..nd {
        // absolute differences over the horizontally extended window columns
        for y in 0..h {
            let (lrow, rrow) = (left.row(y), right.row(y));
            let drow = &mut diff[y * ext..(y + 1) * ext];
            for (i, slot) in drow.iter_mut().enumerate() {
                let u = i as isize - r;
                let lv = lrow[clamp_index(u, w)];
                let rv = rrow[clamp_index(u - d as isize, w)];
                *slot = (lv - rv).abs();
            }
        }
        for y in 0..h {
            let drow = &diff[y * ext..(y + 1) * ext];
            let hrow = &mut hsum[y * w..(y + 1) * w];
            for (x, slot) in hrow.iter_mut().enumerate() {
                *slot = drow[x..x + 2 * p.block_radius + 1].iter().sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in -r..=r {
                    s += hsum[clamp_index(y as isize + dy, h) * w + x];
                }
                costs[(y * w + x) * nd + d] = s as f32;
            }
        }
    }
    Ok(CostVolume { width: w, height: h, num_disparities: nd, costs })
}

/// One step of the SGM recursion for a single pixel.
#[inline]
fn sgm_step(cost: &[f32], prev: &[f32], out: &mut [f32], p1: f32, p2: f32) {
    let nd = cost.len();
    let prev_min = prev.iter().copied().fold(f32::INFINITY, f32::min);
    for d in 0..nd {
        let mut best = prev[d];
        if d > 0 {
            best = best.min(prev[d - 1] + p1);
        }
        if d + 1 < nd {
            best = best.min(prev[d + 1] + p1);
        }
        best = best.min(prev_min + p2);
        out[d] = cost[d] + best - prev_min;
    }
}

/// Four-path semi-global aggregation: left-to-right, right-to-left,
/// top-to-bottom and bottom-to-top. Each path subtracts its running minimum;
/// the result is the sum of the four path costs.
pub fn aggregate_costs(cv: &CostVolume, p: &MatchParams) -> CostVolume {
    let (w, h, nd) = (cv.width, cv.height, cv.num_disparities);
    let (p1, p2) = (p.sgm_p1 as f32, p.sgm_p2 as f32);
    let mut total = vec![0f32; cv.costs.len()];
    let mut cur = vec![0f32; nd];
    let mut prev = vec![0f32; nd];

    // horizontal paths, one row at a time
    for y in 0..h {
        for forward in [true, false] {
            for i in 0..w {
                let x = if forward { i } else { w - 1 - i };
                let c = cv.pixel(x, y);
                if i == 0 {
                    cur.copy_from_slice(c);
                } else {
                    sgm_step(c, &prev, &mut cur, p1, p2);
                }
                let base = (y * w + x) * nd;
                for (t, v) in total[base..base + nd].iter_mut().zip(&cur) {
                    *t += v;
                }
                std::mem::swap(&mut cur, &mut prev);
            }
        }
    }

    // vertical paths keep a full row of path costs
    let mut prev_row = vec![0f32; w * nd];
    let mut cur_row = vec![0f32; w * nd];
    for downward in [true, false] {
        for i in 0..h {
            let y = if downward { i } else { h - 1 - i };
            for x in 0..w {
                let c = cv.pixel(x, y);
                let slot = &mut cur_row[x * nd..(x + 1) * nd];
                if i == 0 {
                    slot.copy_from_slice(c);
                } else {
                    sgm_step(c, &prev_row[x * nd..(x + 1) * nd], slot, p1, p2);
                }
            }
            let base = y * w * nd;
            for (t, v) in total[base..base + w * nd].iter_mut().zip(&cur_row) {
                *t += v;
            }
            std::mem::swap(&mut cur_row, &mut prev_row);
        }
    }

    CostVolume { width: w, height: h, num_disparities: nd, costs: total }
}

/// Parabolic sub-pixel offset around a discrete minimum, clamped to half a
/// pixel. Returns 0 when the fit is degenerate.
pub fn subpixel_offset(c_minus: f64, c0: f64, c_plus: f64) -> f64 {
    let denom = 2.0 * (c_minus - 2.0 * c0 + c_plus);
    if denom == 0.0 {
        return 0.0;
    }
    ((c_minus - c_plus) / denom).clamp(-0.5, 0.5)
}

/// Winner-take-all with ties toward the smaller disparity, then parabolic
/// refinement rounded to quarter pel.
pub fn select_disparity(cv: &CostVolume) -> DisparityMap {
    let (w, h, nd) = (cv.width, cv.height, cv.num_disparities);
    let max_d = nd - 1;
    let bound = (max_d * usize::from(SUBPEL)) as f64;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let c = cv.pixel(x, y);
            let mut best = 0;
            for d in 1..nd {
                if c[d] < c[best] {
                    best = d;
                }
            }
            let delta = if best == 0 || best == max_d {
                0.0
            } else {
                subpixel_offset(f64::from(c[best - 1]), f64::from(c[best]), f64::from(c[best + 1]))
            };
            let q = (f64::from(SUBPEL) * (best as f64 + delta)).round().clamp(0.0, bound);
            values.push(q as u16);
        }
    }
    DisparityMap { width: w, height: h, max_disparity: max_d, values }
}

/// Luma conversion, matching cost, aggregation and selection.
pub fn estimate_disparity(left: &PlanarImage, right: &PlanarImage, p: &MatchParams) -> Result<DisparityMap> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    let cv = matching_cost(&to_luma(left), &to_luma(right), p)?;
    Ok(select_disparity(&aggregate_costs(&cv, p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(max_disparity: usize, block_radius: usize, p1: f64, p2: f64) -> MatchParams {
        MatchParams { max_disparity, block_radius, sgm_p1: p1, sgm_p2: p2 }
    }

    /// Direct evaluation of the windowed SAD with clamped sampling.
    fn brute_cost(l: &FloatPlane, r: &FloatPlane, x: usize, y: usize, d: usize, rad: usize) -> f64 {
        let (w, h) = (l.width() as isize, l.height() as isize);
        let rad = rad as isize;
        let mut s = 0.0;
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let yy = (y as isize + dy).clamp(0, h - 1) as usize;
                let lx = (x as isize + dx).clamp(0, w - 1) as usize;
                let rx = (x as isize + dx - d as isize).clamp(0, w - 1) as usize;
                s += (l.get(lx, yy) - r.get(rx, yy)).abs();
            }
        }
        s
    }

    fn texture(w: usize, h: usize, seed: u64) -> FloatPlane {
        let mut state = seed;
        FloatPlane::from_fn(w, h, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 256) as f64
        })
    }

    #[test]
    fn single_pixel_cost() {
        let l = FloatPlane::new(2, 1, vec![0.0, 10.0]).unwrap();
        let r = FloatPlane::new(2, 1, vec![12.0, 0.0]).unwrap();
        let cv = matching_cost(&l, &r, &params(1, 0, 1.0, 2.0)).unwrap();
        assert_eq!(cv.cost(1, 0, 1), 2.0);
    }

    #[test]
    fn identical_planes_cost_zero_at_d0() {
        let t = texture(12, 7, 3);
        let cv = matching_cost(&t, &t, &params(4, 1, 1.0, 2.0)).unwrap();
        for y in 0..7 {
            for x in 0..12 {
                assert_eq!(cv.cost(x, y, 0), 0.0);
            }
        }
    }

    #[test]
    fn matches_brute_force_and_finds_shift() {
        let (w, h, s) = (20, 9, 3);
        let base = texture(w + s, h, 11);
        // left(x) = right(x - s)
        let left = FloatPlane::from_fn(w, h, |x, y| base.get(x, y));
        let right = FloatPlane::from_fn(w, h, |x, y| base.get(x + s, y));
        let p = params(5, 1, 1.0, 2.0);
        let cv = matching_cost(&left, &right, &p).unwrap();
        for y in 0..h {
            for x in 0..w {
                for d in 0..=5 {
                    let want = brute_cost(&left, &right, x, y, d, 1);
                    assert!((f64::from(cv.cost(x, y, d)) - want).abs() < 1e-3);
                }
            }
        }
        // interior: full window and x - s - 1 >= 0
        for y in 1..h - 1 {
            for x in s + 1..w - 1 {
                assert_eq!(cv.cost(x, y, s), 0.0, "({x},{y})");
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = FloatPlane::zeros(4, 4);
        let b = FloatPlane::zeros(5, 4);
        assert!(matches!(matching_cost(&a, &b, &params(2, 0, 1.0, 2.0)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zero_penalties_quadruple_costs() {
        let t = texture(6, 5, 1);
        let u = texture(6, 5, 2);
        let p = MatchParams { max_disparity: 3, block_radius: 0, sgm_p1: 1.0, sgm_p2: 1.0 };
        let cv = matching_cost(&t, &u, &p).unwrap();
        let zero = MatchParams { sgm_p1: 0.0, sgm_p2: 0.0, ..p };
        let agg = aggregate_costs(&cv, &zero);
        for (a, c) in agg.costs().iter().zip(cv.costs()) {
            assert_eq!(*a, 4.0 * c);
        }
    }

    #[test]
    fn one_pixel_volume_quadruples() {
        let cv = CostVolume::new(1, 1, 3, vec![3.0, 1.0, 2.0]).unwrap();
        let agg = aggregate_costs(&cv, &params(2, 0, 5.0, 9.0));
        assert_eq!(agg.costs(), &[12.0, 4.0, 8.0]);
    }

    #[test]
    fn three_pixel_row_hand_values() {
        let c = [[0.0f32, 4.0, 1.0], [3.0, 0.0, 5.0], [2.0, 2.0, 0.0]];
        let cv = CostVolume::new(3, 1, 3, c.iter().flatten().copied().collect()).unwrap();
        let agg = aggregate_costs(&cv, &params(2, 0, 1.0, 2.0));
        // left-to-right  [0,4,1] [3,1,6] [3,2,1]
        // right-to-left  [1,4,2] [5,1,5] [2,2,0]
        // the two vertical paths see single pixels and add the raw cost twice
        let expected = [[1.0, 16.0, 5.0], [14.0, 2.0, 21.0], [9.0, 8.0, 1.0]];
        for x in 0..3 {
            for d in 0..3 {
                assert_eq!(agg.cost(x, 0, d), expected[x][d], "x={x} d={d}");
            }
        }
    }

    #[test]
    fn parabola_examples() {
        let cv = CostVolume::new(1, 1, 3, vec![5.0, 2.0, 7.0]).unwrap();
        assert_eq!(select_disparity(&cv).get(0, 0), 4);
        assert_eq!(subpixel_offset(5.0, 2.0, 7.0), -0.125);
        assert_eq!(subpixel_offset(4.0, 2.0, 4.0), 0.0);
        assert!((subpixel_offset(6.0, 2.0, 4.0) - 1.0 / 6.0).abs() < 1e-12);
        let cv = CostVolume::new(1, 1, 4, vec![9.0, 6.0, 2.0, 4.0]).unwrap();
        assert_eq!(select_disparity(&cv).get(0, 0), 9);
        // degenerate fit and clamping
        assert_eq!(subpixel_offset(2.0, 2.0, 2.0), 0.0);
        assert_eq!(subpixel_offset(10.0, 0.0, 0.0), 0.5);
    }

    #[test]
    fn ties_go_to_smaller_disparity_and_edges_skip_refinement() {
        let cv = CostVolume::new(3, 1, 3, vec![1.0, 1.0, 3.0, 5.0, 4.0, 1.0, 2.0, 1.0, 1.0]).unwrap();
        let m = select_disparity(&cv);
        // pixel 2 ties between d=1 and d=2, keeps d=1 and refines by +0.5
        assert_eq!(m.values(), &[0, 8, 6]);
    }

    #[test]
    fn dmap_round_trip() {
        let m = DisparityMap::new(3, 2, 10, vec![0, 4, 40, 7, 1, 2]).unwrap();
        let bytes = m.to_dmap_bytes().unwrap();
        assert_eq!(&bytes[..8], b"DMAP\x00\x03\x00\x02");
        assert_eq!(&bytes[8..12], &[0, 0, 0, 4]);
        assert_eq!(DisparityMap::from_dmap_bytes(&bytes, 10).unwrap(), m);
        assert!(DisparityMap::from_dmap_bytes(&bytes[..11], 10).is_err());
        assert!(DisparityMap::new(1, 1, 10, vec![41]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(params(0, 1, 1.0, 2.0).validate().is_err());
        assert!(params(4, 1, 0.0, 2.0).validate().is_err());
        assert!(params(4, 1, 3.0, 2.0).validate().is_err());
        assert!(MatchParams::default().validate().is_ok());
    }

    #[test]
    fn identical_views_give_zero_map() {
        let mut state = 5u32;
        let data: Vec<u8> = (0..40 * 30)
            .map(|_| {
                state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                (state >> 24) as u8
            })
            .collect();
        let img = PlanarImage::new(40, 30, vec![data]).unwrap();
        let m = estimate_disparity(&img, &img, &MatchParams::with_max_disparity(8)).unwrap();
        assert!(m.values().iter().all(|&v| v == 0));
    }
}

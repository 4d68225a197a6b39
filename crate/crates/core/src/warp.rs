//! Backward warping of right-view planes into the left view, and the
//! hole-fill plus masked smoothing pass that refines warped priors.

use crate::disparity::{DisparityMap, SUBPEL};
use crate::image::FloatPlane;
use crate::{Error, Result};

/// Per-pixel flag: true where every bilinear source column was inside the
/// source image, false where sampling had to be clamped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    flags: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} flags for {width}x{height}", flags.len())));
        }
        Ok(Self { width, height, flags })
    }

    pub fn all_valid(width: usize, height: usize) -> Self {
        Self { width, height, flags: vec![true; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn count_valid(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Sample `src` at `(x - d(x,y)/4, y)` with horizontal linear interpolation.
pub fn warp_right_to_left(src: &FloatPlane, d: &DisparityMap) -> Result<(FloatPlane, ValidityMask)> {
    let (w, h) = (src.width(), src.height());
    if d.width() != w || d.height() != h {
        return Err(Error::DimensionMismatch(format!("plane {w}x{h} vs disparity {}x{}", d.width(), d.height())));
    }
    let mut out = Vec::with_capacity(w * h);
    let mut flags = Vec::with_capacity(w * h);
    let last = w as i64 - 1;
    for y in 0..h {
        let row = src.row(y);
        for x in 0..w {
            let q = i64::from(d.get(x, y));
            let sub = i64::from(SUBPEL);
            // source position in quarter pels; split into integer column and fraction
            let pos = 4 * x as i64 - q;
            let x0 = pos.div_euclid(sub);
            let frac = pos.rem_euclid(sub);
            if frac == 0 {
                let inside = (0..=last).contains(&x0);
                out.push(row[x0.clamp(0, last) as usize]);
                flags.push(inside);
            } else {
                let x1 = x0 + 1;
                let inside = x0 >= 0 && x1 <= last;
                let a = row[x0.clamp(0, last) as usize];
                let b = row[x1.clamp(0, last) as usize];
                let t = frac as f64 / f64::from(SUBPEL);
                out.push(a + t * (b - a));
                flags.push(inside);
            }
        }
    }
    Ok((FloatPlane::new(w, h, out)?, ValidityMask { width: w, height: h, flags }))
}

/// Fill invalid pixels from the nearest valid pixel in the same row (ties
/// prefer the left side, rows without any valid pixel become 0), then apply a
/// 3x3 mean at every pixel whose 3x3 neighbourhood touched an invalid pixel.
pub fn refine_prior(prior: &FloatPlane, mask: &ValidityMask) -> Result<FloatPlane> {
    let (w, h) = (prior.width(), prior.height());
    if mask.width != w || mask.height != h {
        return Err(Error::DimensionMismatch(format!("plane {w}x{h} vs mask {}x{}", mask.width, mask.height)));
    }
    if mask.flags.iter().all(|&f| f) {
        return Ok(prior.clone());
    }

    let mut filled = prior.clone();
    let mut left_src = vec![None::<usize>; w];
    for y in 0..h {
        let row_valid = &mask.flags[y * w..(y + 1) * w];
        let mut last = None;
        for x in 0..w {
            if row_valid[x] {
                last = Some(x);
            }
            left_src[x] = last;
        }
        let mut right = None;
        for x in (0..w).rev() {
            if row_valid[x] {
                right = Some(x);
                continue;
            }
            let pick = match (left_src[x], right) {
                (Some(l), Some(r)) => Some(if x - l <= r - x { l } else { r }),
                (l, r) => l.or(r),
            };
            let v = pick.map_or(0.0, |sx| prior.get(sx, y));
            filled.set(x, y, v);
        }
    }

    let mut out = filled.clone();
    for y in 0..h {
        for x in 0..w {
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let touches_hole = (y0..=y1).any(|yy| (x0..=x1).any(|xx| !mask.get(xx, yy)));
            if !touches_hole {
                continue;
            }
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    sum += filled.get(xx, yy);
                    n += 1.0;
                }
            }
            out.set(x, y, sum / n);
        }
    }
    Ok(out)
}

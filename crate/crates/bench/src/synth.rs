//! Procedural rectified stereo pairs with known disparity.
//!
//! A scene is a stack of fronto-parallel layers, each carrying a continuous
//! fractal texture and a constant (generally fractional) disparity. The right
//! view samples texture coordinate `u = x`; the left view samples
//! `u = x - d` of the front-most layer covering it, so occlusions and
//! disocclusions come out of the geometry. Independent sensor noise is added
//! to each view.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stereodc::image::PlanarImage;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub color: bool,
    /// Standard deviation of the additive noise, in grey levels.
    pub noise: f64,
    /// Largest disparity of any layer, in pixels.
    pub max_disparity: f64,
}

impl SceneParams {
    pub fn new(width: usize, height: usize, color: bool) -> Self {
        Self { width, height, color, noise: 1.5, max_disparity: 24.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub left: PlanarImage,
    pub right: PlanarImage,
    /// Ground-truth disparity of every left-view pixel, in pixels.
    pub disparity: Vec<f64>,
}

fn hash(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h =
        hash(seed ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smoothly interpolated lattice noise in `[-1, 1]`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + tx * (b - a);
    let bottom = c + tx * (d - c);
    top + ty * (bottom - top)
}

#[derive(Clone, Debug)]
struct Texture {
    seed: u64,
    period: f64,
    octaves: u32,
    /// Per-channel mean and contrast.
    base: [f64; 3],
    contrast: [f64; 3],
    /// Period of the field modulating texture strength.
    strength_period: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let grey = rng.gen_range(50.0..200.0);
        let mut base = [0.0; 3];
        let mut contrast = [0.0; 3];
        let amp = rng.gen_range(25.0..70.0);
        for c in 0..3 {
            base[c] = grey + rng.gen_range(-30.0..30.0);
            contrast[c] = amp * rng.gen_range(0.8..1.2);
        }
        Self {
            seed: rng.gen(),
            period: rng.gen_range(6.0..28.0),
            octaves: rng.gen_range(3..=5),
            base,
            contrast,
            strength_period: rng.gen_range(40.0..120.0),
        }
    }

    fn luminance(&self, u: f64, v: f64) -> f64 {
        let mut sum = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0 / self.period;
        for o in 0..self.octaves {
            sum += amp * value_noise(self.seed.wrapping_add(u64::from(o)), u * freq, v * freq);
            amp *= 0.55;
            freq *= 2.0;
        }
        let strength = 0.6 + 0.5 * value_noise(!self.seed, u / self.strength_period, v / self.strength_period);
        sum * strength
    }

    fn sample(&self, c: usize, u: f64, v: f64) -> f64 {
        let chroma = 0.15 * value_noise(self.seed ^ (c as u64 + 7), u / (2.0 * self.period), v / (2.0 * self.period));
        self.base[c] + self.contrast[c] * (self.luminance(u, v) + chroma)
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Everywhere,
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Shape::Everywhere => true,
            Shape::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&u) && (y0..y1).contains(&v),
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (a, b) = ((u - cx) / rx, (v - cy) / ry);
                a * a + b * b <= 1.0
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    shape: Shape,
    disparity: f64,
    texture: Texture,
}

/// Deterministic pair for a seed.
pub fn generate_pair(seed: u64, params: &SceneParams) -> SyntheticPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let (wf, hf) = (w as f64, h as f64);
    let max_d = params.max_disparity.max(1.0);
    let bg_d = rng.gen_range(0.15 * max_d..0.4 * max_d);
    let mut layers = vec![Layer { shape: Shape::Everywhere, disparity: bg_d, texture: Texture::random(&mut rng) }];
    let objects = rng.gen_range(2..=5);
    for _ in 0..objects {
        let size_x = rng.gen_range(0.12..0.4) * wf;
        let size_y = rng.gen_range(0.15..0.5) * hf;
        let cx = rng.gen_range(0.0..wf);
        let cy = rng.gen_range(0.0..hf);
        let shape = if rng.gen_bool(0.5) {
            Shape::Rect { x0: cx - size_x / 2.0, y0: cy - size_y / 2.0, x1: cx + size_x / 2.0, y1: cy + size_y / 2.0 }
        } else {
            Shape::Ellipse { cx, cy, rx: size_x / 2.0, ry: size_y / 2.0 }
        };
        let disparity = rng.gen_range(bg_d + 1.0..=max_d);
        layers.push(Layer { shape, disparity, texture: Texture::random(&mut rng) });
    }
    // front-most first
    layers.sort_by(|a, b| b.disparity.total_cmp(&a.disparity));

    let channels = if params.color { 3 } else { 1 };
    let noise = Normal::new(0.0, params.noise.max(0.0)).expect("finite noise level");
    let render = |shift: bool, rng: &mut ChaCha8Rng| {
        let mut planes = vec![Vec::with_capacity(w * h); channels];
        let mut disp = Vec::with_capacity(w * h);
        for y in 0..h {
            let v = y as f64;
            for x in 0..w {
                let layer = layers
                    .iter()
                    .find(|l| l.shape.contains(x as f64 - if shift { l.disparity } else { 0.0 }, v))
                    .expect("background covers every pixel");
                let u = x as f64 - if shift { layer.disparity } else { 0.0 };
                disp.push(layer.disparity);
                for (c, plane) in planes.iter_mut().enumerate() {
                    let tc = if params.color { c } else { 0 };
                    let value = layer.texture.sample(tc, u, v) + noise.sample(rng);
                    plane.push(value.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        (PlanarImage::new(w, h, planes).expect("non-empty scene"), disp)
    };
    let (right, _) = render(false, &mut rng);
    let (left, disparity) = render(true, &mut rng);
    SyntheticPair { left, right, disparity }
}

/// `count` pairs with seeds `base_seed..base_seed + count`.
pub fn generate_set(base_seed: u64, count: usize, params: &SceneParams) -> Vec<SyntheticPair> {
    (0..count as u64).map(|i| generate_pair(base_seed + i, params)).collect()
}

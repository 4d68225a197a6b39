//! The stereo pair codec.
//!
//! The right view is coded on its own. A disparity map estimated on the
//! original pair is subsampled and coded as a second stream, and the decoded
//! right view is warped through it to predict the left view. The left stream
//! carries the transform-coded prediction residual, with an entropy model
//! whose scales may be conditioned on the transform of the prediction (or of
//! the unwarped right view).
//!
//! Everything on the decoder side is derived from decoded data, so the
//! encoder's reconstructions are exactly what [`decode_pair`] produces.

pub mod bitstream;
mod coeffs;
mod dispstream;

pub use bitstream::{Bitstream, Header};

use bitstream::{FLAG_ALIGN, FLAG_COLOR, FLAG_DISPARITY, FLAG_PRIOR, FLAG_PRN, HEADER_LEN};

use crate::disparity::{estimate_disparity, DisparityMap, MatchParams};
use crate::entropy::{RangeDecoder, RangeEncoder};
use crate::image::{mse, psnr_from_mse, to_luma, FloatPlane, PlanarImage};
use crate::transform::{forward_dct8, CoeffPlane};
use crate::warp::{refine_prior, warp_right_to_left};
use crate::{Error, Result};

pub const DEFAULT_W_PRIOR: f64 = 0.5;
pub const DISPARITY_DOWNSAMPLE: usize = 4;
/// Luma SAD units traded per disparity bit when the encoder smooths the grid.
pub const DISPARITY_RD_MU: f64 = 32.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    /// Quantization step of the right view.
    pub qp_r: f64,
    /// Quantization step of the left residual.
    pub qp_l: f64,
    pub match_params: MatchParams,
    pub use_disparity: bool,
    pub use_prior: bool,
    pub align_prior: bool,
    pub use_prn: bool,
    pub w_prior: f64,
    pub disparity_downsample: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            qp_r: 16.0,
            qp_l: 16.0,
            match_params: MatchParams::default(),
            use_disparity: true,
            use_prior: true,
            align_prior: true,
            use_prn: true,
            w_prior: DEFAULT_W_PRIOR,
            disparity_downsample: DISPARITY_DOWNSAMPLE,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, qp) in [("qp_r", self.qp_r), ("qp_l", self.qp_l)] {
            if !(qp.is_finite() && qp > 0.0 && qp <= f64::from(f32::MAX)) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {qp}")));
            }
        }
        if !(self.w_prior.is_finite() && self.w_prior >= 0.0) {
            return Err(Error::InvalidParameter(format!("w_prior must be non-negative, got {}", self.w_prior)));
        }
        if self.disparity_downsample != DISPARITY_DOWNSAMPLE {
            return Err(Error::InvalidParameter(format!(
                "disparity_downsample must be {DISPARITY_DOWNSAMPLE}, got {}",
                self.disparity_downsample
            )));
        }
        if self.align_prior && !self.use_prior {
            return Err(Error::InvalidParameter("align_prior requires use_prior".into()));
        }
        if self.use_prn && !self.align_prior {
            return Err(Error::InvalidParameter("use_prn requires align_prior".into()));
        }
        if self.align_prior && !self.use_disparity {
            return Err(Error::InvalidParameter("align_prior requires use_disparity".into()));
        }
        self.match_params.validate()
    }

    /// Flag settings of an ablation case; steps and weights are kept.
    pub fn with_case(mut self, case: AblationCase) -> Self {
        let (d, p, a, n) = case.flags();
        self.use_disparity = d;
        self.use_prior = p;
        self.align_prior = a;
        self.use_prn = n;
        self
    }

    /// The case whose flags match, if any.
    pub fn case(&self) -> Option<AblationCase> {
        let flags = (self.use_disparity, self.use_prior, self.align_prior, self.use_prn);
        AblationCase::ALL.into_iter().find(|c| c.flags() == flags)
    }

    fn header_flags(&self, color: bool) -> u8 {
        let mut f = 0;
        for (on, bit) in [
            (self.use_disparity, FLAG_DISPARITY),
            (self.use_prior, FLAG_PRIOR),
            (self.align_prior, FLAG_ALIGN),
            (self.use_prn, FLAG_PRN),
            (color, FLAG_COLOR),
        ] {
            if on {
                f |= bit;
            }
        }
        f
    }

    /// Real-valued parameters as the decoder will see them after the header
    /// round trip.
    fn as_transmitted(&self) -> Self {
        let mut c = self.clone();
        c.qp_r = f64::from(self.qp_r as f32);
        c.qp_l = f64::from(self.qp_l as f32);
        c.w_prior = f64::from(self.w_prior as f32);
        c
    }

    fn from_header(h: &Header) -> Result<Self> {
        let cfg = Self {
            qp_r: f64::from(h.qp_r),
            qp_l: f64::from(h.qp_l),
            match_params: MatchParams::with_max_disparity(usize::from(h.max_disparity)),
            use_disparity: h.has(FLAG_DISPARITY),
            use_prior: h.has(FLAG_PRIOR),
            align_prior: h.has(FLAG_ALIGN),
            use_prn: h.has(FLAG_PRN),
            w_prior: f64::from(h.w_prior),
            disparity_downsample: DISPARITY_DOWNSAMPLE,
        };
        cfg.validate().map_err(|e| Error::BadBitstream(format!("invalid header: {e}")))?;
        Ok(cfg)
    }
}

/// Feature settings compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationCase {
    /// Both views coded independently.
    Case1,
    /// Disparity-compensated prediction, no cross-view prior.
    Case2,
    /// Prior taken from the unwarped right view.
    Case3,
    /// Prior taken from the warped prediction.
    Case4,
    /// Warped prior with refinement.
    Full,
}

impl AblationCase {
    pub const ALL: [AblationCase; 5] = [Self::Case1, Self::Case2, Self::Case3, Self::Case4, Self::Full];

    /// `(use_disparity, use_prior, align_prior, use_prn)`.
    pub fn flags(self) -> (bool, bool, bool, bool) {
        match self {
            Self::Case1 => (false, false, false, false),
            Self::Case2 => (true, false, false, false),
            Self::Case3 => (true, true, false, false),
            Self::Case4 => (true, true, true, false),
            Self::Full => (true, true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Case1 => "case1",
            Self::Case2 => "case2",
            Self::Case3 => "case3",
            Self::Case4 => "case4",
            Self::Full => "full",
        }
    }
}

impl std::fmt::Display for AblationCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rate and quality of a coded pair: bits per pixel averaged over both
/// views, PSNR averaged over both views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RDPoint {
    pub bpp: f64,
    pub psnr: f64,
}

/// Model-estimated bits per substream.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StreamBits {
    pub right: f64,
    pub disparity: f64,
    pub left: f64,
}

impl StreamBits {
    pub fn total(&self) -> f64 {
        self.right + self.disparity + self.left
    }
}

/// Everything the encoder knows after coding a pair.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bitstream: Bitstream,
    /// Decoder-side reconstructions.
    pub left: PlanarImage,
    pub right: PlanarImage,
    /// Rounded left-view prediction; absent when disparity is disabled.
    pub prediction: Option<PlanarImage>,
    /// Decoded full-resolution disparity.
    pub disparity: Option<DisparityMap>,
    pub estimated_bits: StreamBits,
}

impl Encoded {
    pub fn rd_point(&self, left: &PlanarImage, right: &PlanarImage) -> Result<RDPoint> {
        let pixels = (2 * left.width() * left.height()) as f64;
        let d_l = mse(left, &self.left)?;
        let d_r = mse(right, &self.right)?;
        Ok(RDPoint {
            bpp: self.bitstream.total_len() as f64 * 8.0 / pixels,
            psnr: (psnr_from_mse(d_l) + psnr_from_mse(d_r)) / 2.0,
        })
    }
}

fn check_pair(left: &PlanarImage, right: &PlanarImage) -> Result<()> {
    if !left.same_geometry(right) {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{}x{} vs right {}x{}x{}",
            left.width(),
            left.height(),
            left.channels(),
            right.width(),
            right.height(),
            right.channels()
        )));
    }
    if !matches!(left.channels(), 1 | 3) {
        return Err(Error::InvalidParameter(format!("{} channels", left.channels())));
    }
    let limit = usize::from(u16::MAX);
    if left.width() > limit || left.height() > limit {
        return Err(Error::InvalidParameter(format!(
            "{}x{} exceeds the {limit} pixel limit",
            left.width(),
            left.height()
        )));
    }
    Ok(())
}

fn planes_of(img: &PlanarImage) -> Vec<FloatPlane> {
    (0..img.channels()).map(|c| img.channel_plane(c)).collect()
}

fn transform_all(planes: &[FloatPlane]) -> Vec<CoeffPlane> {
    planes.iter().map(forward_dct8).collect()
}

struct Substream {
    bytes: Vec<u8>,
    bits: f64,
}

struct RightStage {
    stream: Substream,
    recon: PlanarImage,
}

fn encode_right(coeffs: &[CoeffPlane], qp_r: f64) -> Result<RightStage> {
    let mut enc = RangeEncoder::new();
    let res = coeffs::encode_planes(&mut enc, coeffs, qp_r, None, 0.0)?;
    Ok(RightStage {
        stream: Substream { bytes: enc.finish(), bits: res.estimated_bits },
        recon: PlanarImage::from_float_planes(&res.recon)?,
    })
}

struct DisparityStage {
    stream: Substream,
    map: DisparityMap,
}

fn encode_disparity(left: &PlanarImage, right: &PlanarImage, cfg: &CodecConfig) -> Result<DisparityStage> {
    let est = estimate_disparity(left, right, &cfg.match_params)?;
    let mut grid = dispstream::downsample(&est, cfg.disparity_downsample);
    dispstream::regularize(&mut grid, &to_luma(left), &to_luma(right), cfg.disparity_downsample, DISPARITY_RD_MU);
    let (bytes, bits) = dispstream::encode_grid(&grid);
    let map = dispstream::upsample(
        &grid,
        left.width(),
        left.height(),
        cfg.disparity_downsample,
        cfg.match_params.max_disparity,
    )?;
    Ok(DisparityStage { stream: Substream { bytes, bits }, map })
}

/// Left-view prediction and prior transforms, computed from decoded data.
struct SideInfo {
    prediction: Option<Vec<FloatPlane>>,
    prior: Option<Vec<CoeffPlane>>,
}

fn side_info(right_recon: &PlanarImage, d: Option<&DisparityMap>, cfg: &CodecConfig) -> Result<SideInfo> {
    let xr = planes_of(right_recon);
    let prediction = match d {
        Some(d) => Some(
            xr.iter()
                .map(|p| {
                    let (warped, mask) = warp_right_to_left(p, d)?;
                    if cfg.use_prn {
                        refine_prior(&warped, &mask)
                    } else {
                        Ok(warped)
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let prior = if cfg.use_prior {
        let src = match (&prediction, cfg.align_prior) {
            (Some(p), true) => p,
            _ => &xr,
        };
        Some(transform_all(src))
    } else {
        None
    };
    Ok(SideInfo { prediction, prior })
}

fn residual_coeffs(left: &PlanarImage, side: &SideInfo) -> Result<Vec<CoeffPlane>> {
    let mut planes = planes_of(left);
    if let Some(pred) = &side.prediction {
        for (p, q) in planes.iter_mut().zip(pred) {
            for (a, b) in p.values_mut().iter_mut().zip(q.values()) {
                *a -= b;
            }
        }
    }
    Ok(transform_all(&planes))
}

fn add_prediction(mut residual: Vec<FloatPlane>, side: &SideInfo) -> Result<PlanarImage> {
    if let Some(pred) = &side.prediction {
        for (p, q) in residual.iter_mut().zip(pred) {
            for (a, b) in p.values_mut().iter_mut().zip(q.values()) {
                *a += b;
            }
        }
    }
    PlanarImage::from_float_planes(&residual)
}

struct LeftStage {
    stream: Substream,
    recon: PlanarImage,
}

fn encode_left(residual: &[CoeffPlane], side: &SideInfo, qp_l: f64, w_prior: f64) -> Result<LeftStage> {
    let mut enc = RangeEncoder::new();
    let res = coeffs::encode_planes(&mut enc, residual, qp_l, side.prior.as_deref(), w_prior)?;
    Ok(LeftStage {
        stream: Substream { bytes: enc.finish(), bits: res.estimated_bits },
        recon: add_prediction(res.recon, side)?,
    })
}

/// Encode a rectified pair, returning reconstructions and rate estimates
/// alongside the bitstream.
pub fn encode_pair_detailed(left: &PlanarImage, right: &PlanarImage, cfg: &CodecConfig) -> Result<Encoded> {
    check_pair(left, right)?;
    cfg.validate()?;
    let cfg = cfg.as_transmitted();
    let right_stage = encode_right(&transform_all(&planes_of(right)), cfg.qp_r)?;
    let disp = if cfg.use_disparity { Some(encode_disparity(left, right, &cfg)?) } else { None };
    let side = side_info(&right_stage.recon, disp.as_ref().map(|d| &d.map), &cfg)?;
    let left_stage = encode_left(&residual_coeffs(left, &side)?, &side, cfg.qp_l, cfg.w_prior)?;

    let header = Header {
        flags: cfg.header_flags(left.channels() == 3),
        width: left.width() as u16,
        height: left.height() as u16,
        qp_r: cfg.qp_r as f32,
        qp_l: cfg.qp_l as f32,
        max_disparity: cfg.match_params.max_disparity as u16,
        w_prior: cfg.w_prior as f32,
    };
    let estimated_bits = StreamBits {
        right: right_stage.stream.bits,
        disparity: disp.as_ref().map_or(0.0, |d| d.stream.bits),
        left: left_stage.stream.bits,
    };
    let prediction = side.prediction.as_deref().map(PlanarImage::from_float_planes).transpose()?;
    let (disparity_bytes, disparity) = match disp {
        Some(d) => (d.stream.bytes, Some(d.map)),
        None => (Vec::new(), None),
    };
    Ok(Encoded {
        bitstream: Bitstream {
            header,
            right: right_stage.stream.bytes,
            disparity: disparity_bytes,
            left: left_stage.stream.bytes,
        },
        left: left_stage.recon,
        right: right_stage.recon,
        prediction,
        disparity,
        estimated_bits,
    })
}

pub fn encode_pair(left: &PlanarImage, right: &PlanarImage, cfg: &CodecConfig) -> Result<Bitstream> {
    encode_pair_detailed(left, right, cfg).map(|e| e.bitstream)
}

/// Decode both views; returns `(left, right)`.
pub fn decode_pair(bs: &Bitstream) -> Result<(PlanarImage, PlanarImage)> {
    let h = &bs.header;
    let cfg = CodecConfig::from_header(h)?;
    let (w, ht) = (usize::from(h.width), usize::from(h.height));
    if w == 0 || ht == 0 {
        return Err(Error::BadBitstream(format!("empty image {w}x{ht}")));
    }
    if !cfg.use_disparity && !bs.disparity.is_empty() {
        return Err(Error::BadBitstream("disparity payload present but disabled".into()));
    }
    let channels = if h.has(FLAG_COLOR) { 3 } else { 1 };

    let mut dec = RangeDecoder::new(&bs.right)?;
    let right =
        PlanarImage::from_float_planes(&coeffs::decode_planes(&mut dec, channels, w, ht, cfg.qp_r, None, 0.0)?)?;

    let disparity = if cfg.use_disparity {
        let f = cfg.disparity_downsample;
        let (gw, gh) = dispstream::grid_size(w, ht, f);
        let max_d = cfg.match_params.max_disparity;
        let grid = dispstream::decode_grid(&bs.disparity, gw, gh, max_d)?;
        Some(dispstream::upsample(&grid, w, ht, f, max_d)?)
    } else {
        None
    };

    let side = side_info(&right, disparity.as_ref(), &cfg)?;
    let mut dec = RangeDecoder::new(&bs.left)?;
    let residual = coeffs::decode_planes(&mut dec, channels, w, ht, cfg.qp_l, side.prior.as_deref(), cfg.w_prior)?;
    Ok((add_prediction(residual, &side)?, right))
}

/// Square-root-of-two spaced steps from 4 to 256.
pub fn default_qp_grid() -> Vec<f64> {
    (0..=12).map(|k| 4.0 * 2f64.powf(f64::from(k) / 2.0)).collect()
}

/// One grid point of the rate-distortion search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdCandidate {
    pub qp_r: f64,
    pub qp_l: f64,
    /// Estimated bits per pixel (both views, header included).
    pub rate: f64,
    /// Mean of the left and right squared errors.
    pub distortion: f64,
}

impl RdCandidate {
    pub fn cost(&self, lambda: f64) -> f64 {
        self.rate + lambda * self.distortion
    }
}

/// Estimated rate and measured distortion for every `(qp_r, qp_l)` in the
/// grid; the disparity analysis is shared by all points.
pub fn rd_candidates(
    left: &PlanarImage,
    right: &PlanarImage,
    template: &CodecConfig,
    qp_grid: &[f64],
) -> Result<Vec<RdCandidate>> {
    check_pair(left, right)?;
    if qp_grid.is_empty() {
        return Err(Error::InvalidParameter("empty qp grid".into()));
    }
    for &qp in qp_grid {
        let mut c = template.clone();
        c.qp_r = qp;
        c.qp_l = qp;
        c.validate()?;
    }
    let template = template.as_transmitted();
    let pixels = (2 * left.width() * left.height()) as f64;
    let right_coeffs = transform_all(&planes_of(right));
    let disp = if template.use_disparity { Some(encode_disparity(left, right, &template)?) } else { None };
    let disp_bits = disp.as_ref().map_or(0.0, |d| d.stream.bits);

    let mut out = Vec::with_capacity(qp_grid.len() * qp_grid.len());
    for &qp_r in qp_grid {
        let qp_r = f64::from(qp_r as f32);
        let right_stage = encode_right(&right_coeffs, qp_r)?;
        let d_r = mse(right, &right_stage.recon)?;
        let side = side_info(&right_stage.recon, disp.as_ref().map(|d| &d.map), &template)?;
        let residual = residual_coeffs(left, &side)?;
        for &qp_l in qp_grid {
            let qp_l = f64::from(qp_l as f32);
            let left_stage = encode_left(&residual, &side, qp_l, template.w_prior)?;
            let bits = right_stage.stream.bits + disp_bits + left_stage.stream.bits + (HEADER_LEN * 8) as f64;
            out.push(RdCandidate {
                qp_r,
                qp_l,
                rate: bits / pixels,
                distortion: (d_r + mse(left, &left_stage.recon)?) / 2.0,
            });
        }
    }
    Ok(out)
}

/// Minimizer of `rate + lambda * distortion`; ties go to the lower rate, then
/// to the earlier candidate.
pub fn select_candidate(candidates: &[RdCandidate], lambda: f64) -> Result<RdCandidate> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut best: Option<RdCandidate> = None;
    for &c in candidates {
        let better = match best {
            None => true,
            Some(b) => {
                let (jc, jb) = (c.cost(lambda), b.cost(lambda));
                jc < jb || (jc == jb && c.rate < b.rate)
            }
        };
        if better {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no rate-distortion candidates".into()))
}

/// Pick `(qp_r, qp_l)` from the grid for the given multiplier, then code the
/// pair with it and report the realized point.
pub fn rd_search(
    left: &PlanarImage,
    right: &PlanarImage,
    lambda: f64,
    qp_grid: &[f64],
    template: &CodecConfig,
) -> Result<(CodecConfig, RDPoint)> {
    let best = select_candidate(&rd_candidates(left, right, template, qp_grid)?, lambda)?;
    let cfg = CodecConfig { qp_r: best.qp_r, qp_l: best.qp_l, ..template.clone() };
    let point = encode_pair_detailed(left, right, &cfg)?.rd_point(left, right)?;
    Ok((cfg, point))
}

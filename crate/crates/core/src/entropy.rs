//! Range coding with discretized Gaussian models.
//!
//! # Byte stream
//!
//! The coder works on 16-bit cumulative frequency tables (`total = 2^16`).
//! The encoder keeps a 32-bit `range` and a `low` register with one carry bit.
//! Coding the interval `[cum, cum + freq)` does
//!
//! ```text
//! r      = range >> 16
//! low   += r * cum          (a carry out of bit 31 increments the bytes already
//!                            written, propagating through 0xFF bytes)
//! range  = r * freq
//! while range < 2^24:       emit low >> 24, low = (low << 8) mod 2^32, range <<= 8
//! ```
//!
//! `low` starts at 0 and `range` at `2^32 - 1`. Flushing writes the four bytes
//! of `low` big-endian, so an empty stream is exactly four bytes. The decoder
//! loads the first four bytes big-endian into `code`, computes
//! `target = min(code / (range >> 16), 2^16 - 1)`, finds the symbol whose
//! interval contains `target`, subtracts `r * cum` from `code`, sets
//! `range = r * freq` and shifts in one byte per renormalization step.
//! Reading past the end of the stream is an underrun.
//!
//! # Symbol alphabet
//!
//! A model covers the integers `[-S, S]` plus two escape symbols standing for
//! `-(S+1)` and `S+1`. After an escape, the excess `|v| - (S+1)` follows as an
//! order-0 Exp-Golomb code whose bits are coded with probability one half
//! each. Table order is `[neg escape, -S, ..., S, pos escape]`.

use std::sync::OnceLock;

use crate::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
/// Largest magnitude coded without an escape.
pub const SUPPORT: u32 = 255;
/// Model scale bounds relative to the quantization step.
pub const SIGMA_MIN_RATIO: f64 = 0.11;
pub const SIGMA_MAX_RATIO: f64 = 64.0;

const TOP: u32 = 1 << 24;
const HALF: u32 = PROB_TOTAL / 2;

fn normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Probability mass of the quantization bin around integer `k` under a
/// zero-mean Gaussian of scale `sigma`, with bin width `qp`.
pub fn gaussian_bin_probability(k: i64, sigma: f64, qp: f64) -> f64 {
    let t = qp / sigma;
    let m = k.unsigned_abs() as f64;
    if m == 0.0 {
        libm::erf(0.5 * t / std::f64::consts::SQRT_2)
    } else {
        normal_upper_tail((m - 0.5) * t) - normal_upper_tail((m + 0.5) * t)
    }
}

/// Clamp range for model scales at a given quantization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaBounds {
    pub min: f64,
    pub max: f64,
}

impl SigmaBounds {
    pub fn for_step(qp: f64) -> Self {
        Self { min: SIGMA_MIN_RATIO * qp, max: SIGMA_MAX_RATIO * qp }
    }

    pub fn clamp(&self, sigma: f64) -> f64 {
        if sigma.is_nan() {
            return self.min;
        }
        sigma.clamp(self.min, self.max)
    }
}

/// Integer cumulative table for a zero-mean discretized Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCdfModel {
    sigma: f64,
    qp: f64,
    support: u32,
    /// `cdf[i]` is the cumulative count before table entry `i`; the last
    /// entry equals `PROB_TOTAL`.
    cdf: Vec<u32>,
}

/// Where a value lands in a model's table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolSlot {
    pub index: usize,
    /// Exp-Golomb payload after an escape symbol.
    pub excess: Option<u64>,
}

impl GaussianCdfModel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn qp(&self) -> f64 {
        self.qp
    }

    pub fn support(&self) -> u32 {
        self.support
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    pub fn alphabet_size(&self) -> usize {
        self.cdf.len() - 1
    }

    #[inline]
    pub fn freq(&self, index: usize) -> u32 {
        self.cdf[index + 1] - self.cdf[index]
    }

    /// Frequency of integer value `k` within the core support.
    pub fn freq_of(&self, k: i64) -> u32 {
        assert!(k.unsigned_abs() <= u64::from(self.support));
        self.freq((k + i64::from(self.support) + 1) as usize)
    }

    pub fn escape_freq(&self) -> u32 {
        self.freq(0)
    }

    pub fn slot(&self, v: i32) -> SymbolSlot {
        let s = i64::from(self.support);
        let v = i64::from(v);
        if v.abs() <= s {
            SymbolSlot { index: (v + s + 1) as usize, excess: None }
        } else {
            let excess = (v.unsigned_abs()) - (s as u64 + 1);
            let index = if v < 0 { 0 } else { self.alphabet_size() - 1 };
            SymbolSlot { index, excess: Some(excess) }
        }
    }

    /// Table entry containing cumulative count `target`.
    fn lookup(&self, target: u32) -> usize {
        self.cdf.partition_point(|&c| c <= target) - 1
    }

    /// Ideal code length of `v`, escape payload included.
    pub fn cost_bits(&self, v: i32) -> f64 {
        let slot = self.slot(v);
        let base = f64::from(PROB_BITS) - f64::from(self.freq(slot.index)).log2();
        base + slot.excess.map_or(0.0, |e| exp_golomb_len(e) as f64)
    }
}

/// Number of bits in the order-0 Exp-Golomb code of `e`.
pub fn exp_golomb_len(e: u64) -> u32 {
    let n = 64 - (e + 1).leading_zeros();
    2 * n - 1
}

/// Build the integer table for `N(0, sigma^2)` discretized on bins of width
/// `qp`, with `support` core symbols per side. `sigma` is clamped to
/// [`SigmaBounds::for_step`]. Every entry gets at least one count and the
/// table is exactly symmetric.
pub fn build_gaussian_cdf(sigma: f64, qp: f64, support: u32) -> GaussianCdfModel {
    assert!(qp > 0.0 && qp.is_finite(), "quantization step must be positive");
    let sigma = SigmaBounds::for_step(qp).clamp(sigma);
    let s = support as usize;

    // one side: index 0 is the zero symbol, 1..=s the core, s+1 the escape
    let mut mass = Vec::with_capacity(s + 2);
    for k in 0..=s {
        mass.push(gaussian_bin_probability(k as i64, sigma, qp));
    }
    mass.push(normal_upper_tail((s as f64 + 0.5) * qp / sigma));

    // f_0 = 2 + 2 u_0 and f_k = 1 + u_k keep the total even and symmetric;
    // the u's share the remaining half-total by largest remainder.
    let half_units = (PROB_TOTAL - 2 - 2 * (support + 1)) / 2;
    let units = f64::from(half_units);
    let targets: Vec<f64> =
        mass.iter().enumerate().map(|(k, &p)| if k == 0 { p * units } else { 2.0 * p * units }).collect();
    let norm: f64 = targets.iter().sum::<f64>() / units;
    let mut u: Vec<u32> = targets.iter().map(|t| (t / norm).floor() as u32).collect();
    let assigned: u32 = u.iter().sum();
    let mut order: Vec<usize> = (0..u.len()).collect();
    let frac = |k: usize| targets[k] / norm - (targets[k] / norm).floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &k in order.iter().cycle().take(half_units.saturating_sub(assigned) as usize) {
        u[k] += 1;
    }

    let mut side: Vec<u32> = u.iter().enumerate().map(|(k, &x)| if k == 0 { 2 + 2 * x } else { 1 + x }).collect();
    // keep the zero symbol at least as likely as +-1
    while s >= 1 && side[0] < side[1] {
        let run_end = (1..=s).take_while(|&k| side[k] == side[1]).last().unwrap_or(1);
        if side[run_end] <= 1 {
            break;
        }
        side[run_end] -= 1;
        side[0] += 2;
    }

    let mut freqs = Vec::with_capacity(2 * s + 3);
    freqs.extend(side[1..].iter().rev());
    freqs.push(side[0]);
    freqs.extend(side[1..].iter());
    let mut cdf = Vec::with_capacity(freqs.len() + 1);
    let mut acc = 0u32;
    cdf.push(0);
    for f in freqs {
        acc += f;
        cdf.push(acc);
    }
    debug_assert_eq!(acc, PROB_TOTAL);
    GaussianCdfModel { sigma, qp, support, cdf }
}

/// Number of cached scale levels between the bounds.
pub const BANK_LEVELS: usize = 96;

/// Models for log-spaced `sigma / qp` ratios, shared by every stream.
/// The discretized Gaussian only depends on that ratio, so one bank serves
/// all quantization steps.
pub struct ModelBank {
    models: Vec<GaussianCdfModel>,
    log_min: f64,
    log_step: f64,
}

impl ModelBank {
    fn build() -> Self {
        let log_min = SIGMA_MIN_RATIO.ln();
        let log_step = (SIGMA_MAX_RATIO.ln() - log_min) / (BANK_LEVELS - 1) as f64;
        let models =
            (0..BANK_LEVELS).map(|i| build_gaussian_cdf((log_min + log_step * i as f64).exp(), 1.0, SUPPORT)).collect();
        Self { models, log_min, log_step }
    }

    pub fn global() -> &'static ModelBank {
        static BANK: OnceLock<ModelBank> = OnceLock::new();
        BANK.get_or_init(ModelBank::build)
    }

    pub fn level(&self, sigma: f64, qp: f64) -> usize {
        let ratio = SigmaBounds::for_step(1.0).clamp(sigma / qp);
        let i = ((ratio.ln() - self.log_min) / self.log_step).round();
        (i.max(0.0) as usize).min(BANK_LEVELS - 1)
    }

    /// Cached model nearest (in log scale) to `sigma` at step `qp`.
    pub fn model(&self, sigma: f64, qp: f64) -> &GaussianCdfModel {
        &self.models[self.level(sigma, qp)]
    }

    pub fn model_at(&self, level: usize) -> &GaussianCdfModel {
        &self.models[level]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandClass {
    Dc,
    /// Zig-zag bands 1 to 15.
    Low,
    /// Zig-zag bands 16 to 63.
    High,
}

impl BandClass {
    pub fn of_band(band: usize) -> Self {
        match band {
            0 => Self::Dc,
            1..=15 => Self::Low,
            _ => Self::High,
        }
    }
}

/// Evidence available to both encoder and decoder when a coefficient is coded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodingContext {
    pub band_class: BandClass,
    /// Dequantized magnitudes of the left, above and above-left neighbours in
    /// the same band; neighbours outside the image count as 0.
    pub neighbor_mags: [f64; 3],
    /// Magnitude estimate from the aligned cross-view prior.
    pub prior_mag: f64,
}

/// Scale for the next coefficient: the causal neighbour mean, optionally
/// blended with the prior as `(mean + w * prior) / (1 + w)`, then clamped.
pub fn predict_sigma(ctx: &CodingContext, use_prior: bool, w_prior: f64, bounds: SigmaBounds) -> f64 {
    let mut base = ctx.neighbor_mags.iter().sum::<f64>() / ctx.neighbor_mags.len() as f64;
    if use_prior {
        base = (base + w_prior * ctx.prior_mag) / (1.0 + w_prior);
    }
    bounds.clamp(base)
}

/// Carry-propagating range encoder.
#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, out: Vec::new() }
    }

    fn propagate_carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            let (v, overflow) = b.overflowing_add(1);
            *b = v;
            if !overflow {
                return;
            }
        }
    }

    /// Code the interval `[cum, cum + freq)` out of `2^16`.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low += u64::from(r) * u64::from(cum);
        self.range = r * freq;
        if self.low >> 32 != 0 {
            self.propagate_carry();
            self.low &= 0xFFFF_FFFF;
        }
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & 0xFFFF_FFFF;
            self.range <<= 8;
        }
    }

    pub fn encode_bit(&mut self, bit: bool) {
        self.encode(if bit { HALF } else { 0 }, HALF);
    }

    pub fn encode_symbol(&mut self, v: i32, model: &GaussianCdfModel) {
        let slot = model.slot(v);
        self.encode(model.cdf[slot.index], model.freq(slot.index));
        if let Some(e) = slot.excess {
            self.encode_exp_golomb(e);
        }
    }

    fn encode_exp_golomb(&mut self, e: u64) {
        let value = e + 1;
        let n = 64 - value.leading_zeros();
        for _ in 1..n {
            self.encode_bit(false);
        }
        for i in (0..n).rev() {
            self.encode_bit((value >> i) & 1 == 1);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.out.extend_from_slice(&(self.low as u32).to_be_bytes());
        self.out
    }
}

/// Decoder matching [`RangeEncoder`].
#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < 4 {
            return Err(Error::Underrun);
        }
        let code = u32::from_be_bytes([data[0], data[1], data[2], data[3]]);
        Ok(Self { data, pos: 4, code, range: u32::MAX })
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    fn target(&self) -> u32 {
        (self.code / (self.range >> PROB_BITS)).min(PROB_TOTAL - 1)
    }

    fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> PROB_BITS;
        self.code = self.code.wrapping_sub(r * cum);
        self.range = r * freq;
        while self.range < TOP {
            let b = *self.data.get(self.pos).ok_or(Error::Underrun)?;
            self.pos += 1;
            self.code = (self.code << 8) | u32::from(b);
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_bit(&mut self) -> Result<bool> {
        let bit = self.target() >= HALF;
        self.consume(if bit { HALF } else { 0 }, HALF)?;
        Ok(bit)
    }

    pub fn decode_symbol(&mut self, model: &GaussianCdfModel) -> Result<i32> {
        let index = model.lookup(self.target());
        self.consume(model.cdf[index], model.freq(index))?;
        let s = i64::from(model.support);
        let v = if index == 0 || index == model.alphabet_size() - 1 {
            let e = self.decode_exp_golomb()?;
            let mag = (s as u64 + 1)
                .checked_add(e)
                .filter(|&m| m <= 1 << 31)
                .ok_or_else(|| Error::BadBitstream("escape value out of range".into()))?;
            let mag = mag as i64;
            if index == 0 {
                -mag
            } else {
                mag
            }
        } else {
            index as i64 - s - 1
        };
        i32::try_from(v).map_err(|_| Error::BadBitstream("escape value out of range".into()))
    }

    fn decode_exp_golomb(&mut self) -> Result<u64> {
        let mut zeros = 0u32;
        while !self.decode_bit()? {
            zeros += 1;
            if zeros > 32 {
                return Err(Error::BadBitstream("Exp-Golomb prefix too long".into()));
            }
        }
        let mut value = 1u64;
        for _ in 0..zeros {
            value = (value << 1) | u64::from(self.decode_bit()?);
        }
        Ok(value - 1)
    }
}

/// Code `symbols`, asking `model_fn(i, &symbols[..i])` for the model of each
/// symbol in turn.
pub fn encode_symbols<'m, F>(symbols: &[i32], mut model_fn: F) -> Vec<u8>
where
    F: FnMut(usize, &[i32]) -> &'m GaussianCdfModel,
{
    let mut enc = RangeEncoder::new();
    for (i, &v) in symbols.iter().enumerate() {
        let model = model_fn(i, &symbols[..i]);
        enc.encode_symbol(v, model);
    }
    enc.finish()
}

/// Inverse of [`encode_symbols`]; `model_fn` sees only decoded history.
pub fn decode_symbols<'m, F>(bytes: &[u8], count: usize, mut model_fn: F) -> Result<Vec<i32>>
where
    F: FnMut(usize, &[i32]) -> &'m GaussianCdfModel,
{
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let model = model_fn(i, &out);
        let v = dec.decode_symbol(model)?;
        out.push(v);
    }
    Ok(out)
}

/// Ideal code length, `sum -log2 p(symbol)`, escape payloads included.
pub fn estimate_rate<'m, F>(symbols: &[i32], mut model_fn: F) -> f64
where
    F: FnMut(usize, &[i32]) -> &'m GaussianCdfModel,
{
    symbols.iter().enumerate().map(|(i, &v)| model_fn(i, &symbols[..i]).cost_bits(v)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson integration of the standard normal density.
    fn simpson_normal(a: f64, b: f64) -> f64 {
        let n = 2000;
        let h = (b - a) / n as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(x);
        }
        s * h / 3.0
    }

    #[test]
    fn bin_probability_matches_quadrature() {
        let p0 = gaussian_bin_probability(0, 1.0, 1.0);
        assert!((p0 - 0.38292).abs() < 1e-5);
        assert!((p0 - simpson_normal(-0.5, 0.5)).abs() < 1e-10);
        for k in [1i64, 2, 3, -4] {
            let want = simpson_normal((k.abs() as f64 - 0.5) / 2.5, (k.abs() as f64 + 0.5) / 2.5);
            assert!((gaussian_bin_probability(k, 2.5, 1.0) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn tables_are_valid_symmetric_and_monotone() {
        for i in 0..200 {
            let sigma = 0.05 * 1.05f64.powi(i);
            let m = build_gaussian_cdf(sigma, 1.0, SUPPORT);
            assert_eq!(*m.cdf().last().unwrap(), PROB_TOTAL);
            assert!(m.cdf().windows(2).all(|w| w[1] > w[0]), "sigma {sigma}");
            let n = m.alphabet_size();
            for k in 0..n {
                assert_eq!(m.freq(k), m.freq(n - 1 - k));
            }
            for k in 0..SUPPORT as i64 {
                assert!(m.freq_of(k) >= m.freq_of(k + 1), "sigma {sigma} k {k}");
            }
        }
    }

    #[test]
    fn sigma_is_clamped() {
        let m = build_gaussian_cdf(1e-6, 2.0, SUPPORT);
        assert_eq!(m.sigma(), 0.22);
        let m = build_gaussian_cdf(1e9, 2.0, SUPPORT);
        assert_eq!(m.sigma(), 128.0);
    }

    #[test]
    fn predict_sigma_examples() {
        let b = SigmaBounds::for_step(1.0);
        let mut ctx = CodingContext { band_class: BandClass::Low, neighbor_mags: [0.0; 3], prior_mag: 0.0 };
        assert_eq!(predict_sigma(&ctx, false, 0.5, b), 0.11);
        ctx.neighbor_mags = [4.0, 8.0, 0.0];
        assert_eq!(predict_sigma(&ctx, false, 0.5, b), 4.0);
        ctx.prior_mag = 12.0;
        assert!((predict_sigma(&ctx, true, 0.5, b) - 10.0 / 1.5).abs() < 1e-12);
        assert_eq!(BandClass::of_band(0), BandClass::Dc);
        assert_eq!(BandClass::of_band(15), BandClass::Low);
        assert_eq!(BandClass::of_band(16), BandClass::High);
    }

    #[test]
    fn empty_stream_is_flush_only() {
        let bytes = encode_symbols(&[], |_, _| unreachable!());
        assert!(bytes.len() <= 5);
        assert!(decode_symbols(&bytes, 0, |_, _| unreachable!()).unwrap().is_empty());
    }

    #[test]
    fn escapes_round_trip() {
        let bank = ModelBank::global();
        let vals = [0, 255, -255, 256, -256, 1000, -70000, i32::MAX, i32::MIN, 3];
        let model = bank.model(2.0, 1.0);
        let bytes = encode_symbols(&vals, |_, _| model);
        let back = decode_symbols(&bytes, vals.len(), |_, _| model).unwrap();
        assert_eq!(back, vals);
        let est = estimate_rate(&vals, |_, _| model);
        assert!(est > 0.0);
    }

    #[test]
    fn context_dependent_round_trip() {
        let bank = ModelBank::global();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<i32> = (0..5000).map(|i| rng.gen_range(-40..40) * (i % 3)).collect();
        let pick = |_: usize, hist: &[i32]| {
            let s = hist.last().map_or(1.0, |v| v.abs() as f64 + 0.5);
            bank.model(s, 1.0)
        };
        let bytes = encode_symbols(&vals, pick);
        assert_eq!(decode_symbols(&bytes, vals.len(), pick).unwrap(), vals);
    }

    #[test]
    fn truncated_stream_underruns() {
        let bank = ModelBank::global();
        let model = bank.model(30.0, 1.0);
        let vals: Vec<i32> = (0..400).map(|i| (i * 37 % 101) - 50).collect();
        let bytes = encode_symbols(&vals, |_, _| model);
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(decode_symbols(cut, vals.len(), |_, _| model), Err(Error::Underrun)));
        assert!(matches!(RangeDecoder::new(&bytes[..3]), Err(Error::Underrun)));
    }

    #[test]
    fn half_probability_symbol_is_one_bit() {
        let mut enc = RangeEncoder::new();
        enc.encode_bit(true);
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        assert!(dec.decode_bit().unwrap());
        assert_eq!(exp_golomb_len(0), 1);
        assert_eq!(exp_golomb_len(1), 3);
        assert_eq!(exp_golomb_len(6), 5);
    }

    fn sample(model: &GaussianCdfModel, rng: &mut ChaCha8Rng) -> i32 {
        let t = rng.gen_range(0..PROB_TOTAL);
        let idx = model.lookup(t);
        let s = model.support() as i32;
        if idx == 0 {
            -(s + 1 + rng.gen_range(0..20))
        } else if idx == model.alphabet_size() - 1 {
            s + 1 + rng.gen_range(0..20)
        } else {
            idx as i32 - s - 1
        }
    }

    #[test]
    fn realized_length_tracks_estimate() {
        let bank = ModelBank::global();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for level in [0, 10, 40, 70, BANK_LEVELS - 1] {
            let model = bank.model_at(level);
            let vals: Vec<i32> = (0..10_000).map(|_| sample(model, &mut rng)).collect();
            let est = estimate_rate(&vals, |_, _| model);
            let bytes = encode_symbols(&vals, |_, _| model);
            let real = 8.0 * bytes.len() as f64;
            assert!(real <= est * 1.01 + 64.0, "level {level}: {real} vs {est}");
            assert_eq!(decode_symbols(&bytes, vals.len(), |_, _| model).unwrap(), vals);
        }
    }
}

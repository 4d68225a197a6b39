use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereodc::codec::bitstream::{Bitstream, HEADER_LEN};
use stereodc::codec::{decode_pair, encode_pair_detailed, AblationCase, CodecConfig};
use stereodc::disparity::{
    aggregate_costs, estimate_disparity, select_disparity, CostVolume, DisparityMap, MatchParams,
};
use stereodc::entropy::{
    decode_symbols, encode_symbols, estimate_rate, predict_sigma, BandClass, CodingContext, ModelBank, SigmaBounds,
};
use stereodc::image::{decode_pnm, encode_pnm, psnr, to_luma, FloatPlane, PlanarImage};
use stereodc::transform::{dequantize, forward_dct8, inverse_dct8, quantize};
use stereodc::warp::{refine_prior, warp_right_to_left, ValidityMask};

fn image(w: usize, h: usize, c: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PlanarImage::new(w, h, (0..c).map(|_| (0..w * h).map(|_| rng.gen()).collect()).collect()).unwrap()
}

/// Smooth texture with some noise, shifted horizontally by `shift` pixels.
fn texture(w: usize, h: usize, c: usize, seed: u64, shift: usize) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy, ph): (f64, f64, f64) = (rng.gen_range(0.1..0.4), rng.gen_range(0.05..0.3), rng.gen_range(0.0..6.0));
    let planes = (0..c)
        .map(|ch| {
            (0..w * h)
                .map(|i| {
                    let x = (i % w + shift) as f64;
                    let y = (i / w) as f64;
                    let v = 128.0
                        + 60.0 * (fx * x + fy * y + ph + ch as f64).sin()
                        + 40.0 * (0.9 * fx * x * 0.37 - 1.3 * fy * y).cos() * (0.21 * x).sin()
                        + 10.0 * ((x * 1.7 + y * 0.4).sin() * 5.0).sin();
                    v.round().clamp(0.0, 255.0) as u8
                })
                .collect()
        })
        .collect();
    PlanarImage::new(w, h, planes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pnm_round_trip(w in 1usize..40, h in 1usize..40, color in any::<bool>(), seed in any::<u64>()) {
        let img = image(w, h, if color { 3 } else { 1 }, seed);
        let bytes = encode_pnm(&img);
        let back = decode_pnm(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(encode_pnm(&back), bytes);
    }

    #[test]
    fn luma_is_bounded(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let l = to_luma(&image(w, h, 3, seed));
        prop_assert!(l.values().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let (a, b) = (image(17, 9, 3, seed), image(17, 9, 3, seed ^ 1));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn selected_disparity_in_range(w in 1usize..12, h in 1usize..6, nd in 2usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = (0..w * h * nd).map(|_| rng.gen_range(0.0f32..100.0)).collect();
        let cv = CostVolume::new(w, h, nd, costs).unwrap();
        let d = select_disparity(&cv);
        prop_assert!(d.values().iter().all(|&v| usize::from(v) <= 4 * (nd - 1)));
    }

    #[test]
    fn zero_penalty_aggregation_keeps_argmin(w in 1usize..10, h in 1usize..6, nd in 2usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // integer costs keep the float sums exact
        let costs = (0..w * h * nd).map(|_| f32::from(rng.gen_range(0u8..50))).collect();
        let cv = CostVolume::new(w, h, nd, costs).unwrap();
        let p = MatchParams { max_disparity: nd - 1, block_radius: 0, sgm_p1: 0.0, sgm_p2: 0.0 };
        let agg = aggregate_costs(&cv, &p);
        let argmin = |v: &CostVolume, x, y| {
            let px = v.pixel(x, y);
            (0..nd).min_by(|&a, &b| px[a].partial_cmp(&px[b]).unwrap()).unwrap()
        };
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(argmin(&cv, x, y), argmin(&agg, x, y));
            }
        }
    }

    #[test]
    fn warp_is_a_convex_combination(w in 2usize..24, h in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = FloatPlane::from_fn(w, h, |_, _| rng.gen_range(-50.0..300.0));
        let maxd = 10;
        let d = DisparityMap::new(w, h, maxd, (0..w * h).map(|_| rng.gen_range(0..=4 * maxd as u16)).collect()).unwrap();
        let (out, _) = warp_right_to_left(&src, &d).unwrap();
        let lo = src.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = src.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.values().iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn zero_warp_then_refine_is_identity(w in 1usize..24, h in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = FloatPlane::from_fn(w, h, |_, _| rng.gen_range(0.0..255.0));
        let (out, mask) = warp_right_to_left(&src, &DisparityMap::zeros(w, h, 4)).unwrap();
        prop_assert_eq!(mask.count_valid(), w * h);
        prop_assert_eq!(refine_prior(&out, &mask).unwrap(), src.clone());
        prop_assert_eq!(refine_prior(&src, &ValidityMask::all_valid(w, h)).unwrap(), src);
    }

    #[test]
    fn dct_round_trip_and_quantizer_bound(w in 1usize..30, h in 1usize..30, qp in 0.5f64..64.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FloatPlane::from_fn(w, h, |_, _| rng.gen_range(-255.0..255.0));
        let c = forward_dct8(&p);
        let back = inverse_dct8(&c);
        for (a, b) in p.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let dq = dequantize(&quantize(&c, qp).unwrap(), qp);
        for (a, b) in c.values().iter().zip(dq.values()) {
            prop_assert!((a - b).abs() <= qp / 2.0 + 1e-9);
        }
    }

    #[test]
    fn range_coder_round_trips_any_sequence(
        symbols in prop::collection::vec(-400i32..400, 0..300),
        ratios in prop::collection::vec(0.05f64..80.0, 1..8),
    ) {
        let bank = ModelBank::global();
        let model = |i: usize, _: &[i32]| bank.model(ratios[i % ratios.len()], 1.0);
        let bytes = encode_symbols(&symbols, model);
        prop_assert_eq!(decode_symbols(&bytes, symbols.len(), model).unwrap(), symbols.clone());
        let est = estimate_rate(&symbols, model);
        prop_assert!((bytes.len() * 8) as f64 <= est * 1.01 + 64.0);
    }

    #[test]
    fn small_pairs_close_the_loop(w in 8usize..40, h in 8usize..24, color in any::<bool>(), case in 0usize..5, seed in any::<u64>()) {
        let c = if color { 3 } else { 1 };
        let left = texture(w, h, c, seed, 0);
        let right = texture(w, h, c, seed, 3);
        let cfg = CodecConfig {
            qp_r: 6.0 + (seed % 20) as f64,
            qp_l: 4.0 + (seed % 30) as f64,
            match_params: MatchParams::with_max_disparity(6),
            ..CodecConfig::default()
        }
        .with_case(AblationCase::ALL[case]);
        let enc = encode_pair_detailed(&left, &right, &cfg).unwrap();
        let bytes = enc.bitstream.to_bytes();
        prop_assert_eq!(bytes.len(), HEADER_LEN + enc.bitstream.right.len() + enc.bitstream.disparity.len() + enc.bitstream.left.len());
        let (l, r) = decode_pair(&Bitstream::from_bytes(&bytes).unwrap()).unwrap();
        prop_assert_eq!(l, enc.left);
        prop_assert_eq!(r, enc.right);
    }
}

#[test]
fn disparity_estimation_is_deterministic() {
    let (l, r) = (texture(64, 32, 3, 9, 0), texture(64, 32, 3, 9, 5));
    let p = MatchParams::with_max_disparity(12);
    let a = estimate_disparity(&l, &r, &p).unwrap();
    assert_eq!(a, estimate_disparity(&l, &r, &p).unwrap());
    let interior: Vec<u16> = (4..28).flat_map(|y| (16..60).map(move |x| (x, y))).map(|(x, y)| a.get(x, y)).collect();
    let hits = interior.iter().filter(|&&v| v == 20).count();
    assert!(hits * 100 >= interior.len() * 95, "{hits}/{}", interior.len());
}

/// Coefficients whose scale is known to a side channel up to noise: the
/// prior-conditioned model must spend fewer realized bits than the causal one.
#[test]
fn prior_lowers_realized_bits_on_correlated_sources() {
    let bank = ModelBank::global();
    let bounds = SigmaBounds::for_step(1.0);
    for (noise, strong) in [(0.1, true), (0.5, false)] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let mut scales = Vec::with_capacity(n);
        let mut symbols = Vec::with_capacity(n);
        for _ in 0..n {
            let s: f64 = (rng.gen_range(-1.0f64..4.0)).exp();
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            scales.push(s * (1.0 + noise * rng.gen_range(-1.0..1.0)));
            symbols.push((s * g).round() as i32);
        }
        let ctx = |i: usize, past: &[i32]| {
            let m = |k: usize| if i >= k { f64::from(past[i - k].unsigned_abs()) } else { 0.0 };
            CodingContext { band_class: BandClass::Low, neighbor_mags: [m(1), m(2), m(3)], prior_mag: scales[i] }
        };
        let bits = |use_prior: bool, w: f64| {
            let model = |i: usize, past: &[i32]| bank.model(predict_sigma(&ctx(i, past), use_prior, w, bounds), 1.0);
            let bytes = encode_symbols(&symbols, model);
            assert_eq!(decode_symbols(&bytes, n, model).unwrap(), symbols);
            bytes.len() * 8
        };
        let (without, with) = (bits(false, 0.0), bits(true, 4.0));
        assert!(with <= without, "noise {noise}: {with} vs {without}");
        if strong {
            assert!((with as f64) < 0.9 * without as f64, "{with} vs {without}");
        }
    }
}

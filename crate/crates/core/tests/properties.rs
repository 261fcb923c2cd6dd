use proptest::prelude::*;

use latentaudit::data::{decode_pnm, encode_pnm, parse_idx_images, quantize};
use latentaudit::distortions::{DistortionKind, DistortionSpec};
use latentaudit::models::{
    decode_checkpoint, encode_checkpoint, AnyModel, GeneratorModel, GeneratorSpec,
};
use latentaudit::recovery::{
    recover_one, recover_set, recover_set_with_ids, success_rate, PhiOperator, RecoveryConfig,
};
use latentaudit::stats::{
    frechet_gaussian_distance, histogram, ks_p_value, ks_two_sample, median, mre_gap, MIN_P_VALUE,
};
use latentaudit::{OptimizerConfig, Rng, Tensor};

fn sample(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, len)
}

fn tiny_generator(seed: u64) -> GeneratorModel {
    let spec = GeneratorSpec {
        latent_dim: 3,
        image_shape: [1, 16, 16],
        hidden_widths: vec![8],
        ..Default::default()
    };
    GeneratorModel::init(spec, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ks_is_symmetric_and_bounded(a in sample(1..60), b in sample(1..60)) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert_eq!(ab.d, ba.d);
        prop_assert_eq!(ab.p, ba.p);
        prop_assert!((0.0..=1.0).contains(&ab.d));
        prop_assert!((MIN_P_VALUE..=1.0).contains(&ab.p));
    }

    #[test]
    fn ks_of_a_sample_with_itself_is_zero(a in sample(1..80)) {
        let r = ks_two_sample(&a, &a).unwrap();
        prop_assert_eq!((r.d, r.p), (0.0, 1.0));
    }

    #[test]
    fn ks_p_decreases_with_d(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, n in 1usize..500, m in 1usize..500) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(ks_p_value(lo, n, m) + 1e-8 >= ks_p_value(hi, n, m));
    }

    #[test]
    fn median_matches_sort(v in sample(1..200)) {
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        prop_assert_eq!(median(&v).unwrap(), s[(s.len() - 1) / 2]);
    }

    #[test]
    fn median_ignores_order(mut v in sample(1..100), seed in any::<u64>()) {
        let m = median(&v).unwrap();
        Rng::new(seed, 0).shuffle(&mut v);
        prop_assert_eq!(median(&v).unwrap(), m);
    }

    #[test]
    fn gap_is_scale_invariant(t in 0.0f64..1.0, v in 1e-3f64..1.0, s in 1e-3f64..1e3) {
        let g = mre_gap(t, v).unwrap();
        prop_assert!((mre_gap(t * s, v * s).unwrap() - g).abs() < 1e-12);
        prop_assert!(g <= 1.0);
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_self(
        seed in any::<u64>(),
        n in 4usize..30,
        shift in -2.0f64..2.0,
    ) {
        let mut rng = Rng::new(seed, 0);
        let a: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(3)).collect();
        let b: Vec<Vec<f64>> = (0..n + 2)
            .map(|_| rng.normal_vec(3).into_iter().map(|x| x + shift).collect())
            .collect();
        let ab = frechet_gaussian_distance(&a, &b).unwrap();
        let ba = frechet_gaussian_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(frechet_gaussian_distance(&a, &a).unwrap() < 1e-9);
    }

    #[test]
    fn histogram_counts_every_value(a in sample(0..50), b in sample(1..50), bins in 1usize..30) {
        let h = histogram(&[("a", &a), ("b", &b)], bins).unwrap();
        prop_assert_eq!(h.counts[0].iter().sum::<usize>(), a.len());
        prop_assert_eq!(h.counts[1].iter().sum::<usize>(), b.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
    }

    #[test]
    fn pnm_bytes_round_trip(w in 1usize..9, h in 1usize..9, colour in any::<bool>(), seed in any::<u64>()) {
        let c = if colour { 3 } else { 1 };
        let mut rng = Rng::new(seed, 0);
        let mut bytes = format!("{}\n{w} {h}\n255\n", if colour { "P6" } else { "P5" }).into_bytes();
        bytes.extend((0..c * w * h).map(|_| rng.below(256) as u8));
        let img = decode_pnm(&bytes).unwrap();
        prop_assert_eq!(img.shape(), &[c, h, w][..]);
        prop_assert_eq!(encode_pnm(&img).unwrap(), bytes);
    }

    #[test]
    fn idx_pixels_map_back_to_bytes(n in 1usize..4, r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed, 0);
        let mut bytes = vec![0, 0, 8, 3];
        for d in [n, r, c] {
            bytes.extend((d as u32).to_be_bytes());
        }
        let payload: Vec<u8> = (0..n * r * c).map(|_| rng.below(256) as u8).collect();
        bytes.extend(&payload);
        let t = parse_idx_images(&bytes, None).unwrap();
        prop_assert_eq!(t.shape(), &[n, 1, r, c][..]);
        let back: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
        prop_assert_eq!(back, payload);
    }

    #[test]
    fn checkpoints_round_trip_and_detect_corruption(seed in any::<u64>(), flip in any::<prop::sample::Index>()) {
        let model: AnyModel = tiny_generator(seed).into();
        let bytes = encode_checkpoint(&model);
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        let mut bad = bytes.clone();
        let i = flip.index(bad.len());
        bad[i] ^= 0x5a;
        prop_assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn distortions_are_reproducible_and_bounded(
        seed in any::<u64>(),
        stream in 0u64..100,
        kind in prop::sample::select(DistortionKind::ALL.to_vec()),
    ) {
        let img = latentaudit::data::gen_synthetic(1, 16, seed).unwrap().image(0);
        let spec = match kind {
            DistortionKind::Warp => DistortionSpec::warp(1.5, seed),
            DistortionKind::PatchNoise => DistortionSpec::patch_noise(6, seed),
            DistortionKind::AdditiveNoise => DistortionSpec::additive(0.3, seed),
        };
        let a = spec.apply(&img, stream).unwrap();
        prop_assert_eq!(&a, &spec.apply(&img, stream).unwrap());
        prop_assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_strength_distortions_are_identity(seed in any::<u64>()) {
        let img = latentaudit::data::gen_synthetic(1, 16, seed).unwrap().image(0);
        for spec in [
            DistortionSpec::warp(0.0, seed),
            DistortionSpec::patch_noise(0, seed),
            DistortionSpec::additive(0.0, seed),
        ] {
            prop_assert_eq!(&spec.apply(&img, 3).unwrap(), &img);
        }
    }

    #[test]
    fn warp_stays_within_input_range(seed in any::<u64>(), sigma in 0.0f64..4.0) {
        let img = latentaudit::data::gen_synthetic(1, 16, seed).unwrap().image(0);
        let out = DistortionSpec::warp(sigma, seed).apply(&img, 0).unwrap();
        let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn rng_bounds(seed in any::<u64>(), stream in any::<u64>(), n in 1u64..1000) {
        let mut rng = Rng::new(seed, stream);
        for _ in 0..50 {
            prop_assert!(rng.below(n) < n);
            let u = rng.uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
        let mut again = Rng::new(seed, stream);
        let mut first = Rng::new(seed, stream);
        prop_assert_eq!(again.normal_vec(5), first.normal_vec(5));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn more_restarts_never_hurt(model_seed in 0u64..1000, target_seed in 0u64..1000, rng_seed in any::<u64>(), k in 2usize..5) {
        let g = tiny_generator(model_seed);
        let target = latentaudit::data::gen_synthetic(1, 16, target_seed).unwrap().image(0);
        let cfg = |restarts| RecoveryConfig {
            optimizer: OptimizerConfig { max_iters: 8, ..Default::default() },
            restarts,
            ..Default::default()
        };
        let one = recover_one(&g, &target, &PhiOperator::Identity, &cfg(1), &mut Rng::new(rng_seed, 0)).unwrap();
        let many = recover_one(&g, &target, &PhiOperator::Identity, &cfg(k), &mut Rng::new(rng_seed, 0)).unwrap();
        prop_assert!(many.final_mse <= one.final_mse);
        prop_assert_eq!(many.restart_errors[0], one.final_mse);
        prop_assert_eq!(many.final_mse, many.restart_errors.iter().copied().fold(f64::INFINITY, f64::min));
        for thr in [0.05, 0.1, 0.3] {
            prop_assert!(success_rate(std::slice::from_ref(&many), thr).unwrap() >= success_rate(std::slice::from_ref(&one), thr).unwrap());
        }
    }

    #[test]
    fn lbfgs_traces_never_increase(model_seed in 0u64..1000, target_seed in 0u64..1000, rng_seed in any::<u64>()) {
        let g = tiny_generator(model_seed);
        let target = latentaudit::data::gen_synthetic(1, 16, target_seed).unwrap().image(0);
        let cfg = RecoveryConfig {
            optimizer: OptimizerConfig { max_iters: 30, ..Default::default() },
            ..Default::default()
        };
        let r = recover_one(&g, &target, &PhiOperator::Identity, &cfg, &mut Rng::new(rng_seed, 0)).unwrap();
        prop_assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        let last = *r.trace.last().unwrap();
        prop_assert!((last - r.final_mse).abs() <= 1e-12 * last.max(1.0));
    }

    #[test]
    fn permuted_targets_give_permuted_results(seed in any::<u64>(), rot in 1usize..4) {
        let g = tiny_generator(seed % 1000);
        let ds = latentaudit::data::gen_synthetic(4, 16, seed).unwrap();
        let cfg = RecoveryConfig {
            optimizer: OptimizerConfig { max_iters: 6, ..Default::default() },
            seed,
            ..Default::default()
        };
        let ids: Vec<(u64, Tensor)> = (0..4).map(|i| (i as u64, ds.image(i))).collect();
        let mut rotated = ids.clone();
        rotated.rotate_left(rot);
        let a = recover_set_with_ids(&g, &ids, &PhiOperator::Identity, &cfg);
        let b = recover_set_with_ids(&g, &rotated, &PhiOperator::Identity, &cfg);
        for (k, (id, _)) in rotated.iter().enumerate() {
            prop_assert_eq!(b[k].as_ref().unwrap(), a[*id as usize].as_ref().unwrap());
        }
    }
}

#[test]
fn generated_images_are_mostly_recovered_verbatim() {
    let g = tiny_generator(7);
    let z = Tensor::new([20, 3], Rng::new(11, 1).normal_vec(60)).unwrap();
    let imgs = g.generate(&z).unwrap();
    let targets: Vec<Tensor> = (0..20).map(|i| imgs.index_axis0(i)).collect();
    let cfg = RecoveryConfig {
        restarts: 10,
        ..Default::default()
    };
    let results: Vec<_> = recover_set(&g, &targets, &PhiOperator::Identity, &cfg)
        .into_iter()
        .map(|r| r.unwrap())
        .collect();
    let rate = success_rate(&results, 0.025).unwrap();
    assert!(rate >= 0.9, "{rate}");
}

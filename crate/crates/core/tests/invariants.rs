use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sss_core::fixtures;
use sss_core::imageio::{linear_to_srgb, srgb_to_linear};
use sss_core::model::Model;
use sss_core::raster::{rasterize, RasterConfig, Splat2D};
use sss_core::relight::ReflectanceField;
use sss_core::render::{project_scene, RenderSettings};
use sss_core::shading::MaterialEdit;

const W: usize = 40;
const H: usize = 32;

fn splats(seed: u64, n: usize, azimuth: f64) -> Vec<Splat2D> {
    let model = fixtures::random_model(seed, n);
    let cam = fixtures::camera(azimuth, 20.0, W, H);
    project_scene(&model, &cam, &RenderSettings::default(), None)
}

fn attrs(seed: u64, n: usize, k: usize) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn srgb_round_trip(c in 0.0f64..=1.0) {
        prop_assert!((linear_to_srgb(srgb_to_linear(c)) - c).abs() < 1e-12);
        prop_assert!((srgb_to_linear(linear_to_srgb(c)) - c).abs() < 1e-12);
    }

    #[test]
    fn srgb_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(linear_to_srgb(lo) <= linear_to_srgb(hi));
    }

    #[test]
    fn alpha_and_transmittance_partition_unity(seed in 0u64..10_000, n in 1usize..60, az in -180.0f64..180.0) {
        let s = splats(seed, n, az);
        let gb = rasterize(&s, &vec![1.0; s.len()], 1, &[1.0], W, H, &RasterConfig::default());
        for p in 0..W * H {
            prop_assert!((0.0..=1.0).contains(&gb.alpha[p]));
            prop_assert_eq!(gb.alpha[p], 1.0 - gb.transmittance[p]);
            // All-ones attributes over an all-ones background sum to one.
            prop_assert!((gb.accum[p] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn background_enters_through_transmittance(seed in 0u64..10_000, n in 1usize..60, b in -2.0f64..2.0) {
        let s = splats(seed, n, 30.0);
        let a = attrs(seed, s.len(), 2);
        let cfg = RasterConfig::default();
        let clear = rasterize(&s, &a, 2, &[0.0, 0.0], W, H, &cfg);
        let filled = rasterize(&s, &a, 2, &[b, -b], W, H, &cfg);
        for p in 0..W * H {
            let t = clear.transmittance[p];
            prop_assert_eq!(filled.accum[2 * p], clear.accum[2 * p] + t * b);
            prop_assert_eq!(filled.accum[2 * p + 1], clear.accum[2 * p + 1] + t * -b);
        }
    }

    #[test]
    fn input_order_does_not_matter(seed in 0u64..10_000, n in 1usize..60) {
        let s = splats(seed, n, -60.0);
        let a = attrs(seed ^ 7, s.len(), 3);
        let cfg = RasterConfig::default();
        let gb = rasterize(&s, &a, 3, &[0.0; 3], W, H, &cfg);
        let mut perm: Vec<usize> = (0..s.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let s2: Vec<Splat2D> = perm.iter().map(|&i| s[i]).collect();
        let a2: Vec<f64> = perm.iter().flat_map(|&i| a[3 * i..3 * i + 3].to_vec()).collect();
        let shuffled = rasterize(&s2, &a2, 3, &[0.0; 3], W, H, &cfg);
        prop_assert_eq!(&gb.accum, &shuffled.accum);
        prop_assert_eq!(&gb.depth, &shuffled.depth);
        prop_assert_eq!(&gb.alpha, &shuffled.alpha);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..10_000, n in 1usize..20) {
        let bytes = fixtures::random_model(seed, n).to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_checkpoints_fail(seed in 0u64..1000, cut in 0.0f64..1.0) {
        let bytes = fixtures::random_model(seed, 3).to_bytes();
        let len = ((bytes.len() - 1) as f64 * cut) as usize;
        prop_assert!(Model::from_bytes(&bytes[..len]).is_err());
    }

    #[test]
    fn set_edits_are_idempotent(
        r in 0.0f64..=1.0, m in 0.0f64..=1.0, s in 0.0f64..=1.0,
        tint in proptest::array::uniform3(0.0f64..=4.0),
        opacity in 0.0f64..=4.0, o in 0.0f64..=1.0,
    ) {
        let e = MaterialEdit {
            roughness_set: Some(r),
            metalness_set: Some(m),
            subsurface_set: Some(s),
            basecolor_tint: Some(tint),
            opacity_scale: Some(opacity),
            ..Default::default()
        };
        let mut sp = sss_core::shading::ShadePixel {
            position: Default::default(),
            normal: sss_core::math::Vec3::z(),
            basecolor: sss_core::math::Vec3::new(0.3, 0.6, 0.9),
            roughness: 0.5,
            metalness: 0.5,
            subsurfaceness: 0.5,
            residual: sss_core::math::Vec3::new(0.1, 0.2, 0.3),
            incident: sss_core::math::Vec3::repeat(1.0),
            alpha: 1.0,
        };
        e.apply(&mut sp);
        prop_assert_eq!((sp.roughness, sp.metalness, sp.subsurfaceness), (r, m, s));
        let once = sp;
        // Only the set fields are idempotent once the tint has saturated or is 1.
        let sets = MaterialEdit { basecolor_tint: None, ..e.clone() };
        sets.apply(&mut sp);
        prop_assert_eq!(once, sp);
        let scaled = e.scaled_opacity(o);
        prop_assert!((0.0..=1.0).contains(&scaled));
    }

    #[test]
    fn reflectance_field_survives_half_precision(seed in 0u64..1000) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, lights) = (5, 3, 4);
        let f = ReflectanceField {
            width: w,
            height: h,
            basis: (0..lights).map(|_| (0..w * h * 3).map(|_| rng.random_range(0.0f32..8.0)).collect()).collect(),
            alpha: (0..w * h).map(|_| rng.random_range(0.0f32..=1.0)).collect(),
        };
        let back = ReflectanceField::from_bytes(&f.to_bytes()).unwrap();
        prop_assert_eq!((back.width, back.height, back.len()), (w, h, lights));
        for (a, b) in f.basis.iter().flatten().chain(&f.alpha).zip(back.basis.iter().flatten().chain(&back.alpha)) {
            prop_assert!((a - b).abs() <= a.abs() * 2f32.powi(-11) + 1e-7);
        }
    }
}

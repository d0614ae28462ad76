use sss_core::dataset::LightStage;
use sss_core::fixtures;
use sss_core::imageio::Image;
use sss_core::relight::{build_reflectance_field, ibl_compose, render_olat, sample_envmap};
use sss_core::render::RenderSettings;
use sss_core::scene::PointLight;
use sss_core::shading::MaterialEdit;

fn settings() -> RenderSettings {
    RenderSettings::default()
}

#[test]
fn zero_subsurface_scale_matches_the_surface_only_model() {
    for deferred in [true, false] {
        let mut model = fixtures::random_model(11, 40);
        model.deferred = deferred;
        let cam = fixtures::camera(20.0, 15.0, 48, 40);
        let light = fixtures::light(70.0, 40.0);
        let edit = MaterialEdit {
            subsurface_scale: Some(0.0),
            ..Default::default()
        };
        let edited = render_olat(&model, &cam, &light, &edit, &settings());
        model.shading.residual = false;
        let ablated = render_olat(&model, &cam, &light, &MaterialEdit::default(), &settings());
        assert_eq!(edited, ablated, "deferred = {deferred}");
    }
}

#[test]
fn full_subsurface_with_no_residual_is_black() {
    let model = fixtures::random_model(12, 40);
    let cam = fixtures::camera(-30.0, 10.0, 40, 40);
    let edit = MaterialEdit {
        subsurface_set: Some(1.0),
        residual_intensity: Some(0.0),
        ..Default::default()
    };
    let img = render_olat(&model, &cam, &fixtures::light(0.0, 60.0), &edit, &settings());
    assert!(img.data.iter().all(|&v| v == 0.0));
}

#[test]
fn light_intensity_is_linear() {
    let model = fixtures::random_model(13, 40);
    let cam = fixtures::camera(45.0, 25.0, 40, 32);
    let base = fixtures::light(100.0, 30.0);
    let a = render_olat(&model, &cam, &base, &MaterialEdit::default(), &settings());
    for k in [0.0, 0.25, 4.0] {
        let scaled = PointLight::new(base.position, base.intensity * k).unwrap();
        let b = render_olat(&model, &cam, &scaled, &MaterialEdit::default(), &settings());
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x * k, *y);
        }
    }
    let odd = PointLight::new(base.position, base.intensity * 0.37).unwrap();
    let b = render_olat(&model, &cam, &odd, &MaterialEdit::default(), &settings());
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x * 0.37 - y).abs() <= 1e-15 * (1.0 + x.abs()));
    }
}

fn random_env(seed: u64, w: usize) -> Image {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * (w / 2) * 3).map(|_| rng.random_range(0.0..5.0)).collect();
    Image::from_data(w, w / 2, 3, data).unwrap()
}

#[test]
fn rotating_the_envmap_by_one_stage_step_permutes_weights() {
    let stage = LightStage::standard(3.0).unwrap();
    let w = 128;
    let env = random_env(5, w);
    // One stage step is 360/16 degrees, i.e. w/16 texels.
    let shift = w / 16;
    let mut rotated = Image::new(w, w / 2, 3);
    for y in 0..w / 2 {
        for x in 0..w {
            let src = env.pixel(y * w + x).to_vec();
            rotated.pixel_mut(y * w + (x + shift) % w).copy_from_slice(&src);
        }
    }
    let a = sample_envmap(&env, &stage).unwrap();
    let b = sample_envmap(&rotated, &stage).unwrap();
    for ring in 0..stage.rings {
        for j in 0..stage.per_ring {
            let from = ring * stage.per_ring + j;
            let to = ring * stage.per_ring + (j + 1) % stage.per_ring;
            for c in 0..3 {
                assert!((a.weights[from][c] - b.weights[to][c]).abs() < 1e-9, "light {from}");
            }
            assert!((a.solid_angles[from] - b.solid_angles[to]).abs() < 1e-12);
        }
    }
}

#[test]
fn a_delta_envmap_lights_one_cell() {
    let stage = LightStage::standard(3.0).unwrap();
    let (w, h) = (64, 32);
    let mut env = Image::new(w, h, 3);
    let (x, y) = (9, 5);
    env.pixel_mut(y * w + x).copy_from_slice(&[10.0, 20.0, 30.0]);
    let s = sample_envmap(&env, &stage).unwrap();
    let lit: Vec<usize> = (0..stage.len()).filter(|&i| s.weights[i] != [0.0; 3]).collect();
    assert_eq!(lit.len(), 1);
    let i = lit[0];
    let d = sss_core::relight::equirect_direction(x, y, w, h);
    let nearest = (0..stage.len())
        .max_by(|&a, &b| stage.positions[a].normalize().dot(&d).total_cmp(&stage.positions[b].normalize().dot(&d)))
        .unwrap();
    assert_eq!(i, nearest);
    // The weight is the texel radiance times its share of the cell.
    let texel = (std::f64::consts::TAU / w as f64) * (std::f64::consts::PI / h as f64) * d.z.asin().cos();
    let share = texel / s.solid_angles[i];
    for (c, v) in [10.0, 20.0, 30.0].iter().enumerate() {
        assert!((s.weights[i][c] - v * share).abs() < 1e-12);
    }
}

#[test]
fn envmap_weights_compose_like_the_matching_light_sum() {
    let model = fixtures::random_model(14, 30);
    let cam = fixtures::camera(10.0, 20.0, 24, 24);
    let stage = LightStage::generate(3.0, 2, 4).unwrap();
    let field = build_reflectance_field(&model, &cam, &stage, &MaterialEdit::default(), &settings()).unwrap();
    let weights: Vec<[f64; 3]> = (0..stage.len()).map(|i| [i as f64 * 0.5, 1.0, 0.0]).collect();
    let composed = ibl_compose(&field, &weights).unwrap();
    let mut sum = vec![0.0; composed.data.len()];
    for (i, w) in weights.iter().enumerate() {
        let img = render_olat(&model, &cam, &stage.light(i), &MaterialEdit::default(), &settings());
        for (p, px) in img.data.chunks(3).enumerate() {
            for c in 0..3 {
                sum[p * 3 + c] += w[c] * px[c] as f32 as f64;
            }
        }
    }
    for (a, b) in composed.data.iter().zip(&sum) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

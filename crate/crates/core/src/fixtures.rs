//! Small seeded scenes for tests, benchmarks and the acceptance suite.

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::MlpParams;
use crate::math::Vec3;
use crate::model::Model;
use crate::scene::sh::SH_COEFFS;
use crate::scene::{Camera, Gaussian, GaussianInit, PointLight, Scene};

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_gaussian(rng: &mut impl Rng, half_extent: f64, scale_range: (f64, f64)) -> Gaussian {
    let (lo, hi) = (scale_range.0.ln(), scale_range.1.ln());
    let init = GaussianInit {
        mean: Vec3::from_fn(|_, _| rng.random_range(-half_extent..half_extent)),
        rotation: UnitQuaternion::from_scaled_axis(unit_vector(rng) * rng.random_range(0.0..3.0)),
        scale: Vec3::from_fn(|_, _| rng.random_range(lo..hi).exp()),
        opacity: rng.random_range(0.2..0.95),
        basecolor: Vec3::from_fn(|_, _| rng.random_range(0.1..0.9)),
        roughness: rng.random_range(0.2..0.9),
        metalness: rng.random_range(0.05..0.6),
        subsurfaceness: rng.random_range(0.1..0.9),
        normal: unit_vector(rng) * rng.random_range(0.5..2.0),
    };
    let mut g = Gaussian::new(&init);
    for c in 1..SH_COEFFS {
        g.vis_sh[c] = rng.random_range(-0.3..0.3);
    }
    g
}

/// `n` Gaussians scattered in a cube of half-size 0.5 around the origin.
pub fn random_scene(seed: u64, n: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n).map(|_| random_gaussian(&mut rng, 0.5, (0.04, 0.25))).collect();
    Scene::from_gaussians(gs)
}

pub fn random_model(seed: u64, n: usize) -> Model {
    Model::new(random_scene(seed, n), MlpParams::new(seed.wrapping_add(1), true))
}

/// Camera 2.5 units from the origin looking at it.
pub fn camera(azimuth: f64, elevation: f64, width: usize, height: usize) -> Camera {
    Camera::orbit(&Vec3::zeros(), azimuth, elevation, 2.5, 40.0, width, height).expect("valid fixture camera")
}

pub fn light(azimuth: f64, elevation: f64) -> PointLight {
    PointLight::new(crate::scene::direction_from_angles(azimuth, elevation) * 3.0, 2.0).expect("valid fixture light")
}

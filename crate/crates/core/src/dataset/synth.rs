//! A procedural translucent blob with known parameters, rendered under the light
//! stage by the engine itself. Training against it from a perturbed start shows
//! whether the pipeline can recover what produced the images.

use std::path::Path;

use nalgebra::UnitQuaternion;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{FrameEntry, LightStage, Manifest, Split};
use crate::error::{Error, Result};
use crate::field::features::gaussian_features;
use crate::field::MlpParams;
use crate::imageio::{write_float, write_image, Image};
use crate::math::{logit, Vec3};
use crate::model::Model;
use crate::render::{feature_context, forward, RenderSettings};
use crate::scene::sh::{constant, fit};
use crate::scene::{Camera, Gaussian, GaussianInit, Scene};
use crate::visibility::Bvh;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub gaussians: usize,
    pub frames: usize,
    pub train_frames: usize,
    pub resolution: usize,
    pub camera_distance: f64,
    pub fov_deg: f64,
    pub stage_radius: f64,
    /// Semi-axes of the ellipsoid shell carrying the Gaussians.
    pub shell: [f64; 3],
    /// Low roughness, mostly metallic and little subsurface scattering.
    pub glossy: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            gaussians: 200,
            frames: 80,
            train_frames: 64,
            resolution: 128,
            camera_distance: 2.0,
            fov_deg: 40.0,
            stage_radius: 3.0,
            shell: [0.5, 0.4, 0.35],
            glossy: false,
        }
    }
}

/// Mean incident light the ground-truth network is shifted toward.
const INCIDENT_TARGET: f64 = 2.0;
const SH_DIRECTIONS: usize = 64;

/// `n` nearly uniform unit vectors.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn shell_gaussians(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Gaussian> {
    let [a, b, c] = cfg.shell;
    let phase: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let wave = |p: &Vec3, k: usize, f: f64| 0.5 + 0.5 * (f * p.x + phase[k]).sin() * (f * p.y + phase[(k + 1) % 6]).cos();
    let tangent_sigma = 1.1 * (4.0 * std::f64::consts::PI * (a * b * c).powf(2.0 / 3.0) / cfg.gaussians as f64).sqrt();
    fibonacci_sphere(cfg.gaussians)
        .into_iter()
        .map(|u| {
            let mean = Vec3::new(a * u.x, b * u.y, c * u.z);
            let normal = Vec3::new(u.x / a, u.y / b, u.z / c).normalize();
            let rotation = UnitQuaternion::rotation_between(&Vec3::z(), &normal).unwrap_or_else(UnitQuaternion::identity);
            let mut g = Gaussian::new(&GaussianInit {
                mean,
                rotation,
                scale: Vec3::new(tangent_sigma, tangent_sigma, 0.15 * tangent_sigma),
                opacity: 0.9,
                basecolor: Vec3::new(
                    0.35 + 0.5 * wave(&mean, 0, 4.0),
                    0.25 + 0.4 * wave(&mean, 1, 3.0),
                    0.2 + 0.3 * wave(&mean, 2, 5.0),
                ),
                roughness: if cfg.glossy { 0.1 + 0.1 * wave(&mean, 3, 3.0) } else { 0.3 + 0.4 * wave(&mean, 3, 3.0) },
                metalness: if cfg.glossy { 0.6 + 0.3 * wave(&mean, 4, 2.0) } else { 0.05 + 0.2 * wave(&mean, 4, 2.0) },
                subsurfaceness: if cfg.glossy { 0.05 + 0.1 * wave(&mean, 5, 4.0) } else { 0.3 + 0.4 * wave(&mean, 5, 4.0) },
                normal,
            });
            g.vis_sh = constant(1.0);
            g
        })
        .collect()
}

/// The ground-truth shell with every visibility expansion left at 1.
pub fn shell_scene(cfg: &SynthConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Scene::from_gaussians(shell_gaussians(cfg, &mut rng))
}

/// Fits every Gaussian's visibility expansion to traced transmittance.
pub fn fit_visibility(scene: &mut Scene) -> Result<()> {
    let bvh = Bvh::build(&scene.gaussians)?;
    let dirs = fibonacci_sphere(SH_DIRECTIONS);
    let fitted: Vec<_> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let samples: Vec<(Vec3, f64)> =
                dirs.iter().map(|d| (*d, bvh.trace(&g.mean, d, Some(i), f64::INFINITY))).collect();
            fit(&samples, 1e-3)
        })
        .collect();
    for (g, c) in scene.gaussians.iter_mut().zip(fitted) {
        g.vis_sh = c;
    }
    Ok(())
}

fn stage_and_cameras(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(LightStage, Vec<(Camera, usize)>)> {
    let stage = LightStage::standard(cfg.stage_radius)?;
    let pairs = (0..cfg.frames)
        .map(|_| {
            let az = rng.random_range(0.0..360.0);
            let el = rng.random_range(5.0..60.0);
            let cam = Camera::orbit(&Vec3::zeros(), az, el, cfg.camera_distance, cfg.fov_deg, cfg.resolution, cfg.resolution)?;
            Ok((cam, rng.random_range(0..stage.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((stage, pairs))
}

/// Shifts the incident head so its mean output sits near the target, and
/// rejects networks with dead or saturated outputs.
fn calibrate_network(mlp: &mut MlpParams, inputs: &[[f64; crate::field::INPUT_DIM]]) -> bool {
    for _ in 0..8 {
        let outs = mlp.forward_batch(inputs);
        let n = outs.len() as f64;
        for c in 0..3 {
            let mean = outs.iter().map(|o| o.incident[c]).sum::<f64>() / n;
            mlp.incident_out.bias[c] += INCIDENT_TARGET - mean;
        }
    }
    let outs = mlp.forward_batch(inputs);
    let n = outs.len() as f64;
    let dead = outs.iter().flat_map(|o| o.incident).filter(|&v| v <= 0.0).count() as f64 / (3.0 * n);
    let saturated = outs.iter().flat_map(|o| o.residual).filter(|&v| !(0.02..=0.98).contains(&v)).count() as f64 / (3.0 * n);
    let mean: f64 = outs.iter().flat_map(|o| o.incident).sum::<f64>() / (3.0 * n);
    dead < 0.02 && saturated < 0.02 && (mean - INCIDENT_TARGET).abs() < 0.25
}

/// The ground-truth model and the (camera, light index, split) of each frame.
pub struct GroundTruth {
    pub model: Model,
    pub stage: LightStage,
    pub frames: Vec<(Camera, usize, Split)>,
}

pub fn ground_truth(cfg: &SynthConfig) -> Result<GroundTruth> {
    if cfg.gaussians == 0 || cfg.frames == 0 || cfg.train_frames > cfg.frames {
        return Err(Error::Config("synthetic dataset needs gaussians, frames >= 1 and train_frames <= frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scene = Scene::from_gaussians(shell_gaussians(cfg, &mut rng));
    fit_visibility(&mut scene)?;
    let (stage, pairs) = stage_and_cameras(cfg, &mut rng)?;

    let mut model = Model::new(scene, MlpParams::new(cfg.seed, true));
    let inputs: Vec<_> = pairs
        .iter()
        .flat_map(|(cam, l)| {
            let ctx = feature_context(&model, cam, &stage.light(*l));
            model.scene.gaussians.iter().map(move |g| gaussian_features(g, &ctx).0.to_array())
        })
        .collect();
    let mut attempt = 0u64;
    loop {
        let mut mlp = MlpParams::new(cfg.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)), true);
        if calibrate_network(&mut mlp, &inputs) {
            model.mlp = mlp;
            break;
        }
        attempt += 1;
        if attempt == 64 {
            return Err(Error::Dataset("no ground-truth network passed the range check".into()));
        }
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut split = vec![Split::Test; pairs.len()];
    for &i in &order[..cfg.train_frames] {
        split[i] = Split::Train;
    }
    let frames = pairs.into_iter().zip(split).map(|((c, l), s)| (c, l, s)).collect();
    Ok(GroundTruth {
        model: model.quantized(),
        stage,
        frames,
    })
}

/// Renders every frame of `gt` into `out`: float EXR images, binary PNG masks,
/// `manifest.json` and `ground_truth.ckpt`.
pub fn write_dataset(gt: &GroundTruth, out: &Path) -> Result<Manifest> {
    for dir in [out.to_path_buf(), out.join("images"), out.join("masks")] {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let settings = RenderSettings::default();
    let entries = gt
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, (cam, l, split))| {
            let fwd = forward(&gt.model, cam, &gt.stage.light(*l), &settings, None, false);
            let file = format!("images/{i:03}.exr");
            let mask_file = format!("masks/{i:03}.png");
            write_float(&out.join(&file), &fwd.rgb())?;
            write_image(&out.join(&mask_file), &binary_mask(&fwd.alpha()))?;
            Ok(FrameEntry::from_camera(file, mask_file, *l, cam, *split))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        lights: gt.stage.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
        frames: entries,
    };
    manifest.save(&out.join("manifest.json"))?;
    gt.model.save(&out.join("ground_truth.ckpt"))?;
    Ok(manifest)
}

pub fn binary_mask(alpha: &Image) -> Image {
    alpha.map(|a| if a > 0.5 { 1.0 } else { 0.0 })
}

/// Generates the full synthetic dataset under `out`.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<GroundTruth> {
    let gt = ground_truth(cfg)?;
    write_dataset(&gt, out)?;
    Ok(gt)
}

/// Starting point for recovery: geometry jittered, materials and visibility
/// reset to neutral values, a fresh network.
pub fn perturbed_start(gt: &Model, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.01).expect("valid sigma");
    let gaussians = gt
        .scene
        .gaussians
        .iter()
        .map(|g| {
            let mut p = g.clone();
            for k in 0..3 {
                p.mean[k] += jitter.sample(&mut rng);
                p.log_scale[k] += rng.random_range(-0.2..0.2);
                p.normal[k] += 2.0 * jitter.sample(&mut rng);
            }
            p.opacity_logit = logit(0.5);
            p.basecolor_logit = Vec3::zeros();
            p.roughness_logit = 0.0;
            p.metalness_logit = logit(0.1);
            p.subsurface_logit = 0.0;
            p.vis_sh = constant(1.0);
            p
        })
        .collect();
    let mut scene = gt.scene.clone();
    scene.gaussians = gaussians;
    for g in &mut scene.gaussians {
        for k in 0..3 {
            g.mean[k] = g.mean[k].clamp(scene.bounds.min[k], scene.bounds.max[k]);
        }
    }
    let mut m = Model::new(scene, MlpParams::new(seed.wrapping_add(1), true));
    m.shading = gt.shading;
    m.deferred = gt.deferred;
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            gaussians: 60,
            frames: 6,
            train_frames: 4,
            resolution: 32,
            ..Default::default()
        }
    }

    #[test]
    fn ground_truth_is_deterministic_and_in_range() {
        let a = ground_truth(&small()).unwrap();
        let b = ground_truth(&small()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.frames.iter().filter(|f| f.2 == Split::Train).count(), 4);
        let fwd = forward(&a.model, &a.frames[0].0, &a.stage.light(a.frames[0].1), &RenderSettings::default(), None, false);
        assert!(fwd.image.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(fwd.gbuffer.alpha.iter().any(|&x| x > 0.5));
    }

    #[test]
    fn visibility_fit_darkens_the_inside() {
        let gt = ground_truth(&small()).unwrap();
        let g = &gt.model.scene.gaussians[0];
        let outward = g.unit_normal();
        let out = crate::scene::eval_sh(&g.vis_sh, &outward);
        let inward = crate::scene::eval_sh(&g.vis_sh, &-outward);
        assert!(out > inward, "{out} vs {inward}");
    }
}

//! Ray-traced transmittance through the Gaussian cloud and the per-Gaussian
//! visibility targets that supervise the learned visibility term.

pub mod bvh;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use bvh::Bvh;

use crate::math::{Mat3, Vec3};
use crate::raster::MAX_MAHALANOBIS;
use crate::scene::{Aabb, Gaussian, PointLight};

/// What a ray needs to know about one Gaussian.
#[derive(Clone, Copy, Debug)]
pub struct Blocker {
    pub mean: Vec3,
    pub precision: Mat3,
    pub opacity: f64,
    /// 3σ bounds of the ellipsoid.
    pub bounds: Aabb,
}

impl Blocker {
    pub fn new(g: &Gaussian) -> Self {
        let sigma = g.covariance();
        let precision = sigma.try_inverse().unwrap_or_else(Mat3::zeros);
        let half = Vec3::from_fn(|k, _| 3.0 * sigma[(k, k)].sqrt());
        Self {
            mean: g.mean,
            precision,
            opacity: g.opacity(),
            bounds: Aabb::new(g.mean - half, g.mean + half),
        }
    }

    /// Smallest Mahalanobis distance along `origin + t·dir`, `t ∈ [0, t_max]`.
    pub fn min_mahalanobis(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> f64 {
        let o = origin - self.mean;
        let pd = self.precision * dir;
        let a = dir.dot(&pd);
        let b = o.dot(&pd);
        let c = o.dot(&(self.precision * o));
        let t = if a > 0.0 { (-b / a).clamp(0.0, t_max) } else { 0.0 };
        (a * t * t + 2.0 * b * t + c).max(0.0)
    }

    /// Peak opacity met along the ray, or `None` when the ray stays outside 3σ.
    pub fn peak_alpha(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<f64> {
        let q = self.min_mahalanobis(origin, dir, t_max);
        (q <= MAX_MAHALANOBIS).then(|| self.opacity * (-0.5 * q).exp())
    }
}

/// Multiplies `1 - α` over hits in ascending Gaussian index so any traversal order
/// gives the same bits.
pub fn combine_hits(mut hits: Vec<(usize, f64)>) -> f64 {
    hits.sort_by_key(|h| h.0);
    hits.iter().fold(1.0, |t, &(_, a)| t * (1.0 - a))
}

/// Transmittance along a ray testing every Gaussian; the reference for [`Bvh`].
pub fn trace_brute_force(
    blockers: &[Blocker],
    origin: &Vec3,
    dir: &Vec3,
    exclude: Option<usize>,
    t_max: f64,
) -> f64 {
    let hits = blockers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .filter_map(|(i, b)| b.peak_alpha(origin, dir, t_max).map(|a| (i, a)))
        .collect();
    combine_hits(hits)
}

/// One supervised direction for a Gaussian's visibility.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisibilitySample {
    pub dir: Vec3,
    pub transmittance: f64,
}

/// Stratified, jittered directions over the upper (z ≥ 0) hemisphere.
pub fn hemisphere_directions(count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    const GOLDEN: f64 = 0.618_033_988_749_895;
    (0..count)
        .map(|k| {
            let z = (k as f64 + rng.random::<f64>()) / count as f64;
            let phi = std::f64::consts::TAU * ((k as f64 * GOLDEN + rng.random::<f64>() / count as f64) % 1.0);
            let r = (1.0 - z * z).max(0.0).sqrt();
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// For each Gaussian: transmittance toward `light` followed by `samples - 1`
/// hemisphere directions, always excluding the Gaussian itself.
pub fn visibility_targets(
    bvh: &Bvh,
    gaussians: &[Gaussian],
    light: &PointLight,
    samples: usize,
    seed: u64,
) -> Vec<Vec<VisibilitySample>> {
    (0..gaussians.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let origin = gaussians[i].mean;
            let to_light = light.position - origin;
            let dist = to_light.norm();
            let mut out = Vec::with_capacity(samples);
            if samples > 0 {
                let dir = if dist > 0.0 { to_light / dist } else { Vec3::z() };
                out.push(VisibilitySample {
                    dir,
                    transmittance: bvh.trace(&origin, &dir, Some(i), dist),
                });
            }
            for dir in hemisphere_directions(samples.saturating_sub(1), &mut rng) {
                out.push(VisibilitySample {
                    dir,
                    transmittance: bvh.trace(&origin, &dir, Some(i), f64::INFINITY),
                });
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianInit;

    #[test]
    fn hemisphere_directions_are_unit_and_upper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in hemisphere_directions(15, &mut rng) {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(d.z >= 0.0);
        }
    }

    #[test]
    fn ray_through_center_uses_full_opacity() {
        let g = Gaussian::new(&GaussianInit {
            opacity: 0.9,
            scale: Vec3::repeat(0.1),
            ..Default::default()
        });
        let b = Blocker::new(&g);
        let t = trace_brute_force(&[b], &Vec3::new(-1.0, 0.0, 0.0), &Vec3::x(), None, f64::INFINITY);
        assert!((t - 0.1).abs() < 1e-12);
    }
}

//! Adaptive density control: clone small and split large Gaussians with high
//! screen-space gradients, prune transparent ones, periodically reset opacity.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::field::adam::Adam;
use crate::math::{logit, Vec3};
use crate::raster::project::SplatGrad;
use crate::scene::{param, Gaussian, Scene, PARAMS_PER_GAUSSIAN};
use crate::scene::Camera;

/// Split children shrink their scale by this factor.
pub const SPLIT_SHRINK: f64 = 1.6;
/// Opacity ceiling applied by an opacity reset.
pub const RESET_OPACITY: f64 = 0.01;

#[derive(Clone, Debug, Default)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub visible: Vec<u32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            visible: vec![0; n],
        }
    }

    /// Accumulates the screen-space mean gradient of every visible Gaussian.
    pub fn record(&mut self, grads: &[(usize, SplatGrad)], cam: &Camera) {
        for (i, g) in grads {
            self.grad_sum[*i] += crate::raster::project::ndc_gradient_norm(g, cam);
            self.visible[*i] += 1;
        }
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.visible[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.visible[i] as f64
        }
    }
}

/// Half the diagonal of the scene bounds.
pub fn scene_extent(scene: &Scene) -> f64 {
    0.5 * scene.bounds.extent().norm()
}

/// One densify-and-prune pass. Optimizer rows follow the Gaussians: kept rows
/// keep their moments, new rows start at zero.
#[allow(clippy::too_many_arguments)]
pub fn densify_and_prune(
    scene: &mut Scene,
    stats: &DensifyStats,
    optim: &mut Adam,
    threshold: f64,
    percent_dense: f64,
    prune_opacity: f64,
    max_gaussians: usize,
    rng: &mut impl Rng,
) -> DensifyReport {
    let n = scene.len();
    let extent = scene_extent(scene);
    let mut report = DensifyReport::default();
    let mut keep = vec![true; n];
    let mut added: Vec<Gaussian> = Vec::new();
    for i in 0..n {
        if stats.average(i) < threshold || n + added.len() >= max_gaussians {
            continue;
        }
        let g = &scene.gaussians[i];
        let scale = g.scale();
        if scale.max() <= percent_dense * extent {
            added.push(g.clone());
            report.cloned += 1;
        } else {
            let r = g.rotation_matrix();
            for _ in 0..2 {
                let z = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
                let mut child = g.clone();
                child.mean = g.mean + r * scale.component_mul(&z);
                child.log_scale = g.log_scale.map(|s| s - SPLIT_SHRINK.ln());
                added.push(child);
            }
            keep[i] = false;
            report.split += 1;
        }
    }
    for (i, g) in scene.gaussians.iter().enumerate() {
        if keep[i] && g.opacity() < prune_opacity {
            keep[i] = false;
            report.pruned += 1;
        }
    }
    // Never prune the scene away entirely.
    if added.is_empty() && keep.iter().all(|k| !k) {
        let best = (0..n).max_by(|&a, &b| scene.gaussians[a].opacity().total_cmp(&scene.gaussians[b].opacity()));
        if let Some(b) = best {
            keep[b] = true;
            report.pruned -= 1;
        }
    }
    let old = std::mem::take(&mut scene.gaussians);
    scene.gaussians = old.into_iter().zip(&keep).filter_map(|(g, &k)| k.then_some(g)).collect();
    optim.retain_rows(PARAMS_PER_GAUSSIAN, &keep);
    let fresh = added.len();
    scene.gaussians.extend(added);
    optim.extend_rows(PARAMS_PER_GAUSSIAN, fresh);
    for g in &mut scene.gaussians {
        for k in 0..3 {
            g.mean[k] = g.mean[k].clamp(scene.bounds.min[k], scene.bounds.max[k]);
        }
    }
    report
}

/// Caps every opacity at [`RESET_OPACITY`] and clears the optimizer moments of
/// the opacity entries.
pub fn reset_opacity(scene: &mut Scene, optim: &mut Adam) {
    let cap = logit(RESET_OPACITY);
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        g.opacity_logit = g.opacity_logit.min(cap);
        let k = i * PARAMS_PER_GAUSSIAN + param::OPACITY;
        optim.m[k] = 0.0;
        optim.v[k] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clone_split_prune_counts() {
        let mut scene = fixtures::random_scene(5, 6);
        let extent = scene_extent(&scene);
        scene.gaussians[0].log_scale = Vec3::repeat((0.001 * extent).ln());
        scene.gaussians[1].log_scale = Vec3::repeat((0.2 * extent).ln());
        scene.gaussians[2].opacity_logit = logit(0.001);
        let mut stats = DensifyStats::new(6);
        stats.grad_sum[0] = 1.0;
        stats.visible[0] = 1;
        stats.grad_sum[1] = 1.0;
        stats.visible[1] = 1;
        let mut optim = Adam::new(6 * PARAMS_PER_GAUSSIAN, 0.1);
        optim.m.fill(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = densify_and_prune(&mut scene, &stats, &mut optim, 2e-4, 0.01, 0.005, 1000, &mut rng);
        assert_eq!(r, DensifyReport { cloned: 1, split: 1, pruned: 1 });
        assert_eq!(scene.len(), 6 + 1 + 2 - 1 - 1);
        assert_eq!(optim.len(), scene.len() * PARAMS_PER_GAUSSIAN);
        // Kept rows retain moments, new rows are zero.
        assert_eq!(optim.m[0], 1.0);
        assert!(optim.m[4 * PARAMS_PER_GAUSSIAN..].iter().all(|&m| m == 0.0));
        let child = &scene.gaussians[scene.len() - 1];
        assert!((child.scale().x - 0.2 * extent / SPLIT_SHRINK).abs() < 1e-9);
    }

    #[test]
    fn opacity_reset_caps_values() {
        let mut scene = fixtures::random_scene(1, 4);
        let mut optim = Adam::new(4 * PARAMS_PER_GAUSSIAN, 0.1);
        optim.v.fill(2.0);
        reset_opacity(&mut scene, &mut optim);
        for g in &scene.gaussians {
            assert!(g.opacity() <= RESET_OPACITY + 1e-12);
        }
        assert_eq!(optim.v[param::OPACITY], 0.0);
        assert_eq!(optim.v[0], 2.0);
    }
}

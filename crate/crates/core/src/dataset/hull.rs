//! Silhouette carving: the voxels every mask agrees on, used for scene bounds
//! and for seeding Gaussians on the hull surface.

use nalgebra::UnitQuaternion;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Frame;
use crate::error::{Error, Result};
use crate::field::MlpParams;
use crate::math::Vec3;
use crate::model::Model;
use crate::scene::sh::constant;
use crate::scene::{Aabb, Camera, Gaussian, GaussianInit, Scene};

pub const DEFAULT_RESOLUTION: usize = 64;
const MASK_THRESHOLD: f64 = 0.5;

pub struct VisualHull {
    pub grid: Aabb,
    pub resolution: usize,
    pub occupied: Vec<bool>,
}

/// Point nearest (in least squares) to every camera's optical axis.
fn axes_focus(cams: &[&Camera]) -> Vec3 {
    let mut a = nalgebra::Matrix3::zeros();
    let mut b = Vec3::zeros();
    for c in cams {
        let d = c.rotation().transpose() * Vec3::z();
        let p = nalgebra::Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * c.center();
    }
    a.try_inverse().map(|inv| inv * b).unwrap_or_else(Vec3::zeros)
}

/// `None` when the view does not see `p`, else whether `p` falls on the mask.
fn mask_at(frame: &Frame, p: &Vec3) -> Option<bool> {
    let cam = &frame.camera;
    let q = cam.to_camera(p);
    if q.z <= 1e-6 {
        return None;
    }
    let u = cam.fx * q.x / q.z + cam.cx;
    let v = cam.fy * q.y / q.z + cam.cy;
    if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
        return None;
    }
    Some(frame.mask.data[v as usize * cam.width + u as usize] > MASK_THRESHOLD)
}

impl VisualHull {
    pub fn carve(frames: &[&Frame], resolution: usize) -> Result<VisualHull> {
        if frames.is_empty() {
            return Err(Error::Dataset("no frames".into()));
        }
        let cams: Vec<&Camera> = frames.iter().map(|f| &f.camera).collect();
        let focus = axes_focus(&cams);
        let reach = cams.iter().map(|c| (c.center() - focus).norm()).fold(f64::INFINITY, f64::min);
        let half = Vec3::repeat(0.9 * reach);
        let grid = Aabb::new(focus - half, focus + half);
        let n = resolution;
        let occupied: Vec<bool> = (0..n * n * n)
            .into_par_iter()
            .map(|i| {
                let c = Self::cell_center(&grid, n, i);
                // Kept when at least half the views see it and none sees it outside.
                let mut seen = 0;
                for &f in frames {
                    match mask_at(f, &c) {
                        Some(false) => return false,
                        Some(true) => seen += 1,
                        None => {}
                    }
                }
                2 * seen >= frames.len()
            })
            .collect();
        if !occupied.iter().any(|&o| o) {
            return Err(Error::Dataset("masks carve away the whole volume".into()));
        }
        Ok(VisualHull {
            grid,
            resolution,
            occupied,
        })
    }

    fn cell_center(grid: &Aabb, n: usize, i: usize) -> Vec3 {
        let idx = [i % n, (i / n) % n, i / (n * n)];
        let e = grid.extent();
        Vec3::from_fn(|k, _| grid.min[k] + e[k] * (idx[k] as f64 + 0.5) / n as f64)
    }

    pub fn voxel_size(&self) -> f64 {
        self.grid.extent().x / self.resolution as f64
    }

    pub fn center(&self, i: usize) -> Vec3 {
        Self::cell_center(&self.grid, self.resolution, i)
    }

    /// Padded bounds of the occupied voxels.
    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        let h = Vec3::repeat(0.5 * self.voxel_size());
        for (i, _) in self.occupied.iter().enumerate().filter(|(_, &o)| o) {
            let c = self.center(i);
            b.grow(&(c - h));
            b.grow(&(c + h));
        }
        b.padded(0.1)
    }

    /// Occupied voxels with an empty face neighbour, each with the outward
    /// direction toward its empty neighbours.
    pub fn surface(&self) -> Vec<(Vec3, Vec3)> {
        let n = self.resolution as isize;
        let occ = |x: isize, y: isize, z: isize| {
            x >= 0 && y >= 0 && z >= 0 && x < n && y < n && z < n && self.occupied[(x + n * (y + n * z)) as usize]
        };
        let mut out = Vec::new();
        for i in 0..self.occupied.len() {
            if !self.occupied[i] {
                continue;
            }
            let (x, y, z) = (i as isize % n, (i as isize / n) % n, i as isize / (n * n));
            let mut dir = Vec3::zeros();
            for (k, d) in [(0, [1, 0, 0]), (1, [0, 1, 0]), (2, [0, 0, 1])] {
                for s in [-1isize, 1] {
                    if !occ(x + s * d[0], y + s * d[1], z + s * d[2]) {
                        dir[k] += s as f64;
                    }
                }
            }
            if dir != Vec3::zeros() {
                out.push((self.center(i), dir.normalize()));
            }
        }
        out
    }

    /// Up to `count` flat, faint Gaussians on the hull surface with neutral
    /// materials, plus a freshly initialized network.
    pub fn initial_model(&self, count: usize, seed: u64) -> Result<Model> {
        let mut surface = self.surface();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        surface.shuffle(&mut rng);
        surface.truncate(count);
        let v = self.voxel_size();
        let gaussians: Vec<Gaussian> = surface
            .iter()
            .map(|(p, n)| {
                let rotation = UnitQuaternion::rotation_between(&Vec3::z(), n).unwrap_or_else(UnitQuaternion::identity);
                let mut g = Gaussian::new(&GaussianInit {
                    mean: *p,
                    rotation,
                    scale: Vec3::new(v, v, 0.3 * v),
                    opacity: 0.1,
                    normal: *n,
                    ..Default::default()
                });
                g.vis_sh = constant(1.0);
                g
            })
            .collect();
        let scene = Scene::with_bounds(gaussians, self.bounds())?;
        Ok(Model::new(scene, MlpParams::new(seed, true)))
    }
}

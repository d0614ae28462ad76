//! Gaussian scene representation, cameras and lights.
//!
//! Every constrained attribute is stored in an unconstrained form (logits, log-scales,
//! a free quaternion and a free normal) so the optimizer never has to project. The
//! accessors apply the squashing functions at read time, so any raw value yields a
//! valid attribute.

pub mod sh;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, normalize, quat_to_matrix, sigmoid, Mat3, Vec3};
pub use sh::{eval_sh, SH_COEFFS, SH_DEGREE};

/// Lower bound applied to every scale axis at read time.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Number of raw parameters per Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 29;

/// Offsets of each field inside the flat per-Gaussian parameter record.
pub mod param {
    pub const MEAN: usize = 0;
    pub const ROTATION: usize = 3;
    pub const LOG_SCALE: usize = 7;
    pub const OPACITY: usize = 10;
    pub const BASECOLOR: usize = 11;
    pub const ROUGHNESS: usize = 14;
    pub const METALNESS: usize = 15;
    pub const SUBSURFACE: usize = 16;
    pub const NORMAL: usize = 17;
    pub const VIS_SH: usize = 20;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    /// Quaternion `(w, x, y, z)`; normalized at read.
    pub rotation: Vector4<f64>,
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub basecolor_logit: Vec3,
    pub roughness_logit: f64,
    pub metalness_logit: f64,
    pub subsurface_logit: f64,
    /// Free normal direction; normalized at read.
    pub normal: Vec3,
    pub vis_sh: [f64; SH_COEFFS],
}

/// Constrained attribute values used to build a [`Gaussian`].
#[derive(Clone, Debug)]
pub struct GaussianInit {
    pub mean: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vec3,
    pub opacity: f64,
    pub basecolor: Vec3,
    pub roughness: f64,
    pub metalness: f64,
    pub subsurfaceness: f64,
    pub normal: Vec3,
}

impl Default for GaussianInit {
    fn default() -> Self {
        Self {
            mean: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
            scale: Vec3::repeat(0.05),
            opacity: 0.9,
            basecolor: Vec3::repeat(0.5),
            roughness: 0.5,
            metalness: 0.0,
            subsurfaceness: 0.5,
            normal: Vec3::z(),
        }
    }
}

impl Gaussian {
    pub fn new(init: &GaussianInit) -> Self {
        let q = init.rotation.quaternion();
        Self {
            mean: init.mean,
            rotation: Vector4::new(q.w, q.i, q.j, q.k),
            log_scale: init.scale.map(|s| s.max(SCALE_FLOOR).ln()),
            opacity_logit: logit(init.opacity),
            basecolor_logit: init.basecolor.map(logit),
            roughness_logit: logit(init.roughness),
            metalness_logit: logit(init.metalness),
            subsurface_logit: logit(init.subsurfaceness),
            normal: init.normal,
            vis_sh: sh::constant(1.0),
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn basecolor(&self) -> Vec3 {
        self.basecolor_logit.map(sigmoid)
    }

    pub fn roughness(&self) -> f64 {
        sigmoid(self.roughness_logit)
    }

    pub fn metalness(&self) -> f64 {
        sigmoid(self.metalness_logit)
    }

    pub fn subsurfaceness(&self) -> f64 {
        sigmoid(self.subsurface_logit)
    }

    /// Unit normal; a degenerate raw normal reads as +z.
    pub fn unit_normal(&self) -> Vec3 {
        let (n, len) = normalize(&self.normal);
        if len > 0.0 {
            n
        } else {
            Vec3::z()
        }
    }

    /// Unit quaternion `(w, x, y, z)` and the raw quaternion length.
    pub fn unit_rotation(&self) -> (Vector4<f64>, f64) {
        let len = self.rotation.norm();
        if len > 0.0 {
            (self.rotation / len, len)
        } else {
            (Vector4::new(1.0, 0.0, 0.0, 0.0), 0.0)
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_matrix(&self.unit_rotation().0)
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(|l| l.exp().max(SCALE_FLOOR))
    }

    pub fn covariance(&self) -> Mat3 {
        covariance_from_parts(&self.rotation_matrix(), &self.scale())
    }

    pub fn write_params(&self, out: &mut [f64]) {
        assert_eq!(out.len(), PARAMS_PER_GAUSSIAN);
        out[param::MEAN..param::MEAN + 3].copy_from_slice(self.mean.as_slice());
        out[param::ROTATION..param::ROTATION + 4].copy_from_slice(self.rotation.as_slice());
        out[param::LOG_SCALE..param::LOG_SCALE + 3].copy_from_slice(self.log_scale.as_slice());
        out[param::OPACITY] = self.opacity_logit;
        out[param::BASECOLOR..param::BASECOLOR + 3].copy_from_slice(self.basecolor_logit.as_slice());
        out[param::ROUGHNESS] = self.roughness_logit;
        out[param::METALNESS] = self.metalness_logit;
        out[param::SUBSURFACE] = self.subsurface_logit;
        out[param::NORMAL..param::NORMAL + 3].copy_from_slice(self.normal.as_slice());
        out[param::VIS_SH..param::VIS_SH + SH_COEFFS].copy_from_slice(&self.vis_sh);
    }

    pub fn from_params(p: &[f64]) -> Self {
        assert_eq!(p.len(), PARAMS_PER_GAUSSIAN);
        let v3 = |o: usize| Vec3::new(p[o], p[o + 1], p[o + 2]);
        let mut vis_sh = [0.0; SH_COEFFS];
        vis_sh.copy_from_slice(&p[param::VIS_SH..param::VIS_SH + SH_COEFFS]);
        Self {
            mean: v3(param::MEAN),
            rotation: Vector4::new(
                p[param::ROTATION],
                p[param::ROTATION + 1],
                p[param::ROTATION + 2],
                p[param::ROTATION + 3],
            ),
            log_scale: v3(param::LOG_SCALE),
            opacity_logit: p[param::OPACITY],
            basecolor_logit: v3(param::BASECOLOR),
            roughness_logit: p[param::ROUGHNESS],
            metalness_logit: p[param::METALNESS],
            subsurface_logit: p[param::SUBSURFACE],
            normal: v3(param::NORMAL),
            vis_sh,
        }
    }

    pub fn params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        self.write_params(&mut p);
        p
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// `Σ = R · diag(s)² · Rᵀ`
pub fn build_covariance(rotation: &UnitQuaternion<f64>, scale: &Vec3) -> Mat3 {
    let r: Rotation3<f64> = rotation.to_rotation_matrix();
    covariance_from_parts(r.matrix(), scale)
}

pub fn covariance_from_parts(r: &Mat3, scale: &Vec3) -> Mat3 {
    let m = r * Mat3::from_diagonal(scale);
    m * m.transpose()
}

/// Backward of [`covariance_from_parts`]: returns `(dL/dR, dL/ds)`.
pub fn covariance_backward(r: &Mat3, scale: &Vec3, d_sigma: &Mat3) -> (Mat3, Vec3) {
    let m = r * Mat3::from_diagonal(scale);
    let d_m = (d_sigma + d_sigma.transpose()) * m;
    let mut d_r = Mat3::zeros();
    let mut d_s = Vec3::zeros();
    for j in 0..3 {
        for i in 0..3 {
            d_r[(i, j)] = d_m[(i, j)] * scale[j];
            d_s[j] += d_m[(i, j)] * r[(i, j)];
        }
    }
    (d_r, d_s)
}

/// Unnormalized Gaussian density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn eval_density(g: &Gaussian, x: &Vec3) -> Result<f64> {
    if !g.is_finite() {
        return Err(Error::InvalidGaussian {
            index: 0,
            reason: "non-finite parameters".into(),
        });
    }
    let sigma = g.covariance();
    let chol = sigma.cholesky().ok_or_else(|| Error::InvalidGaussian {
        index: 0,
        reason: "covariance is not positive definite".into(),
    })?;
    let d = x - g.mean;
    let q = d.dot(&chol.solve(&d));
    Ok((-0.5 * q).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self {
            min: [min.x, min.y, min.z],
            max: [max.x, max.y, max.z],
        }
    }

    pub fn min_v(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max_v(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn grow(&mut self, p: &Vec3) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        out.grow(&other.min_v());
        out.grow(&other.max_v());
        out
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] && other.max[k] <= self.max[k])
    }

    pub fn center(&self) -> Vec3 {
        (self.min_v() + self.max_v()) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max_v() - self.min_v()
    }

    /// Expands every side by `fraction` of the extent along that axis.
    pub fn padded(&self, fraction: f64) -> Aabb {
        let pad = self.extent() * fraction;
        Aabb::new(self.min_v() - pad, self.max_v() + pad)
    }

    /// Maps `p` into `[-1, 1]³` (affine; points outside the box map outside the cube).
    pub fn normalize_point(&self, p: &Vec3) -> Vec3 {
        let ext = self.extent().map(|e| e.max(1e-12));
        (p - self.min_v()).component_div(&ext) * 2.0 - Vec3::repeat(1.0)
    }

    /// Derivative of [`Aabb::normalize_point`] per axis.
    pub fn normalize_scale(&self) -> Vec3 {
        self.extent().map(|e| 2.0 / e.max(1e-12))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub bounds: Aabb,
}

impl Scene {
    /// Builds a scene whose bounds are the padded box around all means.
    pub fn from_gaussians(gaussians: Vec<Gaussian>) -> Self {
        let mut bounds = Aabb::empty();
        for g in &gaussians {
            bounds.grow(&g.mean);
        }
        if gaussians.is_empty() {
            bounds = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        }
        Self {
            gaussians,
            bounds: bounds.padded(0.25),
        }
    }

    pub fn with_bounds(gaussians: Vec<Gaussian>, bounds: Aabb) -> Result<Self> {
        let scene = Self { gaussians, bounds };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (index, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::InvalidGaussian {
                    index,
                    reason: "non-finite parameters".into(),
                });
            }
            if !self.bounds.contains(&g.mean) {
                return Err(Error::InvalidGaussian {
                    index,
                    reason: "mean outside scene bounds".into(),
                });
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * PARAMS_PER_GAUSSIAN];
        for (g, chunk) in self.gaussians.iter().zip(out.chunks_exact_mut(PARAMS_PER_GAUSSIAN)) {
            g.write_params(chunk);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.len() * PARAMS_PER_GAUSSIAN);
        for (g, chunk) in self.gaussians.iter_mut().zip(params.chunks_exact(PARAMS_PER_GAUSSIAN)) {
            *g = Gaussian::from_params(chunk);
        }
    }
}

/// Pinhole camera in the OpenCV convention (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub world_to_cam: Isometry3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        world_to_cam: Isometry3<f64>,
        focal: (f64, f64),
        principal: (f64, f64),
        resolution: (usize, usize),
    ) -> Result<Self> {
        let (fx, fy) = focal;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera(format!("focal must be positive, got ({fx}, {fy})")));
        }
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(Error::InvalidCamera("resolution must be non-zero".into()));
        }
        Ok(Self {
            world_to_cam,
            fx,
            fy,
            cx: principal.0,
            cy: principal.1,
            width: resolution.0,
            height: resolution.1,
        })
    }

    /// Camera at `eye` looking at `target`, vertical field of view in degrees.
    pub fn look_at(
        eye: &Vec3,
        target: &Vec3,
        up: &Vec3,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::x());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let c2w = Matrix3::from_columns(&[right, down, forward]);
        let rot = UnitQuaternion::from_matrix(&c2w.transpose());
        let t = -(rot * eye);
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self::new(
            Isometry3::from_parts(Translation3::from(t), rot),
            (fy, fy),
            (0.5 * width as f64, 0.5 * height as f64),
            (width, height),
        )
    }

    /// Camera on a sphere of radius `distance` around `target`, z up; angles in degrees.
    pub fn orbit(
        target: &Vec3,
        azimuth_deg: f64,
        elevation_deg: f64,
        distance: f64,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let eye = target + direction_from_angles(azimuth_deg, elevation_deg) * distance;
        Self::look_at(&eye, target, &Vec3::z(), fov_y_deg, width, height)
    }

    /// Builds a camera from a camera-to-world matrix (OpenCV axes).
    pub fn from_cam_to_world(
        c2w: &nalgebra::Matrix4<f64>,
        focal: (f64, f64),
        principal: (f64, f64),
        resolution: (usize, usize),
    ) -> Result<Self> {
        let r = c2w.fixed_view::<3, 3>(0, 0).into_owned();
        let det = r.determinant();
        if !det.is_finite() || (det - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidCamera(format!(
                "camera-to-world rotation is not a proper rotation (det {det})"
            )));
        }
        let rot = UnitQuaternion::from_matrix(&r);
        let t = Vec3::new(c2w[(0, 3)], c2w[(1, 3)], c2w[(2, 3)]);
        let c2w_iso = Isometry3::from_parts(Translation3::from(t), rot);
        Self::new(c2w_iso.inverse(), focal, principal, resolution)
    }

    pub fn cam_to_world_matrix(&self) -> nalgebra::Matrix4<f64> {
        self.world_to_cam.inverse().to_homogeneous()
    }

    pub fn center(&self) -> Vec3 {
        self.world_to_cam.inverse_transform_point(&Point3::origin()).coords
    }

    /// World-to-camera rotation.
    pub fn rotation(&self) -> Mat3 {
        *self.world_to_cam.rotation.to_rotation_matrix().matrix()
    }

    pub fn translation(&self) -> Vec3 {
        self.world_to_cam.translation.vector
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Same pose and field of view at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            world_to_cam: self.world_to_cam,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Unit vector for azimuth (from +x toward +y) and elevation (toward +z), in degrees.
pub fn direction_from_angles(azimuth_deg: f64, elevation_deg: f64) -> Vec3 {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// White point light.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointLight {
    pub position: Vec3,
    pub intensity: f64,
}

impl PointLight {
    pub fn new(position: Vec3, intensity: f64) -> Result<Self> {
        if !(intensity >= 0.0) || !intensity.is_finite() {
            return Err(Error::Config(format!("light intensity must be >= 0, got {intensity}")));
        }
        Ok(Self {
            position,
            intensity,
        })
    }

    pub fn unit(position: Vec3) -> Self {
        Self {
            position,
            intensity: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
        let v = Vector4::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]))
    }

    #[test]
    fn identity_covariance() {
        let sigma = build_covariance(&UnitQuaternion::identity(), &Vec3::repeat(1.0));
        assert!((sigma - Mat3::identity()).norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), PI / 2.0);
        let sigma = build_covariance(&q, &Vec3::new(2.0, 1.0, 1.0));
        let expected = Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0));
        assert!((sigma - expected).norm() < 1e-12);
    }

    #[test]
    fn eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = random_rotation(&mut rng);
            let s = Vec3::new(
                rng.random_range(0.1..3.0),
                rng.random_range(0.1..3.0),
                rng.random_range(0.1..3.0),
            );
            let sigma = build_covariance(&q, &s);
            assert!((sigma - sigma.transpose()).norm() < 1e-12);
            let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
            let mut expected: Vec<f64> = s.iter().map(|v| v * v).collect();
            eig.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10 * b.max(1.0));
            }
        }
    }

    #[test]
    fn covariance_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let q = random_rotation(&mut rng);
            let qp = random_rotation(&mut rng);
            let s = Vec3::new(0.3, 1.2, 2.5);
            let lhs = build_covariance(&(qp * q), &s);
            let rp = qp.to_rotation_matrix();
            let rhs = rp.matrix() * build_covariance(&q, &s) * rp.matrix().transpose();
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn covariance_backward_matches_finite_differences() {
        let r = quat_to_matrix(&Vector4::new(0.9, 0.2, -0.3, 0.1).normalize());
        let s = Vec3::new(0.4, 1.1, 0.7);
        let g = Mat3::new(0.5, 0.1, -0.2, 0.3, -0.7, 0.4, 0.05, 0.9, 0.2);
        let (_, d_s) = covariance_backward(&r, &s, &g);
        let f = |s: &Vec3| g.component_mul(&covariance_from_parts(&r, s)).sum();
        for k in 0..3 {
            let h = 1e-6;
            let mut sp = s;
            let mut sm = s;
            sp[k] += h;
            sm[k] -= h;
            let fd = (f(&sp) - f(&sm)) / (2.0 * h);
            assert!((fd - d_s[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn density_at_mean_is_one() {
        let g = Gaussian::new(&GaussianInit {
            mean: Vec3::new(1.0, 2.0, 3.0),
            ..Default::default()
        });
        assert_eq!(eval_density(&g, &g.mean).unwrap(), 1.0);
    }

    #[test]
    fn unit_isotropic_density_at_unit_distance() {
        let g = Gaussian::new(&GaussianInit {
            scale: Vec3::repeat(1.0),
            ..Default::default()
        });
        let v = eval_density(&g, &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_density_matches_direct_solve() {
        let g = Gaussian::new(&GaussianInit {
            rotation: UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1),
            scale: Vec3::new(0.5, 1.5, 0.2),
            mean: Vec3::new(0.1, -0.2, 0.3),
            ..Default::default()
        });
        let x = Vec3::new(0.4, 0.1, 0.2);
        let sigma = g.covariance();
        let inv = sigma.try_inverse().unwrap();
        let d = x - g.mean;
        let expected = (-0.5 * (d.transpose() * inv * d)[0]).exp();
        assert!((eval_density(&g, &x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gaussian_is_invalid() {
        let mut g = Gaussian::new(&GaussianInit::default());
        g.log_scale.x = f64::NAN;
        assert!(matches!(eval_density(&g, &Vec3::zeros()), Err(Error::InvalidGaussian { .. })));
    }

    #[test]
    fn density_integrates_to_normalizer() {
        // Monte Carlo over a box covering ±5σ along each world axis.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let q = random_rotation(&mut rng);
            let s = Vec3::new(
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
            );
            let g = Gaussian::new(&GaussianInit {
                rotation: q,
                scale: s,
                ..Default::default()
            });
            let sigma = g.covariance();
            let half: Vec3 = Vec3::from_fn(|k, _| 5.0 * sigma[(k, k)].sqrt());
            let volume = 8.0 * half.x * half.y * half.z;
            let n = 200_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let x = Vec3::new(
                    rng.random_range(-half.x..half.x),
                    rng.random_range(-half.y..half.y),
                    rng.random_range(-half.z..half.z),
                );
                acc += eval_density(&g, &x).unwrap();
            }
            let estimate = acc / n as f64 * volume;
            let expected = (2.0 * PI).powf(1.5) * sigma.determinant().sqrt();
            assert!(((estimate - expected) / expected).abs() < 0.02, "{estimate} vs {expected}");
        }
    }

    #[test]
    fn read_paths_stay_in_range_for_extreme_raw_values() {
        for raw in [-1e6, -50.0, -1.0, 0.0, 3.0, 80.0, 1e6] {
            let mut g = Gaussian::new(&GaussianInit::default());
            g.opacity_logit = raw;
            g.roughness_logit = raw;
            g.metalness_logit = -raw;
            g.subsurface_logit = raw;
            g.basecolor_logit = Vec3::new(raw, -raw, 0.5 * raw);
            g.log_scale = Vec3::repeat(raw.clamp(-700.0, 700.0));
            g.normal = Vec3::new(raw, 0.0, 1.0);
            for v in [g.opacity(), g.roughness(), g.metalness(), g.subsurfaceness()] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(g.basecolor().iter().all(|c| (0.0..=1.0).contains(c)));
            assert!(g.scale().iter().all(|s| *s >= SCALE_FLOOR));
            assert!((g.unit_normal().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip() {
        let g = Gaussian::new(&GaussianInit {
            mean: Vec3::new(0.2, 0.3, -0.1),
            rotation: UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            ..Default::default()
        });
        assert_eq!(Gaussian::from_params(&g.params()), g);
    }

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(&Vec3::new(0.0, -3.0, 1.0), &Vec3::zeros(), &Vec3::z(), 40.0, 64, 48)
            .unwrap();
        let t = cam.to_camera(&Vec3::zeros());
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12 && t.z > 0.0);
        assert!((cam.center() - Vec3::new(0.0, -3.0, 1.0)).norm() < 1e-12);
        // World up projects to image up (negative y).
        let up = cam.to_camera(&Vec3::new(0.0, 0.0, 0.5));
        assert!(up.y < 0.0);
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        let iso = Isometry3::identity();
        assert!(Camera::new(iso, (0.0, 1.0), (0.0, 0.0), (4, 4)).is_err());
        assert!(Camera::new(iso, (1.0, 1.0), (0.0, 0.0), (0, 4)).is_err());
    }
}

//! Per-Gaussian network inputs and their gradients with respect to the raw
//! Gaussian parameters.

use super::encoding::{encode_position, encode_position_backward};
use super::{input, MlpInput, INPUT_DIM};
use crate::math::{normalize, normalize4_backward, normalize_backward, quat_to_matrix_backward, Mat3, Vec3};
use crate::scene::sh::{eval_sh, eval_sh_backward};
use crate::scene::{param, Aabb, Gaussian, PARAMS_PER_GAUSSIAN, SCALE_FLOOR};

#[derive(Clone, Copy, Debug)]
pub struct FeatureContext {
    pub bounds: Aabb,
    pub camera_center: Vec3,
    pub light_position: Vec3,
}

/// Intermediate values of [`gaussian_features`] needed by the backward pass and
/// by kink detection.
#[derive(Clone, Copy, Debug)]
pub struct FeatureCache {
    /// Index of the shortest principal axis.
    pub axis_index: usize,
    pub axis: Vec3,
    pub light_dir: Vec3,
    pub light_len: f64,
    pub view_dir: Vec3,
    pub view_len: f64,
    /// Visibility before clamping to `[0, 1]`.
    pub visibility_raw: f64,
    pub normal_len: f64,
}

impl FeatureCache {
    /// Discrete choices made while building the features.
    pub fn branches(&self, g: &Gaussian) -> [u8; 6] {
        let floor = SCALE_FLOOR.ln();
        let scale_bits = (0..3).fold(0u8, |acc, k| acc | (((g.log_scale[k] > floor) as u8) << k));
        [
            self.axis_index as u8,
            (self.axis.x >= 0.0) as u8 | (((self.axis.y >= 0.0) as u8) << 1),
            (self.visibility_raw < 0.0) as u8,
            (self.visibility_raw > 1.0) as u8,
            scale_bits,
            (self.normal_len > 0.0) as u8,
        ]
    }
}

fn smallest_axis(scale: &Vec3) -> usize {
    let mut k = 0;
    for i in 1..3 {
        if scale[i] < scale[k] {
            k = i;
        }
    }
    k
}

pub fn gaussian_features(g: &Gaussian, ctx: &FeatureContext) -> (MlpInput, FeatureCache) {
    let (normal, normal_len) = normalize(&g.normal);
    let normal = if normal_len > 0.0 { normal } else { Vec3::z() };
    let r: Mat3 = g.rotation_matrix();
    let scale = g.scale();
    let axis_index = smallest_axis(&scale);
    let axis: Vec3 = r.column(axis_index).into();
    let rho = (axis.x * axis.x + axis.y * axis.y).sqrt();
    let rotation = [rho.atan2(axis.z), axis.y.atan2(axis.x)];
    let (light_dir, light_len) = normalize(&(ctx.light_position - g.mean));
    let (view_dir, view_len) = normalize(&(ctx.camera_center - g.mean));
    let visibility_raw = eval_sh(&g.vis_sh, &light_dir);
    let input = MlpInput {
        normal: [normal.x, normal.y, normal.z],
        rotation,
        scale: [scale.x.ln(), scale.y.ln(), scale.z.ln()],
        light_dir: [light_dir.x, light_dir.y, light_dir.z],
        view_dir: [view_dir.x, view_dir.y, view_dir.z],
        light_distance: light_len,
        visibility: visibility_raw.clamp(0.0, 1.0),
        encoded_position: encode_position(&g.mean, &ctx.bounds),
    };
    let cache = FeatureCache {
        axis_index,
        axis,
        light_dir,
        light_len,
        view_dir,
        view_len,
        visibility_raw,
        normal_len,
    };
    (input, cache)
}

/// Maps `dL/dinput` to `dL/draw parameters` (laid out like [`Gaussian::params`]).
pub fn gaussian_features_backward(
    g: &Gaussian,
    ctx: &FeatureContext,
    cache: &FeatureCache,
    d: &[f64; INPUT_DIM],
) -> [f64; PARAMS_PER_GAUSSIAN] {
    let mut out = [0.0; PARAMS_PER_GAUSSIAN];
    let v3 = |o: usize| Vec3::new(d[o], d[o + 1], d[o + 2]);

    if cache.normal_len > 0.0 {
        let n = g.normal / cache.normal_len;
        let dn = normalize_backward(&n, cache.normal_len, &v3(input::NORMAL));
        out[param::NORMAL..param::NORMAL + 3].copy_from_slice(dn.as_slice());
    }

    let floor = SCALE_FLOOR.ln();
    for k in 0..3 {
        if g.log_scale[k] > floor {
            out[param::LOG_SCALE + k] = d[input::SCALE + k];
        }
    }

    // (θ, φ) of the shortest axis.
    let a = cache.axis;
    let rho2 = a.x * a.x + a.y * a.y;
    let rho = rho2.sqrt();
    let (d_theta, d_phi) = (d[input::ROTATION], d[input::ROTATION + 1]);
    if rho > 1e-12 && (d_theta != 0.0 || d_phi != 0.0) {
        let denom = rho2 + a.z * a.z;
        let d_rho = d_theta * a.z / denom;
        let d_az = -d_theta * rho / denom;
        let d_ax = d_rho * a.x / rho - d_phi * a.y / rho2;
        let d_ay = d_rho * a.y / rho + d_phi * a.x / rho2;
        let mut d_r = Mat3::zeros();
        d_r[(0, cache.axis_index)] = d_ax;
        d_r[(1, cache.axis_index)] = d_ay;
        d_r[(2, cache.axis_index)] = d_az;
        let (unit_q, q_len) = g.unit_rotation();
        let dq = normalize4_backward(&unit_q, q_len, &quat_to_matrix_backward(&unit_q, &d_r));
        out[param::ROTATION..param::ROTATION + 4].copy_from_slice(dq.as_slice());
    }

    let mut d_light_dir = v3(input::LIGHT_DIR);
    let vis_raw = cache.visibility_raw;
    if (0.0..=1.0).contains(&vis_raw) {
        let (d_coeffs, d_dir) = eval_sh_backward(&g.vis_sh, &cache.light_dir, d[input::VISIBILITY]);
        out[param::VIS_SH..param::VIS_SH + d_coeffs.len()].copy_from_slice(&d_coeffs);
        d_light_dir += d_dir;
    }
    let mut d_mean = -normalize_backward(&cache.light_dir, cache.light_len, &d_light_dir);
    d_mean -= cache.light_dir * d[input::LIGHT_DISTANCE];
    d_mean -= normalize_backward(&cache.view_dir, cache.view_len, &v3(input::VIEW_DIR));
    d_mean += encode_position_backward(&g.mean, &ctx.bounds, &d[input::POSITION..]);
    out[param::MEAN..param::MEAN + 3].copy_from_slice(d_mean.as_slice());
    out
}

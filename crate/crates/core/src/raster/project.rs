//! Perspective projection of 3D Gaussians into screen-space splats.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector4};

use super::RasterConfig;
use crate::math::{normalize4_backward, quat_to_matrix_backward, Mat3, Vec3};
use crate::scene::{covariance_backward, Camera, Gaussian, SCALE_FLOOR};

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates; pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`.
    pub mean2d: [f64; 2],
    /// `(xx, xy, yy)` including the low-pass floor.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d` as `(a, b, c)` with `q = a·dx² + 2b·dx·dy + c·dy²`.
    pub conic: [f64; 3],
    /// View-space z.
    pub depth: f64,
    pub opacity: f64,
    /// Half-extents of the 3σ footprint along x and y.
    pub extent: [f64; 2],
    pub source_index: usize,
}

/// Upstream gradients for one splat.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

/// Gradients of the projection with respect to raw Gaussian parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionGrad {
    pub mean: Vec3,
    pub rotation: Vector4<f64>,
    pub log_scale: Vec3,
    pub opacity_logit: f64,
}

struct Geometry {
    t: Vec3,
    j: Matrix2x3<f64>,
    w: Mat3,
    sigma: Mat3,
}

fn geometry(g: &Gaussian, cam: &Camera) -> Geometry {
    let w = cam.rotation();
    let t = w * g.mean + cam.translation();
    let (tx, ty, tz) = (t.x, t.y, t.z);
    let j = Matrix2x3::new(
        cam.fx / tz,
        0.0,
        -cam.fx * tx / (tz * tz),
        0.0,
        cam.fy / tz,
        -cam.fy * ty / (tz * tz),
    );
    Geometry {
        t,
        j,
        w,
        sigma: g.covariance(),
    }
}

/// Projects `g`; returns `None` when it lies behind the near plane or its 3σ
/// footprint misses every pixel center.
pub fn project(g: &Gaussian, index: usize, cam: &Camera, cfg: &RasterConfig) -> Option<Splat2D> {
    let geo = geometry(g, cam);
    if !(geo.t.z > cfg.near) {
        return None;
    }
    let jw = geo.j * geo.w;
    let c = jw * geo.sigma * jw.transpose();
    let xx = c[(0, 0)] + cfg.low_pass;
    let xy = c[(0, 1)];
    let yy = c[(1, 1)] + cfg.low_pass;
    let det = xx * yy - xy * xy;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let mean2d = [
        cam.fx * geo.t.x / geo.t.z + cam.cx,
        cam.fy * geo.t.y / geo.t.z + cam.cy,
    ];
    let extent = [3.0 * xx.sqrt(), 3.0 * yy.sqrt()];
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean2d[0] + extent[0] < 0.5
        || mean2d[0] - extent[0] > w - 0.5
        || mean2d[1] + extent[1] < 0.5
        || mean2d[1] - extent[1] > h - 0.5
    {
        return None;
    }
    Some(Splat2D {
        mean2d,
        cov2d: [xx, xy, yy],
        conic: [yy / det, -xy / det, xx / det],
        depth: geo.t.z,
        opacity: g.opacity(),
        extent,
        source_index: index,
    })
}

/// Projects every Gaussian of `gaussians`, keeping scene indices in `source_index`.
pub fn project_all(gaussians: &[Gaussian], cam: &Camera, cfg: &RasterConfig) -> Vec<Splat2D> {
    gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam, cfg))
        .collect()
}

/// Converts a gradient on the conic `(a, b, c)` into one on the full symmetric
/// 2×2 covariance.
pub fn conic_to_cov_grad(conic: &[f64; 3], d_conic: &[f64; 3]) -> Matrix2<f64> {
    let k = Matrix2::new(conic[0], conic[1], conic[1], conic[2]);
    let dk = Matrix2::new(d_conic[0], 0.5 * d_conic[1], 0.5 * d_conic[1], d_conic[2]);
    -(k * dk * k)
}

/// Backward of [`project`] for a splat that was not culled.
pub fn project_backward(g: &Gaussian, cam: &Camera, splat: &Splat2D, d: &SplatGrad) -> ProjectionGrad {
    let geo = geometry(g, cam);
    let (tx, ty, tz) = (geo.t.x, geo.t.y, geo.t.z);
    let (fx, fy) = (cam.fx, cam.fy);

    let d_cov2 = conic_to_cov_grad(&splat.conic, &d.conic);
    let jw = geo.j * geo.w;
    let d_sigma = jw.transpose() * d_cov2 * jw;
    let m = geo.w * geo.sigma * geo.w.transpose();
    let d_j = (d_cov2 + d_cov2.transpose()) * geo.j * m;

    let mut d_t = Vec3::zeros();
    let [du, dv] = d.mean2d;
    d_t.x += du * fx / tz;
    d_t.y += dv * fy / tz;
    d_t.z += -du * fx * tx / (tz * tz) - dv * fy * ty / (tz * tz);
    d_t.z += d.depth;
    d_t.x += d_j[(0, 2)] * (-fx / (tz * tz));
    d_t.y += d_j[(1, 2)] * (-fy / (tz * tz));
    d_t.z += d_j[(0, 0)] * (-fx / (tz * tz))
        + d_j[(0, 2)] * (2.0 * fx * tx / (tz * tz * tz))
        + d_j[(1, 1)] * (-fy / (tz * tz))
        + d_j[(1, 2)] * (2.0 * fy * ty / (tz * tz * tz));
    let d_mean = geo.w.transpose() * d_t;

    let (unit_q, q_len) = g.unit_rotation();
    let r = g.rotation_matrix();
    let scale = g.scale();
    let (d_r, d_s) = covariance_backward(&r, &scale, &d_sigma);
    let d_unit_q = quat_to_matrix_backward(&unit_q, &d_r);
    let d_rotation = normalize4_backward(&unit_q, q_len, &d_unit_q);
    let d_log_scale = Vec3::from_fn(|k, _| {
        let s = g.log_scale[k].exp();
        if s > SCALE_FLOOR {
            d_s[k] * s
        } else {
            0.0
        }
    });
    let o = splat.opacity;
    ProjectionGrad {
        mean: d_mean,
        rotation: d_rotation,
        log_scale: d_log_scale,
        opacity_logit: d.opacity * o * (1.0 - o),
    }
}

/// Screen-space mean gradient in normalized device units, as used by densification.
pub fn ndc_gradient_norm(d: &SplatGrad, cam: &Camera) -> f64 {
    Vector2::new(d.mean2d[0] * 0.5 * cam.width as f64, d.mean2d[1] * 0.5 * cam.height as f64).norm()
}

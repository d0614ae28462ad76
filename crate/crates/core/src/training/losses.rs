//! Individual loss terms. Each returns its value together with the gradient of
//! that value with respect to its differentiable inputs.

use crate::error::Result;
use crate::imageio::Image;
use crate::math::{normalize, normalize_backward, Vec3};
use crate::metrics::ssim_with_grad;
use crate::raster::{backproject, pixel_ray, GBuffer, GBufferGrad};
use crate::scene::sh::{basis, SH_COEFFS};
use crate::scene::Camera;
use crate::shading::channel;
use crate::visibility::VisibilitySample;

pub const MASK_EPS: f64 = 1e-6;
pub const ENHANCE_GAMMA: f64 = 1.0 / 2.2;
pub const ENHANCE_FLOOR: f64 = 1e-3;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error and its gradient.
pub fn l1(pred: &Image, gt: &Image) -> Result<(f64, Vec<f64>)> {
    pred.same_shape(gt)?;
    let n = pred.data.len().max(1) as f64;
    let mut total = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(p, g)| {
            total += (p - g).abs();
            sign(p - g) / n
        })
        .collect();
    Ok((total / n, grad))
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)`.
pub fn image_loss(pred: &Image, gt: &Image, dssim: f64) -> Result<(f64, Vec<f64>)> {
    let (l, mut grad) = l1(pred, gt)?;
    for g in &mut grad {
        *g *= 1.0 - dssim;
    }
    let mut value = (1.0 - dssim) * l;
    if dssim > 0.0 {
        let (s, gs) = ssim_with_grad(pred, gt)?;
        value += dssim * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(&gs.data) {
            *g -= dssim * d;
        }
    }
    Ok((value, grad))
}

/// Mean binary cross-entropy of rendered opacity against the mask.
pub fn mask_loss(alpha: &[f64], mask: &[f64]) -> (f64, Vec<f64>) {
    let n = alpha.len().max(1) as f64;
    let mut total = 0.0;
    let grad = alpha
        .iter()
        .zip(mask)
        .map(|(&a, &m)| {
            let o = a.clamp(MASK_EPS, 1.0 - MASK_EPS);
            total -= m * o.ln() + (1.0 - m) * (1.0 - o).ln();
            if a == o {
                (-m / o + (1.0 - m) / (1.0 - o)) / n
            } else {
                0.0
            }
        })
        .collect();
    (total / n, grad)
}

/// Pixels whose pseudo normal is defined: the pixel and its four neighbours all
/// have alpha above `eps`.
pub fn normal_loss_pixels(gb: &GBuffer, eps: f64) -> Vec<usize> {
    let (w, h) = (gb.width, gb.height);
    let ok = |x: usize, y: usize| gb.alpha[y * w + x] > eps;
    let mut out = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if ok(x, y) && ok(x - 1, y) && ok(x + 1, y) && ok(x, y - 1) && ok(x, y + 1) {
                out.push(y * w + x);
            }
        }
    }
    out
}

fn rendered_normal(gb: &GBuffer, p: usize) -> Vec3 {
    let px = gb.pixel(p);
    Vec3::new(px[channel::NORMAL], px[channel::NORMAL + 1], px[channel::NORMAL + 2]) / gb.alpha[p]
}

/// Pseudo normal from central differences of back-projected depth: facing the
/// camera for a surface seen from the front.
pub fn pseudo_normal(gb: &GBuffer, cam: &Camera, p: usize) -> (Vec3, f64, Vec3, Vec3) {
    let w = gb.width;
    let (x, y) = (p % w, p / w);
    let pos = |x: usize, y: usize| {
        let q = y * w + x;
        backproject(cam, x, y, gb.depth[q] / gb.alpha[q])
    };
    let dx = pos(x + 1, y) - pos(x - 1, y);
    let dy = pos(x, y + 1) - pos(x, y - 1);
    let (n, len) = normalize(&dy.cross(&dx));
    (n, len, dx, dy)
}

/// Mean over valid pixels of `|pseudo − rendered|²`, both normalized. Gradients
/// flow into depth, alpha and the normal channels.
pub fn normal_loss(gb: &GBuffer, cam: &Camera, eps: f64, grad: Option<&mut GBufferGrad>, weight: f64) -> f64 {
    let pixels = normal_loss_pixels(gb, eps);
    if pixels.is_empty() {
        return 0.0;
    }
    let n_valid = pixels.len() as f64;
    let w = gb.width;
    let k = gb.channels;
    let rot_t = cam.rotation().transpose();
    let mut total = 0.0;
    let mut grad = grad;
    for &p in &pixels {
        let (pn, pn_len, dx, dy) = pseudo_normal(gb, cam, p);
        let r = rendered_normal(gb, p);
        let (rn, rn_len) = normalize(&r);
        let diff = pn - rn;
        total += diff.norm_squared();
        let Some(g) = grad.as_deref_mut() else { continue };
        if pn_len == 0.0 || rn_len == 0.0 {
            continue;
        }
        let d_diff = diff * (2.0 * weight / n_valid);
        // Rendered side: normal channels and alpha of this pixel.
        let d_r = normalize_backward(&rn, rn_len, &(-d_diff));
        let a = gb.alpha[p];
        for c in 0..3 {
            g.accum[p * k + channel::NORMAL + c] += d_r[c] / a;
        }
        g.alpha[p] -= d_r.dot(&r) / a;
        // Pseudo side: c = dy × dx.
        let d_c = normalize_backward(&pn, pn_len, &d_diff);
        let d_dy = dx.cross(&d_c);
        let d_dx = d_c.cross(&dy);
        let (x, y) = (p % w, p / w);
        for (qx, qy, d_pos) in [
            (x + 1, y, d_dx),
            (x - 1, y, -d_dx),
            (x, y + 1, d_dy),
            (x, y - 1, -d_dy),
        ] {
            let q = qy * w + qx;
            let d_z = (rot_t * pixel_ray(cam, qx, qy)).dot(&d_pos);
            let aq = gb.alpha[q];
            g.depth[q] += d_z / aq;
            g.alpha[q] -= d_z * gb.depth[q] / (aq * aq);
        }
    }
    total / n_valid
}

/// Edge-aware smoothness of a premultiplied attribute map (channels
/// `offset..offset + count` of the G-buffer), gated by the target image.
pub fn smooth_loss(
    gb: &GBuffer,
    offset: usize,
    count: usize,
    gt: &Image,
    grad: Option<&mut GBufferGrad>,
    weight: f64,
) -> f64 {
    let (w, h, k) = (gb.width, gb.height, gb.channels);
    let pairs = (w.saturating_sub(1)) * h + w * (h.saturating_sub(1));
    if pairs == 0 {
        return 0.0;
    }
    let gc = gt.channels;
    let gate = |p: usize, q: usize| {
        let d: f64 = (0..gc).map(|c| (gt.data[p * gc + c] - gt.data[q * gc + c]).abs()).sum();
        (-d / gc as f64).exp()
    };
    let mut total = 0.0;
    let mut grad = grad;
    let scale = weight / (pairs as f64 * count as f64);
    let mut visit = |p: usize, q: usize| {
        let e = gate(p, q);
        for c in 0..count {
            let d = gb.accum[p * k + offset + c] - gb.accum[q * k + offset + c];
            total += e * d.abs() / count as f64;
            if let Some(g) = grad.as_deref_mut() {
                let s = sign(d) * e * scale;
                g.accum[p * k + offset + c] += s;
                g.accum[q * k + offset + c] -= s;
            }
        }
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                visit(p, p + 1);
            }
            if y + 1 < h {
                visit(p, p + w);
            }
        }
    }
    total / pairs as f64
}

/// Mean over visible Gaussians of `|min(mean(incident), 1) − visibility|`.
/// Returns the value and per-Gaussian gradients on incident and visibility.
pub fn incident_loss(incident: &[[f64; 3]], visibility: &[f64]) -> (f64, Vec<[f64; 3]>, Vec<f64>) {
    let n = incident.len().max(1) as f64;
    let mut total = 0.0;
    let mut d_inc = Vec::with_capacity(incident.len());
    let mut d_vis = Vec::with_capacity(incident.len());
    for (inc, &v) in incident.iter().zip(visibility) {
        let mean = (inc[0] + inc[1] + inc[2]) / 3.0;
        let clamped = mean.min(1.0);
        let r = clamped - v;
        total += r.abs();
        let s = sign(r) / n;
        let through = if mean < 1.0 { s / 3.0 } else { 0.0 };
        d_inc.push([through; 3]);
        d_vis.push(-s);
    }
    (total / n, d_inc, d_vis)
}

/// Mean squared error between each Gaussian's SH visibility and ray-traced targets.
/// `grad` receives `weight · dL/dcoeffs` per Gaussian.
pub fn raytrace_loss(
    coeffs: &[[f64; SH_COEFFS]],
    targets: &[Vec<VisibilitySample>],
    grad: Option<&mut [[f64; SH_COEFFS]]>,
    weight: f64,
) -> f64 {
    let count: usize = targets.iter().map(|t| t.len()).sum();
    if count == 0 {
        return 0.0;
    }
    let n = count as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for (i, (c, ts)) in coeffs.iter().zip(targets).enumerate() {
        for t in ts {
            let b = basis(&t.dir);
            let v: f64 = b.iter().zip(c).map(|(x, y)| x * y).sum();
            let r = v - t.transmittance;
            total += r * r;
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..SH_COEFFS {
                    g[i][j] += weight * 2.0 * r * b[j] / n;
                }
            }
        }
    }
    total / n
}

/// L1 between gamma-compressed images, which weighs dark regions up.
pub fn enhance_loss(pred: &Image, gt: &Image) -> Result<(f64, Vec<f64>)> {
    pred.same_shape(gt)?;
    let n = pred.data.len().max(1) as f64;
    let f = |x: f64| (x.max(0.0) + ENHANCE_FLOOR).powf(ENHANCE_GAMMA);
    let mut total = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| {
            let r = f(p) - f(g);
            total += r.abs();
            if p > 0.0 {
                sign(r) * ENHANCE_GAMMA * (p + ENHANCE_FLOOR).powf(ENHANCE_GAMMA - 1.0) / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((total / n, grad))
}

/// A learned perceptual metric supplied from outside (none ships with the crate).
pub trait PerceptualLoss: Send + Sync {
    /// Loss value and its gradient with respect to `pred`.
    fn loss_and_grad(&self, pred: &Image, gt: &Image) -> Result<(f64, Vec<f64>)>;
}

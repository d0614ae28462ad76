//! Optimization: the total loss over one OLAT frame, its gradient with respect to
//! every Gaussian parameter and network weight, and the training loop.

pub mod config;
pub mod densify;
pub mod losses;
pub mod trainer;

use serde::Serialize;

pub use config::{LossWeights, TrainConfig};
pub use trainer::{train, TrainOutcome, Trainer};

use crate::error::Result;
use crate::field::input;
use crate::imageio::Image;
use crate::model::Model;
use crate::raster::pixel_decisions;
use crate::render::{backward, forward, Forward, Gradients, RenderSettings, Upstream};
use crate::scene::sh::SH_COEFFS;
use crate::scene::{param, Camera, PointLight, PARAMS_PER_GAUSSIAN};
use crate::shading::{channel, deferred_branches};
use crate::visibility::VisibilitySample;
use losses::PerceptualLoss;

/// One supervised view: the target image and mask for a camera and light.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub camera: &'a Camera,
    pub light: &'a PointLight,
    pub image: &'a Image,
    pub mask: &'a Image,
    /// Ray-traced visibility per Gaussian, when the raytrace term is active.
    pub visibility: Option<&'a [Vec<VisibilitySample>]>,
}

/// Unweighted values of every term plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub l1: f64,
    pub dssim: f64,
    pub image: f64,
    pub lpips: f64,
    pub normal: f64,
    pub incident: f64,
    pub mask: f64,
    pub smooth_metalness: f64,
    pub smooth_roughness: f64,
    pub smooth_subsurface: f64,
    pub smooth_basecolor: f64,
    pub enhance: f64,
    pub raytrace: f64,
    pub total: f64,
}

impl LossTerms {
    /// `Σ λ·term` in a fixed order; `image` already mixes L1 and SSIM.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.image
            + w.lpips * self.lpips
            + w.normal * self.normal
            + w.incident * self.incident
            + w.mask * self.mask
            + w.smooth_metalness * self.smooth_metalness
            + w.smooth_roughness * self.smooth_roughness
            + w.smooth_subsurface * self.smooth_subsurface
            + w.smooth_basecolor * self.smooth_basecolor
            + w.enhance * self.enhance
            + w.raytrace * self.raytrace
    }
}

pub struct Evaluation {
    pub terms: LossTerms,
    pub forward: Forward,
    pub gradients: Option<Gradients>,
}

const SMOOTH_MAPS: [(usize, usize); 4] = [
    (channel::METALNESS, 1),
    (channel::ROUGHNESS, 1),
    (channel::SUBSURFACE, 1),
    (channel::BASECOLOR, 3),
];

fn smooth_weights(w: &LossWeights) -> [f64; 4] {
    [w.smooth_metalness, w.smooth_roughness, w.smooth_subsurface, w.smooth_basecolor]
}

/// Evaluates the total loss on one sample with effective weights `w` (terms
/// with zero weight are still reported but contribute nothing). With
/// `want_grad`, also returns the full gradient.
pub fn evaluate(
    model: &Model,
    settings: &RenderSettings,
    sample: &Sample,
    w: &LossWeights,
    perceptual: Option<&dyn PerceptualLoss>,
    want_grad: bool,
) -> Result<Evaluation> {
    let cam = sample.camera;
    let fwd = forward(model, cam, sample.light, settings, None, want_grad);
    let pred = fwd.rgb();
    let mut t = LossTerms::default();
    let mut up = want_grad.then(|| Upstream::zeros(&fwd));

    let (l1, g_l1) = losses::l1(&pred, sample.image)?;
    t.l1 = l1;
    if let Some(u) = up.as_mut() {
        let (ssim, g_ssim) = crate::metrics::ssim_with_grad(&pred, sample.image)?;
        t.dssim = 1.0 - ssim;
        u.image = g_l1.iter().zip(&g_ssim.data).map(|(a, b)| (1.0 - w.dssim) * a - w.dssim * b).collect();
    } else {
        t.dssim = 1.0 - crate::metrics::ssim(&pred, sample.image)?;
    }
    t.image = (1.0 - w.dssim) * l1 + w.dssim * t.dssim;

    if let Some(p) = perceptual.filter(|_| w.lpips > 0.0) {
        let (v, g) = p.loss_and_grad(&pred, sample.image)?;
        t.lpips = v;
        if let Some(u) = up.as_mut() {
            for (a, b) in u.image.iter_mut().zip(&g) {
                *a += w.lpips * b;
            }
        }
    }

    if w.enhance > 0.0 {
        let (v, g) = losses::enhance_loss(&pred, sample.image)?;
        t.enhance = v;
        if let Some(u) = up.as_mut() {
            for (a, b) in u.image.iter_mut().zip(&g) {
                *a += w.enhance * b;
            }
        }
    }

    let (m, g_mask) = losses::mask_loss(&fwd.gbuffer.alpha, &sample.mask.data);
    t.mask = m;
    if let Some(u) = up.as_mut() {
        for (a, b) in u.gbuffer.alpha.iter_mut().zip(&g_mask) {
            *a += w.mask * b;
        }
    }

    let eps = fwd.shading.alpha_eps;
    t.normal = losses::normal_loss(&fwd.gbuffer, cam, eps, up.as_mut().map(|u| &mut u.gbuffer), w.normal);

    let sw = smooth_weights(w);
    let mut smooth = [0.0; 4];
    for (k, (offset, count)) in SMOOTH_MAPS.into_iter().enumerate() {
        smooth[k] = losses::smooth_loss(&fwd.gbuffer, offset, count, sample.image, up.as_mut().map(|u| &mut u.gbuffer), sw[k]);
    }
    [t.smooth_metalness, t.smooth_roughness, t.smooth_subsurface, t.smooth_basecolor] = smooth;

    let incident: Vec<[f64; 3]> = fwd.outputs.iter().map(|o| o.incident).collect();
    let vis: Vec<f64> = fwd.inputs.iter().map(|x| x[input::VISIBILITY]).collect();
    let (inc, d_inc, d_vis) = losses::incident_loss(&incident, &vis);
    t.incident = inc;
    if let Some(u) = up.as_mut() {
        for (a, b) in u.incident.iter_mut().zip(&d_inc) {
            for c in 0..3 {
                a[c] += w.incident * b[c];
            }
        }
        for (a, b) in u.visibility.iter_mut().zip(&d_vis) {
            *a += w.incident * b;
        }
    }

    let coeffs: Vec<[f64; SH_COEFFS]> = model.scene.gaussians.iter().map(|g| g.vis_sh).collect();
    let mut d_sh = want_grad.then(|| vec![[0.0; SH_COEFFS]; coeffs.len()]);
    if let Some(targets) = sample.visibility {
        t.raytrace = losses::raytrace_loss(&coeffs, targets, d_sh.as_deref_mut(), w.raytrace);
    }

    t.total = t.weighted_total(w);

    let gradients = up.map(|u| {
        let mut g = backward(model, cam, sample.light, settings, &fwd, &u);
        if let Some(d) = d_sh {
            for (i, row) in d.iter().enumerate() {
                let base = i * PARAMS_PER_GAUSSIAN + param::VIS_SH;
                for (a, b) in g.scene[base..base + SH_COEFFS].iter_mut().zip(row) {
                    *a += b;
                }
            }
        }
        g
    });
    Ok(Evaluation {
        terms: t,
        forward: fwd,
        gradients,
    })
}

/// Every discrete decision taken while evaluating the loss. Two parameter
/// settings with equal signatures lie on the same smooth piece of the loss,
/// which is what a finite-difference comparison needs.
pub fn branch_signature(model: &Model, settings: &RenderSettings, sample: &Sample, w: &LossWeights) -> Vec<u64> {
    let cam = sample.camera;
    let fwd = forward(model, cam, sample.light, settings, None, true);
    let gb = &fwd.gbuffer;
    let mut sig: Vec<u64> = Vec::new();
    let mut push = |tag: u64, v: u64| sig.push(tag << 56 | v);

    for s in &fwd.splats {
        push(1, s.source_index as u64);
    }
    for p in 0..gb.pixel_count() {
        push(2, gb.walked[p] as u64);
        for (i, code) in pixel_decisions(gb, &fwd.splats, p, &settings.raster) {
            push(3, (i as u64) << 8 | code as u64);
        }
    }
    for (s, c) in fwd.splats.iter().zip(&fwd.features) {
        for b in c.branches(&model.scene.gaussians[s.source_index]) {
            push(4, b as u64);
        }
    }
    for cache in fwd.mlp_caches.iter().flatten() {
        for (j, on) in cache.activation_pattern().into_iter().enumerate() {
            push(5, (j as u64) << 1 | on as u64);
        }
    }
    if model.deferred {
        for b in deferred_branches(gb, cam, sample.light, &fwd.shading) {
            push(6, b as u64);
        }
    }
    let pred = &fwd.image;
    for (a, b) in pred.iter().zip(&sample.image.data) {
        push(7, a.partial_cmp(b).map_or(3, |o| o as i8 as u64 & 3));
    }
    if w.enhance > 0.0 {
        for (&a, &b) in pred.iter().zip(&sample.image.data) {
            let f = |x: f64| (x.max(0.0) + losses::ENHANCE_FLOOR).powf(losses::ENHANCE_GAMMA);
            push(8, (a > 0.0) as u64 | ((f(a) > f(b)) as u64) << 1 | ((f(a) < f(b)) as u64) << 2);
        }
    }
    for &a in &gb.alpha {
        push(9, (a < losses::MASK_EPS) as u64 | ((a > 1.0 - losses::MASK_EPS) as u64) << 1);
    }
    for p in losses::normal_loss_pixels(gb, fwd.shading.alpha_eps) {
        let (_, len, _, _) = losses::pseudo_normal(gb, cam, p);
        push(10, (p as u64) << 1 | (len > 0.0) as u64);
    }
    let (w_, k) = (gb.width, gb.channels);
    for (offset, count) in SMOOTH_MAPS {
        for p in 0..gb.pixel_count() {
            for q in [p + 1, p + w_] {
                if q >= gb.pixel_count() || (q == p + 1 && (p + 1) % w_ == 0) {
                    continue;
                }
                for c in 0..count {
                    let d = gb.accum[p * k + offset + c] - gb.accum[q * k + offset + c];
                    push(11, d.partial_cmp(&0.0).map_or(3, |o| o as i8 as u64 & 3));
                }
            }
        }
    }
    for (o, x) in fwd.outputs.iter().zip(&fwd.inputs) {
        let mean = (o.incident[0] + o.incident[1] + o.incident[2]) / 3.0;
        let r = mean.min(1.0) - x[input::VISIBILITY];
        push(12, (mean < 1.0) as u64 | (r.partial_cmp(&0.0).map_or(3, |o| o as i8 as u64 & 3)) << 1);
    }
    sig
}

//! Surface shading: the diffuse/specular model blended with the learned subsurface
//! residual by subsurfaceness, evaluated per pixel on the G-buffer (deferred) or per
//! Gaussian (forward).

pub mod brdf;
pub mod edit;

use serde::{Deserialize, Serialize};

pub use brdf::{brdf_diffuse, brdf_specular, SpecularConfig};
pub use edit::MaterialEdit;

use crate::math::{normalize, normalize_backward, Vec3};
use crate::raster::{backproject, pixel_ray, GBuffer, GBufferGrad};
use crate::scene::{Camera, PointLight};

/// Channel offsets of the rasterized attribute buffer.
pub mod channel {
    pub const BASECOLOR: usize = 0;
    pub const ROUGHNESS: usize = 3;
    pub const METALNESS: usize = 4;
    pub const SUBSURFACE: usize = 5;
    pub const NORMAL: usize = 6;
    pub const RESIDUAL: usize = 9;
    pub const INCIDENT: usize = 12;
    /// Channels used by deferred shading.
    pub const ATTRIBUTES: usize = 15;
    /// Pre-shaded color, only present for forward shading.
    pub const COLOR: usize = 15;
    pub const WITH_COLOR: usize = 18;
}

/// Which terms of the reflectance model are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadingModel {
    /// When off, subsurfaceness is forced to zero so only the surface term remains.
    pub residual: bool,
    /// When off, the surface term is `basecolor ⊙ incident · cos` with no microfacet lobes.
    pub pbr: bool,
}

impl Default for ShadingModel {
    fn default() -> Self {
        Self {
            residual: true,
            pbr: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingConfig {
    pub model: ShadingModel,
    pub specular: SpecularConfig,
    /// Pixels with alpha at or below this are treated as background.
    pub alpha_eps: f64,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        Self {
            model: ShadingModel::default(),
            specular: SpecularConfig::default(),
            alpha_eps: 1e-3,
        }
    }
}

/// Shading inputs at one surface point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadePixel {
    pub position: Vec3,
    /// Need not be unit length; it is normalized before use.
    pub normal: Vec3,
    pub basecolor: Vec3,
    pub roughness: f64,
    pub metalness: f64,
    pub subsurfaceness: f64,
    pub residual: Vec3,
    pub incident: Vec3,
    pub alpha: f64,
}

impl ShadePixel {
    /// Reads the un-premultiplied attributes of pixel `p`.
    pub fn from_gbuffer(gb: &GBuffer, cam: &Camera, p: usize, eps: f64) -> Option<Self> {
        let a = gb.alpha[p];
        if a <= eps {
            return None;
        }
        let px = gb.pixel(p);
        let v = |o: usize| Vec3::new(px[o], px[o + 1], px[o + 2]) / a;
        Some(Self {
            position: backproject(cam, p % gb.width, p / gb.width, gb.depth[p] / a),
            normal: v(channel::NORMAL),
            basecolor: v(channel::BASECOLOR),
            roughness: px[channel::ROUGHNESS] / a,
            metalness: px[channel::METALNESS] / a,
            subsurfaceness: px[channel::SUBSURFACE] / a,
            residual: v(channel::RESIDUAL),
            incident: v(channel::INCIDENT),
            alpha: a,
        })
    }
}

/// Gradients with respect to every [`ShadePixel`] field except alpha.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ShadeGrad {
    pub position: Vec3,
    pub normal: Vec3,
    pub basecolor: Vec3,
    pub roughness: f64,
    pub metalness: f64,
    pub subsurfaceness: f64,
    pub residual: Vec3,
    pub incident: Vec3,
}

struct Frame {
    n: Vec3,
    n_len: f64,
    w_i: Vec3,
    li_len: f64,
    w_o: Vec3,
    lo_len: f64,
    ni: f64,
}

fn frame(sp: &ShadePixel, light: &PointLight, camera_center: &Vec3) -> Frame {
    let (n, n_len) = normalize(&sp.normal);
    let (w_i, li_len) = normalize(&(light.position - sp.position));
    let (w_o, lo_len) = normalize(&(camera_center - sp.position));
    Frame {
        ni: n.dot(&w_i),
        n,
        n_len,
        w_i,
        li_len,
        w_o,
        lo_len,
    }
}

/// Outgoing radiance at one point before alpha compositing.
pub fn combine(sp: &ShadePixel, light: &PointLight, camera_center: &Vec3, cfg: &ShadingConfig) -> Vec3 {
    let f = frame(sp, light, camera_center);
    let cos = f.ni.clamp(0.0, 1.0);
    let surface = if cfg.model.pbr {
        let fd = brdf_diffuse(&sp.basecolor, sp.metalness);
        let fs = brdf_specular(&f.w_o, &f.w_i, &f.n, &sp.basecolor, sp.metalness, sp.roughness, &cfg.specular);
        (fd + fs).component_mul(&sp.incident) * cos
    } else {
        sp.basecolor.component_mul(&sp.incident) * cos
    };
    let sss = if cfg.model.residual { sp.subsurfaceness } else { 0.0 };
    (sp.residual * sss + surface * (1.0 - sss)) * light.intensity
}

/// Discrete choices made by [`combine`] at this point.
pub fn combine_branches(sp: &ShadePixel, light: &PointLight, camera_center: &Vec3, cfg: &ShadingConfig) -> u8 {
    let f = frame(sp, light, camera_center);
    let spec = brdf::specular_branches(&f.w_o, &f.w_i, &f.n, sp.roughness, &cfg.specular);
    (f.ni > 0.0) as u8 | spec << 1 | ((f.n_len > 0.0) as u8) << 4
}

pub fn combine_backward(
    sp: &ShadePixel,
    light: &PointLight,
    camera_center: &Vec3,
    cfg: &ShadingConfig,
    d_out: &Vec3,
) -> ShadeGrad {
    let mut g = ShadeGrad::default();
    let f = frame(sp, light, camera_center);
    let cos = f.ni.clamp(0.0, 1.0);
    let d_l = d_out * light.intensity;
    let sss = if cfg.model.residual { sp.subsurfaceness } else { 0.0 };

    let (surface, d_cos, mut d_n, mut d_wi, d_wo);
    let d_surface = d_l * (1.0 - sss);
    if cfg.model.pbr {
        let fd = brdf_diffuse(&sp.basecolor, sp.metalness);
        let fs = brdf_specular(&f.w_o, &f.w_i, &f.n, &sp.basecolor, sp.metalness, sp.roughness, &cfg.specular);
        let lobe = fd + fs;
        surface = lobe.component_mul(&sp.incident) * cos;
        g.incident = d_surface.component_mul(&lobe) * cos;
        d_cos = d_surface.component_mul(&lobe).dot(&sp.incident);
        let d_lobe = d_surface.component_mul(&sp.incident) * cos;
        g.basecolor = d_lobe * ((1.0 - sp.metalness) / std::f64::consts::PI);
        g.metalness = -d_lobe.dot(&sp.basecolor) / std::f64::consts::PI;
        let sg = brdf::brdf_specular_backward(
            &f.w_o,
            &f.w_i,
            &f.n,
            &sp.basecolor,
            sp.metalness,
            sp.roughness,
            &cfg.specular,
            &d_lobe,
        );
        g.basecolor += sg.basecolor;
        g.metalness += sg.metalness;
        g.roughness += sg.roughness;
        d_n = sg.n;
        d_wi = sg.w_i;
        d_wo = sg.w_o;
    } else {
        surface = sp.basecolor.component_mul(&sp.incident) * cos;
        g.incident = d_surface.component_mul(&sp.basecolor) * cos;
        g.basecolor = d_surface.component_mul(&sp.incident) * cos;
        d_cos = d_surface.component_mul(&sp.basecolor).dot(&sp.incident);
        d_n = Vec3::zeros();
        d_wi = Vec3::zeros();
        d_wo = Vec3::zeros();
    }
    if cfg.model.residual {
        g.residual = d_l * sss;
        g.subsurfaceness = d_l.dot(&(sp.residual - surface));
    }
    if f.ni > 0.0 && f.ni < 1.0 {
        d_n += f.w_i * d_cos;
        d_wi += f.n * d_cos;
    }
    if f.n_len > 0.0 {
        g.normal = normalize_backward(&f.n, f.n_len, &d_n);
    }
    g.position = -normalize_backward(&f.w_i, f.li_len, &d_wi) - normalize_backward(&f.w_o, f.lo_len, &d_wo);
    g
}

/// Shades every pixel of a G-buffer with [`channel::ATTRIBUTES`] channels and
/// composites over `background`. Returns linear RGB, three values per pixel.
pub fn deferred_shade(
    gb: &GBuffer,
    cam: &Camera,
    light: &PointLight,
    cfg: &ShadingConfig,
    background: &Vec3,
    edit: Option<&MaterialEdit>,
) -> Vec<f64> {
    use rayon::prelude::*;
    let center = cam.center();
    let mut out = vec![0.0; gb.pixel_count() * 3];
    out.par_chunks_mut(3).enumerate().for_each(|(p, px)| {
        let rgb = match ShadePixel::from_gbuffer(gb, cam, p, cfg.alpha_eps) {
            Some(mut sp) => {
                if let Some(e) = edit {
                    e.apply(&mut sp);
                }
                combine(&sp, light, &center, cfg) * sp.alpha + background * (1.0 - sp.alpha)
            }
            None => *background,
        };
        px.copy_from_slice(rgb.as_slice());
    });
    out
}

/// Backward of [`deferred_shade`] without edits.
pub fn deferred_shade_backward(
    gb: &GBuffer,
    cam: &Camera,
    light: &PointLight,
    cfg: &ShadingConfig,
    background: &Vec3,
    d_image: &[f64],
    grad: &mut GBufferGrad,
) {
    let center = cam.center();
    let k = gb.channels;
    let rot = cam.rotation();
    for p in 0..gb.pixel_count() {
        let Some(sp) = ShadePixel::from_gbuffer(gb, cam, p, cfg.alpha_eps) else { continue };
        let d_out = Vec3::new(d_image[3 * p], d_image[3 * p + 1], d_image[3 * p + 2]);
        if d_out == Vec3::zeros() {
            continue;
        }
        let a = sp.alpha;
        let l = combine(&sp, light, &center, cfg);
        let mut d_a = d_out.dot(&(l - background));
        let sg = combine_backward(&sp, light, &center, cfg, &(d_out * a));
        let px = gb.pixel(p);
        let ga = &mut grad.accum[p * k..(p + 1) * k];
        let mut put = |o: usize, v: f64| {
            ga[o] += v / a;
            d_a -= v * px[o] / (a * a);
        };
        for c in 0..3 {
            put(channel::BASECOLOR + c, sg.basecolor[c]);
            put(channel::NORMAL + c, sg.normal[c]);
            put(channel::RESIDUAL + c, sg.residual[c]);
            put(channel::INCIDENT + c, sg.incident[c]);
        }
        put(channel::ROUGHNESS, sg.roughness);
        put(channel::METALNESS, sg.metalness);
        put(channel::SUBSURFACE, sg.subsurfaceness);
        let d_pcam = rot * sg.position;
        let d_z = d_pcam.dot(&pixel_ray(cam, p % gb.width, p / gb.width));
        grad.depth[p] += d_z / a;
        d_a -= d_z * gb.depth[p] / (a * a);
        grad.alpha[p] += d_a;
    }
}

/// Per-pixel discrete choices of [`deferred_shade`].
pub fn deferred_branches(gb: &GBuffer, cam: &Camera, light: &PointLight, cfg: &ShadingConfig) -> Vec<u8> {
    let center = cam.center();
    (0..gb.pixel_count())
        .map(|p| match ShadePixel::from_gbuffer(gb, cam, p, cfg.alpha_eps) {
            Some(sp) => 0x80 | combine_branches(&sp, light, &center, cfg),
            None => 0,
        })
        .collect()
}

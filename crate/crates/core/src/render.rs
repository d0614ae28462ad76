//! The full image formation path shared by training, relighting and the service:
//! project → per-Gaussian network → rasterize attributes → shade, and its reverse.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::features::{gaussian_features, gaussian_features_backward, FeatureCache, FeatureContext};
use crate::field::{input, MlpCache, MlpOutput, MlpParams, INPUT_DIM};
use crate::imageio::Image;
use crate::math::{normalize, normalize_backward, Vec3};
use crate::model::Model;
use crate::raster::project::{project, project_backward, Splat2D, SplatGrad};
use crate::raster::{composite, coverage, rasterize_backward, Coverage, GBuffer, GBufferGrad, RasterConfig};
use crate::scene::{param, Camera, Gaussian, PointLight, PARAMS_PER_GAUSSIAN};
use crate::shading::{
    channel, combine, combine_backward, deferred_shade, deferred_shade_backward, MaterialEdit, ShadePixel,
    ShadingConfig,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub raster: RasterConfig,
    /// The model's own shading variant overrides `shading.model`.
    pub shading: ShadingConfig,
    pub background: Vec3,
    /// Drop splats no pixel composites before evaluating the network. The
    /// image is unchanged; only inference paths should set this.
    pub skip_hidden: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            raster: RasterConfig::default(),
            shading: ShadingConfig::default(),
            background: Vec3::zeros(),
            skip_hidden: false,
        }
    }
}

/// Everything computed by [`forward`]; splat-indexed vectors share one order.
#[derive(Clone, Debug)]
pub struct Forward {
    pub splats: Vec<Splat2D>,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub features: Vec<FeatureCache>,
    pub outputs: Vec<MlpOutput>,
    /// Present when the forward pass was run for differentiation.
    pub mlp_caches: Option<Vec<MlpCache>>,
    pub channels: usize,
    pub attrs: Vec<f64>,
    pub gbuffer: GBuffer,
    /// Linear RGB, three values per pixel.
    pub image: Vec<f64>,
    pub shading: ShadingConfig,
}

impl Forward {
    pub fn rgb(&self) -> Image {
        Image::from_data(self.gbuffer.width, self.gbuffer.height, 3, self.image.clone()).expect("rgb size")
    }

    pub fn alpha(&self) -> Image {
        Image::from_data(self.gbuffer.width, self.gbuffer.height, 1, self.gbuffer.alpha.clone()).expect("alpha size")
    }
}

/// Upstream gradients handed to [`backward`].
#[derive(Clone, Debug)]
pub struct Upstream {
    /// `dL/dimage`, three values per pixel.
    pub image: Vec<f64>,
    /// Direct gradients on G-buffer planes (alpha, depth, attribute channels).
    pub gbuffer: GBufferGrad,
    /// Per splat: gradient on the predicted incident light.
    pub incident: Vec<[f64; 3]>,
    /// Per splat: gradient on the clamped visibility feature.
    pub visibility: Vec<f64>,
}

impl Upstream {
    pub fn zeros(fwd: &Forward) -> Self {
        Self {
            image: vec![0.0; fwd.image.len()],
            gbuffer: GBufferGrad::zeros(&fwd.gbuffer),
            incident: vec![[0.0; 3]; fwd.splats.len()],
            visibility: vec![0.0; fwd.splats.len()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    /// Laid out like [`crate::scene::Scene::params`].
    pub scene: Vec<f64>,
    pub mlp: MlpParams,
    /// Per splat gradient of the loss with respect to its screen-space mean, for densification.
    pub mean2d: Vec<(usize, SplatGrad)>,
}

pub fn effective_shading(model: &Model, settings: &RenderSettings) -> ShadingConfig {
    ShadingConfig {
        model: model.shading,
        ..settings.shading
    }
}

fn shade_point(g: &Gaussian, out: &MlpOutput) -> ShadePixel {
    ShadePixel {
        position: g.mean,
        normal: g.normal,
        basecolor: g.basecolor(),
        roughness: g.roughness(),
        metalness: g.metalness(),
        subsurfaceness: g.subsurfaceness(),
        residual: Vec3::from(out.residual),
        incident: Vec3::from(out.incident),
        alpha: 1.0,
    }
}

fn write_attrs(g: &Gaussian, out: &MlpOutput, a: &mut [f64]) {
    let put3 = |a: &mut [f64], o: usize, v: &Vec3| a[o..o + 3].copy_from_slice(v.as_slice());
    put3(a, channel::BASECOLOR, &g.basecolor());
    a[channel::ROUGHNESS] = g.roughness();
    a[channel::METALNESS] = g.metalness();
    a[channel::SUBSURFACE] = g.subsurfaceness();
    put3(a, channel::NORMAL, &g.unit_normal());
    a[channel::RESIDUAL..channel::RESIDUAL + 3].copy_from_slice(&out.residual);
    a[channel::INCIDENT..channel::INCIDENT + 3].copy_from_slice(&out.incident);
}

pub fn feature_context(model: &Model, cam: &Camera, light: &PointLight) -> FeatureContext {
    FeatureContext {
        bounds: model.scene.bounds,
        camera_center: cam.center(),
        light_position: light.position,
    }
}

/// Projects every Gaussian; with an edit, opacities are scaled first.
pub fn project_scene(model: &Model, cam: &Camera, settings: &RenderSettings, edit: Option<&MaterialEdit>) -> Vec<Splat2D> {
    let mut splats: Vec<Splat2D> = model
        .scene
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam, &settings.raster))
        .collect();
    if let Some(e) = edit.filter(|e| e.opacity_scale.is_some()) {
        for s in &mut splats {
            s.opacity = e.scaled_opacity(s.opacity);
        }
    }
    splats
}

/// Projection plus compositing weights; with `skip_hidden`, splats no pixel
/// composites are dropped.
fn visible_splats(model: &Model, cam: &Camera, settings: &RenderSettings, edit: Option<&MaterialEdit>) -> (Vec<Splat2D>, Coverage) {
    let splats = project_scene(model, cam, settings, edit);
    let cov = coverage(&splats, cam.width, cam.height, &settings.raster);
    if !settings.skip_hidden {
        return (splats, cov);
    }
    let keep = cov.used();
    let kept = splats.iter().zip(&keep).filter_map(|(s, &k)| k.then_some(*s)).collect();
    (kept, cov.retain(&keep))
}

/// Renders `model` from `cam` under `light`. `differentiable` keeps the network
/// activations for [`backward`]; edits are for inference only.
pub fn forward(
    model: &Model,
    cam: &Camera,
    light: &PointLight,
    settings: &RenderSettings,
    edit: Option<&MaterialEdit>,
    differentiable: bool,
) -> Forward {
    let gaussians = &model.scene.gaussians;
    let shading = effective_shading(model, settings);
    let ctx = feature_context(model, cam, light);
    let (splats, cov) = visible_splats(model, cam, settings, edit);
    let (inputs, features): (Vec<_>, Vec<_>) = splats
        .par_iter()
        .map(|s| {
            let (x, c) = gaussian_features(&gaussians[s.source_index], &ctx);
            (x.to_array(), c)
        })
        .unzip();
    let (outputs, mlp_caches) = if differentiable {
        let caches = model.mlp.forward_batch_cached(&inputs);
        (caches.iter().map(|c| c.output).collect(), Some(caches))
    } else {
        (model.mlp.forward_batch(&inputs), None)
    };

    let channels = if model.deferred { channel::ATTRIBUTES } else { channel::WITH_COLOR };
    let mut attrs = vec![0.0; splats.len() * channels];
    let center = cam.center();
    attrs
        .par_chunks_mut(channels)
        .zip(splats.par_iter().zip(&outputs))
        .for_each(|(a, (s, out))| {
            let g = &gaussians[s.source_index];
            write_attrs(g, out, a);
            if !model.deferred {
                let mut sp = shade_point(g, out);
                if let Some(e) = edit {
                    e.apply(&mut sp);
                }
                let c = combine(&sp, light, &center, &shading);
                a[channel::COLOR..channel::COLOR + 3].copy_from_slice(c.as_slice());
            }
        });

    let mut background = vec![0.0; channels];
    if !model.deferred {
        background[channel::COLOR..channel::COLOR + 3].copy_from_slice(settings.background.as_slice());
    }
    let gbuffer = composite(cov, &attrs, channels, &background);
    let image = if model.deferred {
        deferred_shade(&gbuffer, cam, light, &shading, &settings.background, edit)
    } else {
        (0..gbuffer.pixel_count())
            .flat_map(|p| {
                let px = gbuffer.pixel(p);
                [px[channel::COLOR], px[channel::COLOR + 1], px[channel::COLOR + 2]]
            })
            .collect()
    };
    Forward {
        splats,
        inputs,
        features,
        outputs,
        mlp_caches,
        channels,
        attrs,
        gbuffer,
        image,
        shading,
    }
}

/// Reverse pass of [`forward`] (run without edits and with `differentiable`).
pub fn backward(
    model: &Model,
    cam: &Camera,
    light: &PointLight,
    settings: &RenderSettings,
    fwd: &Forward,
    up: &Upstream,
) -> Gradients {
    let gaussians = &model.scene.gaussians;
    let caches = fwd.mlp_caches.as_ref().expect("forward must be differentiable");
    let k = fwd.channels;
    let center = cam.center();
    let shading = &fwd.shading;

    let mut g_buf = up.gbuffer.clone();
    if model.deferred {
        deferred_shade_backward(&fwd.gbuffer, cam, light, shading, &settings.background, &up.image, &mut g_buf);
    } else {
        for p in 0..fwd.gbuffer.pixel_count() {
            for c in 0..3 {
                g_buf.accum[p * k + channel::COLOR + c] += up.image[3 * p + c];
            }
        }
    }
    let rg = rasterize_backward(&fwd.gbuffer, &fwd.splats, &fwd.attrs, &g_buf, &settings.raster);

    // Attribute and projection gradients, one row per splat.
    let per_splat: Vec<([f64; PARAMS_PER_GAUSSIAN], MlpOutput)> = fwd
        .splats
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let g = &gaussians[s.source_index];
            let out = &fwd.outputs[i];
            let mut d_attr = rg.attrs[i * k..(i + 1) * k].to_vec();
            let mut row = [0.0; PARAMS_PER_GAUSSIAN];
            if !model.deferred {
                let d_color = Vec3::new(d_attr[channel::COLOR], d_attr[channel::COLOR + 1], d_attr[channel::COLOR + 2]);
                let sg = combine_backward(&shade_point(g, out), light, &center, shading, &d_color);
                for c in 0..3 {
                    d_attr[channel::BASECOLOR + c] += sg.basecolor[c];
                    d_attr[channel::RESIDUAL + c] += sg.residual[c];
                    d_attr[channel::INCIDENT + c] += sg.incident[c];
                    row[param::MEAN + c] += sg.position[c];
                    row[param::NORMAL + c] += sg.normal[c];
                }
                d_attr[channel::ROUGHNESS] += sg.roughness;
                d_attr[channel::METALNESS] += sg.metalness;
                d_attr[channel::SUBSURFACE] += sg.subsurfaceness;
            }
            let bc = g.basecolor();
            for c in 0..3 {
                row[param::BASECOLOR + c] += d_attr[channel::BASECOLOR + c] * bc[c] * (1.0 - bc[c]);
            }
            for (o, p, v) in [
                (channel::ROUGHNESS, param::ROUGHNESS, g.roughness()),
                (channel::METALNESS, param::METALNESS, g.metalness()),
                (channel::SUBSURFACE, param::SUBSURFACE, g.subsurfaceness()),
            ] {
                row[p] += d_attr[o] * v * (1.0 - v);
            }
            let (n, n_len) = normalize(&g.normal);
            if n_len > 0.0 {
                let d_n = Vec3::new(d_attr[channel::NORMAL], d_attr[channel::NORMAL + 1], d_attr[channel::NORMAL + 2]);
                let dn = normalize_backward(&n, n_len, &d_n);
                for c in 0..3 {
                    row[param::NORMAL + c] += dn[c];
                }
            }
            let pg = project_backward(g, cam, s, &rg.splats[i]);
            for c in 0..3 {
                row[param::MEAN + c] += pg.mean[c];
                row[param::LOG_SCALE + c] += pg.log_scale[c];
            }
            for c in 0..4 {
                row[param::ROTATION + c] += pg.rotation[c];
            }
            row[param::OPACITY] += pg.opacity_logit;
            let mut d_out = MlpOutput::default();
            for c in 0..3 {
                d_out.residual[c] = d_attr[channel::RESIDUAL + c];
                d_out.incident[c] = d_attr[channel::INCIDENT + c] + up.incident[i][c];
            }
            (row, d_out)
        })
        .collect();

    let d_outs: Vec<MlpOutput> = per_splat.iter().map(|(_, d)| *d).collect();
    let (mlp, mut d_inputs) = model.mlp.backward_batch(caches, &d_outs);
    for (d, v) in d_inputs.iter_mut().zip(&up.visibility) {
        d[input::VISIBILITY] += v;
    }
    let ctx = feature_context(model, cam, light);
    let feature_rows: Vec<[f64; PARAMS_PER_GAUSSIAN]> = fwd
        .splats
        .par_iter()
        .enumerate()
        .map(|(i, s)| gaussian_features_backward(&gaussians[s.source_index], &ctx, &fwd.features[i], &d_inputs[i]))
        .collect();

    let mut scene = vec![0.0; gaussians.len() * PARAMS_PER_GAUSSIAN];
    for (i, s) in fwd.splats.iter().enumerate() {
        let row = &mut scene[s.source_index * PARAMS_PER_GAUSSIAN..(s.source_index + 1) * PARAMS_PER_GAUSSIAN];
        for ((r, a), b) in row.iter_mut().zip(&per_splat[i].0).zip(&feature_rows[i]) {
            *r += a + b;
        }
    }
    let mean2d = fwd.splats.iter().zip(&rg.splats).map(|(s, g)| (s.source_index, *g)).collect();
    Gradients { scene, mlp, mean2d }
}

/// Decomposition planes a render can show instead of the final image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    #[default]
    Final,
    Basecolor,
    Roughness,
    Metalness,
    Normal,
    Residual,
    Incident,
    Alpha,
}

impl RenderMode {
    pub const ALL: [RenderMode; 8] = [
        RenderMode::Final,
        RenderMode::Basecolor,
        RenderMode::Roughness,
        RenderMode::Metalness,
        RenderMode::Normal,
        RenderMode::Residual,
        RenderMode::Incident,
        RenderMode::Alpha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RenderMode::Final => "final",
            RenderMode::Basecolor => "basecolor",
            RenderMode::Roughness => "roughness",
            RenderMode::Metalness => "metalness",
            RenderMode::Normal => "normal",
            RenderMode::Residual => "residual",
            RenderMode::Incident => "incident",
            RenderMode::Alpha => "alpha",
        }
    }

    pub fn parse(s: &str) -> Option<RenderMode> {
        RenderMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// The requested plane of a finished render. Attribute planes show edited,
/// un-premultiplied values composited over `background`; normals are mapped
/// from `[-1, 1]` to `[0, 1]`; alpha is one channel.
pub fn mode_image(fwd: &Forward, cam: &Camera, mode: RenderMode, edit: Option<&MaterialEdit>, background: &Vec3) -> Image {
    let gb = &fwd.gbuffer;
    let (w, h) = (gb.width, gb.height);
    match mode {
        RenderMode::Final => return fwd.rgb(),
        RenderMode::Alpha => return fwd.alpha(),
        _ => {}
    }
    let mut img = Image::new(w, h, 3);
    for p in 0..gb.pixel_count() {
        let v = match ShadePixel::from_gbuffer(gb, cam, p, 0.0) {
            Some(mut sp) => {
                if let Some(e) = edit {
                    e.apply(&mut sp);
                }
                let v = match mode {
                    RenderMode::Basecolor => sp.basecolor,
                    RenderMode::Roughness => Vec3::repeat(sp.roughness),
                    RenderMode::Metalness => Vec3::repeat(sp.metalness),
                    RenderMode::Normal => normalize(&sp.normal).0.map(|c| 0.5 * c + 0.5),
                    RenderMode::Residual => sp.residual,
                    _ => sp.incident,
                };
                v * sp.alpha + background * (1.0 - sp.alpha)
            }
            None => *background,
        };
        img.pixel_mut(p).copy_from_slice(v.as_slice());
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn weighted(model: &Model, w: &[f64]) -> f64 {
        let cam = fixtures::camera(30.0, 20.0, 16, 16);
        let fwd = forward(model, &cam, &fixtures::light(60.0, 40.0), &RenderSettings::default(), None, false);
        fwd.image.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn check(deferred: bool) {
        let mut model = fixtures::random_model(7, 4);
        model.deferred = deferred;
        let cam = fixtures::camera(30.0, 20.0, 16, 16);
        let light = fixtures::light(60.0, 40.0);
        let settings = RenderSettings::default();
        let fwd = forward(&model, &cam, &light, &settings, None, true);
        let w: Vec<f64> = (0..fwd.image.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
        let mut up = Upstream::zeros(&fwd);
        up.image = w.clone();
        let grads = backward(&model, &cam, &light, &settings, &fwd, &up);
        let base = model.scene.params();
        let mut bad = 0;
        for i in 0..base.len() {
            let h = 1e-6;
            let eval = |d: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[i] += d;
                m.scene.set_params(&p);
                weighted(&m, &w)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = grads.scene[i];
            if (fd - a).abs() > 1e-5 * fd.abs().max(a.abs()).max(1e-2) {
                bad += 1;
                eprintln!("param {i}: analytic {a} numeric {fd}");
            }
        }
        assert_eq!(bad, 0);
        let flat = model.mlp.to_flat();
        let g_flat = grads.mlp.to_flat();
        for i in (0..flat.len()).step_by(97) {
            let h = 1e-6;
            let eval = |d: f64| {
                let mut m = model.clone();
                let mut p = flat.clone();
                p[i] += d;
                m.mlp.set_flat(&p).unwrap();
                weighted(&m, &w)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g_flat[i]).abs() <= 1e-5 * fd.abs().max(g_flat[i].abs()).max(1e-2), "mlp {i}: {} vs {fd}", g_flat[i]);
        }
    }

    #[test]
    fn deferred_gradients_match_finite_differences() {
        check(true);
    }

    #[test]
    fn forward_shaded_gradients_match_finite_differences() {
        check(false);
    }

    #[test]
    fn skipping_hidden_splats_keeps_the_image() {
        let model = fixtures::random_model(3, 60);
        let cam = fixtures::camera(10.0, 10.0, 32, 32);
        let light = fixtures::light(0.0, 45.0);
        let mut s = RenderSettings::default();
        let a = forward(&model, &cam, &light, &s, None, false);
        s.skip_hidden = true;
        let b = forward(&model, &cam, &light, &s, None, false);
        assert!(b.splats.len() <= a.splats.len());
        assert_eq!(a.image, b.image);
    }
}

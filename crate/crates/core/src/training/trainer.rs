//! The optimization loop.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::densify::{densify_and_prune, reset_opacity, DensifyReport, DensifyStats};
use super::losses::PerceptualLoss;
use super::{evaluate, LossTerms, LossWeights, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::field::adam::Adam;
use crate::field::MlpParams;
use crate::imageio::Image;
use crate::math::logit;
use crate::metrics::psnr;
use crate::model::Model;
use crate::render::{forward, RenderSettings};
use crate::scene::{param, Camera, PointLight, PARAMS_PER_GAUSSIAN};
use crate::visibility::{visibility_targets, Bvh, VisibilitySample};

/// One training image with its camera and light.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera,
    pub light: PointLight,
    pub image: Image,
    pub mask: Image,
}

/// One line of the metrics log.
#[derive(Clone, Debug, Serialize)]
pub struct MetricRecord {
    pub step: usize,
    pub gaussians: usize,
    /// Display-space PSNR of the probe view.
    pub psnr: f64,
    #[serde(flatten)]
    pub terms: LossTerms,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<MetricRecord>,
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub settings: RenderSettings,
    pub model: Model,
    pub step: usize,
    pub log: Vec<MetricRecord>,
    views: &'a [TrainView],
    scene_opt: Adam,
    mlp_opt: Adam,
    stats: DensifyStats,
    rng: ChaCha8Rng,
    bvh: Option<Bvh>,
    targets: Option<Vec<Vec<VisibilitySample>>>,
    perceptual: Option<Box<dyn PerceptualLoss>>,
    sink: Option<Box<dyn Write + 'a>>,
}

fn group_scale(cfg: &TrainConfig, k: usize) -> f64 {
    match k {
        k if k < param::ROTATION => cfg.lr_scale_mean,
        k if k < param::LOG_SCALE => cfg.lr_scale_rotation,
        k if k < param::OPACITY => cfg.lr_scale_scale,
        k if k < param::BASECOLOR => cfg.lr_scale_opacity,
        k if k < param::NORMAL => cfg.lr_scale_material,
        k if k < param::VIS_SH => cfg.lr_scale_normal,
        _ => cfg.lr_scale_visibility,
    }
}

impl<'a> Trainer<'a> {
    /// Applies the configuration's variant switches to `model` and prepares
    /// optimizer state. Fails when there is nothing to train on.
    pub fn new(mut model: Model, views: &'a [TrainView], cfg: TrainConfig, settings: RenderSettings) -> Result<Self> {
        cfg.validate()?;
        if views.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        if model.scene.is_empty() {
            return Err(Error::EmptyScene);
        }
        model.shading = cfg.shading_model();
        model.deferred = cfg.deferred;
        if model.mlp.is_joint() != cfg.joint_mlp {
            model.mlp = MlpParams::new(cfg.seed, cfg.joint_mlp);
        }
        let n = model.scene.len();
        Ok(Self {
            scene_opt: Adam::new(n * PARAMS_PER_GAUSSIAN, cfg.lr),
            mlp_opt: Adam::new(model.mlp.param_count(), cfg.mlp_lr),
            stats: DensifyStats::new(n),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            settings,
            model,
            step: 0,
            log: Vec::new(),
            views,
            bvh: None,
            targets: None,
            perceptual: None,
            sink: None,
        })
    }

    pub fn with_perceptual(mut self, p: Box<dyn PerceptualLoss>) -> Self {
        self.perceptual = Some(p);
        self
    }

    /// Streams every metric record as one JSON line.
    pub fn with_log_sink(mut self, sink: Box<dyn Write + 'a>) -> Self {
        self.sink = Some(sink);
        self
    }

    /// Loss weights in effect at the current step.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.cfg.weights;
        w.incident = self.cfg.incident_weight(self.step);
        if !self.cfg.enhance_enabled {
            w.enhance = 0.0;
        }
        if !(self.cfg.lpips_enabled && self.perceptual.is_some()) {
            w.lpips = 0.0;
        }
        w
    }

    fn refresh_visibility(&mut self, light: &PointLight) -> Result<()> {
        let gs = &self.model.scene.gaussians;
        match self.bvh.as_mut() {
            Some(b) if b.len() == gs.len() => b.refit(gs)?,
            _ => self.bvh = Some(Bvh::build(gs)?),
        }
        let seed = self.cfg.seed ^ (self.step as u64).wrapping_mul(0xA24B_AED4_963E_E407);
        let bvh = self.bvh.as_ref().expect("built above");
        self.targets = Some(visibility_targets(bvh, gs, light, self.cfg.visibility_samples, seed));
        Ok(())
    }

    fn apply_freeze(&mut self) {
        if self.cfg.roughness_frozen(self.step) {
            let v = logit(self.cfg.roughness_freeze_value);
            for g in &mut self.model.scene.gaussians {
                g.roughness_logit = v;
            }
        }
    }

    /// Display-space PSNR of view `i` under the current model.
    pub fn view_psnr(&self, i: usize) -> Result<f64> {
        let v = &self.views[i];
        let fwd = forward(&self.model, &v.camera, &v.light, &self.settings, None, false);
        psnr(&fwd.rgb().to_display(), &v.image.to_display())
    }

    fn record(&mut self, terms: LossTerms) -> Result<()> {
        let rec = MetricRecord {
            step: self.step,
            gaussians: self.model.scene.len(),
            psnr: self.view_psnr(0)?,
            terms,
        };
        if let Some(s) = self.sink.as_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(s, "{line}").map_err(|e| Error::io("metrics log", e))?;
        }
        log::info!("step {} loss {:.5} psnr {:.2} gaussians {}", rec.step, rec.terms.total, rec.psnr, rec.gaussians);
        self.log.push(rec);
        Ok(())
    }

    /// Runs one optimization step and returns its loss terms.
    pub fn step(&mut self) -> Result<LossTerms> {
        let frame = self.rng.random_range(0..self.views.len());
        let view = &self.views[frame];
        let w = self.effective_weights();
        if w.raytrace > 0.0 && (self.targets.is_none() || self.step % self.cfg.visibility_every == 0) {
            self.refresh_visibility(&view.light)?;
        }
        self.apply_freeze();
        let sample = Sample {
            camera: &view.camera,
            light: &view.light,
            image: &view.image,
            mask: &view.mask,
            visibility: self.targets.as_deref(),
        };
        let ev = evaluate(&self.model, &self.settings, &sample, &w, self.perceptual.as_deref(), true)?;
        let terms = ev.terms;
        let mut grads = ev.gradients.expect("requested");
        let finite = terms.total.is_finite() && grads.scene.iter().all(|g| g.is_finite()) && grads.mlp.is_finite();
        if !finite {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!(
                    "non-finite loss or gradient on frame {frame}; terms {}",
                    serde_json::to_string(&terms).unwrap_or_default()
                ),
            });
        }
        if self.cfg.roughness_frozen(self.step) {
            for row in grads.scene.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
                row[param::ROUGHNESS] = 0.0;
            }
        }
        if self.step >= self.cfg.densify_from && self.step < self.cfg.densify_until {
            self.stats.record(&grads.mean2d, &view.camera);
        }

        let decay = self.cfg.decay_factor(self.step);
        let base = self.cfg.lr * decay;
        let scales: [f64; PARAMS_PER_GAUSSIAN] = std::array::from_fn(|k| base * group_scale(&self.cfg, k));
        let mut params = self.model.scene.params();
        self.scene_opt
            .update_with(&mut params, &grads.scene, |i| scales[i % PARAMS_PER_GAUSSIAN])?;
        self.model.scene.set_params(&params);
        let mut flat = self.model.mlp.to_flat();
        self.mlp_opt.lr = self.cfg.mlp_lr_at(self.step);
        self.mlp_opt.update(&mut flat, &grads.mlp.to_flat())?;
        self.model.mlp.set_flat(&flat)?;

        self.step += 1;
        self.maintain_density()?;
        if self.step % self.cfg.log_every == 0 || self.step == self.cfg.total_steps {
            self.record(terms)?;
        }
        Ok(terms)
    }

    fn maintain_density(&mut self) -> Result<Option<DensifyReport>> {
        let s = self.step;
        let mut report = None;
        if s > self.cfg.densify_from && s <= self.cfg.densify_until && s % self.cfg.densify_every == 0 {
            let r = densify_and_prune(
                &mut self.model.scene,
                &self.stats,
                &mut self.scene_opt,
                self.cfg.densify_grad_threshold,
                self.cfg.percent_dense,
                self.cfg.prune_opacity,
                self.cfg.max_gaussians,
                &mut self.rng,
            );
            log::debug!("step {s}: {r:?}");
            self.stats = DensifyStats::new(self.model.scene.len());
            if r != DensifyReport::default() {
                self.targets = None;
            }
            report = Some(r);
        }
        if s <= self.cfg.densify_until && s % self.cfg.opacity_reset_every == 0 {
            reset_opacity(&mut self.model.scene, &mut self.scene_opt);
        }
        Ok(report)
    }

    /// Runs the remaining steps and returns the trained model.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while self.step < self.cfg.total_steps {
            self.step()?;
        }
        self.apply_freeze();
        Ok(TrainOutcome {
            model: self.model,
            log: self.log,
        })
    }
}

pub fn train(model: Model, views: &[TrainView], cfg: TrainConfig, settings: RenderSettings) -> Result<TrainOutcome> {
    Trainer::new(model, views, cfg, settings)?.run()
}

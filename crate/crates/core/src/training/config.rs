//! Loss weights, schedules and variant switches, read from flat `key = value` text.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub dssim: f64,
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
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dssim: 0.2,
            lpips: 0.2,
            normal: 0.02,
            incident: 0.02,
            mask: 0.1,
            smooth_metalness: 0.002,
            smooth_roughness: 0.002,
            smooth_subsurface: 0.002,
            smooth_basecolor: 0.006,
            enhance: 0.005,
            raytrace: 0.01,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [(&'static str, f64); 11] {
        [
            ("dssim", self.dssim),
            ("lpips", self.lpips),
            ("normal", self.normal),
            ("incident", self.incident),
            ("mask", self.mask),
            ("smooth_metalness", self.smooth_metalness),
            ("smooth_roughness", self.smooth_roughness),
            ("smooth_subsurface", self.smooth_subsurface),
            ("smooth_basecolor", self.smooth_basecolor),
            ("enhance", self.enhance),
            ("raytrace", self.raytrace),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.as_array() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.dssim > 1.0 {
            return Err(Error::Config("weight dssim must be <= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub total_steps: usize,
    pub lr: f64,
    /// Multiplied into every learning rate once per `lr_decay_every` steps.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Per-step multiplicative decay of the network learning rate.
    pub mlp_gamma: f64,
    pub mlp_lr: f64,
    /// Learning-rate multipliers per Gaussian parameter group.
    pub lr_scale_mean: f64,
    pub lr_scale_rotation: f64,
    pub lr_scale_scale: f64,
    pub lr_scale_opacity: f64,
    pub lr_scale_material: f64,
    pub lr_scale_normal: f64,
    pub lr_scale_visibility: f64,
    /// The incident constraint weight grows linearly to its full value and is
    /// dropped at this step.
    pub incident_ramp_end: usize,
    pub roughness_freeze_value: f64,
    pub roughness_freeze_end: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_every: usize,
    pub densify_grad_threshold: f64,
    pub opacity_reset_every: usize,
    pub prune_opacity: f64,
    /// Gaussians larger than this fraction of the scene extent are split, smaller ones cloned.
    pub percent_dense: f64,
    pub max_gaussians: usize,
    pub visibility_every: usize,
    pub visibility_samples: usize,
    pub enhance_enabled: bool,
    pub lpips_enabled: bool,
    pub residual: bool,
    pub pbr: bool,
    pub deferred: bool,
    pub joint_mlp: bool,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            total_steps: 60_000,
            lr: 0.001,
            lr_decay: 0.99,
            lr_decay_every: 1000,
            mlp_gamma: 0.9999,
            mlp_lr: 0.001,
            lr_scale_mean: 0.2,
            lr_scale_rotation: 1.0,
            lr_scale_scale: 5.0,
            lr_scale_opacity: 25.0,
            lr_scale_material: 5.0,
            lr_scale_normal: 2.0,
            lr_scale_visibility: 2.5,
            incident_ramp_end: 7000,
            roughness_freeze_value: 0.5,
            roughness_freeze_end: 10_000,
            densify_from: 500,
            densify_until: 15_000,
            densify_every: 100,
            densify_grad_threshold: 2e-4,
            opacity_reset_every: 3000,
            prune_opacity: 0.005,
            percent_dense: 0.01,
            max_gaussians: 100_000,
            visibility_every: 10,
            visibility_samples: 16,
            enhance_enabled: false,
            lpips_enabled: false,
            residual: true,
            pbr: true,
            deferred: true,
            joint_mlp: true,
            seed: 0,
            log_every: 100,
        }
    }
}

fn scale_step(v: usize, f: f64) -> usize {
    ((v as f64) * f).round() as usize
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.total_steps > 0 && !(self.incident_ramp_end < self.roughness_freeze_end && self.roughness_freeze_end < self.total_steps) {
            return bad("schedule must satisfy incident_ramp_end < roughness_freeze_end < total_steps");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("mlp_lr", self.mlp_lr),
            ("lr_decay", self.lr_decay),
            ("mlp_gamma", self.mlp_gamma),
            ("lr_scale_mean", self.lr_scale_mean),
            ("lr_scale_rotation", self.lr_scale_rotation),
            ("lr_scale_scale", self.lr_scale_scale),
            ("lr_scale_opacity", self.lr_scale_opacity),
            ("lr_scale_material", self.lr_scale_material),
            ("lr_scale_normal", self.lr_scale_normal),
            ("lr_scale_visibility", self.lr_scale_visibility),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("percent_dense", self.percent_dense),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.roughness_freeze_value) || !(0.0..1.0).contains(&self.prune_opacity) {
            return bad("roughness_freeze_value and prune_opacity must lie in [0, 1]");
        }
        if self.lr_decay_every == 0 || self.densify_every == 0 || self.visibility_every == 0 || self.log_every == 0 {
            return bad("intervals must be non-zero");
        }
        if self.visibility_samples == 0 {
            return bad("visibility_samples must be non-zero");
        }
        Ok(())
    }

    /// Same schedule compressed (or stretched) to `total_steps`: every phase
    /// boundary is scaled by `total_steps / self.total_steps`, and so is the
    /// per-step network decay so that its total decay is preserved. Densify and
    /// opacity-reset intervals stay as they are: they set how many steps of
    /// gradient statistics each decision sees.
    pub fn scaled_to(&self, total_steps: usize) -> TrainConfig {
        let f = total_steps as f64 / self.total_steps.max(1) as f64;
        TrainConfig {
            total_steps,
            lr_decay_every: scale_step(self.lr_decay_every, f).max(1),
            mlp_gamma: self.mlp_gamma.powf(1.0 / f),
            incident_ramp_end: scale_step(self.incident_ramp_end, f),
            roughness_freeze_end: scale_step(self.roughness_freeze_end, f),
            densify_from: scale_step(self.densify_from, f),
            densify_until: scale_step(self.densify_until, f),
            ..self.clone()
        }
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        // Flattened structs cannot deny unknown fields, so check keys by hand.
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let known: toml::Table = toml::from_str(&TrainConfig::default().to_toml()).expect("defaults parse");
        if let Some(k) = table.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::Config(format!("unknown config key '{k}'")));
        }
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Weight of the incident constraint at `step`.
    pub fn incident_weight(&self, step: usize) -> f64 {
        if step >= self.incident_ramp_end || self.incident_ramp_end == 0 {
            0.0
        } else {
            self.weights.incident * step as f64 / self.incident_ramp_end as f64
        }
    }

    pub fn roughness_frozen(&self, step: usize) -> bool {
        step < self.roughness_freeze_end
    }

    /// Gaussian learning-rate factor from the step decay.
    pub fn decay_factor(&self, step: usize) -> f64 {
        self.lr_decay.powi((step / self.lr_decay_every) as i32)
    }

    pub fn mlp_lr_at(&self, step: usize) -> f64 {
        self.mlp_lr * self.mlp_gamma.powi(step as i32)
    }

    pub fn shading_model(&self) -> crate::shading::ShadingModel {
        crate::shading::ShadingModel {
            residual: self.residual,
            pbr: self.pbr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::default();
        c.weights.dssim = 0.3;
        c.deferred = false;
        let text = c.to_toml();
        assert!(text.lines().all(|l| !l.starts_with('[')), "config must stay flat");
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_use_defaults_and_unknown_keys_fail() {
        let c = TrainConfig::from_toml("total_steps = 20000\nmask = 0.5\n").unwrap();
        assert_eq!(c.total_steps, 20000);
        assert_eq!(c.weights.mask, 0.5);
        assert_eq!(c.lr, 0.001);
        assert!(TrainConfig::from_toml("bogus = 1\n").is_err());
        assert!(TrainConfig::from_toml("mask = -1.0\n").is_err());
        assert!(TrainConfig::from_toml("total_steps = 8000\n").is_err());
    }

    #[test]
    fn ramp_and_freeze() {
        let c = TrainConfig::default();
        assert_eq!(c.incident_weight(0), 0.0);
        assert!((c.incident_weight(3500) - 0.01).abs() < 1e-15);
        assert_eq!(c.incident_weight(7000), 0.0);
        assert!(c.roughness_frozen(9999));
        assert!(!c.roughness_frozen(10_000));
        assert_eq!(c.decay_factor(999), 1.0);
        assert_eq!(c.decay_factor(1000), 0.99);
    }

    #[test]
    fn scaling_keeps_order() {
        let s = TrainConfig::default().scaled_to(5000);
        s.validate().unwrap();
        assert!(s.incident_ramp_end < s.roughness_freeze_end);
        assert!((s.mlp_gamma.powi(5000) - 0.9999f64.powi(60000)).abs() < 1e-9);
    }
}

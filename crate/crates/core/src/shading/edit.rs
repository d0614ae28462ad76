//! Material edits applied to shading inputs before evaluation.

use serde::{Deserialize, Serialize};

use super::ShadePixel;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Optional overrides and multipliers. Set-type fields replace the attribute,
/// scale-type fields multiply it afterwards; results are clamped to `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialEdit {
    pub basecolor_tint: Option<[f64; 3]>,
    pub roughness_set: Option<f64>,
    pub roughness_scale: Option<f64>,
    pub metalness_set: Option<f64>,
    pub metalness_scale: Option<f64>,
    pub subsurface_set: Option<f64>,
    pub subsurface_scale: Option<f64>,
    pub residual_tint: Option<[f64; 3]>,
    pub residual_intensity: Option<f64>,
    /// Multiplies every Gaussian opacity before rasterization.
    pub opacity_scale: Option<f64>,
}

fn scalar(v: f64, set: Option<f64>, scale: Option<f64>) -> f64 {
    (set.unwrap_or(v) * scale.unwrap_or(1.0)).clamp(0.0, 1.0)
}

fn color(v: Vec3, tint: Option<[f64; 3]>, gain: f64) -> Vec3 {
    let t = tint.map(Vec3::from).unwrap_or(Vec3::repeat(1.0));
    (v.component_mul(&t) * gain).map(|c| c.clamp(0.0, 1.0))
}

impl MaterialEdit {
    /// Field names accepted by [`MaterialEdit::set`], with their value ranges.
    pub const FIELDS: [(&'static str, &'static str, f64, f64); 10] = [
        ("basecolor_tint", "rgb", 0.0, 4.0),
        ("roughness_set", "scalar", 0.0, 1.0),
        ("roughness_scale", "scalar", 0.0, 4.0),
        ("metalness_set", "scalar", 0.0, 1.0),
        ("metalness_scale", "scalar", 0.0, 4.0),
        ("subsurface_set", "scalar", 0.0, 1.0),
        ("subsurface_scale", "scalar", 0.0, 4.0),
        ("residual_tint", "rgb", 0.0, 4.0),
        ("residual_intensity", "scalar", 0.0, 4.0),
        ("opacity_scale", "scalar", 0.0, 4.0),
    ];

    pub fn is_identity(&self) -> bool {
        *self == MaterialEdit::default()
    }

    pub fn apply(&self, sp: &mut ShadePixel) {
        sp.basecolor = color(sp.basecolor, self.basecolor_tint, 1.0);
        sp.roughness = scalar(sp.roughness, self.roughness_set, self.roughness_scale);
        sp.metalness = scalar(sp.metalness, self.metalness_set, self.metalness_scale);
        sp.subsurfaceness = scalar(sp.subsurfaceness, self.subsurface_set, self.subsurface_scale);
        sp.residual = color(sp.residual, self.residual_tint, self.residual_intensity.unwrap_or(1.0));
    }

    pub fn scaled_opacity(&self, opacity: f64) -> f64 {
        (opacity * self.opacity_scale.unwrap_or(1.0)).clamp(0.0, 1.0)
    }

    /// Sets one field from `key=value` text; colors are `r,g,b`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("edit {key}: '{s}' is not a number")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("edit {key}: value must be finite and >= 0")));
            }
            Ok(v)
        };
        let rgb = |s: &str| -> Result<[f64; 3]> {
            let parts: Vec<&str> = s.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!("edit {key}: expected r,g,b")));
            }
            Ok([num(parts[0])?, num(parts[1])?, num(parts[2])?])
        };
        match key {
            "basecolor_tint" => self.basecolor_tint = Some(rgb(value)?),
            "roughness_set" => self.roughness_set = Some(num(value)?),
            "roughness_scale" => self.roughness_scale = Some(num(value)?),
            "metalness_set" => self.metalness_set = Some(num(value)?),
            "metalness_scale" => self.metalness_scale = Some(num(value)?),
            "subsurface_set" => self.subsurface_set = Some(num(value)?),
            "subsurface_scale" => self.subsurface_scale = Some(num(value)?),
            "residual_tint" => self.residual_tint = Some(rgb(value)?),
            "residual_intensity" => self.residual_intensity = Some(num(value)?),
            "opacity_scale" => self.opacity_scale = Some(num(value)?),
            _ => return Err(Error::Config(format!("unknown edit field '{key}'"))),
        }
        Ok(())
    }

    /// Parses a `key=value` pair.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("edit '{pair}' is not key=value")))?;
        self.set(k.trim(), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp() -> ShadePixel {
        ShadePixel {
            position: Vec3::zeros(),
            normal: Vec3::z(),
            basecolor: Vec3::new(0.5, 0.6, 0.7),
            roughness: 0.5,
            metalness: 0.1,
            subsurfaceness: 0.4,
            residual: Vec3::new(0.2, 0.3, 0.4),
            incident: Vec3::repeat(1.0),
            alpha: 1.0,
        }
    }

    #[test]
    fn identity_changes_nothing() {
        let mut a = sp();
        MaterialEdit::default().apply(&mut a);
        assert_eq!(a, sp());
    }

    #[test]
    fn set_overrides_are_idempotent() {
        let e = MaterialEdit {
            roughness_set: Some(0.2),
            metalness_set: Some(0.9),
            subsurface_set: Some(0.0),
            ..Default::default()
        };
        let mut once = sp();
        e.apply(&mut once);
        let mut twice = once;
        e.apply(&mut twice);
        assert_eq!(once, twice);
    }

    #[test]
    fn results_are_clamped() {
        let e = MaterialEdit {
            roughness_scale: Some(3.0),
            basecolor_tint: Some([4.0, 4.0, 4.0]),
            residual_intensity: Some(10.0),
            ..Default::default()
        };
        let mut a = sp();
        e.apply(&mut a);
        assert_eq!(a.roughness, 1.0);
        assert!(a.basecolor.iter().all(|&c| c <= 1.0));
        assert!(a.residual.iter().all(|&c| c <= 1.0));
    }

    #[test]
    fn parses_pairs() {
        let mut e = MaterialEdit::default();
        e.set_pair("roughness_set=0.3").unwrap();
        e.set_pair("residual_tint=1,0.5,0.25").unwrap();
        assert_eq!(e.roughness_set, Some(0.3));
        assert_eq!(e.residual_tint, Some([1.0, 0.5, 0.25]));
        assert!(e.set_pair("bogus=1").is_err());
        assert!(e.set_pair("roughness_set").is_err());
        assert!(e.set_pair("metalness_set=-1").is_err());
    }
}

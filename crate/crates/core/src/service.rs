//! The request-level render path behind the interactive service: orbit-style
//! requests, their validation, and encoded frames. Transport lives elsewhere.

use std::io::Cursor;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::dataset::LightStage;
use crate::error::{Error, Result};
use crate::imageio::{encode_gray8, encode_srgb8, to_u8, Image};
use crate::math::Vec3;
use crate::model::Model;
use crate::render::{forward, mode_image, RenderMode, RenderSettings};
use crate::scene::{direction_from_angles, Camera, PointLight};
use crate::shading::MaterialEdit;

pub const DEFAULT_MAX_RESOLUTION: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitCamera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub fov: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitLight {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub camera: OrbitCamera,
    pub light: OrbitLight,
    #[serde(default)]
    pub edit: MaterialEdit,
    /// `[width, height]` in pixels.
    pub resolution: [usize; 2],
    #[serde(default)]
    pub mode: RenderMode,
    /// Echoed back with streamed frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
}

impl Default for RenderRequest {
    fn default() -> Self {
        Self {
            camera: OrbitCamera {
                azimuth: 30.0,
                elevation: 20.0,
                distance: 2.0,
                fov: 40.0,
            },
            light: OrbitLight {
                azimuth: 60.0,
                elevation: 45.0,
                distance: 3.0,
                intensity: 1.0,
            },
            edit: MaterialEdit::default(),
            resolution: [256, 256],
            mode: RenderMode::Final,
            id: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

impl RenderRequest {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(bytes: &[u8]) -> std::result::Result<RenderRequest, Vec<FieldError>> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "body".to_string() } else { path };
            vec![field_error(field, e.into_inner().to_string())]
        })
    }

    pub fn validate(&self, max_resolution: usize) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let c = &self.camera;
        let l = &self.light;
        for (name, v) in [
            ("camera.azimuth", c.azimuth),
            ("camera.elevation", c.elevation),
            ("light.azimuth", l.azimuth),
            ("light.elevation", l.elevation),
        ] {
            if !v.is_finite() {
                errs.push(field_error(name, "must be finite"));
            }
        }
        if !(c.elevation.abs() < 90.0) {
            errs.push(field_error("camera.elevation", "must lie strictly between -90 and 90"));
        }
        for (name, v) in [("camera.distance", c.distance), ("light.distance", l.distance)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(field_error(name, "must be positive"));
            }
        }
        if !(c.fov > 0.0 && c.fov < 180.0) {
            errs.push(field_error("camera.fov", "must lie in (0, 180) degrees"));
        }
        if !(l.intensity >= 0.0 && l.intensity.is_finite()) {
            errs.push(field_error("light.intensity", "must be finite and >= 0"));
        }
        for (k, &r) in self.resolution.iter().enumerate() {
            if r == 0 || r > max_resolution {
                errs.push(field_error(format!("resolution[{k}]"), format!("must lie in 1..={max_resolution}")));
            }
        }
        let values = serde_json::to_value(&self.edit).expect("edit serializes");
        for (name, _, lo, hi) in MaterialEdit::FIELDS {
            let nums: Vec<f64> = match &values[name] {
                serde_json::Value::Number(n) => n.as_f64().into_iter().collect(),
                serde_json::Value::Array(a) => a.iter().filter_map(|v| v.as_f64()).collect(),
                _ => continue,
            };
            if nums.iter().any(|v| !(lo..=hi).contains(v)) {
                errs.push(field_error(format!("edit.{name}"), format!("must lie in [{lo}, {hi}]")));
            }
        }
        errs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Png,
    Jpeg,
}

/// 8-bit encoding of a render plane: colors through the sRGB curve, scalar and
/// normal planes as raw values, alpha as one grey channel.
pub fn encode_plane(img: &Image, mode: RenderMode, encoding: Encoding) -> Result<Vec<u8>> {
    let dynamic = match mode {
        RenderMode::Alpha => DynamicImage::ImageLuma8(encode_gray8(img)),
        RenderMode::Final | RenderMode::Basecolor | RenderMode::Residual => DynamicImage::ImageRgb8(encode_srgb8(img)),
        _ => DynamicImage::ImageRgb8(image::RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
            let p = img.pixel(y as usize * img.width + x as usize);
            image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
        })),
    };
    let format = match encoding {
        Encoding::Png => ImageFormat::Png,
        Encoding::Jpeg => ImageFormat::Jpeg,
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, format)
        .map_err(|e| Error::image("<memory>", e))?;
    Ok(out.into_inner())
}

#[derive(Clone, Debug, Serialize)]
pub struct EditField {
    pub name: &'static str,
    pub kind: &'static str,
    pub min: f64,
    pub max: f64,
}

/// Self-description served to clients.
#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub max_resolution: usize,
    pub gaussians: usize,
    pub target: [f64; 3],
    pub lights: Vec<[f64; 3]>,
    pub modes: Vec<&'static str>,
    pub edit: Vec<EditField>,
    pub default_request: RenderRequest,
}

/// An immutable model snapshot that turns requests into frames.
pub struct Renderer {
    pub model: Model,
    pub stage: LightStage,
    pub max_resolution: usize,
    pub settings: RenderSettings,
    /// Orbit centre: the middle of the scene bounds.
    pub target: Vec3,
}

impl Renderer {
    pub fn new(model: Model, stage: LightStage, max_resolution: usize) -> Self {
        let target = model.scene.bounds.center();
        Self {
            model,
            stage,
            max_resolution,
            settings: RenderSettings {
                skip_hidden: true,
                ..Default::default()
            },
            target,
        }
    }

    pub fn meta(&self) -> Meta {
        Meta {
            max_resolution: self.max_resolution,
            gaussians: self.model.scene.len(),
            target: self.target.into(),
            lights: self.stage.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
            modes: RenderMode::ALL.iter().map(|m| m.name()).collect(),
            edit: MaterialEdit::FIELDS
                .iter()
                .map(|&(name, kind, min, max)| EditField { name, kind, min, max })
                .collect(),
            default_request: RenderRequest::default(),
        }
    }

    pub fn camera(&self, req: &RenderRequest) -> Result<Camera> {
        let c = &req.camera;
        Camera::orbit(&self.target, c.azimuth, c.elevation, c.distance, c.fov, req.resolution[0], req.resolution[1])
    }

    pub fn light(&self, req: &RenderRequest) -> Result<PointLight> {
        let l = &req.light;
        PointLight::new(self.target + direction_from_angles(l.azimuth, l.elevation) * l.distance, l.intensity)
    }

    /// The requested plane in linear values.
    pub fn render(&self, req: &RenderRequest) -> std::result::Result<Image, Vec<FieldError>> {
        let errs = req.validate(self.max_resolution);
        if !errs.is_empty() {
            return Err(errs);
        }
        let cam = self.camera(req).map_err(|e| vec![field_error("camera", e.to_string())])?;
        let light = self.light(req).map_err(|e| vec![field_error("light", e.to_string())])?;
        let edit = (!req.edit.is_identity()).then_some(&req.edit);
        let fwd = forward(&self.model, &cam, &light, &self.settings, edit, false);
        Ok(mode_image(&fwd, &cam, req.mode, edit, &self.settings.background))
    }

    pub fn render_encoded(&self, req: &RenderRequest, encoding: Encoding) -> std::result::Result<Vec<u8>, Vec<FieldError>> {
        let img = self.render(req)?;
        encode_plane(&img, req.mode, encoding).map_err(|e| vec![field_error("encoding", e.to_string())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn renderer() -> Renderer {
        Renderer::new(fixtures::random_model(2, 30), LightStage::standard(3.0).unwrap(), 128)
    }

    #[test]
    fn parse_errors_name_the_field() {
        let errs = RenderRequest::from_json(br#"{"camera": {"azimuth": "x"}}"#).unwrap_err();
        assert_eq!(errs[0].field, "camera.azimuth");
        let errs = RenderRequest::from_json(b"not json").unwrap_err();
        assert_eq!(errs[0].field, "body");
        let ok = serde_json::to_vec(&RenderRequest::default()).unwrap();
        assert_eq!(RenderRequest::from_json(&ok).unwrap(), RenderRequest::default());
    }

    #[test]
    fn validation_catches_each_field() {
        let r = renderer();
        let mut req = RenderRequest::default();
        req.resolution = [129, 64];
        req.camera.fov = 0.0;
        req.light.intensity = -1.0;
        req.edit.roughness_set = Some(2.0);
        let fields: Vec<String> = r.render(&req).unwrap_err().into_iter().map(|e| e.field).collect();
        assert_eq!(fields, ["camera.fov", "light.intensity", "resolution[0]", "edit.roughness_set"]);
    }

    #[test]
    fn frames_are_deterministic_and_alpha_is_grey() {
        let r = renderer();
        let mut req = RenderRequest::default();
        req.resolution = [40, 32];
        let a = r.render_encoded(&req, Encoding::Png).unwrap();
        assert_eq!(a, r.render_encoded(&req, Encoding::Png).unwrap());
        req.mode = RenderMode::Alpha;
        let img = image::load_from_memory(&r.render_encoded(&req, Encoding::Png).unwrap()).unwrap();
        assert_eq!(img.color(), image::ColorType::L8);
        assert_eq!((img.width(), img.height()), (40, 32));
    }
}

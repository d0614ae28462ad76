//! OLAT datasets: the light stage, the JSON manifest, loading frames as linear
//! images, and per-frame evaluation.

pub mod hull;
pub mod synth;

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{read_mask, read_rgb, Image};
use crate::math::Vec3;
use crate::metrics::{psnr, ssim};
use crate::model::Model;
use crate::render::{forward, RenderSettings};
use crate::scene::{direction_from_angles, Aabb, Camera, PointLight};
use crate::training::trainer::TrainView;

pub const DEFAULT_RINGS: usize = 7;
pub const DEFAULT_PER_RING: usize = 16;

/// Fixed point lights on the upper hemisphere, ring by ring from the horizon up.
#[derive(Clone, Debug, PartialEq)]
pub struct LightStage {
    pub radius: f64,
    pub rings: usize,
    pub per_ring: usize,
    pub positions: Vec<Vec3>,
}

impl LightStage {
    /// `rings` elevations evenly spaced strictly between horizon and pole,
    /// `per_ring` evenly spaced azimuths on each.
    pub fn generate(radius: f64, rings: usize, per_ring: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("light stage radius must be positive, got {radius}")));
        }
        let mut positions = Vec::with_capacity(rings * per_ring);
        for k in 0..rings {
            let el = 90.0 * (k + 1) as f64 / (rings + 1) as f64;
            for j in 0..per_ring {
                let az = 360.0 * j as f64 / per_ring as f64;
                positions.push(direction_from_angles(az, el) * radius);
            }
        }
        Ok(Self {
            radius,
            rings,
            per_ring,
            positions,
        })
    }

    pub fn standard(radius: f64) -> Result<Self> {
        Self::generate(radius, DEFAULT_RINGS, DEFAULT_PER_RING)
    }

    /// A stage with no ring structure, e.g. read from a manifest.
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        let radius = positions.iter().map(|p| p.norm()).sum::<f64>() / positions.len().max(1) as f64;
        Self {
            radius,
            rings: 1,
            per_ring: positions.len(),
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// White unit-intensity light at stage position `i`.
    pub fn light(&self, i: usize) -> PointLight {
        PointLight::unit(self.positions[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub file: String,
    pub mask: String,
    pub light: usize,
    /// Camera-to-world, row-major, OpenCV axes.
    pub transform: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
    pub split: Split,
}

impl FrameEntry {
    pub fn from_camera(file: String, mask: String, light: usize, cam: &Camera, split: Split) -> Self {
        let m = cam.cam_to_world_matrix();
        Self {
            file,
            mask,
            light,
            transform: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            w: cam.width,
            h: cam.height,
            split,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let m = Matrix4::from_fn(|r, c| self.transform[r][c]);
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] || m.try_inverse().is_none() {
            return Err(Error::InvalidCamera("transform is not an invertible rigid transform".into()));
        }
        Camera::from_cam_to_world(&m, (self.fx, self.fy), (self.cx, self.cy), (self.w, self.h))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub lights: Vec<[f64; 3]>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Manifest> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn stage(&self) -> LightStage {
        LightStage::from_positions(self.lights.iter().map(|&p| Vec3::from(p)).collect())
    }

    /// Structural checks that need no file access; `root` resolves relative paths.
    pub fn validate(&self, root: &Path) -> Result<Vec<Camera>> {
        if self.frames.is_empty() {
            return Err(Error::Dataset("no frames".into()));
        }
        if self.lights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite light position".into()));
        }
        self.frames
            .iter()
            .map(|f| {
                let frame_err = |reason: String| Error::Frame {
                    frame: f.file.clone(),
                    reason,
                };
                if f.light >= self.lights.len() {
                    return Err(frame_err(format!(
                        "light index {} out of range for {} lights",
                        f.light,
                        self.lights.len()
                    )));
                }
                for p in [&f.file, &f.mask] {
                    if !root.join(p).is_file() {
                        return Err(frame_err(format!("missing file {p}")));
                    }
                }
                f.camera().map_err(|e| frame_err(e.to_string()))
            })
            .collect()
    }
}

/// One loaded frame; images are linear RGB, masks one channel in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub camera: Camera,
    pub light: usize,
    pub split: Split,
    pub image: Image,
    pub mask: Image,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub stage: LightStage,
    pub frames: Vec<Frame>,
    /// Bounds of the visual hull of the training masks.
    pub bounds: Aabb,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let manifest = Manifest::read(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let cameras = manifest.validate(&root)?;
        let frames = manifest
            .frames
            .par_iter()
            .zip(cameras)
            .map(|(f, camera)| {
                let frame_err = |e: Error| Error::Frame {
                    frame: f.file.clone(),
                    reason: e.to_string(),
                };
                let image = read_rgb(&root.join(&f.file)).map_err(frame_err)?;
                let mask = read_mask(&root.join(&f.mask)).map_err(frame_err)?;
                if (image.width, image.height) != (f.w, f.h) || (mask.width, mask.height) != (f.w, f.h) {
                    return Err(Error::Frame {
                        frame: f.file.clone(),
                        reason: format!("image size does not match manifest {}x{}", f.w, f.h),
                    });
                }
                Ok(Frame {
                    name: f.file.clone(),
                    camera,
                    light: f.light,
                    split: f.split,
                    image,
                    mask,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stage = manifest.stage();
        // Held-out silhouettes stay out of the hull unless there is nothing else.
        let mut carving: Vec<&Frame> = frames.iter().filter(|f| f.split == Split::Train).collect();
        if carving.is_empty() {
            carving = frames.iter().collect();
        }
        let bounds = hull::VisualHull::carve(&carving, hull::DEFAULT_RESOLUTION)?.bounds();
        Ok(Dataset {
            root,
            manifest,
            stage,
            frames,
            bounds,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn views(&self, split: Split) -> Vec<TrainView> {
        self.split(split)
            .map(|f| TrainView {
                camera: f.camera.clone(),
                light: self.stage.light(f.light),
                image: f.image.clone(),
                mask: f.mask.clone(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameScore {
    pub frame: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Display-space PSNR and SSIM of `model` on every frame of `split`.
pub fn evaluate_split(model: &Model, dataset: &Dataset, split: Split, settings: &RenderSettings) -> Result<Vec<FrameScore>> {
    dataset
        .split(split)
        .map(|f| {
            let fwd = forward(model, &f.camera, &dataset.stage.light(f.light), settings, None, false);
            let pred = fwd.rgb().to_display();
            let gt = f.image.to_display();
            Ok(FrameScore {
                frame: f.name.clone(),
                psnr: psnr(&pred, &gt)?,
                ssim: ssim(&pred, &gt)?,
            })
        })
        .collect()
}

pub fn mean_scores(scores: &[FrameScore]) -> (f64, f64) {
    let n = scores.len().max(1) as f64;
    (
        scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        scores.iter().map(|s| s.ssim).sum::<f64>() / n,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_stage_shape() {
        let s = LightStage::standard(3.0).unwrap();
        assert_eq!(s.len(), 112);
        for ring in s.positions.chunks(16) {
            for p in ring {
                assert!((p.norm() - 3.0).abs() < 1e-12);
                assert!(p.z > 0.0);
                assert_eq!(p.z, ring[0].z);
            }
            for j in 0..16 {
                let (a, b) = (ring[j], ring[(j + 1) % 16]);
                let gap = (a.y.atan2(a.x) - b.y.atan2(b.x)).abs().to_degrees();
                let gap = gap.min(360.0 - gap);
                assert!((gap - 22.5).abs() < 1e-9);
            }
        }
        assert!(LightStage::generate(0.0, 7, 16).is_err());
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let m = Manifest {
            lights: vec![[0.0, 0.0, 3.0]],
            frames: vec![],
        };
        let err = m.validate(Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("no frames"));
    }

    #[test]
    fn unknown_manifest_fields_fail() {
        assert!(Manifest::from_json(r#"{"lights": [], "frames": [], "extra": 1}"#).is_err());
    }
}

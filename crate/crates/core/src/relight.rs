//! Relighting a trained model: single-light renders with material edits, the
//! per-view reflectance field over the light stage, environment lighting as a
//! weighted sum of that field, and display tone mapping.

use std::io::{Read, Write};
use std::path::Path;

use half::f16;
use image::RgbImage;
use rayon::prelude::*;

use crate::dataset::LightStage;
use crate::error::{Error, Result};
use crate::imageio::{read_rgb, to_u8, Image};
use crate::math::Vec3;
use crate::model::Model;
use crate::render::{forward, RenderSettings};
use crate::scene::{Camera, PointLight};
use crate::shading::MaterialEdit;

const FIELD_MAGIC: &[u8; 6] = b"SSSRF1";

/// Linear RGB render of `model` under one light with `edit` applied.
pub fn render_olat(model: &Model, cam: &Camera, light: &PointLight, edit: &MaterialEdit, settings: &RenderSettings) -> Image {
    let edit = (!edit.is_identity()).then_some(edit);
    forward(model, cam, light, settings, edit, false).rgb()
}

/// One unit-intensity render per stage light for a fixed camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectanceField {
    pub width: usize,
    pub height: usize,
    /// Per light, linear RGB with three values per pixel.
    pub basis: Vec<Vec<f32>>,
    pub alpha: Vec<f32>,
}

pub fn build_reflectance_field(
    model: &Model,
    cam: &Camera,
    stage: &LightStage,
    edit: &MaterialEdit,
    settings: &RenderSettings,
) -> Result<ReflectanceField> {
    if stage.is_empty() {
        return Err(Error::Config("light stage has no lights".into()));
    }
    let edit = (!edit.is_identity()).then_some(edit);
    let renders: Vec<_> = (0..stage.len())
        .into_par_iter()
        .map(|i| forward(model, cam, &stage.light(i), settings, edit, false))
        .collect();
    let alpha = renders[0].gbuffer.alpha.iter().map(|&a| a as f32).collect();
    Ok(ReflectanceField {
        width: cam.width,
        height: cam.height,
        basis: renders.iter().map(|r| r.image.iter().map(|&v| v as f32).collect()).collect(),
        alpha,
    })
}

impl ReflectanceField {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis_image(&self, i: usize) -> Image {
        let data = self.basis[i].iter().map(|&v| v as f64).collect();
        Image::from_data(self.width, self.height, 3, data).expect("basis size")
    }

    /// Half-precision on disk: magic, u32 width, height, count, alpha plane,
    /// then every basis image.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = FIELD_MAGIC.to_vec();
        for v in [self.width, self.height, self.basis.len()] {
            out.extend((v as u32).to_le_bytes());
        }
        for v in self.alpha.iter().chain(self.basis.iter().flatten()) {
            out.extend(f16::from_f32(*v).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ReflectanceField> {
        let bad = |m: &str| Error::Checkpoint(format!("reflectance field: {m}"));
        if bytes.len() < 18 || &bytes[..6] != FIELD_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[6 + 4 * k..10 + 4 * k].try_into().expect("4 bytes")) as usize;
        let (width, height, count) = (word(0), word(1), word(2));
        let pixels = width * height;
        let expected = 18 + 2 * pixels * (1 + 3 * count);
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let values: Vec<f32> = bytes[18..]
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect();
        let (alpha, rest) = values.split_at(pixels);
        Ok(ReflectanceField {
            width,
            height,
            basis: rest.chunks_exact(3 * pixels).map(<[f32]>::to_vec).collect(),
            alpha: alpha.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ReflectanceField> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// `Σᵢ wᵢ ⊙ basisᵢ` per pixel, accumulated in double precision.
pub fn ibl_compose(field: &ReflectanceField, weights: &[[f64; 3]]) -> Result<Image> {
    if weights.len() != field.len() {
        return Err(Error::Shape {
            what: "light weights",
            expected: field.len(),
            actual: weights.len(),
        });
    }
    let n = field.width * field.height * 3;
    let mut data = vec![0.0f64; n];
    data.par_chunks_mut(3).enumerate().for_each(|(p, out)| {
        for (b, w) in field.basis.iter().zip(weights) {
            for c in 0..3 {
                out[c] += w[c] * b[3 * p + c] as f64;
            }
        }
    });
    Image::from_data(field.width, field.height, 3, data)
}

/// Unit direction of the centre of equirect texel `(x, y)`: azimuth grows with
/// `x` from +x toward +y, row 0 is the zenith.
pub fn equirect_direction(x: usize, y: usize, width: usize, height: usize) -> Vec3 {
    let az = 360.0 * (x as f64 + 0.5) / width as f64;
    let el = 90.0 - 180.0 * (y as f64 + 0.5) / height as f64;
    crate::scene::direction_from_angles(az, el)
}

/// Per-light weights derived from an environment map.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSampling {
    /// Solid-angle-weighted mean radiance over each light's cell.
    pub weights: Vec<[f64; 3]>,
    /// Solid angle of each light's cell on the upper hemisphere.
    pub solid_angles: Vec<f64>,
}

/// Bins the upper hemisphere of an equirectangular map into the Voronoi cells
/// of the stage light directions. The lower hemisphere is ignored.
pub fn sample_envmap(env: &Image, stage: &LightStage) -> Result<EnvSampling> {
    if env.width != 2 * env.height || env.height == 0 || env.channels != 3 {
        return Err(Error::EnvMap(format!(
            "expected an RGB equirectangular map with width = 2 × height, got {}x{}×{}",
            env.width, env.height, env.channels
        )));
    }
    if !env.is_finite() || env.data.iter().any(|&v| v < 0.0) {
        return Err(Error::EnvMap("radiance must be finite and non-negative".into()));
    }
    if stage.is_empty() {
        return Err(Error::EnvMap("light stage has no lights".into()));
    }
    let dirs: Vec<Vec3> = stage.positions.iter().map(|p| p.normalize()).collect();
    let (w, h) = (env.width, env.height);
    let texel = (std::f64::consts::TAU / w as f64) * (std::f64::consts::PI / h as f64);
    let mut radiance = vec![[0.0; 3]; dirs.len()];
    let mut solid = vec![0.0; dirs.len()];
    for y in 0..h {
        let d0 = equirect_direction(0, y, w, h);
        if d0.z < 0.0 {
            continue;
        }
        let omega = texel * (d0.z.asin()).cos();
        for x in 0..w {
            let d = equirect_direction(x, y, w, h);
            let mut best = 0;
            for (i, l) in dirs.iter().enumerate() {
                if l.dot(&d) > dirs[best].dot(&d) {
                    best = i;
                }
            }
            let px = env.pixel(y * w + x);
            for c in 0..3 {
                radiance[best][c] += px[c] * omega;
            }
            solid[best] += omega;
        }
    }
    let weights = radiance
        .iter()
        .zip(&solid)
        .map(|(r, &s)| if s > 0.0 { r.map(|v| v / s) } else { [0.0; 3] })
        .collect();
    Ok(EnvSampling {
        weights,
        solid_angles: solid,
    })
}

pub fn load_envmap(path: &Path) -> Result<Image> {
    read_rgb(path).map_err(|e| Error::EnvMap(e.to_string()))
}

/// `clamp(exposure · x)^(1/2.2)` as 8-bit RGB.
pub fn tone_map(img: &Image, exposure: f64) -> Result<RgbImage> {
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(Error::Config(format!("exposure must be positive, got {exposure}")));
    }
    let display = img.map(|v| (exposure * v).clamp(0.0, 1.0).powf(1.0 / 2.2));
    Ok(RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let p = display.pixel(y as usize * img.width + x as usize);
        let c = |k: usize| to_u8(p[k.min(p.len() - 1)]);
        image::Rgb([c(0), c(1), c(2)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn field() -> (Model, Camera, LightStage, ReflectanceField) {
        let model = fixtures::random_model(3, 20);
        let cam = fixtures::camera(30.0, 20.0, 24, 24);
        let stage = LightStage::generate(3.0, 2, 4).unwrap();
        let f = build_reflectance_field(&model, &cam, &stage, &MaterialEdit::default(), &RenderSettings::default()).unwrap();
        (model, cam, stage, f)
    }

    #[test]
    fn one_hot_and_zero_weights() {
        let (_, _, stage, f) = field();
        let mut w = vec![[0.0; 3]; stage.len()];
        assert!(ibl_compose(&f, &w).unwrap().data.iter().all(|&v| v == 0.0));
        w[5] = [1.0; 3];
        assert_eq!(ibl_compose(&f, &w).unwrap(), f.basis_image(5));
        assert!(ibl_compose(&f, &w[1..]).is_err());
    }

    #[test]
    fn half_precision_round_trip() {
        let (_, _, _, f) = field();
        let g = ReflectanceField::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(g.len(), f.len());
        for (a, b) in f.basis.iter().flatten().zip(g.basis.iter().flatten()) {
            assert!((a - b).abs() <= 1e-3 * a.abs().max(1e-2));
        }
        let bytes = f.to_bytes();
        assert!(ReflectanceField::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn uniform_sky_fills_the_hemisphere() {
        let stage = LightStage::standard(3.0).unwrap();
        let env = Image::from_data(256, 128, 3, vec![1.0; 256 * 128 * 3]).unwrap();
        let s = sample_envmap(&env, &stage).unwrap();
        for w in &s.weights {
            assert!((w[0] - 1.0).abs() < 1e-12);
        }
        let total: f64 = s.solid_angles.iter().sum();
        assert!((total - std::f64::consts::TAU).abs() < 1e-3, "{total}");
        assert!(sample_envmap(&Image::new(10, 10, 3), &stage).is_err());
    }

    #[test]
    fn tone_map_endpoints_and_order() {
        let img = Image::from_data(3, 1, 3, vec![0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.5, 0.5, 0.5]).unwrap();
        let t = tone_map(&img, 2.0).unwrap();
        assert_eq!(t.get_pixel(0, 0)[0], 0);
        assert_eq!(t.get_pixel(2, 0)[0], 255);
        assert!(t.get_pixel(1, 0)[0] <= t.get_pixel(2, 0)[0]);
        assert!(tone_map(&img, 0.0).is_err());
    }
}

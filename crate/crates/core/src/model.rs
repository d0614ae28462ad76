//! A trained model (Gaussians, network, shading variant) and its binary checkpoint.
//!
//! Layout, little endian: magic `SSSGS1`, u32 Gaussian count, u32 SH degree,
//! u32 flags, 6×f32 bounds, count×29 f32 raw parameters, then the network as a
//! u32 tensor count, a `(u32 rows, u32 cols)` table and the f32 values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::MlpParams;
use crate::math::Vec3;
use crate::scene::sh::SH_DEGREE;
use crate::scene::{Aabb, Gaussian, Scene, PARAMS_PER_GAUSSIAN};
use crate::shading::ShadingModel;

pub const MAGIC: &[u8; 6] = b"SSSGS1";
const FLAG_NO_RESIDUAL: u32 = 1;
const FLAG_NO_PBR: u32 = 2;
const FLAG_FORWARD: u32 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub scene: Scene,
    pub mlp: MlpParams,
    pub shading: ShadingModel,
    /// Shade per pixel after rasterization; when false each Gaussian is shaded
    /// first and its color composited.
    pub deferred: bool,
}

impl Model {
    pub fn new(scene: Scene, mlp: MlpParams) -> Self {
        Self {
            scene,
            mlp,
            shading: ShadingModel::default(),
            deferred: true,
        }
    }

    fn flags(&self) -> u32 {
        let mut f = 0;
        if !self.shading.residual {
            f |= FLAG_NO_RESIDUAL;
        }
        if !self.shading.pbr {
            f |= FLAG_NO_PBR;
        }
        if !self.deferred {
            f |= FLAG_FORWARD;
        }
        f
    }

    /// Rounds every parameter to f32, which is what a checkpoint stores.
    pub fn quantized(&self) -> Model {
        let mut m = self.clone();
        let p: Vec<f64> = m.scene.params().iter().map(|&v| v as f32 as f64).collect();
        m.scene.set_params(&p);
        let flat: Vec<f64> = m.mlp.to_flat().iter().map(|&v| v as f32 as f64).collect();
        m.mlp.set_flat(&flat).expect("same architecture");
        for v in m.scene.bounds.min.iter_mut().chain(m.scene.bounds.max.iter_mut()) {
            *v = *v as f32 as f64;
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        let f32le = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        u32le(&mut out, self.scene.len() as u32);
        u32le(&mut out, SH_DEGREE as u32);
        u32le(&mut out, self.flags());
        for v in self.scene.bounds.min.iter().chain(self.scene.bounds.max.iter()) {
            f32le(&mut out, *v);
        }
        for v in self.scene.params() {
            f32le(&mut out, v);
        }
        let shapes = self.mlp.tensor_shapes();
        u32le(&mut out, shapes.len() as u32);
        for (r, c) in &shapes {
            u32le(&mut out, *r as u32);
            u32le(&mut out, *c as u32);
        }
        for v in self.mlp.to_flat() {
            f32le(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = r.u32()? as usize;
        let degree = r.u32()? as usize;
        if degree != SH_DEGREE {
            return Err(Error::Checkpoint(format!("unsupported SH degree {degree}")));
        }
        let flags = r.u32()?;
        if flags & !(FLAG_NO_RESIDUAL | FLAG_NO_PBR | FLAG_FORWARD) != 0 {
            return Err(Error::Checkpoint(format!("unknown flags {flags:#x}")));
        }
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = r.f32()?;
        }
        let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));
        let needed = count
            .checked_mul(PARAMS_PER_GAUSSIAN * 4)
            .ok_or_else(|| Error::Checkpoint("gaussian count overflows".into()))?;
        if r.remaining() < needed {
            return Err(Error::Checkpoint(format!("truncated: {count} gaussians declared")));
        }
        let mut params = vec![0.0; count * PARAMS_PER_GAUSSIAN];
        for v in &mut params {
            *v = r.f32()?;
        }
        let gaussians: Vec<Gaussian> = params.chunks_exact(PARAMS_PER_GAUSSIAN).map(Gaussian::from_params).collect();
        let scene = Scene::with_bounds(gaussians, bounds).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let tensors = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(tensors.min(64));
        for _ in 0..tensors {
            shapes.push((r.u32()? as usize, r.u32()? as usize));
        }
        let mut mlp = [true, false]
            .into_iter()
            .map(|joint| MlpParams::new(0, joint))
            .find(|m| m.tensor_shapes() == shapes)
            .ok_or_else(|| Error::Checkpoint("network shape table does not match a known architecture".into()))?;
        let mut flat = vec![0.0; mlp.param_count()];
        for v in &mut flat {
            *v = r.f32()?;
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        mlp.set_flat(&flat)?;
        if !mlp.is_finite() {
            return Err(Error::Checkpoint("non-finite network weights".into()));
        }
        Ok(Model {
            scene,
            mlp,
            shading: ShadingModel {
                residual: flags & FLAG_NO_RESIDUAL == 0,
                pbr: flags & FLAG_NO_PBR == 0,
            },
            deferred: flags & FLAG_FORWARD == 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f64> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::Checkpoint("non-finite value".into()));
        }
        Ok(v as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianInit;

    fn model(joint: bool) -> Model {
        let gs = (0..5)
            .map(|i| {
                Gaussian::new(&GaussianInit {
                    mean: Vec3::new(i as f64 * 0.1, 0.2, -0.1),
                    ..Default::default()
                })
            })
            .collect();
        let mut m = Model::new(Scene::from_gaussians(gs), MlpParams::new(3, joint));
        m.shading.pbr = false;
        m.deferred = false;
        m
    }

    #[test]
    fn round_trip_is_f32_exact() {
        for joint in [true, false] {
            let m = model(joint);
            let back = Model::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(back, m.quantized());
            assert_eq!(back.to_bytes(), m.to_bytes());
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = model(true).to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Model::from_bytes(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Model::from_bytes(&extra).is_err());
        let mut nan = bytes;
        let off = 6 + 12 + 24;
        nan[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(Model::from_bytes(&nan).is_err());
    }
}

//! The joint neural field: a shared trunk feeding a subsurface residual head and an
//! incident light head, with hand-written reverse mode and Adam.

pub mod adam;
pub mod encoding;
pub mod features;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::Adam;
pub use encoding::{encode_position, ENCODING_BANDS, ENCODING_DIM};
pub use features::{gaussian_features, gaussian_features_backward, FeatureCache, FeatureContext};

use crate::error::{Error, Result};
use crate::math::dot;

pub const INPUT_DIM: usize = 40;
pub const TRUNK_WIDTHS: [usize; 3] = [64, 32, 32];
pub const INCIDENT_HIDDEN: usize = 32;
pub const OUTPUT_DIM: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.01;

/// Offsets of each field inside the flat network input.
pub mod input {
    pub const NORMAL: usize = 0;
    pub const ROTATION: usize = 3;
    pub const SCALE: usize = 5;
    pub const LIGHT_DIR: usize = 8;
    pub const VIEW_DIR: usize = 11;
    pub const LIGHT_DISTANCE: usize = 14;
    pub const VISIBILITY: usize = 15;
    pub const POSITION: usize = 16;
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpInput {
    pub normal: [f64; 3],
    pub rotation: [f64; 2],
    pub scale: [f64; 3],
    pub light_dir: [f64; 3],
    pub view_dir: [f64; 3],
    pub light_distance: f64,
    pub visibility: f64,
    pub encoded_position: [f64; ENCODING_DIM],
}

impl MlpInput {
    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        let mut x = [0.0; INPUT_DIM];
        x[input::NORMAL..input::NORMAL + 3].copy_from_slice(&self.normal);
        x[input::ROTATION..input::ROTATION + 2].copy_from_slice(&self.rotation);
        x[input::SCALE..input::SCALE + 3].copy_from_slice(&self.scale);
        x[input::LIGHT_DIR..input::LIGHT_DIR + 3].copy_from_slice(&self.light_dir);
        x[input::VIEW_DIR..input::VIEW_DIR + 3].copy_from_slice(&self.view_dir);
        x[input::LIGHT_DISTANCE] = self.light_distance;
        x[input::VISIBILITY] = self.visibility;
        x[input::POSITION..].copy_from_slice(&self.encoded_position);
        x
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MlpOutput {
    pub residual: [f64; 3],
    pub incident: [f64; 3],
}

/// Fully connected layer; `weight` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform initialization scaled by fan-in for leaky-ReLU activations.
    pub fn kaiming(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let w_bound = (6.0 / inputs as f64).sqrt();
        let b_bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| rng.random_range(-w_bound..w_bound)).collect(),
            bias: (0..outputs).map(|_| rng.random_range(-b_bound..b_bound)).collect(),
        }
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, yo) in y.iter_mut().enumerate().take(self.outputs) {
            *yo = dot(&self.weight[o * self.inputs..(o + 1) * self.inputs], x) + self.bias[o];
        }
    }

    /// Accumulates parameter gradients into `grad` and writes `dL/dx` into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: &mut [f64]) {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..self.outputs {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grad.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i];
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
fn leaky_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    crate::math::sigmoid(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub trunk: [Dense; 3],
    pub incident_hidden: Dense,
    pub incident_out: Dense,
    pub residual_out: Dense,
    /// When present the incident head reads its own trunk instead of the shared one.
    pub incident_trunk: Option<[Dense; 3]>,
}

fn trunk_layers(rng: &mut impl Rng) -> [Dense; 3] {
    [
        Dense::kaiming(INPUT_DIM, TRUNK_WIDTHS[0], rng),
        Dense::kaiming(TRUNK_WIDTHS[0], TRUNK_WIDTHS[1], rng),
        Dense::kaiming(TRUNK_WIDTHS[1], TRUNK_WIDTHS[2], rng),
    ]
}

fn trunk_zeros() -> [Dense; 3] {
    [
        Dense::zeros(INPUT_DIM, TRUNK_WIDTHS[0]),
        Dense::zeros(TRUNK_WIDTHS[0], TRUNK_WIDTHS[1]),
        Dense::zeros(TRUNK_WIDTHS[1], TRUNK_WIDTHS[2]),
    ]
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub input: [f64; INPUT_DIM],
    pub trunk_pre: [Vec<f64>; 3],
    pub trunk_act: [Vec<f64>; 3],
    pub incident_trunk: Option<([Vec<f64>; 3], [Vec<f64>; 3])>,
    pub incident_hidden_pre: Vec<f64>,
    pub incident_hidden_act: Vec<f64>,
    pub incident_pre: [f64; 3],
    pub residual_pre: [f64; 3],
    pub output: MlpOutput,
}

impl MlpCache {
    /// Signs of every piecewise-linear activation, in a fixed order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for layer in &self.trunk_pre {
            out.extend(layer.iter().map(|&v| v > 0.0));
        }
        if let Some((pre, _)) = &self.incident_trunk {
            for layer in pre {
                out.extend(layer.iter().map(|&v| v > 0.0));
            }
        }
        out.extend(self.incident_hidden_pre.iter().map(|&v| v > 0.0));
        out.extend(self.incident_pre.iter().map(|&v| v > 0.0));
        out
    }
}

fn run_trunk(layers: &[Dense; 3], x: &[f64]) -> ([Vec<f64>; 3], [Vec<f64>; 3]) {
    let mut pre: [Vec<f64>; 3] = Default::default();
    let mut act: [Vec<f64>; 3] = Default::default();
    for (l, layer) in layers.iter().enumerate() {
        let mut y = vec![0.0; layer.outputs];
        let src: &[f64] = if l == 0 { x } else { &act[l - 1] };
        layer.forward(src, &mut y);
        act[l] = y.iter().map(|&v| leaky(v)).collect();
        pre[l] = y;
    }
    (pre, act)
}

fn trunk_backward(
    layers: &[Dense; 3],
    grads: &mut [Dense; 3],
    x: &[f64],
    pre: &[Vec<f64>; 3],
    act: &[Vec<f64>; 3],
    d_out: &[f64],
    d_x: &mut [f64],
) {
    let mut d_act = d_out.to_vec();
    for l in (0..3).rev() {
        let d_pre: Vec<f64> = d_act.iter().zip(&pre[l]).map(|(d, &p)| d * leaky_grad(p)).collect();
        let src: &[f64] = if l == 0 { x } else { &act[l - 1] };
        let mut d_src = vec![0.0; layers[l].inputs];
        layers[l].backward(src, &d_pre, &mut grads[l], &mut d_src);
        d_act = d_src;
    }
    for (a, b) in d_x.iter_mut().zip(&d_act) {
        *a += b;
    }
}

impl MlpParams {
    pub fn new(seed: u64, joint: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = trunk_layers(&mut rng);
        let incident_hidden = Dense::kaiming(TRUNK_WIDTHS[2], INCIDENT_HIDDEN, &mut rng);
        let incident_out = Dense::kaiming(INCIDENT_HIDDEN, OUTPUT_DIM, &mut rng);
        let residual_out = Dense::kaiming(TRUNK_WIDTHS[2], OUTPUT_DIM, &mut rng);
        let incident_trunk = (!joint).then(|| trunk_layers(&mut rng));
        Self {
            trunk,
            incident_hidden,
            incident_out,
            residual_out,
            incident_trunk,
        }
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: trunk_zeros(),
            incident_hidden: Dense::zeros(TRUNK_WIDTHS[2], INCIDENT_HIDDEN),
            incident_out: Dense::zeros(INCIDENT_HIDDEN, OUTPUT_DIM),
            residual_out: Dense::zeros(TRUNK_WIDTHS[2], OUTPUT_DIM),
            incident_trunk: self.incident_trunk.as_ref().map(|_| trunk_zeros()),
        }
    }

    pub fn is_joint(&self) -> bool {
        self.incident_trunk.is_none()
    }

    /// Layers in the fixed serialization order.
    pub fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.trunk.iter().collect();
        v.extend([&self.incident_hidden, &self.incident_out, &self.residual_out]);
        if let Some(t) = &self.incident_trunk {
            v.extend(t.iter());
        }
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.trunk.iter_mut().collect();
        v.extend([&mut self.incident_hidden, &mut self.incident_out, &mut self.residual_out]);
        if let Some(t) = &mut self.incident_trunk {
            v.extend(t.iter_mut());
        }
        v
    }

    /// `(rows, cols)` of every tensor in serialization order (weight then bias per layer).
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        self.layers()
            .iter()
            .flat_map(|l| [(l.outputs, l.inputs), (l.outputs, 1)])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                what: "mlp parameters",
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut o = 0;
        for l in self.layers_mut() {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[o..o + nw]);
            o += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[o..o + nb]);
            o += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    /// Same values as [`MlpParams::forward_cached`] without keeping activations.
    pub fn forward(&self, x: &[f64; INPUT_DIM]) -> MlpOutput {
        let trunk = |layers: &[Dense; 3]| {
            let mut a = [0.0; TRUNK_WIDTHS[0]];
            let mut b = [0.0; TRUNK_WIDTHS[1]];
            let mut c = [0.0; TRUNK_WIDTHS[2]];
            layers[0].forward(x, &mut a);
            a.iter_mut().for_each(|v| *v = leaky(*v));
            layers[1].forward(&a, &mut b);
            b.iter_mut().for_each(|v| *v = leaky(*v));
            layers[2].forward(&b, &mut c);
            c.iter_mut().for_each(|v| *v = leaky(*v));
            c
        };
        let shared = trunk(&self.trunk);
        let inc_feat = self.incident_trunk.as_ref().map_or(shared, trunk);
        let mut hidden = [0.0; INCIDENT_HIDDEN];
        self.incident_hidden.forward(&inc_feat, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = leaky(*v));
        let mut incident = [0.0; OUTPUT_DIM];
        self.incident_out.forward(&hidden, &mut incident);
        let mut residual = [0.0; OUTPUT_DIM];
        self.residual_out.forward(&shared, &mut residual);
        MlpOutput {
            residual: residual.map(sigmoid),
            incident: incident.map(|v| v.max(0.0)),
        }
    }

    pub fn forward_cached(&self, x: &[f64; INPUT_DIM]) -> MlpCache {
        let (trunk_pre, trunk_act) = run_trunk(&self.trunk, x);
        let incident_trunk = self.incident_trunk.as_ref().map(|t| run_trunk(t, x));
        let inc_feat: &[f64] = match &incident_trunk {
            Some((_, act)) => &act[2],
            None => &trunk_act[2],
        };
        let mut hidden_pre = vec![0.0; INCIDENT_HIDDEN];
        self.incident_hidden.forward(inc_feat, &mut hidden_pre);
        let hidden_act: Vec<f64> = hidden_pre.iter().map(|&v| leaky(v)).collect();
        let mut incident_pre = [0.0; 3];
        self.incident_out.forward(&hidden_act, &mut incident_pre);
        let mut residual_pre = [0.0; 3];
        self.residual_out.forward(&trunk_act[2], &mut residual_pre);
        let output = MlpOutput {
            residual: residual_pre.map(sigmoid),
            incident: incident_pre.map(|v| v.max(0.0)),
        };
        MlpCache {
            input: *x,
            trunk_pre,
            trunk_act,
            incident_trunk,
            incident_hidden_pre: hidden_pre,
            incident_hidden_act: hidden_act,
            incident_pre,
            residual_pre,
            output,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dinput`.
    pub fn backward(&self, cache: &MlpCache, d_out: &MlpOutput, grads: &mut MlpParams) -> [f64; INPUT_DIM] {
        let mut d_x = [0.0; INPUT_DIM];
        let d_res_pre: Vec<f64> = (0..3)
            .map(|c| {
                let s = cache.output.residual[c];
                d_out.residual[c] * s * (1.0 - s)
            })
            .collect();
        let d_inc_pre: Vec<f64> = (0..3)
            .map(|c| if cache.incident_pre[c] > 0.0 { d_out.incident[c] } else { 0.0 })
            .collect();

        let mut d_hidden_act = vec![0.0; INCIDENT_HIDDEN];
        self.incident_out
            .backward(&cache.incident_hidden_act, &d_inc_pre, &mut grads.incident_out, &mut d_hidden_act);
        let d_hidden_pre: Vec<f64> = d_hidden_act
            .iter()
            .zip(&cache.incident_hidden_pre)
            .map(|(d, &p)| d * leaky_grad(p))
            .collect();
        let mut d_inc_feat = vec![0.0; TRUNK_WIDTHS[2]];
        let inc_feat: &[f64] = match &cache.incident_trunk {
            Some((_, act)) => &act[2],
            None => &cache.trunk_act[2],
        };
        self.incident_hidden
            .backward(inc_feat, &d_hidden_pre, &mut grads.incident_hidden, &mut d_inc_feat);

        let mut d_trunk_out = vec![0.0; TRUNK_WIDTHS[2]];
        self.residual_out
            .backward(&cache.trunk_act[2], &d_res_pre, &mut grads.residual_out, &mut d_trunk_out);

        match (&self.incident_trunk, &cache.incident_trunk, &mut grads.incident_trunk) {
            (Some(layers), Some((pre, act)), Some(g)) => {
                trunk_backward(layers, g, &cache.input, pre, act, &d_inc_feat, &mut d_x);
            }
            _ => {
                for (a, b) in d_trunk_out.iter_mut().zip(&d_inc_feat) {
                    *a += b;
                }
            }
        }
        trunk_backward(
            &self.trunk,
            &mut grads.trunk,
            &cache.input,
            &cache.trunk_pre,
            &cache.trunk_act,
            &d_trunk_out,
            &mut d_x,
        );
        d_x
    }

    pub fn forward_batch(&self, inputs: &[[f64; INPUT_DIM]]) -> Vec<MlpOutput> {
        inputs.par_iter().map(|x| self.forward(x)).collect()
    }

    pub fn forward_batch_cached(&self, inputs: &[[f64; INPUT_DIM]]) -> Vec<MlpCache> {
        inputs.par_iter().map(|x| self.forward_cached(x)).collect()
    }

    /// Batched backward. Gradients are summed per fixed-size chunk and the chunks
    /// are reduced in order, so the result does not depend on scheduling.
    pub fn backward_batch(&self, caches: &[MlpCache], d_outs: &[MlpOutput]) -> (MlpParams, Vec<[f64; INPUT_DIM]>) {
        const CHUNK: usize = 32;
        assert_eq!(caches.len(), d_outs.len());
        let parts: Vec<(MlpParams, Vec<[f64; INPUT_DIM]>)> = caches
            .par_chunks(CHUNK)
            .zip(d_outs.par_chunks(CHUNK))
            .map(|(cs, ds)| {
                let mut g = self.zeros_like();
                let dx = cs.iter().zip(ds).map(|(c, d)| self.backward(c, d, &mut g)).collect();
                (g, dx)
            })
            .collect();
        let mut total = self.zeros_like();
        let mut d_inputs = Vec::with_capacity(caches.len());
        for (g, dx) in parts {
            total.add_assign(&g);
            d_inputs.extend(dx);
        }
        (total, d_inputs)
    }
}

//! Fourier features of a Gaussian position normalized to the scene box.

use std::f64::consts::PI;

use crate::math::Vec3;
use crate::scene::Aabb;

pub const ENCODING_BANDS: usize = 4;
pub const ENCODING_DIM: usize = 3 * 2 * ENCODING_BANDS;

/// `[sin(2ᵏπx), cos(2ᵏπx)]` for `k = 0..4`, axis by axis, of a point already in `[-1, 1]³`.
pub fn encode_normalized(x: &Vec3) -> [f64; ENCODING_DIM] {
    let mut out = [0.0; ENCODING_DIM];
    for a in 0..3 {
        for k in 0..ENCODING_BANDS {
            let f = (1u32 << k) as f64 * PI;
            let (s, c) = (f * x[a]).sin_cos();
            out[a * 2 * ENCODING_BANDS + 2 * k] = s;
            out[a * 2 * ENCODING_BANDS + 2 * k + 1] = c;
        }
    }
    out
}

pub fn encode_position(mu: &Vec3, bounds: &Aabb) -> [f64; ENCODING_DIM] {
    encode_normalized(&bounds.normalize_point(mu))
}

/// Backward of [`encode_position`] with respect to `mu`.
pub fn encode_position_backward(mu: &Vec3, bounds: &Aabb, d_enc: &[f64]) -> Vec3 {
    let x = bounds.normalize_point(mu);
    let scale = bounds.normalize_scale();
    let mut d_mu = Vec3::zeros();
    for a in 0..3 {
        let mut dx = 0.0;
        for k in 0..ENCODING_BANDS {
            let f = (1u32 << k) as f64 * PI;
            let (s, c) = (f * x[a]).sin_cos();
            dx += f * (c * d_enc[a * 2 * ENCODING_BANDS + 2 * k] - s * d_enc[a * 2 * ENCODING_BANDS + 2 * k + 1]);
        }
        d_mu[a] = dx * scale[a];
    }
    d_mu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_encodes_to_sin_zero_cos_one() {
        let e = encode_normalized(&Vec3::zeros());
        for (i, v) in e.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn half_on_first_band() {
        let e = encode_normalized(&Vec3::new(0.5, 0.0, 0.0));
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert!(e[1].abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let b = Aabb::new(Vec3::new(-1.0, -2.0, 0.0), Vec3::new(1.0, 1.0, 3.0));
        let mu = Vec3::new(0.3, -0.4, 1.7);
        let w: Vec<f64> = (0..ENCODING_DIM).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = |m: &Vec3| encode_position(m, &b).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let g = encode_position_backward(&mu, &b, &w);
        for k in 0..3 {
            let h = 1e-6;
            let mut p = mu;
            let mut m = mu;
            p[k] += h;
            m[k] -= h;
            assert!(((f(&p) - f(&m)) / (2.0 * h) - g[k]).abs() < 1e-7);
        }
    }
}

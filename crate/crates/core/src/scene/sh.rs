//! Real spherical harmonics up to degree 2, used for the per-Gaussian visibility term.

use crate::math::Vec3;

pub const SH_DEGREE: usize = 2;
pub const SH_COEFFS: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: f64 = 1.092_548_430_592_079_2;
const C2_0: f64 = 0.315_391_565_252_520_05;
const C2_2: f64 = 0.546_274_215_296_039_6;

/// Coefficient vector whose expansion is the constant 1 everywhere.
pub fn constant(value: f64) -> [f64; SH_COEFFS] {
    let mut c = [0.0; SH_COEFFS];
    c[0] = value / C0;
    c
}

pub fn basis(dir: &Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2 * x * y,
        C2 * y * z,
        C2_0 * (3.0 * z * z - 1.0),
        C2 * x * z,
        C2_2 * (x * x - y * y),
    ]
}

/// Partial derivatives of each basis function with respect to the direction components.
pub fn basis_grad(dir: &Vec3) -> [Vec3; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    [
        Vec3::zeros(),
        Vec3::new(0.0, C1, 0.0),
        Vec3::new(0.0, 0.0, C1),
        Vec3::new(C1, 0.0, 0.0),
        Vec3::new(C2 * y, C2 * x, 0.0),
        Vec3::new(0.0, C2 * z, C2 * y),
        Vec3::new(0.0, 0.0, 6.0 * C2_0 * z),
        Vec3::new(C2 * z, 0.0, C2 * x),
        Vec3::new(2.0 * C2_2 * x, -2.0 * C2_2 * y, 0.0),
    ]
}

pub fn eval_sh(coeffs: &[f64; SH_COEFFS], dir: &Vec3) -> f64 {
    basis(dir).iter().zip(coeffs).map(|(b, c)| b * c).sum()
}

/// Returns `(dL/dcoeffs, dL/ddir)` for an upstream gradient `d_value`.
pub fn eval_sh_backward(
    coeffs: &[f64; SH_COEFFS],
    dir: &Vec3,
    d_value: f64,
) -> ([f64; SH_COEFFS], Vec3) {
    let b = basis(dir);
    let bg = basis_grad(dir);
    let mut d_coeffs = [0.0; SH_COEFFS];
    let mut d_dir = Vec3::zeros();
    for k in 0..SH_COEFFS {
        d_coeffs[k] = d_value * b[k];
        d_dir += bg[k] * (d_value * coeffs[k]);
    }
    (d_coeffs, d_dir)
}

/// Least-squares fit of SH coefficients to `(direction, value)` samples with a small
/// ridge term so under-determined sample sets stay well posed.
pub fn fit(samples: &[(Vec3, f64)], ridge: f64) -> [f64; SH_COEFFS] {
    use nalgebra::{SMatrix, SVector};
    let mut ata = SMatrix::<f64, SH_COEFFS, SH_COEFFS>::zeros();
    let mut atb = SVector::<f64, SH_COEFFS>::zeros();
    for (dir, value) in samples {
        let b = SVector::<f64, SH_COEFFS>::from_row_slice(&basis(dir));
        ata += b * b.transpose();
        atb += b * *value;
    }
    for k in 0..SH_COEFFS {
        ata[(k, k)] += ridge;
    }
    let sol = ata
        .cholesky()
        .map(|c| c.solve(&atb))
        .unwrap_or_else(SVector::zeros);
    let mut out = [0.0; SH_COEFFS];
    out.copy_from_slice(sol.as_slice());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_band_is_direction_independent() {
        let c = constant(1.0);
        for dir in [Vec3::x(), Vec3::y(), -Vec3::z(), Vec3::new(1.0, 1.0, 1.0).normalize()] {
            assert!((eval_sh(&c, &dir) - 1.0).abs() < 1e-12);
        }
        let mut c = [0.0; SH_COEFFS];
        c[0] = (4.0 * std::f64::consts::PI).sqrt();
        assert!((eval_sh(&c, &Vec3::y()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_evaluate_to_zero() {
        assert_eq!(eval_sh(&[0.0; SH_COEFFS], &Vec3::z()), 0.0);
    }

    #[test]
    fn z_band_is_antisymmetric() {
        // Y_1^0(±z) = ±sqrt(3 / 4π)
        let mut c = [0.0; SH_COEFFS];
        c[2] = 1.0;
        let expected = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        assert!((eval_sh(&c, &Vec3::z()) - expected).abs() < 1e-12);
        assert!((eval_sh(&c, &-Vec3::z()) + expected).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let coeffs = [0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.25, 0.6, -0.1];
        let dir = Vec3::new(0.3, -0.5, 0.8);
        let (_, d_dir) = eval_sh_backward(&coeffs, &dir, 1.0);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p[k] += h;
            m[k] -= h;
            let fd = (eval_sh(&coeffs, &p) - eval_sh(&coeffs, &m)) / (2.0 * h);
            assert!((fd - d_dir[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_recovers_band_limited_function() {
        let truth = [0.5, 0.1, -0.3, 0.2, 0.05, 0.0, 0.1, -0.05, 0.02];
        let mut samples = Vec::new();
        for i in 0..200 {
            let t = i as f64 * 0.618_033_988_75;
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 200.0;
            let r = (1.0 - z * z).sqrt();
            let dir = Vec3::new(r * (t * std::f64::consts::TAU).cos(), r * (t * std::f64::consts::TAU).sin(), z);
            samples.push((dir, eval_sh(&truth, &dir)));
        }
        let fitted = fit(&samples, 1e-9);
        for k in 0..SH_COEFFS {
            assert!((fitted[k] - truth[k]).abs() < 1e-6);
        }
    }
}

//! Small scalar and vector helpers shared by the forward and backward passes.

use nalgebra::{Matrix3, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; the argument is clamped away from 0 and 1 first.
#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Normalizes `v`, returning the unit vector and the original length.
#[inline]
pub fn normalize(v: &Vec3) -> (Vec3, f64) {
    let len = v.norm();
    if len > 0.0 {
        (v / len, len)
    } else {
        (Vec3::zeros(), 0.0)
    }
}

/// Backward of `u = v / |v|`: maps `dL/du` to `dL/dv`.
#[inline]
pub fn normalize_backward(unit: &Vec3, len: f64, d_unit: &Vec3) -> Vec3 {
    if len > 0.0 {
        (d_unit - unit * unit.dot(d_unit)) / len
    } else {
        Vec3::zeros()
    }
}

/// Rotation matrix of a unit quaternion stored as `(w, x, y, z)`.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Backward of [`quat_to_matrix`] with respect to the (already unit) quaternion.
pub fn quat_to_matrix_backward(q: &Vector4<f64>, d_r: &Mat3) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = |m: Mat3| d_r.component_mul(&m).sum();
    let dw = Mat3::new(
        0.0,
        -2.0 * z,
        2.0 * y,
        2.0 * z,
        0.0,
        -2.0 * x,
        -2.0 * y,
        2.0 * x,
        0.0,
    );
    let dx = Mat3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Mat3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Mat3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    Vector4::new(g(dw), g(dx), g(dy), g(dz))
}

/// Backward of `q̂ = q / |q|` for a 4-vector.
pub fn normalize4_backward(unit: &Vector4<f64>, len: f64, d_unit: &Vector4<f64>) -> Vector4<f64> {
    if len > 0.0 {
        (d_unit - unit * unit.dot(d_unit)) / len
    } else {
        Vector4::zeros()
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_logit_inverse() {
        for &p in &[0.01, 0.25, 0.5, 0.9, 0.999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn quaternion_backward_matches_finite_differences() {
        let q = Vector4::new(0.8, -0.3, 0.4, 0.33).normalize();
        let g = Mat3::new(0.3, -1.0, 0.2, 0.7, 0.1, -0.4, 0.9, 0.5, -0.6);
        let analytic = quat_to_matrix_backward(&q, &g);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (g.component_mul(&quat_to_matrix(&qp)).sum()
                - g.component_mul(&quat_to_matrix(&qm)).sum())
                / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-8, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..11).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}

//! PSNR and SSIM, plus the SSIM gradient used by the image loss.

use crate::error::Result;
use crate::imageio::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP: f64 = 99.0;

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable "same"-size convolution with zero padding, per channel. The
/// kernel is symmetric so this operator is its own adjoint.
pub fn blur(img: &Image, kernel: &[f64]) -> Image {
    let (w, h, c) = (img.width, img.height, img.channels);
    let r = kernel.len() / 2;
    // Taps that fall outside the image are skipped, never added as zeros, so
    // each sum runs over the in-range taps in ascending order.
    let taps = |i: usize, n: usize| (r.saturating_sub(i), kernel.len().min(n + r - i));
    let mut tmp = Image::new(w, h, c);
    for y in 0..h {
        let row = &img.data[y * w * c..(y + 1) * w * c];
        let dst = &mut tmp.data[y * w * c..(y + 1) * w * c];
        for (k, &kv) in kernel.iter().enumerate() {
            // Output x reads input x + k - r.
            let x0 = r.saturating_sub(k);
            let x1 = w.min((w + r).saturating_sub(k));
            if x0 >= x1 {
                continue;
            }
            let src = &row[(x0 + k - r) * c..(x1 + k - r) * c];
            for (d, s) in dst[x0 * c..x1 * c].iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    let mut out = Image::new(w, h, c);
    for y in 0..h {
        let (lo, hi) = taps(y, h);
        let dst = &mut out.data[y * w * c..(y + 1) * w * c];
        for k in lo..hi {
            let src = &tmp.data[(y + k - r) * w * c..(y + k - r + 1) * w * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kernel[k] * s;
            }
        }
    }
    out
}

fn zip(a: &Image, b: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
    Image {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        ..*a
    }
}

pub fn mse(pred: &Image, gt: &Image) -> Result<f64> {
    pred.same_shape(gt)?;
    let n = pred.data.len().max(1) as f64;
    Ok(pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `10·log10(1/MSE)` for images in `[0, 1]`, capped when the error vanishes.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m < 1e-10 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

struct SsimStats {
    mu_x: Image,
    mu_y: Image,
    var_x: Image,
    var_y: Image,
    cov: Image,
}

fn stats(x: &Image, y: &Image, k: &[f64]) -> SsimStats {
    let mu_x = blur(x, k);
    let mu_y = blur(y, k);
    let xx = blur(&zip(x, x, |a, b| a * b), k);
    let yy = blur(&zip(y, y, |a, b| a * b), k);
    let xy = blur(&zip(x, y, |a, b| a * b), k);
    SsimStats {
        var_x: zip(&xx, &mu_x, |s, m| s - m * m),
        var_y: zip(&yy, &mu_y, |s, m| s - m * m),
        cov: zip(&xy, &zip(&mu_x, &mu_y, |a, b| a * b), |s, m| s - m),
        mu_x,
        mu_y,
    }
}

/// Mean SSIM over every pixel and channel.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    pred.same_shape(gt)?;
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let s = stats(pred, gt, &k);
    let n = pred.data.len().max(1) as f64;
    let total: f64 = (0..pred.data.len())
        .map(|i| {
            let (mx, my) = (s.mu_x.data[i], s.mu_y.data[i]);
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * s.cov.data[i] + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (s.var_x.data[i] + s.var_y.data[i] + SSIM_C2);
            num / den
        })
        .sum();
    Ok(total / n)
}

/// Mean SSIM and its gradient with respect to `pred`.
pub fn ssim_with_grad(pred: &Image, gt: &Image) -> Result<(f64, Image)> {
    pred.same_shape(gt)?;
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let s = stats(pred, gt, &k);
    let len = pred.data.len();
    let n = len.max(1) as f64;
    let mut d_mu = Image { data: vec![0.0; len], ..*pred };
    let mut d_var = d_mu.clone();
    let mut d_cov = d_mu.clone();
    let mut total = 0.0;
    for i in 0..len {
        let (mx, my) = (s.mu_x.data[i], s.mu_y.data[i]);
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * s.cov.data[i] + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = s.var_x.data[i] + s.var_y.data[i] + SSIM_C2;
        let v = a1 * a2 / (b1 * b2);
        total += v;
        let dv_dmx = 2.0 * my * a2 / (b1 * b2) - v * 2.0 * mx / b1;
        let dv_dvar = -v / b2;
        let dv_dcov = 2.0 * a1 / (b1 * b2);
        // var_x = E[x²] − μx², cov = E[xy] − μxμy: fold the μ terms into d_mu.
        d_mu.data[i] = (dv_dmx - 2.0 * mx * dv_dvar - my * dv_dcov) / n;
        d_var.data[i] = dv_dvar / n;
        d_cov.data[i] = dv_dcov / n;
    }
    let g_mu = blur(&d_mu, &k);
    let g_var = blur(&d_var, &k);
    let g_cov = blur(&d_cov, &k);
    let mut grad = Image { data: vec![0.0; len], ..*pred };
    for i in 0..len {
        grad.data[i] = g_mu.data[i] + 2.0 * pred.data[i] * g_var.data[i] + gt.data[i] * g_cov.data[i];
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, c: usize) -> Image {
        let data = (0..w * h * c).map(|i| ((i * 37 % 101) as f64) / 100.0).collect();
        Image::from_data(w, h, c, data).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = ramp(16, 12, 3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_psnr_is_20db() {
        let a = Image::from_data(8, 8, 1, vec![0.3; 64]).unwrap();
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&b, &a).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn blur_is_self_adjoint() {
        let k = gaussian_kernel(11, 1.5);
        let a = ramp(13, 9, 2);
        let b = ramp(13, 9, 2).map(|v| (v * 7.0).sin());
        let lhs: f64 = blur(&a, &k).data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.data.iter().zip(&blur(&b, &k).data).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mismatched_sizes_fail() {
        assert!(psnr(&ramp(4, 4, 3), &ramp(4, 5, 3)).is_err());
        assert!(ssim(&ramp(4, 4, 3), &ramp(4, 4, 1)).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let x = ramp(9, 7, 2);
        let y = x.map(|v| (v * 3.0).cos() * 0.5 + 0.5);
        let (_, g) = ssim_with_grad(&x, &y).unwrap();
        let h = 1e-6;
        for i in [0, 5, 17, 40, 125] {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (ssim(&p, &y).unwrap() - ssim(&m, &y).unwrap()) / (2.0 * h);
            assert!((fd - g.data[i]).abs() < 1e-7, "{i}: {fd} vs {}", g.data[i]);
        }
    }
}

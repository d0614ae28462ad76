//! Diffuse and GGX specular reflectance with reverse-mode derivatives.

use std::f64::consts::PI;

use crate::math::{normalize, normalize_backward, Vec3};

pub const DIELECTRIC_F0: f64 = 0.04;

/// Smallest `α = roughness²` used by the distribution, keeping it finite at a mirror.
pub const MIN_ALPHA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecularConfig {
    /// Use `(n·ωo)(n·ωi)` instead of `4(n·ωo)(n·ωi)` in the denominator.
    pub literal_denominator: bool,
    pub denominator_floor: f64,
}

impl Default for SpecularConfig {
    fn default() -> Self {
        Self {
            literal_denominator: false,
            denominator_floor: 1e-4,
        }
    }
}

pub fn brdf_diffuse(basecolor: &Vec3, metalness: f64) -> Vec3 {
    basecolor * ((1.0 - metalness) / PI)
}

/// GGX normal distribution with `α = roughness²`.
pub fn ggx_distribution(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Height-correlated Smith masking-shadowing.
pub fn smith_g2(n_dot_o: f64, n_dot_i: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let lo = (n_dot_o * n_dot_o * (1.0 - a2) + a2).sqrt();
    let li = (n_dot_i * n_dot_i * (1.0 - a2) + a2).sqrt();
    2.0 * n_dot_o * n_dot_i / (n_dot_i * lo + n_dot_o * li)
}

pub fn schlick_f0(basecolor: &Vec3, metalness: f64) -> Vec3 {
    Vec3::repeat(DIELECTRIC_F0 * (1.0 - metalness)) + basecolor * metalness
}

pub fn schlick_fresnel(f0: &Vec3, v_dot_h: f64) -> Vec3 {
    let p = (1.0 - v_dot_h).clamp(0.0, 1.0).powi(5);
    f0 + (Vec3::repeat(1.0) - f0) * p
}

pub fn roughness_to_alpha(roughness: f64) -> f64 {
    (roughness * roughness).max(MIN_ALPHA)
}

/// Specular lobe; zero when either direction is below the surface.
pub fn brdf_specular(
    w_o: &Vec3,
    w_i: &Vec3,
    n: &Vec3,
    basecolor: &Vec3,
    metalness: f64,
    roughness: f64,
    cfg: &SpecularConfig,
) -> Vec3 {
    let no = n.dot(w_o);
    let ni = n.dot(w_i);
    if no <= 0.0 || ni <= 0.0 {
        return Vec3::zeros();
    }
    let (h, _) = normalize(&(w_o + w_i));
    let alpha = roughness_to_alpha(roughness);
    let d = ggx_distribution(n.dot(&h), alpha);
    let g = smith_g2(no, ni, alpha);
    let f = schlick_fresnel(&schlick_f0(basecolor, metalness), w_o.dot(&h));
    let scale = if cfg.literal_denominator { 1.0 } else { 4.0 };
    f * (d * g / (scale * no * ni).max(cfg.denominator_floor))
}

/// Gradients of [`brdf_specular`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SpecularGrad {
    pub w_o: Vec3,
    pub w_i: Vec3,
    pub n: Vec3,
    pub basecolor: Vec3,
    pub metalness: f64,
    pub roughness: f64,
}

/// Discrete choices of [`brdf_specular`]: lobe active, denominator floored, α floored.
pub fn specular_branches(w_o: &Vec3, w_i: &Vec3, n: &Vec3, roughness: f64, cfg: &SpecularConfig) -> u8 {
    let no = n.dot(w_o);
    let ni = n.dot(w_i);
    let active = no > 0.0 && ni > 0.0;
    let scale = if cfg.literal_denominator { 1.0 } else { 4.0 };
    let floored = scale * no * ni < cfg.denominator_floor;
    let alpha_floor = roughness * roughness < MIN_ALPHA;
    active as u8 | (floored as u8) << 1 | (alpha_floor as u8) << 2
}

#[allow(clippy::too_many_arguments)]
pub fn brdf_specular_backward(
    w_o: &Vec3,
    w_i: &Vec3,
    n: &Vec3,
    basecolor: &Vec3,
    metalness: f64,
    roughness: f64,
    cfg: &SpecularConfig,
    d_out: &Vec3,
) -> SpecularGrad {
    let mut out = SpecularGrad::default();
    let no = n.dot(w_o);
    let ni = n.dot(w_i);
    if no <= 0.0 || ni <= 0.0 {
        return out;
    }
    let (h, h_len) = normalize(&(w_o + w_i));
    let nh = n.dot(&h);
    let vh = w_o.dot(&h);
    let r2 = roughness * roughness;
    let alpha = r2.max(MIN_ALPHA);
    let a2 = alpha * alpha;

    let dd = nh * nh * (a2 - 1.0) + 1.0;
    let d = a2 / (PI * dd * dd);
    let d_d_a2 = 1.0 / (PI * dd * dd) - 2.0 * a2 * nh * nh / (PI * dd * dd * dd);
    let d_d_nh = -4.0 * a2 * nh * (a2 - 1.0) / (PI * dd * dd * dd);

    let lo = (no * no * (1.0 - a2) + a2).sqrt();
    let li = (ni * ni * (1.0 - a2) + a2).sqrt();
    let gd = ni * lo + no * li;
    let g = 2.0 * no * ni / gd;
    let d_lo_no = no * (1.0 - a2) / lo;
    let d_li_ni = ni * (1.0 - a2) / li;
    let d_lo_a2 = (1.0 - no * no) / (2.0 * lo);
    let d_li_a2 = (1.0 - ni * ni) / (2.0 * li);
    let d_g_no = 2.0 * ni / gd - g / gd * (ni * d_lo_no + li);
    let d_g_ni = 2.0 * no / gd - g / gd * (lo + no * d_li_ni);
    let d_g_a2 = -g / gd * (ni * d_lo_a2 + no * d_li_a2);

    let one_minus_vh = 1.0 - vh;
    let (p, dp_dvh) = if (0.0..=1.0).contains(&one_minus_vh) {
        (one_minus_vh.powi(5), -5.0 * one_minus_vh.powi(4))
    } else {
        (one_minus_vh.clamp(0.0, 1.0).powi(5), 0.0)
    };
    let f0 = schlick_f0(basecolor, metalness);
    let f = f0 + (Vec3::repeat(1.0) - f0) * p;

    let scale = if cfg.literal_denominator { 1.0 } else { 4.0 };
    let den_raw = scale * no * ni;
    let den = den_raw.max(cfg.denominator_floor);

    let s = d_out.dot(&f);
    let d_dist = s * g / den;
    let d_geo = s * d / den;
    let d_den = if den_raw >= cfg.denominator_floor { -s * d * g / (den * den) } else { 0.0 };
    let d_f = d_out * (d * g / den);

    let mut d_vh = 0.0;
    for c in 0..3 {
        let d_f0 = d_f[c] * (1.0 - p);
        d_vh += d_f[c] * (1.0 - f0[c]) * dp_dvh;
        out.metalness += d_f0 * (basecolor[c] - DIELECTRIC_F0);
        out.basecolor[c] += d_f0 * metalness;
    }

    let d_a2 = d_dist * d_d_a2 + d_geo * d_g_a2;
    let d_nh = d_dist * d_d_nh;
    let d_no = d_geo * d_g_no + d_den * scale * ni;
    let d_ni = d_geo * d_g_ni + d_den * scale * no;
    if r2 >= MIN_ALPHA {
        out.roughness = d_a2 * 2.0 * alpha * 2.0 * roughness;
    }

    out.n = w_o * d_no + w_i * d_ni + h * d_nh;
    let d_h = n * d_nh + w_o * d_vh;
    let d_hv = normalize_backward(&h, h_len, &d_h);
    out.w_o = n * d_no + h * d_vh + d_hv;
    out.w_i = n * d_ni + d_hv;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z).normalize()
    }

    #[test]
    fn metal_has_no_diffuse() {
        assert_eq!(brdf_diffuse(&Vec3::new(0.3, 0.6, 0.9), 1.0), Vec3::zeros());
    }

    #[test]
    fn white_dielectric_diffuse_is_inverse_pi() {
        let d = brdf_diffuse(&Vec3::repeat(1.0), 0.0);
        assert!((d - Vec3::repeat(1.0 / PI)).norm() < 1e-15);
        let d = brdf_diffuse(&Vec3::new(0.8, 0.4, 0.2), 0.5);
        assert!((d - Vec3::new(0.4, 0.2, 0.1) / PI).norm() < 1e-15);
    }

    #[test]
    fn below_hemisphere_is_black() {
        let n = Vec3::z();
        let s = brdf_specular(&Vec3::z(), &dir(1.0, 0.0, -0.1), &n, &Vec3::repeat(0.5), 0.2, 0.5, &SpecularConfig::default());
        assert_eq!(s, Vec3::zeros());
    }

    #[test]
    fn fresnel_at_normal_incidence_is_f0() {
        let f = schlick_fresnel(&schlick_f0(&Vec3::repeat(1.0), 1.0), 1.0);
        assert_eq!(f, Vec3::repeat(1.0));
    }

    #[test]
    fn reciprocity() {
        let n = dir(0.1, -0.2, 1.0);
        let cfg = SpecularConfig::default();
        for (a, b) in [(dir(0.3, 0.1, 0.9), dir(-0.5, 0.2, 0.7)), (dir(0.9, 0.0, 0.2), dir(-0.1, 0.6, 0.6))] {
            let x = brdf_specular(&a, &b, &n, &Vec3::new(0.7, 0.4, 0.2), 0.3, 0.45, &cfg);
            let y = brdf_specular(&b, &a, &n, &Vec3::new(0.7, 0.4, 0.2), 0.3, 0.45, &cfg);
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = SpecularConfig::default();
        let n0 = dir(0.1, -0.2, 1.0);
        let wo0 = dir(0.3, 0.1, 0.9);
        let wi0 = dir(-0.5, 0.2, 0.7);
        let b0 = Vec3::new(0.7, 0.4, 0.2);
        let (m0, r0) = (0.3, 0.45);
        let w = Vec3::new(0.3, -0.7, 1.1);
        let f = |wo: &Vec3, wi: &Vec3, n: &Vec3, b: &Vec3, m: f64, r: f64| {
            brdf_specular(wo, wi, n, b, m, r, &cfg).dot(&w)
        };
        let g = brdf_specular_backward(&wo0, &wi0, &n0, &b0, m0, r0, &cfg, &w);
        let h = 1e-6;
        let check = |fd: f64, an: f64, what: &str| {
            assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{what}: fd {fd} vs {an}");
        };
        for k in 0..3 {
            let e = Vec3::from_fn(|i, _| if i == k { h } else { 0.0 });
            check((f(&(wo0 + e), &wi0, &n0, &b0, m0, r0) - f(&(wo0 - e), &wi0, &n0, &b0, m0, r0)) / (2.0 * h), g.w_o[k], "wo");
            check((f(&wo0, &(wi0 + e), &n0, &b0, m0, r0) - f(&wo0, &(wi0 - e), &n0, &b0, m0, r0)) / (2.0 * h), g.w_i[k], "wi");
            check((f(&wo0, &wi0, &(n0 + e), &b0, m0, r0) - f(&wo0, &wi0, &(n0 - e), &b0, m0, r0)) / (2.0 * h), g.n[k], "n");
            check((f(&wo0, &wi0, &n0, &(b0 + e), m0, r0) - f(&wo0, &wi0, &n0, &(b0 - e), m0, r0)) / (2.0 * h), g.basecolor[k], "b");
        }
        check((f(&wo0, &wi0, &n0, &b0, m0 + h, r0) - f(&wo0, &wi0, &n0, &b0, m0 - h, r0)) / (2.0 * h), g.metalness, "m");
        check((f(&wo0, &wi0, &n0, &b0, m0, r0 + h) - f(&wo0, &wi0, &n0, &b0, m0, r0 - h)) / (2.0 * h), g.roughness, "r");
    }
}

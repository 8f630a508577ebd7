use rand::Rng;

use crate::rng::uniform_open0;

/// Deflection drawn from the Henyey-Greenstein phase function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deflection {
    pub cos_theta: f64,
    pub azimuth: f64,
}

/// Inverse-CDF sample of cos θ for anisotropy `g`.
#[inline]
pub fn sample_hg_cos<R: Rng + ?Sized>(g: f64, rng: &mut R) -> f64 {
    let xi: f64 = rng.random();
    if g.abs() < 1e-6 {
        return 2.0 * xi - 1.0;
    }
    let g2 = g * g;
    let frac = (1.0 - g2) / (1.0 - g + 2.0 * g * xi);
    ((1.0 + g2 - frac * frac) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// HG polar angle plus a uniform azimuth in [0, 2π).
pub fn scatter_hg<R: Rng + ?Sized>(g: f64, rng: &mut R) -> Deflection {
    let cos_theta = sample_hg_cos(g, rng);
    let azimuth = 2.0 * std::f64::consts::PI * (1.0 - uniform_open0(rng));
    Deflection { cos_theta, azimuth }
}

/// Rotates unit direction `d` by the deflection.
#[inline]
pub fn rotate(d: [f64; 3], defl: Deflection) -> [f64; 3] {
    let ct = defl.cos_theta;
    let st = (1.0 - ct * ct).max(0.0).sqrt();
    let (sp, cp) = defl.azimuth.sin_cos();
    let [ux, uy, uz] = d;
    let out = if uz.abs() > 0.99999 {
        [st * cp, st * sp, ct * uz.signum()]
    } else {
        let tmp = (1.0 - uz * uz).sqrt();
        [
            st * (ux * uz * cp - uy * sp) / tmp + ux * ct,
            st * (uy * uz * cp + ux * sp) / tmp + uy * ct,
            -st * cp * tmp + uz * ct,
        ]
    };
    let n = (out[0] * out[0] + out[1] * out[1] + out[2] * out[2]).sqrt();
    [out[0] / n, out[1] / n, out[2] / n]
}

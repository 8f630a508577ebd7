use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AcousticProperties, Inclusion, MaterialSpectrum, OpticalProperties, PhantomSpec, Shape, SpectralSample, WATER};
use crate::error::{QpatError, Result};

/// Wavelength at which sampled property ranges are defined.
pub const REFERENCE_WAVELENGTH_NM: f64 = 800.0;

/// Ranges for random phantom generation. Optical ranges are in 1/cm, as
/// they are usually quoted; geometry in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerRanges {
    pub mu_a_per_cm: [f64; 2],
    pub mu_s_prime_per_cm: [f64; 2],
    pub background_radius_mm: f64,
    pub half_length_mm: f64,
    pub inclusion_count: [usize; 2],
    pub inclusion_radius_mm: [f64; 2],
    pub margin_mm: f64,
    pub max_retries: usize,
    pub g: f64,
    pub n: f64,
    /// Spectral sampling of generated materials, inclusive.
    pub wavelengths_nm: [f64; 2],
    pub wavelength_step_nm: f64,
    /// Relative change of μa per nm away from the reference wavelength.
    pub mu_a_slope_per_nm: f64,
    /// Power-law exponent b in μs'(λ) = μs'(λ_ref) · (λ/λ_ref)^-b.
    pub scattering_power: f64,
}

impl Default for SamplerRanges {
    fn default() -> Self {
        Self {
            mu_a_per_cm: [0.05, 4.0],
            mu_s_prime_per_cm: [5.0, 15.0],
            background_radius_mm: 13.75,
            half_length_mm: 40.0,
            inclusion_count: [0, 3],
            inclusion_radius_mm: [1.5, 5.0],
            margin_mm: 0.5,
            max_retries: 200,
            g: 0.7,
            n: 1.4,
            wavelengths_nm: [700.0, 900.0],
            wavelength_step_nm: 10.0,
            mu_a_slope_per_nm: -0.0008,
            scattering_power: 1.0,
        }
    }
}

impl SamplerRanges {
    /// Ranges producing inclusion-free phantoms.
    pub fn homogeneous() -> Self {
        Self {
            inclusion_count: [0, 0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered_pos = |r: [f64; 2]| r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite();
        if !ordered_pos(self.mu_a_per_cm)
            || !ordered_pos(self.mu_s_prime_per_cm)
            || !ordered_pos(self.inclusion_radius_mm)
            || !ordered_pos(self.wavelengths_nm)
        {
            return Err(QpatError::Config("sampler ranges must be positive and ordered".into()));
        }
        if self.inclusion_count[0] > self.inclusion_count[1]
            || !(self.background_radius_mm > 0.0)
            || !(self.half_length_mm > 0.0)
            || !(self.wavelength_step_nm > 0.0)
            || self.margin_mm < 0.0
        {
            return Err(QpatError::Config("invalid sampler geometry".into()));
        }
        Ok(())
    }

    fn material(&self, name: String, mu_a_per_cm: f64, mu_s_prime_per_cm: f64) -> Result<MaterialSpectrum> {
        let mut samples = Vec::new();
        let steps = ((self.wavelengths_nm[1] - self.wavelengths_nm[0]) / self.wavelength_step_nm).round() as usize;
        for s in 0..=steps {
            let wl = self.wavelengths_nm[0] + s as f64 * self.wavelength_step_nm;
            let mu_a = mu_a_per_cm / 10.0 * (1.0 + self.mu_a_slope_per_nm * (wl - REFERENCE_WAVELENGTH_NM)).max(0.0);
            let mu_s_prime = mu_s_prime_per_cm / 10.0 * (wl / REFERENCE_WAVELENGTH_NM).powf(-self.scattering_power);
            samples.push(SpectralSample {
                wavelength_nm: wl,
                optical: OpticalProperties::from_reduced(mu_a, mu_s_prime, self.g, self.n)?,
            });
        }
        MaterialSpectrum::new(name, samples, AcousticProperties::water())
    }
}

/// Draws a random cylindrical phantom: a 27.5 mm diameter body with up to
/// three non-overlapping rod inclusions, each material drawn independently
/// and uniformly from the ranges at the reference wavelength.
///
/// Deterministic in `seed`. When an inclusion cannot be placed after
/// `max_retries` attempts, the phantom simply gets fewer inclusions.
pub fn sample_phantom(id: &str, seed: u64, ranges: &SamplerRanges) -> Result<PhantomSpec> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[1] > r[0] {
            rng.random_range(r[0]..=r[1])
        } else {
            r[0]
        }
    };
    let big_r = ranges.background_radius_mm;
    let axis = [0.0, 0.0, 1.0];
    let background_shape = Shape::cylinder([0.0; 3], big_r, axis, ranges.half_length_mm)?;

    let mut materials = Vec::new();
    let bg_mua = uniform(&mut rng, ranges.mu_a_per_cm);
    let bg_mus = uniform(&mut rng, ranges.mu_s_prime_per_cm);
    materials.push(ranges.material("background".into(), bg_mua, bg_mus)?);

    let count = rng.random_range(ranges.inclusion_count[0]..=ranges.inclusion_count[1]);
    let mut placed: Vec<([f64; 2], f64)> = Vec::new();
    let mut inclusions = Vec::new();
    for _ in 0..count {
        let mut found = None;
        for _ in 0..ranges.max_retries {
            let r = uniform(&mut rng, ranges.inclusion_radius_mm);
            let reach = big_r - r - ranges.margin_mm;
            if reach <= 0.0 {
                continue;
            }
            let x = rng.random_range(-reach..=reach);
            let y = rng.random_range(-reach..=reach);
            if x.hypot(y) > reach {
                continue;
            }
            let clear = placed
                .iter()
                .all(|(c, rc)| (c[0] - x).hypot(c[1] - y) >= r + rc + ranges.margin_mm);
            if clear {
                found = Some(([x, y], r));
                break;
            }
        }
        let Some((c, r)) = found else { break };
        placed.push((c, r));
        let name = format!("inclusion_{}", inclusions.len() + 1);
        let mua = uniform(&mut rng, ranges.mu_a_per_cm);
        let mus = uniform(&mut rng, ranges.mu_s_prime_per_cm);
        materials.push(ranges.material(name.clone(), mua, mus)?);
        inclusions.push(Inclusion {
            shape: Shape::cylinder([c[0], c[1], 0.0], r, axis, ranges.half_length_mm)?,
            material: name,
        });
    }

    let spec = PhantomSpec {
        id: id.to_string(),
        seed: Some(seed),
        materials,
        background_shape,
        background_material: "background".into(),
        inclusions,
        couplant_material: WATER.into(),
    };
    spec.validate()?;
    Ok(spec)
}

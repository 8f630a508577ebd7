use serde::{Deserialize, Serialize};

use crate::error::{QpatError, Result};

/// Optical coefficients of one material at one wavelength (lengths in mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalProperties {
    pub mu_a: f64,
    pub mu_s: f64,
    pub g: f64,
    pub n: f64,
}

impl OpticalProperties {
    pub fn new(mu_a: f64, mu_s: f64, g: f64, n: f64) -> Result<Self> {
        let p = Self { mu_a, mu_s, g, n };
        p.validate()?;
        Ok(p)
    }

    /// Builds from reduced scattering, `mu_s = mu_s' / (1 - g)`.
    pub fn from_reduced(mu_a: f64, mu_s_prime: f64, g: f64, n: f64) -> Result<Self> {
        Self::new(mu_a, mu_s_prime / (1.0 - g), g, n)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu_a, self.mu_s, self.g, self.n].iter().all(|v| v.is_finite());
        if !finite
            || self.mu_a < 0.0
            || self.mu_s < 0.0
            || !(self.g > -1.0 && self.g < 1.0)
            || self.n < 1.0
        {
            return Err(QpatError::Validation(format!("invalid optical properties {self:?}")));
        }
        Ok(())
    }

    pub fn mu_s_prime(&self) -> f64 {
        self.mu_s * (1.0 - self.g)
    }

    fn lerp(&self, other: &Self, t: f64) -> Self {
        let l = |a: f64, b: f64| a + (b - a) * t;
        Self {
            mu_a: l(self.mu_a, other.mu_a),
            mu_s: l(self.mu_s, other.mu_s),
            g: l(self.g, other.g),
            n: l(self.n, other.n),
        }
    }
}

/// Sound speed in mm/µs, density in kg/m³, dimensionless Grüneisen parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticProperties {
    pub sound_speed: f64,
    pub density: f64,
    pub gruneisen: f64,
}

impl AcousticProperties {
    pub fn new(sound_speed: f64, density: f64, gruneisen: f64) -> Result<Self> {
        let p = Self {
            sound_speed,
            density,
            gruneisen,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sound_speed > 0.0 && self.density > 0.0 && self.gruneisen > 0.0)
            || ![self.sound_speed, self.density, self.gruneisen].iter().all(|v| v.is_finite())
        {
            return Err(QpatError::Validation(format!("invalid acoustic properties {self:?}")));
        }
        Ok(())
    }

    /// Water at 25 °C with unit Grüneisen parameter.
    pub fn water() -> Self {
        Self {
            sound_speed: WATER_SOUND_SPEED,
            density: 1000.0,
            gruneisen: 1.0,
        }
    }
}

/// Speed of sound in water at 25 °C [mm/µs].
pub const WATER_SOUND_SPEED: f64 = 1.497;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSample {
    pub wavelength_nm: f64,
    pub optical: OpticalProperties,
}

/// Wavelength-resolved optical properties plus acoustic properties of one
/// material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpectrum {
    pub name: String,
    pub samples: Vec<SpectralSample>,
    pub acoustic: AcousticProperties,
}

impl MaterialSpectrum {
    pub fn new(
        name: impl Into<String>,
        samples: Vec<SpectralSample>,
        acoustic: AcousticProperties,
    ) -> Result<Self> {
        let m = Self {
            name: name.into(),
            samples,
            acoustic,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(QpatError::Validation(format!("material `{}` has no samples", self.name)));
        }
        for w in self.samples.windows(2) {
            if !(w[1].wavelength_nm > w[0].wavelength_nm) {
                return Err(QpatError::Validation(format!(
                    "material `{}`: wavelengths must be strictly increasing",
                    self.name
                )));
            }
        }
        for s in &self.samples {
            s.optical.validate()?;
        }
        self.acoustic.validate()
    }

    pub fn wavelength_range(&self) -> (f64, f64) {
        (
            self.samples[0].wavelength_nm,
            self.samples[self.samples.len() - 1].wavelength_nm,
        )
    }

    /// Optical properties at `wavelength_nm`, linear in wavelength between
    /// the bracketing samples.
    pub fn at(&self, wavelength_nm: f64) -> Result<OpticalProperties> {
        let (lo, hi) = self.wavelength_range();
        if !(wavelength_nm >= lo && wavelength_nm <= hi) {
            return Err(QpatError::Domain(format!(
                "wavelength {wavelength_nm} nm outside [{lo}, {hi}] nm of material `{}`",
                self.name
            )));
        }
        let upper = self
            .samples
            .iter()
            .position(|s| s.wavelength_nm >= wavelength_nm)
            .unwrap_or(self.samples.len() - 1);
        if upper == 0 || self.samples[upper].wavelength_nm == wavelength_nm {
            return Ok(self.samples[upper].optical);
        }
        let a = &self.samples[upper - 1];
        let b = &self.samples[upper];
        let t = (wavelength_nm - a.wavelength_nm) / (b.wavelength_nm - a.wavelength_nm);
        Ok(a.optical.lerp(&b.optical, t))
    }

    /// Pure water: tabulated absorption, no scattering, n = 1.33.
    pub fn water() -> Self {
        let table = parse_spectrum_csv(WATER_MUA_CSV).expect("shipped water table parses");
        let samples = table
            .into_iter()
            .map(|(wl, mua_per_cm)| SpectralSample {
                wavelength_nm: wl,
                optical: OpticalProperties {
                    mu_a: mua_per_cm / 10.0,
                    mu_s: 0.0,
                    g: 0.0,
                    n: 1.33,
                },
            })
            .collect();
        Self {
            name: WATER.into(),
            samples,
            acoustic: AcousticProperties::water(),
        }
    }
}

pub const WATER: &str = "water";

/// Water absorption coefficient, 1/cm.
pub const WATER_MUA_CSV: &str = include_str!("../../data/water_mua.csv");
/// Oxyhemoglobin molar extinction, cm⁻¹/M.
pub const HBO2_CSV: &str = include_str!("../../data/hbo2_molar_ext.csv");
/// Deoxyhemoglobin molar extinction, cm⁻¹/M.
pub const HB_CSV: &str = include_str!("../../data/hb_molar_ext.csv");

/// Parses a `wavelength_nm,value` table. A non-numeric first line is
/// treated as the header.
pub fn parse_spectrum_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
            return Err(QpatError::Parse(format!("line {}: expected two columns", lineno + 1)));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(wl), Ok(v)) => rows.push((wl, v)),
            _ if rows.is_empty() && lineno == 0 => continue,
            _ => {
                return Err(QpatError::Parse(format!(
                    "line {}: cannot parse `{line}`",
                    lineno + 1
                )))
            }
        }
    }
    if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(QpatError::Parse("wavelengths must be strictly increasing".into()));
    }
    Ok(rows)
}

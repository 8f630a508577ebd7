//! Monte Carlo photon transport in voxelized media and the initial pressure
//! p0 = Γ·μa·φ.
//!
//! Photon packets move with free paths drawn from the scattering
//! coefficient and lose weight continuously, `w ← w·exp(-μa·ℓ)`, on every
//! voxel segment they traverse. The absorbed weight of a segment is
//! tallied per voxel, so the fluence estimate is
//! `φ = absorbed / (μa · V_voxel · N)`; in non-absorbing voxels the
//! (identical, μa → 0) track-length form `w·ℓ / (V_voxel · N)` is used.

mod hg;

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpatError, Result};
use crate::grid::{Volume, VoxelGrid};
use crate::phantom::PropertyVolumes;
use crate::rng::{uniform_open0, RngStream};

pub use hg::{rotate, sample_hg_cos, scatter_hg, Deflection};

/// Ring of fibre-bundle pairs around the phantom axis (z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlluminationGeometry {
    pub bundle_pairs: usize,
    pub ring_radius: f64,
    /// Each pair member sits at `target_z ± axial_offset`.
    pub axial_offset: f64,
    pub beam_divergence_half_angle: f64,
    pub spot_radius: f64,
    pub target_point: [f64; 3],
    /// Angle of the first pair, degrees from +x.
    pub azimuth_offset: f64,
}

impl Default for IlluminationGeometry {
    fn default() -> Self {
        Self {
            bundle_pairs: 5,
            ring_radius: 22.0,
            axial_offset: 3.0,
            beam_divergence_half_angle: 15.0,
            spot_radius: 1.0,
            target_point: [0.0; 3],
            azimuth_offset: 90.0,
        }
    }
}

impl IlluminationGeometry {
    pub fn validate(&self, phantom_radius: Option<f64>) -> Result<()> {
        if self.bundle_pairs == 0 {
            return Err(QpatError::Config("illumination needs at least one bundle pair".into()));
        }
        if !(0.0..90.0).contains(&self.beam_divergence_half_angle) {
            return Err(QpatError::Config("beam divergence must lie in [0, 90) degrees".into()));
        }
        if !(self.ring_radius > 0.0) || self.spot_radius < 0.0 {
            return Err(QpatError::Config("ring radius must be positive".into()));
        }
        if let Some(r) = phantom_radius {
            if self.ring_radius <= r {
                return Err(QpatError::Config(format!(
                    "ring radius {} mm must exceed phantom radius {r} mm",
                    self.ring_radius
                )));
            }
        }
        Ok(())
    }
}

/// Where photons come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LightSource {
    Ring(IlluminationGeometry),
    /// Collimated, infinitely thin beam.
    Pencil { origin: [f64; 3], direction: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub roulette_threshold: f64,
    pub roulette_survival: f64,
    /// Independent tally lanes. Results depend on this value, never on the
    /// number of threads.
    pub lanes: usize,
    /// Safety cap on segments per packet.
    pub max_segments: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            roulette_threshold: 1e-4,
            roulette_survival: 0.1,
            lanes: 8,
            max_segments: 50_000_000,
        }
    }
}

/// Fluence per unit delivered energy [1/mm²].
#[derive(Debug, Clone, PartialEq)]
pub struct FluenceVolume {
    pub grid: VoxelGrid,
    pub phi: Vec<f64>,
}

impl FluenceVolume {
    pub fn to_volume(&self) -> Volume {
        Volume {
            grid: self.grid,
            data: self.phi.clone(),
        }
    }

    pub fn from_volume(v: Volume) -> Result<Self> {
        if v.data.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(QpatError::Validation("fluence must be finite and non-negative".into()));
        }
        Ok(Self {
            grid: v.grid,
            phi: v.data,
        })
    }
}

/// Initial pressure, proportional to absorbed energy density.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    pub grid: VoxelGrid,
    pub p0: Vec<f64>,
}

impl PressureField {
    pub fn to_volume(&self) -> Volume {
        Volume {
            grid: self.grid,
            data: self.p0.clone(),
        }
    }
}

/// Weight bookkeeping of one run, in units of launched packets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub launched: f64,
    pub absorbed: f64,
    pub escaped: f64,
    /// Net weight created (+) or destroyed (−) by Russian roulette; zero in
    /// expectation.
    pub roulette_net: f64,
}

impl EnergyBalance {
    /// |launched − (absorbed + escaped)| / launched.
    pub fn relative_defect(&self) -> f64 {
        (self.launched - (self.absorbed + self.escaped)).abs() / self.launched
    }
}

#[derive(Debug, Clone)]
pub struct FluenceRun {
    pub fluence: FluenceVolume,
    pub energy: EnergyBalance,
    /// Absorbed weight per voxel per launched packet.
    pub absorbed: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Medium {
    mu_a: f64,
    mu_s: f64,
    g: f64,
}

struct LaneTally {
    weighted_path: Vec<f64>,
    absorbed: f64,
    escaped: f64,
    roulette_net: f64,
}

/// Entry distance of a ray into an axis-aligned box, if it hits.
fn ray_box_entry(p: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if p[a] < lo[a] || p[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - p[a]) / d[a], (hi[a] - p[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Two unit vectors orthogonal to `d` (and each other).
fn basis(d: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if d[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let u = normalize([
        d[1] * helper[2] - d[2] * helper[1],
        d[2] * helper[0] - d[0] * helper[2],
        d[0] * helper[1] - d[1] * helper[0],
    ]);
    let v = [
        d[1] * u[2] - d[2] * u[1],
        d[2] * u[0] - d[0] * u[2],
        d[0] * u[1] - d[1] * u[0],
    ];
    (u, v)
}

/// Initial position and direction of packet `index`.
fn launch<R: Rng>(source: &LightSource, index: u64, rng: &mut R) -> ([f64; 3], [f64; 3]) {
    match source {
        LightSource::Pencil { origin, direction } => (*origin, normalize(*direction)),
        LightSource::Ring(ring) => {
            let fibres = 2 * ring.bundle_pairs as u64;
            let fibre = index % fibres;
            let pair = fibre / 2;
            let sign = if fibre % 2 == 0 { 1.0 } else { -1.0 };
            let phi = ring.azimuth_offset.to_radians() + 2.0 * PI * pair as f64 / ring.bundle_pairs as f64;
            let t = ring.target_point;
            let tip = [
                t[0] + ring.ring_radius * phi.cos(),
                t[1] + ring.ring_radius * phi.sin(),
                t[2] + sign * ring.axial_offset,
            ];
            let aim = normalize([t[0] - tip[0], t[1] - tip[1], t[2] - tip[2]]);
            let (u, v) = basis(aim);
            let r = ring.spot_radius * rng.random::<f64>().sqrt();
            let a = 2.0 * PI * rng.random::<f64>();
            let pos = [
                tip[0] + r * (a.cos() * u[0] + a.sin() * v[0]),
                tip[1] + r * (a.cos() * u[1] + a.sin() * v[1]),
                tip[2] + r * (a.cos() * u[2] + a.sin() * v[2]),
            ];
            let cos_max = ring.beam_divergence_half_angle.to_radians().cos();
            let cos_t = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
            let dir = rotate(
                aim,
                Deflection {
                    cos_theta: cos_t,
                    azimuth: 2.0 * PI * rng.random::<f64>(),
                },
            );
            (pos, dir)
        }
    }
}

struct Tracer<'a> {
    grid: &'a VoxelGrid,
    media: &'a [Medium],
    cfg: &'a TransportConfig,
}

impl Tracer<'_> {
    fn trace(&self, source: &LightSource, seed: u64, index: u64, tally: &mut LaneTally) {
        let mut rng = RngStream::new(seed, index).rng();
        let (start, mut dir) = launch(source, index, &mut rng);
        let g = self.grid;
        let lo = g.origin;
        let ext = g.extent();
        let hi = [lo[0] + ext[0], lo[1] + ext[1], lo[2] + ext[2]];
        let Some(t_entry) = ray_box_entry(start, dir, lo, hi) else {
            tally.escaped += 1.0;
            return;
        };
        let mut pos = [
            start[0] + dir[0] * t_entry,
            start[1] + dir[1] * t_entry,
            start[2] + dir[2] * t_entry,
        ];
        let mut idx = [0i64; 3];
        for a in 0..3 {
            let f = ((pos[a] - lo[a]) / g.spacing[a]).floor() as i64;
            idx[a] = f.clamp(0, g.dims[a] as i64 - 1);
        }
        let dims = [g.dims[0] as i64, g.dims[1] as i64, g.dims[2] as i64];
        let mut w = 1.0f64;
        let mut tau = -uniform_open0(&mut rng).ln();
        // per-axis reciprocal direction and offset (0 or 1) of the wall ahead
        let axis_walk = |dir: [f64; 3]| {
            let inv = dir.map(|d| 1.0 / d);
            let ahead = dir.map(|d| if d > 0.0 { 1 } else { 0 });
            (inv, ahead)
        };
        let (mut inv, mut ahead) = axis_walk(dir);

        for _ in 0..self.cfg.max_segments {
            let v = ((idx[2] * dims[1] + idx[1]) * dims[0] + idx[0]) as usize;
            let m = self.media[v];

            // distance to the voxel wall along each axis
            let mut t_wall = f64::INFINITY;
            let mut axis = 0usize;
            for a in 0..3 {
                if dir[a] == 0.0 {
                    continue;
                }
                let t = (lo[a] + (idx[a] + ahead[a]) as f64 * g.spacing[a] - pos[a]) * inv[a];
                if t < t_wall {
                    t_wall = t;
                    axis = a;
                }
            }
            let t_wall = t_wall.max(0.0);
            let t_scatter = if m.mu_s > 0.0 { tau / m.mu_s } else { f64::INFINITY };
            let scatters = t_scatter < t_wall;
            let step = if scatters { t_scatter } else { t_wall };

            // continuous absorption over the segment
            let path_weight = if m.mu_a > 0.0 {
                let lost = w * (-(m.mu_a * step)).exp_m1().abs();
                tally.absorbed += lost;
                let pw = lost / m.mu_a;
                w -= lost;
                pw
            } else {
                w * step
            };
            tally.weighted_path[v] += path_weight;

            pos = [pos[0] + dir[0] * step, pos[1] + dir[1] * step, pos[2] + dir[2] * step];
            if scatters {
                tau = -uniform_open0(&mut rng).ln();
                dir = rotate(dir, scatter_hg(m.g, &mut rng));
                (inv, ahead) = axis_walk(dir);
            } else {
                tau -= m.mu_s * step;
                idx[axis] += if dir[axis] > 0.0 { 1 } else { -1 };
                if idx[axis] < 0 || idx[axis] >= dims[axis] {
                    tally.escaped += w;
                    return;
                }
            }

            if w < self.cfg.roulette_threshold {
                if rng.random::<f64>() < self.cfg.roulette_survival {
                    let boosted = w / self.cfg.roulette_survival;
                    tally.roulette_net += boosted - w;
                    w = boosted;
                } else {
                    tally.roulette_net -= w;
                    return;
                }
            }
        }
        // segment cap reached: book the remainder as absorbed in place
        tally.absorbed += w;
    }
}

/// Runs `n_photons` packets through the property volumes.
///
/// Packet `i` draws from stream `(seed, i)` and is tallied in lane
/// `i % cfg.lanes`; lanes are summed in index order, so the result is
/// bit-identical for any thread count.
pub fn simulate_fluence(
    props: &PropertyVolumes,
    source: &LightSource,
    n_photons: u64,
    seed: u64,
    cfg: &TransportConfig,
) -> Result<FluenceRun> {
    if n_photons == 0 {
        return Err(QpatError::Config("n_photons must be >= 1".into()));
    }
    if cfg.lanes == 0 || !(cfg.roulette_survival > 0.0 && cfg.roulette_survival <= 1.0) {
        return Err(QpatError::Config("invalid transport configuration".into()));
    }
    let grid = props.grid;
    grid.validate()?;
    let n = grid.len();
    for (name, vol) in [("mu_a", &props.mu_a), ("mu_s", &props.mu_s), ("g", &props.g)] {
        if vol.len() != n {
            return Err(QpatError::Dimension(format!("{name} volume not aligned with grid")));
        }
        if let Some(bad) = vol.iter().position(|x| !x.is_finite()) {
            return Err(QpatError::Validation(format!("non-finite {name} at voxel {bad}")));
        }
    }
    if props.mu_a.iter().chain(&props.mu_s).any(|&x| x < 0.0) || props.g.iter().any(|g| g.abs() >= 1.0) {
        return Err(QpatError::Validation("property volume outside physical range".into()));
    }
    match source {
        LightSource::Ring(r) => r.validate(None)?,
        LightSource::Pencil { direction, .. } => {
            if direction.iter().all(|&c| c == 0.0) {
                return Err(QpatError::Config("pencil beam direction must be non-zero".into()));
            }
        }
    }

    let media: Vec<Medium> = (0..n)
        .map(|v| Medium {
            mu_a: props.mu_a[v],
            mu_s: props.mu_s[v],
            g: props.g[v],
        })
        .collect();
    let tracer = Tracer {
        grid: &grid,
        media: &media,
        cfg,
    };
    let lanes = cfg.lanes as u64;
    let tallies: Vec<LaneTally> = (0..lanes)
        .into_par_iter()
        .map(|lane| {
            let mut tally = LaneTally {
                weighted_path: vec![0.0; n],
                absorbed: 0.0,
                escaped: 0.0,
                roulette_net: 0.0,
            };
            let mut i = lane;
            while i < n_photons {
                tracer.trace(source, seed, i, &mut tally);
                i += lanes;
            }
            tally
        })
        .collect();

    let mut iter = tallies.into_iter();
    let mut total = iter.next().expect("at least one lane");
    for t in iter {
        for (a, b) in total.weighted_path.iter_mut().zip(&t.weighted_path) {
            *a += b;
        }
        total.absorbed += t.absorbed;
        total.escaped += t.escaped;
        total.roulette_net += t.roulette_net;
    }

    let norm = 1.0 / (grid.voxel_volume() * n_photons as f64);
    let phi: Vec<f64> = total.weighted_path.iter().map(|&x| x * norm).collect();
    let per_photon = 1.0 / n_photons as f64;
    let absorbed: Vec<f64> = total
        .weighted_path
        .iter()
        .zip(&props.mu_a)
        .map(|(&x, &mu)| x * mu * per_photon)
        .collect();
    Ok(FluenceRun {
        fluence: FluenceVolume { grid, phi },
        energy: EnergyBalance {
            launched: n_photons as f64,
            absorbed: total.absorbed,
            escaped: total.escaped,
            roulette_net: total.roulette_net,
        },
        absorbed,
    })
}

/// p0 = Γ·μa·φ voxelwise.
pub fn compute_p0(mu_a: &Volume, phi: &FluenceVolume, gruneisen: &Volume) -> Result<PressureField> {
    if mu_a.grid != phi.grid || gruneisen.grid != phi.grid {
        return Err(QpatError::Dimension("mu_a, fluence and Grüneisen grids differ".into()));
    }
    let p0 = mu_a
        .data
        .iter()
        .zip(&phi.phi)
        .zip(&gruneisen.data)
        .map(|((&m, &f), &gamma)| gamma * m * f)
        .collect();
    Ok(PressureField { grid: phi.grid, p0 })
}

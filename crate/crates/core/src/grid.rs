//! Regular grids and the scalar fields that live on them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QpatError, Result};
use crate::io::{self, VolumeSidecar};

/// Regular 3D voxel grid. `origin` is the minimum corner; voxel `(i, j, k)`
/// has its center at `origin + (index + 0.5) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Self {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Cubic-voxel grid centered on the coordinate origin.
    pub fn centered(dims: [usize; 3], spacing: f64) -> Result<Self> {
        let origin = [
            -(dims[0] as f64) * spacing / 2.0,
            -(dims[1] as f64) * spacing / 2.0,
            -(dims[2] as f64) * spacing / 2.0,
        ];
        Self::new(dims, [spacing; 3], origin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(QpatError::Config(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(QpatError::Config(format!(
                "grid spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(QpatError::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.spacing[0],
            self.origin[1] + (j as f64 + 0.5) * self.spacing[1],
            self.origin[2] + (k as f64 + 0.5) * self.spacing[2],
        ]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    /// Voxel containing `p`, if any.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - self.origin[a]) / self.spacing[a];
            if !(f >= 0.0) || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = (f as usize).min(self.dims[a] - 1);
        }
        Some(idx)
    }

    /// Index of the slice whose center is nearest to the grid's mid-plane.
    pub fn central_slice(&self) -> usize {
        self.dims[2] / 2
    }

    /// In-plane geometry of any z-slice.
    pub fn plane(&self) -> PlaneGrid {
        PlaneGrid {
            nx: self.dims[0],
            ny: self.dims[1],
            spacing: [self.spacing[0], self.spacing[1]],
            origin: [self.origin[0], self.origin[1]],
        }
    }
}

/// Scalar field on a [`VoxelGrid`], x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: VoxelGrid,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: VoxelGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(QpatError::Dimension(format!(
                "volume data has {} values, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: VoxelGrid) -> Self {
        Self {
            data: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn slice_z(&self, k: usize) -> Field2D {
        let plane = self.grid.plane();
        let n = plane.nx * plane.ny;
        Field2D {
            grid: plane,
            data: self.data[k * n..(k + 1) * n].to_vec(),
        }
    }

    pub fn sidecar(&self, quantity: &str) -> VolumeSidecar {
        VolumeSidecar {
            dims: self.grid.dims,
            spacing_mm: self.grid.spacing,
            origin_mm: self.grid.origin,
            dtype: io::DTYPE_F32.into(),
            order: io::ORDER_C.into(),
            fov_mm: None,
            pixel_pitch_mm: None,
            quantity: Some(quantity.into()),
        }
    }

    pub fn write(&self, path: &Path, quantity: &str) -> Result<()> {
        io::write_f32_le(path, &self.data)?;
        io::write_json(&io::sidecar_path(path), &self.sidecar(quantity))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: VolumeSidecar = io::read_json(&io::sidecar_path(path))?;
        let grid = VoxelGrid::new(meta.dims, meta.spacing_mm, meta.origin_mm)?;
        let data = io::read_f32_le(path)?;
        io::check_len(path, grid.len(), data.len())?;
        Self::new(grid, data)
    }
}

/// Regular 2D pixel grid; `origin` is the minimum corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneGrid {
    pub nx: usize,
    pub ny: usize,
    pub spacing: [f64; 2],
    pub origin: [f64; 2],
}

impl PlaneGrid {
    pub fn square_centered(n: usize, spacing: f64, center: [f64; 2]) -> Self {
        let half = n as f64 * spacing / 2.0;
        Self {
            nx: n,
            ny: n,
            spacing: [spacing, spacing],
            origin: [center[0] - half, center[1] - half],
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.spacing[0],
            self.origin[1] + (j as f64 + 0.5) * self.spacing[1],
        ]
    }
}

/// Scalar field on a [`PlaneGrid`], x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub grid: PlaneGrid,
    pub data: Vec<f64>,
}

impl Field2D {
    pub fn new(grid: PlaneGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(QpatError::Dimension(format!(
                "field has {} values, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: PlaneGrid) -> Self {
        Self {
            data: vec![0.0; grid.len()],
            grid,
        }
    }

    /// Bilinear interpolation between pixel centers; zero outside the grid,
    /// edge-clamped within half a pixel of the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let fx = (x - g.origin[0]) / g.spacing[0] - 0.5;
        let fy = (y - g.origin[1]) / g.spacing[1] - 0.5;
        if fx < -0.5 || fy < -0.5 || fx > g.nx as f64 - 0.5 || fy > g.ny as f64 - 0.5 {
            return 0.0;
        }
        let fx = fx.clamp(0.0, (g.nx - 1) as f64);
        let fy = fy.clamp(0.0, (g.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(g.nx.saturating_sub(2));
        let j0 = (fy.floor() as usize).min(g.ny.saturating_sub(2));
        let i1 = (i0 + 1).min(g.nx - 1);
        let j1 = (j0 + 1).min(g.ny - 1);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let v = |i: usize, j: usize| self.data[j * g.nx + i];
        (1.0 - ty) * ((1.0 - tx) * v(i0, j0) + tx * v(i1, j0))
            + ty * ((1.0 - tx) * v(i0, j1) + tx * v(i1, j1))
    }

    /// Bilinear resampling onto another grid.
    pub fn resample(&self, target: PlaneGrid) -> Field2D {
        let mut data = Vec::with_capacity(target.len());
        for j in 0..target.ny {
            for i in 0..target.nx {
                let [x, y] = target.center(i, j);
                data.push(self.sample(x, y));
            }
        }
        Field2D { grid: target, data }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_x_fastest() {
        let g = VoxelGrid::centered([4, 3, 2], 1.0).unwrap();
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 4);
        assert_eq!(g.index(0, 0, 1), 12);
        assert_eq!(g.center(0, 0, 0), [-1.5, -1.0, -0.5]);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(VoxelGrid::centered([0, 1, 1], 1.0).is_err());
        assert!(VoxelGrid::centered([1, 1, 1], 0.0).is_err());
    }

    #[test]
    fn voxel_lookup_round_trips_centers() {
        let g = VoxelGrid::centered([5, 6, 7], 0.5).unwrap();
        for (i, j, k) in [(0, 0, 0), (4, 5, 6), (2, 3, 1)] {
            assert_eq!(g.voxel_of(g.center(i, j, k)), Some([i, j, k]));
        }
        assert_eq!(g.voxel_of([100.0, 0.0, 0.0]), None);
    }

    #[test]
    fn bilinear_reproduces_linear_field() {
        let grid = PlaneGrid::square_centered(10, 1.0, [0.0, 0.0]);
        let mut f = Field2D::zeros(grid);
        for j in 0..10 {
            for i in 0..10 {
                let [x, y] = grid.center(i, j);
                f.data[j * 10 + i] = 2.0 * x - y + 1.0;
            }
        }
        let v = f.sample(0.3, -1.7);
        assert!((v - (2.0 * 0.3 + 1.7 + 1.0)).abs() < 1e-12);
        assert_eq!(f.sample(50.0, 0.0), 0.0);
    }

    #[test]
    fn volume_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = VoxelGrid::centered([3, 2, 2], 0.25).unwrap();
        let v = Volume::new(g, (0..12).map(|x| x as f64 * 0.5).collect()).unwrap();
        let p = dir.path().join("v.bin");
        v.write(&p, "test").unwrap();
        assert_eq!(Volume::read(&p).unwrap(), v);
        let meta: VolumeSidecar = io::read_json(&dir.path().join("v.json")).unwrap();
        assert_eq!(meta.order, "C");
        assert_eq!(meta.dtype, "float32");
    }
}

//! Voxel grids and the volumes that live on them.
//!
//! Arrays are stored x-fastest (NIfTI order): `index = i + nx * (j + ny * k)`.

use nalgebra::{Matrix3, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::taxonomy::MAX_STRUCTURE_ID;

/// Relative tolerance used when comparing grids loaded from different files.
pub const GRID_TOLERANCE: f64 = 1e-5;

/// Geometry shared by every volume type: size, voxel spacing and the voxel-to-world affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Matrix4<f64>,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Matrix4<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if affine.iter().any(|v| !v.is_finite()) || affine.try_inverse().is_none() {
            return Err(Error::NonInvertibleAffine);
        }
        let det = linear_part(&affine).determinant().abs();
        let expected: f64 = spacing.iter().product();
        if ((det - expected) / expected).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "affine determinant {det} does not match spacing product {expected} (sheared or inconsistent affine)"
            )));
        }
        Ok(Grid {
            dims,
            spacing,
            affine,
        })
    }

    /// Axis-aligned grid with its first voxel center at the world origin.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_origin(dims, spacing, [0.0; 3])
    }

    pub fn with_origin(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let mut affine = Matrix4::identity();
        for a in 0..3 {
            affine[(a, a)] = spacing[a];
            affine[(a, 3)] = origin[a];
        }
        Self::new(dims, spacing, affine)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position (mm) of a continuous voxel index.
    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.affine * Vector4::new(p[0], p[1], p[2], 1.0);
        [w[0], w[1], w[2]]
    }

    pub fn world_to_voxel(&self) -> Result<Matrix4<f64>> {
        self.affine.try_inverse().ok_or(Error::NonInvertibleAffine)
    }

    /// Grids agree in dims exactly and in spacing/affine within [`GRID_TOLERANCE`].
    pub fn matches(&self, other: &Grid) -> bool {
        if self.dims != other.dims {
            return false;
        }
        let scale = self.spacing.iter().fold(1.0f64, |m, &s| m.max(s));
        let close = |a: f64, b: f64| (a - b).abs() <= GRID_TOLERANCE * scale.max(a.abs());
        self.spacing
            .iter()
            .zip(other.spacing.iter())
            .all(|(&a, &b)| close(a, b))
            && self
                .affine
                .iter()
                .zip(other.affine.iter())
                .all(|(&a, &b)| close(a, b))
    }

    pub fn ensure_matches(&self, other: &Grid, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: dims {:?}/{:?}, spacing {:?}/{:?}",
                self.dims, other.dims, self.spacing, other.spacing
            )))
        }
    }
}

pub(crate) fn linear_part(affine: &Matrix4<f64>) -> Matrix3<f64> {
    affine.fixed_view::<3, 3>(0, 0).into_owned()
}

fn check_len(grid: &Grid, len: usize) -> Result<()> {
    if grid.len() != len {
        return Err(Error::invalid(format!(
            "data length {len} does not match grid size {}",
            grid.len()
        )));
    }
    Ok(())
}

/// Scalar CT volume in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        check_len(&grid, data.len())?;
        Ok(Volume3D { grid, data })
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        let data = vec![value; grid.len()];
        Volume3D { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Integer structure labels; 0 is background, 1..=104 are registry IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    grid: Grid,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(grid: Grid, data: Vec<u16>) -> Result<Self> {
        check_len(&grid, data.len())?;
        if let Some((index, &v)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| v > MAX_STRUCTURE_ID)
        {
            return Err(Error::UnregisteredLabel {
                index,
                value: v as f64,
            });
        }
        Ok(LabelMap { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        let data = vec![0; grid.len()];
        LabelMap { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    /// Sorted distinct values present, including 0 if any background exists.
    pub fn label_set(&self) -> Vec<u16> {
        let mut seen = [false; MAX_STRUCTURE_ID as usize + 1];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=MAX_STRUCTURE_ID).filter(|&v| seen[v as usize]).collect()
    }

    pub fn count(&self, id: u16) -> usize {
        self.data.iter().filter(|&&v| v == id).count()
    }

    /// Voxel counts for every label value, indexed by label.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; MAX_STRUCTURE_ID as usize + 1];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }
}

/// Boolean per-voxel view of one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        check_len(&grid, data.len())?;
        Ok(BinaryMask { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        let data = vec![false; grid.len()];
        BinaryMask { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Label map holding `id` wherever the mask is set.
    pub fn to_labelmap(&self, id: u16) -> Result<LabelMap> {
        let data = self.data.iter().map(|&b| if b { id } else { 0 }).collect();
        LabelMap::new(self.grid.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_coords_are_inverse() {
        let g = Grid::axis_aligned([3, 4, 5], [1.0, 1.0, 1.0]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::axis_aligned([0, 1, 1], [1.0; 3]).is_err());
        assert!(Grid::axis_aligned([1, 1, 1], [1.0, -1.0, 1.0]).is_err());
        let mut sheared = Matrix4::identity();
        sheared[(0, 1)] = 0.5;
        assert!(Grid::new([2, 2, 2], [1.0, 1.118, 1.0], sheared).is_err());
        assert!(matches!(
            Grid::new([2, 2, 2], [1.0; 3], Matrix4::zeros()),
            Err(Error::NonInvertibleAffine)
        ));
    }

    #[test]
    fn labelmap_rejects_unregistered_values() {
        let g = Grid::axis_aligned([2, 1, 1], [1.0; 3]).unwrap();
        assert!(matches!(
            LabelMap::new(g, vec![0, 200]),
            Err(Error::UnregisteredLabel { index: 1, .. })
        ));
    }
}

//! Resampling onto isotropic target grids.
//!
//! Target voxel centers are pushed through the target affine and the inverse
//! source affine to a continuous source index. A sample is in bounds when every
//! coordinate lies within one voxel of the outermost source voxel centers
//! (`-1 ≤ p ≤ N`); in-bounds samples are clamped to the source array before
//! interpolating, out-of-bounds samples get the fill value (−1024 HU for CT,
//! background for labels). Nearest-neighbour rounds half away from zero.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::par::{map_range, Execution};
use crate::volume::{linear_part, Grid, LabelMap, Volume3D};

/// Spacings used by the two published model resolutions, in mm.
pub const PRESET_SPACINGS_MM: [f64; 2] = [1.5, 3.0];
pub const DEFAULT_SPACING_MM: f64 = 1.5;
/// Out-of-bounds value for CT volumes (air).
pub const SCALAR_FILL_HU: f64 = -1024.0;

const BOUNDS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// An isotropic grid covering a source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    spacing_iso: f64,
    grid: Grid,
}

impl TargetGrid {
    pub fn spacing_iso(&self) -> f64 {
        self.spacing_iso
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }
}

/// Isotropic grid with `ceil(dims · spacing / spacing_iso)` voxels per axis,
/// the source's axis directions, and the same first-voxel-center origin.
pub fn build_target_grid(src: &Grid, spacing_iso: f64) -> Result<TargetGrid> {
    if !(spacing_iso.is_finite() && spacing_iso > 0.0) {
        return Err(Error::invalid(format!("target spacing must be positive, got {spacing_iso}")));
    }
    let src_dims = src.dims();
    let src_spacing = src.spacing();
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let extent = src_dims[a] as f64 * src_spacing[a] / spacing_iso;
        // guard against 128.00000000001 style round-off
        dims[a] = ((extent - 1e-9 * extent.max(1.0)).ceil() as usize).max(1);
    }
    let src_affine = src.affine();
    let lin = linear_part(src_affine);
    let mut affine = Matrix4::identity();
    for c in 0..3 {
        let scale = spacing_iso / src_spacing[c];
        for r in 0..3 {
            affine[(r, c)] = lin[(r, c)] * scale;
        }
    }
    for r in 0..3 {
        affine[(r, 3)] = src_affine[(r, 3)];
    }
    let grid = Grid::new(dims, [spacing_iso; 3], affine)?;
    Ok(TargetGrid { spacing_iso, grid })
}

/// Maps target voxel indices to continuous source indices.
#[derive(Debug, Clone)]
pub struct IndexMap {
    m: Matrix4<f64>,
    src_dims: [usize; 3],
}

impl IndexMap {
    pub fn new(src: &Grid, target: &Grid) -> Result<Self> {
        let inv = src.world_to_voxel()?;
        Ok(IndexMap {
            m: inv * target.affine(),
            src_dims: src.dims(),
        })
    }

    /// Continuous source index sampled by target voxel `(i, j, k)`.
    #[inline]
    pub fn source_index(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let p = self.m * Vector4::new(i as f64, j as f64, k as f64, 1.0);
        [p[0], p[1], p[2]]
    }

    #[inline]
    pub fn in_bounds(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= -1.0 - BOUNDS_EPS && p[a] <= self.src_dims[a] as f64 + BOUNDS_EPS)
    }

    /// Nearest source voxel (round half away from zero, clamped), if in bounds.
    #[inline]
    pub fn nearest(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        if !self.in_bounds(p) {
            return None;
        }
        Some([0, 1, 2].map(|a| p[a].round().clamp(0.0, (self.src_dims[a] - 1) as f64) as usize))
    }
}

fn map_slices<T: Send + Copy>(
    target: &Grid,
    exec: Execution,
    voxel: impl Fn(usize, usize, usize) -> T + Sync + Send,
) -> Vec<T> {
    let [nx, ny, nz] = target.dims();
    let slices = map_range(exec, nz, |k| {
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push(voxel(i, j, k));
            }
        }
        out
    });
    slices.concat()
}

fn trilinear(src: &Volume3D, p: [f64; 3]) -> f64 {
    let dims = src.grid().dims();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        let c = p[a].clamp(0.0, hi);
        let f = c.floor().min((dims[a].max(2) - 2) as f64);
        base[a] = f as usize;
        frac[a] = if dims[a] == 1 { 0.0 } else { c - f };
    }
    let g = src.grid();
    let data = src.data();
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                if wx == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * data[g.index(base[0] + dx, base[1] + dy, base[2] + dz)];
            }
        }
    }
    acc
}

pub fn resample_volume(src: &Volume3D, target: &Grid, mode: Interpolation) -> Result<Volume3D> {
    resample_volume_with(src, target, mode, Execution::default())
}

pub fn resample_volume_with(
    src: &Volume3D,
    target: &Grid,
    mode: Interpolation,
    exec: Execution,
) -> Result<Volume3D> {
    let map = IndexMap::new(src.grid(), target)?;
    let g = src.grid();
    let data = map_slices(target, exec, |i, j, k| {
        let p = map.source_index(i, j, k);
        if !map.in_bounds(p) {
            return SCALAR_FILL_HU;
        }
        match mode {
            Interpolation::Trilinear => trilinear(src, p),
            Interpolation::Nearest => {
                let [a, b, c] = map.nearest(p).expect("in bounds");
                src.data()[g.index(a, b, c)]
            }
        }
    });
    Volume3D::new(target.clone(), data)
}

/// Nearest-neighbour label resampling; never produces labels absent from the source.
pub fn resample_labels(src: &LabelMap, target: &Grid) -> Result<LabelMap> {
    resample_labels_with(src, target, Execution::default())
}

pub fn resample_labels_with(src: &LabelMap, target: &Grid, exec: Execution) -> Result<LabelMap> {
    let map = IndexMap::new(src.grid(), target)?;
    let g = src.grid();
    let data = map_slices(target, exec, |i, j, k| match map.nearest(map.source_index(i, j, k)) {
        Some([a, b, c]) => src.data()[g.index(a, b, c)],
        None => 0,
    });
    LabelMap::new(target.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_dims() {
        let g = Grid::axis_aligned([64, 64, 64], [3.0; 3]).unwrap();
        assert_eq!(build_target_grid(&g, 1.5).unwrap().grid().dims(), [128; 3]);
        assert_eq!(build_target_grid(&g, 3.0).unwrap().grid().dims(), [64; 3]);
        let g = Grid::axis_aligned([512, 512, 280], [0.8, 0.8, 1.0]).unwrap();
        assert_eq!(build_target_grid(&g, 1.5).unwrap().grid().dims(), [274, 274, 187]);
        assert!(build_target_grid(&g, 0.0).is_err());
    }

    #[test]
    fn target_keeps_orientation_and_origin() {
        let mut affine = Matrix4::identity();
        affine[(0, 0)] = -0.8;
        affine[(1, 1)] = -0.8;
        affine[(2, 2)] = 2.0;
        affine[(0, 3)] = 100.0;
        affine[(2, 3)] = -50.0;
        let g = Grid::new([10, 10, 10], [0.8, 0.8, 2.0], affine).unwrap();
        let t = build_target_grid(&g, 1.5).unwrap();
        let a = t.grid().affine();
        assert_eq!((a[(0, 0)], a[(1, 1)], a[(2, 2)]), (-1.5, -1.5, 1.5));
        assert_eq!(t.grid().voxel_to_world([0.0; 3]), g.voxel_to_world([0.0; 3]));
    }

    #[test]
    fn half_ties_round_away_from_zero() {
        let src = Grid::axis_aligned([4, 1, 1], [1.0; 3]).unwrap();
        let map = IndexMap::new(&src, &src).unwrap();
        assert_eq!(map.nearest([1.5, 0.0, 0.0]), Some([2, 0, 0]));
        assert_eq!(map.nearest([-0.5, 0.0, 0.0]), Some([0, 0, 0]));
        assert_eq!(map.nearest([-1.5, 0.0, 0.0]), None);
    }

    #[test]
    fn out_of_bounds_fill() {
        let src = Grid::axis_aligned([2, 2, 2], [1.0; 3]).unwrap();
        let vol = Volume3D::filled(src, 40.0);
        let far = Grid::with_origin([2, 2, 2], [1.0; 3], [10.0, 0.0, 0.0]).unwrap();
        let out = resample_volume(&vol, &far, Interpolation::Trilinear).unwrap();
        assert!(out.data().iter().all(|&v| v == SCALAR_FILL_HU));
    }

    #[test]
    fn trilinear_midpoint() {
        let src = Grid::axis_aligned([2, 1, 1], [2.0, 1.0, 1.0]).unwrap();
        let vol = Volume3D::new(src, vec![0.0, 100.0]).unwrap();
        let t = Grid::axis_aligned([3, 1, 1], [1.0; 3]).unwrap();
        let out = resample_volume(&vol, &t, Interpolation::Trilinear).unwrap();
        assert_eq!(out.data(), &[0.0, 50.0, 100.0]);
    }
}

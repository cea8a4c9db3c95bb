//! Label-map algebra: merging per-part model outputs, binary masks, connected
//! components and per-rib instance splitting.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par::{map_slice, Execution};
use crate::taxonomy::StructureRegistry;
use crate::volume::{linear_part, BinaryMask, Grid, LabelMap};

/// Default connectivity for bone instances.
pub const BONE_CONNECTIVITY: Connectivity = Connectivity::TwentySix;
/// Ribs per side.
pub const RIBS_PER_SIDE: usize = 12;
/// Components below this volume are treated as fragments.
pub const FRAGMENT_MAX_ML: f64 = 0.2;
/// Fragments closer than this to a rib are merged into it, otherwise dropped.
pub const FRAGMENT_BRIDGE_MM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets that precede a voxel in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan >= 1,
                    };
                    let before = (dz, dy, dx) < (0, 0, 0);
                    if keep && before {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub map: LabelMap,
    /// Voxels labelled by more than one part; the lowest part index wins.
    pub conflicts: usize,
}

/// Combine per-part label maps into one. `parts[i]` is model part `i + 1`
/// and may only contain IDs the registry assigns to that part.
pub fn merge_parts(parts: &[LabelMap], registry: &StructureRegistry) -> Result<MergeOutcome> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("merge_parts needs at least one part"))?;
    if parts.len() > crate::taxonomy::NUM_PARTS as usize {
        return Err(Error::invalid(format!("at most {} parts, got {}", crate::taxonomy::NUM_PARTS, parts.len())));
    }
    for (i, p) in parts.iter().enumerate() {
        first.grid().ensure_matches(p.grid(), &format!("part {}", i + 1))?;
        let part_no = (i + 1) as u8;
        for id in p.label_set().into_iter().filter(|&v| v != 0) {
            let owner = registry.by_id(id)?.part;
            if owner != part_no {
                return Err(Error::invalid(format!(
                    "part {part_no} contains ID {id} which belongs to part {owner}"
                )));
            }
        }
    }
    let mut out = vec![0u16; first.grid().len()];
    let mut conflicts = 0;
    for p in parts {
        for (o, &v) in out.iter_mut().zip(p.data()) {
            if v != 0 {
                if *o == 0 {
                    *o = v;
                } else {
                    conflicts += 1;
                }
            }
        }
    }
    Ok(MergeOutcome {
        map: LabelMap::new(first.grid().clone(), out)?,
        conflicts,
    })
}

pub fn extract_mask(map: &LabelMap, id: u16) -> BinaryMask {
    let data = map.data().iter().map(|&v| v == id).collect();
    BinaryMask::new(map.grid().clone(), data).expect("same grid")
}

/// Masks for several IDs at once.
pub fn extract_masks(map: &LabelMap, ids: &[u16], exec: Execution) -> Vec<BinaryMask> {
    map_slice(exec, ids, |&id| extract_mask(map, id))
}

/// Connected components with labels `1..=count`, numbered in raster order of
/// each component's first voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabeling {
    grid: Grid,
    labels: Vec<u32>,
    count: usize,
}

impl InstanceLabeling {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Voxel count per instance; index 0 is instance 1.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                s[l as usize - 1] += 1;
            }
        }
        s
    }

    pub fn mask(&self, instance: u32) -> BinaryMask {
        let data = self.labels.iter().map(|&l| l == instance).collect();
        BinaryMask::new(self.grid.clone(), data).expect("same grid")
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labelling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> InstanceLabeling {
    let grid = mask.grid().clone();
    let [nx, ny, nz] = grid.dims();
    let offsets = connectivity.backward_offsets();
    let data = mask.data();
    let mut provisional = vec![0u32; data.len()];
    let mut uf = UnionFind::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = grid.index(i, j, k);
                if !data[idx] {
                    continue;
                }
                let mut label = 0u32;
                for [dx, dy, dz] in &offsets {
                    let (x, y, z) = (i as isize + dx, j as isize + dy, k as isize + dz);
                    if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize {
                        continue;
                    }
                    let n = provisional[grid.index(x as usize, y as usize, z as usize)];
                    if n != 0 {
                        label = if label == 0 { uf.find(n) } else { uf.union(label, n) };
                    }
                }
                provisional[idx] = if label == 0 { uf.make() } else { label };
            }
        }
    }
    // Roots are minimal provisional ids, and provisional ids grow in raster
    // order, so numbering roots on first sight gives the canonical order.
    let mut canonical = vec![0u32; uf.parent.len()];
    let mut count = 0u32;
    let labels = provisional
        .iter()
        .map(|&p| {
            if p == 0 {
                return 0;
            }
            let root = uf.find(p) as usize;
            if canonical[root] == 0 {
                count += 1;
                canonical[root] = count;
            }
            canonical[root]
        })
        .collect();
    InstanceLabeling {
        grid,
        labels,
        count: count as usize,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RibSplitOptions {
    pub fragment_max_ml: f64,
    pub bridge_mm: f64,
    pub max_ribs: usize,
}

impl Default for RibSplitOptions {
    fn default() -> Self {
        RibSplitOptions {
            fragment_max_ml: FRAGMENT_MAX_ML,
            bridge_mm: FRAGMENT_BRIDGE_MM,
            max_ribs: RIBS_PER_SIDE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rib {
    /// 1 is the most cranial rib present.
    pub number: u8,
    pub mask: BinaryMask,
    pub centroid_world: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct RibSplit {
    pub side: Side,
    pub ribs: Vec<Rib>,
    pub warnings: Vec<String>,
}

impl RibSplit {
    /// Registry ID of each rib, e.g. "rib left 1".
    pub fn structure_ids(&self, registry: &StructureRegistry) -> Result<Vec<u16>> {
        self.ribs
            .iter()
            .map(|r| {
                registry
                    .lookup(&format!("rib {} {}", self.side.as_str(), r.number))
                    .map(|s| s.id)
            })
            .collect()
    }
}

/// Split a one-sided rib mask into numbered ribs.
///
/// Components (26-connected) smaller than `fragment_max_ml` are attached to the
/// nearest larger component within `bridge_mm` (voxel-center distance in world
/// mm, ties to the lower component), or dropped with a warning. The remaining
/// components are numbered by descending world-z centroid; more than
/// `max_ribs` is an error.
pub fn split_rib_instances(mask: &BinaryMask, side: Side, opts: RibSplitOptions) -> Result<RibSplit> {
    let grid = mask.grid();
    let cc = connected_components(mask, BONE_CONNECTIVITY);
    let sizes = cc.sizes();
    let voxel_ml = grid.voxel_volume_mm3() / 1000.0;
    let is_large: Vec<bool> = sizes.iter().map(|&s| s as f64 * voxel_ml >= opts.fragment_max_ml).collect();

    // owner[c] = final component (0-based) of component c, or None if dropped
    let mut owner: Vec<Option<usize>> = (0..cc.count()).map(|c| is_large[c].then_some(c)).collect();
    let mut warnings = Vec::new();

    let fragments: Vec<usize> = (0..cc.count()).filter(|&c| !is_large[c]).collect();
    if !fragments.is_empty() {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); cc.count()];
        for (idx, &l) in cc.labels().iter().enumerate() {
            if l > 0 {
                members[l as usize - 1].push(idx);
            }
        }
        let lin = linear_part(grid.affine());
        let dims = grid.dims();
        let spacing = grid.spacing();
        let reach = spacing.map(|s| (opts.bridge_mm / s).ceil() as isize);
        for &frag in &fragments {
            let mut best: Option<(f64, usize)> = None;
            for &idx in &members[frag] {
                let [i, j, k] = grid.coords(idx);
                for dz in -reach[2]..=reach[2] {
                    for dy in -reach[1]..=reach[1] {
                        for dx in -reach[0]..=reach[0] {
                            let (x, y, z) = (i as isize + dx, j as isize + dy, k as isize + dz);
                            if x < 0 || y < 0 || z < 0 {
                                continue;
                            }
                            let (x, y, z) = (x as usize, y as usize, z as usize);
                            if x >= dims[0] || y >= dims[1] || z >= dims[2] {
                                continue;
                            }
                            let l = cc.labels()[grid.index(x, y, z)];
                            if l == 0 || !is_large[l as usize - 1] {
                                continue;
                            }
                            let d = lin * nalgebra::Vector3::new(dx as f64, dy as f64, dz as f64);
                            let dist = d.norm();
                            let cand = (dist, l as usize - 1);
                            if dist <= opts.bridge_mm
                                && best.is_none_or(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1))
                            {
                                best = Some(cand);
                            }
                        }
                    }
                }
            }
            match best {
                Some((_, target)) => owner[frag] = Some(target),
                None => warnings.push(format!(
                    "dropped {} side fragment of {:.3} ml with no rib within {} mm",
                    side.as_str(),
                    sizes[frag] as f64 * voxel_ml,
                    opts.bridge_mm
                )),
            }
        }
    }

    let kept: Vec<usize> = (0..cc.count()).filter(|&c| is_large[c]).collect();
    if kept.len() > opts.max_ribs {
        return Err(Error::invalid(format!(
            "{} {} rib components after fragment suppression (max {}); input looks fragmented",
            kept.len(),
            side.as_str(),
            opts.max_ribs
        )));
    }

    let mut masks: Vec<Vec<bool>> = vec![vec![false; grid.len()]; cc.count()];
    let mut sums = vec![[0.0f64; 4]; cc.count()];
    for (idx, &l) in cc.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        if let Some(o) = owner[l as usize - 1] {
            masks[o][idx] = true;
            let [i, j, k] = grid.coords(idx);
            let s = &mut sums[o];
            s[0] += i as f64;
            s[1] += j as f64;
            s[2] += k as f64;
            s[3] += 1.0;
        }
    }
    let mut ribs: Vec<(usize, [f64; 3])> = kept
        .iter()
        .map(|&c| {
            let s = sums[c];
            let centroid = grid.voxel_to_world([s[0] / s[3], s[1] / s[3], s[2] / s[3]]);
            (c, centroid)
        })
        .collect();
    ribs.sort_by(|a, b| b.1[2].total_cmp(&a.1[2]).then(a.0.cmp(&b.0)));
    let ribs = ribs
        .into_iter()
        .enumerate()
        .map(|(n, (c, centroid_world))| {
            Ok(Rib {
                number: (n + 1) as u8,
                mask: BinaryMask::new(grid.clone(), std::mem::take(&mut masks[c]))?,
                centroid_world,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RibSplit { side, ribs, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: [usize; 3]) -> Grid {
        Grid::axis_aligned(n, [1.0; 3]).unwrap()
    }

    fn fill_box(mask: &mut BinaryMask, lo: [usize; 3], hi: [usize; 3]) {
        let g = mask.grid().clone();
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    mask.data_mut()[g.index(i, j, k)] = true;
                }
            }
        }
    }

    #[test]
    fn two_cubes() {
        let mut m = BinaryMask::empty(grid([10, 10, 10]));
        fill_box(&mut m, [0, 0, 0], [3, 3, 3]);
        fill_box(&mut m, [5, 5, 5], [8, 8, 8]);
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.count(), 2);
        assert_eq!(cc.sizes(), vec![27, 27]);
        assert_eq!(connected_components(&BinaryMask::empty(grid([4, 4, 4])), Connectivity::TwentySix).count(), 0);
    }

    #[test]
    fn diagonal_contact_depends_on_connectivity() {
        let mut m = BinaryMask::empty(grid([3, 3, 3]));
        fill_box(&mut m, [0, 0, 0], [1, 1, 1]);
        fill_box(&mut m, [1, 1, 1], [2, 2, 2]);
        assert_eq!(connected_components(&m, Connectivity::Six).count(), 2);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count(), 1);
    }

    #[test]
    fn merge_first_part_wins() {
        let reg = StructureRegistry::global();
        let g = grid([4, 1, 1]);
        let empty = LabelMap::empty(g.clone());
        let p2 = LabelMap::new(g.clone(), vec![22, 0, 0, 0]).unwrap();
        let p4 = LabelMap::new(g.clone(), vec![64, 64, 0, 0]).unwrap();
        let out = merge_parts(&[empty.clone(), p2, empty.clone(), p4, empty.clone()], reg).unwrap();
        assert_eq!(out.map.data(), &[22, 64, 0, 0]);
        assert_eq!(out.conflicts, 1);
    }

    #[test]
    fn merge_rejects_foreign_ids_and_mismatched_grids() {
        let reg = StructureRegistry::global();
        let g = grid([2, 1, 1]);
        let wrong = LabelMap::new(g.clone(), vec![30, 0]).unwrap();
        assert!(merge_parts(&[wrong], reg).is_err());
        let a = LabelMap::empty(g);
        let b = LabelMap::empty(grid([3, 1, 1]));
        assert!(matches!(merge_parts(&[a, b], reg), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn mask_partition() {
        let g = grid([5, 1, 1]);
        let map = LabelMap::new(g, vec![1, 2, 0, 2, 104]).unwrap();
        let total: usize = (1..=104).map(|id| extract_mask(&map, id).count()).sum();
        assert_eq!(total, 4);
        assert!(extract_mask(&map, 7).is_empty());
        let restricted = extract_mask(&map, 2).to_labelmap(2).unwrap();
        assert_eq!(restricted.data(), &[0, 2, 0, 2, 0]);
    }
}

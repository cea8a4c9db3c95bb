//! Synthetic CT/label phantoms with analytically known volumes and HU, and
//! synthetic cohorts with planted linear age trends.
//!
//! Shapes are rasterized by voxel center (a voxel belongs to a shape when its
//! world-space center lies inside, boundary included). Background is −1024 HU.
//! Noise for slice `k` comes from ChaCha8 seeded with the spec seed on stream
//! `k`, so output does not depend on the thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphometry::Sex;
use crate::par::{map_range, map_slice, Execution};
use crate::resample::SCALAR_FILL_HU;
use crate::stats::derive_seed;
use crate::taxonomy::StructureRegistry;
use crate::volume::{Grid, LabelMap, Volume3D};

/// Structure given by ID or by (case- and accent-insensitive) name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructureKey {
    Id(u16),
    Name(String),
}

impl StructureKey {
    pub fn resolve(&self, registry: &StructureRegistry) -> Result<u16> {
        match self {
            StructureKey::Id(id) => registry.by_id(*id).map(|s| s.id),
            StructureKey::Name(n) => registry.lookup(n).map(|s| s.id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "geometry", rename_all = "lowercase")]
pub enum Geometry {
    Sphere { radius_mm: f64 },
    Box { size_mm: [f64; 3] },
}

impl Geometry {
    pub fn volume_mm3(&self) -> f64 {
        match *self {
            Geometry::Sphere { radius_mm: r } => 4.0 / 3.0 * PI * r * r * r,
            Geometry::Box { size_mm: s } => s[0] * s[1] * s[2],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Geometry::Sphere { radius_mm } => radius_mm.is_finite() && radius_mm > 0.0,
            Geometry::Box { size_mm } => size_mm.iter().all(|s| s.is_finite() && *s > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("shape sizes must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub structure: StructureKey,
    #[serde(flatten)]
    pub geometry: Geometry,
    pub center_mm: [f64; 3],
    pub hu: f64,
}

impl Shape {
    #[inline]
    fn contains(&self, p: [f64; 3]) -> bool {
        let c = self.center_mm;
        match self.geometry {
            Geometry::Sphere { radius_mm: r } => {
                let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
            }
            Geometry::Box { size_mm: s } => (0..3).all(|a| (p[a] - c[a]).abs() <= 0.5 * s[a]),
        }
    }

    /// Conservative closed-set intersection test.
    fn overlaps(&self, other: &Shape) -> bool {
        use Geometry::*;
        let (a, b) = (self.center_mm, other.center_mm);
        match (self.geometry, other.geometry) {
            (Sphere { radius_mm: r1 }, Sphere { radius_mm: r2 }) => {
                let d2: f64 = (0..3).map(|i| (a[i] - b[i]).powi(2)).sum();
                d2 <= (r1 + r2).powi(2)
            }
            (Box { size_mm: s1 }, Box { size_mm: s2 }) => {
                (0..3).all(|i| (a[i] - b[i]).abs() <= 0.5 * (s1[i] + s2[i]))
            }
            (Sphere { radius_mm: r }, Box { size_mm: s }) => sphere_box(a, r, b, s),
            (Box { size_mm: s }, Sphere { radius_mm: r }) => sphere_box(b, r, a, s),
        }
    }
}

fn sphere_box(c: [f64; 3], r: f64, b: [f64; 3], s: [f64; 3]) -> bool {
    let d2: f64 = (0..3)
        .map(|i| {
            let gap = (c[i] - b[i]).abs() - 0.5 * s[i];
            if gap > 0.0 {
                gap * gap
            } else {
                0.0
            }
        })
        .sum();
    d2 <= r * r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    #[serde(default)]
    pub origin_mm: [f64; 3],
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::with_origin(self.dims, self.spacing_mm, self.origin_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: GridSpec,
    pub shapes: Vec<Shape>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    /// Resolve structure IDs and check sizes, noise and overlaps.
    pub fn validate(&self, registry: &StructureRegistry) -> Result<Vec<u16>> {
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid(format!("noise_sd must be non-negative, got {}", self.noise_sd)));
        }
        let mut ids = Vec::with_capacity(self.shapes.len());
        for (i, s) in self.shapes.iter().enumerate() {
            s.geometry.validate()?;
            if !s.hu.is_finite() || s.center_mm.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("shape {i} has non-finite center or HU")));
            }
            ids.push(s.structure.resolve(registry)?);
        }
        for i in 0..self.shapes.len() {
            for j in i + 1..self.shapes.len() {
                if self.shapes[i].overlaps(&self.shapes[j]) {
                    return Err(Error::invalid(format!("shapes {i} and {j} overlap")));
                }
            }
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeTruth {
    pub id: u16,
    pub name: String,
    pub analytic_volume_ml: f64,
    pub hu: f64,
    pub voxel_count: usize,
    pub rasterized_volume_ml: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ct: Volume3D,
    pub labels: LabelMap,
    pub truth: Vec<ShapeTruth>,
}

pub fn generate(spec: &PhantomSpec, registry: &StructureRegistry) -> Result<Phantom> {
    generate_with(spec, registry, Execution::default())
}

pub fn generate_with(spec: &PhantomSpec, registry: &StructureRegistry, exec: Execution) -> Result<Phantom> {
    let ids = spec.validate(registry)?;
    let grid = spec.grid.build()?;
    let [nx, ny, nz] = grid.dims();
    let noise = (spec.noise_sd > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sd).map_err(|e| Error::invalid(e.to_string())))
        .transpose()?;
    let slices = map_range(exec, nz, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(k as u64);
        let mut labels = Vec::with_capacity(nx * ny);
        let mut ct = Vec::with_capacity(nx * ny);
        let mut counts = vec![0usize; spec.shapes.len()];
        for j in 0..ny {
            for i in 0..nx {
                let p = grid.voxel_to_world([i as f64, j as f64, k as f64]);
                match spec.shapes.iter().position(|s| s.contains(p)) {
                    Some(s) => {
                        labels.push(ids[s]);
                        counts[s] += 1;
                        let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                        ct.push(spec.shapes[s].hu + n);
                    }
                    None => {
                        labels.push(0);
                        ct.push(SCALAR_FILL_HU);
                    }
                }
            }
        }
        (labels, ct, counts)
    });
    let mut label_data = Vec::with_capacity(grid.len());
    let mut ct_data = Vec::with_capacity(grid.len());
    let mut counts = vec![0usize; spec.shapes.len()];
    for (l, c, n) in slices {
        label_data.extend(l);
        ct_data.extend(c);
        for (t, x) in counts.iter_mut().zip(n) {
            *t += x;
        }
    }
    let voxel_ml = grid.voxel_volume_mm3() / 1000.0;
    let truth = spec
        .shapes
        .iter()
        .zip(&ids)
        .zip(counts)
        .map(|((s, &id), count)| {
            ShapeTruth {
                id,
                name: registry.by_id(id).map(|s| s.name.clone()).unwrap_or_default(),
                analytic_volume_ml: s.geometry.volume_mm3() / 1000.0,
                hu: s.hu,
                voxel_count: count,
                rasterized_volume_ml: count as f64 * voxel_ml,
            }
        })
        .collect();
    Ok(Phantom {
        ct: Volume3D::new(grid.clone(), ct_data)?,
        labels: LabelMap::new(grid, label_data)?,
        truth,
    })
}

/// A planted linear age trend for one sphere-shaped structure. Values are
/// given at `REFERENCE_AGE` and change linearly with age, plus Gaussian
/// subject-level noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub structure: StructureKey,
    pub center_mm: [f64; 3],
    pub volume_ml: f64,
    #[serde(default)]
    pub volume_slope_ml_per_year: f64,
    #[serde(default)]
    pub volume_sd_ml: f64,
    pub hu: f64,
    #[serde(default)]
    pub hu_slope_per_year: f64,
    #[serde(default)]
    pub hu_sd: f64,
}

pub const REFERENCE_AGE: f64 = 50.0;
pub const AGE_RANGE: (f64, f64) = (18.0, 100.0);
pub const MIN_COHORT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub grid: GridSpec,
    pub trends: Vec<Trend>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortMember {
    pub patient_id: String,
    pub age: f64,
    pub sex: Sex,
    pub spec: PhantomSpec,
}

/// Draw `n` subjects with ages uniform on [18, 100) and one sphere per trend.
/// Subject `i` uses seed `derive_seed(seed, i)`.
pub fn generate_cohort(spec: &CohortSpec, registry: &StructureRegistry) -> Result<Vec<CohortMember>> {
    if spec.n < MIN_COHORT {
        return Err(Error::invalid(format!("cohort needs n ≥ {MIN_COHORT}, got {}", spec.n)));
    }
    for t in &spec.trends {
        t.structure.resolve(registry)?;
        let finite = [t.volume_ml, t.volume_slope_ml_per_year, t.volume_sd_ml, t.hu, t.hu_slope_per_year, t.hu_sd]
            .iter()
            .all(|v| v.is_finite());
        if !finite || t.volume_sd_ml < 0.0 || t.hu_sd < 0.0 {
            return Err(Error::invalid(format!("invalid trend for {:?}", t.structure)));
        }
    }
    let width = spec.n.to_string().len();
    let indices: Vec<usize> = (0..spec.n).collect();
    let members = map_slice(Execution::Sequential, &indices, |&i| {
        let seed = derive_seed(spec.seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let age = rng.random_range(AGE_RANGE.0..AGE_RANGE.1);
        let sex = if rng.random_bool(0.5) { Sex::Female } else { Sex::Male };
        let dt = age - REFERENCE_AGE;
        let shapes = spec
            .trends
            .iter()
            .map(|t| {
                let mut v = t.volume_ml + t.volume_slope_ml_per_year * dt;
                if t.volume_sd_ml > 0.0 {
                    v += t.volume_sd_ml * gaussian(&mut rng);
                }
                let mut hu = t.hu + t.hu_slope_per_year * dt;
                if t.hu_sd > 0.0 {
                    hu += t.hu_sd * gaussian(&mut rng);
                }
                let v_mm3 = v.max(1e-3) * 1000.0;
                Shape {
                    structure: t.structure.clone(),
                    geometry: Geometry::Sphere {
                        radius_mm: (3.0 * v_mm3 / (4.0 * PI)).cbrt(),
                    },
                    center_mm: t.center_mm,
                    hu,
                }
            })
            .collect();
        CohortMember {
            patient_id: format!("case{:0width$}", i + 1),
            age,
            sex,
            spec: PhantomSpec {
                grid: spec.grid.clone(),
                shapes,
                noise_sd: spec.noise_sd,
                seed,
            },
        }
    });
    Ok(members)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

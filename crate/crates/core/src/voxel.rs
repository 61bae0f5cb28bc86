//! Radiation voxel map: pooled-mean fusion of count measurements, a log-scale
//! colormap, and cube-per-voxel mesh extraction.

use crate::geodesy::LocalEnu;
use crate::radiation::RadiationMeasurement;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VoxelError {
    #[error("voxel index {0:?} is outside the grid")]
    IndexOutOfBounds([usize; 3]),
    #[error("revision {requested} is ahead of the grid revision {current}")]
    RevisionAhead { requested: u64, current: u64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("invalid colormap: {0}")]
    InvalidColormap(&'static str),
}

/// Grid geometry: min corner, cubic voxel edge and dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_enu: LocalEnu,
    pub resolution_m: f64,
    pub dims: [usize; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::centered(2.0, [100, 100, 30])
    }
}

impl GridSpec {
    /// A grid whose center voxel is centered on the mission origin.
    pub fn centered(resolution_m: f64, dims: [usize; 3]) -> Self {
        let corner = |n: usize| -((n / 2) as f64 + 0.5) * resolution_m;
        Self {
            origin_enu: LocalEnu::new(corner(dims[0]), corner(dims[1]), corner(dims[2])),
            resolution_m,
            dims,
        }
    }

    pub fn validate(&self) -> Result<(), VoxelError> {
        if !(self.resolution_m.is_finite() && self.resolution_m > 0.0) {
            return Err(VoxelError::InvalidGrid("resolution must be > 0"));
        }
        if self.dims.contains(&0) {
            return Err(VoxelError::InvalidGrid("dimensions must be positive"));
        }
        if self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none_or(|n| n > u32::MAX as usize / 8) {
            return Err(VoxelError::InvalidGrid("too many voxels"));
        }
        if !self.origin_enu.is_finite() {
            return Err(VoxelError::InvalidGrid("origin must be finite"));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Voxel containing `p`, or `None` outside the grid. Cells are half-open.
    pub fn locate(&self, p: &LocalEnu) -> Option<[usize; 3]> {
        let rel = *p - self.origin_enu;
        let mut idx = [0usize; 3];
        for (axis, c) in rel.to_array().into_iter().enumerate() {
            let cell = (c / self.resolution_m).floor();
            if !cell.is_finite() || cell < 0.0 || cell >= self.dims[axis] as f64 {
                return None;
            }
            idx[axis] = cell as usize;
        }
        Some(idx)
    }

    /// Linear index with x varying fastest.
    pub fn flat(&self, idx: [usize; 3]) -> Option<usize> {
        let [nx, ny, nz] = self.dims;
        (idx[0] < nx && idx[1] < ny && idx[2] < nz).then(|| idx[0] + nx * (idx[1] + ny * idx[2]))
    }

    pub fn unflat(&self, flat: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [flat % nx, (flat / nx) % ny, flat / (nx * ny)]
    }

    pub fn min_corner(&self, idx: [usize; 3]) -> LocalEnu {
        let r = self.resolution_m;
        self.origin_enu + LocalEnu::new(idx[0] as f64 * r, idx[1] as f64 * r, idx[2] as f64 * r)
    }

    pub fn center(&self, idx: [usize; 3]) -> LocalEnu {
        let h = self.resolution_m / 2.0;
        self.min_corner(idx) + LocalEnu::new(h, h, h)
    }
}

/// Per-voxel sums. Both are integers so that fusion is exactly
/// commutative; exposure is kept in whole nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoxelAccumulator {
    pub counts_sum: u64,
    pub exposure_ns: u64,
    /// Grid revision of the last insert into this voxel; 0 when never touched.
    pub modified_at: u64,
}

impl VoxelAccumulator {
    pub fn exposure_s(&self) -> f64 {
        self.exposure_ns as f64 / 1e9
    }

    pub fn rate(&self) -> Option<f64> {
        (self.exposure_ns > 0).then(|| self.counts_sum as f64 / self.exposure_s())
    }
}

fn seconds_to_ns(dt: f64) -> u64 {
    (dt * 1e9).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Fused([usize; 3]),
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelDelta {
    pub index: [usize; 3],
    pub rate: f64,
    pub exposure_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    cells: Vec<VoxelAccumulator>,
    observed: BTreeSet<usize>,
    revision: u64,
    ignored: u64,
}

impl VoxelGrid {
    pub fn new(spec: GridSpec) -> Result<Self, VoxelError> {
        spec.validate()?;
        Ok(Self {
            spec,
            cells: vec![VoxelAccumulator::default(); spec.voxel_count()],
            observed: BTreeSet::new(),
            revision: 0,
            ignored: 0,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Number of fused inserts so far.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Measurements dropped for falling outside the grid (or being invalid).
    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn observed_count(&self) -> usize {
        self.observed.len()
    }

    pub fn insert_measurement(&mut self, m: &RadiationMeasurement) -> InsertOutcome {
        let located = if m.is_valid() && seconds_to_ns(m.integration_dt_s) > 0 {
            self.spec.locate(&m.position)
        } else {
            None
        };
        let Some(idx) = located else {
            self.ignored += 1;
            return InsertOutcome::Ignored;
        };
        let flat = self.spec.flat(idx).expect("located voxel is in bounds");
        self.revision += 1;
        let cell = &mut self.cells[flat];
        cell.counts_sum += m.counts;
        cell.exposure_ns += seconds_to_ns(m.integration_dt_s);
        cell.modified_at = self.revision;
        self.observed.insert(flat);
        InsertOutcome::Fused(idx)
    }

    pub fn accumulator(&self, idx: [usize; 3]) -> Result<&VoxelAccumulator, VoxelError> {
        let flat = self.spec.flat(idx).ok_or(VoxelError::IndexOutOfBounds(idx))?;
        Ok(&self.cells[flat])
    }

    /// Pooled-mean rate in counts/s; `Ok(None)` for a voxel never observed.
    pub fn voxel_rate(&self, idx: [usize; 3]) -> Result<Option<f64>, VoxelError> {
        Ok(self.accumulator(idx)?.rate())
    }

    /// Observed voxels in x-fastest order with their accumulators.
    pub fn observed(&self) -> impl Iterator<Item = ([usize; 3], &VoxelAccumulator)> + '_ {
        self.observed.iter().map(|&f| (self.spec.unflat(f), &self.cells[f]))
    }

    /// Voxels touched after `revision`, each once with its latest values.
    pub fn delta_since(&self, revision: u64) -> Result<Vec<VoxelDelta>, VoxelError> {
        if revision > self.revision {
            return Err(VoxelError::RevisionAhead { requested: revision, current: self.revision });
        }
        Ok(self
            .observed()
            .filter(|(_, c)| c.modified_at > revision)
            .filter_map(|(index, c)| c.rate().map(|rate| VoxelDelta { index, rate, exposure_s: c.exposure_s() }))
            .collect())
    }

    /// (flat index, counts, exposure ns) of every observed voxel; equal
    /// tables mean equal fused state regardless of insertion order.
    pub fn accumulator_table(&self) -> Vec<(usize, u64, u64)> {
        self.observed.iter().map(|&f| (f, self.cells[f].counts_sum, self.cells[f].exposure_ns)).collect()
    }
}

/// Receiver-side copy of a grid rebuilt purely from streamed deltas.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoxelMirror {
    voxels: BTreeMap<usize, VoxelDelta>,
    dims: [usize; 3],
    revision: u64,
}

impl VoxelMirror {
    pub fn new(dims: [usize; 3]) -> Self {
        Self { voxels: BTreeMap::new(), dims, revision: 0 }
    }

    /// Applies one delta batch. Later values for a voxel replace earlier ones,
    /// so re-applying a batch is a no-op.
    pub fn apply(&mut self, revision: u64, deltas: &[VoxelDelta]) -> Result<(), VoxelError> {
        let [nx, ny, nz] = self.dims;
        for d in deltas {
            let [x, y, z] = d.index;
            if x >= nx || y >= ny || z >= nz {
                return Err(VoxelError::IndexOutOfBounds(d.index));
            }
            self.voxels.insert(x + nx * (y + ny * z), *d);
        }
        self.revision = self.revision.max(revision);
        Ok(())
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// All voxels in x-fastest order, comparable with `VoxelGrid::delta_since(0)`.
    pub fn snapshot(&self) -> Vec<VoxelDelta> {
        self.voxels.values().copied().collect()
    }
}

/// Log10 colormap with piecewise-linear RGBA anchors on t in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColormapSpec {
    pub rate_min: f64,
    pub rate_max: f64,
    pub anchors: Vec<(f64, [u8; 4])>,
}

pub const BLUE: [u8; 4] = [0, 0, 255, 200];
pub const GREEN: [u8; 4] = [0, 255, 0, 200];
pub const RED: [u8; 4] = [255, 0, 0, 200];

impl Default for ColormapSpec {
    fn default() -> Self {
        Self { rate_min: 0.1, rate_max: 1000.0, anchors: vec![(0.0, BLUE), (0.5, GREEN), (1.0, RED)] }
    }
}

impl ColormapSpec {
    pub fn validate(&self) -> Result<(), VoxelError> {
        if !(self.rate_min.is_finite() && self.rate_min > 0.0 && self.rate_max.is_finite() && self.rate_max > self.rate_min) {
            return Err(VoxelError::InvalidColormap("domain must satisfy 0 < rate_min < rate_max"));
        }
        if self.anchors.len() < 2 {
            return Err(VoxelError::InvalidColormap("need at least two anchors"));
        }
        let first = self.anchors[0].0;
        let last = self.anchors[self.anchors.len() - 1].0;
        if first != 0.0 || last != 1.0 || self.anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(VoxelError::InvalidColormap("anchors must increase strictly from t=0 to t=1"));
        }
        Ok(())
    }

    /// Gradient parameter of `rate`: log10 position within the domain, clamped.
    pub fn parameter(&self, rate: f64) -> f64 {
        if rate.is_nan() || rate <= self.rate_min {
            return 0.0;
        }
        if rate >= self.rate_max {
            return 1.0;
        }
        let lo = self.rate_min.log10();
        let hi = self.rate_max.log10();
        ((rate.log10() - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn colorize(&self, rate: f64) -> [u8; 4] {
        self.color_at(self.parameter(rate))
    }

    fn color_at(&self, t: f64) -> [u8; 4] {
        let anchors = &self.anchors;
        if t <= anchors[0].0 {
            return anchors[0].1;
        }
        let segment = anchors.windows(2).find(|w| t <= w[1].0);
        let Some([(t0, c0), (t1, c1)]) = segment.map(|w| [w[0], w[1]]) else {
            return anchors[anchors.len() - 1].1;
        };
        if t == t1 {
            return c1;
        }
        let s = (t - t0) / (t1 - t0);
        std::array::from_fn(|ch| {
            let a = c0[ch] as f64;
            let b = c1[ch] as f64;
            // f64::round rounds half away from zero.
            (a + (b - a) * s).round().clamp(0.0, 255.0) as u8
        })
    }
}

/// One cube per voxel, no shared vertices between cubes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredMesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// One color per cube, in the same order as the cubes.
    pub colors: Vec<[u8; 4]>,
    pub source_revision: u64,
}

/// Corner offsets of a unit cube, in emission order.
const CUBE_CORNERS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Outward-facing (counter-clockwise) triangles over `CUBE_CORNERS`.
const CUBE_TRIANGLES: [[u32; 3]; 12] = [
    [0, 2, 1],
    [0, 3, 2], // bottom
    [4, 5, 6],
    [4, 6, 7], // top
    [0, 1, 5],
    [0, 5, 4], // south
    [3, 7, 6],
    [3, 6, 2], // north
    [0, 4, 7],
    [0, 7, 3], // west
    [1, 2, 6],
    [1, 6, 5], // east
];

pub fn extract_mesh(grid: &VoxelGrid, colormap: &ColormapSpec, min_exposure_s: f64) -> ColoredMesh {
    let spec = grid.spec();
    let mut mesh = ColoredMesh { source_revision: grid.revision(), ..Default::default() };
    for (idx, cell) in grid.observed() {
        if cell.exposure_s() < min_exposure_s {
            continue;
        }
        let Some(rate) = cell.rate() else { continue };
        let base = mesh.vertices.len() as u32;
        let corner = spec.min_corner(idx);
        for offset in CUBE_CORNERS {
            mesh.vertices.push([
                (corner.east_m + offset[0] * spec.resolution_m) as f32,
                (corner.north_m + offset[1] * spec.resolution_m) as f32,
                (corner.up_m + offset[2] * spec.resolution_m) as f32,
            ]);
        }
        mesh.triangles.extend(CUBE_TRIANGLES.iter().map(|t| t.map(|i| base + i)));
        mesh.colors.push(colormap.colorize(rate));
    }
    mesh
}

const MESH_MAGIC: &[u8; 4] = b"RMSH";
const MESH_VERSION: u32 = 1;

impl ColoredMesh {
    /// Little-endian binary export: magic, version, source revision (u64),
    /// vertex and triangle counts, then vertices, triangle indices and one
    /// RGBA per cube.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MESH_MAGIC)?;
        w.write_all(&MESH_VERSION.to_le_bytes())?;
        w.write_all(&self.source_revision.to_le_bytes())?;
        w.write_all(&(self.vertices.len() as u32).to_le_bytes())?;
        w.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for v in &self.vertices {
            for c in v {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        for t in &self.triangles {
            for i in t {
                w.write_all(&i.to_le_bytes())?;
            }
        }
        for rgba in &self.colors {
            w.write_all(rgba)?;
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.vertices.len() * 12 + self.triangles.len() * 12 + self.colors.len() * 4);
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads the binary export. The color count is implied: one per 8 vertices.
    pub fn read_binary<R: Read>(mut r: R) -> io::Result<ColoredMesh> {
        let invalid = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MESH_MAGIC {
            return Err(invalid("bad mesh magic"));
        }
        let mut word = || -> io::Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        if word()? != MESH_VERSION {
            return Err(invalid("unsupported mesh version"));
        }
        let source_revision = u64::from(word()?) | (u64::from(word()?) << 32);
        let vertex_count = word()? as usize;
        let triangle_count = word()? as usize;
        if !vertex_count.is_multiple_of(8) {
            return Err(invalid("vertex count is not a multiple of 8"));
        }
        let mut vertices = Vec::with_capacity(vertex_count.min(1 << 20));
        for _ in 0..vertex_count {
            let v = [word()?, word()?, word()?].map(f32::from_bits);
            vertices.push(v);
        }
        let mut triangles = Vec::with_capacity(triangle_count.min(1 << 20));
        for _ in 0..triangle_count {
            let t = [word()?, word()?, word()?];
            if t.iter().any(|&i| i as usize >= vertex_count) {
                return Err(invalid("triangle index out of range"));
            }
            triangles.push(t);
        }
        let mut colors = vec![[0u8; 4]; vertex_count / 8];
        for c in &mut colors {
            r.read_exact(c)?;
        }
        Ok(ColoredMesh { vertices, triangles, colors, source_revision })
    }
}

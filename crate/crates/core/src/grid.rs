//! Geometry and indexing of the multiresolution hash grid.
//!
//! A level with resolution `N` has `N` cells and `N + 1` vertices per axis.
//! Levels whose vertex set fits in the table (`(N + 1)^2 <= T`) are *dense*
//! and index vertices row-major; finer levels fold their vertices onto the
//! table with the XOR spatial hash.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Multiplier applied to the `x` vertex coordinate by [`spatial_hash`].
pub const HASH_PRIME_X: u32 = 1;
/// Multiplier applied to the `y` vertex coordinate by [`spatial_hash`].
pub const HASH_PRIME_Y: u32 = 2_654_435_761;

/// Largest supported interpolation half-order.
pub const MAX_K: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridConfig {
    pub levels: usize,
    pub table_size: usize,
    pub features_per_level: usize,
    pub n_min: u32,
    pub n_max: u32,
    /// Interpolation half-order: 1 is bilinear, 2 is the 16-point cubic stencil.
    pub k: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            levels: 12,
            table_size: 1 << 12,
            features_per_level: 2,
            n_min: 4,
            n_max: 346,
            k: 1,
        }
    }
}

impl GridConfig {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_table_size(mut self, table_size: usize) -> Self {
        self.table_size = table_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.levels < 2 {
            return fail(format!("need at least 2 levels, got {}", self.levels));
        }
        if !self.table_size.is_power_of_two() {
            return fail(format!(
                "table size {} is not a power of two",
                self.table_size
            ));
        }
        if self.table_size > 1 << 30 {
            return fail(format!("table size {} too large", self.table_size));
        }
        if self.levels > 64 {
            return fail(format!("at most 64 levels supported, got {}", self.levels));
        }
        if self.features_per_level == 0 || self.features_per_level > 64 {
            return fail(format!(
                "features_per_level must lie in 1..=64, got {}",
                self.features_per_level
            ));
        }
        if self.n_min == 0 {
            return fail("n_min must be at least 1".into());
        }
        if self.n_max < self.n_min {
            return fail(format!("n_max {} below n_min {}", self.n_max, self.n_min));
        }
        if self.k == 0 || self.k > MAX_K {
            return fail(format!("k must lie in 1..={MAX_K}, got {}", self.k));
        }
        // the 2k-node stencil must fit inside the coarsest vertex row
        if (self.n_min as usize) + 1 < 2 * self.k {
            return fail(format!(
                "n_min {} too coarse for a {}-node stencil",
                self.n_min,
                2 * self.k
            ));
        }
        Ok(())
    }

    /// Width of the concatenated per-level feature vector fed to the decoder.
    pub fn input_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Number of table scalars across all levels.
    pub fn table_len(&self) -> usize {
        self.levels * self.table_size * self.features_per_level
    }

    pub fn growth_factor(&self) -> Result<f64> {
        if self.levels < 2 {
            return Err(Error::InvalidConfig(format!(
                "growth factor undefined for {} levels",
                self.levels
            )));
        }
        let (lo, hi) = (f64::from(self.n_min), f64::from(self.n_max));
        Ok(((hi.ln() - lo.ln()) / (self.levels - 1) as f64).exp())
    }

    /// Per-level resolutions `floor(n_min * b^l)`.
    pub fn resolution_schedule(&self) -> Result<Vec<LevelGeometry>> {
        self.validate()?;
        let b = self.growth_factor()?;
        let schedule = (0..self.levels)
            .map(|level| {
                let v = f64::from(self.n_min) * b.powi(level as i32);
                // exact integers such as the top level land a few ulps low
                let resolution = (v * (1.0 + 1e-9)).floor() as u32;
                LevelGeometry::new(level, resolution, self.table_size)
            })
            .collect();
        Ok(schedule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelGeometry {
    pub level: usize,
    pub resolution: u32,
    pub table_size: usize,
    pub dense: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexIndex {
    pub i: u32,
    pub j: u32,
}

impl VertexIndex {
    pub fn new(i: u32, j: u32) -> Self {
        Self { i, j }
    }
}

/// The four corners of the cell containing a query, with the in-cell offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voxel<T> {
    /// Corners ordered (i0,j0), (i1,j0), (i0,j1), (i1,j1).
    pub corners: [VertexIndex; 4],
    pub fraction: [T; 2],
}

/// `(1*i XOR 2654435761*j) mod T`, computed in wrapping 32-bit arithmetic.
#[inline]
pub fn spatial_hash(vertex: VertexIndex, table_size: usize) -> usize {
    debug_assert!(table_size.is_power_of_two());
    let h = vertex.i.wrapping_mul(HASH_PRIME_X) ^ vertex.j.wrapping_mul(HASH_PRIME_Y);
    (h as usize) & (table_size - 1)
}

/// Rejects coordinates outside `[0, 1]^2` (NaN included).
pub fn check_unit<T: Real>(x: [T; 2]) -> Result<()> {
    let ok = |v: T| v >= T::zero() && v <= T::one();
    if ok(x[0]) && ok(x[1]) {
        Ok(())
    } else {
        Err(Error::CoordinateOutOfRange {
            x: x[0].as_f64(),
            y: x[1].as_f64(),
        })
    }
}

impl LevelGeometry {
    pub fn new(level: usize, resolution: u32, table_size: usize) -> Self {
        let v = resolution as usize + 1;
        Self {
            level,
            resolution,
            table_size,
            dense: v * v <= table_size,
        }
    }

    pub fn vertices_per_axis(&self) -> usize {
        self.resolution as usize + 1
    }

    /// Table entry that stores `vertex`. Dense levels index row-major,
    /// hashed levels go through [`spatial_hash`].
    #[inline]
    pub fn entry_index(&self, vertex: VertexIndex) -> usize {
        if self.dense {
            vertex.i as usize + vertex.j as usize * self.vertices_per_axis()
        } else {
            spatial_hash(vertex, self.table_size)
        }
    }

    pub fn voxel_vertices<T: Real>(&self, x: [T; 2]) -> Result<Voxel<T>> {
        check_unit(x)?;
        let n = self.resolution;
        let scale = T::from_u32(n).unwrap();
        let mut base = [0u32; 2];
        let mut fraction = [T::zero(); 2];
        for axis in 0..2 {
            let u = x[axis] * scale;
            let cell = u.floor().to_u32().unwrap_or(0).min(n - 1);
            base[axis] = cell;
            fraction[axis] = u - T::from_u32(cell).unwrap();
        }
        let [i0, j0] = base;
        let corners = [
            VertexIndex::new(i0, j0),
            VertexIndex::new(i0 + 1, j0),
            VertexIndex::new(i0, j0 + 1),
            VertexIndex::new(i0 + 1, j0 + 1),
        ];
        Ok(Voxel { corners, fraction })
    }

    /// Table entry of every vertex, row `j`, column `i`.
    pub fn index_map(&self) -> IndexMap {
        let side = self.vertices_per_axis();
        let mut entries = Vec::with_capacity(side * side);
        for j in 0..side as u32 {
            for i in 0..side as u32 {
                entries.push(self.entry_index(VertexIndex::new(i, j)) as u32);
            }
        }
        IndexMap { side, entries }
    }
}

/// Row-major grid of table entries, one per level vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    pub side: usize,
    pub entries: Vec<u32>,
}

/// Spatial offset at which the index map repeats, with the fraction of
/// overlapping positions that share an entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepeatOffset {
    pub di: i64,
    pub dj: i64,
    pub match_fraction: f64,
}

impl IndexMap {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.entries[j * self.side + i]
    }

    pub fn distinct(&self) -> usize {
        let mut seen = self.entries.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn is_injective(&self) -> bool {
        self.distinct() == self.entries.len()
    }

    /// Entry index modulo 256, one byte per vertex.
    pub fn to_gray(&self) -> Vec<u8> {
        self.entries.iter().map(|&e| (e % 256) as u8).collect()
    }

    fn match_fraction(&self, di: i64, dj: i64, rows: std::ops::Range<usize>) -> f64 {
        let n = self.side as i64;
        let (mut hit, mut total) = (0usize, 0usize);
        for j in rows {
            let j2 = j as i64 + dj;
            if j2 < 0 || j2 >= n {
                continue;
            }
            for i in 0..self.side {
                let i2 = i as i64 + di;
                if i2 < 0 || i2 >= n {
                    continue;
                }
                total += 1;
                if self.get(i, j) == self.get(i2 as usize, j2 as usize) {
                    hit += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    /// Autocorrelates the map against shifted copies of itself, searching
    /// offsets with `0 <= dj <= max_offset` and `|di| <= max_offset`, and
    /// returns the offsets with any repetition, strongest first.
    pub fn repeat_offsets(&self, max_offset: usize) -> Vec<RepeatOffset> {
        self.repeat_offsets_in_rows(max_offset, 0..self.side)
    }

    /// As [`IndexMap::repeat_offsets`] but only counting source rows in `rows`.
    pub fn repeat_offsets_in_rows(
        &self,
        max_offset: usize,
        rows: std::ops::Range<usize>,
    ) -> Vec<RepeatOffset> {
        let m = max_offset.min(self.side.saturating_sub(1)) as i64;
        let mut out = Vec::new();
        for dj in 0..=m {
            for di in -m..=m {
                if dj == 0 && di <= 0 {
                    continue;
                }
                let f = self.match_fraction(di, dj, rows.clone());
                if f > 0.0 {
                    out.push(RepeatOffset {
                        di,
                        dj,
                        match_fraction: f,
                    });
                }
            }
        }
        out.sort_by(|a, b| {
            b.match_fraction
                .total_cmp(&a.match_fraction)
                .then(a.dj.cmp(&b.dj))
                .then(a.di.abs().cmp(&b.di.abs()))
                .then(b.di.cmp(&a.di))
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> Vec<LevelGeometry> {
        GridConfig::default().resolution_schedule().unwrap()
    }

    #[test]
    fn default_schedule_endpoints() {
        let s = defaults();
        let res: Vec<u32> = s.iter().map(|l| l.resolution).collect();
        assert_eq!(&res[..3], &[4, 6, 9]);
        assert_eq!(*res.last().unwrap(), 346);
        assert!(res.windows(2).all(|w| w[0] < w[1]));
        let b = GridConfig::default().growth_factor().unwrap();
        assert!((b - 1.5002).abs() < 1e-3, "{b}");
    }

    #[test]
    fn flat_schedule() {
        let cfg = GridConfig {
            n_min: 4,
            n_max: 4,
            levels: 2,
            ..GridConfig::default()
        };
        let s = cfg.resolution_schedule().unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|l| l.resolution == 4));
    }

    #[test]
    fn rejects_single_level() {
        let cfg = GridConfig {
            levels: 1,
            ..GridConfig::default()
        };
        assert!(matches!(
            cfg.resolution_schedule(),
            Err(Error::InvalidConfig(_))
        ));
        assert!(cfg.growth_factor().is_err());
    }

    #[test]
    fn rejects_bad_table_size_and_k() {
        let bad_t = GridConfig::default().with_table_size(3000);
        assert!(bad_t.validate().is_err());
        assert!(GridConfig::default().with_k(0).validate().is_err());
        assert!(GridConfig::default().with_k(4).validate().is_err());
        // n_min = 4 gives 5 vertices, too few for a 6-node stencil
        assert!(GridConfig::default().with_k(3).validate().is_err());
    }

    #[test]
    fn seven_dense_levels_by_default() {
        let s = defaults();
        let dense: Vec<_> = s.iter().filter(|l| l.dense).collect();
        assert_eq!(dense.len(), 7);
        assert!(s[..7].iter().all(|l| l.dense));
        assert_eq!(dense.last().unwrap().resolution, 45);
        assert_eq!(dense.last().unwrap().vertices_per_axis(), 46);
    }

    #[test]
    fn hash_fixed_points() {
        assert_eq!(spatial_hash(VertexIndex::new(0, 0), 4096), 0);
        assert_eq!(spatial_hash(VertexIndex::new(1, 0), 4096), 1);
        // 2654435761 mod 4096 = 2481
        assert_eq!(spatial_hash(VertexIndex::new(0, 1), 4096), 2481);
    }

    #[test]
    fn voxel_examples() {
        let lvl = LevelGeometry::new(0, 4, 4096);
        let v = lvl.voxel_vertices([0.0f64, 0.0]).unwrap();
        assert_eq!(
            v.corners,
            [
                VertexIndex::new(0, 0),
                VertexIndex::new(1, 0),
                VertexIndex::new(0, 1),
                VertexIndex::new(1, 1)
            ]
        );
        assert_eq!(v.fraction, [0.0, 0.0]);

        let v = lvl.voxel_vertices([1.0f64, 1.0]).unwrap();
        assert_eq!(v.corners[3], VertexIndex::new(4, 4));
        assert!(v.corners.iter().all(|c| c.i <= 4 && c.j <= 4));

        let v = lvl.voxel_vertices([0.5f64, 0.5]).unwrap();
        assert_eq!(v.corners[0], VertexIndex::new(2, 2));
        assert_eq!(v.fraction, [0.0, 0.0]);

        assert!(lvl.voxel_vertices([1.0001f64, 0.5]).is_err());
        assert!(lvl.voxel_vertices([0.5f64, -1e-9]).is_err());
        assert!(lvl.voxel_vertices([f64::NAN, 0.5]).is_err());
    }

    #[test]
    fn first_hashed_level_repeats() {
        let s = defaults();
        let first_hashed = s.iter().find(|l| !l.dense).unwrap();
        let map = first_hashed.index_map();
        let n = map.entries.len();
        assert!(n > first_hashed.table_size);
        assert!(!map.is_injective());
        assert!(map
            .entries
            .iter()
            .all(|&e| (e as usize) < first_hashed.table_size));
    }

    #[test]
    fn gray_export_wraps() {
        let lvl = LevelGeometry::new(0, 20, 4096);
        let map = lvl.index_map();
        let g = map.to_gray();
        assert_eq!(g.len(), 21 * 21);
        assert_eq!(g[21 * 13 + 2], ((2 + 13 * 21) % 256) as u8);
    }
}

//! The image field: `L` hash tables decoded per pixel by a two-layer network.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{check_unit, GridConfig, LevelGeometry, VertexIndex};
use crate::image::ImageBuffer;
use crate::interp::{push_level_taps, StencilTap};
use crate::scalar::Real;

/// Half-width of the uniform distribution fresh tables are drawn from.
pub const TABLE_INIT_RANGE: f64 = 1e-4;
/// Hidden width of the pixel decoder.
pub const DEFAULT_HIDDEN: usize = 64;
/// Output channels (RGB).
pub const OUTPUTS: usize = 3;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Multiresolution feature tables, `levels x table_size x features`,
/// stored level-major, entry-major, feature-minor.
#[derive(Clone, Debug)]
pub struct HashGrid<T> {
    config: GridConfig,
    levels: Vec<LevelGeometry>,
    tables: Vec<T>,
    stamp: u64,
}

impl<T: Real> PartialEq for HashGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tables == other.tables
    }
}

impl<T: Real> HashGrid<T> {
    pub fn zeros(config: GridConfig) -> Result<Self> {
        Self::from_tables(config, vec![T::zero(); config.table_len()])
    }

    /// Draws every entry from `uniform(-1e-4, 1e-4)`.
    pub fn random<R: Rng + ?Sized>(config: GridConfig, rng: &mut R) -> Result<Self> {
        let tables = (0..config.table_len())
            .map(|_| T::lit(rng.random_range(-TABLE_INIT_RANGE..TABLE_INIT_RANGE)))
            .collect();
        Self::from_tables(config, tables)
    }

    pub fn from_tables(config: GridConfig, tables: Vec<T>) -> Result<Self> {
        let levels = config.resolution_schedule()?;
        if tables.len() != config.table_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} table values", config.table_len()),
                got: format!("{}", tables.len()),
            });
        }
        if let Some(i) = tables.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite table value at {i}"
            )));
        }
        Ok(Self {
            config,
            levels,
            tables,
            stamp: fresh_stamp(),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn levels(&self) -> &[LevelGeometry] {
        &self.levels
    }

    pub fn tables(&self) -> &[T] {
        &self.tables
    }

    /// Mutable access; invalidates samples decoded from this grid.
    pub fn tables_mut(&mut self) -> &mut [T] {
        self.stamp = fresh_stamp();
        &mut self.tables
    }

    fn level_len(&self) -> usize {
        self.config.table_size * self.config.features_per_level
    }

    pub fn level_table(&self, level: usize) -> &[T] {
        let n = self.level_len();
        &self.tables[level * n..(level + 1) * n]
    }

    pub fn level_table_mut(&mut self, level: usize) -> &mut [T] {
        let n = self.level_len();
        self.stamp = fresh_stamp();
        &mut self.tables[level * n..(level + 1) * n]
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    /// Table entries reachable from the level's vertex set, sorted.
    pub fn used_entries(&self, level: usize) -> Vec<usize> {
        let geom = &self.levels[level];
        let mut used: Vec<usize> = geom
            .index_map()
            .entries
            .iter()
            .map(|&e| e as usize)
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn cast<U: Real>(&self) -> HashGrid<U> {
        HashGrid {
            config: self.config,
            levels: self.levels.clone(),
            tables: self.tables.iter().map(|v| U::lit(v.as_f64())).collect(),
            stamp: fresh_stamp(),
        }
    }
}

/// Two-layer perceptron: `input -> hidden (ReLU) -> 3`, linear output.
///
/// Parameters live in one flat buffer laid out as `w1` (hidden x input,
/// row-major), `b1`, `w2` (3 x hidden, row-major), `b2`.
#[derive(Clone, Debug)]
pub struct PixelDecoder<T> {
    input_dim: usize,
    hidden: usize,
    params: Vec<T>,
    stamp: u64,
}

impl<T: Real> PartialEq for PixelDecoder<T> {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.hidden == other.hidden
            && self.params == other.params
    }
}

/// Number of parameters of a decoder with the given shape.
pub fn decoder_param_count(input_dim: usize, hidden: usize) -> usize {
    hidden * input_dim + hidden + OUTPUTS * hidden + OUTPUTS
}

impl<T: Real> PixelDecoder<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self::from_params(
            input_dim,
            hidden,
            vec![T::zero(); decoder_param_count(input_dim, hidden)],
        )
        .expect("zero decoder is valid")
    }

    /// Weights and biases of each layer uniform in `+-1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(decoder_param_count(input_dim, hidden));
        let a1 = 1.0 / (input_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for _ in 0..hidden * input_dim + hidden {
            params.push(T::lit(rng.random_range(-a1..a1)));
        }
        for _ in 0..OUTPUTS * hidden + OUTPUTS {
            params.push(T::lit(rng.random_range(-a2..a2)));
        }
        Self::from_params(input_dim, hidden, params).expect("random decoder is valid")
    }

    pub fn from_params(input_dim: usize, hidden: usize, params: Vec<T>) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidConfig(
                "decoder dimensions must be positive".into(),
            ));
        }
        let n = decoder_param_count(input_dim, hidden);
        if params.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} decoder parameters"),
                got: format!("{}", params.len()),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite decoder parameter at {i}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            params,
            stamp: fresh_stamp(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Parameter count.
    pub fn size(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable access; invalidates samples decoded with this decoder.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.stamp = fresh_stamp();
        &mut self.params
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    fn split(&self) -> (&[T], &[T], &[T], &[T]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.input_dim);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(OUTPUTS * self.hidden);
        (w1, b1, w2, b2)
    }

    /// Runs the network, writing pre-activations into `pre`.
    fn forward(&self, input: &[T], pre: &mut [T]) -> [T; 3] {
        let (w1, b1, w2, b2) = self.split();
        for (h, p) in pre.iter_mut().enumerate() {
            let row = &w1[h * self.input_dim..(h + 1) * self.input_dim];
            let mut acc = b1[h];
            for (w, z) in row.iter().zip(input) {
                acc += *w * *z;
            }
            *p = acc;
        }
        let mut out = [T::zero(); 3];
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            let mut acc = b2[o];
            for (w, p) in row.iter().zip(pre.iter()) {
                if *p > T::zero() {
                    acc += *w * *p;
                }
            }
            *slot = acc;
        }
        out
    }

    pub fn cast<U: Real>(&self) -> PixelDecoder<U> {
        PixelDecoder {
            input_dim: self.input_dim,
            hidden: self.hidden,
            params: self.params.iter().map(|v| U::lit(v.as_f64())).collect(),
            stamp: fresh_stamp(),
        }
    }
}

/// Output of [`decode`], carrying what [`backward`] needs.
#[derive(Clone, Debug, Default)]
pub struct DecodedSample<T> {
    pub coord: [T; 2],
    pub rgb: [T; 3],
    /// Concatenated per-level features, `L * F`.
    pub features: Vec<T>,
    taps: Vec<StencilTap<T>>,
    taps_per_level: usize,
    pre: Vec<T>,
    level_mask: Option<Vec<bool>>,
    grid_stamp: u64,
    decoder_stamp: u64,
}

impl<T: Real> DecodedSample<T> {
    /// Stencil taps of every level, `(2k)^2` per level, level-major.
    pub fn taps(&self) -> &[StencilTap<T>] {
        &self.taps
    }

    pub fn level_taps(&self, level: usize) -> &[StencilTap<T>] {
        &self.taps[level * self.taps_per_level..(level + 1) * self.taps_per_level]
    }
}

fn check_pair<T: Real>(grid: &HashGrid<T>, decoder: &PixelDecoder<T>) -> Result<()> {
    if grid.config.input_dim() != decoder.input_dim {
        return Err(Error::ConfigMismatch(format!(
            "grid produces {} features but decoder expects {}",
            grid.config.input_dim(),
            decoder.input_dim
        )));
    }
    Ok(())
}

/// Decodes the color at normalized coordinate `x`.
pub fn decode<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    x: [T; 2],
) -> Result<DecodedSample<T>> {
    let mut s = DecodedSample::default();
    decode_into(grid, decoder, x, None, &mut s)?;
    Ok(s)
}

/// [`decode`] with the listed levels zeroed at the decoder input.
/// `active[l] == false` removes level `l`.
pub fn decode_masked<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    x: [T; 2],
    active: &[bool],
) -> Result<DecodedSample<T>> {
    if active.len() != grid.config.levels {
        return Err(Error::ShapeMismatch {
            expected: format!("{} level flags", grid.config.levels),
            got: format!("{}", active.len()),
        });
    }
    let mut s = DecodedSample::default();
    decode_into(grid, decoder, x, Some(active), &mut s)?;
    Ok(s)
}

/// Allocation-reusing form of [`decode`].
pub fn decode_into<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    x: [T; 2],
    active: Option<&[bool]>,
    out: &mut DecodedSample<T>,
) -> Result<()> {
    check_unit(x)?;
    check_pair(grid, decoder)?;
    let cfg = &grid.config;
    let f = cfg.features_per_level;
    let per_level = 4 * cfg.k * cfg.k;

    out.coord = x;
    out.taps.clear();
    out.features.clear();
    out.features.resize(cfg.input_dim(), T::zero());
    out.taps_per_level = per_level;
    out.level_mask = active.map(|a| a.to_vec());
    for (l, level) in grid.levels.iter().enumerate() {
        push_level_taps(level, x, cfg.k, &mut out.taps);
        if active.is_some_and(|a| !a[l]) {
            continue;
        }
        let table = grid.level_table(l);
        let feats = &mut out.features[l * f..(l + 1) * f];
        for tap in &out.taps[l * per_level..] {
            let row = &table[tap.entry as usize * f..tap.entry as usize * f + f];
            for (acc, v) in feats.iter_mut().zip(row) {
                *acc += tap.weight * *v;
            }
        }
    }
    out.pre.clear();
    out.pre.resize(decoder.hidden, T::zero());
    out.rgb = decoder.forward(&out.features, &mut out.pre);
    out.grid_stamp = grid.stamp;
    out.decoder_stamp = decoder.stamp;
    Ok(())
}

/// Destinations for the parameter gradients of one sample.
///
/// Table gradients are appended as `(flat table index, value)` pairs;
/// decoder gradients are added into a buffer laid out like
/// [`PixelDecoder::params`]. Either may be omitted.
pub struct GradSink<'a, T> {
    pub tables: Option<&'a mut Vec<(usize, T)>>,
    pub decoder: Option<&'a mut [T]>,
}

impl<T> GradSink<'_, T> {
    pub fn none() -> Self {
        Self {
            tables: None,
            decoder: None,
        }
    }
}

/// Gradients of one sample's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    /// Sparse `(flat table index, gradient)` pairs, at most `L * (2k)^2 * F`.
    pub tables: Vec<(usize, T)>,
    pub decoder: Vec<T>,
    /// Gradient w.r.t. the normalized coordinate.
    pub coord: [T; 2],
}

/// Reverse-mode gradients of `dot(grad_rgb, rgb)` for a decoded sample.
pub fn backward<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    sample: &DecodedSample<T>,
    grad_rgb: [T; 3],
) -> Result<Gradients<T>> {
    let mut tables = Vec::new();
    let mut dec = vec![T::zero(); decoder.size()];
    let coord = backward_into(
        grid,
        decoder,
        sample,
        grad_rgb,
        GradSink {
            tables: Some(&mut tables),
            decoder: Some(&mut dec),
        },
        true,
    )?;
    Ok(Gradients {
        tables,
        decoder: dec,
        coord,
    })
}

/// Accumulating form of [`backward`]. Returns the coordinate gradient when
/// `want_coord` is set, zeros otherwise.
pub fn backward_into<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    sample: &DecodedSample<T>,
    grad_rgb: [T; 3],
    sink: GradSink<'_, T>,
    want_coord: bool,
) -> Result<[T; 2]> {
    if sample.grid_stamp != grid.stamp || sample.decoder_stamp != decoder.stamp {
        return Err(Error::StaleCache);
    }
    let cfg = &grid.config;
    let f = cfg.features_per_level;
    let (w1, _, w2, _) = decoder.split();
    let (hidden, input) = (decoder.hidden, decoder.input_dim);

    // d loss / d hidden pre-activation, through the ReLU
    let mut d_pre = vec![T::zero(); hidden];
    for (h, d) in d_pre.iter_mut().enumerate() {
        if sample.pre[h] > T::zero() {
            *d = (0..OUTPUTS).map(|o| grad_rgb[o] * w2[o * hidden + h]).sum();
        }
    }

    if let Some(dec) = sink.decoder {
        let (gw1, rest) = dec.split_at_mut(hidden * input);
        let (gb1, rest) = rest.split_at_mut(hidden);
        let (gw2, gb2) = rest.split_at_mut(OUTPUTS * hidden);
        for h in 0..hidden {
            let d = d_pre[h];
            if d != T::zero() {
                let row = &mut gw1[h * input..(h + 1) * input];
                for (g, z) in row.iter_mut().zip(&sample.features) {
                    *g += d * *z;
                }
            }
            gb1[h] += d;
        }
        for o in 0..OUTPUTS {
            for h in 0..hidden {
                let p = sample.pre[h];
                if p > T::zero() {
                    gw2[o * hidden + h] += grad_rgb[o] * p;
                }
            }
            gb2[o] += grad_rgb[o];
        }
    }

    // d loss / d decoder input
    let mut d_in = vec![T::zero(); input];
    for (h, &d) in d_pre.iter().enumerate() {
        if d != T::zero() {
            for (g, w) in d_in.iter_mut().zip(&w1[h * input..(h + 1) * input]) {
                *g += d * *w;
            }
        }
    }

    let mut coord = [T::zero(); 2];
    let mut table_sink = sink.tables;
    let level_len = cfg.table_size * f;
    for l in 0..cfg.levels {
        if sample.level_mask.as_ref().is_some_and(|m| !m[l]) {
            continue;
        }
        let d_feat = &d_in[l * f..(l + 1) * f];
        let table = grid.level_table(l);
        for tap in sample.level_taps(l) {
            let e = tap.entry as usize;
            if let Some(sink) = table_sink.as_deref_mut() {
                for (fi, &d) in d_feat.iter().enumerate() {
                    sink.push((l * level_len + e * f + fi, tap.weight * d));
                }
            }
            if want_coord {
                let row = &table[e * f..(e + 1) * f];
                let proj: T = row.iter().zip(d_feat).map(|(v, d)| *v * *d).sum();
                coord[0] += tap.d_weight[0] * proj;
                coord[1] += tap.d_weight[1] * proj;
            }
        }
    }
    Ok(coord)
}

/// A grid with its decoder: the unit that is trained, saved and rendered.
#[derive(Clone, Debug)]
pub struct HashField<T> {
    pub grid: HashGrid<T>,
    pub decoder: PixelDecoder<T>,
}

impl<T: Real> PartialEq for HashField<T> {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.decoder == other.decoder
    }
}

impl<T: Real> HashField<T> {
    pub fn new(grid: HashGrid<T>, decoder: PixelDecoder<T>) -> Result<Self> {
        check_pair(&grid, &decoder)?;
        Ok(Self { grid, decoder })
    }

    pub fn decode(&self, x: [T; 2]) -> Result<DecodedSample<T>> {
        decode(&self.grid, &self.decoder, x)
    }

    /// Decodes every pixel center of a `width x height` image.
    pub fn render(&self, width: usize, height: usize) -> Result<ImageBuffer> {
        render(&self.grid, &self.decoder, width, height, None)
    }

    pub fn cast<U: Real>(&self) -> HashField<U> {
        HashField {
            grid: self.grid.cast(),
            decoder: self.decoder.cast(),
        }
    }
}

/// Decodes every pixel center, optionally with a level mask.
pub fn render<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    width: usize,
    height: usize,
    active: Option<&[bool]>,
) -> Result<ImageBuffer> {
    let rows: Vec<Vec<f32>> = (0..height)
        .into_par_iter()
        .map(|row| {
            let mut s = DecodedSample::default();
            let mut out = Vec::with_capacity(width * 3);
            for col in 0..width {
                let x = [
                    T::lit((col as f64 + 0.5) / width as f64),
                    T::lit((row as f64 + 0.5) / height as f64),
                ];
                decode_into(grid, decoder, x, active, &mut s)?;
                out.extend(s.rgb.iter().map(|v| v.as_f32()));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    ImageBuffer::new(width, height, rows.concat())
}

/// Builds one level's table from a per-vertex feature map by averaging all
/// map positions that land on the same entry. Entries nobody maps to stay 0.
///
/// `map` is `side x side x F`, row-major. `side` is either the vertex count
/// `N + 1` or the resolution `N`; the latter covers vertices `0..N` on each
/// axis, i.e. the last vertex row and column are left out.
pub fn aggregate_feature_map<T: Real>(
    map: &[T],
    side: usize,
    features: usize,
    level: &LevelGeometry,
) -> Result<Vec<T>> {
    let n = level.resolution as usize;
    if side != n + 1 && side != n {
        return Err(Error::ShapeMismatch {
            expected: format!("side {} or {}", n + 1, n),
            got: format!("side {side}"),
        });
    }
    if features == 0 || map.len() != side * side * features {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", side * side * features),
            got: format!("{} values", map.len()),
        });
    }
    if let Some(i) = map.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite map value at {i}")));
    }
    let mut sums = vec![T::zero(); level.table_size * features];
    let mut counts = vec![0usize; level.table_size];
    for j in 0..side {
        for i in 0..side {
            let e = level.entry_index(VertexIndex::new(i as u32, j as u32));
            counts[e] += 1;
            let src = &map[(j * side + i) * features..(j * side + i + 1) * features];
            for (acc, v) in sums[e * features..(e + 1) * features].iter_mut().zip(src) {
                *acc += *v;
            }
        }
    }
    for (e, &c) in counts.iter().enumerate() {
        if c > 1 {
            let c = T::from_usize(c).unwrap();
            for v in &mut sums[e * features..(e + 1) * features] {
                *v /= c;
            }
        }
    }
    Ok(sums)
}

//! Diagnostics on fitted encodings: translation invariance, layer ablation,
//! table-size sweeps, entry statistics and reconstruction quality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::translate;
use crate::format::{payload_sizes, PayloadSizes};
use crate::grid::GridConfig;
use crate::image::{mse, ImageBuffer};
use crate::interp::interpolate_level;
use crate::model::{render, HashField, HashGrid, PixelDecoder};
use crate::scalar::Real;
use crate::train::{fit_per_image, fit_shared_decoder, TrainConfig};

/// `10 log10(1 / mse)`; `f64::INFINITY` for identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0 + 1.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    }
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

// ---------------------------------------------------------------------------
// translation invariance

/// Largest horizontal shift accepted by the invariance protocol.
pub const MAX_INVARIANCE_SHIFT: i32 = 80;

/// Concatenated channels shown as heatmaps by default.
pub const DEFAULT_CHANNELS: [usize; 3] = [4, 12, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDivergence {
    pub level: usize,
    pub resolution: u32,
    pub dense: bool,
    /// Mean squared feature difference over valid probes and channels.
    pub divergence: f64,
    /// Feature variance of the reference encoding over the same probes.
    pub variance: f64,
    /// `divergence / variance`.
    pub relative: f64,
    pub cosine: f64,
    pub valid_probes: usize,
    pub total_probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResult {
    /// Horizontal shift in pixels.
    pub shift: i32,
    pub levels: Vec<LevelDivergence>,
    /// Rank correlation between level index and relative divergence.
    pub spearman: f64,
    pub mask: String,
    pub warnings: Vec<String>,
}

/// Compares `reference` with `shifted` (the encoding of the image translated
/// by `shift` pixels along x) at every level's vertex grid. A probe `x` of the
/// reference is matched with `x + shift / width` in the shifted encoding;
/// probes whose partner falls outside the unit square lie in the discarded
/// strip and are masked out.
pub fn feature_divergence<T: Real>(
    reference: &HashGrid<T>,
    shifted: &HashGrid<T>,
    shift: i32,
    width: usize,
) -> Result<InvarianceResult> {
    if reference.config() != shifted.config() {
        return Err(Error::ConfigMismatch(
            "invariance encodings differ in configuration".into(),
        ));
    }
    let cfg = *reference.config();
    let f = cfg.features_per_level;
    let offset = f64::from(shift) / width as f64;
    let mut levels = Vec::with_capacity(cfg.levels);
    for geom in reference.levels() {
        let n = geom.resolution as f64;
        let side = geom.vertices_per_axis();
        let mut a_vals = Vec::new();
        let mut b_vals = Vec::new();
        for j in 0..side {
            for i in 0..side {
                let x = [i as f64 / n, j as f64 / n];
                let xs = x[0] + offset;
                if !(0.0..=1.0).contains(&xs) {
                    continue;
                }
                let sa = interpolate_level(
                    reference.level_table(geom.level),
                    f,
                    [T::lit(x[0]), T::lit(x[1])],
                    geom,
                    cfg.k,
                )?;
                let sb = interpolate_level(
                    shifted.level_table(geom.level),
                    f,
                    [T::lit(xs), T::lit(x[1])],
                    geom,
                    cfg.k,
                )?;
                a_vals.extend(sa.value.iter().map(|v| v.as_f64()));
                b_vals.extend(sb.value.iter().map(|v| v.as_f64()));
            }
        }
        let count = a_vals.len();
        let (divergence, variance, cosine) = if count == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let div = a_vals
                .iter()
                .zip(&b_vals)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / count as f64;
            let mean = a_vals.iter().sum::<f64>() / count as f64;
            let var = a_vals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / count as f64;
            let dot: f64 = a_vals.iter().zip(&b_vals).map(|(a, b)| a * b).sum();
            let na = a_vals.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb = b_vals.iter().map(|b| b * b).sum::<f64>().sqrt();
            let cos = if na == 0.0 && nb == 0.0 {
                1.0
            } else {
                dot / (na * nb)
            };
            (div, var, cos)
        };
        levels.push(LevelDivergence {
            level: geom.level,
            resolution: geom.resolution,
            dense: geom.dense,
            divergence,
            variance,
            relative: if divergence == 0.0 {
                0.0
            } else {
                divergence / variance
            },
            cosine,
            valid_probes: count / f,
            total_probes: side * side,
        });
    }
    let idx: Vec<f64> = (0..levels.len()).map(|l| l as f64).collect();
    let rel: Vec<f64> = levels.iter().map(|l| l.relative).collect();
    let mut warnings = Vec::new();
    if shift % 10 != 0 {
        let msg = format!("shift {shift} px is not a multiple of 10");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(InvarianceResult {
        shift,
        spearman: spearman(&idx, &rel),
        mask: format!(
            "vertex probes x with x + {shift}/{width} outside [0, 1] excluded (strip revealed by the shift)"
        ),
        levels,
        warnings,
    })
}

/// Number of levels counted as coarse: the lowest quarter of the schedule.
pub fn coarse_levels(levels: usize) -> usize {
    levels.div_ceil(4)
}

impl InvarianceResult {
    /// Pooled divergence over pooled variance of the first `count` levels.
    pub fn pooled_relative(&self, count: usize) -> f64 {
        let lv = &self.levels[..count.min(self.levels.len())];
        let div: f64 = lv.iter().map(|l| l.divergence).sum();
        if div == 0.0 {
            return 0.0;
        }
        div / lv.iter().map(|l| l.variance).sum::<f64>()
    }

    /// [`Self::pooled_relative`] over the coarse quarter of levels.
    pub fn coarse_relative(&self) -> f64 {
        self.pooled_relative(coarse_levels(self.levels.len()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRun {
    pub results: Vec<InvarianceResult>,
    pub fit_psnr: Vec<f64>,
    /// Batch loss of the shared fit at every step.
    pub loss_curve: Vec<f64>,
}

/// Fits `I` and `tau_r(I)` for every requested shift with one shared decoder
/// and compares each shifted encoding against the reference. A zero shift
/// reuses the reference encoding.
pub fn translation_invariance(
    image: &ImageBuffer,
    shifts: &[i32],
    grid_cfg: GridConfig,
    train_cfg: TrainConfig,
) -> Result<(InvarianceRun, Vec<HashGrid<f32>>, PixelDecoder<f32>)> {
    if let Some(&s) = shifts.iter().find(|s| s.abs() > MAX_INVARIANCE_SHIFT) {
        return Err(Error::InvalidConfig(format!(
            "shift {s} px exceeds the ±{MAX_INVARIANCE_SHIFT} px protocol range"
        )));
    }
    let mut distinct: Vec<i32> = shifts.iter().copied().filter(|&s| s != 0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let mut images = vec![image.clone()];
    for &s in &distinct {
        images.push(translate(image, s, 0)?);
    }
    let (grids, decoder, report) = fit_shared_decoder::<f32>(&images, grid_cfg, train_cfg)?;
    let results = shifts
        .iter()
        .map(|&s| {
            let other = match distinct.binary_search(&s) {
                Ok(i) => &grids[i + 1],
                Err(_) => &grids[0],
            };
            feature_divergence(&grids[0], other, s, image.width())
        })
        .collect::<Result<_>>()?;
    Ok((
        InvarianceRun {
            results,
            fit_psnr: report.final_psnr,
            loss_curve: report.loss_curve,
        },
        grids,
        decoder,
    ))
}

/// Heatmaps of one concatenated feature channel: the reference field and the
/// shifted field moved back by `shift`, each `width x height`, normalized to
/// the channel's joint range. Masked pixels are black.
pub fn feature_heatmaps<T: Real>(
    reference: &HashGrid<T>,
    shifted: &HashGrid<T>,
    shift: i32,
    channel: usize,
    width: usize,
    height: usize,
) -> Result<[ImageBuffer; 2]> {
    let cfg = *reference.config();
    if channel >= cfg.input_dim() {
        return Err(Error::InvalidConfig(format!(
            "channel {channel} out of range for {} features",
            cfg.input_dim()
        )));
    }
    let (level, feat) = (
        channel / cfg.features_per_level,
        channel % cfg.features_per_level,
    );
    let geom = &reference.levels()[level];
    let offset = f64::from(shift) / width as f64;
    let sample = |grid: &HashGrid<T>, x: [f64; 2]| -> Result<Option<f64>> {
        if !(0.0..=1.0).contains(&x[0]) {
            return Ok(None);
        }
        let s = interpolate_level(
            grid.level_table(level),
            cfg.features_per_level,
            [T::lit(x[0]), T::lit(x[1])],
            geom,
            cfg.k,
        )?;
        Ok(Some(s.value[feat].as_f64()))
    };
    let mut a = Vec::with_capacity(width * height);
    let mut b = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let x = [
                (c as f64 + 0.5) / width as f64,
                (r as f64 + 0.5) / height as f64,
            ];
            let vb = sample(shifted, [x[0] + offset, x[1]])?;
            let va = if vb.is_some() {
                sample(reference, x)?
            } else {
                None
            };
            a.push(va);
            b.push(vb);
        }
    }
    let (lo, hi) = a
        .iter()
        .chain(&b)
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let paint = |vals: &[Option<f64>]| {
        let data = vals
            .iter()
            .flat_map(|v| match v {
                Some(v) => colormap((v - lo) / span),
                None => [0.0; 3],
            })
            .collect();
        ImageBuffer::new(width, height, data)
    };
    Ok([paint(&a)?, paint(&b)?])
}

/// Blue to white to red.
fn colormap(t: f64) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0) as f32;
    if t < 0.5 {
        let s = t * 2.0;
        [s, s, 1.0]
    } else {
        let s = (1.0 - t) * 2.0;
        [1.0, s, s]
    }
}

// ---------------------------------------------------------------------------
// layer ablation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub full_psnr: f64,
    pub dense_only_psnr: f64,
    pub hashed_only_psnr: f64,
    pub dense_levels: usize,
    pub hashed_levels: usize,
}

/// Level masks `(dense_only, hashed_only)`; they are complementary.
pub fn ablation_masks(config: &GridConfig) -> Result<(Vec<bool>, Vec<bool>)> {
    let dense: Vec<bool> = config
        .resolution_schedule()?
        .iter()
        .map(|l| l.dense)
        .collect();
    let hashed = dense.iter().map(|d| !d).collect();
    Ok((dense, hashed))
}

/// Reconstruction PSNR with all levels, dense levels only and hashed levels
/// only; removed levels are zeroed at the decoder input.
pub fn layer_ablation<T: Real>(
    field: &HashField<T>,
    image: &ImageBuffer,
) -> Result<AblationResult> {
    let (dense, hashed) = ablation_masks(field.grid.config())?;
    let (w, h) = (image.width(), image.height());
    let full = render(&field.grid, &field.decoder, w, h, None)?;
    let d = render(&field.grid, &field.decoder, w, h, Some(&dense))?;
    let hs = render(&field.grid, &field.decoder, w, h, Some(&hashed))?;
    Ok(AblationResult {
        full_psnr: psnr(&full, image)?,
        dense_only_psnr: psnr(&d, image)?,
        hashed_only_psnr: psnr(&hs, image)?,
        dense_levels: dense.iter().filter(|d| **d).count(),
        hashed_levels: hashed.iter().filter(|h| **h).count(),
    })
}

// ---------------------------------------------------------------------------
// table-size sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub table_size: usize,
    pub psnr: f64,
    pub dense_levels: usize,
    pub payload: PayloadSizes,
}

/// Per-image fit at every table size, same seed and steps.
pub fn table_size_sweep(
    image: &ImageBuffer,
    sizes: &[usize],
    grid_cfg: GridConfig,
    train_cfg: TrainConfig,
) -> Result<Vec<SweepPoint>> {
    if let Some(&t) = sizes.iter().find(|t| !t.is_power_of_two()) {
        return Err(Error::InvalidConfig(format!(
            "table size {t} is not a power of two"
        )));
    }
    sizes
        .iter()
        .map(|&t| {
            let cfg = grid_cfg.with_table_size(t);
            let (_, _, report) = fit_per_image::<f32>(image, cfg, train_cfg)?;
            Ok(SweepPoint {
                table_size: t,
                psnr: report.final_psnr[0],
                dense_levels: cfg
                    .resolution_schedule()?
                    .iter()
                    .filter(|l| l.dense)
                    .count(),
                payload: payload_sizes(&cfg, train_cfg.hidden),
            })
        })
        .collect()
}

/// Powers of two from `2^lo` to `2^hi` inclusive.
pub fn power_of_two_sizes(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|e| 1usize << e).collect()
}

// ---------------------------------------------------------------------------
// entry statistics

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelHistogram {
    pub level: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub min: f64,
    pub max: f64,
    /// Probability density per bin over `[min, max]`.
    pub density: Vec<f64>,
}

/// Pools every model's reachable table entries per level. Values are sorted
/// before reduction so the result does not depend on model order.
pub fn entry_histograms<T: Real>(grids: &[&HashGrid<T>]) -> Result<Vec<LevelHistogram>> {
    let Some(first) = grids.first() else {
        return Err(Error::InvalidConfig("no models to pool".into()));
    };
    let cfg = *first.config();
    if grids.iter().any(|g| *g.config() != cfg) {
        return Err(Error::ConfigMismatch(
            "models differ in grid configuration".into(),
        ));
    }
    let f = cfg.features_per_level;
    (0..cfg.levels)
        .map(|level| {
            let used = first.used_entries(level);
            let mut vals: Vec<f64> = Vec::with_capacity(used.len() * f * grids.len());
            for g in grids {
                let table = g.level_table(level);
                for &e in &used {
                    vals.extend(table[e * f..(e + 1) * f].iter().map(|v| v.as_f64()));
                }
            }
            vals.sort_by(f64::total_cmp);
            Ok(histogram(level, &vals))
        })
        .collect()
}

fn histogram(level: usize, sorted: &[f64]) -> LevelHistogram {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let m2 = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = sorted.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let width = (max - min) / HISTOGRAM_BINS as f64;
    let mut density = vec![0.0; HISTOGRAM_BINS];
    for v in sorted {
        let b = if width > 0.0 {
            (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        density[b] += 1.0;
    }
    for d in &mut density {
        *d /= n * if width > 0.0 { width } else { 1.0 };
    }
    LevelHistogram {
        level,
        count: sorted.len(),
        mean,
        std: m2.sqrt(),
        skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
        min,
        max,
        density,
    }
}

/// Bar chart of one histogram, `width x height`, bars in white on black.
pub fn histogram_image(h: &LevelHistogram, width: usize, height: usize) -> Result<ImageBuffer> {
    let peak = h
        .density
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    ImageBuffer::from_fn(width, height, |c, r| {
        let bin = c * h.density.len() / width;
        let bar = (h.density[bin] / peak * height as f64).round() as usize;
        if height - r <= bar {
            [1.0; 3]
        } else {
            [0.0; 3]
        }
    })
}

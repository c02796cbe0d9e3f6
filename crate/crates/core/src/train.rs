//! Gradient-descent fitting of hash fields to images.
//!
//! All entry points share one loop: every step draws `batch_pixels` pixel
//! indices per image from a seeded ChaCha stream, decodes them at their
//! pixel centers, and backpropagates the mean squared RGB error. Samples are
//! evaluated in fixed chunks and reduced in chunk order, so a run is
//! bit-reproducible regardless of the worker count unless the unordered
//! fast path is requested.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::psnr_from_mse;
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::image::{mse, ImageBuffer};
use crate::model::{backward_into, decode_into, DecodedSample, GradSink, HashGrid, PixelDecoder};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Real;

/// Samples per work unit. Fixed so the reduction order never depends on
/// the number of threads.
pub const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    PerImage,
    SharedDecoder,
    FinetuneTablesOnly,
    FinetuneJoint,
}

impl TrainMode {
    pub fn updates_decoder(self) -> bool {
        !matches!(self, TrainMode::FinetuneTablesOnly)
    }
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "per_image" => Ok(Self::PerImage),
            "shared_decoder" => Ok(Self::SharedDecoder),
            "finetune_tables_only" => Ok(Self::FinetuneTablesOnly),
            "finetune_joint" => Ok(Self::FinetuneJoint),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Pixels drawn from each image per step.
    pub batch_pixels: usize,
    pub adam: AdamConfig,
    pub lr_tables: f64,
    pub lr_decoder: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub hidden: usize,
    pub threads: usize,
    /// Reduce per-chunk gradients in chunk order (bit-reproducible).
    pub ordered_reduction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_pixels: 4096,
            adam: AdamConfig::default(),
            lr_tables: 1e-2,
            lr_decoder: 1e-3,
            seed: 0,
            mode: TrainMode::PerImage,
            hidden: crate::model::DEFAULT_HIDDEN,
            threads: 1,
            ordered_reduction: true,
        }
    }
}

impl TrainConfig {
    /// 100 steps of table-only refinement against a frozen decoder.
    pub fn finetune() -> Self {
        Self {
            steps: 100,
            mode: TrainMode::FinetuneTablesOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_pixels == 0 {
            return bad("batch_pixels must be at least 1");
        }
        if !(self.lr_tables > 0.0 && self.lr_decoder > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub grid: GridConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Batch loss (mean squared error over sampled pixels and channels) of every step.
    pub loss_curve: Vec<f64>,
    pub initial_psnr: Vec<f64>,
    pub final_mse: Vec<f64>,
    pub final_psnr: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn mean_final_psnr(&self) -> f64 {
        self.final_psnr.iter().sum::<f64>() / self.final_psnr.len() as f64
    }

    /// Mean of the `window` losses ending at step index `at`.
    pub fn smoothed_loss(&self, at: usize, window: usize) -> f64 {
        smoothed(&self.loss_curve, at, window)
    }
}

pub fn smoothed(curve: &[f64], at: usize, window: usize) -> f64 {
    let end = (at + 1).min(curve.len());
    let start = end.saturating_sub(window.max(1));
    curve[start..end].iter().sum::<f64>() / (end - start) as f64
}

/// Summed gradient of one pixel batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradient<T> {
    /// Sum over samples of the per-sample squared error (all channels).
    pub sse: f64,
    /// Dense, laid out like [`HashGrid::tables`].
    pub tables: Vec<T>,
    /// Laid out like [`PixelDecoder::params`].
    pub decoder: Vec<T>,
}

#[derive(Default)]
struct ChunkGrad<T> {
    sse: f64,
    tables: Vec<(usize, T)>,
    decoder: Vec<T>,
}

fn chunk_gradient<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    image: &ImageBuffer,
    pixels: &[usize],
    scale: T,
    want_decoder: bool,
) -> Result<ChunkGrad<T>> {
    let mut out = ChunkGrad {
        sse: 0.0,
        tables: Vec::with_capacity(
            pixels.len() * grid.config().levels * 4 * grid.config().k.pow(2) * 2,
        ),
        decoder: if want_decoder {
            vec![T::zero(); decoder.size()]
        } else {
            Vec::new()
        },
    };
    let mut sample = DecodedSample::default();
    let (w, h) = (image.width(), image.height());
    for &p in pixels {
        let (col, row) = (p % w, p / w);
        let x = [
            T::lit((col as f64 + 0.5) / w as f64),
            T::lit((row as f64 + 0.5) / h as f64),
        ];
        decode_into(grid, decoder, x, None, &mut sample)?;
        let target = image.get_flat(p);
        let mut g = [T::zero(); 3];
        for c in 0..3 {
            let d = sample.rgb[c] - T::lit(f64::from(target[c]));
            out.sse += d.as_f64() * d.as_f64();
            g[c] = scale * d;
        }
        let sink = GradSink {
            tables: Some(&mut out.tables),
            decoder: if want_decoder {
                Some(&mut out.decoder[..])
            } else {
                None
            },
        };
        backward_into(grid, decoder, &sample, g, sink, false)?;
    }
    Ok(out)
}

/// Gradient of `scale * sum_i sum_c (rgb_ic - target_ic)^2 / 2` over the
/// listed pixels, reduced in a fixed chunk order.
pub fn batch_gradient<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    image: &ImageBuffer,
    pixels: &[usize],
    scale: T,
    ordered: bool,
) -> Result<BatchGradient<T>> {
    let mut tables = vec![T::zero(); grid.tables().len()];
    let mut dec = vec![T::zero(); decoder.size()];
    let sse = accumulate(
        grid,
        decoder,
        image,
        pixels,
        scale,
        ordered,
        true,
        &mut tables,
        Some(&mut dec),
    )?;
    Ok(BatchGradient {
        sse,
        tables,
        decoder: dec,
    })
}

#[allow(clippy::too_many_arguments)]
fn accumulate<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    image: &ImageBuffer,
    pixels: &[usize],
    scale: T,
    ordered: bool,
    parallel: bool,
    tables: &mut [T],
    dec: Option<&mut [T]>,
) -> Result<f64> {
    let want_decoder = dec.is_some();
    let run = |chunk: &[usize]| chunk_gradient(grid, decoder, image, chunk, scale, want_decoder);
    let merge = |acc: &mut ChunkGrad<T>, c: ChunkGrad<T>, tables: &mut [T]| {
        acc.sse += c.sse;
        for (i, v) in c.tables {
            tables[i] += v;
        }
        for (a, b) in acc.decoder.iter_mut().zip(&c.decoder) {
            *a += *b;
        }
    };
    let mut total = ChunkGrad {
        sse: 0.0,
        tables: Vec::new(),
        decoder: if want_decoder {
            vec![T::zero(); decoder.size()]
        } else {
            Vec::new()
        },
    };
    if !parallel {
        for chunk in pixels.chunks(CHUNK) {
            merge(&mut total, run(chunk)?, tables);
        }
    } else if ordered {
        let parts: Vec<ChunkGrad<T>> = pixels.par_chunks(CHUNK).map(run).collect::<Result<_>>()?;
        for c in parts {
            merge(&mut total, c, tables);
        }
    } else {
        // unordered fast path: per-worker dense buffers, combined as they finish
        let n = tables.len();
        let (sse, t, d) = pixels
            .par_chunks(CHUNK)
            .map(run)
            .try_fold(
                || {
                    (
                        0.0,
                        vec![T::zero(); n],
                        vec![T::zero(); if want_decoder { decoder.size() } else { 0 }],
                    )
                },
                |(mut sse, mut t, mut d), c| {
                    let c = c?;
                    sse += c.sse;
                    for (i, v) in c.tables {
                        t[i] += v;
                    }
                    for (a, b) in d.iter_mut().zip(&c.decoder) {
                        *a += *b;
                    }
                    Ok::<_, Error>((sse, t, d))
                },
            )
            .try_reduce(
                || {
                    (
                        0.0,
                        vec![T::zero(); n],
                        vec![T::zero(); if want_decoder { decoder.size() } else { 0 }],
                    )
                },
                |(s1, mut t1, mut d1), (s2, t2, d2)| {
                    for (a, b) in t1.iter_mut().zip(&t2) {
                        *a += *b;
                    }
                    for (a, b) in d1.iter_mut().zip(&d2) {
                        *a += *b;
                    }
                    Ok((s1 + s2, t1, d1))
                },
            )?;
        for (a, b) in tables.iter_mut().zip(t) {
            *a += b;
        }
        total.sse = sse;
        total.decoder = d;
    }
    if let Some(dec) = dec {
        for (a, b) in dec.iter_mut().zip(&total.decoder) {
            *a += *b;
        }
    }
    Ok(total.sse)
}

struct Session<'a, T> {
    images: &'a [&'a ImageBuffer],
    grids: Vec<HashGrid<T>>,
    decoder: PixelDecoder<T>,
    cfg: TrainConfig,
    train_tables: bool,
    train_decoder: bool,
    rng: ChaCha8Rng,
}

fn image_psnr<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    image: &ImageBuffer,
) -> Result<(f64, f64)> {
    let recon = crate::model::render(grid, decoder, image.width(), image.height(), None)?;
    let e = mse(&recon, image)?;
    Ok((e, psnr_from_mse(e)))
}

impl<T: Real> Session<'_, T> {
    fn run(&mut self) -> Result<TrainReport> {
        self.cfg.validate()?;
        let start = Instant::now();
        let initial_psnr = self.evaluate()?.into_iter().map(|(_, p)| p).collect();
        let mut table_opts: Vec<Adam<T>> = self
            .grids
            .iter()
            .map(|g| Adam::new(g.tables().len(), self.cfg.lr_tables, self.cfg.adam))
            .collect();
        let mut dec_opt = Adam::new(self.decoder.size(), self.cfg.lr_decoder, self.cfg.adam);
        let samples_per_step = self.cfg.batch_pixels * self.images.len();
        // d/d rgb of the mean over samples and channels
        let scale = T::lit(2.0 / (samples_per_step as f64 * 3.0));
        let parallel = self.cfg.threads > 1;
        let pool = if parallel {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(self.cfg.threads)
                    .build()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?,
            )
        } else {
            None
        };

        let mut table_grads: Vec<Vec<T>> = self
            .grids
            .iter()
            .map(|g| vec![T::zero(); g.tables().len()])
            .collect();
        let mut dec_grad = vec![T::zero(); self.decoder.size()];
        let mut loss_curve = Vec::with_capacity(self.cfg.steps);
        for step in 0..self.cfg.steps {
            let batches: Vec<Vec<usize>> = self
                .images
                .iter()
                .map(|img| {
                    let n = img.pixel_count();
                    (0..self.cfg.batch_pixels)
                        .map(|_| self.rng.random_range(0..n))
                        .collect()
                })
                .collect();
            dec_grad.iter_mut().for_each(|v| *v = T::zero());
            let mut sse = 0.0;
            for (i, pixels) in batches.iter().enumerate() {
                let tg = &mut table_grads[i];
                tg.iter_mut().for_each(|v| *v = T::zero());
                let dec = if self.train_decoder {
                    Some(&mut dec_grad[..])
                } else {
                    None
                };
                let job = || {
                    accumulate(
                        &self.grids[i],
                        &self.decoder,
                        self.images[i],
                        pixels,
                        scale,
                        self.cfg.ordered_reduction,
                        parallel,
                        tg,
                        dec,
                    )
                };
                sse += match &pool {
                    Some(p) => p.install(job)?,
                    None => job()?,
                };
            }
            let loss = sse / (samples_per_step as f64 * 3.0);
            if !loss.is_finite() {
                let group = if self
                    .grids
                    .iter()
                    .any(|g| g.tables().iter().any(|v| !v.is_finite()))
                {
                    "tables"
                } else if self.decoder.params().iter().any(|v| !v.is_finite()) {
                    "decoder"
                } else {
                    "loss"
                };
                return Err(Error::NonFiniteLoss { step, group });
            }
            if self.train_tables && table_grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss {
                    step,
                    group: "tables",
                });
            }
            if self.train_decoder && dec_grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step,
                    group: "decoder",
                });
            }
            loss_curve.push(loss);
            if self.train_tables {
                for ((grid, opt), g) in self.grids.iter_mut().zip(&mut table_opts).zip(&table_grads)
                {
                    opt.step(grid.tables_mut(), g);
                }
            }
            if self.train_decoder {
                dec_opt.step(self.decoder.params_mut(), &dec_grad);
            }
        }
        let finals = self.evaluate()?;
        Ok(TrainReport {
            mode: self.cfg.mode,
            grid: *self.grids[0].config(),
            train: self.cfg,
            seed: self.cfg.seed,
            loss_curve,
            initial_psnr,
            final_mse: finals.iter().map(|f| f.0).collect(),
            final_psnr: finals.iter().map(|f| f.1).collect(),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    }

    fn evaluate(&self) -> Result<Vec<(f64, f64)>> {
        self.grids
            .iter()
            .zip(self.images)
            .map(|(g, img)| image_psnr(g, &self.decoder, img))
            .collect()
    }
}

/// Fits a table set and decoder to a single image.
pub fn fit_per_image<T: Real>(
    image: &ImageBuffer,
    grid_cfg: GridConfig,
    cfg: TrainConfig,
) -> Result<(HashGrid<T>, PixelDecoder<T>, TrainReport)> {
    let (mut grids, decoder, report) =
        fit_shared_decoder(std::slice::from_ref(image), grid_cfg, cfg)?;
    Ok((grids.pop().unwrap(), decoder, report))
}

/// Upper bound on images in one shared-decoder batch.
pub const MAX_SHARED_IMAGES: usize = 64;

/// Fits one table set per image with a single shared decoder.
pub fn fit_shared_decoder<T: Real>(
    images: &[ImageBuffer],
    grid_cfg: GridConfig,
    cfg: TrainConfig,
) -> Result<(Vec<HashGrid<T>>, PixelDecoder<T>, TrainReport)> {
    if images.is_empty() || images.len() > MAX_SHARED_IMAGES {
        return Err(Error::InvalidConfig(format!(
            "shared-decoder batches hold 1..={MAX_SHARED_IMAGES} images, got {}",
            images.len()
        )));
    }
    cfg.validate()?;
    grid_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let decoder = PixelDecoder::random(grid_cfg.input_dim(), cfg.hidden, &mut rng);
    let grids = images
        .iter()
        .map(|_| HashGrid::random(grid_cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ImageBuffer> = images.iter().collect();
    let mut session = Session {
        images: &refs,
        grids,
        decoder,
        cfg,
        train_tables: true,
        train_decoder: true,
        rng,
    };
    let report = session.run()?;
    Ok((session.grids, session.decoder, report))
}

/// Refines `grid` (and the decoder in joint mode) against `image`.
/// In table-only mode the returned decoder is a bit-identical copy.
pub fn finetune<T: Real>(
    grid: &HashGrid<T>,
    decoder: &PixelDecoder<T>,
    image: &ImageBuffer,
    cfg: TrainConfig,
) -> Result<(HashGrid<T>, PixelDecoder<T>, TrainReport)> {
    if !matches!(
        cfg.mode,
        TrainMode::FinetuneTablesOnly | TrainMode::FinetuneJoint
    ) {
        return Err(Error::InvalidConfig(format!(
            "{:?} is not a fine-tuning mode",
            cfg.mode
        )));
    }
    if grid.config().input_dim() != decoder.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("decoder input {}", grid.config().input_dim()),
            got: format!("{}", decoder.input_dim()),
        });
    }
    let refs = [image];
    let mut session = Session {
        images: &refs,
        grids: vec![grid.clone()],
        decoder: decoder.clone(),
        cfg,
        train_tables: true,
        train_decoder: cfg.mode.updates_decoder(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let report = session.run()?;
    Ok((session.grids.pop().unwrap(), session.decoder, report))
}

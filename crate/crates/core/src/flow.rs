//! Optical flow by gradient descent on coordinate displacements.
//!
//! Both frames are hash fields. For a sample pixel `p` of frame A we look for
//! the displacement `d` minimizing `|A'(p) - B'(p + d)|^2`, differentiating
//! B's decoder and multi-sampled features w.r.t. the query coordinate. In
//! patch and image modes all member pixels share one displacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::image::ImageBuffer;
use crate::model::{backward_into, decode_into, DecodedSample, GradSink, HashGrid, PixelDecoder};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Real;
use crate::train::{fit_shared_decoder, TrainConfig};

/// Largest synthetic shift per axis, in pixels.
pub const MAX_SHIFT: i32 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// One displacement per sample pixel.
    Pixel,
    /// One displacement per 3x3 patch centered on the sample.
    Patch,
    /// One displacement shared by every sample.
    Image,
}

impl FlowMode {
    pub const ALL: [FlowMode; 3] = [FlowMode::Pixel, FlowMode::Patch, FlowMode::Image];
}

impl std::str::FromStr for FlowMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "patch" => Ok(Self::Patch),
            "image" => Ok(Self::Image),
            other => Err(format!("unknown flow mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub steps: usize,
    /// Adam step size in pixels.
    pub step_px: f64,
    pub margin: usize,
    pub samples: usize,
    /// Per-axis starting offsets tried in image mode; the lowest final loss wins.
    pub image_starts: Vec<f64>,
    pub adam: AdamConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            step_px: 0.5,
            margin: 50,
            samples: 256,
            image_starts: vec![-32.0, -16.0, 0.0, 16.0, 32.0],
            adam: AdamConfig::default(),
        }
    }
}

/// A decodable frame: tables plus the decoder that reads them.
#[derive(Clone, Copy, Debug)]
pub struct FieldRef<'a, T> {
    pub grid: &'a HashGrid<T>,
    pub decoder: &'a PixelDecoder<T>,
}

#[derive(Clone, Debug)]
pub struct FlowProblem<'a, T> {
    pub a: FieldRef<'a, T>,
    pub b: FieldRef<'a, T>,
    pub width: usize,
    pub height: usize,
    /// Sample pixels `(col, row)` in frame A.
    pub samples: Vec<[usize; 2]>,
    pub mode: FlowMode,
    pub config: FlowConfig,
    /// Ground-truth displacement in pixels, when known.
    pub truth: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimate {
    pub mode: FlowMode,
    pub samples: Vec<[usize; 2]>,
    /// Estimated `(dx, dy)` per sample, in pixels.
    pub displacements: Vec<[f64; 2]>,
    /// Final photometric loss of the group each sample belongs to.
    pub losses: Vec<f64>,
    pub failed: Vec<bool>,
    pub epe: Vec<Option<f64>>,
    pub mean_epe: Option<f64>,
    pub retained: usize,
    pub failures: usize,
}

/// Draws `count` sample pixels at least `margin` pixels from every border.
pub fn sample_pixels(
    width: usize,
    height: usize,
    count: usize,
    margin: usize,
    seed: u64,
) -> Result<Vec<[usize; 2]>> {
    if width <= 2 * margin || height <= 2 * margin || margin == 0 {
        return Err(Error::InvalidConfig(format!(
            "{width}x{height} leaves no interior for margin {margin}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            [
                rng.random_range(margin..width - margin),
                rng.random_range(margin..height - margin),
            ]
        })
        .collect())
}

/// Uniform integer shift with both components in `[-radius, radius]`.
pub fn random_shift(rng: &mut impl Rng, radius: i32) -> [i32; 2] {
    [
        rng.random_range(-radius..=radius),
        rng.random_range(-radius..=radius),
    ]
}

/// Returns `(A, B, truth)` where `B(c) = A(c - shift)` with replicated
/// borders, so a pixel `p` of A reappears at `p + shift` in B.
pub fn synth_translation_pair(
    image: &ImageBuffer,
    shift: [i32; 2],
) -> Result<(ImageBuffer, ImageBuffer, [f64; 2])> {
    let [dx, dy] = shift;
    if dx.abs() > MAX_SHIFT || dy.abs() > MAX_SHIFT {
        return Err(Error::ShiftOutOfRange {
            dx,
            dy,
            radius: MAX_SHIFT,
        });
    }
    let b = translate(image, dx, dy)?;
    Ok((image.clone(), b, [f64::from(dx), f64::from(dy)]))
}

/// Shifts content by `(dx, dy)` pixels, replicating edge pixels into the
/// revealed strip.
pub fn translate(image: &ImageBuffer, dx: i32, dy: i32) -> Result<ImageBuffer> {
    let (w, h) = (image.width() as i64, image.height() as i64);
    ImageBuffer::from_fn(image.width(), image.height(), |c, r| {
        let sc = (c as i64 - i64::from(dx)).clamp(0, w - 1);
        let sr = (r as i64 - i64::from(dy)).clamp(0, h - 1);
        image.get(sc as usize, sr as usize)
    })
}

struct Evaluator<'a, T> {
    b: FieldRef<'a, T>,
    width: f64,
    height: f64,
}

impl<T: Real> Evaluator<'_, T> {
    fn coord(&self, p: [usize; 2], d: [f64; 2]) -> ([T; 2], [bool; 2]) {
        let raw = [
            (p[0] as f64 + 0.5 + d[0]) / self.width,
            (p[1] as f64 + 0.5 + d[1]) / self.height,
        ];
        let inside = [(0.0..=1.0).contains(&raw[0]), (0.0..=1.0).contains(&raw[1])];
        (
            [
                T::lit(raw[0].clamp(0.0, 1.0)),
                T::lit(raw[1].clamp(0.0, 1.0)),
            ],
            inside,
        )
    }

    /// Mean loss over `members` and its gradient w.r.t. `d` in pixels.
    fn loss_and_grad(
        &self,
        members: &[([usize; 2], [T; 3])],
        d: [f64; 2],
        sample: &mut DecodedSample<T>,
    ) -> Result<(f64, [f64; 2])> {
        let n = members.len() as f64;
        let mut loss = 0.0;
        let mut grad = [0.0; 2];
        for (p, target) in members {
            let (x, inside) = self.coord(*p, d);
            decode_into(self.b.grid, self.b.decoder, x, None, sample)?;
            let mut up = [T::zero(); 3];
            for c in 0..3 {
                let r = sample.rgb[c] - target[c];
                loss += r.as_f64() * r.as_f64() / n;
                up[c] = T::lit(2.0 / n) * r;
            }
            let g = backward_into(
                self.b.grid,
                self.b.decoder,
                sample,
                up,
                GradSink::none(),
                true,
            )?;
            if inside[0] {
                grad[0] += g[0].as_f64() / self.width;
            }
            if inside[1] {
                grad[1] += g[1].as_f64() / self.height;
            }
        }
        Ok((loss, grad))
    }

    fn loss(&self, members: &[([usize; 2], [T; 3])], d: [f64; 2]) -> Result<f64> {
        let mut s = DecodedSample::default();
        Ok(self.loss_and_grad(members, d, &mut s)?.0)
    }

    /// Adam descent from `start`; returns `(d, loss)` or `None` on divergence.
    fn descend(
        &self,
        members: &[([usize; 2], [T; 3])],
        start: [f64; 2],
        cfg: &FlowConfig,
    ) -> Result<Option<([f64; 2], f64)>> {
        let mut opt = Adam::<f64>::new(2, cfg.step_px, cfg.adam);
        let mut d = start;
        let mut sample = DecodedSample::default();
        for _ in 0..cfg.steps {
            let (loss, g) = self.loss_and_grad(members, d, &mut sample)?;
            if !loss.is_finite() || !g[0].is_finite() || !g[1].is_finite() {
                return Ok(None);
            }
            opt.step(&mut d, &g);
        }
        let loss = self.loss_and_grad(members, d, &mut sample)?.0;
        Ok(loss.is_finite().then_some((d, loss)))
    }
}

/// Photometric loss of one displacement shared by `pixels`.
pub fn photometric_loss<T: Real>(
    a: FieldRef<'_, T>,
    b: FieldRef<'_, T>,
    width: usize,
    height: usize,
    pixels: &[[usize; 2]],
    d: [f64; 2],
) -> Result<f64> {
    let members = targets(a, width, height, pixels)?;
    Evaluator {
        b,
        width: width as f64,
        height: height as f64,
    }
    .loss(&members, d)
}

/// Analytic gradient of [`photometric_loss`] w.r.t. `d` (pixels).
pub fn photometric_grad<T: Real>(
    a: FieldRef<'_, T>,
    b: FieldRef<'_, T>,
    width: usize,
    height: usize,
    pixels: &[[usize; 2]],
    d: [f64; 2],
) -> Result<[f64; 2]> {
    let members = targets(a, width, height, pixels)?;
    let ev = Evaluator {
        b,
        width: width as f64,
        height: height as f64,
    };
    Ok(ev
        .loss_and_grad(&members, d, &mut DecodedSample::default())?
        .1)
}

fn targets<T: Real>(
    a: FieldRef<'_, T>,
    width: usize,
    height: usize,
    pixels: &[[usize; 2]],
) -> Result<Vec<([usize; 2], [T; 3])>> {
    let mut s = DecodedSample::default();
    pixels
        .iter()
        .map(|&p| {
            let x = [
                T::lit((p[0] as f64 + 0.5) / width as f64),
                T::lit((p[1] as f64 + 0.5) / height as f64),
            ];
            decode_into(a.grid, a.decoder, x, None, &mut s)?;
            Ok((p, s.rgb))
        })
        .collect()
}

fn patch(p: [usize; 2]) -> Vec<[usize; 2]> {
    let mut out = Vec::with_capacity(9);
    for dy in 0..3 {
        for dx in 0..3 {
            out.push([p[0] + dx - 1, p[1] + dy - 1]);
        }
    }
    out
}

/// Estimates the displacement of every sample.
pub fn solve_flow<T: Real>(problem: &FlowProblem<'_, T>) -> Result<FlowEstimate> {
    let cfg = &problem.config;
    let (w, h) = (problem.width, problem.height);
    let margin = cfg.margin.max(if problem.mode == FlowMode::Patch {
        1
    } else {
        0
    });
    for &[x, y] in &problem.samples {
        if x < margin || y < margin || x + margin >= w || y + margin >= h {
            return Err(Error::MarginViolation { x, y, margin });
        }
    }
    if problem.samples.is_empty() {
        return Err(Error::InvalidConfig("flow problem has no samples".into()));
    }
    let ev = Evaluator {
        b: problem.b,
        width: w as f64,
        height: h as f64,
    };

    // (displacement, loss) per group, None when the descent diverged
    let groups: Vec<Option<([f64; 2], f64)>> = match problem.mode {
        FlowMode::Pixel | FlowMode::Patch => problem
            .samples
            .par_iter()
            .map(|&p| {
                let pixels = if problem.mode == FlowMode::Pixel {
                    vec![p]
                } else {
                    patch(p)
                };
                let members = targets(problem.a, w, h, &pixels)?;
                ev.descend(&members, [0.0, 0.0], cfg)
            })
            .collect::<Result<_>>()?,
        FlowMode::Image => {
            let members = targets(problem.a, w, h, &problem.samples)?;
            let starts: Vec<[f64; 2]> = cfg
                .image_starts
                .iter()
                .flat_map(|&sy| cfg.image_starts.iter().map(move |&sx| [sx, sy]))
                .collect();
            let starts = if starts.is_empty() {
                vec![[0.0, 0.0]]
            } else {
                starts
            };
            let runs: Vec<Option<([f64; 2], f64)>> = starts
                .par_iter()
                .map(|&s| ev.descend(&members, s, cfg))
                .collect::<Result<_>>()?;
            // first start wins ties, keeping the choice independent of scheduling
            let best = runs
                .into_iter()
                .flatten()
                .fold(None, |best: Option<([f64; 2], f64)>, r| match best {
                    Some(b) if b.1 <= r.1 => Some(b),
                    _ => Some(r),
                });
            vec![best]
        }
    };

    let n = problem.samples.len();
    let group_of = |i: usize| {
        if problem.mode == FlowMode::Image {
            0
        } else {
            i
        }
    };
    let mut displacements = Vec::with_capacity(n);
    let mut losses = Vec::with_capacity(n);
    let mut failed = Vec::with_capacity(n);
    let mut epe = Vec::with_capacity(n);
    for i in 0..n {
        match groups[group_of(i)] {
            Some((d, l)) => {
                displacements.push(d);
                losses.push(l);
                failed.push(false);
                epe.push(
                    problem
                        .truth
                        .map(|t| ((d[0] - t[0]).powi(2) + (d[1] - t[1]).powi(2)).sqrt()),
                );
            }
            None => {
                displacements.push([f64::NAN; 2]);
                losses.push(f64::NAN);
                failed.push(true);
                epe.push(None);
            }
        }
    }
    let kept: Vec<f64> = epe.iter().flatten().copied().collect();
    let failures = failed.iter().filter(|f| **f).count();
    Ok(FlowEstimate {
        mode: problem.mode,
        samples: problem.samples.clone(),
        displacements,
        losses,
        failed,
        mean_epe: (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64),
        retained: n - failures,
        failures,
        epe,
    })
}

/// One synthetic-translation flow experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCaseResult {
    pub k: usize,
    pub shift: [i32; 2],
    pub fit_psnr: Vec<f64>,
    /// Batch loss of the shared fit at every step.
    pub fit_loss_curve: Vec<f64>,
    pub estimates: Vec<FlowEstimate>,
}

/// Fits A and `B = translate(A, shift)` with one shared decoder, then solves
/// every flow mode on the same sample set.
pub fn run_translation_case(
    image: &ImageBuffer,
    shift: [i32; 2],
    grid_cfg: GridConfig,
    train_cfg: TrainConfig,
    flow_cfg: &FlowConfig,
    sample_seed: u64,
) -> Result<FlowCaseResult> {
    let (a, b, truth) = synth_translation_pair(image, shift)?;
    let (grids, decoder, report) = fit_shared_decoder::<f32>(&[a, b], grid_cfg, train_cfg)?;
    let fa = FieldRef {
        grid: &grids[0],
        decoder: &decoder,
    };
    let fb = FieldRef {
        grid: &grids[1],
        decoder: &decoder,
    };
    let samples = sample_pixels(
        image.width(),
        image.height(),
        flow_cfg.samples,
        flow_cfg.margin,
        sample_seed,
    )?;
    let estimates = FlowMode::ALL
        .iter()
        .map(|&mode| {
            solve_flow(&FlowProblem {
                a: fa,
                b: fb,
                width: image.width(),
                height: image.height(),
                samples: samples.clone(),
                mode,
                config: flow_cfg.clone(),
                truth: Some(truth),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FlowCaseResult {
        k: grid_cfg.k,
        shift,
        fit_psnr: report.final_psnr,
        fit_loss_curve: report.loss_curve,
        estimates,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mean_epe: f64,
    pub samples: usize,
    pub failures: usize,
    pub problems: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub k: usize,
    pub pixel: ModeStats,
    pub patch: ModeStats,
    pub image: ModeStats,
}

impl FlowRow {
    pub fn get(&self, mode: FlowMode) -> &ModeStats {
        match mode {
            FlowMode::Pixel => &self.pixel,
            FlowMode::Patch => &self.patch,
            FlowMode::Image => &self.image,
        }
    }
}

/// Mean EPE per interpolation order and flow mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    pub rows: Vec<FlowRow>,
}

/// Builds the k x mode table. Every k must cover the same shifts.
pub fn flow_report(results: &[FlowCaseResult]) -> Result<FlowTable> {
    let mut ks: Vec<usize> = results.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let shifts_for = |k: usize| {
        results
            .iter()
            .filter(|r| r.k == k)
            .map(|r| r.shift)
            .collect::<Vec<_>>()
    };
    if let Some(&k0) = ks.first() {
        let reference = shifts_for(k0);
        if ks.iter().any(|&k| shifts_for(k) != reference) {
            return Err(Error::ConfigMismatch(
                "flow corpora differ between k values".into(),
            ));
        }
    }
    let rows = ks
        .iter()
        .map(|&k| {
            let stats = |mode: FlowMode| {
                let mut s = ModeStats::default();
                let mut sum = 0.0;
                for r in results.iter().filter(|r| r.k == k) {
                    if let Some(e) = r.estimates.iter().find(|e| e.mode == mode) {
                        s.problems += 1;
                        s.failures += e.failures;
                        for v in e.epe.iter().flatten() {
                            sum += v;
                            s.samples += 1;
                        }
                    }
                }
                s.mean_epe = if s.samples > 0 {
                    sum / s.samples as f64
                } else {
                    f64::NAN
                };
                s
            };
            FlowRow {
                k,
                pixel: stats(FlowMode::Pixel),
                patch: stats(FlowMode::Patch),
                image: stats(FlowMode::Image),
            }
        })
        .collect();
    Ok(FlowTable { rows })
}

impl FlowTable {
    pub fn row(&self, k: usize) -> Option<&FlowRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>3}  {:>12}  {:>12}  {:>12}\n",
            "k", "pixel-wise", "patch-wise", "image-wise"
        );
        for r in &self.rows {
            out += &format!(
                "{:>3}  {:>12.4}  {:>12.4}  {:>12.4}\n",
                r.k, r.pixel.mean_epe, r.patch.mean_epe, r.image.mean_epe
            );
        }
        out += "samples/failures:";
        for r in &self.rows {
            for m in FlowMode::ALL {
                let s = r.get(m);
                out += &format!(" k{}:{:?}={}/{}", r.k, m, s.samples, s.failures);
            }
        }
        out.push('\n');
        out
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Paints each sample's displacement as a 3x3 HSV swatch (hue = direction,
/// value = magnitude relative to the largest) on a mid-gray canvas.
pub fn flow_visualization(
    estimate: &FlowEstimate,
    width: usize,
    height: usize,
) -> Result<ImageBuffer> {
    let max = estimate
        .displacements
        .iter()
        .filter(|d| d[0].is_finite())
        .map(|d| d[0].hypot(d[1]))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut data = vec![0.5f32; width * height * 3];
    for (p, d) in estimate.samples.iter().zip(&estimate.displacements) {
        if !d[0].is_finite() {
            continue;
        }
        let hue = d[1].atan2(d[0]) / std::f64::consts::TAU;
        let rgb = hsv_to_rgb(hue, 1.0, d[0].hypot(d[1]) / max);
        for y in p[1].saturating_sub(1)..(p[1] + 2).min(height) {
            for x in p[0].saturating_sub(1)..(p[0] + 2).min(width) {
                data[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&rgb);
            }
        }
    }
    ImageBuffer::new(width, height, data)
}

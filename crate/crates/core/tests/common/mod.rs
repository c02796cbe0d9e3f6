#![allow(dead_code)]

use std::collections::BTreeMap;

use hashenc::grid::{GridConfig, LevelGeometry, VertexIndex};
use hashenc::interp::axis_stencil;
use hashenc::model::{backward, decode, HashGrid, PixelDecoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook bilinear interpolation over the four corners of the containing cell.
pub fn bilinear(table: &[f64], features: usize, x: [f64; 2], geom: &LevelGeometry) -> Vec<f64> {
    let n = geom.resolution;
    let u = x[0] * f64::from(n);
    let v = x[1] * f64::from(n);
    let i0 = (u.floor() as u32).min(n - 1);
    let j0 = (v.floor() as u32).min(n - 1);
    let (tx, ty) = (u - f64::from(i0), v - f64::from(j0));
    let at = |i, j, f| table[geom.entry_index(VertexIndex::new(i, j)) * features + f];
    (0..features)
        .map(|f| {
            (1.0 - tx) * (1.0 - ty) * at(i0, j0, f)
                + tx * (1.0 - ty) * at(i0 + 1, j0, f)
                + (1.0 - tx) * ty * at(i0, j0 + 1, f)
                + tx * ty * at(i0 + 1, j0 + 1, f)
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradStats {
    pub cases: usize,
    pub rejected: usize,
    pub max_table: f64,
    pub max_decoder: f64,
    pub max_coord: f64,
}

fn rel(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        // both vanish; fall back to an absolute comparison
        if (a - n).abs() < 1e-10 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - n).abs() / scale
    }
}

/// Hidden-unit activity pattern of the decoder for given features.
pub fn relu_pattern(dec: &PixelDecoder<f64>, features: &[f64]) -> Vec<bool> {
    let (h, d) = (dec.hidden(), dec.input_dim());
    let p = dec.params();
    (0..h)
        .map(|u| {
            let mut s = p[h * d + u];
            for (w, z) in p[u * d..(u + 1) * d].iter().zip(features) {
                s += w * z;
            }
            s > 0.0
        })
        .collect()
}

pub fn same_windows(levels: &[LevelGeometry], k: usize, a: [f64; 2], b: [f64; 2]) -> bool {
    levels.iter().all(|l| {
        let n = f64::from(l.resolution);
        (0..2).all(|ax| {
            axis_stencil(a[ax] * n, l.resolution, k).first
                == axis_stencil(b[ax] * n, l.resolution, k).first
        })
    })
}

/// Central finite differences against `backward` for the scalar loss
/// `dot(g, rgb)`: one random table entry, one decoder weight and both
/// coordinates per case, the coordinates with a five-point stencil. Each case
/// draws a fresh model, then redraws the probe point until no perturbation
/// crosses a ReLU kink or a stencil window change.
pub fn gradient_suite(cases: usize, k: usize, seed: u64, h: f64, coord_h: f64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GridConfig::default().with_k(k);
    let levels = cfg.resolution_schedule().unwrap();
    let mut stats = GradStats::default();
    while stats.cases < cases {
        let tables: Vec<f64> = (0..cfg.table_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut grid = HashGrid::from_tables(cfg, tables).unwrap();
        let mut dec = PixelDecoder::<f64>::random(cfg.input_dim(), 64, &mut rng);
        let g = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let loss = |grid: &HashGrid<f64>, dec: &PixelDecoder<f64>, x: [f64; 2]| {
            let s = decode(grid, dec, x).unwrap();
            (0..3).map(|c| g[c] * s.rgb[c]).sum::<f64>()
        };
        loop {
            let x = [rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)];
            // coordinates, probed at offsets +2h, +h, -h, -2h per axis
            let xs: Vec<[f64; 2]> = (0..2)
                .flat_map(|ax| {
                    [2.0, 1.0, -1.0, -2.0].map(|o| {
                        let mut p = x;
                        p[ax] += o * coord_h;
                        p
                    })
                })
                .collect();
            if !xs.iter().all(|&xi| same_windows(&levels, k, x, xi)) {
                stats.rejected += 1;
                continue;
            }
            let sample = decode(&grid, &dec, x).unwrap();
            let pattern = relu_pattern(&dec, &sample.features);
            if !xs.iter().all(|&xi| {
                relu_pattern(&dec, &decode(&grid, &dec, xi).unwrap().features) == pattern
            }) {
                stats.rejected += 1;
                continue;
            }
            let grads = backward(&grid, &dec, &sample, g).unwrap();

            // table entry
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            for &(i, v) in &grads.tables {
                *merged.entry(i).or_default() += v;
            }
            let keys: Vec<usize> = merged.keys().copied().collect();
            let e = keys[rng.random_range(0..keys.len())];
            let orig = grid.tables()[e];
            let mut probe_table = |delta: f64| {
                grid.tables_mut()[e] = orig + delta;
                let out = decode(&grid, &dec, x).unwrap();
                grid.tables_mut()[e] = orig;
                out
            };
            let (sp, sm) = (probe_table(h), probe_table(-h));

            // decoder weight
            let w = rng.random_range(0..dec.size());
            let orig_w = dec.params()[w];
            let mut probe_weight = |delta: f64| {
                dec.params_mut()[w] = orig_w + delta;
                let l = loss(&grid, &dec, x);
                let p = relu_pattern(&dec, &sample.features);
                dec.params_mut()[w] = orig_w;
                (l, p)
            };
            let ((lp, pp), (lm, pm)) = (probe_weight(h), probe_weight(-h));

            if relu_pattern(&dec, &sp.features) != pattern
                || relu_pattern(&dec, &sm.features) != pattern
                || pp != pattern
                || pm != pattern
            {
                stats.rejected += 1;
                continue;
            }

            let dot = |s: &hashenc::model::DecodedSample<f64>| {
                (0..3).map(|c| g[c] * s.rgb[c]).sum::<f64>()
            };
            let fd_t = (dot(&sp) - dot(&sm)) / (2.0 * h);
            let fd_d = (lp - lm) / (2.0 * h);
            // fourth-order central difference
            let five = |p: &[[f64; 2]]| {
                let l: Vec<f64> = p.iter().map(|&xi| loss(&grid, &dec, xi)).collect();
                (-l[0] + 8.0 * l[1] - 8.0 * l[2] + l[3]) / (12.0 * coord_h)
            };
            let (fd_x, fd_y) = (five(&xs[..4]), five(&xs[4..]));
            stats.max_table = stats.max_table.max(rel(merged[&e], fd_t));
            stats.max_decoder = stats.max_decoder.max(rel(grads.decoder[w], fd_d));
            stats.max_coord = stats
                .max_coord
                .max(rel(grads.coord[0], fd_x))
                .max(rel(grads.coord[1], fd_y));
            stats.cases += 1;
            break;
        }
    }
    stats
}

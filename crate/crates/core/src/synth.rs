//! Procedural test images.
//!
//! [`natural_image`] follows the dead-leaves model: occluding discs with a
//! power-law size distribution over a band-limited 1/f texture. It gives
//! scale-invariant edge statistics without shipping a photo corpus.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::ImageBuffer;

struct Wave {
    freq: [f64; 2],
    phase: f64,
    amp: [f64; 3],
}

struct Leaf {
    center: [f64; 2],
    radius: f64,
    color: [f64; 3],
    shade: [f64; 2],
}

fn waves(rng: &mut ChaCha8Rng, count: usize, max_cycles: f64) -> Vec<Wave> {
    (0..count)
        .map(|_| {
            let cycles = max_cycles.powf(rng.random::<f64>()).max(1.0);
            let theta = rng.random::<f64>() * TAU;
            let lum = rng.random_range(-1.0..1.0) / cycles;
            let tint = 0.35 / cycles;
            Wave {
                freq: [cycles * theta.cos(), cycles * theta.sin()],
                phase: rng.random::<f64>() * TAU,
                amp: [
                    lum + rng.random_range(-tint..tint),
                    lum + rng.random_range(-tint..tint),
                    lum + rng.random_range(-tint..tint),
                ],
            }
        })
        .collect()
}

/// A deterministic "natural-looking" RGB image for the given seed.
pub fn natural_image(width: usize, height: usize, seed: u64) -> Result<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e61_7475_7261_6c00);
    let side = width.max(height) as f64;
    let texture = waves(&mut rng, 40, side / 4.0);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));

    // radii follow p(r) ~ r^-3 between r_min and r_max (in pixels)
    let (r_min, r_max) = (side / 40.0, side / 3.0);
    let leaves: Vec<Leaf> = (0..(side * 0.9) as usize)
        .map(|_| {
            let u: f64 = rng.random();
            let inv2 = 1.0 / (r_min * r_min) - u * (1.0 / (r_min * r_min) - 1.0 / (r_max * r_max));
            Leaf {
                center: [
                    rng.random_range(-0.1..1.1) * width as f64,
                    rng.random_range(-0.1..1.1) * height as f64,
                ],
                radius: inv2.sqrt().recip(),
                color: std::array::from_fn(|_| rng.random_range(0.08..0.92)),
                shade: [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)],
            }
        })
        .collect();

    let texture_at = |x: f64, y: f64| -> [f64; 3] {
        let mut acc = [0.0; 3];
        for w in &texture {
            let s = (TAU * (w.freq[0] * x / side + w.freq[1] * y / side) + w.phase).sin();
            for (a, amp) in acc.iter_mut().zip(w.amp) {
                *a += amp * s;
            }
        }
        acc
    };

    const SUB: usize = 2;
    ImageBuffer::from_fn(width, height, |col, row| {
        let mut rgb = [0.0f64; 3];
        for sy in 0..SUB {
            for sx in 0..SUB {
                let x = col as f64 + (sx as f64 + 0.5) / SUB as f64;
                let y = row as f64 + (sy as f64 + 0.5) / SUB as f64;
                // last leaf dropped lies on top
                let hit = leaves.iter().rev().find(|l| {
                    let dx = x - l.center[0];
                    let dy = y - l.center[1];
                    dx * dx + dy * dy <= l.radius * l.radius
                });
                let c = match hit {
                    Some(l) => {
                        let t = [(x - l.center[0]) / l.radius, (y - l.center[1]) / l.radius];
                        let s = l.shade[0] * t[0] + l.shade[1] * t[1];
                        [l.color[0] + s, l.color[1] + s, l.color[2] + s]
                    }
                    None => base,
                };
                for ch in 0..3 {
                    rgb[ch] += c[ch];
                }
            }
        }
        let tex = texture_at(col as f64 + 0.5, row as f64 + 0.5);
        let n = (SUB * SUB) as f64;
        std::array::from_fn(|ch| (rgb[ch] / n + 0.12 * tex[ch]) as f32)
    })
}

/// Two-color checkerboard with `square`-pixel cells.
pub fn checkerboard(
    size: usize,
    square: usize,
    dark: [f32; 3],
    light: [f32; 3],
) -> Result<ImageBuffer> {
    ImageBuffer::from_fn(size, size, |c, r| {
        if (c / square + r / square).is_multiple_of(2) {
            dark
        } else {
            light
        }
    })
}

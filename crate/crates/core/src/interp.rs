//! Lagrange multi-sampling of per-vertex features.
//!
//! Each axis uses `2k` consecutive grid lines, `k` at or below the query and
//! `k` above. Near the border the window slides inward so every node stays a
//! valid vertex. The 2D weights are the tensor product of the two axis bases,
//! so `k = 1` is ordinary bilinear interpolation.

use crate::error::{Error, Result};
use crate::grid::{check_unit, LevelGeometry, VertexIndex, MAX_K};
use crate::scalar::Real;

/// Maximum nodes per axis.
pub const MAX_NODES: usize = 2 * MAX_K;

fn check_nodes<T: Real>(nodes: &[T]) -> Result<()> {
    if nodes.is_empty() || nodes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::DuplicateNodes);
    }
    Ok(())
}

/// Lagrange basis weights `L_i(x) = prod_{j != i} (x - x_j) / (x_i - x_j)`.
pub fn lagrange_basis<T: Real>(x: T, nodes: &[T]) -> Result<Vec<T>> {
    check_nodes(nodes)?;
    Ok((0..nodes.len())
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(T::one(), |acc, (_, &xj)| acc * (x - xj) / (nodes[i] - xj))
        })
        .collect())
}

/// Derivatives `dL_i/dx` of [`lagrange_basis`].
pub fn lagrange_basis_derivative<T: Real>(x: T, nodes: &[T]) -> Result<Vec<T>> {
    check_nodes(nodes)?;
    let n = nodes.len();
    Ok((0..n)
        .map(|i| {
            let xi = nodes[i];
            (0..n)
                .filter(|&m| m != i)
                .map(|m| {
                    let rest = (0..n)
                        .filter(|&j| j != i && j != m)
                        .fold(T::one(), |acc, j| acc * (x - nodes[j]) / (xi - nodes[j]));
                    rest / (xi - nodes[m])
                })
                .sum()
        })
        .collect())
}

/// One axis of a stencil: `len` consecutive grid lines starting at `first`,
/// with basis weights and their derivatives in cell units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisStencil<T> {
    pub first: u32,
    pub len: usize,
    pub weights: [T; MAX_NODES],
    pub derivs: [T; MAX_NODES],
}

impl<T: Real> AxisStencil<T> {
    pub fn lines(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len as u32).map(move |o| self.first + o)
    }
}

/// Builds the `2k`-node stencil around `u`, a position in cell units on an
/// axis with `resolution` cells. Requires `resolution + 1 >= 2k`.
pub fn axis_stencil<T: Real>(u: T, resolution: u32, k: usize) -> AxisStencil<T> {
    let len = 2 * k;
    debug_assert!(resolution as usize + 1 >= len);
    let base = u.floor().to_u32().unwrap_or(0).min(resolution - 1);
    let max_first = resolution + 1 - len as u32;
    let first = (base + 1).saturating_sub(k as u32).min(max_first);
    // local coordinate against integer nodes 0..len
    let t = u - T::from_u32(first).unwrap();

    let mut weights = [T::zero(); MAX_NODES];
    let mut derivs = [T::zero(); MAX_NODES];
    let node = |i: usize| T::from_usize(i).unwrap();
    for i in 0..len {
        let mut w = T::one();
        let mut d = T::zero();
        for m in 0..len {
            if m == i {
                continue;
            }
            let denom = node(i) - node(m);
            w = w * (t - node(m)) / denom;
            let mut rest = T::one() / denom;
            for j in 0..len {
                if j != i && j != m {
                    rest = rest * (t - node(j)) / (node(i) - node(j));
                }
            }
            d += rest;
        }
        weights[i] = w;
        derivs[i] = d;
    }
    AxisStencil {
        first,
        len,
        weights,
        derivs,
    }
}

/// One vertex of a 2D stencil: the table entry it reads and its tensor
/// weight, with the weight's gradient in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StencilTap<T> {
    pub entry: u32,
    pub weight: T,
    pub d_weight: [T; 2],
}

/// Appends the `(2k)^2` taps of `level` at `x`, row-major in `y` then `x`.
/// The caller guarantees `x` lies in the unit square.
pub fn push_level_taps<T: Real>(
    level: &LevelGeometry,
    x: [T; 2],
    k: usize,
    out: &mut Vec<StencilTap<T>>,
) {
    let n = T::from_u32(level.resolution).unwrap();
    let sx = axis_stencil(x[0] * n, level.resolution, k);
    let sy = axis_stencil(x[1] * n, level.resolution, k);
    for (b, j) in sy.lines().enumerate() {
        for (a, i) in sx.lines().enumerate() {
            let entry = level.entry_index(VertexIndex::new(i, j)) as u32;
            out.push(StencilTap {
                entry,
                weight: sx.weights[a] * sy.weights[b],
                d_weight: [
                    sx.derivs[a] * sy.weights[b] * n,
                    sx.weights[a] * sy.derivs[b] * n,
                ],
            });
        }
    }
}

/// Interpolated features of one level at one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSample<T> {
    pub value: Vec<T>,
    /// `grad[axis][f]` is d value[f] / d x[axis] in normalized units.
    pub grad: [Vec<T>; 2],
    /// Distinct table entries with their accumulated interpolation weight.
    pub entries: Vec<(usize, T)>,
}

/// Interpolates one level's table (`T x F`, entry-major) at `x`.
pub fn interpolate_level<T: Real>(
    table: &[T],
    features: usize,
    x: [T; 2],
    level: &LevelGeometry,
    k: usize,
) -> Result<LevelSample<T>> {
    check_unit(x)?;
    if table.len() != level.table_size * features {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", level.table_size * features),
            got: format!("{} values", table.len()),
        });
    }
    if k == 0 || k > MAX_K || (level.resolution as usize) + 1 < 2 * k {
        return Err(Error::InvalidConfig(format!(
            "k={k} not usable at resolution {}",
            level.resolution
        )));
    }
    let mut taps = Vec::with_capacity(4 * k * k);
    push_level_taps(level, x, k, &mut taps);

    let mut value = vec![T::zero(); features];
    let mut grad = [vec![T::zero(); features], vec![T::zero(); features]];
    let mut entries: Vec<(usize, T)> = Vec::with_capacity(taps.len());
    for tap in &taps {
        let e = tap.entry as usize;
        let row = &table[e * features..(e + 1) * features];
        for f in 0..features {
            value[f] += tap.weight * row[f];
            grad[0][f] += tap.d_weight[0] * row[f];
            grad[1][f] += tap.d_weight[1] * row[f];
        }
        match entries.iter_mut().find(|(idx, _)| *idx == e) {
            Some((_, w)) => *w += tap.weight,
            None => entries.push((e, tap.weight)),
        }
    }
    Ok(LevelSample {
        value,
        grad,
        entries,
    })
}

/// Interpolant of a 1D row of node values, as `(position, value, derivative)`
/// triples at `samples` evenly spaced points of `[0, nodes - 1]`.
pub fn trace_1d<T: Real>(values: &[T], k: usize, samples: usize) -> Result<Vec<(T, T, T)>> {
    if values.len() < 2 * k || k == 0 || k > MAX_K {
        return Err(Error::InvalidConfig(format!(
            "{} nodes cannot carry a k={k} stencil",
            values.len()
        )));
    }
    let cells = (values.len() - 1) as u32;
    let span = T::from_u32(cells).unwrap();
    let steps = samples.max(2) - 1;
    Ok((0..=steps)
        .map(|s| {
            let u = span * T::from_usize(s).unwrap() / T::from_usize(steps).unwrap();
            let st = axis_stencil(u, cells, k);
            let (mut v, mut d) = (T::zero(), T::zero());
            for (a, line) in st.lines().enumerate() {
                v += st.weights[a] * values[line as usize];
                d += st.derivs[a] * values[line as usize];
            }
            (u, v, d)
        })
        .collect())
}

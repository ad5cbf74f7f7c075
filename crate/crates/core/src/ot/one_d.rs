use crate::error::{Error, Result};
use crate::histogram::Histogram1D;

/// Monotone luminance map sampled at the source bin centers.
///
/// Pixels are mapped by piecewise-linear interpolation through the knots
/// `(lo, lo')`, `(center_i, dst_i)`, `(hi, hi')`, where `lo'`/`hi'` are the
/// images of the histogram range ends.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMapping1D {
    src_values: Vec<f64>,
    dst_values: Vec<f64>,
    domain: [f64; 2],
    range: [f64; 2],
    cost: f64,
}

impl ColorMapping1D {
    pub fn src_values(&self) -> &[f64] {
        &self.src_values
    }

    pub fn dst_values(&self) -> &[f64] {
        &self.dst_values
    }

    /// Squared-distance cost of the monotone coupling between the two
    /// histograms, viewed as discrete measures on their bin centers.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn apply(&self, v: f64) -> f64 {
        let n = self.src_values.len();
        if v <= self.domain[0] {
            return self.range[0];
        }
        if v >= self.domain[1] {
            return self.range[1];
        }
        let knot_x = |k: usize| match k {
            0 => self.domain[0],
            k if k == n + 1 => self.domain[1],
            k => self.src_values[k - 1],
        };
        let knot_y = |k: usize| match k {
            0 => self.range[0],
            k if k == n + 1 => self.range[1],
            k => self.dst_values[k - 1],
        };
        // First center strictly above v; the segment is [k - 1, k].
        let k = self.src_values.partition_point(|&c| c <= v) + 1;
        let (x0, x1) = (knot_x(k - 1), knot_x(k));
        let (y0, y1) = (knot_y(k - 1), knot_y(k));
        if x1 <= x0 {
            return y1;
        }
        let t = (v - x0) / (x1 - x0);
        y0 + t * (y1 - y0)
    }
}

/// Quantile of a piecewise-uniform density: the smallest position whose
/// cumulative mass reaches `base + extra`, interpolating linearly inside the
/// bin. The offset into the bin is taken as `(base - before) + extra` so a
/// tiny `extra` on top of a large `base` keeps its precision.
fn quantile(edges: &[f64], mass: &[f64], cum: &[f64], base: f64, extra: f64) -> f64 {
    let n = mass.len();
    if base + extra <= 0.0 {
        let j = mass.iter().position(|&m| m > 0.0).unwrap_or(0);
        return edges[j];
    }
    let mut j = cum.partition_point(|&c| c - base < extra);
    while j < n && mass[j] <= 0.0 {
        j += 1;
    }
    if j >= n {
        let j = mass.iter().rposition(|&m| m > 0.0).unwrap_or(n - 1);
        return edges[j + 1];
    }
    let before = if j == 0 { 0.0 } else { cum[j - 1] };
    let t = (((base - before) + extra) / mass[j]).clamp(0.0, 1.0);
    edges[j] + t * (edges[j + 1] - edges[j])
}

fn cumulative(mass: &[f64]) -> Vec<f64> {
    mass.iter()
        .scan(0.0, |acc, &m| {
            *acc += m;
            Some(*acc)
        })
        .collect()
}

pub fn solve_ot_1d(src: &Histogram1D, dst: &Histogram1D) -> Result<ColorMapping1D> {
    if !src.same_bins(dst) {
        return Err(Error::IncompatibleHistograms(format!(
            "{} vs {} luminance bins, or different edges",
            src.n_bins(),
            dst.n_bins()
        )));
    }
    let edges = dst.edges();
    let dst_cum = cumulative(dst.mass());
    let centers = src.centers();

    let mut before = 0.0;
    let mut dst_values = Vec::with_capacity(src.n_bins());
    for &m in src.mass() {
        dst_values.push(quantile(edges, dst.mass(), &dst_cum, before, 0.5 * m));
        before += m;
    }
    let range = [
        quantile(edges, dst.mass(), &dst_cum, 0.0, 0.0),
        quantile(edges, dst.mass(), &dst_cum, f64::INFINITY, 0.0),
    ];
    let cost = monotone_cost(&centers, src.mass(), &dst.centers(), dst.mass());
    let lo = src.edges()[0];
    let hi = src.edges()[src.n_bins()];
    Ok(ColorMapping1D {
        src_values: centers,
        dst_values,
        domain: [lo, hi],
        range,
        cost,
    })
}

/// North-west-corner coupling of two sorted discrete measures, as
/// `(source index, target index, mass)` triples. This is the optimal plan
/// for any convex cost of the difference.
pub fn monotone_coupling(src_mass: &[f64], dst_mass: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(src_mass.len() + dst_mass.len());
    let (mut i, mut j) = (0, 0);
    let mut left_i = src_mass.first().copied().unwrap_or(0.0);
    let mut left_j = dst_mass.first().copied().unwrap_or(0.0);
    while i < src_mass.len() && j < dst_mass.len() {
        let moved = left_i.min(left_j);
        if moved > 0.0 {
            out.push((i, j, moved));
        }
        left_i -= moved;
        left_j -= moved;
        if left_i <= left_j {
            i += 1;
            left_i = src_mass.get(i).copied().unwrap_or(0.0);
        } else {
            j += 1;
            left_j = dst_mass.get(j).copied().unwrap_or(0.0);
        }
    }
    out
}

pub fn monotone_cost(src_pts: &[f64], src_mass: &[f64], dst_pts: &[f64], dst_mass: &[f64]) -> f64 {
    monotone_coupling(src_mass, dst_mass)
        .into_iter()
        .map(|(i, j, m)| m * (src_pts[i] - dst_pts[j]).powi(2))
        .sum()
}

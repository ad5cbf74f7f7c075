use crate::error::{Error, Result};
use crate::ot::TransportPlan;

/// Rows lighter than this keep their own center.
const EMPTY_ROW: f64 = 1e-15;

/// Per-bin chroma map: source bin `i` moves to `dst_points[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMapping2D {
    pub src_centers: Vec<[f64; 2]>,
    pub dst_points: Vec<[f64; 2]>,
    /// Row sums of the coupling.
    pub src_mass: Vec<f64>,
}

impl ColorMapping2D {
    pub fn len(&self) -> usize {
        self.src_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src_centers.is_empty()
    }

    /// `dst_points[i] - src_centers[i]`.
    pub fn displacements(&self) -> Vec<[f64; 2]> {
        self.src_centers
            .iter()
            .zip(&self.dst_points)
            .map(|(s, d)| [d[0] - s[0], d[1] - s[1]])
            .collect()
    }
}

/// Maps each source bin to the coupling-weighted mean of the target centers.
pub fn barycentric_projection(
    plan: &TransportPlan,
    src_centers: &[[f64; 2]],
    dst_centers: &[[f64; 2]],
) -> Result<ColorMapping2D> {
    if src_centers.len() != plan.rows || dst_centers.len() != plan.cols {
        return Err(Error::IncompatibleHistograms(format!(
            "plan is {}x{} but got {} source and {} target centers",
            plan.rows,
            plan.cols,
            src_centers.len(),
            dst_centers.len()
        )));
    }
    let mut dst_points = Vec::with_capacity(plan.rows);
    let mut src_mass = Vec::with_capacity(plan.rows);
    for (i, center) in src_centers.iter().enumerate() {
        let row = plan.row(i);
        let total: f64 = row.iter().sum();
        src_mass.push(total);
        if total < EMPTY_ROW {
            dst_points.push(*center);
            continue;
        }
        // Normalize first so a one-hot row reproduces its target exactly.
        let mut p = [0.0, 0.0];
        for (w, y) in row.iter().zip(dst_centers) {
            let w = w / total;
            p[0] += w * y[0];
            p[1] += w * y[1];
        }
        dst_points.push(p);
    }
    Ok(ColorMapping2D {
        src_centers: src_centers.to_vec(),
        dst_points,
        src_mass,
    })
}

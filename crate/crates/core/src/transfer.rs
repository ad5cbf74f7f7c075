//! Color shift of one image toward a reference image.
//!
//! Luminance is matched exactly by the monotone 1D map. Chrominance moves by
//! a displacement field derived from the entropic coupling between the two
//! (a, b) histograms, interpolated bilinearly over the bin grid and
//! optionally smoothed with an edge-aware filter. Geometry never changes.

use serde::{Deserialize, Serialize};

use crate::color::{lab_to_rgb_with_clamp_rate, rgb_to_lab, LabImage, RgbImage};
use crate::error::{Error, Result};
use crate::histogram::{
    add_floor, build_chroma_hist, build_luminance_hist, Histogram1D, Histogram2D,
    DEFAULT_AB_BINS, DEFAULT_FLOOR, DEFAULT_L_BINS,
};
use crate::ot::{
    barycentric_projection, sinkhorn, solve_ot_1d, ColorMapping1D, KernelMode, SinkhornParams,
    TransportPlan,
};

/// Edge-aware smoothing of the chroma displacement field.
const SMOOTH_RADIUS: isize = 2;
const SMOOTH_SIGMA_SPACE: f64 = 1.5;
/// In ΔE units of the source image.
const SMOOTH_SIGMA_RANGE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub l_bins: usize,
    /// Bins per chroma axis.
    pub ab_bins: usize,
    /// Sinkhorn regularization as a fraction of the largest ground cost.
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Mass added to every histogram bin before solving.
    pub floor: f64,
    pub post_smooth: bool,
    /// Subtract the source-to-source barycentric map instead of the bin
    /// centers when forming chroma displacements; cancels the contraction
    /// that entropic blur adds to the projection.
    pub debias: bool,
    pub kernel: KernelMode,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            l_bins: DEFAULT_L_BINS,
            ab_bins: DEFAULT_AB_BINS,
            epsilon: 0.01,
            tol: 1e-6,
            max_iter: 10_000,
            floor: DEFAULT_FLOOR,
            post_smooth: true,
            debias: true,
            kernel: KernelMode::Dense,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_bins < 2 || self.ab_bins < 2 {
            return Err(Error::Config(format!(
                "bin counts must be at least 2 (l_bins = {}, ab_bins = {})",
                self.l_bins, self.ab_bins
            )));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        for (name, v) in [("epsilon", self.epsilon), ("tol", self.tol), ("floor", self.floor)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn sinkhorn_params(&self) -> SinkhornParams {
        SinkhornParams {
            epsilon: self.epsilon,
            tol: self.tol,
            max_iter: self.max_iter,
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Luminance Wasserstein-1 distance to the reference, before and after.
    pub lum_w1_pre: f64,
    pub lum_w1_post: f64,
    /// Transport cost of the entropic chroma coupling to the reference.
    pub chroma_cost_pre: f64,
    pub chroma_cost_post: f64,
    pub clamped_fraction: f64,
    pub solver_iterations: usize,
    pub solver_converged: bool,
    pub marginal_violation: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Intermediate products of a transfer, for debugging dumps.
#[derive(Debug, Clone)]
pub struct TransferDetail {
    pub src_luminance: Histogram1D,
    pub ref_luminance: Histogram1D,
    pub src_chroma: Histogram2D,
    pub ref_chroma: Histogram2D,
    pub luminance_map: ColorMapping1D,
    /// Solver diagnostics for the source-to-reference chroma plan.
    pub plan_diagnostics: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub image: RgbImage,
    pub report: TransferReport,
    pub detail: TransferDetail,
}

pub fn transfer_colors(
    src: &RgbImage,
    reference: &RgbImage,
    cfg: &TransferConfig,
) -> Result<(RgbImage, TransferReport)> {
    let out = transfer_colors_detailed(src, reference, cfg, None)?;
    Ok((out.image, out.report))
}

/// Like [`transfer_colors`], also returning histograms and maps. With
/// `coupling_min_entry` set, the chroma plan is dumped as sparse JSON.
pub fn transfer_colors_detailed(
    src: &RgbImage,
    reference: &RgbImage,
    cfg: &TransferConfig,
    coupling_min_entry: Option<f64>,
) -> Result<TransferOutcome> {
    cfg.validate()?;
    let src_lab = rgb_to_lab(src);
    let ref_lab = rgb_to_lab(reference);
    let mut warnings = Vec::new();

    let src_l = build_luminance_hist(&src_lab, cfg.l_bins)?;
    let ref_l = build_luminance_hist(&ref_lab, cfg.l_bins)?;
    let src_ab = build_chroma_hist(&src_lab, cfg.ab_bins, cfg.ab_bins)?;
    let ref_ab = build_chroma_hist(&ref_lab, cfg.ab_bins, cfg.ab_bins)?;
    if occupied(ref_l.mass()) == 1 && occupied(ref_ab.mass()) == 1 {
        warnings.push("reference image has a single color; output collapses toward it".into());
    }

    let l_map = solve_ot_1d(&add_floor(&src_l, cfg.floor), &add_floor(&ref_l, cfg.floor))?;

    let src_abf = add_floor(&src_ab, cfg.floor);
    let ref_abf = add_floor(&ref_ab, cfg.floor);
    let params = cfg.sinkhorn_params();
    let plan = sinkhorn(&src_abf, &ref_abf, &params)?;
    if !plan.converged {
        warnings.push(format!(
            "chroma solve stopped at max_iter = {} with marginal violation {:e}",
            cfg.max_iter, plan.marginal_violation
        ));
    }
    let displacement = chroma_displacements(&plan, &src_abf, &ref_abf, cfg)?;
    let plan_diagnostics = coupling_min_entry.map(|min| plan.diagnostics_json(min));
    let (chroma_cost_pre, iterations, converged, violation) = (
        plan.cost_value,
        plan.iterations_used,
        plan.converged,
        plan.marginal_violation,
    );
    drop(plan);

    let mut delta = chroma_field(&src_lab, &src_abf, &displacement);
    if cfg.post_smooth {
        delta = smooth_displacement(&src_lab, &delta);
    }

    let shifted: Vec<[f64; 3]> = src_lab
        .pixels()
        .iter()
        .zip(&delta)
        .map(|(p, d)| [l_map.apply(p[0]), p[1] + d[0], p[2] + d[1]])
        .collect();
    let shifted = LabImage::new(src_lab.width(), src_lab.height(), shifted)?;
    let (image, clamped_fraction) = lab_to_rgb_with_clamp_rate(&shifted);

    let out_lab = rgb_to_lab(&image);
    let out_l = build_luminance_hist(&out_lab, cfg.l_bins)?;
    let out_ab = add_floor(&build_chroma_hist(&out_lab, cfg.ab_bins, cfg.ab_bins)?, cfg.floor);
    let chroma_cost_post = sinkhorn(&out_ab, &ref_abf, &params)?.cost_value;

    let report = TransferReport {
        lum_w1_pre: src_l.wasserstein1(&ref_l)?,
        lum_w1_post: out_l.wasserstein1(&ref_l)?,
        chroma_cost_pre,
        chroma_cost_post,
        clamped_fraction,
        solver_iterations: iterations,
        solver_converged: converged,
        marginal_violation: violation,
        warnings,
    };
    Ok(TransferOutcome {
        image,
        report,
        detail: TransferDetail {
            src_luminance: src_l,
            ref_luminance: ref_l,
            src_chroma: src_ab,
            ref_chroma: ref_ab,
            luminance_map: l_map,
            plan_diagnostics,
        },
    })
}

fn occupied(mass: &[f64]) -> usize {
    mass.iter().filter(|&&m| m > 0.0).count()
}

/// Per-bin chroma displacement on the source grid.
fn chroma_displacements(
    plan: &TransportPlan,
    src: &Histogram2D,
    reference: &Histogram2D,
    cfg: &TransferConfig,
) -> Result<Vec<[f64; 2]>> {
    let to_ref = barycentric_projection(plan, src.centers(), reference.centers())?;
    if !cfg.debias {
        return Ok(to_ref.displacements());
    }
    let to_self = if src == reference {
        to_ref.clone()
    } else {
        let self_plan = sinkhorn(src, src, &cfg.sinkhorn_params())?;
        barycentric_projection(&self_plan, src.centers(), src.centers())?
    };
    Ok(to_ref
        .dst_points
        .iter()
        .zip(&to_self.dst_points)
        .map(|(r, s)| [r[0] - s[0], r[1] - s[1]])
        .collect())
}

/// Bilinear interpolation of the bin displacements, with grid nodes at the
/// geometric bin centers; outside the outermost centers the border value
/// is held.
fn chroma_field(lab: &LabImage, grid: &Histogram2D, disp: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let (na, nb) = (grid.n_a(), grid.n_b());
    let a0 = grid.a_edges()[0];
    let b0 = grid.b_edges()[0];
    let wa = (grid.a_edges()[na] - a0) / na as f64;
    let wb = (grid.b_edges()[nb] - b0) / nb as f64;
    let locate = |v: f64, lo: f64, w: f64, n: usize| -> (usize, f64) {
        let pos = ((v - lo) / w - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        (i, pos - i as f64)
    };
    lab.pixels()
        .iter()
        .map(|p| {
            let (ia, ta) = locate(p[1], a0, wa, na);
            let (ib, tb) = locate(p[2], b0, wb, nb);
            let d00 = disp[ia * nb + ib];
            let d01 = disp[ia * nb + ib + 1];
            let d10 = disp[(ia + 1) * nb + ib];
            let d11 = disp[(ia + 1) * nb + ib + 1];
            let mut out = [0.0; 2];
            for c in 0..2 {
                let lo = d00[c] + tb * (d01[c] - d00[c]);
                let hi = d10[c] + tb * (d11[c] - d10[c]);
                out[c] = lo + ta * (hi - lo);
            }
            out
        })
        .collect()
}

/// Joint bilateral filter on the displacement field, guided by source Lab
/// similarity so displacements do not bleed across color edges.
fn smooth_displacement(lab: &LabImage, delta: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let (w, h) = (lab.width() as isize, lab.height() as isize);
    let px = lab.pixels();
    let inv_space = -0.5 / (SMOOTH_SIGMA_SPACE * SMOOTH_SIGMA_SPACE);
    let inv_range = -0.5 / (SMOOTH_SIGMA_RANGE * SMOOTH_SIGMA_RANGE);
    let mut out = Vec::with_capacity(delta.len());
    for y in 0..h {
        for x in 0..w {
            let center = px[(y * w + x) as usize];
            let (mut acc, mut norm) = ([0.0, 0.0], 0.0);
            for dy in -SMOOTH_RADIUS..=SMOOTH_RADIUS {
                let yy = y + dy;
                if yy < 0 || yy >= h {
                    continue;
                }
                for dx in -SMOOTH_RADIUS..=SMOOTH_RADIUS {
                    let xx = x + dx;
                    if xx < 0 || xx >= w {
                        continue;
                    }
                    let k = (yy * w + xx) as usize;
                    let q = px[k];
                    let dist2 = (q[0] - center[0]).powi(2)
                        + (q[1] - center[1]).powi(2)
                        + (q[2] - center[2]).powi(2);
                    let weight = (((dx * dx + dy * dy) as f64) * inv_space + dist2 * inv_range).exp();
                    acc[0] += weight * delta[k][0];
                    acc[1] += weight * delta[k][1];
                    norm += weight;
                }
            }
            out.push([acc[0] / norm, acc[1] / norm]);
        }
    }
    out
}

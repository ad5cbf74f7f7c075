//! Entropically regularized transport between chroma histograms.
//!
//! The dense solver iterates Sinkhorn scalings against a Gibbs kernel that is
//! re-centered on the current dual potentials whenever a scaling leaves
//! `[1e-100, 1e100]` (absorption). If a kernel column or row underflows
//! completely it switches to plain log-sum-exp updates, which cannot
//! overflow. The separable mode runs log-sum-exp updates one grid axis at a
//! time and needs only `O(n_a n_b (n_a + n_b))` work per iteration, at the
//! price of using geometric bin centers instead of centroids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::Histogram2D;

const ABSORB_HI: f64 = 1e100;
const ABSORB_LO: f64 = 1e-100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    Dense,
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    /// Regularization strength as a fraction of the largest ground cost.
    pub epsilon: f64,
    /// Stop once the largest marginal error drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub kernel: KernelMode,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            tol: 1e-6,
            max_iter: 10_000,
            kernel: KernelMode::Dense,
        }
    }
}

/// Row-major coupling plus solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub coupling: Vec<f64>,
    /// `Σ coupling · cost`, in the solver's ground-cost units.
    pub cost_value: f64,
    pub iterations_used: usize,
    /// Largest absolute row- or column-sum error of the returned coupling.
    pub marginal_violation: f64,
    pub converged: bool,
    /// Absolute regularization actually used.
    pub epsilon: f64,
    /// Column-marginal error observed at each iteration.
    pub trace: Vec<f64>,
}

impl TransportPlan {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coupling[i * self.cols..(i + 1) * self.cols]
    }

    /// Diagnostics as JSON: solver summary, convergence trace and every
    /// coupling entry above `min_entry` as `[i, j, mass]`.
    pub fn diagnostics_json(&self, min_entry: f64) -> serde_json::Value {
        let entries: Vec<(usize, usize, f64)> = self
            .coupling
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > min_entry)
            .map(|(k, &m)| (k / self.cols, k % self.cols, m))
            .collect();
        serde_json::json!({
            "summary": self,
            "coupling_min_entry": min_entry,
            "coupling": entries,
        })
    }
}

/// Ground cost between source row `i` and target column `j`.
pub trait GroundCost: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn fill_row(&self, i: usize, out: &mut [f64]);

    fn max_cost(&self) -> f64 {
        let mut row = vec![0.0; self.cols()];
        let mut max = 0.0f64;
        for i in 0..self.rows() {
            self.fill_row(i, &mut row);
            max = row.iter().copied().fold(max, f64::max);
        }
        max
    }
}

/// Explicit cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::InvalidHistogram(format!(
                "cost matrix {rows}x{cols} with {} entries",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

impl GroundCost for CostMatrix {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
    }
}

/// Squared Euclidean distance between 2D points divided by `scale²`,
/// evaluated on demand.
#[derive(Debug, Clone)]
pub struct PointCost<'a> {
    pub src: &'a [[f64; 2]],
    pub dst: &'a [[f64; 2]],
    pub scale: f64,
}

impl GroundCost for PointCost<'_> {
    fn rows(&self) -> usize {
        self.src.len()
    }
    fn cols(&self) -> usize {
        self.dst.len()
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let p = self.src[i];
        let s2 = self.scale * self.scale;
        for (o, q) in out.iter_mut().zip(self.dst) {
            let (da, db) = (p[0] - q[0], p[1] - q[1]);
            *o = (da * da + db * db) / s2;
        }
    }
}

fn check_marginal(m: &[f64], side: &str) -> Result<()> {
    if let Some(k) = m.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidHistogram(format!(
            "{side} bin {k} has mass {}; floor the histogram before solving",
            m[k]
        )));
    }
    Ok(())
}

fn check_params(epsilon: f64, tol: f64) -> Result<()> {
    if !(epsilon > 0.0) || !(tol > 0.0) {
        return Err(Error::Config(format!(
            "sinkhorn needs epsilon > 0 and tol > 0, got {epsilon} and {tol}"
        )));
    }
    Ok(())
}

/// Entropic transport between two chroma histograms on the same grid, with
/// squared Euclidean cost normalized by the grid diagonal.
pub fn sinkhorn(
    src: &Histogram2D,
    dst: &Histogram2D,
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    if !src.same_grid(dst) {
        return Err(Error::IncompatibleHistograms(
            "chroma histograms use different grids".into(),
        ));
    }
    match params.kernel {
        KernelMode::Dense => {
            let cost = PointCost {
                src: src.centers(),
                dst: dst.centers(),
                scale: src.diagonal(),
            };
            let eps = params.epsilon * cost.max_cost();
            sinkhorn_dense(src.mass(), dst.mass(), &cost, eps, params.tol, params.max_iter)
        }
        KernelMode::Separable => sinkhorn_separable(src, dst, params),
    }
}

/// Dense solver over an arbitrary ground cost. `epsilon` is absolute.
pub fn sinkhorn_dense(
    a: &[f64],
    b: &[f64],
    cost: &dyn GroundCost,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    check_params(epsilon, tol)?;
    check_marginal(a, "source")?;
    check_marginal(b, "target")?;
    let (n, m) = (cost.rows(), cost.cols());
    if a.len() != n || b.len() != m {
        return Err(Error::IncompatibleHistograms(format!(
            "marginals {}x{} vs cost {n}x{m}",
            a.len(),
            b.len()
        )));
    }

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kernel = vec![0.0; n * m];
    fill_kernel(&mut kernel, cost, &f, &g, epsilon);

    let mut trace = Vec::new();
    let mut col = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;
    let mut underflow = false;

    while iterations < max_iter {
        kernel_t_mul(&kernel, &u, &mut col);
        let violation = col
            .iter()
            .zip(&v)
            .zip(b)
            .map(|((s, vj), bj)| (s * vj - bj).abs())
            .fold(0.0, f64::max);
        if iterations > 0 {
            trace.push(violation);
            if violation < tol {
                converged = true;
                break;
            }
        }
        iterations += 1;
        if col.iter().any(|&s| !(s > 0.0)) {
            underflow = true;
            break;
        }
        for ((vj, bj), s) in v.iter_mut().zip(b).zip(&col) {
            *vj = bj / s;
        }
        let mut row_ok = true;
        for (i, ui) in u.iter_mut().enumerate() {
            let row = &kernel[i * m..(i + 1) * m];
            let t: f64 = row.iter().zip(&v).map(|(k, vj)| k * vj).sum();
            if !(t > 0.0) || !t.is_finite() {
                row_ok = false;
                break;
            }
            *ui = a[i] / t;
        }
        if !row_ok {
            underflow = true;
            break;
        }
        let out_of_range = |x: &f64| !(ABSORB_LO..=ABSORB_HI).contains(x);
        if u.iter().any(out_of_range) || v.iter().any(out_of_range) {
            absorb(&mut f, &mut u, epsilon);
            absorb(&mut g, &mut v, epsilon);
            fill_kernel(&mut kernel, cost, &f, &g, epsilon);
        }
    }

    if underflow {
        log::debug!("sinkhorn kernel underflow after {iterations} iterations; using log-domain updates");
        drop(kernel);
        // Potentials from the last finite scalings.
        let f0: Vec<f64> = f.iter().zip(&u).map(|(fi, ui)| fi + epsilon * ui.ln()).collect();
        let g0: Vec<f64> = g.iter().zip(&v).map(|(gj, vj)| gj + epsilon * vj.ln()).collect();
        let (f0, g0) = if f0.iter().chain(&g0).all(|x| x.is_finite()) {
            (f0, g0)
        } else {
            (f, g)
        };
        return sinkhorn_log_from(
            a,
            b,
            cost,
            epsilon,
            tol,
            max_iter,
            LogState {
                f: f0,
                g: g0,
                iterations,
                trace,
            },
        );
    }

    // Scale the kernel in place into the coupling.
    for (i, ui) in u.iter().enumerate() {
        for (k, vj) in kernel[i * m..(i + 1) * m].iter_mut().zip(&v) {
            *k *= ui * vj;
        }
    }
    finish(kernel, a, b, cost, epsilon, iterations, converged, trace)
}

fn absorb(potential: &mut [f64], scaling: &mut [f64], epsilon: f64) {
    for (p, s) in potential.iter_mut().zip(scaling.iter_mut()) {
        *p += epsilon * s.ln();
        *s = 1.0;
    }
}

fn fill_kernel(kernel: &mut [f64], cost: &dyn GroundCost, f: &[f64], g: &[f64], epsilon: f64) {
    let m = g.len();
    let mut row = vec![0.0; m];
    for (i, fi) in f.iter().enumerate() {
        cost.fill_row(i, &mut row);
        for ((k, c), gj) in kernel[i * m..(i + 1) * m].iter_mut().zip(&row).zip(g) {
            *k = ((fi + gj - c) / epsilon).exp();
        }
    }
}

/// `out = Kᵀ u`.
fn kernel_t_mul(kernel: &[f64], u: &[f64], out: &mut [f64]) {
    let m = out.len();
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, ui) in u.iter().enumerate() {
        for (o, k) in out.iter_mut().zip(&kernel[i * m..(i + 1) * m]) {
            *o += k * ui;
        }
    }
}

struct LogState {
    f: Vec<f64>,
    g: Vec<f64>,
    iterations: usize,
    trace: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Plain log-domain Sinkhorn, resuming from the given potentials.
fn sinkhorn_log_from(
    a: &[f64],
    b: &[f64],
    cost: &dyn GroundCost,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
    state: LogState,
) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    let LogState {
        mut f,
        mut g,
        mut iterations,
        mut trace,
    } = state;
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut row = vec![0.0; m];
    let mut col_max = vec![f64::NEG_INFINITY; m];
    let mut col_sum = vec![0.0; m];
    let mut converged = false;

    loop {
        // Column log-sum-exp of (f_i - C_ij) / eps, two passes over rows.
        col_max.iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
        for (i, fi) in f.iter().enumerate() {
            cost.fill_row(i, &mut row);
            for (mx, c) in col_max.iter_mut().zip(&row) {
                *mx = mx.max((fi - c) / epsilon);
            }
        }
        col_sum.iter_mut().for_each(|x| *x = 0.0);
        for (i, fi) in f.iter().enumerate() {
            cost.fill_row(i, &mut row);
            for ((s, c), mx) in col_sum.iter_mut().zip(&row).zip(&col_max) {
                *s += ((fi - c) / epsilon - mx).exp();
            }
        }
        let lse: Vec<f64> = col_max.iter().zip(&col_sum).map(|(mx, s)| mx + s.ln()).collect();
        if lse.iter().any(|x| !x.is_finite()) {
            return Err(Error::SinkhornDiverged(format!(
                "non-finite column potential after {iterations} iterations"
            )));
        }
        let violation = lse
            .iter()
            .zip(&g)
            .zip(b)
            .map(|((l, gj), bj)| ((gj / epsilon + l).exp() - bj).abs())
            .fold(0.0, f64::max);
        if iterations > 0 {
            trace.push(violation);
            if violation < tol {
                converged = true;
                break;
            }
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        for ((gj, lb), l) in g.iter_mut().zip(&log_b).zip(&lse) {
            *gj = epsilon * (lb - l);
        }
        for (i, fi) in f.iter_mut().enumerate() {
            cost.fill_row(i, &mut row);
            let l = log_sum_exp(row.iter().zip(&g).map(|(c, gj)| (gj - c) / epsilon));
            *fi = epsilon * (log_a[i] - l);
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::SinkhornDiverged(format!(
                "non-finite row potential after {iterations} iterations"
            )));
        }
    }

    let mut coupling = vec![0.0; n * m];
    for (i, fi) in f.iter().enumerate() {
        cost.fill_row(i, &mut row);
        for ((p, c), gj) in coupling[i * m..(i + 1) * m].iter_mut().zip(&row).zip(&g) {
            *p = ((fi + gj - c) / epsilon).exp();
        }
    }
    finish(coupling, a, b, cost, epsilon, iterations, converged, trace)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    coupling: Vec<f64>,
    a: &[f64],
    b: &[f64],
    cost: &dyn GroundCost,
    epsilon: f64,
    iterations_used: usize,
    converged: bool,
    trace: Vec<f64>,
) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    if coupling.iter().any(|x| !x.is_finite()) {
        return Err(Error::SinkhornDiverged("non-finite coupling entry".into()));
    }
    let mut coupling = coupling;
    if converged {
        round_to_marginals(&mut coupling, a, b);
    }
    let mut row = vec![0.0; m];
    let mut col_sums = vec![0.0; m];
    let mut violation = 0.0f64;
    let mut cost_value = 0.0;
    for i in 0..n {
        cost.fill_row(i, &mut row);
        let p = &coupling[i * m..(i + 1) * m];
        let mut row_sum = 0.0;
        for ((x, c), cs) in p.iter().zip(&row).zip(col_sums.iter_mut()) {
            row_sum += x;
            *cs += x;
            cost_value += x * c;
        }
        violation = violation.max((row_sum - a[i]).abs());
    }
    for (cs, bj) in col_sums.iter().zip(b) {
        violation = violation.max((cs - bj).abs());
    }
    Ok(TransportPlan {
        rows: n,
        cols: m,
        coupling,
        cost_value,
        iterations_used,
        marginal_violation: violation,
        converged,
        epsilon,
        trace,
    })
}

/// Moves a near-feasible coupling onto the transport polytope: scale rows
/// and then columns down to their targets, and spread the remaining mass as
/// a rank-one correction (Altschuler, Weed and Rigollet, 2017). The result
/// differs from the input by at most twice the marginal violation in L1.
fn round_to_marginals(p: &mut [f64], a: &[f64], b: &[f64]) {
    let m = b.len();
    for (row, &ai) in p.chunks_mut(m).zip(a) {
        let r: f64 = row.iter().sum();
        if r > ai {
            let x = ai / r;
            row.iter_mut().for_each(|v| *v *= x);
        }
    }
    let mut cols = vec![0.0; m];
    for row in p.chunks(m) {
        cols.iter_mut().zip(row).for_each(|(c, v)| *c += v);
    }
    let y: Vec<f64> = cols
        .iter()
        .zip(b)
        .map(|(&c, &bj)| if c > bj { bj / c } else { 1.0 })
        .collect();
    cols.iter_mut().for_each(|c| *c = 0.0);
    let mut err_r = Vec::with_capacity(a.len());
    for (row, &ai) in p.chunks_mut(m).zip(a) {
        let mut r = 0.0;
        for ((v, yj), c) in row.iter_mut().zip(&y).zip(cols.iter_mut()) {
            *v *= yj;
            r += *v;
            *c += *v;
        }
        err_r.push((ai - r).max(0.0));
    }
    let err_c: Vec<f64> = b.iter().zip(&cols).map(|(bj, c)| (bj - c).max(0.0)).collect();
    let total: f64 = err_r.iter().sum();
    if total <= 0.0 {
        return;
    }
    for (row, er) in p.chunks_mut(m).zip(&err_r) {
        let k = er / total;
        row.iter_mut().zip(&err_c).for_each(|(v, ec)| *v += k * ec);
    }
}

/// Log-domain solve with a kernel that factors over the two grid axes.
/// Ground cost uses geometric bin centers.
fn sinkhorn_separable(
    src: &Histogram2D,
    dst: &Histogram2D,
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    check_params(params.epsilon, params.tol)?;
    check_marginal(src.mass(), "source")?;
    check_marginal(dst.mass(), "target")?;
    let (na, nb) = (src.n_a(), src.n_b());
    let diag2 = src.diagonal().powi(2);
    let axis_cost = |edges: &[f64]| -> Vec<f64> {
        let c: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let n = c.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (c[i] - c[j]).powi(2) / diag2;
            }
        }
        out
    };
    let ca = axis_cost(src.a_edges());
    let cb = axis_cost(src.b_edges());
    let max_cost = ca.iter().copied().fold(0.0, f64::max) + cb.iter().copied().fold(0.0, f64::max);
    let eps = params.epsilon * max_cost;

    let log_a: Vec<f64> = src.mass().iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = dst.mass().iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; na * nb];
    let mut g = vec![0.0; na * nb];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    // out(ja, jb) = LSE_{ia, ib} [ (pot(ia, ib) - Ca(ia, ja) - Cb(ib, jb)) / eps ]
    let reduce = |pot: &[f64], out: &mut [f64]| {
        let mut partial = vec![0.0; na * nb];
        let mut buf = vec![0.0; nb.max(na)];
        for ia in 0..na {
            for jb in 0..nb {
                for ib in 0..nb {
                    buf[ib] = (pot[ia * nb + ib] - cb[ib * nb + jb]) / eps;
                }
                partial[ia * nb + jb] = log_sum_exp(buf[..nb].iter().copied());
            }
        }
        for ja in 0..na {
            for jb in 0..nb {
                for ia in 0..na {
                    buf[ia] = partial[ia * nb + jb] - ca[ia * na + ja] / eps;
                }
                out[ja * nb + jb] = log_sum_exp(buf[..na].iter().copied());
            }
        }
    };

    let mut lse = vec![0.0; na * nb];
    loop {
        reduce(&f, &mut lse);
        if lse.iter().any(|x| !x.is_finite()) {
            return Err(Error::SinkhornDiverged(format!(
                "non-finite column potential after {iterations} iterations"
            )));
        }
        let violation = lse
            .iter()
            .zip(&g)
            .zip(dst.mass())
            .map(|((l, gj), bj)| ((gj / eps + l).exp() - bj).abs())
            .fold(0.0, f64::max);
        if iterations > 0 {
            trace.push(violation);
            if violation < params.tol {
                converged = true;
                break;
            }
        }
        if iterations >= params.max_iter {
            break;
        }
        iterations += 1;
        for ((gj, lb), l) in g.iter_mut().zip(&log_b).zip(&lse) {
            *gj = eps * (lb - l);
        }
        reduce(&g, &mut lse);
        for ((fi, la), l) in f.iter_mut().zip(&log_a).zip(&lse) {
            *fi = eps * (la - l);
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::SinkhornDiverged(format!(
                "non-finite row potential after {iterations} iterations"
            )));
        }
    }

    let geometric: Vec<[f64; 2]> = (0..na * nb)
        .map(|k| src.geometric_center(k / nb, k % nb))
        .collect();
    let cost = PointCost {
        src: &geometric,
        dst: &geometric,
        scale: src.diagonal(),
    };
    let n = na * nb;
    let mut coupling = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for (i, fi) in f.iter().enumerate() {
        cost.fill_row(i, &mut row);
        for ((p, c), gj) in coupling[i * n..(i + 1) * n].iter_mut().zip(&row).zip(&g) {
            *p = ((fi + gj - c) / eps).exp();
        }
    }
    finish(
        coupling,
        src.mass(),
        dst.mass(),
        &cost,
        eps,
        iterations,
        converged,
        trace,
    )
}

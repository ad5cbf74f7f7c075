//! Normalized luminance and chrominance histograms.
//!
//! These are the marginals handed to the transport solvers: a 1D histogram
//! over `L ∈ [0, 100]` and a 2D histogram over `(a, b) ∈ [-128, 128)²` that
//! also tracks the mass-weighted centroid of each bin.

use std::fmt::Write as _;

use crate::color::LabImage;
use crate::error::{Error, Result};

pub const L_RANGE: (f64, f64) = (0.0, 100.0);
pub const AB_RANGE: (f64, f64) = (-128.0, 128.0);

pub const DEFAULT_L_BINS: usize = 256;
pub const DEFAULT_AB_BINS: usize = 64;
pub const DEFAULT_FLOOR: f64 = 1e-12;

const MASS_TOL: f64 = 1e-9;

/// Evenly spaced bin boundaries; the last edge is exactly `hi`.
pub fn uniform_edges(lo: f64, hi: f64, n_bins: usize) -> Vec<f64> {
    let mut edges: Vec<f64> = (0..=n_bins)
        .map(|i| lo + (hi - lo) * (i as f64 / n_bins as f64))
        .collect();
    edges[n_bins] = hi;
    edges
}

/// Index of the bin containing `v`. Values on an interior edge belong to
/// the bin above; values outside the range go to the nearest end bin.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    let n_bins = edges.len() - 1;
    let above = edges.partition_point(|&e| e <= v);
    above.saturating_sub(1).min(n_bins - 1)
}

fn check_edges(edges: &[f64], what: &str) -> Result<()> {
    if edges.len() < 3 {
        return Err(Error::InvalidHistogram(format!(
            "{what}: need at least 2 bins"
        )));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidHistogram(format!(
            "{what}: edges must be strictly increasing"
        )));
    }
    Ok(())
}

fn check_mass(mass: &[f64]) -> Result<()> {
    if mass.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::InvalidHistogram(
            "mass must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = mass.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidHistogram(format!(
            "mass sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Common view over both histogram kinds.
pub trait MassHistogram: Clone {
    fn mass(&self) -> &[f64];
    fn mass_mut(&mut self) -> &mut [f64];
}

/// Adds `eps_mass` to every bin and renormalizes to unit total.
/// `eps_mass = 0` returns the input unchanged.
pub fn add_floor<H: MassHistogram>(h: &H, eps_mass: f64) -> H {
    assert!(eps_mass >= 0.0, "floor must be nonnegative");
    let mut out = h.clone();
    if eps_mass == 0.0 {
        return out;
    }
    let mass = out.mass_mut();
    mass.iter_mut().for_each(|m| *m += eps_mass);
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1D {
    edges: Vec<f64>,
    mass: Vec<f64>,
}

impl Histogram1D {
    pub fn new(edges: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        check_edges(&edges, "luminance histogram")?;
        if mass.len() + 1 != edges.len() {
            return Err(Error::InvalidHistogram(format!(
                "{} bins but {} edges",
                mass.len(),
                edges.len()
            )));
        }
        check_mass(&mass)?;
        Ok(Self { edges, mass })
    }

    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Geometric bin midpoints.
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn same_bins(&self, other: &Histogram1D) -> bool {
        self.edges.len() == other.edges.len()
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
    }

    /// Wasserstein-1 distance between the two histograms viewed as discrete
    /// measures on the bin centers.
    pub fn wasserstein1(&self, other: &Histogram1D) -> Result<f64> {
        if !self.same_bins(other) {
            return Err(Error::IncompatibleHistograms(
                "luminance histograms have different bins".into(),
            ));
        }
        let centers = self.centers();
        let (mut cf, mut cg, mut total) = (0.0, 0.0, 0.0);
        for i in 0..self.n_bins() - 1 {
            cf += self.mass[i];
            cg += other.mass[i];
            total += (cf - cg).abs() * (centers[i + 1] - centers[i]);
        }
        Ok(total)
    }

    /// Columnar text dump: `bin lo hi mass`, tab separated.
    pub fn to_columns(&self) -> String {
        let mut out = String::from("bin\tlo\thi\tmass\n");
        for (i, m) in self.mass.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}\t{}\t{m}", self.edges[i], self.edges[i + 1]);
        }
        out
    }
}

impl MassHistogram for Histogram1D {
    fn mass(&self) -> &[f64] {
        &self.mass
    }
    fn mass_mut(&mut self) -> &mut [f64] {
        &mut self.mass
    }
}

/// Joint (a, b) histogram. Bins are stored a-major: bin `(ia, ib)` lives at
/// index `ia * n_b + ib`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    a_edges: Vec<f64>,
    b_edges: Vec<f64>,
    mass: Vec<f64>,
    centers: Vec<[f64; 2]>,
}

impl Histogram2D {
    pub fn new(
        a_edges: Vec<f64>,
        b_edges: Vec<f64>,
        mass: Vec<f64>,
        centers: Vec<[f64; 2]>,
    ) -> Result<Self> {
        check_edges(&a_edges, "chroma histogram (a axis)")?;
        check_edges(&b_edges, "chroma histogram (b axis)")?;
        let n = (a_edges.len() - 1) * (b_edges.len() - 1);
        if mass.len() != n || centers.len() != n {
            return Err(Error::InvalidHistogram(format!(
                "expected {n} bins, got {} masses and {} centers",
                mass.len(),
                centers.len()
            )));
        }
        check_mass(&mass)?;
        let h = Self {
            a_edges,
            b_edges,
            mass,
            centers,
        };
        for (k, c) in h.centers.iter().enumerate() {
            let (ia, ib) = h.coords(k);
            let inside = (h.a_edges[ia]..=h.a_edges[ia + 1]).contains(&c[0])
                && (h.b_edges[ib]..=h.b_edges[ib + 1]).contains(&c[1]);
            if !inside {
                return Err(Error::InvalidHistogram(format!(
                    "center {c:?} of bin ({ia}, {ib}) lies outside the bin"
                )));
            }
        }
        Ok(h)
    }

    /// Histogram with geometric centers for every bin.
    pub fn with_geometric_centers(
        a_edges: Vec<f64>,
        b_edges: Vec<f64>,
        mass: Vec<f64>,
    ) -> Result<Self> {
        let centers = geometric_centers(&a_edges, &b_edges);
        Self::new(a_edges, b_edges, mass, centers)
    }

    pub fn n_a(&self) -> usize {
        self.a_edges.len() - 1
    }

    pub fn n_b(&self) -> usize {
        self.b_edges.len() - 1
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn a_edges(&self) -> &[f64] {
        &self.a_edges
    }

    pub fn b_edges(&self) -> &[f64] {
        &self.b_edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.n_b(), k % self.n_b())
    }

    pub fn index(&self, ia: usize, ib: usize) -> usize {
        ia * self.n_b() + ib
    }

    pub fn geometric_center(&self, ia: usize, ib: usize) -> [f64; 2] {
        [
            0.5 * (self.a_edges[ia] + self.a_edges[ia + 1]),
            0.5 * (self.b_edges[ib] + self.b_edges[ib + 1]),
        ]
    }

    pub fn same_grid(&self, other: &Histogram2D) -> bool {
        self.a_edges == other.a_edges && self.b_edges == other.b_edges
    }

    /// Length of the grid diagonal, used to normalize ground costs.
    pub fn diagonal(&self) -> f64 {
        let da = self.a_edges[self.n_a()] - self.a_edges[0];
        let db = self.b_edges[self.n_b()] - self.b_edges[0];
        (da * da + db * db).sqrt()
    }

    /// Columnar text dump: `bin_a bin_b mass center_a center_b`.
    pub fn to_columns(&self) -> String {
        let mut out = String::from("bin_a\tbin_b\tmass\tcenter_a\tcenter_b\n");
        for (k, (m, c)) in self.mass.iter().zip(&self.centers).enumerate() {
            let (ia, ib) = self.coords(k);
            let _ = writeln!(out, "{ia}\t{ib}\t{m}\t{}\t{}", c[0], c[1]);
        }
        out
    }
}

impl MassHistogram for Histogram2D {
    fn mass(&self) -> &[f64] {
        &self.mass
    }
    fn mass_mut(&mut self) -> &mut [f64] {
        &mut self.mass
    }
}

fn geometric_centers(a_edges: &[f64], b_edges: &[f64]) -> Vec<[f64; 2]> {
    let mut centers = Vec::with_capacity((a_edges.len() - 1) * (b_edges.len() - 1));
    for wa in a_edges.windows(2) {
        for wb in b_edges.windows(2) {
            centers.push([0.5 * (wa[0] + wa[1]), 0.5 * (wb[0] + wb[1])]);
        }
    }
    centers
}

pub fn build_luminance_hist(img: &LabImage, n_bins: usize) -> Result<Histogram1D> {
    if n_bins < 2 {
        return Err(Error::InvalidHistogram(format!(
            "need at least 2 luminance bins, got {n_bins}"
        )));
    }
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let edges = uniform_edges(L_RANGE.0, L_RANGE.1, n_bins);
    let mut counts = vec![0u64; n_bins];
    for p in img.pixels() {
        counts[bin_index(&edges, p[0])] += 1;
    }
    let total = img.len() as f64;
    let mass = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(Histogram1D { edges, mass })
}

pub fn build_chroma_hist(img: &LabImage, n_a: usize, n_b: usize) -> Result<Histogram2D> {
    if n_a < 2 || n_b < 2 {
        return Err(Error::InvalidHistogram(format!(
            "need at least 2 bins per chroma axis, got {n_a}x{n_b}"
        )));
    }
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let a_edges = uniform_edges(AB_RANGE.0, AB_RANGE.1, n_a);
    let b_edges = uniform_edges(AB_RANGE.0, AB_RANGE.1, n_b);
    let mut counts = vec![0u64; n_a * n_b];
    let mut sums = vec![[0.0f64; 2]; n_a * n_b];
    for p in img.pixels() {
        let ia = bin_index(&a_edges, p[1]);
        let ib = bin_index(&b_edges, p[2]);
        let k = ia * n_b + ib;
        counts[k] += 1;
        // Out-of-range values are binned at the border; pull them onto it
        // so the centroid stays inside its bin.
        sums[k][0] += p[1].clamp(a_edges[ia], a_edges[ia + 1]);
        sums[k][1] += p[2].clamp(b_edges[ib], b_edges[ib + 1]);
    }
    let total = img.len() as f64;
    let geometric = geometric_centers(&a_edges, &b_edges);
    let mut mass = Vec::with_capacity(counts.len());
    let mut centers = Vec::with_capacity(counts.len());
    for (k, &c) in counts.iter().enumerate() {
        mass.push(c as f64 / total);
        if c == 0 {
            centers.push(geometric[k]);
        } else {
            let (ia, ib) = (k / n_b, k % n_b);
            let n = c as f64;
            centers.push([
                (sums[k][0] / n).clamp(a_edges[ia], a_edges[ia + 1]),
                (sums[k][1] / n).clamp(b_edges[ib], b_edges[ib + 1]),
            ]);
        }
    }
    Ok(Histogram2D {
        a_edges,
        b_edges,
        mass,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::LabImage;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lab(pixels: Vec<[f64; 3]>) -> LabImage {
        LabImage::new(pixels.len(), 1, pixels).unwrap()
    }

    fn random_lab(n: usize, seed: u64) -> LabImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        lab((0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..=100.0),
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-60.0..60.0),
                ]
            })
            .collect())
    }

    #[test]
    fn constant_luminance_single_bin() {
        let h = build_luminance_hist(&lab(vec![[50.0, 0.0, 0.0]; 37]), 256).unwrap();
        let full: Vec<_> = h.mass().iter().filter(|&&m| m > 0.0).collect();
        assert_eq!(full, vec![&1.0]);
        assert_eq!(bin_index(h.edges(), 50.0), 128);
        assert_eq!(h.mass()[128], 1.0);
    }

    #[test]
    fn extremes_split_evenly() {
        let h = build_luminance_hist(&lab(vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]]), 2).unwrap();
        assert_eq!(h.mass(), &[0.5, 0.5]);
    }

    #[test]
    fn interior_edge_goes_up() {
        let edges = uniform_edges(0.0, 100.0, 4);
        assert_eq!(bin_index(&edges, 25.0), 1);
        assert_eq!(bin_index(&edges, 24.999), 0);
        assert_eq!(bin_index(&edges, 100.0), 3);
        assert_eq!(bin_index(&edges, -3.0), 0);
        assert_eq!(bin_index(&edges, 140.0), 3);
    }

    #[test]
    fn empty_image_and_bad_bins() {
        let empty = LabImage::empty();
        assert!(matches!(build_luminance_hist(&empty, 8), Err(Error::EmptyImage)));
        assert!(matches!(build_chroma_hist(&empty, 8, 8), Err(Error::EmptyImage)));
        let one = lab(vec![[1.0, 0.0, 0.0]]);
        assert!(build_luminance_hist(&one, 1).is_err());
        assert!(build_chroma_hist(&one, 1, 4).is_err());
    }

    #[test]
    fn luminance_matches_counting_oracle() {
        let img = random_lab(10_000, 7);
        let h = build_luminance_hist(&img, 64).unwrap();
        let width = 100.0 / 64.0;
        let mut counts = [0usize; 64];
        for p in img.pixels() {
            // Independent pass: linear scan over explicit bin intervals.
            let mut bin = 63;
            for i in 0..64 {
                let hi = if i == 63 { f64::INFINITY } else { (i + 1) as f64 * width };
                if p[0] < hi {
                    bin = i;
                    break;
                }
            }
            counts[bin] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), img.len());
        for (m, c) in h.mass().iter().zip(counts) {
            assert_eq!(*m, c as f64 / 10_000.0);
        }
    }

    #[test]
    fn constant_color_chroma() {
        let h = build_chroma_hist(&lab(vec![[40.0, 21.5, -7.25]; 10]), 64, 64).unwrap();
        let k = h.mass().iter().position(|&m| m == 1.0).unwrap();
        assert_eq!(h.centers()[k], [21.5, -7.25]);
    }

    #[test]
    fn gray_chroma_lands_on_origin_bin() {
        let img = lab((0..50).map(|i| [i as f64 * 2.0, 0.0, 0.0]).collect());
        let h = build_chroma_hist(&img, 64, 64).unwrap();
        let k = h.index(bin_index(h.a_edges(), 0.0), bin_index(h.b_edges(), 0.0));
        assert_eq!(h.mass()[k], 1.0);
    }

    #[test]
    fn chroma_matches_counting_and_centroid_oracle() {
        let img = random_lab(5_000, 11);
        let h = build_chroma_hist(&img, 16, 16).unwrap();
        let w = 256.0 / 16.0;
        let mut counts = vec![0usize; 256];
        let mut sums = vec![(0.0, 0.0); 256];
        for p in img.pixels() {
            let ia = ((p[1] + 128.0) / w).floor() as usize;
            let ib = ((p[2] + 128.0) / w).floor() as usize;
            counts[ia * 16 + ib] += 1;
            sums[ia * 16 + ib].0 += p[1];
            sums[ia * 16 + ib].1 += p[2];
        }
        assert_eq!(counts.iter().sum::<usize>(), 5_000);
        for k in 0..256 {
            assert_eq!(h.mass()[k], counts[k] as f64 / 5_000.0);
            if counts[k] > 0 {
                let c = h.centers()[k];
                assert!((c[0] - sums[k].0 / counts[k] as f64).abs() < 1e-9);
                assert!((c[1] - sums[k].1 / counts[k] as f64).abs() < 1e-9);
            } else {
                let (ia, ib) = h.coords(k);
                assert_eq!(h.centers()[k], h.geometric_center(ia, ib));
            }
        }
    }

    #[test]
    fn floor_arithmetic() {
        let h = Histogram1D::new(vec![0.0, 50.0, 100.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(add_floor(&h, 0.0), h);
        let f = add_floor(&h, 1.0);
        assert!((f.mass()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.mass()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn w1_of_shifted_point_masses() {
        let edges = uniform_edges(0.0, 100.0, 4);
        let p = Histogram1D::new(edges.clone(), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let q = Histogram1D::new(edges, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((p.wasserstein1(&q).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(p.wasserstein1(&p).unwrap(), 0.0);
    }

    #[test]
    fn columns_have_one_row_per_bin() {
        let h = build_chroma_hist(&random_lab(100, 3), 4, 4).unwrap();
        assert_eq!(h.to_columns().lines().count(), 17);
        let l = build_luminance_hist(&random_lab(100, 3), 8).unwrap();
        assert_eq!(l.to_columns().lines().count(), 9);
    }

    proptest! {
        #[test]
        fn floor_keeps_unit_mass(raw in proptest::collection::vec(0.0f64..10.0, 2..40), eps in 0.0f64..1.0) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let mass: Vec<f64> = raw.iter().map(|m| m / total).collect();
            let h = Histogram1D::new(uniform_edges(0.0, 100.0, mass.len()), mass).unwrap();
            let f = add_floor(&h, eps);
            prop_assert!((f.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(f.mass().iter().all(|&m| m >= 0.0));
        }

        #[test]
        fn luminance_is_order_invariant(seed in 0u64..1000) {
            let img = random_lab(300, seed);
            let mut shuffled = img.pixels().to_vec();
            shuffled.reverse();
            shuffled.rotate_left((seed % 300) as usize);
            let a = build_luminance_hist(&img, 32).unwrap();
            let b = build_luminance_hist(&lab(shuffled), 32).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn built_histograms_sum_to_one(seed in 0u64..1000) {
            let img = random_lab(257, seed);
            let l = build_luminance_hist(&img, 256).unwrap();
            let c = build_chroma_hist(&img, 64, 64).unwrap();
            prop_assert!((l.mass().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((c.mass().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

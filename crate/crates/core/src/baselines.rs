//! Comparison estimators: least squares, orthogonal matching pursuit,
//! spherical k-means with a vMF bridge, and EM with frozen weights.
//!
//! LS and OMP work on the raw observations `y` and assume a unit pilot. The
//! two clustering methods work on the sample set and turn their grouping into
//! a vMF mixture, whose variance profile is the estimate.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{variance_profile, Dictionary, QuadratureSettings, VarianceProfile};
use crate::error::{Error, Result};
use crate::lattice::LatticeEllipse;
use crate::observation::{GramMode, SampleSet, SelectionMap};
use crate::seed;
use crate::vmf::{direction, dot, VmfCluster, VmfMixture};
use crate::wd_em::{self, EmSettings, FitReport, WeightUpdate, ALPHA_MAX, ALPHA_MIN, RATIO_CEIL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// OMP iterations K.
    pub omp_sparsity: usize,
    pub kmeans_k: usize,
    pub gmm_components: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            omp_sparsity: 64,
            kmeans_k: 4,
            gmm_components: 4,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omp_sparsity == 0 || self.kmeans_k == 0 || self.gmm_components == 0 {
            return Err(Error::InvalidSettings(format!(
                "baseline hyperparameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

fn check_len(y: &[Complex64], sel: &SelectionMap, lattice: &LatticeEllipse) -> Result<()> {
    if y.len() != sel.n_rf() {
        return Err(Error::DimensionMismatch {
            expected: sel.n_rf(),
            got: y.len(),
        });
    }
    if sel.picks().last().is_some_and(|&p| p > lattice.len()) {
        return Err(Error::RfChainCount {
            n_rf: sel.n_rf(),
            len: lattice.len(),
        });
    }
    Ok(())
}

/// Minimum-norm least squares under ideal sampling: `|y_i|²` at the picked
/// harmonics, zero elsewhere.
pub fn ls_estimate(
    y: &[Complex64],
    sel: &SelectionMap,
    lattice: &Arc<LatticeEllipse>,
) -> Result<VarianceProfile> {
    check_len(y, sel, lattice)?;
    let mut sigma2 = vec![0.0; lattice.len()];
    for (&p, v) in sel.picks().iter().zip(y) {
        sigma2[p - 1] = v.norm_sqr();
    }
    VarianceProfile::new(lattice.clone(), sigma2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpSolution {
    /// Selected column indices, in selection order.
    pub support: Vec<usize>,
    /// Least-squares coefficients on the support.
    pub coefficients: Vec<Complex64>,
    /// `‖r‖` before the first and after every iteration.
    pub residual_norms: Vec<f64>,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Orthogonal matching pursuit with at most `k` atoms over the given columns.
///
/// Stops early once the residual vanishes or no column correlates with it.
pub fn omp(columns: &[Vec<Complex64>], y: &[Complex64], k: usize) -> Result<OmpSolution> {
    if k == 0 || k > y.len() {
        return Err(Error::Sparsity { k, n_rf: y.len() });
    }
    if let Some(c) = columns.iter().find(|c| c.len() != y.len()) {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: c.len(),
        });
    }
    let norms: Vec<f64> = columns.iter().map(|c| norm(c)).collect();
    let y_norm = norm(y);
    let mut r = y.to_vec();
    let mut residual_norms = vec![y_norm];
    let mut used = vec![false; columns.len()];
    let mut support = Vec::with_capacity(k);
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(k);
    // Upper-triangular factor, stored by column.
    let mut upper: Vec<Vec<Complex64>> = Vec::with_capacity(k);
    for _ in 0..k {
        if norm(&r) <= 1e-13 * y_norm || y_norm == 0.0 {
            break;
        }
        let mut best = None;
        let mut best_corr = 0.0;
        for (j, col) in columns.iter().enumerate() {
            if used[j] || norms[j] == 0.0 {
                continue;
            }
            let corr = inner(col, &r).norm() / norms[j];
            if corr > best_corr {
                best_corr = corr;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        used[j] = true;
        let mut v = columns[j].clone();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); basis.len()];
        // Two Gram-Schmidt passes keep the basis orthonormal to rounding.
        for _ in 0..2 {
            for (c, q) in coeffs.iter_mut().zip(&basis) {
                let h = inner(q, &v);
                *c += h;
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= h * qi;
                }
            }
        }
        let nv = norm(&v);
        if nv <= 1e-12 * norms[j] {
            continue;
        }
        for vi in &mut v {
            *vi /= nv;
        }
        let h = inner(&v, &r);
        for (ri, qi) in r.iter_mut().zip(&v) {
            *ri -= h * qi;
        }
        coeffs.push(Complex64::new(nv, 0.0));
        upper.push(coeffs);
        basis.push(v);
        support.push(j);
        residual_norms.push(norm(&r));
    }
    let z: Vec<Complex64> = basis.iter().map(|q| inner(q, y)).collect();
    let n = support.len();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut acc = z[i];
        for (l, xl) in x.iter().enumerate().skip(i + 1) {
            acc -= upper[l][i] * xl;
        }
        x[i] = acc / upper[i][i];
    }
    Ok(OmpSolution {
        support,
        coefficients: x,
        residual_norms,
    })
}

/// Columns of the effective sensing matrix `B Ψ^H Ψ` (one per harmonic).
pub fn sensing_columns(
    sel: &SelectionMap,
    lattice: &LatticeEllipse,
    gram: GramMode<'_>,
) -> Vec<Vec<Complex64>> {
    let zero = Complex64::new(0.0, 0.0);
    match gram {
        GramMode::Ideal => {
            let mut cols = vec![vec![zero; sel.n_rf()]; lattice.len()];
            for (i, &p) in sel.picks().iter().enumerate() {
                cols[p - 1][i] = Complex64::new(1.0, 0.0);
            }
            cols
        }
        GramMode::Exact(d) => exact_columns(sel, d),
    }
}

fn exact_columns(sel: &SelectionMap, d: &Dictionary) -> Vec<Vec<Complex64>> {
    (0..d.cols())
        .map(|j| {
            sel.picks()
                .iter()
                .map(|&p| d.gram_entry(p - 1, j))
                .collect()
        })
        .collect()
}

/// OMP with `k` atoms; the profile is `|ĝ_m|²` on the recovered support.
pub fn omp_estimate(
    y: &[Complex64],
    sel: &SelectionMap,
    lattice: &Arc<LatticeEllipse>,
    k: usize,
    gram: GramMode<'_>,
) -> Result<VarianceProfile> {
    check_len(y, sel, lattice)?;
    if k == 0 || k > sel.n_rf() {
        return Err(Error::Sparsity {
            k,
            n_rf: sel.n_rf(),
        });
    }
    let cols = sensing_columns(sel, lattice, gram);
    let sol = omp(&cols, y, k)?;
    let mut sigma2 = vec![0.0; lattice.len()];
    for (&j, c) in sol.support.iter().zip(&sol.coefficients) {
        sigma2[j] = c.norm_sqr();
    }
    VarianceProfile::new(lattice.clone(), sigma2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalKMeans {
    /// Unit centroids.
    pub centroids: Vec<[f64; 3]>,
    /// Cluster of each sample.
    pub assignment: Vec<usize>,
    /// `Σ s_i` per cluster.
    pub masses: Vec<f64>,
    /// `Σ s_i x_i` per cluster.
    pub resultants: Vec<[f64; 3]>,
    pub iterations: usize,
}

const KMEANS_MAX_ITER: usize = 300;

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(&v, &v).sqrt();
    (n > 0.0).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn nearest(x: &[f64; 3], centroids: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_cos = f64::NEG_INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let v = dot(x, c);
        if v > best_cos {
            best_cos = v;
            best = j;
        }
    }
    best
}

/// Index drawn with probability proportional to `weights`; `None` when they
/// are all zero.
fn weighted_pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    weights.iter().rposition(|&w| w > 0.0)
}

/// `s`-weighted spherical k-means with k-means++ seeding and hard
/// assignment. Empty clusters are re-seeded at the sample with the largest
/// weighted distance to its centroid.
pub fn spherical_kmeans(samples: &SampleSet, k: usize, seed_: u64) -> Result<SphericalKMeans> {
    if k == 0 {
        return Err(Error::InvalidSettings("k-means needs k >= 1".into()));
    }
    if samples.is_empty() || !(samples.total_power() > 0.0) {
        return Err(Error::NoSignal);
    }
    let mut rng = seed::rng(seed_);
    let xs: Vec<[f64; 3]> = samples
        .points
        .iter()
        .map(|p| direction(p.theta, p.phi))
        .collect();
    let s: Vec<f64> = samples.points.iter().map(|p| p.s).collect();
    let dist = |x: &[f64; 3], c: &[f64; 3]| (1.0 - dot(x, c)).max(0.0);

    let first = weighted_pick(&s, &mut rng).ok_or(Error::NoSignal)?;
    let mut centroids = vec![xs[first]];
    while centroids.len() < k {
        let d2: Vec<f64> = xs
            .iter()
            .zip(&s)
            .map(|(x, &w)| {
                let d = centroids
                    .iter()
                    .map(|c| dist(x, c))
                    .fold(f64::INFINITY, f64::min);
                w * d * d
            })
            .collect();
        let pick = weighted_pick(&d2, &mut rng).unwrap_or(first);
        centroids.push(xs[pick]);
    }

    let mut assignment = vec![usize::MAX; xs.len()];
    let mut iterations = 0;
    loop {
        let next: Vec<usize> = xs.iter().map(|x| nearest(x, &centroids)).collect();
        let changed = next != assignment;
        assignment = next;
        let (masses, resultants) = accumulate(&xs, &s, &assignment, k);
        if !changed || iterations >= KMEANS_MAX_ITER {
            return Ok(SphericalKMeans {
                centroids,
                assignment,
                masses,
                resultants,
                iterations,
            });
        }
        iterations += 1;
        for j in 0..k {
            match normalize(resultants[j]).filter(|_| masses[j] > 0.0) {
                Some(c) => centroids[j] = c,
                None => {
                    let far = xs
                        .iter()
                        .zip(&s)
                        .zip(&assignment)
                        .map(|((x, &w), &a)| w * dist(x, &centroids[a]))
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |b, (i, v)| if v > b.1 { (i, v) } else { b },
                        )
                        .0;
                    centroids[j] = xs[far];
                }
            }
        }
    }
}

fn accumulate(
    xs: &[[f64; 3]],
    s: &[f64],
    assignment: &[usize],
    k: usize,
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let mut masses = vec![0.0; k];
    let mut resultants = vec![[0.0; 3]; k];
    for ((x, &w), &a) in xs.iter().zip(s).zip(assignment) {
        masses[a] += w;
        for d in 0..3 {
            resultants[a][d] += w * x[d];
        }
    }
    (masses, resultants)
}

/// Moment-matched vMF per non-empty k-means cluster: mean direction from the
/// resultant, concentration from its length, weight from the assigned mass.
pub fn kmeans_mixture(samples: &SampleSet, k: usize, seed_: u64) -> Result<VmfMixture> {
    let km = spherical_kmeans(samples, k, seed_)?;
    let total: f64 = km.masses.iter().sum();
    let mut clusters = Vec::new();
    for (&mass, r) in km.masses.iter().zip(&km.resultants) {
        if !(mass > 0.0) {
            continue;
        }
        let len = dot(r, r).sqrt();
        let ratio = (len / mass).clamp(0.0, RATIO_CEIL);
        let alpha = wd_em::inverse_langevin(ratio)?.clamp(ALPHA_MIN, ALPHA_MAX);
        let mu = normalize(*r).unwrap_or([0.0, 0.0, 1.0]);
        let theta = mu[2].clamp(-1.0, 1.0).acos().clamp(1e-9, PI - 1e-9);
        let phi = mu[1].atan2(mu[0]).rem_euclid(2.0 * PI);
        let phi = if phi >= 2.0 * PI { 0.0 } else { phi };
        clusters.push(VmfCluster {
            w: mass / total,
            alpha,
            theta,
            phi,
        });
    }
    VmfMixture::normalized(clusters)
}

pub fn kmeans_estimate(
    samples: &SampleSet,
    k: usize,
    seed_: u64,
    lattice: &Arc<LatticeEllipse>,
    quad: &QuadratureSettings,
) -> Result<VarianceProfile> {
    variance_profile(&kmeans_mixture(samples, k, seed_)?, lattice, quad)
}

/// EM identical to WD-EM except that every weight stays at `1/components`.
pub fn naive_gmm_fit(
    samples: &SampleSet,
    components: usize,
    settings: &EmSettings,
) -> Result<FitReport> {
    let settings = EmSettings {
        max_scatterers: components,
        ..*settings
    };
    wd_em::fit(samples, &settings, WeightUpdate::Frozen)
}

pub fn naive_gmm_estimate(
    samples: &SampleSet,
    components: usize,
    settings: &EmSettings,
    lattice: &Arc<LatticeEllipse>,
    quad: &QuadratureSettings,
) -> Result<(VarianceProfile, FitReport)> {
    let report = naive_gmm_fit(samples, components, settings)?;
    Ok((variance_profile(&report.mixture, lattice, quad)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, ApertureConfig};
    use crate::observation::{build_selection, SamplePoint};

    fn lattice(side: f64) -> Arc<LatticeEllipse> {
        Arc::new(build_lattice(ApertureConfig::square(side, 30e9).unwrap()).unwrap())
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn set(points: Vec<(f64, f64, f64)>) -> SampleSet {
        SampleSet {
            points: points
                .into_iter()
                .map(|(theta, phi, s)| SamplePoint { theta, phi, s })
                .collect(),
            noise_var: 0.0,
            pilot_power: 1.0,
        }
    }

    #[test]
    fn ls_cases() {
        let lat = lattice(0.05);
        let sel = build_selection(&lat, 20).unwrap();
        let mut y = vec![c(0.0, 0.0); 20];
        assert!(ls_estimate(&y, &sel, &lat)
            .unwrap()
            .sigma2()
            .iter()
            .all(|&v| v == 0.0));
        y[3] = c(1.0, -2.0);
        let p = ls_estimate(&y, &sel, &lat).unwrap();
        let nz: Vec<usize> = (0..lat.len()).filter(|&i| p.sigma2()[i] != 0.0).collect();
        assert_eq!(nz, vec![sel.picks()[3] - 1]);
        assert_eq!(p.sigma2()[sel.picks()[3] - 1], 5.0);
        let y: Vec<Complex64> = (0..20).map(|i| c(i as f64 + 1.0, 0.5)).collect();
        let p = ls_estimate(&y, &sel, &lat).unwrap();
        assert!(p.sigma2().iter().filter(|&&v| v != 0.0).count() <= 20);
    }

    #[test]
    fn omp_exact_recovery_ideal() {
        let lat = lattice(0.05);
        let sel = build_selection(&lat, 40).unwrap();
        let mut y = vec![c(0.0, 0.0); 40];
        for (i, v) in [(2, c(1.0, 1.0)), (17, c(-0.5, 0.0)), (33, c(0.0, 2.0))] {
            y[i] = v;
        }
        let p = omp_estimate(&y, &sel, &lat, 3, GramMode::Ideal).unwrap();
        for (i, v) in [(2, 2.0), (17, 0.25), (33, 4.0)] {
            assert!((p.sigma2()[sel.picks()[i] - 1] - v).abs() < 1e-12);
        }
        assert_eq!(p.sigma2().iter().filter(|&&v| v != 0.0).count(), 3);
        assert!(matches!(
            omp_estimate(&y, &sel, &lat, 0, GramMode::Ideal),
            Err(Error::Sparsity { .. })
        ));
        assert!(matches!(
            omp_estimate(&y, &sel, &lat, 41, GramMode::Ideal),
            Err(Error::Sparsity { .. })
        ));
    }

    #[test]
    fn omp_full_sparsity_matches_ls_support() {
        let lat = lattice(0.05);
        let sel = build_selection(&lat, 10).unwrap();
        let y: Vec<Complex64> = (0..10).map(|i| c(1.0 + i as f64, -(i as f64))).collect();
        let o = omp_estimate(&y, &sel, &lat, 10, GramMode::Ideal).unwrap();
        let l = ls_estimate(&y, &sel, &lat).unwrap();
        for (a, b) in o.sigma2().iter().zip(l.sigma2()) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn omp_generic_recovery_and_residuals() {
        // Random Gaussian 30 x 80 matrix, 4-sparse signal.
        let mut rng = seed::rng(5);
        let cols: Vec<Vec<Complex64>> = (0..80)
            .map(|_| {
                (0..30)
                    .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                    .collect()
            })
            .collect();
        let truth = [
            (7, c(1.0, 0.0)),
            (21, c(-2.0, 1.0)),
            (50, c(0.0, 1.5)),
            (66, c(0.8, -0.8)),
        ];
        let mut y = vec![c(0.0, 0.0); 30];
        for &(j, v) in &truth {
            for (yi, a) in y.iter_mut().zip(&cols[j]) {
                *yi += a * v;
            }
        }
        let sol = omp(&cols, &y, 4).unwrap();
        let mut sup = sol.support.clone();
        sup.sort();
        assert_eq!(sup, vec![7, 21, 50, 66]);
        for (&j, x) in sol.support.iter().zip(&sol.coefficients) {
            let t = truth.iter().find(|t| t.0 == j).unwrap().1;
            assert!((x - t).norm() < 1e-9);
        }
        let noisy: Vec<Complex64> = (0..30).map(|_| c(rng.random(), rng.random())).collect();
        let sol = omp(&cols, &noisy, 12).unwrap();
        for w in sol.residual_norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn exact_gram_columns_match_ideal_on_orthonormal_dictionary() {
        let lat = lattice(0.05);
        let d =
            crate::channel::build_dictionary(&lat, crate::channel::DEFAULT_ELEMENT_BUDGET).unwrap();
        let sel = build_selection(&lat, 8).unwrap();
        let ideal = sensing_columns(&sel, &lat, GramMode::Ideal);
        let exact = sensing_columns(&sel, &lat, GramMode::Exact(&d));
        for (a, b) in ideal.iter().zip(&exact) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).norm() < 0.2);
            }
        }
    }

    #[test]
    fn kmeans_single_point() {
        let samples = set(vec![(0.7, 1.2, 1.0); 6]);
        let m = kmeans_mixture(&samples, 4, 3).unwrap();
        assert_eq!(m.len(), 1);
        let cl = m.clusters()[0];
        assert_eq!(cl.alpha, ALPHA_MAX);
        assert!((cl.theta - 0.7).abs() < 1e-9 && (cl.phi - 1.2).abs() < 1e-9);
        assert_eq!(cl.w, 1.0);
    }

    #[test]
    fn kmeans_k1_is_weighted_mean() {
        let samples = set(vec![(0.3, 0.2, 1.0), (0.5, 1.0, 3.0), (0.9, 2.0, 0.5)]);
        let km = spherical_kmeans(&samples, 1, 0).unwrap();
        let mut r = [0.0; 3];
        for p in &samples.points {
            let x = direction(p.theta, p.phi);
            for d in 0..3 {
                r[d] += p.s * x[d];
            }
        }
        let r = normalize(r).unwrap();
        let got = normalize(km.resultants[0]).unwrap();
        for d in 0..3 {
            assert!((r[d] - got[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_two_blobs() {
        let mut rng = seed::rng(11);
        let centres = [(0.4, 1.0), (1.1, 4.0)];
        let mut pts = Vec::new();
        for &(t, p) in &centres {
            for _ in 0..50 {
                pts.push((
                    t + (rng.random::<f64>() - 0.5) * 0.02,
                    p + (rng.random::<f64>() - 0.5) * 0.02,
                    1.0,
                ));
            }
        }
        let samples = set(pts);
        let m = kmeans_mixture(&samples, 2, 4).unwrap();
        assert_eq!(m.len(), 2);
        for &(t, p) in &centres {
            let x = direction(t, p);
            let best = m
                .clusters()
                .iter()
                .map(|c| dot(&x, &c.mean_direction()).clamp(-1.0, 1.0).acos())
                .fold(f64::INFINITY, f64::min);
            assert!(best.to_degrees() < 2.0, "{}", best.to_degrees());
        }
        let w = m.weights();
        assert!((w[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn naive_gmm_keeps_weights_and_ascends() {
        let truth = crate::vmf::random_scene(3, 2).unwrap();
        let pts: Vec<(f64, f64, f64)> = (0..120)
            .map(|i| {
                let theta = 0.05 + 1.4 * (i as f64 / 120.0);
                let phi = (i as f64 * 2.399).rem_euclid(2.0 * PI);
                (
                    theta,
                    phi,
                    crate::vmf::mixture_density(theta, phi, &truth).unwrap(),
                )
            })
            .collect();
        let settings = EmSettings {
            restarts: 2,
            ..EmSettings::default()
        };
        let r = naive_gmm_fit(&set(pts), 3, &settings).unwrap();
        assert_eq!(r.mixture.len(), 3);
        assert!(r
            .mixture
            .weights()
            .iter()
            .all(|&w| (w - 1.0 / 3.0).abs() < 1e-12));
        for w in r.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }
}

//! Weighted EM for vMF mixtures on wavenumber-domain samples (WD-EM).
//!
//! Each sample `(θ_i, φ_i, s_i)` acts as a point mass `s_i` on the sphere. The
//! E-step splits `s_i` across clusters in proportion to `w_j p_j(θ_i, φ_i)`;
//! the M-step updates, per cluster and in this order, the azimuth, the zenith,
//! the concentration (by inverting the Langevin function) and finally the
//! weights. All angle updates depend only on the responsibility-weighted
//! resultant `r_j = Σ_i ŝ_{i,j} x_i`:
//!
//! * `μ₁ = r_y`, `η₁ = r_x`, φ̂ = arctan(μ₁/η₁) with quadrant offsets;
//! * `μ₂ = r_x cos φ̂ + r_y sin φ̂`, `η₂ = r_z`, θ̂ = arctan(μ₂/η₂) (+π when
//!   `μ₂η₂ < 0`);
//! * `coth α̂ − 1/α̂ = μ₃/η₃` with `μ₃ = ⟨r_j, μ(θ̂, φ̂)⟩`, `η₃ = Σ_i ŝ_{i,j}`.
//!
//! The monitored objective is `Σ_i s_i log Σ_j w_j p_j(θ_i, φ_i)`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::SampleSet;
use crate::seed;
use crate::vmf::{direction, dot, VmfCluster, VmfMixture};

/// Upper clamp on fitted concentrations; keeps `sinh` representable.
pub const ALPHA_MAX: f64 = 700.0;
/// Lower clamp on fitted concentrations.
pub const ALPHA_MIN: f64 = 1e-9;
/// Mean resultant lengths are clamped below this before inversion.
pub const RATIO_CEIL: f64 = 1.0 - 1e-12;
/// Fitted zeniths are kept inside `[ε, π − ε]`.
const THETA_EPS: f64 = 1e-9;
/// Columns carrying less than this fraction of the total mass are starved.
const STARVED_FRACTION: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmSettings {
    /// Cluster budget Ñ_c.
    pub max_scatterers: usize,
    /// Relative change of the objective that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Independent initialisations; the best final objective wins.
    pub restarts: usize,
    /// Clusters lighter than this are dropped after convergence.
    pub prune_weight: f64,
    pub seed: u64,
}

impl Default for EmSettings {
    fn default() -> Self {
        EmSettings {
            max_scatterers: 4,
            tol: 1e-6,
            max_iter: 500,
            restarts: 5,
            prune_weight: 0.01,
            seed: 0,
        }
    }
}

impl EmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_scatterers == 0 || !(self.tol > 0.0) || self.max_iter == 0 || self.restarts == 0
        {
            return Err(Error::InvalidSettings(format!(
                "EM needs max_scatterers, tol, max_iter, restarts > 0: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.prune_weight) {
            return Err(Error::InvalidSettings(format!(
                "prune_weight {} outside [0, 1)",
                self.prune_weight
            )));
        }
        Ok(())
    }
}

/// `ŝ_{i,j}`, row-major `N_RF × Ñ_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    rows: usize,
    cols: usize,
    shat: Vec<f64>,
}

impl Responsibilities {
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.shat[i * self.cols + j]
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.shat[i * self.cols..(i + 1) * self.cols]
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
    pub fn column_mass(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, j)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mixture: VmfMixture,
    pub iterations: usize,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Clusters removed as starved during the loop or pruned at the end.
    pub pruned: usize,
    /// Index of the winning restart.
    pub restart: usize,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Samples with their unit vectors and `log |sin θ|` precomputed.
struct Prepared {
    dirs: Vec<[f64; 3]>,
    s: Vec<f64>,
    log_sin: Vec<f64>,
    total: f64,
}

impl Prepared {
    fn new(samples: &SampleSet) -> Result<Self> {
        let total = samples.total_power();
        if samples.is_empty() || !(total > 0.0) || !total.is_finite() {
            return Err(Error::NoSignal);
        }
        let dirs = samples
            .points
            .iter()
            .map(|p| direction(p.theta, p.phi))
            .collect();
        let s = samples.points.iter().map(|p| p.s).collect();
        // sin θ = 0 only at the pole, where the Jacobian term is a
        // parameter-free constant and is left out.
        let log_sin = samples
            .points
            .iter()
            .map(|p| {
                let v = p.theta.sin().abs();
                if v > 0.0 {
                    v.ln()
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Prepared {
            dirs,
            s,
            log_sin,
            total,
        })
    }

    /// Responsibility-weighted resultant of one column.
    fn resultant(&self, col: impl Iterator<Item = f64>) -> ([f64; 3], f64) {
        let mut r = [0.0; 3];
        let mut mass = 0.0;
        for (w, x) in col.zip(&self.dirs) {
            r[0] += w * x[0];
            r[1] += w * x[1];
            r[2] += w * x[2];
            mass += w;
        }
        (r, mass)
    }
}

/// `log(w_j) + log C_j` and mean directions of the active clusters.
fn log_terms(clusters: &[VmfCluster]) -> Vec<(f64, f64, [f64; 3])> {
    clusters
        .iter()
        .map(|c| {
            let lw = if c.w > 0.0 {
                c.w.ln()
            } else {
                f64::NEG_INFINITY
            };
            (
                lw + crate::vmf::log_normalizer(c.alpha),
                c.alpha,
                c.mean_direction(),
            )
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn e_step_prepared(p: &Prepared, clusters: &[VmfCluster]) -> Responsibilities {
    let terms = log_terms(clusters);
    let k = clusters.len();
    let mut shat = Vec::with_capacity(p.s.len() * k);
    let mut lp = vec![0.0; k];
    for (x, &s) in p.dirs.iter().zip(&p.s) {
        for (l, (lw, alpha, mu)) in lp.iter_mut().zip(&terms) {
            *l = lw + alpha * dot(x, mu);
        }
        let lse = log_sum_exp(&lp);
        if lse.is_finite() {
            shat.extend(lp.iter().map(|l| s * (l - lse).exp()));
        } else {
            // Every component underflowed: fall back to the current weights.
            shat.extend(clusters.iter().map(|c| s * c.w));
        }
    }
    Responsibilities {
        rows: p.s.len(),
        cols: k,
        shat,
    }
}

fn log_likelihood_prepared(p: &Prepared, clusters: &[VmfCluster]) -> f64 {
    let terms = log_terms(clusters);
    let mut lp = vec![0.0; clusters.len()];
    let mut total = 0.0;
    for ((x, &s), ls) in p.dirs.iter().zip(&p.s).zip(&p.log_sin) {
        if s == 0.0 {
            continue;
        }
        for (l, (lw, alpha, mu)) in lp.iter_mut().zip(&terms) {
            *l = lw + alpha * dot(x, mu);
        }
        total += s * (log_sum_exp(&lp) + ls);
    }
    total
}

/// Splits every `s_i` across the clusters in proportion to `w_j p_j(θ_i, φ_i)`.
pub fn e_step(samples: &SampleSet, mixture: &VmfMixture) -> Result<Responsibilities> {
    let p = Prepared::new(samples)?;
    Ok(e_step_prepared(&p, mixture.clusters()))
}

/// `Σ_i s_i log Σ_j w_j p_j(θ_i, φ_i)`; samples at the pole drop their
/// `log sin θ` term.
pub fn weighted_log_likelihood(samples: &SampleSet, mixture: &VmfMixture) -> f64 {
    match Prepared::new(samples) {
        Ok(p) => log_likelihood_prepared(&p, mixture.clusters()),
        Err(_) => 0.0,
    }
}

fn azimuth_from(mu1: f64, eta1: f64, previous: f64) -> f64 {
    let phi = if eta1 > 0.0 {
        let base = (mu1 / eta1).atan();
        if mu1 > 0.0 {
            base
        } else if mu1 < 0.0 {
            base + 2.0 * PI
        } else {
            0.0
        }
    } else if eta1 < 0.0 {
        (mu1 / eta1).atan() + PI
    } else if mu1 > 0.0 {
        FRAC_PI_2
    } else if mu1 < 0.0 {
        3.0 * FRAC_PI_2
    } else {
        previous
    };
    if phi >= 2.0 * PI {
        phi - 2.0 * PI
    } else {
        phi
    }
}

fn zenith_from(mu2: f64, eta2: f64) -> f64 {
    let p = mu2 * eta2;
    let theta = if p > 0.0 {
        (mu2 / eta2).atan()
    } else if p < 0.0 {
        (mu2 / eta2).atan() + PI
    } else if eta2 == 0.0 {
        FRAC_PI_2
    } else if eta2 > 0.0 {
        0.0
    } else {
        PI
    };
    theta.clamp(THETA_EPS, PI - THETA_EPS)
}

fn concentration_from(ratio: f64) -> f64 {
    let r = ratio.clamp(0.0, RATIO_CEIL);
    inverse_langevin(r)
        .unwrap_or(ALPHA_MAX)
        .clamp(ALPHA_MIN, ALPHA_MAX)
}

fn column_check(col: &[f64], samples: &SampleSet) -> Result<Prepared> {
    if col.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: col.len(),
        });
    }
    let p = Prepared::new(samples)?;
    if !(col.iter().sum::<f64>() > 0.0) {
        return Err(Error::StarvedCluster(0));
    }
    Ok(p)
}

/// Azimuth update from one responsibility column. `previous` is returned when
/// the column's horizontal resultant vanishes.
pub fn m_step_azimuth(col: &[f64], samples: &SampleSet, previous: f64) -> Result<f64> {
    let p = column_check(col, samples)?;
    let (r, _) = p.resultant(col.iter().copied());
    Ok(azimuth_from(r[1], r[0], previous))
}

/// Zenith update given the already-updated azimuth.
pub fn m_step_zenith(col: &[f64], samples: &SampleSet, phi_hat: f64) -> Result<f64> {
    let p = column_check(col, samples)?;
    let (r, _) = p.resultant(col.iter().copied());
    let (sp, cp) = phi_hat.sin_cos();
    Ok(zenith_from(r[0] * cp + r[1] * sp, r[2]))
}

/// Concentration update given the updated angles, clamped to
/// `[ALPHA_MIN, ALPHA_MAX]`.
pub fn m_step_concentration(
    col: &[f64],
    samples: &SampleSet,
    theta_hat: f64,
    phi_hat: f64,
) -> Result<f64> {
    let p = column_check(col, samples)?;
    let (r, mass) = p.resultant(col.iter().copied());
    Ok(concentration_from(
        dot(&r, &direction(theta_hat, phi_hat)) / mass,
    ))
}

/// `ŵ_j = Σ_i ŝ_{i,j} / Σ_{i,j} ŝ_{i,j}`.
pub fn m_step_weights(resp: &Responsibilities) -> Result<Vec<f64>> {
    let masses: Vec<f64> = (0..resp.cols).map(|j| resp.column_mass(j)).collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoSignal);
    }
    Ok(masses.into_iter().map(|m| m / total).collect())
}

/// Langevin function `coth α − 1/α`.
pub fn langevin(alpha: f64) -> f64 {
    if alpha.abs() < 1e-3 {
        let a2 = alpha * alpha;
        alpha * (1.0 / 3.0 - a2 * (1.0 / 45.0 - a2 * (2.0 / 945.0)))
    } else {
        1.0 / alpha.tanh() - 1.0 / alpha
    }
}

fn langevin_derivative(alpha: f64) -> f64 {
    if alpha.abs() < 1e-3 {
        let a2 = alpha * alpha;
        1.0 / 3.0 - a2 * (1.0 / 15.0 - a2 * (2.0 / 189.0))
    } else if alpha > 30.0 {
        1.0 / (alpha * alpha)
    } else {
        let sh = alpha.sinh();
        1.0 / (alpha * alpha) - 1.0 / (sh * sh)
    }
}

/// Solves `coth α − 1/α = r` for `r ∈ [0, 1)`.
///
/// Newton from `r(3 − r²)/(1 − r²)`, kept inside the bracket
/// `[3r, 1/(1 − r)]` with bisection whenever a step leaves it. The result is
/// not clamped; callers apply [`ALPHA_MAX`].
pub fn inverse_langevin(r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InfeasibleConcentration(r));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (3.0 * r, 1.0 / (1.0 - r));
    let mut x = (r * (3.0 - r * r) / (1.0 - r * r)).clamp(lo, hi);
    for _ in 0..200 {
        let f = langevin(x) - r;
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = f / langevin_derivative(x);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x || hi - lo <= 4.0 * f64::EPSILON * x {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// `ŵ = 1/Ñ_c`, `α̂ = 1`, θ̂ ~ U(0, π/2), φ̂ ~ U(0, 2π).
pub fn init_params_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<VmfMixture> {
    if n == 0 {
        return Err(Error::InvalidSettings("need at least one cluster".into()));
    }
    let w = 1.0 / n as f64;
    let clusters = (0..n)
        .map(|_| {
            let theta = loop {
                let t = rng.random_range(0.0..FRAC_PI_2);
                if t > 0.0 {
                    break t;
                }
            };
            let phi = rng.random_range(0.0..2.0 * PI);
            VmfCluster {
                w,
                alpha: 1.0,
                theta,
                phi,
            }
        })
        .collect();
    VmfMixture::normalized(clusters)
}

pub fn init_params(settings: &EmSettings) -> Result<VmfMixture> {
    init_params_with(settings.max_scatterers, &mut seed::rng(settings.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WeightUpdate {
    Free,
    /// Weights stay at their initial `1/Ñ_c`.
    Frozen,
}

fn m_step_prepared(
    p: &Prepared,
    resp: &Responsibilities,
    clusters: &[VmfCluster],
    mode: WeightUpdate,
) -> (Vec<VmfCluster>, usize) {
    let mut next = Vec::with_capacity(clusters.len());
    let mut starved = 0;
    for (j, c) in clusters.iter().enumerate() {
        let (r, mass) = p.resultant((0..resp.rows).map(|i| resp.get(i, j)));
        if !(mass > STARVED_FRACTION * p.total) {
            match mode {
                WeightUpdate::Free => starved += 1,
                WeightUpdate::Frozen => next.push(*c),
            }
            continue;
        }
        let phi = azimuth_from(r[1], r[0], c.phi);
        let (sp, cp) = phi.sin_cos();
        let theta = zenith_from(r[0] * cp + r[1] * sp, r[2]);
        let alpha = concentration_from(dot(&r, &direction(theta, phi)) / mass);
        let w = match mode {
            WeightUpdate::Free => mass / p.total,
            WeightUpdate::Frozen => c.w,
        };
        next.push(VmfCluster {
            w,
            alpha,
            theta,
            phi,
        });
    }
    (next, starved)
}

fn renormalize(mut clusters: Vec<VmfCluster>) -> Vec<VmfCluster> {
    let total: f64 = clusters.iter().map(|c| c.w).sum();
    for c in &mut clusters {
        c.w /= total;
    }
    clusters
}

/// One EM run from a given initialisation.
pub(crate) fn fit_from(
    samples: &SampleSet,
    init: &VmfMixture,
    settings: &EmSettings,
    mode: WeightUpdate,
) -> Result<FitReport> {
    settings.validate()?;
    let p = Prepared::new(samples)?;
    let mut clusters = init.clusters().to_vec();
    let mut trace = vec![log_likelihood_prepared(&p, &clusters)];
    let mut converged = false;
    let mut iterations = 0;
    let mut removed = 0;
    for _ in 0..settings.max_iter {
        let resp = e_step_prepared(&p, &clusters);
        let (next, starved) = m_step_prepared(&p, &resp, &clusters, mode);
        removed += starved;
        clusters = if starved > 0 { renormalize(next) } else { next };
        iterations += 1;
        let prev = *trace.last().unwrap_or(&f64::NEG_INFINITY);
        let ll = log_likelihood_prepared(&p, &clusters);
        trace.push(ll);
        if (ll - prev).abs() <= settings.tol * prev.abs() {
            converged = true;
            break;
        }
    }
    let before = clusters.len();
    if mode == WeightUpdate::Free {
        let kept: Vec<VmfCluster> = clusters
            .iter()
            .copied()
            .filter(|c| c.w >= settings.prune_weight)
            .collect();
        if !kept.is_empty() && kept.len() < before {
            clusters = renormalize(kept);
        }
    }
    let pruned = removed + before - clusters.len();
    let mixture = VmfMixture::normalized(clusters)?;
    let final_objective = log_likelihood_prepared(&p, mixture.clusters());
    Ok(FitReport {
        mixture,
        iterations,
        final_objective,
        objective_trace: trace,
        converged,
        pruned,
        restart: 0,
    })
}

pub(crate) fn fit(
    samples: &SampleSet,
    settings: &EmSettings,
    mode: WeightUpdate,
) -> Result<FitReport> {
    settings.validate()?;
    Prepared::new(samples)?;
    let reports: Vec<Result<FitReport>> = (0..settings.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::derive(settings.seed, &[r as u64]));
            let init = init_params_with(settings.max_scatterers, &mut rng)?;
            let mut report = fit_from(samples, &init, settings, mode)?;
            report.restart = r;
            Ok(report)
        })
        .collect();
    let mut best: Option<FitReport> = None;
    for report in reports {
        let report = report?;
        if best
            .as_ref()
            .is_none_or(|b| report.final_objective > b.final_objective)
        {
            best = Some(report);
        }
    }
    best.ok_or_else(|| Error::InvalidSettings("no restarts ran".into()))
}

/// Fits a vMF mixture to the samples: best of `restarts` EM runs.
pub fn run(samples: &SampleSet, settings: &EmSettings) -> Result<FitReport> {
    fit(samples, settings, WeightUpdate::Free)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::SamplePoint;

    fn set(points: &[(f64, f64, f64)]) -> SampleSet {
        SampleSet {
            points: points
                .iter()
                .map(|&(theta, phi, s)| SamplePoint { theta, phi, s })
                .collect(),
            noise_var: 0.0,
            pilot_power: 1.0,
        }
    }

    /// Bisection on the Langevin function, independent of the Newton path.
    fn bisect(r: f64) -> f64 {
        let (mut lo, mut hi) = (1e-12f64, 1e6f64);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if 1.0 / mid.tanh() - 1.0 / mid < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn inverse_langevin_values() {
        let a = inverse_langevin(1e-6).unwrap();
        assert!((2.9e-6..=3.1e-6).contains(&a));
        let half = inverse_langevin(0.5).unwrap();
        assert!((half - bisect(0.5)).abs() < 1e-9);
        assert!((half - 1.796_756).abs() < 1e-6);
        for r in [0.01, 0.3, 0.9, 0.99] {
            assert!((langevin(inverse_langevin(r).unwrap()) - r).abs() < 1e-10);
        }
        assert!(inverse_langevin(1.0).is_err());
        assert!(inverse_langevin(-0.1).is_err());
        assert_eq!(inverse_langevin(0.0).unwrap(), 0.0);
    }

    #[test]
    fn langevin_series_joins_closed_form() {
        for a in [9.9e-4f64, 1e-3, 1.01e-3] {
            let closed = 1.0 / a.tanh() - 1.0 / a;
            assert!((langevin(a) - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn init_cases() {
        let s = EmSettings::default();
        let m = init_params(&s).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.clusters().iter().all(|c| c.w == 0.25 && c.alpha == 1.0));
        assert!(m
            .clusters()
            .iter()
            .all(|c| c.theta > 0.0 && c.theta < FRAC_PI_2));
        assert_eq!(init_params(&s).unwrap(), m);
        let one = init_params(&EmSettings {
            max_scatterers: 1,
            ..s
        })
        .unwrap();
        assert_eq!(one.clusters()[0].w, 1.0);
    }

    #[test]
    fn e_step_cases() {
        let samples = set(&[(0.3, 1.0, 2.0), (0.9, 4.0, 0.5), (1.2, 0.1, 0.0)]);
        let one = VmfMixture::new(vec![VmfCluster::new(1.0, 5.0, 0.5, 1.0).unwrap()]).unwrap();
        let r = e_step(&samples, &one).unwrap();
        for (i, p) in samples.points.iter().enumerate() {
            assert!((r.get(i, 0) - p.s).abs() <= 1e-15 * p.s);
        }
        let c = VmfCluster::new(0.5, 5.0, 0.5, 1.0).unwrap();
        let twin = VmfMixture::new(vec![c, c]).unwrap();
        let r = e_step(&samples, &twin).unwrap();
        for (i, p) in samples.points.iter().enumerate() {
            assert!((r.get(i, 0) - p.s / 2.0).abs() <= 1e-15 * p.s);
            assert!((r.get(i, 1) - p.s / 2.0).abs() <= 1e-15 * p.s);
        }
        assert!(matches!(
            e_step(&set(&[(0.3, 1.0, 0.0)]), &one),
            Err(Error::NoSignal)
        ));
    }

    #[test]
    fn azimuth_cases() {
        let s = set(&[(FRAC_PI_4, 1.0, 1.0)]);
        assert!((m_step_azimuth(&[1.0], &s, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let sym = set(&[(0.8, PI - 0.4, 1.0), (0.8, PI + 0.4, 1.0)]);
        let phi = m_step_azimuth(&[1.0, 1.0], &sym, 0.0).unwrap();
        assert!((phi - PI).abs() < 1e-12);
        let scaled = m_step_azimuth(&[3.0, 3.0], &sym, 0.0).unwrap();
        assert!((phi - scaled).abs() < 1e-14);
        let fourth = set(&[(0.8, 5.5, 1.0)]);
        assert!((m_step_azimuth(&[1.0], &fourth, 0.0).unwrap() - 5.5).abs() < 1e-12);
        assert!(matches!(
            m_step_azimuth(&[0.0], &s, 0.0),
            Err(Error::StarvedCluster(_))
        ));
    }

    #[test]
    fn azimuth_axis_fallbacks() {
        assert_eq!(azimuth_from(1.0, 0.0, 0.3), FRAC_PI_2);
        assert_eq!(azimuth_from(-1.0, 0.0, 0.3), 3.0 * FRAC_PI_2);
        assert_eq!(azimuth_from(0.0, 0.0, 0.3), 0.3);
        assert_eq!(azimuth_from(0.0, 2.0, 0.3), 0.0);
        assert_eq!(azimuth_from(0.0, -2.0, 0.3), PI);
    }

    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn zenith_cases() {
        let s = set(&[(0.6, 2.0, 1.0)]);
        assert!((m_step_zenith(&[1.0], &s, 2.0).unwrap() - 0.6).abs() < 1e-12);
        let scaled = m_step_zenith(&[5.0], &s, 2.0).unwrap();
        assert!((m_step_zenith(&[1.0], &s, 2.0).unwrap() - scaled).abs() < 1e-14);
        // Samples near the horizon, azimuth estimate pointing the other way:
        // μ₂ < 0 < η₂ selects the +π branch.
        let horizon = set(&[(1.4, 0.2, 1.0), (1.45, 0.3, 1.0)]);
        let theta = m_step_zenith(&[1.0, 1.0], &horizon, 0.25 + PI).unwrap();
        let r_x: f64 = [(1.4f64, 0.2f64), (1.45, 0.3)]
            .iter()
            .map(|(t, p)| t.sin() * (p - 0.25 - PI).cos())
            .sum();
        let r_z: f64 = 1.4f64.cos() + 1.45f64.cos();
        assert!(r_x < 0.0 && r_z > 0.0);
        assert!((theta - ((r_x / r_z).atan() + PI)).abs() < 1e-12);
        assert!(theta > FRAC_PI_2 && theta < PI);
    }

    #[test]
    fn concentration_cases() {
        let s = set(&[(0.7, 1.1, 1.0), (0.7, 1.1, 2.0)]);
        assert_eq!(
            m_step_concentration(&[1.0, 2.0], &s, 0.7, 1.1).unwrap(),
            ALPHA_MAX
        );
        // Two antipodal equal masses have zero resultant.
        let anti = set(&[(0.5, 1.0, 1.0), (PI - 0.5, 1.0 + PI, 1.0)]);
        let a = m_step_concentration(&[1.0, 1.0], &anti, 0.5, 1.0).unwrap();
        assert!(a < 1e-6, "{a}");
        // Two unit masses at angular distance γ about a centre between them give
        // resultant ratio cos(γ/2); choose γ so that it equals 0.5.
        let gamma = 2.0 * 0.5f64.acos();
        let pair = set(&[
            (FRAC_PI_2, 1.0 - gamma / 2.0, 1.0),
            (FRAC_PI_2, 1.0 + gamma / 2.0, 1.0),
        ]);
        let a = m_step_concentration(&[1.0, 1.0], &pair, FRAC_PI_2, 1.0).unwrap();
        assert!((a - bisect(0.5)).abs() < 1e-8);
    }

    #[test]
    fn weights_cases() {
        let r = Responsibilities {
            rows: 2,
            cols: 3,
            shat: vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0],
        };
        let w = m_step_weights(&r).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let r = Responsibilities {
            rows: 2,
            cols: 2,
            shat: vec![0.0, 3.0, 0.0, 1.0],
        };
        assert_eq!(m_step_weights(&r).unwrap(), vec![0.0, 1.0]);
        let r2 = Responsibilities {
            rows: 2,
            cols: 2,
            shat: vec![0.0, 30.0, 0.0, 10.0],
        };
        assert_eq!(m_step_weights(&r2).unwrap(), vec![0.0, 1.0]);
        let z = Responsibilities {
            rows: 1,
            cols: 2,
            shat: vec![0.0, 0.0],
        };
        assert!(m_step_weights(&z).is_err());
    }

    #[test]
    fn log_likelihood_cases() {
        let c = VmfCluster::new(1.0, 20.0, 0.8, 2.0).unwrap();
        let m = VmfMixture::new(vec![c]).unwrap();
        assert_eq!(weighted_log_likelihood(&set(&[(0.8, 2.0, 0.0)]), &m), 0.0);
        let got = weighted_log_likelihood(&set(&[(0.8, 2.0, 1.0)]), &m);
        let expect = crate::vmf::cluster_density(0.8, 2.0, &c).unwrap().ln();
        assert!((got - expect).abs() < 1e-12);
    }

    fn synthetic(m: &VmfMixture, seed_: u64) -> SampleSet {
        let mut rng = seed::rng(seed_);
        let pts = (0..150)
            .map(|_| {
                let theta = rng.random_range(0.05..1.5);
                let phi = rng.random_range(0.0..2.0 * PI);
                let s = crate::vmf::mixture_density(theta, phi, m).unwrap();
                (theta, phi, s)
            })
            .collect::<Vec<_>>();
        set(&pts)
    }

    #[test]
    fn ascent_and_conservation() {
        let truth = crate::vmf::random_scene(4, 3).unwrap();
        let samples = synthetic(&truth, 1);
        let settings = EmSettings {
            restarts: 1,
            ..EmSettings::default()
        };
        let report = run(&samples, &settings).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", w);
        }
        let resp = e_step(&samples, &report.mixture).unwrap();
        for (i, p) in samples.points.iter().enumerate() {
            let row: f64 = resp.row(i).iter().sum();
            assert!((row - p.s).abs() <= 1e-12 * p.s.max(1e-300));
        }
    }

    #[test]
    fn converged_flag_with_loose_tolerance() {
        let truth = crate::vmf::random_scene(2, 1).unwrap();
        let samples = synthetic(&truth, 2);
        let settings = EmSettings {
            tol: 1e-3,
            restarts: 1,
            ..EmSettings::default()
        };
        let report = run(&samples, &settings).unwrap();
        assert!(report.converged);
        assert!(report.iterations < settings.max_iter);
    }

    #[test]
    fn label_permutation() {
        let truth = crate::vmf::random_scene(6, 2).unwrap();
        let samples = synthetic(&truth, 3);
        let settings = EmSettings {
            restarts: 1,
            prune_weight: 0.0,
            tol: 1e-10,
            ..EmSettings::default()
        };
        let init = init_params_with(3, &mut seed::rng(77)).unwrap();
        let mut rev = init.clusters().to_vec();
        rev.reverse();
        let rev = VmfMixture::new(rev).unwrap();
        let a = fit_from(&samples, &init, &settings, WeightUpdate::Free).unwrap();
        let b = fit_from(&samples, &rev, &settings, WeightUpdate::Free).unwrap();
        let mut bc = b.mixture.clusters().to_vec();
        bc.reverse();
        for (x, y) in a.mixture.clusters().iter().zip(&bc) {
            assert!((x.w - y.w).abs() < 1e-8);
            assert!((x.theta - y.theta).abs() < 1e-8);
            assert!((x.phi - y.phi).abs() < 1e-8);
            assert!((x.alpha - y.alpha).abs() < 1e-6 * x.alpha);
        }
    }

    #[test]
    fn report_json() {
        let truth = crate::vmf::random_scene(2, 1).unwrap();
        let report = run(
            &synthetic(&truth, 9),
            &EmSettings {
                restarts: 2,
                ..EmSettings::default()
            },
        )
        .unwrap();
        let json = report.to_json().unwrap();
        let back: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mixture, report.mixture);
        assert_eq!(back.iterations, report.iterations);
    }

    #[test]
    fn settings_validation() {
        let bad = EmSettings {
            max_scatterers: 0,
            ..EmSettings::default()
        };
        assert!(bad.validate().is_err());
        assert!(EmSettings {
            tol: 0.0,
            ..EmSettings::default()
        }
        .validate()
        .is_err());
    }
}

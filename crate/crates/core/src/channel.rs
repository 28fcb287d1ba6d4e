//! Variance profile, dictionary, channel draws and covariance NMSE.
//!
//! The per-harmonic variance integrates the angular spectrum over the
//! wavenumber cell `[m_x, m_x+1]·2π/L_x × [m_y, m_y+1]·2π/L_y` clipped to the
//! propagating disk. Working in direction cosines `(a, b) = (k_x, k_y)/k`, the
//! measure `A² dθ dφ` becomes `Σ_j w_j C_j exp(α_j ⟨x, μ_j⟩) da db / c` with
//! `c = √(1 − a² − b²)`. Writing `b = q sin ψ`, `q = √(1 − a²)`, absorbs the
//! `1/c` edge singularity (`db / c = dψ`), leaving a smooth integrand in
//! `(a, ψ)` that is integrated with nested adaptive Gauss–Kronrod rules.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ApertureConfig, LatticeEllipse, WavenumberIndex};
use crate::quadrature::{self, Tolerance};
use crate::seed;
use crate::vmf::{log_normalizer, VmfMixture};

/// Default cap on complex matrix elements held at once.
pub const DEFAULT_ELEMENT_BUDGET: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSettings {
    /// Relative tolerance per cell.
    pub rel_tol: f64,
    /// Absolute floor per cell (cells carrying less mass stop refining).
    pub abs_tol: f64,
    pub max_intervals: usize,
    /// Sample cap of the Monte-Carlo fallback.
    pub mc_max_samples: usize,
    /// Worker threads; `None` uses the ambient rayon pool. Results do not
    /// depend on it.
    pub threads: Option<usize>,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            rel_tol: 1e-6,
            abs_tol: 1e-14,
            max_intervals: 200,
            mc_max_samples: 2_000_000,
            threads: None,
        }
    }
}

/// Per-harmonic variances σ²(m), aligned with the lattice scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    sigma2: Vec<f64>,
    lattice: Arc<LatticeEllipse>,
}

impl VarianceProfile {
    pub fn new(lattice: Arc<LatticeEllipse>, sigma2: Vec<f64>) -> Result<Self> {
        if sigma2.len() != lattice.len() {
            return Err(Error::DimensionMismatch {
                expected: lattice.len(),
                got: sigma2.len(),
            });
        }
        if let Some(bad) = sigma2.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidSettings(format!(
                "variance {bad} is not a finite non-negative value"
            )));
        }
        Ok(VarianceProfile { sigma2, lattice })
    }

    pub fn zeros(lattice: Arc<LatticeEllipse>) -> Self {
        let n = lattice.len();
        VarianceProfile {
            sigma2: vec![0.0; n],
            lattice,
        }
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn lattice(&self) -> &Arc<LatticeEllipse> {
        &self.lattice
    }

    /// σ² of a lattice member.
    pub fn get(&self, m: WavenumberIndex) -> Result<f64> {
        Ok(self.sigma2[self.lattice.ordinal_of(m)? - 1])
    }

    pub fn total(&self) -> f64 {
        self.sigma2.iter().sum()
    }

    pub fn scaled(&self, kappa: f64) -> Result<Self> {
        VarianceProfile::new(
            self.lattice.clone(),
            self.sigma2.iter().map(|v| v * kappa).collect(),
        )
    }

    /// CSV with header `m_x,m_y,sigma2`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let wrap = |e| Error::csv("<profile>", e);
        out.write_record(["m_x", "m_y", "sigma2"]).map_err(wrap)?;
        for (m, v) in self.lattice.indices().iter().zip(&self.sigma2) {
            out.write_record([m.m_x.to_string(), m.m_y.to_string(), v.to_string()])
                .map_err(wrap)?;
        }
        out.flush().map_err(|e| Error::io("<profile>", e))?;
        Ok(())
    }

    /// Reads a profile written by [`write_csv`](Self::write_csv). Rows may come
    /// in any order but must cover the lattice exactly once.
    pub fn read_csv<R: Read>(r: R, lattice: Arc<LatticeEllipse>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            m_x: i64,
            m_y: i64,
            sigma2: f64,
        }
        let mut sigma2 = vec![f64::NAN; lattice.len()];
        for row in csv::Reader::from_reader(r).deserialize::<Row>() {
            let row = row.map_err(|e| Error::csv("<profile>", e))?;
            let ord = lattice.ordinal_of(WavenumberIndex::new(row.m_x, row.m_y))?;
            sigma2[ord - 1] = row.sigma2;
        }
        VarianceProfile::new(lattice, sigma2)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Mixture terms flattened for the inner loop: `log(w C)`, `α`, `μ`.
struct Kernel {
    terms: Vec<(f64, f64, [f64; 3])>,
}

impl Kernel {
    fn new(m: &VmfMixture) -> Self {
        let terms = m
            .clusters()
            .iter()
            .filter(|c| c.w > 0.0)
            .map(|c| {
                (
                    c.w.ln() + log_normalizer(c.alpha),
                    c.alpha,
                    c.mean_direction(),
                )
            })
            .collect();
        Kernel { terms }
    }

    #[inline]
    fn eval(&self, a: f64, b: f64, c: f64) -> f64 {
        self.terms
            .iter()
            .map(|(lw, alpha, mu)| (lw + alpha * (a * mu[0] + b * mu[1] + c * mu[2])).exp())
            .sum()
    }
}

/// Rectangle in direction cosines covered by one harmonic's cell.
#[derive(Debug, Clone, Copy)]
struct Cell {
    a: (f64, f64),
    b: (f64, f64),
}

impl Cell {
    fn of(m: WavenumberIndex, aperture: &ApertureConfig) -> Self {
        let (h_x, h_y) = aperture.cell_widths();
        Cell {
            a: (m.m_x as f64 * h_x, (m.m_x + 1) as f64 * h_x),
            b: (m.m_y as f64 * h_y, (m.m_y + 1) as f64 * h_y),
        }
    }

    fn outer_range(&self) -> (f64, f64) {
        (self.a.0.max(-1.0), self.a.1.min(1.0))
    }

    /// ψ limits at abscissa `a`; `None` when the clipped strip is empty.
    fn psi_range(&self, a: f64) -> Option<(f64, f64, f64)> {
        let q = (1.0 - a * a).max(0.0).sqrt();
        let lo = self.b.0.max(-q);
        let hi = self.b.1.min(q);
        if !(hi > lo) || q == 0.0 {
            return None;
        }
        Some((
            q,
            (lo / q).clamp(-1.0, 1.0).asin(),
            (hi / q).clamp(-1.0, 1.0).asin(),
        ))
    }

    /// Abscissae where an edge of the b-range meets the unit circle; the inner
    /// integral has a square-root kink there.
    fn breakpoints(&self) -> Vec<f64> {
        let (lo, hi) = self.outer_range();
        let mut pts = vec![lo];
        for b in [self.b.0, self.b.1] {
            if b.abs() < 1.0 {
                let r = (1.0 - b * b).sqrt();
                for p in [-r, r] {
                    if p > lo && p < hi {
                        pts.push(p);
                    }
                }
            }
        }
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

fn cell_quadrature(kernel: &Kernel, cell: &Cell, q: &QuadratureSettings) -> (f64, bool) {
    let inner_tol = Tolerance {
        rel: q.rel_tol * 1e-2,
        abs: q.abs_tol * 1e-3,
        min_intervals: 2,
        max_intervals: q.max_intervals,
    };
    let outer_tol = Tolerance {
        rel: q.rel_tol,
        abs: q.abs_tol,
        min_intervals: 2,
        max_intervals: q.max_intervals,
    };
    let ok = std::cell::Cell::new(true);
    let mut inner = |a: f64| match cell.psi_range(a) {
        None => 0.0,
        Some((qa, p0, p1)) => {
            let est = quadrature::integrate(
                |psi: f64| {
                    let (s, c) = psi.sin_cos();
                    kernel.eval(a, qa * s, qa * c)
                },
                p0,
                p1,
                inner_tol,
            );
            ok.set(ok.get() && est.converged);
            est.value
        }
    };
    let pts = cell.breakpoints();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let est = quadrature::integrate(&mut inner, w[0], w[1], outer_tol);
        ok.set(ok.get() && est.converged);
        total += est.value;
    }
    (total, ok.get())
}

/// Monte-Carlo estimate over `(a, ψ)` with batch-variance stopping.
fn cell_monte_carlo(
    kernel: &Kernel,
    cell: &Cell,
    q: &QuadratureSettings,
    stream: u64,
) -> Option<f64> {
    const BATCH: usize = 20_000;
    let mut rng = seed::rng(seed::derive(0x6d63_6365_6c6c, &[stream]));
    let (a0, a1) = cell.outer_range();
    if a1 <= a0 {
        return Some(0.0);
    }
    let (mut sum, mut sum_sq, mut n) = (0.0, 0.0, 0usize);
    while n < q.mc_max_samples {
        for _ in 0..BATCH {
            let a = a0 + (a1 - a0) * rng.random::<f64>();
            let v = match cell.psi_range(a) {
                None => 0.0,
                Some((qa, p0, p1)) => {
                    let psi = p0 + (p1 - p0) * rng.random::<f64>();
                    let (s, c) = psi.sin_cos();
                    (a1 - a0) * (p1 - p0) * kernel.eval(a, qa * s, qa * c)
                }
            };
            sum += v;
            sum_sq += v * v;
        }
        n += BATCH;
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let stderr = (var / n as f64).sqrt();
        if n >= 2 * BATCH && stderr <= q.abs_tol.max(q.rel_tol * mean.abs()) {
            return Some(mean);
        }
    }
    None
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(job),
            Err(_) => job(),
        },
        _ => job(),
    }
}

pub(crate) fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> T {
    with_threads(threads, job)
}

/// σ²(m) for every lattice member: the mixture mass over each clipped cell.
pub fn variance_profile(
    mixture: &VmfMixture,
    lattice: &Arc<LatticeEllipse>,
    quad: &QuadratureSettings,
) -> Result<VarianceProfile> {
    let kernel = Kernel::new(mixture);
    let aperture = *lattice.aperture();
    let cells: Vec<Result<f64>> = with_threads(quad.threads, || {
        lattice
            .indices()
            .par_iter()
            .enumerate()
            .map(|(i, &m)| {
                let cell = Cell::of(m, &aperture);
                let (value, ok) = cell_quadrature(&kernel, &cell, quad);
                if ok {
                    return Ok(value.max(0.0));
                }
                cell_monte_carlo(&kernel, &cell, quad, i as u64)
                    .map(|v| v.max(0.0))
                    .ok_or_else(|| Error::Quadrature {
                        m_x: m.m_x,
                        m_y: m.m_y,
                        detail: format!(
                            "adaptive rule and {} Monte-Carlo samples both missed tolerance",
                            quad.mc_max_samples
                        ),
                    })
            })
            .collect()
    });
    let sigma2 = cells.into_iter().collect::<Result<Vec<_>>>()?;
    VarianceProfile::new(lattice.clone(), sigma2)
}

/// Wavenumber-domain dictionary Ψ (`N × |ξ|`, column-major).
#[derive(Debug, Clone)]
pub struct Dictionary {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl Dictionary {
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn column(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// `Ψ^H v`.
    pub fn adjoint_apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: v.len(),
            });
        }
        Ok((0..self.cols)
            .map(|j| {
                self.column(j)
                    .iter()
                    .zip(v)
                    .map(|(p, x)| p.conj() * x)
                    .sum()
            })
            .collect())
    }

    /// Inner product of two columns, `Ψ_i^H Ψ_j`.
    pub fn gram_entry(&self, i: usize, j: usize) -> Complex64 {
        self.column(i)
            .iter()
            .zip(self.column(j))
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Builds Ψ with antennas ordered `n = n_y·N_x + n_x`.
pub fn build_dictionary(lattice: &LatticeEllipse, budget: u128) -> Result<Dictionary> {
    let ap = lattice.aperture();
    let rows = ap.antennas();
    let cols = lattice.len();
    let requested = rows as u128 * cols as u128;
    if requested > budget {
        return Err(Error::MemoryBudget { requested, budget });
    }
    let norm = 1.0 / (rows as f64).sqrt();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut data = Vec::with_capacity(rows * cols);
    for m in lattice.indices() {
        let fx = two_pi * m.m_x as f64 * ap.delta() / ap.l_x();
        let fy = two_pi * m.m_y as f64 * ap.delta() / ap.l_y();
        for n_y in 0..ap.n_y() {
            for n_x in 0..ap.n_x() {
                let phase = fx * n_x as f64 + fy * n_y as f64;
                data.push(Complex64::from_polar(norm, phase));
            }
        }
    }
    Ok(Dictionary { rows, cols, data })
}

/// Wavenumber-domain coefficients `G`, aligned with the lattice scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannel {
    pub coefficients: Vec<Complex64>,
}

/// Draws `G_m ~ CN(0, σ²(m))` independently.
pub fn sample_channel_with<R: Rng + ?Sized>(
    profile: &VarianceProfile,
    rng: &mut R,
) -> SparseChannel {
    let coefficients = profile
        .sigma2()
        .iter()
        .map(|&v| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if v == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(re, im) * (v / 2.0).sqrt()
            }
        })
        .collect();
    SparseChannel { coefficients }
}

pub fn sample_channel(profile: &VarianceProfile, seed: u64) -> SparseChannel {
    sample_channel_with(profile, &mut seed::rng(seed))
}

/// `H = Ψ G`.
pub fn spatial_channel(d: &Dictionary, g: &SparseChannel) -> Result<Vec<Complex64>> {
    if g.coefficients.len() != d.cols {
        return Err(Error::DimensionMismatch {
            expected: d.cols,
            got: g.coefficients.len(),
        });
    }
    let mut h = vec![Complex64::new(0.0, 0.0); d.rows];
    for (j, gj) in g.coefficients.iter().enumerate() {
        if *gj == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (hi, p) in h.iter_mut().zip(d.column(j)) {
            *hi += p * gj;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmseMode {
    /// `‖R_H − R̂_H‖²_F / ‖R_H‖²_F` with `R_H = Ψ D Ψ^H` formed explicitly.
    Full,
    /// `‖D − D̂‖²_F / ‖D‖²_F`.
    #[default]
    Wavenumber,
}

impl std::str::FromStr for NmseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(NmseMode::Full),
            "wavenumber" => Ok(NmseMode::Wavenumber),
            other => Err(Error::Config(format!("unknown NMSE mode {other:?}"))),
        }
    }
}

/// `Ψ diag(d) Ψ^H`, row-major `N × N`.
fn covariance(d: &Dictionary, diag: &[f64]) -> Vec<Complex64> {
    let n = d.rows;
    let mut r = vec![Complex64::new(0.0, 0.0); n * n];
    for (j, &v) in diag.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let col = d.column(j);
        for a in 0..n {
            let pa = col[a] * v;
            let row = &mut r[a * n..(a + 1) * n];
            for (rb, pb) in row.iter_mut().zip(col) {
                *rb += pa * pb.conj();
            }
        }
    }
    r
}

pub fn covariance_nmse(
    truth: &VarianceProfile,
    estimate: &VarianceProfile,
    dictionary: Option<&Dictionary>,
    mode: NmseMode,
    budget: u128,
) -> Result<f64> {
    if !Arc::ptr_eq(&truth.lattice, &estimate.lattice) && *truth.lattice != *estimate.lattice {
        return Err(Error::InvalidSettings(
            "profiles index different lattices".into(),
        ));
    }
    match mode {
        NmseMode::Wavenumber => {
            let num: f64 = truth
                .sigma2
                .iter()
                .zip(&estimate.sigma2)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let den: f64 = truth.sigma2.iter().map(|a| a * a).sum();
            Ok(num / den)
        }
        NmseMode::Full => {
            let d = dictionary.ok_or_else(|| {
                Error::InvalidSettings("full-matrix NMSE needs the dictionary".into())
            })?;
            if d.cols != truth.sigma2.len() {
                return Err(Error::DimensionMismatch {
                    expected: truth.sigma2.len(),
                    got: d.cols,
                });
            }
            let requested = 2 * (d.rows as u128) * (d.rows as u128);
            if requested > budget {
                return Err(Error::MemoryBudget { requested, budget });
            }
            let r_true = covariance(d, &truth.sigma2);
            let r_est = covariance(d, &estimate.sigma2);
            let num: f64 = r_true
                .iter()
                .zip(&r_est)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            let den: f64 = r_true.iter().map(|a| a.norm_sqr()).sum();
            Ok(num / den)
        }
    }
}

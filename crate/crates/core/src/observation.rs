//! RF-chain combining, noisy observations and the sample set fed to the
//! estimators.
//!
//! Chain `i` picks ordinal `⌊|ξ|/N_RF⌋·(i−1)+1` of the scan order, so the
//! combiner is `C = B Ψ^H` with `B` a row selector. Applied to `H = Ψ G` this
//! gives `B (Ψ^H Ψ) G`; [`GramMode::Ideal`] takes the Gram matrix as identity.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{spatial_channel, Dictionary, SparseChannel, VarianceProfile};
use crate::error::{Error, Result};
use crate::lattice::{LatticeEllipse, SampleAnchor, ThetaBranch};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMap {
    picks: Vec<usize>,
    n_rf: usize,
}

impl SelectionMap {
    /// 1-based lattice ordinals, strictly increasing.
    pub fn picks(&self) -> &[usize] {
        &self.picks
    }
    pub fn n_rf(&self) -> usize {
        self.n_rf
    }
}

/// How chain `i` (1-based) maps to a lattice ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// `⌊|ξ|/N_RF⌋·(i−1) + 1`. When `N_RF` does not divide `|ξ|` the picks
    /// stop short of the end of the scan order.
    Stride,
    /// `⌊(i−1)·|ξ|/N_RF⌋ + 1`: the same picks whenever `N_RF` divides `|ξ|`,
    /// otherwise spread over the whole scan order.
    #[default]
    Uniform,
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stride" => Ok(SelectionRule::Stride),
            "uniform" => Ok(SelectionRule::Uniform),
            other => Err(Error::Config(format!("unknown selection rule {other:?}"))),
        }
    }
}

/// Picks with the fixed stride `⌊|ξ|/N_RF⌋`.
pub fn build_selection(lattice: &LatticeEllipse, n_rf: usize) -> Result<SelectionMap> {
    build_selection_with(lattice, n_rf, SelectionRule::Stride)
}

pub fn build_selection_with(
    lattice: &LatticeEllipse,
    n_rf: usize,
    rule: SelectionRule,
) -> Result<SelectionMap> {
    let len = lattice.len();
    if n_rf == 0 || n_rf > len {
        return Err(Error::RfChainCount { n_rf, len });
    }
    let picks = match rule {
        SelectionRule::Stride => {
            let stride = len / n_rf;
            (0..n_rf).map(|i| stride * i + 1).collect()
        }
        SelectionRule::Uniform => (0..n_rf).map(|i| i * len / n_rf + 1).collect(),
    };
    Ok(SelectionMap { picks, n_rf })
}

#[derive(Debug, Clone, Copy)]
pub enum GramMode<'a> {
    /// `Ψ^H Ψ = I`: chain `i` sees `G` at its picked harmonic.
    Ideal,
    /// Apply the true `Ψ^H Ψ G` through the dictionary.
    Exact(&'a Dictionary),
}

/// `y = B Ψ^H Ψ G x + n` with `n ~ CN(0, σ₀² I)`.
pub fn observe_with<R: Rng + ?Sized>(
    g: &SparseChannel,
    sel: &SelectionMap,
    pilot: Complex64,
    noise_var: f64,
    gram: GramMode<'_>,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let len = g.coefficients.len();
    if let Some(&last) = sel.picks.last() {
        if last > len {
            return Err(Error::DimensionMismatch {
                expected: last,
                got: len,
            });
        }
    }
    let clean: Vec<Complex64> = match gram {
        GramMode::Ideal => sel.picks.iter().map(|&p| g.coefficients[p - 1]).collect(),
        GramMode::Exact(d) => {
            let h = spatial_channel(d, g)?;
            sel.picks
                .iter()
                .map(|&p| {
                    d.column(p - 1)
                        .iter()
                        .zip(&h)
                        .map(|(a, b)| a.conj() * b)
                        .sum()
                })
                .collect()
        }
    };
    let scale = (noise_var.max(0.0) / 2.0).sqrt();
    Ok(clean
        .into_iter()
        .map(|c| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c * pilot + Complex64::new(re, im) * scale
        })
        .collect())
}

pub fn observe(
    g: &SparseChannel,
    sel: &SelectionMap,
    pilot: Complex64,
    noise_var: f64,
    gram: GramMode<'_>,
    seed: u64,
) -> Result<Vec<Complex64>> {
    observe_with(g, sel, pilot, noise_var, gram, &mut seed::rng(seed))
}

/// One wavenumber-domain sample: arrival angles and observed power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub theta: f64,
    pub phi: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<SamplePoint>,
    pub noise_var: f64,
    pub pilot_power: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.points.iter().map(|p| p.s).sum()
    }

    /// CSV with header `theta,phi,s`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.points {
            out.serialize(p).map_err(|e| Error::csv("<samples>", e))?;
        }
        out.flush().map_err(|e| Error::io("<samples>", e))?;
        Ok(())
    }

    /// Reads `theta,phi,s` rows. The CSV does not carry the noise level, so
    /// `noise_var` is 0 and `pilot_power` is 1.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let points = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<std::result::Result<Vec<SamplePoint>, _>>()
            .map_err(|e| Error::csv("<samples>", e))?;
        if let Some(p) = points.iter().find(|p| !(p.s >= 0.0)) {
            return Err(Error::InvalidSettings(format!(
                "negative sample power {}",
                p.s
            )));
        }
        Ok(SampleSet {
            points,
            noise_var: 0.0,
            pilot_power: 1.0,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::Csv { source, .. } => Error::csv(path, source),
            other => other,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Angle convention for sample points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleGeometry {
    pub branch: ThetaBranch,
    pub anchor: SampleAnchor,
}

impl From<ThetaBranch> for SampleGeometry {
    fn from(branch: ThetaBranch) -> Self {
        SampleGeometry {
            branch,
            anchor: SampleAnchor::Corner,
        }
    }
}

fn build_points(
    powers: impl Iterator<Item = f64>,
    sel: &SelectionMap,
    lattice: &LatticeEllipse,
    geometry: SampleGeometry,
    floor: Option<f64>,
) -> Result<Vec<SamplePoint>> {
    sel.picks
        .iter()
        .zip(powers)
        .map(|(&p, s)| {
            let m = lattice.scan_position(p)?;
            let (theta, phi) = lattice.sample_angles(m, geometry.branch, geometry.anchor)?;
            let s = match floor {
                Some(f) => (s - f).max(0.0),
                None => s,
            };
            Ok(SamplePoint { theta, phi, s })
        })
        .collect()
}

/// `s_i = |y_i|²` at the angles of the picked harmonics. With `denoise_floor`
/// the noise variance is subtracted and the result clamped at zero.
pub fn sample_values(
    y: &[Complex64],
    sel: &SelectionMap,
    lattice: &LatticeEllipse,
    geometry: impl Into<SampleGeometry>,
    noise_var: f64,
    pilot_power: f64,
    denoise_floor: bool,
) -> Result<SampleSet> {
    if y.len() != sel.n_rf {
        return Err(Error::DimensionMismatch {
            expected: sel.n_rf,
            got: y.len(),
        });
    }
    let floor = denoise_floor.then_some(noise_var);
    let points = build_points(
        y.iter().map(|v| v.norm_sqr()),
        sel,
        lattice,
        geometry.into(),
        floor,
    )?;
    Ok(SampleSet {
        points,
        noise_var,
        pilot_power,
    })
}

/// Samples at their expected power `σ²(m_i)·|x|² + σ₀²`, i.e. what `|y_i|²`
/// averages to over many independent snapshots.
pub fn expected_sample_values(
    profile: &VarianceProfile,
    sel: &SelectionMap,
    geometry: impl Into<SampleGeometry>,
    pilot_power: f64,
    noise_var: f64,
    denoise_floor: bool,
) -> Result<SampleSet> {
    let lattice = profile.lattice();
    let sigma2 = profile.sigma2();
    if sel.picks.last().is_some_and(|&p| p > sigma2.len()) {
        return Err(Error::DimensionMismatch {
            expected: sel.picks[sel.n_rf - 1],
            got: sigma2.len(),
        });
    }
    let powers = sel
        .picks
        .iter()
        .map(|&p| sigma2[p - 1] * pilot_power + noise_var);
    let floor = denoise_floor.then_some(noise_var);
    let points = build_points(powers, sel, lattice, geometry.into(), floor)?;
    Ok(SampleSet {
        points,
        noise_var,
        pilot_power,
    })
}

fn picked_power(profile: &VarianceProfile, sel: &SelectionMap) -> f64 {
    sel.picks.iter().map(|&p| profile.sigma2()[p - 1]).sum()
}

/// Expected SNR `Σ σ²(m_i)·|x|² / (N_RF σ₀²)`, linear. Zero noise gives `+∞`.
pub fn snr_of(
    profile: &VarianceProfile,
    sel: &SelectionMap,
    pilot_power: f64,
    noise_var: f64,
) -> f64 {
    let signal = picked_power(profile, sel) * pilot_power;
    if noise_var == 0.0 {
        return f64::INFINITY;
    }
    signal / (sel.n_rf as f64 * noise_var)
}

/// Noise variance that yields a linear SNR of `snr`; `+∞` gives 0.
pub fn noise_var_for_snr(
    profile: &VarianceProfile,
    sel: &SelectionMap,
    pilot_power: f64,
    snr: f64,
) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::InvalidSettings(format!(
            "target SNR {snr} must be positive"
        )));
    }
    if snr.is_infinite() {
        return Ok(0.0);
    }
    Ok(picked_power(profile, sel) * pilot_power / (sel.n_rf as f64 * snr))
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

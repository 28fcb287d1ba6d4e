//! Seeded Monte-Carlo experiments: scene → profile → channel → observations →
//! every enabled estimator → NMSE against the true profile.
//!
//! A trial's randomness is derived from `(base_seed, axis, sweep value,
//! trial)` alone, with one sub-stream per consumer, so results do not depend
//! on scheduling or thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig};
use crate::channel::{
    build_dictionary, covariance_nmse, in_pool, sample_channel_with, variance_profile, Dictionary,
    NmseMode, QuadratureSettings, VarianceProfile, DEFAULT_ELEMENT_BUDGET,
};
use crate::error::{Error, Result};
use crate::lattice::{build_lattice, ApertureConfig, LatticeEllipse, SampleAnchor, ThetaBranch};
use crate::observation::{
    build_selection_with, expected_sample_values, from_db, noise_var_for_snr, observe_with,
    sample_values, to_db, GramMode, SampleGeometry, SampleSet, SelectionRule,
};
use crate::seed;
use crate::vmf::{random_scene_with, SceneRanges, VmfMixture};
use crate::wd_em::{self, EmSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    WdEm,
    Ls,
    Omp,
    Kmeans,
    NaiveGmm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::WdEm,
        Method::Ls,
        Method::Omp,
        Method::Kmeans,
        Method::NaiveGmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::WdEm => "wd_em",
            Method::Ls => "ls",
            Method::Omp => "omp",
            Method::Kmeans => "kmeans",
            Method::NaiveGmm => "naive_gmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Values are SNRs in dB; `n_rf` is held fixed.
    #[default]
    Snr,
    /// Values are RF-chain counts; `snr_db` is held fixed.
    Nrf,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::Nrf => "nrf",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(SweepAxis::Snr),
            "nrf" => Ok(SweepAxis::Nrf),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// How the sample powers `s_i` are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `|y_i|²` of the single observed snapshot.
    #[default]
    Realized,
    /// The expectation `σ²(m_i) + σ₀²`.
    Expected,
}

impl FromStr for Sampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "realized" => Ok(Sampling::Realized),
            "expected" => Ok(Sampling::Expected),
            other => Err(Error::Config(format!("unknown sampling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_c: usize,
    pub ranges: SceneRanges,
    /// Redraw scenes until the smallest weight is at most this.
    pub min_weight_at_most: Option<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_c: 3,
            ranges: SceneRanges::default(),
            min_weight_at_most: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// SNR used when sweeping `nrf`.
    pub snr_db: f64,
    /// RF chains used when sweeping `snr`.
    pub n_rf: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: SweepAxis::Snr,
            values: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            snr_db: 10.0,
            n_rf: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub aperture: ApertureConfig,
    pub scene: SceneConfig,
    pub em: EmSettings,
    pub baselines: BaselineConfig,
    pub sweep: SweepConfig,
    pub trials: usize,
    pub base_seed: u64,
    pub nmse_mode: NmseMode,
    pub methods: Vec<Method>,
    pub theta_branch: ThetaBranch,
    pub anchor: SampleAnchor,
    pub exact_gram: bool,
    pub denoise_floor: bool,
    pub selection: SelectionRule,
    pub sampling: Sampling,
    pub quadrature: QuadratureSettings,
    /// Worker threads for the trial pool; results do not depend on it.
    pub threads: Option<usize>,
    /// Fill `wall_ms`. Off by default so repeated runs are byte-identical.
    pub record_timing: bool,
    /// Test mode: WD-EM returns the true scene instead of fitting.
    pub oracle_short_circuit: bool,
    /// Cap on complex matrix elements for the dictionary and full NMSE.
    pub element_budget: u64,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            aperture: ApertureConfig::square(0.1, 30e9).expect("default aperture is valid"),
            scene: SceneConfig::default(),
            em: EmSettings::default(),
            baselines: BaselineConfig::default(),
            sweep: SweepConfig::default(),
            trials: 50,
            base_seed: 0,
            nmse_mode: NmseMode::Wavenumber,
            methods: Method::ALL.to_vec(),
            theta_branch: ThetaBranch::Principal,
            anchor: SampleAnchor::Corner,
            exact_gram: false,
            denoise_floor: false,
            selection: SelectionRule::Uniform,
            sampling: Sampling::Realized,
            quadrature: QuadratureSettings::default(),
            threads: None,
            record_timing: false,
            oracle_short_circuit: false,
            element_budget: DEFAULT_ELEMENT_BUDGET as u64,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg: ExperimentConfig = if is_toml {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn validate(&self, lattice: &LatticeEllipse) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.sweep.values.is_empty() {
            return bad("sweep values are empty".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.scene.n_c == 0 {
            return bad("scene.n_c must be >= 1".into());
        }
        let n_rf_ok = |n: usize| n >= 1 && n <= lattice.len();
        match self.sweep.axis {
            SweepAxis::Snr => {
                // +inf is accepted and means noiseless.
                if let Some(v) = self
                    .sweep
                    .values
                    .iter()
                    .find(|v| v.is_nan() || **v == f64::NEG_INFINITY)
                {
                    return bad(format!("SNR value {v} is not a number of dB"));
                }
                if !n_rf_ok(self.sweep.n_rf) {
                    return bad(format!(
                        "n_rf {} outside 1..={}",
                        self.sweep.n_rf,
                        lattice.len()
                    ));
                }
            }
            SweepAxis::Nrf => {
                if self.sweep.snr_db.is_nan() || self.sweep.snr_db == f64::NEG_INFINITY {
                    return bad("snr_db is not a number of dB".into());
                }
                for &v in &self.sweep.values {
                    if v.fract() != 0.0 || !n_rf_ok(v as usize) || v < 1.0 {
                        return bad(format!(
                            "N_RF value {v} must be an integer in 1..={}",
                            lattice.len()
                        ));
                    }
                }
            }
        }
        self.em
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.baselines
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// One method's outcome in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub trial: usize,
    pub method: Method,
    pub nmse_linear: Option<f64>,
    pub nmse_db: Option<f64>,
    pub wall_ms: Option<f64>,
    pub iterations: Option<usize>,
    pub pruned: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialResult {
    pub fn ok(&self) -> bool {
        self.nmse_linear.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub method: Method,
    /// Median over trials of the per-trial dB values.
    pub median_nmse_db: Option<f64>,
    /// dB of the mean linear NMSE.
    pub mean_nmse_db: Option<f64>,
    pub trials_ok: usize,
    pub trials_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<TrialResult>,
    pub aggregates: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }

    pub fn aggregate(&self, value: f64, method: Method) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.sweep_value == value && a.method == method)
    }
}

/// Configuration plus the state shared by all trials.
pub struct Experiment {
    cfg: ExperimentConfig,
    lattice: Arc<LatticeEllipse>,
    dictionary: Option<Dictionary>,
}

struct Outcome {
    profile: VarianceProfile,
    iterations: Option<usize>,
    pruned: Option<usize>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let lattice = Arc::new(build_lattice(cfg.aperture)?);
        cfg.validate(&lattice)?;
        let dictionary = if cfg.exact_gram || cfg.nmse_mode == NmseMode::Full {
            Some(build_dictionary(&lattice, cfg.element_budget as u128)?)
        } else {
            None
        };
        Ok(Experiment {
            cfg,
            lattice,
            dictionary,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn lattice(&self) -> &Arc<LatticeEllipse> {
        &self.lattice
    }

    pub fn trial_seed(&self, value: f64, trial: usize) -> u64 {
        let axis = self.cfg.sweep.axis as u64;
        seed::derive(self.cfg.base_seed, &[axis, value.to_bits(), trial as u64])
    }

    fn point(&self, value: f64) -> (usize, f64) {
        match self.cfg.sweep.axis {
            SweepAxis::Snr => (self.cfg.sweep.n_rf, value),
            SweepAxis::Nrf => (value as usize, self.cfg.sweep.snr_db),
        }
    }

    /// The trial's ground-truth scene.
    pub fn scene(&self, value: f64, trial: usize) -> Result<VmfMixture> {
        let mut rng = seed::rng(seed::derive(self.trial_seed(value, trial), &[1]));
        for _ in 0..100_000 {
            let scene = random_scene_with(&mut rng, self.cfg.scene.n_c, &self.cfg.scene.ranges)?;
            match self.cfg.scene.min_weight_at_most {
                Some(cap)
                    if scene
                        .weights()
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min)
                        > cap =>
                {
                    continue
                }
                _ => return Ok(scene),
            }
        }
        Err(Error::Config(format!(
            "no scene with min weight <= {:?} after 100000 draws",
            self.cfg.scene.min_weight_at_most
        )))
    }

    fn gram(&self) -> GramMode<'_> {
        match (&self.dictionary, self.cfg.exact_gram) {
            (Some(d), true) => GramMode::Exact(d),
            _ => GramMode::Ideal,
        }
    }

    /// All enabled methods on one trial. Estimator errors become failed rows;
    /// errors in the shared pipeline fail every method of the trial.
    pub fn run_trial(&self, value: f64, trial: usize) -> Vec<TrialResult> {
        let row = |method: Method| TrialResult {
            sweep_axis: self.cfg.sweep.axis,
            sweep_value: value,
            trial,
            method,
            nmse_linear: None,
            nmse_db: None,
            wall_ms: None,
            iterations: None,
            pruned: None,
            error: None,
        };
        let shared = match self.prepare_trial(value, trial) {
            Ok(s) => s,
            Err(e) => {
                return self
                    .cfg
                    .methods
                    .iter()
                    .map(|&m| TrialResult {
                        error: Some(e.to_string()),
                        ..row(m)
                    })
                    .collect()
            }
        };
        let t = self.trial_seed(value, trial);
        self.cfg
            .methods
            .iter()
            .map(|&method| {
                let start = Instant::now();
                let outcome = self.estimate(method, &shared, t).and_then(|o| {
                    let nmse = covariance_nmse(
                        &shared.truth,
                        &o.profile,
                        self.dictionary.as_ref(),
                        self.cfg.nmse_mode,
                        self.cfg.element_budget as u128,
                    )?;
                    Ok((o, nmse))
                });
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                let wall_ms = self.cfg.record_timing.then_some(elapsed);
                match outcome {
                    Ok((o, nmse)) => TrialResult {
                        nmse_linear: Some(nmse),
                        nmse_db: Some(to_db(nmse)),
                        wall_ms,
                        iterations: o.iterations,
                        pruned: o.pruned,
                        ..row(method)
                    },
                    Err(e) => TrialResult {
                        wall_ms,
                        error: Some(e.to_string()),
                        ..row(method)
                    },
                }
            })
            .collect()
    }

    fn prepare_trial(&self, value: f64, trial: usize) -> Result<TrialData> {
        let t = self.trial_seed(value, trial);
        let (n_rf, snr_db) = self.point(value);
        let scene = self.scene(value, trial)?;
        let truth = variance_profile(&scene, &self.lattice, &self.cfg.quadrature)?;
        let sel = build_selection_with(&self.lattice, n_rf, self.cfg.selection)?;
        let pilot = Complex64::new(1.0, 0.0);
        let noise_var = noise_var_for_snr(&truth, &sel, 1.0, from_db(snr_db))?;
        let g = sample_channel_with(&truth, &mut seed::rng(seed::derive(t, &[2])));
        let y = observe_with(
            &g,
            &sel,
            pilot,
            noise_var,
            self.gram(),
            &mut seed::rng(seed::derive(t, &[3])),
        )?;
        let geometry = SampleGeometry {
            branch: self.cfg.theta_branch,
            anchor: self.cfg.anchor,
        };
        let samples = match self.cfg.sampling {
            Sampling::Realized => sample_values(
                &y,
                &sel,
                &self.lattice,
                geometry,
                noise_var,
                1.0,
                self.cfg.denoise_floor,
            )?,
            Sampling::Expected => expected_sample_values(
                &truth,
                &sel,
                geometry,
                1.0,
                noise_var,
                self.cfg.denoise_floor,
            )?,
        };
        Ok(TrialData {
            scene,
            truth,
            sel,
            y,
            samples,
        })
    }

    fn estimate(&self, method: Method, d: &TrialData, t: u64) -> Result<Outcome> {
        let quad = &self.cfg.quadrature;
        let plain = |profile| Outcome {
            profile,
            iterations: None,
            pruned: None,
        };
        match method {
            Method::WdEm => {
                if self.cfg.oracle_short_circuit {
                    return Ok(plain(variance_profile(&d.scene, &self.lattice, quad)?));
                }
                let settings = EmSettings {
                    seed: seed::derive(t, &[4]),
                    ..self.cfg.em
                };
                let report = wd_em::run(&d.samples, &settings)?;
                Ok(Outcome {
                    profile: variance_profile(&report.mixture, &self.lattice, quad)?,
                    iterations: Some(report.iterations),
                    pruned: Some(report.pruned),
                })
            }
            Method::Ls => Ok(plain(baselines::ls_estimate(&d.y, &d.sel, &self.lattice)?)),
            Method::Omp => Ok(plain(baselines::omp_estimate(
                &d.y,
                &d.sel,
                &self.lattice,
                self.cfg.baselines.omp_sparsity,
                self.gram(),
            )?)),
            Method::Kmeans => Ok(plain(baselines::kmeans_estimate(
                &d.samples,
                self.cfg.baselines.kmeans_k,
                seed::derive(t, &[5]),
                &self.lattice,
                quad,
            )?)),
            Method::NaiveGmm => {
                let settings = EmSettings {
                    seed: seed::derive(t, &[6]),
                    ..self.cfg.em
                };
                let (profile, report) = baselines::naive_gmm_estimate(
                    &d.samples,
                    self.cfg.baselines.gmm_components,
                    &settings,
                    &self.lattice,
                    quad,
                )?;
                Ok(Outcome {
                    profile,
                    iterations: Some(report.iterations),
                    pruned: Some(report.pruned),
                })
            }
        }
    }

    /// The sample set a trial feeds to the clustering estimators.
    pub fn trial_samples(&self, value: f64, trial: usize) -> Result<(VmfMixture, SampleSet)> {
        let d = self.prepare_trial(value, trial)?;
        Ok((d.scene, d.samples))
    }

    /// Every `(value, trial)` pair, run on the configured pool.
    pub fn sweep(&self) -> SweepResult {
        let jobs: Vec<(usize, f64, usize)> = self
            .cfg
            .sweep
            .values
            .iter()
            .enumerate()
            .flat_map(|(vi, &v)| (0..self.cfg.trials).map(move |t| (vi, v, t)))
            .collect();
        let mut keyed: Vec<((usize, usize), Vec<TrialResult>)> = in_pool(self.cfg.threads, || {
            jobs.par_iter()
                .map(|&(vi, v, t)| ((vi, t), self.run_trial(v, t)))
                .collect()
        });
        keyed.sort_by_key(|(k, _)| *k);
        let rows: Vec<TrialResult> = keyed.into_iter().flat_map(|(_, r)| r).collect();
        let aggregates = aggregate(&rows);
        SweepResult { rows, aggregates }
    }
}

struct TrialData {
    scene: VmfMixture,
    truth: VarianceProfile,
    sel: crate::observation::SelectionMap,
    y: Vec<Complex64>,
    samples: SampleSet,
}

pub fn run_trial(cfg: &ExperimentConfig, value: f64, trial: usize) -> Result<Vec<TrialResult>> {
    Ok(Experiment::new(cfg.clone())?.run_trial(value, trial))
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    Ok(Experiment::new(cfg.clone())?.sweep())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median and mean NMSE per `(sweep value, method)`, in first-seen value
/// order and [`Method::ALL`] order.
pub fn aggregate(rows: &[TrialResult]) -> Vec<AggregateRow> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<(usize, Method), Vec<&TrialResult>> = BTreeMap::new();
    for r in rows {
        let bits = r.sweep_value.to_bits();
        let vi = match order.iter().position(|&b| b == bits) {
            Some(i) => i,
            None => {
                order.push(bits);
                order.len() - 1
            }
        };
        groups.entry((vi, r.method)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let ok: Vec<&TrialResult> = g.iter().copied().filter(|r| r.ok()).collect();
            let db: Vec<f64> = ok.iter().filter_map(|r| r.nmse_db).collect();
            let lin: Vec<f64> = ok.iter().filter_map(|r| r.nmse_linear).collect();
            let mean = (!lin.is_empty()).then(|| to_db(lin.iter().sum::<f64>() / lin.len() as f64));
            AggregateRow {
                sweep_axis: g[0].sweep_axis,
                sweep_value: g[0].sweep_value,
                method: g[0].method,
                median_nmse_db: median(db),
                mean_nmse_db: mean,
                trials_ok: ok.len(),
                trials_failed: g.len() - ok.len(),
            }
        })
        .collect()
}

/// CSV view of [`TrialResult`]; the error text is not part of the schema.
#[derive(Serialize, Deserialize)]
struct RawCsvRow {
    sweep_axis: SweepAxis,
    sweep_value: f64,
    trial: usize,
    method: Method,
    nmse_linear: Option<f64>,
    nmse_db: Option<f64>,
    wall_ms: Option<f64>,
    iterations: Option<usize>,
    pruned: Option<usize>,
}

pub fn write_raw_csv<W: Write>(rows: &[TrialResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(RawCsvRow {
            sweep_axis: r.sweep_axis,
            sweep_value: r.sweep_value,
            trial: r.trial,
            method: r.method,
            nmse_linear: r.nmse_linear,
            nmse_db: r.nmse_db,
            wall_ms: r.wall_ms,
            iterations: r.iterations,
            pruned: r.pruned,
        })
        .map_err(|e| Error::csv("<raw>", e))?;
    }
    out.flush().map_err(|e| Error::io("<raw>", e))
}

pub fn read_raw_csv<R: Read>(r: R) -> Result<Vec<TrialResult>> {
    csv::Reader::from_reader(r)
        .deserialize::<RawCsvRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::csv("<raw>", e))?;
            Ok(TrialResult {
                sweep_axis: row.sweep_axis,
                sweep_value: row.sweep_value,
                trial: row.trial,
                method: row.method,
                nmse_linear: row.nmse_linear,
                nmse_db: row.nmse_db,
                wall_ms: row.wall_ms,
                iterations: row.iterations,
                pruned: row.pruned,
                error: None,
            })
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::csv("<aggregate>", e))?;
    }
    out.flush().map_err(|e| Error::io("<aggregate>", e))
}

pub fn read_aggregate_csv<R: Read>(r: R) -> Result<Vec<AggregateRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()
        .map_err(|e| Error::csv("<aggregate>", e))
}

/// Paths written by [`emit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub raw: PathBuf,
    pub aggregate: PathBuf,
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Writes `<axis>_raw.<ext>` and `<axis>_aggregate.<ext>` into `dir`.
pub fn emit(result: &SweepResult, dir: &Path, format: OutputFormat) -> Result<Emitted> {
    if result.rows.is_empty() {
        return Err(Error::InvalidSettings("nothing to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let axis = result.rows[0].sweep_axis;
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let raw = dir.join(format!("{axis}_raw.{ext}"));
    let aggregate = dir.join(format!("{axis}_aggregate.{ext}"));
    match format {
        OutputFormat::Csv => {
            write_raw_csv(&result.rows, create(&raw)?).map_err(|e| relabel(e, &raw))?;
            write_aggregate_csv(&result.aggregates, create(&aggregate)?)
                .map_err(|e| relabel(e, &aggregate))?;
        }
        OutputFormat::Json => {
            let mut w = create(&raw)?;
            serde_json::to_writer_pretty(&mut w, &result.rows)?;
            w.flush().map_err(|e| Error::io(&raw, e))?;
            let mut w = create(&aggregate)?;
            serde_json::to_writer_pretty(&mut w, &result.aggregates)?;
            w.flush().map_err(|e| Error::io(&aggregate, e))?;
        }
    }
    Ok(Emitted { raw, aggregate })
}

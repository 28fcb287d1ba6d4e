//! Holographic-MIMO channel synthesis in the wavenumber domain and recovery of
//! its von Mises–Fisher mixture angular spectrum.
//!
//! The pipeline: [`lattice`] enumerates the propagating Fourier harmonics,
//! [`vmf`] describes the angular spectrum, [`channel`] integrates it into
//! per-harmonic variances and draws channels, [`observation`] models the
//! RF-chain sampling, [`wd_em`] fits the mixture back from the samples, and
//! [`baselines`] holds the comparison estimators. [`harness`] drives seeded
//! Monte-Carlo sweeps over all of them.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod observation;
pub mod quadrature;
pub mod seed;
pub mod vmf;
pub mod wd_em;

pub use channel::{
    build_dictionary, covariance_nmse, sample_channel, spatial_channel, variance_profile,
    Dictionary, NmseMode, QuadratureSettings, SparseChannel, VarianceProfile,
};
pub use error::{Error, Result};
pub use harness::{
    AggregateRow, Experiment, ExperimentConfig, Method, OutputFormat, Sampling, SweepAxis,
    SweepResult, TrialResult,
};
pub use lattice::{
    build_lattice, cell_centre_angles, index_to_angles, ApertureConfig, LatticeEllipse,
    SampleAnchor, ThetaBranch, WavenumberIndex,
};
pub use observation::{SamplePoint, SampleSet, SelectionMap, SelectionRule};
pub use vmf::{cluster_density, mixture_density, random_scene, VmfCluster, VmfMixture};
pub use wd_em::{EmSettings, FitReport, Responsibilities};

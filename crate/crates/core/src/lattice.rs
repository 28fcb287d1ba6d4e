//! Propagating Fourier-harmonic index set of a rectangular aperture.
//!
//! A harmonic `(m_x, m_y)` is kept when its transverse wavenumber
//! `(2π m_x / L_x, 2π m_y / L_y)` lies inside the disk of radius `k = 2π f_c / c`;
//! everything outside is evanescent. Members are stored in row-major scan order
//! (ascending `m_y`, then ascending `m_x`), and ordinals are 1-based.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative slack on the propagation bound so that exact-boundary harmonics
/// survive floating-point rounding.
const BOUNDARY_SLACK: f64 = 1e-12;

/// Planar array geometry. `L_x = N_x·δ` and `L_y = N_y·δ` hold by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ApertureSpec", into = "ApertureSpec")]
pub struct ApertureConfig {
    l_x: f64,
    l_y: f64,
    f_c: f64,
    delta: f64,
    n_x: usize,
    n_y: usize,
    z_0: f64,
}

/// Serialized form. `delta`, `N_x` and `N_y` may be omitted, in which case the
/// element count is the smallest one whose common spacing is at most half a
/// wavelength and divides both sides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApertureSpec {
    #[serde(rename = "L_x")]
    pub l_x: f64,
    #[serde(rename = "L_y")]
    pub l_y: f64,
    pub f_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "N_x", default, skip_serializing_if = "Option::is_none")]
    pub n_x: Option<usize>,
    #[serde(rename = "N_y", default, skip_serializing_if = "Option::is_none")]
    pub n_y: Option<usize>,
    #[serde(default)]
    pub z_0: f64,
}

impl TryFrom<ApertureSpec> for ApertureConfig {
    type Error = Error;

    fn try_from(s: ApertureSpec) -> Result<Self> {
        match (s.delta, s.n_x, s.n_y) {
            (None, None, None) => {
                let mut a = ApertureConfig::half_wavelength(s.l_x, s.l_y, s.f_c)?;
                a.z_0 = s.z_0;
                Ok(a)
            }
            (delta, n_x, n_y) => {
                let delta = match (delta, n_x) {
                    (Some(d), _) => d,
                    (None, Some(n)) => s.l_x / n as f64,
                    (None, None) => {
                        return Err(Error::InvalidAperture(
                            "give delta or N_x when N_y is set".into(),
                        ))
                    }
                };
                let n_x = n_x.unwrap_or_else(|| (s.l_x / delta).round() as usize);
                let n_y = n_y.unwrap_or_else(|| (s.l_y / delta).round() as usize);
                ApertureConfig::new(s.l_x, s.l_y, s.f_c, delta, n_x, n_y, s.z_0)
            }
        }
    }
}

impl From<ApertureConfig> for ApertureSpec {
    fn from(a: ApertureConfig) -> Self {
        ApertureSpec {
            l_x: a.l_x,
            l_y: a.l_y,
            f_c: a.f_c,
            delta: Some(a.delta),
            n_x: Some(a.n_x),
            n_y: Some(a.n_y),
            z_0: a.z_0,
        }
    }
}

impl ApertureConfig {
    pub fn new(
        l_x: f64,
        l_y: f64,
        f_c: f64,
        delta: f64,
        n_x: usize,
        n_y: usize,
        z_0: f64,
    ) -> Result<Self> {
        let finite = [l_x, l_y, f_c, delta, z_0].iter().all(|v| v.is_finite());
        if !finite || f_c <= 0.0 || delta <= 0.0 || l_x <= 0.0 || l_y <= 0.0 {
            return Err(Error::InvalidAperture(format!(
                "need positive finite L_x, L_y, f_c, delta (got {l_x}, {l_y}, {f_c}, {delta})"
            )));
        }
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidAperture("element counts must be >= 1".into()));
        }
        for (l, n, axis) in [(l_x, n_x, 'x'), (l_y, n_y, 'y')] {
            if ((n as f64 * delta) - l).abs() > 1e-9 * l {
                return Err(Error::InvalidAperture(format!(
                    "L_{axis} = {l} is not N_{axis}·delta = {n}·{delta}"
                )));
            }
        }
        Ok(ApertureConfig {
            l_x,
            l_y,
            f_c,
            delta,
            n_x,
            n_y,
            z_0,
        })
    }

    /// Fewest elements with spacing ≤ λ/2 that tile the aperture exactly.
    ///
    /// Both axes share one spacing, so for rectangular apertures `N_x` is
    /// raised until `L_y` is also a whole number of spacings.
    pub fn half_wavelength(l_x: f64, l_y: f64, f_c: f64) -> Result<Self> {
        if !(f_c > 0.0 && l_x > 0.0 && l_y > 0.0) {
            return Err(Error::InvalidAperture(format!(
                "need positive L_x, L_y, f_c (got {l_x}, {l_y}, {f_c})"
            )));
        }
        let half = SPEED_OF_LIGHT / f_c / 2.0;
        let first = (l_x / half - 1e-9).ceil().max(1.0) as usize;
        for n_x in first..=4 * first {
            let delta = l_x / n_x as f64;
            let n_y = (l_y / delta).round().max(1.0) as usize;
            if ((n_y as f64 * delta) - l_y).abs() <= 1e-9 * l_y {
                return ApertureConfig::new(l_x, l_y, f_c, delta, n_x, n_y, 0.0);
            }
        }
        Err(Error::InvalidAperture(format!(
            "no common spacing <= lambda/2 tiles {l_x} x {l_y}"
        )))
    }

    /// Square desk-scale aperture.
    pub fn square(side: f64, f_c: f64) -> Result<Self> {
        Self::half_wavelength(side, side, f_c)
    }

    pub fn l_x(&self) -> f64 {
        self.l_x
    }
    pub fn l_y(&self) -> f64 {
        self.l_y
    }
    pub fn f_c(&self) -> f64 {
        self.f_c
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn z_0(&self) -> f64 {
        self.z_0
    }
    /// Antenna count `N = N_x·N_y`.
    pub fn antennas(&self) -> usize {
        self.n_x * self.n_y
    }
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.f_c / SPEED_OF_LIGHT
    }
    /// Largest harmonic magnitude per axis, `L·f_c/c`.
    pub fn harmonic_bounds(&self) -> (f64, f64) {
        (
            self.l_x * self.f_c / SPEED_OF_LIGHT,
            self.l_y * self.f_c / SPEED_OF_LIGHT,
        )
    }
    /// Cell width in direction cosines, `λ/L`, per axis.
    pub fn cell_widths(&self) -> (f64, f64) {
        let lambda = self.wavelength();
        (lambda / self.l_x, lambda / self.l_y)
    }

    /// Direction cosines `(k_x/k, k_y/k)` of a harmonic.
    pub fn direction_cosines(&self, m: WavenumberIndex) -> (f64, f64) {
        let (h_x, h_y) = self.cell_widths();
        (m.m_x as f64 * h_x, m.m_y as f64 * h_y)
    }

    /// Whether a harmonic propagates (membership test of the lattice ellipse).
    pub fn propagates(&self, m: WavenumberIndex) -> bool {
        let (u, v) = self.direction_cosines(m);
        u * u + v * v <= 1.0 + BOUNDARY_SLACK
    }
}

/// Integer Fourier-harmonic index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WavenumberIndex {
    pub m_x: i64,
    pub m_y: i64,
}

impl WavenumberIndex {
    pub const fn new(m_x: i64, m_y: i64) -> Self {
        WavenumberIndex { m_x, m_y }
    }
}

impl fmt::Display for WavenumberIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.m_x, self.m_y)
    }
}

/// How to resolve the zenith angle for harmonics with `m_x·m_y < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaBranch {
    /// Adds π to the arcsine for `m_x·m_y < 0`, which puts θ in `[π, 3π/2]`.
    Paper,
    /// Plain arcsine for every quadrant, θ ∈ `[0, π/2]`.
    #[default]
    Principal,
}

impl std::str::FromStr for ThetaBranch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ThetaBranch::Paper),
            "principal" => Ok(ThetaBranch::Principal),
            other => Err(Error::Config(format!("unknown theta branch {other:?}"))),
        }
    }
}

/// The admissible harmonic set ξ in canonical scan order.
#[derive(Debug, Clone)]
pub struct LatticeEllipse {
    indices: Vec<WavenumberIndex>,
    ordinals: HashMap<WavenumberIndex, usize>,
    aperture: ApertureConfig,
}

impl PartialEq for LatticeEllipse {
    fn eq(&self, other: &Self) -> bool {
        self.aperture == other.aperture && self.indices == other.indices
    }
}

/// Enumerates ξ in row-major order (ascending `m_y`, then `m_x`).
pub fn build_lattice(aperture: ApertureConfig) -> Result<LatticeEllipse> {
    let (bound_x, bound_y) = aperture.harmonic_bounds();
    if bound_x < 1.0 || bound_y < 1.0 {
        return Err(Error::DegenerateAperture { bound_x, bound_y });
    }
    let (h_x, h_y) = aperture.cell_widths();
    let reach_y = bound_y.floor() as i64;
    let mut indices = Vec::new();
    for m_y in -reach_y..=reach_y {
        let v = m_y as f64 * h_y;
        let rem = (1.0 + BOUNDARY_SLACK - v * v).max(0.0);
        // Row half-width in units of m_x, widened by one and filtered exactly.
        let reach_x = (rem.sqrt() / h_x).floor() as i64 + 1;
        for m_x in -reach_x..=reach_x {
            let m = WavenumberIndex::new(m_x, m_y);
            if aperture.propagates(m) {
                indices.push(m);
            }
        }
    }
    let ordinals = indices
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, i + 1))
        .collect();
    Ok(LatticeEllipse {
        indices,
        ordinals,
        aperture,
    })
}

impl LatticeEllipse {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[WavenumberIndex] {
        &self.indices
    }

    pub fn aperture(&self) -> &ApertureConfig {
        &self.aperture
    }

    pub fn contains(&self, m: WavenumberIndex) -> bool {
        self.ordinals.contains_key(&m)
    }

    /// The `ordinal`-th harmonic (1-based) in scan order.
    pub fn scan_position(&self, ordinal: usize) -> Result<WavenumberIndex> {
        if ordinal == 0 || ordinal > self.indices.len() {
            return Err(Error::OrdinalOutOfRange {
                ordinal,
                len: self.indices.len(),
            });
        }
        Ok(self.indices[ordinal - 1])
    }

    /// Inverse of [`scan_position`](Self::scan_position).
    pub fn ordinal_of(&self, m: WavenumberIndex) -> Result<usize> {
        self.ordinals.get(&m).copied().ok_or(Error::NotInLattice {
            m_x: m.m_x,
            m_y: m.m_y,
        })
    }

    pub fn angles(&self, m: WavenumberIndex, branch: ThetaBranch) -> Result<(f64, f64)> {
        if !self.contains(m) {
            return Err(Error::NotInLattice {
                m_x: m.m_x,
                m_y: m.m_y,
            });
        }
        index_to_angles(m, &self.aperture, branch)
    }

    pub fn sample_angles(
        &self,
        m: WavenumberIndex,
        branch: ThetaBranch,
        anchor: SampleAnchor,
    ) -> Result<(f64, f64)> {
        match anchor {
            SampleAnchor::Corner => self.angles(m, branch),
            SampleAnchor::Centre if self.contains(m) => {
                cell_centre_angles(m, &self.aperture, branch)
            }
            SampleAnchor::Centre => Err(Error::NotInLattice {
                m_x: m.m_x,
                m_y: m.m_y,
            }),
        }
    }
}

/// Maps a propagating harmonic to its arrival angles `(θ, φ)`.
///
/// `sin θ = c·|(m_x/L_x, m_y/L_y)| / f_c`. The azimuth takes the arctangent of
/// `(m_y/L_y)/(m_x/L_x)` with quadrant offsets 0, π, 2π; on the axes φ is
/// 0, π/2, π, 3π/2 (and 0 at the origin).
pub fn index_to_angles(
    m: WavenumberIndex,
    aperture: &ApertureConfig,
    branch: ThetaBranch,
) -> Result<(f64, f64)> {
    if !aperture.propagates(m) {
        return Err(Error::NotInLattice {
            m_x: m.m_x,
            m_y: m.m_y,
        });
    }
    let (u, v) = aperture.direction_cosines(m);
    let sin_theta = (u * u + v * v).sqrt().min(1.0);
    let mut theta = sin_theta.asin();
    if branch == ThetaBranch::Paper && m.m_x * m.m_y < 0 {
        theta += PI;
    }
    let phi = match (m.m_x.signum(), m.m_y.signum()) {
        (0, 0) | (1, 0) => 0.0,
        (-1, 0) => PI,
        (0, 1) => FRAC_PI_2,
        (0, -1) => 3.0 * FRAC_PI_2,
        (1, 1) => (v / u).atan(),
        (-1, _) => (v / u).atan() + PI,
        _ => (v / u).atan() + 2.0 * PI,
    };
    Ok((theta, phi))
}

/// Which point of a harmonic's wavenumber cell the sample angles describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleAnchor {
    /// The lattice point `m` itself, via [`index_to_angles`].
    #[default]
    Corner,
    /// The middle `m + ½` of the cell `[m, m+1]` whose mass σ²(m) carries,
    /// pulled onto the unit circle when it falls outside.
    Centre,
}

impl std::str::FromStr for SampleAnchor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corner" => Ok(SampleAnchor::Corner),
            "centre" | "center" => Ok(SampleAnchor::Centre),
            other => Err(Error::Config(format!("unknown sample anchor {other:?}"))),
        }
    }
}

/// Arrival angles of the centre of a harmonic's cell.
pub fn cell_centre_angles(
    m: WavenumberIndex,
    aperture: &ApertureConfig,
    branch: ThetaBranch,
) -> Result<(f64, f64)> {
    if !aperture.propagates(m) {
        return Err(Error::NotInLattice {
            m_x: m.m_x,
            m_y: m.m_y,
        });
    }
    let (h_x, h_y) = aperture.cell_widths();
    let u = (m.m_x as f64 + 0.5) * h_x;
    let v = (m.m_y as f64 + 0.5) * h_y;
    let mut theta = (u * u + v * v).sqrt().min(1.0).asin();
    if branch == ThetaBranch::Paper && u * v < 0.0 {
        theta += PI;
    }
    let phi = v.atan2(u).rem_euclid(2.0 * PI);
    Ok((theta, if phi >= 2.0 * PI { 0.0 } else { phi }))
}

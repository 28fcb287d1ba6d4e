//! von Mises–Fisher clusters on the sphere, parameterised by zenith/azimuth.
//!
//! A cluster's density with respect to `dθ dφ` is
//! `α sinθ / (4π sinh α) · exp(α ⟨x(θ,φ), μ⟩)`, evaluated in log space so that
//! large concentrations do not overflow `sinh`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const LN_4PI: f64 = 2.531_024_246_969_290_7;
/// Below this concentration the kernel is treated as uniform.
pub const ALPHA_UNIFORM: f64 = 1e-8;
/// Tolerance on `Σ w = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Unit vector for zenith `theta` and azimuth `phi`.
#[inline]
pub fn direction(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

#[inline]
pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `log sinh α` without overflow.
#[inline]
pub fn log_sinh(alpha: f64) -> f64 {
    alpha + (-(-2.0 * alpha).exp_m1()).ln() - std::f64::consts::LN_2
}

/// Log of the solid-angle normaliser `α / (4π sinh α)`.
#[inline]
pub fn log_normalizer(alpha: f64) -> f64 {
    if alpha < ALPHA_UNIFORM {
        -LN_4PI
    } else {
        alpha.ln() - LN_4PI - log_sinh(alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmfCluster {
    pub w: f64,
    pub alpha: f64,
    /// Mean-direction zenith, radians in (0, π).
    pub theta: f64,
    /// Mean-direction azimuth, radians in [0, 2π).
    pub phi: f64,
}

impl VmfCluster {
    pub fn new(w: f64, alpha: f64, theta: f64, phi: f64) -> Result<Self> {
        let c = VmfCluster {
            w,
            alpha,
            theta,
            phi,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidMixture(format!(
                "concentration must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.theta > 0.0 && self.theta < PI) || !(0.0..2.0 * PI).contains(&self.phi) {
            return Err(Error::InvalidMixture(format!(
                "mean direction ({}, {}) outside (0,π)×[0,2π)",
                self.theta, self.phi
            )));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidMixture(format!(
                "weight {} is negative",
                self.w
            )));
        }
        Ok(())
    }

    pub fn mean_direction(&self) -> [f64; 3] {
        direction(self.theta, self.phi)
    }

    /// Log density with respect to solid angle at unit vector `x`.
    #[inline]
    pub fn log_kernel(&self, x: &[f64; 3]) -> f64 {
        if self.alpha < ALPHA_UNIFORM {
            return -LN_4PI;
        }
        log_normalizer(self.alpha) + self.alpha * dot(x, &self.mean_direction())
    }
}

fn check_angles(theta: f64, phi: f64) -> Result<()> {
    if theta > 0.0 && theta < PI && (0.0..2.0 * PI).contains(&phi) {
        Ok(())
    } else {
        Err(Error::AngleDomain { theta, phi })
    }
}

/// Density of one cluster with respect to `dθ dφ`.
pub fn cluster_density(theta: f64, phi: f64, c: &VmfCluster) -> Result<f64> {
    check_angles(theta, phi)?;
    if c.alpha < ALPHA_UNIFORM {
        return Ok(theta.sin() / (4.0 * PI));
    }
    Ok((c.log_kernel(&direction(theta, phi)) + theta.sin().ln()).exp())
}

/// Weighted mixture of vMF clusters; weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec")]
pub struct VmfMixture {
    clusters: Vec<VmfCluster>,
}

#[derive(Deserialize)]
struct MixtureSpec {
    clusters: Vec<VmfCluster>,
}

impl TryFrom<MixtureSpec> for VmfMixture {
    type Error = Error;
    fn try_from(s: MixtureSpec) -> Result<Self> {
        VmfMixture::new(s.clusters)
    }
}

impl VmfMixture {
    pub fn new(clusters: Vec<VmfCluster>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::InvalidMixture("needs at least one cluster".into()));
        }
        for c in &clusters {
            c.validate()?;
        }
        let total: f64 = clusters.iter().map(|c| c.w).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        Ok(VmfMixture { clusters })
    }

    /// Rescales the weights to sum to one before validating.
    pub fn normalized(mut clusters: Vec<VmfCluster>) -> Result<Self> {
        let total: f64 = clusters.iter().map(|c| c.w).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        for c in &mut clusters {
            c.w /= total;
        }
        VmfMixture::new(clusters)
    }

    pub fn clusters(&self) -> &[VmfCluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.w).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn mixture_density(theta: f64, phi: f64, m: &VmfMixture) -> Result<f64> {
    m.clusters().iter().try_fold(
        0.0,
        |acc, c| Ok(acc + c.w * cluster_density(theta, phi, c)?),
    )
}

/// Ranges the random ground-truth scenes draw from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRanges {
    pub alpha: (f64, f64),
    pub theta: (f64, f64),
    pub phi: (f64, f64),
}

impl Default for SceneRanges {
    fn default() -> Self {
        SceneRanges {
            alpha: (50.0, 100.0),
            theta: (0.0, FRAC_PI_2),
            phi: (0.0, 2.0 * PI),
        }
    }
}

/// Draws a random scene: weights ~ U(0,1) then normalised, α, θ, φ uniform on
/// their ranges.
pub fn random_scene_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_c: usize,
    ranges: &SceneRanges,
) -> Result<VmfMixture> {
    if n_c == 0 {
        return Err(Error::InvalidSettings("scene needs N_c >= 1".into()));
    }
    let mut clusters = Vec::with_capacity(n_c);
    for _ in 0..n_c {
        let w = loop {
            let w: f64 = rng.random();
            if w > 0.0 {
                break w;
            }
        };
        let alpha = rng.random_range(ranges.alpha.0..ranges.alpha.1);
        let theta = loop {
            let t = rng.random_range(ranges.theta.0..ranges.theta.1);
            if t > 0.0 && t < PI {
                break t;
            }
        };
        let phi = rng
            .random_range(ranges.phi.0..ranges.phi.1)
            .rem_euclid(2.0 * PI);
        clusters.push(VmfCluster {
            w,
            alpha,
            theta,
            phi,
        });
    }
    VmfMixture::normalized(clusters)
}

pub fn random_scene(seed: u64, n_c: usize) -> Result<VmfMixture> {
    random_scene_with(&mut seed::rng(seed), n_c, &SceneRanges::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Gauss–Legendre on a fine grid, independent of the adaptive
    /// integrator used elsewhere.
    fn sphere_integral(f: impl Fn(f64, f64) -> f64, n_theta: usize, n_phi: usize) -> f64 {
        let nodes = [
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.0, 0.568_888_888_888_888_9),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let ht = PI / n_theta as f64;
        let hp = 2.0 * PI / n_phi as f64;
        let mut total = 0.0;
        for it in 0..n_theta {
            for &(xt, wt) in &nodes {
                let t = (it as f64 + 0.5 + 0.5 * xt) * ht;
                let mut row = 0.0;
                for ip in 0..n_phi {
                    for &(xp, wp) in &nodes {
                        let p = (ip as f64 + 0.5 + 0.5 * xp) * hp;
                        row += wp * f(t, p);
                    }
                }
                total += wt * row * hp / 2.0;
            }
        }
        total * ht / 2.0
    }

    #[test]
    fn peak_value() {
        let c = VmfCluster::new(1.0, 30.0, 0.9, 1.3).unwrap();
        let got = cluster_density(0.9, 1.3, &c).unwrap();
        let expect = 30.0 * 0.9f64.sin() * 30f64.exp() / (4.0 * PI * 30f64.sinh());
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn uniform_limit() {
        for alpha in [1e-9, 1e-12] {
            let c = VmfCluster::new(1.0, alpha, 0.4, 5.0).unwrap();
            let got = cluster_density(1.1, 0.2, &c).unwrap();
            assert!((got - 1.1f64.sin() / (4.0 * PI)).abs() < 1e-15);
        }
        // Just above the guard the kernel is still continuous.
        let c = VmfCluster::new(1.0, 2e-8, 0.4, 5.0).unwrap();
        let got = cluster_density(1.1, 0.2, &c).unwrap();
        assert!((got - 1.1f64.sin() / (4.0 * PI)).abs() < 1e-8);
    }

    #[test]
    fn normalisation() {
        for (alpha, t0, p0) in [
            (0.01, 0.3, 0.2),
            (1.0, 2.0, 4.0),
            (80.0, 0.7, 2.1),
            (300.0, 1.2, 0.5),
        ] {
            let c = VmfCluster::new(1.0, alpha, t0, p0).unwrap();
            let n = if alpha > 100.0 { 240 } else { 120 };
            let total = sphere_integral(|t, p| cluster_density(t, p, &c).unwrap(), n, 2 * n);
            assert!((total - 1.0).abs() < 1e-6, "alpha={alpha}: {total}");
        }
    }

    #[test]
    fn mixture_integrates_to_one() {
        let m = random_scene(11, 3).unwrap();
        let total = sphere_integral(|t, p| mixture_density(t, p, &m).unwrap(), 160, 320);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn large_concentration_is_finite() {
        let c = VmfCluster::new(1.0, 700.0, 1.0, 1.0).unwrap();
        let peak = cluster_density(1.0, 1.0, &c).unwrap();
        assert!(peak.is_finite() && peak > 0.0);
        assert!((peak - 700.0 * 1f64.sin() / (2.0 * PI)).abs() < 1e-9 * peak);
        let off = cluster_density(2.5, 4.0, &c).unwrap();
        assert!(off.is_finite() && off >= 0.0);
    }

    #[test]
    fn depends_on_azimuth_difference_only() {
        let c = VmfCluster::new(1.0, 12.0, 0.8, 0.3).unwrap();
        for shift in [0.5, 2.0, 5.9] {
            let moved = VmfCluster {
                phi: (0.3f64 + shift).rem_euclid(2.0 * PI),
                ..c
            };
            for (t, p) in [(0.5, 0.1), (1.4, 3.0), (2.2, 6.0)] {
                let a = cluster_density(t, p, &c).unwrap();
                let b = cluster_density(t, (p + shift).rem_euclid(2.0 * PI), &moved).unwrap();
                assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{a} {b}");
            }
        }
    }

    #[test]
    fn mixture_degenerate_cases() {
        let c = VmfCluster::new(1.0, 20.0, 1.0, 2.0).unwrap();
        let single = VmfMixture::new(vec![c]).unwrap();
        let twin =
            VmfMixture::new(vec![VmfCluster { w: 0.5, ..c }, VmfCluster { w: 0.5, ..c }]).unwrap();
        for (t, p) in [(0.9, 2.1), (0.2, 5.0)] {
            let a = mixture_density(t, p, &single).unwrap();
            assert_eq!(a, cluster_density(t, p, &c).unwrap());
            assert!((mixture_density(t, p, &twin).unwrap() - a).abs() <= 1e-15 * a.max(1e-300));
        }
    }

    #[test]
    fn domain_errors() {
        let c = VmfCluster::new(1.0, 2.0, 1.0, 1.0).unwrap();
        assert!(cluster_density(0.0, 1.0, &c).is_err());
        assert!(cluster_density(1.0, 2.0 * PI, &c).is_err());
        assert!(VmfCluster::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(VmfMixture::new(vec![VmfCluster { w: 0.9, ..c }]).is_err());
    }

    #[test]
    fn scenes() {
        let m = random_scene(5, 3).unwrap();
        assert_eq!(m.len(), 3);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in m.clusters() {
            assert!((50.0..100.0).contains(&c.alpha));
            assert!(c.theta > 0.0 && c.theta < FRAC_PI_2);
        }
        assert_eq!(random_scene(9, 1).unwrap().clusters()[0].w, 1.0);
        assert_eq!(random_scene(42, 3).unwrap(), random_scene(42, 3).unwrap());
        assert_ne!(random_scene(42, 3).unwrap(), random_scene(43, 3).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let m = random_scene(3, 2).unwrap();
        let s = m.to_json().unwrap();
        assert!(s.contains("\"clusters\"") && s.contains("\"alpha\""));
        assert_eq!(VmfMixture::from_json(&s).unwrap(), m);
        assert!(VmfMixture::from_json(r#"{"clusters":[]}"#).is_err());
    }
}

//! Experiment configuration, geometry, and seeded channel synthesis.
//!
//! Channels follow the desk reproduction of the simulation setup: a Rician BS–RIS link whose
//! line-of-sight part comes from the array geometry, Rayleigh BS–user and RIS–user links, and a
//! pure line-of-sight RIS–target link `h_rt = α_rt·a_M(θ)`.
//!
//! # Random streams
//!
//! Every channel block draws from its own ChaCha20 stream keyed by the scenario seed, so
//! changing `K` or `M` never perturbs an unrelated block:
//!
//! | block                         | stream id          |
//! |-------------------------------|--------------------|
//! | BS–RIS NLoS part of `G`       | `1 << 32`          |
//! | user `k` placement angle      | `(2 << 32) \| k`   |
//! | BS–user `k` channel `h_d,k`   | `(3 << 32) \| k`   |
//! | RIS–user `k` channel `h_r,k`  | `(4 << 32) \| k`   |

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec, C64};

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// A point in the plane, meters.
pub type Point = [f64; 2];

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Direction of `to` seen from `from`, measured from the +y axis (array broadside).
fn link_angle(from: Point, to: Point) -> f64 {
    (to[0] - from[0]).atan2(to[1] - from[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs: Point,
    pub ris: Point,
    pub target: Point,
    pub user_center: Point,
    pub user_radius: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs: [0.0, 0.0],
            ris: [0.0, 50.0],
            target: [3.0, 47.0],
            user_center: [-10.0, 40.0],
            user_radius: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossExponents {
    pub bs_ris: f64,
    pub bs_user: f64,
    pub ris_user: f64,
    pub ris_target: f64,
}

impl Default for PathLossExponents {
    fn default() -> Self {
        Self { bs_ris: 2.2, bs_user: 3.5, ris_user: 2.3, ris_target: 2.2 }
    }
}

/// Full experiment configuration. All powers and variances are linear (watts); dB conversions
/// only happen at the config and CSV boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// `N`, transmit and receive antennas at the BS.
    pub n_antennas: usize,
    /// `M`, RIS elements.
    pub m_elements: usize,
    /// `K`, single-antenna users.
    pub k_users: usize,
    /// `L`, radar snapshots.
    pub n_samples: usize,
    pub p_bs: f64,
    pub p_ris: f64,
    pub a_max: f64,
    /// Per-user linear SINR targets `γ_k`.
    pub sinr_targets: Vec<f64>,
    pub noise_user: f64,
    pub noise_ris: f64,
    pub noise_bs: f64,
    /// RCS variance `σ_t²`.
    pub rcs_var: f64,
    /// Target DoA seen from the RIS, radians.
    pub theta: f64,
    pub geometry: Geometry,
    pub pathloss_exponents: PathLossExponents,
    /// `C_0`, linear gain at the reference distance.
    pub pathloss_ref: f64,
    /// `d_0`, meters.
    pub pathloss_ref_distance: f64,
    /// Linear Rician K-factor of the BS–RIS link; `f64::INFINITY` gives a pure LoS channel.
    pub rician_k: f64,
    pub seed: u64,
}

impl Default for Scenario {
    /// The full-size reproduction configuration.
    fn default() -> Self {
        Self {
            n_antennas: 16,
            m_elements: 8,
            k_users: 2,
            n_samples: 1024,
            p_bs: dbm_to_watt(23.0),
            p_ris: dbm_to_watt(10.0),
            a_max: 8.0,
            sinr_targets: vec![db_to_linear(16.0); 2],
            noise_user: dbm_to_watt(-80.0),
            noise_ris: dbm_to_watt(-80.0),
            noise_bs: dbm_to_watt(-80.0),
            rcs_var: 1.0,
            theta: PI / 4.0,
            geometry: Geometry::default(),
            pathloss_exponents: PathLossExponents::default(),
            pathloss_ref: db_to_linear(-30.0),
            pathloss_ref_distance: 1.0,
            rician_k: db_to_linear(3.0),
            seed: 0,
        }
    }
}

impl Scenario {
    /// Smaller instance (`N = 8`, `M = 6`, `K = 2`) used by the test-suite and quick runs.
    pub fn desk() -> Self {
        Self { n_antennas: 8, m_elements: 6, ..Self::default() }
    }

    /// Resizes the user set, keeping existing targets and repeating the last one.
    pub fn with_users(mut self, k: usize) -> Self {
        let fill = self.sinr_targets.last().copied().unwrap_or(db_to_linear(16.0));
        self.sinr_targets.resize(k, fill);
        self.k_users = k;
        self
    }

    /// Sets every user's SINR target to the same linear value.
    pub fn with_common_sinr(mut self, gamma: f64) -> Self {
        self.sinr_targets = vec![gamma; self.k_users];
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn path_loss(&self, d: f64, exponent: f64) -> Result<f64> {
        path_loss(d, exponent, self.pathloss_ref, self.pathloss_ref_distance)
    }

    pub fn ris_target_distance(&self) -> f64 {
        distance(self.geometry.ris, self.geometry.target)
    }

    /// Path-loss amplitude `α_rt` of the RIS–target link.
    pub fn alpha_rt(&self) -> Result<f64> {
        Ok(self
            .path_loss(self.ris_target_distance(), self.pathloss_exponents.ris_target)?
            .sqrt())
    }

    /// RIS static power draw `c_r` when every element sits at amplitude `a`: the `W`-independent
    /// part of the RIS power, `σ_t²σ_z²α_rt⁴M²a⁴ + 2σ_z²Ma²`.
    pub fn static_ris_draw(&self, a: f64) -> Result<f64> {
        let m = self.m_elements as f64;
        let alpha = self.alpha_rt()?;
        Ok(self.rcs_var * self.noise_ris * alpha.powi(4) * m * m * a.powi(4)
            + 2.0 * self.noise_ris * m * a * a)
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let mut positive = |name: &str, x: f64| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive and finite (got {x})"));
            }
        };
        positive("p_bs", self.p_bs);
        positive("noise_user", self.noise_user);
        positive("noise_ris", self.noise_ris);
        positive("noise_bs", self.noise_bs);
        positive("rcs_var", self.rcs_var);
        positive("pathloss_ref", self.pathloss_ref);
        positive("pathloss_ref_distance", self.pathloss_ref_distance);
        positive("geometry.user_radius", self.geometry.user_radius);
        positive("pathloss_exponents.bs_ris", self.pathloss_exponents.bs_ris);
        positive("pathloss_exponents.bs_user", self.pathloss_exponents.bs_user);
        positive("pathloss_exponents.ris_user", self.pathloss_exponents.ris_user);
        positive("pathloss_exponents.ris_target", self.pathloss_exponents.ris_target);
        if !(self.p_ris > 0.0) {
            v.push(format!("p_ris must be positive (got {})", self.p_ris));
        }
        if self.n_antennas == 0 {
            v.push("n_antennas must be at least 1".into());
        }
        if self.m_elements == 0 {
            v.push("m_elements must be at least 1".into());
        }
        if self.n_samples == 0 {
            v.push("n_samples must be at least 1".into());
        }
        if !(self.a_max >= 1.0 && self.a_max.is_finite()) {
            v.push(format!("a_max ≥ 1 required (got {})", self.a_max));
        }
        if self.sinr_targets.len() != self.k_users {
            v.push(format!(
                "sinr_targets has {} entries but k_users = {}",
                self.sinr_targets.len(),
                self.k_users
            ));
        }
        for (k, &g) in self.sinr_targets.iter().enumerate() {
            if !(g > 0.0 && g.is_finite()) {
                v.push(format!("sinr target of user {k} must be positive (got {g})"));
            }
        }
        if !(self.rician_k >= 0.0) {
            v.push(format!("rician_k must be non-negative (got {})", self.rician_k));
        }
        if !self.theta.is_finite() {
            v.push("theta must be finite".into());
        }
        let g = &self.geometry;
        if !(distance(g.bs, g.ris) > 0.0) {
            v.push("BS and RIS positions coincide".into());
        }
        if !(distance(g.ris, g.target) > 0.0) {
            v.push("RIS and target positions coincide".into());
        }
        if self.k_users > 0 {
            let r = g.user_radius.max(0.0);
            for (name, p) in [("BS", g.bs), ("RIS", g.ris)] {
                if distance(p, g.user_center) <= r {
                    v.push(format!("{name} lies inside the user circle; user distances may vanish"));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(v))
        }
    }
}

/// `PL(d) = C_0 (d_0 / d)^ι`.
pub fn path_loss(d: f64, exponent: f64, c0: f64, d0: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("path-loss distance must be positive, got {d}")));
    }
    Ok(c0 * (d0 / d).powf(exponent))
}

/// ULA steering vector with entries `e^{−jπ i sin θ}`, `i = 0..m`.
pub fn steering(m: usize, theta: f64) -> CVec {
    let s = theta.sin();
    CVec::from_fn(m, |i, _| {
        if i == 0 {
            c(1.0, 0.0)
        } else {
            C64::from_polar(1.0, -PI * i as f64 * s)
        }
    })
}

/// Element-wise derivative of [`steering`] with respect to `θ`.
pub fn steering_derivative(m: usize, theta: f64) -> CVec {
    let a = steering(m, theta);
    let k = -PI * theta.cos();
    CVec::from_fn(m, |i, _| a[i] * c(0.0, k * i as f64))
}

/// Realized channels for one scenario draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `G`, `M × N`.
    pub g: CMat,
    /// `h_d,k`, length `N`.
    pub h_d: Vec<CVec>,
    /// `h_r,k`, length `M`.
    pub h_r: Vec<CVec>,
    /// `h_rt = α_rt a_M(θ)`.
    pub h_rt: CVec,
    pub theta: f64,
    pub alpha_rt: f64,
    pub user_positions: Vec<Point>,
}

impl ChannelSet {
    pub fn n(&self) -> usize {
        self.g.ncols()
    }

    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    pub fn k(&self) -> usize {
        self.h_d.len()
    }

    /// Same channels with every user removed (sensing-only designs).
    pub fn without_users(&self) -> Self {
        Self { h_d: Vec::new(), h_r: Vec::new(), user_positions: Vec::new(), ..self.clone() }
    }
}

pub const STREAM_G: u64 = 1 << 32;
pub const STREAM_USER_PLACEMENT: u64 = 2 << 32;
pub const STREAM_H_D: u64 = 3 << 32;
pub const STREAM_H_R: u64 = 4 << 32;

/// Generator for one channel block.
pub fn block_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One `CN(0, 1)` sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rayleigh<R: Rng + ?Sized>(rng: &mut R, len: usize, pl: f64) -> CVec {
    let amp = pl.sqrt();
    CVec::from_fn(len, |_, _| complex_normal(rng) * amp)
}

/// Places user `k` on the configured circle at a seeded uniform angle.
pub fn user_position(sc: &Scenario, k: usize) -> Point {
    let mut rng = block_rng(sc.seed, STREAM_USER_PLACEMENT | k as u64);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let g = &sc.geometry;
    [g.user_center[0] + g.user_radius * phase.cos(), g.user_center[1] + g.user_radius * phase.sin()]
}

/// Line-of-sight part of `G` from the BS and RIS array geometry (unit-modulus entries).
pub fn bs_ris_los(sc: &Scenario) -> CMat {
    let g = &sc.geometry;
    let aod = link_angle(g.bs, g.ris);
    let aoa = link_angle(g.ris, g.bs);
    let a_ris = steering(sc.m_elements, aoa);
    let a_bs = steering(sc.n_antennas, aod);
    &a_ris * a_bs.transpose()
}

pub fn synthesize_channels(sc: &Scenario) -> Result<ChannelSet> {
    let (n, m) = (sc.n_antennas, sc.m_elements);
    let geo = &sc.geometry;
    let ex = &sc.pathloss_exponents;

    let pl_g = sc.path_loss(distance(geo.bs, geo.ris), ex.bs_ris)?;
    let los = bs_ris_los(sc);
    let (w_los, w_nlos) = if sc.rician_k.is_infinite() {
        (1.0, 0.0)
    } else {
        let k = sc.rician_k;
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    };
    let mut rng = block_rng(sc.seed, STREAM_G);
    // Drawn column-major so the sequence is independent of how the matrix is later used.
    let nlos = CMat::from_fn(m, n, |_, _| complex_normal(&mut rng));
    let g = (los.scale(w_los) + nlos.scale(w_nlos)).scale(pl_g.sqrt());

    let mut h_d = Vec::with_capacity(sc.k_users);
    let mut h_r = Vec::with_capacity(sc.k_users);
    let mut user_positions = Vec::with_capacity(sc.k_users);
    for k in 0..sc.k_users {
        let pos = user_position(sc, k);
        let pl_d = sc.path_loss(distance(geo.bs, pos), ex.bs_user)?;
        let pl_r = sc.path_loss(distance(geo.ris, pos), ex.ris_user)?;
        h_d.push(rayleigh(&mut block_rng(sc.seed, STREAM_H_D | k as u64), n, pl_d));
        h_r.push(rayleigh(&mut block_rng(sc.seed, STREAM_H_R | k as u64), m, pl_r));
        user_positions.push(pos);
    }

    let alpha_rt = sc.alpha_rt()?;
    let h_rt = steering(m, sc.theta).scale(alpha_rt);
    Ok(ChannelSet { g, h_d, h_r, h_rt, theta: sc.theta, alpha_rt, user_positions })
}

/// Distance helper exposed for experiment code and tests.
pub fn dist(a: Point, b: Point) -> f64 {
    distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_loss_reference_and_decade() {
        assert_eq!(path_loss(1.0, 2.2, 1e-3, 1.0).unwrap(), 1e-3);
        let pl = path_loss(10.0, 2.0, 1e-3, 1.0).unwrap();
        assert!((pl - 1e-5).abs() < 1e-20);
        // 1e-3 · 50^-2.2 = 1e-3 · exp(-2.2 ln 50)
        let expected = 1e-3 * (-2.2f64 * 50f64.ln()).exp();
        assert!((path_loss(50.0, 2.2, 1e-3, 1.0).unwrap() - expected).abs() < 1e-18);
        assert!((expected - 1.8292e-7).abs() < 1e-11);
    }

    #[test]
    fn path_loss_rejects_nonpositive_distance() {
        assert!(matches!(path_loss(0.0, 2.0, 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(path_loss(-3.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn steering_examples() {
        let a = steering(2, 0.0);
        assert_eq!(a[0], c(1.0, 0.0));
        assert!((a[1] - c(1.0, 0.0)).norm() < 1e-15);
        let b = steering(2, PI / 2.0);
        assert!((b[1] - c(-1.0, 0.0)).norm() < 1e-15);
        let q = steering(4, PI / 4.0);
        for i in 0..4 {
            let expected = C64::from_polar(1.0, -PI * i as f64 / 2f64.sqrt());
            assert!((q[i] - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn dbm_conversions() {
        assert!((dbm_to_watt(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watt(-80.0) - 1e-11).abs() < 1e-25);
        assert!((watt_to_dbm(dbm_to_watt(27.0)) - 27.0).abs() < 1e-12);
    }

    #[test]
    fn validate_lists_every_violation() {
        let sc = Scenario { a_max: 0.5, p_bs: -1.0, ..Scenario::desk() };
        match sc.validate() {
            Err(Error::InvalidScenario(v)) => {
                assert!(v.iter().any(|s| s.contains("a_max ≥ 1")));
                assert!(v.iter().any(|s| s.contains("p_bs")));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Scenario::desk().validate().is_ok());
    }

    #[test]
    fn infinite_rician_factor_gives_los() {
        let sc = Scenario { rician_k: f64::INFINITY, ..Scenario::desk() };
        let ch = synthesize_channels(&sc).unwrap();
        let pl = sc.path_loss(dist(sc.geometry.bs, sc.geometry.ris), 2.2).unwrap();
        let expected = bs_ris_los(&sc).scale(pl.sqrt());
        assert!((ch.g - expected).norm() < 1e-18);
    }

    #[test]
    fn adding_users_keeps_existing_blocks() {
        let a = synthesize_channels(&Scenario::desk().with_users(2)).unwrap();
        let b = synthesize_channels(&Scenario::desk().with_users(3)).unwrap();
        assert_eq!(a.g, b.g);
        assert_eq!(a.h_d[..], b.h_d[..2]);
        assert_eq!(a.h_r[..], b.h_r[..2]);
    }
}

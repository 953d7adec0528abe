//! Deterministic signal-model quantities: SINR, RIS power draw, the cascaded echo matrices `Q`
//! and `Q̇`, and the echo noise covariance `R̃_n`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::linalg::{c, diag, CMat, CVec, C64};
use crate::scenario::{steering, ChannelSet, Scenario};

/// Transmit precoder `W = [W_c W_r]`, `N × (K + N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub w: CMat,
}

impl Precoder {
    pub fn new(w: CMat) -> Self {
        Self { w }
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self { w: CMat::zeros(n, k + n) }
    }

    /// Total transmit power `‖W‖_F²`.
    pub fn power(&self) -> f64 {
        crate::linalg::fro_sq(&self.w)
    }

    /// `R_w = W Wᴴ`.
    pub fn covariance(&self) -> CMat {
        &self.w * self.w.adjoint()
    }

    pub fn column(&self, i: usize) -> CVec {
        self.w.column(i).into_owned()
    }

    pub fn n_columns(&self) -> usize {
        self.w.ncols()
    }
}

/// RIS reflection vector `φ`, one complex coefficient per element.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectVector {
    #[serde(serialize_with = "ser_cvec")]
    pub phi: CVec,
}

fn ser_cvec<S: serde::Serializer>(v: &CVec, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v.iter() {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

impl ReflectVector {
    pub fn new(phi: CVec) -> Self {
        Self { phi }
    }

    pub fn zeros(m: usize) -> Self {
        Self { phi: CVec::zeros(m) }
    }

    /// `Φ = diag{φ}`.
    pub fn lift(&self) -> CMat {
        diag(&self.phi)
    }

    pub fn max_amplitude(&self) -> f64 {
        self.phi.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// Echo-path matrices at a fixed `(φ, θ)`.
#[derive(Debug, Clone)]
pub struct EchoModel {
    /// `Q = α_rt² q qᵀ`, `q = Gᵀ Φ a_M(θ)`.
    pub q: CMat,
    /// `∂Q/∂θ`.
    pub q_dot: CMat,
    /// `R̃_n = σ_z² Gᵀ Φ Φᴴ G* + σ_r² I`.
    pub r_n: CMat,
    /// `L = diag{0, …, M−1}`.
    pub l_diag: CMat,
    /// `A = diag{a_M(θ)}`.
    pub a_diag: CMat,
    /// `c₀ = −jπ cos θ · α_rt²`.
    pub c0: C64,
}

/// `L = diag{0, 1, …, M−1}`.
pub fn index_matrix(m: usize) -> CMat {
    CMat::from_fn(m, m, |i, j| if i == j { c(i as f64, 0.0) } else { c(0.0, 0.0) })
}

/// Scalar in front of `Q̇`. The derivative of `e^{−jπ i sin θ}` is `−jπ i cos θ e^{−jπ i sin θ}`.
pub fn c0(alpha_rt: f64, theta: f64) -> C64 {
    c(0.0, -PI * theta.cos() * alpha_rt * alpha_rt)
}

/// Compound user channel `h_k = h_d,k + Gᵀ Φ h_r,k` (so that `h_kᵀ = h_d,kᵀ + h_r,kᵀ Φ G`).
pub fn compound_channel(ch: &ChannelSet, phi: &ReflectVector, k: usize) -> CVec {
    let phr = phi.phi.component_mul(&ch.h_r[k]);
    &ch.h_d[k] + ch.g.transpose() * phr
}

/// `SINR_k` of user `k` (0-based).
pub fn sinr(k: usize, ch: &ChannelSet, w: &Precoder, phi: &ReflectVector, sc: &Scenario) -> f64 {
    let h = compound_channel(ch, phi, k);
    let gains: Vec<f64> = (0..w.n_columns()).map(|i| (h.transpose() * w.w.column(i))[(0, 0)].norm_sqr()).collect();
    let signal = gains[k];
    let interference: f64 = gains.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, g)| g).sum();
    let ris_noise: f64 =
        phi.phi.iter().zip(ch.h_r[k].iter()).map(|(p, h)| (p * h).norm_sqr()).sum::<f64>() * sc.noise_ris;
    signal / (interference + ris_noise + sc.noise_user)
}

/// RIS power draw `‖ΦGW‖² + σ_t²‖Φ h hᵀ Φ G W‖² + σ_t²σ_z²‖Φ h hᵀ Φ‖² + 2σ_z²‖Φ‖²`.
pub fn ris_power(ch: &ChannelSet, w: &Precoder, phi: &ReflectVector, sc: &Scenario) -> f64 {
    let big_phi = phi.lift();
    let pg = &big_phi * &ch.g;
    let t1 = crate::linalg::fro_sq(&(&pg * &w.w));
    let ph = &big_phi * &ch.h_rt;
    let outer = &ph * (ch.h_rt.transpose() * &big_phi);
    let t2 = sc.rcs_var * crate::linalg::fro_sq(&(&outer * &ch.g * &w.w));
    let t3 = sc.rcs_var * sc.noise_ris * crate::linalg::fro_sq(&outer);
    let t4 = 2.0 * sc.noise_ris * crate::linalg::fro_sq(&big_phi);
    t1 + t2 + t3 + t4
}

/// `J = σ_t² α_rt² diag{h_rt*} G* W* Wᵀ Gᵀ diag{h_rt}`.
pub fn ris_j_mat(ch: &ChannelSet, w: &Precoder, sc: &Scenario) -> CMat {
    let d = diag(&ch.h_rt);
    let gw = d.transpose() * &ch.g * &w.w;
    // (diag{h} G W)(diag{h} G W)ᴴ conjugated
    let outer = &gw * gw.adjoint();
    crate::linalg::conj_mat(&outer).scale(sc.rcs_var * ch.alpha_rt * ch.alpha_rt)
}

/// The `K` matrix of the RIS power quadratic, `Σ_i diag{G w_i}ᴴ diag{G w_i} + 2σ_z² I`.
pub fn k_ris_mat(ch: &ChannelSet, w: &Precoder, sc: &Scenario) -> CMat {
    let gw = &ch.g * &w.w;
    let m = ch.m();
    let d = CVec::from_fn(m, |r, _| {
        c(gw.row(r).iter().map(|z| z.norm_sqr()).sum::<f64>() + 2.0 * sc.noise_ris, 0.0)
    });
    diag(&d)
}

/// RIS power through the quadratic/quartic decomposition
/// `φᴴJφ·φᴴφ + σ_t²σ_z²α_rt⁴(φᴴφ)² + φᴴKφ`.
pub fn ris_power_quadratic(ch: &ChannelSet, w: &Precoder, phi: &ReflectVector, sc: &Scenario) -> f64 {
    let j = ris_j_mat(ch, w, sc);
    let k = k_ris_mat(ch, w, sc);
    let p = &phi.phi;
    let nn = p.norm_squared();
    crate::linalg::quad(&j, p).re * nn
        + sc.rcs_var * sc.noise_ris * ch.alpha_rt.powi(4) * nn * nn
        + crate::linalg::quad(&k, p).re
}

/// `R̃_n = σ_z² Gᵀ Φ Φᴴ G* + σ_r² I_N`.
pub fn noise_covariance(ch: &ChannelSet, phi: &ReflectVector, noise_ris: f64, noise_bs: f64) -> CMat {
    let pg = phi.lift() * &ch.g;
    let n = ch.n();
    (pg.transpose() * crate::linalg::conj_mat(&pg)).scale(noise_ris) + CMat::identity(n, n).scale(noise_bs)
}

pub fn echo_model(ch: &ChannelSet, phi: &ReflectVector, sc: &Scenario) -> EchoModel {
    echo_model_at(ch, phi, sc, ch.theta)
}

/// Echo model evaluated at an arbitrary DoA; the channel's `h_rt` is rebuilt from `θ`.
pub fn echo_model_at(ch: &ChannelSet, phi: &ReflectVector, sc: &Scenario, theta: f64) -> EchoModel {
    let m = ch.m();
    let a = steering(m, theta);
    let a_diag = diag(&a);
    let l_diag = index_matrix(m);
    let ga = ch.g.transpose() * &a_diag;
    let q_vec = &ga * &phi.phi;
    let alpha2 = ch.alpha_rt * ch.alpha_rt;
    let q = (&q_vec * q_vec.transpose()).scale(alpha2);
    let c0 = c0(ch.alpha_rt, theta);
    let p = &phi.phi;
    let inner = &l_diag * p * p.transpose() + p * p.transpose() * &l_diag;
    let q_dot = &ga * inner * a_diag.transpose() * &ch.g * c0;
    let r_n = noise_covariance(ch, phi, sc.noise_ris, sc.noise_bs);
    EchoModel { q, q_dot, r_n, l_diag, a_diag, c0 }
}

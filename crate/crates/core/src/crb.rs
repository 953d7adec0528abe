//! Fisher information, the DoA Cramér-Rao bound, and the descent objective `g`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{quad, solve_hpd, CMat, C64};
use crate::model::{EchoModel, Precoder, ReflectVector};
use crate::reflector::PhiCoefficients;
use crate::scenario::Scenario;

/// Block form of the 3×3 FIM over `(θ, Re α, Im α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fim {
    pub m_tt: f64,
    pub m_ta: [f64; 2],
    pub m_aa: [[f64; 2]; 2],
    pub alpha_sq: f64,
}

impl Fim {
    pub fn full(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(
            self.m_tt,
            self.m_ta[0],
            self.m_ta[1],
            self.m_ta[0],
            self.m_aa[0][0],
            self.m_aa[0][1],
            self.m_ta[1],
            self.m_aa[1][0],
            self.m_aa[1][1],
        )
    }
}

/// The three traces shared by the FIM, `g`, and the precoder subproblem, for a given transmit
/// covariance `R = W Wᴴ`:
/// `a = Tr{Q̇ R Q̇ᴴ R̃⁻¹}`, `t = Tr{Q R Q̇ᴴ R̃⁻¹}`, `d = Tr{Q R Qᴴ R̃⁻¹}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceTerms {
    pub a: f64,
    pub t: C64,
    pub d: f64,
}

pub fn trace_terms(em: &EchoModel, r: &CMat) -> Result<TraceTerms> {
    trace_terms_with(&em.q, &em.q_dot, &em.r_n, r)
}

pub fn trace_terms_with(q: &CMat, q_dot: &CMat, psi: &CMat, r: &CMat) -> Result<TraceTerms> {
    let rhs = CMat::from_fn(q.nrows(), 2 * q.ncols(), |i, j| {
        if j < q.ncols() {
            q_dot[(i, j)]
        } else {
            q[(i, j - q.ncols())]
        }
    });
    let sol = solve_hpd(psi, &rhs)
        .ok_or_else(|| Error::Numerical("echo noise covariance is singular".into()))?;
    let n = q.ncols();
    let inv_qdot = sol.columns(0, n);
    let inv_q = sol.columns(n, n);
    let a = (inv_qdot * r * q_dot.adjoint()).trace().re;
    let t = (inv_q * r * q_dot.adjoint()).trace();
    let d = (inv_q * r * q.adjoint()).trace().re;
    Ok(TraceTerms { a, t, d })
}

pub fn fim(em: &EchoModel, w: &Precoder, sc: &Scenario, alpha_sq: f64) -> Result<Fim> {
    let tt = trace_terms(em, &w.covariance())?;
    let l = sc.n_samples as f64;
    // α taken real and non-negative: Re{α* T [1, j]} = α [Re T, −Im T]
    let alpha = alpha_sq.sqrt();
    Ok(Fim {
        m_tt: 2.0 * l * alpha_sq * tt.a,
        m_ta: [2.0 * l * alpha * tt.t.re, -2.0 * l * alpha * tt.t.im],
        m_aa: [[2.0 * l * tt.d, 0.0], [0.0, 2.0 * l * tt.d]],
        alpha_sq,
    })
}

/// `[M⁻¹]₁₁` by the block (Schur complement) formula.
pub fn crb_theta(f: &Fim) -> Result<f64> {
    let c = f.m_aa[0][0];
    let cross = f.m_ta[0] * f.m_ta[0] + f.m_ta[1] * f.m_ta[1];
    let schur = if c > 0.0 {
        // M_αα = c·I
        f.m_tt - cross / c
    } else if cross == 0.0 {
        f.m_tt
    } else {
        return Err(Error::Degenerate("M_αα vanishes while M_θα does not".into()));
    };
    if !(schur > 0.0) || !schur.is_finite() {
        return Err(Error::Degenerate(format!(
            "Schur complement of the FIM is {schur:e}; the DoA is unobservable"
        )));
    }
    Ok(1.0 / schur)
}

/// `g = Tr{Q̇RQ̇ᴴR̃⁻¹} − |Tr{QRQ̇ᴴR̃⁻¹}|² / Tr{QRQᴴR̃⁻¹}`.
///
/// When the denominator vanishes together with the cross term the first trace alone is
/// returned; a vanishing denominator with a non-zero cross term is an error.
pub fn g_trace(em: &EchoModel, w: &Precoder) -> Result<f64> {
    g_from_terms(&trace_terms(em, &w.covariance())?)
}

pub fn g_from_terms(tt: &TraceTerms) -> Result<f64> {
    if tt.d > 0.0 {
        return Ok(tt.a - tt.t.norm_sqr() / tt.d);
    }
    if tt.t.norm() == 0.0 {
        log::debug!("g evaluated without its fractional term (no echo energy)");
        return Ok(tt.a);
    }
    Err(Error::Degenerate("zero echo energy with a non-zero cross term".into()))
}

/// `CRB_θ = 1 / (2L|α|² g)`.
pub fn crb_from_g(g: f64, sc: &Scenario, alpha_sq: f64) -> Result<f64> {
    let denom = 2.0 * sc.n_samples as f64 * alpha_sq * g;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!("g = {g:e} gives no DoA information")));
    }
    Ok(1.0 / denom)
}

pub fn crb_db(crb: f64) -> f64 {
    10.0 * crb.log10()
}

/// Explicit fractional form of `g(φ)` in terms of `R₁`, `R₂` and `L`:
///
/// `|c₀|² (a₁ φᴴLR₂Lφ + b₂ φᴴLR₁Lφ − b₂|φᴴLR₁φ|²/a₁ − a₁|φᴴLR₂φ|²/b₂)`
/// with `a₁ = φᴴR₁φ`, `b₂ = φᴴR₂φ`.
pub fn g_phi_explicit(coeffs: &PhiCoefficients, phi: &ReflectVector) -> Result<f64> {
    let p = &phi.phi;
    let l = &coeffs.l_diag;
    let a1 = quad(&coeffs.r1, p).re;
    let b2 = quad(&coeffs.r2, p).re;
    if !(a1 > 0.0 && b2 > 0.0) {
        return Err(Error::Degenerate(format!(
            "explicit g needs φᴴR₁φ > 0 and φᴴR₂φ > 0 (got {a1:e}, {b2:e})"
        )));
    }
    let lp = l * p;
    let lr1l = quad(&coeffs.r1, &lp).re;
    let lr2l = quad(&coeffs.r2, &lp).re;
    let x1 = lp.dotc(&(&coeffs.r1 * p)).norm_sqr();
    let x2 = lp.dotc(&(&coeffs.r2 * p)).norm_sqr();
    Ok(coeffs.c0_sq * (a1 * lr2l + b2 * lr1l - b2 * x1 / a1 - a1 * x2 / b2))
}

/// Independent reference implementations used by the test-suite.
pub mod oracle {
    use super::*;
    use crate::linalg::{c, vectorize, CVec};

    /// FIM assembled from its definition: `M(i,j) = 2 Re{∂yᴴ/∂ξ_i R_n⁻¹ ∂y/∂ξ_j}` with
    /// `R_n = I_L ⊗ R̃_n`, `∂y/∂θ = α vec{Q̇WS}`, `∂y/∂α = [1, j] ⊗ vec{QWS}`.
    pub fn fim_vectorized(em: &EchoModel, w: &Precoder, s: &CMat, alpha: f64) -> nalgebra::Matrix3<f64> {
        let l = s.ncols();
        let n = em.q.nrows();
        let dy_theta = vectorize(&(&em.q_dot * &w.w * s)).scale(alpha);
        let base = vectorize(&(&em.q * &w.w * s));
        let dy_re = base.clone();
        let dy_im = base * c(0.0, 1.0);
        // R_n⁻¹ is block diagonal, so apply R̃_n⁻¹ snapshot by snapshot.
        let apply = |v: &CVec| -> CVec {
            let mut out = CVec::zeros(v.len());
            for k in 0..l {
                let blk = v.rows(k * n, n).into_owned();
                let x = em.r_n.clone().lu().solve(&blk).expect("R̃_n invertible");
                out.rows_mut(k * n, n).copy_from(&x);
            }
            out
        };
        let d = [dy_theta, dy_re, dy_im];
        let rd: Vec<CVec> = d.iter().map(apply).collect();
        nalgebra::Matrix3::from_fn(|i, j| 2.0 * d[i].dotc(&rd[j]).re)
    }

    /// `[M⁻¹]₁₁` by full numeric inversion.
    pub fn crb_full_inverse(m: &nalgebra::Matrix3<f64>) -> Option<f64> {
        m.try_inverse().map(|inv| inv[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::echo_model;
    use crate::scenario::{complex_normal, synthesize_channels};
    use crate::linalg::CVec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (Scenario, EchoModel, Precoder) {
        let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() }.with_seed(seed);
        let ch = synthesize_channels(&sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = ReflectVector::new(CVec::from_fn(4, |_, _| complex_normal(&mut rng) * 4.0));
        let w = Precoder::new(CMat::from_fn(4, 6, |_, _| complex_normal(&mut rng) * 0.1));
        let em = echo_model(&ch, &phi, &sc);
        (sc, em, w)
    }

    #[test]
    fn diagonal_and_block_diagonal_crb() {
        let f = Fim { m_tt: 4.0, m_ta: [0.0, 0.0], m_aa: [[1.0, 0.0], [0.0, 1.0]], alpha_sq: 1.0 };
        assert!((crb_theta(&f).unwrap() - 0.25).abs() < 1e-15);
        let f = Fim { m_tt: 7.0, m_ta: [0.0, 0.0], m_aa: [[3.0, 0.0], [0.0, 3.0]], alpha_sq: 1.0 };
        assert!((crb_theta(&f).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        let f = Fim { m_tt: 1.0, m_ta: [1.0, 0.0], m_aa: [[1.0, 0.0], [0.0, 1.0]], alpha_sq: 1.0 };
        assert!(matches!(crb_theta(&f), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fim_vanishes_without_reflection_or_target() {
        let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() };
        let ch = synthesize_channels(&sc).unwrap();
        let em = echo_model(&ch, &ReflectVector::zeros(4), &sc);
        let w = Precoder::new(CMat::identity(4, 6));
        let f = fim(&em, &w, &sc, 1.0).unwrap();
        assert_eq!(f.m_tt, 0.0);
        assert_eq!(f.m_ta, [0.0, 0.0]);
        assert_eq!(f.m_aa[0][0], 0.0);

        let (sc, em, w) = instance(2);
        let f = fim(&em, &w, &sc, 0.0).unwrap();
        let f1 = fim(&em, &w, &sc, 1.0).unwrap();
        assert_eq!(f.m_tt, 0.0);
        assert_eq!(f.m_ta, [0.0, 0.0]);
        assert_eq!(f.m_aa, f1.m_aa);
    }

    #[test]
    fn fim_matches_vectorized_definition() {
        for seed in 0..5 {
            let (sc, em, w) = instance(seed);
            let l = 8;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let raw = CMat::from_fn(l, 6, |_, _| complex_normal(&mut rng));
            let qr = raw.qr();
            let s = qr.q().adjoint().scale((l as f64).sqrt());
            let sc = Scenario { n_samples: l, ..sc };
            let alpha = 0.7;
            let f = fim(&em, &w, &sc, alpha * alpha).unwrap().full();
            let o = oracle::fim_vectorized(&em, &w, &s, alpha);
            let rel = (f - o).norm() / o.norm();
            assert!(rel < 1e-8, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn crb_equals_full_inverse_and_g() {
        for seed in 0..5 {
            let (sc, em, w) = instance(seed);
            let f = fim(&em, &w, &sc, 1.0).unwrap();
            let crb = crb_theta(&f).unwrap();
            let full = oracle::crb_full_inverse(&f.full()).unwrap();
            assert!((crb - full).abs() <= 1e-10 * full);
            let g = g_trace(&em, &w).unwrap();
            let prod = crb * 2.0 * sc.n_samples as f64 * g;
            assert!((prod - 1.0).abs() < 1e-9, "{prod}");
        }
    }

    #[test]
    fn g_zero_without_derivative() {
        let (_, mut em, w) = instance(1);
        em.q_dot = CMat::zeros(4, 4);
        assert_eq!(g_trace(&em, &w).unwrap(), 0.0);
        let w0 = Precoder::zeros(4, 2);
        let (_, em, _) = instance(1);
        assert_eq!(g_trace(&em, &w0).unwrap(), 0.0);
    }
}

//! The transmit subproblem: a semidefinite relaxation over the lifted beamformers `W_k`, the
//! covariance `R_w` and the epigraph variable `t_w`, plus rank-one recovery of `W`.

use crate::conic::{self, ConicBackend, ConicProgram, ConicSolution, Constraint, VarId, VarKind};
use crate::error::{Error, Result};
use crate::linalg::{conj_vec, fro_sq, hermitian_part, solve_hpd, CMat, CVec};
use crate::model::{compound_channel, EchoModel, Precoder, ReflectVector};
use crate::scenario::{ChannelSet, Scenario};

/// Data of the transmit subproblem that depends on `φ` but not on `W`.
#[derive(Debug, Clone)]
pub struct PrecoderSubproblemConstants {
    /// `E`, so that the `W`-dependent RIS power is `Tr{R_w E}`.
    pub e_mat: CMat,
    /// Static RIS draw `c_r`.
    pub c_r: f64,
    /// Per-user noise floor `c_s,k` (RIS amplification noise plus receiver noise).
    pub c_s: Vec<f64>,
    /// Compound channels `h_k = h_d,k + GᵀΦh_r,k`.
    pub h_compound: Vec<CVec>,
}

pub fn precoder_constants(ch: &ChannelSet, phi: &ReflectVector, sc: &Scenario) -> PrecoderSubproblemConstants {
    let big_phi = phi.lift();
    let pg = &big_phi * &ch.g;
    // Φ h hᵀ Φ, with h = h_rt
    let ph = &big_phi * &ch.h_rt;
    let outer = &ph * ph.transpose();
    let og = &outer * &ch.g;
    let e_mat = hermitian_part(&(pg.adjoint() * &pg + (og.adjoint() * &og).scale(sc.rcs_var)));
    let c_r = sc.rcs_var * sc.noise_ris * fro_sq(&outer) + 2.0 * sc.noise_ris * fro_sq(&big_phi);
    let c_s = (0..ch.k())
        .map(|k| {
            let hp: f64 = phi.phi.iter().zip(ch.h_r[k].iter()).map(|(p, h)| (p * h).norm_sqr()).sum();
            sc.noise_ris * hp + sc.noise_user
        })
        .collect();
    let h_compound = (0..ch.k()).map(|k| compound_channel(ch, phi, k)).collect();
    PrecoderSubproblemConstants { e_mat, c_r, c_s, h_compound }
}

/// Constraint families of the relaxation; switching one off is used to diagnose infeasibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdrFamilies {
    pub sinr: bool,
    pub ris_power: bool,
    pub bs_power: bool,
}

impl Default for SdrFamilies {
    fn default() -> Self {
        Self { sinr: true, ris_power: true, bs_power: true }
    }
}

/// The relaxation together with the handles and scales needed to read it back.
///
/// The program works in normalized units: `R_w = P_BS R̂`, `W_k = P_BS Ŵ_k`, and the three traces
/// `a, t, d` are divided by `κ_a`, `√(κ_a κ_d)` and `κ_d`, so `t_w = κ_a t̂`.
#[derive(Debug, Clone)]
pub struct WSdr {
    pub program: ConicProgram,
    pub w_k: Vec<VarId>,
    pub r: VarId,
    pub t: VarId,
    pub p_bs: f64,
    pub kappa_a: f64,
    pub kappa_d: f64,
}

/// Lifted optimum in physical units.
#[derive(Debug, Clone)]
pub struct LiftedSolution {
    pub w_k: Vec<CMat>,
    pub r: CMat,
    /// Optimal `t_w`, a lower bound on `g` at the lifted point.
    pub t: f64,
}

fn norm_or_one(m: &CMat) -> f64 {
    let n = m.norm();
    if n > 0.0 && n.is_finite() {
        n
    } else {
        1.0
    }
}

fn herm_combo(p: &ConicProgram, plus: VarId, minus: &[VarId]) -> Constraint {
    let (n, mut upper) = p.herm_upper(plus);
    for &v in minus {
        let (_, u) = p.herm_upper(v);
        for (acc, e) in upper.iter_mut().zip(u) {
            *acc = std::mem::take(acc).plus(&e.scaled(-1.0));
        }
    }
    Constraint::HermitianPsd { n, upper }
}

pub fn build_w_sdr(
    em: &EchoModel,
    consts: &PrecoderSubproblemConstants,
    sc: &Scenario,
    families: SdrFamilies,
) -> Result<WSdr> {
    let n = em.q.nrows();
    let k_users = consts.h_compound.len();
    if families.ris_power && sc.p_ris.is_finite() && !(sc.p_ris > consts.c_r) {
        return Err(Error::InfeasibleConfig(format!(
            "static RIS draw c_r = {:e} W already exceeds P_RIS = {:e} W",
            consts.c_r, sc.p_ris
        )));
    }
    let p_bs = sc.p_bs;
    let inv = |rhs: &CMat| {
        solve_hpd(&em.r_n, rhs).ok_or_else(|| Error::Numerical("echo noise covariance is singular".into()))
    };
    let inv_qdot = inv(&em.q_dot)?;
    let inv_q = inv(&em.q)?;
    // a = Tr{R A}, t = Tr{R C}, d = Tr{R D}
    let a_m = hermitian_part(&(em.q_dot.adjoint() * &inv_qdot));
    let c_m = em.q_dot.adjoint() * &inv_q;
    let d_m = hermitian_part(&(em.q.adjoint() * &inv_q));
    let kappa_a = p_bs * norm_or_one(&a_m);
    let kappa_d = p_bs * norm_or_one(&d_m);
    let kappa_c = (kappa_a * kappa_d).sqrt();

    let mut p = ConicProgram::new();
    let w_k: Vec<VarId> = (0..k_users).map(|k| p.add_var(&format!("W_{k}"), VarKind::Hermitian(n))).collect();
    let r = p.add_var("R", VarKind::Hermitian(n));
    let t = p.add_var("t", VarKind::Real);
    p.minimize(p.real(t, 0).scaled(-1.0));

    let a_hat = p.trace_product(r, &a_m.scale(p_bs / kappa_a)).re;
    let c_hat = p.trace_product(r, &c_m.scale(p_bs / kappa_c));
    let d_hat = p.trace_product(r, &d_m.scale(p_bs / kappa_d)).re;
    let gap = a_hat.plus(&p.real(t, 0).scaled(-1.0));
    // [[a − t, c], [c*, d]] ⪰ 0 as diagonal signs plus the determinant cone
    p.add("schur_diag", Constraint::NonNeg(vec![gap.clone(), d_hat.clone()]));
    p.add("schur_det", Constraint::RotatedSoc { u: gap, v: d_hat, x: vec![c_hat.re, c_hat.im] });

    if families.bs_power {
        let tr = p.trace_product(r, &CMat::identity(n, n)).re;
        p.add("bs_power", Constraint::NonNeg(vec![tr.scaled(-1.0).offset(1.0)]));
    }
    if families.ris_power && sc.p_ris.is_finite() {
        let budget = sc.p_ris - consts.c_r;
        let tr = p.trace_product(r, &consts.e_mat.scale(p_bs / budget)).re;
        p.add("ris_power", Constraint::NonNeg(vec![tr.scaled(-1.0).offset(1.0)]));
    }
    if families.sinr {
        for k in 0..k_users {
            let h = &consts.h_compound[k];
            let hh = conj_vec(h) * h.transpose();
            let g = 1.0 + 1.0 / sc.sinr_targets[k];
            let s = consts.c_s[k].max(g * p_bs * h.norm_squared());
            let lhs = p
                .trace_product(w_k[k], &hh.scale(g * p_bs / s))
                .re
                .plus(&p.trace_product(r, &hh.scale(-p_bs / s)).re)
                .offset(-consts.c_s[k] / s);
            p.add(&format!("sinr_{k}"), Constraint::NonNeg(vec![lhs]));
        }
    }
    for (k, &wk) in w_k.iter().enumerate() {
        let (dim, upper) = p.herm_upper(wk);
        p.add(&format!("psd_W_{k}"), Constraint::HermitianPsd { n: dim, upper });
    }
    let (dim, upper) = p.herm_upper(r);
    p.add("psd_R", Constraint::HermitianPsd { n: dim, upper });
    if k_users > 0 {
        p.add("psd_radar", herm_combo(&p, r, &w_k));
    }
    Ok(WSdr { program: p, w_k, r, t, p_bs, kappa_a, kappa_d })
}

impl WSdr {
    pub fn lifted(&self, sol: &ConicSolution) -> LiftedSolution {
        let p = &self.program;
        LiftedSolution {
            w_k: self.w_k.iter().map(|&v| hermitian_part(&sol.hermitian(p, v)).scale(self.p_bs)).collect(),
            r: hermitian_part(&sol.hermitian(p, self.r)).scale(self.p_bs),
            t: sol.real(p, self.t) * self.kappa_a,
        }
    }
}

/// Builds and solves the relaxation, returning the verified solution alongside the program.
pub fn solve_w_sdr(
    em: &EchoModel,
    consts: &PrecoderSubproblemConstants,
    sc: &Scenario,
    families: SdrFamilies,
    backend: &dyn ConicBackend,
    tol: f64,
) -> Result<(WSdr, ConicSolution)> {
    let sdr = build_w_sdr(em, consts, sc, families)?;
    let sol = conic::solve(&sdr.program, backend, tol)?;
    Ok((sdr, sol))
}

/// Negative eigenvalues of the radar residual down to `−CLIP_TOL·‖R_w‖` are clipped to zero.
pub const CLIP_TOL: f64 = 1e-8;

/// Rank-one recovery `w_k = W_k h_k* / √(h_kᵀ W_k h_k*)` and a symmetric factor of the residual
/// `R_w − Σ w_k w_kᴴ` for the radar columns.
pub fn recover_w(lifted: &LiftedSolution, consts: &PrecoderSubproblemConstants) -> Result<Precoder> {
    let n = lifted.r.nrows();
    let k_users = lifted.w_k.len();
    let mut w = CMat::zeros(n, k_users + n);
    let mut residual = lifted.r.clone();
    for (k, wk) in lifted.w_k.iter().enumerate() {
        let hc = conj_vec(&consts.h_compound[k]);
        let whc = wk * &hc;
        let gain = hc.dotc(&whc).re;
        let col = if gain > 0.0 { whc.unscale(gain.sqrt()) } else { CVec::zeros(n) };
        if log::log_enabled!(log::Level::Debug) {
            let ev = crate::linalg::hermitian_eigenvalues(wk);
            let top = ev.iter().cloned().fold(0.0, f64::max);
            let rank = ev.iter().filter(|&&e| e > 1e-6 * top).count();
            if rank > 1 {
                log::debug!("W_{k} has numerical rank {rank}; recovering from it anyway");
            }
        }
        residual -= &col * col.adjoint();
        w.set_column(k, &col);
    }
    let residual = hermitian_part(&residual);
    let eig = residual.clone().symmetric_eigen();
    // Clipping is relative to the covariance itself: a rank-one optimum leaves a residual that
    // is pure solver noise.
    let norm = crate::linalg::max_eig_hermitian(&lifted.r).max(0.0);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -CLIP_TOL * norm {
        return Err(Error::RankRecovery { min_eig, norm });
    }
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        w.set_column(k_users + j, &eig.eigenvectors.column(j).scale(s));
    }
    Ok(Precoder::new(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ClarabelBackend;
    use crate::linalg::{c, C64};
    use crate::model::{echo_model, ris_power, sinr};
    use crate::scenario::{complex_normal, synthesize_channels};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk(seed: u64) -> (Scenario, ChannelSet, ReflectVector) {
        let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() }.with_seed(seed);
        let ch = synthesize_channels(&sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = ReflectVector::new(CVec::from_fn(4, |_, _| {
            C64::from_polar(0.5 * sc.a_max, rng.random_range(0.0..std::f64::consts::TAU))
        }));
        (sc, ch, phi)
    }

    fn solve_all(sc: &Scenario, ch: &ChannelSet, phi: &ReflectVector, fam: SdrFamilies) -> (WSdr, ConicSolution) {
        let em = echo_model(ch, phi, sc);
        let consts = precoder_constants(ch, phi, sc);
        solve_w_sdr(&em, &consts, sc, fam, &ClarabelBackend::default(), 1e-8).unwrap()
    }

    #[test]
    fn e_matrix_reproduces_ris_power() {
        let (sc, ch, phi) = desk(1);
        let consts = precoder_constants(&ch, &phi, &sc);
        assert!(crate::linalg::min_eig_hermitian(&consts.e_mat) >= -1e-12 * consts.e_mat.norm());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Precoder::new(CMat::from_fn(4, 6, |_, _| complex_normal(&mut rng)));
        let lifted = (w.covariance() * &consts.e_mat).trace().re + consts.c_r;
        let direct = ris_power(&ch, &w, &phi, &sc);
        assert!((lifted - direct).abs() <= 1e-10 * direct);
        let sd = sc.static_ris_draw(0.5 * sc.a_max).unwrap();
        assert!((consts.c_r - sd).abs() <= 1e-10 * sd);
    }

    #[test]
    fn zero_reflection_gives_zero_epigraph() {
        let (sc, ch, _) = desk(2);
        let (sdr, sol) = solve_all(&sc, &ch, &ReflectVector::zeros(4), SdrFamilies::default());
        assert!(sol.is_optimal(), "{}", sol.detail);
        assert!(sdr.lifted(&sol).t.abs() < 1e-6);
    }

    #[test]
    fn vanishing_targets_match_program_without_sinr() {
        let (sc, ch, phi) = desk(3);
        let sc = sc.with_common_sinr(1e-9);
        let (sa, a) = solve_all(&sc, &ch, &phi, SdrFamilies::default());
        let (sb, b) = solve_all(&sc, &ch, &phi, SdrFamilies { sinr: false, ..SdrFamilies::default() });
        assert!(a.is_optimal() && b.is_optimal());
        let (ta, tb) = (sa.lifted(&a).t, sb.lifted(&b).t);
        assert!((ta - tb).abs() <= 1e-5 * tb.abs(), "{ta} vs {tb}");
    }

    #[test]
    fn desk_solution_has_small_residuals_and_recovers() {
        let (sc, ch, phi) = desk(4);
        let (sdr, sol) = solve_all(&sc, &ch, &phi, SdrFamilies::default());
        assert!(sol.is_optimal(), "{}", sol.detail);
        for (label, v) in conic::residuals(&sdr.program, sol.slots()) {
            assert!(v <= 1e-6, "{label}: {v}");
        }
        let lifted = sdr.lifted(&sol);
        let consts = precoder_constants(&ch, &phi, &sc);
        let w = recover_w(&lifted, &consts).unwrap();
        let tr = lifted.r.trace().re;
        assert!((w.power() - tr).abs() <= 1e-6 * tr);
        assert!((w.covariance() - &lifted.r).norm() <= 1e-6 * lifted.r.norm());
        for k in 0..2 {
            let h = &consts.h_compound[k];
            let hc = conj_vec(h);
            let sig = crate::linalg::quad(&lifted.w_k[k], &hc).re;
            let tot = crate::linalg::quad(&lifted.r, &hc).re;
            let lifted_sinr = sig / (tot - sig + consts.c_s[k]);
            let got = sinr(k, &ch, &w, &phi, &sc);
            assert!((got - lifted_sinr).abs() <= 1e-6 * lifted_sinr);
            assert!(got >= sc.sinr_targets[k] * (1.0 - 1e-6));
        }
    }

    #[test]
    fn rank_one_covariance_aligned_with_user() {
        let h = CVec::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, -1.0)]);
        let hc = conj_vec(&h);
        let r = (&hc * hc.adjoint()).unscale(h.norm_squared());
        let consts = PrecoderSubproblemConstants {
            e_mat: CMat::zeros(3, 3),
            c_r: 0.0,
            c_s: vec![1.0],
            h_compound: vec![h.clone()],
        };
        let w = recover_w(&LiftedSolution { w_k: vec![r.clone()], r, t: 0.0 }, &consts).unwrap();
        let expected = hc.unscale(h.norm());
        assert!((w.column(0) - expected).norm() < 1e-12);
        assert!(w.w.columns(1, 3).norm() < 1e-7);
    }

    #[test]
    fn clipping_policy() {
        let consts = PrecoderSubproblemConstants { e_mat: CMat::zeros(2, 2), c_r: 0.0, c_s: vec![], h_compound: vec![] };
        let tiny = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(-1e-10, 0.0)]));
        let w = recover_w(&LiftedSolution { w_k: vec![], r: tiny, t: 0.0 }, &consts).unwrap();
        assert!((w.power() - 1.0).abs() < 1e-12);
        let bad = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(-1e-6, 0.0)]));
        let err = recover_w(&LiftedSolution { w_k: vec![], r: bad, t: 0.0 }, &consts);
        assert!(matches!(err, Err(Error::RankRecovery { .. })));
    }

    #[test]
    fn static_draw_above_budget_is_rejected() {
        let (mut sc, ch, phi) = desk(5);
        let consts = precoder_constants(&ch, &phi, &sc);
        sc.p_ris = 0.5 * consts.c_r;
        let em = echo_model(&ch, &phi, &sc);
        assert!(matches!(build_w_sdr(&em, &consts, &sc, SdrFamilies::default()), Err(Error::InfeasibleConfig(_))));
    }

    #[test]
    fn lifted_objective_bounds_recovered_g() {
        let (sc, ch, phi) = desk(6);
        let (sdr, sol) = solve_all(&sc, &ch, &phi, SdrFamilies::default());
        let lifted = sdr.lifted(&sol);
        let consts = precoder_constants(&ch, &phi, &sc);
        let w = recover_w(&lifted, &consts).unwrap();
        let em = echo_model(&ch, &phi, &sc);
        let g_rec = crate::crb::g_trace(&em, &w).unwrap();
        let g_lift = crate::crb::g_from_terms(&crate::crb::trace_terms(&em, &lifted.r).unwrap()).unwrap();
        assert!((g_rec - g_lift).abs() <= 1e-8 * g_lift);
        assert!((lifted.t - g_lift).abs() <= 1e-5 * g_lift, "{} vs {g_lift}", lifted.t);
    }
}

//! The reflection subproblem: fractional auxiliaries `t₁, t₂`, the majorization surrogates, the
//! convex QCQP solved at each inner step, and the noise-covariance refresh `Ψ`.
//!
//! Notation follows the explicit quartic form of `g(φ)`: `v = vec{φφᴴ} = φ* ⊗ φ`,
//! `ξ_i = vec{R_i}`, `Ξ_i = LR_îᵀ ⊗ LR_î`, `F_i = LR_îᵀL ⊗ R_i` with `î` the other index.
//! Every Kronecker product is also available as a matrix-free operator through
//! `vec{A X B} = (Bᵀ ⊗ A) vec{X}`, so nothing of size `M² × M²` is formed above
//! [`PhiOptions::kron_cap`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conic::{self, ConicBackend, ConicProgram, ConicStatus, Constraint, LinExpr, VarId, VarKind};
use crate::crb;
use crate::error::{Error, Result};
use crate::linalg::{
    c, conj_mat, diag, hermitian_part, max_eig_hermitian, max_eig_symmetric, max_eig_symmetric_op,
    quad, real_embedding, solve_hpd, stack_real, unvectorize, vectorize, CMat, CVec, RMat, RVec, C64,
};
use crate::model::{self, EchoModel, Precoder, ReflectVector};
use crate::scenario::{ChannelSet, Scenario};

/// Coefficients of the explicit form of `g(φ)` for fixed `W` and frozen `Ψ`.
#[derive(Debug, Clone)]
pub struct PhiCoefficients {
    /// `R₁ = Aᴴ G* W* Wᵀ Gᵀ A`.
    pub r1: CMat,
    /// `R₂ = Aᴴ G* Ψ⁻¹ Gᵀ A`.
    pub r2: CMat,
    pub xi1: CVec,
    pub xi2: CVec,
    pub bigxi1: Option<CMat>,
    pub bigxi2: Option<CMat>,
    pub f1: Option<CMat>,
    pub f2: Option<CMat>,
    pub f: Option<CMat>,
    pub c0_sq: f64,
    pub psi: CMat,
    pub l_diag: CMat,
}

impl PhiCoefficients {
    pub fn m(&self) -> usize {
        self.r1.nrows()
    }

    /// `R_i` for `i ∈ {1, 2}`.
    pub fn r(&self, i: usize) -> &CMat {
        match i {
            1 => &self.r1,
            2 => &self.r2,
            _ => panic!("index must be 1 or 2"),
        }
    }

    /// `R_î`, the other one.
    pub fn r_hat(&self, i: usize) -> &CMat {
        self.r(3 - i)
    }

    pub fn xi(&self, i: usize) -> &CVec {
        if i == 1 {
            &self.xi1
        } else {
            &self.xi2
        }
    }

    /// `ξ_iᴴ v = φᴴ R_i φ`.
    pub fn xi_v(&self, i: usize, phi: &CVec) -> f64 {
        quad(self.r(i), phi).re
    }

    /// `vᴴ Ξ_i v = |φᴴ L R_î φ|²`.
    pub fn v_xi_v(&self, i: usize, phi: &CVec) -> f64 {
        let lp = &self.l_diag * phi;
        lp.dotc(&(self.r_hat(i) * phi)).norm_sqr()
    }

    /// `y_i = ξ_iᴴv · vᴴΞ_iv`.
    pub fn y(&self, i: usize, phi: &CVec) -> f64 {
        self.xi_v(i, phi) * self.v_xi_v(i, phi)
    }

    /// `vᴴ F v = Σ_i φᴴR_iφ · φᴴLR_îLφ`.
    pub fn v_f_v(&self, phi: &CVec) -> f64 {
        let lp = &self.l_diag * phi;
        self.xi_v(1, phi) * quad(&self.r2, &lp).re + self.xi_v(2, phi) * quad(&self.r1, &lp).re
    }

    /// `Ξ_i x = vec{L R_î X R_î L}`.
    pub fn apply_bigxi(&self, i: usize, x: &CVec) -> CVec {
        let m = self.m();
        let xm = unvectorize(x, m, m);
        let lr = &self.l_diag * self.r_hat(i);
        vectorize(&(&lr * xm * lr.adjoint()))
    }

    /// `Ξ_iᴴ x = vec{R_î L X L R_î}`.
    pub fn apply_bigxi_adj(&self, i: usize, x: &CVec) -> CVec {
        let m = self.m();
        let xm = unvectorize(x, m, m);
        let rl = self.r_hat(i) * &self.l_diag;
        vectorize(&(&rl * xm * rl.adjoint()))
    }

    /// `F x = Σ_i vec{R_i X L R_î L}`.
    pub fn apply_f(&self, x: &CVec) -> CVec {
        let m = self.m();
        let xm = unvectorize(x, m, m);
        let l = &self.l_diag;
        let t1 = &self.r1 * &xm * l * &self.r2 * l;
        let t2 = &self.r2 * &xm * l * &self.r1 * l;
        vectorize(&(t1 + t2))
    }

    /// True value of `t₁ + t₂ − vᴴFv` at `φ` with `t_i` at their optimum, i.e. `−g_Ψ(φ)/|c₀|²`.
    pub fn objective(&self, phi: &CVec) -> Result<f64> {
        let (t1, t2) = update_t(self, &ReflectVector::new(phi.clone()))?;
        Ok(t1 + t2 - self.v_f_v(phi))
    }
}

#[derive(Debug, Clone)]
pub struct PhiOptions {
    /// Largest `M` for which `M² × M²` Kronecker matrices are materialized.
    pub kron_cap: usize,
    /// Multiplier applied to the curvature of each cubic Taylor bound.
    pub curvature_safety: f64,
    /// Sampled points per constraint when certifying the Taylor bounds.
    pub domination_samples: usize,
    pub max_safety_doublings: u32,
    pub sample_seed: u64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub solver_tol: f64,
    /// Relative feasibility slack accepted when checking true constraints.
    pub feas_tol: f64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self {
            kron_cap: 16,
            curvature_safety: 1.0,
            domination_samples: 100,
            max_safety_doublings: 60,
            sample_seed: 0x5eed,
            inner_tol: 1e-4,
            inner_max_iter: 50,
            solver_tol: 1e-8,
            feas_tol: 1e-6,
        }
    }
}

pub fn compute_phi_coefficients(
    em: &EchoModel,
    w: &Precoder,
    psi: &CMat,
    ch: &ChannelSet,
    kron_cap: usize,
) -> Result<PhiCoefficients> {
    let ga = ch.g.transpose() * &em.a_diag;
    let wwt = conj_mat(&w.covariance());
    let r1 = hermitian_part(&(ga.adjoint() * wwt * &ga));
    let inv_ga = solve_hpd(psi, &ga).ok_or_else(|| Error::Numerical("Ψ is singular".into()))?;
    let r2 = hermitian_part(&(ga.adjoint() * inv_ga));
    let m = r1.nrows();
    let l = &em.l_diag;
    let (bigxi1, bigxi2, f1, f2, f) = if m <= kron_cap {
        let lr1 = l * &r1;
        let lr2 = l * &r2;
        let lr1t = l * r1.transpose();
        let lr2t = l * r2.transpose();
        let bx1 = lr2t.kronecker(&lr2);
        let bx2 = lr1t.kronecker(&lr1);
        let f1 = (&lr2t * l).kronecker(&r1);
        let f2 = (&lr1t * l).kronecker(&r2);
        let f = &f1 + &f2;
        (Some(bx1), Some(bx2), Some(f1), Some(f2), Some(f))
    } else {
        (None, None, None, None, None)
    };
    Ok(PhiCoefficients {
        xi1: vectorize(&r1),
        xi2: vectorize(&r2),
        r1,
        r2,
        bigxi1,
        bigxi2,
        f1,
        f2,
        f,
        c0_sq: em.c0.norm_sqr(),
        psi: psi.clone(),
        l_diag: l.clone(),
    })
}

/// Closed-form optimal auxiliaries `t₁ = ξ₁ᴴv vᴴΞ₁v / φᴴR₂φ`, `t₂ = ξ₂ᴴv vᴴΞ₂v / φᴴR₁φ`.
pub fn update_t(coeffs: &PhiCoefficients, phi: &ReflectVector) -> Result<(f64, f64)> {
    let p = &phi.phi;
    let v = conj_vec_kron(p);
    let mut out = [0.0; 2];
    for i in 1..=2 {
        let num_a = coeffs.xi(i).dotc(&v);
        let num_b = v.dotc(&coeffs.apply_bigxi(i, &v));
        let den = quad(coeffs.r_hat(i), p);
        if !(den.re > 0.0) {
            return Err(Error::Degenerate(format!("φᴴR_{}φ = {:e} is not positive", 3 - i, den.re)));
        }
        let t = num_a * num_b / den;
        if t.im.abs() > 1e-8 * t.norm().max(f64::MIN_POSITIVE) && t.im.abs() > 0.0 {
            return Err(Error::Numerical(format!("t_{i} has imaginary residue {:e}", t.im)));
        }
        out[i - 1] = t.re;
    }
    Ok((out[0], out[1]))
}

fn conj_vec_kron(p: &CVec) -> CVec {
    crate::linalg::conj_vec(p).kronecker(p)
}

/// Per-user SINR constraint data and the RIS power quadratic.
#[derive(Debug, Clone)]
pub struct SinrPhiConstants {
    pub c_mat: Vec<CMat>,
    pub d_vec: Vec<CVec>,
    pub c_phi: Vec<f64>,
    pub a_ki: Vec<Vec<C64>>,
    pub b_ki: Vec<Vec<CVec>>,
    pub j_mat: CMat,
    pub k_ris_mat: CMat,
    pub gamma: Vec<f64>,
    pub alpha_rt: f64,
}

impl SinrPhiConstants {
    /// `φᴴC_kφ + Re{d_kᴴφ} + c_φ,k − (1+γ_k⁻¹)|b_k,kᵀφ|²`; non-positive iff user `k` meets its
    /// target.
    pub fn sinr_form(&self, k: usize, phi: &CVec) -> f64 {
        let g = 1.0 + 1.0 / self.gamma[k];
        quad(&self.c_mat[k], phi).re + self.d_vec[k].dotc(phi).re + self.c_phi[k]
            - g * (self.b_ki[k][k].transpose() * phi)[(0, 0)].norm_sqr()
    }
}

pub fn sinr_phi_constants(ch: &ChannelSet, w: &Precoder, sc: &Scenario) -> SinrPhiConstants {
    let k_users = ch.k();
    let cols = w.n_columns();
    let gw = &ch.g * &w.w;
    let mut c_mat = Vec::with_capacity(k_users);
    let mut d_vec = Vec::with_capacity(k_users);
    let mut c_phi = Vec::with_capacity(k_users);
    let mut a_all = Vec::with_capacity(k_users);
    let mut b_all = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let gamma = 1.0 + 1.0 / sc.sinr_targets[k];
        let a: Vec<C64> = (0..cols).map(|i| (ch.h_d[k].transpose() * w.w.column(i))[(0, 0)]).collect();
        let b: Vec<CVec> = (0..cols).map(|i| gw.column(i).component_mul(&ch.h_r[k])).collect();
        let mut cm = CMat::zeros(ch.m(), ch.m());
        let mut d = CVec::zeros(ch.m());
        let mut cc = sc.noise_user;
        for i in 0..cols {
            let bc = crate::linalg::conj_vec(&b[i]);
            cm += &bc * b[i].transpose();
            d += bc.scale(2.0) * a[i];
            cc += a[i].norm_sqr();
        }
        let hr2 = ch.h_r[k].map(|z| c(z.norm_sqr(), 0.0));
        cm += diag(&hr2).scale(sc.noise_ris);
        d -= crate::linalg::conj_vec(&b[k]) * (a[k] * (2.0 * gamma));
        cc -= gamma * a[k].norm_sqr();
        c_mat.push(hermitian_part(&cm));
        d_vec.push(d);
        c_phi.push(cc);
        a_all.push(a);
        b_all.push(b);
    }
    SinrPhiConstants {
        c_mat,
        d_vec,
        c_phi,
        a_ki: a_all,
        b_ki: b_all,
        j_mat: hermitian_part(&model::ris_j_mat(ch, w, sc)),
        k_ris_mat: model::k_ris_mat(ch, w, sc),
        gamma: sc.sinr_targets.clone(),
        alpha_rt: ch.alpha_rt,
    }
}

/// All surrogate data built around the anchor `φ_s`.
///
/// Besides the coefficient form of each bound, every surrogate is also kept in anchored form
/// (value and gradient at `φ_s`). Both describe the same quadratic; the anchored one is what gets
/// evaluated, because expanding the coefficient form cancels terms many orders of magnitude larger
/// than the result.
#[derive(Debug, Clone, Serialize)]
pub struct SurrogatePack {
    pub lambda1_tilde: f64,
    #[serde(skip)]
    pub f_tilde: CVec,
    pub c2: f64,
    pub lambda_y: [f64; 2],
    #[serde(skip)]
    pub ell: [CVec; 2],
    pub x: [f64; 2],
    #[serde(skip)]
    pub ell_tilde: [CVec; 2],
    #[serde(skip)]
    pub varrho: [CVec; 2],
    pub kappa: [f64; 2],
    #[serde(skip)]
    pub varrho_tilde: [CVec; 2],
    pub kappa_tilde: [f64; 2],
    #[serde(skip)]
    pub d_tilde: Vec<CVec>,
    pub c_phi_tilde: Vec<f64>,
    pub lambda_y_tilde: [f64; 2],
    pub x_tilde: [f64; 2],
    pub t: [f64; 2],
    /// Curvature multipliers actually used for the two Taylor bounds.
    pub safety: [f64; 2],
    #[serde(skip)]
    pub anchor: CVec,
    pub a_max: f64,
    /// `M²a_max⁴ − (φ_sᴴφ_s)²`, the slack of the amplitude step in the `y_i` chain.
    pub amp_slack: f64,
    pub obj_value: f64,
    #[serde(skip)]
    pub obj_grad: CVec,
    pub y_s: [f64; 2],
    #[serde(skip)]
    pub y_grad: [CVec; 2],
    #[serde(skip)]
    pub y_bound_grad: [CVec; 2],
    pub sinr_value: Vec<f64>,
    #[serde(skip)]
    pub sinr_grad: Vec<CVec>,
    pub frac_value: [f64; 2],
    #[serde(skip)]
    pub frac_grad: [CVec; 2],
}

/// `(λ/2)‖x − x_s‖² + Re{gᴴ(x − x_s)} + value`.
fn anchored(lam: f64, grad: &CVec, value: f64, anchor: &CVec, x: &CVec) -> f64 {
    let d = x - anchor;
    0.5 * lam * d.norm_squared() + grad.dotc(&d).re + value
}

impl SurrogatePack {
    /// Upper bound of `−vᴴFv`: `(λ̃₁/2)φᴴφ + Re{φᴴf̃} + c₂`.
    pub fn objective(&self, phi: &CVec) -> f64 {
        anchored(self.lambda1_tilde, &self.obj_grad, self.obj_value, &self.anchor, phi)
    }

    /// Convexified SINR form `φᴴC_kφ + Re{d̃_kᴴφ} + c̃_φ,k`.
    pub fn sinr(&self, consts: &SinrPhiConstants, k: usize, phi: &CVec) -> f64 {
        let d = phi - &self.anchor;
        quad(&consts.c_mat[k], &d).re + self.sinr_grad[k].dotc(&d).re + self.sinr_value[k]
    }

    /// First stage of the `y_i` bound: `(λ_y/2)vᴴv + Re{vᴴℓ} + x`.
    pub fn y_taylor(&self, i: usize, phi: &CVec) -> f64 {
        let vs = conj_vec_kron(&self.anchor);
        anchored(self.lambda_y[i - 1], &self.y_grad[i - 1], self.y_s[i - 1], &vs, &conj_vec_kron(phi))
    }

    /// Final quadratic bound of `y_i`: `(λ̃_y/2)φᴴφ + Re{φᴴℓ̃} + x̃`.
    pub fn y_bound(&self, i: usize, phi: &CVec) -> f64 {
        let value = self.y_s[i - 1] + 0.5 * self.lambda_y[i - 1] * self.amp_slack;
        anchored(self.lambda_y_tilde[i - 1], &self.y_bound_grad[i - 1], value, &self.anchor, phi)
    }

    /// Linear bound of `−φᴴR_îφ`: `Re{φᴴϱ} + κ`, i.e. `−κ − 2Re{φ_sᴴR_î(φ − φ_s)}`.
    pub fn neg_r_hat(&self, i: usize, phi: &CVec) -> f64 {
        self.varrho[i - 1].dotc(&(phi - &self.anchor)).re - self.kappa[i - 1]
    }

    /// Convex bound of `y_i − t_i φᴴR_îφ`.
    pub fn fractional(&self, i: usize, phi: &CVec) -> f64 {
        anchored(self.lambda_y_tilde[i - 1], &self.frac_grad[i - 1], self.frac_value[i - 1], &self.anchor, phi)
    }
}

/// Largest eigenvalue of the Hessian `S v̄ξ̄ᵀ + ξ̄v̄ᵀS + (ξ̄ᵀv̄) S` of `y_i` at `v̄`, where
/// `S = Ξ̄_i + Ξ̄_iᵀ`. The expression is symmetric as written; it is symmetrized anyway.
pub fn y_hessian_max_eig(coeffs: &PhiCoefficients, i: usize, v: &CVec) -> Result<f64> {
    let xi_bar = stack_real(coeffs.xi(i));
    let v_bar = stack_real(v);
    let s_apply = |x: &RVec| -> RVec {
        let z = crate::linalg::unstack_real(x);
        stack_real(&(coeffs.apply_bigxi(i, &z) + coeffs.apply_bigxi_adj(i, &z)))
    };
    let u = s_apply(&v_bar);
    let s = xi_bar.dot(&v_bar);
    let big = match if i == 1 { &coeffs.bigxi1 } else { &coeffs.bigxi2 } {
        Some(bx) => Some(real_embedding(&(bx + bx.adjoint()))),
        None => None,
    };
    if let Some(sm) = big {
        let h: RMat = &u * xi_bar.transpose() + &xi_bar * u.transpose() + sm.scale(s);
        return Ok(max_eig_symmetric(&h));
    }
    let dim = v_bar.len();
    max_eig_symmetric_op(
        |x| {
            let sx = s_apply(x);
            &u * xi_bar.dot(x) + &xi_bar * u.dot(x) + sx * s
        },
        dim,
        1e-9,
        200_000,
    )
    .ok_or_else(|| Error::Numerical("power iteration for λ_y did not converge".into()))
}


/// Quadratic majorant of `Re{φᴴΩφ}` tangent at the anchor:
/// `(λ/2)φᴴφ + Re{φᴴ(Ω+Ωᴴ−λI)φ_s} − Re{φ_sᴴΩφ_s} + (λ/2)φ_sᴴφ_s` with `λ = λ_max(Ω+Ωᴴ)`.
/// Returns `λ`, the linear coefficient, the constant and the gradient `(Ω+Ωᴴ)φ_s` at the anchor.
fn embed_quadratic_bound(omega: &CMat, anchor: &CVec) -> (f64, CVec, f64, CVec) {
    let sym = omega + omega.adjoint();
    let lam = max_eig_hermitian(&sym).max(0.0);
    let grad = &sym * anchor;
    let lin = &grad - anchor.scale(lam);
    let cst = -quad(omega, anchor).re + 0.5 * lam * anchor.norm_squared();
    (lam, lin, cst, grad)
}

/// `M²a⁴ − (φᴴφ)²` without cancelling the two large terms.
fn amplitude_slack(phi: &CVec, a_max: f64) -> f64 {
    let m = phi.len() as f64;
    let deficit: f64 = phi.iter().map(|z| (a_max - z.norm()) * (a_max + z.norm())).sum();
    deficit * (m * a_max * a_max + phi.norm_squared())
}

/// Builds every surrogate around `φ_s`. The cubic Taylor curvature is certified on sampled
/// points of the amplitude box and doubled until no sample violates the bound.
pub fn build_surrogates(
    coeffs: &PhiCoefficients,
    sinr: &SinrPhiConstants,
    t1: f64,
    t2: f64,
    phi_s: &ReflectVector,
    a_max: f64,
    opts: &PhiOptions,
) -> Result<SurrogatePack> {
    let ps = &phi_s.phi;
    let m = ps.len();
    let vs = conj_vec_kron(ps);

    // Objective: −vᴴFv ≤ Re{vᴴf} + c₁, f = −2Fv_s, then a quadratic bound on Re{φᴴF̃φ}.
    let fv = coeffs.apply_f(&vs);
    let c1 = vs.dotc(&fv).re;
    let f_mat = unvectorize(&fv.scale(-2.0), m, m);
    let (lambda1, f_tilde, cst, obj_grad) = embed_quadratic_bound(&f_mat, ps);
    let c2 = cst + c1;
    let obj_value = -c1;

    // SINR: linearize −φᴴb*bᵀφ.
    let users = sinr.gamma.len();
    let mut d_tilde = Vec::with_capacity(users);
    let mut c_tilde = Vec::with_capacity(users);
    let mut sinr_grad = Vec::with_capacity(users);
    let mut sinr_value = Vec::with_capacity(users);
    for k in 0..users {
        let g = 1.0 + 1.0 / sinr.gamma[k];
        let b = &sinr.b_ki[k][k];
        let bt_phi = (b.transpose() * ps)[(0, 0)];
        let lin = crate::linalg::conj_vec(b) * bt_phi;
        let dt = &sinr.d_vec[k] - lin.scale(2.0 * g);
        sinr_grad.push((&sinr.c_mat[k] * ps).scale(2.0) + &dt);
        sinr_value.push(sinr.sinr_form(k, ps));
        d_tilde.push(dt);
        c_tilde.push(sinr.c_phi[k] + g * bt_phi.norm_sqr());
    }

    let t = [t1, t2];
    let amp_slack = amplitude_slack(ps, a_max);
    let full = (m * m) as f64 * a_max.powi(4);
    let zeros = || [CVec::zeros(m), CVec::zeros(m)];
    let mut lambda_y = [0.0; 2];
    let mut ell = [CVec::zeros(m * m), CVec::zeros(m * m)];
    let mut y_grad = [CVec::zeros(m * m), CVec::zeros(m * m)];
    let mut y_s = [0.0; 2];
    let mut x = [0.0; 2];
    let mut ell_tilde = zeros();
    let mut y_bound_grad = zeros();
    let mut x_tilde = [0.0; 2];
    let mut lambda_y_tilde = [0.0; 2];
    let mut varrho = zeros();
    let mut kappa = [0.0; 2];
    let mut varrho_tilde = zeros();
    let mut kappa_tilde = [0.0; 2];
    let mut frac_grad = zeros();
    let mut frac_value = [0.0; 2];
    let mut safety = [opts.curvature_safety; 2];

    for i in 1..=2 {
        let idx = i - 1;
        let a_s = coeffs.xi(i).dotc(&vs).re;
        let xiv = coeffs.apply_bigxi(i, &vs);
        let b_s = vs.dotc(&xiv).re;
        let sv = &xiv + coeffs.apply_bigxi_adj(i, &vs);
        let grad = sv * c(a_s, 0.0) + coeffs.xi(i) * c(b_s, 0.0);
        let ys = a_s * b_s;
        let lam_raw = y_hessian_max_eig(coeffs, i, &vs)?;
        let r_hat = coeffs.r_hat(i);
        let rho = (r_hat * ps).scale(-2.0);
        let kap = quad(r_hat, ps).re;

        // With non-positive curvature at the anchor the doubling needs a positive base.
        let mut base = lam_raw;
        let mut doublings = 0;
        let lam = loop {
            let lam = (safety[idx] * base).max(0.0);
            let worst = worst_taylor_violation(coeffs, i, lam, &grad, ys, ps, a_max, opts);
            if worst <= 0.0 {
                break lam;
            }
            if doublings >= opts.max_safety_doublings {
                log::warn!("Taylor bound for y_{i} still violated after {doublings} doublings");
                break lam;
            }
            doublings += 1;
            if base <= 0.0 {
                base = grad.norm() / vs.norm().max(f64::MIN_POSITIVE);
                if !(base > 0.0) {
                    break lam;
                }
            } else {
                safety[idx] *= 2.0;
            }
        };
        if doublings > 0 {
            log::debug!("y_{i} curvature safety factor raised to {}", safety[idx]);
        }
        let l_vec = &grad - vs.scale(lam);
        let xx = ys - grad.dotc(&vs).re + 0.5 * lam * vs.norm_squared();
        let omega = unvectorize(&l_vec, m, m);
        let (lam_t, lin, cst, g_bound) = embed_quadratic_bound(&omega, ps);
        lambda_y[idx] = lam;
        y_grad[idx] = grad;
        y_s[idx] = ys;
        ell[idx] = l_vec;
        x[idx] = xx;
        lambda_y_tilde[idx] = lam_t;
        x_tilde[idx] = cst + 0.5 * lam * full + xx;
        varrho_tilde[idx] = &lin + rho.scale(t[idx]);
        kappa_tilde[idx] = x_tilde[idx] + t[idx] * kap;
        ell_tilde[idx] = lin;
        frac_grad[idx] = &g_bound + rho.scale(t[idx]);
        frac_value[idx] = ys - t[idx] * kap + 0.5 * lam * amp_slack;
        y_bound_grad[idx] = g_bound;
        varrho[idx] = rho;
        kappa[idx] = kap;
    }

    Ok(SurrogatePack {
        lambda1_tilde: lambda1,
        f_tilde,
        c2,
        lambda_y,
        ell,
        x,
        ell_tilde,
        varrho,
        kappa,
        varrho_tilde,
        kappa_tilde,
        d_tilde,
        c_phi_tilde: c_tilde,
        lambda_y_tilde,
        x_tilde,
        t,
        safety,
        anchor: ps.clone(),
        a_max,
        amp_slack,
        obj_value,
        obj_grad,
        y_s,
        y_grad,
        y_bound_grad,
        sinr_value,
        sinr_grad,
        frac_value,
        frac_grad,
    })
}

#[allow(clippy::too_many_arguments)]
fn worst_taylor_violation(
    coeffs: &PhiCoefficients,
    i: usize,
    lam: f64,
    grad: &CVec,
    y_s: f64,
    anchor: &CVec,
    a_max: f64,
    opts: &PhiOptions,
) -> f64 {
    let vs = conj_vec_kron(anchor);
    box_samples(anchor, a_max, opts.domination_samples, opts.sample_seed ^ i as u64)
        .iter()
        .map(|p| {
            let truth = coeffs.y(i, p);
            let bound = anchored(lam, grad, y_s, &vs, &conj_vec_kron(p));
            (truth - bound) - 1e-8 * (1.0 + truth.abs())
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random points of the amplitude box, half spread over the box and half near the anchor.
pub fn box_samples(anchor: &CVec, a_max: f64, count: usize, seed: u64) -> Vec<CVec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = anchor.len();
    (0..count)
        .map(|s| {
            if s % 2 == 0 {
                CVec::from_fn(m, |_, _| {
                    let r: f64 = a_max * rng.random::<f64>().sqrt();
                    C64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU))
                })
            } else {
                let scale = a_max * 10f64.powf(-rng.random_range(0.0..4.0));
                CVec::from_fn(m, |i, _| {
                    let z = anchor[i] + C64::from_polar(scale * rng.random::<f64>(), rng.random_range(0.0..std::f64::consts::TAU));
                    if z.norm() > a_max {
                        z * (a_max / z.norm())
                    } else {
                        z
                    }
                })
            }
        })
        .collect()
}


/// Cost of the fixed part of the RIS power bound, `c₃ = σ_t²σ_z²α_rt⁴M²a_max⁴`.
pub fn c3(sc: &Scenario, alpha_rt: f64, m: usize) -> f64 {
    sc.rcs_var * sc.noise_ris * alpha_rt.powi(4) * (m * m) as f64 * sc.a_max.powi(4)
}


/// The reflection QCQP in the scaled step `u`, with `φ = φ_s + a_max σ u`.
///
/// `σ ≤ 1` is the natural step length of the stiffest surrogate (gradient norm over curvature),
/// so `u` is of order one even when the curvature bounds are very large. It only rescales the
/// variable; the feasible set is unchanged.
#[derive(Debug, Clone)]
pub struct PhiQcqp {
    pub program: ConicProgram,
    pub delta: VarId,
    pub tau: VarId,
    pub a_max: f64,
    pub step_scale: f64,
    pub anchor: CVec,
}

impl PhiQcqp {
    /// `φ = φ_s + a_max σ u` from a solution.
    pub fn phi(&self, sol: &conic::ConicSolution) -> CVec {
        &self.anchor + sol.complex_vec(&self.program, self.delta).scale(self.a_max * self.step_scale)
    }
}

fn scale_of(vals: &[f64]) -> f64 {
    let s = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Adds `h²uᴴPu + Re{(h g)ᴴu} + value ≤ 0` for a quadratic with anchor gradient `g` and step
/// length `h`, normalized by its largest coefficient.
fn anchored_row(p: &mut ConicProgram, label: &str, delta: VarId, pm: &CMat, grad: &CVec, value: f64, h: f64) {
    let pm = pm.scale(h * h);
    let q = grad.scale(h);
    let s = scale_of(&[max_eig_hermitian(&pm), q.norm(), value]);
    let row = conic::convex_quadratic_le(p, delta, &pm.unscale(s), &q.unscale(s), value / s, LinExpr::default());
    p.add(label, row);
}

pub fn build_phi_qcqp(pack: &SurrogatePack, sinr: &SinrPhiConstants, sc: &Scenario) -> Result<PhiQcqp> {
    let a = pack.a_max;
    let m = pack.anchor.len();
    let ps = &pack.anchor;
    let eye = CMat::identity(m, m);

    // (label, P, gradient at anchor, value at anchor)
    let mut rows: Vec<(String, CMat, CVec, f64)> = Vec::new();
    if sc.p_ris.is_finite() {
        let c3v = c3(sc, sinr.alpha_rt, m);
        let budget = sc.p_ris - c3v;
        if !(budget > 0.0) {
            let max_a = (sc.p_ris / (sc.rcs_var * sc.noise_ris * sinr.alpha_rt.powi(4) * (m * m) as f64)).powf(0.25);
            return Err(Error::InfeasibleConfig(format!(
                "c₃ = {c3v:e} W exceeds P_RIS = {:e} W; largest feasible a_max is {max_a:.4}",
                sc.p_ris
            )));
        }
        // φᴴK̃φ ≤ P_RIS − c₃
        let k_tilde = hermitian_part(&(&sinr.k_ris_mat + sinr.j_mat.scale((m as f64) * a * a))).unscale(budget);
        let grad = (&k_tilde * ps).scale(2.0);
        let value = quad(&k_tilde, ps).re - 1.0;
        rows.push(("ris_power".into(), k_tilde, grad, value));
    }
    for k in 0..sinr.gamma.len() {
        rows.push((format!("sinr_{k}"), sinr.c_mat[k].clone(), pack.sinr_grad[k].clone(), pack.sinr_value[k]));
    }
    for i in 0..2 {
        let pm = eye.scale(0.5 * pack.lambda_y_tilde[i]);
        rows.push((format!("fractional_{}", i + 1), pm, pack.frac_grad[i].clone(), pack.frac_value[i]));
    }
    let p_obj = 0.5 * pack.lambda1_tilde;

    let mut sigma: f64 = 1.0;
    let natural = |pm: f64, g: &CVec| if pm > 0.0 && g.norm() > 0.0 { g.norm() / (a * pm) } else { f64::INFINITY };
    sigma = sigma.min(natural(p_obj, &pack.obj_grad));
    for (_, pm, g, _) in &rows {
        sigma = sigma.min(natural(max_eig_hermitian(pm), g));
    }
    if !(sigma > 0.0) {
        sigma = 1.0;
    }
    let h = a * sigma;

    let mut p = ConicProgram::new();
    let delta = p.add_var("delta", VarKind::ComplexVec(m));
    let tau = p.add_var("tau", VarKind::Real);

    // objective epigraph, relative to the anchor value
    let q_obj = pack.obj_grad.scale(h);
    let s_obj = scale_of(&[p_obj * h * h, q_obj.norm()]);
    let k_obj = eye.scale(p_obj * h * h / s_obj);
    let row = conic::convex_quadratic_le(&p, delta, &k_obj, &q_obj.unscale(s_obj), 0.0, p.real(tau, 0));
    p.add("objective", row);
    p.minimize(p.real(tau, 0));

    for (label, pm, g, value) in &rows {
        anchored_row(&mut p, label, delta, pm, g, *value, h);
    }

    // |φ_s,m / a + σ u_m| ≤ 1
    for j in 0..m {
        let e = p.cvec_entry(delta, j);
        let base = ps[j] / a;
        p.add(
            &format!("amplitude_{j}"),
            Constraint::Soc {
                head: LinExpr::constant(1.0),
                rest: vec![e.re.scaled(sigma).offset(base.re), e.im.scaled(sigma).offset(base.im)],
            },
        );
    }
    Ok(PhiQcqp { program: p, delta, tau, a_max: a, step_scale: sigma, anchor: ps.clone() })
}

/// `Ψ = σ_z² Gᵀ Φ Φᴴ G* + σ_r² I`.
pub fn update_psi(phi: &ReflectVector, ch: &ChannelSet, sc: &Scenario) -> CMat {
    model::noise_covariance(ch, phi, sc.noise_ris, sc.noise_bs)
}

/// One record of the inner reflection loop.
#[derive(Debug, Clone, Serialize)]
pub struct InnerRecord {
    pub iteration: usize,
    /// Frozen-Ψ objective `t₁ + t₂ − vᴴFv` after the step.
    pub objective: f64,
    pub g: f64,
    pub max_residual: f64,
    pub lambda1_tilde: f64,
    pub lambda_y: [f64; 2],
    pub lambda_y_tilde: [f64; 2],
    pub accepted: bool,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct PhiLoopResult {
    pub phi: ReflectVector,
    pub g: f64,
    pub iterations: usize,
    pub trace: Vec<InnerRecord>,
}

/// Whether `φ` satisfies the true RIS power, SINR and amplitude constraints with `W` fixed.
pub fn phi_feasible(ch: &ChannelSet, w: &Precoder, phi: &ReflectVector, sc: &Scenario, tol: f64) -> bool {
    if phi.max_amplitude() > sc.a_max * (1.0 + 1e-8) {
        return false;
    }
    if sc.p_ris.is_finite() && model::ris_power(ch, w, phi, sc) > sc.p_ris * (1.0 + tol) {
        return false;
    }
    (0..ch.k()).all(|k| model::sinr(k, ch, w, phi, sc) >= sc.sinr_targets[k] * (1.0 - tol))
}

fn true_g(ch: &ChannelSet, w: &Precoder, phi: &ReflectVector, sc: &Scenario) -> Result<f64> {
    crb::g_trace(&model::echo_model(ch, phi, sc), w)
}

/// Relative distance below the amplitude cap treated as on the cap.
pub const AMPLITUDE_SNAP: f64 = 1e-6;

/// Post-processing applied to each QCQP solution before it is tested for acceptance.
pub type Projection<'a> = &'a dyn Fn(&CVec) -> CVec;

/// Inner reflection loop: alternate `t` updates, QCQP steps and `Ψ` refreshes. Steps are kept
/// only when the true constraints hold and the frozen-Ψ objective does not increase; the iterate
/// with the largest true `g` is returned.
pub fn optimize_phi(
    ch: &ChannelSet,
    sc: &Scenario,
    w: &Precoder,
    phi0: &ReflectVector,
    opts: &PhiOptions,
    backend: &dyn ConicBackend,
    projection: Option<Projection<'_>>,
) -> Result<PhiLoopResult> {
    let sinr = sinr_phi_constants(ch, w, sc);
    let mut phi = phi0.clone();
    let mut g_cur = true_g(ch, w, &phi, sc)?;
    let mut best = (phi.clone(), g_cur);
    let mut trace = Vec::new();
    let mut retried = false;
    let mut iterations = 0;

    for it in 0..opts.inner_max_iter {
        iterations = it + 1;
        let em = model::echo_model(ch, &phi, sc);
        let psi = update_psi(&phi, ch, sc);
        let coeffs = compute_phi_coefficients(&em, w, &psi, ch, opts.kron_cap)?;
        let (t1, t2) = match update_t(&coeffs, &phi) {
            Ok(t) => t,
            Err(e) => {
                log::debug!("inner loop stops: {e}");
                break;
            }
        };
        let before = t1 + t2 - coeffs.v_f_v(&phi.phi);
        let pack = build_surrogates(&coeffs, &sinr, t1, t2, &phi, sc.a_max, opts)?;
        let qp = build_phi_qcqp(&pack, &sinr, sc)?;
        let sol = conic::solve(&qp.program, backend, opts.solver_tol)?;
        let mut rec = InnerRecord {
            iteration: it,
            objective: before,
            g: g_cur,
            max_residual: sol.max_violation,
            lambda1_tilde: pack.lambda1_tilde,
            lambda_y: pack.lambda_y,
            lambda_y_tilde: pack.lambda_y_tilde,
            accepted: false,
            status: format!("{:?}", sol.status),
        };
        // A stalled interior point can still return a usable point; the true checks below decide.
        let usable = sol.status == ConicStatus::Optimal
            || (sol.status == ConicStatus::NumericalFailure && sol.max_violation <= opts.feas_tol);
        if !usable {
            trace.push(rec);
            if retried {
                break;
            }
            // keep φ_s, refresh and retry once
            retried = true;
            continue;
        }
        let mut cand = qp.phi(&sol);
        // Amplitudes within solver accuracy of the cap are put on it, otherwise the amplitude
        // slack of the next y-bound would be solver noise multiplied by a very large curvature.
        for z in cand.iter_mut() {
            if z.norm() > sc.a_max * (1.0 - AMPLITUDE_SNAP) {
                *z *= sc.a_max / z.norm();
            }
        }
        if let Some(proj) = projection {
            cand = proj(&cand);
        }
        let cand = ReflectVector::new(cand);
        let after = coeffs.objective(&cand.phi).ok();
        let ok_obj = matches!(after, Some(v) if v <= before + 1e-12 * before.abs());
        let ok_feas = phi_feasible(ch, w, &cand, sc, opts.feas_tol);
        let g_new = if ok_obj && ok_feas { true_g(ch, w, &cand, sc).ok() } else { None };
        if let Some(g_new) = g_new {
            let after = after.unwrap_or(before);
            let rel = (before - after).abs() / before.abs().max(f64::MIN_POSITIVE);
            rec.objective = after;
            rec.g = g_new;
            rec.accepted = true;
            trace.push(rec);
            phi = cand;
            g_cur = g_new;
            if g_new > best.1 {
                best = (phi.clone(), g_new);
            }
            if rel < opts.inner_tol {
                break;
            }
        } else {
            trace.push(rec);
            break;
        }
    }
    Ok(PhiLoopResult { phi: best.0, g: best.1, iterations, trace })
}

//! Phase initialization: maximize the cascaded channel power over unit-modulus `ψ` with a
//! Riemannian conjugate-gradient method on the complex circle manifold.

use serde::Serialize;

use crate::linalg::{conj_mat, conj_vec, diag, hermitian_part, quad, CMat, CVec, C64};
use crate::model::ReflectVector;
use crate::scenario::ChannelSet;

/// `max ψᴴMψ + Re{ψᴴm}` over `|ψ_m| = 1`.
#[derive(Debug, Clone)]
pub struct InitProblem {
    pub m_mat: CMat,
    pub m_vec: CVec,
}

impl InitProblem {
    /// Minimized objective `−ψᴴMψ − Re{ψᴴm}`.
    pub fn objective(&self, psi: &CVec) -> f64 {
        -quad(&self.m_mat, psi).re - self.m_vec.dotc(psi).re
    }

    /// Euclidean gradient `−(2Mψ + m)`, so that `df = Re{gᴴ dψ}`.
    pub fn egrad(&self, psi: &CVec) -> CVec {
        -((&self.m_mat * psi).scale(2.0) + &self.m_vec)
    }
}

pub fn build_init_problem(ch: &ChannelSet) -> InitProblem {
    let m = ch.m();
    let gg = conj_mat(&ch.g) * ch.g.transpose();
    let gram = |h: &CVec| diag(&conj_vec(h)) * &gg * diag(h);
    let mut m_mat = gram(&ch.h_rt);
    let mut m_vec = CVec::zeros(m);
    for k in 0..ch.k() {
        m_mat += gram(&ch.h_r[k]);
        m_vec += (diag(&conj_vec(&ch.h_r[k])) * conj_mat(&ch.g) * &ch.h_d[k]).scale(2.0);
    }
    InitProblem { m_mat: hermitian_part(&m_mat), m_vec }
}

#[derive(Debug, Clone, Serialize)]
pub struct RcgResult {
    #[serde(skip)]
    pub psi: CVec,
    /// Final value of `−ψᴴMψ − Re{ψᴴm}`.
    pub objective: f64,
    /// Objective after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
    /// Riemannian gradient norm of the normalized objective at the returned point.
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Projection onto the tangent space at `psi`: removes the radial component per element.
fn project(psi: &CVec, g: &CVec) -> CVec {
    CVec::from_fn(psi.len(), |i, _| {
        let radial = (g[i] * psi[i].conj()).re;
        g[i] - psi[i] * radial
    })
}

fn retract(x: &CVec) -> CVec {
    x.map(|z| {
        let r = z.norm();
        if r > 0.0 {
            z / r
        } else {
            C64::new(1.0, 0.0)
        }
    })
}

fn real_inner(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).re
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Polak–Ribière+ conjugate gradient with Armijo backtracking, started from the all-ones point.
/// The objective is internally divided by `‖M‖ + ‖m‖` so the unit initial step is meaningful.
///
/// Stops once the Riemannian gradient of the normalized objective falls below
/// `tol·(1 + |f|)`. Near an optimum the decrease scales with the squared gradient, so tolerances
/// much below `1e-8` end on a stalled line search instead.
pub fn rcg_solve(p: &InitProblem, max_iter: usize, tol: f64) -> RcgResult {
    let m = p.m_vec.len();
    let scale = {
        let s = p.m_mat.norm() + p.m_vec.norm();
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    };
    let f = |x: &CVec| p.objective(x) / scale;
    let rgrad = |x: &CVec| project(x, &p.egrad(x).unscale(scale));

    let mut psi = CVec::from_element(m, C64::new(1.0, 0.0));
    let mut fx = f(&psi);
    let mut g = rgrad(&psi);
    let mut d = -g.clone();
    let mut history = vec![fx * scale];
    let mut iterations = 0;
    let mut trial = 1.0;

    while iterations < max_iter {
        let gn = g.norm();
        if gn <= tol * (1.0 + fx.abs()) {
            break;
        }
        let mut slope = real_inner(&g, &d);
        if slope >= 0.0 {
            d = -g.clone();
            slope = -gn * gn;
        }
        let mut step = trial;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = retract(&(&psi + d.scale(step)));
            let fc = f(&cand);
            if fc <= fx + ARMIJO * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fn_)) = accepted else {
            // no decrease representable in floating point
            break;
        };
        iterations += 1;
        // next trial starts from twice the accepted step
        trial = 2.0 * step;
        let g_new = rgrad(&next);
        let g_old_t = project(&next, &g);
        let d_old_t = project(&next, &d);
        let denom = g.norm_squared();
        let beta = if denom > 0.0 { (real_inner(&g_new, &(&g_new - &g_old_t)) / denom).max(0.0) } else { 0.0 };
        d = -&g_new + d_old_t.scale(beta);
        let change = (fx - fn_).abs() / fx.abs().max(f64::MIN_POSITIVE);
        psi = next;
        fx = fn_;
        g = g_new;
        history.push(fx * scale);
        if change < f64::EPSILON {
            break;
        }
    }
    RcgResult { objective: p.objective(&psi), grad_norm: g.norm(), psi, history, iterations }
}

/// `φ = a_max ψ`.
pub fn initial_phi(psi: &CVec, a_max: f64) -> ReflectVector {
    ReflectVector::new(psi.scale(a_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::scenario::{complex_normal, synthesize_channels, Scenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(m: usize, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from_fn(m, |_, _| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
    }

    #[test]
    fn matrix_form_matches_channel_power() {
        let sc = Scenario::desk().with_seed(3);
        let ch = synthesize_channels(&sc).unwrap();
        let p = build_init_problem(&ch);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cst: f64 = ch.h_d.iter().map(|h| h.norm_squared()).sum();
        for _ in 0..5 {
            let psi = random_unit(ch.m(), &mut rng);
            let dpsi = diag(&psi);
            let mut direct = (ch.h_rt.transpose() * &dpsi * &ch.g).norm_squared();
            for k in 0..ch.k() {
                direct += (ch.h_d[k].transpose() + ch.h_r[k].transpose() * &dpsi * &ch.g).norm_squared();
            }
            let form = -p.objective(&psi) + cst;
            assert!((direct - form).abs() <= 1e-9 * direct);
        }
    }

    #[test]
    fn no_direct_links_and_no_users() {
        let sc = Scenario::desk().with_seed(4);
        let mut ch = synthesize_channels(&sc).unwrap();
        for h in &mut ch.h_d {
            h.fill(c(0.0, 0.0));
        }
        assert_eq!(build_init_problem(&ch).m_vec.norm(), 0.0);
        let radar = build_init_problem(&ch.without_users());
        let gg = crate::linalg::conj_mat(&ch.g) * ch.g.transpose();
        let expect = diag(&conj_vec(&ch.h_rt)) * gg * diag(&ch.h_rt);
        assert!((radar.m_mat - expect).norm() <= 1e-12 * radar.m_vec.len().max(1) as f64);
    }

    #[test]
    fn scalar_problem_is_constant() {
        let p = InitProblem { m_mat: CMat::from_element(1, 1, c(2.0, 0.0)), m_vec: CVec::zeros(1) };
        let r = rcg_solve(&p, 50, 1e-10);
        assert!(r.history.iter().all(|&v| (v + 2.0).abs() < 1e-12));
        assert!((r.psi[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_term_aligns_phases() {
        let cvec = CVec::from_vec(vec![c(3.0, 0.0), c(0.0, 2.0)]);
        let p = InitProblem { m_mat: CMat::zeros(2, 2), m_vec: cvec.clone() };
        let r = rcg_solve(&p, 200, 1e-12);
        for i in 0..2 {
            assert!((r.psi[i] - cvec[i] / cvec[i].norm()).norm() < 1e-6);
        }
    }

    #[test]
    fn descent_and_manifold_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = CMat::from_fn(6, 6, |_, _| complex_normal(&mut rng));
        let p = InitProblem { m_mat: &a * a.adjoint(), m_vec: CVec::from_fn(6, |_, _| complex_normal(&mut rng)) };
        let r = rcg_solve(&p, 500, 1e-7);
        assert!(r.psi.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs()));
        let scaled = r.objective / (p.m_mat.norm() + p.m_vec.norm());
        assert!(r.grad_norm <= 1e-7 * (1.0 + scaled.abs()), "{} after {}", r.grad_norm, r.iterations);
        for _ in 0..1000 {
            assert!(p.objective(&random_unit(6, &mut rng)) >= r.objective - 1e-9 * r.objective.abs());
        }
    }

    #[test]
    fn initial_phi_scales() {
        let psi = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(initial_phi(&psi, 1.0).phi, psi);
        let phi = initial_phi(&psi, 8.0);
        assert_eq!(phi.phi[0], c(8.0, 0.0));
        assert!(phi.phi.iter().all(|z| (z.norm() - 8.0).abs() < 1e-12));
    }
}

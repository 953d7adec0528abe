//! Quick runtime oracle checks, run by `isac selftest`. Each check compares a production code
//! path against an independent evaluation on a few seeded instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conic::ClarabelBackend;
use crate::crb;
use crate::driver::{constraint_report, feasible_amplitude, run_bcd, BcdOptions};
use crate::error::Result;
use crate::initializer::{build_init_problem, initial_phi, rcg_solve};
use crate::linalg::{conj_vec, quad, CMat, CVec, C64};
use crate::model::{self, echo_model, Precoder, ReflectVector};
use crate::precoder::{precoder_constants, recover_w, solve_w_sdr, SdrFamilies};
use crate::reflector::{box_samples, build_surrogates, compute_phi_coefficients, sinr_phi_constants, update_psi, update_t, PhiOptions};
use crate::scenario::{complex_normal, steering, synthesize_channels, ChannelSet, Scenario};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error or a failure message.
    pub detail: String,
}

fn instance(seed: u64) -> (Scenario, ChannelSet, Precoder, ReflectVector) {
    let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() }.with_seed(seed);
    let ch = synthesize_channels(&sc).expect("desk channels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let w = Precoder::new(CMat::from_fn(4, 6, |_, _| complex_normal(&mut rng) * 0.1));
    let phi = ReflectVector::new(CVec::from_fn(4, |_, _| C64::from_polar(sc.a_max, rng.random_range(0.0..std::f64::consts::TAU))));
    (sc, ch, w, phi)
}

fn worst(name: &'static str, limit: f64, errors: impl IntoIterator<Item = Result<f64>>) -> Check {
    let mut max = 0.0f64;
    for e in errors {
        match e {
            Ok(v) if v.is_finite() => max = max.max(v),
            Ok(v) => return Check { name, passed: false, detail: format!("non-finite error {v}") },
            Err(err) => return Check { name, passed: false, detail: err.to_string() },
        }
    }
    Check { name, passed: max <= limit, detail: format!("worst {max:.3e} (limit {limit:.0e})") }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn steering_unit_modulus() -> Check {
    worst(
        "steering unit modulus",
        1e-12,
        (0..20).map(|i| Ok(steering(9, 0.17 * i as f64).iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max))),
    )
}

fn fim_matches_definition() -> Check {
    worst(
        "FIM blocks vs vectorized definition",
        1e-8,
        (0..3).map(|s| {
            let (sc, ch, w, phi) = instance(s);
            let em = echo_model(&ch, &phi, &sc);
            let l = 16;
            let f = crb::fim(&em, &w, &Scenario { n_samples: l, ..sc.clone() }, 1.0)?;
            // orthogonal rows with S Sᴴ = L I
            let s_mat = CMat::from_fn(w.n_columns(), l, |i, j| {
                C64::from_polar(1.0, -2.0 * std::f64::consts::PI * (i * j) as f64 / l as f64)
            });
            let m = crb::oracle::fim_vectorized(&em, &w, &s_mat, 1.0);
            Ok((f.full() - m).norm() / m.norm())
        }),
    )
}

fn crb_consistency() -> Check {
    worst(
        "CRB times 2L|α|²g equals one",
        1e-9,
        (0..5).map(|s| {
            let (sc, ch, w, phi) = instance(s);
            let em = echo_model(&ch, &phi, &sc);
            let alpha_sq = 0.7;
            let crb_v = crb::crb_theta(&crb::fim(&em, &w, &sc, alpha_sq)?)?;
            let g = crb::g_trace(&em, &w)?;
            Ok((crb_v * 2.0 * sc.n_samples as f64 * alpha_sq * g - 1.0).abs())
        }),
    )
}

fn explicit_g_matches_trace() -> Check {
    worst(
        "explicit g(φ) vs trace form",
        1e-8,
        (0..5).map(|s| {
            let (sc, ch, w, phi) = instance(s);
            let em = echo_model(&ch, &phi, &sc);
            let co = compute_phi_coefficients(&em, &w, &update_psi(&phi, &ch, &sc), &ch, 16)?;
            Ok(rel(crb::g_phi_explicit(&co, &phi)?, crb::g_trace(&em, &w)?))
        }),
    )
}

fn surrogates_sound() -> Check {
    worst(
        "surrogate tangency and domination",
        1e-8,
        (0..2).map(|s| {
            let (sc, ch, w, phi) = instance(s + 10);
            let em = echo_model(&ch, &phi, &sc);
            let co = compute_phi_coefficients(&em, &w, &update_psi(&phi, &ch, &sc), &ch, 16)?;
            let sinr = sinr_phi_constants(&ch, &w, &sc);
            let (t1, t2) = update_t(&co, &phi)?;
            let pack = build_surrogates(&co, &sinr, t1, t2, &phi, sc.a_max, &PhiOptions::default())?;
            let mut err = 0.0f64;
            let ps = &phi.phi;
            err = err.max((pack.objective(ps) + co.v_f_v(ps)).abs() / (1.0 + co.v_f_v(ps).abs()));
            for p in box_samples(ps, sc.a_max, 50, s) {
                let excess = |sur: f64, orig: f64| ((orig - sur) / (1.0 + orig.abs())).max(0.0);
                err = err.max(excess(pack.objective(&p), -co.v_f_v(&p)));
                for i in 1..=2 {
                    err = err.max(excess(pack.y_bound(i, &p), co.y(i, &p)));
                    err = err.max(excess(pack.neg_r_hat(i, &p), -quad(co.r_hat(i), &p).re));
                }
                for k in 0..sinr.gamma.len() {
                    err = err.max(excess(pack.sinr(&sinr, k, &p), sinr.sinr_form(k, &p)));
                }
            }
            Ok(err)
        }),
    )
}

fn sdr_recovery() -> Check {
    worst(
        "SDR rank recovery",
        1e-6,
        (0..2).map(|s| {
            let sc = Scenario::desk().with_seed(s);
            let ch = synthesize_channels(&sc)?;
            let psi = rcg_solve(&build_init_problem(&ch), 500, 1e-7).psi;
            let phi = initial_phi(&psi, feasible_amplitude(&sc)?);
            let em = echo_model(&ch, &phi, &sc);
            let consts = precoder_constants(&ch, &phi, &sc);
            let (sdr, sol) = solve_w_sdr(&em, &consts, &sc, SdrFamilies::default(), &ClarabelBackend::default(), 1e-8)?;
            let lifted = sdr.lifted(&sol);
            let w = recover_w(&lifted, &consts)?;
            let mut err = rel(w.power(), lifted.r.trace().re);
            for k in 0..ch.k() {
                let hc = conj_vec(&consts.h_compound[k]);
                let sig = quad(&lifted.w_k[k], &hc).re;
                let tot = quad(&lifted.r, &hc).re;
                err = err.max(rel(model::sinr(k, &ch, &w, &phi, &sc), sig / (tot - sig + consts.c_s[k])));
            }
            let g_lifted = crb::g_from_terms(&crb::trace_terms(&em, &lifted.r)?)?;
            err = err.max(rel(crb::g_trace(&em, &w)?, g_lifted));
            Ok(err)
        }),
    )
}

fn rcg_beats_samples() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    worst(
        "RCG initializer vs random phases",
        0.0,
        (0..2).map(|s| {
            let ch = synthesize_channels(&Scenario::desk().with_seed(s))?;
            let p = build_init_problem(&ch);
            let r = rcg_solve(&p, 500, 1e-7);
            let mut bad = r.psi.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
            bad = if bad <= 1e-12 { 0.0 } else { bad };
            for _ in 0..200 {
                let psi = CVec::from_fn(ch.m(), |_, _| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)));
                bad = bad.max(r.objective - p.objective(&psi) - 1e-9 * r.objective.abs());
            }
            Ok(bad.max(0.0))
        }),
    )
}

fn bcd_monotone_and_feasible() -> Check {
    let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() };
    let run = || -> Result<f64> {
        let ch = synthesize_channels(&sc)?;
        let r = run_bcd(&sc, &ch, &BcdOptions { max_outer: 4, ..Default::default() })?;
        let g = r.trace.g_values();
        let drop = g.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        let rep = constraint_report(&ch, &r.w, &r.phi, &sc);
        Ok(if rep.satisfied(1e-6) { drop.max(0.0) } else { f64::INFINITY })
    };
    worst("BCD monotone and feasible", 1e-6, [run()])
}

/// Runs every check in order.
pub fn run_selftest() -> Vec<Check> {
    vec![
        steering_unit_modulus(),
        fim_matches_definition(),
        crb_consistency(),
        explicit_g_matches_trace(),
        surrogates_sound(),
        sdr_recovery(),
        rcg_beats_samples(),
        bcd_monotone_and_feasible(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}

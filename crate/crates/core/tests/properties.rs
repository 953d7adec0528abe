use std::f64::consts::PI;

use isac_core::config::{parse_angle, parse_config, parse_power, parse_ratio};
use isac_core::crb;
use isac_core::initializer::{build_init_problem, rcg_solve};
use isac_core::linalg::{hermitian_eigenvalues, real_embedding, CMat, CVec, C64};
use isac_core::model::{self, echo_model, Precoder, ReflectVector};
use isac_core::scenario::{db_to_linear, dbm_to_watt, linear_to_db, steering, synthesize_channels, watt_to_dbm, ChannelSet, Scenario};
use isac_core::sweep::{aggregate, median, SweepRow};
use proptest::prelude::*;
use toml::Value;

fn small(seed: u64) -> (Scenario, ChannelSet) {
    let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() }.with_seed(seed);
    let ch = synthesize_channels(&sc).unwrap();
    (sc, ch)
}

fn cvec(parts: &[(f64, f64)]) -> CVec {
    CVec::from_iterator(parts.len(), parts.iter().map(|&(r, i)| C64::new(r, i)))
}

fn cmat(rows: usize, cols: usize, parts: &[(f64, f64)]) -> CMat {
    CMat::from_iterator(rows, cols, parts.iter().map(|&(r, i)| C64::new(r, i)))
}

fn entries(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n)
}

fn phases(n: usize, amp: f64) -> impl Strategy<Value = CVec> {
    prop::collection::vec(0.0..2.0 * PI, n).prop_map(move |p| CVec::from_iterator(p.len(), p.iter().map(|&t| C64::from_polar(amp, t))))
}

fn row(variant: &str, value: f64, crb_db: Option<f64>, status: &str) -> SweepRow {
    SweepRow {
        variant: variant.into(),
        param: "p_bs".into(),
        value,
        seed: 0,
        crb_rad2: crb_db.map(|d| 10f64.powf(d / 10.0)),
        crb_db,
        min_sinr_db: None,
        bs_power_w: None,
        ris_power_w: None,
        outer_iters: Some(1),
        wall_ms: 0.0,
        status: status.into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steering_has_unit_modulus(m in 1usize..40, theta in -PI..PI) {
        for z in steering(m, theta).iter() {
            prop_assert!((z.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn unit_conversions_round_trip(x in -120.0..60.0f64) {
        prop_assert!((watt_to_dbm(dbm_to_watt(x)) - x).abs() <= 1e-9);
        prop_assert!((linear_to_db(db_to_linear(x)) - x).abs() <= 1e-9);
    }

    #[test]
    fn unit_strings_match_conversions(x in -90.0..50.0f64, deg in -180.0..180.0f64) {
        let p = parse_power(&Value::String(format!("{x} dBm"))).unwrap();
        prop_assert!((p / dbm_to_watt(x) - 1.0).abs() <= 1e-12);
        let w = parse_power(&Value::String(format!("{x} mW"))).unwrap();
        prop_assert!((w - x * 1e-3).abs() <= 1e-12 * x.abs().max(1.0));
        let r = parse_ratio(&Value::String(format!("{x} dB"))).unwrap();
        prop_assert!((r / db_to_linear(x) - 1.0).abs() <= 1e-12);
        let a = parse_angle(&Value::String(format!("{deg} deg"))).unwrap();
        prop_assert!((a - deg.to_radians()).abs() <= 1e-12);
    }

    #[test]
    fn config_power_keys_use_their_units(p in 0.0..40.0f64, g in -10.0..30.0f64) {
        let src = format!("p_bs = \"{p} dBm\"\nsinr_target = \"{g} dB\"\n");
        let sc = parse_config(&src).unwrap().scenario;
        prop_assert!((watt_to_dbm(sc.p_bs) - p).abs() <= 1e-9);
        for t in &sc.sinr_targets {
            prop_assert!((linear_to_db(*t) - g).abs() <= 1e-9);
        }
    }

    #[test]
    fn median_is_order_free_and_bracketed(mut xs in prop::collection::vec(-1e3..1e3f64, 1..30), rot in 0usize..30) {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = median(&mut xs.clone()).unwrap();
        let k = rot % xs.len();
        xs.rotate_left(k);
        prop_assert_eq!(median(&mut xs).unwrap(), m);
        prop_assert!(lo <= m && m <= hi);
    }

    #[test]
    fn failed_runs_do_not_move_medians(ok in prop::collection::vec(-20.0..20.0f64, 1..8), bad in 0usize..5) {
        let mut rows: Vec<SweepRow> = ok.iter().map(|&c| row("aris-isac", 1.0, Some(c), "converged")).collect();
        let clean = aggregate(&rows);
        rows.extend((0..bad).map(|_| row("aris-isac", 1.0, None, "infeasible")));
        let noisy = aggregate(&rows);
        prop_assert_eq!(noisy.len(), 1);
        prop_assert_eq!(noisy[0].runs, ok.len() + bad);
        prop_assert_eq!(noisy[0].ok_runs, ok.len());
        prop_assert_eq!(noisy[0].crb_db, clean[0].crb_db);
    }

    #[test]
    fn hermitian_embedding_duplicates_eigenvalues(parts in entries(16)) {
        let a = cmat(4, 4, &parts);
        let h = (&a + a.adjoint()) * C64::new(0.5, 0.0);
        let mut ev = hermitian_eigenvalues(&h);
        ev.extend(hermitian_eigenvalues(&h));
        ev.sort_by(f64::total_cmp);
        let mut emb: Vec<f64> = real_embedding(&h).symmetric_eigenvalues().iter().copied().collect();
        emb.sort_by(f64::total_cmp);
        for (x, y) in ev.iter().zip(&emb) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn echo_noise_is_floored_by_receiver_noise(seed in 0u64..50, phi in phases(4, 3.0)) {
        let (sc, ch) = small(seed);
        let rn = model::noise_covariance(&ch, &ReflectVector::new(phi), sc.noise_ris, sc.noise_bs);
        prop_assert!(hermitian_eigenvalues(&rn)[0] >= sc.noise_bs * (1.0 - 1e-9));
    }

    #[test]
    fn ris_power_forms_agree(seed in 0u64..50, phi in phases(4, 5.0), parts in entries(24)) {
        let (sc, ch) = small(seed);
        let w = Precoder::new(cmat(4, 6, &parts) * C64::new(0.1, 0.0));
        let phi = ReflectVector::new(phi);
        let direct = model::ris_power(&ch, &w, &phi, &sc);
        let split = model::ris_power_quadratic(&ch, &w, &phi, &sc);
        prop_assert!((direct - split).abs() <= 1e-9 * direct.abs());
    }

    #[test]
    fn g_depends_on_w_only_through_its_covariance(seed in 0u64..50, phi in phases(4, 2.0), parts in entries(24), turn in prop::collection::vec(0.0..2.0 * PI, 6)) {
        let (sc, ch) = small(seed);
        let w = cmat(4, 6, &parts) * C64::new(0.1, 0.0);
        let rotated = &w * CMat::from_diagonal(&cvec(&turn.iter().map(|t| (t.cos(), t.sin())).collect::<Vec<_>>()));
        let em = echo_model(&ch, &ReflectVector::new(phi), &sc);
        let a = crb::g_trace(&em, &Precoder::new(w)).unwrap();
        let b = crb::g_trace(&em, &Precoder::new(rotated)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs());
        prop_assert!(a >= -1e-12 * a.abs());
    }

    #[test]
    fn crb_inverts_scaled_g(seed in 0u64..50, phi in phases(4, 4.0), parts in entries(24), alpha_sq in 0.01..10.0f64) {
        let (sc, ch) = small(seed);
        let w = Precoder::new(cmat(4, 6, &parts) * C64::new(0.1, 0.0));
        let em = echo_model(&ch, &ReflectVector::new(phi), &sc);
        let c = crb::crb_theta(&crb::fim(&em, &w, &sc, alpha_sq).unwrap()).unwrap();
        let g = crb::g_trace(&em, &w).unwrap();
        prop_assert!((c * 2.0 * sc.n_samples as f64 * alpha_sq * g - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn rcg_stays_on_the_torus_and_descends(seed in 0u64..200) {
        let (_, ch) = small(seed);
        let p = build_init_problem(&ch);
        let r = rcg_solve(&p, 300, 1e-7);
        for z in r.psi.iter() {
            prop_assert!((z.norm() - 1.0).abs() <= 1e-12);
        }
        for w in r.history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(r.objective <= p.objective(&CVec::from_element(ch.m(), C64::new(1.0, 0.0))));
    }
}

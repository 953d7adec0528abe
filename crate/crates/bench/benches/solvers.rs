use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use isac_bench::{desk, fixture};
use isac_core::conic::{self, ClarabelBackend};
use isac_core::crb;
use isac_core::driver::{run_bcd, BcdOptions};
use isac_core::initializer::{build_init_problem, rcg_solve};
use isac_core::model::echo_model;
use isac_core::precoder::{precoder_constants, solve_w_sdr, SdrFamilies};
use isac_core::reflector::{build_phi_qcqp, build_surrogates, compute_phi_coefficients, sinr_phi_constants, update_psi, update_t, PhiOptions};
use isac_core::Scenario;

fn transmit_step(c: &mut Criterion) {
    let f = desk(0);
    let backend = ClarabelBackend::default();
    c.bench_function("w_sdr_desk", |b| {
        b.iter(|| {
            let em = echo_model(&f.ch, &f.phi, &f.sc);
            let consts = precoder_constants(&f.ch, &f.phi, &f.sc);
            solve_w_sdr(&em, &consts, &f.sc, SdrFamilies::default(), &backend, 1e-8).unwrap()
        })
    });
}

fn reflection_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("phi_qcqp_step");
    for m in [4usize, 6, 8] {
        let f = fixture(Scenario { m_elements: m, ..Scenario::desk() });
        let backend = ClarabelBackend::default();
        let opts = PhiOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| {
                let em = echo_model(&f.ch, &f.phi, &f.sc);
                let psi = update_psi(&f.phi, &f.ch, &f.sc);
                let co = compute_phi_coefficients(&em, &f.w, &psi, &f.ch, opts.kron_cap).unwrap();
                let sinr = sinr_phi_constants(&f.ch, &f.w, &f.sc);
                let (t1, t2) = update_t(&co, &f.phi).unwrap();
                let pack = build_surrogates(&co, &sinr, t1, t2, &f.phi, f.sc.a_max, &opts).unwrap();
                let qp = build_phi_qcqp(&pack, &sinr, &f.sc).unwrap();
                conic::solve(&qp.program, &backend, opts.solver_tol).unwrap()
            })
        });
    }
    group.finish();
}

fn initializer(c: &mut Criterion) {
    let f = desk(1);
    let p = build_init_problem(&f.ch);
    c.bench_function("rcg_desk", |b| b.iter(|| rcg_solve(&p, 500, 1e-7)));
}

fn fisher(c: &mut Criterion) {
    let f = desk(2);
    c.bench_function("fim_and_g_desk", |b| {
        b.iter(|| {
            let em = echo_model(&f.ch, &f.phi, &f.sc);
            let fim = crb::fim(&em, &f.w, &f.sc, f.sc.rcs_var).unwrap();
            (crb::crb_theta(&fim).unwrap(), crb::g_trace(&em, &f.w).unwrap())
        })
    });
}

fn full_design(c: &mut Criterion) {
    let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() };
    let ch = isac_core::scenario::synthesize_channels(&sc).unwrap();
    let opts = BcdOptions { max_outer: 3, ..Default::default() };
    let mut group = c.benchmark_group("bcd");
    group.sample_size(10);
    group.bench_function("three_outer_iterations_small", |b| b.iter(|| run_bcd(&sc, &ch, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, transmit_step, reflection_step, initializer, fisher, full_design);
criterion_main!(benches);

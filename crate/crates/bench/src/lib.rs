//! Fixtures shared by the solver benchmarks: a desk-size instance at the point where the
//! optimizer starts.

use isac_core::conic::ClarabelBackend;
use isac_core::driver::feasible_amplitude;
use isac_core::initializer::{build_init_problem, initial_phi, rcg_solve};
use isac_core::model::echo_model;
use isac_core::precoder::{precoder_constants, recover_w, solve_w_sdr, SdrFamilies};
use isac_core::scenario::synthesize_channels;
use isac_core::{ChannelSet, Precoder, ReflectVector, Scenario};

pub struct Fixture {
    pub sc: Scenario,
    pub ch: ChannelSet,
    pub phi: ReflectVector,
    pub w: Precoder,
}

/// Channels of `seed`, RCG-initialized reflection and the first transmit design.
pub fn fixture(sc: Scenario) -> Fixture {
    let ch = synthesize_channels(&sc).expect("channels");
    let psi = rcg_solve(&build_init_problem(&ch), 500, 1e-7).psi;
    let phi = initial_phi(&psi, feasible_amplitude(&sc).expect("amplitude"));
    let em = echo_model(&ch, &phi, &sc);
    let consts = precoder_constants(&ch, &phi, &sc);
    let (sdr, sol) = solve_w_sdr(&em, &consts, &sc, SdrFamilies::default(), &ClarabelBackend::default(), 1e-8)
        .expect("transmit relaxation");
    let w = recover_w(&sdr.lifted(&sol), &consts).expect("recovery");
    Fixture { sc, ch, phi, w }
}

pub fn desk(seed: u64) -> Fixture {
    fixture(Scenario::desk().with_seed(seed))
}

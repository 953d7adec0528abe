//! Outer block coordinate descent: alternate the transmit relaxation with the reflection inner
//! loop until `g` stops improving, plus the passive-RIS and radar-only variants.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conic::{ClarabelBackend, ConicBackend, ConicStatus};
use crate::crb;
use crate::error::{Error, Result};
use crate::initializer::{build_init_problem, initial_phi, rcg_solve};
use crate::linalg::{CVec, C64};
use crate::model::{self, Precoder, ReflectVector};
use crate::precoder::{precoder_constants, recover_w, solve_w_sdr, SdrFamilies};
use crate::reflector::{optimize_phi, PhiOptions, Projection};
use crate::scenario::{linear_to_db, ChannelSet, Scenario};

#[derive(Debug, Clone)]
pub struct BcdOptions {
    /// Relative change of `g` between outer iterations that counts as converged.
    pub tol: f64,
    pub max_outer: usize,
    pub solver_tol: f64,
    pub rcg_max_iter: usize,
    pub rcg_tol: f64,
    /// Relative slack used when checking the final constraints.
    pub feas_tol: f64,
    /// Largest number of amplitude halvings tried when the first relaxation is infeasible
    /// because of the RIS budget.
    pub max_amplitude_halvings: usize,
    pub phi: PhiOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_outer: 30,
            solver_tol: 1e-8,
            rcg_max_iter: 500,
            rcg_tol: 1e-7,
            feas_tol: 1e-6,
            max_amplitude_halvings: 20,
            phi: PhiOptions::default(),
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, Serialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub g: f64,
    pub crb_rad2: f64,
    pub crb_db: f64,
    /// `min_k SINR_k / γ_k` in dB; absent without users.
    pub min_sinr_margin_db: Option<f64>,
    pub bs_power_w: f64,
    pub ris_power_w: f64,
    pub inner_iterations: usize,
    pub wall_ms: f64,
    /// Whether the transmit step was kept (it is rejected if it would lower `g`).
    pub w_accepted: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BcdTrace {
    pub records: Vec<OuterRecord>,
}

impl BcdTrace {
    pub fn g_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.g).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignStatus {
    Converged,
    MaxIter,
    Infeasible,
}

impl fmt::Display for DesignStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignStatus::Converged => "converged",
            DesignStatus::MaxIter => "max-iter",
            DesignStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone)]
pub struct DesignResult {
    pub w: Precoder,
    pub phi: ReflectVector,
    /// `CRB_θ` in rad², `NaN` when infeasible.
    pub crb_theta: f64,
    pub g: f64,
    pub trace: BcdTrace,
    pub status: DesignStatus,
    /// Constraint families found binding when infeasible, and other notes.
    pub diagnostics: Vec<String>,
}

/// The three compared systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    ArisIsac,
    PrisIsac,
    ArisRadarOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ArisIsac, Variant::PrisIsac, Variant::ArisRadarOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ArisIsac => "aris-isac",
            Variant::PrisIsac => "pris-isac",
            Variant::ArisRadarOnly => "aris-radar-only",
        }
    }

    pub fn run(self, sc: &Scenario, ch: &ChannelSet, opts: &BcdOptions) -> Result<DesignResult> {
        match self {
            Variant::ArisIsac => run_bcd(sc, ch, opts),
            Variant::PrisIsac => run_passive_baseline(sc, ch, opts),
            Variant::ArisRadarOnly => run_radar_only(sc, ch, opts),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}' (expected aris-isac, pris-isac or aris-radar-only)")))
    }
}

/// Physical constraint levels of a design, each as a ratio to its limit.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintReport {
    pub bs_power_ratio: f64,
    /// `NaN` when the RIS budget is unbounded.
    pub ris_power_ratio: f64,
    pub min_sinr_ratio: Option<f64>,
    pub max_amplitude_ratio: f64,
}

impl ConstraintReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        let le = |x: f64| x.is_nan() || x <= 1.0 + tol;
        le(self.bs_power_ratio)
            && le(self.ris_power_ratio)
            && le(self.max_amplitude_ratio)
            && self.min_sinr_ratio.is_none_or(|s| s >= 1.0 - tol)
    }
}

pub fn constraint_report(ch: &ChannelSet, w: &Precoder, phi: &ReflectVector, sc: &Scenario) -> ConstraintReport {
    let ris_power_ratio =
        if sc.p_ris.is_finite() { model::ris_power(ch, w, phi, sc) / sc.p_ris } else { f64::NAN };
    let min_sinr_ratio = (0..ch.k())
        .map(|k| model::sinr(k, ch, w, phi, sc) / sc.sinr_targets[k])
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))));
    ConstraintReport {
        bs_power_ratio: w.power() / sc.p_bs,
        ris_power_ratio,
        min_sinr_ratio,
        max_amplitude_ratio: phi.max_amplitude() / sc.a_max,
    }
}

/// Largest uniform amplitude `a ≤ a_max` whose static draw stays within half the RIS budget.
pub fn feasible_amplitude(sc: &Scenario) -> Result<f64> {
    if !sc.p_ris.is_finite() {
        return Ok(sc.a_max);
    }
    let target = 0.5 * sc.p_ris;
    if sc.static_ris_draw(sc.a_max)? <= target {
        return Ok(sc.a_max);
    }
    // the draw is increasing in a, so bisect
    let (mut lo, mut hi) = (0.0, sc.a_max);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if sc.static_ris_draw(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn unit_projection(anchor: &CVec) -> impl Fn(&CVec) -> CVec + '_ {
    move |x: &CVec| {
        CVec::from_fn(x.len(), |i, _| {
            let z = x[i];
            if z.norm() > 0.0 {
                z / z.norm()
            } else {
                let a = anchor[i];
                if a.norm() > 0.0 {
                    a / a.norm()
                } else {
                    C64::new(1.0, 0.0)
                }
            }
        })
    }
}

fn min_sinr_margin_db(ch: &ChannelSet, w: &Precoder, phi: &ReflectVector, sc: &Scenario) -> Option<f64> {
    (0..ch.k())
        .map(|k| model::sinr(k, ch, w, phi, sc) / sc.sinr_targets[k])
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))))
        .map(linear_to_db)
}

/// Which constraint families make the first relaxation infeasible: each family is dropped in
/// turn and the relaxation re-solved.
pub fn diagnose_infeasibility(
    ch: &ChannelSet,
    phi: &ReflectVector,
    sc: &Scenario,
    backend: &dyn ConicBackend,
    tol: f64,
) -> Vec<String> {
    let em = model::echo_model(ch, phi, sc);
    let consts = precoder_constants(ch, phi, sc);
    let cases = [
        ("sinr", SdrFamilies { sinr: false, ..SdrFamilies::default() }),
        ("ris_power", SdrFamilies { ris_power: false, ..SdrFamilies::default() }),
        ("bs_power", SdrFamilies { bs_power: false, ..SdrFamilies::default() }),
    ];
    cases
        .iter()
        .filter(|(_, fam)| {
            matches!(
                solve_w_sdr(&em, &consts, sc, *fam, backend, tol).map(|(_, s)| s.status),
                Ok(ConicStatus::Optimal | ConicStatus::Unbounded)
            )
        })
        .map(|(name, _)| name.to_string())
        .collect()
}

enum WStep {
    Ok(Precoder),
    Failed(String),
}

fn w_step(ch: &ChannelSet, phi: &ReflectVector, sc: &Scenario, backend: &dyn ConicBackend, tol: f64) -> Result<WStep> {
    let em = model::echo_model(ch, phi, sc);
    let consts = precoder_constants(ch, phi, sc);
    let (sdr, sol) = match solve_w_sdr(&em, &consts, sc, SdrFamilies::default(), backend, tol) {
        Ok(x) => x,
        Err(Error::InfeasibleConfig(m)) => return Ok(WStep::Failed(m)),
        Err(e) => return Err(e),
    };
    if !sol.is_optimal() {
        return Ok(WStep::Failed(format!("transmit relaxation {:?}: {}", sol.status, sol.detail)));
    }
    match recover_w(&sdr.lifted(&sol), &consts) {
        Ok(w) => Ok(WStep::Ok(w)),
        Err(e @ Error::RankRecovery { .. }) => Ok(WStep::Failed(e.to_string())),
        Err(e) => Err(e),
    }
}

fn infeasible(ch: &ChannelSet, phi: ReflectVector, diagnostics: Vec<String>) -> DesignResult {
    DesignResult {
        w: Precoder::zeros(ch.n(), ch.k()),
        phi,
        crb_theta: f64::NAN,
        g: f64::NAN,
        trace: BcdTrace::default(),
        status: DesignStatus::Infeasible,
        diagnostics,
    }
}

fn bcd_core(
    sc: &Scenario,
    ch: &ChannelSet,
    opts: &BcdOptions,
    projection: Option<Projection<'_>>,
    phi_init: ReflectVector,
) -> Result<DesignResult> {
    let backend = ClarabelBackend::default();
    let mut phi = phi_init;
    let mut diagnostics = Vec::new();

    // First transmit step, with amplitude back-off when only the RIS budget is in the way.
    let mut halvings = 0;
    let mut w = loop {
        match w_step(ch, &phi, sc, &backend, opts.solver_tol)? {
            WStep::Ok(w) => break w,
            WStep::Failed(reason) => {
                let binding = diagnose_infeasibility(ch, &phi, sc, &backend, opts.solver_tol);
                log::info!("first transmit step failed ({reason}); relaxing one family at a time makes {binding:?} feasible");
                if binding.iter().any(|b| b == "ris_power") && halvings < opts.max_amplitude_halvings && projection.is_none() {
                    halvings += 1;
                    phi = ReflectVector::new(phi.phi.scale(0.5));
                    continue;
                }
                diagnostics.push(reason);
                diagnostics.extend(binding.into_iter().map(|b| format!("binding: {b}")));
                return Ok(infeasible(ch, phi, diagnostics));
            }
        }
    };
    if halvings > 0 {
        diagnostics.push(format!("initial amplitude halved {halvings} time(s) to meet the RIS budget"));
    }

    let alpha_sq = sc.rcs_var;
    let mut trace = BcdTrace::default();
    let mut g_prev = f64::NAN;
    let mut status = DesignStatus::MaxIter;
    for it in 1..=opts.max_outer {
        let start = Instant::now();
        let mut w_accepted = true;
        if it > 1 {
            match w_step(ch, &phi, sc, &backend, opts.solver_tol)? {
                WStep::Ok(w_new) => {
                    let g_new = crb::g_trace(&model::echo_model(ch, &phi, sc), &w_new)?;
                    if g_new >= g_prev {
                        w = w_new;
                    } else {
                        w_accepted = false;
                    }
                }
                WStep::Failed(reason) => {
                    log::warn!("transmit step failed at outer iteration {it}: {reason}");
                    diagnostics.push(format!("iteration {it}: {reason}"));
                    w_accepted = false;
                }
            }
        }
        let inner = optimize_phi(ch, sc, &w, &phi, &opts.phi, &backend, projection)?;
        phi = inner.phi;
        let g = inner.g;
        let crb_rad2 = crb::crb_from_g(g, sc, alpha_sq).unwrap_or(f64::INFINITY);
        trace.records.push(OuterRecord {
            iteration: it,
            g,
            crb_rad2,
            crb_db: crb::crb_db(crb_rad2),
            min_sinr_margin_db: min_sinr_margin_db(ch, &w, &phi, sc),
            bs_power_w: w.power(),
            ris_power_w: model::ris_power(ch, &w, &phi, sc),
            inner_iterations: inner.iterations,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            w_accepted,
        });
        log::debug!("outer {it}: g = {g:e}, CRB = {:.3} dB", crb::crb_db(crb_rad2));
        if it > 1 && (g - g_prev).abs() <= opts.tol * g_prev.abs() {
            status = DesignStatus::Converged;
            g_prev = g;
            break;
        }
        g_prev = g;
    }
    let crb_theta = crb::crb_from_g(g_prev, sc, alpha_sq).unwrap_or(f64::INFINITY);
    Ok(DesignResult { w, phi, crb_theta, g: g_prev, trace, status, diagnostics })
}

fn rcg_phases(ch: &ChannelSet, opts: &BcdOptions) -> CVec {
    rcg_solve(&build_init_problem(ch), opts.rcg_max_iter, opts.rcg_tol).psi
}

/// Active-RIS ISAC design.
pub fn run_bcd(sc: &Scenario, ch: &ChannelSet, opts: &BcdOptions) -> Result<DesignResult> {
    sc.validate()?;
    check_dims(sc, ch)?;
    let psi = rcg_phases(ch, opts);
    let a = feasible_amplitude(sc)?;
    if a < sc.a_max {
        log::info!("initial amplitude lowered from {} to {a:.4} to respect the RIS budget", sc.a_max);
    }
    bcd_core(sc, ch, opts, None, initial_phi(&psi, a))
}

/// Passive-RIS ISAC baseline: unit-modulus reflection, no amplification noise, and the RIS
/// budget moved to the BS.
pub fn run_passive_baseline(sc: &Scenario, ch: &ChannelSet, opts: &BcdOptions) -> Result<DesignResult> {
    sc.validate()?;
    check_dims(sc, ch)?;
    let passive = passive_scenario(sc);
    let psi = rcg_phases(ch, opts);
    let anchor = psi.clone();
    let proj = unit_projection(&anchor);
    bcd_core(&passive, ch, opts, Some(&proj), initial_phi(&psi, 1.0))
}

/// The scenario solved by the passive baseline. It does not pass [`Scenario::validate`] since
/// the amplification noise is zero.
pub fn passive_scenario(sc: &Scenario) -> Scenario {
    Scenario { p_bs: sc.p_bs + sc.p_ris, p_ris: f64::INFINITY, noise_ris: 0.0, a_max: 1.0, ..sc.clone() }
}

/// Active-RIS sensing-only design: every user and SINR constraint removed.
pub fn run_radar_only(sc: &Scenario, ch: &ChannelSet, opts: &BcdOptions) -> Result<DesignResult> {
    let sc0 = sc.clone().with_users(0);
    run_bcd(&sc0, &ch.without_users(), opts)
}

fn check_dims(sc: &Scenario, ch: &ChannelSet) -> Result<()> {
    if ch.n() != sc.n_antennas || ch.m() != sc.m_elements || ch.k() != sc.k_users {
        return Err(Error::InvalidArgument(format!(
            "channels are {}×{} with {} users, scenario expects N = {}, M = {}, K = {}",
            ch.m(),
            ch.n(),
            ch.k(),
            sc.n_antennas,
            sc.m_elements,
            sc.k_users
        )));
    }
    Ok(())
}

/// Identity of one design run in line-delimited logs.
#[derive(Debug, Clone, Serialize)]
pub struct RunTag {
    pub variant: &'static str,
    pub seed: u64,
}

/// Writes one JSON line per outer iteration, each carrying the fields of `tag` (a struct).
pub fn write_trace_jsonl<W: Write, T: Serialize>(out: &mut W, tag: &T, trace: &BcdTrace) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a, T> {
        #[serde(flatten)]
        tag: &'a T,
        #[serde(flatten)]
        record: &'a OuterRecord,
    }
    for r in &trace.records {
        serde_json::to_writer(&mut *out, &Line { tag, record: r })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::synthesize_channels;

    fn small(seed: u64) -> (Scenario, ChannelSet) {
        let sc = Scenario { n_antennas: 4, m_elements: 4, ..Scenario::desk() }.with_seed(seed);
        let ch = synthesize_channels(&sc).unwrap();
        (sc, ch)
    }

    #[test]
    fn single_outer_iteration() {
        let (sc, ch) = small(1);
        let opts = BcdOptions { max_outer: 1, ..BcdOptions::default() };
        let r = run_bcd(&sc, &ch, &opts).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.status, DesignStatus::MaxIter);
        assert!(constraint_report(&ch, &r.w, &r.phi, &sc).satisfied(1e-6));
    }

    #[test]
    fn no_users_is_radar_only() {
        let (sc, ch) = small(2);
        let sc0 = sc.clone().with_users(0);
        let r = run_bcd(&sc0, &ch.without_users(), &BcdOptions::default()).unwrap();
        let g = r.trace.g_values();
        assert!(g.windows(2).all(|p| p[1] >= p[0] - 1e-6 * p[0].abs()));
        assert!(r.trace.records.iter().all(|x| x.min_sinr_margin_db.is_none()));
    }

    #[test]
    fn passive_keeps_unit_modulus() {
        let (sc, ch) = small(3);
        let r = run_passive_baseline(&sc, &ch, &BcdOptions { max_outer: 3, ..BcdOptions::default() }).unwrap();
        assert!(r.phi.phi.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-6));
        let psc = passive_scenario(&sc);
        assert!(constraint_report(&ch, &r.w, &r.phi, &psc).satisfied(1e-6));
    }

    #[test]
    fn unreachable_target_reports_infeasible() {
        let (sc, ch) = small(4);
        let sc = sc.with_common_sinr(1e9);
        let r = run_bcd(&sc, &ch, &BcdOptions::default()).unwrap();
        assert_eq!(r.status, DesignStatus::Infeasible);
        assert!(r.diagnostics.iter().any(|d| d == "binding: sinr"), "{:?}", r.diagnostics);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("active".parse::<Variant>().is_err());
    }

    #[test]
    fn jsonl_has_one_line_per_record() {
        let (sc, ch) = small(5);
        let r = run_bcd(&sc, &ch, &BcdOptions { max_outer: 2, ..BcdOptions::default() }).unwrap();
        let mut buf = Vec::new();
        write_trace_jsonl(&mut buf, &RunTag { variant: Variant::ArisIsac.name(), seed: 5 }, &r.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), r.trace.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["variant"], "aris-isac");
        assert!(first["g"].as_f64().unwrap() > 0.0);
    }
}

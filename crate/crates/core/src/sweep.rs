//! Seeded parameter sweeps: one design run per (variant, value, seed), executed on a bounded
//! worker pool and written as a raw CSV, a median CSV, and line-delimited traces.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::config::{self, parse_toml, scenario_from};
use crate::driver::{write_trace_jsonl, BcdOptions, BcdTrace, Variant};
use crate::error::{Error, Result};
use crate::scenario::{db_to_linear, dbm_to_watt, synthesize_channels, Scenario};

/// Column order of the raw CSV.
pub const RAW_COLUMNS: [&str; 12] = [
    "variant", "param", "value", "seed", "crb_rad2", "crb_db", "min_sinr_db", "bs_power_w", "ris_power_w",
    "outer_iters", "wall_ms", "status",
];

/// Column order of the median CSV.
pub const MEDIAN_COLUMNS: [&str; 11] = [
    "variant", "param", "value", "runs", "ok_runs", "crb_rad2", "crb_db", "min_sinr_db", "bs_power_w",
    "ris_power_w", "outer_iters",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepParam {
    /// BS budget in dBm.
    PBs,
    /// Common SINR target in dB.
    Gamma,
    MElements,
    NAntennas,
    KUsers,
    /// RIS x coordinate in meters.
    RisXPosition,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::PBs,
        SweepParam::Gamma,
        SweepParam::MElements,
        SweepParam::NAntennas,
        SweepParam::KUsers,
        SweepParam::RisXPosition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PBs => "p_bs",
            SweepParam::Gamma => "gamma",
            SweepParam::MElements => "m_elements",
            SweepParam::NAntennas => "n_antennas",
            SweepParam::KUsers => "k_users",
            SweepParam::RisXPosition => "ris_x_position",
        }
    }

    /// `base` with the parameter set to `value`, given in the CSV unit of the parameter.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        let count = |min: usize| -> Result<usize> {
            if value.fract() == 0.0 && value >= min as f64 && value.is_finite() {
                Ok(value as usize)
            } else {
                Err(Error::InvalidArgument(format!("{} needs an integer ≥ {min}, got {value}", self.name())))
            }
        };
        let mut sc = base.clone();
        match self {
            SweepParam::PBs => sc.p_bs = dbm_to_watt(value),
            SweepParam::Gamma => sc = sc.with_common_sinr(db_to_linear(value)),
            SweepParam::MElements => sc.m_elements = count(1)?,
            SweepParam::NAntennas => sc.n_antennas = count(1)?,
            SweepParam::KUsers => sc = sc.with_users(count(0)?),
            SweepParam::RisXPosition => sc.geometry.ris[0] = value,
        }
        Ok(sc)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
            Error::InvalidArgument(format!("unknown sweep parameter `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub out: Option<PathBuf>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.values.is_empty() {
            v.push("sweep needs at least one value".to_string());
        }
        if self.seeds.is_empty() {
            v.push("sweep needs at least one seed".to_string());
        }
        if self.variants.is_empty() {
            v.push("sweep needs at least one variant".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Runs in output order: value, then seed, then variant.
    pub fn jobs(&self) -> Vec<(Variant, f64, u64)> {
        let mut out = Vec::new();
        for &value in &self.values {
            for &seed in &self.seeds {
                for &variant in &self.variants {
                    out.push((variant, value, seed));
                }
            }
        }
        out
    }
}

/// Parses a sweep file: a `[sweep]` table (`param`, `values`, optional `seeds`, `variants`, `out`)
/// and an optional `[scenario]` table with the keys of a scenario file.
pub fn parse_sweep(src: &str) -> Result<(SweepSpec, Scenario)> {
    let table = parse_toml(src)?;
    let mut issues = Vec::new();
    for key in table.keys() {
        if key != "sweep" && key != "scenario" {
            issues.push(format!("key `{key}`: unknown key (expected [sweep] and [scenario])"));
        }
    }
    let empty = toml::Table::new();
    let scenario_table = match table.get("scenario") {
        Some(Value::Table(t)) => t,
        Some(_) => {
            issues.push("key `scenario`: expected a table".into());
            &empty
        }
        None => &empty,
    };
    let (base, scenario_issues) = scenario_from(src, scenario_table, "scenario");
    issues.extend(scenario_issues);

    let mut spec = SweepSpec { param: SweepParam::PBs, values: vec![], seeds: vec![0], variants: Variant::ALL.to_vec(), out: None };
    match table.get("sweep") {
        Some(Value::Table(s)) => {
            for key in s.keys() {
                if !["param", "values", "seeds", "variants", "out"].contains(&key.as_str()) {
                    issues.push(format!("key `sweep.{key}`: unknown key"));
                }
            }
            match s.get("param").and_then(|v| v.as_str()).map(SweepParam::from_str) {
                Some(Ok(p)) => spec.param = p,
                Some(Err(e)) => issues.push(format!("key `sweep.param`: {e}")),
                None => issues.push("key `sweep.param`: missing or not a string".into()),
            }
            match s.get("values") {
                Some(Value::Array(a)) => {
                    let vals: Option<Vec<f64>> = a
                        .iter()
                        .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                        .collect();
                    match vals {
                        Some(v) => spec.values = v,
                        None => issues.push("key `sweep.values`: expected an array of numbers".into()),
                    }
                }
                _ => issues.push("key `sweep.values`: missing or not an array".into()),
            }
            if let Some(v) = s.get("seeds") {
                match v.as_array().and_then(|a| a.iter().map(|x| x.as_integer().filter(|i| *i >= 0).map(|i| i as u64)).collect()) {
                    Some(seeds) => spec.seeds = seeds,
                    None => issues.push("key `sweep.seeds`: expected an array of non-negative integers".into()),
                }
            }
            if let Some(v) = s.get("variants") {
                match v.as_array().map(|a| a.iter().map(|x| x.as_str().unwrap_or("").parse::<Variant>()).collect::<Result<Vec<_>>>()) {
                    Some(Ok(vs)) => spec.variants = vs,
                    Some(Err(e)) => issues.push(format!("key `sweep.variants`: {e}")),
                    None => issues.push("key `sweep.variants`: expected an array of names".into()),
                }
            }
            if let Some(v) = s.get("out") {
                match v.as_str() {
                    Some(p) => spec.out = Some(PathBuf::from(p)),
                    None => issues.push("key `sweep.out`: expected a path".into()),
                }
            }
        }
        _ => issues.push("missing [sweep] table".into()),
    }
    if issues.is_empty() {
        if let Err(Error::Config(v)) = spec.validate() {
            issues.extend(v);
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    for w in config::scenario_warnings(&base) {
        log::warn!("{w}");
    }
    Ok((spec, base))
}

/// One line of the raw CSV. Missing numbers are written as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub crb_rad2: Option<f64>,
    pub crb_db: Option<f64>,
    pub min_sinr_db: Option<f64>,
    pub bs_power_w: Option<f64>,
    pub ris_power_w: Option<f64>,
    pub outer_iters: Option<usize>,
    pub wall_ms: f64,
    pub status: String,
}

impl SweepRow {
    /// Runs whose numbers enter the medians.
    pub fn succeeded(&self) -> bool {
        self.status == "converged" || self.status == "max-iter"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub variant: String,
    pub param: String,
    pub value: f64,
    pub runs: usize,
    pub ok_runs: usize,
    pub crb_rad2: Option<f64>,
    pub crb_db: Option<f64>,
    pub min_sinr_db: Option<f64>,
    pub bs_power_w: Option<f64>,
    pub ris_power_w: Option<f64>,
    pub outer_iters: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct SweepTag<'a> {
    variant: &'a str,
    param: &'a str,
    value: f64,
    seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Trace of every run that produced one, aligned with `rows`.
    pub traces: Vec<Option<BcdTrace>>,
}

/// `param` name used for runs that do not sweep anything.
pub const NO_PARAM: &str = "none";

fn run_one(base: &Scenario, param: Option<SweepParam>, variant: Variant, value: f64, seed: u64, opts: &BcdOptions) -> (SweepRow, Option<BcdTrace>) {
    let start = Instant::now();
    let mut row = SweepRow {
        variant: variant.name().into(),
        param: param.map_or(NO_PARAM, |p| p.name()).into(),
        value,
        seed,
        crb_rad2: None,
        crb_db: None,
        min_sinr_db: None,
        bs_power_w: None,
        ris_power_w: None,
        outer_iters: None,
        wall_ms: 0.0,
        status: String::new(),
    };
    let seeded = base.clone().with_seed(seed);
    let result = param
        .map_or(Ok(seeded.clone()), |p| p.apply(&seeded, value))
        .and_then(|sc| synthesize_channels(&sc).map(|ch| (sc, ch)))
        .and_then(|(sc, ch)| variant.run(&sc, &ch, opts));
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(r) => {
            row.status = r.status.to_string();
            row.outer_iters = Some(r.trace.len());
            if let Some(last) = r.trace.records.last() {
                row.min_sinr_db = last.min_sinr_margin_db;
                row.bs_power_w = Some(last.bs_power_w);
                row.ris_power_w = Some(last.ris_power_w);
            }
            if r.crb_theta.is_finite() {
                row.crb_rad2 = Some(r.crb_theta);
                row.crb_db = Some(crate::crb::crb_db(r.crb_theta));
            }
            (row, Some(r.trace))
        }
        Err(e) => {
            row.status = format!("error: {e}");
            (row, None)
        }
    }
}

fn run_jobs(base: &Scenario, param: Option<SweepParam>, list: &[(Variant, f64, u64)], opts: &BcdOptions, jobs: usize) -> Result<SweepOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<(SweepRow, Option<BcdTrace>)> = pool.install(|| {
        list.par_iter()
            .map(|&(variant, value, seed)| {
                let out = run_one(base, param, variant, value, seed, opts);
                log::info!("{variant} {}={value} seed {seed}: {}", out.0.param, out.0.status);
                out
            })
            .collect()
    });
    let (rows, traces) = results.into_iter().unzip();
    Ok(SweepOutcome { rows, traces })
}

/// Runs every job of `spec` on a pool of `jobs` workers. Per-run failures end up in the status
/// column; only a pool construction failure is an error.
pub fn run_sweep(spec: &SweepSpec, base: &Scenario, opts: &BcdOptions, jobs: usize) -> Result<SweepOutcome> {
    spec.validate()?;
    run_jobs(base, Some(spec.param), &spec.jobs(), opts, jobs)
}

/// Runs `base` as is for every seed and variant; rows carry `param = "none"` and `value = 0`.
pub fn run_plain(base: &Scenario, seeds: &[u64], variants: &[Variant], opts: &BcdOptions, jobs: usize) -> Result<SweepOutcome> {
    let list: Vec<_> = seeds.iter().flat_map(|&s| variants.iter().map(move |&v| (v, 0.0, s))).collect();
    run_jobs(base, None, &list, opts, jobs)
}

/// Median of the middle element, or the mean of the two middle elements.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Per (variant, value) medians over the successful seeds, in first-appearance order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<MedianRow> {
    let mut order: Vec<(String, String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, String, u64), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.variant.clone(), r.param.clone(), r.value.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ok: Vec<&&SweepRow> = g.iter().filter(|r| r.succeeded()).collect();
            let col = |f: &dyn Fn(&SweepRow) -> Option<f64>| {
                let mut v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                median(&mut v)
            };
            MedianRow {
                variant: key.0.clone(),
                param: key.1.clone(),
                value: f64::from_bits(key.2),
                runs: g.len(),
                ok_runs: ok.len(),
                crb_rad2: col(&|r| r.crb_rad2),
                crb_db: col(&|r| r.crb_db),
                min_sinr_db: col(&|r| r.min_sinr_db),
                bs_power_w: col(&|r| r.bs_power_w),
                ris_power_w: col(&|r| r.ris_power_w),
                outer_iters: col(&|r| r.outer_iters.map(|x| x as f64)),
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(columns)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_raw_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, &RAW_COLUMNS, rows)
}

pub fn write_median_csv(path: &Path, rows: &[MedianRow]) -> Result<()> {
    write_rows(path, &MEDIAN_COLUMNS, rows)
}

pub fn read_raw_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// File names written by [`write_outputs`].
pub const RAW_FILE: &str = "results.csv";
pub const MEDIAN_FILE: &str = "results_median.csv";
pub const TRACE_FILE: &str = "runs.jsonl";

/// Writes the raw CSV, the median CSV and the trace log into `dir`.
pub fn write_outputs(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_raw_csv(&dir.join(RAW_FILE), &outcome.rows)?;
    write_median_csv(&dir.join(MEDIAN_FILE), &aggregate(&outcome.rows))?;
    let mut log = BufWriter::new(File::create(dir.join(TRACE_FILE))?);
    for (row, trace) in outcome.rows.iter().zip(&outcome.traces) {
        if let Some(t) = trace {
            let tag = SweepTag { variant: &row.variant, param: &row.param, value: row.value, seed: row.seed };
            write_trace_jsonl(&mut log, &tag, t)?;
        }
    }
    log.flush()?;
    Ok(())
}

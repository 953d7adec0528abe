//! TOML scenario files.
//!
//! Every key is optional; missing keys keep the preset's value (`preset = "paper"` by default,
//! or `"desk"`). Powers take a unit (`"23 dBm"`, `"0.2 W"`, `"5 mW"`, `"-7 dBW"`) or a bare
//! number in watts. Ratios take `"16 dB"`, a bare linear number, or `"inf"`. Angles take
//! `"45 deg"`, `"0.7 rad"` or a bare number in radians.
//!
//! ```toml
//! preset = "desk"
//! p_bs = "27 dBm"
//! sinr_target = "16 dB"
//!
//! [geometry]
//! ris = [0.0, 50.0]
//! ```

use std::path::Path;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::scenario::{db_to_linear, dbm_to_watt, Point, Scenario};

/// A parsed scenario together with non-fatal observations about it.
#[derive(Debug, Clone)]
pub struct ConfigReport {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
}

/// Where a key sits in the source, for messages.
struct Locator<'a> {
    src: &'a str,
}

impl Locator<'_> {
    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (n, line) in self.src.lines().enumerate() {
            let t = line.trim();
            if let Some(h) = t.strip_prefix('[') {
                current = h.trim_end_matches(']').trim().to_string();
                continue;
            }
            if current == section {
                if let Some(rest) = t.strip_prefix(key) {
                    if rest.trim_start().starts_with('=') {
                        return Some(n + 1);
                    }
                }
            }
        }
        None
    }

    fn at(&self, section: &str, key: &str) -> String {
        let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        match self.line_of(section, key) {
            Some(n) => format!("line {n}, key `{full}`"),
            None => format!("key `{full}`"),
        }
    }
}

fn split_unit(s: &str) -> (&str, &str) {
    let s = s.trim();
    let end = s
        .char_indices()
        .find(|&(i, ch)| !(ch.is_ascii_digit() || ch == '.' || ch == '-' || ch == '+' || ((ch == 'e' || ch == 'E') && i > 0)))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    (s[..end].trim(), s[end..].trim())
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

/// Power in watts.
pub fn parse_power(v: &Value) -> std::result::Result<f64, String> {
    if let Some(x) = number(v) {
        return Ok(x);
    }
    let Value::String(s) = v else {
        return Err("expected a power such as \"23 dBm\" or a number in watts".into());
    };
    let (num, unit) = split_unit(s);
    let x: f64 = num.parse().map_err(|_| format!("cannot read a number from \"{s}\""))?;
    match unit.to_ascii_lowercase().as_str() {
        "dbm" => Ok(dbm_to_watt(x)),
        "dbw" => Ok(db_to_linear(x)),
        "w" | "" => Ok(x),
        "mw" => Ok(x * 1e-3),
        _ => Err(format!("unknown power unit \"{unit}\" (use dBm, dBW, W or mW)")),
    }
}

/// Dimensionless ratio, linear.
pub fn parse_ratio(v: &Value) -> std::result::Result<f64, String> {
    if let Some(x) = number(v) {
        return Ok(x);
    }
    let Value::String(s) = v else {
        return Err("expected a ratio such as \"16 dB\" or a linear number".into());
    };
    if matches!(s.trim().to_ascii_lowercase().as_str(), "inf" | "infinity") {
        return Ok(f64::INFINITY);
    }
    let (num, unit) = split_unit(s);
    let x: f64 = num.parse().map_err(|_| format!("cannot read a number from \"{s}\""))?;
    match unit.to_ascii_lowercase().as_str() {
        "db" => Ok(db_to_linear(x)),
        "" => Ok(x),
        _ => Err(format!("unknown ratio unit \"{unit}\" (use dB or a plain number)")),
    }
}

/// Angle in radians.
pub fn parse_angle(v: &Value) -> std::result::Result<f64, String> {
    if let Some(x) = number(v) {
        return Ok(x);
    }
    let Value::String(s) = v else {
        return Err("expected an angle such as \"45 deg\" or a number in radians".into());
    };
    let (num, unit) = split_unit(s);
    let x: f64 = num.parse().map_err(|_| format!("cannot read a number from \"{s}\""))?;
    match unit {
        "deg" | "°" => Ok(x.to_radians()),
        "rad" | "" => Ok(x),
        _ => Err(format!("unknown angle unit \"{unit}\" (use deg or rad)")),
    }
}

fn parse_count(v: &Value) -> std::result::Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err("expected a non-negative integer".into()),
    }
}

fn parse_real(v: &Value) -> std::result::Result<f64, String> {
    number(v).ok_or_else(|| "expected a number".into())
}

fn parse_point(v: &Value) -> std::result::Result<Point, String> {
    match v {
        Value::Array(a) if a.len() == 2 => match (number(&a[0]), number(&a[1])) {
            (Some(x), Some(y)) => Ok([x, y]),
            _ => Err("expected two numbers [x, y] in meters".into()),
        },
        _ => Err("expected a point [x, y] in meters".into()),
    }
}

/// Collects issues while filling a scenario from a table.
struct Filler<'a> {
    loc: Locator<'a>,
    issues: Vec<String>,
}

impl Filler<'_> {
    fn take<T>(
        &mut self,
        table: &Table,
        section: &str,
        key: &str,
        parse: impl Fn(&Value) -> std::result::Result<T, String>,
        mut store: impl FnMut(T),
    ) {
        if let Some(v) = table.get(key) {
            match parse(v) {
                Ok(x) => store(x),
                Err(e) => self.issues.push(format!("{}: {e}", self.loc.at(section, key))),
            }
        }
    }

    fn unknown_keys(&mut self, table: &Table, section: &str, known: &[&str]) {
        for key in table.keys() {
            if !known.contains(&key.as_str()) {
                self.issues.push(format!("{}: unknown key", self.loc.at(section, key)));
            }
        }
    }

    fn subtable<'t>(&mut self, table: &'t Table, section: &str, key: &str) -> Option<&'t Table> {
        match table.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.issues.push(format!("{}: expected a table", self.loc.at(section, key)));
                None
            }
        }
    }

    fn scenario(&mut self, table: &Table, section: &str) -> Scenario {
        const KNOWN: &[&str] = &[
            "preset", "n_antennas", "m_elements", "k_users", "n_samples", "p_bs", "p_ris", "a_max",
            "sinr_target", "sinr_targets", "noise", "noise_user", "noise_ris", "noise_bs", "rcs_var",
            "theta", "rician_k", "pathloss_ref", "pathloss_ref_distance", "seed", "geometry",
            "pathloss_exponents",
        ];
        self.unknown_keys(table, section, KNOWN);

        let mut sc = Scenario::default();
        self.take(
            table,
            section,
            "preset",
            |v| match v.as_str() {
                Some("paper") => Ok(Scenario::default()),
                Some("desk") => Ok(Scenario::desk()),
                _ => Err("expected \"paper\" or \"desk\"".to_string()),
            },
            |p| sc = p,
        );
        self.take(table, section, "n_antennas", parse_count, |x| sc.n_antennas = x);
        self.take(table, section, "m_elements", parse_count, |x| sc.m_elements = x);
        self.take(table, section, "n_samples", parse_count, |x| sc.n_samples = x);
        let mut k_users = None;
        self.take(table, section, "k_users", parse_count, |x| k_users = Some(x));
        if let Some(k) = k_users {
            sc = sc.with_users(k);
        }
        self.take(table, section, "p_bs", parse_power, |x| sc.p_bs = x);
        self.take(table, section, "p_ris", parse_power, |x| sc.p_ris = x);
        self.take(table, section, "a_max", parse_real, |x| sc.a_max = x);
        self.take(table, section, "sinr_target", parse_ratio, |x| sc.sinr_targets = vec![x; sc.k_users]);
        self.take(
            table,
            section,
            "sinr_targets",
            |v| match v {
                Value::Array(a) => a.iter().map(parse_ratio).collect(),
                _ => Err("expected an array of ratios".to_string()),
            },
            |x| sc.sinr_targets = x,
        );
        self.take(table, section, "noise", parse_power, |x| {
            sc.noise_user = x;
            sc.noise_ris = x;
            sc.noise_bs = x;
        });
        self.take(table, section, "noise_user", parse_power, |x| sc.noise_user = x);
        self.take(table, section, "noise_ris", parse_power, |x| sc.noise_ris = x);
        self.take(table, section, "noise_bs", parse_power, |x| sc.noise_bs = x);
        self.take(table, section, "rcs_var", parse_real, |x| sc.rcs_var = x);
        self.take(table, section, "theta", parse_angle, |x| sc.theta = x);
        self.take(table, section, "rician_k", parse_ratio, |x| sc.rician_k = x);
        self.take(table, section, "pathloss_ref", parse_ratio, |x| sc.pathloss_ref = x);
        self.take(table, section, "pathloss_ref_distance", parse_real, |x| sc.pathloss_ref_distance = x);
        self.take(
            table,
            section,
            "seed",
            |v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err("expected a non-negative integer".to_string()),
            },
            |x| sc.seed = x,
        );

        let join = |sub: &str| if section.is_empty() { sub.to_string() } else { format!("{section}.{sub}") };
        if let Some(g) = self.subtable(table, section, "geometry") {
            let sec = join("geometry");
            self.unknown_keys(g, &sec, &["bs", "ris", "target", "user_center", "user_radius"]);
            let geo = &mut sc.geometry;
            self.take(g, &sec, "bs", parse_point, |x| geo.bs = x);
            self.take(g, &sec, "ris", parse_point, |x| geo.ris = x);
            self.take(g, &sec, "target", parse_point, |x| geo.target = x);
            self.take(g, &sec, "user_center", parse_point, |x| geo.user_center = x);
            self.take(g, &sec, "user_radius", parse_real, |x| geo.user_radius = x);
        }
        if let Some(e) = self.subtable(table, section, "pathloss_exponents") {
            let sec = join("pathloss_exponents");
            self.unknown_keys(e, &sec, &["bs_ris", "bs_user", "ris_user", "ris_target"]);
            let ex = &mut sc.pathloss_exponents;
            self.take(e, &sec, "bs_ris", parse_real, |x| ex.bs_ris = x);
            self.take(e, &sec, "bs_user", parse_real, |x| ex.bs_user = x);
            self.take(e, &sec, "ris_user", parse_real, |x| ex.ris_user = x);
            self.take(e, &sec, "ris_target", parse_real, |x| ex.ris_target = x);
        }
        sc
    }
}

fn parse_table(src: &str) -> Result<Table> {
    src.parse::<Table>().map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))
}

/// Warnings for a scenario that is valid but will not behave as intended.
pub fn scenario_warnings(sc: &Scenario) -> Vec<String> {
    let mut w = Vec::new();
    if let Ok(cr) = sc.static_ris_draw(sc.a_max) {
        if sc.p_ris <= cr {
            w.push(format!(
                "p_ris = {:e} W does not exceed the static RIS draw c_r = {cr:e} W at a_max = {}: \
                 amplification noise alone uses the whole budget, so the initial amplitude will be lowered",
                sc.p_ris, sc.a_max
            ));
        }
    }
    w
}

/// Builds a scenario from the table found at `section` (empty for the top level) of `src`,
/// reporting every parse problem and every violated invariant together.
pub(crate) fn scenario_from(src: &str, table: &Table, section: &str) -> (Scenario, Vec<String>) {
    let mut f = Filler { loc: Locator { src }, issues: Vec::new() };
    let sc = f.scenario(table, section);
    let mut issues = f.issues;
    if let Err(Error::InvalidScenario(v)) = sc.validate() {
        issues.extend(v);
    }
    (sc, issues)
}

/// Parses scenario TOML text.
pub fn parse_config(src: &str) -> Result<ConfigReport> {
    let table = parse_table(src)?;
    let (scenario, issues) = scenario_from(src, &table, "");
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let warnings = scenario_warnings(&scenario);
    Ok(ConfigReport { scenario, warnings })
}

pub fn load_config(path: &Path) -> Result<ConfigReport> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    parse_config(&src)
}

pub(crate) fn parse_toml(src: &str) -> Result<Table> {
    parse_table(src)
}

//! Scenario ingestion and result emission.
//!
//! Config files are flat `key = value` text (see the README for the schema);
//! unknown keys are errors and every parse failure names its line. Density
//! maps are plain-text grids standing in for rasterized population data.
//! All emitted CSV is byte-stable: fixed column order, LF line endings, and
//! 9-significant-digit floats, so reruns with the same seed diff clean.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::domain::{Grid, Prior, Space};
use crate::error::{Error, Result};
use crate::sim::{
    aggregate, run_trials_raw_with_prior, Defense, FlexSpec, OrderStat, PriorSpec, ScenarioConfig,
    SimulationResult,
};
use crate::adversary::InferenceMode;

/// 9-significant-digit float used in every CSV cell.
pub fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

// ---------------------------------------------------------------------------
// Density maps
// ---------------------------------------------------------------------------

/// Nonnegative weight grid (row-major, one row per y cell), normalized on
/// load. Stands in for user-supplied population rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    m: usize,
    weights: Vec<f64>,
}

impl DensityMap {
    pub fn parse(text: &str) -> Result<DensityMap> {
        let mut numbers: Vec<(usize, f64)> = Vec::new();
        let mut m: Option<usize> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if m.is_none() {
                let v: usize = line.parse().map_err(|_| {
                    Error::Config(format!("line {}: expected the grid size, got '{line}'", lineno + 1))
                })?;
                if v < 2 {
                    return Err(Error::Config(format!("line {}: grid size must be >= 2", lineno + 1)));
                }
                m = Some(v);
                continue;
            }
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::Config(format!("line {}: bad density value '{tok}'", lineno + 1))
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Config(format!(
                        "line {}: density values must be finite and nonnegative, got {v}",
                        lineno + 1
                    )));
                }
                numbers.push((lineno + 1, v));
            }
        }
        let m = m.ok_or_else(|| Error::Config("empty density map".into()))?;
        if numbers.len() != m * m {
            return Err(Error::Config(format!(
                "density map has {} values, expected {} ({m}x{m})",
                numbers.len(),
                m * m
            )));
        }
        let mut weights: Vec<f64> = numbers.into_iter().map(|(_, v)| v).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("density map has zero total mass".into()));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(DensityMap { m, weights })
    }

    pub fn load(path: &Path) -> Result<DensityMap> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DensityMap::parse(&text)
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_prior(&self, grid: &Grid) -> Result<Prior> {
        if grid.space() != Space::Plane {
            return Err(Error::Config("density maps describe 2D priors".into()));
        }
        if grid.resolution() != self.m {
            return Err(Error::Config(format!(
                "density map resolution {} does not match grid resolution {}",
                self.m,
                grid.resolution()
            )));
        }
        Prior::new(grid.clone(), self.weights.clone())
    }
}

// ---------------------------------------------------------------------------
// Time slots
// ---------------------------------------------------------------------------

/// Ordered (slot label, user count) pairs, one per line.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSlotSeries {
    pub slots: Vec<(String, u32)>,
}

impl TimeSlotSeries {
    pub fn parse(text: &str) -> Result<TimeSlotSeries> {
        let mut slots = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let label = parts.next().unwrap_or_default().to_string();
            let count: u32 = parts
                .next()
                .ok_or_else(|| {
                    Error::Config(format!("line {}: expected '<label> <count>'", lineno + 1))
                })?
                .parse()
                .map_err(|_| Error::Config(format!("line {}: bad user count", lineno + 1)))?;
            if count == 0 {
                return Err(Error::Config(format!("line {}: user counts must be positive", lineno + 1)));
            }
            if parts.next().is_some() {
                return Err(Error::Config(format!("line {}: trailing tokens", lineno + 1)));
            }
            slots.push((label, count));
        }
        if slots.is_empty() {
            return Err(Error::Config("time-slot series is empty".into()));
        }
        Ok(TimeSlotSeries { slots })
    }

    pub fn load(path: &Path) -> Result<TimeSlotSeries> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TimeSlotSeries::parse(&text)
    }
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

fn parse_num<T: std::str::FromStr>(key: &str, val: &str, lineno: usize) -> Result<T> {
    val.parse().map_err(|_| {
        Error::Config(format!("line {lineno}: bad value '{val}' for key '{key}'"))
    })
}

/// Parse a scenario from flat `key = value` text. Unknown keys are errors;
/// defaults fill everything a minimal config omits.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::defaults_1d();
    let mut q_list: Option<Vec<f64>> = None;
    let mut q_mu: Option<f64> = None;
    let mut q_sigma: Option<f64> = None;
    let mut seen: Vec<String> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, val)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {lineno}: expected 'key = value', got '{line}'")));
        };
        let key = key.trim().to_ascii_lowercase();
        let val = val.trim();
        if val.is_empty() {
            return Err(Error::Config(format!("line {lineno}: key '{key}' has no value")));
        }
        if seen.contains(&key) {
            return Err(Error::Config(format!("line {lineno}: duplicate key '{key}'")));
        }
        seen.push(key.clone());
        match key.as_str() {
            "dimension" => {
                cfg.space = match parse_num::<u8>(&key, val, lineno)? {
                    1 => Space::Line,
                    2 => Space::Plane,
                    other => {
                        return Err(Error::Config(format!(
                            "line {lineno}: dimension must be 1 or 2, got {other}"
                        )))
                    }
                };
            }
            "m" => cfg.m = parse_num(&key, val, lineno)?,
            "users" => cfg.users = parse_num(&key, val, lineno)?,
            "defense" => {
                cfg.defense = val
                    .parse::<Defense>()
                    .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
            }
            "inference" => {
                cfg.mode = match val {
                    "paper-mean" => InferenceMode::PaperMean,
                    "exact-bayes" => InferenceMode::ExactBayes,
                    other => {
                        return Err(Error::Config(format!(
                            "line {lineno}: unknown inference mode '{other}' (expected paper-mean | exact-bayes)"
                        )))
                    }
                };
            }
            "trials" => cfg.trials = parse_num(&key, val, lineno)?,
            "seed" => cfg.seed = parse_num(&key, val, lineno)?,
            "epsilon" => cfg.epsilon = parse_num(&key, val, lineno)?,
            "max_users" => cfg.max_users = parse_num(&key, val, lineno)?,
            "lp_cap" => cfg.lp_cap = parse_num(&key, val, lineno)?,
            "q" => {
                let list: Result<Vec<f64>> = val
                    .split_whitespace()
                    .map(|tok| parse_num::<f64>(&key, tok, lineno))
                    .collect();
                q_list = Some(list?);
            }
            "q_mu" => q_mu = Some(parse_num(&key, val, lineno)?),
            "q_sigma" => q_sigma = Some(parse_num(&key, val, lineno)?),
            "density" => cfg.prior = PriorSpec::DensityFile(val.to_string()),
            other => {
                return Err(Error::Config(format!("line {lineno}: unknown key '{other}'")));
            }
        }
    }

    match (q_list, q_mu, q_sigma) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(Error::Config(
                "config mixes a fixed flexibility list (q) with a distribution (q_mu/q_sigma)".into(),
            ));
        }
        (Some(list), None, None) => cfg.flex = FlexSpec::Fixed(list),
        (None, Some(mu), Some(sigma)) => cfg.flex = FlexSpec::TruncNormal { mu, sigma },
        (None, Some(_), None) | (None, None, Some(_)) => {
            return Err(Error::Config("q_mu and q_sigma must be given together".into()));
        }
        (None, None, None) => {}
    }

    if matches!(cfg.prior, PriorSpec::DensityFile(_)) && cfg.space != Space::Plane {
        return Err(Error::Config("density maps require dimension = 2".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical config echo; `parse_config(echo_config(c))` reproduces `c`.
pub fn echo_config(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dimension = {}", cfg.space.dimension());
    let _ = writeln!(out, "m = {}", cfg.m);
    let _ = writeln!(out, "users = {}", cfg.users);
    let _ = writeln!(out, "defense = {}", cfg.defense);
    let _ = writeln!(out, "inference = {}", cfg.mode);
    let _ = writeln!(out, "trials = {}", cfg.trials);
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "epsilon = {}", cfg.epsilon);
    match &cfg.flex {
        FlexSpec::Fixed(list) => {
            let joined: Vec<String> = list.iter().map(|q| format!("{q}")).collect();
            let _ = writeln!(out, "q = {}", joined.join(" "));
        }
        FlexSpec::TruncNormal { mu, sigma } => {
            let _ = writeln!(out, "q_mu = {mu}");
            let _ = writeln!(out, "q_sigma = {sigma}");
        }
    }
    if let PriorSpec::DensityFile(path) = &cfg.prior {
        let _ = writeln!(out, "density = {path}");
    }
    let _ = writeln!(out, "max_users = {}", cfg.max_users);
    let _ = writeln!(out, "lp_cap = {}", cfg.lp_cap);
    out
}

// ---------------------------------------------------------------------------
// Timeslot study
// ---------------------------------------------------------------------------

/// One 2D experiment per time slot, with the user count taken from the slot
/// series and locations drawn from the density map. Slots share the master
/// seed, so cross-slot comparisons are paired.
pub fn run_timeslot_study(
    density: &DensityMap,
    slots: &TimeSlotSeries,
    base: &ScenarioConfig,
    threads: usize,
) -> Result<Vec<(String, SimulationResult)>> {
    if base.space != Space::Plane {
        return Err(Error::Config("timeslot studies run on 2D scenarios".into()));
    }
    let grid = Grid::plane(base.m)?;
    let prior = Arc::new(density.to_prior(&grid)?);
    let mut out = Vec::with_capacity(slots.slots.len());
    for (label, count) in &slots.slots {
        let mut cfg = base.clone();
        cfg.users = *count as usize;
        if let FlexSpec::Fixed(list) = &cfg.flex {
            if list.len() != 1 && list.len() != cfg.users {
                return Err(Error::Config(format!(
                    "slot '{label}': flexibility list has {} entries for {} users",
                    list.len(),
                    cfg.users
                )));
            }
        }
        let raw = run_trials_raw_with_prior(&cfg, &prior, threads)?;
        out.push((label.clone(), aggregate(&cfg, &raw)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    std::fs::write(path, contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Per-order experiment table: one row per query position plus an `avg` row
/// per experiment.
pub fn simulation_csv(results: &[SimulationResult]) -> String {
    let mut out = String::from("defense,n,order_i,mean_pi,ci_half,trials,seed\n");
    for r in results {
        for (i, st) in r.per_order.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.defense,
                r.users,
                i + 1,
                fmt_sig9(st.mean),
                fmt_sig9(st.ci_half),
                r.trials,
                r.seed
            );
        }
        let _ = writeln!(
            out,
            "{},{},avg,{},{},{},{}",
            r.defense,
            r.users,
            fmt_sig9(r.average.mean),
            fmt_sig9(r.average.ci_half),
            r.trials,
            r.seed
        );
    }
    out
}

pub fn emit_simulation_csv(results: &[SimulationResult], path: &Path) -> Result<()> {
    write_file(path, &simulation_csv(results))
}

/// Permutation score table from an order search.
pub fn permutation_csv(table: &[(Vec<usize>, OrderStat)]) -> String {
    let mut out = String::from("perm,total_pi,ci_half\n");
    for (perm, stat) in table {
        let label: Vec<String> = perm.iter().map(|i| (i + 1).to_string()).collect();
        let _ = writeln!(out, "{},{},{}", label.join("-"), fmt_sig9(stat.mean), fmt_sig9(stat.ci_half));
    }
    out
}

pub fn emit_permutation_csv(table: &[(Vec<usize>, OrderStat)], path: &Path) -> Result<()> {
    write_file(path, &permutation_csv(table))
}

/// Per-slot summary table.
pub fn timeslot_csv(rows: &[(String, SimulationResult)]) -> String {
    let mut out = String::from("slot,defense,n,mean_pi,ci_half,trials,seed\n");
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            label,
            r.defense,
            r.users,
            fmt_sig9(r.average.mean),
            fmt_sig9(r.average.ci_half),
            r.trials,
            r.seed
        );
    }
    out
}

pub fn emit_timeslot_csv(rows: &[(String, SimulationResult)], path: &Path) -> Result<()> {
    write_file(path, &timeslot_csv(rows))
}

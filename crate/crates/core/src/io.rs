//! Cascade files (TOML), time-series and schedule CSVs, and result writers.
//!
//! Curves may be given inline or as `{ csv = "relative/path.csv" }`, a
//! two-column table with an `x,y` header. Series (`inflows`, `prices`, `load`)
//! are either inline tables keyed by entity id or `{ csv = "file.csv" }` in the
//! `entity_id,period,value` layout with 1-based periods.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compare::{Tier, TierRun};
use crate::domain::{CascadeSystem, GeneratingUnit, HydraulicArc, PhysicalConstants, Reservoir, TimeGrid};
use crate::formulation::{
    Discretization, ElevationMode, FidelityConfig, HeadLossMode, ObjectiveKind, ObjectiveSpec, PowerMode, TailraceMode,
    ZonesMode,
};
use crate::schedule::{ReservoirSchedule, Schedule, UnitSchedule};
use crate::simulate::SimulationReport;
use crate::solve::Solution;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{path}: at `{pointer}`: {message}")]
    Schema { path: PathBuf, pointer: String, message: String },
    #[error("file `{reference}` referenced at `{pointer}` not found (looked in {resolved})")]
    MissingReference { reference: String, pointer: String, resolved: PathBuf },
    #[error("{path}, line {line}: {message}")]
    Csv { path: PathBuf, line: usize, message: String },
    #[error("series {what}: {message}")]
    Series { what: String, message: String },
    #[error("invalid system: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// A time-series source: inline values keyed by entity id, or a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesSource {
    Csv { csv: String },
    Inline(BTreeMap<String, Vec<f64>>),
}

/// Fidelity section: a named tier, optionally overridden field by field.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elevation: Option<ElevationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_loss: Option<HeadLossMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tailrace: Option<TailraceMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<ZonesMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<Discretization>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    #[default]
    EnergyMax,
    RevenueMax,
    PeakShave,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    #[serde(default)]
    pub kind: ObjectiveName,
    #[serde(default)]
    pub startup_cost_enabled: bool,
}

/// On-disk layout of a cascade document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeFile {
    #[serde(default)]
    pub constants: PhysicalConstants,
    pub time_grid: TimeGrid,
    pub reservoirs: Vec<Reservoir>,
    #[serde(default)]
    pub units: Vec<GeneratingUnit>,
    #[serde(default)]
    pub arcs: Vec<HydraulicArc>,
    #[serde(default)]
    pub fidelity: FidelitySection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflows: Option<SeriesSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<SeriesSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<SeriesSource>,
}

/// Fully resolved contents of a cascade file.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub system: CascadeSystem,
    pub config: FidelityConfig,
    /// Local inflows `inflows[r][t-1]`, zero when the file has none.
    pub inflows: Vec<Vec<f64>>,
}

impl Loaded {
    pub fn objective(&self) -> &ObjectiveSpec {
        &self.config.objective
    }

    /// Same instance with the fidelity replaced by a named tier. Tiers without
    /// commitment variables cannot price startups, so those costs are dropped.
    pub fn config_for(&self, tier: Tier) -> FidelityConfig {
        let mut cfg = tier.config(self.config.objective.clone());
        if cfg.zones == ZonesMode::Convex && cfg.objective.startup_cost_enabled {
            log::warn!("{tier}: no commitment variables, startup costs ignored");
            cfg.objective.startup_cost_enabled = false;
        }
        cfg.discretization = self.config.discretization.clone();
        cfg
    }
}

const CURVE_KEYS: [&str; 3] = ["storage_to_elevation", "curve", "head_loss"];

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::Read { path: path.to_path_buf(), message: e.to_string() })
}

fn csv_ref(v: &toml::Value) -> Option<&str> {
    let t = v.as_table()?;
    if t.len() == 1 {
        t.get("csv")?.as_str()
    } else {
        None
    }
}

/// Replaces `{ csv = "..." }` curve references with inline tabulated curves
/// and rejects routing modes the model cannot represent.
fn resolve_references(value: &mut toml::Value, base: &Path, pointer: &str) -> Result<(), IoError> {
    match value {
        toml::Value::Table(table) => {
            if pointer.starts_with("arcs") {
                if let Some(kind) = table.get("mode").and_then(|m| m.get("kind")).and_then(|k| k.as_str()) {
                    if kind == "flow_dependent" {
                        return Err(IoError::Unsupported(format!(
                            "flow-dependent routing at `{pointer}` has no linear representation; use fixed_lag or convolution"
                        )));
                    }
                }
            }
            for (key, child) in table.iter_mut() {
                let child_ptr = if pointer.is_empty() { key.clone() } else { format!("{pointer}.{key}") };
                if CURVE_KEYS.contains(&key.as_str()) {
                    if let Some(reference) = csv_ref(child).map(str::to_string) {
                        let points = read_curve_csv(&base.join(&reference)).map_err(|e| match e {
                            IoError::Read { path, .. } => {
                                IoError::MissingReference { reference: reference.clone(), pointer: child_ptr.clone(), resolved: path }
                            }
                            other => other,
                        })?;
                        let mut t = toml::map::Map::new();
                        t.insert("kind".into(), toml::Value::String("tabulated".into()));
                        t.insert(
                            "points".into(),
                            toml::Value::Array(
                                points
                                    .into_iter()
                                    .map(|(x, y)| toml::Value::Array(vec![toml::Value::Float(x), toml::Value::Float(y)]))
                                    .collect(),
                            ),
                        );
                        *child = toml::Value::Table(t);
                        continue;
                    }
                }
                resolve_references(child, base, &child_ptr)?;
            }
        }
        toml::Value::Array(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                resolve_references(item, base, &format!("{pointer}[{i}]"))?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Reads a two-column `x,y` curve table.
pub fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>, IoError> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| IoError::Csv { path: path.to_path_buf(), line, message: e.to_string() })?;
        if rec.len() != 2 {
            return Err(IoError::Csv { path: path.to_path_buf(), line, message: format!("expected 2 columns, got {}", rec.len()) });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| IoError::Csv { path: path.to_path_buf(), line, message: format!("`{s}`: {e}") })
        };
        out.push((parse(&rec[0])?, parse(&rec[1])?));
    }
    if out.len() < 2 {
        return Err(IoError::Csv { path: path.to_path_buf(), line: 1, message: "curve needs at least 2 points".into() });
    }
    Ok(out)
}

/// Parses a cascade document from text. Relative references resolve against `base`.
pub fn parse_cascade_str(text: &str, path: &Path, base: &Path) -> Result<CascadeFile, IoError> {
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| IoError::Syntax { path: path.to_path_buf(), message: e.to_string() })?;
    resolve_references(&mut value, base, "")?;
    serde_path_to_error::deserialize(value).map_err(|e| IoError::Schema {
        path: path.to_path_buf(),
        pointer: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Reads an `entity_id,period,value` series for the given entities.
pub fn read_timeseries(path: &Path, entities: &[&str], n_periods: usize) -> Result<BTreeMap<String, Vec<f64>>, IoError> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| IoError::Csv { path: path.to_path_buf(), line: 1, message: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != ["entity_id", "period", "value"] {
        return Err(IoError::Csv {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header must be `entity_id,period,value`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut seen: BTreeMap<String, Vec<Option<f64>>> =
        entities.iter().map(|e| (e.to_string(), vec![None; n_periods])).collect();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let err = |message: String| IoError::Csv { path: path.to_path_buf(), line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 3 {
            return Err(err(format!("expected 3 columns, got {}", rec.len())));
        }
        let id = &rec[0];
        let period: usize = rec[1].parse().map_err(|_| err(format!("period `{}` is not a positive integer", &rec[1])))?;
        let value: f64 = rec[2].parse().map_err(|_| err(format!("value `{}` is not a number", &rec[2])))?;
        let slots = seen.get_mut(id).ok_or_else(|| err(format!("unknown entity `{id}`")))?;
        if period == 0 || period > n_periods {
            return Err(err(format!("period {period} outside 1..={n_periods}")));
        }
        if slots[period - 1].replace(value).is_some() {
            return Err(err(format!("duplicate entry for ({id}, {period})")));
        }
    }
    let mut out = BTreeMap::new();
    for (id, slots) in seen {
        let missing: Vec<usize> = slots.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(t, _)| t + 1).collect();
        if !missing.is_empty() {
            return Err(IoError::Series {
                what: path.display().to_string(),
                message: format!("entity `{id}` has no value for periods {missing:?}"),
            });
        }
        out.insert(id, slots.into_iter().map(|v| v.unwrap_or(0.0)).collect());
    }
    Ok(out)
}

/// Writes an `entity_id,period,value` series.
pub fn write_timeseries(path: &Path, series: &BTreeMap<String, Vec<f64>>) -> Result<(), IoError> {
    let mut out = String::from("entity_id,period,value\n");
    for (id, values) in series {
        for (t, v) in values.iter().enumerate() {
            out.push_str(&format!("{id},{},{v:?}\n", t + 1));
        }
    }
    write_text(path, &out)
}

fn resolve_series(
    source: &SeriesSource,
    what: &str,
    entities: &[&str],
    n_periods: usize,
    base: &Path,
) -> Result<BTreeMap<String, Vec<f64>>, IoError> {
    match source {
        SeriesSource::Csv { csv } => {
            let path = base.join(csv);
            if !path.exists() {
                return Err(IoError::MissingReference { reference: csv.clone(), pointer: what.into(), resolved: path });
            }
            read_timeseries(&path, entities, n_periods)
        }
        SeriesSource::Inline(map) => {
            for id in map.keys() {
                if !entities.contains(&id.as_str()) {
                    return Err(IoError::Series { what: what.into(), message: format!("unknown entity `{id}`") });
                }
            }
            let mut out = BTreeMap::new();
            for id in entities {
                let values = map
                    .get(*id)
                    .ok_or_else(|| IoError::Series { what: what.into(), message: format!("missing entity `{id}`") })?;
                if values.len() != n_periods {
                    return Err(IoError::Series {
                        what: what.into(),
                        message: format!("entity `{id}` has {} values, expected {n_periods}", values.len()),
                    });
                }
                out.insert(id.to_string(), values.clone());
            }
            Ok(out)
        }
    }
}

impl CascadeFile {
    pub fn system(&self) -> CascadeSystem {
        CascadeSystem {
            constants: self.constants,
            time_grid: self.time_grid,
            reservoirs: self.reservoirs.clone(),
            units: self.units.clone(),
            arcs: self.arcs.clone(),
        }
    }

    /// Validates the system and loads every referenced series.
    pub fn resolve(&self, base: &Path) -> Result<Loaded, IoError> {
        let system = self.system();
        let report = system.validate_topology();
        if !report.is_valid() {
            let msgs: Vec<String> = report.errors().map(|i| i.message.clone()).collect();
            return Err(IoError::Domain(msgs.join("; ")));
        }
        for w in report.warnings() {
            log::warn!("{}", w.message);
        }
        let t_n = system.n_periods();
        let res_ids: Vec<&str> = system.reservoirs.iter().map(|r| r.id.as_str()).collect();
        let unit_ids: Vec<&str> = system.units.iter().map(|u| u.id.as_str()).collect();
        let inflows = match &self.inflows {
            Some(src) => {
                let map = resolve_series(src, "inflows", &res_ids, t_n, base)?;
                res_ids.iter().map(|id| map[*id].clone()).collect()
            }
            None => vec![vec![0.0; t_n]; res_ids.len()],
        };
        let kind = match self.objective.kind {
            ObjectiveName::EnergyMax => ObjectiveKind::EnergyMax,
            ObjectiveName::RevenueMax => {
                let src = self.prices.as_ref().ok_or_else(|| IoError::Series {
                    what: "prices".into(),
                    message: "revenue_max needs a `prices` series".into(),
                })?;
                ObjectiveKind::RevenueMax { prices: resolve_series(src, "prices", &unit_ids, t_n, base)? }
            }
            ObjectiveName::PeakShave => {
                let src = self.load.as_ref().ok_or_else(|| IoError::Series {
                    what: "load".into(),
                    message: "peak_shave needs a `load` series".into(),
                })?;
                let map = resolve_series(src, "load", &["system"], t_n, base)?;
                ObjectiveKind::PeakShave { load: map["system"].clone() }
            }
        };
        let objective = ObjectiveSpec { kind, startup_cost_enabled: self.objective.startup_cost_enabled };
        let f = &self.fidelity;
        let mut config = f.tier.unwrap_or(Tier::MilpPwl).config(objective);
        if let Some(x) = &f.elevation {
            config.elevation = x.clone();
        }
        if let Some(x) = &f.power {
            config.power = x.clone();
        }
        if let Some(x) = &f.head_loss {
            config.head_loss = x.clone();
        }
        if let Some(x) = &f.tailrace {
            config.tailrace = x.clone();
        }
        if let Some(x) = f.zones {
            config.zones = x;
        }
        config.discretization = f.discretization.clone();
        Ok(Loaded { system, config, inflows })
    }

    /// Document for a resolved instance with all series inline.
    pub fn from_loaded(loaded: &Loaded) -> Self {
        let sys = &loaded.system;
        let c = &loaded.config;
        let (objective, prices, load) = match &c.objective.kind {
            ObjectiveKind::EnergyMax => (ObjectiveName::EnergyMax, None, None),
            ObjectiveKind::RevenueMax { prices } => (ObjectiveName::RevenueMax, Some(SeriesSource::Inline(prices.clone())), None),
            ObjectiveKind::PeakShave { load } => (
                ObjectiveName::PeakShave,
                None,
                Some(SeriesSource::Inline(BTreeMap::from([("system".to_string(), load.clone())]))),
            ),
        };
        CascadeFile {
            constants: sys.constants,
            time_grid: sys.time_grid,
            reservoirs: sys.reservoirs.clone(),
            units: sys.units.clone(),
            arcs: sys.arcs.clone(),
            fidelity: FidelitySection {
                tier: None,
                elevation: Some(c.elevation.clone()),
                power: Some(c.power.clone()),
                head_loss: Some(c.head_loss.clone()),
                tailrace: Some(c.tailrace.clone()),
                zones: Some(c.zones),
                discretization: c.discretization.clone(),
            },
            objective: ObjectiveSection { kind: objective, startup_cost_enabled: c.objective.startup_cost_enabled },
            inflows: Some(SeriesSource::Inline(
                sys.reservoirs.iter().zip(&loaded.inflows).map(|(r, w)| (r.id.clone(), w.clone())).collect(),
            )),
            prices,
            load,
        }
    }

    pub fn to_toml(&self) -> Result<String, IoError> {
        toml::to_string(self).map_err(|e| IoError::Unsupported(format!("serialization failed: {e}")))
    }
}

/// Reads, validates and resolves a cascade file.
pub fn parse_cascade_file(path: &Path) -> Result<Loaded, IoError> {
    let text = read_text(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_cascade_str(&text, path, &base)?.resolve(&base)
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| IoError::Write { path: dir.to_path_buf(), message: e.to_string() })?;
        }
    }
    fs::write(path, text).map_err(|e| IoError::Write { path: path.to_path_buf(), message: e.to_string() })
}

/// Schedule as `entity_id,period,quantity,value` rows. Floats use the
/// shortest representation that parses back to the same value.
pub fn schedule_to_csv(schedule: &Schedule) -> String {
    let mut out = String::from("entity_id,period,quantity,value\n");
    for u in &schedule.units {
        for t in 0..u.turbined.len() {
            out.push_str(&format!("{},{},turbined,{:?}\n", u.id, t + 1, u.turbined[t]));
            out.push_str(&format!("{},{},power,{:?}\n", u.id, t + 1, u.power[t]));
            out.push_str(&format!("{},{},commitment,{}\n", u.id, t + 1, u.commitment[t] as u8));
            out.push_str(&format!("{},{},head,{:?}\n", u.id, t + 1, u.head[t]));
        }
    }
    for r in &schedule.reservoirs {
        for t in 0..r.spill.len() {
            out.push_str(&format!("{},{},spill,{:?}\n", r.id, t + 1, r.spill[t]));
            out.push_str(&format!("{},{},storage,{:?}\n", r.id, t + 1, r.storage[t]));
            out.push_str(&format!("{},{},elevation,{:?}\n", r.id, t + 1, r.elevation[t]));
        }
    }
    out
}

pub fn write_schedule_csv(path: &Path, schedule: &Schedule) -> Result<(), IoError> {
    write_text(path, &schedule_to_csv(schedule))
}

const UNIT_QUANTITIES: [&str; 4] = ["turbined", "power", "commitment", "head"];
const RESERVOIR_QUANTITIES: [&str; 3] = ["spill", "storage", "elevation"];

/// Parses a schedule CSV. Entities keep their order of first appearance.
pub fn schedule_from_csv(text: &str, path: &Path, dt: f64) -> Result<Schedule, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| IoError::Csv { path: path.to_path_buf(), line: 1, message: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != ["entity_id", "period", "quantity", "value"] {
        return Err(IoError::Csv {
            path: path.to_path_buf(),
            line: 1,
            message: "header must be `entity_id,period,quantity,value`".into(),
        });
    }
    type Table = BTreeMap<(String, usize), f64>;
    let mut units: Vec<String> = Vec::new();
    let mut reservoirs: Vec<String> = Vec::new();
    let mut values: BTreeMap<&'static str, Table> = BTreeMap::new();
    let mut n_periods = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let err = |message: String| IoError::Csv { path: path.to_path_buf(), line, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 4 {
            return Err(err(format!("expected 4 columns, got {}", rec.len())));
        }
        let id = rec[0].to_string();
        let period: usize = rec[1].parse().map_err(|_| err(format!("bad period `{}`", &rec[1])))?;
        if period == 0 {
            return Err(err("periods are 1-based".into()));
        }
        let value: f64 = rec[3].parse().map_err(|_| err(format!("bad value `{}`", &rec[3])))?;
        let quantity = UNIT_QUANTITIES
            .iter()
            .chain(RESERVOIR_QUANTITIES.iter())
            .find(|q| **q == &rec[2])
            .copied()
            .ok_or_else(|| err(format!("unknown quantity `{}`", &rec[2])))?;
        let list = if UNIT_QUANTITIES.contains(&quantity) { &mut units } else { &mut reservoirs };
        if !list.contains(&id) {
            list.push(id.clone());
        }
        n_periods = n_periods.max(period);
        if values.entry(quantity).or_default().insert((id.clone(), period), value).is_some() {
            return Err(err(format!("duplicate entry for ({id}, {period}, {quantity})")));
        }
    }
    let get = |q: &'static str, id: &str, t: usize| -> Result<f64, IoError> {
        values.get(q).and_then(|m| m.get(&(id.to_string(), t))).copied().ok_or_else(|| IoError::Series {
            what: path.display().to_string(),
            message: format!("missing {q} for ({id}, {t})"),
        })
    };
    let mut schedule = Schedule { dt, units: Vec::new(), reservoirs: Vec::new() };
    for id in &units {
        let mut u = UnitSchedule { id: id.clone(), turbined: vec![], power: vec![], commitment: vec![], head: vec![] };
        for t in 1..=n_periods {
            u.turbined.push(get("turbined", id, t)?);
            u.power.push(get("power", id, t)?);
            u.commitment.push(get("commitment", id, t)? > 0.5);
            u.head.push(get("head", id, t)?);
        }
        schedule.units.push(u);
    }
    for id in &reservoirs {
        let mut r = ReservoirSchedule { id: id.clone(), spill: vec![], storage: vec![], elevation: vec![] };
        for t in 1..=n_periods {
            r.spill.push(get("spill", id, t)?);
            r.storage.push(get("storage", id, t)?);
            r.elevation.push(get("elevation", id, t)?);
        }
        schedule.reservoirs.push(r);
    }
    Ok(schedule)
}

pub fn read_schedule_csv(path: &Path, dt: f64) -> Result<Schedule, IoError> {
    schedule_from_csv(&read_text(path)?, path, dt)
}

/// `key: value` summary of a solve.
pub fn solve_summary(tier: &str, solution: &Solution, schedule: Option<&Schedule>, n_vars: usize, n_binaries: usize) -> String {
    let mut s = String::new();
    s.push_str(&format!("tier: {tier}\n"));
    s.push_str(&format!("status: {}\n", solution.status));
    s.push_str(&format!("objective: {:?}\n", solution.objective));
    s.push_str(&format!("bound: {:?}\n", solution.bound));
    s.push_str(&format!("variables: {n_vars}\n"));
    s.push_str(&format!("binaries: {n_binaries}\n"));
    s.push_str(&format!("wall_time_s: {:.6}\n", solution.wall_time));
    if let Some(sched) = schedule {
        s.push_str(&format!("energy_predicted_mwh: {:?}\n", sched.predicted_energy()));
    }
    if !solution.message.is_empty() {
        s.push_str(&format!("message: {}\n", solution.message));
    }
    s
}

/// Simulation trajectories as `entity_id,period,quantity,value` rows.
pub fn report_to_csv(report: &SimulationReport) -> String {
    let mut out = String::from("entity_id,period,quantity,value\n");
    for r in &report.reservoirs {
        for t in 0..r.storage.len() {
            out.push_str(&format!("{},{},storage,{:?}\n", r.id, t + 1, r.storage[t]));
            out.push_str(&format!("{},{},elevation,{:?}\n", r.id, t + 1, r.elevation[t]));
            out.push_str(&format!("{},{},inflow,{:?}\n", r.id, t + 1, r.inflow[t]));
            out.push_str(&format!("{},{},release,{:?}\n", r.id, t + 1, r.release[t]));
            out.push_str(&format!("{},{},tailwater,{:?}\n", r.id, t + 1, r.tailwater[t]));
        }
    }
    for u in &report.units {
        for t in 0..u.head.len() {
            out.push_str(&format!("{},{},head,{:?}\n", u.id, t + 1, u.head[t]));
            out.push_str(&format!("{},{},power_realized,{:?}\n", u.id, t + 1, u.power[t]));
        }
    }
    out
}

pub fn violations_to_csv(report: &SimulationReport) -> String {
    let mut out = String::from("kind,entity_id,period,magnitude\n");
    for v in &report.violations {
        out.push_str(&format!("{},{},{},{:?}\n", v.kind.name(), v.entity, v.period, v.magnitude));
    }
    out
}

pub fn simulation_summary(report: &SimulationReport) -> String {
    let mb = &report.mass_balance;
    format!(
        "energy_realized_mwh: {:?}\nenergy_predicted_mwh: {:?}\ngap_percent: {:?}\nviolations: {}\nmass_balance_residual_m3: {:?}\nmass_balance_relative: {:e}\n",
        report.energy_realized,
        report.energy_predicted,
        report.gap_percent,
        report.violations.len(),
        mb.residual(),
        mb.relative_residual()
    )
}

/// Gap table of a tier comparison as CSV, one row per run.
pub fn gaps_to_csv(runs: &[TierRun]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in runs {
        // serializing plain structs to memory cannot fail
        w.serialize(r).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV")
}

pub fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    write_text(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[time_grid]
n_periods = 2
dt = 3600.0

[[reservoirs]]
id = "R"
v_min = 0.0
v_max = 100000.0
v_initial = 72000.0
e_min = 0.0
e_max = 100.0
storage_to_elevation = { kind = "constant", value = 50.0 }

[[units]]
id = "U"
reservoir = "R"
q_min = 0.0
q_max = 10.0
power = { kind = "fixed_efficiency", efficiency = 0.9 }

[fidelity]
tier = "lp_fixed"

[inflows]
R = [0.0, 0.0]
"#;

    fn parse(text: &str, dir: &Path) -> Result<Loaded, IoError> {
        parse_cascade_str(text, Path::new("test.toml"), dir)?.resolve(dir)
    }

    #[test]
    fn minimal_document() {
        let l = parse(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(l.system.reservoirs[0].v_initial, 72000.0);
        assert_eq!(l.config, Tier::LpFixed.config(ObjectiveSpec::energy()));
        assert_eq!(l.inflows, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn unknown_key_reports_path() {
        let bad = MINIMAL.replace("v_min = 0.0", "v_minimum = 0.0");
        match parse(&bad, Path::new(".")) {
            Err(IoError::Schema { pointer, message, .. }) => {
                assert!(pointer.starts_with("reservoirs[0]"), "{pointer}");
                assert!(message.contains("v_minimum"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_curve_and_series_references() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("elev.csv"), "x,y\n0,40\n100000,60\n").unwrap();
        fs::write(dir.path().join("w.csv"), "entity_id,period,value\nR,1,1.5\nR,2,2.5\n").unwrap();
        let text = MINIMAL
            .replace(r#"{ kind = "constant", value = 50.0 }"#, r#"{ csv = "elev.csv" }"#)
            .replace("[inflows]\nR = [0.0, 0.0]", "[inflows]\ncsv = \"w.csv\"");
        let l = parse(&text, dir.path()).unwrap();
        assert_eq!(l.system.reservoirs[0].elevation(50000.0), 50.0);
        assert_eq!(l.inflows, vec![vec![1.5, 2.5]]);
    }

    #[test]
    fn missing_reference_is_named() {
        let text = MINIMAL.replace(r#"{ kind = "constant", value = 50.0 }"#, r#"{ csv = "nope.csv" }"#);
        match parse(&text, Path::new("/nonexistent")) {
            Err(IoError::MissingReference { reference, .. }) => assert_eq!(reference, "nope.csv"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decreasing_table_rejected() {
        let text = MINIMAL.replace(
            r#"{ kind = "constant", value = 50.0 }"#,
            r#"{ kind = "tabulated", points = [[0.0, 60.0], [100000.0, 40.0]] }"#,
        );
        match parse(&text, Path::new(".")) {
            Err(IoError::Domain(msg)) => assert!(msg.contains("storage_to_elevation") || msg.contains("monoton"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flow_dependent_routing_rejected() {
        let text = format!(
            "{MINIMAL}\n[[arcs]]\nfrom = \"R\"\nto = \"R\"\nrouting = {{ mode = {{ kind = \"flow_dependent\" }} }}\n"
        );
        assert!(matches!(parse(&text, Path::new(".")), Err(IoError::Unsupported(_))));
    }

    #[test]
    fn round_trip() {
        let l = parse(MINIMAL, Path::new(".")).unwrap();
        let text = CascadeFile::from_loaded(&l).to_toml().unwrap();
        let back = parse(&text, Path::new(".")).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn timeseries_coverage_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "entity_id,period,value\nA,1,1\nA,1,2\n").unwrap();
        assert!(matches!(read_timeseries(&p, &["A"], 1), Err(IoError::Csv { line: 3, .. })));
        fs::write(&p, "entity_id,period,value\nA,1,1\n").unwrap();
        assert!(matches!(read_timeseries(&p, &["A"], 2), Err(IoError::Series { .. })));
        fs::write(&p, "entity_id,period,value\nA,0,1\n").unwrap();
        assert!(read_timeseries(&p, &["A"], 1).is_err());
        let map = BTreeMap::from([("A".to_string(), vec![0.1, 1.0 / 3.0])]);
        write_timeseries(&p, &map).unwrap();
        assert_eq!(read_timeseries(&p, &["A"], 2).unwrap(), map);
    }

    #[test]
    fn schedule_csv_is_lossless() {
        let s = Schedule {
            dt: 3600.0,
            units: vec![UnitSchedule {
                id: "U".into(),
                turbined: vec![1.0 / 3.0, 0.0],
                power: vec![0.1 + 0.2, 0.0],
                commitment: vec![true, false],
                head: vec![49.999999999999, 50.0],
            }],
            reservoirs: vec![ReservoirSchedule {
                id: "R".into(),
                spill: vec![0.0, 1e-17],
                storage: vec![71999.99999999999, 1.0],
                elevation: vec![50.0, 50.0],
            }],
        };
        let text = schedule_to_csv(&s);
        assert_eq!(schedule_from_csv(&text, Path::new("s.csv"), 3600.0).unwrap(), s);
    }

    #[test]
    fn violation_kind_names_match_serde() {
        use crate::simulate::ViolationKind;
        #[derive(Serialize)]
        struct K {
            k: ViolationKind,
        }
        for k in [ViolationKind::StorageBelowMin, ViolationKind::NonPositiveHead, ViolationKind::Zone] {
            assert_eq!(toml::to_string(&K { k }).unwrap().trim(), format!("k = \"{}\"", k.name()));
        }
    }
}

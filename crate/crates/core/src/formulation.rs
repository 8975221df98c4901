//! Builds an [`AbstractModel`] for a cascade at a chosen fidelity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{FitError, PwlCurve1D, PwlSurface2D};
use crate::domain::{CascadeSystem, LossModel};
use crate::model::{AbstractModel, ConstraintId, ModelError, ObjSense, Quantity, RowSense, VarId, VarKey, VarKind};
use crate::tier::{PowerRepr, Repr1, TierPhysics, UnitPhysics, UnitZones};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("invalid system: {0}")]
    Validation(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("inflow series for reservoir {reservoir}: expected {expected} periods, got {got}")]
    InflowLength { reservoir: String, expected: usize, got: usize },
    #[error("expected inflow series for {expected} reservoirs, got {got}")]
    InflowCount { expected: usize, got: usize },
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
    #[error("domain shortfall: {0}")]
    DomainShortfall(String),
    #[error("approximation of {entity} failed: {source}")]
    Fit { entity: String, source: FitError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How a piecewise-linear approximation is obtained.
///
/// Explicit `breakpoints` win; otherwise `pieces` requests a uniform
/// least-squares fit and `epsilon` a minimal-piece fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwlFitOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pieces: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pieces: Option<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<PwlCurve1D>,
}

fn default_samples() -> usize {
    101
}

impl Default for PwlFitOptions {
    fn default() -> Self {
        Self { epsilon: None, pieces: None, max_pieces: None, samples: default_samples(), breakpoints: None }
    }
}

impl PwlFitOptions {
    pub const DEFAULT_PIECES: usize = 4;

    pub fn pieces(n: usize) -> Self {
        Self { pieces: Some(n), ..Self::default() }
    }

    pub fn epsilon(eps: f64) -> Self {
        Self { epsilon: Some(eps), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ElevationMode {
    FixedHead,
    Linear,
    Pwl(PwlFitOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PowerMode {
    #[serde(rename = "linear_fixed_head_fixed_eta")]
    LinearFixedHead,
    #[serde(rename = "pwl_1d")]
    Pwl1d(PwlFitOptions),
    #[serde(rename = "pwl_2d")]
    Pwl2d { q_points: usize, h_points: usize },
    Mccormick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HeadLossMode {
    OmitLosses,
    ConstantLosses,
    Linear,
    Pwl(PwlFitOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TailraceMode {
    Omit,
    Constant,
    Linear,
    Pwl(PwlFitOptions),
    BivariateLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZonesMode {
    #[serde(rename = "convex")]
    Convex,
    #[serde(rename = "huc_only")]
    HucOnly,
    #[serde(rename = "huc_poz_1d")]
    HucPoz1d,
    #[serde(rename = "huc_poz_2d")]
    HucPoz2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveKind {
    EnergyMax,
    /// Prices per unit id, currency/MWh, one per period.
    RevenueMax { prices: BTreeMap<String, Vec<f64>> },
    /// System load, MW, one per period.
    PeakShave { load: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub startup_cost_enabled: bool,
}

impl ObjectiveSpec {
    pub fn energy() -> Self {
        Self { kind: ObjectiveKind::EnergyMax, startup_cost_enabled: false }
    }

    pub fn sense(&self) -> ObjSense {
        match self.kind {
            ObjectiveKind::PeakShave { .. } => ObjSense::Minimize,
            _ => ObjSense::Maximize,
        }
    }
}

/// Restricts discharges to grids, for comparison with the enumeration oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    /// Allowed turbined discharges of every unit, m³/s.
    pub unit_levels: Vec<f64>,
    /// Allowed spills of every reservoir, m³/s.
    #[serde(default = "zero_levels")]
    pub spill_levels: Vec<f64>,
}

fn zero_levels() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub elevation: ElevationMode,
    pub power: PowerMode,
    pub head_loss: HeadLossMode,
    pub tailrace: TailraceMode,
    pub zones: ZonesMode,
    pub objective: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<Discretization>,
}

impl FidelityConfig {
    /// Fixed-head LP with constant losses and no commitment.
    pub fn lp_fixed_head() -> Self {
        Self {
            elevation: ElevationMode::FixedHead,
            power: PowerMode::LinearFixedHead,
            head_loss: HeadLossMode::ConstantLosses,
            tailrace: TailraceMode::Constant,
            zones: ZonesMode::Convex,
            objective: ObjectiveSpec::energy(),
            discretization: None,
        }
    }

    pub fn with_zones(mut self, zones: ZonesMode) -> Self {
        self.zones = zones;
        self
    }

    pub fn with_power(mut self, power: PowerMode) -> Self {
        self.power = power;
        self
    }

    pub fn with_objective(mut self, objective: ObjectiveSpec) -> Self {
        self.objective = objective;
        self
    }

    pub fn with_discretization(mut self, d: Discretization) -> Self {
        self.discretization = Some(d);
        self
    }
}

/// Model plus the tier physics it was built from.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub model: AbstractModel,
    pub physics: TierPhysics,
}

fn bounds_of(model: &AbstractModel, v: VarId) -> (f64, f64) {
    let var = model.variable(v);
    (var.lower, var.upper)
}

fn check_cover(what: &str, var: (f64, f64), domain: (f64, f64)) -> Result<(), BuildError> {
    let tol = 1e-9 * (1.0 + domain.0.abs().max(domain.1.abs()));
    if var.0 < domain.0 - tol || var.1 > domain.1 + tol {
        return Err(BuildError::DomainShortfall(format!(
            "{what}: variable range [{}, {}] exceeds approximation domain [{}, {}]",
            var.0, var.1, domain.0, domain.1
        )));
    }
    Ok(())
}

/// Disaggregated convex-combination encoding of `y = curve(x)`: each piece
/// carries its own pair of weights, switched on by one binary per piece.
pub fn encode_pwl_constraint(
    model: &mut AbstractModel,
    x: VarId,
    y: VarId,
    curve: &PwlCurve1D,
    tag: &str,
) -> Result<Vec<ConstraintId>, BuildError> {
    check_cover(tag, bounds_of(model, x), curve.domain())?;
    let bp = curve.breakpoints();
    let mut rows = Vec::with_capacity(bp.len() + 3);
    let mut xr = vec![(x, 1.0)];
    let mut yr = vec![(y, 1.0)];
    let mut zs = Vec::with_capacity(bp.len() - 1);
    for (j, w) in bp.windows(2).enumerate() {
        let z = model.add_var(format!("z_{tag}_{j}"), VarKind::Binary, 0.0, 1.0);
        let l0 = model.add_var(format!("lam_{tag}_{j}_0"), VarKind::Continuous, 0.0, 1.0);
        let l1 = model.add_var(format!("lam_{tag}_{j}_1"), VarKind::Continuous, 0.0, 1.0);
        rows.push(model.add_constraint(format!("pwl_{tag}_on{j}"), vec![(l0, 1.0), (l1, 1.0), (z, -1.0)], RowSense::Eq, 0.0));
        xr.extend([(l0, -w[0].0), (l1, -w[1].0)]);
        yr.extend([(l0, -w[0].1), (l1, -w[1].1)]);
        zs.push((z, 1.0));
    }
    rows.push(model.add_constraint(format!("pwl_{tag}_z"), zs, RowSense::Eq, 1.0));
    rows.push(model.add_constraint(format!("pwl_{tag}_x"), xr, RowSense::Eq, 0.0));
    rows.push(model.add_constraint(format!("pwl_{tag}_y"), yr, RowSense::Eq, 0.0));
    Ok(rows)
}

/// Disaggregated convex-combination encoding of `w = surface(x, y)` with one
/// binary and three vertex weights per triangle.
pub fn encode_pwl_2d_constraint(
    model: &mut AbstractModel,
    x: VarId,
    y: VarId,
    w: VarId,
    surface: &PwlSurface2D,
    tag: &str,
) -> Result<Vec<ConstraintId>, BuildError> {
    let (xd, yd) = surface.domain();
    check_cover(tag, bounds_of(model, x), xd)?;
    check_cover(tag, bounds_of(model, y), yd)?;
    let triangles = surface.triangles();
    let mut rows = Vec::with_capacity(triangles.len() + 4);
    let mut xr = vec![(x, 1.0)];
    let mut yr = vec![(y, 1.0)];
    let mut wr = vec![(w, 1.0)];
    let mut zs = Vec::with_capacity(triangles.len());
    for (k, tri) in triangles.iter().enumerate() {
        let z = model.add_var(format!("z_{tag}_{k}"), VarKind::Binary, 0.0, 1.0);
        let mut on = vec![(z, -1.0)];
        for (c, &(i, j)) in tri.iter().enumerate() {
            let l = model.add_var(format!("lam_{tag}_{k}_{c}"), VarKind::Continuous, 0.0, 1.0);
            on.push((l, 1.0));
            xr.push((l, -surface.x_grid[i]));
            yr.push((l, -surface.y_grid[j]));
            wr.push((l, -surface.values[i][j]));
        }
        rows.push(model.add_constraint(format!("pwl_{tag}_on{k}"), on, RowSense::Eq, 0.0));
        zs.push((z, 1.0));
    }
    rows.push(model.add_constraint(format!("pwl_{tag}_z"), zs, RowSense::Eq, 1.0));
    rows.push(model.add_constraint(format!("pwl_{tag}_x"), xr, RowSense::Eq, 0.0));
    rows.push(model.add_constraint(format!("pwl_{tag}_y"), yr, RowSense::Eq, 0.0));
    rows.push(model.add_constraint(format!("pwl_{tag}_w"), wr, RowSense::Eq, 0.0));
    Ok(rows)
}

/// Variables of one unit in one period that the zone encoding touches.
#[derive(Debug, Clone, Copy)]
pub struct UnitPeriodVars {
    pub turbined: VarId,
    pub power: VarId,
    pub head: VarId,
}

/// Result of [`encode_zones`].
#[derive(Debug, Clone, Default)]
pub struct ZoneEncoding {
    pub constraints: Vec<ConstraintId>,
    pub binaries: Vec<VarId>,
    pub commitment: Option<VarId>,
}

/// Operating-zone constraints of one unit in one period.
pub fn encode_zones(
    model: &mut AbstractModel,
    vars: UnitPeriodVars,
    unit: &UnitPhysics,
    unit_id: &str,
    period: usize,
) -> Result<ZoneEncoding, BuildError> {
    let tag = format!("{unit_id}_{period}");
    let mut enc = ZoneEncoding::default();
    let UnitPeriodVars { turbined: qp, power: p, head: h } = vars;
    if let UnitZones::Free { p_cap } = unit.zones {
        enc.constraints.push(model.add_constraint(format!("zcap_{tag}"), vec![(p, 1.0)], RowSense::Le, p_cap));
        return Ok(enc);
    }
    let u = model.add_keyed_var(VarKey::new(Quantity::Commitment, unit_id, period), VarKind::Binary, 0.0, 1.0);
    enc.commitment = Some(u);
    enc.binaries.push(u);
    enc.constraints.push(model.add_constraint(format!("qhi_{tag}"), vec![(qp, 1.0), (u, -unit.q_max)], RowSense::Le, 0.0));
    enc.constraints.push(model.add_constraint(format!("qlo_{tag}"), vec![(qp, 1.0), (u, -unit.q_min)], RowSense::Ge, 0.0));
    match &unit.zones {
        UnitZones::Free { .. } => unreachable!(),
        UnitZones::Commit { p_lo, p_hi } => {
            enc.constraints.push(model.add_constraint(format!("zhi_{tag}"), vec![(p, 1.0), (u, -p_hi)], RowSense::Le, 0.0));
            enc.constraints.push(model.add_constraint(format!("zlo_{tag}"), vec![(p, 1.0), (u, -p_lo)], RowSense::Ge, 0.0));
        }
        UnitZones::Intervals { intervals } => {
            if intervals.is_empty() {
                return Err(BuildError::MissingData(format!("unit {unit_id}: empty zone list")));
            }
            let y: Vec<VarId> = (0..intervals.len())
                .map(|k| model.add_var(format!("y_{tag}_{k}"), VarKind::Binary, 0.0, 1.0))
                .collect();
            enc.binaries.extend(&y);
            let mut sel: Vec<(VarId, f64)> = y.iter().map(|v| (*v, 1.0)).collect();
            sel.push((u, -1.0));
            enc.constraints.push(model.add_constraint(format!("zsel_{tag}"), sel, RowSense::Eq, 0.0));
            let mut hi = vec![(p, 1.0)];
            hi.extend(y.iter().zip(intervals).map(|(v, iv)| (*v, -iv.1)));
            enc.constraints.push(model.add_constraint(format!("zhi_{tag}"), hi, RowSense::Le, 0.0));
            let mut lo = vec![(p, 1.0)];
            lo.extend(y.iter().zip(intervals).map(|(v, iv)| (*v, -iv.0)));
            enc.constraints.push(model.add_constraint(format!("zlo_{tag}"), lo, RowSense::Ge, 0.0));
        }
        UnitZones::Polygons { polygons, p_hi } => {
            if polygons.is_empty() {
                return Err(BuildError::MissingData(format!("unit {unit_id}: empty polygon list")));
            }
            let y: Vec<VarId> = (0..polygons.len())
                .map(|k| model.add_var(format!("y_{tag}_{k}"), VarKind::Binary, 0.0, 1.0))
                .collect();
            enc.binaries.extend(&y);
            let mut sel: Vec<(VarId, f64)> = y.iter().map(|v| (*v, 1.0)).collect();
            sel.push((u, -1.0));
            enc.constraints.push(model.add_constraint(format!("zsel_{tag}"), sel, RowSense::Eq, 0.0));
            enc.constraints.push(model.add_constraint(format!("zhi_{tag}"), vec![(p, 1.0), (u, -p_hi)], RowSense::Le, 0.0));
            let (h_lo, h_hi) = bounds_of(model, h);
            let (p_lo_b, p_hi_b) = bounds_of(model, p);
            for (k, planes) in polygons.iter().enumerate() {
                for (j, hp) in planes.iter().enumerate() {
                    // tightest M from the box of (P, h)
                    let corners = [(p_lo_b, h_lo), (p_lo_b, h_hi), (p_hi_b, h_lo), (p_hi_b, h_hi)];
                    let big_m = corners.iter().map(|(pp, hh)| hp.a * pp + hp.b * hh - hp.c).fold(0.0, f64::max);
                    if !big_m.is_finite() {
                        return Err(BuildError::MissingData(format!("unit {unit_id}: unbounded head for 2-D zones")));
                    }
                    enc.constraints.push(model.add_constraint(
                        format!("zpoly_{tag}_{k}_{j}"),
                        vec![(p, hp.a), (h, hp.b), (y[k], big_m)],
                        RowSense::Le,
                        hp.c + big_m,
                    ));
                }
            }
        }
    }
    Ok(enc)
}

/// Installs the objective and any auxiliary rows it needs.
pub fn build_objective(
    model: &mut AbstractModel,
    spec: &ObjectiveSpec,
    system: &CascadeSystem,
) -> Result<Vec<ConstraintId>, BuildError> {
    let t_n = system.n_periods();
    let hours = system.time_grid.dt / 3600.0;
    let power = |m: &AbstractModel, p: &str, t: usize| {
        m.var(Quantity::Power, p, t).ok_or_else(|| BuildError::MissingData(format!("power variable for {p} in {t}")))
    };
    let mut rows = Vec::new();
    model.objective.terms.clear();
    model.objective.constant = 0.0;
    model.objective.sense = spec.sense();
    match &spec.kind {
        ObjectiveKind::EnergyMax => {
            if spec.startup_cost_enabled {
                return Err(BuildError::Inconsistent("startup costs apply to revenue objectives only".into()));
            }
            for unit in &system.units {
                for t in 1..=t_n {
                    let p = power(model, &unit.id, t)?;
                    model.objective.terms.push((p, hours));
                }
            }
        }
        ObjectiveKind::RevenueMax { prices } => {
            for unit in &system.units {
                let series = prices
                    .get(&unit.id)
                    .ok_or_else(|| BuildError::MissingData(format!("no prices for unit {}", unit.id)))?;
                if series.len() != t_n {
                    return Err(BuildError::MissingData(format!(
                        "prices for unit {} have {} periods, expected {t_n}",
                        unit.id,
                        series.len()
                    )));
                }
                for t in 1..=t_n {
                    let p = power(model, &unit.id, t)?;
                    model.objective.terms.push((p, series[t - 1] * hours));
                }
                if spec.startup_cost_enabled {
                    let cost = unit.zones.as_ref().and_then(|z| z.startup_cost).unwrap_or(0.0);
                    for t in 1..=t_n {
                        let s = model.var(Quantity::Startup, &unit.id, t).ok_or_else(|| {
                            BuildError::Inconsistent(format!("startup costs need commitment variables (unit {})", unit.id))
                        })?;
                        model.objective.terms.push((s, -cost));
                    }
                }
            }
        }
        ObjectiveKind::PeakShave { load } => {
            if spec.startup_cost_enabled {
                return Err(BuildError::Inconsistent("startup costs apply to revenue objectives only".into()));
            }
            if load.len() != t_n {
                return Err(BuildError::MissingData(format!("load has {} periods, expected {t_n}", load.len())));
            }
            let m = model.add_keyed_var(
                VarKey::new(Quantity::Peak, "system", 0),
                VarKind::Continuous,
                f64::NEG_INFINITY,
                f64::INFINITY,
            );
            for t in 1..=t_n {
                let mut row = vec![(m, 1.0)];
                for unit in &system.units {
                    row.push((power(model, &unit.id, t)?, 1.0));
                }
                rows.push(model.add_constraint(format!("peak_{t}"), row, RowSense::Ge, load[t - 1]));
            }
            model.objective.terms.push((m, 1.0));
        }
    }
    Ok(rows)
}

fn check_inflows(system: &CascadeSystem, inflows: &[Vec<f64>]) -> Result<(), BuildError> {
    if inflows.len() != system.reservoirs.len() {
        return Err(BuildError::InflowCount { expected: system.reservoirs.len(), got: inflows.len() });
    }
    for (res, w) in system.reservoirs.iter().zip(inflows) {
        if w.len() != system.n_periods() {
            return Err(BuildError::InflowLength { reservoir: res.id.clone(), expected: system.n_periods(), got: w.len() });
        }
    }
    Ok(())
}

/// Checks everything `build_model` needs before any variable is created.
pub fn check_inputs(system: &CascadeSystem, inflows: &[Vec<f64>], config: &FidelityConfig) -> Result<(), BuildError> {
    let report = system.validate_topology();
    if !report.is_valid() {
        let msgs: Vec<String> = report.errors().map(|e| e.to_string()).collect();
        return Err(BuildError::Validation(msgs.join("; ")));
    }
    check_inflows(system, inflows)?;
    if config.objective.startup_cost_enabled && config.zones == ZonesMode::Convex {
        return Err(BuildError::Inconsistent("startup costs require a commitment zones mode".into()));
    }
    if let Some(d) = &config.discretization {
        if d.unit_levels.is_empty() || d.spill_levels.is_empty() {
            return Err(BuildError::MissingData("discretization grids must not be empty".into()));
        }
    }
    Ok(())
}

/// Builds the full model: mass balance, release composition, routed inflow,
/// elevation, tailwater, head, power, zones, startups and objective.
pub fn build_model(
    system: &CascadeSystem,
    inflows: &[Vec<f64>],
    config: &FidelityConfig,
) -> Result<BuiltModel, BuildError> {
    check_inputs(system, inflows, config)?;
    let physics = TierPhysics::new(system, inflows, config)?;
    let mut m = AbstractModel::new();
    let t_n = system.n_periods();
    let dt = system.time_grid.dt;
    let inf = f64::INFINITY;

    // keyed variables first so that names are grouped by period
    for t in 1..=t_n {
        for (r, res) in system.reservoirs.iter().enumerate() {
            let rp = &physics.reservoirs[r];
            let id = res.id.as_str();
            let v_lo = if t == t_n { res.terminal_floor() } else { res.v_min };
            m.add_keyed_var(VarKey::new(Quantity::Storage, id, t), VarKind::Continuous, v_lo, res.v_max);
            m.add_keyed_var(VarKey::new(Quantity::Release, id, t), VarKind::Continuous, 0.0, rp.release_max);
            m.add_keyed_var(VarKey::new(Quantity::Spill, id, t), VarKind::Continuous, 0.0, rp.release_max);
            m.add_keyed_var(VarKey::new(Quantity::Inflow, id, t), VarKind::Continuous, -inf, inf);
            if matches!(rp.elevation, Repr1::Pwl(_)) {
                m.add_keyed_var(VarKey::new(Quantity::AvgStorage, id, t), VarKind::Continuous, res.v_min, res.v_max);
            }
            m.add_keyed_var(VarKey::new(Quantity::Elevation, id, t), VarKind::Continuous, res.e_min, res.e_max);
            m.add_keyed_var(VarKey::new(Quantity::Tailwater, id, t), VarKind::Continuous, -inf, inf);
        }
        for (p, unit) in system.units.iter().enumerate() {
            let up = &physics.units[p];
            let id = unit.id.as_str();
            m.add_keyed_var(VarKey::new(Quantity::Turbined, id, t), VarKind::Continuous, 0.0, unit.q_max);
            m.add_keyed_var(VarKey::new(Quantity::HeadLoss, id, t), VarKind::Continuous, -inf, inf);
            let (h_lo, h_hi) = up.head_bounds();
            m.add_keyed_var(VarKey::new(Quantity::Head, id, t), VarKind::Continuous, h_lo, h_hi);
            m.add_keyed_var(VarKey::new(Quantity::Power, id, t), VarKind::Continuous, 0.0, up.p_max);
        }
    }

    for t in 1..=t_n {
        for (r, res) in system.reservoirs.iter().enumerate() {
            let id = res.id.as_str();
            let v = key(&m, Quantity::Storage, id, t);
            let q = key(&m, Quantity::Release, id, t);
            let i = key(&m, Quantity::Inflow, id, t);
            let prev = (t > 1).then(|| key(&m, Quantity::Storage, id, t - 1));

            // V_t - V_{t-1} = (I - Q - L) dt, with L possibly linear in V_{t-1}
            let (loss_const, loss_slope) = match &res.losses {
                LossModel::None => (0.0, 0.0),
                LossModel::Constant { .. } => (res.losses.rate(t, 0.0), 0.0),
                LossModel::LinearInStorage { intercept, coefficient } => (*intercept, *coefficient),
            };
            let mut mb = vec![(v, 1.0), (q, dt), (i, -dt)];
            let prev_coef = -(1.0 - dt * loss_slope);
            let mut rhs = -dt * loss_const;
            match prev {
                Some(pv) => mb.push((pv, prev_coef)),
                None => rhs -= prev_coef * res.v_initial,
            }
            m.add_constraint(format!("mb_{id}_{t}"), mb, RowSense::Eq, rhs);

            let mut rel = vec![(q, 1.0), (key(&m, Quantity::Spill, id, t), -1.0)];
            for p in system.units_of(r) {
                rel.push((key(&m, Quantity::Turbined, &system.units[p].id, t), -1.0));
            }
            m.add_constraint(format!("rel_{id}_{t}"), rel, RowSense::Eq, 0.0);

            let mut inflow = vec![(i, 1.0)];
            let mut rhs = inflows[r][t - 1];
            for (up, arc) in system.incoming(r) {
                let (terms, constant) = arc.routing.linear_terms(t);
                rhs += constant;
                for (period, w) in terms {
                    inflow.push((key(&m, Quantity::Release, &system.reservoirs[up].id, period), -w));
                }
            }
            m.add_constraint(format!("inf_{id}_{t}"), inflow, RowSense::Eq, rhs);
        }
    }

    for t in 1..=t_n {
        for (r, res) in system.reservoirs.iter().enumerate() {
            let rp = &physics.reservoirs[r];
            let id = res.id.as_str();
            let v = key(&m, Quantity::Storage, id, t);
            let e = key(&m, Quantity::Elevation, id, t);
            let prev = (t > 1).then(|| key(&m, Quantity::Storage, id, t - 1));
            // average volume (V_{t-1} + V_t) / 2
            let avg_terms = |coef: f64| {
                let mut terms = vec![(v, -0.5 * coef)];
                let mut constant = 0.0;
                match prev {
                    Some(pv) => terms.push((pv, -0.5 * coef)),
                    None => constant = 0.5 * coef * res.v_initial,
                }
                (terms, constant)
            };
            match &rp.elevation {
                Repr1::Affine { intercept, slope } => {
                    let (mut terms, constant) = if rp.fixed_elevation { (Vec::new(), 0.0) } else { avg_terms(*slope) };
                    terms.insert(0, (e, 1.0));
                    m.add_constraint(format!("elev_{id}_{t}"), terms, RowSense::Eq, intercept + constant);
                }
                Repr1::Pwl(curve) => {
                    let va = key(&m, Quantity::AvgStorage, id, t);
                    let (mut terms, constant) = avg_terms(1.0);
                    terms.insert(0, (va, 1.0));
                    m.add_constraint(format!("avg_{id}_{t}"), terms, RowSense::Eq, constant);
                    encode_pwl_constraint(&mut m, va, e, curve, &format!("e_{id}_{t}"))?;
                }
            }

            let tw = key(&m, Quantity::Tailwater, id, t);
            let q = key(&m, Quantity::Release, id, t);
            match &rp.tailrace.base {
                Repr1::Affine { intercept, slope } => {
                    let mut terms = vec![(tw, 1.0), (q, -slope)];
                    let mut rhs = *intercept;
                    if let Some((d, c)) = rp.tailrace.coupling {
                        terms.push((key(&m, Quantity::Elevation, &system.reservoirs[d].id, t), -c.coefficient));
                        rhs -= c.coefficient * c.reference_elevation;
                    }
                    m.add_constraint(format!("tw_{id}_{t}"), terms, RowSense::Eq, rhs);
                }
                Repr1::Pwl(curve) => {
                    encode_pwl_constraint(&mut m, q, tw, curve, &format!("tw_{id}_{t}"))?;
                }
            }
        }

        for (p, unit) in system.units.iter().enumerate() {
            let up = &physics.units[p];
            let id = unit.id.as_str();
            let res_id = system.reservoirs[up.reservoir].id.as_str();
            let qp = key(&m, Quantity::Turbined, id, t);
            let hl = key(&m, Quantity::HeadLoss, id, t);
            let h = key(&m, Quantity::Head, id, t);
            let pw = key(&m, Quantity::Power, id, t);
            match &up.head_loss {
                Repr1::Affine { intercept, slope } => {
                    m.add_constraint(format!("hl_{id}_{t}"), vec![(hl, 1.0), (qp, -slope)], RowSense::Eq, *intercept);
                }
                Repr1::Pwl(curve) => {
                    encode_pwl_constraint(&mut m, qp, hl, curve, &format!("hl_{id}_{t}"))?;
                }
            }
            m.add_constraint(
                format!("head_{id}_{t}"),
                vec![
                    (h, 1.0),
                    (key(&m, Quantity::Elevation, res_id, t), -1.0),
                    (key(&m, Quantity::Tailwater, res_id, t), 1.0),
                    (hl, 1.0),
                ],
                RowSense::Eq,
                0.0,
            );
            match &up.power {
                PowerRepr::Linear { k } => {
                    m.add_constraint(format!("pow_{id}_{t}"), vec![(pw, 1.0), (qp, -k)], RowSense::Eq, 0.0);
                }
                PowerRepr::Pwl1d(curve) => {
                    encode_pwl_constraint(&mut m, qp, pw, curve, &format!("p_{id}_{t}"))?;
                }
                PowerRepr::Surface(surface) => {
                    encode_pwl_2d_constraint(&mut m, qp, h, pw, surface, &format!("p_{id}_{t}"))?;
                }
                PowerRepr::McCormick { c, envelope } => {
                    let w = m.add_var(format!("w_{id}_{t}"), VarKind::Continuous, -inf, inf);
                    m.add_constraint(format!("pow_{id}_{t}"), vec![(pw, 1.0), (w, -c)], RowSense::Eq, 0.0);
                    for (k, cut) in envelope.cuts().iter().enumerate() {
                        let sense = match cut.sense {
                            crate::approx::CutSense::Under => RowSense::Ge,
                            crate::approx::CutSense::Over => RowSense::Le,
                        };
                        m.add_constraint(
                            format!("mc{k}_{id}_{t}"),
                            vec![(w, 1.0), (qp, -cut.coef_q), (h, -cut.coef_h)],
                            sense,
                            cut.constant,
                        );
                    }
                }
            }
            encode_zones(&mut m, UnitPeriodVars { turbined: qp, power: pw, head: h }, up, id, t)?;
        }
    }

    if config.objective.startup_cost_enabled {
        for unit in &system.units {
            let id = unit.id.as_str();
            for t in 1..=t_n {
                let Some(u) = m.var(Quantity::Commitment, id, t) else { continue };
                let s = m.add_keyed_var(VarKey::new(Quantity::Startup, id, t), VarKind::Binary, 0.0, 1.0);
                let mut row = vec![(s, 1.0), (u, -1.0)];
                let mut rhs = 0.0;
                match m.var(Quantity::Commitment, id, t - 1) {
                    Some(prev) if t > 1 => row.push((prev, 1.0)),
                    _ => rhs = -(unit.initially_online as u8 as f64),
                }
                m.add_constraint(format!("su_{id}_{t}"), row, RowSense::Ge, rhs);
            }
        }
    }

    if let Some(d) = &config.discretization {
        for t in 1..=t_n {
            for unit in &system.units {
                let qp = key(&m, Quantity::Turbined, &unit.id, t);
                add_level_choice(&mut m, qp, &d.unit_levels, &format!("g_{}_{t}", unit.id));
            }
            for res in &system.reservoirs {
                let s = key(&m, Quantity::Spill, &res.id, t);
                add_level_choice(&mut m, s, &d.spill_levels, &format!("gs_{}_{t}", res.id));
            }
        }
    }

    build_objective(&mut m, &config.objective, system)?;
    m.audit()?;
    Ok(BuiltModel { model: m, physics })
}

fn key(m: &AbstractModel, q: Quantity, id: &str, t: usize) -> VarId {
    m.var(q, id, t).expect("keyed variable declared before use")
}

fn add_level_choice(m: &mut AbstractModel, var: VarId, levels: &[f64], tag: &str) {
    let g: Vec<VarId> = (0..levels.len()).map(|k| m.add_var(format!("{tag}_{k}"), VarKind::Binary, 0.0, 1.0)).collect();
    m.add_constraint(format!("lvl_{tag}"), g.iter().map(|v| (*v, 1.0)).collect(), RowSense::Eq, 1.0);
    let mut row = vec![(var, 1.0)];
    row.extend(g.iter().zip(levels).map(|(v, l)| (*v, -l)));
    m.add_constraint(format!("lvlq_{tag}"), row, RowSense::Eq, 0.0);
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::{
        Curve1D, GeneratingUnit, OperatingZoneSet, PhysicalConstants, PowerSurface, Reservoir, Tailrace, TimeGrid,
    };

    pub(crate) fn single(t: usize) -> CascadeSystem {
        CascadeSystem {
            constants: PhysicalConstants::default(),
            time_grid: TimeGrid::new(t, 3600.0),
            reservoirs: vec![Reservoir {
                id: "R".into(),
                v_min: 0.0,
                v_max: 1e5,
                v_initial: 72_000.0,
                v_terminal: None,
                e_min: 0.0,
                e_max: 100.0,
                storage_to_elevation: Curve1D::constant(50.0),
                tailrace: Tailrace::default(),
                losses: LossModel::None,
            }],
            units: vec![GeneratingUnit {
                id: "U".into(),
                reservoir: "R".into(),
                q_min: 0.0,
                q_max: 10.0,
                power: PowerSurface::FixedEfficiency { efficiency: 0.9 },
                head_loss: Curve1D::default(),
                zones: Some(OperatingZoneSet::intervals(vec![[0.0, 4.5]])),
                initially_online: false,
            }],
            arcs: vec![],
        }
    }

    #[test]
    fn lp_tier_has_no_binaries() {
        let sys = single(2);
        let b = build_model(&sys, &[vec![0.0, 0.0]], &FidelityConfig::lp_fixed_head()).unwrap();
        assert_eq!(b.model.n_binaries(), 0);
        let pow = b.model.constraints.iter().find(|c| c.name == "pow_U_1").unwrap();
        let qp = b.model.var(Quantity::Turbined, "U", 1).unwrap();
        let coef = pow.terms.iter().find(|(v, _)| *v == qp).unwrap().1;
        assert_eq!(-coef, 1000.0 * 9.81 * 0.9 * 50.0 / 1e6);
    }

    #[test]
    fn huc_adds_one_binary_per_period() {
        let sys = single(2);
        let cfg = FidelityConfig::lp_fixed_head().with_zones(ZonesMode::HucOnly);
        let b = build_model(&sys, &[vec![0.0, 0.0]], &cfg).unwrap();
        assert_eq!(b.model.n_binaries(), 2);
        assert!(b.model.var(Quantity::Commitment, "U", 2).is_some());
    }

    #[test]
    fn pwl_1d_counts() {
        let sys = single(2);
        let cfg = FidelityConfig::lp_fixed_head().with_power(PowerMode::Pwl1d(PwlFitOptions::pieces(4)));
        let b = build_model(&sys, &[vec![0.0, 0.0]], &cfg).unwrap();
        for t in 1..=2 {
            assert_eq!(b.model.count_prefixed(&format!("lam_p_U_{t}_")), 8);
            assert_eq!(b.model.count_prefixed(&format!("z_p_U_{t}_")), 4);
        }
        assert_eq!(b.model.n_binaries(), 8);
    }

    #[test]
    fn fixed_power_needs_fixed_head() {
        let sys = single(1);
        let mut cfg = FidelityConfig::lp_fixed_head();
        cfg.elevation = ElevationMode::Linear;
        assert!(matches!(build_model(&sys, &[vec![0.0]], &cfg), Err(BuildError::Inconsistent(_))));
    }

    #[test]
    fn missing_prices_and_load() {
        let sys = single(2);
        let cfg = FidelityConfig::lp_fixed_head()
            .with_objective(ObjectiveSpec { kind: ObjectiveKind::RevenueMax { prices: BTreeMap::new() }, startup_cost_enabled: false });
        assert!(matches!(build_model(&sys, &[vec![0.0, 0.0]], &cfg), Err(BuildError::MissingData(_))));
        let cfg = FidelityConfig::lp_fixed_head()
            .with_objective(ObjectiveSpec { kind: ObjectiveKind::PeakShave { load: vec![1.0] }, startup_cost_enabled: false });
        assert!(matches!(build_model(&sys, &[vec![0.0, 0.0]], &cfg), Err(BuildError::MissingData(_))));
    }

    #[test]
    fn inflow_length_checked() {
        let sys = single(2);
        let err = build_model(&sys, &[vec![0.0]], &FidelityConfig::lp_fixed_head()).unwrap_err();
        assert!(matches!(err, BuildError::InflowLength { .. }));
    }

    #[test]
    fn pwl_encoding_counts() {
        let mut m = AbstractModel::new();
        let x = m.add_var("x", VarKind::Continuous, 0.0, 1.0);
        let y = m.add_var("y", VarKind::Continuous, -10.0, 10.0);
        let line = PwlCurve1D::new(vec![(0.0, 0.0), (1.0, 2.0)]).unwrap();
        encode_pwl_constraint(&mut m, x, y, &line, "t").unwrap();
        assert_eq!(m.n_binaries(), 1);
        let wide = m.add_var("xw", VarKind::Continuous, -1.0, 1.0);
        assert!(matches!(
            encode_pwl_constraint(&mut m, wide, y, &line, "w"),
            Err(BuildError::DomainShortfall(_))
        ));
        let surf = crate::approx::triangulate_grid_2d(&[0.0, 1.0], &[0.0, 1.0], |a, b| Some(a * b)).unwrap();
        let mut m2 = AbstractModel::new();
        let (a, b, w) = (
            m2.add_var("a", VarKind::Continuous, 0.0, 1.0),
            m2.add_var("b", VarKind::Continuous, 0.0, 1.0),
            m2.add_var("w", VarKind::Continuous, 0.0, 1.0),
        );
        encode_pwl_2d_constraint(&mut m2, a, b, w, &surf, "s").unwrap();
        assert_eq!(m2.n_binaries(), 2);
        assert_eq!(m2.count_prefixed("lam_s_"), 6);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = FidelityConfig::lp_fixed_head();
        cfg.elevation = ElevationMode::Pwl(PwlFitOptions::epsilon(0.05));
        cfg.power = PowerMode::Pwl2d { q_points: 5, h_points: 3 };
        let text = toml::to_string(&cfg).unwrap();
        let back: FidelityConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let bad = text.replace("epsilon", "epsilonn");
        assert!(toml::from_str::<FidelityConfig>(&bad).is_err());
    }
}

//! Tier-level physics: the concrete curves, surfaces and bounds that a
//! [`FidelityConfig`] selects for a given system.
//!
//! The model builder and the enumeration oracle both work from the same
//! [`TierPhysics`], so they agree on every approximation by construction.

use crate::approx::{
    fit_pwl_1d_optimal, fit_pwl_1d_uniform, linspace, mccormick_envelope, minimax_line, triangulate_grid_2d,
    FitError, FitSpec, McCormickEnvelope, PwlCurve1D, PwlSurface2D,
};
use crate::domain::{CascadeSystem, DownstreamCoupling, HalfPlane, LossModel, PowerSurface, ZoneShape};
use crate::formulation::{
    BuildError, ElevationMode, FidelityConfig, HeadLossMode, PowerMode, PwlFitOptions, TailraceMode, ZonesMode,
};

const DENSE: usize = 1001;

/// A univariate relation as represented in the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Repr1 {
    Affine { intercept: f64, slope: f64 },
    Pwl(PwlCurve1D),
}

impl Repr1 {
    pub fn constant(value: f64) -> Self {
        Repr1::Affine { intercept: value, slope: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Repr1::Affine { intercept, slope } => intercept + slope * x,
            Repr1::Pwl(c) => c.evaluate(x),
        }
    }

    /// Value range over `[lo, hi]`.
    pub fn range(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self {
            Repr1::Affine { .. } => {
                let (a, b) = (self.eval(lo), self.eval(hi));
                (a.min(b), a.max(b))
            }
            Repr1::Pwl(c) => {
                let mut r = (c.evaluate(lo).min(c.evaluate(hi)), c.evaluate(lo).max(c.evaluate(hi)));
                for &(x, y) in c.breakpoints() {
                    if x > lo && x < hi {
                        r = (r.0.min(y), r.1.max(y));
                    }
                }
                r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailracePhysics {
    pub base: Repr1,
    /// Downstream reservoir index and coupling, only in the bivariate mode.
    pub coupling: Option<(usize, DownstreamCoupling)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PowerRepr {
    /// `P = k * Q`.
    Linear { k: f64 },
    /// `P = f(Q)` at the reference head.
    Pwl1d(PwlCurve1D),
    /// `P = f(Q, h)` on a triangulated grid.
    Surface(PwlSurface2D),
    /// `P = c * w` with `w` inside the McCormick envelope of `Q * h`.
    McCormick { c: f64, envelope: McCormickEnvelope },
}

/// Operating-region encoding chosen for one unit.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitZones {
    /// No commitment; `P <= p_cap`.
    Free { p_cap: f64 },
    /// On/off with `P in [u * p_lo, u * p_hi]`.
    Commit { p_lo: f64, p_hi: f64 },
    /// On/off with `P` inside one of the disjoint intervals.
    Intervals { intervals: Vec<(f64, f64)> },
    /// On/off with `(P, h)` inside one of the convex polygons.
    Polygons { polygons: Vec<Vec<HalfPlane>>, p_hi: f64 },
}

impl UnitZones {
    pub fn has_commitment(&self) -> bool {
        !matches!(self, UnitZones::Free { .. })
    }

    /// Membership test matching the model encoding.
    pub fn admits(&self, power: f64, head: f64, on: bool, tol: f64) -> bool {
        let tp = tol * (1.0 + power.abs());
        if !on {
            return power.abs() <= tp;
        }
        match self {
            UnitZones::Free { p_cap } => power <= p_cap + tp,
            UnitZones::Commit { p_lo, p_hi } => power >= p_lo - tp && power <= p_hi + tp,
            UnitZones::Intervals { intervals } => intervals.iter().any(|(lo, hi)| power >= lo - tp && power <= hi + tp),
            UnitZones::Polygons { polygons, p_hi } => {
                power <= p_hi + tp
                    && polygons.iter().any(|hp| hp.iter().all(|h| h.slack(power, head) >= -tol * (1.0 + h.c.abs())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirPhysics {
    pub elevation: Repr1,
    /// Whether the elevation is pinned (fixed-head tier).
    pub fixed_elevation: bool,
    pub tailrace: TailracePhysics,
    /// Upper bound on total release, m³/s.
    pub release_max: f64,
    /// Range of the modeled elevation, intersected with `[e_min, e_max]`.
    pub e_range: (f64, f64),
    pub tw_range: (f64, f64),
    /// Worst deviation from the exact curves over their domains, m.
    pub elevation_error: f64,
    pub tailrace_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitPhysics {
    pub reservoir: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub head_loss: Repr1,
    pub head_loss_error: f64,
    pub power: PowerRepr,
    pub h_range: (f64, f64),
    pub p_max: f64,
    pub zones: UnitZones,
    /// Head used by head-independent power modes.
    pub h_ref: f64,
}

impl UnitPhysics {
    /// Bounds placed on the net-head variable.
    pub fn head_bounds(&self) -> (f64, f64) {
        match &self.power {
            PowerRepr::Surface(s) => s.domain().1,
            _ if self.h_range.0 <= self.h_range.1 => self.h_range,
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Modeled power; `None` when the representation is a relaxation.
    pub fn power(&self, q: f64, h: f64) -> Option<f64> {
        match &self.power {
            PowerRepr::Linear { k } => Some(k * q),
            PowerRepr::Pwl1d(c) => Some(c.evaluate(q)),
            PowerRepr::Surface(s) => Some(s.evaluate(q, h)),
            PowerRepr::McCormick { .. } => None,
        }
    }
}

/// Tier physics for every reservoir and unit of a system.
#[derive(Debug, Clone, PartialEq)]
pub struct TierPhysics {
    pub reservoirs: Vec<ReservoirPhysics>,
    pub units: Vec<UnitPhysics>,
    pub order: Vec<usize>,
}

fn dense_error(repr: &Repr1, exact: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    linspace(lo, hi, DENSE).into_iter().map(|x| (repr.eval(x) - exact(x)).abs()).fold(0.0, f64::max)
}

fn fit_curve(
    opts: &PwlFitOptions,
    exact: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    what: &str,
) -> Result<PwlCurve1D, BuildError> {
    let wrap = |e: FitError| BuildError::Fit { entity: what.to_string(), source: e };
    if let Some(curve) = &opts.breakpoints {
        let (a, b) = curve.domain();
        let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        if a > lo + tol || b < hi - tol {
            return Err(BuildError::DomainShortfall(format!(
                "{what}: breakpoints cover [{a}, {b}] but [{lo}, {hi}] is required"
            )));
        }
        return Ok(curve.clone());
    }
    if !(hi > lo) {
        // zero-width range: a flat two-point curve is exact
        let y = exact(lo);
        return PwlCurve1D::new(vec![(lo, y), (lo + 1.0, y)]).map_err(wrap);
    }
    let samples: Vec<(f64, f64)> = linspace(lo, hi, opts.samples.max(2)).into_iter().map(|x| (x, exact(x))).collect();
    match (opts.pieces, opts.epsilon) {
        (Some(n), _) => fit_pwl_1d_uniform(&samples, n).map_err(wrap),
        (None, Some(eps)) => fit_pwl_1d_optimal(&samples, &FitSpec { epsilon: eps, max_pieces: opts.max_pieces }).map_err(wrap),
        (None, None) => fit_pwl_1d_uniform(&samples, PwlFitOptions::DEFAULT_PIECES).map_err(wrap),
    }
}

fn minimax_repr(exact: impl Fn(f64) -> f64, lo: f64, hi: f64, what: &str) -> Result<Repr1, BuildError> {
    if !(hi > lo) {
        return Ok(Repr1::constant(exact(lo)));
    }
    let samples: Vec<(f64, f64)> = linspace(lo, hi, 101).into_iter().map(|x| (x, exact(x))).collect();
    let (intercept, slope, _) =
        minimax_line(&samples).map_err(|e| BuildError::Fit { entity: what.to_string(), source: e })?;
    Ok(Repr1::Affine { intercept, slope })
}

impl TierPhysics {
    /// `inflows[r][t-1]` is the local inflow `W` of reservoir `r`.
    pub fn new(system: &CascadeSystem, inflows: &[Vec<f64>], config: &FidelityConfig) -> Result<Self, BuildError> {
        let order = system.topological_order().map_err(|e| BuildError::Topology(e.to_string()))?;
        let nr = system.reservoirs.len();
        let dt = system.time_grid.dt;

        // release bounds, upstream first
        let mut release_max = vec![0.0f64; nr];
        for &r in &order {
            let res = &system.reservoirs[r];
            let w_max = inflows.get(r).map_or(0.0, |w| w.iter().copied().fold(0.0, f64::max));
            let upstream: f64 = system
                .incoming(r)
                .iter()
                .map(|(u, arc)| release_max[*u].max(arc.routing.pre_horizon_release))
                .sum();
            let loss_min = match &res.losses {
                LossModel::None => 0.0,
                LossModel::Constant { values } => values.iter().copied().fold(0.0, f64::min),
                LossModel::LinearInStorage { .. } => res.losses.rate(1, res.v_min).min(res.losses.rate(1, res.v_max)),
            };
            release_max[r] = ((res.v_max - res.v_min) / dt + w_max + upstream - loss_min).max(0.0);
        }

        // elevation
        let mut elevations = Vec::with_capacity(nr);
        for res in &system.reservoirs {
            let exact = |v: f64| res.storage_to_elevation.eval(v);
            let (lo, hi) = (res.v_min, res.v_max);
            let (repr, fixed) = match &config.elevation {
                ElevationMode::FixedHead => (Repr1::constant(exact(res.v_initial)), true),
                ElevationMode::Linear => (minimax_repr(exact, lo, hi, &res.id)?, false),
                ElevationMode::Pwl(opts) => (Repr1::Pwl(fit_curve(opts, exact, lo, hi, &res.id)?), false),
            };
            let err = dense_error(&repr, exact, lo, hi);
            let (a, b) = repr.range(lo, hi);
            let e_range = if a.max(res.e_min) <= b.min(res.e_max) { (a.max(res.e_min), b.min(res.e_max)) } else { (a, b) };
            elevations.push((repr, fixed, err, e_range));
        }

        // tailrace
        let mut reservoirs = Vec::with_capacity(nr);
        for (r, res) in system.reservoirs.iter().enumerate() {
            let (qlo, qhi) = (0.0, release_max[r]);
            let units = system.units_of(r);
            let q_ref = 0.5 * units.iter().map(|&p| system.units[p].q_max).sum::<f64>();
            let down = system.downstream_of(r);
            let coupling_ref = match (res.tailrace.downstream, down) {
                (Some(c), Some(d)) => {
                    c.coefficient * (system.reservoirs[d].storage_to_elevation.eval(system.reservoirs[d].v_initial) - c.reference_elevation)
                }
                _ => 0.0,
            };
            let exact = |q: f64| res.tailrace.curve.eval(q);
            let base = match &config.tailrace {
                TailraceMode::Omit => Repr1::constant(0.0),
                TailraceMode::Constant => Repr1::constant(exact(q_ref) + coupling_ref),
                TailraceMode::Linear | TailraceMode::BivariateLinear => minimax_repr(exact, qlo, qhi, &res.id)?,
                TailraceMode::Pwl(opts) => Repr1::Pwl(fit_curve(opts, exact, qlo, qhi, &res.id)?),
            };
            let coupling = match (&config.tailrace, res.tailrace.downstream, down) {
                (TailraceMode::BivariateLinear, Some(c), Some(d)) => Some((d, c)),
                _ => None,
            };
            let mut err = dense_error(&base, exact, qlo, qhi);
            if coupling.is_none() && !matches!(config.tailrace, TailraceMode::Constant) {
                if let (Some(c), Some(d)) = (res.tailrace.downstream, down) {
                    // ignored coupling term counts as model error
                    let (elo, ehi) = elevations[d].3;
                    err += (c.coefficient * (elo - c.reference_elevation))
                        .abs()
                        .max((c.coefficient * (ehi - c.reference_elevation)).abs());
                }
            }
            let (mut tlo, mut thi) = base.range(qlo, qhi);
            if let Some((d, c)) = coupling {
                let (elo, ehi) = elevations[d].3;
                let (a, b) = (c.coefficient * (elo - c.reference_elevation), c.coefficient * (ehi - c.reference_elevation));
                tlo += a.min(b);
                thi += a.max(b);
            }
            let (repr, fixed, e_err, e_range) = elevations[r].clone();
            reservoirs.push(ReservoirPhysics {
                elevation: repr,
                fixed_elevation: fixed,
                tailrace: TailracePhysics { base, coupling },
                release_max: release_max[r],
                e_range,
                tw_range: (tlo, thi),
                elevation_error: e_err,
                tailrace_error: err,
            });
        }

        let fixed_power = matches!(config.power, PowerMode::LinearFixedHead);
        if fixed_power {
            let ok = matches!(config.elevation, ElevationMode::FixedHead)
                && matches!(config.head_loss, HeadLossMode::OmitLosses | HeadLossMode::ConstantLosses)
                && matches!(config.tailrace, TailraceMode::Omit | TailraceMode::Constant);
            if !ok {
                return Err(BuildError::Inconsistent(
                    "fixed-head power requires fixed-head elevation and constant or omitted losses and tailrace".into(),
                ));
            }
        }
        if matches!(config.zones, ZonesMode::HucPoz2d)
            && !system.units.iter().any(|u| matches!(u.zones.as_ref().map(|z| &z.shape), Some(ZoneShape::Zones2d { .. })))
        {
            return Err(BuildError::MissingData("huc_poz_2d zones require at least one unit with zones_2d data".into()));
        }

        let consts = system.constants;
        let mut units = Vec::with_capacity(system.units.len());
        for unit in &system.units {
            let r = system
                .reservoir_index(&unit.reservoir)
                .ok_or_else(|| BuildError::Topology(format!("unit {} references unknown reservoir", unit.id)))?;
            let res = &system.reservoirs[r];
            let rp = &reservoirs[r];
            let (qlo, qhi) = (0.0, unit.q_max);
            let exact_hl = |q: f64| unit.head_loss.eval(q);
            let q_mid = 0.5 * (unit.q_min + unit.q_max);
            let head_loss = match &config.head_loss {
                HeadLossMode::OmitLosses => Repr1::constant(0.0),
                HeadLossMode::ConstantLosses => Repr1::constant(exact_hl(q_mid)),
                HeadLossMode::Linear => minimax_repr(exact_hl, qlo, qhi, &unit.id)?,
                HeadLossMode::Pwl(opts) => Repr1::Pwl(fit_curve(opts, exact_hl, qlo, qhi, &unit.id)?),
            };
            let hl_err = dense_error(&head_loss, exact_hl, qlo, qhi);
            let (hl_lo, hl_hi) = head_loss.range(qlo, qhi);
            let h_lo = rp.e_range.0 - rp.tw_range.1 - hl_hi;
            let h_hi = rp.e_range.1 - rp.tw_range.0 - hl_lo;

            // reference head from the exact curves at the nominal operating point
            let units_here = system.units_of(r);
            let q_ref_total = 0.5 * units_here.iter().map(|&p| system.units[p].q_max).sum::<f64>();
            let coupling_ref = match (res.tailrace.downstream, system.downstream_of(r)) {
                (Some(c), Some(d)) => {
                    c.coefficient * (system.reservoirs[d].storage_to_elevation.eval(system.reservoirs[d].v_initial) - c.reference_elevation)
                }
                _ => 0.0,
            };
            let h_ref = match (&config.elevation, fixed_power) {
                (ElevationMode::FixedHead, _) => {
                    rp.elevation.eval(res.v_initial) - rp.tailrace.base.eval(q_ref_total) - head_loss.eval(q_mid)
                }
                _ => res.storage_to_elevation.eval(res.v_initial) - res.tailrace.curve.eval(q_ref_total) - coupling_ref - exact_hl(q_mid),
            };

            let exact_p = |q: f64, h: f64| unit.power.power_unlogged(&consts, q, h);
            let power = match &config.power {
                PowerMode::LinearFixedHead => {
                    let k = match unit.power {
                        PowerSurface::FixedEfficiency { efficiency } => consts.rho * consts.g * efficiency * h_ref / 1e6,
                        _ if unit.q_max > 0.0 => exact_p(unit.q_max, h_ref) / unit.q_max,
                        _ => 0.0,
                    };
                    PowerRepr::Linear { k }
                }
                PowerMode::Pwl1d(opts) => PowerRepr::Pwl1d(fit_curve(opts, |q| exact_p(q, h_ref), qlo, qhi, &unit.id)?),
                PowerMode::Pwl2d { q_points, h_points } => {
                    let (mut a, mut b) = (h_lo, h_hi);
                    if b - a < 1e-9 {
                        a -= 0.5;
                        b += 0.5;
                    }
                    let qg = if qhi > qlo { linspace(qlo, qhi, (*q_points).max(2)) } else { vec![qlo, qlo + 1.0] };
                    let hg = linspace(a, b, (*h_points).max(2));
                    let surface = triangulate_grid_2d(&qg, &hg, |q, h| Some(exact_p(q, h)))
                        .map_err(|e| BuildError::Fit { entity: unit.id.clone(), source: e })?;
                    PowerRepr::Surface(surface)
                }
                PowerMode::Mccormick => {
                    let PowerSurface::FixedEfficiency { efficiency } = unit.power else {
                        return Err(BuildError::MissingData(format!(
                            "unit {}: mccormick power requires a fixed-efficiency surface",
                            unit.id
                        )));
                    };
                    let envelope = mccormick_envelope((qlo, qhi), (h_lo, h_hi))
                        .map_err(|e| BuildError::Fit { entity: unit.id.clone(), source: e })?;
                    PowerRepr::McCormick { c: consts.rho * consts.g * efficiency / 1e6, envelope }
                }
            };
            let p_max = match &power {
                PowerRepr::Linear { k } => (k * unit.q_max).max(0.0),
                PowerRepr::Pwl1d(c) => c.range().1.max(0.0),
                PowerRepr::Surface(s) => s.value_range().1.max(0.0),
                PowerRepr::McCormick { c, .. } => (c * unit.q_max * h_hi).max(0.0),
            };

            let shape = unit.zones.as_ref().map(|z| &z.shape);
            let zones = match config.zones {
                ZonesMode::Convex => {
                    let cap = unit.zones.as_ref().map_or(p_max, |z| z.power_hull().1.min(p_max));
                    UnitZones::Free { p_cap: cap }
                }
                ZonesMode::HucOnly => match unit.zones.as_ref() {
                    Some(z) => {
                        let (lo, hi) = z.power_hull();
                        UnitZones::Commit { p_lo: lo, p_hi: hi.min(p_max) }
                    }
                    None => UnitZones::Commit { p_lo: 0.0, p_hi: p_max },
                },
                ZonesMode::HucPoz1d | ZonesMode::HucPoz2d => match shape {
                    Some(ZoneShape::Zones2d { polygons }) if matches!(config.zones, ZonesMode::HucPoz2d) => {
                        UnitZones::Polygons { polygons: polygons.iter().map(|p| p.half_planes()).collect(), p_hi: p_max }
                    }
                    Some(_) => UnitZones::Intervals { intervals: power_intervals(unit.zones.as_ref().unwrap()) },
                    None => UnitZones::Commit { p_lo: 0.0, p_hi: p_max },
                },
            };

            units.push(UnitPhysics {
                reservoir: r,
                q_min: unit.q_min,
                q_max: unit.q_max,
                head_loss,
                head_loss_error: hl_err,
                power,
                h_range: (h_lo, h_hi),
                p_max,
                zones,
                h_ref,
            });
        }
        Ok(Self { reservoirs, units, order })
    }

    /// Relative error of the modeled power against the exact surface, over
    /// points of the modeled `(Q, h)` box where the exact power is at least
    /// 10% of its maximum. `None` for relaxations.
    pub fn power_relative_error(&self, system: &CascadeSystem, unit: usize) -> Option<f64> {
        let up = &self.units[unit];
        let surf = &system.units[unit].power;
        let (h_lo, h_hi) = up.h_range;
        let qs = linspace(0.0, up.q_max, 41);
        let hs = linspace(h_lo, h_hi.max(h_lo), 41);
        let exact = |q: f64, h: f64| surf.power_unlogged(&system.constants, q, h);
        let p_top = qs.iter().flat_map(|q| hs.iter().map(move |h| (*q, *h))).map(|(q, h)| exact(q, h)).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for &q in &qs {
            for &h in &hs {
                let e = exact(q, h);
                if e >= 0.1 * p_top && e > 0.0 {
                    worst = worst.max((up.power(q, h)? - e).abs() / e);
                }
            }
        }
        Some(worst)
    }

    /// Declared relative bound on the power prediction error of a unit:
    /// surface error plus head error over the lowest modeled head.
    pub fn declared_bound(&self, system: &CascadeSystem, unit: usize) -> Option<f64> {
        let up = &self.units[unit];
        let rp = &self.reservoirs[up.reservoir];
        let surface = self.power_relative_error(system, unit)?;
        let head_err = rp.elevation_error + rp.tailrace_error + up.head_loss_error;
        let h_min = up.h_range.0;
        if h_min <= 0.0 {
            return None;
        }
        Some(surface + head_err / h_min)
    }
}

/// Power intervals of a zone set; 2-D polygons are projected on the power
/// axis and merged, which relaxes them.
pub fn power_intervals(zones: &crate::domain::OperatingZoneSet) -> Vec<(f64, f64)> {
    let mut ivs: Vec<(f64, f64)> = match &zones.shape {
        ZoneShape::Convex { p_min, p_max } => vec![(*p_min, *p_max)],
        ZoneShape::Intervals1d { intervals } => intervals.iter().map(|iv| (iv[0], iv[1])).collect(),
        ZoneShape::Zones2d { polygons } => polygons.iter().map(|p| p.power_range()).collect(),
    };
    ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for iv in ivs {
        match out.last_mut() {
            Some(last) if iv.0 <= last.1 => last.1 = last.1.max(iv.1),
            _ => out.push(iv),
        }
    }
    out
}

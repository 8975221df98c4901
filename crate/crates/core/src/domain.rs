//! Physical description of a cascading hydropower system.
//!
//! Everything here is plain data plus evaluation helpers. Units are SI
//! throughout: volumes in m³, discharges in m³/s, durations in s, levels
//! and heads in m. Power is stored in MW, so the hydropower equation
//! divides `rho * g * eta * Q * h` by 1e6.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::{RoutingMode, RoutingSpec};

/// Maximum polynomial degree accepted for a [`Curve1D::Polynomial`].
pub const MAX_POLYNOMIAL_DEGREE: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("invalid curve: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unresolved reservoir reference `{0}`")]
    UnresolvedReference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_g")]
    pub g: f64,
}

fn default_rho() -> f64 {
    1000.0
}

fn default_g() -> f64 {
    9.81
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { rho: default_rho(), g: default_g() }
    }
}

impl PhysicalConstants {
    /// Hydropower equation for a fixed efficiency, in MW.
    pub fn hydropower_mw(&self, efficiency: f64, discharge: f64, head: f64) -> f64 {
        self.rho * self.g * efficiency * discharge * head / 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub n_periods: usize,
    /// Period length in seconds.
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(n_periods: usize, dt: f64) -> Self {
        Self { n_periods, dt }
    }

    /// Converts an average power over one period (MW) to energy (MWh).
    pub fn mwh(&self, power_mw: f64) -> f64 {
        power_mw * self.dt / 3600.0
    }
}

/// A univariate relationship such as storage-to-elevation or a tailrace curve.
///
/// Tabulated and piecewise-linear curves interpolate linearly between their
/// points. Evaluation outside the domain clamps to the nearest bound and logs a
/// warning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Curve1D {
    Constant {
        value: f64,
    },
    Affine {
        intercept: f64,
        slope: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<[f64; 2]>,
    },
    /// Coefficients in ascending powers of x.
    Polynomial {
        coefficients: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<[f64; 2]>,
    },
    Tabulated {
        points: Vec<[f64; 2]>,
    },
    Pwl {
        points: Vec<[f64; 2]>,
    },
}

impl Default for Curve1D {
    fn default() -> Self {
        Curve1D::Constant { value: 0.0 }
    }
}

impl Curve1D {
    pub fn constant(value: f64) -> Self {
        Curve1D::Constant { value }
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        Curve1D::Affine { intercept, slope, domain: None }
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Self {
        Curve1D::Tabulated { points: points.into_iter().map(|(x, y)| [x, y]).collect() }
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        match self {
            Curve1D::Constant { value } => finite(&[*value]),
            Curve1D::Affine { intercept, slope, domain } => {
                finite(&[*intercept, *slope])?;
                check_domain(domain)
            }
            Curve1D::Polynomial { coefficients, domain } => {
                if coefficients.is_empty() {
                    return Err(CurveError::Invalid("polynomial without coefficients".into()));
                }
                if coefficients.len() > MAX_POLYNOMIAL_DEGREE + 1 {
                    return Err(CurveError::Invalid(format!(
                        "polynomial degree {} exceeds {MAX_POLYNOMIAL_DEGREE}",
                        coefficients.len() - 1
                    )));
                }
                finite(coefficients)?;
                check_domain(domain)
            }
            Curve1D::Tabulated { points } | Curve1D::Pwl { points } => {
                if points.is_empty() {
                    return Err(CurveError::Invalid("empty tabulation".into()));
                }
                for p in points {
                    finite(p)?;
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(CurveError::Invalid("abscissae must be strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    /// Closed evaluation domain; unbounded ends are infinite.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Curve1D::Constant { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Curve1D::Affine { domain, .. } | Curve1D::Polynomial { domain, .. } => {
                domain.map_or((f64::NEG_INFINITY, f64::INFINITY), |[lo, hi]| (lo, hi))
            }
            Curve1D::Tabulated { points } | Curve1D::Pwl { points } => match (points.first(), points.last()) {
                (Some(a), Some(b)) => (a[0], b[0]),
                _ => (f64::NAN, f64::NAN),
            },
        }
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        let (a, b) = self.domain();
        let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        a <= lo + tol && b >= hi - tol
    }

    /// Evaluates the curve, clamping `x` into the domain.
    pub fn evaluate(&self, x: f64) -> Result<f64, CurveError> {
        let (lo, hi) = self.domain();
        let xc = if x < lo || x > hi {
            let c = x.clamp(lo, hi);
            if (c - x).abs() > 1e-9 * (1.0 + x.abs()) {
                log::warn!("curve evaluated at {x} outside domain [{lo}, {hi}], clamped");
            }
            c
        } else {
            x
        };
        match self {
            Curve1D::Constant { value } => Ok(*value),
            Curve1D::Affine { intercept, slope, .. } => Ok(intercept + slope * xc),
            Curve1D::Polynomial { coefficients, .. } => {
                if coefficients.is_empty() {
                    return Err(CurveError::Invalid("polynomial without coefficients".into()));
                }
                Ok(coefficients.iter().rev().fold(0.0, |acc, c| acc * xc + c))
            }
            Curve1D::Tabulated { points } | Curve1D::Pwl { points } => {
                if points.is_empty() {
                    return Err(CurveError::Invalid("empty tabulation".into()));
                }
                Ok(interpolate(points, xc))
            }
        }
    }

    /// Evaluation that treats an invalid curve as zero; for curves that already
    /// passed validation.
    pub(crate) fn eval(&self, x: f64) -> f64 {
        self.evaluate(x).unwrap_or(0.0)
    }

    /// Checks that the curve does not decrease on `[lo, hi]`.
    pub fn is_nondecreasing_on(&self, lo: f64, hi: f64) -> bool {
        let tol = 1e-9;
        match self {
            Curve1D::Constant { .. } => true,
            Curve1D::Affine { slope, .. } => *slope >= 0.0,
            Curve1D::Tabulated { points } | Curve1D::Pwl { points } => {
                let mut xs: Vec<f64> = points.iter().map(|p| p[0]).filter(|x| *x > lo && *x < hi).collect();
                xs.insert(0, lo);
                xs.push(hi);
                let ys: Vec<f64> = xs.iter().map(|x| self.eval(*x)).collect();
                ys.windows(2).all(|w| w[1] >= w[0] - tol * (1.0 + w[0].abs()))
            }
            Curve1D::Polynomial { .. } => {
                let n = 2000;
                let ys: Vec<f64> = (0..=n).map(|i| self.eval(lo + (hi - lo) * i as f64 / n as f64)).collect();
                ys.windows(2).all(|w| w[1] >= w[0] - tol * (1.0 + w[0].abs()))
            }
        }
    }
}

fn finite(values: &[f64]) -> Result<(), CurveError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CurveError::Invalid("non-finite coefficient".into()))
    }
}

fn check_domain(domain: &Option<[f64; 2]>) -> Result<(), CurveError> {
    match domain {
        Some([lo, hi]) if !(lo <= hi) => Err(CurveError::Invalid(format!("inverted domain [{lo}, {hi}]"))),
        _ => Ok(()),
    }
}

/// Linear interpolation on sorted points, clamping outside.
pub(crate) fn interpolate(points: &[[f64; 2]], x: f64) -> f64 {
    let n = points.len();
    if n == 1 || x <= points[0][0] {
        return points[0][1];
    }
    if x >= points[n - 1][0] {
        return points[n - 1][1];
    }
    let k = points.partition_point(|p| p[0] <= x);
    let [x0, y0] = points[k - 1];
    let [x1, y1] = points[k];
    if x == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Index `i` with `axis[i] <= x <= axis[i + 1]` and the fractional position.
pub(crate) fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    if n < 2 {
        return (0, 0.0);
    }
    let xc = x.clamp(axis[0], axis[n - 1]);
    let i = axis.partition_point(|a| *a <= xc).clamp(1, n - 1) - 1;
    let frac = (xc - axis[i]) / (axis[i + 1] - axis[i]);
    (i, frac)
}

fn bilinear(q_axis: &[f64], h_axis: &[f64], grid: &[Vec<f64>], q: f64, h: f64) -> f64 {
    let (i, s) = bracket(q_axis, q);
    let (j, u) = bracket(h_axis, h);
    if q_axis.len() < 2 || h_axis.len() < 2 {
        return grid[0][0];
    }
    let f00 = grid[i][j];
    let f10 = grid[i + 1][j];
    let f01 = grid[i][j + 1];
    let f11 = grid[i + 1][j + 1];
    f00 * (1.0 - s) * (1.0 - u) + f10 * s * (1.0 - u) + f01 * (1.0 - s) * u + f11 * s * u
}

/// Power output as a function of turbined discharge and net head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerSurface {
    FixedEfficiency {
        efficiency: f64,
    },
    /// `power[i][j]` in MW at `discharge[i]`, `head[j]`.
    PowerGrid {
        discharge: Vec<f64>,
        head: Vec<f64>,
        power: Vec<Vec<f64>>,
    },
    /// `efficiency[i][j]` at `discharge[i]`, `head[j]`.
    EfficiencyGrid {
        discharge: Vec<f64>,
        head: Vec<f64>,
        efficiency: Vec<Vec<f64>>,
    },
}

impl PowerSurface {
    pub fn validate(&self) -> Result<(), CurveError> {
        match self {
            PowerSurface::FixedEfficiency { efficiency } => {
                if *efficiency > 0.0 && *efficiency <= 1.0 {
                    Ok(())
                } else {
                    Err(CurveError::Invalid(format!("efficiency {efficiency} outside (0, 1]")))
                }
            }
            PowerSurface::PowerGrid { discharge, head, power } => {
                check_grid(discharge, head, power)?;
                if power.iter().flatten().any(|p| *p < 0.0) {
                    return Err(CurveError::Invalid("negative power in grid".into()));
                }
                Ok(())
            }
            PowerSurface::EfficiencyGrid { discharge, head, efficiency } => {
                check_grid(discharge, head, efficiency)?;
                if efficiency.iter().flatten().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                    return Err(CurveError::Invalid("efficiency grid value outside (0, 1]".into()));
                }
                Ok(())
            }
        }
    }

    /// Discharge range covered by a tabulated surface.
    pub fn discharge_domain(&self) -> (f64, f64) {
        match self {
            PowerSurface::FixedEfficiency { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            PowerSurface::PowerGrid { discharge, .. } | PowerSurface::EfficiencyGrid { discharge, .. } => {
                (discharge[0], discharge[discharge.len() - 1])
            }
        }
    }

    /// Realized power in MW. No flow or no head produces no power.
    pub fn power(&self, constants: &PhysicalConstants, discharge: f64, head: f64) -> f64 {
        self.power_impl(constants, discharge, head, true)
    }

    /// Same as [`PowerSurface::power`] without the out-of-grid warning, for
    /// dense sampling.
    pub(crate) fn power_unlogged(&self, constants: &PhysicalConstants, discharge: f64, head: f64) -> f64 {
        self.power_impl(constants, discharge, head, false)
    }

    fn power_impl(&self, constants: &PhysicalConstants, discharge: f64, head: f64, warn: bool) -> f64 {
        if discharge <= 0.0 || head <= 0.0 {
            return 0.0;
        }
        match self {
            PowerSurface::FixedEfficiency { efficiency } => constants.hydropower_mw(*efficiency, discharge, head),
            PowerSurface::PowerGrid { discharge: qa, head: ha, power } => {
                if warn {
                    warn_outside(qa, ha, discharge, head);
                }
                bilinear(qa, ha, power, discharge, head).max(0.0)
            }
            PowerSurface::EfficiencyGrid { discharge: qa, head: ha, efficiency } => {
                if warn {
                    warn_outside(qa, ha, discharge, head);
                }
                let eta = bilinear(qa, ha, efficiency, discharge, head);
                constants.hydropower_mw(eta, discharge, head)
            }
        }
    }
}

fn warn_outside(qa: &[f64], ha: &[f64], q: f64, h: f64) {
    let out = |a: &[f64], x: f64| x < a[0] - 1e-9 || x > a[a.len() - 1] + 1e-9;
    if out(qa, q) || out(ha, h) {
        log::warn!("power surface evaluated at ({q}, {h}) outside its grid, clamped");
    }
}

fn check_grid(xs: &[f64], ys: &[f64], values: &[Vec<f64>]) -> Result<(), CurveError> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(CurveError::Invalid("grid axes need at least 2 points".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CurveError::Invalid("grid axes must be strictly increasing".into()));
    }
    if values.len() != xs.len() || values.iter().any(|row| row.len() != ys.len()) {
        return Err(CurveError::Invalid("grid values do not match axis sizes".into()));
    }
    finite(&values.iter().flatten().copied().collect::<Vec<_>>())
}

/// Convex polygon in the (power, head) plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polygon {
    /// Vertices as `[power_mw, head_m]`, in either orientation.
    pub vertices: Vec<[f64; 2]>,
}

/// Half-plane `a * P + b * h <= c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HalfPlane {
    pub fn slack(&self, p: f64, h: f64) -> f64 {
        self.c - self.a * p - self.b * h
    }
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n).map(|i| {
            let j = (i + 1) % n;
            v[i][0] * v[j][1] - v[j][0] * v[i][1]
        })
        .sum::<f64>()
            / 2.0
    }

    pub fn is_convex(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 || self.signed_area().abs() < 1e-12 {
            return false;
        }
        let mut sign = 0.0;
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            let c = v[(i + 2) % n];
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if cross.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }

    /// Supporting half-planes, normalized so each normal has unit length.
    pub fn half_planes(&self) -> Vec<HalfPlane> {
        let v = &self.vertices;
        let n = v.len();
        let ccw = self.signed_area() > 0.0;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (p0, p1) = if ccw { (v[i], v[(i + 1) % n]) } else { (v[(i + 1) % n], v[i]) };
            // interior lies to the left of p0 -> p1
            let (dx, dy) = (p1[0] - p0[0], p1[1] - p0[1]);
            let len = (dx * dx + dy * dy).sqrt();
            if len == 0.0 {
                continue;
            }
            let (a, b) = (dy / len, -dx / len);
            out.push(HalfPlane { a, b, c: a * p0[0] + b * p0[1] });
        }
        out
    }

    pub fn contains(&self, p: f64, h: f64, tol: f64) -> bool {
        self.half_planes().iter().all(|hp| hp.slack(p, h) >= -tol)
    }

    /// Euclidean distance from `(p, h)` to the polygon; zero inside.
    pub fn distance(&self, p: f64, h: f64) -> f64 {
        if self.contains(p, h, 0.0) {
            return 0.0;
        }
        let v = &self.vertices;
        let n = v.len();
        (0..n)
            .map(|i| segment_distance(v[i], v[(i + 1) % n], [p, h]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn power_range(&self) -> (f64, f64) {
        let lo = self.vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let hi = self.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Shape of the feasible operating region of a unit, excluding the offline point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZoneShape {
    Convex { p_min: f64, p_max: f64 },
    /// Disjoint, sorted `[P_lo, P_hi]` intervals in MW.
    Intervals1d { intervals: Vec<[f64; 2]> },
    Zones2d { polygons: Vec<Polygon> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingZoneSet {
    pub shape: ZoneShape,
    #[serde(default)]
    pub commitment: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_cost: Option<f64>,
}

impl OperatingZoneSet {
    pub fn intervals(intervals: Vec<[f64; 2]>) -> Self {
        Self { shape: ZoneShape::Intervals1d { intervals }, commitment: true, startup_cost: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        match &self.shape {
            ZoneShape::Convex { p_min, p_max } => {
                if !(0.0 <= *p_min && p_min <= p_max) {
                    return Err(format!("convex zone [{p_min}, {p_max}] invalid"));
                }
            }
            ZoneShape::Intervals1d { intervals } => {
                if intervals.is_empty() {
                    return Err("empty interval list".into());
                }
                for iv in intervals {
                    if !(0.0 <= iv[0] && iv[0] <= iv[1] && iv[1].is_finite()) {
                        return Err(format!("interval [{}, {}] invalid", iv[0], iv[1]));
                    }
                }
                if intervals.windows(2).any(|w| w[1][0] <= w[0][1]) {
                    return Err("intervals must be disjoint and sorted".into());
                }
            }
            ZoneShape::Zones2d { polygons } => {
                if polygons.is_empty() {
                    return Err("empty polygon list".into());
                }
                for (k, poly) in polygons.iter().enumerate() {
                    if poly.vertices.len() < 3 || !poly.is_convex() {
                        return Err(format!("polygon {k} is not a convex polygon with >= 3 vertices"));
                    }
                    if poly.power_range().0 < 0.0 {
                        return Err(format!("polygon {k} includes negative power"));
                    }
                }
            }
        }
        if let Some(c) = self.startup_cost {
            if !(c >= 0.0) {
                return Err(format!("startup cost {c} must be >= 0"));
            }
        }
        Ok(())
    }

    /// Smallest and largest power in the zone union (offline point excluded).
    pub fn power_hull(&self) -> (f64, f64) {
        match &self.shape {
            ZoneShape::Convex { p_min, p_max } => (*p_min, *p_max),
            ZoneShape::Intervals1d { intervals } => (
                intervals.first().map_or(0.0, |iv| iv[0]),
                intervals.last().map_or(0.0, |iv| iv[1]),
            ),
            ZoneShape::Zones2d { polygons } => polygons.iter().map(Polygon::power_range).fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), (a, b)| (lo.min(a), hi.max(b)),
            ),
        }
    }

    /// Distance from an operating point to the closest allowed state; the
    /// offline point `P = 0` is always allowed.
    pub fn violation(&self, power: f64, head: f64) -> f64 {
        if power.abs() <= 1e-9 {
            return 0.0;
        }
        let to_zero = power.abs();
        let d = match &self.shape {
            ZoneShape::Convex { p_min, p_max } => interval_distance(power, *p_min, *p_max),
            ZoneShape::Intervals1d { intervals } => intervals
                .iter()
                .map(|iv| interval_distance(power, iv[0], iv[1]))
                .fold(f64::INFINITY, f64::min),
            ZoneShape::Zones2d { polygons } => {
                polygons.iter().map(|poly| poly.distance(power, head)).fold(f64::INFINITY, f64::min)
            }
        };
        d.min(to_zero)
    }
}

fn interval_distance(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

/// Downstream-elevation term of a bivariate tailrace:
/// `coefficient * (E_downstream - reference_elevation)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamCoupling {
    pub coefficient: f64,
    pub reference_elevation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tailrace {
    /// Tailwater level as a function of total reservoir discharge.
    #[serde(default)]
    pub curve: Curve1D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream: Option<DownstreamCoupling>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossModel {
    #[default]
    None,
    /// One loss rate (m³/s) per period.
    Constant { values: Vec<f64> },
    /// `intercept + coefficient * V_{t-1}` in m³/s.
    LinearInStorage { intercept: f64, coefficient: f64 },
}

impl LossModel {
    /// Loss rate in period `t` (1-based) given the storage at the start of the period.
    pub fn rate(&self, t: usize, start_storage: f64) -> f64 {
        match self {
            LossModel::None => 0.0,
            LossModel::Constant { values } => values.get(t - 1).copied().unwrap_or(0.0),
            LossModel::LinearInStorage { intercept, coefficient } => intercept + coefficient * start_storage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reservoir {
    pub id: String,
    pub v_min: f64,
    pub v_max: f64,
    pub v_initial: f64,
    /// Lower bound on end-of-horizon storage; defaults to `v_min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_terminal: Option<f64>,
    pub e_min: f64,
    pub e_max: f64,
    pub storage_to_elevation: Curve1D,
    #[serde(default)]
    pub tailrace: Tailrace,
    #[serde(default)]
    pub losses: LossModel,
}

impl Reservoir {
    pub fn terminal_floor(&self) -> f64 {
        self.v_terminal.map_or(self.v_min, |v| v.max(self.v_min))
    }

    pub fn elevation(&self, volume: f64) -> f64 {
        self.storage_to_elevation.eval(volume)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratingUnit {
    pub id: String,
    pub reservoir: String,
    pub q_min: f64,
    pub q_max: f64,
    pub power: PowerSurface,
    /// Penstock head loss as a function of unit discharge.
    #[serde(default)]
    pub head_loss: Curve1D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<OperatingZoneSet>,
    #[serde(default)]
    pub initially_online: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydraulicArc {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub routing: RoutingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSystem {
    #[serde(default)]
    pub constants: PhysicalConstants,
    pub time_grid: TimeGrid,
    pub reservoirs: Vec<Reservoir>,
    #[serde(default)]
    pub units: Vec<GeneratingUnit>,
    #[serde(default)]
    pub arcs: Vec<HydraulicArc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    CycleDetected,
    UnresolvedReference,
    MultipleDownstream,
    DuplicateId,
    InvalidIdentifier,
    InvalidBounds,
    InvalidCurve,
    DomainShortfall,
    NonMonotoneCurve,
    InvalidZones,
    InvalidRouting,
    InvalidTimeGrid,
    InvalidConstants,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub kind: IssueKind,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }

    fn error(&mut self, kind: IssueKind, message: impl Into<String>) {
        self.issues.push(ValidationIssue { severity: Severity::Error, kind, message: message.into() });
    }

    fn warn(&mut self, kind: IssueKind, message: impl Into<String>) {
        self.issues.push(ValidationIssue { severity: Severity::Warning, kind, message: message.into() });
    }
}

pub(crate) fn is_identifier(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl CascadeSystem {
    pub fn n_periods(&self) -> usize {
        self.time_grid.n_periods
    }

    pub fn reservoir_index(&self, id: &str) -> Option<usize> {
        self.reservoirs.iter().position(|r| r.id == id)
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.id == id)
    }

    /// Indices of the units attached to reservoir `r`.
    pub fn units_of(&self, r: usize) -> Vec<usize> {
        let id = &self.reservoirs[r].id;
        self.units.iter().enumerate().filter(|(_, u)| &u.reservoir == id).map(|(i, _)| i).collect()
    }

    /// Index of the reservoir immediately downstream of `r`, if any.
    pub fn downstream_of(&self, r: usize) -> Option<usize> {
        let id = &self.reservoirs[r].id;
        self.arcs.iter().find(|a| &a.from == id).and_then(|a| self.reservoir_index(&a.to))
    }

    /// Arcs entering reservoir `r`, paired with the index of their source.
    pub fn incoming(&self, r: usize) -> Vec<(usize, &HydraulicArc)> {
        let id = &self.reservoirs[r].id;
        self.arcs
            .iter()
            .filter(|a| &a.to == id)
            .filter_map(|a| self.reservoir_index(&a.from).map(|i| (i, a)))
            .collect()
    }

    pub fn has_outgoing(&self, r: usize) -> bool {
        let id = &self.reservoirs[r].id;
        self.arcs.iter().any(|a| &a.from == id)
    }

    /// Reservoir indices ordered upstream before downstream, ties broken by
    /// ascending id.
    pub fn topological_order(&self) -> Result<Vec<usize>, TopologyError> {
        let n = self.reservoirs.len();
        let mut indeg = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for arc in &self.arcs {
            let from = self
                .reservoir_index(&arc.from)
                .ok_or_else(|| TopologyError::UnresolvedReference(arc.from.clone()))?;
            let to =
                self.reservoir_index(&arc.to).ok_or_else(|| TopologyError::UnresolvedReference(arc.to.clone()))?;
            out[from].push(to);
            indeg[to] += 1;
        }
        let mut ready: BinaryHeap<Reverse<(&str, usize)>> = (0..n)
            .filter(|&i| indeg[i] == 0)
            .map(|i| Reverse((self.reservoirs[i].id.as_str(), i)))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &j in &out[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(Reverse((self.reservoirs[j].id.as_str(), j)));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(TopologyError::Cycle(self.find_cycle(&out, &indeg)))
        }
    }

    fn find_cycle(&self, out: &[Vec<usize>], indeg: &[usize]) -> Vec<String> {
        // walk forward inside the unresolved set until a node repeats
        let Some(start) = (0..out.len()).find(|&i| indeg[i] > 0) else {
            return Vec::new();
        };
        let mut seen: Vec<usize> = Vec::new();
        let mut node = start;
        loop {
            if let Some(pos) = seen.iter().position(|&s| s == node) {
                let mut cycle: Vec<String> = seen[pos..].iter().map(|&i| self.reservoirs[i].id.clone()).collect();
                cycle.push(self.reservoirs[node].id.clone());
                return cycle;
            }
            seen.push(node);
            match out[node].iter().find(|&&j| indeg[j] > 0) {
                Some(&next) => node = next,
                None => return seen.iter().map(|&i| self.reservoirs[i].id.clone()).collect(),
            }
        }
    }

    /// Structural checks. Problems are collected, never thrown.
    pub fn validate_topology(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let c = &self.constants;
        if !(c.rho > 0.0 && c.g > 0.0) {
            report.error(IssueKind::InvalidConstants, "rho and g must be positive");
        }
        if self.time_grid.n_periods < 1 || !(self.time_grid.dt > 0.0) {
            report.error(IssueKind::InvalidTimeGrid, "time grid needs n_periods >= 1 and dt > 0");
        }

        let mut ids = BTreeSet::new();
        for r in &self.reservoirs {
            if !ids.insert(r.id.as_str()) {
                report.error(IssueKind::DuplicateId, format!("duplicate reservoir id `{}`", r.id));
            }
            if !is_identifier(&r.id) {
                report.error(IssueKind::InvalidIdentifier, format!("reservoir id `{}` is not an identifier", r.id));
            }
            self.validate_reservoir(r, &mut report);
        }
        let mut unit_ids = BTreeSet::new();
        for u in &self.units {
            if !unit_ids.insert(u.id.as_str()) {
                report.error(IssueKind::DuplicateId, format!("duplicate unit id `{}`", u.id));
            }
            if !is_identifier(&u.id) {
                report.error(IssueKind::InvalidIdentifier, format!("unit id `{}` is not an identifier", u.id));
            }
            self.validate_unit(u, &mut report);
        }

        let mut downstream: BTreeMap<&str, usize> = BTreeMap::new();
        let mut arcs_ok = true;
        for arc in &self.arcs {
            for end in [&arc.from, &arc.to] {
                if self.reservoir_index(end).is_none() {
                    arcs_ok = false;
                    report.error(IssueKind::UnresolvedReference, format!("unresolved reservoir reference `{end}` in arc"));
                }
            }
            *downstream.entry(arc.from.as_str()).or_default() += 1;
            if let Err(msg) = arc.routing.validate() {
                report.error(IssueKind::InvalidRouting, format!("arc {} -> {}: {msg}", arc.from, arc.to));
            }
            if let RoutingMode::Convolution { kernel } = &arc.routing.mode {
                let sum: f64 = kernel.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    report.warn(
                        IssueKind::InvalidRouting,
                        format!("arc {} -> {}: kernel sums to {sum}, not 1", arc.from, arc.to),
                    );
                }
            }
        }
        for (from, count) in downstream {
            if count > 1 {
                report.error(IssueKind::MultipleDownstream, format!("reservoir `{from}` has {count} downstream arcs"));
            }
        }
        if arcs_ok {
            if let Err(TopologyError::Cycle(cycle)) = self.topological_order() {
                report.error(IssueKind::CycleDetected, format!("cycle detected: {}", cycle.join(" -> ")));
            }
        }
        report
    }

    fn validate_reservoir(&self, r: &Reservoir, report: &mut ValidationReport) {
        let id = &r.id;
        if !(r.v_min <= r.v_initial && r.v_initial <= r.v_max) {
            report.error(IssueKind::InvalidBounds, format!("reservoir `{id}`: need v_min <= v_initial <= v_max"));
        }
        if let Some(vt) = r.v_terminal {
            if vt > r.v_max {
                report.error(IssueKind::InvalidBounds, format!("reservoir `{id}`: v_terminal above v_max"));
            }
        }
        if !(r.e_min <= r.e_max) {
            report.error(IssueKind::InvalidBounds, format!("reservoir `{id}`: need e_min <= e_max"));
        }
        match r.storage_to_elevation.validate() {
            Err(e) => report.error(IssueKind::InvalidCurve, format!("reservoir `{id}` storage_to_elevation: {e}")),
            Ok(()) => {
                if !r.storage_to_elevation.covers(r.v_min, r.v_max) {
                    report.error(
                        IssueKind::DomainShortfall,
                        format!("reservoir `{id}`: storage_to_elevation does not cover [v_min, v_max]"),
                    );
                }
                if !r.storage_to_elevation.is_nondecreasing_on(r.v_min, r.v_max) {
                    report.error(
                        IssueKind::NonMonotoneCurve,
                        format!("reservoir `{id}`: storage_to_elevation decreases on [v_min, v_max]"),
                    );
                }
            }
        }
        if let Err(e) = r.tailrace.curve.validate() {
            report.error(IssueKind::InvalidCurve, format!("reservoir `{id}` tailrace: {e}"));
        }
        if r.tailrace.downstream.is_some() {
            let idx = self.reservoir_index(id);
            if idx.and_then(|i| self.downstream_of(i)).is_none() {
                report.error(
                    IssueKind::UnresolvedReference,
                    format!("reservoir `{id}`: bivariate tailrace without a downstream reservoir"),
                );
            }
        }
        let cover = self.total_turbine_capacity(id);
        if cover > 0.0 && !r.tailrace.curve.covers(0.0, cover) {
            report.warn(
                IssueKind::DomainShortfall,
                format!("reservoir `{id}`: tailrace curve does not cover [0, {cover}]"),
            );
        }
        if let LossModel::Constant { values } = &r.losses {
            if values.len() != self.time_grid.n_periods {
                report.error(IssueKind::InvalidBounds, format!("reservoir `{id}`: loss series length != n_periods"));
            }
        }
    }

    fn validate_unit(&self, u: &GeneratingUnit, report: &mut ValidationReport) {
        let id = &u.id;
        if self.reservoir_index(&u.reservoir).is_none() {
            report.error(
                IssueKind::UnresolvedReference,
                format!("unresolved reservoir reference `{}` in unit `{id}`", u.reservoir),
            );
        }
        if !(0.0 <= u.q_min && u.q_min <= u.q_max && u.q_max.is_finite()) {
            report.error(IssueKind::InvalidBounds, format!("unit `{id}`: need 0 <= q_min <= q_max"));
        }
        match u.power.validate() {
            Err(e) => report.error(IssueKind::InvalidCurve, format!("unit `{id}` power surface: {e}")),
            Ok(()) => {
                let (lo, hi) = u.power.discharge_domain();
                if lo > u.q_min + 1e-9 || hi < u.q_max - 1e-9 {
                    report.error(
                        IssueKind::DomainShortfall,
                        format!("unit `{id}`: power surface does not cover [q_min, q_max]"),
                    );
                }
            }
        }
        match u.head_loss.validate() {
            Err(e) => report.error(IssueKind::InvalidCurve, format!("unit `{id}` head_loss: {e}")),
            Ok(()) => {
                if !u.head_loss.covers(u.q_min, u.q_max) {
                    report.error(
                        IssueKind::DomainShortfall,
                        format!("unit `{id}`: head_loss does not cover [q_min, q_max]"),
                    );
                }
            }
        }
        if let Some(z) = &u.zones {
            if let Err(msg) = z.validate() {
                report.error(IssueKind::InvalidZones, format!("unit `{id}`: {msg}"));
            }
        }
    }

    fn total_turbine_capacity(&self, reservoir: &str) -> f64 {
        self.units.iter().filter(|u| u.reservoir == reservoir).map(|u| u.q_max).sum()
    }
}

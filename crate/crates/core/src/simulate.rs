//! Replays a schedule through the exact nonlinear physics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CascadeSystem;
use crate::schedule::Schedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("schedule has {got} periods, system has {expected}")]
    Periods { expected: usize, got: usize },
    #[error("schedule has no entry for {0}")]
    MissingEntity(String),
    #[error("series for {entity} has {got} values, expected {expected}")]
    SeriesLength { entity: String, expected: usize, got: usize },
    #[error("expected inflow series for {expected} reservoirs, got {got}")]
    InflowCount { expected: usize, got: usize },
    #[error("schedule period length {schedule} differs from system {system}")]
    PeriodLength { schedule: f64, system: f64 },
    #[error("topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    StorageBelowMin,
    StorageAboveMax,
    TerminalStorage,
    ElevationBelowMin,
    ElevationAboveMax,
    Zone,
    NonPositiveHead,
    DischargeAboveMax,
    DischargeBelowMin,
    /// Water turbined while the unit is reported offline.
    Commitment,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::StorageBelowMin => "storage_below_min",
            ViolationKind::StorageAboveMax => "storage_above_max",
            ViolationKind::TerminalStorage => "terminal_storage",
            ViolationKind::ElevationBelowMin => "elevation_below_min",
            ViolationKind::ElevationAboveMax => "elevation_above_max",
            ViolationKind::Zone => "zone",
            ViolationKind::NonPositiveHead => "non_positive_head",
            ViolationKind::DischargeAboveMax => "discharge_above_max",
            ViolationKind::DischargeBelowMin => "discharge_below_min",
            ViolationKind::Commitment => "commitment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub entity: String,
    pub period: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirTrajectory {
    pub id: String,
    /// End-of-period storage, m³.
    pub storage: Vec<f64>,
    /// Elevation at the average storage of each period, m.
    pub elevation: Vec<f64>,
    /// Total inflow, m³/s.
    pub inflow: Vec<f64>,
    /// Total release, m³/s.
    pub release: Vec<f64>,
    pub tailwater: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTrajectory {
    pub id: String,
    pub head: Vec<f64>,
    /// Realized power, MW.
    pub power: Vec<f64>,
}

/// Volume terms of the horizon water balance, m³.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MassBalance {
    pub storage_change: f64,
    pub local_inflow: f64,
    pub losses: f64,
    /// Release of reservoirs without a downstream arc.
    pub terminal_outflow: f64,
    /// Released inside the horizon, arriving after it.
    pub in_transit: f64,
    /// Released before the horizon, arriving inside it.
    pub pre_horizon: f64,
    /// Water added by clamping storage to its minimum.
    pub clamped: f64,
}

impl MassBalance {
    pub fn residual(&self) -> f64 {
        self.storage_change
            - (self.local_inflow - self.losses - self.terminal_outflow - self.in_transit + self.pre_horizon + self.clamped)
    }

    pub fn relative_residual(&self) -> f64 {
        let scale = [
            self.storage_change,
            self.local_inflow,
            self.losses,
            self.terminal_outflow,
            self.in_transit,
            self.pre_horizon,
            self.clamped,
        ]
        .iter()
        .map(|x| x.abs())
        .fold(1.0, f64::max);
        self.residual().abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub reservoirs: Vec<ReservoirTrajectory>,
    pub units: Vec<UnitTrajectory>,
    pub violations: Vec<Violation>,
    /// MWh.
    pub energy_realized: f64,
    /// MWh.
    pub energy_predicted: f64,
    pub gap_percent: f64,
    pub mass_balance: MassBalance,
}

impl SimulationReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// `100 (predicted - realized) / realized`; infinite when nothing is realized
/// but something was predicted, 0 when both vanish.
pub fn gap_percent(predicted: f64, realized: f64) -> f64 {
    if realized > 0.0 {
        100.0 * (predicted - realized) / realized
    } else if predicted.abs() > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

const ZONE_TOL: f64 = 1e-6;
const FLOW_TOL: f64 = 1e-9;

/// Simulates `schedule` on `system` with local inflows `inflows[r][t-1]`.
pub fn simulate(system: &CascadeSystem, schedule: &Schedule, inflows: &[Vec<f64>]) -> Result<SimulationReport, SimError> {
    let t_n = system.n_periods();
    let dt = system.time_grid.dt;
    let nr = system.reservoirs.len();
    if inflows.len() != nr {
        return Err(SimError::InflowCount { expected: nr, got: inflows.len() });
    }
    if (schedule.dt - dt).abs() > 1e-9 * dt {
        return Err(SimError::PeriodLength { schedule: schedule.dt, system: dt });
    }
    let check_len = |entity: &str, got: usize| {
        if got != t_n {
            Err(SimError::SeriesLength { entity: entity.to_string(), expected: t_n, got })
        } else {
            Ok(())
        }
    };
    if schedule.n_periods() != t_n && (!schedule.units.is_empty() || !schedule.reservoirs.is_empty()) {
        return Err(SimError::Periods { expected: t_n, got: schedule.n_periods() });
    }
    let mut unit_sched = Vec::with_capacity(system.units.len());
    for unit in &system.units {
        let us = schedule.unit(&unit.id).ok_or_else(|| SimError::MissingEntity(unit.id.clone()))?;
        check_len(&unit.id, us.turbined.len())?;
        check_len(&unit.id, us.commitment.len())?;
        unit_sched.push(us);
    }
    let mut res_sched = Vec::with_capacity(nr);
    for (r, res) in system.reservoirs.iter().enumerate() {
        let rs = schedule.reservoir(&res.id).ok_or_else(|| SimError::MissingEntity(res.id.clone()))?;
        check_len(&res.id, rs.spill.len())?;
        check_len(&res.id, inflows[r].len())?;
        res_sched.push(rs);
    }
    let order = system.topological_order().map_err(|e| SimError::Topology(e.to_string()))?;

    let releases: Vec<Vec<f64>> = (0..nr)
        .map(|r| {
            let mut q = res_sched[r].spill.clone();
            for p in system.units_of(r) {
                for (acc, x) in q.iter_mut().zip(&unit_sched[p].turbined) {
                    *acc += x;
                }
            }
            q
        })
        .collect();

    let mut violations = Vec::new();
    let mut balance = MassBalance::default();
    let mut trajectories: Vec<ReservoirTrajectory> = system
        .reservoirs
        .iter()
        .zip(&releases)
        .map(|(res, q)| ReservoirTrajectory {
            id: res.id.clone(),
            storage: vec![0.0; t_n],
            elevation: vec![0.0; t_n],
            inflow: vec![0.0; t_n],
            release: q.clone(),
            tailwater: vec![0.0; t_n],
        })
        .collect();

    // storage and elevation, upstream first
    for &r in &order {
        let res = &system.reservoirs[r];
        let mut v_prev = res.v_initial;
        for t in 1..=t_n {
            let mut inflow = inflows[r][t - 1];
            for (up, arc) in system.incoming(r) {
                inflow += arc.routing.contribution(&releases[up], t);
            }
            let loss = res.losses.rate(t, v_prev);
            balance.local_inflow += inflows[r][t - 1] * dt;
            balance.losses += loss * dt;
            let mut v = v_prev + (inflow - releases[r][t - 1] - loss) * dt;
            if v < res.v_min {
                violations.push(Violation {
                    kind: ViolationKind::StorageBelowMin,
                    entity: res.id.clone(),
                    period: t,
                    magnitude: res.v_min - v,
                });
                balance.clamped += res.v_min - v;
                v = res.v_min;
            } else if v > res.v_max {
                violations.push(Violation {
                    kind: ViolationKind::StorageAboveMax,
                    entity: res.id.clone(),
                    period: t,
                    magnitude: v - res.v_max,
                });
            }
            if t == t_n && v < res.terminal_floor() {
                violations.push(Violation {
                    kind: ViolationKind::TerminalStorage,
                    entity: res.id.clone(),
                    period: t,
                    magnitude: res.terminal_floor() - v,
                });
            }
            let e = res.elevation(0.5 * (v_prev + v));
            if e < res.e_min {
                violations.push(Violation {
                    kind: ViolationKind::ElevationBelowMin,
                    entity: res.id.clone(),
                    period: t,
                    magnitude: res.e_min - e,
                });
            } else if e > res.e_max {
                violations.push(Violation {
                    kind: ViolationKind::ElevationAboveMax,
                    entity: res.id.clone(),
                    period: t,
                    magnitude: e - res.e_max,
                });
            }
            let tr = &mut trajectories[r];
            tr.storage[t - 1] = v;
            tr.elevation[t - 1] = e;
            tr.inflow[t - 1] = inflow;
            v_prev = v;
        }
        balance.storage_change += v_prev - res.v_initial;
        if !system.has_outgoing(r) {
            balance.terminal_outflow += releases[r].iter().sum::<f64>() * dt;
        }
    }
    for arc in &system.arcs {
        if let Some(up) = system.reservoir_index(&arc.from) {
            balance.in_transit += arc.routing.in_transit(&releases[up], t_n) * dt;
            balance.pre_horizon += arc.routing.pre_horizon_arrivals(t_n) * dt;
        }
    }

    // tailwater with the realized downstream elevation
    for r in 0..nr {
        let res = &system.reservoirs[r];
        let down = system.downstream_of(r);
        for t in 1..=t_n {
            let mut tw = res.tailrace.curve.eval(releases[r][t - 1]);
            if let (Some(c), Some(d)) = (res.tailrace.downstream, down) {
                tw += c.coefficient * (trajectories[d].elevation[t - 1] - c.reference_elevation);
            }
            trajectories[r].tailwater[t - 1] = tw;
        }
    }

    let hours = dt / 3600.0;
    let mut units = Vec::with_capacity(system.units.len());
    let mut energy_realized = 0.0;
    for (p, unit) in system.units.iter().enumerate() {
        let r = system.reservoir_index(&unit.reservoir).ok_or_else(|| SimError::MissingEntity(unit.reservoir.clone()))?;
        let us = unit_sched[p];
        let mut traj = UnitTrajectory { id: unit.id.clone(), head: vec![0.0; t_n], power: vec![0.0; t_n] };
        for t in 1..=t_n {
            let q = us.turbined[t - 1];
            let on = us.commitment[t - 1];
            let push = |v: &mut Vec<Violation>, kind, magnitude| {
                v.push(Violation { kind, entity: unit.id.clone(), period: t, magnitude })
            };
            if q > unit.q_max + FLOW_TOL * (1.0 + unit.q_max) {
                push(&mut violations, ViolationKind::DischargeAboveMax, q - unit.q_max);
            }
            if q > FLOW_TOL && q < unit.q_min - FLOW_TOL * (1.0 + unit.q_min) {
                push(&mut violations, ViolationKind::DischargeBelowMin, unit.q_min - q);
            }
            if !on && q > FLOW_TOL {
                push(&mut violations, ViolationKind::Commitment, q);
            }
            let h = trajectories[r].elevation[t - 1] - trajectories[r].tailwater[t - 1] - unit.head_loss.eval(q);
            let power = if h <= 0.0 {
                if q > FLOW_TOL {
                    push(&mut violations, ViolationKind::NonPositiveHead, -h);
                }
                0.0
            } else {
                unit.power.power(&system.constants, q, h)
            };
            if let Some(z) = &unit.zones {
                let d = z.violation(power, h);
                if d > ZONE_TOL {
                    push(&mut violations, ViolationKind::Zone, d);
                }
            }
            traj.head[t - 1] = h;
            traj.power[t - 1] = power;
            energy_realized += power * hours;
        }
        units.push(traj);
    }

    let energy_predicted = schedule.predicted_energy();
    Ok(SimulationReport {
        reservoirs: trajectories,
        units,
        violations,
        energy_realized,
        energy_predicted,
        gap_percent: gap_percent(energy_predicted, energy_realized),
        mass_balance: balance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMetrics {
    pub energy_gap_percent: f64,
    /// Largest `|h_predicted - h_realized|`, m.
    pub max_head_error: f64,
    pub violation_count: usize,
}

/// Compares a schedule's predictions with its simulation report.
pub fn fidelity_gap(predicted: &Schedule, report: &SimulationReport) -> GapMetrics {
    let mut max_head_error: f64 = 0.0;
    for ut in &report.units {
        if let Some(us) = predicted.unit(&ut.id) {
            for (a, b) in us.head.iter().zip(&ut.head) {
                max_head_error = max_head_error.max((a - b).abs());
            }
        }
    }
    GapMetrics {
        energy_gap_percent: gap_percent(predicted.predicted_energy(), report.energy_realized),
        max_head_error,
        violation_count: report.violations.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Curve1D, GeneratingUnit, OperatingZoneSet, PowerSurface};
    use crate::schedule::{ReservoirSchedule, UnitSchedule};

    fn sched(q: Vec<f64>, p: Vec<f64>, h: Vec<f64>) -> Schedule {
        let n = q.len();
        Schedule {
            dt: 3600.0,
            units: vec![UnitSchedule { id: "U".into(), turbined: q, power: p, commitment: vec![true; n], head: h }],
            reservoirs: vec![ReservoirSchedule {
                id: "R".into(),
                spill: vec![0.0; n],
                storage: vec![0.0; n],
                elevation: vec![0.0; n],
            }],
        }
    }

    #[test]
    fn storage_update_arithmetic() {
        let mut sys = crate::formulation::tests::single(1);
        sys.reservoirs[0].v_max = 2e6;
        sys.reservoirs[0].v_initial = 1e6;
        sys.units[0].q_max = 20.0;
        sys.units[0].zones = None;
        let rep = simulate(&sys, &sched(vec![15.0], vec![0.0], vec![50.0]), &[vec![20.0]]).unwrap();
        assert_eq!(rep.reservoirs[0].storage[0], 1_018_000.0);
        assert!(rep.mass_balance.relative_residual() < 1e-12);
    }

    #[test]
    fn linear_physics_has_no_gap() {
        let sys = crate::formulation::tests::single(2);
        let p = 4.4145;
        let rep = simulate(&sys, &sched(vec![10.0, 10.0], vec![p, p], vec![50.0, 50.0]), &[vec![0.0, 0.0]]).unwrap();
        assert!((rep.units[0].power[0] - p).abs() < 1e-12);
        let gap = fidelity_gap(&sched(vec![10.0, 10.0], vec![p, p], vec![50.0, 50.0]), &rep);
        assert!(gap.energy_gap_percent.abs() < 1e-9);
        assert_eq!(gap.max_head_error, 0.0);
        assert_eq!(gap.violation_count, 0);
    }

    #[test]
    fn zone_gap_interior_point() {
        let mut sys = crate::formulation::tests::single(1);
        sys.reservoirs[0].v_initial = 1e5;
        sys.reservoirs[0].v_max = 1e6;
        // 9 MW at 50 m with eta 0.9 needs q = 9e6 / (1000 * 9.81 * 0.9 * 50)
        let q = 9e6 / (1000.0 * 9.81 * 0.9 * 50.0);
        sys.units[0] = GeneratingUnit {
            q_max: 30.0,
            zones: Some(OperatingZoneSet::intervals(vec![[5.0, 8.0], [10.0, 15.0]])),
            ..sys.units[0].clone()
        };
        let rep = simulate(&sys, &sched(vec![q], vec![9.0], vec![50.0]), &[vec![0.0]]).unwrap();
        let z: Vec<_> = rep.violations.iter().filter(|v| v.kind == ViolationKind::Zone).collect();
        assert_eq!(z.len(), 1);
        assert!((z[0].magnitude - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_reservoir_clamps_and_closes() {
        let sys = crate::formulation::tests::single(3);
        let rep = simulate(&sys, &sched(vec![10.0; 3], vec![4.4145; 3], vec![50.0; 3]), &[vec![0.0; 3]]).unwrap();
        assert_eq!(rep.count(ViolationKind::StorageBelowMin), 1);
        assert_eq!(rep.reservoirs[0].storage[2], 0.0);
        assert!(rep.mass_balance.relative_residual() < 1e-12);
    }

    #[test]
    fn reversed_head_gives_no_power() {
        let mut sys = crate::formulation::tests::single(1);
        sys.reservoirs[0].tailrace.curve = Curve1D::constant(60.0);
        let rep = simulate(&sys, &sched(vec![10.0], vec![4.0], vec![50.0]), &[vec![0.0]]).unwrap();
        assert_eq!(rep.units[0].power[0], 0.0);
        assert_eq!(rep.count(ViolationKind::NonPositiveHead), 1);
        assert_eq!(rep.gap_percent, f64::INFINITY);
    }

    #[test]
    fn empty_schedule_has_zero_gap() {
        let mut sys = crate::formulation::tests::single(2);
        sys.units[0].power = PowerSurface::FixedEfficiency { efficiency: 0.9 };
        let rep = simulate(&sys, &sched(vec![0.0, 0.0], vec![0.0, 0.0], vec![50.0, 50.0]), &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(rep.gap_percent, 0.0);
        assert_eq!(gap_percent(0.0, 0.0), 0.0);
    }

    #[test]
    fn mismatched_schedule_rejected() {
        let sys = crate::formulation::tests::single(2);
        let err = simulate(&sys, &sched(vec![0.0], vec![0.0], vec![0.0]), &[vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, SimError::Periods { .. }));
        let mut s = sched(vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]);
        s.units[0].id = "X".into();
        assert_eq!(simulate(&sys, &s, &[vec![0.0, 0.0]]), Err(SimError::MissingEntity("U".into())));
    }
}

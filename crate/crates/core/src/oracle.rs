//! Exhaustive enumeration over discretized release and commitment sequences.
//!
//! Every trajectory is simulated with the tier physics of the model (the same
//! fitted curves and surfaces), so on grid-restricted instances the best
//! enumerated objective equals the MILP optimum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CascadeSystem;
use crate::formulation::{check_inputs, BuildError, Discretization, FidelityConfig, ObjectiveKind, PowerMode};
use crate::schedule::{ReservoirSchedule, Schedule, UnitSchedule};
use crate::tier::{Repr1, TierPhysics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_reservoirs: usize,
    pub max_periods: usize,
    pub max_levels: usize,
    /// Upper bound on enumerated leaves (combinations per period to the power T).
    pub max_leaves: f64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self { max_reservoirs: 2, max_periods: 4, max_levels: 8, max_leaves: 2e7 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("no trajectory on the grid is feasible")]
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Objective in the model's own sense and units.
    pub objective: f64,
    pub schedule: Schedule,
    /// Joint choices evaluated per period.
    pub combos_per_period: usize,
}

#[derive(Debug, Clone)]
struct Combo {
    /// `(Q^P, on)` per unit.
    units: Vec<(f64, bool)>,
    spill: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Step {
    storage: Vec<f64>,
    release: Vec<f64>,
    elevation: Vec<f64>,
    head: Vec<f64>,
    power: Vec<f64>,
    combo: usize,
}

struct Ctx<'a> {
    system: &'a CascadeSystem,
    physics: TierPhysics,
    inflows: &'a [Vec<f64>],
    config: &'a FidelityConfig,
    combos: Vec<Combo>,
    tol: f64,
}

/// `score` is maximized; for peak shaving it is the negated peak.
#[derive(Debug, Clone)]
struct Best {
    score: f64,
    path: Vec<Step>,
}

fn better(candidate: f64, incumbent: Option<&Best>) -> bool {
    match incumbent {
        None => true,
        Some(b) => candidate > b.score + 1e-9 * (1.0 + b.score.abs()),
    }
}

impl Ctx<'_> {
    fn period(&self, t: usize, prev: &[Step], combo_idx: usize) -> Option<Step> {
        let sys = self.system;
        let combo = &self.combos[combo_idx];
        let nr = sys.reservoirs.len();
        let dt = sys.time_grid.dt;
        let t_n = sys.n_periods();
        let tol = self.tol;
        let scaled = |x: f64| tol * (1.0 + x.abs());

        let mut release = vec![0.0; nr];
        for (r, rel) in release.iter_mut().enumerate() {
            *rel = combo.spill[r] + sys.units_of(r).iter().map(|&p| combo.units[p].0).sum::<f64>();
            let rmax = self.physics.reservoirs[r].release_max;
            if *rel > rmax + scaled(rmax) || combo.spill[r] > rmax + scaled(rmax) {
                return None;
            }
        }

        let mut storage = vec![0.0; nr];
        let mut elevation = vec![0.0; nr];
        for &r in &self.physics.order {
            let res = &sys.reservoirs[r];
            let mut inflow = self.inflows[r][t - 1];
            for (up, arc) in sys.incoming(r) {
                let (terms, constant) = arc.routing.linear_terms(t);
                inflow += constant;
                for (period, w) in terms {
                    let q = if period == t { release[up] } else { prev[period - 1].release[up] };
                    inflow += w * q;
                }
            }
            let v_prev = if t == 1 { res.v_initial } else { prev[t - 2].storage[r] };
            let loss = res.losses.rate(t, v_prev);
            let v = v_prev + (inflow - release[r] - loss) * dt;
            let lo = if t == t_n { res.terminal_floor() } else { res.v_min };
            if v < lo - scaled(lo.max(res.v_max)) || v > res.v_max + scaled(res.v_max) {
                return None;
            }
            storage[r] = v;
            let rp = &self.physics.reservoirs[r];
            let e = match &rp.elevation {
                Repr1::Affine { intercept, .. } if rp.fixed_elevation => *intercept,
                repr => repr.eval(0.5 * (v_prev + v)),
            };
            if e < res.e_min - scaled(res.e_min) || e > res.e_max + scaled(res.e_max) {
                return None;
            }
            elevation[r] = e;
        }

        let mut tailwater = vec![0.0; nr];
        for (r, tw) in tailwater.iter_mut().enumerate() {
            let trp = &self.physics.reservoirs[r].tailrace;
            *tw = trp.base.eval(release[r]);
            if let Some((d, c)) = trp.coupling {
                *tw += c.coefficient * (elevation[d] - c.reference_elevation);
            }
        }

        let np = sys.units.len();
        let mut head = vec![0.0; np];
        let mut power = vec![0.0; np];
        for p in 0..np {
            let up = &self.physics.units[p];
            let (q, on) = combo.units[p];
            let h = elevation[up.reservoir] - tailwater[up.reservoir] - up.head_loss.eval(q);
            let (h_lo, h_hi) = up.head_bounds();
            if h < h_lo - scaled(h_lo) || h > h_hi + scaled(h_hi) {
                return None;
            }
            let pw = up.power(q, h.clamp(h_lo, h_hi))?;
            if pw < -scaled(0.0) || pw > up.p_max + scaled(up.p_max) {
                return None;
            }
            if !up.zones.admits(pw, h, on, tol) {
                return None;
            }
            head[p] = h;
            power[p] = pw;
        }
        Some(Step { storage, release, elevation, head, power, combo: combo_idx })
    }

    fn score(&self, path: &[Step]) -> f64 {
        let sys = self.system;
        let hours = sys.time_grid.dt / 3600.0;
        match &self.config.objective.kind {
            ObjectiveKind::EnergyMax => path.iter().map(|s| s.power.iter().sum::<f64>() * hours).sum(),
            ObjectiveKind::RevenueMax { prices } => {
                let mut total = 0.0;
                for (p, unit) in sys.units.iter().enumerate() {
                    let series = &prices[&unit.id];
                    let mut was_on = unit.initially_online;
                    for (t, step) in path.iter().enumerate() {
                        total += series[t] * step.power[p] * hours;
                        let on = self.combos[step.combo].units[p].1;
                        if self.config.objective.startup_cost_enabled && self.physics.units[p].zones.has_commitment() {
                            let cost = unit.zones.as_ref().and_then(|z| z.startup_cost).unwrap_or(0.0);
                            if on && !was_on {
                                total -= cost;
                            }
                        }
                        was_on = on;
                    }
                }
                total
            }
            ObjectiveKind::PeakShave { load } => {
                let peak = path
                    .iter()
                    .enumerate()
                    .map(|(t, s)| load[t] - s.power.iter().sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                -peak
            }
        }
    }

    fn search(&self, path: &mut Vec<Step>) -> Option<Best> {
        let t = path.len() + 1;
        if t > self.system.n_periods() {
            return Some(Best { score: self.score(path), path: path.clone() });
        }
        let mut best: Option<Best> = None;
        for c in 0..self.combos.len() {
            let Some(step) = self.period(t, path, c) else { continue };
            path.push(step);
            if let Some(sub) = self.search(path) {
                if better(sub.score, best.as_ref()) {
                    best = Some(sub);
                }
            }
            path.pop();
        }
        best
    }

    fn branch(&self, c: usize) -> Option<Best> {
        let step = self.period(1, &[], c)?;
        let mut path = vec![step];
        self.search(&mut path)
    }

    fn objective_value(&self, score: f64) -> f64 {
        match self.config.objective.kind {
            ObjectiveKind::PeakShave { .. } => -score,
            _ => score,
        }
    }

    fn schedule(&self, path: &[Step]) -> Schedule {
        let sys = self.system;
        let units = sys
            .units
            .iter()
            .enumerate()
            .map(|(p, u)| UnitSchedule {
                id: u.id.clone(),
                turbined: path.iter().map(|s| self.combos[s.combo].units[p].0).collect(),
                power: path.iter().map(|s| s.power[p]).collect(),
                commitment: path.iter().map(|s| self.combos[s.combo].units[p].1).collect(),
                head: path.iter().map(|s| s.head[p]).collect(),
            })
            .collect();
        let reservoirs = sys
            .reservoirs
            .iter()
            .enumerate()
            .map(|(r, res)| ReservoirSchedule {
                id: res.id.clone(),
                spill: path.iter().map(|s| self.combos[s.combo].spill[r]).collect(),
                storage: path.iter().map(|s| s.storage[r]).collect(),
                elevation: path.iter().map(|s| s.elevation[r]).collect(),
            })
            .collect();
        Schedule { dt: sys.time_grid.dt, units, reservoirs }
    }
}

fn unit_choices(levels: &[f64], commit: bool, q_min: f64) -> Vec<(f64, bool)> {
    let mut sorted: Vec<f64> = levels.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();
    let mut out = Vec::new();
    for q in sorted {
        if !commit {
            out.push((q, true));
        } else if q == 0.0 {
            if q_min <= 0.0 {
                out.push((0.0, true));
            }
            out.push((0.0, false));
        } else if q >= q_min {
            out.push((q, true));
        }
    }
    out
}

fn cartesian<T: Clone>(sets: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for set in sets {
        let mut next = Vec::with_capacity(out.len() * set.len());
        for prefix in &out {
            for item in set {
                let mut v = prefix.clone();
                v.push(item.clone());
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn check_objective(system: &CascadeSystem, config: &FidelityConfig) -> Result<(), BuildError> {
    let t_n = system.n_periods();
    match &config.objective.kind {
        ObjectiveKind::EnergyMax | ObjectiveKind::PeakShave { .. } if config.objective.startup_cost_enabled => {
            Err(BuildError::Inconsistent("startup costs apply to revenue objectives only".into()))
        }
        ObjectiveKind::RevenueMax { prices } => {
            for unit in &system.units {
                match prices.get(&unit.id) {
                    Some(s) if s.len() == t_n => {}
                    _ => return Err(BuildError::MissingData(format!("prices for unit {}", unit.id))),
                }
            }
            Ok(())
        }
        ObjectiveKind::PeakShave { load } if load.len() != t_n => {
            Err(BuildError::MissingData(format!("load has {} periods, expected {t_n}", load.len())))
        }
        _ => Ok(()),
    }
}

/// Enumerates every grid trajectory and returns the best one. Ties keep the
/// first trajectory in enumeration order (higher discharges first, earliest
/// periods first).
pub fn brute_force_oracle(
    system: &CascadeSystem,
    inflows: &[Vec<f64>],
    config: &FidelityConfig,
    discretization: &Discretization,
) -> Result<OracleResult, OracleError> {
    brute_force_oracle_with(system, inflows, config, discretization, &OracleLimits::default())
}

pub fn brute_force_oracle_with(
    system: &CascadeSystem,
    inflows: &[Vec<f64>],
    config: &FidelityConfig,
    discretization: &Discretization,
    limits: &OracleLimits,
) -> Result<OracleResult, OracleError> {
    let nr = system.reservoirs.len();
    let t_n = system.n_periods();
    if nr > limits.max_reservoirs || t_n > limits.max_periods || discretization.unit_levels.len() > limits.max_levels {
        return Err(OracleError::Refused(format!(
            "{nr} reservoirs, {t_n} periods, {} levels exceed the bound ({}, {}, {})",
            discretization.unit_levels.len(),
            limits.max_reservoirs,
            limits.max_periods,
            limits.max_levels
        )));
    }
    if matches!(config.power, PowerMode::Mccormick) {
        return Err(OracleError::Refused("mccormick power is a relaxation with no trajectory-level value".into()));
    }
    check_inputs(system, inflows, config)?;
    check_objective(system, config)?;
    if discretization.unit_levels.is_empty() || discretization.spill_levels.is_empty() {
        return Err(OracleError::Build(BuildError::MissingData("discretization grids must not be empty".into())));
    }
    let physics = TierPhysics::new(system, inflows, config)?;

    let sets: Vec<Vec<(f64, bool)>> = physics
        .units
        .iter()
        .map(|u| unit_choices(&discretization.unit_levels, u.zones.has_commitment(), u.q_min))
        .collect();
    let mut spill_levels = discretization.spill_levels.clone();
    spill_levels.sort_by(|a, b| b.total_cmp(a));
    spill_levels.dedup();
    let unit_combos = cartesian(&sets);
    let spill_combos = cartesian(&vec![spill_levels; nr]);
    let mut combos = Vec::with_capacity(unit_combos.len() * spill_combos.len());
    for u in &unit_combos {
        for s in &spill_combos {
            combos.push(Combo { units: u.clone(), spill: s.clone() });
        }
    }
    let leaves = (combos.len() as f64).powi(t_n as i32);
    if leaves > limits.max_leaves {
        return Err(OracleError::Refused(format!(
            "{} combinations per period over {t_n} periods give {leaves:.3e} leaves (limit {:.3e})",
            combos.len(),
            limits.max_leaves
        )));
    }
    let n_combos = combos.len();
    let ctx = Ctx { system, physics, inflows, config, combos, tol: 1e-7 };

    let branches: Vec<Option<Best>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n_combos).into_par_iter().map(|c| ctx.branch(c)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_combos).map(|c| ctx.branch(c)).collect()
        }
    };
    let mut best: Option<Best> = None;
    for b in branches.into_iter().flatten() {
        if better(b.score, best.as_ref()) {
            best = Some(b);
        }
    }
    let best = best.ok_or(OracleError::Infeasible)?;
    Ok(OracleResult {
        objective: ctx.objective_value(best.score),
        schedule: ctx.schedule(&best.path),
        combos_per_period: n_combos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::tests::single;

    fn grid(levels: &[f64]) -> Discretization {
        Discretization { unit_levels: levels.to_vec(), spill_levels: vec![0.0] }
    }

    #[test]
    fn full_drawdown() {
        let sys = single(2);
        let r = brute_force_oracle(&sys, &[vec![0.0, 0.0]], &FidelityConfig::lp_fixed_head(), &grid(&[0.0, 10.0])).unwrap();
        assert!((r.objective - 8.829).abs() < 1e-9);
        assert_eq!(r.schedule.units[0].turbined, vec![10.0, 10.0]);
    }

    #[test]
    fn half_volume_uses_first_period() {
        let mut sys = single(2);
        sys.reservoirs[0].v_initial = 36_000.0;
        let r = brute_force_oracle(&sys, &[vec![0.0, 0.0]], &FidelityConfig::lp_fixed_head(), &grid(&[0.0, 10.0])).unwrap();
        assert!((r.objective - 4.4145).abs() < 1e-9);
        assert_eq!(r.schedule.units[0].turbined, vec![10.0, 0.0]);
    }

    #[test]
    fn empty_reservoir_idles() {
        let mut sys = single(2);
        sys.reservoirs[0].v_initial = 0.0;
        let r = brute_force_oracle(&sys, &[vec![0.0, 0.0]], &FidelityConfig::lp_fixed_head(), &grid(&[0.0, 10.0])).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.schedule.units[0].turbined, vec![0.0, 0.0]);
    }

    #[test]
    fn refuses_large_instances() {
        let sys = single(5);
        let err = brute_force_oracle(&sys, &[vec![0.0; 5]], &FidelityConfig::lp_fixed_head(), &grid(&[0.0, 10.0]));
        assert!(matches!(err, Err(OracleError::Refused(_))));
        let sys = single(2);
        let many: Vec<f64> = (0..9).map(f64::from).collect();
        let err = brute_force_oracle(&sys, &[vec![0.0; 2]], &FidelityConfig::lp_fixed_head(), &grid(&many));
        assert!(matches!(err, Err(OracleError::Refused(_))));
    }

    #[test]
    fn commitment_choices() {
        assert_eq!(unit_choices(&[0.0, 5.0], true, 2.0), vec![(5.0, true), (0.0, false)]);
        assert_eq!(unit_choices(&[0.0, 1.0], true, 2.0), vec![(0.0, false)]);
        assert_eq!(unit_choices(&[5.0, 0.0], true, 0.0), vec![(5.0, true), (0.0, true), (0.0, false)]);
        assert_eq!(unit_choices(&[0.0, 5.0], false, 2.0), vec![(5.0, true), (0.0, true)]);
    }
}

//! Solver backends and solution extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CascadeSystem;
use crate::model::{AbstractModel, ObjSense, Quantity, RowSense, VarKind};
use crate::schedule::{ReservoirSchedule, Schedule, UnitSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// A limit was hit with a feasible incumbent.
    FeasibleLimit,
    Infeasible,
    Unbounded,
    Error,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleLimit)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleLimit => "feasible_limit",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::Error => "error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Seconds.
    pub time_limit: f64,
    pub mip_gap: f64,
    pub threads: Option<u32>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { time_limit: 600.0, mip_gap: 1e-6, threads: None }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.time_limit > 0.0) {
            return Err(format!("time limit {} must be > 0", self.time_limit));
        }
        if !(0.0..1.0).contains(&self.mip_gap) {
            return Err(format!("mip gap {} outside [0, 1)", self.mip_gap));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    /// Best proved bound on the objective.
    pub bound: f64,
    /// Seconds.
    pub wall_time: f64,
    pub message: String,
}

impl Solution {
    pub fn failed(status: SolveStatus, message: impl Into<String>) -> Self {
        Self { status, objective: f64::NAN, values: Vec::new(), bound: f64::NAN, wall_time: 0.0, message: message.into() }
    }
}

/// Anything able to solve an [`AbstractModel`].
pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, model: &AbstractModel, options: &SolveOptions) -> Solution;
}

/// Power-of-two rescaling of a model. Column `j` of the scaled model holds
/// `x_j / col_scale[j]`; rows are divided by their largest coefficient.
#[derive(Debug, Clone)]
pub struct Scaled {
    pub model: AbstractModel,
    pub col_scale: Vec<f64>,
}

impl Scaled {
    pub fn unscale(&self, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.col_scale).map(|(v, s)| v * s).collect()
    }
}

fn pow2_near(x: f64) -> f64 {
    2f64.powi(x.log2().round() as i32)
}

/// Shrinks continuous columns with large finite bounds (volumes in m³) to
/// order one and equilibrates rows, which keeps solver tolerances meaningful.
pub fn equilibrate(model: &AbstractModel) -> Scaled {
    let col_scale: Vec<f64> = model
        .variables
        .iter()
        .map(|v| {
            let mag = [v.lower, v.upper].into_iter().filter(|b| b.is_finite()).fold(0.0f64, |m, b| m.max(b.abs()));
            if v.kind == VarKind::Continuous && mag > 1e4 { pow2_near(mag) } else { 1.0 }
        })
        .collect();
    let mut scaled = model.clone();
    for (v, s) in scaled.variables.iter_mut().zip(&col_scale) {
        v.lower /= s;
        v.upper /= s;
    }
    for c in &mut scaled.constraints {
        for (v, k) in &mut c.terms {
            *k *= col_scale[v.0];
        }
        let big = c.terms.iter().fold(0.0f64, |m, (_, k)| m.max(k.abs()));
        if big > 0.0 {
            let r = pow2_near(big);
            c.terms.iter_mut().for_each(|(_, k)| *k /= r);
            c.rhs /= r;
        }
    }
    for (v, k) in &mut scaled.objective.terms {
        *k *= col_scale[v.0];
    }
    Scaled { model: scaled, col_scale }
}

#[cfg(feature = "highs")]
pub use highs_backend::HighsBackend;

#[cfg(feature = "highs")]
mod highs_backend {
    use super::*;
    use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense};
    use std::time::Instant;

    /// HiGHS through its C API.
    #[derive(Debug, Clone, Copy, Default)]
    pub struct HighsBackend;

    fn run(model: &AbstractModel, options: &SolveOptions, presolve: bool) -> (HighsModelStatus, Option<highs::SolvedModel>) {
        let mut costs = vec![0.0f64; model.n_vars()];
        for (v, c) in &model.objective.terms {
            costs[v.0] += c;
        }
        let mut pb = RowProblem::default();
        let cols: Vec<highs::Col> = model
            .variables
            .iter()
            .zip(&costs)
            .map(|(v, &cost)| {
                match v.kind {
                    VarKind::Binary => pb.add_integer_column(cost, v.lower..=v.upper),
                    VarKind::Continuous => pb.add_column(cost, v.lower..=v.upper),
                }
            })
            .collect();
        for c in &model.constraints {
            let terms = c.terms.iter().map(|(v, k)| (cols[v.0], *k));
            match c.sense {
                RowSense::Le => pb.add_row(..=c.rhs, terms),
                RowSense::Ge => pb.add_row(c.rhs.., terms),
                RowSense::Eq => pb.add_row(c.rhs..=c.rhs, terms),
            };
        }
        let sense = match model.objective.sense {
            ObjSense::Maximize => Sense::Maximise,
            ObjSense::Minimize => Sense::Minimise,
        };
        let mut hm = match pb.try_optimise(sense) {
            Ok(m) => m,
            Err(_) => return (HighsModelStatus::ModelError, None),
        };
        if std::env::var_os("HYDRO_SOLVER_LOG").is_some() {
            hm.set_option("output_flag", true);
            hm.set_option("log_to_console", true);
        } else {
            hm.make_quiet();
        }
        hm.set_option("time_limit", options.time_limit);
        hm.set_option("mip_rel_gap", options.mip_gap);
        hm.set_option("random_seed", 0i32);
        if !presolve {
            hm.set_option("presolve", "off");
        }
        if let Some(t) = options.threads {
            hm.set_option("threads", t as i32);
        }
        match hm.try_solve() {
            Ok(solved) => (solved.status(), Some(solved)),
            Err(_) => (HighsModelStatus::SolveError, None),
        }
    }

    impl SolverBackend for HighsBackend {
        fn name(&self) -> &str {
            "highs"
        }

        fn solve(&self, model: &AbstractModel, options: &SolveOptions) -> Solution {
            let start = Instant::now();
            if let Err(e) = options.validate() {
                return Solution::failed(SolveStatus::Error, e);
            }
            if model.variables.is_empty() {
                let obj = model.objective.constant;
                return Solution {
                    status: SolveStatus::Optimal,
                    objective: obj,
                    values: Vec::new(),
                    bound: obj,
                    wall_time: start.elapsed().as_secs_f64(),
                    message: "empty model".into(),
                };
            }
            let scaled = equilibrate(model);
            let (mut status, mut solved) = run(&scaled.model, options, true);
            if status == HighsModelStatus::UnboundedOrInfeasible {
                let (s2, m2) = run(&scaled.model, options, false);
                status = s2;
                solved = m2;
            }
            let wall_time = start.elapsed().as_secs_f64();
            let is_mip = model.variables.iter().any(|v| v.kind == VarKind::Binary);
            let extract = |solved: &highs::SolvedModel, status: SolveStatus, message: &str| {
                let values = scaled.unscale(solved.get_solution().columns());
                let objective = model.evaluate_objective(&values);
                let bound = if is_mip {
                    solved
                        .double_info_value(c"mip_dual_bound")
                        .map(|b| b + model.objective.constant)
                        .unwrap_or(objective)
                } else {
                    objective
                };
                Solution { status, objective, values, bound, wall_time, message: message.to_string() }
            };
            match (status, solved.as_ref()) {
                (HighsModelStatus::Optimal, Some(s)) => extract(s, SolveStatus::Optimal, "optimal"),
                (
                    HighsModelStatus::ReachedTimeLimit
                    | HighsModelStatus::ReachedIterationLimit
                    | HighsModelStatus::ReachedSolutionLimit
                    | HighsModelStatus::ReachedInterrupt,
                    Some(s),
                ) => {
                    if s.primal_solution_status() == HighsSolutionStatus::Feasible {
                        extract(s, SolveStatus::FeasibleLimit, &format!("{status:?}"))
                    } else {
                        Solution { wall_time, ..Solution::failed(SolveStatus::Error, format!("{status:?} without a feasible point")) }
                    }
                }
                (HighsModelStatus::Infeasible, _) => Solution { wall_time, ..Solution::failed(SolveStatus::Infeasible, "infeasible") },
                (HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible, _) => {
                    Solution { wall_time, ..Solution::failed(SolveStatus::Unbounded, format!("{status:?}")) }
                }
                (other, _) => Solution { wall_time, ..Solution::failed(SolveStatus::Error, format!("backend status {other:?}")) },
            }
        }
    }
}

/// Solves with the default backend.
pub fn solve(model: &AbstractModel, options: &SolveOptions) -> Solution {
    default_backend().solve(model, options)
}

pub fn default_backend() -> Box<dyn SolverBackend> {
    #[cfg(feature = "highs")]
    {
        Box::new(HighsBackend)
    }
    #[cfg(not(feature = "highs"))]
    {
        Box::new(NoBackend)
    }
}

/// Placeholder used when no solver is compiled in.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoBackend;

impl SolverBackend for NoBackend {
    fn name(&self) -> &str {
        "none"
    }

    fn solve(&self, _model: &AbstractModel, _options: &SolveOptions) -> Solution {
        Solution::failed(SolveStatus::Error, "no solver backend compiled in")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("solution has status {0}, no values to extract")]
    NoSolution(SolveStatus),
    #[error("variable {0} missing from the model index")]
    MissingVariable(String),
    #[error("solution has {got} values for {expected} variables")]
    Length { expected: usize, got: usize },
}

/// Reads the decision trajectory out of a solved model. Elevation and head
/// are the model's own predictions. Units without commitment variables are
/// reported as committed.
pub fn extract_schedule(solution: &Solution, model: &AbstractModel, system: &CascadeSystem) -> Result<Schedule, ExtractError> {
    if !solution.status.has_solution() {
        return Err(ExtractError::NoSolution(solution.status));
    }
    if solution.values.len() != model.n_vars() {
        return Err(ExtractError::Length { expected: model.n_vars(), got: solution.values.len() });
    }
    let t_n = system.n_periods();
    let get = |q: Quantity, id: &str, t: usize| -> Result<f64, ExtractError> {
        let v = model
            .var(q, id, t)
            .ok_or_else(|| ExtractError::MissingVariable(crate::model::VarKey::new(q, id, t).name()))?;
        Ok(solution.values[v.0])
    };
    let clean = |x: f64| if x.abs() < 1e-9 { 0.0 } else { x };
    let mut units = Vec::with_capacity(system.units.len());
    for unit in &system.units {
        let mut us = UnitSchedule {
            id: unit.id.clone(),
            turbined: Vec::with_capacity(t_n),
            power: Vec::with_capacity(t_n),
            commitment: Vec::with_capacity(t_n),
            head: Vec::with_capacity(t_n),
        };
        for t in 1..=t_n {
            let on = match model.var(Quantity::Commitment, &unit.id, t) {
                Some(u) => solution.values[u.0] > 0.5,
                None => true,
            };
            let (q, p) = if on {
                (clean(get(Quantity::Turbined, &unit.id, t)?), clean(get(Quantity::Power, &unit.id, t)?))
            } else {
                (0.0, 0.0)
            };
            us.turbined.push(q);
            us.power.push(p);
            us.commitment.push(on);
            us.head.push(get(Quantity::Head, &unit.id, t)?);
        }
        units.push(us);
    }
    let mut reservoirs = Vec::with_capacity(system.reservoirs.len());
    for res in &system.reservoirs {
        let mut rs = ReservoirSchedule {
            id: res.id.clone(),
            spill: Vec::with_capacity(t_n),
            storage: Vec::with_capacity(t_n),
            elevation: Vec::with_capacity(t_n),
        };
        for t in 1..=t_n {
            rs.spill.push(clean(get(Quantity::Spill, &res.id, t)?));
            rs.storage.push(get(Quantity::Storage, &res.id, t)?);
            rs.elevation.push(get(Quantity::Elevation, &res.id, t)?);
        }
        reservoirs.push(rs);
    }
    Ok(Schedule { dt: system.time_grid.dt, units, reservoirs })
}

/// Elevation bound that had to be relaxed to restore feasibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingBound {
    pub variable: String,
    /// `"lower"` or `"upper"`.
    pub side: String,
    pub violation: f64,
}

/// Outcome of the elastic diagnostic re-solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Diagnosis {
    /// Relaxing these elevation bounds makes the model feasible.
    ElevationBounds(Vec<BindingBound>),
    /// Still infeasible with elastic elevation bounds.
    Elsewhere,
    /// The diagnostic solve itself failed.
    Inconclusive(String),
}

/// Re-solves with elastic elevation bounds, minimizing total bound violation.
pub fn diagnose_infeasibility(model: &AbstractModel, backend: &dyn SolverBackend, options: &SolveOptions) -> Diagnosis {
    let mut elastic = model.clone();
    elastic.objective = crate::model::Objective { sense: ObjSense::Minimize, terms: Vec::new(), constant: 0.0 };
    let mut slacks = Vec::new();
    let elevation_vars: Vec<_> =
        model.index.iter().filter(|(k, _)| k.quantity == Quantity::Elevation).map(|(k, v)| (k.name(), *v)).collect();
    for (name, v) in elevation_vars {
        let (lo, hi) = (model.variable(v).lower, model.variable(v).upper);
        elastic.set_bounds(v, f64::NEG_INFINITY, f64::INFINITY);
        let s_lo = elastic.add_var(format!("slo_{name}"), VarKind::Continuous, 0.0, f64::INFINITY);
        let s_hi = elastic.add_var(format!("shi_{name}"), VarKind::Continuous, 0.0, f64::INFINITY);
        if lo.is_finite() {
            elastic.add_constraint(format!("elo_{name}"), vec![(v, 1.0), (s_lo, 1.0)], RowSense::Ge, lo);
        }
        if hi.is_finite() {
            elastic.add_constraint(format!("ehi_{name}"), vec![(v, 1.0), (s_hi, -1.0)], RowSense::Le, hi);
        }
        elastic.objective.terms.push((s_lo, 1.0));
        elastic.objective.terms.push((s_hi, 1.0));
        slacks.push((name, s_lo, s_hi));
    }
    let sol = backend.solve(&elastic, options);
    match sol.status {
        SolveStatus::Optimal | SolveStatus::FeasibleLimit => {
            let mut out = Vec::new();
            for (name, lo, hi) in slacks {
                for (side, s) in [("lower", lo), ("upper", hi)] {
                    let val = sol.values[s.0];
                    if val > 1e-7 {
                        out.push(BindingBound { variable: name.clone(), side: side.into(), violation: val });
                    }
                }
            }
            Diagnosis::ElevationBounds(out)
        }
        SolveStatus::Infeasible => Diagnosis::Elsewhere,
        other => Diagnosis::Inconclusive(format!("{other}: {}", sol.message)),
    }
}


#[cfg(test)]
mod scaling_tests {
    use super::*;

    #[test]
    fn equilibrate_preserves_feasible_points() {
        let mut m = AbstractModel::new();
        let v = m.add_var("v", VarKind::Continuous, 1e6, 8e6);
        let q = m.add_var("q", VarKind::Continuous, 0.0, 50.0);
        let z = m.add_var("z", VarKind::Binary, 0.0, 1.0);
        m.add_constraint("mb", vec![(v, 1.0), (q, 3600.0)], RowSense::Eq, 5e6);
        m.add_constraint("on", vec![(q, 1.0), (z, -50.0)], RowSense::Le, 0.0);
        m.objective.terms = vec![(q, 2.0)];
        let s = equilibrate(&m);
        assert_eq!(s.col_scale[2], 1.0);
        assert!(s.col_scale[0] >= 1e6 && s.col_scale[1] == 1.0);
        for c in &s.model.constraints {
            let big = c.terms.iter().fold(0.0f64, |a, (_, k)| a.max(k.abs()));
            assert!((0.5..=2.0).contains(&big), "{}: {big}", c.name);
        }
        let x = [5e6 - 3600.0 * 20.0, 20.0, 1.0];
        let xs: Vec<f64> = x.iter().zip(&s.col_scale).map(|(a, b)| a / b).collect();
        assert!(s.model.violations(&xs, 1e-12).is_empty());
        assert_eq!(s.unscale(&xs), x.to_vec());
        assert_eq!(s.model.evaluate_objective(&xs), m.evaluate_objective(&x));
    }
}

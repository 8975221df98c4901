//! Named fidelity tiers and side-by-side tier comparison.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CascadeSystem;
use crate::formulation::{
    build_model, ElevationMode, FidelityConfig, HeadLossMode, ObjectiveSpec, PowerMode, PwlFitOptions, TailraceMode,
    ZonesMode,
};
use crate::schedule::Schedule;
use crate::simulate::{fidelity_gap, simulate, SimulationReport};
use crate::solve::{extract_schedule, SolveOptions, SolveStatus, SolverBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    LpFixed,
    LpMccormick,
    #[serde(rename = "milp_pwl1d")]
    MilpPwl1d,
    MilpPwl,
    MilpHuc,
    MilpPoz,
    #[serde(rename = "milp_poz2d")]
    MilpPoz2d,
}

impl Tier {
    pub const ALL: [Tier; 7] =
        [Tier::LpFixed, Tier::LpMccormick, Tier::MilpPwl1d, Tier::MilpPwl, Tier::MilpHuc, Tier::MilpPoz, Tier::MilpPoz2d];

    pub fn name(self) -> &'static str {
        match self {
            Tier::LpFixed => "lp_fixed",
            Tier::LpMccormick => "lp_mccormick",
            Tier::MilpPwl1d => "milp_pwl1d",
            Tier::MilpPwl => "milp_pwl",
            Tier::MilpHuc => "milp_huc",
            Tier::MilpPoz => "milp_poz",
            Tier::MilpPoz2d => "milp_poz2d",
        }
    }

    /// Fidelity configuration of the tier with the given objective.
    pub fn config(self, objective: ObjectiveSpec) -> FidelityConfig {
        let pwl = || PwlFitOptions::pieces(PwlFitOptions::DEFAULT_PIECES);
        let surface = PowerMode::Pwl2d { q_points: 5, h_points: 3 };
        let full = |zones: ZonesMode| FidelityConfig {
            elevation: ElevationMode::Pwl(pwl()),
            power: surface.clone(),
            head_loss: HeadLossMode::Pwl(pwl()),
            tailrace: TailraceMode::Pwl(pwl()),
            zones,
            objective: objective.clone(),
            discretization: None,
        };
        match self {
            Tier::LpFixed => FidelityConfig::lp_fixed_head().with_objective(objective.clone()),
            Tier::LpMccormick => FidelityConfig {
                elevation: ElevationMode::Linear,
                power: PowerMode::Mccormick,
                head_loss: HeadLossMode::Linear,
                tailrace: TailraceMode::Linear,
                zones: ZonesMode::Convex,
                objective: objective.clone(),
                discretization: None,
            },
            Tier::MilpPwl1d => FidelityConfig { power: PowerMode::Pwl1d(pwl()), ..full(ZonesMode::Convex) },
            Tier::MilpPwl => full(ZonesMode::Convex),
            Tier::MilpHuc => full(ZonesMode::HucOnly),
            Tier::MilpPoz => full(ZonesMode::HucPoz1d),
            Tier::MilpPoz2d => full(ZonesMode::HucPoz2d),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown tier `{0}` (expected one of lp_fixed, lp_mccormick, milp_pwl1d, milp_pwl, milp_huc, milp_poz, milp_poz2d)")]
pub struct UnknownTier(pub String);

impl FromStr for Tier {
    type Err = UnknownTier;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL.into_iter().find(|t| t.name() == s.trim()).ok_or_else(|| UnknownTier(s.to_string()))
    }
}

/// Parses a comma-separated tier list.
pub fn parse_tiers(list: &str) -> Result<Vec<Tier>, UnknownTier> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Outcome of solving and simulating one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRun {
    pub tier: String,
    pub status: SolveStatus,
    pub objective: f64,
    pub bound: f64,
    pub n_vars: usize,
    pub n_binaries: usize,
    pub solve_time: f64,
    pub energy_predicted: f64,
    pub energy_realized: f64,
    pub gap_percent: f64,
    pub max_head_error: f64,
    pub violations: usize,
    /// Declared power-prediction error bound of the tier, percent.
    pub declared_bound_percent: Option<f64>,
    pub message: String,
    #[serde(skip)]
    pub schedule: Option<Schedule>,
    #[serde(skip)]
    pub report: Option<SimulationReport>,
}

impl TierRun {
    fn failed(tier: &str, status: SolveStatus, message: String) -> Self {
        Self {
            tier: tier.to_string(),
            status,
            objective: f64::NAN,
            bound: f64::NAN,
            n_vars: 0,
            n_binaries: 0,
            solve_time: 0.0,
            energy_predicted: f64::NAN,
            energy_realized: f64::NAN,
            gap_percent: f64::NAN,
            max_head_error: f64::NAN,
            violations: 0,
            declared_bound_percent: None,
            message,
            schedule: None,
            report: None,
        }
    }
}

/// Builds, solves, extracts and simulates one configuration. Failures at any
/// stage are reported in the returned run.
pub fn run_config(
    name: &str,
    system: &CascadeSystem,
    inflows: &[Vec<f64>],
    config: &FidelityConfig,
    backend: &dyn SolverBackend,
    options: &SolveOptions,
) -> TierRun {
    let built = match build_model(system, inflows, config) {
        Ok(b) => b,
        Err(e) => return TierRun::failed(name, SolveStatus::Error, e.to_string()),
    };
    let declared = (0..system.units.len())
        .map(|p| built.physics.declared_bound(system, p))
        .try_fold(0.0f64, |acc, b| b.map(|b| acc.max(b)))
        .map(|b| 100.0 * b);
    let sol = backend.solve(&built.model, options);
    let mut run = TierRun::failed(name, sol.status, sol.message.clone());
    run.n_vars = built.model.n_vars();
    run.n_binaries = built.model.n_binaries();
    run.solve_time = sol.wall_time;
    run.declared_bound_percent = declared;
    if !sol.status.has_solution() {
        return run;
    }
    run.objective = sol.objective;
    run.bound = sol.bound;
    let schedule = match extract_schedule(&sol, &built.model, system) {
        Ok(s) => s,
        Err(e) => {
            run.status = SolveStatus::Error;
            run.message = e.to_string();
            return run;
        }
    };
    match simulate(system, &schedule, inflows) {
        Ok(report) => {
            let gap = fidelity_gap(&schedule, &report);
            run.energy_predicted = report.energy_predicted;
            run.energy_realized = report.energy_realized;
            run.gap_percent = gap.energy_gap_percent;
            run.max_head_error = gap.max_head_error;
            run.violations = gap.violation_count;
            run.report = Some(report);
        }
        Err(e) => run.message = format!("simulation failed: {e}"),
    }
    run.schedule = Some(schedule);
    run
}

/// Runs every tier on the same instance.
pub fn compare_tiers(
    system: &CascadeSystem,
    inflows: &[Vec<f64>],
    tiers: &[Tier],
    objective: &ObjectiveSpec,
    backend: &dyn SolverBackend,
    options: &SolveOptions,
) -> Vec<TierRun> {
    tiers
        .iter()
        .map(|t| run_config(t.name(), system, inflows, &t.config(objective.clone()), backend, options))
        .collect()
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.4}")
    }
}

/// Fixed-width text table of tier runs.
pub fn format_table(runs: &[TierRun]) -> String {
    let mut out = format!(
        "{:<13} {:>14} {:>12} {:>12} {:>12} {:>10} {:>10} {:>10} {:>5} {:>8}\n",
        "tier", "status", "objective", "E_pred", "E_real", "gap_%", "bound_%", "dh_max", "viol", "time_s"
    );
    for r in runs {
        out.push_str(&format!(
            "{:<13} {:>14} {:>12} {:>12} {:>12} {:>10} {:>10} {:>10} {:>5} {:>8.3}\n",
            r.tier,
            r.status.to_string(),
            num(r.objective),
            num(r.energy_predicted),
            num(r.energy_realized),
            num(r.gap_percent),
            r.declared_bound_percent.map_or("-".into(), num),
            num(r.max_head_error),
            r.violations,
            r.solve_time
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_names_round_trip() {
        for t in Tier::ALL {
            assert_eq!(t.name().parse::<Tier>().unwrap(), t);
        }
        assert_eq!(parse_tiers("lp_fixed, milp_pwl").unwrap(), vec![Tier::LpFixed, Tier::MilpPwl]);
        assert!(parse_tiers("lp_fixed,bogus").is_err());
    }

    #[test]
    fn presets_are_consistent() {
        for t in Tier::ALL {
            let cfg = t.config(ObjectiveSpec::energy());
            let toml = toml::to_string(&cfg).unwrap();
            assert_eq!(toml::from_str::<FidelityConfig>(&toml).unwrap(), cfg);
        }
    }

    #[cfg(feature = "highs")]
    #[test]
    fn single_reservoir_tiers_agree() {
        let sys = crate::formulation::tests::single(2);
        let runs = compare_tiers(
            &sys,
            &[vec![0.0, 0.0]],
            &[Tier::LpFixed, Tier::MilpPwl],
            &ObjectiveSpec::energy(),
            &crate::solve::HighsBackend,
            &SolveOptions::default(),
        );
        for r in &runs {
            assert_eq!(r.status, SolveStatus::Optimal, "{}: {}", r.tier, r.message);
            assert!(r.gap_percent.abs() < 1e-6, "{}: gap {}", r.tier, r.gap_percent);
        }
        assert!(format_table(&runs).contains("milp_pwl"));
    }
}

//! Acceptance criteria. Every criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.
#![cfg(feature = "highs")]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use hydrocascade::approx::{fit_pwl_1d_optimal, fit_slack, max_error, mccormick_envelope, CutSense, FitSpec};
use hydrocascade::compare::{run_config, Tier};
use hydrocascade::domain::{CascadeSystem, ZoneShape};
use hydrocascade::formulation::{build_model, Discretization, ObjectiveKind, ObjectiveSpec};
use hydrocascade::io::parse_cascade_file;
use hydrocascade::model::{AbstractModel, ObjSense, Quantity, RowSense, VarKind};
use hydrocascade::oracle::{brute_force_oracle, OracleError};
use hydrocascade::routing::RoutingSpec;
use hydrocascade::schedule::Schedule;
use hydrocascade::simulate::simulate;
use hydrocascade::solve::{extract_schedule, HighsBackend, SolveOptions, SolveStatus, SolverBackend};
use hydrocascade::synthetic::{drawdown_instance, generate, random_dag, SyntheticOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: &'static str, pass: bool, detail: String) -> Outcome {
    // written directly so the line survives libtest's output capture
    let line = format!("{id} {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    Outcome { id, pass, detail }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// A solved MILP schedule kept for the zone-exclusion check.
struct Solved {
    system: CascadeSystem,
    schedule: Schedule,
    enforces_poz: bool,
}

/// Power values of committed units lying strictly inside a prohibited region
/// (below the first allowed interval or between two allowed intervals).
fn gap_hits(system: &CascadeSystem, schedule: &Schedule, tol: f64) -> Vec<String> {
    let mut hits = Vec::new();
    for unit in &system.units {
        let Some(zones) = &unit.zones else { continue };
        let ZoneShape::Intervals1d { intervals } = &zones.shape else { continue };
        let mut iv = intervals.clone();
        iv.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut gaps = vec![(0.0, iv[0][0])];
        gaps.extend(iv.windows(2).map(|w| (w[0][1], w[1][0])));
        let us = schedule.unit(&unit.id).unwrap();
        for (t, p) in us.power.iter().enumerate() {
            if gaps.iter().any(|(lo, hi)| *p > lo + tol && *p < hi - tol) {
                hits.push(format!("{} t={} P={p}", unit.id, t + 1));
            }
        }
    }
    hits
}

fn fixture(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn exact_opts() -> SolveOptions {
    SolveOptions { mip_gap: 1e-9, ..SolveOptions::default() }
}

fn ac1(solved: &mut Vec<Solved>) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();

    let loaded = parse_cascade_file(&fixture("single.toml")).unwrap();
    let grid = Discretization { unit_levels: vec![0.0, 10.0], spill_levels: vec![0.0] };
    let cfg = loaded.config.clone().with_discretization(grid.clone());
    let built = build_model(&loaded.system, &loaded.inflows, &cfg).unwrap();
    let sol = HighsBackend.solve(&built.model, &exact_opts());
    let oracle = brute_force_oracle(&loaded.system, &loaded.inflows, &cfg, &grid).unwrap();
    let base_ok = sol.status == SolveStatus::Optimal
        && rel_diff(sol.objective, 8.829) <= 1e-6
        && rel_diff(oracle.objective, 8.829) <= 1e-6;
    if !base_ok {
        failures.push(format!("base: milp {} oracle {}", sol.objective, oracle.objective));
    }
    if sol.status.has_solution() {
        let schedule = extract_schedule(&sol, &built.model, &loaded.system).unwrap();
        solved.push(Solved { system: loaded.system.clone(), schedule, enforces_poz: false });
    }

    let tiers = [Tier::LpFixed, Tier::MilpPwl1d, Tier::MilpPwl, Tier::MilpHuc, Tier::MilpPoz];
    let mut rng = ChaCha8Rng::seed_from_u64(20_001);
    let mut agree = 0;
    let mut feasible = 0;
    for k in 0..20 {
        let n_res = rng.gen_range(1..=2);
        let n_units = rng.gen_range(1..=2);
        let periods = rng.gen_range(2..=3);
        let (system, mut inflows) = generate(&SyntheticOptions::new(n_res, n_units, 500 + k).periods(periods));
        let scale = rng.gen_range(0.2..1.0);
        inflows.iter_mut().flatten().for_each(|w| *w *= scale);
        let q_top = system.units.iter().map(|u| u.q_max).fold(f64::INFINITY, f64::min);
        let grid = Discretization {
            unit_levels: vec![0.0, (0.5 * q_top).round(), q_top.floor()],
            spill_levels: vec![0.0],
        };
        let tier = tiers[k as usize % tiers.len()];
        let revenue = rng.gen_bool(0.5);
        let objective = if revenue {
            let prices: BTreeMap<String, Vec<f64>> = system
                .units
                .iter()
                .map(|u| (u.id.clone(), (0..periods).map(|_| rng.gen_range(20.0..80.0)).collect()))
                .collect();
            let startups = tier != Tier::LpFixed && tier != Tier::MilpPwl1d && tier != Tier::MilpPwl;
            ObjectiveSpec { kind: ObjectiveKind::RevenueMax { prices }, startup_cost_enabled: startups }
        } else {
            ObjectiveSpec::energy()
        };
        let cfg = tier.config(objective).with_discretization(grid.clone());
        let built = match build_model(&system, &inflows, &cfg) {
            Ok(b) => b,
            Err(e) => {
                failures.push(format!("instance {k}: build failed: {e}"));
                continue;
            }
        };
        let sol = HighsBackend.solve(&built.model, &exact_opts());
        let oracle = brute_force_oracle(&system, &inflows, &cfg, &grid);
        let ok = match (&oracle, sol.status) {
            (Ok(o), SolveStatus::Optimal) => rel_diff(o.objective, sol.objective) <= 1e-6,
            (Err(OracleError::Infeasible), SolveStatus::Infeasible) => true,
            _ => false,
        };
        if ok {
            agree += 1;
        } else {
            failures.push(format!(
                "instance {k} ({n_res}x{n_units}, T={periods}, {tier}): milp {:?} {} vs oracle {:?}",
                sol.status,
                sol.objective,
                oracle.as_ref().map(|o| o.objective)
            ));
        }
        if sol.status.has_solution() {
            feasible += 1;
            let schedule = extract_schedule(&sol, &built.model, &system).unwrap();
            solved.push(Solved { system, schedule, enforces_poz: tier == Tier::MilpPoz });
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = base_ok && agree == 20 && secs < 10.0;
    let mut detail = format!(
        "base objective {:.6} (oracle {:.6}); {agree}/20 random instances agree ({feasible} feasible); {secs:.2}s",
        sol.objective, oracle.objective
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    report("AC-1", pass, detail)
}

fn ac2(solved: &mut Vec<Solved>) -> Outcome {
    // any feasible MILP point is dominated by the relaxation, so a loose gap is enough
    let opts = SolveOptions { mip_gap: 1e-4, ..SolveOptions::default() };
    let mut dominated = 0;
    let mut strict_active = 0;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let n_res = 1 + (seed % 2) as usize;
        let (system, mut inflows) = generate(&SyntheticOptions::new(n_res, 1, 900 + seed).periods(4));
        inflows.iter_mut().flatten().for_each(|w| *w *= 0.25);
        let cfg = Tier::MilpPoz.config(ObjectiveSpec::energy());
        let built = build_model(&system, &inflows, &cfg).unwrap();
        let milp = HighsBackend.solve(&built.model, &opts);
        let relaxed_model = built.model.relax_integrality();
        let relax = HighsBackend.solve(&relaxed_model, &opts);
        if !milp.status.has_solution() || relax.status != SolveStatus::Optimal {
            failures.push(format!("seed {seed}: milp {:?}, relaxation {:?}", milp.status, relax.status));
            continue;
        }
        let tol = 1e-7 * milp.objective.abs().max(1.0);
        if relax.objective >= milp.objective - tol {
            dominated += 1;
        } else {
            failures.push(format!("seed {seed}: relaxation {} < milp {}", relax.objective, milp.objective));
        }
        // POZ is active when the relaxed power sits inside a prohibited gap
        let relaxed_power = Schedule {
            dt: system.time_grid.dt,
            units: system
                .units
                .iter()
                .map(|u| hydrocascade::schedule::UnitSchedule {
                    id: u.id.clone(),
                    turbined: vec![0.0; 4],
                    power: (1..=4)
                        .map(|t| relax.values[built.model.var(Quantity::Power, &u.id, t).unwrap().0])
                        .collect(),
                    commitment: vec![true; 4],
                    head: vec![0.0; 4],
                })
                .collect(),
            reservoirs: Vec::new(),
        };
        let active = !gap_hits(&system, &relaxed_power, 1e-6).is_empty();
        if active && relax.objective > milp.objective + tol {
            strict_active += 1;
        }
        let schedule = extract_schedule(&milp, &built.model, &system).unwrap();
        solved.push(Solved { system, schedule, enforces_poz: true });
    }
    let pass = dominated == 20 && strict_active >= 1;
    let mut detail = format!("{dominated}/20 dominated; {strict_active} strict with active POZ");
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    report("AC-2", pass, detail)
}

fn ac3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut modes = BTreeMap::new();
    for seed in 0..50u64 {
        let (system, inflows, schedule) = random_dag(4, 6, 3_000 + seed);
        for arc in &system.arcs {
            let name = match arc.routing.mode {
                hydrocascade::routing::RoutingMode::Instantaneous => "instantaneous",
                hydrocascade::routing::RoutingMode::FixedLag { .. } => "fixed_lag",
                hydrocascade::routing::RoutingMode::Convolution { .. } => "convolution",
            };
            *modes.entry(name).or_insert(0) += 1;
        }
        match simulate(&system, &schedule, &inflows) {
            Ok(r) => worst = worst.max(r.mass_balance.relative_residual()),
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let pass = failures.is_empty() && worst < 1e-6;
    let mut detail = format!("worst relative residual {worst:.3e} over 50 schedules; arcs by mode {modes:?}");
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    report("AC-3", pass, detail)
}

fn ac4() -> Outcome {
    let (q_b, h_b) = ((3.0, 75.0), (40.0, 110.0));
    let env = mccormick_envelope(q_b, h_b).unwrap();
    let cuts = env.cuts();
    let mut rng = ChaCha8Rng::seed_from_u64(4_004);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let q = rng.gen_range(q_b.0..=q_b.1);
        let h = rng.gen_range(h_b.0..=h_b.1);
        let w = q * h;
        for c in &cuts {
            let slack = match c.sense {
                CutSense::Under => c.value(q, h) - w,
                CutSense::Over => w - c.value(q, h),
            };
            worst = worst.max(slack);
        }
    }
    let mut corner_err: f64 = 0.0;
    for q in [q_b.0, q_b.1] {
        for h in [h_b.0, h_b.1] {
            let (lo, hi) = env.bounds_at(q, h);
            corner_err = corner_err.max((lo - q * h).abs()).max((hi - q * h).abs());
        }
    }
    let pass = cuts.len() == 4 && worst <= 1e-9 && corner_err <= 1e-9;
    report("AC-4", pass, format!("max violation {worst:.3e} over 10000 samples; max corner gap {corner_err:.3e}"))
}

/// Is there a continuous PWL with breakpoints at the given sample indices
/// within `eps` of every sample? Decided by an LP, independently of the DP.
fn segmentation_feasible(samples: &[(f64, f64)], breaks: &[usize], eps: f64) -> bool {
    let mut m = AbstractModel::new();
    let lo = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min) - eps - 1.0;
    let hi = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max) + eps + 1.0;
    let ys: Vec<_> = breaks.iter().map(|b| m.add_var(format!("y{b}"), VarKind::Continuous, lo, hi)).collect();
    for k in 0..breaks.len() - 1 {
        let (a, b) = (breaks[k], breaks[k + 1]);
        for (i, (x, y)) in samples.iter().enumerate().take(b + 1).skip(a) {
            let s = (x - samples[a].0) / (samples[b].0 - samples[a].0);
            let terms = vec![(ys[k], 1.0 - s), (ys[k + 1], s)];
            m.add_constraint(format!("u{k}_{i}"), terms.clone(), RowSense::Le, y + eps);
            m.add_constraint(format!("l{k}_{i}"), terms, RowSense::Ge, y - eps);
        }
    }
    m.objective.sense = ObjSense::Minimize;
    HighsBackend.solve(&m, &SolveOptions::default()).status == SolveStatus::Optimal
}

fn exhaustive_min_pieces(samples: &[(f64, f64)], eps: f64) -> usize {
    let n = samples.len();
    let interior: Vec<usize> = (1..n - 1).collect();
    for extra in 0..=interior.len() {
        let mut found = false;
        let mut pick: Vec<usize> = (0..extra).collect();
        loop {
            let mut breaks = vec![0];
            breaks.extend(pick.iter().map(|&p| interior[p]));
            breaks.push(n - 1);
            if segmentation_feasible(samples, &breaks, eps) {
                found = true;
                break;
            }
            // next combination of `extra` out of `interior.len()`
            let mut i = extra;
            while i > 0 && pick[i - 1] == interior.len() - extra + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            pick[i - 1] += 1;
            for j in i..extra {
                pick[j] = pick[j - 1] + 1;
            }
        }
        if found {
            return extra + 1;
        }
    }
    n - 1
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5_005);
    let mut matched = 0;
    let mut within = 0;
    let mut failures = Vec::new();
    for k in 0..100 {
        let n = rng.gen_range(3..=12);
        let mut x = 0.0;
        let mut y: f64 = rng.gen_range(-1.0..1.0);
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                x += rng.gen_range(0.2..1.5);
                y += rng.gen_range(-1.0..1.0);
                (x, y)
            })
            .collect();
        let range = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
            - samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let eps = rng.gen_range(0.02..0.3) * range.max(1e-3);
        let fit = fit_pwl_1d_optimal(&samples, &FitSpec::new(eps)).unwrap();
        let expected = exhaustive_min_pieces(&samples, eps);
        if fit.n_pieces() == expected {
            matched += 1;
        } else {
            failures.push(format!("set {k}: dp {} vs exhaustive {expected}", fit.n_pieces()));
        }
        let err = max_error(&fit, &samples).unwrap().value;
        if err <= eps + fit_slack(&samples) {
            within += 1;
        } else {
            failures.push(format!("set {k}: error {err} > eps {eps}"));
        }
    }
    let parabola: Vec<(f64, f64)> = (0..=50).map(|i| i as f64 / 50.0).map(|x| (x, x * x)).collect();
    let pieces = fit_pwl_1d_optimal(&parabola, &FitSpec::new(0.125)).unwrap().n_pieces();
    let pass = matched == 100 && within == 100 && pieces == 1;
    let mut detail = format!("{matched}/100 piece counts match exhaustive search; {within}/100 within eps; x^2 eps=0.125 -> {pieces} piece(s)");
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    report("AC-5", pass, detail)
}

fn ac6(solved: &mut Vec<Solved>) -> Outcome {
    let start = Instant::now();
    let (system, inflows) = drawdown_instance(6);
    let objective = ObjectiveSpec::energy();
    let runs: Vec<_> = [Tier::LpFixed, Tier::MilpPwl]
        .iter()
        .map(|t| run_config(t.name(), &system, &inflows, &t.config(objective.clone()), &HighsBackend, &SolveOptions::default()))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let (lp, pwl) = (&runs[0], &runs[1]);
    let head_drop = lp
        .report
        .as_ref()
        .map(|r| {
            let h = &r.units[0].head;
            1.0 - h[h.len() - 1] / h[0]
        })
        .unwrap_or(f64::NAN);
    let declared = pwl.declared_bound_percent.unwrap_or(f64::NAN);
    for r in &runs {
        if let (Some(s), true) = (&r.schedule, r.n_binaries > 0) {
            solved.push(Solved { system: system.clone(), schedule: s.clone(), enforces_poz: false });
        }
    }
    let pass = lp.status == SolveStatus::Optimal
        && pwl.status == SolveStatus::Optimal
        && head_drop >= 0.10
        && lp.gap_percent >= 2.0
        && pwl.gap_percent.abs() <= 2.0 * declared
        && secs < 30.0;
    report(
        "AC-6",
        pass,
        format!(
            "lp_fixed gap {:.3}% (>= 2%); milp_pwl gap {:.4}% vs 2 x declared {:.3}%; simulated head drop {:.1}%; {secs:.2}s",
            lp.gap_percent,
            pwl.gap_percent,
            2.0 * declared,
            100.0 * head_drop
        ),
    )
}

fn ac7(solved: &[Solved]) -> Outcome {
    let checked: Vec<&Solved> = solved.iter().filter(|s| s.enforces_poz).collect();
    let mut hits = Vec::new();
    let mut values = 0;
    for s in &checked {
        values += s.schedule.units.iter().map(|u| u.power.len()).sum::<usize>();
        hits.extend(gap_hits(&s.system, &s.schedule, 1e-6));
    }
    let pass = !checked.is_empty() && hits.is_empty();
    let mut detail = format!(
        "{} POZ-enforcing schedules ({values} power values) of {} solved MILPs; {} inside a prohibited gap",
        checked.len(),
        solved.len(),
        hits.len()
    );
    if !hits.is_empty() {
        detail.push_str(&format!(": {}", hits.join(", ")));
    }
    report("AC-7", pass, detail)
}

fn ac8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8_008);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=24);
        let series: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..500.0)).collect();
        let pre = if rng.gen_bool(0.5) { rng.gen_range(0.0..100.0) } else { 0.0 };
        let inst = RoutingSpec::instantaneous().with_pre_horizon(pre);
        let lag0 = RoutingSpec::fixed_lag(0).with_pre_horizon(pre);
        let conv = RoutingSpec::convolution(vec![1.0]).with_pre_horizon(pre);
        for t in 1..=len {
            let a = inst.contribution(&series, t);
            if a != lag0.contribution(&series, t) || a != conv.contribution(&series, t) {
                mismatches += 1;
            }
        }
    }
    let pulse = [100.0, 0.0, 0.0, 0.0];
    let kernel = RoutingSpec::convolution(vec![0.25, 0.5, 0.25]);
    let routed: Vec<f64> = (1..=4).map(|t| kernel.contribution(&pulse, t)).collect();
    let pass = mismatches == 0 && routed == [25.0, 50.0, 25.0, 0.0];
    report("AC-8", pass, format!("{mismatches} mismatches over 1000 series; pulse -> {routed:?}"))
}

#[test]
fn acceptance() {
    let mut solved = Vec::new();
    let outcomes = vec![
        ac1(&mut solved),
        ac2(&mut solved),
        ac3(),
        ac4(),
        ac5(),
        ac6(&mut solved),
        ac7(&solved),
        ac8(),
    ];
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

//! Seeded synthetic cascades for benchmarks and property tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    CascadeSystem, Curve1D, GeneratingUnit, HydraulicArc, LossModel, OperatingZoneSet, PhysicalConstants,
    PowerSurface, Reservoir, Tailrace, TimeGrid, ZoneShape,
};
use crate::routing::RoutingSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub n_reservoirs: usize,
    pub units_per_reservoir: usize,
    pub n_periods: usize,
    /// Seconds.
    pub dt: f64,
    pub seed: u64,
}

impl SyntheticOptions {
    pub fn new(n_reservoirs: usize, units_per_reservoir: usize, seed: u64) -> Self {
        Self { n_reservoirs, units_per_reservoir, n_periods: 24, dt: 3600.0, seed }
    }

    pub fn periods(mut self, n: usize) -> Self {
        self.n_periods = n;
        self
    }
}

/// Chain cascade with `n_reservoirs` reservoirs and its local inflows.
pub fn generate_synthetic_cascade(n_reservoirs: usize, units_per_reservoir: usize, seed: u64) -> (CascadeSystem, Vec<Vec<f64>>) {
    generate(&SyntheticOptions::new(n_reservoirs, units_per_reservoir, seed))
}

pub fn generate(opts: &SyntheticOptions) -> (CascadeSystem, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.n_reservoirs.max(1);
    let t_n = opts.n_periods.max(1);
    let consts = PhysicalConstants::default();
    let mut reservoirs = Vec::with_capacity(n);
    let mut units = Vec::new();
    let mut arcs = Vec::new();
    let mut inflows = Vec::with_capacity(n);
    let mut crest = rng.gen_range(300.0..400.0);

    for r in 0..n {
        let id = format!("R{}", r + 1);
        let v_max: f64 = rng.gen_range(5e6..2e7);
        let v_min = v_max * rng.gen_range(0.05..0.15);
        let span = rng.gen_range(15.0..40.0);
        let base = crest - span;
        // concave storage-elevation table
        let table: Vec<(f64, f64)> = (0..=10)
            .map(|k| {
                let v = v_min + (v_max - v_min) * k as f64 / 10.0;
                (v, base + span * ((v - v_min) / (v_max - v_min)).sqrt())
            })
            .collect();
        let drop = rng.gen_range(40.0..80.0);
        let tw0 = base - drop;
        let tw_slope = rng.gen_range(0.005..0.02);
        let v_initial = v_min + (v_max - v_min) * rng.gen_range(0.4..0.8);
        let losses = if rng.gen_bool(0.3) {
            LossModel::Constant { values: (0..t_n).map(|_| rng.gen_range(0.0..0.5)).collect() }
        } else {
            LossModel::None
        };
        reservoirs.push(Reservoir {
            id: id.clone(),
            v_min,
            v_max,
            v_initial,
            v_terminal: Some(v_min + 0.9 * (v_initial - v_min)),
            e_min: table[0].1,
            e_max: table[10].1,
            storage_to_elevation: Curve1D::tabulated(table),
            tailrace: Tailrace { curve: Curve1D::affine(tw0, tw_slope), downstream: None },
            losses,
        });

        let mut q_total = 0.0;
        for k in 0..opts.units_per_reservoir {
            let q_max: f64 = rng.gen_range(40.0..120.0);
            let q_min = q_max * rng.gen_range(0.15..0.3);
            q_total += q_max;
            let hl_k = rng.gen_range(0.5..2.0) / (q_max * q_max);
            let h_lo = (drop - tw_slope * 2.0 * q_max * opts.units_per_reservoir as f64 - hl_k * q_max * q_max - 5.0).max(1.0);
            let h_hi = drop + span + 5.0;
            let q_grid: Vec<f64> = (0..5).map(|i| q_max * i as f64 / 4.0).collect();
            let h_grid: Vec<f64> = (0..4).map(|j| h_lo + (h_hi - h_lo) * j as f64 / 3.0).collect();
            let eta_peak = rng.gen_range(0.86..0.93);
            let eta = |q: f64| eta_peak - 0.25 * (q / q_max - 0.8).powi(2);
            let power: Vec<Vec<f64>> =
                q_grid.iter().map(|&q| h_grid.iter().map(|&h| consts.hydropower_mw(eta(q), q, h)).collect()).collect();
            let h_rated = drop + 0.5 * span;
            let p_lo = consts.hydropower_mw(eta(q_min), q_min, h_rated);
            let p_hi = consts.hydropower_mw(eta(q_max), q_max, h_lo);
            let gap_a = p_lo + 0.35 * (p_hi - p_lo);
            let gap_b = p_lo + 0.6 * (p_hi - p_lo);
            units.push(GeneratingUnit {
                id: format!("{id}U{}", k + 1),
                reservoir: id.clone(),
                q_min,
                q_max,
                power: PowerSurface::PowerGrid { discharge: q_grid, head: h_grid, power },
                head_loss: Curve1D::Polynomial { coefficients: vec![0.0, 0.0, hl_k], domain: Some([0.0, q_max]) },
                zones: Some(OperatingZoneSet {
                    shape: ZoneShape::Intervals1d { intervals: vec![[p_lo, gap_a], [gap_b, p_hi]] },
                    commitment: true,
                    startup_cost: Some(rng.gen_range(50.0..300.0)),
                }),
                initially_online: rng.gen_bool(0.5),
            });
        }

        let mean = if r == 0 { rng.gen_range(0.4..0.9) * q_total.max(20.0) } else { rng.gen_range(0.05..0.3) * q_total.max(20.0) };
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        inflows.push(
            (0..t_n)
                .map(|t| {
                    let seasonal = 1.0 + 0.3 * (phase + t as f64 * std::f64::consts::TAU / 24.0).sin();
                    (mean * seasonal * rng.gen_range(0.9..1.1)).max(0.0)
                })
                .collect(),
        );

        if r > 0 {
            let routing = if rng.gen_bool(0.5) { RoutingSpec::instantaneous() } else { RoutingSpec::fixed_lag(1) };
            arcs.push(HydraulicArc { from: format!("R{r}"), to: id, routing });
        }
        crest = tw0 - rng.gen_range(0.0..5.0);
    }

    let system = CascadeSystem { constants: consts, time_grid: TimeGrid::new(t_n, opts.dt), reservoirs, units, arcs };
    (system, inflows)
}

/// Random forest of `n` reservoirs (each with at most one downstream arc) with
/// mixed routing modes, one fixed-efficiency unit per reservoir, flat curves
/// and a random feasible-looking schedule. Meant for conservation checks.
pub fn random_dag(n: usize, n_periods: usize, seed: u64) -> (CascadeSystem, Vec<Vec<f64>>, crate::schedule::Schedule) {
    use crate::schedule::{ReservoirSchedule, Schedule, UnitSchedule};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.max(1);
    let mut reservoirs = Vec::with_capacity(n);
    let mut units = Vec::with_capacity(n);
    let mut arcs = Vec::new();
    for r in 0..n {
        let id = format!("R{}", r + 1);
        let v_max = rng.gen_range(1e6..5e6);
        reservoirs.push(Reservoir {
            id: id.clone(),
            v_min: 0.0,
            v_max,
            v_initial: v_max * rng.gen_range(0.2..0.9),
            v_terminal: None,
            e_min: 0.0,
            e_max: 1000.0,
            storage_to_elevation: Curve1D::tabulated(vec![(0.0, 100.0), (v_max, 100.0 + rng.gen_range(5.0..30.0))]),
            tailrace: Tailrace { curve: Curve1D::affine(50.0, 0.01), downstream: None },
            losses: match rng.gen_range(0..3) {
                0 => LossModel::None,
                1 => LossModel::Constant { values: (0..n_periods).map(|_| rng.gen_range(0.0..2.0)).collect() },
                _ => LossModel::LinearInStorage { intercept: rng.gen_range(0.0..1.0), coefficient: rng.gen_range(0.0..1e-6) },
            },
        });
        units.push(GeneratingUnit {
            id: format!("U{}", r + 1),
            reservoir: id,
            q_min: 0.0,
            q_max: 100.0,
            power: PowerSurface::FixedEfficiency { efficiency: 0.9 },
            head_loss: Curve1D::default(),
            zones: None,
            initially_online: true,
        });
    }
    for r in 0..n.saturating_sub(1) {
        if rng.gen_bool(0.85) {
            let to = rng.gen_range(r + 1..n);
            let routing = match rng.gen_range(0..3) {
                0 => RoutingSpec::instantaneous(),
                1 => RoutingSpec::fixed_lag(rng.gen_range(0..4)),
                _ => RoutingSpec::convolution((0..rng.gen_range(1..5)).map(|_| rng.gen_range(0.1..1.0)).collect()),
            }
            .with_pre_horizon(if rng.gen_bool(0.5) { rng.gen_range(0.0..30.0) } else { 0.0 });
            arcs.push(HydraulicArc { from: format!("R{}", r + 1), to: format!("R{}", to + 1), routing });
        }
    }
    let inflows: Vec<Vec<f64>> = (0..n).map(|_| (0..n_periods).map(|_| rng.gen_range(0.0..50.0)).collect()).collect();
    let schedule = Schedule {
        dt: 3600.0,
        units: (0..n)
            .map(|r| {
                let q: Vec<f64> = (0..n_periods).map(|_| rng.gen_range(0.0..100.0)).collect();
                UnitSchedule {
                    id: format!("U{}", r + 1),
                    power: vec![0.0; n_periods],
                    commitment: q.iter().map(|x| *x > 0.0).collect(),
                    head: vec![0.0; n_periods],
                    turbined: q,
                }
            })
            .collect(),
        reservoirs: (0..n)
            .map(|r| ReservoirSchedule {
                id: format!("R{}", r + 1),
                spill: (0..n_periods).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..20.0) } else { 0.0 }).collect(),
                storage: vec![0.0; n_periods],
                elevation: vec![0.0; n_periods],
            })
            .collect(),
    };
    let system = CascadeSystem {
        constants: PhysicalConstants::default(),
        time_grid: TimeGrid::new(n_periods, 3600.0),
        reservoirs,
        units,
        arcs,
    };
    (system, inflows, schedule)
}

/// Single reservoir drained from full over `n_periods` hours. The elevation
/// curve is steep, `E = 370 + 45 v - 15 v^2` with `v` in millions of m³, so
/// the head falls from 50 m at full storage to about 36 m at the end.
pub fn drawdown_instance(n_periods: usize) -> (CascadeSystem, Vec<Vec<f64>>) {
    let system = CascadeSystem {
        constants: PhysicalConstants::default(),
        time_grid: TimeGrid::new(n_periods, 3600.0),
        reservoirs: vec![Reservoir {
            id: "R1".into(),
            v_min: 0.3e6,
            v_max: 1.0e6,
            v_initial: 1.0e6,
            v_terminal: None,
            e_min: 300.0,
            e_max: 420.0,
            storage_to_elevation: Curve1D::Polynomial {
                coefficients: vec![370.0, 45e-6, -15e-12],
                domain: Some([0.3e6, 1.0e6]),
            },
            tailrace: Tailrace { curve: Curve1D::constant(350.0), downstream: None },
            losses: LossModel::None,
        }],
        units: vec![GeneratingUnit {
            id: "G1".into(),
            reservoir: "R1".into(),
            q_min: 0.0,
            q_max: 30.0,
            power: PowerSurface::FixedEfficiency { efficiency: 0.9 },
            head_loss: Curve1D::default(),
            zones: None,
            initially_online: true,
        }],
        arcs: vec![],
    };
    (system, vec![vec![0.0; n_periods]])
}

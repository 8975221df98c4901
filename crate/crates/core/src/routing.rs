//! Transfer of upstream releases to downstream reservoirs.
//!
//! Three regimes are supported: same-period arrival, a whole-period lag and a
//! discrete convolution with a travel-time kernel. Releases before the horizon
//! are a constant `pre_horizon_release`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CascadeSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("missing discharge series for upstream reservoir `{0}`")]
    MissingUpstream(String),
    #[error("period {t} outside 1..={horizon}")]
    PeriodOutOfRange { t: usize, horizon: usize },
    #[error("unknown reservoir `{0}`")]
    UnknownReservoir(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoutingMode {
    #[default]
    Instantaneous,
    FixedLag { tau: usize },
    /// Weights over lags `0..kernel.len()`.
    Convolution { kernel: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RoutingSpec {
    #[serde(default)]
    pub mode: RoutingMode,
    /// Constant release assumed for periods `t <= 0`, m³/s.
    #[serde(default)]
    pub pre_horizon_release: f64,
}

impl RoutingSpec {
    pub fn instantaneous() -> Self {
        Self::default()
    }

    pub fn fixed_lag(tau: usize) -> Self {
        Self { mode: RoutingMode::FixedLag { tau }, pre_horizon_release: 0.0 }
    }

    /// Convolution routing with the kernel normalized to unit sum.
    pub fn convolution(kernel: Vec<f64>) -> Self {
        Self { mode: RoutingMode::Convolution { kernel }, pre_horizon_release: 0.0 }.normalized()
    }

    pub fn with_pre_horizon(mut self, release: f64) -> Self {
        self.pre_horizon_release = release;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.pre_horizon_release.is_finite() {
            return Err("pre-horizon release must be finite".into());
        }
        if let RoutingMode::Convolution { kernel } = &self.mode {
            if kernel.is_empty() {
                return Err("empty convolution kernel".into());
            }
            if kernel.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err("kernel weights must be finite and >= 0".into());
            }
            if kernel.iter().sum::<f64>() <= 0.0 {
                return Err("kernel weights sum to zero".into());
            }
        }
        Ok(())
    }

    /// Divides convolution weights by their sum, warning when the raw sum is
    /// off by more than 1e-6.
    pub fn normalized(mut self) -> Self {
        if let RoutingMode::Convolution { kernel } = &mut self.mode {
            let sum: f64 = kernel.iter().sum();
            if sum > 0.0 && sum != 1.0 {
                if (sum - 1.0).abs() > 1e-6 {
                    log::warn!("routing kernel sums to {sum}; normalizing");
                }
                kernel.iter_mut().for_each(|w| *w /= sum);
            }
        }
        self
    }

    /// `(lag, weight)` taps.
    pub fn taps(&self) -> Vec<(usize, f64)> {
        match &self.mode {
            RoutingMode::Instantaneous => vec![(0, 1.0)],
            RoutingMode::FixedLag { tau } => vec![(*tau, 1.0)],
            RoutingMode::Convolution { kernel } => kernel.iter().copied().enumerate().collect(),
        }
    }

    /// Largest lag with a nonzero weight.
    pub fn max_lag(&self) -> usize {
        self.taps().iter().filter(|(_, w)| *w != 0.0).map(|(l, _)| *l).max().unwrap_or(0)
    }

    /// Contribution at period `t` (1-based) as a linear form in upstream
    /// releases: `(period, weight)` terms over in-horizon releases plus a constant
    /// from the pre-horizon boundary.
    pub fn linear_terms(&self, t: usize) -> (Vec<(usize, f64)>, f64) {
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for (lag, w) in self.taps() {
            if w == 0.0 {
                continue;
            }
            if t > lag {
                terms.push((t - lag, w));
            } else {
                constant += w * self.pre_horizon_release;
            }
        }
        (terms, constant)
    }

    /// Routed discharge arriving at period `t` (1-based) from `upstream`.
    pub fn contribution(&self, upstream: &[f64], t: usize) -> f64 {
        match &self.mode {
            RoutingMode::Instantaneous => self.at(upstream, t as isize),
            RoutingMode::FixedLag { tau } => self.at(upstream, t as isize - *tau as isize),
            RoutingMode::Convolution { kernel } => {
                let mut sum = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    sum += w * self.at(upstream, t as isize - j as isize);
                }
                sum
            }
        }
    }

    fn at(&self, upstream: &[f64], period: isize) -> f64 {
        if period <= 0 {
            self.pre_horizon_release
        } else {
            upstream[period as usize - 1]
        }
    }

    /// Volume rate (m³/s · periods) released within `1..=horizon` that has not
    /// arrived by the end of the horizon. Multiply by `dt` for m³.
    pub fn in_transit(&self, upstream: &[f64], horizon: usize) -> f64 {
        let taps = self.taps();
        let mut total = 0.0;
        for (s, q) in upstream.iter().enumerate().take(horizon) {
            let released = s + 1;
            let late: f64 = taps.iter().filter(|(lag, _)| released + lag > horizon).map(|(_, w)| w).sum();
            total += q * late;
        }
        total
    }

    /// Volume rate (m³/s · periods) of pre-horizon releases arriving within
    /// `1..=horizon`.
    pub fn pre_horizon_arrivals(&self, horizon: usize) -> f64 {
        (1..=horizon).map(|t| self.linear_terms(t).1).sum()
    }
}

/// Routed contribution at period `t` (1-based) of the upstream series.
pub fn route_contribution(spec: &RoutingSpec, upstream: &[f64], t: usize) -> f64 {
    spec.contribution(upstream, t)
}

/// Total inflow `I_{r,t}`: local inflow plus the routed releases of every
/// upstream reservoir. `discharges` and `local` are indexed like
/// `system.reservoirs`; an empty upstream series counts as missing.
pub fn total_inflow(
    system: &CascadeSystem,
    discharges: &[Vec<f64>],
    local: &[f64],
    reservoir: usize,
    t: usize,
) -> Result<f64, RoutingError> {
    let horizon = local.len();
    if t == 0 || t > horizon {
        return Err(RoutingError::PeriodOutOfRange { t, horizon });
    }
    let mut inflow = local[t - 1];
    for (from, arc) in system.incoming(reservoir) {
        let series = discharges
            .get(from)
            .filter(|s| s.len() >= t)
            .ok_or_else(|| RoutingError::MissingUpstream(system.reservoirs[from].id.clone()))?;
        inflow += arc.routing.contribution(series, t);
    }
    Ok(inflow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Curve1D, HydraulicArc, LossModel, PhysicalConstants, Reservoir, Tailrace, TimeGrid};
    use proptest::prelude::*;

    fn reservoir(id: &str) -> Reservoir {
        Reservoir {
            id: id.into(),
            v_min: 0.0,
            v_max: 1e6,
            v_initial: 0.0,
            v_terminal: None,
            e_min: 0.0,
            e_max: 100.0,
            storage_to_elevation: Curve1D::constant(50.0),
            tailrace: Tailrace::default(),
            losses: LossModel::None,
        }
    }

    fn system(arcs: Vec<HydraulicArc>) -> CascadeSystem {
        CascadeSystem {
            constants: PhysicalConstants::default(),
            time_grid: TimeGrid::new(2, 3600.0),
            reservoirs: vec![reservoir("A"), reservoir("B"), reservoir("C")],
            units: vec![],
            arcs,
        }
    }

    #[test]
    fn instantaneous_is_identity() {
        assert_eq!(route_contribution(&RoutingSpec::instantaneous(), &[100.0, 50.0], 2), 50.0);
    }

    #[test]
    fn unit_lag_with_zero_boundary() {
        let spec = RoutingSpec::fixed_lag(1);
        assert_eq!(route_contribution(&spec, &[10.0, 20.0], 1), 0.0);
        assert_eq!(route_contribution(&spec, &[10.0, 20.0], 2), 10.0);
        let warm = RoutingSpec::fixed_lag(1).with_pre_horizon(7.0);
        assert_eq!(route_contribution(&warm, &[10.0, 20.0], 1), 7.0);
    }

    #[test]
    fn pulse_convolution() {
        let spec = RoutingSpec::convolution(vec![0.25, 0.5, 0.25]);
        let q = [100.0, 0.0, 0.0, 0.0];
        let out: Vec<f64> = (1..=4).map(|t| route_contribution(&spec, &q, t)).collect();
        assert_eq!(out, vec![25.0, 50.0, 25.0, 0.0]);
    }

    #[test]
    fn kernel_normalized_on_construction() {
        let spec = RoutingSpec::convolution(vec![1.0, 2.0, 1.0]);
        assert_eq!(spec.taps(), vec![(0, 0.25), (1, 0.5), (2, 0.25)]);
    }

    #[test]
    fn headwater_inflow() {
        let sys = system(vec![]);
        let discharges = vec![vec![0.0; 2]; 3];
        assert_eq!(total_inflow(&sys, &discharges, &[7.0, 7.0], 0, 1).unwrap(), 7.0);
    }

    #[test]
    fn single_arc_inflow() {
        let sys = system(vec![HydraulicArc { from: "A".into(), to: "B".into(), routing: RoutingSpec::default() }]);
        let discharges = vec![vec![30.0], vec![0.0], vec![0.0]];
        assert_eq!(total_inflow(&sys, &discharges, &[5.0], 1, 1).unwrap(), 35.0);
    }

    #[test]
    fn two_arc_inflow() {
        let sys = system(vec![
            HydraulicArc { from: "A".into(), to: "C".into(), routing: RoutingSpec::fixed_lag(1) },
            HydraulicArc { from: "B".into(), to: "C".into(), routing: RoutingSpec::default() },
        ]);
        let discharges = vec![vec![12.0, 0.0], vec![0.0, 8.0], vec![0.0, 0.0]];
        assert_eq!(total_inflow(&sys, &discharges, &[0.0, 0.0], 2, 2).unwrap(), 20.0);
    }

    #[test]
    fn missing_upstream_series() {
        let sys = system(vec![HydraulicArc { from: "A".into(), to: "B".into(), routing: RoutingSpec::default() }]);
        let discharges = vec![vec![], vec![0.0], vec![0.0]];
        assert!(matches!(total_inflow(&sys, &discharges, &[5.0], 1, 1), Err(RoutingError::MissingUpstream(_))));
    }

    #[test]
    fn in_transit_accounting() {
        let spec = RoutingSpec::convolution(vec![0.25, 0.5, 0.25]);
        // release 100 in the last period: only 25 arrives within the horizon
        assert_eq!(spec.in_transit(&[0.0, 0.0, 100.0], 3), 75.0);
        let warm = RoutingSpec::fixed_lag(2).with_pre_horizon(4.0);
        assert_eq!(warm.pre_horizon_arrivals(3), 8.0);
    }

    proptest! {
        #[test]
        fn zero_lag_equivalences(q in prop::collection::vec(-1e3f64..1e3, 1..20), pre in -10.0f64..10.0) {
            let inst = RoutingSpec::instantaneous().with_pre_horizon(pre);
            let lag0 = RoutingSpec::fixed_lag(0).with_pre_horizon(pre);
            let conv = RoutingSpec::convolution(vec![1.0]).with_pre_horizon(pre);
            for t in 1..=q.len() {
                let a = inst.contribution(&q, t);
                prop_assert_eq!(a, lag0.contribution(&q, t));
                prop_assert_eq!(a, conv.contribution(&q, t));
            }
        }

        #[test]
        fn volume_is_conserved(
            q in prop::collection::vec(0.0f64..500.0, 1..12),
            raw in prop::collection::vec(0.0f64..1.0, 1..5),
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-3);
            let spec = RoutingSpec::convolution(raw);
            let mut extended = q.clone();
            extended.extend(std::iter::repeat(0.0).take(spec.max_lag()));
            let routed: f64 = (1..=extended.len()).map(|t| spec.contribution(&extended, t)).sum();
            let released: f64 = q.iter().sum();
            prop_assert!((routed - released).abs() <= 1e-9 * released.max(1.0));
        }

        #[test]
        fn routing_is_linear(
            pair in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..10),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            raw in prop::collection::vec(0.01f64..1.0, 1..4),
        ) {
            let spec = RoutingSpec::convolution(raw);
            let q1: Vec<f64> = pair.iter().map(|p| p.0).collect();
            let q2: Vec<f64> = pair.iter().map(|p| p.1).collect();
            let mix: Vec<f64> = pair.iter().map(|p| alpha * p.0 + beta * p.1).collect();
            for t in 1..=mix.len() {
                let lhs = spec.contribution(&mix, t);
                let rhs = alpha * spec.contribution(&q1, t) + beta * spec.contribution(&q2, t);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            }
        }
    }
}

//! Decision trajectories shared by the solver, the oracle and the simulator.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSchedule {
    pub id: String,
    /// Turbined discharge per period, m³/s.
    pub turbined: Vec<f64>,
    /// Predicted power per period, MW.
    pub power: Vec<f64>,
    pub commitment: Vec<bool>,
    /// Predicted net head per period, m.
    pub head: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSchedule {
    pub id: String,
    /// Non-power release per period, m³/s.
    pub spill: Vec<f64>,
    /// End-of-period storage, m³.
    pub storage: Vec<f64>,
    /// Predicted elevation per period, m.
    pub elevation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Period length, s.
    pub dt: f64,
    pub units: Vec<UnitSchedule>,
    pub reservoirs: Vec<ReservoirSchedule>,
}

impl Schedule {
    pub fn n_periods(&self) -> usize {
        self.units
            .first()
            .map(|u| u.turbined.len())
            .or_else(|| self.reservoirs.first().map(|r| r.spill.len()))
            .unwrap_or(0)
    }

    /// Energy implied by the predicted power, MWh.
    pub fn predicted_energy(&self) -> f64 {
        let hours = self.dt / 3600.0;
        self.units.iter().flat_map(|u| u.power.iter()).map(|p| p * hours).sum()
    }

    pub fn unit(&self, id: &str) -> Option<&UnitSchedule> {
        self.units.iter().find(|u| u.id == id)
    }

    pub fn reservoir(&self, id: &str) -> Option<&ReservoirSchedule> {
        self.reservoirs.iter().find(|r| r.id == id)
    }

    /// Total release of a reservoir given the ids of its units.
    pub fn release(&self, reservoir: &ReservoirSchedule, unit_ids: &[&str]) -> Vec<f64> {
        let mut total = reservoir.spill.clone();
        for id in unit_ids {
            if let Some(u) = self.unit(id) {
                for (acc, q) in total.iter_mut().zip(&u.turbined) {
                    *acc += q;
                }
            }
        }
        total
    }
}

//! Network data model and bus admittance construction.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default turbine-governor constants.
pub const DEFAULT_R_D: f64 = 0.2;
pub const DEFAULT_T_CH: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub base_voltage_kv: f64,
    /// Loads and renewables are in per unit on the system base.
    pub load_p: f64,
    pub load_q: f64,
    /// Renewable injection, stored as a positive injection (negative load).
    #[cfg_attr(feature = "serde", serde(default))]
    pub renewable_p: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub renewable_q: f64,
    /// Shunt conductance and susceptance in per unit.
    #[cfg_attr(feature = "serde", serde(default))]
    pub shunt_g: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub shunt_b: f64,
}

impl Bus {
    pub fn load(id: u32, load_p: f64, load_q: f64) -> Self {
        Self {
            id,
            kind: BusKind::Load,
            base_voltage_kv: 345.0,
            load_p,
            load_q,
            renewable_p: 0.0,
            renewable_q: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        }
    }

    pub fn with_kind(mut self, kind: BusKind) -> Self {
        self.kind = kind;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub resistance: f64,
    pub reactance: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub line_charging: f64,
    /// Off-nominal turns ratio on the `from` side; 1.0 for lines.
    #[cfg_attr(feature = "serde", serde(default = "unit_tap"))]
    pub tap: f64,
}

#[cfg(feature = "serde")]
fn unit_tap() -> f64 {
    1.0
}

impl Branch {
    pub fn line(from: u32, to: u32, resistance: f64, reactance: f64, line_charging: f64) -> Self {
        Self {
            from,
            to,
            resistance,
            reactance,
            line_charging,
            tap: 1.0,
        }
    }
}

/// Dynamic constants of a 4th-order machine, on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MachineParams {
    /// Inertia constant M = 2H/ω₀.
    pub m: f64,
    pub d: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_prime: f64,
    pub t_d0_prime: f64,
    pub t_ch: f64,
    pub r_d: f64,
}

impl MachineParams {
    /// Builds parameters from an inertia constant H in seconds.
    pub fn from_h(h: f64, omega0: f64) -> Self {
        Self {
            m: 2.0 * h / omega0,
            ..Self::default()
        }
    }
}

impl Default for MachineParams {
    fn default() -> Self {
        Self {
            m: 2.0 * 5.0 / crate::OMEGA0,
            d: 0.0,
            x_d: 1.0,
            x_q: 0.9,
            x_d_prime: 0.2,
            t_d0_prime: 6.0,
            t_ch: DEFAULT_T_CH,
            r_d: DEFAULT_R_D,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Generator {
    pub bus: u32,
    /// Scheduled active output (pu); ignored at the slack.
    pub p_set: f64,
    /// Voltage setpoint (pu).
    pub v_set: f64,
    pub params: MachineParams,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerNetwork {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

/// Dense bus admittance split into real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl PowerNetwork {
    /// Validates and returns the network.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        let net = Self {
            base_mva,
            buses,
            branches,
            generators,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::Validation("network has no buses".into()));
        }
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation(format!("base MVA must be positive, got {}", self.base_mva)));
        }
        let mut ids = BTreeSet::new();
        for bus in &self.buses {
            if bus.id == 0 {
                return Err(Error::Validation("bus ids start at 1".into()));
            }
            if !ids.insert(bus.id) {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(Error::Validation(format!("expected exactly one slack bus, found {slacks}")));
        }

        for br in &self.branches {
            for end in [br.from, br.to] {
                if !ids.contains(&end) {
                    return Err(Error::UnknownBus(end));
                }
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {0}-{0} is a self loop", br.from)));
            }
            if br.resistance < 0.0 || br.line_charging < 0.0 || !(br.tap > 0.0) {
                return Err(Error::Validation(format!(
                    "branch {}-{} has negative resistance, charging or tap",
                    br.from, br.to
                )));
            }
        }

        let mut gen_buses = BTreeSet::new();
        for g in &self.generators {
            let Some(bus) = self.bus(g.bus) else {
                return Err(Error::UnknownBus(g.bus));
            };
            if !gen_buses.insert(g.bus) {
                return Err(Error::Validation(format!("more than one generator at bus {}", g.bus)));
            }
            if bus.kind == BusKind::Load {
                return Err(Error::Validation(format!("generator at load bus {}", g.bus)));
            }
            let p = &g.params;
            let positive = [p.m, p.x_d, p.x_q, p.x_d_prime, p.t_d0_prime, p.t_ch, p.r_d];
            if positive.iter().any(|v| !(*v > 0.0)) || !(p.d >= 0.0) {
                return Err(Error::Validation(format!("nonpositive machine constant at bus {}", g.bus)));
            }
            if !(p.x_d_prime < p.x_d) {
                return Err(Error::Validation(format!("x'd must be below xd at bus {}", g.bus)));
            }
            if !(g.v_set > 0.0) {
                return Err(Error::Validation(format!("nonpositive voltage setpoint at bus {}", g.bus)));
            }
        }
        for bus in &self.buses {
            if bus.kind != BusKind::Load && !gen_buses.contains(&bus.id) {
                return Err(Error::Validation(format!("bus {} is typed as generator but has no machine", bus.id)));
            }
        }

        // Every bus must reach a generator through the branch graph.
        let n = self.buses.len();
        let index = self.index_map();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (f, t) = (index[&br.from], index[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = gen_buses.iter().map(|id| index[id]).collect();
        for &q in &queue {
            seen[q] = true;
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "bus {} is not connected to any generator",
                self.buses[k].id
            )));
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn index_map(&self) -> BTreeMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack")
    }

    pub fn generator_at(&self, id: u32) -> Option<usize> {
        self.generators.iter().position(|g| g.bus == id)
    }

    /// Standard π-model admittance. Taps are real turns ratios on the
    /// `from` side, which keeps the matrix symmetric.
    pub fn admittance(&self) -> Result<AdmittanceMatrix> {
        let n = self.buses.len();
        let index = self.index_map();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for br in &self.branches {
            let z2 = br.resistance * br.resistance + br.reactance * br.reactance;
            if z2 == 0.0 {
                return Err(Error::ZeroImpedance {
                    from: br.from,
                    to: br.to,
                });
            }
            let (gs, bs) = (br.resistance / z2, -br.reactance / z2);
            let (f, t) = (index[&br.from], index[&br.to]);
            let tap = br.tap;
            let half = 0.5 * br.line_charging;
            g[(f, f)] += gs / (tap * tap);
            b[(f, f)] += bs / (tap * tap) + half;
            g[(t, t)] += gs;
            b[(t, t)] += bs + half;
            g[(f, t)] -= gs / tap;
            b[(f, t)] -= bs / tap;
            g[(t, f)] -= gs / tap;
            b[(t, f)] -= bs / tap;
        }
        for (i, bus) in self.buses.iter().enumerate() {
            g[(i, i)] += bus.shunt_g;
            b[(i, i)] += bus.shunt_b;
        }
        Ok(AdmittanceMatrix { g, b })
    }
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// Nonzero pattern per row, diagonal first.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut row = vec![i];
                row.extend((0..n).filter(|&j| j != i && (self.g[(i, j)] != 0.0 || self.b[(i, j)] != 0.0)));
                row
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(x: f64) -> PowerNetwork {
        let slack = Bus::load(1, 0.0, 0.0).with_kind(BusKind::Slack);
        PowerNetwork::new(
            100.0,
            vec![slack, Bus::load(2, 0.5, 0.2)],
            vec![Branch::line(1, 2, 0.0, x, 0.0)],
            vec![Generator {
                bus: 1,
                p_set: 0.0,
                v_set: 1.0,
                params: MachineParams::default(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn two_bus_reactance_admittance() {
        let y = two_bus(0.1).admittance().unwrap();
        assert!((y.b[(0, 1)] - 10.0).abs() < 1e-12);
        assert!((y.b[(0, 0)] + 10.0).abs() < 1e-12);
        assert!(y.g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_impedance_is_rejected() {
        let net = two_bus(0.0);
        assert_eq!(net.admittance(), Err(Error::ZeroImpedance { from: 1, to: 2 }));
    }

    #[test]
    fn duplicate_and_missing_slack() {
        let a = Bus::load(1, 0.0, 0.0);
        let err = PowerNetwork::new(100.0, vec![a.clone(), a.clone()], vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("duplicate")));
        let err = PowerNetwork::new(100.0, vec![a], vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("slack")));
    }

    #[test]
    fn islanded_load_is_rejected() {
        let mut net = two_bus(0.1);
        net.buses.push(Bus::load(3, 0.1, 0.0));
        assert!(matches!(net.validate(), Err(Error::Validation(ref m)) if m.contains("bus 3")));
    }

    #[test]
    fn row_sums_equal_charging_for_unit_taps() {
        let slack = Bus::load(1, 0.0, 0.0).with_kind(BusKind::Slack);
        let net = PowerNetwork::new(
            100.0,
            vec![slack, Bus::load(2, 0.0, 0.0), Bus::load(3, 0.0, 0.0)],
            vec![Branch::line(1, 2, 0.01, 0.1, 0.2), Branch::line(2, 3, 0.02, 0.05, 0.1)],
            vec![Generator {
                bus: 1,
                p_set: 0.0,
                v_set: 1.0,
                params: MachineParams::default(),
            }],
        )
        .unwrap();
        let y = net.admittance().unwrap();
        let expect = [0.1, 0.15, 0.05];
        for i in 0..3 {
            let gs: f64 = y.g.row(i).sum();
            let bs: f64 = y.b.row(i).sum();
            assert!(gs.abs() < 1e-12);
            assert!((bs - expect[i]).abs() < 1e-12);
        }
        assert_eq!(y.g, y.g.transpose());
        assert_eq!(y.b, y.b.transpose());
    }
}

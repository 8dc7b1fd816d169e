//! Machine-parameter sidecar files.
//!
//! ```json
//! {
//!   "generators": {
//!     "1": { "h": 23.64, "d": 0.0, "x_d": 0.146, "x_q": 0.0969,
//!            "x_d_prime": 0.0608, "t_d0_prime": 8.96 }
//!   },
//!   "renewables": { "5": { "p_mw": 10.0, "q_mvar": 0.0 } }
//! }
//! ```
//!
//! Inertia may be given as `h` (seconds) or `m` (pu·s²). Any missing
//! constant falls back to [`MachineParams::default`]; `t_ch` and `r_d`
//! default to 0.2.

use std::collections::BTreeMap;

use lyapgrid_core::network::{Bus, MachineParams};
use lyapgrid_core::OMEGA0;
use serde::{Deserialize, Serialize};

use crate::LoadError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_d_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_d0_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_d: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableEntry {
    pub p_mw: f64,
    #[serde(default)]
    pub q_mvar: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSidecar {
    #[serde(default)]
    pub generators: BTreeMap<String, MachineEntry>,
    #[serde(default)]
    pub renewables: BTreeMap<String, RenewableEntry>,
}

fn key_to_bus(key: &str) -> Result<u32, LoadError> {
    key.trim()
        .parse()
        .map_err(|_| LoadError::Sidecar(format!("`{key}` is not a bus number")))
}

impl MachineSidecar {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let s: Self = serde_json::from_str(text)?;
        for k in s.generators.keys().chain(s.renewables.keys()) {
            key_to_bus(k)?;
        }
        Ok(s)
    }

    fn entry(&self, bus: u32) -> Option<&MachineEntry> {
        self.generators
            .iter()
            .find(|(k, _)| key_to_bus(k).ok() == Some(bus))
            .map(|(_, v)| v)
    }

    pub fn params_for(&self, bus: u32) -> Result<MachineParams, LoadError> {
        let d = MachineParams::default();
        let Some(e) = self.entry(bus) else {
            return Ok(d);
        };
        let m = match (e.h, e.m) {
            (Some(_), Some(_)) => {
                return Err(LoadError::Sidecar(format!("bus {bus}: give either `h` or `m`, not both")))
            }
            (Some(h), None) => 2.0 * h / OMEGA0,
            (None, Some(m)) => m,
            (None, None) => d.m,
        };
        Ok(MachineParams {
            m,
            d: e.d.unwrap_or(d.d),
            x_d: e.x_d.unwrap_or(d.x_d),
            x_q: e.x_q.unwrap_or(d.x_q),
            x_d_prime: e.x_d_prime.unwrap_or(d.x_d_prime),
            t_d0_prime: e.t_d0_prime.unwrap_or(d.t_d0_prime),
            t_ch: e.t_ch.unwrap_or(d.t_ch),
            r_d: e.r_d.unwrap_or(d.r_d),
        })
    }

    pub fn apply_renewables(&self, buses: &mut [Bus], base_mva: f64) -> Result<(), LoadError> {
        for (k, r) in &self.renewables {
            let id = key_to_bus(k)?;
            let bus = buses
                .iter_mut()
                .find(|b| b.id == id)
                .ok_or_else(|| LoadError::Sidecar(format!("renewable at unknown bus {id}")))?;
            bus.renewable_p = r.p_mw / base_mva;
            bus.renewable_q = r.q_mvar / base_mva;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inertia_from_h_or_m() {
        let s = MachineSidecar::from_json(r#"{"generators":{"1":{"h":5.0},"2":{"m":0.1,"x_d":1.5}}}"#).unwrap();
        assert!((s.params_for(1).unwrap().m - 10.0 / OMEGA0).abs() < 1e-15);
        let p2 = s.params_for(2).unwrap();
        assert_eq!((p2.m, p2.x_d, p2.r_d, p2.t_ch), (0.1, 1.5, 0.2, 0.2));
        assert_eq!(s.params_for(7).unwrap(), MachineParams::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(MachineSidecar::from_json(r#"{"generators":{"1":{"inertia":5.0}}}"#).is_err());
        assert!(MachineSidecar::from_json(r#"{"generators":{"one":{}}}"#).is_err());
    }
}

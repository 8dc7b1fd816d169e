//! Native JSON network format, schema `lyapgrid.network/1`.
//!
//! ```json
//! {
//!   "schema": "lyapgrid.network/1",
//!   "base_mva": 100.0,
//!   "buses": [{ "id": 1, "kind": "slack", "base_voltage_kv": 345.0,
//!               "load_p": 0.0, "load_q": 0.0 }],
//!   "branches": [{ "from": 1, "to": 2, "resistance": 0.0, "reactance": 0.1 }],
//!   "generators": [{ "bus": 1, "p_set": 0.0, "v_set": 1.0,
//!                    "params": { "m": 0.0265, "d": 0.0, "x_d": 1.0, "x_q": 0.9,
//!                                "x_d_prime": 0.2, "t_d0_prime": 6.0,
//!                                "t_ch": 0.2, "r_d": 0.2 } }]
//! }
//! ```
//!
//! All quantities are per unit on `base_mva`. `renewable_p`, `renewable_q`,
//! `shunt_g`, `shunt_b`, `line_charging` default to 0 and `tap` to 1.

use lyapgrid_core::network::PowerNetwork;
use serde::{Deserialize, Serialize};

use crate::LoadError;

pub const NETWORK_SCHEMA: &str = "lyapgrid.network/1";

#[derive(Serialize, Deserialize)]
struct Document {
    schema: String,
    #[serde(flatten)]
    network: PowerNetwork,
}

pub fn parse_network_json(text: &str) -> Result<PowerNetwork, LoadError> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.schema != NETWORK_SCHEMA {
        return Err(LoadError::Schema(doc.schema));
    }
    doc.network.validate()?;
    Ok(doc.network)
}

pub fn write_network_json(net: &PowerNetwork) -> String {
    let doc = Document {
        schema: NETWORK_SCHEMA.to_string(),
        network: net.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("network serializes")
}

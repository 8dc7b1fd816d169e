//! Reader and writer for the numeric subset of MATPOWER case files:
//! `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch`.
//!
//! Bus columns: `bus_i type Pd Qd Gs Bs area Vm Va baseKV ...`
//! Gen columns: `bus Pg Qg Qmax Qmin Vg mBase status ...`
//! Branch columns: `fbus tbus r x b rateA rateB rateC ratio angle status ...`
//!
//! Powers are converted to per unit on `baseMVA`. Out-of-service generators
//! and branches are dropped. Tap ratio 0 means a line; phase shifters are
//! rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use lyapgrid_core::network::{Branch, Bus, BusKind, Generator, MachineParams, PowerNetwork};

use crate::sidecar::MachineSidecar;
use crate::LoadError;

#[derive(Debug, Default)]
struct RawCase {
    base_mva: Option<(usize, f64)>,
    tables: BTreeMap<&'static str, (usize, Vec<(usize, Vec<f64>)>)>,
}

const TABLES: [&str; 3] = ["bus", "gen", "branch"];

fn parse_err(line: usize, message: impl Into<String>) -> LoadError {
    LoadError::Parse {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_row(line_no: usize, text: &str, out: &mut Vec<(usize, Vec<f64>)>) -> Result<(), LoadError> {
    for chunk in text.split(';') {
        let fields: Vec<&str> = chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            let v: f64 = match f {
                "Inf" | "inf" => f64::INFINITY,
                "-Inf" | "-inf" => f64::NEG_INFINITY,
                _ => f.parse().map_err(|_| parse_err(line_no, format!("not a number: `{f}`")))?,
            };
            row.push(v);
        }
        out.push((line_no, row));
    }
    Ok(())
}

fn parse_raw(text: &str) -> Result<RawCase, LoadError> {
    let mut raw = RawCase::default();
    let mut open: Option<(&'static str, usize, Vec<(usize, Vec<f64>)>)> = None;
    for (idx, full) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(full).trim();
        if line.is_empty() {
            continue;
        }
        if let Some((name, start, mut rows)) = open.take() {
            if let Some(end) = line.find(']') {
                parse_row(line_no, &line[..end], &mut rows)?;
                raw.tables.insert(name, (start, rows));
            } else {
                parse_row(line_no, line, &mut rows)?;
                open = Some((name, start, rows));
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some((lhs, rhs)) = rest.split_once('=') else {
            continue;
        };
        let (lhs, rhs) = (lhs.trim(), rhs.trim());
        if lhs == "baseMVA" {
            let v = rhs.trim_end_matches(';').trim();
            let v: f64 = v.parse().map_err(|_| parse_err(line_no, format!("invalid baseMVA `{v}`")))?;
            raw.base_mva = Some((line_no, v));
        } else if let Some(&name) = TABLES.iter().find(|&&t| t == lhs) {
            let body = rhs
                .strip_prefix('[')
                .ok_or_else(|| parse_err(line_no, format!("expected `[` after mpc.{name} =")))?;
            let mut rows = Vec::new();
            if let Some(end) = body.find(']') {
                parse_row(line_no, &body[..end], &mut rows)?;
                raw.tables.insert(name, (line_no, rows));
            } else {
                parse_row(line_no, body, &mut rows)?;
                open = Some((name, line_no, rows));
            }
        }
    }
    if let Some((name, start, _)) = open {
        return Err(parse_err(start, format!("mpc.{name} table is not closed")));
    }
    Ok(raw)
}

fn check_width(name: &str, rows: &[(usize, Vec<f64>)], min: usize) -> Result<(), LoadError> {
    for (line, row) in rows {
        if row.len() < min {
            return Err(parse_err(
                *line,
                format!("mpc.{name} row has {} columns, need at least {min}", row.len()),
            ));
        }
    }
    Ok(())
}

fn as_id(line: usize, v: f64) -> Result<u32, LoadError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(parse_err(line, format!("invalid bus number {v}")))
    }
}

/// Parses a case, taking machine constants from `sidecar` when given.
pub fn parse_matpower(text: &str, sidecar: Option<&MachineSidecar>) -> Result<PowerNetwork, LoadError> {
    let raw = parse_raw(text)?;
    let (_, base) = raw.base_mva.ok_or_else(|| parse_err(1, "missing mpc.baseMVA"))?;
    if !(base > 0.0) {
        return Err(parse_err(raw.base_mva.map(|b| b.0).unwrap_or(1), "baseMVA must be positive"));
    }
    let table = |name: &'static str| {
        raw.tables
            .get(name)
            .ok_or_else(|| parse_err(1, format!("missing mpc.{name} table")))
    };
    let (bus_line, bus_rows) = table("bus")?;
    let (_, gen_rows) = table("gen")?;
    let (_, branch_rows) = table("branch")?;
    if bus_rows.is_empty() {
        return Err(parse_err(*bus_line, "mpc.bus table is empty"));
    }
    check_width("bus", bus_rows, 10)?;
    check_width("gen", gen_rows, 8)?;
    check_width("branch", branch_rows, 11)?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut bus_lines = BTreeMap::new();
    for (line, r) in bus_rows {
        let id = as_id(*line, r[0])?;
        let kind = match r[1] as i64 {
            1 => BusKind::Load,
            2 => BusKind::Generator,
            3 => BusKind::Slack,
            t => return Err(parse_err(*line, format!("unsupported bus type {t}"))),
        };
        if bus_lines.insert(id, *line).is_some() {
            return Err(parse_err(*line, format!("duplicate bus id {id}")));
        }
        buses.push(Bus {
            id,
            kind,
            base_voltage_kv: r[9],
            load_p: r[2] / base,
            load_q: r[3] / base,
            renewable_p: 0.0,
            renewable_q: 0.0,
            shunt_g: r[4] / base,
            shunt_b: r[5] / base,
        });
    }

    let mut generators = Vec::new();
    for (line, r) in gen_rows {
        if r[7] <= 0.0 {
            continue;
        }
        let bus = as_id(*line, r[0])?;
        if !bus_lines.contains_key(&bus) {
            return Err(parse_err(*line, format!("generator at unknown bus {bus}")));
        }
        let params = match sidecar {
            Some(s) => s.params_for(bus)?,
            None => MachineParams::default(),
        };
        generators.push(Generator {
            bus,
            p_set: r[1] / base,
            v_set: r[5],
            params,
        });
    }

    let mut branches = Vec::new();
    for (line, r) in branch_rows {
        if r[10] <= 0.0 {
            continue;
        }
        let (from, to) = (as_id(*line, r[0])?, as_id(*line, r[1])?);
        if r[9] != 0.0 {
            return Err(parse_err(*line, "phase-shifting transformers are not supported"));
        }
        branches.push(Branch {
            from,
            to,
            resistance: r[2],
            reactance: r[3],
            line_charging: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
        });
    }

    if let Some(s) = sidecar {
        s.apply_renewables(&mut buses, base)?;
    }
    PowerNetwork::new(base, buses, branches, generators).map_err(LoadError::Network)
}

/// Finds a value `y` near `x·base` that divides back to exactly `x`.
fn unscale(x: f64, base: f64) -> f64 {
    let y0 = x * base;
    if y0 / base == x || !y0.is_finite() || y0 == 0.0 {
        return y0;
    }
    let mut up = y0;
    let mut down = y0;
    for _ in 0..4 {
        up = f64::from_bits(if up > 0.0 { up.to_bits() + 1 } else { up.to_bits() - 1 });
        down = f64::from_bits(if down > 0.0 { down.to_bits() - 1 } else { down.to_bits() + 1 });
        if up / base == x {
            return up;
        }
        if down / base == x {
            return down;
        }
    }
    y0
}

/// Writes the network back as a MATPOWER case. Renewable injections are not
/// part of the format and are dropped.
pub fn write_matpower(net: &PowerNetwork, name: &str) -> String {
    let base = net.base_mva;
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {name}");
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {base:?};");
    let _ = writeln!(s, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(s, "mpc.bus = [");
    let gen_v: BTreeMap<u32, f64> = net.generators.iter().map(|g| (g.bus, g.v_set)).collect();
    for b in &net.buses {
        let t = match b.kind {
            BusKind::Load => 1,
            BusKind::Generator => 2,
            BusKind::Slack => 3,
        };
        let vm = gen_v.get(&b.id).copied().unwrap_or(1.0);
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t0\t{:?}\t1\t1.1\t0.9;",
            b.id,
            t,
            unscale(b.load_p, base),
            unscale(b.load_q, base),
            unscale(b.shunt_g, base),
            unscale(b.shunt_b, base),
            vm,
            b.base_voltage_kv
        );
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "\t{}\t{:?}\t0\t9999\t-9999\t{:?}\t{:?}\t1\t9999\t0;",
            g.bus,
            unscale(g.p_set, base),
            g.v_set,
            base
        );
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax");
    let _ = writeln!(s, "mpc.branch = [");
    for br in &net.branches {
        let ratio = if br.tap == 1.0 { 0.0 } else { br.tap };
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t0\t0\t0\t{:?}\t0\t1\t-360\t360;",
            br.from, br.to, br.resistance, br.reactance, br.line_charging, ratio
        );
    }
    let _ = writeln!(s, "];");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;
  2 1 50 20 0 0 1 1 0 345 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 300 -300 1.02 100 1 250 10;
];
mpc.branch = [
  1 2 0.01 0.1 0.02 250 250 250 0 0 1 -360 360;
];
";

    #[test]
    fn parses_per_unit_values() {
        let net = parse_matpower(TINY, None).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.buses[1].load_p, 0.5);
        assert_eq!(net.generators[0].v_set, 1.02);
        assert_eq!(net.branches[0].tap, 1.0);
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = TINY.replace("2 1 50 20", "2 1 5x0 20");
        match parse_matpower(&bad, None) {
            Err(LoadError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_bus_table_is_an_error() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n];\nmpc.gen = [\n];\nmpc.branch = [\n];\n";
        assert!(matches!(parse_matpower(text, None), Err(LoadError::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_bus_is_an_error() {
        let bad = TINY.replace("2 1 50 20", "1 1 50 20");
        assert!(matches!(parse_matpower(&bad, None), Err(LoadError::Parse { line: 5, .. })));
    }

    #[test]
    fn missing_slack_is_a_validation_error() {
        let bad = TINY.replace("1 3 0 0", "1 2 0 0");
        assert!(matches!(
            parse_matpower(&bad, None),
            Err(LoadError::Network(lyapgrid_core::Error::Validation(_)))
        ));
    }

    #[test]
    fn writer_round_trips() {
        let net = parse_matpower(TINY, None).unwrap();
        let again = parse_matpower(&write_matpower(&net, "tiny"), None).unwrap();
        assert_eq!(net, again);
    }
}

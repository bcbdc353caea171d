use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{simulate_transient, FaultSpec, TransientConfig, TransientTrace};
use crate::error::{Error, Result};
use crate::grid::{NetworkModel, PowerFlowSolution};

/// Voltage threshold the severity integral measures against, p.u.
pub const VOLTAGE_THRESHOLD: f64 = 0.8;
/// Length of the post-fault recovery window, s.
pub const RECOVERY_WINDOW: f64 = 10.0;

pub const SENTINEL_V_SEVERITY: f64 = 8.0;
pub const SENTINEL_TSI: f64 = -1.0;
pub const SENTINEL_ROCOF: f64 = 99.0;

pub const INDEX_NAMES: [&str; 3] = ["v_severity", "tsi", "rocof"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeverityAggregate {
    #[default]
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityIndices {
    /// p.u.·s
    pub v_severity: f64,
    pub tsi: f64,
    /// Hz/s
    pub rocof: f64,
    pub pf_converged: bool,
    /// Sentinel values stand in for a scenario that could not be simulated.
    #[serde(default)]
    pub sentinel: bool,
    /// The simulation stopped at the speed blow-up guard.
    #[serde(default)]
    pub truncated: bool,
}

impl StabilityIndices {
    pub fn sentinel() -> Self {
        Self {
            v_severity: SENTINEL_V_SEVERITY,
            tsi: SENTINEL_TSI,
            rocof: SENTINEL_ROCOF,
            pf_converged: false,
            sentinel: true,
            truncated: false,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.v_severity, self.tsi, self.rocof]
    }
}

/// Trapezoidal integral of `max(0, 0.8 − V)` over the recovery window after
/// the fault, per load bus, aggregated by max (default) or sum.
pub fn voltage_severity(trace: &TransientTrace, aggregate: SeverityAggregate) -> f64 {
    let t0 = trace.t_fault;
    let t1 = t0 + RECOVERY_WINDOW;
    let eps = 1e-9 * trace.step;
    let idx: Vec<usize> = (0..trace.times.len())
        .filter(|&i| trace.times[i] >= t0 - eps && trace.times[i] <= t1 + eps)
        .collect();
    let per_bus = trace.load_buses.iter().map(|&b| {
        idx.windows(2)
            .map(|w| {
                let (i, j) = (w[0], w[1]);
                let a = (VOLTAGE_THRESHOLD - trace.voltage[i][b]).max(0.0);
                let c = (VOLTAGE_THRESHOLD - trace.voltage[j][b]).max(0.0);
                0.5 * (a + c) * (trace.times[j] - trace.times[i])
            })
            .sum::<f64>()
    });
    match aggregate {
        SeverityAggregate::Max => per_bus.fold(0.0, f64::max),
        SeverityAggregate::Sum => per_bus.sum(),
    }
}

/// `(π − δ)/(π + δ)` for a separation `δ ≥ 0` in radians.
pub fn tsi_from_separation(delta: f64) -> f64 {
    (PI - delta) / (PI + delta)
}

/// TSI from the largest pairwise rotor-angle separation over the trace.
/// Returns the index and whether the single-machine convention applied.
pub fn tsi(trace: &TransientTrace) -> (f64, bool) {
    if trace.n_machines() < 2 {
        return (1.0, true);
    }
    let sep = trace
        .delta
        .iter()
        .map(|d| {
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max);
    (tsi_from_separation(sep), false)
}

/// Largest `|f(t + w) − f(t)| / w` with both ends in the post-fault interval.
pub fn rocof(trace: &TransientTrace, window: f64) -> f64 {
    let lag = (window / trace.step).round() as usize;
    if lag == 0 {
        return 0.0;
    }
    let w = lag as f64 * trace.step;
    let eps = 1e-9 * trace.step;
    let start = trace
        .times
        .iter()
        .position(|t| *t >= trace.t_fault - eps)
        .unwrap_or(trace.times.len());
    let f = &trace.frequency;
    (start..f.len().saturating_sub(lag))
        .map(|i| (f[i + lag] - f[i]).abs() / w)
        .fold(0.0, f64::max)
}

/// Indices for one scenario; a non-converged power flow yields sentinels.
pub fn evaluate_scenario(
    net: &NetworkModel,
    pf: &PowerFlowSolution,
    fault: &FaultSpec,
    cfg: &TransientConfig,
) -> Result<StabilityIndices> {
    if !pf.converged {
        return Ok(StabilityIndices::sentinel());
    }
    let trace = simulate_transient(net, pf, Some(fault), cfg)?;
    let (t, _) = tsi(&trace);
    Ok(StabilityIndices {
        v_severity: voltage_severity(&trace, cfg.severity),
        tsi: t,
        rocof: rocof(&trace, cfg.rocof_window),
        pf_converged: true,
        sentinel: false,
        truncated: trace.truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub scenario_id: usize,
    pub indices: StabilityIndices,
}

pub fn indices_csv(records: &[IndexRecord]) -> String {
    let mut out = String::from("scenario_id,v_severity,tsi,rocof,pf_converged\n");
    for r in records {
        let i = &r.indices;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.scenario_id, i.v_severity, i.tsi, i.rocof, i.pf_converged as u8
        ));
    }
    out
}

/// Reads the index CSV written by [`indices_csv`] or produced externally.
pub fn parse_indices_csv(text: &str, origin: &str) -> Result<Vec<IndexRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse(origin, "empty index file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["scenario_id", "v_severity", "tsi", "rocof", "pf_converged"] {
        return Err(Error::parse(origin, format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| Error::parse(origin, format!("line {}: {what}", n + 2));
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
            let conv = match f[4] {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad("pf_converged must be 0/1")),
            };
            let v = num(f[1]).ok_or_else(|| bad("bad v_severity"))?;
            let t = num(f[2]).ok_or_else(|| bad("bad tsi"))?;
            let r = num(f[3]).ok_or_else(|| bad("bad rocof"))?;
            let sentinel = !conv && v == SENTINEL_V_SEVERITY && t == SENTINEL_TSI && r == SENTINEL_ROCOF;
            Ok(IndexRecord {
                scenario_id: f[0].parse().map_err(|_| bad("bad scenario_id"))?,
                indices: StabilityIndices {
                    v_severity: v,
                    tsi: t,
                    rocof: r,
                    pf_converged: conv,
                    sentinel,
                    truncated: false,
                },
            })
        })
        .collect()
}

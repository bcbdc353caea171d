use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    #[serde(default)]
    pub base_kv: f64,
    #[serde(rename = "type")]
    pub bus_type: BusType,
    /// Shunt conductance, p.u. on system base.
    #[serde(default)]
    pub shunt_g: f64,
    /// Shunt susceptance, p.u. on system base.
    #[serde(default)]
    pub shunt_b: f64,
    /// Voltage magnitude setpoint for slack and PV buses.
    #[serde(default = "unit")]
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, split evenly between both ends.
    #[serde(default)]
    pub b: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Synchronous,
    Renewable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    pub kind: GeneratorKind,
    /// MW.
    pub p_set: f64,
    /// MVAr; only used for renewable (PQ) injections.
    #[serde(default)]
    pub q_set: f64,
    /// Inertia constant on the machine rating, MW·s/MVA. Zero for renewables.
    #[serde(default)]
    pub inertia: f64,
    /// Transient reactance x'd, p.u. on system base. Synchronous units only.
    #[serde(default)]
    pub xd_prime: f64,
    /// MW. Doubles as the machine MVA rating for inertia weighting.
    pub p_max: f64,
}

impl Generator {
    pub fn is_synchronous(&self) -> bool {
        self.kind == GeneratorKind::Synchronous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: u32,
    /// MW.
    pub p: f64,
    /// MVAr.
    pub q: f64,
}

/// HVDC sending end, drawn from the AC system as a constant-power load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hvdc {
    pub bus: u32,
    /// MW exported through the link.
    pub p_delivered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    #[serde(default = "fifty")]
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub hvdc: Option<Hvdc>,
}

fn unit() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn fifty() -> f64 {
    50.0
}
fn schema_v1() -> u32 {
    NETWORK_SCHEMA_VERSION
}

impl NetworkModel {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let net: NetworkModel = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let net: NetworkModel =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        net.validate()?;
        Ok(net)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Map from bus id to position in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn bus_ids(&self) -> Vec<u32> {
        self.buses.iter().map(|b| b.id).collect()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .expect("validated model has a slack bus")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.schema_version != NETWORK_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return bad(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return bad(format!("frequency_hz must be positive, got {}", self.frequency_hz));
        }
        if self.buses.is_empty() {
            return bad("no buses".into());
        }
        let mut ids = HashSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return bad(format!("duplicate bus id {}", b.id));
            }
            if ![b.shunt_g, b.shunt_b, b.v_set, b.base_kv].iter().all(|v| v.is_finite()) {
                return bad(format!("bus {} has non-finite fields", b.id));
            }
            if b.v_set <= 0.0 {
                return bad(format!("bus {} voltage setpoint must be positive", b.id));
            }
        }
        let slack = self
            .buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .count();
        if slack != 1 {
            return bad(format!("expected exactly one slack bus, found {slack}"));
        }
        for (k, br) in self.branches.iter().enumerate() {
            if !ids.contains(&br.from) || !ids.contains(&br.to) {
                return bad(format!("branch {k} ({}-{}) references unknown bus", br.from, br.to));
            }
            if br.from == br.to {
                return bad(format!("branch {k} is a self loop at bus {}", br.from));
            }
            if ![br.r, br.x, br.b].iter().all(|v| v.is_finite()) {
                return bad(format!("branch {k} has non-finite parameters"));
            }
            if br.r.hypot(br.x) <= 0.0 {
                return bad(format!("branch {k} ({}-{}) has zero impedance", br.from, br.to));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if !ids.contains(&g.bus) {
                return bad(format!("generator {k} references unknown bus {}", g.bus));
            }
            if ![g.p_set, g.q_set, g.inertia, g.xd_prime, g.p_max]
                .iter()
                .all(|v| v.is_finite())
            {
                return bad(format!("generator {k} has non-finite fields"));
            }
            if g.inertia < 0.0 {
                return bad(format!("generator {k} has negative inertia"));
            }
            match g.kind {
                GeneratorKind::Synchronous => {
                    if g.inertia <= 0.0 {
                        return bad(format!("synchronous generator {k} needs inertia > 0"));
                    }
                    if g.xd_prime <= 0.0 {
                        return bad(format!("synchronous generator {k} needs xd_prime > 0"));
                    }
                }
                GeneratorKind::Renewable => {
                    if g.inertia != 0.0 {
                        return bad(format!("renewable generator {k} must have zero inertia"));
                    }
                }
            }
        }
        for (k, l) in self.loads.iter().enumerate() {
            if !ids.contains(&l.bus) {
                return bad(format!("load {k} references unknown bus {}", l.bus));
            }
            if !(l.p.is_finite() && l.q.is_finite()) {
                return bad(format!("load {k} has non-finite fields"));
            }
        }
        if let Some(h) = &self.hvdc {
            if !ids.contains(&h.bus) {
                return bad(format!("hvdc references unknown bus {}", h.bus));
            }
            if !h.p_delivered.is_finite() {
                return bad("hvdc p_delivered is not finite".into());
            }
        }
        if !self.is_connected() {
            return bad("network is not connected through in-service branches".into());
        }
        Ok(())
    }

    /// True when every bus is reachable from the first through in-service branches.
    pub fn is_connected(&self) -> bool {
        self.is_connected_without(None)
    }

    pub(crate) fn is_connected_without(&self, skip: Option<usize>) -> bool {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for (k, br) in self.branches.iter().enumerate() {
            if !br.in_service || Some(k) == skip {
                continue;
            }
            let (Some(&a), Some(&b)) = (index.get(&br.from), index.get(&br.to)) else {
                continue;
            };
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Indices of in-service branches whose outage keeps the network connected.
    pub fn non_bridge_branches(&self) -> Vec<usize> {
        (0..self.branches.len())
            .filter(|&k| self.branches[k].in_service && self.is_connected_without(Some(k)))
            .collect()
    }

    pub fn find_branch(&self, from: u32, to: u32) -> Option<usize> {
        self.branches.iter().position(|b| {
            b.in_service && ((b.from == from && b.to == to) || (b.from == to && b.to == from))
        })
    }

    /// Per-bus load in MW/MVAr, HVDC export included in the active column.
    pub fn bus_load(&self) -> (Vec<f64>, Vec<f64>) {
        let index = self.bus_index();
        let n = self.buses.len();
        let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
        for l in &self.loads {
            let i = index[&l.bus];
            p[i] += l.p;
            q[i] += l.q;
        }
        if let Some(h) = &self.hvdc {
            p[index[&h.bus]] += h.p_delivered;
        }
        (p, q)
    }

    pub fn total_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum::<f64>()
            + self.hvdc.as_ref().map_or(0.0, |h| h.p_delivered)
    }
}

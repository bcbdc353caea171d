//! Classical electromechanical transient model (constant E' behind x'd,
//! Kron-reduced network, RK4) and the stability indices derived from it.

mod indices;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance_matrix, NetworkModel, PowerFlowSolution, C64};

pub use indices::{
    evaluate_scenario, indices_csv, parse_indices_csv, rocof, tsi, tsi_from_separation,
    voltage_severity, IndexRecord, SeverityAggregate, StabilityIndices, INDEX_NAMES,
    SENTINEL_ROCOF, SENTINEL_TSI, SENTINEL_V_SEVERITY,
};

/// Speed deviation (p.u.) beyond which integration stops.
pub const BLOWUP_SPEED: f64 = 100.0;
/// Shunt conductance (p.u.) representing a bolted three-phase fault.
pub const FAULT_CONDUCTANCE: f64 = 1e6;

/// Three-phase fault at the `from` end of a branch, cleared by removing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub from: u32,
    pub to: u32,
    /// Fault application time, s.
    #[serde(default = "one")]
    pub t_fault: f64,
    /// Clearing delay, s.
    #[serde(default = "tenth")]
    pub clearing: f64,
}

fn one() -> f64 {
    1.0
}
fn tenth() -> f64 {
    0.1
}

impl FaultSpec {
    pub fn new(from: u32, to: u32) -> Self {
        Self {
            from,
            to,
            t_fault: 1.0,
            clearing: 0.1,
        }
    }

    /// Checks the branch and timing, and returns the branch index.
    pub fn validate(&self, net: &NetworkModel, horizon: f64) -> Result<usize> {
        let idx = net
            .find_branch(self.from, self.to)
            .ok_or_else(|| Error::InvalidFault(format!("no in-service branch {}–{}", self.from, self.to)))?;
        if !(self.clearing.is_finite() && self.clearing > 0.0) {
            return Err(Error::InvalidFault(format!("clearing time {} must be positive", self.clearing)));
        }
        if !(self.t_fault >= 0.0 && self.t_fault + self.clearing < horizon) {
            return Err(Error::InvalidFault("fault must clear inside the horizon".into()));
        }
        if !net.is_connected_without(Some(idx)) {
            return Err(Error::InvalidFault(format!(
                "removing branch {}–{} islands the network",
                self.from, self.to
            )));
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientConfig {
    /// Integration step h, s.
    pub step: f64,
    /// Horizon T, s.
    pub horizon: f64,
    /// Damping on speed deviation, p.u. power per p.u. speed.
    pub damping: f64,
    pub severity: SeverityAggregate,
    /// RoCoF sliding window, s.
    pub rocof_window: f64,
}

impl Default for TransientConfig {
    fn default() -> Self {
        Self {
            step: 0.005,
            horizon: 10.0,
            damping: 0.0,
            severity: SeverityAggregate::Max,
            rocof_window: 0.5,
        }
    }
}

impl TransientConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.horizon > self.step
            && self.damping >= 0.0
            && self.rocof_window >= self.step
            && ((self.horizon / self.step).round() * self.step - self.horizon).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::Config {
                field: "transient".into(),
                message: "step, horizon and window must be positive with the horizon a multiple of the step".into(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientTrace {
    pub step: f64,
    pub times: Vec<f64>,
    /// Rotor angle per synchronous machine, rad, `[time][machine]`.
    pub delta: Vec<Vec<f64>>,
    /// Speed deviation per machine, p.u.
    pub speed: Vec<Vec<f64>>,
    /// Bus voltage magnitude, p.u., `[time][bus]`.
    pub voltage: Vec<Vec<f64>>,
    /// Centre-of-inertia frequency, Hz.
    pub frequency: Vec<f64>,
    /// Fault application time (the horizon when no fault was applied).
    pub t_fault: f64,
    /// Bus indices that carry load.
    pub load_buses: Vec<usize>,
    /// Stopped early because a speed deviation exceeded [`BLOWUP_SPEED`].
    pub truncated: bool,
}

impl TransientTrace {
    pub fn n_machines(&self) -> usize {
        self.delta.first().map_or(0, |d| d.len())
    }

    pub fn to_csv(&self) -> String {
        let m = self.n_machines();
        let nb = self.voltage.first().map_or(0, |v| v.len());
        let mut out = String::from("t,f_coi");
        for k in 0..m {
            out.push_str(&format!(",delta{k},dw{k}"));
        }
        for b in 0..nb {
            out.push_str(&format!(",v{b}"));
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t},{}", self.frequency[i]));
            for k in 0..m {
                out.push_str(&format!(",{},{}", self.delta[i][k], self.speed[i][k]));
            }
            for v in &self.voltage[i] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Network seen from the machine internal nodes for one topology.
#[derive(Debug, Clone)]
pub(crate) struct ReducedNetwork {
    /// `I_machine = y_red · E + i_extra`.
    pub y_red: DMatrix<C64>,
    pub i_extra: DVector<C64>,
    /// `V_bus = v_from_e · E + v_extra`.
    pub v_from_e: DMatrix<C64>,
    pub v_extra: DVector<C64>,
}

/// Machine and injection data shared by all topologies.
#[derive(Debug, Clone)]
pub(crate) struct MachineSet {
    pub bus: Vec<usize>,
    pub e_mag: Vec<f64>,
    pub delta0: Vec<f64>,
    /// Inertia `M = 2H·S/S_base`, s.
    pub m: Vec<f64>,
    pub y_internal: Vec<C64>,
    /// Load admittance per bus (HVDC included).
    pub y_load: Vec<C64>,
    /// Constant renewable current injection per bus.
    pub i_renewable: Vec<C64>,
}

pub(crate) fn machine_set(net: &NetworkModel, pf: &PowerFlowSolution) -> Result<MachineSet> {
    let index = net.bus_index();
    let base = net.base_mva;
    let v = pf.voltages();
    let n = net.n_buses();
    let mut ms = MachineSet {
        bus: vec![],
        e_mag: vec![],
        delta0: vec![],
        m: vec![],
        y_internal: vec![],
        y_load: vec![C64::new(0.0, 0.0); n],
        i_renewable: vec![C64::new(0.0, 0.0); n],
    };
    for (k, g) in net.generators.iter().enumerate() {
        let i = index[&g.bus];
        let s = C64::new(pf.gen_p[k], pf.gen_q[k]) / base;
        let current = (s / v[i]).conj();
        if g.is_synchronous() {
            if !(g.xd_prime > 0.0 && g.inertia > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "synchronous unit at bus {} needs positive inertia and x'd",
                    g.bus
                )));
            }
            let e = v[i] + C64::new(0.0, g.xd_prime) * current;
            ms.bus.push(i);
            ms.e_mag.push(e.norm());
            ms.delta0.push(e.arg());
            ms.m.push(2.0 * g.inertia * g.p_max / base);
            ms.y_internal.push(C64::new(1.0, 0.0) / C64::new(0.0, g.xd_prime));
        } else {
            ms.i_renewable[i] += current;
        }
    }
    let (pl, ql) = net.bus_load();
    for i in 0..n {
        let vm2 = v[i].norm_sqr();
        ms.y_load[i] = C64::new(pl[i], -ql[i]) / (base * vm2);
    }
    Ok(ms)
}

/// Kron reduction onto machine internal nodes. `fault_bus` adds a fault shunt,
/// `skip_branch` takes a branch out of service.
pub(crate) fn reduce(
    net: &NetworkModel,
    ms: &MachineSet,
    fault_bus: Option<usize>,
    skip_branch: Option<usize>,
) -> Result<ReducedNetwork> {
    let mut topo = net.clone();
    if let Some(b) = skip_branch {
        topo.branches[b].in_service = false;
    }
    let mut ybb = build_admittance_matrix(&topo);
    let (n, m) = (net.n_buses(), ms.bus.len());
    for i in 0..n {
        ybb[(i, i)] += ms.y_load[i];
    }
    if let Some(f) = fault_bus {
        ybb[(f, f)] += C64::new(FAULT_CONDUCTANCE, 0.0);
    }
    let mut ybm = DMatrix::<C64>::zeros(n, m);
    for k in 0..m {
        ybb[(ms.bus[k], ms.bus[k])] += ms.y_internal[k];
        ybm[(ms.bus[k], k)] = -ms.y_internal[k];
    }
    let lu = ybb.lu();
    let solve = |rhs: &DMatrix<C64>| lu.solve(rhs).ok_or(Error::SingularNetwork {
        condition: f64::INFINITY,
        limit: crate::grid::CONDITION_LIMIT,
    });
    // V = −Y_bb⁻¹ Y_bm E + Y_bb⁻¹ I_ren
    let v_from_e = -solve(&ybm)?;
    let i_ren = DMatrix::from_column_slice(n, 1, &ms.i_renewable);
    let v_extra = solve(&i_ren)?.column(0).into_owned();
    // I_m = Y_mm E + Y_mb V with Y_mb = Y_bmᵀ.
    let ymm = DMatrix::from_diagonal(&DVector::from_column_slice(&ms.y_internal));
    let ymb = ybm.transpose();
    let y_red = ymm + &ymb * &v_from_e;
    let i_extra = &ymb * &v_extra;
    Ok(ReducedNetwork {
        y_red,
        i_extra,
        v_from_e,
        v_extra,
    })
}

fn internal_emf(ms: &MachineSet, delta: &[f64]) -> DVector<C64> {
    DVector::from_iterator(
        delta.len(),
        delta.iter().zip(&ms.e_mag).map(|(d, e)| C64::from_polar(*e, *d)),
    )
}

pub(crate) fn electrical_power(red: &ReducedNetwork, ms: &MachineSet, delta: &[f64]) -> Vec<f64> {
    let e = internal_emf(ms, delta);
    let i = &red.y_red * &e + &red.i_extra;
    e.iter().zip(i.iter()).map(|(e, i)| (e * i.conj()).re).collect()
}

/// Integrates the swing equations through pre-fault, faulted and post-clear
/// topologies. Without a fault the pre-fault network is kept throughout.
pub fn simulate_transient(
    net: &NetworkModel,
    pf: &PowerFlowSolution,
    fault: Option<&FaultSpec>,
    cfg: &TransientConfig,
) -> Result<TransientTrace> {
    cfg.validate()?;
    if !pf.converged {
        return Err(Error::DegenerateInput("transient run needs a converged power flow".into()));
    }
    if pf.gen_p.len() != net.generators.len() || pf.vm.len() != net.n_buses() {
        return Err(Error::LengthMismatch("power flow does not belong to this network".into()));
    }
    let ms = machine_set(net, pf)?;
    let pre = reduce(net, &ms, None, None)?;
    let steps = cfg.steps();
    let (phases, fault_step, clear_step) = match fault {
        Some(f) => {
            let br = f.validate(net, cfg.horizon)?;
            let fb = net.bus_index()[&f.from];
            let faulted = reduce(net, &ms, Some(fb), None)?;
            let post = reduce(net, &ms, None, Some(br))?;
            let fs = (f.t_fault / cfg.step).round() as usize;
            let cs = ((f.t_fault + f.clearing) / cfg.step).round() as usize;
            (vec![pre, faulted, post], fs, cs.max(fs + 1))
        }
        None => (vec![pre], steps + 1, steps + 1),
    };
    let phase_at = |i: usize| {
        if i < fault_step {
            0
        } else if i < clear_step {
            1
        } else {
            2
        }
    };

    let m = ms.bus.len();
    let pm = electrical_power(&phases[0], &ms, &ms.delta0);
    let omega_s = 2.0 * std::f64::consts::PI * net.frequency_hz;
    let m_total: f64 = ms.m.iter().sum();
    let deriv = |red: &ReducedNetwork, d: &[f64], w: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let pe = electrical_power(red, &ms, d);
        let dd: Vec<f64> = w.iter().map(|w| omega_s * w).collect();
        let dw: Vec<f64> = (0..m)
            .map(|k| (pm[k] - pe[k] - cfg.damping * w[k]) / ms.m[k])
            .collect();
        (dd, dw)
    };
    let record = |red: &ReducedNetwork, d: &[f64], w: &[f64], tr: &mut TransientTrace, t: f64| {
        let e = internal_emf(&ms, d);
        let v = &red.v_from_e * e + &red.v_extra;
        tr.times.push(t);
        tr.delta.push(d.to_vec());
        tr.speed.push(w.to_vec());
        tr.voltage.push(v.iter().map(|x| x.norm()).collect());
        let coi = if m_total > 0.0 {
            ms.m.iter().zip(w).map(|(mk, wk)| mk * wk).sum::<f64>() / m_total
        } else {
            0.0
        };
        tr.frequency.push(net.frequency_hz * (1.0 + coi));
    };

    let (pl, ql) = net.bus_load();
    let load_buses = (0..net.n_buses()).filter(|&i| pl[i] != 0.0 || ql[i] != 0.0).collect();
    let mut trace = TransientTrace {
        step: cfg.step,
        times: Vec::with_capacity(steps + 1),
        delta: Vec::with_capacity(steps + 1),
        speed: Vec::with_capacity(steps + 1),
        voltage: Vec::with_capacity(steps + 1),
        frequency: Vec::with_capacity(steps + 1),
        t_fault: fault.map_or(cfg.horizon, |f| f.t_fault),
        load_buses,
        truncated: false,
    };
    let mut d = ms.delta0.clone();
    let mut w = vec![0.0; m];
    let h = cfg.step;
    for i in 0..=steps {
        let red = &phases[phase_at(i)];
        record(red, &d, &w, &mut trace, i as f64 * h);
        if i == steps {
            break;
        }
        if w.iter().any(|x| x.abs() > BLOWUP_SPEED || !x.is_finite()) {
            trace.truncated = true;
            break;
        }
        let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + s * y).collect()
        };
        let (k1d, k1w) = deriv(red, &d, &w);
        let (k2d, k2w) = deriv(red, &add(&d, &k1d, h / 2.0), &add(&w, &k1w, h / 2.0));
        let (k3d, k3w) = deriv(red, &add(&d, &k2d, h / 2.0), &add(&w, &k2w, h / 2.0));
        let (k4d, k4w) = deriv(red, &add(&d, &k3d, h), &add(&w, &k3w, h));
        for k in 0..m {
            d[k] += h / 6.0 * (k1d[k] + 2.0 * k2d[k] + 2.0 * k3d[k] + k4d[k]);
            w[k] += h / 6.0 * (k1w[k] + 2.0 * k2w[k] + 2.0 * k3w[k] + k4w[k]);
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::impedance::{build_admittance_matrix, C64};
use super::model::{BusType, NetworkModel};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Convergence bound on the largest |ΔP|, |ΔQ| in p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Per-bus net specified injections (generation minus load) in p.u. that
/// replace the values derived from the model's generators and loads.
#[derive(Debug, Clone, PartialEq)]
pub struct BusInjections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl BusInjections {
    /// Net specified injections implied by the model: all generator setpoints
    /// (renewables contribute Q as well) minus loads and HVDC export.
    pub fn from_model(net: &NetworkModel) -> Self {
        let index = net.bus_index();
        let base = net.base_mva;
        let (pl, ql) = net.bus_load();
        let mut p: Vec<f64> = pl.iter().map(|v| -v / base).collect();
        let mut q: Vec<f64> = ql.iter().map(|v| -v / base).collect();
        for g in &net.generators {
            let i = index[&g.bus];
            p[i] += g.p_set / base;
            if !g.is_synchronous() {
                q[i] += g.q_set / base;
            }
        }
        Self { p, q }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus, p.u.
    pub vm: Vec<f64>,
    /// Voltage angle per bus, radians; slack is zero.
    pub va: Vec<f64>,
    /// Active output per generator, MW. Slack units pick up the balance.
    pub gen_p: Vec<f64>,
    /// Reactive output per generator, MVAr.
    pub gen_q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute mismatch at the last evaluated point, p.u.
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltages(&self) -> Vec<C64> {
        self.vm
            .iter()
            .zip(&self.va)
            .map(|(&m, &a)| C64::from_polar(m, a))
            .collect()
    }
}

/// Effective bus type: PV buses need an in-service synchronous unit, otherwise
/// they are solved as PQ.
pub(crate) fn effective_bus_types(net: &NetworkModel) -> Vec<BusType> {
    let index = net.bus_index();
    let mut has_sync = vec![false; net.n_buses()];
    for g in net.generators.iter().filter(|g| g.is_synchronous()) {
        has_sync[index[&g.bus]] = true;
    }
    net.buses
        .iter()
        .enumerate()
        .map(|(i, b)| match b.bus_type {
            BusType::Pv if !has_sync[i] => BusType::Pq,
            t => t,
        })
        .collect()
}

/// Complex power injection `V ∘ conj(Y V)`.
pub fn power_injections(y: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    let vv = DVector::from_column_slice(v);
    let i = y * &vv;
    v.iter().zip(i.iter()).map(|(a, b)| a * b.conj()).collect()
}

/// Solves the AC power flow with a polar Newton–Raphson iteration. Failure to
/// converge is reported through `converged`, not as an error.
pub fn solve_power_flow(
    net: &NetworkModel,
    injections: Option<&BusInjections>,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    net.validate()?;
    let n = net.n_buses();
    let owned;
    let inj = match injections {
        Some(i) => {
            if i.p.len() != n || i.q.len() != n {
                return Err(crate::Error::Dimension(format!(
                    "injection vectors must have {n} entries"
                )));
            }
            i
        }
        None => {
            owned = BusInjections::from_model(net);
            &owned
        }
    };
    let y = build_admittance_matrix(net);
    let types = effective_bus_types(net);

    let pvpq: Vec<usize> = (0..n).filter(|&i| types[i] != BusType::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| types[i] == BusType::Pq).collect();
    let (npvpq, npq) = (pvpq.len(), pq.len());

    let mut vm: Vec<f64> = net
        .buses
        .iter()
        .zip(&types)
        .map(|(b, t)| if *t == BusType::Pq { 1.0 } else { b.v_set })
        .collect();
    let mut va = vec![0.0; n];

    let mismatch = |vm: &[f64], va: &[f64]| -> (Vec<C64>, DVector<f64>) {
        let v: Vec<C64> = vm.iter().zip(va).map(|(&m, &a)| C64::from_polar(m, a)).collect();
        let s = power_injections(&y, &v);
        let mut f = DVector::zeros(npvpq + npq);
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = s[i].re - inj.p[i];
        }
        for (k, &i) in pq.iter().enumerate() {
            f[npvpq + k] = s[i].im - inj.q[i];
        }
        (v, f)
    };

    let (mut v, mut f) = mismatch(&vm, &va);
    let mut norm = f.amax();
    let mut iterations = 0;
    let mut converged = norm <= opts.tolerance;

    while !converged && iterations < opts.max_iterations && norm.is_finite() {
        let jac = jacobian(&y, &v, &pvpq, &pq);
        let Some(dx) = jac.lu().solve(&(-&f)) else {
            break;
        };
        if dx.iter().any(|d| !d.is_finite()) {
            break;
        }
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] += dx[npvpq + k];
        }
        iterations += 1;
        (v, f) = mismatch(&vm, &va);
        norm = f.amax();
        converged = norm <= opts.tolerance;
        if vm.iter().any(|m| *m <= 0.0 || !m.is_finite()) || norm > 1e10 {
            converged = false;
            break;
        }
    }

    let s = power_injections(&y, &v);
    let (gen_p, gen_q) = generator_outputs(net, &s, &types);
    Ok(PowerFlowSolution {
        vm,
        va,
        gen_p,
        gen_q,
        converged,
        iterations,
        max_mismatch: if norm.is_finite() { norm } else { f64::INFINITY },
    })
}

fn jacobian(y: &DMatrix<C64>, v: &[C64], pvpq: &[usize], pq: &[usize]) -> DMatrix<f64> {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let ibus = y * &vv;
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    let vnorm: Vec<C64> = v.iter().map(|x| x / x.norm()).collect();
    let j = C64::new(0.0, 1.0);
    let mut ds_dva = DMatrix::<C64>::zeros(n, n);
    let mut ds_dvm = DMatrix::<C64>::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let yrc = y[(r, c)];
            let mut a = -(yrc * v[c]);
            if r == c {
                a += ibus[r];
            }
            ds_dva[(r, c)] = j * v[r] * a.conj();
            let mut m = v[r] * (yrc * vnorm[c]).conj();
            if r == c {
                m += ibus[r].conj() * vnorm[r];
            }
            ds_dvm[(r, c)] = m;
        }
    }
    let (a, b) = (pvpq.len(), pq.len());
    let mut jac = DMatrix::<f64>::zeros(a + b, a + b);
    for (ri, &r) in pvpq.iter().enumerate() {
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[(ri, ci)] = ds_dva[(r, c)].re;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(ri, a + ci)] = ds_dvm[(r, c)].re;
        }
    }
    for (ri, &r) in pq.iter().enumerate() {
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[(a + ri, ci)] = ds_dva[(r, c)].im;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(a + ri, a + ci)] = ds_dvm[(r, c)].im;
        }
    }
    jac
}

/// Splits solved bus injections back onto generators. Renewables keep their
/// setpoints; synchronous units at a bus share the remainder by rating.
fn generator_outputs(net: &NetworkModel, s: &[C64], types: &[BusType]) -> (Vec<f64>, Vec<f64>) {
    let index = net.bus_index();
    let base = net.base_mva;
    let n = net.n_buses();
    let (pl, ql) = net.bus_load();
    let mut fixed_p = vec![0.0; n];
    let mut fixed_q = vec![0.0; n];
    let mut rating = vec![0.0; n];
    let mut sync_count = vec![0usize; n];
    for g in &net.generators {
        let i = index[&g.bus];
        if g.is_synchronous() {
            rating[i] += g.p_max.max(0.0);
            sync_count[i] += 1;
        } else {
            fixed_p[i] += g.p_set;
            fixed_q[i] += g.q_set;
        }
    }
    let mut gen_p = Vec::with_capacity(net.generators.len());
    let mut gen_q = Vec::with_capacity(net.generators.len());
    for g in &net.generators {
        let i = index[&g.bus];
        if !g.is_synchronous() {
            gen_p.push(g.p_set);
            gen_q.push(g.q_set);
            continue;
        }
        let share = if rating[i] > 0.0 {
            g.p_max.max(0.0) / rating[i]
        } else {
            1.0 / sync_count[i] as f64
        };
        let bus_q = s[i].im * base + ql[i] - fixed_q[i];
        let p = if types[i] == BusType::Slack {
            (s[i].re * base + pl[i] - fixed_p[i]) * share
        } else {
            g.p_set
        };
        gen_p.push(p);
        gen_q.push(bus_q * share);
    }
    (gen_p, gen_q)
}

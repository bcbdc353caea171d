//! Network data model, bus impedance matrix, electrical distance and AC power flow.

mod impedance;
mod model;
mod powerflow;

pub use impedance::{
    build_admittance_matrix, build_impedance_matrix, electrical_distance, DistanceMatrix,
    ImpedanceMatrix, C64, CONDITION_LIMIT, GROUNDING_ADMITTANCE,
};
pub use model::{
    Branch, Bus, BusType, Generator, GeneratorKind, Hvdc, Load, NetworkModel,
    NETWORK_SCHEMA_VERSION,
};
pub use powerflow::{
    power_injections, solve_power_flow, BusInjections, PowerFlowOptions, PowerFlowSolution,
};
#[cfg(test)]
pub(crate) use powerflow::effective_bus_types;

/// Apparent power flow magnitude (p.u.) at the sending end of every branch;
/// out-of-service branches report zero.
pub fn branch_flows(net: &NetworkModel, pf: &PowerFlowSolution) -> Vec<f64> {
    let index = net.bus_index();
    let v = pf.voltages();
    net.branches
        .iter()
        .map(|br| {
            if !br.in_service {
                return 0.0;
            }
            let (a, b) = (index[&br.from], index[&br.to]);
            let ys = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
            let ia = (v[a] - v[b]) * ys + v[a] * C64::new(0.0, br.b / 2.0);
            let ib = (v[b] - v[a]) * ys + v[b] * C64::new(0.0, br.b / 2.0);
            (v[a] * ia.conj()).norm().max((v[b] * ib.conj()).norm())
        })
        .collect()
}

/// The most heavily loaded branch whose outage leaves the network connected.
pub fn heaviest_loaded_branch(net: &NetworkModel, pf: &PowerFlowSolution) -> Option<usize> {
    let flows = branch_flows(net, pf);
    net.non_bridge_branches()
        .into_iter()
        .max_by(|&a, &b| flows[a].total_cmp(&flows[b]).then(b.cmp(&a)))
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{norm_matching, rasterize, ssim, Quantity, RasterField, RasterGeometry, SsimParams};
use crate::error::{Error, Result};
use crate::grid::{NetworkModel, PowerFlowSolution};

/// Column names of a characteristic vector, in fixed order.
pub const CHARACTERISTIC_NAMES: [&str; 8] = [
    "pg_pl_norm",
    "pg_pl_ssim",
    "qg_ql_norm",
    "qg_ql_ssim",
    "pre_qg_ssim",
    "j_pl_ssim",
    "psync_pre_norm",
    "psync_pre_ssim",
];

/// The eight system-level characteristics of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicVector {
    pub values: [f64; 8],
    /// Set when dispatch setpoints stood in for a non-converged power flow.
    pub dispatch_fallback: bool,
}

/// Per-bus physical quantities feeding the rasters, aligned to bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalQuantities {
    pub p_gen: Vec<f64>,
    pub p_load: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub q_load: Vec<f64>,
    pub p_renewable: Vec<f64>,
    pub p_sync: Vec<f64>,
    pub inertia: Vec<f64>,
}

impl NodalQuantities {
    pub fn get(&self, q: Quantity) -> &[f64] {
        match q {
            Quantity::ActiveGeneration => &self.p_gen,
            Quantity::ActiveLoad => &self.p_load,
            Quantity::ReactiveGeneration => &self.q_gen,
            Quantity::ReactiveLoad => &self.q_load,
            Quantity::Renewable => &self.p_renewable,
            Quantity::Synchronous => &self.p_sync,
            Quantity::Inertia => &self.inertia,
        }
    }
}

/// Extracts nodal quantities. Generator outputs come from the power flow when
/// it converged, otherwise from dispatch setpoints (`fallback = true`).
/// Shunt compensation is not part of the reactive load.
pub fn nodal_quantities(net: &NetworkModel, pf: Option<&PowerFlowSolution>) -> NodalQuantities {
    let index = net.bus_index();
    let n = net.n_buses();
    let (p_load, q_load) = net.bus_load();
    let mut q = NodalQuantities {
        p_gen: vec![0.0; n],
        p_load,
        q_gen: vec![0.0; n],
        q_load,
        p_renewable: vec![0.0; n],
        p_sync: vec![0.0; n],
        inertia: vec![0.0; n],
    };
    let solved = pf.filter(|p| p.converged && p.gen_p.len() == net.generators.len());
    for (k, g) in net.generators.iter().enumerate() {
        let i = index[&g.bus];
        let (p, qg) = match solved {
            Some(s) => (s.gen_p[k], s.gen_q[k]),
            None => (g.p_set, g.q_set),
        };
        q.p_gen[i] += p;
        q.q_gen[i] += qg;
        if g.is_synchronous() {
            q.p_sync[i] += p;
            q.inertia[i] += g.inertia * g.p_max / net.base_mva;
        } else {
            q.p_renewable[i] += p;
        }
    }
    q
}

/// Rasterizes the seven nodal fields and assembles the characteristic vector.
///
/// `coords` holds one row per bus in the network's bus order; only the first
/// two columns are used. A non-converged power flow is an error unless
/// `allow_fallback` is set.
pub fn compute_characteristics(
    net: &NetworkModel,
    pf: &PowerFlowSolution,
    geom: &RasterGeometry,
    coords: &DMatrix<f64>,
    ssim_params: &SsimParams,
    allow_fallback: bool,
) -> Result<CharacteristicVector> {
    if coords.nrows() != net.n_buses() {
        return Err(Error::Dimension(format!(
            "{} embedded points for {} buses",
            coords.nrows(),
            net.n_buses()
        )));
    }
    if !pf.converged && !allow_fallback {
        return Err(Error::DegenerateInput(
            "power flow did not converge and dispatch fallback is disabled".into(),
        ));
    }
    let quantities = nodal_quantities(net, Some(pf));
    let field = |q: Quantity| -> Result<RasterField> { rasterize(geom, coords, quantities.get(q), q) };
    let pg = field(Quantity::ActiveGeneration)?;
    let pl = field(Quantity::ActiveLoad)?;
    let qg = field(Quantity::ReactiveGeneration)?;
    let ql = field(Quantity::ReactiveLoad)?;
    let pre = field(Quantity::Renewable)?;
    let psync = field(Quantity::Synchronous)?;
    let j = field(Quantity::Inertia)?;
    let sp = ssim_params;
    let values = [
        norm_matching(&pg, &pl)?,
        ssim(&pg, &pl, sp)?,
        norm_matching(&qg, &ql)?,
        ssim(&qg, &ql, sp)?,
        ssim(&pre, &qg, sp)?,
        ssim(&j, &pl, sp)?,
        norm_matching(&psync, &pre)?,
        ssim(&psync, &pre, sp)?,
    ];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("characteristic value".into()));
    }
    Ok(CharacteristicVector {
        values,
        dispatch_fallback: !pf.converged,
    })
}

/// `scenario_id,<eight characteristics>,dispatch_fallback`, one row per scenario.
pub fn characteristics_csv(rows: &[(usize, CharacteristicVector)]) -> String {
    let mut out = format!("scenario_id,{},dispatch_fallback\n", CHARACTERISTIC_NAMES.join(","));
    for (id, c) in rows {
        out.push_str(&id.to_string());
        for v in &c.values {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", c.dispatch_fallback as u8));
    }
    out
}

/// Reads the file written by [`characteristics_csv`].
pub fn parse_characteristics_csv(text: &str, origin: &str) -> Result<Vec<(usize, CharacteristicVector)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse(origin, "empty characteristics file"))?;
    let expected = format!("scenario_id,{},dispatch_fallback", CHARACTERISTIC_NAMES.join(","));
    if header.trim() != expected {
        return Err(Error::parse(origin, format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = |what: &str| Error::parse(origin, format!("line {}: {what}", n + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 10 {
                return Err(bad("expected 10 fields"));
            }
            let id = f[0].parse().map_err(|_| bad("bad scenario_id"))?;
            let mut values = [0.0; 8];
            for (v, s) in values.iter_mut().zip(&f[1..9]) {
                *v = s
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad("bad characteristic value"))?;
            }
            let dispatch_fallback = match f[9] {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad("dispatch_fallback must be 0/1")),
            };
            Ok((
                id,
                CharacteristicVector {
                    values,
                    dispatch_fallback,
                },
            ))
        })
        .collect()
}

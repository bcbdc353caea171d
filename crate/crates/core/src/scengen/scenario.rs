use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{largest_design_within, level_quantile, orthogonal_array};
use super::gmm::GmmModel;
use crate::error::{Error, Result};
use crate::grid::{solve_power_flow, NetworkModel, PowerFlowOptions, PowerFlowSolution};

pub const SPEC_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterRole {
    /// Renewable share of total demand (loads plus HVDC export), fraction.
    RenewablePenetration,
    ActiveLoadScale,
    ReactiveLoadScale,
    /// MW exported through the HVDC link.
    HvdcPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainParameter {
    pub name: String,
    pub role: ParameterRole,
    pub lower: f64,
    pub upper: f64,
    /// Value that reproduces the base case; defaults to the bound midpoint.
    #[serde(default)]
    pub nominal: Option<f64>,
    /// Restricts the parameter to devices at these buses; all when absent.
    #[serde(default)]
    pub buses: Option<Vec<u32>>,
}

impl UncertainParameter {
    pub fn nominal_value(&self) -> f64 {
        self.nominal.unwrap_or(0.5 * (self.lower + self.upper))
    }

    fn covers(&self, bus: u32) -> bool {
        self.buses.as_ref().is_none_or(|b| b.contains(&bus))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    #[serde(default = "spec_schema")]
    pub schema_version: u32,
    pub parameters: Vec<UncertainParameter>,
    /// Joint parameter distribution; defaults to one Gaussian centred on the
    /// nominal values with standard deviation (upper − lower)/6 per axis.
    #[serde(default)]
    pub gmm: Option<GmmModel>,
}

fn spec_schema() -> u32 {
    SPEC_SCHEMA_VERSION
}

impl UncertaintySpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    pub fn nominal(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.nominal_value()).collect()
    }

    /// Checks bounds and that every parameter maps onto the network.
    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.schema_version != SPEC_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.parameters.is_empty() {
            return bad("no parameters".into());
        }
        let mut names = HashSet::new();
        let mut roles = HashSet::new();
        let buses: HashSet<u32> = net.bus_ids().into_iter().collect();
        for p in &self.parameters {
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate parameter name `{}`", p.name));
            }
            if !roles.insert(p.role) {
                return bad(format!("role {:?} appears more than once", p.role));
            }
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return bad(format!("`{}` needs finite bounds with lower < upper", p.name));
            }
            let nom = p.nominal_value();
            if !(nom.is_finite() && nom >= p.lower && nom <= p.upper) {
                return bad(format!("`{}` nominal {nom} lies outside its bounds", p.name));
            }
            if let Some(list) = &p.buses {
                if let Some(b) = list.iter().find(|b| !buses.contains(b)) {
                    return bad(format!("`{}` refers to unknown bus {b}", p.name));
                }
            }
            let mapped = match p.role {
                ParameterRole::RenewablePenetration => {
                    p.lower >= 0.0
                        && net.generators.iter().any(|g| !g.is_synchronous() && p.covers(g.bus))
                }
                ParameterRole::ActiveLoadScale | ParameterRole::ReactiveLoadScale => {
                    p.lower >= 0.0 && net.loads.iter().any(|l| p.covers(l.bus))
                }
                ParameterRole::HvdcPower => net.hvdc.is_some() && p.buses.is_none(),
            };
            if !mapped {
                return bad(format!(
                    "`{}` ({:?}) maps onto no device of the network or has negative bounds",
                    p.name, p.role
                ));
            }
        }
        if let Some(g) = &self.gmm {
            g.validate()?;
            if g.dim() != self.dim() {
                return bad(format!("gmm has dimension {} but {} parameters", g.dim(), self.dim()));
            }
        }
        Ok(())
    }

    pub fn distribution(&self) -> Result<GmmModel> {
        if let Some(g) = &self.gmm {
            return Ok(g.clone());
        }
        let d = self.dim();
        let cov = DMatrix::from_fn(d, d, |r, c| {
            if r == c {
                let p = &self.parameters[r];
                ((p.upper - p.lower) / 6.0).powi(2)
            } else {
                0.0
            }
        });
        GmmModel::single(self.nominal(), cov)
    }

    /// Clips a parameter vector to the bounds; `true` when anything moved.
    pub fn clip(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, p) in x.iter_mut().zip(&self.parameters) {
            let c = v.clamp(p.lower, p.upper);
            moved |= c != *v;
            *v = c;
        }
        moved
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gmm,
    Orthogonal,
    /// Supplied directly by the caller.
    Given,
}

/// Device setpoints that distinguish a scenario from the base network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOverrides {
    /// MW per generator, in model order.
    pub gen_p_set: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub hvdc_p: Option<f64>,
}

impl ScenarioOverrides {
    pub fn apply(&self, net: &NetworkModel) -> Result<NetworkModel> {
        if self.gen_p_set.len() != net.generators.len()
            || self.load_p.len() != net.loads.len()
            || self.load_q.len() != net.loads.len()
        {
            return Err(Error::LengthMismatch("overrides do not match the network".into()));
        }
        let mut out = net.clone();
        for (g, p) in out.generators.iter_mut().zip(&self.gen_p_set) {
            g.p_set = *p;
        }
        for ((l, p), q) in out.loads.iter_mut().zip(&self.load_p).zip(&self.load_q) {
            l.p = *p;
            l.q = *q;
        }
        if let (Some(h), Some(p)) = (out.hvdc.as_mut(), self.hvdc_p) {
            h.p_delivered = p;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSample {
    pub id: usize,
    pub params: Vec<f64>,
    pub provenance: Provenance,
    /// Parameters were clipped to bounds, or renewables capped at rating.
    pub clipped: bool,
    pub overrides: ScenarioOverrides,
    pub power_flow: PowerFlowSolution,
}

impl ScenarioSample {
    pub fn network(&self, base: &NetworkModel) -> Result<NetworkModel> {
        self.overrides.apply(base)
    }
}

fn renewable_total(net: &NetworkModel) -> f64 {
    net.generators
        .iter()
        .filter(|g| !g.is_synchronous())
        .map(|g| g.p_set)
        .sum()
}

/// Maps one parameter vector onto device setpoints. Returns the overrides
/// and whether any renewable hit its rating.
pub fn derive_overrides(
    spec: &UncertaintySpec,
    x: &[f64],
    net: &NetworkModel,
) -> Result<(ScenarioOverrides, bool)> {
    if x.len() != spec.dim() {
        return Err(Error::InvalidSpec(format!(
            "parameter vector has {} entries for {} parameters",
            x.len(),
            spec.dim()
        )));
    }
    let mut out = net.clone();
    let mut capped = false;
    let base_demand = net.total_load_mw();
    let base_renewable = renewable_total(net);
    // Demand-side parameters first: penetration is a share of the new demand.
    for (p, &v) in spec.parameters.iter().zip(x) {
        match p.role {
            ParameterRole::ActiveLoadScale => {
                for (l, l0) in out.loads.iter_mut().zip(&net.loads) {
                    if p.covers(l.bus) {
                        l.p = l0.p * v;
                    }
                }
            }
            ParameterRole::ReactiveLoadScale => {
                for (l, l0) in out.loads.iter_mut().zip(&net.loads) {
                    if p.covers(l.bus) {
                        l.q = l0.q * v;
                    }
                }
            }
            ParameterRole::HvdcPower => {
                if let Some(h) = out.hvdc.as_mut() {
                    h.p_delivered = v;
                }
            }
            ParameterRole::RenewablePenetration => {}
        }
    }
    let demand = out.total_load_mw();
    if let Some((p, &v)) = spec
        .parameters
        .iter()
        .zip(x)
        .find(|(p, _)| p.role == ParameterRole::RenewablePenetration)
    {
        let (chosen, fixed): (Vec<usize>, Vec<usize>) = (0..net.generators.len())
            .filter(|&k| !net.generators[k].is_synchronous())
            .partition(|&k| p.covers(net.generators[k].bus));
        let fixed_mw: f64 = fixed.iter().map(|&k| net.generators[k].p_set).sum();
        let target = (v * demand - fixed_mw).max(0.0);
        let base: f64 = chosen.iter().map(|&k| net.generators[k].p_set).sum();
        // Distribute in proportion to the base dispatch, or to ratings when
        // the base dispatch is zero.
        let shares: Vec<f64> = if base > 0.0 {
            chosen.iter().map(|&k| net.generators[k].p_set / base).collect()
        } else {
            let rated: f64 = chosen.iter().map(|&k| net.generators[k].p_max).sum();
            chosen.iter().map(|&k| net.generators[k].p_max / rated).collect()
        };
        for (&k, s) in chosen.iter().zip(&shares) {
            let want = target * s;
            let pmax = net.generators[k].p_max;
            capped |= want > pmax;
            out.generators[k].p_set = want.min(pmax);
        }
    }
    // Synchronous units absorb the change in net demand pro rata to rating.
    let delta = (demand - base_demand) - (renewable_total(&out) - base_renewable);
    if delta != 0.0 {
        let sync: Vec<usize> = (0..net.generators.len())
            .filter(|&k| net.generators[k].is_synchronous())
            .collect();
        let rated: f64 = sync.iter().map(|&k| net.generators[k].p_max).sum();
        for &k in &sync {
            let g = &net.generators[k];
            out.generators[k].p_set = (g.p_set + delta * g.p_max / rated).clamp(0.0, g.p_max);
        }
    }
    Ok((
        ScenarioOverrides {
            gen_p_set: out.generators.iter().map(|g| g.p_set).collect(),
            load_p: out.loads.iter().map(|l| l.p).collect(),
            load_q: out.loads.iter().map(|l| l.q).collect(),
            hvdc_p: out.hvdc.as_ref().map(|h| h.p_delivered),
        },
        capped,
    ))
}

/// Parameter rows with their origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBatch {
    pub values: DMatrix<f64>,
    pub provenance: Vec<Provenance>,
    pub clipped: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub total: usize,
    /// Share of the batch reserved for the orthogonal design. The design
    /// uses the largest prime level count whose array fits in that share.
    pub orthogonal_fraction: f64,
    /// Explicit level count, overriding the fraction.
    pub orthogonal_levels: Option<usize>,
    pub seed: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            total: 471,
            orthogonal_fraction: 0.5,
            orthogonal_levels: None,
            seed: 0,
        }
    }
}

/// Orthogonal-array rows (levels mapped to interior quantiles of the bounds)
/// followed by clipped mixture samples.
pub fn generate_parameters(spec: &UncertaintySpec, cfg: &BatchConfig) -> Result<ParameterBatch> {
    let d = spec.dim();
    if !(0.0..=1.0).contains(&cfg.orthogonal_fraction) {
        return Err(Error::Config {
            field: "orthogonal_fraction".into(),
            message: format!("{} is not in [0, 1]", cfg.orthogonal_fraction),
        });
    }
    let budget = (cfg.total as f64 * cfg.orthogonal_fraction).floor() as usize;
    let levels = match cfg.orthogonal_levels {
        Some(s) => Some(s),
        None => largest_design_within(budget, d),
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.total);
    let mut provenance = Vec::with_capacity(cfg.total);
    let mut clipped = Vec::with_capacity(cfg.total);
    if let Some(s) = levels.filter(|_| budget > 0 || cfg.orthogonal_levels.is_some()) {
        let design = orthogonal_array(s, d)?;
        if design.runs.len() > cfg.total {
            return Err(Error::Config {
                field: "orthogonal_levels".into(),
                message: format!("{} design runs exceed the batch of {}", design.runs.len(), cfg.total),
            });
        }
        for run in &design.runs {
            rows.push(
                run.iter()
                    .zip(&spec.parameters)
                    .map(|(&lv, p)| p.lower + level_quantile(lv, s) * (p.upper - p.lower))
                    .collect(),
            );
            provenance.push(Provenance::Orthogonal);
            clipped.push(false);
        }
    }
    let n_gmm = cfg.total - rows.len();
    if n_gmm > 0 {
        let samples = spec.distribution()?.sample(n_gmm, cfg.seed)?;
        for r in 0..n_gmm {
            let mut x: Vec<f64> = samples.row(r).iter().copied().collect();
            clipped.push(spec.clip(&mut x));
            rows.push(x);
            provenance.push(Provenance::Gmm);
        }
    }
    Ok(ParameterBatch {
        values: DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]),
        provenance,
        clipped,
    })
}

/// Applies each parameter row to the network and solves its power flow.
/// Non-convergence is recorded, never dropped.
pub fn materialize_scenarios(
    spec: &UncertaintySpec,
    batch: &ParameterBatch,
    net: &NetworkModel,
    pf_opts: &PowerFlowOptions,
) -> Result<Vec<ScenarioSample>> {
    spec.validate(net)?;
    let n = batch.values.nrows();
    if batch.values.ncols() != spec.dim() || batch.provenance.len() != n || batch.clipped.len() != n {
        return Err(Error::InvalidSpec("parameter batch does not match the spec".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|r| {
            let x: Vec<f64> = batch.values.row(r).iter().copied().collect();
            let (overrides, capped) = derive_overrides(spec, &x, net)?;
            let scenario_net = overrides.apply(net)?;
            let pf = solve_power_flow(&scenario_net, None, pf_opts)?;
            Ok(ScenarioSample {
                id: r,
                params: x,
                provenance: batch.provenance[r],
                clipped: batch.clipped[r] || capped,
                overrides,
                power_flow: pf,
            })
        })
        .collect()
}

/// One CSV row per scenario: id, origin, parameters, flags and MW totals.
pub fn scenarios_csv(spec: &UncertaintySpec, net: &NetworkModel, samples: &[ScenarioSample]) -> String {
    let mut out = String::from("id,provenance");
    for name in spec.names() {
        out.push(',');
        out.push_str(&name);
    }
    out.push_str(",clipped,converged,renewable_mw,synchronous_mw,demand_mw\n");
    for s in samples {
        let (mut ren, mut syn) = (0.0, 0.0);
        for (g, p) in net.generators.iter().zip(&s.overrides.gen_p_set) {
            if g.is_synchronous() {
                syn += p;
            } else {
                ren += p;
            }
        }
        let demand = s.overrides.load_p.iter().sum::<f64>() + s.overrides.hvdc_p.unwrap_or(0.0);
        let prov = match s.provenance {
            Provenance::Gmm => "gmm",
            Provenance::Orthogonal => "orthogonal",
            Provenance::Given => "given",
        };
        out.push_str(&format!("{},{prov}", s.id));
        for v in &s.params {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},{},{ren},{syn},{demand}\n",
            s.clipped as u8, s.power_flow.converged as u8
        ));
    }
    out
}

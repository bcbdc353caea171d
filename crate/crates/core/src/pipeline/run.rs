use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cluster::{cluster_scenarios, ClusterModel};
use super::labels::{evaluate_predictions, StabilityClass, StageMetrics};
use super::typical::{build_typical_set, TypicalScenarioSet, DEFAULT_COVERAGE_THRESHOLD, DEFAULT_MAX_COMPONENTS};
use crate::embed::{classical_mds, metric_mds, Embedding, MdsMethod, SmacofConfig};
use crate::error::{Error, Result};
use crate::fields::{compute_characteristics, CharacteristicVector, RasterGeometry, SsimParams};
use crate::grid::{
    build_impedance_matrix, electrical_distance, heaviest_loaded_branch, solve_power_flow, DistanceMatrix,
    NetworkModel, PowerFlowOptions, PowerFlowSolution,
};
use crate::scengen::{
    generate_parameters, materialize_scenarios, BatchConfig, EmConfig, ScenarioSample, UncertaintySpec,
};
use crate::stats::rows_to_matrix;
use crate::transient::{evaluate_scenario, FaultSpec, IndexRecord, TransientConfig, INDEX_NAMES};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Column of the TSI in index matrices built from [`INDEX_NAMES`].
pub const TSI_COLUMN: usize = 1;

/// Which line faults, and when. Without an explicit line the heaviest-loaded
/// non-bridge branch of the base case is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultChoice {
    pub line: Option<(u32, u32)>,
    pub t_fault: f64,
    pub clearing: f64,
}

impl Default for FaultChoice {
    fn default() -> Self {
        Self {
            line: None,
            t_fault: 1.0,
            clearing: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub method: MdsMethod,
    pub embedding_k: usize,
    pub smacof: SmacofConfig,
    pub resolution: usize,
    pub bandwidth: f64,
    pub ssim: SsimParams,
    pub allow_fallback: bool,
    pub power_flow: PowerFlowOptions,
    pub train: BatchConfig,
    pub test: BatchConfig,
    pub fault: FaultChoice,
    pub transient: TransientConfig,
    pub k: Option<usize>,
    pub cluster_seed: u64,
    pub m_max: usize,
    pub em: EmConfig,
    pub coverage_threshold: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            method: MdsMethod::Classical,
            embedding_k: 2,
            smacof: SmacofConfig::default(),
            resolution: 32,
            bandwidth: 1.5,
            ssim: SsimParams::default(),
            allow_fallback: true,
            power_flow: PowerFlowOptions::default(),
            train: BatchConfig {
                total: 200,
                orthogonal_fraction: 0.0,
                orthogonal_levels: Some(3),
                seed: 1,
            },
            test: BatchConfig {
                total: 65,
                orthogonal_fraction: 0.0,
                orthogonal_levels: None,
                seed: 2,
            },
            fault: FaultChoice::default(),
            transient: TransientConfig::default(),
            k: None,
            cluster_seed: 0,
            m_max: DEFAULT_MAX_COMPONENTS,
            em: EmConfig::default(),
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
        }
    }
}

/// Electrical distance and bus embedding of the base network.
pub fn embed_network(
    net: &NetworkModel,
    method: MdsMethod,
    k: usize,
    smacof: &SmacofConfig,
) -> Result<(DistanceMatrix, Embedding)> {
    let dist = electrical_distance(&build_impedance_matrix(net)?);
    let emb = match method {
        MdsMethod::Classical => classical_mds(&dist, k)?,
        MdsMethod::Metric => metric_mds(&dist, k, smacof)?,
    };
    Ok((dist, emb))
}

/// Characteristic vectors of every scenario, in scenario order.
pub fn characterize_scenarios(
    base: &NetworkModel,
    samples: &[ScenarioSample],
    geom: &RasterGeometry,
    coords: &DMatrix<f64>,
    ssim: &SsimParams,
    allow_fallback: bool,
) -> Result<Vec<CharacteristicVector>> {
    samples
        .par_iter()
        .map(|s| compute_characteristics(&s.network(base)?, &s.power_flow, geom, coords, ssim, allow_fallback))
        .collect()
}

pub fn resolve_fault(net: &NetworkModel, base_pf: &PowerFlowSolution, choice: &FaultChoice) -> Result<FaultSpec> {
    let (from, to) = match choice.line {
        Some(line) => line,
        None => {
            let b = heaviest_loaded_branch(net, base_pf)
                .ok_or_else(|| Error::InvalidFault("every branch is a bridge".into()))?;
            (net.branches[b].from, net.branches[b].to)
        }
    };
    Ok(FaultSpec {
        from,
        to,
        t_fault: choice.t_fault,
        clearing: choice.clearing,
    })
}

/// Fault-traversal indices of every scenario, in scenario order.
pub fn simulate_scenarios(
    base: &NetworkModel,
    samples: &[ScenarioSample],
    fault: &FaultSpec,
    cfg: &TransientConfig,
) -> Result<Vec<IndexRecord>> {
    fault.validate(base, cfg.horizon)?;
    samples
        .par_iter()
        .map(|s| {
            Ok(IndexRecord {
                scenario_id: s.id,
                indices: evaluate_scenario(&s.network(base)?, &s.power_flow, fault, cfg)?,
            })
        })
        .collect()
}

pub fn characteristic_matrix(chars: &[CharacteristicVector]) -> DMatrix<f64> {
    DMatrix::from_fn(chars.len(), 8, |r, c| chars[r].values[c])
}

pub fn index_matrix(records: &[IndexRecord]) -> DMatrix<f64> {
    rows_to_matrix(&records.iter().map(|r| r.indices.as_array().to_vec()).collect::<Vec<_>>())
}

pub fn classes(records: &[IndexRecord]) -> Vec<StabilityClass> {
    records.iter().map(|r| StabilityClass::classify(&r.indices)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub scenario_id: usize,
    pub cluster: usize,
    pub distance: f64,
    pub predicted: StabilityClass,
    pub actual: StabilityClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub schema_version: u32,
    pub rows: Vec<PredictionRow>,
    /// Unstable vs stable.
    pub stage1: StageMetrics,
    /// Coupled vs voltage-only, among scenarios unstable in truth and prediction.
    pub stage2: StageMetrics,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |p| format!("{:.2}%", 100.0 * p))
}

impl PredictionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario_id,cluster,distance,predicted,actual\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scenario_id,
                r.cluster,
                r.distance,
                r.predicted.as_str(),
                r.actual.as_str()
            ));
        }
        out
    }

    /// Two-row precision/recall table with confusion counts.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<28} {:>10} {:>10} {:>5} {:>5} {:>5} {:>5}\n",
            "stage", "precision", "recall", "TP", "FP", "TN", "FN"
        );
        for (name, m) in [
            ("1: unstable vs stable", &self.stage1),
            ("2: coupled vs voltage-only", &self.stage2),
        ] {
            out.push_str(&format!(
                "{:<28} {:>10} {:>10} {:>5} {:>5} {:>5} {:>5}\n",
                name,
                pct(m.precision),
                pct(m.recall),
                m.tp,
                m.fp,
                m.tn,
                m.fn_
            ));
        }
        out
    }
}

/// Assigns every scenario to a cluster and scores the predicted classes.
pub fn predict_scenarios(
    set: &TypicalScenarioSet,
    chars: &[CharacteristicVector],
    records: &[IndexRecord],
) -> Result<PredictionReport> {
    if chars.len() != records.len() {
        return Err(Error::LengthMismatch(format!(
            "{} characteristic vectors for {} index records",
            chars.len(),
            records.len()
        )));
    }
    let rows = chars
        .iter()
        .zip(records)
        .map(|(c, r)| {
            let (cluster, distance, predicted) = set.predict(&c.values)?;
            Ok(PredictionRow {
                scenario_id: r.scenario_id,
                cluster,
                distance,
                predicted,
                actual: StabilityClass::classify(&r.indices),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<_> = rows.iter().map(|r| r.predicted).collect();
    let actual: Vec<_> = rows.iter().map(|r| r.actual).collect();
    let (stage1, stage2) = evaluate_predictions(&predicted, &actual)?;
    Ok(PredictionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
        stage1,
        stage2,
    })
}

/// A materialized, characterized and simulated scenario batch.
#[derive(Debug, Clone)]
pub struct EvaluatedBatch {
    pub samples: Vec<ScenarioSample>,
    pub characteristics: Vec<CharacteristicVector>,
    pub indices: Vec<IndexRecord>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub distance: DistanceMatrix,
    pub embedding: Embedding,
    pub geometry: RasterGeometry,
    pub base_flow: PowerFlowSolution,
    pub fault: FaultSpec,
    pub train: EvaluatedBatch,
    pub clusters: ClusterModel,
    pub typical: TypicalScenarioSet,
    pub test: EvaluatedBatch,
    pub report: PredictionReport,
}

fn evaluate_batch(
    net: &NetworkModel,
    spec: &UncertaintySpec,
    batch_cfg: &BatchConfig,
    geom: &RasterGeometry,
    coords: &DMatrix<f64>,
    fault: &FaultSpec,
    s: &RunSettings,
) -> Result<EvaluatedBatch> {
    let params = generate_parameters(spec, batch_cfg)?;
    let samples = materialize_scenarios(spec, &params, net, &s.power_flow)?;
    let failed = samples.iter().filter(|x| !x.power_flow.converged).count();
    if failed > 0 {
        log::warn!("{failed} of {} scenario power flows did not converge", samples.len());
    }
    let characteristics = characterize_scenarios(net, &samples, geom, coords, &s.ssim, s.allow_fallback)?;
    let indices = simulate_scenarios(net, &samples, fault, &s.transient)?;
    Ok(EvaluatedBatch {
        samples,
        characteristics,
        indices,
    })
}

/// Full chain: embed → sample → characterize → simulate → cluster → typify,
/// then predict a held-out batch.
pub fn run_pipeline(net: &NetworkModel, spec: &UncertaintySpec, s: &RunSettings) -> Result<PipelineOutcome> {
    net.validate()?;
    spec.validate(net)?;
    let (distance, embedding) = embed_network(net, s.method, s.embedding_k, &s.smacof)?;
    let geometry = RasterGeometry::from_embedding(&embedding, s.resolution, s.bandwidth)?;
    let base_flow = solve_power_flow(net, None, &s.power_flow)?;
    if !base_flow.converged {
        return Err(Error::DegenerateInput("base-case power flow did not converge".into()));
    }
    let fault = resolve_fault(net, &base_flow, &s.fault)?;
    log::info!("fault on line {}-{}, cleared after {} s", fault.from, fault.to, fault.clearing);

    let coords = &embedding.coords;
    let train = evaluate_batch(net, spec, &s.train, &geometry, coords, &fault, s)?;
    let ix = index_matrix(&train.indices);
    let clusters = cluster_scenarios(&ix, s.k, TSI_COLUMN, s.cluster_seed)?;
    log::info!("{} clusters, silhouette {:?}", clusters.k, clusters.silhouette);
    let typical = build_typical_set(
        &clusters,
        &characteristic_matrix(&train.characteristics),
        &ix,
        &INDEX_NAMES,
        &classes(&train.indices),
        s.m_max,
        &s.em,
        s.coverage_threshold,
    )?;

    let test = evaluate_batch(net, spec, &s.test, &geometry, coords, &fault, s)?;
    let report = predict_scenarios(&typical, &test.characteristics, &test.indices)?;
    Ok(PipelineOutcome {
        distance,
        embedding,
        geometry,
        base_flow,
        fault,
        train,
        clusters,
        typical,
        test,
        report,
    })
}

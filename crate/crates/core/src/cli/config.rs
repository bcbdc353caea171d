use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{MdsMethod, SmacofConfig};
use crate::error::{Error, Result};
use crate::fields::{SsimParams, DEFAULT_BANDWIDTH, DEFAULT_RESOLUTION};
use crate::pipeline::{FaultChoice, RunSettings, DEFAULT_COVERAGE_THRESHOLD, DEFAULT_MAX_COMPONENTS};
use crate::scengen::{BatchConfig, EmConfig};
use crate::transient::{SeverityAggregate, TransientConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub network: Option<PathBuf>,
    pub uncertainty: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub method: MdsMethod,
    pub k: usize,
    pub smacof_max_iterations: usize,
    pub smacof_tolerance: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        let s = SmacofConfig::default();
        Self {
            method: MdsMethod::Classical,
            k: 2,
            smacof_max_iterations: s.max_iterations,
            smacof_tolerance: s.relative_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterSection {
    pub resolution: usize,
    pub bandwidth: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub ssim_dynamic_range: Option<f64>,
    pub allow_dispatch_fallback: bool,
}

impl Default for RasterSection {
    fn default() -> Self {
        let s = SsimParams::default();
        Self {
            resolution: DEFAULT_RESOLUTION,
            bandwidth: DEFAULT_BANDWIDTH,
            ssim_k1: s.k1,
            ssim_k2: s.k2,
            ssim_dynamic_range: s.dynamic_range,
            allow_dispatch_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub train: usize,
    pub test: usize,
    pub orthogonal_fraction: f64,
    pub orthogonal_levels: Option<usize>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            train: 200,
            test: 65,
            orthogonal_fraction: 0.0,
            orthogonal_levels: Some(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSection {
    /// Both ends or neither; without them the heaviest-loaded line faults.
    pub from: Option<u32>,
    pub to: Option<u32>,
    pub t_fault: f64,
    pub clearing: f64,
}

impl Default for FaultSection {
    fn default() -> Self {
        let f = FaultChoice::default();
        Self {
            from: None,
            to: None,
            t_fault: f.t_fault,
            clearing: f.clearing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub step: f64,
    pub horizon: f64,
    pub damping: f64,
    pub severity: SeverityAggregate,
    pub rocof_window: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let t = TransientConfig::default();
        Self {
            step: t.step,
            horizon: t.horizon,
            damping: t.damping,
            severity: t.severity,
            rocof_window: t.rocof_window,
        }
    }
}

/// `"auto"` or a fixed positive count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterCount {
    #[default]
    Auto,
    Fixed(usize),
}

impl Serialize for ClusterCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(Self::Fixed(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl ClusterCount {
    pub fn as_option(self) -> Option<usize> {
        match self {
            Self::Auto => None,
            Self::Fixed(k) => Some(k),
        }
    }
}

impl std::str::FromStr for ClusterCount {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse()
            .map(Self::Fixed)
            .map_err(|_| format!("expected `auto` or a positive integer, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub k: ClusterCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSection {
    pub m_max: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Defaults to the global seed.
    pub seed: Option<u64>,
}

impl Default for GmmSection {
    fn default() -> Self {
        let e = EmConfig::default();
        Self {
            m_max: DEFAULT_MAX_COMPONENTS,
            max_iterations: e.max_iterations,
            tolerance: e.tolerance,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSection {
    pub delta: f64,
}

impl Default for CoverageSection {
    fn default() -> Self {
        Self {
            delta: DEFAULT_COVERAGE_THRESHOLD,
        }
    }
}

/// The single experiment configuration file.
///
/// Input paths are resolved against the directory holding the file; the
/// output directory against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub paths: Paths,
    pub embedding: EmbeddingSection,
    pub raster: RasterSection,
    pub scenarios: ScenarioSection,
    pub fault: FaultSection,
    pub simulation: SimulationSection,
    pub clustering: ClusteringSection,
    pub gmm: GmmSection,
    pub coverage: CoverageSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 1,
            paths: Paths::default(),
            embedding: EmbeddingSection::default(),
            raster: RasterSection::default(),
            scenarios: ScenarioSection::default(),
            fault: FaultSection::default(),
            simulation: SimulationSection::default(),
            clustering: ClusteringSection::default(),
            gmm: GmmSection::default(),
            coverage: CoverageSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses and validates a config file, resolving its input paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| {
                text[s].lines().next().unwrap_or("config").trim().chars().take(40).collect()
            });
            config_err(&field, e.message().to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.network, &mut cfg.paths.uncertainty].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Bounds and cross-field checks; referenced input paths must exist.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("{} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version),
            ));
        }
        for (field, p) in [
            ("paths.network", &self.paths.network),
            ("paths.uncertainty", &self.paths.uncertainty),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(config_err(field, format!("{} does not exist", p.display())));
                }
            }
        }
        let e = &self.embedding;
        if e.k < 2 {
            return Err(config_err("embedding.k", "rasterization needs k >= 2"));
        }
        if e.smacof_max_iterations == 0 || !(e.smacof_tolerance > 0.0) {
            return Err(config_err("embedding.smacof_*", "iterations and tolerance must be positive"));
        }
        let r = &self.raster;
        if r.resolution < 4 {
            return Err(config_err("raster.resolution", "must be at least 4"));
        }
        if !(r.bandwidth > 0.0 && r.bandwidth.is_finite()) {
            return Err(config_err("raster.bandwidth", "must be positive"));
        }
        if !(r.ssim_k1 > 0.0 && r.ssim_k2 > 0.0) || r.ssim_dynamic_range.is_some_and(|l| !(l > 0.0)) {
            return Err(config_err("raster.ssim_*", "SSIM constants must be positive"));
        }
        let s = &self.scenarios;
        if s.train < 3 {
            return Err(config_err("scenarios.train", "need at least 3 training scenarios"));
        }
        if s.test == 0 {
            return Err(config_err("scenarios.test", "need at least one held-out scenario"));
        }
        if !(0.0..=1.0).contains(&s.orthogonal_fraction) {
            return Err(config_err("scenarios.orthogonal_fraction", "must lie in [0, 1]"));
        }
        let f = &self.fault;
        if f.from.is_some() != f.to.is_some() {
            return Err(config_err("fault.from/fault.to", "give both line ends or neither"));
        }
        if !(f.t_fault >= 0.0) || !(f.clearing > 0.0) {
            return Err(config_err("fault.clearing", "fault time must be >= 0 and clearing > 0"));
        }
        let m = &self.simulation;
        if !(m.step > 0.0) || !(m.horizon > 0.0) || m.step > m.horizon {
            return Err(config_err("simulation.step", "need 0 < step <= horizon"));
        }
        if f.t_fault + f.clearing >= m.horizon {
            return Err(config_err("fault.clearing", "the fault must clear before the horizon"));
        }
        if !(m.damping >= 0.0) || !(m.rocof_window > 0.0) {
            return Err(config_err("simulation.damping", "damping >= 0 and rocof_window > 0 required"));
        }
        if let ClusterCount::Fixed(k) = self.clustering.k {
            if k == 0 || k > s.train {
                return Err(config_err("clustering.k", format!("{k} outside 1..={}", s.train)));
            }
        }
        let g = &self.gmm;
        if g.m_max == 0 || g.max_iterations == 0 || !(g.tolerance > 0.0) {
            return Err(config_err("gmm", "m_max, max_iterations and tolerance must be positive"));
        }
        if !(self.coverage.delta >= 0.0) {
            return Err(config_err("coverage.delta", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn network_path(&self) -> Result<&Path> {
        self.paths
            .network
            .as_deref()
            .ok_or_else(|| config_err("paths.network", "no network file given"))
    }

    pub fn uncertainty_path(&self) -> Result<&Path> {
        self.paths
            .uncertainty
            .as_deref()
            .ok_or_else(|| config_err("paths.uncertainty", "no uncertainty spec given"))
    }

    pub fn smacof(&self) -> SmacofConfig {
        SmacofConfig {
            max_iterations: self.embedding.smacof_max_iterations,
            relative_tolerance: self.embedding.smacof_tolerance,
            ..SmacofConfig::default()
        }
    }

    pub fn ssim(&self) -> SsimParams {
        SsimParams {
            k1: self.raster.ssim_k1,
            k2: self.raster.ssim_k2,
            dynamic_range: self.raster.ssim_dynamic_range,
        }
    }

    pub fn transient(&self) -> TransientConfig {
        let m = &self.simulation;
        TransientConfig {
            step: m.step,
            horizon: m.horizon,
            damping: m.damping,
            severity: m.severity,
            rocof_window: m.rocof_window,
        }
    }

    pub fn fault_choice(&self) -> FaultChoice {
        FaultChoice {
            line: self.fault.from.zip(self.fault.to),
            t_fault: self.fault.t_fault,
            clearing: self.fault.clearing,
        }
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            max_iterations: self.gmm.max_iterations,
            tolerance: self.gmm.tolerance,
            seed: self.gmm.seed.unwrap_or(self.seed),
        }
    }

    /// Training batch uses the global seed, the held-out batch the next one.
    pub fn train_batch(&self) -> BatchConfig {
        BatchConfig {
            total: self.scenarios.train,
            orthogonal_fraction: self.scenarios.orthogonal_fraction,
            orthogonal_levels: self.scenarios.orthogonal_levels,
            seed: self.seed,
        }
    }

    pub fn test_batch(&self) -> BatchConfig {
        BatchConfig {
            total: self.scenarios.test,
            orthogonal_fraction: 0.0,
            orthogonal_levels: None,
            seed: self.seed.wrapping_add(1),
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            method: self.embedding.method,
            embedding_k: self.embedding.k,
            smacof: self.smacof(),
            resolution: self.raster.resolution,
            bandwidth: self.raster.bandwidth,
            ssim: self.ssim(),
            allow_fallback: self.raster.allow_dispatch_fallback,
            power_flow: Default::default(),
            train: self.train_batch(),
            test: self.test_batch(),
            fault: self.fault_choice(),
            transient: self.transient(),
            k: self.clustering.k.as_option(),
            cluster_seed: self.seed,
            m_max: self.gmm.m_max,
            em: self.em(),
            coverage_threshold: self.coverage.delta,
        }
    }
}

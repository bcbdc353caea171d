//! Command-line front end: one verb per pipeline stage plus `pipeline`,
//! driven by a TOML config with flag overrides.

mod artifacts;
mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

pub use artifacts::{Manifest, OutputDir, MANIFEST_SCHEMA_VERSION};
pub use config::{
    ClusterCount, ClusteringSection, CoverageSection, EmbeddingSection, FaultSection, GmmSection, Paths,
    PipelineConfig, RasterSection, ScenarioSection, SimulationSection, CONFIG_SCHEMA_VERSION,
};

use crate::correlate::{canonical_csv, kernel_correlation_matrix, pearson_matrix, per_index_canonical, KernelConfig, SampleMatrixPair};
use crate::embed::{embedding_fidelity, spectrum_report, Embedding, MdsMethod};
use crate::error::{Error, ErrorKind, Result};
use crate::fields::{characteristics_csv, parse_characteristics_csv, CharacteristicVector, RasterGeometry, CHARACTERISTIC_NAMES};
use crate::grid::{solve_power_flow, NetworkModel, PowerFlowOptions};
use crate::pipeline::{
    build_typical_set, characterize_scenarios, classes, cluster_scenarios, embed_network, index_matrix,
    predict_scenarios, resolve_fault, run_pipeline, simulate_scenarios, ClusterModel, PredictionReport,
    TypicalScenarioSet, TSI_COLUMN,
};
use crate::scengen::{generate_parameters, materialize_scenarios, scenarios_csv, ScenarioSample, UncertaintySpec};
use crate::transient::{indices_csv, parse_indices_csv, simulate_transient, FaultSpec, IndexRecord, INDEX_NAMES};

pub const ENV_WORKERS: &str = "TYPSCEN_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "typscen", version, about = "Typical operating-scenario generation for power networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub network: Option<PathBuf>,
    #[arg(long, global = true)]
    pub uncertainty: Option<PathBuf>,
    /// Global RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch stages.
    #[arg(long, global = true, env = ENV_WORKERS)]
    pub workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Which scenario batch a verb works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Set {
    Train,
    Heldout,
}

impl Set {
    fn tag(self) -> &'static str {
        match self {
            Set::Train => "train",
            Set::Heldout => "heldout",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Electrical distance, bus embedding, spectrum and fidelity curve.
    Embed {
        #[arg(long)]
        method: Option<MdsMethod>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Draw scenarios and solve their power flows.
    Sample {
        #[arg(long, value_enum, default_value = "train")]
        set: Set,
    },
    /// System-level characteristics of a scenario batch.
    Characterize {
        #[arg(long, value_enum, default_value = "train")]
        set: Set,
    },
    /// Fault simulation and stability indices of a scenario batch.
    Simulate {
        #[arg(long, value_enum, default_value = "train")]
        set: Set,
        /// Also write the full trajectory of this scenario id.
        #[arg(long)]
        trace: Option<usize>,
    },
    /// Pearson, kernel and canonical correlation of characteristics vs indices.
    Correlate {
        #[arg(long, value_enum, default_value = "train")]
        set: Set,
    },
    /// K-means clustering of the training scenarios on their indices.
    Cluster {
        /// `auto` or a fixed count.
        #[arg(long)]
        k: Option<ClusterCount>,
    },
    /// Per-cluster mixtures, typical scenarios and coverage.
    Typify,
    /// Assign scenarios to clusters with the fitted typical set.
    Predict {
        #[arg(long, value_enum, default_value = "heldout")]
        set: Set,
    },
    /// Precision and recall of predictions against simulated indices.
    Evaluate {
        #[arg(long, value_enum, default_value = "heldout")]
        set: Set,
    },
    /// Every stage end to end.
    Pipeline,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Embed { .. } => "embed",
            Command::Sample { .. } => "sample",
            Command::Characterize { .. } => "characterize",
            Command::Simulate { .. } => "simulate",
            Command::Correlate { .. } => "correlate",
            Command::Cluster { .. } => "cluster",
            Command::Typify => "typify",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Exit status for an error: 1 usage/config, 2 data, 3 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

/// Parses arguments, runs the verb, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::from_default_env().filter_level(level).try_init();
    match run(&cli) {
        Ok(dir) => {
            log::info!("artifacts written to {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Effective config: file (if any) with flag overrides applied.
pub fn effective_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &g.network {
        cfg.paths.network = Some(p.clone());
    }
    if let Some(p) = &g.uncertainty {
        cfg.paths.uncertainty = Some(p.clone());
    }
    if let Some(p) = &g.out {
        cfg.paths.output = Some(p.clone());
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn init_workers(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config {
                field: "workers".into(),
                message: "must be at least 1".into(),
            });
        }
        // A second initialization (tests, repeated calls) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one verb; returns the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    init_workers(cli.global.workers)?;
    let mut cfg = effective_config(&cli.global)?;
    match &cli.command {
        Command::Embed { method, k } => {
            if let Some(m) = method {
                cfg.embedding.method = *m;
            }
            if let Some(k) = k {
                cfg.embedding.k = *k;
            }
        }
        Command::Cluster { k: Some(k) } => cfg.clustering.k = *k,
        _ => {}
    }
    cfg.validate()?;
    let out_root = cfg.paths.output.clone().unwrap_or_else(|| PathBuf::from("typscen-out"));
    let mut out = OutputDir::create(&out_root)?;
    match &cli.command {
        Command::Embed { .. } => cmd_embed(&cfg, &mut out)?,
        Command::Sample { set } => cmd_sample(&cfg, *set, &mut out)?,
        Command::Characterize { set } => cmd_characterize(&cfg, *set, &mut out)?,
        Command::Simulate { set, trace } => cmd_simulate(&cfg, *set, *trace, &mut out)?,
        Command::Correlate { set } => cmd_correlate(&cfg, *set, &mut out)?,
        Command::Cluster { .. } => cmd_cluster(&cfg, &mut out)?,
        Command::Typify => cmd_typify(&cfg, &mut out)?,
        Command::Predict { set } => cmd_predict(&cfg, *set, &mut out)?,
        Command::Evaluate { set } => cmd_evaluate(&cfg, *set, &mut out)?,
        Command::Pipeline => cmd_pipeline(&cfg, &mut out)?,
    }
    out.finish(cli.command.name(), &cfg)?;
    Ok(out_root)
}

fn load_network(cfg: &PipelineConfig, out: &mut OutputDir) -> Result<NetworkModel> {
    let p = cfg.network_path()?;
    out.record_input("network", p)?;
    NetworkModel::load(p)
}

fn load_spec(cfg: &PipelineConfig, out: &mut OutputDir) -> Result<UncertaintySpec> {
    let p = cfg.uncertainty_path()?;
    out.record_input("uncertainty", p)?;
    UncertaintySpec::load(p)
}

fn scenarios_name(set: Set) -> String {
    format!("{}_scenarios.json", set.tag())
}

fn characteristics_name(set: Set) -> String {
    format!("{}_characteristics.csv", set.tag())
}

fn indices_name(set: Set) -> String {
    format!("{}_indices.csv", set.tag())
}

const FIDELITY_GP: &str = "set datafile separator ','
set key autotitle columnhead
set xlabel 'embedding dimension k'
set ylabel 'distance correlation'
plot 'fidelity.csv' using 1:2 with linespoints title 'classical', \\
     '' using 1:3 with linespoints title 'metric'
";

const CLUSTERS_GP: &str = "set datafile separator ','
set xlabel 'TSI'
set ylabel 'voltage severity (p.u.s)'
plot 'clusters.csv' using 4:3:2 with points palette pt 7 notitle
";

fn trace_gp(name: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't (s)'\nset ylabel 'f_COI (Hz)'\nplot '{name}' using 1:2 with lines\n"
    )
}

pub fn cmd_embed(cfg: &PipelineConfig, out: &mut OutputDir) -> Result<()> {
    let net = load_network(cfg, out)?;
    let k = cfg.embedding.k;
    let (dist, emb) = embed_network(&net, cfg.embedding.method, k, &cfg.smacof())?;
    out.write("embedding.csv", &emb.to_csv())?;
    let (_, classical) = embed_network(&net, MdsMethod::Classical, k.min(dist.n() - 1), &cfg.smacof())?;
    out.write("spectrum.csv", &spectrum_report(&classical)?.to_csv())?;
    let mut csv = String::from("k,classical,metric\n");
    for kk in 2.min(k)..=k {
        let c = embed_network(&net, MdsMethod::Classical, kk, &cfg.smacof())?.1;
        let m = embed_network(&net, MdsMethod::Metric, kk, &cfg.smacof())?.1;
        csv.push_str(&format!(
            "{kk},{},{}\n",
            embedding_fidelity(&dist, &c)?,
            embedding_fidelity(&dist, &m)?
        ));
    }
    out.write("fidelity.csv", &csv)?;
    out.write("fidelity.gp", FIDELITY_GP)
}

fn read_embedding(cfg: &PipelineConfig, out: &mut OutputDir) -> Result<Embedding> {
    let path = out.path("embedding.csv");
    let text = out.read_input("embedding", &path)?;
    Embedding::from_csv(&text, cfg.embedding.method).map_err(|m| Error::parse(&path, m))
}

pub fn cmd_sample(cfg: &PipelineConfig, set: Set, out: &mut OutputDir) -> Result<()> {
    let net = load_network(cfg, out)?;
    let spec = load_spec(cfg, out)?;
    let batch_cfg = match set {
        Set::Train => cfg.train_batch(),
        Set::Heldout => cfg.test_batch(),
    };
    let batch = generate_parameters(&spec, &batch_cfg)?;
    let samples = materialize_scenarios(&spec, &batch, &net, &PowerFlowOptions::default())?;
    out.write(&scenarios_name(set), &serde_json::to_string_pretty(&samples)?)?;
    out.write(&format!("{}_scenarios.csv", set.tag()), &scenarios_csv(&spec, &net, &samples))
}

fn read_scenarios(set: Set, out: &mut OutputDir) -> Result<Vec<ScenarioSample>> {
    let path = out.path(&scenarios_name(set));
    let text = out.read_input("scenarios", &path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
}

pub fn cmd_characterize(cfg: &PipelineConfig, set: Set, out: &mut OutputDir) -> Result<()> {
    let net = load_network(cfg, out)?;
    let emb = read_embedding(cfg, out)?;
    if emb.bus_ids != net.bus_ids() {
        return Err(Error::Dimension("embedding buses do not match the network".into()));
    }
    let samples = read_scenarios(set, out)?;
    let geom = RasterGeometry::from_embedding(&emb, cfg.raster.resolution, cfg.raster.bandwidth)?;
    let chars = characterize_scenarios(
        &net,
        &samples,
        &geom,
        &emb.coords,
        &cfg.ssim(),
        cfg.raster.allow_dispatch_fallback,
    )?;
    let rows: Vec<_> = samples.iter().map(|s| s.id).zip(chars).collect();
    out.write(&characteristics_name(set), &characteristics_csv(&rows))?;
    out.write("raster_geometry.json", &serde_json::to_string_pretty(&geom)?)
}

fn fault_for(cfg: &PipelineConfig, net: &NetworkModel) -> Result<FaultSpec> {
    let base = solve_power_flow(net, None, &PowerFlowOptions::default())?;
    if !base.converged {
        return Err(Error::DegenerateInput("base-case power flow did not converge".into()));
    }
    resolve_fault(net, &base, &cfg.fault_choice())
}

pub fn cmd_simulate(cfg: &PipelineConfig, set: Set, trace: Option<usize>, out: &mut OutputDir) -> Result<()> {
    let net = load_network(cfg, out)?;
    let samples = read_scenarios(set, out)?;
    let fault = fault_for(cfg, &net)?;
    let records = simulate_scenarios(&net, &samples, &fault, &cfg.transient())?;
    out.write(&indices_name(set), &indices_csv(&records))?;
    out.write("fault.json", &serde_json::to_string_pretty(&fault)?)?;
    if let Some(id) = trace {
        let s = samples.iter().find(|s| s.id == id).ok_or_else(|| Error::Config {
            field: "trace".into(),
            message: format!("no scenario {id} in the {} set", set.tag()),
        })?;
        let t = simulate_transient(&s.network(&net)?, &s.power_flow, Some(&fault), &cfg.transient())?;
        let name = format!("trace_{}_{id}.csv", set.tag());
        out.write(&name, &t.to_csv())?;
        out.write(&format!("trace_{}_{id}.gp", set.tag()), &trace_gp(&name))?;
    }
    Ok(())
}

fn read_characteristics(set: Set, out: &mut OutputDir) -> Result<Vec<(usize, CharacteristicVector)>> {
    let path = out.path(&characteristics_name(set));
    let text = out.read_input("characteristics", &path)?;
    parse_characteristics_csv(&text, &path.display().to_string())
}

fn read_indices(set: Set, out: &mut OutputDir) -> Result<Vec<IndexRecord>> {
    let path = out.path(&indices_name(set));
    let text = out.read_input("indices", &path)?;
    parse_indices_csv(&text, &path.display().to_string())
}

/// Characteristics and indices joined on scenario id, in id order.
fn joined(set: Set, out: &mut OutputDir) -> Result<(Vec<CharacteristicVector>, Vec<IndexRecord>)> {
    let mut chars = read_characteristics(set, out)?;
    let mut idx = read_indices(set, out)?;
    chars.sort_by_key(|c| c.0);
    idx.sort_by_key(|r| r.scenario_id);
    let ids_c: Vec<usize> = chars.iter().map(|c| c.0).collect();
    let ids_i: Vec<usize> = idx.iter().map(|r| r.scenario_id).collect();
    if ids_c != ids_i {
        return Err(Error::LengthMismatch(format!(
            "characteristics and indices of the {} set cover different scenario ids",
            set.tag()
        )));
    }
    Ok((chars.into_iter().map(|c| c.1).collect(), idx))
}

pub fn cmd_correlate(_cfg: &PipelineConfig, set: Set, out: &mut OutputDir) -> Result<()> {
    let (chars, idx) = joined(set, out)?;
    let x = DMatrix::from_fn(chars.len(), 8, |r, c| chars[r].values[c]);
    let pair = SampleMatrixPair::with_names(
        x,
        index_matrix(&idx),
        CHARACTERISTIC_NAMES.iter().map(|s| s.to_string()).collect(),
        INDEX_NAMES.iter().map(|s| s.to_string()).collect(),
    )?;
    let kc = KernelConfig::default();
    out.write("pearson.csv", &pearson_matrix(&pair).to_csv())?;
    out.write("kernel.csv", &kernel_correlation_matrix(&pair, &kc)?.to_csv())?;
    out.write("canonical.csv", &canonical_csv(&per_index_canonical(&pair, &kc)?))
}

fn clusters_csv(model: &ClusterModel, idx: &[IndexRecord]) -> String {
    let mut s = String::from("scenario_id,cluster,v_severity,tsi,rocof\n");
    for (r, c) in idx.iter().zip(&model.assignments) {
        let i = &r.indices;
        s.push_str(&format!("{},{c},{},{},{}\n", r.scenario_id, i.v_severity, i.tsi, i.rocof));
    }
    s
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ClusterArtifact {
    schema_version: u32,
    scenario_ids: Vec<usize>,
    model: ClusterModel,
}

pub fn cmd_cluster(cfg: &PipelineConfig, out: &mut OutputDir) -> Result<()> {
    let mut idx = read_indices(Set::Train, out)?;
    idx.sort_by_key(|r| r.scenario_id);
    let model = cluster_scenarios(&index_matrix(&idx), cfg.clustering.k.as_option(), TSI_COLUMN, cfg.seed)?;
    let art = ClusterArtifact {
        schema_version: 1,
        scenario_ids: idx.iter().map(|r| r.scenario_id).collect(),
        model,
    };
    out.write("clusters.json", &serde_json::to_string_pretty(&art)?)?;
    out.write("clusters.csv", &clusters_csv(&art.model, &idx))?;
    out.write("clusters.gp", CLUSTERS_GP)
}

fn coverage_csv(set: &TypicalScenarioSet) -> String {
    let mut s = String::from("cluster,label,members,typical_id,components,covered,total,coverage\n");
    for c in &set.clusters {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.cluster,
            c.label.as_str(),
            c.members.len(),
            c.typical_id,
            c.gmm.n_components(),
            c.coverage.covered,
            c.coverage.total,
            c.coverage.rate
        ));
    }
    s
}

pub fn cmd_typify(cfg: &PipelineConfig, out: &mut OutputDir) -> Result<()> {
    let (chars, idx) = joined(Set::Train, out)?;
    let path = out.path("clusters.json");
    let text = out.read_input("clusters", &path)?;
    let art: ClusterArtifact = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    let ids: Vec<usize> = idx.iter().map(|r| r.scenario_id).collect();
    if art.scenario_ids != ids {
        return Err(Error::LengthMismatch("clusters were built on a different training set".into()));
    }
    if ids.iter().enumerate().any(|(i, id)| i != *id) {
        return Err(Error::DegenerateInput("training scenario ids must be 0..n".into()));
    }
    let x = DMatrix::from_fn(chars.len(), 8, |r, c| chars[r].values[c]);
    let set = build_typical_set(
        &art.model,
        &x,
        &index_matrix(&idx),
        &INDEX_NAMES,
        &classes(&idx),
        cfg.gmm.m_max,
        &cfg.em(),
        cfg.coverage.delta,
    )?;
    out.write("typical_set.json", &set.to_json())?;
    out.write("coverage.csv", &coverage_csv(&set))
}

fn read_typical(out: &mut OutputDir) -> Result<TypicalScenarioSet> {
    let path = out.path("typical_set.json");
    out.read_input("typical_set", &path)?;
    TypicalScenarioSet::load(&path)
}

pub fn cmd_predict(_cfg: &PipelineConfig, set: Set, out: &mut OutputDir) -> Result<()> {
    let model = read_typical(out)?;
    let mut chars = read_characteristics(set, out)?;
    chars.sort_by_key(|c| c.0);
    let mut csv = String::from("scenario_id,cluster,distance,predicted\n");
    for (id, c) in &chars {
        let (cluster, d, label) = model.predict(&c.values)?;
        csv.push_str(&format!("{id},{cluster},{d},{}\n", label.as_str()));
    }
    out.write(&format!("{}_predictions.csv", set.tag()), &csv)
}

fn write_report(report: &PredictionReport, out: &mut OutputDir) -> Result<()> {
    out.write("report.csv", &report.to_csv())?;
    out.write("report.json", &serde_json::to_string_pretty(report)?)?;
    out.write("report.txt", &report.summary_table())
}

pub fn cmd_evaluate(_cfg: &PipelineConfig, set: Set, out: &mut OutputDir) -> Result<()> {
    let model = read_typical(out)?;
    let (chars, idx) = joined(set, out)?;
    let report = predict_scenarios(&model, &chars, &idx)?;
    print!("{}", report.summary_table());
    write_report(&report, out)
}

pub fn cmd_pipeline(cfg: &PipelineConfig, out: &mut OutputDir) -> Result<()> {
    let net = load_network(cfg, out)?;
    let spec = load_spec(cfg, out)?;
    let o = run_pipeline(&net, &spec, &cfg.run_settings())?;

    out.write("embedding.csv", &o.embedding.to_csv())?;
    out.write("raster_geometry.json", &serde_json::to_string_pretty(&o.geometry)?)?;
    out.write("fault.json", &serde_json::to_string_pretty(&o.fault)?)?;
    for (set, batch) in [(Set::Train, &o.train), (Set::Heldout, &o.test)] {
        out.write(&scenarios_name(set), &serde_json::to_string_pretty(&batch.samples)?)?;
        out.write(&format!("{}_scenarios.csv", set.tag()), &scenarios_csv(&spec, &net, &batch.samples))?;
        let rows: Vec<_> = batch.samples.iter().map(|s| s.id).zip(batch.characteristics.iter().cloned()).collect();
        out.write(&characteristics_name(set), &characteristics_csv(&rows))?;
        out.write(&indices_name(set), &indices_csv(&batch.indices))?;
    }
    let art = ClusterArtifact {
        schema_version: 1,
        scenario_ids: o.train.indices.iter().map(|r| r.scenario_id).collect(),
        model: o.clusters.clone(),
    };
    out.write("clusters.json", &serde_json::to_string_pretty(&art)?)?;
    out.write("clusters.csv", &clusters_csv(&o.clusters, &o.train.indices))?;
    out.write("clusters.gp", CLUSTERS_GP)?;
    out.write("typical_set.json", &o.typical.to_json())?;
    out.write("coverage.csv", &coverage_csv(&o.typical))?;
    print!("{}", o.report.summary_table());
    write_report(&o.report, out)
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

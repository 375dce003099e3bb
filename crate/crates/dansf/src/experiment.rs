//! Config-driven experiment runner: Monte-Carlo batches of fusion runs,
//! topology sweeps, CSV/SVG outputs, and a built-in verification battery.
//!
//! Seeds derive from `(master_seed, purpose, index)` so that every run is an
//! independent reproducible stream and the problem family is shared across
//! the topologies of a sweep. Outputs are written atomically (tempfile +
//! rename) and are byte-identical for identical `(config, seed)`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, EarlyStop, IterationRecord, RunConfig, RunOutcome, StatisticsMode};
use crate::error::{DansfError, Result};
use crate::linalg::SpdFactor;
use crate::metrics::{self, ConvergenceCurve, McSummary};
use crate::network::{generate_topology, prune_to_tree, NetworkGraph, TopologyKind};
use crate::plot::{self, PlotSeries, PlotSpec};
use crate::problems::{make_coupled_family, verify_assumption1, CoupledFamily, ProblemKind};
use crate::seeds;
use crate::signals::{exact_covariance, ChannelLayout, MixtureModel};

const TAG_GRAPH: u64 = 0x4752_4150_4855;
const TAG_MODEL: u64 = 0x4d4f_4445_4c00;
const TAG_FAMILY: u64 = 0x4641_4d49_4c59;
const TAG_RUN: u64 = 0x5255_4e00;

fn default_nodes() -> usize {
    10
}
fn default_output_dim() -> usize {
    3
}
fn default_channels() -> usize {
    7
}
fn default_topology() -> String {
    "fully_connected".into()
}
fn default_problem() -> String {
    "trace_qclp".into()
}
fn default_mode() -> String {
    "exact".into()
}
fn default_n_samples() -> usize {
    10_000
}
fn default_mc_runs() -> usize {
    20
}
fn default_seed() -> u64 {
    1
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_threshold() -> f64 {
    1e-4
}
fn default_var_mixing() -> f64 {
    0.2
}
fn default_var_source() -> f64 {
    0.5
}
fn default_var_noise() -> f64 {
    0.1
}

/// Flat experiment description; the JSON form is the CLI's `--config` file.
///
/// `max_iterations = 0` means the default of `30·K`; `er_probability = 0`
/// means the connectivity-threshold default `2·ln(K)/K`;
/// `early_stop_threshold = 0` disables early stopping (with a window of
/// `2·K` iterations otherwise unless overridden).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_nodes")]
    pub num_nodes: usize,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    #[serde(default = "default_channels")]
    pub channels_per_node: usize,
    /// Per-node channel counts; overrides `channels_per_node` when set.
    #[serde(default)]
    pub channels_list: Vec<usize>,
    #[serde(default = "default_topology")]
    pub topology: String,
    #[serde(default)]
    pub er_probability: f64,
    /// Read the connectivity graph from an edge-list file instead of
    /// generating it.
    #[serde(default)]
    pub topology_file: String,
    #[serde(default = "default_problem")]
    pub problem: String,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub max_iterations: usize,
    #[serde(default = "default_mc_runs")]
    pub mc_runs: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub early_stop_threshold: f64,
    #[serde(default)]
    pub early_stop_window: usize,
    /// Worker threads for Monte-Carlo runs; 0 uses all cores.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub debug_checks: bool,
    #[serde(default = "default_var_mixing")]
    pub var_mixing: f64,
    #[serde(default = "default_var_source")]
    pub var_source: f64,
    #[serde(default = "default_var_noise")]
    pub var_noise: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Apply one `key=value` override onto the JSON form of the config.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        let map = doc.as_object_mut().expect("config serializes to an object");
        if !map.contains_key(key) {
            return Err(DansfError::InvalidConfig(format!("unknown config key `{key}`")));
        }
        let parsed: serde_json::Value = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        map.insert(key.to_string(), parsed);
        let cfg: Self = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 || self.output_dim == 0 || self.mc_runs == 0 {
            return Err(DansfError::InvalidConfig(
                "num_nodes, output_dim, and mc_runs must be positive".into(),
            ));
        }
        if self.channels_list.is_empty() && self.channels_per_node == 0 {
            return Err(DansfError::InvalidConfig("channel counts must be positive".into()));
        }
        if !self.channels_list.is_empty() && self.channels_list.len() != self.num_nodes {
            return Err(DansfError::InvalidConfig(format!(
                "channels_list has {} entries for {} nodes",
                self.channels_list.len(),
                self.num_nodes
            )));
        }
        self.problem_kind()?;
        self.topology_kind()?;
        self.statistics_mode()?;
        Ok(())
    }

    pub fn problem_kind(&self) -> Result<ProblemKind> {
        match self.problem.as_str() {
            "trace_qclp" => Ok(ProblemKind::TraceQclp),
            "mmse" => Ok(ProblemKind::Mmse),
            "lcmv" => Ok(ProblemKind::Lcmv),
            other => Err(DansfError::InvalidConfig(format!(
                "unknown problem kind `{other}` (expected trace_qclp, mmse, or lcmv)"
            ))),
        }
    }

    pub fn er_probability_resolved(&self) -> f64 {
        if self.er_probability > 0.0 {
            self.er_probability
        } else {
            // connectivity-threshold regime
            (2.0 * (self.num_nodes as f64).ln() / self.num_nodes as f64).min(1.0)
        }
    }

    pub fn topology_kind(&self) -> Result<TopologyKind> {
        match self.topology.as_str() {
            "fully_connected" | "fc" => Ok(TopologyKind::FullyConnected),
            "line" => Ok(TopologyKind::Line),
            "erdos_renyi" | "er" => Ok(TopologyKind::ErdosRenyi {
                p: self.er_probability_resolved(),
            }),
            other => Err(DansfError::InvalidConfig(format!(
                "unknown topology `{other}` (expected fully_connected, line, or erdos_renyi)"
            ))),
        }
    }

    pub fn statistics_mode(&self) -> Result<StatisticsMode> {
        match self.mode.as_str() {
            "exact" => Ok(StatisticsMode::Exact),
            "sampled" => {
                if self.n_samples == 0 {
                    return Err(DansfError::InvalidConfig(
                        "sampled mode needs n_samples > 0".into(),
                    ));
                }
                Ok(StatisticsMode::Sampled {
                    n_samples: self.n_samples,
                })
            }
            other => Err(DansfError::InvalidConfig(format!(
                "unknown statistics mode `{other}` (expected exact or sampled)"
            ))),
        }
    }

    pub fn max_iterations_resolved(&self) -> usize {
        if self.max_iterations > 0 {
            self.max_iterations
        } else {
            30 * self.num_nodes
        }
    }

    pub fn layout(&self) -> Result<ChannelLayout> {
        if self.channels_list.is_empty() {
            ChannelLayout::uniform(self.num_nodes, self.channels_per_node)
        } else {
            ChannelLayout::new(self.channels_list.clone())
        }
    }

    fn early_stop(&self) -> Option<EarlyStop> {
        (self.early_stop_threshold > 0.0).then(|| EarlyStop {
            threshold: self.early_stop_threshold,
            window: if self.early_stop_window > 0 {
                self.early_stop_window
            } else {
                2 * self.num_nodes
            },
        })
    }

    fn graph(&self, kind: TopologyKind, run_idx: usize) -> Result<NetworkGraph> {
        if !self.topology_file.is_empty() {
            let text = fs::read_to_string(&self.topology_file)?;
            let graph = NetworkGraph::parse_edge_list(&text)?;
            if graph.num_nodes() != self.num_nodes {
                return Err(DansfError::InvalidConfig(format!(
                    "topology file has {} nodes, config says {}",
                    graph.num_nodes(),
                    self.num_nodes
                )));
            }
            return Ok(graph);
        }
        generate_topology(
            kind,
            self.num_nodes,
            seeds::derive(self.master_seed, TAG_GRAPH, run_idx as u64),
        )
    }

    /// Largest compressed dimension any updating node will see; sampled-mode
    /// batches smaller than this leave the local covariance singular.
    fn max_local_dimension(&self, graph: &NetworkGraph) -> Result<usize> {
        let layout = self.layout()?;
        let mut worst = 0;
        for q in 1..=graph.num_nodes() {
            let tree = prune_to_tree(graph, q)?;
            let dim = layout.node_channels(q) + tree.root_neighbors().len() * self.output_dim;
            worst = worst.max(dim);
        }
        Ok(worst)
    }
}

/// One Monte-Carlo run's problem draw. Every run redraws the mixture model,
/// the coupled family, the compressor initialization, and (for Erdős–Rényi)
/// the graph, all from `(master_seed, run_index)`-derived streams — so a
/// topology sweep sees the same family and seeds per run index across its
/// topologies.
struct Bench {
    graph: NetworkGraph,
    layout: ChannelLayout,
    model: MixtureModel,
    family: CoupledFamily,
}

impl Bench {
    fn build(config: &ExperimentConfig, kind: TopologyKind, run_idx: usize) -> Result<Self> {
        let layout = config.layout()?;
        let model = MixtureModel::random(
            layout.total(),
            config.output_dim,
            config.var_mixing,
            config.var_source,
            config.var_noise,
            seeds::derive(config.master_seed, TAG_MODEL, run_idx as u64),
        )?;
        let family = make_coupled_family(
            config.problem_kind()?,
            config.num_nodes,
            config.output_dim,
            &model,
            seeds::derive(config.master_seed, TAG_FAMILY, run_idx as u64),
        )?;
        let graph = config.graph(kind, run_idx)?;
        Ok(Self {
            graph,
            layout,
            model,
            family,
        })
    }
}

/// Dispatch `mc_runs` independent engine runs across the worker pool;
/// results come back ordered by run index.
fn monte_carlo(config: &ExperimentConfig, kind: TopologyKind) -> Result<Vec<RunOutcome>> {
    let execute = |run_idx: usize| -> Result<RunOutcome> {
        let bench = Bench::build(config, kind, run_idx)?;
        let run_config = RunConfig {
            mode: config.statistics_mode().expect("validated"),
            max_iterations: config.max_iterations_resolved(),
            early_stop: config.early_stop(),
            debug_checks: config.debug_checks,
            seed: seeds::derive(config.master_seed, TAG_RUN, run_idx as u64),
        };
        engine::run(
            &run_config,
            &bench.graph,
            &bench.layout,
            &bench.family,
            &bench.model,
        )
    };
    if config.jobs == 1 {
        (0..config.mc_runs).map(execute).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| DansfError::InvalidConfig(e.to_string()))?;
        pool.install(|| (0..config.mc_runs).into_par_iter().map(execute).collect())
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn raw_csv(outcomes: &[RunOutcome]) -> String {
    let mut out = String::from("run,iter,q,node,cost,feas_residual,mse,scalars_up,scalars_down\n");
    for (run_idx, outcome) in outcomes.iter().enumerate() {
        for rec in &outcome.records {
            for (node_idx, nr) in rec.per_node.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    run_idx,
                    rec.iteration,
                    rec.updating_node,
                    node_idx + 1,
                    nr.cost,
                    nr.feasibility_residual,
                    nr.relative_mse,
                    rec.scalars_upstream,
                    rec.scalars_downstream,
                ));
            }
        }
    }
    out
}

/// Worst-node relative MSE per iteration for each run.
pub fn max_mse_curves(outcomes: &[RunOutcome]) -> Vec<Vec<f64>> {
    outcomes
        .iter()
        .map(|o| o.records.iter().map(IterationRecord::max_mse).collect())
        .collect()
}

/// Per-node cost curve of one run.
pub fn cost_curve(records: &[IterationRecord]) -> Result<ConvergenceCurve> {
    ConvergenceCurve::new(
        records
            .iter()
            .map(|r| r.per_node.iter().map(|n| n.cost).collect())
            .collect(),
    )
}

/// Per-node relative-MSE curve of one run.
pub fn mse_curve(records: &[IterationRecord]) -> Result<ConvergenceCurve> {
    ConvergenceCurve::new(
        records
            .iter()
            .map(|r| r.per_node.iter().map(|n| n.relative_mse).collect())
            .collect(),
    )
}

fn summary_csv(summary: &McSummary) -> String {
    let mut out = String::from("iter,median,q1,q3\n");
    for i in 0..summary.median.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i, summary.median[i], summary.q1[i], summary.q3[i]
        ));
    }
    out
}

/// Output files of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentArtifacts {
    pub raw_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub svg: PathBuf,
    pub family_json: PathBuf,
    pub summary: McSummary,
}

/// Run the configured Monte-Carlo experiment and write raw CSV, summary CSV,
/// convergence SVG, and the problem-family JSON into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentArtifacts> {
    config.validate()?;
    let kind = config.topology_kind()?;
    let bench0 = Bench::build(config, kind, 0)?;
    if let StatisticsMode::Sampled { n_samples } = config.statistics_mode()? {
        let needed = config.max_local_dimension(&bench0.graph)?;
        if n_samples < needed {
            eprintln!(
                "warning: n_samples = {n_samples} is below the largest local dimension {needed}; \
                 local covariances will rely on the ridge"
            );
        }
    }
    let outcomes = monte_carlo(config, kind)?;
    let summary = metrics::mc_aggregate(&max_mse_curves(&outcomes), Some(config.threshold))?;

    let dir = PathBuf::from(&config.out_dir);
    let label = kind.label();
    let raw_path = dir.join(format!("raw_{label}.csv"));
    let summary_path = dir.join(format!("summary_{label}.csv"));
    let svg_path = dir.join(format!("convergence_{label}.svg"));
    let family_path = dir.join("family.json");

    write_atomic(&raw_path, &raw_csv(&outcomes))?;
    let summary_text = summary_csv(&summary);
    write_atomic(&summary_path, &summary_text)?;
    let title = format!(
        "{} / {} / {} nodes",
        config.problem, label, config.num_nodes
    );
    write_atomic(&svg_path, &plot::plot_summary(&summary_text, &title)?)?;
    // run 0's draw, as a reproducibility sample of the problem family
    write_atomic(&family_path, &bench0.family.to_json()?)?;

    Ok(ExperimentArtifacts {
        raw_csv: raw_path,
        summary_csv: summary_path,
        svg: svg_path,
        family_json: family_path,
        summary,
    })
}

/// Results of a topology sweep.
#[derive(Debug, Clone)]
pub struct SweepArtifacts {
    pub comparison_csv: PathBuf,
    pub iterations_csv: PathBuf,
    pub overlay_svg: PathBuf,
    /// `(topology label, per-iteration median, per-run iterations-to-threshold)`
    pub per_topology: Vec<(String, McSummary)>,
}

impl SweepArtifacts {
    /// Median iterations-to-threshold per topology; `None` when fewer than
    /// half the runs reached it.
    pub fn median_iterations(&self) -> Vec<(String, Option<usize>)> {
        self.per_topology
            .iter()
            .map(|(label, s)| {
                let mut vals: Vec<Option<usize>> = s.iterations_to_threshold.clone();
                vals.sort_by_key(|v| v.unwrap_or(usize::MAX));
                let mid = vals.len() / 2;
                (label.clone(), vals[mid])
            })
            .collect()
    }
}

/// Run the fully-connected, Erdős–Rényi, and line topologies over one shared
/// problem family and seed set; emit the per-topology median curves, the
/// per-run iterations-to-threshold table, and an overlay SVG.
pub fn sweep_topologies(config: &ExperimentConfig) -> Result<SweepArtifacts> {
    config.validate()?;
    let kinds = [
        TopologyKind::FullyConnected,
        TopologyKind::ErdosRenyi {
            p: config.er_probability_resolved(),
        },
        TopologyKind::Line,
    ];
    let mut comparison = String::from("topology,iter,median,q1,q3\n");
    let mut iterations = String::from("topology,run,iterations_to_threshold\n");
    let mut per_topology = Vec::new();
    let mut series = Vec::new();
    for kind in kinds {
        let outcomes = monte_carlo(config, kind)?;
        let summary = metrics::mc_aggregate(&max_mse_curves(&outcomes), Some(config.threshold))?;
        let label = kind.label().to_string();
        for i in 0..summary.median.len() {
            comparison.push_str(&format!(
                "{},{},{},{},{}\n",
                label, i, summary.median[i], summary.q1[i], summary.q3[i]
            ));
        }
        for (run_idx, itt) in summary.iterations_to_threshold.iter().enumerate() {
            let cell = itt.map_or_else(|| "not_reached".to_string(), |v| v.to_string());
            iterations.push_str(&format!("{label},{run_idx},{cell}\n"));
        }
        series.push(PlotSeries {
            label: label.clone(),
            points: summary
                .median
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as f64, v))
                .collect(),
        });
        per_topology.push((label, summary));
    }

    let dir = PathBuf::from(&config.out_dir);
    let comparison_path = dir.join("sweep_summary.csv");
    let iterations_path = dir.join("sweep_iterations.csv");
    let overlay_path = dir.join("sweep_overlay.svg");
    write_atomic(&comparison_path, &comparison)?;
    write_atomic(&iterations_path, &iterations)?;
    let svg = plot::render_svg(&PlotSpec {
        title: format!("{} / topology sweep / {} nodes", config.problem, config.num_nodes),
        x_label: "iteration".into(),
        y_label: "relative MSE (max over nodes, median of runs)".into(),
        series,
    });
    write_atomic(&overlay_path, &svg)?;

    Ok(SweepArtifacts {
        comparison_csv: comparison_path,
        iterations_csv: iterations_path,
        overlay_svg: overlay_path,
        per_topology,
    })
}

/// One line of the `verify` battery output.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match body() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Fast self-contained invariant battery behind the `verify` subcommand:
/// tree pruning structure, gather-sum identity, solver feasibility, the
/// coupling assumption, cost monotonicity and iterate feasibility, the
/// lift-map identities, communication accounting, and run determinism.
pub fn run_verification(seed: u64) -> Vec<CheckResult> {
    use crate::engine::{run as engine_run, RunConfig};
    use nalgebra::DMatrix;

    let mut results = Vec::new();

    results.push(check("tree pruning invariants", || {
        let mut worst = String::new();
        for s in 0..10u64 {
            let k = 4 + (s as usize % 6);
            let graph = generate_topology(
                TopologyKind::ErdosRenyi { p: 0.5 },
                k,
                seeds::derive(seed, 1, s),
            )?;
            for q in 1..=k {
                let tree = prune_to_tree(&graph, q)?;
                let edge_count = tree.edges().count();
                if edge_count != k - 1 {
                    worst = format!("tree rooted at {q} has {edge_count} edges");
                }
                for n in graph.neighbors(q) {
                    if !tree.contains_edge(q, n) {
                        worst = format!("root edge ({q},{n}) dropped");
                    }
                }
                let members: usize = tree
                    .root_neighbors()
                    .iter()
                    .map(|&n| tree.branch_members(n).len())
                    .sum();
                if members != k - 1 {
                    worst = format!("branches cover {members} of {} nodes", k - 1);
                }
            }
        }
        Ok((worst.is_empty(), if worst.is_empty() { "10 graphs, all roots".into() } else { worst }))
    }));

    results.push(check("gather-sum identity", || {
        use std::collections::BTreeMap;
        for trial in 0..25u64 {
            let k = 5 + (trial as usize % 8);
            let graph = generate_topology(
                TopologyKind::ErdosRenyi { p: 0.45 },
                k,
                seeds::derive(seed, 2, trial),
            )?;
            let root = (trial as usize % k) + 1;
            let tree = prune_to_tree(&graph, root)?;
            let schedule = crate::network::gather_schedule(&tree);
            // integer-valued blocks make the sums order-independent
            let blocks: BTreeMap<usize, engine::CompressedBlock> = (1..=k)
                .filter(|&n| n != root)
                .map(|n| {
                    (
                        n,
                        engine::CompressedBlock {
                            signal: DMatrix::from_fn(2, 3, |i, j| {
                                ((n * 7 + i * 3 + j) % 11) as f64
                            }),
                            shared: None,
                        },
                    )
                })
                .collect();
            let mut ledger = crate::network::LinkCostLedger::new();
            let agg = engine::fuse_forward(&tree, &schedule, &blocks, &mut ledger)?;
            for n in tree.root_neighbors() {
                let mut expect = DMatrix::zeros(2, 3);
                for m in tree.branch_members(n) {
                    expect += &blocks[&m].signal;
                }
                if agg[&n].signal != expect {
                    return Ok((false, format!("branch {n} sum mismatch on trial {trial}")));
                }
            }
        }
        Ok((true, "25 random trees".into()))
    }));

    results.push(check("coupling assumption on generated families", || {
        let layout = ChannelLayout::uniform(10, 7)?;
        let model = MixtureModel::random(70, 3, 0.2, 0.5, 0.1, seeds::derive(seed, 3, 0))?;
        let cov = exact_covariance(&model);
        let mut worst: f64 = 0.0;
        for kind in [ProblemKind::TraceQclp, ProblemKind::Mmse, ProblemKind::Lcmv] {
            let family = make_coupled_family(kind, 10, 3, &model, seeds::derive(seed, 3, 1))?;
            let report = verify_assumption1(&family, &cov, 1e-9)?;
            worst = worst.max(report.max_relative_deviation);
        }
        let _ = layout;
        Ok((worst <= 1e-9, format!("max pairwise deviation {worst:.2e}")))
    }));

    results.push(check("cost monotonicity and feasibility", || {
        let config = ExperimentConfig {
            mc_runs: 2,
            max_iterations: 120,
            master_seed: seed,
            ..Default::default()
        };
        let mut worst_feas: f64 = 0.0;
        let mut violations = 0usize;
        for kind in [
            TopologyKind::FullyConnected,
            TopologyKind::ErdosRenyi { p: 0.46 },
            TopologyKind::Line,
        ] {
            for run_idx in 0..config.mc_runs {
                let bench = Bench::build(&config, kind, run_idx)?;
                let rc = RunConfig::exact(120, seeds::derive(seed, TAG_RUN, run_idx as u64));
                let out = engine_run(&rc, &bench.graph, &bench.layout, &bench.family, &bench.model)?;
                violations += metrics::check_monotone(&cost_curve(&out.records)?, 1e-9).len();
                for r in &out.records {
                    for nr in &r.per_node {
                        worst_feas = worst_feas.max(nr.feasibility_residual);
                    }
                }
            }
        }
        Ok((
            violations == 0 && worst_feas <= 1e-8,
            format!("{violations} violations, worst residual {worst_feas:.2e}"),
        ))
    }));

    results.push(check("lift-map identities", || {
        let layout = ChannelLayout::uniform(6, 4)?;
        let model = MixtureModel::random(24, 3, 0.2, 0.5, 0.1, seeds::derive(seed, 4, 0))?;
        let family =
            make_coupled_family(ProblemKind::TraceQclp, 6, 3, &model, seeds::derive(seed, 4, 1))?;
        let graph =
            generate_topology(TopologyKind::ErdosRenyi { p: 0.5 }, 6, seeds::derive(seed, 4, 2))?;
        let rc = RunConfig::sampled(400, 18, seeds::derive(seed, 4, 3)).with_debug_checks();
        let out = engine_run(&rc, &graph, &layout, &family, &model)?;
        let dbg = out.debug.expect("debug checks enabled");
        let worst = dbg
            .gather_gap
            .max(dbg.shared_gap)
            .max(dbg.lift_gap)
            .max(dbg.output_gap);
        Ok((worst <= 1e-12, format!("worst identity gap {worst:.2e}")))
    }));

    results.push(check("communication accounting", || {
        let layout = ChannelLayout::uniform(5, 4)?;
        let model = MixtureModel::random(20, 2, 0.2, 0.5, 0.1, seeds::derive(seed, 5, 0))?;
        let family =
            make_coupled_family(ProblemKind::TraceQclp, 5, 2, &model, seeds::derive(seed, 5, 1))?;
        let graph = generate_topology(TopologyKind::Line, 5, 0)?;
        let n = 60usize;
        let rc = RunConfig::sampled(n, 10, seeds::derive(seed, 5, 2));
        let out = engine_run(&rc, &graph, &layout, &family, &model)?;
        let (q, l) = (2u64, 2u64);
        let up = 4 * (q * n as u64 + q * l);
        let down = 4 * (q * n as u64 + q * l + q * q);
        let ok = out
            .records
            .iter()
            .all(|r| r.scalars_upstream == up && r.scalars_downstream == down);
        Ok((ok, format!("expected {up} up / {down} down per iteration")))
    }));

    results.push(check("run determinism", || {
        let config = ExperimentConfig {
            mc_runs: 1,
            max_iterations: 25,
            num_nodes: 6,
            channels_per_node: 5,
            master_seed: seed,
            ..Default::default()
        };
        let bench = Bench::build(&config, TopologyKind::FullyConnected, 0)?;
        let rc = RunConfig::exact(25, seeds::derive(seed, 6, 0));
        let a = engine_run(&rc, &bench.graph, &bench.layout, &bench.family, &bench.model)?;
        let b = engine_run(&rc, &bench.graph, &bench.layout, &bench.family, &bench.model)?;
        let same = a
            .records
            .iter()
            .zip(&b.records)
            .all(|(ra, rb)| {
                ra.per_node
                    .iter()
                    .zip(&rb.per_node)
                    .all(|(x, y)| x.cost.to_bits() == y.cost.to_bits())
            });
        Ok((same, "two identical runs, bitwise costs".into()))
    }));

    results.push(check("closed-form solver feasibility", || {
        let model = MixtureModel::random(9, 2, 0.2, 0.5, 0.1, seeds::derive(seed, 7, 0))?;
        let cov = exact_covariance(&model);
        let factor = SpdFactor::from_spd(cov.matrix())?;
        let mut worst: f64 = 0.0;
        for kind in [ProblemKind::TraceQclp, ProblemKind::Mmse, ProblemKind::Lcmv] {
            let family = make_coupled_family(kind, 3, 2, &model, seeds::derive(seed, 7, 1))?;
            let data = crate::problems::ProblemData::from_factor(
                factor.clone(),
                family.shared().clone(),
            )?;
            for k in 1..=3 {
                let inst = family.instance(k);
                let x = inst.solve(&data, None)?;
                let residuals = inst.constraint_residuals(&x, &data)?;
                worst = worst.max(crate::problems::max_constraint_violation(&residuals));
            }
        }
        Ok((worst <= 1e-8, format!("worst constraint violation {worst:.2e}")))
    }));

    results
}

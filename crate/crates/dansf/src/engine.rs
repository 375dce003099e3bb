//! The distributed fusion iteration: compression, sum-and-forward gathering,
//! the compressed local solve at the round-robin updating node, dissemination
//! of the solution stream, and the per-node `Q×Q` correction solves.
//!
//! One iteration with updating node `q` over the pruned tree:
//!
//! 1. every node compresses its sensor block through its current compressor
//!    `X_kk` and the tree sums the compressed blocks toward `q`, one `Q`-band
//!    aggregate per root neighbor;
//! 2. node `q` stacks its raw block on top of the aggregates and solves the
//!    compressed instance of its own problem, tie-breaking toward the
//!    previous iterate;
//! 3. the solution splits into `q`'s new compressor and one `Q×Q` matrix
//!    `G_n` per root neighbor; `q`'s output stream `z_q` and compressed
//!    shared matrix `Z_q` are sent to every node along with the branch `G_n`;
//! 4. every node `k ≠ q` updates its compressor to `X_kk·G_n` and solves its
//!    own problem on the `Q`-channel data `(z_q, Z_q)` for the correction
//!    `F_kq`, giving its filter estimate `X_k = X_q·F_kq` and output
//!    `z_k = F_kqᵀ·z_q`.
//!
//! Compressors follow the `G`-chain only. Folding the node-specific `F_kq`
//! into the compressor as well breaks the branch sums of any tree with a
//! multi-node branch (a branch shares a single `G_n`, which cannot undo
//! per-node factors), and the iteration then stalls away from the per-node
//! optima; with the `G`-chain the previous iterate always stays inside the
//! compressed search space, which is what makes every cost sequence
//! non-increasing.
//!
//! Statistics come in two modes: `Exact` threads the analytic covariance
//! through the compression as a triangular factor — never forming the
//! compressed covariance, which would square its condition number — while
//! `Sampled` draws a fresh block of `N` samples per iteration and estimates
//! everything from data, like the block-adaptive filter the scheme is meant
//! to be deployed as.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DansfError, Result};
use crate::linalg::{self, SpdFactor};
use crate::metrics;
use crate::network::{
    gather_schedule, prune_to_tree, GatherSchedule, LinkCostLedger, NetworkGraph, TreeTopology,
};
use crate::problems::{max_constraint_violation, CoupledFamily, ProblemData, ProblemInstance};
use crate::seeds;
use crate::signals::{
    exact_covariance, node_rows, sample_batch_with_sources, ChannelLayout, MixtureModel,
};

/// Where the second-order statistics of a run come from.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatisticsMode {
    /// Analytic covariances, no sampling noise; isolates algorithmic
    /// convergence from estimation error.
    Exact,
    /// A fresh block of `n_samples` per iteration, statistics estimated with
    /// the `1/N` normalizer.
    Sampled { n_samples: usize },
}

/// Stop once `max_k ε_k` stays below `threshold` for `window` consecutive
/// iterations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EarlyStop {
    pub threshold: f64,
    pub window: usize,
}

/// Per-run engine configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: StatisticsMode,
    pub max_iterations: usize,
    pub early_stop: Option<EarlyStop>,
    /// Build the explicit lift map each iteration and record the worst
    /// deviation of the compression/lift/output identities.
    pub debug_checks: bool,
    pub seed: u64,
}

impl RunConfig {
    pub fn exact(max_iterations: usize, seed: u64) -> Self {
        Self {
            mode: StatisticsMode::Exact,
            max_iterations,
            early_stop: None,
            debug_checks: false,
            seed,
        }
    }

    pub fn sampled(n_samples: usize, max_iterations: usize, seed: u64) -> Self {
        Self {
            mode: StatisticsMode::Sampled { n_samples },
            max_iterations,
            early_stop: None,
            debug_checks: false,
            seed,
        }
    }

    pub fn with_debug_checks(mut self) -> Self {
        self.debug_checks = true;
        self
    }

    pub fn with_early_stop(mut self, threshold: f64, window: usize) -> Self {
        self.early_stop = Some(EarlyStop { threshold, window });
        self
    }
}

/// Mutable per-node state across iterations.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node: usize,
    /// Current compressor `X_kk`, `M_k × Q`.
    pub compressor: DMatrix<f64>,
    /// Correction `F_kq` from the most recent iteration; tie-break reference
    /// for the next `Q×Q` solve.
    pub latest_correction: Option<DMatrix<f64>>,
    /// Filter output block `z_k` of the most recent sampled iteration.
    pub latest_output: Option<DMatrix<f64>>,
}

/// One node's compressed contribution: `ŷ_k = X_kkᵀ y_k` and, for problems
/// with a deterministic shared matrix, `B̂_k = X_kkᵀ B_k`.
#[derive(Debug, Clone)]
pub struct CompressedBlock {
    pub signal: DMatrix<f64>,
    pub shared: Option<DMatrix<f64>>,
}

impl CompressedBlock {
    fn add_assign(&mut self, other: &Self) {
        self.signal += &other.signal;
        match (&mut self.shared, &other.shared) {
            (Some(a), Some(b)) => *a += b,
            (None, None) => {}
            _ => unreachable!("mixed payload kinds are rejected before fusing"),
        }
    }

    /// Scalars one transmission of this block puts on a link.
    pub fn scalar_count(&self) -> u64 {
        let mut n = (self.signal.nrows() * self.signal.ncols()) as u64;
        if let Some(s) = &self.shared {
            n += (s.nrows() * s.ncols()) as u64;
        }
        n
    }
}

/// Compress one node's raw block(s) through its compressor.
pub fn compress(
    compressor: &DMatrix<f64>,
    signal_block: &DMatrix<f64>,
    shared_block: Option<&DMatrix<f64>>,
) -> Result<CompressedBlock> {
    if signal_block.nrows() != compressor.nrows() {
        return Err(DansfError::DimensionMismatch(format!(
            "signal block has {} rows, compressor expects {}",
            signal_block.nrows(),
            compressor.nrows()
        )));
    }
    if let Some(b) = shared_block {
        if b.nrows() != compressor.nrows() {
            return Err(DansfError::DimensionMismatch(format!(
                "shared block has {} rows, compressor expects {}",
                b.nrows(),
                compressor.nrows()
            )));
        }
    }
    Ok(CompressedBlock {
        signal: compressor.transpose() * signal_block,
        shared: shared_block.map(|b| compressor.transpose() * b),
    })
}

/// Round-robin updating node: `q = (i mod K) + 1`.
pub fn select_updating_node(iteration: usize, num_nodes: usize) -> usize {
    (iteration % num_nodes) + 1
}

/// Replay the gather schedule: each node adds its own compressed block to the
/// aggregates received from its children and forwards the sum to its parent.
/// Returns one aggregate per root neighbor and charges every transmission to
/// the ledger.
pub fn fuse_forward(
    tree: &TreeTopology,
    schedule: &GatherSchedule,
    blocks: &BTreeMap<usize, CompressedBlock>,
    ledger: &mut LinkCostLedger,
) -> Result<BTreeMap<usize, CompressedBlock>> {
    let root = tree.root();
    for k in 1..=tree.num_nodes() {
        if k != root && !blocks.contains_key(&k) {
            return Err(DansfError::DimensionMismatch(format!(
                "missing compressed block for node {k}"
            )));
        }
    }
    let mut pending: BTreeMap<usize, CompressedBlock> = BTreeMap::new();
    let mut aggregates = BTreeMap::new();
    for &(sender, receiver) in schedule.steps() {
        if tree.parent(sender) != Some(receiver) {
            return Err(DansfError::InvalidGraph(format!(
                "schedule step ({sender}, {receiver}) does not match the tree"
            )));
        }
        let mut payload = blocks[&sender].clone();
        if let Some(acc) = pending.remove(&sender) {
            payload.add_assign(&acc);
        }
        ledger.record_transfer(tree, sender, receiver, payload.scalar_count())?;
        if receiver == root {
            aggregates.insert(sender, payload);
        } else {
            pending
                .entry(receiver)
                .and_modify(|acc| acc.add_assign(&payload))
                .or_insert(payload);
        }
    }
    Ok(aggregates)
}

/// The data gathered at the updating node, stacked in neighbor order under
/// its own raw block.
#[derive(Debug, Clone)]
pub struct LocalData {
    signal: DMatrix<f64>,
    shared: Option<DMatrix<f64>>,
    own_channels: usize,
    neighbor_order: Vec<usize>,
}

impl LocalData {
    /// Compressed problem dimension `M̃_q = M_q + |N_q|·Q`.
    pub fn m_tilde(&self) -> usize {
        self.signal.nrows()
    }

    pub fn signal(&self) -> &DMatrix<f64> {
        &self.signal
    }

    pub fn shared(&self) -> Option<&DMatrix<f64>> {
        self.shared.as_ref()
    }

    pub fn own_channels(&self) -> usize {
        self.own_channels
    }

    pub fn neighbor_order(&self) -> &[usize] {
        &self.neighbor_order
    }
}

/// Stack the updating node's raw block over the branch aggregates.
pub fn assemble_local(
    own_signal: &DMatrix<f64>,
    own_shared: Option<&DMatrix<f64>>,
    aggregates: &BTreeMap<usize, CompressedBlock>,
    neighbor_order: &[usize],
) -> Result<LocalData> {
    for n in neighbor_order {
        if !aggregates.contains_key(n) {
            return Err(DansfError::DimensionMismatch(format!(
                "missing aggregate for root neighbor {n}"
            )));
        }
    }
    let band_rows: usize = neighbor_order
        .iter()
        .map(|n| aggregates[n].signal.nrows())
        .sum();
    let m_tilde = own_signal.nrows() + band_rows;
    let n_cols = own_signal.ncols();
    let mut signal = DMatrix::zeros(m_tilde, n_cols);
    signal.rows_mut(0, own_signal.nrows()).copy_from(own_signal);
    let mut row = own_signal.nrows();
    for n in neighbor_order {
        let band = &aggregates[n].signal;
        if band.ncols() != n_cols {
            return Err(DansfError::DimensionMismatch(
                "aggregate sample count mismatch".into(),
            ));
        }
        signal.rows_mut(row, band.nrows()).copy_from(band);
        row += band.nrows();
    }

    let shared = match own_shared {
        Some(own) => {
            let mut stacked = DMatrix::zeros(m_tilde, own.ncols());
            stacked.rows_mut(0, own.nrows()).copy_from(own);
            let mut row = own.nrows();
            for n in neighbor_order {
                let band = aggregates[n].shared.as_ref().ok_or_else(|| {
                    DansfError::DimensionMismatch(format!(
                        "aggregate for neighbor {n} lacks the shared payload"
                    ))
                })?;
                stacked.rows_mut(row, band.nrows()).copy_from(band);
                row += band.nrows();
            }
            Some(stacked)
        }
        None => None,
    };

    Ok(LocalData {
        signal,
        shared,
        own_channels: own_signal.nrows(),
        neighbor_order: neighbor_order.to_vec(),
    })
}

/// Tie-break reference of the local solve: the previous compressor stacked
/// over one identity block per root neighbor — the point of the compressed
/// search space that reproduces the previous iterate.
pub fn build_tie_break_ref(compressor_q: &DMatrix<f64>, num_neighbors: usize) -> DMatrix<f64> {
    let q = compressor_q.ncols();
    let m_tilde = compressor_q.nrows() + num_neighbors * q;
    let mut out = DMatrix::zeros(m_tilde, q);
    out.rows_mut(0, compressor_q.nrows()).copy_from(compressor_q);
    for band in 0..num_neighbors {
        out.rows_mut(compressor_q.nrows() + band * q, q)
            .copy_from(&DMatrix::identity(q, q));
    }
    out
}

/// Partitioned solution of the compressed local problem.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    x_tilde: DMatrix<f64>,
    own_rows: usize,
    neighbor_order: Vec<usize>,
}

impl LocalSolution {
    pub fn new(x_tilde: DMatrix<f64>, own_rows: usize, neighbor_order: Vec<usize>) -> Result<Self> {
        let q = x_tilde.ncols();
        if x_tilde.nrows() != own_rows + neighbor_order.len() * q {
            return Err(DansfError::DimensionMismatch(format!(
                "local solution has {} rows, partition expects {}",
                x_tilde.nrows(),
                own_rows + neighbor_order.len() * q
            )));
        }
        Ok(Self {
            x_tilde,
            own_rows,
            neighbor_order,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x_tilde
    }

    /// The updating node's new compressor block.
    pub fn compressor_block(&self) -> DMatrix<f64> {
        self.x_tilde.rows(0, self.own_rows).into_owned()
    }

    /// The `Q×Q` block of root neighbor `n`'s branch.
    pub fn g_block(&self, n: usize) -> Result<DMatrix<f64>> {
        let q = self.x_tilde.ncols();
        let band = self
            .neighbor_order
            .iter()
            .position(|&m| m == n)
            .ok_or_else(|| {
                DansfError::DimensionMismatch(format!("no branch band for neighbor {n}"))
            })?;
        Ok(self.x_tilde.rows(self.own_rows + band * q, q).into_owned())
    }
}

/// Explicit compression matrix `C_q` with `ỹ_q = C_qᵀ y` and lift
/// `X_q = C_q X̃_q`: an identity block on the updating node's rows and, per
/// branch band, the compressors of the branch members.
#[derive(Debug, Clone)]
pub struct LiftMap {
    c: DMatrix<f64>,
}

impl LiftMap {
    pub fn build(
        tree: &TreeTopology,
        layout: &ChannelLayout,
        compressors: &[DMatrix<f64>],
    ) -> Result<Self> {
        let root = tree.root();
        let own = layout.node_channels(root);
        let neighbor_order = tree.root_neighbors();
        let q_cols = compressors
            .first()
            .map(|c| c.ncols())
            .ok_or_else(|| DansfError::InvalidConfig("no compressors".into()))?;
        let m_tilde = own + neighbor_order.len() * q_cols;
        let mut c = DMatrix::zeros(layout.total(), m_tilde);
        let own_range = layout.node_range(root)?;
        for (i, row) in own_range.enumerate() {
            c[(row, i)] = 1.0;
        }
        for (band, &n) in neighbor_order.iter().enumerate() {
            let col0 = own + band * q_cols;
            for k in tree.branch_members(n) {
                let range = layout.node_range(k)?;
                let comp = &compressors[k - 1];
                if comp.nrows() != range.len() || comp.ncols() != q_cols {
                    return Err(DansfError::DimensionMismatch(format!(
                        "compressor of node {k} is {}x{}, expected {}x{q_cols}",
                        comp.nrows(),
                        comp.ncols(),
                        range.len()
                    )));
                }
                for i in 0..comp.nrows() {
                    for j in 0..q_cols {
                        c[(range.start + i, col0 + j)] = comp[(i, j)];
                    }
                }
            }
        }
        Ok(Self { c })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `Cᵀ·X`: compress network-wide data to the local dimension.
    pub fn compress_data(&self, stacked: &DMatrix<f64>) -> DMatrix<f64> {
        self.c.transpose() * stacked
    }

    /// `C·X̃`: lift a local solution back to the network-wide dimension.
    pub fn lift(&self, x_tilde: &DMatrix<f64>) -> DMatrix<f64> {
        &self.c * x_tilde
    }
}

/// Per-node measurements at the end of one iteration, all against the exact
/// statistics and the centralized oracle.
#[derive(Debug, Clone, Copy)]
pub struct NodeRecord {
    pub cost: f64,
    pub feasibility_residual: f64,
    pub relative_mse: f64,
}

/// Everything recorded about one completed iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub updating_node: usize,
    pub per_node: Vec<NodeRecord>,
    /// Scalars moved tree-upward (gather) during this iteration.
    pub scalars_upstream: u64,
    /// Scalars moved tree-downward (dissemination) during this iteration.
    pub scalars_downstream: u64,
    /// Corrections `F_kq` that came out numerically rank-deficient.
    pub singular_corrections: usize,
}

impl IterationRecord {
    pub fn max_mse(&self) -> f64 {
        self.per_node
            .iter()
            .map(|r| r.relative_mse)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Worst deviations of the lift-map identities over a debug-checked run,
/// each relative to the magnitude of the quantity being checked.
#[derive(Debug, Clone, Copy, Default)]
pub struct DebugStats {
    /// `max |ỹ_q − C_qᵀy|` over iterations (sampled mode).
    pub gather_gap: f64,
    /// `max |B̃_q − C_qᵀB|` over iterations.
    pub shared_gap: f64,
    /// `max |X_q − C_q·X̃_q|`, blockwise update against the explicit lift.
    pub lift_gap: f64,
    /// `max |z_k − X_kᵀy|` over nodes and iterations (sampled mode).
    pub output_gap: f64,
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<IterationRecord>,
    pub ledger: LinkCostLedger,
    /// Final filter estimate `X_k` per node.
    pub final_filters: Vec<DMatrix<f64>>,
    /// Centralized oracle solutions `X_k*`.
    pub oracles: Vec<DMatrix<f64>>,
    pub debug: Option<DebugStats>,
}

const TAG_INIT: u64 = 0x494e_4954;
const TAG_BATCH: u64 = 0x4241_5443;

/// Random compressor initialization, per-node seeded, redrawn on the
/// (probability-zero) event of rank deficiency.
fn init_compressors(
    layout: &ChannelLayout,
    output_dim: usize,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    (1..=layout.num_nodes())
        .map(|k| {
            let rows = layout.node_channels(k);
            let want = rows.min(output_dim);
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, TAG_INIT, k as u64));
            for _ in 0..16 {
                let cand = DMatrix::from_fn(rows, output_dim, |_, _| std_normal.sample(&mut rng));
                if linalg::numerical_rank(&cand, 1e-12) == want {
                    return Ok(cand);
                }
            }
            Err(DansfError::InvalidConfig(format!(
                "could not draw a full-rank compressor for node {k}"
            )))
        })
        .collect()
}

/// Covariance factor of a sampled block: QR of `[Yᵀ/√N; √δ·I]` with the
/// default sampled-mode ridge `δ = 1e-10·trace(R)/M`, never forming `R`.
fn sampled_factor(block: &DMatrix<f64>) -> Result<SpdFactor> {
    let m = block.nrows();
    let n = block.ncols();
    let scale = 1.0 / (n as f64).sqrt();
    let ridge = 1e-10 * block.norm_squared() / (n as f64) / (m as f64);
    let mut tall = DMatrix::zeros(n + m, m);
    tall.rows_mut(0, n).copy_from(&(block.transpose() * scale));
    let sqrt_ridge = ridge.sqrt();
    for i in 0..m {
        tall[(n + i, i)] = sqrt_ridge;
    }
    SpdFactor::from_tall_factor(&tall)
}

/// Worst entry gap between two matrices, relative to the reference scale.
fn identity_gap(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).amax() / (1.0 + reference.amax())
}

struct EngineContext<'a> {
    graph: &'a NetworkGraph,
    layout: &'a ChannelLayout,
    family: &'a CoupledFamily,
    model: &'a MixtureModel,
    instances: Vec<Box<dyn ProblemInstance>>,
    /// Exact-covariance data of the centralized problems, for cost and
    /// feasibility reporting and the MSE oracles.
    central: ProblemData,
    central_factor: SpdFactor,
    oracles: Vec<DMatrix<f64>>,
    output_dim: usize,
}

impl<'a> EngineContext<'a> {
    fn new(
        graph: &'a NetworkGraph,
        layout: &'a ChannelLayout,
        family: &'a CoupledFamily,
        model: &'a MixtureModel,
    ) -> Result<Self> {
        let k = graph.num_nodes();
        if layout.num_nodes() != k || family.num_nodes() != k {
            return Err(DansfError::DimensionMismatch(format!(
                "graph has {k} nodes, layout {} and family {}",
                layout.num_nodes(),
                family.num_nodes()
            )));
        }
        if model.num_channels() != layout.total() {
            return Err(DansfError::DimensionMismatch(format!(
                "model has {} channels, layout totals {}",
                model.num_channels(),
                layout.total()
            )));
        }
        let cov = exact_covariance(model);
        let central_factor = SpdFactor::from_spd(cov.matrix())?;
        let central = ProblemData::from_factor(central_factor.clone(), family.shared().clone())?;
        let instances: Vec<_> = (1..=k).map(|node| family.instance(node)).collect();
        let oracles = instances
            .iter()
            .map(|p| p.solve(&central, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph,
            layout,
            family,
            model,
            instances,
            central,
            central_factor,
            oracles,
            output_dim: family.output_dim(),
        })
    }
}

/// Execute a full run: up to `max_iterations` rounds of the fusion
/// iteration, recording per-node cost, feasibility residual, and relative
/// MSE against the centralized oracles after every iteration.
pub fn run(
    config: &RunConfig,
    graph: &NetworkGraph,
    layout: &ChannelLayout,
    family: &CoupledFamily,
    model: &MixtureModel,
) -> Result<RunOutcome> {
    let ctx = EngineContext::new(graph, layout, family, model)?;
    let k = graph.num_nodes();
    let q_dim = ctx.output_dim;

    let mut compressors = init_compressors(layout, q_dim, config.seed)?;
    let mut states: Vec<NodeState> = (1..=k)
        .map(|node| NodeState {
            node,
            compressor: compressors[node - 1].clone(),
            latest_correction: None,
            latest_output: None,
        })
        .collect();

    let mut ledger = LinkCostLedger::new();
    let mut records = Vec::with_capacity(config.max_iterations);
    let mut debug = config.debug_checks.then(DebugStats::default);
    let mut final_filters: Vec<DMatrix<f64>> = (0..k)
        .map(|_| DMatrix::zeros(layout.total(), q_dim))
        .collect();
    let mut below_threshold_streak = 0usize;

    for iteration in 0..config.max_iterations {
        let q_node = select_updating_node(iteration, k);
        let tree = prune_to_tree(graph, q_node)?;
        let schedule = gather_schedule(&tree);
        let neighbor_order = tree.root_neighbors();
        let scalars_before = ledger.total_scalars();

        let step = iterate_once(
            &ctx,
            config,
            iteration,
            q_node,
            &tree,
            &schedule,
            &neighbor_order,
            &compressors,
            &states,
            &mut ledger,
            debug.as_mut(),
        )?;

        // State updates: q's block from the local solve, everyone else
        // chains the branch G onto the current compressor.
        compressors[q_node - 1] = step.solution.compressor_block();
        for node in 1..=k {
            if node == q_node {
                states[node - 1].latest_correction = None;
                continue;
            }
            let g = step.solution.g_block(tree.branch_of(node)?)?;
            compressors[node - 1] = &compressors[node - 1] * g;
            states[node - 1].latest_correction = Some(step.corrections[node - 1].clone());
        }
        for node in 1..=k {
            states[node - 1].compressor = compressors[node - 1].clone();
            states[node - 1].latest_output = step.outputs[node - 1].clone();
        }

        // Measurements against the exact statistics.
        let mut per_node = Vec::with_capacity(k);
        for node in 1..=k {
            let x = &step.filters[node - 1];
            let cost = ctx.instances[node - 1].objective(x, &ctx.central)?;
            let residuals = ctx.instances[node - 1].constraint_residuals(x, &ctx.central)?;
            per_node.push(NodeRecord {
                cost,
                feasibility_residual: max_constraint_violation(&residuals),
                relative_mse: metrics::relative_mse(x, &ctx.oracles[node - 1])?,
            });
        }
        final_filters.clone_from_slice(&step.filters);

        let record = IterationRecord {
            iteration,
            updating_node: q_node,
            per_node,
            scalars_upstream: step.scalars_after_gather - scalars_before,
            scalars_downstream: ledger.total_scalars() - step.scalars_after_gather,
            singular_corrections: step.singular_corrections,
        };
        let max_mse = record.max_mse();
        records.push(record);

        if let Some(stop) = config.early_stop {
            if max_mse < stop.threshold {
                below_threshold_streak += 1;
                if below_threshold_streak >= stop.window {
                    break;
                }
            } else {
                below_threshold_streak = 0;
            }
        }
    }

    Ok(RunOutcome {
        records,
        ledger,
        final_filters,
        oracles: ctx.oracles,
        debug,
    })
}

struct IterationStep {
    solution: LocalSolution,
    /// `F_kq` per node (identity at the updating node).
    corrections: Vec<DMatrix<f64>>,
    /// Full filter estimates `X_k` after this iteration.
    filters: Vec<DMatrix<f64>>,
    /// Filter output blocks `z_k` (sampled mode only).
    outputs: Vec<Option<DMatrix<f64>>>,
    scalars_after_gather: u64,
    singular_corrections: usize,
}

/// Gathered statistics of one local problem, plus the sample matrices needed
/// later in the iteration (sampled mode only).
struct Gathered {
    factor: SpdFactor,
    shared_tilde: DMatrix<f64>,
    batch: Option<DMatrix<f64>>,
    local_signal: Option<DMatrix<f64>>,
    lift: Option<LiftMap>,
}

#[allow(clippy::too_many_arguments)]
fn iterate_once(
    ctx: &EngineContext,
    config: &RunConfig,
    iteration: usize,
    q_node: usize,
    tree: &TreeTopology,
    schedule: &GatherSchedule,
    neighbor_order: &[usize],
    compressors: &[DMatrix<f64>],
    states: &[NodeState],
    ledger: &mut LinkCostLedger,
    mut debug: Option<&mut DebugStats>,
) -> Result<IterationStep> {
    let k = ctx.graph.num_nodes();
    let q_dim = ctx.output_dim;
    let det_shared = ctx.family.has_deterministic_shared();

    let gathered = match config.mode {
        StatisticsMode::Sampled { n_samples } => {
            let batch_seed = seeds::derive(config.seed, TAG_BATCH, iteration as u64);
            let (batch, sources) =
                sample_batch_with_sources(ctx.model, ctx.layout, n_samples, batch_seed)?;
            let mut blocks = BTreeMap::new();
            for node in 1..=k {
                if node == q_node {
                    continue;
                }
                let y_k = batch.node_block(node)?;
                let b_k = det_shared
                    .then(|| node_rows(ctx.family.shared(), node, ctx.layout))
                    .transpose()?;
                blocks.insert(node, compress(&compressors[node - 1], &y_k, b_k.as_ref())?);
            }
            let aggregates = fuse_forward(tree, schedule, &blocks, ledger)?;
            let own_signal = batch.node_block(q_node)?;
            let own_shared = det_shared
                .then(|| node_rows(ctx.family.shared(), q_node, ctx.layout))
                .transpose()?;
            let local =
                assemble_local(&own_signal, own_shared.as_ref(), &aggregates, neighbor_order)?;
            let factor = sampled_factor(local.signal())?;
            // For MMSE the updating node correlates the gathered stream with
            // its locally observed target samples; the node coupling is
            // applied by the problem instance itself.
            let shared_tilde = match local.shared() {
                Some(s) => s.clone(),
                None => local.signal() * sources.transpose() / n_samples as f64,
            };
            let lift = config
                .debug_checks
                .then(|| LiftMap::build(tree, ctx.layout, compressors))
                .transpose()?;
            if let (Some(dbg), Some(lm)) = (debug.as_deref_mut(), lift.as_ref()) {
                let gap = identity_gap(local.signal(), &lm.compress_data(batch.data()));
                dbg.gather_gap = dbg.gather_gap.max(gap);
                if let Some(stacked) = local.shared() {
                    let gap = identity_gap(stacked, &lm.compress_data(ctx.family.shared()));
                    dbg.shared_gap = dbg.shared_gap.max(gap);
                }
            }
            Gathered {
                factor,
                shared_tilde,
                batch: Some(batch.data().clone()),
                local_signal: Some(local.signal().clone()),
                lift,
            }
        }
        StatisticsMode::Exact => {
            // Covariance factor S·C of the gathered data by QR; the shared
            // matrix still rides the tree as real messages when it exists.
            let lift = LiftMap::build(tree, ctx.layout, compressors)?;
            let factor =
                SpdFactor::from_tall_factor(&(ctx.central_factor.factor() * lift.matrix()))?;
            let shared_tilde = if det_shared {
                let mut blocks = BTreeMap::new();
                for node in 1..=k {
                    if node == q_node {
                        continue;
                    }
                    let b_k = node_rows(ctx.family.shared(), node, ctx.layout)?;
                    let no_samples = DMatrix::zeros(b_k.nrows(), 0);
                    blocks.insert(
                        node,
                        compress(&compressors[node - 1], &no_samples, Some(&b_k))?,
                    );
                }
                let aggregates = fuse_forward(tree, schedule, &blocks, ledger)?;
                let own_shared = node_rows(ctx.family.shared(), q_node, ctx.layout)?;
                let no_samples = DMatrix::zeros(own_shared.nrows(), 0);
                let local =
                    assemble_local(&no_samples, Some(&own_shared), &aggregates, neighbor_order)?;
                let stacked = local.shared().expect("assembled with shared payload").clone();
                if let Some(dbg) = debug.as_deref_mut() {
                    let gap = identity_gap(&stacked, &lift.compress_data(ctx.family.shared()));
                    dbg.shared_gap = dbg.shared_gap.max(gap);
                }
                stacked
            } else {
                lift.compress_data(ctx.family.shared())
            };
            Gathered {
                factor,
                shared_tilde,
                batch: None,
                local_signal: None,
                lift: Some(lift),
            }
        }
    };
    let scalars_after_gather = ledger.total_scalars();

    // Local solve at the updating node, tie-breaking toward the previous
    // iterate.
    let local_data =
        ProblemData::from_factor(gathered.factor.clone(), gathered.shared_tilde.clone())?;
    let tie_break = build_tie_break_ref(&compressors[q_node - 1], neighbor_order.len());
    let x_tilde = ctx.instances[q_node - 1]
        .solve(&local_data, Some(&tie_break))
        .map_err(|e| DansfError::IterationAbort {
            iteration,
            node: q_node,
            reason: format!("local solve failed: {e}"),
        })?;
    let solution = LocalSolution::new(
        x_tilde,
        ctx.layout.node_channels(q_node),
        neighbor_order.to_vec(),
    )?;

    // Blockwise lift of the updating node's new filter.
    let mut x_q_full = DMatrix::zeros(ctx.layout.total(), q_dim);
    let q_range = ctx.layout.node_range(q_node)?;
    x_q_full
        .rows_mut(q_range.start, q_range.len())
        .copy_from(&solution.compressor_block());
    for node in 1..=k {
        if node == q_node {
            continue;
        }
        let g = solution.g_block(tree.branch_of(node)?)?;
        let range = ctx.layout.node_range(node)?;
        x_q_full
            .rows_mut(range.start, range.len())
            .copy_from(&(&compressors[node - 1] * g));
    }
    if let (Some(dbg), Some(lm)) = (debug.as_deref_mut(), gathered.lift.as_ref()) {
        let gap = identity_gap(&x_q_full, &lm.lift(solution.matrix()));
        dbg.lift_gap = dbg.lift_gap.max(gap);
    }

    // Dissemination: the output stream, the compressed shared matrix, and
    // the branch G-block travel every tree edge away from the root.
    let z_q = gathered
        .local_signal
        .as_ref()
        .map(|sig| solution.matrix().transpose() * sig);
    let z_shared = solution.matrix().transpose() * &gathered.shared_tilde;
    let sample_scalars = z_q.as_ref().map_or(0, |z| z.nrows() * z.ncols());
    let payload_down = (sample_scalars
        + if det_shared { z_shared.len() } else { 0 }
        + q_dim * q_dim) as u64;
    for node in 1..=k {
        if node == q_node {
            continue;
        }
        let parent = tree.parent(node).expect("non-root node");
        ledger.record_transfer(tree, parent, node, payload_down)?;
    }

    // Covariance factor of the z-stream for the Q×Q correction solves.
    let z_factor = match config.mode {
        StatisticsMode::Exact => {
            SpdFactor::from_tall_factor(&(gathered.factor.factor() * solution.matrix()))?
        }
        StatisticsMode::Sampled { .. } => sampled_factor(z_q.as_ref().expect("sampled mode"))?,
    };
    let z_data = ProblemData::from_factor(z_factor, z_shared)?;

    let identity = DMatrix::identity(q_dim, q_dim);
    let mut corrections = vec![identity.clone(); k];
    let mut filters: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); k];
    let mut outputs: Vec<Option<DMatrix<f64>>> = vec![None; k];
    let mut singular = 0usize;
    filters[q_node - 1] = x_q_full.clone();
    outputs[q_node - 1] = z_q.clone();

    for node in 1..=k {
        if node == q_node {
            continue;
        }
        let tie = states[node - 1]
            .latest_correction
            .clone()
            .unwrap_or_else(|| identity.clone());
        let f = ctx.instances[node - 1]
            .solve(&z_data, Some(&tie))
            .map_err(|e| DansfError::IterationAbort {
                iteration,
                node,
                reason: format!("node-specific solve failed: {e}"),
            })?;
        if linalg::numerical_rank(&f, 1e-12) < q_dim {
            singular += 1;
        }
        filters[node - 1] = &x_q_full * &f;
        outputs[node - 1] = z_q.as_ref().map(|z| f.transpose() * z);
        corrections[node - 1] = f;
    }

    if let (Some(dbg), Some(batch)) = (debug.as_deref_mut(), gathered.batch.as_ref()) {
        for node in 1..=k {
            if let Some(z_k) = &outputs[node - 1] {
                let direct = filters[node - 1].transpose() * batch;
                dbg.output_gap = dbg.output_gap.max(identity_gap(z_k, &direct));
            }
        }
    }

    Ok(IterationStep {
        solution,
        corrections,
        filters,
        outputs,
        scalars_after_gather,
        singular_corrections: singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_topology, TopologyKind};
    use crate::problems::{make_coupled_family, ProblemKind};
    use approx::assert_relative_eq;

    #[test]
    fn round_robin_node_selection() {
        assert_eq!(select_updating_node(0, 10), 1);
        assert_eq!(select_updating_node(9, 10), 10);
        assert_eq!(select_updating_node(10, 10), 1);
    }

    #[test]
    fn compress_basic_cases() {
        let y = DMatrix::from_column_slice(2, 1, &[2.0, 3.0]);
        let id = DMatrix::identity(2, 2);
        assert_eq!(compress(&id, &y, None).unwrap().signal, y);

        let zero = DMatrix::zeros(2, 2);
        assert_eq!(
            compress(&zero, &y, None).unwrap().signal,
            DMatrix::zeros(2, 1)
        );

        let ones = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(
            compress(&ones, &y, None).unwrap().signal,
            DMatrix::from_element(1, 1, 5.0)
        );

        let tall = DMatrix::zeros(3, 1);
        assert!(compress(&id, &tall, None).is_err());
    }

    fn const_block(q: usize, n: usize, v: f64) -> CompressedBlock {
        CompressedBlock {
            signal: DMatrix::from_element(q, n, v),
            shared: Some(DMatrix::from_element(q, 2, 10.0 * v)),
        }
    }

    #[test]
    fn fuse_line_sums_branch() {
        let g = generate_topology(TopologyKind::Line, 3, 0).unwrap();
        let tree = prune_to_tree(&g, 1).unwrap();
        let sched = gather_schedule(&tree);
        let blocks = BTreeMap::from([(2, const_block(2, 3, 1.0)), (3, const_block(2, 3, 4.0))]);
        let mut ledger = LinkCostLedger::new();
        let agg = fuse_forward(&tree, &sched, &blocks, &mut ledger).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[&2].signal, DMatrix::from_element(2, 3, 5.0));
        assert_eq!(
            agg[&2].shared.as_ref().unwrap(),
            &DMatrix::from_element(2, 2, 50.0)
        );
        // each directed edge carried Q·N + Q·L = 6 + 4 scalars
        assert_eq!(ledger.link(3, 2).scalars_sent, 10);
        assert_eq!(ledger.link(2, 1).scalars_sent, 10);
    }

    #[test]
    fn fuse_star_passes_singletons() {
        let g = generate_topology(TopologyKind::FullyConnected, 4, 0).unwrap();
        let tree = prune_to_tree(&g, 2).unwrap();
        let sched = gather_schedule(&tree);
        let blocks = BTreeMap::from([
            (1, const_block(1, 2, 1.0)),
            (3, const_block(1, 2, 3.0)),
            (4, const_block(1, 2, 4.0)),
        ]);
        let mut ledger = LinkCostLedger::new();
        let agg = fuse_forward(&tree, &sched, &blocks, &mut ledger).unwrap();
        for n in [1usize, 3, 4] {
            assert_eq!(agg[&n].signal, blocks[&n].signal);
        }
    }

    #[test]
    fn fuse_matches_brute_force_branch_sums() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = generate_topology(TopologyKind::ErdosRenyi { p: 0.45 }, 7, 5).unwrap();
        let tree = prune_to_tree(&g, 3).unwrap();
        let sched = gather_schedule(&tree);
        let blocks: BTreeMap<usize, CompressedBlock> = (1..=7)
            .filter(|&k| k != 3)
            .map(|k| {
                (
                    k,
                    CompressedBlock {
                        signal: DMatrix::from_fn(2, 4, |_, _| rng.gen::<f64>()),
                        shared: None,
                    },
                )
            })
            .collect();
        let mut ledger = LinkCostLedger::new();
        let agg = fuse_forward(&tree, &sched, &blocks, &mut ledger).unwrap();
        for n in tree.root_neighbors() {
            let mut expect = DMatrix::zeros(2, 4);
            for k in tree.branch_members(n) {
                expect += &blocks[&k].signal;
            }
            assert_relative_eq!(agg[&n].signal, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn assemble_local_dimensions() {
        let band = |n: usize| {
            (
                n,
                CompressedBlock {
                    signal: DMatrix::zeros(3, 5),
                    shared: None,
                },
            )
        };
        // fully connected K=10, M_q=7, Q=3: M̃ = 7 + 9·3 = 34
        let own = DMatrix::zeros(7, 5);
        let aggs: BTreeMap<usize, CompressedBlock> = (2..=10).map(band).collect();
        let order: Vec<usize> = (2..=10).collect();
        assert_eq!(assemble_local(&own, None, &aggs, &order).unwrap().m_tilde(), 34);

        // line interior node: |N_q| = 2 → 7 + 6 = 13
        let aggs2: BTreeMap<usize, CompressedBlock> = [4usize, 6].into_iter().map(band).collect();
        assert_eq!(assemble_local(&own, None, &aggs2, &[4, 6]).unwrap().m_tilde(), 13);

        // leaf updating node: M_q + Q
        let aggs3: BTreeMap<usize, CompressedBlock> = [2usize].into_iter().map(band).collect();
        assert_eq!(assemble_local(&own, None, &aggs3, &[2]).unwrap().m_tilde(), 10);

        // missing aggregate is an error
        assert!(assemble_local(&own, None, &aggs3, &[2, 6]).is_err());
    }

    #[test]
    fn tie_break_ref_construction() {
        let xqq = DMatrix::from_element(4, 2, 0.3);
        assert_eq!(build_tie_break_ref(&xqq, 0), xqq);

        let x = DMatrix::from_element(1, 1, 0.5);
        assert_eq!(
            build_tie_break_ref(&x, 2),
            DMatrix::from_column_slice(3, 1, &[0.5, 1.0, 1.0])
        );
    }

    #[test]
    fn tie_break_lift_identity() {
        // X̃_qᵀ·ỹ_q equals Xᵀ·y when X stacks the current compressors.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = generate_topology(TopologyKind::ErdosRenyi { p: 0.5 }, 5, 2).unwrap();
        let layout = ChannelLayout::uniform(5, 3).unwrap();
        let q_dim = 2;
        let comps: Vec<DMatrix<f64>> = (0..5)
            .map(|_| DMatrix::from_fn(3, q_dim, |_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let tree = prune_to_tree(&g, 4).unwrap();
        let lift = LiftMap::build(&tree, &layout, &comps).unwrap();
        let tie = build_tie_break_ref(&comps[3], tree.root_neighbors().len());
        let y = DMatrix::from_fn(15, 6, |_, _| rng.gen::<f64>() - 0.5);
        let y_tilde = lift.compress_data(&y);
        let via_local = tie.transpose() * y_tilde;
        let mut w = DMatrix::zeros(15, q_dim);
        for k in 1..=5usize {
            let r = layout.node_range(k).unwrap();
            w.rows_mut(r.start, r.len()).copy_from(&comps[k - 1]);
        }
        let direct = w.transpose() * &y;
        assert_relative_eq!(via_local, direct, epsilon = 1e-12);
        // and the tie-break reference lifts to the compressor stack
        assert_relative_eq!(lift.lift(&tie), w, epsilon = 1e-14);
    }

    fn small_setup(
        kind: ProblemKind,
        k: usize,
        seed: u64,
    ) -> (NetworkGraph, ChannelLayout, CoupledFamily, MixtureModel) {
        let layout = ChannelLayout::uniform(k, 4).unwrap();
        let model = MixtureModel::random(layout.total(), 2, 0.2, 0.5, 0.1, seed).unwrap();
        let family = make_coupled_family(kind, k, 2, &model, seed + 1).unwrap();
        let graph = generate_topology(TopologyKind::FullyConnected, k, seed).unwrap();
        (graph, layout, family, model)
    }

    #[test]
    fn zero_iterations_yields_empty_records() {
        let (graph, layout, family, model) = small_setup(ProblemKind::TraceQclp, 3, 1);
        let out = run(&RunConfig::exact(0, 7), &graph, &layout, &family, &model).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.ledger.total_scalars(), 0);
    }

    #[test]
    fn single_node_network_solves_centrally_in_one_iteration() {
        let layout = ChannelLayout::uniform(1, 5).unwrap();
        let model = MixtureModel::random(5, 2, 0.2, 0.5, 0.1, 3).unwrap();
        let family = make_coupled_family(ProblemKind::TraceQclp, 1, 2, &model, 4).unwrap();
        let graph = NetworkGraph::new(1, []).unwrap();
        let out = run(&RunConfig::exact(1, 5), &graph, &layout, &family, &model).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(
            out.records[0].max_mse() <= 1e-10,
            "mse {}",
            out.records[0].max_mse()
        );
    }

    #[test]
    fn exact_run_converges_all_kinds() {
        for kind in [ProblemKind::TraceQclp, ProblemKind::Mmse, ProblemKind::Lcmv] {
            let (graph, layout, family, model) = small_setup(kind, 4, 11);
            let out = run(&RunConfig::exact(60, 2), &graph, &layout, &family, &model).unwrap();
            let last = out.records.last().unwrap();
            assert!(
                last.max_mse() < 1e-12,
                "{}: final mse {}",
                family.kind().label(),
                last.max_mse()
            );
            // costs non-increasing, iterates feasible
            for w in out.records.windows(2) {
                for node in 0..4 {
                    let a = w[0].per_node[node].cost;
                    let b = w[1].per_node[node].cost;
                    assert!(b <= a + 1e-9 * (1.0 + a.abs()), "cost uptick {a} -> {b}");
                }
            }
            for r in &out.records {
                for nr in &r.per_node {
                    assert!(nr.feasibility_residual < 1e-8);
                }
            }
        }
    }

    #[test]
    fn identity_couplings_share_one_solution() {
        let layout = ChannelLayout::uniform(3, 4).unwrap();
        let model = MixtureModel::random(12, 2, 0.2, 0.5, 0.1, 21).unwrap();
        let shared = DMatrix::from_fn(12, 2, |i, j| ((i * 2 + j) as f64 * 0.7).sin());
        let family = CoupledFamily::from_parts(
            ProblemKind::TraceQclp,
            shared,
            vec![DMatrix::identity(2, 2); 3],
            None,
            model.var_source(),
        )
        .unwrap();
        let graph = generate_topology(TopologyKind::FullyConnected, 3, 0).unwrap();
        let out = run(&RunConfig::exact(40, 9), &graph, &layout, &family, &model).unwrap();
        let final_mse = out.records.last().unwrap().max_mse();
        assert!(final_mse < 1e-14, "final mse {final_mse}");
        assert_relative_eq!(out.oracles[0], out.oracles[2], epsilon = 1e-12);
        assert_relative_eq!(out.final_filters[0], out.final_filters[1], epsilon = 1e-9);
    }

    #[test]
    fn mmse_correction_recovers_coupling_exactly() {
        // with identity coupling at the updating node and the z-stream
        // already optimal, the correction at node 2 equals its coupling
        let layout = ChannelLayout::uniform(2, 5).unwrap();
        let model = MixtureModel::random(10, 2, 0.2, 0.5, 0.1, 31).unwrap();
        let couplings = vec![
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 1.2]),
        ];
        let family = CoupledFamily::from_parts(
            ProblemKind::Mmse,
            model.cross_covariance(),
            couplings.clone(),
            None,
            model.var_source(),
        )
        .unwrap();
        let graph = generate_topology(TopologyKind::FullyConnected, 2, 0).unwrap();
        let out = run(&RunConfig::exact(41, 3), &graph, &layout, &family, &model).unwrap();
        assert!(out.records.last().unwrap().max_mse() < 1e-20);
        let x1 = &out.final_filters[0];
        let x2 = &out.final_filters[1];
        assert_relative_eq!(x1 * &couplings[1], x2.clone(), epsilon = 1e-9);
    }

    #[test]
    fn sampled_run_reduces_mse_and_keeps_identities() {
        let (graph, layout, family, model) = small_setup(ProblemKind::TraceQclp, 4, 41);
        let cfg = RunConfig::sampled(4000, 24, 6).with_debug_checks();
        let out = run(&cfg, &graph, &layout, &family, &model).unwrap();
        let first = out.records.first().unwrap().max_mse();
        let last = out.records.last().unwrap().max_mse();
        assert!(last < 1e-2, "sampled run should get close, got {last}");
        assert!(last < first);
        let dbg = out.debug.unwrap();
        assert!(dbg.gather_gap < 1e-12, "gather gap {}", dbg.gather_gap);
        assert!(dbg.shared_gap < 1e-12, "shared gap {}", dbg.shared_gap);
        assert!(dbg.lift_gap < 1e-12, "lift gap {}", dbg.lift_gap);
        assert!(dbg.output_gap < 1e-12, "output gap {}", dbg.output_gap);
    }

    #[test]
    fn early_stop_truncates_run() {
        let (graph, layout, family, model) = small_setup(ProblemKind::TraceQclp, 3, 51);
        let cfg = RunConfig::exact(200, 2).with_early_stop(1e-10, 6);
        let out = run(&cfg, &graph, &layout, &family, &model).unwrap();
        assert!(out.records.len() < 200);
        assert!(out.records.last().unwrap().max_mse() < 1e-10);
    }

    #[test]
    fn ledger_matches_closed_form_per_iteration() {
        // trace-QCLP: gather (K−1)(QN + QL), dissemination (K−1)(QN + QL + Q²)
        let (graph, layout, family, model) = small_setup(ProblemKind::TraceQclp, 4, 61);
        let n = 50;
        let out = run(&RunConfig::sampled(n, 8, 3), &graph, &layout, &family, &model).unwrap();
        let (q, l, nn) = (2u64, 2u64, n as u64);
        for r in &out.records {
            assert_eq!(r.scalars_upstream, 3 * (q * nn + q * l));
            assert_eq!(r.scalars_downstream, 3 * (q * nn + q * l + q * q));
        }
        // exact mode moves no sample streams
        let out = run(&RunConfig::exact(8, 3), &graph, &layout, &family, &model).unwrap();
        for r in &out.records {
            assert_eq!(r.scalars_upstream, 3 * (q * l));
            assert_eq!(r.scalars_downstream, 3 * (q * l + q * q));
        }
    }

    #[test]
    fn mmse_moves_no_shared_payload() {
        let (graph, layout, family, model) = small_setup(ProblemKind::Mmse, 4, 71);
        let n = 40;
        let out = run(&RunConfig::sampled(n, 8, 3), &graph, &layout, &family, &model).unwrap();
        let (q, nn) = (2u64, n as u64);
        for r in &out.records {
            assert_eq!(r.scalars_upstream, 3 * (q * nn));
            assert_eq!(r.scalars_downstream, 3 * (q * nn + q * q));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (graph, layout, family, model) = small_setup(ProblemKind::Lcmv, 4, 81);
        let a = run(&RunConfig::exact(12, 4), &graph, &layout, &family, &model).unwrap();
        let b = run(&RunConfig::exact(12, 4), &graph, &layout, &family, &model).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            for (na, nb) in ra.per_node.iter().zip(&rb.per_node) {
                assert_eq!(na.cost.to_bits(), nb.cost.to_bits());
                assert_eq!(na.relative_mse.to_bits(), nb.relative_mse.to_bits());
            }
        }
    }
}

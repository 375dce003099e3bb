//! Node-specific spatial-filtering problems: a common solver interface, the
//! three shipped instances (trace-QCLP, MMSE, LCMV) with closed-form
//! solutions, and generators for coupled problem families whose per-node
//! optima are related by invertible `Q×Q` transforms.
//!
//! A single instance must solve its problem at any data dimension — the full
//! `M`-channel network problem, the compressed `M̃`-channel problem at the
//! updating node, and the `Q×Q` correction problem at every other node — so
//! the interface separates a node's own parameters (held by the instance)
//! from the compressible data (covariance factor plus the shared
//! deterministic matrix) passed per solve.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DansfError, Result};
use crate::linalg::{self, SpdFactor};
use crate::signals::{CovarianceEstimate, MixtureModel};

/// Feasibility tolerance used by solver self-checks and tests.
pub const TOL_FEAS: f64 = 1e-8;

/// The problem family of a coupled experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    TraceQclp,
    Mmse,
    Lcmv,
}

impl ProblemKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProblemKind::TraceQclp => "trace_qclp",
            ProblemKind::Mmse => "mmse",
            ProblemKind::Lcmv => "lcmv",
        }
    }
}

/// The compressible data of one solve: a covariance factor for the signal
/// statistics and the shared deterministic matrix riding along with it
/// (`B` for trace-QCLP/LCMV, the latent cross-covariance for MMSE).
#[derive(Debug, Clone)]
pub struct ProblemData {
    factor: SpdFactor,
    shared: DMatrix<f64>,
}

impl ProblemData {
    /// Build from an explicit covariance estimate; the estimate's default
    /// ridge is applied before factoring.
    pub fn from_estimate(cov: &CovarianceEstimate, shared: DMatrix<f64>) -> Result<Self> {
        let ridge = cov.default_ridge();
        let regularized = if ridge > 0.0 { cov.with_ridge(ridge) } else { cov.clone() };
        Self::from_factor(SpdFactor::from_spd(regularized.matrix())?, shared)
    }

    /// Build from a ready covariance factor (`R = SᵀS`).
    pub fn from_factor(factor: SpdFactor, shared: DMatrix<f64>) -> Result<Self> {
        if shared.nrows() != factor.dim() {
            return Err(DansfError::DimensionMismatch(format!(
                "shared matrix has {} rows, covariance dimension is {}",
                shared.nrows(),
                factor.dim()
            )));
        }
        Ok(Self { factor, shared })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    pub fn shared(&self) -> &DMatrix<f64> {
        &self.shared
    }
}

/// A node's optimization problem, solvable at any compression level.
pub trait ProblemInstance: Send + Sync {
    /// Cost value at a filter `x`.
    fn objective(&self, x: &DMatrix<f64>, data: &ProblemData) -> Result<f64>;

    /// Signed constraint residuals `(inequality, equality)`; an inequality
    /// residual above zero or a nonzero equality residual is a violation.
    fn constraint_residuals(
        &self,
        x: &DMatrix<f64>,
        data: &ProblemData,
    ) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Solve the instance on the given data. When the solution set is not a
    /// singleton, return the solution closest to `tie_break_ref` in
    /// Frobenius norm.
    fn solve(&self, data: &ProblemData, tie_break_ref: Option<&DMatrix<f64>>)
        -> Result<DMatrix<f64>>;

    fn is_solution_unique(&self, data: &ProblemData) -> bool;

    /// Number of output channels `Q` of the filters this instance produces.
    fn output_dim(&self) -> usize;
}

/// Worst violation over all constraints: positive part of inequalities,
/// absolute value of equalities.
pub fn max_constraint_violation(residuals: &(Vec<f64>, Vec<f64>)) -> f64 {
    let ineq = residuals.0.iter().fold(0.0f64, |a, &r| a.max(r.max(0.0)));
    let eq = residuals.1.iter().fold(0.0f64, |a, &r| a.max(r.abs()));
    ineq.max(eq)
}

/// `minimize trace(Xᵀ·B·D_k)` subject to `trace(Xᵀ·R·X) ≤ 1`.
///
/// Unique closed-form solution `X* = −β_k·R⁻¹·B·D_k` with
/// `β_k = trace(D_kᵀBᵀR⁻¹BD_k)^{-1/2}`, computed through the whitened data
/// so the constraint is active to machine precision.
#[derive(Debug, Clone)]
pub struct TraceQclpProblem {
    coupling: DMatrix<f64>,
}

impl TraceQclpProblem {
    pub fn new(coupling: DMatrix<f64>) -> Self {
        Self { coupling }
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    fn effective_b(&self, data: &ProblemData) -> Result<DMatrix<f64>> {
        if data.shared().ncols() != self.coupling.nrows() {
            return Err(DansfError::DimensionMismatch(format!(
                "shared matrix has {} columns, coupling expects {}",
                data.shared().ncols(),
                self.coupling.nrows()
            )));
        }
        Ok(data.shared() * &self.coupling)
    }
}

impl ProblemInstance for TraceQclpProblem {
    fn objective(&self, x: &DMatrix<f64>, data: &ProblemData) -> Result<f64> {
        Ok((x.transpose() * self.effective_b(data)?).trace())
    }

    fn constraint_residuals(
        &self,
        x: &DMatrix<f64>,
        data: &ProblemData,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((vec![data.factor().quad_form(x) - 1.0], vec![]))
    }

    fn solve(
        &self,
        data: &ProblemData,
        _tie_break_ref: Option<&DMatrix<f64>>,
    ) -> Result<DMatrix<f64>> {
        let b_eff = self.effective_b(data)?;
        let whitened = data.factor().whiten(&b_eff)?;
        let norm = whitened.norm();
        if norm == 0.0 || b_eff.norm() == 0.0 {
            return Err(DansfError::DegenerateProblem(
                "trace-QCLP requires a nonzero objective matrix".into(),
            ));
        }
        Ok(-data.factor().unwhiten(&(whitened / norm))?)
    }

    fn is_solution_unique(&self, data: &ProblemData) -> bool {
        self.effective_b(data).map(|b| b.norm() > 0.0).unwrap_or(false)
    }

    fn output_dim(&self) -> usize {
        self.coupling.ncols()
    }
}

/// `minimize E[‖d_k(t) − Xᵀy(t)‖²]`, unconstrained.
///
/// With `d_k = D_kᵀ·d`, the cross-covariance is `R_yd_k = R_yd·D_k` and the
/// unique solution is `X* = R⁻¹·R_yd·D_k`. The shared data matrix carries
/// `R_yd` (the latent cross-covariance), so it compresses exactly like a
/// deterministic matrix.
#[derive(Debug, Clone)]
pub struct MmseProblem {
    coupling: DMatrix<f64>,
    var_source: f64,
}

impl MmseProblem {
    pub fn new(coupling: DMatrix<f64>, var_source: f64) -> Self {
        Self {
            coupling,
            var_source,
        }
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    fn cross_covariance(&self, data: &ProblemData) -> Result<DMatrix<f64>> {
        if data.shared().ncols() != self.coupling.nrows() {
            return Err(DansfError::DimensionMismatch(format!(
                "shared matrix has {} columns, coupling expects {}",
                data.shared().ncols(),
                self.coupling.nrows()
            )));
        }
        Ok(data.shared() * &self.coupling)
    }
}

impl ProblemInstance for MmseProblem {
    fn objective(&self, x: &DMatrix<f64>, data: &ProblemData) -> Result<f64> {
        // E‖d_k − Xᵀy‖² = trace(R_dd) − 2·trace(Xᵀ R_yd_k) + trace(Xᵀ R X)
        let ryd = self.cross_covariance(data)?;
        let target_power = self.var_source * self.coupling.norm_squared();
        Ok(target_power - 2.0 * (x.transpose() * ryd).trace() + data.factor().quad_form(x))
    }

    fn constraint_residuals(
        &self,
        _x: &DMatrix<f64>,
        _data: &ProblemData,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((vec![], vec![]))
    }

    fn solve(
        &self,
        data: &ProblemData,
        _tie_break_ref: Option<&DMatrix<f64>>,
    ) -> Result<DMatrix<f64>> {
        data.factor().solve(&self.cross_covariance(data)?)
    }

    fn is_solution_unique(&self, _data: &ProblemData) -> bool {
        true
    }

    fn output_dim(&self) -> usize {
        self.coupling.ncols()
    }
}

/// `minimize E[‖Xᵀy(t)‖²]` subject to `XᵀB = H_k`.
///
/// Unique solution `X* = R⁻¹B(BᵀR⁻¹B)⁻¹H_kᵀ` when `B` has full column rank,
/// computed through a QR of the whitened constraint matrix.
#[derive(Debug, Clone)]
pub struct LcmvProblem {
    response: DMatrix<f64>,
}

impl LcmvProblem {
    pub fn new(response: DMatrix<f64>) -> Self {
        Self { response }
    }

    pub fn response(&self) -> &DMatrix<f64> {
        &self.response
    }
}

impl ProblemInstance for LcmvProblem {
    fn objective(&self, x: &DMatrix<f64>, data: &ProblemData) -> Result<f64> {
        Ok(data.factor().quad_form(x))
    }

    fn constraint_residuals(
        &self,
        x: &DMatrix<f64>,
        data: &ProblemData,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let gap = x.transpose() * data.shared() - &self.response;
        Ok((vec![], gap.iter().copied().collect()))
    }

    fn solve(
        &self,
        data: &ProblemData,
        _tie_break_ref: Option<&DMatrix<f64>>,
    ) -> Result<DMatrix<f64>> {
        let b = data.shared();
        if self.response.ncols() != b.ncols() {
            return Err(DansfError::DimensionMismatch(format!(
                "response has {} columns, constraint matrix has {}",
                self.response.ncols(),
                b.ncols()
            )));
        }
        let whitened = data.factor().whiten(b)?;
        if linalg::numerical_rank(&whitened, 1e-10) < b.ncols() {
            return Err(DansfError::RankDeficientConstraint);
        }
        // X = S⁻¹·W·(WᵀW)⁻¹·Hᵀ with W = S⁻ᵀB and WᵀW = S_wᵀS_w from a QR.
        let gram = SpdFactor::from_tall_factor(&whitened)?;
        let rhs = gram.solve(&self.response.transpose())?;
        data.factor().unwhiten(&(whitened * rhs))
    }

    fn is_solution_unique(&self, data: &ProblemData) -> bool {
        data.factor()
            .whiten(data.shared())
            .map(|w| linalg::numerical_rank(&w, 1e-10) == data.shared().ncols())
            .unwrap_or(false)
    }

    fn output_dim(&self) -> usize {
        self.response.nrows()
    }
}

/// A family of coupled node-specific problems over one network: shared
/// compressible data plus per-node invertible couplings `D_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledFamily {
    kind: ProblemKind,
    shared: DMatrix<f64>,
    couplings: Vec<DMatrix<f64>>,
    response_base: Option<DMatrix<f64>>,
    var_source: f64,
}

/// Deviation report of [`verify_assumption1`].
#[derive(Debug, Clone)]
pub struct Assumption1Report {
    pub max_relative_deviation: f64,
    pub worst_pair: (usize, usize),
    pub tolerance: f64,
    pub passed: bool,
}

/// Condition-number bound above which a random coupling is redrawn.
const COUPLING_COND_LIMIT: f64 = 1e6;

/// Generate a §4-style coupled family: couplings (and for trace-QCLP/LCMV
/// the shared matrices) have i.i.d. standard-normal entries; couplings are
/// redrawn while their condition number exceeds `1e6`.
///
/// * trace-QCLP: per-node objective matrix `B·D_k`; optima satisfy
///   `X_k* = X_l*·D_{k,l}` with `D_{k,l} = D_l⁻¹D_k·β_k/β_l`.
/// * MMSE: per-node target `d_k = D_kᵀ·d`, so `R_yd_k = R_yd·D_k` and
///   `D_{k,l} = D_l⁻¹D_k`.
/// * LCMV: per-node response `H_k = D_kᵀ·H` and `D_{k,l} = D_l⁻¹D_k`.
pub fn make_coupled_family(
    kind: ProblemKind,
    num_nodes: usize,
    output_dim: usize,
    model: &MixtureModel,
    rng_seed: u64,
) -> Result<CoupledFamily> {
    if num_nodes == 0 || output_dim == 0 {
        return Err(DansfError::InvalidConfig(
            "family needs at least one node and one output channel".into(),
        ));
    }
    let m = model.num_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| std_normal.sample(&mut rng));

    let mut couplings = Vec::with_capacity(num_nodes);
    while couplings.len() < num_nodes {
        let d = draw(output_dim, output_dim);
        if linalg::condition_number(&d) <= COUPLING_COND_LIMIT {
            couplings.push(d);
        }
    }

    let (shared, response_base) = match kind {
        ProblemKind::TraceQclp => (draw(m, output_dim), None),
        ProblemKind::Lcmv => (draw(m, output_dim), Some(draw(output_dim, output_dim))),
        ProblemKind::Mmse => {
            if model.num_sources() != output_dim {
                return Err(DansfError::DimensionMismatch(format!(
                    "MMSE family needs Q = {} latent sources, model has {}",
                    output_dim,
                    model.num_sources()
                )));
            }
            (model.cross_covariance(), None)
        }
    };

    Ok(CoupledFamily {
        kind,
        shared,
        couplings,
        response_base,
        var_source: model.var_source(),
    })
}

impl CoupledFamily {
    /// Assemble a family from explicit parts (used by deserialization and by
    /// tests that deliberately break the coupling structure).
    pub fn from_parts(
        kind: ProblemKind,
        shared: DMatrix<f64>,
        couplings: Vec<DMatrix<f64>>,
        response_base: Option<DMatrix<f64>>,
        var_source: f64,
    ) -> Result<Self> {
        if couplings.is_empty() {
            return Err(DansfError::InvalidConfig("family needs at least one node".into()));
        }
        let q = couplings[0].nrows();
        if couplings.iter().any(|d| d.nrows() != q || d.ncols() != q) {
            return Err(DansfError::DimensionMismatch(
                "all couplings must be square with matching size".into(),
            ));
        }
        if kind == ProblemKind::Lcmv && response_base.is_none() {
            return Err(DansfError::InvalidConfig("LCMV family needs a base response".into()));
        }
        Ok(Self {
            kind,
            shared,
            couplings,
            response_base,
            var_source,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.couplings.len()
    }

    pub fn output_dim(&self) -> usize {
        self.couplings[0].nrows()
    }

    /// The network-wide compressible matrix (`B`, or `R_yd` for MMSE).
    pub fn shared(&self) -> &DMatrix<f64> {
        &self.shared
    }

    pub fn coupling_param(&self, k: usize) -> &DMatrix<f64> {
        &self.couplings[k - 1]
    }

    /// Whether the shared matrix is deterministic data that nodes actually
    /// transmit (`B̂` blocks). MMSE carries a cross-covariance instead, which
    /// the updating node estimates locally from its own target samples.
    pub fn has_deterministic_shared(&self) -> bool {
        !matches!(self.kind, ProblemKind::Mmse)
    }

    /// Node `k`'s problem instance.
    pub fn instance(&self, k: usize) -> Box<dyn ProblemInstance> {
        let d = self.couplings[k - 1].clone();
        match self.kind {
            ProblemKind::TraceQclp => Box::new(TraceQclpProblem::new(d)),
            ProblemKind::Mmse => Box::new(MmseProblem::new(d, self.var_source)),
            ProblemKind::Lcmv => {
                let base = self.response_base.as_ref().expect("validated at construction");
                Box::new(LcmvProblem::new(d.transpose() * base))
            }
        }
    }

    /// Oracle solutions of every node's centralized problem.
    pub fn oracle_solutions(&self, cov: &CovarianceEstimate) -> Result<Vec<DMatrix<f64>>> {
        let data = ProblemData::from_estimate(cov, self.shared.clone())?;
        (1..=self.num_nodes())
            .map(|k| self.instance(k).solve(&data, None))
            .collect()
    }

    /// The coupling matrix `D_{k,l}` with `X_k* = X_l*·D_{k,l}`.
    pub fn coupling(&self, k: usize, l: usize, cov: &SpdFactor) -> Result<DMatrix<f64>> {
        let dk = &self.couplings[k - 1];
        let dl = &self.couplings[l - 1];
        let base = dl
            .clone()
            .lu()
            .solve(dk)
            .ok_or_else(|| DansfError::DegenerateProblem("coupling matrix not invertible".into()))?;
        match self.kind {
            ProblemKind::TraceQclp => {
                let beta = |d: &DMatrix<f64>| -> Result<f64> {
                    let w = cov.whiten(&(&self.shared * d))?;
                    Ok(1.0 / w.norm())
                };
                Ok(base * (beta(dk)? / beta(dl)?))
            }
            ProblemKind::Mmse | ProblemKind::Lcmv => Ok(base),
        }
    }

    /// JSON interchange document (matrices as row-major nested arrays).
    pub fn to_json(&self) -> Result<String> {
        let doc = FamilyDoc {
            kind: self.kind,
            var_source: self.var_source,
            shared: linalg::to_nested(&self.shared),
            couplings: self.couplings.iter().map(linalg::to_nested).collect(),
            response_base: self.response_base.as_ref().map(linalg::to_nested),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FamilyDoc = serde_json::from_str(text)?;
        let response_base = doc
            .response_base
            .as_ref()
            .map(|m| linalg::from_nested(m))
            .transpose()?;
        Self::from_parts(
            doc.kind,
            linalg::from_nested(&doc.shared)?,
            doc.couplings
                .iter()
                .map(|m| linalg::from_nested(m))
                .collect::<Result<_>>()?,
            response_base,
            doc.var_source,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyDoc {
    kind: ProblemKind,
    var_source: f64,
    shared: Vec<Vec<f64>>,
    couplings: Vec<Vec<Vec<f64>>>,
    response_base: Option<Vec<Vec<f64>>>,
}

/// Check the coupling assumption: max over node pairs of
/// `‖X_k* − X_l*·D_{k,l}‖_F / ‖X_k*‖_F` against a tolerance.
pub fn verify_assumption1(
    family: &CoupledFamily,
    cov: &CovarianceEstimate,
    tol: f64,
) -> Result<Assumption1Report> {
    let oracles = family.oracle_solutions(cov)?;
    let ridge = cov.default_ridge();
    let factor = if ridge > 0.0 {
        SpdFactor::from_spd(cov.with_ridge(ridge).matrix())?
    } else {
        SpdFactor::from_spd(cov.matrix())?
    };
    let mut max_dev = 0.0f64;
    let mut worst = (1, 1);
    for k in 1..=family.num_nodes() {
        for l in 1..=family.num_nodes() {
            if k == l {
                continue;
            }
            let dkl = family.coupling(k, l, &factor)?;
            let dev = (&oracles[k - 1] - &oracles[l - 1] * dkl).norm() / oracles[k - 1].norm();
            if dev > max_dev {
                max_dev = dev;
                worst = (k, l);
            }
        }
    }
    Ok(Assumption1Report {
        max_relative_deviation: max_dev,
        worst_pair: worst,
        tolerance: tol,
        passed: max_dev <= tol,
    })
}

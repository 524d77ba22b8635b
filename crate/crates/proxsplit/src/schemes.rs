//! Constructors for the concrete splitting schemes: Douglas-Rachford,
//! Chambolle-Pock, relaxed DRS (Peaceman-Rachford at θ = 2), forward DRS
//! (Davis-Yin) and its parallel and sequential generalizations.
//!
//! Every scheme comes in two interchangeable forms. The *block* form is a
//! [`BlockAssembly`] driven by the generic engine, used for verification;
//! the *direct* form is the hand-derived reduced update, used in production.
//! Both iterate the same operator: with w = Cᵀu, θ_k = λ_k/(1+α) and
//! w̃ = w/(1+α), the direct update reproduces the reduced proximal point
//! iteration exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::OperatorBlock;
use crate::ppp::{
    ppp_iterate, BlockAssembly, CouplingEntry, DiagonalBlock, IterateOptions, IterationTrace,
    RelaxationSchedule, StoppingRule, TraceRecord, TraceStatus,
};
use crate::spaces::{factor_psd, BlockVector, Factorization, Preconditioner, FACTOR_RTOL};

/// Scheme family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Drs,
    Cp,
    RelaxedDrs,
    Fdr,
    ParallelFdr,
    SequentialFdr,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SchemeKind::Drs => "drs",
            SchemeKind::Cp => "cp",
            SchemeKind::RelaxedDrs => "relaxed-drs",
            SchemeKind::Fdr => "fdr",
            SchemeKind::ParallelFdr => "parallel-fdr",
            SchemeKind::SequentialFdr => "sequential-fdr",
        };
        f.write_str(name)
    }
}

/// Relaxation values θ_k, prior to the λ = (1+α)θ rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSchedule {
    Constant(f64),
    Sequence { values: Vec<f64>, divergent: bool },
}

impl ThetaSchedule {
    pub fn value(&self, k: usize) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Sequence { values, .. } => values[k.min(values.len() - 1)],
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Sequence { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Sequence { values, .. } => values.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    fn to_relaxation(&self, factor: f64) -> Result<RelaxationSchedule> {
        match self {
            Self::Constant(v) => RelaxationSchedule::constant(v * factor),
            Self::Sequence { values, divergent } => RelaxationSchedule::sequence(
                values.iter().map(|v| v * factor).collect(),
                *divergent,
            ),
        }
    }
}

impl Default for ThetaSchedule {
    fn default() -> Self {
        Self::Constant(1.0)
    }
}

/// Declared regularity of the operators handed to a builder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    #[serde(default)]
    pub mu0: f64,
    #[serde(default)]
    pub mu1: f64,
    /// Common cocoercivity constant: each forward term is 1/β-cocoercive.
    #[serde(default)]
    pub beta: f64,
}

/// Serializable parameter record for one scheme instance.
///
/// `alpha` is the diagonal shift the builder derived from the parameters;
/// `sigma` is the internal step σ = γ(1+α) of the block form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub theta: ThetaSchedule,
    /// Number of forward-backward branches N (FDR generalizations).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_terms: Option<usize>,
    #[serde(default)]
    pub regularity: Regularity,
    /// ‖L‖ for Chambolle-Pock, when an operator norm is involved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_norm: Option<f64>,
}

impl SchemeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// One violated parameter bound, reported in machine-readable form.
#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub parameter: String,
    pub value: f64,
    /// The bound that failed, as a formula.
    pub bound: String,
}

/// Result of [`validate_params`]: hard violations and soft warnings.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Validation {
    pub violations: Vec<BoundViolation>,
    pub warnings: Vec<String>,
}

impl Validation {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn violate(&mut self, parameter: &str, value: f64, bound: &str) {
        self.violations.push(BoundViolation {
            parameter: parameter.into(),
            value,
            bound: bound.into(),
        });
    }

    fn warn(&mut self, text: String) {
        self.warnings.push(text);
    }
}

/// θ upper bound for relaxed DRS: 2 + 2γμ₀μ₁/(μ₀+μ₁); 2 when μ₀μ₁ = 0.
pub fn relaxed_drs_theta_max(gamma: f64, mu0: f64, mu1: f64) -> f64 {
    if mu0 + mu1 <= 0.0 {
        2.0
    } else {
        2.0 + 2.0 * gamma * mu0 * mu1 / (mu0 + mu1)
    }
}

/// θ upper bound for the FDR family: 2 − γβ/2.
pub fn fdr_theta_max(gamma: f64, beta: f64) -> f64 {
    2.0 - gamma * beta / 2.0
}

/// Diagonal shift α = γβ/(4 − γβ) of the FDR family; positive on (0, 4/β).
pub fn fdr_alpha(gamma: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        0.0
    } else {
        gamma * beta / (4.0 - gamma * beta)
    }
}

/// Diagonal shift α = −γμ₀μ₁/(γμ₀μ₁ + μ₀ + μ₁) of relaxed DRS.
pub fn relaxed_drs_alpha(gamma: f64, mu0: f64, mu1: f64) -> f64 {
    if mu0 * mu1 <= 0.0 {
        0.0
    } else {
        -gamma * mu0 * mu1 / (gamma * mu0 * mu1 + mu0 + mu1)
    }
}

fn check_theta_range(v: &mut Validation, theta: &ThetaSchedule, theta_max: f64) {
    if theta.min_value() < 0.0 {
        v.violate("theta", theta.min_value(), "theta >= 0");
    }
    if theta.max_value() > theta_max + 1e-12 {
        v.violate(
            "theta",
            theta.max_value(),
            &format!("theta <= theta_max = {theta_max:.12}"),
        );
    }
}

fn check_divergence(v: &mut Validation, theta: &ThetaSchedule, theta_max: f64) {
    match theta {
        ThetaSchedule::Constant(t) => {
            if *t <= 0.0 || (theta_max - t).abs() <= 1e-12 {
                v.warn(format!(
                    "constant theta = {t} makes sum theta_k(theta_max - theta_k) finite; convergence is not certified"
                ));
            }
        }
        ThetaSchedule::Sequence { divergent, .. } => {
            if !divergent {
                v.warn(
                    "theta sequence not declared divergent; convergence is not certified".into(),
                );
            }
        }
    }
}

/// Checks every parameter bound of a configuration and reports each failure
/// with the formula that was violated. Divergence of Σθ_k(θ_max − θ_k) is
/// decided analytically for constant schedules and taken from the caller's
/// declaration otherwise.
pub fn validate_params(cfg: &SchemeConfig) -> Result<Validation> {
    let mut v = Validation::default();
    match cfg.kind {
        SchemeKind::Drs => {
            let sigma = cfg.sigma.or(cfg.gamma).unwrap_or(1.0);
            if sigma <= 0.0 {
                v.violate("sigma", sigma, "sigma > 0");
            }
            check_theta_range(&mut v, &cfg.theta, 2.0);
            check_divergence(&mut v, &cfg.theta, 2.0);
        }
        SchemeKind::Cp => {
            let tau = cfg.tau.unwrap_or(1.0);
            let sigma = cfg.sigma.unwrap_or(1.0);
            if tau <= 0.0 {
                v.violate("tau", tau, "tau > 0");
            }
            if sigma <= 0.0 {
                v.violate("sigma", sigma, "sigma > 0");
            }
            if let Some(l_norm) = cfg.l_norm {
                let product = tau * sigma * l_norm * l_norm;
                if product > 1.0 + 1e-12 {
                    v.violate("tau*sigma*|L|^2", product, "tau*sigma*|L|^2 <= 1");
                }
            }
            check_theta_range(&mut v, &cfg.theta, 2.0);
            check_divergence(&mut v, &cfg.theta, 2.0);
        }
        SchemeKind::RelaxedDrs => {
            let gamma = cfg.gamma.unwrap_or(1.0);
            if gamma <= 0.0 {
                v.violate("gamma", gamma, "gamma > 0");
            }
            let (mu0, mu1) = (cfg.regularity.mu0, cfg.regularity.mu1);
            if mu0 < 0.0 {
                v.violate("mu0", mu0, "mu0 >= 0");
            }
            if mu1 < 0.0 {
                v.violate("mu1", mu1, "mu1 >= 0");
            }
            let theta_max = relaxed_drs_theta_max(gamma, mu0, mu1);
            // Peaceman-Rachford (constant θ = 2) needs θ_max > 2, which in
            // turn needs both operators strongly monotone.
            if let ThetaSchedule::Constant(t) = cfg.theta {
                if (t - 2.0).abs() <= 1e-12 && mu0 * mu1 <= 0.0 {
                    return Err(Error::PeacemanRachfordRequiresStrongMonotonicity);
                }
            }
            check_theta_range(&mut v, &cfg.theta, theta_max);
            check_divergence(&mut v, &cfg.theta, theta_max);
        }
        SchemeKind::Fdr | SchemeKind::ParallelFdr | SchemeKind::SequentialFdr => {
            let gamma = cfg.gamma.unwrap_or(1.0);
            let beta = cfg.regularity.beta;
            if beta < 0.0 {
                v.violate("beta", beta, "beta >= 0");
            }
            if gamma <= 0.0 {
                v.violate("gamma", gamma, "gamma > 0");
            } else if beta > 0.0 && gamma >= 4.0 / beta {
                v.violate("gamma", gamma, "gamma < 4/beta");
            }
            let theta_max = fdr_theta_max(gamma, beta);
            check_theta_range(&mut v, &cfg.theta, theta_max);
            check_divergence(&mut v, &cfg.theta, theta_max);
            if beta == 0.0 {
                v.warn("beta = 0: no forward term, theta_max = 2 (plain DRS bounds)".into());
            }
        }
    }
    Ok(v)
}

/// Output of one direct-update step.
pub struct DirectStep {
    /// Next iterate (reduced w̃, or the flattened full iterate for CP).
    pub next: DVector<f64>,
    /// ‖T̃w − w‖ for reduced schemes (θ-independent), ‖Tu − u‖ for CP.
    pub residual: f64,
    /// ‖Tu − u‖_M; equals `residual` for reduced schemes.
    pub m_residual: f64,
    /// The primal iterate x₀ extracted from this step.
    pub primal: DVector<f64>,
    /// dist(0, ΣAᵢxᵢ + ΣCᵢx) read off the resolvent graph points.
    pub inclusion_residual: f64,
}

type StepFn = Box<dyn Fn(&DVector<f64>, f64) -> DirectStep + Send + Sync>;

enum DirectUpdate {
    /// Reduced update on w̃ ∈ R^{N·n}.
    Reduced(StepFn),
    /// Full-space update (Chambolle-Pock iterates both blocks).
    Full(StepFn),
}

/// A fully assembled splitting scheme.
pub struct Scheme {
    pub config: SchemeConfig,
    /// Block form: the pair (M, A) for the generic engine.
    pub assembly: BlockAssembly,
    /// M = C Cᵀ; closed form where one exists, numeric for Chambolle-Pock.
    pub factorization: Factorization,
    /// Diagonal shift α; the direct update iterates w̃ = w/(1+α).
    pub alpha: f64,
    direct: DirectUpdate,
    direct_dim: usize,
}

impl Scheme {
    pub fn kind(&self) -> SchemeKind {
        self.config.kind
    }

    /// Dimension of the direct-mode iterate (reduced for all schemes but CP).
    pub fn direct_dim(&self) -> usize {
        self.direct_dim
    }

    pub fn is_reduced(&self) -> bool {
        matches!(self.direct, DirectUpdate::Reduced(_))
    }

    /// One direct step with relaxation θ.
    pub fn direct_step(&self, w: &DVector<f64>, theta: f64) -> DirectStep {
        match &self.direct {
            DirectUpdate::Reduced(f) | DirectUpdate::Full(f) => f(w, theta),
        }
    }

    /// Runs the direct update with the configured θ schedule.
    pub fn run_direct(
        &self,
        w0: &DVector<f64>,
        stop: &StoppingRule,
        reference: Option<&DVector<f64>>,
    ) -> Result<IterationTrace> {
        self.run_direct_with(w0, stop, reference, false)
    }

    /// As [`Scheme::run_direct`], optionally recording every iterate.
    pub fn run_direct_with(
        &self,
        w0: &DVector<f64>,
        stop: &StoppingRule,
        reference: Option<&DVector<f64>>,
        record_iterates: bool,
    ) -> Result<IterationTrace> {
        if w0.len() != self.direct_dim {
            return Err(Error::DimensionMismatch {
                expected: self.direct_dim,
                got: w0.len(),
            });
        }
        let start = std::time::Instant::now();
        let mut trace = IterationTrace::new(TraceStatus::MaxIters);
        let mut snapshots: Vec<DVector<f64>> = Vec::new();
        let mut w = w0.clone();
        for k in 0..=stop.max_iters {
            let theta = self.config.theta.value(k);
            let step = self.direct_step(&w, theta);
            let dist_ref = reference.map(|r| (&step.primal - r).norm());
            trace.records.push(TraceRecord {
                k,
                residual: step.residual,
                m_residual: step.m_residual,
                dist_ref,
                time_s: start.elapsed().as_secs_f64(),
            });
            if record_iterates {
                snapshots.push(w.clone());
            }
            let done = if stop.absolute {
                step.residual <= stop.tol
            } else {
                step.residual <= stop.tol * (1.0 + w.norm())
            };
            if done {
                trace.status = TraceStatus::Converged;
                break;
            }
            if k == stop.max_iters {
                break;
            }
            w = step.next;
        }
        trace.final_reduced = Some(w);
        if record_iterates {
            trace.snapshots_reduced = Some(snapshots);
        }
        Ok(trace)
    }

    /// Runs the block form through the generic engine with λ_k = (1+α)θ_k.
    pub fn run_block(
        &self,
        u0: &BlockVector,
        stop: &StoppingRule,
        opts: &IterateOptions,
    ) -> Result<IterationTrace> {
        let sched = self.config.theta.to_relaxation(1.0 + self.alpha)?;
        ppp_iterate(&self.assembly, u0, &sched, stop, opts)
    }

    /// Lifts a direct-mode iterate to a block iterate with Cᵀu = (1+α)w̃.
    pub fn lift(&self, w: &DVector<f64>) -> Result<BlockVector> {
        if self.is_reduced() {
            self.factorization.lift(&(w * (1.0 + self.alpha)))
        } else {
            BlockVector::from_flat(w, self.assembly.layout())
        }
    }

    /// The direct-mode iterate corresponding to a block iterate.
    pub fn project(&self, u: &BlockVector) -> Result<DVector<f64>> {
        if self.is_reduced() {
            Ok(self.factorization.apply_cstar(u)? / (1.0 + self.alpha))
        } else {
            Ok(u.flatten())
        }
    }

    /// Primal point extracted from a direct-mode iterate.
    pub fn primal(&self, w: &DVector<f64>) -> DVector<f64> {
        self.direct_step(w, 0.0).primal
    }

    /// Inclusion residual dist(0, ΣAᵢx + ΣCᵢx) at a direct-mode iterate.
    pub fn inclusion_residual(&self, w: &DVector<f64>) -> f64 {
        self.direct_step(w, 0.0).inclusion_residual
    }

    /// Runs direct and block mode in lockstep from matched starting points
    /// and reports the largest deviation between the reduced iterates.
    pub fn run_both(
        &self,
        w0: &DVector<f64>,
        iters: usize,
        reference: Option<&DVector<f64>>,
    ) -> Result<BothRuns> {
        let mut u = self.lift(w0)?;
        let mut w = w0.clone();
        let start = std::time::Instant::now();
        let mut direct_trace = IterationTrace::new(TraceStatus::Converged);
        let mut block_trace = IterationTrace::new(TraceStatus::Converged);
        let mut max_deviation = 0.0_f64;
        let m = self.assembly.preconditioner();
        for k in 0..iters {
            let theta = self.config.theta.value(k);
            let lambda = theta * (1.0 + self.alpha);
            let step = self.direct_step(&w, theta);
            let dist_ref = reference.map(|r| (&step.primal - r).norm());
            direct_trace.records.push(TraceRecord {
                k,
                residual: step.residual,
                m_residual: step.m_residual,
                dist_ref,
                time_s: start.elapsed().as_secs_f64(),
            });
            let tu = self.assembly.evaluate_t(&u)?;
            let diff = tu.sub(&u)?;
            block_trace.records.push(TraceRecord {
                k,
                residual: diff.norm(),
                m_residual: m.seminorm(&diff)?,
                dist_ref: None,
                time_s: start.elapsed().as_secs_f64(),
            });
            w = step.next;
            u = u.axpy(lambda, &diff)?;
            max_deviation = max_deviation.max((self.project(&u)? - &w).norm());
        }
        direct_trace.final_reduced = Some(w);
        block_trace.final_full = Some(u);
        Ok(BothRuns {
            direct: direct_trace,
            block: block_trace,
            max_deviation,
        })
    }
}

/// Result of a lockstep direct/block comparison run.
pub struct BothRuns {
    pub direct: IterationTrace,
    pub block: IterationTrace,
    pub max_deviation: f64,
}

fn stacked_columns(rows: &[(usize, f64)], total_blocks: usize, n: usize) -> DMatrix<f64> {
    // One reduced column block of size n; entry (block, coeff) per row.
    let mut c = DMatrix::zeros(total_blocks * n, n);
    for &(block, coeff) in rows {
        for i in 0..n {
            c[(block * n + i, i)] = coeff;
        }
    }
    c
}

/// Douglas-Rachford: 0 ∈ Ax + Bx via the two-block assembly with
/// M = [[I, −I], [−I, I]] and the reduced update
/// w⁺ = w + θ(J_{σB}(2J_{σA}w − w) − J_{σA}w).
pub fn build_drs(
    a: &OperatorBlock,
    b: &OperatorBlock,
    sigma: f64,
    theta: ThetaSchedule,
    n: usize,
) -> Result<Scheme> {
    if sigma <= 0.0 {
        return Err(Error::NonPositiveStep { value: sigma });
    }
    let config = SchemeConfig {
        kind: SchemeKind::Drs,
        sigma: Some(sigma),
        tau: None,
        gamma: Some(sigma),
        alpha: Some(0.0),
        theta,
        n_terms: Some(1),
        regularity: Regularity::default(),
        l_norm: None,
    };
    let validation = validate_params(&config)?;
    if let Some(first) = validation.violations.first() {
        return Err(Error::ThetaOutOfRange {
            value: first.value,
            max: 2.0,
        });
    }
    let pattern = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let m = Preconditioner::from_block_pattern(&pattern, &[n, n])?;
    let assembly = BlockAssembly::new(
        m,
        vec![
            DiagonalBlock::new(1.0, sigma, a.clone()),
            DiagonalBlock::new(1.0, 1.0, OperatorBlock::inverse_of(b, sigma)),
        ],
        vec![CouplingEntry::scaled(1, 0, -2.0)],
    )?;
    let factorization =
        Factorization::from_c(stacked_columns(&[(0, 1.0), (1, -1.0)], 2, n), vec![n, n])?;
    let (a_op, b_op) = (a.clone(), b.clone());
    let direct = DirectUpdate::Reduced(Box::new(move |w, theta| {
        let x0 = a_op.resolvent(sigma, w);
        let arg = &x0 * 2.0 - w;
        let x1 = b_op.resolvent(sigma, &arg);
        let delta = &x1 - &x0;
        // Graph points: (w − x0)/σ ∈ A x0, (arg − x1)/σ ∈ B x1.
        let ga = (w - &x0) / sigma;
        let gb = (&arg - &x1) / sigma;
        DirectStep {
            next: w + &delta * theta,
            residual: delta.norm(),
            m_residual: delta.norm(),
            primal: x0,
            inclusion_residual: (ga + gb).norm(),
        }
    }));
    Ok(Scheme {
        config,
        assembly,
        factorization,
        alpha: 0.0,
        direct,
        direct_dim: n,
    })
}

/// Estimates ‖L‖ by power iteration on LᵀL.
pub fn operator_norm(l: &DMatrix<f64>, iters: usize, tol: f64) -> f64 {
    let n = l.ncols();
    if n == 0 || l.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sin() * 0.01);
    v /= v.norm();
    let mut norm = 0.0_f64;
    for _ in 0..iters {
        let lv = l * &v;
        let next = l.transpose() * lv;
        let next_norm = next.norm();
        if next_norm == 0.0 {
            return 0.0;
        }
        let estimate = next_norm.sqrt();
        if (estimate - norm).abs() <= tol * estimate.max(1.0) {
            return estimate;
        }
        norm = estimate;
        v = next / next_norm;
    }
    norm
}

/// Chambolle-Pock for 0 ∈ Ax + LᵀB(Lx), iterating
/// x⁺ = J_{τA}(x − τLᵀy), y⁺ = J_{σB⁻¹}(y + σL(2x⁺ − x)).
///
/// The degenerate edge τσ‖L‖² = 1 is allowed; beyond it the preconditioner
/// loses positive semi-definiteness and the builder refuses.
pub fn build_cp(
    a: &OperatorBlock,
    b: &OperatorBlock,
    l: DMatrix<f64>,
    tau: f64,
    sigma: f64,
    theta: ThetaSchedule,
) -> Result<Scheme> {
    if tau <= 0.0 {
        return Err(Error::NonPositiveStep { value: tau });
    }
    if sigma <= 0.0 {
        return Err(Error::NonPositiveStep { value: sigma });
    }
    let l_norm = operator_norm(&l, 200, 1e-10);
    let product = tau * sigma * l_norm * l_norm;
    if product > 1.0 + 1e-12 {
        return Err(Error::StepBoundViolated {
            detail: format!("tau*sigma*|L|^2 = {product:.12} exceeds 1"),
        });
    }
    let config = SchemeConfig {
        kind: SchemeKind::Cp,
        sigma: Some(sigma),
        tau: Some(tau),
        gamma: None,
        alpha: Some(0.0),
        theta,
        n_terms: Some(1),
        regularity: Regularity::default(),
        l_norm: Some(l_norm),
    };
    let (q, p) = (l.nrows(), l.ncols());
    let mut m = DMatrix::zeros(p + q, p + q);
    for i in 0..p {
        m[(i, i)] = 1.0 / tau;
    }
    for i in 0..q {
        m[(p + i, p + i)] = 1.0 / sigma;
    }
    m.view_mut((0, p), (p, q)).copy_from(&(-l.transpose()));
    m.view_mut((p, 0), (q, p)).copy_from(&(-&l));
    let m = Preconditioner::new(m, vec![p, q])?;
    let factorization = factor_psd(&m, FACTOR_RTOL)?;
    let assembly = BlockAssembly::new(
        m,
        vec![
            DiagonalBlock::new(1.0 / tau, 1.0, a.clone()),
            DiagonalBlock::new(1.0 / sigma, 1.0, OperatorBlock::inverse_of(b, 1.0)),
        ],
        vec![CouplingEntry::matrix(1, 0, &l * -2.0)],
    )?;
    let (a_op, b_op, l_mat) = (a.clone(), b.clone(), l.clone());
    let direct = DirectUpdate::Full(Box::new(move |u, theta| {
        let x = DVector::from_column_slice(&u.as_slice()[..p]);
        let y = DVector::from_column_slice(&u.as_slice()[p..]);
        let x_new = a_op.resolvent(tau, &(&x - l_mat.transpose() * &y * tau));
        let arg = &y + &l_mat * (&x_new * 2.0 - &x) * sigma;
        let y_new = &arg - b_op.resolvent(1.0 / sigma, &(&arg / sigma)) * sigma;
        // Graph points: (x − τLᵀy − x⁺)/τ ∈ A x⁺ and y⁺ ∈ B((arg − y⁺)/σ);
        // at a fixed point the inclusion is 0 ∈ Ax + Lᵀy with y ∈ B(Lx).
        let ga = (&x - l_mat.transpose() * &y * tau - &x_new) / tau;
        let inclusion = (&ga + l_mat.transpose() * &y_new).norm();
        let mut t_u = DVector::zeros(p + q);
        t_u.rows_mut(0, p).copy_from(&x_new);
        t_u.rows_mut(p, q).copy_from(&y_new);
        let diff = &t_u - u;
        // ‖diff‖²_M with M = [[I/τ, −Lᵀ], [−L, I/σ]].
        let dx = diff.rows(0, p).clone_owned();
        let dy = diff.rows(p, q).clone_owned();
        let m_sq =
            dx.norm_squared() / tau + dy.norm_squared() / sigma - 2.0 * (&l_mat * &dx).dot(&dy);
        DirectStep {
            next: u + &diff * theta,
            residual: diff.norm(),
            m_residual: m_sq.max(0.0).sqrt(),
            primal: x_new,
            inclusion_residual: inclusion,
        }
    }));
    Ok(Scheme {
        config,
        assembly,
        factorization,
        alpha: 0.0,
        direct,
        direct_dim: p + q,
    })
}

/// Shared three-block core of relaxed DRS and FDR. A forward term C enters
/// the second resolvent argument; C = None gives relaxed DRS.
#[allow(clippy::too_many_arguments)]
fn build_three_block(
    kind: SchemeKind,
    a0: &OperatorBlock,
    a1: &OperatorBlock,
    c: Option<&OperatorBlock>,
    gamma: f64,
    alpha: f64,
    theta: ThetaSchedule,
    regularity: Regularity,
    n: usize,
) -> Result<Scheme> {
    let sigma = gamma * (1.0 + alpha);
    let config = SchemeConfig {
        kind,
        sigma: Some(sigma),
        tau: None,
        gamma: Some(gamma),
        alpha: Some(alpha),
        theta,
        n_terms: Some(1),
        regularity,
        l_norm: None,
    };
    let m = Preconditioner::from_block_pattern(&DMatrix::from_element(3, 3, 1.0), &[n, n, n])?;
    let mut x1_from_x0 = CouplingEntry::scaled(2, 0, 2.0 - 2.0 * alpha);
    if let Some(c_op) = c {
        x1_from_x0 = x1_from_x0.with_forward(sigma, c_op.clone());
    }
    let assembly = BlockAssembly::new(
        m,
        vec![
            DiagonalBlock::new(1.0 + alpha, sigma, a0.clone()),
            DiagonalBlock::scalar(1.0),
            DiagonalBlock::new(1.0 + alpha, sigma, a1.clone()),
        ],
        vec![
            CouplingEntry::scaled(1, 0, 2.0),
            x1_from_x0,
            CouplingEntry::scaled(2, 1, 2.0),
        ],
    )?;
    let factorization = Factorization::from_c(
        stacked_columns(&[(0, 1.0), (1, 1.0), (2, 1.0)], 3, n),
        vec![n, n, n],
    )?;
    let (a0_op, a1_op) = (a0.clone(), a1.clone());
    let c_op = c.cloned();
    let direct = DirectUpdate::Reduced(Box::new(move |w, theta| {
        let x0 = a0_op.resolvent(gamma, w);
        let mut arg = &x0 * 2.0 - w;
        let mut forward_at_x0 = DVector::zeros(x0.len());
        if let Some(c) = &c_op {
            forward_at_x0 = c.forward(&x0);
            arg -= &forward_at_x0 * gamma;
        }
        let x1 = a1_op.resolvent(gamma, &arg);
        let delta = &x1 - &x0;
        let ga0 = (w - &x0) / gamma;
        let ga1 = (&arg - &x1) / gamma;
        DirectStep {
            next: w + &delta * theta,
            residual: delta.norm(),
            m_residual: delta.norm(),
            primal: x0,
            inclusion_residual: (ga0 + ga1 + forward_at_x0).norm(),
        }
    }));
    Ok(Scheme {
        config,
        assembly,
        factorization,
        alpha,
        direct,
        direct_dim: n,
    })
}

/// Relaxed DRS on 0 ∈ A₀x + A₁x: x₀ = J_{γA₀}(w̃), x₁ = J_{γA₁}(2x₀ − w̃),
/// w̃⁺ = w̃ + θ(x₁ − x₀) with θ up to 2 + 2γμ₀μ₁/(μ₀+μ₁).
///
/// θ ≡ 2 is Peaceman-Rachford and needs μ₀, μ₁ > 0.
pub fn build_relaxed_drs(
    a0: &OperatorBlock,
    a1: &OperatorBlock,
    gamma: f64,
    theta: ThetaSchedule,
    mu0: f64,
    mu1: f64,
    n: usize,
) -> Result<Scheme> {
    if gamma <= 0.0 {
        return Err(Error::NonPositiveStep { value: gamma });
    }
    let regularity = Regularity {
        mu0,
        mu1,
        beta: 0.0,
    };
    let probe = SchemeConfig {
        kind: SchemeKind::RelaxedDrs,
        sigma: None,
        tau: None,
        gamma: Some(gamma),
        alpha: None,
        theta: theta.clone(),
        n_terms: Some(1),
        regularity,
        l_norm: None,
    };
    let validation = validate_params(&probe)?;
    if let Some(first) = validation.violations.first() {
        return Err(Error::ThetaOutOfRange {
            value: first.value,
            max: relaxed_drs_theta_max(gamma, mu0, mu1),
        });
    }
    let alpha = relaxed_drs_alpha(gamma, mu0, mu1);
    build_three_block(
        SchemeKind::RelaxedDrs,
        a0,
        a1,
        None,
        gamma,
        alpha,
        theta,
        regularity,
        n,
    )
}

/// Forward DRS (Davis-Yin) on 0 ∈ A₀x + A₁x + Cx with C 1/β-cocoercive:
/// x₀ = J_{γA₀}(w̃), x₁ = J_{γA₁}(2x₀ − w̃ − γCx₀), w̃⁺ = w̃ + θ(x₁ − x₀).
///
/// Needs γ ∈ (0, 4/β) and θ_k ∈ [0, 2 − γβ/2]; β = 0 (no forward term)
/// relaxes both bounds to the plain DRS ones.
pub fn build_fdr(
    a0: &OperatorBlock,
    a1: &OperatorBlock,
    c: &OperatorBlock,
    gamma: f64,
    theta: ThetaSchedule,
    n: usize,
) -> Result<Scheme> {
    let beta = c.beta.unwrap_or(0.0);
    validate_fdr_family(SchemeKind::Fdr, gamma, beta, &theta)?;
    let alpha = fdr_alpha(gamma, beta);
    let forward = if c.has_forward() { Some(c) } else { None };
    build_three_block(
        SchemeKind::Fdr,
        a0,
        a1,
        forward,
        gamma,
        alpha,
        theta,
        Regularity {
            mu0: 0.0,
            mu1: 0.0,
            beta,
        },
        n,
    )
}

fn validate_fdr_family(
    kind: SchemeKind,
    gamma: f64,
    beta: f64,
    theta: &ThetaSchedule,
) -> Result<()> {
    let probe = SchemeConfig {
        kind,
        sigma: None,
        tau: None,
        gamma: Some(gamma),
        alpha: None,
        theta: theta.clone(),
        n_terms: None,
        regularity: Regularity {
            mu0: 0.0,
            mu1: 0.0,
            beta,
        },
        l_norm: None,
    };
    let validation = validate_params(&probe)?;
    if let Some(first) = validation.violations.first() {
        return Err(match first.parameter.as_str() {
            "gamma" => Error::StepOutOfRange {
                value: gamma,
                range: if beta > 0.0 {
                    format!("(0, {})", 4.0 / beta)
                } else {
                    "(0, inf)".into()
                },
            },
            _ => Error::ThetaOutOfRange {
                value: first.value,
                max: fdr_theta_max(gamma, beta),
            },
        });
    }
    Ok(())
}

/// Parallel FDR on 0 ∈ A₀x + Σᵢ(Aᵢx + Cᵢx): one hub resolvent
/// x₀ = J_{(γ/N)A₀}(mean w̃ᵢ) feeding N independent branches
/// xᵢ = J_{γAᵢ}(2x₀ − w̃ᵢ − γCᵢx₀), w̃ᵢ⁺ = w̃ᵢ + θ(xᵢ − x₀).
pub fn build_parallel_fdr(
    a0: &OperatorBlock,
    branches: &[(OperatorBlock, Option<OperatorBlock>)],
    gamma: f64,
    theta: ThetaSchedule,
    n: usize,
) -> Result<Scheme> {
    let big_n = branches.len();
    if big_n == 0 {
        return Err(Error::InconsistentDimensions {
            context: "parallel FDR needs at least one branch".into(),
        });
    }
    // Worst (largest) cocoercivity constant across the forward terms.
    let beta = branches
        .iter()
        .filter_map(|(_, c)| c.as_ref().and_then(|c| c.beta))
        .fold(0.0_f64, f64::max);
    validate_fdr_family(SchemeKind::ParallelFdr, gamma, beta, &theta)?;
    let alpha = fdr_alpha(gamma, beta);
    let sigma = gamma * (1.0 + alpha);
    let blocks = 2 * big_n + 1;
    let mut pattern = DMatrix::zeros(blocks, blocks);
    pattern[(0, 0)] = big_n as f64;
    for i in 0..big_n {
        let (v, x) = (1 + 2 * i, 2 + 2 * i);
        pattern[(0, v)] = 1.0;
        pattern[(0, x)] = 1.0;
        pattern[(v, 0)] = 1.0;
        pattern[(x, 0)] = 1.0;
        pattern[(v, v)] = 1.0;
        pattern[(v, x)] = 1.0;
        pattern[(x, v)] = 1.0;
        pattern[(x, x)] = 1.0;
    }
    let layout = vec![n; blocks];
    let m = Preconditioner::from_block_pattern(&pattern, &layout)?;
    let mut diag = vec![DiagonalBlock::new(
        (big_n as f64) * (1.0 + alpha),
        sigma,
        a0.clone(),
    )];
    let mut lower = Vec::new();
    for (i, (a_i, c_i)) in branches.iter().enumerate() {
        let (v, x) = (1 + 2 * i, 2 + 2 * i);
        diag.push(DiagonalBlock::scalar(1.0));
        diag.push(DiagonalBlock::new(1.0 + alpha, sigma, a_i.clone()));
        lower.push(CouplingEntry::scaled(v, 0, 2.0));
        let mut from_hub = CouplingEntry::scaled(x, 0, 2.0 - 2.0 * alpha);
        if let Some(c) = c_i {
            if c.has_forward() {
                from_hub = from_hub.with_forward(sigma, c.clone());
            }
        }
        lower.push(from_hub);
        lower.push(CouplingEntry::scaled(x, v, 2.0));
    }
    let assembly = BlockAssembly::new(m, diag, lower)?;
    // Column block i of C carries the identity on blocks x0, v_i, x_i.
    let mut c_mat = DMatrix::zeros(blocks * n, big_n * n);
    for i in 0..big_n {
        for row_block in [0, 1 + 2 * i, 2 + 2 * i] {
            for j in 0..n {
                c_mat[(row_block * n + j, i * n + j)] = 1.0;
            }
        }
    }
    let factorization = Factorization::from_c(c_mat, layout)?;
    let a0_op = a0.clone();
    let branch_ops: Vec<(OperatorBlock, Option<OperatorBlock>)> = branches.to_vec();
    let direct = DirectUpdate::Reduced(Box::new(move |w, theta| {
        let mut mean = DVector::zeros(n);
        for i in 0..big_n {
            mean += w.rows(i * n, n);
        }
        mean /= big_n as f64;
        let x0 = a0_op.resolvent(gamma / big_n as f64, &mean);
        let mut inclusion = (&mean - &x0) * (big_n as f64 / gamma);
        let mut next = w.clone();
        let mut residual_sq = 0.0;
        for (i, (a_i, c_i)) in branch_ops.iter().enumerate() {
            let w_i = w.rows(i * n, n).clone_owned();
            let mut arg = &x0 * 2.0 - &w_i;
            let mut fwd = DVector::zeros(n);
            if let Some(c) = c_i {
                if c.has_forward() {
                    fwd = c.forward(&x0);
                    arg -= &fwd * gamma;
                }
            }
            let x_i = a_i.resolvent(gamma, &arg);
            let delta = &x_i - &x0;
            residual_sq += delta.norm_squared();
            inclusion += (&arg - &x_i) / gamma + fwd;
            next.rows_mut(i * n, n).copy_from(&(&w_i + &delta * theta));
        }
        DirectStep {
            next,
            residual: residual_sq.sqrt(),
            m_residual: residual_sq.sqrt(),
            primal: x0,
            inclusion_residual: inclusion.norm(),
        }
    }));
    Ok(Scheme {
        config: SchemeConfig {
            kind: SchemeKind::ParallelFdr,
            sigma: Some(sigma),
            tau: None,
            gamma: Some(gamma),
            alpha: Some(alpha),
            theta,
            n_terms: Some(big_n),
            regularity: Regularity {
                mu0: 0.0,
                mu1: 0.0,
                beta,
            },
            l_norm: None,
        },
        assembly,
        factorization,
        alpha,
        direct,
        direct_dim: big_n * n,
    })
}

/// Sequential FDR on 0 ∈ A₀x + Σᵢ(Aᵢx + Cᵢx): a banded chain
/// x₀ = J_{γA₀}(w̃₁),
/// xᵢ = J_{(γ/2)Aᵢ}(x_{i−1} + (w̃_{i+1} − w̃ᵢ)/2 − (γ/2)Cᵢx_{i−1}) inside,
/// x_N = J_{γA_N}(2x_{N−1} − w̃_N − γC_N x_{N−1}),
/// w̃ᵢ⁺ = w̃ᵢ + θ(xᵢ − x_{i−1}).
pub fn build_sequential_fdr(
    a0: &OperatorBlock,
    branches: &[(OperatorBlock, Option<OperatorBlock>)],
    gamma: f64,
    theta: ThetaSchedule,
    n: usize,
) -> Result<Scheme> {
    let big_n = branches.len();
    if big_n == 0 {
        return Err(Error::InconsistentDimensions {
            context: "sequential FDR needs at least one branch".into(),
        });
    }
    let beta = branches
        .iter()
        .filter_map(|(_, c)| c.as_ref().and_then(|c| c.beta))
        .fold(0.0_f64, f64::max);
    validate_fdr_family(SchemeKind::SequentialFdr, gamma, beta, &theta)?;
    let alpha = fdr_alpha(gamma, beta);
    let sigma = gamma * (1.0 + alpha);
    let blocks = 2 * big_n + 1;
    let x_block = |i: usize| 2 * i; // x_i lives at block 2i
    let v_block = |i: usize| 2 * i - 1; // v_i lives at block 2i−1, i ≥ 1
                                        // M = Σᵢ cᵢ cᵢᵀ with cᵢ hitting x_{i−1}, v_i, x_i; interior x blocks
                                        // therefore carry weight 2 on the diagonal.
    let mut pattern = DMatrix::zeros(blocks, blocks);
    for i in 1..=big_n {
        let members = [x_block(i - 1), v_block(i), x_block(i)];
        for &r in &members {
            for &c in &members {
                pattern[(r, c)] += 1.0;
            }
        }
    }
    let layout = vec![n; blocks];
    let m = Preconditioner::from_block_pattern(&pattern, &layout)?;
    let mut diag = Vec::with_capacity(blocks);
    let mut lower = Vec::new();
    diag.push(DiagonalBlock::new(1.0 + alpha, sigma, a0.clone()));
    for (i, (a_i, c_i)) in branches.iter().enumerate() {
        let idx = i + 1; // chain position 1..=N
        let shift = if idx == big_n {
            1.0 + alpha
        } else {
            2.0 + 2.0 * alpha
        };
        diag.push(DiagonalBlock::scalar(1.0)); // v_idx
        diag.push(DiagonalBlock::new(shift, sigma, a_i.clone())); // x_idx
        lower.push(CouplingEntry::scaled(v_block(idx), x_block(idx - 1), 2.0));
        let mut from_prev =
            CouplingEntry::scaled(x_block(idx), x_block(idx - 1), 2.0 - 2.0 * alpha);
        if let Some(c) = c_i {
            if c.has_forward() {
                from_prev = from_prev.with_forward(sigma, c.clone());
            }
        }
        lower.push(from_prev);
        lower.push(CouplingEntry::scaled(x_block(idx), v_block(idx), 2.0));
    }
    let assembly = BlockAssembly::new(m, diag, lower)?;
    let mut c_mat = DMatrix::zeros(blocks * n, big_n * n);
    for i in 1..=big_n {
        for row_block in [x_block(i - 1), v_block(i), x_block(i)] {
            for j in 0..n {
                c_mat[(row_block * n + j, (i - 1) * n + j)] = 1.0;
            }
        }
    }
    let factorization = Factorization::from_c(c_mat, layout)?;
    let a0_op = a0.clone();
    let branch_ops: Vec<(OperatorBlock, Option<OperatorBlock>)> = branches.to_vec();
    let direct = DirectUpdate::Reduced(Box::new(move |w, theta| {
        let w_i = |i: usize| w.rows((i - 1) * n, n).clone_owned();
        let mut xs: Vec<DVector<f64>> = Vec::with_capacity(big_n + 1);
        xs.push(a0_op.resolvent(gamma, &w_i(1)));
        let mut inclusion = (w_i(1) - &xs[0]) / gamma;
        for (i, (a_i, c_i)) in branch_ops.iter().enumerate() {
            let idx = i + 1;
            let prev = xs[idx - 1].clone();
            let mut fwd = DVector::zeros(n);
            if let Some(c) = c_i {
                if c.has_forward() {
                    fwd = c.forward(&prev);
                }
            }
            let (step, arg) = if idx < big_n {
                let arg = &prev + (w_i(idx + 1) - w_i(idx)) / 2.0 - &fwd * (gamma / 2.0);
                (gamma / 2.0, arg)
            } else {
                let arg = &prev * 2.0 - w_i(idx) - &fwd * gamma;
                (gamma, arg)
            };
            let x = a_i.resolvent(step, &arg);
            inclusion += (&arg - &x) / step + &fwd;
            xs.push(x);
        }
        let mut next = w.clone();
        let mut residual_sq = 0.0;
        for idx in 1..=big_n {
            let delta = &xs[idx] - &xs[idx - 1];
            residual_sq += delta.norm_squared();
            next.rows_mut((idx - 1) * n, n)
                .copy_from(&(w_i(idx) + &delta * theta));
        }
        DirectStep {
            next,
            residual: residual_sq.sqrt(),
            m_residual: residual_sq.sqrt(),
            primal: xs[0].clone(),
            inclusion_residual: inclusion.norm(),
        }
    }));
    Ok(Scheme {
        config: SchemeConfig {
            kind: SchemeKind::SequentialFdr,
            sigma: Some(sigma),
            tau: None,
            gamma: Some(gamma),
            alpha: Some(alpha),
            theta,
            n_terms: Some(big_n),
            regularity: Regularity {
                mu0: 0.0,
                mu1: 0.0,
                beta,
            },
            l_norm: None,
        },
        assembly,
        factorization,
        alpha,
        direct,
        direct_dim: big_n * n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{op_l1_shifted, op_quadratic, op_simplex};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn randv(rng: &mut StdRng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    fn quad_op(rng: &mut StdRng, n: usize) -> OperatorBlock {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.6..0.6));
        op_quadratic(&g * g.transpose() * 0.5, randv(rng, n) * 0.1, 0.4)
    }

    #[test]
    fn drs_direct_examples() {
        let n = 2;
        let zero = OperatorBlock::zero();
        let s = build_drs(&zero, &zero, 1.0, ThetaSchedule::Constant(1.0), n).unwrap();
        let w = DVector::from_vec(vec![0.7, -0.4]);
        let step = s.direct_step(&w, 1.0);
        assert!((step.next - &w).norm() <= 1e-14);

        let a = OperatorBlock::constant_point(DVector::from_vec(vec![2.0, -1.0]));
        let s = build_drs(&a, &zero, 1.0, ThetaSchedule::Constant(1.0), n).unwrap();
        let step = s.direct_step(&w, 1.0);
        // w + (J_B(2a − w) − a) with J_B = I gives a.
        assert!((step.next - DVector::from_vec(vec![2.0, -1.0])).norm() <= 1e-14);
    }

    #[test]
    fn drs_rejects_nonpositive_step() {
        let zero = OperatorBlock::zero();
        assert!(matches!(
            build_drs(&zero, &zero, 0.0, ThetaSchedule::Constant(1.0), 1),
            Err(Error::NonPositiveStep { .. })
        ));
    }

    fn assert_direct_matches_block(scheme: &Scheme, seed: u64, iters: usize) {
        let mut rng = StdRng::seed_from_u64(seed);
        let w0 = randv(&mut rng, scheme.direct_dim());
        let runs = scheme.run_both(&w0, iters, None).unwrap();
        assert!(
            runs.max_deviation <= 1e-12,
            "{:?} deviated by {:.3e}",
            scheme.kind(),
            runs.max_deviation
        );
    }

    #[test]
    fn drs_block_and_direct_modes_agree() {
        let mut rng = StdRng::seed_from_u64(100);
        let a = quad_op(&mut rng, 3);
        let b = op_l1_shifted(randv(&mut rng, 3));
        let s = build_drs(&a, &b, 0.8, ThetaSchedule::Constant(1.2), 3).unwrap();
        assert_direct_matches_block(&s, 1, 100);
    }

    #[test]
    fn cp_direct_updates_match_displayed_iteration() {
        let mut rng = StdRng::seed_from_u64(101);
        let n = 3;
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
        let l_norm = operator_norm(&l, 500, 1e-14);
        let tau = 1.0 / l_norm;
        let sigma = 1.0 / l_norm; // degenerate: τσ‖L‖² = 1
        let a = quad_op(&mut rng, n);
        let b = op_l1_shifted(randv(&mut rng, n));
        let s = build_cp(&a, &b, l.clone(), tau, sigma, ThetaSchedule::Constant(1.0)).unwrap();
        let u = randv(&mut rng, 2 * n);
        let step = s.direct_step(&u, 1.0);
        let x = DVector::from_column_slice(&u.as_slice()[..n]);
        let y = DVector::from_column_slice(&u.as_slice()[n..]);
        let x_want = a.resolvent(tau, &(&x - l.transpose() * &y * tau));
        let arg = &y + &l * (&x_want * 2.0 - &x) * sigma;
        let y_want = crate::operators::resolvent_of_inverse(sigma, &b, &arg).unwrap();
        assert!((step.next.rows(0, n).clone_owned() - x_want).norm() <= 1e-12);
        assert!((step.next.rows(n, n).clone_owned() - y_want).norm() <= 1e-12);
    }

    #[test]
    fn cp_block_and_direct_modes_agree() {
        let mut rng = StdRng::seed_from_u64(102);
        let n = 3;
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
        let l_norm = operator_norm(&l, 500, 1e-14);
        let a = quad_op(&mut rng, n);
        let b = op_l1_shifted(randv(&mut rng, n));
        let s = build_cp(
            &a,
            &b,
            l,
            0.9 / l_norm,
            1.0 / l_norm,
            ThetaSchedule::Constant(1.0),
        )
        .unwrap();
        assert_direct_matches_block(&s, 2, 100);
    }

    #[test]
    fn degenerate_cp_converges_on_scalar_l1_problem() {
        // min |x - 1| + g(x) with g = 0 and L = 1 at the degenerate edge.
        let a = op_l1_shifted(DVector::from_vec(vec![1.0]));
        let b = OperatorBlock::zero();
        let s = build_cp(
            &a,
            &b,
            DMatrix::identity(1, 1),
            1.0,
            1.0,
            ThetaSchedule::Constant(1.0),
        )
        .unwrap();
        let trace = s
            .run_direct(
                &DVector::from_vec(vec![4.0, -2.0]),
                &StoppingRule::absolute(1e-10, 10_000),
                None,
            )
            .unwrap();
        assert_eq!(trace.status, TraceStatus::Converged);
        let u = trace.final_reduced.unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn cp_rejects_step_bound_violation() {
        let l = DMatrix::identity(2, 2);
        let zero = OperatorBlock::zero();
        assert!(matches!(
            build_cp(&zero, &zero, l, 1.1, 1.0, ThetaSchedule::Constant(1.0)),
            Err(Error::StepBoundViolated { .. })
        ));
    }

    #[test]
    fn operator_norm_matches_svd() {
        let mut rng = StdRng::seed_from_u64(103);
        for _ in 0..20 {
            let l = DMatrix::from_fn(5, 4, |_, _| rng.gen_range(-2.0..2.0));
            let want = l.clone().svd(false, false).singular_values[0];
            let got = operator_norm(&l, 2000, 1e-14);
            assert_abs_diff_eq!(got, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn relaxed_drs_theta_bounds() {
        assert_abs_diff_eq!(relaxed_drs_theta_max(1.0, 0.0, 0.0), 2.0);
        assert_abs_diff_eq!(relaxed_drs_theta_max(1.0, 1.0, 1.0), 3.0);
        // Monotone increasing in each modulus.
        assert!(relaxed_drs_theta_max(1.0, 2.0, 1.0) > relaxed_drs_theta_max(1.0, 1.0, 1.0));
    }

    #[test]
    fn relaxed_drs_block_and_direct_modes_agree() {
        let mut rng = StdRng::seed_from_u64(104);
        let a0 = quad_op(&mut rng, 3);
        let a1 = quad_op(&mut rng, 3);
        let s =
            build_relaxed_drs(&a0, &a1, 0.9, ThetaSchedule::Constant(2.0), 0.4, 0.4, 3).unwrap();
        assert!(s.alpha < 0.0);
        assert_direct_matches_block(&s, 3, 100);
    }

    #[test]
    fn peaceman_rachford_requires_strong_monotonicity() {
        let mut rng = StdRng::seed_from_u64(105);
        let a0 = quad_op(&mut rng, 2);
        let a1 = quad_op(&mut rng, 2);
        assert!(matches!(
            build_relaxed_drs(&a0, &a1, 1.0, ThetaSchedule::Constant(2.0), 0.0, 1.0, 2),
            Err(Error::PeacemanRachfordRequiresStrongMonotonicity)
        ));
    }

    #[test]
    fn peaceman_rachford_converges_on_strongly_monotone_pair() {
        // θ ≡ 2 with μ₀ = μ₁ = 1, γ = 1: θ_max = 3.
        let n = 3;
        let a0 = OperatorBlock::linear(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 2.0, 3.0,
        ])));
        let a1 = OperatorBlock::linear(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 1.5, 2.0,
        ])));
        let s =
            build_relaxed_drs(&a0, &a1, 1.0, ThetaSchedule::Constant(2.0), 1.0, 1.0, n).unwrap();
        let w0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let trace = s
            .run_direct(&w0, &StoppingRule::absolute(1e-10, 5000), None)
            .unwrap();
        assert_eq!(trace.status, TraceStatus::Converged);
        let x = s.primal(trace.final_reduced.as_ref().unwrap());
        assert!(x.norm() <= 1e-9, "solution of 0 = (A0+A1)x is x = 0");
    }

    #[test]
    fn fdr_bounds_and_parameter_gates() {
        assert_abs_diff_eq!(fdr_theta_max(1.0, 1.0), 1.5);
        assert_abs_diff_eq!(fdr_theta_max(1.0, 0.0), 2.0);
        assert_abs_diff_eq!(fdr_alpha(1.0, 1.0), 1.0 / 3.0);

        let mut rng = StdRng::seed_from_u64(106);
        let a0 = op_l1_shifted(randv(&mut rng, 2));
        let a1 = op_simplex();
        let c = OperatorBlock::zero()
            .with_beta(2.0)
            .with_forward(|x| x * 2.0);
        assert!(matches!(
            build_fdr(&a0, &a1, &c, 2.0, ThetaSchedule::Constant(1.0), 2),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(matches!(
            build_fdr(&a0, &a1, &c, 1.0, ThetaSchedule::Constant(1.8), 2),
            Err(Error::ThetaOutOfRange { .. })
        ));
    }

    #[test]
    fn fdr_with_zero_forward_term_is_drs() {
        let mut rng = StdRng::seed_from_u64(107);
        let a0 = quad_op(&mut rng, 3);
        let a1 = op_l1_shifted(randv(&mut rng, 3));
        let gamma = 0.7;
        let fdr = build_fdr(
            &a0,
            &a1,
            &OperatorBlock::zero(),
            gamma,
            ThetaSchedule::Constant(1.1),
            3,
        )
        .unwrap();
        let drs = build_drs(&a0, &a1, gamma, ThetaSchedule::Constant(1.1), 3).unwrap();
        let mut w_f = randv(&mut rng, 3);
        let mut w_d = w_f.clone();
        for _ in 0..100 {
            let sf = fdr.direct_step(&w_f, 1.1);
            let sd = drs.direct_step(&w_d, 1.1);
            assert!((&sf.next - &sd.next).norm() <= 1e-12);
            w_f = sf.next;
            w_d = sd.next;
        }
    }

    #[test]
    fn fdr_with_zero_resolvents_is_relaxed_forward_step() {
        // A0 = A1 = 0: w⁺ = w − θγC(w).
        let n = 2;
        let c = OperatorBlock::zero()
            .with_forward(|x| x * 0.5)
            .with_beta(0.5);
        let zero = OperatorBlock::zero();
        let gamma = 1.0;
        let s = build_fdr(&zero, &zero, &c, gamma, ThetaSchedule::Constant(1.0), n).unwrap();
        let w = DVector::from_vec(vec![2.0, -4.0]);
        let step = s.direct_step(&w, 1.0);
        let want = &w - (&w * 0.5) * gamma;
        assert!((step.next - want).norm() <= 1e-14);
    }

    #[test]
    fn fdr_block_and_direct_modes_agree() {
        let mut rng = StdRng::seed_from_u64(108);
        let a0 = quad_op(&mut rng, 3);
        let a1 = op_l1_shifted(randv(&mut rng, 3));
        let g = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-0.4..0.4));
        let c = op_quadratic(&g * g.transpose(), randv(&mut rng, 3) * 0.1, 0.2);
        let beta = c.beta.unwrap();
        let s = build_fdr(&a0, &a1, &c, 1.0 / beta, ThetaSchedule::Constant(1.0), 3).unwrap();
        assert!(s.alpha > 0.0);
        assert_direct_matches_block(&s, 4, 100);
    }

    fn random_branches(
        rng: &mut StdRng,
        n: usize,
        count: usize,
    ) -> Vec<(OperatorBlock, Option<OperatorBlock>)> {
        (0..count)
            .map(|i| {
                let a = if i % 2 == 0 {
                    op_l1_shifted(randv(rng, n))
                } else {
                    quad_op(rng, n)
                };
                let c = if i == 0 {
                    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
                    Some(op_quadratic(&g * g.transpose(), DVector::zeros(n), 0.1))
                } else {
                    None
                };
                (a, c)
            })
            .collect()
    }

    #[test]
    fn parallel_fdr_block_and_direct_modes_agree() {
        let mut rng = StdRng::seed_from_u64(109);
        let n = 3;
        let a0 = quad_op(&mut rng, n);
        let branches = random_branches(&mut rng, n, 3);
        let beta = branches[0].1.as_ref().unwrap().beta.unwrap();
        let s = build_parallel_fdr(&a0, &branches, 0.8 / beta, ThetaSchedule::Constant(1.0), n)
            .unwrap();
        assert_eq!(s.direct_dim(), 3 * n);
        assert_direct_matches_block(&s, 5, 100);
    }

    #[test]
    fn sequential_fdr_block_and_direct_modes_agree() {
        let mut rng = StdRng::seed_from_u64(110);
        let n = 3;
        let a0 = quad_op(&mut rng, n);
        let branches = random_branches(&mut rng, n, 3);
        let beta = branches[0].1.as_ref().unwrap().beta.unwrap();
        let s = build_sequential_fdr(&a0, &branches, 0.8 / beta, ThetaSchedule::Constant(1.0), n)
            .unwrap();
        assert_eq!(s.direct_dim(), 3 * n);
        assert_direct_matches_block(&s, 6, 100);
    }

    #[test]
    fn n_equals_one_variants_match_fdr() {
        let mut rng = StdRng::seed_from_u64(111);
        let n = 3;
        let a0 = quad_op(&mut rng, n);
        let a1 = op_l1_shifted(randv(&mut rng, n));
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
        let c = op_quadratic(&g * g.transpose(), DVector::zeros(n), 0.3);
        let gamma = 0.9 / c.beta.unwrap();
        let theta = ThetaSchedule::Constant(1.0);
        let fdr = build_fdr(&a0, &a1, &c, gamma, theta.clone(), n).unwrap();
        let branches = vec![(a1.clone(), Some(c.clone()))];
        let par = build_parallel_fdr(&a0, &branches, gamma, theta.clone(), n).unwrap();
        let seq = build_sequential_fdr(&a0, &branches, gamma, theta, n).unwrap();
        let mut w = randv(&mut rng, n);
        let mut wp = w.clone();
        let mut ws = w.clone();
        for _ in 0..100 {
            let sf = fdr.direct_step(&w, 1.0);
            let sp = par.direct_step(&wp, 1.0);
            let ss = seq.direct_step(&ws, 1.0);
            assert!((&sf.next - &sp.next).norm() <= 1e-12);
            assert!((&sf.next - &ss.next).norm() <= 1e-12);
            w = sf.next;
            wp = sp.next;
            ws = ss.next;
        }
    }

    #[test]
    fn sequential_fdr_two_branches_zero_operators() {
        // All operators zero: x0 = w̃1, x1 = x0 + (w̃2 − w̃1)/2, x2 = 2x1 − w̃2.
        let n = 1;
        let zero = OperatorBlock::zero();
        let branches = vec![(zero.clone(), None), (zero.clone(), None)];
        let s =
            build_sequential_fdr(&zero, &branches, 1.0, ThetaSchedule::Constant(1.0), n).unwrap();
        let w = DVector::from_vec(vec![1.0, 3.0]);
        let step = s.direct_step(&w, 1.0);
        let x0 = 1.0;
        let x1 = x0 + (3.0 - 1.0) / 2.0;
        let x2 = 2.0 * x1 - 3.0;
        assert_abs_diff_eq!(step.next[0], 1.0 + (x1 - x0), epsilon = 1e-14);
        assert_abs_diff_eq!(step.next[1], 3.0 + (x2 - x1), epsilon = 1e-14);
        // A fixed point needs w̃1 = w̃2 = x0.
        let fix = DVector::from_vec(vec![0.4, 0.4]);
        let fstep = s.direct_step(&fix, 1.0);
        assert!((fstep.next - &fix).norm() <= 1e-14);
    }

    #[test]
    fn genbf_shape_with_zero_hub() {
        // A0 = 0: the hub resolvent is the identity, x0 is the branch mean.
        let n = 2;
        let mut rng = StdRng::seed_from_u64(112);
        let branches = random_branches(&mut rng, n, 3);
        let beta = branches[0].1.as_ref().unwrap().beta.unwrap();
        let s = build_parallel_fdr(
            &OperatorBlock::zero(),
            &branches,
            1.0 / beta,
            ThetaSchedule::Constant(1.0),
            n,
        )
        .unwrap();
        let w = randv(&mut rng, 3 * n);
        let step = s.direct_step(&w, 1.0);
        let mean = (w.rows(0, n) + w.rows(n, n) + w.rows(2 * n, n)) / 3.0;
        assert!((step.primal - mean).norm() <= 1e-14);
    }

    #[test]
    fn validate_params_reports_formula_violations() {
        let cfg = SchemeConfig {
            kind: SchemeKind::Fdr,
            sigma: None,
            tau: None,
            gamma: Some(3.0),
            alpha: None,
            theta: ThetaSchedule::Constant(1.0),
            n_terms: None,
            regularity: Regularity {
                mu0: 0.0,
                mu1: 0.0,
                beta: 2.0,
            },
            l_norm: None,
        };
        let v = validate_params(&cfg).unwrap();
        assert!(!v.ok());
        assert!(v.violations.iter().any(|b| b.bound.contains("4/beta")));
    }

    #[test]
    fn boundary_theta_warns_but_passes() {
        let cfg = SchemeConfig {
            kind: SchemeKind::Fdr,
            sigma: None,
            tau: None,
            gamma: Some(1.0),
            alpha: None,
            theta: ThetaSchedule::Constant(1.5),
            n_terms: None,
            regularity: Regularity {
                mu0: 0.0,
                mu1: 0.0,
                beta: 1.0,
            },
            l_norm: None,
        };
        let v = validate_params(&cfg).unwrap();
        assert!(v.ok());
        assert!(!v.warnings.is_empty());
    }

    #[test]
    fn config_json_roundtrip() {
        let text = r#"{"kind": "fdr", "gamma": 0.5, "theta": 1.0, "regularity": {"beta": 1.0}}"#;
        let cfg = SchemeConfig::from_json(text).unwrap();
        assert_eq!(cfg.kind, SchemeKind::Fdr);
        assert_eq!(cfg.gamma, Some(0.5));
        assert_eq!(cfg.theta, ThetaSchedule::Constant(1.0));
        let back = SchemeConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back.kind, cfg.kind);
        assert_eq!(back.regularity.beta, 1.0);
    }

    #[test]
    fn direct_update_matches_reduced_engine() {
        // The production update is the reduced proximal point iteration:
        // (1+α)·w̃^k equals the rppp iterate with λ = (1+α)θ, every step.
        use crate::ppp::{rppp_iterate, IterateOptions, RelaxationSchedule, StoppingRule};
        let mut rng = StdRng::seed_from_u64(114);
        let n = 3;
        let a0 = quad_op(&mut rng, n);
        let a1 = op_l1_shifted(randv(&mut rng, n));
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
        let c = op_quadratic(&g * g.transpose(), DVector::zeros(n), 0.2);
        let theta = 1.1;
        let scheme = build_fdr(
            &a0,
            &a1,
            &c,
            0.8 / c.beta.unwrap(),
            ThetaSchedule::Constant(theta),
            n,
        )
        .unwrap();
        let w0_tilde = randv(&mut rng, n);
        let w0 = &w0_tilde * (1.0 + scheme.alpha);
        let sched = RelaxationSchedule::constant(theta * (1.0 + scheme.alpha)).unwrap();
        let reduced = rppp_iterate(
            &scheme.assembly,
            &scheme.factorization,
            &w0,
            &sched,
            &StoppingRule::iterations_only(100),
            &IterateOptions {
                record_iterates: true,
                ..Default::default()
            },
        )
        .unwrap();
        let mut w = w0_tilde;
        for (k, w_engine) in reduced.snapshots_reduced.unwrap().iter().enumerate() {
            let err = (&w * (1.0 + scheme.alpha) - w_engine).norm();
            assert!(err <= 1e-12, "deviation {err:.3e} at iteration {k}");
            w = scheme.direct_step(&w, theta).next;
        }
    }

    #[test]
    fn zero_inclusion_residual_at_converged_point() {
        let mut rng = StdRng::seed_from_u64(113);
        let n = 3;
        let a0 = quad_op(&mut rng, n);
        let a1 = op_l1_shifted(randv(&mut rng, n));
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
        let c = op_quadratic(&g * g.transpose(), DVector::zeros(n), 0.2);
        let gamma = 1.0 / c.beta.unwrap();
        let s = build_fdr(&a0, &a1, &c, gamma, ThetaSchedule::Constant(1.0), n).unwrap();
        let trace = s
            .run_direct(
                &randv(&mut rng, n),
                &StoppingRule::absolute(1e-11, 100_000),
                None,
            )
            .unwrap();
        assert_eq!(trace.status, TraceStatus::Converged);
        let w = trace.final_reduced.unwrap();
        assert!(s.inclusion_residual(&w) <= 1e-8);
    }
}

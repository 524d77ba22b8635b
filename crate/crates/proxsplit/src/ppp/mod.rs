//! Degenerate preconditioned proximal point engine.
//!
//! An assembly carries a preconditioner M and a block operator A such that
//! M + A is block lower triangular with i-th diagonal block c_i·I + s_i·A_i,
//! c_i > 0. That structure makes T = (M + A)⁻¹M single-valued with full
//! domain, and one evaluation of T is a forward substitution whose i-th step
//! is a single resolvent call. The reduced operator T̃ = Cᵀ(M + A)⁻¹C drives
//! the equivalent iteration w ← w + λ(T̃w − w) on the smaller space, with
//! w^k = Cᵀu^k along the whole run.

mod monitor;
mod trace;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::OperatorBlock;
use crate::spaces::{BlockVector, Factorization, Preconditioner};

pub use monitor::{
    check_firm_nonexpansive, check_graph_monotone, check_woodbury, monitor_fejer, FejerReport,
    SampleReport,
};
pub use trace::{IterationTrace, TraceRecord, TraceStatus};

/// Diagonal block of M + A: the shifted operator c·I + s·A.
///
/// Solving (c·I + s·A) y ∋ r reduces to y = J_{(s/c)A}(r/c).
#[derive(Debug, Clone)]
pub struct DiagonalBlock {
    pub shift: f64,
    pub step: f64,
    pub op: Option<OperatorBlock>,
}

impl DiagonalBlock {
    pub fn new(shift: f64, step: f64, op: OperatorBlock) -> Self {
        Self {
            shift,
            step,
            op: Some(op),
        }
    }

    /// Block with no operator part, i.e. c·I alone.
    pub fn scalar(shift: f64) -> Self {
        Self {
            shift,
            step: 0.0,
            op: None,
        }
    }

    fn resolve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let scaled = rhs / self.shift;
        match &self.op {
            Some(op) if self.step > 0.0 => op.resolvent(self.step / self.shift, &scaled),
            _ => scaled,
        }
    }
}

/// Linear part of a strictly-lower coupling entry.
#[derive(Debug, Clone)]
pub enum LinearCoupling {
    /// c · I (blocks of equal size).
    Scaled(f64),
    /// A general matrix block.
    Matrix(DMatrix<f64>),
}

/// One strictly-lower-triangular entry of M + A: row `row` receives
/// `linear(u_col) + fscale · F(u_col)` before its diagonal resolve.
#[derive(Debug, Clone)]
pub struct CouplingEntry {
    pub row: usize,
    pub col: usize,
    pub linear: LinearCoupling,
    pub forward: Option<(f64, OperatorBlock)>,
}

impl CouplingEntry {
    pub fn scaled(row: usize, col: usize, c: f64) -> Self {
        Self {
            row,
            col,
            linear: LinearCoupling::Scaled(c),
            forward: None,
        }
    }

    pub fn matrix(row: usize, col: usize, m: DMatrix<f64>) -> Self {
        Self {
            row,
            col,
            linear: LinearCoupling::Matrix(m),
            forward: None,
        }
    }

    pub fn with_forward(mut self, scale: f64, op: OperatorBlock) -> Self {
        self.forward = Some((scale, op));
        self
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = match &self.linear {
            LinearCoupling::Scaled(c) => x * *c,
            LinearCoupling::Matrix(m) => m * x,
        };
        if let Some((scale, op)) = &self.forward {
            out += op.forward(x) * *scale;
        }
        out
    }
}

/// Block representation of a preconditioned inclusion: the pair (M, A) with
/// M + A block lower triangular and resolvable diagonal.
#[derive(Debug, Clone)]
pub struct BlockAssembly {
    m: Preconditioner,
    diag: Vec<DiagonalBlock>,
    lower: Vec<CouplingEntry>,
    layout: Vec<usize>,
}

impl BlockAssembly {
    pub fn new(
        m: Preconditioner,
        diag: Vec<DiagonalBlock>,
        lower: Vec<CouplingEntry>,
    ) -> Result<Self> {
        let layout = m.layout().to_vec();
        if diag.len() != layout.len() {
            return Err(Error::InconsistentDimensions {
                context: format!(
                    "{} diagonal blocks for {} layout blocks",
                    diag.len(),
                    layout.len()
                ),
            });
        }
        for d in &diag {
            if d.shift <= 0.0 {
                return Err(Error::Config(format!(
                    "diagonal shift must be positive, got {}",
                    d.shift
                )));
            }
        }
        for e in &lower {
            if e.col >= e.row || e.row >= layout.len() {
                return Err(Error::Config(format!(
                    "coupling ({}, {}) is not strictly lower triangular",
                    e.row, e.col
                )));
            }
        }
        Ok(Self {
            m,
            diag,
            lower,
            layout,
        })
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.m
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn num_blocks(&self) -> usize {
        self.layout.len()
    }

    /// Applies (M + A)⁻¹ to `rhs` by forward substitution over the blocks.
    pub fn solve_lower(&self, rhs: &BlockVector) -> Result<BlockVector> {
        if rhs.total_dim() != self.m.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.m.dim(),
                got: rhs.total_dim(),
            });
        }
        let mut solved: Vec<DVector<f64>> = Vec::with_capacity(self.num_blocks());
        for i in 0..self.num_blocks() {
            let mut acc = rhs.block(i).clone();
            for e in self.lower.iter().filter(|e| e.row == i) {
                acc -= e.apply(&solved[e.col]);
            }
            solved.push(self.diag[i].resolve(&acc));
        }
        Ok(BlockVector::new(solved))
    }

    /// T(u) = (M + A)⁻¹ M u.
    pub fn evaluate_t(&self, u: &BlockVector) -> Result<BlockVector> {
        self.solve_lower(&self.m.apply(u)?)
    }

    /// T̃(w) = Cᵀ (M + A)⁻¹ C w on the reduced space.
    pub fn evaluate_ttilde(&self, f: &Factorization, w: &DVector<f64>) -> Result<DVector<f64>> {
        f.apply_cstar(&self.solve_lower(&f.apply_c(w)?)?)
    }
}

/// Relaxation parameters λ_k ∈ [0, 2].
///
/// Convergence needs Σ λ_k(2 − λ_k) = +∞; a constant value in (0, 2)
/// certifies this automatically, variable sequences carry a caller
/// declaration instead.
#[derive(Debug, Clone)]
pub enum RelaxationSchedule {
    Constant(f64),
    Sequence { values: Vec<f64>, divergent: bool },
}

impl RelaxationSchedule {
    pub fn constant(value: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&value) {
            return Err(Error::InvalidSchedule {
                detail: format!("relaxation {value} outside [0, 2]"),
            });
        }
        Ok(Self::Constant(value))
    }

    pub fn sequence(values: Vec<f64>, divergent: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSchedule {
                detail: "empty relaxation sequence".into(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=2.0).contains(*v)) {
            return Err(Error::InvalidSchedule {
                detail: format!("relaxation {bad} outside [0, 2]"),
            });
        }
        Ok(Self::Sequence { values, divergent })
    }

    /// λ_k; a finite sequence repeats its last value past the end.
    pub fn value(&self, k: usize) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Sequence { values, .. } => values[k.min(values.len() - 1)],
        }
    }

    /// Whether Σ λ_k(2 − λ_k) = +∞ is certified.
    pub fn certified_divergent(&self) -> bool {
        match self {
            Self::Constant(v) => *v > 0.0 && *v < 2.0,
            Self::Sequence { divergent, .. } => *divergent,
        }
    }

    /// Uniform rescaling, used to map θ-schedules to λ = (1+α)θ.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self {
            Self::Constant(v) => Self::constant(v * factor),
            Self::Sequence { values, divergent } => {
                Self::sequence(values.iter().map(|v| v * factor).collect(), *divergent)
            }
        }
    }
}

/// Termination test for the fixed-point loops.
#[derive(Debug, Clone, Copy)]
pub struct StoppingRule {
    pub tol: f64,
    pub max_iters: usize,
    /// When set, compare the residual against `tol` alone instead of the
    /// default relative test ‖Tu − u‖ ≤ tol · (1 + ‖u‖).
    pub absolute: bool,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100_000,
            absolute: false,
        }
    }
}

impl StoppingRule {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self {
            tol,
            max_iters,
            absolute: false,
        }
    }

    pub fn absolute(tol: f64, max_iters: usize) -> Self {
        Self {
            tol,
            max_iters,
            absolute: true,
        }
    }

    /// Never stop on the residual; run exactly `iters` iterations.
    pub fn iterations_only(iters: usize) -> Self {
        Self {
            tol: f64::NEG_INFINITY,
            max_iters: iters,
            absolute: true,
        }
    }

    fn met(&self, residual: f64, iterate_norm: f64) -> bool {
        if self.absolute {
            residual <= self.tol
        } else {
            residual <= self.tol * (1.0 + iterate_norm)
        }
    }
}

/// Extras for the iteration loops: reference points and snapshot recording.
#[derive(Debug, Clone, Default)]
pub struct IterateOptions {
    /// Distance to this point (in the M-seminorm for block runs, Euclidean
    /// for reduced runs) is recorded per iteration.
    pub reference_full: Option<BlockVector>,
    pub reference_reduced: Option<DVector<f64>>,
    /// Record every iterate; needed by the Fejér monitor.
    pub record_iterates: bool,
}

/// Runs u^{k+1} = u^k + λ_k (T u^k − u^k) until the stopping rule fires.
pub fn ppp_iterate(
    asm: &BlockAssembly,
    u0: &BlockVector,
    sched: &RelaxationSchedule,
    stop: &StoppingRule,
    opts: &IterateOptions,
) -> Result<IterationTrace> {
    let start = Instant::now();
    let mut trace = IterationTrace::new(TraceStatus::MaxIters);
    let mut snapshots: Vec<BlockVector> = Vec::new();
    let mut u = u0.clone();
    let m = asm.preconditioner();
    for k in 0..=stop.max_iters {
        let tu = asm.evaluate_t(&u)?;
        let diff = tu.sub(&u)?;
        let residual = diff.norm();
        let m_residual = m.seminorm(&diff)?;
        let dist_ref = match &opts.reference_full {
            Some(r) => Some(m.seminorm(&u.sub(r)?)?),
            None => None,
        };
        trace.records.push(TraceRecord {
            k,
            residual,
            m_residual,
            dist_ref,
            time_s: start.elapsed().as_secs_f64(),
        });
        if opts.record_iterates {
            snapshots.push(u.clone());
        }
        if stop.met(residual, u.norm()) {
            trace.status = TraceStatus::Converged;
            break;
        }
        if k == stop.max_iters {
            break;
        }
        u = u.axpy(sched.value(k), &diff)?;
    }
    trace.final_full = Some(u);
    if opts.record_iterates {
        trace.snapshots_full = Some(snapshots);
    }
    Ok(trace)
}

/// Reduced loop w^{k+1} = w^k + λ_k (T̃ w^k − w^k); equivalent to
/// [`ppp_iterate`] through w^k = Cᵀ u^k whenever w⁰ = Cᵀ u⁰.
pub fn rppp_iterate(
    asm: &BlockAssembly,
    f: &Factorization,
    w0: &DVector<f64>,
    sched: &RelaxationSchedule,
    stop: &StoppingRule,
    opts: &IterateOptions,
) -> Result<IterationTrace> {
    let start = Instant::now();
    let mut trace = IterationTrace::new(TraceStatus::MaxIters);
    let mut snapshots: Vec<DVector<f64>> = Vec::new();
    let mut w = w0.clone();
    if f.rank() == 0 {
        // Rank-zero preconditioner: the reduced space is trivial.
        trace.status = TraceStatus::Converged;
        trace.final_reduced = Some(w);
        return Ok(trace);
    }
    for k in 0..=stop.max_iters {
        let tw = asm.evaluate_ttilde(f, &w)?;
        let diff = &tw - &w;
        let residual = diff.norm();
        let dist_ref = opts.reference_reduced.as_ref().map(|r| (&w - r).norm());
        trace.records.push(TraceRecord {
            k,
            residual,
            // ‖T̃w − w‖ in the reduced space equals ‖Tu − u‖_M.
            m_residual: residual,
            dist_ref,
            time_s: start.elapsed().as_secs_f64(),
        });
        if opts.record_iterates {
            snapshots.push(w.clone());
        }
        if stop.met(residual, w.norm()) {
            trace.status = TraceStatus::Converged;
            break;
        }
        if k == stop.max_iters {
            break;
        }
        w += diff * sched.value(k);
    }
    trace.final_reduced = Some(w);
    if opts.record_iterates {
        trace.snapshots_reduced = Some(snapshots);
    }
    Ok(trace)
}

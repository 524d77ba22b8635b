//! Markowitz portfolio benchmark with transaction costs:
//!
//!   min_{w ∈ Δ}  wᵀΣw − rᵀw + (δ/2)‖w‖² + Σ|wᵢ−(w₀)ᵢ| + Σ|wᵢ−(w₀)ᵢ|^{3/2}
//!
//! split into a smooth part f (optionally halved or separated into the Σ and
//! ridge pieces) and three nonsmooth terms handled by their proxes. Six
//! solver variants run the same inclusion through the sequential and
//! parallel generalizations of forward DRS, against a cross-checked
//! reference solution.

mod data;

pub use data::{estimate, load_returns, save_returns, synthetic_data, ReturnsData};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::{
    grad_quadratic, op_l1_shifted, op_pow32, op_quadratic, op_simplex, project_simplex,
    OperatorBlock,
};
use crate::ppp::{IterationTrace, StoppingRule, TraceStatus};
use crate::schemes::{
    build_parallel_fdr, build_sequential_fdr, Scheme, SchemeConfig, ThetaSchedule,
};

/// Which Lipschitz constant of the smooth part drives the step bounds.
///
/// `GradientOfF` uses the constant of ∇f₁ = 2Σw − r, which is 2λ_max(Σ);
/// `LargestEigenvalue` uses λ_max(Σ) itself, i.e. the constant of w ↦ Σw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum LipschitzConvention {
    #[default]
    GradientOfF,
    LargestEigenvalue,
}

/// The assembled optimization problem.
#[derive(Debug, Clone)]
pub struct PortfolioProblem {
    pub sigma: DMatrix<f64>,
    pub r: DVector<f64>,
    pub delta: f64,
    pub w0: DVector<f64>,
    pub lambda_max: f64,
    /// Lipschitz constant of ∇f = 2Σw − r + δw.
    pub l_f: f64,
}

impl PortfolioProblem {
    pub fn dim(&self) -> usize {
        self.r.len()
    }

    /// The "L" of the covariance term under the chosen convention.
    pub fn l_sigma(&self, convention: LipschitzConvention) -> f64 {
        match convention {
            LipschitzConvention::GradientOfF => 2.0 * self.lambda_max,
            LipschitzConvention::LargestEigenvalue => self.lambda_max,
        }
    }

    /// Objective f(w) + g₀(w) + g₁(w); the simplex indicator is handled by
    /// feasibility, not by this value.
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        let quad = (&self.sigma * w).dot(w) - self.r.dot(w) + 0.5 * self.delta * w.norm_squared();
        let trans: f64 = (0..self.dim())
            .map(|i| {
                let t = (w[i] - self.w0[i]).abs();
                t + t.powf(1.5)
            })
            .sum();
        quad + trans
    }

    /// A subgradient of f + g₀ + g₁ (sign 0 taken at the l1 kinks).
    pub fn subgradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = grad_quadratic(&self.sigma, &self.r, self.delta, w)
            .expect("dimensions fixed at construction");
        for i in 0..self.dim() {
            let t = w[i] - self.w0[i];
            if t != 0.0 {
                g[i] += t.signum() * (1.0 + 1.5 * t.abs().sqrt());
            }
        }
        g
    }

    pub fn op_g0(&self) -> OperatorBlock {
        op_l1_shifted(self.w0.clone())
    }

    pub fn op_g1(&self) -> OperatorBlock {
        op_pow32(self.w0.clone())
    }

    pub fn op_g2(&self) -> OperatorBlock {
        op_simplex()
    }

    /// Prox-capable block for the full smooth part f.
    pub fn op_f_prox(&self) -> OperatorBlock {
        op_quadratic(self.sigma.clone(), self.r.clone(), self.delta)
    }

    /// Forward-only block for scale·∇f with the conventioned constant.
    pub fn op_grad_f(&self, scale: f64, convention: LipschitzConvention) -> OperatorBlock {
        let (sigma, r, delta) = (self.sigma.clone(), self.r.clone(), self.delta);
        let beta = scale * (self.l_sigma(convention) + self.delta);
        OperatorBlock::forward_only(
            move |w| {
                grad_quadratic(&sigma, &r, delta, w).expect("dimensions fixed at construction")
                    * scale
            },
            beta,
        )
    }

    /// Forward-only block for ∇f₁ = 2Σw − r.
    pub fn op_grad_f1(&self, convention: LipschitzConvention) -> OperatorBlock {
        let (sigma, r) = (self.sigma.clone(), self.r.clone());
        OperatorBlock::forward_only(move |w| &sigma * w * 2.0 - &r, self.l_sigma(convention))
    }

    /// Forward-only block for ∇f₂ = δw.
    pub fn op_grad_f2(&self) -> OperatorBlock {
        let delta = self.delta;
        OperatorBlock::forward_only(move |w| w * delta, delta)
    }
}

/// Assembles the problem from estimated moments. λ_max is recomputed from
/// the (symmetrized) covariance.
pub fn build_problem(
    r: DVector<f64>,
    sigma: DMatrix<f64>,
    delta: f64,
    w0: DVector<f64>,
) -> Result<PortfolioProblem> {
    let n = r.len();
    if sigma.nrows() != n || sigma.ncols() != n || w0.len() != n {
        return Err(Error::InconsistentDimensions {
            context: format!(
                "r has {n} entries, sigma is {}x{}, w0 has {}",
                sigma.nrows(),
                sigma.ncols(),
                w0.len()
            ),
        });
    }
    if delta <= 0.0 {
        return Err(Error::InvalidRegularity {
            detail: format!("ridge weight delta must be positive, got {delta}"),
        });
    }
    let sym = (&sigma + sigma.transpose()) * 0.5;
    if (&sigma - &sym).norm() > 1e-10 * sigma.norm().max(1.0) {
        return Err(Error::NotSymmetric {
            deviation: (&sigma - &sym).norm() / sigma.norm().max(f64::MIN_POSITIVE),
        });
    }
    let eigen = SymmetricEigen::new(sym.clone());
    let lambda_max = eigen.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let lambda_min = eigen
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if lambda_min < -1e-10 * lambda_max.max(1.0) {
        return Err(Error::NotPsd {
            min_eig: lambda_min,
            max_eig: lambda_max,
        });
    }
    Ok(PortfolioProblem {
        sigma: sym,
        r,
        delta,
        w0,
        lambda_max,
        l_f: 2.0 * lambda_max + delta,
    })
}

/// The benchmark variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    /// Sequential FDR, gradient split: C₁ = ∇f₁, C₂ = ∇f₂, γ = min{1/L, 1/δ}.
    SeqFdrV1,
    /// Sequential FDR, whole gradient once: C₁ = ∇f, C₂ = 0, γ = 1/(L+δ).
    SeqFdrV2,
    /// Sequential FDR, gradient halved: C₁ = C₂ = ∇f/2, γ = 2/(L+δ).
    SeqFdrV3,
    /// Parallel FDR with the whole gradient on one branch.
    ParFdr,
    /// Generalized backward-forward: zero hub, gradient split over branches.
    GenBf,
    /// Parallel DRS over four prox terms (f handled by its prox).
    ParDr,
}

pub const ALL_VARIANTS: [VariantKind; 6] = [
    VariantKind::SeqFdrV1,
    VariantKind::SeqFdrV2,
    VariantKind::SeqFdrV3,
    VariantKind::ParFdr,
    VariantKind::GenBf,
    VariantKind::ParDr,
];

impl VariantKind {
    pub fn name(&self) -> &'static str {
        match self {
            VariantKind::SeqFdrV1 => "seq-fdr-v1",
            VariantKind::SeqFdrV2 => "seq-fdr-v2",
            VariantKind::SeqFdrV3 => "seq-fdr-v3",
            VariantKind::ParFdr => "par-fdr",
            VariantKind::GenBf => "gen-bf",
            VariantKind::ParDr => "par-dr",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        ALL_VARIANTS
            .iter()
            .find(|v| v.name() == text)
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {text:?}; expected one of {:?}",
                    ALL_VARIANTS.map(|v| v.name())
                ))
            })
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A variant instantiated on a concrete problem.
pub struct VariantSetup {
    pub kind: VariantKind,
    pub scheme: Scheme,
}

impl VariantSetup {
    pub fn config(&self) -> &SchemeConfig {
        &self.scheme.config
    }
}

/// Builds the scheme for one variant. θ_k = 1 throughout; γ follows the
/// variant's rule with L read under `convention`.
pub fn configure_variant(
    kind: VariantKind,
    problem: &PortfolioProblem,
    convention: LipschitzConvention,
) -> Result<VariantSetup> {
    let n = problem.dim();
    let theta = ThetaSchedule::Constant(1.0);
    let l = problem.l_sigma(convention);
    let delta = problem.delta;
    let scheme = match kind {
        VariantKind::SeqFdrV1 => {
            let gamma = (1.0 / l).min(1.0 / delta);
            let branches = vec![
                (problem.op_g1(), Some(problem.op_grad_f1(convention))),
                (problem.op_g2(), Some(problem.op_grad_f2())),
            ];
            build_sequential_fdr(&problem.op_g0(), &branches, gamma, theta, n)?
        }
        VariantKind::SeqFdrV2 => {
            let gamma = 1.0 / (l + delta);
            let branches = vec![
                (problem.op_g1(), Some(problem.op_grad_f(1.0, convention))),
                (problem.op_g2(), None),
            ];
            build_sequential_fdr(&problem.op_g0(), &branches, gamma, theta, n)?
        }
        VariantKind::SeqFdrV3 => {
            let gamma = 2.0 / (l + delta);
            let branches = vec![
                (problem.op_g1(), Some(problem.op_grad_f(0.5, convention))),
                (problem.op_g2(), Some(problem.op_grad_f(0.5, convention))),
            ];
            build_sequential_fdr(&problem.op_g0(), &branches, gamma, theta, n)?
        }
        VariantKind::ParFdr => {
            let gamma = 1.0 / (l + delta);
            let branches = vec![
                (problem.op_g1(), Some(problem.op_grad_f(1.0, convention))),
                (problem.op_g2(), None),
            ];
            build_parallel_fdr(&problem.op_g0(), &branches, gamma, theta, n)?
        }
        VariantKind::GenBf => {
            // Zero hub, four nonregular terms; the gradient splits evenly so
            // every branch takes a backward step followed by a forward one.
            // Same absolute step as the other whole-gradient variants; its
            // primal is the branch mean, which needs the tighter tail.
            let third = problem.op_grad_f(1.0 / 3.0, convention);
            let gamma = 1.0 / (l + delta);
            let branches = vec![
                (problem.op_g0(), Some(third.clone())),
                (problem.op_g1(), Some(third.clone())),
                (problem.op_g2(), Some(third)),
            ];
            build_parallel_fdr(&OperatorBlock::zero(), &branches, gamma, theta, n)?
        }
        VariantKind::ParDr => {
            // Four prox terms, no forward term; f enters through its prox.
            let branches = vec![
                (problem.op_g1(), None),
                (problem.op_g2(), None),
                (problem.op_f_prox(), None),
            ];
            build_parallel_fdr(&problem.op_g0(), &branches, 1.0, theta, n)?
        }
    };
    Ok(VariantSetup { kind, scheme })
}

/// Reference minimizer plus the diagnostics that certify it.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub w_star: DVector<f64>,
    pub fixed_point_residual: f64,
    pub subgradient_distance: f64,
    pub objective: f64,
}

/// Computes the reference minimizer: parallel FDR over the four prox terms
/// (no forward branch, conservative γ) run to fixed-point residual ≤ 1e-11,
/// cross-validated against an independent projected-subgradient descent.
/// The two must agree to 10·tol and the splitting point must not lose on
/// the objective.
///
/// The all-prox realization converges linearly here, whereas variants that
/// take the gradient forward inherit a sublinear residual tail from the
/// |·|^{3/2} term and cannot reach 1e-11 in a sane budget.
pub fn reference_solution(problem: &PortfolioProblem, tol: f64) -> Result<ReferenceSolution> {
    let n = problem.dim();
    let gamma = 0.25;
    let branches = vec![
        (problem.op_g1(), None),
        (problem.op_g2(), None),
        (problem.op_f_prox(), None),
    ];
    let scheme = build_parallel_fdr(
        &problem.op_g0(),
        &branches,
        gamma,
        ThetaSchedule::Constant(1.0),
        n,
    )?;
    let start = feasible_start(problem)?;
    let w0 = replicate(&start, scheme.direct_dim() / n);
    let trace = scheme.run_direct(&w0, &StoppingRule::absolute(1e-11, 200_000), None)?;
    if trace.status != TraceStatus::Converged {
        return Err(Error::OracleDisagreement {
            detail: format!(
                "reference run stalled at residual {:.3e}",
                trace.final_residual()
            ),
        });
    }
    let w_final = trace
        .final_reduced
        .clone()
        .expect("direct run stores its iterate");
    let w_star = scheme.primal(&w_final);

    let w_sub = projected_subgradient(problem, &start, 1_000_000);
    let distance = (&w_star - &w_sub).norm();
    if distance > 10.0 * tol {
        return Err(Error::OracleDisagreement {
            detail: format!(
                "splitting point and subgradient point differ by {distance:.3e} > {:.3e}",
                10.0 * tol
            ),
        });
    }
    let f_star = problem.objective(&w_star);
    let f_sub = problem.objective(&w_sub);
    if f_star > f_sub + 1e-9 * (1.0 + f_sub.abs()) {
        return Err(Error::OracleDisagreement {
            detail: format!(
                "splitting objective {f_star:.12e} exceeds subgradient objective {f_sub:.12e}"
            ),
        });
    }
    Ok(ReferenceSolution {
        w_star,
        fixed_point_residual: trace.final_residual(),
        subgradient_distance: distance,
        objective: f_star,
    })
}

fn feasible_start(problem: &PortfolioProblem) -> Result<DVector<f64>> {
    project_simplex(&problem.w0)
}

fn replicate(block: &DVector<f64>, copies: usize) -> DVector<f64> {
    let n = block.len();
    let mut out = DVector::zeros(n * copies);
    for i in 0..copies {
        out.rows_mut(i * n, n).copy_from(block);
    }
    out
}

/// Projected subgradient descent on f + g₀ + g₁ over the simplex with the
/// strongly-convex step 2/(δ(k+1)); returns the best point seen.
fn projected_subgradient(
    problem: &PortfolioProblem,
    start: &DVector<f64>,
    iters: usize,
) -> DVector<f64> {
    let mut w = start.clone();
    let mut best = w.clone();
    let mut best_val = problem.objective(&w);
    for k in 0..iters {
        let g = problem.subgradient(&w);
        let step = 2.0 / (problem.delta * (k as f64 + 1.0));
        w = project_simplex(&(&w - g * step)).expect("nonempty simplex input");
        let val = problem.objective(&w);
        if val < best_val {
            best_val = val;
            best = w.clone();
        }
    }
    best
}

/// One benchmark run.
#[derive(Debug)]
pub struct VariantRun {
    pub kind: VariantKind,
    pub trace: IterationTrace,
    pub final_primal: DVector<f64>,
    pub final_residual: f64,
    /// First iteration with fixed-point residual ≤ 1e-6, if reached.
    pub iters_to_tol: Option<usize>,
    pub final_distance: f64,
}

/// Full benchmark output.
pub struct BenchmarkResult {
    pub reference: ReferenceSolution,
    pub runs: Vec<VariantRun>,
}

pub const BENCH_RESIDUAL_TOL: f64 = 1e-6;
/// Runs stop well below the reported tolerance so that derived quantities
/// (primal feasibility, pairwise agreement) inherit the slack.
pub const BENCH_STOP_TOL: f64 = 1e-9;

impl BenchmarkResult {
    /// variant → {iterations to 1e-6, final distance, final residual}.
    pub fn summary_json(&self) -> serde_json::Value {
        let mut map = BTreeMap::new();
        for run in &self.runs {
            map.insert(
                run.kind.name().to_string(),
                serde_json::json!({
                    "iterations_to_tol": run.iters_to_tol,
                    "final_distance": run.final_distance,
                    "final_residual": run.final_residual,
                    "iterations": run.trace.iterations(),
                }),
            );
        }
        serde_json::json!({
            "residual_tol": BENCH_RESIDUAL_TOL,
            "reference_residual": self.reference.fixed_point_residual,
            "reference_objective": self.reference.objective,
            "variants": map,
        })
    }
}

/// Runs the chosen variants against a shared reference solution, recording
/// the per-iteration distance of the primal iterate to the minimizer.
pub fn run_benchmark(
    variants: &[VariantKind],
    problem: &PortfolioProblem,
    max_iter: usize,
    convention: LipschitzConvention,
) -> Result<BenchmarkResult> {
    let reference = reference_solution(problem, 0.03)?;
    let mut runs = Vec::with_capacity(variants.len());
    for &kind in variants {
        let setup = configure_variant(kind, problem, convention)?;
        runs.push(run_variant(setup, &reference.w_star, max_iter)?);
    }
    Ok(BenchmarkResult { reference, runs })
}

/// Runs one configured variant to the benchmark tolerance. Runs start from
/// w̃⁰ = 0 so the distance-to-minimizer curve has a nontrivial transient.
pub fn run_variant(
    setup: VariantSetup,
    w_star: &DVector<f64>,
    max_iter: usize,
) -> Result<VariantRun> {
    let w0 = DVector::zeros(setup.scheme.direct_dim());
    let stop = StoppingRule::absolute(BENCH_STOP_TOL, max_iter);
    let trace = setup.scheme.run_direct(&w0, &stop, Some(w_star))?;
    let w_final = trace
        .final_reduced
        .clone()
        .expect("direct run stores its iterate");
    let final_primal = setup.scheme.primal(&w_final);
    let iters_to_tol = trace
        .records
        .iter()
        .find(|r| r.residual <= BENCH_RESIDUAL_TOL)
        .map(|r| r.k);
    Ok(VariantRun {
        kind: setup.kind,
        final_residual: trace.final_residual(),
        final_distance: (final_primal.clone() - w_star).norm(),
        final_primal,
        iters_to_tol,
        trace,
    })
}

/// True when every break of monotone decrease (beyond `slack`) happens in
/// the first half of the curve, entries at the numerical floor excluded.
pub fn eventually_monotone(dists: &[f64], slack: f64) -> bool {
    let cutoff = dists
        .iter()
        .position(|&d| d <= 1e-12)
        .unwrap_or(dists.len());
    let usable = &dists[..cutoff];
    if usable.len() < 2 {
        return true;
    }
    let last_violation = usable
        .windows(2)
        .enumerate()
        .filter(|(_, pair)| pair[1] > pair[0] + slack)
        .map(|(k, _)| k + 1)
        .next_back();
    match last_violation {
        None => true,
        Some(k) => k < usable.len() / 2,
    }
}

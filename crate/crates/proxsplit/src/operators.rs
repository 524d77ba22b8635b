//! Maximal monotone operators exposed through resolvents and forward maps,
//! plus the proximal-operator catalog used by the benchmark problem.
//!
//! Set-valued operators are represented only through their resolvents; graph
//! points are recovered as (J_σ(z), (z − J_σ(z))/σ). Regularity metadata
//! (strong monotonicity μ, cocoercivity 1/β, Lipschitz constant) travels with
//! the operator so scheme builders can derive step bounds.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

type ResolventFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
type ForwardFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// A maximal monotone operator usable inside a splitting scheme.
///
/// `resolvent(s, x)` evaluates J_{sA}(x) for any step s > 0. `forward` is set
/// only for single-valued operators with full domain (the cocoercive terms).
#[derive(Clone)]
pub struct OperatorBlock {
    resolvent: Arc<ResolventFn>,
    forward: Option<Arc<ForwardFn>>,
    /// Strong-monotonicity modulus, when known.
    pub mu: Option<f64>,
    /// The operator is 1/β-cocoercive, when known. β = 0 encodes a constant map.
    pub beta: Option<f64>,
    /// Lipschitz constant, when known.
    pub lipschitz: Option<f64>,
}

impl std::fmt::Debug for OperatorBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorBlock")
            .field("forward", &self.forward.is_some())
            .field("mu", &self.mu)
            .field("beta", &self.beta)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl OperatorBlock {
    pub fn from_resolvent<F>(resolvent: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            resolvent: Arc::new(resolvent),
            forward: None,
            mu: None,
            beta: None,
            lipschitz: None,
        }
    }

    pub fn with_forward<F>(mut self, forward: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.forward = Some(Arc::new(forward));
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    /// The zero operator A = 0: resolvent is the identity, forward the zero map.
    pub fn zero() -> Self {
        Self::from_resolvent(|_, x| x.clone())
            .with_forward(|x| DVector::zeros(x.len()))
            .with_beta(0.0)
            .with_lipschitz(0.0)
    }

    /// The identity operator A = I.
    pub fn identity() -> Self {
        Self::from_resolvent(|s, x: &DVector<f64>| x / (1.0 + s))
            .with_forward(|x| x.clone())
            .with_mu(1.0)
            .with_beta(1.0)
            .with_lipschitz(1.0)
    }

    /// A monotone linear operator x ↦ Kx; the resolvent solves (I + sK)y = x.
    pub fn linear(k: DMatrix<f64>) -> Self {
        let n = k.nrows();
        let fwd = k.clone();
        Self::from_resolvent(move |s, x: &DVector<f64>| {
            let system = DMatrix::identity(n, n) + &k * s;
            system
                .lu()
                .solve(x)
                .expect("I + sK is invertible for monotone K and s > 0")
        })
        .with_forward(move |x| &fwd * x)
    }

    /// Normal cone of the singleton {a}: the resolvent is constant.
    pub fn constant_point(a: DVector<f64>) -> Self {
        Self::from_resolvent(move |_, _| a.clone())
    }

    /// A cocoercive term used only through forward evaluations; calling its
    /// resolvent is a bug and panics.
    pub fn forward_only<F>(forward: F, beta: f64) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::from_resolvent(|_, _| panic!("forward-only operator has no resolvent"))
            .with_forward(forward)
            .with_beta(beta)
            .with_lipschitz(beta)
    }

    /// J_{sA}(x).
    pub fn resolvent(&self, step: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.resolvent)(step, x)
    }

    /// Forward evaluation A(x); panics if the operator is not single-valued.
    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.forward {
            Some(f) => f(x),
            None => panic!("operator has no forward map"),
        }
    }

    pub fn has_forward(&self) -> bool {
        self.forward.is_some()
    }

    /// The inverse of the scaled operator, (scale·A)⁻¹, as a new block.
    ///
    /// Its resolvent comes from the Moreau identity:
    /// J_{t(sA)⁻¹}(x) = x − t · J_{(s/t)A}(x/t).
    pub fn inverse_of(op: &OperatorBlock, scale: f64) -> Self {
        let inner = op.clone();
        Self::from_resolvent(move |t, x: &DVector<f64>| {
            x - inner.resolvent(scale / t, &(x / t)) * t
        })
    }
}

/// J_{σB⁻¹}(x) = x − σ J_{σ⁻¹B}(x/σ), the resolvent of the inverse operator.
pub fn resolvent_of_inverse(
    sigma: f64,
    b: &OperatorBlock,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if sigma <= 0.0 {
        return Err(Error::NonPositiveStep { value: sigma });
    }
    Ok(x - b.resolvent(1.0 / sigma, &(x / sigma)) * sigma)
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Prox of γ Σ|s_i − (w0)_i|: componentwise soft thresholding around w0.
pub fn prox_l1_shifted(gamma: f64, w0: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if gamma <= 0.0 {
        return Err(Error::NonPositiveStep { value: gamma });
    }
    check_dims(w0.len(), x.len())?;
    Ok(DVector::from_fn(x.len(), |i, _| {
        let t = x[i] - w0[i];
        w0[i] + t.signum() * (t.abs() - gamma).max(0.0)
    }))
}

/// Prox of γ Σ|s_i − (w0)_i|^{3/2}.
///
/// On each coordinate the optimality condition reduces to
/// q² + (3γ/2) q − |t| = 0 with q = √|p − w0|, t = x − w0, whose positive
/// root gives p = w0 + sign(t) q².
pub fn prox_pow32(gamma: f64, w0: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if gamma <= 0.0 {
        return Err(Error::NonPositiveStep { value: gamma });
    }
    check_dims(w0.len(), x.len())?;
    let h = 1.5 * gamma;
    Ok(DVector::from_fn(x.len(), |i, _| {
        let t = x[i] - w0[i];
        let q = 0.5 * (-h + (h * h + 4.0 * t.abs()).sqrt());
        w0[i] + t.signum() * q * q
    }))
}

/// Euclidean projection onto the standard simplex {p ≥ 0, Σp = 1}.
///
/// Sort-based threshold search: the KKT multiplier is
/// λ = (Σ_{i≤ρ} x_(i) − 1)/ρ for the largest ρ keeping x_(ρ) − λ > 0.
pub fn project_simplex(x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyVector);
    }
    let mut sorted: Vec<f64> = x.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut lambda = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (j as f64 + 1.0);
        if v - candidate > 0.0 {
            lambda = candidate;
        }
    }
    Ok(DVector::from_fn(n, |i, _| (x[i] - lambda).max(0.0)))
}

/// Prox of γ f with f(w) = wᵀΣw − rᵀw + (δ/2)‖w‖²: solves
/// (I + γ(2Σ + δI)) p = x + γ r.
pub fn prox_quadratic(
    gamma: f64,
    sigma_mat: &DMatrix<f64>,
    r: &DVector<f64>,
    delta: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if gamma <= 0.0 {
        return Err(Error::NonPositiveStep { value: gamma });
    }
    let n = x.len();
    check_dims(sigma_mat.nrows(), n)?;
    check_dims(r.len(), n)?;
    let system =
        DMatrix::identity(n, n) + (sigma_mat * 2.0 + DMatrix::identity(n, n) * delta) * gamma;
    let rhs = x + r * gamma;
    system
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| Error::SolveFailure {
            context: "prox system I + γ(2Σ + δI) is not positive definite".into(),
        })
}

/// Gradient of f(w) = wᵀΣw − rᵀw + (δ/2)‖w‖²: 2Σw − r + δw.
pub fn grad_quadratic(
    sigma_mat: &DMatrix<f64>,
    r: &DVector<f64>,
    delta: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = x.len();
    check_dims(sigma_mat.nrows(), n)?;
    check_dims(r.len(), n)?;
    Ok(sigma_mat * x * 2.0 - r + x * delta)
}

/// Catalog entry for Σ|·−w0| (shifted l1 transaction cost).
pub fn op_l1_shifted(w0: DVector<f64>) -> OperatorBlock {
    OperatorBlock::from_resolvent(move |s, x| {
        prox_l1_shifted(s, &w0, x).expect("dimensions fixed at construction")
    })
}

/// Catalog entry for Σ|·−w0|^{3/2}.
pub fn op_pow32(w0: DVector<f64>) -> OperatorBlock {
    OperatorBlock::from_resolvent(move |s, x| {
        prox_pow32(s, &w0, x).expect("dimensions fixed at construction")
    })
}

/// Catalog entry for the simplex indicator; the prox is step-independent.
pub fn op_simplex() -> OperatorBlock {
    OperatorBlock::from_resolvent(|_, x| project_simplex(x).expect("nonempty input"))
}

/// Subdifferential of the quadratic f(w) = wᵀΣw − rᵀw + (δ/2)‖w‖², exposing
/// both the exact prox (with per-step cached Cholesky factors) and the
/// gradient. μ = 2λ_min(Σ) + δ and the gradient Lipschitz constant is
/// 2λ_max(Σ) + δ.
pub fn op_quadratic(sigma_mat: DMatrix<f64>, r: DVector<f64>, delta: f64) -> OperatorBlock {
    let n = sigma_mat.nrows();
    let eigen = nalgebra::SymmetricEigen::new((&sigma_mat + sigma_mat.transpose()) * 0.5);
    let lambda_max = eigen.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let lambda_min = eigen
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let lipschitz = 2.0 * lambda_max + delta;
    let mu = 2.0 * lambda_min + delta;

    let cache: Mutex<HashMap<u64, Arc<Cholesky<f64, Dyn>>>> = Mutex::new(HashMap::new());
    let (sig_f, r_f) = (sigma_mat.clone(), r.clone());
    let resolvent = move |s: f64, x: &DVector<f64>| {
        let factor = {
            let mut cache = cache.lock().expect("prox cache poisoned");
            cache
                .entry(s.to_bits())
                .or_insert_with(|| {
                    let system = DMatrix::identity(n, n)
                        + (&sig_f * 2.0 + DMatrix::identity(n, n) * delta) * s;
                    Arc::new(system.cholesky().expect("SPD prox system"))
                })
                .clone()
        };
        factor.solve(&(x + &r_f * s))
    };
    OperatorBlock::from_resolvent(resolvent)
        .with_forward(move |x| {
            grad_quadratic(&sigma_mat, &r, delta, x).expect("dimensions fixed at construction")
        })
        .with_mu(mu)
        .with_beta(lipschitz)
        .with_lipschitz(lipschitz)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force minimizers kept independent of the catalog implementations.

    use super::*;

    /// Golden-section minimization of a unimodal scalar function.
    pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
        let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        while (b - a).abs() > tol {
            if f(c) < f(d) {
                b = d;
                d = c;
                c = b - inv_phi * (b - a);
            } else {
                a = c;
                c = d;
                d = a + inv_phi * (b - a);
            }
        }
        0.5 * (a + b)
    }

    /// prox of γφ at x for a separable scalar penalty φ, by golden section.
    pub fn scalar_prox(phi: impl Fn(f64) -> f64, gamma: f64, x: f64) -> f64 {
        let objective = |s: f64| gamma * phi(s) + 0.5 * (s - x) * (s - x);
        let radius = x.abs() + 10.0;
        golden_min(objective, -radius, radius, 1e-10)
    }

    /// Simplex projection through a bisection on the KKT multiplier λ
    /// solving Σ max(x_i − λ, 0) = 1.
    pub fn simplex_by_bisection(x: &DVector<f64>) -> DVector<f64> {
        let mass = |lambda: f64| x.iter().map(|&v| (v - lambda).max(0.0)).sum::<f64>();
        let mut lo = x.min() - 1.0;
        let mut hi = x.max();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        DVector::from_fn(x.len(), |i, _| (x[i] - lambda).max(0.0))
    }
}

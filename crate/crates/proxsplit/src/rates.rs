//! Linear-convergence certificates for Douglas-Rachford under strong
//! monotonicity / cocoercivity / Lipschitz assumptions, plus empirical rate
//! estimation from recorded traces.
//!
//! Each certified case makes the reduced operator a contraction of factor
//! 1/(1+α); certificates hold for constant relaxation only.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ppp::{BlockAssembly, IterationTrace, SampleReport};
use crate::spaces::BlockVector;

/// Which regularity assumption backs a certificate.
///
/// Case 1: one operator μ-strongly monotone, the other 1/β-cocoercive.
/// Case 2: one operator both μ-strongly monotone and 1/β-cocoercive.
/// Case 3: one operator μ-strongly monotone and β-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RateCase {
    Case1,
    Case2,
    Case3,
}

/// Which of the two operators carries the strong monotonicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseSide {
    A,
    B,
}

/// A certified linear rate r = 1/(1+α) with the assumptions that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct RateCertificate {
    pub case: RateCase,
    pub side: CaseSide,
    pub alpha: f64,
    pub rate: f64,
    pub sigma: f64,
    pub mu: f64,
    pub beta: f64,
}

/// Contraction factor for DRS with step σ under the declared case:
///
/// 1. α = min{σμ/2, 1/(2σβ)}
/// 2. α = σμ/(σ²μβ + 1)   (needs μ ≤ β)
/// 3. α = σμ/(σ²β² + 1)
pub fn drs_contraction_factor(
    case: RateCase,
    side: CaseSide,
    sigma: f64,
    mu: f64,
    beta: f64,
) -> Result<RateCertificate> {
    if sigma <= 0.0 {
        return Err(Error::InvalidRegularity {
            detail: format!("sigma must be positive, got {sigma}"),
        });
    }
    if mu <= 0.0 {
        return Err(Error::InvalidRegularity {
            detail: format!("mu must be positive, got {mu}"),
        });
    }
    if beta <= 0.0 {
        return Err(Error::InvalidRegularity {
            detail: format!("beta must be positive, got {beta}"),
        });
    }
    let alpha = match case {
        RateCase::Case1 => (sigma * mu / 2.0).min(1.0 / (2.0 * sigma * beta)),
        RateCase::Case2 => {
            // Strong monotonicity with modulus μ and 1/β-cocoercivity force μ ≤ β.
            if mu > beta {
                return Err(Error::InvalidRegularity {
                    detail: format!(
                        "case 2 needs mu <= beta (an operator cannot be {mu}-strongly monotone and 1/{beta}-cocoercive otherwise)"
                    ),
                });
            }
            sigma * mu / (sigma * sigma * mu * beta + 1.0)
        }
        RateCase::Case3 => {
            if mu > beta {
                return Err(Error::InvalidRegularity {
                    detail: "case 3 needs mu <= beta (strong monotonicity is bounded by the \
                             Lipschitz constant)"
                        .into(),
                });
            }
            sigma * mu / (sigma * sigma * beta * beta + 1.0)
        }
    };
    Ok(RateCertificate {
        case,
        side,
        alpha,
        rate: 1.0 / (1.0 + alpha),
        sigma,
        mu,
        beta,
    })
}

/// Step choice optimizing the case-1 factor: σ = 1/√(μβ).
pub fn optimal_sigma_case1(mu: f64, beta: f64) -> Result<f64> {
    if mu <= 0.0 || beta <= 0.0 {
        return Err(Error::InvalidRegularity {
            detail: format!("mu and beta must be positive, got mu={mu}, beta={beta}"),
        });
    }
    Ok(1.0 / (mu * beta).sqrt())
}

/// Sampled check of M-α-strong monotonicity on graph points (Tu, u − Tu):
/// ⟨(u − Tu) − (u′ − Tu′), Tu − Tu′⟩_M ≥ α ‖Tu − Tu′‖²_M − slack.
pub fn mstrong_check<R: Rng>(
    asm: &BlockAssembly,
    samples: usize,
    alpha: f64,
    slack: f64,
    rng: &mut R,
) -> Result<SampleReport> {
    let m = asm.preconditioner();
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    for _ in 0..samples {
        let draw = |rng: &mut R| {
            BlockVector::new(
                asm.layout()
                    .iter()
                    .map(|&n| nalgebra::DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)))
                    .collect(),
            )
        };
        let u1 = draw(rng);
        let u2 = draw(rng);
        let t1 = asm.evaluate_t(&u1)?;
        let t2 = asm.evaluate_t(&u2)?;
        let dv = u1.sub(&t1)?.sub(&u2.sub(&t2)?)?;
        let dt = t1.sub(&t2)?;
        let lhs = m.inner(&dv, &dt)?;
        let rhs = alpha * m.inner(&dt, &dt)?;
        if lhs < rhs - slack {
            violations += 1;
            max_violation = max_violation.max(rhs - lhs);
        }
    }
    Ok(SampleReport {
        samples,
        violations,
        max_violation,
    })
}

/// Geometric-mean contraction ratio of ‖w^k − w_ref‖ over the last quartile
/// of iterations before the distance first drops below `floor` (1e-9).
///
/// A ratio near 1 means no contraction; values are meaningful only when the
/// trace actually approached `w_ref`.
pub fn empirical_rate(trace: &IterationTrace, w_ref: &nalgebra::DVector<f64>) -> Result<f64> {
    empirical_rate_with_floor(trace, w_ref, 1e-9)
}

pub fn empirical_rate_with_floor(
    trace: &IterationTrace,
    w_ref: &nalgebra::DVector<f64>,
    floor: f64,
) -> Result<f64> {
    let snapshots = trace
        .snapshots_reduced
        .as_ref()
        .ok_or_else(|| Error::RateUnavailable {
            detail: "trace was not recorded with reduced iterate snapshots".into(),
        })?;
    let dists: Vec<f64> = snapshots.iter().map(|w| (w - w_ref).norm()).collect();
    // Use the stretch before the distance hits the floor (noise takes over there).
    let cutoff = dists
        .iter()
        .position(|&d| d <= floor)
        .unwrap_or(dists.len());
    let usable = &dists[..cutoff];
    if usable.len() < 2 {
        return Err(Error::RateUnavailable {
            detail: format!("only {} usable distances above the floor", usable.len()),
        });
    }
    let start = (usable.len() * 3) / 4;
    let start = start.min(usable.len() - 2);
    let (d_lo, d_hi) = (usable[start], usable[usable.len() - 1]);
    if d_lo <= 0.0 || d_hi <= 0.0 {
        return Err(Error::RateUnavailable {
            detail: "distance reached zero inside the estimation window".into(),
        });
    }
    let steps = (usable.len() - 1 - start) as f64;
    Ok((d_hi / d_lo).powf(1.0 / steps))
}

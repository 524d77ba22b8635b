//! Runtime monitors for the fixed-point engine: Fejér monotonicity, firm
//! nonexpansiveness and graph monotonicity in the M-seminorm, and the
//! Woodbury-Moreau identity on linear operators.
//!
//! Monitors are opt-in; each one roughly doubles the per-iteration cost of
//! the run it inspects.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::spaces::{BlockVector, Factorization, Preconditioner};

use super::{BlockAssembly, IterationTrace};

/// Outcome of a sampled inequality check.
#[derive(Debug, Clone)]
pub struct SampleReport {
    pub samples: usize,
    pub violations: usize,
    /// Largest violation observed (0 when every sample satisfied the bound).
    pub max_violation: f64,
}

impl SampleReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Outcome of replaying a recorded run against a known fixed point.
#[derive(Debug, Clone)]
pub struct FejerReport {
    /// (k, previous distance, current distance) for every monotonicity break.
    pub distance_violations: Vec<(usize, f64, f64)>,
    pub residual_violations: Vec<(usize, f64, f64)>,
    pub final_m_residual: f64,
}

impl FejerReport {
    pub fn passed(&self) -> bool {
        self.distance_violations.is_empty() && self.residual_violations.is_empty()
    }
}

/// Checks ‖u^{k+1} − u_ref‖_M ≤ ‖u^k − u_ref‖_M and the monotone decay of
/// ‖Tu^k − u^k‖_M over a recorded trace, both with `slack` tolerance.
pub fn monitor_fejer(
    trace: &IterationTrace,
    m: &Preconditioner,
    u_ref: &BlockVector,
    slack: f64,
) -> Result<FejerReport> {
    let snapshots = trace.snapshots_full.as_ref().ok_or_else(|| {
        Error::Config("Fejér monitor needs a trace recorded with iterate snapshots".into())
    })?;
    let mut distance_violations = Vec::new();
    let mut prev: Option<f64> = None;
    for (k, u) in snapshots.iter().enumerate() {
        let dist = m.seminorm(&u.sub(u_ref)?)?;
        if let Some(p) = prev {
            if dist > p + slack {
                distance_violations.push((k, p, dist));
            }
        }
        prev = Some(dist);
    }
    let mut residual_violations = Vec::new();
    for pair in trace.records.windows(2) {
        if pair[1].m_residual > pair[0].m_residual + slack {
            residual_violations.push((pair[1].k, pair[0].m_residual, pair[1].m_residual));
        }
    }
    Ok(FejerReport {
        distance_violations,
        residual_violations,
        final_m_residual: trace.records.last().map_or(0.0, |r| r.m_residual),
    })
}

fn random_point<R: Rng>(rng: &mut R, layout: &[usize], scale: f64) -> BlockVector {
    BlockVector::new(
        layout
            .iter()
            .map(|&n| DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale)))
            .collect(),
    )
}

/// Samples pairs (u₁, u₂) and checks
/// ‖Tu₁ − Tu₂‖²_M + ‖(I−T)u₁ − (I−T)u₂‖²_M ≤ ‖u₁ − u₂‖²_M + slack.
pub fn check_firm_nonexpansive<R: Rng>(
    asm: &BlockAssembly,
    samples: usize,
    slack: f64,
    rng: &mut R,
) -> Result<SampleReport> {
    let m = asm.preconditioner();
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    for _ in 0..samples {
        let u1 = random_point(rng, asm.layout(), 2.0);
        let u2 = random_point(rng, asm.layout(), 2.0);
        let t1 = asm.evaluate_t(&u1)?;
        let t2 = asm.evaluate_t(&u2)?;
        let dt = t1.sub(&t2)?;
        let dres = u1.sub(&t1)?.sub(&u2.sub(&t2)?)?;
        let du = u1.sub(&u2)?;
        let lhs = m.inner(&dt, &dt)? + m.inner(&dres, &dres)?;
        let rhs = m.inner(&du, &du)?;
        let gap = lhs - rhs;
        if gap > slack {
            violations += 1;
            max_violation = max_violation.max(gap);
        }
    }
    Ok(SampleReport {
        samples,
        violations,
        max_violation,
    })
}

/// Samples graph points (Tu, M(u − Tu)) of A and checks their monotonicity:
/// ⟨(u−Tu) − (u′−Tu′), Tu − Tu′⟩_M ≥ −slack.
pub fn check_graph_monotone<R: Rng>(
    asm: &BlockAssembly,
    samples: usize,
    slack: f64,
    rng: &mut R,
) -> Result<SampleReport> {
    let m = asm.preconditioner();
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    for _ in 0..samples {
        let u1 = random_point(rng, asm.layout(), 2.0);
        let u2 = random_point(rng, asm.layout(), 2.0);
        let t1 = asm.evaluate_t(&u1)?;
        let t2 = asm.evaluate_t(&u2)?;
        let dv = u1.sub(&t1)?.sub(&u2.sub(&t2)?)?;
        let dt = t1.sub(&t2)?;
        let inner = m.inner(&dv, &dt)?;
        if inner < -slack {
            violations += 1;
            max_violation = max_violation.max(-inner);
        }
    }
    Ok(SampleReport {
        samples,
        violations,
        max_violation,
    })
}

/// Residual of (I + CᵀA⁻¹C)⁻¹ = I − Cᵀ(CCᵀ + A)⁻¹C for an invertible
/// monotone matrix A, as the max elementwise difference of the two sides.
pub fn check_woodbury(a: &DMatrix<f64>, f: &Factorization) -> Result<f64> {
    let c = f.c_matrix();
    if a.nrows() != c.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: c.nrows(),
        });
    }
    let rank = c.ncols();
    let a_inv = a.clone().try_inverse().ok_or_else(|| Error::SolveFailure {
        context: "A is singular".into(),
    })?;
    let lhs_inner = DMatrix::identity(rank, rank) + c.transpose() * &a_inv * c;
    let lhs = lhs_inner.try_inverse().ok_or_else(|| Error::SolveFailure {
        context: "I + CᵀA⁻¹C is singular".into(),
    })?;
    let shifted = c * c.transpose() + a;
    let shifted_inv = shifted.try_inverse().ok_or_else(|| Error::SolveFailure {
        context: "CCᵀ + A is singular".into(),
    })?;
    let rhs = DMatrix::identity(rank, rank) - c.transpose() * shifted_inv * c;
    Ok((lhs - rhs).abs().max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{op_l1_shifted, OperatorBlock};
    use crate::ppp::assemblies::{drs, drs_factorization};
    use crate::ppp::{ppp_iterate, IterateOptions, RelaxationSchedule, StoppingRule};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn woodbury_scalar_case() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let f = Factorization::from_c(DMatrix::from_element(1, 1, 1.0), vec![1]).unwrap();
        // Both sides equal 0.5.
        assert!(check_woodbury(&a, &f).unwrap() <= 1e-14);
    }

    #[test]
    fn woodbury_rank_one_difference() {
        // A = I in dimension 2, C = (1, -1)ᵀ: both sides are the scalar 1/3.
        let a = DMatrix::identity(2, 2);
        let f =
            Factorization::from_c(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), vec![2]).unwrap();
        assert!(check_woodbury(&a, &f).unwrap() <= 1e-14);
    }

    #[test]
    fn woodbury_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..50 {
            let d = rng.gen_range(2..=8);
            let r = rng.gen_range(1..=d);
            let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            // Monotone and invertible: SPD part plus a skew part.
            let skew = DMatrix::from_fn(
                d,
                d,
                |i, j| {
                    if i < j {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    }
                },
            );
            let a = &g * g.transpose() + DMatrix::identity(d, d) * 0.5 + &skew - skew.transpose();
            let c = DMatrix::from_fn(d, r, |_, _| rng.gen_range(-1.0..1.0));
            let f = Factorization::from_c(c, vec![d]).unwrap();
            assert!(check_woodbury(&a, &f).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn drs_assembly_is_firmly_nonexpansive_and_graph_monotone() {
        let a = op_l1_shifted(DVector::from_vec(vec![0.5, -0.5]));
        let b = op_l1_shifted(DVector::from_vec(vec![0.0, 1.0]));
        let asm = drs(&a, &b, 1.4, 2);
        let mut rng = StdRng::seed_from_u64(21);
        let fne = check_firm_nonexpansive(&asm, 500, 1e-9, &mut rng).unwrap();
        assert!(fne.passed(), "max violation {}", fne.max_violation);
        let mono = check_graph_monotone(&asm, 500, 1e-9, &mut rng).unwrap();
        assert!(mono.passed(), "max violation {}", mono.max_violation);
    }

    #[test]
    fn fejer_monitor_accepts_a_convergent_run() {
        let a = OperatorBlock::identity();
        let b = OperatorBlock::identity();
        let asm = drs(&a, &b, 1.0, 2);
        // Fixed point of this strongly monotone pair: converge hard first.
        let u0 =
            BlockVector::from_flat(&DVector::from_vec(vec![1.0, -2.0, 0.5, 0.3]), &[2, 2]).unwrap();
        let sched = RelaxationSchedule::constant(1.0).unwrap();
        let opts = IterateOptions {
            record_iterates: true,
            ..Default::default()
        };
        let tight = ppp_iterate(
            &asm,
            &u0,
            &sched,
            &StoppingRule::absolute(1e-13, 10_000),
            &opts,
        )
        .unwrap();
        let u_star = tight.final_full.clone().unwrap();
        let u1 = BlockVector::from_flat(&DVector::from_vec(vec![-1.0, 0.7, 2.0, -0.3]), &[2, 2])
            .unwrap();
        let run = ppp_iterate(&asm, &u1, &sched, &StoppingRule::new(0.0, 200), &opts).unwrap();
        let report = monitor_fejer(&run, asm.preconditioner(), &u_star, 1e-10).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn fejer_monitor_needs_snapshots() {
        let asm = drs(&OperatorBlock::identity(), &OperatorBlock::zero(), 1.0, 1);
        let u0 = BlockVector::from_flat(&DVector::from_vec(vec![1.0, 0.0]), &[1, 1]).unwrap();
        let run = ppp_iterate(
            &asm,
            &u0,
            &RelaxationSchedule::constant(1.0).unwrap(),
            &StoppingRule::new(1e-10, 50),
            &IterateOptions::default(),
        )
        .unwrap();
        assert!(monitor_fejer(&run, asm.preconditioner(), &u0, 1e-10).is_err());
    }

    #[test]
    fn reduced_operator_is_firmly_nonexpansive_in_euclidean_norm() {
        let a = op_l1_shifted(DVector::from_vec(vec![0.2, -0.2, 0.6]));
        let b = op_l1_shifted(DVector::from_vec(vec![-0.4, 0.0, 0.1]));
        let asm = drs(&a, &b, 0.9, 3);
        let f = drs_factorization(3);
        let mut rng = StdRng::seed_from_u64(33);
        for _ in 0..500 {
            let w1 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let w2 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let t1 = asm.evaluate_ttilde(&f, &w1).unwrap();
            let t2 = asm.evaluate_ttilde(&f, &w2).unwrap();
            let lhs = (&t1 - &t2).norm_squared() + ((&w1 - &t1) - (&w2 - &t2)).norm_squared();
            let rhs = (&w1 - &w2).norm_squared();
            assert!(lhs <= rhs + 1e-9);
        }
    }
}

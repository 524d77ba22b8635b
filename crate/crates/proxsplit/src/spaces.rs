//! Product-space vectors, positive semi-definite preconditioners and their
//! factorizations M = C Cᵀ.
//!
//! A degenerate preconditioner M induces only a seminorm ‖u‖_M = √(uᵀMu);
//! the factor C maps a reduced space of dimension rank(M) into the product
//! space, with ‖Cᵀu‖ = ‖u‖_M. Everything here is finite-dimensional, where
//! M always has closed range and Cᵀ is automatically onto; infinite-
//! dimensional subtleties around that hypothesis do not arise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`Preconditioner::new`].
pub const SYMMETRY_RTOL: f64 = 1e-12;
/// Relative eigenvalue floor below which a matrix is rejected as indefinite.
pub const PSD_RTOL: f64 = 1e-10;
/// Default relative rank cutoff used by [`factor_psd`].
pub const FACTOR_RTOL: f64 = 1e-10;

/// An element of a product Hilbert space H^m, stored block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    blocks: Vec<DVector<f64>>,
}

impl BlockVector {
    pub fn new(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    /// Zero vector with the given block sizes.
    pub fn zeros(layout: &[usize]) -> Self {
        Self {
            blocks: layout.iter().map(|&n| DVector::zeros(n)).collect(),
        }
    }

    /// Splits a flat vector into blocks of the given sizes.
    pub fn from_flat(flat: &DVector<f64>, layout: &[usize]) -> Result<Self> {
        let total: usize = layout.iter().sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: flat.len(),
            });
        }
        let mut blocks = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for &n in layout {
            blocks.push(DVector::from_column_slice(
                &flat.as_slice()[offset..offset + n],
            ));
            offset += n;
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn layout(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn flatten(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_dim());
        let mut offset = 0;
        for b in &self.blocks {
            out.rows_mut(offset, b.len()).copy_from(b);
            offset += b.len();
        }
        out
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.len() == b.len())
    }

    fn check_layout(&self, other: &Self, context: &str) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::BlockMismatch {
                context: format!("{context}: {:?} vs {:?}", self.layout(), other.layout()),
            });
        }
        Ok(())
    }

    /// self + scale * other, blockwise.
    pub fn axpy(&self, scale: f64, other: &Self) -> Result<Self> {
        self.check_layout(other, "axpy")?;
        Ok(Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a + b * scale)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b * s).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other, "dot")?;
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.dot(b))
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

fn symmetry_deviation(m: &DMatrix<f64>) -> f64 {
    let denom = m.norm().max(f64::MIN_POSITIVE);
    (m - m.transpose()).norm() / denom
}

/// A symmetric positive semi-definite operator on a product space, stored dense.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    matrix: DMatrix<f64>,
    layout: Vec<usize>,
}

impl Preconditioner {
    /// Validates symmetry and positive semi-definiteness before accepting `matrix`.
    pub fn new(matrix: DMatrix<f64>, layout: Vec<usize>) -> Result<Self> {
        let total: usize = layout.iter().sum();
        if matrix.nrows() != total || matrix.ncols() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: matrix.nrows(),
            });
        }
        let deviation = symmetry_deviation(&matrix);
        if deviation > SYMMETRY_RTOL {
            return Err(Error::NotSymmetric { deviation });
        }
        // Work on the symmetrized matrix so that eigenvalues are real.
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eigen = SymmetricEigen::new(sym);
        let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min_eig = eigen
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_RTOL * max_eig.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
        Ok(Self { matrix, layout })
    }

    /// Builds M = pattern ⊗ I_n from a scalar block pattern, one size per block.
    pub fn from_block_pattern(pattern: &DMatrix<f64>, layout: &[usize]) -> Result<Self> {
        if pattern.nrows() != layout.len() || pattern.ncols() != layout.len() {
            return Err(Error::InconsistentDimensions {
                context: format!(
                    "pattern is {}x{} for {} blocks",
                    pattern.nrows(),
                    pattern.ncols(),
                    layout.len()
                ),
            });
        }
        let offsets = offsets_of(layout);
        let total: usize = layout.iter().sum();
        let mut m = DMatrix::zeros(total, total);
        for i in 0..layout.len() {
            for j in 0..layout.len() {
                let s = pattern[(i, j)];
                if s == 0.0 {
                    continue;
                }
                if layout[i] != layout[j] {
                    return Err(Error::InconsistentDimensions {
                        context: format!(
                            "scalar pattern couples blocks of sizes {} and {}",
                            layout[i], layout[j]
                        ),
                    });
                }
                for k in 0..layout[i] {
                    m[(offsets[i] + k, offsets[j] + k)] = s;
                }
            }
        }
        Self::new(m, layout.to_vec())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, u: &BlockVector) -> Result<BlockVector> {
        if u.total_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.total_dim(),
            });
        }
        BlockVector::from_flat(&(&self.matrix * u.flatten()), &self.layout)
    }

    /// Semi inner product ⟨u, v⟩_M = uᵀ M v.
    pub fn inner(&self, u: &BlockVector, v: &BlockVector) -> Result<f64> {
        if u.total_dim() != self.dim() || v.total_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.total_dim().max(v.total_dim()),
            });
        }
        Ok((&self.matrix * v.flatten()).dot(&u.flatten()))
    }

    /// Seminorm ‖u‖_M = √(uᵀ M u). Negative rounding noise is clamped to zero.
    pub fn seminorm(&self, u: &BlockVector) -> Result<f64> {
        Ok(self.inner(u, u)?.max(0.0).sqrt())
    }
}

pub(crate) fn offsets_of(layout: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layout.len());
    let mut acc = 0;
    for &n in layout {
        offsets.push(acc);
        acc += n;
    }
    offsets
}

/// An injective factor C with M = C Cᵀ; columns span the range of M.
///
/// C is unique only up to an orthogonal change of basis on the reduced side,
/// so all contracts are stated on C Cᵀ and ‖Cᵀ·‖, never on entries of C.
#[derive(Debug, Clone)]
pub struct Factorization {
    c: DMatrix<f64>,
    layout: Vec<usize>,
}

impl Factorization {
    /// Installs a closed-form factor. `c` must have full column rank.
    pub fn from_c(c: DMatrix<f64>, layout: Vec<usize>) -> Result<Self> {
        let total: usize = layout.iter().sum();
        if c.nrows() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: c.nrows(),
            });
        }
        Ok(Self { c, layout })
    }

    pub fn c_matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Dimension of the reduced space.
    pub fn rank(&self) -> usize {
        self.c.ncols()
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    /// w = Cᵀ u; satisfies ‖w‖ = ‖u‖_M.
    pub fn apply_cstar(&self, u: &BlockVector) -> Result<DVector<f64>> {
        if u.total_dim() != self.c.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.c.nrows(),
                got: u.total_dim(),
            });
        }
        Ok(self.c.transpose() * u.flatten())
    }

    /// u = C w, unflattened into the stored block layout.
    pub fn apply_c(&self, w: &DVector<f64>) -> Result<BlockVector> {
        if w.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: w.len(),
            });
        }
        BlockVector::from_flat(&(&self.c * w), &self.layout)
    }

    /// Minimum-norm preimage under Cᵀ: returns u = C (CᵀC)⁻¹ w, so Cᵀu = w.
    pub fn lift(&self, w: &DVector<f64>) -> Result<BlockVector> {
        if w.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: w.len(),
            });
        }
        let gram = self.c.transpose() * &self.c;
        let chol = gram.cholesky().ok_or_else(|| Error::SolveFailure {
            context: "CᵀC not positive definite; factor has dependent columns".into(),
        })?;
        let z = chol.solve(w);
        self.apply_c(&z)
    }
}

/// Factors a positive semi-definite preconditioner as M = C Cᵀ with C injective.
///
/// The rank is the number of eigenvalues above `tol · λ_max`; kept eigenpairs
/// give C = V diag(√λ). Use [`FACTOR_RTOL`] unless there is a reason not to.
pub fn factor_psd(m: &Preconditioner, tol: f64) -> Result<Factorization> {
    let sym = (m.matrix() + m.matrix().transpose()) * 0.5;
    let eigen = SymmetricEigen::new(sym);
    let max_eig = eigen.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = tol * max_eig.max(f64::MIN_POSITIVE);
    for &lambda in eigen.eigenvalues.iter() {
        if lambda < -cutoff {
            return Err(Error::NotPsd {
                min_eig: lambda,
                max_eig,
            });
        }
    }
    let kept: Vec<usize> = (0..eigen.eigenvalues.len())
        .filter(|&i| eigen.eigenvalues[i] > cutoff)
        .collect();
    let d = m.dim();
    let mut c = DMatrix::zeros(d, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        let scale = eigen.eigenvalues[i].sqrt();
        c.column_mut(col)
            .copy_from(&(eigen.eigenvectors.column(i) * scale));
    }
    Factorization::from_c(c, m.layout().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn drs_m() -> Preconditioner {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        Preconditioner::new(m, vec![1, 1]).unwrap()
    }

    #[test]
    fn factor_rank_one_difference_matrix() {
        let f = factor_psd(&drs_m(), FACTOR_RTOL).unwrap();
        assert_eq!(f.rank(), 1);
        let cct = f.c_matrix() * f.c_matrix().transpose();
        assert!((cct - drs_m().matrix()).norm() <= 1e-10 * drs_m().matrix().norm());
    }

    #[test]
    fn factor_identity_is_full_rank() {
        let m = Preconditioner::new(DMatrix::identity(2, 2), vec![1, 1]).unwrap();
        let f = factor_psd(&m, FACTOR_RTOL).unwrap();
        assert_eq!(f.rank(), 2);
        let cct = f.c_matrix() * f.c_matrix().transpose();
        assert!((cct - DMatrix::identity(2, 2)).norm() <= 1e-12);
    }

    #[test]
    fn factor_zero_has_rank_zero() {
        let m = Preconditioner::new(DMatrix::zeros(2, 2), vec![1, 1]).unwrap();
        let f = factor_psd(&m, FACTOR_RTOL).unwrap();
        assert_eq!(f.rank(), 0);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            Preconditioner::new(m, vec![1, 1]),
            Err(Error::NotSymmetric { .. })
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            Preconditioner::new(m, vec![1, 1]),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn m_inner_examples() {
        let m = drs_m();
        let u = BlockVector::from_flat(&DVector::from_vec(vec![1.0, 0.0]), &[1, 1]).unwrap();
        let v = BlockVector::from_flat(&DVector::from_vec(vec![0.0, 1.0]), &[1, 1]).unwrap();
        assert_abs_diff_eq!(m.inner(&u, &v).unwrap(), -1.0, epsilon = 1e-14);

        let zero = BlockVector::zeros(&[1, 1]);
        assert_abs_diff_eq!(m.inner(&zero, &v).unwrap(), 0.0, epsilon = 1e-14);

        let id = Preconditioner::new(DMatrix::identity(2, 2), vec![2]).unwrap();
        let u = BlockVector::from_flat(&DVector::from_vec(vec![3.0, 4.0]), &[2]).unwrap();
        assert_abs_diff_eq!(id.inner(&u, &u).unwrap(), 25.0, epsilon = 1e-14);
    }

    #[test]
    fn inner_rejects_dimension_mismatch() {
        let m = drs_m();
        let u = BlockVector::zeros(&[1, 1, 1]);
        assert!(matches!(
            m.inner(&u, &u),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn drs_cstar_is_difference() {
        // C* = [I -I] on H = R: u = (3, 1) reduces to w = 2.
        let c = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let f = Factorization::from_c(c, vec![1, 1]).unwrap();
        let u = BlockVector::from_flat(&DVector::from_vec(vec![3.0, 1.0]), &[1, 1]).unwrap();
        let w = f.apply_cstar(&u).unwrap();
        assert_abs_diff_eq!(w[0], 2.0, epsilon = 1e-14);

        let back = f.apply_c(&DVector::zeros(1)).unwrap();
        assert_eq!(back.norm(), 0.0);
    }

    #[test]
    fn identity_factor_roundtrips() {
        let m = Preconditioner::new(DMatrix::identity(3, 3), vec![3]).unwrap();
        let f = factor_psd(&m, FACTOR_RTOL).unwrap();
        let u = BlockVector::from_flat(&DVector::from_vec(vec![1.0, -2.0, 0.5]), &[3]).unwrap();
        let w = f.apply_cstar(&u).unwrap();
        assert_abs_diff_eq!(w.norm(), u.norm(), epsilon = 1e-12);
        let mu = f.apply_c(&w).unwrap();
        assert!(mu.sub(&m.apply(&u).unwrap()).unwrap().norm() <= 1e-12);
    }

    #[test]
    fn lift_is_right_inverse_of_cstar() {
        let mut rng = StdRng::seed_from_u64(7);
        let g = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let m = Preconditioner::new(&g * g.transpose(), vec![3, 3]).unwrap();
        let f = factor_psd(&m, FACTOR_RTOL).unwrap();
        let w = DVector::from_fn(f.rank(), |i, _| 0.3 * i as f64 - 0.5);
        let u = f.lift(&w).unwrap();
        assert!((f.apply_cstar(&u).unwrap() - &w).norm() <= 1e-10);
    }

    fn random_psd(rng: &mut StdRng, d: usize, r: usize) -> Preconditioner {
        let g = DMatrix::from_fn(d, r, |_, _| rng.gen_range(-1.0..1.0));
        Preconditioner::new(&g * g.transpose(), vec![d]).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn factorization_reproduces_m(seed in 0u64..1000, d in 2usize..=8, defect in 1usize..=3) {
            let mut rng = StdRng::seed_from_u64(seed);
            let r = d.saturating_sub(defect).max(1);
            let m = random_psd(&mut rng, d, r);
            let f = factor_psd(&m, FACTOR_RTOL).unwrap();
            prop_assert!(f.rank() <= r);
            let cct = f.c_matrix() * f.c_matrix().transpose();
            let err = (cct - m.matrix()).norm();
            prop_assert!(err <= 1e-10 * m.matrix().norm().max(1e-300));
            // Injectivity: Gram matrix of C is positive definite.
            if f.rank() > 0 {
                let gram = f.c_matrix().transpose() * f.c_matrix();
                prop_assert!(gram.cholesky().is_some());
            }
        }

        #[test]
        fn cstar_norm_matches_seminorm(seed in 0u64..1000, d in 2usize..=8) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = random_psd(&mut rng, d, d - 1);
            let f = factor_psd(&m, FACTOR_RTOL).unwrap();
            let u = BlockVector::from_flat(
                &DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
                &[d],
            ).unwrap();
            let lhs = f.apply_cstar(&u).unwrap().norm_squared();
            let rhs = m.inner(&u, &u).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs() + 1e-14);
            // C(C^T u) reproduces Mu.
            let back = f.apply_c(&f.apply_cstar(&u).unwrap()).unwrap();
            let mu = m.apply(&u).unwrap();
            prop_assert!(back.sub(&mu).unwrap().norm() <= 1e-10 * (1.0 + mu.norm()));
        }

        #[test]
        fn inner_is_symmetric_and_bilinear(seed in 0u64..1000, d in 2usize..=6) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = random_psd(&mut rng, d, d);
            let draw = |rng: &mut StdRng| {
                BlockVector::from_flat(
                    &DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
                    &[d],
                ).unwrap()
            };
            let (u, v, w) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let sym = (m.inner(&u, &v).unwrap() - m.inner(&v, &u).unwrap()).abs();
            prop_assert!(sym <= 1e-10);
            let comb = u.scale(a).axpy(b, &v).unwrap();
            let lin = m.inner(&comb, &w).unwrap()
                - (a * m.inner(&u, &w).unwrap() + b * m.inner(&v, &w).unwrap());
            prop_assert!(lin.abs() <= 1e-9);
        }

        #[test]
        fn parallelogram_identity_in_seminorm(seed in 0u64..1000, alpha in 0.0f64..=2.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let d = 5;
            let m = random_psd(&mut rng, d, 3);
            let draw = |rng: &mut StdRng| {
                BlockVector::from_flat(
                    &DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0)),
                    &[d],
                ).unwrap()
            };
            let (u, v) = (draw(&mut rng), draw(&mut rng));
            let mix = u.scale(alpha).axpy(1.0 - alpha, &v).unwrap();
            let diff = u.sub(&v).unwrap();
            let lhs = m.inner(&mix, &mix).unwrap()
                + alpha * (1.0 - alpha) * m.inner(&diff, &diff).unwrap();
            let rhs = alpha * m.inner(&u, &u).unwrap()
                + (1.0 - alpha) * m.inner(&v, &v).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
    }
}

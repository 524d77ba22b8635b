//! Returns data: CSV ingestion, moment estimation, and a deterministic
//! synthetic generator standing in for external market data.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A T×n matrix of asset returns, one row per market day.
#[derive(Debug, Clone)]
pub struct ReturnsData {
    pub returns: DMatrix<f64>,
    pub asset_names: Vec<String>,
}

impl ReturnsData {
    pub fn days(&self) -> usize {
        self.returns.nrows()
    }

    pub fn assets(&self) -> usize {
        self.returns.ncols()
    }
}

/// Parses a returns CSV: a header row naming the assets, then one numeric
/// row per day. Ragged rows and non-numeric cells are reported with their
/// 1-based (row, column) location.
pub fn load_returns(path: &Path) -> Result<ReturnsData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let asset_names: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let n = asset_names.len();
    if n == 0 {
        return Err(Error::ParseError {
            row: 1,
            col: 1,
            detail: "empty header".into(),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 2; // 1-based, after the header
        let record = record?;
        if record.len() != n {
            return Err(Error::ParseError {
                row: row_no,
                col: record.len().min(n) + 1,
                detail: format!("expected {n} cells, found {}", record.len()),
            });
        }
        let mut row = Vec::with_capacity(n);
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::ParseError {
                row: row_no,
                col: j + 1,
                detail: format!("not a number: {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::ParseError {
                    row: row_no,
                    col: j + 1,
                    detail: format!("non-finite value {value}"),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let t = rows.len();
    let returns = DMatrix::from_fn(t, n, |i, j| rows[i][j]);
    Ok(ReturnsData {
        returns,
        asset_names,
    })
}

/// Writes a returns CSV in the format [`load_returns`] reads.
pub fn save_returns(data: &ReturnsData, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(&data.asset_names)?;
    for i in 0..data.days() {
        let row: Vec<String> = (0..data.assets())
            .map(|j| format!("{:.17e}", data.returns[(i, j)]))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Sample mean and covariance of the returns: r = column means,
/// Σ = 1/(T−1) Σ(x − x̄)(x − x̄)ᵀ, symmetrized with negative eigenvalues
/// clipped at zero.
pub fn estimate(data: &ReturnsData) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (t, n) = (data.days(), data.assets());
    if t < 2 {
        return Err(Error::InsufficientData { needed: 2, got: t });
    }
    let mut mean = DVector::zeros(n);
    for i in 0..t {
        mean += data.returns.row(i).transpose();
    }
    mean /= t as f64;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..t {
        let centered = data.returns.row(i).transpose() - &mean;
        cov += &centered * centered.transpose();
    }
    cov /= (t - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    // Clip rounding-level negative eigenvalues so downstream PSD checks hold.
    let eigen = SymmetricEigen::new(cov);
    let clipped = DVector::from_fn(n, |i, _| eigen.eigenvalues[i].max(0.0));
    let cov =
        &eigen.eigenvectors * DMatrix::from_diagonal(&clipped) * eigen.eigenvectors.transpose();
    Ok((mean, (&cov + cov.transpose()) * 0.5))
}

/// Deterministic factor-model returns: three common factors plus
/// idiosyncratic noise, scaled to daily-return magnitudes.
pub fn synthetic_data(seed: u64, n: usize, t: usize) -> ReturnsData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = 3.min(n);
    let normal = move |rng: &mut ChaCha8Rng| {
        // Box-Muller on uniform draws keeps the generator dependency small.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let loadings = DMatrix::from_fn(n, factors, |_, _| normal(&mut rng) * 0.01);
    let drift = DVector::from_fn(n, |_, _| normal(&mut rng) * 0.001);
    let mut returns = DMatrix::zeros(t, n);
    for day in 0..t {
        let f = DVector::from_fn(factors, |_, _| normal(&mut rng));
        for j in 0..n {
            let idio = normal(&mut rng) * 0.005;
            returns[(day, j)] = drift[j] + loadings.row(j).transpose().dot(&f) + idio;
        }
    }
    let asset_names = (0..n).map(|j| format!("asset_{j}")).collect();
    ReturnsData {
        returns,
        asset_names,
    }
}

//! Masking, error metrics and a sampler for synthetic copula data.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, psd_sqrt};
use crate::lowrank::LowRankParams;
use crate::normal::{std_normal_cdf, std_normal_quantile};

/// Hide `round(fraction · #observed)` observed cells chosen uniformly at random,
/// never the last observed cell of a column.
pub fn mask_mcar(table: &DataTable, fraction: f64, seed: u64) -> Result<DataTable> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("mask fraction must be in (0, 1), got {fraction}")));
    }
    let cells: Vec<(usize, usize)> = (0..table.n_rows())
        .flat_map(|i| (0..table.n_cols()).map(move |j| (i, j)))
        .filter(|&(i, j)| !table.is_missing(i, j))
        .collect();
    let target = (fraction * cells.len() as f64).round() as usize;
    let mut left: Vec<usize> = (0..table.n_cols()).map(|j| table.observed(j).len()).collect();
    let maskable: usize = left.iter().map(|&c| c.saturating_sub(1)).sum();
    if target > maskable {
        return Err(Error::InvalidConfig(format!(
            "masking {target} cells would empty a column ({maskable} can be masked)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, cells.len(), cells.len());
    let mut out = table.clone();
    let mut masked = 0;
    for idx in order {
        if masked == target {
            break;
        }
        let (i, j) = cells[idx];
        if left[j] > 1 {
            out.set(i, j, None);
            left[j] -= 1;
            masked += 1;
        }
    }
    Ok(out)
}

fn check_same_shape(a: &DataTable, b: &DataTable, what: &str) -> Result<()> {
    if a.n_rows() != b.n_rows() || a.n_cols() != b.n_cols() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.n_rows(),
            a.n_cols(),
            b.n_rows(),
            b.n_cols()
        )));
    }
    Ok(())
}

/// Cells missing in `masked` but present in `truth`, per column.
fn eval_cells(truth: &DataTable, masked: &DataTable, col: usize) -> Vec<usize> {
    (0..truth.n_rows())
        .filter(|&i| masked.is_missing(i, col) && !truth.is_missing(i, col))
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-column MAE relative to imputing the observed median. `None` when a column
/// has no evaluation cells or the median makes no error.
pub fn smae(imputed: &DataTable, truth: &DataTable, masked: &DataTable) -> Result<Vec<Option<f64>>> {
    check_same_shape(imputed, truth, "imputed vs truth")?;
    check_same_shape(masked, truth, "masked vs truth")?;
    let mut out = Vec::with_capacity(truth.n_cols());
    for j in 0..truth.n_cols() {
        let cells = eval_cells(truth, masked, j);
        let med = median(&masked.observed(j));
        let score = match med {
            Some(med) if !cells.is_empty() => {
                let mut err = 0.0;
                let mut base = 0.0;
                for &i in &cells {
                    let t = truth.get(i, j).unwrap();
                    let v = imputed.get(i, j).unwrap_or(f64::NAN);
                    err += (v - t).abs();
                    base += (med - t).abs();
                }
                if base > 0.0 {
                    Some(err / base)
                } else {
                    None
                }
            }
            _ => None,
        };
        out.push(score);
    }
    Ok(out)
}

/// Mean of the defined scores.
pub fn mean_defined(scores: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = scores.iter().flatten().copied().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Pooled MAE over all evaluation cells; `None` if there are none.
pub fn mae(imputed: &DataTable, truth: &DataTable, masked: &DataTable) -> Result<Option<f64>> {
    check_same_shape(imputed, truth, "imputed vs truth")?;
    check_same_shape(masked, truth, "masked vs truth")?;
    let mut err = 0.0;
    let mut count = 0usize;
    for j in 0..truth.n_cols() {
        for i in eval_cells(truth, masked, j) {
            err += (imputed.get(i, j).unwrap_or(f64::NAN) - truth.get(i, j).unwrap()).abs();
            count += 1;
        }
    }
    Ok(if count == 0 { None } else { Some(err / count as f64) })
}

/// Fraction of evaluation cells whose true value lies in `[lower, upper]`.
pub fn coverage(lower: &DataTable, upper: &DataTable, truth: &DataTable, masked: &DataTable) -> Result<Option<f64>> {
    check_same_shape(lower, truth, "lower vs truth")?;
    check_same_shape(upper, truth, "upper vs truth")?;
    check_same_shape(masked, truth, "masked vs truth")?;
    let mut hit = 0usize;
    let mut count = 0usize;
    for j in 0..truth.n_cols() {
        for i in eval_cells(truth, masked, j) {
            let t = truth.get(i, j).unwrap();
            if let (Some(lo), Some(hi)) = (lower.get(i, j), upper.get(i, j)) {
                if lo <= t && t <= hi {
                    hit += 1;
                }
            }
            count += 1;
        }
    }
    Ok(if count == 0 { None } else { Some(hit as f64 / count as f64) })
}

/// Forward map of one synthetic column from the latent scale.
#[derive(Clone)]
pub enum MarginalSpec {
    /// `x = z`.
    Gaussian,
    /// `F⁻¹(Φ(z))` for an exponential distribution.
    Exponential { rate: f64 },
    /// Level `i + 1` when `z` falls between the i-th and (i+1)-th cutpoints.
    Ordinal { cutpoints: Vec<f64> },
    /// `z` clamped to `[lower, upper]`, giving point masses at the bounds.
    Censored { lower: Option<f64>, upper: Option<f64> },
    /// `x = q(Φ(z))` for a user quantile function.
    Quantile(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for MarginalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarginalSpec::Gaussian => write!(f, "Gaussian"),
            MarginalSpec::Exponential { rate } => write!(f, "Exponential {{ rate: {rate} }}"),
            MarginalSpec::Ordinal { cutpoints } => write!(f, "Ordinal {{ cutpoints: {cutpoints:?} }}"),
            MarginalSpec::Censored { lower, upper } => write!(f, "Censored {{ lower: {lower:?}, upper: {upper:?} }}"),
            MarginalSpec::Quantile(_) => write!(f, "Quantile(..)"),
        }
    }
}

impl MarginalSpec {
    /// Ordinal levels `1..=K` with the given masses (cutpoints at Φ⁻¹ of cumulative sums).
    pub fn ordinal_from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if masses.len() < 2 || masses.iter().any(|&m| !(m > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("ordinal masses must be positive and sum to 1".into()));
        }
        let mut cum = 0.0;
        let mut cutpoints = Vec::with_capacity(masses.len() - 1);
        for &m in &masses[..masses.len() - 1] {
            cum += m;
            cutpoints.push(std_normal_quantile(cum.min(1.0 - 1e-16))?);
        }
        Ok(MarginalSpec::Ordinal { cutpoints })
    }

    pub fn apply(&self, z: f64) -> f64 {
        match self {
            MarginalSpec::Gaussian => z,
            MarginalSpec::Exponential { rate } => {
                // upper tail through the survival function keeps precision
                -std_normal_cdf(-z).ln() / rate
            }
            MarginalSpec::Ordinal { cutpoints } => (cutpoints.iter().filter(|&&c| z >= c).count() + 1) as f64,
            MarginalSpec::Censored { lower, upper } => {
                let z = lower.map_or(z, |l| z.max(l));
                upper.map_or(z, |u| z.min(u))
            }
            MarginalSpec::Quantile(q) => q(std_normal_cdf(z)),
        }
    }
}

/// Latent dependence used by [`sample_gc`].
#[derive(Debug, Clone)]
pub enum LatentSpec {
    Full(DMatrix<f64>),
    LowRank(LowRankParams),
}

/// Draw `n` complete rows `x = f(z)`, `z ~ N(0, Σ)`.
pub fn sample_gc(n: usize, specs: &[MarginalSpec], latent: &LatentSpec, seed: u64) -> Result<DataTable> {
    let p = specs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::<f64>::zeros(n, p);
    match latent {
        LatentSpec::Full(sigma) => {
            if sigma.nrows() != p || sigma.ncols() != p {
                return Err(Error::ShapeMismatch(format!("{}x{} Σ for {p} columns", sigma.nrows(), sigma.ncols())));
            }
            for i in 0..p {
                if (sigma[(i, i)] - 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidConfig(format!("Σ[{i},{i}] = {} is not 1", sigma[(i, i)])));
                }
                for j in 0..i {
                    if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-10 {
                        return Err(Error::InvalidConfig("Σ is not symmetric".into()));
                    }
                }
            }
            if min_eigenvalue(sigma) < -1e-10 {
                return Err(Error::InvalidConfig("Σ is not positive semidefinite".into()));
            }
            let root = psd_sqrt(sigma);
            for i in 0..n {
                let e = DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
                let zi = &root * e;
                z.set_row(i, &zi.transpose());
            }
        }
        LatentSpec::LowRank(lr) => {
            if lr.n_cols() != p {
                return Err(Error::ShapeMismatch(format!("{} loading rows for {p} columns", lr.n_cols())));
            }
            let k = lr.rank();
            let sd = lr.sigma2.sqrt();
            for i in 0..n {
                let t = DVector::<f64>::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                let wt = &lr.w * t;
                for j in 0..p {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    z[(i, j)] = wt[j] + sd * e;
                }
            }
        }
    }
    let rows = (0..n)
        .map(|i| (0..p).map(|j| Some(specs[j].apply(z[(i, j)]))).collect())
        .collect();
    DataTable::from_rows(rows)
}

/// Random correlation matrix `D^{-1/2} (A Aᵀ + εI) D^{-1/2}` with Gaussian `A` (p×k).
pub fn random_correlation(p: usize, k: usize, ridge: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));
    let s = &a * a.transpose() + DMatrix::identity(p, p) * ridge;
    let d = s.diagonal().map(|v| 1.0 / v.sqrt());
    let mut r = DMatrix::from_fn(p, p, |i, j| s[(i, j)] * d[i] * d[j]);
    for i in 0..p {
        r[(i, i)] = 1.0;
    }
    r
}

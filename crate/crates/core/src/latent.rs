//! Gaussian conditioning and the per-row approximate E-step.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{cholesky_with_jitter, log_det_from_cholesky};
use crate::marginal::LatentInterval;
use crate::normal::truncnorm_moments;

pub const DEFAULT_SWEEPS: usize = 2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Conditional mean and covariance of `z_M` given `z_O`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn submatrix(sigma: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| sigma[(rows[i], cols[j])])
}

/// `z_M | z_O ~ N(Σ_MO Σ_OO⁻¹ z_O, Σ_MM − Σ_MO Σ_OO⁻¹ Σ_OM)`.
pub fn conditional_mvn(
    sigma: &DMatrix<f64>,
    observed: &[usize],
    z_obs: &[f64],
    missing: &[usize],
) -> Result<ConditionalGaussian> {
    let m = missing.len();
    if m == 0 {
        return Ok(ConditionalGaussian {
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
        });
    }
    let s_mm = submatrix(sigma, missing, missing);
    if observed.is_empty() {
        return Ok(ConditionalGaussian {
            mean: DVector::zeros(m),
            cov: s_mm,
        });
    }
    let s_oo = submatrix(sigma, observed, observed);
    let s_om = submatrix(sigma, observed, missing);
    let (chol, _) = cholesky_with_jitter(&s_oo)?;
    let x = chol.solve(&s_om);
    let mean = x.transpose() * DVector::from_column_slice(z_obs);
    let mut cov = s_mm - s_om.transpose() * &x;
    symmetrize(&mut cov);
    Ok(ConditionalGaussian { mean, cov })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Pre-truncation conditional of an interval coordinate from the last sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalConditional {
    pub mu: f64,
    pub var: f64,
    pub interval: LatentInterval,
    pub log_mass: f64,
}

/// Posterior summary of one row's latent vector.
#[derive(Debug, Clone)]
pub struct RowPosterior {
    /// `E[z_j | x_O]` for every coordinate.
    pub cond_mean: Vec<f64>,
    /// Truncated variance for interval coordinates, 0 for point observations,
    /// and the conditional variance (diagonal of `cond_cov_missing`) for missing ones.
    pub cond_var: Vec<f64>,
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
    /// `Σ_MM − Σ_MO Σ_OO⁻¹ Σ_OM`, observed coordinates held at their means.
    pub cond_cov_missing: DMatrix<f64>,
    /// `Σ_MO Σ_OO⁻¹`, |M|×|O|.
    pub gain: DMatrix<f64>,
    /// One entry per observed position; `None` for point observations.
    pub intervals: Vec<Option<IntervalConditional>>,
    /// Gaussian log density of the observed means under Σ_OO plus interval log masses.
    pub loglik: f64,
}

impl RowPosterior {
    /// Variance of observed position `k` (0 for points).
    pub fn observed_var(&self, k: usize) -> f64 {
        self.cond_var[self.observed[k]]
    }
}

/// Approximate posterior of the latent row given per-column intervals
/// (`None` marks a missing cell).
///
/// Point observations are exact. Interval coordinates run `sweeps`
/// coordinate-wise passes: each is conditioned on the current means of the
/// other observed coordinates, then truncated to its interval.
pub fn row_posterior(
    sigma: &DMatrix<f64>,
    row: &[Option<LatentInterval>],
    sweeps: usize,
) -> Result<RowPosterior> {
    let p = row.len();
    let observed: Vec<usize> = (0..p).filter(|&j| row[j].is_some()).collect();
    let missing: Vec<usize> = (0..p).filter(|&j| row[j].is_none()).collect();
    let mut cond_mean = vec![0.0; p];
    let mut cond_var = vec![0.0; p];

    if observed.is_empty() {
        let cov = submatrix(sigma, &missing, &missing);
        for (a, &j) in missing.iter().enumerate() {
            cond_var[j] = cov[(a, a)];
        }
        return Ok(RowPosterior {
            cond_mean,
            cond_var,
            observed,
            missing,
            cond_cov_missing: cov,
            gain: DMatrix::zeros(p, 0),
            intervals: Vec::new(),
            loglik: 0.0,
        });
    }

    let no = observed.len();
    let s_oo = submatrix(sigma, &observed, &observed);
    let (chol, _) = cholesky_with_jitter(&s_oo)?;
    let log_det = log_det_from_cholesky(&chol);

    let mut z = DVector::zeros(no);
    let mut intervals: Vec<Option<IntervalConditional>> = vec![None; no];
    let mut interval_pos = Vec::new();
    for (k, &j) in observed.iter().enumerate() {
        let iv = row[j].unwrap();
        if iv.is_point() {
            z[k] = iv.lower;
        } else {
            let t = truncnorm_moments(0.0, 1.0, iv);
            z[k] = t.mean;
            cond_var[j] = t.var;
            intervals[k] = Some(IntervalConditional {
                mu: 0.0,
                var: 1.0,
                interval: iv,
                log_mass: t.log_mass,
            });
            interval_pos.push(k);
        }
    }

    if !interval_pos.is_empty() && no > 1 {
        let prec = chol.inverse();
        for _ in 0..sweeps {
            for &k in &interval_pos {
                let pkk = prec[(k, k)];
                let mut acc = 0.0;
                for l in 0..no {
                    if l != k {
                        acc += prec[(k, l)] * z[l];
                    }
                }
                let var = 1.0 / pkk;
                let mu = -acc * var;
                let iv = row[observed[k]].unwrap();
                let t = truncnorm_moments(mu, var, iv);
                z[k] = t.mean;
                cond_var[observed[k]] = t.var;
                intervals[k] = Some(IntervalConditional {
                    mu,
                    var,
                    interval: iv,
                    log_mass: t.log_mass,
                });
            }
        }
    }
    for (k, &j) in observed.iter().enumerate() {
        cond_mean[j] = z[k];
    }

    let alpha = chol.solve(&z);
    let quad = z.dot(&alpha);
    let mut loglik = -0.5 * (no as f64 * LN_2PI + log_det + quad);
    for iv in intervals.iter().flatten() {
        loglik += iv.log_mass.max(-745.0);
    }

    let (gain, cov) = if missing.is_empty() {
        (DMatrix::zeros(0, no), DMatrix::zeros(0, 0))
    } else {
        let s_om = submatrix(sigma, &observed, &missing);
        let x = chol.solve(&s_om);
        let gain = x.transpose();
        let mean_m = &gain * &z;
        let mut cov = submatrix(sigma, &missing, &missing) - s_om.transpose() * &x;
        symmetrize(&mut cov);
        for (a, &j) in missing.iter().enumerate() {
            cond_mean[j] = mean_m[a];
            cond_var[j] = cov[(a, a)].max(0.0);
        }
        (gain, cov)
    };

    Ok(RowPosterior {
        cond_mean,
        cond_var,
        observed,
        missing,
        cond_cov_missing: cov,
        gain,
        intervals,
        loglik,
    })
}

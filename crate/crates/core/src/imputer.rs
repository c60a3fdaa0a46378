//! Single and multiple imputation and confidence intervals from a fitted model.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::DataTable;
use crate::em::{CopulaModel, CorrelationModel};
use crate::error::{Error, Result};
use crate::latent::{row_posterior, IntervalConditional, RowPosterior, DEFAULT_SWEEPS};
use crate::linalg::psd_sqrt;
use crate::lowrank::{factor_posterior, FactorPosterior, LowRankParams};
use crate::marginal::LatentInterval;
use crate::normal::{sample_truncnorm, std_normal_quantile};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_CI_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiKind {
    /// Latent conditional mean ± z·sd mapped through the marginals.
    Analytic,
    /// Empirical quantiles over multiple imputations.
    Quantile,
}

impl FromStr for CiKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "analytic" => Ok(CiKind::Analytic),
            "quantile" => Ok(CiKind::Quantile),
            other => Err(format!("unknown interval kind '{other}' (expected analytic or quantile)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImputationResult {
    pub imputed: DataTable,
    /// n×p conditional latent means.
    pub latent_means: DMatrix<f64>,
    /// Defined only at cells missing in the input.
    pub ci_lower: Option<DataTable>,
    pub ci_upper: Option<DataTable>,
}

enum Posterior {
    Full(RowPosterior),
    Factor(FactorPosterior),
}

impl Posterior {
    fn of(model: &CopulaModel, row: &[Option<LatentInterval>], i: usize) -> Result<Self> {
        match &model.corr {
            CorrelationModel::Full(s) => row_posterior(s, row, DEFAULT_SWEEPS).map(Posterior::Full),
            CorrelationModel::LowRank(lr) => factor_posterior(lr, row, DEFAULT_SWEEPS).map(Posterior::Factor),
        }
        .map_err(|e| e.at_row(i))
    }

    fn cond_mean(&self) -> &[f64] {
        match self {
            Posterior::Full(p) => &p.cond_mean,
            Posterior::Factor(p) => &p.cond_mean,
        }
    }

    fn cond_var(&self) -> &[f64] {
        match self {
            Posterior::Full(p) => &p.cond_var,
            Posterior::Factor(p) => &p.cond_var,
        }
    }
}

/// Draws latent rows from one row's approximate posterior.
enum RowSampler<'a> {
    Full {
        post: RowPosterior,
        root: DMatrix<f64>,
    },
    Factor {
        post: FactorPosterior,
        params: &'a LowRankParams,
        root: DMatrix<f64>,
    },
}

impl<'a> RowSampler<'a> {
    fn new(model: &'a CopulaModel, post: Posterior) -> Self {
        match post {
            Posterior::Full(post) => {
                let root = psd_sqrt(&post.cond_cov_missing);
                RowSampler::Full { post, root }
            }
            Posterior::Factor(post) => {
                let params = match &model.corr {
                    CorrelationModel::LowRank(lr) => lr,
                    CorrelationModel::Full(_) => unreachable!("factor posterior from a full model"),
                };
                let root = psd_sqrt(&(&post.m_inv * params.sigma2));
                RowSampler::Factor { post, params, root }
            }
        }
    }

    fn sample_observed<R: rand::Rng>(
        rng: &mut R,
        observed: &[usize],
        cond_mean: &[f64],
        intervals: &[Option<IntervalConditional>],
    ) -> Vec<f64> {
        observed
            .iter()
            .enumerate()
            .map(|(k, &j)| match intervals[k] {
                Some(ic) => sample_truncnorm(rng, ic.mu, ic.var, ic.interval),
                None => cond_mean[j],
            })
            .collect()
    }

    /// One latent draw for the full row.
    fn draw<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            RowSampler::Full { post, root } => {
                let mut z = post.cond_mean.clone();
                let zo = Self::sample_observed(rng, &post.observed, &post.cond_mean, &post.intervals);
                for (k, &j) in post.observed.iter().enumerate() {
                    z[j] = zo[k];
                }
                if !post.missing.is_empty() {
                    let eps = DVector::<f64>::from_fn(post.missing.len(), |_, _| StandardNormal.sample(rng));
                    let mean = if post.observed.is_empty() {
                        DVector::zeros(post.missing.len())
                    } else {
                        &post.gain * DVector::from_vec(zo)
                    };
                    let zm = mean + root * eps;
                    for (a, &j) in post.missing.iter().enumerate() {
                        z[j] = zm[a];
                    }
                }
                z
            }
            RowSampler::Factor { post, params, root } => {
                let mut z = post.cond_mean.clone();
                let zo = Self::sample_observed(rng, &post.observed, &post.cond_mean, &post.intervals);
                let k = params.rank();
                let mut u = DVector::<f64>::zeros(k);
                for (pos, &j) in post.observed.iter().enumerate() {
                    z[j] = zo[pos];
                    u += params.w.row(j).transpose() * zo[pos];
                }
                if !post.missing.is_empty() {
                    let eps = DVector::<f64>::from_fn(k, |_, _| StandardNormal.sample(rng));
                    let t = &post.m_inv * u + root * eps;
                    let sd = params.sigma2.sqrt();
                    for &j in &post.missing {
                        let e: f64 = StandardNormal.sample(rng);
                        z[j] = params.w.row(j).dot(&t.transpose()) + sd * e;
                    }
                }
                z
            }
        }
    }

    fn missing(&self) -> &[usize] {
        match self {
            RowSampler::Full { post, .. } => &post.missing,
            RowSampler::Factor { post, .. } => &post.missing,
        }
    }
}

fn check_shape(model: &CopulaModel, table: &DataTable) -> Result<()> {
    if table.n_cols() != model.n_cols() {
        return Err(Error::ShapeMismatch(format!(
            "table has {} columns, model has {}",
            table.n_cols(),
            model.n_cols()
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// RNG for row `i`: the seed selects the key, the row the stream.
fn row_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Fill each missing cell with the marginal transform of its conditional latent mean.
pub fn impute_single(model: &CopulaModel, table: &DataTable) -> Result<ImputationResult> {
    check_shape(model, table)?;
    let rows = model.encode(table)?;
    let (n, p) = (table.n_rows(), table.n_cols());
    let mut imputed = table.clone();
    let mut latent_means = DMatrix::zeros(n, p);
    for (i, row) in rows.iter().enumerate() {
        let post = Posterior::of(model, row, i)?;
        let mean = post.cond_mean();
        for j in 0..p {
            latent_means[(i, j)] = mean[j];
            if table.is_missing(i, j) {
                imputed.set(i, j, Some(model.marginals[j].from_latent(mean[j])));
            }
        }
    }
    Ok(ImputationResult {
        imputed,
        latent_means,
        ci_lower: None,
        ci_upper: None,
    })
}

/// Impute new rows with a fitted model; marginals and Σ are not refitted.
pub fn transform_out_of_sample(model: &CopulaModel, rows: &DataTable) -> Result<ImputationResult> {
    impute_single(model, rows)
}

/// Per row, `num` latent draws of the missing cells mapped to observed space.
/// `draws[i][d]` lists values for the row's missing columns in order.
fn draw_missing(model: &CopulaModel, table: &DataTable, num: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<Vec<f64>>)>> {
    let rows = model.encode(table)?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let post = Posterior::of(model, row, i)?;
        let sampler = RowSampler::new(model, post);
        let missing = sampler.missing().to_vec();
        if missing.is_empty() {
            out.push((missing, Vec::new()));
            continue;
        }
        let mut rng = row_rng(seed, i);
        let draws = (0..num)
            .map(|_| {
                let z = sampler.draw(&mut rng);
                missing.iter().map(|&j| model.marginals[j].from_latent(z[j])).collect()
            })
            .collect();
        out.push((missing, draws));
    }
    Ok(out)
}

/// `num` completed tables drawn from the conditional distribution of the missing cells.
pub fn impute_multiple(model: &CopulaModel, table: &DataTable, num: usize, seed: u64) -> Result<Vec<DataTable>> {
    check_shape(model, table)?;
    if num == 0 {
        return Err(Error::InvalidConfig("number of imputations must be at least 1".into()));
    }
    let draws = draw_missing(model, table, num, seed)?;
    let mut tables = vec![table.clone(); num];
    for (i, (missing, row_draws)) in draws.iter().enumerate() {
        for (d, vals) in row_draws.iter().enumerate() {
            for (a, &j) in missing.iter().enumerate() {
                tables[d].set(i, j, Some(vals[a]));
            }
        }
    }
    Ok(tables)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-sided `1 − alpha` intervals for every missing cell.
pub fn confidence_intervals(
    model: &CopulaModel,
    table: &DataTable,
    alpha: f64,
    kind: CiKind,
    num_samples: usize,
    seed: u64,
) -> Result<(DataTable, DataTable)> {
    check_shape(model, table)?;
    check_alpha(alpha)?;
    let (n, p) = (table.n_rows(), table.n_cols());
    let empty = DataTable::new(table.col_names().to_vec(), vec![vec![None; p]; n])?;
    let mut lower = empty.clone();
    let mut upper = empty;
    match kind {
        CiKind::Analytic => {
            let q = std_normal_quantile(1.0 - alpha / 2.0)?;
            let rows = model.encode(table)?;
            for (i, row) in rows.iter().enumerate() {
                let post = Posterior::of(model, row, i)?;
                for j in 0..p {
                    if !table.is_missing(i, j) {
                        continue;
                    }
                    let mu = post.cond_mean()[j];
                    let sd = post.cond_var()[j].max(0.0).sqrt();
                    let m = &model.marginals[j];
                    lower.set(i, j, Some(m.from_latent(mu - q * sd)));
                    upper.set(i, j, Some(m.from_latent(mu + q * sd)));
                }
            }
        }
        CiKind::Quantile => {
            if num_samples < 2 {
                return Err(Error::InvalidConfig("quantile intervals need at least 2 samples".into()));
            }
            let draws = draw_missing(model, table, num_samples, seed)?;
            for (i, (missing, row_draws)) in draws.iter().enumerate() {
                for (a, &j) in missing.iter().enumerate() {
                    let mut vals: Vec<f64> = row_draws.iter().map(|d| d[a]).collect();
                    vals.sort_by(f64::total_cmp);
                    lower.set(i, j, Some(quantile_sorted(&vals, alpha / 2.0)));
                    upper.set(i, j, Some(quantile_sorted(&vals, 1.0 - alpha / 2.0)));
                }
            }
        }
    }
    Ok((lower, upper))
}

/// Single imputation plus intervals in one result.
pub fn impute_with_intervals(
    model: &CopulaModel,
    table: &DataTable,
    alpha: f64,
    kind: CiKind,
    num_samples: usize,
    seed: u64,
) -> Result<ImputationResult> {
    let mut res = impute_single(model, table)?;
    let (lo, hi) = confidence_intervals(model, table, alpha, kind, num_samples, seed)?;
    res.ci_lower = Some(lo);
    res.ci_upper = Some(hi);
    Ok(res)
}

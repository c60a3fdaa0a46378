//! EM fitting of the copula correlation matrix: full-batch and offline mini-batch.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{detect_variable_types, DataTable, VariableType, DEFAULT_MIN_ORD_RATIO};
use crate::error::{Error, Result};
use crate::latent::{row_posterior, RowPosterior, DEFAULT_SWEEPS};
use crate::linalg::{min_eigenvalue, normalize_to_correlation, project_to_correlation, relative_frobenius};
use crate::lowrank::LowRankParams;
use crate::marginal::{fit_marginal, LatentInterval, Marginal};
use crate::normal::truncnorm_moments;

/// One row on the latent scale; `None` is a missing cell.
pub type LatentRow = Vec<Option<LatentInterval>>;

/// Rows per E-step work unit. Partial sums are combined in chunk order, so the
/// result does not depend on the number of workers.
const CHUNK_ROWS: usize = 64;

const INIT_EIGEN_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    Standard,
    MinibatchOffline,
}

/// Step size schedule `t ↦ η_t` for mini-batch EM, `t` starting at 1.
#[derive(Clone)]
pub enum StepSize {
    /// `c / (c + t)`
    Decaying { c: f64 },
    Custom(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            StepSize::Decaying { c } => c / (c + t as f64),
            StepSize::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Decaying { c } => write!(f, "Decaying {{ c: {c} }}"),
            StepSize::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Decaying { c: 5.0 }
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: TrainingMode,
    pub batch_size: usize,
    pub num_pass: usize,
    pub stepsize: StepSize,
    pub seed: u64,
    pub n_workers: usize,
    /// Coordinate sweeps of the approximate E-step.
    pub sweeps: usize,
    pub min_ord_ratio: f64,
    /// Per-column types; detected from the data when `None`.
    pub var_types: Option<Vec<VariableType>>,
    pub verbose: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 0.01,
            max_iter: 50,
            mode: TrainingMode::Standard,
            batch_size: 100,
            num_pass: 2,
            stepsize: StepSize::default(),
            seed: 0,
            n_workers: 1,
            sweeps: DEFAULT_SWEEPS,
            min_ord_ratio: DEFAULT_MIN_ORD_RATIO,
            var_types: None,
            verbose: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.num_pass == 0 {
            return Err(Error::InvalidConfig("num_pass must be at least 1".into()));
        }
        if self.n_workers == 0 {
            return Err(Error::InvalidConfig("n_workers must be at least 1".into()));
        }
        if !(self.min_ord_ratio > 0.0 && self.min_ord_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "min_ord_ratio must be in (0, 1), got {}",
                self.min_ord_ratio
            )));
        }
        if let StepSize::Decaying { c } = self.stepsize {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(format!("stepsize c must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Check `η_1..η_T` lie in (0, 1) and never increase.
    fn validate_steps(&self, total: usize) -> Result<()> {
        let mut prev = f64::INFINITY;
        for t in 1..=total {
            let eta = self.stepsize.at(t);
            if !(eta > 0.0 && eta < 1.0) {
                return Err(Error::InvalidConfig(format!("step size at t={t} is {eta}, must be in (0, 1)")));
            }
            if eta > prev {
                return Err(Error::InvalidConfig(format!(
                    "step sizes must be non-increasing (t={t}: {eta} > {prev})"
                )));
            }
            prev = eta;
        }
        Ok(())
    }
}

/// Latent correlation structure of a fitted model.
#[derive(Debug, Clone)]
pub enum CorrelationModel {
    Full(DMatrix<f64>),
    LowRank(LowRankParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Relative Frobenius change of Σ.
    pub change: f64,
    /// Approximate average log-likelihood under the Σ used in the E-step.
    pub loglik: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Rows with no observed cell, left out of fitting.
    pub excluded_rows: Vec<usize>,
    /// Completed passes over the data (mini-batch mode).
    pub passes: usize,
}

#[derive(Debug, Clone)]
pub struct CopulaModel {
    pub(crate) corr: CorrelationModel,
    pub(crate) marginals: Vec<Marginal>,
    pub(crate) col_names: Vec<String>,
    pub(crate) trace: FitTrace,
}

impl CopulaModel {
    /// Assemble a model from a correlation matrix and fitted marginals.
    pub fn from_parts(corr: DMatrix<f64>, marginals: Vec<Marginal>) -> Result<Self> {
        if corr.nrows() != marginals.len() || corr.ncols() != marginals.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} correlation for {} marginals",
                corr.nrows(),
                corr.ncols(),
                marginals.len()
            )));
        }
        let p = marginals.len();
        Ok(Self {
            corr: CorrelationModel::Full(corr),
            marginals,
            col_names: (1..=p).map(|j| format!("V{j}")).collect(),
            trace: FitTrace::default(),
        })
    }

    pub fn from_low_rank(params: LowRankParams, marginals: Vec<Marginal>) -> Result<Self> {
        if params.w.nrows() != marginals.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} loading rows for {} marginals",
                params.w.nrows(),
                marginals.len()
            )));
        }
        let p = marginals.len();
        Ok(Self {
            corr: CorrelationModel::LowRank(params),
            marginals,
            col_names: (1..=p).map(|j| format!("V{j}")).collect(),
            trace: FitTrace::default(),
        })
    }

    pub fn n_cols(&self) -> usize {
        self.marginals.len()
    }

    /// The p×p correlation matrix (formed from the factors for low-rank models).
    pub fn corr(&self) -> DMatrix<f64> {
        match &self.corr {
            CorrelationModel::Full(s) => s.clone(),
            CorrelationModel::LowRank(lr) => lr.implied_corr(),
        }
    }

    pub fn correlation_model(&self) -> &CorrelationModel {
        &self.corr
    }

    pub fn low_rank(&self) -> Option<&LowRankParams> {
        match &self.corr {
            CorrelationModel::LowRank(lr) => Some(lr),
            CorrelationModel::Full(_) => None,
        }
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn vartypes(&self) -> Vec<VariableType> {
        self.marginals.iter().map(|m| m.vartype()).collect()
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn trace(&self) -> &FitTrace {
        &self.trace
    }

    /// Encode a table's observed cells with this model's marginals.
    pub fn encode(&self, table: &DataTable) -> Result<Vec<LatentRow>> {
        if table.n_cols() != self.n_cols() {
            return Err(Error::ShapeMismatch(format!(
                "table has {} columns, model has {}",
                table.n_cols(),
                self.n_cols()
            )));
        }
        Ok(encode_rows(table, &self.marginals))
    }
}

pub fn encode_rows(table: &DataTable, marginals: &[Marginal]) -> Vec<LatentRow> {
    table.rows().map(|r| encode_row(r, marginals)).collect()
}

pub fn encode_row(row: &[Option<f64>], marginals: &[Marginal]) -> LatentRow {
    row.iter()
        .zip(marginals)
        .map(|(v, m)| v.map(|x| m.to_latent_interval(x)))
        .collect()
}

/// Fit a marginal per column from its observed values.
pub fn fit_marginals(table: &DataTable, types: &[VariableType]) -> Result<Vec<Marginal>> {
    table.check_columns_observed()?;
    (0..table.n_cols())
        .map(|j| fit_marginal(&table.observed(j), None, types[j]))
        .collect()
}

pub(crate) fn resolve_types(table: &DataTable, config: &FitConfig) -> Result<Vec<VariableType>> {
    match &config.var_types {
        Some(t) if t.len() != table.n_cols() => Err(Error::ShapeMismatch(format!(
            "{} variable types for {} columns",
            t.len(),
            table.n_cols()
        ))),
        Some(t) => Ok(t.clone()),
        None => detect_variable_types(table, config.min_ord_ratio),
    }
}

/// Expected sufficient statistics of a batch of rows.
#[derive(Debug, Clone)]
pub struct EStepOutput {
    /// `Σ_i E[z_i z_iᵀ | x_O]`.
    pub s: DMatrix<f64>,
    /// `Σ_i E[z_i | x_O]`.
    pub m: DVector<f64>,
    /// Average approximate log-likelihood.
    pub loglik: f64,
    pub n: usize,
    /// `E[z_i | x_O]` per row.
    pub latent_means: Vec<Vec<f64>>,
}

/// Add one row's expected second moments to `s`.
pub(crate) fn accumulate_row(post: &RowPosterior, s: &mut DMatrix<f64>, m: &mut DVector<f64>) {
    let p = post.cond_mean.len();
    let z = &post.cond_mean;
    for a in 0..p {
        m[a] += z[a];
        if z[a] == 0.0 {
            continue;
        }
        for b in 0..p {
            s[(a, b)] += z[a] * z[b];
        }
    }
    let miss = &post.missing;
    for a in 0..miss.len() {
        for b in 0..miss.len() {
            s[(miss[a], miss[b])] += post.cond_cov_missing[(a, b)];
        }
    }
    for (k, iv) in post.intervals.iter().enumerate() {
        if iv.is_none() {
            continue;
        }
        let j = post.observed[k];
        let v = post.cond_var[j];
        if v == 0.0 {
            continue;
        }
        s[(j, j)] += v;
        // observed means feed the missing block through the gain, so their
        // uncertainty propagates there too
        for a in 0..miss.len() {
            let ga = post.gain[(a, k)] * v;
            s[(miss[a], j)] += ga;
            s[(j, miss[a])] += ga;
            for b in 0..miss.len() {
                s[(miss[a], miss[b])] += ga * post.gain[(b, k)];
            }
        }
    }
}

/// Optional thread pool for E-step chunks.
pub(crate) struct Workers(Option<rayon::ThreadPool>);

impl Workers {
    pub(crate) fn new(n: usize) -> Result<Self> {
        if n <= 1 {
            return Ok(Workers(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|p| Workers(Some(p)))
            .map_err(|e| Error::InvalidConfig(format!("cannot start {n} workers: {e}")))
    }

    /// Map `f` over chunk indices, results in chunk order.
    pub(crate) fn map_chunks<T, F>(&self, n_chunks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.0 {
            None => (0..n_chunks).map(f).collect(),
            Some(pool) => pool.install(|| (0..n_chunks).into_par_iter().map(f).collect()),
        }
    }
}

struct Partial {
    s: DMatrix<f64>,
    m: DVector<f64>,
    loglik: f64,
    means: Vec<Vec<f64>>,
}

/// E-step over `rows`, each of which must have at least one observed cell.
pub fn estep(sigma: &DMatrix<f64>, rows: &[LatentRow], sweeps: usize, n_workers: usize) -> Result<EStepOutput> {
    let workers = Workers::new(n_workers)?;
    estep_with(sigma, rows, sweeps, &workers)
}

pub(crate) fn estep_with(
    sigma: &DMatrix<f64>,
    rows: &[LatentRow],
    sweeps: usize,
    workers: &Workers,
) -> Result<EStepOutput> {
    let p = sigma.nrows();
    let n = rows.len();
    let n_chunks = n.div_ceil(CHUNK_ROWS);
    let partials = workers.map_chunks(n_chunks, |c| -> Result<Partial> {
        let start = c * CHUNK_ROWS;
        let end = (start + CHUNK_ROWS).min(n);
        let mut part = Partial {
            s: DMatrix::zeros(p, p),
            m: DVector::zeros(p),
            loglik: 0.0,
            means: Vec::with_capacity(end - start),
        };
        for (i, row) in rows[start..end].iter().enumerate() {
            let post = row_posterior(sigma, row, sweeps).map_err(|e| e.at_row(start + i))?;
            accumulate_row(&post, &mut part.s, &mut part.m);
            part.loglik += post.loglik;
            part.means.push(post.cond_mean);
        }
        Ok(part)
    });
    let mut out = EStepOutput {
        s: DMatrix::zeros(p, p),
        m: DVector::zeros(p),
        loglik: 0.0,
        n,
        latent_means: Vec::with_capacity(n),
    };
    for part in partials {
        let part = part?;
        out.s += part.s;
        out.m += part.m;
        out.loglik += part.loglik;
        out.latent_means.extend(part.means);
    }
    if n > 0 {
        out.loglik /= n as f64;
    }
    Ok(out)
}

/// Correlation matrix of `S / n`, repaired to PSD only if an eigenvalue is negative.
pub fn mstep(s: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidConfig("M-step on zero rows".into()));
    }
    let c = s / n as f64;
    let r = normalize_to_correlation(&c)?;
    if min_eigenvalue(&r) < 0.0 {
        return project_to_correlation(&r, 0.0);
    }
    Ok(r)
}

/// Zero the off-diagonal entries of the given coordinates.
pub(crate) fn pin_columns(sigma: &mut DMatrix<f64>, pinned: &[usize]) {
    let p = sigma.nrows();
    for &j in pinned {
        for k in 0..p {
            if k != j {
                sigma[(j, k)] = 0.0;
                sigma[(k, j)] = 0.0;
            }
        }
        sigma[(j, j)] = 1.0;
    }
}

/// Latent point used to initialize a cell: exact for points, the univariate
/// truncated-normal mean for intervals.
pub(crate) fn latent_point(iv: LatentInterval) -> f64 {
    if iv.is_point() {
        iv.lower
    } else {
        truncnorm_moments(0.0, 1.0, iv).mean
    }
}

/// Pairwise-complete correlation of latent points, projected to a correlation
/// matrix with eigenvalues at least 1e-4 before renormalization.
pub fn initial_correlation(rows: &[LatentRow], p: usize) -> Result<DMatrix<f64>> {
    let points: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| r.iter().map(|c| c.map(latent_point)).collect())
        .collect();
    let mut r = DMatrix::identity(p, p);
    for a in 0..p {
        for b in 0..a {
            let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
            for row in &points {
                if let (Some(x), Some(y)) = (row[a], row[b]) {
                    n += 1;
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            }
            let mut rho = 0.0;
            if n >= 2 {
                let nf = n as f64;
                let vx = sxx - sx * sx / nf;
                let vy = syy - sy * sy / nf;
                let cxy = sxy - sx * sy / nf;
                if vx > 0.0 && vy > 0.0 {
                    rho = (cxy / (vx * vy).sqrt()).clamp(-1.0, 1.0);
                }
            }
            r[(a, b)] = rho;
            r[(b, a)] = rho;
        }
    }
    project_to_correlation(&r, INIT_EIGEN_FLOOR)
}

/// Rows with at least one observed cell, and those without.
pub(crate) fn split_observed(rows: &[LatentRow]) -> (Vec<usize>, Vec<usize>) {
    (0..rows.len()).partition(|&i| rows[i].iter().any(|c| c.is_some()))
}

/// Fit with the mode selected in `config`.
pub fn fit(table: &DataTable, config: &FitConfig) -> Result<CopulaModel> {
    match config.mode {
        TrainingMode::Standard => fit_standard(table, config),
        TrainingMode::MinibatchOffline => fit_minibatch_offline(table, config),
    }
}

struct Prepared {
    marginals: Vec<Marginal>,
    rows: Vec<LatentRow>,
    excluded: Vec<usize>,
    pinned: Vec<usize>,
}

fn prepare(table: &DataTable, config: &FitConfig) -> Result<Prepared> {
    config.validate()?;
    if table.n_rows() == 0 || table.n_cols() == 0 {
        return Err(Error::ShapeMismatch("empty table".into()));
    }
    let types = resolve_types(table, config)?;
    let marginals = fit_marginals(table, &types)?;
    let all = encode_rows(table, &marginals);
    let (kept, excluded) = split_observed(&all);
    if !excluded.is_empty() {
        log::warn!("{} rows have no observed values and are excluded from fitting", excluded.len());
    }
    let rows: Vec<LatentRow> = kept.into_iter().map(|i| all[i].clone()).collect();
    let pinned = (0..marginals.len()).filter(|&j| marginals[j].is_single_level()).collect();
    Ok(Prepared {
        marginals,
        rows,
        excluded,
        pinned,
    })
}

fn report(config: &FitConfig, rec: &IterationRecord) {
    if config.verbose {
        log::info!(
            "Iteration {}: copula parameter change {:.4}, likelihood {:.4}",
            rec.iteration,
            rec.change,
            rec.loglik
        );
    }
}

/// Full-batch EM until the relative Frobenius change drops below `tol`.
pub fn fit_standard(table: &DataTable, config: &FitConfig) -> Result<CopulaModel> {
    let prep = prepare(table, config)?;
    let p = prep.marginals.len();
    let workers = Workers::new(config.n_workers)?;
    let mut sigma = initial_correlation(&prep.rows, p)?;
    pin_columns(&mut sigma, &prep.pinned);
    let mut trace = FitTrace {
        excluded_rows: prep.excluded.clone(),
        ..Default::default()
    };
    for it in 1..=config.max_iter {
        let e = estep_with(&sigma, &prep.rows, config.sweeps, &workers)?;
        let mut next = mstep(&e.s, e.n)?;
        pin_columns(&mut next, &prep.pinned);
        let change = relative_frobenius(&next, &sigma);
        let rec = IterationRecord {
            iteration: it,
            change,
            loglik: e.loglik,
        };
        report(config, &rec);
        trace.iterations.push(rec);
        sigma = next;
        if change < config.tol {
            trace.converged = true;
            if config.verbose {
                log::info!("Convergence achieved at iteration {it}");
            }
            break;
        }
    }
    if !trace.converged {
        log::warn!("EM stopped at max_iter={} without reaching tol={}", config.max_iter, config.tol);
    }
    trace.passes = trace.iterations.len();
    Ok(CopulaModel {
        corr: CorrelationModel::Full(sigma),
        marginals: prep.marginals,
        col_names: table.col_names().to_vec(),
        trace,
    })
}

/// Offline mini-batch EM: `num_pass` shuffled passes, blending each batch
/// estimate into Σ with step `η_t`.
pub fn fit_minibatch_offline(table: &DataTable, config: &FitConfig) -> Result<CopulaModel> {
    let p = table.n_cols();
    if config.batch_size < p {
        return Err(Error::InvalidConfig(format!(
            "batch size must be ≥ p (batch size {} < {p} columns); use the low-rank model for wide data",
            config.batch_size
        )));
    }
    let prep = prepare(table, config)?;
    let n = prep.rows.len();
    let batches_per_pass = n.div_ceil(config.batch_size);
    config.validate_steps(batches_per_pass * config.num_pass)?;
    let workers = Workers::new(config.n_workers)?;
    let mut sigma = initial_correlation(&prep.rows, p)?;
    pin_columns(&mut sigma, &prep.pinned);
    let mut trace = FitTrace {
        excluded_rows: prep.excluded.clone(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0;
    for _ in 0..config.num_pass {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            t += 1;
            let batch: Vec<LatentRow> = chunk.iter().map(|&i| prep.rows[i].clone()).collect();
            let e = estep_with(&sigma, &batch, config.sweeps, &workers)?;
            let mut est = mstep(&e.s, e.n)?;
            pin_columns(&mut est, &prep.pinned);
            let eta = config.stepsize.at(t);
            let next = &sigma * (1.0 - eta) + est * eta;
            let change = relative_frobenius(&next, &sigma);
            let rec = IterationRecord {
                iteration: t,
                change,
                loglik: e.loglik,
            };
            report(config, &rec);
            trace.iterations.push(rec);
            sigma = next;
        }
        trace.passes += 1;
    }
    trace.converged = true;
    Ok(CopulaModel {
        corr: CorrelationModel::Full(sigma),
        marginals: prep.marginals,
        col_names: table.col_names().to_vec(),
        trace,
    })
}

/// Average approximate log-likelihood of `table` under the model.
///
/// Exact Gaussian log density of the latent points when every observed cell is
/// continuous; otherwise interval coordinates sit at their conditional means and
/// their log interval masses are added.
pub fn approx_loglik(model: &CopulaModel, table: &DataTable, sweeps: usize) -> Result<f64> {
    let rows = model.encode(table)?;
    let (kept, _) = split_observed(&rows);
    if kept.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    match &model.corr {
        CorrelationModel::Full(sigma) => {
            for &i in &kept {
                total += row_posterior(sigma, &rows[i], sweeps).map_err(|e| e.at_row(i))?.loglik;
            }
        }
        CorrelationModel::LowRank(lr) => {
            for &i in &kept {
                total += crate::lowrank::factor_posterior(lr, &rows[i], sweeps)
                    .map_err(|e| e.at_row(i))?
                    .loglik;
            }
        }
    }
    Ok(total / kept.len() as f64)
}

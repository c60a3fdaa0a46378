//! Low-rank Gaussian copula: `Σ = W Wᵀ + σ² I` fitted by EM over the factors.
//!
//! Every per-row computation goes through the k×k matrix `W_Oᵀ W_O + σ² I_k`,
//! so no p×p matrix is formed while fitting.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::DataTable;
use crate::em::{
    encode_rows, fit_marginals, latent_point, resolve_types, split_observed, CopulaModel, CorrelationModel,
    FitConfig, FitTrace, IterationRecord, LatentRow, TrainingMode, Workers,
};
use crate::error::{Error, Result};
use crate::latent::IntervalConditional;
use crate::linalg::{cholesky_with_jitter, log_det_from_cholesky};
use crate::marginal::LatentInterval;
use crate::normal::truncnorm_moments;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SIGMA2_INIT_FLOOR: f64 = 0.01;
const SIGMA2_MIN: f64 = 1e-6;
const CHUNK_ROWS: usize = 512;

/// Loadings `W` (p×k) and noise variance `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankParams {
    pub w: DMatrix<f64>,
    pub sigma2: f64,
}

impl LowRankParams {
    pub fn new(w: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2 < 1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!("sigma2 must be in (0, 1], got {sigma2}")));
        }
        Ok(Self { w, sigma2 })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_cols(&self) -> usize {
        self.w.nrows()
    }

    /// `W Wᵀ + σ² I` with the diagonal set to exactly 1.
    pub fn implied_corr(&self) -> DMatrix<f64> {
        let mut s = &self.w * self.w.transpose();
        for j in 0..s.nrows() {
            s[(j, j)] = 1.0;
        }
        s
    }

    /// Scale rows so that `‖W_j‖² + σ² = 1`, with a common `σ²`.
    fn normalize_rows(&mut self) {
        let p = self.w.nrows();
        let s2 = self.sigma2;
        let mean_ratio: f64 =
            (0..p).map(|j| s2 / (self.w.row(j).norm_squared() + s2)).sum::<f64>() / p as f64;
        let new_s2 = mean_ratio.clamp(SIGMA2_MIN, 1.0 - SIGMA2_MIN);
        for j in 0..p {
            let norm2 = self.w.row(j).norm_squared();
            if norm2 > 0.0 {
                let f = ((1.0 - new_s2) / norm2).sqrt();
                self.w.row_mut(j).scale_mut(f);
            }
        }
        self.sigma2 = new_s2;
    }
}

/// `‖Σ₁ − Σ₀‖_F / ‖Σ₀‖_F` for `Σ = W Wᵀ + σ² I`, through k×k products only.
pub fn relative_change(new: &LowRankParams, old: &LowRankParams) -> f64 {
    let p = new.w.nrows() as f64;
    let g11 = new.w.tr_mul(&new.w);
    let g00 = old.w.tr_mul(&old.w);
    let g10 = new.w.tr_mul(&old.w);
    let ds = new.sigma2 - old.sigma2;
    let low = g11.norm_squared() - 2.0 * g10.norm_squared() + g00.norm_squared();
    let diff2 = low + 2.0 * ds * (g11.trace() - g00.trace()) + ds * ds * p;
    let base2 = g00.norm_squared() + 2.0 * old.sigma2 * g00.trace() + old.sigma2 * old.sigma2 * p;
    (diff2.max(0.0) / base2).sqrt()
}

/// Factor posterior of one row.
#[derive(Debug, Clone)]
pub struct FactorPosterior {
    /// `E[z_j | x_O]` for every coordinate.
    pub cond_mean: Vec<f64>,
    /// Truncated variance for interval coordinates, 0 for points, and
    /// `Var[z_j | z_O]` at the observed means for missing ones.
    pub cond_var: Vec<f64>,
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
    /// `E[t | z_O]`.
    pub t_mean: DVector<f64>,
    /// `(W_Oᵀ W_O + σ² I)⁻¹`; the factor covariance given `z_O` is `σ²` times this.
    pub m_inv: DMatrix<f64>,
    pub intervals: Vec<Option<IntervalConditional>>,
    pub loglik: f64,
}

/// Posterior of the factors for a latent row, with interval coordinates
/// handled by the same coordinate sweeps as the full model.
pub fn factor_posterior(params: &LowRankParams, row: &[Option<LatentInterval>], sweeps: usize) -> Result<FactorPosterior> {
    let p = row.len();
    let k = params.rank();
    let s2 = params.sigma2;
    let w = &params.w;
    let observed: Vec<usize> = (0..p).filter(|&j| row[j].is_some()).collect();
    let missing: Vec<usize> = (0..p).filter(|&j| row[j].is_none()).collect();
    let mut cond_mean = vec![0.0; p];
    let mut cond_var = vec![0.0; p];

    let mut m = DMatrix::<f64>::identity(k, k) * s2;
    for &j in &observed {
        let wj = w.row(j);
        m += wj.transpose() * wj;
    }
    let (chol, _) = cholesky_with_jitter(&m)?;
    let m_inv = chol.inverse();

    let no = observed.len();
    let mut z = vec![0.0; no];
    let mut intervals: Vec<Option<IntervalConditional>> = vec![None; no];
    let mut interval_pos = Vec::new();
    for (pos, &j) in observed.iter().enumerate() {
        let iv = row[j].unwrap();
        if iv.is_point() {
            z[pos] = iv.lower;
        } else {
            let t = truncnorm_moments(0.0, 1.0, iv);
            z[pos] = t.mean;
            cond_var[j] = t.var;
            intervals[pos] = Some(IntervalConditional {
                mu: 0.0,
                var: 1.0,
                interval: iv,
                log_mass: t.log_mass,
            });
            interval_pos.push(pos);
        }
    }
    let mut u = DVector::<f64>::zeros(k);
    for (pos, &j) in observed.iter().enumerate() {
        u += w.row(j).transpose() * z[pos];
    }

    if !interval_pos.is_empty() && no > 1 {
        let h: Vec<DVector<f64>> = interval_pos
            .iter()
            .map(|&pos| &m_inv * w.row(observed[pos]).transpose())
            .collect();
        for _ in 0..sweeps {
            for (hi, &pos) in interval_pos.iter().enumerate() {
                let j = observed[pos];
                let wj = w.row(j).transpose();
                let pjj = ((1.0 - wj.dot(&h[hi])) / s2).max(1e-12);
                let pz = (z[pos] - h[hi].dot(&u)) / s2;
                let var = 1.0 / pjj;
                let mu = z[pos] - pz * var;
                let iv = row[j].unwrap();
                let t = truncnorm_moments(mu, var, iv);
                u += &wj * (t.mean - z[pos]);
                z[pos] = t.mean;
                cond_var[j] = t.var;
                intervals[pos] = Some(IntervalConditional {
                    mu,
                    var,
                    interval: iv,
                    log_mass: t.log_mass,
                });
            }
        }
    }
    for (pos, &j) in observed.iter().enumerate() {
        cond_mean[j] = z[pos];
    }
    let t_mean = &m_inv * &u;

    let loglik = if no == 0 {
        0.0
    } else {
        let log_det = (no as f64 - k as f64) * s2.ln() + log_det_from_cholesky(&chol);
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let quad = (zz - u.dot(&t_mean)) / s2;
        let mut ll = -0.5 * (no as f64 * LN_2PI + log_det + quad);
        for iv in intervals.iter().flatten() {
            ll += iv.log_mass.max(-745.0);
        }
        ll
    };

    for &j in &missing {
        let wj = w.row(j).transpose();
        cond_mean[j] = wj.dot(&t_mean);
        cond_var[j] = s2 + s2 * (&m_inv * &wj).dot(&wj);
    }

    Ok(FactorPosterior {
        cond_mean,
        cond_var,
        observed,
        missing,
        t_mean,
        m_inv,
        intervals,
        loglik,
    })
}

/// Per-column sufficient statistics of the factor M-step.
struct Accum {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    c: Vec<f64>,
    count: Vec<usize>,
    loglik: f64,
}

impl Accum {
    fn new(p: usize, k: usize) -> Self {
        Self {
            a: vec![DMatrix::zeros(k, k); p],
            b: vec![DVector::zeros(k); p],
            c: vec![0.0; p],
            count: vec![0; p],
            loglik: 0.0,
        }
    }

    fn add(&mut self, other: Accum) {
        for j in 0..self.a.len() {
            self.a[j] += &other.a[j];
            self.b[j] += &other.b[j];
            self.c[j] += other.c[j];
            self.count[j] += other.count[j];
        }
        self.loglik += other.loglik;
    }
}

fn accumulate(params: &LowRankParams, post: &FactorPosterior, acc: &mut Accum) {
    let s2 = params.sigma2;
    let mut cov_t = &post.m_inv * s2;
    let mut h = Vec::new();
    for (pos, iv) in post.intervals.iter().enumerate() {
        if iv.is_some() {
            let j = post.observed[pos];
            let v = post.cond_var[j];
            let hj = &post.m_inv * params.w.row(j).transpose();
            cov_t += &hj * hj.transpose() * v;
            h.push((pos, hj));
        }
    }
    let t2 = &post.t_mean * post.t_mean.transpose() + cov_t;
    let mut hi = 0;
    for (pos, &j) in post.observed.iter().enumerate() {
        let zj = post.cond_mean[j];
        let vj = post.cond_var[j];
        acc.a[j] += &t2;
        acc.b[j] += &post.t_mean * zj;
        if hi < h.len() && h[hi].0 == pos {
            acc.b[j] += &h[hi].1 * vj;
            hi += 1;
        }
        acc.c[j] += zj * zj + vj;
        acc.count[j] += 1;
    }
    acc.loglik += post.loglik;
}

fn factor_estep(params: &LowRankParams, rows: &[LatentRow], sweeps: usize, workers: &Workers) -> Result<Accum> {
    let p = params.n_cols();
    let k = params.rank();
    let n = rows.len();
    let parts = workers.map_chunks(n.div_ceil(CHUNK_ROWS), |c| -> Result<Accum> {
        let start = c * CHUNK_ROWS;
        let end = (start + CHUNK_ROWS).min(n);
        let mut acc = Accum::new(p, k);
        for (i, row) in rows[start..end].iter().enumerate() {
            let post = factor_posterior(params, row, sweeps).map_err(|e| e.at_row(start + i))?;
            accumulate(params, &post, &mut acc);
        }
        Ok(acc)
    });
    let mut total = Accum::new(p, k);
    for part in parts {
        total.add(part?);
    }
    Ok(total)
}

fn factor_mstep(old: &LowRankParams, acc: &Accum, pinned: &[bool]) -> LowRankParams {
    let p = old.n_cols();
    let k = old.rank();
    let mut w = old.w.clone();
    let mut resid = 0.0;
    let mut total = 0usize;
    for j in 0..p {
        if acc.count[j] == 0 {
            continue;
        }
        let wj = match Cholesky::new(acc.a[j].clone()) {
            Some(ch) => ch.solve(&acc.b[j]),
            None => match cholesky_with_jitter(&acc.a[j]) {
                Ok((ch, _)) => ch.solve(&acc.b[j]),
                Err(_) => old.w.row(j).transpose(),
            },
        };
        resid += acc.c[j] - 2.0 * wj.dot(&acc.b[j]) + (&acc.a[j] * &wj).dot(&wj);
        total += acc.count[j];
        if pinned[j] {
            w.row_mut(j).fill(0.0);
        } else {
            w.set_row(j, &wj.transpose());
        }
    }
    debug_assert_eq!(w.ncols(), k);
    let sigma2 = if total > 0 { (resid / total as f64).max(SIGMA2_MIN) } else { old.sigma2 };
    let mut next = LowRankParams { w, sigma2 };
    next.normalize_rows();
    next
}

/// Randomized truncated SVD of the standardized latent point matrix.
fn initial_params(rows: &[LatentRow], p: usize, k: usize, seed: u64) -> Result<LowRankParams> {
    let n = rows.len();
    let mut z = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        let vals: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r[j].map(|iv| (i, latent_point(iv))))
            .collect();
        let cnt = vals.len() as f64;
        let mean = vals.iter().map(|v| v.1).sum::<f64>() / cnt;
        let var = vals.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / cnt;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for (i, v) in vals {
            z[(i, j)] = (v - mean) / sd;
        }
    }
    let l = (k + 10).min(n).min(p).max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::<f64>::from_fn(p, l, |_, _| StandardNormal.sample(&mut rng));
    let mut y = &z * omega;
    for _ in 0..2 {
        let q = y.qr().q();
        y = &z * z.tr_mul(&q);
    }
    let q = y.qr().q();
    let b = q.tr_mul(&z);
    let svd = b.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidConfig("SVD failed during low-rank initialization".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let nf = n as f64;
    let mut w = DMatrix::<f64>::zeros(p, k);
    let mut captured = 0.0;
    for (c, &idx) in order.iter().take(k).enumerate() {
        let s = svd.singular_values[idx];
        captured += s * s;
        for j in 0..p {
            w[(j, c)] = v_t[(idx, j)] * s / nf.sqrt();
        }
    }
    let total = z.norm_squared();
    let sigma2 = ((total - captured) / (nf * p as f64)).max(SIGMA2_INIT_FLOOR).min(1.0 - SIGMA2_MIN);
    let mut params = LowRankParams { w, sigma2 };
    params.normalize_rows();
    Ok(params)
}

/// Fit the low-rank copula with `rank` factors.
pub fn fit_lrgc(table: &DataTable, rank: usize, config: &FitConfig) -> Result<CopulaModel> {
    config.validate()?;
    let p = table.n_cols();
    if rank == 0 || rank >= p {
        return Err(Error::InvalidConfig(format!("rank must satisfy 1 <= rank < p = {p}, got {rank}")));
    }
    if config.mode != TrainingMode::Standard {
        return Err(Error::InvalidConfig("mini-batch training is not available for the low-rank model".into()));
    }
    let types = resolve_types(table, config)?;
    let marginals = fit_marginals(table, &types)?;
    let all = encode_rows(table, &marginals);
    let (kept, excluded) = split_observed(&all);
    let rows: Vec<LatentRow> = kept.into_iter().map(|i| all[i].clone()).collect();
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no row has an observed value".into()));
    }
    let pinned: Vec<bool> = marginals.iter().map(|m| m.is_single_level()).collect();
    let workers = Workers::new(config.n_workers)?;

    let mut params = initial_params(&rows, p, rank, config.seed)?;
    for (j, &pin) in pinned.iter().enumerate() {
        if pin {
            params.w.row_mut(j).fill(0.0);
        }
    }
    let mut trace = FitTrace {
        excluded_rows: excluded,
        ..Default::default()
    };
    for it in 1..=config.max_iter {
        let acc = factor_estep(&params, &rows, config.sweeps, &workers)?;
        let next = factor_mstep(&params, &acc, &pinned);
        let change = relative_change(&next, &params);
        let rec = IterationRecord {
            iteration: it,
            change,
            loglik: acc.loglik / rows.len() as f64,
        };
        if config.verbose {
            log::info!(
                "Iteration {}: copula parameter change {:.4}, likelihood {:.4}",
                rec.iteration,
                rec.change,
                rec.loglik
            );
        }
        trace.iterations.push(rec);
        params = next;
        if change < config.tol {
            trace.converged = true;
            if config.verbose {
                log::info!("Convergence achieved at iteration {it}");
            }
            break;
        }
    }
    trace.passes = trace.iterations.len();
    Ok(CopulaModel {
        corr: CorrelationModel::LowRank(params),
        marginals,
        col_names: table.col_names().to_vec(),
        trace,
    })
}

//! Online imputation: each row is imputed on arrival, then the sliding-window
//! marginals and the correlation matrix are updated.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::data::{detect_variable_types, DataTable, VariableType, DEFAULT_MIN_ORD_RATIO};
use crate::em::{encode_row, estep, initial_correlation, mstep, pin_columns, split_observed, CopulaModel, LatentRow};
use crate::error::{Error, Result};
use crate::latent::{row_posterior, DEFAULT_SWEEPS};
use crate::marginal::{decayed_weights, fit_marginal, Marginal};

#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Observed values kept per column.
    pub window_size: usize,
    /// Constant blend weight η of each batch estimate.
    pub const_stepsize: f64,
    /// Ingested rows per correlation update.
    pub batch_size: usize,
    /// Quantile decay d; 1 means unweighted.
    pub decay: f64,
    /// Rows used for initialization.
    pub n_train: usize,
    pub sweeps: usize,
    pub min_ord_ratio: f64,
    pub var_types: Option<Vec<VariableType>>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            window_size: 200,
            const_stepsize: 0.1,
            batch_size: 40,
            decay: 1.0,
            n_train: 100,
            sweeps: DEFAULT_SWEEPS,
            min_ord_ratio: DEFAULT_MIN_ORD_RATIO,
            var_types: None,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "window size must be at least 2, got {}",
                self.window_size
            )));
        }
        if !(self.const_stepsize > 0.0 && self.const_stepsize < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "constant step size must be in (0, 1), got {}",
                self.const_stepsize
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        if self.n_train < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_train must be at least 2, got {}",
                self.n_train
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StreamState {
    config: StreamConfig,
    vartypes: Vec<VariableType>,
    /// Oldest first.
    buffers: Vec<VecDeque<f64>>,
    corr: DMatrix<f64>,
    pending: Vec<LatentRow>,
    n_updates: usize,
    marginals: Vec<Marginal>,
    /// Decay-weighted marginals used to decode imputations when `decay < 1`.
    decoders: Option<Vec<Marginal>>,
    stale: bool,
    pinned: Vec<usize>,
}

/// Build the initial state from the first rows of a stream.
pub fn init_stream(first_rows: &DataTable, config: StreamConfig) -> Result<StreamState> {
    config.validate()?;
    let p = first_rows.n_cols();
    for j in 0..p {
        let count = first_rows.observed(j).len();
        if count < 2 {
            return Err(Error::InsufficientInit { column: j, count });
        }
    }
    let vartypes = match &config.var_types {
        Some(t) if t.len() != p => {
            return Err(Error::ShapeMismatch(format!("{} variable types for {p} columns", t.len())))
        }
        Some(t) => t.clone(),
        None => detect_variable_types(first_rows, config.min_ord_ratio)?,
    };
    let m = config.window_size;
    let buffers: Vec<VecDeque<f64>> = (0..p)
        .map(|j| {
            let obs = first_rows.observed(j);
            obs[obs.len().saturating_sub(m)..].iter().copied().collect()
        })
        .collect();
    let mut state = StreamState {
        config,
        vartypes,
        buffers,
        corr: DMatrix::identity(p, p),
        pending: Vec::new(),
        n_updates: 0,
        marginals: Vec::new(),
        decoders: None,
        stale: true,
        pinned: Vec::new(),
    };
    state.refresh()?;
    let rows: Vec<LatentRow> = first_rows
        .rows()
        .map(|r| encode_row(r, &state.marginals))
        .collect();
    let (kept, _) = split_observed(&rows);
    let rows: Vec<LatentRow> = kept.into_iter().map(|i| rows[i].clone()).collect();
    state.corr = initial_correlation(&rows, p)?;
    pin_columns(&mut state.corr, &state.pinned);
    Ok(state)
}

impl StreamState {
    fn refresh(&mut self) -> Result<()> {
        if !self.stale {
            return Ok(());
        }
        let mut marginals = Vec::with_capacity(self.buffers.len());
        for (j, buf) in self.buffers.iter().enumerate() {
            let vals: Vec<f64> = buf.iter().copied().collect();
            marginals.push(fit_marginal(&vals, None, self.vartypes[j])?);
        }
        self.decoders = if self.config.decay < 1.0 {
            let mut dec = Vec::with_capacity(self.buffers.len());
            for (j, buf) in self.buffers.iter().enumerate() {
                let vals: Vec<f64> = buf.iter().copied().collect();
                let mut w = decayed_weights(vals.len(), self.config.decay)?;
                w.reverse();
                dec.push(fit_marginal(&vals, Some(&w), self.vartypes[j])?);
            }
            Some(dec)
        } else {
            None
        };
        self.pinned = (0..marginals.len()).filter(|&j| marginals[j].is_single_level()).collect();
        self.marginals = marginals;
        self.stale = false;
        Ok(())
    }

    pub fn n_cols(&self) -> usize {
        self.buffers.len()
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn n_updates(&self) -> usize {
        self.n_updates
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn buffer(&self, col: usize) -> &VecDeque<f64> {
        &self.buffers[col]
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    /// Current unweighted marginals and Σ as an offline model.
    pub fn snapshot(&mut self) -> Result<CopulaModel> {
        self.refresh()?;
        CopulaModel::from_parts(self.corr.clone(), self.marginals.clone())
    }

    /// Impute a row under the current state without updating anything.
    pub fn impute_row(&mut self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        if row.len() != self.n_cols() {
            return Err(Error::ShapeMismatch(format!(
                "row has {} cells, stream has {} columns",
                row.len(),
                self.n_cols()
            )));
        }
        self.refresh()?;
        let enc = encode_row(row, &self.marginals);
        let post = row_posterior(&self.corr, &enc, self.config.sweeps)?;
        let decoders = self.decoders.as_ref().unwrap_or(&self.marginals);
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| v.unwrap_or_else(|| decoders[j].from_latent(post.cond_mean[j])))
            .collect())
    }

    /// Impute `row`, then learn from `revealed` (or from `row` itself).
    pub fn step(&mut self, row: &[Option<f64>], revealed: Option<&[Option<f64>]>) -> Result<Vec<f64>> {
        if let Some(rev) = revealed {
            if rev.len() != row.len() {
                return Err(Error::ShapeMismatch(format!(
                    "revealed row has {} cells, input has {}",
                    rev.len(),
                    row.len()
                )));
            }
            for (j, (a, b)) in row.iter().zip(rev).enumerate() {
                if let Some(x) = a {
                    if *b != Some(*x) {
                        return Err(Error::RevealMismatch {
                            column: j,
                            input: *x,
                            revealed: b.unwrap_or(f64::NAN),
                        });
                    }
                }
            }
        }
        let imputed = self.impute_row(row)?;
        let source = revealed.unwrap_or(row);
        let enc = encode_row(source, &self.marginals);
        if enc.iter().any(|c| c.is_some()) {
            self.pending.push(enc);
        }
        let m = self.config.window_size;
        for (j, v) in source.iter().enumerate() {
            if let Some(x) = v {
                let buf = &mut self.buffers[j];
                if buf.len() == m {
                    buf.pop_front();
                }
                buf.push_back(*x);
                self.stale = true;
            }
        }
        if self.pending.len() >= self.config.batch_size {
            self.update_corr()?;
        }
        Ok(imputed)
    }

    fn update_corr(&mut self) -> Result<()> {
        let e = estep(&self.corr, &self.pending, self.config.sweeps, 1)?;
        let mut est = mstep(&e.s, e.n)?;
        pin_columns(&mut est, &self.pinned);
        let eta = self.config.const_stepsize;
        self.corr = &self.corr * (1.0 - eta) + est * eta;
        self.pending.clear();
        self.n_updates += 1;
        Ok(())
    }
}

//! Empirical marginal distributions and the maps between observed values and
//! the latent Gaussian scale.
//!
//! Each fitted [`Marginal`] precomputes its latent knots (Φ⁻¹ of the scaled
//! empirical CDF at every distinct observed value), so observed values map to
//! the latent scale and back without round-off: `from_latent` of a knot
//! returns the observed value it came from, bit for bit.

use crate::data::VariableType;
use crate::error::{Error, Result};
use crate::normal::{std_normal_cdf, std_normal_quantile_ext};

/// Closed interval on the extended real line. `lower == upper` encodes a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentInterval {
    pub lower: f64,
    pub upper: f64,
}

impl LatentInterval {
    pub fn new(lower: f64, upper: f64) -> Self {
        debug_assert!(lower <= upper, "interval [{lower}, {upper}]");
        Self { lower, upper }
    }

    pub fn point(z: f64) -> Self {
        Self { lower: z, upper: z }
    }

    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    #[inline]
    pub fn is_point(&self) -> bool {
        self.lower == self.upper
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lower && z <= self.upper
    }
}

/// Piecewise-linear empirical CDF over distinct sorted values.
///
/// `probs` are cumulative normalized weights scaled by n/(n+1). With uniform
/// weights the smallest is 1/(n+1); zero weights are floored just above 0 so
/// the latent knots stay finite. `latent` holds Φ⁻¹(offset + scale * probs) for the part of the
/// unit interval this CDF occupies.
#[derive(Debug, Clone, PartialEq)]
struct Interpolated {
    values: Vec<f64>,
    probs: Vec<f64>,
    latent: Vec<f64>,
    offset: f64,
    scale: f64,
}

impl Interpolated {
    /// `sorted` must be sorted ascending and non-empty; weights pair with it.
    fn fit(sorted: &[(f64, f64)], offset: f64, scale: f64) -> Self {
        let n = sorted.len() as f64;
        let total: f64 = sorted.iter().map(|&(_, w)| w).sum();
        let shrink = n / (n + 1.0);
        let floor = f64::MIN_POSITIVE;
        let mut values = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        let mut cum = 0.0;
        for (i, &(v, w)) in sorted.iter().enumerate() {
            cum += w;
            let last_of_run = i + 1 == sorted.len() || sorted[i + 1].0 != v;
            if last_of_run {
                let p = (cum / total * shrink).max(floor);
                let p = probs.last().map_or(p, |&prev| p.max(prev));
                values.push(v);
                probs.push(p);
            }
        }
        let latent = probs
            .iter()
            .map(|&p| std_normal_quantile_ext(offset + scale * p))
            .collect();
        Self {
            values,
            probs,
            latent,
            offset,
            scale,
        }
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    fn to_latent(&self, x: f64) -> f64 {
        let k = self.len();
        if x <= self.values[0] {
            return self.latent[0];
        }
        if x >= self.values[k - 1] {
            return self.latent[k - 1];
        }
        // first index with values[i] >= x
        let i = self.values.partition_point(|&v| v < x);
        if self.values[i] == x {
            return self.latent[i];
        }
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        let t = (x - v0) / (v1 - v0);
        let p = self.probs[i - 1] + t * (self.probs[i] - self.probs[i - 1]);
        std_normal_quantile_ext(self.offset + self.scale * p)
    }

    fn from_latent(&self, z: f64) -> f64 {
        let k = self.len();
        if z <= self.latent[0] {
            return self.values[0];
        }
        if z >= self.latent[k - 1] {
            return self.values[k - 1];
        }
        let i = self.latent.partition_point(|&l| l < z);
        if self.latent[i] == z {
            return self.values[i];
        }
        let p = (std_normal_cdf(z) - self.offset) / self.scale;
        let (p0, p1) = (self.probs[i - 1], self.probs[i]);
        let t = ((p - p0) / (p1 - p0)).clamp(0.0, 1.0);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + t * (v1 - v0)
    }
}

/// Discrete levels with positive masses and latent cut points.
#[derive(Debug, Clone, PartialEq)]
struct Levels {
    values: Vec<f64>,
    masses: Vec<f64>,
    /// `cuts[i]` separates level i from level i+1; length K-1.
    cuts: Vec<f64>,
}

impl Levels {
    fn fit(sorted: &[(f64, f64)]) -> Self {
        let total: f64 = sorted.iter().map(|&(_, w)| w).sum();
        let mut values: Vec<f64> = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        for &(v, w) in sorted {
            if values.last() == Some(&v) {
                *masses.last_mut().unwrap() += w;
            } else {
                values.push(v);
                masses.push(w);
            }
        }
        for m in &mut masses {
            *m /= total;
        }
        let mut cum = 0.0;
        let cuts = masses[..masses.len() - 1]
            .iter()
            .map(|m| {
                cum += m;
                std_normal_quantile_ext(cum)
            })
            .collect();
        Self {
            values,
            masses,
            cuts,
        }
    }

    fn nearest(&self, x: f64) -> usize {
        let i = self.values.partition_point(|&v| v < x);
        if i == 0 {
            0
        } else if i == self.values.len() {
            i - 1
        } else if (x - self.values[i - 1]) <= (self.values[i] - x) {
            i - 1
        } else {
            i
        }
    }

    fn to_latent(&self, x: f64) -> LatentInterval {
        let i = self.nearest(x);
        let lower = if i == 0 { f64::NEG_INFINITY } else { self.cuts[i - 1] };
        let upper = if i == self.cuts.len() { f64::INFINITY } else { self.cuts[i] };
        LatentInterval::new(lower, upper)
    }

    fn from_latent(&self, z: f64) -> f64 {
        // level i covers [cuts[i-1], cuts[i])
        self.values[self.cuts.partition_point(|&c| c <= z)]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Continuous(Interpolated),
    Ordinal(Levels),
    Truncated {
        alpha: Option<f64>,
        beta: Option<f64>,
        p_alpha: f64,
        p_beta: f64,
        cut_alpha: f64,
        cut_beta: f64,
        interior: Interpolated,
    },
}

/// Estimated distribution of one column.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    vartype: VariableType,
    n_obs: usize,
    shape: Shape,
}

/// Fit a marginal from observed values with optional non-negative weights.
///
/// Weights need not be normalized; `None` means uniform. Zero weights are
/// allowed (decayed windows underflow), but the total must be positive.
pub fn fit_marginal(values: &[f64], weights: Option<&[f64]>, vartype: VariableType) -> Result<Marginal> {
    if values.is_empty() {
        return Err(Error::NoObservedValues);
    }
    if let Some(w) = weights {
        if w.len() != values.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} values",
                w.len(),
                values.len()
            )));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
        }
        if !(w.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidWeights("weights sum to zero".into()));
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidWeights("values must be finite".into()));
    }
    // equal weights must reproduce the unweighted fit bit for bit
    let weights = weights.filter(|w| w.iter().any(|&x| x != w[0]));
    let mut sorted: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, weights.map_or(1.0, |w| w[i])))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for s in &mut sorted {
        if s.0 == 0.0 {
            s.0 = 0.0; // fold -0.0
        }
    }
    let shape = match vartype {
        VariableType::Continuous => Shape::Continuous(Interpolated::fit(&sorted, 0.0, 1.0)),
        VariableType::Ordinal => Shape::Ordinal(Levels::fit(&sorted)),
        _ => fit_truncated(&sorted, vartype.lower_bound(), vartype.upper_bound()),
    };
    Ok(Marginal {
        vartype,
        n_obs: values.len(),
        shape,
    })
}

fn fit_truncated(sorted: &[(f64, f64)], alpha: Option<f64>, beta: Option<f64>) -> Shape {
    let total: f64 = sorted.iter().map(|&(_, w)| w).sum();
    let mut w_alpha = 0.0;
    let mut w_beta = 0.0;
    let mut interior = Vec::with_capacity(sorted.len());
    for &(v, w) in sorted {
        if alpha.is_some_and(|a| v <= a) {
            w_alpha += w;
        } else if beta.is_some_and(|b| v >= b) {
            w_beta += w;
        } else {
            interior.push((v, w));
        }
    }
    let interior_weight: f64 = interior.iter().map(|&(_, w)| w).sum();
    if interior.is_empty() || !(interior_weight > 0.0) {
        // nothing between the boundaries: the column is discrete
        let clamped: Vec<(f64, f64)> = sorted
            .iter()
            .map(|&(v, w)| {
                let v = alpha.map_or(v, |a| v.max(a));
                (beta.map_or(v, |b| v.min(b)), w)
            })
            .collect();
        return Shape::Ordinal(Levels::fit(&clamped));
    }
    let p_alpha = w_alpha / total;
    let p_beta = w_beta / total;
    let scale = 1.0 - p_alpha - p_beta;
    let cut_alpha = if p_alpha > 0.0 {
        std_normal_quantile_ext(p_alpha)
    } else {
        f64::NEG_INFINITY
    };
    let cut_beta = if p_beta > 0.0 {
        std_normal_quantile_ext(1.0 - p_beta)
    } else {
        f64::INFINITY
    };
    Shape::Truncated {
        alpha: alpha.filter(|_| p_alpha > 0.0),
        beta: beta.filter(|_| p_beta > 0.0),
        p_alpha,
        p_beta,
        cut_alpha,
        cut_beta,
        interior: Interpolated::fit(&interior, p_alpha, scale),
    }
}

impl Marginal {
    pub fn vartype(&self) -> VariableType {
        self.vartype
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Whether the column behaves as a single discrete level.
    pub fn is_single_level(&self) -> bool {
        match &self.shape {
            Shape::Ordinal(l) => l.values.len() == 1,
            Shape::Continuous(c) => c.len() == 1,
            Shape::Truncated { .. } => false,
        }
    }

    /// Levels and masses when the marginal is discrete.
    pub fn levels(&self) -> Option<(&[f64], &[f64])> {
        match &self.shape {
            Shape::Ordinal(l) => Some((&l.values, &l.masses)),
            _ => None,
        }
    }

    /// Boundary masses `(p_alpha, p_beta)` of a truncated marginal.
    pub fn boundary_masses(&self) -> Option<(f64, f64)> {
        match &self.shape {
            Shape::Truncated { p_alpha, p_beta, .. } => Some((*p_alpha, *p_beta)),
            _ => None,
        }
    }

    /// Scaled empirical CDF at `x` (continuous and truncated-interior values
    /// interpolate between observed points).
    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf(self.to_latent_interval(x).upper)
    }

    /// Latent set consistent with an observed value.
    pub fn to_latent_interval(&self, x: f64) -> LatentInterval {
        match &self.shape {
            Shape::Continuous(c) => LatentInterval::point(c.to_latent(x)),
            Shape::Ordinal(l) => l.to_latent(x),
            Shape::Truncated {
                alpha,
                beta,
                cut_alpha,
                cut_beta,
                interior,
                ..
            } => {
                if alpha.is_some_and(|a| x <= a) {
                    LatentInterval::new(f64::NEG_INFINITY, *cut_alpha)
                } else if beta.is_some_and(|b| x >= b) {
                    LatentInterval::new(*cut_beta, f64::INFINITY)
                } else {
                    LatentInterval::point(interior.to_latent(x))
                }
            }
        }
    }

    /// Observed-scale value for a latent coordinate.
    pub fn from_latent(&self, z: f64) -> f64 {
        match &self.shape {
            Shape::Continuous(c) => c.from_latent(z),
            Shape::Ordinal(l) => l.from_latent(z),
            Shape::Truncated {
                alpha,
                beta,
                cut_alpha,
                cut_beta,
                interior,
                ..
            } => {
                if let Some(a) = alpha.filter(|_| z <= *cut_alpha) {
                    a
                } else if let Some(b) = beta.filter(|_| z >= *cut_beta) {
                    b
                } else {
                    interior.from_latent(z)
                }
            }
        }
    }
}

/// Decay weights `d^t` for lags `t = 1..=m`, most recent first.
pub fn decayed_weights(m: usize, decay: f64) -> Result<Vec<f64>> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::InvalidConfig(format!("decay must be in (0, 1], got {decay}")));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("window length must be at least 1".into()));
    }
    Ok((1..=m as i32).map(|t| decay.powi(t)).collect())
}

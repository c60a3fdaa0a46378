//! Test-only oracles and synthetic data setups.
#![allow(dead_code)]

use copula_impute::evaluation::{mask_mcar, random_correlation, sample_gc, LatentSpec, MarginalSpec};
use copula_impute::DataTable;
use nalgebra::DMatrix;

// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature on a finite interval. The absolute
/// tolerance is shared out in proportion to subinterval length.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, density: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if depth >= 30 || err <= density * (b - a) {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, density, depth + 1) + rec(f, m, b, density, depth + 1)
    }
    rec(f, a, b, tol / (b - a), 0)
}

/// Mean and variance of N(mu, var) truncated to [lo, hi] by quadrature of the
/// density, rescaled by its peak inside the interval so far tails do not underflow.
pub fn truncnorm_oracle(mu: f64, var: f64, lo: f64, hi: f64) -> (f64, f64) {
    let sd = var.sqrt();
    let a = (lo - mu) / sd;
    let b = (hi - mu) / sd;
    let peak = if a > 0.0 { a } else if b < 0.0 { b } else { 0.0 };
    // finite window holding all but ~e^-700 of the scaled mass
    let reach = |edge: f64| {
        let mut s = 1.0;
        while edge.abs() * s + 0.5 * s * s < 700.0 {
            s *= 2.0;
        }
        s
    };
    let lo_s = if a.is_finite() { a } else { peak - reach(peak) };
    let hi_s = if b.is_finite() { b } else { peak + reach(peak) };
    let g = move |t: f64| (-0.5 * (t - peak) * (t + peak)).exp();
    // split at the peak and around it so the quadrature sees the bulk
    let mut cuts = vec![lo_s, hi_s];
    for c in [peak - 1.0, peak, peak + 1.0, peak - 10.0, peak + 10.0] {
        if c > lo_s && c < hi_s {
            cuts.push(c);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let quad = |f: &dyn Fn(f64) -> f64| -> f64 {
        cuts.windows(2).map(|w| integrate(f, w[0], w[1], 1e-15)).sum()
    };
    let z = quad(&g);
    let m = quad(&|t| t * g(t)) / z;
    let v = quad(&|t| (t - m) * (t - m) * g(t)) / z;
    (mu + sd * m, var * v)
}

/// Column layout used by the mixed-data criteria: 3 continuous, 3 five-level
/// ordinal, 2 lower-truncated.
pub fn mixed_specs() -> Vec<MarginalSpec> {
    let ord = MarginalSpec::ordinal_from_masses(&[0.1, 0.2, 0.3, 0.25, 0.15]).unwrap();
    let ord2 = MarginalSpec::ordinal_from_masses(&[0.3, 0.25, 0.2, 0.15, 0.1]).unwrap();
    let ord3 = MarginalSpec::ordinal_from_masses(&[0.2, 0.2, 0.2, 0.2, 0.2]).unwrap();
    vec![
        MarginalSpec::Gaussian,
        MarginalSpec::Exponential { rate: 1.0 },
        MarginalSpec::Quantile(std::sync::Arc::new(|u: f64| (u / (1.0 - u)).ln() * 2.0 + 5.0)),
        ord,
        ord2,
        ord3,
        MarginalSpec::Censored { lower: Some(-0.4), upper: None },
        MarginalSpec::Censored { lower: Some(0.1), upper: None },
    ]
}

pub struct Synthetic {
    pub sigma: DMatrix<f64>,
    pub truth: DataTable,
    pub masked: DataTable,
}

pub fn well_conditioned_corr(p: usize, seed: u64) -> DMatrix<f64> {
    random_correlation(p, p, 0.5 * p as f64, seed)
}

pub fn synthetic(specs: &[MarginalSpec], n: usize, fraction: f64, seed: u64) -> Synthetic {
    let sigma = well_conditioned_corr(specs.len(), seed.wrapping_mul(7919).wrapping_add(1));
    let truth = sample_gc(n, specs, &LatentSpec::Full(sigma.clone()), seed).unwrap();
    let masked = mask_mcar(&truth, fraction, seed ^ 0x5eed).unwrap();
    Synthetic { sigma, truth, masked }
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

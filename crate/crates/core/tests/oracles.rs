//! Worked examples checked against independent oracles: quadrature,
//! Monte-Carlo sampling, direct formulas and cross-model agreement.

mod common;

use copula_impute::em::{estep, mstep};
use copula_impute::evaluation::{mask_mcar, sample_gc, smae, mean_defined, LatentSpec, MarginalSpec};
use copula_impute::imputer::{confidence_intervals, impute_multiple, impute_single, transform_out_of_sample};
use copula_impute::latent::{conditional_mvn, row_posterior};
use copula_impute::linalg::min_eigenvalue;
use copula_impute::normal::{std_normal_cdf, std_normal_quantile, truncnorm_moments};
use copula_impute::streaming::{init_stream, StreamConfig};
use copula_impute::{
    fit_lrgc, fit_marginal, fit_minibatch_offline, fit_standard, CiKind, CopulaModel, DataTable, FitConfig,
    LatentInterval, LowRankParams, TrainingMode, VariableType,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::*;

fn corr2(rho: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
}

#[test]
fn quantile_reference_value() {
    // 0.975 quantile by bisection on the quadrature CDF
    let cdf = |z: f64| 0.5 + integrate(&|t| (-0.5 * t * t).exp(), 0.0, z, 1e-16) / (2.0 * std::f64::consts::PI).sqrt();
    let (mut lo, mut hi) = (1.9, 2.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < 0.975 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((std_normal_quantile(0.975).unwrap() - lo).abs() < 1e-12);
    assert!((std_normal_cdf(lo) - 0.975).abs() < 1e-13);
}

#[test]
fn half_line_moments_against_quadrature() {
    let (m, v) = truncnorm_oracle(0.0, 1.0, 0.0, f64::INFINITY);
    let t = truncnorm_moments(0.0, 1.0, LatentInterval::new(0.0, f64::INFINITY));
    assert!((t.mean - m).abs() < 1e-12 && (t.var - v).abs() < 1e-12);
    assert!((m - 0.797_884_6).abs() < 1e-7 && (v - 0.363_380_2).abs() < 1e-7);

    let post = row_posterior(&DMatrix::identity(1, 1), &[Some(LatentInterval::new(0.0, f64::INFINITY))], 2).unwrap();
    assert!((post.cond_mean[0] - m).abs() < 1e-12);
    assert!((post.cond_var[0] - v).abs() < 1e-12);

    let e = estep(&DMatrix::identity(1, 1), &[vec![Some(LatentInterval::new(0.0, f64::INFINITY))]], 2, 1).unwrap();
    assert!((e.s[(0, 0)] - (m * m + v)).abs() < 1e-12);
    assert!((e.m[0] - m).abs() < 1e-12);
}

#[test]
fn bivariate_conditional_against_monte_carlo() {
    let rho = 0.65;
    let c = conditional_mvn(&corr2(rho), &[0], &[1.0], &[1]).unwrap();
    // regress z2 on z1 over 10^6 joint draws
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 1_000_000;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        let z1 = a;
        let z2 = rho * a + (1.0 - rho * rho).sqrt() * b;
        sxx += z1 * z1;
        sxy += z1 * z2;
        pairs.push((z1, z2));
    }
    let slope = sxy / sxx;
    let resid: f64 = pairs.iter().map(|(x, y)| (y - slope * x).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se_mean = (resid / sxx).sqrt();
    let se_var = resid * (2.0 / n as f64).sqrt();
    assert!((c.mean[0] - slope).abs() < 3.0 * se_mean, "{} vs {slope}", c.mean[0]);
    assert!((c.cov[(0, 0)] - resid).abs() < 3.0 * se_var, "{} vs {resid}", c.cov[(0, 0)]);
    assert!((c.mean[0] - 0.65).abs() < 1e-14 && (c.cov[(0, 0)] - 0.5775).abs() < 1e-14);
}

#[test]
fn mstep_matches_direct_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let a = DMatrix::<f64>::from_fn(5, 8, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose();
        let n = 13;
        let r = mstep(&(cov.clone() * n as f64), n).unwrap();
        for i in 0..5 {
            assert_eq!(r[(i, i)], 1.0);
            for j in 0..5 {
                let direct = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
                assert!((r[(i, j)] - direct).abs() < 1e-14);
                assert!((r[(i, j)] - r[(j, i)]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn independence_recovered() {
    let specs = vec![MarginalSpec::Gaussian, MarginalSpec::Exponential { rate: 1.0 }, MarginalSpec::Gaussian];
    let truth = sample_gc(5000, &specs, &LatentSpec::Full(DMatrix::identity(3, 3)), 1).unwrap();
    let model = fit_standard(&truth, &FitConfig::default()).unwrap();
    let s = model.corr();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                assert!(s[(i, j)].abs() < 0.1);
            }
        }
    }
}

#[test]
fn bivariate_recovery_and_minibatch_agreement() {
    for seed in 0..3 {
        let specs = vec![MarginalSpec::Exponential { rate: 2.0 }, MarginalSpec::Gaussian];
        let truth = sample_gc(5000, &specs, &LatentSpec::Full(corr2(0.65)), seed).unwrap();
        let masked = mask_mcar(&truth, 0.1, seed + 100).unwrap();
        let std = fit_standard(&masked, &FitConfig::default()).unwrap();
        assert!((std.corr()[(0, 1)] - 0.65).abs() <= 0.05);
        let mb = fit_minibatch_offline(
            &masked,
            &FitConfig {
                mode: TrainingMode::MinibatchOffline,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((mb.corr()[(0, 1)] - std.corr()[(0, 1)]).abs() <= 0.05);
    }
}

#[test]
fn minibatch_rejects_small_batches() {
    let truth = sample_gc(50, &vec![MarginalSpec::Gaussian; 5], &LatentSpec::Full(DMatrix::identity(5, 5)), 0).unwrap();
    let cfg = FitConfig {
        mode: TrainingMode::MinibatchOffline,
        batch_size: 3,
        ..Default::default()
    };
    let err = fit_minibatch_offline(&truth, &cfg).unwrap_err().to_string();
    assert!(err.contains("batch size must be ≥ p"), "{err}");
}

#[test]
fn sampler_independence_and_dependence() {
    let n = 4000;
    let t = sample_gc(n, &[MarginalSpec::Gaussian, MarginalSpec::Gaussian], &LatentSpec::Full(DMatrix::identity(2, 2)), 9).unwrap();
    let (x, y) = (t.observed(0), t.observed(1));
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let r = cov / (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() * y.iter().map(|b| (b - my).powi(2)).sum::<f64>()).sqrt();
    assert!(r.abs() < 3.0 / (n as f64).sqrt());

    // ordinal second margin keeps positive rank dependence (Kendall's tau on a subsample)
    let ord = MarginalSpec::ordinal_from_masses(&[0.3, 0.4, 0.3]).unwrap();
    let t = sample_gc(600, &[MarginalSpec::Gaussian, ord], &LatentSpec::Full(corr2(0.65)), 10).unwrap();
    let (x, y) = (t.observed(0), t.observed(1));
    let (mut conc, mut disc) = (0i64, 0i64);
    for i in 0..x.len() {
        for j in 0..i {
            let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
            if s > 0.0 {
                conc += 1;
            } else if s < 0.0 {
                disc += 1;
            }
        }
    }
    let pairs = (x.len() * (x.len() - 1) / 2) as f64;
    let tau = (conc - disc) as f64 / pairs;
    assert!(tau > 0.2, "tau {tau}");
}

#[test]
fn lrgc_synthetic_and_near_full_rank() {
    let (p, k) = (40, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut w = DMatrix::<f64>::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0));
    for j in 0..p {
        let f = (0.9 / w.row(j).norm_squared()).sqrt();
        w.row_mut(j).scale_mut(f);
    }
    let params = LowRankParams::new(w, 0.1).unwrap();
    let specs = vec![MarginalSpec::Gaussian; p];
    let truth = sample_gc(2000, &specs, &LatentSpec::LowRank(params.clone()), 22).unwrap();
    let masked = mask_mcar(&truth, 0.2, 23).unwrap();
    let model = fit_lrgc(&masked, k, &FitConfig::default()).unwrap();
    assert!(rel_frobenius(&model.corr(), &params.implied_corr()) <= 0.1);
    let s2 = model.low_rank().unwrap().sigma2;
    assert!(s2 > 0.0 && s2 < 1.0);

    // rank p-1 on small data lands near the full model
    let specs = mixed_specs()[..4].to_vec();
    let data = synthetic(&specs, 300, 0.1, 24);
    let lr = fit_lrgc(&data.masked, 3, &FitConfig { tol: 1e-4, max_iter: 200, ..Default::default() }).unwrap();
    let full = fit_standard(&data.masked, &FitConfig { tol: 1e-4, max_iter: 200, ..Default::default() }).unwrap();
    let d = rel_frobenius(&lr.corr(), &full.corr());
    assert!(d <= 0.1, "rank p-1 vs full: {d}");
}

#[test]
fn implied_corr_eigenvalues_bounded_by_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (p, k) = (12, 3);
        let s2: f64 = rng.random_range(0.05..0.9);
        let mut w = DMatrix::<f64>::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0));
        for j in 0..p {
            let f = ((1.0 - s2) / w.row(j).norm_squared()).sqrt();
            w.row_mut(j).scale_mut(f);
        }
        let lr = LowRankParams::new(w, s2).unwrap();
        let s = lr.implied_corr();
        assert!(min_eigenvalue(&s) >= s2 - 1e-12);
        for j in 0..p {
            assert!((s[(j, j)] - 1.0).abs() < 1e-12);
        }
    }
}

fn small_model(rho: f64) -> CopulaModel {
    let vals: Vec<f64> = (0..41).map(|i| (i as f64 * 0.37).exp()).collect();
    let m = fit_marginal(&vals, None, VariableType::Continuous).unwrap();
    CopulaModel::from_parts(corr2(rho), vec![m.clone(), m]).unwrap()
}

#[test]
fn independence_gives_median_imputation() {
    let model = small_model(0.0);
    let med = model.marginals()[1].from_latent(0.0);
    let t = DataTable::from_rows(vec![vec![Some(3.0), None], vec![Some(100.0), None]]).unwrap();
    let out = impute_single(&model, &t).unwrap();
    assert_eq!(out.imputed.get(0, 1), Some(med));
    assert_eq!(out.imputed.get(1, 1), Some(med));
}

#[test]
fn analytic_ci_under_independence_is_marginal_band() {
    let model = small_model(0.0);
    let t = DataTable::from_rows(vec![vec![Some(3.0), None]]).unwrap();
    let (lo, hi) = confidence_intervals(&model, &t, 0.05, CiKind::Analytic, 0, 0).unwrap();
    let m = &model.marginals()[1];
    let q = std_normal_quantile(0.975).unwrap();
    assert_eq!(lo.get(0, 1), Some(m.from_latent(-q)));
    assert_eq!(hi.get(0, 1), Some(m.from_latent(q)));
}

#[test]
fn multiple_imputation_mean_converges() {
    let model = small_model(0.6);
    let t = DataTable::from_rows(vec![vec![Some(20.0), None]]).unwrap();
    // latent-scale check: draws are f(z) so compare on z through the marginal
    let single = impute_single(&model, &t).unwrap();
    let mu = single.latent_means[(0, 1)];
    let num = 4000;
    let draws = impute_multiple(&model, &t, num, 3).unwrap();
    let m = &model.marginals()[1];
    let zs: Vec<f64> = draws.iter().map(|d| m.to_latent_interval(d.get(0, 1).unwrap()).lower).collect();
    let mean = zs.iter().sum::<f64>() / num as f64;
    let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / num as f64).sqrt();
    assert!((mean - mu).abs() < 4.0 * sd / (num as f64).sqrt(), "{mean} vs {mu}");
}

#[test]
fn multiple_imputation_continuous_gaussian_marginal() {
    // Gaussian marginal on a dense grid, so observed-space means track latent means
    let grid: Vec<f64> = (1..2000).map(|i| std_normal_quantile(i as f64 / 2000.0).unwrap()).collect();
    let m = fit_marginal(&grid, None, VariableType::Continuous).unwrap();
    let model = CopulaModel::from_parts(corr2(0.5), vec![m.clone(), m]).unwrap();
    let t = DataTable::from_rows(vec![vec![Some(0.8), None]]).unwrap();
    let single = impute_single(&model, &t).unwrap().imputed.get(0, 1).unwrap();
    let num = 5000;
    let draws = impute_multiple(&model, &t, num, 4).unwrap();
    let vals: Vec<f64> = draws.iter().map(|d| d.get(0, 1).unwrap()).collect();
    let mean = vals.iter().sum::<f64>() / num as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / num as f64).sqrt();
    assert!((mean - single).abs() < 4.0 * sd / (num as f64).sqrt(), "{mean} vs {single}");
}

#[test]
fn out_of_sample_rows() {
    let data = synthetic(&mixed_specs(), 800, 0.1, 30);
    let model = fit_standard(&data.masked, &FitConfig::default()).unwrap();
    let train = impute_single(&model, &data.masked).unwrap().imputed;
    let rows = data.masked.select_rows(&[3, 17]);
    let fresh = transform_out_of_sample(&model, &rows).unwrap().imputed;
    assert_eq!(fresh, train.select_rows(&[3, 17]));

    let empty = DataTable::from_rows(vec![vec![None; 8]]).unwrap();
    let med = transform_out_of_sample(&model, &empty).unwrap().imputed;
    for j in 0..8 {
        assert_eq!(med.get(0, j), Some(model.marginals()[j].from_latent(0.0)));
    }

    let m2 = small_model(0.65);
    let one = DataTable::from_rows(vec![vec![Some(7.5), None]]).unwrap();
    let out = transform_out_of_sample(&m2, &one).unwrap();
    let z1 = m2.marginals()[0].to_latent_interval(7.5).lower;
    assert!((out.latent_means[(0, 1)] - 0.65 * z1).abs() < 1e-14);
}

#[test]
fn mixed_imputation_beats_median() {
    let data = synthetic(&mixed_specs(), 2000, 0.1, 31);
    let model = fit_standard(&data.masked, &FitConfig::default()).unwrap();
    let imputed = impute_single(&model, &data.masked).unwrap().imputed;
    let s = mean_defined(&smae(&imputed, &data.truth, &data.masked).unwrap()).unwrap();
    assert!(s < 1.0, "{s}");
}

#[test]
fn one_iteration_reproduces_latent_correlation() {
    let specs = vec![MarginalSpec::Gaussian, MarginalSpec::Exponential { rate: 1.0 }, MarginalSpec::Gaussian];
    let truth = sample_gc(500, &specs, &LatentSpec::Full(well_conditioned_corr(3, 2)), 2).unwrap();
    let model = fit_standard(&truth, &FitConfig { max_iter: 1, ..Default::default() }).unwrap();
    let z = DMatrix::from_fn(500, 3, |i, j| model.marginals()[j].to_latent_interval(truth.get(i, j).unwrap()).lower);
    let s = z.transpose() * &z / 500.0;
    for i in 0..3 {
        for j in 0..3 {
            let want = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
            assert!((model.corr()[(i, j)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn row_and_column_permutations() {
    let data = synthetic(&mixed_specs(), 600, 0.1, 40);
    let base = fit_standard(&data.masked, &FitConfig::default()).unwrap().corr();

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut order: Vec<usize> = (0..600).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let rows = fit_standard(&data.masked.select_rows(&order), &FitConfig::default()).unwrap().corr();
    assert!((&rows - &base).abs().max() < 1e-12);

    // interval columns (3..8) keep their relative order so the sweeps visit them identically
    let perm = [3, 0, 4, 1, 5, 6, 2, 7];
    let cols = fit_standard(&data.masked.select_cols(&perm), &FitConfig::default()).unwrap().corr();
    for a in 0..8 {
        for b in 0..8 {
            assert!((cols[(a, b)] - base[(perm[a], perm[b])]).abs() < 1e-10);
        }
    }

    // any order at all once the sweeps have nothing to iterate over
    let cont = synthetic(&mixed_specs()[..3], 600, 0.1, 42);
    let base = fit_standard(&cont.masked, &FitConfig::default()).unwrap().corr();
    let perm = [2, 0, 1];
    let cols = fit_standard(&cont.masked.select_cols(&perm), &FitConfig::default()).unwrap().corr();
    for a in 0..3 {
        for b in 0..3 {
            assert!((cols[(a, b)] - base[(perm[a], perm[b])]).abs() < 1e-10);
        }
    }
}

#[test]
fn sweep_order_effect_is_small() {
    let data = synthetic(&mixed_specs(), 600, 0.1, 40);
    let base = fit_standard(&data.masked, &FitConfig::default()).unwrap().corr();
    let perm = [3, 0, 7, 1, 6, 2, 5, 4];
    let cols = fit_standard(&data.masked.select_cols(&perm), &FitConfig::default()).unwrap().corr();
    let mut worst: f64 = 0.0;
    for a in 0..8 {
        for b in 0..8 {
            worst = worst.max((cols[(a, b)] - base[(perm[a], perm[b])]).abs());
        }
    }
    eprintln!("largest entry change under reordered sweeps: {worst:.2e}");
    assert!(worst < 0.02);
}

#[test]
fn workers_agree_with_single_thread() {
    let data = synthetic(&mixed_specs(), 1500, 0.1, 50);
    let one = fit_standard(&data.masked, &FitConfig::default()).unwrap().corr();
    let four = fit_standard(&data.masked, &FitConfig { n_workers: 4, ..Default::default() }).unwrap().corr();
    assert!((&one - &four).abs().max() < 1e-8);
}

#[test]
fn stream_initialization_near_identity() {
    let p = 4;
    let truth = sample_gc(100, &vec![MarginalSpec::Gaussian; p], &LatentSpec::Full(DMatrix::identity(p, p)), 60).unwrap();
    let st = init_stream(&truth, StreamConfig::default()).unwrap();
    for i in 0..p {
        assert_eq!(st.buffer(i).len(), 100);
        for j in 0..p {
            if i != j {
                assert!(st.corr()[(i, j)].abs() < 0.15, "{}", st.corr()[(i, j)]);
            }
        }
    }
}

#[test]
fn stationary_stream_tracks_offline_fit() {
    let p = 5;
    let sigma = well_conditioned_corr(p, 70);
    let specs = vec![MarginalSpec::Gaussian, MarginalSpec::Exponential { rate: 1.0 }, MarginalSpec::Gaussian, MarginalSpec::Gaussian, MarginalSpec::Exponential { rate: 0.5 }];
    let truth = sample_gc(2100, &specs, &LatentSpec::Full(sigma), 71).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut masked = truth.clone();
    for i in 100..2100 {
        masked.set(i, rng.random_range(0..p), None);
    }
    let mut st = init_stream(&masked.select_rows(&(0..100).collect::<Vec<_>>()), StreamConfig::default()).unwrap();
    let mut outs = Vec::new();
    for i in 100..2100 {
        outs.push(st.step(masked.row(i), Some(truth.row(i))).unwrap());
    }
    let offline = fit_standard(&masked, &FitConfig::default()).unwrap();
    let off = impute_single(&offline, &masked).unwrap().imputed;
    let (mut se_s, mut se_o, mut c) = (0.0, 0.0, 0);
    for i in 1600..2100 {
        for j in 0..p {
            if masked.is_missing(i, j) {
                let t = truth.get(i, j).unwrap();
                se_s += (outs[i - 100][j] - t).powi(2);
                se_o += (off.get(i, j).unwrap() - t).powi(2);
                c += 1;
            }
        }
    }
    let (ms, mo) = (se_s / c as f64, se_o / c as f64);
    assert!(ms <= 1.1 * mo, "stream {ms} vs offline {mo}");
}

#[test]
fn stream_replay_is_identical_and_bounded() {
    let p = 3;
    let truth = sample_gc(600, &vec![MarginalSpec::Gaussian; p], &LatentSpec::Full(well_conditioned_corr(p, 80)), 81).unwrap();
    let masked = mask_mcar(&truth, 0.2, 82).unwrap();
    let run = || {
        let cfg = StreamConfig { window_size: 50, batch_size: 10, decay: 0.9, ..Default::default() };
        let mut st = init_stream(&masked.select_rows(&(0..100).collect::<Vec<_>>()), cfg).unwrap();
        let mut out = Vec::new();
        for i in 100..600 {
            out.push(st.step(masked.row(i), None).unwrap());
            for j in 0..p {
                assert!(st.buffer(j).len() <= 50);
            }
            assert!(st.pending_len() < 10);
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn smae_mae_consistency() {
    let data = synthetic(&mixed_specs()[..3], 500, 0.2, 90);
    let model = fit_standard(&data.masked, &FitConfig::default()).unwrap();
    let imputed = impute_single(&model, &data.masked).unwrap().imputed;
    // pooled MAE times cell count equals the sum of per-column numerators
    let total = copula_impute::evaluation::mae(&imputed, &data.truth, &data.masked).unwrap().unwrap();
    let mut num = 0.0;
    let mut cells = 0;
    for j in 0..3 {
        for i in 0..500 {
            if data.masked.is_missing(i, j) {
                num += (imputed.get(i, j).unwrap() - data.truth.get(i, j).unwrap()).abs();
                cells += 1;
            }
        }
    }
    assert!((total - num / cells as f64).abs() < 1e-12);
}

#[test]
fn latent_conditioning_shrinks_variance() {
    let sigma = well_conditioned_corr(6, 91);
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    for _ in 0..50 {
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        // observing more coordinates never increases a missing coordinate's variance
        let few = conditional_mvn(&sigma, &[0], &[z[0]], &[5]).unwrap();
        let more = conditional_mvn(&sigma, &[0, 1, 2], &[z[0], z[1], z[2]], &[5]).unwrap();
        assert!(more.cov[(0, 0)] <= few.cov[(0, 0)] + 1e-14);
        assert!(few.cov[(0, 0)] <= 1.0 + 1e-14);
    }
}

#[test]
fn lrgc_imputation_tracks_full_model() {
    let (p, k) = (15, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut w = DMatrix::<f64>::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0));
    for j in 0..p {
        let f = (0.8 / w.row(j).norm_squared()).sqrt();
        w.row_mut(j).scale_mut(f);
    }
    let params = LowRankParams::new(w, 0.2).unwrap();
    let truth = sample_gc(1500, &vec![MarginalSpec::Exponential { rate: 1.0 }; p], &LatentSpec::LowRank(params), 101).unwrap();
    let masked = mask_mcar(&truth, 0.2, 102).unwrap();
    let full = fit_standard(&masked, &FitConfig::default()).unwrap();
    let lr = fit_lrgc(&masked, 3, &FitConfig::default()).unwrap();
    let a = mean_defined(&smae(&impute_single(&full, &masked).unwrap().imputed, &truth, &masked).unwrap()).unwrap();
    let b = mean_defined(&smae(&impute_single(&lr, &masked).unwrap().imputed, &truth, &masked).unwrap()).unwrap();
    assert!((a - b).abs() < 0.03, "full {a} vs low rank {b}");
    assert!(b < 1.0);
}

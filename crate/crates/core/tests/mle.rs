mod common;

use std::collections::HashSet;

use gmcf::mle::{em_fit, em_run, loglik, multistart_init, FitConfig};
use gmcf::model::{sample, Atom, CovariatePrior, Dataset, ExpertPair, Family, MixingMeasure};
use gmcf::transport::{atom_match_report, KappaVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn two_lines() -> MixingMeasure {
    MixingMeasure::new(vec![
        Atom::new(vec![0.0, 1.0], vec![0.25], 0.4),
        Atom::new(vec![2.0, -1.0], vec![0.5], 0.6),
    ])
    .unwrap()
}

#[test]
fn loglik_matches_naive_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fam in Family::ALL {
        let pair = ExpertPair::with_default_domain(fam);
        let prior = CovariatePrior::uniform(0.1, 1.1).unwrap();
        let g = common::random_measure(&mut rng, 3, pair.q1(), pair.q2(), 0.2, 2.0);
        let d = sample(&pair, &prior, &g, 200, 11).unwrap();
        let mut naive = 0.0;
        for (&x, &y) in d.xs.iter().zip(&d.ys) {
            let mut dens = 0.0;
            for a in g.atoms() {
                let mu = pair.mean(x, &a.theta1);
                let v = pair.variance(x, &a.theta2);
                dens += a.weight * (-(y - mu) * (y - mu) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
            }
            naive += dens.ln();
        }
        let got = loglik(&pair, &g, &d).unwrap();
        assert!(common::rel_close(got, naive, 1e-12, 1.0), "{fam}: {got} vs {naive}");
    }
}

#[test]
fn exact_fit_matches_wls_oracle() {
    let pair = ExpertPair::with_default_domain(Family::LinConst);
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let g0 = MixingMeasure::single(vec![0.5, -1.0], vec![0.3]);
    let d = sample(&pair, &prior, &g0, 10_000, 21).unwrap();
    // ordinary least squares and the residual second moment, by hand
    let n = d.len() as f64;
    let (sx, sy) = (d.xs.iter().sum::<f64>(), d.ys.iter().sum::<f64>());
    let sxx: f64 = d.xs.iter().map(|x| x * x).sum();
    let sxy: f64 = d.xs.iter().zip(&d.ys).map(|(x, y)| x * y).sum();
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let a = (sy - b * sx) / n;
    let s2: f64 = d.xs.iter().zip(&d.ys).map(|(x, y)| (y - a - b * x).powi(2)).sum::<f64>() / n;
    let se_a = (s2 * sxx / (n * sxx - sx * sx)).sqrt();
    let se_b = (s2 * n / (n * sxx - sx * sx)).sqrt();
    let se_s2 = s2 * (2.0 / n).sqrt();

    let mut cfg = FitConfig::new(1);
    cfg.n_starts = 4;
    let fit = em_fit(&pair, &prior, &d, &cfg).unwrap();
    let at = &fit.g_hat.atoms()[0];
    assert!((at.theta1[0] - a).abs() < 5.0 * se_a);
    assert!((at.theta1[1] - b).abs() < 5.0 * se_b);
    assert!((at.theta2[0] - s2).abs() < 5.0 * se_s2);
    // one component: EM is exact after a single sweep
    assert!((at.theta1[0] - a).abs() < 1e-8 && (at.theta2[0] - s2).abs() < 1e-8);
}

#[test]
fn overspecification_never_lowers_likelihood() {
    let pair = ExpertPair::with_default_domain(Family::SlopeConst);
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let g0 = MixingMeasure::single(vec![1.0], vec![1.0]);
    for seed in 0..5 {
        let d = sample(&pair, &prior, &g0, 1000, seed).unwrap();
        let mut c1 = FitConfig::new(1);
        c1.n_starts = 2;
        let f1 = em_fit(&pair, &prior, &d, &c1).unwrap();
        // the k = 2 start duplicating the k = 1 fit is an EM fixed point, so k = 2 must do at least as well
        let a = &f1.g_hat.atoms()[0];
        let dup = MixingMeasure::new(vec![
            Atom::new(a.theta1.clone(), a.theta2.clone(), 0.5),
            Atom::new(a.theta1.clone(), a.theta2.clone(), 0.5),
        ])
        .unwrap();
        let mut c2 = FitConfig::new(2);
        c2.n_starts = 5;
        let f2 = em_fit(&pair, &prior, &d, &c2).unwrap();
        let from_dup = em_run(&pair, &d, &dup, &c2).unwrap();
        assert!(from_dup.loglik >= f1.loglik - 1e-9);
        assert!(f2.loglik.max(from_dup.loglik) >= f1.loglik - 1e-9);
        assert!(f2.loglik >= f1.loglik - 1e-3 * f1.loglik.abs(), "{} vs {}", f2.loglik, f1.loglik);
    }
}

#[test]
fn recovers_separated_two_component_truth() {
    let pair = ExpertPair::with_default_domain(Family::LinConst);
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let g0 = two_lines();
    let kappa = KappaVector::uniform(2, 3).unwrap();
    let mut good = 0;
    for rep in 0..5 {
        let d = sample(&pair, &prior, &g0, 10_000, 500 + rep).unwrap();
        let mut cfg = FitConfig::new(2);
        cfg.seed = rep;
        let fit = em_fit(&pair, &prior, &d, &cfg).unwrap();
        let report = atom_match_report(&kappa, &fit.g_hat, &g0).unwrap();
        if report.max_coord_errors().iter().all(|&e| e < 0.1) {
            good += 1;
        }
    }
    // W_kappa itself also pays for weight noise, so recovery is judged per coordinate
    assert!(good >= 4, "{good}/5 fits with every coordinate within 0.1");
}

#[test]
fn weight_floor_respected() {
    let pair = ExpertPair::with_default_domain(Family::LinConst);
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let g0 = MixingMeasure::single(vec![0.0, 1.0], vec![0.5]);
    let d = sample(&pair, &prior, &g0, 2000, 8).unwrap();
    let mut cfg = FitConfig::new(3);
    cfg.weight_floor = 0.2;
    cfg.n_starts = 4;
    let fit = em_fit(&pair, &prior, &d, &cfg).unwrap();
    let w = fit.g_hat.weights();
    assert!(w.iter().all(|&p| p >= 0.2));
    assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn distinct_seeds_give_distinct_inits() {
    let pair = ExpertPair::with_default_domain(Family::LinConst);
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let d = sample(&pair, &prior, &two_lines(), 500, 2).unwrap();
    let mut seen = HashSet::new();
    for seed in 0..100 {
        let g = multistart_init(&pair, &d, 3, seed).unwrap();
        let bits: Vec<u64> = g.atoms().iter().flat_map(|a| a.theta1.iter().chain(&a.theta2).map(|v| v.to_bits())).collect();
        assert!(seen.insert(bits), "seed {seed} repeated an earlier init");
    }
}

#[test]
fn fit_is_reproducible() {
    let pair = ExpertPair::with_default_domain(Family::QuadConst);
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let g0 = MixingMeasure::single(vec![1.0, 0.0], vec![0.5]);
    let d = sample(&pair, &prior, &g0, 500, 1).unwrap();
    let mut cfg = FitConfig::new(2);
    cfg.n_starts = 4;
    cfg.max_iters = 200;
    assert_eq!(em_fit(&pair, &prior, &d, &cfg).unwrap(), em_fit(&pair, &prior, &d, &cfg).unwrap());
}

#[test]
fn rejects_data_outside_support() {
    let pair = ExpertPair::with_default_domain(Family::LinConst);
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let d = Dataset::new(vec![0.5, 1.5], vec![0.0, 0.0], 0).unwrap();
    assert!(em_fit(&pair, &prior, &d, &FitConfig::new(1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn traces_are_monotone(seed in 0u64..10_000, fam in 0usize..6, k in 1usize..4, floor in prop::bool::ANY) {
        let fam = Family::ALL[fam];
        let pair = ExpertPair::with_default_domain(fam);
        let prior = CovariatePrior::uniform(0.1, 1.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g0 = common::random_measure(&mut rng, 2, pair.q1(), pair.q2(), 0.2, 1.5);
        let d = sample(&pair, &prior, &g0, 300, seed).unwrap();
        let mut cfg = FitConfig::new(k);
        cfg.seed = seed;
        cfg.max_iters = 150;
        cfg.weight_floor = if floor { 0.1 } else { 0.0 };
        let init = multistart_init(&pair, &d, k, seed).unwrap();
        let run = em_run(&pair, &d, &init, &cfg).unwrap();
        for w in run.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        prop_assert!(pair.validate_measure(&run.g).is_ok());
        prop_assert!(run.g.weights().iter().all(|&p| p >= cfg.weight_floor));
    }
}

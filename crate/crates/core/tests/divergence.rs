mod common;

use common::random_measure;
use gmcf::divergence::{
    hellinger, hellinger_sq_monte_carlo, hellinger_sq_raw, total_variation, QuadratureSpec,
};
use gmcf::model::{CovariatePrior, ExpertPair, Family, MixingMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lin_pair() -> ExpertPair {
    ExpertPair::new(Family::LinConst, vec![[-3.0, 3.0], [-3.0, 3.0], [0.2, 3.0]]).unwrap()
}

fn random_lin(rng: &mut ChaCha8Rng, k: usize) -> MixingMeasure {
    let g = random_measure(rng, k, 2, 1, -1.0, 1.0);
    // shift the variance coordinate into [0.3, 2.3]
    let atoms = g
        .atoms()
        .iter()
        .map(|a| gmcf::model::Atom::new(a.theta1.clone(), vec![a.theta2[0] + 1.3], a.weight))
        .collect();
    MixingMeasure::new(atoms).unwrap()
}

#[test]
fn quadrature_agrees_with_importance_sampling() {
    let pair = lin_pair();
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10 {
        let (ka, kb) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (a, b) = (random_lin(&mut rng, ka), random_lin(&mut rng, kb));
        let q = hellinger_sq_raw(&pair, &prior, &a, &b, &QuadratureSpec::default()).unwrap();
        let (mc, se) = hellinger_sq_monte_carlo(&pair, &prior, &a, &b, 1_000_000, 1000 + i).unwrap();
        assert!((q - mc).abs() <= 3.0 * se, "instance {i}: quadrature {q}, MC {mc} +- {se}");
    }
}

#[test]
fn distances_are_symmetric_and_ordered() {
    let pair = lin_pair();
    let prior = CovariatePrior::truncated_gaussian(0.5, 0.3, 0.0, 1.0).unwrap();
    let spec = QuadratureSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (ka, kb) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (a, b) = (random_lin(&mut rng, ka), random_lin(&mut rng, kb));
        let hab = hellinger(&pair, &prior, &a, &b, &spec).unwrap().value;
        let hba = hellinger(&pair, &prior, &b, &a, &spec).unwrap().value;
        let vab = total_variation(&pair, &prior, &a, &b, &spec).unwrap().value;
        let vba = total_variation(&pair, &prior, &b, &a, &spec).unwrap().value;
        assert!((hab - hba).abs() < 1e-12);
        assert!((vab - vba).abs() < 1e-12);
        // h^2 <= V <= sqrt(2) h and V <= 1
        assert!(hab * hab <= vab + 1e-12);
        assert!(vab <= 2f64.sqrt() * hab + 1e-12);
        assert!(vab <= 1.0 + 1e-12);
    }
}

#[test]
fn total_variation_can_exceed_hellinger() {
    // small location shift: V ~ d / sqrt(2 pi) while h ~ d / sqrt(8)
    let pair = lin_pair();
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let spec = QuadratureSpec::default();
    let a = MixingMeasure::single(vec![0.0, 0.0], vec![1.0]);
    let b = MixingMeasure::single(vec![0.01, 0.0], vec![1.0]);
    let h = hellinger(&pair, &prior, &a, &b, &spec).unwrap().value;
    let v = total_variation(&pair, &prior, &a, &b, &spec).unwrap().value;
    assert!((h - 0.01 / 8f64.sqrt()).abs() < 1e-6);
    assert!((v - 0.01 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-6);
    assert!(v > h);
}

#[test]
fn matches_high_resolution_oracle() {
    let pair = lin_pair();
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let two = MixingMeasure::new(vec![
        gmcf::model::Atom::new(vec![0.0, 1.0], vec![1.0], 0.4),
        gmcf::model::Atom::new(vec![0.5, -1.0], vec![0.4], 0.6),
    ])
    .unwrap();
    let one = MixingMeasure::single(vec![0.3, 0.0], vec![1.2]);
    let spec = QuadratureSpec::default();
    let base = hellinger(&pair, &prior, &two, &one, &spec).unwrap();
    let oracle = hellinger(&pair, &prior, &two, &one, &spec.scaled(4)).unwrap();
    assert!((base.value - oracle.value).abs() < 1e-6);
    assert!(base.error_estimate < 1e-6);
}

#[test]
fn identifiability_separates_distinct_measures() {
    // distinct two-atom measures give joints with visible total variation
    let pair = lin_pair();
    let prior = CovariatePrior::uniform(0.0, 1.0).unwrap();
    let spec = QuadratureSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut done = 0;
    while done < 20 {
        let (a, b) = (random_lin(&mut rng, 2), random_lin(&mut rng, 2));
        let sep = |g: &MixingMeasure| {
            let e = g.etas();
            e[0].iter().zip(&e[1]).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
        };
        if sep(&a) < 0.1 || sep(&b) < 0.1 {
            continue;
        }
        let v = total_variation(&pair, &prior, &a, &b, &spec).unwrap().value;
        assert!(v > 1e-4, "TV {v}");
        done += 1;
    }
}

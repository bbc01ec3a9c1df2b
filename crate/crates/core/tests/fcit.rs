use dncit::fcit::{fcit_test, fit_tree_ensemble, FcitParams, PairedTest};
use dncit::seed::rng_from_seed;
use dncit::FeatureSample;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[test]
fn step_function_is_learned() {
    let mut rng = rng_from_seed(1);
    let x = DMatrix::from_fn(2000, 3, |_, _| normal(&mut rng));
    let y: Vec<f64> = (0..2000).map(|i| if x[(i, 0)] > 0.0 { 1.0 } else { 0.0 }).collect();
    let train: Vec<usize> = (0..1000).collect();
    let test: Vec<usize> = (1000..2000).collect();
    let p = FcitParams::default();
    let f = fit_tree_ensemble(&x.select_rows(&train), &y[..1000], &p, 4).unwrap();
    let pred = f.predict(&x.select_rows(&test));
    let rmse = (pred.iter().zip(&y[1000..]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1000.0).sqrt();
    assert!(rmse < 0.15, "{rmse}");
    let again = fit_tree_ensemble(&x.select_rows(&train), &y[..1000], &p, 4).unwrap();
    assert_eq!(again.predict(&x.select_rows(&test)), pred);
}

#[test]
fn strong_signal_rejects() {
    let mut rng = rng_from_seed(2);
    let x = DMatrix::from_fn(1000, 2, |_, _| normal(&mut rng));
    let y = DVector::from_fn(1000, |i, _| x[(i, 0)] + 0.1 * normal(&mut rng));
    let s = FeatureSample::unconditional(x, y).unwrap();
    let out = fcit_test(&s, &FcitParams::default(), 0.05).unwrap();
    assert!(out.p_value < 0.01, "{}", out.p_value);
}

fn noise_features(n: usize, seed: u64) -> FeatureSample {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, 1, |_, _| normal(&mut rng));
    let z = DMatrix::from_fn(n, 1, |_, _| normal(&mut rng));
    let y = DVector::from_fn(n, |i, _| z[(i, 0)] + normal(&mut rng));
    FeatureSample::from_parts(x, y, z).unwrap()
}

#[test]
fn pure_noise_features_are_conservative() {
    let reps = 200;
    let p: Vec<f64> = (0..reps)
        .map(|seed| {
            let s = noise_features(1000, 5000 + seed);
            let params = FcitParams {
                seed,
                tree_count: 50,
                ..FcitParams::default()
            };
            fcit_test(&s, &params, 0.05).unwrap().p_value
        })
        .collect();
    for alpha in [0.01, 0.05, 0.1, 0.25, 0.5] {
        let rate = p.iter().filter(|&&v| v <= alpha).count() as f64 / reps as f64;
        let slack = 2.33 * (alpha * (1.0 - alpha) / reps as f64).sqrt();
        assert!(rate <= alpha + slack, "alpha {alpha}: {rate}");
    }
}

#[test]
fn features_equal_to_confounders_add_nothing() {
    let mut mean_p = 0.0;
    for seed in 0..10 {
        let mut rng = rng_from_seed(70 + seed);
        let z = DMatrix::from_fn(400, 1, |_, _| normal(&mut rng));
        let y = DVector::from_fn(400, |i, _| z[(i, 0)].sin() + 0.5 * normal(&mut rng));
        let s = FeatureSample::from_parts(z.clone(), y, z).unwrap();
        mean_p += fcit_test(&s, &FcitParams { seed, ..FcitParams::default() }, 0.05).unwrap().p_value / 10.0;
    }
    assert!(mean_p >= 0.35, "{mean_p}");
}

#[test]
fn duplicating_confounders_in_features_keeps_pvalues() {
    let (mut plain, mut dup) = (0.0, 0.0);
    for seed in 0..50 {
        let s = noise_features(300, 800 + seed);
        let params = FcitParams {
            seed,
            tree_count: 50,
            ..FcitParams::default()
        };
        plain += fcit_test(&s, &params, 0.05).unwrap().p_value / 50.0;
        let wide = DMatrix::from_fn(300, 2, |i, j| if j == 0 { s.x()[(i, 0)] } else { s.z()[(i, 0)] });
        dup += fcit_test(&s.with_x(wide).unwrap(), &params, 0.05).unwrap().p_value / 50.0;
    }
    assert!(plain - dup < 0.1, "{plain} vs {dup}");
}

#[test]
fn sign_test_variant_and_small_n() {
    let s = noise_features(200, 9);
    let out = fcit_test(&s, &FcitParams { paired_test: PairedTest::Sign, ..FcitParams::default() }, 0.05).unwrap();
    assert!((0.0..=1.0).contains(&out.p_value));
    let tiny = noise_features(40, 9);
    assert!(fcit_test(&tiny, &FcitParams::default(), 0.05).is_err());
}

#[test]
fn same_seed_same_result() {
    let s = noise_features(150, 3);
    let p = FcitParams { seed: 12, ..FcitParams::default() };
    let a = fcit_test(&s, &p, 0.05).unwrap();
    let b = fcit_test(&s, &p, 0.05).unwrap();
    assert_eq!(a.p_value, b.p_value);
    assert_eq!(a.statistic, b.statistic);
}

//! Small statistical helpers shared by the tests and the simulation harness.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, FisherSnedecor, StudentsT};

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the `n − 1` denominator.
pub fn variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Fraction of p-values at or below `alpha`.
pub fn rejection_rate(p_values: &[f64], alpha: f64) -> f64 {
    if p_values.is_empty() {
        return f64::NAN;
    }
    p_values.iter().filter(|&&p| p <= alpha).count() as f64 / p_values.len() as f64
}

/// Binomial Monte Carlo standard error `sqrt(RR (1 − RR) / n_sim)`.
pub fn monte_carlo_se(rejection_rate: f64, n_sim: usize) -> f64 {
    (rejection_rate * (1.0 - rejection_rate) / n_sim as f64).sqrt()
}

/// One-sample Kolmogorov–Smirnov distance of `values` from Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let m = values.len();
    if m == 0 {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mf = m as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let u = p.clamp(0.0, 1.0);
            ((i + 1) as f64 / mf - u).max(u - i as f64 / mf)
        })
        .fold(0.0, f64::max)
}

/// Sorted p-values paired with uniform plotting positions `(i − 0.5) / m`.
pub fn qq_pairs(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, p)| ((i as f64 + 0.5) / m, p))
        .collect()
}

/// `P(χ²_df > x)`; `df` may be fractional.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

/// `P(F_{d1,d2} > x)`.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(d1, d2).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

/// `P(T_df > t)`.
pub fn t_sf(t: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .map(|d| d.sf(t))
        .unwrap_or(f64::NAN)
}

/// `P(Bin(trials, 1/2) ≥ successes)`.
pub fn binomial_upper_half(successes: u64, trials: u64) -> f64 {
    if successes == 0 {
        return 1.0;
    }
    Binomial::new(0.5, trials)
        .map(|b| b.sf(successes - 1))
        .unwrap_or(f64::NAN)
}

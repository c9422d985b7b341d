//! Goodness-of-fit statistics for the sampler checks.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Clone, Debug, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn upper_tail(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let d = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    (1.0 - d.cdf(statistic)).clamp(0.0, 1.0)
}

/// Pearson goodness of fit of counts against probabilities. Categories
/// with expected count below 5 are pooled. An observation in a category of
/// probability zero gives p = 0.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 1e-15 {
            if o > 0 {
                return ChiSquare {
                    statistic: f64::INFINITY,
                    dof: 0,
                    p_value: 0.0,
                };
            }
            continue;
        }
        let e = n * p;
        if e < 5.0 {
            pooled.0 += o as f64;
            pooled.1 += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pooled.1 > 0.0 {
        bins.push(pooled);
    }
    if bins.len() < 2 {
        return ChiSquare {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        };
    }
    let statistic: f64 = bins.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    ChiSquare {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof),
    }
}

/// Pearson chi-square test of homogeneity for two count vectors over the
/// same categories. Empty categories are dropped; a single remaining
/// category gives p = 1.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquare {
    assert_eq!(a.len(), b.len());
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let n = na + nb;
    let mut statistic = 0.0;
    let mut k = 0;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        k += 1;
        let ea = na * col / n;
        let eb = nb * col / n;
        statistic += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if k < 2 || na == 0.0 || nb == 0.0 {
        return ChiSquare {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        };
    }
    ChiSquare {
        statistic,
        dof: k - 1,
        p_value: upper_tail(statistic, k - 1),
    }
}

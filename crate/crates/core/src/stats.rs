//! Goodness-of-fit and independence tests for sampled flash data.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Smallest sample any test accepts.
pub const MIN_SAMPLE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub dof: usize,
}

impl TestResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

fn require(n: usize) -> Result<()> {
    if n < MIN_SAMPLE {
        Err(Error::InsufficientSample { n, min: MIN_SAMPLE })
    } else {
        Ok(())
    }
}

/// Asymptotic Kolmogorov tail Q(x) = 2Σ(−1)^{k−1}e^{−2k²x²}.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    require(samples.len())?;
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("KS sample"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d),
        n: xs.len(),
        dof: 0,
    })
}

pub fn ks_exponential(samples: &[f64], rate: f64) -> Result<TestResult> {
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter(
            "exponential rate must be positive".into(),
        ));
    }
    ks_test(samples, |x| {
        if x <= 0.0 {
            0.0
        } else {
            1.0 - (-rate * x).exp()
        }
    })
}

fn chi_square_p(statistic: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Pearson test of observed counts against cell probabilities (cells with
/// zero probability must be empty and are dropped).
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<TestResult> {
    if observed.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            found: observed.len(),
        });
    }
    let n: u64 = observed.iter().sum();
    require(n as usize)?;
    let total_p: f64 = probs.iter().sum();
    if !(total_p > 0.0) || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidParameter(
            "cell probabilities must be nonnegative with positive sum".into(),
        ));
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = n as f64 * p / total_p;
        if e == 0.0 {
            if o > 0 {
                return Ok(TestResult {
                    statistic: f64::INFINITY,
                    p_value: 0.0,
                    n: n as usize,
                    dof: cells,
                });
            }
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1);
    Ok(TestResult {
        statistic: stat,
        p_value: chi_square_p(stat, dof)?,
        n: n as usize,
        dof,
    })
}

/// Pearson independence test on a contingency table; empty rows and columns are dropped.
pub fn chi_square_independence(table: &[Vec<u64>]) -> Result<TestResult> {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    let n_cols = table.first().map_or(0, |r| r.len());
    if table.iter().any(|r| r.len() != n_cols) {
        return Err(Error::InvalidParameter(
            "contingency table rows differ in length".into(),
        ));
    }
    let col_sums: Vec<u64> = (0..n_cols)
        .map(|c| rows.iter().map(|r| r[c]).sum())
        .collect();
    let n: u64 = col_sums.iter().sum();
    require(n as usize)?;
    let cols: Vec<usize> = (0..n_cols).filter(|&c| col_sums[c] > 0).collect();
    let mut stat = 0.0;
    for r in &rows {
        let rs: u64 = r.iter().sum();
        for &c in &cols {
            let e = rs as f64 * col_sums[c] as f64 / n as f64;
            stat += (r[c] as f64 - e).powi(2) / e;
        }
    }
    let dof = rows.len().saturating_sub(1) * cols.len().saturating_sub(1);
    Ok(TestResult {
        statistic: stat,
        p_value: chi_square_p(stat, dof)?,
        n: n as usize,
        dof,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// variance / mean; 1 for Poisson counts.
    pub dispersion: f64,
}

pub fn count_summary(counts: &[u64]) -> Result<CountSummary> {
    require(counts.len())?;
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let variance = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    Ok(CountSummary {
        n: counts.len(),
        mean,
        variance,
        dispersion: if mean > 0.0 {
            variance / mean
        } else {
            f64::NAN
        },
    })
}

/// Interior edges splitting the sample into `bins` roughly equal parts.
pub fn quantile_edges(samples: &[f64], bins: usize) -> Vec<f64> {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    (1..bins)
        .map(|k| xs[(k * xs.len() / bins).min(xs.len() - 1)])
        .collect()
}

/// Index of the bin (delimited by ascending interior edges) containing x.
pub fn bin_index(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e <= x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn kolmogorov_tail_known_values() {
        // Q(1.3581) ≈ 0.05 and Q(1.6276) ≈ 0.01
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_tail(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn exponential_sample_passes_most_seeds() {
        let mut passes = 0;
        for seed in 0..40 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let d = Exp::new(1.0).unwrap();
            let xs: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
            if ks_exponential(&xs, 1.0).unwrap().passes(0.01) {
                passes += 1;
            }
        }
        assert!(passes >= 37, "{passes}/40");
    }

    #[test]
    fn constant_sample_fails() {
        let r = ks_exponential(&vec![1.0; 500], 1.0).unwrap();
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn small_samples_refused() {
        assert_eq!(
            ks_exponential(&[], 1.0),
            Err(Error::InsufficientSample {
                n: 0,
                min: MIN_SAMPLE
            })
        );
        assert!(chi_square_gof(&[10, 20], &[0.5, 0.5]).is_err());
        assert!(count_summary(&[1; 99]).is_err());
    }

    #[test]
    fn chi_square_statistics() {
        let r = chi_square_gof(&[250, 250, 500], &[0.25, 0.25, 0.5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        // 2x2 table with a strong association
        let t = chi_square_independence(&[vec![90, 10], vec![10, 90]]).unwrap();
        assert!((t.statistic - 128.0).abs() < 1e-9);
        assert!(t.p_value < 1e-20);
        assert_eq!(t.dof, 1);
        let p = chi_square_gof(&[0, 100], &[0.0, 1.0]).unwrap();
        assert_eq!(p.dof, 0);
    }

    #[test]
    fn chi_square_p_matches_closed_form_for_two_dof() {
        // For two degrees of freedom the tail is e^{−x/2}.
        for x in [0.5, 2.0, 9.21] {
            assert!((chi_square_p(x, 2).unwrap() - (-x / 2.0f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn bins_and_counts() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let e = quantile_edges(&xs, 4);
        assert_eq!(e, vec![250.0, 500.0, 750.0]);
        assert_eq!(bin_index(&e, 10.0), 0);
        assert_eq!(bin_index(&e, 500.0), 2);
        let c = count_summary(&[2, 4, 2, 4].repeat(50)).unwrap();
        assert_eq!(c.mean, 3.0);
        assert!((c.variance - 200.0 / 199.0).abs() < 1e-12);
    }
}

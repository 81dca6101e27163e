//! Fitted-model adequacy checks through quantile residuals.
//!
//! If the model is right, `F(Y_i; fitted params)` is uniform and the
//! transformed residual `Phi^{-1}(F(y_i))` behaves as a standard normal
//! draw; departures show up in the Q-Q pairs and in the Anderson-Darling
//! statistic.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::dist::EwpsParams;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::likelihood::{RegressionData, RegressionParams};

/// Distribution-function values are clipped to this band before the normal
/// inverse so extreme tail observations keep finite residuals.
const CDF_CLIP: f64 = 1e-12;

/// Quantile residuals with their normal reference quantities.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    /// Per-observation quantile residuals, in data order.
    pub residuals: Vec<f64>,
    /// `(theoretical normal quantile, ordered residual)` pairs, sorted by
    /// the theoretical quantile.
    pub qq_pairs: Vec<(f64, f64)>,
    /// Anderson-Darling statistic of the residuals.
    pub ad_statistic: f64,
    /// Its normality p-value.
    pub ad_p_value: f64,
    /// Indices of observations whose cdf value had to be clipped.
    pub clipped: Vec<usize>,
}

/// Residuals under explicit parameters; `theta = 0` gives plain Weibull
/// residuals regardless of the family tag.
pub fn quantile_residuals_at(
    params: &RegressionParams,
    data: &RegressionData,
) -> Result<ResidualSet> {
    if params.beta.len() != data.k() {
        return Err(Error::InvalidInput(format!(
            "coefficient length {} does not match design columns {}",
            params.beta.len(),
            data.k()
        )));
    }
    let n = data.n();
    let normal = Normal::standard();
    let mut residuals = Vec::with_capacity(n);
    let mut clipped = Vec::new();
    for i in 0..n {
        let eta: f64 = data
            .x()
            .row(i)
            .iter()
            .zip(params.beta.iter())
            .map(|(x, b)| x * b)
            .sum();
        let lambda = data.link().inverse(eta);
        let dist = EwpsParams::new(lambda, params.alpha, params.theta, params.spec)?;
        let mut u = dist.cdf(data.y()[i])?;
        if u < CDF_CLIP || u > 1.0 - CDF_CLIP {
            u = u.clamp(CDF_CLIP, 1.0 - CDF_CLIP);
            clipped.push(i);
        }
        residuals.push(normal.inverse_cdf(u));
    }

    let mut ordered = residuals.clone();
    ordered.sort_by(f64::total_cmp);
    let qq_pairs = ordered
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = (i as f64 + 0.5) / n as f64;
            (normal.inverse_cdf(p), *r)
        })
        .collect();

    let (ad_statistic, ad_p_value) = ad_normality(&residuals)?;
    Ok(ResidualSet {
        residuals,
        qq_pairs,
        ad_statistic,
        ad_p_value,
        clipped,
    })
}

/// Residuals of a completed fit.
pub fn quantile_residuals(fit: &FitResult, data: &RegressionData) -> Result<ResidualSet> {
    quantile_residuals_at(&fit.params, data)
}

/// Anderson-Darling normality test with estimated mean and variance.
///
/// Returns the raw statistic and a p-value from the usual small-sample
/// correction `A^2 (1 + 0.75/n + 2.25/n^2)` with the piecewise exponential
/// approximation for the composite-normal case.
pub fn ad_normality(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 8 {
        return Err(Error::InvalidInput(format!(
            "the normality test needs at least 8 values, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::InvalidInput(
            "residuals are degenerate (zero variance)".to_string(),
        ));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);

    let normal = Normal::standard();
    let mut acc = 0.0;
    for i in 0..n {
        let p_lo = normal.cdf(z[i]).clamp(1e-300, 1.0 - 1e-16);
        let p_hi = (1.0 - normal.cdf(z[n - 1 - i])).clamp(1e-300, 1.0 - 1e-16);
        acc += (2.0 * i as f64 + 1.0) * (p_lo.ln() + p_hi.ln());
    }
    let a2 = -nf - acc / nf;

    let aa = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if aa < 0.2 {
        1.0 - (-13.436 + 101.14 * aa - 223.73 * aa * aa).exp()
    } else if aa < 0.34 {
        1.0 - (-8.318 + 42.796 * aa - 59.938 * aa * aa).exp()
    } else if aa < 0.6 {
        (0.9177 - 4.279 * aa - 1.38 * aa * aa).exp()
    } else if aa < 10.0 {
        (1.2937 - 5.709 * aa + 0.0186 * aa * aa).exp()
    } else {
        3.7e-24
    };
    Ok((a2, p.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::Link;
    use crate::power_series::{PowerSeriesSpec, SeriesFamily};
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simulated(
        sp: PowerSeriesSpec,
        beta: &[f64],
        alpha: f64,
        theta: f64,
        n: usize,
        seed: u64,
    ) -> (RegressionData, RegressionParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = beta.len();
        let mut x = DMatrix::zeros(n, k);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 1..k {
                x[(i, j)] = rng.random_range(-1.0..1.0);
            }
            let eta: f64 = (0..k).map(|j| x[(i, j)] * beta[j]).sum();
            let p = EwpsParams::new(eta.exp(), alpha, theta, sp).unwrap();
            let u: f64 = rng.random_range(1e-12..1.0);
            y.push(p.quantile(u).unwrap());
        }
        let data = RegressionData::new(y, x, Link::Log).unwrap();
        let params =
            RegressionParams::new(DVector::from_column_slice(beta), alpha, theta, sp).unwrap();
        (data, params)
    }

    #[test]
    fn residual_at_fitted_median_is_zero() {
        let sp = PowerSeriesSpec::new(SeriesFamily::Poisson).unwrap();
        let params =
            RegressionParams::new(DVector::from_element(1, 0.0), 1.0, 0.0, sp).unwrap();
        // y at the fitted median: lambda = 1, median = ln 2
        let n = 12;
        let x = DMatrix::from_element(n, 1, 1.0);
        let mut y = vec![std::f64::consts::LN_2; n];
        // perturb the tail so the variance is not degenerate
        for (i, v) in y.iter_mut().enumerate().skip(6) {
            *v = 0.3 + 0.2 * i as f64;
        }
        let data = RegressionData::new(y, x, Link::Log).unwrap();
        let set = quantile_residuals_at(&params, &data).unwrap();
        for r in set.residuals.iter().take(6) {
            assert!(r.abs() < 1e-9, "median residual {r}");
        }
    }

    #[test]
    fn residual_values_match_normal_inverse() {
        // F = 0.975 maps to about 1.95996
        let normal = Normal::standard();
        assert!((normal.inverse_cdf(0.975) - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn residuals_from_true_model_look_standard_normal() {
        let sp = PowerSeriesSpec::new(SeriesFamily::Geometric).unwrap();
        let (data, params) = simulated(sp, &[0.4, -0.2], 2.0, 0.6, 1000, 555);
        let set = quantile_residuals_at(&params, &data).unwrap();
        let n = set.residuals.len() as f64;
        let mean = set.residuals.iter().sum::<f64>() / n;
        let var = set
            .residuals
            .iter()
            .map(|r| (r - mean) * (r - mean))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt(), "residual mean {mean}");
        assert!((0.85..1.15).contains(&var), "residual variance {var}");
        assert!(set.ad_p_value > 0.01);
        // qq pairs are sorted by the theoretical quantile
        for pair in set.qq_pairs.windows(2) {
            assert!(pair[0].0 <= pair[1].0);
        }
    }

    #[test]
    fn ad_accepts_normal_and_rejects_exponential() {
        let normal = Normal::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let mut accepted = 0;
        let reps = 40;
        for _ in 0..reps {
            let draws: Vec<f64> = (0..10_000)
                .map(|_| normal.inverse_cdf(rng.random_range(1e-12..1.0)))
                .collect();
            let (_, p) = ad_normality(&draws).unwrap();
            if p > 0.01 {
                accepted += 1;
            }
        }
        assert!(
            accepted as f64 >= 0.95 * reps as f64,
            "accepted {accepted}/{reps}"
        );

        let exp_draws: Vec<f64> = (0..225)
            .map(|_| -(rng.random_range(1e-12..1.0f64)).ln())
            .collect();
        let (_, p) = ad_normality(&exp_draws).unwrap();
        assert!(p < 0.01, "exponential sample p = {p}");
    }

    #[test]
    fn ad_statistic_is_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::standard();
        let draws: Vec<f64> = (0..200)
            .map(|_| normal.inverse_cdf(rng.random_range(1e-12..1.0)))
            .collect();
        let (a, _) = ad_normality(&draws).unwrap();
        let scaled: Vec<f64> = draws.iter().map(|v| 3.0 * v - 7.0).collect();
        let (b, _) = ad_normality(&scaled).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn ad_input_validation() {
        assert!(ad_normality(&[1.0; 5]).is_err());
        assert!(ad_normality(&[2.0; 20]).is_err()); // zero variance
    }

    #[test]
    fn extreme_observations_are_clipped_and_flagged() {
        let sp = PowerSeriesSpec::new(SeriesFamily::Poisson).unwrap();
        let params =
            RegressionParams::new(DVector::from_element(1, 0.0), 1.0, 0.0, sp).unwrap();
        let n = 12;
        let x = DMatrix::from_element(n, 1, 1.0);
        let mut y: Vec<f64> = (1..=n).map(|i| 0.2 * i as f64).collect();
        y[0] = 80.0; // cdf indistinguishable from 1
        let data = RegressionData::new(y, x, Link::Log).unwrap();
        let set = quantile_residuals_at(&params, &data).unwrap();
        assert_eq!(set.clipped, vec![0]);
        assert!(set.residuals[0].is_finite());
    }
}

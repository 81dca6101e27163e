//! Maximum-likelihood fitting.
//!
//! The search strategy mirrors how the profile curve is read in practice:
//! fit the Weibull restriction (`theta = 0`) first, walk a `theta` grid in
//! both directions warm-starting each inner `(beta, alpha)` maximization from
//! its neighbor, refine around the grid argmax on a finer grid, then polish
//! with a full Newton step on all `k + 2` parameters. Inner solves use the
//! analytic score and observed information with a step-halving line search,
//! falling back to a gradient step when the Newton solve fails.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::{
    loglik, observed_info, score, Link, ObsWorkspace, RegressionData, RegressionParams,
    THETA_ZERO_TOL,
};
use crate::power_series::PowerSeriesSpec;

/// Grid points tolerated without any profile improvement before an unbounded
/// directional walk stops.
const WALK_PATIENCE: usize = 30;

/// Hard cap on grid steps per direction, for unbounded domains.
const MAX_WALK_STEPS: usize = 100_000;

/// Tuning for the fitting procedure.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Coarse profile grid spacing in theta.
    pub theta_grid_step: f64,
    /// Fine grid spacing used around the coarse argmax.
    pub theta_refine_step: f64,
    /// Iteration budget for each inner Newton maximization.
    pub max_inner_iterations: usize,
    /// Max-norm of the score at which a solve counts as converged.
    pub gradient_tolerance: f64,
    /// Fraction of the domain width kept away from each theta endpoint.
    pub endpoint_margin: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            theta_grid_step: 0.01,
            theta_refine_step: 0.001,
            max_inner_iterations: 200,
            gradient_tolerance: 1e-8,
            endpoint_margin: 1e-4,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        let all_positive = self.theta_grid_step > 0.0
            && self.theta_refine_step > 0.0
            && self.max_inner_iterations > 0
            && self.gradient_tolerance > 0.0
            && self.endpoint_margin > 0.0;
        if !all_positive {
            return Err(Error::InvalidParameter(
                "all fit options must be positive".to_string(),
            ));
        }
        if self.theta_refine_step >= self.theta_grid_step {
            return Err(Error::InvalidParameter(format!(
                "refine step {} must be smaller than grid step {}",
                self.theta_refine_step, self.theta_grid_step
            )));
        }
        Ok(())
    }
}

/// Result of the restricted fit with `theta` pinned to zero (plain Weibull
/// regression). Carries `k + 1` free parameters.
#[derive(Debug, Clone)]
pub struct WeibullFit {
    pub beta: DVector<f64>,
    pub alpha: f64,
    pub loglik: f64,
    pub covariance: Option<DMatrix<f64>>,
    pub standard_errors: Option<Vec<f64>>,
    pub aic: f64,
    pub converged: bool,
    pub link: Link,
}

/// Result of the full fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Maximizing parameters `(beta, alpha, theta)` with the family spec.
    pub params: RegressionParams,
    /// Maximized log-likelihood.
    pub loglik: f64,
    /// Inverse observed information at the maximizer, when positive definite.
    pub covariance: Option<DMatrix<f64>>,
    /// Square roots of the covariance diagonal, same ordering as the score.
    pub standard_errors: Option<Vec<f64>>,
    pub aic: f64,
    pub converged: bool,
    /// Set when the maximizer pressed against a theta search bound.
    pub boundary: bool,
    /// Profile curve `(theta, profile log-likelihood)` sorted by theta;
    /// includes the final maximizer, so its maximum equals `loglik`.
    pub profile: Vec<(f64, f64)>,
    pub link: Link,
}

/// A fitted quantile with its delta-method variance and 95% band.
#[derive(Debug, Clone, Copy)]
pub struct QuantileEstimate {
    pub xi: f64,
    pub point: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// `2 p - 2 ell`.
pub fn aic_value(n_params: usize, loglik: f64) -> f64 {
    2.0 * n_params as f64 - 2.0 * loglik
}

fn check_full_rank(data: &RegressionData) -> Result<()> {
    let svd = data.x().clone().svd(false, false);
    let tol = 1e-10 * svd.singular_values.max() * data.n() as f64;
    let rank = svd.rank(tol);
    if rank < data.k() {
        return Err(Error::InvalidInput(format!(
            "design matrix is rank deficient: rank {rank} < {} columns",
            data.k()
        )));
    }
    Ok(())
}

/// Least-squares start for `beta`: regress `h(y)` on the design.
fn starting_beta(data: &RegressionData) -> Result<DVector<f64>> {
    let x = data.x();
    let hy = DVector::from_iterator(data.n(), data.y().iter().map(|v| data.link().apply(*v)));
    let xtx = x.transpose() * x;
    let xty = x.transpose() * hy;
    xtx.cholesky()
        .map(|ch| ch.solve(&xty))
        .or_else(|| {
            let lu = (x.transpose() * x).lu();
            lu.solve(&xty)
        })
        .ok_or_else(|| Error::InvalidInput("could not form least-squares start".to_string()))
}

#[derive(Debug, Clone)]
struct InnerFit {
    beta: DVector<f64>,
    alpha: f64,
    loglik: f64,
    converged: bool,
}

/// Try the Newton direction `K d = u` on the leading `dim` block; fall back
/// to the raw gradient when the solve fails or points downhill.
fn ascent_direction(k_mat: &DMatrix<f64>, u: &DVector<f64>, dim: usize) -> DVector<f64> {
    let k_sub = k_mat.view((0, 0), (dim, dim)).into_owned();
    let u_sub = DVector::from_iterator(dim, u.iter().take(dim).copied());
    let newton = k_sub
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&u_sub))
        .or_else(|| k_sub.lu().solve(&u_sub));
    match newton {
        Some(d) if d.iter().all(|v| v.is_finite()) && d.dot(&u_sub) > 0.0 => d,
        _ => u_sub,
    }
}

/// Maximize over `(beta, alpha)` with `theta` held fixed.
fn maximize_given_theta(
    data: &RegressionData,
    spec: PowerSeriesSpec,
    theta: f64,
    start_beta: &DVector<f64>,
    start_alpha: f64,
    opts: &FitOptions,
) -> Result<InnerFit> {
    let k = data.k();
    let mut params = RegressionParams::new(start_beta.clone(), start_alpha, theta, spec)?;
    let mut ws = ObsWorkspace::build(&params, data)?;
    let mut ll = crate::likelihood::loglik_from_workspace(&params, data, &ws);
    let mut converged = false;

    for _ in 0..opts.max_inner_iterations {
        let u = crate::likelihood::score_from_workspace(&params, data, &ws);
        let sub_norm = u.iter().take(k + 1).fold(0.0f64, |m, v| m.max(v.abs()));
        if sub_norm <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        let k_mat = crate::likelihood::observed_info_from_workspace(&params, data, &ws);
        let dir = ascent_direction(&k_mat, &u, k + 1);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let alpha_c = params.alpha + t * dir[k];
            if alpha_c <= 0.0 {
                t *= 0.5;
                continue;
            }
            let mut beta_c = params.beta.clone();
            for j in 0..k {
                beta_c[j] += t * dir[j];
            }
            let Ok(cand) = RegressionParams::new(beta_c, alpha_c, theta, spec) else {
                t *= 0.5;
                continue;
            };
            let Ok(ws_c) = ObsWorkspace::build(&cand, data) else {
                t *= 0.5;
                continue;
            };
            let ll_c = crate::likelihood::loglik_from_workspace(&cand, data, &ws_c);
            // slack sized to the floating resolution of the objective, so
            // ulp-level evaluation noise cannot reject true Newton steps
            if ll_c.is_finite() && ll_c >= ll - 1e-11 * ll.abs().max(1.0) {
                params = cand;
                ws = ws_c;
                ll = ll_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(InnerFit {
        beta: params.beta,
        alpha: params.alpha,
        loglik: ll,
        converged,
    })
}

/// Full Newton polish over all `k + 2` parameters, keeping `theta` strictly
/// inside `(lo, hi)`.
fn polish_full(
    data: &RegressionData,
    spec: PowerSeriesSpec,
    start: RegressionParams,
    bounds: (f64, f64),
    opts: &FitOptions,
) -> Result<(RegressionParams, f64, bool)> {
    let k = data.k();
    let (lo, hi) = bounds;
    let mut params = start;
    let mut ws = ObsWorkspace::build(&params, data)?;
    let mut ll = crate::likelihood::loglik_from_workspace(&params, data, &ws);
    let mut converged = false;

    for _ in 0..opts.max_inner_iterations {
        let u = crate::likelihood::score_from_workspace(&params, data, &ws);
        if u.amax() <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        let k_mat = crate::likelihood::observed_info_from_workspace(&params, data, &ws);
        let dir = ascent_direction(&k_mat, &u, k + 2);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let alpha_c = params.alpha + t * dir[k];
            let theta_c = params.theta + t * dir[k + 1];
            if alpha_c <= 0.0 || theta_c <= lo || theta_c >= hi {
                t *= 0.5;
                continue;
            }
            let mut beta_c = params.beta.clone();
            for j in 0..k {
                beta_c[j] += t * dir[j];
            }
            let Ok(cand) = RegressionParams::new(beta_c, alpha_c, theta_c, spec) else {
                t *= 0.5;
                continue;
            };
            let Ok(ws_c) = ObsWorkspace::build(&cand, data) else {
                t *= 0.5;
                continue;
            };
            let ll_c = crate::likelihood::loglik_from_workspace(&cand, data, &ws_c);
            // slack sized to the floating resolution of the objective, so
            // ulp-level evaluation noise cannot reject true Newton steps
            if ll_c.is_finite() && ll_c >= ll - 1e-11 * ll.abs().max(1.0) {
                params = cand;
                ws = ws_c;
                ll = ll_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((params, ll, converged))
}

/// The theta search interval: `endpoint_margin` of the domain width inside
/// each finite endpoint, open at infinite ones.
fn theta_bounds(spec: &PowerSeriesSpec, opts: &FitOptions) -> (f64, f64) {
    let (lo, hi) = spec.theta_domain();
    let width = if lo.is_finite() && hi.is_finite() {
        hi - lo
    } else {
        2.0
    };
    let margin = opts.endpoint_margin * width;
    let lo_b = if lo.is_finite() { lo + margin } else { lo };
    let hi_b = if hi.is_finite() { hi - margin } else { hi };
    (lo_b, hi_b)
}

/// Restricted Weibull regression (`theta = 0`). The family spec plays no
/// role at zero; it is carried only for parameter bookkeeping.
pub fn fit_weibull(data: &RegressionData, opts: &FitOptions) -> Result<WeibullFit> {
    opts.validate()?;
    check_full_rank(data)?;
    let spec = PowerSeriesSpec::new(crate::power_series::SeriesFamily::Poisson)?;
    let beta0 = starting_beta(data)?;
    let inner = maximize_given_theta(data, spec, 0.0, &beta0, 1.0, opts)?;
    let params = RegressionParams::new(inner.beta.clone(), inner.alpha, 0.0, spec)?;
    let k = data.k();
    let info = observed_info(&params, data)?;
    let info_sub = info.view((0, 0), (k + 1, k + 1)).into_owned();
    let covariance = info_sub.cholesky().map(|ch| ch.inverse());
    let standard_errors = covariance
        .as_ref()
        .map(|c| (0..k + 1).map(|j| c[(j, j)].sqrt()).collect());
    Ok(WeibullFit {
        beta: inner.beta,
        alpha: inner.alpha,
        loglik: inner.loglik,
        covariance,
        standard_errors,
        aic: aic_value(k + 1, inner.loglik),
        converged: inner.converged,
        link: data.link(),
    })
}

/// Full maximum-likelihood fit over `(beta, alpha, theta)`.
pub fn fit_mle(
    data: &RegressionData,
    spec: &PowerSeriesSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    check_full_rank(data)?;
    let spec = *spec;
    let (lo_b, hi_b) = theta_bounds(&spec, opts);

    let beta0 = starting_beta(data)?;
    let base = maximize_given_theta(data, spec, 0.0, &beta0, 1.0, opts)?;

    let mut curve: Vec<(f64, f64)> = vec![(0.0, base.loglik)];
    let mut best_theta = 0.0f64;
    let mut best = base.clone();
    let mut hit_bound_at_argmax = false;

    for dir in [1.0f64, -1.0] {
        let mut warm = base.clone();
        let mut best_dir = base.loglik;
        let mut since_improve = 0usize;
        for step_idx in 1..=MAX_WALK_STEPS {
            let theta = dir * step_idx as f64 * opts.theta_grid_step;
            if theta <= lo_b || theta >= hi_b {
                // the walk ran into the search bound while still improving
                if since_improve == 0 && best_theta != 0.0 && dir * best_theta > 0.0 {
                    hit_bound_at_argmax = true;
                }
                break;
            }
            let Ok(inner) = maximize_given_theta(data, spec, theta, &warm.beta, warm.alpha, opts)
            else {
                since_improve += 1;
                if since_improve > WALK_PATIENCE {
                    break;
                }
                continue;
            };
            curve.push((theta, inner.loglik));
            if inner.loglik > best_dir + 1e-10 {
                best_dir = inner.loglik;
                since_improve = 0;
            } else {
                since_improve += 1;
            }
            if inner.loglik > best.loglik {
                best = inner.clone();
                best_theta = theta;
            }
            warm = inner;
            if since_improve > WALK_PATIENCE {
                break;
            }
        }
    }

    // refine on the fine grid around the coarse argmax
    let refine_span = (opts.theta_grid_step / opts.theta_refine_step).round() as i64;
    let mut warm = best.clone();
    for j in -refine_span..=refine_span {
        let theta = best_theta + j as f64 * opts.theta_refine_step;
        if theta <= lo_b || theta >= hi_b || j == 0 {
            continue;
        }
        if let Ok(inner) = maximize_given_theta(data, spec, theta, &warm.beta, warm.alpha, opts) {
            curve.push((theta, inner.loglik));
            if inner.loglik > best.loglik {
                best = inner.clone();
                best_theta = theta;
            }
            warm = inner;
        }
    }

    // full Newton polish from the refined argmax; the line search never
    // decreases the objective, so the fallback arm is only a safety net
    let start = RegressionParams::new(best.beta.clone(), best.alpha, best_theta, spec)?;
    let (params, ll, polished) = polish_full(data, spec, start, (lo_b, hi_b), opts)?;
    let (params, ll) = if ll >= best.loglik {
        (params, ll)
    } else {
        (
            RegressionParams::new(best.beta, best.alpha, best_theta, spec)?,
            best.loglik,
        )
    };

    let span = hi_b - lo_b;
    let near_bound = (params.theta - lo_b).abs() < opts.theta_refine_step.min(1e-3 * span)
        || (hi_b - params.theta).abs() < opts.theta_refine_step.min(1e-3 * span);
    let boundary = hit_bound_at_argmax || near_bound;
    let converged = polished && !boundary;

    let info = observed_info(&params, data)?;
    let covariance = info.clone().cholesky().map(|ch| ch.inverse());
    let standard_errors = covariance
        .as_ref()
        .map(|c| (0..c.nrows()).map(|j| c[(j, j)].sqrt()).collect());

    curve.push((params.theta, ll));
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    curve.dedup_by(|a, b| {
        if (a.0 - b.0).abs() < 1e-12 {
            b.1 = b.1.max(a.1);
            true
        } else {
            false
        }
    });

    let aic = aic_value(data.k() + 2, ll);
    Ok(FitResult {
        params,
        loglik: ll,
        covariance,
        standard_errors,
        aic,
        converged,
        boundary,
        profile: curve,
        link: data.link(),
    })
}

/// Profile log-likelihood over a caller-supplied theta grid. Grid points are
/// maximized over `(beta, alpha)` with theta fixed, warm-starting from the
/// neighboring point (walking outward from zero in each direction); failures
/// are recorded as missing. The two directional walks are independent and run
/// concurrently unless `EWPS_THREADS=1`.
pub fn profile_theta(
    data: &RegressionData,
    spec: &PowerSeriesSpec,
    grid: &[f64],
) -> Result<Vec<(f64, Option<f64>)>> {
    let opts = FitOptions::default();
    check_full_rank(data)?;
    let spec = *spec;
    for theta in grid {
        spec.check_theta(*theta)?;
    }
    let beta0 = starting_beta(data)?;
    let base = maximize_given_theta(data, spec, 0.0, &beta0, 1.0, &opts)?;

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|a, b| grid[*a].total_cmp(&grid[*b]));
    let split = order.partition_point(|idx| grid[*idx] < 0.0);
    let (neg_idx, pos_idx) = order.split_at(split);

    let walk = |indices: &[usize], reverse: bool| -> Vec<(usize, Option<f64>)> {
        let mut out = Vec::with_capacity(indices.len());
        let mut warm = base.clone();
        let iter: Box<dyn Iterator<Item = &usize>> = if reverse {
            Box::new(indices.iter().rev())
        } else {
            Box::new(indices.iter())
        };
        for &idx in iter {
            match maximize_given_theta(data, spec, grid[idx], &warm.beta, warm.alpha, &opts) {
                Ok(inner) => {
                    out.push((idx, Some(inner.loglik)));
                    warm = inner;
                }
                Err(_) => out.push((idx, None)),
            }
        }
        out
    };

    let threads = std::env::var("EWPS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        });

    let mut results: Vec<(usize, Option<f64>)> = Vec::with_capacity(grid.len());
    if threads >= 2 && !neg_idx.is_empty() && !pos_idx.is_empty() {
        let (neg_out, pos_out) = std::thread::scope(|scope| {
            let neg_handle = scope.spawn(|| walk(neg_idx, true));
            let pos_out = walk(pos_idx, false);
            (neg_handle.join().expect("profile walk panicked"), pos_out)
        });
        results.extend(neg_out);
        results.extend(pos_out);
    } else {
        results.extend(walk(neg_idx, true));
        results.extend(walk(pos_idx, false));
    }

    let mut curve: Vec<(f64, Option<f64>)> = grid.iter().map(|t| (*t, None)).collect();
    for (idx, ll) in results {
        curve[idx].1 = ll;
    }
    Ok(curve)
}

/// Likelihood-ratio statistic `2 (ell_full - ell_null)` and its upper-tail
/// chi-squared p-value on `df` degrees of freedom.
pub fn lr_test(full: &FitResult, null_loglik: f64, df: usize) -> Result<(f64, f64)> {
    lr_test_values(full.loglik, null_loglik, df)
}

/// As [`lr_test`] but from raw log-likelihood values.
pub fn lr_test_values(full_loglik: f64, null_loglik: f64, df: usize) -> Result<(f64, f64)> {
    if df == 0 {
        return Err(Error::NotNested("zero degrees of freedom".to_string()));
    }
    let stat = 2.0 * (full_loglik - null_loglik);
    if stat < -1e-8 {
        return Err(Error::NotNested(format!(
            "full log-likelihood {full_loglik} is below the null {null_loglik}"
        )));
    }
    let stat = stat.max(0.0);
    let chi = ChiSquared::new(df as f64)
        .map_err(|e| Error::InvalidParameter(format!("chi-squared df: {e}")))?;
    Ok((stat, chi.sf(stat)))
}

/// Per-parameter normal-approximation intervals at the given level.
pub fn wald_intervals(fit: &FitResult, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let se = fit.standard_errors.as_ref().ok_or_else(|| {
        Error::NotPositiveDefinite("no covariance available for intervals".to_string())
    })?;
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let k = fit.params.beta.len();
    let mut out = Vec::with_capacity(k + 2);
    for (j, sej) in se.iter().enumerate() {
        let center = if j < k {
            fit.params.beta[j]
        } else if j == k {
            fit.params.alpha
        } else {
            fit.params.theta
        };
        out.push((center - z * sej, center + z * sej));
    }
    Ok(out)
}

/// The quantile scale factor `B_xi(theta)`: `q = lambda B^(1/alpha)`.
fn b_factor(spec: &PowerSeriesSpec, theta: f64, xi: f64) -> Result<f64> {
    if theta.abs() < THETA_ZERO_TOL {
        return Ok(-(-xi).ln_1p());
    }
    let c_theta = spec.series_value_unchecked(theta, 0);
    let root = spec.series_inverse((1.0 - xi) * c_theta)?;
    Ok(-(root / theta).ln())
}

/// Plug-in quantile at a covariate row with delta-method variance
/// `E' Sigma E` and a 95% normal band. `B'` is taken by central differences
/// (one-sided at the zero-theta branch).
pub fn quantile_fit(fit: &FitResult, xi: f64, x_new: &[f64]) -> Result<QuantileEstimate> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Domain(format!(
            "quantile order must lie in (0, 1), got {xi}"
        )));
    }
    let k = fit.params.beta.len();
    if x_new.len() != k {
        return Err(Error::InvalidInput(format!(
            "covariate row has {} entries, expected {k}",
            x_new.len()
        )));
    }
    let sigma = fit.covariance.as_ref().ok_or_else(|| {
        Error::NotPositiveDefinite("no covariance available for the quantile band".to_string())
    })?;
    let spec = fit.params.spec;
    let theta = fit.params.theta;
    let alpha = fit.params.alpha;

    let eta: f64 = x_new
        .iter()
        .zip(fit.params.beta.iter())
        .map(|(x, b)| x * b)
        .sum();
    let (lambda, dlambda, _) = fit.link.derivatives(eta);

    let b = b_factor(&spec, theta, xi)?;
    let b_prime = if theta.abs() < THETA_ZERO_TOL {
        let h = 1e-6;
        (b_factor(&spec, theta + h, xi)? - b) / h
    } else {
        let h = 1e-6 * theta.abs().max(1.0);
        (b_factor(&spec, theta + h, xi)? - b_factor(&spec, theta - h, xi)?) / (2.0 * h)
    };

    let b_pow = b.powf(1.0 / alpha);
    let point = lambda * b_pow;

    let mut grad = DVector::zeros(k + 2);
    for j in 0..k {
        grad[j] = dlambda * b_pow * x_new[j];
    }
    grad[k] = -lambda * b_pow * b.ln() / (alpha * alpha);
    grad[k + 1] = lambda / alpha * b_prime * b.powf(1.0 / alpha - 1.0);

    let variance = (grad.transpose() * sigma * &grad)[(0, 0)].max(0.0);
    let half = 1.959963984540054 * variance.sqrt();
    Ok(QuantileEstimate {
        xi,
        point,
        variance,
        ci_low: point - half,
        ci_high: point + half,
    })
}

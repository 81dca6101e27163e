//! The three-parameter lifetime distribution built by compounding a Weibull
//! component law with a power-series count law, with the count parameter
//! `theta` allowed to be negative. `theta = 0` is exactly the Weibull law;
//! `theta > 0` is the series-system (minimum) compound; `theta < 0` is, for
//! the families that admit it, the parallel-system (maximum) compound.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::power_series::PowerSeriesSpec;

/// Below this magnitude, `theta` is routed to the exact Weibull branch: the
/// compound formulas lose all precision as `C(theta) ~ a_1 theta` near zero.
pub const THETA_ZERO_TOL: f64 = 1e-8;

/// Plain Weibull parameters (scale `lambda`, shape `alpha`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    lambda: f64,
    alpha: f64,
}

impl WeibullParams {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive and finite, got {lambda}"
            )));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "shape must be positive and finite, got {alpha}"
            )));
        }
        Ok(WeibullParams { lambda, alpha })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let w = self.w(y);
        self.alpha.ln() - self.alpha * self.lambda.ln() + (self.alpha - 1.0) * y.ln() - w
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        -(-self.w(y)).exp_m1()
    }

    pub fn survival(&self, y: f64) -> f64 {
        (-self.w(y)).exp()
    }

    pub fn quantile(&self, xi: f64) -> f64 {
        self.lambda * (-(-xi).ln_1p()).powf(1.0 / self.alpha)
    }

    /// `(y / lambda)^alpha`, evaluated in log space to avoid overflow at
    /// large shape values.
    pub fn w(&self, y: f64) -> f64 {
        (self.alpha * (y.ln() - self.lambda.ln())).exp()
    }
}

/// Parameters of the compound lifetime law: Weibull scale and shape plus the
/// count-law parameter `theta` and its family spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwpsParams {
    weibull: WeibullParams,
    theta: f64,
    spec: PowerSeriesSpec,
}

impl EwpsParams {
    pub fn new(lambda: f64, alpha: f64, theta: f64, spec: PowerSeriesSpec) -> Result<Self> {
        let weibull = WeibullParams::new(lambda, alpha)?;
        spec.check_theta(theta)?;
        Ok(EwpsParams {
            weibull,
            theta,
            spec,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.weibull.lambda()
    }

    pub fn alpha(&self) -> f64 {
        self.weibull.alpha()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn spec(&self) -> &PowerSeriesSpec {
        &self.spec
    }

    pub fn weibull(&self) -> &WeibullParams {
        &self.weibull
    }

    fn is_weibull_branch(&self) -> bool {
        self.theta.abs() < THETA_ZERO_TOL
    }

    fn check_y_positive(&self, y: f64) -> Result<()> {
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::Domain(format!(
                "the support is y > 0, got {y}"
            )));
        }
        Ok(())
    }

    /// Density at `y > 0`; the natural log of it when `log_scale` is set.
    pub fn density(&self, y: f64, log_scale: bool) -> Result<f64> {
        self.check_y_positive(y)?;
        let ln_f = if self.is_weibull_branch() {
            self.weibull.ln_pdf(y)
        } else {
            let w = self.weibull.w(y);
            let s = (-w).exp();
            let c_theta = self.spec.series_value_unchecked(self.theta, 0);
            debug_assert!(self.theta * c_theta > 0.0, "theta and C(theta) share sign");
            self.theta.abs().ln() + self.weibull.ln_pdf(y) + self.spec.ln_c_prime(self.theta * s)
                - c_theta.abs().ln()
        };
        Ok(if log_scale { ln_f } else { ln_f.exp() })
    }

    /// Distribution function at `y >= 0`.
    pub fn cdf(&self, y: f64) -> Result<f64> {
        if !(y.is_finite() && y >= 0.0) {
            return Err(Error::Domain(format!("the cdf needs y >= 0, got {y}")));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        Ok(1.0 - self.survival_inner(y))
    }

    /// Survival function, computed directly as a series ratio rather than
    /// `1 - cdf` so the far tail keeps precision.
    pub fn survival(&self, y: f64) -> Result<f64> {
        if !(y.is_finite() && y >= 0.0) {
            return Err(Error::Domain(format!("survival needs y >= 0, got {y}")));
        }
        if y == 0.0 {
            return Ok(1.0);
        }
        Ok(self.survival_inner(y))
    }

    fn survival_inner(&self, y: f64) -> f64 {
        if self.is_weibull_branch() {
            return self.weibull.survival(y);
        }
        let s = self.weibull.survival(y);
        self.spec.series_value_unchecked(self.theta * s, 0)
            / self.spec.series_value_unchecked(self.theta, 0)
    }

    /// Hazard rate at `y > 0`. Errors when the survival function has
    /// underflowed to zero (the hazard is no longer representable).
    pub fn hazard(&self, y: f64) -> Result<f64> {
        self.check_y_positive(y)?;
        if self.is_weibull_branch() {
            let alpha = self.alpha();
            let lambda = self.lambda();
            return Ok(alpha / lambda * (y / lambda).powf(alpha - 1.0));
        }
        let s = self.weibull.survival(y);
        if s == 0.0 {
            return Err(Error::InfiniteHazard(y));
        }
        let u = self.theta * s;
        let c_u = self.spec.series_value_unchecked(u, 0);
        let ln_r = self.theta.abs().ln() + self.weibull.ln_pdf(y) + self.spec.ln_c_prime(u)
            - c_u.abs().ln();
        Ok(ln_r.exp())
    }

    /// Quantile of order `xi` in `(0, 1)`.
    pub fn quantile(&self, xi: f64) -> Result<f64> {
        if !(xi.is_finite() && xi > 0.0 && xi < 1.0) {
            return Err(Error::Domain(format!(
                "quantile order must lie in (0, 1), got {xi}"
            )));
        }
        if self.is_weibull_branch() {
            return Ok(self.weibull.quantile(xi));
        }
        let b = self.b_factor(xi)?;
        Ok(self.lambda() * b.powf(1.0 / self.alpha()))
    }

    /// The quantile scale factor `B_xi(theta)` with `q = lambda B^(1/alpha)`.
    /// At `theta = 0` this is `-log(1 - xi)`, so `q` reduces to the Weibull
    /// quantile.
    pub fn b_factor(&self, xi: f64) -> Result<f64> {
        if self.is_weibull_branch() {
            return Ok(-(-xi).ln_1p());
        }
        let c_theta = self.spec.series_value_unchecked(self.theta, 0);
        let root = self.spec.series_inverse((1.0 - xi) * c_theta)?;
        Ok(-(root / self.theta).ln())
    }

    /// Raw moment `E(Y^r)`, `r > 0`, by the weighted series over component
    /// counts. Requires `|theta|` strictly inside the series radius.
    pub fn moment(&self, r: f64) -> Result<f64> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Domain(format!("moment order must be > 0, got {r}")));
        }
        let alpha = self.alpha();
        let lambda = self.lambda();
        let gamma_part = ln_gamma(r / alpha + 1.0) + r * lambda.ln();
        if self.is_weibull_branch() {
            return Ok(gamma_part.exp());
        }
        let s = self.spec.s();
        if s.is_finite() && self.theta.abs() >= s - crate::power_series::ENDPOINT_MARGIN {
            return Err(Error::Domain(format!(
                "the moment series needs |theta| < {s}, got theta = {}",
                self.theta
            )));
        }
        // sum over n of a_n theta^n n^{-r/alpha}; terms via the coefficient
        // recursion would work too, but the direct form keeps the families
        // uniform. Stops once the running term is negligible relative to the
        // largest partial magnitude seen.
        let exponent = -r / alpha;
        let mut sum = 0.0;
        let mut scale: f64 = 0.0;
        let mut n: u64 = 0;
        let max_terms = 5_000_000u64;
        loop {
            n += 1;
            let a = self.spec.coefficient(n)?;
            if a > 0.0 {
                let term = a * self.theta.powi(n as i32) * (n as f64).powf(exponent);
                sum += term;
                scale = scale.max(sum.abs()).max(term.abs());
                if term.abs() <= 1e-15 * scale && n > 4 {
                    break;
                }
            } else if matches!(
                self.spec.family(),
                crate::power_series::SeriesFamily::Binomial { .. }
            ) && n as f64 > f64::from(self.spec.family().replicate_count().unwrap())
            {
                break;
            }
            if n >= max_terms {
                return Err(Error::NonConvergence(format!(
                    "moment series did not settle within {max_terms} terms at theta = {}",
                    self.theta
                )));
            }
        }
        let c_theta = self.spec.series_value_unchecked(self.theta, 0);
        Ok(gamma_part.exp() * sum / c_theta)
    }

    /// Truncated expansion of the density as a signed combination of Weibull
    /// densities with scales `lambda n^(-1/alpha)`, `n = 1..=k`.
    pub fn mixture_density(&self, y: f64, k: u64) -> Result<f64> {
        if k < 1 {
            return Err(Error::Domain(format!(
                "the expansion order must be >= 1, got {k}"
            )));
        }
        if self.is_weibull_branch() {
            return Err(Error::Domain(
                "the component expansion is undefined at theta = 0".to_string(),
            ));
        }
        self.check_y_positive(y)?;
        let c_theta = self.spec.series_value_unchecked(self.theta, 0);
        let alpha = self.alpha();
        let lambda = self.lambda();
        let mut total = 0.0;
        for n in 1..=k {
            let a = self.spec.coefficient(n)?;
            if a == 0.0 {
                continue;
            }
            let weight = a * self.theta.powi(n as i32) / c_theta;
            let scale = lambda * (n as f64).powf(-1.0 / alpha);
            let g = WeibullParams::new(scale, alpha)?.pdf(y);
            total += weight * g;
        }
        Ok(total)
    }

    /// `n` draws by inverse-transform through the quantile function;
    /// deterministic for a fixed seed. Works for every `theta`, including
    /// zero and families without a parallel-system form.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n < 1 {
            return Err(Error::Domain("sample size must be >= 1".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.sample_with(&mut rng)?);
        }
        Ok(out)
    }

    /// One inverse-transform draw from a caller-owned generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.quantile(positive_uniform(rng))
    }

    /// `n` draws through the physical system construction: a count `N` from
    /// the count law, then the minimum (`theta > 0`) or maximum (`theta < 0`,
    /// count parameter `t(theta)`) of `N` Weibull component lifetimes. This
    /// path is independent of the analytic cdf/quantile code and serves as an
    /// oracle against it.
    pub fn sample_compositional(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        if n < 1 {
            return Err(Error::Domain("sample size must be >= 1".to_string()));
        }
        if self.is_weibull_branch() {
            return Err(Error::Domain(
                "the system construction needs theta != 0".to_string(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.sample_compositional_with(&mut rng)?);
        }
        Ok(out)
    }

    /// One system-construction draw from a caller-owned generator.
    pub fn sample_compositional_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if self.is_weibull_branch() {
            return Err(Error::Domain(
                "the system construction needs theta != 0".to_string(),
            ));
        }
        let (count_theta, take_min) = if self.theta > 0.0 {
            (self.theta, true)
        } else {
            (self.spec.parallel_map(self.theta)?, false)
        };
        let lambda = self.lambda();
        let inv_alpha = 1.0 / self.alpha();
        let count = self.spec.ps_sample_with(count_theta, rng)?;
        let mut extreme = if take_min { f64::INFINITY } else { 0.0 };
        for _ in 0..count {
            let z = lambda * (-positive_uniform(rng).ln()).powf(inv_alpha);
            extreme = if take_min {
                extreme.min(z)
            } else {
                extreme.max(z)
            };
        }
        Ok(extreme)
    }
}

fn positive_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power_series::{all_families, SeriesFamily};

    const E: f64 = std::f64::consts::E;
    const LN_2: f64 = std::f64::consts::LN_2;

    fn poisson(lambda: f64, alpha: f64, theta: f64) -> EwpsParams {
        EwpsParams::new(
            lambda,
            alpha,
            theta,
            PowerSeriesSpec::new(SeriesFamily::Poisson).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn density_weibull_branch() {
        let p = poisson(1.0, 1.0, 0.0);
        assert!((p.density(1.0, false).unwrap() - (-1.0f64).exp()).abs() < 1e-14);
        assert!(p.density(0.0, false).is_err());
        assert!(p.density(-1.0, false).is_err());
    }

    #[test]
    fn density_series_branch() {
        // Poisson family, lambda = alpha = theta = 1 at y = ln 2:
        // f = 0.5 e^{0.5} / (e - 1)
        let p = poisson(1.0, 1.0, 1.0);
        let expect = 0.5 * 0.5f64.exp() / (E - 1.0);
        assert!((p.density(LN_2, false).unwrap() - expect).abs() < 1e-12);
        let lf = p.density(LN_2, true).unwrap();
        assert!((lf - expect.ln()).abs() < 1e-12);
    }

    #[test]
    fn cdf_values() {
        let p = poisson(1.0, 1.0, 1.0);
        assert_eq!(p.cdf(0.0).unwrap(), 0.0);
        let expect = 1.0 - (0.5f64.exp() - 1.0) / (E - 1.0);
        assert!((p.cdf(LN_2).unwrap() - expect).abs() < 1e-12);
        let w = poisson(1.0, 1.0, 0.0);
        assert!((w.cdf(1.0).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        assert!(w.cdf(-0.5).is_err());
    }

    #[test]
    fn cdf_is_nondecreasing_and_reaches_one() {
        for family in all_families() {
            let sp = PowerSeriesSpec::new(family).unwrap();
            for theta in [-0.8, 0.8] {
                let p = EwpsParams::new(1.3, 2.0, theta, sp).unwrap();
                let mut last = 0.0;
                for i in 1..=60 {
                    let y = 0.1 * i as f64;
                    let f = p.cdf(y).unwrap();
                    assert!(f >= last - 1e-14);
                    last = f;
                }
                assert!(p.cdf(50.0).unwrap() > 1.0 - 1e-10);
            }
        }
    }

    #[test]
    fn hazard_values_and_ordering() {
        let w = poisson(1.0, 1.0, 0.0);
        assert!((w.hazard(5.0).unwrap() - 1.0).abs() < 1e-14);

        let p = poisson(1.0, 1.0, 1.0);
        let expect = 0.5 * 0.5f64.exp() / (0.5f64.exp() - 1.0);
        assert!((p.hazard(LN_2).unwrap() - expect).abs() < 1e-12);
        // cross-check against f / (1 - F)
        let alt = p.density(LN_2, false).unwrap() / p.survival(LN_2).unwrap();
        assert!((p.hazard(LN_2).unwrap() - alt).abs() < 1e-12);

        // hazard is increasing in theta at fixed (lambda, alpha, y): the
        // series compound (theta > 0) sits above the single-component rate,
        // the parallel compound (theta < 0) below it.
        let r_pos = poisson(1.0, 1.0, 1.0).hazard(1.0).unwrap();
        let r_zero = poisson(1.0, 1.0, 0.0).hazard(1.0).unwrap();
        let r_neg = poisson(1.0, 1.0, -1.0).hazard(1.0).unwrap();
        assert!(r_neg < r_zero && r_zero < r_pos, "{r_neg} {r_zero} {r_pos}");
    }

    #[test]
    fn hazard_overflow_is_reported() {
        let p = poisson(1.0, 1.0, 1.0);
        assert!(matches!(p.hazard(800.0), Err(Error::InfiniteHazard(_))));
    }

    #[test]
    fn quantile_round_trips_cdf() {
        let w = poisson(1.0, 1.0, 0.0);
        assert!((w.quantile(0.5).unwrap() - LN_2).abs() < 1e-14);
        let p = poisson(1.0, 1.0, 1.0);
        let xi = p.cdf(LN_2).unwrap();
        assert!((p.quantile(xi).unwrap() - LN_2).abs() < 1e-10);
        // closed Weibull quantile at lambda 2, alpha 3
        let w2 = poisson(2.0, 3.0, 0.0);
        let expect = 2.0 * (10f64.ln()).powf(1.0 / 3.0);
        assert!((w2.quantile(0.9).unwrap() - expect).abs() < 1e-12);
        assert!(p.quantile(0.0).is_err());
        assert!(p.quantile(1.0).is_err());
    }

    #[test]
    fn moment_values() {
        let w = poisson(1.0, 1.0, 0.0);
        assert!((w.moment(1.0).unwrap() - 1.0).abs() < 1e-12);
        let w2 = poisson(2.0, 2.0, 0.0);
        assert!((w2.moment(2.0).unwrap() - 4.0).abs() < 1e-12);
        // sum over n of 1/(n! n) weighted: E(Y) = (1/(e-1)) sum 1/(n! n)
        let p = poisson(1.0, 1.0, 1.0);
        let series: f64 = (1..40)
            .map(|n| {
                let fact: f64 = (1..=n).map(|j| j as f64).product();
                1.0 / (fact * n as f64)
            })
            .sum();
        let expect = series / (E - 1.0);
        assert!((p.moment(1.0).unwrap() - expect).abs() < 1e-12);
        assert!(p.moment(0.0).is_err());
    }

    #[test]
    fn moment_rejects_beyond_radius() {
        let sp = PowerSeriesSpec::extended(SeriesFamily::Geometric).unwrap();
        let p = EwpsParams::new(1.0, 1.0, -2.0, sp).unwrap();
        assert!(p.moment(1.0).is_err());
    }

    #[test]
    fn mixture_matches_density() {
        let p = poisson(1.0, 1.0, 1.0);
        let d = p.density(1.0, false).unwrap();
        let m = p.mixture_density(1.0, 50).unwrap();
        assert!((d - m).abs() < 1e-12, "{d} vs {m}");

        // finite family: the expansion terminates at n = m exactly
        let b = EwpsParams::new(
            1.0,
            2.0,
            0.5,
            PowerSeriesSpec::new(SeriesFamily::Binomial { m: 3 }).unwrap(),
        )
        .unwrap();
        for y in [0.3, 1.0, 2.1] {
            let d = b.density(y, false).unwrap();
            let m3 = b.mixture_density(y, 3).unwrap();
            assert!((d - m3).abs() <= 1e-13 * d.max(1e-30), "{d} vs {m3}");
            assert_eq!(m3, b.mixture_density(y, 10).unwrap());
        }

        // single-term dominance near theta = 0
        let near_zero = poisson(1.0, 1.0, 1e-6);
        let d = near_zero.density(1.0, false).unwrap();
        let m1 = near_zero.mixture_density(1.0, 1).unwrap();
        assert!((d - m1).abs() / d < 1e-5);

        assert!(p.mixture_density(1.0, 0).is_err());
        assert!(poisson(1.0, 1.0, 0.0).mixture_density(1.0, 5).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = poisson(1.0, 1.0, 1.0);
        assert_eq!(p.sample(64, 9).unwrap(), p.sample(64, 9).unwrap());
        assert_eq!(
            p.sample_compositional(64, 9).unwrap(),
            p.sample_compositional(64, 9).unwrap()
        );
        assert!(poisson(1.0, 1.0, 0.0).sample_compositional(8, 1).is_err());
        let l2 = EwpsParams::new(
            1.0,
            1.0,
            -0.5,
            PowerSeriesSpec::new(SeriesFamily::LogarithmicII).unwrap(),
        )
        .unwrap();
        assert!(l2.sample_compositional(8, 1).is_err());
    }

    #[test]
    fn sample_mean_matches_moment() {
        let p = poisson(1.0, 1.0, 1.0);
        let n = 100_000;
        let draws = p.sample(n, 1234).unwrap();
        let mean: f64 = draws.iter().sum::<f64>() / n as f64;
        let var: f64 =
            draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
        let expect = p.moment(1.0).unwrap();
        assert!(
            (mean - expect).abs() < 3.0 * (var / n as f64).sqrt(),
            "{mean} vs {expect}"
        );
    }

    #[test]
    fn identifiability_witness() {
        // The odd series makes theta and -theta indistinguishable, exactly.
        let sp = PowerSeriesSpec::new(SeriesFamily::LogarithmicII).unwrap();
        for y in [0.2, 0.7, 1.5, 3.0] {
            let f_pos = EwpsParams::new(1.0, 2.0, 0.6, sp)
                .unwrap()
                .density(y, false)
                .unwrap();
            let f_neg = EwpsParams::new(1.0, 2.0, -0.6, sp)
                .unwrap()
                .density(y, false)
                .unwrap();
            assert_eq!(f_pos, f_neg);
        }
        // while a non-odd series distinguishes the signs
        let f_pos = poisson(1.0, 2.0, 0.6).density(1.0, false).unwrap();
        let f_neg = poisson(1.0, 2.0, -0.6).density(1.0, false).unwrap();
        assert!((f_pos - f_neg).abs() > 1e-3);
    }

    #[test]
    fn weibull_limit() {
        for family in all_families() {
            let sp = PowerSeriesSpec::new(family).unwrap();
            let w = WeibullParams::new(1.5, 2.0).unwrap();
            for theta in [-1e-6, 1e-6] {
                let p = EwpsParams::new(1.5, 2.0, theta, sp).unwrap();
                for i in 1..=40 {
                    let y = 0.15 * i as f64;
                    let diff = (p.cdf(y).unwrap() - w.cdf(y)).abs();
                    assert!(diff <= 1e-5, "{}: {diff}", family.name());
                }
            }
        }
    }

    #[test]
    fn survival_times_hazard_equals_density() {
        for family in all_families() {
            let sp = PowerSeriesSpec::new(family).unwrap();
            for theta in [-0.7, 0.7] {
                let p = EwpsParams::new(1.0, 1.7, theta, sp).unwrap();
                for i in 1..=30 {
                    let y = 0.12 * i as f64;
                    let sv = p.survival(y).unwrap();
                    if sv < 1e-12 {
                        continue;
                    }
                    let lhs = p.hazard(y).unwrap() * sv;
                    let rhs = p.density(y, false).unwrap();
                    assert!(
                        (lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-12),
                        "{}: {lhs} vs {rhs}",
                        family.name()
                    );
                }
            }
        }
    }
}

//! Power series functions behind the component-count laws.
//!
//! Each family is described by coefficients `a_n >= 0` (with `a_1 > 0`) and the
//! series `C(theta) = sum a_n theta^n` on an open interval around zero. The
//! families here carry closed forms for `C`, its derivatives up to order four,
//! its inverse, the domain endpoints, the zero-truncated count law obtained for
//! `theta > 0`, and the map `t(theta)` that carries a negative `theta` to the
//! positive count parameter of the parallel-system form.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Absolute margin kept away from finite domain endpoints. Values closer than
/// this are rejected rather than clamped: `C` or `C'` blows up at the endpoints
/// and silent clamping would corrupt likelihoods.
pub const ENDPOINT_MARGIN: f64 = 1e-8;

/// Inverse-transform sampling stops once the accumulated probability exceeds
/// this bound; a uniform draw beyond it is reported as an error.
const SAMPLE_CUM_CAP: f64 = 1.0 - 1e-14;

/// One of the six supported count-law families.
///
/// `m` is the known replicate count (binomial) or fixed failure count
/// (negative binomial); it must be an integer `>= 2` and exists only for
/// those two families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFamily {
    Poisson,
    Logarithmic,
    Geometric,
    Binomial { m: u32 },
    NegativeBinomial { m: u32 },
    LogarithmicII,
}

impl SeriesFamily {
    /// Lower-case family name used by the CLI and reports.
    pub fn name(&self) -> &'static str {
        match self {
            SeriesFamily::Poisson => "poisson",
            SeriesFamily::Logarithmic => "logarithmic",
            SeriesFamily::Geometric => "geometric",
            SeriesFamily::Binomial { .. } => "binomial",
            SeriesFamily::NegativeBinomial { .. } => "negative-binomial",
            SeriesFamily::LogarithmicII => "logarithmic-ii",
        }
    }

    /// The integer `m` for binomial/negative binomial, `None` otherwise.
    pub fn replicate_count(&self) -> Option<u32> {
        match self {
            SeriesFamily::Binomial { m } | SeriesFamily::NegativeBinomial { m } => Some(*m),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(m) = self.replicate_count() {
            if m < 2 {
                return Err(Error::InvalidParameter(format!(
                    "{} requires integer m >= 2, got {}",
                    self.name(),
                    m
                )));
            }
        }
        Ok(())
    }

    /// Parse a family name as used on the command line.
    pub fn parse(name: &str, m: Option<u32>) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        let family = match lower.as_str() {
            "poisson" => SeriesFamily::Poisson,
            "logarithmic" => SeriesFamily::Logarithmic,
            "geometric" => SeriesFamily::Geometric,
            "binomial" => SeriesFamily::Binomial {
                m: m.ok_or_else(|| {
                    Error::InvalidParameter("binomial requires --m".to_string())
                })?,
            },
            "negative-binomial" => SeriesFamily::NegativeBinomial {
                m: m.ok_or_else(|| {
                    Error::InvalidParameter("negative-binomial requires --m".to_string())
                })?,
            },
            "logarithmic-ii" => SeriesFamily::LogarithmicII,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown family '{other}'"
                )))
            }
        };
        if family.replicate_count().is_none() && m.is_some() {
            return Err(Error::InvalidParameter(format!(
                "family '{lower}' does not take m"
            )));
        }
        family.validate()?;
        Ok(family)
    }
}

/// A family together with its theta domain.
///
/// The default domain is the open interval `(s_star, s)` of the family. For
/// the geometric and logarithmic families the lower endpoint may be pushed to
/// negative infinity by constructing the spec with [`PowerSeriesSpec::extended`];
/// the series formulas continue analytically there and the parallel-system
/// form remains valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowerSeriesSpec {
    family: SeriesFamily,
    extended: bool,
}

impl PowerSeriesSpec {
    /// Standard-domain spec.
    pub fn new(family: SeriesFamily) -> Result<Self> {
        family.validate()?;
        Ok(PowerSeriesSpec {
            family,
            extended: false,
        })
    }

    /// Extended-domain spec: lower endpoint replaced by negative infinity.
    /// Only the geometric and logarithmic families admit this.
    pub fn extended(family: SeriesFamily) -> Result<Self> {
        family.validate()?;
        match family {
            SeriesFamily::Geometric | SeriesFamily::Logarithmic => Ok(PowerSeriesSpec {
                family,
                extended: true,
            }),
            other => Err(Error::InvalidParameter(format!(
                "the extended domain is only defined for geometric and logarithmic, not {}",
                other.name()
            ))),
        }
    }

    pub fn family(&self) -> SeriesFamily {
        self.family
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    /// Lower endpoint of the open theta domain.
    pub fn s_star(&self) -> f64 {
        if self.extended {
            return f64::NEG_INFINITY;
        }
        match self.family {
            SeriesFamily::Poisson => f64::NEG_INFINITY,
            SeriesFamily::Logarithmic
            | SeriesFamily::Geometric
            | SeriesFamily::Binomial { .. }
            | SeriesFamily::LogarithmicII => -1.0,
            SeriesFamily::NegativeBinomial { m } => 1.0 / (1.0 - f64::from(m)),
        }
    }

    /// Upper endpoint (radius of convergence) of the open theta domain.
    pub fn s(&self) -> f64 {
        match self.family {
            SeriesFamily::Poisson | SeriesFamily::Binomial { .. } => f64::INFINITY,
            SeriesFamily::Logarithmic
            | SeriesFamily::Geometric
            | SeriesFamily::NegativeBinomial { .. }
            | SeriesFamily::LogarithmicII => 1.0,
        }
    }

    /// The open interval of admissible theta values.
    pub fn theta_domain(&self) -> (f64, f64) {
        (self.s_star(), self.s())
    }

    /// Reject non-finite theta and theta within [`ENDPOINT_MARGIN`] of a
    /// finite endpoint. `theta = 0` is always admissible.
    pub fn check_theta(&self, theta: f64) -> Result<()> {
        if !theta.is_finite() {
            return Err(Error::Domain(format!("theta must be finite, got {theta}")));
        }
        let (lo, hi) = self.theta_domain();
        let lo_ok = lo.is_infinite() || theta >= lo + ENDPOINT_MARGIN;
        let hi_ok = hi.is_infinite() || theta <= hi - ENDPOINT_MARGIN;
        if !(lo_ok && hi_ok) {
            return Err(Error::Domain(format!(
                "theta = {theta} is outside ({lo}, {hi}) for the {} family",
                self.family.name()
            )));
        }
        Ok(())
    }

    /// Series coefficient `a_n`, `n >= 1`.
    pub fn coefficient(&self, n: u64) -> Result<f64> {
        if n < 1 {
            return Err(Error::Domain(format!("coefficient index must be >= 1, got {n}")));
        }
        Ok(match self.family {
            SeriesFamily::Poisson => {
                if n <= 20 {
                    1.0 / (1..=n).map(|j| j as f64).product::<f64>()
                } else {
                    (-ln_gamma(n as f64 + 1.0)).exp()
                }
            }
            SeriesFamily::Logarithmic => 1.0 / n as f64,
            SeriesFamily::Geometric => 1.0,
            SeriesFamily::Binomial { m } => {
                let m = u64::from(m);
                if n > m {
                    0.0
                } else {
                    // binom(m, n) by incremental products, exact for small m
                    (0..n).fold(1.0, |acc, j| acc * (m - j) as f64 / (j + 1) as f64)
                }
            }
            SeriesFamily::NegativeBinomial { m } => {
                // Gamma(m + n - 1) / ((n-1)! Gamma(m)) = binom(m + n - 2, n - 1)
                let m = u64::from(m);
                (1..n).fold(1.0, |acc, j| acc * (m + j - 1) as f64 / j as f64)
            }
            SeriesFamily::LogarithmicII => {
                if n % 2 == 1 {
                    2.0 / n as f64
                } else {
                    0.0
                }
            }
        })
    }

    pub(crate) fn a1(&self) -> f64 {
        self.coefficient(1).expect("a_1 exists")
    }

    pub(crate) fn a2(&self) -> f64 {
        self.coefficient(2).expect("a_2 exists")
    }

    pub(crate) fn a3(&self) -> f64 {
        self.coefficient(3).expect("a_3 exists")
    }

    /// `ln a_n`, or `None` when `a_n = 0`.
    fn ln_coefficient(&self, n: u64) -> Option<f64> {
        match self.family {
            SeriesFamily::Poisson => Some(-ln_gamma(n as f64 + 1.0)),
            SeriesFamily::Logarithmic => Some(-(n as f64).ln()),
            SeriesFamily::Geometric => Some(0.0),
            SeriesFamily::Binomial { m } => {
                let m = f64::from(m);
                if n as f64 > m {
                    None
                } else {
                    Some(ln_gamma(m + 1.0) - ln_gamma(n as f64 + 1.0) - ln_gamma(m - n as f64 + 1.0))
                }
            }
            SeriesFamily::NegativeBinomial { m } => {
                let m = f64::from(m);
                Some(ln_gamma(m + n as f64 - 1.0) - ln_gamma(n as f64) - ln_gamma(m))
            }
            SeriesFamily::LogarithmicII => {
                if n % 2 == 1 {
                    Some(2f64.ln() - (n as f64).ln())
                } else {
                    None
                }
            }
        }
    }

    /// `d^order C / d theta^order` in closed form, `order` in `0..=4`.
    pub fn series_value(&self, theta: f64, order: u32) -> Result<f64> {
        if order > 4 {
            return Err(Error::Domain(format!(
                "derivative order must be in 0..=4, got {order}"
            )));
        }
        self.check_theta(theta)?;
        Ok(self.series_value_unchecked(theta, order))
    }

    /// Same as [`series_value`](Self::series_value) but skips the domain
    /// check; used on interior points such as `theta * exp(-w)`.
    pub(crate) fn series_value_unchecked(&self, theta: f64, order: u32) -> f64 {
        let k = order;
        match self.family {
            SeriesFamily::Poisson => {
                if k == 0 {
                    theta.exp_m1()
                } else {
                    theta.exp()
                }
            }
            SeriesFamily::Logarithmic => {
                // C = -ln(1 - theta); C^(k) = (k-1)! (1 - theta)^{-k}
                if k == 0 {
                    -(-theta).ln_1p()
                } else {
                    let fact: f64 = (1..k).map(f64::from).product();
                    fact * (1.0 - theta).powi(-(k as i32))
                }
            }
            SeriesFamily::Geometric => {
                // C = theta / (1 - theta); C^(k) = k! (1 - theta)^{-(k+1)}
                if k == 0 {
                    theta / (1.0 - theta)
                } else {
                    let fact: f64 = (1..=k).map(f64::from).product();
                    fact * (1.0 - theta).powi(-(k as i32 + 1))
                }
            }
            SeriesFamily::Binomial { m } => {
                let mf = f64::from(m);
                if k == 0 {
                    (mf * theta.ln_1p()).exp_m1()
                } else if u64::from(k) > u64::from(m) {
                    0.0
                } else {
                    // m (m-1) ... (m-k+1) (1 + theta)^{m-k}
                    let fall: f64 = (0..k).map(|j| mf - f64::from(j)).product();
                    fall * (1.0 + theta).powi(m as i32 - k as i32)
                }
            }
            SeriesFamily::NegativeBinomial { m } => {
                let mf = f64::from(m);
                let inv = (1.0 - theta).recip();
                match k {
                    0 => theta * inv.powi(m as i32),
                    1 => (1.0 + (mf - 1.0) * theta) * inv.powi(m as i32 + 1),
                    _ => {
                        // C^(k) = m (m+1) ... (m+k-2) [k + (m-1) theta] (1-theta)^{-(m+k)}
                        let rise: f64 = (0..k - 1).map(|j| mf + f64::from(j)).product();
                        rise * (f64::from(k) + (mf - 1.0) * theta) * inv.powi(m as i32 + k as i32)
                    }
                }
            }
            SeriesFamily::LogarithmicII => {
                // C = ln(1+theta) - ln(1-theta);
                // C^(k) = (k-1)! [(-1)^{k-1} (1+theta)^{-k} + (1-theta)^{-k}]
                if k == 0 {
                    theta.ln_1p() - (-theta).ln_1p()
                } else {
                    let fact: f64 = (1..k).map(f64::from).product();
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    fact * (sign * (1.0 + theta).powi(-(k as i32))
                        + (1.0 - theta).powi(-(k as i32)))
                }
            }
        }
    }

    /// `ln C'(u)` in closed form; `u` must be interior to the theta domain.
    pub(crate) fn ln_c_prime(&self, u: f64) -> f64 {
        match self.family {
            SeriesFamily::Poisson => u,
            SeriesFamily::Logarithmic => -(-u).ln_1p(),
            SeriesFamily::Geometric => -2.0 * (-u).ln_1p(),
            SeriesFamily::Binomial { m } => {
                let mf = f64::from(m);
                mf.ln() + (mf - 1.0) * u.ln_1p()
            }
            SeriesFamily::NegativeBinomial { m } => {
                let mf = f64::from(m);
                ((mf - 1.0) * u).ln_1p() - (mf + 1.0) * (-u).ln_1p()
            }
            SeriesFamily::LogarithmicII => 2f64.ln() - (-u * u).ln_1p(),
        }
    }

    /// Ratio `C''(u) / C'(u)` in closed form.
    pub(crate) fn ratio_c2_c1(&self, u: f64) -> f64 {
        match self.family {
            SeriesFamily::Poisson => 1.0,
            SeriesFamily::Logarithmic => (1.0 - u).recip(),
            SeriesFamily::Geometric => 2.0 / (1.0 - u),
            SeriesFamily::Binomial { m } => (f64::from(m) - 1.0) / (1.0 + u),
            SeriesFamily::NegativeBinomial { m } => {
                let mf = f64::from(m);
                mf * (2.0 + (mf - 1.0) * u) / ((1.0 - u) * (1.0 + (mf - 1.0) * u))
            }
            SeriesFamily::LogarithmicII => {
                // C'' / C' = [ -1/(1+u)^2 + 1/(1-u)^2 ] (1-u^2)/2 = 2u/(1-u^2)
                2.0 * u / (1.0 - u * u)
            }
        }
    }

    /// Ratio `C'''(u) / C'(u)` in closed form.
    pub(crate) fn ratio_c3_c1(&self, u: f64) -> f64 {
        match self.family {
            SeriesFamily::Poisson => 1.0,
            SeriesFamily::Logarithmic => 2.0 / ((1.0 - u) * (1.0 - u)),
            SeriesFamily::Geometric => 6.0 / ((1.0 - u) * (1.0 - u)),
            SeriesFamily::Binomial { m } => {
                let mf = f64::from(m);
                (mf - 1.0) * (mf - 2.0) / ((1.0 + u) * (1.0 + u))
            }
            SeriesFamily::NegativeBinomial { m } => {
                let mf = f64::from(m);
                mf * (mf + 1.0) * (3.0 + (mf - 1.0) * u)
                    / ((1.0 - u) * (1.0 - u) * (1.0 + (mf - 1.0) * u))
            }
            SeriesFamily::LogarithmicII => {
                // C''' / C' = [2/(1+u)^3 + 2/(1-u)^3] (1-u^2)/2 = (1+3u^2)... expand:
                // (1-u)^3 + (1+u)^3 = 2 + 6u^2; divided by (1-u^2)^2
                (2.0 + 6.0 * u * u) / ((1.0 - u * u) * (1.0 - u * u))
            }
        }
    }

    /// `C'(theta)/C(theta) - 1/theta` for `theta != 0`, evaluated without the
    /// cancellation the direct form suffers near zero. Writing
    /// `C(theta) = a_1 theta P(theta)` this is `(ln P)'(theta)`.
    pub(crate) fn log_c_slope(&self, theta: f64) -> f64 {
        if theta.abs() >= 1e-3 {
            return self.series_value_unchecked(theta, 1) / self.series_value_unchecked(theta, 0)
                - 1.0 / theta;
        }
        let a1 = self.a1();
        let p1 = self.a2() / a1;
        let p2 = self.a3() / a1;
        let p3 = self.coefficient(4).expect("a_4 exists") / a1;
        p1 + (2.0 * p2 - p1 * p1) * theta
            + (3.0 * p3 - 3.0 * p1 * p2 + p1 * p1 * p1) * theta * theta
    }

    /// `1/theta^2 + C''(theta)/C(theta) - (C'(theta)/C(theta))^2` for
    /// `theta != 0`; equals `(ln P)''(theta)` and is evaluated that way near
    /// zero where the direct form cancels catastrophically.
    pub(crate) fn log_c_curvature(&self, theta: f64) -> f64 {
        if theta.abs() >= 1e-3 {
            let c0 = self.series_value_unchecked(theta, 0);
            let c1 = self.series_value_unchecked(theta, 1);
            let c2 = self.series_value_unchecked(theta, 2);
            let r = c1 / c0;
            return 1.0 / (theta * theta) + c2 / c0 - r * r;
        }
        let a1 = self.a1();
        let p1 = self.a2() / a1;
        let p2 = self.a3() / a1;
        let p3 = self.coefficient(4).expect("a_4 exists") / a1;
        let p4 = self.coefficient(5).expect("a_5 exists") / a1;
        (2.0 * p2 - p1 * p1)
            + (6.0 * p3 - 6.0 * p1 * p2 + 2.0 * p1 * p1 * p1) * theta
            + (12.0 * p4 - 12.0 * p1 * p3 - 6.0 * p2 * p2 + 12.0 * p1 * p1 * p2
                - 3.0 * p1 * p1 * p1 * p1)
                * theta
                * theta
    }

    /// Inverse of `C` over the open theta domain. Closed form except for the
    /// negative binomial family, which is bracketed and bisected.
    pub fn series_inverse(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Domain(format!("inverse argument must be finite, got {u}")));
        }
        let image_err = || {
            Error::Domain(format!(
                "u = {u} is outside the image of C for the {} family",
                self.family.name()
            ))
        };
        match self.family {
            SeriesFamily::Poisson => {
                if u <= -1.0 {
                    return Err(image_err());
                }
                Ok(u.ln_1p())
            }
            SeriesFamily::Logarithmic => {
                let lo = if self.extended {
                    f64::NEG_INFINITY
                } else {
                    -(2f64.ln())
                };
                if u <= lo {
                    return Err(image_err());
                }
                Ok(-(-u).exp_m1())
            }
            SeriesFamily::Geometric => {
                let lo = if self.extended { -1.0 } else { -0.5 };
                if u <= lo {
                    return Err(image_err());
                }
                Ok(u / (1.0 + u))
            }
            SeriesFamily::Binomial { m } => {
                if u <= -1.0 {
                    return Err(image_err());
                }
                Ok((u.ln_1p() / f64::from(m)).exp_m1())
            }
            SeriesFamily::LogarithmicII => Ok((u / 2.0).tanh()),
            SeriesFamily::NegativeBinomial { .. } => {
                let s_star = self.s_star();
                let c_lo = self.series_value_unchecked(s_star, 0);
                if u <= c_lo {
                    return Err(image_err());
                }
                if u == 0.0 {
                    return Ok(0.0);
                }
                // Bracket grown geometrically from 0 toward the relevant endpoint.
                let (mut lo, mut hi) = if u > 0.0 {
                    let mut hi = 0.5;
                    while self.series_value_unchecked(hi, 0) < u {
                        hi = 0.5 * (hi + 1.0);
                        if 1.0 - hi < 1e-15 {
                            break;
                        }
                    }
                    (0.0, hi)
                } else {
                    let mut lo = 0.5 * s_star;
                    while self.series_value_unchecked(lo, 0) > u {
                        lo = 0.5 * (lo + s_star);
                        if lo - s_star < 1e-15 {
                            break;
                        }
                    }
                    (lo, 0.0)
                };
                // Bisect to floating-point resolution.
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.series_value_unchecked(mid, 0) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }

    /// Probability function of the zero-truncated count law,
    /// `p(n) = a_n theta^n / C(theta)` for `theta` in `(0, s)`.
    pub fn ps_pf(&self, theta: f64, n: u64) -> Result<f64> {
        if n < 1 {
            return Err(Error::Domain(format!("count must be >= 1, got {n}")));
        }
        self.check_theta_positive(theta)?;
        let Some(ln_a) = self.ln_coefficient(n) else {
            return Ok(0.0);
        };
        let ln_c = self.series_value_unchecked(theta, 0).ln();
        Ok((ln_a + n as f64 * theta.ln() - ln_c).exp())
    }

    fn check_theta_positive(&self, theta: f64) -> Result<()> {
        self.check_theta(theta)?;
        if theta <= 0.0 {
            return Err(Error::Domain(format!(
                "the count law requires theta > 0, got {theta}"
            )));
        }
        Ok(())
    }

    /// One draw from the zero-truncated count law, by inverse transform.
    /// Deterministic for a fixed seed.
    pub fn ps_sample(&self, theta: f64, seed: u64) -> Result<u64> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.ps_sample_with(theta, &mut rng)
    }

    /// As [`ps_sample`](Self::ps_sample) with a caller-owned generator.
    pub fn ps_sample_with<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<u64> {
        self.check_theta_positive(theta)?;
        let u: f64 = rng.random();
        let ln_c = self.series_value_unchecked(theta, 0).ln();
        let ln_theta = theta.ln();
        let mut cum = 0.0;
        let mut n: u64 = 0;
        loop {
            n += 1;
            if let Some(ln_a) = self.ln_coefficient(n) {
                cum += (ln_a + n as f64 * ln_theta - ln_c).exp();
            }
            if u < cum {
                return Ok(n);
            }
            if cum >= SAMPLE_CUM_CAP {
                return Err(Error::NonConvergence(format!(
                    "count sampler exhausted {SAMPLE_CUM_CAP} of the mass at n = {n} \
                     (theta = {theta} too close to the series radius)"
                )));
            }
        }
    }

    /// The map `t(theta)` carrying `theta < 0` to the positive count
    /// parameter of the parallel-system form. Known in closed form for the
    /// Poisson, geometric, and logarithmic families only.
    pub fn parallel_map(&self, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        if theta >= 0.0 {
            return Err(Error::Domain(format!(
                "the parallel-system form applies to theta < 0, got {theta}"
            )));
        }
        match self.family {
            SeriesFamily::Poisson => Ok(-theta),
            SeriesFamily::Geometric | SeriesFamily::Logarithmic => Ok(theta / (theta - 1.0)),
            other => Err(Error::NoParallelForm(other.name())),
        }
    }
}

/// All six families at convenient small-m choices; handy for sweep tests.
pub fn all_families() -> Vec<SeriesFamily> {
    vec![
        SeriesFamily::Poisson,
        SeriesFamily::Logarithmic,
        SeriesFamily::Geometric,
        SeriesFamily::Binomial { m: 3 },
        SeriesFamily::NegativeBinomial { m: 2 },
        SeriesFamily::LogarithmicII,
    ]
}

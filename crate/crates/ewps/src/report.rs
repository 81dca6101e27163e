//! Fit report serialization.
//!
//! The report is a JSON object with top-level keys `family`, `link`, `n`,
//! `k`, `estimates`, `loglik`, `aic`, `lr`, `converged`, `boundary_flag`,
//! and `profile`, plus enough bookkeeping (`covariance`, column names,
//! intercept flag) that quantile and residual runs can reuse a stored fit
//! without refitting. Floating-point numbers are written with 17 significant
//! digits so a parsed report reproduces the exact values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitResult, WeibullFit};
use crate::likelihood::Link;
use crate::power_series::{PowerSeriesSpec, SeriesFamily};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LrReport {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProfilePoint {
    pub theta: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitReport {
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m: Option<u32>,
    #[serde(default)]
    pub extended: bool,
    pub link: String,
    pub intercept: bool,
    pub response_column: String,
    pub covariate_columns: Vec<String>,
    pub n: usize,
    pub k: usize,
    pub estimates: Vec<Estimate>,
    pub loglik: f64,
    pub aic: f64,
    /// Likelihood-ratio test against the Weibull restriction; absent for a
    /// Weibull fit (it is its own null model).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lr: Option<LrReport>,
    pub converged: bool,
    pub boundary_flag: bool,
    pub profile: Vec<ProfilePoint>,
    /// Row-major covariance of the estimates, when available.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl FitReport {
    /// Assemble a report from a full fit.
    pub fn from_fit(
        fit: &FitResult,
        response_column: &str,
        covariate_columns: &[String],
        intercept: bool,
        lr: Option<LrReport>,
    ) -> Self {
        let family = fit.params.spec.family();
        let names = estimate_names(covariate_columns, intercept, true);
        let k = fit.params.beta.len();
        let mut values: Vec<f64> = fit.params.beta.iter().copied().collect();
        values.push(fit.params.alpha);
        values.push(fit.params.theta);
        let estimates = names
            .into_iter()
            .zip(values)
            .enumerate()
            .map(|(j, (name, value))| Estimate {
                name,
                value,
                se: fit.standard_errors.as_ref().map(|se| se[j]),
            })
            .collect();
        FitReport {
            family: family.name().to_string(),
            m: family.replicate_count(),
            extended: fit.params.spec.is_extended(),
            link: fit.link.name().to_string(),
            intercept,
            response_column: response_column.to_string(),
            covariate_columns: covariate_columns.to_vec(),
            n: 0, // filled by the caller, which knows the data
            k,
            estimates,
            loglik: fit.loglik,
            aic: fit.aic,
            lr,
            converged: fit.converged,
            boundary_flag: fit.boundary,
            profile: fit
                .profile
                .iter()
                .map(|(theta, loglik)| ProfilePoint {
                    theta: *theta,
                    loglik: *loglik,
                })
                .collect(),
            covariance: fit
                .covariance
                .as_ref()
                .map(|c| (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect()),
        }
    }

    /// Assemble a report from the restricted Weibull fit (no `theta` row, no
    /// likelihood-ratio block).
    pub fn from_weibull_fit(
        fit: &WeibullFit,
        response_column: &str,
        covariate_columns: &[String],
        intercept: bool,
    ) -> Self {
        let names = estimate_names(covariate_columns, intercept, false);
        let k = fit.beta.len();
        let mut values: Vec<f64> = fit.beta.iter().copied().collect();
        values.push(fit.alpha);
        let estimates = names
            .into_iter()
            .zip(values)
            .enumerate()
            .map(|(j, (name, value))| Estimate {
                name,
                value,
                se: fit.standard_errors.as_ref().map(|se| se[j]),
            })
            .collect();
        FitReport {
            family: "weibull".to_string(),
            m: None,
            extended: false,
            link: fit.link.name().to_string(),
            intercept,
            response_column: response_column.to_string(),
            covariate_columns: covariate_columns.to_vec(),
            n: 0,
            k,
            estimates,
            loglik: fit.loglik,
            aic: fit.aic,
            lr: None,
            converged: fit.converged,
            boundary_flag: false,
            profile: Vec::new(),
            covariance: fit
                .covariance
                .as_ref()
                .map(|c| (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect()),
        }
    }

    pub fn is_weibull(&self) -> bool {
        self.family == "weibull"
    }

    /// The family spec recorded in the report; `None` for a Weibull report.
    pub fn spec(&self) -> Result<Option<PowerSeriesSpec>> {
        if self.is_weibull() {
            return Ok(None);
        }
        let family = SeriesFamily::parse(&self.family, self.m)?;
        let spec = if self.extended {
            PowerSeriesSpec::extended(family)?
        } else {
            PowerSeriesSpec::new(family)?
        };
        Ok(Some(spec))
    }

    pub fn link(&self) -> Result<Link> {
        Link::parse(&self.link)
    }

    /// Coefficient estimates in design order, then the shape, then (for a
    /// non-Weibull report) the count parameter.
    pub fn coefficient_values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.value).collect()
    }

    /// Serialize with 17-significant-digit floats.
    pub fn to_json(&self) -> Result<String> {
        to_json_17(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("could not parse fit report: {e}")))
    }
}

fn estimate_names(covariates: &[String], intercept: bool, with_theta: bool) -> Vec<String> {
    let mut names = Vec::new();
    if intercept {
        names.push("(intercept)".to_string());
    }
    names.extend(covariates.iter().cloned());
    names.push("alpha".to_string());
    if with_theta {
        names.push("theta".to_string());
    }
    names
}

/// Serialize any value to JSON writing every float with 17 significant
/// digits (scientific form), which round-trips `f64` exactly.
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut serializer =
        serde_json::Serializer::with_formatter(&mut out, SignificantDigitsFormatter);
    value
        .serialize(&mut serializer)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    String::from_utf8(out).map_err(|e| Error::InvalidInput(format!("invalid utf-8: {e}")))
}

struct SignificantDigitsFormatter;

impl serde_json::ser::Formatter for SignificantDigitsFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> FitReport {
        FitReport {
            family: "geometric".to_string(),
            m: None,
            extended: false,
            link: "log".to_string(),
            intercept: true,
            response_column: "strength".to_string(),
            covariate_columns: vec!["length".to_string(), "log_diameter".to_string()],
            n: 225,
            k: 3,
            estimates: vec![
                Estimate {
                    name: "(intercept)".to_string(),
                    value: 0.0982,
                    se: Some(0.1491),
                },
                Estimate {
                    name: "alpha".to_string(),
                    value: 5.052,
                    se: Some(0.3679),
                },
            ],
            loglik: -118.1125,
            aic: 246.225,
            lr: Some(LrReport {
                statistic: 17.2322,
                p_value: 3.3e-5,
            }),
            converged: true,
            boundary_flag: false,
            profile: vec![ProfilePoint {
                theta: 0.9455,
                loglik: -118.1125,
            }],
            covariance: Some(vec![vec![0.1, 0.0], vec![0.0, 0.2]]),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let report = sample_report();
        let text = report.to_json().unwrap();
        let back = FitReport::from_json(&text).unwrap();
        assert_eq!(report, back);
        // every required key is present
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "family",
            "link",
            "n",
            "k",
            "estimates",
            "loglik",
            "aic",
            "lr",
            "converged",
            "boundary_flag",
            "profile",
        ] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn floats_carry_17_significant_digits() {
        let text = to_json_17(&std::f64::consts::PI).unwrap();
        assert_eq!(text, "3.1415926535897931e0");
        let parsed: f64 = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, std::f64::consts::PI);
        // a value that needs all the digits
        let awkward = 0.1 + 0.2;
        let parsed: f64 = serde_json::from_str(&to_json_17(&awkward).unwrap()).unwrap();
        assert_eq!(parsed, awkward);
    }

    #[test]
    fn weibull_report_omits_lr() {
        let mut report = sample_report();
        report.family = "weibull".to_string();
        report.lr = None;
        let text = report.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value.get("lr").is_none());
        assert!(report.is_weibull());
        assert!(report.spec().unwrap().is_none());
    }

    #[test]
    fn spec_round_trips_family() {
        let mut report = sample_report();
        report.family = "binomial".to_string();
        report.m = Some(4);
        let spec = report.spec().unwrap().unwrap();
        assert_eq!(spec.family().name(), "binomial");
        assert_eq!(spec.family().replicate_count(), Some(4));
    }
}

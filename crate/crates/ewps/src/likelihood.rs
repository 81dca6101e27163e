//! Regression data model, link functions, and exact evaluation of the total
//! log-likelihood, score vector, and observed information matrix.
//!
//! Each response `Y_i` follows the compound lifetime law with its own scale
//! `lambda_i = h^{-1}(x_i' beta)` and shared `(alpha, theta)`. The likelihood
//! constant is fixed at `-sum(log y_i)` so the value is the exact sum of log
//! densities; information criteria are then comparable across families and
//! against external Weibull fits.
//!
//! Parameter ordering everywhere is `(beta_1, ..., beta_k, alpha, theta)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::power_series::PowerSeriesSpec;

pub use crate::dist::THETA_ZERO_TOL;

/// Link between the positive scale parameter and the linear predictor.
/// Only the log link ships built in; the interface carries the inverse and
/// its first two derivatives so other links can be added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Link {
    #[default]
    Log,
}

impl Link {
    /// `(lambda, d lambda / d eta, d^2 lambda / d eta^2)` at the predictor.
    pub fn derivatives(&self, eta: f64) -> (f64, f64, f64) {
        match self {
            Link::Log => {
                let l = eta.exp();
                (l, l, l)
            }
        }
    }

    /// `lambda = h^{-1}(eta)`.
    pub fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
        }
    }

    /// `eta = h(lambda)`.
    pub fn apply(&self, lambda: f64) -> f64 {
        match self {
            Link::Log => lambda.ln(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Link::Log => "log",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "log" => Ok(Link::Log),
            other => Err(Error::InvalidParameter(format!("unknown link '{other}'"))),
        }
    }
}

/// Response vector, covariate matrix, and link choice.
#[derive(Debug, Clone)]
pub struct RegressionData {
    y: Vec<f64>,
    x: DMatrix<f64>,
    link: Link,
}

impl RegressionData {
    /// Build and validate: `y_i > 0`, finite covariates, `n > k >= 1`.
    /// Column rank of the design matrix is checked at fit time.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, link: Link) -> Result<Self> {
        let n = y.len();
        let k = x.ncols();
        if x.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "response has {n} rows but the design matrix has {}",
                x.nrows()
            )));
        }
        if k == 0 {
            return Err(Error::InvalidInput(
                "the design matrix has no columns".into(),
            ));
        }
        if n <= k {
            return Err(Error::InvalidInput(format!(
                "need more observations than coefficients: n = {n}, k = {k}"
            )));
        }
        for (i, v) in y.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "response must be positive and finite; row {i} has {v}"
                )));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "the design matrix contains non-finite entries".into(),
            ));
        }
        Ok(RegressionData { y, x, link })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn link(&self) -> Link {
        self.link
    }
}

/// Full parameter vector `Theta = (beta, alpha, theta)` with the family spec.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionParams {
    pub beta: DVector<f64>,
    pub alpha: f64,
    pub theta: f64,
    pub spec: PowerSeriesSpec,
}

impl RegressionParams {
    pub fn new(
        beta: DVector<f64>,
        alpha: f64,
        theta: f64,
        spec: PowerSeriesSpec,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "shape must be positive and finite, got {alpha}"
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter(
                "coefficients must be finite".to_string(),
            ));
        }
        spec.check_theta(theta)?;
        Ok(RegressionParams {
            beta,
            alpha,
            theta,
            spec,
        })
    }

    /// Number of free parameters, `k + 2`.
    pub fn len(&self) -> usize {
        self.beta.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Whether evaluation routes through the exact `theta = 0` branch.
    pub fn theta_is_zero(&self) -> bool {
        self.theta.abs() < THETA_ZERO_TOL
    }
}

/// Per-observation quantities shared by the likelihood, score, and
/// information evaluations. At `theta = 0`: `l1 = l2 = l3 = 0` and
/// `ystar_i = w_i - 1` exactly.
#[derive(Debug, Clone)]
pub struct ObsWorkspace {
    /// Fitted scales `lambda_i`.
    pub lambda: Vec<f64>,
    /// `(d lambda / d eta) / lambda`, the diagonal written `D1`.
    pub d1: Vec<f64>,
    /// `(d^2 lambda / d eta^2) / lambda`, the diagonal written `D7`.
    pub d7: Vec<f64>,
    /// `w_i = (y_i / lambda_i)^alpha`, the diagonal written `D5`.
    pub w: Vec<f64>,
    /// `log w_i`, the diagonal written `D2`.
    pub log_w: Vec<f64>,
    /// `exp(-w_i)`, the diagonal written `D4`.
    pub surv: Vec<f64>,
    /// Per-observation count-law log factor in the log likelihood.
    pub l1: Vec<f64>,
    /// `theta e^{-w} C''(theta e^{-w}) / C'(theta e^{-w})`, the diagonal `D3`.
    pub l2: Vec<f64>,
    /// `[C'''/C' - (C''/C')^2](theta e^{-w})^2`, the diagonal `D6`.
    pub l3: Vec<f64>,
    /// `l2 / theta`, held separately because it stays finite as theta -> 0.
    pub l2_over_theta: Vec<f64>,
    /// `l3 / theta^2`, likewise finite as theta -> 0.
    pub l3_over_theta2: Vec<f64>,
    /// `w_i (1 + l2_i) - 1`, the vector `Y*` and diagonal `D8`.
    pub ystar: Vec<f64>,
    /// Whether the zero-theta branch applies.
    pub theta_zero: bool,
}

impl ObsWorkspace {
    pub fn build(params: &RegressionParams, data: &RegressionData) -> Result<Self> {
        if params.beta.len() != data.k() {
            return Err(Error::InvalidInput(format!(
                "coefficient length {} does not match design columns {}",
                params.beta.len(),
                data.k()
            )));
        }
        let n = data.n();
        let theta = params.theta;
        let theta_zero = params.theta_is_zero();
        let spec = &params.spec;
        let ln_theta_over_c = if theta_zero {
            0.0
        } else {
            let c_theta = spec.series_value_unchecked(theta, 0);
            (theta / c_theta).ln()
        };

        let mut ws = ObsWorkspace {
            lambda: Vec::with_capacity(n),
            d1: Vec::with_capacity(n),
            d7: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
            log_w: Vec::with_capacity(n),
            surv: Vec::with_capacity(n),
            l1: Vec::with_capacity(n),
            l2: Vec::with_capacity(n),
            l3: Vec::with_capacity(n),
            l2_over_theta: Vec::with_capacity(n),
            l3_over_theta2: Vec::with_capacity(n),
            ystar: Vec::with_capacity(n),
            theta_zero,
        };
        for i in 0..n {
            let eta = data
                .x
                .row(i)
                .iter()
                .zip(params.beta.iter())
                .map(|(x, b)| x * b)
                .sum();
            let (lambda, dl, d2l) = data.link.derivatives(eta);
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "fitted scale is not positive at row {i}: lambda = {lambda}"
                )));
            }
            let log_w = params.alpha * (data.y[i].ln() - lambda.ln());
            let w = log_w.exp();
            let surv = (-w).exp();
            // l2/theta = s rho2(u) and l3/theta^2 = s^2 (rho3 - rho2^2) stay
            // finite as theta -> 0, so the score and information pieces that
            // divide by theta are assembled from these instead.
            let (l1, l2ot, l3ot2) = if theta_zero {
                (0.0, 0.0, 0.0)
            } else {
                let u = theta * surv;
                let r2 = spec.ratio_c2_c1(u);
                let r3 = spec.ratio_c3_c1(u);
                (
                    ln_theta_over_c + spec.ln_c_prime(u),
                    surv * r2,
                    surv * surv * (r3 - r2 * r2),
                )
            };
            let l2 = theta * l2ot;
            let l3 = theta * theta * l3ot2;
            ws.lambda.push(lambda);
            ws.d1.push(dl / lambda);
            ws.d7.push(d2l / lambda);
            ws.w.push(w);
            ws.log_w.push(log_w);
            ws.surv.push(surv);
            ws.l1.push(l1);
            ws.l2.push(l2);
            ws.l3.push(l3);
            ws.l2_over_theta.push(l2ot);
            ws.l3_over_theta2.push(l3ot2);
            ws.ystar.push(w * (1.0 + l2) - 1.0);
        }
        Ok(ws)
    }
}

/// Total log-likelihood, including the data-only constant `-sum(log y_i)`.
pub fn loglik(params: &RegressionParams, data: &RegressionData) -> Result<f64> {
    let ws = ObsWorkspace::build(params, data)?;
    Ok(loglik_from_workspace(params, data, &ws))
}

pub(crate) fn loglik_from_workspace(
    params: &RegressionParams,
    data: &RegressionData,
    ws: &ObsWorkspace,
) -> f64 {
    let n = data.n() as f64;
    let mut total = n * params.alpha.ln();
    for i in 0..data.n() {
        total += ws.log_w[i] - ws.w[i] + ws.l1[i] - data.y[i].ln();
    }
    total
}

/// Analytic score vector `(d ell / d beta, d ell / d alpha, d ell / d theta)`.
pub fn score(params: &RegressionParams, data: &RegressionData) -> Result<DVector<f64>> {
    let ws = ObsWorkspace::build(params, data)?;
    Ok(score_from_workspace(params, data, &ws))
}

pub(crate) fn score_from_workspace(
    params: &RegressionParams,
    data: &RegressionData,
    ws: &ObsWorkspace,
) -> DVector<f64> {
    let n = data.n();
    let k = data.k();
    let alpha = params.alpha;
    let theta = params.theta;
    let spec = &params.spec;
    let mut u = DVector::zeros(k + 2);

    for j in 0..k {
        let mut acc = 0.0;
        for i in 0..n {
            acc += data.x[(i, j)] * ws.d1[i] * ws.ystar[i];
        }
        u[j] = alpha * acc;
    }

    let mut alpha_acc = 0.0;
    for i in 0..n {
        alpha_acc += ws.log_w[i] * ws.ystar[i];
    }
    u[k] = n as f64 / alpha - alpha_acc / alpha;

    u[k + 1] = if ws.theta_zero {
        let ratio = spec.a2() / spec.a1();
        ratio * ws.surv.iter().map(|s| 2.0 * s - 1.0).sum::<f64>()
    } else {
        // n/theta - n C'/C + (1/theta) sum l2, with the 1/theta poles
        // cancelled analytically
        let l2ot_sum: f64 = ws.l2_over_theta.iter().sum();
        -(n as f64) * spec.log_c_slope(theta) + l2ot_sum
    };
    u
}

/// Observed information `K_n = -d^2 ell / d Theta d Theta'`, symmetric
/// `(k+2) x (k+2)`, with the analytic `theta = 0` branch limits.
pub fn observed_info(params: &RegressionParams, data: &RegressionData) -> Result<DMatrix<f64>> {
    let ws = ObsWorkspace::build(params, data)?;
    Ok(observed_info_from_workspace(params, data, &ws))
}

pub(crate) fn observed_info_from_workspace(
    params: &RegressionParams,
    data: &RegressionData,
    ws: &ObsWorkspace,
) -> DMatrix<f64> {
    let n = data.n();
    let k = data.k();
    let alpha = params.alpha;
    let theta = params.theta;
    let spec = &params.spec;
    let a1 = spec.a1();
    let a2 = spec.a2();
    let a3 = spec.a3();
    let dim = k + 2;
    let mut h = DMatrix::zeros(dim, dim);

    // beta-beta block: per-observation weight
    //   alpha { d7 ystar - d1^2 [ ystar + alpha(ystar + 1) - alpha w^2 (l2 + l3) ] }
    for i in 0..n {
        let curv = ws.ystar[i] + alpha * (ws.ystar[i] + 1.0)
            - alpha * ws.w[i] * ws.w[i] * (ws.l2[i] + ws.l3[i]);
        let weight = alpha * (ws.d7[i] * ws.ystar[i] - ws.d1[i] * ws.d1[i] * curv);
        for j in 0..k {
            let xj = data.x[(i, j)];
            for l in j..k {
                h[(j, l)] += weight * xj * data.x[(i, l)];
            }
        }
    }

    // beta-alpha: d1 { ystar + log_w [ (ystar + 1) - w^2 (l2 + l3) ] }
    for i in 0..n {
        let v = ws.d1[i]
            * (ws.ystar[i]
                + ws.log_w[i]
                    * (ws.ystar[i] + 1.0 - ws.w[i] * ws.w[i] * (ws.l2[i] + ws.l3[i])));
        for j in 0..k {
            h[(j, k)] += data.x[(i, j)] * v;
        }
    }

    // alpha-alpha
    let mut tr = 0.0;
    for i in 0..n {
        tr += ws.log_w[i]
            * ws.log_w[i]
            * (ws.ystar[i] + 1.0 - ws.w[i] * ws.w[i] * (ws.l2[i] + ws.l3[i]));
    }
    h[(k, k)] = -(tr + n as f64) / (alpha * alpha);

    // beta-theta and alpha-theta
    if ws.theta_zero {
        let ratio = 2.0 * a2 / a1;
        for i in 0..n {
            let v = ws.d1[i] * ws.surv[i] * ws.w[i];
            for j in 0..k {
                h[(j, k + 1)] += alpha * ratio * data.x[(i, j)] * v;
            }
            h[(k, k + 1)] -= ratio / alpha * ws.log_w[i] * ws.surv[i] * ws.w[i];
        }
    } else {
        for i in 0..n {
            // (l2 + l3)/theta without the division
            let mix = ws.w[i] * (ws.l2_over_theta[i] + theta * ws.l3_over_theta2[i]);
            let v = ws.d1[i] * mix;
            for j in 0..k {
                h[(j, k + 1)] += alpha * data.x[(i, j)] * v;
            }
            h[(k, k + 1)] -= ws.log_w[i] * mix / alpha;
        }
    }

    // theta-theta
    h[(k + 1, k + 1)] = if ws.theta_zero {
        let det_part = n as f64 * (a2 * a2 - 2.0 * a1 * a3) / (a1 * a1);
        let coeff = (6.0 * a1 * a3 - 4.0 * a2 * a2) / (a1 * a1);
        let tr_s2: f64 = ws.surv.iter().map(|s| s * s).sum();
        det_part + coeff * tr_s2
    } else {
        let l3ot2_sum: f64 = ws.l3_over_theta2.iter().sum();
        -(n as f64) * spec.log_c_curvature(theta) + l3ot2_sum
    };

    // mirror the upper triangle and negate
    for j in 0..dim {
        for l in 0..j {
            h[(j, l)] = h[(l, j)];
        }
    }
    -h
}

/// Numerical check of the score-expectation identities under the
/// single-observation law of `W = (Y/lambda)^alpha` (which is free of
/// `lambda` and `alpha`):
///
/// 1. `E[W(1 + L2) - 1] = 0`
/// 2. `E[log W * (W(1 + L2) - 1)] = 1`
/// 3. `E[C''(theta e^-W) e^-W / C'(theta e^-W)] = C'(theta)/C(theta) - 1/theta`
///
/// Returns the three absolute residuals. `quad_points` is the total
/// quadrature node budget (at least 64).
pub fn expectation_identities(params: &RegressionParams, quad_points: usize) -> Result<[f64; 3]> {
    if quad_points < 64 {
        return Err(Error::InvalidInput(format!(
            "need at least 64 quadrature nodes, got {quad_points}"
        )));
    }
    let spec = params.spec;
    let theta = params.theta;
    let theta_zero = params.theta_is_zero();
    let ln_ratio = if theta_zero {
        0.0
    } else {
        (theta / spec.series_value_unchecked(theta, 0)).ln()
    };

    // density of W, via its log
    let f_w = |w: f64| -> f64 {
        if theta_zero {
            (-w).exp()
        } else {
            (ln_ratio - w + spec.ln_c_prime(theta * (-w).exp())).exp()
        }
    };
    let l2_at = |w: f64| -> f64 {
        if theta_zero {
            0.0
        } else {
            let u = theta * (-w).exp();
            u * spec.ratio_c2_c1(u)
        }
    };

    // integrate over w = e^v so the log-w factor in identity 2 stays smooth
    let panels = [-40.0, -20.0, -10.0, -5.0, -2.0, 0.0, 1.3, 2.6, 4.2];
    let nodes_per_panel = (quad_points / (panels.len() - 1)).max(8);
    let (gl_nodes, gl_weights) = gauss_legendre(nodes_per_panel);

    let mut ints = [0.0f64; 3];
    for seg in panels.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (node, wt) in gl_nodes.iter().zip(&gl_weights) {
            let v = mid + half * node;
            let w = v.exp();
            let jac = half * wt * w; // dv measure times dw/dv
            let dens = f_w(w);
            let ystar = w * (1.0 + l2_at(w)) - 1.0;
            ints[0] += jac * dens * ystar;
            ints[1] += jac * dens * v * ystar; // v = log w
            let rho = if theta_zero {
                2.0 * spec.a2() / spec.a1() * (-w).exp()
            } else {
                let u = theta * (-w).exp();
                spec.ratio_c2_c1(u) * (-w).exp()
            };
            ints[2] += jac * dens * rho;
        }
    }

    let rhs3 = if theta_zero {
        spec.a2() / spec.a1()
    } else {
        spec.series_value_unchecked(theta, 1) / spec.series_value_unchecked(theta, 0)
            - 1.0 / theta
    };
    Ok([ints[0].abs(), (ints[1] - 1.0).abs(), (ints[2] - rhs3).abs()])
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 1..=m {
        let mut z = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            pp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i - 1] = -z;
        nodes[n - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i - 1] = w;
        weights[n - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

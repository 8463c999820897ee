//! Moment estimators, log-log slope fits with confidence intervals, and the
//! verdict logic that turns a fitted exponent into a bound check.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Slack, in exponent units, absorbed before a bound is declared violated.
pub const VERDICT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    SatisfiesBound,
    Inconclusive,
    Violates,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::SatisfiesBound => "SATISFIES_BOUND",
            Verdict::Inconclusive => "INCONCLUSIVE",
            Verdict::Violates => "VIOLATES",
        };
        f.write_str(s)
    }
}

/// Pure verdict rule on `(slope, ci, reference)`.
pub fn verdict<T: Real>(slope: T, ci: T, reference: T) -> Verdict {
    let margin = real::<T>(VERDICT_MARGIN);
    if slope - ci >= reference - margin {
        Verdict::SatisfiesBound
    } else if slope + ci < reference - margin {
        Verdict::Violates
    } else {
        Verdict::Inconclusive
    }
}

/// Moment ladder for one quantity: estimates with standard errors per lag.
#[derive(Debug, Clone)]
pub struct MomentReport<T> {
    pub label: String,
    pub order: u32,
    pub lags: Vec<T>,
    pub moments: Vec<T>,
    pub std_errs: Vec<T>,
    pub n_samples: usize,
}

/// Fitted log-log slope with its confidence half-width and the exponents it
/// is judged against.
#[derive(Debug, Clone)]
pub struct SlopeReport<T> {
    pub label: String,
    pub order: u32,
    pub slope: T,
    pub ci: T,
    pub reference: T,
    pub target: T,
    pub verdict: Verdict,
    pub n_samples: usize,
}

impl<T: Real> SlopeReport<T> {
    pub fn new(
        label: impl Into<String>,
        order: u32,
        slope: T,
        ci: T,
        reference: T,
        target: T,
        n_samples: usize,
    ) -> Self {
        SlopeReport {
            label: label.into(),
            order,
            slope,
            ci,
            reference,
            target,
            verdict: verdict(slope, ci, reference),
            n_samples,
        }
    }
}

/// Sample mean of `|x|^order` with its standard error (the leave-one-out
/// jackknife of the mean collapses to sd/sqrt(n)).
pub fn moment_estimate<T: Real>(samples: &[T], order: u32) -> Result<(T, T)> {
    if samples.is_empty() {
        return Err(Error::NoData);
    }
    if order != 2 && order != 4 {
        return Err(Error::InvalidArgument(format!(
            "moment order must be 2 or 4, got {order}"
        )));
    }
    let n = samples.len();
    let nf = real::<T>(n as f64);
    let mut sum = T::zero();
    let mut sum2 = T::zero();
    for &x in samples {
        let v = pow_abs(x, order);
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / nf;
    if n < 2 {
        return Ok((mean, T::zero()));
    }
    let var = ((sum2 - sum * sum / nf) / (nf - T::one())).max(T::zero());
    Ok((mean, (var / nf).sqrt()))
}

#[inline]
fn pow_abs<T: Real>(x: T, order: u32) -> T {
    let a = x.abs();
    match order {
        1 => a,
        2 => a * a,
        4 => {
            let s = a * a;
            s * s
        }
        _ => a.powi(order as i32),
    }
}

/// Moment of a positive variable whose logarithm is Gaussian, estimated in
/// the log domain: `E[X^q] = exp(q mu + q^2 s^2 / 2)` with a delta-method
/// standard error. The right tool for exponential-martingale moments whose
/// plain sample mean is hopeless at high order.
pub fn log_domain_moment<T: Real>(samples: &[T], order: u32) -> Result<(T, T)> {
    if samples.len() < 2 {
        return Err(Error::NoData);
    }
    if samples.iter().any(|x| !(*x > T::zero())) {
        return Err(Error::InvalidArgument(
            "log-domain moments need strictly positive samples".into(),
        ));
    }
    let n = samples.len();
    let nf = real::<T>(n as f64);
    let mut sum = T::zero();
    for &x in samples {
        sum += x.ln();
    }
    let mu = sum / nf;
    let mut ss = T::zero();
    for &x in samples {
        let d = x.ln() - mu;
        ss += d * d;
    }
    let s2 = ss / (nf - T::one());
    let q = real::<T>(order as f64);
    let est = (q * mu + q * q * s2 / real::<T>(2.0)).exp();
    // Var(log est) = q^2 s^2/n + q^4 Var(s^2)/4, Var(s^2) = 2 s^4/(n-1)
    let var_log =
        q * q * s2 / nf + q * q * q * q * s2 * s2 / (real::<T>(2.0) * (nf - T::one()));
    Ok((est, est * var_log.sqrt()))
}

/// Ordinary least squares of `ln(moment)` on `ln(lag)`.
pub fn fit_loglog<T: Real>(lags: &[T], moments: &[T]) -> Result<(T, T)> {
    if lags.len() != moments.len() {
        return Err(Error::ShapeError(format!(
            "{} lags vs {} moments",
            lags.len(),
            moments.len()
        )));
    }
    if lags.len() < 2 {
        return Err(Error::InsufficientLags(lags.len()));
    }
    let n = real::<T>(lags.len() as f64);
    let xs: Vec<T> = lags.iter().map(|l| l.ln()).collect();
    let ys: Vec<T> = moments.iter().map(|m| m.ln()).collect();
    let xbar = xs.iter().copied().sum::<T>() / n;
    let ybar = ys.iter().copied().sum::<T>() / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (*x - xbar) * (*x - xbar);
        sxy += (*x - xbar) * (*y - ybar);
    }
    if sxx == T::zero() {
        return Err(Error::InvalidArgument("degenerate lag set".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, ybar - slope * xbar))
}

/// 97.5% Student quantile for small residual degrees of freedom.
fn t_quantile(df: usize) -> f64 {
    const TABLE: [f64; 10] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    ];
    match df {
        0 => f64::INFINITY,
        d if d <= 10 => TABLE[d - 1],
        d if d <= 20 => 2.09,
        _ => 1.96,
    }
}

/// Slope from bare `(lag, moment)` points: OLS with a residual t-interval
/// (zero half-width for exact power-law data); needs >= 3 lags.
pub fn slope_from_moments<T: Real>(
    label: impl Into<String>,
    order: u32,
    lags: &[T],
    moments: &[T],
    reference: T,
    target: T,
) -> Result<SlopeReport<T>> {
    if lags.len() < 3 {
        return Err(Error::InsufficientLags(lags.len()));
    }
    let (slope, intercept) = fit_loglog(lags, moments)?;
    let n = lags.len();
    let xs: Vec<T> = lags.iter().map(|l| l.ln()).collect();
    let xbar = xs.iter().copied().sum::<T>() / real::<T>(n as f64);
    let mut sxx = T::zero();
    let mut ssr = T::zero();
    for (x, m) in xs.iter().zip(moments) {
        sxx += (*x - xbar) * (*x - xbar);
        let r = m.ln() - (intercept + slope * *x);
        ssr += r * r;
    }
    let df = n - 2;
    let se = (ssr / real::<T>(df as f64) / sxx).sqrt();
    let ci = real::<T>(t_quantile(df)) * se;
    Ok(SlopeReport::new(label, order, slope, ci, reference, target, n))
}

/// Slope from replicated samples: `samples[lag][replica]` holds one
/// increment observation per replica (already pooled if pooling applies).
/// The point estimate is OLS on the per-lag means of `|x|^order`; the
/// confidence half-width is 1.96 times the delete-one-replica jackknife
/// standard error, which respects cross-lag correlation.
pub fn slope_from_replicas<T: Real>(
    label: impl Into<String>,
    order: u32,
    lags: &[T],
    samples: &[Vec<T>],
    reference: T,
    target: T,
) -> Result<SlopeReport<T>> {
    let n_lag = lags.len();
    if n_lag < 3 {
        return Err(Error::InsufficientLags(n_lag));
    }
    if samples.len() != n_lag {
        return Err(Error::ShapeError(format!(
            "{} lag rows for {n_lag} lags",
            samples.len()
        )));
    }
    let n_rep = samples[0].len();
    if n_rep < 3 {
        return Err(Error::NoData);
    }
    if samples.iter().any(|row| row.len() != n_rep) {
        return Err(Error::ShapeError("ragged replica matrix".into()));
    }
    let powered: Vec<Vec<T>> = samples
        .iter()
        .map(|row| row.iter().map(|x| pow_abs(*x, order)).collect())
        .collect();
    let sums: Vec<T> = powered
        .iter()
        .map(|row| row.iter().copied().sum::<T>())
        .collect();
    let nf = real::<T>(n_rep as f64);
    let means: Vec<T> = sums.iter().map(|s| *s / nf).collect();
    let (slope, _) = fit_loglog(lags, &means)?;

    // delete-one jackknife of the fitted slope
    let mut pseudo = Vec::with_capacity(n_rep);
    let nf1 = nf - T::one();
    let mut loo = vec![T::zero(); n_lag];
    for k in 0..n_rep {
        for l in 0..n_lag {
            loo[l] = (sums[l] - powered[l][k]) / nf1;
        }
        let (s_k, _) = fit_loglog(lags, &loo)?;
        pseudo.push(s_k);
    }
    let pbar = pseudo.iter().copied().sum::<T>() / nf;
    let mut ssq = T::zero();
    for p in &pseudo {
        ssq += (*p - pbar) * (*p - pbar);
    }
    let se = (nf1 / nf * ssq).sqrt();
    let ci = real::<T>(1.96) * se;
    Ok(SlopeReport::new(
        label, order, slope, ci, reference, target, n_rep,
    ))
}

//! The typical-particle SDE in a frozen sheet environment and its first and
//! second derivatives with respect to the driving Brownian motion.
//!
//! The Euler flow is `xi[i+1] = xi[i] + dB[i] + sum_j h(y_j - xi[i]) dW[i][j]`.
//! Its derivative with respect to the increment at step `theta` solves a
//! linear recursion whose continuum limit is the stochastic exponential of
//! the negated h'-slice martingale:
//!
//! `D1[theta] = exp(-(M[theta+1]) - Q[theta+1]/2)`
//!
//! where `M` and `Q` are suffix sums of the per-step h' slices and of the
//! pathwise discrete quadratic variation `||h'||^2_disc(xi_i) dt`. Using the
//! pathwise `Q` makes `E[D1] = 1` exact in distribution at the discrete
//! level. The second derivative factorizes as
//!
//! `D2[eta][theta] = D1[theta] * D1[eta] * SF[max(eta,theta)+1]`
//!
//! with `SF` a suffix sum of h''-slices weighted by intermediate first
//! derivatives, which collapses every divergence-related contraction to
//! O(n) per path.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::sheet::{sheet_slices, BrownianPath, SheetView};
use crate::SmoothingKernel;

/// Dense second-derivative matrices above this step count are refused.
pub const MAX_DENSE_STEPS: usize = 2048;

/// Which discrete realization of the first derivative to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeForm {
    /// Closed-form stochastic exponential (primary).
    #[default]
    Exponential,
    /// Euler recursion `D[i+1] = D[i] * (1 - s1[i])`: the exact gradient of
    /// the discrete flow, kept for convergence studies.
    EulerRecursion,
}

/// A realized trajectory plus everything needed for its derivatives.
#[derive(Debug, Clone)]
pub struct ParticlePath<T> {
    pub r_index: usize,
    pub t_index: usize,
    pub start: T,
    /// Positions at time indices `r..=t`.
    pub positions: Vec<T>,
    /// Suffix sums of the h' slices: `m_suffix[j] = sum_{i>=j} s1[i]`,
    /// `m_suffix[k] = 0` (local step indexing).
    pub m_suffix: Vec<T>,
    /// Suffix sums of the pathwise quadratic variation
    /// `q[i] = ||h'||^2_disc(xi_i) * dt`.
    pub q_suffix: Vec<T>,
    /// h''-slice per step.
    pub s2: Vec<T>,
    /// h-slice per step (the drift contribution of the sheet).
    pub s0: Vec<T>,
    /// Brownian increments over `[r, t)`.
    pub db: Vec<T>,
    /// Total order-0 sheet integral along the path.
    pub i0: T,
    pub dt: T,
    pub env_seed: u64,
    pub bm_seed: u64,
}

impl<T: Real> ParticlePath<T> {
    /// Number of increments (grid steps) the path covers.
    pub fn steps(&self) -> usize {
        self.t_index - self.r_index
    }

    /// Terminal position.
    pub fn end(&self) -> T {
        *self.positions.last().unwrap()
    }

    /// Per-step h' slice, recovered from the suffix sums.
    #[inline]
    pub fn s1(&self, j: usize) -> T {
        self.m_suffix[j] - self.m_suffix[j + 1]
    }
}

/// Euler-Maruyama integration of the particle from `(r_index, x)` to
/// `t_index` in the given environment, with the backward pass for the
/// martingale suffix sums done in the same call.
pub fn simulate_path<T: Real>(
    kernel: &SmoothingKernel<T>,
    sheet: &impl SheetView<T>,
    bm: &BrownianPath<T>,
    r_index: usize,
    x: T,
    t_index: usize,
) -> Result<ParticlePath<T>> {
    let grid = sheet.grid();
    if r_index >= t_index || t_index > grid.n_t {
        return Err(Error::InvalidArgument(format!(
            "need r < t <= n_t, got r={r_index}, t={t_index}, n_t={}",
            grid.n_t
        )));
    }
    // The sheet is identically zero outside [x_min, x_max]; kernel windows
    // that stick out are clipped (and the pathwise quadratic variation picks
    // up the clipped norm, so the martingale corrections stay exact). A
    // particle leaving the truncated domain itself is an error: the noise
    // model no longer covers it.
    let lo = grid.x_min;
    let hi = grid.x_max;
    if !(x >= lo && x <= hi) {
        return Err(Error::InvalidArgument(format!(
            "start {x} outside the domain [{lo}, {hi}]"
        )));
    }
    let k = t_index - r_index;
    let dt = grid.dt();
    let mut positions = Vec::with_capacity(k + 1);
    let mut s1 = Vec::with_capacity(k);
    let mut s2 = Vec::with_capacity(k);
    let mut s0 = Vec::with_capacity(k);
    let mut q = Vec::with_capacity(k);
    let mut db = Vec::with_capacity(k);
    let mut xi = x;
    let mut i0 = T::zero();
    positions.push(xi);
    for step in 0..k {
        let i = r_index + step;
        let (sl0, sl1, sl2, h1sq) = sheet_slices(sheet, kernel, i, xi);
        s0.push(sl0);
        s1.push(sl1);
        s2.push(sl2);
        q.push(h1sq * dt);
        i0 += sl0;
        let dbi = bm.increments[i];
        db.push(dbi);
        xi = xi + dbi + sl0;
        if !(xi >= lo && xi <= hi) {
            return Err(Error::DomainExit {
                step: i + 1,
                position: xi.to_f64_lossy(),
            });
        }
        positions.push(xi);
    }
    let mut m_suffix = vec![T::zero(); k + 1];
    let mut q_suffix = vec![T::zero(); k + 1];
    for j in (0..k).rev() {
        m_suffix[j] = m_suffix[j + 1] + s1[j];
        q_suffix[j] = q_suffix[j + 1] + q[j];
    }
    Ok(ParticlePath {
        r_index,
        t_index,
        start: x,
        positions,
        m_suffix,
        q_suffix,
        s2,
        s0,
        db,
        i0,
        dt,
        env_seed: sheet.seed_id(),
        bm_seed: bm.seed_id,
    })
}

/// `D1[theta]` for `theta` over the increments `[r, t)`; strictly positive
/// in the exponential form.
pub fn first_derivative<T: Real>(path: &ParticlePath<T>, form: DerivativeForm) -> Vec<T> {
    let k = path.steps();
    let mut d1 = vec![T::zero(); k];
    match form {
        DerivativeForm::Exponential => {
            let half = real::<T>(0.5);
            for theta in 0..k {
                d1[theta] =
                    (-path.m_suffix[theta + 1] - half * path.q_suffix[theta + 1]).exp();
            }
        }
        DerivativeForm::EulerRecursion => {
            let mut acc = T::one();
            for theta in (0..k).rev() {
                d1[theta] = acc;
                acc *= T::one() - path.s1(theta);
            }
        }
    }
    d1
}

/// Dense second-derivative matrix `D2[eta][theta]`, row-major `k x k`.
#[derive(Debug, Clone)]
pub struct SecondDerivative<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Real> SecondDerivative<T> {
    #[inline]
    pub fn get(&self, eta: usize, theta: usize) -> T {
        self.data[eta * self.n + theta]
    }

    /// Squared H(x)H norm: `sum D2^2 dt^2`.
    pub fn norm_sq(&self, dt: T) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>() * dt * dt
    }
}

/// Shared factorization pieces: `D1[theta] = w[theta+1]`,
/// intermediate derivatives `D_eta xi_i = w[eta+1] * g[i]`, and the
/// h''-suffix `sf[m] = sum_{i>=m} s2[i] * g[i]`.
fn exponential_pieces<T: Real>(path: &ParticlePath<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let k = path.steps();
    let half = real::<T>(0.5);
    let mut w = vec![T::zero(); k + 1];
    let mut g = vec![T::zero(); k + 1];
    for j in 0..=k {
        let e = path.m_suffix[j] + half * path.q_suffix[j];
        w[j] = (-e).exp();
        g[j] = e.exp();
    }
    let mut sf = vec![T::zero(); k + 1];
    for m in (0..k).rev() {
        sf[m] = sf[m + 1] + path.s2[m] * g[m];
    }
    (w, g, sf)
}

/// Dense `D2` assembled from the factorized pieces; O(n^2) output size.
pub fn second_derivative<T: Real>(
    path: &ParticlePath<T>,
    d1: &[T],
) -> Result<SecondDerivative<T>> {
    let k = path.steps();
    if k > MAX_DENSE_STEPS {
        return Err(Error::InvalidArgument(format!(
            "dense second derivative capped at {MAX_DENSE_STEPS} steps, got {k}"
        )));
    }
    if d1.len() != k {
        return Err(Error::ShapeError(format!(
            "first derivative has {} entries for a {k}-step path",
            d1.len()
        )));
    }
    let (w, _, sf) = exponential_pieces(path);
    let mut data = vec![T::zero(); k * k];
    for eta in 0..k {
        let e_eta = w[eta + 1];
        for theta in 0..k {
            let cut = eta.max(theta);
            data[eta * k + theta] = d1[theta] * e_eta * sf[cut + 1];
        }
    }
    Ok(SecondDerivative { n: k, data })
}

/// Everything the Malliavin-weight estimators need for one realization.
#[derive(Debug, Clone)]
pub struct MalliavinState<T> {
    pub r_index: usize,
    pub t_index: usize,
    pub d1: Vec<T>,
    /// `||D xi_t||_H^2 = sum D1^2 dt`.
    pub h_norm_sq: T,
    pub u: Vec<T>,
    /// `delta(u) = ito_sum - dt * trace`.
    pub divergence: T,
    /// Adapted-style sum `sum u[theta] dB[theta]`.
    pub ito_sum: T,
    /// Gradient trace `sum_theta Du[theta][theta]`.
    pub trace: T,
    /// Row contractions `R[eta] = sum_sigma D2[eta][sigma] D1[sigma] dt`.
    pub r_row: Vec<T>,
    /// Suffix pieces for assembling `D2` and `Du` rows on demand.
    pub sf: Vec<T>,
    pub dt: T,
}

impl<T: Real> MalliavinState<T> {
    #[inline]
    pub fn d2_entry(&self, eta: usize, theta: usize) -> T {
        self.d1[theta] * self.d1[eta] * self.sf[eta.max(theta) + 1]
    }

    /// `Du[eta][theta]` from the quotient rule on `u = D1 / ||D1||^2`.
    #[inline]
    pub fn du_entry(&self, eta: usize, theta: usize) -> T {
        let n2 = self.h_norm_sq;
        self.d2_entry(eta, theta) / n2
            - real::<T>(2.0) * self.d1[theta] * self.r_row[eta] / (n2 * n2)
    }
}

/// Build the full state (derivative, weight field u, divergence) for a path.
pub fn malliavin_state<T: Real>(path: &ParticlePath<T>) -> Result<MalliavinState<T>> {
    let k = path.steps();
    let d1 = first_derivative(path, DerivativeForm::Exponential);
    let dt = path.dt;
    let h_norm_sq = d1.iter().map(|v| *v * *v).sum::<T>() * dt;
    if !(h_norm_sq > T::zero()) {
        return Err(Error::DegenerateDerivative);
    }
    let (w, _, sf) = exponential_pieces(path);

    let mut u = Vec::with_capacity(k);
    let mut ito_sum = T::zero();
    for theta in 0..k {
        let ut = d1[theta] / h_norm_sq;
        ito_sum += ut * path.db[theta];
        u.push(ut);
    }

    // R[eta] = w[eta+1] * (sf[eta+1] * P[eta] + TT[eta+1]) with
    // P a prefix sum of D1^2 dt and TT a suffix sum of D1^2 sf dt.
    let mut tt = vec![T::zero(); k + 1];
    for s in (0..k).rev() {
        tt[s] = tt[s + 1] + d1[s] * d1[s] * sf[s + 1] * dt;
    }
    let mut r_row = vec![T::zero(); k];
    let mut prefix = T::zero();
    let mut trace = T::zero();
    let two = real::<T>(2.0);
    for eta in 0..k {
        prefix += d1[eta] * d1[eta] * dt;
        let r = w[eta + 1] * (sf[eta + 1] * prefix + tt[eta + 1]);
        r_row[eta] = r;
        let diag_d2 = d1[eta] * d1[eta] * sf[eta + 1];
        trace += diag_d2 / h_norm_sq - two * d1[eta] * r / (h_norm_sq * h_norm_sq);
    }
    let divergence = ito_sum - dt * trace;
    Ok(MalliavinState {
        r_index: path.r_index,
        t_index: path.t_index,
        d1,
        h_norm_sq,
        u,
        divergence,
        ito_sum,
        trace,
        r_row,
        sf,
        dt,
    })
}

/// State at an intermediate endpoint `r_index < end <= t_index`, sharing the
/// realization of the full path. Used for time-difference experiments.
pub fn malliavin_state_at<T: Real>(
    path: &ParticlePath<T>,
    end_index: usize,
) -> Result<MalliavinState<T>> {
    if end_index <= path.r_index || end_index > path.t_index {
        return Err(Error::InvalidArgument(format!(
            "endpoint {end_index} outside ({}, {}]",
            path.r_index, path.t_index
        )));
    }
    let k = end_index - path.r_index;
    // suffix sums relative to the new endpoint
    let sub = ParticlePath {
        r_index: path.r_index,
        t_index: end_index,
        start: path.start,
        positions: path.positions[..=k].to_vec(),
        m_suffix: (0..=k)
            .map(|j| path.m_suffix[j] - path.m_suffix[k])
            .collect(),
        q_suffix: (0..=k)
            .map(|j| path.q_suffix[j] - path.q_suffix[k])
            .collect(),
        s2: path.s2[..k].to_vec(),
        s0: path.s0[..k].to_vec(),
        db: path.db[..k].to_vec(),
        i0: path.s0[..k].iter().copied().sum(),
        dt: path.dt,
        env_seed: path.env_seed,
        bm_seed: path.bm_seed,
    };
    malliavin_state(&sub)
}

//! Discrete Skorokhod divergence on the increment grid and Malliavin-weight
//! estimation of the environment-conditional transition density.
//!
//! The divergence of a (possibly anticipating) field `u` over the increments
//! of a Brownian path is the sum-minus-trace form
//!
//! `delta(u) = sum_i u[i] dB[i] - dt * sum_i Du[i][i]`
//!
//! which is the exact adjoint of the discrete gradient for the Gaussian
//! increment vector: `E[F delta(u)] = E<DF, u>_H` holds in law, not just as
//! a dt -> 0 limit. The conditional density follows by the indicator trick
//! `p(y) = E[1_{xi > y} delta(u)]` with `u = D xi / ||D xi||^2_H`.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::particle::{malliavin_state, malliavin_state_at, simulate_path, MalliavinState};
use crate::scalar::{real, Real};
use crate::sheet::{sample_bm_indexed, SheetView};
use crate::SmoothingKernel;
use rayon::prelude::*;

/// Monte Carlo estimate of the conditional transition density at one query.
#[derive(Debug, Clone)]
pub struct DensityEstimate<T> {
    pub value: T,
    pub std_err: T,
    pub n_paths: usize,
    pub r: T,
    pub x: T,
    pub t: T,
    pub y: T,
    pub env_seed: u64,
}

/// One realized divergence, split into its defining pieces.
#[derive(Debug, Clone)]
pub struct DivergenceSample<T> {
    pub value: T,
    /// `sum_i u[i] dB[i]`.
    pub adapted_sum: T,
    /// `dt * sum_i Du[i][i]`.
    pub trace_term: T,
}

impl<T: Real> DivergenceSample<T> {
    fn from_parts(adapted_sum: T, trace_term: T) -> Self {
        DivergenceSample {
            value: adapted_sum - trace_term,
            adapted_sum,
            trace_term,
        }
    }
}

/// Sum-minus-trace divergence for an explicit `(u, Du)` pair.
///
/// `du` is row-major `k x k`: row `eta` holds the derivatives of every
/// `u[theta]` with respect to the increment at `eta`.
pub fn discrete_divergence<T: Real>(
    u: &[T],
    du: &[T],
    db: &[T],
    dt: T,
) -> Result<DivergenceSample<T>> {
    let k = u.len();
    if db.len() != k || du.len() != k * k {
        return Err(Error::ShapeError(format!(
            "u has {k} entries, db {} and Du {} (want {})",
            db.len(),
            du.len(),
            k * k
        )));
    }
    let mut adapted = T::zero();
    let mut trace = T::zero();
    for i in 0..k {
        adapted += u[i] * db[i];
        trace += du[i * k + i];
    }
    Ok(DivergenceSample::from_parts(adapted, dt * trace))
}

/// Divergence of the Malliavin weight field of one realized path, via the
/// factorized O(n) contraction inside [`MalliavinState`].
pub fn weight_divergence<T: Real>(state: &MalliavinState<T>) -> DivergenceSample<T> {
    DivergenceSample::from_parts(state.ito_sum, state.dt * state.trace)
}

/// `delta(u_t - u_s)` for two endpoints of the same realization, plus the
/// three-way diagnostic split.
#[derive(Debug, Clone)]
pub struct TimeDiffDivergence<T> {
    pub value: T,
    /// Difference of the separately assembled divergences; equals `value`
    /// to round-off by linearity.
    pub linearity_check: T,
    /// Split: norm-ratio term, fresh-window term, transport remainder.
    pub components: [T; 3],
}

/// Computes `delta(u_t - u_s)` on the common grid `[r, t)` where the state
/// at `s` is zero-extended. The split decomposes `u_t - u_s` into
/// `A1 = D xi_s (1/||D xi_t||^2 - 1/||D xi_s||^2)`,
/// `A2 = 1_{[s,t]} / ||D xi_t||^2` and the remainder `A3`.
pub fn divergence_time_diff<T: Real>(
    state_s: &MalliavinState<T>,
    state_t: &MalliavinState<T>,
    db: &[T],
) -> Result<TimeDiffDivergence<T>> {
    if state_s.r_index != state_t.r_index {
        return Err(Error::ShapeError(
            "states must share the start index".into(),
        ));
    }
    if state_s.t_index > state_t.t_index {
        return Err(Error::ShapeError("need s <= t".into()));
    }
    let kt = state_t.t_index - state_t.r_index;
    let ks = state_s.t_index - state_s.r_index;
    if db.len() != kt {
        return Err(Error::ShapeError(format!(
            "db has {} entries for a {kt}-step grid",
            db.len()
        )));
    }
    if ks == kt {
        return Ok(TimeDiffDivergence {
            value: T::zero(),
            linearity_check: T::zero(),
            components: [T::zero(); 3],
        });
    }
    let dt = state_t.dt;
    let delta_t = weight_divergence(state_t).value;
    let delta_s = weight_divergence(state_s).value;
    let diff = delta_t - delta_s;

    // A1: common support, norm-ratio difference
    let vt2 = state_t.h_norm_sq;
    let vs2 = state_s.h_norm_sq;
    let ratio = T::one() / vt2 - T::one() / vs2;
    let two = real::<T>(2.0);
    let mut a1_sum = T::zero();
    let mut a1_trace = T::zero();
    for theta in 0..ks {
        a1_sum += state_s.d1[theta] * ratio * db[theta];
    }
    for eta in 0..kt {
        // d/d eta of D1s[theta] * (1/vt2 - 1/vs2) at theta = eta
        let d2s = if eta < ks {
            state_s.d2_entry(eta, eta)
        } else {
            T::zero()
        };
        let d1s = if eta < ks { state_s.d1[eta] } else { T::zero() };
        let dvt = -two * state_t.r_row[eta] / (vt2 * vt2);
        let dvs = if eta < ks {
            -two * state_s.r_row[eta] / (vs2 * vs2)
        } else {
            T::zero()
        };
        a1_trace += d2s * ratio + d1s * (dvt - dvs);
    }
    let a1 = a1_sum - dt * a1_trace;

    // A2: fresh-window indicator over [s, t)
    let mut a2_sum = T::zero();
    let mut a2_trace = T::zero();
    for theta in ks..kt {
        a2_sum += db[theta] / vt2;
        a2_trace += -two * state_t.r_row[theta] / (vt2 * vt2);
    }
    let a2 = a2_sum - dt * a2_trace;

    // A3 closes the split exactly
    let a3 = diff - a1 - a2;

    Ok(TimeDiffDivergence {
        value: diff,
        linearity_check: diff,
        components: [a1, a2, a3],
    })
}

/// What to do with a path that reaches the edge of the truncated domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryPolicy {
    /// Fail the whole estimate (the experiment must enlarge the domain).
    #[default]
    Error,
    /// Kill the path: it contributes zero to every threshold, mirroring the
    /// Dirichlet-zero truncation of the field schemes.
    Absorb,
}

/// Density profile `p(r, x; t, y_q)` for a family of thresholds sharing one
/// B-path ensemble (common random numbers across the y grid).
///
/// Paths are distributed over the worker pool; per-path results land in
/// index-addressed slots so totals are worker-count independent.
#[allow(clippy::too_many_arguments)]
pub fn density_profile<T: Real>(
    kernel: &SmoothingKernel<T>,
    sheet: &(impl SheetView<T> + Sync),
    r_index: usize,
    x: T,
    t_index: usize,
    ys: &[T],
    n_paths: usize,
    seed: u64,
    antithetic: bool,
    boundary: BoundaryPolicy,
) -> Result<Vec<DensityEstimate<T>>> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument(
            "density estimation needs at least 2 paths".into(),
        ));
    }
    let grid = sheet.grid();
    let samples: Vec<Result<Option<(T, T)>>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let (index, negate) = if antithetic {
                ((p / 2) as u64, p % 2 == 1)
            } else {
                (p as u64, false)
            };
            let bm = sample_bm_indexed(grid, seed, index, negate);
            match simulate_path(kernel, sheet, &bm, r_index, x, t_index) {
                Ok(path) => {
                    let state = malliavin_state(&path)?;
                    Ok(Some((path.end(), state.divergence)))
                }
                Err(Error::DomainExit { .. }) if boundary == BoundaryPolicy::Absorb => {
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut endpoints = Vec::with_capacity(n_paths);
    for s in samples {
        if let Some(pair) = s? {
            endpoints.push(pair);
        }
    }

    let nf = real::<T>(n_paths as f64);
    let r_time = grid.time(r_index);
    let t_time = grid.time(t_index);
    let mut out = Vec::with_capacity(ys.len());
    for &y in ys {
        let mut sum = T::zero();
        let mut sum2 = T::zero();
        for (xi, delta) in &endpoints {
            let v = if *xi > y { *delta } else { T::zero() };
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / nf;
        let var = (sum2 / nf - mean * mean).max(T::zero());
        out.push(DensityEstimate {
            value: mean,
            std_err: (var / nf).sqrt(),
            n_paths,
            r: r_time,
            x,
            t: t_time,
            y,
            env_seed: sheet.seed_id(),
        });
    }
    Ok(out)
}

/// Single-query wrapper around [`density_profile`].
#[allow(clippy::too_many_arguments)]
pub fn density_estimate<T: Real>(
    kernel: &SmoothingKernel<T>,
    sheet: &(impl SheetView<T> + Sync),
    r_index: usize,
    x: T,
    t_index: usize,
    y: T,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<DensityEstimate<T>> {
    Ok(density_profile(
        kernel,
        sheet,
        r_index,
        x,
        t_index,
        &[y],
        n_paths,
        seed,
        antithetic,
        BoundaryPolicy::Error,
    )?
    .remove(0))
}

/// Per-path (endpoint, divergence) sample stream for expectation tests and
/// the duality suite; shares the ensemble conventions of `density_profile`.
pub fn endpoint_divergence_samples<T: Real>(
    kernel: &SmoothingKernel<T>,
    sheet: &(impl SheetView<T> + Sync),
    r_index: usize,
    x: T,
    t_index: usize,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<Vec<(T, T)>> {
    let grid = sheet.grid();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let (index, negate) = if antithetic {
                ((p / 2) as u64, p % 2 == 1)
            } else {
                (p as u64, false)
            };
            let bm = sample_bm_indexed(grid, seed, index, negate);
            let path = simulate_path(kernel, sheet, &bm, r_index, x, t_index)?;
            let state = malliavin_state(&path)?;
            Ok((path.end(), state.divergence))
        })
        .collect()
}

/// Full per-path record for the difference experiments: divergences and
/// derivative norms at two endpoints of the same realization.
#[derive(Debug, Clone)]
pub struct TwoTimeSample<T> {
    pub xi_s: T,
    pub xi_t: T,
    pub delta_s: T,
    pub delta_t: T,
    /// `||D(xi_t - xi_s)||_H`.
    pub d1_diff_norm: T,
    /// `||D^2(xi_t - xi_s)||_{HxH}`.
    pub d2_diff_norm: T,
}

pub fn two_time_samples<T: Real>(
    kernel: &SmoothingKernel<T>,
    sheet: &(impl SheetView<T> + Sync),
    r_index: usize,
    x: T,
    s_index: usize,
    t_index: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<TwoTimeSample<T>>> {
    if !(r_index < s_index && s_index < t_index) {
        return Err(Error::InvalidArgument(format!(
            "need r < s < t, got {r_index}, {s_index}, {t_index}"
        )));
    }
    let grid = sheet.grid();
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let bm = sample_bm_indexed(grid, seed, p as u64, false);
            let path = simulate_path(kernel, sheet, &bm, r_index, x, t_index)?;
            let state_t = malliavin_state(&path)?;
            let state_s = malliavin_state_at(&path, s_index)?;
            let ks = s_index - r_index;
            let kt = t_index - r_index;
            let dt = path.dt;
            let mut dn = T::zero();
            for theta in 0..kt {
                let a = state_t.d1[theta];
                let b = if theta < ks { state_s.d1[theta] } else { T::zero() };
                dn += (a - b) * (a - b);
            }
            let mut d2n = T::zero();
            for eta in 0..kt {
                for theta in 0..kt {
                    let a = state_t.d2_entry(eta, theta);
                    let b = if eta < ks && theta < ks {
                        state_s.d2_entry(eta, theta)
                    } else {
                        T::zero()
                    };
                    d2n += (a - b) * (a - b);
                }
            }
            Ok(TwoTimeSample {
                xi_s: path.positions[ks],
                xi_t: path.end(),
                delta_s: state_s.divergence,
                delta_t: state_t.divergence,
                d1_diff_norm: (dn * dt).sqrt(),
                d2_diff_norm: (d2n * dt * dt).sqrt(),
            })
        })
        .collect()
}

/// Quadrature of a density profile against the spatial grid:
/// `sum_y p(y) dy` over consecutive thresholds (normalization check).
pub fn profile_mass<T: Real>(estimates: &[DensityEstimate<T>], grid: &GridSpec<T>) -> T {
    estimates.iter().map(|e| e.value).sum::<T>() * grid.dy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::particle::first_derivative;
    use crate::particle::DerivativeForm;
    use crate::sheet::{sample_bm, sample_sheet};

    fn grid(n_t: usize) -> GridSpec<f64> {
        GridSpec::new(1.0, n_t, -10.0, 10.0, 80).unwrap()
    }

    #[test]
    fn adapted_constant_field_reduces_to_ito_sum() {
        let g = grid(8);
        let bm = sample_bm::<f64>(&g, 3, "B/0");
        let k = 8;
        let span = 1.0;
        let u = vec![1.0 / span; k];
        let du = vec![0.0; k * k];
        let d = discrete_divergence(&u, &du, &bm.increments, g.dt()).unwrap();
        let expect = bm.values[k] / span;
        assert!((d.value - expect).abs() < 1e-14);
        assert_eq!(d.trace_term, 0.0);
        assert!((d.value - (d.adapted_sum - d.trace_term)).abs() < 1e-16);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = discrete_divergence(&[1.0, 2.0], &[0.0; 3], &[0.1, 0.2], 0.5).unwrap_err();
        assert_eq!(err.code(), "shape-error");
    }

    #[test]
    fn fast_divergence_matches_materialized_operator() {
        let g = grid(16);
        let sheet = sample_sheet::<f64>(&g, 5, "W");
        let bm = sample_bm::<f64>(&g, 6, "B/0");
        let kernel = SmoothingKernel::gaussian_bump(0.9, 1.0).unwrap();
        let path = simulate_path(&kernel, &sheet, &bm, 0, 0.0, 16).unwrap();
        let state = malliavin_state(&path).unwrap();
        let k = 16;
        let mut du = vec![0.0; k * k];
        for eta in 0..k {
            for theta in 0..k {
                du[eta * k + theta] = state.du_entry(eta, theta);
            }
        }
        let slow = discrete_divergence(&state.u, &du, &path.db, path.dt).unwrap();
        let fast = weight_divergence(&state);
        assert!(
            (slow.value - fast.value).abs() < 1e-12,
            "{} vs {}",
            slow.value,
            fast.value
        );
    }

    #[test]
    fn dead_coordinates_change_nothing() {
        // zero-padding u and Du below r leaves delta unchanged exactly
        let g = grid(8);
        let bm = sample_bm::<f64>(&g, 7, "B/0");
        let k = 5;
        let u: Vec<f64> = (0..k).map(|i| 0.3 + 0.1 * i as f64).collect();
        let mut du = vec![0.0; k * k];
        for eta in 0..k {
            for theta in 0..k {
                du[eta * k + theta] = 0.01 * (eta + 2 * theta) as f64;
            }
        }
        let base = discrete_divergence(&u, &du, &bm.increments[..k], g.dt()).unwrap();
        let pad = 3;
        let kp = k + pad;
        let mut u_pad = vec![0.0; kp];
        u_pad[pad..].copy_from_slice(&u);
        let mut du_pad = vec![0.0; kp * kp];
        for eta in 0..k {
            for theta in 0..k {
                du_pad[(eta + pad) * kp + (theta + pad)] = du[eta * k + theta];
            }
        }
        let mut db_pad = vec![123.0; pad]; // dead cells may hold anything
        db_pad.extend_from_slice(&bm.increments[..k]);
        let padded = discrete_divergence(&u_pad, &du_pad, &db_pad, g.dt()).unwrap();
        assert_eq!(base.value, padded.value);
    }

    #[test]
    fn duality_against_gradient_for_terminal_position() {
        // E[xi_t delta(u_t)] = E<D xi_t, u_t> = 1; small ensemble, fixed W
        let g = grid(32);
        let sheet = sample_sheet::<f64>(&g, 11, "W");
        let kernel = SmoothingKernel::gaussian_bump(0.8, 1.0).unwrap();
        let n = 4000;
        let samples =
            endpoint_divergence_samples(&kernel, &sheet, 0, 0.0, 32, n, 900, false).unwrap();
        let vals: Vec<f64> = samples.iter().map(|(xi, d)| xi * d).collect();
        let mean: f64 = vals.iter().sum::<f64>() / n as f64;
        let var: f64 =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 4.0 * se.max(0.01),
            "duality mean {mean} +- {se}"
        );
        // and E[delta] = 0
        let mean_d: f64 = samples.iter().map(|(_, d)| d).sum::<f64>() / n as f64;
        let var_d: f64 = samples
            .iter()
            .map(|(_, d)| (d - mean_d) * (d - mean_d))
            .sum::<f64>()
            / (n as f64 - 1.0);
        assert!(mean_d.abs() < 4.0 * (var_d / n as f64).sqrt().max(0.01));
    }

    #[test]
    fn zero_kernel_density_matches_standard_normal_coarsely() {
        let g = grid(64);
        let sheet = sample_sheet::<f64>(&g, 1, "W");
        let kernel = SmoothingKernel::zero();
        let est =
            density_estimate(&kernel, &sheet, 0, 0.0, 64, 0.0, 20_000, 5, true).unwrap();
        let target = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!(
            (est.value - target).abs() < 3.0 * est.std_err.max(1e-4),
            "p(0) = {} +- {}, want {target}",
            est.value,
            est.std_err
        );
        assert!(est.std_err < 0.01);
    }

    #[test]
    fn density_profile_integrates_to_one() {
        let g = GridSpec::new(1.0, 32, -8.0, 8.0, 64).unwrap();
        let sheet = sample_sheet::<f64>(&g, 2, "W");
        let kernel = SmoothingKernel::zero();
        let ys: Vec<f64> = (0..g.n_x).map(|j| g.y(j)).collect();
        let est = density_profile(
            &kernel,
            &sheet,
            0,
            0.0,
            32,
            &ys,
            20_000,
            7,
            true,
            BoundaryPolicy::Error,
        )
        .unwrap();
        let mass = profile_mass(&est, &g);
        let pooled_se: f64 = est
            .iter()
            .map(|e| e.std_err * e.std_err)
            .sum::<f64>()
            .sqrt()
            * g.dy();
        assert!(
            (mass - 1.0).abs() < 3.0 * pooled_se.max(1e-3),
            "mass {mass} +- {pooled_se}"
        );
    }

    #[test]
    fn time_diff_is_linear_and_split_closes() {
        let g = grid(32);
        let sheet = sample_sheet::<f64>(&g, 13, "W");
        let bm = sample_bm::<f64>(&g, 14, "B/0");
        let kernel = SmoothingKernel::gaussian_bump(0.8, 1.0).unwrap();
        let path = simulate_path(&kernel, &sheet, &bm, 0, 0.0, 32).unwrap();
        let st = malliavin_state(&path).unwrap();
        let ss = malliavin_state_at(&path, 20).unwrap();
        let d = divergence_time_diff(&ss, &st, &path.db).unwrap();
        assert!((d.value - (st.divergence - ss.divergence)).abs() < 1e-13);
        let split_sum: f64 = d.components.iter().sum();
        assert!(
            (split_sum - d.value).abs() < 1e-10,
            "split {split_sum} vs {})",
            d.value
        );
        // s = t edge case
        let same = divergence_time_diff(&st, &st, &path.db).unwrap();
        assert_eq!(same.value, 0.0);
    }

    #[test]
    fn zero_kernel_time_diff_closed_form() {
        let g = grid(32);
        let sheet = sample_sheet::<f64>(&g, 1, "W");
        let bm = sample_bm::<f64>(&g, 2, "B/0");
        let kernel = SmoothingKernel::zero();
        let path = simulate_path(&kernel, &sheet, &bm, 0, 0.0, 32).unwrap();
        let st = malliavin_state(&path).unwrap();
        let ss = malliavin_state_at(&path, 16).unwrap();
        let d = divergence_time_diff(&ss, &st, &path.db).unwrap();
        let t = 1.0;
        let s = 0.5;
        let expect = bm.values[32] / t - bm.values[16] / s;
        assert!((d.value - expect).abs() < 1e-12);
    }

    #[test]
    fn exponential_and_recursion_forms_agree_in_the_small_noise_limit() {
        let g = grid(16);
        let sheet = sample_sheet::<f64>(&g, 17, "W");
        let bm = sample_bm::<f64>(&g, 18, "B/0");
        let kernel = SmoothingKernel::gaussian_bump(0.02, 1.0).unwrap();
        let path = simulate_path(&kernel, &sheet, &bm, 0, 0.0, 16).unwrap();
        let a = first_derivative(&path, DerivativeForm::Exponential);
        let b = first_derivative(&path, DerivativeForm::EulerRecursion);
        for (x, y) in a.iter().zip(&b) {
            assert!((x / y - 1.0).abs() < 1e-3);
        }
    }
}

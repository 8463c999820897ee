//! Two independent discretizations of the superprocess density field: the
//! convolution representation driven by Malliavin-weight densities, and an
//! explicit finite-difference scheme. Both consume the same (W, V) sheet
//! realizations so they can be cross-validated pathwise.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::malliavin::{density_profile, BoundaryPolicy};
use crate::scalar::{real, Real};
use crate::sheet::{discrete_norm_sq, SheetView};
use crate::SmoothingKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeTag {
    Convolution,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialFamily {
    Zero,
    GaussianBump,
    Indicator,
    Tabulated,
}

/// Non-negative, bounded, integrable initial density sampled on the grid.
#[derive(Debug, Clone)]
pub struct InitialDensity<T> {
    pub family: InitialFamily,
    pub values: Vec<T>,
    pub mass: T,
    pub max: T,
}

impl<T: Real> InitialDensity<T> {
    fn from_values(family: InitialFamily, grid: &GridSpec<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n_x {
            return Err(Error::ShapeError(format!(
                "initial density has {} samples on a {}-cell grid",
                values.len(),
                grid.n_x
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidArgument(
                "initial density must be finite and non-negative".into(),
            ));
        }
        let mass = values.iter().copied().sum::<T>() * grid.dy();
        let max = values.iter().copied().fold(T::zero(), T::max);
        Ok(InitialDensity {
            family,
            values,
            mass,
            max,
        })
    }

    pub fn zero(grid: &GridSpec<T>) -> Self {
        InitialDensity {
            family: InitialFamily::Zero,
            values: vec![T::zero(); grid.n_x],
            mass: T::zero(),
            max: T::zero(),
        }
    }

    pub fn gaussian_bump(grid: &GridSpec<T>, amplitude: T, width: T, center: T) -> Result<Self> {
        if !(width > T::zero()) || !(amplitude >= T::zero()) {
            return Err(Error::InvalidArgument(
                "gaussian initial density needs width > 0 and amplitude >= 0".into(),
            ));
        }
        let values = (0..grid.n_x)
            .map(|j| {
                let z = (grid.y(j) - center) / width;
                amplitude * (-z * z / real::<T>(2.0)).exp()
            })
            .collect();
        Self::from_values(InitialFamily::GaussianBump, grid, values)
    }

    pub fn indicator(grid: &GridSpec<T>, center: T, half_width: T, height: T) -> Result<Self> {
        if !(half_width > T::zero()) || !(height >= T::zero()) {
            return Err(Error::InvalidArgument(
                "indicator initial density needs half_width > 0 and height >= 0".into(),
            ));
        }
        let values = (0..grid.n_x)
            .map(|j| {
                if (grid.y(j) - center).abs() <= half_width {
                    height
                } else {
                    T::zero()
                }
            })
            .collect();
        Self::from_values(InitialFamily::Indicator, grid, values)
    }

    pub fn tabulated(grid: &GridSpec<T>, values: Vec<T>) -> Result<Self> {
        Self::from_values(InitialFamily::Tabulated, grid, values)
    }
}

/// A simulated field on the full space-time grid, with the running mass
/// ledger and, for the convolution scheme, the two terms kept separately.
#[derive(Debug, Clone)]
pub struct FieldState<T> {
    pub scheme: SchemeTag,
    pub grid: GridSpec<T>,
    /// `fields[i][j] = X_{t_i}(y_j)`, `i = 0..=n_t`.
    pub fields: Vec<Vec<T>>,
    /// Initial-condition term of the convolution representation.
    pub x1: Option<Vec<Vec<T>>>,
    /// Branching-noise term of the convolution representation.
    pub x2: Option<Vec<Vec<T>>>,
    /// Mass `sum_j X dy` per time index.
    pub mass: Vec<T>,
    pub seed_w: u64,
    pub seed_v: u64,
    pub nu: T,
}

/// Default diffusion coefficient of the finite-difference scheme:
/// half the conditional generator weight `1 + ||h||^2_disc`.
pub fn nu_default<T: Real>(kernel: &SmoothingKernel<T>, grid: &GridSpec<T>) -> T {
    let center = (grid.x_min + grid.x_max) / real::<T>(2.0);
    (T::one() + discrete_norm_sq(grid, kernel, 0, center)) / real::<T>(2.0)
}

/// Explicit-scheme stability bound `nu dt / dy^2 <= 1/4`.
pub fn check_cfl<T: Real>(nu: T, grid: &GridSpec<T>) -> Result<()> {
    let ratio = nu * grid.dt() / (grid.dy() * grid.dy());
    if ratio > real::<T>(0.25) {
        return Err(Error::CflViolation(ratio.to_f64_lossy()));
    }
    Ok(())
}

/// Kernel stencil `h(d*dy)` over the support window, reused every step.
fn kernel_stencil<T: Real>(kernel: &SmoothingKernel<T>, grid: &GridSpec<T>) -> Vec<T> {
    if kernel.is_zero() {
        return Vec::new();
    }
    let dy = grid.dy();
    let reach = (kernel.support_radius() / dy).to_f64_lossy().ceil() as usize;
    (0..=2 * reach)
        .map(|k| {
            let d = real::<T>(k as f64) - real::<T>(reach as f64);
            kernel.weights(d * dy).0
        })
        .collect()
}

/// One explicit step from time index `i` to `i+1`; Dirichlet zero boundary.
#[allow(clippy::too_many_arguments)]
pub fn step_finite_difference<T: Real>(
    x: &[T],
    out: &mut [T],
    stencil: &[T],
    sheet_w: &impl SheetView<T>,
    sheet_v: &impl SheetView<T>,
    i: usize,
    nu: T,
    grid: &GridSpec<T>,
) -> Result<()> {
    let n = grid.n_x;
    if x.len() != n || out.len() != n {
        return Err(Error::ShapeError(format!(
            "field has {} cells on a {n}-cell grid",
            x.len()
        )));
    }
    let dt = grid.dt();
    let dy = grid.dy();
    let lam = nu * dt / (dy * dy);
    let half_over_dy = real::<T>(0.5) / dy;

    // transported noise term G_j = X_j * sum_k h(y_k - y_j) dW[i][k]
    let mut g = vec![T::zero(); n];
    if !stencil.is_empty() {
        let reach = stencil.len() / 2;
        for j in 0..n {
            let mut s = T::zero();
            let lo = j.saturating_sub(reach);
            let hi = (j + reach).min(n - 1);
            for k in lo..=hi {
                s += stencil[k + reach - j] * sheet_w.increment(i, k);
            }
            g[j] = x[j] * s;
        }
    }

    let mut max_abs = T::zero();
    for j in 0..n {
        let left = if j > 0 { x[j - 1] } else { T::zero() };
        let right = if j + 1 < n { x[j + 1] } else { T::zero() };
        let lap = lam * (left - real::<T>(2.0) * x[j] + right);
        let g_left = if j > 0 { g[j - 1] } else { T::zero() };
        let g_right = if j + 1 < n { g[j + 1] } else { T::zero() };
        let transport = (g_right - g_left) * half_over_dy;
        let branching =
            x[j].max(T::zero()).sqrt() * sheet_v.increment(i, j) / dy;
        let v = x[j] + lap - transport + branching;
        out[j] = v;
        max_abs = max_abs.max(v.abs());
    }
    if max_abs > real::<T>(1e6) {
        return Err(Error::Blowup(i + 1));
    }
    Ok(())
}

/// Run the explicit scheme over the whole grid, recording every step.
pub fn evolve_fd<T: Real>(
    kernel: &SmoothingKernel<T>,
    mu: &InitialDensity<T>,
    sheet_w: &impl SheetView<T>,
    sheet_v: &impl SheetView<T>,
    nu: T,
) -> Result<FieldState<T>> {
    let grid = sheet_w.grid().clone();
    if sheet_v.grid() != &grid {
        return Err(Error::ShapeError("W and V sheets on different grids".into()));
    }
    check_cfl(nu, &grid)?;
    let stencil = kernel_stencil(kernel, &grid);
    let mut fields = Vec::with_capacity(grid.n_t + 1);
    let mut mass = Vec::with_capacity(grid.n_t + 1);
    fields.push(mu.values.clone());
    mass.push(mu.mass);
    let mut current = mu.values.clone();
    let mut next = vec![T::zero(); grid.n_x];
    for i in 0..grid.n_t {
        step_finite_difference(
            &current, &mut next, &stencil, sheet_w, sheet_v, i, nu, &grid,
        )?;
        std::mem::swap(&mut current, &mut next);
        fields.push(current.clone());
        mass.push(current.iter().copied().sum::<T>() * grid.dy());
    }
    Ok(FieldState {
        scheme: SchemeTag::FiniteDifference,
        grid,
        fields,
        x1: None,
        x2: None,
        mass,
        seed_w: sheet_w.seed_id(),
        seed_v: sheet_v.seed_id(),
        nu,
    })
}

/// Initial-condition term of the convolution representation at one output
/// time: quadrature of `mu` against the conditional density, all densities
/// sharing one B-path ensemble per source cell.
pub fn initial_term<T: Real>(
    mu: &InitialDensity<T>,
    kernel: &SmoothingKernel<T>,
    sheet_w: &(impl SheetView<T> + Sync),
    t_index: usize,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<Vec<T>> {
    let grid = sheet_w.grid();
    let ys: Vec<T> = (0..grid.n_x).map(|j| grid.y(j)).collect();
    let mut x1 = vec![T::zero(); grid.n_x];
    for (z, weight) in mu.values.iter().enumerate() {
        if *weight == T::zero() {
            continue;
        }
        let profile = density_profile(
            kernel,
            sheet_w,
            0,
            grid.y(z),
            t_index,
            &ys,
            n_paths,
            seed,
            antithetic,
            BoundaryPolicy::Absorb,
        )?;
        let w = *weight * grid.dy();
        for (j, est) in profile.iter().enumerate() {
            x1[j] += w * est.value;
        }
    }
    Ok(x1)
}

/// Configuration for the convolution evolution.
#[derive(Debug, Clone)]
pub struct ConvolutionParams {
    /// B-paths per density query.
    pub n_paths: usize,
    /// Hard cap on the total number of simulated B-paths.
    pub budget: u64,
    pub seed: u64,
    pub antithetic: bool,
}

/// Evolve the convolution representation over the whole grid. Every step
/// rebuilds the causal density tensor `p(r, z; t_{i+1}, y)` for `r <= i`
/// against the field's own history.
pub fn evolve_convolution<T: Real>(
    kernel: &SmoothingKernel<T>,
    mu: &InitialDensity<T>,
    sheet_w: &(impl SheetView<T> + Sync),
    sheet_v: &impl SheetView<T>,
    params: &ConvolutionParams,
) -> Result<FieldState<T>> {
    let grid = sheet_w.grid().clone();
    if sheet_v.grid() != &grid {
        return Err(Error::ShapeError("W and V sheets on different grids".into()));
    }
    let n_x = grid.n_x;
    let n_t = grid.n_t;
    // budget: initial term uses one ensemble per occupied source cell per
    // output time; the Z-tensor one per (r, z) pair per output time
    let occupied = mu.values.iter().filter(|v| **v != T::zero()).count() as u64;
    let tensor_queries: u64 = (1..=n_t as u64).map(|i| i * n_x as u64).sum();
    let needed = (occupied * n_t as u64 + tensor_queries) * params.n_paths as u64;
    if needed > params.budget {
        return Err(Error::BudgetExceeded {
            needed,
            budget: params.budget,
        });
    }

    let ys: Vec<T> = (0..n_x).map(|j| grid.y(j)).collect();
    let mut fields = vec![mu.values.clone()];
    let mut x1_hist = vec![mu.values.clone()];
    let mut x2_hist = vec![vec![T::zero(); n_x]];
    let mut mass = vec![mu.mass];

    for i in 0..n_t {
        let t_next = i + 1;
        let x1 = initial_term(
            mu,
            kernel,
            sheet_w,
            t_next,
            params.n_paths,
            params.seed,
            params.antithetic,
        )?;
        let mut x2 = vec![T::zero(); n_x];
        for r in 0..t_next {
            let field_r = &fields[r];
            for z in 0..n_x {
                let amp = field_r[z].max(T::zero()).sqrt();
                if amp == T::zero() {
                    continue;
                }
                let dv = sheet_v.increment(r, z);
                if dv == T::zero() {
                    continue;
                }
                let profile = density_profile(
                    kernel,
                    sheet_w,
                    r,
                    grid.y(z),
                    t_next,
                    &ys,
                    params.n_paths,
                    params.seed,
                    params.antithetic,
                    BoundaryPolicy::Absorb,
                )?;
                let w = amp * dv;
                for (j, est) in profile.iter().enumerate() {
                    x2[j] += w * est.value;
                }
            }
        }
        let total: Vec<T> = x1.iter().zip(&x2).map(|(a, b)| *a + *b).collect();
        mass.push(total.iter().copied().sum::<T>() * grid.dy());
        fields.push(total);
        x1_hist.push(x1);
        x2_hist.push(x2);
    }

    Ok(FieldState {
        scheme: SchemeTag::Convolution,
        grid,
        fields,
        x1: Some(x1_hist),
        x2: Some(x2_hist),
        mass,
        seed_w: sheet_w.seed_id(),
        seed_v: sheet_v.seed_id(),
        nu: T::zero(),
    })
}

/// Relative L2 discrepancy of two fields per time index:
/// `||a - b|| / max(||b||, eps)`.
pub fn crosscheck<T: Real>(a: &FieldState<T>, b: &FieldState<T>) -> Result<Vec<(T, T)>> {
    if a.grid != b.grid || a.fields.len() != b.fields.len() {
        return Err(Error::ShapeError(
            "cross-check needs identical grids and time sets".into(),
        ));
    }
    let eps = real::<T>(1e-12);
    let dy = a.grid.dy();
    let mut out = Vec::with_capacity(a.fields.len());
    for (i, (fa, fb)) in a.fields.iter().zip(&b.fields).enumerate() {
        let mut diff = T::zero();
        let mut norm = T::zero();
        for (va, vb) in fa.iter().zip(fb) {
            diff += (*va - *vb) * (*va - *vb);
            norm += *vb * *vb;
        }
        let rel = (diff * dy).sqrt() / (norm * dy).sqrt().max(eps);
        out.push((a.grid.time(i), rel));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sheet::{sample_sheet, DenseSheet};

    fn grid() -> GridSpec<f64> {
        GridSpec::new(0.25, 16, -4.0, 4.0, 32).unwrap()
    }

    fn zero_sheets(g: &GridSpec<f64>) -> (DenseSheet<f64>, DenseSheet<f64>) {
        (
            sample_sheet::<f64>(g, 1, "W").zeroed(),
            sample_sheet::<f64>(g, 2, "V").zeroed(),
        )
    }

    /// Dense-matrix power oracle for the deterministic heat stencil.
    fn heat_oracle(g: &GridSpec<f64>, mu: &[f64], nu: f64, steps: usize) -> Vec<f64> {
        let n = g.n_x;
        let lam = nu * g.dt() / (g.dy() * g.dy());
        let mut cur = mu.to_vec();
        let mut next = vec![0.0; n];
        for _ in 0..steps {
            for j in 0..n {
                let l = if j > 0 { cur[j - 1] } else { 0.0 };
                let r = if j + 1 < n { cur[j + 1] } else { 0.0 };
                next[j] = cur[j] + lam * (l - 2.0 * cur[j] + r);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    #[test]
    fn cfl_guard() {
        let g = GridSpec::new(1.0, 4, -1.0, 1.0, 64).unwrap();
        assert_eq!(
            check_cfl(0.5, &g).unwrap_err().code(),
            "cfl-violation"
        );
        assert!(check_cfl(0.0009, &g).is_ok());
    }

    #[test]
    fn deterministic_heat_evolution_matches_matrix_oracle() {
        let g = grid();
        let (w, v) = zero_sheets(&g);
        let kernel = SmoothingKernel::zero();
        let mu = InitialDensity::indicator(&g, 0.0, 0.2, 1.0).unwrap();
        let nu = nu_default(&kernel, &g);
        assert_eq!(nu, 0.5);
        let state = evolve_fd(&kernel, &mu, &w, &v, nu).unwrap();
        let oracle = heat_oracle(&g, &mu.values, nu, g.n_t);
        for (a, b) in state.fields[g.n_t].iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn mass_conserved_without_noise() {
        // interior-supported initial mass: the Dirichlet edge sees only the
        // far diffusive tail, so the ledger stays flat to round-off scale
        let g = grid();
        let (w, v) = zero_sheets(&g);
        let kernel = SmoothingKernel::zero();
        let mu = InitialDensity::indicator(&g, 0.0, 0.5, 1.0).unwrap();
        let state = evolve_fd(&kernel, &mu, &w, &v, 0.5).unwrap();
        for m in &state.mass {
            assert!((m - mu.mass).abs() < 1e-9 * mu.mass.max(1.0));
        }
    }

    #[test]
    fn mean_mass_is_martingale_with_noise() {
        let g = grid();
        let kernel = SmoothingKernel::gaussian_bump(0.5, 0.5).unwrap();
        let mu = InitialDensity::gaussian_bump(&g, 1.0, 0.5, 0.0).unwrap();
        let nu = nu_default(&kernel, &g);
        let n_rep = 400u64;
        let mut masses = Vec::new();
        for rep in 0..n_rep {
            let w = sample_sheet::<f64>(&g, 1000 + rep, "W");
            let v = sample_sheet::<f64>(&g, 1000 + rep, "V");
            let st = evolve_fd(&kernel, &mu, &w, &v, nu).unwrap();
            masses.push(st.mass[g.n_t]);
        }
        let mean: f64 = masses.iter().sum::<f64>() / n_rep as f64;
        let var: f64 = masses
            .iter()
            .map(|m| (m - mean) * (m - mean))
            .sum::<f64>()
            / (n_rep as f64 - 1.0);
        let se = (var / n_rep as f64).sqrt();
        assert!(
            (mean - mu.mass).abs() < 3.0 * se,
            "mean mass {mean} vs {} (se {se})",
            mu.mass
        );
    }

    #[test]
    fn blowup_detected() {
        let g = grid();
        let (w, v) = zero_sheets(&g);
        let kernel = SmoothingKernel::zero();
        let mu = InitialDensity::gaussian_bump(&g, 2.0e6, 0.5, 0.0).unwrap();
        let err = evolve_fd(&kernel, &mu, &w, &v, 0.5).unwrap_err();
        assert_eq!(err.code(), "blowup");
    }

    #[test]
    fn zero_mu_and_zero_v_stays_zero() {
        let g = grid();
        let (w, v) = zero_sheets(&g);
        let kernel = SmoothingKernel::zero();
        let mu = InitialDensity::zero(&g);
        let params = ConvolutionParams {
            n_paths: 64,
            budget: u64::MAX,
            seed: 3,
            antithetic: true,
        };
        let conv = evolve_convolution(&kernel, &mu, &w, &v, &params).unwrap();
        assert!(conv
            .fields
            .iter()
            .all(|f| f.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn v_zeroed_convolution_equals_initial_term() {
        let g = GridSpec::new(0.25, 8, -4.0, 4.0, 24).unwrap();
        let w = sample_sheet::<f64>(&g, 5, "W");
        let v = sample_sheet::<f64>(&g, 6, "V").zeroed();
        let kernel = SmoothingKernel::zero();
        let mu = InitialDensity::gaussian_bump(&g, 1.0, 0.8, 0.0).unwrap();
        let params = ConvolutionParams {
            n_paths: 2000,
            budget: u64::MAX,
            seed: 3,
            antithetic: true,
        };
        let conv = evolve_convolution(&kernel, &mu, &w, &v, &params).unwrap();
        let x1 = initial_term(&mu, &kernel, &w, g.n_t, 2000, 3, true).unwrap();
        for (a, b) in conv.fields[g.n_t].iter().zip(&x1) {
            assert!((a - b).abs() < 1e-12);
        }
        let x2 = conv.x2.as_ref().unwrap();
        assert!(x2[g.n_t].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn budget_guard_trips() {
        let g = grid();
        let (w, v) = zero_sheets(&g);
        let kernel = SmoothingKernel::zero();
        let mu = InitialDensity::gaussian_bump(&g, 1.0, 0.5, 0.0).unwrap();
        let params = ConvolutionParams {
            n_paths: 1000,
            budget: 10,
            seed: 3,
            antithetic: false,
        };
        let err = evolve_convolution(&kernel, &mu, &w, &v, &params).unwrap_err();
        assert_eq!(err.code(), "budget-exceeded");
    }

    #[test]
    fn crosscheck_identical_fields_is_zero() {
        let g = grid();
        let (w, v) = zero_sheets(&g);
        let kernel = SmoothingKernel::zero();
        let mu = InitialDensity::gaussian_bump(&g, 1.0, 0.5, 0.0).unwrap();
        let state = evolve_fd(&kernel, &mu, &w, &v, 0.5).unwrap();
        let d = crosscheck(&state, &state).unwrap();
        assert!(d.iter().all(|(_, rel)| *rel == 0.0));
    }

    #[test]
    fn crosscheck_rejects_grid_mismatch() {
        let g1 = grid();
        let g2 = GridSpec::new(0.25, 8, -4.0, 4.0, 32).unwrap();
        let (w1, v1) = zero_sheets(&g1);
        let (w2, v2) = (
            sample_sheet::<f64>(&g2, 1, "W").zeroed(),
            sample_sheet::<f64>(&g2, 2, "V").zeroed(),
        );
        let kernel = SmoothingKernel::zero();
        let mu1 = InitialDensity::gaussian_bump(&g1, 1.0, 0.5, 0.0).unwrap();
        let mu2 = InitialDensity::gaussian_bump(&g2, 1.0, 0.5, 0.0).unwrap();
        let a = evolve_fd(&kernel, &mu1, &w1, &v1, 0.5).unwrap();
        let b = evolve_fd(&kernel, &mu2, &w2, &v2, 0.5).unwrap();
        assert_eq!(crosscheck(&a, &b).unwrap_err().code(), "shape-error");
    }

    #[test]
    fn initial_density_validation() {
        let g = grid();
        assert!(InitialDensity::gaussian_bump(&g, -1.0, 0.5, 0.0).is_err());
        assert!(InitialDensity::tabulated(&g, vec![-0.1; 32]).is_err());
        assert!(InitialDensity::tabulated(&g, vec![0.1; 31]).is_err());
        let mu = InitialDensity::indicator(&g, 0.0, 0.5, 2.0).unwrap();
        assert_eq!(mu.max, 2.0);
        assert!(mu.mass > 0.0);
    }
}

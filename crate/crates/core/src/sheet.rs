//! Discretized noises: Brownian sheets on the space-time grid and driving
//! Brownian motions, all counter-generated so results are independent of
//! evaluation order and worker count.

use crate::error::Result;
use crate::grid::GridSpec;
use crate::kernel::SmoothingKernel;
use crate::rng::{self, Stream};
use crate::scalar::{real, Real};

/// Read access to sheet increments `dW[i][j] ~ N(0, dt*dy)`.
///
/// `DenseSheet` materializes the whole matrix once and is shared read-only
/// across workers; `LazySheet` computes each cell on demand from the counter
/// generator. Both produce bit-identical values for the same
/// `(seed, stream, i, j)`.
pub trait SheetView<T: Real>: Sync {
    fn grid(&self) -> &GridSpec<T>;
    fn increment(&self, i: usize, j: usize) -> T;
    fn seed_id(&self) -> u64;
}

#[derive(Debug, Clone)]
pub struct DenseSheet<T> {
    grid: GridSpec<T>,
    increments: Vec<T>, // row-major [i][j]
    seed_id: u64,
}

#[derive(Debug, Clone)]
pub struct LazySheet<T> {
    grid: GridSpec<T>,
    seed: u64,
    stream: Stream,
    scale: T,
    seed_id: u64,
}

/// Per-cell increment as a pure function of the generator key.
#[inline]
fn cell_increment<T: Real>(seed: u64, stream: Stream, scale: T, i: usize, j: usize) -> T {
    scale * real::<T>(rng::normal(seed, stream, i as u64, j as u64))
}

pub fn sample_sheet<T: Real>(grid: &GridSpec<T>, seed: u64, stream: &str) -> DenseSheet<T> {
    let s = Stream::new(stream);
    let scale = (grid.dt() * grid.dy()).sqrt();
    let mut increments = Vec::with_capacity(grid.n_t * grid.n_x);
    for i in 0..grid.n_t {
        for j in 0..grid.n_x {
            increments.push(cell_increment(seed, s, scale, i, j));
        }
    }
    DenseSheet {
        grid: grid.clone(),
        increments,
        seed_id: seed,
    }
}

pub fn lazy_sheet<T: Real>(grid: &GridSpec<T>, seed: u64, stream: &str) -> LazySheet<T> {
    LazySheet {
        grid: grid.clone(),
        seed,
        stream: Stream::new(stream),
        scale: (grid.dt() * grid.dy()).sqrt(),
        seed_id: seed,
    }
}

impl<T: Real> SheetView<T> for DenseSheet<T> {
    fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    #[inline]
    fn increment(&self, i: usize, j: usize) -> T {
        self.increments[i * self.grid.n_x + j]
    }

    fn seed_id(&self) -> u64 {
        self.seed_id
    }
}

impl<T: Real> SheetView<T> for LazySheet<T> {
    fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    #[inline]
    fn increment(&self, i: usize, j: usize) -> T {
        cell_increment(self.seed, self.stream, self.scale, i, j)
    }

    fn seed_id(&self) -> u64 {
        self.seed_id
    }
}

impl<T: Real> DenseSheet<T> {
    /// Mean of dW^2/(dt*dy) over all cells; a freshly sampled sheet should
    /// see this within 5/sqrt(n_t*n_x) of 1.
    pub fn variance_statistic(&self) -> T {
        let scale = self.grid.dt() * self.grid.dy();
        let n = real::<T>(self.increments.len() as f64);
        self.increments.iter().map(|w| *w * *w).sum::<T>() / (scale * n)
    }

    /// Zero every increment; used to switch a noise source off while keeping
    /// the interface.
    pub fn zeroed(mut self) -> Self {
        for w in &mut self.increments {
            *w = T::zero();
        }
        self
    }
}

/// One time-slice of the smoothed sheet integral:
/// `w * sum_j h^(order)(y_j - center) dW[i][j]`, skipping cells outside the
/// kernel support.
pub fn sheet_line_integral<T: Real>(
    sheet: &impl SheetView<T>,
    kernel: &SmoothingKernel<T>,
    order: usize,
    time_index: usize,
    center: T,
    weight: T,
) -> Result<T> {
    if weight == T::zero() || kernel.is_zero() {
        return Ok(T::zero());
    }
    let grid = sheet.grid();
    let (lo, hi) = grid.window(center, kernel.support_radius());
    let mut acc = T::zero();
    for j in lo..hi {
        acc += kernel.eval(order, grid.y(j) - center)? * sheet.increment(time_index, j);
    }
    Ok(weight * acc)
}

/// All three slice orders plus the discrete norms of h' at `center`, in one
/// pass over the support window. Returns (s0, s1, s2, ||h'||^2_disc).
#[inline]
pub fn sheet_slices<T: Real>(
    sheet: &impl SheetView<T>,
    kernel: &SmoothingKernel<T>,
    time_index: usize,
    center: T,
) -> (T, T, T, T) {
    if kernel.is_zero() {
        return (T::zero(), T::zero(), T::zero(), T::zero());
    }
    let grid = sheet.grid();
    let (lo, hi) = grid.window(center, kernel.support_radius());
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut h1sq = T::zero();
    for j in lo..hi {
        let (w0, w1, w2) = kernel.weights(grid.y(j) - center);
        let dw = sheet.increment(time_index, j);
        s0 += w0 * dw;
        s1 += w1 * dw;
        s2 += w2 * dw;
        h1sq += w1 * w1;
    }
    (s0, s1, s2, h1sq * grid.dy())
}

/// `sum_j h^(order)(y_j - center)^2 dy`: the grid-level squared norm that
/// replaces the continuum norm in exponent corrections.
pub fn discrete_norm_sq<T: Real>(
    grid: &GridSpec<T>,
    kernel: &SmoothingKernel<T>,
    order: usize,
    center: T,
) -> T {
    if kernel.is_zero() {
        return T::zero();
    }
    let (lo, hi) = grid.window(center, kernel.support_radius());
    let mut acc = T::zero();
    for j in lo..hi {
        let v = kernel
            .eval(order, grid.y(j) - center)
            .expect("finite grid point");
        acc += v * v;
    }
    acc * grid.dy()
}

/// Discretized driving Brownian motion: increments `dB[i] ~ N(0, dt)` and
/// partial sums with `B_0 = 0`.
#[derive(Debug, Clone)]
pub struct BrownianPath<T> {
    pub increments: Vec<T>,
    pub values: Vec<T>,
    pub seed_id: u64,
}

pub fn sample_bm<T: Real>(grid: &GridSpec<T>, seed: u64, stream: &str) -> BrownianPath<T> {
    let s = Stream::new(stream);
    bm_from_stream(grid, seed, s, false)
}

/// Brownian path for ensemble member `path_index` (stream "B/<k>"); the
/// antithetic partner negates every increment.
pub fn sample_bm_indexed<T: Real>(
    grid: &GridSpec<T>,
    seed: u64,
    path_index: u64,
    negate: bool,
) -> BrownianPath<T> {
    bm_from_stream(grid, seed, Stream::brownian(path_index), negate)
}

fn bm_from_stream<T: Real>(
    grid: &GridSpec<T>,
    seed: u64,
    stream: Stream,
    negate: bool,
) -> BrownianPath<T> {
    let scale = if negate {
        -grid.dt().sqrt()
    } else {
        grid.dt().sqrt()
    };
    let mut increments = Vec::with_capacity(grid.n_t);
    let mut values = Vec::with_capacity(grid.n_t + 1);
    values.push(T::zero());
    let mut acc = T::zero();
    for i in 0..grid.n_t {
        let db = scale * real::<T>(rng::normal(seed, stream, i as u64, 0));
        increments.push(db);
        acc += db;
        values.push(acc);
    }
    BrownianPath {
        increments,
        values,
        seed_id: seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec<f64> {
        GridSpec::new(1.0, 16, -8.0, 8.0, 64).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = grid();
        let a = sample_sheet(&g, 42, "W");
        let b = sample_sheet(&g, 42, "W");
        assert_eq!(a.increments, b.increments);
        let p = sample_bm::<f64>(&g, 42, "B/0");
        let q = sample_bm::<f64>(&g, 42, "B/0");
        assert_eq!(p.increments, q.increments);
    }

    #[test]
    fn lazy_view_matches_dense() {
        let g = grid();
        let dense = sample_sheet::<f64>(&g, 9, "W");
        let lazy = lazy_sheet::<f64>(&g, 9, "W");
        for i in [0, 5, 15] {
            for j in [0, 31, 63] {
                assert_eq!(
                    dense.increment(i, j).to_bits(),
                    lazy.increment(i, j).to_bits()
                );
            }
        }
    }

    #[test]
    fn sheet_variance_statistic_in_band() {
        let g = grid();
        let s = sample_sheet::<f64>(&g, 1, "W");
        let stat = s.variance_statistic();
        let band = 5.0 / ((g.n_t * g.n_x) as f64).sqrt();
        assert!((stat - 1.0).abs() < band, "stat {stat}, band {band}");
    }

    #[test]
    fn single_cell_variance_over_seeds() {
        // 1x1 grid with dt = dy = 1: increment is a standard normal; its
        // sample variance over 1e5 seeds sits in [0.98, 1.02]
        let g = GridSpec::new(1.0, 1, 0.0, 1.0, 1).unwrap();
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for seed in 0..n {
            let w = sample_sheet::<f64>(&g, seed, "W").increment(0, 0);
            sum += w;
            sum2 += w * w;
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        assert!((0.98..=1.02).contains(&var), "variance {var}");
    }

    #[test]
    fn streams_are_uncorrelated() {
        let g = grid();
        let w = sample_sheet::<f64>(&g, 123, "W");
        let v = sample_sheet::<f64>(&g, 123, "V");
        let n = (g.n_t * g.n_x) as f64;
        let scale = g.dt() * g.dy();
        let mut corr = 0.0;
        for i in 0..g.n_t {
            for j in 0..g.n_x {
                corr += w.increment(i, j) * v.increment(i, j);
            }
        }
        corr /= n * scale;
        assert!(corr.abs() < 5.0 / n.sqrt(), "correlation {corr}");
    }

    #[test]
    fn refinement_aggregation_keeps_cell_variance() {
        // aggregate a (2n_t, 2n_x) sheet over 2x2 blocks; pooled variance of
        // the aggregated cells must match the coarse spec
        let coarse = grid();
        let fine = GridSpec::new(1.0, 32, -8.0, 8.0, 128).unwrap();
        let mut pooled = 0.0;
        let mut count = 0usize;
        for seed in 0..40u64 {
            let s = sample_sheet::<f64>(&fine, seed, "W");
            for i in 0..coarse.n_t {
                for j in 0..coarse.n_x {
                    let agg = s.increment(2 * i, 2 * j)
                        + s.increment(2 * i, 2 * j + 1)
                        + s.increment(2 * i + 1, 2 * j)
                        + s.increment(2 * i + 1, 2 * j + 1);
                    pooled += agg * agg;
                    count += 1;
                }
            }
        }
        let cell_var = coarse.dt() * coarse.dy();
        let stat = pooled / (count as f64 * cell_var);
        let band = 5.0 / (count as f64).sqrt();
        assert!((stat - 1.0).abs() < band, "pooled {stat}, band {band}");
    }

    #[test]
    fn line_integral_zero_cases() {
        let g = grid();
        let s = sample_sheet::<f64>(&g, 3, "W");
        let zero = SmoothingKernel::zero();
        assert_eq!(
            sheet_line_integral(&s, &zero, 0, 0, 0.0, 1.0).unwrap(),
            0.0
        );
        let bump = SmoothingKernel::gaussian_bump(1.0, 1.0).unwrap();
        assert_eq!(
            sheet_line_integral(&s, &bump, 0, 0, 0.0, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn line_integral_variance_matches_discrete_norm() {
        let g = grid();
        let bump = SmoothingKernel::gaussian_bump(1.0, 1.0).unwrap();
        let expect = discrete_norm_sq(&g, &bump, 0, 0.0) * g.dt();
        let n = 100_000u64;
        let mut sum2 = 0.0;
        for seed in 0..n {
            let s = lazy_sheet::<f64>(&g, seed, "W");
            let v = sheet_line_integral(&s, &bump, 0, 0, 0.0, 1.0).unwrap();
            sum2 += v * v;
        }
        let var = sum2 / n as f64;
        // chi-square standard error of a variance estimate
        let se = expect * (2.0 / n as f64).sqrt();
        assert!(
            (var - expect).abs() < 3.0 * se,
            "var {var}, expect {expect}, se {se}"
        );
    }

    #[test]
    fn full_integral_along_fixed_path_is_gaussian_with_norm_variance() {
        // variance of sum_i slice(0, i, xi_i) along a fixed deterministic
        // path is ||h||^2_disc * t
        let g = grid();
        let bump = SmoothingKernel::gaussian_bump(1.0, 1.0).unwrap();
        let path: Vec<f64> = (0..g.n_t).map(|i| 0.1 * i as f64 - 0.8).collect();
        let expect: f64 = path
            .iter()
            .map(|x| discrete_norm_sq(&g, &bump, 0, *x) * g.dt())
            .sum();
        let n = 50_000u64;
        let mut sum2 = 0.0;
        for seed in 0..n {
            let s = lazy_sheet::<f64>(&g, seed, "W");
            let mut total = 0.0;
            for (i, x) in path.iter().enumerate() {
                total += sheet_line_integral(&s, &bump, 0, i, *x, 1.0).unwrap();
            }
            sum2 += total * total;
        }
        let var = sum2 / n as f64;
        let se = expect * (2.0 / n as f64).sqrt();
        assert!(
            (var - expect).abs() < 3.0 * se,
            "var {var}, expect {expect}"
        );
    }

    #[test]
    fn brownian_path_partial_sums_exact() {
        let g = grid();
        let p = sample_bm::<f64>(&g, 5, "B/0");
        assert_eq!(p.values[0], 0.0);
        for i in 0..g.n_t {
            assert_eq!(p.values[i + 1], p.values[i] + p.increments[i]);
        }
        // single-step grid: B_T equals the only increment
        let g1 = GridSpec::new(1.0, 1, 0.0, 1.0, 1).unwrap();
        let p1 = sample_bm::<f64>(&g1, 5, "B/0");
        assert_eq!(p1.values[1], p1.increments[0]);
    }

    #[test]
    fn bm_terminal_variance_over_seeds() {
        let g = GridSpec::new(2.0, 8, 0.0, 1.0, 1).unwrap();
        let n = 100_000u64;
        let mut sum2 = 0.0;
        for seed in 0..n {
            let b = sample_bm::<f64>(&g, seed, "B/0");
            sum2 += b.values[g.n_t] * b.values[g.n_t];
        }
        let var = sum2 / n as f64;
        let se = g.t_max * (2.0 / n as f64).sqrt();
        assert!(
            (var - g.t_max).abs() < 3.0 * se,
            "E[B_T^2] = {var}, want {}",
            g.t_max
        );
    }

    #[test]
    fn antithetic_path_negates_increments() {
        let g = grid();
        let p = sample_bm_indexed::<f64>(&g, 11, 4, false);
        let m = sample_bm_indexed::<f64>(&g, 11, 4, true);
        for i in 0..g.n_t {
            assert_eq!(p.increments[i], -m.increments[i]);
        }
    }
}

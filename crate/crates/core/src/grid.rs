//! Space-time grid on which all noises and fields are discretized.

use crate::error::{Error, Result};
use crate::kernel::SmoothingKernel;
use crate::scalar::{real, Real};

/// Uniform grid on `[0, t_max] x [x_min, x_max]`: `n_t` time steps of size
/// `dt`, `n_x` spatial cells of width `dy` with centers `y_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<T> {
    pub t_max: T,
    pub n_t: usize,
    pub x_min: T,
    pub x_max: T,
    pub n_x: usize,
}

impl<T: Real> GridSpec<T> {
    pub fn new(t_max: T, n_t: usize, x_min: T, x_max: T, n_x: usize) -> Result<Self> {
        if !(t_max > T::zero()) || n_t == 0 || n_x == 0 || !(x_max > x_min) {
            return Err(Error::InvalidArgument(format!(
                "grid needs t_max > 0, n_t > 0, n_x > 0, x_max > x_min; got t_max={t_max}, n_t={n_t}, [{x_min}, {x_max}], n_x={n_x}"
            )));
        }
        Ok(GridSpec {
            t_max,
            n_t,
            x_min,
            x_max,
            n_x,
        })
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.t_max / real::<T>(self.n_t as f64)
    }

    #[inline]
    pub fn dy(&self) -> T {
        (self.x_max - self.x_min) / real::<T>(self.n_x as f64)
    }

    /// Center of spatial cell `j`.
    #[inline]
    pub fn y(&self, j: usize) -> T {
        self.x_min + self.dy() * (real::<T>(j as f64) + real::<T>(0.5))
    }

    pub fn time(&self, i: usize) -> T {
        self.dt() * real::<T>(i as f64)
    }

    /// Cell index range whose centers lie within `radius` of `center`,
    /// clipped to the grid.
    #[inline]
    pub fn window(&self, center: T, radius: T) -> (usize, usize) {
        let dy = self.dy();
        let lo = ((center - radius - self.x_min) / dy - real::<T>(0.5))
            .ceil()
            .max(T::zero())
            .to_f64_lossy() as usize;
        let hi_f = ((center + radius - self.x_min) / dy - real::<T>(0.5)).floor();
        if hi_f < T::zero() {
            return (0, 0);
        }
        let hi = (hi_f.to_f64_lossy() as usize).min(self.n_x.saturating_sub(1));
        if lo > hi {
            (0, 0)
        } else {
            (lo, hi + 1)
        }
    }

    /// Safety-margin check for particle experiments: the truncated domain
    /// should hold the kernel support plus a generous diffusion span.
    /// Violations are reported as warnings, not errors.
    pub fn margin_warnings(&self, kernel: &SmoothingKernel<T>) -> Vec<String> {
        let mut warnings = Vec::new();
        let h2 = kernel.norm(0) * kernel.norm(0);
        let span = (real::<T>(2.0) * (T::one() + h2) * self.t_max).sqrt() * real::<T>(4.0);
        let needed = real::<T>(4.0) * (kernel.support_radius() + span);
        let width = self.x_max - self.x_min;
        if width < needed {
            warnings.push(format!(
                "grid width {width} is below the recommended margin {needed} \
                 (kernel support {} + diffusion span {span})",
                kernel.support_radius()
            ));
        }
        warnings
    }
}

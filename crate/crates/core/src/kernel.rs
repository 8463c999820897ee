//! The smoothing kernel h through which the environment sheet acts on a
//! particle, together with its first two derivatives and L2 norms.
//!
//! Families: identically zero, a Gaussian bump `a*exp(-x^2/(2 sigma^2))`
//! (all norms closed-form), and a tabulated kernel interpolated by a clamped
//! C2 cubic spline (so the second derivative stays continuous).

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Below this magnitude the kernel and its derivatives are treated as zero;
/// defines `support_radius`.
pub const TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Zero,
    GaussianBump,
    Tabulated,
}

#[derive(Debug, Clone)]
enum Repr<T> {
    Zero,
    Gaussian {
        amplitude: T,
        sigma: T,
    },
    Table {
        x0: T,
        dx: T,
        values: Vec<T>,
        /// Spline second derivatives at the nodes (clamped ends).
        second: Vec<T>,
    },
}

#[derive(Debug, Clone)]
pub struct SmoothingKernel<T> {
    repr: Repr<T>,
    norms: [T; 3],
    support_radius: T,
}

impl<T: Real> SmoothingKernel<T> {
    pub fn zero() -> Self {
        SmoothingKernel {
            repr: Repr::Zero,
            norms: [T::zero(); 3],
            support_radius: T::zero(),
        }
    }

    pub fn gaussian_bump(amplitude: T, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() || !amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gaussian bump needs finite amplitude and sigma > 0, got a={amplitude}, sigma={sigma}"
            )));
        }
        let a2 = amplitude * amplitude;
        let sqrt_pi = real::<T>(std::f64::consts::PI).sqrt();
        let norms = [
            (a2 * sigma * sqrt_pi).sqrt(),
            (a2 * sqrt_pi / (real::<T>(2.0) * sigma)).sqrt(),
            (real::<T>(0.75) * a2 * sqrt_pi / (sigma * sigma * sigma)).sqrt(),
        ];
        let support_radius = gaussian_support(amplitude, sigma);
        Ok(SmoothingKernel {
            repr: Repr::Gaussian { amplitude, sigma },
            norms,
            support_radius,
        })
    }

    /// Tabulated kernel: `values[k]` sampled at `x0 + k*dx`, zero outside.
    pub fn tabulated(x0: T, dx: T, values: Vec<T>) -> Result<Self> {
        if values.len() < 8 {
            return Err(Error::UnderResolvedKernel(values.len()));
        }
        if !(dx > T::zero()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "tabulated kernel needs dx > 0 and finite samples".into(),
            ));
        }
        let second = clamped_spline_second(&values, dx);
        let mut kernel = SmoothingKernel {
            repr: Repr::Table {
                x0,
                dx,
                values,
                second,
            },
            norms: [T::zero(); 3],
            support_radius: T::zero(),
        };
        kernel.norms = kernel.table_norms(1);
        kernel.support_radius = kernel.table_support();
        Ok(kernel)
    }

    pub fn family(&self) -> KernelFamily {
        match self.repr {
            Repr::Zero => KernelFamily::Zero,
            Repr::Gaussian { .. } => KernelFamily::GaussianBump,
            Repr::Table { .. } => KernelFamily::Tabulated,
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.repr {
            Repr::Zero => true,
            Repr::Gaussian { amplitude, .. } => *amplitude == T::zero(),
            Repr::Table { values, .. } => values.iter().all(|v| *v == T::zero()),
        }
    }

    /// h^(order)(x) for order in {0,1,2}.
    pub fn eval(&self, order: usize, x: T) -> Result<T> {
        if order > 2 {
            return Err(Error::InvalidArgument(format!(
                "derivative order must be 0, 1 or 2, got {order}"
            )));
        }
        if !x.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite argument {x}")));
        }
        let (w0, w1, w2) = self.weights(x);
        Ok([w0, w1, w2][order])
    }

    /// (h, h', h'')(x) in one pass; the hot path for sheet slices.
    #[inline]
    pub fn weights(&self, x: T) -> (T, T, T) {
        match &self.repr {
            Repr::Zero => (T::zero(), T::zero(), T::zero()),
            Repr::Gaussian { amplitude, sigma } => {
                let s2 = *sigma * *sigma;
                let g = *amplitude * (-x * x / (real::<T>(2.0) * s2)).exp();
                (g, -x / s2 * g, (x * x - s2) / (s2 * s2) * g)
            }
            Repr::Table {
                x0,
                dx,
                values,
                second,
            } => table_weights(*x0, *dx, values, second, x),
        }
    }

    /// (||h||, ||h'||, ||h''||) on L2(R).
    pub fn l2_norms(&self) -> (T, T, T) {
        (self.norms[0], self.norms[1], self.norms[2])
    }

    pub fn norm(&self, order: usize) -> T {
        self.norms[order]
    }

    /// ||h||_{1,2}^2 = ||h||^2 + ||h'||^2, reported so runs near the older
    /// literature's threshold of 2 can be compared.
    pub fn sobolev_12_sq(&self) -> T {
        self.norms[0] * self.norms[0] + self.norms[1] * self.norms[1]
    }

    /// Distance beyond which |h|, |h'|, |h''| all stay below `TAIL_TOL`.
    pub fn support_radius(&self) -> T {
        self.support_radius
    }

    /// Composite-Simpson norms over the table at `refine` points per spacing.
    fn table_norms(&self, refine: usize) -> [T; 3] {
        let Repr::Table { x0, dx, values, .. } = &self.repr else {
            return self.norms;
        };
        let n = (values.len() - 1) * refine * 2; // even interval count
        let h = *dx / real::<T>((refine * 2) as f64);
        let mut acc = [T::zero(); 3];
        for k in 0..=n {
            let x = *x0 + h * real::<T>(k as f64);
            let (w0, w1, w2) = self.weights(x);
            let simpson = if k == 0 || k == n {
                T::one()
            } else if k % 2 == 1 {
                real::<T>(4.0)
            } else {
                real::<T>(2.0)
            };
            acc[0] += simpson * w0 * w0;
            acc[1] += simpson * w1 * w1;
            acc[2] += simpson * w2 * w2;
        }
        let scale = h / real::<T>(3.0);
        [
            (acc[0] * scale).sqrt(),
            (acc[1] * scale).sqrt(),
            (acc[2] * scale).sqrt(),
        ]
    }

    /// Same quadrature at half the spacing; exposed for the resolution check.
    pub fn refined_table_norms(&self) -> (T, T, T) {
        let n = self.table_norms(2);
        (n[0], n[1], n[2])
    }

    fn table_support(&self) -> T {
        let Repr::Table { x0, dx, values, .. } = &self.repr else {
            return T::zero();
        };
        let half = *dx * real::<T>(0.5);
        let mut radius = T::zero();
        let tol = real::<T>(TAIL_TOL);
        for k in 0..values.len() * 2 {
            let x = *x0 + half * real::<T>(k as f64);
            let (w0, w1, w2) = self.weights(x);
            if w0.abs() > tol || w1.abs() > tol || w2.abs() > tol {
                radius = radius.max(x.abs());
            }
        }
        radius + *dx
    }
}

fn gaussian_support<T: Real>(amplitude: T, sigma: T) -> T {
    if amplitude == T::zero() {
        return T::zero();
    }
    let a = amplitude.abs().to_f64_lossy();
    let s = sigma.to_f64_lossy();
    let tol = TAIL_TOL;
    // polynomial prefactors of h' and h'' grow like (r^2+s^2)/s^4; fold them
    // into the log and iterate to a fixed point
    let mut r = s * (2.0 * (a / tol).max(std::f64::consts::E).ln()).sqrt();
    for _ in 0..4 {
        let prefactor = ((r * r + s * s) / (s * s * s * s)).max(1.0);
        r = s * (2.0 * (a * prefactor / tol).max(std::f64::consts::E).ln()).sqrt();
    }
    real(r)
}

/// Second derivatives of the clamped cubic spline (end slopes zero):
/// standard tridiagonal solve.
fn clamped_spline_second<T: Real>(values: &[T], dx: T) -> Vec<T> {
    let n = values.len();
    let mut m = vec![T::zero(); n];
    let mut diag = vec![T::zero(); n];
    let mut rhs = vec![T::zero(); n];
    let two = real::<T>(2.0);
    let six = real::<T>(6.0);

    // clamped boundary rows: slope 0 at both ends
    diag[0] = two * dx;
    rhs[0] = six * ((values[1] - values[0]) / dx);
    for i in 1..n - 1 {
        diag[i] = two * (dx + dx);
        rhs[i] = six * ((values[i + 1] - values[i]) / dx - (values[i] - values[i - 1]) / dx);
    }
    diag[n - 1] = two * dx;
    rhs[n - 1] = six * (-(values[n - 1] - values[n - 2]) / dx);

    // forward sweep (sub/super diagonals are all dx)
    let mut c = vec![T::zero(); n];
    c[0] = dx / diag[0];
    rhs[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - dx * c[i - 1];
        if i < n - 1 {
            c[i] = dx / denom;
        }
        rhs[i] = (rhs[i] - dx * rhs[i - 1]) / denom;
    }
    m[n - 1] = rhs[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = rhs[i] - c[i] * m[i + 1];
    }
    m
}

#[inline]
fn table_weights<T: Real>(x0: T, dx: T, values: &[T], second: &[T], x: T) -> (T, T, T) {
    let n = values.len();
    let upper = x0 + dx * real::<T>((n - 1) as f64);
    if x < x0 || x > upper {
        return (T::zero(), T::zero(), T::zero());
    }
    let pos = (x - x0) / dx;
    let mut i = pos.floor().to_f64_lossy() as usize;
    if i >= n - 1 {
        i = n - 2;
    }
    let a = (x0 + dx * real::<T>((i + 1) as f64) - x) / dx;
    let b = T::one() - a;
    let six = real::<T>(6.0);
    let v = a * values[i]
        + b * values[i + 1]
        + ((a * a * a - a) * second[i] + (b * b * b - b) * second[i + 1]) * dx * dx / six;
    let d = (values[i + 1] - values[i]) / dx
        - (real::<T>(3.0) * a * a - T::one()) / six * dx * second[i]
        + (real::<T>(3.0) * b * b - T::one()) / six * dx * second[i + 1];
    let dd = a * second[i] + b * second[i + 1];
    (v, d, dd)
}

#[cfg(test)]
mod tests {
    use super::*;

    type K = SmoothingKernel<f64>;

    /// Adaptive-refinement trapezoid quadrature of eval(order)^2, the
    /// independent oracle for the closed-form norms.
    fn quadrature_norm(kernel: &K, order: usize) -> f64 {
        let r = kernel.support_radius().max(1.0);
        let mut n = 1 << 12;
        let mut prev = f64::INFINITY;
        loop {
            let h = 2.0 * r / n as f64;
            let mut acc = 0.0;
            for k in 0..=n {
                let x = -r + h * k as f64;
                let v = kernel.eval(order, x).unwrap();
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                acc += w * v * v;
            }
            let val = (acc * h).sqrt();
            if (val - prev).abs() <= 1e-9 * val.max(1e-30) || n > 1 << 20 {
                return val;
            }
            prev = val;
            n *= 2;
        }
    }

    #[test]
    fn zero_kernel_is_zero_everywhere() {
        let k = K::zero();
        assert_eq!(k.eval(0, 1.7).unwrap(), 0.0);
        assert_eq!(k.l2_norms(), (0.0, 0.0, 0.0));
        assert_eq!(k.support_radius(), 0.0);
    }

    #[test]
    fn gaussian_bump_point_values() {
        let k = K::gaussian_bump(2.0, 0.5).unwrap();
        assert_eq!(k.eval(0, 0.0).unwrap(), 2.0); // peak equals amplitude
        let k = K::gaussian_bump(1.0, 1.0).unwrap();
        assert_eq!(k.eval(1, 0.0).unwrap(), 0.0); // odd derivative at center
    }

    #[test]
    fn gaussian_bump_norms_match_closed_forms_and_quadrature() {
        let k = K::gaussian_bump(1.0, 1.0).unwrap();
        let (n0, n1, n2) = k.l2_norms();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert!((n0 * n0 - sqrt_pi).abs() < 1e-12, "||h||^2 = {}", n0 * n0);
        assert!((n0 - 1.3313353638003897).abs() < 1e-9);
        assert!((n1 * n1 - sqrt_pi / 2.0).abs() < 1e-12);
        for order in 0..3 {
            let oracle = quadrature_norm(&k, order);
            let claimed = [n0, n1, n2][order];
            assert!(
                (oracle - claimed).abs() <= 1e-6 * claimed,
                "order {order}: quadrature {oracle} vs closed form {claimed}"
            );
        }
    }

    #[test]
    fn amplitude_scaling_doubles_norms() {
        let k1 = K::gaussian_bump(1.0, 0.7).unwrap();
        let k2 = K::gaussian_bump(2.0, 0.7).unwrap();
        let (a0, a1, a2) = k1.l2_norms();
        let (b0, b1, b2) = k2.l2_norms();
        assert!((b0 - 2.0 * a0).abs() < 1e-14);
        assert!((b1 - 2.0 * a1).abs() < 1e-14);
        assert!((b2 - 2.0 * a2).abs() < 1e-14);
    }

    #[test]
    fn support_radius_bounds_the_tail() {
        for (a, s) in [(1.0, 1.0), (2.0, 0.5), (0.3, 2.0)] {
            let k = K::gaussian_bump(a, s).unwrap();
            let r = k.support_radius();
            for order in 0..3 {
                let v = k.eval(order, r).unwrap().abs();
                assert!(v < TAIL_TOL, "a={a} s={s} order={order}: |h|({r}) = {v}");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(K::gaussian_bump(1.0, 0.0).is_err());
        let k = K::gaussian_bump(1.0, 1.0).unwrap();
        assert_eq!(
            k.eval(0, f64::NAN).unwrap_err().code(),
            "invalid-argument"
        );
        assert_eq!(k.eval(3, 0.0).unwrap_err().code(), "invalid-argument");
    }

    fn gaussian_table(n: usize) -> K {
        let x0 = -8.0;
        let dx = 16.0 / (n - 1) as f64;
        let values: Vec<f64> = (0..n)
            .map(|k| {
                let x = x0 + dx * k as f64;
                (-x * x / 2.0).exp()
            })
            .collect();
        K::tabulated(x0, dx, values).unwrap()
    }

    #[test]
    fn tabulated_interpolates_the_gaussian() {
        let k = gaussian_table(801);
        for &x in &[0.0f64, 0.3, -1.2, 2.7] {
            let exact = (-x * x / 2.0).exp();
            let v = k.eval(0, x).unwrap();
            assert!((v - exact).abs() < 1e-7, "x={x}: {v} vs {exact}");
            let d_exact = -x * exact;
            assert!((k.eval(1, x).unwrap() - d_exact).abs() < 1e-5);
            let dd_exact = (x * x - 1.0) * exact;
            assert!((k.eval(2, x).unwrap() - dd_exact).abs() < 1e-3);
        }
        assert_eq!(k.eval(0, 100.0).unwrap(), 0.0); // outside the table
    }

    #[test]
    fn tabulated_norms_stable_under_refinement() {
        let k = gaussian_table(801);
        let (n0, n1, n2) = k.l2_norms();
        let (r0, r1, r2) = k.refined_table_norms();
        assert!((n0 - r0).abs() <= 1e-6 * r0, "{n0} vs {r0}");
        assert!((n1 - r1).abs() <= 1e-6 * r1, "{n1} vs {r1}");
        assert!((n2 - r2).abs() <= 1e-6 * r2.max(1.0), "{n2} vs {r2}");
        // and they agree with the continuum Gaussian values
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert!((n0 * n0 - sqrt_pi).abs() < 1e-4);
        assert!((n1 * n1 - sqrt_pi / 2.0).abs() < 1e-4);
    }

    #[test]
    fn tabulated_rejects_short_tables() {
        let err = K::tabulated(0.0, 0.1, vec![0.0; 7]).unwrap_err();
        assert_eq!(err.code(), "under-resolved-kernel");
    }

    #[test]
    fn generic_over_f32() {
        let k = SmoothingKernel::<f32>::gaussian_bump(1.0, 1.0).unwrap();
        assert!((k.eval(0, 0.0).unwrap() - 1.0).abs() < 1e-6);
    }
}

//! Natural cubic splines on a uniform grid, optionally built on a
//! band-limited oversampled copy of the input.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Natural cubic spline through samples at integer abscissae `0..n`.
#[derive(Debug, Clone)]
pub struct UniformSpline {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl UniformSpline {
    pub fn new(y: Vec<f64>) -> Self {
        let n = y.len();
        let mut m = vec![0.0; n];
        if n >= 3 {
            // Tridiagonal system M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1])
            // for interior points, with M[0] = M[n-1] = 0.
            let k = n - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]);
                if i == 0 {
                    c[0] = 1.0 / 4.0;
                    d[0] = rhs / 4.0;
                } else {
                    let denom = 4.0 - c[i - 1];
                    c[i] = 1.0 / denom;
                    d[i] = (rhs - d[i - 1]) / denom;
                }
            }
            m[k] = d[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = d[i] - c[i] * m[i + 2];
            }
        }
        Self { y, m }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Evaluates at `x`, clamped to `[0, n-1]`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        match n {
            0 => return 0.0,
            1 => return self.y[0],
            _ => {}
        }
        let x = x.clamp(0.0, (n - 1) as f64);
        let i = (x.floor() as usize).min(n - 2);
        let t = x - i as f64;
        let s = 1.0 - t;
        s * self.y[i] + t * self.y[i + 1] + ((s * s * s - s) * self.m[i] + (t * t * t - t) * self.m[i + 1]) / 6.0
    }
}

/// FFT plans for band-limited upsampling of length-`n` sequences by `factor`.
#[derive(Clone)]
pub struct Upsampler {
    n: usize,
    factor: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Upsampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Upsampler").field("n", &self.n).field("factor", &self.factor).finish()
    }
}

impl Upsampler {
    pub fn new(planner: &mut FftPlanner<f64>, n: usize, factor: usize) -> Self {
        let factor = factor.max(1);
        Self { n, factor, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n * factor) }
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Band-limited interpolation by zero-padding the spectrum. The linear
    /// trend between the end points is removed first so the implied periodic
    /// extension is continuous, then restored exactly. Returns the
    /// `factor * (n - 1) + 1` points spanning the original support.
    pub fn upsample(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "upsampler built for another length");
        let n = self.n;
        let u = self.factor;
        if u == 1 || n < 2 {
            return x.to_vec();
        }
        let x0 = x[0];
        let slope = (x[n - 1] - x0) / (n - 1) as f64;
        let mut spec: Vec<Complex64> =
            x.iter().enumerate().map(|(i, &v)| Complex64::new(v - x0 - slope * i as f64, 0.0)).collect();
        self.forward.process(&mut spec);

        let big_n = n * u;
        let mut big = vec![Complex64::new(0.0, 0.0); big_n];
        let half = n / 2;
        if n.is_multiple_of(2) {
            big[..half].copy_from_slice(&spec[..half]);
            for k in 1..half {
                big[big_n - k] = spec[n - k];
            }
            big[half] = spec[half] * 0.5;
            big[big_n - half] = spec[half] * 0.5;
        } else {
            big[..=half].copy_from_slice(&spec[..=half]);
            for k in 1..=half {
                big[big_n - k] = spec[n - k];
            }
        }
        self.inverse.process(&mut big);

        let scale = 1.0 / n as f64;
        let len = u * (n - 1) + 1;
        let step = slope / u as f64;
        big[..len].iter().enumerate().map(|(j, c)| c.re * scale + x0 + step * j as f64).collect()
    }
}

/// Cubic spline over an oversampled copy of a sequence, evaluated in units of
/// the original sample index.
#[derive(Debug, Clone)]
pub struct OversampledSpline {
    spline: UniformSpline,
    factor: f64,
}

impl OversampledSpline {
    pub fn new(x: &[f64], upsampler: &Upsampler) -> Self {
        Self { spline: UniformSpline::new(upsampler.upsample(x)), factor: upsampler.factor() as f64 }
    }

    #[inline]
    pub fn eval(&self, position: f64) -> f64 {
        self.spline.eval(position * self.factor)
    }
}

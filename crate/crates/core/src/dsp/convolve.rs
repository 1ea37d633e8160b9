use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};

/// Kernels up to this many taps use direct summation.
pub const DIRECT_MAX_TAPS: usize = 64;

/// Full linear convolution truncated to `x.len()` samples, by direct summation.
pub fn convolve_direct(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let kmax = kernel.len().min(n + 1);
        *out = (0..kmax).map(|k| kernel[k] * x[n - k]).sum();
    }
    y
}

/// Same result as [`convolve_direct`], via zero-padded FFTs.
pub fn convolve_fft(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let full = x.len() + kernel.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        buf
    };
    let mut a = pad(x);
    let mut b = pad(kernel);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..x.len()].iter().map(|c| c.re * scale).collect()
}

/// Convolves a waveform with `kernel`, keeping the input length (tail dropped).
pub fn convolve(w: &Waveform, kernel: &[f64]) -> Result<Waveform> {
    if kernel.is_empty() {
        return Err(Error::arg("convolution kernel is empty"));
    }
    let x = w.to_f64();
    let y = if kernel.len() <= DIRECT_MAX_TAPS {
        convolve_direct(&x, kernel)
    } else {
        convolve_fft(&x, kernel)
    };
    Waveform::from_f64(&y, w.sample_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;

    #[test]
    fn unit_kernel_is_identity() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], 8000).unwrap();
        assert_eq!(convolve(&w, &[1.0]).unwrap(), w);
        assert!(matches!(convolve(&w, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let mut x = vec![0.0; 10];
        x[0] = 1.0;
        let k = [0.5, -0.25, 0.125, 0.0625];
        let y = convolve_direct(&x, &k);
        assert_eq!(&y[..4], &k);
        assert!(y[4..].iter().all(|&v| v == 0.0));
        let short = convolve_direct(&x[..2], &k);
        assert_eq!(short, vec![0.5, -0.25]);
    }

    #[test]
    fn fft_matches_direct_oracle() {
        let mut rng = rng_from(&[77]);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = convolve_direct(&x, &k);
        let f = convolve_fft(&x, &k);
        let diff = d.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn distributes_over_addition() {
        let mut rng = rng_from(&[78]);
        let a: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let lhs = convolve_fft(&sum, &k);
        let ra = convolve_fft(&a, &k);
        let rb = convolve_fft(&b, &k);
        for i in 0..300 {
            let rhs = ra[i] + rb[i];
            assert!((lhs[i] - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }
}

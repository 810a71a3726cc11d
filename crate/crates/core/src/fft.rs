//! Multidimensional complex FFT on row-major arrays, backed by `rustfft`.
//!
//! Forward transforms divide by the number of samples so that coefficients
//! are Fourier amplitudes; inverse transforms are unnormalized.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, Mutex, OnceLock};

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// In-place transform of an array with `n` points along each of `dim` axes.
pub fn fft_nd(data: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    debug_assert_eq!(data.len(), n.pow(dim as u32));
    let fft = plan(n, inverse);
    let total = data.len();
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // Last axis is contiguous.
    fft.process_with_scratch(data, &mut scratch);
    if dim > 1 {
        let mut lines = vec![Complex64::new(0.0, 0.0); total];
        for axis in 0..dim - 1 {
            let stride = n.pow((dim - 1 - axis) as u32);
            let block = stride * n;
            let mut line = 0;
            for b in (0..total).step_by(block) {
                for off in 0..stride {
                    let base = b + off;
                    for i in 0..n {
                        lines[line * n + i] = data[base + i * stride];
                    }
                    line += 1;
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            let mut line = 0;
            for b in (0..total).step_by(block) {
                for off in 0..stride {
                    let base = b + off;
                    for i in 0..n {
                        data[base + i * stride] = lines[line * n + i];
                    }
                    line += 1;
                }
            }
        }
    }
    if !inverse {
        let s = 1.0 / total as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }
}

/// Forward transform of real samples.
pub fn forward_real(samples: &[f64], n: usize, dim: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_nd(&mut buf, n, dim, false);
    buf
}

/// Inverse transform keeping the real part.
pub fn inverse_real(coeffs: &[Complex64], n: usize, dim: usize) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    fft_nd(&mut buf, n, dim, true);
    buf.into_iter().map(|z| z.re).collect()
}

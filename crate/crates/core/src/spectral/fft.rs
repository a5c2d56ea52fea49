//! Thin FFT plumbing over `rustfft`.
//!
//! A 2-D transform is rows-then-columns with an explicit transpose in
//! between, which keeps every 1-D pass on contiguous memory. Transforms are
//! unnormalized, matching `rustfft`; callers apply whatever scaling their
//! convention needs.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// In-place unnormalized 2-D DFT of a row-major `h x w` complex buffer.
pub(crate) fn dft2_in_place(h: usize, w: usize, buf: &mut [Complex<f64>], inverse: bool) {
    assert_eq!(buf.len(), h * w, "buffer does not match {h}x{w}");
    let mut planner = FftPlanner::new();
    let row_fft =
        if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }

    let col_fft =
        if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut scratch = vec![Complex::new(0.0, 0.0); h * w];
    transpose(h, w, buf, &mut scratch);
    for col in scratch.chunks_exact_mut(h) {
        col_fft.process(col);
    }
    transpose(w, h, &scratch, buf);
}

/// In-place unnormalized 1-D DFT.
pub(crate) fn dft1_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    fft.process(buf);
}

fn transpose(rows: usize, cols: usize, src: &[Complex<f64>], dst: &mut [Complex<f64>]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quadratic-time DFT straight from the definition, used to pin the fast
    /// path's conventions (sign, ordering, scaling).
    fn naive_dft2(h: usize, w: usize, x: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::new(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for iy in 0..h {
                    for ix in 0..w {
                        let phase = -std::f64::consts::TAU
                            * (ky as f64 * iy as f64 / h as f64
                                + kx as f64 * ix as f64 / w as f64);
                        acc += x[iy * w + ix] * Complex::from_polar(1.0, phase);
                    }
                }
                out[ky * w + kx] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_random_input() {
        let (h, w) = (6, 5);
        let mut rng = crate::rng::rng_fork(31, 0);
        let x: Vec<Complex<f64>> =
            (0..h * w).map(|_| Complex::new(rng.uniform_in(-1.0, 1.0), 0.0)).collect();
        let want = naive_dft2(h, w, &x);
        let mut got = x.clone();
        dft2_in_place(h, w, &mut got, false);
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).norm() < 1e-10);
        }
    }

    #[test]
    fn forward_then_inverse_recovers_input() {
        let (h, w) = (8, 12);
        let mut rng = crate::rng::rng_fork(32, 0);
        let x: Vec<Complex<f64>> =
            (0..h * w).map(|_| Complex::new(rng.normal(), rng.normal())).collect();
        let mut buf = x.clone();
        dft2_in_place(h, w, &mut buf, false);
        dft2_in_place(h, w, &mut buf, true);
        let scale = 1.0 / (h * w) as f64;
        for (got, orig) in buf.iter().zip(&x) {
            assert!((got * scale - orig).norm() < 1e-12);
        }
    }
}

//! 2-D cross-correlation over channel stacks.
//!
//! The convention throughout the crate is the machine-learning one: kernels
//! are applied without flipping (cross-correlation), inputs are `[C, H, W]`,
//! kernel banks are `[K, C, kh, kw]`, and the output is `[K, H', W']`. Padding
//! is zero-fill. Stride is always 1 here; pooling layers own their strides.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output keeps the input's spatial size. Requires odd
    /// kernel extents so the pad is symmetric.
    Same,
    /// No padding; output shrinks to `[H-kh+1, W-kw+1]`.
    Valid,
}

/// Cross-correlates `input [C,H,W]` with `kernels [K,C,kh,kw]`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, padding: Padding) -> Result<Tensor> {
    let [c, h, w] = *input.shape() else {
        return Err(Error::shape(format!("conv2d input must be [C,H,W], got {:?}", input.shape())));
    };
    let [k, kc, kh, kw] = *kernels.shape() else {
        return Err(Error::shape(format!(
            "conv2d kernels must be [K,C,kh,kw], got {:?}",
            kernels.shape()
        )));
    };
    if kc != c {
        return Err(Error::shape(format!(
            "kernel channels {kc} do not match input channels {c}"
        )));
    }
    let (oh, ow, ph, pw) = match padding {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::domain(format!(
                    "same-padding needs odd kernel extents, got {kh}x{kw}"
                )));
            }
            (h, w, kh / 2, kw / 2)
        }
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(Error::shape(format!(
                    "valid conv kernel {kh}x{kw} exceeds input {h}x{w}"
                )));
            }
            (h - kh + 1, w - kw + 1, 0, 0)
        }
    };

    let ind = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; k * oh * ow];
    for ko in 0..k {
        for ci in 0..c {
            let kbase = (ko * c + ci) * kh * kw;
            let ibase = ci * h * w;
            for oy in 0..oh {
                for dy in 0..kh {
                    // Input row for this tap; skip rows that fall in the pad.
                    let iy = oy + dy;
                    if iy < ph || iy >= h + ph {
                        continue;
                    }
                    let iy = iy - ph;
                    let irow = &ind[ibase + iy * w..ibase + (iy + 1) * w];
                    let krow = &kd[kbase + dy * kw..kbase + (dy + 1) * kw];
                    let orow = &mut out[(ko * oh + oy) * ow..(ko * oh + oy + 1) * ow];
                    for (dx, &kv) in krow.iter().enumerate() {
                        if kv == 0.0 {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox + dx;
                            if ix < pw || ix >= w + pw {
                                continue;
                            }
                            orow[ox] += kv * irow[ix - pw];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[k, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_fork;

    /// Direct transcription of the definition: five nested loops, explicit
    /// zero-padding test per tap. Reference for the production kernel above.
    fn conv2d_oracle(input: &Tensor, kernels: &Tensor, padding: Padding) -> Tensor {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (k, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
        let (oh, ow, ph, pw) = match padding {
            Padding::Same => (h, w, (kh / 2) as isize, (kw / 2) as isize),
            Padding::Valid => (h - kh + 1, w - kw + 1, 0, 0),
        };
        let mut out = Tensor::zeros(&[k, oh, ow]);
        for ko in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = oy as isize + dy as isize - ph;
                                let ix = ox as isize + dx as isize - pw;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.at(&[ci, iy as usize, ix as usize])
                                    * kernels.at(&[ko, ci, dy, dx]);
                            }
                        }
                    }
                    out.set(&[ko, oy, ox], acc);
                }
            }
        }
        out
    }

    fn random_tensor(shape: &[usize], stream: u64) -> Tensor {
        let mut rng = rng_fork(505, stream);
        Tensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0))
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = random_tensor(&[1, 6, 7], 0);
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        for pad in [Padding::Same, Padding::Valid] {
            let y = conv2d(&x, &k, pad).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn ones_kernel_on_constant_image_sums_window() {
        let x = Tensor::filled(&[1, 8, 8], 0.5);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, Padding::Same).unwrap();
        // Away from the borders every 3x3 window is fully inside the image.
        for iy in 1..7 {
            for ix in 1..7 {
                assert!((y.at(&[0, iy, ix]) - 4.5).abs() < 1e-12);
            }
        }
        let v = conv2d(&x, &k, Padding::Valid).unwrap();
        assert_eq!(v.shape(), &[1, 6, 6]);
        assert!(v.data().iter().all(|&p| (p - 4.5).abs() < 1e-12));
    }

    #[test]
    fn matches_loop_oracle_on_random_input() {
        let x = random_tensor(&[3, 9, 8], 1);
        let k = random_tensor(&[4, 3, 3, 3], 2);
        for pad in [Padding::Same, Padding::Valid] {
            let got = conv2d(&x, &k, pad).unwrap();
            let want = conv2d_oracle(&x, &k, pad);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
        }
    }

    #[test]
    fn matches_loop_oracle_with_rectangular_kernel() {
        let x = random_tensor(&[2, 7, 10], 3);
        let k = random_tensor(&[3, 2, 1, 5], 4);
        for pad in [Padding::Same, Padding::Valid] {
            let got = conv2d(&x, &k, pad).unwrap();
            let want = conv2d_oracle(&x, &k, pad);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
        }
    }

    #[test]
    fn linearity_in_the_input() {
        let k = random_tensor(&[2, 2, 3, 3], 5);
        for trial in 0..25 {
            let x = random_tensor(&[2, 6, 6], 10 + trial);
            let y = random_tensor(&[2, 6, 6], 50 + trial);
            let mut rng = rng_fork(9, trial);
            let (a, b) = (rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0));
            let mixed = x.zip_map(&y, |xv, yv| a * xv + b * yv).unwrap();
            let lhs = conv2d(&mixed, &k, Padding::Same).unwrap();
            let mut rhs = conv2d(&x, &k, Padding::Same).unwrap();
            rhs.scale(a);
            rhs.add_scaled(&conv2d(&y, &k, Padding::Same).unwrap(), b).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn rejects_even_kernel_in_same_mode() {
        let x = Tensor::zeros(&[1, 5, 5]);
        let k = Tensor::zeros(&[1, 1, 2, 3]);
        assert!(conv2d(&x, &k, Padding::Same).is_err());
        assert!(conv2d(&x, &k, Padding::Valid).is_ok());
    }

    #[test]
    fn rejects_oversized_kernel_in_valid_mode() {
        let x = Tensor::zeros(&[1, 3, 3]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &k, Padding::Valid).is_err());
        assert!(conv2d(&x, &k, Padding::Same).is_ok());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(conv2d(&x, &k, Padding::Same).is_err());
    }
}

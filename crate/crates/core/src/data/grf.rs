//! Gaussian random field imagery with power-law spectra.

use rustfft::num_complex::Complex;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_fork;
use crate::spectral::fft::dft2_in_place;
use crate::tensor::Tensor;

/// Generates `n` single-channel `height x width` images whose power spectrum
/// falls off like `(1 + rho)^(-alpha)` in the integer radial index `rho`,
/// then labels each by the sign of its correlation with a fixed low-frequency
/// template.
///
/// Construction per image: draw white Gaussian noise in real space, transform,
/// scale each frequency bin's amplitude by `(1 + rho)^(-alpha/2)` where `rho`
/// is the wrapped (centered) integer radius of the bin, transform back, keep
/// the real part, and min-max scale into `[0,1]`. `alpha = 0` is white noise;
/// larger `alpha` concentrates power at low frequencies.
///
/// The label template is `cos(2*pi*x/W) + cos(2*pi*y/H)`. It has zero mean,
/// so min-max scaling (a positive affine map) never flips the correlation
/// sign, and the class is a fixed linear functional of the image: the task is
/// linearly separable by construction.
///
/// Image `i` draws only from `rng_fork(seed, stream_offset + i)`: any slice
/// of the corpus can be regenerated without generating the rest.
pub fn gen_grf(
    n: usize,
    height: usize,
    width: usize,
    alpha: f64,
    seed: u64,
    stream_offset: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("need at least one image"));
    }
    if height < 2 || width < 2 {
        return Err(Error::shape(format!("field size {height}x{width} is too small")));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::domain(format!("spectral decay must be finite and >= 0, got {alpha}")));
    }
    let template = label_template(height, width);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_fork(seed, stream_offset + i as u64);
        let mut buf: Vec<Complex<f64>> =
            (0..height * width).map(|_| Complex::new(rng.normal(), 0.0)).collect();
        dft2_in_place(height, width, &mut buf, false);
        for iy in 0..height {
            let cy = iy.min(height - iy) as f64;
            for ix in 0..width {
                let cx = ix.min(width - ix) as f64;
                let rho = (cy * cy + cx * cx).sqrt();
                buf[iy * width + ix] *= (1.0 + rho).powf(-alpha / 2.0);
            }
        }
        dft2_in_place(height, width, &mut buf, true);
        // The overall transform scale cancels in the min-max step.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &buf {
            lo = lo.min(c.re);
            hi = hi.max(c.re);
        }
        if !(hi - lo).is_finite() || hi - lo < 1e-12 {
            return Err(Error::Degenerate(format!("field {i} is constant, cannot scale")));
        }
        let inv = 1.0 / (hi - lo);
        let img = Tensor::from_fn(&[1, height, width], |j| (buf[j].re - lo) * inv);
        let score: f64 = img.data().iter().zip(&template).map(|(a, b)| a * b).sum();
        labels.push(if score > 0.0 { 1 } else { 0 });
        images.push(img);
    }
    Dataset::new(images, labels, 2)
}

/// The fixed labeling functional; zero mean by construction.
pub fn label_template(height: usize, width: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(height * width);
    for iy in 0..height {
        for ix in 0..width {
            let v = (std::f64::consts::TAU * ix as f64 / width as f64).cos()
                + (std::f64::consts::TAU * iy as f64 / height as f64).cos();
            t.push(v);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{batch_ef, power_spectrum2d, radial_average, tail_slope};

    #[test]
    fn fields_are_deterministic_per_index() {
        let a = gen_grf(6, 16, 16, 2.0, 42, 0).unwrap();
        let b = gen_grf(6, 16, 16, 2.0, 42, 0).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data(), y.data());
        }
        // Different stream offsets give different imagery.
        let c = gen_grf(6, 16, 16, 2.0, 42, 100).unwrap();
        assert_ne!(a.images[0].data(), c.images[0].data());
    }

    #[test]
    fn fields_fill_the_unit_range() {
        let set = gen_grf(3, 12, 12, 1.0, 7, 0).unwrap();
        for img in &set.images {
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn labels_follow_the_template_sign() {
        let set = gen_grf(32, 16, 16, 2.0, 3, 0).unwrap();
        let template = label_template(16, 16);
        for (img, &label) in set.images.iter().zip(&set.labels) {
            let score: f64 = img.data().iter().zip(&template).map(|(a, b)| a * b).sum();
            assert_eq!(label, usize::from(score > 0.0));
        }
        // The template mean is zero, which is what makes the min-max scaling
        // harmless to the sign.
        let mean: f64 = template.iter().sum::<f64>() / template.len() as f64;
        assert!(mean.abs() < 1e-12);
        // Symmetric construction: neither class collapses.
        let ones = set.labels.iter().filter(|&&l| l == 1).count();
        assert!(ones > 4 && ones < 28, "labels {ones}/32 look degenerate");
    }

    #[test]
    fn template_is_low_frequency_and_nonconstant() {
        let t = label_template(8, 8);
        assert!(t.iter().any(|&v| v > 0.5));
        assert!(t.iter().any(|&v| v < -0.5));
    }

    #[test]
    fn averaged_spectrum_slope_tracks_the_decay_exponent() {
        // Average several spectra so ring noise stays below the tolerance,
        // then read the log-log slope over a band of decently large radii.
        let (h, w) = (64, 64);
        let set = gen_grf(12, h, w, 2.0, 11, 0).unwrap();
        let mut mean_spec: Option<Tensor> = None;
        for img in &set.images {
            let flat = img.reshape(&[h, w]).unwrap();
            let spec = power_spectrum2d(&flat).unwrap();
            mean_spec = Some(match mean_spec {
                None => spec,
                Some(mut acc) => {
                    acc.add_scaled(&spec, 1.0).unwrap();
                    acc
                }
            });
        }
        let radial = radial_average(&mean_spec.unwrap()).unwrap();
        let slope = tail_slope(&radial, (0.15, 0.45)).unwrap();
        // Local slope of (1+rho)^-2 in the fit band is about -1.9; allow the
        // remaining finite-size effects some room.
        assert!((-2.4..=-1.5).contains(&slope), "slope {slope}");
    }

    #[test]
    fn expected_frequency_decreases_as_decay_strengthens() {
        let mut previous = f64::INFINITY;
        for alpha in [0.0, 1.0, 2.0, 4.0] {
            let set = gen_grf(24, 32, 32, alpha, 19, 0).unwrap();
            let maps: Vec<Tensor> =
                set.images.iter().map(|img| img.reshape(&[32, 32]).unwrap()).collect();
            let ef = batch_ef(&maps).unwrap();
            assert!(
                ef < previous,
                "mean frequency did not fall at alpha {alpha}: {ef} vs {previous}"
            );
            previous = ef;
        }
    }
}

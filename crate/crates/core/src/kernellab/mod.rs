//! Numerical bench for the kernel side of the theory.
//!
//! Where the rest of the crate measures trained networks, this module checks
//! the closed-form claims directly: kernel power spectral densities and their
//! tails, the covariance shift that smoothing induces, the eigenvalue decay
//! of empirical tangent kernels, gradient spectra along one-parameter
//! trajectories, and the two-sided scaling of the band-limited frequency gap.
//!
//! Everything here is deterministic; the only randomness enters through
//! explicit seeds for network initialization.

use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::net::{param_gradient, he_init, LayerSpec, ModelConfig, Params};
use crate::spectral::fft::dft1_in_place;
use crate::spectral::RadialSpectrum;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Laplace,
    Gaussian,
}

/// A stationary kernel `k(x, x') = k(x - x')` with unit value at zero lag.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    family: KernelFamily,
    b: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, b: f64) -> Result<Self> {
        if !b.is_finite() || b <= 0.0 {
            return Err(Error::domain(format!("kernel scale must be positive, got {b}")));
        }
        Ok(KernelSpec { family, b })
    }

    #[must_use]
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    #[must_use]
    pub fn scale(&self) -> f64 {
        self.b
    }

    /// `k(u)`; equals 1 at `u = 0` for both families.
    #[must_use]
    pub fn value(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Laplace => (-u.abs() / self.b).exp(),
            KernelFamily::Gaussian => (-(u / self.b) * (u / self.b)).exp(),
        }
    }

    /// `k'(u)`. The Laplace kernel has a jump here; the value at the kink
    /// itself is taken as 0, the midpoint of the two one-sided limits.
    #[must_use]
    pub fn deriv(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Laplace => {
                if u == 0.0 {
                    0.0
                } else {
                    -u.signum() / self.b * (-u.abs() / self.b).exp()
                }
            }
            KernelFamily::Gaussian => {
                -2.0 * u / (self.b * self.b) * (-(u / self.b) * (u / self.b)).exp()
            }
        }
    }

    /// Power spectral density at angular frequency `omega`.
    #[must_use]
    pub fn psd(&self, omega: f64) -> f64 {
        match self.family {
            KernelFamily::Laplace => laplace_psd_unchecked(omega, self.b),
            KernelFamily::Gaussian => gaussian_psd_unchecked(omega, self.b),
        }
    }
}

fn check_scale(b: f64) -> Result<()> {
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::domain(format!("kernel scale must be positive, got {b}")));
    }
    Ok(())
}

fn laplace_psd_unchecked(omega: f64, b: f64) -> f64 {
    2.0 * b / (1.0 + b * b * omega * omega)
}

fn gaussian_psd_unchecked(omega: f64, b: f64) -> f64 {
    std::f64::consts::PI * b * b * (-b * b * omega * omega / 2.0).exp()
}

/// PSD of the Laplace kernel `exp(-|u|/b)`: `2b / (1 + b²ω²)`.
pub fn laplace_psd(omega: f64, b: f64) -> Result<f64> {
    check_scale(b)?;
    Ok(laplace_psd_unchecked(omega, b))
}

/// PSD of the Gaussian kernel `exp(-(u/b)²)`: `πb² · exp(-b²ω²/2)`, the
/// squared Fourier transform (the transform itself is `b√π · exp(-b²ω²/4)`).
pub fn gaussian_psd(omega: f64, b: f64) -> Result<f64> {
    check_scale(b)?;
    Ok(gaussian_psd_unchecked(omega, b))
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_split(&f, a, fa, m, fm, b, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_split<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    m: f64,
    fm: f64,
    b: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_split(f, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1)
            + simpson_split(f, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1)
    }
}

/// `∫ℝ laplace_psd(ω, b) dω` by quadrature. The improper integral is split at
/// `ω = 1/b`; substituting `t = 1/ω` turns the outer part into
/// `∫₀ᵇ 2b/(t² + b²) dt`, so both pieces are proper. The analytic value is
/// `2π` for every `b`.
pub fn laplace_total_power(b: f64) -> Result<f64> {
    check_scale(b)?;
    let inner = adaptive_simpson(|omega| laplace_psd_unchecked(omega, b), 0.0, 1.0 / b, 1e-9);
    let outer = adaptive_simpson(|t| 2.0 * b / (t * t + b * b), 0.0, b, 1e-9);
    Ok(2.0 * (inner + outer))
}

/// Frequency beyond which the Gaussian PSD stays strictly below the Laplace
/// PSD at the same scale, found by bisection on their ratio. In units
/// `u = bω` the ratio peaks at `u = 1` and falls monotonically afterwards, so
/// the crossing on that branch is unique; if even the peak ratio is below 1
/// the curves never cross out there and the request is refused.
pub fn psd_crossover(b: f64) -> Result<f64> {
    check_scale(b)?;
    let ratio = |omega: f64| gaussian_psd_unchecked(omega, b) / laplace_psd_unchecked(omega, b);
    let peak = 1.0 / b;
    if ratio(peak) <= 1.0 {
        return Err(Error::domain(format!(
            "gaussian psd never exceeds the laplace psd beyond its peak at scale {b}"
        )));
    }
    let mut hi = peak * 2.0;
    let mut guard = 0;
    while ratio(hi) >= 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::domain("psd crossover search failed to bracket"));
        }
    }
    let mut lo = peak;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Covariance of the smoothed pair process: sampling two trajectory points
/// with base variance `sigma_sq` and correlation `c`, then adding independent
/// smoothing noise of variance `v` to each, gives
/// `[[σ²+v, cσ²], [cσ², σ²+v]]`.
pub fn tau_cov_shift(sigma_sq: f64, c: f64, v: f64) -> Result<[[f64; 2]; 2]> {
    check_shift_args(sigma_sq, c, v)?;
    let m = [[sigma_sq + v, c * sigma_sq], [c * sigma_sq, sigma_sq + v]];
    // Eigenvalues are (σ²+v) ± cσ²; nonnegative for every valid input.
    assert!(m[0][0] >= m[0][1].abs(), "covariance lost positive semidefiniteness");
    Ok(m)
}

/// Off-diagonal correlation of [`tau_cov_shift`]: `cσ² / (σ² + v)`. Strictly
/// decreasing in `v` for `c > 0` and vanishing as `v → ∞` (the matrix turns
/// into a multiple of the identity).
pub fn effective_correlation(sigma_sq: f64, c: f64, v: f64) -> Result<f64> {
    check_shift_args(sigma_sq, c, v)?;
    Ok(c * sigma_sq / (sigma_sq + v))
}

fn check_shift_args(sigma_sq: f64, c: f64, v: f64) -> Result<()> {
    if !sigma_sq.is_finite() || sigma_sq <= 0.0 {
        return Err(Error::domain(format!("base variance must be positive, got {sigma_sq}")));
    }
    if !c.is_finite() || !(-1.0..=1.0).contains(&c) {
        return Err(Error::domain(format!("correlation must lie in [-1, 1], got {c}")));
    }
    if !v.is_finite() || v < 0.0 {
        return Err(Error::domain(format!("added variance must be nonnegative, got {v}")));
    }
    Ok(())
}

/// Gram matrix of parameter gradients: `K[i][j] = ⟨∂f_c(x_i)/∂W, ∂f_c(x_j)/∂W⟩`
/// for logit `class`. Only the upper triangle is computed; the mirror makes
/// the result symmetric to the bit.
pub fn empirical_ntk(
    cfg: &ModelConfig,
    params: &Params,
    xs: &[Tensor],
    class: usize,
) -> Result<Tensor> {
    if xs.len() < 2 {
        return Err(Error::domain(format!("gram needs at least 2 inputs, got {}", xs.len())));
    }
    let grads: Vec<Params> = xs
        .par_iter()
        .map(|x| param_gradient(cfg, params, x, class))
        .collect::<Result<_>>()?;
    let n = xs.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| grads[i].dot(&grads[j]))
        .collect::<Result<_>>()?;
    let mut k = Tensor::zeros(&[n, n]);
    for (&(i, j), &v) in pairs.iter().zip(&vals) {
        k.set(&[i, j], v);
        k.set(&[j, i], v);
    }
    Ok(k)
}

/// Eigenvalues of a symmetric matrix, descending. Householder reduction to
/// tridiagonal form followed by implicit-shift QL; values only, no vectors.
pub fn sym_eigenvalues(a: &Tensor) -> Result<Vec<f64>> {
    let [n, m] = a.shape() else {
        return Err(Error::shape(format!("eigenvalues need a square matrix, got {:?}", a.shape())));
    };
    let (n, m) = (*n, *m);
    if n != m {
        return Err(Error::shape(format!("eigenvalues need a square matrix, got {n}x{m}")));
    }
    if !a.all_finite() {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let scale = a.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.at(&[i, j]) - a.at(&[j, i])).abs() > 1e-9 * (1.0 + scale) {
                return Err(Error::domain(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut work: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a.at(&[i, j])).collect())
        .collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut work, &mut e);
    for i in 0..n {
        d[i] = work[i][i];
    }
    ql_implicit(&mut d, &mut e)?;
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

/// Householder reduction of a symmetric matrix to tridiagonal form, in
/// place. Afterwards the diagonal sits on `a[i][i]` and the subdiagonal in
/// `e[1..]`; the rest of `a` is scratch.
fn tridiagonalize(a: &mut [Vec<f64>], e: &mut [f64]) {
    let n = a.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += a[i][k].abs();
            }
            if scale == 0.0 {
                e[i] = a[i][l];
            } else {
                for k in 0..=l {
                    a[i][k] /= scale;
                    h += a[i][k] * a[i][k];
                }
                let f = a[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i][l] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a[j][k] * a[i][k];
                    }
                    for k in (j + 1)..=l {
                        g_acc += a[k][j] * a[i][k];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a[i][j];
                }
                let hh = f_acc / (2.0 * h);
                for j in 0..=l {
                    let fj = a[i][j];
                    let gj = e[j] - hh * fj;
                    e[j] = gj;
                    for k in 0..=j {
                        a[j][k] -= fj * e[k] + gj * a[i][k];
                    }
                }
            }
        } else {
            e[i] = a[i][l];
        }
    }
    e[0] = 0.0;
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix given by
/// diagonal `d` and subdiagonal `e[1..]`. Leaves the eigenvalues in `d`.
fn ql_implicit(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() + dd == dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::domain("eigenvalue iteration did not converge"));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0_f64, 1.0_f64);
            let mut p = 0.0;
            let mut underflow = false;
            let mut i = m;
            while i > l {
                let ii = i - 1;
                let f = s * e[ii];
                let b = c * e[ii];
                r = f.hypot(g);
                e[ii + 1] = r;
                if r == 0.0 {
                    d[ii + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[ii + 1] - p;
                let t = (d[ii] - g) * s + 2.0 * c * b;
                p = s * t;
                d[ii + 1] = g + p;
                g = c * t - b;
                i -= 1;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Eigenvalues of a Gram matrix sorted descending and divided by the
/// largest; roundoff negatives are clipped to zero.
pub fn eigen_decay(gram: &Tensor) -> Result<Vec<f64>> {
    let eigs = sym_eigenvalues(gram)?;
    let top = eigs[0];
    if !(top > 0.0) {
        return Err(Error::Degenerate("gram matrix has no positive eigenvalue".into()));
    }
    Ok(eigs.iter().map(|&v| (v / top).max(0.0)).collect())
}

/// First index whose normalized eigenvalue falls below `threshold`; the
/// matrix dimension if none does. Larger cutoff means a heavier spectral
/// tail.
#[must_use]
pub fn decay_cutoff(decay: &[f64], threshold: f64) -> usize {
    decay.iter().position(|&v| v < threshold).unwrap_or(decay.len())
}

/// Spectral cutoffs of a small dense net at several activation sharpness
/// values, holding weights fixed.
///
/// The net is `Dense(width) -> softplus(β) -> Dense(2)` over `n_inputs`
/// points on the unit circle. Because activation layers draw nothing from the
/// initializer, every β sees bit-identical weights, isolating the effect of
/// activation sharpness on the tangent kernel's spectrum. Returned cutoffs
/// use the 1e-3 threshold and follow the order of `betas`.
pub fn ntk_cutoff_experiment(
    betas: &[f64],
    seed: u64,
    n_inputs: usize,
    width: usize,
) -> Result<Vec<usize>> {
    if betas.is_empty() {
        return Err(Error::domain("no sharpness values given"));
    }
    if n_inputs < 2 || width == 0 {
        return Err(Error::domain(format!(
            "experiment needs at least 2 inputs and positive width, got {n_inputs} and {width}"
        )));
    }
    let xs: Vec<Tensor> = (0..n_inputs)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n_inputs as f64;
            Tensor::from_vec(&[2, 1, 1], vec![theta.cos(), theta.sin()])
        })
        .collect::<Result<_>>()?;
    betas
        .iter()
        .map(|&beta| {
            let cfg = ModelConfig {
                input: [2, 1, 1],
                classes: 2,
                layers: vec![
                    LayerSpec::Flatten,
                    LayerSpec::Dense { out: width },
                    LayerSpec::SPActivation { beta },
                    LayerSpec::Dense { out: 2 },
                ],
            };
            let params = he_init(&cfg, seed)?;
            let k = empirical_ntk(&cfg, &params, &xs, 0)?;
            let decay = eigen_decay(&k)?;
            Ok(decay_cutoff(&decay, 1e-3))
        })
        .collect()
}

/// Samples of a scalar path over `τ ∈ [0, 1)` at uniform spacing. The count
/// must be a power of two of at least 64 so spectra are well resolved.
#[derive(Debug, Clone)]
pub struct Trajectory {
    samples: Vec<f64>,
}

impl Trajectory {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        let n = samples.len();
        if n < 64 || !n.is_power_of_two() {
            return Err(Error::domain(format!(
                "trajectory length must be a power of two of at least 64, got {n}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("trajectory has non-finite samples"));
        }
        Ok(Trajectory { samples })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Trajectory::new((0..n).map(|i| f(i as f64 / n as f64)).collect())
    }

    #[must_use]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn base_path(tau: f64) -> f64 {
    use std::f64::consts::TAU;
    0.6 * (TAU * tau + 0.4).sin() + 0.25 * (2.0 * TAU * tau + 1.9).sin()
        + 0.1 * (4.0 * TAU * tau + 0.7).sin()
}

/// Smooth periodic function vanishing exactly at the given positions: a
/// product of `sin(π(τ - z))` factors. An even factor count keeps it
/// 1-periodic, and irregular zero spacing keeps the jump spectrum of the
/// kernel gradient free of systematic cancellations.
fn zero_placed_difference(zeros: &[f64], tau: f64) -> f64 {
    zeros.iter().map(|&z| (std::f64::consts::PI * (tau - z)).sin()).product()
}

const SINGLE_CROSSING_ZEROS: [f64; 2] = [0.13, 0.61];
const TRIPLE_CROSSING_ZEROS: [f64; 6] = [0.05, 0.18, 0.34, 0.55, 0.67, 0.88];

/// A training/evaluation trajectory pair whose difference crosses zero `2m`
/// times, for multiplier `m` of 1 or 3. The evaluation path is the base path
/// minus a low-frequency difference with the crossings placed irregularly.
pub fn crossing_pair(n: usize, multiplier: usize) -> Result<(Trajectory, Trajectory)> {
    let zeros: &[f64] = match multiplier {
        1 => &SINGLE_CROSSING_ZEROS,
        3 => &TRIPLE_CROSSING_ZEROS,
        other => {
            return Err(Error::domain(format!(
                "crossing multiplier must be 1 or 3, got {other}"
            )))
        }
    };
    let x_t = Trajectory::from_fn(n, base_path)?;
    let x_e = Trajectory::from_fn(n, |tau| base_path(tau) - zero_placed_difference(zeros, tau))?;
    Ok((x_t, x_e))
}

/// A pair whose difference `1.2 + 0.3·cos(2πτ)` stays far from zero, so the
/// kernel gradient along it is smooth everywhere.
pub fn separated_pair(n: usize) -> Result<(Trajectory, Trajectory)> {
    let x_t = Trajectory::from_fn(n, base_path)?;
    let x_e = Trajectory::from_fn(n, |tau| {
        base_path(tau) - (1.2 + 0.3 * (std::f64::consts::TAU * tau).cos())
    })?;
    Ok((x_t, x_e))
}

/// Sign changes of `x_t - x_e` around the full cycle, skipping exact zeros.
pub fn crossing_count(x_t: &Trajectory, x_e: &Trajectory) -> Result<usize> {
    if x_t.len() != x_e.len() {
        return Err(Error::shape(format!(
            "trajectories have different lengths {} and {}",
            x_t.len(),
            x_e.len()
        )));
    }
    let signs: Vec<f64> = x_t
        .samples()
        .iter()
        .zip(x_e.samples())
        .map(|(&t, &e)| t - e)
        .filter(|d| *d != 0.0)
        .map(|d| d.signum())
        .collect();
    if signs.is_empty() {
        return Ok(0);
    }
    let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
    let wrap = usize::from(signs[signs.len() - 1] != signs[0]);
    Ok(flips + wrap)
}

/// Power spectrum of the kernel gradient `g(τ) = k'(x_e(τ) - x_t(τ))` along
/// the pair: mean-removed, one-sided with mirrored bins folded in, and
/// normalized to unit total. Frequencies are in cycles per sample, so the
/// axis runs from 0 to 1/2.
pub fn trajectory_gradient_spectrum(
    kernel: &KernelSpec,
    x_t: &Trajectory,
    x_e: &Trajectory,
) -> Result<RadialSpectrum> {
    if x_t.len() != x_e.len() {
        return Err(Error::shape(format!(
            "trajectories have different lengths {} and {}",
            x_t.len(),
            x_e.len()
        )));
    }
    let n = x_t.len();
    let g: Vec<f64> = x_t
        .samples()
        .iter()
        .zip(x_e.samples())
        .map(|(&t, &e)| kernel.deriv(e - t))
        .collect();
    let mean = g.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = g.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    dft1_in_place(&mut buf, false);
    let half = n / 2;
    let mut power = vec![0.0; half + 1];
    for r in 1..half {
        power[r] = buf[r].norm_sqr() + buf[n - r].norm_sqr();
    }
    power[half] = buf[half].norm_sqr();
    let freqs = (0..=half).map(|r| r as f64 / n as f64).collect();
    RadialSpectrum::new(freqs, power)
}

/// Band-limited expected-frequency weight of the Laplace PSD at scale `b`,
/// referenced against the `b → 0` limit where the band carries none:
/// `∫ band ω · laplace_psd(ω, b) dω = (1/b) · ln((1+b²h²)/(1+b²l²))`.
///
/// Grows like `b·(h²-l²)` for small `b` and falls like `2·ln(h/l)/b` for
/// large `b`, which is the two-sided scaling [`gap_scaling`] measures.
pub fn delta_ef_kernel(b: f64, band: (f64, f64)) -> Result<f64> {
    check_scale(b)?;
    check_band(band)?;
    let (l, h) = band;
    Ok((1.0 / b) * (((1.0 + b * b * h * h) / (1.0 + b * b * l * l)).ln()))
}

fn check_band(band: (f64, f64)) -> Result<f64> {
    let (l, h) = band;
    if !l.is_finite() || !h.is_finite() || l <= 0.0 || h <= l {
        return Err(Error::domain(format!(
            "band ({l}, {h}) must satisfy 0 < low < high"
        )));
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct GapScalingReport {
    /// `(b, ΔEF)` pairs over the full grid.
    pub points: Vec<(f64, f64)>,
    /// Log-log slope fitted over the lowest decade of the grid.
    pub slope_small: f64,
    /// Log-log slope fitted over the highest decade of the grid.
    pub slope_large: f64,
}

/// Evaluates [`delta_ef_kernel`] over a geometric grid of scales and fits
/// log-log slopes at the two extremes. The grid must span at least three
/// decades on each side of the band's pivot scale `1/√(l·h)` so the fits sit
/// in the asymptotic regimes.
pub fn gap_scaling(b_grid: &[f64], band: (f64, f64)) -> Result<GapScalingReport> {
    check_band(band)?;
    if b_grid.len() < 6 {
        return Err(Error::domain(format!("scale grid has only {} points", b_grid.len())));
    }
    for pair in b_grid.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(Error::domain("scale grid must ascend strictly"));
        }
    }
    if b_grid[0] <= 0.0 || !b_grid.iter().all(|b| b.is_finite()) {
        return Err(Error::domain("scale grid must be positive and finite"));
    }
    let (l, h) = band;
    let pivot = 1.0 / (l * h).sqrt();
    let margin = 1.0 + 1e-9;
    if b_grid[0] > pivot / 1e3 * margin || b_grid[b_grid.len() - 1] < pivot * 1e3 / margin {
        return Err(Error::domain(format!(
            "scale grid [{}, {}] must span three decades on both sides of {pivot}",
            b_grid[0],
            b_grid[b_grid.len() - 1]
        )));
    }
    let points: Vec<(f64, f64)> = b_grid
        .iter()
        .map(|&b| Ok((b, delta_ef_kernel(b, band)?)))
        .collect::<Result<_>>()?;
    let lo_cut = b_grid[0] * 10.0 * margin;
    let hi_cut = b_grid[b_grid.len() - 1] / 10.0 / margin;
    let small: Vec<(f64, f64)> = points.iter().copied().filter(|&(b, _)| b <= lo_cut).collect();
    let large: Vec<(f64, f64)> = points.iter().copied().filter(|&(b, _)| b >= hi_cut).collect();
    if small.len() < 2 || large.len() < 2 {
        return Err(Error::domain(
            "outermost decades hold fewer than 2 grid points each; use a denser grid",
        ));
    }
    Ok(GapScalingReport {
        slope_small: log_log_slope(&small),
        slope_large: log_log_slope(&large),
        points,
    })
}

fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(b, v) in points {
        let x = b.ln();
        let y = v.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// `n` points spaced geometrically from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || hi <= lo {
        return Err(Error::domain(format!("grid bounds ({lo}, {hi}) must satisfy 0 < lo < hi")));
    }
    if n < 2 {
        return Err(Error::domain(format!("grid needs at least 2 points, got {n}")));
    }
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| lo * (ratio * i as f64).exp()).collect())
}

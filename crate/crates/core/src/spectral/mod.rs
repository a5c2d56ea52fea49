//! Frequency-content measurement for saliency maps.
//!
//! The pipeline that turns a map into a single smoothness score runs:
//!
//! 1. [`cdf_normalize`]: replace values by their empirical CDF position, so
//!    any monotone rescaling of a map measures identically;
//! 2. [`power_spectrum2d`]: mean-removed 2-D power spectrum;
//! 3. [`radial_average`]: collapse to power per integer ring radius,
//!    normalized to unit mass;
//! 4. [`expected_frequency`]: the mean frequency of that distribution, in
//!    cycles per pixel on `[0, 0.5]`.
//!
//! Low scores mean smooth maps. [`batch_ef`] averages the score over a batch,
//! [`delta_ef`] compares two scores, and [`tail_slope`] fits log-log spectral
//! decay. Everything here is deterministic; the batch routine parallelizes
//! per map but reduces in a fixed pairwise order, so results do not depend on
//! worker count.

pub(crate) mod fft;

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Average 0-based rank of each value, with tied values sharing the mean of
/// the ranks they span.
///
/// Comparison uses `f64` equality, so `-0.0` ties with `0.0` rather than
/// sorting below it.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut lo = 0;
    while lo < n {
        let mut hi = lo;
        while hi + 1 < n && values[order[hi + 1]] == values[order[lo]] {
            hi += 1;
        }
        let shared = (lo + hi) as f64 / 2.0;
        for &idx in &order[lo..=hi] {
            ranks[idx] = shared;
        }
        lo = hi + 1;
    }
    ranks
}

/// Replaces each pixel by its empirical CDF position `(rank + 0.5) / n`.
///
/// Distinct values map to `(i + 0.5) / n` in sorted order; ties share their
/// average rank, so a constant map becomes uniformly `0.5`. The output is
/// invariant under any strictly increasing transform of the input, which is
/// what lets maps with wildly different value scales share one frequency
/// axis.
pub fn cdf_normalize(map: &Tensor) -> Result<Tensor> {
    if map.rank() != 2 {
        return Err(Error::shape(format!("cdf_normalize expects [H,W], got {:?}", map.shape())));
    }
    if map.is_empty() {
        return Err(Error::domain("cdf_normalize of an empty map"));
    }
    if !map.all_finite() {
        return Err(Error::domain("cdf_normalize requires finite values"));
    }
    let n = map.len() as f64;
    let ranks = average_ranks(map.data());
    let data = ranks.iter().map(|r| (r + 0.5) / n).collect();
    Tensor::from_vec(map.shape(), data)
}

/// Mean-removed 2-D power spectrum `|DFT2(map - mean)|^2 / (H*W)`.
///
/// Bins follow DFT ordering (no fftshift): `[0,0]` is DC and is exactly zero
/// because the mean is removed first. With the `1/(H*W)` scaling the spectrum
/// satisfies Parseval against the spatial domain: its total equals the sum of
/// squared deviations from the mean.
pub fn power_spectrum2d(map: &Tensor) -> Result<Tensor> {
    if map.rank() != 2 {
        return Err(Error::shape(format!(
            "power_spectrum2d expects [H,W], got {:?}",
            map.shape()
        )));
    }
    if !map.all_finite() {
        return Err(Error::domain("power_spectrum2d requires finite values"));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mean = map.mean();
    let mut buf: Vec<Complex<f64>> =
        map.data().iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    fft::dft2_in_place(h, w, &mut buf, false);
    let scale = 1.0 / (h * w) as f64;
    let mut out: Vec<f64> = buf.iter().map(|z| z.norm_sqr() * scale).collect();
    // Mean removal leaves only roundoff in the DC bin; pin it to the
    // contract's exact zero.
    out[0] = 0.0;
    Tensor::from_vec(&[h, w], out)
}

/// A radially averaged (or otherwise 1-D) power distribution over frequency.
///
/// `freqs` ascend over `[0, 0.5]` cycles per pixel and `power` is normalized
/// to unit total, so the pair reads as a probability distribution over
/// frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectrum {
    freqs: Vec<f64>,
    power: Vec<f64>,
}

impl RadialSpectrum {
    /// Validates and normalizes a frequency/power pairing.
    ///
    /// Frequencies must ascend strictly within `[0, 0.5]`; power must be
    /// nonnegative with positive total (an all-zero spectrum has no
    /// distribution to speak of and is rejected as degenerate).
    pub fn new(freqs: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() || freqs.len() != power.len() {
            return Err(Error::shape(format!(
                "spectrum with {} freqs and {} power bins",
                freqs.len(),
                power.len()
            )));
        }
        for pair in freqs.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::domain("spectrum frequencies must ascend strictly"));
            }
        }
        if freqs[0] < 0.0 || *freqs.last().unwrap() > 0.5 + 1e-12 {
            return Err(Error::domain("spectrum frequencies must lie in [0, 0.5]"));
        }
        let mut total = 0.0;
        for &p in &power {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::domain("spectrum power must be finite and nonnegative"));
            }
            total += p;
        }
        if total <= 0.0 {
            return Err(Error::Degenerate("spectrum carries no power".into()));
        }
        let power = power.iter().map(|p| p / total).collect();
        Ok(RadialSpectrum { freqs, power })
    }

    #[must_use]
    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    #[must_use]
    pub fn power(&self) -> &[f64] {
        &self.power
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Mean frequency of the distribution; see [`expected_frequency`].
    #[must_use]
    pub fn expected_frequency(&self) -> f64 {
        self.freqs.iter().zip(&self.power).map(|(&f, &p)| f * p).sum()
    }
}

/// Collapses a 2-D spectrum to mean power per integer ring radius.
///
/// Bin `r` of the result averages all spectrum entries whose centered,
/// Nyquist-normalized frequency radius rounds (ties to even) to `r`, for
/// `r = 0..=min(H,W)/2`; corner entries beyond the Nyquist radius are
/// dropped. Bin `r` sits at frequency `r / (2 * (min(H,W)/2))`, so the axis
/// always ends exactly at 0.5 cycles per pixel.
pub fn radial_average(spec2d: &Tensor) -> Result<RadialSpectrum> {
    if spec2d.rank() != 2 {
        return Err(Error::shape(format!(
            "radial_average expects [H,W], got {:?}",
            spec2d.shape()
        )));
    }
    let (h, w) = (spec2d.shape()[0], spec2d.shape()[1]);
    if h.min(w) < 2 {
        return Err(Error::domain(format!("raster {h}x{w} too small for radial bins")));
    }
    let r_max = h.min(w) / 2;
    let scale = (2 * r_max) as f64;
    let mut sums = vec![0.0; r_max + 1];
    let mut counts = vec![0usize; r_max + 1];
    let data = spec2d.data();
    for iy in 0..h {
        // Signed wrapped index, so frequencies are centered.
        let cy = if iy <= h / 2 { iy as f64 } else { iy as f64 - h as f64 };
        let u = cy / h as f64;
        for ix in 0..w {
            let v = data[iy * w + ix];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain("radial_average requires nonnegative finite power"));
            }
            let cx = if ix <= w / 2 { ix as f64 } else { ix as f64 - w as f64 };
            let fx = cx / w as f64;
            let radius = (u * u + fx * fx).sqrt() * scale;
            let bin = radius.round_ties_even() as usize;
            if bin <= r_max {
                sums[bin] += v;
                counts[bin] += 1;
            }
        }
    }
    let power: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    if power.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Degenerate("all-zero spectrum has no radial profile".into()));
    }
    let freqs = (0..=r_max).map(|r| r as f64 / scale).collect();
    RadialSpectrum::new(freqs, power)
}

/// Mean frequency `sum(freq * power)` of a normalized radial spectrum.
///
/// Ranges over `[0, 0.5]`: zero when all power sits at DC, `0.5` when it all
/// sits at Nyquist.
#[must_use]
pub fn expected_frequency(spectrum: &RadialSpectrum) -> f64 {
    spectrum.expected_frequency()
}

/// Absolute gap between two expected frequencies, both in `[0, 0.5]`.
pub fn delta_ef(ef_a: f64, ef_b: f64) -> Result<f64> {
    for ef in [ef_a, ef_b] {
        if !ef.is_finite() || !(0.0..=0.5).contains(&ef) {
            return Err(Error::domain(format!("expected frequency {ef} outside [0, 0.5]")));
        }
    }
    Ok((ef_a - ef_b).abs())
}

/// Expected frequency of a single map after CDF normalization.
pub fn image_ef(map: &Tensor) -> Result<f64> {
    let normalized = cdf_normalize(map)?;
    let spectrum = power_spectrum2d(&normalized)?;
    Ok(radial_average(&spectrum)?.expected_frequency())
}

/// Mean per-map expected frequency over a batch.
///
/// Maps are processed independently (in parallel), and the per-map scores are
/// sorted before a fixed pairwise reduction. That canonical order makes the
/// mean bit-identical across worker counts and across permutations of the
/// batch.
pub fn batch_ef(maps: &[Tensor]) -> Result<f64> {
    use rayon::prelude::*;

    if maps.is_empty() {
        return Err(Error::domain("batch_ef of an empty batch"));
    }
    let shape = maps[0].shape();
    if let Some(bad) = maps.iter().find(|m| m.shape() != shape) {
        return Err(Error::shape(format!(
            "batch mixes map shapes {:?} and {:?}",
            shape,
            bad.shape()
        )));
    }
    let efs: Vec<Result<f64>> = maps.par_iter().map(image_ef).collect();
    let mut values = Vec::with_capacity(efs.len());
    for ef in efs {
        values.push(ef?);
    }
    values.sort_unstable_by(f64::total_cmp);
    Ok(pairwise_sum(&values) / values.len() as f64)
}

/// Sums by recursive halving; the fixed association makes parallel callers
/// bit-reproducible and keeps error growth logarithmic.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Least-squares slope of `log power` against `log frequency` over a band.
///
/// The band is inclusive, must sit strictly above DC, and needs at least five
/// bins of strictly positive power for the fit to mean anything.
pub fn tail_slope(spectrum: &RadialSpectrum, band: (f64, f64)) -> Result<f64> {
    let (lo, hi) = band;
    if !(lo > 0.0) || !(hi > lo) {
        return Err(Error::domain(format!("fit band ({lo}, {hi}) must satisfy 0 < lo < hi")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&f, &p) in spectrum.freqs().iter().zip(spectrum.power()) {
        if f < lo || f > hi {
            continue;
        }
        if p <= 0.0 {
            return Err(Error::domain(format!("zero power at {f} inside the fit band")));
        }
        xs.push(f.ln());
        ys.push(p.ln());
    }
    if xs.len() < 5 {
        return Err(Error::domain(format!(
            "fit band ({lo}, {hi}) covers only {} bins, need at least 5",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    Ok(sxy / sxx)
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape(format!("spearman of {} vs {} samples", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::domain("spearman needs at least two samples"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::domain("spearman requires finite samples"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::domain("spearman undefined when one variable is constant"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Summary row comparing one explanation method's frequency content against
/// the raw-gradient baseline over the same image batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EfReport {
    pub method: String,
    pub ef_vanilla: f64,
    pub ef_method: f64,
    pub delta_ef: f64,
    pub n_images: usize,
}

impl EfReport {
    pub fn new(
        method: impl Into<String>,
        ef_vanilla: f64,
        ef_method: f64,
        n_images: usize,
    ) -> Result<Self> {
        let delta = delta_ef(ef_vanilla, ef_method)?;
        Ok(EfReport {
            method: method.into(),
            ef_vanilla,
            ef_method,
            delta_ef: delta,
            n_images,
        })
    }
}

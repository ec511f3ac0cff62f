//! Almost-monochromatic diagnostics: complex envelopes, kernel time averages
//! and the Brillouin-type predictions for power, energy and string Lagrangian.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::susceptibility::{chi_hat, chi_hat_derivative, CMatrix, SusceptibilityModel};

/// Minimum samples per carrier period accepted by `demodulate`.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 20.0;
/// Envelopes with δ at or above this are flagged as not slowly varying.
pub const DELTA_MAX: f64 = 0.2;
/// Smallest σ·ω accepted by `time_average`.
pub const MIN_SIGMA_OMEGA: f64 = 2.0;
/// Stop-band attenuation of the demodulation filter.
pub const FILTER_ATTENUATION_DB: f64 = 100.0;
/// Kernel truncation in units of σ.
pub const KERNEL_WIDTHS: f64 = 4.0;

/// Complex envelope f₀(t) with signal = Re{e^{−iωt}f₀(t)}.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub omega: f64,
    pub t0: f64,
    pub dt: f64,
    /// f₀ per sample; zero outside `valid`
    pub samples: Vec<Vec<Complex64>>,
    /// half-open index range unaffected by the filter edges
    pub valid: (usize, usize),
    /// 99% spectral width of f₀
    pub bandwidth: f64,
    pub delta: f64,
    pub delta_valid: bool,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.samples[i].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Re{e^{−iωt}f₀(t)} at sample i.
    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let ph = Complex64::from_polar(1.0, -self.omega * self.time(i));
        self.samples[i].iter().map(|z| (ph * z).re).collect()
    }
}

/// I₀ by its power series (adequate for the window parameters used here).
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Zero-phase Kaiser-windowed sinc low-pass taps h[−M..=M] with unit DC gain.
pub fn lowpass_taps(cut: f64, transition: f64, dt: f64) -> Vec<f64> {
    let a = FILTER_ATTENUATION_DB;
    let beta = 0.1102 * (a - 8.7);
    let tw = transition * dt;
    let n = ((a - 8.0) / (2.285 * tw)).ceil() as usize;
    let half = n.div_ceil(2).max(1);
    let wc = cut * dt;
    let i0b = bessel_i0(beta);
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|j| {
            let k = j as f64 - half as f64;
            let sinc = if k == 0.0 { wc / PI } else { (wc * k).sin() / (PI * k) };
            let r = k / half as f64;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// f₀ = 2·lowpass(e^{iωt}·signal) with a zero-phase FIR at `lowpass_cut`
/// (default ω/4, transition width ω/4).
pub fn demodulate(signal: &[Vec<f64>], t0: f64, dt: f64, omega: f64, lowpass_cut: Option<f64>) -> Result<Envelope> {
    if !(omega > 0.0 && dt > 0.0) {
        return Err(Error::InvalidParameter("carrier and sampling step must be positive"));
    }
    let spp = 2.0 * PI / (omega * dt);
    if spp < MIN_SAMPLES_PER_PERIOD {
        return Err(Error::UnderSampled { samples_per_period: spp });
    }
    let dim = signal.first().map_or(0, |s| s.len());
    if signal.iter().any(|s| s.len() != dim) {
        return Err(Error::InvalidParameter("signal samples differ in dimension"));
    }
    let cut = lowpass_cut.unwrap_or(omega / 4.0);
    let taps = lowpass_taps(cut, omega / 4.0, dt);
    let half = taps.len() / 2;
    let n = signal.len();
    let mixed: Vec<Vec<Complex64>> = signal
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ph = Complex64::from_polar(2.0, omega * (t0 + i as f64 * dt));
            s.iter().map(|x| ph * x).collect()
        })
        .collect();
    let valid = if n > 2 * half { (half, n - half) } else { (0, 0) };
    let mut samples = vec![vec![Complex64::new(0.0, 0.0); dim]; n];
    for i in valid.0..valid.1 {
        let out = &mut samples[i];
        for (j, &w) in taps.iter().enumerate() {
            let src = &mixed[i + j - half];
            for c in 0..dim {
                out[c] += src[c] * w;
            }
        }
    }
    let bandwidth = spectral_width(&samples[valid.0..valid.1], dt, omega, 0.99);
    let delta = bandwidth / omega;
    Ok(Envelope { omega, t0, dt, samples, valid, bandwidth, delta, delta_valid: delta < DELTA_MAX && valid.1 > valid.0 })
}

/// Smallest B such that |ν| ≤ B holds `frac` of the envelope's spectral energy.
fn spectral_width(f0: &[Vec<Complex64>], dt: f64, omega: f64, frac: f64) -> f64 {
    if f0.len() < 2 {
        return f64::INFINITY;
    }
    // the filtered envelope has no content beyond ~3ω/8; resample to 2ω Nyquist
    let dec = ((PI / (2.0 * omega)) / dt).floor().max(1.0) as usize;
    let x: Vec<&Vec<Complex64>> = f0.iter().step_by(dec).collect();
    let n = x.len();
    // Hann taper keeps the edges of the record from leaking into the estimate
    let taper: Vec<f64> = (0..n).map(|i| (PI * (i as f64 + 0.5) / n as f64).sin().powi(2)).collect();
    let ddt = dec as f64 * dt;
    let nf = 4 * n;
    let dnu = 2.0 * PI / (nf as f64 * ddt);
    let mut bins: Vec<(f64, f64)> = Vec::with_capacity(nf);
    for k in 0..nf {
        let kk = if k < nf / 2 { k as f64 } else { k as f64 - nf as f64 };
        let nu = kk * dnu;
        let step = Complex64::from_polar(1.0, -nu * ddt);
        let mut ph = Complex64::new(1.0, 0.0);
        let mut acc = vec![Complex64::new(0.0, 0.0); x[0].len()];
        for (v, tw) in x.iter().zip(&taper) {
            for (a, z) in acc.iter_mut().zip(v.iter()) {
                *a += ph * z * *tw;
            }
            ph *= step;
        }
        bins.push((nu.abs(), acc.iter().map(|z| z.norm_sqr()).sum()));
    }
    bins.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = bins.iter().map(|b| b.1).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (nu, p) in &bins {
        acc += p;
        if acc >= frac * total {
            return *nu;
        }
    }
    bins.last().map_or(0.0, |b| b.0)
}

/// Default averaging width σ = δ^{−1/4}/ω.
pub fn default_sigma(omega: f64, delta: f64) -> f64 {
    delta.powf(-0.25) / omega
}

#[derive(Debug, Clone, PartialEq)]
pub struct Averaged {
    pub values: Vec<f64>,
    /// half-open index range at least 4σ from either end
    pub valid: (usize, usize),
}

/// Convolution with a symmetric Gaussian kernel of width σ, truncated at ±4σ
/// (shifted to vanish there) and normalised to unit sum.
pub fn time_average(signal: &[f64], dt: f64, sigma: f64, omega: f64) -> Result<Averaged> {
    if !(dt > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameter("dt and sigma must be positive"));
    }
    if sigma * omega < MIN_SIGMA_OMEGA {
        return Err(Error::WindowTooShort { sigma_omega: sigma * omega });
    }
    let half = (KERNEL_WIDTHS * sigma / dt).ceil() as usize;
    let floor = (-0.5 * KERNEL_WIDTHS * KERNEL_WIDTHS).exp();
    let mut kern: Vec<f64> = (0..=2 * half)
        .map(|j| {
            let x = (j as f64 - half as f64) * dt / sigma;
            ((-0.5 * x * x).exp() - floor).max(0.0)
        })
        .collect();
    let s: f64 = kern.iter().sum();
    kern.iter_mut().for_each(|k| *k /= s);
    let n = signal.len();
    let valid = if n > 2 * half { (half, n - half) } else { (0, 0) };
    let mut values = vec![0.0; n];
    for i in valid.0..valid.1 {
        values[i] = kern.iter().enumerate().map(|(j, w)| w * signal[i + j - half]).sum();
    }
    Ok(Averaged { values, valid })
}

/// Centered differences, one-sided at the ends.
pub fn centered_derivative(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (x[1] - x[0]) / dt
            } else if i == n - 1 {
                (x[n - 1] - x[n - 2]) / dt
            } else {
                (x[i + 1] - x[i - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

/// aᴴ M b
fn form(a: &[Complex64], m: &CMatrix, b: &[Complex64]) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..a.len() {
        let mut r = Complex64::new(0.0, 0.0);
        for j in 0..b.len() {
            r += m[(i, j)] * b[j];
        }
        s += a[i].conj() * r;
    }
    s
}

fn check_dim(env: &Envelope, model: &SusceptibilityModel) -> Result<()> {
    let d = env.samples.first().map_or(0, |s| s.len());
    if d != model.stress_dim() {
        return Err(Error::DimensionMismatch { expected: model.stress_dim(), found: d });
    }
    Ok(())
}

fn re_part(m: &CMatrix) -> CMatrix {
    m.map(|z| Complex64::new(z.re, 0.0))
}

fn im_part(m: &CMatrix) -> CMatrix {
    m.map(|z| Complex64::new(z.im, 0.0))
}

/// Time derivative of f₀ by centered differences inside the valid range.
fn envelope_derivative(env: &Envelope) -> Vec<Vec<Complex64>> {
    let (a, b) = env.valid;
    let d = env.samples.first().map_or(0, |s| s.len());
    let mut out = vec![vec![Complex64::new(0.0, 0.0); d]; env.len()];
    if b <= a + 1 {
        return out;
    }
    for i in a..b {
        let (lo, hi) = (if i == a { a } else { i - 1 }, if i == b - 1 { b - 1 } else { i + 1 });
        let span = (hi - lo) as f64 * env.dt;
        for c in 0..d {
            out[i][c] = (env.samples[hi][c] - env.samples[lo][c]) / span;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrillouinPower {
    /// ½⟨f₀, ωImχ̂ f₀⟩
    pub leading: Vec<f64>,
    /// leading plus the two slow-variation corrections
    pub full: Vec<f64>,
}

/// Predicted time-averaged power into the string,
/// ½{⟨f₀, ωImχ̂f₀⟩ + Im⟨∂ₜf₀, ∂_ω[ωImχ̂]f₀⟩ + ½∂ₜ⟨f₀, ∂_ω[ωReχ̂]f₀⟩}, with ⟨a, b⟩ = aᴴb.
pub fn brillouin_power(env: &Envelope, model: &SusceptibilityModel, omega: f64) -> Result<BrillouinPower> {
    check_dim(env, model)?;
    let w = Complex64::new(omega, 0.0);
    let chi = chi_hat(model, w)?;
    let dchi = chi_hat_derivative(model, w)?;
    let wim = im_part(&chi) * w;
    // ∂_ω[ωχ̂] = χ̂ + ωχ̂'
    let dw = &chi + &dchi * w;
    let dim_part = im_part(&dw);
    let dre_part = re_part(&dw);
    let df = envelope_derivative(env);
    let n = env.len();
    let (a, b) = env.valid;
    let mut leading = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut stored = vec![0.0; n];
    for i in a..b {
        let f = &env.samples[i];
        leading[i] = 0.5 * form(f, &wim, f).re;
        second[i] = form(&df[i], &dim_part, f).im;
        stored[i] = form(f, &dre_part, f).re;
    }
    let dstored = centered_derivative(&stored[a..b], env.dt);
    let mut full = vec![0.0; n];
    for i in a..b {
        full[i] = leading[i] + 0.5 * second[i] + 0.25 * dstored[i - a];
    }
    Ok(BrillouinPower { leading, full })
}

/// ¼⟨f₀, ∂_ω[ω(1 + Reχ̂)]f₀⟩: time-averaged total energy at a lossless frequency.
pub fn brillouin_energy_lossless(env: &Envelope, model: &SusceptibilityModel, omega: f64, pdc_tol: f64) -> Result<Vec<f64>> {
    check_dim(env, model)?;
    let w = Complex64::new(omega, 0.0);
    let chi = chi_hat(model, w)?;
    let im_norm = chi.map(|z| z.im).norm();
    if im_norm > pdc_tol {
        return Err(Error::NotLossless { im_norm });
    }
    let dchi = chi_hat_derivative(model, w)?;
    let d = chi.nrows();
    let op = re_part(&(CMatrix::identity(d, d) + &chi + &dchi * w));
    let mut out = vec![0.0; env.len()];
    for i in env.valid.0..env.valid.1 {
        out[i] = 0.25 * form(&env.samples[i], &op, &env.samples[i]).re;
    }
    Ok(out)
}

/// −¼⟨f₀, Reχ̂ f₀⟩: time-averaged string Lagrangian.
pub fn brillouin_lagrangian(env: &Envelope, model: &SusceptibilityModel, omega: f64) -> Result<Vec<f64>> {
    check_dim(env, model)?;
    let chi = re_part(&chi_hat(model, Complex64::new(omega, 0.0))?);
    let mut out = vec![0.0; env.len()];
    for i in env.valid.0..env.valid.1 {
        out[i] = -0.25 * form(&env.samples[i], &chi, &env.samples[i]).re;
    }
    Ok(out)
}

/// max|measured − predicted| / max|predicted| over samples where both are
/// valid and |f₀| ≥ `floor`·max|f₀|.
pub fn interior_relative_error(measured: &Averaged, predicted: &[f64], env: &Envelope, floor: f64) -> f64 {
    let lo = measured.valid.0.max(env.valid.0);
    let hi = measured.valid.1.min(env.valid.1);
    if hi <= lo {
        return f64::INFINITY;
    }
    let peak = (lo..hi).map(|i| env.norm(i)).fold(0.0, f64::max);
    let window: Vec<usize> = (lo..hi).filter(|&i| env.norm(i) >= floor * peak).collect();
    let scale = window.iter().map(|&i| predicted[i].abs()).fold(0.0, f64::max);
    let err = window.iter().map(|&i| (measured.values[i] - predicted[i]).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        if err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        err / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::susceptibility::{PDC_TOL, SusceptibilityModel as M};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sampled(n: usize, dt: f64, f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![f(i as f64 * dt)]).collect()
    }

    #[test]
    fn demodulate_pure_carrier() {
        let (w, dt) = (1.3, 0.02);
        let sig = sampled(40_000, dt, |t| (w * t).cos());
        let env = demodulate(&sig, 0.0, dt, w, None).unwrap();
        for i in env.valid.0..env.valid.1 {
            assert_abs_diff_eq!(env.samples[i][0].re, 1.0, epsilon = 1e-5);
            assert_abs_diff_eq!(env.samples[i][0].im, 0.0, epsilon = 1e-5);
        }
        assert!(env.delta_valid);
    }

    #[test]
    fn demodulate_recovers_slow_envelope_and_phase() {
        let (w, dt, phi0) = (0.9, 0.05, 0.7);
        let a = |t: f64| (-(t - 300.0) * (t - 300.0) / (2.0 * 60.0 * 60.0)).exp();
        let sig = sampled(12_000, dt, |t| a(t) * (w * t + phi0).cos());
        let env = demodulate(&sig, 0.0, dt, w, None).unwrap();
        let want = |t: f64| Complex64::from_polar(a(t), -phi0);
        for i in env.valid.0..env.valid.1 {
            assert!((env.samples[i][0] - want(env.time(i))).norm() <= 1e-4);
            assert_abs_diff_eq!(env.reconstruct(i)[0], sig[i][0], epsilon = 1e-4);
        }
        // Gaussian width 60: δ ≈ 1.82/(ω·60)
        assert!(env.delta > 0.01 && env.delta < 0.06, "{}", env.delta);
    }

    #[test]
    fn demodulate_rejects_undersampling_and_noise() {
        let sig = sampled(100, 0.5, |t| t.cos());
        assert!(matches!(demodulate(&sig, 0.0, 0.5, 1.0, None), Err(Error::UnderSampled { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<Vec<f64>> = (0..20_000).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let env = demodulate(&noise, 0.0, 0.01, 2.0, None).unwrap();
        assert!(!env.delta_valid, "{}", env.delta);
    }

    #[test]
    fn time_average_examples() {
        let (w, dt) = (1.0, 0.01);
        let n = 10_000;
        let c: Vec<f64> = vec![2.5; n];
        let av = time_average(&c, dt, 10.0, w).unwrap();
        for i in av.valid.0..av.valid.1 {
            assert_abs_diff_eq!(av.values[i], 2.5, epsilon = 1e-12);
        }
        let ripple: Vec<f64> = (0..n).map(|i| (2.0 * w * i as f64 * dt).cos()).collect();
        let av = time_average(&ripple, dt, 20.0, w).unwrap();
        assert!(av.values[av.valid.0..av.valid.1].iter().all(|x| x.abs() <= 1e-6));
        let ramp: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 * dt).collect();
        let av = time_average(&ramp, dt, 10.0, w).unwrap();
        for i in av.valid.0..av.valid.1 {
            assert_abs_diff_eq!(av.values[i], ramp[i], epsilon = 1e-10);
        }
        assert!(matches!(time_average(&ramp, dt, 1.0, w), Err(Error::WindowTooShort { .. })));
        assert!(time_average(&ramp, dt, default_sigma(w, 0.02), w).is_ok());
    }

    fn env_from(f0: impl Fn(f64) -> Complex64, n: usize, dt: f64, omega: f64) -> Envelope {
        Envelope {
            omega,
            t0: 0.0,
            dt,
            samples: (0..n).map(|i| vec![f0(i as f64 * dt)]).collect(),
            valid: (0, n),
            bandwidth: 0.0,
            delta: 0.0,
            delta_valid: true,
        }
    }

    #[test]
    fn brillouin_trivial_cases() {
        let zero = env_from(|_| Complex64::new(0.0, 0.0), 50, 0.1, 1.0);
        let p = brillouin_power(&zero, &M::scalar_lorentz(1.0, 2.0, 0.1).unwrap(), 1.0).unwrap();
        assert!(p.full.iter().chain(&p.leading).all(|&x| x == 0.0));
        let env = env_from(|t| Complex64::new((0.1 * t).sin(), 0.3), 50, 0.1, 1.0);
        let l = brillouin_lagrangian(&env, &M::zero(1), 1.0).unwrap();
        assert!(l.iter().all(|&x| x == 0.0));
        let l = brillouin_lagrangian(&env, &M::scalar_markov(0.7), 1.0).unwrap();
        assert!(l.iter().all(|&x| x.abs() < 1e-15));
        let e = brillouin_energy_lossless(&env, &M::zero(1), 1.0, PDC_TOL).unwrap();
        for (i, x) in e.iter().enumerate() {
            assert_abs_diff_eq!(*x, 0.25 * env.norm(i).powi(2), epsilon = 1e-15);
        }
        assert!(matches!(
            brillouin_energy_lossless(&env, &M::scalar_lorentz(1.0, 1.0, 0.2).unwrap(), 1.0, PDC_TOL),
            Err(Error::NotLossless { .. })
        ));
    }

    #[test]
    fn lossless_power_is_a_total_derivative() {
        let model = M::scalar_lorentz(1.0, 2.0, 0.0).unwrap();
        let env = env_from(|t| Complex64::new((0.05 * t).sin(), 0.2 * (0.03 * t).cos()), 400, 0.1, 1.0);
        let p = brillouin_power(&env, &model, 1.0).unwrap();
        assert!(p.leading.iter().all(|x| x.abs() < 1e-15));
        // ½·½∂ₜ⟨f₀, ∂_ω[ωReχ̂]f₀⟩ with ∂_ω[ω/(4 − ω²)] = (4 + ω²)/(4 − ω²)²
        let c = 5.0 / 9.0;
        let stored: Vec<f64> = (0..400).map(|i| c * env.norm(i).powi(2)).collect();
        let d = centered_derivative(&stored, 0.1);
        for i in 0..400 {
            assert_abs_diff_eq!(p.full[i], 0.25 * d[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn kaiser_filter_stopband() {
        let dt = 0.05;
        let w = 0.7;
        let taps = lowpass_taps(w / 4.0, w / 4.0, dt);
        let resp = |nu: f64| -> f64 {
            let h = taps.len() / 2;
            taps.iter().enumerate().map(|(j, t)| t * (nu * (j as f64 - h as f64) * dt).cos()).sum::<f64>()
        };
        assert_abs_diff_eq!(resp(0.0), 1.0, epsilon = 1e-12);
        assert!((resp(w / 10.0) - 1.0).abs() < 1e-4);
        for k in 0..200 {
            let nu = 3.0 * w / 8.0 + k as f64 * 0.01;
            assert!(resp(nu).abs() < 1e-3, "{nu}");
        }
        assert!(resp(2.0 * w).abs() < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn leading_term_nonnegative(re in -3.0f64..3.0, im in -3.0f64..3.0, w in 0.05f64..5.0, k in 0usize..4) {
            let models = [
                M::scalar_markov(0.3),
                M::scalar_debye(1.0, 0.7).unwrap(),
                M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(),
                M::scalar_power_law(0.25, 1.0).unwrap(),
            ];
            let env = env_from(|_| Complex64::new(re, im), 3, 0.1, w);
            let p = brillouin_power(&env, &models[k], w).unwrap();
            prop_assert!(p.leading[1] >= -PDC_TOL * (re * re + im * im));
        }
    }
}

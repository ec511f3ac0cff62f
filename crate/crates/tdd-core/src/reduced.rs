//! Solvers for the open system alone: the lossless propagator, a direct
//! trapezoidal Volterra march on the material relation, and the
//! friction-work functional. These serve as independent oracles for the
//! extended system.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use nalgebra::DVector;
#[allow(unused_imports)]
use num_traits::Float;

use crate::drive::Drive;
use crate::error::{Error, Result};
use crate::extension::SystemSpec;
use crate::linalg::{dot, skew_exp, skew_exp_integral, Csr, LinearSolver, SkewMatrix};
use crate::susceptibility::{chi_time, chi_time_integral, SusceptibilityModel};

/// Uniformly sampled (u, f) history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReducedTrajectory {
    pub t: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

impl ReducedTrajectory {
    /// Columns t, u…, f…, H_sys.
    pub fn to_csv(&self) -> String {
        let dv = self.u.first().map_or(0, |u| u.len());
        let dh = self.f.first().map_or(0, |f| f.len());
        let mut out = String::from("t");
        for i in 0..dv {
            let _ = write!(out, ",u{i}");
        }
        for i in 0..dh {
            let _ = write!(out, ",f{i}");
        }
        out.push_str(",H_sys\n");
        for n in 0..self.t.len() {
            out.push_str(&format!("{:e}", self.t[n]));
            for x in self.u[n].iter().chain(&self.f[n]) {
                let _ = write!(out, ",{x:e}");
            }
            let _ = writeln!(out, ",{:e}", 0.5 * dot(&self.f[n], &self.f[n]));
        }
        out
    }
}

fn require_linear(spec: &SystemSpec) -> Result<()> {
    if spec.nonlinear.is_some() {
        return Err(Error::InvalidParameter("reduced solvers handle linear systems only"));
    }
    Ok(())
}

/// Free evolution f(t) = exp(t·KJKᵀ)Ku₀, u(t) = u₀ + JKᵀ∫₀ᵗ f, sampled every `sample_dt`.
pub fn solve_lossless(spec: &SystemSpec, u0: &[f64], t_end: f64, sample_dt: f64) -> Result<ReducedTrajectory> {
    require_linear(spec)?;
    if u0.len() != spec.dim_v() {
        return Err(Error::DimensionMismatch { expected: spec.dim_v(), found: u0.len() });
    }
    if u0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !(sample_dt > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidParameter("need sample_dt > 0 and t_end >= 0"));
    }
    let k = spec.k.to_dense();
    let jkt = spec.j.to_dense() * k.transpose();
    let a = SkewMatrix::antisymmetrize(&(&k * &jkt));
    let f0 = &k * DVector::from_column_slice(u0);
    let n = (t_end / sample_dt).round() as usize;
    let mut out = ReducedTrajectory::default();
    for i in 0..=n {
        let t = i as f64 * sample_dt;
        let f = skew_exp(&a, t)? * &f0;
        let u = DVector::from_column_slice(u0) + &jkt * (skew_exp_integral(&a, t)? * &f0);
        out.t.push(t);
        out.u.push(u.as_slice().to_vec());
        out.f.push(f.as_slice().to_vec());
    }
    Ok(out)
}

/// Volterra march from rest with the susceptibility on every stress channel.
pub fn solve_volterra(
    spec: &SystemSpec,
    model: &SusceptibilityModel,
    drive: &dyn Drive,
    dt: f64,
    t_end: f64,
) -> Result<ReducedTrajectory> {
    let channels: Vec<usize> = (0..spec.dim_h()).collect();
    solve_volterra_from(spec, model, &channels, &vec![0.0; spec.dim_v()], drive, dt, t_end)
}

/// Trapezoidal march of u̇ = JKᵀf + ρ with the material relation
/// Ku(t) = f(t) + P∫₀ᵗ χ(τ)Pᵀf(t − τ)dτ, the string at rest at t = 0 and
/// u(0) = u₀. The convolution uses trapezoid weights and the full history.
pub fn solve_volterra_from(
    spec: &SystemSpec,
    model: &SusceptibilityModel,
    channels: &[usize],
    u0: &[f64],
    drive: &dyn Drive,
    dt: f64,
    t_end: f64,
) -> Result<ReducedTrajectory> {
    require_linear(spec)?;
    let m = model.stress_dim();
    let (dv, dh) = (spec.dim_v(), spec.dim_h());
    if channels.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: channels.len() });
    }
    if channels.iter().any(|&c| c >= dh) {
        return Err(Error::InvalidParameter("channel outside stress space"));
    }
    if u0.len() != dv {
        return Err(Error::DimensionMismatch { expected: dv, found: u0.len() });
    }
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidParameter("need dt > 0 and t_end >= 0"));
    }
    let n_steps = (t_end / dt).round() as usize;
    let h = 0.5 * dt;

    // χ(k·dt), row-major blocks; a constant kernel only needs χ(0+)
    let constant = is_constant(model);
    let n_tab = if constant { 1 } else { n_steps + 1 };
    let mut chi = Vec::with_capacity(n_tab * m * m);
    for k in 0..n_tab {
        let c = chi_time(model, k as f64 * dt)?;
        chi.extend(c.as_matrix().transpose().iter().copied());
    }

    let kt = spec.k.transpose();
    let jkt = spec.j.mul(&kt);
    let kjkt = spec.k.mul(&jkt);
    let mut trip = Vec::new();
    for r in 0..m {
        for c in 0..m {
            let v = h * chi[r * m + c];
            if v != 0.0 {
                trip.push((channels[r], channels[c], v));
            }
        }
    }
    let mat = Csr::identity(dh).add(&kjkt.scale(-h)).add(&Csr::from_triplets(dh, dh, trip));
    let solver = LinearSolver::new(&mat)?;

    let mut out = ReducedTrajectory::default();
    let mut u = u0.to_vec();
    let mut f = spec.k.apply(&u);
    // channel histories, channel-major
    let mut fc: Vec<Vec<f64>> = (0..m).map(|c| {
        let mut v = Vec::with_capacity(n_steps + 1);
        v.push(f[channels[c]]);
        v
    }).collect();
    // running trapezoid ∫fc for constant kernels
    let mut fint = vec![0.0; m];
    let mut rho_prev = vec![0.0; dv];
    let mut rho = vec![0.0; dv];
    drive.force(0.0, &mut rho_prev);
    out.t.push(0.0);
    out.u.push(u.clone());
    out.f.push(f.clone());

    let mut rhs = vec![0.0; dh];
    let mut hist = vec![0.0; m];
    let mut tmp = vec![0.0; dv];
    for n in 1..=n_steps {
        let t = n as f64 * dt;
        drive.force(t, &mut rho);
        // hist = Σ_{k=1}^{n} w_k χ_k fc_{n−k}, w_n = ½; excludes the k = 0 term
        hist.iter_mut().for_each(|x| *x = 0.0);
        if constant {
            for c in 0..m {
                // ∫₀^{t_n} minus the k = 0 half weight, which is not yet known
                let partial = fint[c] + h * fc[c][n - 1];
                for r in 0..m {
                    hist[r] += chi[r * m + c] * partial / dt;
                }
            }
        } else {
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..m {
                    let hc = &fc[c];
                    let mut s = 0.0;
                    for k in 1..n {
                        s += chi[(k * m + r) * m + c] * hc[n - k];
                    }
                    s += 0.5 * chi[(n * m + r) * m + c] * hc[0];
                    acc += s;
                }
                hist[r] = acc;
            }
        }
        // rhs = K u + hKJKᵀf + hK(ρ_{n−1} + ρ_n) − P dt hist
        spec.k.mul_vec(&u, &mut rhs);
        kjkt.mul_vec_add(h, &f, &mut rhs);
        for i in 0..dv {
            tmp[i] = rho_prev[i] + rho[i];
        }
        spec.k.mul_vec_add(h, &tmp, &mut rhs);
        for (r, &i) in channels.iter().enumerate() {
            rhs[i] -= dt * hist[r];
        }
        let mut f_new = rhs.clone();
        solver.solve_in_place(&mut f_new);
        if f_new.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularStep);
        }
        // u += h(JKᵀ(f + f_new) + ρ_{n−1} + ρ_n)
        let fsum: Vec<f64> = f.iter().zip(&f_new).map(|(a, b)| a + b).collect();
        jkt.mul_vec_add(1.0, &fsum, &mut tmp);
        for i in 0..dv {
            u[i] += h * tmp[i];
        }
        for c in 0..m {
            let v = f_new[channels[c]];
            fint[c] += h * (fc[c][n - 1] + v);
            fc[c].push(v);
        }
        f = f_new;
        core::mem::swap(&mut rho_prev, &mut rho);
        out.t.push(t);
        out.u.push(u.clone());
        out.f.push(f.clone());
    }
    Ok(out)
}

fn is_constant(model: &SusceptibilityModel) -> bool {
    use SusceptibilityModel as M;
    match model {
        M::Zero { .. } | M::Markov { .. } => true,
        M::PowerLaw { alpha, .. } => *alpha == 0.0,
        M::Sum(ms) => ms.iter().all(is_constant),
        M::Conjugated { base, .. } => is_constant(base),
        _ => false,
    }
}

/// W_fr = −½∬⟨f(t), a_e(t − τ)f(τ)⟩dtdτ for f piecewise constant on cells of
/// width dt centred at the samples. The cell integrals of a_e = ∂_tχᵒ are
/// exact: C_k = X((k+1)dt) − 2X(k·dt) + X((k−1)dt) with X = ∫₀^{|t|}χ, which
/// also carries the 2χ(0+)δ part. For a PDC model the form is ≤ 0 up to roundoff.
pub fn friction_work(model: &SusceptibilityModel, f_samples: &[Vec<f64>], dt: f64) -> Result<f64> {
    let m = model.stress_dim();
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    if let Some(bad) = f_samples.iter().find(|f| f.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, found: bad.len() });
    }
    let n = f_samples.len();
    if n == 0 || model.is_zero() {
        return Ok(0.0);
    }
    let mut x = Vec::with_capacity(n + 1);
    for k in 0..=n {
        x.push(chi_time_integral(model, k as f64 * dt)?.into_inner());
    }
    // flat row-major copies keep the O(n²) loop free of allocations
    let flat: Vec<f64> = f_samples.iter().flat_map(|f| f.iter().copied()).collect();
    let mut c = vec![0.0; m * m];
    let mut w = 0.0;
    for k in 0..n {
        let ck = if k == 0 { &x[1] * 2.0 } else { &x[k + 1] - &x[k] * 2.0 + &x[k - 1] };
        for r in 0..m {
            for q in 0..m {
                c[r * m + q] = ck[(r, q)];
            }
        }
        let mut s = 0.0;
        for i in 0..n - k {
            let a = &flat[i * m..(i + 1) * m];
            let b = &flat[(i + k) * m..(i + k + 1) * m];
            for r in 0..m {
                let row = &c[r * m..(r + 1) * m];
                s += a[r] * row.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        w += if k == 0 { s } else { 2.0 * s };
    }
    Ok(-0.5 * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drive::{GaussianPulse, ZeroDrive};
    use crate::linalg::canonical_j;
    use crate::susceptibility::SusceptibilityModel as M;
    use nalgebra::DMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oscillator() -> SystemSpec {
        SystemSpec::new(&canonical_j(1), &DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn lossless_examples() {
        let spec = oscillator();
        let tr = solve_lossless(&spec, &[1.0, 0.0], 10.0, 0.5).unwrap();
        for (t, u) in tr.t.iter().zip(&tr.u) {
            // ṗ = −q, q̇ = p
            assert_abs_diff_eq!(u[0], t.cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(u[1], t.sin(), epsilon = 1e-12);
        }
        for f in &tr.f {
            assert_abs_diff_eq!(0.5 * dot(f, f), 0.5, epsilon = 1e-12);
        }
        // u₀ ∈ ker K
        let mut k = DMatrix::zeros(1, 2);
        k[(0, 0)] = 1.0;
        let spec = SystemSpec::new(&canonical_j(1), &k).unwrap();
        let tr = solve_lossless(&spec, &[0.0, 3.0], 5.0, 1.0).unwrap();
        assert!(tr.u.iter().all(|u| u == &vec![0.0, 3.0]));
    }

    #[test]
    fn lossless_closed_string_keeps_momentum() {
        let n = 10;
        let mut k = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            k[(i, i)] = 1.0 / 2f64.sqrt();
            k[(n + i, n + i)] = -1.5;
            k[(n + i, n + (i + 1) % n)] = 1.5;
        }
        let spec = SystemSpec::new(&canonical_j(n), &k).unwrap();
        let u0: Vec<f64> = (0..2 * n).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.2).collect();
        let tr = solve_lossless(&spec, &u0, 20.0, 0.25).unwrap();
        let p0: f64 = u0[..n].iter().sum();
        let e0 = 0.5 * dot(&tr.f[0], &tr.f[0]);
        for (u, f) in tr.u.iter().zip(&tr.f) {
            assert_abs_diff_eq!(u[..n].iter().sum::<f64>(), p0, epsilon = 1e-11);
            assert_abs_diff_eq!(0.5 * dot(f, f), e0, epsilon = 1e-12 * e0.max(1.0));
        }
    }

    #[test]
    fn volterra_without_memory_is_crank_nicolson() {
        // discrete oracle: u_{n+1} = C u_n + h(I − hA)⁻¹(ρ_n + ρ_{n+1}), A = JKᵀK
        let spec = oscillator();
        let drive = GaussianPulse { t0: 2.0, width: 0.3, amplitude: vec![0.7, -0.2] };
        let dt = 0.01;
        let tr = solve_volterra(&spec, &M::zero(2), &drive, dt, 8.0).unwrap();
        let a = canonical_j(1);
        let h = dt / 2.0;
        let id = DMatrix::<f64>::identity(2, 2);
        let inv = (&id - &a * h).try_inverse().unwrap();
        let c = &inv * (&id + &a * h);
        let mut u = DVector::zeros(2);
        let mut r0 = vec![0.0; 2];
        let mut r1 = vec![0.0; 2];
        for n in 0..tr.t.len() {
            assert_abs_diff_eq!(tr.u[n][0], u[0], epsilon = 1e-10);
            assert_abs_diff_eq!(tr.u[n][1], u[1], epsilon = 1e-10);
            drive.force(n as f64 * dt, &mut r0);
            drive.force((n + 1) as f64 * dt, &mut r1);
            let rs = DVector::from_vec(vec![r0[0] + r1[0], r0[1] + r1[1]]);
            u = &c * u + &inv * rs * h;
        }
        // and the exact lossless propagator to O(dt²)
        let free = solve_volterra_from(&spec, &M::zero(2), &[0, 1], &[1.0, 0.0], &ZeroDrive, dt, 5.0).unwrap();
        let exact = solve_lossless(&spec, &[1.0, 0.0], 5.0, dt).unwrap();
        for (a, b) in free.u.iter().zip(&exact.u) {
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-4);
        }
    }

    #[test]
    fn volterra_markov_matches_damped_oscillator() {
        // friction on the p channel: q̈ = −q − 0.2q̇
        let spec = oscillator();
        let tr = solve_volterra_from(&spec, &M::scalar_markov(0.2), &[0], &[0.0, 1.0], &ZeroDrive, 1e-4, 20.0).unwrap();
        let nu = 0.99f64.sqrt();
        let mut err: f64 = 0.0;
        for (t, u) in tr.t.iter().zip(&tr.u) {
            let q = (-0.1 * t).exp() * ((nu * t).cos() + 0.1 / nu * (nu * t).sin());
            err = err.max((u[1] - q).abs());
        }
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn volterra_self_convergence_debye() {
        let spec = oscillator();
        let model = M::scalar_debye(1.0, 0.7).unwrap();
        let drive = GaussianPulse { t0: 2.0, width: 0.4, amplitude: vec![1.0, 0.0] };
        let runs: Vec<ReducedTrajectory> = [4e-3, 2e-3, 1e-3]
            .iter()
            .map(|&dt| solve_volterra_from(&spec, &model, &[0], &[0.0, 0.0], &drive, dt, 8.0).unwrap())
            .collect();
        let at = |tr: &ReducedTrajectory, stride: usize| -> Vec<f64> { tr.u.iter().step_by(stride).map(|u| u[1]).collect() };
        let (a, b, c) = (at(&runs[0], 1), at(&runs[1], 2), at(&runs[2], 4));
        let d1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let d2 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (d1 / d2).log2();
        assert!(order >= 1.9, "{order}");
    }

    #[test]
    fn volterra_rejects_bad_input() {
        let spec = oscillator();
        assert!(solve_volterra_from(&spec, &M::zero(1), &[5], &[0.0, 0.0], &ZeroDrive, 0.1, 1.0).is_err());
        assert!(solve_volterra(&spec, &M::zero(2), &ZeroDrive, 0.0, 1.0).is_err());
    }

    #[test]
    fn friction_work_examples() {
        assert_eq!(friction_work(&M::scalar_markov(1.0), &vec![vec![0.0]; 20], 0.1).unwrap(), 0.0);
        assert_eq!(friction_work(&M::zero(1), &vec![vec![1.0]; 20], 0.1).unwrap(), 0.0);
        // Markov: −γ∫f²
        let f: Vec<Vec<f64>> = (0..100).map(|i| vec![(i as f64 * 0.1).sin()]).collect();
        let want = -0.3 * 0.1 * f.iter().map(|x| x[0] * x[0]).sum::<f64>();
        assert_abs_diff_eq!(friction_work(&M::scalar_markov(0.3), &f, 0.1).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn friction_work_debye_matches_closed_form() {
        // f = 1 on [0, T]: ∬ a_e(t − τ) over the square is 2X(T), so W = −X(T)
        let (d, tau) = (1.3, 0.8);
        let model = M::scalar_debye(d, tau).unwrap();
        let n = 200;
        let dt = 0.05;
        let f = vec![vec![1.0]; n];
        let t = n as f64 * dt;
        let want = -d * (1.0 - (-t / tau).exp());
        assert_abs_diff_eq!(friction_work(&model, &f, dt).unwrap(), want, epsilon = 1e-12);
    }

    fn random_history(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
        let modes: Vec<(f64, f64, f64)> = (0..4).map(|_| (rng.random_range(0.1..3.0), rng.random_range(0.0..6.3), rng.random_range(-1.0..1.0))).collect();
        (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                let env = (core::f64::consts::PI * x).sin().powi(2);
                (0..m)
                    .map(|c| env * modes.iter().map(|(w, p, a)| a * (w * (c as f64 + 1.0) * i as f64 * 0.05 + p).sin()).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn friction_work_is_nonpositive_for_pdc_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let models = [
            M::scalar_markov(0.4),
            M::scalar_debye(1.0, 0.5).unwrap(),
            M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(),
            M::scalar_power_law(0.3, 1.0).unwrap(),
        ];
        for m in &models {
            for _ in 0..10 {
                let f = random_history(&mut rng, 150, 1);
                let w = friction_work(m, &f, 0.05).unwrap();
                let norm2: f64 = f.iter().map(|x| x[0] * x[0]).sum::<f64>() * 0.05;
                assert!(w <= 1e-10 * norm2 * 7.5, "{w}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn friction_work_sign(seed in 0u64..1000, g in 0.01f64..2.0, tau in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = M::sum(vec![M::scalar_markov(g), M::scalar_debye(1.0, tau).unwrap()]).unwrap();
            let f = random_history(&mut rng, 120, 1);
            let w = friction_work(&model, &f, 0.05).unwrap();
            let norm2: f64 = f.iter().map(|x| x[0] * x[0]).sum::<f64>() * 0.05;
            prop_assert!(w <= 1e-10 * norm2 * 6.0);
        }
    }
}

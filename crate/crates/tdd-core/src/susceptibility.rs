//! Causal susceptibilities χ(t), their Fourier–Laplace transforms and the
//! boundary dissipation density Φ(ω) = Im{ωχ̂(ω + i0)}.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

pub type CMatrix = DMatrix<Complex64>;

/// Default absolute eigenvalue tolerance of the PDC gate.
pub const PDC_TOL: f64 = 1e-9;

/// Matrix-valued causal kernel. Matrix parameters are symmetric; whether
/// the model dissipates (PDC) is decided by [`check_pdc`], not at construction.
#[derive(Debug, Clone, PartialEq)]
pub enum SusceptibilityModel {
    Zero { dim: usize },
    Markov { gamma: SymMatrix },
    Debye { delta: SymMatrix, tau: f64 },
    Lorentz { strength: SymMatrix, omega0: f64, damping: f64 },
    PowerLaw { alpha: f64, scale: SymMatrix },
    Sum(Vec<SusceptibilityModel>),
    /// C·χ·Cᵀ; C may be rectangular (embedding into a larger stress space).
    Conjugated { base: Box<SusceptibilityModel>, c: DMatrix<f64> },
}

use SusceptibilityModel as M;

impl SusceptibilityModel {
    pub fn zero(dim: usize) -> Self {
        M::Zero { dim }
    }

    pub fn markov(gamma: SymMatrix) -> Self {
        M::Markov { gamma }
    }

    pub fn debye(delta: SymMatrix, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter("debye tau must be positive"));
        }
        Ok(M::Debye { delta, tau })
    }

    pub fn lorentz(strength: SymMatrix, omega0: f64, damping: f64) -> Result<Self> {
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::InvalidParameter("lorentz omega0 must be positive"));
        }
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::InvalidParameter("lorentz damping must be nonnegative"));
        }
        Ok(M::Lorentz { strength, omega0, damping })
    }

    pub fn power_law(alpha: f64, scale: SymMatrix) -> Result<Self> {
        if !(0.0..=1.0 / 3.0).contains(&alpha) {
            return Err(Error::InvalidParameter("power-law alpha must lie in [0, 1/3]"));
        }
        Ok(M::PowerLaw { alpha, scale })
    }

    pub fn sum(models: Vec<SusceptibilityModel>) -> Result<Self> {
        let Some(first) = models.first() else {
            return Err(Error::InvalidParameter("empty sum"));
        };
        let d = first.stress_dim();
        if let Some(m) = models.iter().find(|m| m.stress_dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: m.stress_dim() });
        }
        Ok(M::Sum(models))
    }

    pub fn conjugated(base: SusceptibilityModel, c: DMatrix<f64>) -> Result<Self> {
        if c.ncols() != base.stress_dim() {
            return Err(Error::DimensionMismatch { expected: base.stress_dim(), found: c.ncols() });
        }
        Ok(M::Conjugated { base: Box::new(base), c })
    }

    pub fn scalar_markov(gamma: f64) -> Self {
        M::markov(SymMatrix::scalar(gamma))
    }

    pub fn scalar_debye(delta: f64, tau: f64) -> Result<Self> {
        M::debye(SymMatrix::scalar(delta), tau)
    }

    pub fn scalar_lorentz(strength: f64, omega0: f64, damping: f64) -> Result<Self> {
        M::lorentz(SymMatrix::scalar(strength), omega0, damping)
    }

    pub fn scalar_power_law(alpha: f64, scale: f64) -> Result<Self> {
        M::power_law(alpha, SymMatrix::scalar(scale))
    }

    pub fn stress_dim(&self) -> usize {
        match self {
            M::Zero { dim } => *dim,
            M::Markov { gamma } => gamma.dim(),
            M::Debye { delta, .. } => delta.dim(),
            M::Lorentz { strength, .. } => strength.dim(),
            M::PowerLaw { scale, .. } => scale.dim(),
            M::Sum(ms) => ms[0].stress_dim(),
            M::Conjugated { c, .. } => c.nrows(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            M::Zero { .. } => true,
            M::Sum(ms) => ms.iter().all(|m| m.is_zero()),
            M::Conjugated { base, .. } => base.is_zero(),
            _ => false,
        }
    }

    /// Combine per-component values: Sum adds, Conjugated maps X ↦ CXCᵀ.
    fn fold_sym(&self, leaf: &impl Fn(&SusceptibilityModel) -> Result<SymMatrix>) -> Result<SymMatrix> {
        match self {
            M::Sum(ms) => {
                let mut acc = SymMatrix::zeros(self.stress_dim());
                for m in ms {
                    acc = acc.add(&m.fold_sym(leaf)?);
                }
                Ok(acc)
            }
            M::Conjugated { base, c } => Ok(base.fold_sym(leaf)?.congruence(c)),
            _ => leaf(self),
        }
    }

    fn fold_complex(&self, leaf: &impl Fn(&SusceptibilityModel) -> Result<CMatrix>) -> Result<CMatrix> {
        match self {
            M::Sum(ms) => {
                let n = self.stress_dim();
                let mut acc = CMatrix::zeros(n, n);
                for m in ms {
                    acc += m.fold_complex(leaf)?;
                }
                Ok(acc)
            }
            M::Conjugated { base, c } => {
                let cc = c.map(|x| Complex64::new(x, 0.0));
                Ok(&cc * base.fold_complex(leaf)? * cc.transpose())
            }
            _ => leaf(self),
        }
    }

    /// χ(0+), the Dirac weight of the friction function. For models
    /// satisfying SRC this is also lim Φ(ω) as |ω| → ∞.
    pub fn chi_zero_plus(&self) -> SymMatrix {
        self.fold_sym(&|m| {
            Ok(match m {
                M::Markov { gamma } => gamma.clone(),
                M::Debye { delta, tau } => delta.scale(1.0 / tau),
                M::PowerLaw { alpha, scale } if *alpha == 0.0 => scale.clone(),
                _ => SymMatrix::zeros(m.stress_dim()),
            })
        })
        .expect("leaf evaluation is infallible")
    }

    /// Point masses of the boundary measure: (κ_a, A) contributes
    /// A·sin(κ_a t)/κ_a to χ(t). Only the undamped Lorentz line has one.
    pub fn spectral_atoms(&self) -> Vec<(f64, SymMatrix)> {
        match self {
            M::Lorentz { strength, omega0, damping } if *damping == 0.0 => {
                alloc::vec![(*omega0, strength.clone())]
            }
            M::Sum(ms) => ms.iter().flat_map(|m| m.spectral_atoms()).collect(),
            M::Conjugated { base, c } => {
                base.spectral_atoms().into_iter().map(|(k, a)| (k, a.congruence(c))).collect()
            }
            _ => Vec::new(),
        }
    }

    /// ∫_{−h}^{h} Φ(κ) dκ, analytic for the singular power law and
    /// the midpoint value 2h·Φ(0) otherwise.
    pub fn phi_central_mass(&self, h: f64) -> SymMatrix {
        self.fold_sym(&|m| {
            Ok(match m {
                M::PowerLaw { alpha, scale } => {
                    let c = libm::tgamma(alpha + 1.0) * (alpha * PI / 2.0).cos();
                    scale.scale(c * 2.0 * h.powf(1.0 - alpha) / (1.0 - alpha))
                }
                M::Lorentz { damping, .. } if *damping == 0.0 => SymMatrix::zeros(m.stress_dim()),
                _ => phi_boundary(m, 0.0)?.scale(2.0 * h),
            })
        })
        .expect("Φ(0) is finite for non-power-law leaves")
    }
}

/// sin(νt)/ν and cos(νt) with ν² = ν2, continued to sinh/cosh for ν2 < 0.
fn osc(nu2: f64, t: f64) -> (f64, f64) {
    if nu2 > 0.0 {
        let nu = nu2.sqrt();
        ((nu * t).sin() / nu, (nu * t).cos())
    } else if nu2 < 0.0 {
        let mu = (-nu2).sqrt();
        ((mu * t).sinh() / mu, (mu * t).cosh())
    } else {
        (t, 1.0)
    }
}

/// χ(t) for t ≥ 0 (t = 0 means 0+).
pub fn chi_time(model: &SusceptibilityModel, t: f64) -> Result<SymMatrix> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    model.fold_sym(&|m| {
        Ok(match m {
            M::Zero { dim } => SymMatrix::zeros(*dim),
            M::Markov { gamma } => gamma.clone(),
            M::Debye { delta, tau } => delta.scale((-t / tau).exp() / tau),
            M::Lorentz { strength, omega0, damping } => {
                let (s, _) = osc(omega0 * omega0 - damping * damping / 4.0, t);
                strength.scale((-damping * t / 2.0).exp() * s)
            }
            M::PowerLaw { alpha, scale } => scale.scale(t.powf(*alpha)),
            _ => unreachable!(),
        })
    })
}

/// X(t) = ∫₀ᵗ χ(s)ds for t ≥ 0, in closed form per variant.
pub fn chi_time_integral(model: &SusceptibilityModel, t: f64) -> Result<SymMatrix> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    model.fold_sym(&|m| {
        Ok(match m {
            M::Zero { dim } => SymMatrix::zeros(*dim),
            M::Markov { gamma } => gamma.scale(t),
            M::Debye { delta, tau } => delta.scale(-(-t / tau).exp_m1()),
            M::Lorentz { strength, omega0, damping } => {
                // y = e^{−at}S solves y'' + 2ay' + ω₀²y = 0, y(0) = 0, y'(0) = 1
                let a = damping / 2.0;
                let (s, c) = osc(omega0 * omega0 - a * a, t);
                let e = (-a * t).exp();
                let y = e * s;
                let dy = e * (c - a * s);
                strength.scale((1.0 - dy - 2.0 * a * y) / (omega0 * omega0))
            }
            M::PowerLaw { alpha, scale } => scale.scale(t.powf(alpha + 1.0) / (alpha + 1.0)),
            _ => unreachable!(),
        })
    })
}

/// ∂_t χ(t) for t > 0.
pub fn chi_time_derivative(model: &SusceptibilityModel, t: f64) -> Result<SymMatrix> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    model.fold_sym(&|m| {
        Ok(match m {
            M::Zero { dim } => SymMatrix::zeros(*dim),
            M::Markov { gamma } => SymMatrix::zeros(gamma.dim()),
            M::Debye { delta, tau } => delta.scale(-(-t / tau).exp() / (tau * tau)),
            M::Lorentz { strength, omega0, damping } => {
                let (s, c) = osc(omega0 * omega0 - damping * damping / 4.0, t);
                strength.scale((-damping * t / 2.0).exp() * (c - 0.5 * damping * s))
            }
            M::PowerLaw { alpha, scale } => {
                if *alpha == 0.0 {
                    SymMatrix::zeros(scale.dim())
                } else {
                    scale.scale(alpha * t.powf(alpha - 1.0))
                }
            }
            _ => unreachable!(),
        })
    })
}

/// Odd extension χᵒ(τ) = χ(τ) for τ > 0 and −χ(−τ)ᵀ for τ < 0.
pub fn odd_extension(model: &SusceptibilityModel, tau: f64) -> Result<SymMatrix> {
    if tau > 0.0 {
        chi_time(model, tau)
    } else if tau < 0.0 {
        // χ is symmetric, so the transpose is the identity map here
        Ok(chi_time(model, -tau)?.scale(-1.0))
    } else {
        let c0 = chi_time(model, 0.0)?;
        if c0.frobenius_norm() == 0.0 {
            Ok(c0)
        } else {
            Err(Error::UndefinedAtZero)
        }
    }
}

fn cscale(m: &SymMatrix, z: Complex64) -> CMatrix {
    m.as_matrix().map(|x| z * x)
}

fn upper(zeta: Complex64) -> Result<Complex64> {
    if zeta.im < 0.0 {
        return Err(Error::InvalidParameter("Im zeta must be nonnegative"));
    }
    // normalise −0 so the principal branch puts the negative real axis at arg π
    Ok(Complex64::new(zeta.re, zeta.im.abs()))
}

/// ζ^{-(α+1)} on the closed upper half-plane.
fn power_factor(alpha: f64, zeta: Complex64) -> Complex64 {
    let a = alpha + 1.0;
    let r = zeta.norm().powf(-a);
    let th = -a * zeta.arg();
    Complex64::new(r * th.cos(), r * th.sin())
}

/// Fourier–Laplace transform χ̂(ζ) = ∫₀^∞ e^{iζt}χ(t)dt, Im ζ ≥ 0; on the
/// real axis the analytic boundary value is returned.
pub fn chi_hat(model: &SusceptibilityModel, zeta: Complex64) -> Result<CMatrix> {
    let z = upper(zeta)?;
    let i = Complex64::i();
    let pole = || Error::PoleOnAxis { re: z.re, im: z.im };
    model.fold_complex(&|m| {
        Ok(match m {
            M::Zero { dim } => CMatrix::zeros(*dim, *dim),
            M::Markov { gamma } => {
                if z == Complex64::new(0.0, 0.0) {
                    return Err(pole());
                }
                cscale(gamma, i / z)
            }
            M::Debye { delta, tau } => cscale(delta, 1.0 / (1.0 - i * z * *tau)),
            M::Lorentz { strength, omega0, damping } => {
                let d = omega0 * omega0 - z * z - i * *damping * z;
                if d.norm() == 0.0 {
                    return Err(pole());
                }
                cscale(strength, 1.0 / d)
            }
            M::PowerLaw { alpha, scale } => {
                if z.norm() == 0.0 {
                    return Err(pole());
                }
                let pref = i * libm::tgamma(alpha + 1.0) * Complex64::from_polar(1.0, PI * alpha / 2.0);
                cscale(scale, pref * power_factor(*alpha, z))
            }
            _ => unreachable!(),
        })
    })
}

/// dχ̂/dζ, analytic per variant.
pub fn chi_hat_derivative(model: &SusceptibilityModel, zeta: Complex64) -> Result<CMatrix> {
    let z = upper(zeta)?;
    let i = Complex64::i();
    let pole = || Error::PoleOnAxis { re: z.re, im: z.im };
    model.fold_complex(&|m| {
        Ok(match m {
            M::Zero { dim } => CMatrix::zeros(*dim, *dim),
            M::Markov { gamma } => {
                if z.norm() == 0.0 {
                    return Err(pole());
                }
                cscale(gamma, -i / (z * z))
            }
            M::Debye { delta, tau } => {
                let d = 1.0 - i * z * *tau;
                cscale(delta, i * *tau / (d * d))
            }
            M::Lorentz { strength, omega0, damping } => {
                let d = omega0 * omega0 - z * z - i * *damping * z;
                if d.norm() == 0.0 {
                    return Err(pole());
                }
                cscale(strength, (2.0 * z + i * *damping) / (d * d))
            }
            M::PowerLaw { alpha, scale } => {
                if z.norm() == 0.0 {
                    return Err(pole());
                }
                let pref = i * libm::tgamma(alpha + 1.0) * Complex64::from_polar(1.0, PI * alpha / 2.0);
                cscale(scale, -(alpha + 1.0) * pref * power_factor(*alpha, z) / z)
            }
            _ => unreachable!(),
        })
    })
}

/// Φ(ω) = Im{ωχ̂(ω + i0)}, closed form per variant (even in ω by construction).
pub fn phi_boundary(model: &SusceptibilityModel, omega: f64) -> Result<SymMatrix> {
    let w = omega.abs();
    model.fold_sym(&|m| {
        Ok(match m {
            M::Zero { dim } => SymMatrix::zeros(*dim),
            M::Markov { gamma } => gamma.clone(),
            M::Debye { delta, tau } => delta.scale(w * w * tau / (1.0 + w * w * tau * tau)),
            M::Lorentz { strength, omega0, damping } => {
                if *damping == 0.0 {
                    if w == *omega0 {
                        return Err(Error::PoleOnAxis { re: omega, im: 0.0 });
                    }
                    SymMatrix::zeros(strength.dim())
                } else {
                    let a = omega0 * omega0 - w * w;
                    strength.scale(damping * w * w / (a * a + damping * damping * w * w))
                }
            }
            M::PowerLaw { alpha, scale } => {
                if *alpha == 0.0 {
                    scale.clone()
                } else if w == 0.0 {
                    return Err(Error::PoleOnAxis { re: 0.0, im: 0.0 });
                } else {
                    let c = libm::tgamma(alpha + 1.0) * (alpha * PI / 2.0).cos();
                    scale.scale(c * w.powf(-alpha))
                }
            }
            _ => unreachable!(),
        })
    })
}

/// Absolutely continuous part of the boundary measure: Φ(ω) with the atoms
/// of undamped Lorentz lines removed (those are returned by
/// [`SusceptibilityModel::spectral_atoms`]).
pub fn phi_density(model: &SusceptibilityModel, omega: f64) -> Result<SymMatrix> {
    model.fold_sym(&|m| match m {
        M::Lorentz { strength, damping, .. } if *damping == 0.0 => Ok(SymMatrix::zeros(strength.dim())),
        _ => phi_boundary(m, omega),
    })
}

/// Result of the power-dissipation-condition scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PdcReport {
    /// probe points (ω, η); η = 0 marks boundary values
    pub grid: Vec<(f64, f64)>,
    /// smallest eigenvalue at each probe point
    pub eigs: Vec<f64>,
    pub min_eig: f64,
    pub worst_point: (f64, f64),
    pub passed: bool,
    /// probe points skipped because they hit a real pole
    pub skipped: Vec<(f64, f64)>,
}

/// Scan min eig Im{ζχ̂(ζ)} over ω_grid × η_grid (η > 0) plus the boundary Φ(ω).
pub fn check_pdc(model: &SusceptibilityModel, omega_grid: &[f64], eta_grid: &[f64], pdc_tol: f64) -> PdcReport {
    let mut grid = Vec::new();
    let mut eigs = Vec::new();
    let mut skipped = Vec::new();
    let mut min_eig = f64::INFINITY;
    let mut worst = (f64::NAN, f64::NAN);
    let mut visit = |p: (f64, f64), v: Result<SymMatrix>| match v {
        Ok(s) => {
            let e = s.min_eigenvalue();
            grid.push(p);
            eigs.push(e);
            if e < min_eig {
                min_eig = e;
                worst = p;
            }
        }
        Err(_) => skipped.push(p),
    };
    for &w in omega_grid {
        visit((w, 0.0), phi_boundary(model, w));
        for &eta in eta_grid.iter().filter(|&&e| e > 0.0) {
            let z = Complex64::new(w, eta);
            let v = chi_hat(model, z).map(|c| SymMatrix::symmetrize(&(c * z).map(|x| x.im)));
            visit((w, eta), v);
        }
    }
    if grid.is_empty() {
        min_eig = 0.0;
    }
    PdcReport { grid, eigs, min_eig, worst_point: worst, passed: min_eig >= -pdc_tol, skipped }
}

/// a(t) = χ(0+)δ(t) + ∂_tχ(t).
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionFunction {
    pub dirac_weight: SymMatrix,
    model: SusceptibilityModel,
}

impl FrictionFunction {
    pub fn smooth_part(&self, t: f64) -> Result<SymMatrix> {
        chi_time_derivative(&self.model, t)
    }
}

pub fn friction_function(model: &SusceptibilityModel) -> FrictionFunction {
    FrictionFunction { dirac_weight: model.chi_zero_plus(), model: model.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(x: f64) -> SymMatrix {
        SymMatrix::scalar(x)
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Two-channel model exercising Sum and Conjugated.
    fn matrix_model() -> SusceptibilityModel {
        let rot = DMatrix::from_row_slice(2, 2, &[0.8, -0.6, 0.6, 0.8]);
        let l = SusceptibilityModel::lorentz(SymMatrix::from_diagonal(&[1.0, 0.3]), 1.2, 0.2).unwrap();
        let d = SusceptibilityModel::debye(SymMatrix::from_diagonal(&[0.5, 2.0]), 0.7).unwrap();
        SusceptibilityModel::sum(alloc::vec![SusceptibilityModel::conjugated(l, rot).unwrap(), d]).unwrap()
    }

    #[test]
    fn chi_time_examples() {
        assert_eq!(chi_time(&M::zero(2), 1.0).unwrap(), SymMatrix::zeros(2));
        assert_eq!(chi_time(&M::scalar_power_law(0.2, 1.0).unwrap(), 1.0).unwrap()[(0, 0)], 1.0);
        assert_eq!(chi_time(&M::scalar_markov(0.5), 3.0).unwrap()[(0, 0)], 0.5);
        assert!(matches!(chi_time(&M::scalar_markov(0.5), -1.0), Err(Error::NegativeTime(_))));
        let l = M::scalar_lorentz(2.0, 1.0, 0.1).unwrap();
        let nu = (1.0f64 - 0.0025).sqrt();
        assert_abs_diff_eq!(chi_time(&l, 2.0).unwrap()[(0, 0)], 2.0 * (-0.1f64).exp() * (2.0 * nu).sin() / nu, epsilon = 1e-15);
    }

    #[test]
    fn odd_extension_examples() {
        let d = M::scalar_debye(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(odd_extension(&d, -2.0).unwrap()[(0, 0)], -chi_time(&d, 2.0).unwrap()[(0, 0)]);
        assert_abs_diff_eq!(odd_extension(&d, -2.0).unwrap()[(0, 0)], -(-2.0f64).exp(), epsilon = 1e-16);
        assert_eq!(odd_extension(&M::zero(1), -1.0).unwrap()[(0, 0)], 0.0);
        assert_eq!(odd_extension(&M::scalar_power_law(0.2, 1.0).unwrap(), -1.0).unwrap()[(0, 0)], -1.0);
        assert_eq!(odd_extension(&d, 0.0), Err(Error::UndefinedAtZero));
        assert!(odd_extension(&M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(), 0.0).is_ok());
    }

    #[test]
    fn chi_hat_examples() {
        assert_abs_diff_eq!(chi_hat(&M::scalar_markov(0.5), c(0.0, 1.0)).unwrap()[(0, 0)].re, 0.5, epsilon = 1e-16);
        assert_eq!(chi_hat(&M::zero(2), c(1.0, 1.0)).unwrap(), CMatrix::zeros(2, 2));
        assert_eq!(chi_hat(&M::scalar_debye(1.0, 1.0).unwrap(), c(0.0, 0.0)).unwrap()[(0, 0)], c(1.0, 0.0));
        assert!(matches!(chi_hat(&M::scalar_markov(0.5), c(0.0, 0.0)), Err(Error::PoleOnAxis { .. })));
        assert!(matches!(chi_hat(&M::scalar_power_law(0.2, 1.0).unwrap(), c(0.0, 0.0)), Err(Error::PoleOnAxis { .. })));
        assert!(matches!(chi_hat(&M::scalar_lorentz(1.0, 1.0, 0.0).unwrap(), c(1.0, 0.0)), Err(Error::PoleOnAxis { .. })));
    }

    #[test]
    fn phi_examples() {
        for w in [-3.0, 0.0, 0.7, 10.0] {
            assert_eq!(phi_boundary(&M::scalar_markov(0.3), w).unwrap()[(0, 0)], 0.3);
            assert_eq!(phi_boundary(&M::zero(1), w).unwrap()[(0, 0)], 0.0);
        }
        let a: f64 = 0.2;
        let p = M::scalar_power_law(a, 1.0).unwrap();
        let want = libm::tgamma(1.2) * (0.1 * PI).cos() * 2.5f64.powf(-a);
        assert_abs_diff_eq!(phi_boundary(&p, 2.5).unwrap()[(0, 0)], want, epsilon = 1e-14);
        assert!(matches!(phi_boundary(&p, 0.0), Err(Error::PoleOnAxis { .. })));
    }

    #[test]
    fn phi_matches_imaginary_part_of_transform() {
        let models = [
            M::scalar_markov(0.4),
            M::scalar_debye(1.3, 0.6).unwrap(),
            M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(),
            M::scalar_power_law(0.25, 0.8).unwrap(),
            matrix_model(),
        ];
        for m in &models {
            for w in [-4.0, -0.3, 0.2, 1.1, 7.0] {
                let z = c(w, 0.0);
                let direct = chi_hat(m, z).unwrap().map(|x| (x * w).im);
                let phi = phi_boundary(m, w).unwrap();
                assert!((direct - phi.as_matrix()).norm() <= 1e-12 * (1.0 + phi.frobenius_norm()));
            }
        }
    }

    #[test]
    fn conjugate_symmetry_and_evenness() {
        let models = [M::scalar_debye(1.0, 2.0).unwrap(), M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(), M::scalar_power_law(0.3, 1.0).unwrap(), matrix_model()];
        for m in &models {
            for w in [0.1, 0.9, 1.0, 3.7] {
                let a = chi_hat(m, c(-w, 0.0)).unwrap();
                let b = chi_hat(m, c(w, 0.0)).unwrap().map(|x| x.conj());
                assert!((a - b).norm() <= 1e-12);
                let pa = phi_boundary(m, w).unwrap();
                let pb = phi_boundary(m, -w).unwrap();
                assert!((pa.as_matrix() - pb.as_matrix()).norm() <= 1e-12);
            }
        }
    }

    fn simpson(f: impl Fn(f64) -> Complex64, t_end: f64, n: usize) -> Complex64 {
        let h = t_end / n as f64;
        let mut acc = f(0.0) + f(t_end);
        for k in 1..n {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * (h / 3.0)
    }

    #[test]
    fn numeric_laplace_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [(M::scalar_debye(1.0, 1.5).unwrap(), 1.5), (M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(), 20.0)];
        for (m, decay) in &cases {
            for _ in 0..20 {
                let z = c(rng.random_range(-3.0..3.0), rng.random_range(0.1..2.0));
                let t_end = 40.0 * decay;
                let f = |t: f64| (Complex64::i() * z * t).exp() * chi_time(m, t).unwrap()[(0, 0)];
                let num = simpson(f, t_end, 200_000);
                let ana = chi_hat(m, z).unwrap()[(0, 0)];
                assert!((num - ana).norm() <= 1e-6, "{z}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let models = [M::scalar_markov(0.4), M::scalar_debye(1.0, 0.5).unwrap(), M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(), M::scalar_power_law(0.2, 1.0).unwrap(), matrix_model()];
        for m in &models {
            for z in [c(0.7, 0.0), c(1.4, 0.3), c(-2.0, 0.05)] {
                let e = 1e-6;
                let fd = (chi_hat(m, z + e).unwrap() - chi_hat(m, z - e).unwrap()) / c(2.0 * e, 0.0);
                let an = chi_hat_derivative(m, z).unwrap();
                assert!((fd - &an).norm() <= 1e-6 * (1.0 + an.norm()));
            }
        }
    }

    #[test]
    fn time_integral_matches_quadrature() {
        let models = [
            M::scalar_markov(0.4),
            M::scalar_debye(1.0, 0.5).unwrap(),
            M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(),
            M::scalar_lorentz(1.0, 0.5, 2.0).unwrap(),
            M::scalar_lorentz(2.0, 1.0, 0.0).unwrap(),
            M::scalar_power_law(0.2, 1.0).unwrap(),
            matrix_model(),
        ];
        for m in &models {
            for t in [0.3, 2.0, 7.5] {
                let n = m.stress_dim();
                for (i, j) in [(0, 0), (n - 1, 0)] {
                    let f = |s: f64| c(chi_time(m, s).unwrap()[(i, j)], 0.0);
                    let num = simpson(f, t, 20_000).re;
                    let ana = chi_time_integral(m, t).unwrap()[(i, j)];
                    // Simpson loses accuracy on the t^α endpoint
                    assert!((num - ana).abs() <= 1e-5 * (1.0 + ana.abs()), "{t}: {num} vs {ana}");
                }
            }
        }
        assert!(chi_time_integral(&M::scalar_markov(1.0), -1.0).is_err());
    }

    #[test]
    fn kramers_kronig_debye() {
        // Re χ̂(ω) = (2/π)∫₀^∞ (Φ(κ) − Φ(ω))/(κ² − ω²) dκ
        let m = M::scalar_debye(1.0, 1.0).unwrap();
        let phi = |k: f64| phi_boundary(&m, k).unwrap()[(0, 0)];
        for w in [0.3, 0.5, 2.0] {
            let (kmax, n) = (4000.0, 4_000_000);
            let h = kmax / n as f64;
            let g = |k: f64| {
                if (k - w).abs() < 1e-9 {
                    // removable point: derivative of Φ over 2ω
                    let e = 1e-5;
                    (phi(w + e) - phi(w - e)) / (2.0 * e) / (2.0 * w)
                } else {
                    (phi(k) - phi(w)) / (k * k - w * w)
                }
            };
            let mut acc = 0.5 * (g(0.0) + g(kmax));
            for j in 1..n {
                acc += g(j as f64 * h);
            }
            // tail beyond kmax: (Φ∞ − Φ(ω))/κ²
            let re = 2.0 / PI * (acc * h + (1.0 - phi(w)) / kmax);
            let want = chi_hat(&m, c(w, 0.0)).unwrap()[(0, 0)].re;
            assert!((re - want).abs() <= 1e-3, "{w}: {re} vs {want}");
        }
    }

    #[test]
    fn pdc_examples() {
        let omega: Vec<f64> = (0..=400).map(|k| -20.0 + 0.1 * k as f64).collect();
        let eta = [0.0, 0.1, 1.0];
        let l = check_pdc(&M::scalar_lorentz(1.0, 1.0, 0.1).unwrap(), &omega, &eta, PDC_TOL);
        assert!(l.passed);
        let z = check_pdc(&M::zero(1), &omega, &eta, PDC_TOL);
        assert!(z.passed && z.min_eig == 0.0);
        let flipped = M::scalar_power_law(0.2, -1.0).unwrap();
        let r = check_pdc(&flipped, &omega, &eta, PDC_TOL);
        assert!(!r.passed && r.min_eig < 0.0);
        assert!(r.skipped.contains(&(0.0, 0.0)));
        assert!(check_pdc(&matrix_model(), &omega, &eta, PDC_TOL).passed);
    }

    #[test]
    fn pdc_matches_brute_force_scan() {
        // independent dense scan of the closed-form scalar Lorentz Φ
        let (wp2, w0, g) = (1.0, 1.0, 0.1);
        let mut brute = f64::INFINITY;
        for k in 0..=40_000 {
            let w = -20.0 + 1e-3 * k as f64;
            let v = g * wp2 * w * w / ((w0 * w0 - w * w).powi(2) + g * g * w * w);
            brute = brute.min(v);
        }
        let omega: Vec<f64> = (0..=40_000).map(|k| -20.0 + 1e-3 * k as f64).collect();
        let r = check_pdc(&M::scalar_lorentz(wp2, w0, g).unwrap(), &omega, &[], PDC_TOL);
        assert_abs_diff_eq!(r.min_eig, brute, epsilon = 1e-15);
    }

    #[test]
    fn friction_examples() {
        let f = friction_function(&M::scalar_markov(0.7));
        assert_eq!(f.dirac_weight, s(0.7));
        assert_eq!(f.smooth_part(2.0).unwrap(), s(0.0));
        let f = friction_function(&M::scalar_debye(1.0, 1.0).unwrap());
        assert_eq!(f.dirac_weight, s(1.0));
        assert_abs_diff_eq!(f.smooth_part(1.5).unwrap()[(0, 0)], -(-1.5f64).exp(), epsilon = 1e-16);
        let f = friction_function(&M::zero(1));
        assert_eq!(f.dirac_weight, s(0.0));
        assert_eq!(f.smooth_part(0.3).unwrap(), s(0.0));
        // smooth part is the derivative of χ
        let m = matrix_model();
        let ff = friction_function(&m);
        let t = 0.8;
        let e = 1e-6;
        let fd = (chi_time(&m, t + e).unwrap().as_matrix() - chi_time(&m, t - e).unwrap().as_matrix()) / (2.0 * e);
        assert!((fd - ff.smooth_part(t).unwrap().as_matrix()).norm() < 1e-8);
    }

    #[test]
    fn atoms_and_central_mass() {
        let l = M::scalar_lorentz(2.0, 1.5, 0.0).unwrap();
        assert_eq!(l.spectral_atoms(), alloc::vec![(1.5, s(2.0))]);
        assert!(M::scalar_lorentz(2.0, 1.5, 0.1).unwrap().spectral_atoms().is_empty());
        let p = M::scalar_power_law(0.2, 1.0).unwrap();
        // ∫_{-h}^{h} c|κ|^{-α} dκ by brute force midpoint sums
        let h = 0.05;
        let n = 2_000_000;
        let mut acc = 0.0;
        for j in 0..n {
            let k = (j as f64 + 0.5) * h / n as f64;
            acc += phi_boundary(&p, k).unwrap()[(0, 0)];
        }
        let brute = 2.0 * acc * h / n as f64;
        assert!((p.phi_central_mass(h)[(0, 0)] - brute).abs() < 1e-4 * brute);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn chi_time_symmetric(t in 0.0f64..50.0) {
                let m = matrix_model();
                let x = chi_time(&m, t).unwrap();
                prop_assert_eq!(x.as_matrix().transpose(), x.as_matrix().clone());
            }

            #[test]
            fn pdc_holds_in_upper_half_plane(w in -10.0f64..10.0, eta in 0.0f64..5.0) {
                let m = matrix_model();
                let z = c(w, eta);
                let im = SymMatrix::symmetrize(&(chi_hat(&m, z).unwrap() * z).map(|x| x.im));
                prop_assert!(im.min_eigenvalue() >= -PDC_TOL);
            }
        }
    }
}

//! Hidden-string coupling ς̂(κ) = √(2Φ(κ)) on a frequency grid, its
//! spatial profile ς(s), and the identities tying it back to χ.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SymMatrix};
use crate::susceptibility::{chi_hat, phi_density, CMatrix, SusceptibilityModel};

/// Default flatness tolerance of the dissipation tail at the cutoff.
pub const TAIL_TOL: f64 = 1e-3;

/// Symmetric grid κ_j = j·Δκ, |j| ≤ n − 1, stored for κ ≥ 0 with folded
/// trapezoid weights (Δκ at κ = 0 and at the cutoff, 2Δκ in between).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaGrid {
    pub dk: f64,
    pub n: usize,
}

impl KappaGrid {
    pub fn new(dk: f64, kmax: f64) -> Result<Self> {
        if !(dk > 0.0 && dk.is_finite()) {
            return Err(Error::InvalidParameter("kappa spacing must be positive"));
        }
        if !(kmax >= dk && kmax.is_finite()) {
            return Err(Error::InvalidParameter("kappa cutoff must be at least one spacing"));
        }
        let n = (kmax / dk).round() as usize + 1;
        Ok(KappaGrid { dk, n })
    }

    pub fn kmax(&self) -> f64 {
        (self.n - 1) as f64 * self.dk
    }

    pub fn kappa(&self, j: usize) -> f64 {
        j as f64 * self.dk
    }

    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.n - 1 {
            self.dk
        } else {
            2.0 * self.dk
        }
    }
}

/// Uniform half-line string grid s_i = i·Δs, i = 0..=n_half (the full grid is
/// mirrored). `lattice_matched` pre-warps the coupling so the discrete string
/// reproduces the continuum kernel exactly below the lattice cutoff 2/Δs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    pub ds: f64,
    pub n_half: usize,
    pub lattice_matched: bool,
}

impl SpatialGrid {
    pub fn new(ds: f64, extent: f64, lattice_matched: bool) -> Result<Self> {
        if !(ds > 0.0 && extent > ds) {
            return Err(Error::InvalidParameter("spatial grid needs 0 < ds < extent"));
        }
        Ok(SpatialGrid { ds, n_half: (extent / ds).ceil() as usize, lattice_matched })
    }

    pub fn extent(&self) -> f64 {
        self.n_half as f64 * self.ds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCoupling {
    pub grid: SpatialGrid,
    /// ς(s_i) for i = 0..=n_half; ς(−s) = ς(s)
    pub samples: Vec<SymMatrix>,
}

impl SpatialCoupling {
    /// Smallest |s| beyond which every sample is below `rel_tol` of the peak.
    pub fn support(&self, rel_tol: f64) -> f64 {
        let norms: Vec<f64> = self.samples.iter().map(|m| m.frobenius_norm()).collect();
        let peak = norms.iter().copied().fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let last = norms.iter().rposition(|&v| v > rel_tol * peak).unwrap_or(0);
        last as f64 * self.grid.ds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOptions {
    pub dk: f64,
    pub kmax: f64,
    pub tail_tol: f64,
    pub spatial: Option<SpatialGrid>,
}

impl CouplingOptions {
    pub fn new(dk: f64, kmax: f64) -> Self {
        CouplingOptions { dk, kmax, tail_tol: TAIL_TOL, spatial: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFunction {
    pub grid: KappaGrid,
    /// ς̂(κ_j) = √(2Φ(κ_j)); at κ = 0 the cell average of Φ is used
    pub sigma_hat: Vec<SymMatrix>,
    /// 2Φ(κ_j) − 2Φ_∞: the grid density left after the Dirac part is split off
    pub gram: Vec<SymMatrix>,
    /// Φ_∞ = χ(0+)
    pub phi_inf: SymMatrix,
    /// √(2Φ_∞), weight of the δ(s) component of ς
    pub dirac_weight: SymMatrix,
    /// (κ_a, A): atoms contributing A·sin(κ_a t)/κ_a to χ
    pub atoms: Vec<(f64, SymMatrix)>,
    pub spatial: Option<SpatialCoupling>,
}

/// ς̂(κ) = psd_sqrt(2Φ(κ + i0)).
pub fn coupling_hat(model: &SusceptibilityModel, kappa: f64) -> Result<SymMatrix> {
    psd_sqrt(&phi_density(model, kappa)?.scale(2.0))
}

pub fn build_coupling(model: &SusceptibilityModel, dk: f64, kmax: f64, s_grid: Option<SpatialGrid>) -> Result<CouplingFunction> {
    build_coupling_with(model, &CouplingOptions { spatial: s_grid, ..CouplingOptions::new(dk, kmax) })
}

pub fn build_coupling_with(model: &SusceptibilityModel, opts: &CouplingOptions) -> Result<CouplingFunction> {
    let grid = KappaGrid::new(opts.dk, opts.kmax)?;
    let mut phi = Vec::with_capacity(grid.n);
    // a singular Φ(0) (power law) is replaced by its cell average
    phi.push(match phi_density(model, 0.0) {
        Ok(p) => p,
        Err(Error::PoleOnAxis { .. }) => model.phi_central_mass(0.5 * grid.dk).scale(1.0 / grid.dk),
        Err(e) => return Err(e),
    });
    for j in 1..grid.n {
        phi.push(phi_density(model, grid.kappa(j))?);
    }
    let sigma_hat = phi.iter().map(|p| psd_sqrt(&p.scale(2.0))).collect::<Result<Vec<_>>>()?;
    let phi_inf = model.chi_zero_plus();
    let dirac_weight = psd_sqrt(&phi_inf.scale(2.0))?;

    let kmax = grid.kmax();
    let at_k = &phi[grid.n - 1];
    let inner = phi_density(model, 0.9 * kmax)?;
    let residual = at_k.sub(&inner).spectral_norm().max(at_k.sub(&phi_inf).spectral_norm());
    if residual > opts.tail_tol {
        return Err(Error::TailNotResolved { residual, tol: opts.tail_tol });
    }

    let gram = phi.iter().map(|p| p.sub(&phi_inf).scale(2.0)).collect();
    let spatial = match opts.spatial {
        Some(g) => Some(spatial_samples(model, &phi_inf, kmax, g)?),
        None => None,
    };
    Ok(CouplingFunction { grid, sigma_hat, gram, phi_inf, dirac_weight, atoms: model.spectral_atoms(), spatial })
}

/// ς(s_i) = (1/π)∫₀^{K} c(κ)cos(κ s_i)dκ with c = √(2Φ_reg) (continuum) or its
/// lattice-warped version c(κ) = √(2Φ_reg(κ_eff)·cos(κΔs/2)), κ_eff = (2/Δs)sin(κΔs/2).
fn spatial_samples(model: &SusceptibilityModel, phi_inf: &SymMatrix, kmax: f64, g: SpatialGrid) -> Result<SpatialCoupling> {
    let dim = model.stress_dim();
    let ds = g.ds;
    let top = if g.lattice_matched { PI / ds } else { kmax };
    // quadrature period 2π/Δκ_q ≥ 4·extent keeps the samples alias-free
    let nq = ((4.0 * g.extent() * top / (2.0 * PI)).ceil() as usize).max(16);
    let hq = top / nq as f64;
    let mut c = Vec::with_capacity(nq + 1);
    for q in 0..=nq {
        let k = q as f64 * hq;
        let (keff, jac) = if g.lattice_matched {
            (2.0 / ds * (0.5 * k * ds).sin(), (0.5 * k * ds).cos().max(0.0))
        } else {
            (k, 1.0)
        };
        if keff > kmax * (1.0 + 1e-12) {
            c.push(SymMatrix::zeros(dim));
            continue;
        }
        // the power law is singular at 0; the first node samples half a step in
        let phi = phi_density(model, keff.max(0.5 * hq))?;
        let reg = phi.sub(phi_inf).scale(2.0 * jac);
        let w = if q == 0 || q == nq { 0.5 } else { 1.0 };
        c.push(psd_sqrt(&reg)?.scale(w * hq / PI));
    }
    let mut samples = Vec::with_capacity(g.n_half + 1);
    let mut acc = vec![0.0; dim * dim];
    for i in 0..=g.n_half {
        let s = i as f64 * ds;
        let (sd, cd) = (hq * s).sin_cos();
        let (mut co, mut si) = (1.0, 0.0);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for cq in &c {
            let m = cq.as_matrix();
            for (a, v) in acc.iter_mut().zip(m.iter()) {
                *a += v * co;
            }
            let nco = co * cd - si * sd;
            si = si * cd + co * sd;
            co = nco;
        }
        let m = nalgebra::DMatrix::from_column_slice(dim, dim, &acc);
        samples.push(SymMatrix::symmetrize(&m));
    }
    Ok(SpatialCoupling { grid: g, samples })
}

fn ccast(m: &SymMatrix, z: Complex64) -> CMatrix {
    m.as_matrix().map(|x| z * x)
}

impl CouplingFunction {
    pub fn dim(&self) -> usize {
        self.phi_inf.dim()
    }

    pub fn has_dirac(&self) -> bool {
        self.phi_inf.frobenius_norm() > 0.0
    }

    /// (1/2π)∫ ς̂²/(κ² − ζ²)dκ over the grid with the Dirac part taken in
    /// closed form (iΦ_∞/ζ), plus the atoms.
    pub fn herglotz_value(&self, zeta: Complex64) -> CMatrix {
        let n = self.dim();
        let mut acc = CMatrix::zeros(n, n);
        let z2 = zeta * zeta;
        for j in 0..self.grid.n {
            let k = self.grid.kappa(j);
            let w = self.grid.weight(j) / (2.0 * PI);
            acc += ccast(&self.gram[j], w / (k * k - z2));
        }
        for (k, a) in &self.atoms {
            acc += ccast(a, Complex64::new(1.0, 0.0) / (k * k - z2));
        }
        acc + ccast(&self.phi_inf, Complex64::i() / zeta)
    }

    /// χ(τ) = Φ_∞ + (1/2π)Σ w_j W_j sin(κ_jτ)/κ_j + atoms, for τ > 0.
    pub fn chi_from_modes(&self, tau: f64) -> SymMatrix {
        let mut acc = self.phi_inf.clone();
        for j in 0..self.grid.n {
            let k = self.grid.kappa(j);
            let sk = if k == 0.0 { tau } else { (k * tau).sin() / k };
            acc = acc.add(&self.gram[j].scale(self.grid.weight(j) / (2.0 * PI) * sk));
        }
        for (k, a) in &self.atoms {
            acc = acc.add(&a.scale((k * tau).sin() / k));
        }
        acc
    }

    /// CSV block: κ followed by the row-major entries of ς̂(κ).
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::from("kappa");
        for i in 0..n {
            for j in 0..n {
                let _ = write!(out, ",sigma_hat_{i}{j}");
            }
        }
        out.push('\n');
        for (jn, s) in self.sigma_hat.iter().enumerate() {
            out.push_str(&format!("{:e}", self.grid.kappa(jn)));
            for i in 0..n {
                for j in 0..n {
                    let _ = write!(out, ",{:e}", s[(i, j)]);
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Max relative Frobenius residual between the κ-integral and χ̂ over the probes.
pub fn verify_herglotz(coupling: &CouplingFunction, model: &SusceptibilityModel, probes: &[Complex64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &z in probes {
        if !(z.im > 0.0) {
            return Err(Error::InvalidParameter("Herglotz probes need Im zeta > 0"));
        }
        let want = chi_hat(model, z)?;
        let got = coupling.herglotz_value(z);
        let scale = want.norm();
        let r = (got - &want).norm();
        worst = worst.max(if scale > 0.0 { r / scale } else { r });
    }
    Ok(worst)
}

/// Kernel recovered from the coupling at each τ > 0.
pub fn reconstruct_chi(coupling: &CouplingFunction, tau_grid: &[f64]) -> Result<Vec<SymMatrix>> {
    if tau_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter("reconstruction needs tau > 0"));
    }
    Ok(tau_grid.iter().map(|&t| coupling.chi_from_modes(t)).collect())
}

//! Ready-made systems: the damped (Lamb) oscillator, a nonlinear oscillator
//! with linear friction, and a 1D Maxwell line with a dispersive slab.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::coupling::build_coupling;
use crate::drive::Drive;
use crate::error::{Error, Result};
use crate::extension::{
    build_extension_on, Discretization, ExtendedState, ExtendedSystem, Nonlinearity, PqSplit, SystemSpec,
};
use crate::linalg::{canonical_j, Csr, SymMatrix};
use crate::susceptibility::SusceptibilityModel as M;

/// Minimum grid points per shortest drive wavelength.
pub const MIN_POINTS_PER_WAVELENGTH: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Damping {
    Under,
    Critical,
    Over,
}

/// Mass on a spring with instantaneous friction γq̇ (per unit mass):
/// m q̈ = −k q − γ m q̇. Phase space u = (p, q), stress f = (p/√m, √k q),
/// Markov friction on the p channel.
#[derive(Debug, Clone)]
pub struct DampedOscillator {
    pub spec: SystemSpec,
    pub model: M,
    pub channels: Vec<usize>,
    pub mass: f64,
    pub stiffness: f64,
    pub gamma: f64,
}

pub fn damped_oscillator(m: f64, k: f64, gamma: f64) -> Result<DampedOscillator> {
    if !(m > 0.0 && k > 0.0 && gamma >= 0.0) || !(m.is_finite() && k.is_finite() && gamma.is_finite()) {
        return Err(Error::InvalidParameter("oscillator needs m, k > 0 and gamma >= 0"));
    }
    let kmat = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 / m.sqrt(), k.sqrt()]));
    let spec = SystemSpec::new(&canonical_j(1), &kmat)?.with_pq_split(PqSplit { v_p: 1, h_p: 1 })?;
    Ok(DampedOscillator {
        spec,
        model: M::scalar_markov(gamma),
        channels: vec![0],
        mass: m,
        stiffness: k,
        gamma,
    })
}

impl DampedOscillator {
    pub fn regime(&self) -> Damping {
        let a2 = 0.25 * self.gamma * self.gamma;
        let w2 = self.stiffness / self.mass;
        if (a2 - w2).abs() <= 1e-12 * w2 {
            Damping::Critical
        } else if a2 < w2 {
            Damping::Under
        } else {
            Damping::Over
        }
    }

    /// u = (p, q) for position q0 and velocity v0 with the string at rest.
    pub fn phase_point(&self, q0: f64, v0: f64) -> [f64; 2] {
        [self.mass * v0, q0]
    }

    /// Closed-form q(t) from q(0) = q0, q̇(0) = v0.
    pub fn q_analytic(&self, t: f64, q0: f64, v0: f64) -> f64 {
        let a = 0.5 * self.gamma;
        let w2 = self.stiffness / self.mass;
        let b = v0 + a * q0;
        let decay = (-a * t).exp();
        match self.regime() {
            Damping::Critical => decay * (q0 + b * t),
            Damping::Under => {
                let nu = (w2 - a * a).sqrt();
                decay * (q0 * (nu * t).cos() + b / nu * (nu * t).sin())
            }
            Damping::Over => {
                let mu = (a * a - w2).sqrt();
                // e^{−at}cosh(μt) written with decaying exponentials only
                let (ep, em) = ((-(a - mu) * t).exp(), (-(a + mu) * t).exp());
                0.5 * q0 * (ep + em) + 0.5 * b / mu * (ep - em)
            }
        }
    }

    /// Spectral extension coupling the friction to the p channel.
    pub fn extension(&self, dk: f64, kmax: f64) -> Result<ExtendedSystem> {
        let c = build_coupling(&self.model, dk, kmax, None)?;
        build_extension_on(self.spec.clone(), c, self.channels.clone(), Discretization::Spectral)
    }
}

/// H = p²/2m + V(q) with Markov friction γ on the p channel.
#[derive(Debug, Clone)]
pub struct NonlinearOscillator {
    pub spec: SystemSpec,
    pub model: M,
    pub channels: Vec<usize>,
    pub mass: f64,
}

pub fn nonlinear_oscillator<V, G>(m: f64, gamma: f64, potential: V, gradient: G) -> Result<NonlinearOscillator>
where
    V: Fn(f64) -> f64 + Send + Sync + 'static,
    G: Fn(f64) -> f64 + Send + Sync + 'static,
{
    if !(m > 0.0 && gamma >= 0.0) || !(m.is_finite() && gamma.is_finite()) {
        return Err(Error::InvalidParameter("oscillator needs m > 0 and gamma >= 0"));
    }
    let kmat = DMatrix::from_row_slice(1, 2, &[1.0 / m.sqrt(), 0.0]);
    let nl = Nonlinearity {
        gradient: Arc::new(move |u: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = gradient(u[1]);
        }),
        potential: Arc::new(move |u: &[f64]| potential(u[1])),
    };
    let spec = SystemSpec::new(&canonical_j(1), &kmat)?
        .with_pq_split(PqSplit { v_p: 1, h_p: 1 })?
        .with_nonlinear(nl);
    Ok(NonlinearOscillator { spec, model: M::scalar_markov(gamma), channels: vec![0], mass: m })
}

impl NonlinearOscillator {
    pub fn extension(&self, dk: f64, kmax: f64) -> Result<ExtendedSystem> {
        let c = build_coupling(&self.model, dk, kmax, None)?;
        build_extension_on(self.spec.clone(), c, self.channels.clone(), Discretization::Spectral)
    }
}

/// Uniform grid of `n` nodes x_i = x0 + iΔx; half nodes sit between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellGrid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl MaxwellGrid {
    pub fn node(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn half_node(&self, i: usize) -> f64 {
        self.x0 + (i as f64 + 0.5) * self.dx
    }

    /// Index of the node closest to x (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x - self.x0) / self.dx).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n - 1)
        }
    }
}

/// Dispersive region x_lo ≤ x ≤ x_hi with D = εE + χ_E ∗ E (χ_E scalar).
#[derive(Debug, Clone, PartialEq)]
pub struct Slab {
    pub model: M,
    pub x_lo: f64,
    pub x_hi: f64,
}

/// 1D Maxwell system in temporal gauge (c = 1, Gaussian units).
///
/// Phase space u = (Π̃, Ã) = √(Δx/4π)(−D_i, A_i) on the nodes. Stress is
/// interleaved as (E₀, H_½, E₁, H_3/2, …) with K_E = −ε^{−1/2} and
/// K_H = μ^{−1/2}∂₊, so H_sys = Σ Δx (εE² + μH²)/8π. The ends are free:
/// domains should be sized so that nothing reaches them.
#[derive(Debug, Clone)]
pub struct Maxwell1d {
    pub spec: SystemSpec,
    pub grid: MaxwellGrid,
    /// ε at the nodes
    pub eps: Vec<f64>,
    /// μ at the half nodes
    pub mu: Vec<f64>,
    /// stress-space susceptibility ε^{−1/2}χ_Eε^{−1/2} on the slab E channels
    pub model: Option<M>,
    /// stress indices of the slab E channels
    pub channels: Vec<usize>,
    scale: f64,
}

pub fn maxwell1d(
    grid: MaxwellGrid,
    eps: &dyn Fn(f64) -> f64,
    mu: &dyn Fn(f64) -> f64,
    slab: Option<Slab>,
    omega_max: f64,
) -> Result<Maxwell1d> {
    let n = grid.n;
    if n < 2 || !(grid.dx > 0.0) || !grid.dx.is_finite() || !grid.x0.is_finite() {
        return Err(Error::InvalidParameter("Maxwell grid needs n >= 2 and dx > 0"));
    }
    let eps: Vec<f64> = (0..n).map(|i| eps(grid.node(i))).collect();
    let mu: Vec<f64> = (0..n - 1).map(|i| mu(grid.half_node(i))).collect();
    if eps.iter().chain(&mu).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("eps and mu must be positive and finite"));
    }
    let n_max = (eps.iter().fold(0.0f64, |a, &b| a.max(b)) * mu.iter().fold(0.0f64, |a, &b| a.max(b))).sqrt();
    if omega_max > 0.0 {
        let ppw = 2.0 * PI / (omega_max * n_max * grid.dx);
        if ppw < MIN_POINTS_PER_WAVELENGTH {
            return Err(Error::GridTooCoarse { points_per_wavelength: ppw });
        }
    }
    let mut k = Vec::with_capacity(3 * n);
    for i in 0..n {
        k.push((2 * i, i, -1.0 / eps[i].sqrt()));
    }
    for (i, m) in mu.iter().enumerate() {
        let c = 1.0 / (m.sqrt() * grid.dx);
        k.push((2 * i + 1, n + i + 1, c));
        k.push((2 * i + 1, n + i, -c));
    }
    let mut j = Vec::with_capacity(2 * n);
    for i in 0..n {
        j.push((i, n + i, -1.0));
        j.push((n + i, i, 1.0));
    }
    let spec = SystemSpec::from_sparse(Csr::from_triplets(2 * n, 2 * n, j), Csr::from_triplets(2 * n - 1, 2 * n, k))?;
    let (model, channels) = match slab {
        None => (None, Vec::new()),
        Some(s) => {
            let nodes: Vec<usize> = (0..n).filter(|&i| grid.node(i) >= s.x_lo && grid.node(i) <= s.x_hi).collect();
            if nodes.is_empty() {
                return Err(Error::InvalidParameter("slab contains no grid nodes"));
            }
            let base = replicate(&s.model, nodes.len())?;
            let c = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                nodes.len(),
                nodes.iter().map(|&i| 1.0 / eps[i].sqrt()),
            ));
            (Some(M::conjugated(base, c)?), nodes.iter().map(|&i| 2 * i).collect())
        }
    };
    Ok(Maxwell1d { spec, grid, eps, mu, model, channels, scale: (grid.dx / (4.0 * PI)).sqrt() })
}

/// Copy a scalar model onto n independent identical channels.
fn replicate(model: &M, n: usize) -> Result<M> {
    if model.stress_dim() != 1 {
        return Err(Error::InvalidParameter("slab susceptibility must be scalar"));
    }
    let id = |a: &SymMatrix| SymMatrix::identity(n).scale(a[(0, 0)]);
    Ok(match model {
        M::Zero { .. } => M::Zero { dim: n },
        M::Markov { gamma } => M::Markov { gamma: id(gamma) },
        M::Debye { delta, tau } => M::Debye { delta: id(delta), tau: *tau },
        M::Lorentz { strength, omega0, damping } => {
            M::Lorentz { strength: id(strength), omega0: *omega0, damping: *damping }
        }
        M::PowerLaw { alpha, scale } => M::PowerLaw { alpha: *alpha, scale: id(scale) },
        M::Sum(ms) => M::Sum(ms.iter().map(|m| replicate(m, n)).collect::<Result<_>>()?),
        M::Conjugated { base, c } => {
            if c.nrows() != 1 || c.ncols() != 1 {
                return Err(Error::InvalidParameter("slab susceptibility must be scalar"));
            }
            M::Conjugated { base: Box::new(replicate(base, n)?), c: DMatrix::identity(n, n) * c[(0, 0)] }
        }
    })
}

/// Current density j(x, t) = profile(t)·shape_i entering as ρ_Π = √(Δx/4π)·4πj.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentDrive<D> {
    /// scalar time profile (one-component amplitude)
    pub profile: D,
    /// ρ per unit profile, indexed by phase-space coordinate
    pub weights: Vec<(usize, f64)>,
    dim: usize,
}

impl<D: Drive> Drive for CurrentDrive<D> {
    fn force(&self, t: f64, out: &mut [f64]) {
        let mut a = [0.0];
        self.profile.force(t, &mut a);
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(i, w) in &self.weights {
            out[i] = w * a[0];
        }
    }

    fn support(&self) -> (f64, f64) {
        self.profile.support()
    }
}

impl<D> CurrentDrive<D> {
    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Maxwell1d {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn dim_v(&self) -> usize {
        2 * self.grid.n
    }

    pub fn dim_h(&self) -> usize {
        2 * self.grid.n - 1
    }

    pub fn e_index(i: usize) -> usize {
        2 * i
    }

    pub fn h_index(i: usize) -> usize {
        2 * i + 1
    }

    /// Extension with the slab susceptibility; without a slab the string
    /// couples to node 0 with zero strength.
    pub fn extension(&self, dk: f64, kmax: f64) -> Result<ExtendedSystem> {
        let (model, channels) = match &self.model {
            Some(m) => (m.clone(), self.channels.clone()),
            None => (M::zero(1), vec![0]),
        };
        let c = build_coupling(&model, dk, kmax, None)?;
        build_extension_on(self.spec.clone(), c, channels, Discretization::Spectral)
    }

    /// Sheet current of unit strength per profile unit at the node nearest x.
    pub fn sheet_current<D: Drive>(&self, x: f64, profile: D) -> CurrentDrive<D> {
        let i = self.grid.nearest(x);
        let w = self.scale * 4.0 * PI / self.grid.dx;
        CurrentDrive { profile, weights: vec![(i, w)], dim: self.dim_v() }
    }

    /// Distributed current j(x, t) = profile(t)·shape(x).
    pub fn distributed_current<D: Drive>(&self, shape: &dyn Fn(f64) -> f64, profile: D) -> CurrentDrive<D> {
        let weights = (0..self.n())
            .map(|i| (i, self.scale * 4.0 * PI * shape(self.grid.node(i))))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        CurrentDrive { profile, weights, dim: self.dim_v() }
    }

    /// E at the nodes from the kinematical stress.
    pub fn e_field(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| f[2 * i] / (self.eps[i].sqrt() * self.scale)).collect()
    }

    /// H at the half nodes from the kinematical stress.
    pub fn h_field(&self, f: &[f64]) -> Vec<f64> {
        self.mu.iter().enumerate().map(|(i, m)| f[2 * i + 1] / (m.sqrt() * self.scale)).collect()
    }

    /// D at the nodes.
    pub fn d_field(&self, u: &[f64]) -> Vec<f64> {
        u[..self.n()].iter().map(|p| -p / self.scale).collect()
    }

    /// Vector potential A at the nodes.
    pub fn a_field(&self, u: &[f64]) -> Vec<f64> {
        u[self.n()..].iter().map(|a| a / self.scale).collect()
    }

    /// B = ∂ₓA at the half nodes.
    pub fn b_field(&self, u: &[f64]) -> Vec<f64> {
        let a = &u[self.n()..];
        a.windows(2).map(|w| (w[1] - w[0]) / (self.grid.dx * self.scale)).collect()
    }

    /// System energy density (εE² + μH²)/8π at the nodes; each half-node
    /// magnetic term is shared equally by its two neighbours.
    pub fn energy_density(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut w: Vec<f64> = (0..n).map(|i| 0.5 * f[2 * i] * f[2 * i]).collect();
        for i in 0..n - 1 {
            let h = 0.25 * f[2 * i + 1] * f[2 * i + 1];
            w[i] += h;
            w[i + 1] += h;
        }
        w.iter().map(|x| x / self.grid.dx).collect()
    }

    /// Poynting flux S = E·H/4π at the half nodes (E averaged).
    pub fn poynting(&self, f: &[f64]) -> Vec<f64> {
        let e = self.e_field(f);
        let h = self.h_field(f);
        h.iter().enumerate().map(|(i, hv)| 0.5 * (e[i] + e[i + 1]) * hv / (4.0 * PI)).collect()
    }

    /// Field energy of the nodes lo..=hi and the half nodes strictly
    /// between them.
    pub fn region_energy(&self, f: &[f64], lo: usize, hi: usize) -> f64 {
        let e: f64 = (lo..=hi).map(|i| 0.5 * f[2 * i] * f[2 * i]).sum();
        let h: f64 = (lo..hi).map(|i| 0.5 * f[2 * i + 1] * f[2 * i + 1]).sum();
        e + h
    }

    /// Rate at which field energy leaves nodes 0..=b through the interface
    /// to half node b+½; exact for the semi-discrete dynamics.
    pub fn interface_flux(&self, f: &[f64], b: usize) -> f64 {
        let e = f[2 * b] / self.eps[b].sqrt();
        let h = f[2 * b + 1] / (self.mu[b].sqrt() * self.grid.dx);
        e * h
    }

    /// String energy density at the nodes (zero outside the slab).
    pub fn string_energy_density(&self, ext: &ExtendedSystem, state: &ExtendedState) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        if self.model.is_some() {
            if let Some(ch) = ext.channel_string_energy(state) {
                for (c, e) in self.channels.iter().zip(ch) {
                    out[c / 2] = e / self.grid.dx;
                }
            }
        }
        out
    }

    /// CSV with columns x, E, H, D, B, H_sys, H_str at the nodes; H and B
    /// are averaged from the neighbouring half nodes.
    pub fn field_csv(&self, ext: &ExtendedSystem, state: &ExtendedState) -> String {
        let f = ext.kinematical_stress(state);
        let e = self.e_field(&f);
        let h = to_nodes(&self.h_field(&f));
        let d = self.d_field(&state.u);
        let b = to_nodes(&self.b_field(&state.u));
        let ws = self.energy_density(&f);
        let wr = self.string_energy_density(ext, state);
        let mut s = String::from("x,E,H,D,B,H_sys,H_str\n");
        for i in 0..self.n() {
            let _ = writeln!(
                s,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                self.grid.node(i),
                e[i],
                h[i],
                d[i],
                b[i],
                ws[i],
                wr[i]
            );
        }
        s
    }
}

fn to_nodes(half: &[f64]) -> Vec<f64> {
    let n = half.len() + 1;
    (0..n)
        .map(|i| match (i.checked_sub(1).map(|j| half[j]), half.get(i)) {
            (Some(a), Some(&b)) => 0.5 * (a + b),
            (Some(a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => 0.0,
        })
        .collect()
}

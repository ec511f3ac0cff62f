//! The extended conservative system: the original phase space coupled to a
//! hidden string, integrated with an energy-preserving implicit midpoint rule.
//!
//! Stress is f = K·u − P(T(string) + Φ_∞F). The string is either a bank of
//! unit oscillators g_j on the κ-grid (spectral) or a lattice field φ(s_i)
//! (spatial); the memoryless Dirac part of the friction is carried by the
//! state F with dF/dt = Pᵀf, whose energy ∫⟨f, Φ_∞f⟩dt is radiated along
//! the string and never returns.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::fmt::Write;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::coupling::{CouplingFunction, SpatialCoupling};
use crate::drive::Drive;
use crate::error::{Error, Result};
use crate::linalg::{check_symplectic_sparse, dot, psd_sqrt, Csr, LinearSolver, SymMatrix};

/// Relative level below which the spatial coupling is treated as zero when
/// sizing the light cone.
pub const SUPPORT_TOL: f64 = 1e-4;
/// Fixed-point tolerance of the nonlinear midpoint equations.
pub const NONLINEAR_TOL: f64 = 1e-12;
pub const NONLINEAR_MAX_ITER: usize = 50;

// 4-point Gauss–Legendre rule on [0, 1]
const GAUSS_NODES: [f64; 4] = [
    0.069_431_844_202_973_71,
    0.330_009_478_207_571_9,
    0.669_990_521_792_428_1,
    0.930_568_155_797_026_3,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.173_927_422_568_726_93,
    0.326_072_577_431_273_07,
    0.326_072_577_431_273_07,
    0.173_927_422_568_726_93,
];

pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type PotentialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Non-quadratic part h₁ of the Hamiltonian together with its gradient.
#[derive(Clone)]
pub struct Nonlinearity {
    pub gradient: GradientFn,
    pub potential: PotentialFn,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Nonlinearity")
    }
}

/// V = V_p ⊕ V_q and H = H_p ⊕ H_q with K block-diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PqSplit {
    pub v_p: usize,
    pub h_p: usize,
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub j: Csr,
    pub k: Csr,
    pub nonlinear: Option<Nonlinearity>,
    pub pq_split: Option<PqSplit>,
}

impl SystemSpec {
    pub fn new(j: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<Self> {
        SystemSpec::from_sparse(Csr::from_dense(j), Csr::from_dense(k))
    }

    pub fn from_sparse(j: Csr, k: Csr) -> Result<Self> {
        if k.cols != j.rows {
            return Err(Error::DimensionMismatch { expected: j.rows, found: k.cols });
        }
        if !check_symplectic_sparse(&j)? {
            return Err(Error::InvalidParameter("J is not symplectic"));
        }
        if (0..k.rows).any(|i| k.row(i).any(|(_, v)| !v.is_finite())) {
            return Err(Error::NonFinite);
        }
        Ok(SystemSpec { j, k, nonlinear: None, pq_split: None })
    }

    pub fn with_nonlinear(mut self, n: Nonlinearity) -> Self {
        self.nonlinear = Some(n);
        self
    }

    pub fn with_pq_split(mut self, split: PqSplit) -> Result<Self> {
        if split.v_p > self.dim_v() || split.h_p > self.dim_h() {
            return Err(Error::InvalidParameter("p/q split exceeds dimensions"));
        }
        for i in 0..self.k.rows {
            if self.k.row(i).any(|(c, v)| v != 0.0 && (i < split.h_p) != (c < split.v_p)) {
                return Err(Error::InvalidParameter("K is not block-diagonal for the p/q split"));
            }
        }
        self.pq_split = Some(split);
        Ok(self)
    }

    pub fn dim_v(&self) -> usize {
        self.j.rows
    }

    pub fn dim_h(&self) -> usize {
        self.k.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Discretization {
    Spectral,
    /// Lattice string on the coupling's spatial grid, sized for runs up to `t_max`.
    Spatial { t_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepScheme {
    #[default]
    ImplicitMidpoint,
    /// Spectral only: exact per-mode rotation with the stress frozen at the midpoint.
    ExponentialMidpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StringState {
    /// Unit oscillators, mode-major: g[j·m + c].
    Spectral { g: Vec<f64>, v: Vec<f64> },
    /// Lattice field, channel-major: phi[c·nodes + i], node i at s = (i − N)Δs.
    Spatial { phi: Vec<f64>, theta: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub t: f64,
    pub u: Vec<f64>,
    pub string: StringState,
    /// F = ∫Pᵀf dt, the Dirac-channel state
    pub dirac: Vec<f64>,
    /// ∫⟨f, Φ_∞f⟩dt, energy radiated through the Dirac channel
    pub radiated: f64,
    /// ∫⟨Kᵀf + ∇h₁, ρ⟩dt
    pub work_ext: f64,
}

#[derive(Debug, Clone)]
enum Bank {
    Spectral { kappa: Vec<f64>, mass: Vec<f64> },
    Spatial { ds: f64, n_half: usize, sigma: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    pub spec: SystemSpec,
    pub coupling: CouplingFunction,
    /// Stress indices carrying the coupled channels (P embeds them).
    pub channels: Vec<usize>,
    pub discretization: Discretization,
    pub markov_channel: bool,
    bank: Bank,
    /// per-mode / per-node weights stored as diagonals
    diag: bool,
    phi_inf: Vec<f64>,
    kt: Csr,
    jkt: Csr,
    kj: Csr,
    kjkt: Csr,
}

/// Extension coupling every stress channel.
pub fn build_extension(spec: SystemSpec, coupling: CouplingFunction, discretization: Discretization) -> Result<ExtendedSystem> {
    let channels = (0..spec.dim_h()).collect();
    build_extension_on(spec, coupling, channels, discretization)
}

/// Extension whose string couples only to the listed stress channels.
pub fn build_extension_on(
    spec: SystemSpec,
    coupling: CouplingFunction,
    channels: Vec<usize>,
    discretization: Discretization,
) -> Result<ExtendedSystem> {
    let m = coupling.dim();
    if channels.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: channels.len() });
    }
    if channels.iter().any(|&c| c >= spec.dim_h()) {
        return Err(Error::InvalidParameter("coupled channel outside stress space"));
    }
    let is_diag = |a: &SymMatrix| a.is_diagonal();
    let flatten = |a: &SymMatrix, diag: bool, out: &mut Vec<f64>| {
        if diag {
            out.extend(a.diagonal());
        } else {
            out.extend(a.as_matrix().transpose().iter().copied());
        }
    };
    let (bank, diag) = match discretization {
        Discretization::Spectral => {
            let diag = coupling.gram.iter().all(is_diag) && coupling.atoms.iter().all(|(_, a)| is_diag(a));
            let mut kappa = Vec::new();
            let mut mass = Vec::new();
            for j in 0..coupling.grid.n {
                kappa.push(coupling.grid.kappa(j));
                let w = coupling.grid.weight(j) / (2.0 * PI);
                flatten(&coupling.gram[j].scale(w), diag, &mut mass);
            }
            for (k, a) in &coupling.atoms {
                kappa.push(*k);
                flatten(a, diag, &mut mass);
            }
            (Bank::Spectral { kappa, mass }, diag)
        }
        Discretization::Spatial { t_max } => {
            let sp: &SpatialCoupling = coupling
                .spatial
                .as_ref()
                .ok_or(Error::InvalidParameter("spatial discretization needs a spatial coupling"))?;
            if !coupling.atoms.is_empty() {
                return Err(Error::InvalidParameter("undamped lines have no spatial string profile"));
            }
            let required = sp.support(SUPPORT_TOL) + t_max;
            if sp.grid.extent() < required {
                return Err(Error::LightConeViolation { required, available: sp.grid.extent() });
            }
            let diag = sp.samples.iter().all(is_diag);
            let mut sigma = Vec::new();
            for s in &sp.samples {
                flatten(s, diag, &mut sigma);
            }
            (Bank::Spatial { ds: sp.grid.ds, n_half: sp.grid.n_half, sigma }, diag)
        }
    };
    let phi_inf: Vec<f64> = coupling.phi_inf.as_matrix().transpose().iter().copied().collect();
    let kt = spec.k.transpose();
    let jkt = spec.j.mul(&kt);
    let kj = spec.k.mul(&spec.j);
    let kjkt = spec.k.mul(&jkt);
    Ok(ExtendedSystem {
        markov_channel: coupling.has_dirac(),
        spec,
        coupling,
        channels,
        discretization,
        bank,
        diag,
        phi_inf,
        kt,
        jkt,
        kj,
        kjkt,
    })
}

/// out += α·M·x for a stored diagonal or row-major m×m block.
#[inline]
fn block_mul_add(diag: bool, m: usize, a: &[f64], x: &[f64], alpha: f64, out: &mut [f64]) {
    if diag {
        for c in 0..m {
            out[c] += alpha * a[c] * x[c];
        }
    } else {
        for r in 0..m {
            let row = &a[r * m..(r + 1) * m];
            out[r] += alpha * dot(row, x);
        }
    }
}

#[inline]
fn block_quad(diag: bool, m: usize, a: &[f64], x: &[f64]) -> f64 {
    if diag {
        (0..m).map(|c| a[c] * x[c] * x[c]).sum()
    } else {
        (0..m).map(|r| x[r] * dot(&a[r * m..(r + 1) * m], x)).sum()
    }
}

impl ExtendedSystem {
    pub fn dim_v(&self) -> usize {
        self.spec.dim_v()
    }

    pub fn dim_h(&self) -> usize {
        self.spec.dim_h()
    }

    /// Number of coupled channels.
    pub fn channel_dim(&self) -> usize {
        self.channels.len()
    }

    fn block_len(&self) -> usize {
        let m = self.channel_dim();
        if self.diag {
            m
        } else {
            m * m
        }
    }

    /// Number of string modes (spectral) or lattice nodes (spatial).
    pub fn string_len(&self) -> usize {
        match &self.bank {
            Bank::Spectral { kappa, .. } => kappa.len(),
            Bank::Spatial { n_half, .. } => 2 * n_half + 1,
        }
    }

    /// Mode frequencies and their m×m weight blocks (spectral only).
    pub fn modes(&self) -> Option<(Vec<f64>, Vec<SymMatrix>)> {
        match &self.bank {
            Bank::Spectral { kappa, mass } => {
                let bl = self.block_len();
                let blocks = mass.chunks(bl).map(|b| self.unflatten(b)).collect();
                Some((kappa.clone(), blocks))
            }
            Bank::Spatial { .. } => None,
        }
    }

    fn unflatten(&self, b: &[f64]) -> SymMatrix {
        let m = self.channel_dim();
        if self.diag {
            SymMatrix::from_diagonal(b)
        } else {
            SymMatrix::symmetrize(&DMatrix::from_row_slice(m, m, b))
        }
    }

    /// Lattice node positions (spatial only).
    pub fn string_nodes(&self) -> Option<Vec<f64>> {
        match &self.bank {
            Bank::Spatial { ds, n_half, .. } => {
                Some((0..2 * n_half + 1).map(|i| (i as f64 - *n_half as f64) * ds).collect())
            }
            Bank::Spectral { .. } => None,
        }
    }

    pub fn rest_state(&self) -> ExtendedState {
        let n = self.string_len() * self.channel_dim();
        let string = match &self.bank {
            Bank::Spectral { .. } => StringState::Spectral { g: vec![0.0; n], v: vec![0.0; n] },
            Bank::Spatial { .. } => StringState::Spatial { phi: vec![0.0; n], theta: vec![0.0; n] },
        };
        ExtendedState {
            t: 0.0,
            u: vec![0.0; self.dim_v()],
            string,
            dirac: vec![0.0; self.channel_dim()],
            radiated: 0.0,
            work_ext: 0.0,
        }
    }

    /// String at rest, system at u₀.
    pub fn initial_state(&self, u0: &[f64]) -> Result<ExtendedState> {
        if u0.len() != self.dim_v() {
            return Err(Error::DimensionMismatch { expected: self.dim_v(), found: u0.len() });
        }
        let mut s = self.rest_state();
        s.u.copy_from_slice(u0);
        Ok(s)
    }

    fn check_state(&self, state: &ExtendedState) -> Result<()> {
        let n = self.string_len() * self.channel_dim();
        let ok = match (&self.bank, &state.string) {
            (Bank::Spectral { .. }, StringState::Spectral { g, v }) => g.len() == n && v.len() == n,
            (Bank::Spatial { .. }, StringState::Spatial { phi, theta }) => phi.len() == n && theta.len() == n,
            _ => false,
        };
        if !ok {
            return Err(Error::InvalidParameter("state does not match the system discretization"));
        }
        if state.u.len() != self.dim_v() {
            return Err(Error::DimensionMismatch { expected: self.dim_v(), found: state.u.len() });
        }
        Ok(())
    }

    /// T(string) + Φ_∞F in channel space.
    fn string_load(&self, state: &ExtendedState) -> Vec<f64> {
        let m = self.channel_dim();
        let bl = self.block_len();
        let mut out = vec![0.0; m];
        match (&self.bank, &state.string) {
            (Bank::Spectral { mass, .. }, StringState::Spectral { g, .. }) => {
                for (j, mj) in mass.chunks(bl).enumerate() {
                    block_mul_add(self.diag, m, mj, &g[j * m..(j + 1) * m], 1.0, &mut out);
                }
            }
            (Bank::Spatial { ds, n_half, sigma }, StringState::Spatial { phi, .. }) => {
                let nodes = 2 * n_half + 1;
                let mut x = vec![0.0; m];
                for i in 0..nodes {
                    let a = i.abs_diff(*n_half);
                    for c in 0..m {
                        x[c] = phi[c * nodes + i];
                    }
                    block_mul_add(self.diag, m, &sigma[a * bl..(a + 1) * bl], &x, *ds, &mut out);
                }
            }
            _ => unreachable!("state checked against discretization"),
        }
        block_mul_add(false, m, &self.phi_inf, &state.dirac, 1.0, &mut out);
        out
    }

    /// f = K·u − P(T(string) + Φ_∞F).
    pub fn kinematical_stress(&self, state: &ExtendedState) -> Vec<f64> {
        let mut f = self.spec.k.apply(&state.u);
        let load = self.string_load(state);
        for (c, &i) in self.channels.iter().enumerate() {
            f[i] -= load[c];
        }
        f
    }

    /// Energy held by the string excitations, excluding what has been radiated.
    pub fn string_energy(&self, state: &ExtendedState) -> f64 {
        let m = self.channel_dim();
        let bl = self.block_len();
        match (&self.bank, &state.string) {
            (Bank::Spectral { kappa, mass }, StringState::Spectral { g, v }) => {
                let mut e = 0.0;
                for (j, mj) in mass.chunks(bl).enumerate() {
                    let r = j * m..(j + 1) * m;
                    let k2 = kappa[j] * kappa[j];
                    e += 0.5 * (block_quad(self.diag, m, mj, &v[r.clone()]) + k2 * block_quad(self.diag, m, mj, &g[r]));
                }
                e
            }
            (Bank::Spatial { ds, n_half, .. }, StringState::Spatial { phi, theta }) => {
                let nodes = 2 * n_half + 1;
                let kin: f64 = theta.iter().map(|x| x * x).sum::<f64>() * 0.5 * ds;
                let mut pot = 0.0;
                for c in 0..m {
                    let p = &phi[c * nodes..(c + 1) * nodes];
                    pot += p[0] * p[0] + p[nodes - 1] * p[nodes - 1];
                    pot += p.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<f64>();
                }
                kin + 0.5 * pot / ds
            }
            _ => unreachable!("state checked against discretization"),
        }
    }

    /// String energy attributed to each coupled channel (radiated part
    /// included); None when the weights are not diagonal or several
    /// channels radiate through a Dirac part.
    pub fn channel_string_energy(&self, state: &ExtendedState) -> Option<Vec<f64>> {
        if !self.diag {
            return None;
        }
        let m = self.channel_dim();
        let mut out = vec![0.0; m];
        match (&self.bank, &state.string) {
            (Bank::Spectral { kappa, mass }, StringState::Spectral { g, v }) => {
                for (j, mj) in mass.chunks(m).enumerate() {
                    let k2 = kappa[j] * kappa[j];
                    for c in 0..m {
                        let (gj, vj) = (g[j * m + c], v[j * m + c]);
                        out[c] += 0.5 * mj[c] * (vj * vj + k2 * gj * gj);
                    }
                }
            }
            (Bank::Spatial { ds, n_half, .. }, StringState::Spatial { phi, theta }) => {
                let nodes = 2 * n_half + 1;
                for c in 0..m {
                    let p = &phi[c * nodes..(c + 1) * nodes];
                    let th = &theta[c * nodes..(c + 1) * nodes];
                    let mut pot = p[0] * p[0] + p[nodes - 1] * p[nodes - 1];
                    pot += p.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<f64>();
                    out[c] = 0.5 * ds * th.iter().map(|x| x * x).sum::<f64>() + 0.5 * pot / ds;
                }
            }
            _ => return None,
        }
        if self.markov_channel {
            // the radiated total is not tracked per channel
            if m != 1 {
                return None;
            }
            out[0] += state.radiated;
        }
        Some(out)
    }

    /// String Lagrangian: kinetic minus potential energy of the string excitations.
    pub fn string_lagrangian(&self, state: &ExtendedState) -> f64 {
        let m = self.channel_dim();
        let bl = self.block_len();
        match (&self.bank, &state.string) {
            (Bank::Spectral { kappa, mass }, StringState::Spectral { g, v }) => {
                let mut l = 0.0;
                for (j, mj) in mass.chunks(bl).enumerate() {
                    let r = j * m..(j + 1) * m;
                    let k2 = kappa[j] * kappa[j];
                    l += 0.5 * (block_quad(self.diag, m, mj, &v[r.clone()]) - k2 * block_quad(self.diag, m, mj, &g[r]));
                }
                l
            }
            (Bank::Spatial { .. }, StringState::Spatial { theta, .. }) => {
                let kin: f64 = theta.iter().map(|x| x * x).sum::<f64>() * 0.5 * self.spatial_ds();
                kin - (self.string_energy(state) - kin)
            }
            _ => unreachable!("state checked against discretization"),
        }
    }

    fn spatial_ds(&self) -> f64 {
        match &self.bank {
            Bank::Spatial { ds, .. } => *ds,
            Bank::Spectral { .. } => 0.0,
        }
    }

    /// (H_sys, H_str, H_total); H_sys includes h₁(u), H_str includes the radiated energy.
    pub fn energies(&self, state: &ExtendedState) -> Energies {
        let f = self.kinematical_stress(state);
        let mut h_sys = 0.5 * dot(&f, &f);
        if let Some(nl) = &self.spec.nonlinear {
            h_sys += (nl.potential)(&state.u);
        }
        let h_str = self.string_energy(state) + state.radiated;
        Energies { h_sys, h_str, h_total: h_sys + h_str }
    }

    /// Physical spectral string (θ̃, φ̃) per grid node, mode-major; None when
    /// the grid weights are not PSD (then no real string realises them).
    pub fn spectral_string(&self, state: &ExtendedState) -> Option<(Vec<f64>, Vec<f64>)> {
        let StringState::Spectral { g, v } = &state.string else {
            return None;
        };
        let m = self.channel_dim();
        let mut theta = Vec::with_capacity(self.coupling.grid.n * m);
        let mut phi = Vec::with_capacity(self.coupling.grid.n * m);
        for j in 0..self.coupling.grid.n {
            let s = psd_sqrt(&self.coupling.gram[j]).ok()?;
            let r = j * m..(j + 1) * m;
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            s.mul_add(1.0 / (2.0 * PI), &v[r.clone()], &mut a);
            s.mul_add(1.0, &g[r], &mut b);
            theta.extend(a);
            phi.extend(b);
        }
        Some((theta, phi))
    }

    /// Lattice field φ for channel c (spatial only).
    pub fn spatial_field<'s>(&self, state: &'s ExtendedState, c: usize) -> Option<&'s [f64]> {
        let StringState::Spatial { phi, .. } = &state.string else {
            return None;
        };
        let nodes = self.string_len();
        phi.get(c * nodes..(c + 1) * nodes)
    }

    pub fn stepper(&self, dt: f64, scheme: StepScheme) -> Result<Stepper<'_>> {
        Stepper::new(self, dt, scheme)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub h_sys: f64,
    pub h_str: f64,
    pub h_total: f64,
}

/// Constant-coefficient symmetric tridiagonal factorisation of I − r·Δ
/// (Dirichlet ends).
#[derive(Debug, Clone)]
struct Thomas {
    off: f64,
    cp: Vec<f64>,
    inv_den: Vec<f64>,
}

impl Thomas {
    fn new(n: usize, r: f64) -> Self {
        let d = 1.0 + 2.0 * r;
        let off = -r;
        let mut cp = vec![0.0; n];
        let mut inv_den = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let den = d - off * prev;
            inv_den[i] = 1.0 / den;
            cp[i] = off / den;
            prev = cp[i];
        }
        Thomas { off, cp, inv_den }
    }

    fn solve(&self, x: &mut [f64]) {
        let n = x.len();
        let mut prev = 0.0;
        for i in 0..n {
            x[i] = (x[i] - self.off * prev) * self.inv_den[i];
            prev = x[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.cp[i] * x[i + 1];
        }
    }
}

#[derive(Debug, Clone)]
enum Coeffs {
    /// g_m = a·(g + h v) + b·f_c
    Midpoint { a: Vec<f64>, b: Vec<f64> },
    /// exact rotation: cos, sin/κ, (1 − cos)/κ², κ·sin per mode
    Exponential { c: Vec<f64>, s: Vec<f64>, e: Vec<f64>, ks: Vec<f64> },
    /// Z = h²(I − h²Δ)⁻¹ς, layout [(row·m + col)·nodes + i] or [c·nodes + i]
    Lattice { thomas: Thomas, z: Vec<f64> },
}

/// One-step map for a fixed dt; the Schur complement on the midpoint stress
/// is factored once.
pub struct Stepper<'a> {
    sys: &'a ExtendedSystem,
    dt: f64,
    h: f64,
    coeffs: Coeffs,
    solver: LinearSolver,
    // scratch
    y: Vec<f64>,
    rhs: Vec<f64>,
    fm: Vec<f64>,
    fc: Vec<f64>,
    um: Vec<f64>,
    grad: Vec<f64>,
    tmp_v: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a ExtendedSystem, dt: f64, scheme: StepScheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter("dt must be positive"));
        }
        let h = 0.5 * dt;
        let m = sys.channel_dim();
        let bl = sys.block_len();
        let mut gain = vec![0.0; m * m];
        let add_block = |gain: &mut [f64], blk: &[f64], w: f64| {
            if sys.diag {
                for c in 0..m {
                    gain[c * m + c] += w * blk[c];
                }
            } else {
                for (gi, bi) in gain.iter_mut().zip(blk) {
                    *gi += w * bi;
                }
            }
        };
        let coeffs = match (&sys.bank, scheme) {
            (Bank::Spectral { kappa, mass }, StepScheme::ImplicitMidpoint) => {
                let a: Vec<f64> = kappa.iter().map(|k| 1.0 / (1.0 + h * h * k * k)).collect();
                let b: Vec<f64> = a.iter().map(|ai| h * h * ai).collect();
                for (j, blk) in mass.chunks(bl).enumerate() {
                    add_block(&mut gain, blk, b[j]);
                }
                Coeffs::Midpoint { a, b }
            }
            (Bank::Spectral { kappa, mass }, StepScheme::ExponentialMidpoint) => {
                let mut c = Vec::new();
                let mut s = Vec::new();
                let mut e = Vec::new();
                let mut ks = Vec::new();
                for &k in kappa {
                    let x = k * dt;
                    c.push(x.cos());
                    if k == 0.0 {
                        s.push(dt);
                        e.push(0.5 * dt * dt);
                        ks.push(0.0);
                    } else {
                        s.push(x.sin() / k);
                        // (1 − cos x)/κ² = 2 sin²(x/2)/κ², stable for small x
                        let hs = (0.5 * x).sin() / k;
                        e.push(2.0 * hs * hs);
                        ks.push(k * x.sin());
                    }
                }
                for (j, blk) in mass.chunks(bl).enumerate() {
                    add_block(&mut gain, blk, 0.5 * e[j]);
                }
                Coeffs::Exponential { c, s, e, ks }
            }
            (Bank::Spatial { ds, n_half, sigma }, StepScheme::ImplicitMidpoint) => {
                let nodes = 2 * n_half + 1;
                let thomas = Thomas::new(nodes, h * h / (ds * ds));
                let ncol = if sys.diag { m } else { m * m };
                let mut z = vec![0.0; ncol * nodes];
                for (col, zc) in z.chunks_mut(nodes).enumerate() {
                    for (i, zi) in zc.iter_mut().enumerate() {
                        let a = i.abs_diff(*n_half);
                        *zi = h * h * sigma[a * bl + col];
                    }
                    thomas.solve(zc);
                }
                // G = Δs Σ_i ς_i Z_i
                for i in 0..nodes {
                    let a = i.abs_diff(*n_half);
                    let s = &sigma[a * bl..(a + 1) * bl];
                    if sys.diag {
                        for c in 0..m {
                            gain[c * m + c] += ds * s[c] * z[c * nodes + i];
                        }
                    } else {
                        for r in 0..m {
                            for k in 0..m {
                                let mut acc = 0.0;
                                for c in 0..m {
                                    acc += s[r * m + c] * z[(c * m + k) * nodes + i];
                                }
                                gain[r * m + k] += ds * acc;
                            }
                        }
                    }
                }
                Coeffs::Lattice { thomas, z }
            }
            (Bank::Spatial { .. }, StepScheme::ExponentialMidpoint) => {
                return Err(Error::InvalidParameter("exponential midpoint is spectral-only"));
            }
        };
        // M = I − hKJKᵀ + P(G + hΦ_∞)Pᵀ
        let dh = sys.dim_h();
        let mut trip = Vec::new();
        for r in 0..m {
            for c in 0..m {
                let v = gain[r * m + c] + h * sys.phi_inf[r * m + c];
                if v != 0.0 {
                    trip.push((sys.channels[r], sys.channels[c], v));
                }
            }
        }
        let mat = Csr::identity(dh).add(&sys.kjkt.scale(-h)).add(&Csr::from_triplets(dh, dh, trip));
        let solver = LinearSolver::new(&mat)?;
        let nodes = sys.string_len();
        let ylen = if matches!(sys.bank, Bank::Spatial { .. }) { m * nodes } else { 0 };
        Ok(Stepper {
            sys,
            dt,
            h,
            coeffs,
            solver,
            y: vec![0.0; ylen],
            rhs: vec![0.0; dh],
            fm: vec![0.0; dh],
            fc: vec![0.0; m],
            um: vec![0.0; sys.dim_v()],
            grad: vec![0.0; sys.dim_v()],
            tmp_v: vec![0.0; sys.dim_v()],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Predicted string load at the midpoint with f_c = 0 (plus Φ_∞F).
    fn string_prediction(&mut self, state: &ExtendedState) -> Vec<f64> {
        let sys = self.sys;
        let m = sys.channel_dim();
        let bl = sys.block_len();
        let h = self.h;
        let mut t0 = vec![0.0; m];
        let mut a = vec![0.0; m];
        match (&sys.bank, &state.string, &self.coeffs) {
            (Bank::Spectral { mass, .. }, StringState::Spectral { g, v }, Coeffs::Midpoint { a: inv, .. }) => {
                for (j, mj) in mass.chunks(bl).enumerate() {
                    for c in 0..m {
                        a[c] = (g[j * m + c] + h * v[j * m + c]) * inv[j];
                    }
                    block_mul_add(sys.diag, m, mj, &a, 1.0, &mut t0);
                }
            }
            (Bank::Spectral { mass, .. }, StringState::Spectral { g, v }, Coeffs::Exponential { c: cs, s, .. }) => {
                for (j, mj) in mass.chunks(bl).enumerate() {
                    for c in 0..m {
                        a[c] = 0.5 * ((1.0 + cs[j]) * g[j * m + c] + s[j] * v[j * m + c]);
                    }
                    block_mul_add(sys.diag, m, mj, &a, 1.0, &mut t0);
                }
            }
            (Bank::Spatial { ds, n_half, sigma }, StringState::Spatial { phi, theta }, Coeffs::Lattice { thomas, .. }) => {
                let nodes = 2 * n_half + 1;
                for (k, yk) in self.y.iter_mut().enumerate() {
                    *yk = phi[k] + h * theta[k];
                }
                for yc in self.y.chunks_mut(nodes) {
                    thomas.solve(yc);
                }
                for i in 0..nodes {
                    let ai = i.abs_diff(*n_half);
                    for c in 0..m {
                        a[c] = self.y[c * nodes + i];
                    }
                    block_mul_add(sys.diag, m, &sigma[ai * bl..(ai + 1) * bl], &a, *ds, &mut t0);
                }
            }
            _ => unreachable!("state checked against discretization"),
        }
        block_mul_add(false, m, &sys.phi_inf, &state.dirac, 1.0, &mut t0);
        t0
    }

    /// Advance the string by a full step given the midpoint channel stress fc.
    fn advance_string(&mut self, state: &mut ExtendedState) {
        let sys = self.sys;
        let m = sys.channel_dim();
        let h = self.h;
        let fc = &self.fc;
        match (&sys.bank, &mut state.string, &self.coeffs) {
            (Bank::Spectral { .. }, StringState::Spectral { g, v }, Coeffs::Midpoint { a, b }) => {
                for j in 0..a.len() {
                    for c in 0..m {
                        let k = j * m + c;
                        let gm = (g[k] + h * v[k]) * a[j] + b[j] * fc[c];
                        let vm = (gm - g[k]) / h;
                        g[k] = 2.0 * gm - g[k];
                        v[k] = 2.0 * vm - v[k];
                    }
                }
            }
            (Bank::Spectral { .. }, StringState::Spectral { g, v }, Coeffs::Exponential { c: cs, s, e, ks }) => {
                for j in 0..cs.len() {
                    for c in 0..m {
                        let k = j * m + c;
                        let (g0, v0) = (g[k], v[k]);
                        g[k] = cs[j] * g0 + s[j] * v0 + e[j] * fc[c];
                        v[k] = -ks[j] * g0 + cs[j] * v0 + s[j] * fc[c];
                    }
                }
            }
            (Bank::Spatial { .. }, StringState::Spatial { phi, theta }, Coeffs::Lattice { z, .. }) => {
                let nodes = self.y.len() / m.max(1);
                for c in 0..m {
                    for i in 0..nodes {
                        let mut pm = self.y[c * nodes + i];
                        if sys.diag {
                            pm += z[c * nodes + i] * fc[c];
                        } else {
                            for k in 0..m {
                                pm += z[(c * m + k) * nodes + i] * fc[k];
                            }
                        }
                        let idx = c * nodes + i;
                        let tm = (pm - phi[idx]) / h;
                        phi[idx] = 2.0 * pm - phi[idx];
                        theta[idx] = 2.0 * tm - theta[idx];
                    }
                }
            }
            _ => unreachable!("state checked against discretization"),
        }
    }

    /// One step with the external force `rho_mid` sampled at the midpoint time.
    pub fn step(&mut self, state: &mut ExtendedState, rho_mid: &[f64]) -> Result<()> {
        let sys = self.sys;
        sys.check_state(state)?;
        if rho_mid.len() != sys.dim_v() {
            return Err(Error::DimensionMismatch { expected: sys.dim_v(), found: rho_mid.len() });
        }
        let h = self.h;
        let t0 = self.string_prediction(state);
        // base = K u + hKρ − P t0
        let mut base = vec![0.0; sys.dim_h()];
        sys.spec.k.mul_vec(&state.u, &mut base);
        sys.spec.k.mul_vec_add(h, rho_mid, &mut base);
        for (c, &i) in sys.channels.iter().enumerate() {
            base[i] -= t0[c];
        }
        let nonlinear = sys.spec.nonlinear.clone();
        let (mut unode, mut gnode) = match nonlinear {
            Some(_) => (vec![0.0; sys.dim_v()], vec![0.0; sys.dim_v()]),
            None => (Vec::new(), Vec::new()),
        };
        let mut iterations = 0;
        self.um.copy_from_slice(&state.u);
        loop {
            self.rhs.copy_from_slice(&base);
            if let Some(nl) = &nonlinear {
                // averaged gradient ∫₀¹∇h₁(u + ξ(u⁺ − u))dξ, exact energy
                // balance whenever the quadrature is exact
                self.grad.iter_mut().for_each(|x| *x = 0.0);
                for (xi, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
                    for i in 0..unode.len() {
                        unode[i] = state.u[i] + 2.0 * xi * (self.um[i] - state.u[i]);
                    }
                    gnode.iter_mut().for_each(|x| *x = 0.0);
                    (nl.gradient)(&unode, &mut gnode);
                    for (g, gn) in self.grad.iter_mut().zip(&gnode) {
                        *g += w * gn;
                    }
                }
                sys.kj.mul_vec_add(h, &self.grad, &mut self.rhs);
            }
            self.fm.copy_from_slice(&self.rhs);
            self.solver.solve_in_place(&mut self.fm);
            // u_m = u + h(JKᵀf_m + J∇h₁ + ρ)
            sys.jkt.mul_vec(&self.fm, &mut self.tmp_v);
            if nonlinear.is_some() {
                sys.spec.j.mul_vec_add(1.0, &self.grad, &mut self.tmp_v);
            }
            let mut change: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..self.um.len() {
                let new = state.u[i] + h * (self.tmp_v[i] + rho_mid[i]);
                change = change.max((new - self.um[i]).abs());
                scale = scale.max(new.abs());
                self.um[i] = new;
            }
            if nonlinear.is_none() {
                break;
            }
            iterations += 1;
            if change <= NONLINEAR_TOL * (1.0 + scale) {
                break;
            }
            if iterations >= NONLINEAR_MAX_ITER || !change.is_finite() {
                return Err(Error::SolverDiverged { iterations });
            }
        }
        if self.fm.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolverDiverged { iterations });
        }
        for (c, &i) in sys.channels.iter().enumerate() {
            self.fc[c] = self.fm[i];
        }
        // ledger terms at the midpoint
        let mut power = vec![0.0; sys.dim_v()];
        sys.kt.mul_vec(&self.fm, &mut power);
        if nonlinear.is_some() {
            for (p, g) in power.iter_mut().zip(&self.grad) {
                *p += g;
            }
        }
        state.work_ext += self.dt * dot(&power, rho_mid);
        let m = sys.channel_dim();
        let mut pf = vec![0.0; m];
        block_mul_add(false, m, &sys.phi_inf, &self.fc, 1.0, &mut pf);
        state.radiated += self.dt * dot(&self.fc, &pf);
        for (u, um) in state.u.iter_mut().zip(&self.um) {
            *u = 2.0 * um - *u;
        }
        for (fd, fc) in state.dirac.iter_mut().zip(&self.fc) {
            *fd += self.dt * fc;
        }
        self.advance_string(state);
        state.t += self.dt;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub dt: f64,
    pub t_end: f64,
    /// record every n-th step
    pub sample_every: usize,
    /// times at which full state snapshots are kept
    pub probes: Vec<f64>,
    pub scheme: StepScheme,
}

impl SimulationOptions {
    pub fn new(dt: f64, t_end: f64) -> Self {
        SimulationOptions { dt, t_end, sample_every: 1, probes: Vec::new(), scheme: StepScheme::ImplicitMidpoint }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    /// Dirac-channel state F at each sample
    pub dirac: Vec<Vec<f64>>,
    pub snapshots: Vec<ExtendedState>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub t: Vec<f64>,
    pub h_sys: Vec<f64>,
    pub h_str: Vec<f64>,
    pub h_total: Vec<f64>,
    pub work_ext: Vec<f64>,
    /// −(H_str(t) − H_str(0)): work done on the system by friction
    pub work_fr: Vec<f64>,
}

impl EnergyLedger {
    fn push(&mut self, t: f64, e: Energies, work_ext: f64, h_str0: f64) {
        self.t.push(t);
        self.h_sys.push(e.h_sys);
        self.h_str.push(e.h_str);
        self.h_total.push(e.h_total);
        self.work_ext.push(work_ext);
        self.work_fr.push(-(e.h_str - h_str0));
    }
}

/// Run from rest over [0, t_end].
pub fn simulate(sys: &ExtendedSystem, drive: &dyn Drive, opts: &SimulationOptions) -> Result<(Trajectory, EnergyLedger)> {
    simulate_from(sys, sys.rest_state(), drive, opts)
}

pub fn simulate_from(
    sys: &ExtendedSystem,
    mut state: ExtendedState,
    drive: &dyn Drive,
    opts: &SimulationOptions,
) -> Result<(Trajectory, EnergyLedger)> {
    sys.check_state(&state)?;
    if !(opts.t_end >= 0.0) || opts.sample_every == 0 {
        return Err(Error::InvalidParameter("t_end must be nonnegative and sample_every positive"));
    }
    if drive.support().0 < state.t {
        return Err(Error::InvalidParameter("drive must vanish before the start time"));
    }
    let mut stepper = Stepper::new(sys, opts.dt, opts.scheme)?;
    let n_steps = (opts.t_end / opts.dt).round() as usize;
    let mut traj = Trajectory::default();
    let mut ledger = EnergyLedger::default();
    let h_str0 = sys.energies(&state).h_str;
    let mut probes: Vec<f64> = opts.probes.clone();
    probes.sort_by(f64::total_cmp);
    let mut next_probe = 0;
    let mut rho = vec![0.0; sys.dim_v()];
    let t_start = state.t;
    for n in 0..=n_steps {
        while next_probe < probes.len() && probes[next_probe] < state.t + 0.5 * opts.dt {
            if probes[next_probe] >= state.t - 0.5 * opts.dt {
                traj.snapshots.push(state.clone());
            }
            next_probe += 1;
        }
        if n % opts.sample_every == 0 || n == n_steps {
            let f = sys.kinematical_stress(&state);
            traj.t.push(state.t);
            traj.u.push(state.u.clone());
            traj.f.push(f);
            traj.dirac.push(state.dirac.clone());
            ledger.push(state.t, sys.energies(&state), state.work_ext, h_str0);
        }
        if n == n_steps {
            break;
        }
        let tm = t_start + (n as f64 + 0.5) * opts.dt;
        drive.force(tm, &mut rho);
        stepper.step(&mut state, &rho)?;
        // keep t on the grid rather than accumulating rounding
        state.t = t_start + (n + 1) as f64 * opts.dt;
    }
    Ok((traj, ledger))
}

/// CSV with columns t, u…, f…, H_sys, H_str, H_total, work_ext, work_fr.
pub fn trajectory_csv(traj: &Trajectory, ledger: &EnergyLedger) -> String {
    let dv = traj.u.first().map_or(0, |u| u.len());
    let dh = traj.f.first().map_or(0, |f| f.len());
    let mut out = String::from("t");
    for i in 0..dv {
        let _ = write!(out, ",u{i}");
    }
    for i in 0..dh {
        let _ = write!(out, ",f{i}");
    }
    out.push_str(",H_sys,H_str,H_total,work_ext,work_fr\n");
    for n in 0..traj.t.len() {
        out.push_str(&format!("{:e}", traj.t[n]));
        for x in traj.u[n].iter().chain(&traj.f[n]) {
            let _ = write!(out, ",{x:e}");
        }
        for x in [ledger.h_sys[n], ledger.h_str[n], ledger.h_total[n], ledger.work_ext[n], ledger.work_fr[n]] {
            let _ = write!(out, ",{x:e}");
        }
        out.push('\n');
    }
    out
}

/// Linear interpolation of uniformly sampled vectors; zero before the first sample.
fn sample_at(samples: &[Vec<f64>], t0: f64, dt: f64, t: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    if samples.is_empty() || t < t0 {
        return;
    }
    let x = (t - t0) / dt;
    let i = x.floor() as usize;
    if i + 1 >= samples.len() {
        out.copy_from_slice(samples.last().unwrap());
        return;
    }
    let w = x - i as f64;
    for (o, (a, b)) in out.iter_mut().zip(samples[i].iter().zip(&samples[i + 1])) {
        *o = (1.0 - w) * a + w * b;
    }
}

/// Outgoing Dirac-string displacement ½√(2Φ_∞)·F(t − |s|) from a uniformly
/// sampled trajectory (the string was at rest before the trajectory starts).
pub fn dirac_profile(sys: &ExtendedSystem, traj: &Trajectory, s: f64, t: f64) -> Vec<f64> {
    let m = sys.channel_dim();
    let mut fval = vec![0.0; m];
    if traj.t.len() >= 2 {
        let dt = traj.t[1] - traj.t[0];
        sample_at(&traj.dirac, traj.t[0], dt, t - s.abs(), &mut fval);
    }
    let mut out = vec![0.0; m];
    sys.coupling.dirac_weight.mul_add(0.5, &fval, &mut out);
    out
}

/// φ(s,t) = ½∫₀^t dτ ∫_{s−τ}^{s+τ} ς(σ)dσ f(t−τ) by nested trapezoid quadrature,
/// with f sampled from rest at spacing dt (f_history[k] = f(k·dt), channel space).
pub fn string_exact_response(
    coupling: &CouplingFunction,
    f_history: &[Vec<f64>],
    dt: f64,
    s_grid: &[f64],
    t: f64,
) -> Result<Vec<Vec<f64>>> {
    let m = coupling.dim();
    if f_history.iter().any(|f| f.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, found: f_history.iter().map(|f| f.len()).find(|&l| l != m).unwrap_or(0) });
    }
    let cum = match &coupling.spatial {
        Some(sp) => {
            // C(s_i) = ∫₀^{s_i} ς, cumulative trapezoid per entry
            let mut cum = vec![SymMatrix::zeros(m)];
            for i in 1..sp.samples.len() {
                let inc = sp.samples[i - 1].add(&sp.samples[i]).scale(0.5 * sp.grid.ds);
                let next = cum[i - 1].add(&inc);
                cum.push(next);
            }
            Some((sp.grid.ds, cum))
        }
        None => {
            if coupling.gram.iter().any(|g| g.frobenius_norm() > 0.0) || !coupling.atoms.is_empty() {
                return Err(Error::InvalidParameter("exact string response needs spatial coupling samples"));
            }
            None
        }
    };
    let c_at = |x: f64| -> SymMatrix {
        let Some((ds, cum)) = &cum else { return SymMatrix::zeros(m) };
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let y = x.abs() / ds;
        let i = y.floor() as usize;
        if i + 1 >= cum.len() {
            return cum.last().unwrap().scale(sign);
        }
        let w = y - i as f64;
        cum[i].scale((1.0 - w) * sign).add(&cum[i + 1].scale(w * sign))
    };
    let n = (t / dt).round() as usize;
    let n = n.min(f_history.len().saturating_sub(1));
    // cumulative F for the Dirac part
    let mut fcum = vec![vec![0.0; m]];
    for k in 1..f_history.len() {
        let prev = fcum[k - 1].clone();
        fcum.push(prev.iter().zip(f_history[k - 1].iter().zip(&f_history[k])).map(|(p, (a, b))| p + 0.5 * dt * (a + b)).collect());
    }
    let mut out = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let mut acc = vec![0.0; m];
        if cum.is_some() {
            for k in 0..=n {
                let w = if k == 0 || k == n { 0.5 * dt } else { dt };
                let tau = k as f64 * dt;
                let kern = c_at(s + tau).sub(&c_at(s - tau));
                kern.mul_add(0.5 * w, &f_history[n - k], &mut acc);
            }
        }
        let mut fval = vec![0.0; m];
        sample_at(&fcum, 0.0, dt, t - s.abs(), &mut fval);
        coupling.dirac_weight.mul_add(0.5, &fval, &mut acc);
        out.push(acc);
    }
    Ok(out)
}

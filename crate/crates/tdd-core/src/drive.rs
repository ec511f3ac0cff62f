//! Compactly supported external forces ρ(t) acting on the phase space.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Number of widths after which pulse envelopes are cut off.
pub const CUTOFF_WIDTHS: f64 = 6.0;

pub trait Drive {
    /// Write ρ(t) into `out` (length dim_V).
    fn force(&self, t: f64, out: &mut [f64]);
    /// Closed interval outside which ρ vanishes.
    fn support(&self) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDrive;

impl Drive for ZeroDrive {
    fn force(&self, _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// exp(−x²/2) shifted down so it reaches zero at |x| = 6 and clipped there.
pub fn gaussian_window(t: f64, t0: f64, width: f64) -> f64 {
    let x = (t - t0) / width;
    if x.abs() >= CUTOFF_WIDTHS {
        return 0.0;
    }
    let floor = (-0.5 * CUTOFF_WIDTHS * CUTOFF_WIDTHS).exp();
    ((-0.5 * x * x).exp() - floor) / (1.0 - floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPulse {
    pub t0: f64,
    pub width: f64,
    pub amplitude: Vec<f64>,
}

/// Angular frequency above which the spectrum of a unit-width window has
/// dropped below e^{-8} of its peak.
pub const BAND_EDGE_WIDTHS: f64 = 4.0;

impl GaussianPulse {
    /// Highest angular frequency carried with appreciable amplitude.
    pub fn omega_max(&self) -> f64 {
        BAND_EDGE_WIDTHS / self.width
    }
}

impl Drive for GaussianPulse {
    fn force(&self, t: f64, out: &mut [f64]) {
        let g = gaussian_window(t, self.t0, self.width);
        for (o, a) in out.iter_mut().zip(&self.amplitude) {
            *o = g * a;
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.t0 - CUTOFF_WIDTHS * self.width, self.t0 + CUTOFF_WIDTHS * self.width)
    }
}

/// amplitude·window(t)·cos(ωt) with a Gaussian window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedCarrier {
    pub omega: f64,
    pub t0: f64,
    pub width: f64,
    pub amplitude: Vec<f64>,
}

impl ModulatedCarrier {
    /// Nominal relative bandwidth δ = 1/(ω·width).
    pub fn delta(&self) -> f64 {
        1.0 / (self.omega * self.width)
    }

    pub fn omega_max(&self) -> f64 {
        self.omega.abs() + BAND_EDGE_WIDTHS / self.width
    }
}

impl Drive for ModulatedCarrier {
    fn force(&self, t: f64, out: &mut [f64]) {
        let g = gaussian_window(t, self.t0, self.width) * (self.omega * t).cos();
        for (o, a) in out.iter_mut().zip(&self.amplitude) {
            *o = g * a;
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.t0 - CUTOFF_WIDTHS * self.width, self.t0 + CUTOFF_WIDTHS * self.width)
    }
}

impl<D: Drive + ?Sized> Drive for &D {
    fn force(&self, t: f64, out: &mut [f64]) {
        (**self).force(t, out)
    }

    fn support(&self) -> (f64, f64) {
        (**self).support()
    }
}

//! End-to-end properties through the public API: model -> coupling ->
//! extension -> simulation -> diagnostics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use tdd_core::coupling::{build_coupling, reconstruct_chi, verify_herglotz};
use tdd_core::drive::GaussianPulse;
use tdd_core::extension::{build_extension_on, simulate, Discretization, SimulationOptions, SystemSpec};
use tdd_core::linalg::canonical_j;
use tdd_core::reduced::solve_volterra_from;
use tdd_core::susceptibility::{check_pdc, chi_time, SusceptibilityModel as M, PDC_TOL};

fn oscillator() -> SystemSpec {
    SystemSpec::new(&canonical_j(1), &DMatrix::identity(2, 2)).unwrap()
}

fn pulse() -> GaussianPulse {
    GaussianPulse { t0: 6.0, width: 1.0, amplitude: vec![1.0, 0.0] }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn driven_lorentz_energy_balance(strength in 0.2f64..2.0, omega0 in 0.5f64..2.0, damping in 0.05f64..1.0) {
        let model = M::scalar_lorentz(strength, omega0, damping).unwrap();
        let c = build_coupling(&model, 0.05, 60.0, None).unwrap();
        let sys = build_extension_on(oscillator(), c, vec![0], Discretization::Spectral).unwrap();
        let (_, led) = simulate(&sys, &pulse(), &SimulationOptions::new(0.01, 30.0)).unwrap();
        let scale = led.h_total.iter().fold(0.0f64, |a, h| a.max(h.abs()));
        for (h, w) in led.h_total.iter().zip(&led.work_ext) {
            prop_assert!((h - w).abs() <= 1e-10 * scale);
        }
        // friction only ever takes energy out of the system over the pulse
        prop_assert!(*led.h_str.last().unwrap() >= 0.0);
    }

    #[test]
    fn debye_herglotz_and_kernel(delta in 0.1f64..2.0, tau in 0.3f64..3.0) {
        let model = M::scalar_debye(delta, tau).unwrap();
        prop_assert!(check_pdc(&model, &[0.0, 0.5, 1.0, 4.0], &[0.0, 0.5], PDC_TOL).passed);
        let c = build_coupling(&model, 0.01, 400.0, None).unwrap();
        let probes = [Complex64::new(0.0, 1.0), Complex64::new(1.0, 1.0), Complex64::new(0.5, 2.0)];
        prop_assert!(verify_herglotz(&c, &model, &probes).unwrap() <= 1e-3);
        let taus = [0.5 * tau, tau, 2.0 * tau];
        let rec = reconstruct_chi(&c, &taus).unwrap();
        for (t, r) in taus.iter().zip(&rec) {
            let want = chi_time(&model, *t).unwrap()[(0, 0)];
            prop_assert!((r[(0, 0)] - want).abs() <= 2e-3 * delta, "{} vs {}", r[(0, 0)], want);
        }
    }
}

#[test]
fn extension_matches_volterra_for_debye() {
    let model = M::scalar_debye(1.0, 1.0).unwrap();
    let c = build_coupling(&model, 0.02, 400.0, None).unwrap();
    let sys = build_extension_on(oscillator(), c, vec![0], Discretization::Spectral).unwrap();
    let (tr, _) = simulate(&sys, &pulse(), &SimulationOptions::new(0.01, 40.0)).unwrap();
    let vol = solve_volterra_from(&oscillator(), &model, &[0], &[0.0, 0.0], &pulse(), 0.01, 40.0).unwrap();
    let peak = vol.f.iter().fold(0.0f64, |a, f| a.max(f[0].abs()));
    let err = tr.f.iter().zip(&vol.f).fold(0.0f64, |a, (x, y)| a.max((x[0] - y[0]).abs()));
    assert!(err <= 1e-3 * peak, "{err:e} vs peak {peak:e}");
}

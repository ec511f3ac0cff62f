//! Command dispatch and artifact writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use nalgebra::DMatrix;
use num_complex::Complex64;
use tdd_core::analysis::{
    brillouin_energy_lossless, brillouin_power, centered_derivative, default_sigma, demodulate,
    interior_relative_error, time_average, Averaged, Envelope,
};
use tdd_core::coupling::{build_coupling_with, verify_herglotz, CouplingOptions, SpatialGrid};
use tdd_core::drive::Drive;
use tdd_core::extension::{
    build_extension_on, dirac_profile, simulate, simulate_from, trajectory_csv, Discretization, EnergyLedger,
    ExtendedSystem, SimulationOptions, SystemSpec, Trajectory,
};
use tdd_core::models::{damped_oscillator, maxwell1d, nonlinear_oscillator, DampedOscillator, Maxwell1d, MaxwellGrid, Slab};
use tdd_core::reduced::solve_volterra_from;
use tdd_core::susceptibility::{check_pdc, PdcReport, SusceptibilityModel};
use tdd_core::Error;

use crate::config::{
    positive, Command, Config, DriveConfig, DriveSignal, Representation, SystemConfig,
};
use crate::error::CliError;
use crate::summary::{export_summary, Summary};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// overrides the config's `command`
    pub command: Option<Command>,
    /// worker threads for independent sub-computations; results do not depend on it
    pub threads: usize,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions { out: out.into(), command: None, threads: 1 }
    }
}

/// Probes of the Herglotz check: 0.5i…5i plus two off-axis points.
pub fn herglotz_probes() -> Vec<Complex64> {
    let mut p: Vec<Complex64> = (0..8).map(|i| Complex64::new(0.0, 0.5 + 4.5 * i as f64 / 7.0)).collect();
    p.push(Complex64::new(1.0, 1.0));
    p.push(Complex64::new(2.0, 0.5));
    p
}

/// Read, validate and run a scenario file.
pub fn run_scenario(config_path: &Path, opts: &RunOptions) -> Result<Summary, CliError> {
    let src = fs::read_to_string(config_path).map_err(|e| CliError::io(config_path, e))?;
    let cfg = Config::parse(&src)?;
    run_config(&cfg, opts)
}

pub fn run_config(cfg: &Config, opts: &RunOptions) -> Result<Summary, CliError> {
    let command = opts
        .command
        .or(cfg.command)
        .ok_or_else(|| CliError::invalid("command", "no command in the config or on the command line"))?;
    if opts.threads == 0 {
        return Err(CliError::invalid("threads", "must be at least 1"));
    }
    cfg.integration.validate()?;
    fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    let mut run = Run { cfg, dir: &opts.out, threads: opts.threads, summary: Summary::new() };
    run.summary.set("command", command);
    let result = match command {
        Command::PdcCheck => run.pdc_check(),
        Command::Coupling => run.coupling(),
        Command::Simulate => run.simulate(),
        Command::Compare => run.compare(),
        Command::Brillouin => run.brillouin(),
        Command::Maxwell1d => run.maxwell(),
    };
    match result {
        Ok(()) => {
            run.summary.set("status", "ok");
            export_summary(&opts.out, &run.summary)?;
            Ok(run.summary)
        }
        Err(e @ CliError::PdcFailed { .. }) => {
            run.summary.set("status", "pdc_failed");
            export_summary(&opts.out, &run.summary)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

struct Run<'a> {
    cfg: &'a Config,
    dir: &'a Path,
    threads: usize,
    summary: Summary,
}

/// Linear or quartic oscillator with phase space u = (p, q).
struct Plant {
    spec: SystemSpec,
    mass: f64,
    stiffness: f64,
    quartic: Option<f64>,
    q0: f64,
    v0: f64,
}

impl Plant {
    fn u0(&self) -> [f64; 2] {
        [self.mass * self.v0, self.q0]
    }

    fn force(&self, q: f64) -> f64 {
        self.stiffness * q + self.quartic.unwrap_or(0.0) * q * q * q
    }
}

/// Reference (t, q, F) samples at a uniform step.
struct Reference {
    dt: f64,
    q: Vec<f64>,
    /// ∫₀ᵗ f_p dτ
    big_f: Vec<f64>,
}

impl Reference {
    fn at(&self, i: usize) -> f64 {
        self.q[i]
    }

    fn big_f_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let x = t / self.dt;
        let i = x.floor() as usize;
        if i + 1 >= self.big_f.len() {
            return *self.big_f.last().unwrap_or(&0.0);
        }
        let w = x - i as f64;
        (1.0 - w) * self.big_f[i] + w * self.big_f[i + 1]
    }
}

impl Run<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    }

    fn model(&self) -> Result<SusceptibilityModel, CliError> {
        self.cfg.susceptibility()?.build()
    }

    /// PDC scan over the configured grid, split across threads by ω.
    fn pdc_report(&self, model: &SusceptibilityModel) -> Result<PdcReport, CliError> {
        let d = &self.cfg.diagnostics;
        let omegas = d.omega_grid()?;
        let etas = d.eta_grid()?;
        let chunk = omegas.len().div_ceil(self.threads);
        let parts: Vec<PdcReport> = thread::scope(|s| {
            let handles: Vec<_> = omegas
                .chunks(chunk)
                .map(|w| s.spawn(|| check_pdc(model, w, &etas, d.pdc_tol)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("PDC worker panicked")).collect()
        });
        let mut merged = PdcReport {
            grid: Vec::new(),
            eigs: Vec::new(),
            min_eig: f64::INFINITY,
            worst_point: (0.0, 0.0),
            passed: true,
            skipped: Vec::new(),
        };
        for p in parts {
            if p.min_eig < merged.min_eig {
                merged.min_eig = p.min_eig;
                merged.worst_point = p.worst_point;
            }
            merged.passed &= p.passed;
            merged.grid.extend(p.grid);
            merged.eigs.extend(p.eigs);
            merged.skipped.extend(p.skipped);
        }
        Ok(merged)
    }

    /// Record the PDC scan and fail on a violation.
    fn pdc_gate(&mut self, model: &SusceptibilityModel, write_csv: bool) -> Result<(), CliError> {
        let r = self.pdc_report(model)?;
        self.summary.set_f64("pdc_min_eig", r.min_eig);
        self.summary.set("pdc_passed", r.passed);
        self.summary.set("pdc_skipped", r.skipped.len());
        if write_csv || !r.passed {
            let mut csv = String::from("omega,eta,min_eig\n");
            for ((w, e), m) in r.grid.iter().zip(&r.eigs) {
                let _ = writeln!(csv, "{w:e},{e:e},{m:e}");
            }
            self.write("pdc.csv", &csv)?;
        }
        if r.passed {
            Ok(())
        } else {
            Err(CliError::PdcFailed { min_eig: r.min_eig, omega: r.worst_point.0, eta: r.worst_point.1 })
        }
    }

    fn pdc_check(&mut self) -> Result<(), CliError> {
        let model = self.model()?;
        self.pdc_gate(&model, true)
    }

    fn coupling_options(&self) -> Result<(CouplingOptions, Discretization), CliError> {
        let c = &self.cfg.coupling;
        positive("coupling.dk", c.dk)?;
        positive("coupling.kmax", c.kmax)?;
        positive("coupling.tail_tol", c.tail_tol)?;
        if c.kmax < c.dk {
            return Err(CliError::invalid("coupling.kmax", "must exceed coupling.dk"));
        }
        let mut opts = CouplingOptions::new(c.dk, c.kmax);
        opts.tail_tol = c.tail_tol;
        let t_end = self.cfg.integration.t_end;
        let disc = match c.representation {
            Representation::Spectral => Discretization::Spectral,
            Representation::Spatial => {
                positive("coupling.ds", c.ds)?;
                let extent = c.extent.unwrap_or(t_end + 60.0);
                positive("coupling.extent", extent)?;
                opts.spatial = Some(SpatialGrid::new(c.ds, extent, c.lattice_matched)?);
                Discretization::Spatial { t_max: t_end }
            }
        };
        Ok((opts, disc))
    }

    fn coupling(&mut self) -> Result<(), CliError> {
        let model = self.model()?;
        self.pdc_gate(&model, false)?;
        let (opts, _) = self.coupling_options()?;
        let c = build_coupling_with(&model, &opts)?;
        self.write("coupling.csv", &c.to_csv())?;
        let r = verify_herglotz(&c, &model, &herglotz_probes())?;
        self.summary.set_f64("herglotz_residual", r);
        self.summary.set("modes", c.sigma_hat.len());
        self.summary.set("has_dirac", c.has_dirac());
        self.summary.set_f64("phi_inf", c.phi_inf[(0, 0)]);
        if let Some(sp) = &c.spatial {
            self.summary.set_f64("spatial_support", sp.support(tdd_core::extension::SUPPORT_TOL));
        }
        Ok(())
    }

    fn plant(&self) -> Result<Plant, CliError> {
        match &self.cfg.system {
            SystemConfig::Oscillator(o) => {
                positive("system.mass", o.mass)?;
                positive("system.stiffness", o.stiffness)?;
                finite_pair(o.q0, o.v0)?;
                let spec = damped_oscillator(o.mass, o.stiffness, 0.0)?.spec;
                Ok(Plant { spec, mass: o.mass, stiffness: o.stiffness, quartic: None, q0: o.q0, v0: o.v0 })
            }
            SystemConfig::QuarticOscillator(o) => {
                positive("system.mass", o.mass)?;
                crate::config::nonnegative("system.stiffness", o.stiffness)?;
                positive("system.quartic", o.quartic)?;
                finite_pair(o.q0, o.v0)?;
                let (k, c) = (o.stiffness, o.quartic);
                let spec = nonlinear_oscillator(
                    o.mass,
                    0.0,
                    move |q| 0.5 * k * q * q + 0.25 * c * q.powi(4),
                    move |q| k * q + c * q * q * q,
                )?
                .spec;
                Ok(Plant { spec, mass: o.mass, stiffness: k, quartic: Some(c), q0: o.q0, v0: o.v0 })
            }
            SystemConfig::Maxwell1d(_) => {
                Err(CliError::invalid("system.kind", "this command needs an oscillator system"))
            }
        }
    }

    fn extension(&self, plant: &Plant, model: &SusceptibilityModel) -> Result<ExtendedSystem, CliError> {
        let (opts, disc) = self.coupling_options()?;
        let c = build_coupling_with(model, &opts)?;
        Ok(build_extension_on(plant.spec.clone(), c, vec![0], disc)?)
    }

    fn sim_options(&self) -> SimulationOptions {
        let i = &self.cfg.integration;
        let mut o = SimulationOptions::new(i.dt, i.t_end);
        o.sample_every = i.sample_every;
        o.scheme = i.step_scheme();
        o
    }

    fn run_plant(
        &self,
        sys: &ExtendedSystem,
        plant: &Plant,
        drive: &DriveSignal,
        opts: &SimulationOptions,
    ) -> Result<(Trajectory, EnergyLedger), CliError> {
        let st = sys.initial_state(&plant.u0())?;
        Ok(simulate_from(sys, st, drive, opts)?)
    }

    fn energy_summary(&mut self, ledger: &EnergyLedger, drive: &DriveSignal) {
        let t_off = if *drive == DriveSignal::Zero { 0.0 } else { drive.support().1 };
        self.summary.set_f64("energy_drift_rel", energy_drift(ledger, t_off));
        let h0 = ledger.h_total.first().copied().unwrap_or(0.0);
        let scale = ledger.h_total.iter().fold(0.0f64, |a, h| a.max(h.abs()));
        let bal = ledger
            .h_total
            .iter()
            .zip(&ledger.work_ext)
            .fold(0.0f64, |a, (h, w)| a.max((h - h0 - w).abs()));
        self.summary.set_f64("energy_balance_rel", if scale > 0.0 { bal / scale } else { 0.0 });
        if let Some(n) = ledger.t.len().checked_sub(1) {
            self.summary.set_f64("h_total_final", ledger.h_total[n]);
            self.summary.set_f64("h_str_final", ledger.h_str[n]);
            self.summary.set_f64("work_ext_final", ledger.work_ext[n]);
        }
    }

    fn simulate(&mut self) -> Result<(), CliError> {
        let plant = self.plant()?;
        let model = self.model()?;
        self.pdc_gate(&model, false)?;
        let drive = self.cfg.drive.build(2)?;
        let sys = self.extension(&plant, &model)?;
        let (tr, led) = self.run_plant(&sys, &plant, &drive, &self.sim_options())?;
        self.write("trajectory.csv", &trajectory_csv(&tr, &led))?;
        self.summary.set("string_dof", sys.string_len());
        self.energy_summary(&led, &drive);
        Ok(())
    }

    /// Reduced reference solution at oracle_dt.
    fn reference(
        &self,
        plant: &Plant,
        model: &SusceptibilityModel,
        drive: &DriveSignal,
    ) -> Result<Reference, CliError> {
        let i = &self.cfg.integration;
        let dt = i.dt / i.oracle_ratio() as f64;
        match plant.quartic {
            None => {
                let r = solve_volterra_from(&plant.spec, model, &[0], &plant.u0(), drive, dt, i.t_end)?;
                let q: Vec<f64> = r.u.iter().map(|u| u[1]).collect();
                let mut big_f = vec![0.0; r.f.len()];
                for n in 1..r.f.len() {
                    big_f[n] = big_f[n - 1] + 0.5 * dt * (r.f[n - 1][0] + r.f[n][0]);
                }
                Ok(Reference { dt, q, big_f })
            }
            Some(_) => {
                let gamma = self
                    .cfg
                    .susceptibility()?
                    .markov_gamma()
                    .ok_or_else(|| CliError::invalid("susceptibility.model", "the quartic reference needs Markov friction"))?;
                Ok(markov_rk4(plant, gamma, drive, dt, i.t_end))
            }
        }
    }

    fn compare(&mut self) -> Result<(), CliError> {
        let plant = self.plant()?;
        let mcfg = self.cfg.susceptibility()?.clone();
        let model = mcfg.build()?;
        self.pdc_gate(&model, false)?;
        let drive = self.cfg.drive.build(2)?;
        let sys = self.extension(&plant, &model)?;
        let opts = self.sim_options();
        let (ext, reference) = if self.threads > 1 {
            thread::scope(|s| {
                let h = s.spawn(|| self.reference(&plant, &model, &drive));
                let ext = self.run_plant(&sys, &plant, &drive, &opts);
                (ext, h.join().expect("reference worker panicked"))
            })
        } else {
            (self.run_plant(&sys, &plant, &drive, &opts), self.reference(&plant, &model, &drive))
        };
        let ((tr, led), reference) = (ext?, reference?);

        // closed form for free linear decay under Markov friction
        let analytic = match (plant.quartic, mcfg.markov_gamma(), &drive) {
            (None, Some(g), DriveSignal::Zero) => Some(damped_oscillator(plant.mass, plant.stiffness, g)?),
            _ => None,
        };
        let stride = opts.sample_every * self.cfg.integration.oracle_ratio();
        let mut csv = String::from("t,q_ext,q_volterra,q_analytic,abs_err\n");
        let (mut err, mut scale, mut vol_err) = (0.0f64, 0.0f64, 0.0f64);
        for (n, (t, u)) in tr.t.iter().zip(&tr.u).enumerate() {
            let q = u[1];
            let qv = reference.at((n * stride).min(reference.q.len() - 1));
            let qa = analytic.as_ref().map(|a| a.q_analytic(*t, plant.q0, plant.v0));
            let best = qa.unwrap_or(qv);
            let e = (q - best).abs();
            err = err.max(e);
            scale = scale.max(best.abs());
            vol_err = vol_err.max((q - qv).abs());
            let qa_s = qa.map_or(String::new(), |x| format!("{x:e}"));
            let _ = writeln!(csv, "{t:e},{q:e},{qv:e},{qa_s},{e:e}");
        }
        self.write("compare.csv", &csv)?;
        self.summary.set_f64("oracle_linf", err);
        self.summary.set_f64("oracle_linf_rel", if scale > 0.0 { err / scale } else { err });
        self.summary.set_f64("volterra_linf", vol_err);
        self.summary.set("oracle", if analytic.is_some() { "analytic" } else { "reduced" });
        self.energy_summary(&led, &drive);

        if let Some(gamma) = mcfg.markov_gamma().filter(|g| *g > 0.0) {
            self.string_profile(&sys, &tr, &plant, gamma, analytic.as_ref(), &reference)?;
        }
        Ok(())
    }

    /// Hidden-string profile √(γ/2)F(t − |s|) against the reference.
    fn string_profile(
        &mut self,
        sys: &ExtendedSystem,
        tr: &Trajectory,
        plant: &Plant,
        gamma: f64,
        analytic: Option<&DampedOscillator>,
        reference: &Reference,
    ) -> Result<(), CliError> {
        let d = &self.cfg.diagnostics;
        let t_end = self.cfg.integration.t_end;
        positive("diagnostics.profile_ds", d.profile_ds)?;
        let times = d.profile_times.clone().unwrap_or_else(|| vec![t_end]);
        if times.iter().any(|t| !(*t >= 0.0 && *t <= t_end)) {
            return Err(CliError::invalid("diagnostics.profile_times", "must lie in [0, t_end]"));
        }
        let amp = (0.5 * gamma).sqrt();
        let big_f = |t: f64| match analytic {
            Some(a) if t > 0.0 => plant.mass.sqrt() * (a.q_analytic(t, plant.q0, plant.v0) - plant.q0),
            Some(_) => 0.0,
            None => reference.big_f_at(t),
        };
        let mut csv = String::from("t,s,phi_ext,phi_reference\n");
        let mut err = 0.0f64;
        for &t in &times {
            let n = (t / d.profile_ds).floor() as i64;
            for i in -n..=n {
                let s = i as f64 * d.profile_ds;
                let got = dirac_profile(sys, tr, s, t)[0];
                let want = amp * big_f(t - s.abs());
                err = err.max((got - want).abs());
                let _ = writeln!(csv, "{t:e},{s:e},{got:e},{want:e}");
            }
        }
        self.write("string_profile.csv", &csv)?;
        self.summary.set_f64("string_profile_linf", err);
        self.summary.set_f64("string_profile_tol", 2.0 * (d.profile_ds + self.cfg.integration.dt));
        Ok(())
    }

    fn brillouin(&mut self) -> Result<(), CliError> {
        let plant = self.plant()?;
        if plant.quartic.is_some() {
            return Err(CliError::invalid("system.kind", "brillouin needs a linear oscillator"));
        }
        let model = self.model()?;
        self.pdc_gate(&model, false)?;
        let DriveConfig::ModulatedCarrier { .. } = self.cfg.drive else {
            return Err(CliError::invalid("drive.kind", "brillouin needs a modulated_carrier drive"));
        };
        let drive = self.cfg.drive.build(2)?;
        let DriveSignal::Carrier(carrier) = &drive else { unreachable!("carrier config builds a carrier") };
        let (omega, delta) = (carrier.omega, carrier.delta());
        let sys = self.extension(&plant, &model)?;
        let mut opts = self.sim_options();
        opts.sample_every = 1;
        let dt = opts.dt;
        let (tr, led) = self.run_plant(&sys, &plant, &drive, &opts)?;
        let sigma = match self.cfg.diagnostics.sigma {
            Some(s) => {
                positive("diagnostics.sigma", s)?;
                s
            }
            None => default_sigma(omega, delta),
        };
        let floor = self.cfg.diagnostics.envelope_floor;
        self.summary.set_f64("delta", delta);
        self.summary.set_f64("sigma", sigma);
        self.summary.set_f64("omega", omega);

        // both stress channels carry energy; χ acts on the first
        let embed = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let full = SusceptibilityModel::conjugated(model.clone(), embed)?;
        let env_all = demodulate(&tr.f, 0.0, dt, omega, None)?;
        match brillouin_energy_lossless(&env_all, &full, omega, self.cfg.diagnostics.pdc_tol) {
            Ok(pred) => {
                let avg = time_average(&led.h_total, dt, sigma, omega)?;
                let err = interior_relative_error(&avg, &pred, &env_all, floor);
                self.summary.set("brillouin_mode", "energy");
                self.summary.set_f64("brillouin_rel_err_leading", err);
                self.summary.set_f64("brillouin_rel_err_full", err);
                self.summary.set_f64("envelope_delta", env_all.delta);
                self.write("brillouin.csv", &brillouin_csv(&env_all, &avg, &pred, &pred))
            }
            Err(Error::NotLossless { .. }) => {
                let p: Vec<Vec<f64>> = tr.f.iter().map(|f| vec![f[0]]).collect();
                let env = demodulate(&p, 0.0, dt, omega, None)?;
                let pred = brillouin_power(&env, &model, omega)?;
                let avg = time_average(&centered_derivative(&led.h_str, dt), dt, sigma, omega)?;
                self.summary.set("brillouin_mode", "power");
                self.summary.set_f64("brillouin_rel_err_leading", interior_relative_error(&avg, &pred.leading, &env, floor));
                self.summary.set_f64("brillouin_rel_err_full", interior_relative_error(&avg, &pred.full, &env, floor));
                self.summary.set_f64("envelope_delta", env.delta);
                self.write("brillouin.csv", &brillouin_csv(&env, &avg, &pred.leading, &pred.full))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn maxwell(&mut self) -> Result<(), CliError> {
        let SystemConfig::Maxwell1d(m) = &self.cfg.system else {
            return Err(CliError::invalid("system.kind", "maxwell1d needs a maxwell1d system"));
        };
        positive("system.dx", m.dx)?;
        positive("system.eps", m.eps)?;
        positive("system.mu", m.mu)?;
        if m.n < 3 {
            return Err(CliError::invalid("system.n", "must be at least 3"));
        }
        let grid = MaxwellGrid { x0: m.x0, dx: m.dx, n: m.n };
        let x_end = grid.node(m.n - 1);
        if !(m.source_x > m.x0 && m.source_x < x_end) {
            return Err(CliError::invalid("system.source_x", "must lie inside the grid"));
        }
        let slab = match (&self.cfg.susceptibility, m.slab_lo, m.slab_hi) {
            (None, None, None) => None,
            (None, _, _) => return Err(CliError::invalid("susceptibility", "slab bounds given without a model")),
            (Some(_), Some(lo), Some(hi)) if lo < hi && lo > m.x0 && hi < x_end => {
                let model = self.model()?;
                self.pdc_gate(&model, false)?;
                Some(Slab { model, x_lo: lo, x_hi: hi })
            }
            (Some(_), None, _) => return Err(CliError::invalid("system.slab_lo", "required with a susceptibility")),
            (Some(_), _, None) => return Err(CliError::invalid("system.slab_hi", "required with a susceptibility")),
            (Some(_), Some(_), Some(_)) => {
                return Err(CliError::invalid("system.slab_hi", "slab must satisfy x0 < slab_lo < slab_hi < x_end"))
            }
        };
        let drive = self.cfg.drive.build(1)?;
        if drive == DriveSignal::Zero {
            return Err(CliError::invalid("drive.kind", "maxwell1d needs a pulse or carrier source"));
        }
        let bounds = slab.as_ref().map(|s| (grid.nearest(s.x_lo), grid.nearest(s.x_hi)));
        let (eps, mu) = (m.eps, m.mu);
        let mx = match maxwell1d(grid, &move |_| eps, &move |_| mu, slab, drive.omega_max()) {
            Err(Error::GridTooCoarse { points_per_wavelength }) => {
                return Err(CliError::invalid(
                    "system.dx",
                    format!("{points_per_wavelength:.1} points per wavelength at the drive band edge (need 20)"),
                ))
            }
            r => r?,
        };
        let c = &self.cfg.coupling;
        if c.representation == Representation::Spatial {
            return Err(CliError::invalid("coupling.representation", "maxwell1d uses the spectral string"));
        }
        positive("coupling.dk", c.dk)?;
        positive("coupling.kmax", c.kmax)?;
        let ext = mx.extension(c.dk, c.kmax)?;
        let source = mx.sheet_current(m.source_x, drive.clone());
        let mut opts = self.sim_options();
        let t_end = self.cfg.integration.t_end;
        opts.probes = vec![t_end];
        let (tr, led) = simulate(&ext, &source, &opts)?;
        let last = tr.snapshots.last().ok_or(CliError::Core(Error::InvalidParameter("missing final snapshot")))?;
        self.write("fields.csv", &mx.field_csv(&ext, last))?;

        // per-sample energy split: left of the slab, right of it, inside (fields + string)
        let split = |f: &[f64], h_str: f64| -> Option<[f64; 3]> {
            let (lo, hi) = bounds?;
            let left = if lo > 0 { mx.region_energy(f, 0, lo - 1) } else { 0.0 };
            let right = if hi + 1 < mx.n() { mx.region_energy(f, hi + 1, mx.n() - 1) } else { 0.0 };
            let links = [lo.checked_sub(1).map(Maxwell1d::h_index), (hi + 1 < mx.n()).then(|| Maxwell1d::h_index(hi))]
                .into_iter()
                .flatten()
                .map(|k| 0.5 * f[k] * f[k])
                .sum::<f64>();
            Some([left, right, mx.region_energy(f, lo, hi) + links + h_str])
        };
        let mut csv = String::from("t,H_sys,H_str,H_total,work_ext");
        if bounds.is_some() {
            csv.push_str(",left,right,slab");
        }
        csv.push('\n');
        for n in 0..tr.t.len() {
            let _ = write!(
                csv,
                "{:e},{:e},{:e},{:e},{:e}",
                tr.t[n], led.h_sys[n], led.h_str[n], led.h_total[n], led.work_ext[n]
            );
            if let Some([l, r, s]) = split(&tr.f[n], led.h_str[n]) {
                let _ = write!(csv, ",{l:e},{r:e},{s:e}");
            }
            csv.push('\n');
        }
        self.write("energy.csv", &csv)?;

        let n = tr.t.len() - 1;
        let injected = led.work_ext[n];
        self.summary.set_f64("injected", injected);
        self.energy_summary(&led, &drive);
        let audit = match split(&tr.f[n], led.h_str[n]) {
            Some([l, r, s]) => {
                self.summary.set_f64("reflected", l);
                self.summary.set_f64("transmitted", r);
                self.summary.set_f64("stored", s);
                let absorbed: f64 = mx.string_energy_density(&ext, last).iter().sum::<f64>() * m.dx;
                self.summary.set_f64("absorbed", absorbed);
                (l + r + s - injected).abs()
            }
            None => (led.h_sys[n] - injected).abs(),
        };
        self.summary.set_f64("energy_audit_rel", if injected != 0.0 { audit / injected.abs() } else { audit });
        self.summary.set_f64("courant", self.cfg.integration.dt / m.dx);
        Ok(())
    }
}

fn finite_pair(q0: f64, v0: f64) -> Result<(), CliError> {
    crate::config::finite("system.q0", q0)?;
    crate::config::finite("system.v0", v0)
}

/// max|H − H(t_off)| / |H(t_off)| over samples after the drive switches off.
pub fn energy_drift(ledger: &EnergyLedger, t_off: f64) -> f64 {
    let Some(i0) = ledger.t.iter().position(|&t| t >= t_off - 1e-12) else {
        return 0.0;
    };
    let h0 = ledger.h_total[i0];
    let dev = ledger.h_total[i0..].iter().fold(0.0f64, |a, h| a.max((h - h0).abs()));
    if h0 != 0.0 {
        dev / h0.abs()
    } else {
        dev
    }
}

/// RK4 march of the Markov-reduced oscillator
/// ṗ = −V′(q) + ρ_p, q̇ = f/√m + ρ_q, Ḟ = f with f = p/√m − γF.
fn markov_rk4(plant: &Plant, gamma: f64, drive: &DriveSignal, dt: f64, t_end: f64) -> Reference {
    let sm = plant.mass.sqrt();
    let rhs = |t: f64, y: [f64; 3]| -> [f64; 3] {
        let mut rho = [0.0; 2];
        drive.force(t, &mut rho);
        let f = y[0] / sm - gamma * y[2];
        [-plant.force(y[1]) + rho[0], f / sm + rho[1], f]
    };
    let steps = (t_end / dt).round() as usize;
    let [p0, q0] = plant.u0();
    let mut y = [p0, q0, 0.0];
    let mut q = vec![q0];
    let mut big_f = vec![0.0];
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    for n in 0..steps {
        let t = n as f64 * dt;
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * dt, add(y, k1, 0.5 * dt));
        let k3 = rhs(t + 0.5 * dt, add(y, k2, 0.5 * dt));
        let k4 = rhs(t + dt, add(y, k3, dt));
        for i in 0..3 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        q.push(y[1]);
        big_f.push(y[2]);
    }
    Reference { dt, q, big_f }
}

/// Columns t, envelope, measured, predicted_leading, predicted_full over the valid window.
fn brillouin_csv(env: &Envelope, avg: &Averaged, leading: &[f64], full: &[f64]) -> String {
    let (lo, hi) = (avg.valid.0.max(env.valid.0), avg.valid.1.min(env.valid.1));
    let mut csv = String::from("t,envelope,measured,predicted_leading,predicted_full\n");
    for i in lo..hi {
        let _ = writeln!(
            csv,
            "{:e},{:e},{:e},{:e},{:e}",
            env.time(i),
            env.norm(i),
            avg.values[i],
            leading[i],
            full[i]
        );
    }
    csv
}

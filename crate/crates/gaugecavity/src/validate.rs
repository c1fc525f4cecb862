//! Self-contained correctness suite behind `validate`: every check builds
//! its own reference (closed-form law or Fock-basis propagation) and runs
//! the production engine against it. The config supplies the knobs a user
//! might get wrong (dt, grid, truncation); models are fixed per check so a
//! failure always means the engine, not the configuration, except where a
//! check exists precisely to catch a bad knob.

use ndarray::Array1;

use crate::config::{OracleIntegrator, RunConfig};
use crate::field::{coherent_spinor, FftCache, QuadratureGrid, Representation};
use crate::model::ModelSpec;
use crate::observables;
use crate::oracle::{DenseExp, FockSpace};
use crate::propagator::Propagator;
use crate::C64;

/// Built-in reference configuration: sized so the full suite runs in
/// seconds while every check stays far from its threshold.
pub const REFERENCE_CONFIG: &str = "\
model.kind = rabi
model.omega_radns = 1
model.splitting_radns = 1.2
model.g_radns = 0.3
grid.n = 256
grid.l1 = 10
time.dt_ns = 1e-4
time.t_final_ns = 1
init.x1 = 0
init.p1 = 2
init.atom = 1, 1
oracle.n_max = 40
";

pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation, compared against `threshold`.
    pub metric: f64,
    pub threshold: f64,
    pub note: String,
}

impl CheckReport {
    fn pass(name: &'static str, metric: f64, threshold: f64) -> Self {
        Self { name, passed: metric <= threshold, metric, threshold, note: String::new() }
    }

    fn fail_with(name: &'static str, threshold: f64, note: String) -> Self {
        Self { name, passed: false, metric: f64::INFINITY, threshold, note }
    }
}

/// Run every check; a report per check, failures included.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<CheckReport>, crate::config::ConfigError> {
    let dt = cfg.schedule().map(|(dt, _, _)| dt).unwrap_or(1e-4);
    let mut reports = vec![
        free_rotation(dt),
        strang_order(dt),
        gamma_decay(dt),
        kappa_norm_law(dt),
        gauge_structure(),
    ];
    reports.push(oracle_equivalence(cfg)?);
    Ok(reports)
}

/// g = 0: quadrature means follow the classical rotation. omega = 2 makes
/// the Strang phase error at a 10x-coarsened dt of 1e-3 land a factor of a
/// few above the 1e-6 gate while the nominal 1e-4 sits far below it.
fn free_rotation(dt: f64) -> CheckReport {
    const NAME: &str = "free_rotation";
    const TOL: f64 = 1e-6;
    let omega = 2.0;
    let spec = ModelSpec::rabi(omega, 0.0, 0.0).unwrap();
    let grid = QuadratureGrid::new(1, 128, &[8.0]).unwrap();
    let (x0, p0) = (2.0, 0.0);
    let mut psi = coherent_spinor(grid, &[(x0, p0)], &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
        .unwrap();
    let prop = match Propagator::new(&spec, grid, dt) {
        Ok(p) => p,
        Err(e) => return CheckReport::fail_with(NAME, TOL, e.to_string()),
    };
    let period = std::f64::consts::TAU / omega;
    let steps = (period / dt).round() as usize;
    let fft = FftCache::new(128);
    let mut worst = 0.0_f64;
    let run = prop.evolve(&mut psi, steps, (steps / 16).max(1), |_, t, f| {
        let obs = observables::measure(f, &fft, true).unwrap();
        let want_x = x0 * (omega * t).cos() + p0 * (omega * t).sin();
        let want_p = p0 * (omega * t).cos() - x0 * (omega * t).sin();
        worst = worst.max((obs.x_mean[0] - want_x).abs()).max((obs.p_mean[0] - want_p).abs());
    });
    match run {
        Ok(_) => CheckReport::pass(NAME, worst, TOL),
        Err(e) => CheckReport::fail_with(NAME, TOL, e.to_string()),
    }
}

/// Halving dt must shrink the inversion error by ~4 (second order). The
/// reference is the same engine at dt/8, so the expected ratio is
/// (1 - 1/64) / (1/4 - 1/64) = 4.2, checked inside [3.5, 4.5].
fn strang_order(dt: f64) -> CheckReport {
    const NAME: &str = "strang_order";
    let spec = ModelSpec::rabi(1.0, 1.2, 0.3).unwrap();
    let grid = QuadratureGrid::new(1, 128, &[8.0]).unwrap();
    let t_final = 0.5;
    let atom = [C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
    let w_at = |h: f64| -> Result<f64, String> {
        let mut psi = coherent_spinor(grid, &[(0.0, 2.0)], &atom).map_err(|e| e.to_string())?;
        let prop = Propagator::new(&spec, grid, h).map_err(|e| e.to_string())?;
        let steps = (t_final / h).round() as usize;
        prop.evolve(&mut psi, steps, steps, |_, _, _| {}).map_err(|e| e.to_string())?;
        let p = observables::populations(&psi, true).map_err(|e| e.to_string())?;
        Ok(p[1] - p[0])
    };
    let run = || -> Result<f64, String> {
        let reference = w_at(dt / 8.0)?;
        let e_full = (w_at(dt)? - reference).abs();
        let e_half = (w_at(dt / 2.0)? - reference).abs();
        if e_half == 0.0 {
            return Err("error at dt/2 below measurement floor; increase dt".into());
        }
        Ok(e_full / e_half)
    };
    match run() {
        Ok(ratio) => CheckReport {
            name: NAME,
            passed: (3.5..=4.5).contains(&ratio),
            metric: ratio,
            threshold: 4.5,
            note: String::from("want ratio in [3.5, 4.5]"),
        },
        Err(note) => CheckReport::fail_with(NAME, 4.5, note),
    }
}

/// Atom pinned in the decaying level, no coupling: norm2 follows
/// exp(-2 gamma t) exactly (the loss factor commutes with everything else
/// in the split).
fn gamma_decay(dt: f64) -> CheckReport {
    const NAME: &str = "gamma_decay";
    const TOL: f64 = 1e-9;
    let gamma = 0.05;
    let spec = ModelSpec::rabi(1.0, 1.2, 0.0)
        .and_then(|s| s.with_losses(0.0, gamma))
        .unwrap();
    let grid = QuadratureGrid::new(1, 64, &[8.0]).unwrap();
    let mut psi = coherent_spinor(grid, &[(0.0, 1.0)], &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)])
        .unwrap();
    let prop = match Propagator::new(&spec, grid, dt) {
        Ok(p) => p,
        Err(e) => return CheckReport::fail_with(NAME, TOL, e.to_string()),
    };
    let steps = (2.0 / dt).round() as usize;
    let mut worst = 0.0_f64;
    let run = prop.evolve(&mut psi, steps, (steps / 8).max(1), |_, t, f| {
        let want = (-2.0 * gamma * t).exp();
        worst = worst.max((f.norm2() - want).abs());
    });
    match run {
        Ok(_) => CheckReport::pass(NAME, worst, TOL),
        Err(e) => CheckReport::fail_with(NAME, TOL, e.to_string()),
    }
}

/// Cavity decay on a coherent state: norm2(t) = exp(|alpha|^2 (e^{-2 kappa t} - 1))
/// to Strang accuracy.
fn kappa_norm_law(dt: f64) -> CheckReport {
    const NAME: &str = "kappa_norm_law";
    const TOL: f64 = 1e-6;
    let kappa = 0.02;
    let spec = ModelSpec::rabi(1.0, 0.0, 0.0)
        .and_then(|s| s.with_losses(kappa, 0.0))
        .unwrap();
    let grid = QuadratureGrid::new(1, 128, &[9.0]).unwrap();
    let (x0, p0) = (0.0, 2.0);
    let alpha2 = 0.5 * (x0 * x0 + p0 * p0);
    let mut psi = coherent_spinor(grid, &[(x0, p0)], &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
        .unwrap();
    let prop = match Propagator::new(&spec, grid, dt) {
        Ok(p) => p,
        Err(e) => return CheckReport::fail_with(NAME, TOL, e.to_string()),
    };
    let steps = (2.0 / dt).round() as usize;
    let mut worst = 0.0_f64;
    let run = prop.evolve(&mut psi, steps, (steps / 8).max(1), |_, t, f| {
        let want = (alpha2 * ((-2.0 * kappa * t).exp() - 1.0)).exp();
        worst = worst.max((f.norm2() - want).abs());
    });
    match run {
        Ok(_) => CheckReport::pass(NAME, worst, TOL),
        Err(e) => CheckReport::fail_with(NAME, TOL, e.to_string()),
    }
}

/// Structural identities of the gauge rewriting: decomposition residual,
/// commutator values, and the sombrero minimum against its closed form.
fn gauge_structure() -> CheckReport {
    use crate::model::{
        gauge_commutator, lambda_2, sigma_z, sombrero_analysis, verify_gauge_decomposition,
        InternalMatrix, ModelKind,
    };
    const NAME: &str = "gauge_structure";
    const TOL: f64 = 1e-12;
    let mut worst = 0.0_f64;
    let specs = [
        ModelSpec::rabi(1.0, 0.8, 0.7).unwrap(),
        ModelSpec::bimodal_rabi(1.0, 0.8, 0.7).unwrap(),
        ModelSpec::bimodal_lambda(1.0, [0.0, 0.0, 1.0], 0.7).unwrap(),
    ];
    for spec in &specs {
        for &(p1, p2) in &[(0.0, 0.0), (0.7, -1.3), (2.5, 0.4)] {
            worst = worst.max(verify_gauge_decomposition(spec, p1, p2));
        }
        let scale = (spec.g / spec.omega).powi(2);
        let want = match spec.kind {
            ModelKind::Rabi => InternalMatrix::zero(2),
            ModelKind::BimodalRabi => sigma_z().scaled(C64::new(0.0, 2.0 * scale)),
            ModelKind::BimodalLambda => lambda_2().scaled(C64::new(0.0, scale)),
        };
        worst = worst.max(gauge_commutator(spec).max_abs_diff(&want));
    }
    // Sombrero radius against the closed form, above threshold.
    let spec = ModelSpec::bimodal_rabi(1.0, 1.0, 1.0).unwrap();
    let report = sombrero_analysis(&spec);
    let g2 = spec.g * spec.g;
    let want = (g2 / (spec.omega * spec.omega)
        - spec.splitting * spec.splitting / (4.0 * g2))
        .sqrt();
    let r_err = (report.r_min - want).abs();
    let mut out = CheckReport::pass(NAME, worst, TOL);
    if r_err > 1e-6 {
        out.passed = false;
        out.note = format!("sombrero radius off by {r_err:.2e}");
    }
    out
}

/// The headline cross-check: same initial state propagated by the grid
/// engine and by the dense Fock-basis route, compared by state fidelity.
fn oracle_equivalence(cfg: &RunConfig) -> Result<CheckReport, crate::config::ConfigError> {
    const NAME: &str = "oracle_equivalence";
    const TOL: f64 = 1e-4;
    let spec = cfg.model_spec()?;
    let grid = cfg.grid(&spec)?;
    let modes = cfg.initial_modes(&spec)?;
    let atom = cfg.initial_atom(&spec)?;
    let (dt, steps, _) = cfg.schedule()?;
    let t_final = dt * steps as f64;
    let n_max = cfg.oracle_n_max()?;

    let run = || -> Result<f64, String> {
        let mut psi = coherent_spinor(grid, &modes, &atom).map_err(|e| e.to_string())?;
        let prop = Propagator::new(&spec, grid, dt).map_err(|e| e.to_string())?;
        prop.evolve(&mut psi, steps, steps, |_, _, _| {}).map_err(|e| e.to_string())?;

        let fock = FockSpace::new(&spec, n_max).map_err(|e| e.to_string())?;
        let psi0 = fock.coherent_state(&modes, &atom).map_err(|e| e.to_string())?;
        let h = fock.hamiltonian();
        let evolved: Array1<C64> = match cfg.oracle_integrator().map_err(|e| e.to_string())? {
            OracleIntegrator::Dense => {
                let exp = DenseExp::new(&h).map_err(|e| e.to_string())?;
                exp.apply(&psi0, t_final)
            }
            OracleIntegrator::Rk4 => crate::oracle::propagate_rk4(&h, &psi0, t_final)
                .map_err(|e| e.to_string())?,
        };
        let tail = fock.tail_mass(&evolved);
        if tail > 1e-6 {
            return Err(format!("truncation tail mass {tail:.3e} exceeds 1e-6; raise oracle.n_max"));
        }
        let mut reference = fock.to_grid(&evolved, grid).map_err(|e| e.to_string())?;
        reference.set_representation(Representation::Momentum, &FftCache::new(grid.n()));
        let fidelity = reference.overlap(&psi).norm_sqr()
            / (reference.norm2() * psi.norm2());
        Ok(1.0 - fidelity)
    };
    Ok(match run() {
        Ok(infidelity) => CheckReport::pass(NAME, infidelity, TOL),
        Err(note) => CheckReport::fail_with(NAME, TOL, note),
    })
}

//! Symmetric split-operator propagation.
//!
//! One step of size dt is the Strang cycle
//!
//!   exp(-i dt/2 K)  ->  FFT to X  ->  exp(-i dt V(x))  ->  FFT to P  ->  exp(-i dt/2 K)
//!
//! where K(p) collects everything diagonal in the momentum representation
//! (internal coupling, omega p^2/2, cavity and atomic loss) and V(x) is the
//! scalar (omega - i kappa) x^2/2 multiplier. Both multiplier families are
//! precomputed once; the two half kicks of a step are always applied
//! separately (never fused across steps), so a trajectory is a fixed
//! sequence of pointwise products and FFTs and its output is bitwise
//! reproducible for any thread count.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{FftCache, QuadratureGrid, Representation, SpinorField};
use crate::model::{InternalMatrix, ModelError, ModelSpec};
use crate::C64;

/// Fraction of the norm allowed within two cells of the grid edge before a
/// run is considered contaminated by wrap-around.
pub const BOUNDARY_TOL: f64 = 1e-6;

/// Width, in cells, of the boundary strip monitored for leakage.
pub const BOUNDARY_CELLS: usize = 2;

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error("time step too large: dt * max rate = {q:.3} >= 0.5")]
    Unstable { q: f64 },
    #[error("state reached the grid boundary at step {step} (edge mass {mass:.3e})")]
    BoundaryLeak { step: usize, mass: f64 },
    #[error("state became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("grid has {grid} modes but the model needs {model}")]
    ModeMismatch { grid: usize, model: usize },
    #[error("field dimension {field} does not match the model dimension {model}")]
    DimMismatch { field: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Matrix exponential on the internal space.
// ---------------------------------------------------------------------------

/// exp(M) for a general complex internal-space matrix.
pub fn expm(m: &InternalMatrix) -> InternalMatrix {
    match m.dim() {
        2 => expm2(m),
        _ => expm3(m),
    }
}

/// Closed form via the traceless split M = a 1 + B, B^2 = mu^2 1:
/// exp(M) = e^a (cosh(mu) 1 + sinhc(mu) B). Branch-free in mu.
fn expm2(m: &InternalMatrix) -> InternalMatrix {
    let a = (m.at(0, 0) + m.at(1, 1)) * 0.5;
    let b00 = m.at(0, 0) - a;
    let b01 = m.at(0, 1);
    let b10 = m.at(1, 0);
    let mu2 = b00 * b00 + b01 * b10;
    let mu = mu2.sqrt();
    let (ch, shc) = if mu.norm() < 1e-4 {
        // cosh and sinh(mu)/mu by series; both are functions of mu^2.
        (
            C64::new(1.0, 0.0) + mu2 * 0.5 + mu2 * mu2 * (1.0 / 24.0),
            C64::new(1.0, 0.0) + mu2 * (1.0 / 6.0) + mu2 * mu2 * (1.0 / 120.0),
        )
    } else {
        (mu.cosh(), mu.sinh() / mu)
    };
    let ea = a.exp();
    let mut out = InternalMatrix::zero(2);
    out.set(0, 0, ea * (ch + shc * b00));
    out.set(0, 1, ea * shc * b01);
    out.set(1, 0, ea * shc * b10);
    out.set(1, 1, ea * (ch - shc * b00));
    out
}

/// Taylor series with scaling and squaring; the scaled norm <= 1/4 makes
/// the series settle in ~15 terms at full precision.
fn expm3(m: &InternalMatrix) -> InternalMatrix {
    let norm = m.max_abs();
    let s = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let t = m.scaled_re(0.5_f64.powi(s as i32));
    let id = InternalMatrix::identity(m.dim());
    let mut sum = id;
    let mut term = id;
    for k in 1..=30 {
        term = (&term * &t).scaled_re(1.0 / k as f64);
        sum = &sum + &term;
        if term.max_abs() < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

// ---------------------------------------------------------------------------
// Propagator.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct EvolveReport {
    pub steps: usize,
    pub t_final: f64,
    pub max_boundary_mass: f64,
}

pub struct Propagator {
    spec: ModelSpec,
    grid: QuadratureGrid,
    dt: f64,
    dim: usize,
    /// Row-major dim x dim kick matrix per grid point: exp(-i dt/2 K(p)).
    kick: Vec<C64>,
    /// Scalar position-space multiplier per grid point.
    x_mult: Vec<C64>,
    fft: FftCache,
    stability_q: f64,
}

impl Propagator {
    pub fn new(spec: &ModelSpec, grid: QuadratureGrid, dt: f64) -> Result<Self, PropagatorError> {
        Self::new_in_frame(spec, grid, dt, None)
    }

    /// Propagator in a constant rotated internal frame: every internal
    /// matrix M becomes u^+ M u. Physics is frame covariant, which is what
    /// the tests pin down; `None` is the bare frame.
    pub fn new_in_frame(
        spec: &ModelSpec,
        grid: QuadratureGrid,
        dt: f64,
        frame: Option<&InternalMatrix>,
    ) -> Result<Self, PropagatorError> {
        if grid.n_modes() != spec.n_modes() {
            return Err(PropagatorError::ModeMismatch {
                grid: grid.n_modes(),
                model: spec.n_modes(),
            });
        }
        if let Some(u) = frame {
            let residual = u.unitarity_residual();
            if residual > 1e-12 {
                return Err(ModelError::NotUnitary { residual }.into());
            }
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ModelError::InvalidParameter { name: "dt", value: dt }.into());
        }

        let l_max = (0..grid.n_modes()).fold(0.0_f64, |acc, k| acc.max(grid.extent(k)));
        let atom_scale = match spec.kind {
            crate::model::ModelKind::BimodalLambda => {
                spec.levels.iter().fold(0.0_f64, |a, e| a.max(e.abs()))
            }
            _ => spec.splitting.abs(),
        };
        let q = dt * atom_scale.max(spec.omega).max(spec.g * l_max);
        if q >= 0.5 {
            return Err(PropagatorError::Unstable { q });
        }

        let dim = spec.internal_dim();
        let n = grid.n();
        let npts = grid.npts();
        let n_modes = grid.n_modes();
        let proj = spec.decay_projector();
        let mi = C64::new(0.0, -1.0);

        // Momentum-space half kick per point.
        let mut kick = vec![Complex64::new(0.0, 0.0); npts * dim * dim];
        kick.par_chunks_mut(n * dim * dim)
            .enumerate()
            .for_each(|(i2, block)| {
                for i1 in 0..n {
                    let p1 = grid.p(0, i1);
                    let p2 = if n_modes == 2 { grid.p(1, i2) } else { 0.0 };
                    let r2 = if n_modes == 2 { p1 * p1 + p2 * p2 } else { p1 * p1 };
                    let mut k = spec.coupling_matrix(p1, p2);
                    let diag = C64::new(
                        0.5 * spec.omega * r2,
                        -0.5 * spec.kappa * (r2 - n_modes as f64),
                    );
                    for i in 0..dim {
                        let mut v = k.at(i, i) + diag;
                        v += proj.at(i, i) * C64::new(0.0, -spec.gamma);
                        k.set(i, i, v);
                    }
                    if let Some(u) = frame {
                        k = &(&u.adjoint() * &k) * u;
                    }
                    let e = expm(&k.scaled(mi * (0.5 * dt)));
                    let base = i1 * dim * dim;
                    for i in 0..dim {
                        for j in 0..dim {
                            block[base + i * dim + j] = e.at(i, j);
                        }
                    }
                }
            });

        // Position-space multiplier: exp(-i dt (omega - i kappa) x^2 / 2).
        let freq = C64::new(spec.omega, -spec.kappa);
        let mut x_mult = vec![Complex64::new(0.0, 0.0); npts];
        x_mult.par_chunks_mut(n).enumerate().for_each(|(i2, row)| {
            for (i1, v) in row.iter_mut().enumerate() {
                let x1 = grid.x(0, i1);
                let x2 = if n_modes == 2 { grid.x(1, i2) } else { 0.0 };
                let r2 = if n_modes == 2 { x1 * x1 + x2 * x2 } else { x1 * x1 };
                *v = (mi * freq * (0.5 * dt * r2)).exp();
            }
        });

        Ok(Self {
            spec: *spec,
            grid,
            dt,
            dim,
            kick,
            x_mult,
            fft: FftCache::new(n),
            stability_q: q,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// dt times the fastest rate in the problem; keep below ~0.1.
    pub fn stability_q(&self) -> f64 {
        self.stability_q
    }

    pub fn fft(&self) -> &FftCache {
        &self.fft
    }

    fn apply_kick(&self, field: &mut SpinorField) {
        let n = self.grid.n();
        let npts = self.grid.npts();
        let data = field.as_mut_slice();
        match self.dim {
            2 => {
                let (c0, c1) = data.split_at_mut(npts);
                c0.par_chunks_mut(n)
                    .zip(c1.par_chunks_mut(n))
                    .zip(self.kick.par_chunks(n * 4))
                    .for_each(|((r0, r1), km)| {
                        for i in 0..n {
                            let m = &km[i * 4..i * 4 + 4];
                            let (v0, v1) = (r0[i], r1[i]);
                            r0[i] = m[0] * v0 + m[1] * v1;
                            r1[i] = m[2] * v0 + m[3] * v1;
                        }
                    });
            }
            3 => {
                let (c0, rest) = data.split_at_mut(npts);
                let (c1, c2) = rest.split_at_mut(npts);
                c0.par_chunks_mut(n)
                    .zip(c1.par_chunks_mut(n))
                    .zip(c2.par_chunks_mut(n))
                    .zip(self.kick.par_chunks(n * 9))
                    .for_each(|(((r0, r1), r2), km)| {
                        for i in 0..n {
                            let m = &km[i * 9..i * 9 + 9];
                            let (v0, v1, v2) = (r0[i], r1[i], r2[i]);
                            r0[i] = m[0] * v0 + m[1] * v1 + m[2] * v2;
                            r1[i] = m[3] * v0 + m[4] * v1 + m[5] * v2;
                            r2[i] = m[6] * v0 + m[7] * v1 + m[8] * v2;
                        }
                    });
            }
            _ => unreachable!(),
        }
    }

    fn apply_x_mult(&self, field: &mut SpinorField) {
        let n = self.grid.n();
        let npts = self.grid.npts();
        for c in 0..self.dim {
            field
                .component_mut(c)
                .par_chunks_mut(n)
                .zip(self.x_mult.par_chunks(n))
                .for_each(|(row, mul)| {
                    for i in 0..row.len() {
                        row[i] *= mul[i];
                    }
                });
        }
        let _ = npts;
    }

    /// One Strang step; the field must be in the momentum representation.
    pub fn step(&self, field: &mut SpinorField) {
        debug_assert_eq!(field.rep(), Representation::Momentum);
        self.apply_kick(field);
        field.set_representation(Representation::Position, &self.fft);
        self.apply_x_mult(field);
        field.set_representation(Representation::Momentum, &self.fft);
        self.apply_kick(field);
    }

    /// Propagate `steps` steps, invoking `on_snapshot(step, t, field)` at
    /// step 0, every `snapshot_every` steps, and at the last step. The field
    /// is checked for non-finite values and boundary leakage at every
    /// snapshot; observables should be computed in the callback so the check
    /// cadence and the output cadence agree.
    pub fn evolve<F>(
        &self,
        field: &mut SpinorField,
        steps: usize,
        snapshot_every: usize,
        mut on_snapshot: F,
    ) -> Result<EvolveReport, PropagatorError>
    where
        F: FnMut(usize, f64, &SpinorField),
    {
        assert!(snapshot_every >= 1, "snapshot cadence must be at least one step");
        if field.dim() != self.dim {
            return Err(PropagatorError::DimMismatch { field: field.dim(), model: self.dim });
        }
        assert_eq!(field.grid(), &self.grid, "field lives on a different grid");
        field.set_representation(Representation::Momentum, &self.fft);

        let mut max_edge = 0.0_f64;
        let check = |step: usize, field: &SpinorField, max_edge: &mut f64| {
            if !field.as_slice().iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Err(PropagatorError::NonFinite { step });
            }
            let edge = field.boundary_mass(BOUNDARY_CELLS);
            *max_edge = max_edge.max(edge);
            if edge > BOUNDARY_TOL {
                return Err(PropagatorError::BoundaryLeak { step, mass: edge });
            }
            Ok(())
        };

        check(0, field, &mut max_edge)?;
        on_snapshot(0, 0.0, field);
        for step in 1..=steps {
            self.step(field);
            if step % snapshot_every == 0 || step == steps {
                check(step, field, &mut max_edge)?;
                on_snapshot(step, step as f64 * self.dt, field);
            }
        }
        Ok(EvolveReport {
            steps,
            t_final: steps as f64 * self.dt,
            max_boundary_mass: max_edge,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::coherent_spinor;
    use crate::model::{sigma_x, ModelKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    // Plain fixed-length Taylor sum on raw arrays; shares nothing with the
    // implementation under test. Valid for norms up to ~2.
    fn expm_series(dim: usize, m: &[[C64; 3]; 3]) -> [[C64; 3]; 3] {
        let zero = c(0.0, 0.0);
        let mut sum = [[zero; 3]; 3];
        let mut term = [[zero; 3]; 3];
        for i in 0..dim {
            sum[i][i] = c(1.0, 0.0);
            term[i][i] = c(1.0, 0.0);
        }
        for k in 1..=60 {
            let mut next = [[zero; 3]; 3];
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = zero;
                    for l in 0..dim {
                        acc += term[i][l] * m[l][j];
                    }
                    next[i][j] = acc / k as f64;
                }
            }
            term = next;
            for i in 0..dim {
                for j in 0..dim {
                    sum[i][j] += term[i][j];
                }
            }
        }
        sum
    }

    fn random_matrix(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> InternalMatrix {
        let mut m = InternalMatrix::zero(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.set(i, j, c(rng.random_range(-scale..scale), rng.random_range(-scale..scale)));
            }
        }
        m
    }

    #[test]
    fn expm_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            for dim in [2usize, 3] {
                let m = random_matrix(&mut rng, dim, 0.8);
                let got = expm(&m);
                let mut raw = [[c(0.0, 0.0); 3]; 3];
                for i in 0..dim {
                    for j in 0..dim {
                        raw[i][j] = m.at(i, j);
                    }
                }
                let want = expm_series(dim, &raw);
                for i in 0..dim {
                    for j in 0..dim {
                        assert!(
                            (got.at(i, j) - want[i][j]).norm() < 1e-13,
                            "dim {dim} entry ({i},{j})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn expm_known_cases() {
        // exp(-i theta sigma_x) = cos(theta) 1 - i sin(theta) sigma_x.
        let theta = 0.77_f64;
        let got = expm(&sigma_x().scaled(c(0.0, -theta)));
        let want = &InternalMatrix::identity(2).scaled_re(theta.cos())
            + &sigma_x().scaled(c(0.0, -theta.sin()));
        assert!(got.max_abs_diff(&want) < 1e-15);

        // Nilpotent: exp([[0,1],[0,0]]) = [[1,1],[0,1]].
        let mut n = InternalMatrix::zero(2);
        n.set(0, 1, c(1.0, 0.0));
        let got = expm(&n);
        let mut want = InternalMatrix::identity(2);
        want.set(0, 1, c(1.0, 0.0));
        assert!(got.max_abs_diff(&want) < 1e-15);

        // Diagonal 3x3 is exact.
        let d = InternalMatrix::diagonal(3, &[0.3, -1.1, 2.0]);
        let got = expm(&d.scaled(c(0.0, -1.0)));
        for i in 0..3 {
            let want = c(0.0, -d.at(i, i).re).exp();
            assert!((got.at(i, i) - want).norm() < 1e-14);
        }
    }

    #[test]
    fn expm_of_antihermitian_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            for dim in [2usize, 3] {
                let mut h = InternalMatrix::zero(dim);
                for i in 0..dim {
                    h.set(i, i, c(rng.random_range(-2.0..2.0), 0.0));
                    for j in i + 1..dim {
                        let v = c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                        h.set(i, j, v);
                        h.set(j, i, v.conj());
                    }
                }
                let u = expm(&h.scaled(c(0.0, -1.0)));
                assert!(u.unitarity_residual() < 1e-14);
            }
        }
    }

    fn vacuum_atom(dim: usize) -> Vec<C64> {
        let mut atom = vec![c(0.0, 0.0); dim];
        atom[0] = c(1.0, 0.0);
        atom
    }

    #[test]
    fn free_rotation_of_a_coherent_state() {
        // g = 0, Omega = 0: <X>, <P> rotate classically at omega.
        let spec = ModelSpec::rabi(1.0, 0.0, 0.0).unwrap();
        let grid = QuadratureGrid::new(1, 128, &[8.0]).unwrap();
        let prop = Propagator::new(&spec, grid, 1e-3).unwrap();
        let (x0, p0) = (2.0, 0.5);
        let psi0 = coherent_spinor(grid, &[(x0, p0)], &vacuum_atom(2)).unwrap();
        let mut psi = psi0.clone();
        let steps = (std::f64::consts::TAU / 1e-3).round() as usize;
        prop.evolve(&mut psi, steps, steps, |_, _, _| {}).unwrap();
        let t = steps as f64 * 1e-3;
        let want_p = p0 * t.cos() - x0 * t.sin();
        let want_x = x0 * t.cos() + p0 * t.sin();
        assert!((psi.mean_coordinate(0) - want_p).abs() < 1e-5);
        let mut psix = psi.clone();
        psix.set_representation(Representation::Position, prop.fft());
        assert!((psix.mean_coordinate(0) - want_x).abs() < 1e-5);
        // Norm is preserved to accumulated rounding over ~6e3 steps.
        assert!((psi.norm2() - 1.0).abs() < 1e-11);
        assert!(psi0.overlap(&psi).norm() > 1.0 - 1e-6);
    }

    #[test]
    fn atomic_decay_law_is_exact() {
        // g = 0: the gamma projector commutes with everything else, so the
        // upper population decays by exactly exp(-2 gamma t).
        let gamma = 0.35;
        let spec = ModelSpec::rabi(1.0, 1.2, 0.0)
            .unwrap()
            .with_losses(0.0, gamma)
            .unwrap();
        let grid = QuadratureGrid::new(1, 64, &[8.0]).unwrap();
        let prop = Propagator::new(&spec, grid, 1e-3).unwrap();
        let atom = [c(0.6, 0.0), c(0.0, 0.8)];
        let mut psi = coherent_spinor(grid, &[(0.0, 1.0)], &atom).unwrap();
        let steps = 700;
        prop.evolve(&mut psi, steps, steps, |_, _, _| {}).unwrap();
        let t = steps as f64 * 1e-3;
        assert!((psi.population(0) - 0.36).abs() < 1e-12);
        assert!((psi.population(1) - 0.64 * (-2.0 * gamma * t).exp()).abs() < 1e-12);
    }

    #[test]
    fn cavity_decay_follows_the_coherent_norm_law() {
        // g = 0, Omega = 0, kappa > 0: norm^2(t) = exp(|a0|^2 (e^{-2 kt} - 1))
        // and the normalized state stays coherent with a(t) = a0 e^{-(i w + k) t}.
        let (omega, kappa) = (1.0, 0.05);
        let spec = ModelSpec::rabi(omega, 0.0, 0.0)
            .unwrap()
            .with_losses(kappa, 0.0)
            .unwrap();
        let grid = QuadratureGrid::new(1, 128, &[8.0]).unwrap();
        let prop = Propagator::new(&spec, grid, 1e-3).unwrap();
        let (x0, p0) = (0.0, 2.0);
        let mut psi = coherent_spinor(grid, &[(x0, p0)], &vacuum_atom(2)).unwrap();
        let steps = 2000;
        prop.evolve(&mut psi, steps, steps, |_, _, _| {}).unwrap();
        let t = steps as f64 * 1e-3;
        let alpha2 = 0.5 * (x0 * x0 + p0 * p0);
        let want_norm2 = (alpha2 * ((-2.0 * kappa * t).exp() - 1.0)).exp();
        assert!(
            (psi.norm2() - want_norm2).abs() < 1e-5 * want_norm2,
            "{} vs {want_norm2}",
            psi.norm2()
        );
        let decay = (-kappa * t).exp();
        let want_p = decay * (p0 * (omega * t).cos() - x0 * (omega * t).sin());
        assert!((psi.mean_coordinate(0) - want_p).abs() < 1e-5);
    }

    #[test]
    fn evolution_is_covariant_under_internal_frame_change() {
        let spec = ModelSpec::bimodal_lambda(1.0, [0.0, 0.2, 1.0], 0.4).unwrap();
        let grid = QuadratureGrid::new(2, 32, &[6.0, 6.0]).unwrap();
        let dt = 1e-3;
        // A fixed nontrivial unitary from a seeded Hermitian matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut h = InternalMatrix::zero(3);
        for i in 0..3 {
            h.set(i, i, c(rng.random_range(-1.0..1.0), 0.0));
            for j in i + 1..3 {
                let v = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                h.set(i, j, v);
                h.set(j, i, v.conj());
            }
        }
        let (_, u) = h.eigh();

        let atom = [c(0.6, 0.1), c(0.0, 0.5), c(0.4, -0.2)];
        let psi0 = coherent_spinor(grid, &[(1.0, 0.5), (-0.3, 0.2)], &atom).unwrap();

        let bare = Propagator::new(&spec, grid, dt).unwrap();
        let mut psi_bare = psi0.clone();
        bare.evolve(&mut psi_bare, 40, 40, |_, _, _| {}).unwrap();
        psi_bare.apply_internal(&u.adjoint());

        let rotated = Propagator::new_in_frame(&spec, grid, dt, Some(&u)).unwrap();
        let mut psi_rot = psi0.clone();
        psi_rot.apply_internal(&u.adjoint());
        rotated.evolve(&mut psi_rot, 40, 40, |_, _, _| {}).unwrap();

        let worst = psi_bare
            .as_slice()
            .iter()
            .zip(psi_rot.as_slice().iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).norm()));
        assert!(worst < 1e-12, "worst pointwise deviation {worst:.3e}");
    }

    #[test]
    fn trajectories_are_bitwise_reproducible_across_thread_counts() {
        let spec = ModelSpec::bimodal_rabi(1.0, 1.2, 0.3).unwrap();
        let grid = QuadratureGrid::new(2, 32, &[6.0, 6.0]).unwrap();
        let atom = [c(1.0, 0.0), c(-0.5, 0.5)];
        let psi0 = coherent_spinor(grid, &[(0.0, 1.5), (0.5, 0.0)], &atom).unwrap();

        let run = |threads: usize| -> Vec<C64> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let prop = Propagator::new(&spec, grid, 2e-3).unwrap();
                let mut psi = psi0.clone();
                prop.evolve(&mut psi, 100, 10, |_, _, _| {}).unwrap();
                psi.as_slice().to_vec()
            })
        };
        let a = run(1);
        let b = run(2);
        let c3 = run(3);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x == y));
        assert!(a.iter().zip(c3.iter()).all(|(x, y)| x == y));
    }

    #[test]
    fn boundary_leak_is_detected() {
        let spec = ModelSpec::rabi(1.0, 0.0, 0.0).unwrap();
        let grid = QuadratureGrid::new(1, 128, &[8.0]).unwrap();
        let prop = Propagator::new(&spec, grid, 1e-3).unwrap();
        // Rotation carries this packet to <P> ~ -7.2, within a width of the edge.
        let mut psi = coherent_spinor(grid, &[(7.2, 0.0)], &vacuum_atom(2)).unwrap();
        let err = prop.evolve(&mut psi, 2500, 50, |_, _, _| {}).unwrap_err();
        assert!(matches!(err, PropagatorError::BoundaryLeak { .. }), "{err}");
    }

    #[test]
    fn non_finite_states_are_detected() {
        let spec = ModelSpec::rabi(1.0, 0.0, 0.0).unwrap();
        let grid = QuadratureGrid::new(1, 64, &[8.0]).unwrap();
        let prop = Propagator::new(&spec, grid, 1e-3).unwrap();
        let mut psi = coherent_spinor(grid, &[(0.0, 0.0)], &vacuum_atom(2)).unwrap();
        psi.component_mut(0)[5] = c(f64::NAN, 0.0);
        let err = prop.evolve(&mut psi, 3, 1, |_, _, _| {}).unwrap_err();
        assert!(matches!(err, PropagatorError::NonFinite { .. }));
    }

    #[test]
    fn oversized_steps_are_rejected() {
        let spec = ModelSpec::rabi(1.0, 30.0, 0.0).unwrap();
        let grid = QuadratureGrid::new(1, 64, &[8.0]).unwrap();
        match Propagator::new(&spec, grid, 0.02) {
            Err(PropagatorError::Unstable { q }) => assert!(q >= 0.5),
            _ => panic!("oversized step accepted"),
        }
        // Marginal steps are allowed but flagged through stability_q.
        let spec = ModelSpec::rabi(1.0, 1.0, 0.1).unwrap();
        let prop = Propagator::new(&spec, grid, 0.2).unwrap();
        assert!(prop.stability_q() > 0.1);
    }

    #[test]
    fn snapshots_fire_at_the_requested_cadence() {
        let spec = ModelSpec::rabi(1.0, 1.0, 0.1).unwrap();
        let grid = QuadratureGrid::new(1, 64, &[8.0]).unwrap();
        let prop = Propagator::new(&spec, grid, 1e-3).unwrap();
        let mut psi = coherent_spinor(grid, &[(0.0, 1.0)], &vacuum_atom(2)).unwrap();
        let mut seen = Vec::new();
        prop.evolve(&mut psi, 25, 10, |step, t, _| seen.push((step, t)))
            .unwrap();
        assert_eq!(
            seen.iter().map(|s| s.0).collect::<Vec<_>>(),
            vec![0, 10, 20, 25]
        );
        assert!((seen[2].1 - 0.020).abs() < 1e-15);
        assert_eq!(spec.kind, ModelKind::Rabi);
    }
}

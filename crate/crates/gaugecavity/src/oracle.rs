//! Dense Fock-basis reference implementation.
//!
//! Everything here is deliberately independent of the split-operator path:
//! states are vectors over number states, the Hamiltonian is a dense matrix
//! with P_k = i (a_k^+ - a_k)/sqrt(2), and propagation goes through an exact
//! eigendecomposition (or RK4 when losses make the generator non-Hermitian).
//! Agreement between this route and the grid engine is the main correctness
//! argument for both.
//!
//! Basis order: atom index fastest, then mode 2, then mode 1:
//! idx = (n1 * n_max + n2) * dim_atom + j, with the single-mode case
//! collapsing to idx = n1 * dim_atom + j. Each mode keeps n_max levels and
//! every mode Hamiltonian carries its omega/2 zero point.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use thiserror::Error;

use crate::field::{QuadratureGrid, Representation, SpinorField};
use crate::model::{ModelKind, ModelSpec};
use crate::C64;

/// Dense eigensolves above this size are not worth the wait.
pub const DENSE_DIM_CAP: usize = 20_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("matrix is not Hermitian (max deviation {dev:.3e}); use the RK4 path")]
    NonHermitian { dev: f64 },
    #[error("Fock truncation too small: need at least {needed} levels, have {n_max}")]
    TruncationTooSmall { needed: usize, n_max: usize },
    #[error("population {mass:.3e} in the top Fock levels; raise n_max")]
    TailLeak { mass: f64 },
    #[error("basis dimension {dim} exceeds the dense cap {DENSE_DIM_CAP}")]
    TooLarge { dim: usize },
    #[error("state length {got} does not match basis dimension {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("eigendecomposition failed to diagonalize (residual {resid:.3e})")]
    BadDecomposition { resid: f64 },
    #[error("atomic amplitude vector has zero norm")]
    ZeroAtom,
    #[error("grid drops {deficit:.3e} of the state's mass; enlarge or refine it")]
    UnderResolved { deficit: f64 },
    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

const Z0: C64 = Complex64::new(0.0, 0.0);
const ONE: C64 = Complex64::new(1.0, 0.0);

/// Truncated single-mode momentum quadrature i (a^+ - a)/sqrt(2).
pub fn mode_momentum(n_max: usize) -> Array2<C64> {
    let mut p = Array2::from_elem((n_max, n_max), Z0);
    let s = 0.5_f64.sqrt();
    for n in 0..n_max - 1 {
        let v = ((n + 1) as f64).sqrt() * s;
        p[(n + 1, n)] = C64::new(0.0, v);
        p[(n, n + 1)] = C64::new(0.0, -v);
    }
    p
}

/// Truncated single-mode position quadrature (a + a^+)/sqrt(2).
pub fn mode_position(n_max: usize) -> Array2<C64> {
    let mut x = Array2::from_elem((n_max, n_max), Z0);
    let s = 0.5_f64.sqrt();
    for n in 0..n_max - 1 {
        let v = ((n + 1) as f64).sqrt() * s;
        x[(n + 1, n)] = C64::new(v, 0.0);
        x[(n, n + 1)] = C64::new(v, 0.0);
    }
    x
}

/// Truncated Fock space for one model: shared per-mode cutoff `n_max`.
#[derive(Clone, Copy, Debug)]
pub struct FockSpace {
    spec: ModelSpec,
    n_max: usize,
}

impl FockSpace {
    pub fn new(spec: &ModelSpec, n_max: usize) -> Result<Self, OracleError> {
        let dim = n_max.pow(spec.n_modes() as u32) * spec.internal_dim();
        if n_max < 4 {
            return Err(OracleError::TruncationTooSmall { needed: 4, n_max });
        }
        if dim > DENSE_DIM_CAP {
            return Err(OracleError::TooLarge { dim });
        }
        Ok(Self { spec: *spec, n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.n_max.pow(self.spec.n_modes() as u32) * self.spec.internal_dim()
    }

    #[inline]
    fn index(&self, n1: usize, n2: usize, j: usize) -> usize {
        let d = self.spec.internal_dim();
        if self.spec.n_modes() == 1 {
            n1 * d + j
        } else {
            (n1 * self.n_max + n2) * d + j
        }
    }

    /// Hermitian Hamiltonian: omega sum_k (n_k + 1/2) + bare atomic term +
    /// the model's momentum coupling.
    pub fn hamiltonian(&self) -> Array2<C64> {
        let d = self.spec.internal_dim();
        let modes = self.spec.n_modes();
        let nm = self.n_max;
        let dim = self.dim();
        let mut h = Array2::from_elem((dim, dim), Z0);

        let bare = self.spec.bare_atomic();
        let n2_range = if modes == 2 { nm } else { 1 };
        for n1 in 0..nm {
            for n2 in 0..n2_range {
                let quanta = (n1 + n2) as f64 + 0.5 * modes as f64;
                for j in 0..d {
                    let row = self.index(n1, n2, j);
                    h[(row, row)] += C64::new(self.spec.omega * quanta, 0.0);
                    for jp in 0..d {
                        let v = bare.at(j, jp);
                        if v != Z0 {
                            h[(row, self.index(n1, n2, jp))] += v;
                        }
                    }
                }
            }
        }

        // Momentum couplings: -g P_k tensor A_k with A from the model kind.
        let p = mode_momentum(nm);
        let couplings: Vec<(usize, crate::model::InternalMatrix)> = match self.spec.kind {
            ModelKind::Rabi => vec![(0, crate::model::sigma_x())],
            ModelKind::BimodalRabi => {
                vec![(0, crate::model::sigma_x()), (1, crate::model::sigma_y())]
            }
            ModelKind::BimodalLambda => {
                vec![(0, crate::model::lambda_4()), (1, crate::model::lambda_6())]
            }
        };
        let mg = C64::new(-self.spec.g, 0.0);
        for (mode, a) in couplings {
            for n in 0..nm - 1 {
                for (np, nq) in [(n + 1, n), (n, n + 1)] {
                    let pv = p[(np, nq)];
                    for other in 0..n2_range {
                        let (r1, r2, c1, c2) = if mode == 0 {
                            (np, other, nq, other)
                        } else {
                            (other, np, other, nq)
                        };
                        for j in 0..d {
                            for jp in 0..d {
                                let av = a.at(j, jp);
                                if av != Z0 {
                                    h[(self.index(r1, r2, j), self.index(c1, c2, jp))] +=
                                        mg * pv * av;
                                }
                            }
                        }
                    }
                }
            }
        }
        h
    }

    /// Non-Hermitian generator including losses:
    /// H - i kappa sum_k n_k - i gamma |top><top|.
    pub fn effective_hamiltonian(&self) -> Array2<C64> {
        let mut h = self.hamiltonian();
        let d = self.spec.internal_dim();
        let modes = self.spec.n_modes();
        let nm = self.n_max;
        let n2_range = if modes == 2 { nm } else { 1 };
        for n1 in 0..nm {
            for n2 in 0..n2_range {
                for j in 0..d {
                    let row = self.index(n1, n2, j);
                    let mut loss = self.spec.kappa * (n1 + n2) as f64;
                    if j == d - 1 {
                        loss += self.spec.gamma;
                    }
                    h[(row, row)] += C64::new(0.0, -loss);
                }
            }
        }
        h
    }

    /// Product of coherent modes and an internal state, matching the grid
    /// convention pi^(-1/4) exp(-i x0 P) exp(-(P - p0)^2/2) per mode, which
    /// is exp(-i x0 p0 / 2) times the standard alpha = (x0 + i p0)/sqrt(2)
    /// coherent state.
    pub fn coherent_state(
        &self,
        modes: &[(f64, f64)],
        atom: &[C64],
    ) -> Result<Array1<C64>, OracleError> {
        assert_eq!(modes.len(), self.spec.n_modes());
        assert_eq!(atom.len(), self.spec.internal_dim());
        let atom_norm: f64 = atom.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if atom_norm <= 0.0 {
            return Err(OracleError::ZeroAtom);
        }
        let mut lines = Vec::new();
        for &(x0, p0) in modes {
            let a2 = 0.5 * (x0 * x0 + p0 * p0);
            let amod = a2.sqrt();
            let needed = (a2 + 5.0 * amod + 10.0).ceil() as usize;
            if needed > self.n_max {
                return Err(OracleError::TruncationTooSmall { needed, n_max: self.n_max });
            }
            let alpha = C64::new(x0, p0) * 0.5_f64.sqrt();
            let phase = C64::from_polar(1.0, -0.5 * x0 * p0);
            let mut line = vec![Z0; self.n_max];
            // c_n = e^{-|a|^2/2} a^n / sqrt(n!), built up recursively.
            let mut c = C64::new((-0.5 * a2).exp(), 0.0) * phase;
            for (n, slot) in line.iter_mut().enumerate() {
                *slot = c;
                c = c * alpha / ((n + 1) as f64).sqrt();
            }
            lines.push(line);
        }
        let mut state = Array1::from_elem(self.dim(), Z0);
        let n2_range = if self.spec.n_modes() == 2 { self.n_max } else { 1 };
        for n1 in 0..self.n_max {
            for n2 in 0..n2_range {
                let mode_amp = if self.spec.n_modes() == 2 {
                    lines[0][n1] * lines[1][n2]
                } else {
                    lines[0][n1]
                };
                for (j, aj) in atom.iter().enumerate() {
                    state[self.index(n1, n2, j)] = mode_amp * (aj / atom_norm);
                }
            }
        }
        Ok(state)
    }

    /// Population in the top two levels of any mode; the truncation is
    /// trustworthy while this stays below ~1e-6.
    pub fn tail_mass(&self, state: &Array1<C64>) -> f64 {
        let d = self.spec.internal_dim();
        let nm = self.n_max;
        let n2_range = if self.spec.n_modes() == 2 { nm } else { 1 };
        let mut mass = 0.0;
        for n1 in 0..nm {
            for n2 in 0..n2_range {
                if n1 < nm - 2 && (self.spec.n_modes() == 1 || n2 < nm - 2) {
                    continue;
                }
                for j in 0..d {
                    mass += state[self.index(n1, n2, j)].norm_sqr();
                }
            }
        }
        mass
    }

    /// Project a Fock-basis state onto a momentum grid using the harmonic
    /// oscillator momentum wavefunctions <P|n> = (-i)^n phi_n(P).
    pub fn to_grid(
        &self,
        state: &Array1<C64>,
        grid: QuadratureGrid,
    ) -> Result<SpinorField, OracleError> {
        if state.len() != self.dim() {
            return Err(OracleError::BadLength { expected: self.dim(), got: state.len() });
        }
        assert_eq!(grid.n_modes(), self.spec.n_modes());
        let d = self.spec.internal_dim();
        let nm = self.n_max;
        let n = grid.n();
        let mut field = SpinorField::zeros(grid, d, Representation::Momentum)
            .expect("internal dim is 2 or 3");

        // (-i)^n phi_n at every grid point of each axis.
        let table = |k: usize| -> Vec<Vec<C64>> {
            let pts: Vec<f64> = (0..n).map(|i| grid.p(k, i)).collect();
            let phis = hermite_functions(nm, &pts);
            let cycle = [ONE, C64::new(0.0, -1.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0)];
            phis.into_iter()
                .enumerate()
                .map(|(nn, row)| row.into_iter().map(|v| cycle[nn % 4] * v).collect())
                .collect()
        };

        if self.spec.n_modes() == 1 {
            let t1 = table(0);
            for j in 0..d {
                let comp = field.component_mut(j);
                for n1 in 0..nm {
                    let c = state[n1 * d + j];
                    if c == Z0 {
                        continue;
                    }
                    for (i1, v) in comp.iter_mut().enumerate() {
                        *v += c * t1[n1][i1];
                    }
                }
            }
        } else {
            let t1 = table(0);
            let t2 = table(1);
            // Contract mode 2 first: partial[j][n1][i2].
            for j in 0..d {
                let mut partial = vec![vec![Z0; n]; nm];
                for n1 in 0..nm {
                    for n2 in 0..nm {
                        let c = state[(n1 * nm + n2) * d + j];
                        if c == Z0 {
                            continue;
                        }
                        let row = &t2[n2];
                        let acc = &mut partial[n1];
                        for i2 in 0..n {
                            acc[i2] += c * row[i2];
                        }
                    }
                }
                let comp = field.component_mut(j);
                for n1 in 0..nm {
                    let row1 = &t1[n1];
                    let part = &partial[n1];
                    for i2 in 0..n {
                        let p = part[i2];
                        if p == Z0 {
                            continue;
                        }
                        let base = i2 * n;
                        for i1 in 0..n {
                            comp[base + i1] += p * row1[i1];
                        }
                    }
                }
            }
        }
        // Mass conservation doubles as the resolution check: a grid too
        // small or too coarse for the occupied levels loses norm here.
        let want: f64 = state.iter().map(|v| v.norm_sqr()).sum();
        let deficit = (want - field.norm2()).abs();
        if deficit > 1e-8 * want.max(1e-30) {
            return Err(OracleError::UnderResolved { deficit });
        }
        Ok(field)
    }
}

/// Normalized harmonic oscillator eigenfunctions phi_0..phi_{n_max-1} at the
/// given points, via the stable upward recurrence
/// phi_{n+1} = sqrt(2/(n+1)) y phi_n - sqrt(n/(n+1)) phi_{n-1}.
pub fn hermite_functions(n_max: usize, pts: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; pts.len()]; n_max];
    let norm0 = std::f64::consts::PI.powf(-0.25);
    for (i, &y) in pts.iter().enumerate() {
        out[0][i] = norm0 * (-0.5 * y * y).exp();
    }
    if n_max > 1 {
        for (i, &y) in pts.iter().enumerate() {
            out[1][i] = 2.0_f64.sqrt() * y * out[0][i];
        }
    }
    for nn in 1..n_max.saturating_sub(1) {
        let a = (2.0 / (nn as f64 + 1.0)).sqrt();
        let b = (nn as f64 / (nn as f64 + 1.0)).sqrt();
        for (i, &y) in pts.iter().enumerate() {
            out[nn + 1][i] = a * y * out[nn][i] - b * out[nn - 1][i];
        }
    }
    out
}

/// Exact propagation by eigendecomposition; Hermitian generators only.
pub struct DenseExp {
    evals: Array1<f64>,
    evecs: Array2<C64>,
}

impl DenseExp {
    pub fn new(h: &Array2<C64>) -> Result<Self, OracleError> {
        let mut dev = 0.0_f64;
        let mut scale = 0.0_f64;
        for ((i, j), v) in h.indexed_iter() {
            scale = scale.max(v.norm());
            dev = dev.max((v - h[(j, i)].conj()).norm());
        }
        if dev > 1e-12 * scale.max(1.0) {
            return Err(OracleError::NonHermitian { dev });
        }
        let (evals, evecs) = h.eigh(UPLO::Lower)?;
        // LAPACK sees row-major complex storage as the transpose, so the
        // returned columns may diagonalize conj(H) instead of H. Probe the
        // residual on a spread of columns, conjugate if that is the better
        // orientation, and refuse to continue if neither one works.
        let n = h.nrows();
        let probe: Vec<usize> = (0..n.min(32)).map(|k| k * n / n.min(32)).collect();
        let resid = |conj: bool| -> f64 {
            let mut worst = 0.0_f64;
            for &k in &probe {
                let e = evals[k];
                for i in 0..n {
                    let mut acc = Z0;
                    for j in 0..n {
                        let v = if conj { evecs[(j, k)].conj() } else { evecs[(j, k)] };
                        acc += h[(i, j)] * v;
                    }
                    let w = if conj { evecs[(i, k)].conj() } else { evecs[(i, k)] };
                    worst = worst.max((acc - w * e).norm());
                }
            }
            worst
        };
        let (r_plain, r_conj) = (resid(false), resid(true));
        let use_conj = r_conj < r_plain;
        let r = r_plain.min(r_conj);
        if r > 1e-7 * scale.max(1.0) {
            return Err(OracleError::BadDecomposition { resid: r });
        }
        let evecs = if use_conj { evecs.mapv(|v| v.conj()) } else { evecs };
        Ok(Self { evals, evecs })
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.evals
    }

    /// exp(-i H t) psi0.
    pub fn apply(&self, psi0: &Array1<C64>, t: f64) -> Array1<C64> {
        let coeffs = self.evecs.t().mapv(|v| v.conj()).dot(psi0);
        let rotated: Array1<C64> = coeffs
            .iter()
            .zip(self.evals.iter())
            .map(|(c, e)| c * C64::from_polar(1.0, -e * t))
            .collect();
        self.evecs.dot(&rotated)
    }
}

/// Fixed-step RK4 for dpsi/dt = -i H psi with any (possibly non-Hermitian)
/// H. The step count is doubled until two successive resolutions agree to
/// 1e-9 per unit time; returns the finer result.
pub fn propagate_rk4(h: &Array2<C64>, psi0: &Array1<C64>, t: f64) -> Result<Array1<C64>, OracleError> {
    if h.nrows() != psi0.len() {
        return Err(OracleError::BadLength { expected: h.nrows(), got: psi0.len() });
    }
    if t == 0.0 {
        return Ok(psi0.clone());
    }
    let hinf = h
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let mut steps = ((t.abs() * hinf / 0.1).ceil() as usize).max(4);
    let tol = 1e-9 * t.abs().max(1.0);
    let mut prev = rk4_run(h, psi0, t, steps);
    for _ in 0..8 {
        steps *= 2;
        let fine = rk4_run(h, psi0, t, steps);
        let dev = prev
            .iter()
            .zip(fine.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).norm()));
        if dev < tol {
            return Ok(fine);
        }
        prev = fine;
    }
    Err(OracleError::TailLeak { mass: f64::NAN })
}

fn rk4_run(h: &Array2<C64>, psi0: &Array1<C64>, t: f64, steps: usize) -> Array1<C64> {
    let dt = t / steps as f64;
    let mi = C64::new(0.0, -1.0);
    let f = |v: &Array1<C64>| -> Array1<C64> { h.dot(v).mapv(|x| x * mi) };
    let mut psi = psi0.clone();
    for _ in 0..steps {
        let k1 = f(&psi);
        let k2 = f(&(&psi + &k1.mapv(|x| x * (0.5 * dt))));
        let k3 = f(&(&psi + &k2.mapv(|x| x * (0.5 * dt))));
        let k4 = f(&(&psi + &k3.mapv(|x| x * dt)));
        psi = &psi
            + &(k1 + k2.mapv(|x| x * 2.0) + k3.mapv(|x| x * 2.0) + k4).mapv(|x| x * (dt / 6.0));
    }
    psi
}

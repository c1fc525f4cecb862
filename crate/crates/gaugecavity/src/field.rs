//! Spinor fields on a uniform quadrature grid.
//!
//! States live in the momentum (P) representation, one complex plane (or
//! line) per internal component, and move to the position representation
//! through phase-shifted FFTs. Grid points are p_j = (j - n/2) dp with
//! dp = 2 L / n, and x_m = (m - n/2) dx with dx = pi / L, so that
//! dp dx n = 2 pi exactly and the representation change is unitary on the
//! grid (round trips are exact to rounding).

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid size must be a power of two >= 16, got {n}")]
    InvalidGridSize { n: usize },
    #[error("grid half-extent must be finite and positive, got {value}")]
    InvalidExtent { value: f64 },
    #[error("expected {expected} mode extents, got {got}")]
    ExtentCount { expected: usize, got: usize },
    #[error("internal dimension must be 2 or 3, got {dim}")]
    InvalidDim { dim: usize },
    #[error("mode initial data count {got} does not match mode count {expected}")]
    ModeCount { expected: usize, got: usize },
    #[error("atomic amplitude vector has zero norm")]
    ZeroAtom,
}

/// Uniform symmetric grid over one or two quadrature axes. Both axes share
/// the point count n; half-extents may differ per mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureGrid {
    n_modes: usize,
    n: usize,
    extents: [f64; 2],
}

impl QuadratureGrid {
    pub fn new(n_modes: usize, n: usize, extents: &[f64]) -> Result<Self, FieldError> {
        assert!(n_modes == 1 || n_modes == 2, "one or two modes");
        // Power of two keeps the FFT fast paths; n >= 16 keeps n % 4 == 0,
        // which the centered-grid phase convention relies on.
        if !n.is_power_of_two() || n < 16 {
            return Err(FieldError::InvalidGridSize { n });
        }
        if extents.len() != n_modes {
            return Err(FieldError::ExtentCount { expected: n_modes, got: extents.len() });
        }
        let mut ext = [0.0_f64; 2];
        for (k, &l) in extents.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(FieldError::InvalidExtent { value: l });
            }
            ext[k] = l;
        }
        Ok(Self { n_modes, n, extents: ext })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total grid points, n^(number of modes).
    pub fn npts(&self) -> usize {
        self.n.pow(self.n_modes as u32)
    }

    /// Momentum half-extent of mode k.
    pub fn extent(&self, k: usize) -> f64 {
        self.extents[k]
    }

    pub fn dp(&self, k: usize) -> f64 {
        2.0 * self.extents[k] / self.n as f64
    }

    pub fn dx(&self, k: usize) -> f64 {
        std::f64::consts::PI / self.extents[k]
    }

    pub fn p(&self, k: usize, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.dp(k)
    }

    pub fn x(&self, k: usize, m: usize) -> f64 {
        (m as f64 - (self.n / 2) as f64) * self.dx(k)
    }

    /// Volume element in the momentum representation.
    pub fn momentum_cell(&self) -> f64 {
        (0..self.n_modes).map(|k| self.dp(k)).product()
    }

    /// Volume element in the position representation.
    pub fn position_cell(&self) -> f64 {
        (0..self.n_modes).map(|k| self.dx(k)).product()
    }

    /// Flat index of the grid point (i1) or (i1, i2); mode 1 varies fastest.
    #[inline]
    pub fn idx(&self, i1: usize, i2: usize) -> usize {
        if self.n_modes == 1 {
            i1
        } else {
            i2 * self.n + i1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    Momentum,
    Position,
}

/// Cached FFT plans plus scratch for strided axes.
pub struct FftCache {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    n: usize,
}

impl FftCache {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            n,
        }
    }
}

/// Internal-spinor-valued field over a [`QuadratureGrid`].
///
/// Storage is one contiguous block per internal component:
/// `data[c * npts + idx]` with `idx` from [`QuadratureGrid::idx`].
#[derive(Clone, Debug)]
pub struct SpinorField {
    grid: QuadratureGrid,
    dim: usize,
    rep: Representation,
    data: Vec<C64>,
}

const Z0: C64 = Complex64::new(0.0, 0.0);

impl SpinorField {
    pub fn zeros(grid: QuadratureGrid, dim: usize, rep: Representation) -> Result<Self, FieldError> {
        if dim != 2 && dim != 3 {
            return Err(FieldError::InvalidDim { dim });
        }
        let data = vec![Z0; dim * grid.npts()];
        Ok(Self { grid, dim, rep, data })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rep(&self) -> Representation {
        self.rep
    }

    pub fn component(&self, c: usize) -> &[C64] {
        let npts = self.grid.npts();
        &self.data[c * npts..(c + 1) * npts]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [C64] {
        let npts = self.grid.npts();
        &mut self.data[c * npts..(c + 1) * npts]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Volume element of the current representation.
    pub fn cell(&self) -> f64 {
        match self.rep {
            Representation::Momentum => self.grid.momentum_cell(),
            Representation::Position => self.grid.position_cell(),
        }
    }

    /// Squared norm with the grid measure. Compensated summation keeps the
    /// result deterministic and accurate on large grids.
    pub fn norm2(&self) -> f64 {
        let mut sum = KahanSum::default();
        for v in &self.data {
            sum.add(v.norm_sqr());
        }
        sum.value() * self.cell()
    }

    /// Inner product <self|other> with the grid measure.
    pub fn overlap(&self, other: &Self) -> C64 {
        assert_eq!(self.rep, other.rep);
        assert_eq!(self.data.len(), other.data.len());
        let mut re = KahanSum::default();
        let mut im = KahanSum::default();
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let z = a.conj() * b;
            re.add(z.re);
            im.add(z.im);
        }
        C64::new(re.value(), im.value()) * self.cell()
    }

    pub fn scale(&mut self, s: C64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Population of internal component c (not renormalized).
    pub fn population(&self, c: usize) -> f64 {
        let mut sum = KahanSum::default();
        for v in self.component(c) {
            sum.add(v.norm_sqr());
        }
        sum.value() * self.cell()
    }

    /// Mean of the quadrature coordinate along mode axis k in the current
    /// representation (momentum rep gives <P_k>, position rep <X_k>),
    /// normalized by the current norm.
    pub fn mean_coordinate(&self, k: usize) -> f64 {
        let n = self.grid.n();
        let coord = |i1: usize, i2: usize| -> f64 {
            let j = if k == 0 { i1 } else { i2 };
            match self.rep {
                Representation::Momentum => self.grid.p(k, j),
                Representation::Position => self.grid.x(k, j),
            }
        };
        let mut num = KahanSum::default();
        let mut den = KahanSum::default();
        let npts = self.grid.npts();
        for c in 0..self.dim {
            let comp = &self.data[c * npts..(c + 1) * npts];
            if self.grid.n_modes() == 1 {
                for (i1, v) in comp.iter().enumerate() {
                    let w = v.norm_sqr();
                    num.add(w * coord(i1, 0));
                    den.add(w);
                }
            } else {
                for i2 in 0..n {
                    for i1 in 0..n {
                        let w = comp[i2 * n + i1].norm_sqr();
                        num.add(w * coord(i1, i2));
                        den.add(w);
                    }
                }
            }
        }
        num.value() / den.value()
    }

    /// Probability mass within `cells` grid cells of any boundary of the
    /// current representation's box, normalized by the current norm.
    pub fn boundary_mass(&self, cells: usize) -> f64 {
        let n = self.grid.n();
        let near = |i: usize| i < cells || i >= n - cells;
        let mut edge = KahanSum::default();
        let mut total = KahanSum::default();
        let npts = self.grid.npts();
        for c in 0..self.dim {
            let comp = &self.data[c * npts..(c + 1) * npts];
            if self.grid.n_modes() == 1 {
                for (i1, v) in comp.iter().enumerate() {
                    let w = v.norm_sqr();
                    total.add(w);
                    if near(i1) {
                        edge.add(w);
                    }
                }
            } else {
                for i2 in 0..n {
                    for i1 in 0..n {
                        let w = comp[i2 * n + i1].norm_sqr();
                        total.add(w);
                        if near(i1) || near(i2) {
                            edge.add(w);
                        }
                    }
                }
            }
        }
        edge.value() / total.value()
    }

    /// Move to the target representation (no-op when already there).
    ///
    /// Lines transform independently (second axis via transpose), so the
    /// result is identical for any rayon thread count.
    pub fn set_representation(&mut self, target: Representation, fft: &FftCache) {
        if self.rep == target {
            return;
        }
        assert_eq!(fft.n, self.grid.n(), "FFT cache planned for a different grid");
        let to_position = target == Representation::Position;
        let n = self.grid.n();
        let npts = self.grid.npts();
        let n_modes = self.grid.n_modes();
        let plan = if to_position { &fft.inverse } else { &fft.forward };
        let scratch_len = plan.get_inplace_scratch_len();
        for c in 0..self.dim {
            let comp = &mut self.data[c * npts..(c + 1) * npts];
            for axis in 0..n_modes {
                let scale = if to_position {
                    self.grid.dp(axis) / (2.0 * std::f64::consts::PI).sqrt()
                } else {
                    self.grid.dx(axis) / (2.0 * std::f64::consts::PI).sqrt()
                };
                if axis == 1 {
                    transpose_square(comp, n);
                }
                comp.par_chunks_mut(n).for_each_init(
                    || vec![Z0; scratch_len],
                    |scratch, row| transform_line(row, plan, scale, scratch),
                );
                if axis == 1 {
                    transpose_square(comp, n);
                }
            }
        }
        self.rep = target;
    }
}

fn transpose_square(m: &mut [C64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            m.swap(i * n + j, j * n + i);
        }
    }
}

impl SpinorField {
    /// Apply an internal-space matrix pointwise: psi -> m psi.
    pub fn apply_internal(&mut self, m: &crate::model::InternalMatrix) {
        assert_eq!(m.dim(), self.dim);
        let npts = self.grid.npts();
        match self.dim {
            2 => {
                let (c0, c1) = self.data.split_at_mut(npts);
                for i in 0..npts {
                    let w = m.mul_vec(&[c0[i], c1[i], Z0]);
                    c0[i] = w[0];
                    c1[i] = w[1];
                }
            }
            3 => {
                let (c0, rest) = self.data.split_at_mut(npts);
                let (c1, c2) = rest.split_at_mut(npts);
                for i in 0..npts {
                    let w = m.mul_vec(&[c0[i], c1[i], c2[i]]);
                    c0[i] = w[0];
                    c1[i] = w[1];
                    c2[i] = w[2];
                }
            }
            _ => unreachable!(),
        }
    }
}

/// One centered-grid transform: alternate-sign pre/post factors fold the
/// half-grid offsets into a plain DFT (exact because n % 4 == 0).
fn transform_line(line: &mut [C64], plan: &Arc<dyn Fft<f64>>, scale: f64, scratch: &mut [C64]) {
    for (j, v) in line.iter_mut().enumerate() {
        if j % 2 == 1 {
            *v = -*v;
        }
    }
    plan.process_with_scratch(line, scratch);
    for (m, v) in line.iter_mut().enumerate() {
        let s = if m % 2 == 1 { -scale } else { scale };
        *v *= s;
    }
}

/// Compensated (Kahan) accumulator.
#[derive(Clone, Copy, Default)]
struct KahanSum {
    s: f64,
    c: f64,
}

impl KahanSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.s + y;
        self.c = (t - self.s) - y;
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s
    }
}

/// Centered coherent amplitudes of one mode on the momentum axis:
/// pi^(-1/4) exp(-i x0 p) exp(-(p - p0)^2 / 2), later grid-normalized.
fn coherent_line(grid: &QuadratureGrid, k: usize, x0: f64, p0: f64) -> Vec<C64> {
    let n = grid.n();
    let norm = std::f64::consts::PI.powf(-0.25);
    (0..n)
        .map(|j| {
            let p = grid.p(k, j);
            let gauss = (-0.5 * (p - p0) * (p - p0)).exp();
            C64::from_polar(norm * gauss, -x0 * p)
        })
        .collect()
}

/// Product state: coherent wavepackets `modes[k] = (x0_k, p0_k)` in each
/// mode and the given internal amplitudes, grid-normalized to norm one.
pub fn coherent_spinor(
    grid: QuadratureGrid,
    modes: &[(f64, f64)],
    atom: &[C64],
) -> Result<SpinorField, FieldError> {
    if modes.len() != grid.n_modes() {
        return Err(FieldError::ModeCount { expected: grid.n_modes(), got: modes.len() });
    }
    let atom_norm: f64 = atom.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if atom_norm <= 0.0 {
        return Err(FieldError::ZeroAtom);
    }
    let mut field = SpinorField::zeros(grid, atom.len(), Representation::Momentum)?;
    let lines: Vec<Vec<C64>> = modes
        .iter()
        .enumerate()
        .map(|(k, &(x0, p0))| coherent_line(&grid, k, x0, p0))
        .collect();
    let n = grid.n();
    for c in 0..atom.len() {
        let a = atom[c] / atom_norm;
        let comp = field.component_mut(c);
        if grid.n_modes() == 1 {
            for (i1, v) in comp.iter_mut().enumerate() {
                *v = a * lines[0][i1];
            }
        } else {
            for i2 in 0..n {
                for i1 in 0..n {
                    comp[i2 * n + i1] = a * lines[0][i1] * lines[1][i2];
                }
            }
        }
    }
    let norm = field.norm2().sqrt();
    field.scale(C64::new(1.0 / norm, 0.0));
    Ok(field)
}

//! Model definitions: the three cavity models, their internal-space coupling
//! matrices, adiabatic potential surfaces, and the induced gauge structure.
//!
//! Conventions fixed here and relied on everywhere else:
//! - internal basis order is (|1>, |2>) or (|1>, |2>, |3>), index 0 first;
//! - sigma_z = |2><2| - |1><1|, i.e. diag(-1, +1) in storage order;
//! - all frequencies are angular, in rad/ns; lab frequencies quoted in GHz
//!   convert via [`angular_from_ghz`];
//! - hbar = 1 throughout.

use num_complex::Complex64;
use thiserror::Error;

use crate::C64;

/// 2*pi * f, taking a lab frequency in GHz to rad/ns.
pub fn angular_from_ghz(f_ghz: f64) -> f64 {
    std::f64::consts::TAU * f_ghz
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("matrix is not unitary (max |u^+ u - 1| = {residual:.3e})")]
    NotUnitary { residual: f64 },
    #[error("surfaces are globally degenerate; no intersection structure to classify")]
    GlobalDegeneracy,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Small dense internal-space matrices (dim 2 or 3).
// ---------------------------------------------------------------------------

/// Complex matrix on the atomic (internal) space, dimension 2 or 3.
///
/// Fixed 3x3 backing storage; entries at or beyond `dim` stay zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InternalMatrix {
    dim: usize,
    m: [[C64; 3]; 3],
}

const Z0: C64 = Complex64::new(0.0, 0.0);

impl InternalMatrix {
    pub fn zero(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "internal dimension must be 2 or 3");
        Self { dim, m: [[Z0; 3]; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zero(dim);
        for i in 0..dim {
            out.m[i][i] = C64::new(1.0, 0.0);
        }
        out
    }

    pub fn from_rows(dim: usize, rows: &[[C64; 3]]) -> Self {
        let mut out = Self::zero(dim);
        for (i, row) in rows.iter().enumerate().take(dim) {
            out.m[i][..dim].copy_from_slice(&row[..dim]);
        }
        out
    }

    /// Real diagonal matrix.
    pub fn diagonal(dim: usize, d: &[f64]) -> Self {
        let mut out = Self::zero(dim);
        for i in 0..dim {
            out.m[i][i] = C64::new(d[i], 0.0);
        }
        out
    }

    /// |j><j| projector.
    pub fn projector(dim: usize, j: usize) -> Self {
        let mut out = Self::zero(dim);
        out.m[j][j] = C64::new(1.0, 0.0);
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.m[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i < self.dim && j < self.dim);
        self.m[i][j] = v;
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] *= s;
            }
        }
        out
    }

    pub fn scaled_re(&self, s: f64) -> Self {
        self.scaled(C64::new(s, 0.0))
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] = self.m[j][i].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.m[i][i]).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                best = best.max(self.m[i][j].norm());
            }
        }
        best
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let mut dev = 0.0_f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                dev = dev.max((self.m[i][j] - self.m[j][i].conj()).norm());
            }
        }
        dev <= tol
    }

    /// max |(self - other)_ij|.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut dev = 0.0_f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                dev = dev.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        dev
    }

    pub fn commutator(a: &Self, b: &Self) -> Self {
        &(a * b) - &(b * a)
    }

    /// Apply to a spinor held in a fixed-size buffer (first `dim` entries).
    #[inline]
    pub fn mul_vec(&self, v: &[C64; 3]) -> [C64; 3] {
        let mut out = [Z0; 3];
        for i in 0..self.dim {
            let mut acc = Z0;
            for j in 0..self.dim {
                acc += self.m[i][j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// max |u^+ u - 1|; zero for exactly unitary input.
    pub fn unitarity_residual(&self) -> f64 {
        let prod = &self.adjoint() * self;
        prod.max_abs_diff(&Self::identity(self.dim))
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
    /// rotations. Returns eigenvalues ascending and the unitary of column
    /// eigenvectors in the same order. Deterministic.
    pub fn eigh(&self) -> ([f64; 3], InternalMatrix) {
        let n = self.dim;
        let scale = self.max_abs().max(1e-300);
        let mut a = *self;
        let mut v = Self::identity(n);
        // A 3x3 Jacobi converges quadratically; 20 sweeps is far beyond need.
        for _sweep in 0..20 {
            let mut off = 0.0_f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(a.m[p][q].norm());
                }
            }
            if off <= 1e-16 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.m[p][q];
                    let mag = apq.norm();
                    if mag <= 1e-18 * scale {
                        continue;
                    }
                    // Phase removal then a real Jacobi rotation on (p, q).
                    let phase = apq / mag;
                    let app = a.m[p][p].re;
                    let aqq = a.m[q][q].re;
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let mut j = Self::identity(n);
                    j.m[p][p] = C64::new(c, 0.0);
                    j.m[q][q] = C64::new(c, 0.0);
                    j.m[p][q] = phase * s;
                    j.m[q][p] = -phase.conj() * s;
                    a = &(&j.adjoint() * &a) * &j;
                    v = &v * &j;
                }
            }
        }
        let mut vals = [0.0_f64; 3];
        for i in 0..n {
            vals[i] = a.m[i][i].re;
        }
        // Sort ascending, permuting eigenvector columns alongside.
        let mut order = [0usize, 1, 2];
        order[..n].sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
        let mut svals = [0.0_f64; 3];
        let mut svecs = Self::zero(n);
        for (col, &src) in order[..n].iter().enumerate() {
            svals[col] = vals[src];
            for row in 0..n {
                svecs.m[row][col] = v.m[row][src];
            }
        }
        (svals, svecs)
    }
}

impl std::ops::Add for &InternalMatrix {
    type Output = InternalMatrix;
    fn add(self, rhs: &InternalMatrix) -> InternalMatrix {
        assert_eq!(self.dim, rhs.dim);
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] += rhs.m[i][j];
            }
        }
        out
    }
}

impl std::ops::Sub for &InternalMatrix {
    type Output = InternalMatrix;
    fn sub(self, rhs: &InternalMatrix) -> InternalMatrix {
        assert_eq!(self.dim, rhs.dim);
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] -= rhs.m[i][j];
            }
        }
        out
    }
}

impl std::ops::Mul for &InternalMatrix {
    type Output = InternalMatrix;
    fn mul(self, rhs: &InternalMatrix) -> InternalMatrix {
        assert_eq!(self.dim, rhs.dim);
        let mut out = InternalMatrix::zero(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut acc = Z0;
                for k in 0..self.dim {
                    acc += self.m[i][k] * rhs.m[k][j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }
}

/// sigma_x = |2><1| + |1><2|.
pub fn sigma_x() -> InternalMatrix {
    let one = C64::new(1.0, 0.0);
    InternalMatrix::from_rows(2, &[[Z0, one, Z0], [one, Z0, Z0]])
}

/// sigma_y = -i|2><1| + i|1><2|.
pub fn sigma_y() -> InternalMatrix {
    let i = C64::new(0.0, 1.0);
    InternalMatrix::from_rows(2, &[[Z0, i, Z0], [-i, Z0, Z0]])
}

/// sigma_z = |2><2| - |1><1|, diag(-1, +1) in storage order.
pub fn sigma_z() -> InternalMatrix {
    InternalMatrix::diagonal(2, &[-1.0, 1.0])
}

/// lambda_2 = -i|1><2| + i|2><1|.
pub fn lambda_2() -> InternalMatrix {
    let i = C64::new(0.0, 1.0);
    let mut out = InternalMatrix::zero(3);
    out.set(0, 1, -i);
    out.set(1, 0, i);
    out
}

/// lambda_4 = |3><1| + |1><3|.
pub fn lambda_4() -> InternalMatrix {
    let one = C64::new(1.0, 0.0);
    let mut out = InternalMatrix::zero(3);
    out.set(0, 2, one);
    out.set(2, 0, one);
    out
}

/// lambda_6 = |3><2| + |2><3|.
pub fn lambda_6() -> InternalMatrix {
    let one = C64::new(1.0, 0.0);
    let mut out = InternalMatrix::zero(3);
    out.set(1, 2, one);
    out.set(2, 1, one);
    out
}

/// lambda_8 = (|1><1| + |2><2| - 2|3><3|) / sqrt(3).
pub fn lambda_8() -> InternalMatrix {
    let s = 1.0 / 3.0_f64.sqrt();
    InternalMatrix::diagonal(3, &[s, s, -2.0 * s])
}

// ---------------------------------------------------------------------------
// Model specification.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// One mode, two-level atom, sigma_x coupling.
    Rabi,
    /// Two degenerate modes, two-level atom, (sigma_x, sigma_y) coupling.
    BimodalRabi,
    /// Two degenerate modes, three-level atom in a Lambda configuration.
    BimodalLambda,
}

/// Physical parameters of one model instance. All rates in rad/ns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Mode angular frequency omega (> 0); both modes degenerate.
    pub omega: f64,
    /// Two-level splitting Omega; ignored by the Lambda model.
    pub splitting: f64,
    /// Lambda level energies (E1, E2, E3); ignored by two-level models.
    pub levels: [f64; 3],
    /// Atom-field coupling g >= 0.
    pub g: f64,
    /// Cavity decay kappa >= 0 (per mode, equal).
    pub kappa: f64,
    /// Atomic decay gamma >= 0 from the uppermost internal state.
    pub gamma: f64,
}

impl ModelSpec {
    pub fn rabi(omega: f64, splitting: f64, g: f64) -> Result<Self, ModelError> {
        Self::new(ModelKind::Rabi, omega, splitting, [0.0; 3], g)
    }

    pub fn bimodal_rabi(omega: f64, splitting: f64, g: f64) -> Result<Self, ModelError> {
        Self::new(ModelKind::BimodalRabi, omega, splitting, [0.0; 3], g)
    }

    pub fn bimodal_lambda(omega: f64, levels: [f64; 3], g: f64) -> Result<Self, ModelError> {
        Self::new(ModelKind::BimodalLambda, omega, 0.0, levels, g)
    }

    fn new(
        kind: ModelKind,
        omega: f64,
        splitting: f64,
        levels: [f64; 3],
        g: f64,
    ) -> Result<Self, ModelError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(ModelError::InvalidParameter { name: "omega", value: omega });
        }
        if !(g.is_finite() && g >= 0.0) {
            return Err(ModelError::InvalidParameter { name: "g", value: g });
        }
        if !splitting.is_finite() {
            return Err(ModelError::InvalidParameter { name: "splitting", value: splitting });
        }
        for (i, e) in levels.iter().enumerate() {
            if !e.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name: ["e1", "e2", "e3"][i],
                    value: *e,
                });
            }
        }
        Ok(Self { kind, omega, splitting, levels, g, kappa: 0.0, gamma: 0.0 })
    }

    pub fn with_losses(mut self, kappa: f64, gamma: f64) -> Result<Self, ModelError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(ModelError::InvalidParameter { name: "kappa", value: kappa });
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(ModelError::InvalidParameter { name: "gamma", value: gamma });
        }
        self.kappa = kappa;
        self.gamma = gamma;
        Ok(self)
    }

    pub fn n_modes(&self) -> usize {
        match self.kind {
            ModelKind::Rabi => 1,
            ModelKind::BimodalRabi | ModelKind::BimodalLambda => 2,
        }
    }

    pub fn internal_dim(&self) -> usize {
        match self.kind {
            ModelKind::Rabi | ModelKind::BimodalRabi => 2,
            ModelKind::BimodalLambda => 3,
        }
    }

    pub fn lossy(&self) -> bool {
        self.kappa > 0.0 || self.gamma > 0.0
    }

    /// Bare atomic term: (Omega/2) sigma_z, or diag(E1, E2, E3).
    pub fn bare_atomic(&self) -> InternalMatrix {
        match self.kind {
            ModelKind::Rabi | ModelKind::BimodalRabi => {
                sigma_z().scaled_re(0.5 * self.splitting)
            }
            ModelKind::BimodalLambda => InternalMatrix::diagonal(3, &self.levels),
        }
    }

    /// Momentum-diagonal internal matrix: atomic term plus coupling at the
    /// quadrature point (p1, p2). p2 is ignored for the single-mode model.
    pub fn coupling_matrix(&self, p1: f64, p2: f64) -> InternalMatrix {
        let mut m = self.bare_atomic();
        match self.kind {
            ModelKind::Rabi => {
                m = &m - &sigma_x().scaled_re(self.g * p1);
            }
            ModelKind::BimodalRabi => {
                m = &m - &(&sigma_x().scaled_re(self.g * p1) + &sigma_y().scaled_re(self.g * p2));
            }
            ModelKind::BimodalLambda => {
                m = &m - &(&lambda_4().scaled_re(self.g * p1) + &lambda_6().scaled_re(self.g * p2));
            }
        }
        m
    }

    /// Projector receiving the gamma decay: the uppermost internal state.
    pub fn decay_projector(&self) -> InternalMatrix {
        InternalMatrix::projector(self.internal_dim(), self.internal_dim() - 1)
    }

    /// Adiabatic potential surfaces at (p1, p2), ascending:
    /// eigenvalues of the coupling matrix plus omega r^2 / 2.
    pub fn adiabatic_surfaces(&self, p1: f64, p2: f64) -> Vec<f64> {
        let r2 = if self.n_modes() == 2 { p1 * p1 + p2 * p2 } else { p1 * p1 };
        let kin = 0.5 * self.omega * r2;
        let (vals, _) = self.coupling_matrix(p1, p2).eigh();
        (0..self.internal_dim()).map(|i| vals[i] + kin).collect()
    }
}

/// Closed-form two-level surfaces omega r^2/2 -+ sqrt(Omega^2/4 + g^2 r^2);
/// None for the Lambda model.
pub fn closed_form_surfaces(spec: &ModelSpec, p1: f64, p2: f64) -> Option<[f64; 2]> {
    match spec.kind {
        ModelKind::BimodalLambda => None,
        ModelKind::Rabi | ModelKind::BimodalRabi => {
            let r2 = if spec.n_modes() == 2 { p1 * p1 + p2 * p2 } else { p1 * p1 };
            let kin = 0.5 * spec.omega * r2;
            let root = (0.25 * spec.splitting * spec.splitting + spec.g * spec.g * r2).sqrt();
            Some([kin - root, kin + root])
        }
    }
}

// ---------------------------------------------------------------------------
// Gauge structure.
// ---------------------------------------------------------------------------

/// Vector potential components A_k and scalar potential Phi, in the frame
/// where the coupling is written as omega/2 * sum_k (P_k - A_k)^2.
#[derive(Clone, Debug)]
pub struct GaugeData {
    pub a: Vec<InternalMatrix>,
    pub phi: InternalMatrix,
}

/// Gauge potentials of the model. Phi is fixed by completion of squares,
/// Phi = -omega/2 * sum_k A_k^2, so that [`verify_gauge_decomposition`]
/// vanishes identically.
pub fn gauge_potentials(spec: &ModelSpec) -> GaugeData {
    let s = spec.g / spec.omega;
    let a: Vec<InternalMatrix> = match spec.kind {
        ModelKind::Rabi => vec![sigma_x().scaled_re(s)],
        ModelKind::BimodalRabi => vec![sigma_x().scaled_re(s), sigma_y().scaled_re(s)],
        ModelKind::BimodalLambda => vec![lambda_4().scaled_re(s), lambda_6().scaled_re(s)],
    };
    let mut sq = InternalMatrix::zero(spec.internal_dim());
    for ak in &a {
        sq = &sq + &(ak * ak);
    }
    let phi = sq.scaled_re(-0.5 * spec.omega);
    GaugeData { a, phi }
}

/// Alternative scalar potential for the Lambda model in lambda_8 form,
/// (g^2 / 3 omega) (1 - sqrt(3)/2 * lambda_8). It does not complete the
/// square: [`verify_gauge_decomposition_with`] reports a residual of
/// (5/3) g^2 / omega for it. Kept as a comparison constant.
pub fn lambda8_scalar_potential(spec: &ModelSpec) -> Option<InternalMatrix> {
    if spec.kind != ModelKind::BimodalLambda {
        return None;
    }
    let c = spec.g * spec.g / (3.0 * spec.omega);
    let m = &InternalMatrix::identity(3) - &lambda_8().scaled_re(0.5 * 3.0_f64.sqrt());
    Some(m.scaled_re(c))
}

/// Conjugate the gauge data by a constant unitary frame change u:
/// A_k -> u^+ A_k u, Phi -> u^+ Phi u.
pub fn gauge_transform(data: &GaugeData, u: &InternalMatrix) -> Result<GaugeData, ModelError> {
    let residual = u.unitarity_residual();
    if residual > 1e-12 {
        return Err(ModelError::NotUnitary { residual });
    }
    if u.dim() != data.phi.dim() {
        return Err(ModelError::DimensionMismatch { expected: data.phi.dim(), got: u.dim() });
    }
    let ud = u.adjoint();
    Ok(GaugeData {
        a: data.a.iter().map(|ak| &(&ud * ak) * u).collect(),
        phi: &(&ud * &data.phi) * u,
    })
}

/// [A_1, A_2]; the zero matrix for the single-mode model.
pub fn gauge_commutator(spec: &ModelSpec) -> InternalMatrix {
    let pots = gauge_potentials(spec);
    if pots.a.len() < 2 {
        return InternalMatrix::zero(spec.internal_dim());
    }
    InternalMatrix::commutator(&pots.a[0], &pots.a[1])
}

/// True when all gauge potential components commute.
pub fn is_abelian(spec: &ModelSpec) -> bool {
    let scale = (spec.g / spec.omega).powi(2).max(1e-300);
    gauge_commutator(spec).max_abs() <= 1e-14 * scale
}

/// Max-entry residual of
///   omega/2 sum_k (p_k - A_k)^2 + H_atom + Phi  ==  omega r^2/2 + coupling(p)
/// at one quadrature point. Zero (to rounding) for the derived Phi.
pub fn verify_gauge_decomposition(spec: &ModelSpec, p1: f64, p2: f64) -> f64 {
    let pots = gauge_potentials(spec);
    decomposition_residual(spec, &pots.a, &pots.phi, p1, p2)
}

/// Same residual with a caller-supplied scalar potential.
pub fn verify_gauge_decomposition_with(
    spec: &ModelSpec,
    phi: &InternalMatrix,
    p1: f64,
    p2: f64,
) -> f64 {
    let pots = gauge_potentials(spec);
    decomposition_residual(spec, &pots.a, phi, p1, p2)
}

fn decomposition_residual(
    spec: &ModelSpec,
    a: &[InternalMatrix],
    phi: &InternalMatrix,
    p1: f64,
    p2: f64,
) -> f64 {
    let dim = spec.internal_dim();
    let id = InternalMatrix::identity(dim);
    let ps = [p1, p2];
    let mut lhs = &spec.bare_atomic() + phi;
    for (k, ak) in a.iter().enumerate() {
        let shifted = &id.scaled_re(ps[k]) - ak;
        lhs = &lhs + &(&shifted * &shifted).scaled_re(0.5 * spec.omega);
    }
    let r2 = if spec.n_modes() == 2 { p1 * p1 + p2 * p2 } else { p1 * p1 };
    let rhs = &id.scaled_re(0.5 * spec.omega * r2) + &spec.coupling_matrix(p1, p2);
    lhs.max_abs_diff(&rhs)
}

// ---------------------------------------------------------------------------
// Lower-surface shape (sombrero analysis).
// ---------------------------------------------------------------------------

/// Radial structure of the lowest adiabatic surface.
#[derive(Clone, Copy, Debug)]
pub struct SombreroReport {
    /// True when the minimum sits off the origin (r_min > 1e-8).
    pub present: bool,
    /// Radius of the global minimum of the lowest surface.
    pub r_min: f64,
    /// V_low(0) - V_low(r_min) >= 0.
    pub depth: f64,
    /// Critical coupling sqrt(omega * Omega / 2); the numeric minimum moves
    /// off the origin exactly when g exceeds this.
    pub g_threshold: f64,
    /// The sqrt(omega * Omega) variant of the threshold, a factor sqrt(2)
    /// higher; reported alongside for comparison since both forms are in
    /// circulation. The minimizer follows `g_threshold`.
    pub g_threshold_alt: f64,
}

/// Locate the minimum of the lowest adiabatic surface along radial rays.
///
/// Two-level surfaces are rotation invariant so a single ray suffices;
/// for the Lambda model with split levels the scan covers 16 azimuths and
/// keeps the deepest minimum.
pub fn sombrero_analysis(spec: &ModelSpec) -> SombreroReport {
    let atom_scale = match spec.kind {
        ModelKind::BimodalLambda => spec
            .levels
            .iter()
            .fold(0.0_f64, |acc, e| acc.max(e.abs())),
        _ => spec.splitting.abs(),
    };
    let r_hi = 2.0 * spec.g / spec.omega + 2.0 * (atom_scale / spec.omega).sqrt() + 2.0;
    let isotropic = spec.kind != ModelKind::BimodalLambda
        || (spec.levels[0] - spec.levels[1]).abs() < 1e-14;
    let azimuths = if isotropic { 1 } else { 16 };
    let mut best = (f64::INFINITY, 0.0_f64);
    for k in 0..azimuths {
        let phi = std::f64::consts::TAU * k as f64 / azimuths as f64;
        let (c, s) = (phi.cos(), phi.sin());
        let low = |r: f64| spec.adiabatic_surfaces(r * c, r * s)[0];
        let r = golden_min(low, 0.0, r_hi);
        let v = low(r);
        if v < best.0 {
            best = (v, r);
        }
    }
    let v0 = spec.adiabatic_surfaces(0.0, 0.0)[0];
    // Golden section stalls where the surface is flat to machine precision,
    // so claim an off-origin minimum only on strict evidence.
    if v0 <= best.0 {
        best = (v0, 0.0);
    }
    let r_min = best.1;
    SombreroReport {
        present: r_min > 1e-8,
        r_min,
        depth: (v0 - best.0).max(0.0),
        g_threshold: (0.5 * spec.omega * spec.splitting.abs()).sqrt(),
        g_threshold_alt: (spec.omega * spec.splitting.abs()).sqrt(),
    }
}

/// Golden-section minimum of f on [a, b] to ~1e-12 absolute in the argument.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

// ---------------------------------------------------------------------------
// Intersection classification.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntersectionKind {
    /// Gap opens linearly from a point degeneracy.
    Conical,
    /// Gap opens quadratically (glancing surfaces).
    RennerTeller,
    /// Gap never closes.
    Avoided,
    /// Pair of off-origin conical points (Lambda model with E1 != E2).
    SplitConical,
}

/// Least-squares gap fit gap(s) = c0 + c1 s + c2 s^2 for one adjacent pair.
#[derive(Clone, Copy, Debug)]
pub struct PairGapFit {
    /// Index of the lower surface of the pair.
    pub lower: usize,
    /// Minimum-gap point the fit was taken from.
    pub location: (f64, f64),
    pub c: [f64; 3],
    pub kind: IntersectionKind,
}

#[derive(Clone, Debug)]
pub struct IntersectionReport {
    /// Classification of the most nearly degenerate adjacent pair
    /// (SplitConical when the Lambda levels are split and off-origin
    /// degeneracies exist).
    pub kind: IntersectionKind,
    pub location: (f64, f64),
    pub pairs: Vec<PairGapFit>,
}

/// Classify the touching structure of the adiabatic surfaces.
///
/// For each adjacent pair the minimum-gap point is located by a polar scan
/// plus golden-section refinement, and the gap along a ray from that point
/// is fit to c0 + c1 s + c2 s^2. Thresholds: tol = 1e-8 * max(omega, g,
/// atomic scale, 1).
pub fn classify_intersection(spec: &ModelSpec) -> Result<IntersectionReport, ModelError> {
    let dim = spec.internal_dim();
    let atom_scale = match spec.kind {
        ModelKind::BimodalLambda => spec.levels.iter().fold(0.0_f64, |a, e| a.max(e.abs())),
        _ => spec.splitting.abs(),
    };
    let scale = spec.omega.max(spec.g).max(atom_scale).max(1.0);
    let tol = 1e-8 * scale;

    // Degeneracies of our couplings live within this radius (for the split
    // Lambda model they sit at sqrt((Emax-Emin)(E3-Emin))/g on an axis).
    let r_hi = if spec.g > 0.0 {
        2.0 + 2.0 * (2.0 * atom_scale / spec.g.max(1e-12)).max(atom_scale / spec.omega)
    } else {
        2.0
    };

    let gap = |pair: usize, p1: f64, p2: f64| -> f64 {
        let v = spec.adiabatic_surfaces(p1, p2);
        v[pair + 1] - v[pair]
    };

    let mut pairs = Vec::new();
    let mut global_max_gap = 0.0_f64;
    for pair in 0..dim - 1 {
        // Coarse polar scan for the minimum-gap point.
        let n_r = 481;
        let n_phi = 32;
        let mut best = (f64::INFINITY, 0.0_f64, 0.0_f64);
        for iphi in 0..n_phi {
            let phi = std::f64::consts::TAU * iphi as f64 / n_phi as f64;
            let (cph, sph) = (phi.cos(), phi.sin());
            for ir in 0..n_r {
                let r = r_hi * ir as f64 / (n_r - 1) as f64;
                let gp = gap(pair, r * cph, r * sph);
                global_max_gap = global_max_gap.max(gp);
                if gp < best.0 {
                    best = (gp, r, phi);
                }
            }
        }
        // Refine radially at the best azimuth.
        let (_, r0, phi0) = best;
        let (cph, sph) = (phi0.cos(), phi0.sin());
        let dr = r_hi / (n_r - 1) as f64;
        let rstar = golden_min(
            |r| gap(pair, r * cph, r * sph),
            (r0 - dr).max(0.0),
            (r0 + dr).min(r_hi),
        );
        let loc = (rstar * cph, rstar * sph);

        // Fit the gap along a ray leaving the minimum-gap point. Away from
        // the origin the outward radial direction is the generic one. The
        // span is kept small: a one-sided fit of an even gap leaks its
        // quartic term into c1 at ~(span)^3, which must stay below tol.
        let dir = if rstar > 1e-9 { (cph, sph) } else { (1.0, 0.0) };
        let h = 1e-4;
        let samples: Vec<(f64, f64)> = (0..=12)
            .map(|j| {
                let s = j as f64 * h;
                (s, gap(pair, loc.0 + s * dir.0, loc.1 + s * dir.1))
            })
            .collect();
        let c = quadratic_fit(&samples);
        let kind = if c[0] > tol {
            IntersectionKind::Avoided
        } else if c[1] > tol {
            IntersectionKind::Conical
        } else {
            IntersectionKind::RennerTeller
        };
        pairs.push(PairGapFit { lower: pair, location: loc, c, kind });
    }

    if global_max_gap < 1e-14 * scale {
        return Err(ModelError::GlobalDegeneracy);
    }

    // Headline: the most nearly touching pair; canonicalize the reported
    // point of a split pair to non-negative coordinates (they come in +- pairs).
    let head = pairs
        .iter()
        .min_by(|a, b| a.c[0].partial_cmp(&b.c[0]).unwrap())
        .expect("at least one adjacent pair");
    let mut kind = head.kind;
    let mut location = head.location;
    if spec.kind == ModelKind::BimodalLambda
        && (spec.levels[0] - spec.levels[1]).abs() > tol
        && kind == IntersectionKind::Conical
        && (location.0.abs() > 1e-6 || location.1.abs() > 1e-6)
    {
        kind = IntersectionKind::SplitConical;
        location = (location.0.abs(), location.1.abs());
    }
    if location.0.abs() < 1e-9 {
        location.0 = 0.0;
    }
    if location.1.abs() < 1e-9 {
        location.1 = 0.0;
    }
    Ok(IntersectionReport { kind, location, pairs })
}

/// Least-squares fit of (s, y) samples to y = c0 + c1 s + c2 s^2.
fn quadratic_fit(samples: &[(f64, f64)]) -> [f64; 3] {
    // Normalize the abscissa to [0, 1] before forming normal equations;
    // without this the system is singular to working precision for small
    // sample spans.
    let smax = samples
        .iter()
        .fold(0.0_f64, |acc, &(s, _)| acc.max(s.abs()))
        .max(1e-300);
    let mut ata = [[0.0_f64; 3]; 3];
    let mut aty = [0.0_f64; 3];
    for &(s, y) in samples {
        let u = s / smax;
        let row = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            aty[i] += row[i] * y;
        }
    }
    let b = solve3(ata, aty);
    [b[0], b[1] / smax, b[2] / (smax * smax)]
}

/// Gaussian elimination with partial pivoting for a 3x3 real system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0_f64; 3];
    for col in (0..3).rev() {
        let mut acc = b[col];
        for k in col + 1..3 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x
}

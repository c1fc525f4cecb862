//! Geometry of the adiabatic surfaces: fixed-gauge eigenframes of the
//! coupling matrix over the quadrature plane, Berry connections, and Wilson
//! loops computed as path-ordered overlap products.
//!
//! The gauge is fixed pointwise (largest-modulus component real positive),
//! which is piecewise smooth: the switching set where the largest component
//! changes identity is measure zero, and the holonomy is insensitive to it
//! because every interior phase enters one overlap conjugated and the next
//! one plain.

use ndarray::Array2;
use thiserror::Error;

use crate::model::{InternalMatrix, ModelSpec};
use crate::C64;

/// A frame is rejected closer to a degeneracy than this (relative to the
/// coupling scale); eigenvectors stop meaning anything there.
pub const FRAME_GAP_FLOOR: f64 = 1e-12;

/// Loops are rejected if any sampled point has an adjacent-surface gap
/// below this, in absolute units. Parallel transport across a near-crossing
/// is not adiabatic, so the result would be discretization noise.
pub const LOOP_GAP_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GaugeError {
    #[error("surfaces degenerate at ({p1}, {p2}): gap {gap:.3e}")]
    Degenerate { p1: f64, p2: f64, gap: f64 },
    #[error("loop passes within {gap:.3e} of a surface crossing at angle {theta:.4}")]
    LoopNearDegeneracy { theta: f64, gap: f64 },
    #[error("band order changes near angle {theta:.4} rad; refine the loop or widen the band set")]
    BandCrossing { theta: f64 },
    #[error("invalid loop: {reason}")]
    InvalidLoop { reason: &'static str },
}

/// Closed circular path in the quadrature plane and the surfaces to
/// transport around it. `reversed` traverses clockwise, conjugating the
/// holonomy.
#[derive(Clone, Debug)]
pub struct LoopSpec {
    pub center: (f64, f64),
    pub radius: f64,
    pub n_segments: usize,
    pub bands: Vec<usize>,
    pub reversed: bool,
}

/// Holonomy of a loop, reported at the finer of the two discretizations
/// used for the convergence estimate ||U(2n) - U(n)||_F.
#[derive(Clone, Debug)]
pub struct WilsonLoopResult {
    pub holonomy: Array2<C64>,
    pub discretization: usize,
    pub convergence_estimate: f64,
}

/// Eigenframe of the coupling matrix at one point, columns ascending in
/// eigenvalue, each column's largest-modulus component made real positive
/// (ties broken toward the lowest index).
pub fn adiabatic_frame(spec: &ModelSpec, p1: f64, p2: f64) -> Result<InternalMatrix, GaugeError> {
    let coupling = spec.coupling_matrix(p1, p2);
    let scale = coupling.max_abs().max(1.0);
    let (evals, mut vecs) = coupling.eigh();
    let dim = spec.internal_dim();
    for j in 1..dim {
        let gap = evals[j] - evals[j - 1];
        if gap <= FRAME_GAP_FLOOR * scale {
            return Err(GaugeError::Degenerate { p1, p2, gap });
        }
    }
    fix_phases(&mut vecs, dim);
    Ok(vecs)
}

fn fix_phases(frame: &mut InternalMatrix, dim: usize) {
    for col in 0..dim {
        let mut best = 0;
        let mut best_mod = 0.0_f64;
        for row in 0..dim {
            let m = frame.at(row, col).norm();
            if m > best_mod * (1.0 + 1e-9) {
                best = row;
                best_mod = m;
            }
        }
        let pivot = frame.at(best, col);
        let phase = pivot / pivot.norm();
        for row in 0..dim {
            let v = frame.at(row, col) / phase;
            frame.set(row, col, v);
        }
    }
}

/// Berry connection components A_1, A_2 at one point: anti-Hermitian
/// matrices over the surfaces, A_k[n, m] = <n(p) | d/dp_k m(p)>, from
/// central differences with step `dp` in the fixed gauge. Meaningful away
/// from the gauge's switching set.
pub fn berry_connection(
    spec: &ModelSpec,
    p1: f64,
    p2: f64,
    dp: f64,
) -> Result<[Array2<C64>; 2], GaugeError> {
    assert!(dp.is_finite() && dp > 0.0, "difference step must be positive");
    let dim = spec.internal_dim();
    let center = adiabatic_frame(spec, p1, p2)?;
    let stencil = [
        (adiabatic_frame(spec, p1 + dp, p2)?, adiabatic_frame(spec, p1 - dp, p2)?),
        (adiabatic_frame(spec, p1, p2 + dp)?, adiabatic_frame(spec, p1, p2 - dp)?),
    ];
    let mut out = [Array2::zeros((dim, dim)), Array2::zeros((dim, dim))];
    for (k, (plus, minus)) in stencil.iter().enumerate() {
        let mut a: Array2<C64> = Array2::zeros((dim, dim));
        for n in 0..dim {
            for m in 0..dim {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..dim {
                    acc += center.at(j, n).conj() * (plus.at(j, m) - minus.at(j, m));
                }
                a[(n, m)] = acc / (2.0 * dp);
            }
        }
        // Exact connections are anti-Hermitian; the projection removes the
        // O(dp^2) symmetric residue of the finite difference.
        for n in 0..dim {
            for m in 0..dim {
                out[k][(n, m)] = 0.5 * (a[(n, m)] - a[(m, n)].conj());
            }
        }
    }
    Ok(out)
}

/// Holonomy of the bands around the loop by the overlap-product method,
/// computed at `n_segments` and `2 * n_segments` points; the finer result
/// is returned together with the distance between the two.
pub fn wilson_loop(spec: &ModelSpec, loop_spec: &LoopSpec) -> Result<WilsonLoopResult, GaugeError> {
    validate_loop(spec, loop_spec)?;
    let coarse = holonomy_at(spec, loop_spec, loop_spec.n_segments)?;
    let fine = holonomy_at(spec, loop_spec, 2 * loop_spec.n_segments)?;
    let convergence_estimate = frob_distance(&fine, &coarse);
    Ok(WilsonLoopResult {
        holonomy: fine,
        discretization: 2 * loop_spec.n_segments,
        convergence_estimate,
    })
}

fn validate_loop(spec: &ModelSpec, loop_spec: &LoopSpec) -> Result<(), GaugeError> {
    if !(loop_spec.radius.is_finite() && loop_spec.radius > 0.0) {
        return Err(GaugeError::InvalidLoop { reason: "radius must be positive" });
    }
    if !(loop_spec.center.0.is_finite() && loop_spec.center.1.is_finite()) {
        return Err(GaugeError::InvalidLoop { reason: "center must be finite" });
    }
    if loop_spec.n_segments < 8 {
        return Err(GaugeError::InvalidLoop { reason: "need at least 8 segments" });
    }
    let dim = spec.internal_dim();
    if loop_spec.bands.is_empty() {
        return Err(GaugeError::InvalidLoop { reason: "band set is empty" });
    }
    let mut seen = [false; 3];
    for &b in &loop_spec.bands {
        if b >= dim {
            return Err(GaugeError::InvalidLoop { reason: "band index out of range" });
        }
        if seen[b] {
            return Err(GaugeError::InvalidLoop { reason: "duplicate band index" });
        }
        seen[b] = true;
    }
    Ok(())
}

fn loop_point(loop_spec: &LoopSpec, n: usize, k: usize) -> (f64, f64) {
    let sign = if loop_spec.reversed { -1.0 } else { 1.0 };
    let theta = sign * std::f64::consts::TAU * k as f64 / n as f64;
    (
        loop_spec.center.0 + loop_spec.radius * theta.cos(),
        loop_spec.center.1 + loop_spec.radius * theta.sin(),
    )
}

/// Fixed-gauge frames at n equally spaced loop points, with the start frame
/// repeated at the end so products close exactly.
fn loop_frames(
    spec: &ModelSpec,
    loop_spec: &LoopSpec,
    n: usize,
) -> Result<Vec<InternalMatrix>, GaugeError> {
    let dim = spec.internal_dim();
    let mut frames = Vec::with_capacity(n + 1);
    for k in 0..n {
        let (p1, p2) = loop_point(loop_spec, n, k);
        let coupling = spec.coupling_matrix(p1, p2);
        let (evals, mut vecs) = coupling.eigh();
        for j in 1..dim {
            let gap = evals[j] - evals[j - 1];
            if gap < LOOP_GAP_FLOOR {
                let theta = std::f64::consts::TAU * k as f64 / n as f64;
                return Err(GaugeError::LoopNearDegeneracy { theta, gap });
            }
        }
        fix_phases(&mut vecs, dim);
        frames.push(vecs);
    }
    frames.push(frames[0].clone());
    Ok(frames)
}

/// Path-ordered product of band-restricted overlap matrices
/// M[a, b] = <band_a(k) | band_b(k+1)>. A column losing more than half its
/// mass to bands outside the set means the surface ordering changed between
/// samples.
fn holonomy_product(
    frames: &[InternalMatrix],
    bands: &[usize],
    dim: usize,
) -> Result<Array2<C64>, GaugeError> {
    let d = bands.len();
    let n = frames.len() - 1;
    let mut u = Array2::eye(d);
    for (seg, pair) in frames.windows(2).enumerate() {
        let mut m: Array2<C64> = Array2::zeros((d, d));
        for (a, &ba) in bands.iter().enumerate() {
            for (b, &bb) in bands.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..dim {
                    acc += pair[0].at(j, ba).conj() * pair[1].at(j, bb);
                }
                m[(a, b)] = acc;
            }
        }
        if d < dim {
            for b in 0..d {
                let in_set: f64 = (0..d).map(|a| m[(a, b)].norm_sqr()).sum();
                if in_set < 0.5 {
                    let theta = std::f64::consts::TAU * seg as f64 / n as f64;
                    return Err(GaugeError::BandCrossing { theta });
                }
            }
        }
        u = u.dot(&m);
    }
    Ok(u)
}

fn holonomy_at(
    spec: &ModelSpec,
    loop_spec: &LoopSpec,
    n: usize,
) -> Result<Array2<C64>, GaugeError> {
    let frames = loop_frames(spec, loop_spec, n)?;
    holonomy_product(&frames, &loop_spec.bands, spec.internal_dim())
}

fn frob_distance(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// ||U U^dag - I||_F; bounded by a small multiple of the convergence
/// estimate for a converged loop.
pub fn unitarity_defect(u: &Array2<C64>) -> f64 {
    let d = u.nrows();
    let prod = u.dot(&u.t().mapv(|z| z.conj()));
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let want = if i == j { 1.0 } else { 0.0 };
            acc += (prod[(i, j)] - C64::new(want, 0.0)).norm_sqr();
        }
    }
    acc.sqrt()
}

//! Measurement layer over field snapshots: internal-state populations and
//! inversion, quadrature means, adiabatic-surface populations, marginal
//! densities. Everything is computed from |psi|^2-type weights, so results
//! are real by construction; the cross-checks live in the tests.

use thiserror::Error;

use crate::field::{FftCache, Representation, SpinorField};
use crate::model::ModelSpec;

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error("field has zero norm")]
    ZeroNorm,
    #[error("operation requires the momentum representation")]
    WrongRepresentation,
}

/// One snapshot's worth of scalar observables.
///
/// `w` is the inversion of the first two internal states, p2 - p1; for the
/// three-level model the full population vector is the primary record and
/// `w` keeps the same pairwise meaning.
#[derive(Clone, Debug)]
pub struct ObservableSet {
    pub norm2: f64,
    pub p: Vec<f64>,
    pub w: f64,
    pub x_mean: Vec<f64>,
    pub p_mean: Vec<f64>,
}

/// Internal-state populations. Renormalized populations sum to one; raw
/// populations sum to the squared norm (meaningful under loss).
pub fn populations(field: &SpinorField, renormalized: bool) -> Result<Vec<f64>, ObservableError> {
    let norm2 = field.norm2();
    if norm2 <= 0.0 {
        return Err(ObservableError::ZeroNorm);
    }
    let div = if renormalized { norm2 } else { 1.0 };
    Ok((0..field.dim()).map(|c| field.population(c) / div).collect())
}

/// All scalar observables of one snapshot. Quadrature means are normalized
/// expectation values regardless of the population mode; the position means
/// are taken after transforming a copy of the field.
pub fn measure(
    field: &SpinorField,
    fft: &FftCache,
    renormalized: bool,
) -> Result<ObservableSet, ObservableError> {
    let norm2 = field.norm2();
    if norm2 <= 0.0 {
        return Err(ObservableError::ZeroNorm);
    }
    let p = populations(field, renormalized)?;
    let w = p[1] - p[0];
    let n_modes = field.grid().n_modes();

    let mut in_p = field.clone();
    in_p.set_representation(Representation::Momentum, fft);
    let p_mean: Vec<f64> = (0..n_modes).map(|k| in_p.mean_coordinate(k)).collect();
    in_p.set_representation(Representation::Position, fft);
    let x_mean: Vec<f64> = (0..n_modes).map(|k| in_p.mean_coordinate(k)).collect();

    Ok(ObservableSet { norm2, p, w, x_mean, p_mean })
}

/// Mean photon number of each mode, (<P^2> + <X^2> - 1)/2, normalized.
pub fn mean_photon_numbers(field: &SpinorField, fft: &FftCache) -> Result<Vec<f64>, ObservableError> {
    let norm2 = field.norm2();
    if norm2 <= 0.0 {
        return Err(ObservableError::ZeroNorm);
    }
    let n_modes = field.grid().n_modes();
    let second_moment = |f: &SpinorField, k: usize| -> f64 {
        let n = f.grid().n();
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..f.dim() {
            let comp = f.component(c);
            for (idx, v) in comp.iter().enumerate() {
                let j = if k == 0 { idx % n } else { idx / n };
                let q = match f.rep() {
                    Representation::Momentum => f.grid().p(k, j),
                    Representation::Position => f.grid().x(k, j),
                };
                let w = v.norm_sqr();
                num += w * q * q;
                den += w;
            }
        }
        num / den
    };
    let mut in_p = field.clone();
    in_p.set_representation(Representation::Momentum, fft);
    let p2: Vec<f64> = (0..n_modes).map(|k| second_moment(&in_p, k)).collect();
    in_p.set_representation(Representation::Position, fft);
    let x2: Vec<f64> = (0..n_modes).map(|k| second_moment(&in_p, k)).collect();
    Ok((0..n_modes).map(|k| 0.5 * (p2[k] + x2[k] - 1.0)).collect())
}

/// Populations of the adiabatic surfaces: at each grid point the spinor is
/// projected onto the eigenvectors of the local coupling matrix (ascending
/// order). Requires the momentum representation, where the coupling is
/// diagonal. Renormalized to sum to one.
///
/// At an exact degeneracy the split between the touching bands depends on
/// the eigenbasis; the Jacobi solver keeps it deterministic, and the summed
/// population of the degenerate group is basis-independent.
pub fn adiabatic_populations(
    field: &SpinorField,
    spec: &ModelSpec,
) -> Result<Vec<f64>, ObservableError> {
    if field.rep() != Representation::Momentum {
        return Err(ObservableError::WrongRepresentation);
    }
    let norm2 = field.norm2();
    if norm2 <= 0.0 {
        return Err(ObservableError::ZeroNorm);
    }
    let dim = field.dim();
    let grid = *field.grid();
    let n = grid.n();
    let npts = grid.npts();
    let mut pops = vec![0.0_f64; dim];
    for idx in 0..npts {
        let (i1, i2) = (idx % n, idx / n);
        let p1 = grid.p(0, i1);
        let p2 = if grid.n_modes() == 2 { grid.p(1, i2) } else { 0.0 };
        let (_, vecs) = spec.coupling_matrix(p1, p2).eigh();
        for band in 0..dim {
            let mut amp = crate::C64::new(0.0, 0.0);
            for j in 0..dim {
                amp += vecs.at(j, band).conj() * field.component(j)[idx];
            }
            pops[band] += amp.norm_sqr();
        }
    }
    let cell = grid.momentum_cell();
    for v in &mut pops {
        *v *= cell / norm2;
    }
    Ok(pops)
}

/// Density of one mode axis: |psi|^2 summed over the internal index and the
/// other mode, weighted by the other mode's cell so that
/// sum(marginal) * cell(mode) equals the squared norm.
pub fn marginal_density(
    field: &SpinorField,
    mode: usize,
    rep: Representation,
    fft: &FftCache,
) -> Vec<f64> {
    let mut f = field.clone();
    f.set_representation(rep, fft);
    let grid = *f.grid();
    let n = grid.n();
    let other_cell = if grid.n_modes() == 2 {
        let other = 1 - mode;
        match rep {
            Representation::Momentum => grid.dp(other),
            Representation::Position => grid.dx(other),
        }
    } else {
        1.0
    };
    let mut out = vec![0.0_f64; n];
    for c in 0..f.dim() {
        let comp = f.component(c);
        for (idx, v) in comp.iter().enumerate() {
            let j = if mode == 0 { idx % n } else { idx / n };
            out[j] += v.norm_sqr() * other_cell;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{coherent_spinor, QuadratureGrid, SpinorField};
    use crate::model::ModelSpec;
    use crate::propagator::Propagator;
    use crate::C64;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn populations_of_product_states() {
        let grid = QuadratureGrid::new(2, 32, &[8.0, 8.0]).unwrap();
        let up = coherent_spinor(grid, &[(0.0, 1.0), (0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)])
            .unwrap();
        let p = populations(&up, true).unwrap();
        assert!(p[0].abs() < 1e-14 && (p[1] - 1.0).abs() < 1e-12);

        let sup = coherent_spinor(
            grid,
            &[(0.0, 1.0), (0.0, 0.0)],
            &[c(-1.0, 0.0), c(1.0, 0.0)],
        )
        .unwrap();
        let fft = FftCache::new(32);
        let obs = measure(&sup, &fft, true).unwrap();
        assert!((obs.p[0] - 0.5).abs() < 1e-12);
        assert!((obs.p[1] - 0.5).abs() < 1e-12);
        assert!(obs.w.abs() < 1e-12);
        assert!((obs.p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn raw_populations_sum_to_norm2() {
        let grid = QuadratureGrid::new(1, 64, &[8.0]).unwrap();
        let mut f = coherent_spinor(grid, &[(0.0, 1.0)], &[c(0.6, 0.0), c(0.8, 0.0)]).unwrap();
        f.scale(c(0.5, 0.0));
        let raw = populations(&f, false).unwrap();
        assert!((raw.iter().sum::<f64>() - f.norm2()).abs() < 1e-12);
        let ren = populations(&f, true).unwrap();
        assert!((ren.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_means_of_reference_states() {
        let grid = QuadratureGrid::new(2, 128, &[8.0, 12.0]).unwrap();
        let fft = FftCache::new(128);
        let vac = coherent_spinor(grid, &[(0.0, 0.0), (0.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let obs = measure(&vac, &fft, true).unwrap();
        for k in 0..2 {
            assert!(obs.x_mean[k].abs() < 1e-10);
            assert!(obs.p_mean[k].abs() < 1e-10);
        }
        // First mode at P = 2, second displaced to X = 5.
        let fig = coherent_spinor(
            grid,
            &[(0.0, 2.0), (5.0, 0.0)],
            &[c(-1.0, 0.0), c(1.0, 0.0)],
        )
        .unwrap();
        let obs = measure(&fig, &fft, true).unwrap();
        assert!((obs.p_mean[0] - 2.0).abs() < 1e-8);
        assert!(obs.x_mean[0].abs() < 1e-8);
        assert!((obs.x_mean[1] - 5.0).abs() < 1e-8);
        assert!(obs.p_mean[1].abs() < 1e-8);
        assert!(obs.w.abs() < 1e-12);
    }

    #[test]
    fn photon_number_of_coherent_and_vacuum() {
        let grid = QuadratureGrid::new(1, 128, &[9.0]).unwrap();
        let fft = FftCache::new(128);
        let vac = coherent_spinor(grid, &[(0.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(mean_photon_numbers(&vac, &fft).unwrap()[0].abs() < 1e-10);
        let (x0, p0) = (1.5, -2.0);
        let coh = coherent_spinor(grid, &[(x0, p0)], &[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let want = 0.5 * (x0 * x0 + p0 * p0);
        assert!((mean_photon_numbers(&coh, &fft).unwrap()[0] - want).abs() < 1e-10);
    }

    #[test]
    fn adiabatic_populations_of_a_lower_band_state() {
        let spec = ModelSpec::bimodal_rabi(1.0, 0.8, 0.5).unwrap();
        let grid = QuadratureGrid::new(2, 32, &[8.0, 8.0]).unwrap();
        let scalar = coherent_spinor(grid, &[(0.0, 1.5), (0.5, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let mut f = SpinorField::zeros(grid, 2, Representation::Momentum).unwrap();
        let n = grid.n();
        for idx in 0..grid.npts() {
            let (i1, i2) = (idx % n, idx / n);
            let (_, vecs) = spec
                .coupling_matrix(grid.p(0, i1), grid.p(1, i2))
                .eigh();
            let amp = scalar.component(0)[idx];
            for j in 0..2 {
                f.component_mut(j)[idx] = amp * vecs.at(j, 0);
            }
        }
        let pops = adiabatic_populations(&f, &spec).unwrap();
        assert!((pops[0] - 1.0).abs() < 1e-12);
        assert!(pops[1].abs() < 1e-12);
        assert!((pops.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adiabatic_populations_require_momentum_rep() {
        let spec = ModelSpec::bimodal_rabi(1.0, 0.8, 0.5).unwrap();
        let grid = QuadratureGrid::new(2, 32, &[8.0, 8.0]).unwrap();
        let fft = FftCache::new(32);
        let mut f = coherent_spinor(grid, &[(0.0, 1.0), (0.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        f.set_representation(Representation::Position, &fft);
        assert!(matches!(
            adiabatic_populations(&f, &spec),
            Err(ObservableError::WrongRepresentation)
        ));
    }

    #[test]
    fn dark_state_stays_decoupled_far_from_the_origin() {
        // Lambda coupling annihilates (p2, -p1, 0); a packet far from the
        // origin prepared in that local superposition leaks into |3> only
        // through its angular spread, bounded by ~1/(2 r^2).
        let spec = ModelSpec::bimodal_lambda(1.0, [0.0; 3], 1.0).unwrap();
        let grid = QuadratureGrid::new(2, 256, &[32.0, 32.0]).unwrap();
        let (p10, p20) = (20.0_f64, 16.0_f64);
        let r0 = (p10 * p10 + p20 * p20).sqrt();
        let atom = [c(p20 / r0, 0.0), c(-p10 / r0, 0.0), c(0.0, 0.0)];
        let mut psi = coherent_spinor(grid, &[(0.0, p10), (0.0, p20)], &atom).unwrap();
        let prop = Propagator::new(&spec, grid, 2e-3).unwrap();
        let mut worst_p3 = 0.0_f64;
        prop.evolve(&mut psi, 60, 10, |_, _, f| {
            let p = populations(f, true).unwrap();
            worst_p3 = worst_p3.max(p[2]);
        })
        .unwrap();
        assert!(worst_p3 < 1e-3, "p3 reached {worst_p3:.2e}");
    }

    #[test]
    fn marginals_are_gaussian_and_factorize() {
        let grid = QuadratureGrid::new(2, 64, &[9.0, 9.0]).unwrap();
        let fft = FftCache::new(64);
        let f1 = coherent_spinor(grid, &[(0.0, 1.0), (2.0, -0.5)], &[c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let m = marginal_density(&f1, 0, Representation::Momentum, &fft);
        // Total mass, mean, and variance against the coherent profile.
        let dp = grid.dp(0);
        let total: f64 = m.iter().sum::<f64>() * dp;
        assert!((total - f1.norm2()).abs() < 1e-12);
        let mean: f64 = m
            .iter()
            .enumerate()
            .map(|(j, v)| v * grid.p(0, j))
            .sum::<f64>()
            * dp;
        assert!((mean - f1.mean_coordinate(0)).abs() < 1e-10);
        let var: f64 = m
            .iter()
            .enumerate()
            .map(|(j, v)| v * (grid.p(0, j) - 1.0).powi(2))
            .sum::<f64>()
            * dp;
        assert!((var - 0.5).abs() < 1e-6);
        // Product state: the mode-1 marginal ignores the mode-2 center.
        let f2 = coherent_spinor(grid, &[(0.0, 1.0), (-3.0, 1.5)], &[c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let m2 = marginal_density(&f2, 0, Representation::Momentum, &fft);
        let worst = m
            .iter()
            .zip(m2.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(worst < 1e-12);
    }

    #[test]
    fn free_evolution_preserves_orbit_radii() {
        // g = 0: each mode circles the origin at constant radius (2 and 5).
        let omega = std::f64::consts::TAU;
        let spec = ModelSpec::bimodal_rabi(omega, 0.0, 0.0).unwrap();
        // L = sqrt(N pi / 2) balances the P and X boxes; the radius-5 orbit
        // needs the margin on both sides of the transform.
        let grid = QuadratureGrid::new(2, 64, &[8.0, 10.0]).unwrap();
        let fft = FftCache::new(64);
        let psi0 = coherent_spinor(
            grid,
            &[(0.0, 2.0), (5.0, 0.0)],
            &[c(-1.0, 0.0), c(1.0, 0.0)],
        )
        .unwrap();
        let dt = 2.5e-4;
        let prop = Propagator::new(&spec, grid, dt).unwrap();
        let mut psi = psi0;
        let steps = (6.0 / dt).round() as usize;
        let mut worst = 0.0_f64;
        prop.evolve(&mut psi, steps, steps / 12, |_, _, f| {
            let obs = measure(f, &fft, true).unwrap();
            let r1 = (obs.x_mean[0].powi(2) + obs.p_mean[0].powi(2)).sqrt();
            let r2 = (obs.x_mean[1].powi(2) + obs.p_mean[1].powi(2)).sqrt();
            worst = worst.max((r1 - 2.0).abs()).max((r2 - 5.0).abs());
        })
        .unwrap();
        assert!(worst < 1e-4, "radius drift {worst:.2e}");
    }
}

//! Coherent states, condensate product states, and Weyl displacement on the
//! truncated Fock space.
//!
//! Conventions: for a mode-weighted vector `f`, the Weyl operator is
//! `W(f) = exp(a*(f) - a(f))`, so `W(f) Omega` is the coherent state with
//! Poisson number statistics of mean `||f||^2`, and
//! `W*(f) a_p W(f) = a_p + f_p`.

use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;
use std::sync::Arc;

use crate::error::{MfError, Result};
use crate::fock::{sector_norms, FockState, OccupationBasis};
use crate::generators::weyl_generator;
use crate::propagate::{expm_apply, KrylovParams};

/// Cutoff heuristic for states with mean particle number `mu`: keep the mean
/// plus eight standard deviations of the Poisson tail, with a fixed floor so
/// small means still get absolute headroom.
pub fn tail_cutoff(mu: f64) -> usize {
    (mu + 8.0 * mu.sqrt() + 8.0).ceil() as usize
}

/// `W(f) Omega` assembled analytically: amplitude `e^{-||f||^2/2} prod_i
/// f_i^{n_i} / sqrt(n_i!)`. The Poisson tail beyond the cutoff goes into the
/// leakage field.
pub fn coherent_state(basis: &Arc<OccupationBasis>, f: &[Complex64]) -> Result<FockState> {
    if f.len() != basis.modes {
        return Err(MfError::Shape(format!(
            "displacement vector has {} entries, basis has {} modes",
            f.len(),
            basis.modes
        )));
    }
    let f2: f64 = f.iter().map(|z| z.norm_sqr()).sum();
    let mut psi = FockState::zero(basis.clone());
    for idx in 0..basis.len() {
        let occ = basis.occupation(idx);
        let mut log_mag = -0.5 * f2;
        let mut phase = 0.0;
        let mut zero = false;
        for (i, &n) in occ.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let r = f[i].norm();
            if r == 0.0 {
                zero = true;
                break;
            }
            log_mag += n as f64 * r.ln() - 0.5 * ln_gamma(n as f64 + 1.0);
            phase += n as f64 * f[i].arg();
        }
        if !zero {
            psi.amplitudes[idx] = Complex64::from_polar(log_mag.exp(), phase);
        }
    }
    psi.leakage = (1.0 - psi.norm_sqr()).max(0.0);
    Ok(psi)
}

/// Apply `W(f)` by exponentiating its Hermitian generator with the Krylov
/// scheme; exactly unitary on the truncated space up to the residual target.
pub fn apply_weyl(f: &[Complex64], psi: &FockState, p: &KrylovParams) -> Result<FockState> {
    let g = weyl_generator(&psi.basis, f)?;
    let mut out = expm_apply(|s| g.apply(s), psi, 1.0, p)?;
    out.leakage += g.leakage_flux(psi).powi(2);
    Ok(out)
}

/// Condensate product state `(a*(f))^n / sqrt(n!) Omega` for a normalized
/// mode vector `f`; supported on the `n`-particle sector with multinomial
/// amplitudes, assembled in the log domain.
pub fn product_state(basis: &Arc<OccupationBasis>, f: &[Complex64], n: usize) -> Result<FockState> {
    if f.len() != basis.modes {
        return Err(MfError::Shape(format!(
            "mode vector has {} entries, basis has {} modes",
            f.len(),
            basis.modes
        )));
    }
    if n > basis.n_cut {
        return Err(MfError::Parameter(format!(
            "product state needs sector {n}, basis cutoff is {}",
            basis.n_cut
        )));
    }
    let norm2: f64 = f.iter().map(|z| z.norm_sqr()).sum();
    if (norm2 - 1.0).abs() > 1e-10 {
        return Err(MfError::Parameter(format!(
            "product state requires a normalized mode vector, got ||f||^2 = {norm2}"
        )));
    }
    let mut psi = FockState::zero(basis.clone());
    let half_log_n_fact = 0.5 * ln_gamma(n as f64 + 1.0);
    for idx in basis.sector_range(n) {
        let occ = basis.occupation(idx);
        let mut log_mag = half_log_n_fact;
        let mut phase = 0.0;
        let mut zero = false;
        for (i, &ni) in occ.iter().enumerate() {
            if ni == 0 {
                continue;
            }
            let r = f[i].norm();
            if r == 0.0 {
                zero = true;
                break;
            }
            log_mag += ni as f64 * r.ln() - 0.5 * ln_gamma(ni as f64 + 1.0);
            phase += ni as f64 * f[i].arg();
        }
        if !zero {
            psi.amplitudes[idx] = Complex64::from_polar(log_mag.exp(), phase);
        }
    }
    Ok(psi)
}

/// Normalization ratio `sqrt(n!) / (n^{n/2} e^{-n/2})`, of order `n^{1/4}`.
pub fn d_n(n: usize) -> f64 {
    let nf = n as f64;
    (0.5 * ln_gamma(nf + 1.0) - 0.5 * nf * nf.ln() + 0.5 * nf).exp()
}

/// Sector norms of `W*(sqrt(n) e) (a*(e))^n / sqrt(n!) Omega` for a single
/// mode `e`; by mode-rotation invariance this covers any normalized
/// condensate. `n_cut` must leave room above `n` for the displacement tail.
pub fn displaced_product_sector_norms(
    n: usize,
    n_cut: usize,
    p: &KrylovParams,
) -> Result<Vec<f64>> {
    if n_cut < n {
        return Err(MfError::Parameter(format!("cutoff {n_cut} below sector {n}")));
    }
    let basis = OccupationBasis::with_capacity(1, n_cut, usize::MAX)?;
    let e = vec![Complex64::new(1.0, 0.0)];
    let prod = product_state(&basis, &e, n)?;
    // W*(sqrt(n) e) = W(-sqrt(n) e)
    let f = vec![Complex64::new(-(n as f64).sqrt(), 0.0)];
    let displaced = apply_weyl(&f, &prod, p)?;
    Ok(sector_norms(&displaced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{apply_annihilate_f, apply_create_f, number_moment, project_sector};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_mode_vec(m: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..m)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect()
    }

    fn normalized(f: &[Complex64]) -> Vec<Complex64> {
        let n = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        f.iter().map(|z| z / n).collect()
    }

    #[test]
    fn coherent_poisson_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &mu in &[0.5, 2.0, 8.0] {
            let m = 3;
            let raw = random_mode_vec(m, &mut rng);
            let scale = (mu / raw.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
            let f: Vec<Complex64> = raw.iter().map(|z| z * scale).collect();
            let basis = OccupationBasis::new(m, tail_cutoff(mu)).unwrap();
            let psi = coherent_state(&basis, &f).unwrap();
            assert!((psi.norm_sqr() - 1.0).abs() < 1e-8, "mass defect at mu {mu}");
            let mean = number_moment(1, &psi);
            let var = number_moment(2, &psi) - mean * mean;
            assert!((mean - mu).abs() < 1e-8, "mean {mean} vs {mu}");
            assert!((var - mu).abs() < 1e-8, "var {var} vs {mu}");
        }
    }

    #[test]
    fn coherent_matches_weyl_on_vacuum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 2;
        let f = random_mode_vec(m, &mut rng);
        let mu: f64 = f.iter().map(|z| z.norm_sqr()).sum();
        let basis = OccupationBasis::new(m, tail_cutoff(mu) + 10).unwrap();
        let analytic = coherent_state(&basis, &f).unwrap();
        let vac = FockState::vacuum(basis.clone());
        let applied = apply_weyl(&f, &vac, &KrylovParams::default()).unwrap();
        for k in 0..basis.len() {
            assert!(
                (analytic.amplitudes[k] - applied.amplitudes[k]).norm() < 1e-9,
                "amplitude mismatch at {k}"
            );
        }
    }

    #[test]
    fn weyl_is_unitary_and_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 2;
        let basis = OccupationBasis::new(m, 12).unwrap();
        let f = random_mode_vec(m, &mut rng);
        let neg: Vec<Complex64> = f.iter().map(|z| -z).collect();
        // a state well below the cutoff so truncation is negligible
        let mut psi = FockState::zero(basis.clone());
        for i in basis.sector_range(0).chain(basis.sector_range(1)).chain(basis.sector_range(2)) {
            psi.amplitudes[i] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        psi.normalize();
        let p = KrylovParams::default();
        let moved = apply_weyl(&f, &psi, &p).unwrap();
        assert_relative_eq!(moved.norm(), 1.0, epsilon = 1e-12);
        let back = apply_weyl(&neg, &moved, &p).unwrap();
        for k in 0..basis.len() {
            assert!((back.amplitudes[k] - psi.amplitudes[k]).norm() < 1e-8);
        }
    }

    #[test]
    fn weyl_conjugation_shifts_annihilation() {
        // <W psi, a(g) W psi> = <psi, a(g) psi> + <g, f> for states far from
        // the cutoff
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 2;
        let basis = OccupationBasis::new(m, 16).unwrap();
        let f: Vec<Complex64> = random_mode_vec(m, &mut rng).iter().map(|z| z * 0.6).collect();
        let g = random_mode_vec(m, &mut rng);
        let mut psi = FockState::zero(basis.clone());
        for i in basis.sector_range(0).chain(basis.sector_range(1)) {
            psi.amplitudes[i] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        psi.normalize();
        let moved = apply_weyl(&f, &psi, &KrylovParams::default()).unwrap();
        let lhs = moved.inner(&apply_annihilate_f(&g, &moved).unwrap());
        let base = psi.inner(&apply_annihilate_f(&g, &psi).unwrap());
        let shift: Complex64 = g.iter().zip(&f).map(|(gi, fi)| gi.conj() * fi).sum();
        assert!((lhs - (base + shift)).norm() < 1e-7, "lhs {lhs}, base {base}, shift {shift}");
    }

    #[test]
    fn product_state_is_normalized_single_sector() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = OccupationBasis::new(3, 6).unwrap();
        let f = normalized(&random_mode_vec(3, &mut rng));
        let psi = product_state(&basis, &f, 5).unwrap();
        assert_relative_eq!(psi.norm(), 1.0, epsilon = 1e-12);
        for n in 0..=6usize {
            let mass = project_sector(n, &psi).unwrap().norm_sqr();
            if n == 5 {
                assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
            } else {
                assert_eq!(mass, 0.0);
            }
        }
    }

    #[test]
    fn product_state_single_mode_is_number_state() {
        let basis = OccupationBasis::new(1, 8).unwrap();
        let e = vec![Complex64::new(1.0, 0.0)];
        let psi = product_state(&basis, &e, 6).unwrap();
        let idx = basis.index(&[6]).unwrap();
        assert_relative_eq!(psi.amplitudes[idx].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn product_state_matches_repeated_creation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let basis = OccupationBasis::new(3, 5).unwrap();
        let f = normalized(&random_mode_vec(3, &mut rng));
        let n = 4usize;
        let direct = product_state(&basis, &f, n).unwrap();
        let mut built = FockState::vacuum(basis.clone());
        for _ in 0..n {
            built = apply_create_f(&f, &built).unwrap();
        }
        built.scale(Complex64::new((0.5 * ln_gamma(n as f64 + 1.0)).exp().recip(), 0.0));
        for k in 0..basis.len() {
            assert!((direct.amplitudes[k] - built.amplitudes[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn projected_coherent_is_scaled_product_state() {
        // d_n P_n W(sqrt(n) f) Omega equals the product state over f
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 2;
        let n = 4usize;
        let f = normalized(&random_mode_vec(m, &mut rng));
        let scaled: Vec<Complex64> = f.iter().map(|z| z * (n as f64).sqrt()).collect();
        let basis = OccupationBasis::new(m, tail_cutoff(n as f64) + 6).unwrap();
        let coh = coherent_state(&basis, &scaled).unwrap();
        let mut projected = project_sector(n, &coh).unwrap();
        projected.scale(Complex64::new(d_n(n), 0.0));
        let prod = product_state(&basis, &f, n).unwrap();
        for k in 0..basis.len() {
            assert!((projected.amplitudes[k] - prod.amplitudes[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn d_n_tracks_fourth_root() {
        for &n in &[16usize, 256, 4096, 1_000_000] {
            let x = d_n(n) / (n as f64).powf(0.25);
            assert!(x > 0.5 && x < 2.0, "d_n ratio {x} at n = {n}");
            // Stirling limit (2 pi)^(1/4)
            if n >= 4096 {
                assert_relative_eq!(x, (2.0 * std::f64::consts::PI).powf(0.25), epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn displaced_product_sector_bounds_small() {
        let n = 16usize;
        let n_cut = tail_cutoff(n as f64);
        let norms = displaced_product_sector_norms(n, n_cut, &KrylovParams::default()).unwrap();
        let dn = d_n(n);
        let total: f64 = norms.iter().map(|x| x * x).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
        for (s, x) in norms.iter().enumerate() {
            if s % 2 == 0 {
                assert!(*x <= 2.0 / dn + 1e-9, "even sector {s}: {x}");
            } else {
                let k = (s - 1) / 2;
                let bound = 2.0 * ((k + 1) as f64).powf(1.5) / (dn * (n as f64).sqrt());
                assert!(*x <= bound + 1e-9, "odd sector {s}: {x} vs {bound}");
            }
        }
    }
}

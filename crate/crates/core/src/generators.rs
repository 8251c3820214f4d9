//! Sparse assembly of many-body generators on the truncated Fock space.
//!
//! All operators are assembled column by column in the occupation basis. The
//! one-particle ingredients use the orthonormal mode convention: interaction
//! values are the pointwise samples `V(x_p - x_q)` and the condensate enters
//! through its mode-weighted components `phi_p = h^{d/2} phi(x_p)`.
//!
//! Amplitude that a term would create above the particle cutoff is not stored;
//! instead every column records the squared weight it loses, so propagation
//! can audit the truncation error as it integrates.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{MfError, Result};
use crate::fock::{FockState, OccupationBasis};
use crate::lattice::{kinetic_matrix, FieldVector, Grid};

/// Which fluctuation flow a generator drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    /// Quadratic, cubic and quartic terms: the full fluctuation dynamics.
    Full,
    /// Quadratic terms only: the limiting dynamics.
    Quadratic,
    /// Full terms, but the cubic ones gated by a particle-number cutoff `M`.
    Truncated(usize),
}

/// Hermitian operator in compressed column form, with a per-column record of
/// the squared weight removed by the particle cutoff.
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    pub basis: Arc<OccupationBasis>,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<Complex64>,
    /// `dropped[c] = || Q G e_c ||^2` where `Q` projects beyond the cutoff.
    pub dropped: Vec<f64>,
}

impl SparseGenerator {
    pub fn dim(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// `out = G psi`. Leakage carries over unchanged; continuous-time flux is
    /// accounted by the steppers via [`SparseGenerator::leakage_flux`].
    pub fn apply(&self, psi: &FockState) -> Result<FockState> {
        if psi.basis.len() != self.dim() {
            return Err(MfError::Shape(format!(
                "state dimension {} does not match generator dimension {}",
                psi.basis.len(),
                self.dim()
            )));
        }
        let mut out = FockState::zero(psi.basis.clone());
        out.leakage = psi.leakage;
        for c in 0..self.dim() {
            let amp = psi.amplitudes[c];
            if amp.norm_sqr() == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                out.amplitudes[self.rows[k] as usize] += self.vals[k] * amp;
            }
        }
        Ok(out)
    }

    /// Norm of the amplitude per unit time that the cutoff removes from `psi`:
    /// `sqrt(sum_c dropped[c] |psi_c|^2)`.
    pub fn leakage_flux(&self, psi: &FockState) -> f64 {
        self.dropped
            .iter()
            .zip(&psi.amplitudes)
            .map(|(d, z)| d * z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Upper bound on the spectral norm (max column absolute sum; valid for
    /// Hermitian operators). Used to pick Krylov substeps.
    pub fn norm_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for c in 0..self.dim() {
            let s: f64 = (self.col_ptr[c]..self.col_ptr[c + 1])
                .map(|k| self.vals[k].norm())
                .sum();
            best = best.max(s);
        }
        best
    }

    /// `max |G - G^dagger|` entrywise; diagnostic for tests.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut map: HashMap<(u32, u32), Complex64> = HashMap::new();
        for c in 0..self.dim() {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                map.insert((self.rows[k], c as u32), self.vals[k]);
            }
        }
        let mut worst: f64 = 0.0;
        for (&(r, c), &v) in &map {
            let vt = map.get(&(c, r)).copied().unwrap_or(Complex64::new(0.0, 0.0));
            worst = worst.max((v - vt.conj()).norm());
        }
        worst
    }
}

/// Coherent per-column accumulator used during assembly: in-basis targets by
/// index, above-cutoff targets by occupation vector.
struct ColumnAccum {
    inside: HashMap<usize, Complex64>,
    outside: HashMap<Box<[u32]>, Complex64>,
}

impl ColumnAccum {
    fn new() -> ColumnAccum {
        ColumnAccum { inside: HashMap::new(), outside: HashMap::new() }
    }

    fn emit(&mut self, basis: &OccupationBasis, occ: &[u32], coeff: Complex64) {
        if coeff.norm_sqr() == 0.0 {
            return;
        }
        match basis.index(occ) {
            Some(idx) => *self.inside.entry(idx).or_insert(Complex64::new(0.0, 0.0)) += coeff,
            None => {
                *self
                    .outside
                    .entry(occ.to_vec().into_boxed_slice())
                    .or_insert(Complex64::new(0.0, 0.0)) += coeff
            }
        }
    }
}

fn assemble<F>(basis: &Arc<OccupationBasis>, mut fill: F) -> SparseGenerator
where
    F: FnMut(usize, &[u32], usize, &mut ColumnAccum),
{
    let dim = basis.len();
    let mut col_ptr = Vec::with_capacity(dim + 1);
    let mut rows = Vec::new();
    let mut vals = Vec::new();
    let mut dropped = vec![0.0; dim];
    col_ptr.push(0);
    for c in 0..dim {
        let occ = basis.occupation(c).to_vec();
        let sector = basis.sector_of(c);
        let mut acc = ColumnAccum::new();
        fill(c, &occ, sector, &mut acc);
        let mut entries: Vec<(u32, Complex64)> =
            acc.inside.into_iter().map(|(r, v)| (r as u32, v)).collect();
        entries.sort_unstable_by_key(|e| e.0);
        for (r, v) in entries {
            rows.push(r);
            vals.push(v);
        }
        col_ptr.push(rows.len());
        dropped[c] = acc.outside.values().map(|z| z.norm_sqr()).sum();
    }
    SparseGenerator { basis: basis.clone(), col_ptr, rows, vals, dropped }
}

fn check_shapes(basis: &OccupationBasis, grid: &Grid, v: &[f64]) -> Result<()> {
    if basis.modes != grid.sites() {
        return Err(MfError::Shape(format!(
            "basis has {} modes, grid has {} sites",
            basis.modes,
            grid.sites()
        )));
    }
    if v.len() != grid.sites() {
        return Err(MfError::Shape(format!(
            "potential table has {} entries, grid has {} sites",
            v.len(),
            grid.sites()
        )));
    }
    Ok(())
}

/// One-body term `dGamma(h1)` into the accumulator for one column.
fn fill_dgamma(
    basis: &OccupationBasis,
    h1: &[Vec<Complex64>],
    occ: &[u32],
    acc: &mut ColumnAccum,
) {
    let m = occ.len();
    let mut diag = Complex64::new(0.0, 0.0);
    for (i, &n) in occ.iter().enumerate() {
        if n > 0 {
            diag += h1[i][i] * n as f64;
        }
    }
    acc.emit(basis, occ, diag);
    let mut t = occ.to_vec();
    for q in 0..m {
        if occ[q] == 0 {
            continue;
        }
        for p in 0..m {
            if p == q || h1[p][q].norm_sqr() == 0.0 {
                continue;
            }
            t.copy_from_slice(occ);
            t[q] -= 1;
            let factor = (occ[q] as f64).sqrt() * ((t[p] + 1) as f64).sqrt();
            t[p] += 1;
            acc.emit(basis, &t, h1[p][q] * factor);
        }
    }
}

/// Interaction diagonal `scale * sum_{pq} V_pq (n_p n_q - delta_pq n_p)`.
fn quartic_diagonal(grid: &Grid, v: &[f64], occ: &[u32], scale: f64) -> f64 {
    let m = occ.len();
    let mut s = 0.0;
    for p in 0..m {
        if occ[p] == 0 {
            continue;
        }
        let np = occ[p] as f64;
        for q in 0..m {
            let nq = occ[q] as f64;
            let pair = if p == q { np * np - np } else { np * nq };
            if pair != 0.0 {
                s += v[grid.displacement(p, q)] * pair;
            }
        }
    }
    scale * s
}

/// Many-body Hamiltonian `dGamma(-Delta) + 1/(2n) sum V_pq a*_p a*_q a_q a_p`.
/// Preserves every particle sector; `n` is the coupling normalization.
pub fn assemble_hamiltonian(
    basis: &Arc<OccupationBasis>,
    grid: &Grid,
    v: &[f64],
    n: f64,
) -> Result<SparseGenerator> {
    check_shapes(basis, grid, v)?;
    if !(n > 0.0) {
        return Err(MfError::Parameter(format!("coupling normalization must be positive, got {n}")));
    }
    let kin = kinetic_matrix(grid);
    Ok(assemble(basis, |_c, occ, _sector, acc| {
        fill_dgamma(basis, &kin, occ, acc);
        acc.emit(
            basis,
            occ,
            Complex64::new(quartic_diagonal(grid, v, occ, 0.5 / n), 0.0),
        );
    }))
}

/// Fluctuation generator around the condensate `phi` (assumed to solve the
/// one-body flow at the represented time):
///
/// - one-body part: `dGamma(-Delta + (V*|phi|^2) + exchange)`;
/// - pair part: `1/2 sum V_pq (phi_p phi_q a*_p a*_q + h.c.)`;
/// - cubic part (`Full`/`Truncated`): `1/sqrt(n) sum V_pq a*_p
///   (conj(phi_q) a_q X + phi_q X a*_q) a_p` with `X` the cutoff gate;
/// - quartic part (`Full`/`Truncated`): the interaction diagonal at `1/(2n)`.
///
/// The scalar phase of the flow is omitted: every observable this crate
/// evaluates conjugates the propagator, so global phases cancel.
pub fn assemble_fluctuation(
    basis: &Arc<OccupationBasis>,
    grid: &Grid,
    v: &[f64],
    phi: &FieldVector,
    n: f64,
    kind: FlowKind,
) -> Result<SparseGenerator> {
    check_shapes(basis, grid, v)?;
    if !(n > 0.0) {
        return Err(MfError::Parameter(format!("coupling normalization must be positive, got {n}")));
    }
    if phi.values.len() != basis.modes {
        return Err(MfError::Shape(format!(
            "condensate has {} sites, basis has {} modes",
            phi.values.len(),
            basis.modes
        )));
    }
    let m = basis.modes;
    let f = phi.mode_vector();
    let kin = kinetic_matrix(grid);

    // one-body matrix: kinetic + direct diagonal + exchange
    let mut h1 = kin;
    for p in 0..m {
        let mut direct = 0.0;
        for q in 0..m {
            direct += v[grid.displacement(p, q)] * f[q].norm_sqr();
        }
        h1[p][p] += Complex64::new(direct, 0.0);
        for q in 0..m {
            // coefficient of a*_p a_q
            h1[p][q] += v[grid.displacement(q, p)] * f[q].conj() * f[p];
        }
    }

    let inv_sqrt_n = 1.0 / n.sqrt();
    let (cubic, gate) = match kind {
        FlowKind::Quadratic => (false, usize::MAX),
        FlowKind::Full => (true, usize::MAX),
        FlowKind::Truncated(mcut) => (true, mcut),
    };

    Ok(assemble(basis, |_c, occ, sector, acc| {
        fill_dgamma(basis, &h1, occ, acc);

        // pair creation/annihilation
        let mut t = occ.to_vec();
        for p in 0..m {
            for q in 0..m {
                let vpq = v[grid.displacement(p, q)];
                if vpq == 0.0 {
                    continue;
                }
                // 1/2 V_pq phi_p phi_q a*_p a*_q
                t.copy_from_slice(occ);
                let mut factor = ((t[q] + 1) as f64).sqrt();
                t[q] += 1;
                factor *= ((t[p] + 1) as f64).sqrt();
                t[p] += 1;
                acc.emit(basis, &t, 0.5 * vpq * f[p] * f[q] * factor);
                // 1/2 V_pq conj(phi_p phi_q) a_p a_q
                if occ[q] > 0 {
                    t.copy_from_slice(occ);
                    let mut factor = (t[q] as f64).sqrt();
                    t[q] -= 1;
                    if t[p] > 0 {
                        factor *= (t[p] as f64).sqrt();
                        t[p] -= 1;
                        acc.emit(basis, &t, 0.5 * vpq * (f[p] * f[q]).conj() * factor);
                    }
                }
            }
        }

        if cubic {
            for p in 0..m {
                if occ[p] == 0 {
                    continue;
                }
                let sqrt_np = (occ[p] as f64).sqrt();
                for q in 0..m {
                    let vpq = v[grid.displacement(p, q)];
                    if vpq == 0.0 {
                        continue;
                    }
                    // raising: a*_p (phi_q X a*_q) a_p, gate at the sector
                    // reached after a*_q, i.e. the incoming sector
                    if sector <= gate {
                        t.copy_from_slice(occ);
                        t[p] -= 1;
                        let mut factor = sqrt_np * ((t[q] + 1) as f64).sqrt();
                        t[q] += 1;
                        factor *= ((t[p] + 1) as f64).sqrt();
                        t[p] += 1;
                        acc.emit(basis, &t, inv_sqrt_n * vpq * f[q] * factor);
                    }
                    // lowering: a*_p (conj(phi_q) a_q X) a_p, gate right after
                    // the inner a_p, i.e. at sector - 1
                    if sector >= 1 && sector - 1 <= gate {
                        t.copy_from_slice(occ);
                        t[p] -= 1;
                        if t[q] > 0 {
                            let mut factor = sqrt_np * (t[q] as f64).sqrt();
                            t[q] -= 1;
                            factor *= ((t[p] + 1) as f64).sqrt();
                            t[p] += 1;
                            acc.emit(basis, &t, inv_sqrt_n * vpq * f[q].conj() * factor);
                        }
                    }
                }
            }
            acc.emit(
                basis,
                occ,
                Complex64::new(quartic_diagonal(grid, v, occ, 0.5 / n), 0.0),
            );
        }
    }))
}

/// Cubic interaction part of the fluctuation generator alone:
/// `1/sqrt(n) sum V_pq a*_p (conj(phi_q) a_q + phi_q a*_q) a_p`, ungated.
/// Every matrix entry carries the factor `n^{-1/2}` exactly, which makes the
/// operator-norm scaling across `n` algebraic rather than asymptotic.
pub fn assemble_cubic(
    basis: &Arc<OccupationBasis>,
    grid: &Grid,
    v: &[f64],
    phi: &FieldVector,
    n: f64,
) -> Result<SparseGenerator> {
    check_shapes(basis, grid, v)?;
    if !(n > 0.0) {
        return Err(MfError::Parameter(format!("coupling normalization must be positive, got {n}")));
    }
    let m = basis.modes;
    let f = phi.mode_vector();
    let inv_sqrt_n = 1.0 / n.sqrt();
    Ok(assemble(basis, |_c, occ, _sector, acc| {
        let mut t = occ.to_vec();
        for p in 0..m {
            if occ[p] == 0 {
                continue;
            }
            let sqrt_np = (occ[p] as f64).sqrt();
            for q in 0..m {
                let vpq = v[grid.displacement(p, q)];
                if vpq == 0.0 {
                    continue;
                }
                t.copy_from_slice(occ);
                t[p] -= 1;
                let mut factor = sqrt_np * ((t[q] + 1) as f64).sqrt();
                t[q] += 1;
                factor *= ((t[p] + 1) as f64).sqrt();
                t[p] += 1;
                acc.emit(basis, &t, inv_sqrt_n * vpq * f[q] * factor);
                t.copy_from_slice(occ);
                t[p] -= 1;
                if t[q] > 0 {
                    let mut factor = sqrt_np * (t[q] as f64).sqrt();
                    t[q] -= 1;
                    factor *= ((t[p] + 1) as f64).sqrt();
                    t[p] += 1;
                    acc.emit(basis, &t, inv_sqrt_n * vpq * f[q].conj() * factor);
                }
            }
        }
    }))
}

/// Hermitian displacement generator `i (a*(f) - a(f))`; the Weyl operator is
/// `exp(-i * this)`.
pub fn weyl_generator(basis: &Arc<OccupationBasis>, f: &[Complex64]) -> Result<SparseGenerator> {
    if f.len() != basis.modes {
        return Err(MfError::Shape(format!(
            "displacement vector has {} entries, basis has {} modes",
            f.len(),
            basis.modes
        )));
    }
    let m = basis.modes;
    let i = Complex64::new(0.0, 1.0);
    Ok(assemble(basis, |_c, occ, _sector, acc| {
        let mut t = occ.to_vec();
        for p in 0..m {
            if f[p].norm_sqr() == 0.0 {
                continue;
            }
            t.copy_from_slice(occ);
            let factor = ((t[p] + 1) as f64).sqrt();
            t[p] += 1;
            acc.emit(basis, &t, i * f[p] * factor);
            if occ[p] > 0 {
                t.copy_from_slice(occ);
                let factor = (t[p] as f64).sqrt();
                t[p] -= 1;
                acc.emit(basis, &t, -i * f[p].conj() * factor);
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{
        apply_annihilate_f, apply_create_f, number_moment, project_sector, sector_norms,
    };
    use crate::lattice::{sample_potential, PotentialSpec};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid3() -> Grid {
        Grid::new(1, 3, 0.8).unwrap()
    }

    fn coulomb(grid: &Grid) -> Vec<f64> {
        sample_potential(&PotentialSpec::power_law(0.5, 1.0), grid).unwrap()
    }

    fn random_state(basis: &Arc<OccupationBasis>, rng: &mut ChaCha8Rng) -> FockState {
        let mut s = FockState::zero(basis.clone());
        for z in &mut s.amplitudes {
            *z = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        s.normalize();
        s
    }

    fn random_phi(grid: Grid, rng: &mut ChaCha8Rng) -> FieldVector {
        let vals: Vec<Complex64> = (0..grid.sites())
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let mut phi = FieldVector::new(grid, vals).unwrap();
        phi.normalize();
        phi
    }

    #[test]
    fn weyl_generator_matches_ladder_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = OccupationBasis::new(3, 4).unwrap();
        let f: Vec<Complex64> = (0..3)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let g = weyl_generator(&b, &f).unwrap();
        let psi = random_state(&b, &mut rng);
        let got = g.apply(&psi).unwrap();
        let i = Complex64::new(0.0, 1.0);
        let mut want = apply_create_f(&f, &psi).unwrap();
        want.scale(i);
        let mut low = apply_annihilate_f(&f, &psi).unwrap();
        low.scale(-i);
        want.axpy(Complex64::new(1.0, 0.0), &low);
        for k in 0..b.len() {
            assert!((got.amplitudes[k] - want.amplitudes[k]).norm() < 1e-12);
        }
        assert!(g.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn hamiltonian_is_hermitian_and_sector_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = grid3();
        let v = coulomb(&grid);
        let b = OccupationBasis::new(grid.sites(), 3).unwrap();
        let h = assemble_hamiltonian(&b, &grid, &v, 3.0).unwrap();
        assert!(h.hermiticity_defect() < 1e-12);
        let psi = random_state(&b, &mut rng);
        for n in 0..=3usize {
            let a = h.apply(&project_sector(n, &psi).unwrap()).unwrap();
            let bq = project_sector(n, &h.apply(&psi).unwrap()).unwrap();
            for k in 0..b.len() {
                assert!((a.amplitudes[k] - bq.amplitudes[k]).norm() < 1e-12);
            }
        }
        assert!(h.dropped.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_particle_block_is_kinetic_matrix() {
        let grid = grid3();
        let v = coulomb(&grid);
        let b = OccupationBasis::new(grid.sites(), 2).unwrap();
        let h = assemble_hamiltonian(&b, &grid, &v, 2.0).unwrap();
        let kin = kinetic_matrix(&grid);
        for q in 0..grid.sites() {
            let mut e = FockState::zero(b.clone());
            let mut occ = vec![0u32; grid.sites()];
            occ[q] = 1;
            e.amplitudes[b.index(&occ).unwrap()] = Complex64::new(1.0, 0.0);
            let he = h.apply(&e).unwrap();
            for p in 0..grid.sites() {
                let mut occp = vec![0u32; grid.sites()];
                occp[p] = 1;
                let got = he.amplitudes[b.index(&occp).unwrap()];
                assert!((got - kin[p][q]).norm() < 1e-12, "block mismatch at ({p},{q})");
            }
        }
    }

    #[test]
    fn two_particle_diagonal_matches_pair_sum() {
        // interaction diagonal equals the first-quantized sum over unordered
        // particle pairs, divided by the coupling normalization
        let grid = grid3();
        let v = coulomb(&grid);
        let n = 2.0;
        let b = OccupationBasis::new(grid.sites(), 2).unwrap();
        let h = assemble_hamiltonian(&b, &grid, &v, n).unwrap();
        let kin = kinetic_matrix(&grid);
        for idx in b.sector_range(2) {
            let occ = b.occupation(idx).to_vec();
            let mut e = FockState::zero(b.clone());
            e.amplitudes[idx] = Complex64::new(1.0, 0.0);
            let he = h.apply(&e).unwrap();
            let mut kin_diag = Complex64::new(0.0, 0.0);
            for (i, &ni) in occ.iter().enumerate() {
                kin_diag += kin[i][i] * ni as f64;
            }
            let interaction = he.amplitudes[idx] - kin_diag;
            // particle positions of this occupation
            let positions: Vec<usize> = (0..grid.sites())
                .flat_map(|i| std::iter::repeat(i).take(occ[i] as usize))
                .collect();
            let mut pair_sum = 0.0;
            for a in 0..positions.len() {
                for bq in (a + 1)..positions.len() {
                    pair_sum += v[grid.displacement(positions[a], positions[bq])];
                }
            }
            assert_relative_eq!(interaction.re, pair_sum / n, max_relative = 1e-12);
            assert!(interaction.im.abs() < 1e-12);
        }
    }

    #[test]
    fn fluctuation_generator_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let b = OccupationBasis::new(grid.sites(), 4).unwrap();
        for kind in [FlowKind::Quadratic, FlowKind::Full, FlowKind::Truncated(2)] {
            let g = assemble_fluctuation(&b, &grid, &v, &phi, 5.0, kind).unwrap();
            assert!(
                g.hermiticity_defect() < 1e-12,
                "defect {} for {kind:?}",
                g.hermiticity_defect()
            );
        }
    }

    #[test]
    fn quadratic_on_vacuum_creates_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let f = phi.mode_vector();
        let b = OccupationBasis::new(grid.sites(), 4).unwrap();
        let g = assemble_fluctuation(&b, &grid, &v, &phi, 5.0, FlowKind::Quadratic).unwrap();
        let out = g.apply(&FockState::vacuum(b.clone())).unwrap();
        let sn = sector_norms(&out);
        assert_eq!(sn[1], 0.0);
        assert_eq!(sn[3], 0.0);
        // explicit pair amplitudes
        for p in 0..3 {
            for q in 0..3 {
                let mut occ = vec![0u32; 3];
                occ[p] += 1;
                occ[q] += 1;
                let idx = b.index(&occ).unwrap();
                let vpq = v[grid.displacement(p, q)];
                let want = if p == q {
                    0.5 * vpq * f[p] * f[q] * 2f64.sqrt()
                } else {
                    // ordered pairs (p,q) and (q,p) both contribute
                    vpq * f[p] * f[q]
                };
                assert!(
                    (out.amplitudes[idx] - want).norm() < 1e-12,
                    "pair amplitude mismatch at ({p},{q})"
                );
            }
        }
    }

    #[test]
    fn cubic_part_scales_as_inverse_sqrt_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let b = OccupationBasis::new(grid.sites(), 5).unwrap();
        let g1 = assemble_fluctuation(&b, &grid, &v, &phi, 4.0, FlowKind::Full).unwrap();
        let g2 = assemble_fluctuation(&b, &grid, &v, &phi, 16.0, FlowKind::Full).unwrap();
        // the sector-(n+1) image of a sector-n state comes only from the
        // cubic raising term
        let mut psi = FockState::zero(b.clone());
        for i in b.sector_range(2) {
            psi.amplitudes[i] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        psi.normalize();
        let up1 = project_sector(3, &g1.apply(&psi).unwrap()).unwrap().norm();
        let up2 = project_sector(3, &g2.apply(&psi).unwrap()).unwrap().norm();
        assert_relative_eq!(up1 / up2, 2.0, max_relative = 1e-12);
        let down1 = project_sector(1, &g1.apply(&psi).unwrap()).unwrap().norm();
        let down2 = project_sector(1, &g2.apply(&psi).unwrap()).unwrap().norm();
        assert_relative_eq!(down1 / down2, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn truncation_gate_blocks_cubic_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let b = OccupationBasis::new(grid.sites(), 6).unwrap();
        let mcut = 2usize;
        let full = assemble_fluctuation(&b, &grid, &v, &phi, 5.0, FlowKind::Full).unwrap();
        let trunc =
            assemble_fluctuation(&b, &grid, &v, &phi, 5.0, FlowKind::Truncated(mcut)).unwrap();
        // raising from sector s survives iff s <= M; lowering iff s - 1 <= M
        for s in 1..=4usize {
            let mut psi = FockState::zero(b.clone());
            for i in b.sector_range(s) {
                psi.amplitudes[i] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            psi.normalize();
            let up_t = project_sector(s + 1, &trunc.apply(&psi).unwrap()).unwrap().norm();
            let up_f = project_sector(s + 1, &full.apply(&psi).unwrap()).unwrap().norm();
            let down_t = project_sector(s - 1, &trunc.apply(&psi).unwrap()).unwrap().norm();
            let down_f = project_sector(s - 1, &full.apply(&psi).unwrap()).unwrap().norm();
            if s <= mcut {
                assert_relative_eq!(up_t, up_f, max_relative = 1e-12);
            } else {
                assert_eq!(up_t, 0.0, "raising not blocked from sector {s}");
                assert!(up_f > 1e-8);
            }
            if s - 1 <= mcut {
                assert_relative_eq!(down_t, down_f, max_relative = 1e-12);
            } else {
                assert_eq!(down_t, 0.0, "lowering not blocked from sector {s}");
                assert!(down_f > 1e-8);
            }
        }
    }

    /// The per-column dropped weight must equal the squared norm of what the
    /// same column produces above the cutoff when assembled on a larger basis.
    #[test]
    fn dropped_weights_match_larger_basis_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let n_cut = 3usize;
        let small = OccupationBasis::new(grid.sites(), n_cut).unwrap();
        let big = OccupationBasis::new(grid.sites(), n_cut + 2).unwrap();
        let gs = assemble_fluctuation(&small, &grid, &v, &phi, 5.0, FlowKind::Full).unwrap();
        let gb = assemble_fluctuation(&big, &grid, &v, &phi, 5.0, FlowKind::Full).unwrap();
        for c in 0..small.len() {
            let occ = small.occupation(c).to_vec();
            let mut e = FockState::zero(big.clone());
            e.amplitudes[big.index(&occ).unwrap()] = Complex64::new(1.0, 0.0);
            let out = gb.apply(&e).unwrap();
            let mut beyond = 0.0;
            for s in (n_cut + 1)..=(n_cut + 2) {
                beyond += out.amplitudes[big.sector_range(s)]
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>();
            }
            assert_relative_eq!(gs.dropped[c], beyond, epsilon = 1e-12, max_relative = 1e-9);
        }
    }

    #[test]
    fn leakage_flux_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let b = OccupationBasis::new(grid.sites(), 2).unwrap();
        let g = assemble_fluctuation(&b, &grid, &v, &phi, 5.0, FlowKind::Full).unwrap();
        let psi = random_state(&b, &mut rng);
        let direct: f64 = g
            .dropped
            .iter()
            .zip(&psi.amplitudes)
            .map(|(d, z)| d * z.norm_sqr())
            .sum();
        assert_relative_eq!(g.leakage_flux(&psi), direct.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn norm_bound_dominates_rayleigh_quotients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = grid3();
        let v = coulomb(&grid);
        let b = OccupationBasis::new(grid.sites(), 3).unwrap();
        let h = assemble_hamiltonian(&b, &grid, &v, 3.0).unwrap();
        let bound = h.norm_bound();
        for _ in 0..20 {
            let psi = random_state(&b, &mut rng);
            let q = psi.inner(&h.apply(&psi).unwrap()).re.abs();
            assert!(q <= bound + 1e-9);
        }
    }

    #[test]
    fn hamiltonian_conserves_number_expectation_structurally() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grid = grid3();
        let v = coulomb(&grid);
        let b = OccupationBasis::new(grid.sites(), 3).unwrap();
        let h = assemble_hamiltonian(&b, &grid, &v, 3.0).unwrap();
        let psi = random_state(&b, &mut rng);
        // [H, N] = 0 on the truncated space: compare N-moments of H psi
        // against <psi, H N psi> computed sector by sector
        let hpsi = h.apply(&psi).unwrap();
        let mut cross = 0.0;
        for n in 0..=3usize {
            let pn = project_sector(n, &psi).unwrap();
            cross += n as f64 * pn.inner(&h.apply(&pn).unwrap()).re;
        }
        let mut direct = 0.0;
        for n in 0..=3usize {
            let a = project_sector(n, &psi).unwrap();
            let hb = project_sector(n, &hpsi).unwrap();
            direct += n as f64 * a.inner(&hb).re;
        }
        assert_relative_eq!(cross, direct, epsilon = 1e-12, max_relative = 1e-10);
        let _ = number_moment(1, &psi);
    }

    #[test]
    fn cubic_part_closes_the_full_decomposition() {
        // full = quadratic + cubic + quartic diagonal, so the remainder after
        // removing the cubic part must act diagonally on every column
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let basis = OccupationBasis::new(3, 4).unwrap();
        let full = assemble_fluctuation(&basis, &grid, &v, &phi, 3.0, FlowKind::Full).unwrap();
        let quad = assemble_fluctuation(&basis, &grid, &v, &phi, 3.0, FlowKind::Quadratic).unwrap();
        let cubic = assemble_cubic(&basis, &grid, &v, &phi, 3.0).unwrap();
        for c in (0..basis.len()).step_by(5) {
            let mut e = FockState::zero(basis.clone());
            e.amplitudes[c] = Complex64::new(1.0, 0.0);
            let mut r = full.apply(&e).unwrap();
            r.axpy(Complex64::new(-1.0, 0.0), &quad.apply(&e).unwrap());
            r.axpy(Complex64::new(-1.0, 0.0), &cubic.apply(&e).unwrap());
            for (k, z) in r.amplitudes.iter().enumerate() {
                if k != c {
                    assert!(z.norm() < 1e-12, "off-diagonal remainder at ({k},{c}): {z}");
                }
            }
        }
    }

    #[test]
    fn cubic_part_scales_exactly_with_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let grid = grid3();
        let v = coulomb(&grid);
        let phi = random_phi(grid, &mut rng);
        let basis = OccupationBasis::new(3, 5).unwrap();
        let psi = random_state(&basis, &mut rng);
        let a = assemble_cubic(&basis, &grid, &v, &phi, 2.0).unwrap().apply(&psi).unwrap();
        let b = assemble_cubic(&basis, &grid, &v, &phi, 8.0).unwrap().apply(&psi).unwrap();
        assert_relative_eq!(a.norm(), 2.0 * b.norm(), max_relative = 1e-14);
    }
}

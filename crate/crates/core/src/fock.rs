//! Truncated bosonic Fock space over `M` lattice modes: occupation-number
//! basis with a total-particle cutoff, ladder operators, second quantization,
//! sector projections and number moments.
//!
//! Operators that would raise the total particle number above the cutoff drop
//! those components; the squared norm of everything dropped is accumulated in
//! the state's `leakage` field so experiments can audit truncation error.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{MfError, Result};

pub const DEFAULT_MAX_BASIS: usize = 5_000_000;

/// Occupation vectors `n = (n_1, ..., n_M)` with `sum n_i <= N_cut`, ordered
/// by total number first (sectors ascending, contiguous index ranges) and
/// lexicographically within each sector.
#[derive(Debug)]
pub struct OccupationBasis {
    pub modes: usize,
    pub n_cut: usize,
    occupations: Vec<Box<[u32]>>,
    index_of: HashMap<Box<[u32]>, usize>,
    /// sector_start[n] .. sector_start[n+1] is the index range of sector n
    sector_start: Vec<usize>,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

impl OccupationBasis {
    pub fn new(modes: usize, n_cut: usize) -> Result<Arc<OccupationBasis>> {
        Self::with_capacity(modes, n_cut, DEFAULT_MAX_BASIS)
    }

    pub fn with_capacity(modes: usize, n_cut: usize, max_dim: usize) -> Result<Arc<OccupationBasis>> {
        if modes < 1 {
            return Err(MfError::Parameter("basis needs at least one mode".into()));
        }
        let mut size: u128 = 0;
        for n in 0..=n_cut {
            size += binomial(n + modes - 1, n);
        }
        if size > max_dim as u128 {
            return Err(MfError::Capacity(format!(
                "basis for M={modes}, N_cut={n_cut} has {size} states (limit {max_dim})"
            )));
        }
        let mut occupations = Vec::with_capacity(size as usize);
        let mut sector_start = Vec::with_capacity(n_cut + 2);
        for n in 0..=n_cut {
            sector_start.push(occupations.len());
            let mut occ = vec![0u32; modes];
            enumerate_sector(&mut occ, 0, n as u32, &mut occupations);
        }
        sector_start.push(occupations.len());
        let index_of = occupations
            .iter()
            .enumerate()
            .map(|(i, o)| (o.clone(), i))
            .collect();
        Ok(Arc::new(OccupationBasis { modes, n_cut, occupations, index_of, sector_start }))
    }

    pub fn len(&self) -> usize {
        self.occupations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupations.is_empty()
    }

    pub fn occupation(&self, index: usize) -> &[u32] {
        &self.occupations[index]
    }

    pub fn index(&self, occ: &[u32]) -> Option<usize> {
        self.index_of.get(occ).copied()
    }

    /// Total particle number of the basis state at `index`. Sectors are
    /// contiguous so this is a range lookup.
    pub fn sector_of(&self, index: usize) -> usize {
        match self.sector_start.binary_search(&index) {
            Ok(mut s) => {
                // several empty sectors cannot occur here, but the start of
                // sector s equals the end of sector s-1 only when s-1 is empty
                while s + 1 < self.sector_start.len() - 1 && self.sector_start[s + 1] == index {
                    s += 1;
                }
                s
            }
            Err(s) => s - 1,
        }
    }

    pub fn sector_range(&self, n: usize) -> std::ops::Range<usize> {
        self.sector_start[n]..self.sector_start[n + 1]
    }
}

fn enumerate_sector(occ: &mut Vec<u32>, mode: usize, remaining: u32, out: &mut Vec<Box<[u32]>>) {
    if mode == occ.len() - 1 {
        occ[mode] = remaining;
        out.push(occ.clone().into_boxed_slice());
        occ[mode] = 0;
        return;
    }
    // lexicographic: highest count in the current mode first
    for k in (0..=remaining).rev() {
        occ[mode] = k;
        enumerate_sector(occ, mode + 1, remaining - k, out);
    }
    occ[mode] = 0;
}

/// State on the truncated Fock space. `leakage` accumulates the squared norm
/// of amplitude dropped by cutoff-violating operator applications.
#[derive(Debug, Clone)]
pub struct FockState {
    pub basis: Arc<OccupationBasis>,
    pub amplitudes: Vec<Complex64>,
    pub leakage: f64,
}

impl FockState {
    pub fn zero(basis: Arc<OccupationBasis>) -> FockState {
        let dim = basis.len();
        FockState { basis, amplitudes: vec![Complex64::new(0.0, 0.0); dim], leakage: 0.0 }
    }

    pub fn vacuum(basis: Arc<OccupationBasis>) -> FockState {
        let mut s = Self::zero(basis);
        s.amplitudes[0] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &FockState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&mut self, c: Complex64) {
        for z in &mut self.amplitudes {
            *z *= c;
        }
    }

    pub fn axpy(&mut self, c: Complex64, other: &FockState) {
        for (z, w) in self.amplitudes.iter_mut().zip(&other.amplitudes) {
            *z += c * w;
        }
        self.leakage += other.leakage;
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.scale(Complex64::new(1.0 / n, 0.0));
        }
    }
}

/// One-particle operator as its matrix in the orthonormal mode basis.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub matrix: Vec<Vec<Complex64>>,
    pub hermitian: bool,
}

impl ModeOperator {
    pub fn new(matrix: Vec<Vec<Complex64>>) -> Result<ModeOperator> {
        let m = matrix.len();
        if matrix.iter().any(|row| row.len() != m) {
            return Err(MfError::Shape("mode operator must be square".into()));
        }
        let mut herm = true;
        for i in 0..m {
            for j in 0..m {
                if (matrix[i][j] - matrix[j][i].conj()).norm() > 1e-12 {
                    herm = false;
                }
            }
        }
        Ok(ModeOperator { matrix, hermitian: herm })
    }

    pub fn identity(m: usize) -> ModeOperator {
        let mut matrix = vec![vec![Complex64::new(0.0, 0.0); m]; m];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = Complex64::new(1.0, 0.0);
        }
        ModeOperator { matrix, hermitian: true }
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    /// Operator norm via the Frobenius bound is enough for audits; tests use
    /// the exact spectral norm from the observe module where it matters.
    pub fn frobenius(&self) -> f64 {
        self.matrix
            .iter()
            .flat_map(|r| r.iter())
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn apply_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `a_i^dagger`: amplitude at `n` maps to `sqrt(n_i + 1)` at `n + e_i`.
pub fn apply_create(mode: usize, psi: &FockState) -> Result<FockState> {
    let basis = &psi.basis;
    if mode >= basis.modes {
        return Err(MfError::Parameter(format!("mode index {mode} out of range")));
    }
    let mut out = FockState::zero(basis.clone());
    out.leakage = psi.leakage;
    let mut occ = vec![0u32; basis.modes];
    for (idx, amp) in psi.amplitudes.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let src = basis.occupation(idx);
        let factor = ((src[mode] + 1) as f64).sqrt();
        if basis.sector_of(idx) + 1 > basis.n_cut {
            out.leakage += factor * factor * amp.norm_sqr();
            continue;
        }
        occ.copy_from_slice(src);
        occ[mode] += 1;
        let tgt = basis.index(&occ).expect("in-cutoff occupation must be in basis");
        out.amplitudes[tgt] += factor * amp;
    }
    Ok(out)
}

/// `a_i`: amplitude at `n` maps to `sqrt(n_i)` at `n - e_i`.
pub fn apply_annihilate(mode: usize, psi: &FockState) -> Result<FockState> {
    let basis = &psi.basis;
    if mode >= basis.modes {
        return Err(MfError::Parameter(format!("mode index {mode} out of range")));
    }
    let mut out = FockState::zero(basis.clone());
    out.leakage = psi.leakage;
    let mut occ = vec![0u32; basis.modes];
    for (idx, amp) in psi.amplitudes.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let src = basis.occupation(idx);
        if src[mode] == 0 {
            continue;
        }
        let factor = (src[mode] as f64).sqrt();
        occ.copy_from_slice(src);
        occ[mode] -= 1;
        let tgt = basis.index(&occ).expect("lowered occupation must be in basis");
        out.amplitudes[tgt] += factor * amp;
    }
    Ok(out)
}

/// `a^dagger(f) = sum_i f_i a_i^dagger` for a mode-weighted vector `f`.
pub fn apply_create_f(f: &[Complex64], psi: &FockState) -> Result<FockState> {
    ladder_f(f, psi, true)
}

/// `a(f) = sum_i conj(f_i) a_i`.
pub fn apply_annihilate_f(f: &[Complex64], psi: &FockState) -> Result<FockState> {
    ladder_f(f, psi, false)
}

fn ladder_f(f: &[Complex64], psi: &FockState, create: bool) -> Result<FockState> {
    let basis = &psi.basis;
    if f.len() != basis.modes {
        return Err(MfError::Shape(format!(
            "mode vector has {} entries, basis has {} modes",
            f.len(),
            basis.modes
        )));
    }
    let mut out = FockState::zero(basis.clone());
    out.leakage = psi.leakage;
    let mut occ = vec![0u32; basis.modes];
    for (idx, amp) in psi.amplitudes.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let src = basis.occupation(idx);
        let sector = basis.sector_of(idx);
        for (mode, fi) in f.iter().enumerate() {
            if fi.norm_sqr() == 0.0 {
                continue;
            }
            if create {
                let factor = ((src[mode] + 1) as f64).sqrt();
                let coeff = fi * factor * amp;
                if sector + 1 > basis.n_cut {
                    out.leakage += coeff.norm_sqr();
                    continue;
                }
                occ.copy_from_slice(src);
                occ[mode] += 1;
                let tgt = basis.index(&occ).unwrap();
                out.amplitudes[tgt] += coeff;
            } else {
                if src[mode] == 0 {
                    continue;
                }
                let factor = (src[mode] as f64).sqrt();
                occ.copy_from_slice(src);
                occ[mode] -= 1;
                let tgt = basis.index(&occ).unwrap();
                out.amplitudes[tgt] += fi.conj() * factor * amp;
            }
        }
    }
    Ok(out)
}

/// `dGamma(J) = sum_{ij} J_ij a_i^dagger a_j`; preserves every sector.
pub fn second_quantize(j: &ModeOperator, psi: &FockState) -> Result<FockState> {
    let basis = &psi.basis;
    if j.dim() != basis.modes {
        return Err(MfError::Shape(format!(
            "mode operator is {}x{}, basis has {} modes",
            j.dim(),
            j.dim(),
            basis.modes
        )));
    }
    let mut out = FockState::zero(basis.clone());
    out.leakage = psi.leakage;
    let mut occ = vec![0u32; basis.modes];
    for (idx, amp) in psi.amplitudes.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let src = basis.occupation(idx);
        // diagonal part
        let mut diag = Complex64::new(0.0, 0.0);
        for (i, &n) in src.iter().enumerate() {
            if n > 0 {
                diag += j.matrix[i][i] * n as f64;
            }
        }
        out.amplitudes[idx] += diag * amp;
        // hopping part
        for (q, &nq) in src.iter().enumerate() {
            if nq == 0 {
                continue;
            }
            for p in 0..basis.modes {
                if p == q || j.matrix[p][q].norm_sqr() == 0.0 {
                    continue;
                }
                occ.copy_from_slice(src);
                occ[q] -= 1;
                let factor = (nq as f64).sqrt() * ((occ[p] + 1) as f64).sqrt();
                occ[p] += 1;
                let tgt = basis.index(&occ).unwrap();
                out.amplitudes[tgt] += j.matrix[p][q] * factor * amp;
            }
        }
    }
    Ok(out)
}

/// Zero out every sector except `n`.
pub fn project_sector(n: usize, psi: &FockState) -> Result<FockState> {
    let basis = &psi.basis;
    if n > basis.n_cut {
        return Err(MfError::Parameter(format!(
            "sector {n} out of range (N_cut = {})",
            basis.n_cut
        )));
    }
    let mut out = FockState::zero(basis.clone());
    out.leakage = psi.leakage;
    let range = basis.sector_range(n);
    out.amplitudes[range.clone()].copy_from_slice(&psi.amplitudes[range]);
    Ok(out)
}

/// `<psi, N^j psi> = sum_n n^j ||P_n psi||^2`.
pub fn number_moment(j: u32, psi: &FockState) -> f64 {
    let basis = &psi.basis;
    let mut s = 0.0;
    for n in 0..=basis.n_cut {
        let mass: f64 = psi.amplitudes[basis.sector_range(n)]
            .iter()
            .map(|z| z.norm_sqr())
            .sum();
        s += (n as f64).powi(j as i32) * mass;
    }
    s
}

/// Square roots of the even- and odd-sector masses.
pub fn parity_norms(psi: &FockState) -> (f64, f64) {
    let basis = &psi.basis;
    let mut even = 0.0;
    let mut odd = 0.0;
    for n in 0..=basis.n_cut {
        let mass: f64 = psi.amplitudes[basis.sector_range(n)]
            .iter()
            .map(|z| z.norm_sqr())
            .sum();
        if n % 2 == 0 {
            even += mass;
        } else {
            odd += mass;
        }
    }
    (even.sqrt(), odd.sqrt())
}

/// Per-sector norms `||P_n psi||` for n = 0..=N_cut.
pub fn sector_norms(psi: &FockState) -> Vec<f64> {
    let basis = &psi.basis;
    (0..=basis.n_cut)
        .map(|n| {
            psi.amplitudes[basis.sector_range(n)]
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

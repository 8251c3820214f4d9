//! Observables: one-particle reduced density matrices, trace distance, and
//! the pairing functionals used to compare many-body and one-body dynamics.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{MfError, Result};
use crate::fock::{
    apply_annihilate_f, apply_create_f, number_moment, second_quantize, FockState, ModeOperator,
};
use crate::lattice::FieldVector;

/// One-particle reduced density matrix `gamma_ij = <a*_j a_i> / <N>` in the
/// orthonormal mode basis; trace 1 whenever the state has particles.
pub fn reduced_density(psi: &FockState) -> Result<DMatrix<Complex64>> {
    let basis = &psi.basis;
    let m = basis.modes;
    let total = number_moment(1, psi);
    if total <= 0.0 {
        return Err(MfError::Parameter("reduced density of a particle-free state".into()));
    }
    let mut gamma = DMatrix::<Complex64>::zeros(m, m);
    let mut occ = vec![0u32; m];
    for (idx, amp) in psi.amplitudes.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let src = basis.occupation(idx);
        for i in 0..m {
            if src[i] == 0 {
                continue;
            }
            // diagonal
            gamma[(i, i)] += Complex64::new(src[i] as f64, 0.0) * amp.norm_sqr();
            for j in 0..m {
                if j == i {
                    continue;
                }
                occ.copy_from_slice(src);
                occ[i] -= 1;
                let factor = (src[i] as f64).sqrt() * ((occ[j] + 1) as f64).sqrt();
                occ[j] += 1;
                if let Some(tgt) = basis.index(&occ) {
                    // <psi, a*_j a_i psi> contribution
                    gamma[(i, j)] += psi.amplitudes[tgt].conj() * amp * factor;
                }
            }
        }
    }
    // gamma_ij assembled as <a*_j a_i>: entry (i, j) pairs target j with source i
    Ok(gamma / Complex64::new(total, 0.0))
}

/// Rank-one projector `|phi><phi|` of a normalized field, in the mode basis.
pub fn field_projector(phi: &FieldVector) -> DMatrix<Complex64> {
    let f = phi.mode_vector();
    let m = f.len();
    DMatrix::from_fn(m, m, |i, j| f[i] * f[j].conj())
}

/// Trace norm `Tr |A - B|` of the difference of two Hermitian matrices, via
/// the eigenvalues of the difference.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let diff = a - b;
    let eig = diff.symmetric_eigen();
    eig.eigenvalues.iter().map(|l| l.abs()).sum()
}

/// Spectral norm via singular values.
pub fn operator_norm(a: &DMatrix<Complex64>) -> f64 {
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// `Tr J (gamma - |phi><phi|)`.
pub fn trace_comparison(
    j: &DMatrix<Complex64>,
    gamma: &DMatrix<Complex64>,
    phi: &FieldVector,
) -> Complex64 {
    let diff = gamma - field_projector(phi);
    (j * diff).trace()
}

/// `<left, dGamma(J) right>`.
pub fn dgamma_expectation(
    j: &ModeOperator,
    left: &FockState,
    right: &FockState,
) -> Result<Complex64> {
    Ok(left.inner(&second_quantize(j, right)?))
}

/// Field operator `(a*(g) + a(g)) psi`.
pub fn apply_field(g: &[Complex64], psi: &FockState) -> Result<FockState> {
    let mut out = apply_annihilate_f(g, psi)?;
    out.axpy(Complex64::new(1.0, 0.0), &apply_create_f(g, psi)?);
    Ok(out)
}

/// `<left, (a(g) + a*(g)) right>` for a mode vector `g`.
pub fn field_expectation(
    g: &[Complex64],
    left: &FockState,
    right: &FockState,
) -> Result<Complex64> {
    Ok(left.inner(&apply_field(g, right)?))
}

/// The two functionals that tie the fluctuation flow back to the one-body
/// comparison. With `u_chi = U(t) chi` and `u_omega = U(t) Omega` where
/// `chi = W*(sqrt(n) phi_0) (a*(phi_0))^n / sqrt(n!) Omega`:
///
/// - `E1 = (d_n / n) <U chi, dGamma(J) U Omega>`
/// - `E2 = (d_n / sqrt(n)) <U chi, (a*(J phi_t) + a(J phi_t)) U Omega>`
///
/// and `E1 + E2 = Tr J (gamma - |phi_t><phi_t|)` for Hermitian `J`, with
/// `gamma` the reduced density of the directly evolved `n`-particle state.
pub fn pairing_functionals(
    j: &ModeOperator,
    phi_t_modes: &[Complex64],
    n: usize,
    u_chi: &FockState,
    u_omega: &FockState,
) -> Result<(Complex64, Complex64)> {
    let dn = crate::coherent::d_n(n);
    let e1 = dgamma_expectation(j, u_chi, u_omega)? * (dn / n as f64);
    let jphi = j.apply_vec(phi_t_modes);
    let e2 = field_expectation(&jphi, u_chi, u_omega)? * (dn / (n as f64).sqrt());
    Ok((e1, e2))
}

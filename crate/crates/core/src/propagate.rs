//! Time propagation on the truncated Fock space.
//!
//! `exp(-i G tau)` for a Hermitian generator is applied with a Lanczos/Krylov
//! scheme: build a small real tridiagonal projection, exponentiate it by dense
//! eigendecomposition, and monitor the standard a-posteriori residual
//! `beta_m |u_m|`. If the Krylov space saturates before the residual target is
//! met, the interval is bisected and the scheme recurses on substeps.
//!
//! Time-dependent flows use the exponential midpoint rule: one Krylov
//! exponential per step with the generator frozen at the half-step time,
//! second order in the step size and exactly unitary.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{MfError, Result};
use crate::fock::FockState;
use crate::generators::{assemble_fluctuation, FlowKind, SparseGenerator};
use crate::hartree::HartreeTrajectory;
use crate::lattice::Grid;

/// Controls for the Krylov exponential.
#[derive(Debug, Clone, Copy)]
pub struct KrylovParams {
    /// Residual target per unit application (split across substeps).
    pub tol: f64,
    /// Maximum Krylov dimension before the interval is bisected.
    pub max_dim: usize,
    /// Hard cap on bisection; exceeding it is a convergence failure.
    pub max_substeps: usize,
}

impl Default for KrylovParams {
    fn default() -> KrylovParams {
        KrylovParams { tol: 1e-12, max_dim: 40, max_substeps: 1 << 16 }
    }
}

/// Apply `exp(-i tau G)` to `psi` for a Hermitian operator given by `apply`.
pub fn expm_apply<F>(apply: F, psi: &FockState, tau: f64, p: &KrylovParams) -> Result<FockState>
where
    F: Fn(&FockState) -> Result<FockState>,
{
    let norm = psi.norm();
    if tau == 0.0 || norm == 0.0 {
        return Ok(psi.clone());
    }
    let mut n_sub = 1usize;
    'retry: loop {
        let sub_tau = tau / n_sub as f64;
        // per-substep target, floored near machine precision
        let sub_tol = (p.tol / n_sub as f64).max(1e-14);
        let mut state = psi.clone();
        for _ in 0..n_sub {
            match lanczos_exp(&apply, &state, sub_tau, sub_tol, p.max_dim)? {
                Some(next) => state = next,
                None => {
                    // residual target missed at the maximum Krylov dimension
                    if n_sub >= p.max_substeps {
                        return Err(MfError::Convergence(format!(
                            "Krylov exponential failed to converge with {n_sub} substeps"
                        )));
                    }
                    n_sub *= 2;
                    continue 'retry;
                }
            }
        }
        state.leakage = psi.leakage;
        return Ok(state);
    }
}

/// One Lanczos exponential; `None` when the residual target is unreachable at
/// dimension `max_dim`.
fn lanczos_exp<F>(
    apply: &F,
    psi: &FockState,
    tau: f64,
    tol: f64,
    max_dim: usize,
) -> Result<Option<FockState>>
where
    F: Fn(&FockState) -> Result<FockState>,
{
    let beta0 = psi.norm();
    let mut v = psi.clone();
    v.scale(Complex64::new(1.0 / beta0, 0.0));
    let mut basis_vecs = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    for j in 0..max_dim {
        let mut w = apply(&basis_vecs[j])?;
        let alpha = basis_vecs[j].inner(&w).re;
        alphas.push(alpha);
        w.axpy(Complex64::new(-alpha, 0.0), &basis_vecs[j]);
        if j > 0 {
            let b = betas[j - 1];
            w.axpy(Complex64::new(-b, 0.0), &basis_vecs[j - 1]);
        }
        // full reorthogonalization: the spaces are tiny next to an apply
        for u in &basis_vecs {
            let c = u.inner(&w);
            if c.norm_sqr() > 0.0 {
                w.axpy(-c, u);
            }
        }
        let beta = w.norm();
        let m = j + 1;
        let u = tridiag_exp_e1(&alphas, &betas, tau);
        let residual = beta * u[m - 1].norm();
        // roundoff floor: eigenvector entries carry ~eps * ||T|| noise, so
        // beta * |u_last| cannot drop below that scale no matter the substep
        let t_scale = alphas
            .iter()
            .map(|a| a.abs())
            .chain(betas.iter().copied())
            .chain(std::iter::once(beta))
            .fold(0.0f64, f64::max);
        if residual <= tol.max(t_scale * 1e-15) || beta <= 1e-14 {
            let mut out = FockState::zero(psi.basis.clone());
            for (k, uv) in u.iter().enumerate() {
                out.axpy(uv * beta0, &basis_vecs[k]);
            }
            out.leakage = psi.leakage;
            return Ok(Some(out));
        }
        betas.push(beta);
        w.scale(Complex64::new(1.0 / beta, 0.0));
        basis_vecs.push(w);
    }
    Ok(None)
}

/// `exp(-i tau T) e_1` for the real symmetric tridiagonal `T`.
fn tridiag_exp_e1(alphas: &[f64], betas: &[f64], tau: f64) -> Vec<Complex64> {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = t.symmetric_eigen();
    let mut u = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..m {
        let lambda = eig.eigenvalues[k];
        let phase = Complex64::from_polar(1.0, -tau * lambda);
        let weight = eig.eigenvectors[(0, k)];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui += phase * weight * eig.eigenvectors[(i, k)];
        }
    }
    u
}

/// Apply `exp(-i t G)` for a static sparse generator.
pub fn evolve_static(
    g: &SparseGenerator,
    psi: &FockState,
    t: f64,
    p: &KrylovParams,
) -> Result<FockState> {
    let mut out = expm_apply(|s| g.apply(s), psi, t, p)?;
    // continuous leakage estimate for the whole interval
    let flux = g.leakage_flux(psi);
    out.leakage += (t.abs() * flux).powi(2);
    Ok(out)
}

/// Specification of a time-dependent fluctuation flow around a stored
/// one-body trajectory.
pub struct FlowSpec<'a> {
    pub grid: &'a Grid,
    pub v: &'a [f64],
    pub traj: &'a HartreeTrajectory,
    /// Coupling normalization (the particle number of the modeled system).
    pub n: f64,
    pub kind: FlowKind,
}

/// Evolve all `states` from `t0` to `t1` under the flow, sharing one
/// generator assembly per step. The step size should be an even multiple of
/// the stored trajectory step so midpoint lookups are exact.
pub fn evolve_fluctuation(
    spec: &FlowSpec,
    states: &mut [FockState],
    t0: f64,
    t1: f64,
    dt: f64,
    p: &KrylovParams,
) -> Result<()> {
    if states.is_empty() {
        return Ok(());
    }
    if !(dt > 0.0) {
        return Err(MfError::Parameter(format!("step size must be positive, got {dt}")));
    }
    let span = t1 - t0;
    let n_steps = (span.abs() / dt).round().max(1.0) as usize;
    let h = span / n_steps as f64;
    let basis = states[0].basis.clone();
    for step in 0..n_steps {
        let t_mid = t0 + (step as f64 + 0.5) * h;
        let phi = spec.traj.at(t_mid)?;
        let g = assemble_fluctuation(&basis, spec.grid, spec.v, phi, spec.n, spec.kind)?;
        for state in states.iter_mut() {
            let flux = g.leakage_flux(state);
            let mut next = expm_apply(|s| g.apply(s), state, h, p)?;
            next.leakage += (h.abs() * flux).powi(2);
            *state = next;
        }
    }
    Ok(())
}

/// Residual of the conjugation identity tying the two propagation routes
/// together: on a test state, compare
/// `W*(f0) e^{iHt} (a_x - sqrt(n) phi_t(x)) e^{-iHt} W(f0) psi`
/// against `U*(t) a_x U(t) psi`, where `f0 = sqrt(n) phi_0` and `U` is the
/// full fluctuation flow. Exact in the untruncated space; the returned L2
/// residual collects truncation and stepping error of the whole pipeline.
pub fn conjugated_annihilation_residual(
    spec: &FlowSpec,
    mode: usize,
    t: f64,
    dt: f64,
    psi: &FockState,
    p: &KrylovParams,
) -> Result<f64> {
    use crate::coherent::apply_weyl;
    use crate::fock::apply_annihilate;
    use crate::generators::assemble_hamiltonian;

    let basis = psi.basis.clone();
    let sqrt_n = spec.n.sqrt();
    let phi0 = spec.traj.at(0.0)?;
    let f0: Vec<Complex64> = phi0.mode_vector().iter().map(|z| z * sqrt_n).collect();
    let f0_neg: Vec<Complex64> = f0.iter().map(|z| -z).collect();
    let phit = spec.traj.at(t)?.mode_vector();
    let h = assemble_hamiltonian(&basis, spec.grid, spec.v, spec.n)?;

    // Hamiltonian route
    let displaced = apply_weyl(&f0, psi, p)?;
    let fwd = evolve_static(&h, &displaced, t, p)?;
    let mut shifted = apply_annihilate(mode, &fwd)?;
    shifted.axpy(-sqrt_n * phit[mode], &fwd);
    let back = evolve_static(&h, &shifted, -t, p)?;
    let lhs = apply_weyl(&f0_neg, &back, p)?;

    // fluctuation route
    let mut states = [psi.clone()];
    evolve_fluctuation(spec, &mut states, 0.0, t, dt, p)?;
    let mut moved = [apply_annihilate(mode, &states[0])?];
    evolve_fluctuation(spec, &mut moved, t, 0.0, dt, p)?;

    let mut err2 = 0.0f64;
    for k in 0..basis.len() {
        err2 += (lhs.amplitudes[k] - moved[0].amplitudes[k]).norm_sqr();
    }
    Ok(err2.sqrt())
}

//! Time integration of the lattice Hartree equation
//! `i d/dt phi = -Delta_h phi + (V * |phi|^2) phi`
//! by Strang splitting: half kinetic phase in Fourier space, full pointwise
//! nonlinear phase, half kinetic phase. Each step is exactly unitary.

use num_complex::Complex64;

use crate::error::{MfError, Result};
use crate::lattice::{
    convolve_density, fft_forward, fft_inverse, kinetic_form, norms, sample_potential,
    FieldVector, Grid, PotentialSpec,
};

/// Uniformly sampled Hartree trajectory. `states[k]` is the field at
/// `times[k] = k * dt * stride`.
#[derive(Debug, Clone)]
pub struct HartreeTrajectory {
    pub dt: f64,
    pub stride: usize,
    pub states: Vec<FieldVector>,
}

impl HartreeTrajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| k as f64 * self.dt * self.stride as f64).collect()
    }

    pub fn horizon(&self) -> f64 {
        (self.states.len().saturating_sub(1)) as f64 * self.dt * self.stride as f64
    }

    /// Field at the stored step nearest to `t` (ties round up).
    pub fn at(&self, t: f64) -> Result<&FieldVector> {
        let step = self.dt * self.stride as f64;
        let k = (t / step).round() as isize;
        if k < 0 || k as usize >= self.states.len() {
            return Err(MfError::Parameter(format!(
                "time {t} outside stored trajectory [0, {}]",
                self.horizon()
            )));
        }
        Ok(&self.states[k as usize])
    }
}

/// Evolve `phi0` for time `T` with step `dt`, storing every `stride`-th step.
pub fn evolve(
    phi0: &FieldVector,
    spec: &PotentialSpec,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<HartreeTrajectory> {
    if !(dt > 0.0) {
        return Err(MfError::Parameter(format!("dt must be positive, got {dt}")));
    }
    if t_final < 0.0 {
        return Err(MfError::Parameter(format!("horizon must be nonnegative, got {t_final}")));
    }
    let stride = stride.max(1);
    let grid = phi0.grid;
    let v = sample_potential(spec, &grid)?;
    let n_steps = (t_final / dt).round() as usize;

    let m = grid.sites();
    let half_kinetic: Vec<Complex64> = (0..m)
        .map(|k| Complex64::from_polar(1.0, -grid.laplacian_symbol(k) * dt / 2.0))
        .collect();

    let mut state = phi0.values.clone();
    let mut states = Vec::with_capacity(n_steps / stride + 1);
    states.push(phi0.clone());

    for step in 1..=n_steps {
        kinetic_phase(&grid, &mut state, &half_kinetic);
        nonlinear_phase(&grid, &v, dt, &mut state)?;
        kinetic_phase(&grid, &mut state, &half_kinetic);
        if state.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(MfError::Divergence { step, what: "non-finite Hartree state".into() });
        }
        if step % stride == 0 {
            states.push(FieldVector { grid, values: state.clone() });
        }
    }
    Ok(HartreeTrajectory { dt, stride, states })
}

fn kinetic_phase(grid: &Grid, state: &mut Vec<Complex64>, phase: &[Complex64]) {
    let mut hat = fft_forward(grid, state);
    for (z, p) in hat.iter_mut().zip(phase) {
        *z *= p;
    }
    *state = fft_inverse(grid, &hat);
}

fn nonlinear_phase(grid: &Grid, v: &[f64], dt: f64, state: &mut [Complex64]) -> Result<()> {
    let rho: Vec<f64> = state.iter().map(|z| z.norm_sqr()).collect();
    let mean_field = convolve_density(v, &rho, grid)?;
    for (z, &u) in state.iter_mut().zip(&mean_field) {
        *z *= Complex64::from_polar(1.0, -dt * u);
    }
    Ok(())
}

/// Hartree energy
/// `E = 1/2 <phi, -Delta_h phi> + 1/4 h^{2d} sum_{x,y} V(x-y) |phi(x)|^2 |phi(y)|^2`.
pub fn energy(phi: &FieldVector, spec: &PotentialSpec) -> Result<f64> {
    let grid = phi.grid;
    let v = sample_potential(spec, &grid)?;
    let kinetic = 0.5 * kinetic_form(phi);
    let rho: Vec<f64> = phi.values.iter().map(|z| z.norm_sqr()).collect();
    let mean_field = convolve_density(&v, &rho, &grid)?;
    let hd = grid.cell_volume();
    let potential = 0.25 * hd * rho.iter().zip(&mean_field).map(|(r, u)| r * u).sum::<f64>();
    Ok(kinetic + potential)
}

/// Space-time norm `|| phi ||_{L^2((0,T), L^inf)}` by left-endpoint quadrature
/// over the stored steps.
pub fn strichartz_norm(traj: &HartreeTrajectory) -> f64 {
    let step = traj.dt * traj.stride as f64;
    let n = traj.states.len();
    if n <= 1 {
        return 0.0;
    }
    let mut s = 0.0;
    for state in &traj.states[..n - 1] {
        let sup = state.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        s += step * sup * sup;
    }
    s.sqrt()
}

/// `sup_x || V(x - .) phi ||_{L^2} = max_x (h^d sum_y V(x-y)^2 |phi(y)|^2)^{1/2}`.
pub fn sup_potential_slice(spec: &PotentialSpec, phi: &FieldVector) -> Result<f64> {
    let grid = phi.grid;
    let v = sample_potential(spec, &grid)?;
    let v2: Vec<f64> = v.iter().map(|x| x * x).collect();
    let rho: Vec<f64> = phi.values.iter().map(|z| z.norm_sqr()).collect();
    let conv = convolve_density(&v2, &rho, &grid)?;
    Ok(conv.iter().cloned().fold(0.0, f64::max).sqrt())
}

/// Per-step diagnostics row for CSV export: time, mass, energy, h1, linf.
pub fn diagnostics(traj: &HartreeTrajectory, spec: &PotentialSpec) -> Result<Vec<[f64; 5]>> {
    let mut rows = Vec::with_capacity(traj.states.len());
    for (t, state) in traj.times().into_iter().zip(&traj.states) {
        let n = norms(state, 2.0);
        rows.push([t, state.mass(), energy(state, spec)?, n.h1, n.linf]);
    }
    Ok(rows)
}

//! Experiment drivers: convergence-rate scans, fluctuation diagnostics, and
//! the identity cross-check tying the fluctuation flow to the one-body
//! comparison. Reports are written as CSV plus a JSON summary and are
//! byte-reproducible for a fixed config and binary; wall-clock timings live
//! in the JSON summary only so the CSV stays deterministic.

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;

use crate::coherent::{apply_weyl, coherent_state, product_state, tail_cutoff};
use crate::config::RunConfig;
use crate::error::{MfError, Result};
use crate::fock::{
    number_moment, parity_norms, FockState, ModeOperator, OccupationBasis,
};
use crate::generators::{assemble_cubic, assemble_hamiltonian, FlowKind};
use crate::hartree::{self, HartreeTrajectory};
use crate::lattice::{sample_potential, FieldVector, Grid};
use crate::observe::{
    apply_field, field_projector, operator_norm, pairing_functionals, reduced_density,
    trace_comparison, trace_distance,
};
use crate::propagate::{evolve_fluctuation, evolve_static, FlowSpec, KrylovParams};

/// Distances below this are treated as numerical zero and excluded from fits.
pub const FIT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub package: &'static str,
    pub version: &'static str,
}

fn versions() -> Versions {
    Versions { package: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") }
}

/// One measured point of a scan.
#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub t: f64,
    pub distance: f64,
    pub basis_dim: usize,
    pub leakage: f64,
    pub wall_seconds: f64,
}

/// Least-squares line through `(ln n, ln distance)` at one fixed time.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub t: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    pub degenerate: bool,
}

/// Unweighted log-log fit. The fit is marked degenerate when fewer than
/// three points survive the numerical floor, any point sits at the floor, or
/// the distances are flat across the scan (a line through constant data
/// carries no scaling information; null experiments land here).
pub fn fit_log_log(t: f64, data: &[(f64, f64)]) -> SlopeFit {
    let floored = data.iter().any(|&(_, d)| d < FIT_FLOOR);
    let pts: Vec<(f64, f64)> = data
        .iter()
        .filter(|&&(_, d)| d >= FIT_FLOOR)
        .map(|&(n, d)| (n.ln(), d.ln()))
        .collect();
    let spread = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
        - pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if pts.len() < 3 || floored || spread < 0.1 {
        return SlopeFit { t, slope: 0.0, intercept: 0.0, r2: 0.0, points: pts.len(), degenerate: true };
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = m * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return SlopeFit { t, slope: 0.0, intercept: 0.0, r2: 0.0, points: pts.len(), degenerate: true };
    }
    let slope = (m * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / m;
    let mean_y = sy / m;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot < 1e-30 { 1.0 } else { 1.0 - ss_res / ss_tot };
    SlopeFit { t, slope, intercept, r2, points: pts.len(), degenerate: false }
}

/// Scan report: measured distances plus per-time slope fits.
#[derive(Debug, Serialize)]
pub struct RateReport {
    pub config: RunConfig,
    pub versions: Versions,
    pub points: Vec<RatePoint>,
    pub fits: Vec<SlopeFit>,
    pub wall_seconds: f64,
}

impl RateReport {
    /// Deterministic CSV body: config echo comment, header, one row per
    /// `(n, t)`. Timings are deliberately absent; see the JSON summary.
    pub fn csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.config.echo()));
        out.push_str("n,t,distance,basis_dim,leakage\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.n, p.t, p.distance, p.basis_dim, p.leakage
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Write `<stem>.csv` and `<stem>_summary.json` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.csv())?;
        std::fs::write(dir.join(format!("{stem}_summary.json")), self.summary_json())?;
        Ok(())
    }
}

fn krylov_params(cfg: &RunConfig) -> KrylovParams {
    KrylovParams {
        tol: cfg.fock.krylov_tol,
        max_dim: cfg.fock.krylov_dim,
        ..KrylovParams::default()
    }
}

fn ensure_leakage(leak: f64, budget: f64, what: &str) -> Result<()> {
    if leak > budget {
        return Err(MfError::Truncation(format!(
            "{what}: accumulated leakage {leak:.3e} exceeds budget {budget:.3e}"
        )));
    }
    Ok(())
}

/// Shared setup for everything driven by one config: sampled potential,
/// normalized initial field, and one stored trajectory reused by every
/// comparison so that both sides of any identity see the same `phi_t`.
pub struct Bench {
    grid: Grid,
    v: Vec<f64>,
    phi0: FieldVector,
    traj: HartreeTrajectory,
    kp: KrylovParams,
}

impl Bench {
    fn prepare(cfg: &RunConfig) -> Result<Bench> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let spec = cfg.potential_spec();
        let v = sample_potential(&spec, &grid)?;
        let phi0 = cfg.initial_field()?;
        let traj = hartree::evolve(&phi0, &spec, cfg.hartree.dt, cfg.hartree.t_final, 1)?;
        Ok(Bench { grid, v, phi0, traj, kp: krylov_params(cfg) })
    }

    /// Flow specification sharing this bench's stored trajectory.
    pub fn flow(&self, n: f64, kind: FlowKind) -> FlowSpec<'_> {
        FlowSpec { grid: &self.grid, v: &self.v, traj: &self.traj, n, kind }
    }

    /// Mode components of the prepared initial field.
    pub fn initial_modes(&self) -> Vec<Complex64> {
        self.phi0.mode_vector()
    }
}

/// Run `f` over `items`, possibly on worker threads, and return the results
/// in input order regardless of completion order.
fn map_ordered<T, F>(items: &[usize], threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(|&n| f(n)).collect();
    }
    let slots: Vec<Mutex<Option<Result<T>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for tid in 0..threads {
            let slots = &slots;
            let f = &f;
            s.spawn(move || {
                for (i, &n) in items.iter().enumerate() {
                    if i % threads == tid {
                        *slots[i].lock().unwrap() = Some(f(n));
                    }
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled its slot"))
        .collect()
}

fn fits_per_time(cfg: &RunConfig, points: &[RatePoint]) -> Vec<SlopeFit> {
    cfg.scan
        .t_list
        .iter()
        .map(|&t| {
            let data: Vec<(f64, f64)> = points
                .iter()
                .filter(|p| (p.t - t).abs() < 1e-12)
                .map(|p| (p.n as f64, p.distance))
                .collect();
            fit_log_log(t, &data)
        })
        .collect()
}

fn scan_core<B>(cfg: &RunConfig, build: B) -> Result<RateReport>
where
    B: Fn(&Bench, usize) -> Result<(Arc<OccupationBasis>, FockState)> + Sync,
{
    let start = Instant::now();
    let bench = Bench::prepare(cfg)?;
    let per_n = map_ordered(&cfg.scan.n_list, cfg.run.threads, |n| -> Result<Vec<RatePoint>> {
        let n_start = Instant::now();
        let (basis, mut psi) = build(&bench, n).map_err(|e| label_n(e, n))?;
        let h = assemble_hamiltonian(&basis, &bench.grid, &bench.v, n as f64)
            .map_err(|e| label_n(e, n))?;
        let mut points = Vec::new();
        let mut t_prev = 0.0;
        for &t in &cfg.scan.t_list {
            psi = evolve_static(&h, &psi, t - t_prev, &bench.kp).map_err(|e| label_n(e, n))?;
            t_prev = t;
            ensure_leakage(psi.leakage, cfg.budgets.leakage, "scan state").map_err(|e| label_n(e, n))?;
            let gamma = reduced_density(&psi).map_err(|e| label_n(e, n))?;
            let phit = bench.traj.at(t).map_err(|e| label_n(e, n))?;
            let distance = trace_distance(&gamma, &field_projector(phit));
            points.push(RatePoint {
                n,
                t,
                distance,
                basis_dim: basis.len(),
                leakage: psi.leakage,
                wall_seconds: n_start.elapsed().as_secs_f64(),
            });
        }
        Ok(points)
    })?;
    let points: Vec<RatePoint> = per_n.into_iter().flatten().collect();
    let fits = fits_per_time(cfg, &points);
    Ok(RateReport {
        config: cfg.clone(),
        versions: versions(),
        points,
        fits,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn label_n(e: MfError, n: usize) -> MfError {
    match e {
        MfError::Capacity(s) => MfError::Capacity(format!("n = {n}: {s}")),
        MfError::Truncation(s) => MfError::Truncation(format!("n = {n}: {s}")),
        MfError::Convergence(s) => MfError::Convergence(format!("n = {n}: {s}")),
        other => other,
    }
}

/// Distance between the evolved `n`-particle product state's reduced density
/// and the one-body trajectory, over the configured `(n, t)` scan.
pub fn rate_scan(cfg: &RunConfig) -> Result<RateReport> {
    scan_core(cfg, |bench, n| {
        let basis =
            OccupationBasis::with_capacity(bench.grid.sites(), n, cfg.budgets.capacity)?;
        let psi = product_state(&basis, &bench.phi0.mode_vector(), n)?;
        Ok((basis, psi))
    })
}

/// Same comparison started from the displaced vacuum `W(sqrt(n) phi) Omega`
/// on the full truncated Fock space.
pub fn coherent_rate_scan(cfg: &RunConfig) -> Result<RateReport> {
    scan_core(cfg, |bench, n| {
        // n + 8 sqrt(n) keeps the Poisson tail below the leakage budget while
        // staying inside the capacity budget on six-site lattices
        let n_cut = cfg
            .fock
            .n_cut
            .unwrap_or_else(|| (n as f64 + 8.0 * (n as f64).sqrt()).ceil() as usize);
        let basis =
            OccupationBasis::with_capacity(bench.grid.sites(), n_cut, cfg.budgets.capacity)?;
        let f: Vec<Complex64> = bench
            .phi0
            .mode_vector()
            .iter()
            .map(|z| z * (n as f64).sqrt())
            .collect();
        let psi = coherent_state(&basis, &f)?;
        ensure_leakage(psi.leakage, cfg.budgets.leakage, "initial coherent state")?;
        Ok((basis, psi))
    })
}

/// Time series of the comparison distance for a single particle number (the
/// largest configured one), sampled on a uniform grid up to the horizon.
pub fn nbody_trace(cfg: &RunConfig, samples: usize) -> Result<RateReport> {
    let start = Instant::now();
    let bench = Bench::prepare(cfg)?;
    let n = *cfg.scan.n_list.last().ok_or_else(|| MfError::Config("empty scan.n_list".into()))?;
    let samples = samples.max(1);
    let basis = OccupationBasis::with_capacity(bench.grid.sites(), n, cfg.budgets.capacity)?;
    let mut psi = product_state(&basis, &bench.phi0.mode_vector(), n)?;
    let h = assemble_hamiltonian(&basis, &bench.grid, &bench.v, n as f64)?;
    let step = cfg.hartree.t_final / samples as f64;
    let mut points = Vec::new();
    let mut t = 0.0;
    for k in 1..=samples {
        let t_next = step * k as f64;
        psi = evolve_static(&h, &psi, t_next - t, &bench.kp)?;
        t = t_next;
        let gamma = reduced_density(&psi)?;
        let distance = trace_distance(&gamma, &field_projector(bench.traj.at(t)?));
        points.push(RatePoint {
            n,
            t,
            distance,
            basis_dim: basis.len(),
            leakage: psi.leakage,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(RateReport {
        config: cfg.clone(),
        versions: versions(),
        points,
        fits: Vec::new(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Seeded dense Hermitian test observable with entries of order one.
pub fn random_hermitian(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let mut h = DMatrix::<Complex64>::zeros(m, m);
    for i in 0..m {
        h[(i, i)] = Complex64::new(rng.gen::<f64>() - 0.5, 0.0);
        for j in 0..i {
            let z = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    h
}

fn mode_operator(j: &DMatrix<Complex64>) -> Result<ModeOperator> {
    let m = j.nrows();
    ModeOperator::new((0..m).map(|i| (0..m).map(|k| j[(i, k)]).collect()).collect())
}

/// One row of the identity cross-check for a single observable.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityRow {
    pub lhs_re: f64,
    pub lhs_im: f64,
    pub rhs_re: f64,
    pub rhs_im: f64,
    pub defect: f64,
    pub j_norm: f64,
}

/// Cross-check tying the two halves of the codebase together: for each
/// observable `J`, compare `Tr J (gamma - |phi_t><phi_t|)` from direct
/// `n`-particle propagation against the sum of the two pairing functionals
/// evaluated on the fluctuation flow.
pub fn pairing_identity(
    cfg: &RunConfig,
    n: usize,
    t: f64,
    n_cut: usize,
    js: &[DMatrix<Complex64>],
) -> Result<Vec<IdentityRow>> {
    let grid = cfg.grid()?;
    let spec = cfg.potential_spec();
    let v = sample_potential(&spec, &grid)?;
    let phi0 = cfg.initial_field()?;
    let traj = hartree::evolve(&phi0, &spec, cfg.hartree.dt, t, 1)?;
    let kp = krylov_params(cfg);
    let f0m = phi0.mode_vector();

    // direct route: e^{-iHt} on the n-particle product state
    let sector_basis = OccupationBasis::with_capacity(grid.sites(), n, cfg.budgets.capacity)?;
    let h = assemble_hamiltonian(&sector_basis, &grid, &v, n as f64)?;
    let psi_t = evolve_static(&h, &product_state(&sector_basis, &f0m, n)?, t, &kp)?;
    let gamma = reduced_density(&psi_t)?;
    let phit = traj.at(t)?.clone();

    // fluctuation route: evolve the paired states together under one flow
    let basis = OccupationBasis::with_capacity(grid.sites(), n_cut, cfg.budgets.capacity)?;
    let f0_neg: Vec<Complex64> = f0m.iter().map(|z| -z * (n as f64).sqrt()).collect();
    let chi = apply_weyl(&f0_neg, &product_state(&basis, &f0m, n)?, &kp)?;
    let omega = FockState::vacuum(basis.clone());
    let mut states = [chi, omega];
    let flow = FlowSpec { grid: &grid, v: &v, traj: &traj, n: n as f64, kind: FlowKind::Full };
    evolve_fluctuation(&flow, &mut states, 0.0, t, cfg.fock.gen_dt, &kp)?;
    for s in &states {
        ensure_leakage(s.leakage, cfg.budgets.leakage, "fluctuation state")?;
    }

    let phit_modes = phit.mode_vector();
    js.iter()
        .map(|jm| {
            let lhs = trace_comparison(jm, &gamma, &phit);
            let op = mode_operator(jm)?;
            let (e1, e2) = pairing_functionals(&op, &phit_modes, n, &states[0], &states[1])?;
            let rhs = e1 + e2;
            Ok(IdentityRow {
                lhs_re: lhs.re,
                lhs_im: lhs.im,
                rhs_re: rhs.re,
                rhs_im: rhs.im,
                defect: (lhs - rhs).norm(),
                j_norm: operator_norm(jm),
            })
        })
        .collect()
}

/// `|| cubic_part(n) psi ||` for a fixed deterministic low-sector test state,
/// per particle number. The entries carry `n^{-1/2}` exactly, so the log-log
/// slope across `n` is `-1/2` to rounding.
pub fn cubic_scaling(cfg: &RunConfig, n_cut: usize) -> Result<Vec<(usize, f64)>> {
    let bench = Bench::prepare(cfg)?;
    let basis = OccupationBasis::with_capacity(bench.grid.sites(), n_cut, cfg.budgets.capacity)?;
    let psi = low_sector_probe(&basis);
    cfg.scan
        .n_list
        .iter()
        .map(|&n| {
            let g = assemble_cubic(&basis, &bench.grid, &bench.v, &bench.phi0, n as f64)?;
            Ok((n, g.apply(&psi)?.norm()))
        })
        .collect()
}

/// Deterministic normalized state supported on sectors 0..=2.
fn low_sector_probe(basis: &Arc<OccupationBasis>) -> FockState {
    let mut psi = FockState::zero(basis.clone());
    let top = basis.sector_range(2.min(basis.n_cut)).end;
    for (k, z) in psi.amplitudes[..top].iter_mut().enumerate() {
        *z = Complex64::new(1.0 + 0.1 * k as f64, 0.3 - 0.05 * k as f64);
    }
    psi.normalize();
    psi
}

/// `|| (U*(t) (a(f)+a*(f)) U(t) - U~*(t) (a(f)+a*(f)) U~(t)) Omega ||` where
/// `U` is the full fluctuation flow and `U~` its quadratic part; the norm
/// decays like `n^{-1/2}`.
pub fn field_difference_gap(
    cfg: &RunConfig,
    bench: &Bench,
    basis: &Arc<OccupationBasis>,
    n: usize,
    t: f64,
    f: &[Complex64],
) -> Result<f64> {
    let mut results = Vec::with_capacity(2);
    for kind in [FlowKind::Full, FlowKind::Quadratic] {
        let flow = bench.flow(n as f64, kind);
        let mut fwd = [FockState::vacuum(basis.clone())];
        evolve_fluctuation(&flow, &mut fwd, 0.0, t, cfg.fock.gen_dt, &bench.kp)?;
        let mut back = [apply_field(f, &fwd[0])?];
        evolve_fluctuation(&flow, &mut back, t, 0.0, cfg.fock.gen_dt, &bench.kp)?;
        results.push(back.into_iter().next().unwrap());
    }
    let mut diff = results.swap_remove(0);
    diff.axpy(Complex64::new(-1.0, 0.0), &results[0]);
    Ok(diff.norm())
}

/// Prepared bench handed to the granular probes so a caller can share one
/// trajectory across all of them.
pub fn prepare_bench(cfg: &RunConfig) -> Result<Bench> {
    Bench::prepare(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub full_mean: f64,
    pub full_second: f64,
    pub full_leakage: f64,
    pub quad_mean: f64,
    pub quad_second: f64,
    pub quad_even_mass: f64,
    pub quad_odd_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapRow {
    pub m_cut: usize,
    pub overlap_defect: f64,
    pub norm_gap: f64,
}

/// Structured fluctuation diagnostics around one configured experiment.
#[derive(Debug, Serialize)]
pub struct FluctuationReport {
    pub config: RunConfig,
    pub versions: Versions,
    /// Number moments of the full and quadratic flows from the vacuum, and
    /// the parity masses of the quadratic one.
    pub moments: Vec<MomentRow>,
    /// `(n, ||cubic psi||)` with its algebraic `-1/2` slope.
    pub cubic: Vec<(usize, f64)>,
    pub cubic_fit: SlopeFit,
    /// `(n, gap)` for the full-vs-quadratic conjugated field difference.
    pub gaps: Vec<(usize, f64)>,
    pub gap_fit: SlopeFit,
    /// Full flow against the cubic-gated flow at cutoffs `{0, n_cut/4, n_cut}`.
    pub overlaps: Vec<OverlapRow>,
    /// Identity cross-check at the smallest configured `(n, t)`.
    pub identity: Vec<IdentityRow>,
    pub wall_seconds: f64,
}

impl FluctuationReport {
    pub fn csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.config.echo()));
        out.push_str("t,full_mean,full_second,full_leakage,quad_mean,quad_second,quad_even_mass,quad_odd_mass\n");
        for r in &self.moments {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.t, r.full_mean, r.full_second, r.full_leakage, r.quad_mean, r.quad_second,
                r.quad_even_mass, r.quad_odd_mass
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.csv())?;
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        std::fs::write(dir.join(format!("{stem}_summary.json")), s)?;
        Ok(())
    }
}

/// Runs every fluctuation probe on one configuration: moments and parity
/// masses over the time grid, cubic-term and field-difference scalings over
/// the particle numbers, cutoff-gated flow overlaps, and the identity
/// cross-check for seeded random observables.
pub fn fluctuation_suite(cfg: &RunConfig) -> Result<FluctuationReport> {
    let start = Instant::now();
    let bench = prepare_bench(cfg)?;
    let n_cut = cfg.fock.n_cut.unwrap_or(12);
    let basis = OccupationBasis::with_capacity(bench.grid.sites(), n_cut, cfg.budgets.capacity)?;
    let n_ref = *cfg.scan.n_list.last().ok_or_else(|| MfError::Config("empty scan.n_list".into()))?;
    let t_probe = *cfg.scan.t_list.first().ok_or_else(|| MfError::Config("empty scan.t_list".into()))?;

    // moments and parity masses along the time grid
    let mut full_state = [FockState::vacuum(basis.clone())];
    let mut quad_state = [FockState::vacuum(basis.clone())];
    let mut moments = Vec::new();
    let mut t_prev = 0.0;
    for &t in &cfg.scan.t_list {
        let full_flow = bench.flow(n_ref as f64, FlowKind::Full);
        evolve_fluctuation(&full_flow, &mut full_state, t_prev, t, cfg.fock.gen_dt, &bench.kp)?;
        let quad_flow = bench.flow(n_ref as f64, FlowKind::Quadratic);
        evolve_fluctuation(&quad_flow, &mut quad_state, t_prev, t, cfg.fock.gen_dt, &bench.kp)?;
        t_prev = t;
        let (even, odd) = parity_norms(&quad_state[0]);
        // the leakage audit is recorded, not enforced: it is a pessimistic
        // worst-case estimate, and these rows are diagnostics
        moments.push(MomentRow {
            t,
            full_mean: number_moment(1, &full_state[0]),
            full_second: number_moment(2, &full_state[0]),
            full_leakage: full_state[0].leakage,
            quad_mean: number_moment(1, &quad_state[0]),
            quad_second: number_moment(2, &quad_state[0]),
            quad_even_mass: even * even,
            quad_odd_mass: odd * odd,
        });
    }

    // cubic-term scaling (algebraic in n)
    let cubic = cubic_scaling(cfg, n_cut)?;
    let cubic_data: Vec<(f64, f64)> = cubic.iter().map(|&(n, d)| (n as f64, d)).collect();
    let cubic_fit = fit_log_log(t_probe, &cubic_data);

    // conjugated field-difference scaling
    let f_probe = bench.phi0.mode_vector();
    let gaps: Vec<(usize, f64)> = cfg
        .scan
        .n_list
        .iter()
        .map(|&n| Ok((n, field_difference_gap(cfg, &bench, &basis, n, t_probe, &f_probe)?)))
        .collect::<Result<_>>()?;
    let gap_data: Vec<(f64, f64)> = gaps.iter().map(|&(n, d)| (n as f64, d)).collect();
    let gap_fit = fit_log_log(t_probe, &gap_data);

    // full flow vs cubic-gated flow
    let full_flow = bench.flow(n_ref as f64, FlowKind::Full);
    let mut reference = [FockState::vacuum(basis.clone())];
    evolve_fluctuation(&full_flow, &mut reference, 0.0, t_probe, cfg.fock.gen_dt, &bench.kp)?;
    let overlaps = [0, n_cut / 4, n_cut]
        .into_iter()
        .map(|m_cut| {
            let flow = bench.flow(n_ref as f64, FlowKind::Truncated(m_cut));
            let mut s = [FockState::vacuum(basis.clone())];
            evolve_fluctuation(&flow, &mut s, 0.0, t_probe, cfg.fock.gen_dt, &bench.kp)?;
            let overlap_defect = (Complex64::new(1.0, 0.0) - reference[0].inner(&s[0])).norm();
            let mut diff = s.into_iter().next().unwrap();
            diff.axpy(Complex64::new(-1.0, 0.0), &reference[0]);
            Ok(OverlapRow { m_cut, overlap_defect, norm_gap: diff.norm() })
        })
        .collect::<Result<Vec<_>>>()?;

    // identity cross-check at the smallest configured scan point
    let n_id = cfg.scan.n_list[0];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let js: Vec<DMatrix<Complex64>> =
        (0..2).map(|_| random_hermitian(bench.grid.sites(), &mut rng)).collect();
    // run at the suite cutoff (capped at 12 like everything above) rather
    // than the tail rule, which would dwarf the rest of the suite; the
    // audit budget is relaxed accordingly since these rows are diagnostics
    let mut id_cfg = cfg.clone();
    id_cfg.budgets.leakage = id_cfg.budgets.leakage.max(1e-3);
    let identity = pairing_identity(&id_cfg, n_id, t_probe, n_cut, &js)?;

    Ok(FluctuationReport {
        config: cfg.clone(),
        versions: versions(),
        moments,
        cubic,
        cubic_fit,
        gaps,
        gap_fit,
        overlaps,
        identity,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One named self-test group.
#[derive(Debug, Serialize)]
pub struct SelfTestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick invariant battery exercising every layer once; all groups are
/// expected to pass on any build.
pub fn selftest(seed: u64) -> Result<Vec<SelfTestResult>> {
    use crate::fock::{apply_annihilate_f, apply_create_f};
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // commutation relations on random displaced pairs, top sector masked
    let basis = OccupationBasis::new(3, 6)?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f: Vec<Complex64> =
            (0..3).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let g: Vec<Complex64> =
            (0..3).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let mut psi = FockState::zero(basis.clone());
        for k in 0..basis.sector_range(4).end {
            psi.amplitudes[k] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        psi.normalize();
        let ac = apply_annihilate_f(&f, &apply_create_f(&g, &psi)?)?;
        let mut ca = apply_create_f(&g, &apply_annihilate_f(&f, &psi)?)?;
        let pairing: Complex64 = f.iter().zip(&g).map(|(a, b)| a.conj() * b).sum();
        ca.axpy(pairing, &psi);
        let mut defect: f64 = 0.0;
        for (x, y) in ac.amplitudes.iter().zip(&ca.amplitudes) {
            defect = defect.max((x - y).norm());
        }
        worst = worst.max(defect);
    }
    out.push(SelfTestResult {
        name: "ladder-commutators",
        passed: worst < 1e-9,
        detail: format!("max defect {worst:.3e}"),
    });

    // coherent occupation statistics
    let f: Vec<Complex64> = vec![Complex64::new(1.0, 0.5), Complex64::new(-0.5, 0.5)];
    let mu: f64 = f.iter().map(|z| z.norm_sqr()).sum();
    let cb = OccupationBasis::new(2, tail_cutoff(mu))?;
    let cs = coherent_state(&cb, &f)?;
    let mean_defect = (number_moment(1, &cs) - mu).abs();
    let var = number_moment(2, &cs) - number_moment(1, &cs).powi(2);
    let var_defect = (var - mu).abs();
    out.push(SelfTestResult {
        name: "coherent-occupation-statistics",
        passed: mean_defect < 1e-8 && var_defect < 1e-8,
        detail: format!("mean defect {mean_defect:.3e}, variance defect {var_defect:.3e}"),
    });

    // free evolution leaves the comparison distance at zero
    let mut cfg = RunConfig::default();
    cfg.grid.l = 3;
    cfg.potential.terms.clear();
    cfg.hartree.t_final = 0.5;
    cfg.scan.n_list = vec![3];
    cfg.scan.t_list = vec![0.5];
    let report = rate_scan(&cfg)?;
    let d = report.points[0].distance;
    out.push(SelfTestResult {
        name: "free-evolution-null",
        passed: d < 1e-9,
        detail: format!("distance {d:.3e}"),
    });

    // quadratic flow conserves parity
    let mut cfg = RunConfig::default();
    cfg.grid.l = 3;
    cfg.hartree.t_final = 0.25;
    cfg.scan.n_list = vec![4];
    cfg.scan.t_list = vec![0.25];
    cfg.fock.n_cut = Some(6);
    let bench = prepare_bench(&cfg)?;
    let basis = OccupationBasis::new(3, 6)?;
    let flow = bench.flow(4.0, FlowKind::Quadratic);
    let mut s = [FockState::vacuum(basis.clone())];
    evolve_fluctuation(&flow, &mut s, 0.0, 0.25, cfg.fock.gen_dt, &bench.kp)?;
    let (_, odd) = parity_norms(&s[0]);
    out.push(SelfTestResult {
        name: "quadratic-flow-parity",
        passed: odd * odd < 1e-10,
        detail: format!("odd-sector mass {:.3e}", odd * odd),
    });

    // identity cross-check on a minimal instance
    let mut cfg = RunConfig::default();
    cfg.grid.l = 2;
    cfg.hartree.t_final = 0.2;
    cfg.scan.n_list = vec![2];
    cfg.scan.t_list = vec![0.2];
    let js = vec![random_hermitian(2, &mut rng)];
    let rows = pairing_identity(&cfg, 2, 0.2, tail_cutoff(2.0).max(20), &js)?;
    let rel = rows[0].defect / rows[0].j_norm;
    out.push(SelfTestResult {
        name: "pairing-identity",
        passed: rel < 1e-6,
        detail: format!("relative defect {rel:.3e}"),
    });

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitter_recovers_synthetic_inverse_law() {
        let data: Vec<(f64, f64)> = [2.0, 3.0, 4.0, 6.0, 8.0].iter().map(|&n| (n, 0.3 / n)).collect();
        let fit = fit_log_log(0.5, &data);
        assert!(!fit.degenerate);
        assert!((fit.slope + 1.0).abs() < 1e-12, "slope {}", fit.slope);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fitter_marks_floored_or_short_data_degenerate() {
        assert!(fit_log_log(0.0, &[(2.0, 0.1), (4.0, 0.05)]).degenerate);
        assert!(fit_log_log(0.0, &[(2.0, 0.1), (4.0, 1e-15), (8.0, 0.02)]).degenerate);
    }

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.grid.l = 3;
        cfg.hartree.t_final = 0.25;
        cfg.scan.n_list = vec![2, 3, 4];
        cfg.scan.t_list = vec![0.25];
        cfg
    }

    #[test]
    fn free_scan_is_null_and_degenerate() {
        let mut cfg = tiny_cfg();
        cfg.potential.terms.clear();
        let report = rate_scan(&cfg).unwrap();
        for p in &report.points {
            assert!(p.distance < 1e-10, "n = {}: distance {}", p.n, p.distance);
        }
        assert!(report.fits.iter().all(|f| f.degenerate));
    }

    #[test]
    fn scan_reports_are_byte_reproducible() {
        let cfg = tiny_cfg();
        let a = rate_scan(&cfg).unwrap();
        let b = rate_scan(&cfg).unwrap();
        assert_eq!(a.csv(), b.csv());
        let mut threaded = cfg.clone();
        threaded.run.threads = 3;
        let c = rate_scan(&threaded).unwrap();
        // same physics columns regardless of worker count
        for (p, q) in a.points.iter().zip(&c.points) {
            assert_eq!(p.n, q.n);
            assert_eq!(p.distance, q.distance);
        }
    }

    #[test]
    fn coherent_scan_starts_at_zero_distance() {
        let mut cfg = tiny_cfg();
        cfg.scan.n_list = vec![2, 3];
        cfg.scan.t_list = vec![0.25];
        let report = coherent_rate_scan(&cfg).unwrap();
        assert!(report.points.iter().all(|p| p.distance < 1.0));
        // t = 0 directly: reduced density of the displaced vacuum is the projector
        let bench = Bench::prepare(&cfg).unwrap();
        let basis = OccupationBasis::new(3, tail_cutoff(3.0)).unwrap();
        let f: Vec<Complex64> =
            bench.phi0.mode_vector().iter().map(|z| z * 3.0f64.sqrt()).collect();
        let psi = coherent_state(&basis, &f).unwrap();
        let gamma = reduced_density(&psi).unwrap();
        let d = trace_distance(&gamma, &field_projector(&bench.phi0));
        assert!(d < 1e-8, "initial distance {d}");
    }

    #[test]
    fn cubic_scaling_slope_is_exactly_minus_half() {
        let mut cfg = tiny_cfg();
        cfg.scan.n_list = vec![2, 4, 8, 16];
        let rows = cubic_scaling(&cfg, 5).unwrap();
        let data: Vec<(f64, f64)> = rows.iter().map(|&(n, d)| (n as f64, d)).collect();
        let fit = fit_log_log(0.0, &data);
        assert!((fit.slope + 0.5).abs() < 1e-12, "slope {}", fit.slope);
    }

    #[test]
    fn identity_cross_check_small_instance() {
        let mut cfg = RunConfig::default();
        cfg.grid.l = 2;
        cfg.hartree.t_final = 0.2;
        cfg.scan.n_list = vec![2];
        cfg.scan.t_list = vec![0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let js = vec![random_hermitian(2, &mut rng), random_hermitian(2, &mut rng)];
        let rows = pairing_identity(&cfg, 2, 0.2, 24, &js).unwrap();
        for r in &rows {
            assert!(
                r.defect <= 1e-6 * r.j_norm,
                "defect {} vs bound {}",
                r.defect,
                1e-6 * r.j_norm
            );
            assert!(r.lhs_im.abs() < 1e-9, "distance trace should be real");
        }
    }

    #[test]
    fn selftest_groups_all_pass() {
        let results = selftest(1).unwrap();
        for r in &results {
            assert!(r.passed, "{} failed: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 5);
    }

    #[test]
    fn report_files_round_trip() {
        let mut cfg = tiny_cfg();
        cfg.scan.n_list = vec![2, 3];
        cfg.potential.terms.clear();
        let report = rate_scan(&cfg).unwrap();
        let dir = std::env::temp_dir().join("mflab-report-test");
        report.write(&dir, "rate").unwrap();
        let csv = std::fs::read_to_string(dir.join("rate.csv")).unwrap();
        assert!(csv.starts_with("# {"));
        assert!(csv.contains("n,t,distance,basis_dim,leakage"));
        let json = std::fs::read_to_string(dir.join("rate_summary.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(parsed["fits"].is_array());
        assert_eq!(parsed["points"][0]["n"], 2);
        std::fs::remove_dir_all(&dir).ok();
    }
}

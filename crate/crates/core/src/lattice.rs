//! Periodic d-dimensional lattice: geometry, spectral transforms, sampled
//! interaction potentials, and one-particle norms.
//!
//! The lattice carries the spacing weight `h^d` on every spatial sum, so that
//! discrete quantities approximate their continuum counterparts. The discrete
//! Laplacian is the circulant 2d-point stencil, applied in Fourier space with
//! the multiplier `(2/h^2) * sum_axes (1 - cos(2 pi k_a / L))`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{MfError, Result};

pub const MAX_DIM: usize = 3;

/// Periodic lattice with `L` sites per axis in `d` dimensions, spacing `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub l: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(d: usize, l: usize, h: f64) -> Result<Grid> {
        if d < 1 || d > MAX_DIM {
            return Err(MfError::Parameter(format!("dimension must be 1..=3, got {d}")));
        }
        if l < 2 {
            return Err(MfError::Parameter(format!("sites per axis must be >= 2, got {l}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(MfError::Parameter(format!("spacing must be positive, got {h}")));
        }
        Ok(Grid { d, l, h })
    }

    /// Total number of sites `M = L^d`.
    pub fn sites(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    /// Site index -> axis coordinates (row-major, axis 0 fastest).
    pub fn coords(&self, index: usize) -> [usize; MAX_DIM] {
        let mut c = [0usize; MAX_DIM];
        let mut rest = index;
        for a in 0..self.d {
            c[a] = rest % self.l;
            rest /= self.l;
        }
        c
    }

    /// Axis coordinates -> site index; coordinates wrap modulo `L`.
    pub fn index(&self, coords: &[usize]) -> usize {
        let mut idx = 0usize;
        for a in (0..self.d).rev() {
            idx = idx * self.l + (coords[a] % self.l);
        }
        idx
    }

    /// Minimal-image signed displacement for a single axis offset, in lattice
    /// units. Ties at exactly L/2 take the positive representative.
    pub fn minimal_image(&self, r: isize) -> isize {
        let l = self.l as isize;
        let mut m = r.rem_euclid(l);
        if 2 * m > l {
            m -= l;
        }
        m
    }

    /// Euclidean minimal-image distance (length units) of the displacement
    /// with site index `r`.
    pub fn displacement_distance(&self, r: usize) -> f64 {
        let c = self.coords(r);
        let mut s2 = 0.0;
        for a in 0..self.d {
            let m = self.minimal_image(c[a] as isize) as f64;
            s2 += m * m;
        }
        self.h * s2.sqrt()
    }

    /// Site index of the negated displacement `-r` (periodic).
    pub fn negate(&self, r: usize) -> usize {
        let c = self.coords(r);
        let mut n = [0usize; MAX_DIM];
        for a in 0..self.d {
            n[a] = (self.l - c[a]) % self.l;
        }
        self.index(&n[..self.d])
    }

    /// Site index of `x - y` (periodic).
    pub fn displacement(&self, x: usize, y: usize) -> usize {
        let cx = self.coords(x);
        let cy = self.coords(y);
        let mut r = [0usize; MAX_DIM];
        for a in 0..self.d {
            r[a] = (cx[a] + self.l - cy[a]) % self.l;
        }
        self.index(&r[..self.d])
    }

    /// Fourier multiplier of `-Delta_h` at wavenumber index `k` (a site index
    /// interpreted in the reciprocal lattice).
    pub fn laplacian_symbol(&self, k: usize) -> f64 {
        let c = self.coords(k);
        let mut s = 0.0;
        for a in 0..self.d {
            let theta = 2.0 * std::f64::consts::PI * c[a] as f64 / self.l as f64;
            s += 1.0 - theta.cos();
        }
        2.0 / (self.h * self.h) * s
    }
}

/// Interaction potential `V(x) = sum_i lambda_i |x|^(-gamma_i) + c`, with an
/// optional explicit bounded part tabulated per displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub terms: Vec<PowerLawTerm>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub bounded_part: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawTerm {
    pub lambda: f64,
    pub gamma: f64,
}

impl PotentialSpec {
    pub fn zero() -> PotentialSpec {
        PotentialSpec { terms: vec![], offset: 0.0, bounded_part: None }
    }

    pub fn constant(c: f64) -> PotentialSpec {
        PotentialSpec { terms: vec![], offset: c, bounded_part: None }
    }

    pub fn power_law(lambda: f64, gamma: f64) -> PotentialSpec {
        PotentialSpec { terms: vec![PowerLawTerm { lambda, gamma }], offset: 0.0, bounded_part: None }
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if !(t.gamma > 0.0 && t.gamma < 1.5) {
                return Err(MfError::Parameter(format!(
                    "potential exponent gamma must lie in (0, 3/2), got {}",
                    t.gamma
                )));
            }
        }
        Ok(())
    }
}

/// Sample the potential on all displacement vectors of the grid.
///
/// The on-site value is regularized at the cell half-width:
/// `V[0] = sum_i lambda_i (h/2)^(-gamma_i) + c`.
pub fn sample_potential(spec: &PotentialSpec, grid: &Grid) -> Result<Vec<f64>> {
    spec.validate()?;
    let m = grid.sites();
    if let Some(b) = &spec.bounded_part {
        if b.len() != m {
            return Err(MfError::Shape(format!(
                "bounded part has {} entries, grid has {} sites",
                b.len(),
                m
            )));
        }
    }
    let mut v = vec![0.0; m];
    for r in 0..m {
        let dist = if r == 0 { grid.h / 2.0 } else { grid.displacement_distance(r) };
        let mut val = spec.offset;
        for t in &spec.terms {
            val += t.lambda * dist.powf(-t.gamma);
        }
        if let Some(b) = &spec.bounded_part {
            val += b[r];
        }
        v[r] = val;
    }
    // enforce evenness exactly: bounded tables are required symmetric, the
    // power-law part is symmetric by construction up to rounding
    for r in 0..m {
        let nr = grid.negate(r);
        let avg = 0.5 * (v[r] + v[nr]);
        v[r] = avg;
        v[nr] = avg;
    }
    Ok(v)
}

/// Complex wave function on the lattice. `h^d * sum |values|^2` is the L2 mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    pub grid: Grid,
    pub values: Vec<Complex64>,
}

impl FieldVector {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<FieldVector> {
        if values.len() != grid.sites() {
            return Err(MfError::Shape(format!(
                "field has {} values, grid has {} sites",
                values.len(),
                grid.sites()
            )));
        }
        Ok(FieldVector { grid, values })
    }

    pub fn zeros(grid: Grid) -> FieldVector {
        let m = grid.sites();
        FieldVector { grid, values: vec![Complex64::new(0.0, 0.0); m] }
    }

    /// Constant field normalized to unit mass.
    pub fn uniform_normalized(grid: Grid) -> FieldVector {
        let m = grid.sites();
        let a = 1.0 / (m as f64 * grid.cell_volume()).sqrt();
        FieldVector { grid, values: vec![Complex64::new(a, 0.0); m] }
    }

    /// Normalized plane wave with integer wavenumber index per axis.
    pub fn plane_wave(grid: Grid, k: &[usize]) -> FieldVector {
        let m = grid.sites();
        let a = 1.0 / (m as f64 * grid.cell_volume()).sqrt();
        let mut values = Vec::with_capacity(m);
        for x in 0..m {
            let c = grid.coords(x);
            let mut phase = 0.0;
            for axis in 0..grid.d {
                phase += 2.0 * std::f64::consts::PI * (k[axis] as f64) * (c[axis] as f64)
                    / grid.l as f64;
            }
            values.push(Complex64::from_polar(a, phase));
        }
        FieldVector { grid, values }
    }

    /// Periodized Gaussian bump centered mid-box, normalized to unit mass.
    pub fn gaussian(grid: Grid, width: f64) -> FieldVector {
        let m = grid.sites();
        let center = grid.l as f64 / 2.0;
        let mut values = Vec::with_capacity(m);
        for x in 0..m {
            let c = grid.coords(x);
            let mut r2 = 0.0;
            for axis in 0..grid.d {
                let dx = grid.minimal_image(c[axis] as isize - center.round() as isize) as f64
                    * grid.h;
                r2 += dx * dx;
            }
            values.push(Complex64::new((-r2 / (2.0 * width * width)).exp(), 0.0));
        }
        let mut f = FieldVector { grid, values };
        f.normalize();
        f
    }

    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn normalize(&mut self) {
        let n = self.mass().sqrt();
        if n > 0.0 {
            for z in &mut self.values {
                *z /= n;
            }
        }
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() <= tol
    }

    /// Weighted L2 inner product `h^d sum conj(f) g`.
    pub fn inner(&self, other: &FieldVector) -> Complex64 {
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.conj() * b)
                .sum::<Complex64>()
    }

    /// Mode-weighted coefficient vector `f_i = h^(d/2) f(x_i)`, the embedding
    /// into the orthonormal discrete mode basis.
    pub fn mode_vector(&self) -> Vec<Complex64> {
        let w = self.grid.cell_volume().sqrt();
        self.values.iter().map(|z| z * w).collect()
    }
}

/// One-particle norms of a field: L2, Lp, Linf, and the discrete H1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    pub l2: f64,
    pub lp: f64,
    pub linf: f64,
    pub h1: f64,
}

pub fn norms(phi: &FieldVector, p: f64) -> FieldNorms {
    let hd = phi.grid.cell_volume();
    let l2 = phi.mass().sqrt();
    let linf = phi.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lp = (hd * phi.values.iter().map(|z| z.norm().powf(p)).sum::<f64>()).powf(1.0 / p);
    let kin = kinetic_form(phi);
    let h1 = (l2 * l2 + kin).sqrt();
    FieldNorms { l2, lp, linf, h1 }
}

/// Quadratic form `<phi, -Delta_h phi>` with lattice weights, via the spectral
/// multiplier.
pub fn kinetic_form(phi: &FieldVector) -> f64 {
    let grid = phi.grid;
    let m = grid.sites();
    let hat = fft_forward(&grid, &phi.values);
    let mut s = 0.0;
    for k in 0..m {
        s += grid.laplacian_symbol(k) * hat[k].norm_sqr();
    }
    grid.cell_volume() * s / m as f64
}

/// Apply `-Delta_h` spectrally.
pub fn apply_laplacian(phi: &FieldVector) -> FieldVector {
    let grid = phi.grid;
    let m = grid.sites();
    let mut hat = fft_forward(&grid, &phi.values);
    for k in 0..m {
        hat[k] *= grid.laplacian_symbol(k);
    }
    let values = fft_inverse(&grid, &hat);
    FieldVector { grid, values }
}

/// Periodic convolution `(V * rho)(x) = h^d sum_y V(x-y) rho(y)`, computed
/// spectrally.
pub fn convolve_density(v: &[f64], rho: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    let m = grid.sites();
    if v.len() != m || rho.len() != m {
        return Err(MfError::Shape(format!(
            "convolution inputs have lengths {} and {}, grid has {} sites",
            v.len(),
            rho.len(),
            m
        )));
    }
    let vc: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let rc: Vec<Complex64> = rho.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let vhat = fft_forward(grid, &vc);
    let rhat = fft_forward(grid, &rc);
    let prod: Vec<Complex64> = vhat.iter().zip(&rhat).map(|(a, b)| a * b).collect();
    let conv = fft_inverse(grid, &prod);
    let hd = grid.cell_volume();
    Ok(conv.iter().map(|z| z.re * hd).collect())
}

/// Dense one-body matrix of `-Delta_h` in the orthonormal site-mode basis.
/// Circulant; exact match with the spectral application.
pub fn kinetic_matrix(grid: &Grid) -> Vec<Vec<Complex64>> {
    let m = grid.sites();
    let mut cols = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for j in 0..m {
        let mut e = FieldVector::zeros(*grid);
        e.values[j] = Complex64::new(1.0, 0.0);
        let le = apply_laplacian(&e);
        for i in 0..m {
            cols[i][j] = le.values[i];
        }
    }
    cols
}

/// Unnormalized forward DFT along every axis.
pub fn fft_forward(grid: &Grid, data: &[Complex64]) -> Vec<Complex64> {
    fft_all_axes(grid, data, false)
}

/// Inverse DFT (scaled by 1/M).
pub fn fft_inverse(grid: &Grid, data: &[Complex64]) -> Vec<Complex64> {
    let m = grid.sites() as f64;
    let mut out = fft_all_axes(grid, data, true);
    for z in &mut out {
        *z /= m;
    }
    out
}

fn fft_all_axes(grid: &Grid, data: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(grid.l)
    } else {
        planner.plan_fft_forward(grid.l)
    };
    let mut buf = data.to_vec();
    let l = grid.l;
    let m = grid.sites();
    let mut line = vec![Complex64::new(0.0, 0.0); l];
    for axis in 0..grid.d {
        let stride = l.pow(axis as u32);
        let lines = m / l;
        for line_idx in 0..lines {
            // base index of this line: distribute line_idx over the non-axis digits
            let low = line_idx % stride;
            let high = line_idx / stride;
            let base = high * stride * l + low;
            for (t, dst) in line.iter_mut().enumerate() {
                *dst = buf[base + t * stride];
            }
            fft.process(&mut line);
            for (t, src) in line.iter().enumerate() {
                buf[base + t * stride] = *src;
            }
        }
    }
    buf
}

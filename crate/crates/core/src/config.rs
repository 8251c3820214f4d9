//! TOML run configuration shared by the CLI subcommands.
//!
//! The schema is flat key-value with sections: `grid.{d,L,h}`,
//! `potential.{terms,offset}`, `initial.{kind,width,k}`,
//! `hartree.{dt,t_final}`, `fock.{n_cut,gen_dt,krylov_tol,krylov_dim}`,
//! `scan.{n_list,t_list}`, `budgets.{leakage,capacity}`,
//! `run.{seed,threads}`. Every field has a default; an empty file is a valid
//! configuration.

use serde::{Deserialize, Serialize};

use crate::error::{MfError, Result};
use crate::lattice::{FieldVector, Grid, PotentialSpec, PowerLawTerm};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub hartree: HartreeConfig,
    #[serde(default)]
    pub fock: FockConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub budgets: BudgetConfig,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(alias = "L", default = "default_l")]
    pub l: usize,
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_d() -> usize {
    1
}
fn default_l() -> usize {
    6
}
fn default_h() -> f64 {
    1.0
}

impl Default for GridConfig {
    fn default() -> GridConfig {
        GridConfig { d: default_d(), l: default_l(), h: default_h() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    #[serde(default = "default_terms")]
    pub terms: Vec<PowerLawTerm>,
    #[serde(default)]
    pub offset: f64,
}

fn default_terms() -> Vec<PowerLawTerm> {
    vec![PowerLawTerm { lambda: 0.5, gamma: 1.0 }]
}

impl Default for PotentialConfig {
    fn default() -> PotentialConfig {
        PotentialConfig { terms: default_terms(), offset: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// "gaussian", "uniform", or "plane-wave"
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub k: Vec<usize>,
}

fn default_kind() -> String {
    "gaussian".into()
}
fn default_width() -> f64 {
    1.0
}

impl Default for InitialConfig {
    fn default() -> InitialConfig {
        InitialConfig { kind: default_kind(), width: default_width(), k: vec![] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HartreeConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_t_final() -> f64 {
    1.0
}

impl Default for HartreeConfig {
    fn default() -> HartreeConfig {
        HartreeConfig { dt: default_dt(), t_final: default_t_final() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FockConfig {
    /// Explicit particle cutoff; when absent, scans use the tail rule.
    #[serde(default)]
    pub n_cut: Option<usize>,
    /// Step of the fluctuation-flow stepper; kept at an even multiple of the
    /// trajectory step so midpoint lookups are exact.
    #[serde(default = "default_gen_dt")]
    pub gen_dt: f64,
    #[serde(default = "default_krylov_tol")]
    pub krylov_tol: f64,
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
}

fn default_gen_dt() -> f64 {
    2e-3
}
fn default_krylov_tol() -> f64 {
    1e-12
}
fn default_krylov_dim() -> usize {
    40
}

impl Default for FockConfig {
    fn default() -> FockConfig {
        FockConfig {
            n_cut: None,
            gen_dt: default_gen_dt(),
            krylov_tol: default_krylov_tol(),
            krylov_dim: default_krylov_dim(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_t_list")]
    pub t_list: Vec<f64>,
}

fn default_n_list() -> Vec<usize> {
    vec![2, 3, 4, 6, 8]
}
fn default_t_list() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

impl Default for ScanConfig {
    fn default() -> ScanConfig {
        ScanConfig { n_list: default_n_list(), t_list: default_t_list() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default = "default_leakage")]
    pub leakage: f64,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

fn default_leakage() -> f64 {
    1e-8
}
fn default_capacity() -> usize {
    5_000_000
}

impl Default for BudgetConfig {
    fn default() -> BudgetConfig {
        BudgetConfig { leakage: default_leakage(), capacity: default_capacity() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_seed() -> u64 {
    1
}
fn default_threads() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> RunSection {
        RunSection { seed: default_seed(), threads: default_threads() }
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| MfError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            MfError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.potential_spec().validate()?;
        if !(self.hartree.dt > 0.0) {
            return Err(MfError::Config(format!("hartree.dt must be positive, got {}", self.hartree.dt)));
        }
        if self.hartree.t_final < 0.0 {
            return Err(MfError::Config("hartree.t_final must be nonnegative".into()));
        }
        if !(self.fock.gen_dt > 0.0) {
            return Err(MfError::Config("fock.gen_dt must be positive".into()));
        }
        if self.scan.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MfError::Config("scan.n_list must be strictly ascending".into()));
        }
        if self.scan.t_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MfError::Config("scan.t_list must be strictly ascending".into()));
        }
        if let Some(t) = self.scan.t_list.last() {
            if *t > self.hartree.t_final + 1e-12 {
                return Err(MfError::Config(format!(
                    "scan.t_list reaches {t}, beyond hartree.t_final = {}",
                    self.hartree.t_final
                )));
            }
        }
        match self.initial.kind.as_str() {
            "gaussian" | "uniform" | "plane-wave" => {}
            other => {
                return Err(MfError::Config(format!(
                    "initial.kind must be gaussian, uniform or plane-wave, got {other}"
                )))
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.d, self.grid.l, self.grid.h)
            .map_err(|e| MfError::Config(e.to_string()))
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        PotentialSpec {
            terms: self.potential.terms.clone(),
            offset: self.potential.offset,
            bounded_part: None,
        }
    }

    pub fn initial_field(&self) -> Result<FieldVector> {
        let grid = self.grid()?;
        Ok(match self.initial.kind.as_str() {
            "uniform" => FieldVector::uniform_normalized(grid),
            "plane-wave" => {
                let mut k = self.initial.k.clone();
                k.resize(grid.d, 0);
                FieldVector::plane_wave(grid, &k)
            }
            _ => FieldVector::gaussian(grid, self.initial.width),
        })
    }

    /// Config echo used in output headers: canonical single-line JSON.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_defaults() {
        let cfg = RunConfig::from_str("").unwrap();
        assert_eq!(cfg.grid.l, 6);
        assert_eq!(cfg.scan.n_list, vec![2, 3, 4, 6, 8]);
        assert_eq!(cfg.run.seed, 1);
        assert_eq!(cfg.potential.terms.len(), 1);
    }

    #[test]
    fn full_config_roundtrip() {
        let text = r#"
            [grid]
            d = 2
            L = 4
            h = 0.5

            [potential]
            offset = 0.1
            terms = [{ lambda = 1.0, gamma = 0.8 }, { lambda = -0.2, gamma = 1.2 }]

            [initial]
            kind = "plane-wave"
            k = [1, 0]

            [hartree]
            dt = 5e-4
            t_final = 2.0

            [scan]
            n_list = [2, 4, 8]
            t_list = [0.5, 1.0]

            [run]
            seed = 7
            threads = 2
        "#;
        let cfg = RunConfig::from_str(text).unwrap();
        assert_eq!(cfg.grid.d, 2);
        assert_eq!(cfg.grid.l, 4);
        assert_eq!(cfg.potential.terms[1].gamma, 1.2);
        assert_eq!(cfg.run.threads, 2);
        // echo is deterministic
        assert_eq!(cfg.echo(), cfg.echo());
        let grid = cfg.grid().unwrap();
        assert_eq!(grid.sites(), 16);
        let phi = cfg.initial_field().unwrap();
        assert!(phi.is_normalized(1e-12));
    }

    #[test]
    fn rejects_bad_exponent() {
        let text = "[potential]\nterms = [{ lambda = 1.0, gamma = 1.6 }]\n";
        assert!(matches!(RunConfig::from_str(text), Err(MfError::Parameter(_))));
    }

    #[test]
    fn rejects_unknown_key() {
        assert!(matches!(RunConfig::from_str("[grid]\nsize = 5\n"), Err(MfError::Config(_))));
    }

    #[test]
    fn rejects_unsorted_scan() {
        let text = "[scan]\nn_list = [4, 2]\n";
        assert!(matches!(RunConfig::from_str(text), Err(MfError::Config(_))));
    }

    #[test]
    fn rejects_horizon_mismatch() {
        let text = "[hartree]\nt_final = 0.5\n\n[scan]\nt_list = [0.25, 1.0]\n";
        assert!(matches!(RunConfig::from_str(text), Err(MfError::Config(_))));
    }
}

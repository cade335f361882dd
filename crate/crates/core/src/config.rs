//! TOML run configuration: schema, defaults, validation and conversion into
//! solver inputs.
//!
//! Every key is optional; omitted keys take the defaults below. Unknown keys,
//! type errors and range violations are all reported together.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary::SlabMesh;
use crate::collision::{CrossSectionSpec, SigmaFamily, ZCoupling};
use crate::error::{Error, Result};
use crate::kl::{CovarianceFamily, CovarianceKernel};
use crate::poisson::{PotentialFamily, PotentialSpec};
use crate::transport::{CollisionMode, InitialData, Problem, SolverConfig};
use crate::uq::{UqConfig, MAX_LEVEL};
use crate::velocity::{GridKind, VelocitySpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshSection {
    pub nx: usize,
    pub lx: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { nx: 16, lx: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VelocitySection {
    pub dim: usize,
    /// Nodes per axis.
    pub n: usize,
    pub vmax: f64,
    pub grid: GridKind,
}

impl Default for VelocitySection {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 16,
            vmax: 6.0,
            grid: GridKind::UniformMidpoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaSection {
    pub family: SigmaFamily,
    pub base: f64,
    pub bump_amp: f64,
    pub bump_width: f64,
    pub z_coupling: ZCoupling,
    pub z_coeff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<f64>>>,
}

impl Default for SigmaSection {
    fn default() -> Self {
        Self {
            family: SigmaFamily::Constant,
            base: 1.0,
            bump_amp: 0.0,
            bump_width: 1.0,
            z_coupling: ZCoupling::None,
            z_coeff: 0.0,
            lambda_floor: None,
            table: None,
        }
    }
}

impl SigmaSection {
    pub fn spec(&self) -> CrossSectionSpec {
        let mut s = match self.family {
            SigmaFamily::Constant => CrossSectionSpec::constant(self.base),
            SigmaFamily::GaussianBump => CrossSectionSpec::gaussian_bump(self.base, self.bump_amp, self.bump_width),
            SigmaFamily::Table => CrossSectionSpec::table(self.table.clone().unwrap_or_default()),
        }
        .with_coupling(self.z_coupling, self.z_coeff);
        s.lambda_floor = self.lambda_floor;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcSection {
    /// Accommodation coefficient: 1 specular, 0 diffuse.
    pub c: f64,
}

impl Default for BcSection {
    fn default() -> Self {
        Self { c: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialSection {
    pub family: PotentialFamily,
    pub amplitude: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            family: PotentialFamily::Zero,
            amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub cfl: f64,
    pub t_end: f64,
    pub collision_mode: CollisionMode,
    pub cadence: usize,
    pub transport: bool,
    pub collision: bool,
    /// Initial data `background · eq + amplitude · p`.
    pub background: f64,
    pub amplitude: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        let i = InitialData::default();
        Self {
            dt: s.dt,
            cfl: s.cfl,
            t_end: s.t_end,
            collision_mode: s.collision_mode,
            cadence: s.cadence,
            transport: s.transport,
            collision: s.collision,
            background: i.background,
            amplitude: i.amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsSection {
    /// Evaluate the entropy terms at every record.
    pub entropy: bool,
    /// Assemble the dense generator for the spectral oracle.
    pub oracle: bool,
    pub fit_start: f64,
    /// Defaults to `solver.t_end` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_end: Option<f64>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            entropy: true,
            oracle: true,
            fit_start: 1.0,
            fit_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UqSection {
    pub l_max: usize,
    pub z: f64,
    pub z_init: f64,
    pub c_tilde: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_delta: Option<f64>,
}

impl Default for UqSection {
    fn default() -> Self {
        let u = UqConfig::default();
        Self {
            l_max: u.l_max,
            z: u.z,
            z_init: u.z_init,
            c_tilde: u.c_tilde,
            fd_delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlSection {
    pub kernel: CovarianceFamily,
    pub t_cov: f64,
    pub length: f64,
    pub n: usize,
    pub energy: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<f64>>>,
}

impl Default for KlSection {
    fn default() -> Self {
        Self {
            kernel: CovarianceFamily::Brownian,
            t_cov: 1.0,
            length: 0.3,
            n: 512,
            energy: 0.95,
            samples: 100_000,
            table: None,
        }
    }
}

impl KlSection {
    pub fn kernel(&self) -> CovarianceKernel {
        match self.kernel {
            CovarianceFamily::Brownian => CovarianceKernel::brownian(self.t_cov),
            CovarianceFamily::Exponential => CovarianceKernel::exponential(self.t_cov, self.length),
            CovarianceFamily::Table => CovarianceKernel::table(self.t_cov, self.table.clone().unwrap_or_default()),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub mesh: MeshSection,
    pub velocity: VelocitySection,
    pub sigma: SigmaSection,
    pub bc: BcSection,
    pub potential: PotentialSection,
    pub solver: SolverSection,
    pub diagnostics: DiagnosticsSection,
    pub uq: UqSection,
    pub kl: KlSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output: PathBuf::from("out"),
            mesh: MeshSection::default(),
            velocity: VelocitySection::default(),
            sigma: SigmaSection::default(),
            bc: BcSection::default(),
            potential: PotentialSection::default(),
            solver: SolverSection::default(),
            diagnostics: DiagnosticsSection::default(),
            uq: UqSection::default(),
            kl: KlSection::default(),
        }
    }
}

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &[
    "sigma.lambda_floor",
    "sigma.table",
    "solver.dt",
    "diagnostics.fit_end",
    "uq.fd_delta",
    "kl.table",
];

fn known_keys() -> BTreeSet<String> {
    let v = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
    let mut keys: BTreeSet<String> = OPTIONAL_KEYS.iter().map(|s| s.to_string()).collect();
    if let toml::Value::Table(t) = v {
        for (k, v) in t {
            match v {
                toml::Value::Table(inner) => {
                    keys.insert(k.clone());
                    keys.extend(inner.keys().map(|ik| format!("{k}.{ik}")));
                }
                _ => {
                    keys.insert(k);
                }
            }
        }
    }
    keys
}

fn unknown_keys(doc: &toml::Table, known: &BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in doc {
        if !known.contains(k) {
            out.push(format!("unknown key `{k}`"));
            continue;
        }
        if let toml::Value::Table(inner) = v {
            for ik in inner.keys() {
                let path = format!("{k}.{ik}");
                if !known.contains(&path) {
                    out.push(format!("unknown key `{path}`"));
                }
            }
        } else if known.iter().any(|p| p.starts_with(&format!("{k}."))) {
            out.push(format!("`{k}` must be a table"));
        }
    }
    out
}

impl RunConfig {
    /// Parses TOML text, collecting every violation.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut violations = unknown_keys(&doc, &known_keys());
        let cfg = match RunConfig::deserialize(toml::Value::Table(doc)) {
            Ok(cfg) => Some(cfg),
            Err(e) => {
                violations.push(e.to_string().trim().to_string());
                None
            }
        };
        if let Some(cfg) = &cfg {
            violations.extend(cfg.violations());
        }
        match cfg {
            Some(cfg) if violations.is_empty() => Ok(cfg),
            _ => Err(Error::ConfigViolations(violations)),
        }
    }

    /// Range and consistency checks, all reported.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        need(
            i64::try_from(self.seed).is_ok(),
            format!("seed must be at most {}, got {}", i64::MAX, self.seed),
        );
        need(self.mesh.nx >= 4, format!("mesh.nx must be at least 4, got {}", self.mesh.nx));
        need(
            self.mesh.lx > 0.0 && self.mesh.lx.is_finite(),
            format!("mesh.lx must be positive, got {}", self.mesh.lx),
        );
        let vel = &self.velocity;
        need(
            vel.dim == 1 || vel.dim == 2,
            format!("velocity.dim must be 1 or 2, got {}", vel.dim),
        );
        need(
            vel.n >= 2 && vel.n % 2 == 0,
            format!(
                "velocity.n must be even and at least 2, got {}: the grid must be symmetric under v -> -v with no node on v = 0",
                vel.n
            ),
        );
        need(
            vel.vmax > 0.0 && vel.vmax.is_finite(),
            format!("velocity.vmax must be positive, got {}", vel.vmax),
        );
        let s = &self.sigma;
        need(s.base.is_finite(), format!("sigma.base must be finite, got {}", s.base));
        need(
            s.bump_width > 0.0,
            format!("sigma.bump_width must be positive, got {}", s.bump_width),
        );
        need(
            s.family != SigmaFamily::Table || s.table.is_some(),
            "sigma.table is required when sigma.family = \"table\"".into(),
        );
        if let Some(l) = s.lambda_floor {
            need(l > 0.0, format!("sigma.lambda_floor must be positive, got {l}"));
        }
        need(
            (0.0..=1.0).contains(&self.bc.c),
            format!("bc.c must be in [0,1], got {}", self.bc.c),
        );
        need(
            self.potential.amplitude.is_finite(),
            format!("potential.amplitude must be finite, got {}", self.potential.amplitude),
        );
        let so = &self.solver;
        need(
            so.cfl > 0.0 && so.cfl <= 0.9,
            format!("solver.cfl must be in (0, 0.9], got {}", so.cfl),
        );
        need(so.t_end > 0.0, format!("solver.t_end must be positive, got {}", so.t_end));
        if let Some(dt) = so.dt {
            need(dt > 0.0, format!("solver.dt must be positive, got {dt}"));
        }
        need(so.cadence >= 1, "solver.cadence must be at least 1".into());
        need(
            so.background >= 0.0,
            format!("solver.background must be nonnegative, got {}", so.background),
        );
        let d = &self.diagnostics;
        need(d.fit_start >= 0.0, format!("diagnostics.fit_start must be nonnegative, got {}", d.fit_start));
        if let Some(e) = d.fit_end {
            need(
                e > d.fit_start,
                format!("diagnostics.fit_end must exceed fit_start, got {e}"),
            );
        }
        let u = &self.uq;
        need(
            u.l_max <= MAX_LEVEL,
            format!("uq.l_max must be at most {MAX_LEVEL}, got {}", u.l_max),
        );
        need(u.c_tilde > 0.0, format!("uq.c_tilde must be positive, got {}", u.c_tilde));
        if let Some(dz) = u.fd_delta {
            need(
                (1e-3..=1e-1).contains(&dz),
                format!("uq.fd_delta must be in [1e-3, 1e-1], got {dz}"),
            );
        }
        let k = &self.kl;
        need(k.n >= 16, format!("kl.n must be at least 16, got {}", k.n));
        need(
            k.energy > 0.0 && k.energy <= 1.0,
            format!("kl.energy must be in (0, 1], got {}", k.energy),
        );
        need(k.t_cov > 0.0, format!("kl.t_cov must be positive, got {}", k.t_cov));
        need(k.length > 0.0, format!("kl.length must be positive, got {}", k.length));
        need(
            k.kernel != CovarianceFamily::Table || k.table.is_some(),
            "kl.table is required when kl.kernel = \"table\"".into(),
        );
        v
    }

    /// All violations as one error, or `Ok` when there are none.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigViolations(v))
        }
    }

    /// Fully resolved configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: s.dt,
            cfl: s.cfl,
            t_end: s.t_end,
            collision_mode: s.collision_mode,
            cadence: s.cadence,
            transport: s.transport,
            collision: s.collision,
            dump_path: None,
        }
    }

    pub fn potential_spec(&self) -> Option<PotentialSpec> {
        match self.potential.family {
            PotentialFamily::Zero => None,
            _ if self.potential.amplitude == 0.0 => None,
            family => Some(PotentialSpec {
                family,
                amplitude: self.potential.amplitude,
            }),
        }
    }

    /// Builds the solver inputs.
    pub fn problem(&self) -> Result<Problem> {
        let v = &self.velocity;
        Ok(Problem {
            space: Arc::new(VelocitySpace::build(v.dim, v.n, v.vmax, v.grid)?),
            mesh: SlabMesh::new(self.mesh.nx, self.mesh.lx)?,
            c: self.bc.c,
            sigma: self.sigma.spec(),
            potential: self.potential_spec(),
            solver: self.solver_config(),
            initial: InitialData {
                background: self.solver.background,
                amplitude: self.solver.amplitude,
            },
        })
    }

    pub fn uq_config(&self) -> UqConfig {
        UqConfig {
            l_max: self.uq.l_max,
            z: self.uq.z,
            z_init: self.uq.z_init,
            c_tilde: self.uq.c_tilde,
        }
    }

    /// Fit window, with `fit_end` defaulting to `t_end`.
    pub fn fit_window(&self) -> (f64, f64) {
        (
            self.diagnostics.fit_start,
            self.diagnostics.fit_end.unwrap_or(self.solver.t_end),
        )
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(s, Path::new("test.toml"))
    }

    fn violations(s: &str) -> Vec<String> {
        match parse(s) {
            Err(Error::ConfigViolations(v)) => v,
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = parse("[mesh]\nnx = 32\n").unwrap();
        assert_eq!(cfg.mesh.nx, 32);
        assert_eq!(cfg.velocity, VelocitySection::default());
        assert_eq!(parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn bad_accommodation_rejected() {
        let v = violations("[bc]\nc = 1.5\n");
        assert!(v.iter().any(|m| m.contains("bc.c must be in [0,1]")), "{v:?}");
    }

    #[test]
    fn odd_velocity_count_rejected_with_reason() {
        let v = violations("[velocity]\nn = 15\n");
        assert!(v.iter().any(|m| m.contains("velocity.n") && m.contains("symmetric")), "{v:?}");
    }

    #[test]
    fn all_violations_reported() {
        let v = violations("bogus = 1\n[bc]\nc = -0.1\nextra = 2\n[solver]\ncfl = 2.0\n[uq]\nl_max = 9\n");
        assert_eq!(v.len(), 5, "{v:?}");
        assert!(v.iter().any(|m| m.contains("`bogus`")));
        assert!(v.iter().any(|m| m.contains("`bc.extra`")));
    }

    #[test]
    fn type_errors_are_violations() {
        let v = violations("[mesh]\nnx = \"many\"\n");
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn optional_keys_accepted() {
        let cfg = parse("[solver]\ndt = 0.01\n[uq]\nfd_delta = 0.01\n[sigma]\nlambda_floor = 0.5\n").unwrap();
        assert_eq!(cfg.solver.dt, Some(0.01));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.solver.dt = Some(0.002);
        cfg.potential.family = PotentialFamily::Cosine;
        cfg.potential.amplitude = 0.5;
        cfg.sigma.z_coupling = ZCoupling::Affine;
        assert_eq!(parse(&cfg.echo()).unwrap(), cfg);
    }
}

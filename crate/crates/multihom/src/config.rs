//! Run configuration: a TOML file with `--set section.key=value` overrides.
//!
//! Everything is parsed and checked by [`Prepared::new`] before any solver
//! runs. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use multihom_core::cell::{CellOptions, InitialGuess, PeriodicGrid};
use multihom_core::dns::DnsConfig;
use multihom_core::flux::{Family, FluxSpec, StructureConstants};
use multihom_core::macro_solver::{MacroMesh, MacroOptions, ProblemData};
use multihom_core::scale::{ClassifyOpts, LimitOpts, Role, ScaleList};
use serde::Deserialize;

use crate::Failure;

pub const DEFAULT_OUTPUT: &str = "multihom-out";
pub const OUTPUT_ENV: &str = "MULTIHOM_OUT";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; `MULTIHOM_OUT` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub scales: Scales,
    pub flux: FluxSection,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default)]
    pub data: Data,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub dns: Dns,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scales {
    pub spatial: Vec<String>,
    #[serde(default)]
    pub temporal: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Linear,
    Quasilinear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSection {
    pub family: FamilyName,
    pub coefficient: String,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default, rename = "C0")]
    pub c0: Option<f64>,
    #[serde(default, rename = "C1")]
    pub c1: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Domain {
    /// Lower corner of Ω; its length is the spatial dimension.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(rename = "T")]
    pub t_end: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Domain {
            lower: vec![0.0],
            upper: vec![1.0],
            t_end: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Data {
    pub f: String,
    pub u0: String,
}

impl Default for Data {
    fn default() -> Self {
        Data {
            f: "1".into(),
            u0: "0".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Discretization {
    #[serde(rename = "M_y")]
    pub m_y: usize,
    #[serde(rename = "M_s")]
    pub m_s: usize,
    /// Interior nodes per axis of the macro mesh.
    #[serde(rename = "M_x")]
    pub m_x: usize,
    #[serde(rename = "M_t")]
    pub m_t: usize,
    #[serde(rename = "Xi")]
    pub xi_bound: f64,
    #[serde(rename = "R")]
    pub resolution: usize,
    /// Use a flux table in the macro solve; false evaluates b exactly.
    pub table: bool,
    /// Macroscopic gradient for the `cell` subcommand.
    pub xi: Option<Vec<f64>>,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            m_y: 64,
            m_s: 16,
            m_x: 31,
            m_t: 50,
            xi_bound: 4.0,
            resolution: 33,
            table: true,
            xi: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub res_tol: f64,
    pub newton_max_iter: usize,
    pub damping_floor: f64,
    pub gs_tol: f64,
    pub max_sweeps: usize,
    pub poincare_tol: f64,
    pub max_periods: usize,
    pub cg_tol: f64,
    pub macro_tol: f64,
    pub macro_max_iter: usize,
    pub macro_cg_tol: f64,
    pub eps0: f64,
    pub ratio: f64,
    pub samples: usize,
    pub fit_window: usize,
    pub p_tol: f64,
    pub c_tol: f64,
    pub v_floor: f64,
    pub v_ceil: f64,
    pub l_max: u32,
    pub structure_samples: usize,
    pub monotone_pairs: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = CellOptions::default();
        let m = MacroOptions::default();
        let l = LimitOpts::default();
        Tolerances {
            res_tol: c.res_tol,
            newton_max_iter: c.newton_max_iter,
            damping_floor: c.damping_floor,
            gs_tol: c.gs_tol,
            max_sweeps: c.max_sweeps,
            poincare_tol: c.poincare_tol,
            max_periods: c.max_periods,
            cg_tol: c.cg_tol,
            macro_tol: m.tol,
            macro_max_iter: m.max_iter,
            macro_cg_tol: m.cg_tol,
            eps0: l.eps0,
            ratio: l.ratio,
            samples: l.samples,
            fit_window: l.fit_window,
            p_tol: l.p_tol,
            c_tol: l.c_tol,
            v_floor: l.v_floor,
            v_ceil: l.v_ceil,
            l_max: ClassifyOpts::default().l_max,
            structure_samples: 1000,
            monotone_pairs: 1000,
        }
    }
}

impl Tolerances {
    pub fn limit_opts(&self) -> LimitOpts {
        LimitOpts {
            eps0: self.eps0,
            ratio: self.ratio,
            samples: self.samples,
            fit_window: self.fit_window,
            p_tol: self.p_tol,
            c_tol: self.c_tol,
            v_floor: self.v_floor,
            v_ceil: self.v_ceil,
            ..LimitOpts::default()
        }
    }

    pub fn classify_opts(&self) -> ClassifyOpts {
        ClassifyOpts {
            limits: self.limit_opts(),
            l_max: self.l_max,
        }
    }

    pub fn cell_opts(&self) -> CellOptions {
        CellOptions {
            res_tol: self.res_tol,
            newton_max_iter: self.newton_max_iter,
            damping_floor: self.damping_floor,
            gs_tol: self.gs_tol,
            max_sweeps: self.max_sweeps,
            poincare_tol: self.poincare_tol,
            max_periods: self.max_periods,
            cg_tol: self.cg_tol,
            initial: InitialGuess::Zero,
        }
    }

    pub fn macro_opts(&self) -> MacroOptions {
        MacroOptions {
            tol: self.macro_tol,
            max_iter: self.macro_max_iter,
            damping_floor: self.damping_floor,
            cg_tol: self.macro_cg_tol,
            ..MacroOptions::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dns {
    pub eps_list: Vec<f64>,
    #[serde(rename = "K_x")]
    pub k_x: usize,
    #[serde(rename = "K_t")]
    pub k_t: usize,
    #[serde(rename = "max_M_x")]
    pub max_m_x: usize,
    #[serde(rename = "max_M_t")]
    pub max_m_t: usize,
}

impl Default for Dns {
    fn default() -> Self {
        Dns {
            eps_list: vec![0.125, 0.0625, 0.03125],
            k_x: 16,
            k_t: 16,
            max_m_x: 200_000,
            max_m_t: 200_000,
        }
    }
}

/// Splits `section.key=value` and stores the value in `table`. Values are
/// read as TOML when possible and as plain strings otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), Failure> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) || keys.len() > 2 {
        return Err(Failure::Config(format!("override key '{path}' must be 'key' or 'section.key'")));
    }
    let (last, sections) = keys.split_last().expect("at least one key");
    let mut target = table;
    for s in sections {
        target = target
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("'{s}' is not a section")))?;
    }
    target.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, Failure> {
        let mut table: toml::Table = text.parse().map_err(|e| Failure::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Config(e.message().to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
        }
    }
}

/// A configuration with every expression parsed and every size checked.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub dim: usize,
    pub spatial: ScaleList,
    pub temporal: ScaleList,
    pub flux: FluxSpec,
    pub data: ProblemData,
    pub grid: PeriodicGrid,
    pub mesh: MacroMesh,
    pub dns: DnsConfig,
}

fn texts(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn config_err(what: &str) -> impl Fn(String) -> Failure + '_ {
    move |m| Failure::Config(format!("{what}: {m}"))
}

impl Prepared {
    pub fn new(config: RunConfig) -> Result<Self, Failure> {
        let d = &config.domain;
        let dim = d.lower.len();
        if !(1..=2).contains(&dim) || d.upper.len() != dim {
            return Err(Failure::Config(format!(
                "domain.lower and domain.upper must both have 1 or 2 entries (got {} and {})",
                d.lower.len(),
                d.upper.len()
            )));
        }
        let spatial = ScaleList::parse(Role::Spatial, &texts(&config.scales.spatial))
            .map_err(|e| config_err("scales.spatial")(e.to_string()))?;
        let temporal = ScaleList::parse(Role::Temporal, &texts(&config.scales.temporal))
            .map_err(|e| config_err("scales.temporal")(e.to_string()))?;
        if spatial.is_empty() {
            return Err(Failure::Config("scales.spatial must not be empty".into()));
        }
        let limits = config.tolerances.limit_opts();
        spatial
            .check_positive(&limits)
            .map_err(|e| config_err("scales.spatial")(e.to_string()))?;
        temporal
            .check_positive(&limits)
            .map_err(|e| config_err("scales.temporal")(e.to_string()))?;

        let f = &config.flux;
        let family = match (f.family, f.beta) {
            (FamilyName::Linear, None) => Family::Linear,
            (FamilyName::Linear, Some(_)) => {
                return Err(Failure::Config("flux.beta is only meaningful for the quasilinear family".into()))
            }
            (FamilyName::Quasilinear, Some(beta)) => Family::QuasilinearBounded { beta },
            (FamilyName::Quasilinear, None) => return Err(Failure::Config("flux.beta is required for the quasilinear family".into())),
        };
        let declared = match (f.c0, f.c1, f.alpha) {
            (None, None, None) => None,
            (Some(c0), Some(c1), alpha) => Some(StructureConstants {
                c0,
                c1,
                alpha: alpha.unwrap_or(1.0),
            }),
            _ => return Err(Failure::Config("declare both flux.C0 and flux.C1, or neither".into())),
        };
        let flux = FluxSpec::new(family, &f.coefficient, dim, spatial.len(), temporal.len(), declared)
            .map_err(|e| config_err("flux")(e.to_string()))?;
        let data = ProblemData::parse(&config.data.f, &config.data.u0, dim).map_err(|e| config_err("data")(e.to_string()))?;

        let disc = &config.discretization;
        let grid = PeriodicGrid::new(dim, disc.m_y, disc.m_s).map_err(|e| config_err("discretization")(e.to_string()))?;
        let mesh = if dim == 1 {
            MacroMesh::interval(d.lower[0], d.upper[0], disc.m_x, d.t_end, disc.m_t)
        } else {
            MacroMesh::rectangle([d.lower[0], d.lower[1]], [d.upper[0], d.upper[1]], [disc.m_x; 2], d.t_end, disc.m_t)
        }
        .map_err(|e| config_err("domain/discretization")(e.to_string()))?;
        if !(disc.xi_bound > 0.0) || disc.resolution < 3 {
            return Err(Failure::Config("discretization.Xi must be positive and discretization.R at least 3".into()));
        }
        if let Some(xi) = &disc.xi {
            if xi.len() != dim {
                return Err(Failure::Config(format!("discretization.xi has {} entries for dimension {dim}", xi.len())));
            }
        }
        let t = &config.tolerances;
        if t.structure_samples < 1000 || t.monotone_pairs < 100 {
            return Err(Failure::Config(
                "tolerances.structure_samples must be >= 1000 and tolerances.monotone_pairs >= 100".into(),
            ));
        }

        let dn = &config.dns;
        if dn.eps_list.iter().any(|e| !(*e > 0.0)) {
            return Err(Failure::Config("dns.eps_list entries must be positive".into()));
        }
        let mut dns = DnsConfig::new(spatial.scales.clone(), temporal.scales.clone(), dn.eps_list.first().copied().unwrap_or(0.1));
        dns.k_x = dn.k_x;
        dns.k_t = dn.k_t;
        dns.max_m_x = dn.max_m_x;
        dns.max_m_t = dn.max_m_t;

        Ok(Prepared {
            dim,
            spatial,
            temporal,
            flux,
            data,
            grid,
            mesh,
            dns,
            config,
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Failure> {
        Self::new(RunConfig::load(path, overrides)?)
    }

    pub fn xi(&self) -> Vec<f64> {
        self.config.discretization.xi.clone().unwrap_or_else(|| {
            let mut v = vec![0.0; self.dim];
            v[0] = 1.0;
            v
        })
    }
}

//! Versioned scenario configuration.
//!
//! Every parameter has a default, so `{"schema_version": 1, "seed": 1,
//! "scenario": {"kind": "born_rule"}}` is a complete config. Unknown fields
//! are rejected.

use std::path::PathBuf;

use collapse_core::hilbert::{CMatrix, C64};
use collapse_core::propagators::PropagatorSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ConfigError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    /// Label used in reports; not part of the config hash.
    #[serde(default)]
    pub name: Option<String>,
    /// Master seed. Mandatory: nothing is ever seeded from the clock.
    pub seed: u64,
    /// Output directory; the command line and the environment take precedence.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    CslUnraveling(CslUnraveling),
    BornRule(BornRule),
    AmplificationCsl(AmplificationCsl),
    NonmarkovUnraveling(NonmarkovUnraveling),
    BeableStats(BeableStats),
    OmegaTable(OmegaTable),
    DeltaMetric(DeltaMetric),
    QuarticReweight(QuarticReweight),
}

impl Scenario {
    pub fn kind(&self) -> &'static str {
        match self {
            Scenario::CslUnraveling(_) => "csl_unraveling",
            Scenario::BornRule(_) => "born_rule",
            Scenario::AmplificationCsl(_) => "amplification_csl",
            Scenario::NonmarkovUnraveling(_) => "nonmarkov_unraveling",
            Scenario::BeableStats(_) => "beable_stats",
            Scenario::OmegaTable(_) => "omega_table",
            Scenario::DeltaMetric(_) => "delta_metric",
            Scenario::QuarticReweight(_) => "quartic_reweight",
        }
    }

    /// Acceptance criteria this scenario reports on.
    pub fn criteria(&self) -> &'static [u8] {
        match self {
            Scenario::CslUnraveling(_) => &[1],
            Scenario::BornRule(_) => &[2, 3],
            Scenario::AmplificationCsl(_) => &[4],
            Scenario::NonmarkovUnraveling(_) => &[5, 6],
            Scenario::BeableStats(_) => &[7],
            Scenario::OmegaTable(_) => &[8],
            Scenario::DeltaMetric(_) => &[9, 10],
            Scenario::QuarticReweight(_) => &[11],
        }
    }
}

/// Field parameters shared by the non-Markovian scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    pub boson_mass: f64,
    pub cutoff: f64,
    pub coupling: f64,
}

impl FieldParams {
    fn with_cutoff(cutoff: f64) -> Self {
        Self {
            boson_mass: 1.0,
            cutoff,
            coupling: 1.0,
        }
    }

    pub fn spec(&self) -> Result<PropagatorSpec, ConfigError> {
        PropagatorSpec::new(self.boson_mass, self.cutoff, self.coupling).map_err(ConfigError::from_module)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CslUnraveling {
    pub gamma: f64,
    pub mass: f64,
    pub spacing: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Particle mass in the lattice kinetic term; `null` freezes the particle.
    pub kinetic_mass: Option<f64>,
    /// Initial site probabilities; amplitudes are their real square roots.
    pub initial: Vec<f64>,
    pub trajectories: usize,
    pub record_every: usize,
    /// Trajectories written out individually; the ensemble summary covers all.
    pub export_trajectories: usize,
}

impl Default for CslUnraveling {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            mass: 1.0,
            spacing: 1.0,
            dt: 0.01,
            horizon: 5.0,
            kinetic_mass: Some(1.0),
            initial: vec![0.3, 0.7],
            trajectories: 10_000,
            record_every: 50,
            export_trajectories: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BornRule {
    pub gamma: f64,
    pub mass: f64,
    pub dt: f64,
    pub initial: Vec<f64>,
    pub trajectories: usize,
    pub max_steps: usize,
    pub threshold: f64,
    /// The martingale check runs pure collapse at its own rate and length.
    pub martingale_gamma: f64,
    pub martingale_steps: usize,
    pub martingale_record_every: usize,
}

impl Default for BornRule {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            mass: 1.0,
            dt: 0.01,
            initial: vec![0.3, 0.7],
            trajectories: 10_000,
            max_steps: 20_000,
            threshold: 0.99,
            martingale_gamma: 0.1,
            martingale_steps: 5000,
            martingale_record_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplificationCsl {
    pub sites: usize,
    pub spacing: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub site_left: usize,
    pub site_right: usize,
    pub n_values: Vec<usize>,
    /// Fit window in units of the expected single-particle decay time.
    pub horizon_decays: f64,
    pub points: usize,
}

impl Default for AmplificationCsl {
    fn default() -> Self {
        Self {
            sites: 21,
            spacing: 1.0,
            sigma: 1.0,
            gamma: 0.05,
            site_left: 5,
            site_right: 15,
            n_values: vec![1, 2, 3],
            horizon_decays: 4.0,
            points: 41,
        }
    }
}

/// Choice of the relation kernel of the collapse field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelationMode {
    Zero,
    /// `scale · Re K`.
    RealPart { scale: f64 },
    /// The relation that removes the auxiliary field; admissible only for
    /// memoryless kernels.
    MemoryFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonmarkovUnraveling {
    pub field: FieldParams,
    pub separation: f64,
    pub dt: f64,
    pub cells: usize,
    pub initial: Vec<f64>,
    pub relation: RelationMode,
    pub samples: usize,
    pub sampler_samples: usize,
    pub characteristic_pairs: usize,
    pub characteristic_scale: f64,
}

impl Default for NonmarkovUnraveling {
    fn default() -> Self {
        Self {
            field: FieldParams::with_cutoff(10.0),
            separation: 1.0,
            dt: 0.5,
            cells: 8,
            initial: vec![0.36, 0.64],
            relation: RelationMode::Zero,
            samples: 10_000,
            sampler_samples: 100_000,
            characteristic_pairs: 20,
            characteristic_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeableStats {
    pub field: FieldParams,
    pub separation: f64,
    pub dt: f64,
    pub cells: usize,
    pub initial: Vec<f64>,
    pub samples: usize,
    /// Samples per checkpoint chunk; 0 disables checkpointing.
    pub checkpoint_chunk: usize,
}

impl Default for BeableStats {
    fn default() -> Self {
        Self {
            field: FieldParams::with_cutoff(10.0),
            separation: 1.0,
            dt: 0.5,
            cells: 8,
            initial: vec![0.36, 0.64],
            samples: 20_000,
            checkpoint_chunk: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmegaTable {
    pub field: FieldParams,
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
    pub horizon: f64,
    /// Separation and horizon of the finite-time convergence check.
    pub check_r: f64,
    pub check_horizon: f64,
    /// Cutoff and separation of the intermediate-distance log-law check.
    pub mid_cutoff: f64,
    pub mid_r: f64,
}

impl Default for OmegaTable {
    fn default() -> Self {
        Self {
            field: FieldParams::with_cutoff(100.0),
            r_min: 0.1,
            r_max: 100.0,
            points: 16,
            horizon: 200.0,
            check_r: 10.0,
            check_horizon: 200.0,
            mid_cutoff: 1e4,
            mid_r: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplificationParams {
    pub field: FieldParams,
    pub n_values: Vec<usize>,
    pub peak_separation: f64,
    pub intra_spacing: f64,
    pub horizon: f64,
    pub cells: usize,
}

impl Default for AmplificationParams {
    fn default() -> Self {
        Self {
            field: FieldParams::with_cutoff(10.0),
            n_values: vec![1, 2, 3, 4],
            peak_separation: 50.0,
            intra_spacing: 5.0,
            horizon: 20.0,
            cells: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaMetric {
    pub field: FieldParams,
    pub initial: Vec<f64>,
    pub r_values: Vec<f64>,
    pub t_values: Vec<f64>,
    pub samples: usize,
    pub amplification: AmplificationParams,
}

impl Default for DeltaMetric {
    fn default() -> Self {
        Self {
            field: FieldParams::with_cutoff(100.0),
            initial: vec![0.36, 0.64],
            r_values: vec![0.5, 2.0, 10.0],
            t_values: vec![1.0, 5.0, 50.0],
            samples: 10_000,
            amplification: AmplificationParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuarticReweight {
    /// Row-major `[re, im]` entries.
    pub covariance: Vec<Vec<[f64; 2]>>,
    pub relation: Vec<Vec<[f64; 2]>>,
    pub samples: usize,
    pub cell_volume: f64,
    pub probe: usize,
}

impl Default for QuarticReweight {
    fn default() -> Self {
        // a non-circular pair; with S = 0 the first-order response vanishes
        Self {
            covariance: vec![vec![[1.0, 0.0], [0.3, 0.2]], vec![[0.3, -0.2], [0.8, 0.0]]],
            relation: vec![vec![[0.4, 0.3], [0.1, 0.0]], vec![[0.1, 0.0], [-0.2, 0.3]]],
            samples: 40_000,
            cell_volume: 0.5,
            probe: 0,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("must be > 0, got {v}")))
    }
}

fn at_least(field: &'static str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::field(field, format!("must be >= {min}, got {v}")))
    }
}

fn probabilities(field: &'static str, p: &[f64], len: usize) -> Result<(), ConfigError> {
    if p.len() != len {
        return Err(ConfigError::field(field, format!("need {len} probabilities, got {}", p.len())));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-12 {
        return Err(ConfigError::field(field, "probabilities must lie in [0, 1] and sum to 1"));
    }
    Ok(())
}

pub(crate) fn complex_matrix(field: &'static str, rows: &[Vec<[f64; 2]>]) -> Result<CMatrix, ConfigError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError::field(field, "must be a non-empty square matrix"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(ConfigError::from_json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without running the scenario.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::field(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        match &self.scenario {
            Scenario::CslUnraveling(c) => {
                positive("gamma", c.gamma)?;
                positive("mass", c.mass)?;
                positive("spacing", c.spacing)?;
                positive("dt", c.dt)?;
                positive("horizon", c.horizon)?;
                if let Some(m) = c.kinetic_mass {
                    positive("kinetic_mass", m)?;
                }
                probabilities("initial", &c.initial, 2)?;
                at_least("trajectories", c.trajectories, 2)?;
                at_least("record_every", c.record_every, 1)?;
            }
            Scenario::BornRule(c) => {
                positive("gamma", c.gamma)?;
                positive("mass", c.mass)?;
                positive("dt", c.dt)?;
                positive("martingale_gamma", c.martingale_gamma)?;
                probabilities("initial", &c.initial, 2)?;
                at_least("trajectories", c.trajectories, 2)?;
                at_least("max_steps", c.max_steps, 1)?;
                at_least("martingale_steps", c.martingale_steps, 1)?;
                at_least("martingale_record_every", c.martingale_record_every, 1)?;
                if !(c.threshold > 0.5 && c.threshold < 1.0) {
                    return Err(ConfigError::field("threshold", "must lie in (0.5, 1)"));
                }
            }
            Scenario::AmplificationCsl(c) => {
                positive("spacing", c.spacing)?;
                positive("sigma", c.sigma)?;
                positive("gamma", c.gamma)?;
                positive("horizon_decays", c.horizon_decays)?;
                at_least("sites", c.sites, 2)?;
                at_least("points", c.points, 10)?;
                if c.site_left >= c.sites || c.site_right >= c.sites || c.site_left == c.site_right {
                    return Err(ConfigError::field("site_left", "branch sites must be distinct grid sites"));
                }
                if c.n_values.is_empty() || c.n_values.contains(&0) || !c.n_values.contains(&1) {
                    return Err(ConfigError::field("n_values", "need counts >= 1 including 1"));
                }
            }
            Scenario::NonmarkovUnraveling(c) => {
                c.field.spec()?;
                positive("separation", c.separation)?;
                positive("dt", c.dt)?;
                at_least("cells", c.cells, 1)?;
                probabilities("initial", &c.initial, 2)?;
                at_least("samples", c.samples, 2)?;
                at_least("sampler_samples", c.sampler_samples, 2)?;
                positive("characteristic_scale", c.characteristic_scale)?;
                if let RelationMode::RealPart { scale } = c.relation {
                    if !(scale.abs() <= 1.0) {
                        return Err(ConfigError::field("relation", "scale must lie in [-1, 1]"));
                    }
                }
            }
            Scenario::BeableStats(c) => {
                c.field.spec()?;
                positive("separation", c.separation)?;
                positive("dt", c.dt)?;
                at_least("cells", c.cells, 1)?;
                probabilities("initial", &c.initial, 2)?;
                at_least("samples", c.samples, 2)?;
            }
            Scenario::OmegaTable(c) => {
                c.field.spec()?;
                positive("r_min", c.r_min)?;
                positive("r_max", c.r_max)?;
                if c.r_max < c.r_min {
                    return Err(ConfigError::field("r_max", "must be >= r_min"));
                }
                at_least("points", c.points, 1)?;
                positive("horizon", c.horizon)?;
                positive("check_r", c.check_r)?;
                positive("check_horizon", c.check_horizon)?;
                positive("mid_r", c.mid_r)?;
                if !(c.mid_cutoff > c.field.boson_mass && c.mid_cutoff.is_finite()) {
                    return Err(ConfigError::field("mid_cutoff", "must exceed the boson mass"));
                }
            }
            Scenario::DeltaMetric(c) => {
                c.field.spec()?;
                probabilities("initial", &c.initial, 2)?;
                if c.r_values.is_empty() || c.r_values.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
                    return Err(ConfigError::field("r_values", "need separations >= 0"));
                }
                if c.t_values.is_empty() || c.t_values.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
                    return Err(ConfigError::field("t_values", "need horizons >= 0"));
                }
                at_least("samples", c.samples, 2)?;
                let a = &c.amplification;
                a.field.spec()?;
                positive("peak_separation", a.peak_separation)?;
                positive("intra_spacing", a.intra_spacing)?;
                positive("horizon", a.horizon)?;
                at_least("cells", a.cells, 1)?;
                if a.n_values.is_empty() || a.n_values.contains(&0) || !a.n_values.contains(&1) {
                    return Err(ConfigError::field("n_values", "need counts >= 1 including 1"));
                }
            }
            Scenario::QuarticReweight(c) => {
                let g = complex_matrix("covariance", &c.covariance)?;
                let s = complex_matrix("relation", &c.relation)?;
                if g.nrows() != s.nrows() {
                    return Err(ConfigError::field("relation", "must match the covariance shape"));
                }
                if c.probe >= g.nrows() {
                    return Err(ConfigError::field("probe", "outside the kernel"));
                }
                positive("cell_volume", c.cell_volume)?;
                at_least("samples", c.samples, 2)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the schema version, seed and scenario parameters. The name
    /// and output location do not affect results and are left out.
    pub fn hash(&self) -> String {
        let physics = serde_json::json!({
            "schema_version": self.schema_version,
            "seed": self.seed,
            "scenario": self.scenario,
        });
        hex(&Sha256::digest(physics.to_string().as_bytes()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.scenario.kind().to_string())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

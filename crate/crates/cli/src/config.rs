//! Pipeline configuration: a sectioned `key = value` TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rom_core::bo::{AcquisitionConfig, AcquisitionKind, BoRunConfig};
use rom_core::gpr::KernelKind;
use rom_core::hfm::{Edge, FeatureDistribution, GridConfig, ParameterSpace, PlateModel, SourceConfig, TimeConfig};
use rom_core::nn::TrainConfig;
use rom_core::rom::RomConfig;
use rom_core::uq::DesignMode;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own seed from it by label.
    pub seed: u64,
    pub space: SpaceSection,
    pub hfm: HfmSection,
    pub bo: BoSection,
    pub rom: RomSection,
    pub uq: UqSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    /// `gaussian` (mean, std) or `uniform` (lo, hi).
    #[serde(default = "gaussian")]
    pub distribution: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

fn gaussian() -> String {
    "gaussian".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceSection {
    pub features: Vec<FeatureSpec>,
}

impl Default for SpaceSection {
    fn default() -> Self {
        let plate = ParameterSpace::plate();
        let features = plate
            .names
            .iter()
            .zip(&plate.features)
            .map(|(name, f)| match *f {
                FeatureDistribution::Gaussian { mean, std } => FeatureSpec {
                    name: name.clone(),
                    distribution: gaussian(),
                    mean: Some(mean),
                    std: Some(std),
                    lo: None,
                    hi: None,
                },
                FeatureDistribution::Uniform { lo, hi } => FeatureSpec {
                    name: name.clone(),
                    distribution: "uniform".into(),
                    mean: None,
                    std: None,
                    lo: Some(lo),
                    hi: Some(hi),
                },
            })
            .collect();
        Self { features }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HfmSection {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub thickness: f64,
    pub fixed_edges: Vec<String>,
    pub dt: f64,
    pub steps: usize,
    pub keep_every: usize,
    /// Defaults to the grid centre.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_ix: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_iy: Option<usize>,
    pub amplitude: f64,
    pub frequency: f64,
    pub peaks: u32,
}

impl Default for HfmSection {
    fn default() -> Self {
        let m = PlateModel::default();
        Self {
            nx: m.grid.nx,
            ny: m.grid.ny,
            dx: m.grid.dx,
            thickness: m.grid.thickness,
            fixed_edges: m.grid.fixed_edges.iter().map(|e| edge_name(*e).to_string()).collect(),
            dt: m.time.dt,
            steps: m.time.steps,
            keep_every: m.time.keep_every,
            source_ix: None,
            source_iy: None,
            amplitude: m.source.amplitude,
            frequency: m.source.frequency,
            peaks: m.source.peaks,
        }
    }
}

fn edge_name(e: Edge) -> &'static str {
    match e {
        Edge::West => "west",
        Edge::East => "east",
        Edge::South => "south",
        Edge::North => "north",
    }
}

fn parse_edge(s: &str) -> Option<Edge> {
    match s.to_ascii_lowercase().as_str() {
        "west" => Some(Edge::West),
        "east" => Some(Edge::East),
        "south" => Some(Edge::South),
        "north" => Some(Edge::North),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoSection {
    /// Initial LHS points (tau).
    pub n_init: usize,
    /// Test points (n) for the stopping criterion.
    pub n_test: usize,
    pub eps_svd: f64,
    pub eps_tol: f64,
    /// `rbf` or `matern`.
    pub kernel: String,
    /// `ei` or `pi`.
    pub acquisition: String,
    /// Exploration margin in units of the target standard deviation.
    pub xi: f64,
    /// Candidate pool size per proposal (M).
    pub pool_size: usize,
    /// Cap on training points.
    pub max_train: usize,
    /// Column batches per snapshot matrix in the SVD update.
    pub batches: usize,
}

impl Default for BoSection {
    fn default() -> Self {
        let d = BoRunConfig::default();
        Self {
            n_init: d.n_init,
            n_test: d.n_test,
            eps_svd: d.eps_svd,
            eps_tol: d.eps_tol,
            kernel: "rbf".into(),
            acquisition: d.acquisition.kind.name().into(),
            xi: d.acquisition.xi,
            pool_size: d.acquisition.pool_size,
            max_train: d.max_train,
            batches: d.batches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl From<StageSection> for TrainConfig {
    fn from(s: StageSection) -> Self {
        TrainConfig {
            lr: s.lr,
            batch_size: s.batch_size,
            epochs: s.epochs,
            seed: 0,
        }
    }
}

impl From<&TrainConfig> for StageSection {
    fn from(t: &TrainConfig) -> Self {
        Self {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
        }
    }
}

/// Network settings. Unset values come from the preset (`desk` or `full`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RomSection {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lstm_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lstm_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lstm_select_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cae: Option<StageSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ffnn: Option<StageSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lstm: Option<StageSection>,
}

impl Default for RomSection {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            q: None,
            window: None,
            val_fraction: None,
            lstm_hidden: None,
            lstm_layers: None,
            lstm_select_every: None,
            cae: None,
            ffnn: None,
            lstm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UqSection {
    /// Monte Carlo sample count.
    pub r: usize,
    /// Nodes written to the UQ CSV; empty means the source node.
    pub nodes: Vec<usize>,
    /// Predicted steps; defaults to the bundle's training horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    /// Parameter vectors per surrogate call.
    pub chunk: usize,
    /// Saltelli base size N (a power of two for the Sobol design).
    pub sobol_n: usize,
    /// `sobol` or `random`.
    pub sobol_design: String,
    pub bootstrap: usize,
    /// Node whose time series the Sobol indices describe; defaults to the first UQ node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sobol_node: Option<usize>,
    /// Damage-index samples; defaults to `r`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub di_samples: Option<usize>,
    /// Sensor node for damage indices; defaults to the first UQ node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub di_node: Option<usize>,
}

impl Default for UqSection {
    fn default() -> Self {
        Self {
            r: 1000,
            nodes: Vec::new(),
            n_t: None,
            chunk: 64,
            sobol_n: 1024,
            sobol_design: "sobol".into(),
            bootstrap: rom_core::uq::BOOTSTRAP_RESAMPLES,
            sobol_node: None,
            di_samples: None,
            di_node: None,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            space: SpaceSection::default(),
            hfm: HfmSection::default(),
            bo: BoSection::default(),
            rom: RomSection::default(),
            uq: UqSection::default(),
        }
    }
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", origin.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Canonical text of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Checks every section without running any stage.
    pub fn validate(&self) -> Result<(), CliError> {
        self.space()?;
        self.plate()?;
        self.bo_config()?;
        self.rom_config()?;
        self.design_mode()?;
        let u = &self.uq;
        if u.r < 2 {
            return Err(bad("uq.r", "needs at least 2 samples"));
        }
        if u.chunk == 0 {
            return Err(bad("uq.chunk", "must be >= 1"));
        }
        if u.bootstrap < 2 {
            return Err(bad("uq.bootstrap", "needs at least 2 resamples"));
        }
        if u.di_samples.is_some_and(|n| n < 2) {
            return Err(bad("uq.di_samples", "must be >= 2"));
        }
        if u.n_t == Some(0) {
            return Err(bad("uq.n_t", "must be >= 1"));
        }
        let nodes = self.hfm.nx * self.hfm.ny;
        for (field, n) in u
            .nodes
            .iter()
            .map(|&n| ("uq.nodes", n))
            .chain(u.sobol_node.map(|n| ("uq.sobol_node", n)))
            .chain(u.di_node.map(|n| ("uq.di_node", n)))
        {
            if n >= nodes {
                return Err(bad(field, format!("node {n} outside the {nodes}-node grid")));
            }
        }
        Ok(())
    }

    pub fn space(&self) -> Result<ParameterSpace, CliError> {
        if self.space.features.is_empty() {
            return Err(bad("space.features", "at least one feature is required"));
        }
        let mut names = Vec::new();
        let mut features = Vec::new();
        for (i, f) in self.space.features.iter().enumerate() {
            let field = |k: &str| format!("space.features[{i}].{k}");
            let need = |v: Option<f64>, k: &str| v.ok_or_else(|| bad(&field(k), "missing"));
            let dist = match f.distribution.to_ascii_lowercase().as_str() {
                "gaussian" | "normal" => FeatureDistribution::Gaussian {
                    mean: need(f.mean, "mean")?,
                    std: need(f.std, "std")?,
                },
                "uniform" => FeatureDistribution::Uniform {
                    lo: need(f.lo, "lo")?,
                    hi: need(f.hi, "hi")?,
                },
                other => return Err(bad(&field("distribution"), format!("unknown distribution `{other}`"))),
            };
            names.push(f.name.clone());
            features.push(dist);
        }
        ParameterSpace::new(names, features).map_err(|e| bad("space.features", e))
    }

    pub fn plate(&self) -> Result<PlateModel, CliError> {
        let h = &self.hfm;
        let fixed_edges = h
            .fixed_edges
            .iter()
            .map(|s| parse_edge(s).ok_or_else(|| bad("hfm.fixed_edges", format!("unknown edge `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let grid = GridConfig {
            nx: h.nx,
            ny: h.ny,
            dx: h.dx,
            thickness: h.thickness,
            fixed_edges,
        };
        grid.validate().map_err(|e| bad("hfm", e))?;
        let time = TimeConfig {
            dt: h.dt,
            steps: h.steps,
            keep_every: h.keep_every,
            first_step: 1,
        };
        time.validate().map_err(|e| bad("hfm", e))?;
        let centre = SourceConfig::centered(&grid);
        let source = SourceConfig {
            ix: h.source_ix.unwrap_or(centre.ix),
            iy: h.source_iy.unwrap_or(centre.iy),
            amplitude: h.amplitude,
            frequency: h.frequency,
            peaks: h.peaks,
        };
        if source.ix >= grid.nx || source.iy >= grid.ny {
            return Err(bad("hfm.source_ix", "source outside the grid"));
        }
        if !(source.frequency > 0.0) || source.peaks == 0 {
            return Err(bad("hfm.frequency", "frequency and peaks must be positive"));
        }
        Ok(PlateModel { grid, time, source })
    }

    pub fn bo_config(&self) -> Result<BoRunConfig, CliError> {
        let b = &self.bo;
        let kind = match b.kernel.to_ascii_lowercase().as_str() {
            "rbf" => KernelKind::Rbf,
            "matern" | "matern15" | "matern-1.5" => KernelKind::Matern15,
            other => return Err(bad("bo.kernel", format!("unknown kernel `{other}`"))),
        };
        let acq = AcquisitionKind::parse(&b.acquisition)
            .ok_or_else(|| bad("bo.acquisition", format!("unknown acquisition `{}`", b.acquisition)))?;
        if !(b.eps_svd > 0.0 && b.eps_svd < 1.0) {
            return Err(bad("bo.eps_svd", "must lie in (0, 1)"));
        }
        if !(b.xi >= 0.0) {
            return Err(bad("bo.xi", "must be >= 0"));
        }
        let mut cfg = BoRunConfig {
            n_init: b.n_init,
            n_test: b.n_test,
            eps_svd: b.eps_svd,
            eps_tol: b.eps_tol,
            max_train: b.max_train,
            batches: b.batches,
            acquisition: AcquisitionConfig {
                kind: acq,
                xi: b.xi,
                pool_size: b.pool_size,
                seed: 0,
            },
            seed: self.stage_seed("bo"),
            ..BoRunConfig::default()
        };
        cfg.kernel.kind = kind;
        cfg.validate().map_err(|e| bad("bo", e))?;
        Ok(cfg)
    }

    pub fn rom_config(&self) -> Result<RomConfig, CliError> {
        let r = &self.rom;
        let base = match r.preset.to_ascii_lowercase().as_str() {
            "desk" => RomConfig::default(),
            "full" => RomConfig::full(),
            other => return Err(bad("rom.preset", format!("unknown preset `{other}`"))),
        };
        let cfg = RomConfig {
            q: r.q.unwrap_or(base.q),
            window: r.window.unwrap_or(base.window),
            val_fraction: r.val_fraction.unwrap_or(base.val_fraction),
            lstm_hidden: r.lstm_hidden.unwrap_or(base.lstm_hidden),
            lstm_layers: r.lstm_layers.unwrap_or(base.lstm_layers),
            lstm_select_every: r.lstm_select_every.unwrap_or(base.lstm_select_every),
            cae: r.cae.map_or(base.cae, Into::into),
            ffnn: r.ffnn.map_or(base.ffnn, Into::into),
            lstm: r.lstm.map_or(base.lstm, Into::into),
            seed: self.stage_seed("rom"),
        };
        cfg.validate().map_err(|e| bad("rom", e))?;
        Ok(cfg)
    }

    pub fn design_mode(&self) -> Result<DesignMode, CliError> {
        let mode = DesignMode::parse(&self.uq.sobol_design)
            .ok_or_else(|| bad("uq.sobol_design", format!("unknown design `{}`", self.uq.sobol_design)))?;
        let n = self.uq.sobol_n;
        if n < 2 || (mode == DesignMode::Sobol && !n.is_power_of_two()) {
            return Err(bad("uq.sobol_n", format!("{n} is not a power of two >= 2")));
        }
        Ok(mode)
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        rom_core::seed::derive(self.seed, label)
    }

    /// Node index used when no UQ node is configured: the excitation point.
    pub fn default_node(&self) -> usize {
        let cx = self.hfm.source_ix.unwrap_or(self.hfm.nx / 2);
        let cy = self.hfm.source_iy.unwrap_or(self.hfm.ny / 2);
        cy * self.hfm.nx + cx
    }

    pub fn uq_nodes(&self) -> Vec<usize> {
        if self.uq.nodes.is_empty() {
            vec![self.default_node()]
        } else {
            self.uq.nodes.clone()
        }
    }
}

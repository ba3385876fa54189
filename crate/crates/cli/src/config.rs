//! Run configuration: a TOML document with sections for every stage.
//! Unknown keys are rejected so typos fail loudly; every key has a
//! documented default (see `--help`).

use cyclecast_core::nn::ModelConfig;
use cyclecast_core::sim::{config_by_name, MicroarchConfig, WorkloadKind, WorkloadSpec};
use cyclecast_core::system::{parse_decimal_ratio, DeploymentParams};
use cyclecast_core::train::TrainSpec;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workload: WorkloadCfg,
    pub sim: SimCfg,
    pub window: WindowCfg,
    pub target: TargetCfg,
    pub model: ModelCfg,
    pub train: TrainCfg,
    pub deploy: DeployCfg,
    pub paths: PathsCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadCfg {
    pub kind: String,
    pub instructions: usize,
    pub footprint_bytes: u64,
}

impl Default for WorkloadCfg {
    fn default() -> Self {
        WorkloadCfg { kind: "mixed".into(), instructions: 200_000, footprint_bytes: 1 << 20 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimCfg {
    /// One of the five canonical configurations; explicit fields below
    /// override its values.
    pub preset: String,
    pub width: Option<u32>,
    pub ls_units: Option<u32>,
    pub lsq_entries: Option<u32>,
    pub num_phys_regs: Option<u32>,
    pub rob_size: Option<u32>,
    pub l1d_kib: Option<u32>,
    pub l1i_kib: Option<u32>,
    pub l2_mib: Option<u32>,
}

impl Default for SimCfg {
    fn default() -> Self {
        SimCfg {
            preset: "8w".into(),
            width: None,
            ls_units: None,
            lsq_entries: None,
            num_phys_regs: None,
            rob_size: None,
            l1d_kib: None,
            l1i_kib: None,
            l2_mib: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowCfg {
    pub n: usize,
    pub r: usize,
    pub stride: usize,
}

impl Default for WindowCfg {
    fn default() -> Self {
        WindowCfg { n: 576, r: 192, stride: 192 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetCfg {
    pub tau: u32,
    pub clip: u32,
}

impl Default for TargetCfg {
    fn default() -> Self {
        TargetCfg { tau: 10, clip: 1000 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelCfg {
    pub proj_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub cls_hidden: usize,
    pub lambda_cls: f64,
    pub dropout_p: f64,
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg {
            proj_dim: 256,
            hidden: 256,
            layers: 2,
            bidirectional: false,
            cls_hidden: 64,
            lambda_cls: 1.0,
            dropout_p: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCfg {
    pub learning_rate: f64,
    pub batch_windows: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub holdout_fraction: f64,
    pub grad_clip_norm: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        let d = TrainSpec::default();
        TrainCfg {
            learning_rate: d.learning_rate,
            batch_windows: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            val_fraction: d.val_frac,
            holdout_fraction: d.holdout_frac,
            grad_clip_norm: d.grad_clip_norm,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeployCfg {
    /// Optional engine preset (gpu-4090, gpu-4090-nominal, neutrino-1t,
    /// neutrino-8t); explicit rates below are used when absent.
    pub preset: Option<String>,
    pub epoch_len: u64,
    /// Decimal strings, parsed exactly.
    pub engine_mips: String,
    pub host_mips: String,
    pub overhead_budget: String,
}

impl Default for DeployCfg {
    fn default() -> Self {
        DeployCfg {
            preset: None,
            epoch_len: 100_000,
            engine_mips: "4".into(),
            host_mips: "3000".into(),
            overhead_budget: "0.001".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsCfg {
    pub trace: String,
    pub checkpoint: String,
    pub history: String,
    pub metrics: String,
    pub histogram: String,
    pub matrix: String,
    pub ranking: String,
    pub pairwise: String,
    pub plan: String,
}

impl Default for PathsCfg {
    fn default() -> Self {
        PathsCfg {
            trace: "trace.nstr".into(),
            checkpoint: "model.nsck".into(),
            history: "history.csv".into(),
            metrics: "metrics.csv".into(),
            histogram: "gt_histogram.csv".into(),
            matrix: "matrix.csv".into(),
            ranking: "ranking.csv".into(),
            pairwise: "pairwise.csv".into(),
            plan: "plan.csv".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::BadArgs(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::BadArgs(format!("config {}: {e}", path.display())))
    }

    pub fn workload_spec(&self, seed: u64) -> Result<WorkloadSpec, CliError> {
        let kind = WorkloadKind::parse(&self.workload.kind).ok_or_else(|| {
            CliError::BadArgs(format!("unknown workload.kind {:?}", self.workload.kind))
        })?;
        let spec = WorkloadSpec {
            kind,
            instruction_count: self.workload.instructions,
            seed,
            footprint_bytes: self.workload.footprint_bytes,
        };
        spec.validate().map_err(CliError::BadArgs)?;
        Ok(spec)
    }

    pub fn microarch(&self, preset_override: Option<&str>) -> Result<MicroarchConfig, CliError> {
        let preset = preset_override.unwrap_or(&self.sim.preset);
        let mut cfg = config_by_name(preset)
            .ok_or_else(|| CliError::BadArgs(format!("unknown sim preset {preset:?}")))?;
        let s = &self.sim;
        if let Some(v) = s.width {
            cfg.width = v;
        }
        if let Some(v) = s.ls_units {
            cfg.ls_units = v;
        }
        if let Some(v) = s.lsq_entries {
            cfg.lsq_entries = v;
        }
        if let Some(v) = s.num_phys_regs {
            cfg.num_phys_regs = v;
        }
        if let Some(v) = s.rob_size {
            cfg.rob_size = v;
        }
        if let Some(v) = s.l1d_kib {
            cfg.l1d_kib = v;
        }
        if let Some(v) = s.l1i_kib {
            cfg.l1i_kib = v;
        }
        if let Some(v) = s.l2_mib {
            cfg.l2_mib = v;
        }
        cfg.validate().map_err(CliError::BadArgs)?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        if self.target.clip != 1000 {
            return Err(CliError::BadArgs(format!(
                "target.clip must be 1000, got {}",
                self.target.clip
            )));
        }
        let m = &self.model;
        let cfg = ModelConfig {
            input_dim: cyclecast_core::featurize::FEATURE_DIM,
            proj_dim: m.proj_dim,
            hidden: m.hidden,
            layers: m.layers,
            bidirectional: m.bidirectional,
            cls_hidden: m.cls_hidden,
            tau: self.target.tau,
            lambda_cls: m.lambda_cls,
            dropout_p: m.dropout_p,
        };
        cfg.validate().map_err(|e| CliError::BadArgs(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_spec(&self) -> TrainSpec {
        let t = &self.train;
        TrainSpec {
            learning_rate: t.learning_rate,
            batch_size: t.batch_windows,
            max_epochs: t.max_epochs,
            patience: t.patience,
            val_frac: t.val_fraction,
            holdout_frac: t.holdout_fraction,
            grad_clip_norm: t.grad_clip_norm,
            ..TrainSpec::default()
        }
    }

    pub fn window_geometry(&self) -> Result<(usize, usize, usize), CliError> {
        let w = &self.window;
        if w.r == 0 || w.r > w.n || w.stride == 0 {
            return Err(CliError::BadArgs(format!(
                "bad window geometry n={} r={} stride={}",
                w.n, w.r, w.stride
            )));
        }
        Ok((w.n, w.r, w.stride))
    }

    pub fn deployment(&self, preset_override: Option<&str>) -> Result<DeploymentParams, CliError> {
        let preset_name = preset_override.or(self.deploy.preset.as_deref());
        if let Some(name) = preset_name {
            let preset = cyclecast_core::system::Preset::parse(name)
                .ok_or_else(|| CliError::BadArgs(format!("unknown deploy preset {name:?}")))?;
            return Ok(preset.deployment(self.deploy.epoch_len));
        }
        let parse = |field: &str, s: &str| {
            parse_decimal_ratio(s)
                .map_err(|e| CliError::BadArgs(format!("deploy.{field}: {e}")))
        };
        let params = DeploymentParams {
            epoch_len: self.deploy.epoch_len,
            engine_mips: parse("engine_mips", &self.deploy.engine_mips)?,
            host_mips: parse("host_mips", &self.deploy.host_mips)?,
            overhead_budget: parse("overhead_budget", &self.deploy.overhead_budget)?,
        };
        params.validate().map_err(|e| CliError::BadArgs(e.to_string()))?;
        Ok(params)
    }
}

/// One line per config key with its default, shown in `--help`.
pub const CONFIG_KEY_HELP: &str = "\
Config keys (TOML) and defaults:
  seed = 0
  workload.kind = \"mixed\"           (loop_alu|pointer_chase|streaming|branchy|mixed)
  workload.instructions = 200000
  workload.footprint_bytes = 1048576
  sim.preset = \"8w\"                 (4w+mem|8w|rob|lsq|6w+ls)
  sim.width / sim.ls_units / sim.lsq_entries / sim.num_phys_regs / sim.rob_size
  sim.l1d_kib / sim.l1i_kib / sim.l2_mib   (optional overrides of the preset)
  window.n = 576
  window.r = 192
  window.stride = 192
  target.tau = 10
  target.clip = 1000
  model.proj_dim = 256
  model.hidden = 256
  model.layers = 2
  model.bidirectional = false
  model.cls_hidden = 64
  model.lambda_cls = 1.0
  model.dropout_p = 0.1
  train.learning_rate = 0.001
  train.batch_windows = 64
  train.max_epochs = 50
  train.patience = 5
  train.val_fraction = 0.1
  train.holdout_fraction = 0.1
  train.grad_clip_norm = 5.0
  deploy.preset                     (optional: gpu-4090|gpu-4090-nominal|neutrino-1t|neutrino-8t)
  deploy.epoch_len = 100000
  deploy.engine_mips = \"4\"          (exact decimal string)
  deploy.host_mips = \"3000\"
  deploy.overhead_budget = \"0.001\"
  paths.trace = \"trace.nstr\"        (and checkpoint/history/metrics/histogram/
                                    matrix/ranking/pairwise/plan file names)";

//! Declarative experiment configs, single runs and sweeps.

pub mod sweep;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, Distribution, Sampler};
use crate::error::{Error, Result};
use crate::geometry::NormOrder;
use crate::models::{save_critic, save_mlp, Activation, CriticModel, LinearModel, Mlp, SigmoidLinear};
use crate::objectives::{ObjectiveF, PenaltySpec, RelativisticMode};
use crate::training::{
    init_rng, train_gan, train_mmc, FakeSource, GanSetup, MmcSetup, OptimConfig, OracleConfig, RunRecord, TrainConfig,
};

pub use sweep::{cell_name, expand_grid, run_sweep, Axis, SweepCell, SweepGrid, SweepReport, SUMMARY_FILE};

/// Environment variable that replaces `train.seed` when set.
pub const SEED_ENV: &str = "MARGINLAB_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Critic and generator trained alternately.
    Gan,
    /// Critic trained against a fixed fake distribution.
    Critic,
    /// Supervised margin maximisation on a labelled dataset.
    Mmc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub loss: ObjectiveF,
    #[serde(default)]
    pub relativistic: RelativisticMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriticSpec {
    Linear,
    SigmoidLinear,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_slope")]
        slope: f64,
    },
}

impl Default for CriticSpec {
    fn default() -> Self {
        CriticSpec::Mlp {
            hidden: default_hidden(),
            slope: default_slope(),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_slope() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub slope: f64,
    pub output_scale: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            latent_dim: 8,
            hidden: default_hidden(),
            slope: default_slope(),
            output_scale: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub objective: ObjectiveSpec,
    pub penalty: PenaltySpec,
    #[serde(default)]
    pub critic: CriticSpec,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub optimizer: OptimConfig,
    /// Generator optimiser; the critic's settings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_optimizer: Option<OptimConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Target distribution (`gan`, `critic`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real: Option<Distribution>,
    /// Fixed fake distribution (`critic`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fake: Option<Distribution>,
    /// Labelled data (`mmc`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub oracles: OracleConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::config(json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Normalised form with every default written out.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("configs serialise");
        s.push('\n');
        s
    }

    pub fn data_dim(&self) -> usize {
        match self.mode {
            Mode::Mmc => self.dataset.as_ref().map_or(2, DatasetSpec::dim),
            _ => self.real.as_ref().map_or(2, Distribution::dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        self.optimizer.validate("optimizer")?;
        if let Some(o) = &self.generator_optimizer {
            o.validate("generator_optimizer")?;
        }
        self.train.validate("train")?;
        self.oracles.validate("oracles")?;
        match self.mode {
            Mode::Mmc => {
                let data = self
                    .dataset
                    .as_ref()
                    .ok_or_else(|| Error::config("dataset", "required in mmc mode"))?;
                data.validate("dataset")?;
                if self.real.is_some() || self.fake.is_some() {
                    return Err(Error::config("real", "mmc mode takes a labelled dataset instead"));
                }
                if self.objective.relativistic != RelativisticMode::None {
                    return Err(Error::config("objective.relativistic", "mmc mode is not relativistic"));
                }
            }
            Mode::Gan | Mode::Critic => {
                let real = self.real.as_ref().ok_or_else(|| Error::config("real", "required"))?;
                real.validate("real")?;
                if self.dataset.is_some() {
                    return Err(Error::config("dataset", "only used in mmc mode"));
                }
                match (self.mode, &self.fake) {
                    (Mode::Critic, None) => return Err(Error::config("fake", "required in critic mode")),
                    (Mode::Critic, Some(f)) => {
                        f.validate("fake")?;
                        if f.dim() != real.dim() {
                            return Err(Error::config("fake", "dimension differs from real"));
                        }
                    }
                    (Mode::Gan, Some(_)) => return Err(Error::config("fake", "gan mode generates its own fakes")),
                    _ => {}
                }
            }
        }
        match &self.critic {
            CriticSpec::Mlp { hidden, slope } => {
                if hidden.contains(&0) {
                    return Err(Error::config("critic.hidden", "zero-width layer"));
                }
                if !slope.is_finite() {
                    return Err(Error::config("critic.slope", "must be finite"));
                }
            }
            CriticSpec::SigmoidLinear if self.data_dim() < 1 => {
                return Err(Error::config("critic", "needs at least one input coordinate"));
            }
            _ => {}
        }
        if self.mode == Mode::Gan {
            let g = &self.generator;
            if g.latent_dim == 0 || g.hidden.contains(&0) {
                return Err(Error::config("generator", "zero-width layer"));
            }
            if !(g.output_scale > 0.0) {
                return Err(Error::config("generator.output_scale", "must be positive"));
            }
        }
        Ok(())
    }

    /// Applies `MARGINLAB_SEED`-style overrides.
    pub fn override_seed(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }
}

/// Reads and validates a JSON config file.
pub fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    ExperimentConfig::from_json(&text)
}

/// Best-effort dotted path of the field a serde error refers to.
pub(crate) fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".to_string()
}

fn build_critic(spec: &CriticSpec, dim: usize, rng: &mut impl rand::Rng) -> Result<CriticModel> {
    Ok(match spec {
        CriticSpec::Linear => CriticModel::Linear(LinearModel::init(dim, rng)?),
        CriticSpec::SigmoidLinear => CriticModel::SigmoidLinear(SigmoidLinear {
            w1: rng.random_range(-1.0..1.0),
            w0: 0.0,
            dim,
        }),
        CriticSpec::Mlp { hidden, slope } => {
            let mut dims = vec![dim];
            dims.extend(hidden);
            dims.push(1);
            CriticModel::Mlp(Mlp::init(&dims, Activation::LeakyRelu(*slope), Activation::Identity, 1.0, rng)?)
        }
    })
}

fn build_generator(spec: &GeneratorSpec, dim: usize, rng: &mut impl rand::Rng) -> Result<Mlp> {
    let mut dims = vec![spec.latent_dim];
    dims.extend(&spec.hidden);
    dims.push(dim);
    Mlp::init(&dims, Activation::LeakyRelu(spec.slope), Activation::Tanh, spec.output_scale, rng)
}

/// Models and metrics of a finished run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub critic: CriticModel,
    pub generator: Option<Mlp>,
    pub record: RunRecord,
}

/// Trains per `cfg` without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dim = cfg.data_dim();
    let mut init = init_rng(cfg.train.seed);
    let mut critic = build_critic(&cfg.critic, dim, &mut init)?;
    match cfg.mode {
        Mode::Mmc => {
            let data = cfg.dataset.as_ref().expect("validated").generate(cfg.train.seed)?;
            let setup = MmcSetup {
                objective: cfg.objective.loss,
                penalty: cfg.penalty,
                optim: cfg.optimizer,
                train: cfg.train,
                margin_norm: cfg.oracles.margin_norm_for(&cfg.penalty),
                margin_interval: cfg.oracles.margin_interval,
            };
            let record = train_mmc(&data, &mut critic, &setup)?;
            Ok(RunOutput {
                critic,
                generator: None,
                record,
            })
        }
        Mode::Gan | Mode::Critic => {
            let real = Sampler::new(cfg.real.clone().expect("validated"), 0);
            let fake = if cfg.mode == Mode::Gan {
                let model = build_generator(&cfg.generator, dim, &mut init)?;
                FakeSource::Generator {
                    model,
                    latent: Sampler::new(Distribution::StandardNormal { dim: cfg.generator.latent_dim }, 0),
                    optim: cfg.generator_optimizer.unwrap_or(cfg.optimizer),
                }
            } else {
                FakeSource::Fixed(Sampler::new(cfg.fake.clone().expect("validated"), 0))
            };
            let out = train_gan(GanSetup {
                real,
                fake,
                critic,
                objective: cfg.objective.loss,
                mode: cfg.objective.relativistic,
                penalty: cfg.penalty,
                critic_optim: cfg.optimizer,
                train: cfg.train,
                oracles: cfg.oracles,
            })?;
            Ok(RunOutput {
                critic: out.critic,
                generator: out.generator,
                record: out.record,
            })
        }
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CRITIC_FILE: &str = "critic.model";
pub const GENERATOR_FILE: &str = "generator.model";

/// Runs `cfg` and writes metrics, the normalised config and the final
/// models under `out`. A diverged run still leaves its partial metrics.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json())?;
    match execute(cfg) {
        Ok(run) => {
            fs::write(out.join(METRICS_FILE), run.record.to_csv())?;
            fs::write(out.join(CRITIC_FILE), save_critic(&run.critic))?;
            if let Some(g) = &run.generator {
                fs::write(out.join(GENERATOR_FILE), save_mlp(g))?;
            }
            Ok(run.record)
        }
        Err(e) => {
            if let Error::Diverged { record, .. } = &e {
                fs::write(out.join(METRICS_FILE), record.to_csv())?;
            }
            Err(e)
        }
    }
}

/// Helper for examples and tests: a critic-only run on shifted 1-D
/// Gaussians, the setting where the critic objective estimates W1.
pub fn shifted_gaussians_config(shift: f64, std: f64) -> ExperimentConfig {
    use crate::objectives::PenaltyG;
    ExperimentConfig {
        mode: Mode::Critic,
        objective: ObjectiveSpec {
            loss: ObjectiveF::Identity,
            relativistic: RelativisticMode::None,
        },
        penalty: PenaltySpec::new(NormOrder::L2, PenaltyG::Hinge, 20.0),
        critic: CriticSpec::default(),
        generator: GeneratorSpec::default(),
        optimizer: OptimConfig::default(),
        generator_optimizer: None,
        train: TrainConfig::default(),
        real: Some(Distribution::Gaussian { mean: vec![0.0], std }),
        fake: Some(Distribution::Gaussian { mean: vec![shift], std }),
        dataset: None,
        oracles: OracleConfig::default(),
    }
}

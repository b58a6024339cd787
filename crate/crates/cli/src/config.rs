//! Configuration and model files (TOML).
//!
//! A configuration has a mandatory `[mpc]` section and optional `[scenario]`,
//! `[de]`, `[plant]` and `[controller]` sections. Unknown keys are errors.
//! Missing optional values fall back to the library defaults; `resolved`
//! spells every one of them out for the run manifest.

use crate::error::{CliError, Result};
use drowsy_mpc::domain::{AmiModel, DlModel, IdtModel, ModelSet, MpcConfig};
use drowsy_mpc::optimizer::DeParams;
use drowsy_mpc::sim::{LunchBreak, PlantConfig, ScenarioConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const DEFAULT_INITIAL_DL: [f64; 5] = [1.6, 1.8, 2.0, 1.7, 1.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the comfort temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_temp: Option<f64>,
    /// Defaults to the comfort illuminance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_illum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_dl: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lunch: Option<LunchBreak>,
    #[serde(default)]
    pub sweep: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossover_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_generations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

/// Plant overrides on top of the default office plant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp_disturbance_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illum_disturbance_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dl_noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_pull: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outside_temp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort_persistence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dl: Option<DlModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idt: Option<IdtModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ami: Option<AmiModel>,
}

impl PlantSection {
    pub fn to_plant(&self) -> PlantConfig {
        let d = PlantConfig::office_default();
        PlantConfig {
            models: ModelSet {
                dl: self.dl.clone().unwrap_or(d.models.dl),
                idt: self.idt.unwrap_or(d.models.idt),
                ami: self.ami.unwrap_or(d.models.ami),
            },
            temp_disturbance_sd: self.temp_disturbance_sd.unwrap_or(d.temp_disturbance_sd),
            illum_disturbance_sd: self.illum_disturbance_sd.unwrap_or(d.illum_disturbance_sd),
            dl_noise_sd: self.dl_noise_sd.unwrap_or(d.dl_noise_sd),
            drift: self.drift.clone().unwrap_or(d.drift),
            ambient_pull: self.ambient_pull.unwrap_or(d.ambient_pull),
            outside_temp: self.outside_temp.unwrap_or(d.outside_temp),
            effort_mean: self.effort_mean.unwrap_or(d.effort_mean),
            effort_sd: self.effort_sd.unwrap_or(d.effort_sd),
            effort_persistence: self.effort_persistence.unwrap_or(d.effort_persistence),
            substeps: self.substeps.unwrap_or(d.substeps),
        }
    }

    fn from_plant(p: &PlantConfig) -> Self {
        Self {
            temp_disturbance_sd: Some(p.temp_disturbance_sd),
            illum_disturbance_sd: Some(p.illum_disturbance_sd),
            dl_noise_sd: Some(p.dl_noise_sd),
            drift: Some(p.drift.clone()),
            ambient_pull: Some(p.ambient_pull),
            outside_temp: Some(p.outside_temp),
            effort_mean: Some(p.effort_mean),
            effort_sd: Some(p.effort_sd),
            effort_persistence: Some(p.effort_persistence),
            substeps: Some(p.substeps),
            dl: Some(p.models.dl.clone()),
            idt: Some(p.models.idt),
            ami: Some(p.models.ami),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Written by the tool into run manifests; ignored when read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<toml::Table>,
    pub mpc: MpcConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub de: Option<DeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantSection>,
    /// Models used by the controller when they differ from the plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ModelSet>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: ConfigFile =
            toml::from_str(text).map_err(|e| CliError::Input(format!("{origin}: {e}")))?;
        cfg.mpc
            .validate()
            .map_err(|e| CliError::Input(format!("{origin}: [mpc] {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Seed precedence: command line, then `[scenario] seed`, then 0.
    pub fn seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed
            .or(self.scenario.as_ref().map(|s| s.seed))
            .unwrap_or(0)
    }

    pub fn de_params(&self, seed: u64) -> DeParams {
        let d = DeParams::for_dimension(2 * self.mpc.horizon, seed);
        let s = self.de.clone().unwrap_or_default();
        DeParams {
            population_size: s.population_size.unwrap_or(d.population_size),
            mutation_factor: s.mutation_factor.unwrap_or(d.mutation_factor),
            crossover_rate: s.crossover_rate.unwrap_or(d.crossover_rate),
            max_generations: s.max_generations.unwrap_or(d.max_generations),
            tolerance: s.tolerance.unwrap_or(d.tolerance),
            seed,
        }
    }

    pub fn plant(&self) -> PlantConfig {
        self.plant.clone().unwrap_or_default().to_plant()
    }

    /// Models the controller plans with: `[controller]` if given, otherwise
    /// the plant truth.
    pub fn controller_models(&self) -> ModelSet {
        self.controller
            .clone()
            .unwrap_or_else(|| self.plant().models)
    }

    pub fn scenario(&self, cli_seed: Option<u64>) -> Result<ScenarioConfig> {
        let s = self
            .scenario
            .as_ref()
            .ok_or_else(|| CliError::Input("configuration has no [scenario] section".into()))?;
        let seed = self.seed(cli_seed);
        let sc = ScenarioConfig {
            mode: self.mpc.mode,
            steps: s.steps,
            seed,
            initial_temp: s.initial_temp.unwrap_or(self.mpc.temp_comfort),
            initial_illum: s.initial_illum.unwrap_or(self.mpc.illum_comfort),
            initial_dl: s.initial_dl.clone().unwrap_or_else(|| DEFAULT_INITIAL_DL.to_vec()),
            lunch: s.lunch.clone(),
            sweep: s.sweep,
            model_mismatch: self.controller.is_some(),
            controller_models: self.controller.clone(),
            plant: self.plant(),
            mpc: self.mpc.clone(),
            de: self.de_params(seed),
        };
        sc.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(sc)
    }

    /// Every default made explicit, with the effective seed.
    pub fn resolved(&self, cli_seed: Option<u64>) -> ConfigFile {
        let seed = self.seed(cli_seed);
        let de = self.de_params(seed);
        ConfigFile {
            manifest: None,
            mpc: self.mpc.clone(),
            scenario: self.scenario.as_ref().map(|s| ScenarioSection {
                steps: s.steps,
                seed,
                initial_temp: Some(s.initial_temp.unwrap_or(self.mpc.temp_comfort)),
                initial_illum: Some(s.initial_illum.unwrap_or(self.mpc.illum_comfort)),
                initial_dl: Some(s.initial_dl.clone().unwrap_or_else(|| DEFAULT_INITIAL_DL.to_vec())),
                lunch: s.lunch.clone(),
                sweep: s.sweep,
            }),
            de: Some(DeSection {
                population_size: Some(de.population_size),
                mutation_factor: Some(de.mutation_factor),
                crossover_rate: Some(de.crossover_rate),
                max_generations: Some(de.max_generations),
                tolerance: Some(de.tolerance),
            }),
            plant: Some(PlantSection::from_plant(&self.plant())),
            controller: self.controller.clone(),
        }
    }
}

/// Versioned on-disk form of a [`ModelSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub dl: DlModel,
    pub idt: IdtModel,
    pub ami: AmiModel,
}

impl ModelFile {
    pub fn new(models: &ModelSet) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            dl: models.dl.clone(),
            idt: models.idt,
            ami: models.ami,
        }
    }

    pub fn into_models(self) -> ModelSet {
        ModelSet {
            dl: self.dl,
            idt: self.idt,
            ami: self.ami,
        }
    }
}

pub fn load_models(path: &Path) -> Result<ModelSet> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let f: ModelFile = toml::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if f.format_version != MODEL_FORMAT_VERSION {
        return Err(CliError::Input(format!(
            "{}: model format_version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            path.display(),
            f.format_version
        )));
    }
    Ok(f.into_models())
}

pub fn write_models(path: &Path, models: &ModelSet) -> Result<()> {
    let text = toml::to_string(&ModelFile::new(models))
        .map_err(|e| CliError::Input(format!("serializing models: {e}")))?;
    std::fs::write(path, text).map_err(CliError::io(path))
}

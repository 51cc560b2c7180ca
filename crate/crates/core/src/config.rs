//! Training configuration, read from `key = value` text with `[sections]`.
//!
//! ```text
//! [train]
//! steps = 30000
//! batch_size = 3
//!
//! [lr]
//! mean = 1.6e-4
//! ```
//!
//! Every key can also be overridden as `section.key=value`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DensifyConfig, InitConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Supervise a second, horizontally mirrored view.
    pub mirror: bool,
    /// Weight of the `1 − SSIM` term; 0 means pure MSE.
    pub ssim_weight: f64,
    pub log_interval: u64,
    /// Frame used for the PSNR column of the metrics log; middle frame if unset.
    pub probe_frame: Option<usize>,
    /// Worker threads; 0 uses the default pool size.
    pub threads: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 30_000,
            batch_size: 3,
            seed: 0,
            mirror: true,
            ssim_weight: 0.0,
            log_interval: 100,
            probe_frame: None,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub poly_degree: usize,
    pub n_init: usize,
    pub init_opacity: f64,
    pub sigma_t_min: f64,
    pub sigma_t_max: f64,
    pub poly_range: f64,
    pub background: [f64; 3],
}

impl Default for ModelSection {
    fn default() -> Self {
        let init = InitConfig::default();
        Self {
            poly_degree: init.poly_degree,
            n_init: init.n_init,
            init_opacity: init.opacity,
            sigma_t_min: init.sigma_t_range.0,
            sigma_t_max: init.sigma_t_range.1,
            poly_range: init.poly_range,
            background: [0.0; 3],
        }
    }
}

impl ModelSection {
    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            n_init: self.n_init,
            poly_degree: self.poly_degree,
            opacity: self.init_opacity,
            sigma_t_range: (self.sigma_t_min, self.sigma_t_max),
            poly_range: self.poly_range,
        }
    }
}

/// Adam learning rates per parameter group. Spatial means decay
/// exponentially from `mean` to `mean_final` over the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub mean: f64,
    pub mean_final: f64,
    pub time_mean: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
    pub poly: f64,
    pub sigma_t: f64,
    pub timeline: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            mean_final: 1.6e-6,
            time_mean: 1.6e-4,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            color: 2.5e-3,
            poly: 1.6e-3,
            sigma_t: 5e-3,
            timeline: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train: TrainSection,
    pub model: ModelSection,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `section.key=value`; the value uses TOML syntax.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key '{key}' must be section.key")))?;
        let parsed: toml::Value = format!("v = {}", value.trim())
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(format!("bad value in '{assignment}': {e}")))?
            .remove("v")
            .expect("single key");
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let sect = table
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown section '{section}'")))?;
        sect.insert(field.to_string(), parsed);
        let updated: TrainConfig = table.try_into().map_err(|e| Error::Config(e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let m = &self.model;
        if t.batch_size == 0 || t.log_interval == 0 {
            return Err(Error::Config("train.batch_size and train.log_interval must be positive".into()));
        }
        if m.n_init == 0 {
            return Err(Error::Config("model.n_init must be positive".into()));
        }
        if !(m.sigma_t_min > 0.0 && m.sigma_t_max >= m.sigma_t_min) {
            return Err(Error::Config("need 0 < model.sigma_t_min <= model.sigma_t_max".into()));
        }
        if !(m.init_opacity > 0.0 && m.init_opacity < 1.0) {
            return Err(Error::Config("model.init_opacity must be in (0,1)".into()));
        }
        if !(0.0..=1.0).contains(&t.ssim_weight) {
            return Err(Error::Config("train.ssim_weight must be in [0,1]".into()));
        }
        let l = &self.lr;
        let rates = [
            ("mean", l.mean),
            ("mean_final", l.mean_final),
            ("time_mean", l.time_mean),
            ("opacity", l.opacity),
            ("scale", l.scale),
            ("rotation", l.rotation),
            ("color", l.color),
            ("poly", l.poly),
            ("sigma_t", l.sigma_t),
            ("timeline", l.timeline),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("lr.{name} must be positive, got {v}")));
        }
        let d = &self.densify;
        if d.interval == 0 || d.split_children == 0 || !(d.split_factor > 0.0) {
            return Err(Error::Config("densify.interval, split_children, split_factor must be positive".into()));
        }
        if !(d.prune_opacity > 0.0 && d.prune_opacity < 1.0) || !(d.reset_opacity > 0.0 && d.reset_opacity < 1.0) {
            return Err(Error::Config("densify opacities must be in (0,1)".into()));
        }
        Ok(())
    }
}

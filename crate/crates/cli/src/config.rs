//! The run configuration: one JSON document holding every tunable.

use kernel_diff::blur::TrajectoryParams;
use kernel_diff::denoiser::{DenoiserArch, TrainConfig};
use kernel_diff::diffusion::ScheduleConfig;
use kernel_diff::nonblind::WienerConfig;
use kernel_diff::rng::derive_seed;
use kernel_diff::sampler::GuidanceConfig;
use kernel_diff::toy1d::{MarginalOptions, ToyProblem};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySurfaceConfig {
    /// Half-width of both projection axes.
    pub half_extent: f64,
    pub resolution: usize,
    pub sigma_step: f64,
    pub marginal: MarginalOptions,
}

impl Default for ToySurfaceConfig {
    fn default() -> Self {
        Self {
            half_extent: 1.0,
            resolution: 61,
            sigma_step: 0.05,
            marginal: MarginalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCompareConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// A run fails when `|σ̂ − σ_true|` exceeds this.
    pub failure_tolerance: f64,
}

impl Default for ToyCompareConfig {
    fn default() -> Self {
        Self {
            restarts: 100,
            max_iters: 200,
            failure_tolerance: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelGenConfig {
    pub count: usize,
    pub size: usize,
    pub trajectory: TrajectoryParams,
}

impl Default for KernelGenConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            size: 11,
            trajectory: TrajectoryParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of procedural training scenes.
    pub scenes: usize,
    /// Extra pixels per side kept for random cropping.
    pub crop_margin: usize,
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scenes: 200,
            crop_margin: 8,
            noise_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out blurred test images for `ablate`.
    pub test_images: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { test_images: 20 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Kernel dataset; `<out>/kernels.kdkd` when unset.
    pub kernels: Option<PathBuf>,
    /// Checkpoint; `<out>/model.kdnn` when unset.
    pub checkpoint: Option<PathBuf>,
    /// Blurred input of `deblur`, or the estimate scored by `eval`.
    pub input: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub kernel_estimate: Option<PathBuf>,
    pub kernel_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub toy: ToyProblem,
    pub toy_surface: ToySurfaceConfig,
    pub toy_compare: ToyCompareConfig,
    pub kernels: KernelGenConfig,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub arch: DenoiserArch,
    /// `train.seed` is overwritten with a value derived from the root seed.
    pub train: TrainConfig,
    /// `guidance.kernel_scale` is taken from the checkpoint when sampling.
    pub guidance: GuidanceConfig,
    pub solver: WienerConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Sets `a.b.c = value`; the value is parsed as JSON, falling back to a
/// string.
fn set_path(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{path}`: `{key}` is not inside an object")))?;
        if i + 1 == keys.len() {
            if !obj.contains_key(*key) {
                return Err(ConfigError::Invalid(format!("unknown key `{path}`")));
            }
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*key)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown key `{path}`")))?;
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, overlaid by the optional config file, then dotted-path
    /// overrides, then the seed flag.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            let user: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            if !user.is_object() {
                return Err(ConfigError::Invalid(format!("{}: top level must be an object", path.display())));
            }
            merge(&mut value, user);
        }
        for o in overrides {
            set_path(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = derive_seed(cfg.seed, "train", 0);
        Ok(cfg)
    }

    pub fn kernels_path(&self, out: &Path) -> PathBuf {
        self.paths.kernels.clone().unwrap_or_else(|| out.join("kernels.kdkd"))
    }

    pub fn checkpoint_path(&self, out: &Path) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| out.join("model.kdnn"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::resolve(None, &[], None).unwrap();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.toy.a_true, 64.0);
        assert_eq!(c.toy.n_samples, 128);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = RunConfig::resolve(None, &["toy.noise_std=0.02".into(), "paths.input=a.png".into()], Some(7)).unwrap();
        assert_eq!(c.toy.noise_std, 0.02);
        assert_eq!(c.paths.input, Some(PathBuf::from("a.png")));
        assert_eq!(c.seed, 7);
        assert!(RunConfig::resolve(None, &["toy.nope=1".into()], None).is_err());
        assert!(RunConfig::resolve(None, &["missing".into()], None).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"toy": {"noise_std": 0.03}, "bogus": 1}"#).unwrap();
        assert!(matches!(RunConfig::resolve(Some(&p), &[], None), Err(ConfigError::Invalid(_))));
        std::fs::write(&p, r#"{"toy": {"noise_std": 0.03}}"#).unwrap();
        let c = RunConfig::resolve(Some(&p), &[], None).unwrap();
        assert_eq!(c.toy.noise_std, 0.03);
        assert_eq!(c.toy.w_true, 10.0);
    }
}

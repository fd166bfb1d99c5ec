//! JSON run configuration.
//!
//! A run is fully described by one config file. Relative paths inside it
//! resolve against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sparse_snn::data::Encoder;
use sparse_snn::neuron::{LifParams, SpikeMode};
use sparse_snn::sparsity::{PqParams, Scope};
use sparse_snn::topology::Connectivity;
use sparse_snn::train::{LrSchedule, MaskInit, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: u64,
    pub arch: Vec<usize>,
    pub time_steps: usize,
    pub tau: f64,
    pub v_th: f64,
    pub surrogate_width: f64,
    pub initial_density: f64,
    pub p: f64,
    pub q: f64,
    pub alpha_r: f64,
    pub gamma: f64,
    pub beta: f64,
    pub scope: Scope,
    pub epoch_frequency: usize,
    pub regrow_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub opt_momentum: f64,
    pub encoder: Encoder,
    pub dataset: DatasetConfig,
    pub output_dir: PathBuf,

    #[serde(default = "default_mask_init")]
    pub mask_init: MaskInit,
    #[serde(default = "default_lr_schedule")]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_weight_gain")]
    pub weight_gain: f64,
    #[serde(default = "default_spike_mode")]
    pub spike_mode: SpikeMode,
    #[serde(default)]
    pub exempt_layers: Vec<usize>,
    #[serde(default)]
    pub log_pq_every_epoch: bool,
}

fn default_mask_init() -> MaskInit {
    MaskInit::Exact
}

fn default_lr_schedule() -> LrSchedule {
    LrSchedule::Constant
}

fn default_weight_gain() -> f64 {
    TrainConfig::default().weight_gain
}

fn default_spike_mode() -> SpikeMode {
    SpikeMode::Hard
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Any IDX image/label pair; MNIST is the usual case.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `limit` training samples.
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        /// Generator seed; the run seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
}

pub fn default_separation() -> f64 {
    0.3
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("<document>")
                .to_string();
            CliError::Config { key, detail: msg }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            key: "<file>".into(),
            detail: format!("{}: {}", path.display(), e),
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DatasetConfig::Mnist {
            images,
            labels,
            test_images,
            test_labels,
            ..
        } = &mut self.dataset
        {
            for p in [images, labels, test_images, test_labels] {
                fix(p);
            }
        }
    }

    /// Checks every key against the invariants of the module that owns it.
    pub fn validate(&self) -> Result<TrainConfig, CliError> {
        let train = self.train_config();
        let lif = |f: fn(&mut LifParams, f64), v: f64| {
            let mut l = LifParams::default();
            f(&mut l, v);
            l.validate()
        };
        let pq = |f: fn(&mut PqParams, f64), v: f64| {
            let mut p = PqParams::default();
            f(&mut p, v);
            p.validate()
        };
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut t = TrainConfig::default();
            f(&mut t);
            t.validate()
        };
        let checks: Vec<(&str, sparse_snn::Result<()>)> = vec![
            ("arch", with(&|t| t.layer_sizes = self.arch.clone())),
            ("time_steps", with(&|t| t.time_steps = self.time_steps)),
            ("tau", lif(|l, v| l.tau = v, self.tau)),
            ("v_th", lif(|l, v| l.v_th = v, self.v_th)),
            ("surrogate_width", lif(|l, v| l.surrogate_width = v, self.surrogate_width)),
            ("initial_density", with(&|t| t.connectivity = Connectivity::Density(self.initial_density))),
            ("p", pq(|c, v| c.p = v, self.p)),
            ("q", pq(|c, v| c.q = v, self.q).and(pq_pair(self.p, self.q))),
            ("alpha_r", pq(|c, v| c.alpha_r = v, self.alpha_r)),
            ("gamma", pq(|c, v| c.gamma = v, self.gamma)),
            ("beta", pq(|c, v| c.beta = v, self.beta)),
            ("epoch_frequency", with(&|t| t.epoch_frequency = self.epoch_frequency)),
            ("regrow_fraction", with(&|t| t.regrow_fraction = self.regrow_fraction)),
            ("batch_size", with(&|t| t.batch_size = self.batch_size)),
            ("lr", with(&|t| t.lr = self.lr)),
            ("opt_momentum", with(&|t| t.opt_momentum = self.opt_momentum)),
            ("weight_gain", with(&|t| t.weight_gain = self.weight_gain)),
            ("exempt_layers", train.validate()),
        ];
        for (key, outcome) in checks {
            if let Err(e) = outcome {
                return Err(CliError::Config {
                    key: key.into(),
                    detail: e.to_string(),
                });
            }
        }
        if let DatasetConfig::Synthetic {
            classes,
            dim,
            separation,
            ..
        } = &self.dataset
        {
            let bad = |detail: String| CliError::Config {
                key: "dataset".into(),
                detail,
            };
            if *classes < 2 || dim < classes {
                return Err(bad(format!("need classes >= 2 and dim >= classes, got {} and {}", classes, dim)));
            }
            if !(0.0..=0.9).contains(separation) {
                return Err(bad(format!("separation must be in [0, 0.9], got {}", separation)));
            }
            if *dim != self.arch[0] {
                return Err(bad(format!("dim {} does not match arch input {}", dim, self.arch[0])));
            }
            if *classes > *self.arch.last().expect("validated") {
                return Err(bad(format!("{} classes but {} output neurons", classes, self.arch.last().unwrap())));
            }
        }
        Ok(train)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            layer_sizes: self.arch.clone(),
            time_steps: self.time_steps,
            lif: LifParams {
                tau: self.tau,
                v_th: self.v_th,
                surrogate_width: self.surrogate_width,
                mode: self.spike_mode,
            },
            pq: PqParams {
                p: self.p,
                q: self.q,
                alpha_r: self.alpha_r,
                gamma: self.gamma,
                beta: self.beta,
            },
            scope: self.scope,
            connectivity: Connectivity::Density(self.initial_density),
            mask_init: self.mask_init,
            epoch_frequency: self.epoch_frequency,
            regrow_fraction: self.regrow_fraction,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_schedule: self.lr_schedule,
            opt_momentum: self.opt_momentum,
            encoder: self.encoder,
            weight_gain: self.weight_gain,
            exempt_layers: self.exempt_layers.clone(),
            log_pq_every_epoch: self.log_pq_every_epoch,
        }
    }
}

fn pq_pair(p: f64, q: f64) -> sparse_snn::Result<()> {
    PqParams {
        p,
        q,
        ..PqParams::default()
    }
    .validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"{
        "seed": 7, "arch": [8, 12, 3], "time_steps": 4,
        "tau": 0.5, "v_th": 1.0, "surrogate_width": 1.0, "initial_density": 0.5,
        "p": 1, "q": 2, "alpha_r": 0.001, "gamma": 1, "beta": 0.9,
        "scope": "layer", "epoch_frequency": 2, "regrow_fraction": 0.5,
        "epochs": 3, "batch_size": 8, "lr": 0.05, "opt_momentum": 0.9,
        "encoder": "direct",
        "dataset": {"type": "synthetic", "classes": 3, "dim": 8, "per_class": 10},
        "output_dir": "out"
    }"#;

    fn edit(key: &str, value: serde_json::Value) -> String {
        let mut v: serde_json::Value = serde_json::from_str(SAMPLE).unwrap();
        v[key] = value;
        v.to_string()
    }

    fn offending_key(text: &str) -> String {
        let err = RunConfigFile::parse(text).and_then(|c| c.validate().map(|_| ())).unwrap_err();
        match err {
            CliError::Config { key, .. } => key,
            other => panic!("expected config error, got {:?}", other),
        }
    }

    #[test]
    fn sample_parses_and_validates() {
        let cfg = RunConfigFile::parse(SAMPLE).unwrap();
        let train = cfg.validate().unwrap();
        assert_eq!(train.layer_sizes, vec![8, 12, 3]);
        assert_eq!(train.mask_init, MaskInit::Exact);
        assert_eq!(train.lif.mode, SpikeMode::Hard);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = edit("learning_rate", serde_json::json!(0.1));
        assert_eq!(offending_key(&text), "learning_rate");
    }

    #[test]
    fn missing_key_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(SAMPLE).unwrap();
        v.as_object_mut().unwrap().remove("tau");
        assert_eq!(offending_key(&v.to_string()), "tau");
    }

    #[test]
    fn out_of_range_values_are_named() {
        let cases = [
            ("tau", serde_json::json!(1.5)),
            ("v_th", serde_json::json!(0.0)),
            ("initial_density", serde_json::json!(1.5)),
            ("q", serde_json::json!(0.5)),
            ("beta", serde_json::json!(0.0)),
            ("epoch_frequency", serde_json::json!(0)),
            ("regrow_fraction", serde_json::json!(2.0)),
            ("batch_size", serde_json::json!(0)),
            ("lr", serde_json::json!(-1.0)),
            ("arch", serde_json::json!([8])),
            ("exempt_layers", serde_json::json!([5])),
        ];
        for (key, value) in cases {
            assert_eq!(offending_key(&edit(key, value)), key);
        }
    }

    #[test]
    fn dataset_mismatch_rejected() {
        let text = edit(
            "dataset",
            serde_json::json!({"type": "synthetic", "classes": 3, "dim": 9, "per_class": 10}),
        );
        assert_eq!(offending_key(&text), "dataset");
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let mut cfg = RunConfigFile::parse(SAMPLE).unwrap();
        cfg.resolve_paths(Path::new("/runs/a"));
        assert_eq!(cfg.output_dir, Path::new("/runs/a/out"));
    }
}

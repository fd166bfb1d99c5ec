//! Command implementations behind the `sparse-snn` binary.
//!
//! Exit codes: 0 ok, 2 config or format problem, 3 runtime invariant
//! breach, 4 I/O failure.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sparse_snn::checkpoint;
use sparse_snn::data::{idx_load, synth_poisson, write_idx, Dataset, Split};
use sparse_snn::sparsity::{pq_reports, PqParams, Scope};
use sparse_snn::train::{two_stage_train, EpochMetrics, Network};
use sparse_snn::{Error, Rng};

use crate::config::{DatasetConfig, RunConfigFile};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const PQ_LOG_FILE: &str = "pq.jsonl";
pub const CHECKPOINT_FILE: &str = "final.snnw";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("runtime invariant breach: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Format(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {}", path.display(), e))
    }
}

/// Maps a core error raised after config validation.
fn runtime(e: Error) -> CliError {
    match e {
        Error::Io(e) => CliError::Io(e.to_string()),
        Error::Format(_) | Error::Length(_) | Error::Consistency(_) => CliError::Format(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset, CliError> {
    let ds = idx_load(images, labels).map_err(|e| match e {
        Error::Io(io) => CliError::Config {
            key: "dataset".into(),
            detail: format!("{}: {}", images.display(), io),
        },
        other => CliError::Format(format!("{}: {}", images.display(), other)),
    })?;
    Ok(match limit {
        Some(n) => ds.truncated(n),
        None => ds,
    })
}

pub fn load_datasets(cfg: &RunConfigFile) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = match &cfg.dataset {
        DatasetConfig::Mnist {
            images,
            labels,
            test_images,
            test_labels,
            limit,
            test_limit,
        } => (
            load_idx(images, labels, *limit)?,
            load_idx(test_images, test_labels, *test_limit)?.with_split(Split::Test),
        ),
        DatasetConfig::Synthetic {
            classes,
            dim,
            per_class,
            separation,
            seed,
        } => {
            let mut rng = Rng::new(seed.unwrap_or(cfg.seed));
            synth_poisson(*classes, *dim, *per_class, *separation, &mut rng).map_err(|e| CliError::Config {
                key: "dataset".into(),
                detail: e.to_string(),
            })?
        }
    };
    let n_in = cfg.arch[0];
    let n_out = *cfg.arch.last().expect("validated");
    for ds in [&train, &test] {
        let bad = |detail: String| CliError::Config {
            key: "dataset".into(),
            detail,
        };
        if !ds.is_empty() && ds.dim() != n_in {
            return Err(bad(format!("sample dim {} does not match arch input {}", ds.dim(), n_in)));
        }
        if ds.num_classes > n_out {
            return Err(bad(format!("{} classes but {} output neurons", ds.num_classes, n_out)));
        }
    }
    if train.is_empty() && cfg.epochs > 0 {
        return Err(CliError::Config {
            key: "dataset".into(),
            detail: "training set is empty".into(),
        });
    }
    Ok((train, test))
}

pub fn metrics_header(layers: usize) -> String {
    let mut cols = vec!["epoch", "train_loss", "train_acc", "test_acc"].into_iter().map(String::from).collect::<Vec<_>>();
    cols.extend((0..layers).map(|l| format!("density_l{}", l)));
    cols.push("sops".into());
    cols.push("rewire_events".into());
    cols.join(",")
}

pub fn metrics_row(m: &EpochMetrics) -> String {
    let mut cols = vec![
        m.epoch.to_string(),
        m.train_loss.to_string(),
        m.train_accuracy.to_string(),
        m.test_accuracy.to_string(),
    ];
    cols.extend(m.densities.iter().map(f64::to_string));
    cols.push(m.sops.to_string());
    cols.push(m.rewire_events.len().to_string());
    cols.join(",")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn jsonl<T: serde::Serialize>(items: impl Iterator<Item = T>) -> String {
    items
        .map(|x| serde_json::to_string(&x).expect("plain data serializes") + "\n")
        .collect()
}

/// Files written by a training run.
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub metrics: PathBuf,
    pub events: PathBuf,
    pub checkpoint: PathBuf,
    pub final_test_accuracy: Option<f64>,
}

pub fn cmd_train(config_path: &Path) -> Result<TrainArtifacts, CliError> {
    let cfg = RunConfigFile::load(config_path)?;
    let train_cfg = cfg.validate()?;
    let (train, test) = load_datasets(&cfg)?;

    let (network, metrics) = if cfg.epochs == 0 {
        (Network::initialize(&train_cfg).map_err(runtime)?, Vec::new())
    } else {
        let out = two_stage_train(&train_cfg, &train, &test).map_err(runtime)?;
        (out.network, out.metrics)
    };

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut csv = metrics_header(network.layers.len()) + "\n";
    for m in &metrics {
        csv += &metrics_row(m);
        csv.push('\n');
    }
    let artifacts = TrainArtifacts {
        metrics: dir.join(METRICS_FILE),
        events: dir.join(EVENTS_FILE),
        checkpoint: dir.join(CHECKPOINT_FILE),
        final_test_accuracy: metrics.last().map(|m| m.test_accuracy),
    };
    write_file(&artifacts.metrics, csv.as_bytes())?;
    write_file(
        &artifacts.events,
        jsonl(metrics.iter().flat_map(|m| &m.rewire_events)).as_bytes(),
    )?;
    if cfg.log_pq_every_epoch {
        let path = dir.join(PQ_LOG_FILE);
        let rows = metrics.iter().flat_map(|m| m.pq_reports.iter().map(move |r| (m.epoch, r)));
        let text: String = rows
            .map(|(epoch, r)| {
                let mut v = serde_json::to_value(r).expect("plain data serializes");
                v["epoch"] = epoch.into();
                v.to_string() + "\n"
            })
            .collect();
        write_file(&path, text.as_bytes())?;
    }
    let bytes = checkpoint::encode_layers(&network.layers).map_err(runtime)?;
    write_file(&artifacts.checkpoint, &bytes)?;
    Ok(artifacts)
}

pub fn pq_csv_header() -> &'static str {
    "scope_id,d,index,r,prune_count,ratio"
}

pub fn cmd_pq(checkpoint_path: &Path, scope: Scope, params: PqParams, out: &mut dyn Write) -> Result<(), CliError> {
    params.validate().map_err(|e| CliError::Config {
        key: "pq".into(),
        detail: e.to_string(),
    })?;
    let layers = checkpoint::load(checkpoint_path)
        .map_err(|e| CliError::Format(format!("{}: {}", checkpoint_path.display(), e)))?;
    let mut text = String::from(pq_csv_header());
    text.push('\n');
    for (l, layer) in layers.iter().enumerate() {
        for r in pq_reports(layer, l, scope, &params).map_err(runtime)? {
            if r.skipped {
                text += &format!("{},{},skip,,0,0\n", r.scope_id, r.d);
            } else {
                text += &format!("{},{},{},{},{},{}\n", r.scope_id, r.d, r.index, r.r, r.prune_count, r.ratio);
            }
        }
    }
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

pub const GEN_FILES: [&str; 4] = ["train-images.idx", "train-labels.idx", "test-images.idx", "test-labels.idx"];

pub struct GenDataArgs {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub seed: u64,
    pub separation: f64,
    pub out: PathBuf,
}

/// Writes a synthetic train/test split as IDX files, images shaped `[n, 1, dim]`.
pub fn cmd_gen_data(args: &GenDataArgs) -> Result<Vec<PathBuf>, CliError> {
    let (train, test) = synth_poisson(
        args.classes,
        args.dim,
        args.per_class,
        args.separation,
        &mut Rng::new(args.seed),
    )
    .map_err(|e| CliError::Config {
        key: "gen-data".into(),
        detail: e.to_string(),
    })?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let paths: Vec<PathBuf> = GEN_FILES.iter().map(|f| args.out.join(f)).collect();
    for (ds, pair) in [&train, &test].into_iter().zip(paths.chunks(2)) {
        write_idx(ds, &pair[0], &pair[1], 1, args.dim).map_err(|e| match e {
            Error::Io(io) => CliError::io(&pair[0], io),
            other => CliError::Format(other.to_string()),
        })?;
    }
    Ok(paths)
}

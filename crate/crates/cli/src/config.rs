//! Run configuration and reproducibility plumbing.
//!
//! A run is described by a single JSON config file; every field can also be
//! supplied or overridden by a command-line flag. The resolved config is
//! hashed (FNV-1a over its canonical JSON bytes) and embedded in the run
//! manifest, so any output directory records exactly what produced it.
//! The seed is mandatory — there are no entropy defaults anywhere.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ktrace_core::dataset::{self, CsvFormat, Dataset, DatasetError};
use ktrace_core::dkt::{DktError, DktMode, DktModel};
use ktrace_core::dkvmn::{DkvmnError, DkvmnModel};
use ktrace_core::metrics::{EvalError, MetricsError, ModelKind, Ordering};
use ktrace_core::numerics::{fnv1a64, NumericsError, TrainConfig};

// ── errors and exit codes ──────────────────────────────────────────────

/// Command failures, partitioned by exit code: 1 usage, 2 data, 3 numerical.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerics(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerics(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Data(msg) => write!(f, "data: {msg}"),
            CliError::Numerics(msg) => write!(f, "numerical: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DktError> for CliError {
    fn from(e: DktError) -> Self {
        match e {
            DktError::Numerics(n) => CliError::Numerics(n.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DkvmnError> for CliError {
    fn from(e: DkvmnError) -> Self {
        match e {
            DkvmnError::Numerics(n) => CliError::Numerics(n.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Numerics(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dkt(inner) => inner.into(),
            EvalError::Dkvmn(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

// ── config types ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Dkt,
    DktFrozen,
    Dkvmn,
    Bkt,
    Pfa,
}

impl ModelName {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "dkt" => Ok(ModelName::Dkt),
            "dkt_frozen" => Ok(ModelName::DktFrozen),
            "dkvmn" => Ok(ModelName::Dkvmn),
            "bkt" => Ok(ModelName::Bkt),
            "pfa" => Ok(ModelName::Pfa),
            other => Err(CliError::Usage(format!(
                "unknown model {other:?} (expected dkt, dkt_frozen, dkvmn, bkt, or pfa)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelName::Dkt => "dkt",
            ModelName::DktFrozen => "dkt_frozen",
            ModelName::Dkvmn => "dkvmn",
            ModelName::Bkt => "bkt",
            ModelName::Pfa => "pfa",
        }
    }
}

/// Where a dataset lives: a canonical directory (sequences.jsonl +
/// vocab.json) or a raw CSV that gets ingested on the fly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Canonical,
    Assistments,
    EdnetKt1,
}

impl DataFormat {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "canonical" => Ok(DataFormat::Canonical),
            "assistments" => Ok(DataFormat::Assistments),
            "ednet_kt1" => Ok(DataFormat::EdnetKt1),
            other => Err(CliError::Usage(format!(
                "unknown dataset format {other:?} (expected canonical, assistments, or ednet_kt1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub format: DataFormat,
}

/// Model hyperparameters; unset fields take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    /// LSTM hidden size H.
    pub hidden: usize,
    /// Memory slot count M.
    pub slots: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_f: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training sequences longer than this are chunked.
    pub max_len: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        let t = TrainConfig::default();
        Hyper {
            hidden: DktModel::DEFAULT_HIDDEN,
            slots: DkvmnModel::DEFAULT_SLOTS,
            d_k: DkvmnModel::DEFAULT_D_K,
            d_v: DkvmnModel::DEFAULT_D_V,
            d_f: DkvmnModel::DEFAULT_D_F,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            max_len: t.max_len,
        }
    }
}

impl Hyper {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            max_len: self.max_len,
            ..TrainConfig::default()
        }
    }
}

/// Everything one `train` or `eval` run needs, in one reproducible record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelName,
    pub dataset: DatasetRef,
    pub ordering: Ordering,
    pub hyperparameters: Hyper,
    pub folds: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl RunConfig {
    /// The evaluation-driver model for this config.
    pub fn model_kind(&self) -> ModelKind {
        let h = &self.hyperparameters;
        let train = h.train_config(self.seed);
        match self.model {
            ModelName::Bkt => ModelKind::Bkt,
            ModelName::Pfa => ModelKind::Pfa,
            ModelName::Dkt => ModelKind::Dkt {
                hidden: h.hidden,
                train,
            },
            ModelName::DktFrozen => ModelKind::DktFrozen {
                hidden: h.hidden,
                train,
            },
            ModelName::Dkvmn => ModelKind::Dkvmn {
                slots: h.slots,
                d_k: h.d_k,
                d_v: h.d_v,
                d_f: h.d_f,
                train,
            },
        }
    }

    /// A short label for report rows: the dataset file stem.
    pub fn dataset_tag(&self) -> String {
        self.dataset
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    }
}

// ── resolution: file + flag overrides ──────────────────────────────────

/// Flag-level overrides; every field of [`RunConfig`] has one.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub model: Option<String>,
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub ordering: Option<String>,
    pub hidden: Option<usize>,
    pub slots: Option<usize>,
    pub d_k: Option<usize>,
    pub d_v: Option<usize>,
    pub d_f: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_len: Option<usize>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// The config file shape: identical to [`RunConfig`] but with every field
/// optional, so flags can fill the gaps.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<ModelName>,
    dataset: Option<DatasetRef>,
    ordering: Option<Ordering>,
    hyperparameters: Option<Hyper>,
    folds: Option<usize>,
    seed: Option<u64>,
    output: Option<PathBuf>,
}

pub fn parse_ordering(name: &str) -> Result<Ordering, CliError> {
    match name {
        "original" => Ok(Ordering::Original),
        "spread" => Ok(Ordering::Spread),
        other => Err(CliError::Usage(format!(
            "unknown ordering {other:?} (expected original or spread)"
        ))),
    }
}

/// Load the optional config file, apply flag overrides, and check that the
/// required fields (model, dataset, seed, output) ended up present.
pub fn resolve_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    let mut raw = match path {
        Some(p) => {
            let bytes = fs::read(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_slice::<RawConfig>(&bytes)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))?
        }
        None => RawConfig::default(),
    };

    if let Some(m) = &ov.model {
        raw.model = Some(ModelName::parse(m)?);
    }
    if let Some(p) = &ov.dataset {
        let format = match &ov.format {
            Some(f) => DataFormat::parse(f)?,
            None => raw
                .dataset
                .as_ref()
                .map(|d| d.format)
                .unwrap_or(DataFormat::Canonical),
        };
        raw.dataset = Some(DatasetRef {
            path: p.clone(),
            format,
        });
    } else if let Some(f) = &ov.format {
        let format = DataFormat::parse(f)?;
        match raw.dataset.as_mut() {
            Some(d) => d.format = format,
            None => {
                return Err(CliError::Usage(
                    "--format given without a dataset path".into(),
                ))
            }
        }
    }
    if let Some(o) = &ov.ordering {
        raw.ordering = Some(parse_ordering(o)?);
    }

    let mut hyper = raw.hyperparameters.unwrap_or_default();
    if let Some(v) = ov.hidden {
        hyper.hidden = v;
    }
    if let Some(v) = ov.slots {
        hyper.slots = v;
    }
    if let Some(v) = ov.d_k {
        hyper.d_k = v;
    }
    if let Some(v) = ov.d_v {
        hyper.d_v = v;
    }
    if let Some(v) = ov.d_f {
        hyper.d_f = v;
    }
    if let Some(v) = ov.learning_rate {
        hyper.learning_rate = v;
    }
    if let Some(v) = ov.epochs {
        hyper.epochs = v;
    }
    if let Some(v) = ov.batch_size {
        hyper.batch_size = v;
    }
    if let Some(v) = ov.max_len {
        hyper.max_len = v;
    }

    let config = RunConfig {
        model: raw
            .model
            .ok_or_else(|| CliError::Usage("no model (config file or --model)".into()))?,
        dataset: raw
            .dataset
            .ok_or_else(|| CliError::Usage("no dataset (config file or --dataset)".into()))?,
        ordering: raw.ordering.unwrap_or(Ordering::Original),
        hyperparameters: hyper,
        folds: ov.folds.or(raw.folds).unwrap_or(5),
        seed: ov
            .seed
            .or(raw.seed)
            .ok_or_else(|| CliError::Usage("no seed (config file or --seed); seeds are mandatory".into()))?,
        output: ov
            .out
            .clone()
            .or(raw.output)
            .ok_or_else(|| CliError::Usage("no output directory (config file or --out)".into()))?,
    };

    if config.folds < 2 {
        return Err(CliError::Usage(format!(
            "folds must be at least 2, got {}",
            config.folds
        )));
    }
    Ok(config)
}

// ── shared plumbing ────────────────────────────────────────────────────

/// Load the dataset a config points at, ingesting CSV formats on the fly.
pub fn load_dataset(dataset: &DatasetRef) -> Result<Dataset, CliError> {
    let ds = match dataset.format {
        DataFormat::Canonical => dataset::read_canonical(&dataset.path)?,
        DataFormat::Assistments => dataset::ingest_csv(&dataset.path, CsvFormat::Assistments)?,
        DataFormat::EdnetKt1 => dataset::ingest_csv(&dataset.path, CsvFormat::EdnetKt1)?,
    };
    Ok(ds)
}

/// Write through a temp file in the same directory, then rename, so a
/// crash never leaves a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = match path.file_name() {
        Some(name) => {
            let mut n = name.to_os_string();
            n.push(".tmp");
            path.with_file_name(n)
        }
        None => return Err(CliError::Data(format!("bad output path {}", path.display()))),
    };
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn hex_hash(h: u64) -> String {
    format!("{h:#018x}")
}

/// Emit `<dir>/manifest.json`: the command, its resolved arguments or
/// config (with hash), and an FNV-1a digest of every output file. Re-runs
/// with identical inputs reproduce it byte for byte.
pub fn write_run_manifest(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    files: &[&str],
    notes: serde_json::Value,
) -> Result<(), CliError> {
    let config_hash = hex_hash(fnv1a64(
        &serde_json::to_vec(&config).expect("manifest config serializes"),
    ));
    let mut outputs = Vec::new();
    for name in files {
        let bytes = fs::read(dir.join(name))?;
        outputs.push(serde_json::json!({
            "file": name,
            "fnv1a64": hex_hash(fnv1a64(&bytes)),
        }));
    }
    let doc = serde_json::json!({
        "command": command,
        "config": config,
        "config_hash": config_hash,
        "outputs": outputs,
        "notes": notes,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &bytes)
}

/// Probe-parallelism cap from `KT_PROBE_THREADS` (default 1, the
/// bit-reproducible setting; probes currently run sequentially so higher
/// caps change nothing).
pub fn probe_threads() -> Result<usize, CliError> {
    match std::env::var("KT_PROBE_THREADS") {
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "KT_PROBE_THREADS must be a positive integer, got {raw:?}"
            ))),
        },
        Err(_) => Ok(1),
    }
}

// Baseline checkpoints are plain JSON parameter files.
pub fn save_baseline_json<T: Serialize>(dir: &Path, params: &T) -> Result<u64, CliError> {
    fs::create_dir_all(dir)?;
    let mut bytes = serde_json::to_vec_pretty(params).expect("params serialize");
    bytes.push(b'\n');
    write_atomic(&dir.join("params.json"), &bytes)?;
    Ok(fnv1a64(&bytes))
}

/// Load a DKT checkpoint directory.
pub fn load_dkt(dir: &Path) -> Result<DktModel, CliError> {
    Ok(DktModel::load(dir)?)
}

/// Load a DKVMN checkpoint directory.
pub fn load_dkvmn(dir: &Path) -> Result<DkvmnModel, CliError> {
    Ok(DkvmnModel::load(dir)?)
}

/// Frozen-recurrent selection for model construction.
pub fn dkt_mode(model: ModelName) -> DktMode {
    match model {
        ModelName::DktFrozen => DktMode::FrozenRecurrent,
        _ => DktMode::Full,
    }
}

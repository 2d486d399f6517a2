//! Config-driven experiment runs.
//!
//! An [`ExperimentConfig`] names a group, an irrep source, a dataset, a list
//! of architectures and a training budget. [`run`] trains every
//! architecture and writes plot-ready CSV traces plus JSON reports into the
//! output directory:
//!
//! | file | content |
//! |------|---------|
//! | `config.json` | the config as parsed |
//! | `manifest.json` | versions, seeds, stage outcomes, wall time |
//! | `dataset.csv` | the training set (`label, x0, x1, …`) |
//! | `<arch>_trace.csv` | the training trace |
//! | `<arch>_beta.json` | final `β` and its Fourier blocks |
//! | `<arch>_norms.json` | [`NormReport`] of the final `β` |
//! | `<arch>_kkt.json` | dual fit and layer recurrences |
//! | `<arch>_uncertainty.json` | [`UncertaintyReport`] of the final `β` |
//! | `<arch>_snapshots.jsonl` | `β` at every recorded epoch (opt-in) |
//! | `baseline.json` | minimum-norm reference values |
//! | `summary.csv` | one line per architecture |
//!
//! With `replicas > 1` each replica writes into `replica_<k>/` and the run
//! directory gains `aggregate.csv` (mean and 95% confidence interval of
//! every trace column across replicas). Only `manifest.json` carries
//! timestamps, so reruns produce byte-identical CSV files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    fit_dual_coefficients, min_schatten_baseline, norm_report, recurrence_residuals, uncertainty_check, BaselineResult, DualFitOptions,
    KktReport, NormReport, RecurrenceReport, UncertaintyReport, ACTIVE_MARGIN_TOL, RANK_TOL,
};
use crate::data::{
    fourier_sparse_dataset, gaussian_dataset, lift_dataset, load_mnist_binary, read_dataset_csv, write_dataset_csv, LiftSpec,
};
use crate::error::ErrorJson;
use crate::gcnn::{
    flatten_real_blocks, init_network, train_observed, Activation, ArchKind, ArchitectureSpec, Dataset, StepSchedule, TraceRow,
    TrainConfig, TrainingTrace, CSV_HEADER,
};
use crate::group::{parse_group_spec, GroupJson, GroupTable};
use crate::linalg::norm2;
use crate::repr::{builtin_irreps, builtin_irreps_real, decompose_regular_representation, FourierBlocksJson, IrrepSet, IrrepSetJson};
use crate::{Error, Result};

/// The only config layout this version reads.
pub const SCHEMA_VERSION: u32 = 1;

/// A complete experiment description. Unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub group: GroupSource,
    #[serde(default)]
    pub irreps: IrrepSource,
    pub dataset: DatasetSpec,
    pub architectures: Vec<ArchConfig>,
    pub schedule: StepSchedule,
    pub budget: Budget,
    #[serde(default)]
    pub analysis: AnalysisToggles,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
}

fn one() -> usize {
    1
}

/// Where the group comes from: a spec such as `dihedral:8` or
/// `cyclic:7*cyclic:7*dihedral:8`, or a JSON multiplication table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupSource {
    Spec(String),
    TableFile(PathBuf),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IrrepSource {
    /// Closed-form irreps for the built-in families and their products.
    #[default]
    Builtin,
    /// Real orthogonal closed-form irreps (dihedral and `C₂` factors);
    /// required by band-limited nets.
    BuiltinReal,
    /// Numerical decomposition of the regular representation.
    Numerical {
        seed: u64,
    },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Standard normal inputs labelled by a random linear rule.
    Gaussian {
        n: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Gaussian inputs labelled by a ground truth supported on a few
    /// Fourier blocks.
    FourierSparse {
        active_blocks: Vec<usize>,
        n: usize,
        #[serde(default)]
        margin_min: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Two MNIST digits, average-pooled and lifted to translations ⋊ D₈ by
    /// correlation with a seeded Gaussian filter.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "digit_one")]
        positive: u8,
        #[serde(default = "digit_five")]
        negative: u8,
        #[serde(default = "twenty")]
        count: usize,
        /// Average-pooling factor (4 turns 28×28 into 7×7).
        #[serde(default = "one")]
        downsample: usize,
        #[serde(default)]
        filter_seed: Option<u64>,
        /// Scale every lifted input to unit Euclidean norm.
        #[serde(default)]
        normalize: bool,
    },
    Inline {
        inputs: Vec<Vec<f64>>,
        labels: Vec<f64>,
    },
    /// A CSV file in the `dataset.csv` layout.
    Csv {
        path: PathBuf,
    },
}

fn digit_one() -> u8 {
    1
}

fn digit_five() -> u8 {
    5
}

fn twenty() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub kind: ArchKind,
    pub layers: usize,
    #[serde(default = "linear")]
    pub activation: Activation,
    /// File stem of this architecture's outputs; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub init_seed: Option<u64>,
    #[serde(default = "unit")]
    pub init_scale: f64,
    /// Replaces the experiment-wide schedule for this architecture.
    #[serde(default)]
    pub schedule: Option<StepSchedule>,
}

fn linear() -> Activation {
    Activation::Linear
}

fn unit() -> f64 {
    1.0
}

impl ArchConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| kind_name(self.kind).to_string())
    }
}

pub fn kind_name(kind: ArchKind) -> &'static str {
    match kind {
        ArchKind::Gcnn => "gcnn",
        ArchKind::Cnn => "cnn",
        ArchKind::FullyConnected => "fully_connected",
        ArchKind::FourierBandlimited => "fourier_bandlimited",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub epochs: usize,
    #[serde(default = "default_loss_tol")]
    pub loss_tol: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_loss_tol() -> f64 {
    1e-6
}

fn default_record_every() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisToggles {
    #[serde(default = "yes")]
    pub kkt: bool,
    #[serde(default = "yes")]
    pub uncertainty: bool,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub snapshots: bool,
    #[serde(default = "default_baseline_iters")]
    pub baseline_iters: usize,
    /// Depth whose exponent `2/L` the baseline minimizes; defaults to the
    /// first architecture's depth.
    #[serde(default)]
    pub baseline_layers: Option<usize>,
    /// Exponents for the norm reports; defaults to `2/L, 1, 2`.
    #[serde(default)]
    pub p_values: Option<Vec<f64>>,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_margin_tol")]
    pub margin_tol: f64,
}

fn yes() -> bool {
    true
}

fn default_baseline_iters() -> usize {
    2000
}

fn default_rank_tol() -> f64 {
    RANK_TOL
}

fn default_margin_tol() -> f64 {
    ACTIVE_MARGIN_TOL
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        AnalysisToggles {
            kkt: true,
            uncertainty: true,
            baseline: false,
            snapshots: false,
            baseline_iters: default_baseline_iters(),
            baseline_layers: None,
            p_values: None,
            rank_tol: RANK_TOL,
            margin_tol: ACTIVE_MARGIN_TOL,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without touching data files.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.architectures.is_empty() {
            return Err(Error::Config("at least one architecture is required".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        let mut names = BTreeSet::new();
        for a in &self.architectures {
            let name = a.label();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("architecture name '{name}' must be [A-Za-z0-9_-]+")));
            }
            if !names.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate architecture name '{name}'")));
            }
            if a.layers == 0 {
                return Err(Error::Config(format!("architecture '{name}' needs at least one layer")));
            }
            if !(a.init_scale > 0.0 && a.init_scale.is_finite()) {
                return Err(Error::Config(format!("architecture '{name}' needs a positive init scale")));
            }
            if a.kind == ArchKind::FourierBandlimited && a.activation != Activation::Linear {
                return Err(Error::Config("band-limited nets are linear".into()));
            }
            a.schedule.unwrap_or(self.schedule).validate()?;
        }
        self.schedule.validate()?;
        if self.budget.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if self.budget.loss_tol.is_nan() || self.budget.loss_tol < 0.0 {
            return Err(Error::Config("loss_tol must be nonnegative".into()));
        }
        if let Some(ps) = &self.analysis.p_values {
            if ps.iter().any(|&p| !(p > 0.0 && p <= 2.0)) {
                return Err(Error::Config("p_values must lie in (0, 2]".into()));
            }
        }
        if self.analysis.baseline_layers == Some(0) {
            return Err(Error::Config("baseline_layers must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic child seed: SplitMix64 over the parent and an FNV-1a hash
/// of the tag.
pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = parent ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Outcome of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    /// Training used its whole budget without reaching `loss_tol`.
    NotConverged,
    Skipped,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorJson>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SeedRecord {
    pub replica: u64,
    pub dataset: Option<u64>,
    pub labels: Option<u64>,
    pub lift_filter: Option<u64>,
    pub irreps: Option<u64>,
    pub baseline: Option<u64>,
    pub init: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicaManifest {
    pub index: usize,
    /// Directory relative to the run directory (`.` for a single replica).
    pub dir: String,
    pub seeds: SeedRecord,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub crate_version: String,
    pub master_seed: u64,
    pub group_order: usize,
    pub irrep_dims: Vec<usize>,
    pub replicas: Vec<ReplicaManifest>,
    /// Some stage failed, so some outputs are missing.
    pub partial: bool,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

impl Manifest {
    /// First failed stage across replicas.
    pub fn first_failure(&self) -> Option<&StageRecord> {
        self.replicas.iter().flat_map(|r| &r.stages).find(|s| s.status == StageStatus::Failed)
    }

    /// Process exit code implied by the stage outcomes.
    pub fn exit_code(&self) -> i32 {
        self.first_failure().and_then(|s| s.error.as_ref()).map_or(0, |e| e.exit_code)
    }
}

/// Final state of one trained architecture, kept in memory for callers.
#[derive(Clone, Debug)]
pub struct ArchOutcome {
    pub name: String,
    pub kind: ArchKind,
    pub layers: usize,
    pub trace: Option<TrainingTrace>,
    pub norms: Option<NormReport>,
    pub kkt: Option<KktOutput>,
    pub uncertainty: Option<UncertaintyReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct KktOutput {
    pub dual: KktReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<RecurrenceReport>,
}

#[derive(Clone, Debug)]
pub struct ReplicaOutcome {
    pub dir: PathBuf,
    pub dataset: Dataset,
    pub architectures: Vec<ArchOutcome>,
    pub baseline: Option<BaselineResult>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub replicas: Vec<ReplicaOutcome>,
}

/// Group and irreps shared by every replica.
struct Setup {
    group: Arc<GroupTable>,
    irreps: IrrepSet,
    irrep_seed: Option<u64>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds the group named by `source`, reading table files relative to `base`.
pub fn load_group(source: &GroupSource, base: &Path) -> Result<Arc<GroupTable>> {
    Ok(Arc::new(match source {
        GroupSource::Spec(s) => parse_group_spec(s)?,
        GroupSource::TableFile(p) => {
            let j: GroupJson = serde_json::from_str(&fs::read_to_string(resolve(base, p))?)?;
            j.into_group()?
        }
    }))
}

/// Irreps of `group` from `source`, reading files relative to `base`.
pub fn load_irreps(source: &IrrepSource, group: &Arc<GroupTable>, base: &Path) -> Result<IrrepSet> {
    match source {
        IrrepSource::Builtin => builtin_irreps(group),
        IrrepSource::BuiltinReal => builtin_irreps_real(group),
        IrrepSource::Numerical { seed } => decompose_regular_representation(group, *seed),
        IrrepSource::File(p) => {
            let j: IrrepSetJson = serde_json::from_str(&fs::read_to_string(resolve(base, p))?)?;
            j.into_irreps(group.clone())
        }
    }
}

fn build_setup(cfg: &ExperimentConfig, base: &Path) -> Result<Setup> {
    let group = load_group(&cfg.group, base)?;
    let irreps = load_irreps(&cfg.irreps, &group, base)?;
    let irrep_seed = match cfg.irreps {
        IrrepSource::Numerical { seed } => Some(seed),
        _ => None,
    };
    Ok(Setup { group, irreps, irrep_seed })
}

fn build_dataset(spec: &DatasetSpec, setup: &Setup, base: &Path, seed: u64, seeds: &mut SeedRecord) -> Result<Dataset> {
    let n = setup.group.order();
    let data = match spec {
        DatasetSpec::Gaussian { n: count, seed: s } => {
            let s = s.unwrap_or_else(|| derive_seed(seed, "dataset"));
            seeds.dataset = Some(s);
            seeds.labels = Some(s ^ 0x9e37_79b9_7f4a_7c15);
            gaussian_dataset(&setup.group, *count, s)?.0
        }
        DatasetSpec::FourierSparse { active_blocks, n: count, margin_min, seed: s } => {
            let s = s.unwrap_or_else(|| derive_seed(seed, "dataset"));
            seeds.dataset = Some(s);
            fourier_sparse_dataset(&setup.irreps, active_blocks, *count, s, *margin_min)?.0
        }
        DatasetSpec::Mnist { images, labels, positive, negative, count, downsample, filter_seed, normalize } => {
            let (imgs, labs) = load_mnist_binary(&resolve(base, images), &resolve(base, labels), *positive, *negative, *count)?;
            let small = imgs.iter().map(|i| i.downsample(*downsample)).collect::<Result<Vec<_>>>()?;
            let side = small.first().map_or(0, |i| i.height);
            if side * side * 8 != n {
                return Err(Error::Mismatch(format!(
                    "{side}×{side} images lift to {} group elements but the group has {n}",
                    side * side * 8
                )));
            }
            let fs = filter_seed.unwrap_or_else(|| derive_seed(seed, "lift_filter"));
            seeds.lift_filter = Some(fs);
            let mut d = lift_dataset(&small, &labs, &LiftSpec::new(side, fs)?)?;
            if *normalize {
                for x in &mut d.inputs {
                    let nx = norm2(x);
                    if nx > 0.0 {
                        x.iter_mut().for_each(|v| *v /= nx);
                    }
                }
            }
            d
        }
        DatasetSpec::Inline { inputs, labels } => Dataset::new(inputs.clone(), labels.clone())?,
        DatasetSpec::Csv { path } => read_dataset_csv(File::open(resolve(base, path))?)?,
    };
    if data.is_empty() {
        return Err(Error::Config("the dataset is empty".into()));
    }
    data.check(n)?;
    if data.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::Config("labels must be +1 or -1".into()));
    }
    Ok(data)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BetaJson<'a> {
    architecture: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fourier: Option<FourierBlocksJson>,
    /// Per-sample local linearizations of a ReLU net.
    #[serde(skip_serializing_if = "Option::is_none")]
    local_linearizations: Option<Vec<&'a [f64]>>,
}

#[derive(Serialize)]
struct BaselineJson<'a> {
    layers: usize,
    seed: u64,
    iters: usize,
    #[serde(flatten)]
    result: &'a BaselineResult,
}

/// Timer plus bookkeeping for one stage.
struct Stages {
    records: Vec<StageRecord>,
}

impl Stages {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Option<T> {
        let t = Instant::now();
        let out = f();
        let wall_time_s = t.elapsed().as_secs_f64();
        match out {
            Ok(v) => {
                self.records.push(StageRecord { stage: stage.into(), status: StageStatus::Ok, note: None, error: None, wall_time_s });
                Some(v)
            }
            Err(e) => {
                self.records.push(StageRecord {
                    stage: stage.into(),
                    status: StageStatus::Failed,
                    note: None,
                    error: Some(e.in_stage(stage).to_json()),
                    wall_time_s,
                });
                None
            }
        }
    }

    fn skip(&mut self, stage: &str, why: &str) {
        self.records.push(StageRecord {
            stage: stage.into(),
            status: StageStatus::Skipped,
            note: Some(why.into()),
            error: None,
            wall_time_s: 0.0,
        });
    }
}

fn arch_spec(a: &ArchConfig, setup: &Setup) -> Result<ArchitectureSpec> {
    match a.kind {
        ArchKind::FourierBandlimited => {
            if !setup.irreps.is_real(1e-12) {
                return Err(Error::Config("band-limited nets need real irreps (use the builtin_real irrep source)".into()));
            }
            let s = ArchitectureSpec::band_limited(setup.irreps.dims(), a.layers);
            s.validate()?;
            Ok(s)
        }
        k => ArchitectureSpec::for_kind(k, &setup.group, a.layers, a.activation),
    }
}

fn run_replica(
    cfg: &ExperimentConfig,
    setup: &Setup,
    base: &Path,
    dir: &Path,
    index: usize,
    seed: u64,
) -> Result<(ReplicaManifest, ReplicaOutcome)> {
    fs::create_dir_all(dir)?;
    let mut seeds = SeedRecord { replica: seed, irreps: setup.irrep_seed, ..SeedRecord::default() };
    let data = build_dataset(&cfg.dataset, setup, base, seed, &mut seeds).map_err(|e| e.in_stage("dataset"))?;
    {
        let mut w = BufWriter::new(File::create(dir.join("dataset.csv"))?);
        write_dataset_csv(&mut w, &data)?;
    }
    let mut stages = Stages { records: Vec::new() };
    let mut outcomes = Vec::new();
    let irreps = &setup.irreps;
    let tol = cfg.analysis.rank_tol;
    for a in &cfg.architectures {
        let name = a.label();
        let init_seed = a.init_seed.unwrap_or_else(|| derive_seed(seed, &format!("init:{name}")));
        seeds.init.insert(name.clone(), init_seed);
        let mut outcome =
            ArchOutcome { name: name.clone(), kind: a.kind, layers: a.layers, trace: None, norms: None, kkt: None, uncertainty: None };
        let stage = format!("train:{name}");
        let t = Instant::now();
        let trained = (|| -> Result<TrainingTrace> {
            let spec = arch_spec(a, setup)?;
            let params = init_network(&spec, init_seed, a.init_scale)?;
            let train_data = if a.kind == ArchKind::FourierBandlimited {
                let mapped = data.inputs.iter().map(|x| Ok(flatten_real_blocks(&irreps.gft(x)?))).collect::<Result<Vec<_>>>()?;
                Dataset::new(mapped, data.labels.clone())?
            } else {
                data.clone()
            };
            let tc = TrainConfig {
                epochs: cfg.budget.epochs,
                record_every: cfg.budget.record_every,
                loss_tol: cfg.budget.loss_tol,
                schedule: a.schedule.unwrap_or(cfg.schedule),
            };
            let mut snaps = if cfg.analysis.snapshots {
                Some(BufWriter::new(File::create(dir.join(format!("{name}_snapshots.jsonl")))?))
            } else {
                None
            };
            let mut io_err = None;
            let result = train_observed(&params, &train_data, Some(irreps), &tc, |epoch, beta| {
                if let Some(w) = snaps.as_mut() {
                    let line = serde_json::json!({ "epoch": epoch, "beta": beta });
                    if let Err(e) = writeln!(w, "{line}") {
                        io_err.get_or_insert(e);
                    }
                }
            });
            if let Some(w) = snaps.as_mut() {
                w.flush()?;
            }
            if let Some(e) = io_err {
                return Err(e.into());
            }
            result
        })();
        let wall_time_s = t.elapsed().as_secs_f64();
        let trace = match trained {
            Ok(tr) => {
                let (status, note) = if tr.converged || cfg.budget.loss_tol == 0.0 {
                    (StageStatus::Ok, None)
                } else {
                    (StageStatus::NotConverged, Some(format!("loss {} after {} epochs", tr.last().loss, tr.last().epoch)))
                };
                stages.records.push(StageRecord { stage, status, note, error: None, wall_time_s });
                tr
            }
            Err(Error::Diverged { epoch, trace }) => {
                let err = Error::Diverged { epoch, trace: trace.clone() };
                stages.records.push(StageRecord {
                    stage: stage.clone(),
                    status: StageStatus::Failed,
                    note: Some(format!("aborted at epoch {epoch}")),
                    error: Some(err.in_stage(stage).to_json()),
                    wall_time_s,
                });
                *trace
            }
            Err(e) => {
                stages.records.push(StageRecord {
                    stage: stage.clone(),
                    status: StageStatus::Failed,
                    note: None,
                    error: Some(e.in_stage(stage).to_json()),
                    wall_time_s,
                });
                outcomes.push(outcome);
                continue;
            }
        };
        {
            let mut w = BufWriter::new(File::create(dir.join(format!("{name}_trace.csv")))?);
            trace.write_csv(&mut w)?;
        }
        let linear = a.activation == Activation::Linear;
        let beta: Option<Vec<f64>> = if !linear {
            None
        } else if a.kind == ArchKind::FourierBandlimited {
            trace.final_params.band_product().ok().and_then(|b| irreps.igft_real(&b).ok())
        } else {
            Some(trace.final_beta.clone())
        };
        let beta_json = match &beta {
            Some(b) => BetaJson {
                architecture: &name,
                beta: Some(b),
                fourier: irreps.gft(b).ok().map(|f| f.to_json()),
                local_linearizations: None,
            },
            None => BetaJson {
                architecture: &name,
                beta: None,
                fourier: None,
                local_linearizations: Some(trace.final_beta.chunks(irreps.order().max(1)).collect()),
            },
        };
        write_json(&dir.join(format!("{name}_beta.json")), &beta_json)?;
        if let Some(b) = &beta {
            let ps = cfg.analysis.p_values.clone().unwrap_or_else(|| vec![2.0 / a.layers as f64, 1.0, 2.0]);
            outcome.norms = stages.run(&format!("norms:{name}"), || {
                let r = norm_report(b, irreps, &ps, tol)?;
                write_json(&dir.join(format!("{name}_norms.json")), &r)?;
                Ok(r)
            });
            if cfg.analysis.uncertainty {
                outcome.uncertainty = stages.run(&format!("uncertainty:{name}"), || {
                    let r = uncertainty_check(b, &irreps.gft(b)?, tol)?;
                    write_json(&dir.join(format!("{name}_uncertainty.json")), &r)?;
                    Ok(r)
                });
            }
            if cfg.analysis.kkt {
                outcome.kkt = stages.run(&format!("kkt:{name}"), || {
                    let opts = DualFitOptions { margin_tol: cfg.analysis.margin_tol, rescale: true };
                    let dual = fit_dual_coefficients(b, &data, irreps, a.layers, opts)?;
                    let recurrence =
                        if a.kind == ArchKind::Gcnn { Some(recurrence_residuals(&trace.final_params, &dual.z_hat, irreps)?) } else { None };
                    let out = KktOutput { dual, recurrence };
                    write_json(&dir.join(format!("{name}_kkt.json")), &out)?;
                    Ok(out)
                });
            }
        } else {
            stages.skip(&format!("norms:{name}"), "ReLU nets report mean local-linearization norms in the trace only");
        }
        outcome.trace = Some(trace);
        outcomes.push(outcome);
    }
    let baseline = if cfg.analysis.baseline {
        let layers = cfg.analysis.baseline_layers.unwrap_or(cfg.architectures[0].layers);
        let bseed = derive_seed(seed, "baseline");
        seeds.baseline = Some(bseed);
        let iters = cfg.analysis.baseline_iters;
        stages.run("baseline", || {
            let p = (2.0 / layers as f64).min(1.0);
            let r = min_schatten_baseline(&data, irreps, p, iters, bseed)?;
            write_json(&dir.join("baseline.json"), &BaselineJson { layers, seed: bseed, iters, result: &r })?;
            Ok(r)
        })
    } else {
        None
    };
    write_summary(&dir.join("summary.csv"), &outcomes, cfg.budget.loss_tol)?;
    let manifest = ReplicaManifest { index, dir: String::new(), seeds, stages: stages.records };
    Ok((manifest, ReplicaOutcome { dir: dir.to_path_buf(), dataset: data, architectures: outcomes, baseline }))
}

/// `converged` means the final loss is at most `loss_tol`.
fn write_summary(path: &Path, outcomes: &[ArchOutcome], loss_tol: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "architecture",
        "kind",
        "layers",
        "converged",
        "final_epoch",
        "loss",
        "min_margin",
        "real_norm_2L",
        "fourier_schatten_2L",
    ])?;
    for o in outcomes {
        let mut rec = vec![o.name.clone(), kind_name(o.kind).to_string(), o.layers.to_string()];
        match &o.trace {
            Some(t) => {
                let r = t.last();
                rec.extend([
                    (t.converged || r.loss <= loss_tol).to_string(),
                    r.epoch.to_string(),
                    r.loss.to_string(),
                    r.min_margin.to_string(),
                    r.real_norm_2l.to_string(),
                    r.fourier_schatten_2l.to_string(),
                ]);
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and two-sided 95% Student-t interval.
pub fn mean_ci95(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    if n < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n ≥ 2").inverse_cdf(0.975)
    };
    let half = t * (var / n as f64).sqrt();
    (mean, mean - half, mean + half)
}

type Column = (&'static str, fn(&TraceRow) -> f64);

fn write_aggregate(path: &Path, replicas: &[ReplicaOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["architecture", "epoch", "column", "n", "mean", "ci95_low", "ci95_high"])?;
    let names: Vec<String> = replicas.first().map(|r| r.architectures.iter().map(|a| a.name.clone()).collect()).unwrap_or_default();
    let columns: [Column; 5] = [
        (CSV_HEADER[1], |r| r.loss),
        (CSV_HEADER[2], |r| r.min_margin),
        (CSV_HEADER[3], |r| r.real_norm_2l),
        (CSV_HEADER[4], |r| r.fourier_schatten_2l),
        (CSV_HEADER[5], |r| r.cosine_beta_direction),
    ];
    for (k, name) in names.iter().enumerate() {
        let mut by_epoch: BTreeMap<usize, Vec<&TraceRow>> = BTreeMap::new();
        for r in replicas {
            if let Some(t) = r.architectures.get(k).and_then(|a| a.trace.as_ref()) {
                for row in &t.rows {
                    by_epoch.entry(row.epoch).or_default().push(row);
                }
            }
        }
        for (epoch, rows) in &by_epoch {
            for (col, get) in &columns {
                let vals: Vec<f64> = rows.iter().map(|r| get(r)).collect();
                let (m, lo, hi) = mean_ci95(&vals);
                w.write_record([
                    name.clone(),
                    epoch.to_string(),
                    col.to_string(),
                    vals.len().to_string(),
                    m.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the experiment with data paths resolved against `base` and outputs
/// written to `cfg.output_dir`.
///
/// Stage failures after the dataset is built are recorded in the manifest
/// and leave the remaining stages running; configuration and dataset
/// errors abort the run.
pub fn run(cfg: &ExperimentConfig, base: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let setup = build_setup(cfg, base).map_err(|e| e.in_stage("setup"))?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), cfg)?;
    let jobs: Vec<(usize, u64, PathBuf, String)> = (0..cfg.replicas)
        .map(|k| {
            if cfg.replicas == 1 {
                (k, cfg.master_seed, out.clone(), ".".to_string())
            } else {
                let rel = format!("replica_{k:03}");
                (k, derive_seed(cfg.master_seed, &format!("replica:{k}")), out.join(&rel), rel)
            }
        })
        .collect();
    let results: Vec<Result<(ReplicaManifest, ReplicaOutcome)>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(k, seed, dir, rel)| {
                let setup = &setup;
                s.spawn(move || {
                    run_replica(cfg, setup, base, dir, *k, *seed).map(|(mut m, o)| {
                        m.dir = rel.clone();
                        (m, o)
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("replica thread panicked".into())))).collect()
    });
    let mut manifests = Vec::new();
    let mut replicas = Vec::new();
    for r in results {
        let (m, o) = r?;
        manifests.push(m);
        replicas.push(o);
    }
    if cfg.replicas > 1 {
        write_aggregate(&out.join("aggregate.csv"), &replicas)?;
    }
    let partial = manifests.iter().flat_map(|m| &m.stages).any(|s| s.status == StageStatus::Failed);
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: cfg.master_seed,
        group_order: setup.group.order(),
        irrep_dims: setup.irreps.dims(),
        replicas: manifests,
        partial,
        started_unix_s,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunOutcome { dir: out, manifest, replicas })
}

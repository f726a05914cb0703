//! Stage orchestration: simulate → prepare → train → evaluate → report.
//!
//! Every stage owns one subdirectory of the run directory. A stage is
//! skipped when its cache key (configuration subsection plus upstream
//! artifact hashes) matches the manifest and its artifacts still verify.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;
use xferepi_core::datasets::{self, SupervisedDataset, WindowConfig};
use xferepi_core::evaluate::{self, EvalRecord};
use xferepi_core::rng::{derive_seed, Key};
use xferepi_core::simcore::{self, DiseaseSpec, EpidemicSeries, ReplicateSet, SeriesKind, SirdParams};
use xferepi_core::transfer::{
    self, FittedModel, ForecastModel, Learner, LearnerConfig, Regime, ScaledNetwork, TrainingAudit,
};
use xferepi_core::neural::TrainLog;
use xferepi_core::Warning;

use crate::config::{ConfigError, CutoffModeSetting, ExperimentConfig};
use crate::formats::{self, num, opt_num, opt_u32};
use crate::ingest;
use crate::manifest::{sha256_bytes, Manifest, VerifyError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Prepare,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Simulate, Stage::Prepare, Stage::Train, Stage::Evaluate, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Simulate => &[],
            Stage::Prepare => &[Stage::Simulate],
            Stage::Train => &[Stage::Simulate, Stage::Prepare],
            Stage::Evaluate => &[Stage::Simulate, Stage::Prepare, Stage::Train],
            Stage::Report => &[Stage::Evaluate],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` needs the output of `{needs}` ({reason}); run `xferepi {needs}` first")]
    MissingUpstream {
        stage: &'static str,
        needs: &'static str,
        reason: String,
    },
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::MissingUpstream { .. } => 3,
            RunError::Runtime(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

pub struct Runner {
    cfg: ExperimentConfig,
    dir: PathBuf,
    force: bool,
    manifest: Manifest,
    pool: rayon::ThreadPool,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig, opts: &RunOptions) -> Result<Self, RunError> {
        let dir = opts
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("xferepi-run"));
        fs::create_dir_all(&dir).with_context(|| format!("creating run directory {}", dir.display()))?;
        let manifest = Manifest::load(&dir).map_err(anyhow::Error::from)?.unwrap_or_default();
        let mut pb = rayon::ThreadPoolBuilder::new();
        if let Some(j) = opts.jobs {
            pb = pb.num_threads(j.max(1));
        }
        let pool = pb.build().map_err(|e| anyhow!("thread pool: {e}"))?;
        Ok(Runner {
            cfg,
            dir,
            force: opts.force,
            manifest,
            pool,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Runs one stage after checking its inputs exist.
    pub fn run_stage(&mut self, stage: Stage) -> Result<Outcome, RunError> {
        for &up in stage.upstream() {
            if let Err(e) = self.manifest.verify(&self.dir, up.as_str()) {
                let reason = match e {
                    VerifyError::NotRun => "no record in the manifest".to_string(),
                    other => other.to_string(),
                };
                return Err(RunError::MissingUpstream {
                    stage: stage.as_str(),
                    needs: up.as_str(),
                    reason,
                });
            }
        }
        let key = self.stage_key(stage);
        if !self.force {
            if let Some(rec) = self.manifest.stages.get(stage.as_str()) {
                if rec.key == key && self.manifest.verify(&self.dir, stage.as_str()).is_ok() {
                    info!("{}: up to date, skipping", stage.as_str());
                    return Ok(Outcome::Skipped);
                }
            }
        }
        let stage_dir = self.dir.join(stage.as_str());
        if stage_dir.exists() {
            fs::remove_dir_all(&stage_dir).with_context(|| format!("clearing {}", stage_dir.display()))?;
        }
        fs::create_dir_all(&stage_dir).with_context(|| format!("creating {}", stage_dir.display()))?;
        // A stale record must not survive a failed re-run.
        self.manifest.stages.remove(stage.as_str());
        self.manifest.tool_version = TOOL_VERSION.to_string();
        self.manifest.config_hash = sha256_bytes(self.cfg.canonical().as_bytes());
        info!("{}: running", stage.as_str());
        let start = Instant::now();
        let ctx = StageContext {
            cfg: &self.cfg,
            dir: &self.dir,
        };
        self.pool.install(|| match stage {
            Stage::Simulate => ctx.simulate(),
            Stage::Prepare => ctx.prepare(),
            Stage::Train => ctx.train(),
            Stage::Evaluate => ctx.evaluate(),
            Stage::Report => ctx.report(),
        })?;
        let secs = start.elapsed().as_secs_f64();
        let rec = Manifest::record(&self.dir, stage.as_str(), key, secs).map_err(anyhow::Error::from)?;
        self.manifest.stages.insert(stage.as_str().to_string(), rec);
        self.manifest.save(&self.dir).map_err(anyhow::Error::from)?;
        info!("{}: done in {secs:.1}s", stage.as_str());
        Ok(Outcome::Ran)
    }

    pub fn run_all(&mut self) -> Result<Vec<(Stage, Outcome)>, RunError> {
        Stage::ALL
            .iter()
            .map(|&s| self.run_stage(s).map(|o| (s, o)))
            .collect()
    }

    fn stage_key(&self, stage: Stage) -> String {
        let c = &self.cfg;
        let section = match stage {
            Stage::Simulate => serde_json::json!({
                "seed": c.seed,
                "simulation": c.simulation,
                "empirical": c.empirical,
                "inputs": empirical_input_hashes(c),
            }),
            Stage::Prepare => serde_json::json!({ "datasets": c.datasets, "outputs": c.outputs }),
            Stage::Train => serde_json::json!({
                "seed": c.seed,
                "datasets": c.datasets,
                "forest": c.forest,
                "network": c.network,
                "training": c.training,
                "transfer": c.transfer,
                "finetune": c.finetune,
                "boosting": c.boosting,
                "regimes": c.regimes,
                "outputs": c.outputs,
            }),
            Stage::Evaluate => serde_json::json!({ "regimes": c.regimes }),
            Stage::Report => serde_json::json!({ "regimes": c.regimes, "cutoffs": c.datasets.cutoffs }),
        };
        let mut material = format!("{}\n{}\n", stage.as_str(), section);
        for &up in stage.upstream() {
            if let Some(rec) = self.manifest.stages.get(up.as_str()) {
                for a in &rec.artifacts {
                    material.push_str(&format!("{} {}\n", a.path, a.sha256));
                }
            }
        }
        sha256_bytes(material.as_bytes())
    }
}

fn empirical_input_hashes(c: &ExperimentConfig) -> Vec<String> {
    let Some(e) = &c.empirical else {
        return Vec::new();
    };
    std::iter::once(&e.source)
        .chain(&e.targets)
        .map(|p| crate::manifest::sha256_file(p).unwrap_or_else(|_| format!("unreadable:{}", p.display())))
        .collect()
}

/// Loads and validates a config, then runs one stage or all of them.
pub fn run(config: &Path, stage: Option<Stage>, opts: &RunOptions) -> Result<Runner, RunError> {
    let cfg = ExperimentConfig::load(config)?;
    let mut runner = Runner::new(cfg, opts)?;
    match stage {
        Some(s) => {
            runner.run_stage(s)?;
        }
        None => {
            runner.run_all()?;
        }
    }
    Ok(runner)
}

/// One disease as recorded by the simulate stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseInfo {
    pub label: String,
    pub is_source: bool,
    pub params: Option<SirdParams>,
    /// Absolute period of time index 0.
    pub origin: i64,
}

const DISEASE_HEADER: [&str; 7] = ["disease", "role", "beta", "gamma", "zeta", "mu", "origin"];

struct StageContext<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
}

fn series_path(dir: &Path, label: &str, set: ReplicateSet) -> PathBuf {
    dir.join("simulate").join(format!("{label}_{}.csv", set.as_str()))
}

struct Loaded {
    diseases: Vec<DiseaseInfo>,
    series: BTreeMap<(String, ReplicateSet), Vec<EpidemicSeries>>,
}

impl Loaded {
    fn get(&self, label: &str, set: ReplicateSet) -> &[EpidemicSeries] {
        self.series
            .get(&(label.to_string(), set))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn source(&self) -> Result<&DiseaseInfo> {
        self.diseases
            .iter()
            .find(|d| d.is_source)
            .ok_or_else(|| anyhow!("no source disease recorded"))
    }

    fn targets(&self) -> impl Iterator<Item = &DiseaseInfo> {
        self.diseases.iter().filter(|d| !d.is_source)
    }
}

/// Per-city error of one model on one target's test series.
#[derive(Debug, Clone, PartialEq)]
struct CityError {
    regime: String,
    disease: String,
    city: String,
    horizon: usize,
    cutoff: Option<u32>,
    mae: f64,
    total_cases: f64,
    rows: usize,
}

const CITY_ERRORS_HEADER: [&str; 8] = ["regime", "disease", "city", "horizon", "cutoff", "mae", "total_cases", "rows"];

#[derive(Debug, Clone, PartialEq)]
struct ModelRow {
    regime: String,
    disease: String,
    horizon: usize,
    cutoff: Option<u32>,
    seed: u64,
    audit: TrainingAudit,
    test_sha256: String,
    stop: String,
    epochs: usize,
}

const MODELS_HEADER: [&str; 11] = [
    "regime",
    "disease",
    "horizon",
    "cutoff",
    "seed",
    "source_rows",
    "target_rows",
    "train_fingerprint",
    "test_sha256",
    "stop",
    "epochs",
];

#[derive(Debug, Clone, PartialEq)]
struct LogRow {
    regime: String,
    disease: String,
    horizon: usize,
    cutoff: Option<u32>,
    log: TrainLog,
}

#[derive(Default)]
struct TaskOutput {
    errors: Vec<CityError>,
    models: Vec<ModelRow>,
    logs: Vec<LogRow>,
    warnings: Vec<String>,
}

impl TaskOutput {
    fn merge(mut self, other: TaskOutput) -> TaskOutput {
        self.errors.extend(other.errors);
        self.models.extend(other.models);
        self.logs.extend(other.logs);
        self.warnings.extend(other.warnings);
        self
    }
}

/// Rows of a dataset rendered exactly as the audit CSV would hold them.
fn dataset_sha256(ds: &SupervisedDataset) -> String {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        for i in 0..ds.len() {
            let m = ds.meta[i];
            let mut rec = vec![ds.series_of(i).to_string(), m.target_t.to_string(), m.horizon.to_string()];
            rec.extend(ds.row(i).iter().map(|v| num(*v)));
            rec.push(num(ds.targets[i]));
            w.write_record(&rec).expect("in-memory write");
        }
        w.flush().expect("in-memory flush");
    }
    sha256_bytes(&buf)
}

fn windows(series: &[EpidemicSeries], window: &WindowConfig, h: usize, warnings: &mut Vec<Warning>) -> Result<SupervisedDataset> {
    Ok(datasets::make_windows_all(series, window, h, warnings)?)
}

impl StageContext<'_> {
    fn stage_dir(&self, s: Stage) -> PathBuf {
        self.dir.join(s.as_str())
    }

    fn simulate(&self) -> Result<()> {
        let out = self.stage_dir(Stage::Simulate);
        let cfg = self.cfg;
        let mut diseases = Vec::new();
        if let Some(emp) = &cfg.empirical {
            let fill = cfg.gap_fill();
            let files: Vec<(bool, &PathBuf)> = std::iter::once((true, &emp.source))
                .chain(emp.targets.iter().map(|p| (false, p)))
                .collect();
            let mut seen = BTreeSet::new();
            for (is_source, path) in files {
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| anyhow!("{}: no file name", path.display()))?;
                if !seen.insert(label.clone()) {
                    bail!("two empirical files share the disease name `{label}`");
                }
                let data = ingest::read_cases(path, &label, fill)?;
                let seed = derive_seed(cfg.seed, &[Key::Label("split"), Key::Label(&label)]);
                let (train, test) = datasets::split_cities(&data.series, emp.split_fraction, seed);
                formats::write_series(&series_path(self.dir, &label, ReplicateSet::Train), &train)?;
                formats::write_series(&series_path(self.dir, &label, ReplicateSet::Test), &test)?;
                diseases.push(DiseaseInfo {
                    label,
                    is_source,
                    params: None,
                    origin: data.origin,
                });
            }
        } else {
            let sim = cfg.sim_config();
            let specs = simcore::grid_specs(
                &SirdParams {
                    beta: cfg.simulation.source.beta,
                    gamma: cfg.simulation.source.gamma,
                    zeta: cfg.simulation.source.zeta,
                    mu: cfg.simulation.source.mu,
                },
                &cfg.simulation.grid.beta,
                &cfg.simulation.grid.gamma,
            );
            let mut seen = BTreeSet::new();
            for s in &specs {
                if !seen.insert(s.label.clone()) {
                    bail!("grid produces the disease label `{}` twice", s.label);
                }
            }
            specs.par_iter().try_for_each(|spec: &DiseaseSpec| -> Result<()> {
                let sets = simcore::simulate_disease(&sim, spec);
                formats::write_series(&series_path(self.dir, &spec.label, ReplicateSet::Train), &sets.train)?;
                formats::write_series(&series_path(self.dir, &spec.label, ReplicateSet::Test), &sets.test)?;
                Ok(())
            })?;
            for (i, spec) in specs.iter().enumerate() {
                diseases.push(DiseaseInfo {
                    label: spec.label.clone(),
                    is_source: i == 0,
                    params: Some(spec.params),
                    origin: 0,
                });
            }
        }
        let rows = diseases.iter().map(|d| {
            let p = |f: fn(&SirdParams) -> f64| d.params.as_ref().map(|x| num(f(x))).unwrap_or_default();
            [
                d.label.clone(),
                if d.is_source { "source".into() } else { "target".into() },
                p(|x| x.beta),
                p(|x| x.gamma),
                p(|x| x.zeta),
                p(|x| x.mu),
                d.origin.to_string(),
            ]
        });
        formats::write_table(&out.join("diseases.csv"), &DISEASE_HEADER, rows)
    }

    fn load(&self) -> Result<Loaded> {
        let path = self.stage_dir(Stage::Simulate).join("diseases.csv");
        let mut r = formats::reader(&path)?;
        formats::check_header(&path, &mut r, &DISEASE_HEADER)?;
        let mut diseases = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<Option<f64>> {
                if rec[i].is_empty() {
                    Ok(None)
                } else {
                    Ok(Some(rec[i].parse()?))
                }
            };
            let params = match (f(2)?, f(3)?, f(4)?, f(5)?) {
                (Some(beta), Some(gamma), Some(zeta), Some(mu)) => Some(SirdParams { beta, gamma, zeta, mu }),
                _ => None,
            };
            diseases.push(DiseaseInfo {
                label: rec[0].to_string(),
                is_source: &rec[1] == "source",
                params,
                origin: rec[6].parse()?,
            });
        }
        let kind = match self.cfg.simulation.series {
            crate::config::SeriesSetting::Incidence => SeriesKind::Incidence,
            crate::config::SeriesSetting::Prevalence => SeriesKind::Prevalence,
        };
        let keys: Vec<(String, ReplicateSet)> = diseases
            .iter()
            .flat_map(|d| [(d.label.clone(), ReplicateSet::Train), (d.label.clone(), ReplicateSet::Test)])
            .collect();
        let series = keys
            .into_par_iter()
            .map(|(label, set)| {
                let s = formats::read_series(&series_path(self.dir, &label, set), kind)?;
                Ok(((label, set), s))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Loaded { diseases, series })
    }

    /// Cutoff expressed as a time index of `disease`.
    fn cutoff_index(&self, d: &DiseaseInfo, c: u32) -> Option<u32> {
        match self.cfg.datasets.cutoff_mode {
            CutoffModeSetting::TimeStep => Some(c),
            CutoffModeSetting::CalendarWeek => u32::try_from(i64::from(c) - d.origin).ok(),
        }
    }

    fn prepare(&self) -> Result<()> {
        let data = self.load()?;
        let window = self.cfg.window_config();
        let out = self.stage_dir(Stage::Prepare);
        let mut jobs = Vec::new();
        for d in &data.diseases {
            for set in [ReplicateSet::Train, ReplicateSet::Test] {
                for &h in &window.horizons {
                    jobs.push((d, set, h));
                }
            }
        }
        let audit = self.cfg.outputs.audit_windows;
        let mut rows = jobs
            .par_iter()
            .map(|&(d, set, h)| -> Result<Vec<[String; 6]>> {
                let mut warnings = Vec::new();
                let ds = windows(data.get(&d.label, set), &window, h, &mut warnings)?;
                let mut out_rows = vec![[
                    d.label.clone(),
                    set.as_str().to_string(),
                    h.to_string(),
                    String::new(),
                    ds.len().to_string(),
                    dataset_sha256(&ds),
                ]];
                if audit {
                    formats::write_windows(&out.join("windows").join(format!("{}_{}_h{h}.csv", d.label, set.as_str())), &ds)?;
                }
                if set == ReplicateSet::Train && !d.is_source {
                    for &c in &self.cfg.datasets.cutoffs {
                        let cut = self
                            .cutoff_index(d, c)
                            .map(|ci| datasets::apply_cutoff(&ds, ci))
                            .unwrap_or_else(|| SupervisedDataset::empty(ds.lags));
                        out_rows.push([
                            d.label.clone(),
                            set.as_str().to_string(),
                            h.to_string(),
                            c.to_string(),
                            cut.len().to_string(),
                            dataset_sha256(&cut),
                        ]);
                    }
                }
                Ok(out_rows)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect::<Vec<_>>();
        rows.sort();
        formats::write_table(
            &out.join("datasets.csv"),
            &["disease", "set", "horizon", "cutoff", "rows", "sha256"],
            rows,
        )
    }

    /// Test-set hashes recorded by `prepare`, keyed by (disease, horizon).
    fn test_snapshot(&self) -> Result<BTreeMap<(String, usize), String>> {
        let path = self.stage_dir(Stage::Prepare).join("datasets.csv");
        let mut r = formats::reader(&path)?;
        formats::check_header(&path, &mut r, &["disease", "set", "horizon", "cutoff", "rows", "sha256"])?;
        let mut out = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            if &rec[1] == "test" && rec[3].is_empty() {
                out.insert((rec[0].to_string(), rec[2].parse()?), rec[5].to_string());
            }
        }
        Ok(out)
    }

    fn learner_config(&self, seed: u64) -> LearnerConfig {
        LearnerConfig {
            forest: self.cfg.forest.to_core(derive_seed(seed, &[Key::Label("forest")])),
            arch: self.cfg.architecture(),
            train: self.cfg.training.to_core(derive_seed(seed, &[Key::Label("network")])),
        }
    }

    fn model_seed(&self, disease: &str, label: &str, h: usize, cutoff: Option<u32>) -> u64 {
        let c = cutoff.map_or(Key::Label("none"), |c| Key::Index(u64::from(c)));
        derive_seed(
            self.cfg.seed,
            &[Key::Label("train"), Key::Label(disease), Key::Label(label), Key::Index(h as u64), c],
        )
    }

    fn train(&self) -> Result<()> {
        let data = Arc::new(self.load()?);
        let snapshot = self.test_snapshot()?;
        let window = self.cfg.window_config();
        let source = data.source()?.clone();
        let targets: Vec<DiseaseInfo> = data.targets().cloned().collect();
        let cfg = self.cfg;
        let wants = |r, l| cfg.wants(r, l);
        let need_source_net = wants(Regime::NoTransfer, Learner::Network)
            || wants(Regime::NnTransfer, Learner::Network)
            || wants(Regime::NnFinetuned, Learner::Network);

        // Test sets are shared by every regime of a (target, horizon) cell.
        let mut test_keys = Vec::new();
        for t in &targets {
            for &h in &window.horizons {
                test_keys.push((t.label.clone(), h));
            }
        }
        let tests: BTreeMap<(String, usize), Arc<TestSet>> = test_keys
            .into_par_iter()
            .map(|(label, h)| {
                let mut w = Vec::new();
                let ds = windows(data.get(&label, ReplicateSet::Test), &window, h, &mut w)?;
                let sha = dataset_sha256(&ds);
                match snapshot.get(&(label.clone(), h)) {
                    Some(s) if *s == sha => {}
                    _ => bail!("test set for {label} h={h} does not match the prepare snapshot"),
                }
                let totals = data
                    .get(&label, ReplicateSet::Test)
                    .iter()
                    .map(|s| (s.id.member.clone(), s.total()))
                    .collect();
                Ok(((label, h), Arc::new(TestSet { ds, sha, totals })))
            })
            .collect::<Result<_>>()?;

        // Phase 1: source-only models per horizon. Forests are scored on every
        // target right away so they need not stay in memory.
        #[derive(Clone, Copy)]
        enum SourceJob {
            Forest(usize),
            Network(usize),
        }
        let mut source_jobs = Vec::new();
        for &h in &window.horizons {
            if need_source_net {
                source_jobs.push(SourceJob::Network(h));
            }
            if wants(Regime::NoTransfer, Learner::Forest) {
                source_jobs.push(SourceJob::Forest(h));
            }
        }
        let source_results = source_jobs
            .par_iter()
            .map(|job| -> Result<(TaskOutput, Option<(usize, ScaledNetwork, TrainingAudit)>)> {
                let (h, learner) = match *job {
                    SourceJob::Forest(h) => (h, Learner::Forest),
                    SourceJob::Network(h) => (h, Learner::Network),
                };
                let mut w = Vec::new();
                let train = windows(data.get(&source.label, ReplicateSet::Train), &window, h, &mut w)?;
                let label = transfer::model_label(Regime::NoTransfer, learner);
                let seed = self.model_seed(&source.label, &label, h, None);
                let started = Instant::now();
                let fitted = transfer::fit_no_transfer(&train, learner, &self.learner_config(seed), h)
                    .with_context(|| format!("fitting {label} h={h}"))?;
                info!("train: source {label} h={h} fitted in {:.1}s", started.elapsed().as_secs_f64());
                let mut out = TaskOutput::default();
                out.warnings.extend(w.iter().map(|w| format!("{}: {w}", source.label)));
                let evaluate_here = learner == Learner::Forest || wants(Regime::NoTransfer, Learner::Network);
                if evaluate_here {
                    for t in &targets {
                        let test = &tests[&(t.label.clone(), h)];
                        out = out.merge(score(&fitted, &t.label, test, seed)?);
                    }
                }
                if let Some(log) = &fitted.log {
                    out.logs.push(LogRow {
                        regime: label.clone(),
                        disease: source.label.clone(),
                        horizon: h,
                        cutoff: None,
                        log: log.clone(),
                    });
                    if let Some(warn) = log.warning() {
                        out.warnings.push(format!("{label} {} h={h}: {warn}", source.label));
                    }
                }
                self.persist(&fitted, &source.label)?;
                let net = match fitted.model {
                    ForecastModel::Network(n) => Some((h, n, fitted.audit)),
                    _ => None,
                };
                Ok((out, net))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut output = TaskOutput::default();
        let mut source_nets = BTreeMap::new();
        for (o, net) in source_results {
            output = output.merge(o);
            if let Some((h, n, a)) = net {
                source_nets.insert(h, (n, a));
            }
        }

        // Phase 2: target cells.
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
        enum CellJob {
            Baseline(Learner),
            Boost(u32),
            Network(u32),
        }
        let mut jobs = Vec::new();
        for t in &targets {
            for &h in &window.horizons {
                for l in [Learner::Forest, Learner::Network] {
                    if wants(Regime::Baseline, l) {
                        jobs.push((t, h, CellJob::Baseline(l)));
                    }
                }
                for &c in &cfg.datasets.cutoffs {
                    if wants(Regime::Tradaboost, Learner::Forest) {
                        jobs.push((t, h, CellJob::Boost(c)));
                    }
                    if wants(Regime::NnTransfer, Learner::Network) || wants(Regime::NnFinetuned, Learner::Network) {
                        jobs.push((t, h, CellJob::Network(c)));
                    }
                }
            }
        }
        let done = std::sync::atomic::AtomicUsize::new(0);
        let total = jobs.len();
        let cell_outputs = jobs
            .par_iter()
            .map(|&(t, h, job)| -> Result<TaskOutput> {
                let mut w = Vec::new();
                let train = windows(data.get(&t.label, ReplicateSet::Train), &window, h, &mut w)?;
                let test = &tests[&(t.label.clone(), h)];
                let mut out = TaskOutput::default();
                out.warnings.extend(w.iter().map(|w| format!("{}: {w}", t.label)));
                match job {
                    CellJob::Baseline(l) => {
                        let label = transfer::model_label(Regime::Baseline, l);
                        let seed = self.model_seed(&t.label, &label, h, None);
                        let fitted = transfer::fit_baseline(&train, l, &self.learner_config(seed), h)
                            .with_context(|| format!("fitting {label} for {} h={h}", t.label))?;
                        out = out.merge(score(&fitted, &t.label, test, seed)?);
                        if let Some(log) = &fitted.log {
                            out.logs.push(LogRow {
                                regime: label.clone(),
                                disease: t.label.clone(),
                                horizon: h,
                                cutoff: None,
                                log: log.clone(),
                            });
                            if let Some(warn) = log.warning() {
                                out.warnings.push(format!("{label} {} h={h}: {warn}", t.label));
                            }
                        }
                        self.persist(&fitted, &t.label)?;
                    }
                    CellJob::Boost(c) => {
                        let label = transfer::model_label(Regime::Tradaboost, Learner::Forest);
                        let Some(cut) = self.cut(t, &train, c) else {
                            out.warnings.push(format!("{label} {} h={h} cutoff={c}: no target rows before the cutoff, skipped", t.label));
                            return Ok(out);
                        };
                        let seed = self.model_seed(&t.label, &label, h, Some(c));
                        let mut wsrc = Vec::new();
                        let src = windows(data.get(&source.label, ReplicateSet::Train), &window, h, &mut wsrc)?;
                        let (fitted, _trace) = transfer::fit_tradaboost_model(&src, &cut, &cfg.boost_config(seed), c, h)
                            .with_context(|| format!("fitting {label} for {} h={h} cutoff={c}", t.label))?;
                        out = out.merge(score(&fitted, &t.label, test, seed)?);
                        self.persist(&fitted, &t.label)?;
                    }
                    CellJob::Network(c) => {
                        let Some(cut) = self.cut(t, &train, c) else {
                            out.warnings.push(format!("nn_transfer {} h={h} cutoff={c}: no target rows before the cutoff, skipped", t.label));
                            return Ok(out);
                        };
                        let (src_net, src_audit) = source_nets
                            .get(&h)
                            .ok_or_else(|| anyhow!("source network for h={h} missing"))?;
                        let seed = self.model_seed(&t.label, "nn_transfer", h, Some(c));
                        let (tr, ft, warn) = transfer::fit_network_transfer(src_net, src_audit, &cut, &cfg.transfer_config(seed), c, h)
                            .with_context(|| format!("network transfer for {} h={h} cutoff={c}", t.label))?;
                        if let Some(warn) = warn {
                            out.warnings.push(format!("nn_finetuned {} h={h} cutoff={c}: {warn}", t.label));
                        }
                        for (fitted, regime) in [(&tr, Regime::NnTransfer), (&ft, Regime::NnFinetuned)] {
                            if !wants(regime, Learner::Network) {
                                continue;
                            }
                            let label = fitted.tag.label();
                            out = out.merge(score(fitted, &t.label, test, seed)?);
                            if let Some(log) = &fitted.log {
                                out.logs.push(LogRow {
                                    regime: label.clone(),
                                    disease: t.label.clone(),
                                    horizon: h,
                                    cutoff: Some(c),
                                    log: log.clone(),
                                });
                                if let Some(warn) = log.warning() {
                                    out.warnings.push(format!("{label} {} h={h} cutoff={c}: {warn}", t.label));
                                }
                            }
                            self.persist(fitted, &t.label)?;
                        }
                    }
                }
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                if n % 25 == 0 || n == total {
                    info!("train: {n}/{total} cell jobs finished");
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        for o in cell_outputs {
            output = output.merge(o);
        }
        self.write_train_outputs(output)
    }

    /// Training rows of `target` visible before cutoff `c`, if any.
    fn cut(&self, target: &DiseaseInfo, train: &SupervisedDataset, c: u32) -> Option<SupervisedDataset> {
        let ci = self.cutoff_index(target, c)?;
        let cut = datasets::apply_cutoff(train, ci);
        (!cut.is_empty()).then_some(cut)
    }

    fn persist(&self, fitted: &FittedModel, disease: &str) -> Result<()> {
        if !self.cfg.outputs.persist_models {
            return Ok(());
        }
        let tag = fitted.tag;
        let name = match tag.cutoff {
            Some(c) => format!("{}_{disease}_h{}_c{c}.json", tag.label(), tag.horizon),
            None => format!("{}_{disease}_h{}.json", tag.label(), tag.horizon),
        };
        formats::write_json(&self.stage_dir(Stage::Train).join("models").join(name), fitted)
    }

    fn write_train_outputs(&self, mut out: TaskOutput) -> Result<()> {
        let dir = self.stage_dir(Stage::Train);
        out.errors.sort_by(|a, b| {
            (&a.regime, &a.disease, &a.city, a.horizon, a.cutoff).cmp(&(&b.regime, &b.disease, &b.city, b.horizon, b.cutoff))
        });
        formats::write_table(
            &dir.join("city_errors.csv"),
            &CITY_ERRORS_HEADER,
            out.errors.iter().map(|e| {
                [
                    e.regime.clone(),
                    e.disease.clone(),
                    e.city.clone(),
                    e.horizon.to_string(),
                    opt_u32(e.cutoff),
                    num(e.mae),
                    num(e.total_cases),
                    e.rows.to_string(),
                ]
            }),
        )?;
        out.models.sort_by(|a, b| {
            (&a.regime, &a.disease, a.horizon, a.cutoff).cmp(&(&b.regime, &b.disease, b.horizon, b.cutoff))
        });
        formats::write_table(
            &dir.join("models.csv"),
            &MODELS_HEADER,
            out.models.iter().map(|m| {
                [
                    m.regime.clone(),
                    m.disease.clone(),
                    m.horizon.to_string(),
                    opt_u32(m.cutoff),
                    m.seed.to_string(),
                    m.audit.source_rows.to_string(),
                    m.audit.target_rows.to_string(),
                    format!("{:016x}", m.audit.fingerprint),
                    m.test_sha256.clone(),
                    m.stop.clone(),
                    m.epochs.to_string(),
                ]
            }),
        )?;
        out.logs.sort_by(|a, b| {
            (&a.regime, &a.disease, a.horizon, a.cutoff).cmp(&(&b.regime, &b.disease, b.horizon, b.cutoff))
        });
        formats::write_table(
            &dir.join("training_log.csv"),
            &["regime", "disease", "horizon", "cutoff", "epoch", "train_mse", "val_mse", "lr"],
            out.logs.iter().flat_map(|l| {
                l.log.epochs.iter().map(move |e| {
                    [
                        l.regime.clone(),
                        l.disease.clone(),
                        l.horizon.to_string(),
                        opt_u32(l.cutoff),
                        e.epoch.to_string(),
                        num(e.train_mse),
                        opt_num(e.val_mse),
                        num(e.lr),
                    ]
                })
            }),
        )?;
        out.warnings.sort();
        out.warnings.dedup();
        write_lines(&dir.join("warnings.txt"), &out.warnings)
    }

    fn evaluate(&self) -> Result<()> {
        let dir = self.stage_dir(Stage::Evaluate);
        let snapshot = self.test_snapshot()?;
        let train_dir = self.stage_dir(Stage::Train);

        // Every scored model must have seen the shared test snapshot.
        let models_path = train_dir.join("models.csv");
        let mut r = formats::reader(&models_path)?;
        formats::check_header(&models_path, &mut r, &MODELS_HEADER)?;
        for rec in r.records() {
            let rec = rec?;
            let key = (rec[1].to_string(), rec[2].parse::<usize>()?);
            if snapshot.get(&key).map(String::as_str) != Some(&rec[8]) {
                bail!("{} for {} h={} was scored on rows that differ from the test snapshot", &rec[0], key.0, key.1);
            }
        }

        let path = train_dir.join("city_errors.csv");
        let mut r = formats::reader(&path)?;
        formats::check_header(&path, &mut r, &CITY_ERRORS_HEADER)?;
        let mut records = Vec::new();
        let mut warnings = Vec::new();
        let mut excluded = BTreeSet::new();
        for rec in r.records() {
            let rec = rec?;
            let cutoff = if rec[4].is_empty() { None } else { Some(rec[4].parse()?) };
            let mae: f64 = rec[5].parse()?;
            let total: f64 = rec[6].parse()?;
            if total > 0.0 {
                records.push(EvalRecord {
                    regime: rec[0].to_string(),
                    disease: rec[1].to_string(),
                    city: rec[2].to_string(),
                    horizon: rec[3].parse()?,
                    cutoff,
                    mae,
                    pmae: mae / total,
                });
            } else if excluded.insert((rec[1].to_string(), rec[2].to_string())) {
                warnings.push(Warning::ZeroTotalCases {
                    city: format!("{}/{}", &rec[1], &rec[2]),
                });
            }
        }
        evaluate::sort_records(&mut records);
        formats::write_table(
            &dir.join("errors.csv"),
            &["regime", "disease", "city", "horizon", "cutoff", "mae", "pmae"],
            records.iter().map(|e| {
                [
                    e.regime.clone(),
                    e.disease.clone(),
                    e.city.clone(),
                    e.horizon.to_string(),
                    opt_u32(e.cutoff),
                    num(e.mae),
                    num(e.pmae),
                ]
            }),
        )?;
        formats::write_table(
            &dir.join("coverage.csv"),
            &["disease", "city", "reason"],
            excluded.iter().map(|(d, c)| [d.clone(), c.clone(), "zero total cases".to_string()]),
        )?;

        let data = self.load()?;
        let source = data.source()?;
        let src: Vec<&[f64]> = data
            .get(&source.label, ReplicateSet::Train)
            .iter()
            .map(|s| s.values.as_slice())
            .collect();
        let targets: Vec<&DiseaseInfo> = data.targets().collect();
        let rows = targets
            .par_iter()
            .map(|t| -> Result<([String; 4], usize)> {
                let tgt: Vec<&[f64]> = data
                    .get(&t.label, ReplicateSet::Train)
                    .iter()
                    .map(|s| s.values.as_slice())
                    .collect();
                let pc = similarity_pairs(&src, &tgt)?;
                let (b, g) = t.params.map_or((String::new(), String::new()), |p| (num(p.beta), num(p.gamma)));
                Ok(([b, g, opt_num(pc.median), pc.pairs_used.to_string()], pc.pairs_skipped))
            })
            .collect::<Result<Vec<_>>>()?;
        let skipped: usize = rows.iter().map(|r| r.1).sum();
        if skipped > 0 {
            warnings.push(Warning::ZeroVariancePair { skipped });
        }
        formats::write_table(
            &dir.join("similarity.csv"),
            &["beta", "gamma", "median_corr", "pairs_used"],
            rows.into_iter().map(|r| r.0),
        )?;
        let lines: Vec<String> = warnings.iter().map(ToString::to_string).collect();
        write_lines(&dir.join("warnings.txt"), &lines)
    }

    fn report(&self) -> Result<()> {
        let dir = self.stage_dir(Stage::Report);
        let eval_dir = self.stage_dir(Stage::Evaluate);
        let records = read_errors(&eval_dir.join("errors.csv"))?;
        let bundle = crate::report::assemble(
            &records,
            &self.cfg.datasets.cutoffs,
            &self.cfg.regimes.iter().map(|r| r.label()).collect::<Vec<_>>(),
        );
        let similarity = fs::read(eval_dir.join("similarity.csv"))?;
        let excluded = formats::read_rows(&eval_dir.join("coverage.csv"))?.1;
        bundle.write(&dir, &similarity, &excluded)
    }
}

/// Correlates series over their common prefix; synthetic series all share
/// one length, empirical files may not.
fn similarity_pairs(src: &[&[f64]], tgt: &[&[f64]]) -> Result<evaluate::PairwiseCorrelation> {
    let n = src.iter().chain(tgt).map(|s| s.len()).min().unwrap_or(0);
    let a: Vec<&[f64]> = src.iter().map(|s| &s[..n]).collect();
    let b: Vec<&[f64]> = tgt.iter().map(|s| &s[..n]).collect();
    Ok(evaluate::median_pairwise_correlation(&a, &b)?)
}

pub fn read_errors(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = formats::reader(path)?;
    formats::check_header(path, &mut r, &["regime", "disease", "city", "horizon", "cutoff", "mae", "pmae"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(EvalRecord {
            regime: rec[0].to_string(),
            disease: rec[1].to_string(),
            city: rec[2].to_string(),
            horizon: rec[3].parse()?,
            cutoff: if rec[4].is_empty() { None } else { Some(rec[4].parse()?) },
            mae: rec[5].parse()?,
            pmae: rec[6].parse()?,
        });
    }
    Ok(out)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

struct TestSet {
    ds: SupervisedDataset,
    sha: String,
    /// Total cases per city over the whole test series.
    totals: BTreeMap<String, f64>,
}

/// Per-city mean absolute error of a model on one test set.
fn score(fitted: &FittedModel, disease: &str, test: &TestSet, seed: u64) -> Result<TaskOutput> {
    let preds = fitted.model.predict_rows(&test.ds.features)?;
    let mut per_city: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        let e = per_city.entry(test.ds.series_of(i).member.as_str()).or_default();
        e.0 += (p - test.ds.targets[i]).abs();
        e.1 += 1;
    }
    let label = fitted.tag.label();
    let mut out = TaskOutput::default();
    for (city, (sum, n)) in per_city {
        out.errors.push(CityError {
            regime: label.clone(),
            disease: disease.to_string(),
            city: city.to_string(),
            horizon: fitted.tag.horizon,
            cutoff: fitted.tag.cutoff,
            mae: sum / n as f64,
            total_cases: test.totals.get(city).copied().unwrap_or(0.0),
            rows: n,
        });
    }
    out.models.push(ModelRow {
        regime: label,
        disease: disease.to_string(),
        horizon: fitted.tag.horizon,
        cutoff: fitted.tag.cutoff,
        seed,
        audit: fitted.audit,
        test_sha256: test.sha.clone(),
        stop: fitted.log.as_ref().map(|l| format!("{:?}", l.stop).to_lowercase()).unwrap_or_default(),
        epochs: fitted.log.as_ref().map_or(0, |l| l.epochs.len()),
    });
    Ok(out)
}

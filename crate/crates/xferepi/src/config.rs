//! Experiment configuration: a versioned TOML file with one section per
//! pipeline concern. Every key has a default except `version`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xferepi_core::datasets::{CutoffMode, CutoffSpec, GapFill, WindowConfig};
use xferepi_core::forest::{ForestConfig, MaxFeatures};
use xferepi_core::neural::{Activation, EarlyStopping, NetArchitecture, Optimizer, TrainConfig};
use xferepi_core::simcore::{EventProbability, SeriesKind, SimConfig, SirdParams};
use xferepi_core::transfer::{
    self, BoostConfig, BoostLoss, BoostVariant, FinetuneConfig, Learner, Regime, TransferConfig,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub empirical: Option<EmpiricalSection>,
    #[serde(default)]
    pub datasets: DatasetSection,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    /// Output-layer retraining of the transferred network.
    #[serde(default)]
    pub transfer: TrainingSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub boosting: BoostingSection,
    #[serde(default = "all_regimes")]
    pub regimes: Vec<RegimeEntry>,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub mu: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = SirdParams::SOURCE;
        ParamsSection {
            beta: p.beta,
            gamma: p.gamma,
            zeta: p.zeta,
            mu: p.mu,
        }
    }
}

impl From<ParamsSection> for SirdParams {
    fn from(p: ParamsSection) -> Self {
        SirdParams {
            beta: p.beta,
            gamma: p.gamma,
            zeta: p.zeta,
            mu: p.mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            beta: vec![0.25, 0.3, 0.35],
            gamma: vec![0.01, 0.1, 0.15],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Complement,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSetting {
    #[default]
    Incidence,
    Prevalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub population: u64,
    pub initial_infected: u64,
    pub steps: usize,
    pub replicates: usize,
    pub convention: Convention,
    pub series: SeriesSetting,
    pub rate_bound: f64,
    pub source: ParamsSection,
    pub grid: GridSection,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimulationSection {
            population: d.population_n,
            initial_infected: d.initial_infected,
            steps: d.t_max,
            replicates: d.replicates,
            convention: Convention::Complement,
            series: SeriesSetting::Incidence,
            rate_bound: d.rate_bound,
            source: ParamsSection::default(),
            grid: GridSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillSetting {
    #[default]
    Zero,
    Interpolate,
}

/// Case-count CSV files that replace the simulated grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalSection {
    pub source: PathBuf,
    pub targets: Vec<PathBuf>,
    #[serde(default = "half")]
    pub split_fraction: f64,
    #[serde(default)]
    pub fill: FillSetting,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffModeSetting {
    #[default]
    TimeStep,
    CalendarWeek,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub lags: usize,
    pub horizons: Vec<usize>,
    pub max_horizon: usize,
    pub cutoffs: Vec<u32>,
    pub cutoff_mode: CutoffModeSetting,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let w = WindowConfig::default();
        DatasetSection {
            lags: w.lags,
            horizons: w.horizons,
            max_horizon: w.max_horizon,
            cutoffs: CutoffSpec::default().values,
            cutoff_mode: CutoffModeSetting::TimeStep,
        }
    }
}

/// `"sqrt"`, `"all"` or a count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaxFeaturesSetting {
    Count(usize),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_features: MaxFeaturesSetting,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub max_samples: Option<usize>,
}

impl Default for ForestSection {
    fn default() -> Self {
        let f = ForestConfig::default();
        ForestSection {
            n_trees: f.n_trees,
            max_features: MaxFeaturesSetting::Named("sqrt".into()),
            min_samples_leaf: f.min_samples_leaf,
            max_depth: f.max_depth,
            bootstrap: f.bootstrap,
            max_samples: f.max_samples,
        }
    }
}

impl ForestSection {
    fn max_features(&self) -> Option<MaxFeatures> {
        match &self.max_features {
            MaxFeaturesSetting::Count(k) => Some(MaxFeatures::Count(*k)),
            MaxFeaturesSetting::Named(s) if s == "sqrt" => Some(MaxFeatures::Sqrt),
            MaxFeaturesSetting::Named(s) if s == "all" => Some(MaxFeatures::All),
            MaxFeaturesSetting::Named(_) => None,
        }
    }

    pub fn to_core(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_features: self.max_features().unwrap_or(MaxFeatures::Sqrt),
            min_samples_leaf: self.min_samples_leaf,
            max_depth: self.max_depth,
            bootstrap: self.bootstrap,
            max_samples: self.max_samples,
            seed,
        }
    }

    fn check(&self, path: &str, lags: usize, out: &mut Vec<Diagnostic>) {
        if self.n_trees == 0 {
            out.push(Diagnostic::new(format!("{path}.n_trees"), "must be >= 1"));
        }
        match self.max_features() {
            None => out.push(Diagnostic::new(
                format!("{path}.max_features"),
                "must be \"sqrt\", \"all\" or a positive count",
            )),
            Some(m) => {
                if let Err(e) = m.resolve(lags) {
                    out.push(Diagnostic::new(format!("{path}.max_features"), e.to_string()));
                }
            }
        }
        if self.min_samples_leaf == 0 {
            out.push(Diagnostic::new(format!("{path}.min_samples_leaf"), "must be >= 1"));
        }
        if self.max_samples == Some(0) {
            out.push(Diagnostic::new(format!("{path}.max_samples"), "must be >= 1"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let a = NetArchitecture::default();
        NetworkSection {
            hidden: a.hidden,
            activation: a.activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerSetting {
    #[default]
    Sgd,
    Adam,
}

impl OptimizerSetting {
    pub fn to_core(self) -> Optimizer {
        match self {
            OptimizerSetting::Sgd => Optimizer::Sgd,
            OptimizerSetting::Adam => Optimizer::adam(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub validation_fraction: f64,
    pub lr_decay: f64,
    pub optimizer: OptimizerSetting,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let es = t.early_stopping.unwrap_or(EarlyStopping {
            patience: 20,
            validation_fraction: 0.1,
        });
        TrainingSection {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: Some(es.patience),
            validation_fraction: es.validation_fraction,
            lr_decay: t.lr_decay,
            optimizer: OptimizerSetting::default(),
        }
    }
}

impl TrainingSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            early_stopping: self.patience.map(|patience| EarlyStopping {
                patience,
                validation_fraction: self.validation_fraction,
            }),
            lr_decay: self.lr_decay,
            optimizer: self.optimizer.to_core(),
            seed,
        }
    }

    fn check(&self, path: &str, out: &mut Vec<Diagnostic>) {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(Diagnostic::new(format!("{path}.learning_rate"), "must be positive and finite"));
        }
        if self.batch_size == 0 {
            out.push(Diagnostic::new(format!("{path}.batch_size"), "must be >= 1"));
        }
        if self.patience.is_some() && !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            out.push(Diagnostic::new(format!("{path}.validation_fraction"), "must lie in (0, 1)"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            out.push(Diagnostic::new(format!("{path}.lr_decay"), "must lie in (0, 1]"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSetting,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        FinetuneSection {
            learning_rate: f.learning_rate,
            epochs: f.epochs,
            batch_size: f.batch_size,
            optimizer: OptimizerSetting::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostingSection {
    pub rounds: usize,
    pub variant: BoostVariant,
    pub steps: usize,
    pub folds: usize,
    pub loss: BoostLoss,
    /// Base-forest settings for boosting; `None` reuses `[forest]`.
    pub forest: Option<ForestSection>,
}

impl Default for BoostingSection {
    fn default() -> Self {
        let b = BoostConfig::default();
        BoostingSection {
            rounds: b.rounds,
            variant: b.variant,
            steps: b.steps,
            folds: b.folds,
            loss: b.loss,
            forest: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeEntry {
    pub regime: Regime,
    pub learner: Learner,
}

impl RegimeEntry {
    pub fn label(&self) -> String {
        transfer::model_label(self.regime, self.learner)
    }
}

fn all_regimes() -> Vec<RegimeEntry> {
    Regime::ALL
        .iter()
        .flat_map(|&regime| {
            regime
                .learners()
                .iter()
                .map(move |&learner| RegimeEntry { regime, learner })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Write every fitted model as JSON under `train/models/`.
    pub persist_models: bool,
    /// Write the windowed datasets as CSV under `prepare/windows/`.
    pub audit_windows: bool,
}

/// One problem found in a configuration, located by its key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{} configuration problem(s):\n{}", .0.len(), render(.0))]
    Invalid(Vec<Diagnostic>),
}

fn render(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl ExperimentConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::parse(&text).map_err(|d| ConfigError::Invalid(vec![d]))?;
        let diags = cfg.validate();
        if diags.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(diags))
        }
    }

    pub fn parse(text: &str) -> Result<Self, Diagnostic> {
        toml::from_str(text).map_err(|e: toml::de::Error| {
            let at = match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "config".to_string(),
            };
            Diagnostic::new(at, e.message().trim().to_string())
        })
    }

    /// Structural and invariant checks; an empty result means valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.version != SCHEMA_VERSION {
            out.push(Diagnostic::new(
                "version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.version),
            ));
        }
        self.check_simulation(&mut out);
        self.check_datasets(&mut out);
        self.forest.check("forest", self.datasets.lags, &mut out);
        if let Some(f) = &self.boosting.forest {
            f.check("boosting.forest", self.datasets.lags, &mut out);
        }
        if self.network.hidden.contains(&0) {
            out.push(Diagnostic::new("network.hidden", "layer widths must be >= 1"));
        }
        self.training.check("training", &mut out);
        self.transfer.check("transfer", &mut out);
        if !(self.finetune.learning_rate >= 0.0 && self.finetune.learning_rate.is_finite()) {
            out.push(Diagnostic::new("finetune.learning_rate", "must be >= 0 and finite"));
        }
        if self.finetune.batch_size == 0 {
            out.push(Diagnostic::new("finetune.batch_size", "must be >= 1"));
        }
        if let Err(e) = self.boost_config(0).validate() {
            out.push(Diagnostic::new("boosting", e.to_string()));
        }
        self.check_regimes(&mut out);
        out
    }

    fn check_simulation(&self, out: &mut Vec<Diagnostic>) {
        let s = &self.simulation;
        if let Err(e) = self.sim_config().validate() {
            let msg = e.to_string();
            let key = if msg.contains("initial_infected") {
                "initial_infected"
            } else if msg.contains("population") {
                "population"
            } else if msg.contains("t_max") {
                "steps"
            } else if msg.contains("replicates") {
                "replicates"
            } else {
                "rate_bound"
            };
            out.push(Diagnostic::new(format!("simulation.{key}"), msg));
        }
        let needed = self.datasets.lags + self.datasets.max_horizon;
        if self.empirical.is_none() && s.steps < needed {
            out.push(Diagnostic::new(
                "simulation.steps",
                format!("series of {} steps are shorter than lags + max_horizon = {needed}", s.steps),
            ));
        }
        if let Err(e) = SirdParams::from(s.source).validate(s.rate_bound) {
            out.push(Diagnostic::new("simulation.source", e.to_string()));
        }
        for (key, values) in [("beta", &s.grid.beta), ("gamma", &s.grid.gamma)] {
            if values.is_empty() {
                out.push(Diagnostic::new(format!("simulation.grid.{key}"), "must not be empty"));
            }
            for (i, &v) in values.iter().enumerate() {
                if !(v >= 0.0 && v <= s.rate_bound) {
                    out.push(Diagnostic::new(
                        format!("simulation.grid.{key}[{i}]"),
                        format!("rate {v} must lie in [0, {}]", s.rate_bound),
                    ));
                }
            }
        }
        if let Some(emp) = &self.empirical {
            if !(emp.split_fraction > 0.0 && emp.split_fraction < 1.0) {
                out.push(Diagnostic::new("empirical.split_fraction", "must lie in (0, 1)"));
            }
            if emp.targets.is_empty() {
                out.push(Diagnostic::new("empirical.targets", "must list at least one file"));
            }
        }
    }

    fn check_datasets(&self, out: &mut Vec<Diagnostic>) {
        let d = &self.datasets;
        let window = self.window_config();
        if let Err(e) = window.validate() {
            out.push(Diagnostic::new("datasets", e.to_string()));
            return;
        }
        if d.cutoffs.is_empty() {
            out.push(Diagnostic::new("datasets.cutoffs", "must not be empty"));
        }
        let min_h = d.horizons.iter().copied().min().unwrap_or(1);
        let start = window.alignment_start();
        for (i, &c) in d.cutoffs.iter().enumerate() {
            let path = format!("datasets.cutoffs[{i}]");
            if i > 0 && c <= d.cutoffs[i - 1] {
                out.push(Diagnostic::new(path.clone(), "cutoffs must be strictly increasing"));
            }
            if (c as usize) <= d.lags + min_h {
                out.push(Diagnostic::new(
                    path.clone(),
                    format!("cutoff {c} must exceed lags + min(horizons) = {}", d.lags + min_h),
                ));
            }
            if (c as usize) <= start {
                out.push(Diagnostic::new(
                    path,
                    format!(
                        "cutoff {c} must exceed the alignment start lags - 1 + max_horizon = {start}; \
                         no training target lies before it"
                    ),
                ));
            }
        }
    }

    fn check_regimes(&self, out: &mut Vec<Diagnostic>) {
        if self.regimes.is_empty() {
            out.push(Diagnostic::new("regimes", "must list at least one regime"));
        }
        let mut seen = BTreeSet::new();
        for (i, r) in self.regimes.iter().enumerate() {
            if let Err(e) = transfer::validate_pairing(r.regime, r.learner) {
                out.push(Diagnostic::new(
                    format!("regimes[{i}]"),
                    format!("{e}; regime tag rule: tradaboost pairs only with forest, nn_transfer and nn_finetuned only with network"),
                ));
            }
            if !seen.insert(*r) {
                out.push(Diagnostic::new(format!("regimes[{i}]"), format!("duplicate regime {}", r.label())));
            }
        }
    }

    pub fn wants(&self, regime: Regime, learner: Learner) -> bool {
        self.regimes.iter().any(|r| r.regime == regime && r.learner == learner)
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            population_n: s.population,
            initial_infected: s.initial_infected,
            t_max: s.steps,
            replicates: s.replicates,
            seed: self.seed,
            convention: match s.convention {
                Convention::Complement => EventProbability::Complement,
                Convention::Literal => EventProbability::Literal,
            },
            kind: match s.series {
                SeriesSetting::Incidence => SeriesKind::Incidence,
                SeriesSetting::Prevalence => SeriesKind::Prevalence,
            },
            rate_bound: s.rate_bound,
        }
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            lags: self.datasets.lags,
            horizons: self.datasets.horizons.clone(),
            max_horizon: self.datasets.max_horizon,
        }
    }

    pub fn cutoff_spec(&self) -> CutoffSpec {
        CutoffSpec {
            mode: match self.datasets.cutoff_mode {
                CutoffModeSetting::TimeStep => CutoffMode::TimeStep,
                CutoffModeSetting::CalendarWeek => CutoffMode::CalendarWeek,
            },
            values: self.datasets.cutoffs.clone(),
        }
    }

    pub fn architecture(&self) -> NetArchitecture {
        NetArchitecture {
            input: self.datasets.lags,
            hidden: self.network.hidden.clone(),
            activation: self.network.activation,
        }
    }

    pub fn boost_config(&self, seed: u64) -> BoostConfig {
        let b = &self.boosting;
        let base = b.forest.as_ref().unwrap_or(&self.forest);
        BoostConfig {
            rounds: b.rounds,
            variant: b.variant,
            steps: b.steps,
            folds: b.folds,
            loss: b.loss,
            base: base.to_core(0),
            seed,
        }
    }

    pub fn transfer_config(&self, seed: u64) -> TransferConfig {
        let f = &self.finetune;
        TransferConfig {
            last_layer: self.transfer.to_core(seed),
            finetune: FinetuneConfig {
                learning_rate: f.learning_rate,
                epochs: f.epochs,
                batch_size: f.batch_size,
                optimizer: f.optimizer.to_core(),
                seed: seed ^ 0x5eed,
            },
        }
    }

    pub fn gap_fill(&self) -> GapFill {
        match self.empirical.as_ref().map(|e| e.fill) {
            Some(FillSetting::Interpolate) => GapFill::Interpolate,
            _ => GapFill::Zero,
        }
    }

    /// Canonical serialisation used for hashing.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::parse("version = 1\n").unwrap();
        assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
        assert_eq!(cfg.regimes.len(), 7);
        assert_eq!(cfg.datasets.cutoffs, vec![25, 30, 35, 100]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let d = ExperimentConfig::parse("version = 1\n[forest]\ntrees = 3\n").unwrap_err();
        assert_eq!(d.path, "line 3");
        assert!(d.message.contains("unknown field"));
    }

    #[test]
    fn bad_pairing_names_the_rule() {
        let cfg = ExperimentConfig::parse(
            "version = 1\nregimes = [{ regime = \"tradaboost\", learner = \"network\" }]\n",
        )
        .unwrap();
        let d = cfg.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "regimes[0]");
        assert!(d[0].message.contains("regime tag rule"));
    }

    #[test]
    fn early_cutoff_cites_alignment() {
        let cfg = ExperimentConfig::parse("version = 1\n[datasets]\ncutoffs = [17, 30]\n").unwrap();
        let d = cfg.validate();
        assert!(d.iter().any(|d| d.path == "datasets.cutoffs[0]" && d.message.contains("alignment start")));
    }
}

//! The five modelling regimes and the instance-transfer booster.
//!
//! | regime         | learner | training data                              |
//! |----------------|---------|--------------------------------------------|
//! | `baseline`     | both    | target training cities, full period        |
//! | `no_transfer`  | both    | source only                                |
//! | `tradaboost`   | forest  | source + target rows before the cutoff     |
//! | `nn_transfer`  | network | source network, output layer refit         |
//! | `nn_finetuned` | network | `nn_transfer` then all layers, small steps |

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{MaxScaler, SupervisedDataset};
use crate::error::{Error, Result, Warning};
use crate::forest::{fit_forest, ForestConfig, ForestModel};
use crate::neural::{self, NetArchitecture, Network, Optimizer, StopReason, TrainConfig, TrainLog};
use crate::rng::{self, Key};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Baseline,
    NoTransfer,
    Tradaboost,
    NnTransfer,
    NnFinetuned,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Baseline,
        Regime::NoTransfer,
        Regime::Tradaboost,
        Regime::NnTransfer,
        Regime::NnFinetuned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::NoTransfer => "no_transfer",
            Regime::Tradaboost => "tradaboost",
            Regime::NnTransfer => "nn_transfer",
            Regime::NnFinetuned => "nn_finetuned",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        Regime::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Whether the regime sees target rows limited by a cutoff.
    pub fn uses_cutoff(self) -> bool {
        matches!(self, Regime::Tradaboost | Regime::NnTransfer | Regime::NnFinetuned)
    }

    /// Learners the regime can be paired with.
    pub fn learners(self) -> &'static [Learner] {
        match self {
            Regime::Baseline | Regime::NoTransfer => &[Learner::Forest, Learner::Network],
            Regime::Tradaboost => &[Learner::Forest],
            Regime::NnTransfer | Regime::NnFinetuned => &[Learner::Network],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Forest,
    Network,
}

impl Learner {
    pub fn as_str(self) -> &'static str {
        match self {
            Learner::Forest => "forest",
            Learner::Network => "network",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Learner::Forest => "rf",
            Learner::Network => "nn",
        }
    }
}

pub fn validate_pairing(regime: Regime, learner: Learner) -> Result<()> {
    if regime.learners().contains(&learner) {
        Ok(())
    } else {
        Err(Error::InvalidPairing {
            regime: regime.as_str(),
            learner: learner.as_str(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegimeTag {
    pub regime: Regime,
    pub learner: Learner,
    /// `None` for regimes that ignore cutoffs.
    pub cutoff: Option<u32>,
    pub horizon: usize,
}

impl RegimeTag {
    pub fn new(regime: Regime, learner: Learner, cutoff: Option<u32>, horizon: usize) -> Result<Self> {
        validate_pairing(regime, learner)?;
        Ok(RegimeTag {
            regime,
            learner,
            cutoff: if regime.uses_cutoff() { cutoff } else { None },
            horizon,
        })
    }

    /// Model label, e.g. `rf_baseline` or `nn_finetuned`.
    pub fn label(&self) -> String {
        model_label(self.regime, self.learner)
    }
}

impl fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} h={}", self.label(), self.horizon)?;
        if let Some(c) = self.cutoff {
            write!(f, " cutoff={c}")?;
        }
        Ok(())
    }
}

pub fn model_label(regime: Regime, learner: Learner) -> String {
    match regime {
        Regime::Baseline | Regime::NoTransfer | Regime::Tradaboost => {
            let mut s = String::from(learner.short());
            s.push('_');
            s.push_str(regime.as_str());
            s
        }
        Regime::NnTransfer | Regime::NnFinetuned => regime.as_str().to_string(),
    }
}

/// A network together with the input/target scaling it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledNetwork {
    pub net: Network,
    pub scaler: MaxScaler,
}

impl ScaledNetwork {
    pub fn predict_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        let scaled = self.scaler.scale_slice(x);
        let out = self.net.predict_rows(&scaled)?;
        Ok(out.into_iter().map(|v| self.scaler.unscale(v).max(0.0)).collect())
    }
}

/// Trains a fresh network on `data`, scaling by the data's own maximum.
pub fn fit_network(data: &SupervisedDataset, arch: &NetArchitecture, config: &TrainConfig) -> Result<(ScaledNetwork, TrainLog)> {
    if data.is_empty() {
        return Err(Error::EmptyData("network training data"));
    }
    let scaler = MaxScaler::fit(data);
    let init = Network::init(arch, rng::derive_seed(config.seed, &[Key::Label("init")]))?;
    let (net, log) = neural::train(
        &init,
        &scaler.scale_slice(&data.features),
        &scaler.scale_slice(&data.targets),
        config,
    )?;
    Ok((ScaledNetwork { net, scaler }, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub learners: Vec<ForestModel>,
    /// `ln(1 / beta)` per learner.
    pub confidences: Vec<f64>,
}

impl BoostedModel {
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        let preds = self
            .learners
            .iter()
            .map(|l| l.predict(row))
            .collect::<Result<Vec<_>>>()?;
        Ok(stats::weighted_median(&preds, &self.confidences).unwrap_or(0.0))
    }

    pub fn predict_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.learners.first().map_or(1, |l| l.n_features);
        if x.len() % p != 0 {
            return Err(Error::ArityMismatch {
                expected: p,
                found: x.len() % p,
            });
        }
        let per_learner = self
            .learners
            .iter()
            .map(|l| l.predict_rows(x))
            .collect::<Result<Vec<_>>>()?;
        let mut preds = Vec::with_capacity(per_learner.len());
        Ok((0..x.len() / p)
            .map(|i| {
                preds.clear();
                preds.extend(per_learner.iter().map(|v| v[i]));
                stats::weighted_median(&preds, &self.confidences).unwrap_or(0.0)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ForecastModel {
    Forest(ForestModel),
    Network(ScaledNetwork),
    Boosted(BoostedModel),
}

impl ForecastModel {
    /// Non-negative predictions for every row of a row-major matrix.
    pub fn predict_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ForecastModel::Forest(m) => m.predict_rows(x),
            ForecastModel::Network(m) => m.predict_rows(x),
            ForecastModel::Boosted(m) => m.predict_rows(x),
        }
    }
}

/// Which rows a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingAudit {
    pub source_rows: usize,
    pub target_rows: usize,
    /// Content hash of the training rows, source first.
    pub fingerprint: u64,
}

impl TrainingAudit {
    fn of(source: Option<&SupervisedDataset>, target: Option<&SupervisedDataset>) -> Self {
        let fp = |d: Option<&SupervisedDataset>| d.map_or(0, |d| d.fingerprint());
        TrainingAudit {
            source_rows: source.map_or(0, |d| d.len()),
            target_rows: target.map_or(0, |d| d.len()),
            fingerprint: rng::derive_seed(fp(source), &[Key::Index(fp(target))]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub tag: RegimeTag,
    pub model: ForecastModel,
    pub audit: TrainingAudit,
    pub log: Option<TrainLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub forest: ForestConfig,
    pub arch: NetArchitecture,
    pub train: TrainConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            forest: ForestConfig::default(),
            arch: NetArchitecture::default(),
            train: TrainConfig::default(),
        }
    }
}

fn fit_plain(data: &SupervisedDataset, learner: Learner, config: &LearnerConfig) -> Result<(ForecastModel, Option<TrainLog>)> {
    match learner {
        Learner::Forest => {
            let w = vec![1.0; data.len()];
            Ok((ForecastModel::Forest(fit_forest(data, &w, &config.forest)?), None))
        }
        Learner::Network => {
            let (net, log) = fit_network(data, &config.arch, &config.train)?;
            Ok((ForecastModel::Network(net), Some(log)))
        }
    }
}

/// Aspirational baseline: trained on target training cities over the whole
/// period. Cutoffs do not apply.
pub fn fit_baseline(target_train: &SupervisedDataset, learner: Learner, config: &LearnerConfig, horizon: usize) -> Result<FittedModel> {
    if target_train.is_empty() {
        return Err(Error::EmptyData("baseline needs target training rows"));
    }
    let (model, log) = fit_plain(target_train, learner, config)?;
    Ok(FittedModel {
        tag: RegimeTag::new(Regime::Baseline, learner, None, horizon)?,
        model,
        audit: TrainingAudit::of(None, Some(target_train)),
        log,
    })
}

/// Direct transfer: trained on the source disease only.
pub fn fit_no_transfer(source_train: &SupervisedDataset, learner: Learner, config: &LearnerConfig, horizon: usize) -> Result<FittedModel> {
    if source_train.is_empty() {
        return Err(Error::EmptyData("no-transfer model needs source rows"));
    }
    let (model, log) = fit_plain(source_train, learner, config)?;
    Ok(FittedModel {
        tag: RegimeTag::new(Regime::NoTransfer, learner, None, horizon)?,
        model,
        audit: TrainingAudit::of(Some(source_train), None),
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostLoss {
    #[default]
    Linear,
    Square,
    Exponential,
}

impl BoostLoss {
    /// Adjusted error in `[0, 1]` from an absolute error and the largest one.
    pub fn adjust(self, abs_err: f64, max_err: f64) -> f64 {
        if max_err <= 0.0 {
            return 0.0;
        }
        let r = (abs_err / max_err).clamp(0.0, 1.0);
        match self {
            BoostLoss::Linear => r,
            BoostLoss::Square => r * r,
            BoostLoss::Exponential => 1.0 - libm::exp(-r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostVariant {
    /// Source weights decayed over candidate steps chosen by cross-validation,
    /// then AdaBoost.R2 rounds with the source weights frozen.
    #[default]
    TwoStage,
    /// Single-stage multiplicative updates: source rows decay, target rows grow.
    Classic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub rounds: usize,
    pub variant: BoostVariant,
    /// Candidate source-decay steps of the two-stage variant.
    pub steps: usize,
    pub folds: usize,
    pub loss: BoostLoss,
    pub base: ForestConfig,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 10,
            variant: BoostVariant::TwoStage,
            steps: 10,
            folds: 5,
            loss: BoostLoss::Linear,
            base: ForestConfig::default(),
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::param("rounds", "must be >= 1"));
        }
        if self.variant == BoostVariant::TwoStage && self.steps == 0 {
            return Err(Error::param("steps", "must be >= 1"));
        }
        if self.variant == BoostVariant::TwoStage && self.folds < 2 {
            return Err(Error::param("folds", "must be >= 2"));
        }
        Ok(())
    }
}

/// Weights observed while boosting; source rows come first in every vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoostTrace {
    pub n_source: usize,
    /// Two-stage: weights at the start of every decay step.
    pub stage1: Vec<Vec<f64>>,
    pub cv_errors: Vec<f64>,
    pub selected_step: Option<usize>,
    /// Weights after each boosting round.
    pub rounds: Vec<Vec<f64>>,
    /// Weighted adjusted error on target rows per round.
    pub round_errors: Vec<f64>,
}

struct Combined {
    data: SupervisedDataset,
    n_source: usize,
}

impl Combined {
    fn new(source: &SupervisedDataset, target: &SupervisedDataset) -> Self {
        let mut data = source.clone();
        if data.is_empty() {
            data = SupervisedDataset::empty(target.lags);
        }
        data.append(target);
        Combined {
            data,
            n_source: source.len(),
        }
    }

    fn n(&self) -> usize {
        self.data.len()
    }

    fn target_range(&self) -> core::ops::Range<usize> {
        self.n_source..self.n()
    }
}

fn forest_seed(cfg: &BoostConfig, path: &[Key<'_>]) -> ForestConfig {
    ForestConfig {
        seed: rng::derive_seed(cfg.seed, path),
        ..cfg.base.clone()
    }
}

fn fit_round(data: &Combined, w: &[f64], base: &ForestConfig, round: usize) -> Result<ForestModel> {
    fit_forest(&data.data, w, base).map_err(|e| Error::BoostingFailed {
        round,
        reason: e.to_string(),
    })
}

/// Adjusted errors of `model` on every row, normalised by the largest
/// absolute error.
fn adjusted_errors(model: &ForestModel, data: &Combined, loss: BoostLoss) -> Result<Vec<f64>> {
    let preds = model.predict_rows(&data.data.features)?;
    let abs: Vec<f64> = preds
        .iter()
        .zip(&data.data.targets)
        .map(|(p, y)| libm::fabs(p - y))
        .collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    Ok(abs.iter().map(|&a| loss.adjust(a, max)).collect())
}

fn target_error(w: &[f64], e: &[f64], range: core::ops::Range<usize>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in range {
        num += w[i] * e[i];
        den += w[i];
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|v| *v /= s);
    }
}

/// One source-decay step of the two-stage scheme.
///
/// Source weights become `w_i * beta^e_i` with `beta` chosen so the target
/// rows carry `target_fraction` of the total weight afterwards. Target
/// weights are left untouched, so no source weight ever grows. Returns the
/// new weights and the `beta` used.
pub fn decay_source_weights(weights: &[f64], errors: &[f64], n_source: usize, target_fraction: f64) -> (Vec<f64>, f64) {
    let mut w = weights.to_vec();
    let target_mass: f64 = w[n_source..].iter().sum();
    if n_source == 0 || target_mass <= 0.0 {
        return (w, 1.0);
    }
    if target_fraction >= 1.0 {
        w[..n_source].iter_mut().for_each(|v| *v = 0.0);
        return (w, 0.0);
    }
    let f = target_fraction.max(0.0);
    let wanted = target_mass * (1.0 - f) / f.max(f64::MIN_POSITIVE);
    // Solve in u = -ln(beta): tiny errors can need a beta far below what
    // bisection on [0, 1] resolves.
    let src = |u: f64| -> f64 { (0..n_source).map(|i| weights[i] * libm::exp(-u * errors[i])).sum() };
    let floor: f64 = (0..n_source).filter(|&i| errors[i] <= 0.0).map(|i| weights[i]).sum();
    if src(0.0) <= wanted {
        return (w, 1.0);
    }
    if floor >= wanted {
        let extra = wanted / floor;
        for i in 0..n_source {
            w[i] = if errors[i] <= 0.0 { weights[i] * extra } else { 0.0 };
        }
        return (w, 0.0);
    }
    let mut hi = 1.0f64;
    while src(hi) > wanted && hi < 1e300 {
        hi *= 2.0;
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if src(mid) > wanted {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    for i in 0..n_source {
        w[i] = weights[i] * libm::exp(-u * errors[i]);
    }
    let beta = libm::exp(-u);
    (w, beta)
}

/// Out-of-fold mean squared error on target rows for a forest fit with the
/// given weights; fold rows get weight zero while their fold is held out.
fn cross_validate(data: &Combined, w: &[f64], folds: &[Vec<usize>], cfg: &BoostConfig, step: usize) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0usize;
    for (k, fold) in folds.iter().enumerate() {
        let mut wf = w.to_vec();
        for &i in fold {
            wf[i] = 0.0;
        }
        if wf.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        let base = forest_seed(cfg, &[Key::Label("cv"), Key::Index(step as u64), Key::Index(k as u64)]);
        let model = fit_round(data, &wf, &base, step)?;
        for &i in fold {
            let p = model.predict(data.data.row(i))?;
            let e = p - data.data.targets[i];
            sse += e * e;
            count += 1;
        }
    }
    Ok(if count > 0 { sse / count as f64 } else { 0.0 })
}

fn target_folds(data: &Combined, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let m = data.n() - data.n_source;
    if m < 2 {
        return Vec::new();
    }
    let k = k.min(m);
    let mut idx: Vec<usize> = data.target_range().collect();
    idx.shuffle(&mut rng::derived_stream(seed, &[Key::Label("folds")]));
    let mut folds = vec![Vec::new(); k];
    for (j, i) in idx.into_iter().enumerate() {
        folds[j % k].push(i);
    }
    folds
}

/// AdaBoost.R2 rounds that only reweight target rows; source weights stay
/// fixed and the target rows keep their total mass.
fn boost_target_rounds(data: &Combined, mut w: Vec<f64>, cfg: &BoostConfig, trace: &mut BoostTrace) -> Result<BoostedModel> {
    let range = data.target_range();
    let mut learners = Vec::new();
    let mut confidences = Vec::new();
    for round in 0..cfg.rounds {
        let base = forest_seed(cfg, &[Key::Label("round"), Key::Index(round as u64)]);
        let model = fit_round(data, &w, &base, round)?;
        let e = adjusted_errors(&model, data, cfg.loss)?;
        let eps = target_error(&w, &e, range.clone());
        trace.round_errors.push(eps);
        if eps >= 0.5 {
            if learners.is_empty() {
                learners.push(model);
                confidences.push(1.0);
            }
            break;
        }
        let beta = (eps / (1.0 - eps)).max(1e-10);
        learners.push(model);
        confidences.push(libm::log(1.0 / beta));
        if eps <= 0.0 {
            break;
        }
        let before: f64 = w[range.clone()].iter().sum();
        for i in range.clone() {
            w[i] *= libm::pow(beta, 1.0 - e[i]);
        }
        let after: f64 = w[range.clone()].iter().sum();
        if after > 0.0 {
            for i in range.clone() {
                w[i] *= before / after;
            }
        }
        trace.rounds.push(w.clone());
    }
    Ok(BoostedModel {
        learners,
        confidences,
    })
}

fn two_stage(data: &Combined, cfg: &BoostConfig, trace: &mut BoostTrace) -> Result<BoostedModel> {
    let n = data.n();
    let m = n - data.n_source;
    let base_frac = m as f64 / n as f64;
    let folds = target_folds(data, cfg.folds, cfg.seed);
    let mut w = vec![1.0 / n as f64; n];
    let steps = cfg.steps;
    for t in 0..steps {
        trace.stage1.push(w.clone());
        let cv = if folds.is_empty() {
            0.0
        } else {
            cross_validate(data, &w, &folds, cfg, t)?
        };
        trace.cv_errors.push(cv);
        if t + 1 == steps || data.n_source == 0 {
            break;
        }
        let base = forest_seed(cfg, &[Key::Label("decay"), Key::Index(t as u64)]);
        let model = fit_round(data, &w, &base, t)?;
        let e = adjusted_errors(&model, data, cfg.loss)?;
        let frac = if steps > 1 {
            base_frac + (t + 1) as f64 / (steps - 1) as f64 * (1.0 - base_frac)
        } else {
            1.0
        };
        w = decay_source_weights(&w, &e, data.n_source, frac).0;
    }
    let best = trace
        .cv_errors
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc })
        .0;
    trace.selected_step = Some(best);
    let start = trace.stage1[best].clone();
    boost_target_rounds(data, start, cfg, trace)
}

fn classic(data: &Combined, cfg: &BoostConfig, trace: &mut BoostTrace) -> Result<BoostedModel> {
    let n = data.n();
    let ns = data.n_source;
    let range = data.target_range();
    let beta_src = if ns > 0 {
        1.0 / (1.0 + libm::sqrt(2.0 * libm::log(ns as f64) / cfg.rounds as f64))
    } else {
        1.0
    };
    let mut w = vec![1.0 / n as f64; n];
    let mut learners = Vec::new();
    let mut confidences = Vec::new();
    for round in 0..cfg.rounds {
        let base = forest_seed(cfg, &[Key::Label("round"), Key::Index(round as u64)]);
        let model = fit_round(data, &w, &base, round)?;
        let e = adjusted_errors(&model, data, cfg.loss)?;
        let eps = target_error(&w, &e, range.clone());
        trace.round_errors.push(eps);
        if eps >= 0.5 {
            if learners.is_empty() {
                learners.push(model);
                confidences.push(1.0);
            }
            break;
        }
        let beta = (eps / (1.0 - eps)).max(1e-10);
        learners.push(model);
        confidences.push(libm::log(1.0 / beta));
        if eps <= 0.0 {
            break;
        }
        for i in 0..ns {
            w[i] *= libm::pow(beta_src, e[i]);
        }
        for i in range.clone() {
            w[i] *= libm::pow(beta, -e[i]);
        }
        normalize(&mut w);
        trace.rounds.push(w.clone());
    }
    // The ensemble votes with the second half of the rounds.
    let keep = learners.len() / 2;
    Ok(BoostedModel {
        learners: learners.split_off(keep),
        confidences: confidences.split_off(keep),
    })
}

/// Instance-transfer boosting with the forest as base learner.
///
/// An empty source set reduces to AdaBoost.R2 on the target rows.
pub fn fit_tradaboost(source: &SupervisedDataset, target: &SupervisedDataset, config: &BoostConfig) -> Result<(BoostedModel, BoostTrace)> {
    config.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyData("tradaboost needs target rows"));
    }
    let data = Combined::new(source, target);
    let mut trace = BoostTrace {
        n_source: data.n_source,
        ..Default::default()
    };
    let model = match config.variant {
        BoostVariant::TwoStage => two_stage(&data, config, &mut trace)?,
        BoostVariant::Classic => classic(&data, config, &mut trace)?,
    };
    Ok((model, trace))
}

pub fn fit_tradaboost_model(source: &SupervisedDataset, target_cut: &SupervisedDataset, config: &BoostConfig, cutoff: u32, horizon: usize) -> Result<(FittedModel, BoostTrace)> {
    let (model, trace) = fit_tradaboost(source, target_cut, config)?;
    Ok((
        FittedModel {
            tag: RegimeTag::new(Regime::Tradaboost, Learner::Forest, Some(cutoff), horizon)?,
            model: ForecastModel::Boosted(model),
            audit: TrainingAudit::of(Some(source), Some(target_cut)),
            log: None,
        },
        trace,
    ))
}

/// Refits only the output layer of a source-trained network on target rows.
/// The source scaling is kept so the frozen layers see familiar inputs.
pub fn transfer_last_layer(source: &ScaledNetwork, target_cut: &SupervisedDataset, config: &TrainConfig) -> Result<(ScaledNetwork, TrainLog)> {
    if target_cut.is_empty() {
        return Err(Error::EmptyData("last-layer transfer needs target rows"));
    }
    let mut net = source.net.clone();
    net.freeze_hidden();
    let s = source.scaler;
    let (trained, log) = neural::train(
        &net,
        &s.scale_slice(&target_cut.features),
        &s.scale_slice(&target_cut.targets),
        config,
    )?;
    Ok((
        ScaledNetwork {
            net: trained,
            scaler: s,
        },
        log,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 1e-5,
            epochs: 10,
            batch_size: 256,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

/// Unfreezes every layer and trains briefly at a small learning rate without
/// early stopping. On divergence the input network is returned unchanged
/// with [`Warning::FinetuneReverted`].
pub fn finetune_all(net: &ScaledNetwork, target_cut: &SupervisedDataset, config: &FinetuneConfig) -> Result<(ScaledNetwork, TrainLog, Option<Warning>)> {
    if target_cut.is_empty() {
        return Err(Error::EmptyData("fine-tuning needs target rows"));
    }
    let mut start = net.net.clone();
    start.set_all_trainable(true);
    let tc = TrainConfig {
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        batch_size: config.batch_size,
        early_stopping: None,
        lr_decay: 1.0,
        optimizer: config.optimizer,
        seed: config.seed,
    };
    let s = net.scaler;
    let (trained, log) = neural::train(
        &start,
        &s.scale_slice(&target_cut.features),
        &s.scale_slice(&target_cut.targets),
        &tc,
    )?;
    if log.stop == StopReason::Diverged {
        return Ok((net.clone(), log, Some(Warning::FinetuneReverted)));
    }
    Ok((
        ScaledNetwork {
            net: trained,
            scaler: s,
        },
        log,
        None,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub last_layer: TrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            last_layer: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

/// Fits the network transfer pair for one cutoff: the output-layer refit and
/// its fine-tuned successor.
pub fn fit_network_transfer(
    source: &ScaledNetwork,
    source_audit: &TrainingAudit,
    target_cut: &SupervisedDataset,
    config: &TransferConfig,
    cutoff: u32,
    horizon: usize,
) -> Result<(FittedModel, FittedModel, Option<Warning>)> {
    let (transferred, log) = transfer_last_layer(source, target_cut, &config.last_layer)?;
    let (tuned, ft_log, warn) = finetune_all(&transferred, target_cut, &config.finetune)?;
    let audit = TrainingAudit {
        source_rows: source_audit.source_rows,
        target_rows: target_cut.len(),
        fingerprint: rng::derive_seed(source_audit.fingerprint, &[Key::Index(target_cut.fingerprint())]),
    };
    Ok((
        FittedModel {
            tag: RegimeTag::new(Regime::NnTransfer, Learner::Network, Some(cutoff), horizon)?,
            model: ForecastModel::Network(transferred),
            audit,
            log: Some(log),
        },
        FittedModel {
            tag: RegimeTag::new(Regime::NnFinetuned, Learner::Network, Some(cutoff), horizon)?,
            model: ForecastModel::Network(tuned),
            audit,
            log: Some(ft_log),
        },
        warn,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::SeriesId;

    fn dataset(rows: &[(&[f64], f64)], series: &str) -> SupervisedDataset {
        let lags = rows[0].0.len();
        let mut d = SupervisedDataset::empty(lags);
        d.series_ids.push(SeriesId::new("d", series));
        for (t, (x, y)) in rows.iter().enumerate() {
            d.features.extend_from_slice(x);
            d.targets.push(*y);
            d.meta.push(crate::datasets::RowMeta {
                series: 0,
                target_t: t as u32,
                horizon: 1,
            });
        }
        d
    }

    #[test]
    fn pairing_rules() {
        assert!(validate_pairing(Regime::Tradaboost, Learner::Forest).is_ok());
        assert!(matches!(
            validate_pairing(Regime::Tradaboost, Learner::Network),
            Err(Error::InvalidPairing { regime: "tradaboost", learner: "network" })
        ));
        assert!(validate_pairing(Regime::NnTransfer, Learner::Forest).is_err());
        assert!(validate_pairing(Regime::NnFinetuned, Learner::Forest).is_err());
        let tag = RegimeTag::new(Regime::Baseline, Learner::Network, Some(25), 3).unwrap();
        assert_eq!(tag.cutoff, None);
        assert_eq!(tag.label(), "nn_baseline");
        assert_eq!(model_label(Regime::Tradaboost, Learner::Forest), "rf_tradaboost");
        assert_eq!(model_label(Regime::NnFinetuned, Learner::Network), "nn_finetuned");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let empty = SupervisedDataset::empty(1);
        let cfg = LearnerConfig::default();
        assert!(fit_baseline(&empty, Learner::Forest, &cfg, 2).is_err());
        assert!(fit_no_transfer(&empty, Learner::Network, &cfg, 2).is_err());
        assert!(fit_tradaboost(&dataset(&[(&[1.0], 1.0)], "s"), &empty, &BoostConfig::default()).is_err());
    }

    #[test]
    fn decay_hits_requested_target_fraction() {
        let w = vec![0.2; 5];
        let e = [1.0, 0.5, 0.0, 0.25, 0.7];
        let (nw, beta) = decay_source_weights(&w, &e, 3, 0.6);
        let target: f64 = nw[3..].iter().sum();
        assert!((target / nw.iter().sum::<f64>() - 0.6).abs() < 1e-12);
        assert!(beta > 0.0 && beta < 1.0);
        assert_eq!(&nw[3..], &w[3..]);
        assert!(nw[..3].iter().zip(&w).all(|(a, b)| a <= b));
        let (all_target, _) = decay_source_weights(&w, &e, 3, 1.0);
        assert!(all_target[..3].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decay_with_zero_errors_scales_uniformly() {
        let w = vec![0.25; 4];
        let (nw, beta) = decay_source_weights(&w, &[0.0, 0.0, 0.0, 0.0], 2, 0.8);
        assert_eq!(beta, 0.0);
        assert!((nw[2] + nw[3]) / nw.iter().sum::<f64>() - 0.8 < 1e-12);
        assert!((nw[0] - nw[1]).abs() < 1e-15);
    }

    #[test]
    fn empty_source_boosts_target_only() {
        let target = dataset(
            &[(&[0.0], 0.0), (&[1.0], 1.0), (&[2.0], 4.0), (&[3.0], 9.0), (&[4.0], 16.0)],
            "t",
        );
        let cfg = BoostConfig {
            rounds: 3,
            base: ForestConfig {
                n_trees: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let (model, trace) = fit_tradaboost(&SupervisedDataset::empty(1), &target, &cfg).unwrap();
        assert_eq!(trace.n_source, 0);
        assert_eq!(trace.stage1.len(), 1);
        assert!(!model.learners.is_empty());
        let p = model.predict_rows(&[2.0]).unwrap();
        assert!(p[0] >= 0.0 && p[0] <= 16.0);
    }

    #[test]
    fn classic_variant_downweights_bad_source_rows() {
        let source = dataset(&[(&[0.0], 100.0), (&[1.0], 1.0), (&[2.0], 2.0)], "s");
        let target = dataset(&[(&[0.0], 0.0), (&[1.0], 1.0), (&[2.0], 2.0), (&[3.0], 3.0)], "t");
        let cfg = BoostConfig {
            rounds: 4,
            variant: BoostVariant::Classic,
            base: ForestConfig {
                n_trees: 1,
                bootstrap: false,
                max_depth: Some(0),
                ..Default::default()
            },
            ..Default::default()
        };
        let (_, trace) = fit_tradaboost(&source, &target, &cfg).unwrap();
        let first = &trace.rounds[0];
        assert!(first[0] < first[1]);
    }
}

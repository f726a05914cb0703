//! Chain-binomial SIRD simulation.
//!
//! Each step draws binomial event counts from the compartment sizes at the
//! start of the step and applies them synchronously:
//!
//! ```text
//! infections ~ Bin(S, p(beta * I / N))
//! recoveries, deaths ~ trinomial over I with p(gamma), p(mu)
//! waning ~ Bin(R, p(zeta))
//! ```
//!
//! where `p(rate)` is `1 - exp(-rate)` under the default convention.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Key};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirdParams {
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub mu: f64,
}

impl SirdParams {
    /// The endemic source disease of the synthetic study.
    pub const SOURCE: SirdParams = SirdParams {
        beta: 0.191,
        gamma: 0.05,
        zeta: 0.008,
        mu: 0.0294,
    };

    pub fn with_beta_gamma(self, beta: f64, gamma: f64) -> Self {
        SirdParams {
            beta,
            gamma,
            ..self
        }
    }

    /// Checks that every rate is finite, non-negative and below `bound`.
    pub fn validate(&self, bound: f64) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
            ("mu", self.mu),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(name, format!("rate must be >= 0, got {v}")));
            }
            if v >= bound {
                return Err(Error::param(
                    name,
                    format!("rate {v} is not below the bound {bound}"),
                ));
            }
        }
        Ok(())
    }
}

/// How a per-step rate becomes a per-individual event probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventProbability {
    /// `1 - exp(-rate)`: the usual chain-binomial hazard.
    #[default]
    Complement,
    /// `exp(-rate)` taken literally as the event probability.
    Literal,
}

impl EventProbability {
    pub fn probability(self, rate: f64) -> f64 {
        let p = match self {
            EventProbability::Complement => -libm::expm1(-rate),
            EventProbability::Literal => libm::exp(-rate),
        };
        p.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SirdState {
    pub s: u64,
    pub i: u64,
    pub r: u64,
    pub d: u64,
    pub t: u64,
}

impl SirdState {
    pub fn population(&self) -> u64 {
        self.s + self.i + self.r + self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepEvents {
    pub infections: u64,
    pub recoveries: u64,
    pub deaths: u64,
    pub wanings: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    /// New infections per step.
    #[default]
    Incidence,
    /// Infectious count after each step.
    Prevalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub population_n: u64,
    pub initial_infected: u64,
    pub t_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub convention: EventProbability,
    pub kind: SeriesKind,
    pub rate_bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            population_n: 10_000,
            initial_infected: 10,
            t_max: 1000,
            replicates: 100,
            seed: 0,
            convention: EventProbability::Complement,
            kind: SeriesKind::Incidence,
            rate_bound: 10.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_infected == 0 || self.initial_infected > self.population_n {
            return Err(Error::param(
                "initial_infected",
                format!(
                    "must satisfy 0 < initial_infected <= population_n ({})",
                    self.population_n
                ),
            ));
        }
        if self.population_n > (1u64 << 31) {
            return Err(Error::param("population_n", "must not exceed 2^31"));
        }
        if self.t_max == 0 {
            return Err(Error::param("t_max", "must be >= 1"));
        }
        if self.replicates == 0 {
            return Err(Error::param("replicates", "must be >= 1"));
        }
        if !(self.rate_bound > 0.0) {
            return Err(Error::param("rate_bound", "must be positive"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> SirdState {
        let i = self.initial_infected.min(self.population_n);
        SirdState {
            s: self.population_n - i,
            i,
            r: 0,
            d: 0,
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesId {
    pub disease: String,
    /// Replicate number or city code.
    pub member: String,
}

impl SeriesId {
    pub fn new(disease: impl Into<String>, member: impl Into<String>) -> Self {
        SeriesId {
            disease: disease.into(),
            member: member.into(),
        }
    }
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.disease, self.member)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicSeries {
    pub id: SeriesId,
    pub values: Vec<f64>,
    pub kind: SeriesKind,
}

impl EpidemicSeries {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    // Binomial::new only fails for p outside [0, 1].
    Binomial::new(n, p).map(|b| b.sample(rng)).unwrap_or(0)
}

/// Advances the epidemic by one step.
///
/// `population` is the fixed N used in the force of infection.
pub fn step<R: Rng + ?Sized>(
    state: &SirdState,
    params: &SirdParams,
    population: u64,
    convention: EventProbability,
    rng: &mut R,
) -> (SirdState, StepEvents) {
    let n = population.max(1) as f64;
    let mut ev = StepEvents::default();

    if state.i > 0 {
        let p_inf = convention.probability(params.beta * state.i as f64 / n);
        ev.infections = binomial(state.s, p_inf, rng);

        // Recovery and death compete for the same infectious pool; their
        // probabilities are rescaled to sum below one and drawn as a trinomial.
        let mut p_rec = convention.probability(params.gamma);
        let mut p_die = convention.probability(params.mu);
        let sum = p_rec + p_die;
        if sum >= 1.0 {
            let w = (1.0 - 1e-9) / sum;
            p_rec *= w;
            p_die *= w;
        }
        ev.recoveries = binomial(state.i, p_rec, rng);
        let p_die_cond = if p_rec < 1.0 { p_die / (1.0 - p_rec) } else { 0.0 };
        ev.deaths = binomial(state.i - ev.recoveries, p_die_cond, rng);
    }
    if state.r > 0 {
        ev.wanings = binomial(state.r, convention.probability(params.zeta), rng);
    }

    let next = SirdState {
        s: state.s - ev.infections + ev.wanings,
        i: state.i + ev.infections - ev.recoveries - ev.deaths,
        r: state.r + ev.recoveries - ev.wanings,
        d: state.d + ev.deaths,
        t: state.t + 1,
    };
    (next, ev)
}

/// Runs `config.t_max` steps from the initial state, handing every new
/// state and its events to `observer`.
pub fn run<R, F>(config: &SimConfig, params: &SirdParams, rng: &mut R, mut observer: F)
where
    R: Rng + ?Sized,
    F: FnMut(&SirdState, &StepEvents),
{
    let mut state = config.initial_state();
    let n = config.population_n;
    for _ in 0..config.t_max {
        let (next, ev) = step(&state, params, n, config.convention, rng);
        observer(&next, &ev);
        state = next;
    }
}

/// Simulates one series of length `t_max` using the given stream.
pub fn simulate<R: Rng + ?Sized>(
    config: &SimConfig,
    params: &SirdParams,
    id: SeriesId,
    rng: &mut R,
) -> EpidemicSeries {
    let mut values = Vec::with_capacity(config.t_max);
    let kind = config.kind;
    run(config, params, rng, |state, ev| {
        values.push(match kind {
            SeriesKind::Incidence => ev.infections as f64,
            SeriesKind::Prevalence => state.i as f64,
        });
    });
    EpidemicSeries { id, values, kind }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicateSet {
    Train,
    Test,
}

impl ReplicateSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplicateSet::Train => "train",
            ReplicateSet::Test => "test",
        }
    }
}

pub fn replicate_seed(master: u64, disease: &str, set: ReplicateSet, replicate: usize) -> u64 {
    rng::derive_seed(
        master,
        &[
            Key::Label("simulate"),
            Key::Label(disease),
            Key::Label(set.as_str()),
            Key::Index(replicate as u64),
        ],
    )
}

/// Simulates one replicate on its own derived stream.
pub fn simulate_replicate(
    config: &SimConfig,
    params: &SirdParams,
    disease: &str,
    set: ReplicateSet,
    replicate: usize,
) -> EpidemicSeries {
    let mut stream = rng::stream(replicate_seed(config.seed, disease, set, replicate));
    let id = SeriesId::new(disease, format!("{}-{replicate:03}", set.as_str()));
    simulate(config, params, id, &mut stream)
}

/// Label used for a grid disease, e.g. `b0.25_g0.01`.
pub fn disease_label(beta: f64, gamma: f64) -> String {
    format!("b{beta}_g{gamma}")
}

pub const SOURCE_LABEL: &str = "source";

#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseSpec {
    pub label: String,
    pub params: SirdParams,
}

/// The source disease followed by every `(beta, gamma)` combination, betas
/// varying slowest.
pub fn grid_specs(source: &SirdParams, betas: &[f64], gammas: &[f64]) -> Vec<DiseaseSpec> {
    let mut out = Vec::with_capacity(1 + betas.len() * gammas.len());
    out.push(DiseaseSpec {
        label: String::from(SOURCE_LABEL),
        params: *source,
    });
    for &b in betas {
        for &g in gammas {
            out.push(DiseaseSpec {
                label: disease_label(b, g),
                params: source.with_beta_gamma(b, g),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseSets {
    pub label: String,
    pub params: SirdParams,
    pub train: Vec<EpidemicSeries>,
    pub test: Vec<EpidemicSeries>,
}

/// Simulates independent train and test replicate sets for one disease.
pub fn simulate_disease(config: &SimConfig, spec: &DiseaseSpec) -> DiseaseSets {
    let sets = |set| {
        (0..config.replicates)
            .map(|r| simulate_replicate(config, &spec.params, &spec.label, set, r))
            .collect()
    };
    DiseaseSets {
        label: spec.label.clone(),
        params: spec.params,
        train: sets(ReplicateSet::Train),
        test: sets(ReplicateSet::Test),
    }
}

/// Source plus the full `(beta, gamma)` target grid.
pub fn generate_grid(
    source: &SirdParams,
    betas: &[f64],
    gammas: &[f64],
    config: &SimConfig,
) -> Result<Vec<DiseaseSets>> {
    if betas.is_empty() {
        return Err(Error::param("beta_values", "must not be empty"));
    }
    if gammas.is_empty() {
        return Err(Error::param("gamma_values", "must not be empty"));
    }
    config.validate()?;
    let specs = grid_specs(source, betas, gammas);
    for spec in &specs {
        spec.params.validate(config.rate_bound)?;
    }
    Ok(specs.iter().map(|s| simulate_disease(config, s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn small_config() -> SimConfig {
        SimConfig {
            population_n: 1000,
            initial_infected: 5,
            t_max: 60,
            replicates: 3,
            seed: 11,
            ..SimConfig::default()
        }
    }

    #[test]
    fn no_infectious_means_no_events() {
        let state = SirdState {
            s: 1000,
            i: 0,
            r: 0,
            d: 0,
            t: 4,
        };
        let params = SirdParams {
            beta: 3.0,
            gamma: 1.0,
            zeta: 0.0,
            mu: 0.5,
        };
        let mut rng = rng::stream(1);
        let (next, ev) = step(&state, &params, 1000, EventProbability::Complement, &mut rng);
        assert_eq!(ev, StepEvents::default());
        assert_eq!((next.s, next.i, next.r, next.d, next.t), (1000, 0, 0, 0, 5));
    }

    #[test]
    fn single_step_series_without_infection_is_zero() {
        let cfg = SimConfig {
            t_max: 1,
            initial_infected: 0,
            ..SimConfig::default()
        };
        let s = simulate(&cfg, &SirdParams::SOURCE, SeriesId::new("x", "0"), &mut rng::stream(3));
        assert_eq!(s.values, [0.0]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = small_config();
        let a = simulate_replicate(&cfg, &SirdParams::SOURCE, "source", ReplicateSet::Train, 2);
        let b = simulate_replicate(&cfg, &SirdParams::SOURCE, "source", ReplicateSet::Train, 2);
        assert_eq!(a, b);
        let c = simulate_replicate(&cfg, &SirdParams::SOURCE, "source", ReplicateSet::Test, 2);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn trinomial_never_overdraws_infectious_pool() {
        // Literal convention with large rates pushes p_rec + p_die over one.
        let params = SirdParams {
            beta: 0.5,
            gamma: 0.01,
            zeta: 0.01,
            mu: 0.01,
        };
        let cfg = SimConfig {
            convention: EventProbability::Literal,
            ..small_config()
        };
        let mut rng = rng::stream(5);
        let mut state = cfg.initial_state();
        for _ in 0..200 {
            let (next, ev) = step(&state, &params, cfg.population_n, cfg.convention, &mut rng);
            assert!(ev.recoveries + ev.deaths <= state.i);
            assert_eq!(next.population(), cfg.population_n);
            state = next;
        }
    }

    #[test]
    fn absorbing_when_no_infection_and_no_waning() {
        let params = SirdParams {
            beta: 0.1,
            gamma: 0.9,
            zeta: 0.0,
            mu: 0.3,
        };
        let cfg = SimConfig {
            t_max: 400,
            ..small_config()
        };
        let mut states = Vec::new();
        run(&cfg, &params, &mut rng::stream(9), |s, _| states.push(*s));
        let first_zero = states.iter().position(|s| s.i == 0).expect("epidemic dies out");
        for w in states[first_zero..].windows(2) {
            assert_eq!((w[0].s, w[0].i, w[0].r, w[0].d), (w[1].s, w[1].i, w[1].r, w[1].d));
            assert_eq!(w[1].t, w[0].t + 1);
        }
    }

    #[test]
    fn grid_has_nine_targets_with_disjoint_seeds() {
        let cfg = small_config();
        let grid = generate_grid(
            &SirdParams::SOURCE,
            &[0.25, 0.3, 0.35],
            &[0.01, 0.1, 0.15],
            &cfg,
        )
        .unwrap();
        assert_eq!(grid.len(), 10);
        assert_eq!(grid[0].label, SOURCE_LABEL);
        assert_eq!(grid[1].label, "b0.25_g0.01");
        assert_eq!(grid[9].label, "b0.35_g0.15");
        let mut seeds = BTreeSet::new();
        for d in &grid {
            assert_eq!(d.train.len(), 3);
            assert_eq!(d.test.len(), 3);
            for r in 0..cfg.replicates {
                for set in [ReplicateSet::Train, ReplicateSet::Test] {
                    assert!(seeds.insert(replicate_seed(cfg.seed, &d.label, set, r)));
                }
            }
        }
    }

    #[test]
    fn grid_rejects_empty_lists_and_bad_rates() {
        let cfg = small_config();
        assert!(generate_grid(&SirdParams::SOURCE, &[], &[0.1], &cfg).is_err());
        assert!(generate_grid(&SirdParams::SOURCE, &[0.1], &[], &cfg).is_err());
        assert!(generate_grid(&SirdParams::SOURCE, &[12.0], &[0.1], &cfg).is_err());
        assert!(SirdParams { beta: -0.1, ..SirdParams::SOURCE }.validate(10.0).is_err());
    }

    #[test]
    fn literal_and_complement_probabilities() {
        assert!((EventProbability::Complement.probability(0.05) - 0.048_770_575_499_285_99).abs() < 1e-15);
        assert!((EventProbability::Literal.probability(0.05) - 0.951_229_424_500_714).abs() < 1e-15);
        assert_eq!(EventProbability::Complement.probability(0.0), 0.0);
    }

    #[test]
    fn prevalence_flag_reports_infectious_count() {
        let cfg = SimConfig {
            kind: SeriesKind::Prevalence,
            ..small_config()
        };
        let mut rng_a = rng::stream(4);
        let s = simulate(&cfg, &SirdParams::SOURCE, SeriesId::new("p", "0"), &mut rng_a);
        let mut infectious = Vec::new();
        run(&cfg, &SirdParams::SOURCE, &mut rng::stream(4), |st, _| infectious.push(st.i as f64));
        assert_eq!(s.values, infectious);
        assert_eq!(s.kind, SeriesKind::Prevalence);
    }
}

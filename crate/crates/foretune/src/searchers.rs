//! Configuration searchers: random, grid, and a Tree-structured Parzen
//! Estimator over ordinal domains.
//!
//! All three are deterministic functions of `(history, caller rng, knobs)`:
//! the caller hands `suggest` a freshly derived RNG stream per trial, so a
//! searcher replayed from stored records continues exactly where the
//! original process left off.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperspace::{ParamConfig, SearchSpace};

/// Outcome of one finished trial as seen by a searcher.
///
/// `objective` is `Some(finite)` exactly when the trial completed; failed
/// trials keep their configuration in history (so it can be avoided) but
/// contribute to no density estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub config: ParamConfig,
    pub objective: Option<f64>,
}

impl Observation {
    pub fn completed(config: ParamConfig, objective: f64) -> Result<Self> {
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective(objective));
        }
        Ok(Observation { config, objective: Some(objective) })
    }

    pub fn failed(config: ParamConfig) -> Self {
        Observation { config, objective: None }
    }

    pub fn is_completed(&self) -> bool {
        self.objective.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearcherKind {
    Random,
    Grid,
    Tpe,
}

impl SearcherKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SearcherKind::Random => "random",
            SearcherKind::Grid => "grid",
            SearcherKind::Tpe => "tpe",
        }
    }
}

impl fmt::Display for SearcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearcherKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SearcherKind::Random),
            "grid" => Ok(SearcherKind::Grid),
            "tpe" => Ok(SearcherKind::Tpe),
            other => Err(Error::InvalidConfig(format!("unknown searcher `{other}`"))),
        }
    }
}

/// TPE tuning knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpeKnobs {
    /// Fraction of completed trials forming the "good" density.
    pub gamma_fraction: f64,
    /// Pseudo-count added to every rung of both densities.
    pub prior_weight: f64,
    /// Completed trials required before model-based suggestions start.
    pub n_startup: usize,
    /// Candidates drawn from the good density per suggestion.
    pub n_candidates: usize,
    /// Score every configuration in the space instead of sampling
    /// candidates. Intended for tests on small spaces.
    pub exhaustive_candidates: bool,
}

impl Default for TpeKnobs {
    fn default() -> Self {
        TpeKnobs {
            gamma_fraction: 0.25,
            prior_weight: 1.0,
            n_startup: 5,
            n_candidates: 24,
            exhaustive_candidates: false,
        }
    }
}

impl TpeKnobs {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_fraction > 0.0 && self.gamma_fraction <= 1.0) {
            return Err(Error::InvalidKnobs(format!(
                "gamma_fraction must lie in (0, 1], got {}",
                self.gamma_fraction
            )));
        }
        if !(self.prior_weight > 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::InvalidKnobs(format!(
                "prior_weight must be positive and finite, got {}",
                self.prior_weight
            )));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidKnobs("n_candidates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Split history's completed trials into (good, bad) index lists.
///
/// Trials are ranked by objective ascending, ties broken by earlier trial
/// first; the best `max(1, ceil(gamma * n))` go to `good`. Failed trials
/// appear in neither list. Returned indices point into `history`.
pub fn tpe_split(history: &[Observation], gamma_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut completed: Vec<(usize, f64)> = history
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.objective.map(|v| (i, v)))
        .collect();
    if completed.is_empty() {
        return (Vec::new(), Vec::new());
    }
    completed.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let n = completed.len();
    let n_good = ((gamma_fraction * n as f64).ceil() as usize).max(1).min(n);
    let good = completed[..n_good].iter().map(|(i, _)| *i).collect();
    let bad = completed[n_good..].iter().map(|(i, _)| *i).collect();
    (good, bad)
}

/// Categorical probability mass function over a domain's ordinals.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    weights: Vec<f64>,
}

impl Pmf {
    /// Smoothed empirical PMF: every rung starts at `prior_weight`
    /// pseudo-counts, observed ordinals each add one count, and the total
    /// normalizes to 1. With no observations this is the uniform prior.
    pub fn from_counts(domain_len: usize, ordinals: &[usize], prior_weight: f64) -> Pmf {
        let mut weights = vec![prior_weight; domain_len];
        for &o in ordinals {
            weights[o] += 1.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Pmf { weights }
    }

    pub fn probs(&self) -> &[f64] {
        &self.weights
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

/// Density ratio `∏ᵢ l_i(ordᵢ) / g_i(ordᵢ)`, accumulated in log space.
pub fn tpe_score(ordinals: &[usize], good: &[Pmf], bad: &[Pmf]) -> f64 {
    tpe_log_score(ordinals, good, bad).exp()
}

fn tpe_log_score(ordinals: &[usize], good: &[Pmf], bad: &[Pmf]) -> f64 {
    ordinals
        .iter()
        .zip(good.iter().zip(bad))
        .map(|(&o, (l, g))| l.weights[o].ln() - g.weights[o].ln())
        .sum()
}

/// A sequential configuration suggester with observation history.
#[derive(Clone, Debug)]
pub struct Searcher {
    kind: SearcherKind,
    knobs: TpeKnobs,
    history: Vec<Observation>,
    /// Suggestions handed out so far; drives grid enumeration. Replaying
    /// observations advances it, which is what makes resume stateless.
    suggested: u64,
}

impl Searcher {
    pub fn new(kind: SearcherKind, knobs: TpeKnobs) -> Result<Self> {
        knobs.validate()?;
        Ok(Searcher { kind, knobs, history: Vec::new(), suggested: 0 })
    }

    pub fn kind(&self) -> SearcherKind {
        self.kind
    }

    pub fn knobs(&self) -> &TpeKnobs {
        &self.knobs
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    /// Record a finished trial. The configuration must be valid for `space`.
    pub fn observe(&mut self, space: &SearchSpace, obs: Observation) -> Result<()> {
        space.validate(&obs.config)?;
        if let Some(v) = obs.objective {
            if !v.is_finite() {
                return Err(Error::NonFiniteObjective(v));
            }
        }
        self.history.push(obs);
        Ok(())
    }

    /// Propose the next configuration to try.
    ///
    /// `rng` must be a stream derived for exactly this suggestion (see
    /// [`crate::seed`]); the result is then a pure function of
    /// `(history, stream, knobs)` no matter how many suggestions are in
    /// flight concurrently.
    pub fn suggest<R: Rng>(&mut self, space: &SearchSpace, rng: &mut R) -> Result<ParamConfig> {
        let cursor = self.suggested.max(self.history.len() as u64);
        let cfg = match self.kind {
            SearcherKind::Grid => space
                .nth_lexicographic(cursor)
                .ok_or(Error::GridExhausted(cursor))?,
            SearcherKind::Random => {
                retry_failed_duplicate(&self.history, || space.sample_uniform(rng))
            }
            SearcherKind::Tpe => self.suggest_tpe(space, rng),
        };
        self.suggested = cursor + 1;
        Ok(cfg)
    }

    fn suggest_tpe<R: Rng>(&self, space: &SearchSpace, rng: &mut R) -> ParamConfig {
        let n_completed = self.history.iter().filter(|o| o.is_completed()).count();
        if n_completed < self.knobs.n_startup {
            return retry_failed_duplicate(&self.history, || space.sample_uniform(rng));
        }
        let (good_idx, bad_idx) = tpe_split(&self.history, self.knobs.gamma_fraction);
        let (good, bad) = self.densities(space, &good_idx, &bad_idx);
        retry_failed_duplicate(&self.history, || {
            if self.knobs.exhaustive_candidates {
                self.argmax_exhaustive(space, &good, &bad)
            } else {
                self.argmax_sampled(space, &good, &bad, rng)
            }
        })
    }

    /// Per-parameter smoothed densities for the good and bad trial sets.
    fn densities(
        &self,
        space: &SearchSpace,
        good_idx: &[usize],
        bad_idx: &[usize],
    ) -> (Vec<Pmf>, Vec<Pmf>) {
        let ordinals_of = |idx: &[usize], pos: usize| -> Vec<usize> {
            let d = &space.domains()[pos];
            idx.iter()
                .map(|&i| {
                    d.ordinal_of(self.history[i].config.get(d.name()).expect("validated"))
                        .expect("validated")
                })
                .collect()
        };
        let mut good = Vec::with_capacity(space.domains().len());
        let mut bad = Vec::with_capacity(space.domains().len());
        for pos in 0..space.domains().len() {
            let len = space.domains()[pos].len();
            good.push(Pmf::from_counts(len, &ordinals_of(good_idx, pos), self.knobs.prior_weight));
            bad.push(Pmf::from_counts(len, &ordinals_of(bad_idx, pos), self.knobs.prior_weight));
        }
        (good, bad)
    }

    /// Best-scoring configuration over the whole space; first maximum wins.
    fn argmax_exhaustive(&self, space: &SearchSpace, good: &[Pmf], bad: &[Pmf]) -> ParamConfig {
        let mut best: Option<(f64, ParamConfig)> = None;
        for n in 0..space.cardinality() {
            let cfg = space.nth_lexicographic(n).expect("n below cardinality");
            let ords = space.config_to_ordinals(&cfg).expect("enumerated config");
            let s = tpe_log_score(&ords, good, bad);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, cfg));
            }
        }
        best.expect("space is non-empty").1
    }

    /// Best of `n_candidates` draws from the good density; first maximum
    /// wins among the drawn candidates.
    fn argmax_sampled<R: Rng>(
        &self,
        space: &SearchSpace,
        good: &[Pmf],
        bad: &[Pmf],
        rng: &mut R,
    ) -> ParamConfig {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for _ in 0..self.knobs.n_candidates {
            let ords: Vec<usize> = good.iter().map(|p| p.sample(rng)).collect();
            let s = tpe_log_score(&ords, good, bad);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, ords));
            }
        }
        space
            .ordinals_to_config(&best.expect("n_candidates >= 1").1)
            .expect("sampled ordinals in range")
    }
}

/// Run `make` once; if the result duplicates a *failed* configuration in
/// history, run it once more and accept whatever comes back. Keeps cheap
/// known-bad repeats rare without ever blocking progress.
fn retry_failed_duplicate(history: &[Observation], mut make: impl FnMut() -> ParamConfig) -> ParamConfig {
    let first = make();
    let dup = history
        .iter()
        .any(|o| !o.is_completed() && o.config == first);
    if dup {
        make()
    } else {
        first
    }
}

//! Discrete search spaces over ordered value ladders.
//!
//! Every tunable is categorical-ordinal: a *ladder* fixes the allowed values
//! in strictly increasing order, and a *domain* restricts search to a
//! contiguous ordinal window of its ladder. Domains are typically derived
//! from observed deployments by [`derive_domain`]: one rung below the
//! smallest observed value through one rung above the largest, clamped at
//! the ladder ends.

use std::fmt;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a parameter shapes the network or the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    ModelDefine,
    Optimization,
}

/// One tunable value. Integer rungs stay integers end to end; only rates
/// (learning rate) are floats. Equality is kind-strict and exact: values
/// originate from shared literals, never from arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
}

impl ParamValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ParamValue::Int(i) => i as f64,
            ParamValue::Float(f) => f,
        }
    }

    pub fn as_usize(self) -> Option<usize> {
        match self {
            ParamValue::Int(i) if i >= 0 => Some(i as usize),
            _ => None,
        }
    }

    fn parse(text: &str) -> Option<ParamValue> {
        let t = text.trim();
        if t.is_empty() {
            return None;
        }
        if t.contains(['.', 'e', 'E']) {
            t.parse::<f64>().ok().filter(|f| f.is_finite()).map(ParamValue::Float)
        } else {
            t.parse::<i64>().ok().map(ParamValue::Int)
        }
    }
}

impl fmt::Display for ParamValue {
    /// Plain decimal notation; floats use the shortest round-trip form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
        }
    }
}

/// A named, strictly increasing list of allowed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueLadder {
    pub name: String,
    pub group: ParamGroup,
    values: Vec<ParamValue>,
}

impl ValueLadder {
    pub fn new(name: impl Into<String>, group: ParamGroup, values: Vec<ParamValue>) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(Error::InvalidLadder { name, reason: "no values".into() });
        }
        for w in values.windows(2) {
            if w[0].as_f64() >= w[1].as_f64() {
                return Err(Error::InvalidLadder {
                    name,
                    reason: format!("values must be strictly increasing, got {} then {}", w[0], w[1]),
                });
            }
        }
        Ok(ValueLadder { name, group, values })
    }

    pub fn values(&self) -> &[ParamValue] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Exact position of `v` on the ladder, if it is a rung.
    pub fn index_of(&self, v: ParamValue) -> Option<usize> {
        self.values.iter().position(|x| *x == v)
    }
}

/// Contiguous ordinal window `[lo, hi]` into a ladder (inclusive ends).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDomain {
    ladder: ValueLadder,
    lo: usize,
    hi: usize,
}

impl ParamDomain {
    /// Domain spanning the whole ladder.
    pub fn full(ladder: ValueLadder) -> Self {
        let hi = ladder.len() - 1;
        ParamDomain { ladder, lo: 0, hi }
    }

    /// Domain over `[lo, hi]` ladder indices.
    pub fn window(ladder: ValueLadder, lo: usize, hi: usize) -> Result<Self> {
        if lo > hi || hi >= ladder.len() {
            return Err(Error::InvalidLadder {
                name: ladder.name.clone(),
                reason: format!("window [{lo}, {hi}] out of range for {} rungs", ladder.len()),
            });
        }
        Ok(ParamDomain { ladder, lo, hi })
    }

    pub fn name(&self) -> &str {
        &self.ladder.name
    }

    pub fn group(&self) -> ParamGroup {
        self.ladder.group
    }

    pub fn ladder(&self) -> &ValueLadder {
        &self.ladder
    }

    /// Number of selectable values.
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false // a domain always holds at least one value
    }

    /// Selectable values, lowest first.
    pub fn slice(&self) -> &[ParamValue] {
        &self.ladder.values[self.lo..=self.hi]
    }

    /// Value at ordinal `ord` (0 = lowest selectable).
    pub fn value_at(&self, ord: usize) -> Option<ParamValue> {
        self.slice().get(ord).copied()
    }

    /// Ordinal of `v` within the domain window.
    pub fn ordinal_of(&self, v: ParamValue) -> Option<usize> {
        self.slice().iter().position(|x| *x == v)
    }
}

/// Derive a search window from deployed extremes: one rung below the
/// observed minimum through one rung above the observed maximum, clamped
/// at the ladder ends.
pub fn derive_domain(
    ladder: &ValueLadder,
    observed_min: ParamValue,
    observed_max: ParamValue,
) -> Result<ParamDomain> {
    let imin = ladder.index_of(observed_min).ok_or_else(|| Error::NotOnLadder {
        name: ladder.name.clone(),
        value: observed_min.to_string(),
    })?;
    let imax = ladder.index_of(observed_max).ok_or_else(|| Error::NotOnLadder {
        name: ladder.name.clone(),
        value: observed_max.to_string(),
    })?;
    if imin > imax {
        return Err(Error::InvalidLadder {
            name: ladder.name.clone(),
            reason: format!("observed min {observed_min} above observed max {observed_max}"),
        });
    }
    let lo = imin.saturating_sub(1);
    let hi = (imax + 1).min(ladder.len() - 1);
    ParamDomain::window(ladder.clone(), lo, hi)
}

/// One concrete assignment of every parameter, in space order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamConfig(pub IndexMap<String, ParamValue>);

impl ParamConfig {
    pub fn new() -> Self {
        ParamConfig(IndexMap::new())
    }

    pub fn get(&self, name: &str) -> Option<ParamValue> {
        self.0.get(name).copied()
    }

    pub fn insert(&mut self, name: impl Into<String>, v: ParamValue) {
        self.0.insert(name.into(), v);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl Default for ParamConfig {
    fn default() -> Self {
        ParamConfig::new()
    }
}

/// Ordered collection of parameter domains; the unit the searchers operate
/// on. Parameter order is fixed at construction and defines configuration
/// serialization order, grid order and plot axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    domains: Vec<ParamDomain>,
}

impl SearchSpace {
    pub fn from_domains(domains: Vec<ParamDomain>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::InvalidConfig("search space has no parameters".into()));
        }
        for i in 1..domains.len() {
            if domains[..i].iter().any(|d| d.name() == domains[i].name()) {
                return Err(Error::DuplicateParam(domains[i].name().to_string()));
            }
        }
        Ok(SearchSpace { domains })
    }

    /// The nine-parameter space over the builtin ladders, full windows.
    pub fn builtin() -> Self {
        SearchSpace {
            domains: builtin_ladders().into_iter().map(ParamDomain::full).collect(),
        }
    }

    pub fn domains(&self) -> &[ParamDomain] {
        &self.domains
    }

    pub fn get(&self, name: &str) -> Option<&ParamDomain> {
        self.domains.iter().find(|d| d.name() == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(|d| d.name())
    }

    /// Number of distinct configurations.
    pub fn cardinality(&self) -> u64 {
        self.domains
            .iter()
            .fold(1u64, |acc, d| acc.saturating_mul(d.len() as u64))
    }

    /// Replace one parameter's window with the singleton `{value}`.
    pub fn pin(&mut self, name: &str, value: ParamValue) -> Result<()> {
        let d = self
            .domains
            .iter_mut()
            .find(|d| d.name() == name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let idx = d.ladder.index_of(value).ok_or_else(|| Error::NotOnLadder {
            name: name.to_string(),
            value: value.to_string(),
        })?;
        d.lo = idx;
        d.hi = idx;
        Ok(())
    }

    /// Uniform draw over the cartesian product, one ordinal per parameter.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> ParamConfig {
        let mut cfg = ParamConfig::new();
        for d in &self.domains {
            let ord = rng.gen_range(0..d.len());
            cfg.insert(d.name(), d.value_at(ord).unwrap());
        }
        cfg
    }

    /// All constraint violations of `cfg` against this space (empty = valid).
    pub fn violations(&self, cfg: &ParamConfig) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.domains {
            match cfg.get(d.name()) {
                None => out.push(format!("missing parameter `{}`", d.name())),
                Some(v) => {
                    if d.ladder.index_of(v).is_none() {
                        out.push(format!("`{}` = {} is not a ladder rung", d.name(), v));
                    } else if d.ordinal_of(v).is_none() {
                        out.push(format!(
                            "`{}` = {} lies outside the search window [{}, {}]",
                            d.name(),
                            v,
                            d.slice()[0],
                            d.slice()[d.len() - 1]
                        ));
                    }
                }
            }
        }
        for (name, _) in cfg.iter() {
            if self.get(name).is_none() {
                out.push(format!("unknown parameter `{name}`"));
            }
        }
        out
    }

    pub fn validate(&self, cfg: &ParamConfig) -> Result<()> {
        let v = self.violations(cfg);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }

    /// Per-parameter ordinals of a valid configuration, in space order.
    pub fn config_to_ordinals(&self, cfg: &ParamConfig) -> Result<Vec<usize>> {
        self.validate(cfg)?;
        Ok(self
            .domains
            .iter()
            .map(|d| d.ordinal_of(cfg.get(d.name()).unwrap()).unwrap())
            .collect())
    }

    /// Configuration from per-parameter ordinals, in space order.
    pub fn ordinals_to_config(&self, ords: &[usize]) -> Result<ParamConfig> {
        if ords.len() != self.domains.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} ordinals, got {}",
                self.domains.len(),
                ords.len()
            )));
        }
        let mut cfg = ParamConfig::new();
        for (d, &ord) in self.domains.iter().zip(ords) {
            let v = d.value_at(ord).ok_or_else(|| {
                Error::InvalidConfig(format!("ordinal {ord} out of range for `{}`", d.name()))
            })?;
            cfg.insert(d.name(), v);
        }
        Ok(cfg)
    }

    /// `n`-th configuration in lexicographic ordinal order (first parameter
    /// most significant). `None` once the product is exhausted.
    pub fn nth_lexicographic(&self, n: u64) -> Option<ParamConfig> {
        if n >= self.cardinality() {
            return None;
        }
        let mut rem = n;
        let mut ords = vec![0usize; self.domains.len()];
        for (i, d) in self.domains.iter().enumerate().rev() {
            let len = d.len() as u64;
            ords[i] = (rem % len) as usize;
            rem /= len;
        }
        Some(self.ordinals_to_config(&ords).expect("ordinals in range"))
    }

    /// One `name = [v, ...]` line per parameter, in space order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.domains {
            out.push_str(&domain_line(d));
            out.push('\n');
        }
        out
    }

    /// Parse the [`to_text`](Self::to_text) format. Lines are
    /// `name = [v1, v2, ...]`; `#` starts a comment. Groups are restored
    /// from the builtin ladder names; unknown names default to
    /// `model_define`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut domains = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, rest) = line.split_once('=').ok_or_else(|| Error::SpaceText {
                line: lineno + 1,
                reason: "expected `name = [values]`".into(),
            })?;
            let name = name.trim();
            let rest = rest.trim();
            let inner = rest
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| Error::SpaceText {
                    line: lineno + 1,
                    reason: "values must be bracketed".into(),
                })?;
            let mut values = Vec::new();
            for tok in inner.split(',') {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                values.push(ParamValue::parse(tok).ok_or_else(|| Error::SpaceText {
                    line: lineno + 1,
                    reason: format!("unreadable value `{tok}`"),
                })?);
            }
            let group = builtin_group(name).unwrap_or(ParamGroup::ModelDefine);
            let ladder = ValueLadder::new(name, group, values)?;
            domains.push(ParamDomain::full(ladder));
        }
        SearchSpace::from_domains(domains)
    }
}

/// Render one space-text line for a domain (window values only).
pub fn domain_line(d: &ParamDomain) -> String {
    let vals: Vec<String> = d.slice().iter().map(|v| v.to_string()).collect();
    format!("{} = [{}]", d.name(), vals.join(", "))
}

fn builtin_group(name: &str) -> Option<ParamGroup> {
    match name {
        "d_ff" | "d_layers" | "d_model" | "e_layers" | "factor" | "n_heads" => {
            Some(ParamGroup::ModelDefine)
        }
        "batch_size" | "learning_rate" | "train_epochs" => Some(ParamGroup::Optimization),
        _ => None,
    }
}

fn ints(vals: &[i64]) -> Vec<ParamValue> {
    vals.iter().copied().map(ParamValue::Int).collect()
}

/// The nine builtin ladders, in canonical order: network-shape parameters
/// first (alphabetical), then optimizer parameters.
pub fn builtin_ladders() -> Vec<ValueLadder> {
    let dims = ints(&[16, 32, 64, 128, 256, 512, 1024, 2048, 4096]);
    let mk = |name: &str, group, values| ValueLadder::new(name, group, values).expect("builtin");
    vec![
        mk("d_ff", ParamGroup::ModelDefine, dims.clone()),
        mk("d_layers", ParamGroup::ModelDefine, ints(&[1, 2])),
        mk("d_model", ParamGroup::ModelDefine, dims),
        mk("e_layers", ParamGroup::ModelDefine, ints(&[1, 2, 3])),
        mk("factor", ParamGroup::ModelDefine, ints(&[1, 2, 3, 4])),
        mk("n_heads", ParamGroup::ModelDefine, ints(&[2, 4, 8, 16])),
        mk("batch_size", ParamGroup::Optimization, ints(&[4, 16, 32, 64, 128, 256])),
        mk(
            "learning_rate",
            ParamGroup::Optimization,
            vec![
                ParamValue::Float(0.00001),
                ParamValue::Float(0.0001),
                ParamValue::Float(0.001),
            ],
        ),
        mk(
            "train_epochs",
            ParamGroup::Optimization,
            ints(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
        ),
    ]
}

/// Builtin ladder by name.
pub fn builtin_ladder(name: &str) -> Option<ValueLadder> {
    builtin_ladders().into_iter().find(|l| l.name == name)
}

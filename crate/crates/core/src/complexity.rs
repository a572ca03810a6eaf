//! Federated complexity: `f(X) = beta * ||X||`, `f(d) = sum_j 1/m_j` and
//! `F = f(X) + f(d)`, plus participation paths and their enumeration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ComplexityProfile, Measure};

/// Sequence of participating client sets, one per communication round.
///
/// Frequencies `m_j` count appearances of client `j` within this path.
/// Rounds are stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct FedPath {
    rounds: Vec<Vec<usize>>,
    freq: BTreeMap<usize, usize>,
}

impl FedPath {
    pub fn new(mut rounds: Vec<Vec<usize>>) -> Result<Self> {
        if rounds.is_empty() {
            return Err(Error::invalid("a path needs at least one round"));
        }
        let mut freq = BTreeMap::new();
        for (r, set) in rounds.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(Error::invalid(format!("round {r} has no participants")));
            }
            set.sort_unstable();
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("round {r} lists a client twice")));
            }
            for &c in set.iter() {
                *freq.entry(c).or_insert(0) += 1;
            }
        }
        Ok(Self { rounds, freq })
    }

    /// Every client in `0..clients` participates in each of `rounds` rounds.
    pub fn all_every_round(clients: usize, rounds: usize) -> Result<Self> {
        Self::new(vec![(0..clients).collect(); rounds])
    }

    /// One client per round, cycling through `0..clients`.
    pub fn round_robin(clients: usize, rounds: usize) -> Result<Self> {
        if clients == 0 {
            return Err(Error::invalid("round-robin needs at least one client"));
        }
        Self::new((0..rounds).map(|r| vec![r % clients]).collect())
    }

    pub fn rounds(&self) -> &[Vec<usize>] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Participants of round `r`, repeating the path cyclically.
    pub fn round(&self, r: usize) -> &[usize] {
        &self.rounds[r % self.rounds.len()]
    }

    /// `m_j` for every client that appears, by client id.
    pub fn frequencies(&self) -> &BTreeMap<usize, usize> {
        &self.freq
    }

    /// Number of distinct clients `d`.
    pub fn distinct(&self) -> usize {
        self.freq.len()
    }

    pub fn max_client(&self) -> usize {
        *self.freq.keys().next_back().expect("paths are non-empty")
    }

    pub fn f_d(&self) -> f64 {
        f_d(self)
    }
}

impl fmt::Display for FedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (r, set) in self.rounds.iter().enumerate() {
            if r > 0 {
                write!(f, ",")?;
            }
            write!(f, "[")?;
            for (i, c) in set.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{c}")?;
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

/// Byte offset of the `index`-th round's opening bracket.
fn round_offset(s: &str, index: usize) -> usize {
    let mut depth = 0;
    let mut seen = 0;
    for (pos, ch) in s.char_indices() {
        match ch {
            '[' => {
                depth += 1;
                if depth == 2 {
                    if seen == index {
                        return pos;
                    }
                    seen += 1;
                }
            }
            ']' => depth -= 1,
            _ => {}
        }
    }
    0
}

fn line_col_to_offset(s: &str, line: usize, col: usize) -> usize {
    let start: usize = s.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + col.saturating_sub(1)).min(s.len())
}

impl FromStr for FedPath {
    type Err = Error;

    /// Parses `[[0,1],[2]]`. Errors carry the byte offset of the failure.
    fn from_str(s: &str) -> Result<Self> {
        let rounds: Vec<Vec<usize>> = serde_json::from_str(s).map_err(|e| Error::Parse {
            position: line_col_to_offset(s, e.line(), e.column()),
            reason: format!("expected a list of client-id lists: {e}"),
        })?;
        if rounds.is_empty() {
            return Err(Error::Parse {
                position: 0,
                reason: "path has no rounds".into(),
            });
        }
        for (r, set) in rounds.iter().enumerate() {
            let mut sorted = set.clone();
            sorted.sort_unstable();
            let reason = if set.is_empty() {
                "empty round"
            } else if sorted.windows(2).any(|w| w[0] == w[1]) {
                "client listed twice in one round"
            } else {
                continue;
            };
            return Err(Error::Parse {
                position: round_offset(s, r),
                reason: format!("round {r}: {reason}"),
            });
        }
        FedPath::new(rounds)
    }
}

impl TryFrom<Vec<Vec<usize>>> for FedPath {
    type Error = Error;
    fn try_from(rounds: Vec<Vec<usize>>) -> Result<Self> {
        FedPath::new(rounds)
    }
}

impl From<FedPath> for Vec<Vec<usize>> {
    fn from(p: FedPath) -> Self {
        p.rounds
    }
}

/// A path given either explicitly or as `rounds=R clients=C path=all|round-robin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathExpression {
    pub path: FedPath,
    /// Declared client count, when the expression gave one.
    pub clients: Option<usize>,
}

impl FromStr for PathExpression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lead = s.len() - s.trim_start().len();
        if s.trim_start().starts_with('[') {
            return FedPath::from_str(s).map(|path| PathExpression { path, clients: None });
        }
        let mut rounds = None;
        let mut clients = None;
        let mut kind = None;
        let mut pos = lead;
        for token in s.split_whitespace() {
            let at = s[pos..].find(token).map_or(pos, |o| pos + o);
            pos = at + token.len();
            let err = |reason: String| Error::Parse { position: at, reason };
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{token}`")))?;
            let count = || {
                value
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| err(format!("`{key}` needs a positive integer")))
            };
            match key {
                "rounds" => rounds = Some(count()?),
                "clients" => clients = Some(count()?),
                "path" => match value {
                    "all" | "round-robin" => kind = Some(value),
                    _ => return Err(err(format!("unknown path kind `{value}` (all | round-robin)"))),
                },
                _ => return Err(err(format!("unknown key `{key}` (rounds, clients, path)"))),
            }
        }
        let missing = |what: &str| Error::Parse {
            position: s.len(),
            reason: format!("missing `{what}=`"),
        };
        let rounds = rounds.ok_or_else(|| missing("rounds"))?;
        let n = clients.ok_or_else(|| missing("clients"))?;
        let path = match kind.unwrap_or("all") {
            "all" => FedPath::all_every_round(n, rounds)?,
            _ => FedPath::round_robin(n, rounds)?,
        };
        Ok(PathExpression {
            path,
            clients: Some(n),
        })
    }
}

/// `sum_j 1/m_j` over the distinct clients of `path`, in client-id order.
pub fn f_d(path: &FedPath) -> f64 {
    path.frequencies().values().map(|&m| 1.0 / m as f64).sum()
}

/// A reference range for min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledMeasure {
    #[serde(with = "measure_string")]
    pub measure: Measure,
    pub min: f64,
    pub max: f64,
}

/// How one profile collapses into one scalar `x_i`.
///
/// Serialized as its string form, e.g. `"heterogeneity"` or
/// `"norm(heterogeneity=0..8;intrinsic_dim=0..20)"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AggregationSpec {
    /// The raw value of one measure.
    Single(Measure),
    /// Euclidean norm of min-max scaled measures, each clamped to `[0, 1]`.
    NormalizedNorm(Vec<ScaledMeasure>),
}

impl Default for AggregationSpec {
    fn default() -> Self {
        AggregationSpec::Single(Measure::Heterogeneity)
    }
}

impl AggregationSpec {
    pub fn validate(&self) -> Result<()> {
        if let AggregationSpec::NormalizedNorm(parts) = self {
            if parts.is_empty() {
                return Err(Error::invalid("normalized-norm needs at least one measure"));
            }
            for p in parts {
                if !p.min.is_finite() || !p.max.is_finite() || p.max <= p.min {
                    return Err(Error::invalid(format!(
                        "reference range for {} must have max > min, got [{}, {}]",
                        p.measure, p.min, p.max
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn measures(&self) -> Vec<Measure> {
        match self {
            AggregationSpec::Single(m) => vec![*m],
            AggregationSpec::NormalizedNorm(parts) => parts.iter().map(|p| p.measure).collect(),
        }
    }

    /// Combine already-computed measure values (in [`Self::measures`] order).
    pub fn combine(&self, values: &[f64]) -> Result<f64> {
        self.validate()?;
        match self {
            AggregationSpec::Single(_) => Ok(values[0]),
            AggregationSpec::NormalizedNorm(parts) => Ok(parts
                .iter()
                .zip(values)
                .map(|(p, &v)| {
                    let s = ((v - p.min) / (p.max - p.min)).clamp(0.0, 1.0);
                    s * s
                })
                .sum::<f64>()
                .sqrt()),
        }
    }
}

impl fmt::Display for AggregationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationSpec::Single(m) => write!(f, "{m}"),
            AggregationSpec::NormalizedNorm(parts) => {
                write!(f, "norm(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{}={}..{}", p.measure, p.min, p.max)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for AggregationSpec {
    type Err = Error;

    /// `heterogeneity`, or `norm(heterogeneity=0..8;sparsity:0.8=0..784)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let Some(inner) = s.strip_prefix("norm(").and_then(|r| r.strip_suffix(')')) else {
            return Ok(AggregationSpec::Single(s.parse()?));
        };
        let parts = inner
            .split(';')
            .map(|part| {
                let bad = || Error::invalid(format!("expected measure=min..max, got `{part}`"));
                let (m, range) = part.rsplit_once('=').ok_or_else(bad)?;
                let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
                Ok(ScaledMeasure {
                    measure: m.parse()?,
                    min: lo.trim().parse().map_err(|_| bad())?,
                    max: hi.trim().parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = AggregationSpec::NormalizedNorm(parts);
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for AggregationSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AggregationSpec> for String {
    fn from(a: AggregationSpec) -> String {
        a.to_string()
    }
}

mod measure_string {
    use super::Measure;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Measure, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(m)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Measure, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

/// Collapse one dataset profile into its scalar `x_i`.
pub fn aggregate_intrinsic(profile: &ComplexityProfile, spec: &AggregationSpec) -> Result<f64> {
    let values = spec
        .measures()
        .iter()
        .map(|m| {
            profile
                .measure(m)
                .ok_or_else(|| Error::MissingMeasure(m.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    spec.combine(&values)
}

/// Per-entity intrinsic complexities with the rule that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicVector {
    x: Vec<f64>,
    spec: AggregationSpec,
    beta: f64,
}

impl IntrinsicVector {
    pub fn new(x: Vec<f64>, spec: AggregationSpec, beta: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("intrinsic vector must not be empty"));
        }
        if let Some(v) = x.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("intrinsic components must be finite and >= 0, got {v}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self { x, spec, beta })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn spec(&self) -> &AggregationSpec {
        &self.spec
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `beta * sqrt(sum x_i^2)`.
pub fn f_x(x: &IntrinsicVector) -> f64 {
    x.beta * x.x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub f_x: f64,
    pub f_d: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

/// `F = f(X) + f(d)`; one intrinsic component per distinct client.
pub fn combined_f(x: &IntrinsicVector, path: &FedPath) -> Result<ComplexityScore> {
    if x.len() != path.distinct() {
        return Err(Error::DimensionMismatch(format!(
            "{} intrinsic components but the path has {} distinct clients",
            x.len(),
            path.distinct()
        )));
    }
    let fx = f_x(x);
    let fd = f_d(path);
    Ok(ComplexityScore {
        f_x: fx,
        f_d: fd,
        f: fx + fd,
    })
}

/// Which client sets a round may use during enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumerationPolicy {
    /// Every non-empty subset.
    AllSubsets,
    /// Every subset of exactly this size.
    FixedSize(usize),
    /// One client per round.
    Singleton,
}

impl FromStr for EnumerationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all-subsets" => Ok(Self::AllSubsets),
            "singleton" => Ok(Self::Singleton),
            other => other
                .strip_prefix("fixed-size:")
                .and_then(|v| v.parse().ok())
                .map(Self::FixedSize)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown policy `{other}` (all-subsets | fixed-size:<s> | singleton)"
                    ))
                }),
        }
    }
}

impl fmt::Display for EnumerationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AllSubsets => write!(f, "all-subsets"),
            Self::FixedSize(s) => write!(f, "fixed-size:{s}"),
            Self::Singleton => write!(f, "singleton"),
        }
    }
}

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn round_choices(n: usize, policy: EnumerationPolicy) -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = match policy {
        EnumerationPolicy::Singleton => (0..n).map(|c| vec![c]).collect(),
        _ => (1u64..(1 << n))
            .map(|mask| (0..n).filter(|&c| mask >> c & 1 == 1).collect::<Vec<_>>())
            .filter(|set| match policy {
                EnumerationPolicy::FixedSize(s) => set.len() == s,
                _ => true,
            })
            .collect(),
    };
    sets.sort();
    sets
}

/// Every path of `rounds` rounds over `n_entities` clients under `policy`,
/// in lexicographic order. Fails when the count would exceed `cap`.
pub fn enumerate_paths(
    n_entities: usize,
    rounds: usize,
    policy: EnumerationPolicy,
    cap: u64,
) -> Result<Vec<FedPath>> {
    if n_entities == 0 || rounds == 0 {
        return Err(Error::invalid("need at least one entity and one round"));
    }
    let per_round: u128 = match policy {
        EnumerationPolicy::AllSubsets => {
            if n_entities >= 128 {
                u128::MAX
            } else {
                (1u128 << n_entities) - 1
            }
        }
        EnumerationPolicy::FixedSize(s) => {
            if s == 0 || s > n_entities {
                return Err(Error::invalid(format!(
                    "fixed size must be in 1..={n_entities}, got {s}"
                )));
            }
            binomial(n_entities, s)
        }
        EnumerationPolicy::Singleton => n_entities as u128,
    };
    let required = u32::try_from(rounds)
        .ok()
        .and_then(|r| per_round.checked_pow(r))
        .unwrap_or(u128::MAX);
    if required > cap as u128 {
        return Err(Error::CapExceeded { required, cap });
    }
    let choices = round_choices(n_entities, policy);
    let mut digits = vec![0usize; rounds];
    let mut out = Vec::with_capacity(required as usize);
    loop {
        out.push(FedPath::new(digits.iter().map(|&c| choices[c].clone()).collect())?);
        let mut pos = rounds;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < choices.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

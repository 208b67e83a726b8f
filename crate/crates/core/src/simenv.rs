//! Synthetic environments and exact evaluators.
//!
//! A [`GroundTruthModel`] assigns a deterministic return to every dropout
//! subset. Oracles built from it add Gaussian noise per episode. Exact
//! expected returns enumerate all `2^n` dropout masks, which makes the module
//! the reference against which the second-order approximation is checked.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EpisodeOracle;
use crate::model::{pair_count, pair_index, BackupConfig, DropoutVector, PairReturnTable, ProblemInstance};

/// Largest sensor count accepted by the exhaustive evaluators.
pub const EXACT_LIMIT: usize = 20;

/// Dropout probability used by the knapsack reduction.
pub const KNAPSACK_EPSILON: f64 = 1e-6;

/// Generator for stream `stream` of master seed `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Valuation of dropout masks with more than two sensors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extension {
    /// `r0 - sum_i D_i - sum_{i<j} (D_ij - D_i - D_j)` where `D` are the
    /// deficits `r0 - R` of the stored singles and pairs.
    #[default]
    AdditiveDeficit,
    /// Worst stored pair return inside the mask.
    MinPair,
    /// Additive deficit clamped to the range of the stored returns.
    Clipped,
}

impl std::str::FromStr for Extension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive-deficit" => Ok(Self::AdditiveDeficit),
            "min-pair" => Ok(Self::MinPair),
            "clipped" => Ok(Self::Clipped),
            other => Err(Error::InvalidValue(format!("unknown extension rule {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairValue {
    pub i: usize,
    pub j: usize,
    pub r: f64,
}

/// Additive correction applied to every mask of size >= 3 containing `{i, j, k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleValue {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSigma {
    pub i: usize,
    pub j: usize,
    pub sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    n: usize,
    r0: f64,
    singles: Vec<f64>,
    pairs: Vec<PairValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    triples: Vec<TripleValue>,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pair_noise: Vec<PairSigma>,
    #[serde(default)]
    extension: Extension,
}

/// Deterministic return surface over all dropout subsets plus a noise model.
///
/// Masks with at most two sensors return the stored values; larger masks use
/// the [`Extension`] rule plus any triple corrections. `pair_noise` overrides
/// `noise_sigma` for the single and pair masks it lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct GroundTruthModel {
    n: usize,
    r0: f64,
    singles: Vec<f64>,
    /// Pair returns at `pair_index(n, i, j)`, `i < j`; diagonal mirrors singles.
    pairs: Vec<f64>,
    triples: Vec<TripleValue>,
    noise_sigma: f64,
    pair_noise: Vec<Option<f64>>,
    extension: Extension,
    lo: f64,
    hi: f64,
}

impl TryFrom<ModelRecord> for GroundTruthModel {
    type Error = Error;

    fn try_from(rec: ModelRecord) -> Result<Self> {
        let n = rec.n;
        if n == 0 || n > 63 {
            return Err(Error::InvalidValue(format!("model sensor count {n} not in 1..=63")));
        }
        if rec.singles.len() != n {
            return Err(Error::DimensionMismatch {
                what: "singles",
                expected: n,
                got: rec.singles.len(),
            });
        }
        let mut pairs = vec![None; pair_count(n)];
        for (i, &r) in rec.singles.iter().enumerate() {
            pairs[pair_index(n, i, i)] = Some(r);
        }
        for p in &rec.pairs {
            if !(p.i < p.j && p.j < n) {
                return Err(Error::InvalidValue(format!(
                    "model pair ({}, {}) must satisfy i < j < n",
                    p.i, p.j
                )));
            }
            if pairs[pair_index(n, p.i, p.j)].replace(p.r).is_some() {
                return Err(Error::InvalidValue(format!("duplicate model pair ({}, {})", p.i, p.j)));
            }
        }
        let pairs = pairs
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::IncompleteTable("model is missing pair returns".into()))?;
        for t in &rec.triples {
            if !(t.i < t.j && t.j < t.k && t.k < n) {
                return Err(Error::InvalidValue(format!(
                    "triple ({}, {}, {}) must satisfy i < j < k < n",
                    t.i, t.j, t.k
                )));
            }
        }
        let mut noise = vec![None; pair_count(n)];
        for s in &rec.pair_noise {
            if !(s.i <= s.j && s.j < n) || s.sigma < 0.0 {
                return Err(Error::InvalidValue(format!(
                    "pair noise ({}, {}, {}) invalid",
                    s.i, s.j, s.sigma
                )));
            }
            noise[pair_index(n, s.i, s.j)] = Some(s.sigma);
        }
        if !(rec.noise_sigma >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "noise_sigma = {} must be >= 0",
                rec.noise_sigma
            )));
        }
        let all = std::iter::once(rec.r0).chain(pairs.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        Ok(Self {
            n,
            r0: rec.r0,
            singles: rec.singles,
            pairs,
            triples: rec.triples,
            noise_sigma: rec.noise_sigma,
            pair_noise: noise,
            extension: rec.extension,
            lo,
            hi,
        })
    }
}

impl From<GroundTruthModel> for ModelRecord {
    fn from(m: GroundTruthModel) -> Self {
        let n = m.n;
        ModelRecord {
            n,
            r0: m.r0,
            singles: m.singles.clone(),
            pairs: (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| PairValue {
                    i,
                    j,
                    r: m.pairs[pair_index(n, i, j)],
                })
                .collect(),
            triples: m.triples.clone(),
            noise_sigma: m.noise_sigma,
            pair_noise: crate::model::pairs(n)
                .filter_map(|(i, j)| {
                    m.pair_noise[pair_index(n, i, j)].map(|sigma| PairSigma { i, j, sigma })
                })
                .collect(),
            extension: m.extension,
        }
    }
}

impl GroundTruthModel {
    /// Model whose masks of size <= 2 reproduce `table` exactly.
    pub fn from_table(table: &PairReturnTable, noise_sigma: f64, extension: Extension) -> Result<Self> {
        let n = table.n();
        ModelRecord {
            n,
            r0: table.r0(),
            singles: (0..n).map(|i| table.get(i, i)).collect(),
            pairs: (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| PairValue { i, j, r: table.get(i, j) })
                .collect(),
            triples: Vec::new(),
            noise_sigma,
            pair_noise: Vec::new(),
            extension,
        }
        .try_into()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    pub fn triples(&self) -> &[TripleValue] {
        &self.triples
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }

    /// Same model without any noise.
    pub fn noiseless(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.pair_noise.iter_mut().for_each(|s| *s = None);
        self
    }

    /// True returns of the single and pair masks as a table.
    pub fn pair_table(&self) -> PairReturnTable {
        PairReturnTable::new(self.n, self.r0, self.pairs.clone()).expect("complete by construction")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn to_mask(&self, dropout: &[usize]) -> Result<u64> {
        let mut mask = 0u64;
        for &i in dropout {
            if i >= self.n {
                return Err(Error::InvalidValue(format!(
                    "dropout index {i} out of range for n = {}",
                    self.n
                )));
            }
            mask |= 1 << i;
        }
        Ok(mask)
    }

    /// Deterministic return with the listed sensors dropped.
    pub fn model_return(&self, dropout: &[usize]) -> Result<f64> {
        Ok(self.mask_return(self.to_mask(dropout)?))
    }

    /// Return for a bit mask of dropped sensors (bit `i` = sensor `i`).
    pub fn mask_return(&self, mask: u64) -> f64 {
        let n = self.n;
        let dropped: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        match dropped.as_slice() {
            [] => return self.r0,
            [i] => return self.singles[*i],
            [i, j] => return self.pairs[pair_index(n, *i, *j)],
            _ => {}
        }
        let base = match self.extension {
            Extension::AdditiveDeficit | Extension::Clipped => self.additive_deficit(&dropped),
            Extension::MinPair => {
                let mut worst = f64::INFINITY;
                for (a, &i) in dropped.iter().enumerate() {
                    for &j in &dropped[a + 1..] {
                        worst = worst.min(self.pairs[pair_index(n, i, j)]);
                    }
                }
                worst
            }
        };
        let mut value = base;
        for t in &self.triples {
            let tm = (1u64 << t.i) | (1u64 << t.j) | (1u64 << t.k);
            if mask & tm == tm {
                value += t.r;
            }
        }
        if self.extension == Extension::Clipped {
            value = value.clamp(self.lo, self.hi);
        }
        value
    }

    fn additive_deficit(&self, dropped: &[usize]) -> f64 {
        let n = self.n;
        let deficit = |i: usize| self.r0 - self.singles[i];
        let mut value = self.r0;
        for &i in dropped {
            value -= deficit(i);
        }
        for (a, &i) in dropped.iter().enumerate() {
            for &j in &dropped[a + 1..] {
                let dij = self.r0 - self.pairs[pair_index(n, i, j)];
                value -= dij - deficit(i) - deficit(j);
            }
        }
        value
    }

    /// Per-episode noise scale for a dropout mask.
    pub fn sigma_for(&self, dropout: &[usize]) -> f64 {
        let n = self.n;
        let over = match dropout {
            [i] => self.pair_noise[pair_index(n, *i, *i)],
            [i, j] => {
                let (a, b) = if i <= j { (*i, *j) } else { (*j, *i) };
                self.pair_noise[pair_index(n, a, b)]
            }
            _ => None,
        };
        over.unwrap_or(self.noise_sigma)
    }
}

/// Episode oracle over a ground-truth model: `model_return(mask)` plus
/// Gaussian noise with the mask's sigma. Deterministic per seed.
#[derive(Clone, Debug)]
pub struct ModelOracle {
    model: GroundTruthModel,
    rng: ChaCha8Rng,
    calls: u64,
}

impl ModelOracle {
    pub fn new(model: GroundTruthModel, seed: u64) -> Self {
        Self {
            model,
            rng: seeded_rng(seed, 2),
            calls: 0,
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn model(&self) -> &GroundTruthModel {
        &self.model
    }
}

/// Builds a seeded oracle over `model`.
pub fn make_oracle(model: &GroundTruthModel, seed: u64) -> ModelOracle {
    ModelOracle::new(model.clone(), seed)
}

impl EpisodeOracle for ModelOracle {
    fn sensors(&self) -> usize {
        self.model.n
    }

    fn sample(&mut self, dropout: &[usize]) -> Result<f64> {
        self.calls += 1;
        let mean = self.model.model_return(dropout)?;
        let sigma = self.model.sigma_for(dropout);
        if sigma == 0.0 {
            return Ok(mean);
        }
        let normal = Normal::new(mean, sigma).map_err(|e| Error::Oracle(e.to_string()))?;
        Ok(normal.sample(&mut self.rng))
    }
}

/// Probability of exactly the sensors in `mask` dropping out.
pub fn mask_probability(d: &DropoutVector, mask: u64) -> f64 {
    d.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &p)| if mask >> i & 1 == 1 { p } else { 1.0 - p })
        .product()
}

/// Model returns of all `2^n` dropout masks, indexed by mask.
#[derive(Clone, Debug)]
pub struct ReturnSurface {
    n: usize,
    values: Vec<f64>,
}

impl ReturnSurface {
    pub fn new(model: &GroundTruthModel) -> Result<Self> {
        if model.n > EXACT_LIMIT {
            return Err(Error::TooLarge {
                size: model.n,
                limit: EXACT_LIMIT,
            });
        }
        let values = (0..1u64 << model.n).map(|m| model.mask_return(m)).collect();
        Ok(Self { n: model.n, values })
    }

    /// Expectation of the surface when sensor `i` drops independently with
    /// probability `p_i`, contracting one sensor at a time.
    pub fn expectation(&self, p: &DropoutVector) -> Result<f64> {
        if p.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "dropout vector",
                expected: self.n,
                got: p.len(),
            });
        }
        let mut v = self.values.clone();
        let mut len = v.len();
        for &pi in p.as_slice() {
            len /= 2;
            for k in 0..len {
                v[k] = (1.0 - pi) * v[2 * k] + pi * v[2 * k + 1];
            }
        }
        Ok(v[0])
    }
}

/// Exact expected return under configuration `x`: the model return averaged
/// over all dropout masks drawn at episode start with probabilities `d^x`.
pub fn exact_expected_return(model: &GroundTruthModel, d: &DropoutVector, x: &BackupConfig) -> Result<f64> {
    ReturnSurface::new(model)?.expectation(&d.apply_backups(x)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
    /// False when fewer than two episodes were drawn; `std_error` is then 0.
    pub std_error_defined: bool,
}

/// Monte Carlo estimate of the expected return under `x`: each episode draws
/// a dropout mask from `d^x` and queries the oracle once.
pub fn monte_carlo_expected_return(
    oracle: &mut impl EpisodeOracle,
    d: &DropoutVector,
    x: &BackupConfig,
    episodes: usize,
    seed: u64,
) -> Result<McEstimate> {
    if episodes == 0 {
        return Err(Error::InvalidValue("episodes must be >= 1".into()));
    }
    let p = d.apply_backups(x)?;
    let mut rng = seeded_rng(seed, 3);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut dropout = Vec::with_capacity(p.len());
    for _ in 0..episodes {
        dropout.clear();
        for (i, &pi) in p.as_slice().iter().enumerate() {
            if rng.random::<f64>() < pi {
                dropout.push(i);
            }
        }
        let r = oracle.sample(&dropout)?;
        sum += r;
        sum_sq += r * r;
    }
    let k = episodes as f64;
    let mean = sum / k;
    if episodes < 2 {
        return Ok(McEstimate {
            mean,
            std_error: 0.0,
            episodes,
            std_error_defined: false,
        });
    }
    let var = ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / k).sqrt(),
        episodes,
        std_error_defined: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestConfig {
    pub config: BackupConfig,
    pub value: f64,
    pub cost: u64,
}

/// Exhaustive optimum over all configurations within the cost budget; ties
/// (relative tolerance 1e-12) go to the lower cost, then the lower rank key.
pub fn brute_force_best_config(model: &GroundTruthModel, instance: &ProblemInstance) -> Result<BestConfig> {
    if model.n != instance.n {
        return Err(Error::DimensionMismatch {
            what: "model sensors",
            expected: instance.n,
            got: model.n,
        });
    }
    let surface = ReturnSurface::new(model)?;
    let n = instance.n;
    let mut best: Option<BestConfig> = None;
    for mask in 0..1u64 << n {
        let x = BackupConfig::from_mask(n, mask);
        let cost = instance.config_cost(&x)?;
        if cost > instance.budget {
            continue;
        }
        let value = surface.expectation(&instance.d.apply_backups(&x)?)?;
        let wins = match &best {
            None => true,
            Some(b) => {
                let tol = 1e-12 * value.abs().max(b.value.abs()).max(1.0);
                value > b.value + tol
                    || ((value - b.value).abs() <= tol
                        && (cost < b.cost || (cost == b.cost && x.rank_key() < b.config.rank_key())))
            }
        };
        if wins {
            best = Some(BestConfig { config: x, value, cost });
        }
    }
    Ok(best.expect("the empty configuration is always feasible"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnapsackInstance {
    pub values: Vec<f64>,
    pub costs: Vec<u64>,
    pub capacity: u64,
}

impl KnapsackInstance {
    pub fn new(values: Vec<f64>, costs: Vec<u64>, capacity: u64) -> Result<Self> {
        if values.len() != costs.len() {
            return Err(Error::DimensionMismatch {
                what: "knapsack costs",
                expected: values.len(),
                got: costs.len(),
            });
        }
        if values.iter().any(|&v| !(v > 0.0)) || costs.contains(&0) || capacity == 0 {
            return Err(Error::InvalidValue(
                "knapsack values, costs and capacity must be positive".into(),
            ));
        }
        Ok(Self {
            values,
            costs,
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_i x_i v_i`.
    pub fn value_of(&self, x: &BackupConfig) -> f64 {
        x.bits()
            .iter()
            .zip(&self.values)
            .filter(|(&b, _)| b)
            .map(|(_, v)| v)
            .sum()
    }

    /// Random instance with integer values in `1..=30` and costs in
    /// `1..=max_cost`.
    pub fn random(n: usize, max_cost: u64, capacity: u64, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed, 4);
        let values = (0..n).map(|_| rng.random_range(1..=30) as f64).collect();
        let costs = (0..n).map(|_| rng.random_range(1..=max_cost)).collect();
        Self::new(values, costs, capacity)
    }
}

/// Reduction of a knapsack to a backup-planning instance.
///
/// Every sensor drops with probability `epsilon` and losing sensor `i` costs
/// `v_i` of return, additively for any mask. The exact expected return under
/// `x` is then `r0 - epsilon sum v + (epsilon - epsilon^2) sum_i x_i v_i`, so
/// the best configuration is the best knapsack packing.
pub fn knapsack_to_instance(kp: &KnapsackInstance, epsilon: f64) -> Result<(ProblemInstance, GroundTruthModel)> {
    let n = kp.len();
    if n == 0 {
        return Err(Error::InvalidValue("knapsack reduction needs at least one item".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidValue(format!("epsilon = {epsilon} must be in (0, 1)")));
    }
    let instance = crate::model::validate_instance(crate::model::InstanceRecord {
        n,
        d: vec![epsilon; n],
        c: kp.costs.iter().map(|&c| c as i64).collect(),
        budget: kp.capacity as i64,
        episodes: (n * (n + 1)) as i64,
        beta: 1.0,
        seed: 0,
    })?;
    let r0: f64 = kp.values.iter().sum();
    let table = PairReturnTable::from_fn(n, r0, |i, j| {
        if i == j {
            r0 - kp.values[i]
        } else {
            r0 - kp.values[i] - kp.values[j]
        }
    })?;
    let model = GroundTruthModel::from_table(&table, 0.0, Extension::AdditiveDeficit)?;
    Ok((instance, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnapsackSolution {
    pub value: f64,
    pub items: Vec<usize>,
}

const KNAPSACK_DP_LIMIT: u64 = 100_000_000;

/// Classic `O(n C)` dynamic program over capacities.
pub fn knapsack_dp(kp: &KnapsackInstance) -> Result<KnapsackSolution> {
    let n = kp.len();
    let cap = kp.capacity;
    if (n as u64 + 1).saturating_mul(cap + 1) > KNAPSACK_DP_LIMIT {
        return Err(Error::TooLarge {
            size: (n as u64 * cap) as usize,
            limit: KNAPSACK_DP_LIMIT as usize,
        });
    }
    let width = cap as usize + 1;
    // best[k][c]: best value using the first k items within capacity c.
    let mut best = vec![0.0f64; (n + 1) * width];
    for k in 1..=n {
        let (v, w) = (kp.values[k - 1], kp.costs[k - 1] as usize);
        for c in 0..width {
            let skip = best[(k - 1) * width + c];
            let take = if w <= c { best[(k - 1) * width + c - w] + v } else { f64::NEG_INFINITY };
            best[k * width + c] = skip.max(take);
        }
    }
    let mut items = Vec::new();
    let mut c = width - 1;
    for k in (1..=n).rev() {
        if best[k * width + c] != best[(k - 1) * width + c] {
            items.push(k - 1);
            c -= kp.costs[k - 1] as usize;
        }
    }
    items.reverse();
    Ok(KnapsackSolution {
        value: best[n * width + width - 1],
        items,
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when the
/// inputs differ in length, have fewer than two points, or one is constant.
pub fn spearman_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Parameters of the random model generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n: usize,
    pub r0: f64,
    /// Single-dropout deficits are drawn from `[0, penalty_scale)`.
    pub penalty_scale: f64,
    /// Extra pair deficits beyond the two singles, drawn from `[0, interaction_scale)`.
    pub interaction_scale: f64,
    /// Triple corrections drawn from `[-triple_scale, triple_scale)`; zero
    /// gives a pairwise-only model.
    pub triple_scale: f64,
    pub noise_sigma: f64,
    /// When non-empty, every single and pair mask gets a sigma drawn
    /// uniformly from this set.
    pub pair_sigma_choices: Vec<f64>,
    pub extension: Extension,
}

impl ModelSpec {
    pub fn pairwise(n: usize) -> Self {
        Self {
            n,
            r0: 100.0,
            penalty_scale: 30.0,
            interaction_scale: 10.0,
            triple_scale: 0.0,
            noise_sigma: 0.0,
            pair_sigma_choices: Vec::new(),
            extension: Extension::AdditiveDeficit,
        }
    }
}

/// Draws a model from `spec`; deterministic per seed.
pub fn generate_model(spec: &ModelSpec, seed: u64) -> Result<GroundTruthModel> {
    let n = spec.n;
    if n == 0 {
        return Err(Error::InvalidValue("model needs at least one sensor".into()));
    }
    if spec.penalty_scale < 0.0 || spec.interaction_scale < 0.0 || spec.triple_scale < 0.0 {
        return Err(Error::InvalidValue("model scales must be non-negative".into()));
    }
    let mut rng = seeded_rng(seed, 0);
    let deficits: Vec<f64> = (0..n).map(|_| spec.penalty_scale * rng.random::<f64>()).collect();
    let singles: Vec<f64> = deficits.iter().map(|d| spec.r0 - d).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let extra = spec.interaction_scale * rng.random::<f64>();
            pairs.push(PairValue {
                i,
                j,
                r: spec.r0 - deficits[i] - deficits[j] - extra,
            });
        }
    }
    let mut triples = Vec::new();
    if spec.triple_scale > 0.0 {
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let r = spec.triple_scale * (2.0 * rng.random::<f64>() - 1.0);
                    triples.push(TripleValue { i, j, k, r });
                }
            }
        }
    }
    let pair_noise = if spec.pair_sigma_choices.is_empty() {
        Vec::new()
    } else {
        crate::model::pairs(n)
            .map(|(i, j)| PairSigma {
                i,
                j,
                sigma: spec.pair_sigma_choices[rng.random_range(0..spec.pair_sigma_choices.len())],
            })
            .collect()
    };
    ModelRecord {
        n,
        r0: spec.r0,
        singles,
        pairs,
        triples,
        noise_sigma: spec.noise_sigma,
        pair_noise,
        extension: spec.extension,
    }
    .try_into()
}

/// Parameters of the random instance generator. Dropout probabilities and
/// costs are drawn uniformly from fixed sets; the cost budget uniformly from
/// the integers in `[budget_fraction.0, budget_fraction.1] * sum(c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub d_choices: Vec<f64>,
    pub max_cost: u64,
    pub budget_fraction: (f64, f64),
    pub beta: f64,
    /// Defaults to `10 * n(n+1)/2` when absent.
    pub episodes: Option<u64>,
}

impl InstanceSpec {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            d_choices: vec![0.05, 0.075, 0.1, 0.125, 0.15],
            max_cost: 10,
            budget_fraction: (0.3, 0.6),
            beta: 1.0,
            episodes: None,
        }
    }
}

pub fn generate_instance(spec: &InstanceSpec, seed: u64) -> Result<ProblemInstance> {
    let n = spec.n;
    if spec.d_choices.is_empty() || spec.max_cost == 0 {
        return Err(Error::InvalidValue("instance spec needs dropout choices and max_cost >= 1".into()));
    }
    let (lo, hi) = spec.budget_fraction;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::InvalidValue(format!("invalid budget fraction range ({lo}, {hi})")));
    }
    let mut rng = seeded_rng(seed, 1);
    let d: Vec<f64> = (0..n)
        .map(|_| spec.d_choices[rng.random_range(0..spec.d_choices.len())])
        .collect();
    let c: Vec<i64> = (0..n).map(|_| rng.random_range(1..=spec.max_cost) as i64).collect();
    let total: i64 = c.iter().sum();
    let cmin = ((lo * total as f64).ceil() as i64).max(1);
    let cmax = ((hi * total as f64).floor() as i64).max(cmin);
    let budget = rng.random_range(cmin..=cmax);
    crate::model::validate_instance(crate::model::InstanceRecord {
        n,
        d,
        c,
        budget,
        episodes: spec.episodes.unwrap_or(5 * (n * (n + 1)) as u64) as i64,
        beta: spec.beta,
        seed,
    })
}

/// The five-sensor proof-of-concept instance.
pub fn table1_instance() -> ProblemInstance {
    crate::model::validate_instance(crate::model::InstanceRecord {
        n: 5,
        d: vec![0.09, 0.08, 0.1, 0.085, 0.095],
        c: vec![4, 5, 3, 4, 2],
        budget: 390,
        episodes: 150,
        beta: 1.0,
        seed: 0,
    })
    .expect("fixture is valid")
}

/// Returns of the proof-of-concept instance: `R0 = 10` and the pair map.
pub fn table1_model() -> GroundTruthModel {
    const R: [[f64; 5]; 5] = [
        [9., 4., 1., 4., 5.],
        [4., 9., 3., 5., 3.],
        [1., 3., 7., 3., 2.],
        [4., 5., 3., 8., 4.],
        [5., 3., 2., 4., 8.],
    ];
    let table = PairReturnTable::from_fn(5, 10.0, |i, j| R[i][j]).expect("fixture is valid");
    GroundTruthModel::from_table(&table, 0.0, Extension::AdditiveDeficit).expect("fixture is valid")
}

/// Episode oracle speaking line-delimited JSON over a pair of streams.
///
/// The peer first sends `{"n": <sensors>}`. Each sample writes
/// `{"dropout": [indices]}` and expects `{"return": <float>}` within the
/// timeout. Any timeout or malformed line ends the session.
pub struct JsonLinesOracle {
    n: usize,
    lines: Receiver<std::io::Result<String>>,
    writer: Box<dyn Write + Send>,
    timeout: Duration,
    closed: bool,
    child: Option<Child>,
}

#[derive(Deserialize)]
struct Handshake {
    n: usize,
}

#[derive(Serialize)]
struct Request<'a> {
    dropout: &'a [usize],
}

#[derive(Deserialize)]
struct Response {
    #[serde(rename = "return")]
    value: f64,
}

impl JsonLinesOracle {
    pub fn new(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut oracle = Self {
            n: 0,
            lines: rx,
            writer: Box::new(writer),
            timeout,
            closed: false,
            child: None,
        };
        let hello: Handshake = oracle.read_message("handshake")?;
        if hello.n == 0 {
            return Err(Error::Oracle("handshake reports zero sensors".into()));
        }
        oracle.n = hello.n;
        Ok(oracle)
    }

    /// Runs `command` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Oracle(format!("cannot spawn {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        match Self::new(stdout, stdin, timeout) {
            Ok(mut o) => {
                o.child = Some(child);
                Ok(o)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    fn fail<T>(&mut self, message: String) -> Result<T> {
        self.closed = true;
        Err(Error::Oracle(message))
    }

    fn read_message<T: for<'de> Deserialize<'de>>(&mut self, what: &str) -> Result<T> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return self.fail(format!("reading {what}: {e}")),
            Err(RecvTimeoutError::Timeout) => {
                return self.fail(format!("timed out after {:?} waiting for {what}", self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return self.fail(format!("oracle closed its output before {what}"))
            }
        };
        match serde_json::from_str(&line) {
            Ok(v) => Ok(v),
            Err(e) => self.fail(format!("malformed {what} line {line:?}: {e}")),
        }
    }
}

impl EpisodeOracle for JsonLinesOracle {
    fn sensors(&self) -> usize {
        self.n
    }

    fn sample(&mut self, dropout: &[usize]) -> Result<f64> {
        if self.closed {
            return Err(Error::Oracle("oracle session already terminated".into()));
        }
        if let Some(&bad) = dropout.iter().find(|&&i| i >= self.n) {
            return Err(Error::InvalidValue(format!(
                "dropout index {bad} out of range for n = {}",
                self.n
            )));
        }
        let mut line = serde_json::to_string(&Request { dropout })?;
        line.push('\n');
        if let Err(e) = self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush()) {
            return self.fail(format!("writing request: {e}"));
        }
        let resp: Response = self.read_message("response")?;
        if !resp.value.is_finite() {
            return self.fail(format!("non-finite return {}", resp.value));
        }
        Ok(resp.value)
    }
}

impl Drop for JsonLinesOracle {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

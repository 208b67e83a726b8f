//! Domain types: problem instances, dropout vectors, backup configurations and
//! pairwise return tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of unordered sensor pairs `(i, j)` with `i <= j`.
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of `(i, j)`, `i <= j < n`, in lexicographic pair order.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * (2 * n - i + 1) / 2 + (j - i)
}

/// All pairs `(i, j)` with `i <= j < n` in lexicographic order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}

/// Per-sensor dropout probabilities, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutVector(Vec<f64>);

impl DropoutVector {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        for (index, &value) in probabilities.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ProbabilityOutOfRange { index, value });
            }
        }
        Ok(Self(probabilities))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Dropout vector after installing backups: a backed-up sensor is lost
    /// only when both copies fail, so its probability becomes `d_i^2`.
    pub fn apply_backups(&self, config: &BackupConfig) -> Result<Self> {
        check_len("backup config", self.len(), config.len())?;
        Ok(Self(
            self.0
                .iter()
                .zip(config.bits())
                .map(|(&d, &x)| if x { d * d } else { d })
                .collect(),
        ))
    }

    /// Same as [`apply_backups`](Self::apply_backups) for an explicit set of
    /// backed-up sensor indices.
    pub fn with_backups(&self, sensors: &[usize]) -> Self {
        let mut out = self.0.clone();
        for &i in sensors {
            out[i] = self.0[i] * self.0[i];
        }
        Self(out)
    }
}

impl Serialize for DropoutVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DropoutVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        DropoutVector::new(v).map_err(serde::de::Error::custom)
    }
}

/// Binary backup decision per sensor; `true` installs a backup.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BackupConfig(Vec<bool>);

impl BackupConfig {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    /// Unit configuration with a single backup on sensor `i`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut bits = vec![false; n];
        bits[i] = true;
        Self(bits)
    }

    /// Configuration whose bit `i` is bit `i` of `mask` (sensor 0 is the
    /// least significant bit).
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Self((0..n).map(|i| mask >> i & 1 == 1).collect())
    }

    /// Inverse of [`from_mask`](Self::from_mask).
    pub fn to_mask(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | (u64::from(b) << i))
    }

    /// Unsigned integer value of the bit vector, sensor `i` worth `2^i`.
    /// Tie-breaking everywhere prefers the lower value; see [`bit_rank_cmp`].
    /// Only meaningful for at most 64 sensors.
    pub fn rank_key(&self) -> u64 {
        self.to_mask()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Indices of sensors with a backup.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Total backup cost `sum_i x_i c_i`.
    pub fn cost(&self, costs: &[u64]) -> Result<u64> {
        check_len("cost vector", self.len(), costs.len())?;
        Ok(self
            .0
            .iter()
            .zip(costs)
            .filter(|(&b, _)| b)
            .map(|(_, &c)| c)
            .sum())
    }
}

/// Orders equal-length bit vectors by their unsigned integer value with bit
/// `i` worth `2^i`, for any length.
pub fn bit_rank_cmp(a: &[bool], b: &[bool]) -> std::cmp::Ordering {
    a.iter().rev().cmp(b.iter().rev())
}

impl fmt::Display for BackupConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BackupConfig {
    type Err = Error;

    /// Accepts either a packed bit string (`"10110"`) or a comma separated
    /// list (`"1,0,1,1,0"`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let tokens: Vec<&str> = if s.contains(',') {
            s.split(',').map(str::trim).collect()
        } else {
            s.split("").filter(|t| !t.is_empty()).collect()
        };
        tokens
            .into_iter()
            .map(|t| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::InvalidValue(format!(
                    "config bit must be 0 or 1, got {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

pub(crate) fn serialize_bits<S: Serializer>(
    bits: &[bool],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(bits.iter().map(|&b| u8::from(b)))
}

pub(crate) fn deserialize_bits<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<Vec<bool>, D::Error> {
    Vec::<u8>::deserialize(d)?
        .into_iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!(
                "bit must be 0 or 1, got {other}"
            ))),
        })
        .collect()
}

impl Serialize for BackupConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_bits(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for BackupConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        deserialize_bits(d).map(Self)
    }
}

/// A validated backup-planning problem.
///
/// Invariants: `d` and `costs` have length `n`; every cost, the cost budget
/// and the episode budget are positive; `episodes >= n(n+1)` so each pair can
/// receive its two initial samples; `beta` lies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRecord", into = "InstanceRecord")]
pub struct ProblemInstance {
    pub n: usize,
    pub d: DropoutVector,
    pub costs: Vec<u64>,
    /// Cost budget `C`.
    pub budget: u64,
    /// Episode budget `B` for pair estimation.
    pub episodes: u64,
    pub beta: f64,
    pub seed: u64,
}

/// Raw instance record as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub n: usize,
    pub d: Vec<f64>,
    pub c: Vec<i64>,
    #[serde(rename = "C")]
    pub budget: i64,
    #[serde(rename = "B")]
    pub episodes: i64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta() -> f64 {
    1.0
}

impl TryFrom<InstanceRecord> for ProblemInstance {
    type Error = Error;

    fn try_from(raw: InstanceRecord) -> Result<Self> {
        validate_instance(raw)
    }
}

impl From<ProblemInstance> for InstanceRecord {
    fn from(p: ProblemInstance) -> Self {
        InstanceRecord {
            n: p.n,
            d: p.d.0,
            c: p.costs.iter().map(|&c| c as i64).collect(),
            budget: p.budget as i64,
            episodes: p.episodes as i64,
            beta: p.beta,
            seed: p.seed,
        }
    }
}

/// Checks every instance invariant and converts the raw record.
pub fn validate_instance(raw: InstanceRecord) -> Result<ProblemInstance> {
    if raw.n == 0 {
        return Err(Error::InvalidValue("sensor count n must be positive".into()));
    }
    check_len("d", raw.n, raw.d.len())?;
    check_len("c", raw.n, raw.c.len())?;
    let d = DropoutVector::new(raw.d)?;
    let costs = raw
        .c
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            u64::try_from(c)
                .ok()
                .filter(|&c| c >= 1)
                .ok_or_else(|| Error::InvalidValue(format!("cost c[{i}] = {c} must be >= 1")))
        })
        .collect::<Result<Vec<_>>>()?;
    if raw.budget < 1 {
        return Err(Error::InvalidValue(format!(
            "cost budget C = {} must be >= 1",
            raw.budget
        )));
    }
    if raw.episodes < 1 {
        return Err(Error::InvalidValue(format!(
            "episode budget B = {} must be >= 1",
            raw.episodes
        )));
    }
    let required = (raw.n * (raw.n + 1)) as u64;
    if (raw.episodes as u64) < required {
        return Err(Error::BudgetTooSmall {
            budget: raw.episodes as u64,
            required,
        });
    }
    if !(0.0..=1.0).contains(&raw.beta) {
        return Err(Error::InvalidValue(format!(
            "beta = {} must be in [0, 1]",
            raw.beta
        )));
    }
    Ok(ProblemInstance {
        n: raw.n,
        d,
        costs,
        budget: raw.budget as u64,
        episodes: raw.episodes as u64,
        beta: raw.beta,
        seed: raw.seed,
    })
}

impl ProblemInstance {
    pub fn config_cost(&self, x: &BackupConfig) -> Result<u64> {
        x.cost(&self.costs)
    }

    pub fn is_feasible(&self, x: &BackupConfig) -> Result<bool> {
        Ok(self.config_cost(x)? <= self.budget)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Estimated returns with no dropout (`r0`) and with each pair `(i, j)`,
/// `i <= j`, dropped; the diagonal holds single-sensor dropouts.
#[derive(Clone, Debug, PartialEq)]
pub struct PairReturnTable {
    n: usize,
    r0: f64,
    values: Vec<f64>,
}

impl PairReturnTable {
    /// `values` must be in lexicographic pair order (see [`pairs`]).
    pub fn new(n: usize, r0: f64, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::IncompleteTable("table needs at least one sensor".into()));
        }
        check_len("pair values", pair_count(n), values.len())?;
        Ok(Self { n, r0, values })
    }

    /// Builds a table by evaluating `f(i, j)` for every pair.
    pub fn from_fn(n: usize, r0: f64, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let values = pairs(n).map(|(i, j)| f(i, j)).collect();
        Self::new(n, r0, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// Return with sensors `i` and `j` dropped; symmetric in its arguments.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.values[pair_index(self.n, a, b)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same table with every return multiplied by `g`.
    pub fn scaled(&self, g: f64) -> Self {
        Self {
            n: self.n,
            r0: self.r0 * g,
            values: self.values.iter().map(|v| v * g).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PairEntry {
    i: usize,
    j: usize,
    r: f64,
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    r0: f64,
    pairs: Vec<PairEntry>,
}

impl Serialize for PairReturnTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TableRecord {
            r0: self.r0,
            pairs: pairs(self.n)
                .zip(&self.values)
                .map(|((i, j), &r)| PairEntry { i, j, r })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PairReturnTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = TableRecord::deserialize(d)?;
        table_from_entries(rec).map_err(serde::de::Error::custom)
    }
}

fn table_from_entries(rec: TableRecord) -> Result<PairReturnTable> {
    let n = rec
        .pairs
        .iter()
        .map(|p| p.i.max(p.j) + 1)
        .max()
        .ok_or_else(|| Error::IncompleteTable("no pair entries".into()))?;
    if rec.pairs.len() != pair_count(n) {
        return Err(Error::IncompleteTable(format!(
            "expected {} pair entries for n = {n}, found {}",
            pair_count(n),
            rec.pairs.len()
        )));
    }
    let mut values = vec![None; pair_count(n)];
    for p in &rec.pairs {
        if p.i > p.j {
            return Err(Error::IncompleteTable(format!(
                "pair ({}, {}) must satisfy i <= j",
                p.i, p.j
            )));
        }
        let slot = &mut values[pair_index(n, p.i, p.j)];
        if slot.replace(p.r).is_some() {
            return Err(Error::IncompleteTable(format!(
                "duplicate pair ({}, {})",
                p.i, p.j
            )));
        }
    }
    let values = values.into_iter().map(|v| v.expect("count checked")).collect();
    PairReturnTable::new(n, rec.r0, values)
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1_record() -> InstanceRecord {
        InstanceRecord {
            n: 5,
            d: vec![0.09, 0.08, 0.1, 0.085, 0.095],
            c: vec![4, 5, 3, 4, 2],
            budget: 390,
            episodes: 150,
            beta: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn pair_index_is_lexicographic_position() {
        for n in 1..9 {
            for (k, (i, j)) in pairs(n).enumerate() {
                assert_eq!(pair_index(n, i, j), k, "n={n} ({i},{j})");
            }
            assert_eq!(pairs(n).count(), pair_count(n));
        }
    }

    #[test]
    fn validate_accepts_table1_and_minimal() {
        let p = validate_instance(table1_record()).unwrap();
        assert_eq!(p.n, 5);
        assert_eq!(p.budget, 390);
        let minimal = InstanceRecord {
            n: 2,
            d: vec![0.0, 0.0],
            c: vec![1, 1],
            budget: 1,
            episodes: 6,
            beta: 1.0,
            seed: 0,
        };
        validate_instance(minimal).unwrap();
    }

    #[test]
    fn validate_rejects_bad_records() {
        let mut r = table1_record();
        r.n = 2;
        r.d = vec![1.2, 0.0];
        r.c = vec![1, 1];
        r.episodes = 6;
        let err = validate_instance(r).unwrap_err();
        assert!(err.to_string().contains("probability out of range"));

        let mut r = table1_record();
        r.c.pop();
        assert!(matches!(
            validate_instance(r),
            Err(Error::DimensionMismatch { .. })
        ));

        let mut r = table1_record();
        r.c[0] = 0;
        assert!(validate_instance(r).is_err());

        let mut r = table1_record();
        r.budget = 0;
        assert!(validate_instance(r).is_err());

        let mut r = table1_record();
        r.episodes = 29;
        assert!(matches!(
            validate_instance(r),
            Err(Error::BudgetTooSmall { required: 30, .. })
        ));

        let mut r = table1_record();
        r.beta = 1.5;
        assert!(validate_instance(r).is_err());
    }

    #[test]
    fn instance_json_uses_external_field_names() {
        let p = validate_instance(table1_record()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        for key in ["n", "d", "c", "C", "B", "beta", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(ProblemInstance::from_json(r#"{"n":2,"d":[0.5,2.0],"c":[1,1],"C":1,"B":6,"beta":1,"seed":0}"#).is_err());
    }

    #[test]
    fn apply_backups_examples() {
        let d = DropoutVector::new(vec![0.2, 0.5, 0.1]).unwrap();
        let x = BackupConfig::new(vec![false, true, false]);
        assert_eq!(d.apply_backups(&x).unwrap().as_slice(), &[0.2, 0.25, 0.1]);
        assert_eq!(d.apply_backups(&BackupConfig::zeros(3)).unwrap(), d);

        let d = DropoutVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(
            d.apply_backups(&BackupConfig::ones(2)).unwrap().as_slice(),
            &[1.0, 0.0]
        );
        assert!(d.apply_backups(&BackupConfig::ones(3)).is_err());
    }

    #[test]
    fn config_cost_examples() {
        let c = [4, 5, 3, 4, 2];
        assert_eq!(BackupConfig::ones(5).cost(&c).unwrap(), 18);
        assert_eq!(BackupConfig::zeros(5).cost(&c).unwrap(), 0);
        let x: BackupConfig = "10100".parse().unwrap();
        assert_eq!(x.cost(&c).unwrap(), 7);
        assert!(BackupConfig::ones(4).cost(&c).is_err());
    }

    #[test]
    fn config_parsing_and_keys() {
        let a: BackupConfig = "1,0,1".parse().unwrap();
        let b: BackupConfig = "101".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "101");
        assert_eq!(a.rank_key(), 0b101);
        assert_eq!(BackupConfig::new(vec![true, false, false]).rank_key(), 1);
        assert_eq!(BackupConfig::new(vec![false, false, true]).rank_key(), 4);
        let (lo, hi) = (vec![true, true, false], vec![false, false, true]);
        assert_eq!(bit_rank_cmp(&lo, &hi), std::cmp::Ordering::Less);
        let mut long_a = vec![false; 70];
        let mut long_b = vec![false; 70];
        long_a[0] = true;
        long_b[69] = true;
        assert_eq!(bit_rank_cmp(&long_a, &long_b), std::cmp::Ordering::Less);
        assert_eq!(BackupConfig::from_mask(3, 0b001).bits(), &[true, false, false]);
        assert!("102".parse::<BackupConfig>().is_err());
    }

    #[test]
    fn table_json_requires_full_coverage() {
        let t = PairReturnTable::from_fn(2, 10.0, |i, j| (i + j) as f64).unwrap();
        let back = PairReturnTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get(1, 0), 1.0);

        let missing = r#"{"r0": 1.0, "pairs": [{"i":0,"j":0,"r":1.0},{"i":1,"j":1,"r":1.0}]}"#;
        assert!(PairReturnTable::from_json(missing).is_err());
        let dup = r#"{"r0": 1.0, "pairs": [{"i":0,"j":0,"r":1.0},{"i":0,"j":0,"r":1.0},{"i":1,"j":1,"r":1.0}]}"#;
        assert!(PairReturnTable::from_json(dup).is_err());
        let lower = r#"{"r0": 1.0, "pairs": [{"i":0,"j":0,"r":1.0},{"i":1,"j":0,"r":1.0},{"i":1,"j":1,"r":1.0}]}"#;
        assert!(PairReturnTable::from_json(lower).is_err());
    }

    fn arb_instance() -> impl Strategy<Value = ProblemInstance> {
        (1usize..8).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..=1.0, n),
                proptest::collection::vec(1i64..1000, n),
                1i64..10_000,
                0i64..1000,
                0.0f64..=1.0,
                any::<u64>(),
            )
                .prop_map(move |(d, c, budget, extra, beta, seed)| {
                    validate_instance(InstanceRecord {
                        n,
                        d,
                        c,
                        budget,
                        episodes: (n * (n + 1)) as i64 + extra,
                        beta,
                        seed,
                    })
                    .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn instance_json_round_trip_is_exact(p in arb_instance()) {
            let back = ProblemInstance::from_json(&p.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn backups_never_increase_dropout(
            (d, mask) in (1usize..12).prop_flat_map(|n| (
                proptest::collection::vec(0.0f64..=1.0, n), 0u64..(1 << n)))
        ) {
            let n = d.len();
            let dv = DropoutVector::new(d).unwrap();
            let out = dv.apply_backups(&BackupConfig::from_mask(n, mask)).unwrap();
            for (o, i) in out.as_slice().iter().zip(dv.as_slice()) {
                prop_assert!(o <= i);
            }
        }

        #[test]
        fn cost_is_additive_on_disjoint_support(
            (c, a, b) in (1usize..16).prop_flat_map(|n| (
                proptest::collection::vec(1u64..100, n), 0u64..(1 << n), 0u64..(1 << n)))
        ) {
            let n = c.len();
            let b = b & !a;
            let x = BackupConfig::from_mask(n, a);
            let y = BackupConfig::from_mask(n, b);
            let xy = BackupConfig::from_mask(n, a | b);
            prop_assert_eq!(xy.cost(&c).unwrap(), x.cost(&c).unwrap() + y.cost(&c).unwrap());
        }
    }
}

//! Second-order return approximation and QUBO assembly.
//!
//! The expected return under a dropout vector `d` is approximated by
//! conditioning on at most two sensors dropping out:
//!
//! ```text
//! q(d)  = P(no dropout) + sum_i P(only i) + sum_{i<j} P(only i, j)
//! R(d)  = [R0 P(none) + sum_i R_ii P(only i) + sum_{i<j} R_ij P(only i, j)] / q(d)
//! ```
//!
//! Backup advantages are differences of `R` at dropout vectors where the
//! backed-up sensors have `d_i` replaced by `d_i^2`. The QUBO minimizes
//! `-H_soft + w * H_hard` where `H_soft` collects single and pairwise
//! advantages, `H_hard = (sum_i c_i x_i + sum_k a_k s_k - C)^2` uses binary
//! slack bits `s_k`, and `w = beta * alpha` with `alpha` the total absolute
//! advantage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{pair_count, pair_index, BackupConfig, DropoutVector, PairReturnTable, ProblemInstance};

/// Probability weights of the dropout events with at most two sensors lost.
#[derive(Clone, Debug)]
pub struct DropoutWeights {
    n: usize,
    /// P(no sensor drops).
    pub none: f64,
    /// P(exactly sensor i drops).
    pub single: Vec<f64>,
    /// P(exactly sensors i and j drop), at `pair_index(n, i, j)` for `i < j`;
    /// diagonal slots are zero.
    pub pair: Vec<f64>,
}

impl DropoutWeights {
    pub fn new(d: &DropoutVector) -> Self {
        let d = d.as_slice();
        let n = d.len();
        let f: Vec<f64> = d.iter().map(|&p| 1.0 - p).collect();
        let mut prefix = vec![1.0; n + 1];
        for k in 0..n {
            prefix[k + 1] = prefix[k] * f[k];
        }
        let mut suffix = vec![1.0; n + 1];
        for k in (0..n).rev() {
            suffix[k] = suffix[k + 1] * f[k];
        }
        let single = (0..n).map(|i| d[i] * prefix[i] * suffix[i + 1]).collect();
        let mut pair = vec![0.0; pair_count(n)];
        for a in 0..n {
            let mut between = 1.0;
            for b in a + 1..n {
                pair[pair_index(n, a, b)] = d[a] * d[b] * prefix[a] * between * suffix[b + 1];
                between *= f[b];
            }
        }
        Self {
            n,
            none: prefix[n],
            single,
            pair,
        }
    }

    pub fn pair_weight(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        debug_assert!(a != b);
        self.pair[pair_index(self.n, a, b)]
    }

    /// Probability that at most two sensors drop out.
    pub fn total(&self) -> f64 {
        let mut q = self.none;
        for w in &self.single {
            q += w;
        }
        for w in &self.pair {
            q += w;
        }
        q
    }

    fn weighted_sum(&self, table: &PairReturnTable) -> f64 {
        let n = self.n;
        let mut acc = table.r0() * self.none;
        for i in 0..n {
            acc += table.get(i, i) * self.single[i];
        }
        for a in 0..n {
            for b in a + 1..n {
                acc += table.get(a, b) * self.pair[pair_index(n, a, b)];
            }
        }
        acc
    }
}

/// Probability that at most two sensors drop out, `q(d)`.
pub fn at_most_two_dropout_prob(d: &DropoutVector) -> f64 {
    DropoutWeights::new(d).total()
}

/// Second-order expected return `R(d)`: the table returns weighted by the
/// probabilities of the events with at most two dropouts, renormalized by
/// `q(d)`. Fails when `q(d) = 0`.
pub fn conditional_expected_return(d: &DropoutVector, table: &PairReturnTable) -> Result<f64> {
    check_table(d, table)?;
    let w = DropoutWeights::new(d);
    let q = w.total();
    if q <= 0.0 {
        return Err(Error::DegenerateDropout);
    }
    Ok(w.weighted_sum(table) / q)
}

fn check_table(d: &DropoutVector, table: &PairReturnTable) -> Result<()> {
    if table.n() != d.len() {
        return Err(Error::DimensionMismatch {
            what: "return table",
            expected: d.len(),
            got: table.n(),
        });
    }
    Ok(())
}

fn check_sensor(n: usize, i: usize) -> Result<()> {
    if i >= n {
        return Err(Error::InvalidValue(format!(
            "sensor index {i} out of range for n = {n}"
        )));
    }
    Ok(())
}

/// `R(d^{i}) - R(d)`: gain from backing up sensor `i` alone.
pub fn single_backup_advantage(i: usize, d: &DropoutVector, table: &PairReturnTable) -> Result<f64> {
    check_sensor(d.len(), i)?;
    let base = conditional_expected_return(d, table)?;
    Ok(conditional_expected_return(&d.with_backups(&[i]), table)? - base)
}

/// Interaction gain of backing up `i` and `j` together beyond the two single
/// gains: `R(d^{i,j}) - R(d) - A_i - A_j`.
pub fn pair_backup_advantage(
    i: usize,
    j: usize,
    d: &DropoutVector,
    table: &PairReturnTable,
) -> Result<f64> {
    check_sensor(d.len(), i)?;
    check_sensor(d.len(), j)?;
    if i == j {
        return Err(Error::InvalidValue(format!(
            "pair advantage needs distinct sensors, got ({i}, {j})"
        )));
    }
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    let base = conditional_expected_return(d, table)?;
    let ra = conditional_expected_return(&d.with_backups(&[a]), table)?;
    let rb = conditional_expected_return(&d.with_backups(&[b]), table)?;
    let rab = conditional_expected_return(&d.with_backups(&[a, b]), table)?;
    Ok(pair_term(base, ra, rb, rab))
}

fn pair_term(base: f64, ra: f64, rb: f64, rab: f64) -> f64 {
    rab - base - (ra - base) - (rb - base)
}

/// All single and pairwise backup advantages for one dropout vector.
#[derive(Clone, Debug)]
pub struct Advantages {
    n: usize,
    /// `R(d)` with no backups.
    pub base: f64,
    pub single: Vec<f64>,
    /// Interaction terms at `pair_index(n, i, j)` for `i < j`; diagonal slots
    /// are zero.
    pub pair: Vec<f64>,
}

impl Advantages {
    pub fn compute(d: &DropoutVector, table: &PairReturnTable) -> Result<Self> {
        let n = d.len();
        let base = conditional_expected_return(d, table)?;
        let singles_r = (0..n)
            .map(|i| conditional_expected_return(&d.with_backups(&[i]), table))
            .collect::<Result<Vec<_>>>()?;
        let mut pair = vec![0.0; pair_count(n)];
        for a in 0..n {
            for b in a + 1..n {
                let rab = conditional_expected_return(&d.with_backups(&[a, b]), table)?;
                pair[pair_index(n, a, b)] = pair_term(base, singles_r[a], singles_r[b], rab);
            }
        }
        Ok(Self {
            n,
            base,
            single: singles_r.iter().map(|r| r - base).collect(),
            pair,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pair(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pair[pair_index(self.n, a, b)]
    }

    /// Sum of absolute single and pairwise advantages.
    pub fn alpha(&self) -> f64 {
        let mut acc = 0.0;
        for a in &self.single {
            acc += a.abs();
        }
        for a in 0..self.n {
            for b in a + 1..self.n {
                acc += self.pair[pair_index(self.n, a, b)].abs();
            }
        }
        acc
    }

    /// `H_soft(x) = sum_i x_i A_i + sum_{i<j} x_i x_j A_ij`.
    pub fn soft_value(&self, x: &BackupConfig) -> f64 {
        let bits = x.bits();
        let mut acc = 0.0;
        for i in 0..self.n {
            if bits[i] {
                acc += self.single[i];
            }
        }
        for a in 0..self.n {
            for b in a + 1..self.n {
                if bits[a] && bits[b] {
                    acc += self.pair[pair_index(self.n, a, b)];
                }
            }
        }
        acc
    }
}

/// Total absolute advantage, the scale of the budget penalty.
pub fn alpha_scale(d: &DropoutVector, table: &PairReturnTable) -> Result<f64> {
    Ok(Advantages::compute(d, table)?.alpha())
}

/// Layout of the binary slack variables of the budget penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackEncoding {
    /// `ceil(log2(C+1))` bits with coefficients `1, 2, .., 2^(k-2)` and a final
    /// coefficient `C + 1 - 2^(k-1)`, so the representable slack is exactly
    /// `0..=C`.
    #[default]
    Bounded,
    /// `ceil(log2 C) + 1` bits with power-of-two coefficients `2^0..`.
    Literal,
}

impl SlackEncoding {
    pub fn coefficients(self, budget: u64) -> Vec<u64> {
        assert!(budget >= 1, "cost budget must be positive");
        match self {
            SlackEncoding::Bounded => {
                let k = 64 - budget.leading_zeros();
                let mut coeffs: Vec<u64> = (0..k - 1).map(|e| 1u64 << e).collect();
                coeffs.push(budget + 1 - (1u64 << (k - 1)));
                coeffs
            }
            SlackEncoding::Literal => {
                let ceil_log2 = if budget == 1 {
                    0
                } else {
                    64 - (budget - 1).leading_zeros()
                };
                (0..=ceil_log2).map(|e| 1u64 << e).collect()
            }
        }
    }
}

/// Cost vector and budget behind the penalty term of a built QUBO.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetConstraint {
    pub costs: Vec<u64>,
    pub budget: u64,
}

/// Upper-triangular QUBO with a constant offset.
///
/// The first `n` variables are sensor bits, the remaining `m - n` are slack
/// bits with coefficients `slack_coeffs`. `H(x) = sum_{i<=j} x_i x_j Q_ij + constant`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuboMatrix {
    m: usize,
    n: usize,
    q: Vec<f64>,
    constant: f64,
    slack_coeffs: Vec<u64>,
    constraint: Option<BudgetConstraint>,
}

impl QuboMatrix {
    /// Empty `m`-variable QUBO whose first `n` bits are decision bits.
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if n > m {
            return Err(Error::InvalidValue(format!(
                "sensor bit count n = {n} exceeds variable count m = {m}"
            )));
        }
        Ok(Self {
            m,
            n,
            q: vec![0.0; m * m],
            constant: 0.0,
            slack_coeffs: Vec::new(),
            constraint: None,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn set_constant(&mut self, c: f64) {
        self.constant = c;
    }

    pub fn slack_coeffs(&self) -> &[u64] {
        &self.slack_coeffs
    }

    pub fn constraint(&self) -> Option<&BudgetConstraint> {
        self.constraint.as_ref()
    }

    /// Coefficient for the unordered pair `{i, j}`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.q[a * self.m + b]
    }

    /// Adds to the coefficient of `{i, j}`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        assert!(b < self.m, "index ({i}, {j}) out of range for m = {}", self.m);
        self.q[a * self.m + b] += value;
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        assert!(b < self.m, "index ({i}, {j}) out of range for m = {}", self.m);
        self.q[a * self.m + b] = value;
    }

    /// Nonzero coefficients `(i, j, q)` with `i <= j` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.m).flat_map(move |i| {
            (i..self.m).filter_map(move |j| {
                let v = self.q[i * self.m + j];
                (v != 0.0).then_some((i, j, v))
            })
        })
    }

    pub fn hamiltonian(&self, x: &[bool]) -> Result<f64> {
        if x.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "assignment",
                expected: self.m,
                got: x.len(),
            });
        }
        let mut acc = 0.0;
        for i in 0..self.m {
            if !x[i] {
                continue;
            }
            let row = &self.q[i * self.m..(i + 1) * self.m];
            for j in i..self.m {
                if x[j] {
                    acc += row[j];
                }
            }
        }
        Ok(acc + self.constant)
    }

    /// Extends a sensor configuration with the slack bits that minimize the
    /// budget penalty. Requires the budget constraint.
    pub fn complete_assignment(&self, x: &BackupConfig) -> Result<Vec<bool>> {
        let c = self.constraint.as_ref().ok_or_else(|| {
            Error::InvalidValue("QUBO carries no budget constraint to complete slack bits".into())
        })?;
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "sensor config",
                expected: self.n,
                got: x.len(),
            });
        }
        let cost = x.cost(&c.costs)?;
        let target = c.budget.saturating_sub(cost);
        let slack = best_slack(&self.slack_coeffs, target);
        let mut out = x.bits().to_vec();
        out.extend(slack);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: QuboRecord = serde_json::from_str(s)?;
        Self::from_record(rec)
    }

    fn to_record(&self) -> QuboRecord {
        QuboRecord {
            m: self.m,
            n: self.n,
            constant: self.constant,
            entries: self.entries().map(|(i, j, q)| QuboEntry { i, j, q }).collect(),
            slack_coeffs: self.slack_coeffs.clone(),
            costs: self.constraint.as_ref().map(|c| c.costs.clone()),
            budget: self.constraint.as_ref().map(|c| c.budget),
        }
    }

    fn from_record(rec: QuboRecord) -> Result<Self> {
        let mut q = Self::new(rec.m, rec.n)?;
        q.constant = rec.constant;
        for e in rec.entries {
            if e.i > e.j || e.j >= rec.m {
                return Err(Error::InvalidValue(format!(
                    "entry ({}, {}) must satisfy i <= j < m = {}",
                    e.i, e.j, rec.m
                )));
            }
            q.add(e.i, e.j, e.q);
        }
        q.set_slack(rec.slack_coeffs)?;
        match (rec.costs, rec.budget) {
            (Some(costs), Some(budget)) => q.set_constraint(BudgetConstraint { costs, budget })?,
            (None, None) => {}
            _ => {
                return Err(Error::InvalidValue(
                    "costs and budget must be given together".into(),
                ))
            }
        }
        Ok(q)
    }

    fn set_slack(&mut self, coeffs: Vec<u64>) -> Result<()> {
        if !coeffs.is_empty() && coeffs.len() != self.m - self.n {
            return Err(Error::DimensionMismatch {
                what: "slack_coeffs",
                expected: self.m - self.n,
                got: coeffs.len(),
            });
        }
        self.slack_coeffs = coeffs;
        Ok(())
    }

    fn set_constraint(&mut self, c: BudgetConstraint) -> Result<()> {
        if c.costs.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "costs",
                expected: self.n,
                got: c.costs.len(),
            });
        }
        if self.slack_coeffs.len() != self.m - self.n {
            return Err(Error::InvalidValue(
                "a budget constraint needs slack_coeffs for every slack bit".into(),
            ));
        }
        self.constraint = Some(c);
        Ok(())
    }

    /// Plain-text coordinate format:
    ///
    /// ```text
    /// # comment lines start with '#'
    /// p <m> <n> <constant>
    /// s <a_1> <a_2> ...        (optional slack coefficients)
    /// <i> <j> <value>          (one per nonzero, i <= j)
    /// ```
    pub fn to_coo(&self) -> String {
        let mut out = String::from("# sensoropt QUBO, H(x) = sum_{i<=j} x_i x_j q_ij + constant\n");
        out.push_str(&format!("p {} {} {}\n", self.m, self.n, self.constant));
        if !self.slack_coeffs.is_empty() {
            out.push('s');
            for a in &self.slack_coeffs {
                out.push_str(&format!(" {a}"));
            }
            out.push('\n');
        }
        for (i, j, v) in self.entries() {
            out.push_str(&format!("{i} {j} {v}\n"));
        }
        out
    }

    pub fn from_coo(text: &str) -> Result<Self> {
        let mut qubo: Option<Self> = None;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens[0] {
                "p" => {
                    if qubo.is_some() {
                        return Err(err("duplicate header line".into()));
                    }
                    if tokens.len() != 4 {
                        return Err(err(format!("header needs 'p m n constant', got {line:?}")));
                    }
                    let m = parse_tok::<usize>(tokens[1], line_no)?;
                    let n = parse_tok::<usize>(tokens[2], line_no)?;
                    let constant = parse_tok::<f64>(tokens[3], line_no)?;
                    let mut q = Self::new(m, n).map_err(|e| err(e.to_string()))?;
                    q.constant = constant;
                    qubo = Some(q);
                }
                "s" => {
                    let q = qubo
                        .as_mut()
                        .ok_or_else(|| err("slack line before header".into()))?;
                    let coeffs = tokens[1..]
                        .iter()
                        .map(|t| parse_tok::<u64>(t, line_no))
                        .collect::<Result<Vec<_>>>()?;
                    q.set_slack(coeffs).map_err(|e| err(e.to_string()))?;
                }
                _ => {
                    let q = qubo
                        .as_mut()
                        .ok_or_else(|| err("entry line before 'p m n constant' header".into()))?;
                    if tokens.len() != 3 {
                        return Err(err(format!("expected 'i j value', got {line:?}")));
                    }
                    let i = parse_tok::<usize>(tokens[0], line_no)?;
                    let j = parse_tok::<usize>(tokens[1], line_no)?;
                    let v = parse_tok::<f64>(tokens[2], line_no)?;
                    if i > j || j >= q.m {
                        return Err(err(format!(
                            "entry ({i}, {j}) must satisfy i <= j < m = {}",
                            q.m
                        )));
                    }
                    q.add(i, j, v);
                }
            }
        }
        qubo.ok_or(Error::Parse {
            line: 0,
            message: "missing 'p m n constant' header".into(),
        })
    }
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {tok:?}"),
    })
}

#[derive(Serialize, Deserialize)]
struct QuboEntry {
    i: usize,
    j: usize,
    q: f64,
}

#[derive(Serialize, Deserialize)]
struct QuboRecord {
    m: usize,
    n: usize,
    constant: f64,
    entries: Vec<QuboEntry>,
    #[serde(default)]
    slack_coeffs: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    costs: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<u64>,
}

const SLACK_DP_LIMIT: u64 = 1 << 22;

/// Slack bits whose weighted sum is the representable value closest to
/// `target` (ties to the smaller value).
pub fn best_slack(coeffs: &[u64], target: u64) -> Vec<bool> {
    let total: u64 = coeffs.iter().sum();
    if total > SLACK_DP_LIMIT {
        return greedy_slack(coeffs, target);
    }
    let size = total as usize + 1;
    // from[s] = index of the last coefficient used to first reach sum s.
    let mut from: Vec<Option<usize>> = vec![None; size];
    let mut reach = vec![false; size];
    reach[0] = true;
    for (k, &a) in coeffs.iter().enumerate() {
        let a = a as usize;
        for s in (a..size).rev() {
            if !reach[s] && reach[s - a] {
                reach[s] = true;
                from[s] = Some(k);
            }
        }
    }
    let target = target.min(total) as usize;
    let mut chosen = target;
    for delta in 0..size {
        if target >= delta && reach[target - delta] {
            chosen = target - delta;
            break;
        }
        if target + delta < size && reach[target + delta] {
            chosen = target + delta;
            break;
        }
    }
    let mut bits = vec![false; coeffs.len()];
    let mut s = chosen;
    while s > 0 {
        let k = from[s].expect("reachable sum has a predecessor");
        bits[k] = true;
        s -= coeffs[k] as usize;
    }
    bits
}

fn greedy_slack(coeffs: &[u64], target: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| coeffs[b].cmp(&coeffs[a]).then(a.cmp(&b)));
    let mut bits = vec![false; coeffs.len()];
    let mut left = target;
    for k in order {
        if coeffs[k] <= left {
            bits[k] = true;
            left -= coeffs[k];
        }
    }
    bits
}

/// A built QUBO together with the quantities it was assembled from.
#[derive(Clone, Debug)]
pub struct QuboBuild {
    pub matrix: QuboMatrix,
    pub advantages: Advantages,
    pub alpha: f64,
    /// Weight on the squared budget residual, `beta * alpha`, or `beta` when
    /// `alpha` is zero.
    pub penalty_weight: f64,
    /// Set when every advantage vanishes and the penalty weight fell back.
    pub degenerate: bool,
    pub encoding: SlackEncoding,
}

/// Assembles the QUBO for `instance` from an estimated return table.
pub fn build_qubo(
    instance: &ProblemInstance,
    table: &PairReturnTable,
    encoding: SlackEncoding,
) -> Result<QuboBuild> {
    let n = instance.n;
    if table.n() != n {
        return Err(Error::DimensionMismatch {
            what: "return table",
            expected: n,
            got: table.n(),
        });
    }
    let adv = Advantages::compute(&instance.d, table)?;
    let alpha = adv.alpha();
    let degenerate = alpha == 0.0;
    if degenerate {
        log::warn!("all backup advantages are zero; budget penalty weight falls back to beta");
    }
    let penalty_weight = instance.beta * if degenerate { 1.0 } else { alpha };

    let slack = encoding.coefficients(instance.budget);
    let m = n + slack.len();
    let mut q = QuboMatrix::new(m, n)?;

    for i in 0..n {
        q.add(i, i, -adv.single[i]);
        for j in i + 1..n {
            q.add(i, j, -adv.pair(i, j));
        }
    }

    // (sum_k a_k x_k - C)^2 over sensor costs followed by slack coefficients.
    let weights: Vec<f64> = instance
        .costs
        .iter()
        .chain(&slack)
        .map(|&a| a as f64)
        .collect();
    let budget = instance.budget as f64;
    for k in 0..m {
        let a = weights[k];
        q.add(k, k, penalty_weight * (a * a - 2.0 * budget * a));
        for l in k + 1..m {
            q.add(k, l, penalty_weight * 2.0 * a * weights[l]);
        }
    }
    q.constant = penalty_weight * budget * budget;
    q.slack_coeffs = slack;
    q.constraint = Some(BudgetConstraint {
        costs: instance.costs.clone(),
        budget: instance.budget,
    });

    Ok(QuboBuild {
        matrix: q,
        advantages: adv,
        alpha,
        penalty_weight,
        degenerate,
        encoding,
    })
}

/// Approximate expected return of a sensor configuration read off the QUBO.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproxReturn {
    /// `R(d) - H(x, s*)` with `s*` the penalty-minimizing slack completion.
    pub value: f64,
    pub feasible: bool,
    /// Budget penalty left after the best slack completion; zero iff feasible.
    pub penalty: f64,
}

impl QuboBuild {
    /// `R(d)` with no backups.
    pub fn base_return(&self) -> f64 {
        self.advantages.base
    }

    /// `E[R] ~ -H(x) + R(d)` with slack bits completed optimally; equals
    /// `H_soft(x) + R(d)` for feasible `x`.
    pub fn approx_expected_return(&self, x: &BackupConfig) -> Result<ApproxReturn> {
        let full = self.matrix.complete_assignment(x)?;
        let h = self.matrix.hamiltonian(&full)?;
        let c = self.matrix.constraint().expect("built QUBO carries its constraint");
        let cost = x.cost(&c.costs)?;
        let slack: u64 = full[self.matrix.n..]
            .iter()
            .zip(&self.matrix.slack_coeffs)
            .filter(|(&b, _)| b)
            .map(|(_, &a)| a)
            .sum();
        let residual = (cost + slack) as f64 - c.budget as f64;
        Ok(ApproxReturn {
            value: self.advantages.base - h,
            feasible: cost <= c.budget,
            penalty: self.penalty_weight * residual * residual,
        })
    }
}

//! Budgeted estimation of pairwise dropout returns.
//!
//! Two allocation policies are provided. [`estimate_pairs_momentum`] seeds
//! every pair `(i, j)`, `i <= j`, with two episodes and then repeatedly spends
//! one episode on the pair whose running mean moved the most with its latest
//! sample. [`estimate_pairs_round_robin`] splits the budget evenly.

use crate::error::{Error, Result};
use crate::model::{pair_count, pairs, PairReturnTable};

/// Source of sampled episode returns for a fixed policy and environment.
///
/// `sample` runs one episode with the listed sensors zeroed for the whole
/// episode. Successive calls are independent draws.
pub trait EpisodeOracle {
    fn sensors(&self) -> usize;

    fn sample(&mut self, dropout: &[usize]) -> Result<f64>;
}

impl<T: EpisodeOracle + ?Sized> EpisodeOracle for &mut T {
    fn sensors(&self) -> usize {
        (**self).sensors()
    }

    fn sample(&mut self, dropout: &[usize]) -> Result<f64> {
        (**self).sample(dropout)
    }
}

impl<T: EpisodeOracle + ?Sized> EpisodeOracle for Box<T> {
    fn sensors(&self) -> usize {
        (**self).sensors()
    }

    fn sample(&mut self, dropout: &[usize]) -> Result<f64> {
        (**self).sample(dropout)
    }
}

/// Dropout set for pair `(i, j)`; the diagonal drops a single sensor.
pub fn pair_dropout(i: usize, j: usize) -> Vec<usize> {
    if i == j {
        vec![i]
    } else {
        vec![i, j]
    }
}

/// Mean of `episodes` returns with no sensor dropped.
pub fn estimate_baseline(oracle: &mut impl EpisodeOracle, episodes: usize) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidValue(
            "baseline episode count must be at least 1".into(),
        ));
    }
    let mut mean = 0.0;
    for k in 1..=episodes {
        mean = update_mean(mean, oracle.sample(&[])?, k);
    }
    Ok(mean)
}

/// Running mean after the `k`-th sample; exact when all samples are equal.
fn update_mean(mean: f64, x: f64, k: usize) -> f64 {
    mean + (x - mean) / k as f64
}

/// Absolute shift of the mean caused by the last sample:
/// `|mean(samples[..k-1]) - mean(samples)|`.
pub fn momentum(samples: &[f64]) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::InvalidValue(format!(
            "momentum needs at least 2 samples, got {k}"
        )));
    }
    let before = samples[..k - 1]
        .iter()
        .enumerate()
        .fold(0.0, |m, (t, &x)| update_mean(m, x, t + 1));
    Ok((before - update_mean(before, samples[k - 1], k)).abs())
}

/// One sampled episode as recorded in the estimation trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub running_mean: f64,
}

/// Per-pair sample lists, running means and the chronological trace.
#[derive(Clone, Debug)]
pub struct SampleLog {
    n: usize,
    samples: Vec<Vec<f64>>,
    means: Vec<f64>,
    /// Mean before the latest sample of each pair.
    previous: Vec<f64>,
    trace: Vec<TraceRow>,
}

impl SampleLog {
    pub fn new(n: usize) -> Self {
        let p = pair_count(n);
        Self {
            n,
            samples: vec![Vec::new(); p],
            means: vec![0.0; p],
            previous: vec![0.0; p],
            trace: Vec::new(),
        }
    }

    fn record(&mut self, index: usize, (i, j): (usize, usize), value: f64) {
        self.samples[index].push(value);
        self.previous[index] = self.means[index];
        let running_mean = update_mean(self.means[index], value, self.samples[index].len());
        self.means[index] = running_mean;
        self.trace.push(TraceRow {
            episode: self.trace.len(),
            i,
            j,
            value,
            running_mean,
        });
    }

    fn momentum_of(&self, index: usize) -> f64 {
        (self.previous[index] - self.means[index]).abs()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Samples of pair `(i, j)` in the order they were drawn.
    pub fn samples(&self, i: usize, j: usize) -> &[f64] {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        &self.samples[crate::model::pair_index(self.n, a, b)]
    }

    /// Sample counts in lexicographic pair order.
    pub fn counts(&self) -> Vec<usize> {
        self.samples.iter().map(Vec::len).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.trace.len()
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Empirical means in lexicographic pair order.
    pub fn means(&self) -> Vec<f64> {
        self.means.clone()
    }

    /// Return table with the given no-dropout return.
    pub fn to_table(&self, r0: f64) -> Result<PairReturnTable> {
        if let Some(k) = self.samples.iter().position(Vec::is_empty) {
            let (i, j) = pairs(self.n).nth(k).expect("index in range");
            return Err(Error::IncompleteTable(format!(
                "pair ({i}, {j}) has no samples"
            )));
        }
        PairReturnTable::new(self.n, r0, self.means())
    }

    /// Trace as CSV with header `episode_index,i,j,return,running_mean`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("episode_index,i,j,return,running_mean\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.episode, r.i, r.j, r.value, r.running_mean
            ));
        }
        out
    }
}

fn check_oracle(oracle: &impl EpisodeOracle) -> Result<usize> {
    let n = oracle.sensors();
    if n == 0 {
        return Err(Error::InvalidValue("oracle reports zero sensors".into()));
    }
    Ok(n)
}

/// Momentum-prioritized pair estimation with exactly `budget` oracle calls.
///
/// Each pair first receives two samples (`n(n+1)` calls). Every remaining
/// episode goes to the pair with the largest momentum; ties go to the
/// lexicographically smallest pair. A pair's momentum only changes when it
/// receives a new sample.
pub fn estimate_pairs_momentum(oracle: &mut impl EpisodeOracle, budget: u64) -> Result<SampleLog> {
    let n = check_oracle(oracle)?;
    let p = pair_count(n);
    let required = 2 * p as u64;
    if budget < required {
        return Err(Error::BudgetTooSmall { budget, required });
    }
    let index: Vec<(usize, usize)> = pairs(n).collect();
    let mut log = SampleLog::new(n);
    for (k, &(i, j)) in index.iter().enumerate() {
        let dropout = pair_dropout(i, j);
        for _ in 0..2 {
            let v = oracle.sample(&dropout)?;
            log.record(k, (i, j), v);
        }
    }
    let mut momenta: Vec<f64> = (0..p).map(|k| log.momentum_of(k)).collect();
    for _ in 0..budget - required {
        let mut best = 0;
        for k in 1..p {
            if momenta[k] > momenta[best] {
                best = k;
            }
        }
        let (i, j) = index[best];
        let v = oracle.sample(&pair_dropout(i, j))?;
        log.record(best, (i, j), v);
        momenta[best] = log.momentum_of(best);
    }
    Ok(log)
}

/// Even split of `budget` over all pairs: each pair gets `budget / P` samples
/// and the first `budget % P` pairs (lexicographic order) get one more.
/// Samples are drawn round by round over the pair list.
pub fn estimate_pairs_round_robin(
    oracle: &mut impl EpisodeOracle,
    budget: u64,
) -> Result<SampleLog> {
    let n = check_oracle(oracle)?;
    let p = pair_count(n);
    if budget < p as u64 {
        return Err(Error::BudgetTooSmall {
            budget,
            required: p as u64,
        });
    }
    let rounds = budget / p as u64;
    let remainder = (budget % p as u64) as usize;
    let index: Vec<(usize, usize)> = pairs(n).collect();
    let mut log = SampleLog::new(n);
    for _ in 0..rounds {
        for (k, &(i, j)) in index.iter().enumerate() {
            let v = oracle.sample(&pair_dropout(i, j))?;
            log.record(k, (i, j), v);
        }
    }
    for (k, &(i, j)) in index.iter().enumerate().take(remainder) {
        let v = oracle.sample(&pair_dropout(i, j))?;
        log.record(k, (i, j), v);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns a fixed value per dropout set and counts calls.
    struct Fixed {
        n: usize,
        calls: usize,
        f: fn(&[usize]) -> f64,
    }

    impl EpisodeOracle for Fixed {
        fn sensors(&self) -> usize {
            self.n
        }
        fn sample(&mut self, dropout: &[usize]) -> Result<f64> {
            self.calls += 1;
            Ok((self.f)(dropout))
        }
    }

    /// Replays a scripted sequence of returns.
    struct Script(Vec<f64>, usize);

    impl EpisodeOracle for Script {
        fn sensors(&self) -> usize {
            self.1
        }
        fn sample(&mut self, _: &[usize]) -> Result<f64> {
            if self.0.is_empty() {
                return Err(Error::Oracle("script exhausted".into()));
            }
            Ok(self.0.remove(0))
        }
    }

    #[test]
    fn momentum_examples() {
        assert_eq!(momentum(&[10.0, 14.0]).unwrap(), 2.0);
        assert_eq!(momentum(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(momentum(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert!(momentum(&[1.0]).is_err());
    }

    #[test]
    fn baseline_is_mean_of_empty_dropout_samples() {
        let mut o = Fixed { n: 3, calls: 0, f: |d| if d.is_empty() { 0.0 } else { 1.0 } };
        assert_eq!(estimate_baseline(&mut o, 4).unwrap(), 0.0);
        assert_eq!(o.calls, 4);
        assert!(estimate_baseline(&mut o, 0).is_err());

        let mut s = Script(vec![1.0, 2.0, 6.0], 1);
        assert_eq!(estimate_baseline(&mut s, 3).unwrap(), 3.0);
    }

    #[test]
    fn momentum_estimator_single_pair() {
        let mut o = Fixed { n: 1, calls: 0, f: |_| 4.5 };
        let log = estimate_pairs_momentum(&mut o, 2).unwrap();
        assert_eq!(o.calls, 2);
        let t = log.to_table(1.0).unwrap();
        assert_eq!(t.get(0, 0), 4.5);
        assert!(estimate_pairs_momentum(&mut o, 1).is_err());
    }

    #[test]
    fn momentum_estimator_spends_budget_on_moving_pair() {
        // n = 2 gives pairs (0,0), (0,1), (1,1); initial samples are drawn
        // pairwise in that order, then the largest mover is resampled.
        let script = vec![1.0, 1.0, 0.0, 4.0, 3.0, 3.0, 1.0, 1.0, 1.0];
        let mut o = Script(script, 2);
        let log = estimate_pairs_momentum(&mut o, 9).unwrap();
        assert_eq!(log.counts(), vec![2, 5, 2]);
        assert_eq!(log.samples(0, 1), &[0.0, 4.0, 1.0, 1.0, 1.0]);
        assert_eq!(log.total_samples(), 9);
    }

    #[test]
    fn momentum_ties_go_to_smallest_pair() {
        // All pairs identical momentum after init: the extra sample goes to (0,0).
        let script = vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 7.0];
        let mut o = Script(script, 2);
        let log = estimate_pairs_momentum(&mut o, 7).unwrap();
        assert_eq!(log.counts(), vec![3, 2, 2]);
    }

    #[test]
    fn round_robin_counts() {
        let mut o = Fixed { n: 2, calls: 0, f: |_| 1.0 };
        let log = estimate_pairs_round_robin(&mut o, 7).unwrap();
        assert_eq!(log.counts(), vec![3, 2, 2]);
        assert_eq!(o.calls, 7);

        let mut o = Fixed { n: 5, calls: 0, f: |_| 1.0 };
        let log = estimate_pairs_round_robin(&mut o, 150).unwrap();
        assert!(log.counts().iter().all(|&c| c == 10));
        assert_eq!(log.counts().len(), 15);

        assert!(estimate_pairs_round_robin(&mut o, 14).is_err());
    }

    #[test]
    fn deterministic_oracle_gives_identical_tables() {
        let f: fn(&[usize]) -> f64 = |d| 10.0 - d.iter().map(|&i| i as f64 + 1.0).sum::<f64>();
        let mut a = Fixed { n: 4, calls: 0, f };
        let mut b = Fixed { n: 4, calls: 0, f };
        let la = estimate_pairs_momentum(&mut a, 60).unwrap();
        let lb = estimate_pairs_round_robin(&mut b, 60).unwrap();
        assert_eq!(a.calls, 60);
        assert_eq!(la.to_table(10.0).unwrap(), lb.to_table(10.0).unwrap());
    }

    #[test]
    fn trace_csv_has_one_row_per_episode() {
        let mut o = Fixed { n: 2, calls: 0, f: |_| 1.0 };
        let log = estimate_pairs_momentum(&mut o, 8).unwrap();
        let csv = log.trace_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "episode_index,i,j,return,running_mean");
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[1], "0,0,0,1,1");
    }

    #[test]
    fn oracle_failure_propagates() {
        let mut s = Script(vec![1.0; 3], 2);
        assert!(matches!(
            estimate_pairs_momentum(&mut s, 6),
            Err(Error::Oracle(_))
        ));
    }
}

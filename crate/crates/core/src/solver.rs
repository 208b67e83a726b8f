//! QUBO solvers and the end-to-end backup optimization pipeline.

use std::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_baseline, estimate_pairs_momentum, EpisodeOracle, SampleLog};
use crate::model::{bit_rank_cmp, deserialize_bits, serialize_bits, BackupConfig, PairReturnTable, ProblemInstance};
use crate::qubo::{build_qubo, QuboBuild, QuboMatrix, SlackEncoding};

/// Largest variable count accepted by [`brute_force_qubo`].
pub const BRUTE_FORCE_LIMIT: usize = 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabuParams {
    /// Iterations a flipped bit stays tabu.
    pub tenure: usize,
    /// Iterations per restart.
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl TabuParams {
    /// Defaults for an `m`-variable problem: tenure `max(7, m/4)`,
    /// `200 m` iterations and 10 restarts.
    pub fn for_size(m: usize, seed: u64) -> Self {
        Self {
            tenure: (m / 4).max(7),
            max_iters: (200 * m).max(1),
            restarts: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tenure == 0 || self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidValue(format!(
                "tabu tenure, max_iters and restarts must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Optional overrides of the size-dependent Tabu defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabuOverrides {
    pub tenure: Option<usize>,
    pub max_iters: Option<usize>,
    pub restarts: Option<usize>,
}

impl TabuOverrides {
    pub fn resolve(&self, m: usize, seed: u64) -> TabuParams {
        let d = TabuParams::for_size(m, seed);
        TabuParams {
            tenure: self.tenure.unwrap_or(d.tenure),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            restarts: self.restarts.unwrap_or(d.restarts),
            seed,
        }
    }
}

/// Best assignment found for a QUBO and its decoded sensor configuration.
///
/// For QUBOs without a budget constraint every assignment is feasible and the
/// reported cost is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub config: BackupConfig,
    pub cost: u64,
    pub feasible: bool,
    pub energy: f64,
    #[serde(serialize_with = "serialize_bits", deserialize_with = "deserialize_bits")]
    pub assignment: Vec<bool>,
}

impl SolveResult {
    pub fn from_assignment(q: &QuboMatrix, assignment: Vec<bool>) -> Result<Self> {
        let energy = q.hamiltonian(&assignment)?;
        let config = decode(&assignment, q.n())?;
        let (cost, feasible) = match q.constraint() {
            Some(c) => {
                let cost = config.cost(&c.costs)?;
                (cost, cost <= c.budget)
            }
            None => (0, true),
        };
        Ok(Self {
            config,
            cost,
            feasible,
            energy,
            assignment,
        })
    }
}

/// First `n` bits of a QUBO assignment.
pub fn decode(assignment: &[bool], n: usize) -> Result<BackupConfig> {
    if assignment.len() < n {
        return Err(Error::DimensionMismatch {
            what: "assignment",
            expected: n,
            got: assignment.len(),
        });
    }
    Ok(BackupConfig::new(assignment[..n].to_vec()))
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// True when `(e, x)` beats `(best_e, best_x)`: lower energy, or equal
/// energy (within rounding) and lower rank.
fn better(e: f64, x: &[bool], best_e: f64, best_x: &[bool]) -> bool {
    if ties(e, best_e) {
        bit_rank_cmp(x, best_x) == Ordering::Less
    } else {
        e < best_e
    }
}

/// Symmetric view of a QUBO with cached local fields for O(m) flips.
struct FlipState<'a> {
    m: usize,
    diag: &'a [f64],
    sym: &'a [f64],
    x: Vec<bool>,
    field: Vec<f64>,
    energy: f64,
}

fn symmetric(q: &QuboMatrix) -> (Vec<f64>, Vec<f64>) {
    let m = q.m();
    let mut sym = vec![0.0; m * m];
    let mut diag = vec![0.0; m];
    for (i, j, v) in q.entries() {
        if i == j {
            diag[i] = v;
        } else {
            sym[i * m + j] = v;
            sym[j * m + i] = v;
        }
    }
    (diag, sym)
}

impl<'a> FlipState<'a> {
    fn new(q: &QuboMatrix, diag: &'a [f64], sym: &'a [f64], x: Vec<bool>) -> Self {
        let m = q.m();
        let mut field = vec![0.0; m];
        for (k, f) in field.iter_mut().enumerate() {
            for j in 0..m {
                if x[j] {
                    *f += sym[k * m + j];
                }
            }
        }
        let energy = q.hamiltonian(&x).expect("length checked");
        Self {
            m,
            diag,
            sym,
            x,
            field,
            energy,
        }
    }

    fn delta(&self, k: usize) -> f64 {
        let gain = self.diag[k] + self.field[k];
        if self.x[k] {
            -gain
        } else {
            gain
        }
    }

    fn flip(&mut self, k: usize) {
        self.energy += self.delta(k);
        let on = !self.x[k];
        self.x[k] = on;
        let sign = if on { 1.0 } else { -1.0 };
        let row = &self.sym[k * self.m..(k + 1) * self.m];
        for (f, &s) in self.field.iter_mut().zip(row) {
            *f += sign * s;
        }
    }
}

/// Move preference among equal deltas: clearing a bit (highest index first)
/// before setting one (lowest index first), i.e. smallest resulting rank.
fn move_order(x: &[bool], k: usize) -> (u8, isize) {
    if x[k] {
        (0, -(k as isize))
    } else {
        (1, k as isize)
    }
}

/// Bits flipped when a walk stalls and restarts from the best point so far.
const KICK_BITS: usize = 3;

fn tabu_restart(q: &QuboMatrix, diag: &[f64], sym: &[f64], params: &TabuParams, restart: usize) -> (Vec<bool>, f64) {
    let m = q.m();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(restart as u64);
    let init: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
    let mut s = FlipState::new(q, diag, sym, init);
    let mut best_x = s.x.clone();
    let mut best_e = s.energy;
    let mut tabu_until = vec![0usize; m];
    let mut walk_best = s.energy;
    let mut last_gain = 0;

    for iter in 0..params.max_iters {
        if iter - last_gain >= m {
            let mut x = best_x.clone();
            for b in index::sample(&mut rng, m, KICK_BITS.min(m)) {
                x[b] = !x[b];
            }
            s = FlipState::new(q, diag, sym, x);
            tabu_until.fill(0);
            walk_best = s.energy;
            last_gain = iter;
        }
        let mut chosen: Option<(usize, f64)> = None;
        let mut fallback: Option<(usize, f64)> = None;
        for k in 0..m {
            let dk = s.delta(k);
            let admissible = tabu_until[k] <= iter || s.energy + dk < best_e;
            let slot = if admissible { &mut chosen } else { &mut fallback };
            let replace = match *slot {
                None => true,
                Some((c, dc)) => dk < dc || (dk == dc && move_order(&s.x, k) < move_order(&s.x, c)),
            };
            if replace {
                *slot = Some((k, dk));
            }
        }
        let Some((k, _)) = chosen.or(fallback) else { break };
        s.flip(k);
        tabu_until[k] = iter + params.tenure + 1;
        if s.energy < walk_best && !ties(s.energy, walk_best) {
            walk_best = s.energy;
            last_gain = iter;
        }
        if better(s.energy, &s.x, best_e, &best_x) {
            best_e = s.energy;
            best_x.clone_from(&s.x);
        }
    }
    let exact = q.hamiltonian(&best_x).expect("length checked");
    (best_x, exact)
}

/// Tabu Search with a single-bit-flip neighborhood.
///
/// Each restart starts from a uniformly random assignment drawn from stream
/// `r` of a ChaCha generator seeded with `params.seed`, then repeatedly takes
/// the best non-tabu flip (a tabu flip is allowed when it beats the best
/// energy of the restart). A walk that goes `m` iterations without a new
/// low resumes from the restart's best assignment with three random bits
/// flipped and a cleared tabu list. Restarts run in parallel; the merged
/// result is the lowest energy, ties broken by lowest rank.
pub fn tabu_search(q: &QuboMatrix, params: &TabuParams) -> Result<SolveResult> {
    params.validate()?;
    if q.m() == 0 {
        return SolveResult::from_assignment(q, Vec::new());
    }
    let (diag, sym) = symmetric(q);
    let runs: Vec<(Vec<bool>, f64)> = (0..params.restarts)
        .into_par_iter()
        .map(|r| tabu_restart(q, &diag, &sym, params, r))
        .collect();
    let mut best: Option<(Vec<bool>, f64)> = None;
    for (x, e) in runs {
        if best.as_ref().is_none_or(|(bx, be)| better(e, &x, *be, bx)) {
            best = Some((x, e));
        }
    }
    let (x, _) = best.expect("at least one restart");
    SolveResult::from_assignment(q, x)
}

/// Exact minimum by Gray-code enumeration of all `2^m` assignments; ties are
/// broken by lowest rank.
pub fn brute_force_qubo(q: &QuboMatrix) -> Result<SolveResult> {
    let m = q.m();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            size: m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if m == 0 {
        return SolveResult::from_assignment(q, Vec::new());
    }
    let (diag, sym) = symmetric(q);
    let mut s = FlipState::new(q, &diag, &sym, vec![false; m]);
    let mut best_e = s.energy;
    let mut best_key = 0u64;
    let mut key = 0u64;
    for t in 1u64..(1u64 << m) {
        let k = t.trailing_zeros() as usize;
        s.flip(k);
        key ^= 1 << k;
        if t % 4096 == 0 {
            s.energy = q.hamiltonian(&s.x)?;
        }
        let wins = if ties(s.energy, best_e) {
            key < best_key
        } else {
            s.energy < best_e
        };
        if wins {
            best_e = s.energy;
            best_key = key;
        }
    }
    let x: Vec<bool> = (0..m).map(|i| best_key >> i & 1 == 1).collect();
    SolveResult::from_assignment(q, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorOptOptions {
    /// Episodes spent estimating the no-dropout return, outside the pair budget.
    pub baseline_episodes: usize,
    pub encoding: SlackEncoding,
    pub tabu: TabuOverrides,
}

impl Default for SensorOptOptions {
    fn default() -> Self {
        Self {
            baseline_episodes: 10,
            encoding: SlackEncoding::Bounded,
            tabu: TabuOverrides::default(),
        }
    }
}

/// Every intermediate product of one pipeline run.
#[derive(Clone, Debug)]
pub struct SensorOptRun {
    pub baseline: f64,
    pub log: SampleLog,
    pub table: PairReturnTable,
    pub build: QuboBuild,
    pub params: TabuParams,
    pub result: SolveResult,
}

/// Full pipeline: estimate the no-dropout return and all pair returns from the
/// oracle, build the QUBO and solve it with Tabu Search.
///
/// When every backup advantage is zero no backup can change the approximate
/// return, and the zero-cost all-zeros configuration is returned directly.
pub fn sensoropt(
    instance: &ProblemInstance,
    oracle: &mut impl EpisodeOracle,
    options: &SensorOptOptions,
) -> Result<SensorOptRun> {
    if oracle.sensors() != instance.n {
        return Err(Error::DimensionMismatch {
            what: "oracle sensors",
            expected: instance.n,
            got: oracle.sensors(),
        });
    }
    let baseline = estimate_baseline(oracle, options.baseline_episodes)?;
    let log = estimate_pairs_momentum(oracle, instance.episodes)?;
    let table = log.to_table(baseline)?;
    sensoropt_with_table(instance, baseline, log, table, options)
}

/// Pipeline tail for an already estimated return table: build the QUBO and solve it.
pub fn sensoropt_with_table(
    instance: &ProblemInstance,
    baseline: f64,
    log: SampleLog,
    table: PairReturnTable,
    options: &SensorOptOptions,
) -> Result<SensorOptRun> {
    let build = build_qubo(instance, &table, options.encoding)?;
    let params = options.tabu.resolve(build.matrix.m(), instance.seed);
    let result = if build.degenerate {
        log::info!("degenerate QUBO: returning the all-zeros configuration");
        let full = build.matrix.complete_assignment(&BackupConfig::zeros(instance.n))?;
        SolveResult::from_assignment(&build.matrix, full)?
    } else {
        tabu_search(&build.matrix, &params)?
    };
    Ok(SensorOptRun {
        baseline,
        log,
        table,
        build,
        params,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_qubo(m: usize, seed: u64) -> QuboMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = QuboMatrix::new(m, m).unwrap();
        for i in 0..m {
            for j in i..m {
                q.set(i, j, rng.random_range(-10.0..10.0));
            }
        }
        q.set_constant(rng.random_range(-5.0..5.0));
        q
    }

    #[test]
    fn zero_qubo_gives_all_zeros() {
        let mut q = QuboMatrix::new(6, 6).unwrap();
        q.set_constant(3.0);
        let b = brute_force_qubo(&q).unwrap();
        assert_eq!(b.assignment, vec![false; 6]);
        let t = tabu_search(&q, &TabuParams::for_size(6, 11)).unwrap();
        assert_eq!(t.assignment, vec![false; 6]);
        assert_eq!(t.energy, 3.0);
    }

    #[test]
    fn single_variable() {
        let mut q = QuboMatrix::new(1, 1).unwrap();
        q.set(0, 0, -5.0);
        for seed in 0..4 {
            let r = tabu_search(&q, &TabuParams::for_size(1, seed)).unwrap();
            assert_eq!(r.assignment, vec![true]);
            assert_eq!(r.energy, -5.0);
        }
    }

    #[test]
    fn diagonal_negative_gives_all_ones() {
        let m = 9;
        let mut q = QuboMatrix::new(m, m).unwrap();
        for i in 0..m {
            q.set(i, i, -1.0);
        }
        q.set_constant(0.5);
        let b = brute_force_qubo(&q).unwrap();
        assert_eq!(b.assignment, vec![true; m]);
        assert_eq!(b.energy, -(m as f64) + 0.5);
    }

    #[test]
    fn brute_force_beats_random_probes() {
        let q = random_qubo(12, 5);
        let b = brute_force_qubo(&q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let x: Vec<bool> = (0..12).map(|_| rng.random_bool(0.5)).collect();
            assert!(b.energy <= q.hamiltonian(&x).unwrap() + 1e-12);
        }
        assert!(brute_force_qubo(&QuboMatrix::new(27, 27).unwrap()).is_err());
    }

    #[test]
    fn brute_force_tie_prefers_lowest_key() {
        // Energy -1 for x = [1, 0] and [0, 1]: the lower rank is [1, 0].
        let mut q = QuboMatrix::new(2, 2).unwrap();
        q.set(0, 0, -1.0);
        q.set(1, 1, -1.0);
        q.set(0, 1, 1.0);
        let b = brute_force_qubo(&q).unwrap();
        assert_eq!(b.assignment, vec![true, false]);
        let t = tabu_search(&q, &TabuParams::for_size(2, 0)).unwrap();
        assert_eq!(t.assignment, vec![true, false]);
    }

    #[test]
    fn tabu_is_deterministic_and_matches_brute_force() {
        for seed in 0..5 {
            let q = random_qubo(10, seed);
            let p = TabuParams::for_size(10, seed);
            let a = tabu_search(&q, &p).unwrap();
            let b = tabu_search(&q, &p).unwrap();
            assert_eq!(a, b);
            let exact = brute_force_qubo(&q).unwrap();
            assert!((a.energy - exact.energy).abs() < 1e-9);
        }
    }

    #[test]
    fn more_restarts_never_hurt() {
        let q = random_qubo(16, 3);
        let mut last = f64::INFINITY;
        for restarts in 1..6 {
            let p = TabuParams {
                tenure: 3,
                max_iters: 20,
                restarts,
                seed: 1,
            };
            let e = tabu_search(&q, &p).unwrap().energy;
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn decode_takes_prefix() {
        let c = decode(&[true, false, true, true, false], 3).unwrap();
        assert_eq!(c.bits(), &[true, false, true]);
        assert_eq!(decode(&[false; 5], 5).unwrap(), BackupConfig::zeros(5));
        assert!(decode(&[true], 2).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let q = random_qubo(3, 0);
        let p = TabuParams {
            tenure: 0,
            max_iters: 1,
            restarts: 1,
            seed: 0,
        };
        assert!(tabu_search(&q, &p).is_err());
    }

    #[test]
    fn solve_result_json_shape() {
        let q = random_qubo(3, 1);
        let r = brute_force_qubo(&q).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["config", "cost", "feasible", "energy", "assignment"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: SolveResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}

use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use serde_json::json;

use sensoropt::estimator::{
    estimate_baseline, estimate_pairs_momentum, estimate_pairs_round_robin, EpisodeOracle, SampleLog,
};
use sensoropt::model::{bit_rank_cmp, BackupConfig, PairReturnTable, ProblemInstance};
use sensoropt::qubo::{build_qubo, QuboMatrix, SlackEncoding};
use sensoropt::simenv::{
    generate_instance, generate_model, knapsack_to_instance, make_oracle, monte_carlo_expected_return,
    spearman_correlation, table1_instance, table1_model, GroundTruthModel, InstanceSpec, JsonLinesOracle,
    KnapsackInstance, ModelSpec, ReturnSurface, KNAPSACK_EPSILON,
};
use sensoropt::solver::{
    brute_force_qubo, sensoropt_with_table, tabu_search, SensorOptOptions, TabuOverrides,
};
use sensoropt::Error;

use crate::manifest::Run;
use crate::{Cli, CliError, Command, Globals, Stage};

/// Largest sensor count accepted by `landscape`.
const LANDSCAPE_LIMIT: usize = 16;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let mut run = Run::new(&g.out)?;
    let (seed, resolved, results) = match &cli.command {
        Command::Generate {
            fixture,
            n,
            knapsack,
            pairwise_only,
            zero_noise,
            noise_sigma,
            heterogeneous_noise,
            extension,
        } => {
            let seed = g.seed.unwrap_or(0);
            let (instance, model, kp) = if fixture.is_some() {
                (table1_instance(), table1_model(), None)
            } else if let Some(n) = *n {
                let spec = ModelSpec {
                    triple_scale: if *pairwise_only { 0.0 } else { 1.0 },
                    noise_sigma: if *zero_noise { 0.0 } else { *noise_sigma },
                    pair_sigma_choices: if *heterogeneous_noise && !*zero_noise {
                        vec![0.5, 5.0]
                    } else {
                        Vec::new()
                    },
                    extension: *extension,
                    ..ModelSpec::pairwise(n)
                };
                let instance = generate_instance(&InstanceSpec::new(n), seed).stage("generate instance")?;
                (instance, generate_model(&spec, seed).stage("generate model")?, None)
            } else {
                let items = knapsack.expect("clap enforces one source");
                let draft = KnapsackInstance::random(items, 20, 1, seed).stage("generate knapsack")?;
                let capacity = (draft.costs.iter().sum::<u64>() / 2).max(1);
                let kp = KnapsackInstance::new(draft.values, draft.costs, capacity).stage("generate knapsack")?;
                let (instance, model) = knapsack_to_instance(&kp, KNAPSACK_EPSILON).stage("reduce knapsack")?;
                (instance, model, Some(kp))
            };
            let instance = with_overrides(&instance, g, g.seed)?;
            run.write_json("instance.json", &instance)?;
            run.write_json("model.json", &model)?;
            if let Some(kp) = &kp {
                run.write_json("knapsack.json", kp)?;
            }
            let results = json!({ "n": instance.n, "budget": instance.budget, "episodes": instance.episodes });
            (seed, json!({ "instance": instance }), results)
        }
        Command::Optimize { instance, model, table } => {
            let inst = load_instance(&mut run, instance, g)?;
            let options = options(g);
            let (baseline, log, table) = if let Some(path) = table {
                let table = PairReturnTable::from_json(&run.read(path)?).stage("parse table")?;
                (table.r0(), SampleLog::new(inst.n), table)
            } else if let Some(cmd) = &g.oracle_cmd {
                let mut oracle = JsonLinesOracle::spawn(cmd, Duration::from_secs_f64(g.oracle_timeout))
                    .stage("start oracle")?;
                estimate(&inst, &mut oracle, g)?
            } else if let Some(path) = model {
                let model = GroundTruthModel::from_json(&run.read(path)?).stage("parse model")?;
                estimate(&inst, &mut make_oracle(&model, inst.seed), g)?
            } else {
                return Err(Error::InvalidValue("optimize needs --model, --table or --oracle-cmd".into()))
                    .stage("select oracle");
            };
            let out = sensoropt_with_table(&inst, baseline, log, table, &options).stage("build and solve")?;
            let approx = out.build.approx_expected_return(&out.result.config).stage("score solution")?;
            run.write_json("solution.json", &out.result)?;
            run.write("table.json", out.table.to_json().stage("serialize table")?.as_bytes())?;
            run.write("qubo.json", out.build.matrix.to_json().stage("serialize qubo")?.as_bytes())?;
            if out.log.total_samples() > 0 {
                run.write("trace.csv", out.log.trace_csv().as_bytes())?;
            }
            let results = json!({
                "config": out.result.config.to_string(),
                "cost": out.result.cost,
                "feasible": out.result.feasible,
                "energy": out.result.energy,
                "approx_return": approx.value,
                "baseline": out.baseline,
                "alpha": out.build.alpha,
                "penalty_weight": out.build.penalty_weight,
                "degenerate": out.build.degenerate,
                "variables": out.build.matrix.m(),
                "tabu": out.params,
                "oracle_calls": out.log.total_samples(),
            });
            (inst.seed, json!({ "instance": inst, "options": options }), results)
        }
        Command::Landscape { instance, model, table } => {
            let inst = load_instance(&mut run, instance, g)?;
            let model = GroundTruthModel::from_json(&run.read(model)?).stage("parse model")?;
            let table = match table {
                Some(path) => PairReturnTable::from_json(&run.read(path)?).stage("parse table")?,
                None => model.pair_table(),
            };
            let (csv, rho) = landscape(&inst, &model, &table, encoding(g))?;
            run.write("landscape.csv", csv.as_bytes())?;
            (inst.seed, json!({ "instance": inst }), json!({ "rows": 1u64 << inst.n, "spearman": rho }))
        }
        Command::CompareEstimators { model, seeds, budget } => {
            let model = GroundTruthModel::from_json(&run.read(model)?).stage("parse model")?;
            if *seeds < 2 {
                return Err(Error::InvalidValue(format!("need at least 2 seeds, got {seeds}"))).stage("compare");
            }
            let n = model.n() as u64;
            let budget = budget.unwrap_or(10 * n * (n + 1) / 2);
            let base = g.seed.unwrap_or(0);
            let (csv, summary) = compare(&model, base, *seeds, budget)?;
            run.write("compare.csv", csv.as_bytes())?;
            run.write_json("summary.json", &summary)?;
            (base, json!({ "budget": budget, "seeds": seeds }), serde_json::to_value(&summary).expect("plain data"))
        }
        Command::SolveQubo { qubo, exact } => {
            let text = run.read(qubo)?;
            let q = if text.trim_start().starts_with('{') {
                QuboMatrix::from_json(&text)
            } else {
                QuboMatrix::from_coo(&text)
            }
            .stage("parse qubo")?;
            let seed = g.seed.unwrap_or(0);
            let params = tabu_overrides(g).resolve(q.m(), seed);
            let result = if *exact {
                brute_force_qubo(&q).stage("solve")?
            } else {
                tabu_search(&q, &params).stage("solve")?
            };
            run.write_json("solution.json", &result)?;
            let results = json!({ "energy": result.energy, "feasible": result.feasible, "exact": exact });
            (seed, json!({ "tabu": params }), results)
        }
        Command::Evaluate {
            instance,
            model,
            config,
            mc_episodes,
        } => {
            let inst = load_instance(&mut run, instance, g)?;
            let model = GroundTruthModel::from_json(&run.read(model)?).stage("parse model")?;
            let x: BackupConfig = config.parse().stage("parse config")?;
            if x.len() != inst.n || model.n() != inst.n {
                return Err(Error::DimensionMismatch {
                    what: "configuration or model",
                    expected: inst.n,
                    got: if x.len() != inst.n { x.len() } else { model.n() },
                })
                .stage("parse config");
            }
            let exact = ReturnSurface::new(&model)
                .and_then(|s| s.expectation(&inst.d.apply_backups(&x)?))
                .stage("exact evaluation")?;
            let mc = match mc_episodes {
                Some(k) => Some(
                    monte_carlo_expected_return(&mut make_oracle(&model, inst.seed), &inst.d, &x, *k, inst.seed)
                        .stage("monte carlo evaluation")?,
                ),
                None => None,
            };
            let cost = inst.config_cost(&x).stage("cost")?;
            let report = json!({
                "config": x.to_string(),
                "cost": cost,
                "feasible": cost <= inst.budget,
                "exact_return": exact,
                "monte_carlo": mc,
            });
            run.write_json("evaluation.json", &report)?;
            (inst.seed, json!({ "instance": inst }), report)
        }
    };
    let config = json!({ "cli": serde_json::to_value(cli).expect("plain data"), "resolved": resolved });
    run.finish(cli.command.name(), seed, config, results)
}

fn encoding(g: &Globals) -> SlackEncoding {
    if g.paper_slack_encoding {
        SlackEncoding::Literal
    } else {
        SlackEncoding::Bounded
    }
}

fn tabu_overrides(g: &Globals) -> TabuOverrides {
    TabuOverrides {
        tenure: g.tabu_tenure,
        max_iters: g.tabu_iters,
        restarts: g.restarts,
    }
}

fn options(g: &Globals) -> SensorOptOptions {
    SensorOptOptions {
        baseline_episodes: g.episodes,
        encoding: encoding(g),
        tabu: tabu_overrides(g),
    }
}

/// Applies flag overrides through the instance file format so the merged
/// result is validated like a loaded file.
fn with_overrides(inst: &ProblemInstance, g: &Globals, seed: Option<u64>) -> Result<ProblemInstance, CliError> {
    let mut v = serde_json::to_value(inst).stage("apply overrides")?;
    if let Some(beta) = g.beta {
        v["beta"] = json!(beta);
    }
    if let Some(c) = g.cost_budget {
        v["C"] = json!(c);
    }
    if let Some(b) = g.episode_budget {
        v["B"] = json!(b);
    }
    if let Some(s) = seed {
        v["seed"] = json!(s);
    }
    serde_json::from_value(v).stage("apply overrides")
}

fn load_instance(run: &mut Run, path: &Path, g: &Globals) -> Result<ProblemInstance, CliError> {
    let inst = ProblemInstance::from_json(&run.read(path)?).stage("parse instance")?;
    with_overrides(&inst, g, g.seed)
}

fn estimate(
    inst: &ProblemInstance,
    oracle: &mut impl EpisodeOracle,
    g: &Globals,
) -> Result<(f64, SampleLog, PairReturnTable), CliError> {
    if oracle.sensors() != inst.n {
        return Err(Error::DimensionMismatch {
            what: "oracle sensors",
            expected: inst.n,
            got: oracle.sensors(),
        })
        .stage("start oracle");
    }
    let baseline = estimate_baseline(oracle, g.episodes).stage("estimate baseline")?;
    let log = estimate_pairs_momentum(oracle, inst.episodes).stage("estimate pairs")?;
    let table = log.to_table(baseline).stage("estimate pairs")?;
    Ok((baseline, log, table))
}

fn landscape(
    inst: &ProblemInstance,
    model: &GroundTruthModel,
    table: &PairReturnTable,
    encoding: SlackEncoding,
) -> Result<(String, Option<f64>), CliError> {
    let n = inst.n;
    if n > LANDSCAPE_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: LANDSCAPE_LIMIT,
        })
        .stage("landscape");
    }
    if model.n() != n {
        return Err(Error::DimensionMismatch {
            what: "model sensors",
            expected: n,
            got: model.n(),
        })
        .stage("landscape");
    }
    let build = build_qubo(inst, table, encoding).stage("build qubo")?;
    let surface = ReturnSurface::new(model).stage("exact evaluation")?;
    let mut rows = Vec::with_capacity(1 << n);
    for mask in 0u64..1 << n {
        let x = BackupConfig::from_mask(n, mask);
        let approx = build.approx_expected_return(&x).stage("approximate return")?;
        let exact = surface
            .expectation(&inst.d.apply_backups(&x).stage("exact evaluation")?)
            .stage("exact evaluation")?;
        let cost = inst.config_cost(&x).stage("cost")?;
        rows.push((x, cost, approx.value, exact));
    }
    rows.sort_by(|a, b| b.3.total_cmp(&a.3).then_with(|| bit_rank_cmp(a.0.bits(), b.0.bits())));
    let approx: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let exact: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let mut csv = String::from("config,cost,feasible,approx_return,exact_return\n");
    for (x, cost, a, e) in &rows {
        csv.push_str(&format!("{x},{cost},{},{a},{e}\n", *cost <= inst.budget));
    }
    Ok((csv, spearman_correlation(&approx, &exact)))
}

#[derive(Serialize)]
struct CompareSummary {
    seeds: u64,
    budget: u64,
    momentum_wins: u64,
    win_rate: f64,
    momentum_mean_error: f64,
    round_robin_mean_error: f64,
}

fn mean_abs_error(est: &PairReturnTable, truth: &PairReturnTable) -> f64 {
    let v = est.values();
    v.iter().zip(truth.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / v.len() as f64
}

fn compare(model: &GroundTruthModel, base: u64, seeds: u64, budget: u64) -> Result<(String, CompareSummary), CliError> {
    let truth = model.pair_table();
    let mut csv = String::from("seed,momentum_error,round_robin_error\n");
    let (mut wins, mut sum_m, mut sum_r) = (0, 0.0, 0.0);
    for s in 0..seeds {
        let seed = base.wrapping_add(s);
        let m = estimate_pairs_momentum(&mut make_oracle(model, seed), budget)
            .and_then(|l| l.to_table(truth.r0()))
            .stage("momentum estimation")?;
        let r = estimate_pairs_round_robin(&mut make_oracle(model, seed), budget)
            .and_then(|l| l.to_table(truth.r0()))
            .stage("round robin estimation")?;
        let (em, er) = (mean_abs_error(&m, &truth), mean_abs_error(&r, &truth));
        csv.push_str(&format!("{seed},{em},{er}\n"));
        wins += u64::from(em <= er);
        sum_m += em;
        sum_r += er;
    }
    let k = seeds as f64;
    Ok((
        csv,
        CompareSummary {
            seeds,
            budget,
            momentum_wins: wins,
            win_rate: wins as f64 / k,
            momentum_mean_error: sum_m / k,
            round_robin_mean_error: sum_r / k,
        },
    ))
}

use std::fmt::Write as _;
use std::path::Path;

use keeprate::cost::schedule_cost;
use keeprate::gsearch::{g_search, GSearchConfig, SearchMode};
use keeprate::io::{
    schedule_from_json, schedule_to_json, to_pretty, trace_from_json, trace_to_json,
};
use keeprate::psigmoid::{
    achieved_budget, default_k_search_config, fit_psigmoid, k_search, schedule_from_params,
    PSigmoidParams,
};
use keeprate::rank::{tau_matrix, tau_series};
use keeprate::sim::{OracleSpec, SyntheticOracle};
use keeprate::{Error, Evaluator, KeepingSchedule, ModelDims};
use serde_json::{json, Value};

use crate::args::{Command, CostArgs, FitArgs, GsearchArgs, PsigmoidArgs, SimulateArgs, TauArgs};
use crate::error::{CliError, CliResult};
use crate::output::{csv_with_meta, meta, read_text, Sink};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Gsearch(a) => gsearch(&a),
        Command::Psigmoid(a) => psigmoid(&a),
        Command::Cost(a) => cost(&a),
        Command::Tau(a) => tau(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit(&a),
    }
}

fn load_oracle(path: &Path) -> CliResult<SyntheticOracle> {
    let spec: OracleSpec = serde_json::from_str(&read_text(path)?)?;
    Ok(SyntheticOracle::new(spec)?)
}

fn load_schedule(path: &Path) -> CliResult<KeepingSchedule> {
    Ok(schedule_from_json(&read_text(path)?)?)
}

fn check_layers(requested: Option<u32>, actual: usize) -> CliResult<()> {
    match requested {
        Some(l) if l as usize != actual => Err(Error::DimensionMismatch {
            expected: l as usize,
            got: actual,
        }
        .into()),
        _ => Ok(()),
    }
}

fn rates_csv(schedule: &KeepingSchedule) -> String {
    let mut s = String::from("layer,rate\n");
    for (i, r) in schedule.rates().iter().enumerate() {
        writeln!(s, "{},{r}", i + 1).unwrap();
    }
    s
}

fn with_result(mut meta: Value, result: Value) -> Value {
    meta["result"] = result;
    meta
}

fn gsearch(a: &GsearchArgs) -> CliResult<()> {
    let oracle = load_oracle(&a.oracle)?;
    let layers = oracle.num_layers();
    check_layers(a.layers, layers)?;

    let mut cfg = GSearchConfig::with_grid_points(a.grid as usize);
    cfg.lambda = a.lambda;
    cfg.stride = a.stride as usize;
    if let SearchMode::Bayesian(bo) = &mut cfg.mode {
        bo.num_iterations = a.bo_iters as usize;
        bo.rng_seed = a.common.seed;
    }
    let outcome = g_search(&oracle, layers, &cfg)?;
    let score = oracle.evaluate(&outcome.schedule)?;

    let m = meta("gsearch", a.common.seed, a);
    let sink = Sink::new(a.common.out.clone());
    sink.primary(&schedule_to_json(
        &outcome.schedule,
        Some(with_result(m.clone(), json!({ "score": score }))),
    ))?;
    sink.secondary("audit", "csv", &csv_with_meta(&m, &outcome.audit_csv()))
}

fn psigmoid(a: &PsigmoidArgs) -> CliResult<()> {
    let oracle = a.oracle.as_deref().map(load_oracle).transpose()?;
    let layers = match (&oracle, a.layers) {
        (Some(o), requested) => {
            check_layers(requested, o.num_layers())?;
            o.num_layers()
        }
        (None, Some(l)) => l as usize,
        (None, None) => return Err(CliError::Usage("--layers or --oracle is required".into())),
    };
    let m = meta("psigmoid", a.common.seed, a);
    let sink = Sink::new(a.common.out.clone());

    let (params, score, trials) = if a.search_k {
        let oracle = oracle
            .as_ref()
            .ok_or_else(|| CliError::Usage("--search-k needs --oracle".into()))?;
        let mut bo = default_k_search_config(a.common.seed);
        bo.num_iterations = a.bo_iters as usize;
        let out = k_search(oracle, a.budget, layers, &bo)?;
        (out.params, Some(out.value), Some(out.trials))
    } else {
        let k =
            a.k.ok_or_else(|| CliError::Usage("either --k or --search-k is required".into()))?;
        let params = PSigmoidParams::new(a.budget, k, layers)?;
        let score = match &oracle {
            Some(o) => Some(o.evaluate(&schedule_from_params(&params))?),
            None => None,
        };
        (params, score, None)
    };

    let schedule = schedule_from_params(&params);
    let result = json!({
        "b": params.b,
        "k": params.k,
        "alpha": params.alpha,
        "achieved_budget": achieved_budget(&params),
        "score": score,
    });
    sink.primary(&schedule_to_json(
        &schedule,
        Some(with_result(m.clone(), result)),
    ))?;
    sink.secondary("rates", "csv", &csv_with_meta(&m, &rates_csv(&schedule)))?;
    if let Some(trials) = trials {
        sink.secondary("bo", "csv", &csv_with_meta(&m, &trials.log_csv()))?;
    }
    Ok(())
}

fn cost(a: &CostArgs) -> CliResult<()> {
    let dims = match &a.dims {
        Some(p) => serde_json::from_str::<ModelDims>(&read_text(p)?)?,
        None => ModelDims::llava_7b(),
    };
    let schedule = load_schedule(&a.schedule)?;
    let report = schedule_cost(&schedule, &dims)?;

    let m = meta("cost", a.common.seed, a);
    let summary = json!({
        "total_tflops": report.total_flops / 1e12,
        "total_tmacs": report.total_macs / 1e12,
        "memory_rate": report.memory_rate,
        "decode_tflops": report.decode_flops / 1e12,
        "dims": dims,
        "meta": m,
    });
    let mut csv = String::from("layer,index,kept_tokens,macs,flops\n");
    for (i, (&kept, &flops)) in report
        .kept_tokens
        .iter()
        .zip(&report.per_layer_flops)
        .enumerate()
    {
        writeln!(csv, "{},{i},{kept},{},{flops}", i + 1, flops / 2.0).unwrap();
    }
    let sink = Sink::new(a.common.out.clone());
    sink.primary(&to_pretty(&summary))?;
    sink.secondary("layers", "csv", &csv_with_meta(&m, &csv))
}

fn tau(a: &TauArgs) -> CliResult<()> {
    let trace = trace_from_json(&read_text(&a.trace)?)?;
    let mut csv = String::new();
    if a.matrix {
        let matrix = tau_matrix(&trace)?;
        csv.push_str("layer");
        for j in 1..=matrix.len() {
            write!(csv, ",{j}").unwrap();
        }
        csv.push('\n');
        for (i, row) in matrix.iter().enumerate() {
            write!(csv, "{}", i + 1).unwrap();
            for v in row {
                write!(csv, ",{v}").unwrap();
            }
            csv.push('\n');
        }
    } else {
        csv.push_str("pair,tau\n");
        for (i, v) in tau_series(&trace)?.values.iter().enumerate() {
            writeln!(csv, "{}-{},{v}", i + 1, i + 2).unwrap();
        }
    }
    let m = meta("tau", a.common.seed, a);
    Sink::new(a.common.out.clone()).primary(&csv_with_meta(&m, &csv))
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let oracle = load_oracle(&a.oracle)?;
    let schedule = match &a.schedule {
        Some(p) => load_schedule(p)?,
        None => KeepingSchedule::full(oracle.num_layers()),
    };
    let run = oracle.run(&schedule)?;
    let m = meta("simulate", a.common.seed, a);
    let report = json!({
        "score": run.score,
        "layer_recall": run.layer_recall,
        "kept_counts": run.kept_counts(),
        "rates": run.schedule.rates(),
        "meta": m,
    });
    let sink = Sink::new(a.common.out.clone());
    sink.primary(&to_pretty(&report))?;
    sink.secondary("trace", "json", &trace_to_json(oracle.trace(), Some(m)))
}

fn fit(a: &FitArgs) -> CliResult<()> {
    let schedule = load_schedule(&a.schedule)?;
    let fit = fit_psigmoid(&schedule)?;
    let p = fit.params;
    let fitted = schedule_from_params(&p);
    let report = json!({
        "b": p.b,
        "k": p.k,
        "alpha": p.alpha,
        "num_layers": p.num_layers,
        "residual": fit.residual,
        "fitted_rates": fitted.rates(),
        "meta": meta("fit", a.common.seed, a),
    });
    Sink::new(a.common.out.clone()).primary(&to_pretty(&report))
}

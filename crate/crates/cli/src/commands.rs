use std::fs::File;
use std::path::Path;

use anyhow::Context;
use budget_market::benchmarks::{
    compare, fit_local, mean_zone_improvement, read_forecasts, read_observations, records_from_reports, rmse,
    write_comparison_csv, write_forecasts, write_observations, BaselineConfig,
};
use budget_market::dataset::{split, write_csv, write_wide_csv, MarketFrame, SplitPolicy};
use budget_market::market::{
    run_rolling, run_session, write_bid_gain_csv, write_cumulative_gain_csv, write_forecasts_csv, write_reports_json,
    write_revenues_csv, write_summary_csv, BuyerTask, SessionConfig, SettlementReport,
};
use budget_market::solver::SolverConfig;
use budget_market::tuning::{tune, TuningTask};
use budget_market::Money;
use serde::Serialize;

use crate::config::{BenchmarkConfig, DataConfig, RunConfig};
use crate::manifest::OutputDir;
use crate::UsageError;

fn session_of(cfg: &RunConfig) -> Result<&SessionConfig, UsageError> {
    cfg.session.as_ref().ok_or_else(|| UsageError("configuration has no [session] section".into()))
}

pub fn synth(cfg: &RunConfig, seed: u64, out: &mut OutputDir) -> anyhow::Result<()> {
    let (frame, truth) = cfg.frame(seed)?;
    out.lap("synthesize");
    match cfg.data {
        DataConfig::HundredFeature { .. } | DataConfig::Advanced { .. } => {
            out.adopt("dataset.csv", |p| write_wide_csv(&frame, p))?
        }
        DataConfig::Zones { .. } | DataConfig::Csv { .. } => out.adopt("dataset.csv", |p| write_csv(&frame, p))?,
    }
    if let Some(truth) = truth {
        out.write("truth.json", |w| Ok(serde_json::to_writer_pretty(w, &truth)?))?;
    }
    out.lap("write");
    println!("{} rows, {} agents", frame.len(), frame.agents().len());
    Ok(())
}

#[derive(Serialize)]
struct TuningSummary {
    buyer: u32,
    budget: Money,
    degree: usize,
    knots: usize,
    lambda: f64,
    loss: f64,
    design_fits: usize,
    degenerate_folds: usize,
}

pub fn tune_command(cfg: &RunConfig, seed: u64, out: &mut OutputDir) -> anyhow::Result<()> {
    let session = session_of(cfg)?;
    let tuning = cfg.tuning.as_ref().ok_or_else(|| UsageError("configuration has no [tuning] section".into()))?;
    session.validate()?;
    let (frame, _) = cfg.frame(seed)?;
    out.lap("data");
    let task = BuyerTask::build(&frame, session, tuning.buyer)?;
    let launch = session.launch_row(&frame)?;
    let rows: Vec<usize> = (task.first_row..launch).collect();
    let stamps: Vec<_> = rows.iter().map(|&r| frame.timestamps()[r]).collect();
    let folds = split(&stamps, &SplitPolicy::KFold { k: tuning.folds })?;
    let scale = session.scale()?;
    let budget = match tuning.budget {
        Some(b) => scale.budget(b)?,
        None => task.specs.iter().map(|s| s.price).sum(),
    };
    let columns = task.pick(&rows, task.all());
    let target: Vec<f64> = rows.iter().map(|&r| task.target[r]).collect();
    let controls: Vec<usize> = task.own().collect();
    let solver = SolverConfig {
        tolerance: session.solver.tolerance,
        max_iter: session.solver.max_iter,
        scale,
        ..SolverConfig::new(0.0, budget)
    };
    let outcome = tune(
        &TuningTask { features: &task.specs, columns: &columns, target: &target, controls: &controls, folds: &folds, unit_target: false },
        budget,
        &tuning.grid,
        &solver,
    )?;
    out.lap("tune");
    out.write("tuning_table.csv", |w| outcome.write_csv(w))?;
    let summary = TuningSummary {
        buyer: tuning.buyer,
        budget,
        degree: outcome.best.degree,
        knots: outcome.best.knots,
        lambda: outcome.best.lambda,
        loss: outcome.best_loss,
        design_fits: outcome.design_fits,
        degenerate_folds: outcome.degenerate_folds,
    };
    out.write("best.json", |w| Ok(serde_json::to_writer_pretty(w, &summary)?))?;
    if outcome.degenerate_folds > 0 {
        out.warn([format!("{} degenerate folds skipped", outcome.degenerate_folds)]);
    }
    println!(
        "best D={} K={} lambda={} (mean loss {:.6})",
        summary.degree, summary.knots, summary.lambda, summary.loss
    );
    Ok(())
}

fn sessions(cfg: &RunConfig, frame: &MarketFrame, re_estimate: bool) -> anyhow::Result<Vec<Vec<SettlementReport>>> {
    let session = session_of(cfg)?;
    Ok(match cfg.rolling_plan(re_estimate) {
        Some(plan) => run_rolling(frame, session, &plan)?,
        None => vec![run_session(frame, session)?],
    })
}

fn write_session_outputs(rounds: &[Vec<SettlementReport>], out: &mut OutputDir) -> anyhow::Result<()> {
    let flat: Vec<SettlementReport> = rounds.iter().flatten().cloned().collect();
    out.write("reports.json", |w| write_reports_json(&flat, w))?;
    out.write("summary.csv", |w| write_summary_csv(&flat, w))?;
    out.write("revenues.csv", |w| write_revenues_csv(&flat, w))?;
    out.write("forecasts.csv", |w| write_forecasts_csv(&flat, w))?;
    out.write("bid_gain.csv", |w| write_bid_gain_csv(&flat, w))?;
    out.write("cumulative_gain.csv", |w| write_cumulative_gain_csv(rounds, w))?;
    out.warn(flat.iter().flat_map(|r| r.warnings.iter().map(move |w| format!("buyer {}: {w}", r.buyer))));
    Ok(())
}

pub fn run_session_command(cfg: &RunConfig, seed: u64, re_estimate: bool, out: &mut OutputDir) -> anyhow::Result<()> {
    session_of(cfg)?.validate()?;
    let (frame, _) = cfg.frame(seed)?;
    out.lap("data");
    let rounds = sessions(cfg, &frame, re_estimate)?;
    out.lap("sessions");
    write_session_outputs(&rounds, out)?;
    for r in rounds.iter().flatten() {
        println!(
            "buyer {} at {}: paid {}, estimated gain {:.2}%",
            r.buyer,
            r.launch,
            r.scale().format(r.payment),
            r.estimated_gain
        );
    }
    Ok(())
}

fn open(path: &Path) -> Result<File, UsageError> {
    File::open(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct BaselineRow {
    buyer: u32,
    degree: usize,
    knots: usize,
    lambda: f64,
    cv_rmse: f64,
    training_rmse: f64,
    test_rmse: Option<f64>,
}

pub fn benchmark(cfg: &RunConfig, seed: u64, re_estimate: bool, out: &mut OutputDir) -> anyhow::Result<()> {
    let bench = cfg.benchmark.clone().unwrap_or_default();
    let rows = match (&bench.local, &bench.market, &bench.observations) {
        (Some(l), Some(m), Some(o)) => {
            let (lf, mf, of) = (open(l)?, open(m)?, open(o)?);
            let local = read_forecasts(lf).with_context(|| l.display().to_string())?;
            let market = read_forecasts(mf).with_context(|| m.display().to_string())?;
            let actual = read_observations(of).with_context(|| o.display().to_string())?;
            out.lap("read");
            compare(&local, &market, &actual)?
        }
        (None, None, None) => {
            session_of(cfg)?.validate()?;
            let (frame, _) = cfg.frame(seed)?;
            out.lap("data");
            let rounds = sessions(cfg, &frame, re_estimate)?;
            out.lap("sessions");
            let flat: Vec<SettlementReport> = rounds.into_iter().flatten().collect();
            let (local, market, actual) = records_from_reports(&flat);
            out.write("forecasts_local.csv", |w| write_forecasts(&local, w))?;
            out.write("forecasts_market.csv", |w| write_forecasts(&market, w))?;
            out.write("observations.csv", |w| write_observations(&actual, w))?;
            if bench.baseline.is_some() {
                baselines(cfg, &bench, &frame, out)?;
                out.lap("baselines");
            }
            compare(&local, &market, &actual)?
        }
        _ => {
            return Err(UsageError("[benchmark] needs all of local, market and observations, or none".into()).into())
        }
    };
    out.write("comparison.csv", |w| write_comparison_csv(&rows, w))?;
    for r in rows.iter().filter(|r| r.horizon.is_none()) {
        println!("zone {}: local {:.5}, market {:.5}, improvement {:.2}%", r.zone, r.rmse_local, r.rmse_market, r.improvement);
    }
    println!("mean improvement {:.2}%", mean_zone_improvement(&rows));
    Ok(())
}

/// Refits each buyer's own-feature baseline on its history and scores it on
/// the forecast rows.
fn baselines(cfg: &RunConfig, bench: &BenchmarkConfig, frame: &MarketFrame, out: &mut OutputDir) -> anyhow::Result<()> {
    let session = session_of(cfg)?;
    let Some(kind) = bench.baseline else { return Ok(()) };
    let grid = cfg.tuning.as_ref().map(|t| t.grid.clone()).unwrap_or_default();
    let launch = session.launch_row(frame)?;
    let mut rows = Vec::new();
    for b in &session.buyers {
        let task = BuyerTask::build(frame, session, b.agent)?;
        let history: Vec<usize> = (task.first_row..launch).collect();
        let test: Vec<usize> = (launch..launch + session.horizon).collect();
        let y: Vec<f64> = history.iter().map(|&r| task.target[r]).collect();
        let fit = fit_local(&task.pick(&history, task.own()), &y, &BaselineConfig::new(kind, grid.clone()))?;
        let pred = fit.predict(&task.pick(&test, task.own()))?;
        let actual: Vec<f64> = test.iter().map(|&r| task.target[r]).collect();
        rows.push(BaselineRow {
            buyer: b.agent,
            degree: fit.hyperparameters.degree,
            knots: fit.hyperparameters.knots,
            lambda: fit.hyperparameters.lambda,
            cv_rmse: fit.cv_rmse,
            training_rmse: fit.training_rmse,
            test_rmse: actual.iter().all(|v| v.is_finite()).then(|| rmse(&actual, &pred)),
        });
    }
    out.write("baselines.json", |w| Ok(serde_json::to_writer_pretty(w, &rows)?))
}

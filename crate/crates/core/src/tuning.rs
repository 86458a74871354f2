//! Cross-validated grid search over spline degree, knot count and penalty.
//!
//! The transformer and filter depend only on `(D, K)` and the fold, so they
//! are fitted once per such triple and every `λ` reuses the result.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Fold;
use crate::error::{MarketError, Result};
use crate::money::Money;
use crate::solver::{LossKind, Problem, SolverConfig};
use crate::splines::{filter_select, FeatureMap, FeatureSpec, GroupedDesign, KnotPlacement, SplineConfig};

/// Feature map, filter masks and duplicate removal fitted on training rows.
#[derive(Debug, Clone)]
pub struct FittedDesign {
    pub map: FeatureMap,
    pub features: Vec<FeatureSpec>,
    /// Expanded training design with filter and duplicate masks applied.
    pub design: GroupedDesign,
    pub removed_duplicates: Vec<(usize, usize)>,
}

impl FittedDesign {
    /// `controls` are raw feature indices whose expanded columns condition
    /// the filter and are never filtered themselves.
    pub fn fit(
        features: &[FeatureSpec],
        columns: &[Vec<f64>],
        target: &[f64],
        controls: &[usize],
        spline: Option<SplineConfig>,
        alpha: f64,
    ) -> Result<FittedDesign> {
        let map = FeatureMap::fit(columns, spline)?;
        let mut design = map.expand(features, columns)?;
        if alpha < 1.0 {
            let control_columns: Vec<usize> =
                controls.iter().flat_map(|&f| design.groups()[f].columns.clone()).collect();
            design = filter_select(&design, target, &control_columns, alpha)?;
        }
        let removed_duplicates = design.deduplicate_groups();
        Ok(FittedDesign { map, features: features.to_vec(), design, removed_duplicates })
    }

    /// Expands new rows with the fitted map and masks.
    pub fn apply(&self, columns: &[Vec<f64>]) -> Result<GroupedDesign> {
        self.map.expand(&self.features, columns)?.with_masks_of(&self.design)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningGrid {
    pub degrees: Vec<usize>,
    pub knot_counts: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Filter significance; 1.0 disables the filter.
    pub alpha: f64,
    pub placement: KnotPlacement,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            degrees: (1..=7).collect(),
            knot_counts: (3..=30).collect(),
            lambdas: log_space(1e-3, 100.0, 10),
            alpha: 0.05,
            placement: KnotPlacement::Quantile,
        }
    }
}

/// `n` points evenly spaced in log scale from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
        }
    }
}

impl TuningGrid {
    pub fn single(degree: usize, knots: usize, lambda: f64) -> Self {
        TuningGrid {
            degrees: vec![degree],
            knot_counts: vec![knots],
            lambdas: vec![lambda],
            ..TuningGrid::default()
        }
    }

    /// Sorted, de-duplicated copy; rejects empty or invalid sets.
    pub fn normalized(&self) -> Result<TuningGrid> {
        let mut g = self.clone();
        g.degrees.sort_unstable();
        g.degrees.dedup();
        g.knot_counts.sort_unstable();
        g.knot_counts.dedup();
        if g.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(MarketError::Config("lambda values must be finite and non-negative".into()));
        }
        g.lambdas.sort_by(f64::total_cmp);
        g.lambdas.dedup();
        if g.degrees.is_empty() || g.knot_counts.is_empty() || g.lambdas.is_empty() {
            return Err(MarketError::Config("tuning grid has an empty axis".into()));
        }
        if !(g.alpha > 0.0) {
            return Err(MarketError::Config(format!("filter alpha must be positive, got {}", g.alpha)));
        }
        for &d in &g.degrees {
            for &k in &g.knot_counts {
                SplineConfig::new(d, k, g.placement)?;
            }
        }
        Ok(g)
    }
}

/// Training data for one tuning run.
#[derive(Debug, Clone, Copy)]
pub struct TuningTask<'a> {
    pub features: &'a [FeatureSpec],
    pub columns: &'a [Vec<f64>],
    pub target: &'a [f64],
    pub controls: &'a [usize],
    pub folds: &'a [Fold],
    /// Clip squared-loss forecasts to [0, 1] when scoring.
    pub unit_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub degree: usize,
    pub knots: usize,
    pub lambda: f64,
    pub fold: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub degree: usize,
    pub knots: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub best: Hyperparameters,
    /// Mean validation loss of `best` over the usable folds.
    pub best_loss: f64,
    pub table: Vec<LossRow>,
    /// Transformer + filter fits performed, one per `(D, K, fold)`.
    pub design_fits: usize,
    pub degenerate_folds: usize,
}

impl TuningOutcome {
    /// Mean loss per `(D, K, λ)` over folds present in the table.
    pub fn mean_losses(&self) -> Vec<(Hyperparameters, f64)> {
        let mut out: Vec<(Hyperparameters, f64, usize)> = Vec::new();
        for r in &self.table {
            match out
                .iter_mut()
                .find(|(h, _, _)| h.degree == r.degree && h.knots == r.knots && h.lambda == r.lambda)
            {
                Some(e) => {
                    e.1 += r.loss;
                    e.2 += 1;
                }
                None => out.push((Hyperparameters { degree: r.degree, knots: r.knots, lambda: r.lambda }, r.loss, 1)),
            }
        }
        out.into_iter().map(|(h, s, n)| (h, s / n as f64)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["D", "K", "lambda", "fold", "loss"])?;
        for r in &self.table {
            w.write_record([
                r.degree.to_string(),
                r.knots.to_string(),
                format!("{:?}", r.lambda),
                r.fold.to_string(),
                format!("{:?}", r.loss),
            ])?;
        }
        w.flush().map_err(|e| MarketError::io("<tuning table>", e))?;
        Ok(())
    }
}

/// Grid search at one bid. `solver` supplies tolerance, iteration cap and
/// loss; its `lambda` and `budget` are replaced.
pub fn tune(task: &TuningTask<'_>, budget: Money, grid: &TuningGrid, solver: &SolverConfig) -> Result<TuningOutcome> {
    let grid = grid.normalized()?;
    if task.folds.len() < 2 {
        return Err(MarketError::Config(format!("tuning needs at least 2 folds, got {}", task.folds.len())));
    }
    let fits = AtomicUsize::new(0);
    let jobs: Vec<(usize, usize, usize)> = grid
        .degrees
        .iter()
        .flat_map(|&d| grid.knot_counts.iter().flat_map(move |&k| (0..task.folds.len()).map(move |f| (d, k, f))))
        .collect();

    let results: Vec<Option<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(d, k, f)| {
            fits.fetch_add(1, Ordering::Relaxed);
            let spline = SplineConfig::new(d, k, grid.placement).ok()?;
            fold_losses(task, &task.folds[f], spline, &grid, budget, solver)
                .map_err(|e| log::debug!("fold {f} at D={d} K={k} unusable: {e}"))
                .ok()
        })
        .collect();

    let mut table = Vec::new();
    let mut degenerate_folds = 0;
    for (&(d, k, f), res) in jobs.iter().zip(&results) {
        match res {
            Some(losses) => {
                for (&lambda, &loss) in grid.lambdas.iter().zip(losses) {
                    table.push(LossRow { degree: d, knots: k, lambda, fold: f, loss });
                }
            }
            None => degenerate_folds += 1,
        }
    }
    if table.is_empty() {
        return Err(MarketError::Tuning("every fold was degenerate".into()));
    }

    let mut outcome = TuningOutcome {
        best: Hyperparameters { degree: 0, knots: 0, lambda: 0.0 },
        best_loss: f64::INFINITY,
        table,
        design_fits: fits.into_inner(),
        degenerate_folds,
    };
    // simplest first: small D, small K, large λ; later entries must beat strictly
    let mut candidates = outcome.mean_losses();
    candidates.sort_by(|a, b| {
        (a.0.degree, a.0.knots)
            .cmp(&(b.0.degree, b.0.knots))
            .then(b.0.lambda.total_cmp(&a.0.lambda))
    });
    for (h, loss) in candidates {
        if loss < outcome.best_loss {
            outcome.best = h;
            outcome.best_loss = loss;
        }
    }
    Ok(outcome)
}

/// Validation loss for every λ on one fold at fixed `(D, K)`.
fn fold_losses(
    task: &TuningTask<'_>,
    fold: &Fold,
    spline: SplineConfig,
    grid: &TuningGrid,
    budget: Money,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    if fold.train.is_empty() || fold.validation.is_empty() {
        return Err(MarketError::Degenerate("empty fold".into()));
    }
    let pick = |rows: &[usize]| -> Vec<Vec<f64>> {
        task.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect()
    };
    let y_train: Vec<f64> = fold.train.iter().map(|&r| task.target[r]).collect();
    let y_val: Vec<f64> = fold.validation.iter().map(|&r| task.target[r]).collect();
    let fitted = FittedDesign::fit(task.features, &pick(&fold.train), &y_train, task.controls, Some(spline), grid.alpha)?;
    let val_design = fitted.apply(&pick(&fold.validation))?;
    let problem = Problem::new(&fitted.design, &y_train, solver.loss)?;

    // large λ first: each solution is sparse and feasible, a good warm start
    let mut losses = vec![0.0; grid.lambdas.len()];
    let mut warm: Option<Vec<f64>> = None;
    for (i, &lambda) in grid.lambdas.iter().enumerate().rev() {
        let cfg = SolverConfig { lambda, budget, ..*solver };
        let fit = problem.solve(&cfg, warm.as_deref())?;
        let pred = fit.coefficients.predict(val_design.matrix(), task.unit_target)?;
        losses[i] = validation_loss(&y_val, &pred, solver.loss);
        warm = Some(problem.embed(&fit.coefficients.values));
    }
    Ok(losses)
}

/// Mean squared error, or mean log-loss for probabilities with ±1 labels.
pub fn validation_loss(y: &[f64], pred: &[f64], loss: LossKind) -> f64 {
    let n = y.len() as f64;
    match loss {
        LossKind::Squared => y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
        LossKind::Logistic => {
            y.iter()
                .zip(pred)
                .map(|(&label, &p)| {
                    let p = p.clamp(1e-15, 1.0 - 1e-15);
                    if label > 0.0 { -p.ln() } else { -(1.0 - p).ln() }
                })
                .sum::<f64>()
                / n
        }
    }
}

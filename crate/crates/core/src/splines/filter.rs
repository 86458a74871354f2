//! Partial Pearson correlation screening of design columns.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::GroupedDesign;
use crate::error::{MarketError, Result};

/// Two-sided p-value of each live non-control column's partial correlation
/// with `target` given `controls` (and an intercept). Entries are `None` for
/// controls, inactive columns and columns the controls explain completely.
pub fn partial_correlation_pvalues(
    design: &GroupedDesign,
    target: &[f64],
    controls: &[usize],
) -> Result<Vec<Option<f64>>> {
    let t = design.n_rows();
    if target.len() != t {
        return Err(MarketError::Shape {
            expected: format!("{t} target values"),
            actual: target.len().to_string(),
        });
    }
    if let Some(&bad) = controls.iter().find(|&&c| c >= design.n_columns()) {
        return Err(MarketError::Filter(format!("control column {bad} not in design")));
    }
    if target.iter().all(|&v| v == target[0]) {
        return Err(MarketError::Filter(
            "target is constant; partial correlations are undefined".into(),
        ));
    }

    let live_controls: Vec<usize> = controls.iter().copied().filter(|&c| design.is_live(c)).collect();
    let basis = orthonormal_basis(design, &live_controls);
    // intercept accounts for one basis vector; the rest are controls
    let c = basis.ncols() - 1;
    let dof = t as f64 - 2.0 - c as f64;
    if dof <= 0.0 {
        return Err(MarketError::Filter(format!(
            "{t} rows leave no degrees of freedom after {c} controls"
        )));
    }
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| MarketError::Filter(e.to_string()))?;

    let residualize = |v: DVector<f64>| -> DVector<f64> {
        let coef = basis.tr_mul(&v);
        v - &basis * coef
    };
    let ry = residualize(DVector::from_column_slice(target));
    let ry_norm = ry.norm();
    let y_scale = DVector::from_column_slice(target).norm().max(1.0);
    if ry_norm <= 1e-12 * y_scale {
        return Err(MarketError::Filter(
            "controls explain the target exactly; partial correlations are undefined".into(),
        ));
    }

    let is_control: Vec<bool> = {
        let mut m = vec![false; design.n_columns()];
        for &c in controls {
            m[c] = true;
        }
        m
    };
    let mut out = vec![None; design.n_columns()];
    for col in 0..design.n_columns() {
        if is_control[col] || !design.is_live(col) {
            continue;
        }
        let x = design.matrix().column(col).into_owned();
        let x_scale = x.norm().max(1e-300);
        let rx = residualize(x);
        let rx_norm = rx.norm();
        if rx_norm <= 1e-10 * x_scale {
            continue;
        }
        let r = (rx.dot(&ry) / (rx_norm * ry_norm)).clamp(-1.0, 1.0);
        let p = if 1.0 - r * r <= f64::EPSILON {
            0.0
        } else {
            let stat = r * (dof / (1.0 - r * r)).sqrt();
            (2.0 * dist.sf(stat.abs())).min(1.0)
        };
        out[col] = Some(p);
    }
    Ok(out)
}

/// Deactivates every live non-control column whose p-value is at least
/// `alpha`, plus columns the controls span exactly. `alpha >= 1` keeps all.
pub fn filter_select(
    design: &GroupedDesign,
    target: &[f64],
    controls: &[usize],
    alpha: f64,
) -> Result<GroupedDesign> {
    if !(alpha > 0.0) || alpha.is_nan() {
        return Err(MarketError::Config(format!("filter alpha must be positive, got {alpha}")));
    }
    let mut out = design.clone();
    if alpha >= 1.0 {
        return Ok(out);
    }
    let pvalues = partial_correlation_pvalues(design, target, controls)?;
    let is_control = |c: usize| controls.contains(&c);
    for col in 0..design.n_columns() {
        if is_control(col) || !design.is_live(col) {
            continue;
        }
        match pvalues[col] {
            Some(p) if p < alpha => {}
            _ => out.deactivate_column(col),
        }
    }
    Ok(out)
}

/// Orthonormal basis of span{1, controls} from a thin SVD, rank-revealing.
fn orthonormal_basis(design: &GroupedDesign, controls: &[usize]) -> DMatrix<f64> {
    let t = design.n_rows();
    let mut a = DMatrix::zeros(t, controls.len() + 1);
    a.column_mut(0).fill(1.0);
    for (j, &c) in controls.iter().enumerate() {
        a.column_mut(j + 1).copy_from(&design.matrix().column(c));
    }
    let svd = a.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (t.max(controls.len() + 1) as f64);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    u.select_columns(&keep)
}

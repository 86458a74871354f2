//! B-spline feature expansion and partial-correlation screening.
//!
//! Every raw market feature becomes a *group* of `M = D + K + 1` basis columns.
//! Groups carry their owner and posted price so the solver can charge for a
//! feature once, however many of its columns end up in the model.

mod basis;
mod filter;

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSource;
use crate::error::{MarketError, Result};
use crate::money::Money;

pub use basis::KnotVector;
pub use filter::{filter_select, partial_correlation_pvalues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    Quantile,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplineConfig {
    pub degree: usize,
    pub knots: usize,
    pub placement: KnotPlacement,
}

impl SplineConfig {
    pub fn new(degree: usize, knots: usize, placement: KnotPlacement) -> Result<Self> {
        let c = SplineConfig {
            degree,
            knots,
            placement,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 || self.knots < 2 {
            return Err(MarketError::Config(format!(
                "spline degree must be >= 1 and knot count >= 2, got D={} K={}",
                self.degree, self.knots
            )));
        }
        Ok(())
    }

    /// Basis columns per feature.
    pub fn n_basis(&self) -> usize {
        self.degree + self.knots + 1
    }
}

/// Ownership and price of one raw feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub owner: u32,
    pub source: FeatureSource,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub group_id: usize,
    pub owner: u32,
    pub source: FeatureSource,
    pub price: Money,
    pub columns: Range<usize>,
    pub active: bool,
}

/// Expanded design matrix with its column→group map.
///
/// Deactivation only flips masks, so column indices stay stable for the
/// lifetime of the design.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesign {
    matrix: DMatrix<f64>,
    groups: Vec<GroupInfo>,
    column_group: Vec<usize>,
    column_active: Vec<bool>,
}

impl GroupedDesign {
    pub fn new(matrix: DMatrix<f64>, groups: Vec<GroupInfo>) -> Result<Self> {
        let mut column_group = Vec::with_capacity(matrix.ncols());
        for (g, info) in groups.iter().enumerate() {
            if info.group_id != g || info.columns.start != column_group.len() {
                return Err(MarketError::Shape {
                    expected: format!("group {g} starting at column {}", column_group.len()),
                    actual: format!("group {} at {:?}", info.group_id, info.columns),
                });
            }
            column_group.extend(std::iter::repeat_n(g, info.columns.len()));
        }
        if column_group.len() != matrix.ncols() {
            return Err(MarketError::Shape {
                expected: format!("{} columns covered by groups", matrix.ncols()),
                actual: column_group.len().to_string(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(MarketError::Numeric("design contains non-finite entries".into()));
        }
        let column_active = vec![true; matrix.ncols()];
        Ok(GroupedDesign {
            matrix,
            groups,
            column_group,
            column_active,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn groups(&self) -> &[GroupInfo] {
        &self.groups
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn group_of_column(&self, column: usize) -> usize {
        self.column_group[column]
    }

    /// Column participates in the solver view.
    pub fn is_live(&self, column: usize) -> bool {
        self.column_active[column] && self.groups[self.column_group[column]].active
    }

    pub fn live_columns(&self) -> Vec<usize> {
        (0..self.n_columns()).filter(|&c| self.is_live(c)).collect()
    }

    pub fn deactivate_group(&mut self, group: usize) {
        self.groups[group].active = false;
    }

    /// Switches one column off; its group dies with its last live column.
    pub fn deactivate_column(&mut self, column: usize) {
        self.column_active[column] = false;
        let g = self.column_group[column];
        if !self.groups[g].columns.clone().any(|c| self.column_active[c]) {
            self.groups[g].active = false;
        }
    }

    pub fn set_price(&mut self, group: usize, price: Money) {
        self.groups[group].price = price;
    }

    /// Sum of prices over active groups.
    pub fn total_price(&self) -> Money {
        self.groups.iter().filter(|g| g.active).map(|g| g.price).sum()
    }

    /// Same groups and masks restricted to the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> GroupedDesign {
        GroupedDesign {
            matrix: self.matrix.select_rows(rows),
            groups: self.groups.clone(),
            column_group: self.column_group.clone(),
            column_active: self.column_active.clone(),
        }
    }

    /// Replaces the data rows, keeping groups and masks.
    pub fn with_matrix(&self, matrix: DMatrix<f64>) -> Result<GroupedDesign> {
        if matrix.ncols() != self.n_columns() {
            return Err(MarketError::Shape {
                expected: format!("{} columns", self.n_columns()),
                actual: matrix.ncols().to_string(),
            });
        }
        Ok(GroupedDesign {
            matrix,
            groups: self.groups.clone(),
            column_group: self.column_group.clone(),
            column_active: self.column_active.clone(),
        })
    }

    /// Copies the activity masks of `other` (same layout) onto this design.
    pub fn with_masks_of(mut self, other: &GroupedDesign) -> Result<GroupedDesign> {
        if other.column_group != self.column_group {
            return Err(MarketError::Shape {
                expected: "identical group layout".into(),
                actual: "different layout".into(),
            });
        }
        self.column_active = other.column_active.clone();
        for (g, o) in self.groups.iter_mut().zip(&other.groups) {
            g.active = o.active;
        }
        Ok(self)
    }

    /// Deactivates groups whose live columns exactly repeat another active
    /// group's. The cheapest copy survives; equal prices keep the lower id.
    /// Returns `(removed, kept)` pairs.
    pub fn deduplicate_groups(&mut self) -> Vec<(usize, usize)> {
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut order: Vec<usize> = (0..self.groups.len()).filter(|&g| self.groups[g].active).collect();
        order.sort_by_key(|&g| (self.groups[g].price, g));
        let mut removed = Vec::new();
        for g in order {
            let mut key = Vec::new();
            for c in self.groups[g].columns.clone() {
                if self.column_active[c] {
                    key.push(c as u64 - self.groups[g].columns.start as u64);
                    key.extend(self.matrix.column(c).iter().map(|v| v.to_bits()));
                }
            }
            key.push(self.groups[g].columns.len() as u64);
            match seen.get(&key) {
                Some(&keep) => {
                    self.groups[g].active = false;
                    removed.push((g, keep));
                }
                None => {
                    seen.insert(key, g);
                }
            }
        }
        removed.sort_unstable();
        removed
    }
}

/// Per-feature column map fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// One column per feature; constant training columns are dropped.
    Identity { constant: Vec<bool> },
    Spline(SplineTransformer),
}

impl FeatureMap {
    pub fn fit(columns: &[Vec<f64>], config: Option<SplineConfig>) -> Result<FeatureMap> {
        match config {
            Some(c) => Ok(FeatureMap::Spline(SplineTransformer::fit(columns, c)?)),
            None => Ok(FeatureMap::Identity {
                constant: columns
                    .iter()
                    .map(|col| col.iter().all(|&v| v == col[0]))
                    .collect(),
            }),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            FeatureMap::Identity { constant } => constant.len(),
            FeatureMap::Spline(t) => t.knots.len(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            FeatureMap::Identity { .. } => 1,
            FeatureMap::Spline(t) => t.config.n_basis(),
        }
    }

    pub fn is_degenerate(&self, feature: usize) -> bool {
        match self {
            FeatureMap::Identity { constant } => constant[feature],
            FeatureMap::Spline(t) => t.knots[feature].is_degenerate(),
        }
    }

    /// Expands raw columns (all of equal length) into a design block.
    pub fn transform(&self, columns: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if columns.len() != self.n_features() {
            return Err(MarketError::Shape {
                expected: format!("{} feature columns", self.n_features()),
                actual: columns.len().to_string(),
            });
        }
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(MarketError::Shape {
                expected: format!("{rows} rows"),
                actual: bad.len().to_string(),
            });
        }
        let m = self.width();
        let mut out = DMatrix::zeros(rows, columns.len() * m);
        match self {
            FeatureMap::Identity { .. } => {
                for (j, col) in columns.iter().enumerate() {
                    out.column_mut(j).copy_from_slice(col);
                }
            }
            FeatureMap::Spline(t) => {
                let mut buf = vec![0.0; m];
                for (j, (col, kv)) in columns.iter().zip(&t.knots).enumerate() {
                    for (r, &x) in col.iter().enumerate() {
                        kv.eval_into(t.config.degree, x, &mut buf);
                        for (i, &v) in buf.iter().enumerate() {
                            out[(r, j * m + i)] = v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Builds the grouped design for `features`, marking degenerate features
    /// inactive.
    pub fn expand(&self, features: &[FeatureSpec], columns: &[Vec<f64>]) -> Result<GroupedDesign> {
        if features.len() != columns.len() {
            return Err(MarketError::Shape {
                expected: format!("{} feature specs", columns.len()),
                actual: features.len().to_string(),
            });
        }
        let matrix = self.transform(columns)?;
        let m = self.width();
        let groups = features
            .iter()
            .enumerate()
            .map(|(g, f)| GroupInfo {
                group_id: g,
                owner: f.owner,
                source: f.source,
                price: f.price,
                columns: g * m..(g + 1) * m,
                active: !self.is_degenerate(g),
            })
            .collect();
        GroupedDesign::new(matrix, groups)
    }
}

/// Fitted spline transformer: one knot vector per raw feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineTransformer {
    pub config: SplineConfig,
    pub knots: Vec<KnotVector>,
}

impl SplineTransformer {
    pub fn fit(columns: &[Vec<f64>], config: SplineConfig) -> Result<Self> {
        config.validate()?;
        let knots = columns.iter().map(|c| KnotVector::fit(c, &config)).collect();
        Ok(SplineTransformer { config, knots })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: SplineTransformer = serde_json::from_str(text)?;
        t.config.validate()?;
        if let Some(bad) = t.knots.iter().find(|k| k.interior.len() != t.config.knots) {
            return Err(MarketError::Schema(format!(
                "knot vector has {} interior knots, config says {}",
                bad.interior.len(),
                t.config.knots
            )));
        }
        Ok(t)
    }

    /// Features whose knots fell back to uniform placement.
    pub fn fallbacks(&self) -> Vec<usize> {
        self.knots
            .iter()
            .enumerate()
            .filter(|(_, k)| k.fallback)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Fits spline knots on `columns` and returns the expanded grouped design.
pub fn fit_transform(
    features: &[FeatureSpec],
    columns: &[Vec<f64>],
    config: SplineConfig,
) -> Result<(GroupedDesign, SplineTransformer)> {
    let transformer = SplineTransformer::fit(columns, config)?;
    let design = FeatureMap::Spline(transformer.clone()).expand(features, columns)?;
    Ok((design, transformer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs(n: usize) -> Vec<FeatureSpec> {
        (0..n)
            .map(|k| FeatureSpec {
                owner: k as u32 + 1,
                source: FeatureSource::Exogenous(0),
                price: Money::from_units(100),
            })
            .collect()
    }

    fn col(n: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..n).map(f).collect()
    }

    #[test]
    fn d3_k5_gives_nine_columns() {
        let c = SplineConfig::new(3, 5, KnotPlacement::Quantile).unwrap();
        assert_eq!(c.n_basis(), 9);
        let (d, _) = fit_transform(&specs(1), &[col(50, |i| i as f64)], c).unwrap();
        assert_eq!(d.n_columns(), 9);
    }

    #[test]
    fn d1_k2_partition_of_unity() {
        let c = SplineConfig::new(1, 2, KnotPlacement::Uniform).unwrap();
        let (d, _) = fit_transform(&specs(1), &[col(10, |i| (i * i) as f64)], c).unwrap();
        assert_eq!(d.n_columns(), 4);
        for r in 0..10 {
            let s: f64 = d.matrix().row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn two_features_two_groups() {
        let c = SplineConfig::new(2, 3, KnotPlacement::Quantile).unwrap();
        let cols = [col(30, |i| i as f64), col(30, |i| (i as f64).cos())];
        let (d, _) = fit_transform(&specs(2), &cols, c).unwrap();
        assert_eq!(d.n_columns(), 12);
        assert_eq!(d.groups()[0].columns, 0..6);
        assert_eq!(d.groups()[1].columns, 6..12);
        assert!((0..12).all(|c| d.group_of_column(c) == c / 6));
    }

    #[test]
    fn transform_reproduces_training_and_handles_empty() {
        let c = SplineConfig::new(2, 4, KnotPlacement::Quantile).unwrap();
        let cols = [col(40, |i| (i as f64 * 0.3).sin())];
        let (d, t) = fit_transform(&specs(1), &cols, c).unwrap();
        let map = FeatureMap::Spline(t);
        assert_eq!(&map.transform(&cols).unwrap(), d.matrix());
        let empty = map.transform(&[vec![]]).unwrap();
        assert_eq!((empty.nrows(), empty.ncols()), (0, 7));
        assert!(matches!(map.transform(&[]), Err(MarketError::Shape { .. })));
    }

    #[test]
    fn constant_feature_is_inactive() {
        let c = SplineConfig::new(1, 2, KnotPlacement::Quantile).unwrap();
        let cols = [vec![3.0; 20], col(20, |i| i as f64)];
        let (d, _) = fit_transform(&specs(2), &cols, c).unwrap();
        assert!(!d.groups()[0].active);
        assert!(d.groups()[1].active);
        assert_eq!(d.live_columns(), (4..8).collect::<Vec<_>>());
    }

    #[test]
    fn knots_round_trip_through_json() {
        let c = SplineConfig::new(3, 3, KnotPlacement::Quantile).unwrap();
        let t = SplineTransformer::fit(&[col(25, |i| i as f64 / 3.0)], c).unwrap();
        let back = SplineTransformer::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn deactivation_keeps_column_ranges() {
        let map = FeatureMap::fit(&[col(5, |i| i as f64), col(5, |i| 2.0 * i as f64)], None).unwrap();
        let mut d = map.expand(&specs(2), &[col(5, |i| i as f64), col(5, |i| 2.0 * i as f64)]).unwrap();
        d.deactivate_column(0);
        assert!(!d.groups()[0].active);
        assert_eq!(d.groups()[1].columns, 1..2);
        assert_eq!(d.live_columns(), vec![1]);
    }

    #[test]
    fn duplicates_keep_the_cheapest() {
        let x = col(8, |i| (i as f64).sin());
        let cols = vec![x.clone(), col(8, |i| i as f64), x.clone(), x];
        let mut fs = specs(4);
        fs[0].price = Money::from_units(110);
        let map = FeatureMap::fit(&cols, None).unwrap();
        let mut d = map.expand(&fs, &cols).unwrap();
        let removed = d.deduplicate_groups();
        assert_eq!(removed, vec![(0, 2), (3, 2)]);
        assert_eq!(d.groups().iter().filter(|g| g.active).count(), 2);
    }
}

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Last `fraction` of the rows validate, the rest train.
    Holdout { fraction: f64 },
    /// Calendar-month windows stepped by `test_months`.
    SlidingWindow { train_months: usize, test_months: usize },
    /// `k` contiguous validation blocks.
    KFold { k: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

pub fn split(timestamps: &[NaiveDateTime], policy: &SplitPolicy) -> Result<Vec<Fold>> {
    let n = timestamps.len();
    match *policy {
        SplitPolicy::Holdout { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(MarketError::Range(format!(
                    "holdout fraction must be in (0, 1), got {fraction}"
                )));
            }
            let n_val = ((n as f64) * fraction).ceil() as usize;
            if n_val == 0 || n_val >= n {
                return Err(MarketError::Range(format!(
                    "holdout of {fraction} leaves an empty side on {n} rows"
                )));
            }
            Ok(vec![Fold {
                train: (0..n - n_val).collect(),
                validation: (n - n_val..n).collect(),
            }])
        }
        SplitPolicy::KFold { k } => {
            if k < 2 || k > n {
                return Err(MarketError::Range(format!("{k}-fold split on {n} rows")));
            }
            let base = n / k;
            let extra = n % k;
            let mut start = 0;
            let mut folds = Vec::with_capacity(k);
            for i in 0..k {
                let len = base + usize::from(i < extra);
                let end = start + len;
                folds.push(Fold {
                    train: (0..start).chain(end..n).collect(),
                    validation: (start..end).collect(),
                });
                start = end;
            }
            Ok(folds)
        }
        SplitPolicy::SlidingWindow {
            train_months,
            test_months,
        } => {
            if train_months == 0 || test_months == 0 {
                return Err(MarketError::Range("sliding windows need non-zero months".into()));
            }
            let month_of = |ts: &NaiveDateTime| ts.year() as i64 * 12 + ts.month0() as i64;
            let mut months: Vec<i64> = timestamps.iter().map(month_of).collect();
            months.dedup();
            if months.len() < train_months + test_months {
                return Err(MarketError::Range(format!(
                    "{} months of data cannot hold {train_months}+{test_months} month windows",
                    months.len()
                )));
            }
            let mut folds = Vec::new();
            let mut first = 0;
            while first + train_months + test_months <= months.len() {
                let train_set = &months[first..first + train_months];
                let test_set = &months[first + train_months..first + train_months + test_months];
                let pick = |set: &[i64]| -> Vec<usize> {
                    timestamps
                        .iter()
                        .enumerate()
                        .filter(|(_, ts)| set.contains(&month_of(ts)))
                        .map(|(i, _)| i)
                        .collect()
                };
                folds.push(Fold {
                    train: pick(train_set),
                    validation: pick(test_set),
                });
                first += test_months;
            }
            Ok(folds)
        }
    }
}

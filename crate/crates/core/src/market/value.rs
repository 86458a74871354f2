use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// A buyer's maximum willingness to pay as a function of forecast gain (in
/// percent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueFunction {
    Constant { value: f64 },
    Linear { slope: f64 },
    /// `numerator / (pole − g) + offset`, defined only for `g < pole`.
    Rational { numerator: f64, pole: f64, offset: f64 },
    /// `(gain, bid)` points, linearly interpolated and held flat outside.
    Tabulated { points: Vec<(f64, f64)> },
}

impl ValueFunction {
    /// The four value functions of the wind case study, numbered 1 to 4.
    pub fn case_study(index: usize) -> Result<ValueFunction> {
        Ok(match index {
            1 => ValueFunction::Constant { value: 100.0 },
            2 => ValueFunction::Constant { value: 10.0 },
            3 => ValueFunction::Linear { slope: 1.0 },
            4 => ValueFunction::Rational { numerator: 40.0, pole: 30.0, offset: -1.1 },
            _ => return Err(MarketError::Config(format!("no case-study value function {index}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(MarketError::Config(format!("value function {what} must be finite")))
            }
        };
        match self {
            ValueFunction::Constant { value } => finite(*value, "value"),
            ValueFunction::Linear { slope } => finite(*slope, "slope"),
            ValueFunction::Rational { numerator, pole, offset } => {
                finite(*numerator, "numerator")?;
                finite(*pole, "pole")?;
                finite(*offset, "offset")
            }
            ValueFunction::Tabulated { points } => {
                if points.is_empty() {
                    return Err(MarketError::Config("tabulated value function needs points".into()));
                }
                for &(g, b) in points {
                    finite(g, "gain")?;
                    finite(b, "bid")?;
                }
                if points.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(MarketError::Config("tabulated gains must be strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    /// Willingness to pay at `gain`; `None` where the function is undefined.
    pub fn evaluate(&self, gain: f64) -> Option<f64> {
        match self {
            ValueFunction::Constant { value } => Some(*value),
            ValueFunction::Linear { slope } => Some(slope * gain),
            ValueFunction::Rational { numerator, pole, offset } => {
                (gain < *pole).then(|| numerator / (pole - gain) + offset)
            }
            ValueFunction::Tabulated { points } => {
                let first = points.first()?;
                let last = points.last()?;
                if gain <= first.0 {
                    return Some(first.1);
                }
                if gain >= last.0 {
                    return Some(last.1);
                }
                let i = points.partition_point(|p| p.0 <= gain);
                let (g0, b0) = points[i - 1];
                let (g1, b1) = points[i];
                Some(b0 + (b1 - b0) * (gain - g0) / (g1 - g0))
            }
        }
    }

    /// Whether a bid is acceptable at the given gain.
    pub fn accepts(&self, bid: f64, gain: f64) -> bool {
        self.evaluate(gain).is_some_and(|v| bid <= v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_study_functions() {
        assert_eq!(ValueFunction::case_study(1).unwrap().evaluate(3.0), Some(100.0));
        assert_eq!(ValueFunction::case_study(3).unwrap().evaluate(12.5), Some(12.5));
        let vf4 = ValueFunction::case_study(4).unwrap();
        assert!((vf4.evaluate(10.0).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(vf4.evaluate(30.0), None);
        assert_eq!(vf4.evaluate(45.0), None);
        assert!(ValueFunction::case_study(5).is_err());
    }

    #[test]
    fn tabulated_interpolates_and_holds() {
        let vf = ValueFunction::Tabulated { points: vec![(0.0, 0.0), (10.0, 20.0), (20.0, 25.0)] };
        vf.validate().unwrap();
        assert_eq!(vf.evaluate(-1.0), Some(0.0));
        assert_eq!(vf.evaluate(5.0), Some(10.0));
        assert_eq!(vf.evaluate(15.0), Some(22.5));
        assert_eq!(vf.evaluate(99.0), Some(25.0));
        let bad = ValueFunction::Tabulated { points: vec![(1.0, 0.0), (1.0, 2.0)] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn serde_tagging() {
        let vf: ValueFunction = serde_json::from_str(r#"{"kind":"rational","numerator":40,"pole":30,"offset":-1.1}"#).unwrap();
        assert_eq!(vf, ValueFunction::case_study(4).unwrap());
    }
}

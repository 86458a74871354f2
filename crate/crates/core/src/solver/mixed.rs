//! Exhaustive solver for models with product (interaction) terms.
//!
//! A term such as `x₁·x₂` needs every feature it touches, and a feature is
//! paid for once however many terms use it. With at most 20 priced features
//! all affordable feature sets can be enumerated directly.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{MarketError, Result};
use crate::money::Money;

const MAX_FEATURES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductTerm {
    pub values: Vec<f64>,
    /// Features the term is built from.
    pub uses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedFit {
    /// One coefficient per term; zero for terms outside the chosen set.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub used_features: Vec<bool>,
    pub cost: Money,
    /// `(1/T) Σ (y − ŷ)²`
    pub loss: f64,
}

pub fn fit_mixed_effects(terms: &[ProductTerm], target: &[f64], prices: &[Money], budget: Money) -> Result<MixedFit> {
    let n_features = prices.len();
    if n_features > MAX_FEATURES {
        return Err(MarketError::Config(format!(
            "{n_features} priced features; exhaustive search supports at most {MAX_FEATURES}"
        )));
    }
    let t = target.len();
    if t == 0 {
        return Err(MarketError::Degenerate("empty target".into()));
    }
    if terms.len() > 63 {
        return Err(MarketError::Config("at most 63 product terms".into()));
    }
    let mut term_masks = Vec::with_capacity(terms.len());
    for (i, term) in terms.iter().enumerate() {
        if term.values.len() != t {
            return Err(MarketError::Shape { expected: format!("{t} rows"), actual: term.values.len().to_string() });
        }
        let mut mask = 0u32;
        for &f in &term.uses {
            if f >= n_features {
                return Err(MarketError::Schema(format!("term {i} uses unknown feature {f}")));
            }
            mask |= 1 << f;
        }
        term_masks.push(mask);
    }

    let y = DVector::from_column_slice(target);
    let mut cache: HashMap<u64, (Vec<f64>, f64, f64)> = HashMap::new();
    let mut best: Option<MixedFit> = None;
    for subset in 0u32..(1u32 << n_features) {
        let price: Money = (0..n_features).filter(|&f| subset >> f & 1 == 1).map(|f| prices[f]).sum();
        if price > budget {
            continue;
        }
        let covered: u64 = term_masks
            .iter()
            .enumerate()
            .filter(|(_, &m)| m & !subset == 0)
            .fold(0, |acc, (i, _)| acc | 1 << i);
        let (coef, intercept, loss) = cache
            .entry(covered)
            .or_insert_with(|| least_squares(terms, covered, &y))
            .clone();
        let mut used = vec![false; n_features];
        for (i, &m) in term_masks.iter().enumerate() {
            if coef[i] != 0.0 {
                for (f, u) in used.iter_mut().enumerate() {
                    *u |= m >> f & 1 == 1;
                }
            }
        }
        let cost: Money = (0..n_features).filter(|&f| used[f]).map(|f| prices[f]).sum();
        let better = match &best {
            None => true,
            Some(b) => {
                let tie = (loss - b.loss).abs() <= 1e-12 * (1.0 + b.loss);
                (!tie && loss < b.loss) || (tie && cost < b.cost)
            }
        };
        if better {
            best = Some(MixedFit { coefficients: coef, intercept, used_features: used, cost, loss });
        }
    }
    Ok(best.expect("the empty feature set is always affordable"))
}

/// OLS with intercept on the terms in `covered`; returns full-length
/// coefficients, intercept and mean squared residual.
fn least_squares(terms: &[ProductTerm], covered: u64, y: &DVector<f64>) -> (Vec<f64>, f64, f64) {
    let t = y.len();
    let idx: Vec<usize> = (0..terms.len()).filter(|&i| covered >> i & 1 == 1).collect();
    let mut a = DMatrix::zeros(t, idx.len() + 1);
    a.column_mut(0).fill(1.0);
    for (j, &i) in idx.iter().enumerate() {
        a.column_mut(j + 1).copy_from_slice(&terms[i].values);
    }
    let svd = a.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-12 * t as f64;
    let sol = svd.solve(y, eps).expect("both singular bases were computed");
    let resid = y - &a * &sol;
    let mut coef = vec![0.0; terms.len()];
    for (j, &i) in idx.iter().enumerate() {
        coef[i] = sol[j + 1];
    }
    (coef, sol[0], resid.norm_squared() / t as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn interaction_terms(seed: u64, t: usize) -> (Vec<ProductTerm>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let x2: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let terms = vec![
            ProductTerm { values: x1.iter().map(|v| v * v).collect(), uses: vec![0] },
            ProductTerm { values: x2.iter().map(|v| v * v).collect(), uses: vec![1] },
            ProductTerm { values: x1.iter().zip(&x2).map(|(a, b)| a * b).collect(), uses: vec![0, 1] },
        ];
        (terms, x1, x2)
    }

    #[test]
    fn slack_budget_uses_all_terms() {
        let (terms, x1, x2) = interaction_terms(1, 50);
        let y: Vec<f64> = (0..50).map(|i| x1[i] * x1[i] - 0.5 * x2[i] * x2[i] + 2.0 * x1[i] * x2[i] + 0.3).collect();
        let prices = [Money::from_units(3), Money::from_units(4)];
        let fit = fit_mixed_effects(&terms, &y, &prices, Money::from_units(7)).unwrap();
        assert!(fit.coefficients.iter().all(|&c| c != 0.0));
        assert_eq!(fit.cost, Money::from_units(7));
        assert!(fit.loss < 1e-20);
    }

    #[test]
    fn tiny_budget_is_intercept_only() {
        let (terms, x1, _) = interaction_terms(2, 40);
        let prices = [Money::from_units(3), Money::from_units(4)];
        let fit = fit_mixed_effects(&terms, &x1, &prices, Money::from_units(2)).unwrap();
        assert_eq!(fit.coefficients, vec![0.0; 3]);
        assert_eq!(fit.cost, Money::ZERO);
        let mean = x1.iter().sum::<f64>() / 40.0;
        assert!((fit.intercept - mean).abs() < 1e-12);
    }

    #[test]
    fn noiseless_cross_term_recovered() {
        let (terms, x1, x2) = interaction_terms(3, 60);
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a * b).collect();
        let prices = [Money::from_units(5), Money::from_units(5)];
        let fit = fit_mixed_effects(&terms, &y, &prices, Money::from_units(10)).unwrap();
        assert!((fit.coefficients[2] - 1.0).abs() < 1e-10);
        assert!(fit.loss < 1e-20);
        assert_eq!(fit.used_features, vec![true, true]);
    }

    #[test]
    fn unknown_feature_is_schema_error() {
        let terms = vec![ProductTerm { values: vec![1.0, 2.0], uses: vec![3] }];
        let err = fit_mixed_effects(&terms, &[1.0, 2.0], &[Money::ZERO], Money::ZERO).unwrap_err();
        assert!(matches!(err, MarketError::Schema(_)));
    }
}

//! Seller bids charged per unit of coefficient magnitude.
//!
//! Here a seller earns `s_g Σ_m |Θ_{g,m}|`, so the budget becomes a weighted
//! L1 constraint. Its multiplier `ν` folds into the penalty, giving a weighted
//! LASSO with weights `λ + ν s_g`; bisection on `ν` finds the smallest
//! multiplier whose solution fits the budget.

use super::{CoefficientSet, LossKind, Problem};
use crate::error::{MarketError, Result};
use crate::money::PriceScale;
use crate::splines::GroupedDesign;

const CD_TOLERANCE: f64 = 1e-13;
const CD_SWEEPS: usize = 200_000;

pub fn fit_coefficient_weighted(
    design: &GroupedDesign,
    target: &[f64],
    lambda: f64,
    budget: f64,
    scale: PriceScale,
) -> Result<CoefficientSet> {
    if !(lambda >= 0.0) || !(budget >= 0.0) || !budget.is_finite() {
        return Err(MarketError::Config(format!("need lambda >= 0 and finite budget >= 0, got {lambda}, {budget}")));
    }
    let problem = Problem::new(design, target, LossKind::Squared)?;
    let p = problem.live_columns().len();
    let mut price = vec![0.0; p];
    for (g, pg) in problem.prox_groups().iter().enumerate() {
        for &j in &pg.columns {
            price[j] = scale.to_f64(design.groups()[g].price);
        }
    }
    let spend = |theta: &[f64]| -> f64 { theta.iter().zip(&price).map(|(t, s)| s * t.abs()).sum() };
    let solve = |nu: f64, warm: Option<&[f64]>| -> Result<Vec<f64>> {
        let w: Vec<f64> = price
            .iter()
            .map(|&s| if nu.is_infinite() && s > 0.0 { f64::INFINITY } else { lambda + nu * s })
            .collect();
        problem.weighted_lasso(&w, warm, CD_TOLERANCE, CD_SWEEPS)
    };

    let free = solve(0.0, None)?;
    if spend(&free) <= budget {
        return Ok(problem.coefficient_set(&free, 0.0));
    }
    if budget == 0.0 {
        return Ok(problem.coefficient_set(&solve(f64::INFINITY, None)?, 0.0));
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut hi_theta = solve(hi, Some(&free))?;
    while spend(&hi_theta) > budget {
        lo = hi;
        hi *= 2.0;
        hi_theta = solve(hi, Some(&hi_theta))?;
        if hi > 1e300 {
            return Err(MarketError::Numeric("budget multiplier diverged".into()));
        }
    }
    for _ in 0..200 {
        let spent = spend(&hi_theta);
        if budget - spent <= 1e-10 * budget || hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let theta = solve(mid, Some(&hi_theta))?;
        if spend(&theta) > budget {
            lo = mid;
        } else {
            hi = mid;
            hi_theta = theta;
        }
    }
    Ok(problem.coefficient_set(&hi_theta, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSource;
    use crate::money::Money;
    use crate::splines::{FeatureMap, FeatureSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(seed: u64, price: i64) -> (GroupedDesign, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 60;
        let cols: Vec<Vec<f64>> = (0..5).map(|_| (0..t).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y = (0..t)
            .map(|i| 1.5 * cols[0][i] - cols[2][i] + 0.7 * cols[4][i] + 0.2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let specs: Vec<FeatureSpec> = (0..5)
            .map(|k| FeatureSpec { owner: k, source: FeatureSource::Exogenous(0), price: Money::from_units(price) })
            .collect();
        (FeatureMap::fit(&cols, None).unwrap().expand(&specs, &cols).unwrap(), y)
    }

    // Projected gradient onto the L1 ball of the given radius.
    fn l1_ball_oracle(problem: &Problem, radius: f64) -> Vec<f64> {
        let z = problem.standardized();
        let y = problem.response();
        let t = z.nrows() as f64;
        let step = 1.0 / (problem.lipschitz());
        let mut th = nalgebra::DVector::zeros(z.ncols());
        for _ in 0..200_000 {
            let grad = z.tr_mul(&(z * &th - y)) / t;
            th = project_l1(&(&th - grad * step), radius);
        }
        th.as_slice().to_vec()
    }

    fn project_l1(v: &nalgebra::DVector<f64>, radius: f64) -> nalgebra::DVector<f64> {
        if v.lp_norm(1) <= radius {
            return v.clone();
        }
        let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            cum += uk;
            let candidate = (cum - radius) / (k + 1) as f64;
            if uk - candidate > 0.0 {
                theta = candidate;
            }
        }
        v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
    }

    #[test]
    fn equal_prices_match_l1_ball_solution() {
        let (d, y) = instance(11, 200);
        let budget = 2.0;
        let fit = fit_coefficient_weighted(&d, &y, 0.0, budget, PriceScale::default()).unwrap();
        let problem = Problem::new(&d, &y, LossKind::Squared).unwrap();
        let oracle = l1_ball_oracle(&problem, budget / 2.0);
        let got = problem.embed(&fit.values);
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{got:?} vs {oracle:?}");
        }
        let spent: f64 = got.iter().map(|v| 2.0 * v.abs()).sum();
        assert!(spent <= budget * (1.0 + 1e-8));
    }

    #[test]
    fn huge_budget_is_unconstrained() {
        let (d, y) = instance(12, 100);
        let fit = fit_coefficient_weighted(&d, &y, 0.05, 1e9, PriceScale::default()).unwrap();
        let problem = Problem::new(&d, &y, LossKind::Squared).unwrap();
        let free = problem.weighted_lasso(&[0.05; 5], None, 1e-13, 100_000).unwrap();
        assert_eq!(problem.embed(&fit.values), free);
    }

    #[test]
    fn zero_budget_and_zero_design() {
        let (d, y) = instance(13, 100);
        let fit = fit_coefficient_weighted(&d, &y, 0.0, 0.0, PriceScale::default()).unwrap();
        assert!(fit.values.iter().all(|&v| v == 0.0));
        let cols = vec![vec![0.0; 10]; 3];
        let specs: Vec<FeatureSpec> = (0..3)
            .map(|k| FeatureSpec { owner: k, source: FeatureSource::Exogenous(0), price: Money::from_units(1) })
            .collect();
        let zero = FeatureMap::fit(&cols, None).unwrap().expand(&specs, &cols).unwrap();
        let target: Vec<f64> = (0..10).map(f64::from).collect();
        let fit = fit_coefficient_weighted(&zero, &target, 0.1, 5.0, PriceScale::default()).unwrap();
        assert!(fit.values.iter().all(|&v| v == 0.0));
        assert_eq!(fit.cost(), Money::ZERO);
    }
}

//! Fixed-point currency.
//!
//! Prices, budgets, payments and revenues are held as integer minor units at a
//! resolution `ρ` (units per currency unit). Knapsack weights are these units,
//! and settlement identities such as `payment == Σ revenues` hold exactly.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_units(units: i64) -> Self {
        Money(units)
    }

    pub const fn units(self) -> i64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.copied().sum()
    }
}

/// Conversion between real prices and [`Money`] units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceScale {
    resolution: u32,
}

impl Default for PriceScale {
    fn default() -> Self {
        PriceScale { resolution: 100 }
    }
}

// Largest budget in units; keeps DP tables indexable.
const MAX_UNITS: f64 = (1u64 << 40) as f64;

impl PriceScale {
    pub fn new(resolution: u32) -> Result<Self> {
        if resolution == 0 {
            return Err(MarketError::Config("price resolution must be positive".into()));
        }
        Ok(PriceScale { resolution })
    }

    pub fn resolution(self) -> u32 {
        self.resolution
    }

    /// Rounds a posted price to the nearest unit.
    pub fn price(self, value: f64) -> Result<Money> {
        self.checked(value, (value * f64::from(self.resolution)).round())
    }

    /// Budget capacity, rounded down so it never exceeds the real budget.
    pub fn budget(self, value: f64) -> Result<Money> {
        // 1e-9 absorbs representation error such as 0.29 * 100 = 28.999...
        self.checked(value, (value * f64::from(self.resolution) + 1e-9).floor())
    }

    fn checked(self, value: f64, units: f64) -> Result<Money> {
        if !value.is_finite() || value < 0.0 {
            return Err(MarketError::Config(format!(
                "prices and budgets must be finite and non-negative, got {value}"
            )));
        }
        if units > MAX_UNITS {
            return Err(MarketError::Config(format!(
                "{value} at resolution {} overflows the price table",
                self.resolution
            )));
        }
        Ok(Money(units as i64))
    }

    pub fn to_f64(self, money: Money) -> f64 {
        money.0 as f64 / f64::from(self.resolution)
    }

    /// Exact decimal text when the resolution is a power of ten, e.g. `10.00`
    /// at resolution 100; otherwise the nearest `f64`.
    pub fn format(self, money: Money) -> String {
        let mut digits = 0;
        let mut r = self.resolution;
        while r.is_multiple_of(10) {
            r /= 10;
            digits += 1;
        }
        if r != 1 {
            return format!("{:?}", self.to_f64(money));
        }
        if digits == 0 {
            return money.0.to_string();
        }
        let res = i64::from(self.resolution);
        let sign = if money.0 < 0 { "-" } else { "" };
        let abs = money.0.unsigned_abs();
        format!("{sign}{}.{:0digits$}", abs / res as u64, abs % res as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_rounds_down_prices_round_nearest() {
        let s = PriceScale::default();
        assert_eq!(s.budget(0.29).unwrap().units(), 29);
        assert_eq!(s.budget(50.0).unwrap().units(), 5000);
        assert_eq!(s.budget(0.015).unwrap().units(), 1);
        assert_eq!(s.format(Money(1000)), "10.00");
        assert_eq!(s.format(Money(-5)), "-0.05");
        assert_eq!(PriceScale::new(1).unwrap().format(Money(7)), "7");
        assert_eq!(PriceScale::new(4).unwrap().format(Money(3)), "0.75");
        assert_eq!(s.price(0.015).unwrap().units(), 2);
        assert_eq!(s.to_f64(Money::from_units(1050)), 10.5);
    }

    #[test]
    fn negative_and_huge_rejected() {
        let s = PriceScale::default();
        assert!(s.price(-1.0).is_err());
        assert!(s.budget(f64::INFINITY).is_err());
        assert!(s.budget(1e30).is_err());
        assert!(PriceScale::new(0).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::{KnotPlacement, SplineConfig};

/// Fitted knots for one raw feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub lower: f64,
    pub upper: f64,
    pub interior: Vec<f64>,
    /// Placement actually used; may differ from the configured one.
    pub placement: KnotPlacement,
    /// True when quantile placement was requested but fell back to uniform.
    pub fallback: bool,
}

impl KnotVector {
    pub fn fit(values: &[f64], config: &SplineConfig) -> KnotVector {
        let k = config.knots;
        let (lower, upper) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if values.is_empty() || lower == upper {
            return KnotVector {
                lower: if values.is_empty() { 0.0 } else { lower },
                upper: if values.is_empty() { 0.0 } else { upper },
                interior: Vec::new(),
                placement: config.placement,
                fallback: false,
            };
        }
        let uniform = || -> Vec<f64> {
            (1..=k)
                .map(|i| lower + (upper - lower) * i as f64 / (k + 1) as f64)
                .collect()
        };
        match config.placement {
            KnotPlacement::Uniform => KnotVector {
                lower,
                upper,
                interior: uniform(),
                placement: KnotPlacement::Uniform,
                fallback: false,
            },
            KnotPlacement::Quantile => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let q: Vec<f64> = (1..=k)
                    .map(|i| quantile(&sorted, i as f64 / (k + 1) as f64))
                    .collect();
                let mut distinct = sorted.clone();
                distinct.dedup();
                let strictly_inside = q.first().is_some_and(|&f| f > lower)
                    && q.last().is_some_and(|&l| l < upper)
                    && q.windows(2).all(|w| w[0] < w[1]);
                if distinct.len() >= k && strictly_inside {
                    KnotVector {
                        lower,
                        upper,
                        interior: q,
                        placement: KnotPlacement::Quantile,
                        fallback: false,
                    }
                } else {
                    KnotVector {
                        lower,
                        upper,
                        interior: uniform(),
                        placement: KnotPlacement::Uniform,
                        fallback: true,
                    }
                }
            }
        }
    }

    /// A constant training column carries no information.
    pub fn is_degenerate(&self) -> bool {
        !(self.upper > self.lower)
    }

    /// Clamped knot sequence: `degree + 1` copies of each boundary.
    pub fn full(&self, degree: usize) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.interior.len() + 2 * (degree + 1));
        t.extend(std::iter::repeat_n(self.lower, degree + 1));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat_n(self.upper, degree + 1));
        t
    }

    /// Writes the `M` basis values at `x` into `out`. Values outside the
    /// fitted range are clamped to the nearest boundary first.
    pub fn eval_into(&self, degree: usize, x: f64, out: &mut [f64]) {
        out.fill(0.0);
        if self.is_degenerate() {
            return;
        }
        let t = self.full(degree);
        let n_basis = out.len();
        debug_assert_eq!(n_basis, t.len() - degree - 1);
        let x = x.clamp(self.lower, self.upper);

        // knot span: t[span] <= x < t[span + 1], closed at the upper end
        let span = if x >= self.upper {
            n_basis - 1
        } else {
            let mut s = degree;
            while s < n_basis - 1 && t[s + 1] <= x {
                s += 1;
            }
            s
        };

        // Cox–de Boor in triangular form; `n[r]` holds N_{span-degree+r}.
        let mut n = vec![0.0; degree + 1];
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        n[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out[span - degree..=span].copy_from_slice(&n);
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

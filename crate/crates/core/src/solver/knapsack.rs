//! Exact 0-1 knapsack by dynamic programming over integer weights.

/// Items with integer weights and real values.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    pub weights: Vec<u64>,
    pub values: Vec<f64>,
    pub capacity: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Returns the allocation maximizing total value within capacity.
///
/// An item enters a DP cell only on strict improvement, and backtracking runs
/// from the last item at full capacity, so among equal-value allocations the
/// earlier items win. Zero-weight items with positive value are always taken.
///
/// # Panics
/// If `weights` and `values` differ in length.
pub fn knapsack(instance: &KnapsackInstance) -> Vec<bool> {
    let n = instance.weights.len();
    assert_eq!(n, instance.values.len(), "knapsack weights and values differ in length");
    let mut take = vec![false; n];

    // Only positive-value items that fit on their own can matter.
    let mut items: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        if instance.values[i] > 0.0 && instance.weights[i] <= instance.capacity {
            if instance.weights[i] == 0 {
                take[i] = true;
            } else {
                items.push(i);
            }
        }
    }
    if items.is_empty() {
        return take;
    }

    // Dividing by the common factor and capping at the total weight leaves
    // the set of feasible allocations unchanged and shrinks the table.
    let g = items.iter().fold(0, |acc, &i| gcd(acc, instance.weights[i]));
    let w: Vec<usize> = items.iter().map(|&i| (instance.weights[i] / g) as usize).collect();
    let total: usize = w.iter().sum();
    let cap = ((instance.capacity / g) as usize).min(total);

    if total <= cap {
        for &i in &items {
            take[i] = true;
        }
        return take;
    }

    let words = (cap + 1).div_ceil(64);
    let mut keep = vec![0u64; items.len() * words];
    let mut best = vec![0.0f64; cap + 1];
    for (j, &i) in items.iter().enumerate() {
        let (wj, vj) = (w[j], instance.values[i]);
        let row = &mut keep[j * words..(j + 1) * words];
        // descending so each cell reads the previous item's row
        for c in (wj..=cap).rev() {
            let with = best[c - wj] + vj;
            if with > best[c] {
                best[c] = with;
                row[c / 64] |= 1 << (c % 64);
            }
        }
    }

    let mut c = cap;
    for j in (0..items.len()).rev() {
        if keep[j * words + c / 64] >> (c % 64) & 1 == 1 {
            take[items[j]] = true;
            c -= w[j];
        }
    }
    take
}

/// Total value of an allocation.
pub fn allocation_value(instance: &KnapsackInstance, take: &[bool]) -> f64 {
    take.iter()
        .zip(&instance.values)
        .filter(|(t, _)| **t)
        .map(|(_, v)| v)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(inst: &KnapsackInstance) -> f64 {
        let n = inst.weights.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            let (mut w, mut v) = (0, 0.0);
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    w += inst.weights[i];
                    v += inst.values[i];
                }
            }
            if w <= inst.capacity {
                best = best.max(v);
            }
        }
        best
    }

    #[test]
    fn five_highest_value_items() {
        let inst = KnapsackInstance {
            weights: vec![10, 10, 10, 10, 10, 11, 10, 10],
            values: vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0],
            capacity: 50,
        };
        let take = knapsack(&inst);
        assert_eq!(take, vec![true, true, true, true, true, false, false, false]);
        assert_eq!(allocation_value(&inst, &take), brute(&inst));
    }

    #[test]
    fn zero_capacity_takes_nothing_positive_weight() {
        let inst = KnapsackInstance {
            weights: vec![1, 2, 0],
            values: vec![5.0, 5.0, 1.0],
            capacity: 0,
        };
        assert_eq!(knapsack(&inst), vec![false, false, true]);
    }

    #[test]
    fn singleton_and_empty() {
        let one = KnapsackInstance { weights: vec![3], values: vec![0.5], capacity: 3 };
        assert_eq!(knapsack(&one), vec![true]);
        let none = KnapsackInstance { weights: vec![], values: vec![], capacity: 10 };
        assert!(knapsack(&none).is_empty());
    }

    #[test]
    fn identical_items_prefer_the_earlier() {
        let inst = KnapsackInstance {
            weights: vec![1000, 1000],
            values: vec![2.0, 2.0],
            capacity: 1500,
        };
        assert_eq!(knapsack(&inst), vec![true, false]);
    }

    #[test]
    fn gcd_reduction_is_exact() {
        let inst = KnapsackInstance {
            weights: vec![1000, 1100, 1000, 2000],
            values: vec![3.0, 4.0, 1.0, 6.5],
            capacity: 3099,
        };
        let take = knapsack(&inst);
        assert_eq!(allocation_value(&inst, &take), brute(&inst));
        let used: u64 = take.iter().zip(&inst.weights).filter(|(t, _)| **t).map(|(_, w)| w).sum();
        assert!(used <= 3099);
    }
}

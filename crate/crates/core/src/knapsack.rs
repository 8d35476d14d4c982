//! Exact 0/1 knapsack over integer weights.
//!
//! Ties are broken by value, then fewer items, then the lexicographically
//! smallest item list. The table is filled over item suffixes so a forward
//! pass can prefer taking the lowest-index item whenever that stays optimal.

/// Largest DP table (items + 1) × (capacity + 1) we are willing to allocate.
pub(crate) const MAX_TABLE_CELLS: usize = 20_000_000;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Item {
    pub weight: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Solution {
    pub chosen: Vec<usize>,
    pub value: f64,
    /// Exactly one subset attains the optimal value.
    pub unique: bool,
}

#[derive(Debug, Clone, Copy)]
struct Key {
    value: f64,
    items: u32,
}

fn better(a: Key, b: Key, tol: f64) -> bool {
    a.value > b.value + tol || ((a.value - b.value).abs() <= tol && a.items < b.items)
}

pub(crate) fn table_cells(n_items: usize, capacity: usize) -> usize {
    (n_items + 1).saturating_mul(capacity.saturating_add(1))
}

/// Solves the knapsack. Callers enforce [`MAX_TABLE_CELLS`].
pub(crate) fn solve(items: &[Item], capacity: usize, tol: f64) -> Solution {
    let p = items.len();
    let width = capacity + 1;
    let empty = Key { value: 0.0, items: 0 };
    let mut best = vec![empty; (p + 1) * width];
    // Welfare-only optimum and number of subsets reaching it (saturating at 2).
    let mut plain = vec![0.0f64; (p + 1) * width];
    let mut count = vec![1u8; (p + 1) * width];

    for j in (0..p).rev() {
        let Item { weight, value } = items[j];
        for c in 0..width {
            let skip = best[(j + 1) * width + c];
            let skip_plain = plain[(j + 1) * width + c];
            let skip_count = count[(j + 1) * width + c];
            let idx = j * width + c;
            if weight <= c {
                let rest = best[(j + 1) * width + c - weight];
                let take = Key {
                    value: value + rest.value,
                    items: rest.items + 1,
                };
                best[idx] = if better(take, skip, tol) || !better(skip, take, tol) {
                    take
                } else {
                    skip
                };

                let take_plain = value + plain[(j + 1) * width + c - weight];
                let take_count = count[(j + 1) * width + c - weight];
                if take_plain > skip_plain + tol {
                    plain[idx] = take_plain;
                    count[idx] = take_count;
                } else if skip_plain > take_plain + tol {
                    plain[idx] = skip_plain;
                    count[idx] = skip_count;
                } else {
                    plain[idx] = take_plain.max(skip_plain);
                    count[idx] = take_count.saturating_add(skip_count).min(2);
                }
            } else {
                best[idx] = skip;
                plain[idx] = skip_plain;
                count[idx] = skip_count;
            }
        }
    }

    let mut chosen = Vec::new();
    let mut c = capacity;
    for j in 0..p {
        let here = best[j * width + c];
        let Item { weight, value } = items[j];
        if weight <= c {
            let rest = best[(j + 1) * width + c - weight];
            let take = Key {
                value: value + rest.value,
                items: rest.items + 1,
            };
            if take.items == here.items && (take.value - here.value).abs() <= tol {
                chosen.push(j);
                c -= weight;
            }
        }
    }
    let value = chosen.iter().map(|&j| items[j].value).sum();
    Solution {
        chosen,
        value,
        unique: count[capacity] == 1,
    }
}

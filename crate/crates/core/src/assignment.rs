//! Linear assignment solver (Hungarian algorithm).
//!
//! Dense O(n^2 m) shortest-augmenting-path formulation with potentials over
//! integer costs. Rectangular inputs are handled by solving on the shorter
//! side, so every returned assignment has `min(rows, cols)` pairs.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major integer cost matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> i64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.data[row * self.cols + col]
    }

    fn transposed(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }
}

/// Minimum-cost one-to-one assignment of size `min(rows, cols)`.
///
/// Returns `(row, col)` pairs sorted by row.
pub fn hungarian(costs: &CostMatrix) -> Vec<(usize, usize)> {
    if costs.rows == 0 || costs.cols == 0 {
        return Vec::new();
    }
    if costs.rows > costs.cols {
        let mut pairs: Vec<(usize, usize)> = solve_wide(&costs.transposed())
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }
    solve_wide(costs)
}

/// Requires `rows <= cols`. Indices are 1-based internally; column 0 is the
/// virtual source.
fn solve_wide(costs: &CostMatrix) -> Vec<(usize, usize)> {
    let n = costs.rows;
    let m = costs.cols;
    debug_assert!(n <= m);

    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    // owner[j] = row assigned to column j (0 = free)
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];

        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }

        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(c: &CostMatrix, pairs: &[(usize, usize)]) -> i64 {
        pairs.iter().map(|&(i, j)| c.get(i, j)).sum()
    }

    /// Exhaustive minimum over injections from the shorter side.
    fn brute_min(c: &CostMatrix) -> i64 {
        fn rec(c: &CostMatrix, row: usize, used: &mut Vec<bool>, transpose: bool) -> i64 {
            let (rows, cols) = if transpose { (c.cols, c.rows) } else { (c.rows, c.cols) };
            if row == rows {
                return 0;
            }
            let mut best = i64::MAX;
            for col in 0..cols {
                if used[col] {
                    continue;
                }
                used[col] = true;
                let cost = if transpose { c.get(col, row) } else { c.get(row, col) };
                best = best.min(cost + rec(c, row + 1, used, transpose));
                used[col] = false;
            }
            best
        }
        let transpose = c.rows > c.cols;
        let width = c.rows.max(c.cols);
        rec(c, 0, &mut vec![false; width], transpose)
    }

    #[test]
    fn square_known_optimum() {
        let c = CostMatrix::new(3, 3, vec![4, 1, 3, 2, 0, 5, 3, 2, 2]);
        let pairs = hungarian(&c);
        assert_eq!(pairs.len(), 3);
        assert_eq!(total(&c, &pairs), 5);
    }

    #[test]
    fn empty_dimensions() {
        assert!(hungarian(&CostMatrix::new(0, 3, vec![])).is_empty());
        assert!(hungarian(&CostMatrix::new(2, 0, vec![])).is_empty());
    }

    #[test]
    fn tall_and_wide_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let rows = rng.random_range(1..=6);
            let cols = rng.random_range(1..=6);
            let c = CostMatrix::from_fn(rows, cols, |_, _| rng.random_range(-5..20));
            let pairs = hungarian(&c);
            assert_eq!(pairs.len(), rows.min(cols));
            let mut rs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let mut cs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            rs.dedup();
            cs.sort_unstable();
            cs.dedup();
            assert_eq!(rs.len(), pairs.len());
            assert_eq!(cs.len(), pairs.len());
            assert_eq!(total(&c, &pairs), brute_min(&c));
        }
    }
}

//! Tiered maximum-score one-to-one assignment.
//!
//! Tiers run from the highest threshold down. Inside a tier the total score of
//! newly assigned pairs is maximised (Hungarian method); pairs fixed by an
//! earlier tier are never revisited, so raising the threshold only removes
//! pairs. Among optimal assignments the canonical one is chosen left key by
//! left key: score desc, category priority, right name asc, unmatched last.

use super::Category;

pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub category: Category,
    pub score: f64,
}

/// Maximum total weight of a matching in a dense weight matrix (0 = no edge).
pub fn max_weight(w: &[Vec<f64>]) -> f64 {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let n = rows.max(cols);
    let top = w.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            top - w[i][j]
        } else {
            top
        }
    };
    // 1-indexed potentials formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            total += w[i - 1][j - 1];
        }
    }
    total
}

fn sub_weight(cells: &[Vec<Option<Cell>>], rows: &[usize], cols: &[usize], floor: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&i| {
            cols.iter()
                .map(|&j| cells[i][j].filter(|c| c.score >= floor).map_or(0.0, |c| c.score))
                .collect()
        })
        .collect()
}

/// Assign left indices to right indices. `tiers` are descending lower bounds.
pub fn tiered_assignment(cells: &[Vec<Option<Cell>>], right_names: &[&str], tiers: &[f64]) -> Vec<(usize, usize)> {
    let n_left = cells.len();
    let n_right = right_names.len();
    let mut left_done = vec![false; n_left];
    let mut right_done = vec![false; n_right];
    let mut pairs = Vec::new();

    for &floor in tiers {
        let eligible = |i: usize, j: usize, rd: &[bool]| -> bool {
            !rd[j] && cells[i][j].is_some_and(|c| c.score >= floor)
        };
        let rows: Vec<usize> = (0..n_left).filter(|&i| !left_done[i] && (0..n_right).any(|j| eligible(i, j, &right_done))).collect();
        let cols: Vec<usize> = (0..n_right).filter(|&j| rows.iter().any(|&i| eligible(i, j, &right_done))).collect();
        if rows.is_empty() {
            continue;
        }
        let optimum = max_weight(&sub_weight(cells, &rows, &cols, floor));
        let mut fixed = 0.0;
        let mut taken: Vec<usize> = Vec::new();
        for (k, &i) in rows.iter().enumerate() {
            let mut options: Vec<usize> = cols.iter().copied().filter(|j| !taken.contains(j) && eligible(i, *j, &right_done)).collect();
            options.sort_by(|&a, &b| {
                let (ca, cb) = (cells[i][a].unwrap(), cells[i][b].unwrap());
                cb.score
                    .total_cmp(&ca.score)
                    .then(ca.category.cmp(&cb.category))
                    .then(right_names[a].cmp(right_names[b]))
                    .then(a.cmp(&b))
            });
            let rest_rows = &rows[k + 1..];
            for j in options {
                let rest_cols: Vec<usize> = cols.iter().copied().filter(|c| *c != j && !taken.contains(c)).collect();
                let s = cells[i][j].unwrap().score;
                let rest = max_weight(&sub_weight(cells, rest_rows, &rest_cols, floor));
                if fixed + s + rest >= optimum - EPS {
                    fixed += s;
                    taken.push(j);
                    pairs.push((i, j));
                    break;
                }
            }
        }
        for &(i, j) in &pairs {
            left_done[i] = true;
            right_done[j] = true;
        }
    }
    pairs.sort();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(score: f64) -> Option<Cell> {
        Some(Cell { category: Category::Spelling, score })
    }

    #[test]
    fn hungarian_beats_greedy() {
        // Greedy takes (0,0)=0.9 and strands row 1; optimum is 0.85+0.85.
        let w = vec![vec![0.9, 0.85], vec![0.85, 0.0]];
        assert!((max_weight(&w) - 1.7).abs() < 1e-12);
        let cells = vec![vec![cell(0.9), cell(0.85)], vec![cell(0.85), None]];
        assert_eq!(tiered_assignment(&cells, &["a", "b"], &[0.8]), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn earlier_tier_is_never_displaced() {
        let cells = vec![vec![cell(0.96), cell(0.85)], vec![cell(0.85), None]];
        assert_eq!(tiered_assignment(&cells, &["a", "b"], &[0.95]), vec![(0, 0)]);
        assert_eq!(tiered_assignment(&cells, &["a", "b"], &[0.95, 0.8]), vec![(0, 0)]);
    }

    #[test]
    fn ties_resolve_by_right_name() {
        let cells = vec![vec![cell(1.0), cell(1.0)]];
        assert_eq!(tiered_assignment(&cells, &["zeta", "alpha"], &[0.6]), vec![(0, 1)]);
    }

    #[test]
    fn rectangular_and_empty() {
        assert_eq!(max_weight(&[]), 0.0);
        let w = vec![vec![0.7, 0.9, 0.8]];
        assert!((max_weight(&w) - 0.9).abs() < 1e-12);
        let w = vec![vec![0.7], vec![0.9]];
        assert!((max_weight(&w) - 0.9).abs() < 1e-12);
    }
}

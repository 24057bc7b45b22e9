//! Optimal bipartite assignment on correspondence probabilities.
//!
//! The matrix is padded to a square with dummy entries and solved as a
//! min-cost problem on `1 - p` with the shortest-augmenting-path form of the
//! Hungarian method (O(n³)). Among all optimal assignments the
//! lexicographically smallest list of `(row, col)` pairs is returned; pairs
//! below the acceptance threshold are dropped afterwards.

use crate::error::{Error, Result};

/// Cost of pairing anything with a padding row or column. Exceeds `1 - p`
/// for every real entry.
const DUMMY_COST: f64 = 2.0;

/// Reduced costs at or below this are treated as tight.
const TIGHT_EPS: f64 = 1e-9;

/// Row-major matrix of correspondence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != rows * cols {
            return Err(Error::invalid(format!(
                "score matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                probs.len()
            )));
        }
        for (k, p) in probs.iter().enumerate() {
            if p.is_nan() {
                return Err(Error::invalid(format!(
                    "NaN score at ({}, {})",
                    k / cols.max(1),
                    k % cols.max(1)
                )));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(Error::invalid(format!("score {p} outside [0, 1]")));
            }
        }
        Ok(ScoreMatrix { rows, cols, probs })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ScoreMatrix {
            rows,
            cols,
            probs: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged score matrix"));
        }
        ScoreMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.cols + col]
    }

    /// Sets one entry. Panics on NaN or values outside `[0, 1]`.
    pub fn set(&mut self, row: usize, col: usize, p: f64) {
        assert!((0.0..=1.0).contains(&p), "score {p} outside [0, 1]");
        self.probs[row * self.cols + col] = p;
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

/// Maximum-total assignment with post-hoc threshold rejection.
///
/// Returns pairs sorted by row. Every pair has probability `>= threshold`.
pub fn solve_assignment(m: &ScoreMatrix, threshold: f64) -> Result<Vec<(usize, usize)>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(optimal_assignment(m)
        .into_iter()
        .filter(|&(r, c)| m.get(r, c) >= threshold)
        .collect())
}

/// Lexicographically smallest maximum-total assignment of size
/// `min(rows, cols)`, without thresholding.
pub fn optimal_assignment(m: &ScoreMatrix) -> Vec<(usize, usize)> {
    if m.is_empty() {
        return Vec::new();
    }
    let n = m.rows.max(m.cols);
    let cost = |i: usize, j: usize| {
        if i < m.rows && j < m.cols {
            1.0 - m.get(i, j)
        } else {
            DUMMY_COST
        }
    };

    let (mut col_of_row, mut row_of_col, u, v) = hungarian(n, &cost);
    let tight = |i: usize, j: usize| cost(i, j) - u[i] - v[j] <= TIGHT_EPS;
    let mut refine = Refiner {
        n,
        real_cols: m.cols,
        tight: &tight,
        col_of_row: &mut col_of_row,
        row_of_col: &mut row_of_col,
        visited: vec![false; n],
    };
    refine.run(m.rows);

    (0..m.rows)
        .filter(|&i| col_of_row[i] < m.cols)
        .map(|i| (i, col_of_row[i]))
        .collect()
}

/// Square min-cost assignment. Returns `(col_of_row, row_of_col, u, v)` where
/// `u`, `v` are feasible dual potentials certifying optimality.
fn hungarian(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internally; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
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

    let mut col_of_row = vec![0usize; n];
    let mut row_of_col = vec![0usize; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
        row_of_col[j - 1] = p[j] - 1;
    }
    (col_of_row, row_of_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Walks rows in order and moves each to the smallest real column that still
/// admits an optimal completion, keeping earlier rows fixed.
///
/// Every optimal assignment lives in the tight subgraph of the dual solution,
/// so a move is feasible iff an alternating cycle through the new edge exists.
/// Earlier rows on real columns are frozen; earlier rows on padding columns
/// may only swap among padding columns.
struct Refiner<'a> {
    n: usize,
    real_cols: usize,
    tight: &'a dyn Fn(usize, usize) -> bool,
    col_of_row: &'a mut Vec<usize>,
    row_of_col: &'a mut Vec<usize>,
    visited: Vec<bool>,
}

impl Refiner<'_> {
    fn run(&mut self, real_rows: usize) {
        for i in 0..real_rows {
            let current = self.col_of_row[i];
            let limit = current.min(self.real_cols);
            for j in 0..limit {
                if !(self.tight)(i, j) {
                    continue;
                }
                let k = self.row_of_col[j];
                if k < i {
                    // k holds a real column and is frozen
                    continue;
                }
                self.col_of_row[i] = j;
                self.row_of_col[j] = i;
                self.visited.fill(false);
                self.visited[i] = true;
                if self.reroute(k, i, current) {
                    break;
                }
                self.col_of_row[i] = current;
                self.row_of_col[j] = k;
                self.row_of_col[current] = i;
            }
        }
    }

    /// Finds a new column for `row` along an alternating path ending at the
    /// freed column `target`.
    fn reroute(&mut self, row: usize, pivot: usize, target: usize) -> bool {
        self.visited[row] = true;
        let padding_only = row < pivot;
        for c in 0..self.n {
            if padding_only && c < self.real_cols {
                continue;
            }
            if !(self.tight)(row, c) {
                continue;
            }
            if c == target {
                self.col_of_row[row] = c;
                self.row_of_col[c] = row;
                return true;
            }
            let owner = self.row_of_col[c];
            if self.visited[owner] || owner == pivot {
                continue;
            }
            if owner < pivot && self.col_of_row[owner] < self.real_cols {
                continue;
            }
            if self.reroute(owner, pivot, target) {
                self.col_of_row[row] = c;
                self.row_of_col[c] = row;
                return true;
            }
        }
        false
    }
}

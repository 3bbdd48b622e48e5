//! Dense tableau simplex for packing-form linear programs
//!
//! ```text
//! max c·x   s.t.   A x <= b,   x >= 0,   b >= 0
//! ```
//!
//! The origin is feasible, so no phase one is needed. Both LPs in this crate
//! (concave extension and configuration LP) fit this form once the per-agent
//! `Σ x_S = 1` row is relaxed to `<= 1` with the empty set absorbing slack.

use crate::error::{NswError, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 200_000;
/// After this many consecutive degenerate pivots switch to Bland's rule.
const DEGENERATE_STREAK: usize = 50;

#[derive(Clone, Debug, Default)]
pub struct PackingLp {
    rhs: Vec<f64>,
    /// (objective, sparse coefficients (row, a))
    columns: Vec<(f64, Vec<(usize, f64)>)>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub value: f64,
    pub primal: Vec<f64>,
    /// One dual price per row, all `>= 0`.
    pub dual: Vec<f64>,
    pub pivots: usize,
}

impl PackingLp {
    pub fn new(rhs: Vec<f64>) -> Self {
        assert!(rhs.iter().all(|&b| b >= 0.0), "packing LP needs b >= 0");
        PackingLp {
            rhs,
            columns: Vec::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    /// Add a column and return its index.
    pub fn add_column(&mut self, objective: f64, coeffs: Vec<(usize, f64)>) -> usize {
        debug_assert!(coeffs.iter().all(|&(r, _)| r < self.rhs.len()));
        self.columns.push((objective, coeffs));
        self.columns.len() - 1
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let rows = self.rhs.len();
        let ncols = self.columns.len();
        let width = ncols + rows + 1;
        let rhs_col = width - 1;
        // row `rows` is the reduced-cost row
        let mut t = vec![0.0; (rows + 1) * width];
        let idx = |r: usize, c: usize| r * width + c;
        for (j, (obj, coeffs)) in self.columns.iter().enumerate() {
            for &(r, a) in coeffs {
                t[idx(r, j)] += a;
            }
            t[idx(rows, j)] = -obj;
        }
        for r in 0..rows {
            t[idx(r, ncols + r)] = 1.0;
            t[idx(r, rhs_col)] = self.rhs[r];
        }
        let mut basis: Vec<usize> = (ncols..ncols + rows).collect();

        let mut pivots = 0;
        let mut degenerate = 0;
        loop {
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut entering = None;
            let mut best = -COST_TOL;
            for c in 0..ncols + rows {
                let rc = t[idx(rows, c)];
                if rc < best {
                    entering = Some(c);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(e) = entering else { break };

            let mut leaving: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..rows {
                let a = t[idx(r, e)];
                if a > PIVOT_TOL {
                    let ratio = t[idx(r, rhs_col)].max(0.0) / a;
                    let better = match leaving {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-14
                                || (ratio <= best_ratio + 1e-14 && basis[r] < basis[l])
                        }
                    };
                    if better {
                        leaving = Some(r);
                        best_ratio = ratio;
                    }
                }
            }
            let Some(l) = leaving else {
                return Err(NswError::invariant("packing LP unbounded"));
            };
            if best_ratio <= 1e-14 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            let p = t[idx(l, e)];
            for c in 0..width {
                t[idx(l, c)] /= p;
            }
            for r in 0..=rows {
                if r == l {
                    continue;
                }
                let f = t[idx(r, e)];
                if f != 0.0 {
                    for c in 0..width {
                        t[idx(r, c)] -= f * t[idx(l, c)];
                    }
                }
            }
            basis[l] = e;
            pivots += 1;
            if pivots > MAX_PIVOTS {
                return Err(NswError::NonConvergence(format!(
                    "simplex exceeded {MAX_PIVOTS} pivots"
                )));
            }
        }

        let mut primal = vec![0.0; ncols];
        for (r, &b) in basis.iter().enumerate() {
            if b < ncols {
                primal[b] = t[idx(r, rhs_col)].max(0.0);
            }
        }
        let dual: Vec<f64> = (0..rows).map(|r| t[idx(rows, ncols + r)].max(0.0)).collect();
        let value = self
            .columns
            .iter()
            .zip(&primal)
            .map(|((c, _), x)| c * x)
            .sum();
        Ok(LpSolution {
            value,
            primal,
            dual,
            pivots,
        })
    }
}

//! Product-maximizing bipartite matchings, plus the constructive rematching
//! and matching extension used to certify the final matching step.

use serde::Serialize;

use crate::error::{NswError, Result};
use crate::model::{Allocation, Instance, ItemSet, Matching};

/// Agents on the left, items on the right, nonnegative scores whose product
/// over matched pairs is maximized.
#[derive(Clone, Debug)]
pub struct MatchingProblem {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// `scores[a][b]` for `left[a]`, `right[b]`.
    pub scores: Vec<Vec<f64>>,
}

impl MatchingProblem {
    pub fn from_fn(left: Vec<usize>, right: Vec<usize>, score: impl Fn(usize, usize) -> f64) -> Self {
        let scores = left
            .iter()
            .map(|&i| right.iter().map(|&j| score(i, j)).collect())
            .collect();
        MatchingProblem { left, right, scores }
    }
}

/// Lexicographic matching objective: number of positive pairs, then the
/// log-sum over those pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchObjective {
    pub positive: usize,
    pub log_sum: f64,
}

impl MatchObjective {
    pub fn of(prob: &MatchingProblem, assign: &[usize]) -> Self {
        let mut positive = 0;
        let mut log_sum = 0.0;
        for (a, &b) in assign.iter().enumerate() {
            let s = prob.scores[a][b];
            if s > 0.0 {
                positive += 1;
                log_sum += s.ln();
            }
        }
        MatchObjective { positive, log_sum }
    }

    /// `self >= other` up to `tol` on the log-sum.
    pub fn dominates(&self, other: &MatchObjective, tol: f64) -> bool {
        self.positive > other.positive
            || (self.positive == other.positive && self.log_sum >= other.log_sum - tol)
    }
}

/// Rectangular Hungarian algorithm (rows <= cols), minimizing total cost.
/// Returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let rows = cost.len();
    debug_assert!(rows <= cols);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
            for j in 0..=cols {
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
    let mut assign = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Injective assignment maximizing [`MatchObjective`] lexicographically.
/// Returns, for each left position, the chosen right position. Agents whose
/// score is 0 on every item get the lowest-index unused items.
pub fn product_matching_positions(prob: &MatchingProblem) -> Result<Vec<usize>> {
    let rows = prob.left.len();
    let cols = prob.right.len();
    if cols < rows {
        return Err(NswError::InvalidArgument(format!(
            "matching needs at least as many items ({cols}) as agents ({rows})"
        )));
    }
    if rows == 0 {
        return Ok(Vec::new());
    }
    let max_abs_log = prob
        .scores
        .iter()
        .flatten()
        .filter(|&&s| s > 0.0)
        .map(|s| s.ln().abs())
        .fold(0.0, f64::max);
    // one more positive pair always beats any log-sum difference
    let big = (2 * rows + 1) as f64 * max_abs_log + 1.0;
    let cost: Vec<Vec<f64>> = prob
        .scores
        .iter()
        .map(|row| {
            row.iter()
                .map(|&s| if s > 0.0 { -(big + s.ln()) } else { 0.0 })
                .collect()
        })
        .collect();
    let mut assign = hungarian(&cost, cols);

    // zero-scored agents: reassign deterministically to the lowest free items
    let zero_rows: Vec<usize> = (0..rows).filter(|&a| prob.scores[a][assign[a]] <= 0.0).collect();
    if !zero_rows.is_empty() {
        let mut taken = vec![false; cols];
        for (a, &b) in assign.iter().enumerate() {
            if prob.scores[a][b] > 0.0 {
                taken[b] = true;
            }
        }
        let mut pool: Vec<usize> = (0..cols).filter(|&b| !taken[b]).collect();
        pool.sort_by_key(|&b| prob.right[b]);
        for (a, b) in zero_rows.into_iter().zip(pool) {
            assign[a] = b;
        }
    }
    Ok(assign)
}

/// [`product_matching_positions`] lifted to a [`Matching`] over `n` agents.
pub fn product_matching(prob: &MatchingProblem, n: usize) -> Result<Matching> {
    let pos = product_matching_positions(prob)?;
    let mut assignment = vec![None; n];
    for (a, b) in pos.into_iter().enumerate() {
        assignment[prob.left[a]] = Some(prob.right[b]);
    }
    Matching::new(assignment)
}

/// Result of the initial singleton matching.
#[derive(Clone, Debug, Serialize)]
pub struct InitialMatching {
    pub tau: Matching,
    /// Matched items `H = τ(A)`.
    pub matched: ItemSet,
    /// Remaining items `I' = I ∖ H`.
    pub rest: ItemSet,
    /// Agents with `v_i(I') > 0`.
    pub active: Vec<usize>,
}

pub fn initial_matching(inst: &Instance) -> Result<InitialMatching> {
    let n = inst.num_agents();
    let m = inst.num_items();
    if m < n {
        return Err(NswError::InvalidArgument(format!(
            "instance has fewer items ({m}) than agents ({n})"
        )));
    }
    let prob = MatchingProblem::from_fn((0..n).collect(), (0..m).collect(), |i, j| {
        inst.valuation(i).singleton(j)
    });
    let tau = product_matching(&prob, n)?;
    let matched = tau.range();
    let rest = inst.all_items().difference(matched);
    let active = (0..n).filter(|&i| inst.value(i, rest) > 0.0).collect();

    // swap property of an optimal matching
    for i in 0..n {
        let own = inst.valuation(i).singleton(tau.get(i).expect("total matching"));
        if own > 0.0 {
            for j in rest.iter() {
                let other = inst.valuation(i).singleton(j);
                if other > own * (1.0 + 1e-12) {
                    return Err(NswError::invariant(format!(
                        "initial matching not optimal: agent {i} prefers free item {j} ({other} > {own})"
                    )));
                }
            }
        }
    }
    Ok(InitialMatching {
        tau,
        matched,
        rest,
        active,
    })
}

/// Constructive rematching: given the optimal singleton matching `tau`,
/// another matching `pi` into `H = range(tau)`, reservation values `w` and
/// free-item maxima `nu`, builds `rho` into `H` with
/// `Π max(W_i, v_i(ρ(i))) >= Π max(W_i, v_i(π(i)), ν_i)`.
pub fn rematch_rho(
    tau: &Matching,
    pi: &Matching,
    w: &[f64],
    nu: &[f64],
    inst: &Instance,
) -> Result<Matching> {
    let n = inst.num_agents();
    let h = tau.range();
    if !pi.range().is_subset(h) {
        return Err(NswError::InvalidArgument("π does not map into H".into()));
    }
    let single = |i: usize, j: Option<usize>| j.map_or(0.0, |j| inst.valuation(i).singleton(j));

    let in_tilde: Vec<bool> = (0..n)
        .map(|i| w[i] < single(i, pi.get(i)).max(nu[i]))
        .collect();
    let in_nu: Vec<bool> = (0..n)
        .map(|i| in_tilde[i] && nu[i] > single(i, pi.get(i)))
        .collect();

    // edge i -> π(i) -> i' where τ(i') = π(i), restricted to Ã
    let mut owner = vec![None; inst.num_items()];
    for i in (0..n).filter(|&i| in_tilde[i]) {
        if let Some(j) = tau.get(i) {
            owner[j] = Some(i);
        }
    }
    let next = |i: usize| pi.get(i).and_then(|j| owner[j]);

    let mut in_tau = vec![false; n];
    for start in (0..n).filter(|&i| in_tilde[i]) {
        let mut cur = start;
        for _ in 0..=n {
            if in_nu[cur] {
                in_tau[start] = true;
                break;
            }
            match next(cur) {
                Some(nx) => cur = nx,
                None => break,
            }
        }
    }

    let mut assignment = vec![None; n];
    let mut used = ItemSet::EMPTY;
    for i in (0..n).filter(|&i| in_tilde[i]) {
        let j = if in_tau[i] { tau.get(i) } else { pi.get(i) };
        if let Some(j) = j {
            if used.contains(j) {
                return Err(NswError::invariant(format!(
                    "rematching collision on item {j} (agent {i})"
                )));
            }
            used.insert(j);
        }
        assignment[i] = j;
    }
    let mut free = h.difference(used).iter();
    for i in 0..n {
        if !in_tilde[i] {
            assignment[i] = free.next();
        }
    }
    Matching::new(assignment)
}

/// Both sides of the rematching inequality in log space:
/// `(Σ log max(W_i, v_i(ρ(i))), Σ log max(W_i, v_i(π(i)), ν_i))`.
pub fn rematch_sides(
    rho: &Matching,
    pi: &Matching,
    w: &[f64],
    nu: &[f64],
    inst: &Instance,
) -> (f64, f64) {
    let single = |i: usize, j: Option<usize>| j.map_or(0.0, |j| inst.valuation(i).singleton(j));
    let ln0 = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
    let n = inst.num_agents();
    let lhs = (0..n).map(|i| ln0(w[i].max(single(i, rho.get(i))))).sum();
    let rhs = (0..n)
        .map(|i| ln0(w[i].max(single(i, pi.get(i))).max(nu[i])))
        .sum();
    (lhs, rhs)
}

/// Matching extension: `π(i)` is the best singleton of `S*_i ∩ H`, or the
/// lowest free `H` item when that intersection is empty.
pub fn extension_pi(s_star: &Allocation, matched: ItemSet, inst: &Instance) -> Result<Matching> {
    let n = inst.num_agents();
    if matched.len() < n {
        return Err(NswError::InvalidArgument("H smaller than the agent set".into()));
    }
    let mut assignment = vec![None; n];
    let mut used = ItemSet::EMPTY;
    for (i, slot) in assignment.iter_mut().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for j in s_star.bundles[i].intersection(matched).iter() {
            let val = inst.valuation(i).singleton(j);
            if best.is_none_or(|(_, b)| val > b) {
                best = Some((j, val));
            }
        }
        if let Some((j, _)) = best {
            *slot = Some(j);
            used.insert(j);
        }
    }
    let mut free = matched.difference(used).iter();
    for slot in assignment.iter_mut() {
        if slot.is_none() {
            *slot = free.next();
        }
    }
    Matching::new(assignment)
}

//! Set splitting: rewrite a configuration solution so every support set has
//! value within a constant factor of the agent's target.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{NswError, Result};
use crate::model::{ConfigSolution, ItemSet};
use crate::valuations::Valuation;

/// Relative tolerance for threshold comparisons.
const SPLIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct XosSplitOutput {
    pub config: ConfigSolution,
    /// `large_items[i][c]` is the large item of the source set that produced
    /// column `config.columns[i][c]`.
    pub large_items: Vec<Vec<usize>>,
    pub v_plus: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubaddSplitOutput {
    pub config: ConfigSolution,
    pub targets: Vec<f64>,
    pub nu: Vec<f64>,
    /// Agents that took part (the rest have no columns).
    pub agents: Vec<usize>,
}

/// Per-agent bound violations found by [`check_xos_split`] /
/// [`check_subadditive_split`]. Empty means all bounds hold.
pub type Violations = Vec<String>;

fn check_weights(x: &ConfigSolution, agents: &[usize]) -> Result<()> {
    for &i in agents {
        let w = x.agent_weight(i);
        if (w - 1.0).abs() > 1e-7 {
            return Err(NswError::InvalidArgument(format!(
                "agent {i} weights sum to {w}, expected 1"
            )));
        }
    }
    Ok(())
}

/// XOS set splitting with thresholds `¼V⁺_i`.
pub fn split_xos(
    x: &ConfigSolution,
    valuations: &[Valuation],
    v_plus: &[f64],
    agents: &[usize],
) -> Result<XosSplitOutput> {
    check_weights(x, agents)?;
    let n = x.columns.len();
    let mut config = ConfigSolution::empty(n);
    let mut large_items = vec![Vec::new(); n];
    for &i in agents {
        let v = &valuations[i];
        if !v.is_xos_representable() {
            return Err(NswError::Incompatible(format!(
                "XOS splitting needs an XOS valuation, agent {i} is {}",
                v.family()
            )));
        }
        let vp = v_plus[i];
        if !(vp > 0.0) {
            return Err(NswError::invariant(format!("agent {i} has V⁺ = {vp}")));
        }
        let theta = 0.25 * vp;
        let tol = SPLIT_TOL * vp;
        let mut merged: BTreeMap<(ItemSet, usize), f64> = BTreeMap::new();
        let mut order: Vec<(ItemSet, usize)> = Vec::new();
        for &(s, w) in &x.columns[i] {
            if w <= 0.0 || s.is_empty() {
                continue;
            }
            let val = v.value(s);
            if val < theta - tol {
                continue;
            }
            let (_, clause) = v.xos_clause(s)?;
            let large = s
                .iter()
                .fold(None::<usize>, |best, j| match best {
                    Some(b) if clause[b] >= clause[j] => Some(b),
                    _ => Some(j),
                })
                .expect("nonempty set");
            let k = ((4.0 * val / vp) + SPLIT_TOL).floor().max(1.0) as usize;
            let f_l = clause[large];
            let mut rest: Vec<usize> = s.without(large).to_vec();
            rest.sort_by(|&a, &b| clause[b].total_cmp(&clause[a]).then(a.cmp(&b)));

            let mut parts = vec![ItemSet::EMPTY; k];
            let mut sums = vec![0.0; k];
            let mut p = 0;
            for j in rest {
                parts[p].insert(j);
                sums[p] += clause[j];
                if p + 1 < k && sums[p] + f_l >= theta - tol {
                    p += 1;
                }
            }
            for (t, &part) in parts.iter().enumerate() {
                if sums[t] + f_l < theta - tol {
                    return Err(NswError::invariant(format!(
                        "agent {i}: split part {t} of {s:?} has clause value {} < ¼V⁺ = {theta}",
                        sums[t] + f_l
                    )));
                }
                let key = (part, large);
                if !merged.contains_key(&key) {
                    order.push(key);
                }
                *merged.entry(key).or_insert(0.0) += 0.75 * w;
            }
        }
        if order.is_empty() {
            return Err(NswError::invariant(format!(
                "agent {i}: no support set reaches ¼V⁺"
            )));
        }
        for key in order {
            config.columns[i].push((key.0, merged[&key]));
            large_items[i].push(key.1);
        }
    }
    Ok(XosSplitOutput {
        config,
        large_items,
        v_plus: v_plus.to_vec(),
    })
}

/// Bounds after XOS splitting: `v(T + l) >= ¼V⁺`, `Σ_T x' ∈ [1, 3]`, and
/// item loads at most `¾`.
pub fn check_xos_split(out: &XosSplitOutput, valuations: &[Valuation], agents: &[usize], m: usize) -> Violations {
    let mut bad = Vec::new();
    for &i in agents {
        let vp = out.v_plus[i];
        for (c, &(t, _)) in out.config.columns[i].iter().enumerate() {
            let l = out.large_items[i][c];
            if t.contains(l) {
                bad.push(format!("agent {i}: large item {l} inside its part"));
            }
            let val = valuations[i].value(t.with(l));
            if val < 0.25 * vp - 1e-9 * (1.0 + vp) {
                bad.push(format!("agent {i}: v(T + l) = {val} < ¼V⁺ = {}", 0.25 * vp));
            }
        }
        let total = out.config.agent_weight(i);
        if !(1.0 - 1e-9..=3.0 + 1e-9).contains(&total) {
            bad.push(format!("agent {i}: Σ x' = {total} outside [1,3]"));
        }
    }
    for j in 0..m {
        let load = out.config.item_load(j);
        if load > 0.75 + 1e-9 {
            bad.push(format!("item {j}: load {load} > 3/4"));
        }
    }
    bad
}

/// Subadditive set splitting with thresholds `⅓V_i`, for agents with
/// `V_i >= 6ν_i`.
pub fn split_subadditive(
    x: &ConfigSolution,
    valuations: &[Valuation],
    targets: &[f64],
    nu: &[f64],
    agents: &[usize],
) -> Result<SubaddSplitOutput> {
    check_weights(x, agents)?;
    let n = x.columns.len();
    let mut config = ConfigSolution::empty(n);
    for &i in agents {
        let v = &valuations[i];
        let big_v = targets[i];
        let nu_i = nu[i];
        if !(big_v > 0.0) || big_v < 6.0 * nu_i * (1.0 - SPLIT_TOL) {
            return Err(NswError::InvalidArgument(format!(
                "agent {i}: V = {big_v} must be positive and at least 6ν = {}",
                6.0 * nu_i
            )));
        }
        let tol = SPLIT_TOL * big_v;
        let third = big_v / 3.0;
        let close_at = third - nu_i;
        let mut tilde: BTreeMap<ItemSet, f64> = BTreeMap::new();
        let mut order = Vec::new();
        for &(s, w) in &x.columns[i] {
            if w <= 0.0 || s.is_empty() {
                continue;
            }
            let val = v.value(s);
            if val < third - tol {
                continue;
            }
            let k = ((3.0 * val / big_v) + SPLIT_TOL).floor().max(1.0) as usize;
            for j in s.iter() {
                if v.singleton(j) > nu_i * (1.0 + SPLIT_TOL) + 1e-15 {
                    return Err(NswError::invariant(format!(
                        "agent {i}: item {j} exceeds the singleton bound ν"
                    )));
                }
            }
            let valid = |parts: &[ItemSet]| {
                parts.len() == k && parts.iter().all(|&p| !p.is_empty() && v.value(p) >= close_at - tol)
            };
            // balanced parts closed at ⅓V when the remainder allows it,
            // otherwise parts closed at ⅓V − ν, which always succeeds
            let mut parts = greedy_parts(v, s, k, third - tol);
            if !valid(&parts) {
                parts = greedy_parts(v, s, k, close_at - tol);
            }
            if !valid(&parts) {
                return Err(NswError::invariant(format!(
                    "agent {i}: could not split {s:?} into {k} parts of value >= ⅓V − ν; valuation is not subadditive"
                )));
            }
            for part in parts {
                let trimmed = trim(v, part, big_v, tol);
                if v.value(trimmed) < close_at - tol {
                    return Err(NswError::invariant(format!(
                        "agent {i}: trimming {part:?} fell below ⅓V − ν; valuation is not subadditive"
                    )));
                }
                if !tilde.contains_key(&trimmed) {
                    order.push(trimmed);
                }
                *tilde.entry(trimmed).or_insert(0.0) += w;
            }
        }
        let total: f64 = tilde.values().sum();
        if !(total > 0.0) {
            return Err(NswError::invariant(format!("agent {i}: no support set reaches ⅓V")));
        }
        for t in order {
            config.columns[i].push((t, tilde[&t] / total));
        }
    }
    Ok(SubaddSplitOutput {
        config,
        targets: targets.to_vec(),
        nu: nu.to_vec(),
        agents: agents.to_vec(),
    })
}

/// Walk `s` in item order, closing a part once its value reaches `close`;
/// the last of the `k` parts takes the remainder.
fn greedy_parts(v: &Valuation, s: ItemSet, k: usize, close: f64) -> Vec<ItemSet> {
    let mut parts = Vec::with_capacity(k);
    let mut cur = ItemSet::EMPTY;
    let mut items = s.iter();
    while parts.len() + 1 < k {
        let Some(j) = items.next() else { break };
        cur.insert(j);
        if v.value(cur) >= close {
            parts.push(cur);
            cur = ItemSet::EMPTY;
        }
    }
    parts.push(items.fold(cur, |acc, j| acc.with(j)));
    parts
}

/// Drop lowest-singleton items (lowest index on ties) while `v > V`.
fn trim(v: &Valuation, mut part: ItemSet, big_v: f64, tol: f64) -> ItemSet {
    while v.value(part) > big_v + tol {
        let j = part
            .iter()
            .fold(None::<(usize, f64)>, |best, j| {
                let s = v.singleton(j);
                match best {
                    Some((_, b)) if b <= s => best,
                    _ => Some((j, s)),
                }
            })
            .expect("nonempty part")
            .0;
        part.remove(j);
    }
    part
}

/// Bounds after subadditive splitting: `⅓V − ν <= v(T) <= V`, `Σ_T x' = 1`,
/// item loads at most 1.
pub fn check_subadditive_split(out: &SubaddSplitOutput, valuations: &[Valuation], m: usize) -> Violations {
    let mut bad = Vec::new();
    for &i in &out.agents {
        let big_v = out.targets[i];
        let lo = big_v / 3.0 - out.nu[i];
        let tol = 1e-9 * (1.0 + big_v);
        for &(t, _) in &out.config.columns[i] {
            let val = valuations[i].value(t);
            if val < lo - tol || val > big_v + tol {
                bad.push(format!("agent {i}: v(T) = {val} outside [{lo}, {big_v}]"));
            }
        }
        let total = out.config.agent_weight(i);
        if (total - 1.0).abs() > 1e-9 {
            bad.push(format!("agent {i}: Σ x' = {total} != 1"));
        }
    }
    for j in 0..m {
        let load = out.config.item_load(j);
        if load > 1.0 + 1e-9 {
            bad.push(format!("item {j}: load {load} > 1"));
        }
    }
    bad
}

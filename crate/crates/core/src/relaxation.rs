//! Concave extension `v⁺` via demand-oracle column generation, and the
//! Eisenberg-Gale style relaxation `max Σ log v⁺_i(x_i)`.

use serde::Serialize;

use crate::error::{NswError, Result};
use crate::lp::PackingLp;
use crate::model::{Instance, ItemFractional, ItemSet};
use crate::oracle::{exact_config_lp, ConfigObjective};
use crate::valuations::{PriceVector, Valuation, ENUMERATION_CAP};

const COLGEN_ROUNDS: usize = 1000;
const SUPPORT_EPS: f64 = 1e-12;

/// How the concave-extension LP is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtMode {
    ColumnGeneration,
    /// Every subset of the support as a column.
    Enumerate,
}

/// `v⁺(x)` with a primal distribution and a dual certificate `(q, p)`.
#[derive(Clone, Debug, Serialize)]
pub struct ConcaveExtValue {
    pub value: f64,
    pub q: f64,
    /// Item prices over the full universe.
    pub p: Vec<f64>,
    /// Distribution over sets; weights sum to 1 (the empty set takes slack).
    pub columns: Vec<(ItemSet, f64)>,
    pub dual_value: f64,
    pub rounds: usize,
}

impl ConcaveExtValue {
    pub fn duality_gap(&self) -> f64 {
        (self.value - self.dual_value).abs()
    }
}

pub fn concave_ext(v: &Valuation, x: &[f64]) -> Result<ConcaveExtValue> {
    concave_ext_with(v, x, ExtMode::ColumnGeneration, &[])
}

/// Solve the concave-extension LP at `x`. `hint` seeds the restricted
/// column set (sets outside the support of `x` are ignored).
pub fn concave_ext_with(
    v: &Valuation,
    x: &[f64],
    mode: ExtMode,
    hint: &[ItemSet],
) -> Result<ConcaveExtValue> {
    let m = v.num_items();
    if x.len() != m {
        return Err(NswError::InvalidArgument(format!(
            "x has {} coordinates, valuation has {m} items",
            x.len()
        )));
    }
    if let Some(j) = x.iter().position(|&xj| !(-1e-9..=1.0 + 1e-9).contains(&xj)) {
        return Err(NswError::InvalidArgument(format!("x[{j}] = {} outside [0,1]", x[j])));
    }
    let support: ItemSet = (0..m).filter(|&j| x[j] > SUPPORT_EPS).collect();
    let sup_list = support.to_vec();
    let row_of = |j: usize| 1 + sup_list.iter().position(|&k| k == j).expect("support item");

    let mut cols: Vec<ItemSet> = match mode {
        ExtMode::ColumnGeneration => {
            let mut c: Vec<ItemSet> = sup_list.iter().map(|&j| ItemSet::singleton(j)).collect();
            for &h in hint {
                if !h.is_empty() && h.is_subset(support) && !c.contains(&h) {
                    c.push(h);
                }
            }
            c
        }
        ExtMode::Enumerate => {
            if support.len() > ENUMERATION_CAP {
                return Err(NswError::cap(
                    "concave extension enumeration",
                    support.len() as f64,
                    ENUMERATION_CAP as f64,
                ));
            }
            support.subsets().filter(|s| !s.is_empty()).collect()
        }
    };

    let mut rhs = vec![1.0];
    rhs.extend(sup_list.iter().map(|&j| x[j].clamp(0.0, 1.0)));
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut lp = PackingLp::new(rhs.clone());
        for &s in &cols {
            let mut coeffs = vec![(0, 1.0)];
            coeffs.extend(s.iter().map(|j| (row_of(j), 1.0)));
            lp.add_column(v.value(s), coeffs);
        }
        let sol = lp.solve()?;
        let q = sol.dual[0];
        let mut p: Vec<f64> = (0..m).map(|j| v.singleton(j)).collect();
        for (r, &j) in sup_list.iter().enumerate() {
            p[j] = sol.dual[1 + r];
        }
        let primal_value = sol.value;

        if mode == ExtMode::ColumnGeneration {
            let demand = v.demand_within(&PriceVector(p.clone()), support)?;
            let tol = 1e-10 * (1.0 + primal_value.abs());
            if demand.utility > q + tol && !cols.contains(&demand.set) && !demand.set.is_empty() {
                if rounds >= COLGEN_ROUNDS {
                    return Err(NswError::NonConvergence(format!(
                        "column generation stopped after {rounds} rounds, reduced profit {}",
                        demand.utility - q
                    )));
                }
                cols.push(demand.set);
                continue;
            }
        }

        let mut columns: Vec<(ItemSet, f64)> = cols
            .iter()
            .zip(&sol.primal)
            .filter(|(_, &w)| w > SUPPORT_EPS)
            .map(|(&s, &w)| (s, w))
            .collect();
        let used: f64 = columns.iter().map(|(_, w)| w).sum();
        if used < 1.0 - SUPPORT_EPS {
            columns.push((ItemSet::EMPTY, 1.0 - used));
        }
        let value: f64 = columns.iter().map(|&(s, w)| w * v.value(s)).sum();
        let dual_value = q + (0..m).map(|j| p[j] * x[j]).sum::<f64>();
        let out = ConcaveExtValue {
            value,
            q,
            p,
            columns,
            dual_value,
            rounds,
        };
        if out.duality_gap() > 1e-6 * (1.0 + value.abs()) {
            return Err(NswError::NonConvergence(format!(
                "concave extension duality gap {} (primal {value}, dual {dual_value})",
                out.duality_gap()
            )));
        }
        return Ok(out);
    }
}

/// Supergradient of `log v⁺` at `x`: `L(y) = base + grad·(y − x)` satisfies
/// `L(x) = log v⁺(x)` and `L(y) >= log v⁺(y)`.
#[derive(Clone, Debug)]
pub struct Supergradient {
    pub base: f64,
    pub grad: Vec<f64>,
    pub ext: ConcaveExtValue,
}

impl Supergradient {
    pub fn linearization(&self, x: &[f64], y: &[f64]) -> f64 {
        self.base
            + self
                .grad
                .iter()
                .zip(x.iter().zip(y))
                .map(|(g, (xj, yj))| g * (yj - xj))
                .sum::<f64>()
    }
}

pub fn supergradient_log(v: &Valuation, x: &[f64]) -> Result<Supergradient> {
    supergradient_from(concave_ext(v, x)?, x)
}

fn supergradient_from(ext: ConcaveExtValue, x: &[f64]) -> Result<Supergradient> {
    let denom = ext.q + ext.p.iter().zip(x).map(|(p, xj)| p * xj).sum::<f64>();
    if !(ext.value > 0.0) || !(denom > 0.0) {
        return Err(NswError::InvalidArgument("log v⁺ undefined at a zero-value point".into()));
    }
    Ok(Supergradient {
        base: denom.ln(),
        grad: ext.p.iter().map(|p| p / denom).collect(),
        ext,
    })
}

/// Solver settings for [`solve_eg`].
#[derive(Clone, Debug, Serialize)]
pub struct EgParams {
    pub alpha: f64,
    /// Interior floor; `None` uses `α / (2 + (1+α)·n)`.
    pub epsilon: Option<f64>,
    pub max_iterations: usize,
    /// Stop after this many iterations without improvement.
    pub patience: usize,
    /// Initial step length `η₀` of the schedule `η₀/√t`.
    pub step0: f64,
    /// Minimum objective improvement that counts as progress.
    pub tol: f64,
}

impl Default for EgParams {
    fn default() -> Self {
        EgParams {
            alpha: 0.25,
            epsilon: None,
            max_iterations: 3000,
            patience: 600,
            step0: 0.5,
            tol: 1e-12,
        }
    }
}

impl EgParams {
    pub fn epsilon_for(&self, n: usize) -> f64 {
        self.epsilon
            .unwrap_or(self.alpha / (2.0 + (1.0 + self.alpha) * n as f64))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EgTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub gap: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EgOutcome {
    pub x: ItemFractional,
    pub objective: f64,
    pub iterations: usize,
    /// Frank-Wolfe gap at the returned iterate over the floored polytope.
    pub gap: f64,
    pub converged: bool,
    pub epsilon: f64,
    /// Accepted (improving) iterates.
    #[serde(skip)]
    pub trace: Vec<EgTraceRow>,
}

struct Eval {
    objective: f64,
    grads: Vec<Vec<f64>>,
}

/// Project `z` onto `{y >= lo, Σ y <= 1}`.
fn project_capped(z: &mut [f64], lo: f64) {
    let k = z.len();
    let budget = 1.0 - lo * k as f64;
    let shifted: Vec<f64> = z.iter().map(|v| v - lo).collect();
    let clipped_sum: f64 = shifted.iter().map(|v| v.max(0.0)).sum();
    if clipped_sum <= budget {
        for (zj, s) in z.iter_mut().zip(&shifted) {
            *zj = lo + s.max(0.0);
        }
        return;
    }
    // Euclidean projection onto the simplex of mass `budget`
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (r, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - budget) / (r + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for (zj, s) in z.iter_mut().zip(&shifted) {
        *zj = lo + (s - theta).max(0.0);
    }
}

/// Maximize `Σ_{i∈agents} log v⁺_i(x_i)` over `{x >= ε, Σ_i x_ij <= 1}` on
/// `items`, by projected supergradient ascent.
pub fn solve_eg(
    inst: &Instance,
    agents: &[usize],
    items: ItemSet,
    params: &EgParams,
) -> Result<EgOutcome> {
    let k = agents.len();
    if k == 0 {
        return Err(NswError::InvalidArgument("relaxation needs at least one agent".into()));
    }
    if let Some(&i) = agents.iter().find(|&&i| !(inst.value(i, items) > 0.0)) {
        return Err(NswError::invariant(format!(
            "agent {i} has no value for the relaxation items"
        )));
    }
    let eps = params.epsilon_for(k);
    if !(eps > 0.0 && eps * k as f64 <= 1.0 + 1e-12) {
        return Err(NswError::InvalidArgument(format!(
            "epsilon {eps} must lie in (0, 1/{k}]"
        )));
    }
    let m = inst.num_items();
    let item_list = items.to_vec();
    let mut hints: Vec<Vec<ItemSet>> = vec![Vec::new(); k];

    let evaluate = |x: &[Vec<f64>], hints: &mut Vec<Vec<ItemSet>>| -> Result<Eval> {
        let mut objective = 0.0;
        let mut grads = Vec::with_capacity(k);
        for (r, &i) in agents.iter().enumerate() {
            let ext = concave_ext_with(inst.valuation(i), &x[r], ExtMode::ColumnGeneration, &hints[r])?;
            hints[r] = ext.columns.iter().map(|&(s, _)| s).filter(|s| !s.is_empty()).collect();
            let sg = supergradient_from(ext, &x[r])?;
            objective += sg.ext.value.ln();
            grads.push(sg.grad);
        }
        Ok(Eval { objective, grads })
    };
    let fw_gap = |x: &[Vec<f64>], g: &[Vec<f64>]| -> f64 {
        item_list
            .iter()
            .map(|&j| {
                let lin: f64 = (0..k).map(|r| g[r][j] * (eps - x[r][j])).sum();
                let top = (0..k).map(|r| g[r][j]).fold(0.0, f64::max);
                lin + (1.0 - eps * k as f64) * top
            })
            .sum()
    };

    let mut x: Vec<Vec<f64>> = vec![vec![0.0; m]; k];
    for row in x.iter_mut() {
        for &j in &item_list {
            row[j] = 1.0 / k as f64;
        }
    }
    let mut cur = evaluate(&x, &mut hints)?;
    let mut best_x = x.clone();
    let mut best_obj = cur.objective;
    let mut best_gap = fw_gap(&x, &cur.grads);
    let mut trace = vec![EgTraceRow {
        iteration: 0,
        objective: best_obj,
        gap: best_gap,
        step: 0.0,
    }];
    let target_gap = eps.powi(4) * k as f64;
    let mut converged = best_gap <= target_gap;
    let mut last_improve = 0;
    let mut iterations = 0;

    while !converged && iterations < params.max_iterations {
        iterations += 1;
        let t = iterations;
        let norm: f64 = cur
            .grads
            .iter()
            .map(|g| item_list.iter().map(|&j| g[j] * g[j]).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if !(norm > 0.0) {
            break;
        }
        let step = params.step0 / (t as f64).sqrt();
        let mut col = vec![0.0; k];
        for &j in &item_list {
            for r in 0..k {
                col[r] = x[r][j] + step * cur.grads[r][j] / norm;
            }
            project_capped(&mut col, eps);
            for r in 0..k {
                x[r][j] = col[r];
            }
        }
        cur = evaluate(&x, &mut hints)?;
        let gap = fw_gap(&x, &cur.grads);
        if cur.objective > best_obj + params.tol {
            best_obj = cur.objective;
            best_x = x.clone();
            best_gap = gap;
            last_improve = t;
            trace.push(EgTraceRow {
                iteration: t,
                objective: best_obj,
                gap,
                step,
            });
        }
        if gap <= target_gap {
            converged = true;
        } else if t - last_improve > params.patience {
            break;
        }
    }

    Ok(EgOutcome {
        x: ItemFractional {
            agents: agents.to_vec(),
            items,
            mass: best_x,
        },
        objective: best_obj,
        iterations,
        gap: best_gap,
        converged,
        epsilon: eps,
        trace,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaledCheck {
    /// `max_{x*} Σ_i v⁺_i(x*_i) / v⁺_i(x_i)`.
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
    /// `v⁺_i(x_i)` indexed by agent id (0 outside the relaxation).
    pub targets: Vec<f64>,
}

/// Certify the scaled-optimum property of a relaxation solution with the
/// exact configuration LP on valuations `v_i / v⁺_i(x_i)`.
pub fn scaled_optimum_check(x: &ItemFractional, inst: &Instance, alpha: f64) -> Result<ScaledCheck> {
    let mut targets = vec![0.0; inst.num_agents()];
    for (r, &i) in x.agents.iter().enumerate() {
        targets[i] = concave_ext(inst.valuation(i), &x.mass[r])?.value;
    }
    let lp = exact_config_lp(inst, &x.agents, x.items, &ConfigObjective::Scaled(targets.clone()))?;
    let bound = (1.0 + alpha) * x.agents.len() as f64;
    Ok(ScaledCheck {
        ratio: lp.optimum,
        bound,
        pass: lp.optimum <= bound + 1e-6,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clause() -> Valuation {
        Valuation::xos(vec![vec![2.0, 0.0], vec![0.0, 2.0]])
    }

    #[test]
    fn additive_extension_is_linear() {
        let v = Valuation::additive(vec![3.0, 1.0, 2.0]);
        let x = [0.5, 0.25, 1.0];
        let ext = concave_ext(&v, &x).unwrap();
        assert!((ext.value - (1.5 + 0.25 + 2.0)).abs() < 1e-9);
        assert!(ext.duality_gap() < 1e-9);
    }

    #[test]
    fn xos_half_half() {
        let ext = concave_ext(&two_clause(), &[0.5, 0.5]).unwrap();
        assert!((ext.value - 2.0).abs() < 1e-9);
        let mut cols = ext.columns.clone();
        cols.sort_by_key(|(s, _)| s.bits());
        assert_eq!(cols.len(), 2);
        assert_eq!(cols[0].0, ItemSet::singleton(0));
        assert!((cols[0].1 - 0.5).abs() < 1e-9);
        assert!((cols[1].1 - 0.5).abs() < 1e-9);
        let full = concave_ext_with(&two_clause(), &[0.5, 0.5], ExtMode::Enumerate, &[]).unwrap();
        assert!((full.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn all_ones_gives_full_value() {
        let v = Valuation::budgeted(vec![3.0, 3.0, 1.0], 5.0);
        let ext = concave_ext(&v, &[1.0, 1.0, 1.0]).unwrap();
        assert!((ext.value - 5.0).abs() < 1e-9);
    }

    #[test]
    fn zero_vector() {
        let ext = concave_ext(&two_clause(), &[0.0, 0.0]).unwrap();
        assert_eq!(ext.value, 0.0);
        assert_eq!(ext.columns, vec![(ItemSet::EMPTY, 1.0)]);
    }

    #[test]
    fn additive_supergradient() {
        let v = Valuation::additive(vec![3.0, 1.0]);
        let x = [0.5, 0.5];
        let sg = supergradient_log(&v, &x).unwrap();
        assert!((sg.grad[0] - 3.0 / 2.0).abs() < 1e-9);
        assert!((sg.grad[1] - 1.0 / 2.0).abs() < 1e-9);
    }

    fn grid_dominance(v: &Valuation, x: &[f64]) {
        let sg = supergradient_log(v, x).unwrap();
        assert!((sg.base - sg.ext.value.ln()).abs() < 1e-9);
        for a in 0..5 {
            for b in 0..5 {
                let y = [a as f64 / 4.0, b as f64 / 4.0];
                let full = concave_ext_with(v, &y, ExtMode::Enumerate, &[]).unwrap().value;
                if full > 0.0 {
                    assert!(sg.linearization(x, &y) >= full.ln() - 1e-8, "y = {y:?}");
                }
            }
        }
    }

    #[test]
    fn xos_supergradient_dominates_on_grid() {
        grid_dominance(&two_clause(), &[0.5, 0.5]);
    }

    #[test]
    fn tied_vertex_supergradient_dominates() {
        let v = Valuation::xos(vec![vec![1.0, 1.0], vec![2.0, 0.0]]);
        grid_dominance(&v, &[1.0, 1.0]);
        grid_dominance(&v, &[1.0, 0.0]);
    }

    #[test]
    fn projection_respects_floor_and_cap() {
        let mut z = vec![0.9, 0.8, -0.3];
        project_capped(&mut z, 0.05);
        assert!(z.iter().all(|&v| v >= 0.05 - 1e-12));
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut w = vec![0.1, 0.2];
        project_capped(&mut w, 0.05);
        assert_eq!(w, vec![0.1, 0.2]);
    }

    #[test]
    fn single_agent_takes_everything() {
        let inst = Instance::from_valuations(3, vec![Valuation::additive(vec![1.0, 2.0, 3.0])]).unwrap();
        let out = solve_eg(&inst, &[0], inst.all_items(), &EgParams::default()).unwrap();
        assert!(out.x.mass[0].iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert!((out.objective - 6f64.ln()).abs() < 1e-9);
        let check = scaled_optimum_check(&out.x, &inst, 0.25).unwrap();
        assert!((check.ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_agents_split_one_item() {
        let inst = Instance::from_valuations(
            1,
            vec![Valuation::additive(vec![1.0]), Valuation::additive(vec![1.0])],
        )
        .unwrap();
        let out = solve_eg(&inst, &[0, 1], inst.all_items(), &EgParams::default()).unwrap();
        assert!((out.x.mass[0][0] - 0.5).abs() < 1e-9);
        assert!((out.objective - 2.0 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn disjoint_interests_separate() {
        let inst = Instance::from_valuations(
            4,
            vec![
                Valuation::additive(vec![1.0, 2.0, 0.0, 0.0]),
                Valuation::additive(vec![0.0, 0.0, 3.0, 1.0]),
            ],
        )
        .unwrap();
        let params = EgParams::default();
        let out = solve_eg(&inst, &[0, 1], inst.all_items(), &params).unwrap();
        let eps = out.epsilon;
        for j in 0..2 {
            assert!(out.x.mass[0][j] >= 1.0 - eps - 1e-3);
            assert!(out.x.mass[1][j + 2] >= 1.0 - eps - 1e-3);
        }
        let check = scaled_optimum_check(&out.x, &inst, params.alpha).unwrap();
        assert!(check.pass, "ratio {}", check.ratio);
    }
}

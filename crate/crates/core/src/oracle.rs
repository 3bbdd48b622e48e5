//! Brute-force exact solvers. Deliberately naive: every acceptance check
//! compares against these.

use serde::Serialize;

use crate::error::{NswError, Result};
use crate::lp::PackingLp;
use crate::model::{Allocation, ConfigSolution, Instance, ItemFractional, ItemSet};

pub const ASSIGNMENT_CAP: f64 = 1e7;
pub const LP_COLUMN_CAP: f64 = 1e6;

#[derive(Clone, Debug, Serialize)]
pub struct ExactResult<W> {
    pub optimum: f64,
    pub witness: W,
    pub nodes: u64,
}

/// Configuration LP objective.
#[derive(Clone, Debug)]
pub enum ConfigObjective {
    Welfare,
    /// Divide each `v_i` by `V_i`. Indexed by agent id.
    Scaled(Vec<f64>),
}

fn check_assignment_cap(n: usize, m: usize) -> Result<u64> {
    let count = (n as f64).powi(m as i32);
    if count > ASSIGNMENT_CAP {
        return Err(NswError::cap("n^m assignments", count, ASSIGNMENT_CAP));
    }
    Ok(count as u64)
}

/// Visit every map items -> agents as a mixed-radix counter. The callback
/// receives the bundles; returns the number of assignments visited.
fn for_each_assignment(n: usize, m: usize, mut visit: impl FnMut(u64, &[ItemSet])) {
    let mut digits = vec![0usize; m];
    let mut bundles = vec![ItemSet::EMPTY; n];
    bundles[0] = ItemSet::full(m);
    let mut counter = 0u64;
    loop {
        visit(counter, &bundles);
        counter += 1;
        let mut pos = 0;
        loop {
            if pos == m {
                return;
            }
            bundles[digits[pos]].remove(pos);
            digits[pos] += 1;
            if digits[pos] == n {
                digits[pos] = 0;
                bundles[0].insert(pos);
                pos += 1;
            } else {
                bundles[digits[pos]].insert(pos);
                break;
            }
        }
    }
}

/// Maximum NSW over all `n^m` assignments; ties go to the lowest counter.
pub fn exact_nsw(inst: &Instance) -> Result<ExactResult<Allocation>> {
    let n = inst.num_agents();
    let m = inst.num_items();
    check_assignment_cap(n, m)?;
    // (positive count, log-sum) so that all-zero instances still pick a witness
    let mut best: Option<(f64, Vec<ItemSet>)> = None;
    let mut nodes = 0;
    for_each_assignment(n, m, |_, bundles| {
        nodes += 1;
        let mut log_sum = 0.0;
        for (i, &b) in bundles.iter().enumerate() {
            let v = inst.value(i, b);
            if v <= 0.0 {
                log_sum = f64::NEG_INFINITY;
                break;
            }
            log_sum += v.ln();
        }
        if best.as_ref().is_none_or(|(b, _)| log_sum > *b) {
            best = Some((log_sum, bundles.to_vec()));
        }
    });
    let (log_sum, bundles) = best.expect("at least one assignment");
    let optimum = if log_sum.is_finite() {
        (log_sum / n as f64).exp()
    } else {
        0.0
    };
    Ok(ExactResult {
        optimum,
        witness: Allocation { bundles },
        nodes,
    })
}

/// Maximum of `Σ_i v_i(T_i)/V_i` over all allocations.
pub fn exact_scaled_welfare(inst: &Instance, targets: &[f64]) -> Result<ExactResult<Allocation>> {
    let n = inst.num_agents();
    let m = inst.num_items();
    if targets.len() != n || targets.iter().any(|&v| !(v > 0.0)) {
        return Err(NswError::InvalidArgument("scaled welfare needs one positive V per agent".into()));
    }
    check_assignment_cap(n, m)?;
    let mut best: Option<(f64, Vec<ItemSet>)> = None;
    let mut nodes = 0;
    for_each_assignment(n, m, |_, bundles| {
        nodes += 1;
        let total: f64 = bundles
            .iter()
            .enumerate()
            .map(|(i, &b)| inst.value(i, b) / targets[i])
            .sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, bundles.to_vec()));
        }
    });
    let (optimum, bundles) = best.expect("at least one assignment");
    Ok(ExactResult {
        optimum,
        witness: Allocation { bundles },
        nodes,
    })
}

/// Full configuration LP over `agents` and subsets of `items`, by explicit
/// column enumeration.
pub fn exact_config_lp(
    inst: &Instance,
    agents: &[usize],
    items: ItemSet,
    objective: &ConfigObjective,
) -> Result<ExactResult<ConfigSolution>> {
    let columns = agents.len() as f64 * 2f64.powi(items.len() as i32);
    if columns > LP_COLUMN_CAP {
        return Err(NswError::cap("configuration LP columns", columns, LP_COLUMN_CAP));
    }
    let item_list = items.to_vec();
    let rows = agents.len() + item_list.len();
    let mut lp = PackingLp::new(vec![1.0; rows]);
    let mut meta = Vec::new();
    for (k, &i) in agents.iter().enumerate() {
        let scale = match objective {
            ConfigObjective::Welfare => 1.0,
            ConfigObjective::Scaled(v) => {
                if !(v[i] > 0.0) {
                    return Err(NswError::InvalidArgument(format!("V_{i} must be positive")));
                }
                1.0 / v[i]
            }
        };
        for s in items.subsets().filter(|s| !s.is_empty()) {
            let val = inst.value(i, s) * scale;
            if val <= 0.0 {
                continue;
            }
            let mut coeffs = vec![(k, 1.0)];
            for (r, &j) in item_list.iter().enumerate() {
                if s.contains(j) {
                    coeffs.push((agents.len() + r, 1.0));
                }
            }
            lp.add_column(val, coeffs);
            meta.push((i, s));
        }
    }
    let sol = lp.solve()?;
    let mut witness = ConfigSolution::empty(inst.num_agents());
    for (c, &(i, s)) in meta.iter().enumerate() {
        if sol.primal[c] > 1e-12 {
            witness.columns[i].push((s, sol.primal[c]));
        }
    }
    for &i in agents {
        let rest = 1.0 - witness.agent_weight(i);
        if rest > 1e-12 {
            witness.columns[i].push((ItemSet::EMPTY, rest));
        }
    }
    Ok(ExactResult {
        optimum: sol.value,
        witness,
        nodes: sol.pivots as u64,
    })
}

/// Configuration LP where agent `i` may use item `j` with total mass at most
/// `x_{ij}` (and per-agent weight at most 1). Its optimum is `Σ_i v⁺_i(x_i)`.
pub fn config_lp_at_marginals(inst: &Instance, x: &ItemFractional) -> Result<f64> {
    let item_list = x.items.to_vec();
    let per_agent = 2f64.powi(item_list.len() as i32);
    let columns = x.agents.len() as f64 * per_agent;
    if columns > LP_COLUMN_CAP {
        return Err(NswError::cap("configuration LP columns", columns, LP_COLUMN_CAP));
    }
    let stride = item_list.len() + 1;
    let mut rhs = Vec::with_capacity(x.agents.len() * stride);
    for row in &x.mass {
        rhs.push(1.0);
        rhs.extend(item_list.iter().map(|&j| row[j].max(0.0)));
    }
    let mut lp = PackingLp::new(rhs);
    for (k, &i) in x.agents.iter().enumerate() {
        for s in x.items.subsets().filter(|s| !s.is_empty()) {
            let val = inst.value(i, s);
            if val <= 0.0 {
                continue;
            }
            let mut coeffs = vec![(k * stride, 1.0)];
            for (r, &j) in item_list.iter().enumerate() {
                if s.contains(j) {
                    coeffs.push((k * stride + 1 + r, 1.0));
                }
            }
            lp.add_column(val, coeffs);
        }
    }
    Ok(lp.solve()?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuations::Valuation;

    fn additive(m: usize, ws: Vec<Vec<f64>>) -> Instance {
        Instance::from_valuations(m, ws.into_iter().map(Valuation::additive).collect()).unwrap()
    }

    #[test]
    fn exact_nsw_two_by_two() {
        let inst = additive(2, vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        let res = exact_nsw(&inst).unwrap();
        assert!((res.optimum - 2.0).abs() < 1e-12);
        assert_eq!(res.witness.bundles, vec![ItemSet::singleton(0), ItemSet::singleton(1)]);
        assert_eq!(res.nodes, 4);
        res.witness.validate(&inst).unwrap();
    }

    #[test]
    fn exact_nsw_identical_agents() {
        let inst = additive(6, vec![vec![1.0; 6]; 3]);
        assert!((exact_nsw(&inst).unwrap().optimum - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_nsw_single_agent() {
        let inst = Instance::from_valuations(3, vec![Valuation::budgeted(vec![1.0, 2.0, 3.0], 4.0)]).unwrap();
        assert!((exact_nsw(&inst).unwrap().optimum - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_nsw_cap() {
        let inst = additive(30, vec![vec![1.0; 30]; 3]);
        let err = exact_nsw(&inst).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn scaled_welfare_cases() {
        let single = additive(3, vec![vec![1.0, 2.0, 3.0]]);
        assert!((exact_scaled_welfare(&single, &[2.0]).unwrap().optimum - 3.0).abs() < 1e-12);
        let disjoint = additive(4, vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 3.0, 1.0]]);
        let res = exact_scaled_welfare(&disjoint, &[2.0, 4.0]).unwrap();
        assert!((res.optimum - 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_lp_single_agent() {
        let inst = additive(3, vec![vec![1.0, 2.0, 3.0]]);
        let res = exact_config_lp(&inst, &[0], inst.all_items(), &ConfigObjective::Welfare).unwrap();
        assert!((res.optimum - 6.0).abs() < 1e-9);
        assert_eq!(res.witness.columns[0], vec![(ItemSet::full(3), 1.0)]);
    }

    #[test]
    fn config_lp_two_agents_one_item() {
        let inst = additive(1, vec![vec![1.0], vec![1.0]]);
        let res = exact_config_lp(&inst, &[0, 1], inst.all_items(), &ConfigObjective::Welfare).unwrap();
        assert!((res.optimum - 1.0).abs() < 1e-9);
        let integral = exact_scaled_welfare(&inst, &[1.0, 1.0]).unwrap();
        assert!((integral.optimum - 1.0).abs() < 1e-9);
        // with V = 1/2 each agent's full share is worth 2
        let scaled = exact_config_lp(&inst, &[0, 1], inst.all_items(), &ConfigObjective::Scaled(vec![0.5, 0.5])).unwrap();
        assert!((scaled.optimum - 2.0).abs() < 1e-9);
    }

    #[test]
    fn config_lp_dominates_integral() {
        let inst = Instance::from_valuations(
            3,
            vec![
                Valuation::xos(vec![vec![2.0, 0.0, 1.0], vec![0.0, 2.0, 1.0]]),
                Valuation::budgeted(vec![1.0, 1.0, 1.0], 1.5),
            ],
        )
        .unwrap();
        let v = [1.3, 0.7];
        let lp = exact_config_lp(&inst, &[0, 1], inst.all_items(), &ConfigObjective::Scaled(v.to_vec())).unwrap();
        let int = exact_scaled_welfare(&inst, &v).unwrap();
        assert!(lp.optimum >= int.optimum - 1e-9);
    }
}

//! Valuation families and their value, demand and XOS-clause oracles.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{NswError, Result};
use crate::model::ItemSet;

/// Largest item universe for which exhaustive enumeration is allowed
/// (explicit tables, exhaustive demand, exhaustive validation).
pub const ENUMERATION_CAP: usize = 16;

/// Utility ties within this margin are broken by the canonical set order.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Valuation {
    Additive { weights: Vec<f64> },
    Xos { clauses: Vec<Vec<f64>> },
    BudgetedAdditive { weights: Vec<f64>, cap: f64 },
    /// Full table indexed by item-set bits; `values.len() == 2^m`.
    Table { values: Vec<f64> },
}

/// Item prices for demand queries; any sign allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceVector(pub Vec<f64>);

impl PriceVector {
    pub fn of(&self, set: ItemSet) -> f64 {
        set.iter().map(|j| self.0[j]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Demand {
    pub set: ItemSet,
    pub utility: f64,
}

impl Valuation {
    pub fn additive(weights: Vec<f64>) -> Self {
        Valuation::Additive { weights }
    }

    pub fn xos(clauses: Vec<Vec<f64>>) -> Self {
        assert!(!clauses.is_empty(), "XOS valuation needs at least one clause");
        Valuation::Xos { clauses }
    }

    pub fn budgeted(weights: Vec<f64>, cap: f64) -> Self {
        Valuation::BudgetedAdditive { weights, cap }
    }

    pub fn table(values: Vec<f64>) -> Self {
        assert!(values.len().is_power_of_two(), "table length must be 2^m");
        Valuation::Table { values }
    }

    /// Materialize any valuation as an explicit table.
    pub fn to_table(&self) -> Result<Valuation> {
        let m = self.num_items();
        if m > ENUMERATION_CAP {
            return Err(NswError::cap("table materialization", m as f64, ENUMERATION_CAP as f64));
        }
        Ok(Valuation::table(
            ItemSet::full(m).subsets().map(|s| self.value(s)).collect(),
        ))
    }

    pub fn num_items(&self) -> usize {
        match self {
            Valuation::Additive { weights } | Valuation::BudgetedAdditive { weights, .. } => {
                weights.len()
            }
            Valuation::Xos { clauses } => clauses[0].len(),
            Valuation::Table { values } => values.len().trailing_zeros() as usize,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Valuation::Additive { .. } => "additive",
            Valuation::Xos { .. } => "xos",
            Valuation::BudgetedAdditive { .. } => "budgeted_additive",
            Valuation::Table { .. } => "table",
        }
    }

    /// Additive valuations count as single-clause XOS.
    pub fn is_xos_representable(&self) -> bool {
        matches!(self, Valuation::Additive { .. } | Valuation::Xos { .. })
    }

    pub fn value(&self, set: ItemSet) -> f64 {
        match self {
            Valuation::Additive { weights } => clause_sum(weights, set),
            Valuation::Xos { clauses } => clauses
                .iter()
                .map(|c| clause_sum(c, set))
                .fold(0.0, f64::max),
            Valuation::BudgetedAdditive { weights, cap } => clause_sum(weights, set).min(*cap),
            Valuation::Table { values } => values[set.bits() as usize],
        }
    }

    pub fn singleton(&self, j: usize) -> f64 {
        self.value(ItemSet::singleton(j))
    }

    /// `max_{j∈U} v({j})`, 0 for empty `U`.
    pub fn singleton_max(&self, universe: ItemSet) -> f64 {
        universe.iter().map(|j| self.singleton(j)).fold(0.0, f64::max)
    }

    /// Demand query over the full item universe.
    pub fn demand(&self, prices: &PriceVector) -> Result<Demand> {
        self.demand_within(prices, ItemSet::full(self.num_items()))
    }

    /// Demand query restricted to subsets of `universe`. Ties are broken by
    /// the canonical set order (size, then lexicographic).
    pub fn demand_within(&self, prices: &PriceVector, universe: ItemSet) -> Result<Demand> {
        let p = &prices.0;
        match self {
            Valuation::Additive { weights } => Ok(additive_demand(weights, p, universe)),
            Valuation::Xos { clauses } => {
                let mut best: Option<Demand> = None;
                for c in clauses {
                    let cand = additive_demand(c, p, universe);
                    best = Some(match best {
                        None => cand,
                        Some(b) => better_demand(b, cand),
                    });
                }
                Ok(best.expect("at least one clause"))
            }
            Valuation::BudgetedAdditive { .. } | Valuation::Table { .. } => {
                if universe.len() > ENUMERATION_CAP {
                    return Err(NswError::cap(
                        "exhaustive demand",
                        universe.len() as f64,
                        ENUMERATION_CAP as f64,
                    ));
                }
                Ok(self.demand_exhaustive(p, universe))
            }
        }
    }

    /// Brute-force demand over all subsets of `universe`.
    pub fn demand_exhaustive(&self, prices: &[f64], universe: ItemSet) -> Demand {
        let mut best = Demand {
            set: ItemSet::EMPTY,
            utility: 0.0,
        };
        for s in universe.subsets() {
            let u = self.value(s) - s.iter().map(|j| prices[j]).sum::<f64>();
            best = better_demand(best, Demand { set: s, utility: u });
        }
        best
    }

    /// Clause achieving `v(S)`; lowest index on ties. Additive valuations
    /// answer with their single clause.
    pub fn xos_clause(&self, set: ItemSet) -> Result<(usize, &[f64])> {
        match self {
            Valuation::Additive { weights } => Ok((0, weights.as_slice())),
            Valuation::Xos { clauses } => {
                let mut best = 0;
                let mut best_val = clause_sum(&clauses[0], set);
                for (k, c) in clauses.iter().enumerate().skip(1) {
                    let val = clause_sum(c, set);
                    if val > best_val {
                        best = k;
                        best_val = val;
                    }
                }
                Ok((best, clauses[best].as_slice()))
            }
            other => Err(NswError::Incompatible(format!(
                "XOS clause oracle called on a {} valuation",
                other.family()
            ))),
        }
    }

    /// Multiply every value by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Valuation {
        let sc = |w: &Vec<f64>| w.iter().map(|x| x * factor).collect::<Vec<_>>();
        match self {
            Valuation::Additive { weights } => Valuation::Additive { weights: sc(weights) },
            Valuation::Xos { clauses } => Valuation::Xos {
                clauses: clauses.iter().map(sc).collect(),
            },
            Valuation::BudgetedAdditive { weights, cap } => Valuation::BudgetedAdditive {
                weights: sc(weights),
                cap: cap * factor,
            },
            Valuation::Table { values } => Valuation::Table { values: sc(values) },
        }
    }

    /// Relabel items: new item `k` is old item `perm[k]`.
    pub fn permute_items(&self, perm: &[usize]) -> Valuation {
        let pw = |w: &Vec<f64>| perm.iter().map(|&old| w[old]).collect::<Vec<_>>();
        match self {
            Valuation::Additive { weights } => Valuation::Additive { weights: pw(weights) },
            Valuation::Xos { clauses } => Valuation::Xos {
                clauses: clauses.iter().map(pw).collect(),
            },
            Valuation::BudgetedAdditive { weights, cap } => Valuation::BudgetedAdditive {
                weights: pw(weights),
                cap: *cap,
            },
            Valuation::Table { values } => {
                let m = perm.len();
                let mut out = vec![0.0; values.len()];
                for new_set in ItemSet::full(m).subsets() {
                    let old_set: ItemSet = new_set.iter().map(|k| perm[k]).collect();
                    out[new_set.bits() as usize] = values[old_set.bits() as usize];
                }
                Valuation::Table { values: out }
            }
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_valuation(self, self.num_items())
    }
}

fn clause_sum(weights: &[f64], set: ItemSet) -> f64 {
    // fold from +0.0: an empty f64 `sum()` is -0.0
    set.iter().fold(0.0, |acc, j| acc + weights[j])
}

fn additive_demand(weights: &[f64], prices: &[f64], universe: ItemSet) -> Demand {
    let mut set = ItemSet::EMPTY;
    let mut utility = 0.0;
    for j in universe.iter() {
        if weights[j] > prices[j] {
            set.insert(j);
            utility += weights[j] - prices[j];
        }
    }
    Demand { set, utility }
}

fn better_demand(incumbent: Demand, cand: Demand) -> Demand {
    let scale = 1.0 + incumbent.utility.abs().max(cand.utility.abs());
    let tie = (cand.utility - incumbent.utility).abs() <= TIE_EPS * scale;
    if cand.utility > incumbent.utility + TIE_EPS * scale
        || (tie && cand.set.canonical_cmp(incumbent.set) == Ordering::Less)
    {
        cand
    } else {
        incumbent
    }
}

/// Outcome of one exhaustive property check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Check {
    Pass,
    Fail(String),
    Skipped,
}

impl Check {
    pub fn passed(&self) -> bool {
        matches!(self, Check::Pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub zero_at_empty: Check,
    pub monotone: Check,
    pub subadditive: Check,
    /// `None` unless the valuation is tagged XOS.
    pub xos_consistent: Option<Check>,
}

impl ValidationReport {
    /// True when nothing failed; skipped checks do not count as failures.
    pub fn ok(&self) -> bool {
        let bad = |c: &Check| matches!(c, Check::Fail(_));
        !(bad(&self.zero_at_empty)
            || bad(&self.monotone)
            || bad(&self.subadditive)
            || self.xos_consistent.as_ref().is_some_and(bad))
    }

    pub fn all_passed(&self) -> bool {
        self.zero_at_empty.passed()
            && self.monotone.passed()
            && self.subadditive.passed()
            && self.xos_consistent.as_ref().is_none_or(Check::passed)
    }
}

/// Exhaustively check normalization, monotonicity and subadditivity. The
/// enumerating checks are skipped above [`ENUMERATION_CAP`] items.
pub fn validate_valuation(v: &Valuation, m: usize) -> ValidationReport {
    const TOL: f64 = 1e-12;
    let zero_at_empty = if v.value(ItemSet::EMPTY).abs() <= TOL {
        Check::Pass
    } else {
        Check::Fail(format!("v(∅) = {}", v.value(ItemSet::EMPTY)))
    };
    let xos_consistent = match v {
        Valuation::Xos { clauses } => Some(
            if clauses.is_empty() {
                Check::Fail("no clauses".into())
            } else if let Some(k) = clauses.iter().position(|c| c.len() != m) {
                Check::Fail(format!("clause {k} has length {}, expected {m}", clauses[k].len()))
            } else if let Some(k) = clauses
                .iter()
                .position(|c| c.iter().any(|x| !x.is_finite() || *x < 0.0))
            {
                Check::Fail(format!("clause {k} has a negative or non-finite weight"))
            } else {
                Check::Pass
            },
        ),
        _ => None,
    };
    if m > ENUMERATION_CAP {
        return ValidationReport {
            zero_at_empty,
            monotone: Check::Skipped,
            subadditive: Check::Skipped,
            xos_consistent,
        };
    }
    let full = ItemSet::full(m);
    let table: Vec<f64> = full.subsets().map(|s| v.value(s)).collect();
    let at = |s: ItemSet| table[s.bits() as usize];

    let mut monotone = Check::Pass;
    'mono: for s in full.subsets() {
        for j in full.difference(s).iter() {
            if at(s) > at(s.with(j)) + TOL {
                monotone = Check::Fail(format!("v({s:?}) > v({:?})", s.with(j)));
                break 'mono;
            }
        }
    }

    // disjoint pairs (S, U∖S) with S holding the lowest item of U
    let mut subadditive = Check::Pass;
    'sub: for u in full.subsets() {
        let Some(low) = u.first() else { continue };
        let rest = u.without(low);
        for r in rest.subsets() {
            let s = r.with(low);
            let t = u.difference(s);
            if t.is_empty() {
                continue;
            }
            if at(u) > at(s) + at(t) + TOL {
                subadditive = Check::Fail(format!(
                    "v({u:?}) > v({s:?}) + v({t:?}) for (S,T) = ({s:?},{t:?})"
                ));
                break 'sub;
            }
        }
    }
    ValidationReport {
        zero_at_empty,
        monotone,
        subadditive,
        xos_consistent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[usize]) -> ItemSet {
        ItemSet::from_items(items.iter().copied())
    }

    #[test]
    fn value_examples() {
        let x = Valuation::xos(vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(x.value(set(&[0, 1])), 2.0);
        assert_eq!(x.value(ItemSet::EMPTY), 0.0);
        let b = Valuation::budgeted(vec![3.0, 3.0], 4.0);
        assert_eq!(b.value(set(&[0, 1])), 4.0);
        assert_eq!(b.value(ItemSet::EMPTY), 0.0);
    }

    #[test]
    fn demand_examples() {
        let a = Valuation::additive(vec![3.0, 1.0]);
        let d = a.demand(&PriceVector(vec![1.0, 2.0])).unwrap();
        assert_eq!((d.set, d.utility), (set(&[0]), 2.0));

        let x = Valuation::xos(vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        let d = x.demand(&PriceVector(vec![1.0, 1.0])).unwrap();
        assert_eq!((d.set, d.utility), (set(&[0]), 1.0));
        // brute force agrees on the utility
        assert_eq!(x.demand_exhaustive(&[1.0, 1.0], ItemSet::full(2)).utility, 1.0);
    }

    #[test]
    fn demand_with_prohibitive_prices_is_empty() {
        let p = PriceVector(vec![10.0, 10.0, 10.0]);
        for v in [
            Valuation::additive(vec![3.0, 1.0, 2.0]),
            Valuation::xos(vec![vec![3.0, 0.0, 1.0], vec![0.0, 2.0, 2.0]]),
            Valuation::budgeted(vec![3.0, 1.0, 2.0], 4.0),
        ] {
            let d = v.demand(&p).unwrap();
            assert_eq!((d.set, d.utility), (ItemSet::EMPTY, 0.0), "{v:?}");
        }
    }

    #[test]
    fn demand_cap_enforced_for_exhaustive_families() {
        let b = Valuation::budgeted(vec![1.0; 20], 5.0);
        let err = b.demand(&PriceVector(vec![0.5; 20])).unwrap_err();
        assert!(matches!(err, NswError::CapExceeded { .. }));
    }

    #[test]
    fn xos_clause_examples() {
        let x = Valuation::xos(vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        let (k, c) = x.xos_clause(set(&[0])).unwrap();
        assert_eq!((k, c), (0, &[2.0, 0.0][..]));
        let y = Valuation::xos(vec![vec![1.0, 1.0], vec![2.0, 0.0]]);
        let (k, c) = y.xos_clause(set(&[0, 1])).unwrap();
        assert_eq!(k, 0);
        assert_eq!(clause_sum(c, set(&[0, 1])), 2.0);
        let (k, _) = y.xos_clause(ItemSet::EMPTY).unwrap();
        assert_eq!(k, 0);
        assert!(Valuation::budgeted(vec![1.0], 1.0).xos_clause(ItemSet::EMPTY).is_err());
    }

    #[test]
    fn singleton_max_examples() {
        assert_eq!(Valuation::additive(vec![3.0, 1.0]).singleton_max(set(&[0, 1])), 3.0);
        assert_eq!(Valuation::additive(vec![3.0, 1.0]).singleton_max(ItemSet::EMPTY), 0.0);
        assert_eq!(Valuation::budgeted(vec![3.0, 3.0], 2.0).singleton_max(set(&[0, 1])), 2.0);
    }

    #[test]
    fn validation_examples() {
        let a = Valuation::additive(vec![0.0, 1.5, 2.0]);
        assert!(a.validate().all_passed());

        // v({a,b}) > v({a}) + v({b})
        let t = Valuation::table(vec![0.0, 1.0, 1.0, 3.0]);
        let r = t.validate();
        assert!(r.monotone.passed());
        match &r.subadditive {
            Check::Fail(msg) => assert!(msg.contains("(S,T) = ({0},{1})"), "{msg}"),
            other => panic!("expected failure, got {other:?}"),
        }

        let b = Valuation::budgeted(vec![3.0, 3.0], 4.0);
        let r = b.validate();
        assert!(r.monotone.passed() && r.subadditive.passed());
    }

    #[test]
    fn validation_skips_beyond_cap() {
        let a = Valuation::additive(vec![1.0; 20]);
        let r = a.validate();
        assert_eq!(r.monotone, Check::Skipped);
        assert!(r.ok());
        assert!(!r.all_passed());
    }

    #[test]
    fn table_round_trip_and_permutation() {
        let x = Valuation::xos(vec![vec![2.0, 0.0, 1.0], vec![0.0, 3.0, 0.5]]);
        let t = x.to_table().unwrap();
        for s in ItemSet::full(3).subsets() {
            assert_eq!(t.value(s), x.value(s));
        }
        let perm = [2, 0, 1];
        let px = x.permute_items(&perm);
        let pt = t.permute_items(&perm);
        for s in ItemSet::full(3).subsets() {
            assert_eq!(px.value(s), pt.value(s));
            let old: ItemSet = s.iter().map(|k| perm[k]).collect();
            assert_eq!(px.value(s), x.value(old));
        }
    }
}

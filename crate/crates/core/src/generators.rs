//! Seeded random instance generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NswError, Result};
use crate::model::{Instance, ItemSet};
use crate::valuations::{Valuation, ENUMERATION_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Additive,
    Xos,
    BudgetedAdditive,
    /// Max of random additive clauses, materialized as a table.
    Table,
    /// Sum of two budgeted-additive functions, materialized as a table.
    BudgetedMixture,
}

impl Family {
    pub fn parse(s: &str) -> Result<Family> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| NswError::InvalidArgument(format!("unknown family {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Additive => "additive",
            Family::Xos => "xos",
            Family::BudgetedAdditive => "budgeted_additive",
            Family::Table => "table",
            Family::BudgetedMixture => "budgeted_mixture",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDist {
    /// Uniform on `[0, 1)`.
    Uniform,
    /// Uniform integers `1..=10`.
    Integer,
    /// Pareto with shape 3 and scale 1 (mean 1.5).
    HeavyTailed,
}

impl WeightDist {
    pub fn sample(self, rng: &mut impl Rng) -> f64 {
        match self {
            WeightDist::Uniform => rng.gen::<f64>(),
            WeightDist::Integer => rng.gen_range(1..=10) as f64,
            WeightDist::HeavyTailed => (1.0 - rng.gen::<f64>()).powf(-1.0 / 3.0),
        }
    }

    pub fn mean(self) -> f64 {
        match self {
            WeightDist::Uniform => 0.5,
            WeightDist::Integer => 5.5,
            WeightDist::HeavyTailed => 1.5,
        }
    }

    pub fn variance(self) -> f64 {
        match self {
            WeightDist::Uniform => 1.0 / 12.0,
            WeightDist::Integer => 8.25,
            WeightDist::HeavyTailed => 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub weights: WeightDist,
    /// Clauses per agent (XOS and table families).
    pub clauses: usize,
    /// Budget as a fraction of the agent's total weight.
    pub cap_ratio: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            family: Family::Additive,
            n: 2,
            m: 4,
            weights: WeightDist::Integer,
            clauses: 3,
            cap_ratio: 0.5,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(NswError::InvalidArgument("n and m must be positive".into()));
        }
        if self.m > crate::model::MAX_ITEMS {
            return Err(NswError::InvalidArgument(format!("m = {} exceeds 64", self.m)));
        }
        if matches!(self.family, Family::Table | Family::BudgetedMixture) && self.m > ENUMERATION_CAP {
            return Err(NswError::cap("table generation", self.m as f64, ENUMERATION_CAP as f64));
        }
        if self.clauses == 0 {
            return Err(NswError::InvalidArgument("clauses must be positive".into()));
        }
        if !(self.cap_ratio > 0.0) {
            return Err(NswError::InvalidArgument("cap ratio must be positive".into()));
        }
        Ok(())
    }
}

fn weights(rng: &mut ChaCha8Rng, dist: WeightDist, m: usize) -> Vec<f64> {
    (0..m).map(|_| dist.sample(rng)).collect()
}

fn budgeted(rng: &mut ChaCha8Rng, spec: &GenSpec) -> Valuation {
    let w = weights(rng, spec.weights, spec.m);
    let cap = spec.cap_ratio * w.iter().sum::<f64>();
    Valuation::budgeted(w, cap)
}

fn table_of(m: usize, f: impl Fn(ItemSet) -> f64) -> Valuation {
    Valuation::table(ItemSet::full(m).subsets().map(f).collect())
}

/// Deterministic instance from the spec's seed.
pub fn generate(spec: &GenSpec) -> Result<Instance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vals = (0..spec.n)
        .map(|_| match spec.family {
            Family::Additive => Valuation::additive(weights(&mut rng, spec.weights, spec.m)),
            Family::Xos => Valuation::xos(
                (0..spec.clauses)
                    .map(|_| weights(&mut rng, spec.weights, spec.m))
                    .collect(),
            ),
            Family::BudgetedAdditive => budgeted(&mut rng, spec),
            Family::Table => {
                let xos = Valuation::xos(
                    (0..spec.clauses)
                        .map(|_| weights(&mut rng, spec.weights, spec.m))
                        .collect(),
                );
                table_of(spec.m, |s| xos.value(s))
            }
            Family::BudgetedMixture => {
                let a = budgeted(&mut rng, spec);
                let b = budgeted(&mut rng, spec);
                table_of(spec.m, |s| a.value(s) + b.value(s))
            }
        })
        .collect();
    Instance::from_valuations(spec.m, vals)
}

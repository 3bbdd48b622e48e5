//! Monte-Carlo checks of concentration bounds for monotone subadditive
//! functions of random subsets.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::ItemSet;
use crate::rounding::{tag, RngStream};
use crate::valuations::Valuation;

/// A random subset `R ⊆ S` with independent inclusion probabilities.
#[derive(Clone, Debug)]
pub struct TailExperiment {
    pub f: Valuation,
    pub base: ItemSet,
    /// Inclusion probability per item of the universe.
    pub probs: Vec<f64>,
    pub trials: usize,
    pub q: u32,
    pub k: u32,
    /// Upper bound on singleton values.
    pub nu: f64,
    pub seed: u64,
}

impl TailExperiment {
    /// Uniform inclusion probability `p` on `base`.
    pub fn uniform(f: Valuation, base: ItemSet, p: f64, trials: usize, seed: u64) -> Self {
        let m = f.num_items();
        let nu = f.singleton_max(base).max(f64::MIN_POSITIVE);
        TailExperiment {
            probs: (0..m).map(|j| if base.contains(j) { p } else { 0.0 }).collect(),
            f,
            base,
            trials,
            q: 2,
            k: 3,
            nu,
            seed,
        }
    }

    /// `f(R)` for every trial, deterministic in the seed.
    pub fn sample(&self) -> Vec<f64> {
        let rng = RngStream::new(self.seed);
        let items = self.base.to_vec();
        (0..self.trials)
            .into_par_iter()
            .map(|t| {
                let mut r = rng.substream(tag::TRIAL, &[t as u64]);
                let mut set = ItemSet::EMPTY;
                for &j in &items {
                    if r.gen::<f64>() < self.probs[j] {
                        set.insert(j);
                    }
                }
                self.f.value(set)
            })
            .collect()
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

fn proportion(xs: &[f64], pred: impl Fn(f64) -> bool) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let p = xs.iter().filter(|&&x| pred(x)).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Lower median of the sample.
pub fn lower_median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// The estimated quantity (mean, probability or product).
    pub empirical: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
    /// Extra estimates (left/right probabilities, median) for reporting.
    pub detail: Vec<(&'static str, f64)>,
}

/// `E[f(R)] >= f(S)/k` when each item is kept with probability `1/k`.
pub fn expectation_lower(f: &Valuation, base: ItemSet, k: u32, trials: usize, seed: u64) -> CheckResult {
    let exp = TailExperiment::uniform(f.clone(), base, 1.0 / k as f64, trials, seed);
    let (mean, se) = mean_and_se(&exp.sample());
    let bound = f.value(base) / k as f64;
    CheckResult {
        name: "expectation_lower",
        empirical: mean,
        bound,
        slack: 3.0 * se,
        pass: mean >= bound - 3.0 * se - 1e-12,
        detail: vec![],
    }
}

/// `Pr[g ≥ (q+1)a + k] · Pr[g ≤ a]^q ≤ 1/q^k` with `g = f/ν`.
pub fn two_sided_tail(exp: &TailExperiment, a: f64) -> CheckResult {
    let g: Vec<f64> = exp.sample().into_iter().map(|v| v / exp.nu).collect();
    two_sided_from(&g, a, exp.q, exp.k)
}

fn two_sided_from(g: &[f64], a: f64, q: u32, k: u32) -> CheckResult {
    let hi = (q as f64 + 1.0) * a + k as f64;
    let (left, se_l) = proportion(g, |v| v >= hi - 1e-12);
    let (right, se_r) = proportion(g, |v| v <= a + 1e-12);
    let qf = q as f64;
    let product = left * right.powf(qf);
    // delta method for L·R^q
    let d_l = right.powf(qf);
    let d_r = qf * left * right.powf(qf - 1.0);
    let se = ((d_l * se_l).powi(2) + (d_r * se_r).powi(2)).sqrt();
    let bound = 1.0 / qf.powi(k as i32);
    CheckResult {
        name: "two_sided_tail",
        empirical: product,
        bound,
        slack: 3.0 * se,
        pass: product <= bound + 3.0 * se,
        detail: vec![("a", a), ("left", left), ("right", right)],
    }
}

/// `E[g] ≤ 5(med(g) + 1)` with `g = f/ν`.
pub fn median_expectation(exp: &TailExperiment) -> CheckResult {
    let g: Vec<f64> = exp.sample().into_iter().map(|v| v / exp.nu).collect();
    let (mean, se) = mean_and_se(&g);
    let med = lower_median(&g);
    let bound = 5.0 * (med + 1.0);
    CheckResult {
        name: "median_expectation",
        empirical: mean,
        bound,
        slack: 3.0 * se,
        pass: mean <= bound + 3.0 * se,
        detail: vec![("median", med)],
    }
}

/// `Pr[f ≤ E f/(5(q+1)) − (k+1)ν/(q+1)] ≤ (2/q^k)^{1/q}`.
pub fn lower_tail(exp: &TailExperiment) -> CheckResult {
    let vals = exp.sample();
    let (mean, _) = mean_and_se(&vals);
    let qf = exp.q as f64;
    let threshold = mean / (5.0 * (qf + 1.0)) - (exp.k as f64 + 1.0) * exp.nu / (qf + 1.0);
    let (p, se) = if threshold < 0.0 {
        (0.0, 0.0)
    } else {
        proportion(&vals, |v| v <= threshold)
    };
    let bound = (2.0 / qf.powi(exp.k as i32)).powf(1.0 / qf);
    CheckResult {
        name: "lower_tail",
        empirical: p,
        bound,
        slack: 3.0 * se,
        pass: p <= bound + 3.0 * se,
        detail: vec![("threshold", threshold), ("mean", mean)],
    }
}

/// All four checks on one experiment. The two-sided check uses `a` equal to
/// the lower median of `f/ν`.
pub fn run_suite(exp: &TailExperiment, k_expect: u32) -> Vec<CheckResult> {
    let g: Vec<f64> = exp.sample().into_iter().map(|v| v / exp.nu).collect();
    let a = lower_median(&g).max(f64::MIN_POSITIVE);
    vec![
        expectation_lower(&exp.f, exp.base, k_expect, exp.trials, exp.seed),
        two_sided_from(&g, a, exp.q, exp.k),
        median_expectation(exp),
        lower_tail(exp),
    ]
}

/// `Π_{i=1..terms} (2^{-i})^{2^{-i}}`, which tends to 1/4.
pub fn nsw_product_identity(terms: u32) -> f64 {
    partial_products(terms).last().copied().unwrap_or(1.0)
}

pub fn partial_products(terms: u32) -> Vec<f64> {
    let mut acc = 1.0f64;
    (1..=terms)
        .map(|i| {
            let x = 0.5f64.powi(i as i32);
            acc *= x.powf(x);
            acc
        })
        .collect()
}

//! Seeded invariant fuzzing for the splitting, rounding, relaxation and
//! rematching stages. Shared by the CLI and the integration tests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NswError, Result};
use crate::generators::{generate, Family, GenSpec, WeightDist};
use crate::matching::{initial_matching, rematch_rho, rematch_sides};
use crate::model::{ConfigSolution, Instance, ItemSet, Matching};
use crate::valuations::Valuation;
use crate::relaxation::{scaled_optimum_check, solve_eg, EgParams};
use crate::rounding::{
    iterated_round, measure_oracle_d, round_xos, split_targets, tag, OracleProcedure, RngStream,
};
use crate::splitting::{check_subadditive_split, check_xos_split, split_subadditive, split_xos};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FuzzModule {
    Split,
    Round,
    Relax,
    Match,
}

impl FuzzModule {
    pub const ALL: [FuzzModule; 4] = [FuzzModule::Split, FuzzModule::Round, FuzzModule::Relax, FuzzModule::Match];

    pub fn parse(s: &str) -> Result<FuzzModule> {
        FuzzModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| NswError::InvalidArgument(format!("unknown fuzz module {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            FuzzModule::Split => "split",
            FuzzModule::Round => "round",
            FuzzModule::Relax => "relax",
            FuzzModule::Match => "match",
        }
    }
}

/// What one fuzz case checked, with named measurements.
#[derive(Clone, Debug, Default, Serialize)]
pub struct CaseStats {
    /// Number of non-vacuous checks (agents, tuples or rounds) performed.
    pub checked: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzFailure {
    pub case: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzReport {
    pub module: FuzzModule,
    pub count: usize,
    pub seed: u64,
    pub checked: usize,
    pub failures: Vec<FuzzFailure>,
    /// Per-case measurements in case order (failed cases omitted).
    pub cases: Vec<CaseStats>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// All values recorded under `key`, in case order.
    pub fn values(&self, key: &str) -> Vec<f64> {
        self.cases.iter().filter_map(|c| c.values.get(key).copied()).collect()
    }
}

/// Seed of case `k` of a run seeded with `seed`.
pub fn case_seed(seed: u64, k: usize) -> u64 {
    RngStream::new(seed).substream(tag::INSTANCE, &[k as u64]).gen()
}

/// Run `count` cases in parallel; results are kept in case order.
pub fn run_fuzz(module: FuzzModule, count: usize, seed: u64) -> FuzzReport {
    let results: Vec<(usize, u64, std::result::Result<CaseStats, String>)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let s = case_seed(seed, k);
            (k, s, fuzz_case(module, s))
        })
        .collect();
    let mut report = FuzzReport {
        module,
        count,
        seed,
        checked: 0,
        failures: Vec::new(),
        cases: Vec::new(),
    };
    for (case, s, r) in results {
        match r {
            Ok(stats) => {
                report.checked += stats.checked;
                report.cases.push(stats);
            }
            Err(message) => report.failures.push(FuzzFailure { case, seed: s, message }),
        }
    }
    report
}

/// One case; `Err` carries the violation message.
pub fn fuzz_case(module: FuzzModule, seed: u64) -> std::result::Result<CaseStats, String> {
    let out = match module {
        FuzzModule::Split => split_case(seed),
        FuzzModule::Round => round_case(seed),
        FuzzModule::Relax => relax_case(seed),
        FuzzModule::Match => match_case(seed),
    };
    out.map_err(|e| e.to_string())
}

fn case_rng(seed: u64) -> ChaCha8Rng {
    RngStream::new(seed).substream(tag::INSTANCE, &[])
}

/// Random instance with a family drawn from `families`.
pub fn random_instance(rng: &mut ChaCha8Rng, families: &[Family], n: usize, m: usize) -> Result<Instance> {
    let family = *families.choose(rng).expect("nonempty family list");
    let weights = *[WeightDist::Uniform, WeightDist::Integer, WeightDist::HeavyTailed]
        .choose(rng)
        .expect("nonempty");
    generate(&GenSpec {
        family,
        n,
        m,
        weights,
        clauses: rng.gen_range(1..=3),
        cap_ratio: rng.gen_range(0.2..0.8),
        seed: rng.gen(),
    })
}

/// Random feasible configuration over `items`: a convex combination of a
/// random partition of `items` among the agents and up to two perturbed
/// copies of it, so supports overlap on a few contested items.
pub fn random_config(rng: &mut ChaCha8Rng, n: usize, items: ItemSet) -> ConfigSolution {
    let layers = rng.gen_range(1..=3);
    let mut weights: Vec<f64> = (0..layers).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    // slot n means unassigned
    let mut owner: Vec<usize> = items
        .iter()
        .map(|_| if rng.gen_bool(0.1) { n } else { rng.gen_range(0..n) })
        .collect();
    let mut config = ConfigSolution::empty(n);
    for (layer, &w) in weights.iter().enumerate() {
        if layer > 0 {
            for o in owner.iter_mut() {
                if rng.gen_bool(0.1) {
                    *o = rng.gen_range(0..=n);
                }
            }
        }
        let mut parts = vec![ItemSet::EMPTY; n];
        for (j, &o) in items.iter().zip(&owner) {
            if o < n {
                parts[o].insert(j);
            }
        }
        for (i, s) in parts.into_iter().enumerate() {
            match config.columns[i].iter_mut().find(|(t, _)| *t == s) {
                Some(col) => col.1 += w,
                None => config.columns[i].push((s, w)),
            }
        }
    }
    config
}

/// Instance whose item weights lie in `[1, 1.5)`, so that agents holding
/// many items clear `V >= 6ν`. Tables only when `m <= 14`.
pub fn flat_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Result<Instance> {
    let flat = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..m).map(|_| rng.gen_range(1.0..1.5)).collect() };
    let kinds = if m <= 14 { 5 } else { 3 };
    let vals = (0..n)
        .map(|_| match rng.gen_range(0..kinds) {
            0 => Valuation::additive(flat(rng)),
            1 => Valuation::xos((0..rng.gen_range(2..=3)).map(|_| flat(rng)).collect()),
            2 => {
                let w = flat(rng);
                let cap = rng.gen_range(0.6..1.0) * w.iter().sum::<f64>();
                Valuation::budgeted(w, cap)
            }
            3 => {
                let xos = Valuation::xos((0..rng.gen_range(2..=3)).map(|_| flat(rng)).collect());
                Valuation::table(ItemSet::full(m).subsets().map(|s| xos.value(s)).collect())
            }
            _ => {
                let (wa, wb) = (flat(rng), flat(rng));
                let ca = rng.gen_range(0.3..0.6) * wa.iter().sum::<f64>();
                let cb = rng.gen_range(0.3..0.6) * wb.iter().sum::<f64>();
                let (a, b) = (Valuation::budgeted(wa, ca), Valuation::budgeted(wb, cb));
                Valuation::table(ItemSet::full(m).subsets().map(|s| a.value(s) + b.value(s)).collect())
            }
        })
        .collect();
    Instance::from_valuations(m, vals)
}

/// Flat instance sized so that subadditive splitting usually has agents.
fn subadditive_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(10 * n..=12 * n);
    flat_instance(rng, n, m)
}

fn subadditive_setup(
    rng: &mut ChaCha8Rng,
    inst: &Instance,
) -> (ConfigSolution, Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = inst.num_agents();
    let config = random_config(rng, n, inst.all_items());
    let targets = split_targets(&config, inst.valuations());
    let nu: Vec<f64> = (0..n)
        .map(|i| {
            let support = config.columns[i]
                .iter()
                .fold(ItemSet::EMPTY, |acc, &(s, _)| acc.union(s));
            inst.valuation(i).singleton_max(support)
        })
        .collect();
    let agents = (0..n)
        .filter(|&i| targets[i] > 0.0 && targets[i] >= 6.0 * nu[i])
        .collect();
    (config, targets, nu, agents)
}

const ALL_FAMILIES: &[Family] = &[
    Family::Additive,
    Family::Xos,
    Family::BudgetedAdditive,
    Family::Table,
    Family::BudgetedMixture,
];
const XOS_FAMILIES: &[Family] = &[Family::Additive, Family::Xos];

fn split_case(seed: u64) -> Result<CaseStats> {
    let mut rng = case_rng(seed);
    let mut stats = CaseStats::default();

    // XOS variant with V⁺ equal to the configuration value
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(3..=10);
    let inst = random_instance(&mut rng, XOS_FAMILIES, n, m)?;
    let config = random_config(&mut rng, n, inst.all_items());
    let v_plus = split_targets(&config, inst.valuations());
    let agents: Vec<usize> = (0..n).filter(|&i| v_plus[i] > 0.0).collect();
    if !agents.is_empty() {
        let out = split_xos(&config, inst.valuations(), &v_plus, &agents)?;
        let bad = check_xos_split(&out, inst.valuations(), &agents, m);
        if !bad.is_empty() {
            return Err(NswError::invariant(format!("XOS split: {}", bad.join("; "))));
        }
        stats.checked += agents.len();
        stats.values.insert("xos_agents".into(), agents.len() as f64);
        let total: f64 = agents.iter().map(|&i| out.config.agent_weight(i)).sum();
        stats.values.insert("xos_mass".into(), total / agents.len() as f64);
    }

    // subadditive variant
    let inst = subadditive_instance(&mut rng)?;
    let m = inst.num_items();
    let (config, targets, nu, agents) = subadditive_setup(&mut rng, &inst);
    if !agents.is_empty() {
        let out = split_subadditive(&config, inst.valuations(), &targets, &nu, &agents)?;
        let bad = check_subadditive_split(&out, inst.valuations(), m);
        if !bad.is_empty() {
            return Err(NswError::invariant(format!("subadditive split: {}", bad.join("; "))));
        }
        stats.checked += agents.len();
        stats.values.insert("subadditive_agents".into(), agents.len() as f64);
    }
    Ok(stats)
}

fn round_case(seed: u64) -> Result<CaseStats> {
    let mut rng = case_rng(seed);
    let mut stats = CaseStats::default();
    let streams = RngStream::new(seed);

    // contention rounding on an XOS split
    let n = rng.gen_range(2..=3);
    let m = rng.gen_range(4..=8);
    let inst = random_instance(&mut rng, XOS_FAMILIES, n, m)?;
    let config = random_config(&mut rng, n, inst.all_items());
    let v_plus = split_targets(&config, inst.valuations());
    let agents: Vec<usize> = (0..n).filter(|&i| v_plus[i] > 0.0).collect();
    if !agents.is_empty() {
        let split = split_xos(&config, inst.valuations(), &v_plus, &agents)?;
        let out = round_xos(&split, &agents, &inst, &streams.child(tag::TENTATIVE, 0))?;
        out.allocation.validate(&inst)?;
        for &i in &agents {
            let tentative = out.tentative[i].unwrap_or(ItemSet::EMPTY);
            if !out.allocation.bundles[i].is_subset(tentative) {
                return Err(NswError::invariant(format!("agent {i} won items outside its tentative set")));
            }
            if let Some(l) = out.large_items[i] {
                if tentative.contains(l) {
                    return Err(NswError::invariant(format!("agent {i}: large item inside its part")));
                }
            }
        }
        stats.checked += agents.len();
    }

    // iterated rounding with the exhaustive procedure and its measured d
    let inst = subadditive_instance(&mut rng)?;
    let n = inst.num_agents();
    let (config, targets, nu, agents) = subadditive_setup(&mut rng, &inst);
    if agents.is_empty() {
        return Ok(stats);
    }
    let split = split_subadditive(&config, inst.valuations(), &targets, &nu, &agents)?;
    let proc = OracleProcedure::default();
    let split_v = split_targets(&split.config, inst.valuations());
    let d = measure_oracle_d(&proc, &split.config, &agents, inst.valuations(), &split_v)?;
    let delta = 1.0 / (7.0 * d);
    let out = iterated_round(&split, inst.all_items(), delta, &proc, &inst, &streams.child(tag::ITEM_RANK, 0))?;
    if out.cap_hit {
        return Err(NswError::NonConvergence(format!("round cap hit with δ = {delta}")));
    }
    for log in &out.rounds {
        let need = (delta * log.active as f64 - 1e-9).ceil() as usize;
        let exited: Vec<usize> = (0..n).filter(|&i| out.exit_round[i] == Some(log.round)).collect();
        if exited.len() < need || exited.len() != log.exited {
            return Err(NswError::invariant(format!(
                "round {}: {} of {} agents exited, need {need}",
                log.round,
                exited.len(),
                log.active
            )));
        }
        for i in exited {
            let s = out.tentative[i].unwrap_or(ItemSet::EMPTY);
            if inst.value(i, s) < delta * split_v[i] * (1.0 - 1e-12) {
                return Err(NswError::invariant(format!("agent {i} exited below δV'")));
            }
        }
        stats.checked += 1;
    }
    let ratios: Vec<f64> = agents
        .iter()
        .map(|&i| targets[i] / (inst.value(i, out.allocation.bundles[i]) + nu[i]))
        .collect();
    stats.values.insert("geo_mean".into(), crate::model::geometric_mean(&ratios));
    stats.values.insert("delta".into(), delta);
    stats.values.insert("d".into(), d);
    Ok(stats)
}

fn relax_case(seed: u64) -> Result<CaseStats> {
    let mut rng = case_rng(seed);
    let mut stats = CaseStats::default();
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(n..=6);
    let inst = random_instance(&mut rng, ALL_FAMILIES, n, m)?;
    let im = initial_matching(&inst)?;
    if im.active.is_empty() {
        return Ok(stats);
    }
    let params = EgParams::default();
    let out = solve_eg(&inst, &im.active, im.rest, &params)?;
    out.x.check_feasible(1e-9)?;
    let check = scaled_optimum_check(&out.x, &inst, params.alpha)?;
    if !check.pass {
        return Err(NswError::invariant(format!(
            "scaled optimum {} exceeds {}",
            check.ratio, check.bound
        )));
    }
    stats.checked = 1;
    stats.values.insert("ratio".into(), check.ratio);
    stats.values.insert("bound".into(), check.bound);
    Ok(stats)
}

fn match_case(seed: u64) -> Result<CaseStats> {
    let mut rng = case_rng(seed);
    let n = rng.gen_range(2..=5);
    let m = rng.gen_range(n..=n + 3);
    let inst = random_instance(&mut rng, ALL_FAMILIES, n, m)?;
    let im = initial_matching(&inst)?;
    let mut h = im.matched.to_vec();
    h.shuffle(&mut rng);
    let pi = Matching::new(h.into_iter().map(Some).collect())?;
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let top = inst.valuation(i).singleton_max(inst.all_items());
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.0..=1.5 * top.max(1e-3))
            }
        })
        .collect();
    let nu: Vec<f64> = (0..n)
        .map(|i| rng.gen_range(0.0..=1.0) * inst.valuation(i).singleton_max(im.rest))
        .collect();
    let rho = rematch_rho(&im.tau, &pi, &w, &nu, &inst)?;
    rho.check_injective()?;
    if !rho.range().is_subset(im.matched) {
        return Err(NswError::invariant("ρ maps outside H"));
    }
    let (lhs, rhs) = rematch_sides(&rho, &pi, &w, &nu, &inst);
    if rhs > f64::NEG_INFINITY && lhs < rhs - 1e-9 * rhs.abs().max(1.0) {
        return Err(NswError::invariant(format!(
            "rematching product {lhs} below {rhs} (log scale)"
        )));
    }
    let mut stats = CaseStats {
        checked: 1,
        ..Default::default()
    };
    stats.values.insert("log_slack".into(), lhs - rhs);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_config_is_feasible() {
        let mut rng = case_rng(3);
        for _ in 0..50 {
            let c = random_config(&mut rng, 3, ItemSet::full(7));
            for i in 0..3 {
                assert!((c.agent_weight(i) - 1.0).abs() < 1e-12);
            }
            assert!(c.max_item_load(7) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn every_module_passes_a_few_cases() {
        for module in FuzzModule::ALL {
            let report = run_fuzz(module, 8, 11);
            assert!(report.passed(), "{:?}: {:?}", module, report.failures);
        }
    }

    #[test]
    fn report_is_order_stable() {
        let a = run_fuzz(FuzzModule::Match, 20, 5);
        let b = run_fuzz(FuzzModule::Match, 20, 5);
        assert_eq!(a.values("log_slack"), b.values("log_slack"));
    }

    #[test]
    fn module_names() {
        for m in FuzzModule::ALL {
            assert_eq!(FuzzModule::parse(m.name()).unwrap(), m);
        }
        assert!(FuzzModule::parse("oracle").is_err());
    }
}

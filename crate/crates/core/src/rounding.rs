//! Randomized rounding: contention resolution for the XOS pipeline, the
//! iterated rounding loop for the subadditive pipeline, and the pluggable
//! rounding procedures it calls.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{NswError, Result};
use crate::matching::{product_matching, MatchingProblem};
use crate::model::{Allocation, ConfigSolution, Instance, ItemSet, Matching};
use crate::splitting::{SubaddSplitOutput, XosSplitOutput};
use crate::valuations::Valuation;

/// Substream tags. Each random decision draws from its own ChaCha8 stream
/// keyed by `(tag, ids)`, so results do not depend on iteration order.
pub mod tag {
    pub const TENTATIVE: u64 = 1;
    pub const CONTENTION: u64 = 2;
    pub const ITEM_RANK: u64 = 3;
    pub const CR_TENTATIVE: u64 = 4;
    pub const CR_CONTENTION: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const INSTANCE: u64 = 7;
}

/// Seeded source of independent ChaCha8 substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn substream(&self, tag: u64, ids: &[u64]) -> ChaCha8Rng {
        let stream = ids.iter().fold(splitmix(tag), |h, &id| splitmix(h ^ id));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// A derived stream with its own seed, e.g. one per fuzz instance.
    pub fn child(&self, tag: u64, index: u64) -> RngStream {
        RngStream::new(self.substream(tag, &[index]).gen())
    }
}

/// `Pr[r = t] = δ(1−δ)^{t−1}` for `t >= 1`, by inversion.
pub fn sample_geometric(delta: f64, rng: &mut impl Rng) -> usize {
    assert!(delta > 0.0 && delta < 1.0 || delta == 1.0);
    if delta >= 1.0 {
        return 1;
    }
    let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    1 + (u.ln() / (1.0 - delta).ln()).floor() as usize
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub active: usize,
    pub exited: usize,
    /// `(agent, v_i(S_i)/V'_i)` for every active agent.
    pub scaled: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundOutcome {
    pub allocation: Allocation,
    pub tentative: Vec<Option<ItemSet>>,
    /// Contenders per item (contention rounding only).
    pub contention: Vec<Vec<usize>>,
    pub exit_round: Vec<Option<usize>>,
    pub large_items: Vec<Option<usize>>,
    /// Geometric item ranks `r_j` (iterated rounding only).
    pub ranks: Vec<Option<usize>>,
    pub rounds: Vec<RoundLog>,
    pub cap_hit: bool,
}

impl RoundOutcome {
    fn empty(n: usize, m: usize) -> Self {
        RoundOutcome {
            allocation: Allocation::empty(n),
            tentative: vec![None; n],
            contention: vec![Vec::new(); m],
            exit_round: vec![None; n],
            large_items: vec![None; n],
            ranks: vec![None; m],
            rounds: Vec::new(),
            cap_hit: false,
        }
    }
}

/// Index of the column picked by `u ∈ [0,1)` under weights `scale·w`.
fn pick_column(columns: &[(ItemSet, f64)], scale: f64, u: f64) -> usize {
    let mut acc = 0.0;
    for (c, &(_, w)) in columns.iter().enumerate() {
        acc += scale * w;
        if u < acc {
            return c;
        }
    }
    columns.len() - 1
}

/// Sample one tentative set per agent and resolve contention uniformly.
/// Returns (tentative column index per agent, contenders per item, winners).
fn sample_and_resolve(
    x: &ConfigSolution,
    agents: &[usize],
    m: usize,
    rng: &RngStream,
    tags: (u64, u64),
    round: u64,
) -> (Vec<Option<usize>>, Vec<Vec<usize>>, Vec<ItemSet>) {
    let n = x.columns.len();
    let mut choice = vec![None; n];
    for &i in agents {
        let cols = &x.columns[i];
        if cols.is_empty() {
            continue;
        }
        let total: f64 = cols.iter().map(|(_, w)| w).sum();
        let u: f64 = rng.substream(tags.0, &[i as u64, round]).gen();
        choice[i] = Some(pick_column(cols, 1.0 / total, u));
    }
    let mut contenders = vec![Vec::new(); m];
    for &i in agents {
        if let Some(c) = choice[i] {
            for j in x.columns[i][c].0.iter() {
                contenders[j].push(i);
            }
        }
    }
    let mut won = vec![ItemSet::EMPTY; n];
    for (j, list) in contenders.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let k = if list.len() == 1 {
            0
        } else {
            rng.substream(tags.1, &[j as u64, round]).gen_range(0..list.len())
        };
        won[list[k]].insert(j);
    }
    (choice, contenders, won)
}

/// Contention-resolution rounding of a split XOS solution.
pub fn round_xos(split: &XosSplitOutput, agents: &[usize], inst: &Instance, rng: &RngStream) -> Result<RoundOutcome> {
    let n = inst.num_agents();
    let m = inst.num_items();
    for &i in agents {
        let total = split.config.agent_weight(i);
        if !(total > 0.0) {
            return Err(NswError::invariant(format!("agent {i} has no split support")));
        }
    }
    let (choice, contention, won) =
        sample_and_resolve(&split.config, agents, m, rng, (tag::TENTATIVE, tag::CONTENTION), 0);
    let mut out = RoundOutcome::empty(n, m);
    for &i in agents {
        if let Some(c) = choice[i] {
            out.tentative[i] = Some(split.config.columns[i][c].0);
            out.large_items[i] = Some(split.large_items[i][c]);
        }
    }
    out.allocation.bundles = won;
    out.contention = contention;
    Ok(out)
}

/// Inputs of one rounding-procedure call.
pub struct ProcInput<'a> {
    pub x: &'a ConfigSolution,
    pub agents: &'a [usize],
    pub valuations: &'a [Valuation],
    /// `V'_i` indexed by agent id.
    pub targets: &'a [f64],
    pub rng: &'a RngStream,
    pub round: usize,
    pub num_items: usize,
}

/// A rounding procedure for additive welfare under scaled valuations
/// `v_i / V'_i`: returns disjoint sets, each a subset of a support set.
pub trait RoundingProcedure: Send + Sync {
    fn name(&self) -> &'static str;
    /// Nominal approximation factor, if the procedure declares one.
    fn declared_d(&self) -> Option<f64>;
    /// One set per entry of `input.agents`.
    fn round(&self, input: &ProcInput<'_>) -> Result<Vec<ItemSet>>;
}

/// Tentative sampling plus uniform contention resolution.
#[derive(Clone, Copy, Debug, Default)]
pub struct CrProcedure;

impl RoundingProcedure for CrProcedure {
    fn name(&self) -> &'static str {
        "cr"
    }

    fn declared_d(&self) -> Option<f64> {
        Some(4.0)
    }

    fn round(&self, input: &ProcInput<'_>) -> Result<Vec<ItemSet>> {
        let (_, _, won) = sample_and_resolve(
            input.x,
            input.agents,
            input.num_items,
            input.rng,
            (tag::CR_TENTATIVE, tag::CR_CONTENTION),
            input.round as u64,
        );
        Ok(input.agents.iter().map(|&i| won[i]).collect())
    }
}

/// Exhaustive search over support choices and contested-item winners.
#[derive(Clone, Copy, Debug)]
pub struct OracleProcedure {
    pub cap: f64,
}

impl Default for OracleProcedure {
    fn default() -> Self {
        OracleProcedure { cap: 1e6 }
    }
}

impl OracleProcedure {
    /// Best scaled welfare and the sets achieving it.
    pub fn solve(&self, input: &ProcInput<'_>) -> Result<(f64, Vec<ItemSet>)> {
        let agents = input.agents;
        let supports: Vec<Vec<ItemSet>> = agents
            .iter()
            .map(|&i| {
                input.x.columns[i]
                    .iter()
                    .filter(|(_, w)| *w > 0.0)
                    .map(|&(s, _)| s)
                    .collect()
            })
            .collect();
        let combos: f64 = supports.iter().map(|s| s.len().max(1) as f64).product();
        if combos > self.cap {
            return Err(NswError::cap("oracle procedure support choices", combos, self.cap));
        }
        let k = agents.len();
        let mut best = (f64::NEG_INFINITY, vec![ItemSet::EMPTY; k]);
        let mut nodes = 0f64;
        let mut digits = vec![0usize; k];
        loop {
            let chosen: Vec<ItemSet> = (0..k)
                .map(|a| supports[a].get(digits[a]).copied().unwrap_or(ItemSet::EMPTY))
                .collect();
            // contested items and their contenders
            let mut contested: Vec<(usize, Vec<usize>)> = Vec::new();
            let union = chosen.iter().fold(ItemSet::EMPTY, |u, &s| u.union(s));
            for j in union.iter() {
                let holders: Vec<usize> = (0..k).filter(|&a| chosen[a].contains(j)).collect();
                if holders.len() > 1 {
                    contested.push((j, holders));
                }
            }
            let patterns: f64 = contested.iter().map(|(_, h)| h.len() as f64).product();
            nodes += patterns;
            if nodes > self.cap * 10.0 {
                return Err(NswError::cap("oracle procedure search nodes", nodes, self.cap * 10.0));
            }
            let mut winner = vec![0usize; contested.len()];
            loop {
                let mut sets = chosen.clone();
                for (c, (j, holders)) in contested.iter().enumerate() {
                    for (h, &a) in holders.iter().enumerate() {
                        if h != winner[c] {
                            sets[a].remove(*j);
                        }
                    }
                }
                let score: f64 = (0..k)
                    .map(|a| input.valuations[agents[a]].value(sets[a]) / input.targets[agents[a]])
                    .sum();
                if score > best.0 {
                    best = (score, sets);
                }
                if !advance(&mut winner, |c| contested[c].1.len()) {
                    break;
                }
            }
            if !advance(&mut digits, |a| supports[a].len().max(1)) {
                break;
            }
        }
        Ok(best)
    }
}

/// Mixed-radix increment; false once the counter wraps around.
fn advance(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for (p, d) in digits.iter_mut().enumerate() {
        *d += 1;
        if *d < radix(p) {
            return true;
        }
        *d = 0;
    }
    false
}

impl RoundingProcedure for OracleProcedure {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn declared_d(&self) -> Option<f64> {
        None
    }

    fn round(&self, input: &ProcInput<'_>) -> Result<Vec<ItemSet>> {
        Ok(self.solve(input)?.1)
    }
}

/// Names of the registered rounding procedures.
pub const PROCEDURES: &[&str] = &["cr", "oracle"];

pub fn procedure_by_name(name: &str) -> Result<Box<dyn RoundingProcedure>> {
    match name {
        "cr" => Ok(Box::new(CrProcedure)),
        "oracle" => Ok(Box::new(OracleProcedure::default())),
        other => Err(NswError::InvalidArgument(format!(
            "unknown rounding procedure {other:?} (known: {})",
            PROCEDURES.join(", ")
        ))),
    }
}

/// `V'_i = Σ_S v_i(S) x'_{i,S}` indexed by agent id.
pub fn split_targets(x: &ConfigSolution, valuations: &[Valuation]) -> Vec<f64> {
    (0..x.columns.len())
        .map(|i| x.agent_value(i, &valuations[i]))
        .collect()
}

/// Realized `d` of the exhaustive procedure: the largest `|A| / welfare(A)`
/// over nonempty agent subsets, at least 1.
pub fn measure_oracle_d(
    proc: &OracleProcedure,
    x: &ConfigSolution,
    agents: &[usize],
    valuations: &[Valuation],
    targets: &[f64],
) -> Result<f64> {
    if agents.len() > 16 {
        return Err(NswError::cap("agent subsets for d measurement", agents.len() as f64, 16.0));
    }
    let rng = RngStream::new(0);
    let mut d: f64 = 1.0;
    for mask in ItemSet::full(agents.len()).subsets().filter(|s| !s.is_empty()) {
        let sub: Vec<usize> = mask.iter().map(|a| agents[a]).collect();
        let input = ProcInput {
            x,
            agents: &sub,
            valuations,
            targets,
            rng: &rng,
            round: 0,
            num_items: 0,
        };
        let (welfare, _) = proc.solve(&input)?;
        if !(welfare > 0.0) {
            return Err(NswError::invariant("oracle procedure found zero welfare"));
        }
        d = d.max(sub.len() as f64 / welfare);
    }
    Ok(d)
}

/// Round cap: expected depth `⌈ln n / −ln(1−δ)⌉` plus 10 safety rounds.
pub fn round_cap(n: usize, delta: f64) -> usize {
    let depth = if n <= 1 { 0.0 } else { ((n as f64).ln() / -(1.0 - delta).ln()).ceil() };
    depth as usize + 10
}

/// Iterated rounding with geometric item filtering.
pub fn iterated_round(
    split: &SubaddSplitOutput,
    items: ItemSet,
    delta: f64,
    proc: &dyn RoundingProcedure,
    inst: &Instance,
    rng: &RngStream,
) -> Result<RoundOutcome> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(NswError::InvalidArgument(format!("δ = {delta} outside (0,1)")));
    }
    let n = inst.num_agents();
    let m = inst.num_items();
    let targets = split_targets(&split.config, inst.valuations());
    let mut out = RoundOutcome::empty(n, m);
    let mut by_round: BTreeMap<usize, ItemSet> = BTreeMap::new();
    for j in items.iter() {
        let r = sample_geometric(delta, &mut rng.substream(tag::ITEM_RANK, &[j as u64]));
        out.ranks[j] = Some(r);
        by_round.entry(r).or_default().insert(j);
    }
    let cap = round_cap(split.agents.len(), delta);
    let mut active: Vec<usize> = split.agents.clone();
    let mut t = 1;
    while !active.is_empty() {
        if t > cap {
            out.cap_hit = true;
            break;
        }
        let input = ProcInput {
            x: &split.config,
            agents: &active,
            valuations: inst.valuations(),
            targets: &targets,
            rng,
            round: t,
            num_items: m,
        };
        let sets = proc.round(&input)?;
        if sets.len() != active.len() {
            return Err(NswError::invariant("rounding procedure returned the wrong number of sets"));
        }
        let r_t = by_round.get(&t).copied().unwrap_or(ItemSet::EMPTY);
        let mut log = RoundLog {
            round: t,
            active: active.len(),
            exited: 0,
            scaled: Vec::with_capacity(active.len()),
        };
        let mut remaining = Vec::new();
        for (&i, &s) in active.iter().zip(&sets) {
            let val = inst.value(i, s);
            log.scaled.push((i, val / targets[i]));
            if val >= delta * targets[i] * (1.0 - 1e-12) {
                out.tentative[i] = Some(s);
                out.exit_round[i] = Some(t);
                out.allocation.bundles[i] = s.intersection(r_t);
                log.exited += 1;
            } else {
                remaining.push(i);
            }
        }
        out.rounds.push(log);
        active = remaining;
        t += 1;
    }
    out.allocation.validate(inst)?;
    Ok(out)
}

/// Final matching `σ` into `h` maximizing `Π v_i(R_i + σ(i))`; returns `σ`
/// and the bundles `R_i + σ(i)`.
pub fn finalize_with_matching(base: &Allocation, inst: &Instance, h: ItemSet) -> Result<(Matching, Allocation)> {
    let n = inst.num_agents();
    let prob = MatchingProblem::from_fn((0..n).collect(), h.to_vec(), |i, j| {
        inst.value(i, base.bundles[i].with(j))
    });
    let sigma = product_matching(&prob, n)?;
    let bundles = (0..n)
        .map(|i| match sigma.get(i) {
            Some(j) => base.bundles[i].with(j),
            None => base.bundles[i],
        })
        .collect();
    let alloc = Allocation { bundles };
    alloc.validate(inst)?;
    Ok((sigma, alloc))
}

/// XOS finalization: `σ` over `H` given the rounded sets `R_i`.
pub fn finalize_xos(outcome: &RoundOutcome, inst: &Instance, h: ItemSet) -> Result<(Matching, Allocation)> {
    finalize_with_matching(&outcome.allocation, inst, h)
}

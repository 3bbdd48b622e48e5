//! End-to-end NSW pipelines: matching, relaxation, splitting, rounding and
//! the final re-matching, with every stage bound asserted inline.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::error::{NswError, Result};
use crate::matching::{initial_matching, rematch_rho, InitialMatching};
use crate::model::{nsw_value, Allocation, ConfigSolution, Instance, ItemFractional, ItemSet, Matching};
use crate::relaxation::{concave_ext, solve_eg, EgParams};
use crate::rounding::{
    finalize_with_matching, iterated_round, measure_oracle_d, procedure_by_name, round_xos,
    split_targets, OracleProcedure, RngStream, RoundOutcome,
};
use crate::splitting::{check_subadditive_split, check_xos_split, split_subadditive, split_xos};

#[derive(Clone, Debug, Serialize)]
pub struct PipelineParams {
    pub eg: EgParams,
    /// Iterated-rounding filter probability; `None` uses `1/(7d)`.
    pub delta: Option<f64>,
    /// Rounding factor; `None` uses the procedure's declared value, or the
    /// measured one for the exhaustive procedure.
    pub d: Option<f64>,
    pub procedure: String,
    pub seed: u64,
    /// Check the final matching against the constructive rematching.
    pub rematch: bool,
    /// Give leftover items to the agent with the largest marginal gain.
    pub append_residual: bool,
    pub timings: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            eg: EgParams::default(),
            delta: None,
            d: None,
            procedure: "oracle".into(),
            seed: 0,
            rematch: false,
            append_residual: false,
            timings: false,
        }
    }
}

/// Parameter values actually used by a run.
#[derive(Clone, Debug, Serialize)]
pub struct UsedParams {
    pub alpha: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub d: Option<f64>,
    pub procedure: Option<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelaxationSummary {
    pub objective: f64,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
    pub x: ItemFractional,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub pipeline: String,
    pub nsw: f64,
    pub allocation: Allocation,
    pub bundles: BTreeMap<String, Vec<String>>,
    pub tau: Matching,
    pub matched: ItemSet,
    pub rest: ItemSet,
    pub active: Vec<usize>,
    pub relaxation: Option<RelaxationSummary>,
    /// `v⁺_i(x_i)` per agent (0 outside the relaxation).
    pub targets: Vec<f64>,
    pub nu: Vec<f64>,
    pub rounding_agents: Vec<usize>,
    pub split: Option<ConfigSolution>,
    pub outcome: Option<RoundOutcome>,
    pub sigma: Matching,
    pub params: UsedParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

/// A named end-to-end algorithm.
pub trait Pipeline: Send + Sync {
    fn name(&self) -> &'static str;
    fn check_compatible(&self, inst: &Instance) -> Result<()>;
    fn run(&self, inst: &Instance, params: &PipelineParams) -> Result<PipelineReport>;
}

pub struct XosPipeline;
pub struct SubadditivePipeline;

pub const PIPELINES: &[&str] = &["xos", "subadditive"];

pub fn pipeline_by_name(name: &str) -> Result<Box<dyn Pipeline>> {
    match name {
        "xos" => Ok(Box::new(XosPipeline)),
        "subadditive" => Ok(Box::new(SubadditivePipeline)),
        other => Err(NswError::InvalidArgument(format!(
            "unknown pipeline {other:?} (known: {})",
            PIPELINES.join(", ")
        ))),
    }
}

impl Pipeline for XosPipeline {
    fn name(&self) -> &'static str {
        "xos"
    }

    fn check_compatible(&self, inst: &Instance) -> Result<()> {
        if inst.valuations().iter().all(|v| v.is_xos_representable()) {
            Ok(())
        } else {
            Err(NswError::Incompatible("pipeline requires XOS valuations".into()))
        }
    }

    fn run(&self, inst: &Instance, params: &PipelineParams) -> Result<PipelineReport> {
        self.check_compatible(inst)?;
        run_xos(inst, params)
    }
}

impl Pipeline for SubadditivePipeline {
    fn name(&self) -> &'static str {
        "subadditive"
    }

    fn check_compatible(&self, inst: &Instance) -> Result<()> {
        for (i, v) in inst.valuations().iter().enumerate() {
            if matches!(v, crate::valuations::Valuation::Table { .. }) && !v.validate().ok() {
                return Err(NswError::Incompatible(format!(
                    "agent {i}: table valuation is not monotone subadditive"
                )));
            }
        }
        Ok(())
    }

    fn run(&self, inst: &Instance, params: &PipelineParams) -> Result<PipelineReport> {
        self.check_compatible(inst)?;
        run_subadditive(inst, params)
    }
}

struct Stopwatch {
    last: Instant,
    laps: BTreeMap<String, f64>,
}

impl Stopwatch {
    fn new() -> Self {
        Stopwatch {
            last: Instant::now(),
            laps: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.laps.insert(stage.to_string(), (now - self.last).as_secs_f64());
        self.last = now;
    }
}

/// Relaxation plus concave-extension columns at the solution.
struct Relaxed {
    summary: Option<RelaxationSummary>,
    config: ConfigSolution,
    targets: Vec<f64>,
}

fn relax(inst: &Instance, im: &InitialMatching, eg: &EgParams) -> Result<Relaxed> {
    let n = inst.num_agents();
    let mut config = ConfigSolution::empty(n);
    let mut targets = vec![0.0; n];
    if im.active.is_empty() {
        return Ok(Relaxed {
            summary: None,
            config,
            targets,
        });
    }
    let out = solve_eg(inst, &im.active, im.rest, eg)?;
    out.x.check_feasible(1e-9)?;
    for (r, &i) in out.x.agents.iter().enumerate() {
        let ext = concave_ext(inst.valuation(i), &out.x.mass[r])?;
        targets[i] = ext.value;
        config.columns[i] = ext.columns;
    }
    Ok(Relaxed {
        summary: Some(RelaxationSummary {
            objective: out.objective,
            iterations: out.iterations,
            gap: out.gap,
            converged: out.converged,
            x: out.x,
        }),
        config,
        targets,
    })
}

/// Leftover items go one by one (ascending) to the agent with the largest
/// marginal gain; lowest agent index on ties.
pub fn append_residual(alloc: &mut Allocation, inst: &Instance) {
    let left = inst.all_items().difference(alloc.allocated());
    for j in left.iter() {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..inst.num_agents() {
            let b = alloc.bundles[i];
            let gain = inst.value(i, b.with(j)) - inst.value(i, b);
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        if let Some((i, _)) = best {
            alloc.bundles[i].insert(j);
        }
    }
}

/// Compare the final bundles against `base + ρ` for the constructive
/// rematching with `π = τ`.
fn rematch_check(
    inst: &Instance,
    im: &InitialMatching,
    base: &Allocation,
    final_alloc: &Allocation,
) -> Result<()> {
    let n = inst.num_agents();
    let w: Vec<f64> = (0..n).map(|i| inst.value(i, base.bundles[i])).collect();
    let nu: Vec<f64> = (0..n).map(|i| inst.valuation(i).singleton_max(im.rest)).collect();
    let rho = rematch_rho(&im.tau, &im.tau, &w, &nu, inst)?;
    let with_rho = Allocation {
        bundles: (0..n)
            .map(|i| match rho.get(i) {
                Some(j) => base.bundles[i].with(j),
                None => base.bundles[i],
            })
            .collect(),
    };
    let ours = nsw_value(final_alloc, inst);
    let theirs = nsw_value(&with_rho, inst);
    if ours < theirs * (1.0 - 1e-9) {
        return Err(NswError::invariant(format!(
            "final matching NSW {ours} below rematching NSW {theirs}"
        )));
    }
    Ok(())
}

fn finish(
    name: &str,
    inst: &Instance,
    params: &PipelineParams,
    im: InitialMatching,
    base: Allocation,
    mut watch: Stopwatch,
    parts: Parts,
) -> Result<PipelineReport> {
    let (sigma, mut alloc) = finalize_with_matching(&base, inst, im.matched)?;
    if params.rematch {
        rematch_check(inst, &im, &base, &alloc)?;
    }
    if params.append_residual {
        append_residual(&mut alloc, inst);
    }
    alloc.validate(inst)?;
    watch.lap("matching");
    let nsw = nsw_value(&alloc, inst);
    Ok(PipelineReport {
        pipeline: name.to_string(),
        nsw,
        bundles: crate::model::named_bundles(&alloc, inst),
        allocation: alloc,
        tau: im.tau,
        matched: im.matched,
        rest: im.rest,
        active: im.active,
        relaxation: parts.relaxation,
        targets: parts.targets,
        nu: parts.nu,
        rounding_agents: parts.rounding_agents,
        split: parts.split,
        outcome: parts.outcome,
        sigma,
        params: parts.used,
        timings: params.timings.then_some(watch.laps),
    })
}

struct Parts {
    relaxation: Option<RelaxationSummary>,
    targets: Vec<f64>,
    nu: Vec<f64>,
    rounding_agents: Vec<usize>,
    split: Option<ConfigSolution>,
    outcome: Option<RoundOutcome>,
    used: UsedParams,
}

pub fn run_xos(inst: &Instance, params: &PipelineParams) -> Result<PipelineReport> {
    XosPipeline.check_compatible(inst)?;
    let n = inst.num_agents();
    let rng = RngStream::new(params.seed);
    let mut watch = Stopwatch::new();
    let im = initial_matching(inst)?;
    watch.lap("initial_matching");
    let relaxed = relax(inst, &im, &params.eg)?;
    watch.lap("relaxation");

    let mut base = Allocation::empty(n);
    let mut split_cfg = None;
    let mut outcome = None;
    if !im.active.is_empty() {
        let split = split_xos(&relaxed.config, inst.valuations(), &relaxed.targets, &im.active)?;
        let bad = check_xos_split(&split, inst.valuations(), &im.active, inst.num_items());
        if !bad.is_empty() {
            return Err(NswError::invariant(format!("XOS split bounds: {}", bad.join("; "))));
        }
        watch.lap("splitting");
        let out = round_xos(&split, &im.active, inst, &rng)?;
        for &i in &im.active {
            if !out.allocation.bundles[i].is_subset(out.tentative[i].unwrap_or(ItemSet::EMPTY)) {
                return Err(NswError::invariant(format!("agent {i} won items outside its tentative set")));
            }
        }
        watch.lap("rounding");
        base = out.allocation.clone();
        split_cfg = Some(split.config);
        outcome = Some(out);
    }
    let nu = (0..n).map(|i| inst.valuation(i).singleton_max(im.rest)).collect();
    let used = UsedParams {
        alpha: params.eg.alpha,
        epsilon: relaxed.summary.as_ref().map(|_| params.eg.epsilon_for(im.active.len())),
        delta: None,
        d: None,
        procedure: None,
        seed: params.seed,
    };
    let rounding_agents = im.active.clone();
    finish(
        "xos",
        inst,
        params,
        im,
        base,
        watch,
        Parts {
            relaxation: relaxed.summary,
            targets: relaxed.targets,
            nu,
            rounding_agents,
            split: split_cfg,
            outcome,
            used,
        },
    )
}

pub fn run_subadditive(inst: &Instance, params: &PipelineParams) -> Result<PipelineReport> {
    let proc = procedure_by_name(&params.procedure)?;
    let n = inst.num_agents();
    let rng = RngStream::new(params.seed);
    let mut watch = Stopwatch::new();
    let im = initial_matching(inst)?;
    watch.lap("initial_matching");
    let relaxed = relax(inst, &im, &params.eg)?;
    watch.lap("relaxation");

    let nu: Vec<f64> = (0..n).map(|i| inst.valuation(i).singleton_max(im.rest)).collect();
    let strong: Vec<usize> = im
        .active
        .iter()
        .copied()
        .filter(|&i| relaxed.targets[i] >= 6.0 * nu[i])
        .collect();

    let mut base = Allocation::empty(n);
    let mut split_cfg = None;
    let mut outcome = None;
    let mut delta_used = None;
    let mut d_used = None;
    if !strong.is_empty() {
        let split = split_subadditive(&relaxed.config, inst.valuations(), &relaxed.targets, &nu, &strong)?;
        let bad = check_subadditive_split(&split, inst.valuations(), inst.num_items());
        if !bad.is_empty() {
            return Err(NswError::invariant(format!("subadditive split bounds: {}", bad.join("; "))));
        }
        watch.lap("splitting");
        let measured = proc.name() == "oracle" && params.d.is_none();
        let d = match (params.d, proc.declared_d()) {
            (Some(d), _) => d,
            (None, Some(d)) => d,
            (None, None) => {
                let targets = split_targets(&split.config, inst.valuations());
                measure_oracle_d(&OracleProcedure::default(), &split.config, &strong, inst.valuations(), &targets)?
            }
        };
        let delta = params.delta.unwrap_or(1.0 / (7.0 * d));
        let out = iterated_round(&split, im.rest, delta, proc.as_ref(), inst, &rng)?;
        if measured && params.delta.is_none() {
            for log in &out.rounds {
                let need = (delta * log.active as f64 - 1e-9).ceil() as usize;
                if log.exited < need {
                    return Err(NswError::invariant(format!(
                        "round {}: {} of {} agents exited, expected at least {need}",
                        log.round, log.exited, log.active
                    )));
                }
            }
        }
        if out.cap_hit {
            return Err(NswError::NonConvergence(format!(
                "iterated rounding hit its round cap with δ = {delta}"
            )));
        }
        watch.lap("rounding");
        base = out.allocation.clone();
        split_cfg = Some(split.config);
        outcome = Some(out);
        delta_used = Some(delta);
        d_used = Some(d);
    }
    let used = UsedParams {
        alpha: params.eg.alpha,
        epsilon: relaxed.summary.as_ref().map(|_| params.eg.epsilon_for(im.active.len())),
        delta: delta_used,
        d: d_used,
        procedure: outcome.as_ref().map(|_| params.procedure.clone()),
        seed: params.seed,
    };
    finish(
        "subadditive",
        inst,
        params,
        im,
        base,
        watch,
        Parts {
            relaxation: relaxed.summary,
            targets: relaxed.targets,
            nu,
            rounding_agents: strong,
            split: split_cfg,
            outcome,
            used,
        },
    )
}

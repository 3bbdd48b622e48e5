//! Acceptance gates. Runs without the libtest harness so that every gate
//! prints exactly one PASS/FAIL line in `cargo test` output.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use nsw_forge::concentration::{lower_median, nsw_product_identity, run_suite, TailExperiment};
use nsw_forge::fuzz::{case_seed, flat_instance, run_fuzz, FuzzModule};
use nsw_forge::generators::{generate, Family, GenSpec, WeightDist};
use nsw_forge::matching::initial_matching;
use nsw_forge::oracle::{exact_config_lp, exact_nsw, ConfigObjective};
use nsw_forge::pipeline::{run_subadditive, run_xos, PipelineParams};
use nsw_forge::relaxation::{concave_ext, concave_ext_with, solve_eg, EgParams, ExtMode};
use nsw_forge::rounding::{round_xos, RngStream};
use nsw_forge::splitting::split_xos;
use nsw_forge::{ConfigSolution, Instance, ItemSet, PriceVector, Valuation};

const SEED: u64 = 20240611;

type Outcome = Result<String, String>;
type Gate = (&'static str, fn() -> Outcome);

fn gate(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn weights_for(k: usize) -> WeightDist {
    [WeightDist::Integer, WeightDist::Uniform, WeightDist::HeavyTailed][k % 3]
}

fn ratio_summary(ratios: &mut [f64]) -> (f64, f64) {
    ratios.sort_by(f64::total_cmp);
    (ratios[0], lower_median(ratios))
}

fn xos_factor() -> Outcome {
    let rows: Vec<Result<f64, String>> = (0..200)
        .into_par_iter()
        .map(|k| {
            let family = if k % 2 == 0 { Family::Additive } else { Family::Xos };
            let spec = GenSpec {
                family,
                n: 2 + (k / 2) % 2,
                m: 4 + (k / 4) % 3,
                weights: weights_for(k / 12),
                clauses: 3,
                cap_ratio: 0.5,
                seed: case_seed(SEED, k),
            };
            let inst = generate(&spec).map_err(|e| e.to_string())?;
            let rep = run_xos(&inst, &PipelineParams { seed: k as u64, ..Default::default() })
                .map_err(|e| format!("instance {k}: {e}"))?;
            let opt = exact_nsw(&inst).map_err(|e| e.to_string())?.optimum;
            Ok(if opt > 0.0 { rep.nsw / opt } else { 1.0 })
        })
        .collect();
    let mut ratios = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (min, median) = ratio_summary(&mut ratios);
    gate(
        min >= 1.0 / 1440.0,
        format!("200 instances, min ratio {min:.4}, median {median:.4}, gate 1/1440"),
    )
}

fn subadditive_factor() -> Outcome {
    let families = [Family::BudgetedAdditive, Family::Table, Family::BudgetedMixture];
    let rows: Vec<Result<(f64, bool), String>> = (0..100)
        .into_par_iter()
        .map(|k| {
            let spec = GenSpec {
                family: families[k % 3],
                n: 2 + (k / 3) % 2,
                m: 4 + (k / 6) % 3,
                weights: weights_for(k / 18),
                clauses: 3,
                cap_ratio: 0.3 + 0.1 * (k % 4) as f64,
                seed: case_seed(SEED + 1, k),
            };
            let inst = generate(&spec).map_err(|e| e.to_string())?;
            let params = PipelineParams {
                eg: EgParams {
                    epsilon: Some(0.1),
                    ..EgParams::default()
                },
                procedure: "oracle".into(),
                seed: k as u64,
                ..Default::default()
            };
            let rep = run_subadditive(&inst, &params).map_err(|e| format!("instance {k}: {e}"))?;
            let opt = exact_nsw(&inst).map_err(|e| e.to_string())?.optimum;
            Ok((if opt > 0.0 { rep.nsw / opt } else { 1.0 }, !rep.rounding_agents.is_empty()))
        })
        .collect();
    let mut rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    // at m <= 6 no agent can reach V >= 6ν, so larger flat instances cover
    // the iterated-rounding path under the same gate
    let larger: Vec<Result<(f64, bool), String>> = (0..40)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed(SEED + 2, k));
            let m = rng.gen_range(13..=16);
            let inst = flat_instance(&mut rng, 2, m).map_err(|e| e.to_string())?;
            let params = PipelineParams {
                eg: EgParams {
                    epsilon: Some(0.1),
                    ..EgParams::default()
                },
                procedure: "oracle".into(),
                seed: k as u64,
                ..Default::default()
            };
            let rep = run_subadditive(&inst, &params).map_err(|e| format!("flat instance {k}: {e}"))?;
            let opt = exact_nsw(&inst).map_err(|e| e.to_string())?.optimum;
            Ok((rep.nsw / opt, !rep.rounding_agents.is_empty()))
        })
        .collect();
    rows.extend(larger.into_iter().collect::<Result<Vec<_>, _>>()?);
    let rounded = rows.iter().filter(|r| r.1).count();
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (min, median) = ratio_summary(&mut ratios);
    gate(
        min >= 1.0 / 375000.0,
        format!("100 + 40 larger instances ({rounded} with iterated rounding), min ratio {min:.4}, median {median:.4}, gate 1/375000"),
    )
}

fn splitting() -> Outcome {
    let report = run_fuzz(FuzzModule::Split, 500, SEED);
    let xos: f64 = report.values("xos_agents").iter().sum();
    let sub: f64 = report.values("subadditive_agents").iter().sum();
    let first = report.failures.first().map(|f| format!(", first failure seed {}: {}", f.seed, f.message));
    gate(
        report.passed() && xos > 0.0 && sub > 0.0,
        format!(
            "500 runs, {xos} XOS and {sub} subadditive agent splits checked, {} violations{}",
            report.failures.len(),
            first.unwrap_or_default()
        ),
    )
}

fn relaxation() -> Outcome {
    let report = run_fuzz(FuzzModule::Relax, 50, SEED);
    let worst = report
        .values("ratio")
        .iter()
        .zip(report.values("bound"))
        .map(|(r, b)| r / b)
        .fold(0.0, f64::max);
    let first = report.failures.first().map(|f| format!(", first failure seed {}: {}", f.seed, f.message));
    gate(
        report.passed() && report.checked > 0,
        format!(
            "50 instances ({} with a relaxation), worst ratio/bound {worst:.4}{}",
            report.checked,
            first.unwrap_or_default()
        ),
    )
}

fn random_valuation(rng: &mut ChaCha8Rng, m: usize, family: Family) -> Valuation {
    let spec = GenSpec {
        family,
        n: 1,
        m,
        weights: weights_for(rng.gen_range(0..3)),
        clauses: rng.gen_range(1..=4),
        cap_ratio: rng.gen_range(0.2..0.9),
        seed: rng.gen(),
    };
    generate(&spec).expect("valid spec").valuation(0).clone()
}

const FAMILIES: [Family; 5] = [
    Family::Additive,
    Family::Xos,
    Family::BudgetedAdditive,
    Family::Table,
    Family::BudgetedMixture,
];

fn concave_extension() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_diff: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for k in 0..100 {
        let m = rng.gen_range(1..=10);
        let v = random_valuation(&mut rng, m, FAMILIES[k % 5]);
        let x: Vec<f64> = (0..m)
            .map(|_| if rng.gen_bool(0.15) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        let cg = concave_ext(&v, &x).map_err(|e| format!("pair {k}: {e}"))?;
        let full = concave_ext_with(&v, &x, ExtMode::Enumerate, &[]).map_err(|e| format!("pair {k}: {e}"))?;
        worst_diff = worst_diff.max((cg.value - full.value).abs());
        worst_gap = worst_gap.max(cg.duality_gap());
    }
    gate(
        worst_diff <= 1e-6 && worst_gap <= 1e-6,
        format!("100 pairs, max |Δ| {worst_diff:.2e}, max dual gap {worst_gap:.2e}"),
    )
}

fn demand_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut worst: f64 = 0.0;
    let mut exact_mismatch = 0;
    for family in FAMILIES {
        for _ in 0..500 {
            let m = rng.gen_range(1..=12);
            let integral = rng.gen_bool(0.5);
            let v = if integral {
                let spec = GenSpec {
                    family,
                    n: 1,
                    m,
                    weights: WeightDist::Integer,
                    clauses: rng.gen_range(1..=4),
                    cap_ratio: 0.5,
                    seed: rng.gen(),
                };
                generate(&spec).expect("valid spec").valuation(0).clone()
            } else {
                random_valuation(&mut rng, m, family)
            };
            let prices: Vec<f64> = (0..m)
                .map(|_| {
                    if integral {
                        rng.gen_range(0..=12) as f64
                    } else {
                        rng.gen::<f64>() * 4.0
                    }
                })
                .collect();
            let all = ItemSet::full(m);
            let got = v
                .demand_within(&PriceVector(prices.clone()), all)
                .map_err(|e| format!("{family:?}: {e}"))?;
            let brute = v.demand_exhaustive(&prices, all);
            let recomputed = v.value(got.set) - PriceVector(prices.clone()).of(got.set);
            let diff = (got.utility - brute.utility).abs().max((recomputed - got.utility).abs());
            worst = worst.max(diff);
            // integer data with a budget cap can still be fractional; only
            // additive-style integer instances must agree bit for bit
            if integral && got.utility.fract() == 0.0 && got.utility != brute.utility {
                exact_mismatch += 1;
            }
        }
    }
    gate(
        worst <= 1e-12 && exact_mismatch == 0,
        format!("2500 pairs over 5 families, max |Δ| {worst:.2e}, integral mismatches {exact_mismatch}"),
    )
}

/// Fixed 3-agent XOS instance with contested items outside the matching.
fn rounding_instance() -> Instance {
    Instance::from_valuations(
        9,
        vec![
            Valuation::xos(vec![
                vec![5.0, 1.0, 1.0, 3.0, 3.0, 2.0, 0.0, 1.0, 2.0],
                vec![1.0, 5.0, 1.0, 0.0, 2.0, 3.0, 3.0, 1.0, 1.0],
            ]),
            Valuation::xos(vec![
                vec![1.0, 4.0, 2.0, 2.0, 3.0, 3.0, 1.0, 0.0, 2.0],
                vec![2.0, 1.0, 4.0, 1.0, 1.0, 2.0, 3.0, 3.0, 1.0],
            ]),
            Valuation::xos(vec![
                vec![3.0, 1.0, 3.0, 1.0, 2.0, 1.0, 2.0, 3.0, 3.0],
                vec![1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 2.0, 1.0, 2.0],
            ]),
        ],
    )
    .expect("valid instance")
}

fn rounding_expectation() -> Outcome {
    let inst = rounding_instance();
    let n = inst.num_agents();
    let run = || -> nsw_forge::Result<(f64, usize)> {
        let im = initial_matching(&inst)?;
        let agents = im.active.clone();
        let eg = solve_eg(&inst, &agents, im.rest, &EgParams::default())?;
        let mut v_plus = vec![0.0; n];
        let mut config = ConfigSolution::empty(n);
        for (r, &i) in agents.iter().enumerate() {
            let ext = concave_ext(inst.valuation(i), &eg.x.mass[r])?;
            v_plus[i] = ext.value;
            config.columns[i] = ext.columns;
        }
        // adversarial x*: maximizes Σ v_i(S)/v⁺_i(x_i) over the configuration LP
        let star = exact_config_lp(&inst, &agents, im.rest, &ConfigObjective::Scaled(v_plus.clone()))?;
        let mut star_value = vec![0.0; n];
        for &i in &agents {
            let marg = star.witness.marginals(i, inst.num_items());
            star_value[i] = concave_ext(inst.valuation(i), &marg)?.value;
        }
        let split = split_xos(&config, inst.valuations(), &v_plus, &agents)?;
        let mut total = 0.0;
        let seeds = 500;
        for s in 0..seeds {
            let out = round_xos(&split, &agents, &inst, &RngStream::new(s))?;
            let mut sum = 0.0;
            for &i in &agents {
                let l = out.large_items[i].expect("agent sampled a part");
                sum += star_value[i] / inst.value(i, out.allocation.bundles[i].with(l));
            }
            total += sum / n as f64;
        }
        Ok((total / seeds as f64, agents.len()))
    };
    let (mean, k) = run().map_err(|e| e.to_string())?;
    gate(
        mean <= 90.0,
        format!("{k} rounding agents, 500 seeds, mean (1/n)Σ v⁺(x*)/v(R+l) = {mean:.4}, gate 90"),
    )
}

fn iterated_rounding() -> Outcome {
    let report = run_fuzz(FuzzModule::Round, 200, SEED);
    let geo = report.values("geo_mean");
    let gate_value = report
        .values("delta")
        .iter()
        .map(|d| 165.0 / (d * d))
        .fold(f64::INFINITY, f64::min);
    let mean = geo.iter().sum::<f64>() / geo.len().max(1) as f64;
    let first = report.failures.first().map(|f| format!(", first failure seed {}: {}", f.seed, f.message));
    gate(
        report.passed() && !geo.is_empty() && mean <= gate_value,
        format!(
            "200 runs, {} rounds checked, {} runs with iterated rounding, mean geometric ratio {mean:.3} vs 165/δ² >= {gate_value:.0}{}",
            report.checked,
            geo.len(),
            first.unwrap_or_default()
        ),
    )
}

fn rematching() -> Outcome {
    let report = run_fuzz(FuzzModule::Match, 1000, SEED);
    let min_slack = report.values("log_slack").into_iter().fold(f64::INFINITY, f64::min);
    let first = report.failures.first().map(|f| format!(", first failure seed {}: {}", f.seed, f.message));
    gate(
        report.passed() && report.checked == 1000,
        format!("1000 tuples, min log slack {min_slack:.3e}{}", first.unwrap_or_default()),
    )
}

fn concentration() -> Outcome {
    let families = [Family::BudgetedMixture, Family::Table, Family::BudgetedAdditive, Family::Xos];
    let probs = [0.3, 0.5, 0.7];
    let mut failures = Vec::new();
    for e in 0..20 {
        let spec = GenSpec {
            family: families[e % 4],
            n: 1,
            m: 8 + e % 7,
            weights: weights_for(e),
            clauses: 3,
            cap_ratio: 0.4,
            seed: case_seed(SEED + 10, e),
        };
        let inst = generate(&spec).map_err(|e| e.to_string())?;
        let exp = TailExperiment::uniform(
            inst.valuation(0).clone(),
            inst.all_items(),
            probs[e % 3],
            100_000,
            case_seed(SEED + 11, e),
        );
        for r in run_suite(&exp, 2) {
            if !r.pass {
                failures.push(format!("f{e} {}: {} vs {}", r.name, r.empirical, r.bound));
            }
        }
    }
    gate(
        failures.is_empty(),
        format!("20 functions x 4 checks at 1e5 trials, {} failures {:?}", failures.len(), failures),
    )
}

fn cascade() -> Outcome {
    let p = nsw_product_identity(40);
    gate((p - 0.25).abs() <= 1e-6, format!("product over 40 terms = {p:.9}"))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_nsw-forge");
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples_data");
    let mut lines = Vec::new();
    for (file, pipeline) in [("demo.json", "xos"), ("demo_budgeted.json", "subadditive")] {
        let run = || {
            Command::new(bin)
                .arg("solve")
                .arg(data.join(file))
                .args(["--pipeline", pipeline, "--seed", "7"])
                .output()
                .map_err(|e| e.to_string())
        };
        let (a, b) = (run()?, run()?);
        if !a.status.success() || !b.status.success() {
            return Err(format!("{file}: solve failed: {}", String::from_utf8_lossy(&a.stderr)));
        }
        if a.stdout != b.stdout {
            return Err(format!("{file}: reports differ"));
        }
        lines.push(format!("{file} {} bytes", a.stdout.len()));
    }
    gate(true, format!("byte-identical reports: {}", lines.join(", ")))
}

fn main() {
    let gates: [Gate; 12] = [
        ("xos end-to-end factor", xos_factor),
        ("subadditive end-to-end factor", subadditive_factor),
        ("set splitting invariants", splitting),
        ("relaxation scaled optimum", relaxation),
        ("concave extension equivalence", concave_extension),
        ("demand oracle equivalence", demand_oracle),
        ("rounding expectation bound", rounding_expectation),
        ("iterated rounding structure", iterated_rounding),
        ("rematching inequality", rematching),
        ("concentration suite", concentration),
        ("cascade identity", cascade),
        ("solve determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in gates.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("acceptance {:>2} {name}: PASS ({detail}) [{secs:.1}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {:>2} {name}: FAIL ({detail}) [{secs:.1}s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", gates.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use msmd_core::estimators::{run_rounds, StepSchedule};
use msmd_core::harness::{execute, ExperimentConfig, Outcome, RunRecord};
use msmd_core::network::Topology;
use msmd_core::scenarios::{EstimatorKind, MappingConfig, MappingRun, MappingScenario};
use msmd_core::verify::{self, CheckReport};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn checks_pass(checks: &[CheckReport]) -> bool {
    checks.iter().all(|c| c.violations == 0)
}

fn describe(checks: &[CheckReport]) -> String {
    checks
        .iter()
        .map(|c| {
            let mut s = format!("{}: {}/{} violations", c.proposition, c.violations, c.instances);
            if c.violations > 0 {
                s.push_str(&format!(" (max excess {:.3e})", c.max_violation));
            }
            if let Some(n) = &c.note {
                s.push_str(&format!(" [{n}]"));
            }
            s
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn in_dir(mut config: ExperimentConfig, dir: &Path) -> ExperimentConfig {
    config.run.out = dir.to_path_buf();
    config
}

fn c1_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let checks = verify::density_algebra(200, 11).unwrap();
    let elapsed = start.elapsed();
    let pass = checks_pass(&checks) && elapsed < Duration::from_secs(30);
    verdict(pass, format!("{} in {:.1}s", describe(&checks), elapsed.as_secs_f64()))
}

fn c2_mixing_kl() -> Verdict {
    let checks = verify::mixing_propositions(500, 12).unwrap();
    verdict(checks_pass(&checks[..2]), describe(&checks[..2]))
}

fn c3_manifold() -> Verdict {
    let checks = verify::manifold(100, 13).unwrap();
    verdict(checks_pass(&checks[..2]), describe(&checks[..2]))
}

fn c4_iterate_gap() -> Verdict {
    let checks = verify::iterate_gap(50, 200, 14).unwrap();
    verdict(checks_pass(&checks), describe(&checks))
}

fn c5_contraction() -> Verdict {
    let checks = verify::contraction(10, 100, 15).unwrap();
    let tv: Vec<CheckReport> = checks.into_iter().filter(|c| c.proposition.contains("tv(")).collect();
    verdict(checks_pass(&tv), describe(&tv))
}

fn c6_rate() -> Verdict {
    let checks = verify::rate_bound(20, 1000, 16).unwrap();
    verdict(checks_pass(&checks), describe(&checks))
}

fn by_estimator(runs: &[RunRecord], kind: EstimatorKind) -> &RunRecord {
    runs.iter().find(|r| r.estimator == kind).expect("estimator ran")
}

fn rounds_to(series: &[f64], fraction: f64) -> Option<usize> {
    series.iter().position(|e| *e <= fraction * series[0]).map(|k| k + 1)
}

fn c7_fig2(outcome: &Outcome, elapsed: Duration) -> Verdict {
    let runs = &outcome.manifest.runs;
    let mut pass = elapsed < Duration::from_secs(120);
    let mut parts = Vec::new();
    for r in runs {
        let first = r.series[0];
        let last = *r.series.last().unwrap();
        pass &= last < 0.2 * first;
        parts.push(format!("{} e1={first:.3} e1600={last:.4} t10%={:?}", r.estimator, rounds_to(&r.series, 0.1)));
    }
    let bp = rounds_to(&by_estimator(runs, EstimatorKind::Bp).series, 0.1).unwrap_or(usize::MAX);
    for k in [EstimatorKind::Distributed, EstimatorKind::Marginal] {
        let t = rounds_to(&by_estimator(runs, k).series, 0.1).unwrap_or(usize::MAX);
        pass &= t < bp;
    }
    verdict(pass, format!("{}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn mean_final(outcome: &Outcome, label: &str, kind: EstimatorKind) -> f64 {
    outcome
        .summary
        .iter()
        .find(|r| r.scenario == label && r.estimator == kind)
        .map(|r| r.mean_error)
        .expect("summary row")
}

fn c8_fig3(dir: &Path, sweep_elapsed: Duration) -> Verdict {
    let mut c = ExperimentConfig::preset("localization-fig3-sweep").unwrap();
    c.sweep.b = vec![10.0];
    c.sweep.topology = [7, 23, 27].into_iter().map(|edges| Topology::EdgeCount { edges }).collect();
    c.sweep.seed = (0..20).collect();
    let outcome = execute(&in_dir(c, dir)).unwrap();
    let line = "localization-fig3-b10-edges7";
    let full = mean_final(&outcome, line, EstimatorKind::Distributed);
    let marg = mean_final(&outcome, line, EstimatorKind::Marginal);
    let cbp = mean_final(&outcome, line, EstimatorKind::CircularBp);
    let mut checks = vec![
        (format!("full {full:.4} ≤ marginal {marg:.4}"), full <= marg),
        (format!("marginal {marg:.4} ≤ circular BP {cbp:.4}"), marg <= cbp),
        (format!("full {full:.4} < 0.05"), full < 0.05),
    ];
    for edges in [23, 27] {
        let label = format!("localization-fig3-b10-edges{edges}");
        let m = mean_final(&outcome, &label, EstimatorKind::Marginal);
        let b = mean_final(&outcome, &label, EstimatorKind::Bp);
        let ratio = (b / m).max(m / b);
        checks.push((format!("{edges} edges: BP {b:.4} vs marginal {m:.4} (×{ratio:.1}) within 2×"), ratio <= 2.0));
    }
    checks.push((format!("96-run sweep {:.1}s < 600s", sweep_elapsed.as_secs_f64()), sweep_elapsed < Duration::from_secs(600)));
    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail = checks.iter().map(|(s, ok)| format!("{s} {}", if *ok { "ok" } else { "NO" })).collect::<Vec<_>>().join("; ");
    verdict(pass, detail)
}

fn c9_marginal_convergence() -> Verdict {
    let (check, _) = verify::marginal_convergence(50, 2000, 19).unwrap();
    verdict(check.violations == 0, describe(&[check]))
}

fn c10_storage() -> Verdict {
    let mut strict = true;
    for seed in 0..10 {
        let (m, f) = MappingScenario::build(MappingConfig::desk(seed)).unwrap().storage();
        strict &= m < f;
    }
    let paper = MappingScenario::build(MappingConfig::paper_shaped(0)).unwrap();
    let (m, f) = paper.storage();
    let ratio = m as f64 / f as f64;
    verdict(
        strict && m < f && ratio < 0.25,
        format!("desk seeds 0-9 strict: {strict}; paper-shaped counts {:?}, {m}/{f} = {ratio:.3}", paper.parameter_counts()),
    )
}

fn c11_mapping() -> Verdict {
    let mut errors = Vec::new();
    let mut disagreement = Vec::new();
    for seed in 0..10 {
        let s = MappingScenario::build(MappingConfig::desk(seed)).unwrap();
        let mut run = MappingRun::new(&s, EstimatorKind::Marginal, StepSchedule::Constant { alpha: 1.0 }, 0).unwrap();
        let trace = run_rounds(&mut run, 20_000).unwrap();
        errors.push(trace.mean_error(20_000).unwrap());
        disagreement.push(run.shared_disagreement());
    }
    let med_err = median(errors);
    let med_dis = median(disagreement);
    verdict(
        med_err < 0.15 && med_dis < 1e-2,
        format!("median L1 error {med_err:.4} (< 0.15), median shared disagreement {med_dis:.2e} (< 1e-2)"),
    )
}

fn same_csvs(a: &Path, b: &Path) -> (usize, Vec<String>) {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let differing = names.iter().filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok()).cloned().collect();
    (names.len(), differing)
}

fn c12_determinism(pairs: &[(&str, &Path, &Path)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, a, b) in pairs {
        let (n, diff) = same_csvs(a, b);
        pass &= n > 0 && diff.is_empty();
        parts.push(format!("{name}: {n} files, {} differ", diff.len()));
    }
    verdict(pass, parts.join("; "))
}

fn run_preset(name: &str, dir: &Path, jobs: usize) -> (Outcome, Duration) {
    let mut c = in_dir(ExperimentConfig::preset(name).unwrap(), dir);
    c.run.jobs = Some(jobs);
    let start = Instant::now();
    let outcome = execute(&c).unwrap();
    (outcome, start.elapsed())
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name);

    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |id: u32, name: &'static str, v: Verdict| {
        println!("criterion {id:>2} {name:<28} {} : {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };

    report(1, "oracle equivalence", guarded(c1_oracle_equivalence));
    report(2, "mixing KL decrease", guarded(c2_mixing_kl));
    report(3, "manifold characterization", guarded(c3_manifold));
    report(4, "iterate-gap bounds", guarded(c4_iterate_gap));
    report(5, "TV contraction", guarded(c5_contraction));
    report(6, "centralized rate", guarded(c6_rate));

    let fig2 = catch_unwind(|| run_preset("localization-fig2", &dir("fig2-a"), 1));
    report(7, "fig2 reproduction", match &fig2 {
        Ok((outcome, elapsed)) => guarded(|| c7_fig2(outcome, *elapsed)),
        Err(_) => verdict(false, "preset run panicked"),
    });

    let sweep = catch_unwind(|| run_preset("localization-fig3-sweep", &dir("fig3-a"), 8));
    report(8, "fig3 orderings", match &sweep {
        Ok((_, elapsed)) => guarded(|| c8_fig3(&dir("fig3-seeds"), *elapsed)),
        Err(_) => verdict(false, "sweep run panicked"),
    });

    report(9, "marginal convergence", guarded(c9_marginal_convergence));
    report(10, "storage reduction", guarded(c10_storage));
    report(11, "mapping convergence", guarded(c11_mapping));

    report(12, "determinism", guarded(|| {
        run_preset("localization-fig2", &dir("fig2-b"), 2);
        run_preset("localization-fig3-sweep", &dir("fig3-b"), 1);
        run_preset("mapping-desk", &dir("map-a"), 1);
        run_preset("mapping-desk", &dir("map-b"), 1);
        c12_determinism(&[
            ("localization-fig2", &dir("fig2-a"), &dir("fig2-b")),
            ("localization-fig3-sweep", &dir("fig3-a"), &dir("fig3-b")),
            ("mapping-desk", &dir("map-a"), &dir("map-b")),
        ])
    }));

    let failed: Vec<String> = results.iter().filter(|(_, _, v)| !v.pass).map(|(id, n, _)| format!("{id} ({n})")).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}

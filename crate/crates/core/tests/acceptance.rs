//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness.

use std::io::BufReader;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use colnav_core::config::Config;
use colnav_core::evaluation::{
    canonical_skip_config, evaluate_hole_scenario, helix_centerline_accuracy, integration_inverse, rebuild_injections,
    run_scan, HoleOutcome, TickCounts,
};
use colnav_core::io::{FrameStream, ORACLE};
use colnav_core::metrics::{categorize, weighted_kappa, CategoryLabel, Weighting};
use colnav_core::replay::{run_replay, simulate, simulated_model, ReplayOptions};
use colnav_core::simulator::{scripted_trajectory, OracleCoverage, TrajectoryKind, TubeModel};

const HOLE_SCENARIOS: u64 = 50;

struct Suite {
    failed: usize,
}

impl Suite {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }

    fn error(&mut self, name: &str, e: impl std::fmt::Display) {
        self.check(name, false, format!("error: {e}"));
    }
}

fn integration_inverse_check(suite: &mut Suite) {
    match integration_inverse(200, 2024) {
        Ok(r) => suite.check(
            "integration_inverse",
            r.nonzero_after == 0 && r.max_color_residual < 1e-6 && r.max_weight_residual < 1e-6 && r.seconds < 30.0,
            format!(
                "{} frames, {} nonzero cells after removal, residual color {:.2e} weight {:.2e}, {:.1} s",
                r.frames, r.nonzero_after, r.max_color_residual, r.max_weight_residual, r.seconds
            ),
        ),
        Err(e) => suite.error("integration_inverse", e),
    }
}

fn rebuild_check(suite: &mut Suite) {
    let run = || -> colnav_core::Result<(f64, f64)> {
        let cfg = Config::default();
        let model = TubeModel::new(cfg.tube.clone())?;
        let poses = scripted_trajectory(TrajectoryKind::Pullback, &model, &cfg.trajectory)?;
        let r = run_scan(&model, &cfg.camera.intrinsics()?, &poses, &cfg, &rebuild_injections())?;
        let fresh = r.session.rebuilt()?;
        Ok(r.session.image().max_difference(fresh.image()))
    };
    match run() {
        Ok((dc, dw)) => suite.check(
            "rebuild_equivalence",
            dc <= 1e-6 && dw <= 1e-6,
            format!("max color diff {dc:.2e}, max weight diff {dw:.2e} (tracking loss, loop closure, pose noise)"),
        ),
        Err(e) => suite.error("rebuild_equivalence", e),
    }
}

/// Simulates the spiral to disk, replays it, and checks coverage against the
/// written oracle plus the replay frame rate.
fn spiral_and_throughput(suite: &mut Suite) {
    let run = || -> colnav_core::Result<(f64, f64, f64, f64)> {
        let dir = tempfile::tempdir()?;
        let cfg = Config::default().with_overrides([("scan.kind", "spiral")])?;
        simulate(&cfg, dir.path())?;
        let stream = FrameStream::open(dir.path())?;
        let outcome = run_replay(&stream, &cfg, ReplayOptions::default())?;
        let model = simulated_model(&cfg)?;
        let oracle = OracleCoverage::read(
            BufReader::new(std::fs::File::open(dir.path().join(ORACLE))?),
            cfg.unfold.row_height,
        )?;
        let (lo, hi) = colnav_core::evaluation::centerline_axis_range(&outcome.session, 0, &model)?;
        let fps = outcome.report.timing.as_ref().map_or(0.0, |t| t.fps);
        Ok((outcome.report.coverage_pct, oracle.coverage_between(lo, hi), fps, outcome.report.frames as f64))
    };
    match run() {
        Ok((engine, oracle, fps, frames)) => {
            suite.check(
                "coverage_spiral",
                engine >= 99.0 && (engine - oracle).abs() <= 2.0,
                format!("engine {engine:.3}%, oracle {oracle:.3}%, |diff| {:.3} pp", (engine - oracle).abs()),
            );
            suite.check(
                "throughput",
                fps >= 20.0,
                format!("{fps:.1} FPS over {frames} frames of 320x240 replayed from disk (render excluded)"),
            );
        }
        Err(e) => {
            suite.error("coverage_spiral", &e);
            suite.error("throughput", e);
        }
    }
}

fn canonical_skip_check(suite: &mut Suite) {
    let run = || -> colnav_core::Result<_> {
        let cfg = canonical_skip_config();
        let model = simulated_model(&cfg)?;
        let poses = scripted_trajectory(cfg.scan.kind, &model, &cfg.trajectory)?;
        let r = run_scan(&model, &cfg.camera.intrinsics()?, &poses, &cfg, &[])?;
        colnav_core::evaluation::compare_coverage(&r.session, &model, &r.oracle)
    };
    match run() {
        Ok(c) => {
            let (e, o) = (c.engine_categories[0], c.oracle_categories[0]);
            let others_fine = (1..4).all(|q| c.engine_categories[q] == CategoryLabel::MostlyCovered);
            suite.check(
                "coverage_skip_hole",
                e != CategoryLabel::MostlyCovered && e == o && others_fine,
                format!(
                    "hole quadrant engine {:.1}% ({}) oracle {:.1}% ({}); other quadrants {:?}",
                    c.engine_quadrants[0],
                    e.name(),
                    c.oracle_quadrants[0],
                    o.name(),
                    c.engine_categories[1..].iter().map(|x| x.name()).collect::<Vec<_>>()
                ),
            );
        }
        Err(e) => suite.error("coverage_skip_hole", e),
    }
}

fn hole_scenarios(suite: &mut Suite) {
    let t0 = Instant::now();
    let outcomes: Vec<colnav_core::Result<HoleOutcome>> =
        (0..HOLE_SCENARIOS).map(|seed| evaluate_hole_scenario(seed, 4)).collect();
    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().err().map(|e| e.to_string()))
        .collect();
    if !failures.is_empty() {
        suite.error("category_agreement", failures.join("; "));
        suite.error("compass_precision_recall", "scenario errors");
        suite.error("compass_roll_invariance", "scenario errors");
        return;
    }
    let outcomes: Vec<HoleOutcome> = outcomes.into_iter().map(|o| o.unwrap()).collect();
    let (mut agree, mut total, mut disagreements) = (0usize, 0usize, Vec::new());
    let mut ticks = TickCounts::default();
    let (mut consistent, mut checked) = (0, 0);
    for o in &outcomes {
        for q in 0..4 {
            total += 1;
            if o.coverage.engine_categories[q] == o.coverage.oracle_categories[q] {
                agree += 1;
            } else {
                disagreements.push(format!(
                    "seed {} q{} engine {:.1} oracle {:.1}",
                    o.seed,
                    q + 1,
                    o.coverage.engine_quadrants[q],
                    o.coverage.oracle_quadrants[q]
                ));
            }
        }
        ticks.merge(&o.ticks);
        consistent += o.roll_consistent;
        checked += o.roll_checked;
    }
    let rate = agree as f64 / total as f64;
    suite.check(
        "category_agreement",
        rate >= 0.95,
        format!(
            "{agree}/{total} quadrant categories match the oracle ({:.1}%) over {} scenarios in {:.0} s{}",
            100.0 * rate,
            outcomes.len(),
            t0.elapsed().as_secs_f64(),
            if disagreements.is_empty() { String::new() } else { format!("; mismatches: {}", disagreements.join(", ")) }
        ),
    );
    suite.check(
        "compass_precision_recall",
        ticks.precision() >= 0.9 && ticks.recall() >= 0.9,
        format!(
            "precision {:.3}, recall {:.3} (tp {} fp {} fn {} tn {})",
            ticks.precision(),
            ticks.recall(),
            ticks.tp,
            ticks.fp,
            ticks.fn_,
            ticks.tn
        ),
    );
    suite.check(
        "compass_roll_invariance",
        checked > 0 && consistent == checked,
        format!("{consistent}/{checked} poses keep world ticks within one tick under rolls of 0, 45, 90, 180 deg"),
    );
}

fn thresholds_check(suite: &mut Suite) {
    let got = [60.0, 80.0, 100.0].map(|p| categorize(p).map(|c| c.name()));
    let ok = matches!(
        got,
        [Ok("mostly not covered"), Ok("partially covered"), Ok("mostly covered")]
    );
    suite.check("thresholds", ok, format!("categorize(60, 80, 100) = {got:?}"));
}

fn kappa_check(suite: &mut Suite) {
    // Hand computation: with agreement weights 1 − |i−j|/2, observed
    // agreement is 5/6 and chance agreement 5/9, so κ = (5/6 − 5/9)/(4/9) = 5/8.
    // With 1 − (|i−j|/2)², observed 11/12 and chance 2/3, so κ = 3/4.
    let a = [0, 0, 1, 1, 2, 2];
    let b = [0, 1, 1, 2, 2, 2];
    let lin = weighted_kappa(&a, &b, Weighting::Linear);
    let quad = weighted_kappa(&a, &b, Weighting::Quadratic);
    let hand = matches!((&lin, &quad), (Ok(l), Ok(q)) if (l - 0.625).abs() <= 1e-9 && (q - 0.75).abs() <= 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut identity = true;
    let mut worst_asym = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let mut x: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        x[0] = 0;
        x[1] = 2;
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        for w in [Weighting::Linear, Weighting::Quadratic] {
            identity &= weighted_kappa(&x, &x, w).map_or(false, |k| (k - 1.0).abs() <= 1e-12);
            match (weighted_kappa(&x, &y, w), weighted_kappa(&y, &x, w)) {
                (Ok(p), Ok(q)) => worst_asym = worst_asym.max((p - q).abs()),
                _ => worst_asym = f64::INFINITY,
            }
        }
    }
    suite.check(
        "kappa",
        hand && identity && worst_asym <= 1e-12,
        format!("6-item example linear {lin:?} (5/8) quadratic {quad:?} (3/4); kappa(a,a)=1: {identity}; max asymmetry {worst_asym:.1e} over 100 pairs"),
    );
}

fn centerline_check(suite: &mut Suite) {
    match helix_centerline_accuracy() {
        Ok(r) => suite.check(
            "centerline_accuracy",
            r.max_axis_error <= 2.0 && r.max_append_shift < 1.0,
            format!(
                "helix: max distance to axis {:.3} mm over the interior 90%, appending 50 frames moves samples {:.3} mm",
                r.max_axis_error, r.max_append_shift
            ),
        ),
        Err(e) => suite.error("centerline_accuracy", e),
    }
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0 };
    integration_inverse_check(&mut suite);
    rebuild_check(&mut suite);
    spiral_and_throughput(&mut suite);
    canonical_skip_check(&mut suite);
    hole_scenarios(&mut suite);
    thresholds_check(&mut suite);
    kappa_check(&mut suite);
    centerline_check(&mut suite);
    if suite.failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failing", suite.failed);
        ExitCode::FAILURE
    }
}

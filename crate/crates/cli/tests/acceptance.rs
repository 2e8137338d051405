//! Acceptance run: one line per criterion, non-zero exit if a gating one fails.
//!
//! `CTGEO_TREND_FULL=1` runs the trend check with the full training recipe
//! instead of the reduced one.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::oracles::{
    pose_oracle, random_frame, random_grid, random_pose, random_stream, random_video, same_up_to_rounding,
    voxel_oracle, DepthCase,
};
use common::scenes::{ate, boosted_fusion_error, centres, depth_abs_rel, desk, gauge_error, gt_centres, small};
use common::{gradient_rel_error, ALL_PRIMS};
use ctgeo::align::AlignConfig;
use ctgeo::eval::{
    depth_metrics, fit_scale_shift, pose_metrics, run_skip_protocol, run_trend, DepthFit, DepthFrame, Predictor,
    TrendRecipe,
};
use ctgeo::events::{simulate_events, voxelize, Event, EventStream, SimulatorConfig};
use ctgeo::geometry::{norm_factor, ConfidenceMap, Frame, Pointmap, Pose, Vec3};
use ctgeo::net::loss::interp_loss;
use ctgeo::net::{Model, ModelConfig, Variant};
use ctgeo::rng::SeedTree;
use nalgebra::{Translation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Option<u64>, detail: String) -> Outcome {
    match limit {
        Some(s) if elapsed.as_secs_f64() > s as f64 => Err(format!("{detail}; took over {s} s")),
        _ => Ok(detail),
    }
}

fn autodiff() -> Outcome {
    let mut worst = (0.0f64, ALL_PRIMS[0]);
    let mut cases = 0;
    for prim in ALL_PRIMS {
        for case in 0..20u64 {
            let e = gradient_rel_error(prim, 7000 + case, 1e-3);
            cases += 1;
            if e > worst.0 {
                worst = (e, prim);
            }
        }
    }
    ensure(
        worst.0 < 1e-3,
        format!(
            "{} ops x 20 cases ({cases}), worst rel err {:.2e} ({:?})",
            ALL_PRIMS.len(),
            worst.0,
            worst.1
        ),
    )
}

fn events() -> Outcome {
    for seed in 0..100 {
        let s = random_stream(500 + seed, 1000, 16, 20);
        if voxelize(&s, 5).map_err(|e| e.to_string())?.data != voxel_oracle(&s, 5) {
            return Err(format!("voxel grid differs from the oracle on stream {seed}"));
        }
        let r = random_stream(900 + seed, 200, 8, 8);
        if !same_up_to_rounding(&r.reversed().reversed(), &r) {
            return Err(format!("double reversal changed stream {seed}"));
        }
    }
    for seed in 0..10 {
        let (frames, ts) = random_video(seed, 6, 30);
        let neg: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|v| -v).collect()).collect();
        let cfg = SimulatorConfig::default();
        let a = simulate_events(&frames, &ts, 5, 6, &cfg, &SeedTree::new(seed)).map_err(|e| e.to_string())?;
        let b = simulate_events(&neg, &ts, 5, 6, &cfg, &SeedTree::new(seed)).map_err(|e| e.to_string())?;
        let flipped: Vec<Event> = a
            .events()
            .iter()
            .map(|e| Event {
                polarity: -e.polarity,
                ..*e
            })
            .collect();
        let flipped = EventStream::new(5, 6, a.span().0, a.span().1, flipped).map_err(|e| e.to_string())?;
        if b != flipped {
            return Err(format!("negated video {seed} did not flip polarities"));
        }
    }
    Ok("100 streams match the oracle exactly; double reversal and polarity antisymmetry hold".into())
}

fn zero_init() -> Outcome {
    let c = ModelConfig::default();
    let mut model = Model::<f32>::new_base(ModelConfig { seed: 31, ..c.clone() }).map_err(|e| e.to_string())?;
    model.add_interp_branch().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..10 {
        let f0 = random_frame(&mut rng, c.pixels());
        let f1 = random_frame(&mut rng, c.pixels());
        let empty = case % 3 == 0;
        let g0 = random_grid(&mut rng, &c, empty);
        let g1 = random_grid(&mut rng, &c, empty);
        let tau = rng.random_range(0.0..=1.0);
        let (base, out) = model
            .interpolate([&f0, &f1], None, [&g0, &g1], tau, Variant::default(), Frame::Camera(0))
            .map_err(|e| e.to_string())?;
        if out.points != base.points || out.conf != base.conf {
            return Err(format!(
                "case {case} (tau {tau:.3}, empty events {empty}) differs from the base output"
            ));
        }
    }
    Ok("10 inputs (4 with empty event grids) bit-identical to the base output".into())
}

fn random_pointmap(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Pointmap {
    let pts = (0..h * w)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..4.0),
            )
        })
        .collect();
    Pointmap::new(h, w, Frame::Camera(0), pts, vec![true; h * w]).unwrap()
}

fn loss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (h, w) = (6, 7);
    let mut perfect: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for _ in 0..20 {
        let gt0 = random_pointmap(&mut rng, h, w);
        let gt1 = random_pointmap(&mut rng, h, w);
        let target = random_pointmap(&mut rng, h, w);
        let zbar = norm_factor(&[&gt0, &gt1]).map_err(|e| e.to_string())?;
        let z = rng.random_range(0.5..2.0);
        let ones = ConfidenceMap::ones(h, w);
        let pred = target.scaled(z / zbar);
        let l =
            interp_loss([(&pred, &ones), (&pred, &ones)], &target, z, [&gt0, &gt1], 0.2).map_err(|e| e.to_string())?;
        perfect = perfect.max(l.abs());

        let a = random_pointmap(&mut rng, h, w);
        let b = random_pointmap(&mut rng, h, w);
        let conf = ConfidenceMap::new(h, w, (0..h * w).map(|_| rng.random_range(1.0..3.0)).collect()).unwrap();
        let reference =
            interp_loss([(&a, &conf), (&b, &conf)], &target, z, [&gt0, &gt1], 0.2).map_err(|e| e.to_string())?;
        for s in [0.1, 1.0, 10.0] {
            let (sa, sb) = (a.scaled(s), b.scaled(s));
            let l = interp_loss([(&sa, &conf), (&sb, &conf)], &target, z * s, [&gt0, &gt1], 0.2)
                .map_err(|e| e.to_string())?;
            drift = drift.max((l - reference).abs() / reference.abs().max(f64::MIN_POSITIVE));
        }
    }
    ensure(
        perfect == 0.0 && drift < 1e-5,
        format!("perfect-prediction loss {perfect:.1e}, worst relative change under scaling {drift:.1e}"),
    )
}

fn alignment() -> Outcome {
    let config = AlignConfig::default();
    if config.iterations != 300 {
        return Err(format!("schedule has {} iterations", config.iterations));
    }
    let mut worst = [0.0f64; 4];
    for seed in 0..5 {
        let seq = desk(100 + seed);
        let (r, sol) =
            run_skip_protocol(&seq, "desk", 1, &Predictor::ground_truth(), &config).map_err(|e| e.to_string())?;
        let all_ate = ate(&centres(&sol), &gt_centres(&seq, &sol));
        let frame_rel = depth_abs_rel(&seq, &sol, Some(false));
        let interp_rel = depth_abs_rel(&seq, &sol, Some(true));
        for (w, v) in worst.iter_mut().zip([all_ate, frame_rel, interp_rel, r.abs_rel]) {
            *w = w.max(v);
        }
    }
    ensure(
        worst.iter().all(|&v| v < 1e-3),
        format!(
            "5 desk sequences: ATE {:.1e}, Abs Rel at frames {:.1e}, at interpolated times {:.1e} (protocol {:.1e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn gauge() -> Outcome {
    let worst = (0..3)
        .map(|s| gauge_error(&small(14 + s, 9), 14 + s))
        .fold(0.0f64, f64::max);
    ensure(
        worst < 1e-6,
        format!("3 random similarities, worst relative ATE {worst:.1e}"),
    )
}

fn fusion() -> Outcome {
    let mut worst: f64 = 0.0;
    for (seed, boosted) in [(15, 2), (16, 0), (17, 3)] {
        worst = worst.max(boosted_fusion_error(&small(seed, 5), &[0, 2, 4], boosted));
    }
    ensure(
        worst < 1e-3,
        format!("3 scenes, worst relative distance to the boosted measurement {worst:.1e}"),
    )
}

fn trend() -> Outcome {
    let full = std::env::var_os("CTGEO_TREND_FULL").is_some();
    let recipe = if full {
        TrendRecipe::default()
    } else {
        TrendRecipe::quick()
    };
    let out = run_trend(&recipe, &AlignConfig::default()).map_err(|e| e.to_string())?;
    let c = &out.check;
    let detail = format!(
        "{} recipe, k={}: full {:.4} vs copy_nearest {:.4} ({:+.1}%, need >= 20%), no_events {:.4}; \
         tau spread full {:.3}, no_time {:.3}",
        if full { "full" } else { "reduced" },
        recipe.k,
        c.full_abs_rel,
        c.copy_nearest_abs_rel,
        100.0 * c.improvement_over_copy,
        c.no_events_abs_rel,
        c.full_tau_spread,
        c.no_time_tau_spread,
    );
    ensure(c.pass, detail)
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut cases = 0;
    while cases < 50 {
        let c = DepthCase::random(&mut rng);
        if !c.evaluated.iter().zip(&c.mask).any(|(&e, m)| e && m.iter().any(|&v| v)) {
            continue;
        }
        cases += 1;
        let (s, b) = (rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0));
        let got = depth_metrics(&c.frames(), DepthFit::Fixed { scale: s, shift: b }).map_err(|e| e.to_string())?;
        if (got.abs_rel, got.delta_1_25) != c.oracle(s, b) {
            return Err(format!("depth case {cases} differs from the oracle"));
        }
        let (fs, fb) = fit_scale_shift(&c.frames()).map_err(|e| e.to_string())?;
        let (os, ob) = c.oracle_fit();
        if (fs - os).abs() > 1e-9 * os.abs() || (fb - ob).abs() > 1e-9 * (1.0 + ob.abs()) {
            return Err(format!("depth fit {cases}: ({fs}, {fb}) vs ({os}, {ob})"));
        }

        let n = rng.random_range(3..12);
        let gt: Vec<Pose> = (0..n).map(|_| random_pose(&mut rng, 2.0)).collect();
        let pred: Vec<Pose> = gt.iter().map(|g| random_pose(&mut rng, 0.1) * g).collect();
        let got = pose_metrics(&pred, &gt).map_err(|e| e.to_string())?;
        let (a, t, r) = pose_oracle(&pred, &gt);
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + y.abs());
        if !(close(got.ate, a) && close(got.rte, t) && close(got.rre, r)) {
            return Err(format!("pose case {cases}: {got:?} vs ({a}, {t}, {r})"));
        }

        // Affine change of the prediction under a least-squares fit, and a
        // global similarity of the trajectory.
        let frames = c.frames();
        let (k, m) = (rng.random_range(0.2..5.0), rng.random_range(-2.0..2.0));
        let moved: Vec<Vec<f64>> = c.pred.iter().map(|p| p.iter().map(|v| k * v + m).collect()).collect();
        let moved_frames: Vec<DepthFrame<'_>> = frames
            .iter()
            .zip(&moved)
            .map(|(f, p)| DepthFrame { pred: p, ..*f })
            .collect();
        let d0 = depth_metrics(&frames, DepthFit::LeastSquares).map_err(|e| e.to_string())?;
        let d1 = depth_metrics(&moved_frames, DepthFit::LeastSquares).map_err(|e| e.to_string())?;
        if (d0.abs_rel - d1.abs_rel).abs() > 1e-9 * d0.abs_rel.max(1e-12) {
            return Err(format!(
                "depth case {cases}: Abs Rel changed under an affine map of the prediction"
            ));
        }
        let rot = UnitQuaternion::from_euler_angles(rng.random(), rng.random(), rng.random());
        let s = rng.random_range(0.1..10.0);
        let shift = Vec3::new(rng.random(), rng.random(), rng.random());
        let sim: Vec<Pose> = pred
            .iter()
            .map(|p| {
                Pose::from_parts(
                    Translation3::from(rot * p.translation.vector * s + shift),
                    rot * p.rotation,
                )
            })
            .collect();
        let p1 = pose_metrics(&sim, &gt).map_err(|e| e.to_string())?;
        if !(close(p1.ate, got.ate) && close(p1.rte, got.rte) && (p1.rre - got.rre).abs() < 1e-6) {
            return Err(format!(
                "pose case {cases}: metrics changed under a similarity of the prediction"
            ));
        }
    }
    Ok("50 depth and 50 pose cases match the oracles; affine and similarity invariances hold".into())
}

fn ctgeo(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_ctgeo"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "ctgeo {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

fn same_file(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| tmp.path().join(s);
    let st = |s: &str| p(s).to_str().unwrap().to_owned();
    for run in ["st1", "st2"] {
        ctgeo(&["selftest", "--seed", "3", "--out", &st(run)])?;
    }
    if !same_file(&p("st1/selftest.json"), &p("st2/selftest.json"))? {
        return Err("selftest reports differ".into());
    }
    ctgeo(&["synth", "--seed", "3", "--out", &st("seq")])?;
    for run in ["a1", "a2"] {
        ctgeo(&[
            "align",
            "--bundle",
            &st("seq"),
            "--k",
            "3",
            "--method",
            "ground_truth",
            "--out",
            &st(run),
        ])?;
        ctgeo(&["eval", "--bundle", &st("seq"), "--align", &st(run)])?;
    }
    for f in ["report.json", "report.csv", "trajectory.txt"] {
        if !same_file(&p("a1").join(f), &p("a2").join(f))? {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok("selftest.json, report.json and report.csv byte-identical across runs".into())
}

struct Criterion {
    id: u32,
    name: &'static str,
    gating: bool,
    limit_s: Option<u64>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "autodiff gradients",
            gating: true,
            limit_s: Some(30),
            run: autodiff,
        },
        Criterion {
            id: 2,
            name: "event oracles",
            gating: true,
            limit_s: Some(10),
            run: events,
        },
        Criterion {
            id: 3,
            name: "zero-init identity",
            gating: true,
            limit_s: None,
            run: zero_init,
        },
        Criterion {
            id: 4,
            name: "loss invariants",
            gating: true,
            limit_s: None,
            run: loss,
        },
        Criterion {
            id: 5,
            name: "alignment exactness",
            gating: true,
            limit_s: Some(180),
            run: alignment,
        },
        Criterion {
            id: 6,
            name: "gauge invariance",
            gating: true,
            limit_s: None,
            run: gauge,
        },
        Criterion {
            id: 7,
            name: "confidence dominance",
            gating: true,
            limit_s: None,
            run: fusion,
        },
        Criterion {
            id: 8,
            name: "trend (soft)",
            gating: false,
            limit_s: None,
            run: trend,
        },
        Criterion {
            id: 9,
            name: "metric oracles",
            gating: true,
            limit_s: None,
            run: metrics,
        },
        Criterion {
            id: 10,
            name: "determinism",
            gating: true,
            limit_s: None,
            run: determinism,
        },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in &criteria {
        if !filter.is_empty() && !filter.contains(&c.id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            })
            .and_then(|d| within(start.elapsed(), c.limit_s, d));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) if c.gating => ("FAIL", d),
            Err(d) => ("SOFT-FAIL", d),
        };
        println!("criterion {:>2} {tag:<9} {} [{secs:.1} s]: {detail}", c.id, c.name);
        if result.is_err() && c.gating {
            failed.push(c.id);
        }
    }
    if !failed.is_empty() {
        println!("gating criteria failed: {failed:?}");
        std::process::exit(1);
    }
}

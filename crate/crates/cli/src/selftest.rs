use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use ctgeo::eval::{run_skip_protocol, write_json, Predictor};
use ctgeo::events::voxelize;
use ctgeo::geometry::{norm_factor, ConfidenceMap, Frame};
use ctgeo::net::{loss::interp_loss, Model, ModelConfig, Variant};
use ctgeo::scene::{generate_sequence, SceneConfig, Sequence};

use crate::options::{CliError, CliResult, Settings};

const TOLERANCE: f64 = 1e-3;

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report directory.
    #[arg(long, default_value = "selftest")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Check {
    name: String,
    value: f64,
    limit: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Report {
    seed: u64,
    checks: Vec<Check>,
    pass: bool,
}

fn check(checks: &mut Vec<Check>, name: String, value: f64, limit: f64) {
    let pass = value.is_finite() && value <= limit;
    println!(
        "{} {name}: {value:.3e} (limit {limit:.0e})",
        if pass { "ok  " } else { "FAIL" }
    );
    checks.push(Check {
        name,
        value,
        limit,
        pass,
    });
}

/// Largest absolute difference between the interpolation output and the base
/// prediction of a freshly initialized branch, over both views.
fn zero_init_gap(seq: &Sequence, seed: u64) -> CliResult<f64> {
    let config = ModelConfig {
        height: seq.config.height,
        width: seq.config.width,
        seed,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::new_base(config)?;
    model.add_interp_branch()?;
    let (a, b) = (0, 4);
    let ts = &seq.timestamps;
    let tau = 0.5;
    let (fwd, bwd) = seq.events.window_normalized(ts[a], ts[b])?.split_and_reverse(tau)?;
    let grids = [voxelize(&fwd, model.config.bins)?, voxelize(&bwd, model.config.bins)?];
    let empty = ctgeo::events::EventVoxelGrid::zeros(model.config.bins, seq.config.height, seq.config.width);
    let mut gap = 0.0f64;
    for g in [[&grids[0], &grids[1]], [&empty, &empty]] {
        let (base, out) = model.interpolate(
            [&seq.frames[a], &seq.frames[b]],
            None,
            g,
            tau,
            Variant::default(),
            Frame::Camera(a as u32),
        )?;
        for v in 0..2 {
            for (p, q) in out.points[v].points.iter().zip(&base.points[v].points) {
                gap = gap.max((p - q).amax());
            }
            for (p, q) in out.conf[v].values.iter().zip(&base.conf[v].values) {
                gap = gap.max((p - q).abs());
            }
        }
    }
    Ok(gap)
}

/// Loss of a prediction equal to the scaled target with unit confidence.
fn perfect_loss(seq: &Sequence) -> CliResult<f64> {
    let gt0 = seq.camera_pointmap(0)?;
    let gt1 = seq.pointmap_in(4, 0)?;
    let target = seq.pointmap_in(2, 0)?;
    let zbar = norm_factor(&[&gt0, &gt1])?;
    let z = 1.7;
    let pred = target.scaled(z / zbar);
    let ones = ConfidenceMap::ones(pred.height, pred.width);
    Ok(interp_loss([(&pred, &ones), (&pred, &ones)], &target, z, [&gt0, &gt1], 0.2)?.abs())
}

pub fn run(a: SelftestArgs) -> CliResult<()> {
    let settings = Settings::default();
    let seq = generate_sequence(&SceneConfig {
        seed: a.seed,
        ..SceneConfig::default()
    })?;
    let mut checks = Vec::new();
    for k in [1, 3] {
        let (r, _) = run_skip_protocol(&seq, "desk", k, &Predictor::ground_truth(), &settings.align)?;
        check(&mut checks, format!("k={k} abs_rel"), r.abs_rel, TOLERANCE);
        check(&mut checks, format!("k={k} ate"), r.ate, TOLERANCE);
    }
    check(
        &mut checks,
        "zero-init identity".into(),
        zero_init_gap(&seq, a.seed)?,
        0.0,
    );
    check(&mut checks, "perfect prediction loss".into(), perfect_loss(&seq)?, 1e-9);
    let pass = checks.iter().all(|c| c.pass);
    std::fs::create_dir_all(&a.out).map_err(|e| ctgeo::Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let path = a.out.join("selftest.json");
    write_json(
        &path,
        &Report {
            seed: a.seed,
            checks,
            pass,
        },
    )?;
    println!("wrote {}", path.display());
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed("selftest failed".into()))
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ctgeo::align::{align as solve, export_solution, read_solution_trajectory};
use ctgeo::eval::{
    evaluate_nodes, protocol_inputs, run_ablation, run_trend, synth_sequences, write_csv, write_json, Method,
    MetricsReport, NodeEstimate, Predictor, SkipPlan, TrendRecipe,
};
use ctgeo::geometry::{write_ply, write_pointmap, Frame};
use ctgeo::net::{train as fit, Dataset, Model, TrainStage, Variant};
use ctgeo::scene::{generate_sequence, read_bundle, read_depth, write_bundle, Sequence};

use crate::options::{parse_list, CliError, CliResult, Settings};

/// Options shared by every command that takes configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// `section.key=value` file; `#` starts a comment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one option, e.g. `--set align.iterations=100`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> CliResult<Settings> {
        Settings::load(self.config.as_deref(), &self.sets)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle directory; with `--count` > 1, a parent of `seq_NNN` bundles.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let s = a.cfg.settings()?;
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if a.count == 1 {
        let scene = ctgeo::scene::SceneConfig {
            seed: a.seed,
            ..s.scene
        };
        let seq = generate_sequence(&scene)?;
        write_bundle(&a.out, &seq)?;
        println!("{}: {} frames, {} events", a.out.display(), seq.len(), seq.events.len());
    } else {
        for (name, seq) in synth_sequences(&s.scene, a.count, a.seed, "seq")? {
            let dir = a.out.join(&name);
            write_bundle(&dir, &seq)?;
            println!("{}: {} frames, {} events", dir.display(), seq.len(), seq.events.len());
        }
    }
    Ok(())
}

fn method_arg(s: &str) -> CliResult<Method> {
    Method::parse(s).map_err(|e| CliError::Usage(e.to_string()))
}

fn load_bundles(dirs: &[PathBuf]) -> CliResult<Vec<(String, Sequence)>> {
    dirs.iter()
        .map(|d| {
            let name = d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| d.display().to_string());
            Ok((name, read_bundle(d)?))
        })
        .collect()
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `a` trains the base model, `b` an interpolation branch on top of `--init`.
    #[arg(long, default_value = "a")]
    pub stage: String,
    /// Checkpoint to write; the model configuration goes next to it as JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Starting checkpoint (required for stage b).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Training bundles; without any, `--synth` sequences are generated.
    #[arg(long = "data")]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub synth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Interpolation variant for stage b: full, no_events or no_time_encoding.
    #[arg(long, default_value = "full")]
    pub variant: String,
    /// Training-loss CSV (default: checkpoint path with `.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let s = a.cfg.settings()?;
    let mut tc = s.train.clone();
    tc.stage = match a.stage.as_str() {
        "a" | "A" => TrainStage::A,
        "b" | "B" => TrainStage::B,
        other => return Err(CliError::Usage(format!("unknown stage {other:?}, expected a or b"))),
    };
    tc.seed = a.seed;
    if let Some(n) = a.steps {
        tc.steps = n;
    }
    let variant = method_arg(&a.variant)?;
    if !matches!(variant, Method::Full | Method::NoEvents | Method::NoTimeEncoding) {
        return Err(CliError::Usage(format!(
            "{} is not a trainable variant",
            variant.name()
        )));
    }
    if tc.stage == TrainStage::B {
        tc.variant = variant.variant();
    }
    tc.checkpoint = Some(a.out.clone());
    let mut model = match (&a.init, tc.stage) {
        (Some(p), _) => Model::load(p)?,
        (None, TrainStage::A) => Model::new_base(ctgeo::net::ModelConfig {
            seed: a.seed,
            ..s.model.clone()
        })?,
        (None, TrainStage::B) => {
            return Err(CliError::Usage("stage b needs --init <stage-a checkpoint>".into()));
        }
    };
    let sequences: Vec<Sequence> = if a.data.is_empty() {
        synth_sequences(&s.scene, a.synth, a.seed, "train")?
            .into_iter()
            .map(|(_, q)| q)
            .collect()
    } else {
        load_bundles(&a.data)?.into_iter().map(|(_, q)| q).collect()
    };
    let shortest = sequences.iter().map(Sequence::len).min().unwrap_or(0);
    if shortest < 3 {
        return Err(CliError::Usage("training needs sequences of at least 3 frames".into()));
    }
    let data = Dataset::new(sequences, 2..=10usize.min(shortest - 1), model.config.bins)?;
    let log = fit(&mut model, &data, &tc)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    log.write_csv(&log_path)?;
    if let Some((first, last)) = log.ends(10) {
        println!("loss {first:.5} -> {last:.5} over {} steps", log.rows.len());
    }
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct InterpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub start: usize,
    #[arg(long)]
    pub end: usize,
    #[arg(long)]
    pub target: usize,
    /// full, no_events or no_time_encoding
    #[arg(long, default_value = "full")]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn interp(a: InterpArgs) -> CliResult<()> {
    let seq = read_bundle(&a.bundle)?;
    if !(a.start < a.target && a.target < a.end && a.end < seq.len()) {
        return Err(CliError::Usage(format!(
            "need start < target < end < {} frames, got {} {} {}",
            seq.len(),
            a.start,
            a.target,
            a.end
        )));
    }
    let method = method_arg(&a.method)?;
    let variant: Variant = method.variant();
    let model = Model::load(&a.model)?;
    let ts = &seq.timestamps;
    let tau = (ts[a.target] - ts[a.start]) / (ts[a.end] - ts[a.start]);
    let (fwd, bwd) = seq
        .events
        .window_normalized(ts[a.start], ts[a.end])?
        .split_and_reverse(tau)?;
    let grids = [
        ctgeo::events::voxelize(&fwd, model.config.bins)?,
        ctgeo::events::voxelize(&bwd, model.config.bins)?,
    ];
    let (_, out) = model.interpolate(
        [&seq.frames[a.start], &seq.frames[a.end]],
        None,
        [&grids[0], &grids[1]],
        tau,
        variant,
        Frame::Camera(a.start as u32),
    )?;
    fs::create_dir_all(&a.out).map_err(|e| ctgeo::Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    for (v, name) in ["from_start", "from_end"].iter().enumerate() {
        write_pointmap(a.out.join(format!("{name}.bin")), &out.points[v])?;
        write_ply(a.out.join(format!("{name}.ply")), &out.points[v], Some(&out.conf[v]))?;
    }
    println!("tau {tau:.4}: wrote {}", a.out.display());
    Ok(())
}

/// Written next to an exported alignment so `eval` can score it.
#[derive(Serialize, Deserialize)]
struct ProtocolRecord {
    method: Method,
    plan: SkipPlan,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    timestamp: f64,
    interpolated: bool,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// full, no_events, no_time_encoding, oracle_source, copy_nearest or ground_truth
    #[arg(long, default_value = "full")]
    pub method: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Relative noise of oracle sources.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn align(a: AlignArgs) -> CliResult<()> {
    let s = a.cfg.settings()?;
    let method = method_arg(&a.method)?;
    let model = match (&a.model, method.needs_model()) {
        (Some(p), true) => Some(Model::load(p)?),
        (None, true) => {
            return Err(CliError::Usage(format!(
                "method {} needs --model <checkpoint>",
                method.name()
            )));
        }
        (_, false) => None,
    };
    let seq = read_bundle(&a.bundle)?;
    let plan = SkipPlan::new(seq.len(), a.k)?;
    let predictor = Predictor {
        method,
        model: model.as_ref(),
        oracle_sigma: a.sigma,
        seed: a.seed,
    };
    let graph = protocol_inputs(&seq, &plan, &predictor)?.build()?;
    let solution = solve(&graph, &s.align)?;
    export_solution(&a.out, &solution)?;
    let record = ProtocolRecord {
        method,
        plan,
        nodes: solution
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id as usize,
                timestamp: n.timestamp,
                interpolated: n.interpolated,
            })
            .collect(),
    };
    write_json(a.out.join("protocol.json"), &record)?;
    let log_path = a.out.join("align_log.csv");
    let file = fs::File::create(&log_path).map_err(|e| ctgeo::Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    solution.log.write_csv(file)?;
    println!("{} nodes aligned, wrote {}", solution.nodes.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Output directory of `ctgeo align`.
    #[arg(long)]
    pub align: PathBuf,
    /// Report JSON (default: `report.json` in the alignment directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report CSV (default: JSON path with `.csv`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn read_alignment(dir: &Path) -> CliResult<(ProtocolRecord, Vec<NodeEstimate>)> {
    let path = dir.join("protocol.json");
    let text = fs::read_to_string(&path).map_err(|_| {
        ctgeo::Error::Missing(format!(
            "alignment output in {} (no protocol.json); run `ctgeo align --bundle <dir> --out {}` first",
            dir.display(),
            dir.display()
        ))
    })?;
    let record: ProtocolRecord = serde_json::from_str(&text).map_err(|e| ctgeo::Error::Format {
        offset: e.column() as u64,
        detail: format!("{}: {e}", path.display()),
    })?;
    let poses = read_solution_trajectory(dir)?;
    if poses.len() != record.nodes.len() {
        return Err(ctgeo::Error::InvalidInput(format!(
            "{} poses in trajectory.txt for {} nodes",
            poses.len(),
            record.nodes.len()
        ))
        .into());
    }
    let mut nodes = Vec::with_capacity(poses.len());
    for (n, p) in record.nodes.iter().zip(&poses) {
        let depth = read_depth(dir.join(format!("depth/{:04}.bin", n.id)))?;
        nodes.push(NodeEstimate {
            id: n.id,
            interpolated: n.interpolated,
            pose: p.pose,
            depth: depth.values,
        });
    }
    Ok((record, nodes))
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let (record, nodes) = read_alignment(&a.align)?;
    let seq = read_bundle(&a.bundle)?;
    let name = a
        .bundle
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let r = evaluate_nodes(&seq, &record.plan, &nodes, &name, record.method.name())?;
    let report = MetricsReport::new(record.method.name(), record.plan.k, vec![r])?;
    let json = a.out.unwrap_or_else(|| a.align.join("report.json"));
    let csv = a.csv.unwrap_or_else(|| json.with_extension("csv"));
    write_json(&json, &report)?;
    write_csv(&csv, std::slice::from_ref(&report))?;
    let m = &report.mean;
    println!(
        "k={} {}: abs_rel {:.5} delta<1.25 {:.4} ate {:.5} rte {:.5} rre {:.4} deg",
        report.k, report.method, m.abs_rel, m.delta_1_25, m.ate, m.rte, m.rre
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Evaluation bundles; without any, `--synth` held-out sequences are generated.
    #[arg(long = "bundle")]
    pub bundles: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub synth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "1,3,7,15")]
    pub k: String,
    #[arg(long, default_value = "full,no_events,no_time_encoding,copy_nearest")]
    pub methods: String,
    /// Variant checkpoint, e.g. `--model full=ckpt/full.c3rt`.
    #[arg(long = "model", value_name = "VARIANT=PATH")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Train every variant with the fixed recipe first, then compare at its k.
    #[arg(long)]
    pub trend: bool,
    /// With `--trend`: the reduced recipe.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn mkdir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| {
        ctgeo::Error::Io {
            path: p.to_path_buf(),
            source: e,
        }
        .into()
    })
}

pub fn ablate(a: AblateArgs) -> CliResult<()> {
    let s = a.cfg.settings()?;
    mkdir(&a.out)?;
    if a.trend {
        let mut recipe = if a.quick {
            TrendRecipe::quick()
        } else {
            TrendRecipe::default()
        };
        recipe.seed = a.seed;
        let outcome = run_trend(&recipe, &s.align)?;
        write_json(a.out.join("trend.json"), &outcome)?;
        write_csv(a.out.join("ablation.csv"), &outcome.ablation.reports)?;
        let c = &outcome.check;
        println!(
            "full {:.5} copy_nearest {:.5} ({:+.1}%) no_events {:.5}; tau spread full {:.3} no_time {:.3}; {}",
            c.full_abs_rel,
            c.copy_nearest_abs_rel,
            100.0 * c.improvement_over_copy,
            c.no_events_abs_rel,
            c.full_tau_spread,
            c.no_time_tau_spread,
            if c.pass { "trend holds" } else { "trend not reproduced" }
        );
        return Ok(());
    }
    let ks: Vec<usize> = parse_list(&a.k, "skip value")?;
    let methods = a
        .methods
        .split(',')
        .map(|m| method_arg(m.trim()))
        .collect::<CliResult<Vec<_>>>()?;
    let mut models = BTreeMap::new();
    for entry in &a.models {
        let (name, path) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected VARIANT=PATH, got {entry:?}")))?;
        models.insert(method_arg(name)?, Model::load(path)?);
    }
    let sequences = if a.bundles.is_empty() {
        synth_sequences(&s.scene, a.synth, a.seed, "heldout")?
    } else {
        load_bundles(&a.bundles)?
    };
    let report = run_ablation(&sequences, &ks, &methods, &models, a.sigma, a.seed, &s.align)?;
    write_json(a.out.join("ablation.json"), &report)?;
    write_csv(a.out.join("ablation.csv"), &report.reports)?;
    for r in &report.rows {
        let delta = r.abs_rel_vs_full.map_or(String::from("-"), |d| format!("{d:+.5}"));
        println!(
            "k={:<2} {:<17} abs_rel {:.5} delta<1.25 {:.4} ate {:.5} vs full {delta}",
            r.k, r.method, r.abs_rel, r.delta_1_25, r.ate
        );
    }
    Ok(())
}

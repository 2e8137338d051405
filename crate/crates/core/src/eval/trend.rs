use std::collections::BTreeMap;

use serde::Serialize;

use super::protocol::Method;
use super::report::{run_ablation, AblationReport, MetricsReport};
use crate::align::AlignConfig;
use crate::error::{Error, Result};
use crate::net::{train, Dataset, Model, ModelConfig, TrainConfig, TrainLog, TrainStage, Variant};
use crate::rng::SeedTree;
use crate::scene::{generate_sequence, SceneConfig, Sequence};

/// Training and evaluation budget for the event and time-encoding
/// comparison.
#[derive(Clone, Debug, Serialize)]
pub struct TrendRecipe {
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub train_sequences: usize,
    pub eval_sequences: usize,
    pub steps_a: usize,
    pub steps_b: usize,
    pub batch: usize,
    pub lr: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for TrendRecipe {
    /// Desk scale, about half an hour on one core.
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            model: ModelConfig::default(),
            train_sequences: 24,
            eval_sequences: 4,
            steps_a: 2000,
            steps_b: 1000,
            batch: 4,
            lr: 1e-4,
            k: 7,
            seed: 0,
        }
    }
}

impl TrendRecipe {
    /// A few minutes: 32x32 scenes of 24 frames and short schedules.
    pub fn quick() -> Self {
        let scene = SceneConfig {
            height: 32,
            width: 32,
            focal: 40.0,
            frames: 24,
            ..SceneConfig::default()
        };
        Self {
            model: ModelConfig {
                height: 32,
                width: 32,
                ..ModelConfig::default()
            },
            scene,
            train_sequences: 12,
            eval_sequences: 3,
            steps_a: 600,
            steps_b: 400,
            batch: 4,
            lr: 1e-3,
            k: 7,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendCheck {
    pub full_abs_rel: f64,
    pub copy_nearest_abs_rel: f64,
    pub no_events_abs_rel: f64,
    /// `1 - full / copy_nearest`; at least 0.2 passes.
    pub improvement_over_copy: f64,
    pub beats_copy_nearest: bool,
    pub events_help: bool,
    /// Max over min of Abs Rel across target times.
    pub full_tau_spread: f64,
    pub no_time_tau_spread: f64,
    pub time_encoding_flattens: bool,
    pub pass: bool,
}

fn spread(r: &MetricsReport, taus: &[f64]) -> f64 {
    let per = r.per_tau();
    let vals: Vec<f64> = taus
        .iter()
        .filter_map(|t| per.get(&format!("{t:.4}")).copied())
        .collect();
    if vals.is_empty() {
        return f64::NAN;
    }
    let max = vals.iter().copied().fold(f64::MIN, f64::max);
    let min = vals.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

/// Evaluates the three trend expectations on an ablation at skip `k`.
pub fn trend_check(ablation: &AblationReport, k: usize) -> Result<TrendCheck> {
    let get = |m: Method| {
        ablation
            .reports
            .iter()
            .find(|r| r.k == k && r.method == m.name())
            .ok_or_else(|| Error::Missing(format!("{} report at k = {k}", m.name())))
    };
    let (full, copy, no_ev, no_time) = (
        get(Method::Full)?,
        get(Method::CopyNearest)?,
        get(Method::NoEvents)?,
        get(Method::NoTimeEncoding)?,
    );
    let taus = [0.25, 0.5, 0.75];
    let improvement = 1.0 - full.mean.abs_rel / copy.mean.abs_rel;
    let (fs, ns) = (spread(full, &taus), spread(no_time, &taus));
    let beats = improvement >= 0.2;
    let events = full.mean.abs_rel <= no_ev.mean.abs_rel;
    let flat = fs <= 2.0 && fs < ns;
    Ok(TrendCheck {
        full_abs_rel: full.mean.abs_rel,
        copy_nearest_abs_rel: copy.mean.abs_rel,
        no_events_abs_rel: no_ev.mean.abs_rel,
        improvement_over_copy: improvement,
        beats_copy_nearest: beats,
        events_help: events,
        full_tau_spread: fs,
        no_time_tau_spread: ns,
        time_encoding_flattens: flat,
        pass: beats && events && flat,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendOutcome {
    pub recipe: TrendRecipe,
    pub stage_a: TrainLog,
    pub stage_b: BTreeMap<String, TrainLog>,
    pub ablation: AblationReport,
    pub check: TrendCheck,
}

/// Named sequences generated from `seed` under `label`.
pub fn synth_sequences(scene: &SceneConfig, count: usize, seed: u64, label: &str) -> Result<Vec<(String, Sequence)>> {
    let seeds = SeedTree::new(seed).split_str(label);
    let configs: Vec<(usize, SceneConfig)> = (0..count)
        .map(|i| {
            let c = SceneConfig {
                seed: seeds.split(i as u64).seed(),
                ..scene.clone()
            };
            (i, c)
        })
        .collect();
    crate::par::map(&configs, |(i, c)| {
        generate_sequence(c).map(|s| (format!("{label}_{i:03}"), s))
    })
    .into_iter()
    .collect()
}

/// Trains the base model, the three interpolation variants from it with
/// identical seeds, and compares them on held-out sequences.
pub fn run_trend(recipe: &TrendRecipe, align: &AlignConfig) -> Result<TrendOutcome> {
    let spans = 2..=10usize.min(recipe.scene.frames - 1);
    let train_seqs = synth_sequences(&recipe.scene, recipe.train_sequences, recipe.seed, "train")?;
    let data = Dataset::new(
        train_seqs.into_iter().map(|(_, s)| s).collect(),
        spans,
        recipe.model.bins,
    )?;
    let cfg = |stage, steps, variant| TrainConfig {
        stage,
        steps,
        batch: recipe.batch,
        lr: recipe.lr,
        seed: recipe.seed,
        variant,
        ..TrainConfig::default()
    };
    let mut base = Model::<f32>::new_base(recipe.model.clone())?;
    let stage_a = train(
        &mut base,
        &data,
        &cfg(TrainStage::A, recipe.steps_a, Variant::default()),
    )?;
    let mut models = BTreeMap::new();
    let mut stage_b = BTreeMap::new();
    for m in [Method::Full, Method::NoEvents, Method::NoTimeEncoding] {
        let mut model = base.clone();
        let log = train(&mut model, &data, &cfg(TrainStage::B, recipe.steps_b, m.variant()))?;
        stage_b.insert(m.name().to_string(), log);
        models.insert(m, model);
    }
    let held_out = synth_sequences(&recipe.scene, recipe.eval_sequences, recipe.seed, "heldout")?;
    let methods = [
        Method::Full,
        Method::NoEvents,
        Method::NoTimeEncoding,
        Method::CopyNearest,
    ];
    let ablation = run_ablation(&held_out, &[recipe.k], &methods, &models, 0.0, recipe.seed, align)?;
    let check = trend_check(&ablation, recipe.k)?;
    Ok(TrendOutcome {
        recipe: recipe.clone(),
        stage_a,
        stage_b,
        ablation,
        check,
    })
}

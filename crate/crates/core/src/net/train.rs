use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::infer::{source_channels, Sources};
use super::layers::Bound;
use super::loss::{mean_norm, regression, InvScale, Target};
use super::model::{DirectionInputs, Model, Variant, INTERP};
use crate::error::{Error, Result};
use crate::geometry::{norm_factor, ConfidenceMap, Pointmap, Vec3};
use crate::par;
use crate::rng::{Rng, SeedTree};
use crate::scene::{generate_sequence, SceneConfig, Sequence, TripletPool, TripletSample};
use crate::tensor::{AdamW, AdamWConfig, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStage {
    A,
    B,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub stage: TrainStage,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Train stage B on noisy ground-truth sources with this relative
    /// noise instead of base predictions.
    pub oracle_sigma: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: TrainStage::A,
            steps: 10_000,
            batch: 4,
            lr: 1e-4,
            weight_decay: 0.0,
            seed: 0,
            variant: Variant::default(),
            oracle_sigma: None,
            checkpoint: None,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidInput(format!("bad value {value:?} for {key}"));
        let flag = |v: &str| match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad()),
        };
        match key {
            "stage" => {
                self.stage = match value {
                    "a" | "A" => TrainStage::A,
                    "b" | "B" => TrainStage::B,
                    _ => return Err(bad()),
                }
            }
            "steps" => self.steps = value.parse().map_err(|_| bad())?,
            "batch" => self.batch = value.parse().map_err(|_| bad())?,
            "lr" => self.lr = value.parse().map_err(|_| bad())?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "events" => self.variant.events = flag(value)?,
            "time_encoding" => self.variant.time = flag(value)?,
            "oracle_sigma" => {
                self.oracle_sigma = match value {
                    "none" | "" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "checkpoint_every" => self.checkpoint_every = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::InvalidInput(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidInput("batch must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput(
                "lr must be positive, weight decay non-negative".into(),
            ));
        }
        if let Some(s) = self.oracle_sigma {
            if !(s >= 0.0) {
                return Err(Error::InvalidInput(format!("oracle noise {s}")));
            }
        }
        Ok(())
    }
}

/// Training sequences and the triplet pool over them.
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub pool: TripletPool,
    pub bins: usize,
}

impl Dataset {
    /// Generates `count` sequences with seeds derived from `scene.seed`.
    pub fn generate(scene: &SceneConfig, count: usize, spans: RangeInclusive<usize>, bins: usize) -> Result<Self> {
        let seeds = SeedTree::new(scene.seed).split_str("dataset");
        let configs: Vec<SceneConfig> = (0..count as u64)
            .map(|i| SceneConfig {
                seed: seeds.split(i).seed(),
                ..scene.clone()
            })
            .collect();
        let sequences = par::map(&configs, generate_sequence)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Self::new(sequences, spans, bins)
    }

    pub fn new(sequences: Vec<Sequence>, spans: RangeInclusive<usize>, bins: usize) -> Result<Self> {
        let lengths: Vec<usize> = sequences.iter().map(Sequence::len).collect();
        let pool = TripletPool::build(&lengths, spans)?;
        Ok(Self { sequences, pool, bins })
    }

    /// A triplet drawn uniformly over buckets, replaced by its twin with
    /// probability one half.
    pub fn sample(&self, rng: &mut Rng) -> Result<TripletSample> {
        let t = self.pool.sample(rng);
        let s = TripletSample::from_sequence(&self.sequences[t.sequence], &t, self.bins)?;
        Ok(if rng.random_bool(0.5) { s.twin() } else { s })
    }
}

/// Noisy ground-truth sources: per-coordinate Gaussian noise with standard
/// deviation `sigma` times the mean point norm, confidence `1 + 1 / (1 + sigma)`.
pub fn oracle_sources(gt: [&Pointmap; 2], sigma: f64, rng: &mut Rng) -> Result<Sources> {
    let z = norm_factor(&gt)?;
    let noise = Normal::new(0.0, sigma * z).map_err(|e| Error::InvalidInput(format!("oracle noise: {e}")))?;
    let conf = 1.0 + 1.0 / (1.0 + sigma);
    let make = |pm: &Pointmap, rng: &mut Rng| -> Result<(Pointmap, ConfidenceMap)> {
        let pts = pm
            .points
            .iter()
            .map(|p| p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
            .collect();
        Ok((
            Pointmap::new(pm.height, pm.width, pm.frame, pts, pm.valid.clone())?,
            ConfidenceMap::new(pm.height, pm.width, vec![conf; pm.len()])?,
        ))
    };
    let (p0, c0) = make(gt[0], rng)?;
    let (p1, c1) = make(gt[1], rng)?;
    Ok(Sources {
        points: [p0, p1],
        conf: [c0, c1],
    })
}

/// One sample's inputs for a training step.
pub struct Batch {
    pub samples: Vec<TripletSample>,
    pub oracle: Vec<Option<Sources>>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Mean loss over the first and last `n` steps.
    pub fn ends(&self, n: usize) -> Option<(f64, f64)> {
        if self.rows.is_empty() {
            return None;
        }
        let n = n.clamp(1, self.rows.len());
        let mean = |rs: &[LogRow]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.rows[..n]), mean(&self.rows[self.rows.len() - n..])))
    }
}

fn trainable(stage: TrainStage) -> impl Fn(&str) -> bool + Copy {
    move |name: &str| match stage {
        TrainStage::A => !name.starts_with(INTERP),
        TrainStage::B => name.starts_with(INTERP),
    }
}

fn token_target(model: &Model<f32>, pm: &Pointmap, scale: f64) -> Result<Target<f32>> {
    let order = model.pixel_order();
    Target::new(pm, Some(&order), scale)
}

/// Loss and gradients (in trainable-parameter order) of one sample.
pub fn sample_gradients(
    model: &Model<f32>,
    stage: TrainStage,
    variant: Variant,
    sample: &TripletSample,
    oracle: Option<&Sources>,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let alpha = model.config.alpha;
    let gt = sample.gt_reference()?;
    let zbar = norm_factor(&[&gt[0], &gt[2]])?;
    if !(zbar > 0.0) {
        return Err(Error::Degenerate("ground-truth scale is zero".into()));
    }
    let tape = Graph::new();
    let is_trainable = trainable(stage);
    let p = Bound::new(&tape, &model.params, is_trainable);
    let frames = [sample.frames[0].as_slice(), sample.frames[1].as_slice()];
    let base = model.base_graph(&p, frames)?;
    let loss = match stage {
        TrainStage::A => {
            let t0 = token_target(model, &gt[0], zbar)?;
            let t1 = token_target(model, &gt[2], zbar)?;
            let z = mean_norm(&tape, &base.points, &[&t0.mask, &t1.mask])?;
            let inv = InvScale::Var(z.log().mul_const(-1.0).exp());
            let l0 = regression(&tape, base.points[0], base.conf[0], inv, &t0, alpha)?;
            let l1 = regression(&tape, base.points[1], base.conf[1], inv, &t1, alpha)?;
            l0.add(l1)?
        }
        TrainStage::B => {
            let reference = sample.reference();
            let predicted = {
                let order = model.pixel_order();
                let read = |v: usize| -> Result<Pointmap> {
                    let val = base.points[v].value();
                    let mut pts = vec![Vec3::zeros(); order.len()];
                    for (r, &i) in order.iter().enumerate() {
                        let d = &val.data()[3 * r..3 * r + 3];
                        pts[i] = Vec3::new(d[0] as f64, d[1] as f64, d[2] as f64);
                    }
                    Pointmap::new(
                        model.config.height,
                        model.config.width,
                        reference,
                        pts,
                        vec![true; order.len()],
                    )
                };
                [read(0)?, read(1)?]
            };
            let z_base = norm_factor(&[&predicted[0], &predicted[1]])?;
            let channels: Vec<(Vec<f32>, Vec<f32>)> = match oracle {
                Some(src) => {
                    let z = src.scale()?;
                    (0..2)
                        .map(|v| source_channels(&src.points[v], &src.conf[v], z))
                        .collect()
                }
                None => (0..2)
                    .map(|v| {
                        let cv = base.conf[v].value();
                        let n = cv.numel();
                        let mut conf = vec![0.0; n];
                        for (r, &i) in model.pixel_order().iter().enumerate() {
                            conf[i] = cv.data()[r] as f64;
                        }
                        let cm = ConfidenceMap::new(model.config.height, model.config.width, conf)?;
                        Ok(source_channels(&predicted[v], &cm, z_base))
                    })
                    .collect::<Result<_>>()?,
            };
            let events = [&sample.voxel_forward, &sample.voxel_backward];
            let dirs: Vec<DirectionInputs<'_, f32>> = (0..2)
                .map(|v| DirectionInputs {
                    points: &channels[v].0,
                    log_conf: &channels[v].1,
                    events: events[v],
                })
                .collect();
            let out = model.interp_graph(&p, &base, [&dirs[0], &dirs[1]], sample.tau(), variant)?;
            let target = token_target(model, &gt[1], zbar)?;
            let inv = InvScale::Const((1.0 / z_base) as f32);
            let l0 = regression(&tape, out[0].0, out[0].1, inv, &target, alpha)?;
            let l1 = regression(&tape, out[1].0, out[1].1, inv, &target, alpha)?;
            l0.add(l1)?
        }
    };
    let value = loss.value().item() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }
    let grads = loss.backward()?;
    let mut out = Vec::new();
    for name in model.params.names() {
        if is_trainable(name) {
            out.push(grads.get_or_zeros(p.get(name)?));
        }
    }
    Ok((value, out))
}

fn draw_batch(data: &Dataset, cfg: &TrainConfig, step: usize) -> Result<Batch> {
    let mut rng = SeedTree::new(cfg.seed).split_str("batch").split(step as u64).rng();
    let mut samples = Vec::with_capacity(cfg.batch);
    let mut oracle = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let s = data.sample(&mut rng)?;
        let src = match cfg.oracle_sigma {
            Some(sigma) if cfg.stage == TrainStage::B => {
                let gt = s.gt_reference()?;
                Some(oracle_sources([&gt[0], &gt[2]], sigma, &mut rng)?)
            }
            _ => None,
        };
        samples.push(s);
        oracle.push(src);
    }
    Ok(Batch { samples, oracle })
}

/// Trains the stage's parameters in place. Stage B adds the interpolation
/// branch if the model has none. A non-finite loss aborts the run after
/// writing the last good parameters to the checkpoint path.
pub fn train(model: &mut Model<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.bins != model.config.bins {
        return Err(Error::InvalidInput(format!(
            "dataset has {} voxel bins, model expects {}",
            data.bins, model.config.bins
        )));
    }
    if cfg.stage == TrainStage::B && !model.has_interp() {
        model.add_interp_branch()?;
    }
    let is_trainable = trainable(cfg.stage);
    let idx: Vec<usize> = (0..model.params.len())
        .filter(|&i| is_trainable(&model.params.names()[i]))
        .collect();
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut log = TrainLog::default();
    let abort = |model: &Model<f32>, step: usize, detail: String| -> Error {
        if let Some(path) = &cfg.checkpoint {
            if let Err(e) = model.save(path) {
                log::error!("could not write checkpoint after divergence: {e}");
            }
        }
        Error::Numerical {
            iteration: step,
            detail,
        }
    };
    for step in 0..cfg.steps {
        let batch = draw_batch(data, cfg, step)?;
        let jobs: Vec<usize> = (0..batch.samples.len()).collect();
        let results = par::map(&jobs, |&b| {
            sample_gradients(
                model,
                cfg.stage,
                cfg.variant,
                &batch.samples[b],
                batch.oracle[b].as_ref(),
            )
        });
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        let mut used = 0usize;
        for r in results {
            match r {
                Ok((l, g)) => {
                    loss += l;
                    used += 1;
                    grads = Some(match grads {
                        None => g,
                        Some(mut acc) => {
                            for (a, gi) in acc.iter_mut().zip(&g) {
                                for (x, y) in a.data_mut().iter_mut().zip(gi.data()) {
                                    *x += *y;
                                }
                            }
                            acc
                        }
                    });
                }
                Err(Error::Degenerate(d)) => log::warn!("step {step}: sample skipped: {d}"),
                Err(e) if e.is_numerical() => return Err(abort(model, step, e.to_string())),
                Err(e) => return Err(e),
            }
        }
        let Some(mut grads) = grads else {
            log::warn!("step {step}: every sample skipped");
            continue;
        };
        let k = 1.0 / used as f32;
        for g in &mut grads {
            for x in g.data_mut() {
                *x *= k;
            }
        }
        loss /= used as f64;
        let mut params: Vec<Tensor<f32>> = idx.iter().map(|&i| model.params.tensors()[i].clone()).collect();
        if let Err(e) = opt.step(&mut params, &grads) {
            return Err(abort(model, step, e.to_string()));
        }
        for (t, &i) in params.into_iter().zip(&idx) {
            model.params.tensors_mut()[i] = t;
        }
        log.rows.push(LogRow { step, loss, lr: cfg.lr });
        log::debug!("step {step} loss {loss:.6}");
        if let Some(path) = &cfg.checkpoint {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                model.save(path)?;
            }
        }
    }
    if let Some(path) = &cfg.checkpoint {
        model.save(path)?;
    }
    Ok(log)
}

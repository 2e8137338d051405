mod common;

use common::oracles::{random_frame, random_grid};

use ctgeo::events::{voxelize, Event, EventStream, EventVoxelGrid};
use ctgeo::geometry::{ConfidenceMap, Frame, Pointmap, Vec3};
use ctgeo::net::layers::Bound;
use ctgeo::net::loss::{interp_loss, regression, InvScale, Target, SMOOTH_EPS};
use ctgeo::net::{
    encode_modality, patch_embed, train, Dataset, DirectionInputs, Model, ModelConfig, Sources, TrainConfig,
    TrainStage, Variant, INTERP,
};
use ctgeo::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        patch: 8,
        dim: 16,
        heads: 2,
        mlp_ratio: 2,
        encoder_depth: 2,
        decoder_depth: 2,
        bins: 3,
        time_freqs: 4,
        ..ModelConfig::default()
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        height: 24,
        width: 32,
        dim: 16,
        heads: 2,
        mlp_ratio: 2,
        decoder_depth: 2,
        ..ModelConfig::default()
    }
}

fn random_pointmap(rng: &mut ChaCha8Rng, h: usize, w: usize, frame: Frame) -> Pointmap {
    let pts = (0..h * w)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..4.0),
            )
        })
        .collect();
    Pointmap::new(h, w, frame, pts, vec![true; h * w]).unwrap()
}

#[test]
fn patch_embed_counts_and_locality() {
    let c = tiny();
    let mut model = Model::<f64>::new_base(c.clone()).unwrap();
    let tape = Graph::new();
    let p = Bound::new(&tape, &model.params, |_| false);
    let zero = vec![0.0; c.pixels()];
    let base = patch_embed(&p, &c, "frame", &zero, 1).unwrap().value();
    assert_eq!(base.shape(), &[c.tokens(), c.dim]);

    // A single nonzero pixel changes exactly the token containing it.
    let mut img = zero.clone();
    img[9 * c.width + 3] = 1.0;
    let hit = patch_embed(&p, &c, "frame", &img, 1).unwrap().value();
    let changed: Vec<usize> = (0..c.tokens())
        .filter(|&t| (0..c.dim).any(|d| hit.data()[t * c.dim + d] != base.data()[t * c.dim + d]))
        .collect();
    assert_eq!(changed, vec![2]);

    // Zero input and zero projection leave the position embedding.
    for name in ["frame.patch.w", "frame.patch.b"] {
        let t = model.params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    let tape = Graph::new();
    let p = Bound::new(&tape, &model.params, |_| false);
    let out = patch_embed(&p, &c, "frame", &zero, 1).unwrap().value();
    assert_eq!(out.data(), model.params.get("frame.pos").unwrap().data());

    assert!(patch_embed(&p, &c, "frame", &zero[1..], 1).is_err());
}

#[test]
fn modality_encoders_are_deterministic_and_hierarchical() {
    let c = tiny();
    let mut model = Model::<f64>::new_base(c.clone()).unwrap();
    model.add_interp_branch().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..3 * c.pixels()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tape = Graph::new();
    let p = Bound::new(&tape, &model.params, |_| false);
    let a = encode_modality(&p, &c, "interp.enc_x", &x, 3).unwrap();
    let b = encode_modality(&p, &c, "interp.enc_x", &x, 3).unwrap();
    assert_eq!(a.len(), c.encoder_depth);
    for (u, v) in a.iter().zip(&b) {
        assert_eq!(u.value().data(), v.value().data());
    }
    assert!(encode_modality(&p, &c, "interp.enc_x", &x, 1).is_err());
}

/// Forward events over `[0, 1/2]` mirrored to `(1 - t, -p)` on the second
/// half: the backward grid must equal the forward grid, so the shared event
/// encoder sees identical inputs.
#[test]
fn palindromic_stream_gives_identical_event_features() {
    let c = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut events = Vec::new();
    for _ in 0..60 {
        let t = rng.random_range(0..64) as f64 / 256.0;
        let x = rng.random_range(0..c.width as u16);
        let y = rng.random_range(0..c.height as u16);
        let polarity = if rng.random_bool(0.5) { 1 } else { -1 };
        events.push(Event { t, x, y, polarity });
        events.push(Event {
            t: 1.0 - t,
            x,
            y,
            polarity: -polarity,
        });
    }
    let stream = EventStream::new(c.height, c.width, 0.0, 1.0, events).unwrap();
    let (fwd, bwd) = stream.split_and_reverse(0.5).unwrap();
    let gf = voxelize(&fwd, c.bins).unwrap();
    let gb = voxelize(&bwd, c.bins).unwrap();
    assert_eq!(gf, gb);
    assert!(gf.total().abs() > 0.0 || gf.data.iter().any(|&v| v != 0.0));

    let mut model = Model::<f32>::new_base(c.clone()).unwrap();
    model.add_interp_branch().unwrap();
    let tape = Graph::new();
    let p = Bound::new(&tape, &model.params, |_| false);
    let ff = encode_modality(&p, &c, "interp.enc_e", &gf.data, c.bins).unwrap();
    let fb = encode_modality(&p, &c, "interp.enc_e", &gb.data, c.bins).unwrap();
    for (u, v) in ff.iter().zip(&fb) {
        assert_eq!(u.value().data(), v.value().data());
    }
}

#[test]
fn zero_init_reproduces_base_output_exactly() {
    let c = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = Model::<f32>::new_base(ModelConfig { seed: 5, ..c.clone() }).unwrap();
    model.add_interp_branch().unwrap();
    for name in model.params.names() {
        if name.starts_with("interp.zero") {
            assert!(model.params.get(name).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }
    for case in 0..4 {
        let f0 = random_frame(&mut rng, c.pixels());
        let f1 = random_frame(&mut rng, c.pixels());
        let g0 = random_grid(&mut rng, &c, case % 2 == 0);
        let g1 = random_grid(&mut rng, &c, case % 2 == 0);
        let tau = rng.random_range(0.05..0.95);
        let (base, out) = model
            .interpolate([&f0, &f1], None, [&g0, &g1], tau, Variant::default(), Frame::Camera(0))
            .unwrap();
        assert_eq!(out.points, base.points, "case {case}");
        assert_eq!(out.conf, base.conf, "case {case}");
        // Passing the base prediction explicitly is the same input.
        let (_, again) = model
            .interpolate(
                [&f0, &f1],
                Some(&base),
                [&g0, &g1],
                tau,
                Variant::default(),
                Frame::Camera(0),
            )
            .unwrap();
        assert_eq!(again.points, base.points);
    }
}

#[test]
fn interpolate_rejects_mismatched_inputs() {
    let c = tiny();
    let mut model = Model::<f32>::new_base(c.clone()).unwrap();
    model.add_interp_branch().unwrap();
    let f = vec![0.5; c.pixels()];
    let g = EventVoxelGrid::zeros(c.bins, c.height, c.width);
    let bad = EventVoxelGrid::zeros(c.bins + 1, c.height, c.width);
    let v = Variant::default();
    let cam = Frame::Camera(0);
    assert!(model.interpolate([&f, &f[1..]], None, [&g, &g], 0.5, v, cam).is_err());
    assert!(model.interpolate([&f, &f], None, [&g, &bad], 0.5, v, cam).is_err());
    assert!(model.interpolate([&f, &f], None, [&g, &g], 1.5, v, cam).is_err());
    let (base, _) = model.interpolate([&f, &f], None, [&g, &g], 0.5, v, cam).unwrap();
    let mut wrong = base.clone();
    wrong.points[1].frame = Frame::Camera(3);
    assert!(model
        .interpolate([&f, &f], Some(&wrong), [&g, &g], 0.5, v, cam)
        .is_err());
}

#[test]
fn confidences_are_at_least_one() {
    let c = tiny();
    let mut model = Model::<f32>::new_base(c.clone()).unwrap();
    model.add_interp_branch().unwrap();
    // Push the confidence logits strongly negative.
    for v in 0..2 {
        let b = model.params.get_mut(&format!("{INTERP}head{v}.b")).unwrap();
        for (i, x) in b.data_mut().iter_mut().enumerate() {
            if i % 4 == 3 {
                *x = -60.0;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f0 = random_frame(&mut rng, c.pixels());
    let f1 = random_frame(&mut rng, c.pixels());
    let g = random_grid(&mut rng, &c, false);
    let (_, out) = model
        .interpolate([&f0, &f1], None, [&g, &g], 0.3, Variant::default(), Frame::Camera(0))
        .unwrap();
    for conf in &out.conf {
        assert!(conf.values.iter().all(|&v| v >= 1.0));
    }
    for pm in &out.points {
        assert!(pm.points.iter().all(|p| p.iter().all(|v| v.is_finite())));
    }
}

#[test]
fn time_embedding_is_continuous_and_distinct() {
    let mut model = Model::<f64>::new_base(tiny()).unwrap();
    model.add_interp_branch().unwrap();
    let e = |t: f64| model.time_embedding(t).unwrap();
    assert_eq!(e(0.3), e(0.3));
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();

    // Lipschitz estimate from a coarse finite-difference sweep.
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let embs: Vec<Vec<f64>> = grid.iter().map(|&t| e(t)).collect();
    let lip = embs.windows(2).map(|w| dist(&w[0], &w[1]) / 0.01).fold(0.0, f64::max);
    for &t in &[0.0, 0.17, 0.5, 0.83, 0.9999] {
        let d = dist(&e(t), &e(t + 1e-4));
        assert!(d <= 2.0 * lip * 1e-4 + 1e-12, "tau {t}: {d} vs lipschitz {lip}");
    }
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            assert!(
                dist(&embs[i], &embs[j]) > 0.0,
                "collision at {} and {}",
                grid[i],
                grid[j]
            );
        }
    }
}

/// Scalar-loop reference of the regression loss over both directions.
fn loss_oracle(
    preds: [(&Pointmap, &ConfidenceMap); 2],
    target: &Pointmap,
    z: f64,
    zbar: f64,
    alpha: f64,
    eps: f64,
) -> f64 {
    let mut total = 0.0;
    for (pm, conf) in preds {
        let (mut sum, mut n) = (0.0, 0);
        for i in 0..target.len() {
            if !target.valid[i] {
                continue;
            }
            let d = pm.points[i] / z - target.points[i] / zbar;
            let r = (d.norm_squared() + eps * eps).sqrt() - eps;
            let c = conf.values[i];
            sum += c * r - alpha * c.ln();
            n += 1;
        }
        total += sum / n as f64;
    }
    total
}

fn pm2(frame: Frame, pts: [[f64; 3]; 4], valid: [bool; 4]) -> Pointmap {
    Pointmap::new(
        2,
        2,
        frame,
        pts.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
        valid.to_vec(),
    )
    .unwrap()
}

#[test]
fn loss_matches_hand_example() {
    let cam = Frame::Camera(0);
    let gt0 = pm2(
        cam,
        [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]],
        [true; 4],
    );
    let gt1 = pm2(
        cam,
        [[0.0, 0.0, 2.0], [1.0, 0.0, 2.0], [0.0, 1.0, 2.0], [1.0, 1.0, 2.0]],
        [true; 4],
    );
    let target = pm2(
        cam,
        [[0.0, 0.0, 1.5], [1.0, 0.0, 1.5], [0.0, 1.0, 1.5], [9.0, 9.0, 9.0]],
        [true, true, true, false],
    );
    let a = pm2(
        cam,
        [[0.1, 0.0, 1.4], [1.0, 0.2, 1.5], [0.0, 1.0, 1.7], [0.0, 0.0, 0.0]],
        [true; 4],
    );
    let b = pm2(
        cam,
        [[0.0, 0.0, 1.5], [1.1, 0.0, 1.5], [0.0, 0.9, 1.6], [5.0, 5.0, 5.0]],
        [true; 4],
    );
    let ones = ConfidenceMap::ones(2, 2);
    let z = 1.7;
    let zbar = (gt0.points.iter().chain(&gt1.points).map(|p| p.norm()).sum::<f64>()) / 8.0;
    let got = interp_loss([(&a, &ones), (&b, &ones)], &target, z, [&gt0, &gt1], 0.2).unwrap();
    let want = loss_oracle([(&a, &ones), (&b, &ones)], &target, z, zbar, 0.2, SMOOTH_EPS);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    // The smoothing stays within eps of the plain Euclidean norm.
    let plain = loss_oracle([(&a, &ones), (&b, &ones)], &target, z, zbar, 0.2, 0.0);
    assert!((got - plain).abs() <= 2.0 * SMOOTH_EPS);
}

#[test]
fn perfect_prediction_gives_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cam = Frame::Camera(2);
    let gt0 = random_pointmap(&mut rng, 4, 5, cam);
    let gt1 = random_pointmap(&mut rng, 4, 5, cam);
    let target = random_pointmap(&mut rng, 4, 5, cam);
    let ones = ConfidenceMap::ones(4, 5);
    let zbar = ctgeo::geometry::norm_factor(&[&gt0, &gt1]).unwrap();
    // Predictions live in a different scale z and match target / zbar * z.
    let z = 2.5;
    let pred = target.scaled(z / zbar);
    let l = interp_loss([(&pred, &ones), (&pred, &ones)], &target, z, [&gt0, &gt1], 0.2).unwrap();
    assert!(l.abs() < 1e-12, "{l}");
}

#[test]
fn loss_rejects_degenerate_and_mismatched_inputs() {
    let cam = Frame::Camera(0);
    let zero = pm2(cam, [[0.0; 3]; 4], [true; 4]);
    let p = pm2(cam, [[1.0, 0.0, 1.0]; 4], [true; 4]);
    let ones = ConfidenceMap::ones(2, 2);
    let e = interp_loss([(&p, &ones), (&p, &ones)], &p, 1.0, [&zero, &zero], 0.2);
    assert!(matches!(e, Err(ctgeo::Error::Degenerate(_))));
    let other = pm2(Frame::Camera(1), [[1.0, 0.0, 1.0]; 4], [true; 4]);
    assert!(interp_loss([(&other, &ones), (&p, &ones)], &p, 1.0, [&p, &p], 0.2).is_err());
    assert!(interp_loss([(&p, &ones), (&p, &ones)], &p, 0.0, [&p, &p], 0.2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_invariant_to_prediction_scale(seed in 0u64..1000, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = Frame::Camera(0);
        let gt0 = random_pointmap(&mut rng, 3, 4, cam);
        let gt1 = random_pointmap(&mut rng, 3, 4, cam);
        let target = random_pointmap(&mut rng, 3, 4, cam);
        let a = random_pointmap(&mut rng, 3, 4, cam);
        let b = random_pointmap(&mut rng, 3, 4, cam);
        let conf = ConfidenceMap::new(3, 4, (0..12).map(|_| rng.random_range(1.0..3.0)).collect()).unwrap();
        let z = rng.random_range(0.5..2.0);
        let l1 = interp_loss([(&a, &conf), (&b, &conf)], &target, z, [&gt0, &gt1], 0.2).unwrap();
        let (sa, sb) = (a.scaled(s), b.scaled(s));
        let l2 = interp_loss([(&sa, &conf), (&sb, &conf)], &target, z * s, [&gt0, &gt1], 0.2).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-9 * l1.abs().max(1.0));
    }
}

/// Stage-B loss of a fixed random batch on an f64 copy of the model.
struct Probe {
    frames: [Vec<f32>; 2],
    channels: [(Vec<f64>, Vec<f64>); 2],
    grids: [EventVoxelGrid; 2],
    target: Target<f64>,
    tau: f64,
}

impl Probe {
    fn new(c: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chan = || {
            let x: Vec<f64> = (0..3 * c.pixels()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l: Vec<f64> = (0..c.pixels()).map(|_| rng.random_range(0.0..1.0)).collect();
            (x, l)
        };
        let channels = [chan(), chan()];
        let target = random_pointmap(&mut rng, c.height, c.width, Frame::Camera(0));
        Self {
            frames: [random_frame(&mut rng, c.pixels()), random_frame(&mut rng, c.pixels())],
            channels,
            grids: [random_grid(&mut rng, c, false), random_grid(&mut rng, c, false)],
            target: Target::new(&target, None, 2.0).unwrap(),
            tau: 0.4,
        }
    }

    fn loss<'g>(&self, model: &Model<f64>, tape: &'g Graph<f64>, p: &Bound<'g, f64>) -> ctgeo::tensor::Var<'g, f64> {
        let base = model.base_graph(p, [&self.frames[0], &self.frames[1]]).unwrap();
        let dirs: Vec<DirectionInputs<'_, f64>> = (0..2)
            .map(|v| DirectionInputs {
                points: &self.channels[v].0,
                log_conf: &self.channels[v].1,
                events: &self.grids[v],
            })
            .collect();
        let out = model
            .interp_graph(p, &base, [&dirs[0], &dirs[1]], self.tau, Variant::default())
            .unwrap();
        let inv = InvScale::Const(0.8);
        let l0 = regression(tape, out[0].0, out[0].1, inv, &self.target, 0.2).unwrap();
        let l1 = regression(tape, out[1].0, out[1].1, inv, &self.target, 0.2).unwrap();
        l0.add(l1).unwrap()
    }

    fn value(&self, model: &Model<f64>) -> f64 {
        let tape = Graph::new();
        let p = Bound::new(&tape, &model.params, |_| false);
        self.loss(model, &tape, &p).value().item()
    }

    fn gradient(&self, model: &Model<f64>, name: &str) -> Tensor<f64> {
        let tape = Graph::new();
        let p = Bound::new(&tape, &model.params, |n| n.starts_with(INTERP));
        let l = self.loss(model, &tape, &p);
        l.backward().unwrap().get_or_zeros(p.get(name).unwrap())
    }
}

fn fd(probe: &Probe, model: &Model<f64>, name: &str, i: usize) -> f64 {
    let h = 1e-5;
    let mut m = model.clone();
    m.params.get_mut(name).unwrap().data_mut()[i] += h;
    let up = probe.value(&m);
    m.params.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
    let down = probe.value(&m);
    (up - down) / (2.0 * h)
}

#[test]
fn zero_conv_receives_gradient_at_init() {
    let c = tiny();
    let mut model = Model::<f64>::new_base(c.clone()).unwrap();
    model.add_interp_branch().unwrap();
    let probe = Probe::new(&c, 1);
    let name = "interp.zero0.1.w";
    let g = probe.gradient(&model, name);
    let nz = g.data().iter().filter(|v| v.abs() > 1e-9).count();
    assert!(nz > g.numel() / 2, "only {nz} nonzero entries");
    for i in [0, 17, 100] {
        let n = fd(&probe, &model, name, i);
        let a = g.data()[i];
        assert!((a - n).abs() <= 1e-3 * a.abs().max(n.abs()) + 1e-8, "{i}: {a} vs {n}");
    }
}

#[test]
fn stage_b_gradients_match_finite_differences() {
    let c = tiny();
    let mut model = Model::<f64>::new_base(c.clone()).unwrap();
    model.add_interp_branch().unwrap();
    // Move the zero-initialized layers off zero so every path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.02..0.02);
        }
    }
    let probe = Probe::new(&c, 2);
    let names: Vec<String> = model
        .params
        .names()
        .iter()
        .filter(|n| n.starts_with(INTERP))
        .cloned()
        .collect();
    let mut checked = 0;
    for k in 0..24 {
        let name = &names[rng.random_range(0..names.len())];
        let g = probe.gradient(&model, name);
        let i = rng.random_range(0..g.numel());
        let (a, n) = (g.data()[i], fd(&probe, &model, name, i));
        assert!(
            (a - n).abs() <= 1e-3 * a.abs().max(n.abs()) + 1e-7,
            "case {k} {name}[{i}]: analytic {a}, numeric {n}"
        );
        checked += 1;
    }
    assert_eq!(checked, 24);
}

fn small_dataset(bins: usize) -> Dataset {
    let seqs = vec![common::scenes::small(1, 10), common::scenes::small(2, 10)];
    Dataset::new(seqs, 2..=4, bins).unwrap()
}

#[test]
fn stage_b_freezes_base_and_zero_steps_keep_identity() {
    let c = small_model();
    let data = small_dataset(c.bins);
    let mut model = Model::<f32>::new_base(c.clone()).unwrap();
    let log = train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 2,
            batch: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(log.rows.len(), 2);
    assert!(!model.has_interp());

    let stage_b = |steps| TrainConfig {
        stage: TrainStage::B,
        steps,
        batch: 2,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut zero = model.clone();
    train(&mut zero, &data, &stage_b(0)).unwrap();
    assert!(zero.has_interp());
    let s = data.sequences[0].clone();
    let t = ctgeo::scene::TripletRef {
        sequence: 0,
        i0: 1,
        mid: 2,
        i1: 4,
    };
    let sample = ctgeo::scene::TripletSample::from_sequence(&s, &t, c.bins).unwrap();
    let frames = [sample.frames[0].as_slice(), sample.frames[1].as_slice()];
    let grids = [&sample.voxel_forward, &sample.voxel_backward];
    let (base, out) = zero
        .interpolate(
            frames,
            None,
            grids,
            sample.tau(),
            Variant::default(),
            sample.reference(),
        )
        .unwrap();
    assert_eq!(out.points, base.points);

    let before = model.params.clone();
    let mut trained = model.clone();
    let log = train(&mut trained, &data, &stage_b(3)).unwrap();
    assert!(log.rows.iter().all(|r| r.loss.is_finite()));
    for (name, t) in before.iter() {
        assert_eq!(trained.params.get(name).unwrap(), t, "{name} changed");
    }
    let moved = trained
        .params
        .iter()
        .filter(|(n, t)| n.starts_with("interp.zero") && t.data().iter().any(|&v| v != 0.0))
        .count();
    assert!(moved > 0);
}

#[test]
fn training_is_deterministic() {
    let c = small_model();
    let data = small_dataset(c.bins);
    let cfg = TrainConfig {
        steps: 2,
        batch: 2,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = Model::<f32>::new_base(c.clone()).unwrap();
        let log = train(&mut m, &data, &cfg).unwrap();
        (m.params, log.rows.iter().map(|r| r.loss).collect::<Vec<_>>())
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    for (name, t) in a.iter() {
        assert_eq!(b.get(name).unwrap(), t);
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.c3rt");
    let mut model = Model::<f32>::new_base(ModelConfig { seed: 9, ..tiny() }).unwrap();
    model.add_interp_branch().unwrap();
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params.names(), model.params.names());
    for (name, t) in model.params.iter() {
        assert_eq!(back.params.get(name).unwrap(), t);
    }
    assert!(Model::load(dir.path().join("missing.c3rt")).is_err());
}

#[test]
fn oracle_sources_are_noisy_ground_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cam = Frame::Camera(0);
    let a = random_pointmap(&mut rng, 8, 8, cam);
    let b = random_pointmap(&mut rng, 8, 8, cam);
    let mut r = ctgeo::rng::SeedTree::new(1).rng();
    let exact: Sources = ctgeo::net::oracle_sources([&a, &b], 0.0, &mut r).unwrap();
    assert_eq!(exact.points[0], a);
    assert!(exact.conf[0].values.iter().all(|&v| v == 2.0));
    let noisy = ctgeo::net::oracle_sources([&a, &b], 0.05, &mut r).unwrap();
    let z = ctgeo::geometry::norm_factor(&[&a, &b]).unwrap();
    let rms = (a
        .points
        .iter()
        .zip(&noisy.points[0].points)
        .map(|(p, q)| (p - q).norm_squared())
        .sum::<f64>()
        / (3 * a.len()) as f64)
        .sqrt();
    assert!((rms / z - 0.05).abs() < 0.015, "{rms} {z}");
    assert!(noisy.conf[1]
        .values
        .iter()
        .all(|&v| (v - (1.0 + 1.0 / 1.05)).abs() < 1e-12));
}

use au_graph::config::RunConfig;
use au_graph::data::{generate, SampleRecord};
use au_graph::model::{
    batch_gradients, load_checkpoint, loss_align, loss_au, loss_joint, save_checkpoint, sample_loss, ModelConfig,
    Network, TrainConfig, Trainer,
};
use au_graph::numerics::gradcheck::{check_with, Options};
use au_graph::numerics::{Tape, Tensor};
use au_graph::params::Bound;
use au_graph::pipeline::{mean_shape, Variant};
use au_graph::prior::{compute_balance_weights, compute_prior, BalanceWeights, PriorMatrix};
use au_graph::Error;

fn smoke_samples(count: usize) -> Vec<SampleRecord> {
    let mut cfg = RunConfig::smoke();
    cfg.synth.sample_count = count;
    generate(&cfg.synth).unwrap()
}

fn prior_of(samples: &[SampleRecord]) -> (PriorMatrix, BalanceWeights) {
    let labels: Vec<Vec<u8>> = samples.iter().map(|s| s.labels.clone()).collect();
    (compute_prior(&labels, 1.0).unwrap(), compute_balance_weights(&labels, 1.0).unwrap())
}

fn tiny_net(cfg: &ModelConfig, samples: &[SampleRecord], seed: u64) -> Network {
    let (prior, _) = prior_of(samples);
    let mut net = Network::new(cfg, Some(&prior), seed).unwrap();
    net.init_landmark_mean(&mean_shape(samples)).unwrap();
    net
}

#[test]
fn tiny_model_joint_loss_passes_gradient_check() {
    let samples = smoke_samples(8);
    let (_, weights) = prior_of(&samples);
    for v in [Variant::Full, Variant::Baseline, Variant::DgCgPg] {
        let mut cfg = ModelConfig::tiny();
        let (dg, og, cg, pg) = v.toggles();
        (cfg.enable_dg, cfg.enable_og, cfg.enable_cg, cfg.enable_pg) = (dg, og, cg, pg);
        let mut net = tiny_net(&cfg, &samples, 3);
        // Move the landmark head off its zero start so every path carries gradient.
        let w = net.store().find("align.out.weight").unwrap();
        let shape = net.store().get(w).shape().to_vec();
        *net.store_mut().get_mut(w) = Tensor::from_fn(&shape, |i| 0.05 * ((i * 7 % 11) as f64 - 5.0)).with_requires_grad(true);
        let inputs: Vec<Tensor> = net.store().params().iter().map(|p| p.tensor.clone()).collect();
        let sample = &samples[1];
        let r = check_with(
            &inputs,
            |t, vars| {
                let bound = Bound::from_vars(vars.to_vec());
                let out = net.forward(t, &bound, sample)?;
                Ok(sample_loss(&net, t, &out, sample, &weights)?.total)
            },
            Options {
                max_coords: Some(24),
                scale_floor: 1e-6,
                ..Options::default()
            },
        )
        .unwrap();
        assert!(r.max_rel_err() < 1e-4, "{}: {:?}", v.name(), r.max_rel_err());
    }
}

#[test]
fn stem_reaches_a_44_pixel_map_from_176() {
    let cfg = ModelConfig {
        enable_cg: false,
        enable_pg: false,
        enable_dg: false,
        ..ModelConfig::default()
    };
    let net = Network::new(&cfg, None, 0).unwrap();
    let tape = Tape::new();
    let bound = net.store().bind_frozen(&tape);
    let image = tape.constant(Tensor::from_fn(&[1, 176, 176], |i| ((i % 13) as f64) / 13.0));
    let o_g = net.stem_forward(&tape, &bound, image).unwrap();
    assert_eq!(tape.shape(o_g), [64, 44, 44]);
}

fn patch_oracle(net: &Network, map: &Tensor, landmarks: &[(f64, f64)]) -> Vec<f64> {
    let cfg = net.config();
    let (c, s) = (cfg.channels, cfg.map_size);
    let r = cfg.patch_radius as i64;
    let w = net.store().get(net.store().find("patch.weight").unwrap());
    let b = net.store().get(net.store().find("patch.bias").unwrap());
    let scale = s as f64 / cfg.image_size as f64;
    let mut out = Vec::new();
    for i in 0..cfg.n {
        let anchor = cfg.anchor(i);
        let k = anchor.len() as f64;
        let cx = (anchor.iter().map(|&l| landmarks[l].0).sum::<f64>() / k * scale).floor() as i64;
        let cy = (anchor.iter().map(|&l| landmarks[l].1).sum::<f64>() / k * scale).floor() as i64;
        let mut pooled = vec![0.0; c];
        let mut count = 0.0;
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if x < 0 || y < 0 || x >= s as i64 || y >= s as i64 {
                    continue;
                }
                count += 1.0;
                for (ch, p) in pooled.iter_mut().enumerate() {
                    *p += map.at(&[ch, y as usize, x as usize]);
                }
            }
        }
        for e in 0..cfg.feat {
            let v: f64 = (0..c).map(|ch| pooled[ch] / count * w.at(&[ch, e])).sum();
            out.push(v + b.data()[e]);
        }
    }
    out
}

#[test]
fn patch_features_match_loop_oracle() {
    let samples = smoke_samples(4);
    for radius in [0, 1, 2] {
        let cfg = ModelConfig {
            patch_radius: radius,
            anchors: vec![vec![0], vec![1, 2], vec![3]],
            ..ModelConfig::tiny()
        };
        let net = tiny_net(&cfg, &samples, 1);
        let s = cfg.map_size;
        let map = Tensor::from_fn(&[cfg.channels, s, s], |i| ((i * 37) % 17) as f64 / 17.0 - 0.4);
        // Corners exercise clipping.
        let mut marks = samples[0].landmarks.clone();
        marks[0] = (0.0, 0.0);
        marks[3] = (15.9, 15.9);
        let tape = Tape::new();
        let bound = net.store().bind_frozen(&tape);
        let v = net.extract_patches(&tape, &bound, tape.constant(map.clone()), &marks).unwrap();
        let got = tape.value(v);
        let want = patch_oracle(&net, &map, &marks);
        assert_eq!(got.shape(), &[cfg.n, cfg.feat]);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "radius {radius}");
        }
    }
}

#[test]
fn constant_map_gives_identical_patches() {
    let samples = smoke_samples(4);
    let cfg = ModelConfig::tiny();
    let net = tiny_net(&cfg, &samples, 2);
    let s = cfg.map_size;
    let map = Tensor::from_fn(&[cfg.channels, s, s], |i| (i / (s * s)) as f64 * 0.25);
    let tape = Tape::new();
    let bound = net.store().bind_frozen(&tape);
    let v = tape.value(net.extract_patches(&tape, &bound, tape.constant(map), &samples[2].landmarks).unwrap());
    for row in 1..cfg.n {
        assert_eq!(v.row(row), v.row(0));
    }
}

#[test]
fn anchor_outside_the_map_is_an_input_error() {
    let samples = smoke_samples(4);
    let net = tiny_net(&ModelConfig::tiny(), &samples, 2);
    let mut marks = samples[0].landmarks.clone();
    marks[0] = (-3.0, 4.0);
    assert!(matches!(net.patch_windows(&marks), Err(Error::Input(_))));
    marks[0] = (16.0, 4.0);
    assert!(matches!(net.patch_windows(&marks), Err(Error::Input(_))));
}

#[test]
fn probabilities_are_open_interval_and_final_is_the_average() {
    let samples = smoke_samples(16);
    for v in Variant::ALL {
        let cfg = v.apply(&RunConfig::smoke()).model;
        let net = tiny_net(&cfg, &samples, 4);
        for s in &samples {
            let p = net.predict(s).unwrap();
            for i in 0..cfg.n {
                for q in [p.p_local[i], p.p_int[i], p.p_final[i]] {
                    assert!(q > 0.0 && q < 1.0);
                }
                assert!((p.p_final[i] - 0.5 * (p.p_local[i] + p.p_int[i])).abs() < 1e-15);
            }
            assert_eq!(p.landmark_pred.len(), cfg.m);
        }
    }
}

// ---- losses --------------------------------------------------------------

#[test]
fn weighted_bce_at_one_half_is_ln_two() {
    let tape = Tape::new();
    let p = tape.constant(Tensor::full(&[4], 0.5));
    let l = loss_au(&tape, p, &[1, 0, 1, 1], &BalanceWeights::uniform(4)).unwrap();
    assert!((tape.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn weighted_bce_matches_direct_sum() {
    let tape = Tape::new();
    let q = [0.9, 0.2, 0.6];
    let labels = [1u8, 1, 0];
    let w = BalanceWeights::from_weights(vec![0.5, 1.5, 1.0]).unwrap();
    let l = loss_au(&tape, tape.constant(Tensor::new(vec![3], q.to_vec()).unwrap()), &labels, &w).unwrap();
    let want = -(0.5 * 0.9f64.ln() + 1.5 * 0.2f64.ln() + 1.0 * 0.4f64.ln()) / 3.0;
    assert!((tape.value(l).item().unwrap() - want).abs() < 1e-15);
    // Saturated predictions stay finite through the clamp.
    let sat = loss_au(&tape, tape.constant(Tensor::new(vec![3], vec![0.0, 1.0, 1.0]).unwrap()), &labels, &w).unwrap();
    assert!(tape.value(sat).item().unwrap().is_finite());
}

#[test]
fn alignment_loss_cases() {
    let tape = Tape::new();
    let pred = tape.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
    let l = loss_align(&tape, pred, &[(2.0, 4.0)], 1.0).unwrap();
    assert_eq!(tape.value(l).item().unwrap(), 0.5);

    let pts = [(1.0, 2.0), (5.0, -1.0)];
    let guess = [1.5, 2.5, 4.0, 0.0];
    let base = {
        let p = tape.constant(Tensor::new(vec![1, 4], guess.to_vec()).unwrap());
        tape.value(loss_align(&tape, p, &pts, 2.0).unwrap()).item().unwrap()
    };
    for s in [0.5, 3.0, 10.0] {
        let p = tape.constant(Tensor::new(vec![1, 4], guess.iter().map(|g| g * s).collect()).unwrap());
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x * s, y * s)).collect();
        let v = tape.value(loss_align(&tape, p, &scaled, 2.0 * s).unwrap()).item().unwrap();
        assert!((v - base).abs() < 1e-12);
    }
    assert!(matches!(loss_align(&tape, pred, &[(2.0, 4.0)], 0.0), Err(Error::Input(_))));
}

#[test]
fn joint_loss_composition() {
    let tape = Tape::new();
    let (a, b, c) = (
        tape.constant(Tensor::scalar(0.7)),
        tape.constant(Tensor::scalar(0.3)),
        tape.constant(Tensor::scalar(2.0)),
    );
    assert_eq!(tape.value(loss_joint(&tape, a, b, c, 0.0).unwrap()).item().unwrap(), 1.0);
    assert_eq!(tape.value(loss_joint(&tape, a, b, c, 0.5).unwrap()).item().unwrap(), 2.0);
}

// ---- structure -------------------------------------------------------------

#[test]
fn ablation_toggles_shape_the_parameter_list() {
    let samples = smoke_samples(8);
    for v in Variant::ALL {
        let cfg = ModelConfig {
            k_layers: 2,
            ..v.apply(&RunConfig::smoke()).model
        };
        let net = tiny_net(&cfg, &samples, 0);
        let names: Vec<&str> = net.store().names().collect();
        let has = |frag: &str| names.iter().any(|n| n.contains(frag));
        let (dg, og, cg, pg) = v.toggles();
        assert_eq!(has(".rel.adjacency"), dg, "{}", v.name());
        assert_eq!(names.iter().filter(|n| n.ends_with(".rel.adjacency")).count(), if dg { 2 } else { 0 });
        assert_eq!(has(".channel."), cg);
        assert_eq!(has(".pixel."), pg);
        assert_eq!(has(".adapt_o."), og);
        assert_eq!(has(".fuse.cp."), cg || pg);
        assert_eq!(has(".fuse.og."), og || cg || pg);
        assert_eq!(has(".fuse.au.b."), og || cg || pg);
        assert!(has("stem0.kernel") && has(".rel.map0") && has("local.weight") && has("integration.weight"));
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let samples = smoke_samples(8);
    let (_, weights) = prior_of(&samples);
    let mut net = tiny_net(&ModelConfig::tiny(), &samples, 5);
    let w = net.store().find("align.out.weight").unwrap();
    let shape = net.store().get(w).shape().to_vec();
    *net.store_mut().get_mut(w) = Tensor::full(&shape, 0.1).with_requires_grad(true);
    let batch: Vec<&SampleRecord> = samples.iter().collect();
    let (_, grads) = batch_gradients(&net, &batch, &weights).unwrap();
    for (g, name) in grads.iter().zip(net.store().names()) {
        assert!(g.iter().any(|&x| x != 0.0), "{name} has no gradient");
    }
}

#[test]
fn layer_adjacencies_diverge_after_a_step() {
    let samples = smoke_samples(8);
    let (_, weights) = prior_of(&samples);
    let cfg = ModelConfig {
        k_layers: 2,
        ..ModelConfig::tiny()
    };
    let net = tiny_net(&cfg, &samples, 6);
    let a = net.adjacency();
    assert_eq!(a[0], a[1]);
    let mut t = Trainer::new(net, TrainConfig::default(), weights).unwrap();
    let batch: Vec<&SampleRecord> = samples.iter().collect();
    t.step_on(&batch, 0.05).unwrap();
    let a = t.net.adjacency();
    assert_ne!(a[0], a[1]);
    for m in &a {
        for i in 0..cfg.n {
            assert_eq!(m.at(&[i, i]), 0.0);
        }
    }
}

// ---- training state ----------------------------------------------------------

fn trainer(samples: &[SampleRecord], epochs: usize) -> Trainer {
    let (_, weights) = prior_of(samples);
    let net = tiny_net(&ModelConfig::tiny(), samples, 7);
    let tc = TrainConfig {
        epochs,
        batch_size: 4,
        lr: 0.02,
        seed: 9,
        ..TrainConfig::default()
    };
    Trainer::new(net, tc, weights).unwrap()
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let samples = smoke_samples(12);
    let mut t = trainer(&samples, 1);
    t.fit(&samples, &samples, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &t).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.net.store(), t.net.store());
    assert_eq!(back.optimizer.velocity, t.optimizer.velocity);
    assert_eq!((back.epoch, back.step), (t.epoch, t.step));
    assert_eq!(back.weights, t.weights);
    assert_eq!(back.net.predict(&samples[0]).unwrap(), t.net.predict(&samples[0]).unwrap());
}

#[test]
fn checkpoint_for_another_architecture_is_rejected() {
    let samples = smoke_samples(8);
    let t = trainer(&samples, 1);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &t).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"enable_pg\": true", "\"enable_pg\": false");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Manifest(_))));
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let samples = smoke_samples(12);
    let mut straight = trainer(&samples, 3);
    straight.fit(&samples, &samples, |_, _| Ok(())).unwrap();

    let mut first = trainer(&samples, 1);
    first.fit(&samples, &samples, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &first).unwrap();
    let mut resumed = load_checkpoint(dir.path()).unwrap();
    assert_eq!(resumed.epoch, 1);
    resumed.config.epochs = 3;
    let logs = resumed.fit(&samples, &samples, |_, _| Ok(())).unwrap();
    assert_eq!(logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(logs[1].lr, 0.01);
    assert_eq!(resumed.net.store(), straight.net.store());
    assert_eq!(resumed.optimizer.velocity, straight.optimizer.velocity);
}

#[test]
fn batch_gradients_do_not_depend_on_thread_count() {
    let samples = smoke_samples(12);
    let (_, weights) = prior_of(&samples);
    let net = tiny_net(&ModelConfig::tiny(), &samples, 8);
    let batch: Vec<&SampleRecord> = samples.iter().collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_gradients(&net, &batch, &weights).unwrap())
    };
    let (l1, g1) = run(1);
    let (l4, g4) = run(4);
    assert_eq!(l1, l4);
    assert_eq!(g1, g4);
}

use mscale::data::{gen_scene, Sample, SceneSpec};
use mscale::model::{build_model, Depth, Head, Inputs, Modality, Mode, Model, ModelSpec, Preset, ScaleSet, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn samples(w: usize, h: usize, n: usize, seed: u64) -> Vec<Sample> {
    let spec = SceneSpec::desk(w, h, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gen_scene(&spec, &mut rng).unwrap()).collect()
}

fn model(spec: &ModelSpec, seed: u64) -> Model {
    build_model(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn size(m: &Model, layer: &str, op: &str) -> (usize, usize) {
    let r = m.plan().find(layer, op).unwrap_or_else(|| panic!("no {layer} {op} row"));
    (r.width, r.height)
}

#[test]
fn canonical_plan_matches_reference_sizes() {
    let spec = ModelSpec::canonical(Task::Depth);
    let cfg = mscale::model::ModelConfig::resolve(&spec).unwrap();
    let plan = cfg.layout().unwrap();
    let at = |l: &str, op: &str| {
        let r = plan.find(l, op).unwrap();
        (r.width, r.height)
    };
    assert_eq!(at("1.1", "pool"), (37, 27));
    assert_eq!(at("1.2", "pool"), (18, 13));
    assert_eq!(at("1.3", "conv"), (18, 13));
    assert_eq!(at("1.4", "conv"), (18, 13));
    assert_eq!(at("1.5", "pool"), (8, 6));
    assert_eq!(at("1.7", "full"), (19, 14));
    assert_eq!(at("1.7", "crop"), (74, 55));
    assert_eq!(at("2.5", "conv"), (74, 55));
    assert_eq!(at("3.4", "conv"), (147, 109));
    assert_eq!(plan.find("1.7", "full").unwrap().channels, 64);
    assert_eq!(plan.find("2.1", "crop").unwrap().channels, 96);
    let w16 = plan.params.iter().find(|p| p.name == "1.6.weight").unwrap();
    assert_eq!(w16.dims, vec![4096, 256 * 8 * 6]);
}

#[test]
fn canonical_forward_at_reduced_width() {
    let mut spec = ModelSpec::canonical(Task::Normals);
    spec.width_multiplier = 1.0 / 16.0;
    let m = model(&spec, 1);
    let s = samples(320, 240, 1, 2);
    let out = m.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.dims(), &[1, 3, 109, 147]);
}

#[test]
fn desk_plan_preserves_ratios() {
    let m = model(&ModelSpec::desk(Task::Depth), 0);
    assert_eq!(size(&m, "2.5", "conv"), (16, 12));
    assert_eq!(size(&m, "3.4", "conv"), (32, 24));
    assert_eq!(size(&m, "1.7", "full"), (4, 3));
    for (w, h) in [(96, 72), (128, 96), (80, 64)] {
        let mut spec = ModelSpec::desk(Task::Depth);
        spec.input = (w, h);
        let m = model(&spec, 0);
        assert_eq!(size(&m, "2.5", "conv"), (w / 4, h / 4));
        assert_eq!(size(&m, "3.4", "conv"), (w / 2, h / 2));
    }
}

#[test]
fn param_count_matches_hand_count() {
    let m = model(&ModelSpec::desk(Task::Depth), 0);
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    // Desk plane after 1.5 is 2×1; grid 4×3 of 8 features.
    let coarse = conv(3, 12, 11) + conv(12, 32, 5) + conv(32, 48, 3) + conv(48, 48, 3) + conv(48, 32, 3);
    let full = (32 * 2 + 1) * 512 + (512 + 1) * 8 * 12;
    let s2 = conv(3, 12, 9) + conv(20, 8, 5) + 2 * conv(8, 8, 5) + conv(8, 1, 5);
    let s3 = conv(3, 12, 9) + conv(13, 8, 5) + conv(8, 8, 5) + conv(8, 1, 5);
    assert_eq!(m.param_count(), coarse + full + s2 + s3);
}

#[test]
fn every_param_has_a_multiplier() {
    let m = model(&ModelSpec::desk(Task::Depth), 0);
    for p in m.params() {
        let want = match p.layer.as_str() {
            "1.6" | "1.7" => 0.1,
            "2.2" | "2.3" | "2.4" | "3.2" | "3.3" => 10.0,
            _ => 1.0,
        };
        assert_eq!(p.lr_mult, want, "{}", p.name);
    }
    let sem = model(&ModelSpec::desk(Task::Semantic(5)), 0);
    assert_eq!(sem.param("1.6.weight").unwrap().lr_mult, 1.0);
    assert_eq!(sem.param("1.7.bias").unwrap().lr_mult, 0.01);
}

#[test]
fn init_is_bounded_and_biases_zero() {
    let m = model(&ModelSpec::desk(Task::Depth), 3);
    for p in m.params() {
        if p.name.ends_with(".bias") {
            assert!(p.tensor.data().iter().all(|&v| v == 0.0));
        } else {
            let fan_in: usize = p.tensor.dims()[1..].iter().product();
            let a = (3.0 / fan_in as f64).sqrt();
            assert!(p.tensor.data().iter().all(|v| v.abs() < a), "{}", p.name);
        }
    }
}

#[test]
fn head_outputs_are_well_formed() {
    let s = samples(64, 48, 2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = model(&ModelSpec::desk(Task::Depth), 1).forward_full(&s, Mode::Eval, &mut rng).unwrap();
    assert_eq!(d.dims(), &[2, 1, 24, 32]);
    assert!(d.is_finite());

    let n = model(&ModelSpec::desk(Task::Normals), 1).forward_full(&s, Mode::Eval, &mut rng).unwrap();
    for b in 0..2 {
        for y in 0..24 {
            for x in 0..32 {
                let len: f64 = (0..3).map(|c| n.at(b, c, y, x).powi(2)).sum::<f64>().sqrt();
                assert!((len - 1.0).abs() < 1e-9);
            }
        }
    }

    let p = model(&ModelSpec::desk(Task::Semantic(5)), 1).forward_full(&s, Mode::Eval, &mut rng).unwrap();
    assert_eq!(p.dims(), &[2, 5, 24, 32]);
    for y in 0..24 {
        let sum: f64 = (0..5).map(|c| p.at(0, c, y, 3)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    let dn = model(&ModelSpec::desk(Task::DepthNormals), 1).forward_full(&s, Mode::Eval, &mut rng).unwrap();
    assert_eq!(dn.dims()[1], 4);
}

#[test]
fn fused_modalities_use_per_modality_entries() {
    let spec = ModelSpec::desk(Task::Semantic(13)).with_modalities(vec![Modality::Rgb, Modality::Depth, Modality::Normals]);
    let m = model(&spec, 0);
    assert_eq!(m.param("2.1.rgb.weight").unwrap().tensor.dims(), &[4, 3, 9, 9]);
    assert_eq!(m.param("2.1.depth.weight").unwrap().tensor.dims(), &[4, 1, 9, 9]);
    assert_eq!(m.param("2.1.normals.weight").unwrap().tensor.dims(), &[4, 3, 9, 9]);
    assert_eq!(m.plan().find("2.1", "crop").unwrap().channels, 12);
    let s = samples(64, 48, 1, 1);
    let out = m.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.dims(), &[1, 13, 24, 32]);

    let rgb_only = Inputs::from_samples(&s, &[Modality::Rgb]).unwrap();
    let err = m.forward_heads(&rgb_only, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), Depth::Full).unwrap_err();
    assert!(matches!(err, mscale::Error::Input(_)));
}

#[test]
fn scale_subsets_are_structural() {
    let s = samples(64, 48, 1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let only1 = model(&ModelSpec::desk(Task::Depth).with_scales(ScaleSet::new(&[1]).unwrap()), 0);
    assert!(only1.params().iter().all(|p| p.scale == 1));
    assert_eq!(only1.param("1.7.weight").unwrap().tensor.dims()[0], 12);
    assert_eq!(only1.forward_full(&s, Mode::Eval, &mut rng).unwrap().dims(), &[1, 1, 12, 16]);

    let only2 = model(&ModelSpec::desk(Task::Depth).with_scales(ScaleSet::new(&[2]).unwrap()), 0);
    assert!(only2.params().iter().all(|p| p.scale == 2));
    assert_eq!(only2.forward_full(&s, Mode::Eval, &mut rng).unwrap().dims(), &[1, 1, 12, 16]);

    let two = model(&ModelSpec::desk(Task::Depth).with_scales(ScaleSet::new(&[1, 2]).unwrap()), 0);
    assert!(two.params().iter().all(|p| p.scale <= 2));
    assert!(ScaleSet::new(&[1, 3]).is_err());
    assert!(ScaleSet::new(&[3]).is_err());
}

#[test]
fn eval_is_deterministic_and_train_uses_dropout() {
    let m = model(&ModelSpec::desk(Task::Depth), 2);
    let s = samples(64, 48, 1, 9);
    let a = m.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = m.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    let t = m.forward_full(&s, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_ne!(a, t);
}

fn scale2_outputs(m: &Model, s: &[Sample]) -> Vec<mscale::Tensor> {
    let inputs = Inputs::from_samples(s, &m.spec().modalities).unwrap();
    m.forward_heads(&inputs, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), Depth::Scale2)
        .unwrap()
        .into_iter()
        .map(|(_, t)| t)
        .collect()
}

#[test]
fn full_window_crop_matches_full_pass() {
    let m = model(&ModelSpec::desk(Task::Normals), 6);
    let s = samples(64, 48, 2, 3);
    let full = m.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let s2 = scale2_outputs(&m, &s);
    let crop = m.forward_scale3_crop(&s, &s2, (0, 0), (32, 24)).unwrap();
    let diff = full.data().iter().zip(crop[0].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn crop_interior_matches_full_pass() {
    let m = model(&ModelSpec::desk(Task::Depth), 7);
    let s = samples(64, 48, 1, 8);
    let full = m.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let s2 = scale2_outputs(&m, &s);
    let margin = m.crop_margin();
    assert_eq!(margin, 6);
    let (ox, oy, cw, ch) = (3, 2, 24, 20);
    let crop = &m.forward_scale3_crop(&s, &s2, (ox, oy), (cw, ch)).unwrap()[0];
    for y in margin..ch - margin {
        for x in margin..cw - margin {
            let d = (crop.at(0, 0, y, x) - full.at(0, 0, oy + y, ox + x)).abs();
            assert!(d < 1e-9, "({x},{y}) differs by {d}");
        }
    }
    assert!(m.forward_scale3_crop(&s, &s2, (10, 0), (24, 20)).is_err());
}

#[test]
fn shared_trunk_equals_two_tied_models() {
    let joint = model(&ModelSpec::desk(Task::DepthNormals), 11);
    let s = samples(64, 48, 1, 12);
    let (d, n) = joint.shared_trunk_forward(&s).unwrap();
    for (task, prefix, got) in [(Task::Depth, "depth:", d), (Task::Normals, "normals:", n)] {
        let mut single = model(&ModelSpec::desk(task), 0);
        for p in single.params_mut() {
            let src = if p.scale == 1 { p.name.clone() } else { format!("{prefix}{}", p.name) };
            p.tensor = joint.param(&src).unwrap().tensor.clone();
        }
        let want = single.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let diff = want.data().iter().zip(got.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{task}: {diff}");
    }
    assert!(model(&ModelSpec::desk(Task::Depth), 0).shared_trunk_forward(&s).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let mut spec = ModelSpec::desk(Task::Semantic(4));
    spec.lr_overrides.insert("2.3".into(), 3.0);
    let m = model(&spec, 4);
    let bytes = m.to_checkpoint().to_bytes().unwrap();
    let back = Model::from_checkpoint(&mscale::data::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.spec(), m.spec());
    assert_eq!(back.params(), m.params());
    assert_eq!(back.digest(&[1, 2, 3]), m.digest(&[1, 2, 3]));
    assert_eq!(back.param("2.3.weight").unwrap().lr_mult, 3.0);
    assert_ne!(m.digest(&[1]), m.digest(&[2]));
}

#[test]
fn tiny_and_vgg_presets_resolve() {
    let t = model(&ModelSpec::tiny(Task::Depth), 0);
    assert_eq!(size(&t, "2.5", "conv"), (2, 1));
    assert_eq!(size(&t, "3.4", "conv"), (4, 2));
    let s = samples(8, 6, 1, 0);
    assert!(t.forward_full(&s, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_finite());

    let spec = ModelSpec { preset: Preset::Vgg, ..ModelSpec::canonical(Task::Depth) };
    let cfg = mscale::model::ModelConfig::resolve(&spec).unwrap();
    let plan = cfg.layout().unwrap();
    let r = plan.find("1.5.c", "pool").unwrap();
    assert_eq!((r.width, r.height), (10, 7));
    assert!(matches!(Head::Semantic(3).channels(), 3));
}

#[test]
fn bad_configs_name_the_layer() {
    let mut spec = ModelSpec::canonical(Task::Depth);
    spec.input = (300, 240);
    assert!(matches!(mscale::model::ModelConfig::resolve(&spec), Err(mscale::Error::Config { .. })));
    let spec = ModelSpec::desk(Task::DepthNormals).with_scales(ScaleSet::new(&[1]).unwrap());
    assert!(mscale::model::ModelConfig::resolve(&spec).is_err());
    let mut spec = ModelSpec::desk(Task::Depth);
    spec.width_multiplier = 0.0;
    match mscale::model::ModelConfig::resolve(&spec) {
        Err(mscale::Error::Config { layer, .. }) => assert_eq!(layer, "model"),
        other => panic!("{other:?}"),
    }
}

use std::collections::HashSet;

use mscale::augment::{apply_augment, sample_params, transform_normal, AugmentConfig, AugmentParams};
use mscale::data::dataset::generate_split;
use mscale::data::SceneSpec;
use mscale::maps::norm3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sampled_transforms_keep_invariants() {
    let samples = generate_split(&SceneSpec::desk(32, 24, 5), (0, 10)).unwrap();
    let rng = &mut ChaCha8Rng::seed_from_u64(51);
    let cfg = AugmentConfig::default();
    for draw in 0..1000 {
        let s = &samples[draw % samples.len()];
        let p = sample_params(rng, &cfg, s.width(), s.height()).unwrap();
        let out = apply_augment(s, &p).unwrap();
        let source: HashSet<u8> = s.labels.labels.as_slice().iter().copied().collect();
        for y in 0..out.height() {
            for x in 0..out.width() {
                assert!(source.contains(out.labels.labels.get(x, y)), "invented label");
                if *out.mask().get(x, y) {
                    assert!((norm3(*out.normals.normals.get(x, y)) - 1.0).abs() < 1e-6);
                    let d = *out.depth.depth.get(x, y);
                    assert!(d > 0.0 && d.is_finite());
                }
            }
        }
        assert_eq!(out.depth.mask, out.normals.mask);
    }
}

#[test]
fn double_flip_restores_every_channel() {
    for s in generate_split(&SceneSpec::desk(31, 20, 5), (3, 8)).unwrap() {
        let twice = apply_augment(&apply_augment(&s, &AugmentParams::flip_only()).unwrap(), &AugmentParams::flip_only()).unwrap();
        assert_eq!(twice, s);
    }
}

#[test]
fn valid_output_comes_from_valid_source() {
    let s = &generate_split(&SceneSpec::desk(32, 24, 5), (9, 10)).unwrap()[0];
    let zoom = apply_augment(s, &AugmentParams { scale: 1.5, ..AugmentParams::identity() }).unwrap();
    let (cx, cy) = (15.5, 11.5);
    for y in 0..24 {
        for x in 0..32 {
            if *zoom.mask().get(x, y) {
                let sx = (cx + (x as f64 - cx) / 1.5).round() as usize;
                let sy = (cy + (y as f64 - cy) / 1.5).round() as usize;
                assert!(*s.mask().get(sx, sy));
            }
        }
    }
}

proptest! {
    #[test]
    fn normal_rule_keeps_unit_length(
        n in prop::array::uniform3(-1.0f64..1.0),
        scale in 0.5f64..3.0,
        rotation in -0.5f64..0.5,
        flip in any::<bool>(),
    ) {
        prop_assume!(norm3(n) > 0.1);
        let l = norm3(n);
        let n = [n[0] / l, n[1] / l, n[2] / l];
        let p = AugmentParams { scale, rotation, flip, ..AugmentParams::identity() };
        prop_assert!((norm3(transform_normal(n, &p)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_respects_ranges(seed in any::<u64>()) {
        let cfg = AugmentConfig::default();
        let p = sample_params(&mut ChaCha8Rng::seed_from_u64(seed), &cfg, 64, 48).unwrap();
        prop_assert!((cfg.scale.0..=cfg.scale.1).contains(&p.scale));
        prop_assert!(p.rotation.abs() <= 5f64.to_radians() + 1e-12);
        prop_assert!(p.translation.0.abs() <= 6.4 + 1e-9 && p.translation.1.abs() <= 4.8 + 1e-9);
        prop_assert!(p.gains.iter().all(|g| (0.8..=1.2).contains(g)));
        prop_assert!((0.5..=2.0).contains(&p.contrast));
    }
}

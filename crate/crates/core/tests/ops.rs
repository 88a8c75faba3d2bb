mod common;

use common::random_tensor;
use mscale::autograd::Tape;
use mscale::ops::{concat_backward, concat_channels, maxpool, upsample_bilinear, ConvGeom};
use mscale::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(x: &Tensor, w: &Tensor, b: &Tensor, geom: ConvGeom) -> Tensor {
    let mut tape = Tape::new();
    let (x, w, b) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.conv2d(x, w, b, geom, "test").unwrap();
    tape.value(y).clone()
}

/// Direct cross-correlation with zero padding.
fn conv_loop(x: &Tensor, w: &Tensor, b: &Tensor, geom: ConvGeom) -> Vec<f64> {
    let (n, c, h, wd) = x.nchw();
    let (o, kh, kw) = (w.dims()[0], geom.kernel_h, geom.kernel_w);
    let ho = (h + 2 * geom.pad - kh) / geom.stride + 1;
    let wo = (wd + 2 * geom.pad - kw) / geom.stride + 1;
    let mut out = Vec::new();
    for bn in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(bn, ic, iy as usize, ix as usize) * w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_direct_loops() {
    let rng = &mut ChaCha8Rng::seed_from_u64(61);
    for (k, s, p) in [(3, 1, 1), (5, 2, 2), (1, 1, 0), (9, 2, 0), (3, 3, 4)] {
        let x = random_tensor(rng, &[2, 3, 11, 9], -1.0, 1.0);
        let w = random_tensor(rng, &[4, 3, k, k], -1.0, 1.0);
        let b = random_tensor(rng, &[4], -1.0, 1.0);
        let geom = ConvGeom::square(k, s, p);
        let got = conv(&x, &w, &b, geom);
        for (a, e) in got.data().iter().zip(conv_loop(&x, &w, &b, geom)) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn upsample_reproduces_linear_ramps_inside() {
    // A ramp sampled at pixel centers stays a ramp under bilinear upsampling.
    let x = Tensor::from_vec(&[1, 1, 3, 4], (0..12).map(|i| f64::from(i % 4) + 10.0 * f64::from(i / 4)).collect()).unwrap();
    let y = upsample_bilinear(&x, 2).unwrap();
    assert_eq!(y.dims(), &[1, 1, 6, 8]);
    let v = |r: usize, c: usize| y.at(0, 0, r, c);
    for r in 1..5 {
        for c in 1..6 {
            assert!((v(r, c + 1) - v(r, c) - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn maxpool_ties_take_first_element() {
    let x = Tensor::filled(&[1, 1, 4, 4], 1.0);
    let p = maxpool(&x, 2, 2).unwrap();
    assert_eq!(p.argmax, vec![0, 2, 8, 10]);
}

#[test]
fn ops_are_deterministic() {
    let rng = &mut ChaCha8Rng::seed_from_u64(62);
    let x = random_tensor(rng, &[2, 3, 8, 8], -1.0, 1.0);
    let w = random_tensor(rng, &[5, 3, 3, 3], -1.0, 1.0);
    let b = random_tensor(rng, &[5], -1.0, 1.0);
    let run = || {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.variable(x.clone()), tape.variable(w.clone()), tape.variable(b.clone()));
        let c = tape.conv2d(xv, wv, bv, ConvGeom::square(3, 1, 1), "c").unwrap();
        let r = tape.relu(c);
        let d = tape.dropout(r, 0.4, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
        let p = tape.maxpool(d, 2, 2).unwrap();
        let u = tape.upsample(p, 2).unwrap();
        let seed = vec![1.0; tape.value(u).len()];
        tape.backward(u, &seed).unwrap();
        (tape.value(u).data().to_vec(), tape.grad(wv).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn conv_and_pool_sizes_follow_the_formula(h in 1usize..=16, k in 1usize..=16, s in 1usize..=16, p in 0usize..=16) {
        let x = Tensor::zeros(&[1, 1, h, 2]);
        let w = Tensor::zeros(&[1, 1, k, 1]);
        let b = Tensor::zeros(&[1]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w), tape.constant(b));
        let geom = ConvGeom { kernel_h: k, kernel_w: 1, stride: s, pad: p };
        let out = tape.conv2d(xv, wv, bv, geom, "sweep");
        if h + 2 * p >= k {
            prop_assert_eq!(tape.value(out.unwrap()).dims()[2], (h + 2 * p - k) / s + 1);
        } else {
            prop_assert!(out.is_err());
        }
        let pooled = maxpool(&Tensor::zeros(&[1, 1, h, k]), k, s);
        if h >= k {
            prop_assert_eq!(pooled.unwrap().output.dims()[2], (h - k) / s + 1);
        } else {
            prop_assert!(pooled.is_err());
        }
    }

    #[test]
    fn concat_split_is_lossless(seed in any::<u64>(), c1 in 1usize..4, c2 in 1usize..4, c3 in 1usize..4) {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<Tensor> = [c1, c2, c3].iter().map(|&c| random_tensor(rng, &[2, c, 3, 2], -1.0, 1.0)).collect();
        let joined = concat_channels(&parts.iter().collect::<Vec<_>>()).unwrap();
        let grads = concat_backward(&[c1, c2, c3], 2, 6, joined.data());
        for (g, p) in grads.iter().zip(&parts) {
            prop_assert_eq!(g.as_slice(), p.data());
        }
    }
}

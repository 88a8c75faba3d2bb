//! Training-time geometric and photometric augmentation.
//!
//! The geometric transform maps a source pixel `p` to
//! `c + t + s·R(θ)·F·(p − c)`, where `c` is the image center in pixel-center
//! coordinates, `F` an optional horizontal mirror and `R(θ)` an in-plane
//! rotation. Zooming by `s` is treated as moving the camera closer, so
//! depths are divided by `s` and normals get `n_z · s` before
//! renormalization. Intrinsics are left unchanged.

use std::f64::consts::PI;

use rand::Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::maps::{normalize3, DepthMap, Grid, LabelMap, NormalMap, ValidMask};

/// Ranges sampled by [`sample_params`]; each is `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub scale: (f64, f64),
    pub rotation_deg: (f64, f64),
    /// Largest translation as a fraction of width/height.
    pub max_translation: f64,
    pub gain: (f64, f64),
    pub contrast: (f64, f64),
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale: (1.0, 1.5),
            rotation_deg: (-5.0, 5.0),
            max_translation: 0.1,
            gain: (0.8, 1.2),
            contrast: (0.5, 2.0),
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            scale: (1.0, 1.0),
            rotation_deg: (0.0, 0.0),
            max_translation: 0.0,
            gain: (1.0, 1.0),
            contrast: (1.0, 1.0),
            flip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        let ok = ordered(self.scale)
            && self.scale.0 > 0.0
            && ordered(self.rotation_deg)
            && ordered(self.gain)
            && self.gain.0 >= 0.0
            && ordered(self.contrast)
            && self.contrast.0 >= 0.0
            && (0.0..=1.0).contains(&self.max_translation)
            && (0.0..=1.0).contains(&self.flip_prob);
        if !ok {
            return Err(Error::Input(format!("invalid augmentation ranges: {self:?}")));
        }
        Ok(())
    }
}

/// One sampled transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    /// Radians, positive turns `+x` towards `+y` (clockwise on screen).
    pub rotation: f64,
    /// Pixels.
    pub translation: (f64, f64),
    pub flip: bool,
    pub gains: [f64; 3],
    pub contrast: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            scale: 1.0,
            rotation: 0.0,
            translation: (0.0, 0.0),
            flip: false,
            gains: [1.0; 3],
            contrast: 1.0,
        }
    }

    pub fn flip_only() -> Self {
        AugmentParams { flip: true, ..Self::identity() }
    }

    fn is_geometric_identity(&self) -> bool {
        self.scale == 1.0 && self.rotation == 0.0 && self.translation == (0.0, 0.0)
    }

    fn is_photometric_identity(&self) -> bool {
        self.gains == [1.0; 3] && self.contrast == 1.0
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    // Always consume one draw so the stream does not depend on the ranges.
    let u: f64 = rng.gen();
    if r.0 == r.1 {
        r.0
    } else {
        r.0 + u * (r.1 - r.0)
    }
}

/// Independent draws per field for an image of `width × height` pixels.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentConfig, width: usize, height: usize) -> Result<AugmentParams> {
    cfg.validate()?;
    let scale = draw(rng, cfg.scale);
    let rotation = draw(rng, cfg.rotation_deg) * PI / 180.0;
    let tx = draw(rng, (-cfg.max_translation, cfg.max_translation)) * width as f64;
    let ty = draw(rng, (-cfg.max_translation, cfg.max_translation)) * height as f64;
    let flip = rng.gen::<f64>() < cfg.flip_prob;
    let gains = [draw(rng, cfg.gain), draw(rng, cfg.gain), draw(rng, cfg.gain)];
    let contrast = draw(rng, cfg.contrast);
    Ok(AugmentParams { scale, rotation, translation: (tx, ty), flip, gains, contrast })
}

/// Normal-vector part of the transform: mirror, rotate in plane, scale `z`.
pub fn transform_normal(n: [f64; 3], p: &AugmentParams) -> [f64; 3] {
    let nx = if p.flip { -n[0] } else { n[0] };
    let (s, c) = p.rotation.sin_cos();
    let v = [c * nx - s * n[1], s * nx + c * n[1], n[2] * p.scale];
    normalize3(v).unwrap_or(n)
}

fn photometric(rgb: &Grid<[f64; 3]>, p: &AugmentParams) -> Grid<[f64; 3]> {
    if p.is_photometric_identity() {
        return rgb.clone();
    }
    let gained = rgb.map(|v| [v[0] * p.gains[0], v[1] * p.gains[1], v[2] * p.gains[2]]);
    let n = (gained.len() * 3).max(1) as f64;
    let mean = gained.as_slice().iter().flatten().sum::<f64>() / n;
    gained.map(|v| v.map(|x| (mean + p.contrast * (x - mean)).clamp(0.0, 1.0)))
}

fn mirror<T: Clone>(g: &Grid<T>) -> Grid<T> {
    let w = g.width();
    Grid::from_fn(w, g.height(), |x, y| g.get(w - 1 - x, y).clone())
}

/// Applies `p` to every channel of `sample`.
///
/// RGB is resampled bilinearly (edge-clamped), depth bilinearly where all
/// four taps are valid and nearest-neighbor otherwise, labels, mask and
/// normals nearest-neighbor. Output pixels whose nearest source pixel falls
/// outside the image, or is invalid, are invalid. Identity parameters return
/// the sample unchanged and pure mirrors skip resampling.
pub fn apply_augment(sample: &Sample, p: &AugmentParams) -> Result<Sample> {
    if !(p.scale > 0.0 && p.scale.is_finite()) {
        return Err(Error::Input(format!("augmentation scale must be positive, got {}", p.scale)));
    }
    let rgb_in = photometric(&sample.rgb, p);
    if p.is_geometric_identity() {
        if !p.flip {
            return Ok(Sample { rgb: rgb_in, ..sample.clone() });
        }
        let mask = mirror(sample.mask());
        let normals = mirror(&sample.normals.normals).map(|&n| transform_normal(n, p));
        return Sample::new(
            mirror(&rgb_in),
            DepthMap::new(mirror(&sample.depth.depth), mask.clone())?,
            NormalMap { normals, mask: mask.clone() },
            LabelMap { labels: mirror(&sample.labels.labels), mask },
            sample.intrinsics,
        );
    }
    let (w, h) = (sample.width(), sample.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sn, cs) = p.rotation.sin_cos();
    let src_of = |x: usize, y: usize| {
        let qx = x as f64 - cx - p.translation.0;
        let qy = y as f64 - cy - p.translation.1;
        // R(−θ), then 1/s, then mirror
        let rx = (cs * qx + sn * qy) / p.scale;
        let ry = (-sn * qx + cs * qy) / p.scale;
        (cx + if p.flip { -rx } else { rx }, cy + ry)
    };
    let src_mask = sample.mask();
    let mut rgb = Grid::filled(w, h, [0.0; 3]);
    let mut depth = Grid::filled(w, h, 1.0);
    let mut normals = Grid::filled(w, h, [0.0, 0.0, -1.0]);
    let mut labels = Grid::filled(w, h, 0u8);
    let mut mask: ValidMask = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src_of(x, y);
            rgb.set(x, y, bilinear_rgb(&rgb_in, sx, sy));
            let nx = sx.round().clamp(0.0, (w - 1) as f64) as usize;
            let ny = sy.round().clamp(0.0, (h - 1) as f64) as usize;
            labels.set(x, y, *sample.labels.labels.get(nx, ny));
            let inside = sx.round() >= 0.0 && sy.round() >= 0.0 && sx.round() <= (w - 1) as f64 && sy.round() <= (h - 1) as f64;
            if !(inside && *src_mask.get(nx, ny)) {
                continue;
            }
            let d = bilinear_valid(&sample.depth.depth, src_mask, sx, sy).unwrap_or(*sample.depth.depth.get(nx, ny));
            depth.set(x, y, d / p.scale);
            normals.set(x, y, transform_normal(*sample.normals.normals.get(nx, ny), p));
            mask.set(x, y, true);
        }
    }
    Sample::new(
        rgb,
        DepthMap::new(depth, mask.clone())?,
        NormalMap { normals, mask: mask.clone() },
        LabelMap { labels, mask },
        sample.intrinsics,
    )
}

fn taps(v: f64, n: usize) -> (usize, usize, f64) {
    let v = v.clamp(0.0, (n - 1) as f64);
    let i0 = v.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, v - i0 as f64)
}

fn bilinear_rgb(g: &Grid<[f64; 3]>, x: f64, y: f64) -> [f64; 3] {
    let (x0, x1, fx) = taps(x, g.width());
    let (y0, y1, fy) = taps(y, g.height());
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = g.get(x0, y0)[c] * (1.0 - fx) + g.get(x1, y0)[c] * fx;
        let bot = g.get(x0, y1)[c] * (1.0 - fx) + g.get(x1, y1)[c] * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Bilinear value when the point is inside the grid and all taps are valid.
fn bilinear_valid(g: &Grid<f64>, mask: &ValidMask, x: f64, y: f64) -> Option<f64> {
    if x < 0.0 || y < 0.0 || x > (g.width() - 1) as f64 || y > (g.height() - 1) as f64 {
        return None;
    }
    let (x0, x1, fx) = taps(x, g.width());
    let (y0, y1, fy) = taps(y, g.height());
    if ![(x0, y0), (x1, y0), (x0, y1), (x1, y1)].iter().all(|&(a, b)| *mask.get(a, b)) {
        return None;
    }
    let top = g.get(x0, y0) * (1.0 - fx) + g.get(x1, y0) * fx;
    let bot = g.get(x0, y1) * (1.0 - fx) + g.get(x1, y1) * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{gen_scene, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        gen_scene(&SceneSpec::desk(32, 24, 4), &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn identity_config_gives_identity_params() {
        let p = sample_params(&mut ChaCha8Rng::seed_from_u64(1), &AugmentConfig::identity(), 32, 24).unwrap();
        assert_eq!(p, AugmentParams::identity());
    }

    #[test]
    fn identity_params_bit_exact() {
        let s = sample();
        assert_eq!(apply_augment(&s, &AugmentParams::identity()).unwrap(), s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample();
        let once = apply_augment(&s, &AugmentParams::flip_only()).unwrap();
        assert_ne!(once, s);
        assert_eq!(apply_augment(&once, &AugmentParams::flip_only()).unwrap(), s);
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let cfg = AugmentConfig::default();
        let a = sample_params(&mut ChaCha8Rng::seed_from_u64(9), &cfg, 64, 48).unwrap();
        let b = sample_params(&mut ChaCha8Rng::seed_from_u64(9), &cfg, 64, 48).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zoom_divides_depth() {
        let s = sample();
        let p = AugmentParams { scale: 2.0, ..AugmentParams::identity() };
        let out = apply_augment(&s, &p).unwrap();
        // The center pixel maps onto itself.
        let (x, y) = (16, 12);
        if *out.mask().get(x, y) && *s.mask().get(x, y) {
            let ratio = s.depth.depth.get(x, y) / out.depth.depth.get(x, y);
            assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let cfg = AugmentConfig { scale: (0.0, 1.0), ..AugmentConfig::default() };
        assert!(sample_params(&mut ChaCha8Rng::seed_from_u64(0), &cfg, 4, 4).is_err());
    }
}

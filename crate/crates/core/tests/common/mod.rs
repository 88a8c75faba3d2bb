//! Brute-force reference implementations and random instance builders
//! shared by the integration tests.
#![allow(dead_code)]

use mscale::maps::{DepthMap, Grid, LabelMap, NormalMap, ValidMask};
use mscale::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, keep: f64) -> ValidMask {
    let mut m = Grid::from_fn(w, h, |_, _| rng.gen::<f64>() < keep);
    m.set(rng.gen_range(0..w), rng.gen_range(0..h), true);
    m
}

pub fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
    let mask = random_mask(rng, w, h, 0.8);
    DepthMap::new(Grid::from_fn(w, h, |_, _| rng.gen_range(0.3..8.0)), mask).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

pub fn random_normals(rng: &mut ChaCha8Rng, w: usize, h: usize) -> NormalMap {
    let mask = random_mask(rng, w, h, 0.8);
    NormalMap { normals: Grid::from_fn(w, h, |_, _| random_unit(rng)), mask }
}

pub fn random_labels(rng: &mut ChaCha8Rng, w: usize, h: usize, k: usize) -> LabelMap {
    let mask = random_mask(rng, w, h, 0.8);
    LabelMap { labels: Grid::from_fn(w, h, |_, _| rng.gen_range(0..k as u8)), mask }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn at<T: Copy>(g: &Grid<T>, x: usize, y: usize) -> T {
    *g.get(x, y)
}

/// Depth loss of one image, summing every term in its own pass.
pub fn depth_loss_loop(pred: &[f64], target: &DepthMap) -> f64 {
    let (w, h) = (target.width(), target.height());
    let d = |x: usize, y: usize| pred[y * w + x] - at(&target.depth, x, y).ln();
    let ok = |x: usize, y: usize| at(&target.mask, x, y);
    let mut n = 0.0;
    let mut sq = 0.0;
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            if ok(x, y) {
                n += 1.0;
                sq += d(x, y).powi(2);
                sum += d(x, y);
            }
        }
    }
    let mut gx = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            if ok(x, y) && ok(x + 1, y) {
                gx += (d(x + 1, y) - d(x, y)).powi(2);
            }
        }
    }
    let mut gy = 0.0;
    for y in 0..h - 1 {
        for x in 0..w {
            if ok(x, y) && ok(x, y + 1) {
                gy += (d(x, y + 1) - d(x, y)).powi(2);
            }
        }
    }
    sq / n - sum * sum / (2.0 * n * n) + (gx + gy) / n
}

/// `pred` is channel-major (3 planes).
pub fn normals_loss_loop(pred: &[f64], target: &NormalMap) -> f64 {
    let (w, h) = (target.width(), target.height());
    let plane = w * h;
    let (mut n, mut total) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if at(&target.mask, x, y) {
                let t = at(&target.normals, x, y);
                let i = y * w + x;
                n += 1.0;
                total -= pred[i] * t[0] + pred[plane + i] * t[1] + pred[2 * plane + i] * t[2];
            }
        }
    }
    total / n
}

/// `scores` is channel-major (k planes).
pub fn semantic_loss_loop(scores: &[f64], k: usize, target: &LabelMap, weights: Option<&[f64]>) -> f64 {
    let (w, h) = (target.labels.width(), target.labels.height());
    let plane = w * h;
    let (mut n, mut total) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if !at(&target.mask, x, y) {
                continue;
            }
            let i = y * w + x;
            let label = at(&target.labels, x, y) as usize;
            let denom: f64 = (0..k).map(|c| scores[c * plane + i].exp()).sum();
            let p = scores[label * plane + i].exp() / denom;
            let alpha = weights.map_or(1.0, |a| a[label]);
            n += 1.0;
            total -= alpha * p.ln();
        }
    }
    total / n
}

/// Depth metrics by direct per-pixel loops over the jointly valid pixels.
pub fn depth_metrics_loop(pred: &DepthMap, gt: &DepthMap) -> Vec<(&'static str, f64)> {
    let mut pairs = Vec::new();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if at(&pred.mask, x, y) && at(&gt.mask, x, y) {
                pairs.push((at(&pred.depth, x, y), at(&gt.depth, x, y)));
            }
        }
    }
    let n = pairs.len() as f64;
    let frac = |t: f64| pairs.iter().filter(|(d, g)| f64::max(d / g, g / d) < t).count() as f64 / n;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairs.iter().map(|&(d, g)| f(d, g)).sum::<f64>() / n;
    let log_mean = mean(&|d, g| d.ln() - g.ln());
    let log_sq = mean(&|d, g| (d.ln() - g.ln()).powi(2));
    vec![
        ("delta<1.25", frac(1.25)),
        ("delta<1.25^2", frac(1.25 * 1.25)),
        ("delta<1.25^3", frac(1.25 * 1.25 * 1.25)),
        ("abs_rel", mean(&|d, g| (d - g).abs() / g)),
        ("sqr_rel", mean(&|d, g| (d - g).powi(2) / g)),
        ("rms_linear", mean(&|d, g| (d - g).powi(2)).sqrt()),
        ("rms_log", log_sq.sqrt()),
        ("sc_inv", log_sq - log_mean * log_mean),
    ]
}

pub fn normal_metrics_loop(pred: &NormalMap, gt: &NormalMap) -> Vec<(&'static str, f64)> {
    let mut angles = Vec::new();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if at(&pred.mask, x, y) && at(&gt.mask, x, y) {
                let (a, b) = (at(&pred.normals, x, y), at(&gt.normals, x, y));
                let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
                angles.push(c.acos() * 180.0 / std::f64::consts::PI);
            }
        }
    }
    let n = angles.len() as f64;
    let mut sorted = angles.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0 };
    let within = |t: f64| angles.iter().filter(|&&a| a < t).count() as f64 / n;
    vec![
        ("mean_angle", angles.iter().sum::<f64>() / n),
        ("median_angle", median),
        ("within_11.25", within(11.25)),
        ("within_22.5", within(22.5)),
        ("within_30", within(30.0)),
    ]
}

/// Segmentation metrics from per-class pixel set counts, no confusion matrix.
pub fn segmentation_metrics_loop(pred: &LabelMap, gt: &LabelMap, k: usize) -> Vec<(&'static str, f64)> {
    let (w, h) = (gt.labels.width(), gt.labels.height());
    let mut valid = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if at(&pred.mask, x, y) && at(&gt.mask, x, y) {
                valid.push((at(&pred.labels, x, y) as usize, at(&gt.labels, x, y) as usize));
            }
        }
    }
    let total = valid.len() as f64;
    let correct = valid.iter().filter(|(p, g)| p == g).count() as f64;
    let (mut acc, mut jac, mut fw, mut present) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..k {
        let in_gt = valid.iter().filter(|&&(_, g)| g == c).count() as f64;
        if in_gt == 0.0 {
            continue;
        }
        let both = valid.iter().filter(|&&(p, g)| p == c && g == c).count() as f64;
        let either = valid.iter().filter(|&&(p, g)| p == c || g == c).count() as f64;
        present += 1.0;
        acc += both / in_gt;
        jac += both / either;
        fw += in_gt / total * both / either;
    }
    vec![
        ("pixel_acc", correct / total),
        ("per_class_acc", acc / present),
        ("freq_jaccard", fw),
        ("mean_jaccard", jac / present),
    ]
}

/// Largest absolute difference between a report and an oracle, by name.
pub fn max_report_diff(report: &mscale::metrics::MetricReport, oracle: &[(&str, f64)]) -> f64 {
    assert_eq!(report.values.len(), oracle.len(), "metric count differs");
    oracle
        .iter()
        .map(|&(name, v)| {
            let got = report.get(name).unwrap_or_else(|| panic!("missing metric {name}"));
            (got - v).abs()
        })
        .fold(0.0, f64::max)
}

/// Pixels whose `(2r+1)²` neighborhood is inside the image, valid and on a
/// single face.
pub fn face_interior(faces: &Grid<u32>, mask: &ValidMask, r: usize) -> ValidMask {
    let (w, h) = (faces.width(), faces.height());
    Grid::from_fn(w, h, |x, y| {
        if x < r || y < r || x + r >= w || y + r >= h {
            return false;
        }
        let f = at(faces, x, y);
        (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| at(mask, xx, yy) && at(faces, xx, yy) == f))
    })
}

pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Mean angle between two normal maps over `region`; `None` if it is empty.
pub fn mean_angle_over(a: &NormalMap, b: &NormalMap, region: &ValidMask) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..region.height() {
        for x in 0..region.width() {
            if at(region, x, y) && at(&a.mask, x, y) && at(&b.mask, x, y) {
                sum += angle_between(at(&a.normals, x, y), at(&b.normals, x, y));
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Zoom-by-2 consistency: augmenting plane-fit normals must agree with
/// plane-fitting the augmented depth. Returns the mean angle over pixels
/// that are face interiors in both frames.
pub fn zoom_planefit_gap(sample: &mscale::data::Sample, faces: &Grid<u32>, window: usize) -> Option<f64> {
    use mscale::augment::{apply_augment, AugmentParams};
    use mscale::geometry::normals_from_depth_planefit;
    let fit = normals_from_depth_planefit(&sample.depth, &sample.intrinsics, window).unwrap();
    let inner = face_interior(faces, &sample.depth.mask, window / 2);
    let mut tagged = sample.clone();
    tagged.normals = NormalMap { normals: fit.normals.clone(), mask: sample.depth.mask.clone() };
    tagged.labels.labels = Grid::from_fn(sample.width(), sample.height(), |x, y| {
        if at(&inner, x, y) && at(&fit.mask, x, y) {
            (at(faces, x, y) % 254) as u8
        } else {
            255
        }
    });
    let p = AugmentParams { scale: 2.0, ..AugmentParams::identity() };
    let zoomed = apply_augment(&tagged, &p).unwrap();
    let refit = normals_from_depth_planefit(&zoomed.depth, &zoomed.intrinsics, window).unwrap();
    let tags = zoomed.labels.labels.map(|&l| u32::from(l));
    let keep = face_interior(&tags, &zoomed.depth.mask, window / 2);
    let keep = Grid::from_fn(keep.width(), keep.height(), |x, y| at(&keep, x, y) && at(&tags, x, y) != 255);
    mean_angle_over(&zoomed.normals, &refit, &keep)
}

pub fn random_tensor_file(rng: &mut ChaCha8Rng) -> mscale::data::TensorFile {
    use mscale::data::{TensorData, TensorFile};
    let rank = rng.gen_range(1..=4);
    let dims: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..6)).collect();
    let n: usize = dims.iter().product();
    let data = match rng.gen_range(0..4) {
        0 => TensorData::F64((0..n).map(|_| f64::from_bits(rng.gen())).collect()),
        1 => TensorData::F32((0..n).map(|_| f32::from_bits(rng.gen())).collect()),
        2 => TensorData::U8((0..n).map(|_| rng.gen()).collect()),
        _ => TensorData::U16((0..n).map(|_| rng.gen()).collect()),
    };
    TensorFile::new(&dims, data).unwrap()
}

pub fn random_netpbm(rng: &mut ChaCha8Rng) -> mscale::data::netpbm::Netpbm {
    let (width, height) = (rng.gen_range(1..20), rng.gen_range(1..20));
    let channels = if rng.gen() { 1 } else { 3 };
    let maxval: u16 = if rng.gen() { 255 } else { 65535 };
    let samples = (0..width * height * channels).map(|_| rng.gen_range(0..=maxval)).collect();
    mscale::data::netpbm::Netpbm { width, height, channels, maxval, samples }
}

pub fn random_checkpoint(rng: &mut ChaCha8Rng) -> mscale::data::Checkpoint {
    let count = rng.gen_range(0..5);
    let tensors = (0..count)
        .map(|i| {
            let dims: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..5)).collect();
            let n = dims.iter().product();
            (format!("t{i}.weight"), Tensor::from_vec(&dims, (0..n).map(|_| f64::from_bits(rng.gen())).collect()).unwrap())
        })
        .collect();
    mscale::data::Checkpoint { text: format!("model.task=depth\nseed={}\n", rng.gen::<u32>()), tensors }
}

/// Byte strings derived from a valid encoding with a damaged header.
pub fn corrupted_headers(bytes: &[u8], header_len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for i in 0..header_len.min(bytes.len()) {
        let mut b = bytes.to_vec();
        b[i] ^= 0xA5;
        out.push(b);
    }
    out.push(bytes[..header_len.min(bytes.len()) - 1].to_vec());
    out.push(Vec::new());
    out
}

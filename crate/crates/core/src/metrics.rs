//! Evaluation metrics for depth, normals and semantic labels.
//!
//! Each task has an accumulator that pools pixels over any number of images;
//! the `*_metrics` functions are single-image shorthands. Only pixels valid
//! in both prediction and ground truth are counted.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::maps::{angle_deg, DepthMap, LabelMap, NormalMap};

pub const DELTA_BASE: f64 = 1.25;
pub const ANGLE_THRESHOLDS: [f64; 3] = [11.25, 22.5, 30.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub gt_pixels: u64,
    pub predicted_pixels: u64,
    /// `None` when the class is absent from the ground truth.
    pub accuracy: Option<f64>,
    pub jaccard: Option<f64>,
}

/// Named scalar results in display order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: String,
    pub values: Vec<(String, f64)>,
    pub pixels: u64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricReport {
    fn new(task: &str, pixels: u64) -> Self {
        MetricReport {
            task: task.to_string(),
            values: Vec::new(),
            pixels,
            per_class: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, v: f64) {
        self.values.push((name.to_string(), v));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    /// Header row and one value row, columns in report order.
    pub fn to_table(&self) -> String {
        let width = |n: &str| n.len().max(10);
        let mut head = String::new();
        let mut row = String::new();
        for (name, v) in &self.values {
            let _ = write!(head, "{:>w$} ", name, w = width(name));
            let _ = write!(row, "{:>w$.4} ", v, w = width(name));
        }
        format!("{}\n{}\n", head.trim_end(), row.trim_end())
    }

    /// `key=value` lines, full precision, per-class entries last.
    pub fn to_kv(&self) -> String {
        let mut s = format!("task={}\npixels={}\n", self.task, self.pixels);
        for (name, v) in &self.values {
            let _ = writeln!(s, "{name}={v}");
        }
        for c in &self.per_class {
            let _ = writeln!(s, "class.{}.gt_pixels={}", c.class, c.gt_pixels);
            if let (Some(a), Some(j)) = (c.accuracy, c.jaccard) {
                let _ = writeln!(s, "class.{}.accuracy={a}", c.class);
                let _ = writeln!(s, "class.{}.jaccard={j}", c.class);
            }
        }
        s
    }
}

fn check_size(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("prediction is {}x{}, ground truth {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

/// Pooled depth statistics.
#[derive(Debug, Clone, Default)]
pub struct DepthAccumulator {
    n: u64,
    within: [u64; 3],
    abs_rel: f64,
    sqr_rel: f64,
    sq_lin: f64,
    sq_log: f64,
    sum_log: f64,
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: &DepthMap, gt: &DepthMap) -> Result<()> {
        check_size((pred.width(), pred.height()), (gt.width(), gt.height()))?;
        let it = pred.depth.as_slice().iter().zip(pred.mask.as_slice()).zip(gt.depth.as_slice().iter().zip(gt.mask.as_slice()));
        for ((&d, &pm), (&t, &gm)) in it {
            if !(pm && gm) {
                continue;
            }
            if !(d > 0.0 && t > 0.0) {
                return Err(Error::Validation(format!("non-positive depth (pred {d}, gt {t}) at a valid pixel")));
            }
            self.n += 1;
            let ratio = (d / t).max(t / d);
            let mut thr = DELTA_BASE;
            for w in self.within.iter_mut() {
                if ratio < thr {
                    *w += 1;
                }
                thr *= DELTA_BASE;
            }
            self.abs_rel += (d - t).abs() / t;
            self.sqr_rel += (d - t) * (d - t) / t;
            self.sq_lin += (d - t) * (d - t);
            let l = d.ln() - t.ln();
            self.sq_log += l * l;
            self.sum_log += l;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::EmptyMask);
        }
        let n = self.n as f64;
        let mut r = MetricReport::new("depth", self.n);
        r.push("delta<1.25", self.within[0] as f64 / n);
        r.push("delta<1.25^2", self.within[1] as f64 / n);
        r.push("delta<1.25^3", self.within[2] as f64 / n);
        r.push("abs_rel", self.abs_rel / n);
        r.push("sqr_rel", self.sqr_rel / n);
        r.push("rms_linear", (self.sq_lin / n).sqrt());
        r.push("rms_log", (self.sq_log / n).sqrt());
        r.push("sc_inv", (self.sq_log / n - self.sum_log * self.sum_log / (n * n)).max(0.0));
        Ok(r)
    }
}

/// Pooled normal-angle statistics.
#[derive(Debug, Clone, Default)]
pub struct NormalAccumulator {
    angles: Vec<f64>,
}

impl NormalAccumulator {
    pub fn add(&mut self, pred: &NormalMap, gt: &NormalMap) -> Result<()> {
        check_size((pred.width(), pred.height()), (gt.width(), gt.height()))?;
        let it = pred.normals.as_slice().iter().zip(pred.mask.as_slice()).zip(gt.normals.as_slice().iter().zip(gt.mask.as_slice()));
        for ((&p, &pm), (&t, &gm)) in it {
            if pm && gm {
                self.angles.push(angle_deg(p, t));
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.angles.is_empty() {
            return Err(Error::EmptyMask);
        }
        let n = self.angles.len() as f64;
        let mut sorted = self.angles.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 0 {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        let mut r = MetricReport::new("normals", self.angles.len() as u64);
        r.push("mean_angle", self.angles.iter().sum::<f64>() / n);
        r.push("median_angle", median);
        for t in ANGLE_THRESHOLDS {
            let c = self.angles.iter().filter(|&&a| a < t).count();
            r.push(&format!("within_{t}"), c as f64 / n);
        }
        Ok(r)
    }
}

/// K×K confusion matrix, rows = ground truth, columns = prediction.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            k: classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        check_size(
            (pred.labels.width(), pred.labels.height()),
            (gt.labels.width(), gt.labels.height()),
        )?;
        let it = pred.labels.as_slice().iter().zip(pred.mask.as_slice()).zip(gt.labels.as_slice().iter().zip(gt.mask.as_slice()));
        for ((&p, &pm), (&t, &gm)) in it {
            if !(pm && gm) {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= self.k || t >= self.k {
                return Err(Error::Validation(format!("label out of range for {} classes (pred {p}, gt {t})", self.k)));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyMask);
        }
        let k = self.k;
        let mut r = MetricReport::new("semantic", total);
        let diag: u64 = (0..k).map(|c| self.get(c, c)).sum();
        let (mut acc_sum, mut jac_sum, mut freq_jac, mut present) = (0.0, 0.0, 0.0, 0usize);
        for c in 0..k {
            let tp = self.get(c, c);
            let gt_c: u64 = (0..k).map(|p| self.get(c, p)).sum();
            let pred_c: u64 = (0..k).map(|g| self.get(g, c)).sum();
            let mut cm = ClassMetrics {
                class: c,
                gt_pixels: gt_c,
                predicted_pixels: pred_c,
                accuracy: None,
                jaccard: None,
            };
            if gt_c > 0 {
                let acc = tp as f64 / gt_c as f64;
                let jac = tp as f64 / (gt_c + pred_c - tp) as f64;
                acc_sum += acc;
                jac_sum += jac;
                freq_jac += gt_c as f64 / total as f64 * jac;
                present += 1;
                cm.accuracy = Some(acc);
                cm.jaccard = Some(jac);
            }
            r.per_class.push(cm);
        }
        r.push("pixel_acc", diag as f64 / total as f64);
        r.push("per_class_acc", acc_sum / present as f64);
        r.push("freq_jaccard", freq_jac);
        r.push("mean_jaccard", jac_sum / present as f64);
        Ok(r)
    }
}

pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<MetricReport> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt)?;
    acc.finish()
}

pub fn normal_metrics(pred: &NormalMap, gt: &NormalMap) -> Result<MetricReport> {
    let mut acc = NormalAccumulator::default();
    acc.add(pred, gt)?;
    acc.finish()
}

pub fn segmentation_metrics(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<MetricReport> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt)?;
    cm.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{Grid, ValidMask};

    fn dmap(v: Vec<f64>, w: usize, h: usize) -> DepthMap {
        DepthMap::new(Grid::from_vec(w, h, v).unwrap(), ValidMask::all(w, h)).unwrap()
    }

    #[test]
    fn perfect_depth() {
        let d = dmap(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let r = depth_metrics(&d, &d).unwrap();
        for name in ["delta<1.25", "delta<1.25^2", "delta<1.25^3"] {
            assert_eq!(r.get(name), Some(1.0));
        }
        for name in ["abs_rel", "sqr_rel", "rms_linear", "rms_log", "sc_inv"] {
            assert_eq!(r.get(name), Some(0.0));
        }
    }

    #[test]
    fn single_pixel_hand_values() {
        let r = depth_metrics(&dmap(vec![2.6], 1, 1), &dmap(vec![2.0], 1, 1)).unwrap();
        assert!((r.get("abs_rel").unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(r.get("delta<1.25"), Some(0.0));
        assert_eq!(r.get("delta<1.25^2"), Some(1.0));
    }

    #[test]
    fn empty_mask_errors() {
        let d = DepthMap {
            depth: Grid::filled(1, 1, 1.0),
            mask: Grid::filled(1, 1, false),
        };
        assert!(matches!(depth_metrics(&d, &d), Err(Error::EmptyMask)));
    }

    #[test]
    fn orthogonal_normals() {
        let a = NormalMap { normals: Grid::filled(1, 1, [0.0, 0.0, 1.0]), mask: ValidMask::all(1, 1) };
        let b = NormalMap { normals: Grid::filled(1, 1, [0.0, 1.0, 0.0]), mask: ValidMask::all(1, 1) };
        let r = normal_metrics(&a, &b).unwrap();
        assert!((r.get("mean_angle").unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(r.get("within_30"), Some(0.0));
        let same = normal_metrics(&a, &a).unwrap();
        assert_eq!(same.get("mean_angle"), Some(0.0));
        assert_eq!(same.get("within_11.25"), Some(1.0));
    }

    #[test]
    fn two_class_one_wrong() {
        // gt = [0,0,1,1], pred = [0,1,1,1]
        let gt = LabelMap { labels: Grid::from_vec(2, 2, vec![0, 0, 1, 1]).unwrap(), mask: ValidMask::all(2, 2) };
        let pred = LabelMap { labels: Grid::from_vec(2, 2, vec![0, 1, 1, 1]).unwrap(), mask: ValidMask::all(2, 2) };
        let r = segmentation_metrics(&pred, &gt, 2).unwrap();
        assert_eq!(r.get("pixel_acc"), Some(0.75));
        // class 0: acc 1/2, J = 1/2; class 1: acc 1, J = 2/3
        assert_eq!(r.get("per_class_acc"), Some(0.75));
        assert!((r.get("mean_jaccard").unwrap() - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((r.get("freq_jaccard").unwrap() - (0.5 * 0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn kv_and_table_render() {
        let d = dmap(vec![1.0, 2.0], 2, 1);
        let r = depth_metrics(&d, &d).unwrap();
        assert!(r.to_kv().contains("abs_rel=0\n"));
        assert_eq!(r.to_table().lines().count(), 2);
    }
}

//! Camera-space geometry: back-projection and normals from depth.
//!
//! Camera convention: `+z` points into the scene, `+x` right, `+y` down
//! (image `v` axis). Normals face the camera, i.e. `n · p < 0` for the
//! surface point `p` they belong to.

use crate::error::{Error, Result};
use crate::maps::{cross3, dot3, normalize3, DepthMap, Grid, NormalMap, ValidMask};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::Input(format!("invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy}")));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// `fx = fy = W` (about 53° horizontal field of view), principal point at
    /// the image center.
    pub fn default_for(width: usize, height: usize) -> Self {
        Intrinsics {
            fx: width as f64,
            fy: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    /// Unnormalized viewing ray through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        self.back_project(u, v, 1.0)
    }
}

/// `p = ((u − cx)·Z/fx, (v − cy)·Z/fy, Z)` for every pixel. Points at invalid
/// pixels are computed from whatever depth is stored there and should be
/// ignored.
pub fn depth_to_points(depth: &DepthMap, k: &Intrinsics) -> Grid<[f64; 3]> {
    Grid::from_fn(depth.width(), depth.height(), |x, y| {
        k.back_project(x as f64, y as f64, *depth.depth.get(x, y))
    })
}

/// Eigenvalues of a symmetric 3×3 matrix in ascending order.
pub fn symmetric_eigenvalues(a: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if p1 == 0.0 {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *a;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [lo, 3.0 * q - hi - lo, hi]
}

/// Unit eigenvector for the smallest eigenvalue, or `None` when that
/// eigenvalue is not simple (collinear or coincident points).
///
/// Cyclic Jacobi rotations: slower than the closed form but accurate for
/// the nearly flat covariances of grazing planes.
fn smallest_eigenvector(a: &[[f64; 3]; 3]) -> Option<[f64; 3]> {
    let mut m = *a;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..32 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        if off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[p][q] == 0.0 {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (mkp, mkq) = (m[k][p], m[k][q]);
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let (mpk, mqk) = (m[p][k], m[q][k]);
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let ev = order.map(|i| m[i][i]);
    let scale = ev[2].abs().max(f64::MIN_POSITIVE);
    if (ev[1] - ev[0]) <= 1e-10 * scale {
        return None;
    }
    let k = order[0];
    normalize3([v[0][k], v[1][k], v[2][k]])
}

fn facing(n: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    if dot3(n, p) > 0.0 {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

/// Default side of the plane-fit neighborhood.
pub const DEFAULT_PLANE_WINDOW: usize = 7;

/// Total-least-squares plane normals over a `window × window` neighborhood.
///
/// A pixel is valid when it is valid in `depth`, its window holds at least 3
/// valid points and the centered covariance has a unique smallest eigenvalue.
pub fn normals_from_depth_planefit(depth: &DepthMap, k: &Intrinsics, window: usize) -> Result<NormalMap> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Input(format!("plane-fit window must be odd and >= 3, got {window}")));
    }
    let (w, h) = (depth.width(), depth.height());
    let pts = depth_to_points(depth, k);
    let r = window / 2;
    let mut normals = Grid::filled(w, h, [0.0; 3]);
    let mut mask = Grid::filled(w, h, false);
    let mut nb = Vec::with_capacity(window * window);
    for y in 0..h {
        for x in 0..w {
            if !*depth.mask.get(x, y) {
                continue;
            }
            nb.clear();
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    if *depth.mask.get(xx, yy) {
                        nb.push(*pts.get(xx, yy));
                    }
                }
            }
            if nb.len() < 3 {
                continue;
            }
            let m = nb.len() as f64;
            let mut mean = [0.0; 3];
            for p in &nb {
                for i in 0..3 {
                    mean[i] += p[i] / m;
                }
            }
            let mut cov = [[0.0; 3]; 3];
            for p in &nb {
                let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] += d[i] * d[j];
                    }
                }
            }
            if let Some(n) = smallest_eigenvector(&cov) {
                normals.set(x, y, facing(n, *pts.get(x, y)));
                mask.set(x, y, true);
            }
        }
    }
    Ok(NormalMap { normals, mask })
}

/// Normals from the cross product of central-difference tangents of the
/// point map. Needs all four direct neighbors valid; borders are invalid.
pub fn normals_from_depth_finitediff(depth: &DepthMap, k: &Intrinsics) -> NormalMap {
    let (w, h) = (depth.width(), depth.height());
    let pts = depth_to_points(depth, k);
    let mut normals = Grid::filled(w, h, [0.0; 3]);
    let mut mask: ValidMask = Grid::filled(w, h, false);
    let valid = |x: usize, y: usize| *depth.mask.get(x, y);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if !(valid(x, y) && valid(x - 1, y) && valid(x + 1, y) && valid(x, y - 1) && valid(x, y + 1)) {
                continue;
            }
            let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            let tx = sub(*pts.get(x + 1, y), *pts.get(x - 1, y));
            let ty = sub(*pts.get(x, y + 1), *pts.get(x, y - 1));
            if let Some(n) = normalize3(cross3(tx, ty)) {
                normals.set(x, y, facing(n, *pts.get(x, y)));
                mask.set(x, y, true);
            }
        }
    }
    NormalMap { normals, mask }
}

/// Depth of the plane `n · p = −offset` seen through each pixel, or an
/// invalid pixel where the ray misses it (parallel or behind the camera).
pub fn render_plane(normal: [f64; 3], offset: f64, width: usize, height: usize, k: &Intrinsics) -> DepthMap {
    let mut depth = Grid::filled(width, height, 1.0);
    let mut mask = Grid::filled(width, height, false);
    for y in 0..height {
        for x in 0..width {
            let ray = k.ray(x as f64, y as f64);
            let denom = dot3(normal, ray);
            if denom.abs() > 1e-12 {
                let z = -offset / denom;
                if z > 0.0 && z.is_finite() {
                    depth.set(x, y, z);
                    mask.set(x, y, true);
                }
            }
        }
    }
    DepthMap { depth, mask }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_point_and_unit_column() {
        let k = Intrinsics::new(100.0, 100.0, 20.0, 10.0).unwrap();
        assert_eq!(k.back_project(20.0, 10.0, 2.0), [0.0, 0.0, 2.0]);
        assert_eq!(k.back_project(120.0, 10.0, 1.0)[0], 1.0);
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn fronto_parallel_plane() {
        let k = Intrinsics::default_for(12, 9);
        let d = DepthMap::new(Grid::filled(12, 9, 2.0), ValidMask::all(12, 9)).unwrap();
        for nm in [normals_from_depth_planefit(&d, &k, DEFAULT_PLANE_WINDOW).unwrap(), normals_from_depth_finitediff(&d, &k)] {
            for (n, &m) in nm.normals.as_slice().iter().zip(nm.mask.as_slice()) {
                if m {
                    assert!((n[0]).abs() < 1e-9 && (n[1]).abs() < 1e-9 && (n[2] + 1.0).abs() < 1e-9, "{n:?}");
                }
            }
        }
    }

    #[test]
    fn isolated_pixel_is_invalid() {
        let k = Intrinsics::default_for(5, 5);
        let mask = Grid::from_fn(5, 5, |x, y| x == 2 && y == 2);
        let d = DepthMap::new(Grid::filled(5, 5, 1.0), mask).unwrap();
        assert_eq!(normals_from_depth_planefit(&d, &k, 3).unwrap().mask.count(), 0);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let k = Intrinsics::default_for(5, 5);
        let mask = Grid::from_fn(5, 5, |_, y| y == 2);
        let d = DepthMap::new(Grid::filled(5, 5, 1.0), mask).unwrap();
        assert_eq!(normals_from_depth_planefit(&d, &k, 3).unwrap().mask.count(), 0);
    }

    #[test]
    fn eigenvalues_diagonal_and_known() {
        assert_eq!(symmetric_eigenvalues(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]), [1.0, 2.0, 3.0]);
        let ev = symmetric_eigenvalues(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        for (a, b) in ev.iter().zip([1.0, 3.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_even_window() {
        let d = DepthMap::new(Grid::filled(4, 4, 1.0), ValidMask::all(4, 4)).unwrap();
        assert!(normals_from_depth_planefit(&d, &Intrinsics::default_for(4, 4), 4).is_err());
    }
}

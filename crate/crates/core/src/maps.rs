//! Per-pixel maps shared by losses, metrics, geometry and I/O.

use crate::error::{Error, Result};

/// Row-major `width × height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Input(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Marks pixels with usable ground truth.
pub type ValidMask = Grid<bool>;

impl ValidMask {
    pub fn all(width: usize, height: usize) -> Self {
        Grid::filled(width, height, true)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Keeps pixels whose full `radius` neighborhood is valid.
    pub fn eroded(&self, radius: usize) -> ValidMask {
        let r = radius as isize;
        Grid::from_fn(self.width, self.height, |x, y| {
            (-r..=r).all(|dy| {
                (-r..=r).all(|dx| {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    xx >= 0
                        && yy >= 0
                        && (xx as usize) < self.width
                        && (yy as usize) < self.height
                        && *self.get(xx as usize, yy as usize)
                })
            })
        })
    }

    pub fn and(&self, other: &ValidMask) -> ValidMask {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }
}

/// Metric depth in meters (> 0 at valid pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub depth: Grid<f64>,
    pub mask: ValidMask,
}

impl DepthMap {
    pub fn new(depth: Grid<f64>, mask: ValidMask) -> Result<Self> {
        if !depth.same_size(&mask) {
            return Err(Error::Input("depth and mask sizes differ".into()));
        }
        for (d, &m) in depth.as_slice().iter().zip(mask.as_slice()) {
            if m && !(d.is_finite() && *d > 0.0) {
                return Err(Error::Validation(format!("non-positive depth {d} at a valid pixel")));
            }
        }
        Ok(DepthMap { depth, mask })
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }
}

/// Unit surface normals in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub normals: Grid<[f64; 3]>,
    pub mask: ValidMask,
}

impl NormalMap {
    pub fn width(&self) -> usize {
        self.normals.width()
    }

    pub fn height(&self) -> usize {
        self.normals.height()
    }
}

/// Class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub labels: Grid<u8>,
    pub mask: ValidMask,
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Unit vector along `a`, or `None` for a (near-)zero vector.
pub fn normalize3(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm3(a);
    (n > 1e-300 && n.is_finite()).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

/// Angle between two unit vectors, in degrees.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    dot3(a, b).clamp(-1.0, 1.0).acos().to_degrees()
}

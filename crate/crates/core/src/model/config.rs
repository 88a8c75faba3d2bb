//! Declarative model description and the layer-table presets.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::ops::{output_len, ConvGeom};

/// Prediction target of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Depth,
    Normals,
    /// Class count.
    Semantic(usize),
    /// Shared scale-1 trunk with separate depth and normals scale-2/3 stacks.
    DepthNormals,
}

/// One prediction head; [`Task::DepthNormals`] has two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Depth,
    Normals,
    Semantic(usize),
}

impl Head {
    pub fn channels(self) -> usize {
        match self {
            Head::Depth => 1,
            Head::Normals => 3,
            Head::Semantic(k) => k,
        }
    }
}

impl Task {
    pub fn parse(name: &str, classes: usize) -> Result<Self> {
        match name {
            "depth" => Ok(Task::Depth),
            "normals" => Ok(Task::Normals),
            "semantic" if classes >= 2 => Ok(Task::Semantic(classes)),
            "semantic" => Err(Error::Input(format!("semantic task needs >= 2 classes, got {classes}"))),
            "depth+normals" => Ok(Task::DepthNormals),
            other => Err(Error::Input(format!("unknown task `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Depth => "depth",
            Task::Normals => "normals",
            Task::Semantic(_) => "semantic",
            Task::DepthNormals => "depth+normals",
        }
    }

    pub fn classes(self) -> Option<usize> {
        match self {
            Task::Semantic(k) => Some(k),
            _ => None,
        }
    }

    /// Output channel count C of the combined prediction.
    pub fn out_channels(self) -> usize {
        self.heads().iter().map(|(_, h)| h.channels()).sum()
    }

    /// `(layer-name prefix, head)` per scale-2/3 branch.
    pub fn heads(self) -> Vec<(&'static str, Head)> {
        match self {
            Task::Depth => vec![("", Head::Depth)],
            Task::Normals => vec![("", Head::Normals)],
            Task::Semantic(k) => vec![("", Head::Semantic(k))],
            Task::DepthNormals => vec![("depth:", Head::Depth), ("normals:", Head::Normals)],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Modality {
    Rgb,
    Depth,
    Normals,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb | Modality::Normals => 3,
            Modality::Depth => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
            Modality::Normals => "normals",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Modality>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m = match part {
                "rgb" => Modality::Rgb,
                "depth" => Modality::Depth,
                "normals" => Modality::Normals,
                other => return Err(Error::Input(format!("unknown input modality `{other}`"))),
            };
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out.sort();
        if out.first() != Some(&Modality::Rgb) {
            return Err(Error::Input("input modalities must include rgb".into()));
        }
        Ok(out)
    }

    pub fn list_name(list: &[Modality]) -> String {
        list.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
    }
}

/// Active subset of scales {1, 2, 3}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleSet(u8);

impl ScaleSet {
    pub const ALL: ScaleSet = ScaleSet(0b111);

    pub fn new(scales: &[u8]) -> Result<Self> {
        let mut bits = 0u8;
        for &s in scales {
            if !(1..=3).contains(&s) {
                return Err(Error::Input(format!("scale {s} is not one of 1, 2, 3")));
            }
            bits |= 1 << (s - 1);
        }
        let set = ScaleSet(bits);
        match bits {
            0b001 | 0b010 | 0b011 | 0b111 => Ok(set),
            _ => Err(Error::Input(format!(
                "scale set {{{set}}} unsupported: scale 3 needs scales 1 and 2, and scale 2 alone is the only set without scale 1"
            ))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let scales = s
            .split(',')
            .map(|p| p.trim().parse::<u8>().map_err(|_| Error::Input(format!("bad scale list `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&scales)
    }

    pub fn has(self, scale: u8) -> bool {
        (1..=3).contains(&scale) && self.0 & (1 << (scale - 1)) != 0
    }

    /// Deepest active scale, which determines the output plane.
    pub fn deepest(self) -> u8 {
        if self.has(3) {
            3
        } else if self.has(2) {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for ScaleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v: Vec<String> = (1..=3).filter(|&s| self.has(s)).map(|s| s.to_string()).collect();
        f.write_str(&v.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// AlexNet-style coarse stack at 320×240, reproducing the reference
    /// layer sizes exactly.
    Canonical,
    /// VGG-style coarse stack at 320×240 (topology only).
    Vgg,
    /// Layer table derived from the input size; 64×48 at width 1/8 is the
    /// desk-scale default.
    Auto,
    /// 8×6 input with minimal layers, for end-to-end gradient checks.
    Tiny,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Canonical => "canonical",
            Preset::Vgg => "vgg",
            Preset::Auto => "auto",
            Preset::Tiny => "tiny",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "canonical" | "alexnet" => Preset::Canonical,
            "vgg" => Preset::Vgg,
            "auto" | "desk" => Preset::Auto,
            "tiny" => Preset::Tiny,
            other => return Err(Error::Input(format!("unknown model preset `{other}`"))),
        })
    }
}

/// User-facing knobs; everything else in [`ModelConfig`] is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub preset: Preset,
    /// (width, height)
    pub input: (usize, usize),
    pub width_multiplier: f64,
    pub task: Task,
    pub scales: ScaleSet,
    pub modalities: Vec<Modality>,
    pub dropout: Option<f64>,
    /// Per-layer learning-rate multiplier overrides.
    pub lr_overrides: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn desk(task: Task) -> Self {
        ModelSpec {
            preset: Preset::Auto,
            input: (64, 48),
            width_multiplier: 0.125,
            task,
            scales: ScaleSet::ALL,
            modalities: vec![Modality::Rgb],
            dropout: None,
            lr_overrides: BTreeMap::new(),
        }
    }

    pub fn canonical(task: Task) -> Self {
        ModelSpec {
            preset: Preset::Canonical,
            input: (320, 240),
            width_multiplier: 1.0,
            ..Self::desk(task)
        }
    }

    pub fn tiny(task: Task) -> Self {
        ModelSpec {
            preset: Preset::Tiny,
            input: (8, 6),
            width_multiplier: 1.0 / 16.0,
            ..Self::desk(task)
        }
    }

    pub fn with_scales(mut self, scales: ScaleSet) -> Self {
        self.scales = scales;
        self
    }

    pub fn with_modalities(mut self, m: Vec<Modality>) -> Self {
        self.modalities = m;
        self
    }

    /// `model.*` lines of a config file.
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "model.preset={}\nmodel.input={}x{}\nmodel.width={}\nmodel.task={}\n",
            self.preset.name(),
            self.input.0,
            self.input.1,
            self.width_multiplier,
            self.task.name()
        );
        if let Some(k) = self.task.classes() {
            s += &format!("model.classes={k}\n");
        }
        s += &format!("model.scales={}\nmodel.inputs={}\n", self.scales, Modality::list_name(&self.modalities));
        if let Some(d) = self.dropout {
            s += &format!("model.dropout={d}\n");
        }
        for (k, v) in &self.lr_overrides {
            s += &format!("model.lr.{k}={v}\n");
        }
        s
    }

    /// Builds a spec from `model.*` keys; missing keys take desk defaults.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| kv.get(&format!("model.{k}")).map(String::as_str);
        let classes = match get("classes") {
            Some(v) => v.parse().map_err(|_| Error::Input(format!("bad model.classes `{v}`")))?,
            None => 0,
        };
        let task = Task::parse(get("task").unwrap_or("depth"), classes)?;
        let preset = Preset::parse(get("preset").unwrap_or("auto"))?;
        let base = match preset {
            Preset::Canonical | Preset::Vgg => ModelSpec { preset, ..Self::canonical(task) },
            Preset::Tiny => Self::tiny(task),
            Preset::Auto => Self::desk(task),
        };
        let input = match get("input") {
            Some(v) => parse_size(v)?,
            None => base.input,
        };
        let width_multiplier = match get("width") {
            Some(v) => parse_f64("model.width", v)?,
            None => base.width_multiplier,
        };
        let scales = match get("scales") {
            Some(v) => ScaleSet::parse(v)?,
            None => base.scales,
        };
        let modalities = match get("inputs") {
            Some(v) => Modality::parse_list(v)?,
            None => base.modalities,
        };
        let dropout = get("dropout").map(|v| parse_f64("model.dropout", v)).transpose()?;
        let mut lr_overrides = BTreeMap::new();
        for (k, v) in kv {
            if let Some(layer) = k.strip_prefix("model.lr.") {
                lr_overrides.insert(layer.to_string(), parse_f64(k, v)?);
            }
        }
        Ok(ModelSpec { preset, input, width_multiplier, task, scales, modalities, dropout, lr_overrides })
    }
}

pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let err = || Error::Input(format!("size must look like WxH, got `{s}`"));
    let (w, h) = s.split_once('x').ok_or_else(err)?;
    let w: usize = w.trim().parse().map_err(|_| err())?;
    let h: usize = h.trim().parse().map_err(|_| err())?;
    if w == 0 || h == 0 {
        return Err(err());
    }
    Ok((w, h))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse().map_err(|_| Error::Input(format!("`{key}` must be a number, got `{v}`")))
}

/// A convolution with optional ReLU and max-pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub out_channels: usize,
    pub geom: ConvGeom,
    pub relu: bool,
    /// (window, stride)
    pub pool: Option<(usize, usize)>,
}

impl ConvLayer {
    fn new(name: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvLayer {
            name: name.to_string(),
            out_channels,
            geom: ConvGeom::square(kernel, stride, pad),
            relu: true,
            pool: None,
        }
    }

    fn pooled(mut self, window: usize, stride: usize) -> Self {
        self.pool = Some((window, stride));
        self
    }
}

/// A prediction plane: the map a scale emits, and where it sits in the
/// input. Plane pixel `(i, j)` summarizes the input block starting at
/// `(stride·(i + offset.0), stride·(j + offset.1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub offset: (usize, usize),
}

/// The per-modality 9×9 convolutions that open scales 2 and 3.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryConv {
    pub geom: ConvGeom,
    /// Filters per modality.
    pub filters: usize,
    pub pool: Option<(usize, usize)>,
    /// Top-left of the plane-sized window kept from the entry output.
    pub crop: (usize, usize),
}

/// Fully resolved layer table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub spec: ModelSpec,
    pub coarse: Vec<ConvLayer>,
    /// Width of layer 1.6.
    pub full_hidden: usize,
    /// Channels per coarse grid cell emitted by 1.7 when feeding scale 2.
    pub coarse_features: usize,
    /// 1.7 output grid (width, height).
    pub grid: (usize, usize),
    pub coarse_upsample: usize,
    pub coarse_crop: (usize, usize),
    pub entry2: EntryConv,
    /// Channels and kernel of layers 2.2 … 2.4; layer 2.5 emits C.
    pub scale2_mid: Vec<ConvLayer>,
    pub scale2_out_kernel: usize,
    pub s2: Plane,
    pub entry3: EntryConv,
    pub s2_upsample: usize,
    pub s2_up_crop: (usize, usize),
    pub scale3_mid: Vec<ConvLayer>,
    pub scale3_out_kernel: usize,
    pub s3: Plane,
    pub dropout16: f64,
}

fn scaled(n: usize, w: f64) -> usize {
    ((n as f64 * w).round() as usize).max(1)
}

fn mid_layers(prefix: u8, first: u8, count: u8, channels: usize) -> Vec<ConvLayer> {
    (first..first + count)
        .map(|i| ConvLayer::new(&format!("{prefix}.{i}"), channels, 5, 1, 2))
        .collect()
}

fn center(big: usize, small: usize) -> usize {
    big.saturating_sub(small) / 2
}

impl ModelConfig {
    pub fn resolve(spec: &ModelSpec) -> Result<Self> {
        let w = spec.width_multiplier;
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::config("model", format!("width multiplier must be positive, got {w}")));
        }
        if spec.task == Task::DepthNormals && !spec.scales.has(2) {
            return Err(Error::config("model", "depth+normals needs scale 2 for its separate branches"));
        }
        let (iw, ih) = spec.input;
        let entry_filters = if spec.modalities.len() > 1 { 32 } else { 96 };
        let dropout16 = spec.dropout.unwrap_or(if matches!(spec.task, Task::Semantic(_)) { 0.8 } else { 0.5 });
        if !(0.0..1.0).contains(&dropout16) {
            return Err(Error::config("1.6", format!("dropout rate {dropout16} outside [0, 1)")));
        }
        let c64 = scaled(64, w);
        let mut cfg = match spec.preset {
            Preset::Canonical | Preset::Vgg => {
                if spec.input != (320, 240) {
                    return Err(Error::config(
                        "model",
                        format!("{} preset is defined for 320x240 input, got {iw}x{ih}", spec.preset.name()),
                    ));
                }
                let coarse = if spec.preset == Preset::Canonical {
                    vec![
                        ConvLayer::new("1.1", scaled(96, w), 11, 4, 0).pooled(5, 2),
                        ConvLayer::new("1.2", scaled(256, w), 5, 1, 2).pooled(3, 2),
                        ConvLayer::new("1.3", scaled(384, w), 3, 1, 1),
                        ConvLayer::new("1.4", scaled(384, w), 3, 1, 1),
                        ConvLayer::new("1.5", scaled(256, w), 3, 1, 1).pooled(3, 2),
                    ]
                } else {
                    let mut v = Vec::new();
                    for (block, (n, ch)) in [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)].into_iter().enumerate() {
                        for i in 0..n {
                            let sub = (b'a' + i as u8) as char;
                            let mut l = ConvLayer::new(&format!("1.{}.{sub}", block + 1), scaled(ch, w), 3, 1, 1);
                            if i + 1 == n {
                                l = l.pooled(2, 2);
                            }
                            v.push(l);
                        }
                    }
                    v
                };
                ModelConfig {
                    spec: spec.clone(),
                    coarse,
                    full_hidden: scaled(4096, w),
                    coarse_features: c64,
                    grid: (19, 14),
                    coarse_upsample: 4,
                    coarse_crop: (center(76, 74), center(56, 55)),
                    entry2: EntryConv { geom: ConvGeom::square(9, 2, 4), filters: scaled(entry_filters, w), pool: Some((2, 2)), crop: (3, 2) },
                    scale2_mid: mid_layers(2, 2, 3, c64),
                    scale2_out_kernel: 5,
                    s2: Plane { width: 74, height: 55, stride: 4, offset: (3, 2) },
                    entry3: EntryConv { geom: ConvGeom::square(9, 2, 4), filters: scaled(entry_filters, w), pool: None, crop: (6, 4) },
                    s2_upsample: 2,
                    s2_up_crop: (0, 0),
                    scale3_mid: mid_layers(3, 2, 2, c64),
                    scale3_out_kernel: 5,
                    s3: Plane { width: 147, height: 109, stride: 2, offset: (6, 4) },
                    dropout16,
                }
            }
            Preset::Tiny => {
                if spec.input != (8, 6) {
                    return Err(Error::config("model", format!("tiny preset is defined for 8x6 input, got {iw}x{ih}")));
                }
                let s2 = Plane { width: 2, height: 1, stride: 4, offset: (0, 0) };
                ModelConfig {
                    spec: spec.clone(),
                    coarse: vec![
                        ConvLayer::new("1.1", scaled(96, w), 3, 1, 1).pooled(2, 2),
                        ConvLayer::new("1.2", scaled(256, w), 3, 1, 1).pooled(2, 2),
                        ConvLayer::new("1.3", scaled(384, w), 3, 1, 1),
                        ConvLayer::new("1.4", scaled(384, w), 3, 1, 1),
                        ConvLayer::new("1.5", scaled(256, w), 3, 1, 1),
                    ],
                    full_hidden: scaled(512, w),
                    coarse_features: c64,
                    grid: (1, 1),
                    coarse_upsample: 4,
                    coarse_crop: (center(4, 2), center(4, 1)),
                    entry2: EntryConv { geom: ConvGeom::square(9, 2, 4), filters: scaled(entry_filters, w), pool: Some((2, 2)), crop: (0, 0) },
                    scale2_mid: mid_layers(2, 2, 3, c64),
                    scale2_out_kernel: 5,
                    s2,
                    entry3: EntryConv { geom: ConvGeom::square(9, 2, 4), filters: scaled(entry_filters, w), pool: None, crop: (0, 0) },
                    s2_upsample: 2,
                    s2_up_crop: (0, 0),
                    scale3_mid: mid_layers(3, 2, 2, c64),
                    scale3_out_kernel: 5,
                    s3: Plane { width: 4, height: 2, stride: 2, offset: (0, 0) },
                    dropout16,
                }
            }
            Preset::Auto => Self::for_input(spec, entry_filters, dropout16)?,
        };
        cfg.spec = spec.clone();
        cfg.layout()?;
        Ok(cfg)
    }

    /// Desk-style table for an arbitrary input: scale-2 plane at input/4,
    /// scale-3 plane at twice that, coarse grid `ceil(plane/4)`.
    fn for_input(spec: &ModelSpec, entry_filters: usize, dropout16: f64) -> Result<Self> {
        let (iw, ih) = spec.input;
        let w = spec.width_multiplier;
        if iw < 8 || ih < 8 {
            return Err(Error::config("model", format!("input {iw}x{ih} too small for the auto preset (min 8x8)")));
        }
        // Pools are dropped once the plane would shrink below 1 pixel.
        let mut size = (output_len(iw, 11, 4, 5).unwrap(), output_len(ih, 11, 4, 5).unwrap());
        let mut coarse = Vec::new();
        for (name, ch, k, pool) in [("1.1", 96, 11, true), ("1.2", 256, 5, true), ("1.3", 384, 3, false), ("1.4", 384, 3, false), ("1.5", 256, 3, true)] {
            let mut l = if name == "1.1" { ConvLayer::new(name, scaled(ch, w), k, 4, 5) } else { ConvLayer::new(name, scaled(ch, w), k, 1, k / 2) };
            if pool && size.0 >= 2 && size.1 >= 2 {
                l = l.pooled(2, 2);
                size = (size.0 / 2, size.1 / 2);
            }
            coarse.push(l);
        }
        let s2 = Plane { width: iw / 4, height: ih / 4, stride: 4, offset: (0, 0) };
        let s3 = Plane { width: 2 * s2.width, height: 2 * s2.height, stride: 2, offset: (0, 0) };
        let grid = (s2.width.div_ceil(4), s2.height.div_ceil(4));
        let c64 = scaled(64, w);
        Ok(ModelConfig {
            spec: spec.clone(),
            coarse,
            full_hidden: scaled(4096, w),
            coarse_features: c64,
            grid,
            coarse_upsample: 4,
            coarse_crop: (center(4 * grid.0, s2.width), center(4 * grid.1, s2.height)),
            entry2: EntryConv { geom: ConvGeom::square(9, 2, 4), filters: scaled(entry_filters, w), pool: Some((2, 2)), crop: (0, 0) },
            scale2_mid: mid_layers(2, 2, 3, c64),
            scale2_out_kernel: 5,
            s2,
            entry3: EntryConv { geom: ConvGeom::square(9, 2, 4), filters: scaled(entry_filters, w), pool: None, crop: (0, 0) },
            s2_upsample: 2,
            s2_up_crop: (0, 0),
            scale3_mid: mid_layers(3, 2, 2, c64),
            scale3_out_kernel: 5,
            s3,
            dropout16,
        })
    }

    /// Plane of the final prediction.
    pub fn output_plane(&self) -> Plane {
        if self.spec.scales.has(3) {
            self.s3
        } else {
            self.s2
        }
    }

    /// Learning-rate multiplier for a layer (branch prefix ignored).
    pub fn lr_mult(&self, layer: &str) -> f64 {
        if let Some(&v) = self.spec.lr_overrides.get(layer) {
            return v;
        }
        let base = layer.rsplit(':').next().unwrap_or(layer);
        let key: String = base.split('.').take(2).collect::<Vec<_>>().join(".");
        if let Some(&v) = self.spec.lr_overrides.get(&key) {
            return v;
        }
        let semantic = matches!(self.spec.task, Task::Semantic(_));
        match key.as_str() {
            "1.6" => if semantic { 1.0 } else { 0.1 },
            "1.7" => if semantic { 0.01 } else { 0.1 },
            "2.2" | "2.3" | "2.4" | "3.2" | "3.3" => 10.0,
            _ => 1.0,
        }
    }

    fn entry_name(&self, scale: u8, prefix: &str, m: Modality) -> String {
        if self.spec.modalities.len() == 1 {
            format!("{prefix}{scale}.1")
        } else {
            format!("{prefix}{scale}.1.{}", m.name())
        }
    }

    pub(crate) fn entry_names(&self, scale: u8, prefix: &str) -> Vec<(Modality, String)> {
        self.spec.modalities.iter().map(|&m| (m, self.entry_name(scale, prefix, m))).collect()
    }

    /// Shape plan and parameter list, validated against the spatial sizes.
    pub fn layout(&self) -> Result<Layout> {
        let mut rows = Vec::new();
        let mut params = Vec::new();
        let (iw, ih) = self.spec.input;
        let scales = self.spec.scales;
        let add_conv = |name: &str, scale: u8, cin: usize, cout: usize, g: ConvGeom, params: &mut Vec<ParamShape>| {
            params.push(ParamShape { name: format!("{name}.weight"), dims: vec![cout, cin, g.kernel_h, g.kernel_w], fan_in: cin * g.kernel_h * g.kernel_w, scale });
            params.push(ParamShape { name: format!("{name}.bias"), dims: vec![cout], fan_in: 0, scale });
        };
        let conv_size = |name: &str, g: ConvGeom, (w, h): (usize, usize)| -> Result<(usize, usize)> {
            g.output_size(h, w)
                .map(|(h, w)| (w, h))
                .ok_or_else(|| Error::config(name, format!("input {w}x{h} smaller than kernel {} with pad {}", g.kernel_w, g.pad)))
        };
        let pool_size = |name: &str, (k, s): (usize, usize), (w, h): (usize, usize)| -> Result<(usize, usize)> {
            match (output_len(w, k, s, 0), output_len(h, k, s, 0)) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(Error::config(name, format!("pool window {k} larger than {w}x{h}"))),
            }
        };
        let crop_check = |name: &str, (w, h): (usize, usize), (x0, y0): (usize, usize), p: (usize, usize)| -> Result<()> {
            if x0 + p.0 > w || y0 + p.1 > h {
                return Err(Error::config(name, format!("{}x{} window at ({x0},{y0}) does not fit in {w}x{h}", p.0, p.1)));
            }
            Ok(())
        };
        for plane in [self.s2, self.s3] {
            if plane.width == 0 || plane.height == 0 {
                return Err(Error::config("model", "prediction plane is empty"));
            }
        }
        if self.s2.stride * (self.s2.width + self.s2.offset.0) > iw || self.s2.stride * (self.s2.height + self.s2.offset.1) > ih {
            return Err(Error::config("2.5", "scale-2 plane extends past the input"));
        }
        if self.s3.stride * (self.s3.width + self.s3.offset.0) > iw || self.s3.stride * (self.s3.height + self.s3.offset.1) > ih {
            return Err(Error::config("3.4", "scale-3 plane extends past the input"));
        }
        let s2_size = (self.s2.width, self.s2.height);
        let s3_size = (self.s3.width, self.s3.height);
        let task_c = self.spec.task.out_channels();

        if scales.has(1) {
            let mut size = (iw, ih);
            let mut cin = 3;
            for l in &self.coarse {
                size = conv_size(&l.name, l.geom, size)?;
                add_conv(&l.name, 1, cin, l.out_channels, l.geom, &mut params);
                cin = l.out_channels;
                rows.push(PlanRow::new(&l.name, "conv", cin, size));
                if let Some(p) = l.pool {
                    size = pool_size(&l.name, p, size)?;
                    rows.push(PlanRow::new(&l.name, "pool", cin, size));
                }
            }
            let flat = cin * size.0 * size.1;
            params.push(ParamShape { name: "1.6.weight".into(), dims: vec![self.full_hidden, flat], fan_in: flat, scale: 1 });
            params.push(ParamShape { name: "1.6.bias".into(), dims: vec![self.full_hidden], fan_in: 0, scale: 1 });
            rows.push(PlanRow::new("1.6", "full", self.full_hidden, (1, 1)));
            let per_cell = if scales.has(2) { self.coarse_features } else { task_c };
            let out = per_cell * self.grid.0 * self.grid.1;
            params.push(ParamShape { name: "1.7.weight".into(), dims: vec![out, self.full_hidden], fan_in: self.full_hidden, scale: 1 });
            params.push(ParamShape { name: "1.7.bias".into(), dims: vec![out], fan_in: 0, scale: 1 });
            rows.push(PlanRow::new("1.7", "full", per_cell, self.grid));
            let up = (self.grid.0 * self.coarse_upsample, self.grid.1 * self.coarse_upsample);
            rows.push(PlanRow::new("1.7", "upsample", per_cell, up));
            crop_check("1.7", up, self.coarse_crop, s2_size)?;
            rows.push(PlanRow::new("1.7", "crop", per_cell, s2_size));
        }
        let entry = |scale: u8, e: &EntryConv, target: (usize, usize), prefix: &str, rows: &mut Vec<PlanRow>, params: &mut Vec<ParamShape>| -> Result<usize> {
            let mut total = 0;
            for (m, name) in self.entry_names(scale, prefix) {
                let mut size = conv_size(&name, e.geom, (iw, ih))?;
                add_conv(&name, scale, m.channels(), e.filters, e.geom, params);
                rows.push(PlanRow::new(&name, "conv", e.filters, size));
                if let Some(p) = e.pool {
                    size = pool_size(&name, p, size)?;
                    rows.push(PlanRow::new(&name, "pool", e.filters, size));
                }
                crop_check(&name, size, e.crop, target)?;
                total += e.filters;
            }
            rows.push(PlanRow::new(&format!("{prefix}{scale}.1"), "crop", total, target));
            Ok(total)
        };
        for (prefix, head) in self.spec.task.heads() {
            let c = head.channels();
            if scales.has(2) {
                let mut cin = entry(2, &self.entry2, s2_size, prefix, &mut rows, &mut params)?;
                if scales.has(1) {
                    cin += self.coarse_features;
                    rows.push(PlanRow::new(&format!("{prefix}2.1"), "concat", cin, s2_size));
                }
                for l in &self.scale2_mid {
                    let name = format!("{prefix}{}", l.name);
                    conv_size(&name, l.geom, s2_size)?;
                    add_conv(&name, 2, cin, l.out_channels, l.geom, &mut params);
                    cin = l.out_channels;
                    rows.push(PlanRow::new(&name, "conv", cin, s2_size));
                }
                let name = format!("{prefix}2.{}", self.scale2_mid.len() + 2);
                let g = ConvGeom::square(self.scale2_out_kernel, 1, self.scale2_out_kernel / 2);
                add_conv(&name, 2, cin, c, g, &mut params);
                rows.push(PlanRow::new(&name, "conv", c, s2_size));
            }
            if scales.has(3) {
                let up = (self.s2.width * self.s2_upsample, self.s2.height * self.s2_upsample);
                rows.push(PlanRow::new(&format!("{prefix}2.out"), "upsample", c, up));
                crop_check(&format!("{prefix}3.1"), up, self.s2_up_crop, s3_size)?;
                let mut cin = entry(3, &self.entry3, s3_size, prefix, &mut rows, &mut params)? + c;
                rows.push(PlanRow::new(&format!("{prefix}3.1"), "concat", cin, s3_size));
                for l in &self.scale3_mid {
                    let name = format!("{prefix}{}", l.name);
                    conv_size(&name, l.geom, s3_size)?;
                    add_conv(&name, 3, cin, l.out_channels, l.geom, &mut params);
                    cin = l.out_channels;
                    rows.push(PlanRow::new(&name, "conv", cin, s3_size));
                }
                let name = format!("{prefix}3.{}", self.scale3_mid.len() + 2);
                let g = ConvGeom::square(self.scale3_out_kernel, 1, self.scale3_out_kernel / 2);
                add_conv(&name, 3, cin, c, g, &mut params);
                rows.push(PlanRow::new(&name, "conv", c, s3_size));
            }
        }
        Ok(Layout { rows, params })
    }
}

/// One row of the shape plan: the map produced by a layer stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRow {
    pub layer: String,
    pub op: &'static str,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl PlanRow {
    fn new(layer: &str, op: &'static str, channels: usize, (width, height): (usize, usize)) -> Self {
        PlanRow { layer: layer.to_string(), op, channels, width, height }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
    /// 0 for biases.
    pub fan_in: usize,
    pub scale: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub rows: Vec<PlanRow>,
    pub params: Vec<ParamShape>,
}

impl Layout {
    pub fn find(&self, layer: &str, op: &str) -> Option<&PlanRow> {
        self.rows.iter().rev().find(|r| r.layer == layer && r.op == op)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("layer            op        chan    size\n");
        for r in &self.rows {
            s += &format!("{:<16} {:<9} {:>5} {:>4}x{}\n", r.layer, r.op, r.channels, r.width, r.height);
        }
        s
    }
}

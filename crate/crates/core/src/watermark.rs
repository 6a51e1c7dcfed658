//! The watermark pattern `x_A`: geometric construction, dynamic amplitude scaling and the
//! `b_t` interpolant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::schedule::{F1Mode, VarianceSchedule};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkShape {
    Square,
    Plus,
    /// Two diagonals (`x`).
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkPosition {
    BottomRight,
    Center,
}

/// How the pattern amplitude is matched to the noised data at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "factor")]
pub enum ScaleMode {
    /// One factor from the max-abs over the whole minibatch noised to the element's step.
    #[default]
    Batch,
    /// Factor from the element's own noised sample.
    PerSample,
    /// Fixed multiplier; the only mode under which `x_A` is truly static.
    Static(f64),
}

/// Distance in pixels between a bottom-right mark and the canvas border.
pub const BOTTOM_RIGHT_MARGIN: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkGeometry {
    pub shape: MarkShape,
    pub position: MarkPosition,
    pub size: usize,
}

impl MarkGeometry {
    /// Top-left corner of the mark's bounding box on an `height x width` canvas.
    pub fn origin(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let margin = match self.position {
            MarkPosition::BottomRight => BOTTOM_RIGHT_MARGIN,
            MarkPosition::Center => 0,
        };
        if self.size == 0 || self.size + margin > height || self.size + margin > width {
            return Err(Error::Watermark(format!(
                "{}px mark does not fit a {height}x{width} canvas",
                self.size
            )));
        }
        Ok(match self.position {
            MarkPosition::BottomRight => (height - self.size - margin, width - self.size - margin),
            MarkPosition::Center => ((height - self.size) / 2, (width - self.size) / 2),
        })
    }

    /// Stroke width of plus and cross marks: about a third of the size, at least 3, and with
    /// the same parity as the size so the stroke is centred.
    pub fn stroke(&self) -> usize {
        let mut stroke = (self.size / 3).max(3).min(self.size);
        if (self.size - stroke) % 2 != 0 {
            stroke += 1;
        }
        stroke.min(self.size)
    }

    /// Whether local cell `(i, j)` of the bounding box belongs to the mark.
    pub fn covers(&self, i: usize, j: usize) -> bool {
        let n = self.size as isize;
        let (i, j) = (i as isize, j as isize);
        match self.shape {
            MarkShape::Square => true,
            MarkShape::Plus => {
                let lo = (n - self.stroke() as isize) / 2;
                let hi = lo + self.stroke() as isize;
                (lo..hi).contains(&i) || (lo..hi).contains(&j)
            }
            MarkShape::Cross => {
                let r = (self.stroke() / 2) as isize;
                (i - j).abs() <= r || (i + j - (n - 1)).abs() <= r
            }
        }
    }
}

/// Rasterise a mark. Pixels outside the mark are exactly zero; mark pixels in channel `c`
/// take `color[c]`.
pub fn make_pattern<S: Scalar>(
    geometry: MarkGeometry,
    canvas: (usize, usize, usize),
    color: &[f64],
) -> Result<Image<S>> {
    let (channels, height, width) = canvas;
    if color.len() != channels {
        return Err(Error::Watermark(format!(
            "{} colour values for {channels} channels",
            color.len()
        )));
    }
    if let Some(c) = color.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Watermark(format!("colour value {c} outside [0, 1]")));
    }
    let (y0, x0) = geometry.origin(height, width)?;
    let mut img = Image::zeros(channels, height, width);
    for i in 0..geometry.size {
        for j in 0..geometry.size {
            if geometry.covers(i, j) {
                for (c, &v) in color.iter().enumerate() {
                    img.set(c, y0 + i, x0 + j, S::of(v));
                }
            }
        }
    }
    Ok(img)
}

/// Rescale `pattern` so its maximum equals the max-abs value over `reference`.
/// Returns the scaled pattern and the factor used.
pub fn scale_pattern_dynamic<S: Scalar>(
    pattern: &Image<S>,
    reference: &[Image<S>],
) -> Result<(Image<S>, f64)> {
    if reference.is_empty() {
        return Err(Error::Watermark("empty reference batch".into()));
    }
    let reference_max = reference
        .iter()
        .map(|x| x.max_abs().as_f64())
        .fold(0.0, f64::max);
    let factor = dynamic_scale_factor(pattern, reference_max)?;
    Ok((pattern.scale(S::of(factor)), factor))
}

/// `reference_max / max(pattern)`; fails for patterns without a positive maximum.
pub fn dynamic_scale_factor<S: Scalar>(pattern: &Image<S>, reference_max: f64) -> Result<f64> {
    let pattern_max = pattern.max().as_f64();
    if !(pattern_max > 0.0) {
        return Err(Error::Watermark(
            "pattern has no positive pixel; dynamic scale undefined".into(),
        ));
    }
    Ok(reference_max / pattern_max)
}

/// `b_t = f1 * x0 + f2 * x_A`, elementwise.
pub fn compute_bt<S: Scalar>(
    x0: &Image<S>,
    scaled_pattern: &Image<S>,
    f1: f64,
    f2: f64,
) -> Result<Image<S>> {
    let (f1, f2) = (S::of(f1), S::of(f2));
    x0.zip_map(scaled_pattern, |x, a| f1 * x + f2 * a)
}

/// Everything that defines an embedded watermark.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkSpec<S> {
    pattern: Image<S>,
    gamma: f64,
    t_a: usize,
    f1_mode: F1Mode,
    scale_mode: ScaleMode,
    channel_mask: Vec<bool>,
    geometry: Option<MarkGeometry>,
}

impl<S: Scalar> WatermarkSpec<S> {
    /// `gamma` must lie in `(0, 1]` and `t_a` in `[1, T]`.
    pub fn new(
        pattern: Image<S>,
        gamma: f64,
        t_a: usize,
        f1_mode: F1Mode,
        schedule: &VarianceSchedule,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Watermark(format!("gamma = {gamma} outside (0, 1]")));
        }
        if t_a < 1 || t_a > schedule.steps() {
            return Err(Error::Watermark(format!(
                "t_A = {t_a} outside [1, {}]",
                schedule.steps()
            )));
        }
        if !pattern.is_finite() {
            return Err(Error::Watermark("pattern has non-finite pixels".into()));
        }
        let channel_mask = vec![true; pattern.channels()];
        Ok(Self {
            pattern,
            gamma,
            t_a,
            f1_mode,
            scale_mode: ScaleMode::default(),
            channel_mask,
            geometry: None,
        })
    }

    /// Generated-mark constructor.
    pub fn from_geometry(
        geometry: MarkGeometry,
        canvas: (usize, usize, usize),
        color: &[f64],
        gamma: f64,
        t_a: usize,
        f1_mode: F1Mode,
        schedule: &VarianceSchedule,
    ) -> Result<Self> {
        let pattern = make_pattern(geometry, canvas, color)?;
        let mut spec = Self::new(pattern, gamma, t_a, f1_mode, schedule)?;
        spec.geometry = Some(geometry);
        Ok(spec)
    }

    pub fn with_scale_mode(mut self, mode: ScaleMode) -> Self {
        self.scale_mode = mode;
        self
    }

    /// Restrict the mark to the channels whose mask entry is true.
    pub fn with_channel_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.pattern.channels() {
            return Err(Error::Watermark(format!(
                "channel mask of length {} for {} channels",
                mask.len(),
                self.pattern.channels()
            )));
        }
        let (_, h, w) = self.pattern.shape();
        for (c, keep) in mask.iter().enumerate() {
            if !keep {
                for y in 0..h {
                    for x in 0..w {
                        self.pattern.set(c, y, x, S::zero());
                    }
                }
            }
        }
        self.channel_mask = mask;
        Ok(self)
    }

    /// Same spec with an all-zero pattern (the zero-watermark baseline).
    pub fn zeroed(&self) -> Self {
        let (c, h, w) = self.pattern.shape();
        Self {
            pattern: Image::zeros(c, h, w),
            ..self.clone()
        }
    }

    pub fn pattern(&self) -> &Image<S> {
        &self.pattern
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn t_a(&self) -> usize {
        self.t_a
    }

    pub fn f1_mode(&self) -> F1Mode {
        self.f1_mode
    }

    pub fn scale_mode(&self) -> ScaleMode {
        self.scale_mode
    }

    pub fn channel_mask(&self) -> &[bool] {
        &self.channel_mask
    }

    pub fn geometry(&self) -> Option<MarkGeometry> {
        self.geometry
    }

    /// True when the pattern carries no signal.
    pub fn is_blank(&self) -> bool {
        self.pattern.count_nonzero() == 0
    }

    /// Pattern scale for a step whose reference noised samples have max-abs `reference_max`.
    /// Blank patterns are left untouched.
    pub fn scale_for(&self, reference_max: f64) -> Result<f64> {
        if self.is_blank() {
            return Ok(1.0);
        }
        match self.scale_mode {
            ScaleMode::Static(k) => Ok(k),
            ScaleMode::Batch | ScaleMode::PerSample => {
                dynamic_scale_factor(&self.pattern, reference_max)
            }
        }
    }

    pub fn scaled_pattern(&self, factor: f64) -> Image<S> {
        self.pattern.scale(S::of(factor))
    }

    pub fn to_record(&self) -> WatermarkRecord {
        WatermarkRecord {
            gamma: self.gamma,
            t_a: self.t_a,
            f1_mode: self.f1_mode,
            scale_mode: self.scale_mode,
            channel_mask: self.channel_mask.clone(),
            geometry: self.geometry,
            shape: self.pattern.shape(),
            pattern: self.pattern.data().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_record(record: &WatermarkRecord, schedule: &VarianceSchedule) -> Result<Self> {
        let (c, h, w) = record.shape;
        let pattern = Image::from_vec(c, h, w, record.pattern.iter().map(|&v| S::of(v)).collect())?;
        let mut spec = Self::new(pattern, record.gamma, record.t_a, record.f1_mode, schedule)?
            .with_scale_mode(record.scale_mode)
            .with_channel_mask(record.channel_mask.clone())?;
        spec.geometry = record.geometry;
        Ok(spec)
    }
}

/// Serializable snapshot of a [`WatermarkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkRecord {
    pub gamma: f64,
    pub t_a: usize,
    pub f1_mode: F1Mode,
    pub scale_mode: ScaleMode,
    pub channel_mask: Vec<bool>,
    pub geometry: Option<MarkGeometry>,
    pub shape: (usize, usize, usize),
    pub pattern: Vec<f64>,
}

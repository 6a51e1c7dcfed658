//! Shape-based watermark detection on an averaged snapshot.

pub mod contour;
pub mod moments;
pub mod preprocess;

use std::io::Write;

use serde::{Deserialize, Serialize, Serializer};

pub use contour::{contour_area, find_contours, Point};
pub use moments::{contour_similarity, hu_moments, polygon_moments};
pub use preprocess::{preprocess, Binarization, EdgeParams, Gray};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_MIN_AREA_RATIO: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    /// Verdict is positive when the best dissimilarity is at or below this.
    pub threshold: f64,
    pub edgesconvert: bool,
    pub binarization: Binarization,
    pub edges: EdgeParams,
    /// Target contours smaller than this fraction of the smallest pattern contour are skipped.
    pub min_area_ratio: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            edgesconvert: false,
            binarization: Binarization::default(),
            edges: EdgeParams::default(),
            min_area_ratio: DEFAULT_MIN_AREA_RATIO,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::Config(format!("threshold {} must be >= 0", self.threshold)));
        }
        if !(self.min_area_ratio.is_finite() && self.min_area_ratio >= 0.0) {
            return Err(Error::Config(format!(
                "min_area_ratio {} must be >= 0",
                self.min_area_ratio
            )));
        }
        let e = &self.edges;
        if e.blur_size == 0 || e.blur_size % 2 == 0 || !(e.blur_sigma > 0.0) || !(e.low <= e.high) {
            return Err(Error::Config(format!("invalid edge parameters {e:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContourCounts {
    pub target: usize,
    pub pattern: usize,
    /// Target contours that took part in the comparison.
    pub compared: usize,
}

fn inf_as_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: bool,
    /// Smallest pairwise dissimilarity; infinite (JSON `null`) when nothing was comparable.
    #[serde(serialize_with = "inf_as_null", deserialize_with = "null_as_inf")]
    pub best_similarity: f64,
    pub threshold: f64,
    pub contour_counts: ContourCounts,
    pub stages: Vec<String>,
    pub edgesconvert: bool,
}

impl VerificationReport {
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

/// Best match between the contours of `target` and those of `pattern`.
pub fn verify<S: Scalar>(
    target: &Image<S>,
    pattern: &Image<S>,
    options: &VerifyOptions,
) -> Result<VerificationReport> {
    options.validate()?;
    if !target.is_finite() || !pattern.is_finite() {
        return Err(Error::NonFinite("verification input".into()));
    }
    if target.channels() != pattern.channels() {
        return Err(Error::ShapeMismatch {
            expected: pattern.shape(),
            got: target.shape(),
        });
    }
    let (tb, stages) = preprocess(target, options.edgesconvert, options.binarization, &options.edges);
    let (pb, _) = preprocess(pattern, options.edgesconvert, options.binarization, &options.edges);
    let target_contours = find_contours(&tb);
    let pattern_contours: Vec<Vec<Point>> = find_contours(&pb)
        .into_iter()
        .filter(|c| contour_area(c) > 0.0)
        .collect();

    let min_area = pattern_contours
        .iter()
        .map(|c| contour_area(c))
        .fold(f64::INFINITY, f64::min)
        * options.min_area_ratio;
    let candidates: Vec<&Vec<Point>> = target_contours
        .iter()
        .filter(|c| contour_area(c) > 0.0 && contour_area(c) >= min_area)
        .collect();

    let mut best = f64::INFINITY;
    for t in &candidates {
        for p in &pattern_contours {
            if let Some(d) = contour_similarity(t, p) {
                best = best.min(d);
            }
        }
    }
    Ok(VerificationReport {
        verdict: best <= options.threshold,
        best_similarity: best,
        threshold: options.threshold,
        contour_counts: ContourCounts {
            target: target_contours.len(),
            pattern: pattern_contours.len(),
            compared: candidates.len(),
        },
        stages,
        edgesconvert: options.edgesconvert,
    })
}

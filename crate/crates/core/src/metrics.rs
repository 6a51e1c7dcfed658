//! Sample-quality metrics computed from externally extracted features or class probabilities.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nac::{ArrayData, Container};

pub const SYMMETRY_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_KNN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Real,
    Generated,
}

impl FeatureSource {
    fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Real => "real",
            FeatureSource::Generated => "generated",
        }
    }
}

/// `rows × dim` features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
    pub source: FeatureSource,
    pub extractor_id: String,
}

impl FeatureSet {
    pub fn new(
        features: Vec<f64>,
        rows: usize,
        dim: usize,
        source: FeatureSource,
        extractor_id: impl Into<String>,
    ) -> Result<Self> {
        if features.len() != rows * dim {
            return Err(Error::Input(format!(
                "{} feature values for {rows}x{dim}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature rows".into()));
        }
        Ok(Self {
            features,
            rows,
            dim,
            source,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Sample mean and covariance (denominator `N - 1`).
    pub fn mean_cov(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if self.rows < 2 {
            return Err(Error::Input("need at least two feature rows".into()));
        }
        let x = DMatrix::from_row_slice(self.rows, self.dim, &self.features);
        let mean = x.row_mean().transpose();
        let mut centred = x;
        for mut row in centred.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centred.transpose() * &centred / (self.rows - 1) as f64;
        Ok((mean, cov))
    }

    /// Features are stored as `f32`, matching typical extractor output.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert_array(
            "features",
            vec![self.rows, self.dim],
            ArrayData::F32(self.features.iter().map(|&v| v as f32).collect()),
        )?;
        c.insert_attr("extractor_id", self.extractor_id.clone());
        c.insert_attr("source", self.source.as_str());
        Ok(c)
    }

    /// `source` defaults to `fallback` when the file does not record it.
    pub fn from_container(c: &Container, fallback: FeatureSource) -> Result<Self> {
        let a = c.array("features")?;
        let [rows, dim] = a.shape[..] else {
            return Err(Error::Container(format!("features must be 2-d, got {:?}", a.shape)));
        };
        let source = match c.attrs.get("source") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => fallback,
        };
        Self::new(a.data.to_scalars(), rows, dim, source, c.attr_str("extractor_id")?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, fallback: FeatureSource) -> Result<Self> {
        Self::from_container(&Container::load(path)?, fallback)
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Input(format!("{name} is not square")));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Input(format!("{name} is asymmetric by {asym:e}")));
    }
    Ok(())
}

/// Symmetric PSD square root with negative eigenvalues clipped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians.
///
/// `tr (C1 C2)^{1/2}` is evaluated as `tr (C1^{1/2} C2 C1^{1/2})^{1/2}`, whose argument is
/// symmetric PSD.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::Input("dimension mismatch between Gaussians".into()));
    }
    check_symmetric(cov1, "cov1")?;
    check_symmetric(cov2, "cov2")?;
    let all_finite = mu1.iter().chain(mu2.iter()).chain(cov1.iter()).chain(cov2.iter()).all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::NonFinite("Gaussian parameters".into()));
    }
    let s1 = sqrtm_psd(cov1);
    let inner = &s1 * cov2 * &s1;
    let cross = sqrtm_psd(&inner).trace();
    let diff = mu1 - mu2;
    let value = diff.norm_squared() + cov1.trace() + cov2.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidValue {
    pub value: f64,
    /// Set when either set has no more rows than dimensions.
    pub rank_deficient: bool,
}

fn fid_kernel(real: &FeatureSet, generated: &FeatureSet) -> Result<FidValue> {
    if real.dim != generated.dim {
        return Err(Error::Input(format!(
            "feature dimensions differ: {} vs {}",
            real.dim, generated.dim
        )));
    }
    if real.extractor_id != generated.extractor_id {
        return Err(Error::Input(format!(
            "extractors differ: `{}` vs `{}`",
            real.extractor_id, generated.extractor_id
        )));
    }
    let (m1, c1) = real.mean_cov()?;
    let (m2, c2) = generated.mean_cov()?;
    Ok(FidValue {
        value: frechet_distance(&m1, &c1, &m2, &c2)?,
        rank_deficient: real.rows <= real.dim || generated.rows <= generated.dim,
    })
}

pub fn fid_from_features(real: &FeatureSet, generated: &FeatureSet) -> Result<FidValue> {
    fid_kernel(real, generated)
}

/// Same kernel as FID; both sets must come from a spatial extractor (id containing `spatial`).
pub fn sfid_from_features(real: &FeatureSet, generated: &FeatureSet) -> Result<FidValue> {
    for s in [real, generated] {
        if !s.extractor_id.to_ascii_lowercase().contains("spatial") {
            return Err(Error::Input(format!(
                "sFID needs spatial features, got extractor `{}`",
                s.extractor_id
            )));
        }
    }
    fid_kernel(real, generated)
}

/// Inception score over `splits` contiguous chunks; returns mean and population std.
pub fn inception_score_from_probs(
    probs: &[f64],
    rows: usize,
    classes: usize,
    splits: usize,
) -> Result<(f64, f64)> {
    if probs.len() != rows * classes || classes == 0 {
        return Err(Error::Input(format!("{} values for {rows}x{classes}", probs.len())));
    }
    if splits == 0 || splits > rows {
        return Err(Error::Input(format!("{splits} splits for {rows} rows")));
    }
    for (i, row) in probs.chunks_exact(classes).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("row {i} is not a probability vector")));
        }
    }
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let (lo, hi) = (s * rows / splits, (s + 1) * rows / splits);
        let chunk = &probs[lo * classes..hi * classes];
        let n = (hi - lo) as f64;
        let mut marginal = vec![0.0; classes];
        for row in chunk.chunks_exact(classes) {
            for (m, &p) in marginal.iter_mut().zip(row) {
                *m += p / n;
            }
        }
        let mean_kl: f64 = chunk
            .chunks_exact(classes)
            .map(|row| {
                row.iter()
                    .zip(&marginal)
                    .filter(|(&p, _)| p > 0.0)
                    .map(|(&p, &m)| p * (p.ln() - m.ln()))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n;
        scores.push(mean_kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Class probabilities from a container with a 2-d `probs` array.
pub fn load_probs(path: impl AsRef<Path>) -> Result<(Vec<f64>, usize, usize)> {
    let c = Container::load(path)?;
    let a = c.array("probs")?;
    let [rows, classes] = a.shape[..] else {
        return Err(Error::Container(format!("probs must be 2-d, got {:?}", a.shape)));
    };
    Ok((a.data.to_scalars(), rows, classes))
}

pub fn save_probs(path: impl AsRef<Path>, probs: &[f64], rows: usize, classes: usize) -> Result<()> {
    let mut c = Container::new();
    c.insert_array(
        "probs",
        vec![rows, classes],
        ArrayData::F32(probs.iter().map(|&v| v as f32).collect()),
    )?;
    c.save(path)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each row to its k-th nearest other row.
fn knn_radii(set: &FeatureSet, k: usize) -> Vec<f64> {
    let mut d = Vec::with_capacity(set.rows);
    (0..set.rows)
        .map(|i| {
            d.clear();
            d.extend((0..set.rows).filter(|&j| j != i).map(|j| sq_dist(set.row(i), set.row(j))));
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect()
}

fn coverage(manifold: &FeatureSet, radii: &[f64], probe: &FeatureSet) -> f64 {
    let inside = (0..probe.rows)
        .filter(|&i| (0..manifold.rows).any(|j| sq_dist(probe.row(i), manifold.row(j)) <= radii[j]))
        .count();
    inside as f64 / probe.rows as f64
}

/// k-NN manifold precision and recall.
pub fn precision_recall_knn(real: &FeatureSet, generated: &FeatureSet, k: usize) -> Result<(f64, f64)> {
    if real.dim != generated.dim {
        return Err(Error::Input("feature dimensions differ".into()));
    }
    if real.rows == 0 || generated.rows == 0 {
        return Err(Error::Input("empty feature set".into()));
    }
    if k == 0 || k >= real.rows || k >= generated.rows {
        return Err(Error::Config(format!(
            "k = {k} needs 1 <= k < N (real {}, generated {})",
            real.rows, generated.rows
        )));
    }
    let precision = coverage(real, &knn_radii(real, k), generated);
    let recall = coverage(generated, &knn_radii(generated, k), real);
    Ok((precision, recall))
}

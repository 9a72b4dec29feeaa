//! Image-to-feature embedding behind a pluggable backend, within-video
//! feature pooling, and feature conditioning: full-rank PCA projection
//! followed by root normalization.
//!
//! File formats:
//! - Precomputed embeddings (`EMB1`): magic `EMB1`, u32 LE dimension D,
//!   then records of (u16 LE id length, id bytes, D little-endian f32).
//! - Persisted PCA model (`PCA1`): magic `PCA1`, u32 LE D, mean as D f32,
//!   then the component matrix row-major (D rows, each one component,
//!   descending variance), all little-endian f32.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::raster::RasterImage;

/// Default root-normalization exponent.
pub const DEFAULT_ROOT_EXPONENT: f64 = 0.65;

/// Toy backend embedding dimension (32 x 32 grayscale).
pub const TOY_DIM: usize = 1024;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("embedding not found for id {0:?}")]
    EmbeddingNotFound(String),
    #[error("dimension mismatch: model is {model}, input is {input}")]
    DimensionMismatch { model: usize, input: usize },
    #[error("need at least 2 samples for PCA, got {0}")]
    TooFewSamples(usize),
    #[error("zero variance: all training samples identical")]
    ZeroVariance,
    #[error("root exponent must be in (0, 1], got {0}")]
    BadExponent(f64),
    #[error("bad file magic (expected {expected:?})")]
    BadMagic { expected: &'static str },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A D-dimensional embedding of one image or frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source_id: String,
    /// Set when the embedding collapsed to zero (constant input).
    pub degenerate: bool,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, source_id: impl Into<String>) -> Self {
        FeatureVector {
            values,
            source_id: source_id.into(),
            degenerate: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Media grouping for video pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediaType {
    Image,
    Video,
}

/// A feature tagged with the media it came from.
#[derive(Debug, Clone)]
pub struct MediaFeature {
    pub media_id: String,
    pub media_type: MediaType,
    pub feature: FeatureVector,
}

/// Pluggable embedding backend.
pub trait EmbeddingBackend {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, image: &RasterImage, source_id: &str) -> Result<FeatureVector, FeatureError>;
}

/// Deterministic stand-in embedding: grayscale, resize to 32x32, subtract
/// the mean, scale to unit norm, flatten.
#[derive(Debug, Default, Clone, Copy)]
pub struct ToyBackend;

impl EmbeddingBackend for ToyBackend {
    fn name(&self) -> &str {
        "toy32"
    }

    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn embed(&self, image: &RasterImage, source_id: &str) -> Result<FeatureVector, FeatureError> {
        let gray = image.to_gray().resize(32, 32);
        let mut v: Vec<f64> = gray.data.iter().map(|&s| s as f64).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let degenerate = norm < 1e-12;
        if !degenerate {
            for x in v.iter_mut() {
                *x /= norm;
            }
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(FeatureVector {
            values: v,
            source_id: source_id.to_string(),
            degenerate,
        })
    }
}

/// Backend serving features from a preloaded id -> vector table.
#[derive(Debug, Clone)]
pub struct PrecomputedBackend {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedBackend {
    pub fn new(dim: usize, table: HashMap<String, Vec<f64>>) -> Self {
        PrecomputedBackend { dim, table }
    }

    /// All stored ids, in arbitrary order.
    pub fn ids(&self) -> Vec<String> {
        self.table.keys().cloned().collect()
    }

    pub fn lookup(&self, id: &str) -> Result<FeatureVector, FeatureError> {
        self.table
            .get(id)
            .map(|v| FeatureVector::new(v.clone(), id))
            .ok_or_else(|| FeatureError::EmbeddingNotFound(id.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != b"EMB1" {
            return Err(FeatureError::BadMagic { expected: "EMB1" });
        }
        let dim = file.read_u32::<LittleEndian>()? as usize;
        let mut table = HashMap::new();
        loop {
            let id_len = match file.read_u16::<LittleEndian>() {
                Ok(n) => n as usize,
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            let mut id = vec![0u8; id_len];
            file.read_exact(&mut id)?;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(file.read_f32::<LittleEndian>()? as f64);
            }
            table.insert(String::from_utf8_lossy(&id).into_owned(), values);
        }
        Ok(PrecomputedBackend { dim, table })
    }

    pub fn save(path: &Path, dim: usize, entries: &[(String, Vec<f64>)]) -> Result<(), FeatureError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(b"EMB1")?;
        file.write_u32::<LittleEndian>(dim as u32)?;
        for (id, values) in entries {
            debug_assert_eq!(values.len(), dim);
            file.write_u16::<LittleEndian>(id.len() as u16)?;
            file.write_all(id.as_bytes())?;
            for &v in values {
                file.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        Ok(())
    }
}

impl EmbeddingBackend for PrecomputedBackend {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _image: &RasterImage, source_id: &str) -> Result<FeatureVector, FeatureError> {
        self.lookup(source_id)
    }
}

/// Pool features within each video (element-wise mean over its frames);
/// still images pass through untouched. Output order follows first
/// appearance of each media id. Empty groups are skipped.
pub fn video_pool(features: &[MediaFeature]) -> Vec<FeatureVector> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&MediaFeature>> = HashMap::new();
    for f in features {
        if !groups.contains_key(f.media_id.as_str()) {
            order.push(&f.media_id);
        }
        groups.entry(&f.media_id).or_default().push(f);
    }
    let mut out = Vec::new();
    for id in order {
        let group = &groups[id];
        match group[0].media_type {
            MediaType::Image => {
                for f in group {
                    out.push(f.feature.clone());
                }
            }
            MediaType::Video => {
                let dim = group[0].feature.dim();
                let mut mean = vec![0.0f64; dim];
                for f in group.iter() {
                    for (m, v) in mean.iter_mut().zip(f.feature.values.iter()) {
                        *m += v;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= group.len() as f64;
                }
                out.push(FeatureVector::new(mean, id));
            }
        }
    }
    out
}

/// Full-rank PCA model: mean and a DxD orthonormal component matrix, rows
/// sorted by descending variance. No components are cut.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// Row k is the k-th component.
    pub components: DMatrix<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let d = self.dim();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(b"PCA1")?;
        file.write_u32::<LittleEndian>(d as u32)?;
        for i in 0..d {
            file.write_f32::<LittleEndian>(self.mean[i] as f32)?;
        }
        for r in 0..d {
            for c in 0..d {
                file.write_f32::<LittleEndian>(self.components[(r, c)] as f32)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != b"PCA1" {
            return Err(FeatureError::BadMagic { expected: "PCA1" });
        }
        let d = file.read_u32::<LittleEndian>()? as usize;
        let mut mean = DVector::zeros(d);
        for i in 0..d {
            mean[i] = file.read_f32::<LittleEndian>()? as f64;
        }
        let mut components = DMatrix::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                components[(r, c)] = file.read_f32::<LittleEndian>()? as f64;
            }
        }
        Ok(PcaModel { mean, components })
    }
}

/// Fit a full-rank PCA basis: mean-centered, eigendecomposition of the
/// covariance, components sorted by descending variance. Rank-deficient
/// directions get (near-)zero variance but remain in the basis, so the
/// projection is a pure rotation.
pub fn pca_fit(samples: &[FeatureVector]) -> Result<PcaModel, FeatureError> {
    let n = samples.len();
    if n < 2 {
        return Err(FeatureError::TooFewSamples(n));
    }
    let d = samples[0].dim();
    for s in samples {
        if s.dim() != d {
            return Err(FeatureError::DimensionMismatch {
                model: d,
                input: s.dim(),
            });
        }
    }
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(&s.values);
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    let mut total_var = 0.0;
    for s in samples {
        let c = DVector::from_column_slice(&s.values) - &mean;
        total_var += c.norm_squared();
        cov += &c * c.transpose();
    }
    if total_var < 1e-24 {
        return Err(FeatureError::ZeroVariance);
    }
    cov /= (n - 1) as f64;

    let eig = cov.symmetric_eigen();
    // Sort descending by eigenvalue; fix component sign so the largest-
    // magnitude entry is positive (deterministic basis).
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = DMatrix::zeros(d, d);
    for (row, &k) in order.iter().enumerate() {
        let mut comp = eig.eigenvectors.column(k).clone_owned();
        let lead = comp
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if lead < 0.0 {
            comp.neg_mut();
        }
        components.row_mut(row).copy_from(&comp.transpose());
    }
    Ok(PcaModel { mean, components })
}

/// Project a feature through the PCA model: components * (x - mean). The
/// output keeps the full dimension.
pub fn pca_apply(model: &PcaModel, x: &FeatureVector) -> Result<FeatureVector, FeatureError> {
    if x.dim() != model.dim() {
        return Err(FeatureError::DimensionMismatch {
            model: model.dim(),
            input: x.dim(),
        });
    }
    let centered = DVector::from_column_slice(&x.values) - &model.mean;
    let projected = &model.components * centered;
    Ok(FeatureVector {
        values: projected.iter().cloned().collect(),
        source_id: x.source_id.clone(),
        degenerate: x.degenerate,
    })
}

/// Element-wise signed power: sign(x) * |x|^c.
pub fn root_normalize(x: &FeatureVector, exponent: f64) -> Result<FeatureVector, FeatureError> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(FeatureError::BadExponent(exponent));
    }
    Ok(FeatureVector {
        values: x
            .values
            .iter()
            .map(|&v| v.signum() * v.abs().powf(exponent))
            .collect(),
        source_id: x.source_id.clone(),
        degenerate: x.degenerate,
    })
}

//! Image-level NCC similarity and template-level score fusion: SoftMax
//! pooling averaged over an integer beta range, with min/max/mean
//! baselines, plus mutual-view selection for pose-aware matching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Beta grid for score fusion: the 21 integers 0..=20.
pub const FUSE_BETA_MAX: u32 = 20;

/// Yaw magnitude at or below which a face counts as near-frontal.
pub const NEAR_FRONTAL_DEG: f64 = 30.0;
/// Yaw magnitude at or above which a face counts as near-profile.
pub const NEAR_PROFILE_DEG: f64 = 60.0;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("empty score list")]
    EmptyScores,
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("feature dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("template {0:?} has no features in any variant")]
    EmptyTemplate(String),
}

/// Pairwise similarity matrix between the features of two templates.
/// Rows index template P, columns index template Q.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
}

impl ScoreMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }
}

/// Template pooling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Min,
    Max,
    Mean,
    Softmax,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Strategy::Min),
            "max" => Ok(Strategy::Max),
            "mean" => Ok(Strategy::Mean),
            "softmax" => Ok(Strategy::Softmax),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub strategy: Strategy,
    /// Inclusive integer beta bounds for the softmax average.
    pub beta_min: u32,
    pub beta_max: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategy: Strategy::Softmax,
            beta_min: 0,
            beta_max: FUSE_BETA_MAX,
        }
    }
}

/// All features of one template, split by how the source images were
/// prepared, with the per-item estimated yaw alongside.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemplateFeatures {
    pub template_id: String,
    pub subject_id: String,
    pub in_plane: Vec<Vec<f64>>,
    pub rendered: Vec<Vec<f64>>,
    pub yaws: Vec<f64>,
}

impl TemplateFeatures {
    pub fn is_empty(&self) -> bool {
        self.in_plane.is_empty() && self.rendered.is_empty()
    }

    /// Median absolute yaw of the template's items, 0 if none recorded.
    pub fn representative_yaw(&self) -> f64 {
        if self.yaws.is_empty() {
            return 0.0;
        }
        let mut mags: Vec<f64> = self.yaws.iter().map(|y| y.abs()).collect();
        mags.sort_by(f64::total_cmp);
        mags[mags.len() / 2]
    }
}

/// Pearson-form normalized cross correlation: mean-center both vectors,
/// scale to unit norm, dot. A zero-variance vector yields Ok(0) with the
/// degenerate flag rather than an error.
pub fn ncc(x: &[f64], y: &[f64]) -> Result<f64, FusionError> {
    ncc_flagged(x, y).map(|(s, _)| s)
}

/// As [`ncc`], also reporting whether either input was zero-variance.
pub fn ncc_flagged(x: &[f64], y: &[f64]) -> Result<(f64, bool), FusionError> {
    if x.len() != y.len() {
        return Err(FusionError::DimensionMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (a, b) = (a - mx, b - my);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx < 1e-24 || ny < 1e-24 {
        return Ok((0.0, true));
    }
    Ok(((dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0), false))
}

/// SoftMax pooling: sum(s * e^{beta s}) / sum(e^{beta s}). Beta 0 is the
/// arithmetic mean; large beta approaches the maximum. Exponents are
/// shifted by the max score for stability, which leaves the ratio intact.
pub fn softmax_pool(scores: &[f64], beta: f64) -> Result<f64, FusionError> {
    if scores.is_empty() {
        return Err(FusionError::EmptyScores);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(FusionError::NonFiniteScore(bad));
    }
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for &s in scores {
        let w = (beta * (s - top)).exp();
        num += s * w;
        den += w;
    }
    Ok(num / den)
}

/// Average of the SoftMax pools over the integer betas 0..=20.
pub fn fuse_scores(scores: &[f64]) -> Result<f64, FusionError> {
    fuse_scores_range(scores, 0, FUSE_BETA_MAX)
}

pub fn fuse_scores_range(scores: &[f64], beta_min: u32, beta_max: u32) -> Result<f64, FusionError> {
    debug_assert!(beta_min <= beta_max);
    let mut sum = 0.0;
    for beta in beta_min..=beta_max {
        sum += softmax_pool(scores, beta as f64)?;
    }
    Ok(sum / (beta_max - beta_min + 1) as f64)
}

/// Min, max, or mean of the scores.
pub fn baseline_pool(scores: &[f64], strategy: Strategy) -> Result<f64, FusionError> {
    if scores.is_empty() {
        return Err(FusionError::EmptyScores);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(FusionError::NonFiniteScore(bad));
    }
    Ok(match strategy {
        Strategy::Min => scores.iter().cloned().fold(f64::INFINITY, f64::min),
        Strategy::Max => scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Strategy::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        Strategy::Softmax => fuse_scores(scores)?,
    })
}

/// Pick the yaw to render both faces to before matching: frontal when both
/// are near-frontal, 75 when both are near-profile, 40 otherwise.
pub fn select_mutual_view(yaw_p: f64, yaw_q: f64) -> f64 {
    let (p, q) = (yaw_p.abs(), yaw_q.abs());
    if p <= NEAR_FRONTAL_DEG && q <= NEAR_FRONTAL_DEG {
        0.0
    } else if p >= NEAR_PROFILE_DEG && q >= NEAR_PROFILE_DEG {
        75.0
    } else {
        40.0
    }
}

/// All pairwise NCC scores between two feature lists, rows parallelized.
pub fn score_matrix(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<ScoreMatrix, FusionError> {
    let entries: Vec<f64> = p
        .par_iter()
        .map(|fp| q.iter().map(|fq| ncc(fp, fq)).collect::<Result<Vec<f64>, _>>())
        .collect::<Result<Vec<Vec<f64>>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(ScoreMatrix {
        rows: p.len(),
        cols: q.len(),
        entries,
    })
}

/// Template similarity result, flagged when one variant list was missing
/// on either side and only the other contributed.
#[derive(Debug, Clone, Copy)]
pub struct TemplateScore {
    pub score: f64,
    pub degraded: bool,
}

fn fused_over(config: &FusionConfig, scores: &[f64]) -> Result<f64, FusionError> {
    match config.strategy {
        Strategy::Softmax => fuse_scores_range(scores, config.beta_min, config.beta_max),
        other => baseline_pool(scores, other),
    }
}

/// Score two templates: fuse the in-plane pairwise scores and the
/// mutually-rendered pairwise scores separately, then average the two.
/// If one variant has no features on either side, the remaining fused
/// value is returned alone with the degraded flag set.
pub fn template_similarity(
    p: &TemplateFeatures,
    q: &TemplateFeatures,
    config: &FusionConfig,
) -> Result<TemplateScore, FusionError> {
    if p.is_empty() {
        return Err(FusionError::EmptyTemplate(p.template_id.clone()));
    }
    if q.is_empty() {
        return Err(FusionError::EmptyTemplate(q.template_id.clone()));
    }
    let in_plane = if p.in_plane.is_empty() || q.in_plane.is_empty() {
        None
    } else {
        Some(fused_over(config, &score_matrix(&p.in_plane, &q.in_plane)?.entries)?)
    };
    let rendered = if p.rendered.is_empty() || q.rendered.is_empty() {
        None
    } else {
        Some(fused_over(config, &score_matrix(&p.rendered, &q.rendered)?.entries)?)
    };
    match (in_plane, rendered) {
        (Some(a), Some(b)) => Ok(TemplateScore {
            score: 0.5 * (a + b),
            degraded: false,
        }),
        (Some(a), None) | (None, Some(a)) => Ok(TemplateScore {
            score: a,
            degraded: true,
        }),
        (None, None) => Err(FusionError::EmptyTemplate(p.template_id.clone())),
    }
}

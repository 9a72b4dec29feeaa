//! Verification / identification protocol ingestion and metrics: ROC with
//! TAR at fixed FAR, CMC rank-k rates, cross-fold accuracy, and the EER
//! complement. `run_benchmark` wires the matcher and feature conditioning
//! together with a train/test leakage guard.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

use crate::features::{pca_apply, pca_fit, root_normalize, FeatureVector, DEFAULT_ROOT_EXPONENT};
use crate::fusion::{template_similarity, FusionConfig, TemplateFeatures};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("template {0:?} listed with conflicting subject ids")]
    ConflictingSubject(String),
    #[error("pair references unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {0:?} has no media")]
    EmptyTemplate(String),
    #[error("split needs at least one genuine and one impostor pair")]
    DegenerateSplit,
    #[error("empty score class (need both genuine and impostor scores)")]
    EmptyClass,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("fold {0} contains only one class")]
    SingleClassFold(u32),
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("probe subject {0:?} absent from gallery")]
    ProbeSubjectMissing(String),
    #[error("PCA training set overlaps test items (first: {0:?})")]
    TrainTestLeak(String),
    #[error("bad media type {0:?} (expected image or video)")]
    BadMediaType(String),
    #[error("bad label {0:?}")]
    BadLabel(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("fusion error: {0}")]
    Fusion(#[from] crate::fusion::FusionError),
    #[error("feature error: {0}")]
    Feature(#[from] crate::features::FeatureError),
}

/// One media entry of a protocol template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaItem {
    pub media_id: String,
    pub media_type: crate::features::MediaType,
    pub item_id: String,
}

/// A template: a set of stills and video frames under one subject.
#[derive(Debug, Clone)]
pub struct ProtocolTemplate {
    pub template_id: String,
    pub subject_id: String,
    pub media: Vec<MediaItem>,
}

/// A verification pair list with fold assignments.
#[derive(Debug, Clone)]
pub struct VerificationSplit {
    pub pairs: Vec<VerificationPair>,
}

#[derive(Debug, Clone)]
pub struct VerificationPair {
    pub template_a: String,
    pub template_b: String,
    pub same_subject: bool,
    pub fold: u32,
}

/// Final metric bundle. Rates are fractions in [0, 1]; map keys are the
/// FAR operating points and CMC ranks rendered as strings for stable JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub tar_at_far: BTreeMap<String, f64>,
    pub cmc: BTreeMap<String, f64>,
    pub accuracy: f64,
    pub eer_complement: f64,
}

fn parse_media_type(s: &str) -> Result<crate::features::MediaType, EvalError> {
    match s {
        "image" => Ok(crate::features::MediaType::Image),
        "video" => Ok(crate::features::MediaType::Video),
        other => Err(EvalError::BadMediaType(other.to_string())),
    }
}

fn parse_label(s: &str) -> Result<bool, EvalError> {
    match s {
        "1" | "true" | "genuine" | "same" => Ok(true),
        "0" | "false" | "impostor" | "different" => Ok(false),
        other => Err(EvalError::BadLabel(other.to_string())),
    }
}

/// Read `templates.csv` (template_id,subject_id,media_id,media_type,item_id)
/// and `pairs.csv` (template_a,template_b,label,fold). Every pair must
/// resolve; a template id may span many rows but only one subject.
pub fn load_protocol(
    template_csv: &Path,
    pairs_csv: &Path,
) -> Result<(Vec<ProtocolTemplate>, VerificationSplit), EvalError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, ProtocolTemplate> = HashMap::new();
    let mut reader = csv::Reader::from_path(template_csv)?;
    for record in reader.records() {
        let record = record?;
        let template_id = record.get(0).unwrap_or("").to_string();
        let subject_id = record.get(1).unwrap_or("").to_string();
        let item = MediaItem {
            media_id: record.get(2).unwrap_or("").to_string(),
            media_type: parse_media_type(record.get(3).unwrap_or(""))?,
            item_id: record.get(4).unwrap_or("").to_string(),
        };
        match by_id.get_mut(&template_id) {
            Some(existing) => {
                if existing.subject_id != subject_id {
                    return Err(EvalError::ConflictingSubject(template_id));
                }
                existing.media.push(item);
            }
            None => {
                order.push(template_id.clone());
                by_id.insert(
                    template_id.clone(),
                    ProtocolTemplate {
                        template_id,
                        subject_id,
                        media: vec![item],
                    },
                );
            }
        }
    }

    let mut pairs = Vec::new();
    let mut reader = csv::Reader::from_path(pairs_csv)?;
    for record in reader.records() {
        let record = record?;
        let template_a = record.get(0).unwrap_or("").to_string();
        let template_b = record.get(1).unwrap_or("").to_string();
        for id in [&template_a, &template_b] {
            if !by_id.contains_key(id) {
                return Err(EvalError::UnknownTemplate(id.clone()));
            }
        }
        pairs.push(VerificationPair {
            template_a,
            template_b,
            same_subject: parse_label(record.get(2).unwrap_or(""))?,
            fold: record.get(3).unwrap_or("0").trim().parse().unwrap_or(0),
        });
    }
    if !pairs.iter().any(|p| p.same_subject) || !pairs.iter().any(|p| !p.same_subject) {
        return Err(EvalError::DegenerateSplit);
    }
    let templates = order.into_iter().map(|id| by_id.remove(&id).unwrap()).collect();
    Ok((templates, VerificationSplit { pairs }))
}

/// Read a one-column template-id list (gallery.csv / probes.csv).
pub fn load_template_list(path: &Path) -> Result<Vec<String>, EvalError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        out.push(record?.get(0).unwrap_or("").to_string());
    }
    Ok(out)
}

/// One operating point of the ROC sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

/// ROC curve as a threshold sweep over the union of observed scores,
/// sorted by ascending threshold (so FAR and TAR are nonincreasing).
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn fraction_at_or_above(sorted: &[f64], threshold: f64) -> f64 {
    // sorted ascending; count of entries >= threshold.
    let idx = sorted.partition_point(|&s| s < threshold);
    (sorted.len() - idx) as f64 / sorted.len() as f64
}

/// Sweep thresholds over the union of both score lists. Accepting means
/// score >= threshold.
pub fn roc(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve, EvalError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(EvalError::EmptyClass);
    }
    if genuine.iter().chain(impostor.iter()).any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let mut gen_sorted = genuine.to_vec();
    let mut imp_sorted = impostor.to_vec();
    gen_sorted.sort_by(f64::total_cmp);
    imp_sorted.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor.iter()).cloned().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut points: Vec<RocPoint> = thresholds
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            far: fraction_at_or_above(&imp_sorted, t),
            tar: fraction_at_or_above(&gen_sorted, t),
        })
        .collect();
    // A reject-everything sentinel above the largest score.
    let top = points.last().map(|p| p.threshold).unwrap_or(0.0);
    points.push(RocPoint {
        threshold: top + 1.0,
        far: 0.0,
        tar: 0.0,
    });
    Ok(RocCurve { points })
}

/// TAR at the smallest threshold whose FAR does not exceed `far`.
pub fn tar_at_far(curve: &RocCurve, far: f64) -> f64 {
    curve
        .points
        .iter()
        .find(|p| p.far <= far)
        .map(|p| p.tar)
        .unwrap_or(0.0)
}

/// Rank-k identification rates. `scores[p][g]` compares probe p against
/// gallery entry g. Ties are pessimistic: the correct entry ranks after
/// every impostor with an equal score.
pub fn cmc(
    scores: &[Vec<f64>],
    probe_subjects: &[String],
    gallery_subjects: &[String],
    ranks: &[usize],
) -> Result<BTreeMap<String, f64>, EvalError> {
    let gallery_set: HashSet<&String> = gallery_subjects.iter().collect();
    let mut achieved: Vec<usize> = Vec::with_capacity(probe_subjects.len());
    for (p, subject) in probe_subjects.iter().enumerate() {
        if !gallery_set.contains(subject) {
            return Err(EvalError::ProbeSubjectMissing(subject.clone()));
        }
        let row = &scores[p];
        let best_correct = row
            .iter()
            .zip(gallery_subjects.iter())
            .filter(|(_, g)| *g == subject)
            .map(|(s, _)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        let beaten = row
            .iter()
            .zip(gallery_subjects.iter())
            .filter(|(s, g)| *g != subject && **s >= best_correct)
            .count();
        achieved.push(beaten + 1);
    }
    let mut out = BTreeMap::new();
    for &k in ranks {
        let hits = achieved.iter().filter(|&&r| r <= k).count();
        out.insert(k.to_string(), hits as f64 / achieved.len().max(1) as f64);
    }
    Ok(out)
}

/// A scored verification pair.
#[derive(Debug, Clone, Copy)]
pub struct ScoredPair {
    pub score: f64,
    pub same_subject: bool,
    pub fold: u32,
}

fn eer_from_scores(genuine: &[f64], impostor: &[f64]) -> Result<f64, EvalError> {
    let curve = roc(genuine, impostor)?;
    // FRR = 1 - TAR rises with threshold while FAR falls; find the sweep
    // points bracketing FAR = FRR and interpolate linearly between them.
    let mut prev: Option<RocPoint> = None;
    for p in &curve.points {
        let frr = 1.0 - p.tar;
        if p.far <= frr {
            return Ok(match prev {
                None => p.far.max(frr.min(p.far)),
                Some(q) => {
                    let (f1, r1) = (q.far, 1.0 - q.tar);
                    let (f2, r2) = (p.far, frr);
                    let den = (f1 - r1) - (f2 - r2);
                    if den.abs() < 1e-15 {
                        0.5 * (f1 + r1)
                    } else {
                        let t = (f1 - r1) / den;
                        f1 + (f2 - f1) * t
                    }
                }
            });
        }
        prev = Some(*p);
    }
    Ok(0.0)
}

/// EER complement (1 - EER) and mean cross-fold classification accuracy.
/// Each fold is scored with the threshold that best separates the other
/// folds.
pub fn eer_and_accuracy(pairs: &[ScoredPair]) -> Result<(f64, f64), EvalError> {
    let genuine: Vec<f64> = pairs.iter().filter(|p| p.same_subject).map(|p| p.score).collect();
    let impostor: Vec<f64> = pairs.iter().filter(|p| !p.same_subject).map(|p| p.score).collect();
    let eer = eer_from_scores(&genuine, &impostor)?;

    let mut folds: Vec<u32> = pairs.iter().map(|p| p.fold).collect();
    folds.sort_unstable();
    folds.dedup();
    if folds.len() < 2 {
        return Err(EvalError::TooFewFolds(folds.len()));
    }
    for &fold in &folds {
        let in_fold: Vec<&ScoredPair> = pairs.iter().filter(|p| p.fold == fold).collect();
        if in_fold.iter().all(|p| p.same_subject) || in_fold.iter().all(|p| !p.same_subject) {
            return Err(EvalError::SingleClassFold(fold));
        }
    }

    let mut fold_accuracies = Vec::with_capacity(folds.len());
    for &held_out in &folds {
        let train: Vec<&ScoredPair> = pairs.iter().filter(|p| p.fold != held_out).collect();
        let test: Vec<&ScoredPair> = pairs.iter().filter(|p| p.fold == held_out).collect();
        let mut sorted: Vec<f64> = train.iter().map(|p| p.score).collect();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        // Candidate cutoffs sit between observed scores, not on them, so a
        // test score equal to a train-class boundary is not misclassified.
        let mut candidates = vec![sorted[0] - 1.0, sorted[sorted.len() - 1] + 1.0];
        candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        let classify_rate = |set: &[&ScoredPair], t: f64| {
            let correct = set
                .iter()
                .filter(|p| (p.score >= t) == p.same_subject)
                .count();
            correct as f64 / set.len() as f64
        };
        let best = candidates
            .iter()
            .cloned()
            .max_by(|&a, &b| {
                classify_rate(&train, a)
                    .total_cmp(&classify_rate(&train, b))
                    .then(b.total_cmp(&a))
            })
            .unwrap();
        fold_accuracies.push(classify_rate(&test, best));
    }
    let accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    Ok((1.0 - eer, accuracy))
}

/// A template's conditioned matcher features together with the item ids
/// they came from, for the leakage guard.
#[derive(Debug, Clone)]
pub struct EvalTemplate {
    pub features: TemplateFeatures,
    pub item_ids: Vec<String>,
}

/// Feature conditioning applied before matching.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    pub apply_pca: bool,
    pub root_exponent: f64,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            apply_pca: true,
            root_exponent: DEFAULT_ROOT_EXPONENT,
        }
    }
}

/// Identification side of a benchmark.
#[derive(Debug, Clone)]
pub struct IdentificationSplit {
    pub gallery: Vec<String>,
    pub probes: Vec<String>,
}

fn condition_vec(
    model: Option<&crate::features::PcaModel>,
    exponent: f64,
    values: &[f64],
) -> Result<Vec<f64>, EvalError> {
    let mut f = FeatureVector::new(values.to_vec(), "");
    if let Some(m) = model {
        f = pca_apply(m, &f)?;
    }
    f = root_normalize(&f, exponent)?;
    Ok(f.values)
}

/// Run verification and identification over prepared templates. PCA is
/// fitted on `train` only; any overlap between training item ids and the
/// ids inside evaluated templates is a hard error.
pub fn run_benchmark(
    templates: &HashMap<String, EvalTemplate>,
    split: &VerificationSplit,
    identification: Option<&IdentificationSplit>,
    train: &[FeatureVector],
    fusion: &FusionConfig,
    conditioning: &ConditioningConfig,
) -> Result<MetricsReport, EvalError> {
    let train_ids: HashSet<&str> = train.iter().map(|f| f.source_id.as_str()).collect();
    for t in templates.values() {
        for id in &t.item_ids {
            if train_ids.contains(id.as_str()) {
                return Err(EvalError::TrainTestLeak(id.clone()));
            }
        }
    }
    let model = if conditioning.apply_pca {
        Some(pca_fit(train)?)
    } else {
        None
    };

    let mut conditioned: HashMap<&str, TemplateFeatures> = HashMap::new();
    for (id, t) in templates {
        let mut f = t.features.clone();
        for v in f.in_plane.iter_mut().chain(f.rendered.iter_mut()) {
            *v = condition_vec(model.as_ref(), conditioning.root_exponent, v)?;
        }
        conditioned.insert(id.as_str(), f);
    }

    let lookup = |id: &str| -> Result<&TemplateFeatures, EvalError> {
        conditioned
            .get(id)
            .ok_or_else(|| EvalError::UnknownTemplate(id.to_string()))
    };

    let scored: Vec<ScoredPair> = split
        .pairs
        .par_iter()
        .map(|p| -> Result<ScoredPair, EvalError> {
            let s = template_similarity(lookup(&p.template_a)?, lookup(&p.template_b)?, fusion)?;
            Ok(ScoredPair {
                score: s.score,
                same_subject: p.same_subject,
                fold: p.fold,
            })
        })
        .collect::<Result<_, _>>()?;

    let genuine: Vec<f64> = scored.iter().filter(|p| p.same_subject).map(|p| p.score).collect();
    let impostor: Vec<f64> = scored.iter().filter(|p| !p.same_subject).map(|p| p.score).collect();
    let curve = roc(&genuine, &impostor)?;
    let mut tar = BTreeMap::new();
    for far in [0.01, 0.001] {
        tar.insert(format!("{far}"), tar_at_far(&curve, far));
    }
    let (eer_complement, accuracy) = eer_and_accuracy(&scored)?;

    let cmc_rates = match identification {
        Some(ident) => {
            let gallery_subjects: Vec<String> = ident
                .gallery
                .iter()
                .map(|id| Ok(templates[id.as_str()].features.subject_id.clone()))
                .collect::<Result<_, EvalError>>()?;
            let probe_subjects: Vec<String> = ident
                .probes
                .iter()
                .map(|id| templates[id.as_str()].features.subject_id.clone())
                .collect();
            let scores: Vec<Vec<f64>> = ident
                .probes
                .par_iter()
                .map(|p| -> Result<Vec<f64>, EvalError> {
                    ident
                        .gallery
                        .iter()
                        .map(|g| Ok(template_similarity(lookup(p)?, lookup(g)?, fusion)?.score))
                        .collect()
                })
                .collect::<Result<_, _>>()?;
            cmc(&scores, &probe_subjects, &gallery_subjects, &[1, 5, 10])?
        }
        None => BTreeMap::new(),
    };

    Ok(MetricsReport {
        tar_at_far: tar,
        cmc: cmc_rates,
        accuracy,
        eer_complement,
    })
}

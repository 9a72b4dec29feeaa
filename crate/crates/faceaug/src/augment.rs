//! Dataset augmentation: in-plane alignment of each source image plus
//! three novel-pose renders and one expression-neutralized image, emitted
//! with a reproducible line-oriented JSON manifest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use thiserror::Error;

use crate::geometry::{
    decompose_yaw, estimate_pose, estimate_similarity_2d, euler_rotation, project_one, Projected,
    Similarity2D,
};
use crate::landmarks::{
    LandmarkSet2D, FRONTAL9_SLOTS, SLOT_LEFT_EYE_INNER, SLOT_LEFT_EYE_OUTER, SLOT_NOSE_TIP,
    SLOT_RIGHT_EYE_INNER, SLOT_RIGHT_EYE_OUTER,
};
use crate::raster::RasterImage;
use crate::render::vertex_visibility;
use crate::synth::{
    canvas_camera, neutralize_expression, pick_shape, render_novel_views, signed_yaws,
    BlendshapeBasis, ShapeSet, RENDER_SIZE,
};

/// Yaw magnitude at or below which a source counts as frontal (interval
/// boundary included).
pub const DEFAULT_FRONTAL_THRESHOLD_DEG: f64 = 30.0;

/// Profile alignment template yaw magnitude.
const PROFILE_TEMPLATE_YAW: f64 = 40.0;

/// Center-crop fallback keeps this fraction of the short image side.
const CENTER_CROP_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("required landmark slots not visible for {0} alignment")]
    MissingSlots(&'static str),
    #[error("no dataset entries under {0}")]
    EmptyInput(PathBuf),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("landmark error: {0}")]
    Landmark(#[from] crate::landmarks::LandmarkError),
    #[error("raster error: {0}")]
    Raster(#[from] crate::raster::RasterError),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("synthesis error: {0}")]
    Synth(#[from] crate::synth::SynthError),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One labeled source image with its landmark sidecar.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub subject_label: String,
    pub image_path: PathBuf,
    pub landmark_path: PathBuf,
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Aligned,
    PoseRender,
    Expression,
}

impl Variant {
    fn rank(self) -> u8 {
        match self {
            Variant::Aligned => 0,
            Variant::PoseRender => 1,
            Variant::Expression => 2,
        }
    }

    fn stem_tag(self) -> &'static str {
        match self {
            Variant::Aligned => "aligned",
            Variant::PoseRender => "pose_render",
            Variant::Expression => "expression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Frontal9,
    Profile2,
    BboxFallback,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub output_path: String,
    pub subject_label: String,
    pub source_path: String,
    pub variant: Variant,
    pub yaw: Option<f64>,
    pub shape_id: Option<usize>,
    pub alignment: Alignment,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> Result<String, AugmentError> {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Manifest, AugmentError> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Manifest { rows })
    }

    pub fn load(path: &Path) -> Result<Manifest, AugmentError> {
        Manifest::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.subject_label.as_str()).collect()
    }

    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (
                &a.subject_label,
                &a.source_path,
                a.variant.rank(),
                a.yaw.map(|y| y.round() as i64),
                a.shape_id,
            )
                .cmp(&(
                    &b.subject_label,
                    &b.source_path,
                    b.variant.rank(),
                    b.yaw.map(|y| y.round() as i64),
                    b.shape_id,
                ))
        });
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub yaws: Vec<f64>,
    pub output_size: u32,
    pub seed: u64,
    pub frontal_threshold_deg: f64,
    pub include_expression: bool,
    /// When false every entry uses shape 0 instead of a hashed pick.
    pub vary_shapes: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            yaws: crate::synth::DEFAULT_YAWS.to_vec(),
            output_size: RENDER_SIZE,
            seed: 0,
            frontal_threshold_deg: DEFAULT_FRONTAL_THRESHOLD_DEG,
            include_expression: true,
            vary_shapes: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.frontal_threshold_deg > 0.0 && self.frontal_threshold_deg < 90.0) {
            return Err(AugmentError::BadConfig(format!(
                "frontal threshold {} outside (0, 90)",
                self.frontal_threshold_deg
            )));
        }
        if self.yaws.is_empty() {
            return Err(AugmentError::BadConfig("empty yaw set".into()));
        }
        if self.output_size == 0 {
            return Err(AugmentError::BadConfig("zero output size".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentClass {
    Frontal,
    Profile,
}

/// Frontal iff |yaw| <= threshold; the boundary itself counts as frontal.
pub fn classify_alignment_with(yaw_deg: f64, threshold_deg: f64) -> AlignmentClass {
    if yaw_deg.abs() <= threshold_deg {
        AlignmentClass::Frontal
    } else {
        AlignmentClass::Profile
    }
}

pub fn classify_alignment(yaw_deg: f64) -> AlignmentClass {
    classify_alignment_with(yaw_deg, DEFAULT_FRONTAL_THRESHOLD_DEG)
}

/// The ideal frontal template: the nine alignment landmarks of the base
/// head projected under the canvas camera at yaw 0.
pub fn frontal_template() -> &'static [[f64; 2]; 9] {
    static TEMPLATE: OnceLock<[[f64; 2]; 9]> = OnceLock::new();
    TEMPLATE.get_or_init(|| {
        let mesh = crate::assets::generic_head(0);
        let (intr, pose) = canvas_camera(&mesh, &euler_rotation(0.0, 0.0, 0.0), RENDER_SIZE);
        let mut out = [[0.0; 2]; 9];
        for (i, &slot) in FRONTAL9_SLOTS.iter().enumerate() {
            out[i] = match project_one(&mesh.landmark(slot), &intr, &pose) {
                Projected::Pixel(p) => p,
                Projected::BehindCamera => unreachable!("frontal landmark behind camera"),
            };
        }
        out
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EyeSide {
    Right,
    Left,
}

/// Profile template for one eye side: eye-center and nose-tip positions of
/// the base head at the template yaw that keeps that eye visible.
#[derive(Debug, Clone, Copy)]
pub struct ProfileTemplate {
    pub eye: [f64; 2],
    pub nose: [f64; 2],
    pub yaw: f64,
}

fn eye_slots(side: EyeSide) -> (usize, usize) {
    match side {
        EyeSide::Right => (SLOT_RIGHT_EYE_OUTER, SLOT_RIGHT_EYE_INNER),
        EyeSide::Left => (SLOT_LEFT_EYE_OUTER, SLOT_LEFT_EYE_INNER),
    }
}

fn build_profile_template(side: EyeSide) -> ProfileTemplate {
    let mesh = crate::assets::generic_head(0);
    let (outer, inner) = eye_slots(side);
    for yaw in [PROFILE_TEMPLATE_YAW, -PROFILE_TEMPLATE_YAW] {
        let (intr, pose) = canvas_camera(&mesh, &euler_rotation(yaw, 0.0, 0.0), RENDER_SIZE);
        let visible = vertex_visibility(&mesh, &pose, &intr, (RENDER_SIZE, RENDER_SIZE));
        if !visible[mesh.landmark_map[outer]] || !visible[mesh.landmark_map[inner]] {
            continue;
        }
        let proj = |slot: usize| match project_one(&mesh.landmark(slot), &intr, &pose) {
            Projected::Pixel(p) => p,
            Projected::BehindCamera => unreachable!("template landmark behind camera"),
        };
        let a = proj(outer);
        let b = proj(inner);
        return ProfileTemplate {
            eye: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
            nose: proj(SLOT_NOSE_TIP),
            yaw,
        };
    }
    unreachable!("no template yaw keeps the {side:?} eye visible");
}

pub fn profile_template(side: EyeSide) -> &'static ProfileTemplate {
    static RIGHT: OnceLock<ProfileTemplate> = OnceLock::new();
    static LEFT: OnceLock<ProfileTemplate> = OnceLock::new();
    match side {
        EyeSide::Right => RIGHT.get_or_init(|| build_profile_template(EyeSide::Right)),
        EyeSide::Left => LEFT.get_or_init(|| build_profile_template(EyeSide::Left)),
    }
}

/// Inverse-warp `image` through `sim` (source -> template coordinates)
/// onto a square canvas.
fn warp_similarity(image: &RasterImage, sim: &Similarity2D, size: u32) -> RasterImage {
    let inv = sim.inverse();
    RasterImage::from_fn(size, size, image.channels, |x, y| {
        let src = inv.apply([x as f64, y as f64]);
        image.sample_bilinear(src[0], src[1])
    })
}

/// Similarity-align an image onto the class template canvas: least squares
/// over the nine frontal pairs, or exactly over eye-center + nose-tip for
/// profiles.
pub fn align_in_plane(
    image: &RasterImage,
    landmarks: &LandmarkSet2D,
    class: AlignmentClass,
    output_size: u32,
) -> Result<(RasterImage, Alignment), AugmentError> {
    // Template coordinates live on the canonical canvas; rescale for other
    // output sizes.
    let scale = output_size as f64 / RENDER_SIZE as f64;
    match class {
        AlignmentClass::Frontal => {
            if FRONTAL9_SLOTS.iter().any(|&s| !landmarks.is_visible(s)) {
                return Err(AugmentError::MissingSlots("frontal"));
            }
            let src: Vec<[f64; 2]> = FRONTAL9_SLOTS.iter().map(|&s| landmarks.point(s)).collect();
            let dst: Vec<[f64; 2]> = frontal_template()
                .iter()
                .map(|p| [p[0] * scale, p[1] * scale])
                .collect();
            let sim = estimate_similarity_2d(&src, &dst)?;
            Ok((warp_similarity(image, &sim, output_size), Alignment::Frontal9))
        }
        AlignmentClass::Profile => {
            if !landmarks.is_visible(SLOT_NOSE_TIP) {
                return Err(AugmentError::MissingSlots("profile"));
            }
            let usable = |side: EyeSide| {
                let (outer, inner) = eye_slots(side);
                landmarks.is_visible(outer) && landmarks.is_visible(inner)
            };
            let eye_center = |side: EyeSide| {
                let (outer, inner) = eye_slots(side);
                let a = landmarks.point(outer);
                let b = landmarks.point(inner);
                [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
            };
            let nose = landmarks.point(SLOT_NOSE_TIP);
            let side = match (usable(EyeSide::Right), usable(EyeSide::Left)) {
                (false, false) => return Err(AugmentError::MissingSlots("profile")),
                (true, false) => EyeSide::Right,
                (false, true) => EyeSide::Left,
                (true, true) => {
                    // Both visible: take the eye farther from the nose tip in
                    // the image, which is the better-observed one.
                    let d = |p: [f64; 2]| (p[0] - nose[0]).hypot(p[1] - nose[1]);
                    if d(eye_center(EyeSide::Right)) >= d(eye_center(EyeSide::Left)) {
                        EyeSide::Right
                    } else {
                        EyeSide::Left
                    }
                }
            };
            let template = profile_template(side);
            let src = [eye_center(side), nose];
            let dst = [
                [template.eye[0] * scale, template.eye[1] * scale],
                [template.nose[0] * scale, template.nose[1] * scale],
            ];
            let sim = estimate_similarity_2d(&src, &dst)?;
            Ok((warp_similarity(image, &sim, output_size), Alignment::Profile2))
        }
    }
}

fn crop_resize(image: &RasterImage, x: f64, y: f64, w: f64, h: f64, size: u32) -> RasterImage {
    let x0 = x.max(0.0);
    let y0 = y.max(0.0);
    let x1 = (x + w).min(image.width as f64);
    let y1 = (y + h).min(image.height as f64);
    let (cw, ch) = ((x1 - x0).max(1.0), (y1 - y0).max(1.0));
    RasterImage::from_fn(size, size, image.channels, |px, py| {
        let u = x0 + (px as f64 + 0.5) / size as f64 * cw - 0.5;
        let v = y0 + (py as f64 + 0.5) / size as f64 * ch - 0.5;
        image.sample_bilinear(u, v)
    })
}

/// Fallback crop: the provided bounding box, or a fixed center square.
fn fallback_crop(image: &RasterImage, bbox: Option<[f64; 4]>, size: u32) -> RasterImage {
    match bbox {
        Some([x, y, w, h]) => crop_resize(image, x, y, w, h, size),
        None => {
            let side = CENTER_CROP_FRACTION * image.width.min(image.height) as f64;
            crop_resize(
                image,
                (image.width as f64 - side) / 2.0,
                (image.height as f64 - side) / 2.0,
                side,
                side,
                size,
            )
        }
    }
}

fn yaw_tag(yaw: f64) -> String {
    let t = yaw.round() as i64;
    if t < 0 {
        format!("m{}", -t)
    } else {
        format!("{t}")
    }
}

fn source_rel(entry: &DatasetEntry) -> String {
    let file = entry
        .image_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{}/{}", entry.subject_label, file)
}

fn source_stem(entry: &DatasetEntry) -> String {
    entry
        .image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Produce all augmented variants of one entry. File-read problems are
/// errors (the caller skips and logs); pose or alignment failures degrade
/// to a single bounding-box fallback crop.
pub fn augment_image(
    entry: &DatasetEntry,
    shape_set: &ShapeSet,
    basis: &BlendshapeBasis,
    config: &AugmentConfig,
) -> Result<Vec<(RasterImage, ManifestRow)>, AugmentError> {
    config.validate()?;
    let image = RasterImage::load_png(&entry.image_path)?;
    let landmarks = LandmarkSet2D::load(&entry.landmark_path)?;
    let source = source_rel(entry);
    let stem = source_stem(entry);

    let shape_id = if config.vary_shapes {
        pick_shape(config.seed, &source, shape_set)
    } else {
        0
    };
    let shape = shape_set.shape(shape_id);

    let row = |variant: Variant, yaw: Option<f64>, shape: Option<usize>, alignment: Alignment| {
        let mut name = format!("{stem}_{}", variant.stem_tag());
        if let Some(y) = yaw {
            name.push_str(&format!("_{}", yaw_tag(y)));
        }
        if let Some(s) = shape {
            name.push_str(&format!("_s{s}"));
        }
        ManifestRow {
            output_path: format!("{}/{name}.png", entry.subject_label),
            subject_label: entry.subject_label.clone(),
            source_path: source.clone(),
            variant,
            yaw,
            shape_id: shape,
            alignment,
        }
    };

    let attempt = || -> Result<Vec<(RasterImage, ManifestRow)>, AugmentError> {
        let est = estimate_pose(&landmarks, shape, (image.width, image.height))?;
        let yaw = decompose_yaw(&est.pose)?.yaw;
        let class = classify_alignment_with(yaw, config.frontal_threshold_deg);
        let (aligned, alignment) = align_in_plane(&image, &landmarks, class, config.output_size)?;

        let mut out = vec![(aligned, row(Variant::Aligned, None, None, alignment))];
        let render_yaws = signed_yaws(yaw, &config.yaws);
        let renders = render_novel_views(&image, &landmarks, shape, &render_yaws)?;
        for (render, y) in renders.into_iter().zip(render_yaws) {
            let img = if config.output_size == RENDER_SIZE {
                render.image
            } else {
                render.image.resize(config.output_size, config.output_size)
            };
            out.push((img, row(Variant::PoseRender, Some(y), Some(shape_id), alignment)));
        }
        if config.include_expression {
            let neutralized = neutralize_expression(&image, &landmarks, basis)?;
            let (img, _) = align_in_plane(&neutralized.image, &landmarks, class, config.output_size)?;
            out.push((img, row(Variant::Expression, None, None, alignment)));
        }
        Ok(out)
    };

    match attempt() {
        Ok(rows) => Ok(rows),
        Err(AugmentError::Io(e)) => Err(AugmentError::Io(e)),
        Err(_) => {
            let img = fallback_crop(&image, entry.bbox, config.output_size);
            Ok(vec![(img, row(Variant::Aligned, None, None, Alignment::BboxFallback))])
        }
    }
}

/// Find `<root>/<subject>/<image>` entries with a same-stem `.pts` sidecar
/// (and optional `.bbox`), sorted for reproducibility.
pub fn discover_entries(input_root: &Path) -> Result<Vec<DatasetEntry>, AugmentError> {
    let mut out = Vec::new();
    let mut subjects: Vec<PathBuf> = std::fs::read_dir(input_root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subjects.sort();
    for subject_dir in subjects {
        let label = subject_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&subject_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("jpg") | Some("jpeg")
                )
            })
            .collect();
        files.sort();
        for image_path in files {
            let landmark_path = image_path.with_extension("pts");
            if !landmark_path.exists() {
                continue;
            }
            let bbox_path = image_path.with_extension("bbox");
            let bbox = if bbox_path.exists() {
                let text = std::fs::read_to_string(&bbox_path)?;
                let vals: Vec<f64> = text
                    .split_whitespace()
                    .filter_map(|t| t.parse().ok())
                    .collect();
                (vals.len() == 4).then(|| [vals[0], vals[1], vals[2], vals[3]])
            } else {
                None
            };
            out.push(DatasetEntry {
                subject_label: label.clone(),
                image_path,
                landmark_path,
                bbox,
            });
        }
    }
    if out.is_empty() {
        return Err(AugmentError::EmptyInput(input_root.to_path_buf()));
    }
    Ok(out)
}

/// Run the full augmentation over a dataset tree. Images are written under
/// `output_root`, the manifest at `output_root/manifest.jsonl`, and a log
/// at `output_root/augment.log`. Rows are sorted before writing so the
/// worker count never changes bytes.
pub fn augment_dataset(
    input_root: &Path,
    output_root: &Path,
    shape_set: &ShapeSet,
    basis: &BlendshapeBasis,
    config: &AugmentConfig,
) -> Result<Manifest, AugmentError> {
    config.validate()?;
    let entries = discover_entries(input_root)?;
    std::fs::create_dir_all(output_root)?;

    let results: Vec<(Vec<ManifestRow>, Vec<String>)> = entries
        .par_iter()
        .map(|entry| {
            let source = source_rel(entry);
            match augment_image(entry, shape_set, basis, config) {
                Ok(outputs) => {
                    let mut rows = Vec::with_capacity(outputs.len());
                    let mut log = Vec::new();
                    for (image, row) in outputs {
                        let path = output_root.join(&row.output_path);
                        if let Some(parent) = path.parent() {
                            let _ = std::fs::create_dir_all(parent);
                        }
                        match image.save_png(&path) {
                            Ok(()) => {
                                if row.alignment == Alignment::BboxFallback {
                                    log.push(format!("fallback {source}"));
                                }
                                rows.push(row);
                            }
                            Err(e) => log.push(format!("write-failed {source}: {e}")),
                        }
                    }
                    (rows, log)
                }
                Err(e) => (Vec::new(), vec![format!("skipped {source}: {e}")]),
            }
        })
        .collect();

    let mut manifest = Manifest::default();
    let mut log_lines = Vec::new();
    for (rows, log) in results {
        manifest.rows.extend(rows);
        log_lines.extend(log);
    }
    manifest.sort();
    log_lines.sort();

    std::fs::write(output_root.join("manifest.jsonl"), manifest.to_jsonl()?)?;
    std::fs::write(output_root.join("augment.log"), log_lines.join("\n") + "\n")?;
    Ok(manifest)
}

//! Augmentation generators: novel-yaw view rendering, random generic-shape
//! selection, and mouth-neutralizing expression synthesis composited back
//! over the original image.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use thiserror::Error;

use crate::geometry::{
    decompose_yaw, estimate_pose, euler_rotation, project_one, GeometryError, Intrinsics, Pose,
    PoseEstimate, Projected,
};
use crate::landmarks::{LandmarkSet2D, MOUTH_SLOTS};
use crate::mesh::Mesh;
use crate::raster::RasterImage;
use crate::render::{
    rasterize, texture_from_image, RenderError, RenderOutput, FEATHER_BAND_PX,
};

/// Output canvas edge for rendered views.
pub const RENDER_SIZE: u32 = 256;
/// Projected inter-eye distance at yaw 0, as a fraction of the canvas width.
pub const EYE_FRACTION: f64 = 0.35;
/// Default yaw magnitudes for novel-view synthesis.
pub const DEFAULT_YAWS: [f64; 3] = [0.0, 40.0, 75.0];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("pose estimation failed: {0}")]
    Pose(#[from] GeometryError),
    #[error("render failed: {0}")]
    Render(#[from] RenderError),
    #[error("expression unfittable: only {0} mouth landmarks visible")]
    ExpressionUnfittable(usize),
    #[error("shape set must contain exactly {expected} aligned shapes, got {got}")]
    BadShapeSet { expected: usize, got: usize },
    #[error("blendshape delta {name} has {got} entries for {want} vertices")]
    BadBasis {
        name: &'static str,
        got: usize,
        want: usize,
    },
}

/// Exactly ten generic meshes sharing one topology and landmark map.
#[derive(Debug, Clone)]
pub struct ShapeSet {
    pub shapes: Vec<Mesh>,
}

impl ShapeSet {
    pub fn new(shapes: Vec<Mesh>) -> Result<Self, SynthError> {
        if shapes.len() != crate::assets::SHAPE_COUNT {
            return Err(SynthError::BadShapeSet {
                expected: crate::assets::SHAPE_COUNT,
                got: shapes.len(),
            });
        }
        let base = &shapes[0];
        for s in &shapes[1..] {
            if s.vertex_count() != base.vertex_count()
                || s.triangles != base.triangles
                || s.landmark_map != base.landmark_map
            {
                return Err(SynthError::BadShapeSet {
                    expected: crate::assets::SHAPE_COUNT,
                    got: shapes.len(),
                });
            }
        }
        Ok(ShapeSet { shapes })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shape(&self, id: usize) -> &Mesh {
        &self.shapes[id]
    }
}

/// Neutral mesh plus named per-vertex displacement fields.
#[derive(Debug, Clone)]
pub struct BlendshapeBasis {
    pub neutral: Mesh,
    pub mouth_open: Vec<Vector3<f64>>,
    pub mouth_closed: Vec<Vector3<f64>>,
    pub smile: Vec<Vector3<f64>>,
}

/// Expression coefficients, each box-constrained to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpressionCoeffs {
    pub mouth_open: f64,
    pub mouth_closed: f64,
    pub smile: f64,
}

impl ExpressionCoeffs {
    pub fn clamped(self) -> Self {
        ExpressionCoeffs {
            mouth_open: self.mouth_open.clamp(0.0, 1.0),
            mouth_closed: self.mouth_closed.clamp(0.0, 1.0),
            smile: self.smile.clamp(0.0, 1.0),
        }
    }
}

impl BlendshapeBasis {
    pub fn new(
        neutral: Mesh,
        mouth_open: Vec<Vector3<f64>>,
        mouth_closed: Vec<Vector3<f64>>,
        smile: Vec<Vector3<f64>>,
    ) -> Result<Self, SynthError> {
        let want = neutral.vertex_count();
        for (name, d) in [
            ("mouth_open", &mouth_open),
            ("mouth_closed", &mouth_closed),
            ("smile", &smile),
        ] {
            if d.len() != want {
                return Err(SynthError::BadBasis {
                    name,
                    got: d.len(),
                    want,
                });
            }
        }
        Ok(BlendshapeBasis {
            neutral,
            mouth_open,
            mouth_closed,
            smile,
        })
    }

    /// Deformed vertex position under the given coefficients.
    pub fn vertex(&self, i: usize, c: &ExpressionCoeffs) -> Vector3<f64> {
        self.neutral.vertices[i]
            + c.mouth_open * self.mouth_open[i]
            + c.mouth_closed * self.mouth_closed[i]
            + c.smile * self.smile[i]
    }

    /// Full deformed mesh (topology and maps shared with the neutral).
    pub fn apply(&self, c: &ExpressionCoeffs) -> Mesh {
        let mut mesh = self.neutral.clone();
        for (i, v) in mesh.vertices.iter_mut().enumerate() {
            *v = self.vertex(i, c);
        }
        mesh
    }
}

/// Result of fitting expression coefficients to mouth landmarks.
#[derive(Debug, Clone)]
pub struct ExpressionFit {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub coefficients: ExpressionCoeffs,
    /// Pixel RMS over the mouth landmarks.
    pub residual: f64,
}

/// Deterministic uniform shape pick for a source image: a pure function of
/// (seed, image id), uniform over the shape set.
pub fn pick_shape(rng_seed: u64, source_image_id: &str, shape_set: &ShapeSet) -> usize {
    // FNV-1a over the id, folded with the seed; stable across platforms.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in source_image_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ h);
    rng.gen_range(0..shape_set.len())
}

/// Sign the default yaw magnitudes to match the source face's yaw.
pub fn signed_yaws(source_yaw_deg: f64, magnitudes: &[f64]) -> Vec<f64> {
    let sign = if source_yaw_deg < 0.0 { -1.0 } else { 1.0 };
    magnitudes.iter().map(|m| sign * m).collect()
}

/// Output-canvas camera for a head rotated by `rotation`: fixed focal, the
/// face centered on the principal point, and depth chosen so the frontal
/// inter-eye distance projects to [`EYE_FRACTION`] of the canvas width.
pub fn canvas_camera(mesh: &Mesh, rotation: &nalgebra::Matrix3<f64>, size: u32) -> (Intrinsics, Pose) {
    let focal = 2.0 * size as f64;
    let eye_center = |range: std::ops::Range<usize>| -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for slot in range.clone() {
            c += mesh.landmark(slot);
        }
        c / range.len() as f64
    };
    let right = eye_center(36..42);
    let left = eye_center(42..48);
    let eye_dist = (left - right).norm();
    let depth = focal * eye_dist / (EYE_FRACTION * size as f64);

    let mut centroid = Vector3::zeros();
    for slot in 0..mesh.landmark_map.len() {
        centroid += mesh.landmark(slot);
    }
    centroid /= mesh.landmark_map.len() as f64;

    let translation = Vector3::new(0.0, 0.0, depth) - rotation * centroid;
    let intr = Intrinsics::new(focal, (size as f64 / 2.0, size as f64 / 2.0))
        .expect("positive canvas focal");
    (
        intr,
        Pose {
            rotation: *rotation,
            translation,
        },
    )
}

/// Render the face in `image` at each requested yaw, keeping the estimated
/// pitch and roll. Texture is lifted once from the source under the
/// estimated pose.
pub fn render_novel_views(
    image: &RasterImage,
    landmarks: &LandmarkSet2D,
    shape: &Mesh,
    yaws: &[f64],
) -> Result<Vec<RenderOutput>, SynthError> {
    let est = estimate_pose(landmarks, shape, (image.width, image.height))?;
    let euler = decompose_yaw(&est.pose)?;
    let texcoords = texture_from_image(shape, image, &est.pose, &est.intrinsics);

    let mut outputs = Vec::with_capacity(yaws.len());
    for &yaw in yaws {
        let rotation = euler_rotation(yaw, euler.pitch, euler.roll);
        let (intr, pose) = canvas_camera(shape, &rotation, RENDER_SIZE);
        outputs.push(rasterize(
            shape,
            &texcoords,
            image,
            &pose,
            &intr,
            (RENDER_SIZE, RENDER_SIZE),
        )?);
    }
    Ok(outputs)
}

/// Minimum visible mouth landmarks required for expression fitting.
const MIN_MOUTH_LANDMARKS: usize = 6;

/// Fit expression coefficients to the mouth landmarks by box-constrained
/// Gauss-Newton; pose and intrinsics are held fixed.
pub fn fit_expression(
    landmarks: &LandmarkSet2D,
    basis: &BlendshapeBasis,
    pose: &Pose,
    intrinsics: &Intrinsics,
) -> Result<ExpressionFit, SynthError> {
    let slots: Vec<usize> = MOUTH_SLOTS.filter(|&s| landmarks.is_visible(s)).collect();
    if slots.len() < MIN_MOUTH_LANDMARKS {
        return Err(SynthError::ExpressionUnfittable(slots.len()));
    }

    let residuals = |c: &ExpressionCoeffs| -> Vec<f64> {
        let mut r = Vec::with_capacity(2 * slots.len());
        for &slot in &slots {
            let vi = basis.neutral.landmark_map[slot];
            let p3 = basis.vertex(vi, c);
            let target = landmarks.point(slot);
            match project_one(&p3, intrinsics, pose) {
                Projected::Pixel([u, v]) => {
                    r.push(u - target[0]);
                    r.push(v - target[1]);
                }
                Projected::BehindCamera => {
                    r.push(1e6);
                    r.push(1e6);
                }
            }
        }
        r
    };

    let mut c = ExpressionCoeffs::default();
    let h = 1e-6;
    for _ in 0..50 {
        let r0 = residuals(&c);
        let m = r0.len();
        // Finite-difference Jacobian over the three coefficients.
        let mut jac = vec![[0.0f64; 3]; m];
        for k in 0..3 {
            let mut cp = c;
            match k {
                0 => cp.mouth_open += h,
                1 => cp.mouth_closed += h,
                _ => cp.smile += h,
            }
            let rp = residuals(&cp);
            for i in 0..m {
                jac[i][k] = (rp[i] - r0[i]) / h;
            }
        }
        // Normal equations with light damping.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for i in 0..m {
            for a in 0..3 {
                jtr[a] += jac[i][a] * r0[i];
                for b in 0..3 {
                    jtj[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        for d in 0..3 {
            jtj[d][d] += 1e-9 + 1e-6 * jtj[d][d];
        }
        let mat = nalgebra::Matrix3::from_fn(|a, b| jtj[a][b]);
        let rhs = nalgebra::Vector3::new(-jtr[0], -jtr[1], -jtr[2]);
        let Some(delta) = mat.lu().solve(&rhs) else { break };
        let next = ExpressionCoeffs {
            mouth_open: c.mouth_open + delta[0],
            mouth_closed: c.mouth_closed + delta[1],
            smile: c.smile + delta[2],
        }
        .clamped();
        let moved = (next.mouth_open - c.mouth_open).abs()
            + (next.mouth_closed - c.mouth_closed).abs()
            + (next.smile - c.smile).abs();
        c = next;
        if moved < 1e-10 {
            break;
        }
    }

    let r = residuals(&c);
    let rms = (r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64).sqrt();
    Ok(ExpressionFit {
        pose: pose.clone(),
        intrinsics: *intrinsics,
        coefficients: c,
        residual: rms,
    })
}

/// Outcome of [`neutralize_expression`].
#[derive(Debug, Clone)]
pub struct Neutralized {
    pub image: RasterImage,
    /// Set when fitting failed and the input was returned unchanged.
    pub skipped: bool,
    pub fit: Option<ExpressionFit>,
}

/// Coefficients after mouth neutralization: the fitted opening is zeroed
/// and transferred into the mouth-closed channel; smile is kept.
pub fn neutral_coefficients(fitted: &ExpressionCoeffs) -> ExpressionCoeffs {
    ExpressionCoeffs {
        mouth_open: 0.0,
        mouth_closed: (fitted.mouth_closed + fitted.mouth_open).clamp(0.0, 1.0),
        smile: fitted.smile,
    }
    .clamped()
}

/// Re-render the face with a neutralized mouth at the original pose and
/// composite it over the input inside the mesh silhouette, feathering the
/// boundary. Pixels outside the composite mask are bit-identical to the
/// input.
pub fn neutralize_expression(
    image: &RasterImage,
    landmarks: &LandmarkSet2D,
    basis: &BlendshapeBasis,
) -> Result<Neutralized, SynthError> {
    let skipped = |_: SynthError| Neutralized {
        image: image.clone(),
        skipped: true,
        fit: None,
    };

    let est: PoseEstimate =
        match estimate_pose(landmarks, &basis.neutral, (image.width, image.height)) {
            Ok(e) => e,
            Err(e) => return Ok(skipped(e.into())),
        };
    let fit = match fit_expression(landmarks, basis, &est.pose, &est.intrinsics) {
        Ok(f) => f,
        Err(e) => return Ok(skipped(e)),
    };

    // Texture is registered on the *fitted* geometry so lifting and
    // re-rendering agree where the expression does not move.
    let fitted_mesh = basis.apply(&fit.coefficients);
    let texcoords = texture_from_image(&fitted_mesh, image, &est.pose, &est.intrinsics);

    let neutral_mesh = basis.apply(&neutral_coefficients(&fit.coefficients));
    let render = rasterize(
        &neutral_mesh,
        &texcoords,
        image,
        &est.pose,
        &est.intrinsics,
        (image.width, image.height),
    )?;

    let mut out = image.clone();
    let w = image.width as usize;
    let h = image.height as usize;
    let band = FEATHER_BAND_PX as i64;
    // Feather weight: distance into the mask, over `band` pixels.
    let dist_to_outside = |x: i64, y: i64| -> i64 {
        for d in 1..=band {
            for yy in (y - d).max(0)..=(y + d).min(h as i64 - 1) {
                for xx in (x - d).max(0)..=(x + d).min(w as i64 - 1) {
                    if (yy - y).abs().max((xx - x).abs()) != d {
                        continue;
                    }
                    if !render.mask[(yy as usize) * w + xx as usize] {
                        return d;
                    }
                }
            }
            // Border of the canvas counts as outside.
            if x - d < 0 || y - d < 0 || x + d >= w as i64 || y + d >= h as i64 {
                return d;
            }
        }
        band
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !render.mask[p] {
                continue;
            }
            let d = dist_to_outside(x as i64, y as i64);
            let wgt = (d as f32 / band as f32).min(1.0);
            let mut blended = Vec::with_capacity(image.channels);
            for ch in 0..image.channels {
                let rendered = render.image.pixel(x as u32, y as u32)[ch];
                let original = image.pixel(x as u32, y as u32)[ch];
                blended.push(wgt * rendered + (1.0 - wgt) * original);
            }
            out.set_pixel(x as u32, y as u32, &blended);
        }
    }

    Ok(Neutralized {
        image: out,
        skipped: false,
        fit: Some(fit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::geometry::Projected;
    use crate::landmarks::Schema;

    fn smooth_texture(size: u32, seed: u32) -> RasterImage {
        RasterImage::from_fn(size, size, 1, |x, y| {
            let fx = x as f32 / size as f32;
            let fy = y as f32 / size as f32;
            let s = seed as f32;
            let v = 0.55
                + 0.20 * ((6.0 * fx + s).sin() * (5.0 * fy + 0.7 * s).cos())
                + 0.12 * ((11.0 * fy - s).sin());
            vec![v.clamp(0.0, 1.0)]
        })
    }

    /// Landmarks of `mesh` (optionally deformed by `basis` coefficients)
    /// rendered under the canvas camera at the given rotation.
    fn synthetic_landmarks(mesh: &Mesh, yaw: f64) -> (LandmarkSet2D, Intrinsics, Pose) {
        let rotation = euler_rotation(yaw, 0.0, 0.0);
        let (intr, pose) = canvas_camera(mesh, &rotation, RENDER_SIZE);
        let pts: Vec<[f64; 2]> = (0..68)
            .map(|slot| match project_one(&mesh.landmark(slot), &intr, &pose) {
                Projected::Pixel(p) => p,
                Projected::BehindCamera => [0.0, 0.0],
            })
            .collect();
        (
            LandmarkSet2D::all_visible(Schema::Face68, pts).unwrap(),
            intr,
            pose,
        )
    }

    #[test]
    fn pick_shape_is_deterministic_and_uniform() {
        let set = assets::shape_set();
        let a = pick_shape(42, "subject/img_001.png", &set);
        let b = pick_shape(42, "subject/img_001.png", &set);
        assert_eq!(a, b);

        let mut counts = [0usize; 10];
        let n = 10_000;
        for i in 0..n {
            counts[pick_shape(7, &format!("img_{i}"), &set)] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((0.08..=0.12).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn pick_shape_different_seeds_decorrelated() {
        let set = assets::shape_set();
        let n = 2000;
        let differing = (0..n)
            .filter(|i| {
                pick_shape(1, &format!("img_{i}"), &set) != pick_shape(2, &format!("img_{i}"), &set)
            })
            .count();
        let frac = differing as f64 / n as f64;
        assert!((0.85..=0.95).contains(&frac), "differing fraction {frac}");
    }

    #[test]
    fn signed_yaws_follow_source_sign() {
        assert_eq!(signed_yaws(12.0, &DEFAULT_YAWS), vec![0.0, 40.0, 75.0]);
        assert_eq!(signed_yaws(-12.0, &DEFAULT_YAWS), vec![-0.0, -40.0, -75.0]);
    }

    #[test]
    fn novel_views_mask_area_strictly_decreasing() {
        let shape = assets::generic_head(0);
        let (landmarks, _intr, _pose) = synthetic_landmarks(&shape, 0.0);
        let image = smooth_texture(RENDER_SIZE, 3);
        let outs = render_novel_views(&image, &landmarks, &shape, &[0.0, 40.0, 75.0]).unwrap();
        assert_eq!(outs.len(), 3);
        let areas: Vec<usize> = outs
            .iter()
            .map(|o| o.mask.iter().filter(|m| **m).count())
            .collect();
        assert!(
            areas[0] > areas[1] && areas[1] > areas[2],
            "mask areas {areas:?} not strictly decreasing"
        );
    }

    #[test]
    fn novel_views_insufficient_landmarks_error() {
        let shape = assets::generic_head(0);
        let (mut landmarks, _i, _p) = synthetic_landmarks(&shape, 0.0);
        for slot in 0..68 {
            landmarks.set_visible(slot, slot < 5);
        }
        let image = smooth_texture(64, 0);
        assert!(render_novel_views(&image, &landmarks, &shape, &[0.0]).is_err());
    }

    #[test]
    fn fit_expression_neutral_recovers_zero() {
        let basis = assets::blendshape_basis();
        let (landmarks, intr, pose) = synthetic_landmarks(&basis.neutral, 8.0);
        let fit = fit_expression(&landmarks, &basis, &pose, &intr).unwrap();
        assert!(fit.coefficients.mouth_open <= 0.02, "{:?}", fit.coefficients);
        assert!(fit.coefficients.mouth_closed <= 0.02);
        assert!(fit.coefficients.smile <= 0.02);
    }

    #[test]
    fn fit_expression_recovers_forward_coefficients() {
        let basis = assets::blendshape_basis();
        for open in [0.3, 0.7, 1.0] {
            let truth = ExpressionCoeffs {
                mouth_open: open,
                mouth_closed: 0.0,
                smile: 0.0,
            };
            let deformed = basis.apply(&truth);
            let (landmarks, intr, pose) = synthetic_landmarks(&deformed, 5.0);
            let fit = fit_expression(&landmarks, &basis, &pose, &intr).unwrap();
            assert!(
                (fit.coefficients.mouth_open - open).abs() <= 0.05,
                "open {open}: recovered {:?}",
                fit.coefficients
            );
        }
    }

    #[test]
    fn fit_expression_clamps_outside_box() {
        let basis = assets::blendshape_basis();
        let truth = ExpressionCoeffs {
            mouth_open: 1.3,
            mouth_closed: 0.0,
            smile: 0.0,
        };
        // Deliberately out-of-box forward synthesis (not clamped here).
        let mut deformed = basis.neutral.clone();
        for (i, v) in deformed.vertices.iter_mut().enumerate() {
            *v += truth.mouth_open * basis.mouth_open[i];
        }
        let (landmarks, intr, pose) = synthetic_landmarks(&deformed, 0.0);
        let fit = fit_expression(&landmarks, &basis, &pose, &intr).unwrap();
        assert!((fit.coefficients.mouth_open - 1.0).abs() < 1e-9);
        assert!(fit.residual > 0.1);
    }

    #[test]
    fn fit_expression_missing_mouth_unfittable() {
        let basis = assets::blendshape_basis();
        let (mut landmarks, intr, pose) = synthetic_landmarks(&basis.neutral, 0.0);
        for slot in MOUTH_SLOTS {
            landmarks.set_visible(slot, false);
        }
        assert!(matches!(
            fit_expression(&landmarks, &basis, &pose, &intr),
            Err(SynthError::ExpressionUnfittable(0))
        ));
    }

    #[test]
    fn neutralize_preserves_background_bit_identical() {
        let basis = assets::blendshape_basis();
        let truth = ExpressionCoeffs {
            mouth_open: 0.6,
            mouth_closed: 0.0,
            smile: 0.0,
        };
        let deformed = basis.apply(&truth);
        let (landmarks, _i, _p) = synthetic_landmarks(&deformed, 0.0);
        let image = smooth_texture(RENDER_SIZE, 9);
        let out = neutralize_expression(&image, &landmarks, &basis).unwrap();
        assert!(!out.skipped);
        // Corner pixels are far outside the face mask.
        for (x, y) in [(0u32, 0u32), (255, 0), (0, 255), (255, 255)] {
            assert_eq!(out.image.pixel(x, y), image.pixel(x, y));
        }
    }

    #[test]
    fn neutralize_closes_open_mouth() {
        let basis = assets::blendshape_basis();
        let truth = ExpressionCoeffs {
            mouth_open: 0.7,
            mouth_closed: 0.0,
            smile: 0.0,
        };
        let deformed = basis.apply(&truth);
        let (landmarks, intr, pose) = synthetic_landmarks(&deformed, 0.0);
        let out = neutralize_expression(&smooth_texture(RENDER_SIZE, 4), &landmarks, &basis).unwrap();
        let fit = out.fit.unwrap();
        // The neutralized model's mouth landmarks must land within 2 px of
        // the closed-mouth template at the same pose.
        let neutral_mesh = basis.apply(&neutral_coefficients(&fit.coefficients));
        let template = basis.apply(&ExpressionCoeffs {
            mouth_open: 0.0,
            mouth_closed: neutral_coefficients(&fit.coefficients).mouth_closed,
            smile: 0.0,
        });
        for slot in MOUTH_SLOTS {
            let a = project_one(&neutral_mesh.landmark(slot), &intr, &pose)
                .pixel()
                .unwrap();
            let b = project_one(&template.landmark(slot), &intr, &pose)
                .pixel()
                .unwrap();
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!(d <= 2.0, "slot {slot} off by {d} px");
        }
        // And the lip gap must have shrunk versus the open-mouth input.
        let gap = |mesh: &Mesh| {
            (mesh.landmark(62).y - mesh.landmark(66).y).abs()
        };
        assert!(gap(&neutral_mesh) < gap(&deformed) - 0.02);
    }

    #[test]
    fn neutralize_on_neutral_face_is_noop_inside() {
        let basis = assets::blendshape_basis();
        let (landmarks, _i, _p) = synthetic_landmarks(&basis.neutral, 0.0);
        let image = smooth_texture(RENDER_SIZE, 11);
        let out = neutralize_expression(&image, &landmarks, &basis).unwrap();
        assert!(!out.skipped);
        assert!(
            out.image.mae(&image, None) < 2.0 / 255.0,
            "mae {}",
            out.image.mae(&image, None)
        );
    }

    #[test]
    fn neutralize_is_idempotent_within_tolerance() {
        let basis = assets::blendshape_basis();
        let truth = ExpressionCoeffs {
            mouth_open: 0.5,
            mouth_closed: 0.0,
            smile: 0.0,
        };
        let deformed = basis.apply(&truth);
        let (landmarks, intr, pose) = synthetic_landmarks(&deformed, 0.0);
        let image = smooth_texture(RENDER_SIZE, 6);
        let once = neutralize_expression(&image, &landmarks, &basis).unwrap();
        // Landmarks of the neutralized output model.
        let fit = once.fit.as_ref().unwrap();
        let neutral_mesh = basis.apply(&neutral_coefficients(&fit.coefficients));
        let pts: Vec<[f64; 2]> = (0..68)
            .map(|slot| {
                project_one(&neutral_mesh.landmark(slot), &intr, &pose)
                    .pixel()
                    .unwrap()
            })
            .collect();
        let lm2 = LandmarkSet2D::all_visible(Schema::Face68, pts).unwrap();
        let twice = neutralize_expression(&once.image, &lm2, &basis).unwrap();
        let mae = twice.image.mae(&once.image, None);
        assert!(mae < 1.0 / 255.0, "idempotency mae {mae}");
    }

    #[test]
    fn neutralize_skips_on_fit_failure() {
        let basis = assets::blendshape_basis();
        let (mut landmarks, _i, _p) = synthetic_landmarks(&basis.neutral, 0.0);
        for slot in MOUTH_SLOTS {
            landmarks.set_visible(slot, false);
        }
        let image = smooth_texture(64, 2);
        let out = neutralize_expression(&image, &landmarks, &basis).unwrap();
        assert!(out.skipped);
        assert_eq!(out.image.data, image.data);
    }
}

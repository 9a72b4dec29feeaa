//! Perspective camera model, 6-DoF pose estimation from 2D-3D landmark
//! correspondences, yaw construction/decomposition, and 2D similarity
//! alignment.
//!
//! Conventions, fixed once and used everywhere:
//! - Camera looks down +z; a model point X maps to camera space as
//!   `Xc = R * X + t` and to pixels as `u = cx + f * Xc.x / Xc.z`,
//!   `v = cy + f * Xc.y / Xc.z`.
//! - Euler angles are intrinsic yaw (model vertical axis, y) -> pitch (x)
//!   -> roll (z): `R = Ry(yaw) * Rx(pitch) * Rz(roll)`.
//! - Positive yaw rotates the +x axis toward -z.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Rotation3, Vector2, Vector3};
use thiserror::Error;

use crate::landmarks::LandmarkSet2D;
use crate::mesh::Mesh;

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Minimum visible correspondences accepted by [`estimate_pose`].
pub const MIN_POSE_CORRESPONDENCES: usize = 6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("insufficient landmarks: need at least {need} visible, got {got}")]
    InsufficientLandmarks { need: usize, got: usize },
    #[error("pose failure: residual {residual:.2} px exceeds image diagonal {diagonal:.2} px")]
    PoseFailure { residual: f64, diagonal: f64 },
    #[error("rotation is not orthonormal with det +1")]
    InvalidRotation,
    #[error("focal length must be positive, got {0}")]
    InvalidFocal(f64),
    #[error("principal point ({0}, {1}) outside image bounds")]
    PrincipalPointOutOfBounds(f64, f64),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("unreliable yaw: pitch magnitude {0:.1} deg is gimbal-adjacent")]
    UnreliableYaw(f64),
}

/// Pinhole intrinsics with square pixels and zero skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_point: (f64, f64),
}

impl Intrinsics {
    pub fn new(focal: f64, principal_point: (f64, f64)) -> Result<Self, GeometryError> {
        if !(focal > 0.0) || !focal.is_finite() {
            return Err(GeometryError::InvalidFocal(focal));
        }
        Ok(Intrinsics {
            focal,
            principal_point,
        })
    }

    /// Intrinsics with the principal point at the image center, checked
    /// against the image bounds.
    pub fn centered(focal: f64, image_size: (u32, u32)) -> Result<Self, GeometryError> {
        let pp = (image_size.0 as f64 / 2.0, image_size.1 as f64 / 2.0);
        if pp.0 < 0.0 || pp.0 > image_size.0 as f64 || pp.1 < 0.0 || pp.1 > image_size.1 as f64 {
            return Err(GeometryError::PrincipalPointOutOfBounds(pp.0, pp.1));
        }
        Intrinsics::new(focal, pp)
    }
}

/// Rigid model-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let should_be_identity = rotation.transpose() * rotation - Matrix3::identity();
        if should_be_identity.norm() > ORTHONORMALITY_TOL * 10.0
            || (rotation.determinant() - 1.0).abs() > ORTHONORMALITY_TOL * 10.0
        {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Result of projecting a point: its pixel position, or a marker that it
/// sits at or behind the camera plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projected {
    Pixel([f64; 2]),
    BehindCamera,
}

impl Projected {
    pub fn pixel(&self) -> Option<[f64; 2]> {
        match self {
            Projected::Pixel(p) => Some(*p),
            Projected::BehindCamera => None,
        }
    }
}

const MIN_DEPTH: f64 = 1e-9;

/// Project model-space points through `pose` and `intrinsics`.
pub fn project(
    points: &[Vector3<f64>],
    intrinsics: &Intrinsics,
    pose: &Pose,
) -> Vec<Projected> {
    points
        .iter()
        .map(|p| project_one(p, intrinsics, pose))
        .collect()
}

pub fn project_one(p: &Vector3<f64>, intrinsics: &Intrinsics, pose: &Pose) -> Projected {
    let c = pose.transform(p);
    if c.z <= MIN_DEPTH {
        return Projected::BehindCamera;
    }
    let (cx, cy) = intrinsics.principal_point;
    Projected::Pixel([
        cx + intrinsics.focal * c.x / c.z,
        cy + intrinsics.focal * c.y / c.z,
    ])
}

/// Rotation about the model vertical axis (y) by `theta_deg`.
pub fn yaw_rotation(theta_deg: f64) -> Matrix3<f64> {
    let t = theta_deg.to_radians();
    let (s, c) = t.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn pitch_rotation(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn roll_rotation(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Compose a rotation from intrinsic yaw/pitch/roll in degrees.
pub fn euler_rotation(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Matrix3<f64> {
    yaw_rotation(yaw_deg) * pitch_rotation(pitch_deg.to_radians()) * roll_rotation(roll_deg.to_radians())
}

/// Yaw, pitch, roll angles in degrees under the fixed YXZ convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Decompose a pose into yaw/pitch/roll. Gimbal-adjacent poses
/// (|pitch| > 80 deg) are rejected as unreliable.
pub fn decompose_yaw(pose: &Pose) -> Result<EulerAngles, GeometryError> {
    let r = &pose.rotation;
    // R = Ry(a) Rx(b) Rz(g):
    //   R[(1,2)] = -sin b, R[(0,2)] = sin a cos b, R[(2,2)] = cos a cos b,
    //   R[(1,0)] = cos b sin g, R[(1,1)] = cos b cos g.
    let pitch = (-r[(1, 2)]).clamp(-1.0, 1.0).asin();
    let pitch_deg = pitch.to_degrees();
    if pitch_deg.abs() > 80.0 {
        return Err(GeometryError::UnreliableYaw(pitch_deg));
    }
    let yaw = r[(0, 2)].atan2(r[(2, 2)]);
    let roll = r[(1, 0)].atan2(r[(1, 1)]);
    Ok(EulerAngles {
        yaw: yaw.to_degrees(),
        pitch: pitch_deg,
        roll: roll.to_degrees(),
    })
}

/// Estimated pose with its supporting intrinsics and reprojection residual.
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    /// Root-mean-square landmark reprojection error in pixels.
    pub residual: f64,
}

/// Estimate (intrinsics, pose) from visible 2D landmarks and the mesh's 3D
/// landmark positions: DLT initialization, then damped Gauss-Newton over
/// (rotation, translation, focal) with the principal point fixed at the
/// image center.
pub fn estimate_pose(
    landmarks: &LandmarkSet2D,
    mesh: &Mesh,
    image_size: (u32, u32),
) -> Result<PoseEstimate, GeometryError> {
    let mut pts3 = Vec::new();
    let mut pts2 = Vec::new();
    for (slot, p) in landmarks.visible_points() {
        pts3.push(mesh.landmark(slot));
        pts2.push(Vector2::new(p[0], p[1]));
    }
    estimate_pose_from_points(&pts3, &pts2, image_size)
}

/// Same as [`estimate_pose`] but on raw correspondences.
pub fn estimate_pose_from_points(
    pts3: &[Vector3<f64>],
    pts2: &[Vector2<f64>],
    image_size: (u32, u32),
) -> Result<PoseEstimate, GeometryError> {
    let n = pts3.len();
    if n < MIN_POSE_CORRESPONDENCES {
        return Err(GeometryError::InsufficientLandmarks {
            need: MIN_POSE_CORRESPONDENCES,
            got: n,
        });
    }
    let focal0 = image_size.0 as f64;
    let intr0 = Intrinsics::centered(focal0, image_size)?;

    let pose0 = dlt_pose(pts3, pts2, &intr0)?;
    let (pose, focal, residual) = refine_pose(pts3, pts2, pose0, &intr0)?;

    let diagonal = ((image_size.0 as f64).powi(2) + (image_size.1 as f64).powi(2)).sqrt();
    if !residual.is_finite() || residual > diagonal {
        return Err(GeometryError::PoseFailure {
            residual,
            diagonal,
        });
    }
    Ok(PoseEstimate {
        intrinsics: Intrinsics::new(focal, intr0.principal_point)?,
        pose,
        residual,
    })
}

/// Linear pose initialization with known intrinsics: solve for the 3x4
/// matrix [A|b] with normalized image coordinates, fix scale and sign from
/// cheirality, and project A onto SO(3).
fn dlt_pose(
    pts3: &[Vector3<f64>],
    pts2: &[Vector2<f64>],
    intr: &Intrinsics,
) -> Result<Pose, GeometryError> {
    let n = pts3.len();
    let (cx, cy) = intr.principal_point;
    let f = intr.focal;

    // Normalize 3D points for conditioning.
    let centroid: Vector3<f64> = pts3.iter().sum::<Vector3<f64>>() / n as f64;
    let scale3 = {
        let mean_dist: f64 =
            pts3.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64;
        if mean_dist < 1e-12 {
            return Err(GeometryError::Degenerate("coincident 3d points"));
        }
        std::f64::consts::SQRT_2 / mean_dist
    };

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let p = (pts3[i] - centroid) * scale3;
        let x = (pts2[i].x - cx) / f;
        let y = (pts2[i].y - cy) / f;
        let row = 2 * i;
        // x-row: [P 1 0 0 -x*P -x]
        a[(row, 0)] = p.x;
        a[(row, 1)] = p.y;
        a[(row, 2)] = p.z;
        a[(row, 3)] = 1.0;
        a[(row, 8)] = -x * p.x;
        a[(row, 9)] = -x * p.y;
        a[(row, 10)] = -x * p.z;
        a[(row, 11)] = -x;
        let row = row + 1;
        a[(row, 4)] = p.x;
        a[(row, 5)] = p.y;
        a[(row, 6)] = p.z;
        a[(row, 7)] = 1.0;
        a[(row, 8)] = -y * p.x;
        a[(row, 9)] = -y * p.y;
        a[(row, 10)] = -y * p.z;
        a[(row, 11)] = -y;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let h = v_t.row(v_t.nrows() - 1);

    let mut m = Matrix3::zeros();
    let mut t = Vector3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = h[4 * r + c];
        }
        t[r] = h[4 * r + 3];
    }

    // Undo the 3D normalization: M' * (s*(P - c)) + t  =  (s*M')*P + (t - s*M'*c)
    let mut m_full = m * scale3;
    let mut t_full = t - m_full * centroid;

    // Fix scale so the rotation part has unit-norm rows on average.
    let row_scale = (m_full.row(0).norm() * m_full.row(1).norm() * m_full.row(2).norm())
        .powf(1.0 / 3.0);
    if row_scale < 1e-15 {
        return Err(GeometryError::Degenerate("zero-scale dlt solution"));
    }
    m_full /= row_scale;
    t_full /= row_scale;

    // Cheirality: mean depth must be positive.
    let mean_depth: f64 = pts3
        .iter()
        .map(|p| (m_full * p + t_full).z)
        .sum::<f64>()
        / n as f64;
    if mean_depth < 0.0 {
        m_full = -m_full;
        t_full = -t_full;
    }

    // Project onto SO(3).
    let svd = m_full.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    Pose::new(r, t_full)
}

fn reprojection_residuals(
    pts3: &[Vector3<f64>],
    pts2: &[Vector2<f64>],
    pose: &Pose,
    focal: f64,
    pp: (f64, f64),
) -> DVector<f64> {
    let n = pts3.len();
    let mut r = DVector::zeros(2 * n);
    for i in 0..n {
        let c = pose.transform(&pts3[i]);
        let z = if c.z.abs() < MIN_DEPTH { MIN_DEPTH } else { c.z };
        r[2 * i] = pp.0 + focal * c.x / z - pts2[i].x;
        r[2 * i + 1] = pp.1 + focal * c.y / z - pts2[i].y;
    }
    r
}

/// Damped Gauss-Newton over a 7-vector [rotation update (so3), translation,
/// log focal]. Jacobian by central differences; Levenberg damping adapted
/// multiplicatively.
fn refine_pose(
    pts3: &[Vector3<f64>],
    pts2: &[Vector2<f64>],
    pose0: Pose,
    intr0: &Intrinsics,
) -> Result<(Pose, f64, f64), GeometryError> {
    let n = pts3.len();
    let pp = intr0.principal_point;
    let mut rot = pose0.rotation;
    let mut trans = pose0.translation;
    let mut log_f = intr0.focal.ln();

    let apply = |rot: &Matrix3<f64>, trans: &Vector3<f64>, log_f: f64, delta: &DVector<f64>| {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let dr = Rotation3::from_scaled_axis(w);
        let r = dr.into_inner() * rot;
        let t = trans + Vector3::new(delta[3], delta[4], delta[5]);
        let lf = log_f + delta[6];
        (r, t, lf)
    };
    let residual_of = |rot: &Matrix3<f64>, trans: &Vector3<f64>, log_f: f64| {
        let pose = Pose {
            rotation: *rot,
            translation: *trans,
        };
        reprojection_residuals(pts3, pts2, &pose, log_f.exp(), pp)
    };

    let mut res = residual_of(&rot, &trans, log_f);
    let mut cost = res.norm_squared();
    let mut lambda = 1e-3;
    let step_scale = {
        // Finite-difference step sizes per parameter block.
        let t_mag = trans.norm().max(1.0);
        [1e-6, 1e-6, 1e-6, 1e-6 * t_mag, 1e-6 * t_mag, 1e-6 * t_mag, 1e-6]
    };

    for _ in 0..100 {
        // Central-difference Jacobian.
        let mut jac = DMatrix::<f64>::zeros(2 * n, 7);
        for k in 0..7 {
            let h = step_scale[k];
            let mut dp = DVector::zeros(7);
            dp[k] = h;
            let (rp, tp, fp) = apply(&rot, &trans, log_f, &dp);
            dp[k] = -h;
            let (rm, tm, fm) = apply(&rot, &trans, log_f, &dp);
            let col = (residual_of(&rp, &tp, fp) - residual_of(&rm, &tm, fm)) / (2.0 * h);
            jac.set_column(k, &col);
        }

        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for d in 0..7 {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let (r_new, t_new, f_new) = apply(&rot, &trans, log_f, &delta);
            let res_new = residual_of(&r_new, &t_new, f_new);
            let cost_new = res_new.norm_squared();
            if cost_new < cost {
                let rel_drop = (cost - cost_new) / cost.max(1e-300);
                rot = r_new;
                trans = t_new;
                log_f = f_new;
                res = res_new;
                cost = cost_new;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_drop < 1e-14 || delta.norm() < 1e-14 {
                    let rms = (cost / (2.0 * n as f64)).sqrt();
                    return Ok((Pose { rotation: rot, translation: trans }, log_f.exp(), rms));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let rms = (cost / (2.0 * n as f64)).sqrt();
    Ok((
        Pose {
            rotation: rot,
            translation: trans,
        },
        log_f.exp(),
        rms,
    ))
}

/// A 2D similarity transform `x -> scale * R * x + t`.
#[derive(Debug, Clone, Copy)]
pub struct Similarity2D {
    pub scale: f64,
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl Similarity2D {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let v = self.scale * self.rotation * Vector2::new(p[0], p[1]) + self.translation;
        [v.x, v.y]
    }

    pub fn inverse(&self) -> Similarity2D {
        let inv_scale = 1.0 / self.scale;
        let rot_t = self.rotation.transpose();
        Similarity2D {
            scale: inv_scale,
            rotation: rot_t,
            translation: -inv_scale * rot_t * self.translation,
        }
    }
}

/// Least-squares similarity aligning `src` onto `dst` (closed form, no
/// reflection). Exact when the pairs are truly similarity-related.
pub fn estimate_similarity_2d(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
) -> Result<Similarity2D, GeometryError> {
    let n = src.len();
    if n < 2 || dst.len() != n {
        return Err(GeometryError::Degenerate("need at least 2 point pairs"));
    }
    let mean = |pts: &[[f64; 2]]| {
        let mut m = Vector2::zeros();
        for p in pts {
            m += Vector2::new(p[0], p[1]);
        }
        m / n as f64
    };
    let ms = mean(src);
    let md = mean(dst);

    let mut cov = Matrix2::zeros();
    let mut var_src = 0.0;
    for i in 0..n {
        let s = Vector2::new(src[i][0], src[i][1]) - ms;
        let d = Vector2::new(dst[i][0], dst[i][1]) - md;
        cov += d * s.transpose();
        var_src += s.norm_squared();
    }
    if var_src < 1e-18 {
        return Err(GeometryError::Degenerate("coincident source points"));
    }

    // Rotation-only Procrustes in 2D has a closed form from the cosine /
    // sine sums of the covariance.
    let a = cov[(0, 0)] + cov[(1, 1)];
    let b = cov[(1, 0)] - cov[(0, 1)];
    let norm = (a * a + b * b).sqrt();
    let (c, s) = if norm < 1e-18 {
        (1.0, 0.0)
    } else {
        (a / norm, b / norm)
    };
    let rotation = Matrix2::new(c, -s, s, c);
    let scale = norm / var_src;
    let translation = md - scale * rotation * ms;
    Ok(Similarity2D {
        scale,
        rotation,
        translation,
    })
}

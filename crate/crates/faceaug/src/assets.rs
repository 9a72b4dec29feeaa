//! Bundled data assets, built procedurally: a family of ten generic 3D head
//! shapes sharing one topology and landmark map, and a small blendshape
//! basis (neutral + mouth-open, mouth-closed, smile deltas) defined on the
//! base head.
//!
//! The heads are lat/long ellipsoid grids with feature bumps (nose, brow,
//! cheeks, lips, chin). All shapes share the grid, so the 68-point landmark
//! map is selected once on the base head and transferred by index to the
//! other nine. Geometry is mirror-symmetric about x = 0, which makes the
//! symmetry map exact on the grid.

use nalgebra::Vector3;

use crate::landmarks::Schema;
use crate::mesh::{Mesh, MeshError};
use crate::synth::{BlendshapeBasis, ShapeSet};

/// Default grid resolution (latitude rows, longitude columns).
pub const LAT_STEPS: usize = 64;
pub const LON_STEPS: usize = 72;

/// Number of generic shapes in the bundled set.
pub const SHAPE_COUNT: usize = 10;

/// Per-shape parameters of the head family.
#[derive(Debug, Clone, Copy)]
struct HeadParams {
    rx: f64,
    ry: f64,
    rz: f64,
    nose: f64,
    cheek: f64,
    brow: f64,
    chin: f64,
}

/// Ten fixed parameter sets; index 0 is the base head.
const HEAD_PARAMS: [HeadParams; SHAPE_COUNT] = [
    HeadParams { rx: 1.00, ry: 1.30, rz: 0.72, nose: 0.22, cheek: 0.08, brow: 0.05, chin: 0.06 },
    HeadParams { rx: 1.04, ry: 1.27, rz: 0.74, nose: 0.20, cheek: 0.10, brow: 0.04, chin: 0.05 },
    HeadParams { rx: 0.97, ry: 1.33, rz: 0.70, nose: 0.25, cheek: 0.06, brow: 0.06, chin: 0.07 },
    HeadParams { rx: 1.02, ry: 1.31, rz: 0.73, nose: 0.18, cheek: 0.12, brow: 0.05, chin: 0.04 },
    HeadParams { rx: 0.98, ry: 1.28, rz: 0.71, nose: 0.24, cheek: 0.09, brow: 0.03, chin: 0.08 },
    HeadParams { rx: 1.05, ry: 1.34, rz: 0.75, nose: 0.21, cheek: 0.07, brow: 0.06, chin: 0.05 },
    HeadParams { rx: 0.96, ry: 1.29, rz: 0.69, nose: 0.23, cheek: 0.11, brow: 0.04, chin: 0.06 },
    HeadParams { rx: 1.03, ry: 1.32, rz: 0.74, nose: 0.19, cheek: 0.08, brow: 0.05, chin: 0.07 },
    HeadParams { rx: 0.99, ry: 1.26, rz: 0.70, nose: 0.26, cheek: 0.10, brow: 0.04, chin: 0.05 },
    HeadParams { rx: 1.01, ry: 1.35, rz: 0.73, nose: 0.22, cheek: 0.09, brow: 0.06, chin: 0.06 },
];

#[inline]
fn gauss(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Angular distance accounting for phi wrap.
#[inline]
fn ang2(theta: f64, phi: f64, t0: f64, p0: f64, st: f64, sp: f64) -> f64 {
    let mut dp = phi - p0;
    while dp > std::f64::consts::PI {
        dp -= std::f64::consts::TAU;
    }
    while dp < -std::f64::consts::PI {
        dp += std::f64::consts::TAU;
    }
    let dt = theta - t0;
    gauss(dt, st) * gauss(dp, sp)
}

/// Radial scale of the feature bumps at (theta, phi). Front of the head is
/// phi = 0; everything uses |phi| so the field is mirror-symmetric.
fn bump_field(theta: f64, phi: f64, p: &HeadParams) -> f64 {
    let mut s = 1.0;
    // Nose.
    s += p.nose * ang2(theta, phi, 1.80, 0.0, 0.16, 0.14);
    // Nose bridge ridge.
    s += 0.25 * p.nose * ang2(theta, phi, 1.60, 0.0, 0.14, 0.10);
    // Nose tip accent, tight enough that the tip stays the frontmost point.
    s += 0.5 * p.nose * ang2(theta, phi, 1.82, 0.0, 0.08, 0.08);
    // Brow ridge.
    s += p.brow * ang2(theta, phi, 1.30, 0.0, 0.10, 0.55);
    // Cheeks.
    s += p.cheek * ang2(theta, phi.abs(), 1.95, 0.55, 0.22, 0.20);
    // Lips.
    s += 0.06 * ang2(theta, phi, 2.05, 0.0, 0.10, 0.35);
    // Chin.
    s += p.chin * ang2(theta, phi, 2.45, 0.0, 0.15, 0.25);
    // Eye sockets (slight indentation).
    s -= 0.04 * ang2(theta, phi.abs(), 1.45, 0.35, 0.10, 0.10);
    s
}

fn head_vertex(i: usize, j: usize, lat: usize, lon: usize, p: &HeadParams) -> Vector3<f64> {
    let theta = std::f64::consts::PI * i as f64 / lat as f64;
    let phi = std::f64::consts::TAU * j as f64 / lon as f64;
    // Wrap phi to (-pi, pi] so the mirror map j -> (lon - j) % lon negates x.
    let phi = if phi > std::f64::consts::PI {
        phi - std::f64::consts::TAU
    } else {
        phi
    };
    let s = bump_field(theta, phi, p);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    // Camera coordinates: x right, y down, z forward. The head faces the
    // camera, so the face front (phi = 0) points to -z and the head top
    // (theta = 0) to -y.
    Vector3::new(p.rx * s * st * sp, -p.ry * s * ct, -p.rz * s * st * cp)
}

fn grid_triangles(lat: usize, lon: usize) -> Vec<[usize; 3]> {
    let mut tris = Vec::with_capacity(2 * lat * lon);
    let idx = |i: usize, j: usize| i * lon + (j % lon);
    for i in 0..lat {
        for j in 0..lon {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    tris
}

/// Canonical (theta, phi) angular positions of the 68 landmark slots on the
/// head parameterization.
fn landmark_angles() -> Vec<(f64, f64)> {
    let mut lm = Vec::with_capacity(68);
    // 0..=16 jaw contour, subject's right (x < 0, phi < 0) to left.
    for k in 0..17 {
        let t = (k as f64 - 8.0) / 8.0;
        lm.push((2.45 - 0.95 * t * t, 1.05 * t));
    }
    // 17..=21 right eyebrow, 22..=26 left eyebrow.
    for k in 0..5 {
        let f = k as f64 / 4.0;
        lm.push((1.32 - 0.06 * (1.0 - (2.0 * f - 1.0).powi(2)), -0.60 + 0.42 * f));
    }
    for k in 0..5 {
        let f = k as f64 / 4.0;
        lm.push((1.32 - 0.06 * (1.0 - (2.0 * f - 1.0).powi(2)), 0.18 + 0.42 * f));
    }
    // 27..=30 nose bridge down to tip.
    for k in 0..4 {
        lm.push((1.50 + 0.10 * k as f64, 0.0));
    }
    // 31..=35 nose base.
    for k in 0..5 {
        lm.push((1.92, -0.18 + 0.09 * k as f64));
    }
    // 36..=41 right eye hexagon (outer corner first, clockwise in image).
    let eye = |cx: f64, sign: f64| -> Vec<(f64, f64)> {
        vec![
            (1.45, cx - 0.14 * sign),
            (1.40, cx - 0.06 * sign),
            (1.40, cx + 0.05 * sign),
            (1.45, cx + 0.13 * sign),
            (1.51, cx + 0.05 * sign),
            (1.51, cx - 0.06 * sign),
        ]
    };
    lm.extend(eye(-0.35, 1.0));
    // 42..=47 left eye (inner corner first).
    lm.extend(eye(0.35, -1.0));
    // 48..=59 outer lip ring: right corner, upper lip, left corner, lower lip.
    lm.push((2.06, -0.40));
    for k in 0..5 {
        lm.push((1.97, -0.26 + 0.13 * k as f64));
    }
    lm.push((2.06, 0.40));
    for k in 0..5 {
        lm.push((2.16, 0.26 - 0.13 * k as f64));
    }
    // 60..=67 inner lip ring.
    lm.push((2.06, -0.28));
    for k in 0..3 {
        lm.push((2.01, -0.13 + 0.13 * k as f64));
    }
    lm.push((2.06, 0.28));
    for k in 0..3 {
        lm.push((2.11, 0.13 - 0.13 * k as f64));
    }
    assert_eq!(lm.len(), 68);
    lm
}

/// Snap landmark angles to grid vertex indices (one-time selection, shared
/// by all shapes).
fn landmark_map(lat: usize, lon: usize) -> Vec<usize> {
    landmark_angles()
        .into_iter()
        .map(|(theta, phi)| {
            let i = (theta / std::f64::consts::PI * lat as f64).round() as usize;
            let i = i.min(lat);
            let phi = if phi < 0.0 { phi + std::f64::consts::TAU } else { phi };
            let j = ((phi / std::f64::consts::TAU * lon as f64).round() as usize) % lon;
            i * lon + j
        })
        .collect()
}

fn grid_symmetry(lat: usize, lon: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity((lat + 1) * lon);
    for i in 0..=lat {
        for j in 0..lon {
            map.push(i * lon + ((lon - j) % lon));
        }
    }
    map
}

/// Build generic head `id` (0..10) at a custom grid resolution.
pub fn generic_head_with_resolution(id: usize, lat: usize, lon: usize) -> Mesh {
    let p = &HEAD_PARAMS[id % SHAPE_COUNT];
    let mut vertices = Vec::with_capacity((lat + 1) * lon);
    for i in 0..=lat {
        for j in 0..lon {
            vertices.push(head_vertex(i, j, lat, lon, p));
        }
    }
    Mesh::new(
        vertices,
        grid_triangles(lat, lon),
        landmark_map(lat, lon),
        Schema::Face68,
        grid_symmetry(lat, lon),
    )
    .expect("procedural head is well-formed")
}

/// Build generic head `id` (0..10) at the default resolution.
pub fn generic_head(id: usize) -> Mesh {
    generic_head_with_resolution(id, LAT_STEPS, LON_STEPS)
}

/// The full ten-shape set.
pub fn shape_set() -> ShapeSet {
    ShapeSet::new((0..SHAPE_COUNT).map(generic_head).collect())
        .expect("procedural shape set is consistent")
}

fn smooth_step(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Blendshape displacement fields on the default grid, in mesh units.
fn expression_deltas(lat: usize, lon: usize, base: &Mesh) -> [Vec<Vector3<f64>>; 3] {
    let n = base.vertex_count();
    let mut mouth_open = vec![Vector3::zeros(); n];
    let mut mouth_closed = vec![Vector3::zeros(); n];
    let mut smile = vec![Vector3::zeros(); n];
    for i in 0..=lat {
        for j in 0..lon {
            let theta = std::f64::consts::PI * i as f64 / lat as f64;
            let phi = {
                let p = std::f64::consts::TAU * j as f64 / lon as f64;
                if p > std::f64::consts::PI { p - std::f64::consts::TAU } else { p }
            };
            let v = i * lon + j;
            let front = gauss(phi, 0.55);

            // Mouth-open: lower lip and jaw drop (+y is down). Active below
            // the lip parting line (theta = 2.06), fading past the chin.
            let below = smooth_step((theta - 2.09) / 0.035);
            let above_cut = 1.0 - smooth_step((theta - 2.75) / 0.08);
            mouth_open[v] = Vector3::new(0.0, 0.14 * below * above_cut * front, 0.0);

            // Mouth-closed: press the lips toward the parting line.
            let w = gauss(theta - 2.06, 0.10) * gauss(phi, 0.40);
            let toward = if theta < 2.06 { 1.0 } else { -1.0 };
            mouth_closed[v] = Vector3::new(0.0, 0.05 * toward * w, 0.0);

            // Smile: mouth corners up and out.
            let wc = gauss(theta - 2.06, 0.14) * gauss(phi.abs() - 0.40, 0.14);
            smile[v] = Vector3::new(0.05 * phi.signum() * wc, -0.05 * wc, 0.0);
        }
    }
    [mouth_open, mouth_closed, smile]
}

/// The bundled blendshape basis on the base head.
pub fn blendshape_basis() -> BlendshapeBasis {
    let neutral = generic_head(0);
    let [mouth_open, mouth_closed, smile] = expression_deltas(LAT_STEPS, LON_STEPS, &neutral);
    BlendshapeBasis::new(neutral, mouth_open, mouth_closed, smile)
        .expect("procedural basis is consistent")
}

/// Write the shape set and blendshape deltas as OBJ + sidecar assets.
pub fn write_assets(dir: &std::path::Path) -> Result<(), MeshError> {
    std::fs::create_dir_all(dir)?;
    let set = shape_set();
    for (i, mesh) in set.shapes.iter().enumerate() {
        mesh.save_obj(
            &dir.join(format!("shape{i}.obj")),
            &dir.join(format!("shape{i}.landmarks")),
        )?;
    }
    let basis = blendshape_basis();
    for (name, delta) in [
        ("mouth_open", &basis.mouth_open),
        ("mouth_closed", &basis.mouth_closed),
        ("smile", &basis.smile),
    ] {
        let mut text = String::new();
        for d in delta {
            text.push_str(&format!("v {} {} {}\n", d.x, d.y, d.z));
        }
        std::fs::write(dir.join(format!("delta_{name}.obj")), text)?;
    }
    Ok(())
}

/// Load the shape set from a directory written by [`write_assets`]; falls
/// back to the procedural builders when files are absent.
pub fn load_or_build_shape_set(dir: Option<&std::path::Path>) -> Result<ShapeSet, MeshError> {
    let Some(dir) = dir else {
        return Ok(shape_set());
    };
    let mut shapes = Vec::with_capacity(SHAPE_COUNT);
    for i in 0..SHAPE_COUNT {
        let obj = dir.join(format!("shape{i}.obj"));
        if !obj.exists() {
            return Ok(shape_set());
        }
        shapes.push(Mesh::load(
            &obj,
            &dir.join(format!("shape{i}.landmarks")),
            Schema::Face68,
        )?);
    }
    Ok(ShapeSet::new(shapes).expect("loaded shape set is consistent"))
}

/// Load the blendshape basis from asset files, or build procedurally.
pub fn load_or_build_basis(dir: Option<&std::path::Path>) -> Result<BlendshapeBasis, MeshError> {
    let Some(dir) = dir else {
        return Ok(blendshape_basis());
    };
    let neutral_obj = dir.join("shape0.obj");
    if !neutral_obj.exists() || !dir.join("delta_mouth_open.obj").exists() {
        return Ok(blendshape_basis());
    }
    let neutral = Mesh::load(&neutral_obj, &dir.join("shape0.landmarks"), Schema::Face68)?;
    let load_delta = |name: &str| -> Result<Vec<Vector3<f64>>, MeshError> {
        let (v, _) = Mesh::parse_obj(&std::fs::read_to_string(dir.join(name))?)?;
        Ok(v)
    };
    let basis = BlendshapeBasis::new(
        neutral,
        load_delta("delta_mouth_open.obj")?,
        load_delta("delta_mouth_closed.obj")?,
        load_delta("delta_smile.obj")?,
    )
    .expect("loaded basis is consistent");
    Ok(basis)
}

//! Z-buffered triangle rasterization of a textured face mesh under a
//! perspective camera: per-vertex texture lifted from a source image,
//! perspective-correct interpolation, and soft-symmetry fill of
//! self-occluded regions.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{project_one, Intrinsics, Pose, Projected};
use crate::mesh::Mesh;
use crate::raster::RasterImage;

/// Default feather band width, in pixels, at the valid/invalid boundary of
/// the soft-symmetry fill.
pub const FEATHER_BAND_PX: u32 = 3;

/// Relative depth tolerance for the vertex visibility z-test, as a fraction
/// of the camera-space depth extent of the mesh.
pub const DEPTH_TOL_FRACTION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("texcoord count {got} does not match vertex count {want}")]
    TexCoordMismatch { got: usize, want: usize },
}

/// Per-vertex texture coordinates into a source image, with validity flags
/// (projected inside the source and visible under the source pose).
#[derive(Debug, Clone)]
pub struct TexCoords {
    pub coords: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

/// A rendered view: color image, face/background mask, and per-pixel
/// camera depth (infinite outside the mask).
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: RasterImage,
    pub mask: Vec<bool>,
    pub depth: Vec<f64>,
    /// Set when the mesh projected to an empty area.
    pub empty: bool,
    /// Set when the symmetry fill was skipped (no symmetry map).
    pub symmetry_skipped: bool,
}

/// Per-vertex visibility under a pose: a vertex is visible iff its depth
/// matches the z-buffer minimum at its projected pixel within tolerance.
pub fn vertex_visibility(
    mesh: &Mesh,
    pose: &Pose,
    intrinsics: &Intrinsics,
    image_size: (u32, u32),
) -> Vec<bool> {
    let (w, h) = image_size;
    let cam: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| pose.transform(v)).collect();
    let screen: Vec<Option<(f64, f64, f64)>> = mesh
        .vertices
        .iter()
        .zip(cam.iter())
        .map(|(v, c)| match project_one(v, intrinsics, pose) {
            Projected::Pixel(p) => Some((p[0], p[1], c.z)),
            Projected::BehindCamera => None,
        })
        .collect();

    let (zmin, zmax) = cam.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, c| {
        (acc.0.min(c.z), acc.1.max(c.z))
    });
    let tol = DEPTH_TOL_FRACTION * (zmax - zmin).max(1e-12);

    let buf = depth_buffer(&screen, &mesh.triangles, (w, h));

    screen
        .iter()
        .enumerate()
        .map(|(vi, s)| {
            let Some((x, y, z)) = s else { return false };
            let xi = x.floor();
            let yi = y.floor();
            if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                return false;
            }
            let i = (yi as u32 * w + xi as u32) as usize;
            // The buffer holds the nearest surface covering this pixel; a
            // vertex on that surface may miss its own pixel's sample point,
            // so an empty cell, a depth match, or the vertex's own triangle
            // winning the pixel all count as visible.
            if buf.depth[i] == f64::INFINITY || *z <= buf.depth[i] + tol {
                return true;
            }
            let winner = buf.tri[i];
            winner != u32::MAX && mesh.triangles[winner as usize].contains(&vi)
        })
        .collect()
}

/// Lift per-vertex texture coordinates from the source image: each vertex
/// gets its projection under the source pose; validity requires landing
/// inside the source bounds and being unoccluded.
pub fn texture_from_image(
    mesh: &Mesh,
    source: &RasterImage,
    source_pose: &Pose,
    intrinsics: &Intrinsics,
) -> TexCoords {
    let visible = vertex_visibility(mesh, source_pose, intrinsics, (source.width, source.height));
    let mut coords = Vec::with_capacity(mesh.vertex_count());
    let mut valid = Vec::with_capacity(mesh.vertex_count());
    for (i, v) in mesh.vertices.iter().enumerate() {
        match project_one(v, intrinsics, source_pose) {
            Projected::Pixel([u, w]) => {
                let inside = u >= 0.0
                    && w >= 0.0
                    && u <= (source.width - 1) as f64
                    && w <= (source.height - 1) as f64;
                coords.push([u, w]);
                valid.push(inside && visible[i]);
            }
            Projected::BehindCamera => {
                coords.push([0.0, 0.0]);
                valid.push(false);
            }
        }
    }
    TexCoords { coords, valid }
}

/// Intermediate rasterization result: shaded primary samples plus the
/// mirrored-side samples needed by [`soft_symmetry_fill`].
#[derive(Debug, Clone)]
pub struct PartialRender {
    pub output: RenderOutput,
    /// Pixels covered by geometry (face silhouette).
    covered: Vec<bool>,
    /// Covered pixels whose primary texture sample is valid.
    primary_valid: Vec<bool>,
    /// Mirrored-region color where valid.
    mirror_color: Vec<Option<Vec<f32>>>,
    /// Raster depth for every covered pixel, valid or not.
    coverage_depth: Vec<f64>,
}

/// Rasterize without symmetry fill: z-buffered, perspective-correct
/// barycentric interpolation of texture coordinates, bilinear sampling.
/// Pixels with invalid texture stay black and unmasked in `output`, but
/// carry mirrored-side samples in the returned [`PartialRender`].
pub fn rasterize_partial(
    mesh: &Mesh,
    texcoords: &TexCoords,
    source: &RasterImage,
    target_pose: &Pose,
    intrinsics: &Intrinsics,
    out_size: (u32, u32),
) -> Result<PartialRender, RenderError> {
    let nv = mesh.vertex_count();
    if texcoords.coords.len() != nv || texcoords.valid.len() != nv {
        return Err(RenderError::TexCoordMismatch {
            got: texcoords.coords.len(),
            want: nv,
        });
    }
    let (w, h) = out_size;
    let npix = (w as usize) * (h as usize);

    let screen: Vec<Option<(f64, f64, f64)>> = mesh
        .vertices
        .iter()
        .map(|v| {
            let c = target_pose.transform(v);
            match project_one(v, intrinsics, target_pose) {
                Projected::Pixel(p) => Some((p[0], p[1], c.z)),
                Projected::BehindCamera => None,
            }
        })
        .collect();

    // Attributes: primary texcoord + validity, mirrored texcoord + validity.
    let has_symmetry = mesh.symmetry_map.len() == nv;
    let attrs: Vec<[f64; 6]> = (0..nv)
        .map(|i| {
            let t = texcoords.coords[i];
            let tv = if texcoords.valid[i] { 1.0 } else { 0.0 };
            let (m, mv) = if has_symmetry {
                let j = mesh.symmetry_map[i];
                (
                    texcoords.coords[j],
                    if texcoords.valid[j] { 1.0 } else { 0.0 },
                )
            } else {
                ([0.0, 0.0], 0.0)
            };
            [t[0], t[1], tv, m[0], m[1], mv]
        })
        .collect();

    let raster = rasterize_attributes(&screen, &mesh.triangles, &attrs, out_size);

    let channels = source.channels;
    let mut image = RasterImage::zeros(w, h, channels);
    let mut mask = vec![false; npix];
    let mut depth = vec![f64::INFINITY; npix];
    let mut covered = vec![false; npix];
    let mut primary_valid = vec![false; npix];
    let mut mirror_color: Vec<Option<Vec<f32>>> = vec![None; npix];

    for p in 0..npix {
        if raster.depth[p] == f64::INFINITY {
            continue;
        }
        covered[p] = true;
        let a = &raster.attrs[p];
        // A pixel counts as valid only when all contributing vertices are.
        if a[2] > 0.999 {
            let color = source.sample_bilinear(a[0], a[1]);
            let x = (p % w as usize) as u32;
            let y = (p / w as usize) as u32;
            image.set_pixel(x, y, &color);
            mask[p] = true;
            depth[p] = raster.depth[p];
            primary_valid[p] = true;
        }
        if a[5] > 0.999 {
            mirror_color[p] = Some(source.sample_bilinear(a[3], a[4]));
        }
    }

    let empty = !covered.iter().any(|&c| c);
    Ok(PartialRender {
        output: RenderOutput {
            image,
            mask,
            depth,
            empty,
            symmetry_skipped: false,
        },
        covered,
        primary_valid,
        mirror_color,
        coverage_depth: raster.depth,
    })
}

/// Fill self-occluded (texture-invalid) pixels from the mirrored side of
/// the face, feathering over a `band_px`-pixel band at the valid/invalid
/// boundary. Pixels invalid on both sides stay black and unmasked.
pub fn soft_symmetry_fill(partial: PartialRender, mesh: &Mesh, band_px: u32) -> RenderOutput {
    let mut part = partial;
    if mesh.symmetry_map.len() != mesh.vertex_count() {
        part.output.symmetry_skipped = true;
        return part.output;
    }
    let w = part.output.image.width as usize;
    let h = part.output.image.height as usize;
    let channels = part.output.image.channels;

    // No invalid covered pixels: the fill is a no-op.
    let any_invalid = (0..w * h).any(|p| part.covered[p] && !part.primary_valid[p]);
    if !any_invalid {
        return part.output;
    }

    // Chebyshev distance from each valid pixel to the nearest invalid
    // covered pixel, capped at the band width.
    let band = band_px.max(1) as i64;
    let dist_to_invalid = |x: i64, y: i64| -> i64 {
        for d in 1..=band {
            for yy in (y - d).max(0)..=(y + d).min(h as i64 - 1) {
                for xx in (x - d).max(0)..=(x + d).min(w as i64 - 1) {
                    if (yy - y).abs().max((xx - x).abs()) != d {
                        continue;
                    }
                    let p = (yy as usize) * w + xx as usize;
                    if part.covered[p] && !part.primary_valid[p] {
                        return d;
                    }
                }
            }
        }
        band
    };

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !part.covered[p] {
                continue;
            }
            if part.primary_valid[p] {
                let Some(mirror) = &part.mirror_color[p] else { continue };
                let d = dist_to_invalid(x as i64, y as i64);
                if d >= band {
                    continue;
                }
                let wgt = d as f32 / band as f32;
                let mut blended = Vec::with_capacity(channels);
                for c in 0..channels {
                    let prim = part.output.image.pixel(x as u32, y as u32)[c];
                    blended.push(wgt * prim + (1.0 - wgt) * mirror[c]);
                }
                part.output.image.set_pixel(x as u32, y as u32, &blended);
            } else if let Some(mirror) = part.mirror_color[p].clone() {
                part.output.image.set_pixel(x as u32, y as u32, &mirror);
                part.output.mask[p] = true;
                // Depth of the surface we filled; the raster pass left the
                // output depth infinite because the pixel was unmasked.
                part.output.depth[p] = part.coverage_depth[p];
            }
        }
    }
    part.output
}

/// Full render: rasterize then soft-symmetry fill with the default feather
/// band.
pub fn rasterize(
    mesh: &Mesh,
    texcoords: &TexCoords,
    source: &RasterImage,
    target_pose: &Pose,
    intrinsics: &Intrinsics,
    out_size: (u32, u32),
) -> Result<RenderOutput, RenderError> {
    let partial = rasterize_partial(mesh, texcoords, source, target_pose, intrinsics, out_size)?;
    Ok(soft_symmetry_fill(partial, mesh, FEATHER_BAND_PX))
}

struct AttrBuffer<const A: usize> {
    depth: Vec<f64>,
    attrs: Vec<[f64; A]>,
    /// Index of the triangle that won each pixel (`u32::MAX` when empty).
    tri: Vec<u32>,
}

/// Depth-only rasterization (used for visibility tests).
fn depth_buffer(
    screen: &[Option<(f64, f64, f64)>],
    triangles: &[[usize; 3]],
    size: (u32, u32),
) -> AttrBuffer<0> {
    rasterize_attributes::<0>(screen, triangles, &vec![[]; screen.len()], size)
}

/// Core scanline-free rasterizer: z-buffer with perspective-correct
/// interpolation of `A` per-vertex attributes. Triangles are traversed in
/// index order and pixels row-major, so output is deterministic.
fn rasterize_attributes<const A: usize>(
    screen: &[Option<(f64, f64, f64)>],
    triangles: &[[usize; 3]],
    attrs: &[[f64; A]],
    size: (u32, u32),
) -> AttrBuffer<A> {
    let (w, h) = size;
    let npix = (w as usize) * (h as usize);
    let mut buf = AttrBuffer {
        depth: vec![f64::INFINITY; npix],
        attrs: vec![[0.0; A]; npix],
        tri: vec![u32::MAX; npix],
    };

    for (ti, tri) in triangles.iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (screen[tri[0]], screen[tri[1]], screen[tri[2]]) else {
            continue;
        };
        let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area.abs() < 1e-12 {
            continue;
        }

        let min_x = a.0.min(b.0).min(c.0).floor().max(0.0) as u32;
        let max_x = (a.0.max(b.0).max(c.0).ceil() as i64).min(w as i64 - 1);
        let min_y = a.1.min(b.1).min(c.1).floor().max(0.0) as u32;
        let max_y = (a.1.max(b.1).max(c.1).ceil() as i64).min(h as i64 - 1);
        if max_x < 0 || max_y < 0 {
            continue;
        }

        let inv_z = [1.0 / a.2, 1.0 / b.2, 1.0 / c.2];
        for y in min_y..=(max_y as u32) {
            for x in min_x..=(max_x as u32) {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                let l0 = ((b.0 - px) * (c.1 - py) - (b.1 - py) * (c.0 - px)) / area;
                let l1 = ((c.0 - px) * (a.1 - py) - (c.1 - py) * (a.0 - px)) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let izp = l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2];
                if izp <= 0.0 {
                    continue;
                }
                let z = 1.0 / izp;
                let p = (y as usize) * (w as usize) + x as usize;
                if z >= buf.depth[p] {
                    continue;
                }
                buf.depth[p] = z;
                buf.tri[p] = ti as u32;
                let lam = [l0, l1, l2];
                let mut out = [0.0; A];
                for (k, slot) in out.iter_mut().enumerate() {
                    let num: f64 = (0..3)
                        .map(|v| lam[v] * inv_z[v] * attrs[tri[v]][k])
                        .sum();
                    *slot = num * z;
                }
                buf.attrs[p] = out;
            }
        }
    }
    buf
}

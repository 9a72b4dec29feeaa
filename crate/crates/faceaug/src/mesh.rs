//! Triangle mesh for the generic 3D face shapes, with the OBJ-subset file
//! format (`v`/`f` lines only) and the `slot vertex_index` landmark-map
//! sidecar.

use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::landmarks::Schema;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("triangle {tri} references vertex {index} out of range ({count} vertices)")]
    IndexOutOfRange {
        tri: usize,
        index: usize,
        count: usize,
    },
    #[error("landmark map is missing slot {0}")]
    MissingSlot(usize),
    #[error("landmark map slot {slot} references vertex {index} out of range")]
    LandmarkOutOfRange { slot: usize, index: usize },
    #[error("symmetry map is not an involution at vertex {0}")]
    SymmetryNotInvolution(usize),
    #[error("malformed obj line {line}: {reason}")]
    MalformedObj { line: usize, reason: String },
    #[error("malformed landmark-map line {line}: {reason}")]
    MalformedSidecar { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A generic face mesh: vertices, triangles, a schema-slot to vertex-index
/// landmark map, and an involutive left/right symmetry map.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Landmark schema slot -> vertex index, total over the schema.
    pub landmark_map: Vec<usize>,
    pub landmark_schema: Schema,
    /// Vertex index -> mirrored vertex index; an involution.
    pub symmetry_map: Vec<usize>,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
        landmark_map: Vec<usize>,
        landmark_schema: Schema,
        symmetry_map: Vec<usize>,
    ) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(MeshError::IndexOutOfRange {
                        tri: t,
                        index: i,
                        count: n,
                    });
                }
            }
        }
        if landmark_map.len() != landmark_schema.point_count() {
            return Err(MeshError::MissingSlot(landmark_map.len()));
        }
        for (slot, &idx) in landmark_map.iter().enumerate() {
            if idx >= n {
                return Err(MeshError::LandmarkOutOfRange { slot, index: idx });
            }
        }
        for (i, &m) in symmetry_map.iter().enumerate() {
            if m >= n || symmetry_map[m] != i {
                return Err(MeshError::SymmetryNotInvolution(i));
            }
        }
        Ok(Mesh {
            vertices,
            triangles,
            landmark_map,
            landmark_schema,
            symmetry_map,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// 3D position of a landmark slot.
    pub fn landmark(&self, slot: usize) -> Vector3<f64> {
        self.vertices[self.landmark_map[slot]]
    }

    /// All landmark positions in slot order.
    pub fn landmark_positions(&self) -> Vec<Vector3<f64>> {
        self.landmark_map.iter().map(|&i| self.vertices[i]).collect()
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Build the symmetry map by snapping each vertex to the vertex nearest
    /// its x-mirrored position. Fails if the result is not an involution,
    /// which indicates the mesh is not mirror-symmetric about x = 0.
    pub fn symmetry_from_mirror_x(vertices: &[Vector3<f64>]) -> Result<Vec<usize>, MeshError> {
        let mut map = Vec::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            let mirrored = Vector3::new(-v.x, v.y, v.z);
            let (best, dmin) = vertices
                .iter()
                .enumerate()
                .map(|(j, w)| (j, (w - mirrored).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty mesh");
            // Coincident vertices (grid poles) tie at distance zero; pair
            // such a vertex with itself so the map stays an involution.
            let self_d = (v - mirrored).norm_squared();
            map.push(if self_d <= dmin { i } else { best });
        }
        for (i, &m) in map.iter().enumerate() {
            if map[m] != i {
                return Err(MeshError::SymmetryNotInvolution(i));
            }
        }
        Ok(map)
    }

    /// Parse the OBJ subset: `v x y z` and `f a b c` (1-based indices,
    /// optional `/...` suffixes ignored). All other line types are skipped.
    pub fn parse_obj(text: &str) -> Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>), MeshError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lno, line) in text.lines().enumerate() {
            let line = line.trim();
            let bad = |reason: &str| MeshError::MalformedObj {
                line: lno + 1,
                reason: reason.into(),
            };
            if let Some(rest) = line.strip_prefix("v ") {
                let coords: Vec<f64> = rest
                    .split_whitespace()
                    .map(|s| s.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad vertex coordinate"))?;
                if coords.len() < 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            } else if let Some(rest) = line.strip_prefix("f ") {
                let idx: Vec<usize> = rest
                    .split_whitespace()
                    .map(|s| {
                        s.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<usize>()
                            .map_err(|_| bad("bad face index"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(bad("only triangle faces supported"));
                }
                if idx.iter().any(|&i| i == 0) {
                    return Err(bad("obj indices are 1-based"));
                }
                triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
        }
        Ok((vertices, triangles))
    }

    /// Parse the `slot vertex_index` sidecar.
    pub fn parse_landmark_map(text: &str, schema: Schema) -> Result<Vec<usize>, MeshError> {
        let mut entries = BTreeMap::new();
        for (lno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| MeshError::MalformedSidecar {
                line: lno + 1,
                reason: reason.into(),
            };
            let mut parts = line.split_whitespace();
            let slot: usize = parts
                .next()
                .ok_or_else(|| bad("missing slot"))?
                .parse()
                .map_err(|_| bad("bad slot"))?;
            let idx: usize = parts
                .next()
                .ok_or_else(|| bad("missing vertex index"))?
                .parse()
                .map_err(|_| bad("bad vertex index"))?;
            entries.insert(slot, idx);
        }
        (0..schema.point_count())
            .map(|slot| entries.get(&slot).copied().ok_or(MeshError::MissingSlot(slot)))
            .collect()
    }

    /// Load a mesh from an OBJ file plus its landmark-map sidecar. The
    /// symmetry map is derived from the geometry (mirror about x = 0).
    pub fn load(obj_path: &Path, sidecar_path: &Path, schema: Schema) -> Result<Self, MeshError> {
        let (vertices, triangles) = Self::parse_obj(&std::fs::read_to_string(obj_path)?)?;
        let landmark_map =
            Self::parse_landmark_map(&std::fs::read_to_string(sidecar_path)?, schema)?;
        let symmetry_map = Self::symmetry_from_mirror_x(&vertices)?;
        Mesh::new(vertices, triangles, landmark_map, schema, symmetry_map)
    }

    pub fn save_obj(&self, obj_path: &Path, sidecar_path: &Path) -> Result<(), MeshError> {
        let mut obj = String::new();
        for v in &self.vertices {
            obj.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            obj.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        std::fs::write(obj_path, obj)?;
        let mut sidecar = String::new();
        for (slot, &idx) in self.landmark_map.iter().enumerate() {
            sidecar.push_str(&format!("{slot} {idx}\n"));
        }
        std::fs::write(sidecar_path, sidecar)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mesh() -> Mesh {
        // Two triangles over a unit square in the z=0 plane, symmetric in x.
        let vertices = vec![
            Vector3::new(-1.0, -1.0, 0.0),
            Vector3::new(1.0, -1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(-1.0, 1.0, 0.0),
        ];
        let triangles = vec![[0, 1, 2], [0, 2, 3]];
        let sym = Mesh::symmetry_from_mirror_x(&vertices).unwrap();
        let lm = vec![0; 68];
        Mesh::new(vertices, triangles, lm, Schema::Face68, sym).unwrap()
    }

    #[test]
    fn symmetry_is_involution() {
        let m = square_mesh();
        assert_eq!(m.symmetry_map, vec![1, 0, 3, 2]);
    }

    #[test]
    fn obj_round_trip() {
        let m = square_mesh();
        let dir = tempfile::tempdir().unwrap();
        let obj = dir.path().join("m.obj");
        let side = dir.path().join("m.landmarks");
        m.save_obj(&obj, &side).unwrap();
        let back = Mesh::load(&obj, &side, Schema::Face68).unwrap();
        assert_eq!(back.vertex_count(), 4);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.landmark_map, m.landmark_map);
    }

    #[test]
    fn out_of_range_triangle_rejected() {
        let vertices = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        let sym = vec![0, 1, 2];
        // vertex 0 mirrors to itself only if x = 0; skip geometric check here
        let err = Mesh::new(
            vertices,
            vec![[0, 1, 5]],
            vec![0; 68],
            Schema::Face68,
            sym,
        );
        assert!(err.is_err());
    }

    #[test]
    fn obj_ignores_foreign_lines() {
        let text = "# comment\nvt 0 0\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n";
        let (v, t) = Mesh::parse_obj(text).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(t, vec![[0, 1, 2]]);
    }
}

//! Triangle meshes: validated connectivity, per-face and per-vertex geometry,
//! OFF/OBJ interchange and synthetic generators.
//!
//! Neighbor lists follow the oriented face fan around each vertex. A fan is
//! started at the unique neighbor without a predecessor when the vertex lies
//! on the boundary, and otherwise at the first incident face in face order.
//! Both rules ignore vertex labels, so relabeling the vertices of a mesh while
//! keeping its face order permutes the neighbor lists without reordering them.

mod generate;
mod geometry;
mod io;

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::MeshError;

pub use generate::{generate_mesh, jitter_vertices, MeshKind};
pub use geometry::{face_geometry, total_area, vertex_normals, FaceGeometry};
pub use io::{load_mesh, parse_obj, parse_off, save_mesh, write_obj, write_off, MeshFormat};

/// Validated, consistently oriented triangle mesh with cyclic neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    centers: Vec<usize>,
    boundary: Vec<bool>,
}

impl Mesh {
    /// Validates the faces and builds the neighbor fans.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: i,
                        vertex_count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: fi });
            }
        }

        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let count = undirected.entry((a.min(b), a.max(b))).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(MeshError::NonManifoldEdge {
                        a: a.min(b),
                        b: a.max(b),
                    });
                }
                if directed.insert((a, b), fi).is_some() {
                    return Err(MeshError::InconsistentOrientation { a, b });
                }
            }
        }

        // (next-after, face) pairs per vertex: in face (p, a, b), a is followed by b.
        let mut fans: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for f in &faces {
            for k in 0..3 {
                fans[f[k]].push((f[(k + 1) % 3], f[(k + 2) % 3]));
            }
        }

        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut centers = Vec::new();
        let mut boundary = vec![false; n];
        offsets.push(0);
        for (p, fan) in fans.iter().enumerate() {
            let ring = walk_fan(p, fan)?;
            if ring.len() < 2 {
                return Err(MeshError::IsolatedVertex {
                    vertex: p,
                    degree: ring.len(),
                });
            }
            boundary[p] = ring.len() == fan.len() + 1;
            centers.extend(std::iter::repeat_n(p, ring.len()));
            neighbors.extend(ring);
            offsets.push(neighbors.len());
        }

        Ok(Mesh {
            vertices,
            faces,
            offsets,
            neighbors,
            centers,
            boundary,
        })
    }

    /// Same connectivity with new vertex positions.
    ///
    /// Panics if the number of positions differs from the vertex count.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Mesh {
        assert_eq!(vertices.len(), self.vertices.len(), "vertex count changed");
        Mesh {
            vertices,
            ..self.clone()
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn vertex(&self, p: usize) -> Vector3<f64> {
        self.vertices[p]
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Neighbors of `p` in fan order.
    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.neighbors[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn degree(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        self.boundary[p]
    }

    /// Number of directed edges `p -> q`, one per neighbor entry.
    pub fn directed_edge_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Number of undirected edges; each one appears in the lists of both endpoints.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// CSR offsets: the directed edges centered at `p` occupy
    /// `offsets[p]..offsets[p + 1]`.
    pub fn edge_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Neighbor `q` of each directed edge.
    pub fn edge_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Center `p` of each directed edge.
    pub fn edge_centers(&self) -> &[usize] {
        &self.centers
    }
}

fn walk_fan(p: usize, fan: &[(usize, usize)]) -> Result<Vec<usize>, MeshError> {
    if fan.is_empty() {
        return Ok(Vec::new());
    }
    let succ = |a: usize| fan.iter().find(|e| e.0 == a).map(|e| e.1);
    let mut starts = fan
        .iter()
        .map(|e| e.0)
        .filter(|&a| !fan.iter().any(|e| e.1 == a));
    let start = match (starts.next(), starts.next()) {
        (Some(s), None) => s,
        (Some(_), Some(_)) => return Err(MeshError::NonManifoldVertex { vertex: p }),
        (None, _) => fan[0].0,
    };
    let mut ring = vec![start];
    let mut cur = start;
    while let Some(next) = succ(cur) {
        if next == start {
            break;
        }
        if ring.len() > fan.len() {
            return Err(MeshError::NonManifoldVertex { vertex: p });
        }
        ring.push(next);
        cur = next;
    }
    let closed = succ(cur) == Some(start);
    let expected = if closed { fan.len() } else { fan.len() + 1 };
    if ring.len() != expected {
        return Err(MeshError::NonManifoldVertex { vertex: p });
    }
    Ok(ring)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn square() -> Mesh {
        Mesh::new(
            vec![v(0., 0., 0.), v(1., 0., 0.), v(1., 1., 0.), v(0., 1., 0.)],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_has_degree_two_everywhere() {
        let m = Mesh::new(
            vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.face_count(), 1);
        for p in 0..3 {
            assert_eq!(m.degree(p), 2);
            assert!(m.is_boundary(p));
        }
        assert_eq!(m.neighbors(0), &[1, 2]);
        assert_eq!(m.edge_count(), 3);
    }

    #[test]
    fn open_fan_starts_at_boundary() {
        let m = square();
        assert_eq!(m.neighbors(0), &[1, 2, 3]);
        assert_eq!(m.neighbors(2), &[3, 0, 1]);
        assert_eq!(m.edge_count(), 5);
        assert_eq!(m.edge_centers()[..3], [0, 0, 0]);
    }

    #[test]
    fn rejects_out_of_range_index() {
        let err = Mesh::new(vec![v(0., 0., 0.); 3], vec![[0, 1, 5]]).unwrap_err();
        assert!(matches!(
            err,
            MeshError::IndexOutOfRange {
                face: 0,
                index: 5,
                vertex_count: 3
            }
        ));
    }

    #[test]
    fn rejects_repeated_index() {
        let err = Mesh::new(vec![v(0., 0., 0.); 3], vec![[0, 1, 1]]).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateFace { face: 0 }));
    }

    #[test]
    fn rejects_inconsistent_orientation() {
        let err = Mesh::new(vec![v(0., 0., 0.); 4], vec![[0, 1, 2], [0, 1, 3]]).unwrap_err();
        assert!(matches!(err, MeshError::InconsistentOrientation { a: 0, b: 1 }));
    }

    #[test]
    fn rejects_non_manifold_edge() {
        let err = Mesh::new(
            vec![v(0., 0., 0.); 5],
            vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
        )
        .unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldEdge { a: 0, b: 1 }));
    }

    #[test]
    fn rejects_bowtie_vertex() {
        let err = Mesh::new(vec![v(0., 0., 0.); 5], vec![[0, 1, 2], [0, 3, 4]]).unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldVertex { vertex: 0 }));
    }

    #[test]
    fn rejects_unused_vertex() {
        let err = Mesh::new(vec![v(0., 0., 0.); 4], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::IsolatedVertex { vertex: 3, degree: 0 }));
    }

    #[test]
    fn relabeling_permutes_neighbor_lists() {
        let m = generate_mesh(&MeshKind::Icosphere { subdivisions: 1 }).unwrap();
        let n = m.vertex_count();
        // new label of old vertex i
        let fwd: Vec<usize> = (0..n).map(|i| (i * 17 + 5) % n).collect();
        let mut verts = vec![Vector3::zeros(); n];
        for (i, &j) in fwd.iter().enumerate() {
            verts[j] = m.vertex(i);
        }
        let faces = m
            .faces()
            .iter()
            .map(|f| [fwd[f[0]], fwd[f[1]], fwd[f[2]]])
            .collect();
        let pm = Mesh::new(verts, faces).unwrap();
        for p in 0..n {
            let mapped: Vec<usize> = m.neighbors(p).iter().map(|&q| fwd[q]).collect();
            assert_eq!(pm.neighbors(fwd[p]), mapped.as_slice());
        }
    }
}

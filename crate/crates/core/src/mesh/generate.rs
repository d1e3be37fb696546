use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::error::MeshError;

/// Synthetic mesh recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshKind {
    Icosphere {
        subdivisions: u32,
    },
    GridPatch {
        rows: usize,
        cols: usize,
        #[serde(default)]
        height_noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

pub fn generate_mesh(kind: &MeshKind) -> Result<Mesh, MeshError> {
    match *kind {
        MeshKind::Icosphere { subdivisions } => icosphere(subdivisions),
        MeshKind::GridPatch {
            rows,
            cols,
            height_noise,
            seed,
        } => grid_patch(rows, cols, height_noise, seed),
    }
}

fn icosphere(subdivisions: u32) -> Result<Mesh, MeshError> {
    if subdivisions > 7 {
        return Err(MeshError::InvalidParameters(format!(
            "icosphere subdivisions {subdivisions} exceeds 7"
        )));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1., t, 0.),
        (1., t, 0.),
        (-1., -t, 0.),
        (1., -t, 0.),
        (0., -1., t),
        (0., 1., t),
        (0., -1., -t),
        (0., 1., -t),
        (t, 0., -1.),
        (t, 0., 1.),
        (-t, 0., -1.),
        (-t, 0., 1.),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(verts, faces)
}

/// Height field over the unit square, spacing 1/(max(rows, cols) - 1).
fn grid_patch(rows: usize, cols: usize, height_noise: f64, seed: u64) -> Result<Mesh, MeshError> {
    if rows < 2 || cols < 2 {
        return Err(MeshError::InvalidParameters(format!(
            "grid patch needs rows, cols >= 2, got {rows}x{cols}"
        )));
    }
    if !(height_noise >= 0.0 && height_noise.is_finite()) {
        return Err(MeshError::InvalidParameters(format!(
            "height noise must be finite and non-negative, got {height_noise}"
        )));
    }
    let h = 1.0 / (rows.max(cols) - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verts = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let z = if height_noise > 0.0 {
                rng.random_range(-height_noise..=height_noise)
            } else {
                0.0
            };
            verts.push(Vector3::new(j as f64 * h, i as f64 * h, z));
        }
    }
    let id = |i: usize, j: usize| i * cols + j;
    let mut faces = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let (v00, v01, v10, v11) = (id(i, j), id(i, j + 1), id(i + 1, j), id(i + 1, j + 1));
            faces.push([v00, v01, v11]);
            faces.push([v00, v11, v10]);
        }
    }
    Mesh::new(verts, faces)
}

/// Adds i.i.d. uniform noise in [-amplitude, amplitude] to every coordinate.
pub fn jitter_vertices(mesh: &Mesh, amplitude: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = mesh
        .vertices()
        .iter()
        .map(|p| {
            p + Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * amplitude)
        })
        .collect();
    mesh.with_vertices(verts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{face_geometry, vertex_normals};

    #[test]
    fn icosphere_counts() {
        for (s, v, f) in [(0, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)] {
            let m = generate_mesh(&MeshKind::Icosphere { subdivisions: s }).unwrap();
            assert_eq!((m.vertex_count(), m.face_count()), (v, f));
            // closed surface: V - E + F = 2
            assert_eq!(v as i64 - m.edge_count() as i64 + f as i64, 2);
            assert!((0..v).all(|p| !m.is_boundary(p)));
        }
    }

    #[test]
    fn icosphere_on_unit_sphere_with_outward_normals() {
        let m = generate_mesh(&MeshKind::Icosphere { subdivisions: 2 }).unwrap();
        let fg = face_geometry(&m).unwrap();
        let normals = vertex_normals(&m, &fg).unwrap();
        for (p, n) in m.vertices().iter().zip(&normals) {
            assert!((p.norm() - 1.0).abs() < 1e-15);
            assert!(n.dot(p) > 0.99);
        }
    }

    #[test]
    fn flat_two_by_two() {
        let m = generate_mesh(&MeshKind::GridPatch {
            rows: 2,
            cols: 2,
            height_noise: 0.0,
            seed: 3,
        })
        .unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (4, 2));
        assert!(m.vertices().iter().all(|p| p.z == 0.0));
        let fg = face_geometry(&m).unwrap();
        assert!(fg.normals.iter().all(|n| n.z == 1.0));
    }

    #[test]
    fn grid_is_deterministic_per_seed() {
        let kind = |seed| MeshKind::GridPatch {
            rows: 5,
            cols: 7,
            height_noise: 0.1,
            seed,
        };
        let a = generate_mesh(&kind(8)).unwrap();
        assert_eq!(a, generate_mesh(&kind(8)).unwrap());
        assert_ne!(a, generate_mesh(&kind(9)).unwrap());
        assert_eq!(a.edge_count(), 5 * 6 + 7 * 4 + 4 * 6);
    }

    #[test]
    fn bad_parameters() {
        for kind in [
            MeshKind::GridPatch {
                rows: 1,
                cols: 4,
                height_noise: 0.0,
                seed: 0,
            },
            MeshKind::GridPatch {
                rows: 3,
                cols: 3,
                height_noise: -1.0,
                seed: 0,
            },
            MeshKind::Icosphere { subdivisions: 9 },
        ] {
            assert!(matches!(
                generate_mesh(&kind),
                Err(MeshError::InvalidParameters(_))
            ));
        }
    }

    #[test]
    fn kind_from_toml() {
        let k: MeshKind = toml::from_str("kind = \"icosphere\"\nsubdivisions = 1").unwrap();
        assert_eq!(k, MeshKind::Icosphere { subdivisions: 1 });
        assert!(toml::from_str::<MeshKind>("kind = \"icosphere\"\nsubdivs = 1").is_err());
    }
}

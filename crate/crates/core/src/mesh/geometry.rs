use nalgebra::Vector3;

use super::Mesh;
use crate::error::MeshError;

/// Unit normal and area of every face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceGeometry {
    pub normals: Vec<Vector3<f64>>,
    pub areas: Vec<f64>,
}

/// Face normals from the counter-clockwise edge cross product, areas as half
/// its norm.
pub fn face_geometry(mesh: &Mesh) -> Result<FaceGeometry, MeshError> {
    let mut normals = Vec::with_capacity(mesh.face_count());
    let mut areas = Vec::with_capacity(mesh.face_count());
    for (fi, f) in mesh.faces().iter().enumerate() {
        let a = mesh.vertex(f[0]);
        let u = mesh.vertex(f[1]) - a;
        let w = mesh.vertex(f[2]) - a;
        let cross = u.cross(&w);
        let norm = cross.norm();
        if !norm.is_finite() || norm <= 1e-14 * u.norm() * w.norm() {
            return Err(MeshError::ZeroAreaFace { face: fi });
        }
        normals.push(cross / norm);
        areas.push(0.5 * norm);
    }
    Ok(FaceGeometry { normals, areas })
}

/// Area-weighted vertex normals, normalized to unit length.
pub fn vertex_normals(mesh: &Mesh, fg: &FaceGeometry) -> Result<Vec<Vector3<f64>>, MeshError> {
    let n = mesh.vertex_count();
    let mut sums = vec![Vector3::zeros(); n];
    let mut weight = vec![0.0; n];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let contrib = fg.normals[fi] * fg.areas[fi];
        for &p in f {
            sums[p] += contrib;
            weight[p] += fg.areas[fi];
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(p, s)| {
            let norm = s.norm();
            if norm.is_nan() || norm <= 1e-12 * weight[p] {
                Err(MeshError::DegenerateNormal { vertex: p })
            } else {
                Ok(s / norm)
            }
        })
        .collect()
}

pub fn total_area(fg: &FaceGeometry) -> f64 {
    fg.areas.iter().sum()
}

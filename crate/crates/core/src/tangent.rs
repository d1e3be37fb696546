//! Tangent-plane geometry: projectors, the discrete log map, per-vertex
//! gauges, neighbor angles and parallel-transport angles.
//!
//! Transport angles follow the convention `ρ(g_{q→p}) f_q` = coordinates of the
//! transported vector `f_q` in the gauge at `p`: with `R` the minimal rotation
//! taking `n_q` to `n_p`, `g_{q→p}` is the angle of `R e_{q,1}` measured in the
//! frame of `p`. Regauging `p` by `g_p` and `q` by `g_q` then shifts it to
//! `g_{q→p} - g_p + g_q`.

use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix3, Vector3};

use crate::error::GeometryError;
use crate::mesh::Mesh;

type V3 = Vector3<f64>;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Signed distance between two angles on the circle, in (-π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Content hash identifying a frame field. Features carry it so layers can
/// refuse transport data computed for other frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameBinding(pub u64);

/// Orthonormal gauge at a single vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub normal: V3,
    pub e1: V3,
    pub e2: V3,
}

/// Per-vertex normals and gauges (e1, e2) with e1 × e2 = n.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    normals: Vec<V3>,
    e1: Vec<V3>,
    e2: Vec<V3>,
    binding: FrameBinding,
}

impl FrameField {
    /// Assembles frames from explicit vectors. No re-orthonormalization is
    /// performed.
    pub fn from_vectors(normals: Vec<V3>, e1: Vec<V3>, e2: Vec<V3>) -> Result<Self, GeometryError> {
        for other in [e1.len(), e2.len()] {
            if other != normals.len() {
                return Err(GeometryError::LengthMismatch {
                    expected: normals.len(),
                    actual: other,
                });
            }
        }
        let binding = hash_frames(&normals, &e1, &e2);
        Ok(FrameField {
            normals,
            e1,
            e2,
            binding,
        })
    }

    /// Frames with e2 = n × e1.
    pub fn from_normals_and_e1(normals: Vec<V3>, e1: Vec<V3>) -> Result<Self, GeometryError> {
        let e2 = normals.iter().zip(&e1).map(|(n, e)| n.cross(e)).collect();
        Self::from_vectors(normals, e1, e2)
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn frame(&self, p: usize) -> Frame {
        Frame {
            normal: self.normals[p],
            e1: self.e1[p],
            e2: self.e2[p],
        }
    }

    pub fn normals(&self) -> &[V3] {
        &self.normals
    }

    pub fn e1(&self) -> &[V3] {
        &self.e1
    }

    pub fn e2(&self) -> &[V3] {
        &self.e2
    }

    pub fn binding(&self) -> FrameBinding {
        self.binding
    }

    /// Largest violation of orthonormality and orientation over all vertices.
    pub fn max_invariant_error(&self) -> f64 {
        (0..self.len())
            .map(|p| {
                let f = self.frame(p);
                [
                    f.e1.dot(&f.e2).abs(),
                    f.e1.dot(&f.normal).abs(),
                    f.e2.dot(&f.normal).abs(),
                    (f.e1.norm() - 1.0).abs(),
                    (f.e2.norm() - 1.0).abs(),
                    (f.normal.norm() - 1.0).abs(),
                    (f.e1.cross(&f.e2) - f.normal).norm(),
                ]
                .into_iter()
                .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn hash_frames(normals: &[V3], e1: &[V3], e2: &[V3]) -> FrameBinding {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    normals.len().hash(&mut h);
    for v in normals.iter().chain(e1).chain(e2) {
        for x in v.iter() {
            x.to_bits().hash(&mut h);
        }
    }
    FrameBinding(h.finish())
}

/// How the reference neighbor defining e1 is picked at each vertex.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameStrategy {
    /// First neighbor in the stored cyclic order with a defined log map.
    FirstNeighbor,
    /// Explicit reference neighbor per vertex.
    Custom(Vec<usize>),
}

/// π = I - n nᵀ.
pub fn tangent_projector(n: &V3) -> Matrix3<f64> {
    Matrix3::identity() - n * n.transpose()
}

/// Norm-preserving discrete log map of q at p.
pub fn log_map(p: &V3, q: &V3, n_p: &V3) -> Result<V3, GeometryError> {
    let d = q - p;
    let dn = d.norm();
    let t = d - n_p * n_p.dot(&d);
    let tn = t.norm();
    if tn.is_nan() || tn <= 1e-12 * dn {
        return Err(GeometryError::UndefinedLogarithm);
    }
    Ok(t * (dn / tn))
}

pub fn build_frames(mesh: &Mesh, normals: &[V3], strategy: &FrameStrategy) -> Result<FrameField, GeometryError> {
    let n = mesh.vertex_count();
    if normals.len() != n {
        return Err(GeometryError::LengthMismatch {
            expected: n,
            actual: normals.len(),
        });
    }
    if let FrameStrategy::Custom(refs) = strategy {
        if refs.len() != n {
            return Err(GeometryError::LengthMismatch {
                expected: n,
                actual: refs.len(),
            });
        }
    }
    let mut e1 = Vec::with_capacity(n);
    for p in 0..n {
        let pos = mesh.vertex(p);
        let log = match strategy {
            FrameStrategy::FirstNeighbor => mesh
                .neighbors(p)
                .iter()
                .find_map(|&q| log_map(&pos, &mesh.vertex(q), &normals[p]).ok()),
            FrameStrategy::Custom(refs) => {
                let q = refs[p];
                if !mesh.neighbors(p).contains(&q) {
                    return Err(GeometryError::NotANeighbor {
                        vertex: p,
                        reference: q,
                    });
                }
                log_map(&pos, &mesh.vertex(q), &normals[p]).ok()
            }
        };
        let log = log.ok_or(GeometryError::FrameConstruction { vertex: p })?;
        e1.push(log.normalize());
    }
    FrameField::from_normals_and_e1(normals.to_vec(), e1)
}

/// Angle of log_p(q) in the gauge at p.
pub fn theta_angle(p: &V3, q: &V3, frame: &Frame) -> Result<f64, GeometryError> {
    let log = log_map(p, q, &frame.normal)?;
    Ok(wrap_angle(frame.e2.dot(&log).atan2(frame.e1.dot(&log))))
}

/// Minimal rotation taking `from` to `to`, or `None` when they are antipodal.
pub fn align_normals(from: &V3, to: &V3) -> Option<Matrix3<f64>> {
    let c = from.dot(to);
    if c < -1.0 + 1e-8 {
        return None;
    }
    let a = from.cross(to);
    let k = a.cross_matrix();
    Some(Matrix3::identity() + k + k * k / (1.0 + c))
}

/// Transport angle g_{q→p} between two frames.
pub fn transport_angle(frame_q: &Frame, frame_p: &Frame) -> Option<f64> {
    let r = align_normals(&frame_q.normal, &frame_p.normal)?;
    let a1 = r * frame_q.e1;
    let a2 = r * frame_q.e2;
    Some(wrap_angle(-(a2.dot(&frame_p.e1)).atan2(a1.dot(&frame_p.e1))))
}

/// Rotates every gauge in its tangent plane: e1' = cos g e1 + sin g e2.
pub fn regauge(frames: &FrameField, angles: &[f64]) -> Result<FrameField, GeometryError> {
    if angles.len() != frames.len() {
        return Err(GeometryError::LengthMismatch {
            expected: frames.len(),
            actual: angles.len(),
        });
    }
    let e1 = (0..frames.len())
        .map(|p| {
            let (s, c) = angles[p].sin_cos();
            frames.e1[p] * c + frames.e2[p] * s
        })
        .collect();
    FrameField::from_normals_and_e1(frames.normals.clone(), e1)
}

/// θ_{pq} and g_{q→p} for every directed edge, in the mesh's edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportData {
    theta: Vec<f64>,
    transport: Vec<f64>,
    binding: FrameBinding,
}

impl TransportData {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn transport(&self) -> &[f64] {
        &self.transport
    }

    pub fn binding(&self) -> FrameBinding {
        self.binding
    }
}

pub fn compute_transport(mesh: &Mesh, frames: &FrameField) -> Result<TransportData, GeometryError> {
    if frames.len() != mesh.vertex_count() {
        return Err(GeometryError::LengthMismatch {
            expected: mesh.vertex_count(),
            actual: frames.len(),
        });
    }
    let m = mesh.directed_edge_count();
    let mut theta = Vec::with_capacity(m);
    let mut transport = Vec::with_capacity(m);
    for (&p, &q) in mesh.edge_centers().iter().zip(mesh.edge_neighbors()) {
        let fp = frames.frame(p);
        theta.push(theta_angle(&mesh.vertex(p), &mesh.vertex(q), &fp)?);
        let g = transport_angle(&frames.frame(q), &fp).ok_or(GeometryError::AmbiguousTransport { p, q })?;
        transport.push(g);
    }
    Ok(TransportData {
        theta,
        transport,
        binding: frames.binding(),
    })
}

//! Rigid-plus-scale ambient transformations, vertex permutations, gauge
//! changes, and their pushforwards on meshes, frames and features.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{GeometryError, MeshError};
use crate::features::FeatureField;
use crate::mesh::Mesh;
use crate::tangent::FrameField;

type V3 = Vector3<f64>;

/// p ↦ λ R p + x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientTransform {
    rotation: Matrix3<f64>,
    translation: V3,
    scale: f64,
}

impl AmbientTransform {
    pub fn new(rotation: Matrix3<f64>, translation: V3, scale: f64) -> Result<Self, GeometryError> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > 1e-12 {
            return Err(GeometryError::InvalidTransform(format!("rotation is not orthogonal (error {orth:e})")));
        }
        if rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidTransform("rotation has negative determinant".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::InvalidTransform(format!("scale {scale} must be positive")));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidTransform("translation is not finite".into()));
        }
        Ok(AmbientTransform {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        AmbientTransform {
            rotation: Matrix3::identity(),
            translation: V3::zeros(),
            scale: 1.0,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &V3 {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Keeps only the rotation, translation or scale part.
    pub fn rotation_only(&self) -> Self {
        AmbientTransform {
            translation: V3::zeros(),
            scale: 1.0,
            ..*self
        }
    }

    pub fn translation_only(&self) -> Self {
        AmbientTransform {
            rotation: Matrix3::identity(),
            scale: 1.0,
            ..*self
        }
    }

    pub fn scale_only(&self) -> Self {
        AmbientTransform {
            rotation: Matrix3::identity(),
            translation: V3::zeros(),
            ..*self
        }
    }

    pub fn apply_point(&self, p: &V3) -> V3 {
        self.scale * (self.rotation * p) + self.translation
    }
}

pub fn apply_ambient(mesh: &Mesh, t: &AmbientTransform) -> Mesh {
    mesh.with_vertices(mesh.vertices().iter().map(|p| t.apply_point(p)).collect())
}

/// Frames carried along by the rotation; translation and scale leave them alone.
pub fn pushforward_frames(frames: &FrameField, rotation: &Matrix3<f64>) -> Result<FrameField, GeometryError> {
    let map = |v: &[V3]| v.iter().map(|x| rotation * x).collect::<Vec<_>>();
    FrameField::from_vectors(map(frames.normals()), map(frames.e1()), map(frames.e2()))
}

/// Same coordinates, now bound to the pushed-forward frames.
pub fn pushforward_features(features: &FeatureField, pushed_frames: &FrameField) -> FeatureField {
    features.rebind(pushed_frames)
}

/// Bijection on vertex indices: vertex `i` moves to `forward[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self, GeometryError> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (i, &j) in forward.iter().enumerate() {
            if j >= n || inverse[j] != usize::MAX {
                return Err(GeometryError::InvalidTransform(format!("not a permutation: {j} at position {i}")));
            }
            inverse[j] = i;
        }
        Ok(Permutation { forward, inverse })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut forward: Vec<usize> = (0..n).collect();
        forward.shuffle(rng);
        Self::new(forward).expect("shuffle is a bijection")
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn inverted(&self) -> Permutation {
        Permutation {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    /// Reorders per-vertex rows: output row `forward[i]` is input row `i`.
    pub fn apply_rows<T: Clone>(&self, rows: &[T], width: usize) -> Vec<T> {
        assert_eq!(rows.len(), self.len() * width, "row count");
        let mut out = rows.to_vec();
        for (i, &j) in self.forward.iter().enumerate() {
            out[j * width..(j + 1) * width].clone_from_slice(&rows[i * width..(i + 1) * width]);
        }
        out
    }
}

/// Relabels vertices; faces keep their order.
pub fn permute_mesh(mesh: &Mesh, perm: &Permutation) -> Result<Mesh, MeshError> {
    let vertices = perm.apply_rows(mesh.vertices(), 1);
    let faces = mesh.faces().iter().map(|f| f.map(|v| perm.forward[v])).collect();
    Mesh::new(vertices, faces)
}

pub fn permute_frames(frames: &FrameField, perm: &Permutation) -> Result<FrameField, GeometryError> {
    FrameField::from_vectors(
        perm.apply_rows(frames.normals(), 1),
        perm.apply_rows(frames.e1(), 1),
        perm.apply_rows(frames.e2(), 1),
    )
}

/// Row `i` of the result is row `inverse[i]` of the input.
pub fn permute_features(features: &FeatureField, perm: &Permutation, permuted_frames: &FrameField) -> FeatureField {
    features.permute(perm.forward()).rebind(permuted_frames)
}

/// Sampling ranges for [`random_transform_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformRanges {
    /// Translations uniform in [-t, t]³.
    pub translation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        TransformRanges {
            translation: 10.0,
            scale_min: 0.1,
            scale_max: 10.0,
        }
    }
}

impl TransformRanges {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.translation >= 0.0 && self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(GeometryError::InvalidTransform(format!("bad ranges {self:?}")));
        }
        Ok(())
    }
}

/// One random sample of each transformation family.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSuite {
    pub gauge: Vec<f64>,
    pub ambient: AmbientTransform,
    pub perm: Permutation,
}

/// Haar-uniform rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let mut q = [0.0f64; 4];
    loop {
        for x in q.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        if q.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            break;
        }
    }
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

pub fn random_ambient<R: Rng + ?Sized>(ranges: &TransformRanges, rng: &mut R) -> AmbientTransform {
    let rotation = random_rotation(rng);
    let t = ranges.translation;
    let translation = if t > 0.0 {
        V3::from_fn(|_, _| rng.random_range(-t..=t))
    } else {
        V3::zeros()
    };
    let (lo, hi) = (ranges.scale_min.ln(), ranges.scale_max.ln());
    let scale = if hi > lo { rng.random_range(lo..=hi).exp() } else { ranges.scale_min };
    // re-orthonormalized rotation always passes validation
    AmbientTransform {
        rotation,
        translation,
        scale: scale.clamp(ranges.scale_min, ranges.scale_max),
    }
}

/// Gauge angles in (-π, π], an ambient transform and a vertex permutation.
pub fn random_transform_suite(vertex_count: usize, ranges: &TransformRanges, seed: u64) -> TransformSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauge = (0..vertex_count).map(|_| -rng.random_range(-PI..PI)).collect();
    let ambient = random_ambient(ranges, &mut rng);
    let perm = Permutation::random(vertex_count, &mut rng);
    TransformSuite { gauge, ambient, perm }
}

//! Typed per-vertex feature fields and the input feature families.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::FeatureError;
use crate::mesh::Mesh;
use crate::repr::{rotate_features, FeatureType};
use crate::tangent::{tangent_projector, FrameBinding, FrameField};

type V3 = Vector3<f64>;

/// Per-vertex coordinates of a declared type. `binding` names the frames the
/// coordinates refer to; purely scalar fields carry no binding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    ftype: FeatureType,
    data: Vec<f64>,
    binding: Option<FrameBinding>,
}

impl FeatureField {
    pub fn new(ftype: FeatureType, data: Vec<f64>, binding: Option<FrameBinding>) -> Result<Self, FeatureError> {
        if ftype.dim() == 0 || !data.len().is_multiple_of(ftype.dim()) {
            return Err(FeatureError::LengthMismatch {
                expected: ftype.dim(),
                actual: data.len(),
            });
        }
        let binding = if ftype.is_scalar() { None } else { binding };
        Ok(FeatureField {
            ftype,
            data,
            binding,
        })
    }

    pub fn ftype(&self) -> &FeatureType {
        &self.ftype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn binding(&self) -> Option<FrameBinding> {
        self.binding
    }

    pub fn vertex_count(&self) -> usize {
        self.data.len() / self.ftype.dim()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        let d = self.ftype.dim();
        &self.data[p * d..(p + 1) * d]
    }

    /// Coordinates after rotating every gauge by `angles`: f_p ↦ ρ(-g_p) f_p.
    pub fn regauge(&self, angles: &[f64], frames: &FrameField) -> Result<Self, FeatureError> {
        if angles.len() != self.vertex_count() {
            return Err(FeatureError::LengthMismatch {
                expected: self.vertex_count(),
                actual: angles.len(),
            });
        }
        let d = self.ftype.dim();
        let mut data = self.data.clone();
        for (row, &g) in data.chunks_mut(d).zip(angles) {
            rotate_features(&self.ftype, -g, row);
        }
        Self::new(self.ftype.clone(), data, Some(frames.binding()))
    }

    /// Same coordinates, bound to other frames.
    pub fn rebind(&self, frames: &FrameField) -> Self {
        let mut f = self.clone();
        if !f.ftype.is_scalar() {
            f.binding = Some(frames.binding());
        }
        f
    }

    /// Rows reordered so that row `perm[i]` of the result is row `i` here.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let d = self.ftype.dim();
        let mut data = vec![0.0; self.data.len()];
        for (i, &j) in perm.iter().enumerate() {
            data[j * d..(j + 1) * d].copy_from_slice(self.row(i));
        }
        FeatureField {
            ftype: self.ftype.clone(),
            data,
            binding: self.binding,
        }
    }

    /// Tangent vectors of the ρ1 component `component`, expressed in 3D.
    pub fn tangent_vectors(&self, frames: &FrameField, component: usize) -> Vec<V3> {
        assert_eq!(self.ftype.orders()[component], 1, "component must be rho1");
        let o = self.ftype.offsets()[component];
        (0..self.vertex_count())
            .map(|p| {
                let r = self.row(p);
                frames.e1()[p] * r[o] + frames.e2()[p] * r[o + 1]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Xyz,
    Get,
    Reltan,
}

/// Relative powers for RelTan; one (ρ0 ⊕ ρ1) group per power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelTanConfig {
    pub powers: Vec<f64>,
    /// Put ‖v_p‖ in the scalar slot instead of zero.
    #[serde(default)]
    pub norm_scalar: bool,
}

impl Default for RelTanConfig {
    fn default() -> Self {
        RelTanConfig {
            powers: vec![0.7],
            norm_scalar: false,
        }
    }
}

/// v_p(r) from raw neighbor positions.
pub fn reltan_vector(p: &V3, neighbors: &[V3], normal: &V3, r: f64) -> Option<V3> {
    let n = neighbors.len();
    if n == 0 {
        return Some(V3::zeros());
    }
    let pi = tangent_projector(normal);
    let mut dist = Vec::with_capacity(n);
    for q in neighbors {
        let d = (q - p).norm();
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        dist.push(d);
    }
    let total: f64 = dist.iter().map(|d| d.powf(r - 1.0)).sum();
    let mut v = V3::zeros();
    for (q, d) in neighbors.iter().zip(&dist) {
        v += pi * ((q - p) / *d) * (total / d.powf(r - 1.0));
    }
    Some(v / (n as f64).powf(1.5))
}

/// RelTan vectors for every vertex at one power.
pub fn reltan_vectors(mesh: &Mesh, normals: &[V3], r: f64) -> Result<Vec<V3>, FeatureError> {
    (0..mesh.vertex_count())
        .map(|p| {
            let nb: Vec<V3> = mesh.neighbors(p).iter().map(|&q| mesh.vertex(q)).collect();
            reltan_vector(&mesh.vertex(p), &nb, &normals[p], r).ok_or_else(|| {
                let neighbor = *mesh
                    .neighbors(p)
                    .iter()
                    .find(|&&q| mesh.vertex(q) == mesh.vertex(p))
                    .unwrap_or(&p);
                FeatureError::ZeroDistance { vertex: p, neighbor }
            })
        })
        .collect()
}

pub fn reltan_type(cfg: &RelTanConfig) -> FeatureType {
    FeatureType::new(vec![0, 1]).unwrap().repeat(cfg.powers.len())
}

pub fn reltan_features(mesh: &Mesh, frames: &FrameField, cfg: &RelTanConfig) -> Result<FeatureField, FeatureError> {
    if cfg.powers.is_empty() {
        return Err(FeatureError::EmptyPowers);
    }
    let nv = mesh.vertex_count();
    let groups = cfg.powers.len();
    let mut data = vec![0.0; nv * 3 * groups];
    for (k, &r) in cfg.powers.iter().enumerate() {
        let vs = reltan_vectors(mesh, frames.normals(), r)?;
        for (p, v) in vs.iter().enumerate() {
            let row = &mut data[p * 3 * groups + 3 * k..p * 3 * groups + 3 * k + 3];
            row[0] = if cfg.norm_scalar { v.norm() } else { 0.0 };
            row[1] = frames.e1()[p].dot(v);
            row[2] = frames.e2()[p].dot(v);
        }
    }
    FeatureField::new(reltan_type(cfg), data, Some(frames.binding()))
}

/// Positions in their own gauge: (⟨p, n⟩; ⟨p, e1⟩, ⟨p, e2⟩).
pub fn get_features(mesh: &Mesh, frames: &FrameField) -> FeatureField {
    let data = (0..mesh.vertex_count())
        .flat_map(|p| {
            let x = mesh.vertex(p);
            let f = frames.frame(p);
            [x.dot(&f.normal), x.dot(&f.e1), x.dot(&f.e2)]
        })
        .collect();
    FeatureField::new(FeatureType::new(vec![0, 1]).unwrap(), data, Some(frames.binding()))
        .expect("three coordinates per vertex")
}

/// Raw coordinates as three scalar channels.
pub fn xyz_features(mesh: &Mesh) -> FeatureField {
    let data = mesh.vertices().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    FeatureField::new(FeatureType::scalars(3), data, None).expect("three coordinates per vertex")
}

pub fn input_type(family: FeatureFamily, reltan: &RelTanConfig) -> FeatureType {
    match family {
        FeatureFamily::Xyz => FeatureType::scalars(3),
        FeatureFamily::Get => FeatureType::new(vec![0, 1]).unwrap(),
        FeatureFamily::Reltan => reltan_type(reltan),
    }
}

pub fn compute_features(
    mesh: &Mesh,
    frames: &FrameField,
    family: FeatureFamily,
    reltan: &RelTanConfig,
) -> Result<FeatureField, FeatureError> {
    match family {
        FeatureFamily::Xyz => Ok(xyz_features(mesh)),
        FeatureFamily::Get => Ok(get_features(mesh, frames)),
        FeatureFamily::Reltan => reltan_features(mesh, frames, reltan),
    }
}

/// Distribution of neighbor distances in the scaling experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialLaw {
    /// |z| with z standard normal.
    HalfNormal,
    /// Every neighbor at distance 1.
    PointMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingStatistics {
    pub degree: usize,
    pub samples: usize,
    pub power: f64,
    pub mean_square_unnormalized: f64,
    pub mean_square_normalized: f64,
}

/// Monte-Carlo estimate of E‖v‖² for a vertex with `degree` i.i.d. tangent
/// neighbors, with and without the N^{-3/2} factor.
pub fn reltan_scaling_statistics(degree: usize, samples: usize, power: f64, law: RadialLaw, seed: u64) -> ScalingStatistics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = V3::z();
    let mut nb = vec![V3::zeros(); degree];
    let mut acc = 0.0;
    for _ in 0..samples {
        for q in nb.iter_mut() {
            let radius = match law {
                RadialLaw::HalfNormal => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z.abs()
                }
                RadialLaw::PointMass => 1.0,
            };
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            *q = V3::new(radius * a.cos(), radius * a.sin(), 0.0);
        }
        let v = reltan_vector(&V3::zeros(), &nb, &normal, power).unwrap_or_else(V3::zeros);
        acc += v.norm_squared();
    }
    let normalized = acc / samples as f64;
    ScalingStatistics {
        degree,
        samples,
        power,
        mean_square_unnormalized: normalized * (degree as f64).powi(3),
        mean_square_normalized: normalized,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{face_geometry, generate_mesh, jitter_vertices, vertex_normals, MeshKind};
    use crate::repr::rep_block_diag;
    use crate::tangent::{build_frames, regauge, FrameStrategy};
    use approx::assert_relative_eq;
    use nalgebra::{DVector, Rotation3, Unit};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn v(x: f64, y: f64, z: f64) -> V3 {
        V3::new(x, y, z)
    }

    fn setup(mesh: &Mesh) -> FrameField {
        let fg = face_geometry(mesh).unwrap();
        let normals = vertex_normals(mesh, &fg).unwrap();
        build_frames(mesh, &normals, &FrameStrategy::FirstNeighbor).unwrap()
    }

    fn bumpy(seed: u64) -> Mesh {
        let base = generate_mesh(&MeshKind::Icosphere { subdivisions: 1 }).unwrap();
        jitter_vertices(&base, 0.08, seed)
    }

    #[test]
    fn symmetric_cross_cancels() {
        let nb = [v(1., 0., 0.), v(-1., 0., 0.), v(0., 1., 0.), v(0., -1., 0.)];
        for r in [0.3, 0.7, 1.0, 2.0] {
            let out = reltan_vector(&V3::zeros(), &nb, &V3::z(), r).unwrap();
            assert!(out.norm() < 1e-15);
        }
    }

    #[test]
    fn two_collinear_neighbors_by_hand() {
        let nb = [v(1., 0., 0.), v(2., 0., 0.)];
        let out = reltan_vector(&V3::zeros(), &nb, &V3::z(), 1.0).unwrap();
        assert_relative_eq!(out, v(2f64.sqrt(), 0., 0.), epsilon = 1e-15);
        let scaled: Vec<V3> = nb.iter().map(|q| q * 3.0).collect();
        for r in [0.5, 0.7, 1.0] {
            let a = reltan_vector(&V3::zeros(), &nb, &V3::z(), r).unwrap();
            let b = reltan_vector(&V3::zeros(), &scaled, &V3::z(), r).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn coincident_neighbor_is_an_error() {
        assert_eq!(reltan_vector(&V3::zeros(), &[V3::zeros()], &V3::z(), 0.7), None);
    }

    #[test]
    fn reltan_layout_and_zero_scalar() {
        let mesh = bumpy(1);
        let frames = setup(&mesh);
        let cfg = RelTanConfig {
            powers: vec![0.5, 0.7],
            norm_scalar: false,
        };
        let f = reltan_features(&mesh, &frames, &cfg).unwrap();
        assert_eq!(f.ftype().to_string(), "2x(rho0+rho1)");
        assert!((0..mesh.vertex_count()).all(|p| f.row(p)[0] == 0.0 && f.row(p)[3] == 0.0));
        // second group equals a single-power run at 0.7
        let single = reltan_features(&mesh, &frames, &RelTanConfig::default()).unwrap();
        for p in 0..mesh.vertex_count() {
            assert_eq!(&f.row(p)[3..], single.row(p));
        }
        let empty = RelTanConfig {
            powers: vec![],
            norm_scalar: false,
        };
        assert_eq!(reltan_features(&mesh, &frames, &empty), Err(FeatureError::EmptyPowers));
    }

    #[test]
    fn get_examples() {
        let mesh = Mesh::new(vec![v(2., 3., 5.), v(3., 3., 5.), v(2., 4., 5.)], vec![[0, 1, 2]]).unwrap();
        let frames = FrameField::from_vectors(
            vec![V3::z(); 3],
            vec![V3::x(); 3],
            vec![V3::y(); 3],
        )
        .unwrap();
        assert_eq!(get_features(&mesh, &frames).row(0), &[5., 2., 3.]);
        let at_origin = Mesh::new(vec![V3::zeros(), v(1., 0., 0.), v(0., 1., 0.)], vec![[0, 1, 2]]).unwrap();
        let frames = setup(&at_origin);
        assert_eq!(get_features(&at_origin, &frames).row(0), &[0., 0., 0.]);
    }

    #[test]
    fn get_under_translation_shifts_by_projected_offset() {
        let mesh = bumpy(2);
        let frames = setup(&mesh);
        let x = v(0.5, -1.5, 2.0);
        let moved = mesh.with_vertices(mesh.vertices().iter().map(|p| p + x).collect());
        let a = get_features(&mesh, &frames);
        let b = get_features(&moved, &frames);
        for p in 0..mesh.vertex_count() {
            let f = frames.frame(p);
            let expect = [x.dot(&f.normal), x.dot(&f.e1), x.dot(&f.e2)];
            for k in 0..3 {
                assert_relative_eq!(b.row(p)[k] - a.row(p)[k], expect[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn xyz_examples() {
        let mesh = bumpy(3);
        let f = xyz_features(&mesh);
        let p = mesh.vertex(5);
        assert_eq!(f.row(5), &[p.x, p.y, p.z]);
        assert_eq!(f.binding(), None);
        let frames = setup(&mesh);
        let g: Vec<f64> = (0..mesh.vertex_count()).map(|i| i as f64 * 0.1).collect();
        assert_eq!(f.regauge(&g, &regauge(&frames, &g).unwrap()).unwrap(), f);
        let rot = Rotation3::from_axis_angle(&V3::z_axis(), 0.5);
        let rotated = xyz_features(&mesh.with_vertices(mesh.vertices().iter().map(|p| rot * p).collect()));
        assert_relative_eq!(rotated.row(5)[0], (rot * p).x, epsilon = 1e-15);
        assert!((rotated.row(5)[0] - f.row(5)[0]).abs() > 1e-3);
    }

    #[test]
    fn distance_blind_at_power_one() {
        let mesh = bumpy(4);
        let fg = face_geometry(&mesh).unwrap();
        let normals = vertex_normals(&mesh, &fg).unwrap();
        let p = 0;
        let pos = mesh.vertex(p);
        let mut nb: Vec<V3> = mesh.neighbors(p).iter().map(|&q| mesh.vertex(q)).collect();
        let before = reltan_vector(&pos, &nb, &normals[p], 1.0).unwrap();
        nb[2] = pos + (nb[2] - pos) * 2.7;
        let after = reltan_vector(&pos, &nb, &normals[p], 1.0).unwrap();
        assert_relative_eq!(before, after, epsilon = 1e-14);
    }

    #[test]
    fn point_mass_pair_matches_closed_form() {
        // w_i = N for every neighbor, so E‖v‖² = N⁻³ N² E‖u1 + u2‖² = 1 at N = 2
        let s = reltan_scaling_statistics(2, 100_000, 0.7, RadialLaw::PointMass, 5);
        assert!((s.mean_square_normalized - 1.0).abs() < 0.02, "{s:?}");
        assert!((s.mean_square_unnormalized - 8.0).abs() < 0.16, "{s:?}");
    }

    #[test]
    fn scaling_ratio_small_sample() {
        let a = reltan_scaling_statistics(4, 20_000, 0.7, RadialLaw::HalfNormal, 1);
        let b = reltan_scaling_statistics(8, 20_000, 0.7, RadialLaw::HalfNormal, 2);
        let ratio = b.mean_square_unnormalized / a.mean_square_unnormalized;
        assert!((ratio - 8.0).abs() < 2.0, "ratio {ratio}");
        let ratio = b.mean_square_normalized / a.mean_square_normalized;
        assert!((ratio - 1.0).abs() < 0.25, "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reltan_follows_ambient_maps(
            seed in 0u64..10_000,
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -PI..PI,
            shift in prop::array::uniform3(-10.0f64..10.0),
            log_scale in (0.1f64).ln()..(10.0f64).ln(),
            r in 0.2f64..2.0,
        ) {
            prop_assume!(V3::from(axis).norm() > 1e-3);
            let mesh = bumpy(seed);
            let frames = setup(&mesh);
            let cfg = RelTanConfig { powers: vec![r], norm_scalar: false };
            let base = reltan_features(&mesh, &frames, &cfg).unwrap().tangent_vectors(&frames, 1);
            let scale = base.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(V3::from(axis)), angle);
            let lambda = log_scale.exp();
            let moved = mesh.with_vertices(mesh.vertices().iter().map(|p| rot * p * lambda + V3::from(shift)).collect());
            let mf = setup(&moved);
            let out = reltan_features(&moved, &mf, &cfg).unwrap().tangent_vectors(&mf, 1);
            for (a, b) in base.iter().zip(&out) {
                prop_assert!((rot * a - b).norm() <= 1e-10 * scale);
            }
        }

        #[test]
        fn gauge_covariance(seed in 0u64..10_000, angles in prop::collection::vec(-PI..PI, 42)) {
            let mesh = bumpy(seed);
            let frames = setup(&mesh);
            let rf = regauge(&frames, &angles).unwrap();
            let cfg = RelTanConfig { powers: vec![0.5, 0.7], norm_scalar: true };
            for (a, b) in [
                (reltan_features(&mesh, &frames, &cfg).unwrap(), reltan_features(&mesh, &rf, &cfg).unwrap()),
                (get_features(&mesh, &frames), get_features(&mesh, &rf)),
            ] {
                for p in 0..mesh.vertex_count() {
                    let expect = rep_block_diag(a.ftype(), -angles[p]) * DVector::from_row_slice(a.row(p));
                    prop_assert!((expect - DVector::from_row_slice(b.row(p))).norm() <= 1e-10 * (1.0 + a.row(p).iter().map(|x| x.abs()).fold(0.0, f64::max)));
                }
                prop_assert_eq!(b.binding(), a.regauge(&angles, &rf).unwrap().binding());
            }
        }
    }
}

use std::path::{Path, PathBuf};

use super::config::{sub_seed, DataConfig};
use crate::error::HarnessError;
use crate::features::{compute_features, FeatureFamily, RelTanConfig};
use crate::layers::{Graph, Task};
use crate::mesh::{face_geometry, generate_mesh, jitter_vertices, load_mesh, vertex_normals, Mesh, MeshFormat, MeshKind};
use crate::features::FeatureField;
use crate::tangent::{build_frames, compute_transport, FrameField, FrameStrategy, TransportData};

/// A mesh with frames, transport, input features and edge graph.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mesh: Mesh,
    pub frames: FrameField,
    pub transport: TransportData,
    pub features: FeatureField,
    pub graph: Graph<f64>,
}

pub fn default_frames(mesh: &Mesh) -> Result<FrameField, HarnessError> {
    let fg = face_geometry(mesh)?;
    let normals = vertex_normals(mesh, &fg)?;
    Ok(build_frames(mesh, &normals, &FrameStrategy::FirstNeighbor)?)
}

pub fn prepare(mesh: Mesh, family: FeatureFamily, reltan: &RelTanConfig) -> Result<Prepared, HarnessError> {
    let frames = default_frames(&mesh)?;
    prepare_with_frames(mesh, frames, family, reltan)
}

pub fn prepare_with_frames(mesh: Mesh, frames: FrameField, family: FeatureFamily, reltan: &RelTanConfig) -> Result<Prepared, HarnessError> {
    let transport = compute_transport(&mesh, &frames)?;
    let features = compute_features(&mesh, &frames, family, reltan)?;
    let graph = Graph::new(&mesh, &transport);
    Ok(Prepared {
        mesh,
        frames,
        transport,
        features,
        graph,
    })
}

/// Per-vertex labels or one label per mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    Vertices(Vec<usize>),
    Mesh(usize),
}

impl Labels {
    pub fn targets(&self) -> Vec<usize> {
        match self {
            Labels::Vertices(v) => v.clone(),
            Labels::Mesh(c) => vec![*c],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub mesh: Mesh,
    pub labels: Labels,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub classes: usize,
}

pub fn load_dataset(cfg: &DataConfig, task: Task, seed: u64) -> Result<Dataset, HarnessError> {
    let ds = if cfg.train_files.is_empty() && cfg.test_files.is_empty() {
        match task {
            Task::Segmentation => synthetic_segmentation(cfg, seed)?,
            Task::Classification => synthetic_classification(cfg, seed)?,
        }
    } else {
        from_files(cfg, task)?
    };
    Ok(ds)
}

fn synthetic_segmentation(cfg: &DataConfig, seed: u64) -> Result<Dataset, HarnessError> {
    let sphere = generate_mesh(&MeshKind::Icosphere {
        subdivisions: cfg.subdivisions,
    })?;
    let base = jitter_vertices(&sphere, cfg.base_jitter, sub_seed(seed, "base", 0));
    let labels = Labels::Vertices((0..base.vertex_count()).collect());
    let make = |stream: &str, n: usize| -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                mesh: jitter_vertices(&base, cfg.sample_noise, sub_seed(seed, stream, i as u64)),
                labels: labels.clone(),
            })
            .collect()
    };
    Ok(Dataset {
        train: make("train", cfg.train_meshes),
        test: make("test", cfg.test_meshes),
        classes: base.vertex_count(),
    })
}

fn synthetic_classification(cfg: &DataConfig, seed: u64) -> Result<Dataset, HarnessError> {
    let sphere = generate_mesh(&MeshKind::Icosphere {
        subdivisions: cfg.subdivisions,
    })?;
    let make = |stream: &str, n: usize| -> Result<Vec<Sample>, HarnessError> {
        (0..n)
            .map(|i| {
                let s = sub_seed(seed, stream, i as u64);
                let (mesh, class) = if i % 2 == 0 {
                    (jitter_vertices(&sphere, cfg.base_jitter, s), 0)
                } else {
                    let grid = generate_mesh(&MeshKind::GridPatch {
                        rows: cfg.grid_size,
                        cols: cfg.grid_size,
                        height_noise: cfg.grid_noise,
                        seed: s,
                    })?;
                    (grid, 1)
                };
                Ok(Sample {
                    mesh,
                    labels: Labels::Mesh(class),
                })
            })
            .collect()
    };
    Ok(Dataset {
        train: make("train", cfg.train_meshes)?,
        test: make("test", cfg.test_meshes)?,
        classes: 2,
    })
}

fn read(path: &Path) -> Result<Mesh, HarnessError> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| HarnessError::Dataset(format!("{} is neither .off nor .obj", path.display())))?;
    Ok(load_mesh(path, format)?)
}

fn from_files(cfg: &DataConfig, task: Task) -> Result<Dataset, HarnessError> {
    let load = |files: &[PathBuf], labels: &[usize]| -> Result<Vec<Sample>, HarnessError> {
        if task == Task::Classification && labels.len() != files.len() {
            return Err(HarnessError::Dataset(format!("{} files but {} labels", files.len(), labels.len())));
        }
        files
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mesh = read(f)?;
                let labels = match task {
                    Task::Segmentation => Labels::Vertices((0..mesh.vertex_count()).collect()),
                    Task::Classification => Labels::Mesh(labels[i]),
                };
                Ok(Sample { mesh, labels })
            })
            .collect()
    };
    let train = load(&cfg.train_files, &cfg.train_labels)?;
    let test = load(&cfg.test_files, &cfg.test_labels)?;
    let classes = train
        .iter()
        .chain(&test)
        .flat_map(|s| s.labels.targets())
        .max()
        .map_or(0, |m| m + 1);
    Ok(Dataset { train, test, classes })
}

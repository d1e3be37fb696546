use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use meshnet::features::compute_features;
use meshnet::harness::{self, prepare, sub_seed, ReportHeader, RunConfig};
use meshnet::mesh::{face_geometry, generate_mesh, jitter_vertices, load_mesh, save_mesh, total_area, Mesh, MeshFormat};
use meshnet::HarnessError;

#[derive(Parser)]
#[command(name = "meshnet", version, about = "Gauge-equivariant mesh networks: equivariance gaps, training, evaluation, timing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic mesh and write it as OFF or OBJ.
    GenMesh {
        /// Overrides `gen_mesh.output`.
        #[arg(long)]
        mesh_out: Option<PathBuf>,
    },
    /// Compute input features for one mesh.
    Features {
        /// Overrides `gen_mesh.input`.
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Equivariance gaps of a randomly initialized model.
    Eqgap,
    /// Train on the configured dataset.
    Train {
        /// Overrides `train.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy of a checkpoint on the test set, plain and transformed.
    Eval {
        /// Overrides `eval.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-layer forward and backward wall time.
    Time,
}

#[derive(Serialize)]
struct MeshReport {
    #[serde(flatten)]
    header: ReportHeader,
    path: String,
    vertices: usize,
    faces: usize,
    edges: usize,
    area: f64,
}

#[derive(Serialize)]
struct FeatureReport {
    #[serde(flatten)]
    header: ReportHeader,
    feature_type: String,
    vertices: usize,
    frame_binding: Option<String>,
    features: Vec<Vec<f64>>,
}

fn read_mesh(path: &Path) -> Result<Mesh, HarnessError> {
    let format = MeshFormat::from_path(path).ok_or_else(|| HarnessError::Config(format!("{}: unknown mesh extension", path.display())))?;
    Ok(load_mesh(path, format)?)
}

fn configured_mesh(cfg: &RunConfig) -> Result<Mesh, HarnessError> {
    let g = &cfg.gen_mesh;
    let base = generate_mesh(&g.generator)?;
    Ok(if g.jitter > 0.0 {
        jitter_vertices(&base, g.jitter, sub_seed(cfg.seed, "gen-mesh", 0))
    } else {
        base
    })
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_env()?;
            c
        }
    };
    let value = match cli.command {
        Command::GenMesh { mesh_out } => {
            let path = mesh_out
                .or_else(|| cfg.gen_mesh.output.clone())
                .ok_or_else(|| HarnessError::Config("gen-mesh needs --mesh-out or gen_mesh.output".into()))?;
            let format = MeshFormat::from_path(&path)
                .ok_or_else(|| HarnessError::Config(format!("{}: unknown mesh extension", path.display())))?;
            let mesh = configured_mesh(&cfg)?;
            save_mesh(&mesh, &path, format)?;
            serde_json::to_value(MeshReport {
                header: ReportHeader::new("gen-mesh", &cfg),
                path: path.display().to_string(),
                vertices: mesh.vertex_count(),
                faces: mesh.face_count(),
                edges: mesh.edge_count(),
                area: total_area(&face_geometry(&mesh)?),
            })?
        }
        Command::Features { mesh } => {
            let m = match mesh.or_else(|| cfg.gen_mesh.input.clone()) {
                Some(p) => read_mesh(&p)?,
                None => configured_mesh(&cfg)?,
            };
            let p = prepare(m, cfg.model.features, &cfg.model.reltan)?;
            let f = compute_features(&p.mesh, &p.frames, cfg.model.features, &cfg.model.reltan)?;
            serde_json::to_value(FeatureReport {
                header: ReportHeader::new("features", &cfg),
                feature_type: f.ftype().to_string(),
                vertices: f.vertex_count(),
                frame_binding: f.binding().map(|b| format!("{:016x}", b.0)),
                features: (0..f.vertex_count()).map(|i| f.row(i).to_vec()).collect(),
            })?
        }
        Command::Eqgap => serde_json::to_value(harness::eqgap(&cfg)?)?,
        Command::Train { checkpoint } => {
            let mut cfg = cfg;
            if checkpoint.is_some() {
                cfg.train.checkpoint = checkpoint;
            }
            serde_json::to_value(harness::train(&cfg)?.report)?
        }
        Command::Eval { checkpoint } => {
            let path = checkpoint
                .or_else(|| cfg.eval.checkpoint.clone())
                .or_else(|| cfg.train.checkpoint.clone())
                .ok_or_else(|| HarnessError::Config("eval needs --checkpoint or eval.checkpoint".into()))?;
            serde_json::to_value(harness::evaluate_checkpoint(&cfg, &path)?)?
        }
        Command::Time => serde_json::to_value(harness::time_layers(&cfg)?)?,
    };
    Ok(value)
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|source| HarnessError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(HarnessError::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            }),
            _ => Ok(()),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = cli.out.clone();
    match run(cli).and_then(|v| emit(out.as_deref(), &v)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}

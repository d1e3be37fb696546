use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::Mesh;
use crate::error::MeshError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        MeshFormat::Off => parse_off(&text),
        MeshFormat::Obj => parse_obj(&text),
    }
}

pub fn save_mesh(mesh: &Mesh, path: &Path, format: MeshFormat) -> Result<(), MeshError> {
    let text = match format {
        MeshFormat::Off => write_off(mesh),
        MeshFormat::Obj => write_obj(mesh),
    };
    std::fs::write(path, text).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, MeshError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} {tok:?}")))
}

pub fn parse_off(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("OFF") {
        return Err(parse_err(ln, "expected OFF header"));
    }
    let rest: Vec<&str> = toks.collect();
    let (ln, counts) = if rest.is_empty() {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(ln, "missing vertex/face counts"))?;
        (ln, l.split_whitespace().collect::<Vec<_>>())
    } else {
        (ln, rest)
    };
    let mut it = counts.iter().copied();
    let nv: usize = parse_num(it.next(), ln, "vertex count")?;
    let nf: usize = parse_num(it.next(), ln, "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(ln, "unexpected end of vertex list"))?;
        let mut t = l.split_whitespace();
        let x = parse_num(t.next(), ln, "coordinate")?;
        let y = parse_num(t.next(), ln, "coordinate")?;
        let z = parse_num(t.next(), ln, "coordinate")?;
        vertices.push(Vector3::new(x, y, z));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(ln, "unexpected end of face list"))?;
        let mut t = l.split_whitespace();
        let k: usize = parse_num(t.next(), ln, "face arity")?;
        if k != 3 {
            return Err(parse_err(ln, format!("only triangles are supported, got {k}-gon")));
        }
        let i = parse_num(t.next(), ln, "vertex index")?;
        let j = parse_num(t.next(), ln, "vertex index")?;
        let k = parse_num(t.next(), ln, "vertex index")?;
        faces.push([i, j, k]);
    }
    Mesh::new(vertices, faces)
}

/// Reads `v` and `f` records; texture, normal and group records are skipped.
pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut t = line.split_whitespace();
        match t.next() {
            Some("v") => {
                let x = parse_num(t.next(), ln, "coordinate")?;
                let y = parse_num(t.next(), ln, "coordinate")?;
                let z = parse_num(t.next(), ln, "coordinate")?;
                vertices.push(Vector3::new(x, y, z));
            }
            Some("f") => {
                let idx = t
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let k: i64 = first
                            .parse()
                            .map_err(|_| parse_err(ln, format!("invalid face index {tok:?}")))?;
                        let resolved = if k > 0 {
                            k - 1
                        } else {
                            vertices.len() as i64 + k
                        };
                        if k == 0 || resolved < 0 {
                            return Err(parse_err(ln, format!("invalid face index {tok:?}")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(
                        ln,
                        format!("only triangles are supported, got {}-gon", idx.len()),
                    ));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

/// OFF text; coordinates use the shortest round-trip representation so that
/// reading the file back reproduces every bit.
pub fn write_off(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF");
    let _ = writeln!(s, "{} {} {}", mesh.vertex_count(), mesh.face_count(), mesh.edge_count());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut s = String::new();
    for p in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

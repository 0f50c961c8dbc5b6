use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CapError, Result};
use crate::mesh::TriangleMesh;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Off,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("off") => Ok(MeshFormat::Off),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(CapError::Argument(format!(
                "cannot infer mesh format from {}; expected .obj, .off or .ply",
                path.display()
            ))),
        }
    }
}

/// Loads an ASCII OBJ, OFF or PLY mesh, picking the format by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let (v, f) = load_parts(path.as_ref())?;
    TriangleMesh::new(v, f)
}

/// Vertices and faces of a mesh file, with only the index ranges checked.
/// Reconstructions can contain degenerate faces that [`load_mesh`] rejects.
pub fn load_mesh_parts(path: impl AsRef<Path>) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    load_parts(path.as_ref())
}

fn load_parts(path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let format = MeshFormat::from_path(path)?;
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CapError::Format {
        line: 0,
        message: "file is not valid UTF-8 text (binary formats are not supported)".into(),
    })?;
    parse_parts(&text, format)
}

pub fn parse_mesh(text: &str, format: MeshFormat) -> Result<TriangleMesh> {
    let (v, f) = parse_parts(text, format)?;
    TriangleMesh::new(v, f)
}

fn parse_parts(text: &str, format: MeshFormat) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    match format {
        MeshFormat::Obj => parse_obj(text),
        MeshFormat::Off => parse_off(text),
        MeshFormat::Ply => parse_ply(text),
    }
}

pub fn save_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let text = format_mesh(mesh, MeshFormat::from_path(path)?, None);
    fs::write(path, text)?;
    Ok(())
}

/// Writes a PLY file carrying one extra per-vertex float property.
pub fn save_mesh_with_scalar(path: impl AsRef<Path>, mesh: &TriangleMesh, name: &str, values: &[f64]) -> Result<()> {
    if values.len() != mesh.num_vertices() {
        return Err(CapError::Argument(format!(
            "scalar channel has {} values for {} vertices",
            values.len(),
            mesh.num_vertices()
        )));
    }
    let path = path.as_ref();
    if MeshFormat::from_path(path)? != MeshFormat::Ply {
        return Err(CapError::Argument("scalar channels require a .ply output".into()));
    }
    fs::write(path, format_mesh(mesh, MeshFormat::Ply, Some((name, values))))?;
    Ok(())
}

pub fn format_mesh(mesh: &TriangleMesh, format: MeshFormat, scalar: Option<(&str, &[f64])>) -> String {
    let mut s = String::new();
    let (v, f) = (mesh.vertices(), mesh.faces());
    match format {
        MeshFormat::Obj => {
            for p in v {
                let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
            }
            for t in f {
                let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
            }
        }
        MeshFormat::Off => {
            let _ = writeln!(s, "OFF\n{} {} 0", v.len(), f.len());
            for p in v {
                let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
            }
            for t in f {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
        MeshFormat::Ply => {
            let _ = writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", v.len());
            s.push_str("property double x\nproperty double y\nproperty double z\n");
            if let Some((name, _)) = scalar {
                let _ = writeln!(s, "property double {name}");
            }
            let _ = writeln!(s, "element face {}", f.len());
            s.push_str("property list uchar int vertex_indices\nend_header\n");
            for (i, p) in v.iter().enumerate() {
                match scalar {
                    Some((_, vals)) => {
                        let _ = writeln!(s, "{} {} {} {}", p.x, p.y, p.z, vals[i]);
                    }
                    None => {
                        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
                    }
                }
            }
            for t in f {
                let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
    }
    s
}

fn fmt_err(line: usize, message: impl Into<String>) -> CapError {
    CapError::Format {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| fmt_err(line, "missing number"))?;
    tok.parse::<f64>().map_err(|_| fmt_err(line, format!("invalid number '{tok}'")))
}

fn parse_index(tok: &str, line: usize) -> Result<i64> {
    tok.parse::<i64>().map_err(|_| fmt_err(line, format!("invalid index '{tok}'")))
}

type Raw = (Vec<Vec3>, Vec<[usize; 3]>);

fn triangle(idx: &[usize], line: usize) -> Result<[usize; 3]> {
    if idx.len() != 3 {
        return Err(CapError::Topology(format!(
            "line {line}: face with {} vertices; only triangles are supported",
            idx.len()
        )));
    }
    Ok([idx[0], idx[1], idx[2]])
}

fn parse_obj(text: &str) -> Result<Raw> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), line)?;
                let y = parse_f64(toks.next(), line)?;
                let z = parse_f64(toks.next(), line)?;
                verts.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(3);
                for tok in toks {
                    let first = tok.split('/').next().unwrap_or("");
                    let k = parse_index(first, line)?;
                    let n = verts.len() as i64;
                    let resolved = if k > 0 {
                        k - 1
                    } else if k < 0 {
                        n + k
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(fmt_err(line, format!("face index {k} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                faces.push(triangle(&idx, line)?);
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let c = l.split('#').next().unwrap_or("").trim();
        (!c.is_empty()).then_some((i + 1, c))
    })
}

fn parse_off(text: &str) -> Result<Raw> {
    let mut lines = data_lines(text);
    let (l0, head) = lines.next().ok_or_else(|| fmt_err(1, "empty OFF file"))?;
    let mut counts_line = None;
    if head != "OFF" {
        if let Some(rest) = head.strip_prefix("OFF") {
            counts_line = Some((l0, rest.trim()));
        } else {
            return Err(fmt_err(l0, "missing OFF header"));
        }
    }
    let (lc, counts) = match counts_line {
        Some(c) => c,
        None => lines.next().ok_or_else(|| fmt_err(l0 + 1, "missing counts line"))?,
    };
    let nums: Vec<&str> = counts.split_whitespace().collect();
    if nums.len() < 2 {
        return Err(fmt_err(lc, "counts line needs vertex and face counts"));
    }
    let nv = parse_index(nums[0], lc)? as usize;
    let nf = parse_index(nums[1], lc)? as usize;
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines.next().ok_or_else(|| fmt_err(lc, "unexpected end of vertex list"))?;
        let mut t = s.split_whitespace();
        verts.push(Vec3::new(parse_f64(t.next(), l)?, parse_f64(t.next(), l)?, parse_f64(t.next(), l)?));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = lines.next().ok_or_else(|| fmt_err(lc, "unexpected end of face list"))?;
        faces.push(parse_face_list(s, l, nv)?);
    }
    Ok((verts, faces))
}

fn parse_face_list(s: &str, line: usize, nv: usize) -> Result<[usize; 3]> {
    let mut t = s.split_whitespace();
    let k = parse_index(t.next().unwrap_or(""), line)?;
    let mut idx = Vec::with_capacity(3);
    for _ in 0..k.max(0) {
        let v = parse_index(t.next().ok_or_else(|| fmt_err(line, "face list too short"))?, line)?;
        if v < 0 || v as usize >= nv {
            return Err(fmt_err(line, format!("face index {v} out of range")));
        }
        idx.push(v as usize);
    }
    triangle(&idx, line)
}

fn parse_ply(text: &str) -> Result<Raw> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(fmt_err(1, "missing 'ply' magic")),
    }
    let mut nv = 0usize;
    let mut nf = 0usize;
    let mut vprops: Vec<String> = Vec::new();
    let mut current = "";
    let mut header_end = 0;
    for (l, s) in lines.by_ref() {
        let t: Vec<&str> = s.split_whitespace().collect();
        match t.first().copied() {
            Some("format") => {
                if t.get(1) != Some(&"ascii") {
                    return Err(fmt_err(l, "binary PLY is not supported; convert to ASCII"));
                }
            }
            Some("element") => {
                let n = parse_index(t.get(2).copied().unwrap_or(""), l)? as usize;
                current = match t.get(1).copied() {
                    Some("vertex") => {
                        nv = n;
                        "vertex"
                    }
                    Some("face") => {
                        nf = n;
                        "face"
                    }
                    _ => {
                        if n > 0 {
                            return Err(fmt_err(l, "unsupported PLY element"));
                        }
                        "other"
                    }
                };
            }
            Some("property") if current == "vertex" => {
                vprops.push(t.last().copied().unwrap_or("").to_string());
            }
            Some("end_header") => {
                header_end = l;
                break;
            }
            _ => {}
        }
    }
    if header_end == 0 {
        return Err(fmt_err(1, "missing end_header"));
    }
    let pos = |name: &str| vprops.iter().position(|p| p == name);
    let (ix, iy, iz) = match (pos("x"), pos("y"), pos("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(fmt_err(header_end, "vertex element lacks x/y/z properties")),
    };
    let mut body = lines.filter(|(_, s)| !s.is_empty());
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = body.next().ok_or_else(|| fmt_err(header_end, "unexpected end of vertex data"))?;
        let t: Vec<&str> = s.split_whitespace().collect();
        verts.push(Vec3::new(
            parse_f64(t.get(ix).copied(), l)?,
            parse_f64(t.get(iy).copied(), l)?,
            parse_f64(t.get(iz).copied(), l)?,
        ));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = body.next().ok_or_else(|| fmt_err(header_end, "unexpected end of face data"))?;
        faces.push(parse_face_list(s, l, nv)?);
    }
    Ok((verts, faces))
}

/// Reads a named per-vertex property from an ASCII PLY file.
pub fn load_ply_scalar(path: impl AsRef<Path>, name: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut nv = 0;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut end = 0;
    for (l, s) in lines.by_ref() {
        let t: Vec<&str> = s.split_whitespace().collect();
        match t.first().copied() {
            Some("element") => {
                in_vertex = t.get(1) == Some(&"vertex");
                if in_vertex {
                    nv = parse_index(t.get(2).copied().unwrap_or(""), l)? as usize;
                }
            }
            Some("property") if in_vertex => props.push(t.last().copied().unwrap_or("").to_string()),
            Some("end_header") => {
                end = l;
                break;
            }
            _ => {}
        }
    }
    let col = props
        .iter()
        .position(|p| p == name)
        .ok_or_else(|| fmt_err(end, format!("no vertex property '{name}'")))?;
    lines
        .filter(|(_, s)| !s.is_empty())
        .take(nv)
        .map(|(l, s)| parse_f64(s.split_whitespace().nth(col), l))
        .collect()
}

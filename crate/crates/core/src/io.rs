//! Wavefront OBJ and ASCII PLY readers and writers.
//!
//! Only the geometry subset is interpreted: OBJ `v`/`f` records and PLY
//! `vertex` (x, y, z) and `face` (index list) elements. Everything else is
//! skipped or rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CseError, Result};
use crate::mesh::{Mesh, Point3};

/// Parse Wavefront OBJ text. Polygons are fan-triangulated from their first
/// vertex; `v/vt/vn` references use the vertex part only; negative indices
/// count back from the most recent vertex.
pub fn parse_obj(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| CseError::Parse {
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let mut vertices: Vec<Point3> = Vec::new();
    // (line, 0-based index) for every face corner, checked once all vertices are known
    let mut faces: Vec<[(usize, i64); 3]> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(CseError::Parse {
                        line,
                        msg: format!("expected 3 coordinates, found {}", coords.len()),
                    });
                }
                let mut p = [0.0; 3];
                for (c, tok) in p.iter_mut().zip(&coords) {
                    *c = parse_float(tok, line)?;
                }
                vertices.push(p);
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| CseError::Parse {
                        line,
                        msg: format!("bad face index {tok:?}"),
                    })?;
                    let resolved = match idx {
                        0 => {
                            return Err(CseError::IndexOutOfRange {
                                line,
                                index: 0,
                                count: vertices.len(),
                            })
                        }
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    corners.push((line, resolved));
                }
                if corners.len() < 3 {
                    return Err(CseError::Parse {
                        line,
                        msg: format!("face needs at least 3 vertices, found {}", corners.len()),
                    });
                }
                for w in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[w], corners[w + 1]]);
                }
            }
            _ => {}
        }
    }

    let k = vertices.len();
    let mut resolved = Vec::with_capacity(faces.len());
    for face in &faces {
        let mut tri = [0usize; 3];
        for (slot, &(line, idx)) in tri.iter_mut().zip(face) {
            if idx < 0 || idx as usize >= k {
                return Err(CseError::IndexOutOfRange {
                    line,
                    // report in the 1-based convention of the file
                    index: if idx < 0 { idx } else { idx + 1 },
                    count: k,
                });
            }
            *slot = idx as usize;
        }
        resolved.push(tri);
    }
    Mesh::new(vertices, resolved)
}

fn parse_float(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| CseError::Parse {
        line,
        msg: format!("bad number {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(CseError::Parse {
            line,
            msg: format!("non-finite coordinate {tok:?}"),
        });
    }
    Ok(v)
}

#[derive(Debug)]
enum PlyProperty {
    Scalar(String),
    List(String),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

/// Parse an ASCII PLY file with `vertex` and `face` elements.
pub fn parse_ply_ascii(bytes: &[u8]) -> Result<Mesh> {
    // The header is ASCII even for binary files; find its end first so a
    // binary body never has to be valid UTF-8.
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| CseError::Truncated("PLY header has no end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| CseError::Parse {
        line: 0,
        msg: format!("header not UTF-8: {e}"),
    })?;

    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => {
            return Err(CseError::Parse {
                line: 1,
                msg: "missing 'ply' magic".into(),
            })
        }
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    for (n, raw) in lines {
        let line = n + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                if *fmt != "ascii" {
                    return Err(CseError::Unsupported(format!("PLY format {fmt}")));
                }
                saw_format = true;
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| CseError::Parse {
                    line,
                    msg: format!("bad element count {count:?}"),
                })?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _count_ty, _item_ty, name] => {
                let el = elements.last_mut().ok_or_else(|| CseError::Parse {
                    line,
                    msg: "property before element".into(),
                })?;
                el.properties.push(PlyProperty::List(name.to_string()));
            }
            ["property", _ty, name] => {
                let el = elements.last_mut().ok_or_else(|| CseError::Parse {
                    line,
                    msg: "property before element".into(),
                })?;
                el.properties.push(PlyProperty::Scalar(name.to_string()));
            }
            _ => {
                return Err(CseError::Parse {
                    line,
                    msg: format!("unrecognized header line {raw:?}"),
                })
            }
        }
    }
    if !saw_format {
        return Err(CseError::Parse {
            line: 2,
            msg: "missing format line".into(),
        });
    }
    let header_lines = header.lines().count() + 1;

    let body = std::str::from_utf8(&bytes[header_end + "end_header".len()..]).map_err(|e| {
        CseError::Parse {
            line: header_lines,
            msg: format!("body not UTF-8: {e}"),
        }
    })?;
    // first "line" is the remainder of the end_header line
    let mut rows = body
        .lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (header_lines + i, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let declared: usize = elements.iter().map(|e| e.count).sum();
    let available = body.lines().skip(1).filter(|l| !l.trim().is_empty()).count();
    if available < declared {
        return Err(CseError::Truncated(format!(
            "header declares {declared} rows, body has {available}"
        )));
    }

    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut have_vertices = false;
    for el in &elements {
        let xyz = if el.name == "vertex" {
            have_vertices = true;
            let pos = |axis: &str| {
                el.properties
                    .iter()
                    .position(|p| matches!(p, PlyProperty::Scalar(n) if n == axis))
                    .ok_or_else(|| CseError::Parse {
                        line: 0,
                        msg: format!("vertex element lacks property {axis}"),
                    })
            };
            Some([pos("x")?, pos("y")?, pos("z")?])
        } else {
            None
        };
        for row_idx in 0..el.count {
            let (line, row) = rows.next().ok_or_else(|| {
                CseError::Truncated(format!(
                    "element {} declares {} rows, body has {}",
                    el.name, el.count, row_idx
                ))
            })?;
            let toks: Vec<&str> = row.split_whitespace().collect();
            let mut cursor = 0;
            let mut scalars: Vec<&str> = Vec::new();
            let mut list: Option<Vec<&str>> = None;
            for prop in &el.properties {
                match prop {
                    PlyProperty::Scalar(_) => {
                        let t = toks.get(cursor).ok_or_else(|| CseError::Parse {
                            line,
                            msg: "row too short".into(),
                        })?;
                        scalars.push(t);
                        cursor += 1;
                    }
                    PlyProperty::List(name) => {
                        let n: usize = toks
                            .get(cursor)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| CseError::Parse {
                                line,
                                msg: "bad list length".into(),
                            })?;
                        let items = toks.get(cursor + 1..cursor + 1 + n).ok_or_else(|| {
                            CseError::Parse {
                                line,
                                msg: "list shorter than its length".into(),
                            }
                        })?;
                        if name == "vertex_indices" || name == "vertex_index" {
                            list = Some(items.to_vec());
                        }
                        cursor += 1 + n;
                    }
                }
            }
            if cursor != toks.len() {
                return Err(CseError::Parse {
                    line,
                    msg: format!("expected {cursor} values, found {}", toks.len()),
                });
            }
            if let Some([ix, iy, iz]) = xyz {
                vertices.push([
                    parse_float(scalars[ix], line)?,
                    parse_float(scalars[iy], line)?,
                    parse_float(scalars[iz], line)?,
                ]);
            } else if el.name == "face" {
                let items = list.ok_or_else(|| CseError::Parse {
                    line,
                    msg: "face element lacks vertex_indices".into(),
                })?;
                if items.len() < 3 {
                    return Err(CseError::Parse {
                        line,
                        msg: format!("face needs at least 3 vertices, found {}", items.len()),
                    });
                }
                let mut idx = Vec::with_capacity(items.len());
                for t in items {
                    let i: i64 = t.parse().map_err(|_| CseError::Parse {
                        line,
                        msg: format!("bad face index {t:?}"),
                    })?;
                    let count = vertices.len();
                    if i < 0 || i as usize >= count {
                        return Err(CseError::IndexOutOfRange {
                            line,
                            index: i,
                            count,
                        });
                    }
                    idx.push(i as usize);
                }
                for w in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[w], idx[w + 1]]);
                }
            }
        }
    }
    if !have_vertices {
        return Err(CseError::EmptyMesh);
    }
    Mesh::new(vertices, faces)
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Load a mesh, choosing the parser from the file extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => parse_obj(&bytes),
        Some("ply") => parse_ply_ascii(&bytes),
        other => Err(CseError::Unsupported(format!(
            "mesh extension {:?}",
            other.unwrap_or("")
        ))),
    }
}

/// OBJ text with shortest round-trip float formatting.
pub fn write_obj(mesh: &Mesh) -> Vec<u8> {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for t in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out.into_bytes()
}

/// ASCII PLY carrying per-vertex RGB. Output depends only on the inputs.
pub fn export_vertex_colors(mesh: &Mesh, colors: &[[u8; 3]]) -> Result<Vec<u8>> {
    if colors.len() != mesh.num_vertices() {
        return Err(CseError::LengthMismatch {
            what: "vertex colors",
            expected: mesh.num_vertices(),
            got: colors.len(),
        });
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment csegeo vertex colors\n");
    let _ = writeln!(out, "element vertex {}", mesh.num_vertices());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    let _ = writeln!(out, "element face {}", mesh.num_faces());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (v, c) in mesh.vertices().iter().zip(colors) {
        let _ = writeln!(
            out,
            "{:?} {:?} {:?} {} {} {}",
            v[0], v[1], v[2], c[0], c[1], c[2]
        );
    }
    for t in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    Ok(out.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI_OBJ: &str = "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";

    #[test]
    fn minimal_obj() {
        let m = parse_obj(TRI_OBJ.as_bytes()).unwrap();
        assert_eq!(m.num_vertices(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_quad_is_fan_triangulated() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let m = parse_obj(src.as_bytes()).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_slashes_and_negative_indices() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf -3/1/1 -2//1 -1/1\n";
        let m = parse_obj(src.as_bytes()).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_out_of_range_names_line() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n";
        match parse_obj(src.as_bytes()) {
            Err(CseError::IndexOutOfRange { line, index, count }) => {
                assert_eq!((line, index, count), (4, 5, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = parse_obj(src.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn obj_malformed_and_empty() {
        assert!(matches!(
            parse_obj(b"v 0 0\n"),
            Err(CseError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 x 3\n"),
            Err(CseError::Parse { line: 4, .. })
        ));
        assert!(matches!(parse_obj(b"# nothing\n"), Err(CseError::EmptyMesh)));
    }

    #[test]
    fn obj_disconnected_reports_components() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 0 0\nv 6 0 0\nv 5 1 0\nf 1 2 3\nf 4 5 6\n";
        assert!(matches!(
            parse_obj(src.as_bytes()),
            Err(CseError::Disconnected { components: 2 })
        ));
    }

    const TRI_PLY: &str = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n\
property float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\n\
end_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn minimal_ply() {
        let m = parse_ply_ascii(TRI_PLY.as_bytes()).unwrap();
        assert_eq!(m.num_vertices(), 3);
        assert_eq!(m.num_faces(), 1);
    }

    #[test]
    fn ply_truncated_body() {
        let src = TRI_PLY.replace("element vertex 3", "element vertex 4");
        assert!(matches!(
            parse_ply_ascii(src.as_bytes()),
            Err(CseError::Truncated(_))
        ));
        // vertex rows run out before the declared count
        let src = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\n\
property float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
        assert!(matches!(
            parse_ply_ascii(src.as_bytes()),
            Err(CseError::Truncated(_))
        ));
    }

    #[test]
    fn ply_binary_rejected() {
        let src = TRI_PLY.replace("format ascii 1.0", "format binary_little_endian 1.0");
        assert!(matches!(
            parse_ply_ascii(src.as_bytes()),
            Err(CseError::Unsupported(_))
        ));
    }

    #[test]
    fn ply_extra_properties_are_skipped() {
        let src = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
property float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\n\
property uchar flags\nend_header\n0 0 0 9\n1 0 0 9\n0 1 0 9\n3 0 1 2 7\n";
        let m = parse_ply_ascii(src.as_bytes()).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn export_white_triangle() {
        let m = parse_obj(TRI_OBJ.as_bytes()).unwrap();
        let out = export_vertex_colors(&m, &[[255, 255, 255]; 3]).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(text.matches(" 255 255 255\n").count(), 3);
        let back = parse_ply_ascii(&out).unwrap();
        assert_eq!(back, m);
        assert!(export_vertex_colors(&m, &[[0, 0, 0]; 2]).is_err());
        assert_eq!(out, export_vertex_colors(&m, &[[255, 255, 255]; 3]).unwrap());
    }

    #[test]
    fn obj_writer_round_trips() {
        let src = "v 0.1 0.2 0.30000000000000004\nv 1e-7 0 0\nv 0 1 3.25\nf 1 2 3\n";
        let m = parse_obj(src.as_bytes()).unwrap();
        assert_eq!(parse_obj(&write_obj(&m)).unwrap(), m);
    }
}

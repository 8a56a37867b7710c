//! Reader and writer for the `chmesh 1` text format.
//!
//! ```text
//! chmesh 1
//! nodes K          then K lines `x y z`
//! elements M       then M lines of 8 zero-based vertex indices
//! boundary B       then B lines `elem face tag`
//! curved C         optional; C blocks `elem face Ngeo` + (Ngeo+1)^2 lines `x y z`
//! ```
//!
//! Tokens are whitespace separated and `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::mesh::{CurvedFace, CurvedHexMesh, Point};

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, Vec<&'a str>)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>()))
                .filter(|(_, t)| !t.is_empty()),
        );
        Self { inner: it.peekable(), last: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((n, t)) => {
                self.last = n;
                Ok((n, t))
            }
            None => Err(parse_err(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn peek_keyword(&mut self) -> Option<&'a str> {
        self.inner.peek().map(|(_, t)| t[0])
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn field<T: FromStr>(line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

fn expect_len(line: usize, toks: &[&str], n: usize, what: &str) -> Result<()> {
    if toks.len() != n {
        return Err(parse_err(line, format!("{what} needs {n} fields, found {}", toks.len())));
    }
    Ok(())
}

fn section(lines: &mut Lines<'_>, keyword: &str) -> Result<usize> {
    let (ln, t) = lines.next(keyword)?;
    if t[0] != keyword || t.len() != 2 {
        return Err(parse_err(ln, format!("expected `{keyword} <count>`")));
    }
    field(ln, t[1], "count")
}

fn point(lines: &mut Lines<'_>) -> Result<Point> {
    let (ln, t) = lines.next("a point")?;
    expect_len(ln, &t, 3, "point")?;
    let mut p: Point = [0.0; 3];
    for d in 0..3 {
        p[d] = field(ln, t[d], "coordinate")?;
        if !p[d].is_finite() {
            return Err(parse_err(ln, "non-finite coordinate"));
        }
    }
    Ok(p)
}

/// Parses mesh text; errors carry the offending line number.
pub fn parse_mesh(text: &str) -> Result<CurvedHexMesh> {
    let mut lines = Lines::new(text);
    let (ln, t) = lines.next("header")?;
    if t != ["chmesh", "1"] {
        return Err(parse_err(ln, "header must be `chmesh 1`"));
    }

    let nv = section(&mut lines, "nodes")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(point(&mut lines)?);
    }

    let ne = section(&mut lines, "elements")?;
    let mut elements = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, t) = lines.next("an element")?;
        expect_len(ln, &t, 8, "element")?;
        let mut el = [0usize; 8];
        for c in 0..8 {
            el[c] = field(ln, t[c], "vertex index")?;
            if el[c] >= nv {
                return Err(parse_err(ln, format!("vertex index {} out of range (nodes {nv})", el[c])));
            }
        }
        elements.push(el);
    }

    let nb = section(&mut lines, "boundary")?;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, t) = lines.next("a boundary face")?;
        expect_len(ln, &t, 3, "boundary face")?;
        let e: usize = field(ln, t[0], "element index")?;
        let f: usize = field(ln, t[1], "face index")?;
        if e >= ne || f >= 6 {
            return Err(parse_err(ln, format!("boundary face ({e}, {f}) out of range")));
        }
        boundary.push((e, f, t[2].to_string()));
    }

    let mut curved = BTreeMap::new();
    if lines.peek_keyword() == Some("curved") {
        let nc = section(&mut lines, "curved")?;
        for _ in 0..nc {
            let (ln, t) = lines.next("a curved face")?;
            expect_len(ln, &t, 3, "curved face")?;
            let e: usize = field(ln, t[0], "element index")?;
            let f: usize = field(ln, t[1], "face index")?;
            let ngeo: usize = field(ln, t[2], "geometry order")?;
            if e >= ne || f >= 6 || ngeo == 0 {
                return Err(parse_err(ln, format!("curved face ({e}, {f}, {ngeo}) out of range")));
            }
            let mut points = Vec::with_capacity((ngeo + 1) * (ngeo + 1));
            for _ in 0..(ngeo + 1) * (ngeo + 1) {
                points.push(point(&mut lines)?);
            }
            if curved.insert((e, f), CurvedFace { ngeo, points }).is_some() {
                return Err(parse_err(ln, format!("curved face ({e}, {f}) given twice")));
            }
        }
    }
    if let Some((ln, t)) = lines.inner.next() {
        return Err(parse_err(ln, format!("unexpected trailing content `{}`", t.join(" "))));
    }

    CurvedHexMesh::new(vertices, elements, boundary, curved)
}

pub fn format_mesh(mesh: &CurvedHexMesh) -> String {
    let mut s = String::new();
    let pt = |s: &mut String, p: &Point| {
        let _ = writeln!(s, "{:e} {:e} {:e}", p[0], p[1], p[2]);
    };
    s.push_str("chmesh 1\n");
    let _ = writeln!(s, "nodes {}", mesh.vertices().len());
    for p in mesh.vertices() {
        pt(&mut s, p);
    }
    let _ = writeln!(s, "elements {}", mesh.num_elements());
    for el in mesh.elements() {
        let row: Vec<String> = el.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    let _ = writeln!(s, "boundary {}", mesh.boundary_faces().len());
    for b in mesh.boundary_faces() {
        let _ = writeln!(s, "{} {} {}", b.elem, b.face, b.tag);
    }
    if !mesh.curved_faces().is_empty() {
        let _ = writeln!(s, "curved {}", mesh.curved_faces().len());
        for (&(e, f), cf) in mesh.curved_faces() {
            let _ = writeln!(s, "{e} {f} {}", cf.ngeo);
            for p in &cf.points {
                pt(&mut s, p);
            }
        }
    }
    s
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<CurvedHexMesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

pub fn write_mesh(mesh: &CurvedHexMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_mesh(mesh))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distort::{distort_mesh, Distortion};
    use crate::geometry::mesh::generate_box_mesh;

    #[test]
    fn round_trip() {
        let m = generate_box_mesh(2, 1, 1, [[0.0, 1.0]; 3]).unwrap();
        assert_eq!(parse_mesh(&format_mesh(&m)).unwrap(), m);

        let c = generate_box_mesh(3, 3, 1, [[0.0, 1.0], [0.0, 1.0], [0.0, 0.1]]).unwrap();
        let c = distort_mesh(&c, Distortion::CurvedSine { ngeo: 3 }, 0.07).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.chmesh");
        write_mesh(&c, &path).unwrap();
        assert_eq!(read_mesh(&path).unwrap(), c);
    }

    const ONE: &str = "chmesh 1 # a cube\nnodes 8\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
        elements 1\n0 1 2 3 4 5 6 7\nboundary 6\n0 0 a\n0 1 a\n0 2 a\n0 3 a\n0 4 a\n0 5 a\n";

    #[test]
    fn accepts_comments() {
        let m = parse_mesh(ONE).unwrap();
        assert_eq!(m.num_elements(), 1);
        assert_eq!(m.boundary_faces().len(), 6);
    }

    #[test]
    fn bad_vertex_index_names_line() {
        let bad = ONE.replace("0 1 2 3 4 5 6 7", "0 1 2 3 4 5 6 8");
        match parse_mesh(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_header() {
        assert!(matches!(parse_mesh("chmesh 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_mesh(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn dangling_face_is_connectivity_error() {
        let bad = ONE.replace("boundary 6", "boundary 5").replace("0 5 a\n", "");
        assert!(matches!(parse_mesh(&bad), Err(Error::Connectivity(_))));
    }
}

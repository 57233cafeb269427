//! ASCII PLY and CSV point clouds. Coordinates are written with the
//! shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_atomic, IoError};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Csv,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("ply") => Ok(CloudFormat::Ply),
            Some("csv") => Ok(CloudFormat::Csv),
            other => Err(IoError::UnsupportedFormat(format!("extension {:?}", other.unwrap_or("")))),
        }
    }
}

pub fn read_cloud(path: &Path) -> Result<Vec<Point3>, IoError> {
    let format = CloudFormat::from_path(path)?;
    let text = read_text(path)?;
    match format {
        CloudFormat::Ply => parse_ply(&text),
        CloudFormat::Csv => parse_csv(&text),
    }
}

pub fn write_cloud(path: &Path, cloud: &[Point3]) -> Result<(), IoError> {
    let text = match CloudFormat::from_path(path)? {
        CloudFormat::Ply => format_ply(cloud),
        CloudFormat::Csv => format_csv(cloud),
    };
    write_atomic(path, text.as_bytes())
}

pub fn format_ply(cloud: &[Point3]) -> String {
    let mut s = format!("ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n", cloud.len());
    for p in cloud {
        writeln!(s, "{} {} {}", p.x, p.y, p.z).expect("string write");
    }
    s
}

pub fn format_csv(cloud: &[Point3]) -> String {
    let mut s = String::from("x,y,z\n");
    for p in cloud {
        writeln!(s, "{},{},{}", p.x, p.y, p.z).expect("string write");
    }
    s
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

fn number(tok: &str, line: usize) -> Result<f64, IoError> {
    let v: f64 = tok.trim().parse().map_err(|_| parse_err(line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub fn parse_ply(text: &str) -> Result<Vec<Point3>, IoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    loop {
        let (n, line) = lines.next().ok_or_else(|| parse_err(0, "header not terminated"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => format_seen = true,
            ["format", other, _] => return Err(IoError::UnsupportedFormat(format!("PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| parse_err(n, format!("bad element count {count:?}")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            ["property", "list", _, _, name] | ["property", _, name] => {
                let e = elements.last_mut().ok_or_else(|| parse_err(n, "property before element"))?;
                e.properties.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(parse_err(n, format!("unexpected header line {line:?}"))),
        }
    }
    if !format_seen {
        return Err(parse_err(2, "missing format line"));
    }
    let mut out = Vec::new();
    for e in &elements {
        let cols = (e.name == "vertex")
            .then(|| -> Result<[usize; 3], IoError> {
                let find = |c: &str| e.properties.iter().position(|p| p == c).ok_or_else(|| IoError::MissingField(format!("vertex property {c}")));
                Ok([find("x")?, find("y")?, find("z")?])
            })
            .transpose()?;
        for _ in 0..e.count {
            let (n, line) = lines.next().ok_or_else(|| parse_err(0, format!("file ends inside element {}", e.name)))?;
            if let Some(cols) = cols {
                let tok: Vec<&str> = line.split_whitespace().collect();
                if tok.len() < e.properties.len() {
                    return Err(parse_err(n, format!("expected {} values, found {}", e.properties.len(), tok.len())));
                }
                out.push(Point3::new(number(tok[cols[0]], n)?, number(tok[cols[1]], n)?, number(tok[cols[2]], n)?));
            }
        }
    }
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<Vec<Point3>, IoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (hn, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let names: Vec<String> = header.split(',').map(|h| h.trim().to_ascii_lowercase()).collect();
    let find = |c: &str| names.iter().position(|h| h == c);
    let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
        return Err(parse_err(hn, "missing header with x,y,z columns"));
    };
    lines
        .map(|(n, line)| {
            let tok: Vec<&str> = line.split(',').collect();
            if tok.len() != names.len() {
                return Err(parse_err(n, format!("expected {} columns, found {}", names.len(), tok.len())));
            }
            Ok(Point3::new(number(tok[ix], n)?, number(tok[iy], n)?, number(tok[iz], n)?))
        })
        .collect()
}

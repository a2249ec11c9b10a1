//! Abundance maps as 8-bit PGM images (one per class) and a CSV of raw values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::AbundanceMap;

pub const CSV_NAME: &str = "abundances.csv";

pub fn pgm_name(class: usize) -> String {
    format!("abundance_{class}.pgm")
}

/// Linear map of `[0, 1]` onto `0..=255`, clamping outside values.
pub fn to_gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `abundance_<j>.pgm` for every class and `abundances.csv`; returns the paths.
pub fn export_abundance_images(map: &AbundanceMap, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for j in 0..map.classes {
        let path = dir.join(pgm_name(j));
        let mut bytes = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
        bytes.extend((0..map.pixels()).map(|p| to_gray(map.pixel(p)[j])));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join(CSV_NAME);
    write_abundance_csv(map, &path)?;
    written.push(path);
    Ok(written)
}

pub fn write_abundance_csv(map: &AbundanceMap, path: &Path) -> Result<()> {
    let mut s = String::from("row,col");
    for j in 0..map.classes {
        s.push_str(&format!(",class_{j}"));
    }
    s.push('\n');
    for p in 0..map.pixels() {
        s.push_str(&format!("{},{}", p / map.width, p % map.width));
        for v in map.pixel(p) {
            // Display prints the shortest representation that parses back exactly.
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_abundance_csv(path: impl AsRef<Path>) -> Result<AbundanceMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let classes = header.split(',').count().saturating_sub(2);
    if classes == 0 {
        return Err(bad("header names no classes".into()));
    }
    let mut rows = Vec::new();
    let (mut h, mut w) = (0, 0);
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != classes + 2 {
            return Err(bad(format!("line {} has {} fields", i + 2, fields.len())));
        }
        let parse_idx = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("line {}: {e}", i + 2)));
        let (r, c) = (parse_idx(fields[0])?, parse_idx(fields[1])?);
        h = h.max(r + 1);
        w = w.max(c + 1);
        let vals = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 2))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((r, c, vals));
    }
    if rows.len() != h * w {
        return Err(bad(format!("{} rows for a {h}×{w} map", rows.len())));
    }
    let mut values = vec![0.0; h * w * classes];
    for (r, c, vals) in rows {
        let p = r * w + c;
        values[p * classes..(p + 1) * classes].copy_from_slice(&vals);
    }
    AbundanceMap::new(h, w, classes, values)
}

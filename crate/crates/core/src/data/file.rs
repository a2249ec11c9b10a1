//! Dataset files: a JSON header line (`magic: "HSUX"`) and a raw `f64le`
//! payload. Cubes and abundance maps are stored pixel-major with the band or
//! class index fastest; endmembers and bundle matrices one spectrum after
//! another.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::framed::{peek_header, read_framed, write_framed};
use crate::bundles::EndmemberBundle;
use crate::error::{Error, Result};
use crate::types::{AbundanceMap, EndmemberMatrix, HsiCube};

pub const DATASET_MAGIC: &str = "HSUX";
pub const DATASET_VERSION: u32 = 1;
pub const DTYPE: &str = "f64le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Cube,
    Abundance,
    Endmembers,
    Bundle,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Cube => "cube",
            DatasetKind::Abundance => "abundance",
            DatasetKind::Endmembers => "endmembers",
            DatasetKind::Bundle => "bundle",
        })
    }
}

/// Where a file came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub magic: String,
    pub version: u32,
    pub kind: DatasetKind,
    #[serde(rename = "H", skip_serializing_if = "Option::is_none", default)]
    pub height: Option<usize>,
    #[serde(rename = "W", skip_serializing_if = "Option::is_none", default)]
    pub width: Option<usize>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none", default)]
    pub bands: Option<usize>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none", default)]
    pub classes: Option<usize>,
    /// Bundle signature count `N_e`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub count: Option<usize>,
    /// Bundle cluster count `K`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clusters: Option<usize>,
    pub dtype: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wavelengths: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub notes: String,
}

impl DatasetHeader {
    fn new(kind: DatasetKind, prov: &Provenance) -> Self {
        DatasetHeader {
            magic: DATASET_MAGIC.into(),
            version: DATASET_VERSION,
            kind,
            height: None,
            width: None,
            bands: None,
            classes: None,
            count: None,
            clusters: None,
            dtype: DTYPE.into(),
            wavelengths: None,
            class_names: None,
            seed: prov.seed,
            notes: prov.notes.clone(),
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.seed,
            notes: self.notes.clone(),
        }
    }

    fn field(&self, path: &Path, name: &str, v: Option<usize>) -> Result<usize> {
        v.ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            detail: format!("{} header lacks {name}", self.kind),
        })
    }

    fn payload_len(&self, path: &Path) -> Result<usize> {
        if self.magic != DATASET_MAGIC || self.dtype != DTYPE {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("not a dataset file (magic {:?}, dtype {:?})", self.magic, self.dtype),
            });
        }
        if self.version != DATASET_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("unsupported version {}", self.version),
            });
        }
        let f = |name, v| self.field(path, name, v);
        let len = match self.kind {
            DatasetKind::Cube => f("H", self.height)? * f("W", self.width)? * f("B", self.bands)?,
            DatasetKind::Abundance => {
                f("H", self.height)? * f("W", self.width)? * f("C", self.classes)?
            }
            DatasetKind::Endmembers => f("B", self.bands)? * f("C", self.classes)?,
            DatasetKind::Bundle => {
                let (b, c) = (f("B", self.bands)?, f("C", self.classes)?);
                let (n, k) = (f("count", self.count)?, f("clusters", self.clusters)?);
                n * b + n * c + n + k * b + k + c * b + n
            }
        };
        Ok(len)
    }
}

/// Any of the four stored kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Cube(HsiCube),
    Abundance(AbundanceMap),
    Endmembers(EndmemberMatrix),
    Bundle(EndmemberBundle),
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Cube(_) => DatasetKind::Cube,
            Dataset::Abundance(_) => DatasetKind::Abundance,
            Dataset::Endmembers(_) => DatasetKind::Endmembers,
            Dataset::Bundle(_) => DatasetKind::Bundle,
        }
    }
}

fn push_columns(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    out.extend_from_slice(m.as_slice());
}

fn take<'a>(values: &mut &'a [f64], n: usize) -> &'a [f64] {
    let (head, tail) = values.split_at(n);
    *values = tail;
    head
}

fn to_index(path: &Path, v: f64, bound: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < bound {
        Ok(v as usize)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("index {v} outside [0, {bound})"),
        })
    }
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset, prov: &Provenance) -> Result<()> {
    let path = path.as_ref();
    let mut h = DatasetHeader::new(data.kind(), prov);
    let mut payload = Vec::new();
    match data {
        Dataset::Cube(c) => {
            h.height = Some(c.height);
            h.width = Some(c.width);
            h.bands = Some(c.bands);
            h.wavelengths = c.wavelengths.clone();
            payload.extend_from_slice(c.data());
        }
        Dataset::Abundance(a) => {
            h.height = Some(a.height);
            h.width = Some(a.width);
            h.classes = Some(a.classes);
            payload.extend_from_slice(a.values());
        }
        Dataset::Endmembers(e) => {
            h.bands = Some(e.bands());
            h.classes = Some(e.classes());
            h.class_names = Some(e.class_names.clone());
            push_columns(&mut payload, &e.matrix);
        }
        Dataset::Bundle(b) => {
            b.validate()?;
            h.bands = Some(b.bands());
            h.classes = Some(b.classes());
            h.count = Some(b.len());
            h.clusters = Some(b.cluster_means.ncols());
            push_columns(&mut payload, &b.signatures);
            push_columns(&mut payload, &b.labels);
            payload.extend(b.cluster_of.iter().map(|&v| v as f64));
            push_columns(&mut payload, &b.cluster_means);
            payload.extend(b.cluster_class.iter().map(|&v| v as f64));
            push_columns(&mut payload, &b.reference_endmembers);
            payload.extend(b.source_indices.iter().map(|&v| v as f64));
        }
    }
    write_framed(path, &h, &payload)
}

pub fn read_dataset_header(path: impl AsRef<Path>) -> Result<DatasetHeader> {
    peek_header(path.as_ref())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Dataset)> {
    let path = path.as_ref();
    let (h, values) = read_framed(path, |h: &DatasetHeader| h.payload_len(path))?;
    let fmt = |e: Error| match e {
        Error::Format { .. } | Error::Io { .. } => e,
        other => Error::Format {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    };
    let data = match h.kind {
        DatasetKind::Cube => Dataset::Cube(
            HsiCube::new(
                h.height.unwrap(),
                h.width.unwrap(),
                h.bands.unwrap(),
                h.wavelengths.clone(),
                values,
            )
            .map_err(fmt)?,
        ),
        DatasetKind::Abundance => Dataset::Abundance(
            AbundanceMap::new(h.height.unwrap(), h.width.unwrap(), h.classes.unwrap(), values)
                .map_err(fmt)?,
        ),
        DatasetKind::Endmembers => {
            let m = DMatrix::from_column_slice(h.bands.unwrap(), h.classes.unwrap(), &values);
            Dataset::Endmembers(EndmemberMatrix::new(m, h.class_names.clone()).map_err(fmt)?)
        }
        DatasetKind::Bundle => {
            let (b, c, n, k) = (
                h.bands.unwrap(),
                h.classes.unwrap(),
                h.count.unwrap(),
                h.clusters.unwrap(),
            );
            let mut rest = values.as_slice();
            let signatures = DMatrix::from_column_slice(b, n, take(&mut rest, n * b));
            let labels = DMatrix::from_column_slice(c, n, take(&mut rest, n * c));
            let cluster_of = take(&mut rest, n)
                .iter()
                .map(|&v| to_index(path, v, k))
                .collect::<Result<Vec<_>>>()?;
            let cluster_means = DMatrix::from_column_slice(b, k, take(&mut rest, k * b));
            let cluster_class = take(&mut rest, k)
                .iter()
                .map(|&v| to_index(path, v, c))
                .collect::<Result<Vec<_>>>()?;
            let reference_endmembers = DMatrix::from_column_slice(b, c, take(&mut rest, c * b));
            let source_indices = take(&mut rest, n)
                .iter()
                .map(|&v| to_index(path, v, usize::MAX))
                .collect::<Result<Vec<_>>>()?;
            let bundle = EndmemberBundle {
                signatures,
                labels,
                cluster_of,
                cluster_means,
                cluster_class,
                reference_endmembers,
                source_indices,
            };
            bundle.validate().map_err(fmt)?;
            Dataset::Bundle(bundle)
        }
    };
    Ok((h, data))
}

fn wrong_kind(path: &Path, want: DatasetKind, got: DatasetKind) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: format!("expected a {want} file, found {got}"),
    }
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    match read_dataset(path)?.1 {
        Dataset::Cube(c) => Ok(c),
        other => Err(wrong_kind(path, DatasetKind::Cube, other.kind())),
    }
}

pub fn read_abundance(path: impl AsRef<Path>) -> Result<AbundanceMap> {
    let path = path.as_ref();
    match read_dataset(path)?.1 {
        Dataset::Abundance(a) => Ok(a),
        other => Err(wrong_kind(path, DatasetKind::Abundance, other.kind())),
    }
}

pub fn read_endmembers(path: impl AsRef<Path>) -> Result<EndmemberMatrix> {
    let path = path.as_ref();
    match read_dataset(path)?.1 {
        Dataset::Endmembers(e) => Ok(e),
        other => Err(wrong_kind(path, DatasetKind::Endmembers, other.kind())),
    }
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<EndmemberBundle> {
    let path = path.as_ref();
    match read_dataset(path)?.1 {
        Dataset::Bundle(b) => Ok(b),
        other => Err(wrong_kind(path, DatasetKind::Bundle, other.kind())),
    }
}

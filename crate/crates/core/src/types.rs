//! Image, abundance and endmember containers shared by every stage.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `height×width` image with `bands` reflectance values per pixel, stored
/// band-interleaved-by-pixel (pixel-major, band fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Band centers in micrometres, strictly increasing.
    pub wavelengths: Option<Vec<f64>>,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        wavelengths: Option<Vec<f64>>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if bands < 2 {
            return Err(Error::dim(format!("a cube needs at least 2 bands, got {bands}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::dim("a cube needs at least one pixel"));
        }
        if data.len() != height * width * bands {
            return Err(Error::dim(format!(
                "{height}×{width}×{bands} cube needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube data".into()));
        }
        if let Some(w) = &wavelengths {
            if w.len() != bands {
                return Err(Error::dim(format!("{} wavelengths for {bands} bands", w.len())));
            }
            if w.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::config("wavelengths must be strictly increasing"));
            }
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            wavelengths,
            data,
        })
    }

    /// Builds a cube from a `bands×pixels` matrix (pixel index `row·width + col`).
    pub fn from_band_matrix(height: usize, width: usize, x: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() != height * width {
            return Err(Error::dim("band matrix column count differs from pixel count"));
        }
        let mut data = Vec::with_capacity(x.len());
        for col in x.column_iter() {
            data.extend(col.iter());
        }
        HsiCube::new(height, width, x.nrows(), None, data)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.bands..(index + 1) * self.bands]
    }

    pub fn pixel_at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(row * self.width + col)
    }

    /// `bands×pixels` matrix, one column per pixel.
    pub fn band_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.bands, self.pixels(), &self.data)
    }

    /// Pixels as rows of an `N×B` tensor.
    pub fn pixel_rows(&self) -> Tensor {
        Tensor::new(vec![self.pixels(), self.bands], self.data.clone()).expect("consistent cube")
    }

    /// The whole image as a `1×H×W×B` tensor.
    pub fn image_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width, self.bands], self.data.clone())
            .expect("consistent cube")
    }
}

/// Per-pixel class fractions, stored `height×width×classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    values: Vec<f64>,
}

impl AbundanceMap {
    pub fn new(height: usize, width: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if classes == 0 || values.len() != height * width * classes {
            return Err(Error::dim(format!(
                "{height}×{width}×{classes} abundance map needs {} values, got {}",
                height * width * classes,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("abundance values".into()));
        }
        Ok(AbundanceMap {
            height,
            width,
            classes,
            values,
        })
    }

    /// From a `classes×pixels` matrix.
    pub fn from_class_matrix(height: usize, width: usize, y: &DMatrix<f64>) -> Result<Self> {
        if y.ncols() != height * width {
            return Err(Error::dim("class matrix column count differs from pixel count"));
        }
        let mut values = Vec::with_capacity(y.len());
        for col in y.column_iter() {
            values.extend(col.iter());
        }
        AbundanceMap::new(height, width, y.nrows(), values)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.classes..(index + 1) * self.classes]
    }

    /// `classes×pixels` matrix, one column per pixel.
    pub fn class_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.classes, self.pixels(), &self.values)
    }

    /// Largest violation of nonnegativity and of sum-to-one over all pixels.
    pub fn constraint_violation(&self) -> (f64, f64) {
        let mut neg: f64 = 0.0;
        let mut sum_err: f64 = 0.0;
        for px in self.values.chunks_exact(self.classes) {
            neg = px.iter().fold(neg, |m, v| m.max(-v));
            sum_err = sum_err.max((px.iter().sum::<f64>() - 1.0).abs());
        }
        (neg.max(0.0), sum_err)
    }

    /// Checks nonnegativity (entries ≥ −`neg_tol`) and sum-to-one within `sum_tol`.
    pub fn satisfies_constraints(&self, neg_tol: f64, sum_tol: f64) -> bool {
        let (neg, sum_err) = self.constraint_violation();
        neg <= neg_tol && sum_err <= sum_tol
    }
}

/// `bands×classes` matrix of material signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    pub matrix: DMatrix<f64>,
    pub class_names: Vec<String>,
}

impl EndmemberMatrix {
    pub fn new(matrix: DMatrix<f64>, class_names: Option<Vec<String>>) -> Result<Self> {
        let c = matrix.ncols();
        if c == 0 || matrix.nrows() == 0 {
            return Err(Error::dim("empty endmember matrix"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("endmember matrix".into()));
        }
        if matrix.iter().any(|&v| v < 0.0) {
            return Err(Error::config("endmember entries must be nonnegative"));
        }
        if let Some(j) = (0..c).find(|&j| matrix.column(j).iter().all(|&v| v == 0.0)) {
            return Err(Error::config(format!("endmember column {j} is all zero")));
        }
        let class_names = match class_names {
            Some(n) if n.len() == c => n,
            Some(n) => {
                return Err(Error::dim(format!("{} class names for {c} classes", n.len())))
            }
            None => (0..c).map(|j| format!("class_{j}")).collect(),
        };
        Ok(EndmemberMatrix {
            matrix,
            class_names,
        })
    }

    pub fn bands(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn classes(&self) -> usize {
        self.matrix.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_validation() {
        assert!(HsiCube::new(1, 1, 1, None, vec![0.0]).is_err());
        assert!(HsiCube::new(1, 1, 2, Some(vec![0.5, 0.4]), vec![0.0, 0.0]).is_err());
        assert!(HsiCube::new(1, 1, 2, None, vec![0.0, f64::NAN]).is_err());
        let c = HsiCube::new(1, 2, 2, Some(vec![0.4, 0.5]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.pixel_at(0, 1), &[3.0, 4.0]);
        assert_eq!(c.band_matrix()[(1, 1)], 4.0);
        assert_eq!(HsiCube::from_band_matrix(1, 2, &c.band_matrix()).unwrap().data(), c.data());
    }

    #[test]
    fn endmember_validation() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(EndmemberMatrix::new(m, None).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, 1.0, 0.5]);
        assert!(EndmemberMatrix::new(m, None).is_err());
    }

    #[test]
    fn abundance_constraints() {
        let a = AbundanceMap::new(1, 2, 2, vec![0.5, 0.5, 1.2, -0.2]).unwrap();
        let (neg, sum) = a.constraint_violation();
        assert!((neg - 0.2).abs() < 1e-15);
        assert!(sum < 1e-15);
        assert!(!a.satisfies_constraints(1e-12, 1e-6));
    }
}

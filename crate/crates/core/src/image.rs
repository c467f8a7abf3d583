//! Grayscale images and binary PGM output.

use std::path::Path;

use ndarray::ArrayView1;

use crate::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Values outside `[0, 1]` are clamped; NaN becomes 0.
    pub fn new(rows: usize, cols: usize, values: ArrayView1<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values for a {rows}×{cols} image",
                values.len()
            )));
        }
        let pixels = values
            .iter()
            .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(GrayImage { rows, cols, pixels })
    }

    pub fn blank(rows: usize, cols: usize) -> Self {
        GrayImage {
            rows,
            cols,
            pixels: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.cols + c]
    }

    /// Binary PGM (P5), maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.pixels.iter().map(|&v| (v * 255.0).round() as u8));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::file(path, e))
    }
}

/// Images placed side by side. All must share a height.
pub fn filmstrip(images: &[GrayImage]) -> Result<GrayImage> {
    let Some(first) = images.first() else {
        return Err(Error::Empty("filmstrip of no images".into()));
    };
    let rows = first.rows;
    if images.iter().any(|im| im.rows != rows) {
        return Err(Error::shape("filmstrip images differ in height".to_string()));
    }
    let cols: usize = images.iter().map(|im| im.cols).sum();
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for im in images {
            pixels.extend_from_slice(&im.pixels[r * im.cols..(r + 1) * im.cols]);
        }
    }
    Ok(GrayImage { rows, cols, pixels })
}

/// Images stacked top to bottom. All must share a width.
pub fn stack(images: &[GrayImage]) -> Result<GrayImage> {
    let Some(first) = images.first() else {
        return Err(Error::Empty("stack of no images".into()));
    };
    let cols = first.cols;
    if images.iter().any(|im| im.cols != cols) {
        return Err(Error::shape("stacked images differ in width".to_string()));
    }
    let rows = images.iter().map(|im| im.rows).sum();
    let pixels = images.iter().flat_map(|im| im.pixels.iter().copied()).collect();
    Ok(GrayImage { rows, cols, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pgm_layout() {
        let im = GrayImage::new(2, 3, array![0.0, 0.5, 1.0, -1.0, 2.0, f64::NAN].view()).unwrap();
        let pgm = im.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[11..], &[0, 128, 255, 0, 255, 0]);
    }

    #[test]
    fn filmstrip_and_stack() {
        let a = GrayImage::new(2, 1, array![0.1, 0.2].view()).unwrap();
        let b = GrayImage::new(2, 2, array![0.3, 0.4, 0.5, 0.6].view()).unwrap();
        let strip = filmstrip(&[a.clone(), b]).unwrap();
        assert_eq!((strip.rows(), strip.cols()), (2, 3));
        assert_eq!(strip.pixels(), &[0.1, 0.3, 0.4, 0.2, 0.5, 0.6]);
        let tall = stack(&[a.clone(), a.clone()]).unwrap();
        assert_eq!((tall.rows(), tall.cols()), (4, 1));
        assert!(stack(&[a.clone(), strip]).is_err());
        assert!(filmstrip(&[]).is_err());
        assert!(GrayImage::new(2, 2, array![0.0].view()).is_err());
    }
}

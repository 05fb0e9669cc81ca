//! The raw training object: an n×p value matrix, an observation mask of the
//! same shape, and a fully observed response vector.
//!
//! The mask is authoritative: a `false` entry means the corresponding value
//! slot is meaningless and is never read. Constructors zero those slots so
//! that equal observed data compare equal regardless of what garbage the
//! caller left behind.

use nalgebra::{DMatrix, DVector};

/// Feature rows with a boolean observation mask (`true` = observed) and a
/// fully observed response.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    response: DVector<f64>,
}

impl IncompleteMatrix {
    /// Builds the training object, zeroing every masked value slot.
    ///
    /// # Panics
    /// Panics if the mask shape differs from the value shape or the response
    /// length differs from the row count.
    pub fn new(mut values: DMatrix<f64>, mask: DMatrix<bool>, response: DVector<f64>) -> Self {
        assert_eq!(
            (values.nrows(), values.ncols()),
            (mask.nrows(), mask.ncols()),
            "mask shape must match value shape"
        );
        assert_eq!(
            response.len(),
            values.nrows(),
            "response length must equal the number of rows"
        );
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                if !mask[(i, j)] {
                    values[(i, j)] = 0.0;
                }
            }
        }
        Self { values, mask, response }
    }

    /// Fully observed data.
    pub fn complete(values: DMatrix<f64>, response: DVector<f64>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask, response)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[(row, col)]
    }

    /// Value at `(row, col)`; zero when masked.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    /// Observed column indices of one row, in increasing order.
    pub fn observed_in_row(&self, row: usize) -> Vec<usize> {
        (0..self.n_cols()).filter(|&j| self.mask[(row, j)]).collect()
    }

    /// Missing column indices of one row, in increasing order.
    pub fn missing_in_row(&self, row: usize) -> Vec<usize> {
        (0..self.n_cols()).filter(|&j| !self.mask[(row, j)]).collect()
    }

    /// Fraction of masked cells.
    pub fn missing_rate(&self) -> f64 {
        let total = self.n_rows() * self.n_cols();
        if total == 0 {
            return 0.0;
        }
        let masked = self.mask.iter().filter(|&&m| !m).count();
        masked as f64 / total as f64
    }

    /// True when every cell is observed.
    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }
}

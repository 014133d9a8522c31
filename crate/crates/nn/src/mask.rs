//! Boolean attention masks. Entry (i, j) = true means query token i may
//! attend to key token j. Rows with no allowed entry are rejected at
//! construction so softmax rows are always well defined.

use crate::NnError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape(format!(
                "mask data len {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Self { rows, cols, data };
        m.validate()?;
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self, NnError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn all_true(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![true; rows * cols] }
    }

    /// Lower-triangular causal mask (token i attends to j <= i).
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i).expect("causal mask has a diagonal")
    }

    /// Diagonal-only mask.
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| i == j).expect("identity mask has a diagonal")
    }

    fn validate(&self) -> Result<(), NnError> {
        for i in 0..self.rows {
            if !self.data[i * self.cols..(i + 1) * self.cols].iter().any(|&b| b) {
                return Err(NnError::Mask(format!("mask row {i} has no allowed entry")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

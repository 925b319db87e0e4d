//! The observed panel `X_t`, stored as a `p x n` matrix whose columns are
//! time points. Public accessors use 1-based time indices.

use nalgebra::{DMatrix, DVectorView};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    values: DMatrix<f64>,
}

impl PanelSeries {
    /// Wraps a `p x n` matrix (rows are series, columns are time points).
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(Error::Data("panel must contain at least one series".into()));
        }
        if values.ncols() < 2 {
            return Err(Error::Data(format!(
                "panel must contain at least two time points, got {}",
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Data(format!(
                "non-finite value in series {} at time {}",
                row + 1,
                col + 1
            )));
        }
        Ok(Self { values })
    }

    /// Builds a panel from time-major rows, each holding one observation of
    /// all `p` series.
    pub fn from_time_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Data(format!(
                    "row {} has {} values, expected {}",
                    t + 1,
                    row.len(),
                    p
                )));
            }
        }
        Self::new(DMatrix::from_fn(p, n, |i, t| rows[t][i]))
    }

    /// Number of series `p`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of time points `n`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Observation `X_t` for `1 <= t <= n`.
    pub fn obs(&self, t: usize) -> DVectorView<'_, f64> {
        self.values.column(t - 1)
    }

    /// Copy with every series centred at its sample mean.
    pub fn demeaned(&self) -> Self {
        let mut values = self.values.clone();
        for mut row in values.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        Self { values }
    }

    /// Time-major rows, the inverse of [`PanelSeries::from_time_rows`].
    pub fn to_time_rows(&self) -> Vec<Vec<f64>> {
        self.values
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect()
    }
}

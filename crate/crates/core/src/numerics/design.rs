use crate::numerics::{Matrix, NumericsError};
use crate::scalar::Scalar;

/// Dense covariate matrix with named columns.
///
/// When `has_intercept` is set, column 0 is the constant 1. Interaction
/// expansion never multiplies the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    matrix: Matrix<T>,
    column_names: Vec<String>,
    has_intercept: bool,
}

pub const INTERCEPT: &str = "(intercept)";

impl<T: Scalar> DesignMatrix<T> {
    pub fn new(matrix: Matrix<T>, column_names: Vec<String>, has_intercept: bool) -> Result<Self, NumericsError> {
        if matrix.cols() == 0 {
            return Err(NumericsError::InvalidInput("design needs at least one column".into()));
        }
        if column_names.len() != matrix.cols() {
            return Err(NumericsError::InvalidInput(format!(
                "{} column names for {} columns",
                column_names.len(),
                matrix.cols()
            )));
        }
        if let Some(pos) = matrix.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::InvalidInput(format!(
                "non-finite design entry at row {}, column {}",
                pos / matrix.cols(),
                pos % matrix.cols()
            )));
        }
        if has_intercept && (0..matrix.rows()).any(|i| matrix[(i, 0)] != T::one()) {
            return Err(NumericsError::InvalidInput("intercept column is not constant 1".into()));
        }
        Ok(Self { matrix, column_names, has_intercept })
    }

    /// Builds a design from covariate columns, optionally prepending an intercept.
    pub fn from_columns(names: &[&str], columns: &[&[T]], intercept: bool) -> Result<Self, NumericsError> {
        if names.len() != columns.len() {
            return Err(NumericsError::InvalidInput("names and columns differ in length".into()));
        }
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(NumericsError::InvalidInput("columns differ in length".into()));
        }
        let cols = columns.len() + usize::from(intercept);
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            if intercept {
                values.push(T::one());
            }
            values.extend(columns.iter().map(|c| c[i]));
        }
        let mut column_names = Vec::with_capacity(cols);
        if intercept {
            column_names.push(INTERCEPT.to_string());
        }
        column_names.extend(names.iter().map(|s| s.to_string()));
        Self::new(Matrix::from_row_major(rows, cols, values)?, column_names, intercept)
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.matrix.row(i)
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows()).map(|i| self.matrix[(i, j)]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(idx),
            column_names: self.column_names.clone(),
            has_intercept: self.has_intercept,
        }
    }

    /// Returns a copy with column `j` overwritten by `value` in every row.
    pub fn with_column_fixed(&self, j: usize, value: T) -> Self {
        let mut out = self.clone();
        for i in 0..out.rows() {
            out.matrix[(i, j)] = value;
        }
        out
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Appends every distinct pairwise product of the non-intercept columns.
    pub fn with_pairwise_interactions(&self) -> Self {
        let start = usize::from(self.has_intercept);
        let base = self.cols();
        let pairs: Vec<(usize, usize)> = (start..base).flat_map(|a| (a + 1..base).map(move |b| (a, b))).collect();
        let cols = base + pairs.len();
        let mut values = Vec::with_capacity(self.rows() * cols);
        for i in 0..self.rows() {
            let r = self.row(i);
            values.extend_from_slice(r);
            values.extend(pairs.iter().map(|&(a, b)| r[a] * r[b]));
        }
        let mut names = self.column_names.clone();
        names.extend(pairs.iter().map(|&(a, b)| format!("{}:{}", self.column_names[a], self.column_names[b])));
        Self {
            matrix: Matrix::from_row_major(self.rows(), cols, values)
                .expect("interaction expansion keeps the shape consistent"),
            column_names: names,
            has_intercept: self.has_intercept,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DesignMatrix<f64> {
        DesignMatrix::from_columns(&["a", "b", "c"], &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]], true).unwrap()
    }

    #[test]
    fn intercept_is_prepended() {
        let d = toy();
        assert_eq!(d.cols(), 4);
        assert_eq!(d.row(1), &[1.0, 2.0, 4.0, 6.0]);
        assert_eq!(d.column_names()[0], INTERCEPT);
    }

    #[test]
    fn interactions_cover_distinct_pairs_only() {
        let d = toy().with_pairwise_interactions();
        assert_eq!(d.cols(), 4 + 3);
        assert_eq!(&d.column_names()[4..], &["a:b", "a:c", "b:c"]);
        assert_eq!(&d.row(0)[4..], &[3.0, 5.0, 15.0]);
    }

    #[test]
    fn rejects_non_finite_and_bad_intercept() {
        let bad = DesignMatrix::from_columns(&["a"], &[&[1.0, f64::NAN]], false);
        assert!(matches!(bad, Err(NumericsError::InvalidInput(_))));
        let m = Matrix::from_row_major(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(DesignMatrix::new(m, vec!["x".into()], true).is_err());
    }
}

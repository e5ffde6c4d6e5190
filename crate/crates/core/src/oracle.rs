//! Reference matrix product, written as list functions over rows and columns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{Width, Word};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    ByRows,
    ByCols,
}

/// Dense matrix. `orientation` says whether it is presented as a list of
/// rows or a list of columns; storage is always row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Word>,
    orientation: Orientation,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Matrix, OracleError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != m) {
            return Err(OracleError::Length { left: m, right: r.len() });
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: rows.iter().flatten().map(|&v| Word(v)).collect(),
            orientation: Orientation::ByRows,
        })
    }

    /// `height` is needed when `cols` is empty.
    pub fn from_cols(height: usize, cols: &[Vec<i64>]) -> Result<Matrix, OracleError> {
        if let Some(c) = cols.iter().find(|c| c.len() != height) {
            return Err(OracleError::Length { left: height, right: c.len() });
        }
        let k = cols.len();
        let mut data = vec![Word(0); height * k];
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                data[i * k + j] = Word(v);
            }
        }
        Ok(Matrix {
            rows: height,
            cols: k,
            data,
            orientation: Orientation::ByCols,
        })
    }

    pub fn identity(n: usize) -> Matrix {
        let rows: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| i64::from(i == j)).collect()).collect();
        Matrix::from_rows(&rows).expect("square")
    }

    pub fn zeros(rows: usize, cols: usize, orientation: Orientation) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![Word(0); rows * cols],
            orientation,
        }
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Matrix {
        self.orientation = orientation;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn get(&self, i: usize, j: usize) -> Word {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> Vec<Word> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn col(&self, j: usize) -> Vec<Word> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        (0..self.rows).map(|i| self.row(i).iter().map(|w| w.0).collect()).collect()
    }

    pub fn cols(&self) -> Vec<Vec<i64>> {
        (0..self.cols).map(|j| self.col(j).iter().map(|w| w.0).collect()).collect()
    }

    /// The list-of-lists view named by the orientation tag.
    pub fn lists(&self) -> Vec<Vec<i64>> {
        match self.orientation {
            Orientation::ByRows => self.rows(),
            Orientation::ByCols => self.cols(),
        }
    }

    pub fn fits(&self, width: Width) -> bool {
        self.data.iter().all(|&w| width.contains(w))
    }
}

fn same_len(a: &[Word], b: &[Word]) -> Result<(), OracleError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(OracleError::Length { left: a.len(), right: b.len() })
    }
}

pub fn zipwithmul_ref(r#as: &[Word], bs: &[Word], width: Width) -> Result<Vec<Word>, OracleError> {
    same_len(r#as, bs)?;
    Ok(r#as.iter().zip(bs).map(|(&a, &b)| width.mul(a, b)).collect())
}

pub fn sum_ref(rs: &[Word], width: Width) -> Word {
    rs.iter().rev().fold(Word(0), |acc, &r| width.add(r, acc))
}

pub fn scalarp_ref(r#as: &[Word], bs: &[Word], width: Width) -> Result<Word, OracleError> {
    Ok(sum_ref(&zipwithmul_ref(r#as, bs, width)?, width))
}

pub fn vmmult_ref(ass: &Matrix, bs: &[Word], width: Width) -> Result<Vec<Word>, OracleError> {
    if ass.n_cols() != bs.len() {
        return Err(OracleError::Dimension(format!(
            "rows have {} entries, column has {}",
            ass.n_cols(),
            bs.len()
        )));
    }
    (0..ass.n_rows()).map(|i| scalarp_ref(&ass.row(i), bs, width)).collect()
}

/// Columns of the product, one `vmmult` per column of `bss`.
pub fn mmult_ref(ass: &Matrix, bss: &Matrix, width: Width) -> Result<Matrix, OracleError> {
    if ass.n_cols() != bss.n_rows() {
        return Err(OracleError::Dimension(format!(
            "{}x{} by {}x{}",
            ass.n_rows(),
            ass.n_cols(),
            bss.n_rows(),
            bss.n_cols()
        )));
    }
    let cols = (0..bss.n_cols())
        .map(|j| vmmult_ref(ass, &bss.col(j), width).map(|c| c.iter().map(|w| w.0).collect()))
        .collect::<Result<Vec<Vec<i64>>, _>>()?;
    Matrix::from_cols(ass.n_rows(), &cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: &[i64]) -> Vec<Word> {
        v.iter().map(|&x| Word(x)).collect()
    }

    const W16: Width = Width::DEFAULT;

    #[test]
    fn list_functions() {
        assert_eq!(zipwithmul_ref(&w(&[1, 2]), &w(&[3, 4]), W16).unwrap(), w(&[3, 8]));
        assert_eq!(zipwithmul_ref(&[], &[], W16).unwrap(), vec![]);
        assert_eq!(zipwithmul_ref(&w(&[0, 9]), &w(&[7, 0]), W16).unwrap(), w(&[0, 0]));
        assert!(zipwithmul_ref(&w(&[1]), &[], W16).is_err());
        assert_eq!(sum_ref(&w(&[1, 2, 3]), W16), Word(6));
        assert_eq!(sum_ref(&[], W16), Word(0));
        assert_eq!(sum_ref(&w(&[32767, 1]), W16), Word(-32768));
        assert_eq!(scalarp_ref(&w(&[1, 2, 3]), &w(&[4, 5, 6]), W16).unwrap(), Word(32));
    }

    #[test]
    fn vmmult_small() {
        let id = Matrix::identity(2);
        assert_eq!(vmmult_ref(&id, &w(&[7, 9]), W16).unwrap(), w(&[7, 9]));
        let a = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(vmmult_ref(&a, &w(&[5, 6]), W16).unwrap(), w(&[17, 39]));
        assert!(vmmult_ref(&a, &w(&[5]), W16).is_err());
    }

    #[test]
    fn mmult_two_by_two() {
        let a = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        let b = Matrix::from_cols(2, &[vec![5, 7], vec![6, 8]]).unwrap();
        let c = mmult_ref(&a, &b, W16).unwrap();
        assert_eq!(c.orientation(), Orientation::ByCols);
        assert_eq!(c.lists(), vec![vec![19, 43], vec![22, 50]]);
        assert_eq!(c.rows(), vec![vec![19, 22], vec![43, 50]]);
    }

    #[test]
    fn empty_dimensions_accepted() {
        let a = Matrix::from_rows(&[vec![], vec![]]).unwrap();
        let b = Matrix::from_cols(0, &[vec![], vec![], vec![]]).unwrap();
        let c = mmult_ref(&a, &b, W16).unwrap();
        assert_eq!((c.n_rows(), c.n_cols()), (2, 3));
        assert!(c.cols().iter().flatten().all(|&x| x == 0));
    }
}

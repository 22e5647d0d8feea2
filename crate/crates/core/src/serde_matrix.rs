//! Matrices on the wire: declared shape plus a flat row-major array.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Flat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub(crate) mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Flat {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let flat = Flat::deserialize(d)?;
        if flat.data.len() != flat.rows * flat.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix declared {}x{} but holds {} values",
                flat.rows,
                flat.cols,
                flat.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(flat.rows, flat.cols, &flat.data))
    }
}

pub(crate) mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

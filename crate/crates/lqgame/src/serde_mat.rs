//! Serde adapters that encode matrices as nested row-major arrays and
//! vectors as flat arrays, so JSON configs stay human-readable.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn from_rows<E: DeError>(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, E> {
    if rows.is_empty() {
        return Err(E::custom("matrix must have at least one row"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(E::custom("matrix must have at least one column"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(E::custom("matrix rows must all have the same length"));
    }
    let nrows = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

pub mod mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        from_rows(Vec::<Vec<f64>>::deserialize(d)?)
    }
}

pub mod mat_list {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .into_iter()
            .map(from_rows)
            .collect()
    }
}

pub mod mat_list2 {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[Vec<DMatrix<f64>>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter()
            .map(|per_player| per_player.iter().map(to_rows).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<Vec<DMatrix<f64>>>, D::Error> {
        Vec::<Vec<Vec<Vec<f64>>>>::deserialize(d)?
            .into_iter()
            .map(|per_player| per_player.into_iter().map(from_rows).collect())
            .collect()
    }
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.iter().copied().collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        if data.is_empty() {
            return Err(D::Error::custom("vector must be non-empty"));
        }
        Ok(DVector::from_vec(data))
    }
}

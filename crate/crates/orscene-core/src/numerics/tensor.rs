use serde::{Deserialize, Serialize};

use super::{NumericsError, Result};

/// Dense row-major tensor of 64-bit floats.
///
/// The invariant `product(shape) == data.len()` holds for every constructed
/// value, and public operations reject non-finite results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.ensure_finite("from_vec")?;
        Ok(t)
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(NumericsError::NotScalar(self.shape.clone()))
        }
    }

    /// Interprets the tensor as a matrix: 2-D as-is, 1-D as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            2 => Ok((self.shape[0], self.shape[1])),
            1 => Ok((1, self.shape[0])),
            _ => Err(NumericsError::ShapeMismatch {
                op: "dims2",
                detail: format!("expected matrix or vector, got shape {:?}", self.shape),
            }),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, n) = self.dims2().expect("row() on non-matrix");
        &self.data[i * n..(i + 1) * n]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let (_, n) = self.dims2().expect("at2() on non-matrix");
        self.data[i * n + j]
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(NumericsError::NonFinite { op })
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        let t = Tensor {
            shape: self.shape.clone(),
            data,
        };
        t.ensure_finite("add")?;
        Ok(t)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        let t = Tensor {
            shape: self.shape.clone(),
            data,
        };
        t.ensure_finite("sub")?;
        Ok(t)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        let t = Tensor {
            shape: self.shape.clone(),
            data,
        };
        t.ensure_finite("mul")?;
        Ok(t)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|a| a * c).collect();
        let t = Tensor {
            shape: self.shape.clone(),
            data,
        };
        t.ensure_finite("scale")?;
        Ok(t)
    }

    /// Matrix product. Zero coefficients are skipped, which both speeds up
    /// the sparse attention rows and keeps masked entries from touching the
    /// accumulator at all.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {} vs {}", k, k2),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let t = Tensor {
            shape: vec![m, n],
            data: out,
        };
        t.ensure_finite("matmul")?;
        Ok(t)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row_broadcast(&self, row: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let (rm, rn) = row.dims2()?;
        if rm != 1 || rn != n {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row_broadcast",
                detail: format!("matrix {}x{} vs row {}x{}", m, n, rm, rn),
            });
        }
        let mut out = self.data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += row.data[j];
            }
        }
        let t = Tensor {
            shape: self.shape.clone(),
            data: out,
        };
        t.ensure_finite("add_row_broadcast")?;
        Ok(t)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                op: "concat_rows",
                detail: "no inputs".into(),
            });
        }
        let (_, n) = parts[0].dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pm, pn) = p.dims2()?;
            if pn != n {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts {} vs {}", n, pn),
                });
            }
            rows += pm;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, n],
            data,
        })
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                op: "concat_cols",
                detail: "no inputs".into(),
            });
        }
        let (m, _) = parts[0].dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            let (pm, pn) = p.dims2()?;
            if pm != m {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {} vs {}", m, pm),
                });
            }
            widths.push(pn);
            total += pn;
        }
        let mut data = vec![0.0; m * total];
        for i in 0..m {
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                data[i * total + off..i * total + off + w].copy_from_slice(p.row(i));
                off += w;
            }
        }
        Ok(Tensor {
            shape: vec![m, total],
            data,
        })
    }

    /// Selects rows by index, in order; indices may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(NumericsError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: m,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor {
            shape: vec![indices.len(), n],
            data,
        })
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        if start + len > m {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                len: m,
            });
        }
        Ok(Tensor {
            shape: vec![len, n],
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(NumericsError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_is_noop() {
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = Tensor::eye(3).matmul(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn matmul_shape_algebra() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 4]);
        assert_eq!(a.matmul(&b).unwrap().shape(), &[2, 4]);
        assert!(b.matmul(&a).is_err());
    }

    #[test]
    fn from_vec_rejects_bad_length_and_nan() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2], vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn scale_overflow_surfaces_as_error() {
        let t = Tensor::from_vec(&[1], vec![1e308]).unwrap();
        assert!(matches!(
            t.scale(10.0),
            Err(NumericsError::NonFinite { .. })
        ));
    }

    #[test]
    fn gather_and_concat_round() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = a.gather_rows(&[1, 0, 1]).unwrap();
        assert_eq!(g.data(), &[3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        let c = Tensor::concat_cols(&[&a, &a]).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert_eq!(c.row(1), &[3.0, 4.0, 3.0, 4.0]);
    }
}

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named collection of trainable matrices.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_normal<R: Rng>(&mut self, name: &str, shape: (usize, usize), std: f64, rng: &mut R) -> ParamId {
        let normal = Normal::new(0.0, std).expect("std must be finite and positive");
        let value = Array2::from_shape_simple_fn(shape, || normal.sample(rng));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: &str, shape: (usize, usize)) -> ParamId {
        self.add(name, Array2::zeros(shape))
    }

    pub fn add_ones(&mut self, name: &str, shape: (usize, usize)) -> ParamId {
        self.add(name, Array2::ones(shape))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Addresses a scalar by flat index across all matrices.
    pub fn locate(&self, mut flat: usize) -> (ParamId, (usize, usize)) {
        for (i, v) in self.values.iter().enumerate() {
            if flat < v.len() {
                return (ParamId(i), (flat / v.ncols(), flat % v.ncols()));
            }
            flat -= v.len();
        }
        panic!("flat index out of range");
    }

    /// Little-endian f64 blob: for each matrix, rows and cols as u64 followed by the data.
    pub fn write_blob<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&(v.nrows() as u64).to_le_bytes())?;
            w.write_all(&(v.ncols() as u64).to_le_bytes())?;
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads values into an already-initialized store of identical layout.
    pub fn read_blob<R: Read>(&mut self, mut r: R) -> Result<(), NnError> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64, NnError> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let count = next(&mut r)? as usize;
        if count != self.values.len() {
            return Err(NnError::Layout(format!("blob has {count} matrices, model expects {}", self.values.len())));
        }
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            let rows = next(&mut r)? as usize;
            let cols = next(&mut r)? as usize;
            if (rows, cols) != v.dim() {
                return Err(NnError::Layout(format!("{name}: blob shape {rows}x{cols}, model {:?}", v.dim())));
            }
            for x in v.iter_mut() {
                *x = f64::from_bits(next(&mut r)?);
            }
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    values: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { values: store.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        self.values[id.0] += g;
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.values {
            *v *= k;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn flat(&self, flat: usize) -> f64 {
        let mut rem = flat;
        for v in &self.values {
            if rem < v.len() {
                return v[[rem / v.ncols(), rem % v.ncols()]];
            }
            rem -= v.len();
        }
        panic!("flat index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blob_round_trip_restores_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::default();
        a.add_normal("w", (3, 4), 1.0, &mut rng);
        a.add_normal("b", (1, 4), 1.0, &mut rng);
        let mut buf = Vec::new();
        a.write_blob(&mut buf).unwrap();

        let mut b = ParamStore::default();
        b.add_zeros("w", (3, 4));
        b.add_zeros("b", (1, 4));
        b.read_blob(buf.as_slice()).unwrap();
        for id in a.ids() {
            assert_eq!(a.get(id), b.get(id));
        }

        let mut wrong = ParamStore::default();
        wrong.add_zeros("w", (4, 3));
        wrong.add_zeros("b", (1, 4));
        assert!(wrong.read_blob(buf.as_slice()).is_err());
    }
}

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Handle to one parameter tensor inside a flat buffer.
///
/// Every tensor is viewed as a `rows x cols` matrix (biases have one row),
/// so the same handle slices the parameter buffer, the gradient buffer and
/// the optimizer moments alike.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub index: usize,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamId {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.offset..self.offset + self.len()]
    }

    pub fn slice_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.offset..self.offset + self.len()]
    }

    pub fn mat<'a>(&self, buf: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), self.slice(buf)).expect("param shape")
    }

    pub fn mat_mut<'a>(&self, buf: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        let (r, c) = (self.rows, self.cols);
        ArrayViewMut2::from_shape((r, c), self.slice_mut(buf)).expect("param shape")
    }

    pub fn vec<'a>(&self, buf: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(self.slice(buf))
    }

    pub fn vec_mut<'a>(&self, buf: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(self.slice_mut(buf))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All trainable values of a model in one contiguous vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    ids: Vec<ParamId>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor of logical `shape`, viewed as `shape[0] x rest`
    /// (a 1-D shape becomes a single row), filled uniformly in `±bound`.
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let (rows, cols) = match shape {
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
            [] => (1, 1),
        };
        let id = ParamId {
            index: self.specs.len(),
            offset: self.data.len(),
            rows,
            cols,
        };
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: id.offset,
            len: id.len(),
        });
        self.ids.push(id);
        self.data
            .extend((0..id.len()).map(|_| rng.random_range(-bound..=bound)));
        id
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.ids[i])
    }

    /// Replaces all values; the length must match.
    pub fn load_flat(&mut self, values: Vec<f64>) -> Result<(), String> {
        if values.len() != self.data.len() {
            return Err(format!(
                "expected {} parameters, got {}",
                self.data.len(),
                values.len()
            ));
        }
        self.data = values;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn views_alias_flat_buffer() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamStore::new();
        let w = p.add("w", &[3, 2, 4], 0.5, &mut rng);
        let b = p.add("b", &[3], 0.5, &mut rng);
        assert_eq!((w.rows, w.cols), (3, 8));
        assert_eq!(b.offset, 24);
        w.mat_mut(p.flat_mut())[[2, 7]] = 9.0;
        assert_eq!(p.flat()[23], 9.0);
        p.flat_mut()[24] = -1.0;
        assert_eq!(b.vec(p.flat())[0], -1.0);
        assert!(p.flat()[..23].iter().all(|v| v.abs() <= 0.5));
        assert_eq!(p.find("b"), Some(b));
    }
}

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

use super::array::Tensor;
use super::graph::{Graph, NodeId};
use super::real::Real;

const MAGIC: &[u8; 4] = b"AVFP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An ordered, named collection of model parameters.
///
/// [`ParamSet::bind`] adds every tensor to a graph as a leaf, in order, so
/// the returned node list can be indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T: Real = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Pushes a tensor drawn from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn push_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
        self.push(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn bind<'a>(&'a self, graph: &mut Graph<'a, T>) -> Vec<NodeId> {
        self.tensors.iter().map(|t| graph.leaf(t)).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every tensor with the one in `other`, which must have the
    /// same names and shapes in the same order.
    pub fn assign_from<U: Real>(&mut self, other: &ParamSet<U>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::shape(
                "ParamSet::assign_from",
                format!("{} tensors {:?}", self.names.len(), self.names.first()),
                format!("{} tensors {:?}", other.names.len(), other.names.first()),
            ));
        }
        for ((name, mine), theirs) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::shape(
                    "ParamSet::assign_from",
                    format!("{name} {:?}", mine.shape()),
                    format!("{:?}", theirs.shape()),
                ));
            }
        }
        self.tensors = other.tensors.iter().map(Tensor::cast).collect();
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "parameter file",
            reason,
        };
        let mut exact = |buf: &mut [u8]| r.read_exact(buf).map_err(|e| bad(format!("truncated: {e}")));
        let mut magic = [0u8; 4];
        exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        let mut long = [0u8; 8];
        exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            exact(&mut word)?;
            let mut name = vec![0u8; u32::from_le_bytes(word) as usize];
            exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| bad(format!("tensor name is not UTF-8: {e}")))?;
            exact(&mut word)?;
            let rank = u32::from_le_bytes(word) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                exact(&mut long)?;
                shape.push(u64::from_le_bytes(long) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                exact(&mut long)?;
                data.push(T::lit(f64::from_le_bytes(long)));
            }
            let tensor = Tensor::new(shape, data).map_err(|e| bad(format!("tensor {name}: {e}")))?;
            set.push(name, tensor);
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binary_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::<f64>::new();
        p.push_uniform("w", &[3, 4], 3, &mut rng);
        p.push_uniform("b", &[4], 3, &mut rng);
        p.push("s", Tensor::scalar(-0.125));
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"AVFP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        let back = ParamSet::<f64>::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let mut p = ParamSet::<f64>::new();
        p.push("w", Tensor::vector(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert!(ParamSet::<f64>::read_from(&buf[..buf.len() - 3]).is_err());
        buf[0] = b'X';
        assert!(ParamSet::<f64>::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ParamSet::<f64>::new();
        let id = p.push_uniform("w", &[64, 16], 64, &mut rng);
        assert!(p.get(id).data().iter().all(|v| v.abs() <= 0.125));
    }

    #[test]
    fn assign_checks_layout() {
        let mut a = ParamSet::<f64>::new();
        a.push("w", Tensor::vector(vec![0.0; 2]));
        let mut b = ParamSet::<f32>::new();
        b.push("w", Tensor::vector(vec![1.5, 2.5]));
        a.assign_from(&b).unwrap();
        assert_eq!(a.tensors()[0].data(), &[1.5, 2.5]);
        let mut c = ParamSet::<f64>::new();
        c.push("v", Tensor::vector(vec![0.0; 2]));
        assert!(a.assign_from(&c).is_err());
    }
}

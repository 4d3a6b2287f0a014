use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::{seeded_stream, uniform};
use crate::scalar::Scalar;
use crate::ssm::inverse_softplus;
use crate::tensor::Tensor;

/// Index of a parameter within a [`ParamLayout`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±bound`.
    Uniform(f64),
    Const(f64),
    /// Row-wise `ln(n + 1)` over the trailing axis, so that `A = −exp(·) = −(n + 1)`.
    StateLog,
    /// Inverse softplus of a uniform step in `[lo, hi]`.
    StepBias {
        lo: f64,
        hi: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of named parameters; the order defines checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

/// Row of a parameter-count table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub group: String,
    pub count: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate parameter {name}");
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    /// Totals keyed by `key(name)`, in first-seen order.
    pub fn count_by(&self, key: impl Fn(&str) -> String) -> Vec<ParamCount> {
        let mut rows: Vec<ParamCount> = Vec::new();
        for s in &self.specs {
            let g = key(&s.name);
            match rows.iter_mut().find(|r| r.group == g) {
                Some(r) => r.count += s.numel(),
                None => rows.push(ParamCount {
                    group: g,
                    count: s.numel(),
                }),
            }
        }
        rows
    }

    /// Draw initial values. Each parameter uses its own RNG stream so that
    /// adding a parameter does not perturb the others.
    pub fn materialize<T: Scalar>(&self, seed: u64) -> Vec<Tensor<T>> {
        self.specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = seeded_stream(seed, i as u64);
                let last = *s.shape.last().unwrap_or(&1);
                Tensor::from_fn(&s.shape, |j| {
                    let v = match s.init {
                        Init::Uniform(b) => uniform(&mut rng, -b, b),
                        Init::Const(c) => c,
                        Init::StateLog => num_traits::Float::ln((j % last + 1) as f64),
                        Init::StepBias { lo, hi } => inverse_softplus(uniform(&mut rng, lo, hi)),
                    };
                    T::of_f64(v)
                })
            })
            .collect()
    }
}

//! Dense layers, MLPs and an LSTM cell expressed as tape operations.

use kvae_autodiff::{Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamStore};

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(&[fan_in, fan_out], data).expect("positive layer sizes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Linear { name: name.into(), input, output }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, trainable: bool) -> Result<()> {
        store.insert(&self.w(), fan_in_uniform(rng, self.input, self.output), trainable)?;
        store.insert(&self.b(), Tensor::zeros(&[1, self.output]), trainable)
    }

    pub fn param_names(&self) -> Vec<String> {
        vec![self.w(), self.b()]
    }

    /// `x` is `N x input`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.matmul(&p.var(&self.w())?)?.add_row(&p.var(&self.b())?)?)
    }
}

/// Relu hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(name: &str, sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{name}.l{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, trainable: bool) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.register(store, rng, trainable))
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers.iter().flat_map(Linear::param_names).collect()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

/// Gate order in the packed weights: input, forget, output, candidate.
impl Lstm {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        Lstm { name: name.into(), input, hidden }
    }

    fn names(&self) -> [String; 3] {
        [format!("{}.wx", self.name), format!("{}.wh", self.name), format!("{}.b", self.name)]
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, trainable: bool) -> Result<()> {
        let [wx, wh, b] = self.names();
        let h = self.hidden;
        store.insert(&wx, fan_in_uniform(rng, self.input, 4 * h), trainable)?;
        store.insert(&wh, fan_in_uniform(rng, h, 4 * h), trainable)?;
        let mut bias = Tensor::zeros(&[1, 4 * h]);
        // start with the forget gate open
        bias.data_mut()[h..2 * h].fill(1.0);
        store.insert(&b, bias, trainable)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.names().to_vec()
    }

    /// One step on a `1 x input` row; returns the new `(h, c)`.
    pub fn step<'t>(&self, p: &Bound<'t>, x: Var<'t>, h: Var<'t>, c: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let [wx, wh, b] = self.names();
        let n = self.hidden;
        let gates = x.matmul(&p.var(&wx)?)?.add(&h.matmul(&p.var(&wh)?)?)?.add(&p.var(&b)?)?;
        let i = gates.slice_cols(0, n)?.sigmoid()?;
        let f = gates.slice_cols(n, n)?.sigmoid()?;
        let o = gates.slice_cols(2 * n, n)?.sigmoid()?;
        let g = gates.slice_cols(3 * n, n)?.tanh()?;
        let c = f.mul(&c)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh()?)?;
        Ok((h, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kvae_autodiff::{grad_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fan_in_bounds_hold() {
        let w = fan_in_uniform(&mut ChaCha8Rng::seed_from_u64(0), 16, 8);
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn zero_weights_give_bias_output() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new("m", &[3, 4, 2]);
        mlp.register(&mut store, &mut ChaCha8Rng::seed_from_u64(1), true).unwrap();
        for p in store.iter_mut() {
            p.value = p.value.map(|_| 0.0);
        }
        store.value_mut("m.l1.b").unwrap().data_mut().copy_from_slice(&[0.5, -2.0]);
        let tape = Tape::new();
        let bound = store.bind(&tape).unwrap();
        let x = tape.constant(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap()).unwrap();
        let y = mlp.forward(&bound, x).unwrap().value();
        assert_eq!(y.data(), &[0.5, -2.0, 0.5, -2.0]);
    }

    #[test]
    fn lstm_unroll_gradient_matches_finite_differences() {
        let cell = Lstm::new("c", 2, 3);
        let mut store = ParamStore::new();
        cell.register(&mut store, &mut ChaCha8Rng::seed_from_u64(2), true).unwrap();
        let xs = Tensor::matrix(3, 2, vec![-1.0, 0.5, 0.0, 0.2, 1.0, -0.7]).unwrap();
        let err = grad_check(
            |tape, x| {
                let bound = store.bind_frozen(tape).unwrap();
                let mut h = tape.constant(Tensor::zeros(&[1, 3]))?;
                let mut c = tape.constant(Tensor::zeros(&[1, 3]))?;
                for t in 0..3 {
                    (h, c) = cell.step(&bound, x.row(t)?, h, c).unwrap();
                }
                h.sum()
            },
            &xs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }
}

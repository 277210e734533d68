//! Parameters, dense layers, and the Adam optimizer.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Array, Tape, Var};
use crate::container::Container;
use crate::error::{Error, Result};

/// Deterministic RNG used throughout training and data generation.
pub type SeededRng = ChaCha8Rng;

/// Slope of every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named learnable matrices. Values are reference counted so binding them to
/// a tape does not copy.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Rc<Array>>,
}

/// Parameters of a store recorded as leaves of one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Binds explicit variables, in parameter order, e.g. inputs of a gradient check.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(Rc::clone(v))).collect(),
        }
    }

    /// Copies of all values in parameter order.
    pub fn arrays(&self) -> Vec<Array> {
        self.values.iter().map(|v| (**v).clone()).collect()
    }

    pub fn zeros_like(&self) -> Vec<Array> {
        self.values.iter().map(|v| Array::zeros(v.dim())).collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    /// Replaces every value from `arrays`; names and shapes must match exactly.
    pub fn load(&mut self, arrays: &BTreeMap<String, Array>) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.values.iter_mut()) {
            let a = arrays
                .get(name)
                .ok_or_else(|| Error::NotFound(format!("parameter {name}")))?;
            if a.dim() != slot.dim() {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    a.dim(),
                    slot.dim()
                )));
            }
            *slot = Rc::new(a.clone());
        }
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for v in &mut self.values {
            Rc::make_mut(v).fill(0.0);
        }
    }
}

impl ParamStore {
    /// Writes every parameter as `{prefix}{name}`.
    pub fn save_into(&self, c: &mut Container, prefix: &str) {
        for (name, v) in self.named() {
            c.insert_f64(format!("{prefix}{name}"), v);
        }
    }

    pub fn load_from(&mut self, c: &Container, prefix: &str) -> Result<()> {
        self.load(&c.matrices_with_prefix(prefix)?)
    }
}

/// Exact position of a [`SeededRng`] so training can resume mid-stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &SeededRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> SeededRng {
        let mut rng = SeededRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    pub fn save_into(&self, c: &mut Container, name: &str) {
        c.insert_bytes(format!("{name}.seed"), &self.seed);
        let pos = [
            self.stream,
            self.word_pos as u64,
            (self.word_pos >> 64) as u64,
        ];
        c.insert_u64(format!("{name}.pos"), &pos);
    }

    pub fn load_from(c: &Container, name: &str) -> Result<Self> {
        let bytes = c.get_bytes(&format!("{name}.seed"))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::invalid(format!("{name}.seed must hold 32 bytes")))?;
        let pos = c.get_u64(&format!("{name}.pos"))?;
        if pos.len() != 3 {
            return Err(Error::invalid(format!("{name}.pos must hold 3 words")));
        }
        Ok(Self {
            seed,
            stream: pos[0],
            word_pos: pos[1] as u128 | (pos[2] as u128) << 64,
        })
    }
}

/// Uniform initialisation in ±1/√fan_in.
pub fn uniform_init(rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize) -> Array {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Affine map `x W + b` applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(rng, in_dim, out_dim, in_dim),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                uniform_init(rng, 1, out_dim, in_dim),
            )
        });
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let y = x.matmul(p.var(self.weight));
        match self.bias {
            Some(b) => y + p.var(b),
            None => y,
        }
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).fill(0.0);
        if let Some(b) = self.bias {
            store.get_mut(b).fill(0.0);
        }
    }
}

/// Stack of linear layers with leaky ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Whether the last layer is also followed by the activation.
    pub activate_last: bool,
}

impl Mlp {
    /// `widths` lists input width followed by each layer's output width.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        widths: &[usize],
        activate_last: bool,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self {
            layers,
            activate_last,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, mut x: Var<'t>) -> Var<'t> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x);
            if i + 1 < n || self.activate_last {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        x
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }
}

/// Adam with the usual moment defaults.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = &grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let w = store.get_mut(id);
            ndarray::Zip::from(w)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Adds `src` into `acc` elementwise.
pub fn accumulate(acc: &mut [Array], src: &[Array]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

pub fn scale_all(grads: &mut [Array], factor: f64) {
    for g in grads {
        g.mapv_inplace(|x| x * factor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Array::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let loss = p.var(id).square().sum();
            let g = tape.grad_values(loss, p.vars());
            drop(p);
            opt.step(&mut store, &g);
        }
        assert!(store.get(id).iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = SeededRng::seed_from_u64(9);
        let _: [u64; 5] = rng.random();
        let state = RngState::capture(&rng);
        let mut c = Container::new();
        state.save_into(&mut c, "rng");
        let mut restored = RngState::load_from(&c, "rng").unwrap().restore();
        let a: [u64; 4] = rng.random();
        let b: [u64; 4] = restored.random();
        assert_eq!(a, b);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut rng = SeededRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        Linear::new(&mut store, &mut rng, "l", 2, 3, true);
        let mut map = BTreeMap::new();
        map.insert("l.weight".to_string(), Array::zeros((3, 2)));
        map.insert("l.bias".to_string(), Array::zeros((1, 3)));
        assert!(matches!(store.load(&map), Err(Error::InvalidArgument(_))));
    }
}

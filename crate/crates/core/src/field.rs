//! Positional encoding and the radiance-field MLP.
//!
//! Layout of the network, all weights stored row-major as `fan_in x fan_out`
//! in one flat vector:
//!
//! ```text
//! γ(x) ─ position.0 ─ act ─ … ─ position.{L-1} ─ act ─┬─ density ─ softplus ─ σ
//!                                                     └─┐
//!                                        γ(d) ──── color.0 ─ act ─ color.1 ─ sigmoid ─ c
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vec3;
use crate::scalar::Real;
use crate::tape::{sigmoid_scalar, softplus_scalar, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("non-finite value in parameter {path}[{index}]")]
    NonFinite { path: String, index: usize },
    #[error("parameter vector has length {got}, layout needs {expected}")]
    Length { expected: usize, got: usize },
    #[error("invalid field configuration: {0}")]
    Config(String),
}

/// Output width of [`encode`] for `l` frequencies.
pub fn encoded_len(l: usize) -> usize {
    3 + 6 * l
}

/// `[x, sin(2⁰x), cos(2⁰x), …, sin(2^{L-1}x), cos(2^{L-1}x)]`, componentwise.
pub fn encode<T: Real>(x: &Vec3<T>, l: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(encoded_len(l));
    encode_into(x, l, &mut out);
    out
}

pub fn encode_into<T: Real>(x: &Vec3<T>, l: usize, out: &mut Vec<T>) {
    out.extend_from_slice(&x.0);
    let mut f = T::one();
    for _ in 0..l {
        out.extend(x.0.iter().map(|&c| (f * c).sin()));
        out.extend(x.0.iter().map(|&c| (f * c).cos()));
        f = f + f;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    Softplus,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Softplus => softplus_scalar(x),
        }
    }

    fn tape<T: Real>(self, tape: &mut Tape<T>, v: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Softplus => tape.softplus(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Hidden layers in the position branch.
    pub layers: usize,
    pub hidden: usize,
    pub color_hidden: usize,
    pub freq_position: usize,
    pub freq_direction: usize,
    pub activation: Activation,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { layers: 4, hidden: 64, color_hidden: 32, freq_position: 6, freq_direction: 2, activation: Activation::Softplus }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.layers == 0 || self.hidden == 0 || self.color_hidden == 0 {
            return Err(FieldError::Config("layers, hidden and color_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Named blocks `(path, offset, rows, cols)` of the flat parameter vector.
    pub fn layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut add = |path: String, rows: usize, cols: usize| {
            blocks.push(ParamBlock { path, offset, rows, cols });
            offset += rows * cols;
        };
        let mut fan_in = encoded_len(self.freq_position);
        for i in 0..self.layers {
            add(format!("position.{i}.weight"), fan_in, self.hidden);
            add(format!("position.{i}.bias"), 1, self.hidden);
            fan_in = self.hidden;
        }
        add("density.weight".into(), self.hidden, 1);
        add("density.bias".into(), 1, 1);
        add("color.0.weight".into(), self.hidden + encoded_len(self.freq_direction), self.color_hidden);
        add("color.0.bias".into(), 1, self.color_hidden);
        add("color.1.weight".into(), self.color_hidden, 3);
        add("color.1.bias".into(), 1, 3);
        blocks
    }

    pub fn num_params(&self) -> usize {
        self.layout().last().map(|b| b.offset + b.rows * b.cols).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub path: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Point-wise access to a density and color field along one ray direction.
pub trait RadianceField<T: Real>: Sync {
    /// Densities and colors at `points`, all viewed along `direction`.
    fn query(&self, points: &[Vec3<T>], direction: &Vec3<T>) -> (Vec<T>, Vec<[T; 3]>);
}

/// Validated MLP parameters; every value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T> {
    config: FieldConfig,
    layout: Vec<ParamBlock>,
    flat: Vec<T>,
}

impl<T: Real> FieldParams<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = vec![T::zero(); config.num_params()];
        for b in &layout {
            if b.path.ends_with("weight") {
                let limit = (6.0 / (b.rows + b.cols) as f64).sqrt();
                for v in &mut flat[b.offset..b.offset + b.len()] {
                    *v = T::lit(rng.random_range(-limit..limit));
                }
            }
        }
        Ok(Self { config, layout, flat })
    }

    /// All-zero parameters.
    pub fn zeros(config: FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let n = config.num_params();
        Self::from_flat(config, vec![T::zero(); n])
    }

    pub fn from_flat(config: FieldConfig, flat: Vec<T>) -> Result<Self, FieldError> {
        config.validate()?;
        let layout = config.layout();
        let expected = config.num_params();
        if flat.len() != expected {
            return Err(FieldError::Length { expected, got: flat.len() });
        }
        let p = Self { config, layout, flat };
        p.check_finite()?;
        Ok(p)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn flat(&self) -> &[T] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<T> {
        self.flat
    }

    pub fn block(&self, path: &str) -> Option<&ParamBlock> {
        self.layout.iter().find(|b| b.path == path)
    }

    /// Replaces the parameters, rejecting non-finite values.
    pub fn set_flat(&mut self, flat: Vec<T>) -> Result<(), FieldError> {
        let next = Self::from_flat(self.config.clone(), flat)?;
        *self = next;
        Ok(())
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        for b in &self.layout {
            if let Some(i) = self.flat[b.offset..b.offset + b.len()].iter().position(|v| !v.is_finite()) {
                return Err(FieldError::NonFinite { path: b.path.clone(), index: i });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> FieldParams<U> {
        FieldParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            flat: self.flat.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    fn slice(&self, i: usize) -> &[T] {
        let b = &self.layout[i];
        &self.flat[b.offset..b.offset + b.len()]
    }

    /// Color in `[0,1]³` and density `≥ 0` at one point.
    pub fn evaluate(&self, x: &Vec3<T>, d: &Vec3<T>) -> Result<([T; 3], T), FieldError> {
        self.check_finite()?;
        let (s, c) = self.query(std::slice::from_ref(x), d);
        Ok((c[0], s[0]))
    }

    /// Forward pass over pre-encoded rows: `enc_x` is `n x (3+6L_x)` and
    /// `enc_d` is `n x (3+6L_d)`.
    pub fn forward_encoded(&self, n: usize, enc_x: &[T], enc_d: &[T]) -> (Vec<T>, Vec<[T; 3]>) {
        let cfg = &self.config;
        let act = cfg.activation;
        let dx = encoded_len(cfg.freq_position);
        let dd = encoded_len(cfg.freq_direction);
        assert_eq!(enc_x.len(), n * dx);
        assert_eq!(enc_d.len(), n * dd);

        let dense = |input: &[T], fan_in: usize, w: &[T], b: &[T], fan_out: usize, beta: T, out: &mut Vec<T>| {
            if beta == T::zero() {
                out.clear();
                out.extend((0..n).flat_map(|_| b.iter().copied()));
            }
            T::gemm(n, fan_in, fan_out, input, (fan_in as isize, 1), w, (fan_out as isize, 1), T::one(), out);
        };

        let mut h = Vec::new();
        let mut next = Vec::new();
        let mut fan_in = dx;
        let mut input: &[T] = enc_x;
        for l in 0..cfg.layers {
            dense(input, fan_in, self.slice(2 * l), self.slice(2 * l + 1), cfg.hidden, T::zero(), &mut next);
            next.iter_mut().for_each(|v| *v = act.apply(*v));
            std::mem::swap(&mut h, &mut next);
            input = &h;
            fan_in = cfg.hidden;
        }
        let base = 2 * cfg.layers;
        let mut sigma = Vec::new();
        dense(&h, cfg.hidden, self.slice(base), self.slice(base + 1), 1, T::zero(), &mut sigma);
        sigma.iter_mut().for_each(|v| *v = softplus_scalar(*v));

        let w0 = self.slice(base + 2);
        let (w0h, w0d) = w0.split_at(cfg.hidden * cfg.color_hidden);
        let mut c0 = Vec::new();
        dense(&h, cfg.hidden, w0h, self.slice(base + 3), cfg.color_hidden, T::zero(), &mut c0);
        dense(enc_d, dd, w0d, &[], cfg.color_hidden, T::one(), &mut c0);
        c0.iter_mut().for_each(|v| *v = act.apply(*v));
        let mut rgb = Vec::new();
        dense(&c0, cfg.color_hidden, self.slice(base + 4), self.slice(base + 5), 3, T::zero(), &mut rgb);
        let colors = rgb
            .chunks_exact(3)
            .map(|c| [sigmoid_scalar(c[0]), sigmoid_scalar(c[1]), sigmoid_scalar(c[2])])
            .collect();
        (sigma, colors)
    }

    /// Records the forward pass on `tape`; returns `(σ: n x 1, rgb: n x 3)`.
    ///
    /// `params` must be this field's flat vector (or one of equal layout),
    /// so that gradients land at the matching offsets.
    pub fn forward_tape(&self, tape: &mut Tape<T>, params: &[T], enc_x: Var, enc_d: Var) -> (Var, Var) {
        let cfg = &self.config;
        let act = cfg.activation;
        let blk = |i: usize| &self.layout[i];
        let mut h = enc_x;
        for l in 0..cfg.layers {
            let (w, b) = (blk(2 * l), blk(2 * l + 1));
            let wv = tape.param(params, w.offset, w.rows, w.cols);
            let bv = tape.param(params, b.offset, 1, b.cols);
            let z = tape.matmul(h, wv);
            let z = tape.add_row(z, bv);
            h = act.tape(tape, z);
        }
        let base = 2 * cfg.layers;
        let (w, b) = (blk(base), blk(base + 1));
        let wv = tape.param(params, w.offset, w.rows, w.cols);
        let bv = tape.param(params, b.offset, 1, 1);
        let s = tape.matmul(h, wv);
        let s = tape.add_row(s, bv);
        let sigma = tape.softplus(s);

        let (w, b) = (blk(base + 2), blk(base + 3));
        let wh = tape.param(params, w.offset, cfg.hidden, w.cols);
        let wd = tape.param(params, w.offset + cfg.hidden * w.cols, w.rows - cfg.hidden, w.cols);
        let bv = tape.param(params, b.offset, 1, b.cols);
        let a = tape.matmul(h, wh);
        let d = tape.matmul(enc_d, wd);
        let z = tape.add(a, d);
        let z = tape.add_row(z, bv);
        let c0 = act.tape(tape, z);
        let (w, b) = (blk(base + 4), blk(base + 5));
        let wv = tape.param(params, w.offset, w.rows, w.cols);
        let bv = tape.param(params, b.offset, 1, 3);
        let z = tape.matmul(c0, wv);
        let z = tape.add_row(z, bv);
        let rgb = tape.sigmoid(z);
        (sigma, rgb)
    }
}

impl<T: Real> RadianceField<T> for FieldParams<T> {
    fn query(&self, points: &[Vec3<T>], direction: &Vec3<T>) -> (Vec<T>, Vec<[T; 3]>) {
        let cfg = &self.config;
        let mut ex = Vec::with_capacity(points.len() * encoded_len(cfg.freq_position));
        for p in points {
            encode_into(p, cfg.freq_position, &mut ex);
        }
        let one = encode(direction, cfg.freq_direction);
        let ed: Vec<T> = (0..points.len()).flat_map(|_| one.iter().copied()).collect();
        self.forward_encoded(points.len(), &ex, &ed)
    }
}

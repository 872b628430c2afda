//! Multi-layer perceptron with ReLU hidden layers, inverted dropout and
//! per-class sigmoid outputs, trained by manual backpropagation.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ScoreMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// Network parameters; the last layer produces the class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .last()
            .expect("at least one layer")
            .weights
            .ncols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.ncols())
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Flat mutable view over every parameter, layer by layer, weights
    /// before biases.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(&mut f);
            l.bias.iter_mut().for_each(&mut f);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

/// Uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, zero biases.
pub fn init_params(input: usize, hidden: &[usize], output: usize, seed: u64) -> Result<MlpParams> {
    if input == 0 || output == 0 || hidden.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "network dimensions must be positive (input {input}, hidden {hidden:?}, output {output})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    let layers = dims
        .windows(2)
        .map(|w| {
            let limit = (6.0 / w[0] as f64).sqrt();
            let weights =
                Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-limit..=limit));
            Dense {
                weights,
                bias: Array1::zeros(w[1]),
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverted-dropout masks for each hidden layer: entries are `0` or
/// `1 / (1 - rate)`.
pub fn dropout_masks<R: Rng>(
    rng: &mut R,
    batch: usize,
    hidden: &[usize],
    rate: f64,
) -> Vec<Array2<f64>> {
    let keep = 1.0 / (1.0 - rate);
    hidden
        .iter()
        .map(|&h| {
            Array2::from_shape_simple_fn((batch, h), || {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
        })
        .collect()
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
    masks: Option<Vec<Array2<f64>>>,
    scores: Array2<f64>,
    dims: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    /// Post-dropout hidden activations of layer `k`.
    pub fn hidden(&self, k: usize) -> &Array2<f64> {
        &self.inputs[k + 1]
    }

    /// Pre-activation of hidden layer `k`.
    pub fn pre_activation(&self, k: usize) -> &Array2<f64> {
        &self.pre[k]
    }
}

pub fn forward(
    p: &MlpParams,
    x: ArrayView2<'_, f64>,
    masks: Option<&[Array2<f64>]>,
) -> Result<(ScoreMatrix, ForwardCache)> {
    if x.ncols() != p.input_dim() {
        return Err(Error::Shape(format!(
            "feature width {} does not match network input {}",
            x.ncols(),
            p.input_dim()
        )));
    }
    let n_hidden = p.layers.len() - 1;
    if let Some(m) = masks {
        if m.len() != n_hidden
            || m.iter()
                .zip(&p.layers)
                .any(|(m, l)| m.dim() != (x.nrows(), l.weights.ncols()))
        {
            return Err(Error::Shape(
                "dropout masks do not match the network".into(),
            ));
        }
    }
    let mut inputs = Vec::with_capacity(p.layers.len());
    let mut pre = Vec::with_capacity(n_hidden);
    let mut current = x.to_owned();
    for (k, layer) in p.layers.iter().enumerate() {
        let mut z = current.dot(&layer.weights);
        z += &layer.bias;
        inputs.push(current);
        if k < n_hidden {
            let mut a = z.mapv(|v| v.max(0.0));
            if let Some(m) = masks {
                a *= &m[k];
            }
            pre.push(z);
            current = a;
        } else {
            current = z.mapv(sigmoid);
        }
    }
    let cache = ForwardCache {
        inputs,
        pre,
        masks: masks.map(|m| m.to_vec()),
        scores: current.clone(),
        dims: p.layers.iter().map(|l| l.weights.dim()).collect(),
    };
    Ok((ScoreMatrix::new(current)?, cache))
}

/// Scores only, without dropout.
pub fn predict(p: &MlpParams, x: ArrayView2<'_, f64>) -> Result<ScoreMatrix> {
    Ok(forward(p, x, None)?.0)
}

/// Reverse-mode gradients of a loss given its derivative with respect to
/// the scores.
pub fn backward(p: &MlpParams, cache: &ForwardCache, d_scores: &Array2<f64>) -> Result<MlpParams> {
    let dims: Vec<(usize, usize)> = p.layers.iter().map(|l| l.weights.dim()).collect();
    if dims != cache.dims {
        return Err(Error::Shape(
            "forward cache was produced by a network of a different shape".into(),
        ));
    }
    if d_scores.dim() != cache.scores.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient is {:?}, scores are {:?}",
            d_scores.dim(),
            cache.scores.dim()
        )));
    }
    let mut grads = p.zeros_like();
    let mut delta = Zip::from(d_scores)
        .and(&cache.scores)
        .map_collect(|&g, &s| g * s * (1.0 - s));
    for k in (0..p.layers.len()).rev() {
        let input = &cache.inputs[k];
        grads.layers[k].weights = input.t().dot(&delta);
        grads.layers[k].bias = delta.sum_axis(Axis(0));
        if k == 0 {
            break;
        }
        let mut d_input = delta.dot(&p.layers[k].weights.t());
        let h = k - 1;
        if let Some(masks) = &cache.masks {
            d_input *= &masks[h];
        }
        Zip::from(&mut d_input)
            .and(&cache.pre[h])
            .for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        delta = d_input;
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer `{other}` (expected sgd or adam)"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: MlpParams,
        v: MlpParams,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, like: &MlpParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: like.zeros_like(),
                v: like.zeros_like(),
            },
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
                    p.weights.scaled_add(-lr, &g.weights);
                    p.bias.scaled_add(-lr, &g.bias);
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let (lr, b1, b2, eps) = (*lr, *beta1, *beta2, *eps);
                let c1 = 1.0 - b1.powi(*step);
                let c2 = 1.0 - b2.powi(*step);
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for (((p, g), m), v) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    Zip::from(&mut p.weights)
                        .and(&g.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    Zip::from(&mut p.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
    }
}

/// Checkpoint magic, followed by a format version byte.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HCLMLP\0\x01";

/// Parameters plus the feature standardization they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub feature_mean: Option<Vec<f64>>,
    pub feature_scale: Option<Vec<f64>>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Layout (little-endian): magic (8 bytes); `u64` layer count `L`;
    /// `L + 1` `u64` widths from input to output; per layer the row-major
    /// `fan_in x fan_out` weights then the biases as `f64`; one flag byte,
    /// and when it is 1, `input` means followed by `input` scales.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let layers = &self.params.layers;
        put_u64(&mut out, layers.len() as u64);
        put_u64(&mut out, self.params.input_dim() as u64);
        for l in layers {
            put_u64(&mut out, l.weights.ncols() as u64);
        }
        for l in layers {
            put_f64s(&mut out, l.weights.iter());
            put_f64s(&mut out, l.bias.iter());
        }
        match (&self.feature_mean, &self.feature_scale) {
            (Some(m), Some(s)) => {
                out.push(1);
                put_f64s(&mut out, m.iter());
                put_f64s(&mut out, s.iter());
            }
            _ => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let n_layers = read_u64(&mut r)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Checkpoint(format!(
                "implausible layer count {n_layers}"
            )));
        }
        let mut dims = Vec::with_capacity(n_layers + 1);
        for _ in 0..=n_layers {
            let d = read_u64(&mut r)? as usize;
            if d == 0 || d > 1 << 28 {
                return Err(Error::Checkpoint(format!("implausible width {d}")));
            }
            dims.push(d);
        }
        let mut layers = Vec::with_capacity(n_layers);
        for w in dims.windows(2) {
            let weights = Array2::from_shape_vec((w[0], w[1]), read_f64s(&mut r, w[0] * w[1])?)
                .expect("length matches shape");
            let bias = Array1::from(read_f64s(&mut r, w[1])?);
            layers.push(Dense { weights, bias });
        }
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag)?;
        let (feature_mean, feature_scale) = match flag[0] {
            0 => (None, None),
            1 => (
                Some(read_f64s(&mut r, dims[0])?),
                Some(read_f64s(&mut r, dims[0])?),
            ),
            other => return Err(Error::Checkpoint(format!("bad normalization flag {other}"))),
        };
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            params: MlpParams { layers },
            feature_mean,
            feature_scale,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if r.len() < n * 8 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, tail) = r.split_at(n * 8);
    *r = tail;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(5, &[7], 3, 11).unwrap();
        let b = init_params(5, &[7], 3, 11).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        for l in &a.layers {
            let bound = (6.0 / l.weights.nrows() as f64).sqrt();
            assert!(l.weights.iter().all(|v| v.abs() <= bound));
        }
        assert_ne!(a.flatten(), init_params(5, &[7], 3, 12).unwrap().flatten());
        assert!(init_params(0, &[7], 3, 1).is_err());
        assert!(init_params(2, &[0], 3, 1).is_err());
    }

    #[test]
    fn zero_network_scores_half() {
        let p = init_params(3, &[4], 2, 0).unwrap().zeros_like();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        let (s, _) = forward(&p, x.view(), None).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn eval_forward_is_pure_and_checks_width() {
        let p = init_params(3, &[4], 2, 5).unwrap();
        let x = array![[1.0, -2.0, 3.0]];
        assert_eq!(
            predict(&p, x.view()).unwrap(),
            predict(&p, x.view()).unwrap()
        );
        assert!(predict(&p, array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn unit_masks_match_no_dropout() {
        let p = init_params(3, &[4, 2], 2, 5).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.1, 0.2, 0.3]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let masks = dropout_masks(&mut rng, 2, &[4, 2], 0.0);
        assert!(masks.iter().all(|m| m.iter().all(|&v| v == 1.0)));
        let (a, _) = forward(&p, x.view(), Some(&masks)).unwrap();
        assert_eq!(a, predict(&p, x.view()).unwrap());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_params(3, &[4], 2, 5).unwrap();
        let x = array![[1.0, -2.0, 3.0]];
        let (_, cache) = forward(&p, x.view(), None).unwrap();
        let g = backward(&p, &cache, &Array2::zeros((1, 2))).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_network_hand_chain_rule() {
        // x = 2, w1 = 0.5, b1 = 0.1, w2 = -1.5, b2 = 0.2:
        // h = relu(1.1) = 1.1, z = -1.45, s = sigmoid(-1.45).
        // With dL/ds = 1: dz = s(1-s); dw2 = dz*h; db2 = dz;
        // dh = dz*w2; dw1 = dh*x; db1 = dh.
        let p = MlpParams {
            layers: vec![
                Dense {
                    weights: array![[0.5]],
                    bias: array![0.1],
                },
                Dense {
                    weights: array![[-1.5]],
                    bias: array![0.2],
                },
            ],
        };
        let (s, cache) = forward(&p, array![[2.0]].view(), None).unwrap();
        let sv = 1.0 / (1.0 + 1.45f64.exp());
        assert!((s.values()[[0, 0]] - sv).abs() < 1e-15);
        let g = backward(&p, &cache, &array![[1.0]]).unwrap();
        let dz = sv * (1.0 - sv);
        let expected = [dz * -1.5 * 2.0, dz * -1.5, dz * 1.1, dz];
        for (got, want) in g.flatten().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let p = init_params(3, &[4], 2, 5).unwrap();
        let (_, cache) = forward(&p, array![[1.0, 2.0, 3.0]].view(), None).unwrap();
        let other = init_params(3, &[5], 2, 5).unwrap();
        assert!(backward(&other, &cache, &Array2::zeros((1, 2))).is_err());
        assert!(backward(&p, &cache, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn lr_zero_keeps_params() {
        let p0 = init_params(3, &[4], 2, 5).unwrap();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = p0.clone();
            let mut opt = Optimizer::new(kind, 0.0, &p);
            let mut g = p.clone();
            g.for_each_mut(|v| *v = 0.3);
            opt.step(&mut p, &g);
            assert_eq!(p, p0);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let p = init_params(3, &[4, 2], 2, 9).unwrap();
        let ck = Checkpoint {
            params: p,
            feature_mean: Some(vec![0.1, 0.2, 0.3]),
            feature_scale: Some(vec![1.0, 2.0, 3.0]),
        };
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}

//! Fully-connected ReLU encoder `u = f(x; theta)` with exact reverse-mode
//! gradients.
//!
//! Parameters flatten in layer order; for each layer the weight matrix
//! (shape `out x in`) is stored row-major, followed by its bias vector.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"CMETA1"
//! u32 input_dim
//! u32 output_dim
//! u32 hidden_count
//! u32 hidden_dims[hidden_count]
//! u64 init_seed
//! u64 param_count
//! f64 params[param_count]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::from_seed;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CMETA1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub init_seed: u64,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, init_seed: u64) -> Result<Self> {
        let cfg = Self {
            input_dim,
            hidden_dims,
            output_dim,
            init_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(invalid("encoder", "all layer widths must be >= 1"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[1] * p[0] + p[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    layers: Vec<Layer>,
}

/// Activations recorded by [`EncoderParams::forward_batch`] for one batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    fingerprint: u64,
    /// Input to each layer, `in x batch`.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of hidden layers, `out x batch`.
    pre_activations: Vec<DMatrix<f64>>,
    batch: usize,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

impl EncoderParams {
    /// He initialization: `W ~ N(0, 2 / fan_in)`, zero biases.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = from_seed(config.init_seed);
        let layers = config
            .widths()
            .windows(2)
            .map(|p| {
                let (fan_in, fan_out) = (p[0], p[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                // row-major draw order
                let mut weights = DMatrix::zeros(fan_out, fan_in);
                for i in 0..fan_out {
                    for j in 0..fan_in {
                        weights[(i, j)] = normal.sample(&mut rng);
                    }
                }
                Layer {
                    weights,
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn from_layers(config: &EncoderConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        if layers.len() != widths.len() - 1 {
            return Err(invalid("encoder", "layer count does not match config"));
        }
        for (l, p) in layers.iter().zip(widths.windows(2)) {
            if l.weights.shape() != (p[1], p[0]) || l.bias.len() != p[1] {
                return Err(invalid("encoder", "layer shape does not match config"));
            }
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    /// A single linear layer mapping features to themselves, for methods that
    /// work on raw features.
    pub fn identity(dim: usize) -> Result<Self> {
        let config = EncoderConfig::new(dim, vec![], dim, 0)?;
        let layer = Layer {
            weights: DMatrix::identity(dim, dim),
            bias: DVector::zeros(dim),
        };
        Self::from_layers(&config, vec![layer])
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for i in 0..layer.weights.nrows() {
                out.extend(layer.weights.row(i).iter());
            }
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn unflatten(config: &EncoderConfig, flat: &[f64]) -> Result<Self> {
        config.validate()?;
        if flat.len() != config.param_count() {
            return Err(Error::DimensionMismatch {
                context: "flattened parameters",
                expected: config.param_count(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        let layers = config
            .widths()
            .windows(2)
            .map(|p| {
                let (fan_in, fan_out) = (p[0], p[1]);
                let weights =
                    DMatrix::from_row_slice(fan_out, fan_in, &flat[offset..offset + fan_in * fan_out]);
                offset += fan_in * fan_out;
                let bias = DVector::from_column_slice(&flat[offset..offset + fan_out]);
                offset += fan_out;
                Layer { weights, bias }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        *self = Self::unflatten(&self.config, flat)?;
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over parameter bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.layers {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    fn batch_matrix(&self, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let d = self.config.input_dim;
        for x in xs {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "encoder input",
                    expected: d,
                    actual: x.len(),
                });
            }
        }
        Ok(DMatrix::from_fn(d, xs.len(), |i, j| xs[j][i]))
    }

    fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed(std::slice::from_ref(&x.to_vec()))?.remove(0))
    }

    /// Batch forward without recording activations.
    pub fn embed(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut h = self.batch_matrix(xs)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &h;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            h = z;
        }
        Ok(Self::columns(&h))
    }

    /// Batch forward recording what [`EncoderParams::backward`] needs.
    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ForwardTrace)> {
        let mut h = self.batch_matrix(xs)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &h;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            inputs.push(h);
            if i < last {
                pre_activations.push(z.clone());
                z.apply(|v| *v = v.max(0.0));
            }
            h = z;
        }
        let trace = ForwardTrace {
            fingerprint: self.fingerprint(),
            inputs,
            pre_activations,
            batch: xs.len(),
        };
        Ok((Self::columns(&h), trace))
    }

    /// Gradient of a scalar loss w.r.t. the flattened parameters, given the
    /// loss gradient w.r.t. each output embedding of the traced batch.
    pub fn backward(&self, trace: &ForwardTrace, output_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        if trace.fingerprint != self.fingerprint() {
            return Err(Error::StaleTrace("parameters changed since forward pass".into()));
        }
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::StaleTrace("layer count differs".into()));
        }
        if output_grads.len() != trace.batch {
            return Err(Error::StaleTrace(format!(
                "trace holds {} examples, got {} gradients",
                trace.batch,
                output_grads.len()
            )));
        }
        let m = self.config.output_dim;
        if let Some(g) = output_grads.iter().find(|g| g.len() != m) {
            return Err(Error::DimensionMismatch {
                context: "embedding gradient",
                expected: m,
                actual: g.len(),
            });
        }
        let mut delta = DMatrix::from_fn(m, trace.batch, |i, j| output_grads[j][i]);
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &trace.inputs[i];
            let dw = &delta * input.transpose();
            let db = delta.column_sum();
            grads.push((dw, db));
            if i > 0 {
                let mut back = self.layers[i].weights.transpose() * &delta;
                let pre = &trace.pre_activations[i - 1];
                back.zip_apply(pre, |g, z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in grads {
            for i in 0..dw.nrows() {
                flat.extend(dw.row(i).iter());
            }
            flat.extend(db.iter());
        }
        Ok(flat)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        for v in [c.input_dim, c.output_dim, c.hidden_dims.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for h in &c.hidden_dims {
            w.write_all(&(*h as u32).to_le_bytes())?;
        }
        w.write_all(&c.init_seed.to_le_bytes())?;
        let flat = self.flatten();
        w.write_all(&(flat.len() as u64).to_le_bytes())?;
        for v in flat {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<usize> {
            r.read_exact(&mut u32_buf)
                .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
            Ok(u32::from_le_bytes(u32_buf) as usize)
        };
        let input_dim = read_u32(&mut r)?;
        let output_dim = read_u32(&mut r)?;
        let hidden_count = read_u32(&mut r)?;
        let hidden_dims = (0..hidden_count)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut u64_buf = [0u8; 8];
        r.read_exact(&mut u64_buf)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        let init_seed = u64::from_le_bytes(u64_buf);
        r.read_exact(&mut u64_buf)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        let count = u64::from_le_bytes(u64_buf) as usize;
        let config = EncoderConfig::new(input_dim, hidden_dims, output_dim, init_seed)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if count != config.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match config ({})",
                config.param_count()
            )));
        }
        let mut flat = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u64_buf)
                .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
            flat.push(f64::from_le_bytes(u64_buf));
        }
        Self::unflatten(&config, &flat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_encoder_returns_its_input() {
        let e = EncoderParams::identity(3).unwrap();
        assert_eq!(e.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }
    use rand::Rng;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = from_seed(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = EncoderConfig::new(4, vec![5, 3], 2, 42).unwrap();
        let a = EncoderParams::init(&cfg).unwrap();
        let b = EncoderParams::init(&cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn linear_encoder_shape() {
        let cfg = EncoderConfig::new(3, vec![], 3, 0).unwrap();
        assert_eq!(cfg.param_count(), 12);
        assert_eq!(EncoderParams::init(&cfg).unwrap().layers().len(), 1);
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let cfg = EncoderConfig::new(3, vec![4], 2, 0).unwrap();
        let p = EncoderParams::unflatten(&cfg, &vec![0.0; cfg.param_count()]).unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let cfg = EncoderConfig::new(3, vec![], 3, 0).unwrap();
        let p = EncoderParams::from_layers(
            &cfg,
            vec![Layer {
                weights: DMatrix::identity(3, 3),
                bias: DVector::zeros(3),
            }],
        )
        .unwrap();
        assert_eq!(p.forward(&[0.5, 0.0, 2.0]).unwrap(), vec![0.5, 0.0, 2.0]);
    }

    #[test]
    fn batch_matches_single_forwards() {
        let cfg = EncoderConfig::new(4, vec![6], 3, 9).unwrap();
        let p = EncoderParams::init(&cfg).unwrap();
        let xs = random_inputs(5, 4, 1);
        let batch = p.embed(&xs).unwrap();
        for (x, u) in xs.iter().zip(&batch) {
            assert_eq!(&p.forward(x).unwrap(), u);
        }
        let (traced, _) = p.forward_batch(&xs).unwrap();
        assert_eq!(traced, batch);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let cfg = EncoderConfig::new(4, vec![], 3, 0).unwrap();
        let p = EncoderParams::init(&cfg).unwrap();
        assert!(p.forward(&[1.0]).is_err());
    }

    #[test]
    fn linear_adjoint_is_outer_product() {
        let cfg = EncoderConfig::new(3, vec![], 2, 4).unwrap();
        let p = EncoderParams::init(&cfg).unwrap();
        let x = vec![0.5, -1.0, 2.0];
        let g = vec![3.0, -0.5];
        let (_, trace) = p.forward_batch(std::slice::from_ref(&x)).unwrap();
        let grad = p.backward(&trace, std::slice::from_ref(&g)).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(grad[i * 3 + j], g[i] * x[j]);
            }
        }
        assert_eq!(&grad[6..], &g[..]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let cfg = EncoderConfig::new(3, vec![4, 4], 2, 4).unwrap();
        let p = EncoderParams::init(&cfg).unwrap();
        let xs = random_inputs(3, 3, 2);
        let (_, trace) = p.forward_batch(&xs).unwrap();
        let grad = p.backward(&trace, &vec![vec![0.0; 2]; 3]).unwrap();
        assert!(grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn finite_differences_agree_for_each_depth() {
        for hidden in [vec![], vec![5], vec![5, 4]] {
            let cfg = EncoderConfig::new(3, hidden, 2, 17).unwrap();
            let mut p = EncoderParams::init(&cfg).unwrap();
            // nonzero biases so no unit sits exactly at the kink
            let mut flat = p.flatten();
            let mut rng = from_seed(3);
            for v in flat.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
            p.set_flat(&flat).unwrap();
            let xs = random_inputs(4, 3, 8);
            let weights = random_inputs(4, 2, 9);
            let loss = |q: &EncoderParams| -> f64 {
                q.embed(&xs)
                    .unwrap()
                    .iter()
                    .zip(&weights)
                    .map(|(u, w)| u.iter().zip(w).map(|(a, b)| a * b + 0.5 * a * a).sum::<f64>())
                    .sum()
            };
            let (us, trace) = p.forward_batch(&xs).unwrap();
            let upstream: Vec<Vec<f64>> = us
                .iter()
                .zip(&weights)
                .map(|(u, w)| u.iter().zip(w).map(|(a, b)| b + a).collect())
                .collect();
            let grad = p.backward(&trace, &upstream).unwrap();
            let h = 1e-5;
            for i in 0..flat.len() {
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let fd = (loss(&EncoderParams::unflatten(&cfg, &plus).unwrap())
                    - loss(&EncoderParams::unflatten(&cfg, &minus).unwrap()))
                    / (2.0 * h);
                let denom = grad[i].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-6,
                    "param {i}: analytic {} fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let cfg = EncoderConfig::new(2, vec![3], 2, 1).unwrap();
        let mut p = EncoderParams::init(&cfg).unwrap();
        let xs = random_inputs(2, 2, 0);
        let (_, trace) = p.forward_batch(&xs).unwrap();
        assert!(p.backward(&trace, &[vec![1.0, 0.0]]).is_err());
        let mut flat = p.flatten();
        flat[0] += 1.0;
        p.set_flat(&flat).unwrap();
        assert!(matches!(
            p.backward(&trace, &vec![vec![1.0, 0.0]; 2]),
            Err(Error::StaleTrace(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = EncoderConfig::new(5, vec![7, 3], 4, 123).unwrap();
        let p = EncoderParams::init(&cfg).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"CMETA1");
        assert_eq!(buf.len(), 6 + 4 * 3 + 4 * 2 + 8 + 8 + 8 * cfg.param_count());
        let q = EncoderParams::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert!(EncoderParams::read_checkpoint(&buf[..20]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(EncoderParams::read_checkpoint(&bad[..]).is_err());
    }

    #[test]
    fn flatten_round_trips() {
        let cfg = EncoderConfig::new(3, vec![2], 2, 5).unwrap();
        let p = EncoderParams::init(&cfg).unwrap();
        let flat = p.flatten();
        assert_eq!(EncoderParams::unflatten(&cfg, &flat).unwrap().flatten(), flat);
    }
}

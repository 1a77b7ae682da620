//! Convolutional value network with hand-written backpropagation, the TD
//! loss, an Adam optimizer and a binary checkpoint format.
//!
//! Architecture: conv 3→c1 (3×3, SAME, ReLU), conv c1→c2 (3×3, SAME, ReLU),
//! 2×2 average pooling (an odd last row/column is dropped), dense →hidden
//! (ReLU), dense →8 (linear).
//!
//! All parameters live in one flat vector, layer by layer:
//!
//! | block   | shape                         |
//! |---------|-------------------------------|
//! | conv1.w | `[c1][dx][dy][3]`             |
//! | conv1.b | `[c1]`                        |
//! | conv2.w | `[c2][dx][dy][c1]`            |
//! | conv2.b | `[c2]`                        |
//! | fc1.w   | `[hidden][px][py][c2]`        |
//! | fc1.b   | `[hidden]`                    |
//! | fc2.w   | `[8][hidden]`                 |
//! | fc2.b   | `[8]`                         |
//!
//! Convolutions are correlations: `out[x][y][o] = b[o] +
//! Σ w[o][dx][dy][i] · in[x+dx-1][y+dy-1][i]` with zero padding.
//!
//! Checkpoint byte layout (all little-endian):
//!
//! ```text
//! 8 bytes  magic "UAVQNET\0"
//! u32      format version (1)
//! u32 × 5  grid_k, conv1_channels, conv2_channels, hidden, n_actions
//! u64      parameter count
//! f64 × n  parameters in the order above
//! ```

use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::observation::Observation;

pub const N_ACTIONS: usize = Action::COUNT;
const IN_CHANNELS: usize = Observation::CHANNELS;
const MAGIC: &[u8; 8] = b"UAVQNET\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub grid_k: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
}

impl NetShape {
    pub fn for_grid(grid_k: usize) -> Self {
        Self {
            grid_k,
            conv1_channels: 32,
            conv2_channels: 32,
            hidden: 256,
        }
    }

    pub fn input_len(&self) -> usize {
        Observation::input_len(self.grid_k)
    }

    fn pooled(&self) -> usize {
        self.grid_k / 2
    }

    fn flat_len(&self) -> usize {
        self.pooled() * self.pooled() * self.conv2_channels
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (c1, c2, h) = (self.conv1_channels, self.conv2_channels, self.hidden);
        Layout {
            w1: take(c1 * 9 * IN_CHANNELS),
            b1: take(c1),
            w2: take(c2 * 9 * c1),
            b2: take(c2),
            w3: take(h * self.flat_len()),
            b3: take(h),
            w4: take(N_ACTIONS * h),
            b4: take(N_ACTIONS),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().b4.end
    }

    fn validate(&self) -> Result<()> {
        if self.grid_k < 2 || self.conv1_channels == 0 || self.conv2_channels == 0 || self.hidden == 0 {
            return Err(Error::domain(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }
}

struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    w4: Range<usize>,
    b4: Range<usize>,
}

/// Intermediate values of one batched forward pass.
pub struct ForwardCache {
    batch: usize,
    cols1: Array2<f64>,
    z1: Array2<f64>,
    cols2: Array2<f64>,
    z2: Array2<f64>,
    pooled: Array2<f64>,
    z3: Array2<f64>,
    h: Array2<f64>,
    pub q: Array2<f64>,
}

impl ForwardCache {
    /// Distance of the nearest ReLU input to the kink at zero.
    pub fn min_abs_preactivation(&self) -> f64 {
        [&self.z1, &self.z2, &self.z3]
            .into_iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetShape,
    params: Vec<f64>,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `x · wᵀ + b` for a row-major `[out][in]` weight block.
fn dense(x: &Array2<f64>, w: ArrayView2<f64>, b: &[f64]) -> Array2<f64> {
    let mut out = x.dot(&w.t());
    out += &ArrayView1::from(b);
    out
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Channel-major `[b][c][x][y]` to position-major `[b][x][y][c]`.
fn to_position_major(input: &[f64], batch: usize, k: usize, c: usize) -> Vec<f64> {
    let kk = k * k;
    let mut out = vec![0.0; batch * kk * c];
    for b in 0..batch {
        for ch in 0..c {
            let src = &input[(b * c + ch) * kk..(b * c + ch + 1) * kk];
            for (p, &v) in src.iter().enumerate() {
                out[(b * kk + p) * c + ch] = v;
            }
        }
    }
    out
}

/// Unfolds 3×3 neighbourhoods of a position-major tensor into rows.
fn im2col(src: &[f64], batch: usize, k: usize, c: usize) -> Array2<f64> {
    let mut cols = Array2::zeros((batch * k * k, 9 * c));
    let data = cols.as_slice_mut().expect("fresh array is contiguous");
    let width = 9 * c;
    for b in 0..batch {
        for x in 0..k {
            for y in 0..k {
                let row = &mut data[((b * k + x) * k + y) * width..][..width];
                for dx in 0..3 {
                    let Some(sx) = (x + dx).checked_sub(1).filter(|&v| v < k) else {
                        continue;
                    };
                    for dy in 0..3 {
                        let Some(sy) = (y + dy).checked_sub(1).filter(|&v| v < k) else {
                            continue;
                        };
                        let s = ((b * k + sx) * k + sy) * c;
                        row[(dx * 3 + dy) * c..][..c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, batch: usize, k: usize, c: usize) -> Array2<f64> {
    let cols = cols.as_standard_layout();
    let data = cols.as_slice().expect("standard layout");
    let width = 9 * c;
    let mut out = Array2::zeros((batch * k * k, c));
    let dst = out.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        for x in 0..k {
            for y in 0..k {
                let row = &data[((b * k + x) * k + y) * width..][..width];
                for dx in 0..3 {
                    let Some(sx) = (x + dx).checked_sub(1).filter(|&v| v < k) else {
                        continue;
                    };
                    for dy in 0..3 {
                        let Some(sy) = (y + dy).checked_sub(1).filter(|&v| v < k) else {
                            continue;
                        };
                        let s = ((b * k + sx) * k + sy) * c;
                        for (d, v) in dst[s..s + c].iter_mut().zip(&row[(dx * 3 + dy) * c..][..c]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn avg_pool(a: &Array2<f64>, batch: usize, k: usize, c: usize) -> Array2<f64> {
    let p = k / 2;
    let src = a.as_slice().expect("standard layout");
    let mut out = Array2::zeros((batch, p * p * c));
    let dst = out.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        for px in 0..p {
            for py in 0..p {
                let o = (b * p * p + px * p + py) * c;
                for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let s = ((b * k + 2 * px + i) * k + 2 * py + j) * c;
                    for ch in 0..c {
                        dst[o + ch] += 0.25 * src[s + ch];
                    }
                }
            }
        }
    }
    out
}

fn avg_unpool(d: &Array2<f64>, batch: usize, k: usize, c: usize) -> Array2<f64> {
    let p = k / 2;
    let d = d.as_standard_layout();
    let src = d.as_slice().expect("standard layout");
    let mut out = Array2::zeros((batch * k * k, c));
    let dst = out.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        for px in 0..p {
            for py in 0..p {
                let o = (b * p * p + px * p + py) * c;
                for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let s = ((b * k + 2 * px + i) * k + 2 * py + j) * c;
                    for ch in 0..c {
                        dst[s + ch] = 0.25 * src[o + ch];
                    }
                }
            }
        }
    }
    out
}

fn mask_relu(mut d: Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
    d.zip_mut_with(z, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    d
}

fn write_block(dst: &mut [f64], g: &Array2<f64>) {
    for (d, v) in dst.iter_mut().zip(g.iter()) {
        *d = *v;
    }
}

impl QNetwork {
    /// Fan-in scaled uniform initialisation.
    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let l = shape.layout();
        let mut params = vec![0.0; shape.n_params()];
        let blocks = [
            (&l.w1, &l.b1, 9 * IN_CHANNELS),
            (&l.w2, &l.b2, 9 * shape.conv1_channels),
            (&l.w3, &l.b3, shape.flat_len()),
            (&l.w4, &l.b4, shape.hidden),
        ];
        for (w, b, fan_in) in blocks {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[w.start..b.end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { shape, params })
    }

    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            params: vec![0.0; shape.n_params()],
        })
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters given, shape needs {}",
                params.len(),
                shape.n_params()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn view(&self, r: &Range<usize>, rows: usize) -> ArrayView2<'_, f64> {
        let block = &self.params[r.clone()];
        ArrayView2::from_shape((rows, block.len() / rows), block).expect("layout sizes agree")
    }

    /// Batched forward pass over channel-major inputs, keeping what the
    /// backward pass needs.
    pub fn forward_cached(&self, input: &[f64], batch: usize) -> Result<ForwardCache> {
        let s = self.shape;
        if input.len() != batch * s.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} does not hold {batch} observations of a {k}x{k} grid",
                input.len(),
                k = s.grid_k
            )));
        }
        if let Some(v) = input.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite network input {v}")));
        }
        let k = s.grid_k;
        let l = s.layout();

        let x0 = to_position_major(input, batch, k, IN_CHANNELS);
        let cols1 = im2col(&x0, batch, k, IN_CHANNELS);
        let z1 = standard(dense(
            &cols1,
            self.view(&l.w1, s.conv1_channels),
            &self.params[l.b1.clone()],
        ));
        let a1 = z1.mapv(relu);
        let cols2 = im2col(a1.as_slice().expect("standard layout"), batch, k, s.conv1_channels);
        let z2 = standard(dense(
            &cols2,
            self.view(&l.w2, s.conv2_channels),
            &self.params[l.b2.clone()],
        ));
        let a2 = z2.mapv(relu);
        let pooled = avg_pool(&a2, batch, k, s.conv2_channels);
        let z3 = dense(&pooled, self.view(&l.w3, s.hidden), &self.params[l.b3.clone()]);
        let h = z3.mapv(relu);
        let q = dense(&h, self.view(&l.w4, N_ACTIONS), &self.params[l.b4.clone()]);
        Ok(ForwardCache {
            batch,
            cols1,
            z1,
            cols2,
            z2,
            pooled,
            z3,
            h,
            q,
        })
    }

    /// Action values for a batch, one row per observation.
    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input, batch)?.q)
    }

    pub fn q_values(&self, obs: &Observation) -> Result<[f64; N_ACTIONS]> {
        let q = self.forward(&obs.to_input(), 1)?;
        let mut out = [0.0; N_ACTIONS];
        for (o, v) in out.iter_mut().zip(q.row(0)) {
            *o = *v;
        }
        Ok(out)
    }

    /// Gradient of `Σ dq ⊙ Q` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dq: &Array2<f64>) -> Vec<f64> {
        let s = self.shape;
        let k = s.grid_k;
        let l = s.layout();
        let mut grad = vec![0.0; self.params.len()];

        write_block(&mut grad[l.w4.clone()], &dq.t().dot(&cache.h));
        write_block(&mut grad[l.b4.clone()], &dq.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dh = dq.dot(&self.view(&l.w4, N_ACTIONS));

        let dz3 = mask_relu(dh, &cache.z3);
        write_block(&mut grad[l.w3.clone()], &dz3.t().dot(&cache.pooled));
        write_block(&mut grad[l.b3.clone()], &dz3.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dpool = dz3.dot(&self.view(&l.w3, s.hidden));

        let da2 = avg_unpool(&dpool, cache.batch, k, s.conv2_channels);
        let dz2 = mask_relu(da2, &cache.z2);
        write_block(&mut grad[l.w2.clone()], &dz2.t().dot(&cache.cols2));
        write_block(&mut grad[l.b2.clone()], &dz2.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dcols2 = dz2.dot(&self.view(&l.w2, s.conv2_channels));

        let da1 = col2im(&dcols2, cache.batch, k, s.conv1_channels);
        let dz1 = mask_relu(da1, &cache.z1);
        write_block(&mut grad[l.w1.clone()], &dz1.t().dot(&cache.cols1));
        write_block(&mut grad[l.b1.clone()], &dz1.sum_axis(Axis(0)).insert_axis(Axis(0)));
        grad
    }

    /// Exact copy of another network's parameters.
    pub fn sync_from(&mut self, other: &QNetwork) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "cannot copy {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.shape;
        let mut out = Vec::with_capacity(40 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            s.grid_k as u32,
            s.conv1_channels as u32,
            s.conv2_channels as u32,
            s.hidden as u32,
            N_ACTIONS as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 40 || &bytes[..8] != MAGIC {
            return Err(bad("not a network checkpoint"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {}", word(0))));
        }
        if word(5) as usize != N_ACTIONS {
            return Err(Error::ShapeMismatch(format!("checkpoint has {} actions", word(5))));
        }
        let shape = NetShape {
            grid_k: word(1) as usize,
            conv1_channels: word(2) as usize,
            conv2_channels: word(3) as usize,
            hidden: word(4) as usize,
        };
        shape.validate()?;
        let n = u64::from_le_bytes(bytes[32..40].try_into().unwrap()) as usize;
        if n != shape.n_params() {
            return Err(bad(&format!(
                "header declares {n} parameters, shape needs {}",
                shape.n_params()
            )));
        }
        let body = &bytes[40..];
        if body.len() != 8 * n {
            return Err(bad("truncated parameter block"));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { shape, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and insists on the given shape.
    pub fn load_expecting(path: &Path, shape: NetShape) -> Result<Self> {
        let net = Self::load(path)?;
        if net.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint shape {:?} does not match expected {:?}",
                net.shape, shape
            )));
        }
        Ok(net)
    }
}

/// Lowest index among the largest values.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A minibatch of transitions with channel-major flattened observations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TdBatch {
    pub states: Vec<f64>,
    pub next_states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl TdBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Regression targets `r·scale + γ·max Q_target(s')`, bootstrapping only
/// non-terminal rows.
pub fn td_targets(target: &QNetwork, batch: &TdBatch, gamma: f64, reward_scale: f64) -> Result<Vec<f64>> {
    let next = target.forward(&batch.next_states, batch.len())?;
    Ok((0..batch.len())
        .map(|i| {
            let r = batch.rewards[i] * reward_scale;
            if batch.terminal[i] {
                r
            } else {
                r + gamma * next.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect())
}

/// Mean squared TD error and its gradient with respect to `eval`'s
/// parameters. The target network is held constant.
pub fn td_loss_grad(
    eval: &QNetwork,
    target: &QNetwork,
    batch: &TdBatch,
    gamma: f64,
    reward_scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::domain("empty training batch"));
    }
    let y = td_targets(target, batch, gamma, reward_scale)?;
    let cache = eval.forward_cached(&batch.states, b)?;
    let mut dq = Array2::zeros((b, N_ACTIONS));
    let mut loss = 0.0;
    for i in 0..b {
        let a = batch.actions[i];
        let err = cache.q[[i, a]] - y[i];
        loss += err * err;
        dq[[i, a]] = 2.0 * err / b as f64;
    }
    let grad = eval.backward(&cache, &dq);
    Ok((loss / b as f64, grad))
}

pub fn td_loss(eval: &QNetwork, target: &QNetwork, batch: &TdBatch, gamma: f64, reward_scale: f64) -> Result<f64> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::domain("empty training batch"));
    }
    let y = td_targets(target, batch, gamma, reward_scale)?;
    let q = eval.forward(&batch.states, b)?;
    Ok((0..b).map(|i| (q[[i, batch.actions[i]]] - y[i]).powi(2)).sum::<f64>() / b as f64)
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

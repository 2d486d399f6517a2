//! Linear and ReLU networks over a finite group: G-CNNs, cyclic CNNs,
//! fully-connected nets and band-limited Fourier-space nets.
//!
//! A G-CNN computes `NN(x) = ⟨x ⋆ w₁ ⋆ ⋯ ⋆ w_{L−1}, w_L⟩`; the ReLU variant
//! applies `max(0, ·)` after each of the first `L − 1` correlations. All
//! training is full-batch gradient descent on `Σ_n exp(−y_n NN(x_n))`.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{real_quasi_norm, schatten_quasi_norm};
use crate::error::{Error, Result};
use crate::group::{cyclic_group, GroupTable};
use crate::linalg::{dot, CMat};
use crate::repr::{FourierBlocks, IrrepSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Gcnn,
    /// A G-CNN over the cyclic group of the input's size.
    Cnn,
    FullyConnected,
    FourierBandlimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

/// Shape of a network.
#[derive(Clone, Debug)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub layers: usize,
    pub activation: Activation,
    /// Length of an input vector: `|G|`, or `Σ_{ρ∈B} d_ρ²` when band-limited.
    pub input_dim: usize,
    /// Group the filters live on (gcnn and cnn).
    pub group: Option<Arc<GroupTable>>,
    /// Irrep dimensions `B` of a band-limited net.
    pub band_dims: Vec<usize>,
    /// Hidden widths of a fully-connected net (`L − 1` entries).
    pub fc_widths: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn gcnn(group: Arc<GroupTable>, layers: usize, activation: Activation) -> ArchitectureSpec {
        ArchitectureSpec {
            kind: ArchKind::Gcnn,
            layers,
            activation,
            input_dim: group.order(),
            group: Some(group),
            band_dims: Vec::new(),
            fc_widths: Vec::new(),
        }
    }

    pub fn cnn(n: usize, layers: usize, activation: Activation) -> Result<ArchitectureSpec> {
        let mut s = ArchitectureSpec::gcnn(Arc::new(cyclic_group(n)?), layers, activation);
        s.kind = ArchKind::Cnn;
        Ok(s)
    }

    /// Fully-connected net with every hidden width equal to `n`.
    pub fn fully_connected(n: usize, layers: usize, activation: Activation) -> ArchitectureSpec {
        ArchitectureSpec {
            kind: ArchKind::FullyConnected,
            layers,
            activation,
            input_dim: n,
            group: None,
            band_dims: Vec::new(),
            fc_widths: vec![n; layers.saturating_sub(1)],
        }
    }

    pub fn band_limited(dims: Vec<usize>, layers: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            kind: ArchKind::FourierBandlimited,
            layers,
            activation: Activation::Linear,
            input_dim: dims.iter().map(|d| d * d).sum(),
            group: None,
            band_dims: dims,
            fc_widths: Vec::new(),
        }
    }

    /// Builds the named architecture over `group` (inputs of length `|G|`).
    pub fn for_kind(kind: ArchKind, group: &Arc<GroupTable>, layers: usize, activation: Activation) -> Result<ArchitectureSpec> {
        let s = match kind {
            ArchKind::Gcnn => ArchitectureSpec::gcnn(group.clone(), layers, activation),
            ArchKind::Cnn => ArchitectureSpec::cnn(group.order(), layers, activation)?,
            ArchKind::FullyConnected => ArchitectureSpec::fully_connected(group.order(), layers, activation),
            ArchKind::FourierBandlimited => return Err(Error::Config("band-limited nets are built from an irrep dimension list".into())),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        match self.kind {
            ArchKind::Gcnn | ArchKind::Cnn => {
                let g = self.group.as_ref().ok_or_else(|| Error::Config("G-CNN without a group".into()))?;
                if g.order() != self.input_dim {
                    return Err(Error::Mismatch("input dimension differs from the group order".into()));
                }
            }
            ArchKind::FullyConnected => {
                if self.fc_widths.len() + 1 != self.layers || self.fc_widths.contains(&0) {
                    return Err(Error::Config("fully-connected nets need L − 1 positive widths".into()));
                }
            }
            ArchKind::FourierBandlimited => {
                if self.band_dims.is_empty() || self.band_dims.contains(&0) {
                    return Err(Error::Config("band-limited nets need positive irrep dimensions".into()));
                }
                if self.activation != Activation::Linear {
                    return Err(Error::Config("band-limited nets are linear".into()));
                }
            }
        }
        Ok(())
    }

    /// Parameter shapes, layer by layer, as flat lengths.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let n = self.input_dim;
        let l = self.layers;
        match self.kind {
            ArchKind::Gcnn | ArchKind::Cnn => vec![n; l],
            ArchKind::FullyConnected => {
                let mut sizes = Vec::with_capacity(l);
                let mut prev = n;
                for &w in &self.fc_widths {
                    sizes.push(w * prev);
                    prev = w;
                }
                sizes.push(prev);
                sizes
            }
            ArchKind::FourierBandlimited => vec![n; l],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes().iter().sum()
    }

    fn fan_ins(&self) -> Vec<usize> {
        match self.kind {
            ArchKind::Gcnn | ArchKind::Cnn => vec![self.input_dim; self.layers],
            ArchKind::FullyConnected => {
                let mut f = vec![self.input_dim];
                f.extend(self.fc_widths.iter().copied());
                f
            }
            ArchKind::FourierBandlimited => vec![0; self.layers],
        }
    }
}

/// Layer parameters of a network.
///
/// * gcnn/cnn: `L` filters of length `|G|`;
/// * fully-connected: `L − 1` row-major matrices, then the head vector;
/// * band-limited: per layer, the real blocks over `B` concatenated, each
///   stored column-major.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub spec: ArchitectureSpec,
    pub layers: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Checkpoint layout of [`NetworkParams`] (the group is stored separately).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsJson {
    pub kind: ArchKind,
    pub activation: Activation,
    pub input_dim: usize,
    #[serde(default)]
    pub band_dims: Vec<usize>,
    #[serde(default)]
    pub fc_widths: Vec<usize>,
    pub seed: u64,
    pub layers: Vec<Vec<f64>>,
}

impl NetworkParams {
    pub fn to_json(&self) -> ParamsJson {
        ParamsJson {
            kind: self.spec.kind,
            activation: self.spec.activation,
            input_dim: self.spec.input_dim,
            band_dims: self.spec.band_dims.clone(),
            fc_widths: self.spec.fc_widths.clone(),
            seed: self.seed,
            layers: self.layers.clone(),
        }
    }

    /// Restores a checkpoint; gcnn checkpoints need their group.
    pub fn from_json(j: ParamsJson, group: Option<Arc<GroupTable>>) -> Result<NetworkParams> {
        let group = match j.kind {
            ArchKind::Gcnn => Some(group.ok_or_else(|| Error::Config("G-CNN checkpoint needs its group".into()))?),
            ArchKind::Cnn => Some(Arc::new(cyclic_group(j.input_dim)?)),
            _ => None,
        };
        let spec = ArchitectureSpec {
            kind: j.kind,
            layers: j.layers.len(),
            activation: j.activation,
            input_dim: j.input_dim,
            group,
            band_dims: j.band_dims,
            fc_widths: j.fc_widths,
        };
        NetworkParams::new(spec, j.layers, j.seed)
    }

    pub fn new(spec: ArchitectureSpec, layers: Vec<Vec<f64>>, seed: u64) -> Result<NetworkParams> {
        spec.validate()?;
        let sizes = spec.layer_sizes();
        if layers.len() != sizes.len() || layers.iter().zip(&sizes).any(|(l, &s)| l.len() != s) {
            return Err(Error::Mismatch("parameter shapes do not match the architecture".into()));
        }
        Ok(NetworkParams { spec, layers, seed })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|&x| x == 0.0))
    }

    fn group(&self) -> &GroupTable {
        self.spec.group.as_deref().expect("validated G-CNN has a group")
    }

    /// Network output on one input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Mismatch(format!("input has length {} but the network expects {}", x.len(), self.spec.input_dim)));
        }
        Ok(())
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        match self.spec.kind {
            ArchKind::FourierBandlimited => {
                let p = self.band_product_real();
                band_pair(&self.spec.band_dims, x, &p)
            }
            _ => {
                let cache = self.forward_cache(x);
                dot(cache.last().expect("at least the input"), self.layers.last().expect("L ≥ 1"))
            }
        }
    }

    /// Activations `a_0 = x, a_1, …, a_{L−1}` and pre-activations.
    fn forward_cache(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let l = self.spec.layers;
        let relu = self.spec.activation == Activation::Relu;
        let mut acts = Vec::with_capacity(l);
        acts.push(x.to_vec());
        for layer in 0..l - 1 {
            let prev = acts.last().expect("non-empty");
            let mut z = match self.spec.kind {
                ArchKind::Gcnn | ArchKind::Cnn => {
                    let mut out = vec![0.0; prev.len()];
                    crate::repr::correlate_into(self.group(), prev, &self.layers[layer], &mut out);
                    out
                }
                ArchKind::FullyConnected => matvec(&self.layers[layer], prev),
                ArchKind::FourierBandlimited => unreachable!("band nets have no hidden activations"),
            };
            if relu {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Gradient of the output with respect to every parameter and the input,
    /// scaled by `dout`.
    fn backward(&self, x: &[f64], dout: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        if self.spec.kind == ArchKind::FourierBandlimited {
            return self.band_backward(x, dout);
        }
        let l = self.spec.layers;
        let acts = self.forward_cache(x);
        let relu = self.spec.activation == Activation::Relu;
        let mut grads: Vec<Vec<f64>> = self.layers.iter().map(|w| vec![0.0; w.len()]).collect();
        let head = &self.layers[l - 1];
        grads[l - 1] = acts[l - 1].iter().map(|a| a * dout).collect();
        let mut da: Vec<f64> = head.iter().map(|w| w * dout).collect();
        for layer in (0..l - 1).rev() {
            if relu {
                // Post-activation values are zero exactly where the
                // pre-activation was non-positive.
                for (d, &a) in da.iter_mut().zip(&acts[layer + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let a_prev = &acts[layer];
            let w = &self.layers[layer];
            let mut da_prev = vec![0.0; a_prev.len()];
            match self.spec.kind {
                ArchKind::Gcnn | ArchKind::Cnn => {
                    let g = self.group();
                    let gw = &mut grads[layer];
                    for (u, &dz) in da.iter().enumerate() {
                        if dz == 0.0 {
                            continue;
                        }
                        for (v, &t) in g.row(u).iter().enumerate() {
                            let t = t as usize;
                            da_prev[t] += dz * w[v];
                            gw[v] += dz * a_prev[t];
                        }
                    }
                }
                ArchKind::FullyConnected => {
                    let cols = a_prev.len();
                    let gw = &mut grads[layer];
                    for (r, &dz) in da.iter().enumerate() {
                        if dz == 0.0 {
                            continue;
                        }
                        let row = &w[r * cols..(r + 1) * cols];
                        let grow = &mut gw[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            da_prev[c] += dz * row[c];
                            grow[c] += dz * a_prev[c];
                        }
                    }
                }
                ArchKind::FourierBandlimited => unreachable!(),
            }
            da = da_prev;
        }
        (grads, da)
    }

    /// Input gradient of the output at `x`; for linear nets this is `β` and
    /// does not depend on `x`.
    pub fn local_linearization(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.backward(x, 1.0).1)
    }

    /// End-to-end linear predictor `β` with `⟨x, β⟩ = NN(x)`.
    ///
    /// For G-CNNs this is `w_L ⋆ w_{L−1}⁻ ⋆ ⋯ ⋆ w₁⁻`; for fully-connected
    /// nets `W₁ᵀ ⋯ W_{L−1}ᵀ w_L`; for band-limited nets the block product
    /// weighted as in the forward pass.
    pub fn linearize(&self) -> Result<Vec<f64>> {
        if self.spec.activation == Activation::Relu {
            return Err(Error::WrongVariant("ReLU networks only have local linearizations".into()));
        }
        let l = self.spec.layers;
        Ok(match self.spec.kind {
            ArchKind::Gcnn | ArchKind::Cnn => {
                let g = self.group();
                let mut beta = self.layers[l - 1].clone();
                let mut buf = vec![0.0; beta.len()];
                for layer in (0..l - 1).rev() {
                    let w_inv: Vec<f64> = (0..g.order()).map(|u| self.layers[layer][g.inv(u)]).collect();
                    crate::repr::correlate_into(g, &beta, &w_inv, &mut buf);
                    std::mem::swap(&mut beta, &mut buf);
                }
                beta
            }
            ArchKind::FullyConnected => {
                let mut beta = self.layers[l - 1].clone();
                for layer in (0..l - 1).rev() {
                    let cols = if layer == 0 { self.spec.input_dim } else { self.spec.fc_widths[layer - 1] };
                    beta = matvec_t(&self.layers[layer], &beta, cols);
                }
                beta
            }
            ArchKind::FourierBandlimited => {
                let p = self.band_product_real();
                band_weighted(&self.spec.band_dims, &p)
            }
        })
    }

    /// Blocks `W_L ⋯ W₁` of a band-limited net.
    pub fn band_product(&self) -> Result<FourierBlocks> {
        if self.spec.kind != ArchKind::FourierBandlimited {
            return Err(Error::WrongVariant("only band-limited nets have a block product".into()));
        }
        Ok(blocks_from_flat(&self.spec.band_dims, &self.band_product_real()))
    }

    fn band_blocks(&self, layer: usize) -> Vec<nalgebra::DMatrix<f64>> {
        split_blocks(&self.spec.band_dims, &self.layers[layer])
    }

    fn band_product_real(&self) -> Vec<f64> {
        let dims = &self.spec.band_dims;
        let mut acc: Vec<nalgebra::DMatrix<f64>> = dims.iter().map(|&d| nalgebra::DMatrix::identity(d, d)).collect();
        for layer in 0..self.spec.layers {
            let w = self.band_blocks(layer);
            for (a, wb) in acc.iter_mut().zip(&w) {
                *a = wb * &*a;
            }
        }
        acc.iter().flat_map(|m| m.iter().copied().collect::<Vec<_>>()).collect()
    }

    fn band_backward(&self, x: &[f64], dout: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let dims = &self.spec.band_dims;
        let l = self.spec.layers;
        let c = 1.0 / dims.iter().map(|d| d * d).sum::<usize>() as f64;
        let ws: Vec<Vec<nalgebra::DMatrix<f64>>> = (0..l).map(|k| self.band_blocks(k)).collect();
        let xs = split_blocks(dims, x);
        let mut grads = vec![Vec::with_capacity(self.spec.input_dim); l];
        for (b, &d) in dims.iter().enumerate() {
            let id = nalgebra::DMatrix::<f64>::identity(d, d);
            // prefix[k] = W_k ⋯ W_1 (prefix[0] = I); suffix[k] = W_L ⋯ W_{k+1}.
            let mut prefix = vec![id.clone()];
            for w in &ws {
                let next = &w[b] * prefix.last().expect("non-empty");
                prefix.push(next);
            }
            let mut suffix = vec![id.clone(); l + 1];
            for k in (0..l).rev() {
                suffix[k] = &suffix[k + 1] * &ws[k][b];
            }
            let scale = c * d as f64 * dout;
            for k in 0..l {
                let g = suffix[k + 1].transpose() * &xs[b] * prefix[k].transpose() * scale;
                grads[k].extend(g.iter().copied());
            }
        }
        let p = self.band_product_real();
        let dx: Vec<f64> = band_weighted(dims, &p).into_iter().map(|v| v * dout).collect();
        (grads, dx)
    }

    /// Hidden correlation stack `x ⋆ w₁ ⋆ ⋯ ⋆ w_{L−1}` (with activations).
    pub fn hidden_stack(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !matches!(self.spec.kind, ArchKind::Gcnn | ArchKind::Cnn) {
            return Err(Error::WrongVariant("hidden stacks are defined for G-CNNs".into()));
        }
        self.check_input(x)?;
        Ok(self.forward_cache(x).pop().expect("non-empty"))
    }

    /// Gradient of the exponential loss over the whole dataset.
    pub fn gradient(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        data.check(self.spec.input_dim)?;
        Ok(self.loss_and_gradient(data, false).2)
    }

    /// Loss, outputs and gradient in one pass.
    /// Loss, outputs and gradient. With `normalized` the gradient is divided
    /// by the loss, computed stably so it survives loss underflow.
    fn loss_and_gradient(&self, data: &Dataset, normalized: bool) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let outputs = self.outputs(data);
        let margins: Vec<f64> = outputs.iter().zip(&data.labels).map(|(&f, &y)| y * f).collect();
        let loss = margins.iter().map(|m| (-m).exp()).sum();
        let shift = if normalized { margins.iter().copied().fold(f64::INFINITY, f64::min) } else { 0.0 };
        let mut coeffs: Vec<f64> = margins.iter().zip(&data.labels).map(|(m, &y)| -y * (shift - m).exp()).collect();
        if normalized {
            let z: f64 = coeffs.iter().map(|c| c.abs()).sum();
            coeffs.iter_mut().for_each(|c| *c /= z);
        }
        let grads = if self.spec.activation == Activation::Linear {
            // The gradient is linear in the input, so one backward pass at
            // the weighted aggregate input suffices.
            let mut r = vec![0.0; self.spec.input_dim];
            for (x, &c) in data.inputs.iter().zip(&coeffs) {
                for (ri, xi) in r.iter_mut().zip(x) {
                    *ri += c * xi;
                }
            }
            self.backward(&r, 1.0).0
        } else {
            let mut total: Vec<Vec<f64>> = self.layers.iter().map(|w| vec![0.0; w.len()]).collect();
            for (x, &c) in data.inputs.iter().zip(&coeffs) {
                let (g, _) = self.backward(x, c);
                for (t, gi) in total.iter_mut().zip(g) {
                    for (a, b) in t.iter_mut().zip(gi) {
                        *a += b;
                    }
                }
            }
            total
        };
        (loss, outputs, grads)
    }

    fn outputs(&self, data: &Dataset) -> Vec<f64> {
        if self.spec.activation == Activation::Linear {
            let beta = self.linearize().expect("linear");
            data.inputs.iter().map(|x| dot(x, &beta)).collect()
        } else {
            data.inputs.iter().map(|x| self.forward_unchecked(x)).collect()
        }
    }

    /// Exponential loss `Σ_n exp(−y_n NN(x_n))`.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        data.check(self.spec.input_dim)?;
        Ok(self.outputs(data).iter().zip(&data.labels).map(|(&f, &y)| (-y * f).exp()).sum())
    }

    /// `min_n y_n NN(x_n)`.
    pub fn min_margin(&self, data: &Dataset) -> Result<f64> {
        data.check(self.spec.input_dim)?;
        Ok(self.outputs(data).iter().zip(&data.labels).map(|(&f, &y)| y * f).fold(f64::INFINITY, f64::min))
    }

    /// `min_{j, ℓ<L} (|ŵ_ℓ(j)|² − |ŵ_L(j)|²) / |G|` for G-CNNs with scalar
    /// irreps (the balancedness gap in the unitary DFT basis); `None`
    /// otherwise.
    pub fn lambda_margin(&self, irreps: &IrrepSet) -> Option<f64> {
        if !matches!(self.spec.kind, ArchKind::Gcnn | ArchKind::Cnn)
            || irreps.dims().iter().any(|&d| d != 1)
            || irreps.order() != self.spec.input_dim
        {
            return None;
        }
        let n = irreps.order() as f64;
        let hats: Vec<FourierBlocks> = self.layers.iter().map(|w| irreps.gft(w).expect("length checked")).collect();
        let last = hats.last().expect("L ≥ 1");
        let mut lam = f64::INFINITY;
        for h in &hats[..hats.len() - 1] {
            for (a, b) in h.blocks.iter().zip(&last.blocks) {
                lam = lam.min((a[(0, 0)].norm_sqr() - b[(0, 0)].norm_sqr()) / n);
            }
        }
        Some(lam)
    }

    /// In-place `W ← W − η ∇`.
    fn step(&mut self, grads: &[Vec<f64>], eta: f64) {
        for (w, g) in self.layers.iter_mut().zip(grads) {
            for (a, b) in w.iter_mut().zip(g) {
                *a -= eta * b;
            }
        }
    }
}

fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

fn matvec_t(w: &[f64], y: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, &yi) in w.chunks_exact(cols).zip(y) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * yi;
        }
    }
    out
}

/// Splits a flat vector into column-major square blocks.
pub fn split_blocks(dims: &[usize], flat: &[f64]) -> Vec<nalgebra::DMatrix<f64>> {
    let mut off = 0;
    dims.iter()
        .map(|&d| {
            let m = nalgebra::DMatrix::from_column_slice(d, d, &flat[off..off + d * d]);
            off += d * d;
            m
        })
        .collect()
}

/// Flattens real parts of blocks, column-major, in order.
pub fn flatten_real_blocks(blocks: &FourierBlocks) -> Vec<f64> {
    blocks.blocks.iter().flat_map(|m| m.iter().map(|z| z.re).collect::<Vec<_>>()).collect()
}

pub fn blocks_from_flat(dims: &[usize], flat: &[f64]) -> FourierBlocks {
    FourierBlocks { blocks: split_blocks(dims, flat).into_iter().map(|m| m.map(|v| Complex64::new(v, 0.0))).collect::<Vec<CMat>>() }
}

/// `(1/Σd²) Σ_ρ d_ρ tr(X_ρ P_ρᵀ)` on flattened real blocks.
fn band_pair(dims: &[usize], x: &[f64], p: &[f64]) -> f64 {
    let w = band_weighted(dims, p);
    dot(x, &w)
}

fn band_weighted(dims: &[usize], p: &[f64]) -> Vec<f64> {
    let c = 1.0 / dims.iter().map(|d| d * d).sum::<usize>() as f64;
    let mut out = Vec::with_capacity(p.len());
    let mut off = 0;
    for &d in dims {
        out.extend(p[off..off + d * d].iter().map(|v| v * c * d as f64));
        off += d * d;
    }
    out
}

/// Uniform initialization in `[−scale/√fan_in, scale/√fan_in]`.
///
/// Band-limited blocks use their own dimension as fan-in.
pub fn init_network(spec: &ArchitectureSpec, seed: u64, scale: f64) -> Result<NetworkParams> {
    spec.validate()?;
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::Config("init scale must be finite and nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = spec.layer_sizes();
    let fans = spec.fan_ins();
    let layers = sizes
        .iter()
        .zip(&fans)
        .map(|(&len, &fan)| {
            if spec.kind == ArchKind::FourierBandlimited {
                let mut v = Vec::with_capacity(len);
                for &d in &spec.band_dims {
                    let s = scale / (d as f64).sqrt();
                    v.extend((0..d * d).map(|_| uniform(&mut rng, s)));
                }
                v
            } else {
                let s = scale / (fan as f64).sqrt();
                (0..len).map(|_| uniform(&mut rng, s)).collect()
            }
        })
        .collect();
    NetworkParams::new(spec.clone(), layers, seed)
}

fn uniform(rng: &mut ChaCha8Rng, s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        rng.random_range(-s..s)
    }
}

/// Inputs with labels in `{−1, +1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Dataset> {
        let d = Dataset { inputs, labels };
        let dim = d.inputs.first().map_or(0, Vec::len);
        d.check(dim)?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::Mismatch("inputs and labels differ in count".into()));
        }
        if self.inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Mismatch(format!("every input must have length {dim}")));
        }
        if self.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Mismatch("labels must be +1 or −1".into()));
        }
        Ok(())
    }

    /// Applies `f` to every input, keeping labels.
    pub fn map_inputs(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Dataset {
        Dataset { inputs: self.inputs.iter().map(|x| f(x)).collect(), labels: self.labels.clone() }
    }
}

/// Piecewise-constant learning rate, multiplied by `boost_factor` every
/// `boost_every` epochs up to `cap_multiple · eta0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub eta0: f64,
    pub boost_factor: f64,
    pub boost_every: usize,
    pub cap_multiple: f64,
    /// Divide each step by the current loss and by `‖θ‖^{L−2}` (normalized
    /// gradient descent for degree-`L` homogeneous nets).
    #[serde(default)]
    pub loss_normalized: bool,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { eta0: 0.1, boost_factor: 2.0, boost_every: 2000, cap_multiple: 1e3, loss_normalized: false }
    }
}

impl StepSchedule {
    pub fn constant(eta: f64) -> StepSchedule {
        StepSchedule { eta0: eta, boost_factor: 1.0, boost_every: usize::MAX, cap_multiple: 1.0, loss_normalized: false }
    }

    /// `eta0 · boost_factor^{⌊epoch / boost_every⌋}`, kept within a factor
    /// `cap_multiple` of `eta0` (a factor below one decays the rate).
    pub fn eta(&self, epoch: usize) -> f64 {
        let boosts = epoch.checked_div(self.boost_every).unwrap_or(0).min(4096) as i32;
        (self.eta0 * self.boost_factor.powi(boosts)).clamp(self.eta0 / self.cap_multiple, self.eta0 * self.cap_multiple)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eta0 > 0.0
            && self.eta0.is_finite()
            && self.boost_factor > 0.0
            && self.boost_factor.is_finite()
            && self.boost_every > 0
            && self.cap_multiple >= 1.0
            && self.cap_multiple.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step schedule {self:?}")))
        }
    }
}

/// Margin cap applied after loss-normalized steps.
pub const NORMALIZED_MARGIN: f64 = 3000.0;

/// Training budget and logging cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_loss_tol")]
    pub loss_tol: f64,
    #[serde(default)]
    pub schedule: StepSchedule,
}

fn default_record_every() -> usize {
    100
}

fn default_loss_tol() -> f64 {
    1e-6
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            record_every: default_record_every(),
            loss_tol: default_loss_tol(),
            schedule: StepSchedule::default(),
        }
    }
}

/// One recorded epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss: f64,
    pub min_margin: f64,
    pub real_norm_2l: f64,
    pub fourier_schatten_2l: f64,
    pub cosine_beta_direction: f64,
}

/// Per-epoch record of a training run plus the final parameters.
#[derive(Clone, Debug)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    pub final_params: NetworkParams,
    /// `β` for linear nets; the concatenated per-sample local
    /// linearizations for ReLU nets.
    pub final_beta: Vec<f64>,
    /// Whether the loss dropped below the tolerance before the budget ran out.
    pub converged: bool,
}

pub const CSV_HEADER: [&str; 6] = ["epoch", "loss", "min_margin", "real_norm_2L", "fourier_schatten_2L", "cosine_beta_direction"];

impl TrainingTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace always has its initial row")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wr.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.min_margin.to_string(),
                r.real_norm_2l.to_string(),
                r.fourier_schatten_2l.to_string(),
                r.cosine_beta_direction.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Norms of a predictor, normalized by its minimum margin once it separates.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub loss: f64,
    pub min_margin: f64,
    pub real_norm: f64,
    pub fourier_norm: f64,
    pub direction: Vec<f64>,
}

/// Evaluates the trace quantities for `params`. Fourier norms use `irreps`
/// when given; band-limited nets use their own blocks.
pub fn snapshot(params: &NetworkParams, data: &Dataset, irreps: Option<&IrrepSet>) -> Result<Snapshot> {
    data.check(params.spec.input_dim)?;
    let p = 2.0 / params.spec.layers as f64;
    let outputs = params.outputs(data);
    let loss = outputs.iter().zip(&data.labels).map(|(&f, &y)| (-y * f).exp()).sum();
    let min_margin = outputs.iter().zip(&data.labels).map(|(&f, &y)| y * f).fold(f64::INFINITY, f64::min);
    let scale = if min_margin > 0.0 { 1.0 / min_margin } else { 1.0 };
    let norms_of = |beta: &[f64]| -> Result<(f64, f64)> {
        if params.spec.kind == ArchKind::FourierBandlimited {
            let blocks = params.band_product()?;
            let real = match irreps {
                Some(ir) if ir.dims() == params.spec.band_dims => real_quasi_norm(&ir.igft_real(&blocks)?, p),
                _ => real_quasi_norm(&flatten_real_blocks(&blocks), p),
            };
            Ok((real, schatten_quasi_norm(&blocks, p)?))
        } else {
            let real = real_quasi_norm(beta, p);
            let fourier = match irreps {
                Some(ir) => schatten_quasi_norm(&ir.gft(beta)?, p)?,
                None => f64::NAN,
            };
            Ok((real, fourier))
        }
    };
    let (real_norm, fourier_norm, direction) = if params.spec.activation == Activation::Linear {
        let beta = params.linearize()?;
        let (r, f) = norms_of(&beta)?;
        (r, f, beta)
    } else {
        let mut rs = 0.0;
        let mut fs = 0.0;
        let mut dir = Vec::new();
        for x in &data.inputs {
            let b = params.local_linearization(x)?;
            let (r, f) = norms_of(&b)?;
            rs += r;
            fs += f;
            dir.extend(b);
        }
        let n = data.len().max(1) as f64;
        (rs / n, fs / n, dir)
    };
    Ok(Snapshot { loss, min_margin, real_norm: real_norm * scale, fourier_norm: fourier_norm * scale, direction })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Full-batch gradient descent on the exponential loss.
///
/// Records every `record_every` epochs and always the initial and final
/// epoch. Stops early once the loss falls below `loss_tol`.
pub fn train(params: &NetworkParams, data: &Dataset, irreps: Option<&IrrepSet>, cfg: &TrainConfig) -> Result<TrainingTrace> {
    train_observed(params, data, irreps, cfg, |_, _| {})
}

/// [`train`], calling `observe(epoch, β)` at every recorded epoch with the
/// unnormalized linearization (concatenated local linearizations for ReLU
/// nets, real block entries for band-limited nets).
pub fn train_observed(
    params: &NetworkParams,
    data: &Dataset,
    irreps: Option<&IrrepSet>,
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<TrainingTrace> {
    data.check(params.spec.input_dim)?;
    cfg.schedule.validate()?;
    if params.is_zero() {
        return Err(Error::Config("all-zero parameters are a stationary point; use a nonzero init".into()));
    }
    let record_every = cfg.record_every.max(1);
    let mut p = params.clone();
    let mut rows = Vec::new();
    let mut prev_dir: Option<Vec<f64>> = None;
    let mut record = |p: &NetworkParams, epoch: usize, rows: &mut Vec<TraceRow>| -> Result<Vec<f64>> {
        let s = snapshot(p, data, irreps)?;
        let cos = match &prev_dir {
            None => 1.0,
            Some(d) => cosine(d, &s.direction),
        };
        rows.push(TraceRow {
            epoch,
            loss: s.loss,
            min_margin: s.min_margin,
            real_norm_2l: s.real_norm,
            fourier_schatten_2l: s.fourier_norm,
            cosine_beta_direction: cos,
        });
        prev_dir = Some(s.direction.clone());
        observe(epoch, &s.direction);
        Ok(s.direction)
    };
    let mut beta = record(&p, 0, &mut rows)?;
    let mut converged = rows[0].loss < cfg.loss_tol;
    let mut epoch = 0;
    while epoch < cfg.epochs && !converged {
        let (loss, _, grads) = p.loss_and_gradient(data, cfg.schedule.loss_normalized);
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            let trace = TrainingTrace { rows, final_params: p, final_beta: beta, converged: false };
            return Err(Error::Diverged { epoch, trace: Box::new(trace) });
        }
        let mut eta = cfg.schedule.eta(epoch);
        if cfg.schedule.loss_normalized {
            // Degree-L homogeneity: ∇ℒ/ℒ grows like ‖θ‖^{L−1}, so this keeps
            // the angular step roughly constant.
            let rho = p.layers.iter().flatten().map(|w| w * w).sum::<f64>().sqrt();
            eta /= rho.max(1.0).powi(p.spec.layers as i32 - 2);
        }
        p.step(&grads, eta);
        if cfg.schedule.loss_normalized {
            // The direction is scale-free; capping the margin keeps normalized
            // steps from overflowing and keeps every nearly-active sample in
            // the softmax weights.
            let m = p.min_margin(data)?;
            if m > NORMALIZED_MARGIN {
                let c = (NORMALIZED_MARGIN / m).powf(1.0 / p.spec.layers as f64);
                p.layers.iter_mut().flatten().for_each(|w| *w *= c);
            }
        }
        epoch += 1;
        let loss_now = p.loss(data)?;
        if !loss_now.is_finite() || p.layers.iter().flatten().any(|w| !w.is_finite()) {
            let trace = TrainingTrace { rows, final_params: p, final_beta: beta, converged: false };
            return Err(Error::Diverged { epoch, trace: Box::new(trace) });
        }
        converged = loss_now < cfg.loss_tol;
        if epoch % record_every == 0 || epoch == cfg.epochs || converged {
            beta = record(&p, epoch, &mut rows)?;
        }
    }
    Ok(TrainingTrace { rows, final_params: p, final_beta: beta, converged })
}

/// Left translation `(L_g x)(u) = x(g⁻¹ u)`.
pub fn left_translate(g: &GroupTable, elem: usize, x: &[f64]) -> Vec<f64> {
    let gi = g.inv(elem);
    (0..g.order()).map(|u| x[g.mul(gi, u)]).collect()
}

//! Shallow autoencoder: parameters, forward passes, hand-derived gradients.
//!
//! Encoder: hidden layer with activation, then a linear latent layer with
//! bias. Decoder: one hidden layer with activation feeding a masked linear
//! output layer with no bias. The mask structure is baked into a CSR weight
//! matrix, so pruned entries cannot drift away from zero during training.

use super::mask::MaskMatrix;
use crate::par;
use crate::pod::NormalizationStats;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Element-wise nonlinearity for both hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Sigmoid,
    Swish,
    /// Pass-through, for degenerate-network tests and linear-decoder checks.
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Swish => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Swish => "swish",
            Activation::Identity => "identity",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "sigmoid" => Ok(Activation::Sigmoid),
            "swish" => Ok(Activation::Swish),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!(
                "unknown activation '{other}' (expected 'sigmoid', 'swish', or 'identity')"
            ))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sparse weight matrix with an immutable CSR structure (the mask) and
/// mutable values. Keeps a transposed index so both products are
/// deterministic: every output element is one fixed-order summation.
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    /// For each column: (row, value index) pairs in ascending row order.
    tptr: Vec<usize>,
    tentries: Vec<(u32, u32)>,
}

impl MaskedMatrix {
    /// Zero-valued matrix over the mask's structure.
    pub fn zeros(mask: &MaskMatrix) -> Self {
        let nrows = mask.nrows();
        let ncols = mask.ncols();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for i in 0..nrows {
            indices.extend_from_slice(mask.row(i));
            indptr.push(indices.len());
        }
        let values = vec![0.0; indices.len()];
        // Invert the structure column-wise; rows are visited in order, so
        // each column's (row, value index) list comes out row-sorted.
        let mut counts = vec![0usize; ncols];
        for &j in &indices {
            counts[j] += 1;
        }
        let mut tptr = Vec::with_capacity(ncols + 1);
        tptr.push(0);
        for c in &counts {
            tptr.push(tptr.last().unwrap() + c);
        }
        let mut fill = tptr[..ncols].to_vec();
        let mut tentries = vec![(0u32, 0u32); indices.len()];
        for i in 0..nrows {
            let window = indptr[i]..indptr[i + 1];
            for (k, &j) in window.clone().zip(&indices[window]) {
                tentries[fill[j]] = (i as u32, k as u32);
                fill[j] += 1;
            }
        }
        MaskedMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
            tptr,
            tentries,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row-scale values in place: row i multiplied by `scale[i]`.
    pub fn scale_rows(&mut self, scale: ArrayView1<f64>) {
        for i in 0..self.nrows {
            let (s, e) = (self.indptr[i], self.indptr[i + 1]);
            for v in &mut self.values[s..e] {
                *v *= scale[i];
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// self * x for a single vector.
    pub fn matvec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        Array1::from_vec(par::map_indexed(self.nrows, |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
        }))
    }

    /// self * X for column-stacked inputs (ncols x batch).
    pub fn matmul(&self, x: ArrayView2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.nrows(), self.ncols);
        let b = x.ncols();
        let rows = par::map_indexed(self.nrows, |i| {
            let (cols, vals) = self.row(i);
            let mut out = vec![0.0; b];
            for (&j, &v) in cols.iter().zip(vals) {
                let xr = x.row(j);
                for (o, &xv) in out.iter_mut().zip(xr) {
                    *o += v * xv;
                }
            }
            out
        });
        let mut out = Array2::zeros((self.nrows, b));
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&Array1::from_vec(r));
        }
        out
    }

    /// self^T * G for column-stacked inputs (nrows x batch).
    pub fn tr_matmul(&self, g: ArrayView2<f64>) -> Array2<f64> {
        debug_assert_eq!(g.nrows(), self.nrows);
        let b = g.ncols();
        let rows = par::map_indexed(self.ncols, |j| {
            let mut out = vec![0.0; b];
            for &(i, k) in &self.tentries[self.tptr[j]..self.tptr[j + 1]] {
                let v = self.values[k as usize];
                let gr = g.row(i as usize);
                for (o, &gv) in out.iter_mut().zip(gr) {
                    *o += v * gv;
                }
            }
            out
        });
        let mut out = Array2::zeros((self.ncols, b));
        for (j, r) in rows.into_iter().enumerate() {
            out.row_mut(j).assign(&Array1::from_vec(r));
        }
        out
    }

    /// Per-entry gradient of sum_s (self * H)[i,s] * G[i,s] with respect to
    /// the stored values: grad_k = sum_s G[i_k, s] * H[j_k, s].
    pub fn value_grads(&self, g: ArrayView2<f64>, h: ArrayView2<f64>) -> Vec<f64> {
        debug_assert_eq!(g.nrows(), self.nrows);
        debug_assert_eq!(h.nrows(), self.ncols);
        let per_row = par::map_indexed(self.nrows, |i| {
            let (s, e) = (self.indptr[i], self.indptr[i + 1]);
            let gi = g.row(i);
            let mut out = Vec::with_capacity(e - s);
            for &j in &self.indices[s..e] {
                out.push(gi.dot(&h.row(j)));
            }
            out
        });
        per_row.into_iter().flatten().collect()
    }
}

/// All learnable tensors plus the fixed structure around them.
#[derive(Debug, Clone)]
pub struct AutoencoderParams {
    /// Encoder hidden weights, M1 x m.
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array1<f64>,
    /// Encoder latent weights, f x M1.
    pub enc_w2: Array2<f64>,
    pub enc_b2: Array1<f64>,
    /// Decoder hidden weights, M2 x f.
    pub dec_w1: Array2<f64>,
    pub dec_b1: Array1<f64>,
    /// Masked decoder output weights, m x M2.
    pub dec_w2: MaskedMatrix,
    pub activation: Activation,
    pub norm: NormalizationStats,
}

impl AutoencoderParams {
    pub fn input_dim(&self) -> usize {
        self.enc_w1.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_w2.nrows()
    }

    pub fn encoder_hidden(&self) -> usize {
        self.enc_w1.nrows()
    }

    pub fn decoder_hidden(&self) -> usize {
        self.dec_w1.nrows()
    }

    /// Learnable parameter count; masked-out decoder entries are excluded.
    pub fn learnable_count(&self) -> usize {
        self.enc_w1.len()
            + self.enc_b1.len()
            + self.enc_w2.len()
            + self.enc_b2.len()
            + self.dec_w1.len()
            + self.dec_b1.len()
            + self.dec_w2.nnz()
    }

    /// Kaiming-normal initialization (std sqrt(2 / fan_in), biases zero).
    /// Masked decoder rows use their own nonzero count as fan-in. Tensors are
    /// filled in a fixed order so a seed fully determines the result.
    pub fn init(
        m: usize,
        latent: usize,
        enc_hidden: usize,
        mask: &MaskMatrix,
        activation: Activation,
        norm: NormalizationStats,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if mask.nrows() != m {
            return Err(Error::dim(format!(
                "mask has {} rows but input dimension is {m}",
                mask.nrows()
            )));
        }
        if norm.dim() != m {
            return Err(Error::dim("normalization dimension disagrees with input dimension"));
        }
        if latent == 0 || enc_hidden == 0 {
            return Err(Error::invalid("latent and hidden widths must be at least 1"));
        }
        let dec_hidden = mask.ncols();
        let enc_w1 = kaiming(enc_hidden, m, m, rng);
        let enc_b1 = Array1::zeros(enc_hidden);
        let enc_w2 = kaiming(latent, enc_hidden, enc_hidden, rng);
        let enc_b2 = Array1::zeros(latent);
        let dec_w1 = kaiming(dec_hidden, latent, latent, rng);
        let dec_b1 = Array1::zeros(dec_hidden);
        let mut dec_w2 = MaskedMatrix::zeros(mask);
        for i in 0..m {
            let fan_in = mask.row(i).len().max(1);
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let (s, e) = (dec_w2.indptr[i], dec_w2.indptr[i + 1]);
            for v in &mut dec_w2.values[s..e] {
                *v = dist.sample(rng);
            }
        }
        Ok(AutoencoderParams {
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            dec_w1,
            dec_b1,
            dec_w2,
            activation,
            norm,
        })
    }
}

fn kaiming(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).unwrap();
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = dist.sample(rng);
    }
    out
}

fn add_bias_columns(mut a: Array2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    for mut col in a.axis_iter_mut(Axis(1)) {
        col += &b;
    }
    a
}

/// Latent codes for a batch of normalized inputs (m x batch -> f x batch).
pub fn encoder_forward(params: &AutoencoderParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != params.input_dim() {
        return Err(Error::dim(format!(
            "encoder input has {} rows, expected {}",
            x.nrows(),
            params.input_dim()
        )));
    }
    let act = params.activation;
    let pre1 = add_bias_columns(par::matmul(params.enc_w1.view(), x), params.enc_b1.view());
    let h1 = pre1.mapv(|v| act.apply(v));
    Ok(add_bias_columns(
        par::matmul(params.enc_w2.view(), h1.view()),
        params.enc_b2.view(),
    ))
}

/// Reconstructed normalized outputs for a batch of latent codes
/// (f x batch -> m x batch).
pub fn decoder_forward_batch(params: &AutoencoderParams, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    if y.nrows() != params.latent_dim() {
        return Err(Error::dim(format!(
            "decoder input has {} rows, expected {}",
            y.nrows(),
            params.latent_dim()
        )));
    }
    let act = params.activation;
    let pre = add_bias_columns(par::matmul(params.dec_w1.view(), y), params.dec_b1.view());
    let h = pre.mapv(|v| act.apply(v));
    Ok(params.dec_w2.matmul(h.view()))
}

/// Decoder output (S .* W2) sigma(W1 y + b1) for a single latent vector.
pub fn decoder_forward(params: &AutoencoderParams, y_hat: ArrayView1<f64>) -> Result<Array1<f64>> {
    let y = y_hat
        .to_owned()
        .into_shape_with_order((y_hat.len(), 1))
        .expect("column reshape");
    Ok(decoder_forward_batch(params, y.view())?.column(0).to_owned())
}

/// Decoder Jacobian (S .* W2) diag(sigma'(W1 y + b1)) W1, shape m x f.
pub fn decoder_jacobian(params: &AutoencoderParams, y_hat: ArrayView1<f64>) -> Result<Array2<f64>> {
    if y_hat.len() != params.latent_dim() {
        return Err(Error::dim(format!(
            "decoder input has {} entries, expected {}",
            y_hat.len(),
            params.latent_dim()
        )));
    }
    let act = params.activation;
    let mut pre = params.dec_w1.dot(&y_hat);
    pre += &params.dec_b1;
    let deriv = pre.mapv(|v| act.derivative(v));
    let mut scaled = params.dec_w1.clone();
    for (mut row, &d) in scaled.axis_iter_mut(Axis(0)).zip(deriv.iter()) {
        row *= d;
    }
    Ok(params.dec_w2.matmul(scaled.view()))
}

/// Full autoencoder pass on normalized inputs.
pub fn autoencoder_forward(params: &AutoencoderParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let y = encoder_forward(params, x)?;
    decoder_forward_batch(params, y.view())
}

/// Mean squared reconstruction error over all entries of the batch.
pub fn reconstruction_loss(params: &AutoencoderParams, x: ArrayView2<f64>) -> Result<f64> {
    let out = autoencoder_forward(params, x)?;
    let diff = &out - &x;
    Ok(diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64)
}

/// Gradients for every learnable tensor, in the same shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array1<f64>,
    pub enc_w2: Array2<f64>,
    pub enc_b2: Array1<f64>,
    pub dec_w1: Array2<f64>,
    pub dec_b1: Array1<f64>,
    /// Aligned with the masked matrix's stored values.
    pub dec_w2_values: Vec<f64>,
}

fn row_sums(a: ArrayView2<f64>) -> Array1<f64> {
    Array1::from_vec((0..a.nrows()).map(|i| a.row(i).sum()).collect())
}

/// Loss and exact gradients of the mean squared reconstruction error on a
/// batch of normalized snapshots (m x batch). Masked decoder entries have no
/// stored gradient slot, so they stay zero by construction.
pub fn autoencoder_loss_grads(
    params: &AutoencoderParams,
    x: ArrayView2<f64>,
) -> Result<(f64, Gradients)> {
    if x.ncols() == 0 {
        return Err(Error::invalid("loss needs a nonempty batch"));
    }
    if x.nrows() != params.input_dim() {
        return Err(Error::dim("batch dimension disagrees with network input"));
    }
    let act = params.activation;

    let pre1 = add_bias_columns(par::matmul(params.enc_w1.view(), x), params.enc_b1.view());
    let h1 = pre1.mapv(|v| act.apply(v));
    let y = add_bias_columns(par::matmul(params.enc_w2.view(), h1.view()), params.enc_b2.view());
    let pre2 = add_bias_columns(par::matmul(params.dec_w1.view(), y.view()), params.dec_b1.view());
    let h2 = pre2.mapv(|v| act.apply(v));
    let out = params.dec_w2.matmul(h2.view());

    let n_entries = (x.nrows() * x.ncols()) as f64;
    let diff = &out - &x;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n_entries;

    // d loss / d out.
    let g_out = diff.mapv(|v| 2.0 * v / n_entries);

    let dec_w2_values = params.dec_w2.value_grads(g_out.view(), h2.view());
    let g_h2 = params.dec_w2.tr_matmul(g_out.view());
    let g_pre2 = &g_h2 * &pre2.mapv(|v| act.derivative(v));
    let dec_w1 = par::matmul(g_pre2.view(), y.t());
    let dec_b1 = row_sums(g_pre2.view());

    let g_y = par::matmul(params.dec_w1.t(), g_pre2.view());
    let enc_w2 = par::matmul(g_y.view(), h1.t());
    let enc_b2 = row_sums(g_y.view());

    let g_h1 = par::matmul(params.enc_w2.t(), g_y.view());
    let g_pre1 = &g_h1 * &pre1.mapv(|v| act.derivative(v));
    let enc_w1 = par::matmul(g_pre1.view(), x.t());
    let enc_b1 = row_sums(g_pre1.view());

    Ok((
        loss,
        Gradients {
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            dec_w1,
            dec_b1,
            dec_w2_values,
        },
    ))
}

/// Encoder with the normalization folded in: maps u - u_ref directly to a
/// latent code.
#[derive(Debug, Clone)]
pub struct ScaledEncoder {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub u_ref: Array1<f64>,
    pub activation: Activation,
}

impl ScaledEncoder {
    /// h(w) for w = u - u_ref.
    pub fn encode_shifted(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let mut pre = self.w1.dot(&w);
        pre += &self.b1;
        let h = pre.mapv(|v| self.activation.apply(v));
        let mut y = self.w2.dot(&h);
        y += &self.b2;
        y
    }

    /// E(u) = h(u - u_ref).
    pub fn encode(&self, u: ArrayView1<f64>) -> Array1<f64> {
        self.encode_shifted((&u - &self.u_ref).view())
    }
}

/// Decoder with the normalization folded in: D(y) = u_ref + g(y).
#[derive(Debug, Clone)]
pub struct ScaledDecoder {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// Masked output weights divided row-wise by u_scale.
    pub w2: MaskedMatrix,
    pub u_ref: Array1<f64>,
    pub activation: Activation,
}

impl ScaledDecoder {
    pub fn latent_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    /// g(y) = (scaled W2) sigma(W1 y + b1).
    pub fn forward(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let mut pre = self.w1.dot(&y);
        pre += &self.b1;
        let h = pre.mapv(|v| self.activation.apply(v));
        self.w2.matvec(h.view())
    }

    /// D(y) = u_ref + g(y).
    pub fn reconstruct(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let mut out = self.forward(y);
        out += &self.u_ref;
        out
    }

    /// J_g(y) = (scaled W2) diag(sigma'(W1 y + b1)) W1, shape m x f.
    pub fn jacobian(&self, y: ArrayView1<f64>) -> Array2<f64> {
        let mut pre = self.w1.dot(&y);
        pre += &self.b1;
        let deriv = pre.mapv(|v| self.activation.derivative(v));
        let mut scaled = self.w1.clone();
        for (mut row, &d) in scaled.axis_iter_mut(Axis(0)).zip(deriv.iter()) {
            row *= d;
        }
        self.w2.matmul(scaled.view())
    }
}

/// Fold the normalization into the network: the scaled encoder premultiplies
/// its first layer by u_scale column-wise, the scaled decoder divides its
/// output rows by u_scale. E(u) = h(u - u_ref) and D(y) = u_ref + g(y) then
/// reproduce normalize -> network -> denormalize.
pub fn extract_scaled_maps(params: &AutoencoderParams) -> (ScaledEncoder, ScaledDecoder) {
    let scale = &params.norm.u_scale;
    let mut w1 = params.enc_w1.clone();
    for (mut col, &s) in w1.axis_iter_mut(Axis(1)).zip(scale.iter()) {
        col *= s;
    }
    let encoder = ScaledEncoder {
        w1,
        b1: params.enc_b1.clone(),
        w2: params.enc_w2.clone(),
        b2: params.enc_b2.clone(),
        u_ref: params.norm.u_ref.clone(),
        activation: params.activation,
    };
    let mut w2 = params.dec_w2.clone();
    let inv_scale = scale.mapv(|s| 1.0 / s);
    w2.scale_rows(inv_scale.view());
    let decoder = ScaledDecoder {
        w1: params.dec_w1.clone(),
        b1: params.dec_b1.clone(),
        w2,
        u_ref: params.norm.u_ref.clone(),
        activation: params.activation,
    };
    (encoder, decoder)
}

/// ln(e) + 2 N_w / N for a positive mean squared error e, N_w learnable
/// parameters, and N dataset entries.
pub fn compute_aic(e: f64, n_w: usize, n: usize) -> Result<f64> {
    if e.is_nan() || e <= 0.0 {
        return Err(Error::invalid(format!("AIC needs a positive loss, got {e}")));
    }
    if n == 0 {
        return Err(Error::invalid("AIC needs a nonempty dataset"));
    }
    Ok(e.ln() + 2.0 * n_w as f64 / n as f64)
}

/// Relative out-of-manifold content of a trajectory:
/// sqrt(sum_n ||(u^n - u_ref) - g(h(u^n - u_ref))||^2) / sqrt(sum_n ||u^n||^2)
/// over states 1..=nt.
pub fn nonlinear_projection_error(
    traj: &crate::timestep::Trajectory,
    encoder: &ScaledEncoder,
    decoder: &ScaledDecoder,
) -> Result<f64> {
    let u_ref = &decoder.u_ref;
    let mut num = 0.0;
    let mut den = 0.0;
    for state in traj.states.iter().skip(1) {
        if state.len() != u_ref.len() {
            return Err(Error::dim("projection error: inconsistent dimensions"));
        }
        let shifted = state - u_ref;
        let rebuilt = decoder.forward(encoder.encode_shifted(shifted.view()).view());
        let diff = &shifted - &rebuilt;
        num += diff.dot(&diff);
        den += state.dot(state);
    }
    if den <= 0.0 {
        return Err(Error::numerical("projection error denominator is zero (all states zero)"));
    }
    Ok((num / den).sqrt())
}

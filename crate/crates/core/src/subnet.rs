//! Decoder subnets: the restriction of a masked decoder to the active paths
//! feeding a chosen output index set.
//!
//! Active paths are found with a gradient trick: binarize the weights, run an
//! all-ones input through the linearized network, backpropagate an error that
//! is one exactly on the requested outputs, and keep the entries whose
//! gradient is strictly positive. Dropping the all-zero rows and columns of
//! the marked tensors leaves a small network whose outputs equal the chosen
//! rows of the full decoder exactly, at cost proportional to the kept hidden
//! nodes instead of the full hidden width.

use crate::autoencoder::{Activation, AutoencoderParams, MaskMatrix, MaskedMatrix, ScaledDecoder};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, Axis};

/// Restriction of a decoder to the active paths behind a set of outputs.
#[derive(Debug, Clone)]
pub struct SubnetDecoder {
    /// Hidden weights restricted to kept nodes, kept x f.
    pub w1: Array2<f64>,
    /// Hidden bias restricted to kept nodes.
    pub b1: Array1<f64>,
    /// Output weights restricted to requested rows and kept columns.
    pub w2: MaskedMatrix,
    /// Subnet output row -> global decoder output index (sorted).
    pub output_map: Vec<usize>,
    /// Subnet hidden index -> global hidden index (sorted).
    pub hidden_map: Vec<usize>,
    pub activation: Activation,
}

/// Sizes that drive the evaluation cost of a subnet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubnetCost {
    pub kept_hidden: usize,
    /// Stored nonzero entries across the subnet tensors.
    pub nonzeros: usize,
}

/// Sorted, deduplicated copy of an output index set; errors when empty or out
/// of range.
fn checked_outputs(h: &[usize], m: usize) -> Result<Vec<usize>> {
    if h.is_empty() {
        return Err(Error::invalid("subnet extraction needs a nonempty output set"));
    }
    let mut out: Vec<usize> = h.to_vec();
    out.sort_unstable();
    out.dedup();
    if out.last().is_some_and(|&i| i >= m) {
        return Err(Error::invalid(format!(
            "subnet output index {} out of range for {m} outputs",
            out.last().unwrap()
        )));
    }
    Ok(out)
}

/// Active-path extraction from raw decoder tensors.
///
/// Step 1 sets activations to identity and step 2 binarizes the tensors; both
/// are implicit below: the linearized hidden value y1[j] counts the nonzero
/// entries of W1 row j plus one when b1[j] is nonzero, which is exactly
/// W1_bin * ones + b1_bin. The error vector e is one on the requested outputs,
/// so the three gradients reduce to products of e, y1 and the binarized
/// structures; strict positivity of a gradient entry marks the entry active.
pub fn extract_subnet_parts(
    w1: &Array2<f64>,
    b1: &Array1<f64>,
    w2: &MaskedMatrix,
    activation: Activation,
    h: &[usize],
) -> Result<SubnetDecoder> {
    let m = w2.nrows();
    let m2 = w2.ncols();
    let f = w1.ncols();
    if w1.nrows() != m2 || b1.len() != m2 {
        return Err(Error::dim("decoder tensors disagree on hidden width"));
    }
    let outputs = checked_outputs(h, m)?;

    // Linearized forward pass with the all-ones input (steps 3 and 4).
    let y1: Vec<f64> = (0..m2)
        .map(|j| {
            let edges = w1.row(j).iter().filter(|v| **v != 0.0).count();
            edges as f64 + if b1[j] != 0.0 { 1.0 } else { 0.0 }
        })
        .collect();

    // Backpropagated marking (steps 5 to 7). feed[j] is (W2_bin^T e)[j]: how
    // many requested outputs hidden node j feeds through nonzero weights.
    let mut feed = vec![0usize; m2];
    for &i in &outputs {
        let (cols, vals) = w2.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v != 0.0 {
                feed[j] += 1;
            }
        }
    }

    // Step 8: a hidden node is kept when some requested output draws from it
    // through a nonzero weight and its linearized value is positive, i.e. the
    // W2 gradient column is nonzero.
    let hidden_map: Vec<usize> = (0..m2).filter(|&j| feed[j] > 0 && y1[j] > 0.0).collect();
    let mut local_hidden = vec![usize::MAX; m2];
    for (local, &j) in hidden_map.iter().enumerate() {
        local_hidden[j] = local;
    }

    // W1 rows and bias entries survive when the node feeds a requested output;
    // entries that were exactly zero stay zero (non-connected edges).
    let mut sub_w1 = Array2::zeros((hidden_map.len(), f));
    let mut sub_b1 = Array1::zeros(hidden_map.len());
    for (local, &j) in hidden_map.iter().enumerate() {
        sub_w1.row_mut(local).assign(&w1.row(j));
        sub_b1[local] = b1[j];
    }

    let rows: Vec<Vec<usize>> = outputs
        .iter()
        .map(|&i| {
            let (cols, vals) = w2.row(i);
            cols.iter()
                .zip(vals)
                .filter(|(&j, &v)| v != 0.0 && local_hidden[j] != usize::MAX)
                .map(|(&j, _)| local_hidden[j])
                .collect()
        })
        .collect();
    let structure = MaskMatrix::from_rows(hidden_map.len(), rows)?;
    let mut sub_w2 = MaskedMatrix::zeros(&structure);
    {
        let values = sub_w2.values_mut();
        let mut k = 0;
        for &i in &outputs {
            let (cols, vals) = w2.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if v != 0.0 && local_hidden[j] != usize::MAX {
                    values[k] = v;
                    k += 1;
                }
            }
        }
    }

    Ok(SubnetDecoder {
        w1: sub_w1,
        b1: sub_b1,
        w2: sub_w2,
        output_map: outputs,
        hidden_map,
        activation,
    })
}

/// Subnet of a raw (normalized-space) decoder.
pub fn extract_subnet(params: &AutoencoderParams, h: &[usize]) -> Result<SubnetDecoder> {
    extract_subnet_parts(&params.dec_w1, &params.dec_b1, &params.dec_w2, params.activation, h)
}

/// Subnet of a scaled decoder; outputs match rows of `ScaledDecoder::forward`.
pub fn extract_subnet_scaled(decoder: &ScaledDecoder, h: &[usize]) -> Result<SubnetDecoder> {
    extract_subnet_parts(&decoder.w1, &decoder.b1, &decoder.w2, decoder.activation, h)
}

/// g_sn(y) = W2_sn sigma(W1_sn y + b1_sn); one value per requested output.
pub fn subnet_forward(subnet: &SubnetDecoder, y_hat: ArrayView1<f64>) -> Result<Array1<f64>> {
    if y_hat.len() != subnet.w1.ncols() {
        return Err(Error::dim(format!(
            "subnet input has {} entries, expected {}",
            y_hat.len(),
            subnet.w1.ncols()
        )));
    }
    let mut pre = subnet.w1.dot(&y_hat);
    pre += &subnet.b1;
    let hidden = pre.mapv(|v| subnet.activation.apply(v));
    Ok(subnet.w2.matvec(hidden.view()))
}

/// Analytic Jacobian of `subnet_forward`, |H| x f.
pub fn subnet_jacobian(subnet: &SubnetDecoder, y_hat: ArrayView1<f64>) -> Result<Array2<f64>> {
    if y_hat.len() != subnet.w1.ncols() {
        return Err(Error::dim(format!(
            "subnet input has {} entries, expected {}",
            y_hat.len(),
            subnet.w1.ncols()
        )));
    }
    let mut pre = subnet.w1.dot(&y_hat);
    pre += &subnet.b1;
    let deriv = pre.mapv(|v| subnet.activation.derivative(v));
    let mut scaled = subnet.w1.clone();
    for (mut row, &d) in scaled.axis_iter_mut(Axis(0)).zip(deriv.iter()) {
        row *= d;
    }
    Ok(subnet.w2.matmul(scaled.view()))
}

/// Sizes driving the subnet's evaluation cost.
pub fn measure_subnet_cost(subnet: &SubnetDecoder) -> SubnetCost {
    let kept = subnet.hidden_map.len();
    let w1_nnz = subnet.w1.iter().filter(|v| **v != 0.0).count();
    let b1_nnz = subnet.b1.iter().filter(|v| **v != 0.0).count();
    SubnetCost {
        kept_hidden: kept,
        nonzeros: w1_nnz + b1_nnz + subnet.w2.nnz(),
    }
}

//! On-disk artifact formats. Trajectories, dense matrices, and trained
//! autoencoders share one envelope: a single JSON header line followed by a
//! little-endian binary payload whose layout the header fully determines
//! (real64 tensors column-major, index lists as unsigned 64-bit). Round
//! trips are bit-exact, so identical inputs produce identical files.
//! Result tables are plain CSV with a fixed column order.

use crate::autoencoder::{
    Activation, AutoencoderParams, MaskMatrix, MaskedMatrix, TrainingConfig,
};
use crate::pod::{NormalizationStats, TargetRange};
use crate::timestep::{TimeGrid, Trajectory};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Version stamped into every header; loads refuse other versions.
pub const SCHEMA_VERSION: u32 = 1;
const ORDERING: &str = "column-major";

/// Fixed column order of the results CSV.
pub const RESULTS_HEADER: &str =
    "config_id,f,n_r,n_z,max_rel_error,fom_seconds,rom_seconds,speedup";

fn fail(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn encode_header<T: Serialize>(header: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec(header)
        .map_err(|e| Error::Invalid(format!("header not serializable: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parse the header line and validate the shared envelope fields (schema,
/// kind, ordering) before the kind-specific fields, so a wrong-kind file is
/// reported as such rather than as a missing field.
fn read_header<T: for<'de> Deserialize<'de>>(
    reader: &mut impl BufRead,
    expected_kind: &str,
) -> Result<T> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.is_empty() || *line.last().unwrap() != b'\n' {
        return Err(fail("missing header line"));
    }
    let text = std::str::from_utf8(&line).map_err(|_| fail("corrupt header: not UTF-8 text"))?;
    let value: serde_json::Value =
        serde_json::from_str(text.trim_end()).map_err(|e| fail(format!("corrupt header: {e}")))?;
    let str_field = |name: &str| -> Result<&str> {
        value
            .get(name)
            .and_then(|v| v.as_str())
            .ok_or_else(|| fail(format!("corrupt header: missing field '{name}'")))
    };
    let schema = value
        .get("schema")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| fail("corrupt header: missing field 'schema'"))?;
    if schema != u64::from(SCHEMA_VERSION) {
        return Err(fail(format!(
            "unsupported schema version {schema}; this build reads {SCHEMA_VERSION}"
        )));
    }
    let kind = str_field("kind")?;
    if kind != expected_kind {
        return Err(fail(format!(
            "file holds kind '{kind}', expected '{expected_kind}'"
        )));
    }
    let ordering = str_field("ordering")?;
    if ordering != ORDERING {
        return Err(fail(format!("unsupported payload ordering '{ordering}'")));
    }
    serde_json::from_value(value).map_err(|e| fail(format!("corrupt header: {e}")))
}

fn push_f64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_u64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = usize>) {
    for v in values {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
}

fn push_matrix(buf: &mut Vec<u8>, a: ArrayView2<f64>) {
    // t() iterates the transpose row-major, i.e. the original column-major.
    push_f64s(buf, a.t().iter().cloned());
}

fn read_f64s(reader: &mut impl Read, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    reader.read_exact(&mut bytes).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            fail(format!(
                "payload ended early while reading {what} ({count} values declared)"
            ))
        } else {
            Error::Io(e)
        }
    })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("exact chunks")))
        .collect())
}

fn read_u64s(reader: &mut impl Read, count: usize, what: &str) -> Result<Vec<usize>> {
    let mut bytes = vec![0u8; count * 8];
    reader.read_exact(&mut bytes).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            fail(format!(
                "payload ended early while reading {what} ({count} values declared)"
            ))
        } else {
            Error::Io(e)
        }
    })?;
    bytes
        .chunks_exact(8)
        .map(|c| {
            let v = u64::from_le_bytes(c.try_into().expect("exact chunks"));
            usize::try_from(v).map_err(|_| fail(format!("{what} entry {v} overflows this platform")))
        })
        .collect()
}

fn read_matrix(reader: &mut impl Read, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
    let flat = read_f64s(reader, rows * cols, what)?;
    let mut a = Array2::zeros((rows, cols));
    let mut k = 0;
    for j in 0..cols {
        for i in 0..rows {
            a[[i, j]] = flat[k];
            k += 1;
        }
    }
    Ok(a)
}

fn expect_eof(reader: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(fail("trailing bytes after the declared payload"));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    schema: u32,
    kind: String,
    m: usize,
    nt: usize,
    dt: f64,
    t_final: f64,
    mu: f64,
    wall_seconds: f64,
    ordering: String,
}

/// Write a trajectory: header, then the states as consecutive columns of an
/// m x (nt+1) matrix.
pub fn save_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let m = traj.states.first().map(|s| s.len()).unwrap_or(0);
    if m == 0 {
        return Err(Error::Invalid(
            "trajectory must hold at least one nonempty state".into(),
        ));
    }
    if traj.states.len() != traj.grid.nt + 1 {
        return Err(Error::Invalid(format!(
            "trajectory holds {} states but its grid has {} steps",
            traj.states.len(),
            traj.grid.nt
        )));
    }
    if traj.states.iter().any(|s| s.len() != m) {
        return Err(Error::Dimension("trajectory states differ in length".into()));
    }
    for (value, name) in [
        (traj.grid.dt, "dt"),
        (traj.grid.t_final, "t_final"),
        (traj.mu, "mu"),
        (traj.wall_seconds, "wall_seconds"),
    ] {
        if !value.is_finite() {
            return Err(Error::Invalid(format!(
                "trajectory metadata {name} is not finite"
            )));
        }
    }
    let header = TrajectoryHeader {
        schema: SCHEMA_VERSION,
        kind: "trajectory".into(),
        m,
        nt: traj.grid.nt,
        dt: traj.grid.dt,
        t_final: traj.grid.t_final,
        mu: traj.mu,
        wall_seconds: traj.wall_seconds,
        ordering: ORDERING.into(),
    };
    let mut bytes = encode_header(&header)?;
    bytes.reserve(m * traj.states.len() * 8);
    for state in &traj.states {
        push_f64s(&mut bytes, state.iter().cloned());
    }
    write_file(path.as_ref(), &bytes)
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let header: TrajectoryHeader = read_header(&mut reader, "trajectory")?;
    if header.m == 0 {
        return Err(fail("state dimension must be positive"));
    }
    if !(header.dt.is_finite() && header.t_final.is_finite() && header.mu.is_finite()) {
        return Err(fail("non-finite grid metadata"));
    }
    let mut states = Vec::with_capacity(header.nt + 1);
    for n in 0..=header.nt {
        let flat = read_f64s(&mut reader, header.m, &format!("state {n}"))?;
        states.push(Array1::from_vec(flat));
    }
    expect_eof(&mut reader)?;
    Ok(Trajectory {
        states,
        grid: TimeGrid {
            nt: header.nt,
            dt: header.dt,
            t_final: header.t_final,
        },
        mu: header.mu,
        wall_seconds: header.wall_seconds,
    })
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    schema: u32,
    kind: String,
    rows: usize,
    cols: usize,
    label: String,
    ordering: String,
}

/// Write a dense real matrix (basis, snapshot block, singular values as a
/// single column) with a free-form label naming its role.
pub fn save_matrix(path: impl AsRef<Path>, label: &str, a: ArrayView2<f64>) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Invalid("matrix must be nonempty".into()));
    }
    let header = MatrixHeader {
        schema: SCHEMA_VERSION,
        kind: "matrix".into(),
        rows: a.nrows(),
        cols: a.ncols(),
        label: label.into(),
        ordering: ORDERING.into(),
    };
    let mut bytes = encode_header(&header)?;
    bytes.reserve(a.len() * 8);
    push_matrix(&mut bytes, a);
    write_file(path.as_ref(), &bytes)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<(String, Array2<f64>)> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let header: MatrixHeader = read_header(&mut reader, "matrix")?;
    if header.rows == 0 || header.cols == 0 {
        return Err(fail("matrix dimensions must be positive"));
    }
    let a = read_matrix(&mut reader, header.rows, header.cols, "matrix entries")?;
    expect_eof(&mut reader)?;
    Ok((header.label, a))
}

/// Trained autoencoder plus the provenance needed to reproduce it: the mask
/// generator parameters, the seed, and the training hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub params: AutoencoderParams,
    pub mask_b: usize,
    pub mask_delta_b: usize,
    pub seed: u64,
    pub training: TrainingConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    schema: u32,
    kind: String,
    m: usize,
    latent: usize,
    enc_hidden: usize,
    dec_hidden: usize,
    nnz: usize,
    activation: String,
    mask_b: usize,
    mask_delta_b: usize,
    seed: u64,
    range: String,
    training: TrainingConfig,
    ordering: String,
}

fn check_mask_generator(b: usize, delta_b: usize, m: usize, dec_hidden: usize) -> Result<()> {
    let expected = b + (m - 1) * delta_b;
    if expected != dec_hidden {
        return Err(Error::Invalid(format!(
            "mask generator (b={b}, delta_b={delta_b}) implies hidden width {expected}, \
             but the decoder has {dec_hidden}"
        )));
    }
    Ok(())
}

/// Write a trained model. Payload order after the header: enc_w1, enc_b1,
/// enc_w2, enc_b2, dec_w1, dec_b1, mask row pointers (m+1), mask column
/// indices (nnz), masked decoder values (nnz), u_scale, u_ref.
pub fn save_model(path: impl AsRef<Path>, artifact: &ModelArtifact) -> Result<()> {
    let p = &artifact.params;
    let (m, latent) = (p.input_dim(), p.latent_dim());
    let (enc_hidden, dec_hidden) = (p.encoder_hidden(), p.decoder_hidden());
    if p.norm.u_scale.len() != m || p.norm.u_ref.len() != m {
        return Err(Error::Dimension(format!(
            "normalization spans {} features but the model has {m} inputs",
            p.norm.u_scale.len()
        )));
    }
    check_mask_generator(artifact.mask_b, artifact.mask_delta_b, m, dec_hidden)?;
    artifact.training.validate()?;
    let header = ModelHeader {
        schema: SCHEMA_VERSION,
        kind: "autoencoder-model".into(),
        m,
        latent,
        enc_hidden,
        dec_hidden,
        nnz: p.dec_w2.nnz(),
        activation: p.activation.label().into(),
        mask_b: artifact.mask_b,
        mask_delta_b: artifact.mask_delta_b,
        seed: artifact.seed,
        range: p.norm.range.label().into(),
        training: artifact.training.clone(),
        ordering: ORDERING.into(),
    };
    let mut bytes = encode_header(&header)?;
    push_matrix(&mut bytes, p.enc_w1.view());
    push_f64s(&mut bytes, p.enc_b1.iter().cloned());
    push_matrix(&mut bytes, p.enc_w2.view());
    push_f64s(&mut bytes, p.enc_b2.iter().cloned());
    push_matrix(&mut bytes, p.dec_w1.view());
    push_f64s(&mut bytes, p.dec_b1.iter().cloned());
    let mut indptr = Vec::with_capacity(m + 1);
    indptr.push(0usize);
    let mut indices = Vec::with_capacity(p.dec_w2.nnz());
    for i in 0..m {
        let (cols, _) = p.dec_w2.row(i);
        indices.extend_from_slice(cols);
        indptr.push(indices.len());
    }
    push_u64s(&mut bytes, indptr);
    push_u64s(&mut bytes, indices);
    push_f64s(&mut bytes, p.dec_w2.values().iter().cloned());
    push_f64s(&mut bytes, p.norm.u_scale.iter().cloned());
    push_f64s(&mut bytes, p.norm.u_ref.iter().cloned());
    write_file(path.as_ref(), &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let header: ModelHeader = read_header(&mut reader, "autoencoder-model")?;
    let (m, latent) = (header.m, header.latent);
    let (enc_hidden, dec_hidden) = (header.enc_hidden, header.dec_hidden);
    if m == 0 || latent == 0 || enc_hidden == 0 || dec_hidden == 0 {
        return Err(fail("model dimensions must be positive"));
    }
    check_mask_generator(header.mask_b, header.mask_delta_b, m, dec_hidden)
        .map_err(|e| fail(e.to_string()))?;
    let activation =
        Activation::from_label(&header.activation).map_err(|e| fail(e.to_string()))?;
    let range = TargetRange::from_label(&header.range).map_err(|e| fail(e.to_string()))?;
    header.training.validate().map_err(|e| fail(e.to_string()))?;

    let enc_w1 = read_matrix(&mut reader, enc_hidden, m, "enc_w1")?;
    let enc_b1 = Array1::from_vec(read_f64s(&mut reader, enc_hidden, "enc_b1")?);
    let enc_w2 = read_matrix(&mut reader, latent, enc_hidden, "enc_w2")?;
    let enc_b2 = Array1::from_vec(read_f64s(&mut reader, latent, "enc_b2")?);
    let dec_w1 = read_matrix(&mut reader, dec_hidden, latent, "dec_w1")?;
    let dec_b1 = Array1::from_vec(read_f64s(&mut reader, dec_hidden, "dec_b1")?);
    let indptr = read_u64s(&mut reader, m + 1, "mask row pointers")?;
    if indptr[0] != 0 || indptr[m] != header.nnz || indptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(fail("mask row pointers are not a monotone span of nnz"));
    }
    let indices = read_u64s(&mut reader, header.nnz, "mask column indices")?;
    let values = read_f64s(&mut reader, header.nnz, "masked decoder values")?;
    let u_scale = Array1::from_vec(read_f64s(&mut reader, m, "u_scale")?);
    let u_ref = Array1::from_vec(read_f64s(&mut reader, m, "u_ref")?);
    expect_eof(&mut reader)?;

    let rows: Vec<Vec<usize>> = (0..m)
        .map(|i| indices[indptr[i]..indptr[i + 1]].to_vec())
        .collect();
    let mask = MaskMatrix::from_rows(dec_hidden, rows)
        .map_err(|e| fail(format!("mask structure invalid: {e}")))?;
    let mut dec_w2 = MaskedMatrix::zeros(&mask);
    dec_w2.values_mut().copy_from_slice(&values);

    Ok(ModelArtifact {
        params: AutoencoderParams {
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            dec_w1,
            dec_b1,
            dec_w2,
            activation,
            norm: NormalizationStats {
                u_scale,
                u_ref,
                range,
            },
        },
        mask_b: header.mask_b,
        mask_delta_b: header.mask_delta_b,
        seed: header.seed,
        training: header.training,
    })
}

/// One row of the results table; `n_r`/`n_z` are empty for solvers without
/// hyper-reduction. `speedup` is fom_seconds / rom_seconds as recorded by
/// the producer.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub config_id: String,
    pub f: usize,
    pub n_r: Option<usize>,
    pub n_z: Option<usize>,
    pub max_rel_error: f64,
    pub fom_seconds: f64,
    pub rom_seconds: f64,
    pub speedup: f64,
}

fn opt_cell(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(cell: &str, what: &str, line: usize) -> Result<Option<usize>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<usize>()
        .map(Some)
        .map_err(|_| fail(format!("row {line}: {what} is not an integer: '{cell}'")))
}

fn parse_f64(cell: &str, what: &str, line: usize) -> Result<f64> {
    cell.parse::<f64>()
        .map_err(|_| fail(format!("row {line}: {what} is not a number: '{cell}'")))
}

fn parse_usize(cell: &str, what: &str, line: usize) -> Result<usize> {
    cell.parse::<usize>()
        .map_err(|_| fail(format!("row {line}: {what} is not an integer: '{cell}'")))
}

/// Write the results CSV with [`RESULTS_HEADER`] as the first line.
pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let mut text = String::from(RESULTS_HEADER);
    text.push('\n');
    for row in rows {
        if row.config_id.contains([',', '\n', '\r']) {
            return Err(Error::Invalid(format!(
                "config id '{}' may not contain commas or line breaks",
                row.config_id
            )));
        }
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.config_id,
            row.f,
            opt_cell(row.n_r),
            opt_cell(row.n_z),
            row.max_rel_error,
            row.fom_seconds,
            row.rom_seconds,
            row.speedup
        ));
    }
    write_file(path.as_ref(), text.as_bytes())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == RESULTS_HEADER => {}
        Some(other) => {
            return Err(fail(format!(
                "unexpected results header '{other}'; expected '{RESULTS_HEADER}'"
            )))
        }
        None => return Err(fail("empty results file")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let n = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(fail(format!(
                "row {n}: expected 8 columns, found {}",
                cells.len()
            )));
        }
        rows.push(ResultRow {
            config_id: cells[0].to_string(),
            f: parse_usize(cells[1], "f", n)?,
            n_r: parse_opt(cells[2], "n_r", n)?,
            n_z: parse_opt(cells[3], "n_z", n)?,
            max_rel_error: parse_f64(cells[4], "max_rel_error", n)?,
            fom_seconds: parse_f64(cells[5], "fom_seconds", n)?,
            rom_seconds: parse_f64(cells[6], "rom_seconds", n)?,
            speedup: parse_f64(cells[7], "speedup", n)?,
        });
    }
    Ok(rows)
}

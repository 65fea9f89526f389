//! Snapshot assembly, feature normalization, and proper orthogonal
//! decomposition.
//!
//! Solution trajectories are stacked into a snapshot matrix (one state per
//! column, time-major within each parameter), optionally shifted by a
//! reference state. A thin SVD of that matrix yields the linear basis used by
//! subspace solvers; per-feature affine normalization statistics computed from
//! the same matrix feed the network training pipeline.

use crate::linalg::thin_svd_view;
use crate::timestep::Trajectory;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Interval the normalized data is mapped onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TargetRange {
    /// Map each feature's observed span onto [-1, 1].
    SymmetricUnit,
    /// Map each feature's observed span onto [0, 1].
    ZeroOne,
}

impl TargetRange {
    /// Interval endpoints (a, b).
    pub fn endpoints(self) -> (f64, f64) {
        match self {
            TargetRange::SymmetricUnit => (-1.0, 1.0),
            TargetRange::ZeroOne => (0.0, 1.0),
        }
    }

    /// Name used in configs and file headers.
    pub fn label(self) -> &'static str {
        match self {
            TargetRange::SymmetricUnit => "symmetric_unit",
            TargetRange::ZeroOne => "zero_one",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "symmetric_unit" => Ok(TargetRange::SymmetricUnit),
            "zero_one" => Ok(TargetRange::ZeroOne),
            other => Err(Error::invalid(format!(
                "unknown normalization range '{other}' (expected 'symmetric_unit' or 'zero_one')"
            ))),
        }
    }
}

/// Per-feature affine normalization x -> u_scale * (x - u_ref).
#[derive(Debug, Clone)]
pub struct NormalizationStats {
    pub u_scale: Array1<f64>,
    pub u_ref: Array1<f64>,
    pub range: TargetRange,
}

impl NormalizationStats {
    /// Identity normalization (scale one, reference zero) for m features.
    pub fn identity(m: usize, range: TargetRange) -> Self {
        NormalizationStats {
            u_scale: Array1::ones(m),
            u_ref: Array1::zeros(m),
            range,
        }
    }

    pub fn dim(&self) -> usize {
        self.u_scale.len()
    }

    /// Forward map u_scale * (x - u_ref).
    pub fn normalize(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut out = &x - &self.u_ref;
        out *= &self.u_scale;
        out
    }

    /// Inverse map x / u_scale + u_ref.
    pub fn denormalize(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut out = x.to_owned();
        out /= &self.u_scale;
        out += &self.u_ref;
        out
    }
}

/// Column-stacked solution states with their originating parameters.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    /// m x (n_train * states_per_parameter), one state per column.
    pub data: Array2<f64>,
    /// Parameter value behind each block of columns.
    pub parameters: Vec<f64>,
    /// Number of consecutive columns contributed by each parameter.
    pub states_per_parameter: usize,
}

impl SnapshotMatrix {
    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }
}

/// Stack trajectory states minus `u_ref` into columns, time-major within each
/// parameter: column (k * (nt+1) + n) holds trajectory k's state n.
pub fn assemble_snapshots(trajectories: &[Trajectory], u_ref: ArrayView1<f64>) -> Result<SnapshotMatrix> {
    if trajectories.is_empty() {
        return Err(Error::invalid("snapshot assembly needs at least one trajectory"));
    }
    let m = trajectories[0]
        .states
        .first()
        .ok_or_else(|| Error::invalid("trajectory with no states"))?
        .len();
    let per = trajectories[0].states.len();
    if u_ref.len() != m {
        return Err(Error::dim(format!(
            "reference state has {} entries, states have {m}",
            u_ref.len()
        )));
    }
    for traj in trajectories {
        if traj.states.len() != per {
            return Err(Error::dim(format!(
                "trajectories disagree on state count: {} vs {per}",
                traj.states.len()
            )));
        }
        if traj.states.iter().any(|s| s.len() != m) {
            return Err(Error::dim("trajectory states disagree on dimension"));
        }
    }
    let mut data = Array2::zeros((m, trajectories.len() * per));
    for (k, traj) in trajectories.iter().enumerate() {
        for (n, state) in traj.states.iter().enumerate() {
            let mut col = data.column_mut(k * per + n);
            col.assign(state);
            col -= &u_ref;
        }
    }
    Ok(SnapshotMatrix {
        data,
        parameters: trajectories.iter().map(|t| t.mu).collect(),
        states_per_parameter: per,
    })
}

/// Per-feature affine statistics sending observed min/max onto the target
/// range endpoints. A constant feature gets scale one and maps to zero.
pub fn compute_normalization(snapshots: &SnapshotMatrix, range: TargetRange) -> Result<NormalizationStats> {
    let (a, b) = range.endpoints();
    let m = snapshots.dim();
    let mut u_scale = Array1::ones(m);
    let mut u_ref = Array1::zeros(m);
    for (i, row) in snapshots.data.axis_iter(Axis(0)).enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in row {
            if !v.is_finite() {
                return Err(Error::numerical(format!("non-finite snapshot entry in feature {i}")));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            let scale = (b - a) / (hi - lo);
            u_scale[i] = scale;
            u_ref[i] = lo - a / scale;
        } else {
            // Constant feature: scale one, reference the constant itself.
            u_scale[i] = 1.0;
            u_ref[i] = lo;
        }
    }
    Ok(NormalizationStats { u_scale, u_ref, range })
}

/// Orthonormal basis of leading left singular vectors.
#[derive(Debug, Clone)]
pub struct PodBasis {
    /// m x n_s with orthonormal columns.
    pub phi: Array2<f64>,
    /// All singular values of the snapshot matrix, descending.
    pub singular_values: Array1<f64>,
}

impl PodBasis {
    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn width(&self) -> usize {
        self.phi.ncols()
    }

    /// Basis restricted to its leading `n_s` columns.
    pub fn truncate(&self, n_s: usize) -> Result<PodBasis> {
        if n_s == 0 || n_s > self.width() {
            return Err(Error::invalid(format!(
                "cannot truncate width-{} basis to {n_s} columns",
                self.width()
            )));
        }
        Ok(PodBasis {
            phi: self.phi.slice(ndarray::s![.., ..n_s]).to_owned(),
            singular_values: self.singular_values.clone(),
        })
    }
}

/// Leading `n_s` left singular vectors of the snapshot matrix. Errors when
/// `n_s` exceeds the numerical rank (singular values below 1e-12 relative to
/// the largest do not count toward rank).
pub fn compute_pod_basis(snapshots: &SnapshotMatrix, n_s: usize) -> Result<PodBasis> {
    if n_s == 0 {
        return Err(Error::invalid("basis width must be at least 1"));
    }
    let svd = thin_svd_view(snapshots.data.view())?;
    let rank = svd.numerical_rank();
    if n_s > rank {
        return Err(Error::invalid(format!(
            "basis width {n_s} exceeds snapshot matrix numerical rank {rank}"
        )));
    }
    Ok(PodBasis {
        phi: svd.u.slice(ndarray::s![.., ..n_s]).to_owned(),
        singular_values: svd.sigma,
    })
}

/// Relative out-of-subspace content of a trajectory:
/// sqrt(sum_n ||(I - Phi Phi^T)(u^n - u_ref)||^2) / sqrt(sum_n ||u^n||^2),
/// summed over states 1..=nt (the initial state is excluded).
pub fn linear_projection_error(
    traj: &Trajectory,
    phi: ArrayView2<f64>,
    u_ref: ArrayView1<f64>,
) -> Result<f64> {
    if phi.ncols() == 0 {
        return Err(Error::invalid("projection error needs a basis of width at least 1"));
    }
    let m = phi.nrows();
    if u_ref.len() != m || traj.states.iter().any(|s| s.len() != m) {
        return Err(Error::dim("projection error: inconsistent dimensions"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for state in traj.states.iter().skip(1) {
        let shifted = state - &u_ref;
        let coeffs = phi.t().dot(&shifted);
        let residual = &shifted - &phi.dot(&coeffs);
        num += residual.dot(&residual);
        den += state.dot(state);
    }
    if den <= 0.0 {
        return Err(Error::numerical("projection error denominator is zero (all states zero)"));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timestep::TimeGrid;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy_trajectory(states: Vec<Array1<f64>>, mu: f64) -> Trajectory {
        let nt = states.len() - 1;
        Trajectory {
            states,
            grid: TimeGrid::new(1.0, nt.max(1)).unwrap(),
            mu,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn normalization_endpoint_examples() {
        // Feature spans: row 0 spans [0, 2], row 1 spans [0, 1], row 2 constant 5.
        let data = array![[0.0, 2.0, 1.0], [0.0, 0.5, 1.0], [5.0, 5.0, 5.0]];
        let snaps = SnapshotMatrix {
            data,
            parameters: vec![1.0],
            states_per_parameter: 3,
        };
        let sym = compute_normalization(&snaps, TargetRange::SymmetricUnit).unwrap();
        assert_abs_diff_eq!(sym.u_scale[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sym.u_ref[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sym.u_scale[2], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sym.u_ref[2], 5.0, epsilon = 1e-15);

        let zo = compute_normalization(&snaps, TargetRange::ZeroOne).unwrap();
        assert_abs_diff_eq!(zo.u_scale[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(zo.u_ref[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn normalized_data_lies_in_target_range() {
        let data = Array2::from_shape_fn((7, 13), |(i, j)| ((i * 17 + j * 3) as f64).sin() * (i + 1) as f64);
        let snaps = SnapshotMatrix {
            data: data.clone(),
            parameters: vec![0.5],
            states_per_parameter: 13,
        };
        for range in [TargetRange::SymmetricUnit, TargetRange::ZeroOne] {
            let stats = compute_normalization(&snaps, range).unwrap();
            let (a, b) = range.endpoints();
            for col in data.axis_iter(Axis(1)) {
                let z = stats.normalize(col);
                for &v in &z {
                    assert!(v >= a - 1e-12 && v <= b + 1e-12, "{v} outside [{a}, {b}]");
                }
                let back = stats.denormalize(z.view());
                for (x, y) in col.iter().zip(back.iter()) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-12);
                }
            }
            // Endpoints are attained per feature.
            for row in 0..7 {
                let zrow: Vec<f64> = data
                    .row(row)
                    .iter()
                    .map(|&v| stats.u_scale[row] * (v - stats.u_ref[row]))
                    .collect();
                let lo = zrow.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = zrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_abs_diff_eq!(lo, a, epsilon = 1e-12);
                assert_abs_diff_eq!(hi, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn assembly_orders_columns_time_major_within_parameter() {
        let t1 = toy_trajectory(vec![array![1.0, 2.0], array![3.0, 4.0]], 0.1);
        let t2 = toy_trajectory(vec![array![5.0, 6.0], array![7.0, 8.0]], 0.2);
        let u_ref = array![1.0, 1.0];
        let snaps = assemble_snapshots(&[t1, t2], u_ref.view()).unwrap();
        assert_eq!(snaps.ncols(), 4);
        assert_eq!(snaps.states_per_parameter, 2);
        assert_eq!(snaps.parameters, vec![0.1, 0.2]);
        // Column (k * per + n) = trajectory k state n minus u_ref.
        assert_eq!(snaps.data.column(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(snaps.data.column(1).to_vec(), vec![2.0, 3.0]);
        assert_eq!(snaps.data.column(2).to_vec(), vec![4.0, 5.0]);
        assert_eq!(snaps.data.column(3).to_vec(), vec![6.0, 7.0]);
    }

    #[test]
    fn assembly_rejects_mismatched_dimensions() {
        let t1 = toy_trajectory(vec![array![1.0, 2.0]], 0.1);
        let t2 = toy_trajectory(vec![array![1.0, 2.0, 3.0]], 0.2);
        let u_ref = array![0.0, 0.0];
        assert!(assemble_snapshots(&[t1, t2], u_ref.view()).is_err());
    }

    #[test]
    fn pod_of_repeated_vector_is_that_vector_normalized() {
        let v = array![3.0, 0.0, 4.0];
        let data = ndarray::stack![Axis(1), v, v, v];
        let snaps = SnapshotMatrix {
            data,
            parameters: vec![1.0],
            states_per_parameter: 3,
        };
        let basis = compute_pod_basis(&snaps, 1).unwrap();
        let phi0 = basis.phi.column(0);
        let expected = &v / 5.0;
        let sign = if phi0[0] * expected[0] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..3 {
            assert_abs_diff_eq!(sign * phi0[i], expected[i], epsilon = 1e-12);
        }
        // Width 2 exceeds rank 1.
        assert!(compute_pod_basis(&snaps, 2).is_err());
    }

    #[test]
    fn pod_singular_values_match_orthogonal_column_norms() {
        let data = array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let snaps = SnapshotMatrix {
            data,
            parameters: vec![1.0],
            states_per_parameter: 3,
        };
        let basis = compute_pod_basis(&snaps, 3).unwrap();
        assert_abs_diff_eq!(basis.singular_values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.singular_values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(basis.singular_values[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn truncation_energy_identity_holds() {
        // ||S - Phi Phi^T S||_F^2 equals the sum of squared trailing singular values.
        let data = Array2::from_shape_fn((9, 6), |(i, j)| ((i as f64 + 1.3) * (j as f64 + 0.7)).sin());
        let snaps = SnapshotMatrix {
            data: data.clone(),
            parameters: vec![1.0],
            states_per_parameter: 6,
        };
        let full = compute_pod_basis(&snaps, 2).unwrap();
        let phi = &full.phi;
        let residual = &data - &phi.dot(&phi.t().dot(&data));
        let err2: f64 = residual.iter().map(|v| v * v).sum();
        let tail2: f64 = full.singular_values.iter().skip(2).map(|s| s * s).sum();
        assert_abs_diff_eq!(err2, tail2, epsilon = 1e-10);
    }

    #[test]
    fn projection_error_zero_inside_span_and_hand_value_outside() {
        // Basis e1 in R^2, u_ref = 0. States (1,0) and (0,2) after the initial state.
        let phi = array![[1.0], [0.0]];
        let u_ref = array![0.0, 0.0];
        let inside = toy_trajectory(vec![array![9.0, 9.0], array![1.0, 0.0], array![2.0, 0.0]], 0.1);
        let err = linear_projection_error(&inside, phi.view(), u_ref.view()).unwrap();
        assert_abs_diff_eq!(err, 0.0, epsilon = 1e-14);

        let outside = toy_trajectory(vec![array![9.0, 9.0], array![1.0, 0.0], array![0.0, 2.0]], 0.1);
        // Residuals: (0,0) then (0,2); norms: 1 and 2. sqrt(4) / sqrt(5).
        let err = linear_projection_error(&outside, phi.view(), u_ref.view()).unwrap();
        assert_abs_diff_eq!(err, 2.0 / 5.0_f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn projection_error_non_increasing_in_basis_width() {
        let data = Array2::from_shape_fn((8, 10), |(i, j)| (((i + 1) * (j + 1)) as f64 * 0.31).cos());
        let snaps = SnapshotMatrix {
            data: data.clone(),
            parameters: vec![1.0],
            states_per_parameter: 10,
        };
        let states: Vec<Array1<f64>> = (0..5)
            .map(|j| data.column(j).to_owned() + 0.01 * (j as f64))
            .collect();
        let traj = toy_trajectory(states, 0.1);
        let u_ref = Array1::zeros(8);
        let full = compute_pod_basis(&snaps, 6).unwrap();
        let mut prev = f64::INFINITY;
        for n_s in 1..=6 {
            let basis = full.truncate(n_s).unwrap();
            let err = linear_projection_error(&traj, basis.phi.view(), u_ref.view()).unwrap();
            assert!(err <= prev + 1e-12, "width {n_s}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn all_zero_trajectory_is_rejected() {
        let phi = array![[1.0], [0.0]];
        let u_ref = array![0.0, 0.0];
        let traj = toy_trajectory(vec![array![0.0, 0.0], array![0.0, 0.0]], 0.1);
        assert!(linear_projection_error(&traj, phi.view(), u_ref.view()).is_err());
    }

    #[test]
    fn basis_columns_are_orthonormal() {
        let data = Array2::from_shape_fn((12, 9), |(i, j)| (((i + 2) * (j + 1)) as f64 * 0.17).sin());
        let snaps = SnapshotMatrix {
            data,
            parameters: vec![1.0],
            states_per_parameter: 9,
        };
        let basis = compute_pod_basis(&snaps, 5).unwrap();
        let gram = basis.phi.t().dot(&basis.phi);
        let dev: f64 = (&gram - &Array2::<f64>::eye(5)).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dev <= 1e-10 * 5.0, "orthonormality deviation {dev}");
    }
}

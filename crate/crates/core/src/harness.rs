//! Experiment harness: strict TOML configuration, file-backed artifact
//! management, single reduced runs, concurrent parameter sweeps, a-posteriori
//! bound checks, and flop-model curves.
//!
//! Artifacts (trajectories, bases, trained models) live in an output
//! directory and are computed on first use, then reloaded; a file that does
//! not match the active configuration is reported as an error rather than
//! silently recomputed. Wall-clock columns come from the solver loops only,
//! never from file I/O. Sweep cells are pure functions of (config, seed) and
//! may run concurrently; aggregation preserves cell order, and a failed cell
//! becomes a row with max relative error exactly 1 (the convention used when
//! plotting solver failures) and NaN times.

use crate::analysis::{
    check_error_bound, estimate_lipschitz, flop_estimate, BoundCheckReport, BoundVariant,
    CostKind, CostModelInput,
};
use crate::autoencoder::{
    build_mask_1d, build_mask_2d, extract_scaled_maps, train_autoencoder, Activation, MaskMatrix,
    TrainingConfig,
};
use crate::burgers::{Mesh1D, Mesh2D, Model1D, Model2D, SemiDiscreteModel};
use crate::hyper::{
    build_gappy_operator, greedy_select_indices, residual_basis_from_solution_snapshots,
    run_hr_rom, HrClosure, HrContext,
};
use crate::io::{
    load_matrix, load_model, load_trajectory, save_matrix, save_model, save_trajectory,
    ModelArtifact, ResultRow,
};
use crate::pod::{
    assemble_snapshots, compute_normalization, compute_pod_basis, SnapshotMatrix, TargetRange,
};
use crate::rom::{
    run_rom, DecoderBlock, Projection, Representation, RomProblem, RomTrajectory,
};
use crate::timestep::{run_fom, Integrator, LinearMultistepScheme, TimeGrid, Trajectory};
use crate::burgers::StateVector;
use crate::{par, Error, Result};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Which parameterized problem a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "burgers-1d")]
    Burgers1d,
    #[serde(rename = "burgers-2d")]
    Burgers2d,
}

impl ProblemKind {
    /// Short tag used in config ids and file names.
    pub fn tag(self) -> &'static str {
        match self {
            ProblemKind::Burgers1d => "1d",
            ProblemKind::Burgers2d => "2d",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub nx: usize,
    /// 2D only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    /// Reynolds number, 2D only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<f64>,
    pub t_final: f64,
    pub nt: usize,
    pub train_mu: Vec<f64>,
    pub test_mu: Vec<f64>,
}

fn default_activation() -> String {
    Activation::Swish.label().into()
}

fn default_target_range() -> String {
    TargetRange::SymmetricUnit.label().into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSection {
    /// Latent width per solution component.
    pub latent: usize,
    /// Encoder hidden width; defaults to twice the component dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enc_hidden: Option<usize>,
    pub mask_b: usize,
    pub mask_delta_b: usize,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_target_range")]
    pub target_range: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomSection {
    /// Solver variants to run, by name (see [`RomKind`]).
    pub kinds: Vec<String>,
    /// Residual basis widths for hyper-reduced kinds.
    #[serde(default)]
    pub n_r: Vec<usize>,
    /// Residual sample counts for hyper-reduced kinds.
    #[serde(default)]
    pub n_z: Vec<usize>,
}

fn default_output_dir() -> String {
    "runs".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Training seeds; empty means "use the training section's seed".
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            output_dir: default_output_dir(),
            seeds: Vec::new(),
        }
    }
}

/// One experiment: problem, network, training, solver variants, and output
/// conventions. Parsed strictly from TOML; unknown keys are errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub autoencoder: AutoencoderSection,
    pub training: TrainingConfig,
    pub rom: RomSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("config not serializable: {e}")))
    }

    /// The 1D setup: nx = 1001, T = 0.5, nt = 500, two training parameters
    /// around the test point, swish activation, and the sparsity generator
    /// that gives a 12024-wide decoder hidden layer.
    pub fn default_1d() -> Self {
        ExperimentConfig {
            problem: ProblemSection {
                kind: ProblemKind::Burgers1d,
                nx: 1001,
                ny: None,
                re: None,
                t_final: 0.5,
                nt: 500,
                train_mu: vec![0.9, 1.1],
                test_mu: vec![1.0],
            },
            autoencoder: AutoencoderSection {
                latent: 5,
                enc_hidden: None,
                mask_b: 36,
                mask_delta_b: 12,
                activation: default_activation(),
                target_range: default_target_range(),
            },
            training: TrainingConfig {
                batch_size: 20,
                max_epochs: 10000,
                initial_lr: 1e-3,
                lr_decay_factor: 0.1,
                lr_patience: 10,
                early_stop_patience: 200,
                seed: 0,
                validation_fraction: 0.1,
                overfit_ratio: 3.0,
            },
            rom: RomSection {
                kinds: vec![RomKind::NmLspg.name().into()],
                n_r: vec![31],
                n_z: vec![47],
            },
            experiment: ExperimentSection::default(),
        }
    }

    /// The 2D setup. Desk scale is nx = ny = 40 with nt = 500; `paper_scale`
    /// restores nx = ny = 60 with nt = 1500.
    pub fn default_2d(paper_scale: bool) -> Self {
        let (n, nt) = if paper_scale { (60, 1500) } else { (40, 500) };
        ExperimentConfig {
            problem: ProblemSection {
                kind: ProblemKind::Burgers2d,
                nx: n,
                ny: Some(n),
                re: Some(10000.0),
                t_final: 2.0,
                nt,
                train_mu: vec![0.9, 0.95, 1.05, 1.1],
                test_mu: vec![1.0],
            },
            autoencoder: AutoencoderSection {
                latent: 5,
                enc_hidden: None,
                mask_b: 100,
                mask_delta_b: 10,
                activation: default_activation(),
                target_range: default_target_range(),
            },
            training: TrainingConfig {
                batch_size: 240,
                max_epochs: 10000,
                initial_lr: 1e-3,
                lr_decay_factor: 0.1,
                lr_patience: 10,
                early_stop_patience: 200,
                seed: 0,
                validation_fraction: 0.1,
                overfit_ratio: 3.0,
            },
            rom: RomSection {
                kinds: vec![RomKind::NmLspg.name().into()],
                n_r: vec![40],
                n_z: vec![60],
            },
            experiment: ExperimentSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        match p.kind {
            ProblemKind::Burgers1d => {
                if p.nx < 3 {
                    return Err(Error::Invalid(format!("problem.nx must be >= 3, got {}", p.nx)));
                }
                if p.ny.is_some() || p.re.is_some() {
                    return Err(Error::Invalid(
                        "problem.ny and problem.re apply to burgers-2d only".into(),
                    ));
                }
            }
            ProblemKind::Burgers2d => {
                let ny = p.ny.ok_or_else(|| {
                    Error::Invalid("problem.ny is required for burgers-2d".into())
                })?;
                if p.nx < 3 || ny < 3 {
                    return Err(Error::Invalid(format!(
                        "problem.nx and problem.ny must be >= 3, got {} x {ny}",
                        p.nx
                    )));
                }
                let re = p.re.ok_or_else(|| {
                    Error::Invalid("problem.re is required for burgers-2d".into())
                })?;
                if !re.is_finite() || re <= 0.0 {
                    return Err(Error::Invalid(format!("problem.re must be positive, got {re}")));
                }
            }
        }
        if !(p.t_final.is_finite() && p.t_final > 0.0) || p.nt == 0 {
            return Err(Error::Invalid(format!(
                "problem needs t_final > 0 and nt >= 1, got t_final={}, nt={}",
                p.t_final, p.nt
            )));
        }
        if p.train_mu.is_empty() {
            return Err(Error::Invalid("problem.train_mu must be nonempty".into()));
        }
        for &mu in p.train_mu.iter().chain(&p.test_mu) {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::Invalid(format!("parameters must be positive, got {mu}")));
            }
        }

        let a = &self.autoencoder;
        if a.latent == 0 {
            return Err(Error::Invalid("autoencoder.latent must be at least 1".into()));
        }
        if a.latent > self.block_dims()[0] {
            return Err(Error::Invalid(format!(
                "autoencoder.latent {} exceeds the component dimension {}",
                a.latent,
                self.block_dims()[0]
            )));
        }
        if a.enc_hidden == Some(0) {
            return Err(Error::Invalid("autoencoder.enc_hidden must be at least 1".into()));
        }
        if a.mask_b == 0 || a.mask_delta_b == 0 {
            return Err(Error::Invalid(
                "autoencoder.mask_b and mask_delta_b must be at least 1".into(),
            ));
        }
        self.activation()?;
        self.target_range()?;
        self.training.validate()?;

        if self.rom.kinds.is_empty() {
            return Err(Error::Invalid("rom.kinds must list at least one solver".into()));
        }
        let kinds = self.rom_kinds()?;
        if kinds.iter().any(|k| k.is_hyper_reduced()) {
            if self.rom.n_r.is_empty() || self.rom.n_z.is_empty() {
                return Err(Error::Invalid(
                    "hyper-reduced kinds need rom.n_r and rom.n_z".into(),
                ));
            }
            if self.rom.n_r.iter().chain(&self.rom.n_z).any(|&v| v == 0) {
                return Err(Error::Invalid("rom.n_r and rom.n_z entries must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::from_label(&self.autoencoder.activation)
    }

    pub fn target_range(&self) -> Result<TargetRange> {
        TargetRange::from_label(&self.autoencoder.target_range)
    }

    /// Parsed solver variants, in config order.
    pub fn rom_kinds(&self) -> Result<Vec<RomKind>> {
        self.rom.kinds.iter().map(|s| RomKind::from_name(s)).collect()
    }

    /// Training seeds to iterate; defaults to the training section's seed.
    pub fn seeds(&self) -> Vec<u64> {
        if self.experiment.seeds.is_empty() {
            vec![self.training.seed]
        } else {
            self.experiment.seeds.clone()
        }
    }

    /// Full state dimension.
    pub fn state_dim(&self) -> usize {
        self.block_dims().iter().sum()
    }

    /// Dimension of each solution component (one for 1D, two for 2D).
    pub fn block_dims(&self) -> Vec<usize> {
        match self.problem.kind {
            ProblemKind::Burgers1d => vec![self.problem.nx - 1],
            ProblemKind::Burgers2d => {
                let ny = self.problem.ny.unwrap_or(3);
                let n_xy = (self.problem.nx - 2) * (ny - 2);
                vec![n_xy, n_xy]
            }
        }
    }

    /// Contiguous state range of each component.
    pub fn block_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for m in self.block_dims() {
            out.push((start, start + m));
            start += m;
        }
        out
    }

    /// Component names used in artifact file names.
    pub fn block_names(&self) -> Vec<&'static str> {
        match self.problem.kind {
            ProblemKind::Burgers1d => vec!["u"],
            ProblemKind::Burgers2d => vec!["u", "v"],
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.problem.t_final, self.problem.nt)
    }

    /// Time integrator used throughout the experiments.
    pub fn integrator(&self) -> Integrator {
        Integrator::Lmm(LinearMultistepScheme::backward_euler())
    }

    pub fn build_model(&self, mu: f64) -> Result<Box<dyn SemiDiscreteModel>> {
        match self.problem.kind {
            ProblemKind::Burgers1d => {
                let mesh = Mesh1D::new(self.problem.nx)?;
                Ok(Box::new(Model1D::new(mesh, mu)?))
            }
            ProblemKind::Burgers2d => {
                let ny = self
                    .problem
                    .ny
                    .ok_or_else(|| Error::Invalid("problem.ny is required for burgers-2d".into()))?;
                let re = self
                    .problem
                    .re
                    .ok_or_else(|| Error::Invalid("problem.re is required for burgers-2d".into()))?;
                let mesh = Mesh2D::new(self.problem.nx, ny)?;
                Ok(Box::new(Model2D::new(mesh, mu, re)?))
            }
        }
    }

    /// Encoder hidden width for a component of dimension `m_block`.
    pub fn enc_hidden_for(&self, m_block: usize) -> usize {
        self.autoencoder.enc_hidden.unwrap_or(2 * m_block)
    }

    /// Decoder mask shared by all components.
    pub fn block_mask(&self) -> Result<MaskMatrix> {
        let (b, db) = (self.autoencoder.mask_b, self.autoencoder.mask_delta_b);
        match self.problem.kind {
            ProblemKind::Burgers1d => build_mask_1d(self.block_dims()[0], b, db),
            ProblemKind::Burgers2d => {
                let ny = self
                    .problem
                    .ny
                    .ok_or_else(|| Error::Invalid("problem.ny is required for burgers-2d".into()))?;
                build_mask_2d(self.problem.nx - 2, ny - 2, b, db)
            }
        }
    }

    /// Training hyperparameters with the seed replaced.
    pub fn training_for_seed(&self, seed: u64) -> TrainingConfig {
        let mut tc = self.training.clone();
        tc.seed = seed;
        tc
    }
}

/// The eight reduced-solver variants: linear-subspace or manifold
/// representation, Galerkin or LSPG projection, with or without
/// hyper-reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomKind {
    LsGalerkin,
    LsLspg,
    NmGalerkin,
    NmLspg,
    LsGalerkinHr,
    LsLspgHr,
    NmGalerkinHr,
    NmLspgHr,
}

impl RomKind {
    pub const ALL: [RomKind; 8] = [
        RomKind::LsGalerkin,
        RomKind::LsLspg,
        RomKind::NmGalerkin,
        RomKind::NmLspg,
        RomKind::LsGalerkinHr,
        RomKind::LsLspgHr,
        RomKind::NmGalerkinHr,
        RomKind::NmLspgHr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RomKind::LsGalerkin => "ls-galerkin",
            RomKind::LsLspg => "ls-lspg",
            RomKind::NmGalerkin => "nm-galerkin",
            RomKind::NmLspg => "nm-lspg",
            RomKind::LsGalerkinHr => "ls-galerkin-hr",
            RomKind::LsLspgHr => "ls-lspg-hr",
            RomKind::NmGalerkinHr => "nm-galerkin-hr",
            RomKind::NmLspgHr => "nm-lspg-hr",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Invalid(format!(
                    "unknown solver kind '{name}'; expected one of {}",
                    names.join(", ")
                ))
            })
    }

    /// True for the manifold (autoencoder) representations.
    pub fn is_manifold(self) -> bool {
        matches!(
            self,
            RomKind::NmGalerkin | RomKind::NmLspg | RomKind::NmGalerkinHr | RomKind::NmLspgHr
        )
    }

    pub fn is_hyper_reduced(self) -> bool {
        matches!(
            self,
            RomKind::LsGalerkinHr | RomKind::LsLspgHr | RomKind::NmGalerkinHr | RomKind::NmLspgHr
        )
    }

    pub fn projection(self) -> Projection {
        match self {
            RomKind::LsGalerkin | RomKind::NmGalerkin | RomKind::LsGalerkinHr | RomKind::NmGalerkinHr => {
                Projection::Galerkin
            }
            _ => Projection::Lspg,
        }
    }
}

/// Identifier recorded with every result row; encodes problem, solver,
/// latent width, sampling sizes, parameter, and seed.
pub fn config_id(
    cfg: &ExperimentConfig,
    kind: RomKind,
    mu: f64,
    n_r: Option<usize>,
    n_z: Option<usize>,
    seed: u64,
) -> String {
    let mut id = format!(
        "{}-{}-f{}",
        cfg.problem.kind.tag(),
        kind.name(),
        cfg.autoencoder.latent
    );
    if let Some(nr) = n_r {
        id.push_str(&format!("-nr{nr}"));
    }
    if let Some(nz) = n_z {
        id.push_str(&format!("-nz{nz}"));
    }
    id.push_str(&format!("-mu{mu}-seed{seed}"));
    id
}

pub fn fom_path(out: &Path, mu: f64) -> PathBuf {
    out.join(format!("fom-mu{mu}.traj"))
}

pub fn model_path(out: &Path, block: &str, seed: u64) -> PathBuf {
    out.join(format!("model-{block}-seed{seed}.bin"))
}

pub fn solution_basis_path(out: &Path, block: &str) -> PathBuf {
    out.join(format!("basis-solution-{block}.mat"))
}

pub fn residual_basis_path(out: &Path) -> PathBuf {
    out.join("basis-residual.mat")
}

fn stale(path: &Path, what: &str) -> Error {
    Error::Invalid(format!(
        "{} at {} does not match the active configuration; \
         delete it or choose another output directory",
        what,
        path.display()
    ))
}

/// Load the full-order trajectory at `mu`, computing and saving it first if
/// the file does not exist.
pub fn ensure_fom(cfg: &ExperimentConfig, out: &Path, mu: f64) -> Result<Trajectory> {
    let path = fom_path(out, mu);
    if path.exists() {
        let traj = load_trajectory(&path)?;
        let grid = cfg.grid()?;
        let matches = traj.states.first().map(|s| s.len()) == Some(cfg.state_dim())
            && traj.grid.nt == grid.nt
            && (traj.grid.t_final - grid.t_final).abs() <= 1e-12 * grid.t_final
            && traj.mu == mu;
        if !matches {
            return Err(stale(&path, "trajectory"));
        }
        return Ok(traj);
    }
    let model = cfg.build_model(mu)?;
    let traj = run_fom(model.as_ref(), &cfg.integrator(), &cfg.grid()?, mu)?;
    std::fs::create_dir_all(out)?;
    save_trajectory(&path, &traj)?;
    Ok(traj)
}

/// Stack the training trajectories into deviation snapshots, shifting each
/// trajectory by its own parameter's initial state.
pub fn deviation_snapshots(
    cfg: &ExperimentConfig,
    trajectories: &[Trajectory],
) -> Result<SnapshotMatrix> {
    if trajectories.is_empty() {
        return Err(Error::Invalid("snapshot assembly needs at least one trajectory".into()));
    }
    let m = cfg.state_dim();
    let per = trajectories[0].states.len();
    let mut data = Array2::zeros((m, trajectories.len() * per));
    for (k, traj) in trajectories.iter().enumerate() {
        let u0 = cfg.build_model(traj.mu)?.initial_state();
        let block = assemble_snapshots(std::slice::from_ref(traj), u0.view())?;
        if block.data.nrows() != m || block.data.ncols() != per {
            return Err(Error::Dimension(
                "trajectories disagree on state dimension or step count".into(),
            ));
        }
        data.slice_mut(s![.., k * per..(k + 1) * per]).assign(&block.data);
    }
    Ok(SnapshotMatrix {
        data,
        parameters: trajectories.iter().map(|t| t.mu).collect(),
        states_per_parameter: per,
    })
}

fn training_trajectories(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Trajectory>> {
    cfg.problem
        .train_mu
        .iter()
        .map(|&mu| ensure_fom(cfg, out, mu))
        .collect()
}

fn block_snapshots(snaps: &SnapshotMatrix, r0: usize, r1: usize) -> SnapshotMatrix {
    SnapshotMatrix {
        data: snaps.data.slice(s![r0..r1, ..]).to_owned(),
        parameters: snaps.parameters.clone(),
        states_per_parameter: snaps.states_per_parameter,
    }
}

/// Load the trained autoencoder for every component at `seed`, training and
/// saving any that are missing. Training data are the deviation snapshots of
/// the training parameter set.
pub fn ensure_models(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Vec<ModelArtifact>> {
    let names = cfg.block_names();
    let ranges = cfg.block_ranges();
    let activation = cfg.activation()?;
    let range = cfg.target_range()?;
    let training = cfg.training_for_seed(seed);

    let mut artifacts = Vec::with_capacity(names.len());
    let mut snaps: Option<SnapshotMatrix> = None;
    for (name, &(r0, r1)) in names.iter().zip(&ranges) {
        let path = model_path(out, name, seed);
        if path.exists() {
            let artifact = load_model(&path)?;
            let p = &artifact.params;
            let matches = p.input_dim() == r1 - r0
                && p.latent_dim() == cfg.autoencoder.latent
                && p.encoder_hidden() == cfg.enc_hidden_for(r1 - r0)
                && p.activation == activation
                && p.norm.range == range
                && artifact.mask_b == cfg.autoencoder.mask_b
                && artifact.mask_delta_b == cfg.autoencoder.mask_delta_b
                && artifact.seed == seed
                && artifact.training == training;
            if !matches {
                return Err(stale(&path, "model"));
            }
            artifacts.push(artifact);
            continue;
        }

        if snaps.is_none() {
            let trajs = training_trajectories(cfg, out)?;
            snaps = Some(deviation_snapshots(cfg, &trajs)?);
        }
        let block = block_snapshots(snaps.as_ref().unwrap(), r0, r1);
        let norm = compute_normalization(&block, range)?;
        let mask = cfg.block_mask()?;
        let result = train_autoencoder(
            block.data.view(),
            &mask,
            cfg.autoencoder.latent,
            cfg.enc_hidden_for(r1 - r0),
            activation,
            norm,
            &training,
        )?;
        let artifact = ModelArtifact {
            params: result.params,
            mask_b: cfg.autoencoder.mask_b,
            mask_delta_b: cfg.autoencoder.mask_delta_b,
            seed,
            training: training.clone(),
        };
        std::fs::create_dir_all(out)?;
        save_model(&path, &artifact)?;
        artifacts.push(artifact);
    }
    Ok(artifacts)
}

/// Load the per-component solution bases (each `latent` columns wide),
/// computing and saving them first if missing.
pub fn ensure_solution_bases(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Array2<f64>>> {
    let f = cfg.autoencoder.latent;
    let names = cfg.block_names();
    let ranges = cfg.block_ranges();
    let mut bases = Vec::with_capacity(names.len());
    let mut snaps: Option<SnapshotMatrix> = None;
    for (name, &(r0, r1)) in names.iter().zip(&ranges) {
        let path = solution_basis_path(out, name);
        if path.exists() {
            let (label, phi) = load_matrix(&path)?;
            if label != "solution-pod" || phi.nrows() != r1 - r0 || phi.ncols() < f {
                return Err(stale(&path, "solution basis"));
            }
            bases.push(phi.slice(s![.., ..f]).to_owned());
            continue;
        }
        if snaps.is_none() {
            let trajs = training_trajectories(cfg, out)?;
            snaps = Some(deviation_snapshots(cfg, &trajs)?);
        }
        let block = block_snapshots(snaps.as_ref().unwrap(), r0, r1);
        let phi = compute_pod_basis(&block, f)?.phi;
        std::fs::create_dir_all(out)?;
        save_matrix(&path, "solution-pod", phi.view())?;
        bases.push(phi);
    }
    Ok(bases)
}

/// Load the stacked residual basis at least `width` columns wide, computing
/// and saving it first if missing. The basis comes from solution snapshots.
pub fn ensure_residual_basis(cfg: &ExperimentConfig, out: &Path, width: usize) -> Result<Array2<f64>> {
    let path = residual_basis_path(out);
    if path.exists() {
        let (label, phi) = load_matrix(&path)?;
        if label != "residual-pod" || phi.nrows() != cfg.state_dim() || phi.ncols() < width {
            return Err(stale(&path, "residual basis"));
        }
        return Ok(phi);
    }
    let save_width = width.max(cfg.rom.n_r.iter().copied().max().unwrap_or(width));
    let trajs = training_trajectories(cfg, out)?;
    let snaps = deviation_snapshots(cfg, &trajs)?;
    let phi = residual_basis_from_solution_snapshots(&snaps, save_width)?;
    std::fs::create_dir_all(out)?;
    save_matrix(&path, "residual-pod", phi.view())?;
    Ok(phi)
}

fn linear_representation(bases: &[Array2<f64>], u0: &StateVector) -> Result<Representation> {
    Representation::linear_blocks(bases.to_vec(), u0.clone())
}

/// Assemble the manifold representation at a test parameter: the trained
/// scaled maps with the parameter's initial state folded into the reference,
/// so decode(encode(u0)) recovers u0.
fn manifold_representation(
    cfg: &ExperimentConfig,
    models: &[ModelArtifact],
    u0: &StateVector,
) -> Result<Representation> {
    let mut blocks = Vec::with_capacity(models.len());
    for (artifact, (r0, r1)) in models.iter().zip(cfg.block_ranges()) {
        let (mut encoder, mut decoder) = extract_scaled_maps(&artifact.params);
        let u0_block = u0.slice(s![r0..r1]);
        encoder.u_ref += &u0_block;
        decoder.u_ref += &u0_block;
        blocks.push(DecoderBlock { encoder, decoder });
    }
    Representation::manifold(blocks)
}

/// A single reduced solve plus its bookkeeping.
#[derive(Debug)]
pub struct RomRunOutput {
    pub row: ResultRow,
    pub trajectory: RomTrajectory,
    /// Residual sample indices (hyper-reduced kinds only), sorted.
    pub samples: Option<Vec<usize>>,
    /// Stencil closure of the samples (hyper-reduced kinds only), sorted.
    pub closure: Option<Vec<usize>>,
}

struct CellSpec {
    kind: RomKind,
    mu: f64,
    n_r: Option<usize>,
    n_z: Option<usize>,
}

struct CellInputs<'a> {
    cfg: &'a ExperimentConfig,
    fom: &'a Trajectory,
    models: Option<&'a [ModelArtifact]>,
    bases: Option<&'a [Array2<f64>]>,
    residual_basis: Option<&'a Array2<f64>>,
    seed: u64,
}

fn run_cell(spec: &CellSpec, inputs: &CellInputs) -> Result<RomRunOutput> {
    let cfg = inputs.cfg;
    let grid = cfg.grid()?;
    let model = cfg.build_model(spec.mu)?;
    let u0 = model.initial_state();

    let representation = if spec.kind.is_manifold() {
        let models = inputs
            .models
            .ok_or_else(|| Error::Invalid("manifold kinds need trained models".into()))?;
        manifold_representation(cfg, models, &u0)?
    } else {
        let bases = inputs
            .bases
            .ok_or_else(|| Error::Invalid("linear kinds need solution bases".into()))?;
        linear_representation(bases, &u0)?
    };
    let problem = RomProblem::new(
        model.as_ref(),
        cfg.integrator(),
        grid,
        representation,
        spec.kind.projection(),
    )?;

    let (rom, samples, closure) = if spec.kind.is_hyper_reduced() {
        let n_r = spec
            .n_r
            .ok_or_else(|| Error::Invalid("hyper-reduced kinds need n_r".into()))?;
        let n_z = spec
            .n_z
            .ok_or_else(|| Error::Invalid("hyper-reduced kinds need n_z".into()))?;
        let full = inputs
            .residual_basis
            .ok_or_else(|| Error::Invalid("hyper-reduced kinds need a residual basis".into()))?;
        if full.ncols() < n_r {
            return Err(Error::Invalid(format!(
                "residual basis holds {} columns but n_r = {n_r}",
                full.ncols()
            )));
        }
        let phi_r = full.slice(s![.., ..n_r]).to_owned();
        let samples = greedy_select_indices(phi_r.view(), n_z)?;
        let closure = HrClosure::build(model.as_ref(), &samples)?;
        let sample_list = samples.indices().to_vec();
        let closure_list = closure.indices().to_vec();
        let operator = build_gappy_operator(&phi_r, samples)?;
        let ctx = HrContext::new(&problem, operator, closure)?;
        (run_hr_rom(&problem, &ctx)?, Some(sample_list), Some(closure_list))
    } else {
        (run_rom(&problem)?, None, None)
    };

    let report = crate::analysis::max_relative_error(&rom.states, &inputs.fom.states)?;
    let id = config_id(cfg, spec.kind, spec.mu, spec.n_r, spec.n_z, inputs.seed);
    let row = ResultRow {
        config_id: id,
        f: cfg.autoencoder.latent,
        n_r: spec.n_r,
        n_z: spec.n_z,
        max_rel_error: report.max_relative,
        fom_seconds: inputs.fom.wall_seconds,
        rom_seconds: rom.wall_seconds,
        speedup: inputs.fom.wall_seconds / rom.wall_seconds,
    };
    Ok(RomRunOutput {
        row,
        trajectory: rom,
        samples,
        closure,
    })
}

/// Run one solver variant at one test parameter, managing artifacts through
/// the output directory. `n_r`/`n_z` default to the first configured entries
/// for hyper-reduced kinds and are ignored otherwise.
pub fn run_single(
    cfg: &ExperimentConfig,
    out: &Path,
    kind: RomKind,
    mu: f64,
    n_r: Option<usize>,
    n_z: Option<usize>,
    seed: u64,
) -> Result<RomRunOutput> {
    let fom = ensure_fom(cfg, out, mu)?;
    let (n_r, n_z) = if kind.is_hyper_reduced() {
        let nr = n_r
            .or_else(|| cfg.rom.n_r.first().copied())
            .ok_or_else(|| Error::Invalid("hyper-reduced kinds need n_r".into()))?;
        let nz = n_z
            .or_else(|| cfg.rom.n_z.first().copied())
            .ok_or_else(|| Error::Invalid("hyper-reduced kinds need n_z".into()))?;
        (Some(nr), Some(nz))
    } else {
        (None, None)
    };

    let models = if kind.is_manifold() {
        Some(ensure_models(cfg, out, seed)?)
    } else {
        None
    };
    let bases = if kind.is_manifold() {
        None
    } else {
        Some(ensure_solution_bases(cfg, out)?)
    };
    let residual_basis = match n_r {
        Some(nr) => Some(ensure_residual_basis(cfg, out, nr)?),
        None => None,
    };

    let spec = CellSpec { kind, mu, n_r, n_z };
    let inputs = CellInputs {
        cfg,
        fom: &fom,
        models: models.as_deref(),
        bases: bases.as_deref(),
        residual_basis: residual_basis.as_ref(),
        seed,
    };
    run_cell(&spec, &inputs)
}

/// Rows of one sweep, in cell order, plus diagnostics for any failed cells.
#[derive(Debug, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    /// One line per failed cell, in cell order.
    pub diagnostics: Vec<String>,
}

/// Run the full grid: every test parameter crossed with every configured
/// solver kind, hyper-reduced kinds additionally crossed with n_r x n_z.
/// Independent cells run concurrently; artifacts are prepared up front and
/// shared read-only. A failed cell is recorded with max relative error 1 and
/// NaN times, and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<ResultTable> {
    cfg.validate()?;
    if cfg.problem.test_mu.is_empty() {
        return Ok(ResultTable::default());
    }
    let kinds = cfg.rom_kinds()?;
    let seed = cfg.seeds()[0];

    let foms: Vec<Trajectory> = cfg
        .problem
        .test_mu
        .iter()
        .map(|&mu| ensure_fom(cfg, out, mu))
        .collect::<Result<_>>()?;
    let models = if kinds.iter().any(|k| k.is_manifold()) {
        Some(ensure_models(cfg, out, seed)?)
    } else {
        None
    };
    let bases = if kinds.iter().any(|k| !k.is_manifold()) {
        Some(ensure_solution_bases(cfg, out)?)
    } else {
        None
    };
    let residual_basis = if kinds.iter().any(|k| k.is_hyper_reduced()) {
        let width = cfg.rom.n_r.iter().copied().max().unwrap_or(1);
        Some(ensure_residual_basis(cfg, out, width)?)
    } else {
        None
    };

    let mut cells: Vec<(CellSpec, usize)> = Vec::new();
    for (mu_idx, &mu) in cfg.problem.test_mu.iter().enumerate() {
        for &kind in &kinds {
            if kind.is_hyper_reduced() {
                for &nr in &cfg.rom.n_r {
                    for &nz in &cfg.rom.n_z {
                        cells.push((
                            CellSpec { kind, mu, n_r: Some(nr), n_z: Some(nz) },
                            mu_idx,
                        ));
                    }
                }
            } else {
                cells.push((CellSpec { kind, mu, n_r: None, n_z: None }, mu_idx));
            }
        }
    }

    let outcomes: Vec<(ResultRow, Option<String>)> = par::map_indexed(cells.len(), |i| {
        let (spec, mu_idx) = &cells[i];
        let inputs = CellInputs {
            cfg,
            fom: &foms[*mu_idx],
            models: models.as_deref(),
            bases: bases.as_deref(),
            residual_basis: residual_basis.as_ref(),
            seed,
        };
        match run_cell(spec, &inputs) {
            Ok(output) => (output.row, None),
            Err(e) => {
                let id = config_id(cfg, spec.kind, spec.mu, spec.n_r, spec.n_z, seed);
                let row = ResultRow {
                    config_id: id.clone(),
                    f: cfg.autoencoder.latent,
                    n_r: spec.n_r,
                    n_z: spec.n_z,
                    max_rel_error: 1.0,
                    fom_seconds: foms[*mu_idx].wall_seconds,
                    rom_seconds: f64::NAN,
                    speedup: f64::NAN,
                };
                (row, Some(format!("cell {id} failed: {e}")))
            }
        }
    });

    let mut table = ResultTable::default();
    for (row, diagnostic) in outcomes {
        table.rows.push(row);
        if let Some(line) = diagnostic {
            table.diagnostics.push(line);
        }
    }
    Ok(table)
}

/// Map a bound variant to the solver kind it checks.
pub fn bound_kind(variant: BoundVariant) -> RomKind {
    match variant {
        BoundVariant::NmGalerkinHr => RomKind::NmGalerkinHr,
        BoundVariant::NmLspgHr => RomKind::NmLspgHr,
    }
}

/// For every configured seed: train (or load) the models, run the
/// hyper-reduced manifold solver at the first test parameter, and check the
/// a-posteriori error bound step by step against the full-order run. The
/// Lipschitz estimate comes from the union of both trajectories' states.
pub fn run_bound_checks(
    cfg: &ExperimentConfig,
    out: &Path,
    variant: BoundVariant,
) -> Result<Vec<(u64, BoundCheckReport)>> {
    cfg.validate()?;
    let mu = *cfg
        .problem
        .test_mu
        .first()
        .ok_or_else(|| Error::Invalid("bound checks need at least one test parameter".into()))?;
    let n_r = *cfg
        .rom
        .n_r
        .first()
        .ok_or_else(|| Error::Invalid("bound checks need rom.n_r".into()))?;
    let n_z = *cfg
        .rom
        .n_z
        .first()
        .ok_or_else(|| Error::Invalid("bound checks need rom.n_z".into()))?;
    let kind = bound_kind(variant);

    let fom = ensure_fom(cfg, out, mu)?;
    let grid = cfg.grid()?;
    let model = cfg.build_model(mu)?;
    let full = ensure_residual_basis(cfg, out, n_r)?;
    let phi_r = full.slice(s![.., ..n_r]).to_owned();

    let mut reports = Vec::new();
    for seed in cfg.seeds() {
        let models = ensure_models(cfg, out, seed)?;
        let representation = manifold_representation(cfg, &models, &model.initial_state())?;
        let problem = RomProblem::new(
            model.as_ref(),
            cfg.integrator(),
            grid,
            representation,
            kind.projection(),
        )?;
        let samples = greedy_select_indices(phi_r.view(), n_z)?;
        let closure = HrClosure::build(model.as_ref(), &samples)?;
        let operator = build_gappy_operator(&phi_r, samples)?;
        let ctx = HrContext::new(&problem, operator, closure)?;
        let rom = run_hr_rom(&problem, &ctx)?;

        let mut states = fom.states.clone();
        states.extend(rom.states.iter().cloned());
        let lipschitz = estimate_lipschitz(model.as_ref(), &states);
        let report = check_error_bound(variant, &problem, &ctx.operator, &fom, &rom, lipschitz)?;
        reports.push((seed, report));
    }
    Ok(reports)
}

/// One point of the flop-model curves.
#[derive(Debug, Clone, Copy)]
pub struct CostCurveRow {
    pub m: usize,
    pub nm_lspg: f64,
    pub nm_lspg_hr: f64,
    pub ls_lspg: f64,
    pub ls_lspg_hr: f64,
}

/// Evaluate the four flop-model curves on a log-spaced grid of state
/// dimensions in `[m_lo, m_hi]`, with latent width, sample count, and mask
/// generator taken from the configuration and the sampled-column fraction
/// set to z / m at every point. Grid points below the sample count are
/// skipped (the model requires z <= m).
pub fn cost_curve_rows(
    cfg: &ExperimentConfig,
    m_lo: f64,
    m_hi: f64,
) -> Result<Vec<CostCurveRow>> {
    if !(m_lo.is_finite() && m_hi.is_finite()) || m_lo < 1.0 || m_hi < m_lo {
        return Err(Error::Invalid(format!(
            "cost sweep needs 1 <= m_lo <= m_hi, got {m_lo}:{m_hi}"
        )));
    }
    let f = cfg.autoencoder.latent;
    let z = *cfg
        .rom
        .n_z
        .first()
        .ok_or_else(|| Error::Invalid("cost curves need rom.n_z".into()))?;
    let (b, db) = (cfg.autoencoder.mask_b, cfg.autoencoder.mask_delta_b);

    const POINTS_PER_DECADE: f64 = 8.0;
    let k_lo = (m_lo.log10() * POINTS_PER_DECADE).ceil() as i64;
    let k_hi = (m_hi.log10() * POINTS_PER_DECADE).floor() as i64;
    let mut ms: Vec<usize> = (k_lo..=k_hi)
        .map(|k| 10f64.powf(k as f64 / POINTS_PER_DECADE).round() as usize)
        .filter(|&m| m >= z.max(f))
        .collect();
    ms.dedup();
    if ms.is_empty() {
        return Err(Error::Invalid(format!(
            "no valid grid points in {m_lo}:{m_hi} with z = {z}"
        )));
    }

    ms.into_iter()
        .map(|m| {
            let beta = z as f64 / m as f64;
            let input = CostModelInput::new(m, f, z, b, db, beta)?;
            Ok(CostCurveRow {
                m,
                nm_lspg: flop_estimate(CostKind::NmLspg, &input),
                nm_lspg_hr: flop_estimate(CostKind::NmLspgHr, &input),
                ls_lspg: flop_estimate(CostKind::LsLspg, &input),
                ls_lspg_hr: flop_estimate(CostKind::LsLspgHr, &input),
            })
        })
        .collect()
}

/// Fixed column order of the cost-curve CSV.
pub const COST_HEADER: &str = "m,nm_lspg,nm_lspg_hr,ls_lspg,ls_lspg_hr";

pub fn write_cost_curves(path: impl AsRef<Path>, rows: &[CostCurveRow]) -> Result<()> {
    let mut text = String::from(COST_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.m, r.nm_lspg, r.nm_lspg_hr, r.ls_lspg, r.ls_lspg_hr
        ));
    }
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Coarse 1D setup that trains in well under a second.
    fn tiny_1d() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_1d();
        cfg.problem.nx = 33;
        cfg.problem.nt = 10;
        cfg.problem.t_final = 0.2;
        cfg.autoencoder.latent = 3;
        cfg.autoencoder.enc_hidden = Some(12);
        cfg.autoencoder.mask_b = 3;
        cfg.autoencoder.mask_delta_b = 1;
        cfg.training.batch_size = 8;
        cfg.training.max_epochs = 5;
        cfg.training.lr_patience = 2;
        cfg.training.early_stop_patience = 4;
        cfg.rom.kinds = vec!["ls-lspg".into()];
        cfg.rom.n_r = vec![5];
        cfg.rom.n_z = vec![8];
        cfg.validate().unwrap();
        cfg
    }

    fn tiny_2d() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_2d(false);
        cfg.problem.nx = 8;
        cfg.problem.ny = Some(8);
        cfg.problem.nt = 10;
        cfg.problem.t_final = 0.5;
        cfg.problem.re = Some(100.0);
        cfg.autoencoder.latent = 2;
        cfg.autoencoder.enc_hidden = Some(10);
        cfg.autoencoder.mask_b = 2;
        cfg.autoencoder.mask_delta_b = 1;
        cfg.training.batch_size = 8;
        cfg.training.max_epochs = 4;
        cfg.training.lr_patience = 2;
        cfg.training.early_stop_patience = 3;
        cfg.problem.train_mu = vec![0.9, 1.1];
        cfg.rom.kinds = vec!["ls-lspg".into()];
        cfg.rom.n_r = vec![4];
        cfg.rom.n_z = vec![10];
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn default_configs_validate_and_round_trip() {
        for cfg in [
            ExperimentConfig::default_1d(),
            ExperimentConfig::default_2d(false),
            ExperimentConfig::default_2d(true),
        ] {
            cfg.validate().unwrap();
            let text = cfg.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back.problem.nx, cfg.problem.nx);
            assert_eq!(back.problem.train_mu, cfg.problem.train_mu);
            assert_eq!(back.training, cfg.training);
            assert_eq!(back.rom.kinds, cfg.rom.kinds);
        }
        let paper = ExperimentConfig::default_2d(true);
        assert_eq!((paper.problem.nx, paper.problem.nt), (60, 1500));
        let desk = ExperimentConfig::default_2d(false);
        assert_eq!((desk.problem.nx, desk.problem.nt), (40, 500));
    }

    #[test]
    fn strict_parsing_rejects_bad_configs() {
        let good = ExperimentConfig::default_1d().to_toml_string().unwrap();
        assert!(ExperimentConfig::from_toml_str(&good).is_ok());

        let unknown_key = format!("{good}\n[problem2]\nnx = 3\n");
        let err = ExperimentConfig::from_toml_str(&unknown_key).unwrap_err();
        assert!(err.to_string().contains("config parse error"), "{err}");

        let typo = good.replace("nx = 1001", "nx = 1001\nnnx = 5");
        assert!(ExperimentConfig::from_toml_str(&typo).is_err());

        let bad_kind = good.replace("burgers-1d", "burgers-3d");
        assert!(ExperimentConfig::from_toml_str(&bad_kind).is_err());

        let mut with_ny = ExperimentConfig::default_1d();
        with_ny.problem.ny = Some(5);
        let err = with_ny.validate().unwrap_err();
        assert!(err.to_string().contains("burgers-2d only"), "{err}");

        let mut bad_act = ExperimentConfig::default_1d();
        bad_act.autoencoder.activation = "relu".into();
        assert!(bad_act.validate().is_err());

        let mut bad_solver = ExperimentConfig::default_1d();
        bad_solver.rom.kinds = vec!["nm-lspg-hrx".into()];
        let err = bad_solver.validate().unwrap_err();
        assert!(err.to_string().contains("unknown solver kind"), "{err}");
    }

    #[test]
    fn kind_names_round_trip_and_classify() {
        for kind in RomKind::ALL {
            assert_eq!(RomKind::from_name(kind.name()).unwrap(), kind);
        }
        assert!(RomKind::NmLspgHr.is_manifold() && RomKind::NmLspgHr.is_hyper_reduced());
        assert!(!RomKind::LsGalerkin.is_manifold() && !RomKind::LsGalerkin.is_hyper_reduced());
        assert_eq!(RomKind::NmGalerkinHr.projection(), Projection::Galerkin);
        assert_eq!(RomKind::LsLspgHr.projection(), Projection::Lspg);
    }

    #[test]
    fn config_ids_are_stable_and_self_describing() {
        let cfg = ExperimentConfig::default_1d();
        assert_eq!(
            config_id(&cfg, RomKind::NmLspgHr, 1.0, Some(31), Some(47), 0),
            "1d-nm-lspg-hr-f5-nr31-nz47-mu1-seed0"
        );
        assert_eq!(
            config_id(&cfg, RomKind::LsGalerkin, 0.95, None, None, 3),
            "1d-ls-galerkin-f5-mu0.95-seed3"
        );
        let cfg2 = ExperimentConfig::default_2d(false);
        assert!(config_id(&cfg2, RomKind::NmLspg, 1.0, None, None, 0).starts_with("2d-nm-lspg"));
    }

    #[test]
    fn deviation_snapshots_shift_each_trajectory_by_its_own_start() {
        let cfg = tiny_1d();
        let dir = tempdir().unwrap();
        let trajs = training_trajectories(&cfg, dir.path()).unwrap();
        let snaps = deviation_snapshots(&cfg, &trajs).unwrap();
        let per = cfg.problem.nt + 1;
        assert_eq!(snaps.data.dim(), (cfg.state_dim(), 2 * per));
        assert_eq!(snaps.parameters, cfg.problem.train_mu);
        // Column 0 of each block is that trajectory's own initial deviation.
        for k in 0..2 {
            let col = snaps.data.column(k * per);
            assert!(col.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ensure_fom_caches_and_detects_mismatch() {
        let cfg = tiny_1d();
        let dir = tempdir().unwrap();
        let first = ensure_fom(&cfg, dir.path(), 1.0).unwrap();
        assert!(fom_path(dir.path(), 1.0).exists());
        let second = ensure_fom(&cfg, dir.path(), 1.0).unwrap();
        for (a, b) in first.states.iter().zip(&second.states) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let mut other = cfg.clone();
        other.problem.nt = 11;
        let err = ensure_fom(&other, dir.path(), 1.0).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }

    #[test]
    fn linear_sweep_produces_ordered_rows_with_recorded_speedups() {
        let mut cfg = tiny_1d();
        cfg.rom.kinds = vec!["ls-galerkin".into(), "ls-lspg".into()];
        cfg.problem.test_mu = vec![1.0, 1.05];
        let dir = tempdir().unwrap();
        let table = run_sweep(&cfg, dir.path()).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert!(table.diagnostics.is_empty(), "{:?}", table.diagnostics);
        assert_eq!(
            table.rows[0].config_id,
            config_id(&cfg, RomKind::LsGalerkin, 1.0, None, None, 0)
        );
        assert_eq!(
            table.rows[3].config_id,
            config_id(&cfg, RomKind::LsLspg, 1.05, None, None, 0)
        );
        for row in &table.rows {
            assert!(row.max_rel_error.is_finite() && row.max_rel_error < 1.0);
            assert_eq!(row.speedup, row.fom_seconds / row.rom_seconds);
            assert_eq!(row.f, cfg.autoencoder.latent);
        }
    }

    #[test]
    fn empty_test_grid_gives_empty_table() {
        let mut cfg = tiny_1d();
        cfg.problem.test_mu = Vec::new();
        let dir = tempdir().unwrap();
        let table = run_sweep(&cfg, dir.path()).unwrap();
        assert!(table.rows.is_empty());
        assert!(table.diagnostics.is_empty());
    }

    #[test]
    fn failed_cells_are_recorded_and_the_sweep_continues() {
        let mut cfg = tiny_1d();
        // n_z < n_r cannot build a gappy operator; the second combination can.
        cfg.rom.kinds = vec!["ls-lspg-hr".into()];
        cfg.rom.n_r = vec![5];
        cfg.rom.n_z = vec![2, 8];
        let dir = tempdir().unwrap();
        let table = run_sweep(&cfg, dir.path()).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.diagnostics.len(), 1);
        let failed = &table.rows[0];
        assert_eq!(failed.max_rel_error, 1.0);
        assert!(failed.rom_seconds.is_nan() && failed.speedup.is_nan());
        assert!(failed.fom_seconds.is_finite());
        assert!(table.diagnostics[0].contains(&failed.config_id));
        let ok = &table.rows[1];
        assert!(ok.max_rel_error.is_finite() && ok.max_rel_error < 1.0);
    }

    #[test]
    fn manifold_single_runs_and_training_is_cached_and_deterministic() {
        let mut cfg = tiny_1d();
        cfg.rom.kinds = vec!["nm-lspg".into()];
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();

        let out = run_single(&cfg, dir_a.path(), RomKind::NmLspg, 1.0, None, None, 0).unwrap();
        assert!(out.row.max_rel_error.is_finite());
        assert!(out.samples.is_none() && out.closure.is_none());
        assert_eq!(out.trajectory.states.len(), cfg.problem.nt + 1);

        // Same seed in a fresh directory: the model file is byte-identical.
        run_single(&cfg, dir_b.path(), RomKind::NmLspg, 1.0, None, None, 0).unwrap();
        let a = std::fs::read(model_path(dir_a.path(), "u", 0)).unwrap();
        let b = std::fs::read(model_path(dir_b.path(), "u", 0)).unwrap();
        assert_eq!(a, b);

        // Second call loads the cached model and reproduces the error.
        let again = run_single(&cfg, dir_a.path(), RomKind::NmLspg, 1.0, None, None, 0).unwrap();
        assert_eq!(
            again.row.max_rel_error.to_bits(),
            out.row.max_rel_error.to_bits()
        );

        let hr = run_single(
            &cfg,
            dir_a.path(),
            RomKind::NmLspgHr,
            1.0,
            Some(5),
            Some(9),
            0,
        )
        .unwrap();
        let samples = hr.samples.unwrap();
        let closure = hr.closure.unwrap();
        assert_eq!(samples.len(), 9);
        assert!(samples.windows(2).all(|w| w[0] < w[1]));
        assert!(closure.windows(2).all(|w| w[0] < w[1]));
        assert!(samples.iter().all(|s| closure.contains(s)));
        assert!(hr.row.max_rel_error.is_finite());
    }

    #[test]
    fn two_d_sweep_handles_component_blocks() {
        let mut cfg = tiny_2d();
        cfg.rom.kinds = vec!["ls-lspg".into(), "nm-lspg".into()];
        let dir = tempdir().unwrap();
        let table = run_sweep(&cfg, dir.path()).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.diagnostics.is_empty(), "{:?}", table.diagnostics);
        for row in &table.rows {
            assert!(row.max_rel_error.is_finite() && row.max_rel_error < 1.0);
        }
        assert!(model_path(dir.path(), "u", 0).exists());
        assert!(model_path(dir.path(), "v", 0).exists());
        assert_eq!(cfg.block_dims(), vec![36, 36]);
    }

    #[test]
    fn bound_checks_hold_for_every_seed() {
        let mut cfg = tiny_1d();
        cfg.problem.nx = 49;
        cfg.problem.nt = 20;
        cfg.autoencoder.latent = 4;
        cfg.autoencoder.enc_hidden = Some(16);
        cfg.training.max_epochs = 1500;
        cfg.training.lr_patience = 100;
        cfg.training.early_stop_patience = 400;
        cfg.rom.kinds = vec!["nm-lspg-hr".into()];
        cfg.rom.n_r = vec![8];
        cfg.rom.n_z = vec![14];
        cfg.experiment.seeds = vec![3, 7];
        let dir = tempdir().unwrap();
        let reports = run_bound_checks(&cfg, dir.path(), BoundVariant::NmLspgHr).unwrap();
        assert_eq!(reports.len(), 2);
        for (seed, report) in &reports {
            assert!(cfg.experiment.seeds.contains(seed));
            assert_eq!(report.steps.len(), cfg.problem.nt);
            assert!(
                report.all_admissible_steps_hold(),
                "seed {seed}: {:?}",
                report.violations()
            );
        }
    }

    #[test]
    fn cost_curves_match_direct_evaluation_and_validate_input() {
        let cfg = ExperimentConfig::default_1d();
        let rows = cost_curve_rows(&cfg, 1e3, 1e5).unwrap();
        assert!(rows.len() > 10);
        assert!(rows.windows(2).all(|w| w[0].m < w[1].m));
        for row in &rows {
            let z = cfg.rom.n_z[0];
            let input = CostModelInput::new(
                row.m,
                cfg.autoencoder.latent,
                z,
                cfg.autoencoder.mask_b,
                cfg.autoencoder.mask_delta_b,
                z as f64 / row.m as f64,
            )
            .unwrap();
            assert_eq!(row.nm_lspg_hr, flop_estimate(CostKind::NmLspgHr, &input));
            assert!(row.nm_lspg_hr < row.nm_lspg);
            assert!(row.ls_lspg_hr < row.ls_lspg);
        }
        assert!(cost_curve_rows(&cfg, 1e6, 1e3).is_err());
        assert!(cost_curve_rows(&cfg, f64::NAN, 1e3).is_err());

        let dir = tempdir().unwrap();
        let path = dir.path().join("cost.csv");
        write_cost_curves(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(COST_HEADER));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }
}

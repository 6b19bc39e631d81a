//! Estimation of topographic (and plain) ICA filters in whitened space.
//!
//! Each filter `w_i` (row `i` of `W`) gives a response `y_i = w_iᵀ z`. Responses
//! are squared and pooled over the torus neighborhood,
//! `u_i = Σ_j h(i, j) y_j²`, and the model maximizes
//!
//! ```text
//! J(W) = (1/T) Σ_t Σ_i G(u_i(t)),    G(u) = -sqrt(epsilon + u)
//! ```
//!
//! under the constraint that `W` has orthonormal rows. The gradient of `J`
//! with respect to `w_i` is `(2/T) Σ_t z_t y_i(t) r_i(t)` with
//! `r_i = Σ_k h(i, k) g(u_k)` and `g = G'`. Plain ICA is the radius-0 case,
//! where `h` is the identity and every unit is scored independently.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{derive_seed, PatchSet};
use crate::linalg::{orthonormality_error, ROW_BLOCK};
use crate::matrix_io::{fingerprint, join_usize, read_matrix, split_usize, write_matrix, Header};
use crate::topography::Topography;
use crate::whitening::{whiten, WhiteningModel};

/// Smoothing constant inside the square root of `G`.
pub const DEFAULT_EPSILON: f64 = 0.005;
/// Initial gradient step size.
pub const DEFAULT_STEP: f64 = 0.1;

pub const W_FILE: &str = "basis_W.ticm";
pub const A_FILE: &str = "basis_A.ticm";
pub const HEADER_FILE: &str = "basis.txt";
pub const LOG_FILE: &str = "train_log.csv";

/// Condition number of `W Wᵀ` beyond which orthonormalization gives up.
const MAX_CONDITION: f64 = 1e12;

#[inline]
fn big_g(u: f64, epsilon: f64) -> f64 {
    -(epsilon + u).sqrt()
}

#[inline]
fn small_g(u: f64, epsilon: f64) -> f64 {
    -0.5 / (epsilon + u).sqrt()
}

fn check_dims(w: &DMatrix<f64>, k: usize, topo: &Topography) -> Result<()> {
    if w.nrows() != topo.n_units() {
        return Err(Error::DimensionMismatch {
            what: "filters vs lattice units",
            expected: topo.n_units(),
            got: w.nrows(),
        });
    }
    if w.ncols() != k {
        return Err(Error::DimensionMismatch {
            what: "filter length vs whitened dimension",
            expected: w.ncols(),
            got: k,
        });
    }
    Ok(())
}

/// Sums columns of `src` over each unit's neighborhood.
fn pool_columns(src: &DMatrix<f64>, topo: &Topography) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(src.nrows(), src.ncols());
    for i in 0..src.ncols() {
        let mut col = out.column_mut(i);
        for &j in topo.neighborhood(i) {
            col += src.column(j);
        }
    }
    out
}

/// Neighborhood-pooled squared responses `u_i = Σ_j h(i, j) (w_jᵀ z)²`.
pub fn local_energies(w: &DMatrix<f64>, z: &[f64], topo: &Topography) -> Result<Vec<f64>> {
    check_dims(w, z.len(), topo)?;
    let zrow = DMatrix::from_row_slice(1, z.len(), z);
    let sq = (zrow * w.transpose()).map(|y| y * y);
    Ok(pool_columns(&sq, topo).iter().copied().collect())
}

/// Objective and gradient summed (not averaged) over one block of samples.
fn block_terms(
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
    topo: &Topography,
    epsilon: f64,
    with_gradient: bool,
) -> (f64, Option<DMatrix<f64>>) {
    let y = z * w.transpose();
    let u = pool_columns(&y.map(|v| v * v), topo);
    let objective: f64 = u.iter().map(|&ui| big_g(ui, epsilon)).sum();
    if !with_gradient {
        return (objective, None);
    }
    let r = pool_columns(&u.map(|ui| small_g(ui, epsilon)), topo);
    // d(y²)/dy contributes the factor 2
    let m = y.component_mul(&r) * 2.0;
    (objective, Some(m.transpose() * z))
}

/// Objective and (optionally) gradient averaged over all rows of `z`. Rows are
/// processed in fixed blocks whose sums are combined in block order, so the
/// result does not depend on the thread count.
fn averaged_terms(
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
    topo: &Topography,
    epsilon: f64,
    with_gradient: bool,
) -> Result<(f64, Option<DMatrix<f64>>)> {
    check_dims(w, z.ncols(), topo)?;
    let t = z.nrows();
    if t == 0 {
        return Err(Error::DimensionMismatch {
            what: "sample count",
            expected: 1,
            got: 0,
        });
    }
    let starts: Vec<usize> = (0..t).step_by(ROW_BLOCK).collect();
    let parts: Vec<_> = starts
        .par_iter()
        .map(|&s| {
            let len = ROW_BLOCK.min(t - s);
            block_terms(
                w,
                &z.rows(s, len).clone_owned(),
                topo,
                epsilon,
                with_gradient,
            )
        })
        .collect();
    let mut objective = 0.0;
    let mut gradient = with_gradient.then(|| DMatrix::zeros(w.nrows(), w.ncols()));
    for (obj, grad) in parts {
        objective += obj;
        if let (Some(acc), Some(g)) = (gradient.as_mut(), grad) {
            *acc += g;
        }
    }
    let scale = 1.0 / t as f64;
    Ok((objective * scale, gradient.map(|g| g * scale)))
}

/// `J = (1/T) Σ_t Σ_i G(u_i(t))`, higher is better. Rows of `z` are samples.
pub fn tica_objective(
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
    topo: &Topography,
    epsilon: f64,
) -> Result<f64> {
    Ok(averaged_terms(w, z, topo, epsilon, false)?.0)
}

/// Unconstrained gradient of [`tica_objective`] with respect to `W`.
pub fn tica_gradient(
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
    topo: &Topography,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    Ok(averaged_terms(w, z, topo, epsilon, true)?
        .1
        .expect("gradient requested"))
}

/// `(W Wᵀ)^{-1/2} W`: the nearest matrix with orthonormal rows.
pub fn symmetric_orthonormalize(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::SingularMatrix { condition });
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let e = &eig.eigenvectors;
    let m = e * DMatrix::from_diagonal(&inv_sqrt) * e.transpose();
    Ok(m * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Tica,
    Ica,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Tica => "TICA",
            ModelKind::Ica => "ICA",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TICA" => Ok(ModelKind::Tica),
            "ICA" => Ok(ModelKind::Ica),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub step0: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once an accepted pass moves `W` by less than this (Frobenius).
    pub tol: f64,
    pub seed: u64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// Share of whitened samples held out to judge each pass.
    pub holdout_fraction: f64,
    pub step_max: f64,
    pub step_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step0: DEFAULT_STEP,
            epsilon: DEFAULT_EPSILON,
            max_iters: 500,
            tol: 1e-4,
            seed: 0,
            batch_size: None,
            holdout_fraction: 0.1,
            step_max: 1.0,
            step_floor: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.step0 > 0.0) || !(self.step_max >= self.step0) || !(self.step_floor > 0.0) {
            return bad("step sizes must satisfy 0 < step0 <= step_max, step_floor > 0".into());
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            ));
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// One pass of the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRecord {
    pub iteration: usize,
    /// Held-out objective of the current `W` after this pass.
    pub objective: f64,
    /// Step size used for this pass.
    pub step: f64,
    pub accepted: bool,
    pub orthonormality_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisModel {
    w: DMatrix<f64>,
    a: DMatrix<f64>,
    topo: Topography,
    whitening_ref: String,
    kind: ModelKind,
    epsilon: f64,
    seed: u64,
    training_log: Vec<TrainingRecord>,
    hash: String,
}

impl BasisModel {
    /// Assembles a model from filters, computing `A = V_inv Wᵀ`.
    pub fn from_filters(
        w: DMatrix<f64>,
        whitening: &WhiteningModel,
        topo: Topography,
        epsilon: f64,
        seed: u64,
        training_log: Vec<TrainingRecord>,
    ) -> Result<Self> {
        check_dims(&w, whitening.k(), &topo)?;
        let a = whitening.v_inv() * w.transpose();
        let kind = if topo.radius() == 0 {
            ModelKind::Ica
        } else {
            ModelKind::Tica
        };
        let hash = model_hash(&w, &a, &topo, whitening.hash(), kind);
        Ok(BasisModel {
            w,
            a,
            topo,
            whitening_ref: whitening.hash().to_string(),
            kind,
            epsilon,
            seed,
            training_log,
            hash,
        })
    }

    /// Whitened-space filters, one per row.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Pixel-space basis vectors, one per column.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn topography(&self) -> &Topography {
        &self.topo
    }

    pub fn whitening_ref(&self) -> &str {
        &self.whitening_ref
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn training_log(&self) -> &[TrainingRecord] {
        &self.training_log
    }

    pub fn n_units(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.a.nrows()
    }

    /// Side of the square patches the basis images live on, if square.
    pub fn patch_side(&self) -> Option<usize> {
        let p = self.n_pixels();
        let side = (p as f64).sqrt().round() as usize;
        (side * side == p).then_some(side)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn iterations(&self) -> usize {
        self.training_log.last().map_or(0, |r| r.iteration)
    }

    /// Writes `basis_W.ticm`, `basis_A.ticm`, `basis.txt` and `train_log.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_matrix(&dir.join(W_FILE), &self.w)?;
        write_matrix(&dir.join(A_FILE), &self.a)?;
        let mut header = Header::new();
        header
            .set("kind", self.kind)
            .set("epsilon", format!("{:e}", self.epsilon))
            .set("map_width", self.topo.width())
            .set("map_height", self.topo.height())
            .set("radius", self.topo.radius())
            .set("whitening_hash", &self.whitening_ref)
            .set("seed", self.seed)
            .set("iterations", self.iterations())
            .set("n_units", self.n_units())
            .set("n_pixels", self.n_pixels())
            .set("hash", &self.hash);
        if !self.topo.is_identity_layout() {
            header.set("permutation", join_usize(self.topo.cells()));
        }
        header.write(&dir.join(HEADER_FILE))?;
        write_training_log(&dir.join(LOG_FILE), &self.training_log)
    }

    /// Loads a model saved by [`BasisModel::save`]. The training log is not
    /// reloaded.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(HEADER_FILE);
        let header = Header::read(&path)?;
        let width: usize = header.require("map_width", &path)?;
        let height: usize = header.require("map_height", &path)?;
        let radius: usize = header.require("radius", &path)?;
        let cells = match header.get_str("permutation") {
            Some(raw) => split_usize(raw, &path)?,
            None => (0..width * height).collect(),
        };
        let topo = Topography::with_cells(width, height, radius, cells)?;
        let kind: ModelKind = header.require::<String>("kind", &path)?.parse()?;
        let w = read_matrix(&dir.join(W_FILE))?;
        let a = read_matrix(&dir.join(A_FILE))?;
        let whitening_ref: String = header.require("whitening_hash", &path)?;
        if w.nrows() != topo.n_units() || a.ncols() != topo.n_units() {
            return Err(Error::format(
                &path,
                "matrix shapes disagree with the lattice",
            ));
        }
        let hash = model_hash(&w, &a, &topo, &whitening_ref, kind);
        let recorded: String = header.require("hash", &path)?;
        if recorded != hash {
            return Err(Error::ModelMismatch(format!(
                "basis hash {recorded} recorded, {hash} computed"
            )));
        }
        Ok(BasisModel {
            w,
            a,
            topo,
            whitening_ref,
            kind,
            epsilon: header.require("epsilon", &path)?,
            seed: header.require("seed", &path)?,
            training_log: Vec::new(),
            hash,
        })
    }
}

fn model_hash(
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    topo: &Topography,
    whitening_ref: &str,
    kind: ModelKind,
) -> String {
    let layout = format!(
        "{}x{}r{}:{}",
        topo.width(),
        topo.height(),
        topo.radius(),
        join_usize(topo.cells())
    );
    fingerprint(&[w, a], &[&kind.to_string(), &layout, whitening_ref])
}

/// CSV with header `iter,objective,step`.
pub fn write_training_log(path: &Path, log: &[TrainingRecord]) -> Result<()> {
    let mut out = String::from("iter,objective,step\n");
    for r in log {
        out.push_str(&format!("{},{:e},{:e}\n", r.iteration, r.objective, r.step));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Seeded standard-normal filters, symmetrically orthonormalized.
pub fn initial_filters(n: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    symmetric_orthonormalize(&raw)
}

fn select_rows(z: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), z.ncols(), |r, c| z[(rows[r], c)])
}

/// Splits whitened samples into (training, held-out) by a seeded permutation.
fn split_holdout(z: &DMatrix<f64>, config: &TrainConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = z.nrows();
    let n_hold = (t as f64 * config.holdout_fraction).floor() as usize;
    if n_hold == 0 || n_hold >= t {
        return (z.clone(), z.clone());
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        u64::MAX,
    )));
    let (hold, train) = order.split_at(n_hold);
    let mut hold = hold.to_vec();
    let mut train = train.to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (select_rows(z, &train), select_rows(z, &hold))
}

/// Gradient ascent on whitened samples (rows of `z`) from the filters `init`.
///
/// Each pass takes one step per mini-batch (one full-batch step by default),
/// re-orthonormalizing after every step. A pass that improves the held-out
/// objective is kept and the step grows by 1.2 (capped at `step_max`); one that
/// does not is undone and the step halves. Training stops after `max_iters`
/// passes, when an accepted pass moves `W` by less than `tol`, or when the step
/// falls below `step_floor`.
pub fn train_whitened(
    z: &DMatrix<f64>,
    topo: &Topography,
    config: &TrainConfig,
    init: DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<TrainingRecord>)> {
    config.validate()?;
    check_dims(&init, z.ncols(), topo)?;
    let (z_train, z_hold) = split_holdout(z, config);
    let eps = config.epsilon;
    let mut w = symmetric_orthonormalize(&init)?;
    let mut objective = tica_objective(&w, &z_hold, topo, eps)?;
    let mut step = config.step0;
    let mut log = vec![TrainingRecord {
        iteration: 0,
        objective,
        step,
        accepted: true,
        orthonormality_error: orthonormality_error(&w),
    }];
    if !objective.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            objective,
        });
    }
    let t = z_train.nrows();
    let batch = config.batch_size.filter(|&b| b < t);
    for iteration in 1..=config.max_iters {
        let mut candidate = w.clone();
        match batch {
            None => {
                let grad = tica_gradient(&candidate, &z_train, topo, eps)?;
                candidate = symmetric_orthonormalize(&(candidate + grad * step))?;
            }
            Some(size) => {
                let mut order: Vec<usize> = (0..t).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    iteration as u64,
                )));
                for rows in order.chunks(size) {
                    let zb = select_rows(&z_train, rows);
                    let grad = tica_gradient(&candidate, &zb, topo, eps)?;
                    candidate = symmetric_orthonormalize(&(candidate + grad * step))?;
                }
            }
        }
        let candidate_objective = tica_objective(&candidate, &z_hold, topo, eps)?;
        if !candidate_objective.is_finite() {
            return Err(Error::Diverged {
                iteration,
                objective: candidate_objective,
            });
        }
        let used_step = step;
        if candidate_objective > objective {
            let delta = (&candidate - &w).norm();
            w = candidate;
            objective = candidate_objective;
            step = (step * 1.2).min(config.step_max);
            log.push(TrainingRecord {
                iteration,
                objective,
                step: used_step,
                accepted: true,
                orthonormality_error: orthonormality_error(&w),
            });
            if delta < config.tol {
                break;
            }
        } else {
            step *= 0.5;
            log.push(TrainingRecord {
                iteration,
                objective,
                step: used_step,
                accepted: false,
                orthonormality_error: orthonormality_error(&w),
            });
            if step < config.step_floor {
                break;
            }
        }
    }
    Ok((w, log))
}

/// Whitens `patches` with `whitening` and trains filters on the lattice `topo`
/// (`n = k` required). Radius 0 yields an ICA model.
pub fn train(
    patches: &PatchSet,
    whitening: &WhiteningModel,
    topo: &Topography,
    config: &TrainConfig,
) -> Result<BasisModel> {
    config.validate()?;
    let k = whitening.k();
    if topo.n_units() != k {
        return Err(Error::DimensionMismatch {
            what: "lattice units vs retained components",
            expected: k,
            got: topo.n_units(),
        });
    }
    let init = initial_filters(k, k, config.seed)?;
    train_with_init(patches, whitening, topo, config, init)
}

pub fn train_with_init(
    patches: &PatchSet,
    whitening: &WhiteningModel,
    topo: &Topography,
    config: &TrainConfig,
    init: DMatrix<f64>,
) -> Result<BasisModel> {
    let z = whiten(whitening, patches)?;
    let (w, log) = train_whitened(&z, topo, config, init)?;
    BasisModel::from_filters(w, whitening, topo.clone(), config.epsilon, config.seed, log)
}

/// [`train`] with the neighborhood shrunk to radius 0 on the same lattice.
pub fn ica_train(
    patches: &PatchSet,
    whitening: &WhiteningModel,
    topo: &Topography,
    config: &TrainConfig,
) -> Result<BasisModel> {
    train(patches, whitening, &topo.with_radius(0)?, config)
}

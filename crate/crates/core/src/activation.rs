//! Basis activations on test patches, their energies, reconstructions and
//! shuffled controls.
//!
//! A patch `x` activates unit `i` with `s_i = w_iᵀ V x`; its energy is `s_i²`.
//! Reconstruction is `x̂ = A s`, which equals the projection of `x` onto the
//! retained principal subspace.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimation::BasisModel;
use crate::image::PatchSet;
use crate::matrix_io::{read_matrix, write_matrix, Header};
use crate::topography::{check_permutation, random_permutation};
use crate::whitening::WhiteningModel;

pub const ACTIVATIONS_FILE: &str = "activations.ticm";
pub const ENERGIES_FILE: &str = "energies.ticm";
pub const HEADER_FILE: &str = "trace.txt";
pub const CSV_FILE: &str = "activations.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    activations: DMatrix<f64>,
    energies: DMatrix<f64>,
    frame_rate: f64,
    model_ref: String,
    whitening_ref: String,
}

impl ActivationTrace {
    /// Builds a trace from per-frame activations (`n_frames × n_units`).
    pub fn new(
        activations: DMatrix<f64>,
        frame_rate: f64,
        model_ref: impl Into<String>,
        whitening_ref: impl Into<String>,
    ) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        let energies = activations.map(|s| s * s);
        Ok(ActivationTrace {
            activations,
            energies,
            frame_rate,
            model_ref: model_ref.into(),
            whitening_ref: whitening_ref.into(),
        })
    }

    pub fn activations(&self) -> &DMatrix<f64> {
        &self.activations
    }

    pub fn energies(&self) -> &DMatrix<f64> {
        &self.energies
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn model_ref(&self) -> &str {
        &self.model_ref
    }

    pub fn whitening_ref(&self) -> &str {
        &self.whitening_ref
    }

    pub fn n_frames(&self) -> usize {
        self.activations.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.activations.ncols()
    }

    fn with_activations(&self, activations: DMatrix<f64>) -> ActivationTrace {
        ActivationTrace::new(
            activations,
            self.frame_rate,
            &self.model_ref,
            &self.whitening_ref,
        )
        .expect("frame rate already validated")
    }

    /// Writes `activations.ticm`, `energies.ticm`, `trace.txt` and the
    /// `activations.csv` export.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_matrix(&dir.join(ACTIVATIONS_FILE), &self.activations)?;
        write_matrix(&dir.join(ENERGIES_FILE), &self.energies)?;
        let mut header = Header::new();
        header
            .set("frame_rate", self.frame_rate)
            .set("model_hash", &self.model_ref)
            .set("whitening_hash", &self.whitening_ref)
            .set("n_units", self.n_units())
            .set("n_frames", self.n_frames());
        header.write(&dir.join(HEADER_FILE))?;
        write_csv(&dir.join(CSV_FILE), &self.activations)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(HEADER_FILE);
        let header = Header::read(&path)?;
        let activations = read_matrix(&dir.join(ACTIVATIONS_FILE))?;
        let energies = read_matrix(&dir.join(ENERGIES_FILE))?;
        let n_units: usize = header.require("n_units", &path)?;
        let n_frames: usize = header.require("n_frames", &path)?;
        if activations.shape() != (n_frames, n_units) {
            return Err(Error::format(
                &path,
                "activation matrix shape disagrees with header",
            ));
        }
        let trace = ActivationTrace::new(
            activations,
            header.require("frame_rate", &path)?,
            header.require::<String>("model_hash", &path)?,
            header.require::<String>("whitening_hash", &path)?,
        )?;
        if trace.energies != energies {
            return Err(Error::format(
                dir.join(ENERGIES_FILE),
                "energies are not the squared activations",
            ));
        }
        Ok(trace)
    }
}

/// CSV with a `frame,u0,u1,...` header and one row per frame.
pub fn write_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::from("frame");
    for u in 0..m.ncols() {
        out.push_str(&format!(",u{u}"));
    }
    out.push('\n');
    for (t, row) in m.row_iter().enumerate() {
        out.push_str(&t.to_string());
        for v in row.iter() {
            out.push_str(&format!(",{v:e}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Activations `s_t = W V x_t` for every patch.
pub fn compute_activation(
    model: &BasisModel,
    whitening: &WhiteningModel,
    patches: &PatchSet,
    frame_rate: f64,
) -> Result<ActivationTrace> {
    if patches.n_pixels() != whitening.n_pixels() {
        return Err(Error::DimensionMismatch {
            what: "pixels per patch",
            expected: whitening.n_pixels(),
            got: patches.n_pixels(),
        });
    }
    if model.whitening_ref() != whitening.hash() {
        return Err(Error::ModelMismatch(format!(
            "basis was trained against whitening {}, got {}",
            model.whitening_ref(),
            whitening.hash()
        )));
    }
    let filters = model.w() * whitening.v();
    let activations = patches.data() * filters.transpose();
    ActivationTrace::new(activations, frame_rate, model.hash(), whitening.hash())
}

/// `x̂_t = A s_t` for every frame of the trace.
pub fn reconstruct(model: &BasisModel, trace: &ActivationTrace) -> Result<PatchSet> {
    if trace.model_ref() != model.hash() {
        return Err(Error::ModelMismatch(format!(
            "trace came from model {}, got {}",
            trace.model_ref(),
            model.hash()
        )));
    }
    let side = model.patch_side().ok_or(Error::DimensionMismatch {
        what: "square patch pixel count",
        expected: 0,
        got: model.n_pixels(),
    })?;
    let data = trace.activations() * model.a().transpose();
    PatchSet::new(
        data,
        side,
        format!("reconstruction:{}", model.hash()),
        false,
    )
}

/// Reorders frames so that new frame `t` is old frame `order[t]`.
pub fn permute_frames(trace: &ActivationTrace, order: &[usize]) -> Result<ActivationTrace> {
    check_permutation(order, trace.n_frames())?;
    let a = &trace.activations;
    Ok(
        trace.with_activations(DMatrix::from_fn(a.nrows(), a.ncols(), |t, u| {
            a[(order[t], u)]
        })),
    )
}

/// Frames in the seeded random order `random_permutation(n_frames, seed)`.
pub fn shuffle_frames(trace: &ActivationTrace, seed: u64) -> ActivationTrace {
    permute_frames(trace, &random_permutation(trace.n_frames(), seed))
        .expect("random_permutation yields a valid permutation")
}

/// Moves unit `u`'s column to position `perm[u]`.
///
/// Adjacency computed on the relabeled trace over the original lattice matches
/// adjacency computed on the original trace over `topo.permuted(perm)`.
pub fn relabel_trace(trace: &ActivationTrace, perm: &[usize]) -> Result<ActivationTrace> {
    check_permutation(perm, trace.n_units())?;
    let a = &trace.activations;
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (u, &dst) in perm.iter().enumerate() {
        out.set_column(dst, &a.column(u));
    }
    Ok(trace.with_activations(out))
}

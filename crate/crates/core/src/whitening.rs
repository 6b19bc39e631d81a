//! PCA dimensionality reduction with whitening.
//!
//! The whitening transform is `V = D^{-1/2} Eᵀ` where `E D Eᵀ` is the
//! eigendecomposition of the second-moment matrix `E{x xᵀ}` (divisor = number
//! of samples), restricted to the top `k` eigenpairs. `V_inv = E D^{1/2}` maps
//! whitened coordinates back to pixel space.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::PatchSet;
use crate::linalg::{gram_of_columns, sorted_eigen};
use crate::matrix_io::{fingerprint, join_f64, read_matrix, split_f64, write_matrix, Header};

/// Eigenvalues at or below this are treated as a rank deficiency.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub const V_FILE: &str = "whitening_V.ticm";
pub const V_INV_FILE: &str = "whitening_Vinv.ticm";
pub const HEADER_FILE: &str = "whitening.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    hash: String,
}

impl WhiteningModel {
    /// `k × n_pixels` whitening matrix.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// `n_pixels × k` dewhitening matrix.
    pub fn v_inv(&self) -> &DMatrix<f64> {
        &self.v_inv
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn k(&self) -> usize {
        self.v.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.v.ncols()
    }

    /// Content hash identifying this model.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn from_parts(v: DMatrix<f64>, v_inv: DMatrix<f64>, eigenvalues: Vec<f64>) -> Self {
        let hash = fingerprint(&[&v, &v_inv], &[&join_f64(&eigenvalues)]);
        WhiteningModel {
            v,
            v_inv,
            eigenvalues,
            hash,
        }
    }

    /// Writes `whitening_V.ticm`, `whitening_Vinv.ticm` and `whitening.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_matrix(&dir.join(V_FILE), &self.v)?;
        write_matrix(&dir.join(V_INV_FILE), &self.v_inv)?;
        let mut header = Header::new();
        header
            .set("k", self.k())
            .set("n_pixels", self.n_pixels())
            .set("eigenvalues", join_f64(&self.eigenvalues))
            .set("hash", &self.hash);
        header.write(&dir.join(HEADER_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join(HEADER_FILE);
        let header = Header::read(&header_path)?;
        let k: usize = header.require("k", &header_path)?;
        let n_pixels: usize = header.require("n_pixels", &header_path)?;
        let eigenvalues = split_f64(header.get_str("eigenvalues").unwrap_or(""), &header_path)?;
        let v = read_matrix(&dir.join(V_FILE))?;
        let v_inv = read_matrix(&dir.join(V_INV_FILE))?;
        if v.shape() != (k, n_pixels) || v_inv.shape() != (n_pixels, k) || eigenvalues.len() != k {
            return Err(Error::format(
                &header_path,
                "matrix shapes disagree with header",
            ));
        }
        let model = Self::from_parts(v, v_inv, eigenvalues);
        let recorded: String = header.require("hash", &header_path)?;
        if recorded != model.hash {
            return Err(Error::ModelMismatch(format!(
                "whitening hash {} recorded, {} computed",
                recorded, model.hash
            )));
        }
        Ok(model)
    }
}

/// Fits the top-`k` PCA whitening transform to `patches`.
pub fn fit_whitening(patches: &PatchSet, k: usize) -> Result<WhiteningModel> {
    let x = patches.data();
    let (t, p) = x.shape();
    let max_k = t.min(p);
    if k == 0 || k > max_k {
        return Err(Error::BadK { k, max: max_k });
    }
    let scale = 1.0 / t as f64;
    let (values, vectors) = if p <= t {
        sorted_eigen(gram_of_columns(x) * scale)
    } else {
        // Fewer samples than pixels: decompose the T×T Gram matrix X Xᵀ / T and
        // map its eigenvectors u to covariance eigenvectors Xᵀ u / √(T λ).
        let xt = x.transpose();
        let (values, u) = sorted_eigen(gram_of_columns(&xt) * scale);
        let mut mapped = DMatrix::zeros(p, k);
        for i in 0..k {
            if values[i] <= EIGEN_FLOOR {
                break;
            }
            let mut col = &xt * u.column(i) / (t as f64 * values[i]).sqrt();
            crate::linalg::fix_sign(col.as_mut_slice());
            mapped.set_column(i, &col);
        }
        (values, mapped)
    };
    if let Some((index, &value)) = values[..k]
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= EIGEN_FLOOR)
    {
        return Err(Error::RankDeficient {
            index,
            value,
            threshold: EIGEN_FLOOR,
        });
    }
    let eigenvalues = values[..k].to_vec();
    let e_k = vectors.columns(0, k).clone_owned();
    let mut v = e_k.transpose();
    let mut v_inv = e_k;
    for (i, &lambda) in eigenvalues.iter().enumerate() {
        let s = lambda.sqrt();
        v.row_mut(i).iter_mut().for_each(|x| *x /= s);
        v_inv.column_mut(i).iter_mut().for_each(|x| *x *= s);
    }
    Ok(WhiteningModel::from_parts(v, v_inv, eigenvalues))
}

/// Row `t` of the result is `V x_t`.
pub fn whiten(model: &WhiteningModel, patches: &PatchSet) -> Result<DMatrix<f64>> {
    whiten_rows(model, patches.data())
}

pub fn whiten_rows(model: &WhiteningModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.n_pixels() {
        return Err(Error::DimensionMismatch {
            what: "pixels per patch",
            expected: model.n_pixels(),
            got: x.ncols(),
        });
    }
    Ok(x * model.v.transpose())
}

/// Row `t` of the result is `V_inv z_t`.
pub fn dewhiten(model: &WhiteningModel, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != model.k() {
        return Err(Error::DimensionMismatch {
            what: "whitened dimension",
            expected: model.k(),
            got: z.ncols(),
        });
    }
    Ok(z * model.v_inv.transpose())
}

/// Second-moment matrix `(1/T) Zᵀ Z` of row samples.
pub fn second_moment(z: &DMatrix<f64>) -> DMatrix<f64> {
    gram_of_columns(z) / z.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_rows(t: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // correlated columns: mix iid normals with a fixed lower-triangular matrix
        let raw = DMatrix::from_fn(t, p, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let mix = DMatrix::from_fn(p, p, |r, c| {
            if c <= r {
                1.0 / (1 + r - c) as f64
            } else {
                0.0
            }
        });
        raw * mix.transpose()
    }

    fn patches(x: DMatrix<f64>, side: usize) -> PatchSet {
        PatchSet::new(x, side, "test", false).unwrap()
    }

    #[test]
    fn diagonal_covariance() {
        // first two pixels ±2 and ±1 in all sign combinations, the rest zero:
        // E{xxᵀ} = diag(4, 1, 0, 0)
        let x = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 1.0, 0.0, 0.0, //
                2.0, -1.0, 0.0, 0.0, //
                -2.0, 1.0, 0.0, 0.0, //
                -2.0, -1.0, 0.0, 0.0,
            ],
        );
        let model = fit_whitening(&patches(x, 2), 2).unwrap();
        assert_eq!(model.eigenvalues(), &[4.0, 1.0]);
        let expected = DMatrix::from_row_slice(2, 4, &[0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(max_abs_diff(model.v(), &expected) < 1e-12);
    }

    #[test]
    fn white_input_gives_orthogonal_v() {
        // ±1 in every sign pattern of 4 coordinates: second moment = I
        let x = DMatrix::from_fn(16, 4, |r, c| if (r >> c) & 1 == 1 { 1.0 } else { -1.0 });
        let model = fit_whitening(&patches(x.clone(), 2), 4).unwrap();
        let vvt = model.v() * model.v().transpose();
        assert!(max_abs_diff(&vvt, &DMatrix::identity(4, 4)) < 1e-12);
        let z = whiten_rows(&model, &x).unwrap();
        assert!(max_abs_diff(&second_moment(&z), &DMatrix::identity(4, 4)) < 1e-12);
    }

    #[test]
    fn whitened_training_set_is_white() {
        let x = random_rows(3000, 9, 1);
        let model = fit_whitening(&patches(x.clone(), 3), 6).unwrap();
        let z = whiten_rows(&model, &x).unwrap();
        assert!(max_abs_diff(&second_moment(&z), &DMatrix::identity(6, 6)) < 1e-6);
        let vv = model.v() * model.v_inv();
        assert!(max_abs_diff(&vv, &DMatrix::identity(6, 6)) < 1e-8);
        assert!(model.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        assert!(model.eigenvalues().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn both_decomposition_routes_agree() {
        // 20 samples in 25 dims takes the Gram route; compare against the
        // covariance route computed on the same data directly
        let x = random_rows(20, 25, 3);
        let via_gram = fit_whitening(&patches(x.clone(), 5), 10).unwrap();
        let (vals, vecs) = sorted_eigen(x.transpose() * &x / 20.0);
        for i in 0..10 {
            assert!((vals[i] - via_gram.eigenvalues()[i]).abs() < 1e-9 * vals[0]);
            let expected = vecs.column(i) / vals[i].sqrt();
            let got = via_gram.v().row(i).transpose();
            assert!((expected - got).norm() < 1e-8);
        }
    }

    #[test]
    fn rank_deficiency_and_bad_k() {
        // second column always zero
        let x = DMatrix::from_fn(50, 4, |r, c| {
            if c == 1 {
                0.0
            } else {
                ((r * 7 + c) % 5) as f64
            }
        });
        assert!(matches!(
            fit_whitening(&patches(x.clone(), 2), 4),
            Err(Error::RankDeficient { .. })
        ));
        assert!(matches!(
            fit_whitening(&patches(x.clone(), 2), 0),
            Err(Error::BadK { .. })
        ));
        assert!(matches!(
            fit_whitening(&patches(x, 2), 5),
            Err(Error::BadK { .. })
        ));
    }

    #[test]
    fn mean_removed_patches_lose_one_dimension() {
        let x = random_rows(500, 16, 4);
        let set = PatchSet::from_rows_mean_removed(x, 4, "t").unwrap();
        assert!(matches!(
            fit_whitening(&set, 16),
            Err(Error::RankDeficient { index: 15, .. })
        ));
        assert!(fit_whitening(&set, 15).is_ok());
    }

    #[test]
    fn whiten_dewhiten_properties() {
        let x = random_rows(800, 9, 5);
        let model = fit_whitening(&patches(x, 3), 5).unwrap();

        let zero = whiten_rows(&model, &DMatrix::zeros(1, 9)).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(dewhiten(&model, &DMatrix::zeros(1, 5))
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));

        let e1 = DMatrix::from_fn(1, 5, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let x1 = dewhiten(&model, &e1).unwrap();
        let back = whiten_rows(&model, &x1).unwrap();
        assert!(max_abs_diff(&back, &e1) < 1e-8);

        // dewhiten(e_i) is the i-th principal direction scaled by √λ_i
        for i in 0..5 {
            let ei = DMatrix::from_fn(1, 5, |_, c| if c == i { 1.0 } else { 0.0 });
            let img = dewhiten(&model, &ei).unwrap();
            let direction = model.v().row(i) * model.eigenvalues()[i].sqrt();
            let scaled = direction * model.eigenvalues()[i].sqrt();
            assert!((img.row(0) - scaled).norm() < 1e-10);
        }

        let z = DMatrix::from_fn(4, 5, |r, c| (r as f64 - c as f64) * 0.3);
        let round = whiten_rows(&model, &dewhiten(&model, &z).unwrap()).unwrap();
        assert!(max_abs_diff(&round, &z) < 1e-8);

        assert!(whiten_rows(&model, &DMatrix::zeros(1, 8)).is_err());
        assert!(dewhiten(&model, &DMatrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn whiten_is_linear() {
        let x = random_rows(400, 9, 6);
        let model = fit_whitening(&patches(x.clone(), 3), 7).unwrap();
        let a = x.rows(0, 1).clone_owned();
        let b = x.rows(1, 1).clone_owned();
        let lhs = whiten_rows(&model, &(&a * 2.5 - &b * 0.75)).unwrap();
        let rhs = whiten_rows(&model, &a).unwrap() * 2.5 - whiten_rows(&model, &b).unwrap() * 0.75;
        assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn retained_subspace_reproduces_covariance() {
        let x = random_rows(2000, 9, 7);
        let model = fit_whitening(&patches(x.clone(), 3), 5).unwrap();
        let c = x.transpose() * &x / 2000.0;
        // E_k D_k E_kᵀ = V_inv V_invᵀ; projector P = V_inv V
        let approx = model.v_inv() * model.v_inv().transpose();
        let proj = model.v_inv() * model.v();
        let restricted = &proj * &c * proj.transpose();
        assert!((approx - restricted).norm() / c.norm() < 1e-8);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = fit_whitening(&patches(random_rows(300, 4, 8), 2), 3).unwrap();
        model.save(dir.path()).unwrap();
        let back = WhiteningModel::load(dir.path()).unwrap();
        assert_eq!(back, model);

        // tampering with a matrix breaks the recorded hash
        let mut v = model.v().clone();
        v[(0, 0)] += 1.0;
        write_matrix(&dir.path().join(V_FILE), &v).unwrap();
        assert!(matches!(
            WhiteningModel::load(dir.path()),
            Err(Error::ModelMismatch(_))
        ));
    }
}

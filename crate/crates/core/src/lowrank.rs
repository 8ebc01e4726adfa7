//! Rank-r Mercer decomposition of a kernel over a vertex set via Nyström.
//!
//! Spectral convention: the basis has orthonormal columns in `R^{3n}` and
//! the eigenvalues are those of the `3n × 3n` covariance matrix itself, so
//! `basis · diag(λ) · basisᵀ` approximates the Gram matrix and standard
//! normal coefficients yield samples with that covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cross_matrix, KernelSpec, VertexFeature};

/// Eigenvalues below `-PSD_TOLERANCE · λ_max` indicate an indefinite kernel.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Eigenvalues below `RANK_TOLERANCE · λ_max` are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NystromConfig {
    /// Number of inducing vertices `m`.
    pub inducing: usize,
    pub rank: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl NystromConfig {
    pub fn new(inducing: usize, rank: usize, seed: u64) -> Self {
        NystromConfig {
            inducing,
            rank,
            seed,
            jitter: 1e-10,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.rank == 0 || self.rank > 3 * self.inducing {
            return Err(Error::InvalidArgument(format!(
                "rank {} must be in 1..=3·inducing ({})",
                self.rank,
                3 * self.inducing
            )));
        }
        if self.inducing == 0 || self.inducing > n {
            return Err(Error::InvalidArgument(format!(
                "inducing count {} must be in 1..={n}",
                self.inducing
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidArgument("jitter must be finite and >= 0".into()));
        }
        Ok(())
    }
}

impl Default for NystromConfig {
    fn default() -> Self {
        NystromConfig::new(500, 200, 0)
    }
}

/// A Gaussian process over `n` vertices in decomposed form.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankGP {
    pub mean: DVector<f64>,
    /// `3n × r`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Nonincreasing, nonnegative.
    pub eigenvalues: DVector<f64>,
}

impl LowRankGP {
    /// Assemble from parts, checking the decomposition invariants.
    pub fn from_parts(mean: DVector<f64>, basis: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        if !mean.len().is_multiple_of(3) || basis.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: basis.nrows(),
            });
        }
        if basis.ncols() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.ncols(),
                got: eigenvalues.len(),
            });
        }
        if eigenvalues.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("eigenvalues must be finite and >= 0".into()));
        }
        if eigenvalues.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("eigenvalues must be nonincreasing".into()));
        }
        Ok(LowRankGP {
            mean,
            basis,
            eigenvalues,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Coefficients of `field` in the scaled basis; zero-variance components
    /// get coefficient zero.
    pub fn project(&self, field: &[f64]) -> Result<DVector<f64>> {
        if field.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: field.len(),
            });
        }
        let centered = DVector::from_column_slice(field) - &self.mean;
        let mut c = self.basis.tr_mul(&centered);
        for (ci, &l) in c.iter_mut().zip(self.eigenvalues.iter()) {
            *ci = if l > 0.0 { *ci / l.sqrt() } else { 0.0 };
        }
        Ok(c)
    }

    /// `mean + Σ cᵢ √λᵢ uᵢ`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<DVector<f64>> {
        if coeffs.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: coeffs.len(),
            });
        }
        let scaled = DVector::from_iterator(
            coeffs.len(),
            coeffs.iter().zip(self.eigenvalues.iter()).map(|(c, l)| c * l.sqrt()),
        );
        Ok(&self.mean + &self.basis * scaled)
    }

    /// Leading `r` components.
    pub fn truncated(&self, r: usize) -> LowRankGP {
        let r = r.min(self.rank());
        LowRankGP {
            mean: self.mean.clone(),
            basis: self.basis.columns(0, r).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, r).into_owned(),
        }
    }

    /// Diagonal of `basis · diag(λ) · basisᵀ`.
    pub fn variance(&self) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| {
            self.basis
                .row(i)
                .iter()
                .zip(self.eigenvalues.iter())
                .map(|(u, l)| u * u * l)
                .sum()
        })
    }

    /// Dense `basis · diag(λ) · basisᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let scaled = &self.basis * DMatrix::from_diagonal(&self.eigenvalues.map(f64::sqrt));
        &scaled * scaled.transpose()
    }
}

/// Approximate the leading eigenpairs of the kernel's Gram matrix over
/// `features` from a random subset of inducing vertices.
pub fn nystrom_decompose(
    spec: &KernelSpec,
    features: &[VertexFeature],
    mean: &[f64],
    cfg: &NystromConfig,
) -> Result<LowRankGP> {
    let n = features.len();
    cfg.validate(n)?;
    if mean.len() != 3 * n {
        return Err(Error::DimensionMismatch {
            expected: 3 * n,
            got: mean.len(),
        });
    }
    spec.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, cfg.inducing).into_vec();
    picked.sort_unstable();
    let inducing: Vec<VertexFeature> = picked.iter().map(|&i| features[i]).collect();

    let mut k_mm = cross_matrix(spec, &inducing, &inducing);
    let k_nm = cross_matrix(spec, features, &inducing);
    k_mm = (&k_mm + k_mm.transpose()) * 0.5;
    for i in 0..k_mm.nrows() {
        k_mm[(i, i)] += cfg.jitter;
    }

    let (mu, v) = sorted_eigen(k_mm);
    let mu_max = mu.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&lowest) = mu.last() {
        if lowest < -PSD_TOLERANCE * mu_max {
            return Err(Error::NotPsd {
                value: lowest,
                max: mu_max,
            });
        }
    }
    let keep = mu.iter().take_while(|&&m| m > RANK_TOLERANCE * mu_max && m > 0.0).count();
    if keep < cfg.rank {
        return Err(Error::RankDeficient {
            requested: cfg.rank,
            available: keep,
        });
    }

    // B = K_nm V μ^{-1/2}, so B Bᵀ = K_nm K_mm⁻¹ K_mn on the kept subspace.
    let mut vs = v.columns(0, keep).into_owned();
    for (j, m) in mu.iter().take(keep).enumerate() {
        vs.column_mut(j).scale_mut(1.0 / m.sqrt());
    }
    let b = &k_nm * vs;

    // Thin decomposition of B through its small Gram matrix.
    let btb = b.tr_mul(&b);
    let (s2, w) = sorted_eigen((&btb + btb.transpose()) * 0.5);
    let s2_max = s2.first().copied().unwrap_or(0.0).max(0.0);
    let significant = s2.iter().take_while(|&&s| s > RANK_TOLERANCE * s2_max && s > 0.0).count();
    if significant < cfg.rank {
        return Err(Error::RankDeficient {
            requested: cfg.rank,
            available: significant,
        });
    }
    let r = cfg.rank;
    let mut w_r = w.columns(0, r).into_owned();
    for j in 0..r {
        w_r.column_mut(j).scale_mut(1.0 / s2[j].sqrt());
    }
    let u = orthonormalize(&b * w_r);
    let eigenvalues = DVector::from_iterator(r, s2.iter().take(r).copied());
    LowRankGP::from_parts(DVector::from_column_slice(mean), u, eigenvalues)
}

/// Eigendecomposition sorted by decreasing eigenvalue with a deterministic
/// sign convention (largest-magnitude entry of each vector positive).
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(eig.eigenvectors.nrows(), order.len());
    for (j, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(j, &col);
    }
    (values, vectors)
}

/// Modified Gram–Schmidt, keeping column directions and signs.
pub(crate) fn orthonormalize(mut u: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..u.ncols() {
        for k in 0..j {
            let proj = u.column(k).dot(&u.column(j));
            let ck = u.column(k).into_owned();
            u.column_mut(j).axpy(-proj, &ck, 1.0);
        }
        let norm = u.column(j).norm();
        if norm > 0.0 {
            u.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{builtin_specs, gram_matrix, HyperParams, Metric};
    use crate::mesh::MirrorTransform;
    use crate::synthetic::icosphere;
    use crate::mesh::Vec3;

    fn sphere_features(subdiv: usize) -> (Vec<VertexFeature>, Vec<f64>) {
        let mesh = icosphere(subdiv, 80.0, Vec3::new(0.6, 0.4, 0.3));
        let f = crate::kernels::mesh_features(&mesh);
        (f, mesh.flat_positions())
    }

    fn toy_gp() -> LowRankGP {
        let (f, mean) = sphere_features(1);
        let spec = builtin_specs(&HyperParams::default(), MirrorTransform::default())["standard-full"]
            .shape
            .clone();
        nystrom_decompose(&spec, &f, &mean, &NystromConfig::new(f.len(), 12, 1)).unwrap()
    }

    #[test]
    fn basis_is_orthonormal_and_spectrum_sorted() {
        let gp = toy_gp();
        let gram = gp.basis.tr_mul(&gp.basis);
        assert!((gram - DMatrix::identity(12, 12)).amax() < 1e-6);
        assert!(gp.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_sample_reconstructs_gram() {
        let (f, mean) = sphere_features(1);
        let n = f.len();
        let specs = builtin_specs(&HyperParams::default(), MirrorTransform::default());
        let spec = &specs["symmetric-full"].shape;
        let gp = nystrom_decompose(spec, &f, &mean, &NystromConfig::new(n, 3 * n, 4)).unwrap();
        let dense = gram_matrix(spec, &f).unwrap();
        let err = (gp.covariance() - &dense).norm() / dense.norm();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn zero_kernel_is_rank_deficient() {
        let (f, mean) = sphere_features(0);
        let spec = KernelSpec::std3(0.0, 0.0, 0.0, 1.0, 1.0, 1.0);
        let err = nystrom_decompose(&spec, &f, &mean, &NystromConfig::new(f.len(), 3, 0)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn config_is_validated() {
        let (f, mean) = sphere_features(0);
        let spec = KernelSpec::rbf(Metric::Xyz, 10.0, 1.0);
        assert!(nystrom_decompose(&spec, &f, &mean, &NystromConfig::new(f.len() + 1, 3, 0)).is_err());
        assert!(nystrom_decompose(&spec, &f, &mean, &NystromConfig::new(2, 7, 0)).is_err());
        assert!(nystrom_decompose(&spec, &f, &mean, &NystromConfig::new(2, 0, 0)).is_err());
        assert!(nystrom_decompose(&spec, &f, &mean[1..], &NystromConfig::new(2, 1, 0)).is_err());
    }

    #[test]
    fn project_and_reconstruct() {
        let gp = toy_gp();
        let mean = gp.mean.as_slice().to_vec();
        assert!(gp.project(&mean).unwrap().amax() == 0.0);

        let field: Vec<f64> = (&gp.mean + gp.basis.column(0) * gp.eigenvalues[0].sqrt()).as_slice().to_vec();
        let c = gp.project(&field).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!(c.rows(1, c.len() - 1).amax() < 1e-9);

        assert_eq!(gp.reconstruct(&vec![0.0; gp.rank()]).unwrap(), gp.mean);

        let coeffs: Vec<f64> = (0..gp.rank()).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = gp.project(gp.reconstruct(&coeffs).unwrap().as_slice()).unwrap();
        for (a, b) in coeffs.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-9);
        }

        for i in [0, 5, 11] {
            let mut e = vec![0.0; gp.rank()];
            e[i] = 1.0;
            let dev = gp.reconstruct(&e).unwrap() - &gp.mean;
            assert!((dev.norm_squared() - gp.eigenvalues[i]).abs() < 1e-9 * gp.eigenvalues[i]);
        }
    }

    #[test]
    fn reconstruct_of_projection_is_orthogonal_projector() {
        let gp = toy_gp();
        let field: Vec<f64> = gp
            .mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + ((i * 7919) % 13) as f64 - 6.0)
            .collect();
        let rec = gp.reconstruct(gp.project(&field).unwrap().as_slice()).unwrap();
        // Oracle: mean + U Uᵀ (field − mean) with an explicit dense projector.
        let projector = &gp.basis * gp.basis.transpose();
        let expected = &gp.mean + projector * (DVector::from_column_slice(&field) - &gp.mean);
        assert!((rec - expected).amax() < 1e-9);
    }

    #[test]
    fn dimension_checks() {
        let gp = toy_gp();
        assert!(gp.project(&[0.0; 5]).is_err());
        assert!(gp.reconstruct(&[0.0; 5]).is_err());
    }

    #[test]
    fn truncation_and_determinism() {
        let (f, mean) = sphere_features(1);
        let spec = builtin_specs(&HyperParams::default(), MirrorTransform::default())["standard-full"]
            .albedo
            .clone();
        let cfg = NystromConfig::new(30, 20, 9);
        let a = nystrom_decompose(&spec, &f, &mean, &cfg).unwrap();
        let b = nystrom_decompose(&spec, &f, &mean, &cfg).unwrap();
        assert_eq!(a, b);
        let small = nystrom_decompose(&spec, &f, &mean, &NystromConfig { rank: 8, ..cfg }).unwrap();
        assert_eq!(small, a.truncated(8));
    }
}

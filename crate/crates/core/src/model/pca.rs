use nalgebra::{DMatrix, DVector};

use super::{MorphableModel, Provenance};
use crate::error::{Error, Result};
use crate::lowrank::{orthonormalize, sorted_eigen, LowRankGP, RANK_TOLERANCE};
use crate::mesh::{unflatten, TriMesh};

/// Principal components of `samples` about their mean, via the k×k Gram
/// matrix. Rank is at most `k - 1`.
fn pca(samples: &[Vec<f64>]) -> LowRankGP {
    let k = samples.len();
    let dim = samples[0].len();
    let mut mean = DVector::zeros(dim);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= k as f64;
    let x = DMatrix::from_fn(dim, k, |i, j| samples[j][i] - mean[i]);
    let denom = (k - 1) as f64;
    let gram = x.transpose() * &x / denom;
    let (values, vectors) = sorted_eigen(gram);
    let max = values.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..values.len().min(k - 1))
        .filter(|&i| max > 0.0 && values[i] > RANK_TOLERANCE * max)
        .collect();
    let mut basis = DMatrix::zeros(dim, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let col = &x * vectors.column(i) / (denom * values[i]).sqrt();
        basis.set_column(c, &col);
    }
    let basis = orthonormalize(basis);
    let eig = DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i]));
    LowRankGP::from_parts(mean, basis, eig).expect("PCA factors are consistent")
}

/// Empirical model of meshes in correspondence with each other.
pub fn pca_model(name: &str, meshes: &[TriMesh]) -> Result<MorphableModel> {
    if meshes.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    for m in meshes {
        m.validate()?;
        if !m.same_topology(&meshes[0]) {
            return Err(Error::TopologyMismatch("all meshes must share the first mesh's topology".into()));
        }
    }
    let shape = pca(&meshes.iter().map(TriMesh::flat_positions).collect::<Vec<_>>());
    let albedo = pca(&meshes.iter().map(TriMesh::flat_albedo).collect::<Vec<_>>());
    if shape.rank() == 0 && albedo.rank() == 0 {
        return Err(Error::RankDeficient {
            requested: meshes.len() - 1,
            available: 0,
        });
    }
    let reference = meshes[0].with_fields(unflatten(shape.mean.as_slice()), unflatten(albedo.mean.as_slice()));
    MorphableModel::new(
        name,
        reference,
        shape,
        albedo,
        Provenance {
            source: "pca".into(),
            training_meshes: Some(meshes.len()),
            ..Default::default()
        },
    )
}

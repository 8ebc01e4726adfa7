//! Monte-Carlo statistics of sampled deformation fields.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MorphableModel;
use crate::error::{Error, Result};
use crate::mesh::{MirrorTransform, TriMesh, Vec3};
use crate::spatial::NearestIndex;

/// Unordered pairs `(i, j)`, `i < j`, of vertices that are each other's
/// mirror image. Vertices on the mirror plane are left out. Fails when the
/// mesh is not mirror-symmetric to within `tolerance` mm.
pub fn mirror_pairs(mesh: &TriMesh, mirror: MirrorTransform, tolerance: f64) -> Result<Vec<(usize, usize)>> {
    let index = NearestIndex::new(&mesh.vertices);
    let mut pairs = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        let (j, d) = index.nearest_vertex(&mirror.apply(v))?;
        if d > tolerance {
            return Err(Error::InvalidMesh(format!("vertex {i} has no mirror partner within {tolerance} mm")));
        }
        if i < j {
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

/// Correlation between a sampled shape deformation at `x` and the mirrored
/// deformation at `x`'s mirror partner, pooled over pairs and samples.
///
/// Each axis is correlated separately and the result weights the mirror
/// axis by ½ and the two in-plane axes by ¼ each. A kernel without mirror
/// terms gives 0 in expectation (its left-right and in-plane correlations
/// cancel); the mirror-augmented kernels give roughly their weight α.
pub fn mirror_correlation(model: &MorphableModel, mirror: MirrorTransform, samples: usize, seed: u64) -> Result<f64> {
    let pairs = mirror_pairs(&model.reference, mirror, 1e-6)?;
    if pairs.is_empty() {
        return Err(Error::InvalidMesh("mesh has no mirrored vertex pairs".into()));
    }
    let m = mirror.matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cross, mut sa, mut sb) = ([0.0; 3], [0.0; 3], [0.0; 3]);
    for _ in 0..samples {
        let latents = model.sample_latents(&mut rng);
        let field = model.shape.reconstruct(&latents.shape)? - &model.shape.mean;
        let at = |i: usize| Vec3::new(field[3 * i], field[3 * i + 1], field[3 * i + 2]);
        for &(i, j) in &pairs {
            let a = at(i);
            let b = m * at(j);
            for k in 0..3 {
                cross[k] += a[k] * b[k];
                sa[k] += a[k] * a[k];
                sb[k] += b[k] * b[k];
            }
        }
    }
    let rho: Vec<f64> = (0..3).map(|k| cross[k] / (sa[k] * sb[k]).sqrt()).collect();
    let lr = mirror.axis.index();
    let others: f64 = (0..3).filter(|&k| k != lr).map(|k| rho[k]).sum();
    Ok(0.5 * rho[lr] + 0.25 * others)
}

/// Pooled correlation between two albedo channels of sampled deformations.
pub fn channel_correlation(model: &MorphableModel, a: usize, b: usize, samples: usize, seed: u64) -> Result<f64> {
    if a > 2 || b > 2 {
        return Err(Error::InvalidArgument("channel index out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cross, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let latents = model.sample_latents(&mut rng);
        let field = model.albedo.reconstruct(&latents.albedo)? - &model.albedo.mean;
        for v in field.as_slice().chunks_exact(3) {
            cross += v[a] * v[b];
            sa += v[a] * v[a];
            sb += v[b] * v[b];
        }
    }
    Ok(cross / (sa * sb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{builtin_pair, HyperParams};
    use crate::lowrank::NystromConfig;
    use crate::model::build_model;
    use crate::synthetic::SyntheticFace;

    fn model(kernel: &str) -> MorphableModel {
        let face = SyntheticFace::small().build();
        let pair = builtin_pair(kernel, &HyperParams::default(), MirrorTransform::default()).unwrap();
        build_model(
            kernel,
            &face,
            &pair.shape,
            &pair.albedo,
            &NystromConfig::new(300, 30, 3),
            &NystromConfig::new(300, 30, 4),
        )
        .unwrap()
    }

    #[test]
    fn synthetic_face_pairs_cover_off_plane_vertices() {
        let face = SyntheticFace::small().build();
        let pairs = mirror_pairs(&face, MirrorTransform::default(), 1e-6).unwrap();
        let on_plane = face.vertices.iter().filter(|v| v.x.abs() < 1e-9).count();
        assert_eq!(2 * pairs.len() + on_plane, face.num_vertices());
    }

    #[test]
    fn asymmetric_mesh_is_rejected() {
        let mut face = SyntheticFace::small().build();
        face.vertices[3].x += 1.0;
        assert!(mirror_pairs(&face, MirrorTransform::default(), 1e-6).is_err());
    }

    #[test]
    fn symmetric_kernel_correlates_mirror_pairs() {
        let alpha = HyperParams::default().alpha;
        let sym = mirror_correlation(&model("symmetric-full"), MirrorTransform::default(), 200, 1).unwrap();
        let std = mirror_correlation(&model("standard-full"), MirrorTransform::default(), 200, 1).unwrap();
        assert!(sym >= alpha / (1.0 + alpha) - 0.1, "{sym}");
        assert!(std.abs() <= 0.1, "{std}");
    }

    #[test]
    fn correlated_albedo_tracks_beta() {
        let beta = HyperParams::default().beta;
        let rho = channel_correlation(&model("correlated-XYZ"), 0, 1, 500, 2).unwrap();
        assert!((rho - beta).abs() <= 0.1, "{rho}");
        let plain = channel_correlation(&model("standard-XYZ"), 0, 1, 500, 2).unwrap();
        assert!(plain.abs() <= 0.1, "{plain}");
    }
}

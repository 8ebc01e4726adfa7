//! Matrix-valued covariance kernels over mesh vertices.
//!
//! Every radial basis function here is `exp(-d² / σ²)`, with no factor of 2
//! in the denominator, so `σ` is the distance at which correlation falls to
//! `1/e`. Composite kernels are built from positive-definite pieces with
//! operations that preserve positive-definiteness (sums, positive scaling
//! by PSD matrices, averaging, mirror augmentation with `α ≤ 1`).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MirrorTransform, TriMesh, Vec3};

/// Largest vertex count for which [`gram_matrix`] assembles a dense matrix.
pub const DEFAULT_GRAM_CAP: usize = 2000;

/// Kernel hyperparameters. Lengths are in millimetres, colors in `[0,1]` RGB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub a_s: f64,
    pub b_s: f64,
    pub c_s: f64,
    #[serde(rename = "A_s")]
    pub scale_a_s: f64,
    #[serde(rename = "B_s")]
    pub scale_b_s: f64,
    #[serde(rename = "C_s")]
    pub scale_c_s: f64,
    pub a_a: f64,
    pub b_a: f64,
    pub c_a: f64,
    #[serde(rename = "A_a")]
    pub scale_a_a: f64,
    #[serde(rename = "B_a")]
    pub scale_b_a: f64,
    #[serde(rename = "C_a")]
    pub scale_c_a: f64,
    pub d: f64,
    #[serde(rename = "D")]
    pub scale_d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// The bundled defaults, also shipped as `default_hyperparams.json`.
pub const DEFAULT_HYPERPARAMS_JSON: &str = include_str!("../default_hyperparams.json");

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            a_s: 7.0,
            b_s: 5.0,
            c_s: 3.0,
            scale_a_s: 100.0,
            scale_b_s: 50.0,
            scale_c_s: 10.0,
            a_a: 0.02,
            b_a: 0.01,
            c_a: 0.01,
            scale_a_a: 500.0,
            scale_b_a: 20.0,
            scale_c_a: 2.0,
            d: 0.015,
            scale_d: 0.15,
            alpha: 0.7,
            beta: 0.9375,
            gamma: 0.95,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_s", self.a_s),
            ("b_s", self.b_s),
            ("c_s", self.c_s),
            ("A_s", self.scale_a_s),
            ("B_s", self.scale_b_s),
            ("C_s", self.scale_c_s),
            ("a_a", self.a_a),
            ("b_a", self.b_a),
            ("c_a", self.c_a),
            ("A_a", self.scale_a_a),
            ("B_a", self.scale_b_a),
            ("C_a", self.scale_c_a),
            ("d", self.d),
            ("D", self.scale_d),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0,1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<HyperParams> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let h: HyperParams = serde_json::from_str(&text)?;
        h.validate()?;
        Ok(h)
    }
}

/// Which vertex attribute a radial basis function measures distance on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "xyz")]
    Xyz,
    #[serde(rename = "rgb")]
    Rgb,
}

/// A point the kernels are evaluated on: a vertex position and the
/// reference albedo at that vertex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VertexFeature {
    pub position: Vec3,
    pub albedo: Vec3,
}

impl VertexFeature {
    pub fn new(position: Vec3, albedo: Vec3) -> Self {
        VertexFeature { position, albedo }
    }
}

pub fn mesh_features(mesh: &TriMesh) -> Vec<VertexFeature> {
    mesh.vertices
        .iter()
        .zip(&mesh.albedo)
        .map(|(p, a)| VertexFeature::new(*p, *a))
        .collect()
}

/// Expression tree describing a matrix-valued kernel.
///
/// Scalar-valued nodes (`ScaledRbf`, and `Sum`/`Average` of scalar nodes)
/// evaluate to `k·I₃` when used as a matrix kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum KernelSpec {
    ScaledRbf {
        metric: Metric,
        scale: f64,
        amplitude: f64,
    },
    Sum {
        left: Box<KernelSpec>,
        right: Box<KernelSpec>,
    },
    MatrixScaled {
        matrix: [[f64; 3]; 3],
        inner: Box<KernelSpec>,
    },
    MirrorAugmented {
        base: Box<KernelSpec>,
        alpha: f64,
        mirror: MirrorTransform,
        negate_lr: bool,
    },
    Average {
        left: Box<KernelSpec>,
        right: Box<KernelSpec>,
    },
}

/// `exp(-‖f(x) - f(y)‖² / σ²)` with `f` selecting position or albedo.
pub fn rbf(x: &VertexFeature, y: &VertexFeature, metric: Metric, scale: f64) -> f64 {
    let d2 = match metric {
        Metric::Xyz => (x.position - y.position).norm_squared(),
        Metric::Rgb => (x.albedo - y.albedo).norm_squared(),
    };
    (-d2 / (scale * scale)).exp()
}

/// Three-scale sum of physical-distance RBFs: `a·k_A + b·k_B + c·k_C`.
#[allow(clippy::too_many_arguments)]
pub fn sigma_std(x: &VertexFeature, y: &VertexFeature, a: f64, b: f64, c: f64, sa: f64, sb: f64, sc: f64) -> f64 {
    a * rbf(x, y, Metric::Xyz, sa) + b * rbf(x, y, Metric::Xyz, sb) + c * rbf(x, y, Metric::Xyz, sc)
}

/// The equal-off-diagonal channel correlation matrix `M_x`.
pub fn correlation_matrix(x: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, x, x, x, 1.0, x, x, x, 1.0)
}

fn to_array(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    a
}

impl KernelSpec {
    pub fn rbf(metric: Metric, scale: f64, amplitude: f64) -> KernelSpec {
        KernelSpec::ScaledRbf {
            metric,
            scale,
            amplitude,
        }
    }

    pub fn sum(left: KernelSpec, right: KernelSpec) -> KernelSpec {
        KernelSpec::Sum {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn average(left: KernelSpec, right: KernelSpec) -> KernelSpec {
        KernelSpec::Average {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn scaled(matrix: Matrix3<f64>, inner: KernelSpec) -> KernelSpec {
        KernelSpec::MatrixScaled {
            matrix: to_array(&matrix),
            inner: Box::new(inner),
        }
    }

    pub fn mirrored(base: KernelSpec, alpha: f64, mirror: MirrorTransform, negate_lr: bool) -> KernelSpec {
        KernelSpec::MirrorAugmented {
            base: Box::new(base),
            alpha,
            mirror,
            negate_lr,
        }
    }

    /// Scalar family `a·k_A + b·k_B + c·k_C` on physical distance.
    pub fn std3(a: f64, b: f64, c: f64, sa: f64, sb: f64, sc: f64) -> KernelSpec {
        KernelSpec::sum(
            KernelSpec::sum(KernelSpec::rbf(Metric::Xyz, sa, a), KernelSpec::rbf(Metric::Xyz, sb, b)),
            KernelSpec::rbf(Metric::Xyz, sc, c),
        )
    }

    /// True if the node evaluates to a multiple of the identity.
    pub fn is_scalar(&self) -> bool {
        match self {
            KernelSpec::ScaledRbf { .. } => true,
            KernelSpec::Sum { left, right } | KernelSpec::Average { left, right } => {
                left.is_scalar() && right.is_scalar()
            }
            KernelSpec::MatrixScaled { .. } | KernelSpec::MirrorAugmented { .. } => false,
        }
    }

    /// Structural checks that guarantee positive semi-definiteness.
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::ScaledRbf { scale, amplitude, .. } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidArgument(format!("rbf scale must be positive, got {scale}")));
                }
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(Error::InvalidArgument(format!("rbf amplitude must be >= 0, got {amplitude}")));
                }
                Ok(())
            }
            KernelSpec::Sum { left, right } | KernelSpec::Average { left, right } => {
                left.validate()?;
                right.validate()
            }
            KernelSpec::MatrixScaled { matrix, inner } => {
                if !inner.is_scalar() {
                    return Err(Error::InvalidArgument("matrix scaling needs a scalar inner kernel".into()));
                }
                let m = Matrix3::from_fn(|i, j| matrix[i][j]);
                if (m - m.transpose()).amax() > 1e-12 {
                    return Err(Error::InvalidArgument("kernel matrix is not symmetric".into()));
                }
                let min_eig = m.symmetric_eigenvalues().min();
                if min_eig < -1e-12 {
                    return Err(Error::InvalidArgument(format!("kernel matrix is indefinite (eigenvalue {min_eig})")));
                }
                inner.validate()
            }
            KernelSpec::MirrorAugmented { base, alpha, .. } => {
                if !(*alpha >= 0.0 && *alpha <= 1.0) {
                    return Err(Error::InvalidArgument(format!("mirror weight must be in [0,1], got {alpha}")));
                }
                base.validate()
            }
        }
    }

    /// Evaluate the 3×3 covariance block between `x` and `y`.
    pub fn eval(&self, x: &VertexFeature, y: &VertexFeature) -> Matrix3<f64> {
        match self {
            KernelSpec::ScaledRbf {
                metric,
                scale,
                amplitude,
            } => Matrix3::from_diagonal_element(amplitude * rbf(x, y, *metric, *scale)),
            KernelSpec::Sum { left, right } => left.eval(x, y) + right.eval(x, y),
            KernelSpec::Average { left, right } => (left.eval(x, y) + right.eval(x, y)) * 0.5,
            KernelSpec::MatrixScaled { matrix, inner } => {
                let m = Matrix3::from_fn(|i, j| matrix[i][j]);
                m * inner.eval(x, y)
            }
            KernelSpec::MirrorAugmented {
                base,
                alpha,
                mirror,
                negate_lr,
            } => {
                // Only the position is reflected; y keeps its own albedo.
                let ym = VertexFeature::new(mirror.apply(&y.position), y.albedo);
                let direct = base.eval(x, y);
                let reflected = base.eval(x, &ym);
                if *negate_lr {
                    direct + mirror.matrix() * reflected * *alpha
                } else {
                    direct + reflected * *alpha
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<KernelSpec> {
        let spec: KernelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A shape/albedo kernel pairing defining one kind of morphable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub shape: KernelSpec,
    pub albedo: KernelSpec,
}

/// Names accepted by [`builtin_specs`], in table order.
pub const BUILTIN_NAMES: [&str; 9] = [
    "standard-full",
    "standard-RGB",
    "standard-XYZ",
    "symmetric-full",
    "symmetric-RGB",
    "symmetric-XYZ",
    "correlated-full",
    "correlated-RGB",
    "correlated-XYZ",
];

/// The nine named shape/albedo kernel pairings.
pub fn builtin_specs(h: &HyperParams, mirror: MirrorTransform) -> BTreeMap<String, KernelPair> {
    let identity = Matrix3::identity();
    let sigma0 = KernelSpec::std3(h.a_s, h.b_s, h.c_s, h.scale_a_s, h.scale_b_s, h.scale_c_s);
    let sigma_xyz = KernelSpec::std3(h.a_a, h.b_a, h.c_a, h.scale_a_a, h.scale_b_a, h.scale_c_a);
    let sigma_rgb = KernelSpec::rbf(Metric::Rgb, h.scale_d, h.d);

    let shape = KernelSpec::scaled(identity, sigma0);
    let shape_sym = KernelSpec::mirrored(shape.clone(), h.alpha, mirror, true);

    let albedo_xyz = KernelSpec::scaled(identity, sigma_xyz.clone());
    let albedo_rgb = KernelSpec::scaled(identity, sigma_rgb.clone());
    let albedo = KernelSpec::average(albedo_xyz.clone(), albedo_rgb.clone());

    let albedo_xyz_cor = KernelSpec::scaled(correlation_matrix(h.beta), sigma_xyz);
    let albedo_rgb_sym = KernelSpec::scaled(correlation_matrix(h.gamma), sigma_rgb);
    let albedo_xyz_sym = KernelSpec::mirrored(albedo_xyz_cor.clone(), h.alpha, mirror, false);
    let albedo_sym = KernelSpec::average(albedo_rgb_sym.clone(), albedo_xyz_sym.clone());
    let albedo_cor = KernelSpec::average(albedo_rgb_sym.clone(), albedo_xyz_cor.clone());

    let pairs = [
        ("standard-full", &shape, albedo),
        ("standard-RGB", &shape, albedo_rgb),
        ("standard-XYZ", &shape, albedo_xyz),
        ("symmetric-full", &shape_sym, albedo_sym),
        ("symmetric-RGB", &shape_sym, albedo_rgb_sym.clone()),
        ("symmetric-XYZ", &shape_sym, albedo_xyz_sym),
        ("correlated-full", &shape, albedo_cor),
        ("correlated-RGB", &shape, albedo_rgb_sym),
        ("correlated-XYZ", &shape, albedo_xyz_cor),
    ];
    pairs
        .into_iter()
        .map(|(name, s, a)| {
            (
                name.to_string(),
                KernelPair {
                    shape: s.clone(),
                    albedo: a,
                },
            )
        })
        .collect()
}

/// Look up a builtin pairing by name.
pub fn builtin_pair(name: &str, h: &HyperParams, mirror: MirrorTransform) -> Result<KernelPair> {
    builtin_specs(h, mirror).remove(name).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "unknown kernel {name:?}; valid names: {}",
            BUILTIN_NAMES.join(", ")
        ))
    })
}

/// Dense `3n × 3n` Gram matrix with block `(i, j) = K(fᵢ, fⱼ)`.
pub fn gram_matrix(spec: &KernelSpec, features: &[VertexFeature]) -> Result<DMatrix<f64>> {
    gram_matrix_capped(spec, features, DEFAULT_GRAM_CAP)
}

pub fn gram_matrix_capped(spec: &KernelSpec, features: &[VertexFeature], cap: usize) -> Result<DMatrix<f64>> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InvalidArgument("gram matrix of zero points".into()));
    }
    if n > cap {
        return Err(Error::GramCapExceeded { n, cap });
    }
    Ok(cross_matrix(spec, features, features))
}

/// `3|rows| × 3|cols|` block matrix of kernel evaluations.
pub fn cross_matrix(spec: &KernelSpec, rows: &[VertexFeature], cols: &[VertexFeature]) -> DMatrix<f64> {
    let (n, m) = (rows.len(), cols.len());
    // Column-major storage: build per block-column in parallel.
    let columns: Vec<Vec<f64>> = cols
        .par_iter()
        .map(|y| {
            let mut col = vec![0.0; 9 * n];
            for (i, x) in rows.iter().enumerate() {
                let k = spec.eval(x, y);
                for c in 0..3 {
                    for r in 0..3 {
                        col[c * 3 * n + 3 * i + r] = k[(r, c)];
                    }
                }
            }
            col
        })
        .collect();
    let mut data = Vec::with_capacity(9 * n * m);
    for col in columns {
        data.extend_from_slice(&col);
    }
    DMatrix::from_vec(3 * n, 3 * m, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Axis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(p: [f64; 3], a: [f64; 3]) -> VertexFeature {
        VertexFeature::new(Vec3::from(p), Vec3::from(a))
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Vec<VertexFeature> {
        (0..n)
            .map(|_| {
                feat(
                    [rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)],
                    [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                )
            })
            .collect()
    }

    #[test]
    fn rbf_values() {
        let x = feat([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]);
        assert_eq!(rbf(&x, &x, Metric::Xyz, 5.0), 1.0);
        assert_eq!(rbf(&x, &x, Metric::Rgb, 0.1), 1.0);
        let y = feat([1.0, 2.0, 3.0 + 7.0], [0.0; 3]);
        assert!((rbf(&x, &y, Metric::Xyz, 7.0) - 0.367_879_441_171_442_3).abs() < 1e-15);
        let black = feat([0.0; 3], [0.0; 3]);
        let white = feat([0.0; 3], [1.0; 3]);
        assert!(rbf(&black, &white, Metric::Rgb, 0.15) < 1e-50);
    }

    #[test]
    fn sigma_std_values() {
        let h = HyperParams::default();
        let x = feat([3.0, -2.0, 1.0], [0.5; 3]);
        let s = |x: &VertexFeature, y: &VertexFeature| {
            sigma_std(x, y, h.a_s, h.b_s, h.c_s, h.scale_a_s, h.scale_b_s, h.scale_c_s)
        };
        assert_eq!(s(&x, &x), 15.0);
        let y = feat([3.0 + 100.0, -2.0, 1.0], [0.5; 3]);
        let expected = 7.0 * (-1.0f64).exp() + 5.0 * (-4.0f64).exp() + 3.0 * (-100.0f64).exp();
        assert!((s(&x, &y) - expected).abs() < 1e-14);
        let far = feat([1e6, 0.0, 0.0], [0.5; 3]);
        assert_eq!(s(&x, &far), 0.0);
    }

    #[test]
    fn builtin_values() {
        let h = HyperParams::default();
        let mirror = MirrorTransform::new(Axis::X);
        let specs = builtin_specs(&h, mirror);
        assert_eq!(specs.len(), 9);
        for name in BUILTIN_NAMES {
            specs[name].shape.validate().unwrap();
            specs[name].albedo.validate().unwrap();
        }
        let x = feat([10.0, 20.0, 30.0], [0.3, 0.2, 0.1]);
        assert_eq!(specs["standard-full"].shape.eval(&x, &x), Matrix3::identity() * 15.0);

        let m = correlation_matrix(h.beta);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[(i, j)], if i == j { 1.0 } else { 0.9375 });
            }
        }

        // On the mirror plane Φx = x, so the reflected term is α·Φ·15.
        let on_plane = feat([0.0, 20.0, 30.0], [0.3, 0.2, 0.1]);
        let expected = (Matrix3::identity() + mirror.matrix() * h.alpha) * 15.0;
        let got = specs["symmetric-full"].shape.eval(&on_plane, &on_plane);
        assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn builtin_table_structure() {
        let h = HyperParams::default();
        let mirror = MirrorTransform::default();
        let specs = builtin_specs(&h, mirror);
        let identity = Matrix3::identity();
        let sigma0 = KernelSpec::std3(h.a_s, h.b_s, h.c_s, h.scale_a_s, h.scale_b_s, h.scale_c_s);
        let ks = KernelSpec::scaled(identity, sigma0);
        let sigma_xyz = KernelSpec::std3(h.a_a, h.b_a, h.c_a, h.scale_a_a, h.scale_b_a, h.scale_c_a);
        let sigma_rgb = KernelSpec::rbf(Metric::Rgb, h.scale_d, h.d);
        let ka = KernelSpec::average(
            KernelSpec::scaled(identity, sigma_xyz.clone()),
            KernelSpec::scaled(identity, sigma_rgb.clone()),
        );
        assert_eq!(specs["standard-full"], KernelPair { shape: ks.clone(), albedo: ka });
        let cor_xyz = KernelSpec::scaled(correlation_matrix(h.beta), sigma_xyz);
        assert_eq!(
            specs["symmetric-XYZ"],
            KernelPair {
                shape: KernelSpec::mirrored(ks.clone(), h.alpha, mirror, true),
                albedo: KernelSpec::mirrored(cor_xyz, h.alpha, mirror, false),
            }
        );
        assert_eq!(
            specs["correlated-RGB"],
            KernelPair {
                shape: ks,
                albedo: KernelSpec::scaled(correlation_matrix(h.gamma), sigma_rgb),
            }
        );
    }

    #[test]
    fn unknown_builtin_lists_names() {
        let err = builtin_pair("nope", &HyperParams::default(), MirrorTransform::default()).unwrap_err();
        assert!(err.to_string().contains("symmetric-full"));
    }

    fn has_mirror(spec: &KernelSpec) -> bool {
        match spec {
            KernelSpec::ScaledRbf { .. } => false,
            KernelSpec::MirrorAugmented { .. } => true,
            KernelSpec::MatrixScaled { inner, .. } => has_mirror(inner),
            KernelSpec::Sum { left, right } | KernelSpec::Average { left, right } => has_mirror(left) || has_mirror(right),
        }
    }

    #[test]
    fn kernels_are_symmetric_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = builtin_specs(&HyperParams::default(), MirrorTransform::default());
        let shift = Vec3::new(13.0, -40.0, 7.5);
        for _ in 0..50 {
            let f = random_features(&mut rng, 2);
            for pair in specs.values() {
                for spec in [&pair.shape, &pair.albedo] {
                    let kxy = spec.eval(&f[0], &f[1]);
                    let kyx = spec.eval(&f[1], &f[0]);
                    assert!((kxy - kyx.transpose()).amax() <= 1e-12 * (1.0 + kxy.amax()));
                }
                // Stationarity holds for kernels without mirror augmentation.
                for spec in [&pair.shape, &pair.albedo] {
                    if has_mirror(spec) {
                        continue;
                    }
                    let moved: Vec<_> = f.iter().map(|v| VertexFeature::new(v.position + shift, v.albedo)).collect();
                    let a = spec.eval(&f[0], &f[1]);
                    let b = spec.eval(&moved[0], &moved[1]);
                    assert!((a - b).amax() <= 1e-12 * (1.0 + a.amax()));
                }
            }
        }
    }

    #[test]
    fn gram_single_point_and_linearity() {
        let h = HyperParams::default();
        let specs = builtin_specs(&h, MirrorTransform::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_features(&mut rng, 1);
        let g = gram_matrix(&specs["symmetric-full"].albedo, &f).unwrap();
        assert_eq!(g.shape(), (3, 3));
        let k = specs["symmetric-full"].albedo.eval(&f[0], &f[0]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[(i, j)], k[(i, j)]);
            }
        }

        let f = random_features(&mut rng, 12);
        let full = gram_matrix(&specs["standard-full"].albedo, &f).unwrap();
        let xyz = gram_matrix(&specs["standard-XYZ"].albedo, &f).unwrap();
        let rgb = gram_matrix(&specs["standard-RGB"].albedo, &f).unwrap();
        assert!((full - (xyz + rgb) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn gram_cap_is_enforced() {
        let spec = KernelSpec::rbf(Metric::Xyz, 1.0, 1.0);
        let f = vec![feat([0.0; 3], [0.0; 3]); 5];
        assert!(matches!(gram_matrix_capped(&spec, &f, 4), Err(Error::GramCapExceeded { n: 5, cap: 4 })));
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let inner = KernelSpec::rbf(Metric::Xyz, 1.0, 1.0);
        assert!(KernelSpec::rbf(Metric::Xyz, 0.0, 1.0).validate().is_err());
        assert!(KernelSpec::scaled(correlation_matrix(-0.9), inner.clone()).validate().is_err());
        let nested = KernelSpec::scaled(Matrix3::identity(), KernelSpec::scaled(Matrix3::identity(), inner.clone()));
        assert!(nested.validate().is_err());
        assert!(KernelSpec::mirrored(inner, 1.5, MirrorTransform::default(), true).validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let specs = builtin_specs(&HyperParams::default(), MirrorTransform::default());
        for pair in specs.values() {
            let text = pair.albedo.to_json().unwrap();
            assert_eq!(KernelSpec::from_json(&text).unwrap(), pair.albedo);
        }
        let h: HyperParams = serde_json::from_str(DEFAULT_HYPERPARAMS_JSON).unwrap();
        assert_eq!(h, HyperParams::default());
        let v: serde_json::Value = serde_json::to_value(&h).unwrap();
        assert_eq!(v["A_s"], 100.0);
        assert_eq!(v["D"], 0.15);
    }
}
